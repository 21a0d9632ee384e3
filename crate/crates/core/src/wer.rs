//! Word error rate: word-level Levenshtein distance over reference length.

use crate::error::{Error, Result};

/// Edit distance between token sequences (insertions, deletions,
/// substitutions all cost 1), O(min(m,n)) memory.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, lv) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sv) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lv != sv);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// WER of a hypothesis against a non-empty reference, both given as word
/// sequences.
pub fn wer(hyp: &[&str], reference: &[&str]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// WER over whitespace-tokenized strings.
pub fn wer_str(hyp: &str, reference: &str) -> Result<f64> {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    wer(&h, &r)
}
