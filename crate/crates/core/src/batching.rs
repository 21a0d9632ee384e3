//! Batch assembly by total-audio-seconds budget.
//!
//! Utterances are sorted by duration and packed greedily so every batch fits
//! the seconds budget (a lone over-budget utterance still gets a batch).

/// Returns batches of indices into `durations`.
pub fn seconds_budget_batches(durations: &[f64], budget_s: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| {
        durations[a]
            .partial_cmp(&durations[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut cur_s = 0.0;
    for i in order {
        if !cur.is_empty() && cur_s + durations[i] > budget_s {
            batches.push(std::mem::take(&mut cur));
            cur_s = 0.0;
        }
        cur_s += durations[i];
        cur.push(i);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_respect_budget() {
        let durations = [1.2, 0.8, 2.5, 0.4, 1.9, 1.1, 0.6];
        let batches = seconds_budget_batches(&durations, 3.0);
        let mut seen = vec![false; durations.len()];
        for b in &batches {
            let total: f64 = b.iter().map(|&i| durations[i]).sum();
            assert!(total <= 3.0 + 1e-9 || b.len() == 1, "batch {b:?} = {total}");
            for &i in b {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn oversized_utterance_still_gets_a_batch() {
        let batches = seconds_budget_batches(&[10.0, 0.5], 2.0);
        assert_eq!(batches.len(), 2);
    }

    #[test]
    fn packing_is_deterministic() {
        let durations = [1.0, 2.0, 1.0, 0.5, 0.5];
        assert_eq!(
            seconds_budget_batches(&durations, 2.0),
            seconds_budget_batches(&durations, 2.0)
        );
    }
}
