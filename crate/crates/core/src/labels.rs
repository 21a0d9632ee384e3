//! Frame-level label sequences and the text label-file format.
//!
//! Label files are diffable text: a header declaring the frameshift (and
//! optionally the class count), then one `utt_id id id id ...` line per
//! utterance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PHONEME_NUM_CLASSES: usize = 40;

/// Per-frame integer labels aligned to a frameshift.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub ids: Vec<u32>,
    pub frameshift_ms: u32,
    pub num_classes: usize,
}

impl LabelSequence {
    pub fn new(ids: Vec<u32>, frameshift_ms: u32, num_classes: usize) -> Result<Self> {
        for &id in &ids {
            if id as usize >= num_classes {
                return Err(Error::PhonemeIdOutOfRange {
                    id: id as i64,
                    num_classes,
                });
            }
        }
        Ok(LabelSequence {
            ids,
            frameshift_ms,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Coarsens labels by stride decimation: the target label is the label of
/// the first source frame in each window. Output length is ceil(T/factor).
pub fn resample_labels(l: &LabelSequence, factor: usize) -> LabelSequence {
    assert!(factor >= 1);
    LabelSequence {
        ids: l.ids.iter().step_by(factor).copied().collect(),
        frameshift_ms: l.frameshift_ms * factor as u32,
        num_classes: l.num_classes,
    }
}

/// A label file: shared frameshift/class count plus per-utterance sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub frameshift_ms: u32,
    pub num_classes: usize,
    pub utterances: BTreeMap<String, Vec<u32>>,
}

impl LabelFile {
    pub fn sequence(&self, utt_id: &str) -> Option<LabelSequence> {
        self.utterances.get(utt_id).map(|ids| LabelSequence {
            ids: ids.clone(),
            frameshift_ms: self.frameshift_ms,
            num_classes: self.num_classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("frameshift_ms {}\n", self.frameshift_ms));
        out.push_str(&format!("num_classes {}\n", self.num_classes));
        for (utt, ids) in &self.utterances {
            out.push_str(utt);
            for id in ids {
                out.push(' ');
                out.push_str(&id.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Parses a label file. When the header omits `num_classes`, the caller's
/// `default_classes` applies and ids are validated against it.
pub fn load_label_file(path: &Path, default_classes: usize) -> Result<LabelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |msg: String| Error::Format(format!("{}: {}", path.display(), msg));
    let mut frameshift_ms: Option<u32> = None;
    let mut num_classes: Option<usize> = None;
    let mut utterances = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap();
        match head {
            "frameshift_ms" => {
                let v = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| fail(format!("line {}: bad frameshift_ms", lineno + 1)))?;
                frameshift_ms = Some(v);
            }
            "num_classes" => {
                let v = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| fail(format!("line {}: bad num_classes", lineno + 1)))?;
                num_classes = Some(v);
            }
            utt_id => {
                let classes = num_classes.unwrap_or(default_classes);
                let mut ids = Vec::new();
                for tok in parts {
                    let raw: i64 = tok
                        .parse()
                        .map_err(|_| fail(format!("line {}: bad label id {tok:?}", lineno + 1)))?;
                    if raw < 0 || raw as usize >= classes {
                        return Err(Error::PhonemeIdOutOfRange {
                            id: raw,
                            num_classes: classes,
                        });
                    }
                    ids.push(raw as u32);
                }
                utterances.insert(utt_id.to_string(), ids);
            }
        }
    }
    Ok(LabelFile {
        frameshift_ms: frameshift_ms
            .ok_or_else(|| fail("missing frameshift_ms header".to_string()))?,
        num_classes: num_classes.unwrap_or(default_classes),
        utterances,
    })
}

/// Ingests externally produced frame-level phoneme labels (40 categories).
pub fn load_phoneme_labels(path: &Path) -> Result<LabelFile> {
    let file = load_label_file(path, PHONEME_NUM_CLASSES)?;
    if file.num_classes != PHONEME_NUM_CLASSES {
        return Err(Error::Format(format!(
            "{}: phoneme label files must declare {} classes, found {}",
            path.display(),
            PHONEME_NUM_CLASSES,
            file.num_classes
        )));
    }
    Ok(file)
}
