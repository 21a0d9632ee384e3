//! Audio manifests and transcript files.
//!
//! Manifests are TAB-separated: `utt_id<TAB>audio_path<TAB>duration_s`.
//! Transcripts pair ids with text: `utt_id<TAB>text`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses and validates: unique ids, parseable durations, and every
    /// referenced audio file present on disk. Relative paths resolve against
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (utt_id, rel, dur) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::Manifest(format!(
                        "{}:{}: expected utt_id<TAB>path<TAB>duration_s",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            if !seen.insert(utt_id.to_string()) {
                return Err(Error::Manifest(format!(
                    "{}: duplicate utt_id {utt_id:?}",
                    path.display()
                )));
            }
            let duration_s: f64 = dur.parse().map_err(|_| {
                Error::Manifest(format!(
                    "{}:{}: bad duration {dur:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let audio = if Path::new(rel).is_absolute() {
                PathBuf::from(rel)
            } else {
                base.join(rel)
            };
            if !audio.exists() {
                return Err(Error::Manifest(format!(
                    "{}: referenced file missing: {}",
                    path.display(),
                    audio.display()
                )));
            }
            entries.push(ManifestEntry {
                utt_id: utt_id.to_string(),
                path: audio,
                duration_s,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = String::new();
        for e in &self.entries {
            let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
            out.push_str(&format!(
                "{}\t{}\t{:.6}\n",
                e.utt_id,
                rel.display(),
                e.duration_s
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads `utt_id<TAB>text` lines.
pub fn load_transcripts(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (utt_id, t) = line.split_once('\t').ok_or_else(|| {
            Error::Manifest(format!(
                "{}:{}: expected utt_id<TAB>text",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(utt_id.to_string(), t.to_string());
    }
    Ok(out)
}

pub fn save_transcripts(path: &Path, transcripts: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (utt, text) in transcripts {
        out.push_str(&format!("{utt}\t{text}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.tsv");
        fs::write(&m, "u1\tnope.wav\t1.0\n").unwrap();
        let err = Manifest::load(&m).unwrap_err();
        assert!(matches!(err, Error::Manifest(_)));
        assert_eq!(err.class(), crate::ErrorClass::Validation);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        fs::write(&wav, b"x").unwrap();
        let m = dir.path().join("manifest.tsv");
        fs::write(&m, "u1\ta.wav\t1.0\nu1\ta.wav\t1.0\n").unwrap();
        assert!(Manifest::load(&m).is_err());
    }

    #[test]
    fn round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        fs::write(&wav, b"x").unwrap();
        let manifest = Manifest {
            entries: vec![ManifestEntry {
                utt_id: "u1".into(),
                path: wav,
                duration_s: 1.25,
            }],
        };
        let p = dir.path().join("manifest.tsv");
        manifest.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back.entries[0].utt_id, "u1");
        assert!((back.entries[0].duration_s - 1.25).abs() < 1e-9);
    }

    #[test]
    fn transcripts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trans.tsv");
        let mut t = BTreeMap::new();
        t.insert("u1".to_string(), "able brush".to_string());
        save_transcripts(&p, &t).unwrap();
        assert_eq!(load_transcripts(&p).unwrap(), t);
    }
}
