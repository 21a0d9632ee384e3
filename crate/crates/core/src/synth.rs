//! Deterministic synthetic speech corpus.
//!
//! Each vocabulary word maps to a distinct tone class, so every frame has a
//! known ground-truth class: labeling quality (cluster purity) is checkable
//! and transcripts are exact. Word composition is drawn from a shuffled
//! balanced deck to keep per-utterance class mixes comparable under
//! per-utterance CMVN.

use std::path::{Path, PathBuf};

use crate::audio::{write_wav, Waveform, PIPELINE_SAMPLE_RATE};
use crate::dsp;
use crate::error::{Error, Result};
use crate::labels::LabelFile;
use crate::manifest::{Manifest, ManifestEntry};
use crate::rng::Rng;

pub const SYNTH_WORDS: [&str; 8] = [
    "able", "brush", "candle", "drape", "elbow", "fipple", "grove", "hazel",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_utts: usize,
    pub seed: u64,
    /// Number of distinct words/tone classes (≤ SYNTH_WORDS.len()).
    pub vocab_size: usize,
    /// Words per utterance, inclusive bounds.
    pub words_per_utt: (usize, usize),
    pub word_duration_s: f64,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utts: 50,
            seed: 7,
            vocab_size: 5,
            words_per_utt: (3, 7),
            word_duration_s: 0.24,
            noise_level: 0.004,
        }
    }
}

/// The tone assigned to a word class: fundamental plus one harmonic.
fn tone_sample(class: usize, t: usize, noise: f64) -> f64 {
    let f0 = 320.0 * 1.45f64.powi(class as i32);
    let phase = 2.0 * std::f64::consts::PI * f0 * t as f64 / PIPELINE_SAMPLE_RATE as f64;
    let mut v = 0.32 * phase.sin();
    if 2.0 * f0 < PIPELINE_SAMPLE_RATE as f64 / 2.0 {
        v += 0.12 * (2.0 * phase).sin();
    }
    v + noise
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub wave: Waveform,
    pub text: String,
    /// Tone-class labels at the 10 ms analysis rate.
    pub frame_labels: Vec<u32>,
}

/// In-memory corpus generation; `write_corpus` persists it.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    if cfg.n_utts == 0 {
        return Err(Error::InvalidConfig("n_utts must be at least 1".into()));
    }
    if cfg.vocab_size == 0 || cfg.vocab_size > SYNTH_WORDS.len() {
        return Err(Error::InvalidConfig(format!(
            "vocab_size must be in 1..={}",
            SYNTH_WORDS.len()
        )));
    }
    let (lo, hi) = cfg.words_per_utt;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidConfig("bad words_per_utt range".into()));
    }
    let mut rng = Rng::seed_from(cfg.seed);
    let word_samples = (cfg.word_duration_s * PIPELINE_SAMPLE_RATE as f64).round() as usize;
    let dsp_cfg = dsp::DspConfig::default();
    let (win, hop) = (dsp_cfg.window_samples(), dsp_cfg.hop_samples());

    // Balanced word deck: reshuffled copies of the vocabulary.
    let mut deck: Vec<usize> = Vec::new();
    let mut draw = |rng: &mut Rng| -> usize {
        if deck.is_empty() {
            deck = (0..cfg.vocab_size).collect();
            rng.shuffle(&mut deck);
        }
        deck.pop().unwrap()
    };

    let mut utts = Vec::with_capacity(cfg.n_utts);
    for i in 0..cfg.n_utts {
        let n_words = lo + rng.below(hi - lo + 1);
        let classes: Vec<usize> = (0..n_words).map(|_| draw(&mut rng)).collect();
        let mut samples = Vec::with_capacity(n_words * word_samples);
        let mut class_at = Vec::with_capacity(n_words * word_samples);
        for &class in &classes {
            for t in 0..word_samples {
                let noise = cfg.noise_level * rng.uniform(-1.0, 1.0);
                samples.push(tone_sample(class, t, noise));
                class_at.push(class as u32);
            }
        }
        // Frame labels follow the analysis framing: the class at each
        // window's center sample.
        let t_frames = dsp::frame_count(samples.len(), win, hop).unwrap_or(0);
        let frame_labels: Vec<u32> = (0..t_frames)
            .map(|t| class_at[(t * hop + win / 2).min(class_at.len() - 1)])
            .collect();
        let text = classes
            .iter()
            .map(|&c| SYNTH_WORDS[c])
            .collect::<Vec<_>>()
            .join(" ");
        utts.push(SynthUtterance {
            utt_id: format!("synth_{i:04}"),
            wave: Waveform::new(samples, PIPELINE_SAMPLE_RATE),
            text,
            frame_labels,
        });
    }
    Ok(utts)
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub manifest: PathBuf,
    pub transcripts: PathBuf,
    pub tone_labels: PathBuf,
    pub wav_dir: PathBuf,
}

/// Writes WAVs, the audio manifest, transcripts, and ground-truth tone-class
/// labels (in the frame-label file format, 40-class id space).
pub fn write_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<CorpusPaths> {
    let utts = generate(cfg)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(wav_dir.display().to_string(), e))?;
    let mut entries = Vec::new();
    let mut transcripts = String::new();
    let mut label_file = LabelFile {
        frameshift_ms: 10,
        num_classes: crate::labels::PHONEME_NUM_CLASSES,
        utterances: Default::default(),
    };
    for utt in &utts {
        let wav_path = wav_dir.join(format!("{}.wav", utt.utt_id));
        write_wav(&wav_path, &utt.wave)?;
        entries.push(ManifestEntry {
            utt_id: utt.utt_id.clone(),
            path: wav_path,
            duration_s: utt.wave.duration_s(),
        });
        transcripts.push_str(&format!("{}\t{}\n", utt.utt_id, utt.text));
        label_file
            .utterances
            .insert(utt.utt_id.clone(), utt.frame_labels.clone());
    }
    let manifest = Manifest { entries };
    let paths = CorpusPaths {
        manifest: out_dir.join("manifest.tsv"),
        transcripts: out_dir.join("transcripts.tsv"),
        tone_labels: out_dir.join("tone_labels.txt"),
        wav_dir,
    };
    manifest.save(&paths.manifest)?;
    std::fs::write(&paths.transcripts, transcripts)
        .map_err(|e| Error::io(paths.transcripts.display().to_string(), e))?;
    label_file.save(&paths.tone_labels)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_utts: 4,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.utt_id, y.utt_id);
            assert_eq!(x.text, y.text);
            assert_eq!(x.wave.samples, y.wave.samples);
            assert_eq!(x.frame_labels, y.frame_labels);
        }
    }

    #[test]
    fn corpus_writes_are_byte_identical_across_runs() {
        let cfg = SynthConfig {
            n_utts: 3,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = write_corpus(&cfg, d1.path()).unwrap();
        let p2 = write_corpus(&cfg, d2.path()).unwrap();
        let wav1 = std::fs::read(p1.wav_dir.join("synth_0000.wav")).unwrap();
        let wav2 = std::fs::read(p2.wav_dir.join("synth_0000.wav")).unwrap();
        assert_eq!(wav1, wav2);
        assert_eq!(
            std::fs::read(&p1.transcripts).unwrap(),
            std::fs::read(&p2.transcripts).unwrap()
        );
        assert_eq!(
            std::fs::read(&p1.tone_labels).unwrap(),
            std::fs::read(&p2.tone_labels).unwrap()
        );
    }

    #[test]
    fn frame_labels_align_with_analysis_framing() {
        let cfg = SynthConfig {
            n_utts: 2,
            ..Default::default()
        };
        let utts = generate(&cfg).unwrap();
        let dsp_cfg = dsp::DspConfig::default();
        for utt in &utts {
            let f = dsp::fbank(&utt.wave, &dsp_cfg).unwrap();
            assert_eq!(f.num_frames(), utt.frame_labels.len(), "{}", utt.utt_id);
        }
    }

    #[test]
    fn transcripts_use_configured_vocabulary() {
        let cfg = SynthConfig {
            n_utts: 10,
            vocab_size: 3,
            ..Default::default()
        };
        for utt in generate(&cfg).unwrap() {
            for w in utt.text.split_whitespace() {
                assert!(SYNTH_WORDS[..3].contains(&w), "{w}");
            }
        }
    }
}
