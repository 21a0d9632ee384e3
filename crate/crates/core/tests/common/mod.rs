//! Shared fixtures: synthetic corpus generation, feature extraction, and
//! config scaffolding for integration tests.

use std::path::{Path, PathBuf};

use speechlab_core::features::FeatureKind;
use speechlab_core::harness;
use speechlab_core::synth::{CorpusPaths, SynthConfig};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: CorpusPaths,
    pub fbank_dir: PathBuf,
    pub mfcc_dir: PathBuf,
}

/// Synth corpus + offline fbank/MFCC extraction (CMVN applied).
pub fn corpus_with_features(synth: &SynthConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = harness::cmd_synth(synth, dir.path()).unwrap();
    let fbank_dir = dir.path().join("fbank");
    let mfcc_dir = dir.path().join("mfcc");
    harness::cmd_extract(&corpus.manifest, FeatureKind::Fbank, &fbank_dir, true).unwrap();
    harness::cmd_extract(&corpus.manifest, FeatureKind::Mfcc, &mfcc_dir, true).unwrap();
    Fixture {
        dir,
        corpus,
        fbank_dir,
        mfcc_dir,
    }
}

/// Fits a small codebook on the extracted MFCC features and writes labels.
pub fn kmeans_labels(fx: &Fixture, clusters: usize, seed: u64) -> PathBuf {
    let codebook = fx.dir.path().join("codebook.bin");
    let labels = fx.dir.path().join("kmeans_labels.txt");
    harness::cmd_kmeans(
        &fx.corpus.manifest,
        &fx.mfcc_dir,
        clusters,
        25,
        seed,
        &codebook,
        &labels,
    )
    .unwrap();
    labels
}

/// A small training config; `labels_file` must be absolute or relative to
/// the directory the config is written into.
#[allow(clippy::too_many_arguments)]
pub fn config_toml(
    frontend: &str,
    frameshift: u32,
    placement: &str,
    loss: &str,
    num_classes: usize,
    labels_file: &Path,
    extra: &str,
) -> String {
    format!(
        r#"
seed = 11

[frontend]
kind = "{frontend}"
frameshift_ms = {frameshift}
waveform_channels = 8

[masking]
placement = "{placement}"

[encoder]
num_layers = 2
model_dim = 32
num_heads = 2
ffn_dim = 64

[loss]
kind = "{loss}"
num_classes = {num_classes}
embed_dim = 48

[labels]
source = "kmeans"
file = "{labels}"

[tokenizer]
kind = "char"

[schedule.pretrain]
peak = 1e-3
warmup_steps = 20
decay_steps = 1980

[schedule.finetune]
peak = 2e-3
warmup_steps = 20
hold_steps = 200
decay_steps = 500
final_fraction = 0.05

[trainer]
batch_seconds = 3.0
pretrain_steps = 30
finetune_steps = 20
checkpoint_interval = 1000
profiler_window = 50
{extra}
"#,
        labels = labels_file.display(),
    )
}

pub fn write_config(dir: &Path, name: &str, toml: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, toml).unwrap();
    path
}
