//! Run configuration: one TOML file describes a full experiment — front-end,
//! masking, loss, labels, tokenizer, schedules, and trainer knobs.
//!
//! The whole config is validated before any work starts, and every rejection
//! names the offending fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendKind {
    Waveform,
    Fbank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementKind {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Codebook,
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Kmeans,
    Phoneme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKindCfg {
    Char,
    Subword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuardPolicy {
    Skip,
    Fail,
}

fn default_waveform_channels() -> usize {
    32
}

fn default_fbank_dim() -> usize {
    80
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendCfg {
    pub kind: FrontendKind,
    pub frameshift_ms: u32,
    #[serde(default = "default_waveform_channels")]
    pub waveform_channels: usize,
    #[serde(default = "default_fbank_dim")]
    pub fbank_dim: usize,
}

fn default_mask_prob() -> f64 {
    0.08
}

fn default_span_len() -> usize {
    10
}

fn default_finetune_mask_prob() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingCfg {
    pub placement: PlacementKind,
    #[serde(default = "default_mask_prob")]
    pub span_start_prob: f64,
    #[serde(default = "default_span_len")]
    pub span_len: usize,
    /// Augmentation-mask probability during fine-tuning.
    #[serde(default = "default_finetune_mask_prob")]
    pub finetune_span_start_prob: f64,
}

fn default_layers() -> usize {
    4
}

fn default_model_dim() -> usize {
    64
}

fn default_heads() -> usize {
    4
}

fn default_ffn() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderCfg {
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_model_dim")]
    pub model_dim: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_ffn")]
    pub ffn_dim: usize,
    #[serde(default)]
    pub ils_layers: Vec<usize>,
}

fn default_temperature() -> f64 {
    0.1
}

fn default_embed_dim() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCfg {
    pub kind: LossKind,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub num_classes: usize,
    /// Codebook embedding width (cosine-similarity path only).
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsCfg {
    pub source: LabelSource,
    /// Frame-label file produced by the kmeans subcommand or supplied
    /// externally (phoneme path).
    pub file: PathBuf,
}

fn default_vocab_size() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerCfg {
    pub kind: TokenizerKindCfg,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCfg {
    pub peak: f64,
    pub warmup_steps: u64,
    #[serde(default)]
    pub hold_steps: u64,
    pub decay_steps: u64,
    #[serde(default)]
    pub final_fraction: f64,
}

fn default_batch_seconds() -> f64 {
    4.0
}

fn default_update_frequency() -> usize {
    1
}

fn default_pretrain_steps() -> u64 {
    2000
}

fn default_finetune_steps() -> u64 {
    1000
}

fn default_freeze_steps() -> u64 {
    100
}

fn default_eval_interval() -> u64 {
    200
}

fn default_checkpoint_interval() -> u64 {
    1000
}

fn default_profiler_window() -> usize {
    200
}

fn default_decode_beam() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerCfg {
    #[serde(default = "default_batch_seconds")]
    pub batch_seconds: f64,
    #[serde(default = "default_update_frequency")]
    pub update_frequency: usize,
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: u64,
    #[serde(default = "default_finetune_steps")]
    pub finetune_steps: u64,
    #[serde(default = "default_freeze_steps")]
    pub freeze_steps: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    #[serde(default = "default_profiler_window")]
    pub profiler_window: usize,
    /// Guard handling for utterances whose frame count cannot carry the
    /// target. Must be set explicitly for the risky 80 ms + char combination.
    #[serde(default)]
    pub guard_policy: Option<GuardPolicy>,
    #[serde(default = "default_decode_beam")]
    pub decode_beam: usize,
}

impl Default for TrainerCfg {
    fn default() -> Self {
        toml::from_str("").expect("all trainer fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub frontend: FrontendCfg,
    pub masking: MaskingCfg,
    pub encoder: EncoderCfg,
    pub loss: LossCfg,
    pub labels: LabelsCfg,
    pub tokenizer: TokenizerCfg,
    pub schedule: SchedulesCfg,
    #[serde(default)]
    pub trainer: TrainerCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesCfg {
    pub pretrain: ScheduleCfg,
    pub finetune: ScheduleCfg,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_validated(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whole-config consistency check; every rejection names the fields.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        match self.frontend.kind {
            FrontendKind::Fbank => {
                if !matches!(self.frontend.frameshift_ms, 20 | 40 | 80) {
                    return fail(format!(
                        "frontend.kind=fbank requires frontend.frameshift_ms in {{20,40,80}}, got {}",
                        self.frontend.frameshift_ms
                    ));
                }
            }
            FrontendKind::Waveform => {
                if self.frontend.frameshift_ms != 20 {
                    return fail(format!(
                        "frontend.kind=waveform fixes frontend.frameshift_ms=20, got {}",
                        self.frontend.frameshift_ms
                    ));
                }
                if self.masking.placement == PlacementKind::Pre {
                    return fail(
                        "masking.placement=pre requires frontend.kind=fbank (pre-masking acts on the spectrogram)"
                            .into(),
                    );
                }
            }
        }
        if !(0.0..=1.0).contains(&self.masking.span_start_prob) {
            return fail(format!(
                "masking.span_start_prob must be in [0,1], got {}",
                self.masking.span_start_prob
            ));
        }
        if self.masking.span_len == 0 {
            return fail("masking.span_len must be at least 1".into());
        }
        if self.loss.temperature <= 0.0 {
            return fail(format!(
                "loss.temperature must be positive, got {}",
                self.loss.temperature
            ));
        }
        if self.loss.num_classes < 2 {
            return fail(format!(
                "loss.num_classes must be at least 2, got {}",
                self.loss.num_classes
            ));
        }
        if self.encoder.model_dim % self.encoder.num_heads != 0 {
            return fail(format!(
                "encoder.model_dim {} must divide by encoder.num_heads {}",
                self.encoder.model_dim, self.encoder.num_heads
            ));
        }
        for &l in &self.encoder.ils_layers {
            if l < 1 || l > self.encoder.num_layers {
                return fail(format!(
                    "encoder.ils_layers entry {l} outside 1..=encoder.num_layers ({})",
                    self.encoder.num_layers
                ));
            }
        }
        if self.frontend.frameshift_ms == 80
            && self.tokenizer.kind == TokenizerKindCfg::Char
            && self.trainer.guard_policy.is_none()
        {
            return fail(
                "frontend.frameshift_ms=80 with tokenizer.kind=char risks CTC length violations; set trainer.guard_policy to \"skip\" or \"fail\" explicitly"
                    .into(),
            );
        }
        if self.trainer.batch_seconds <= 0.0 {
            return fail("trainer.batch_seconds must be positive".into());
        }
        if self.trainer.update_frequency == 0 {
            return fail("trainer.update_frequency must be at least 1".into());
        }
        Ok(())
    }

    pub fn guard_policy(&self) -> GuardPolicy {
        self.trainer.guard_policy.unwrap_or(GuardPolicy::Skip)
    }
}

/// FNV-1a of the raw config file bytes; recorded in run metadata and
/// checkpoints so resumed runs can detect config drift.
pub fn config_hash(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
