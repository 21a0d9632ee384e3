//! End-user operations behind the CLI subcommands: feature extraction,
//! k-means labeling, pretraining, fine-tuning, decoding, scoring, profiling
//! comparisons, and synthetic-corpus generation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::{apply_params, load_checkpoint, restore_adam};
use crate::config::{
    config_hash, FrontendKind, LossKind, RunConfig, TokenizerKindCfg,
};
use crate::dsp::{cmn, cmvn, fbank, mfcc39, DspConfig};
use crate::encoder::{EncoderConfig, TransformerEncoder};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::finetune::{run_finetune, FinetuneOptions, FinetuneSummary};
use crate::frontends::{DownsamplerConfig, FbankDownsampler, WaveformEncoder, WaveformEncoderConfig};
use crate::kmeans::{cluster_purity, kmeans_assign, kmeans_fit};
use crate::labels::{load_label_file, LabelFile};
use crate::losses::{CeHead, CodebookHead, LossHead, PretrainObjective};
use crate::manifest::{load_transcripts, save_transcripts, Manifest};
use crate::masking::MaskEmbedding;
use crate::model::{
    tap_as_features, FinetuneModel, Frontend, MaskPlacement, MaskingSettings, PretrainModel,
    TrainUtterance,
};
use crate::pretrain::{run_pretrain, PretrainOptions, PretrainSummary};
use crate::profiler::{speedup_ratio, TimingReport};
use crate::rng::Rng;
use crate::schedule::LrSchedule;
use crate::synth::{write_corpus, CorpusPaths, SynthConfig};
use crate::tokenizer::Tokenizer;
use crate::wer::edit_distance;

/// Writes `run.json` with the config hash and crate version so a run
/// directory is self-describing.
pub fn write_run_metadata(run_dir: &Path, cfg_hash: u64, seed: u64, deterministic: bool) -> Result<()> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": format!("{cfg_hash:016x}"),
        "seed": seed,
        "deterministic": deterministic,
    });
    let path = run_dir.join("run.json");
    fs::write(&path, format!("{meta}\n")).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Model construction from a validated config.
// ---------------------------------------------------------------------------

pub fn build_pretrain_model(cfg: &RunConfig, rng: &mut Rng) -> Result<PretrainModel> {
    let frontend = match cfg.frontend.kind {
        FrontendKind::Waveform => Frontend::Waveform(WaveformEncoder::new(
            WaveformEncoderConfig::with_channels(cfg.frontend.waveform_channels),
            rng,
        )?),
        FrontendKind::Fbank => Frontend::Fbank(FbankDownsampler::new(
            DownsamplerConfig::new(
                cfg.frontend.frameshift_ms,
                cfg.encoder.model_dim,
                cfg.frontend.fbank_dim,
            )?,
            rng,
        )),
    };
    let enc_cfg = EncoderConfig {
        num_layers: cfg.encoder.num_layers,
        model_dim: cfg.encoder.model_dim,
        num_heads: cfg.encoder.num_heads,
        ffn_dim: cfg.encoder.ffn_dim,
        ils_layers: cfg.encoder.ils_layers.clone(),
        use_positional: true,
    };
    let mask_emb = MaskEmbedding::new(frontend.output_dim(), rng);
    let encoder = TransformerEncoder::new(enc_cfg, frontend.output_dim(), rng)?;
    let make_head = |rng: &mut Rng| -> LossHead {
        match cfg.loss.kind {
            LossKind::Codebook => LossHead::Codebook(CodebookHead::new(
                cfg.encoder.model_dim,
                cfg.loss.embed_dim,
                cfg.loss.num_classes,
                cfg.loss.temperature,
                rng,
            )),
            LossKind::Ce => LossHead::Ce(CeHead::new(
                cfg.encoder.model_dim,
                cfg.loss.num_classes,
                cfg.loss.temperature,
                rng,
            )),
        }
    };
    let top = make_head(rng);
    let taps = cfg
        .encoder
        .ils_layers
        .iter()
        .map(|&l| (l, make_head(rng)))
        .collect();
    Ok(PretrainModel {
        frontend,
        mask_emb,
        encoder,
        objective: PretrainObjective { top, taps },
        masking: MaskingSettings {
            placement: match cfg.masking.placement {
                crate::config::PlacementKind::Pre => MaskPlacement::Pre,
                crate::config::PlacementKind::Post => MaskPlacement::Post,
            },
            span_start_prob: cfg.masking.span_start_prob,
            span_len: cfg.masking.span_len,
        },
    })
}

// ---------------------------------------------------------------------------
// Dataset assembly.
// ---------------------------------------------------------------------------

pub fn feature_path(features_dir: &Path, utt_id: &str) -> PathBuf {
    features_dir.join(format!("{utt_id}.feat"))
}

fn load_wave_or_features(
    cfg: &RunConfig,
    entry: &crate::manifest::ManifestEntry,
    features_dir: Option<&Path>,
) -> Result<(Option<crate::audio::Waveform>, Option<FeatureSequence>)> {
    match cfg.frontend.kind {
        FrontendKind::Waveform => Ok((Some(crate::audio::read_wav(&entry.path)?), None)),
        FrontendKind::Fbank => {
            let dir = features_dir.ok_or_else(|| {
                Error::InvalidConfig(
                    "frontend.kind=fbank needs a features directory (run extract first)".into(),
                )
            })?;
            let f = FeatureSequence::load(&feature_path(dir, &entry.utt_id))?;
            if f.kind != FeatureKind::Fbank || f.frameshift_ms != 10 {
                return Err(Error::Format(format!(
                    "{}: expected 10 ms fbank features",
                    entry.utt_id
                )));
            }
            Ok((None, Some(f)))
        }
    }
}

/// Loads the full pretraining dataset into memory: audio or features, plus
/// frame labels keyed by utterance id.
pub fn build_pretrain_dataset(
    cfg: &RunConfig,
    manifest: &Manifest,
    features_dir: Option<&Path>,
    labels: &LabelFile,
) -> Result<Vec<TrainUtterance>> {
    let mut out = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let (wave, fbank) = load_wave_or_features(cfg, entry, features_dir)?;
        let seq = labels.sequence(&entry.utt_id).ok_or_else(|| {
            Error::Manifest(format!("no labels for utterance {}", entry.utt_id))
        })?;
        if seq.is_empty() {
            return Err(Error::Manifest(format!(
                "empty label sequence for utterance {}",
                entry.utt_id
            )));
        }
        out.push(TrainUtterance {
            utt_id: entry.utt_id.clone(),
            duration_s: entry.duration_s,
            wave,
            fbank,
            labels: Some(seq),
            target: None,
            text: None,
        });
    }
    Ok(out)
}

/// Loads a fine-tuning dataset: audio/features plus transcripts and token
/// targets.
pub fn build_finetune_dataset(
    cfg: &RunConfig,
    manifest: &Manifest,
    features_dir: Option<&Path>,
    transcripts: &BTreeMap<String, String>,
    tokenizer: &Tokenizer,
) -> Result<Vec<TrainUtterance>> {
    let mut out = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let (wave, fbank) = load_wave_or_features(cfg, entry, features_dir)?;
        let text = transcripts.get(&entry.utt_id).ok_or_else(|| {
            Error::Manifest(format!("no transcript for utterance {}", entry.utt_id))
        })?;
        let target = tokenizer.encode(text)?;
        out.push(TrainUtterance {
            utt_id: entry.utt_id.clone(),
            duration_s: entry.duration_s,
            wave,
            fbank,
            labels: None,
            target: Some(target),
            text: Some(text.clone()),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<CorpusPaths> {
    write_corpus(cfg, out_dir)
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

/// Offline feature extraction: one container file per utterance. Re-runs
/// skip outputs that are newer than their audio (idempotent).
pub fn cmd_extract(
    manifest_path: &Path,
    kind: FeatureKind,
    out_dir: &Path,
    apply_cmvn: bool,
) -> Result<ExtractReport> {
    let manifest = Manifest::load(manifest_path)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let dsp_cfg = DspConfig::default();
    let mut report = ExtractReport {
        written: 0,
        skipped: 0,
        failures: Vec::new(),
    };
    for entry in &manifest.entries {
        let out_path = feature_path(out_dir, &entry.utt_id);
        if let (Ok(out_meta), Ok(in_meta)) = (fs::metadata(&out_path), fs::metadata(&entry.path)) {
            if let (Ok(out_t), Ok(in_t)) = (out_meta.modified(), in_meta.modified()) {
                if out_t >= in_t {
                    report.skipped += 1;
                    continue;
                }
            }
        }
        let result = (|| -> Result<usize> {
            let wave = crate::audio::read_wav(&entry.path)?;
            // Fbank (network input) gets full mean/variance normalization;
            // MFCC (clustering features) gets mean normalization only.
            let feats = match kind {
                FeatureKind::Fbank => {
                    let f = fbank(&wave, &dsp_cfg)?;
                    if apply_cmvn {
                        cmvn(&f)?
                    } else {
                        f
                    }
                }
                FeatureKind::Mfcc => {
                    let f = mfcc39(&wave, &dsp_cfg)?;
                    if apply_cmvn {
                        cmn(&f)?
                    } else {
                        f
                    }
                }
                FeatureKind::Latent => {
                    return Err(Error::InvalidConfig(
                        "extract produces fbank or mfcc features".into(),
                    ))
                }
            };
            feats.save(&out_path)?;
            Ok(feats.num_frames())
        })();
        match result {
            Ok(t) => {
                println!("{}\tT={t}", entry.utt_id);
                report.written += 1;
            }
            Err(e) => report.failures.push((entry.utt_id.clone(), e.to_string())),
        }
    }
    if !report.failures.is_empty() {
        for (utt, err) in &report.failures {
            eprintln!("error: {utt}: {err}");
        }
        return Err(Error::Run(format!(
            "{} of {} utterances failed extraction",
            report.failures.len(),
            manifest.len()
        )));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// kmeans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KmeansReport {
    pub clusters: usize,
    pub frames: usize,
    pub final_distortion: f64,
    pub codebook_path: PathBuf,
    pub labels_path: PathBuf,
}

/// Fits a codebook on extracted feature files and writes per-utterance
/// frame labels.
pub fn cmd_kmeans(
    manifest_path: &Path,
    features_dir: &Path,
    clusters: usize,
    iters: usize,
    seed: u64,
    codebook_path: &Path,
    labels_path: &Path,
) -> Result<KmeansReport> {
    let manifest = Manifest::load(manifest_path)?;
    let mut frames: Vec<FeatureSequence> = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        frames.push(FeatureSequence::load(&feature_path(features_dir, &entry.utt_id))?);
    }
    let frameshift = frames.first().map(|f| f.frameshift_ms).unwrap_or(10);
    let stacked = stack_frames(&frames)?;
    let mut rng = Rng::seed_from(seed);
    let fit = kmeans_fit(&stacked, clusters, iters, &mut rng)?;
    fit.codebook.save(codebook_path)?;
    let mut label_file = LabelFile {
        frameshift_ms: frameshift,
        num_classes: clusters,
        utterances: BTreeMap::new(),
    };
    for (entry, f) in manifest.entries.iter().zip(&frames) {
        let ids = kmeans_assign(&f.frames, &fit.codebook)?;
        label_file.utterances.insert(entry.utt_id.clone(), ids);
    }
    label_file.save(labels_path)?;
    Ok(KmeansReport {
        clusters,
        frames: stacked.rows(),
        final_distortion: *fit.distortions.last().unwrap_or(&f64::NAN),
        codebook_path: codebook_path.to_path_buf(),
        labels_path: labels_path.to_path_buf(),
    })
}

fn stack_frames(seqs: &[FeatureSequence]) -> Result<crate::mat::Mat> {
    let dim = seqs
        .first()
        .map(|f| f.dim())
        .ok_or_else(|| Error::Manifest("no feature files".into()))?;
    let total: usize = seqs.iter().map(|f| f.num_frames()).sum();
    let mut out = crate::mat::Mat::zeros(total, dim);
    let mut row = 0;
    for f in seqs {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
        for t in 0..f.num_frames() {
            out.row_mut(row).copy_from_slice(f.frames.row(t));
            row += 1;
        }
    }
    Ok(out)
}

/// Iteration-2 labeling: clusters hidden features tapped from a pretrained
/// encoder layer (0 = top of the stack).
#[allow(clippy::too_many_arguments)]
pub fn cmd_kmeans_latent(
    config_path: &Path,
    checkpoint_path: &Path,
    manifest_path: &Path,
    features_dir: Option<&Path>,
    layer: usize,
    clusters: usize,
    iters: usize,
    seed: u64,
    codebook_path: &Path,
    labels_path: &Path,
) -> Result<KmeansReport> {
    let cfg = RunConfig::load(config_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let mut rng = Rng::seed_from(seed);
    let mut model = build_pretrain_model(&cfg, &mut rng)?;
    let ck = load_checkpoint(checkpoint_path)?;
    apply_params(&mut model, &ck)?;
    // The tap must exist: layer 0 (top) always does; others need ils config.
    if layer > 0 && !model.encoder.cfg.ils_layers.contains(&layer) {
        model.encoder.cfg.ils_layers.push(layer);
    }
    let mut label_file = LabelFile {
        frameshift_ms: model.frontend.frameshift_ms(),
        num_classes: clusters,
        utterances: BTreeMap::new(),
    };
    let mut latents: Vec<FeatureSequence> = Vec::with_capacity(manifest.len());
    let mut ids_order = Vec::new();
    for entry in &manifest.entries {
        let (wave, fbank) = load_wave_or_features(&cfg, entry, features_dir)?;
        let utt = TrainUtterance {
            utt_id: entry.utt_id.clone(),
            duration_s: entry.duration_s,
            wave,
            fbank,
            labels: None,
            target: None,
            text: None,
        };
        let outputs = model.encode_utterance(&utt)?;
        let feats = tap_as_features(&outputs, layer, model.frontend.frameshift_ms())
            .ok_or_else(|| Error::InvalidConfig(format!("no encoder tap at layer {layer}")))?;
        latents.push(feats);
        ids_order.push(entry.utt_id.clone());
    }
    let stacked = stack_frames(&latents)?;
    let fit = kmeans_fit(&stacked, clusters, iters, &mut rng)?;
    fit.codebook.save(codebook_path)?;
    for (utt_id, f) in ids_order.iter().zip(&latents) {
        let ids = kmeans_assign(&f.frames, &fit.codebook)?;
        label_file.utterances.insert(utt_id.clone(), ids);
    }
    label_file.save(labels_path)?;
    Ok(KmeansReport {
        clusters,
        frames: stacked.rows(),
        final_distortion: *fit.distortions.last().unwrap_or(&f64::NAN),
        codebook_path: codebook_path.to_path_buf(),
        labels_path: labels_path.to_path_buf(),
    })
}

/// Majority-class purity of a labeling against ground truth, paired by
/// utterance id and truncated to common lengths.
pub fn labeling_purity(predicted: &LabelFile, truth: &LabelFile, clusters: usize) -> f64 {
    let mut pred_all = Vec::new();
    let mut true_all = Vec::new();
    for (utt, pred) in &predicted.utterances {
        if let Some(tr) = truth.utterances.get(utt) {
            let factor = (predicted.frameshift_ms / truth.frameshift_ms).max(1) as usize;
            let tr_resampled: Vec<u32> = tr.iter().step_by(factor).copied().collect();
            let n = pred.len().min(tr_resampled.len());
            pred_all.extend_from_slice(&pred[..n]);
            true_all.extend_from_slice(&tr_resampled[..n]);
        }
    }
    cluster_purity(&pred_all, &true_all, clusters)
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PretrainArgs {
    pub config_path: PathBuf,
    pub manifest_path: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub steps_override: Option<u64>,
    /// Overrides the config's labels.file (presets leave it relative).
    pub labels_override: Option<PathBuf>,
    pub deterministic: bool,
    pub resume_from: Option<PathBuf>,
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<PretrainSummary> {
    let raw = fs::read(&args.config_path)
        .map_err(|e| Error::io(args.config_path.display().to_string(), e))?;
    let cfg = RunConfig::load(&args.config_path)?;
    let cfg_hash = config_hash(&raw);
    let seed = args.seed_override.unwrap_or(cfg.seed);
    let manifest = Manifest::load(&args.manifest_path)?;
    let labels_path = args
        .labels_override
        .clone()
        .unwrap_or_else(|| resolve_labels_path(&cfg, &args.config_path));
    let labels = load_label_file(&labels_path, cfg.loss.num_classes)?;
    check_label_classes(&labels, &cfg)?;
    let dataset = build_pretrain_dataset(&cfg, &manifest, args.features_dir.as_deref(), &labels)?;

    let mut rng = Rng::seed_from(seed);
    let mut model = build_pretrain_model(&cfg, &mut rng)?;
    let mut adam = Adam::new(AdamConfig::default());
    let mut start_step = 0;
    if let Some(resume) = &args.resume_from {
        let ck = load_checkpoint(resume)?;
        if ck.meta.config_hash != cfg_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint config hash {:016x} does not match config {:016x}",
                ck.meta.config_hash, cfg_hash
            )));
        }
        apply_params(&mut model, &ck)?;
        adam = restore_adam(AdamConfig::default(), &ck);
        rng = Rng::restore(ck.rng_state);
        start_step = ck.meta.step;
    }
    let opts = PretrainOptions {
        steps: args.steps_override.unwrap_or(cfg.trainer.pretrain_steps),
        start_step,
        batch_seconds: cfg.trainer.batch_seconds,
        update_frequency: cfg.trainer.update_frequency,
        schedule: LrSchedule::linear(
            cfg.schedule.pretrain.peak,
            cfg.schedule.pretrain.warmup_steps,
            cfg.schedule.pretrain.decay_steps,
        ),
        adam: AdamConfig::default(),
        profiler_window: cfg.trainer.profiler_window,
        checkpoint_interval: cfg.trainer.checkpoint_interval,
        deterministic: args.deterministic,
        config_hash: cfg_hash,
    };
    write_run_metadata(&args.run_dir, cfg_hash, seed, args.deterministic)?;
    run_pretrain(&mut model, &dataset, &opts, &args.run_dir, &mut rng, &mut adam)
}

/// Fail fast when the label id space cannot fit the configured class
/// count, instead of erroring mid-training.
fn check_label_classes(labels: &LabelFile, cfg: &RunConfig) -> Result<()> {
    if labels.num_classes > cfg.loss.num_classes {
        return Err(Error::InvalidConfig(format!(
            "label file declares {} classes but loss.num_classes is {}",
            labels.num_classes, cfg.loss.num_classes
        )));
    }
    Ok(())
}

/// Label paths in configs resolve relative to the config file.
fn resolve_labels_path(cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if cfg.labels.file.is_absolute() {
        cfg.labels.file.clone()
    } else {
        config_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&cfg.labels.file)
    }
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FinetuneArgs {
    pub config_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub train_manifest: PathBuf,
    pub train_transcripts: PathBuf,
    pub dev_manifest: PathBuf,
    pub dev_transcripts: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub steps_override: Option<u64>,
    pub deterministic: bool,
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<FinetuneSummary> {
    let raw = fs::read(&args.config_path)
        .map_err(|e| Error::io(args.config_path.display().to_string(), e))?;
    let cfg = RunConfig::load(&args.config_path)?;
    let cfg_hash = config_hash(&raw);
    let seed = args.seed_override.unwrap_or(cfg.seed);

    let train_manifest = Manifest::load(&args.train_manifest)?;
    let train_texts = load_transcripts(&args.train_transcripts)?;
    let dev_manifest = Manifest::load(&args.dev_manifest)?;
    let dev_texts = load_transcripts(&args.dev_transcripts)?;

    // Tokenizer trained on the fine-tuning corpus.
    let corpus: Vec<String> = train_texts.values().cloned().collect();
    let tokenizer = match cfg.tokenizer.kind {
        TokenizerKindCfg::Char => Tokenizer::train_char(&corpus)?,
        TokenizerKindCfg::Subword => Tokenizer::train_subword(&corpus, cfg.tokenizer.vocab_size)?,
    };
    fs::create_dir_all(&args.run_dir).map_err(|e| Error::io(args.run_dir.display().to_string(), e))?;
    tokenizer.save(&args.run_dir.join("tokenizer.txt"))?;

    let mut rng = Rng::seed_from(seed);
    let mut pretrain_model = build_pretrain_model(&cfg, &mut rng)?;
    let ck = load_checkpoint(&args.checkpoint_path)?;
    apply_params(&mut pretrain_model, &ck)?;
    let mut model = FinetuneModel::from_pretrained(
        pretrain_model,
        tokenizer.vocab_size() + 1,
        &mut rng,
    );
    model.masking = MaskingSettings {
        placement: model.masking.placement,
        span_start_prob: cfg.masking.finetune_span_start_prob,
        span_len: cfg.masking.span_len,
    };

    let train =
        build_finetune_dataset(&cfg, &train_manifest, args.features_dir.as_deref(), &train_texts, &tokenizer)?;
    let dev =
        build_finetune_dataset(&cfg, &dev_manifest, args.features_dir.as_deref(), &dev_texts, &tokenizer)?;

    let opts = FinetuneOptions {
        steps: args.steps_override.unwrap_or(cfg.trainer.finetune_steps),
        batch_seconds: cfg.trainer.batch_seconds,
        update_frequency: cfg.trainer.update_frequency,
        schedule: LrSchedule::tristage(
            cfg.schedule.finetune.peak,
            cfg.schedule.finetune.warmup_steps,
            cfg.schedule.finetune.hold_steps,
            cfg.schedule.finetune.decay_steps,
            cfg.schedule.finetune.final_fraction,
        ),
        freeze_steps: cfg.trainer.freeze_steps,
        eval_interval: cfg.trainer.eval_interval,
        eval_beam: 1,
        guard_policy: cfg.guard_policy(),
        deterministic: args.deterministic,
        config_hash: cfg_hash,
    };
    write_run_metadata(&args.run_dir, cfg_hash, seed, args.deterministic)?;
    let mut adam = Adam::new(AdamConfig::default());
    run_finetune(
        &mut model, &train, &dev, &tokenizer, &opts, &args.run_dir, &mut rng, &mut adam,
    )
}

// ---------------------------------------------------------------------------
// decode and score
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecodeArgs {
    pub config_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub tokenizer_path: PathBuf,
    pub manifest_path: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub beam: usize,
    pub out_path: PathBuf,
}

/// Decodes a manifest with a fine-tuned model, writing hypothesis
/// transcripts as `utt_id<TAB>text`.
pub fn cmd_decode(args: &DecodeArgs) -> Result<BTreeMap<String, String>> {
    let cfg = RunConfig::load(&args.config_path)?;
    let tokenizer = Tokenizer::load(&args.tokenizer_path)?;
    let manifest = Manifest::load(&args.manifest_path)?;
    let mut rng = Rng::seed_from(cfg.seed);
    let pretrain_model = build_pretrain_model(&cfg, &mut rng)?;
    let mut model =
        FinetuneModel::from_pretrained(pretrain_model, tokenizer.vocab_size() + 1, &mut rng);
    let ck = load_checkpoint(&args.checkpoint_path)?;
    apply_params(&mut model, &ck)?;
    let mut hyps = BTreeMap::new();
    for entry in &manifest.entries {
        let (wave, fbank) = load_wave_or_features(&cfg, entry, args.features_dir.as_deref())?;
        let utt = TrainUtterance {
            utt_id: entry.utt_id.clone(),
            duration_s: entry.duration_s,
            wave,
            fbank,
            labels: None,
            target: None,
            text: None,
        };
        let ids = model.decode_utterance(&utt, args.beam)?;
        hyps.insert(entry.utt_id.clone(), tokenizer.decode(&ids));
    }
    save_transcripts(&args.out_path, &hyps)?;
    Ok(hyps)
}

#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub wer: f64,
    pub utterances: usize,
    pub edits: usize,
    pub ref_words: usize,
}

/// Corpus-level WER between hypothesis and reference transcript files. Every
/// reference must have a hypothesis.
pub fn cmd_score(hyp_path: &Path, ref_path: &Path) -> Result<ScoreReport> {
    let hyps = load_transcripts(hyp_path)?;
    let refs = load_transcripts(ref_path)?;
    if refs.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut edits = 0;
    let mut ref_words = 0;
    for (utt, text) in &refs {
        let hyp = hyps
            .get(utt)
            .ok_or_else(|| Error::Manifest(format!("no hypothesis for utterance {utt}")))?;
        let r: Vec<&str> = text.split_whitespace().collect();
        if r.is_empty() {
            return Err(Error::EmptyReference);
        }
        let h: Vec<&str> = hyp.split_whitespace().collect();
        edits += edit_distance(&h, &r);
        ref_words += r.len();
    }
    Ok(ScoreReport {
        wer: edits as f64 / ref_words as f64,
        utterances: refs.len(),
        edits,
        ref_words,
    })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub config_a: PathBuf,
    pub config_b: PathBuf,
    pub manifest_a: PathBuf,
    pub manifest_b: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub labels_a: Option<PathBuf>,
    pub labels_b: Option<PathBuf>,
    pub steps: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub baseline: TimingReport,
    pub candidate: TimingReport,
    /// Per-component (base − new)/base for the four stages.
    pub reductions: [f64; 4],
    pub baseline_steps_per_s: f64,
    pub candidate_steps_per_s: f64,
    pub speedup: f64,
}

fn run_for_compare(
    config_path: &Path,
    manifest_path: &Path,
    features_dir: Option<&Path>,
    labels_override: Option<&Path>,
    steps: u64,
    seed: u64,
    run_dir: &Path,
) -> Result<(TimingReport, f64)> {
    let raw = fs::read(config_path).map_err(|e| Error::io(config_path.display().to_string(), e))?;
    let cfg = RunConfig::load(config_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let labels_path = labels_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| resolve_labels_path(&cfg, config_path));
    let labels = load_label_file(&labels_path, cfg.loss.num_classes)?;
    check_label_classes(&labels, &cfg)?;
    let dataset = build_pretrain_dataset(&cfg, &manifest, features_dir, &labels)?;
    let mut rng = Rng::seed_from(seed);
    let mut model = build_pretrain_model(&cfg, &mut rng)?;
    let mut adam = Adam::new(AdamConfig::default());
    let opts = PretrainOptions {
        steps,
        start_step: 0,
        batch_seconds: cfg.trainer.batch_seconds,
        update_frequency: cfg.trainer.update_frequency,
        schedule: LrSchedule::linear(
            cfg.schedule.pretrain.peak,
            cfg.schedule.pretrain.warmup_steps,
            cfg.schedule.pretrain.decay_steps,
        ),
        adam: AdamConfig::default(),
        profiler_window: steps.max(1) as usize,
        checkpoint_interval: 0,
        deterministic: false,
        config_hash: config_hash(&raw),
    };
    let summary = run_pretrain(&mut model, &dataset, &opts, run_dir, &mut rng, &mut adam)?;
    let report = summary
        .reports
        .last()
        .cloned()
        .ok_or(Error::EmptyWindow)?;
    Ok((report, summary.steps_per_second))
}

/// Runs two configs on the same data and seed for a fixed number of updates
/// and reports per-component timings, reductions, and end-to-end speedup.
pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport> {
    if let Some(mb) = &args.manifest_b {
        let a = fs::read(&args.manifest_a)
            .map_err(|e| Error::io(args.manifest_a.display().to_string(), e))?;
        let b = fs::read(mb).map_err(|e| Error::io(mb.display().to_string(), e))?;
        if a != b {
            return Err(Error::Manifest(
                "compare requires both configs to run on the same data manifest".into(),
            ));
        }
    }
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let (baseline, base_sps) = run_for_compare(
        &args.config_a,
        &args.manifest_a,
        args.features_dir.as_deref(),
        args.labels_a.as_deref(),
        args.steps,
        args.seed,
        &args.out_dir.join("baseline"),
    )?;
    let (candidate, cand_sps) = run_for_compare(
        &args.config_b,
        &args.manifest_a,
        args.features_dir.as_deref(),
        args.labels_b.as_deref(),
        args.steps,
        args.seed,
        &args.out_dir.join("candidate"),
    )?;
    let reductions = candidate.reductions_vs(&baseline);
    let speedup = speedup_ratio(base_sps, cand_sps)?;
    let report = CompareReport {
        baseline: baseline.clone(),
        candidate: candidate.clone(),
        reductions,
        baseline_steps_per_s: base_sps,
        candidate_steps_per_s: cand_sps,
        speedup,
    };
    // Emit the table, JSON, CSV, and SVG artifacts.
    let table = candidate.render_table(Some(("baseline", &baseline)), "candidate");
    let json = serde_json::json!({
        "steps": args.steps,
        "baseline": baseline.to_json(),
        "candidate": candidate.to_json(),
        "reductions": reductions,
        "baseline_steps_per_s": base_sps,
        "candidate_steps_per_s": cand_sps,
        "speedup": speedup,
    });
    let csv = format!(
        "label,window_steps,feature_extraction,transformer_encoding,loss_calculation,others,wall_seconds\n{}{}",
        baseline.to_csv("baseline"),
        candidate.to_csv("candidate")
    );
    write_text(&args.out_dir.join("compare.txt"), &format!("{table}\nspeedup: {speedup:.2}x\n"))?;
    write_text(&args.out_dir.join("compare.json"), &format!("{json}\n"))?;
    write_text(&args.out_dir.join("compare.csv"), &csv)?;
    write_text(
        &args.out_dir.join("baseline_stages.svg"),
        &baseline.render_svg("baseline stage proportions"),
    )?;
    write_text(
        &args.out_dir.join("candidate_stages.svg"),
        &candidate.render_svg("candidate stage proportions"),
    )?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
