//! Command-line surface: feature extraction, k-means labeling, pretraining,
//! fine-tuning, decoding, scoring, profiling comparisons, and synthetic
//! corpus generation.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use speechlab_core::error::ErrorClass;
use speechlab_core::features::FeatureKind;
use speechlab_core::harness::{
    self, CompareArgs, DecodeArgs, FinetuneArgs, PretrainArgs,
};
use speechlab_core::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "speechlab", version, about = "Desk-scale masked-prediction speech pretraining lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractKind {
    Fbank,
    Mfcc,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic tone-word corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n_utts: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.24)]
        word_duration: f64,
        #[arg(long, default_value_t = 3)]
        words_min: usize,
        #[arg(long, default_value_t = 7)]
        words_max: usize,
    },
    /// Extract fbank or MFCC features offline, one file per utterance.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: ExtractKind,
        #[arg(long)]
        out: PathBuf,
        /// Skip per-utterance mean/variance normalization.
        #[arg(long)]
        no_cmvn: bool,
    },
    /// Fit a k-means codebook on extracted features and write frame labels.
    Kmeans {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of extracted feature files (feature-space clustering).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Config + checkpoint for latent-space clustering instead.
        #[arg(long, requires = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        checkpoint: Option<PathBuf>,
        /// Encoder tap layer for latent clustering (0 = top).
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        clusters: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Masked-prediction pretraining.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Frame-label file; overrides labels.file from the config.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// CTC fine-tuning from a pretraining checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        train_transcripts: PathBuf,
        #[arg(long)]
        dev_manifest: PathBuf,
        #[arg(long)]
        dev_transcripts: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Decode a manifest with a fine-tuned model.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        beam: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word error rate of hypothesis transcripts against references.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Run two configs on the same data and report per-stage timings and
    /// end-to-end speedup.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Optional second manifest; must match the first byte for byte.
        #[arg(long)]
        manifest_b: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Frame-label file for config_a; overrides its labels.file.
        #[arg(long)]
        labels_a: Option<PathBuf>,
        /// Frame-label file for config_b; overrides its labels.file.
        #[arg(long)]
        labels_b: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a stage-proportion SVG chart from a profile/compare JSON.
    Chart {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "stage proportions")]
        title: String,
    },
}

fn run(cli: Cli) -> speechlab_core::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            n_utts,
            seed,
            vocab_size,
            word_duration,
            words_min,
            words_max,
        } => {
            let cfg = SynthConfig {
                n_utts,
                seed,
                vocab_size,
                words_per_utt: (words_min, words_max),
                word_duration_s: word_duration,
                ..Default::default()
            };
            let paths = harness::cmd_synth(&cfg, &out)?;
            println!(
                "wrote {n_utts} utterances\nmanifest: {}\ntranscripts: {}\ntone labels: {}",
                paths.manifest.display(),
                paths.transcripts.display(),
                paths.tone_labels.display()
            );
            Ok(())
        }
        Command::Extract {
            manifest,
            kind,
            out,
            no_cmvn,
        } => {
            let kind = match kind {
                ExtractKind::Fbank => FeatureKind::Fbank,
                ExtractKind::Mfcc => FeatureKind::Mfcc,
            };
            let report = harness::cmd_extract(&manifest, kind, &out, !no_cmvn)?;
            println!("written: {}, up-to-date: {}", report.written, report.skipped);
            Ok(())
        }
        Command::Kmeans {
            manifest,
            features,
            config,
            checkpoint,
            layer,
            clusters,
            iters,
            seed,
            codebook,
            labels,
        } => {
            let report = match (&config, &checkpoint) {
                (Some(cfg), Some(ck)) => harness::cmd_kmeans_latent(
                    cfg,
                    ck,
                    &manifest,
                    features.as_deref(),
                    layer,
                    clusters,
                    iters,
                    seed,
                    &codebook,
                    &labels,
                )?,
                _ => {
                    let feats = features.ok_or_else(|| {
                        speechlab_core::Error::InvalidConfig(
                            "kmeans needs --features, or --config with --checkpoint".into(),
                        )
                    })?;
                    harness::cmd_kmeans(&manifest, &feats, clusters, iters, seed, &codebook, &labels)?
                }
            };
            println!(
                "clusters: {}, frames: {}, final distortion: {:.4}\ncodebook: {}\nlabels: {}",
                report.clusters,
                report.frames,
                report.final_distortion,
                report.codebook_path.display(),
                report.labels_path.display()
            );
            Ok(())
        }
        Command::Pretrain {
            config,
            manifest,
            features,
            labels,
            out,
            seed,
            steps,
            deterministic,
            resume,
        } => {
            let summary = harness::cmd_pretrain(&PretrainArgs {
                config_path: config,
                manifest_path: manifest,
                features_dir: features,
                run_dir: out,
                seed_override: seed,
                steps_override: steps,
                labels_override: labels,
                deterministic,
                resume_from: resume,
            })?;
            println!(
                "finished step {} | loss {:.4} | acc {} | {:.2} steps/s\ncheckpoint: {}",
                summary.final_step,
                summary.last_loss,
                summary
                    .last_accuracy
                    .map(|a| format!("{a:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                summary.steps_per_second,
                summary.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Finetune {
            config,
            checkpoint,
            train_manifest,
            train_transcripts,
            dev_manifest,
            dev_transcripts,
            features,
            out,
            seed,
            steps,
            deterministic,
        } => {
            let summary = harness::cmd_finetune(&FinetuneArgs {
                config_path: config,
                checkpoint_path: checkpoint,
                train_manifest,
                train_transcripts,
                dev_manifest,
                dev_transcripts,
                features_dir: features,
                run_dir: out,
                seed_override: seed,
                steps_override: steps,
                deterministic,
            })?;
            println!(
                "finished step {} | loss {:.4} | best dev WER {:.3} @ step {} | guard violations {}\nbest checkpoint: {}",
                summary.final_step,
                summary.last_loss,
                summary.best_wer,
                summary.best_step,
                summary.guard_violations,
                summary.best_checkpoint.display()
            );
            Ok(())
        }
        Command::Decode {
            config,
            checkpoint,
            tokenizer,
            manifest,
            features,
            beam,
            out,
        } => {
            let hyps = harness::cmd_decode(&DecodeArgs {
                config_path: config,
                checkpoint_path: checkpoint,
                tokenizer_path: tokenizer,
                manifest_path: manifest,
                features_dir: features,
                beam,
                out_path: out.clone(),
            })?;
            println!("decoded {} utterances to {}", hyps.len(), out.display());
            Ok(())
        }
        Command::Score { hyp, reference } => {
            let report = harness::cmd_score(&hyp, &reference)?;
            println!(
                "WER {:.4} ({} edits / {} reference words over {} utterances)",
                report.wer, report.edits, report.ref_words, report.utterances
            );
            Ok(())
        }
        Command::Compare {
            config_a,
            config_b,
            manifest,
            manifest_b,
            features,
            labels_a,
            labels_b,
            steps,
            seed,
            out,
        } => {
            let report = harness::cmd_compare(&CompareArgs {
                config_a,
                config_b,
                manifest_a: manifest,
                manifest_b,
                features_dir: features,
                labels_a,
                labels_b,
                steps,
                seed,
                out_dir: out.clone(),
            })?;
            let table = report
                .candidate
                .render_table(Some(("config_a", &report.baseline)), "config_b");
            println!("{table}");
            println!(
                "steps/s: {:.3} -> {:.3} | end-to-end speedup {:.2}x\nartifacts: {}",
                report.baseline_steps_per_s,
                report.candidate_steps_per_s,
                report.speedup,
                out.display()
            );
            Ok(())
        }
        Command::Chart {
            profile,
            out,
            title,
        } => {
            let text = std::fs::read_to_string(&profile)
                .map_err(|e| speechlab_core::Error::io(profile.display().to_string(), e))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| speechlab_core::Error::Format(format!("{}: {e}", profile.display())))?;
            // Accept either a compare.json ("candidate"/"baseline") or a
            // profile.json ("windows") and chart the most relevant window.
            let window = value
                .get("candidate")
                .or_else(|| value.get("windows").and_then(|w| w.as_array()?.last()))
                .unwrap_or(&value);
            let report = report_from_json(window)?;
            std::fs::write(&out, report.render_svg(&title))
                .map_err(|e| speechlab_core::Error::io(out.display().to_string(), e))?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn report_from_json(v: &serde_json::Value) -> speechlab_core::Result<speechlab_core::profiler::TimingReport> {
    let seconds = v
        .get("seconds")
        .ok_or_else(|| speechlab_core::Error::Format("profile JSON missing 'seconds'".into()))?;
    let get = |name: &str| seconds.get(name).and_then(|x| x.as_f64()).unwrap_or(0.0);
    Ok(speechlab_core::profiler::TimingReport {
        window_steps: v.get("window_steps").and_then(|x| x.as_u64()).unwrap_or(0) as usize,
        seconds: [
            get("feature_extraction"),
            get("transformer_encoding"),
            get("loss_calculation"),
            get("others"),
        ],
        extra_seconds: Default::default(),
        wall_seconds: v.get("wall_seconds").and_then(|x| x.as_f64()).unwrap_or(0.0),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Validation => ExitCode::from(1),
                ErrorClass::Runtime => ExitCode::from(2),
            }
        }
    }
}
