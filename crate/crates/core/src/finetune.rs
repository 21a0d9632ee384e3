//! CTC fine-tuning loop: freeze-window gating, guard policy for infeasible
//! utterances, periodic dev-set WER evaluation, and best-checkpoint tracking.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::adam::Adam;
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::config::GuardPolicy;
use crate::error::{Error, Result};
use crate::model::{CtcStep, FinetuneModel, TrainUtterance, CTC_HEAD_PREFIX};
use crate::nn::param::{fingerprint, zero_grads, Parameterized};
use crate::rng::Rng;
use crate::schedule::LrSchedule;
use crate::tokenizer::Tokenizer;
use crate::wer::edit_distance;

#[derive(Debug, Clone)]
pub struct FinetuneOptions {
    pub steps: u64,
    pub batch_seconds: f64,
    pub update_frequency: usize,
    pub schedule: LrSchedule,
    /// Steps during which only the output projection updates.
    pub freeze_steps: u64,
    pub eval_interval: u64,
    pub eval_beam: usize,
    pub guard_policy: GuardPolicy,
    pub deterministic: bool,
    pub config_hash: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneSummary {
    pub final_step: u64,
    pub last_loss: f64,
    pub best_wer: f64,
    pub best_step: u64,
    pub final_wer: f64,
    pub guard_violations: u64,
    /// (step, fingerprint of all non-head parameters), recorded at every
    /// evaluation and at the freeze boundary.
    pub trunk_fingerprints: Vec<(u64, u64)>,
    pub metrics_path: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Corpus-level WER: total edit distance over total reference words.
pub fn evaluate_wer(
    model: &mut FinetuneModel,
    dev: &[TrainUtterance],
    tokenizer: &Tokenizer,
    beam: usize,
) -> Result<f64> {
    let mut edits = 0usize;
    let mut ref_words = 0usize;
    for utt in dev {
        let text = utt.text.as_ref().ok_or_else(|| {
            Error::Manifest(format!("utterance {} has no reference text", utt.utt_id))
        })?;
        let ids = model.decode_utterance(utt, beam)?;
        let hyp = tokenizer.decode(&ids);
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = text.split_whitespace().collect();
        if r.is_empty() {
            return Err(Error::EmptyReference);
        }
        edits += edit_distance(&h, &r);
        ref_words += r.len();
    }
    if ref_words == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(edits as f64 / ref_words as f64)
}

pub fn run_finetune(
    model: &mut FinetuneModel,
    train: &[TrainUtterance],
    dev: &[TrainUtterance],
    tokenizer: &Tokenizer,
    opts: &FinetuneOptions,
    run_dir: &Path,
    rng: &mut Rng,
    adam: &mut Adam,
) -> Result<FinetuneSummary> {
    if train.is_empty() {
        return Err(Error::Manifest("empty fine-tuning set".into()));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut metrics =
        File::create(&metrics_path).map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    let durations: Vec<f64> = train.iter().map(|u| u.duration_s).collect();
    let batches = crate::batching::seconds_budget_batches(&durations, opts.batch_seconds);
    let trunk_filter = |name: &str| !name.starts_with(CTC_HEAD_PREFIX);

    let mut summary = FinetuneSummary {
        final_step: opts.steps,
        last_loss: f64::NAN,
        best_wer: f64::INFINITY,
        best_step: 0,
        final_wer: f64::NAN,
        guard_violations: 0,
        trunk_fingerprints: vec![(0, fingerprint(model, trunk_filter))],
        metrics_path: metrics_path.clone(),
        best_checkpoint: run_dir.join("best.ckpt"),
    };

    for step in 1..=opts.steps {
        let lr = opts.schedule.lr_at(step);
        let in_freeze = step <= opts.freeze_steps;
        zero_grads(model);
        let mut loss_sum = 0.0;
        let mut n_loss = 0usize;
        for _ in 0..opts.update_frequency {
            let batch = &batches[rng.below(batches.len())];
            for &idx in batch.iter() {
                match model.train_utterance(&train[idx], rng)? {
                    CtcStep::Loss(l) => {
                        loss_sum += l;
                        n_loss += 1;
                    }
                    CtcStep::GuardViolation { frames, required } => {
                        summary.guard_violations += 1;
                        match opts.guard_policy {
                            GuardPolicy::Skip => {
                                eprintln!(
                                    "warning: skipping {}: {} frames < {} required by CTC",
                                    train[idx].utt_id, frames, required
                                );
                            }
                            GuardPolicy::Fail => {
                                return Err(Error::CtcGuard { frames, required });
                            }
                        }
                    }
                }
            }
        }
        let loss = if n_loss > 0 {
            let inv = 1.0 / n_loss as f64;
            model.visit_params("", &mut |_, p| {
                for g in &mut p.grad {
                    *g *= inv;
                }
            });
            adam.step(model, lr, &|name| in_freeze && trunk_filter(name))?;
            Some(loss_sum / n_loss as f64)
        } else {
            None
        };
        if let Some(l) = loss {
            summary.last_loss = l;
        }

        let mut wer_field = None;
        if step % opts.eval_interval == 0 || step == opts.steps {
            let wer = evaluate_wer(model, dev, tokenizer, opts.eval_beam)?;
            wer_field = Some(wer);
            summary.trunk_fingerprints.push((step, fingerprint(model, trunk_filter)));
            if wer < summary.best_wer {
                summary.best_wer = wer;
                summary.best_step = step;
                save_checkpoint(
                    &summary.best_checkpoint,
                    model,
                    adam,
                    rng,
                    &CheckpointMeta {
                        step,
                        config_hash: opts.config_hash,
                    },
                )?;
            }
            summary.final_wer = wer;
        }
        if step == opts.freeze_steps {
            summary.trunk_fingerprints.push((step, fingerprint(model, trunk_filter)));
        }

        let mut obj = serde_json::Map::new();
        obj.insert("step".into(), serde_json::json!(step));
        obj.insert("loss".into(), serde_json::json!(loss));
        obj.insert("lr".into(), serde_json::json!(lr));
        obj.insert("frozen".into(), serde_json::json!(in_freeze));
        if let Some(w) = wer_field {
            obj.insert("dev_wer".into(), serde_json::json!(w));
        }
        writeln!(metrics, "{}", serde_json::Value::Object(obj))
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    }
    let final_path = run_dir.join("model.ckpt");
    save_checkpoint(
        &final_path,
        model,
        adam,
        rng,
        &CheckpointMeta {
            step: opts.steps,
            config_hash: opts.config_hash,
        },
    )?;
    if !summary.best_checkpoint.exists() {
        summary.best_checkpoint = final_path;
    }
    Ok(summary)
}
