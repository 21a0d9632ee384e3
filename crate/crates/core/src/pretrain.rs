//! Masked-prediction pretraining loop: seconds-budget batches, gradient
//! accumulation, Adam with the configured schedule, profiling, newline-
//! delimited JSON metrics, and periodic checkpoints.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adam::{Adam, AdamConfig};
use crate::batching::seconds_budget_batches;
use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::losses::LossValue;
use crate::model::{PretrainModel, TrainUtterance};
use crate::nn::param::{zero_grads, Parameterized};
use crate::profiler::{Profiler, TimingReport};
use crate::rng::Rng;
use crate::schedule::LrSchedule;

#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub steps: u64,
    pub start_step: u64,
    pub batch_seconds: f64,
    pub update_frequency: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub profiler_window: usize,
    pub checkpoint_interval: u64,
    /// Deterministic mode: metrics omit wall-clock fields so repeated runs
    /// are bit-identical.
    pub deterministic: bool,
    pub config_hash: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub final_step: u64,
    pub last_loss: f64,
    pub last_accuracy: Option<f64>,
    pub reports: Vec<TimingReport>,
    pub steps_per_second: f64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn metrics_line(
    step: u64,
    loss: Option<f64>,
    acc: Option<f64>,
    lr: f64,
    component_times: Option<[f64; 4]>,
) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("step".into(), serde_json::json!(step));
    obj.insert("loss".into(), serde_json::json!(loss));
    obj.insert("acc".into(), serde_json::json!(acc));
    obj.insert("lr".into(), serde_json::json!(lr));
    if let Some(ct) = component_times {
        obj.insert(
            "component_times".into(),
            serde_json::json!({
                "feature_extraction": ct[0],
                "transformer_encoding": ct[1],
                "loss_calculation": ct[2],
                "others": ct[3],
            }),
        );
    }
    serde_json::Value::Object(obj).to_string()
}

/// Validates the dataset/config pairing before the first step: labels exist,
/// can be decimated to the front-end rate, and align in length.
pub fn validate_alignment(model: &PretrainModel, dataset: &[TrainUtterance]) -> Result<()> {
    let frameshift = model.frontend.frameshift_ms();
    for utt in dataset {
        let labels = utt
            .labels
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("utterance {} has no labels", utt.utt_id)))?;
        let at_rate = crate::model::labels_at_frameshift(labels, frameshift)?;
        let latent = model.frontend.latent_len(utt).ok_or_else(|| {
            Error::Manifest(format!("utterance {} too short for the front-end", utt.utt_id))
        })?;
        let diff = latent.abs_diff(at_rate.len());
        if diff > 2 {
            return Err(Error::LengthMismatch { diff });
        }
    }
    Ok(())
}

pub fn run_pretrain(
    model: &mut PretrainModel,
    dataset: &[TrainUtterance],
    opts: &PretrainOptions,
    run_dir: &Path,
    rng: &mut Rng,
    adam: &mut Adam,
) -> Result<PretrainSummary> {
    if dataset.is_empty() {
        return Err(Error::Manifest("empty training set".into()));
    }
    if model.masking.span_start_prob <= 0.0 {
        return Err(Error::InvalidConfig(
            "masking.span_start_prob=0 guarantees an empty mask; pretraining needs masked frames"
                .into(),
        ));
    }
    validate_alignment(model, dataset)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut metrics: File = if opts.start_step == 0 {
        File::create(&metrics_path)
    } else {
        OpenOptions::new().append(true).create(true).open(&metrics_path)
    }
    .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    let durations: Vec<f64> = dataset.iter().map(|u| u.duration_s).collect();
    let batches = seconds_budget_batches(&durations, opts.batch_seconds);
    let mut prof = Profiler::new(opts.profiler_window);
    let mut reports = Vec::new();
    let mut last_loss = f64::NAN;
    let mut last_acc = None;
    let started = Instant::now();

    for step in opts.start_step + 1..=opts.steps {
        let lr = opts.schedule.lr_at(step);
        zero_grads(model);
        let mut total = LossValue {
            sum: 0.0,
            count: 0,
            correct: 0,
        };
        let mut tap_sum = 0.0;
        let mut backward_s = 0.0;
        let stage_before = prof.stage_seconds();
        for _ in 0..opts.update_frequency {
            let batch = &batches[rng.below(batches.len())];
            for &idx in batch.iter() {
                match model.train_utterance(&dataset[idx], rng, &mut prof) {
                    Ok(out) => {
                        total.sum += out.top.sum;
                        total.count += out.top.count;
                        total.correct += out.top.correct;
                        tap_sum += out.taps.iter().map(|(_, v)| v.sum).sum::<f64>();
                        backward_s += out.backward_seconds;
                    }
                    // A short utterance can draw zero span starts; it simply
                    // contributes nothing to this step.
                    Err(Error::EmptyMask) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        prof.record_extra("backward", backward_s);

        let opt_start = Instant::now();
        let (loss, acc) = if total.count > 0 {
            let inv = 1.0 / total.count as f64;
            model.visit_params("", &mut |_, p| {
                for g in &mut p.grad {
                    *g *= inv;
                }
            });
            adam.step(model, lr, &|_| false)?;
            (
                Some((total.sum + tap_sum) / total.count as f64),
                total.accuracy(),
            )
        } else {
            (None, None)
        };
        prof.record_extra("optimizer", opt_start.elapsed().as_secs_f64());

        let component_times = if opts.deterministic {
            None
        } else {
            let after = prof.stage_seconds();
            let mut delta = [0.0; 4];
            for i in 0..4 {
                delta[i] = after[i] - stage_before[i];
            }
            Some(delta)
        };
        let line = metrics_line(step, loss, acc, lr, component_times);
        writeln!(metrics, "{line}").map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        if let Some(l) = loss {
            last_loss = l;
            last_acc = acc;
        }
        if let Some(report) = prof.end_step() {
            reports.push(report);
        }
        if opts.checkpoint_interval > 0 && step % opts.checkpoint_interval == 0 && step < opts.steps
        {
            let path = run_dir.join(format!("checkpoint_{step}.ckpt"));
            save_checkpoint(
                &path,
                model,
                adam,
                rng,
                &CheckpointMeta {
                    step,
                    config_hash: opts.config_hash,
                },
            )?;
        }
    }
    // Close out a partial profiling window so short runs still report.
    if let Ok(report) = prof.snapshot() {
        reports.push(report);
    }
    if !reports.is_empty() && !opts.deterministic {
        let profile_json = serde_json::json!({
            "windows": reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        });
        let path = run_dir.join("profile.json");
        std::fs::write(&path, format!("{profile_json}\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let last = reports.last().expect("nonempty");
        let path = run_dir.join("profile.txt");
        std::fs::write(&path, last.render_table(None, "this run"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ran_steps = opts.steps.saturating_sub(opts.start_step);
    let checkpoint_path = run_dir.join("model.ckpt");
    save_checkpoint(
        &checkpoint_path,
        model,
        adam,
        rng,
        &CheckpointMeta {
            step: opts.steps,
            config_hash: opts.config_hash,
        },
    )?;
    Ok(PretrainSummary {
        final_step: opts.steps,
        last_loss,
        last_accuracy: last_acc,
        reports,
        steps_per_second: if elapsed > 0.0 {
            ran_steps as f64 / elapsed
        } else {
            0.0
        },
        metrics_path,
        checkpoint_path,
    })
}
