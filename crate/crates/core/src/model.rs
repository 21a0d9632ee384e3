//! Assembled models: the masked-prediction pretraining model and the CTC
//! fine-tuning model, with the profiled four-stage forward pass.

use crate::audio::Waveform;
use crate::ctc;
use crate::encoder::{EncoderOutput, TransformerEncoder};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::frontends::{FbankDownsampler, WaveformEncoder};
use crate::labels::{resample_labels, LabelSequence};
use crate::losses::{LossValue, PretrainObjective};
use crate::mat::Mat;
use crate::masking::{
    apply_post_mask, apply_pre_mask, post_mask_backward, project_mask, sample_mask_plan,
    MaskEmbedding, MaskPlan,
};
use crate::nn::linear::Linear;
use crate::nn::param::{join, Param, Parameterized};
use crate::profiler::{Profiler, Stage};
use crate::rng::Rng;

/// Where masking happens: on the spectrogram before the downsampler, or on
/// latent features after the front-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPlacement {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy)]
pub struct MaskingSettings {
    pub placement: MaskPlacement,
    pub span_start_prob: f64,
    pub span_len: usize,
}

/// One utterance of training data, loaded up front.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub utt_id: String,
    pub duration_s: f64,
    /// Raw audio (waveform front-end).
    pub wave: Option<Waveform>,
    /// CMVN-normalized Fbank at the 10 ms base rate (Fbank front-end).
    pub fbank: Option<FeatureSequence>,
    /// Frame labels at their native rate, decimated to the front-end rate
    /// during training (pretraining).
    pub labels: Option<LabelSequence>,
    /// Token targets (fine-tuning).
    pub target: Option<Vec<u32>>,
    /// Reference transcript (scoring).
    pub text: Option<String>,
}

/// Either front-end behind one interface.
#[derive(Debug, Clone)]
pub enum Frontend {
    Waveform(WaveformEncoder),
    Fbank(FbankDownsampler),
}

impl Frontend {
    pub fn output_dim(&self) -> usize {
        match self {
            Frontend::Waveform(f) => f.output_dim(),
            Frontend::Fbank(f) => f.output_dim(),
        }
    }

    pub fn frameshift_ms(&self) -> u32 {
        match self {
            Frontend::Waveform(_) => 20,
            Frontend::Fbank(f) => f.cfg.target_frameshift_ms,
        }
    }

    pub fn backward(&mut self, upstream: &Mat) -> Result<()> {
        match self {
            Frontend::Waveform(f) => f.backward(upstream),
            Frontend::Fbank(f) => f.backward(upstream),
        }
    }

    /// Latent sequence length for an utterance, from the length formulas.
    pub fn latent_len(&self, utt: &TrainUtterance) -> Option<usize> {
        match self {
            Frontend::Waveform(f) => utt.wave.as_ref().and_then(|w| f.cfg.out_len(w.len())),
            Frontend::Fbank(f) => utt
                .fbank
                .as_ref()
                .and_then(|fb| f.cfg.out_len(fb.num_frames())),
        }
    }
}

impl Parameterized for Frontend {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Frontend::Waveform(fe) => fe.visit_params(prefix, f),
            Frontend::Fbank(fe) => fe.visit_params(prefix, f),
        }
    }
}

/// Coarsens labels to the front-end frameshift by stride decimation. The
/// target rate must be a power-of-two multiple of the label rate.
pub fn labels_at_frameshift(labels: &LabelSequence, frameshift_ms: u32) -> Result<LabelSequence> {
    if labels.frameshift_ms == frameshift_ms {
        return Ok(labels.clone());
    }
    if frameshift_ms % labels.frameshift_ms != 0 {
        return Err(Error::InvalidConfig(format!(
            "cannot align {} ms labels to a {} ms feature stream",
            labels.frameshift_ms, frameshift_ms
        )));
    }
    Ok(match frameshift_ms / labels.frameshift_ms {
        2 => resample_labels(labels, 2),
        4 => resample_labels(labels, 4),
        8 => resample_labels(&resample_labels(labels, 2), 4),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unsupported label decimation factor {other}"
            )))
        }
    })
}

const MAX_LENGTH_MISMATCH: usize = 2;

fn truncate_rows(m: &Mat, rows: usize) -> Mat {
    Mat::from_fn(rows, m.cols(), |r, c| m.at(r, c))
}

/// Trims features and labels to their common length; a gap above two frames
/// means the streams are misaligned and is an error.
fn common_length(feature_len: usize, label_len: usize) -> Result<usize> {
    let diff = feature_len.abs_diff(label_len);
    if diff > MAX_LENGTH_MISMATCH {
        return Err(Error::LengthMismatch { diff });
    }
    Ok(feature_len.min(label_len))
}

/// Per-utterance pretraining result; loss values are sums so the caller can
/// weight across a batch exactly.
#[derive(Debug, Clone)]
pub struct UtteranceOutcome {
    pub top: LossValue,
    pub taps: Vec<(usize, LossValue)>,
    /// Wall-clock spent in the backward pass, reported to the profiler
    /// outside the four-way forward breakdown.
    pub backward_seconds: f64,
}

#[derive(Debug)]
pub struct PretrainModel {
    pub frontend: Frontend,
    pub mask_emb: MaskEmbedding,
    pub encoder: TransformerEncoder,
    pub objective: PretrainObjective,
    pub masking: MaskingSettings,
}

impl Parameterized for PretrainModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.frontend.visit_params(&join(prefix, "frontend"), f);
        self.mask_emb.visit_params(&join(prefix, "mask_emb"), f);
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.objective.visit_params(&join(prefix, "objective"), f);
    }
}

impl PretrainModel {
    /// Forward + backward for one utterance, accumulating parameter
    /// gradients of the un-normalized loss sum. The caller rescales
    /// gradients once the batch's masked-frame total is known.
    pub fn train_utterance(
        &mut self,
        utt: &TrainUtterance,
        rng: &mut Rng,
        prof: &mut Profiler,
    ) -> Result<UtteranceOutcome> {
        let labels_base = utt
            .labels
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("utterance {} has no labels", utt.utt_id)))?;
        let frameshift = self.frontend.frameshift_ms();
        let labels = labels_at_frameshift(labels_base, frameshift)?;

        let (latent, plan, labels) = match (&mut self.frontend, self.masking.placement) {
            (Frontend::Waveform(fe), MaskPlacement::Post) => {
                let wave = utt.wave.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no audio loaded", utt.utt_id))
                })?;
                let latent = prof.scope(Stage::FeatureExtraction, || fe.forward(wave))??;
                prof.scope(Stage::Others, || -> Result<_> {
                    let t = common_length(latent.num_frames(), labels.len())?;
                    let latent = FeatureSequence::new(
                        truncate_rows(&latent.frames, t),
                        latent.frameshift_ms,
                        latent.kind,
                    );
                    let plan = sample_mask_plan(
                        t,
                        self.masking.span_start_prob,
                        self.masking.span_len,
                        rng,
                    );
                    let masked = apply_post_mask(&latent, &plan, &self.mask_emb)?;
                    let labels = LabelSequence {
                        ids: labels.ids[..t].to_vec(),
                        ..labels.clone()
                    };
                    Ok((masked, plan, labels))
                })??
            }
            (Frontend::Fbank(fe), MaskPlacement::Pre) => {
                let fbank = utt.fbank.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no features loaded", utt.utt_id))
                })?;
                let plan10 = prof.scope(Stage::Others, || {
                    sample_mask_plan(
                        fbank.num_frames(),
                        self.masking.span_start_prob,
                        self.masking.span_len,
                        rng,
                    )
                })?;
                let masked10 = prof.scope(Stage::Others, || apply_pre_mask(fbank, &plan10, 0.0))??;
                let latent = prof.scope(Stage::FeatureExtraction, || fe.forward(&masked10))??;
                prof.scope(Stage::Others, || -> Result<_> {
                    let t = common_length(latent.num_frames(), labels.len())?;
                    let latent = FeatureSequence::new(
                        truncate_rows(&latent.frames, t),
                        latent.frameshift_ms,
                        latent.kind,
                    );
                    let factor = (frameshift / 10) as usize;
                    let plan = project_mask(&plan10, factor, t);
                    let labels = LabelSequence {
                        ids: labels.ids[..t].to_vec(),
                        ..labels.clone()
                    };
                    Ok((latent, plan, labels))
                })??
            }
            (Frontend::Fbank(fe), MaskPlacement::Post) => {
                let fbank = utt.fbank.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no features loaded", utt.utt_id))
                })?;
                let latent = prof.scope(Stage::FeatureExtraction, || fe.forward(fbank))??;
                prof.scope(Stage::Others, || -> Result<_> {
                    let t = common_length(latent.num_frames(), labels.len())?;
                    let latent = FeatureSequence::new(
                        truncate_rows(&latent.frames, t),
                        latent.frameshift_ms,
                        latent.kind,
                    );
                    let plan = sample_mask_plan(
                        t,
                        self.masking.span_start_prob,
                        self.masking.span_len,
                        rng,
                    );
                    let masked = apply_post_mask(&latent, &plan, &self.mask_emb)?;
                    let labels = LabelSequence {
                        ids: labels.ids[..t].to_vec(),
                        ..labels.clone()
                    };
                    Ok((masked, plan, labels))
                })??
            }
            (Frontend::Waveform(_), MaskPlacement::Pre) => {
                return Err(Error::InvalidConfig(
                    "pre-masking needs the Fbank front-end; the waveform encoder has no spectrogram to mask".into(),
                ));
            }
        };

        let outputs = prof.scope(Stage::TransformerEncoding, || self.encoder.forward(&latent))??;
        let outcome = prof.scope(Stage::LossCalculation, || {
            self.objective.forward(&outputs, &plan, &labels)
        })??;

        // Backward: gradient of the loss sum (scale 1); excluded from the
        // four-way forward breakdown.
        let backward_start = std::time::Instant::now();
        let (d_top, d_taps) = self.objective.backward(1.0)?;
        let d_in = self.encoder.backward(&d_top, &d_taps)?;
        let d_frontend = match self.masking.placement {
            MaskPlacement::Post => post_mask_backward(&plan, &d_in, &mut self.mask_emb),
            MaskPlacement::Pre => d_in,
        };
        let orig_len = match &self.frontend {
            Frontend::Waveform(fe) => utt
                .wave
                .as_ref()
                .and_then(|w| fe.cfg.out_len(w.len()))
                .unwrap_or(d_frontend.rows()),
            Frontend::Fbank(fe) => utt
                .fbank
                .as_ref()
                .and_then(|f| fe.cfg.out_len(f.num_frames()))
                .unwrap_or(d_frontend.rows()),
        };
        let padded = if orig_len == d_frontend.rows() {
            d_frontend
        } else {
            // Trimmed trailing frames never reached the loss: zero gradient.
            let mut m = Mat::zeros(orig_len, d_frontend.cols());
            for r in 0..d_frontend.rows() {
                m.row_mut(r).copy_from_slice(d_frontend.row(r));
            }
            m
        };
        self.frontend.backward(&padded)?;

        Ok(UtteranceOutcome {
            top: outcome.top_value,
            taps: outcome.tap_values,
            backward_seconds: backward_start.elapsed().as_secs_f64(),
        })
    }

    /// Mask-free forward, for latent extraction and evaluation.
    pub fn encode_utterance(&mut self, utt: &TrainUtterance) -> Result<EncoderOutput> {
        let latent = self.frontend_forward(utt)?;
        self.encoder.forward(&latent)
    }

    fn frontend_forward(&mut self, utt: &TrainUtterance) -> Result<FeatureSequence> {
        match &mut self.frontend {
            Frontend::Waveform(fe) => {
                let wave = utt.wave.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no audio loaded", utt.utt_id))
                })?;
                fe.forward(wave)
            }
            Frontend::Fbank(fe) => {
                let fbank = utt.fbank.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no features loaded", utt.utt_id))
                })?;
                fe.forward(fbank)
            }
        }
    }
}

/// Outcome of one fine-tuning utterance.
#[derive(Debug, Clone)]
pub enum CtcStep {
    /// Loss value; gradients were accumulated.
    Loss(f64),
    /// The length guard rejected the pairing; nothing was accumulated.
    GuardViolation { frames: usize, required: usize },
}

#[derive(Debug)]
pub struct FinetuneModel {
    pub frontend: Frontend,
    pub mask_emb: MaskEmbedding,
    pub encoder: TransformerEncoder,
    /// Output projection onto V+1 token logits (blank at 0).
    pub ctc_head: Linear,
    pub masking: MaskingSettings,
    /// Plan of the latest augmentation mask, for gradient routing.
    last_plan: Option<MaskPlan>,
}

pub const CTC_HEAD_PREFIX: &str = "ctc_head";

impl Parameterized for FinetuneModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.frontend.visit_params(&join(prefix, "frontend"), f);
        self.mask_emb.visit_params(&join(prefix, "mask_emb"), f);
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.ctc_head.visit_params(&join(prefix, CTC_HEAD_PREFIX), f);
    }
}

impl FinetuneModel {
    /// Reuses a pretrained trunk and adds a fresh CTC projection.
    pub fn from_pretrained(pm: PretrainModel, vocab_with_blank: usize, rng: &mut Rng) -> Self {
        let model_dim = pm.encoder.cfg.model_dim;
        FinetuneModel {
            frontend: pm.frontend,
            mask_emb: pm.mask_emb,
            encoder: pm.encoder,
            ctc_head: Linear::new(model_dim, vocab_with_blank, true, rng),
            masking: pm.masking,
            last_plan: None,
        }
    }

    fn frontend_forward(
        &mut self,
        utt: &TrainUtterance,
        augment: bool,
        rng: &mut Rng,
    ) -> Result<FeatureSequence> {
        match (&mut self.frontend, self.masking.placement) {
            (Frontend::Waveform(fe), _) => {
                let wave = utt.wave.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no audio loaded", utt.utt_id))
                })?;
                let latent = fe.forward(wave)?;
                if augment && self.masking.span_start_prob > 0.0 {
                    let plan = sample_mask_plan(
                        latent.num_frames(),
                        self.masking.span_start_prob,
                        self.masking.span_len,
                        rng,
                    );
                    self.last_plan = Some(plan.clone());
                    apply_post_mask(&latent, &plan, &self.mask_emb)
                } else {
                    self.last_plan = None;
                    Ok(latent)
                }
            }
            (Frontend::Fbank(fe), _) => {
                let fbank = utt.fbank.as_ref().ok_or_else(|| {
                    Error::Manifest(format!("utterance {} has no features loaded", utt.utt_id))
                })?;
                if augment && self.masking.span_start_prob > 0.0 {
                    let plan = sample_mask_plan(
                        fbank.num_frames(),
                        self.masking.span_start_prob,
                        self.masking.span_len,
                        rng,
                    );
                    let masked = apply_pre_mask(fbank, &plan, 0.0)?;
                    self.last_plan = None;
                    fe.forward(&masked)
                } else {
                    self.last_plan = None;
                    fe.forward(fbank)
                }
            }
        }
    }

    /// Forward + backward on one utterance; accumulates gradients of the
    /// per-utterance CTC loss (the caller averages over the batch).
    pub fn train_utterance(&mut self, utt: &TrainUtterance, rng: &mut Rng) -> Result<CtcStep> {
        let target = utt.target.as_ref().ok_or_else(|| {
            Error::Manifest(format!("utterance {} has no token targets", utt.utt_id))
        })?;
        let latent = self.frontend_forward(utt, true, rng)?;
        let t_frames = latent.num_frames();
        if let Err(Error::CtcGuard { frames, required }) = ctc::length_guard(t_frames, target) {
            self.last_plan = None;
            return Ok(CtcStep::GuardViolation { frames, required });
        }
        let outputs = self.encoder.forward(&latent)?;
        let logits = self.ctc_head.forward(&outputs.top);
        let (loss, d_logits) = ctc::ctc_loss(&logits, target)?;
        let d_top = self.ctc_head.backward(&d_logits);
        let d_in = self.encoder.backward(&d_top, &[])?;
        let d_frontend = match (&self.masking.placement, self.last_plan.take()) {
            (MaskPlacement::Post, Some(plan)) => post_mask_backward(&plan, &d_in, &mut self.mask_emb),
            _ => d_in,
        };
        self.frontend.backward(&d_frontend)?;
        Ok(CtcStep::Loss(loss))
    }

    /// Mask-free decode.
    pub fn decode_utterance(&mut self, utt: &TrainUtterance, beam: usize) -> Result<Vec<u32>> {
        let mut rng = Rng::seed_from(0); // unused: augmentation off
        let latent = self.frontend_forward(utt, false, &mut rng)?;
        let outputs = self.encoder.forward(&latent)?;
        let logits = self.ctc_head.forward(&outputs.top);
        Ok(ctc::viterbi_decode(&logits, beam))
    }
}

// Plan cache for routing the post-mask gradient during fine-tuning.
impl FinetuneModel {
    pub fn frameshift_ms(&self) -> u32 {
        self.frontend.frameshift_ms()
    }
}

/// Builds a latent FeatureSequence view of one encoder tap, for iteration-2
/// clustering on hidden features.
pub fn tap_as_features(output: &EncoderOutput, layer: usize, frameshift_ms: u32) -> Option<FeatureSequence> {
    if layer == 0 {
        return Some(FeatureSequence::new(
            output.top.clone(),
            frameshift_ms,
            FeatureKind::Latent,
        ));
    }
    output
        .taps
        .iter()
        .find(|(l, _)| *l == layer)
        .map(|(_, h)| FeatureSequence::new(h.clone(), frameshift_ms, FeatureKind::Latent))
}
