//! Interchangeable front-ends: the 7-layer waveform convolutional encoder
//! and the conv+GLU Fbank downsampler that coarsens 10 ms features to
//! 20/40/80 ms frameshifts.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::mat::Mat;
use crate::nn::act::{gelu_backward_mat, gelu_mat, glu_backward, glu_forward};
use crate::nn::conv::Conv1d;
use crate::nn::param::{join, Param, Parameterized};
use crate::rng::Rng;

/// One convolutional layer spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Geometry of the waveform encoder. The stride product must map 16 kHz
/// samples onto a 20 ms frameshift (product 320).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveformEncoderConfig {
    pub layers: Vec<ConvSpec>,
}

pub const WAVEFORM_KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
pub const WAVEFORM_STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

impl WaveformEncoderConfig {
    /// The standard 7-layer geometry at a uniform channel width.
    pub fn with_channels(channels: usize) -> Self {
        let layers = WAVEFORM_KERNELS
            .iter()
            .zip(WAVEFORM_STRIDES.iter())
            .map(|(&kernel, &stride)| ConvSpec {
                channels,
                kernel,
                stride,
            })
            .collect();
        WaveformEncoderConfig { layers }
    }

    /// Full-width reference geometry (512 channels).
    pub fn standard() -> Self {
        Self::with_channels(512)
    }

    pub fn validate(&self) -> Result<()> {
        let stride_product: usize = self.layers.iter().map(|l| l.stride).product();
        if stride_product != 320 {
            return Err(Error::InvalidConfig(format!(
                "waveform encoder stride product {stride_product} does not give a 20 ms frameshift at 16 kHz (need 320)"
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.channels).unwrap_or(0)
    }

    /// Output length after composing every layer's floor length formula.
    pub fn out_len(&self, samples: usize) -> Option<usize> {
        let mut t = samples;
        for l in &self.layers {
            if t < l.kernel {
                return None;
            }
            t = (t - l.kernel) / l.stride + 1;
        }
        Some(t)
    }
}

/// Waveform convolutional encoder: strided Conv1d + GELU per layer,
/// emitting latent features at a 20 ms frameshift.
#[derive(Debug, Clone)]
pub struct WaveformEncoder {
    pub cfg: WaveformEncoderConfig,
    convs: Vec<Conv1d>,
    pre_acts: Vec<Mat>,
}

impl WaveformEncoder {
    pub fn new(cfg: WaveformEncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::with_capacity(cfg.layers.len());
        let mut in_ch = 1;
        for spec in &cfg.layers {
            convs.push(Conv1d::new(in_ch, spec.channels, spec.kernel, spec.stride, rng));
            in_ch = spec.channels;
        }
        Ok(WaveformEncoder {
            cfg,
            convs,
            pre_acts: Vec::new(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.output_dim()
    }

    pub fn forward(&mut self, w: &Waveform) -> Result<FeatureSequence> {
        if self.cfg.out_len(w.len()).is_none() {
            return Err(Error::InputTooShortForReceptiveField);
        }
        let mut x = Mat::from_vec(w.len(), 1, w.samples.clone());
        self.pre_acts.clear();
        for conv in &mut self.convs {
            let pre = conv.forward(&x)?;
            x = gelu_mat(&pre);
            self.pre_acts.push(pre);
        }
        Ok(FeatureSequence::new(x, 20, FeatureKind::Latent))
    }

    /// Backpropagates into conv parameters; the gradient w.r.t. the raw
    /// waveform is discarded.
    pub fn backward(&mut self, upstream: &Mat) -> Result<()> {
        if self.pre_acts.len() != self.convs.len() {
            return Err(Error::NoForwardPass);
        }
        let mut grad = upstream.clone();
        for (conv, pre) in self.convs.iter_mut().zip(self.pre_acts.iter()).rev() {
            let d_pre = gelu_backward_mat(pre, &grad);
            grad = conv.backward(&d_pre)?;
        }
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        self.pre_acts.clear();
        for c in &mut self.convs {
            c.clear_cache();
        }
    }
}

impl Parameterized for WaveformEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Geometry of the Fbank downsampler: one stride-2 conv+GLU layer per
/// factor-of-two reduction from the 10 ms base rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownsamplerConfig {
    pub target_frameshift_ms: u32,
    /// Post-GLU channel count; the conv emits twice this many.
    pub channels: usize,
    pub input_dim: usize,
}

impl DownsamplerConfig {
    pub fn new(target_frameshift_ms: u32, channels: usize, input_dim: usize) -> Result<Self> {
        if !matches!(target_frameshift_ms, 20 | 40 | 80) {
            return Err(Error::InvalidConfig(format!(
                "downsampler target frameshift must be 20, 40, or 80 ms, got {target_frameshift_ms}"
            )));
        }
        Ok(DownsamplerConfig {
            target_frameshift_ms,
            channels,
            input_dim,
        })
    }

    pub fn num_layers(&self) -> usize {
        match self.target_frameshift_ms {
            20 => 1,
            40 => 2,
            80 => 3,
            _ => unreachable!(),
        }
    }

    pub fn out_len(&self, t_in: usize) -> Option<usize> {
        let mut t = t_in;
        for _ in 0..self.num_layers() {
            if t < 2 {
                return None;
            }
            t = (t - 2) / 2 + 1;
        }
        Some(t)
    }
}

/// Conv+GLU downsampling stack over offline Fbank features. Every conv emits
/// 2k channels which the GLU gates down to k.
#[derive(Debug, Clone)]
pub struct FbankDownsampler {
    pub cfg: DownsamplerConfig,
    convs: Vec<Conv1d>,
    pre_glu: Vec<Mat>,
}

impl FbankDownsampler {
    pub fn new(cfg: DownsamplerConfig, rng: &mut Rng) -> Self {
        let mut convs = Vec::with_capacity(cfg.num_layers());
        let mut in_ch = cfg.input_dim;
        for _ in 0..cfg.num_layers() {
            convs.push(Conv1d::new(in_ch, cfg.channels * 2, 2, 2, rng));
            in_ch = cfg.channels;
        }
        FbankDownsampler {
            cfg,
            convs,
            pre_glu: Vec::new(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.channels
    }

    pub fn forward(&mut self, f: &FeatureSequence) -> Result<FeatureSequence> {
        if f.frameshift_ms != 10 || f.kind != FeatureKind::Fbank {
            return Err(Error::NotBaseRateFbank);
        }
        if f.dim() != self.cfg.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.input_dim,
                got: f.dim(),
            });
        }
        if self.cfg.out_len(f.num_frames()).is_none() {
            return Err(Error::InputTooShortForReceptiveField);
        }
        let mut x = f.frames.clone();
        self.pre_glu.clear();
        for conv in &mut self.convs {
            let pre = conv.forward(&x)?;
            x = glu_forward(&pre);
            self.pre_glu.push(pre);
        }
        Ok(FeatureSequence::new(
            x,
            self.cfg.target_frameshift_ms,
            FeatureKind::Latent,
        ))
    }

    pub fn backward(&mut self, upstream: &Mat) -> Result<()> {
        if self.pre_glu.len() != self.convs.len() {
            return Err(Error::NoForwardPass);
        }
        let mut grad = upstream.clone();
        for (conv, pre) in self.convs.iter_mut().zip(self.pre_glu.iter()).rev() {
            let d_pre = glu_backward(pre, &grad);
            grad = conv.backward(&d_pre)?;
        }
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        self.pre_glu.clear();
        for c in &mut self.convs {
            c.clear_cache();
        }
    }
}

impl Parameterized for FbankDownsampler {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_49_frames() {
        let cfg = WaveformEncoderConfig::with_channels(8);
        // Compose the floor formulas layer by layer as an oracle.
        let mut t = 16_000usize;
        for (k, s) in WAVEFORM_KERNELS.iter().zip(WAVEFORM_STRIDES.iter()) {
            t = (t - k) / s + 1;
        }
        assert_eq!(t, 49);
        assert_eq!(cfg.out_len(16_000), Some(49));
    }

    #[test]
    fn doubling_input_roughly_doubles_output() {
        let cfg = WaveformEncoderConfig::with_channels(4);
        for &n in &[16_000usize, 24_000, 40_000, 64_000] {
            let a = cfg.out_len(n).unwrap() as i64;
            let b = cfg.out_len(2 * n).unwrap() as i64;
            assert!((b - 2 * a).abs() <= 1, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_waveform_zero_biases_gives_zero_output() {
        let mut rng = Rng::seed_from(1);
        let mut enc = WaveformEncoder::new(WaveformEncoderConfig::with_channels(4), &mut rng).unwrap();
        let w = Waveform::new(vec![0.0; 16_000], 16_000);
        let out = enc.forward(&w).unwrap();
        assert_eq!(out.frameshift_ms, 20);
        assert!(out.frames.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_waveform_errors() {
        let mut rng = Rng::seed_from(2);
        let mut enc = WaveformEncoder::new(WaveformEncoderConfig::with_channels(4), &mut rng).unwrap();
        let w = Waveform::new(vec![0.1; 300], 16_000);
        assert!(matches!(
            enc.forward(&w),
            Err(Error::InputTooShortForReceptiveField)
        ));
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut rng = Rng::seed_from(3);
        let mut enc = WaveformEncoder::new(WaveformEncoderConfig::with_channels(4), &mut rng).unwrap();
        assert!(matches!(
            enc.backward(&Mat::zeros(1, 4)),
            Err(Error::NoForwardPass)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::seed_from(4);
        let mut enc = WaveformEncoder::new(WaveformEncoderConfig::with_channels(4), &mut rng).unwrap();
        let w = Waveform::new((0..16_000).map(|i| (i as f64 * 0.003).sin()).collect(), 16_000);
        let out = enc.forward(&w).unwrap();
        enc.backward(&Mat::zeros(out.num_frames(), 4)).unwrap();
        enc.visit_params("", &mut |_, p| {
            assert!(p.grad.iter().all(|&g| g == 0.0));
        });
    }

    fn fbank_seq(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(
            Mat::from_fn(t, d, |r, c| ((r * d + c) as f64 * 0.17).sin()),
            10,
            FeatureKind::Fbank,
        )
    }

    #[test]
    fn downsampler_lengths_match_formula() {
        let mut rng = Rng::seed_from(5);
        for (target, expect) in [(20u32, 50usize), (40, 25), (80, 12)] {
            let cfg = DownsamplerConfig::new(target, 6, 8).unwrap();
            assert_eq!(cfg.out_len(100), Some(expect), "target {target}");
            let mut ds = FbankDownsampler::new(cfg, &mut rng);
            let out = ds.forward(&fbank_seq(100, 8)).unwrap();
            assert_eq!(out.num_frames(), expect);
            assert_eq!(out.frameshift_ms, target);
            assert_eq!(out.dim(), 6);
        }
    }

    #[test]
    fn downsampler_rejects_non_base_rate() {
        let mut rng = Rng::seed_from(6);
        let cfg = DownsamplerConfig::new(20, 6, 8).unwrap();
        let mut ds = FbankDownsampler::new(cfg, &mut rng);
        let mut f = fbank_seq(50, 8);
        f.frameshift_ms = 20;
        assert!(matches!(ds.forward(&f), Err(Error::NotBaseRateFbank)));
    }

    #[test]
    fn glu_passthrough_with_saturated_gate() {
        // Build a single-layer downsampler whose conv copies the first frame
        // of each window into the linear half and saturates the gate half.
        let mut rng = Rng::seed_from(7);
        let d = 5usize;
        let cfg = DownsamplerConfig::new(20, d, d).unwrap();
        let mut ds = FbankDownsampler::new(cfg, &mut rng);
        ds.visit_params("", &mut |name, p| {
            if name.ends_with("weight") {
                // weight[o][i][k], o in 0..2d, i in 0..d, k in 0..2
                for v in p.value.iter_mut() {
                    *v = 0.0;
                }
                for o in 0..d {
                    p.value[o * (d * 2) + o * 2] = 1.0; // linear half: copy k=0
                }
            } else {
                for (o, v) in p.value.iter_mut().enumerate() {
                    *v = if o >= d { 50.0 } else { 0.0 }; // gate half saturated
                }
            }
        });
        let f = fbank_seq(10, d);
        let out = ds.forward(&f).unwrap();
        for t in 0..out.num_frames() {
            for c in 0..d {
                assert!(
                    (out.frames.at(t, c) - f.frames.at(2 * t, c)).abs() < 1e-9,
                    "({t},{c})"
                );
            }
        }
    }

    #[test]
    fn frameshift_arithmetic_covers_duration() {
        // output_T × frameshift stays within one output frame of the input duration
        let mut t_in = 1000usize; // 10 s at 10 ms
        for target in [20u32, 40, 80] {
            let cfg = DownsamplerConfig::new(target, 4, 8).unwrap();
            let t_out = cfg.out_len(t_in).unwrap();
            let covered_ms = t_out as u64 * target as u64;
            let input_ms = t_in as u64 * 10;
            assert!(input_ms as i64 - covered_ms as i64 <= target as i64, "target {target}");
        }
        t_in = 999;
        let cfg = WaveformEncoderConfig::with_channels(4);
        let t_out = cfg.out_len(t_in * 160).unwrap(); // samples
        let covered_ms = t_out as i64 * 20;
        let input_ms = (t_in * 10) as i64;
        assert!(input_ms - covered_ms <= 20 + 25); // one frame + window remainder
    }
}

#[cfg(test)]
mod contract_tests {
    use super::*;
    use crate::dsp;

    #[test]
    fn wrong_stride_product_is_rejected() {
        let mut cfg = WaveformEncoderConfig::with_channels(4);
        cfg.layers[0].stride = 4; // product no longer 320
        assert!(cfg.validate().is_err());
        let mut rng = Rng::seed_from(1);
        assert!(WaveformEncoder::new(cfg, &mut rng).is_err());
    }

    #[test]
    fn both_frontends_agree_on_20ms_sequence_length() {
        // Swapping the waveform encoder for fbank + one downsampling layer
        // must keep the label-stream contract: lengths within one frame.
        let wave_cfg = WaveformEncoderConfig::with_channels(4);
        let ds_cfg = DownsamplerConfig::new(20, 8, 80).unwrap();
        let dsp_cfg = dsp::DspConfig::default();
        for ms in [400usize, 730, 1000, 1530, 2000, 3210] {
            let samples = 16 * ms;
            let wave_len = wave_cfg.out_len(samples).unwrap();
            let fbank_len =
                dsp::frame_count(samples, dsp_cfg.window_samples(), dsp_cfg.hop_samples()).unwrap();
            let ds_len = ds_cfg.out_len(fbank_len).unwrap();
            assert!(
                wave_len.abs_diff(ds_len) <= 1,
                "{ms} ms: {wave_len} vs {ds_len}"
            );
        }
    }
}
