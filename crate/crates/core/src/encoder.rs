//! Pre-LN transformer encoder with configurable intermediate-layer taps.

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::mat::Mat;
use crate::nn::act::{gelu_backward_mat, gelu_mat};
use crate::nn::attention::MultiHeadAttention;
use crate::nn::linear::Linear;
use crate::nn::norm::LayerNorm;
use crate::nn::param::{join, Param, Parameterized};
use crate::profiler::OpCounts;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// 1-based indices of layers whose hidden states are tapped for
    /// intermediate-layer supervision.
    pub ils_layers: Vec<usize>,
    /// Additive sinusoidal position information. Disabled only in tests that
    /// check permutation equivariance.
    pub use_positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 4,
            model_dim: 64,
            num_heads: 4,
            ffn_dim: 256,
            ils_layers: Vec::new(),
            use_positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        for &l in &self.ils_layers {
            if l < 1 || l > self.num_layers {
                return Err(Error::InvalidConfig(format!(
                    "ils layer {l} outside 1..={}",
                    self.num_layers
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer hidden sequences: the top of the stack plus any tapped layers.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub top: Mat,
    /// (1-based layer index, hidden state after that layer).
    pub taps: Vec<(usize, Mat)>,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    ffn_pre: Option<Mat>,
}

impl EncoderLayer {
    fn new(dim: usize, heads: usize, ffn_dim: usize, rng: &mut Rng) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ffn1: Linear::new(dim, ffn_dim, true, rng),
            ffn2: Linear::new(ffn_dim, dim, true, rng),
            ffn_pre: None,
        }
    }

    fn forward(&mut self, x: &Mat) -> Mat {
        let mut h = x.clone();
        h.add_assign(&self.attn.forward(&self.ln1.forward(x)));
        let pre = self.ffn1.forward(&self.ln2.forward(&h));
        let mid = gelu_mat(&pre);
        let mut out = h;
        out.add_assign(&self.ffn2.forward(&mid));
        self.ffn_pre = Some(pre);
        out
    }

    fn backward(&mut self, d_out: &Mat) -> Mat {
        let pre = self.ffn_pre.as_ref().expect("layer backward without forward");
        let d_mid = self.ffn2.backward(d_out);
        let d_pre = gelu_backward_mat(pre, &d_mid);
        let mut d_h = self.ln2.backward(&self.ffn1.backward(&d_pre));
        d_h.add_assign(d_out);
        let d_attn_in = self.attn.backward(&d_h);
        let mut d_x = self.ln1.backward(&d_attn_in);
        d_x.add_assign(&d_h);
        d_x
    }

    fn clear_cache(&mut self) {
        self.ln1.clear_cache();
        self.attn.clear_cache();
        self.ln2.clear_cache();
        self.ffn1.clear_cache();
        self.ffn2.clear_cache();
        self.ffn_pre = None;
    }
}

impl Parameterized for EncoderLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
        self.ffn1.visit_params(&join(prefix, "ffn1"), f);
        self.ffn2.visit_params(&join(prefix, "ffn2"), f);
    }
}

/// Fixed sinusoidal positional encoding.
pub fn sinusoidal_positions(t_len: usize, dim: usize) -> Mat {
    Mat::from_fn(t_len, dim, |t, c| {
        let i = (c / 2) as f64;
        let rate = (10_000f64).powf(2.0 * i / dim as f64);
        let angle = t as f64 / rate;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub cfg: EncoderConfig,
    input_proj: Option<Linear>,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
    counts: OpCounts,
}

impl TransformerEncoder {
    pub fn new(cfg: EncoderConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let input_proj = (input_dim != cfg.model_dim)
            .then(|| Linear::new(input_dim, cfg.model_dim, true, rng));
        let layers = (0..cfg.num_layers)
            .map(|_| EncoderLayer::new(cfg.model_dim, cfg.num_heads, cfg.ffn_dim, rng))
            .collect();
        Ok(TransformerEncoder {
            final_ln: LayerNorm::new(cfg.model_dim),
            input_proj,
            layers,
            cfg,
            counts: OpCounts::default(),
        })
    }

    pub fn forward(&mut self, f: &FeatureSequence) -> Result<EncoderOutput> {
        f.check_finite()?;
        let t_len = f.num_frames();
        let d = self.cfg.model_dim;
        let mut x = match &mut self.input_proj {
            Some(proj) => proj.forward(&f.frames),
            None => {
                if f.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: f.dim(),
                    });
                }
                f.frames.clone()
            }
        };
        if self.cfg.use_positional {
            x.add_assign(&sinusoidal_positions(t_len, d));
        }
        // Operation counters: 4·T²·D per layer for the two T×T matmuls, plus
        // the per-position linear maps.
        let t64 = t_len as u64;
        let d64 = d as u64;
        let ffn64 = self.cfg.ffn_dim as u64;
        self.counts = OpCounts {
            attn_flops: self.cfg.num_layers as u64 * 4 * t64 * t64 * d64,
            linear_flops: self.cfg.num_layers as u64 * (8 * t64 * d64 * d64 + 4 * t64 * d64 * ffn64),
        };
        let mut taps = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(&x);
            if self.cfg.ils_layers.contains(&(i + 1)) {
                taps.push((i + 1, x.clone()));
            }
        }
        let top = self.final_ln.forward(&x);
        Ok(EncoderOutput { top, taps })
    }

    /// Backward through the stack given the gradient on the top output and on
    /// each tapped layer. Returns the gradient w.r.t. the encoder input.
    pub fn backward(&mut self, d_top: &Mat, d_taps: &[(usize, Mat)]) -> Result<Mat> {
        if !self.final_ln.has_cache() {
            return Err(Error::NoForwardPass);
        }
        let mut grad = self.final_ln.backward(d_top);
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            for (tap_layer, d_tap) in d_taps {
                if *tap_layer == i + 1 {
                    grad.add_assign(d_tap);
                }
            }
            grad = layer.backward(&grad);
        }
        match &mut self.input_proj {
            Some(proj) => Ok(proj.backward(&grad)),
            None => Ok(grad),
        }
    }

    pub fn last_op_counts(&self) -> OpCounts {
        self.counts
    }

    /// Attention probabilities of one layer from the latest forward.
    pub fn attention_probs(&self, layer: usize) -> Option<&[Mat]> {
        self.layers.get(layer).and_then(|l| l.attn.last_probs())
    }

    pub fn clear_cache(&mut self) {
        if let Some(p) = &mut self.input_proj {
            p.clear_cache();
        }
        for l in &mut self.layers {
            l.clear_cache();
        }
        self.final_ln.clear_cache();
    }
}

impl Parameterized for TransformerEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(p) = &mut self.input_proj {
            p.visit_params(&join(prefix, "input_proj"), f);
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_ln.visit_params(&join(prefix, "final_ln"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn latent(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = Rng::seed_from(seed);
        FeatureSequence::new(
            Mat::from_fn(t, d, |_, _| rng.uniform(-1.0, 1.0)),
            20,
            FeatureKind::Latent,
        )
    }

    #[test]
    fn single_frame_input_gives_single_frame_output() {
        let mut rng = Rng::seed_from(1);
        let cfg = EncoderConfig {
            num_layers: 2,
            model_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            ..Default::default()
        };
        let mut enc = TransformerEncoder::new(cfg, 16, &mut rng).unwrap();
        let out = enc.forward(&latent(1, 16, 2)).unwrap();
        assert_eq!(out.top.rows(), 1);
        for p in enc.attention_probs(0).unwrap() {
            assert!((p.at(0, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_normalized() {
        let mut rng = Rng::seed_from(3);
        let mut enc = TransformerEncoder::new(
            EncoderConfig {
                num_layers: 2,
                model_dim: 16,
                num_heads: 4,
                ffn_dim: 32,
                ..Default::default()
            },
            16,
            &mut rng,
        )
        .unwrap();
        enc.forward(&latent(9, 16, 4)).unwrap();
        for layer in 0..2 {
            for p in enc.attention_probs(layer).unwrap() {
                for t in 0..p.rows() {
                    let s: f64 = p.row(t).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut rng = Rng::seed_from(5);
        let cfg = EncoderConfig {
            num_layers: 2,
            model_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            use_positional: false,
            ..Default::default()
        };
        let mut enc = TransformerEncoder::new(cfg, 16, &mut rng).unwrap();
        let f = latent(6, 16, 6);
        let fwd = enc.forward(&f).unwrap().top;
        // Reverse the positions.
        let rev_frames = Mat::from_fn(6, 16, |t, c| f.frames.at(5 - t, c));
        let rev = FeatureSequence::new(rev_frames, 20, FeatureKind::Latent);
        let fwd_rev = enc.forward(&rev).unwrap().top;
        for t in 0..6 {
            for c in 0..16 {
                assert!(
                    (fwd.at(t, c) - fwd_rev.at(5 - t, c)).abs() < 1e-9,
                    "({t},{c})"
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::seed_from(7);
        let mut enc = TransformerEncoder::new(EncoderConfig::default(), 64, &mut rng).unwrap();
        let f = latent(12, 64, 8);
        let a = enc.forward(&f).unwrap().top;
        let b = enc.forward(&f).unwrap().top;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut rng = Rng::seed_from(9);
        let mut enc = TransformerEncoder::new(EncoderConfig::default(), 64, &mut rng).unwrap();
        let mut f = latent(4, 64, 10);
        *f.frames.at_mut(2, 3) = f64::NAN;
        assert!(matches!(enc.forward(&f), Err(Error::NonFiniteFeatures)));
    }

    #[test]
    fn taps_are_emitted_for_configured_layers() {
        let mut rng = Rng::seed_from(11);
        let cfg = EncoderConfig {
            ils_layers: vec![2],
            ..Default::default()
        };
        let mut enc = TransformerEncoder::new(cfg, 64, &mut rng).unwrap();
        let out = enc.forward(&latent(5, 64, 12)).unwrap();
        assert_eq!(out.taps.len(), 1);
        assert_eq!(out.taps[0].0, 2);
        assert_eq!(out.taps[0].1.rows(), 5);
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut rng = Rng::seed_from(21);
        let mut enc = TransformerEncoder::new(EncoderConfig::default(), 64, &mut rng).unwrap();
        let d_top = Mat::zeros(3, 64);
        assert!(matches!(
            enc.backward(&d_top, &[]),
            Err(Error::NoForwardPass)
        ));
    }

    #[test]
    fn invalid_ils_layer_is_rejected() {
        let cfg = EncoderConfig {
            ils_layers: vec![9],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn doubling_t_quadruples_attention_flops() {
        let mut rng = Rng::seed_from(13);
        let mut enc = TransformerEncoder::new(EncoderConfig::default(), 64, &mut rng).unwrap();
        enc.forward(&latent(256, 64, 14)).unwrap();
        let small = enc.last_op_counts();
        enc.forward(&latent(512, 64, 15)).unwrap();
        let big = enc.last_op_counts();
        let ratio = big.attn_flops as f64 / small.attn_flops as f64;
        assert!((ratio - 4.0).abs() < 1e-9, "ratio {ratio}");
        // And the quadratic term dominates the per-layer cost at T >= 256.
        assert!(big.attn_flops > big.linear_flops);
    }

    #[test]
    fn tap_gradients_flow_only_into_earlier_layers() {
        let mut rng = Rng::seed_from(17);
        let cfg = EncoderConfig {
            num_layers: 4,
            model_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            ils_layers: vec![2],
            ..Default::default()
        };
        let mut enc = TransformerEncoder::new(cfg, 16, &mut rng).unwrap();
        let f = latent(5, 16, 18);
        let out = enc.forward(&f).unwrap();
        // Zero gradient on top, nonzero on the layer-2 tap.
        let d_top = Mat::zeros(5, 16);
        let d_tap = Mat::from_fn(5, 16, |_, _| 1.0);
        enc.backward(&d_top, &[(2, d_tap)]).unwrap();
        let mut grads: Vec<(String, f64)> = Vec::new();
        enc.visit_params("", &mut |name, p| {
            grads.push((name.to_string(), p.grad.iter().map(|g| g * g).sum()));
        });
        for (name, g2) in grads {
            if name.starts_with("layer0") || name.starts_with("layer1") {
                // Layers at or below the tap receive gradient.
                continue;
            }
            if name.starts_with("layer2") || name.starts_with("layer3") || name.starts_with("final_ln") {
                assert!(g2 == 0.0, "{name} unexpectedly has gradient {g2}");
            }
        }
        let early: f64 = {
            let mut acc = 0.0;
            enc.visit_params("", &mut |name, p| {
                if name.starts_with("layer0") || name.starts_with("layer1") {
                    acc += p.grad.iter().map(|g| g * g).sum::<f64>();
                }
            });
            acc
        };
        assert!(early > 0.0);
        let _ = out;
    }
}
