//! Deterministic DSP pipeline: STFT, log mel filterbank, 39-dim MFCC,
//! and per-utterance CMVN, all at a 10 ms base frameshift.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSequence};
use crate::mat::Mat;

#[derive(Debug, Clone)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub fft_size: usize,
    /// Mel bands for Fbank features.
    pub n_mels: usize,
    /// Mel bands feeding the MFCC cepstral analysis.
    pub n_mels_mfcc: usize,
    /// Energies are clamped here before the log so silence stays defined.
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 16_000,
            window_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            n_mels: 80,
            n_mels_mfcc: 26,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as usize * self.window_ms as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as usize * self.hop_ms as usize) / 1000
    }

    fn validate(&self, w: &Waveform) -> Result<()> {
        if self.hop_ms > self.window_ms {
            return Err(Error::InvalidConfig(format!(
                "hop {} ms exceeds window {} ms",
                self.hop_ms, self.window_ms
            )));
        }
        if w.sample_rate != self.sample_rate {
            return Err(Error::Format(format!(
                "waveform sample rate {} does not match pipeline rate {}",
                w.sample_rate, self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Frames at `window` samples every `hop` samples: 1 + floor((len − window)/hop),
/// or None when the input is shorter than one window.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Option<usize> {
    if len < window {
        None
    } else {
        Some(1 + (len - window) / hop)
    }
}

/// In-place iterative radix-2 FFT. Length must be a power of two.
pub fn fft_inplace(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let mut cur_r = 1.0;
            let mut cur_i = 0.0;
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cur_r - im[i + k + len / 2] * cur_i,
                    re[i + k + len / 2] * cur_i + im[i + k + len / 2] * cur_r,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let next_r = cur_r * wr - cur_i * wi;
                cur_i = cur_r * wi + cur_i * wr;
                cur_r = next_r;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Complex spectrogram, T frames × (fft_size/2 + 1) bins.
#[derive(Debug, Clone)]
pub struct Stft {
    pub re: Mat,
    pub im: Mat,
    pub hop_ms: u32,
}

impl Stft {
    pub fn num_frames(&self) -> usize {
        self.re.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.re.cols()
    }

    pub fn magnitude(&self, t: usize, k: usize) -> f64 {
        self.re.at(t, k).hypot(self.im.at(t, k))
    }

    pub fn power(&self, t: usize, k: usize) -> f64 {
        let (r, i) = (self.re.at(t, k), self.im.at(t, k));
        r * r + i * i
    }
}

pub fn stft(w: &Waveform, cfg: &DspConfig) -> Result<Stft> {
    cfg.validate(w)?;
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    let t_frames = frame_count(w.len(), window, hop).ok_or(Error::InputTooShort)?;
    let bins = cfg.fft_size / 2 + 1;
    let win = hann_window(window);
    let mut re = Mat::zeros(t_frames, bins);
    let mut im = Mat::zeros(t_frames, bins);
    let mut buf_r = vec![0.0; cfg.fft_size];
    let mut buf_i = vec![0.0; cfg.fft_size];
    for t in 0..t_frames {
        let start = t * hop;
        for i in 0..cfg.fft_size {
            buf_r[i] = if i < window {
                w.samples[start + i] * win[i]
            } else {
                0.0
            };
            buf_i[i] = 0.0;
        }
        fft_inplace(&mut buf_r, &mut buf_i);
        re.row_mut(t).copy_from_slice(&buf_r[..bins]);
        im.row_mut(t).copy_from_slice(&buf_i[..bins]);
    }
    Ok(Stft {
        re,
        im,
        hop_ms: cfg.hop_ms,
    })
}

/// Triangular mel filterbank as per-filter sparse (bin, weight) lists.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let hz_to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let mel_to_hz = |mel: f64| 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
    let nyquist = sample_rate as f64 / 2.0;
    let mel_hi = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        let mut filt = Vec::new();
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                filt.push((k, w));
            }
        }
        filters.push(filt);
    }
    filters
}

fn log_mel_frames(sp: &Stft, n_mels: usize, cfg: &DspConfig) -> Mat {
    let filters = mel_filterbank(n_mels, cfg.fft_size, cfg.sample_rate);
    let t_frames = sp.num_frames();
    let mut out = Mat::zeros(t_frames, n_mels);
    for t in 0..t_frames {
        for (m, filt) in filters.iter().enumerate() {
            let mut e = 0.0;
            for &(k, w) in filt {
                e += w * sp.power(t, k);
            }
            *out.at_mut(t, m) = e.max(cfg.log_floor).ln();
        }
    }
    out
}

/// Log mel-filterbank features at the base 10 ms frameshift.
pub fn fbank(w: &Waveform, cfg: &DspConfig) -> Result<FeatureSequence> {
    let sp = stft(w, cfg)?;
    let frames = log_mel_frames(&sp, cfg.n_mels, cfg);
    Ok(FeatureSequence::new(frames, cfg.hop_ms, FeatureKind::Fbank))
}

/// Orthonormal type-II DCT, truncated to `n_out` coefficients.
pub fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let mut acc = 0.0;
        for (i, &v) in x.iter().enumerate() {
            acc += v * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64)).cos();
        }
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        out.push(acc * scale);
    }
    out
}

/// Regression deltas with window ±2, edge frames replicated.
pub fn deltas(x: &Mat) -> Mat {
    let t_len = x.rows();
    let denom = 2.0 * (1.0 + 4.0); // 2·Σ n² for n in 1..=2
    Mat::from_fn(t_len, x.cols(), |t, c| {
        let mut acc = 0.0;
        for n in 1..=2usize {
            let fwd = x.at((t + n).min(t_len - 1), c);
            let back = x.at(t.saturating_sub(n), c);
            acc += n as f64 * (fwd - back);
        }
        acc / denom
    })
}

/// 39-dimensional MFCC: 13 cepstra + 13 deltas + 13 delta-deltas.
pub fn mfcc39(w: &Waveform, cfg: &DspConfig) -> Result<FeatureSequence> {
    const N_CEPSTRA: usize = 13;
    let sp = stft(w, cfg)?;
    let log_mel = log_mel_frames(&sp, cfg.n_mels_mfcc, cfg);
    let t_frames = log_mel.rows();
    let mut cep = Mat::zeros(t_frames, N_CEPSTRA);
    for t in 0..t_frames {
        let row = dct2_orthonormal(log_mel.row(t), N_CEPSTRA);
        cep.row_mut(t).copy_from_slice(&row);
    }
    let d1 = deltas(&cep);
    let d2 = deltas(&d1);
    let mut out = Mat::zeros(t_frames, 3 * N_CEPSTRA);
    for t in 0..t_frames {
        out.row_mut(t)[..N_CEPSTRA].copy_from_slice(cep.row(t));
        out.row_mut(t)[N_CEPSTRA..2 * N_CEPSTRA].copy_from_slice(d1.row(t));
        out.row_mut(t)[2 * N_CEPSTRA..].copy_from_slice(d2.row(t));
    }
    Ok(FeatureSequence::new(out, cfg.hop_ms, FeatureKind::Mfcc))
}

/// Per-utterance mean normalization only. Used for clustering features,
/// where variance scaling would amplify near-constant delta dimensions.
pub fn cmn(f: &FeatureSequence) -> Result<FeatureSequence> {
    let t_len = f.num_frames();
    if t_len < 2 {
        return Err(Error::TooFewFrames);
    }
    let d = f.dim();
    let mut mean = vec![0.0; d];
    for t in 0..t_len {
        for (m, &v) in mean.iter_mut().zip(f.frames.row(t)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let frames = Mat::from_fn(t_len, d, |t, c| f.frames.at(t, c) - mean[c]);
    Ok(FeatureSequence::new(frames, f.frameshift_ms, f.kind))
}

/// Per-utterance mean/variance normalization of every feature dimension.
/// Variance is clamped at 1e-8, so constant dimensions normalize to zero.
pub fn cmvn(f: &FeatureSequence) -> Result<FeatureSequence> {
    const VAR_CLAMP: f64 = 1e-8;
    let t_len = f.num_frames();
    if t_len < 2 {
        return Err(Error::TooFewFrames);
    }
    let d = f.dim();
    let mut mean = vec![0.0; d];
    for t in 0..t_len {
        for (m, &v) in mean.iter_mut().zip(f.frames.row(t)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let mut var = vec![0.0; d];
    for t in 0..t_len {
        for (c, &v) in f.frames.row(t).iter().enumerate() {
            let diff = v - mean[c];
            var[c] += diff * diff;
        }
    }
    for v in &mut var {
        *v = (*v / t_len as f64).max(VAR_CLAMP);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt()).collect();
    let frames = Mat::from_fn(t_len, d, |t, c| (f.frames.at(t, c) - mean[c]) * inv_std[c]);
    Ok(FeatureSequence::new(frames, f.frameshift_ms, f.kind))
}
