//! Feature sequences and the binary feature container.
//!
//! The container is the contract between offline extraction and training:
//! header {magic, version, T, D, frameshift_ms, kind}, then row-major
//! little-endian f32 values.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Fbank,
    Mfcc,
    Latent,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Fbank => 0,
            FeatureKind::Mfcc => 1,
            FeatureKind::Latent => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Fbank),
            1 => Some(FeatureKind::Mfcc),
            2 => Some(FeatureKind::Latent),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Fbank => "fbank",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Latent => "latent",
        }
    }
}

/// Time-major T×D feature matrix with its frameshift annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Mat,
    pub frameshift_ms: u32,
    pub kind: FeatureKind,
}

impl FeatureSequence {
    pub fn new(frames: Mat, frameshift_ms: u32, kind: FeatureKind) -> Self {
        FeatureSequence {
            frames,
            frameshift_ms,
            kind,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.frames.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteFeatures)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let t = self.num_frames() as u32;
        let d = self.dim() as u32;
        let mut buf = Vec::with_capacity(24 + self.frames.data().len() * 4);
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        buf.extend_from_slice(&t.to_le_bytes());
        buf.extend_from_slice(&d.to_le_bytes());
        buf.extend_from_slice(&self.frameshift_ms.to_le_bytes());
        buf.extend_from_slice(&self.kind.code().to_le_bytes());
        for &v in self.frames.data() {
            buf.write_all(&(v as f32).to_le_bytes()).unwrap();
        }
        fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let fail = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
        if bytes.len() < 24 || &bytes[0..4] != FEATURE_MAGIC {
            return Err(fail("not a feature container"));
        }
        let rd = |off: usize| u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        let version = rd(4);
        if version != FEATURE_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let t = rd(8) as usize;
        let d = rd(12) as usize;
        let frameshift_ms = rd(16);
        let kind = FeatureKind::from_code(rd(20)).ok_or_else(|| fail("unknown feature kind"))?;
        let expected = 24 + t * d * 4;
        if bytes.len() != expected {
            return Err(fail(&format!(
                "payload size mismatch: {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(t * d);
        for chunk in bytes[24..].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        Ok(FeatureSequence::new(Mat::from_vec(t, d, data), frameshift_ms, kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        let m = Mat::from_fn(7, 5, |r, c| (r as f64 - c as f64) * 0.25);
        let f = FeatureSequence::new(m, 10, FeatureKind::Fbank);
        f.save(&path).unwrap();
        let g = FeatureSequence::load(&path).unwrap();
        assert_eq!(g.num_frames(), 7);
        assert_eq!(g.dim(), 5);
        assert_eq!(g.frameshift_ms, 10);
        assert_eq!(g.kind, FeatureKind::Fbank);
        for (a, b) in g.frames.data().iter().zip(f.frames.data()) {
            assert!((a - b).abs() < 1e-6); // f32 narrowing
        }
    }

    #[test]
    fn rejects_corrupt_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        fs::write(&path, b"NOPE").unwrap();
        assert!(FeatureSequence::load(&path).is_err());
    }
}
