//! Single-file binary checkpoints with a section table.
//!
//! Layout: magic, version, section count, then per section a name, offset,
//! and length. Sections: `meta` (step, config hash), `rng` (generator
//! state), `params` (name → f64 values), `adam` (optimizer moments).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::adam::{Adam, AdamConfig, Moments};
use crate::error::{Error, Result};
use crate::nn::param::Parameterized;
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub step: u64,
    pub config_hash: u64,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub rng_state: [u64; 4],
    pub params: HashMap<String, Vec<f64>>,
    pub adam_step: u64,
    pub adam_moments: HashMap<String, Moments>,
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    buf.extend_from_slice(&(vals.len() as u32).to_le_bytes());
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("{}: {}", self.path, msg))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.fail("bad utf8"))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let b = self.take(8)?;
            out.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        Ok(out)
    }
}

/// Serializes model parameters, optimizer state, and the RNG stream.
pub fn save_checkpoint(
    path: &Path,
    model: &mut dyn Parameterized,
    adam: &Adam,
    rng: &Rng,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();

    let mut meta_buf = Vec::new();
    meta_buf.extend_from_slice(&meta.step.to_le_bytes());
    meta_buf.extend_from_slice(&meta.config_hash.to_le_bytes());
    sections.push(("meta", meta_buf));

    let mut rng_buf = Vec::new();
    for w in rng.state() {
        rng_buf.extend_from_slice(&w.to_le_bytes());
    }
    sections.push(("rng", rng_buf));

    let mut params_buf = Vec::new();
    let mut count = 0u32;
    let mut body = Vec::new();
    model.visit_params("", &mut |name, p| {
        push_str(&mut body, name);
        push_f64s(&mut body, &p.value);
        count += 1;
    });
    params_buf.extend_from_slice(&count.to_le_bytes());
    params_buf.extend_from_slice(&body);
    sections.push(("params", params_buf));

    let mut adam_buf = Vec::new();
    adam_buf.extend_from_slice(&adam.step_count.to_le_bytes());
    let mut names: Vec<&String> = adam.moments.keys().collect();
    names.sort();
    adam_buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let m = &adam.moments[name];
        push_str(&mut adam_buf, name);
        push_f64s(&mut adam_buf, &m.m);
        push_f64s(&mut adam_buf, &m.v);
    }
    sections.push(("adam", adam_buf));

    // Header + section table + bodies.
    let mut table = Vec::new();
    let mut bodies = Vec::new();
    let header_len = 4 + 4 + 4;
    let table_len: usize = sections
        .iter()
        .map(|(name, _)| 4 + name.len() + 8 + 8)
        .sum();
    let mut offset = (header_len + table_len) as u64;
    for (name, body) in &sections {
        push_str(&mut table, name);
        table.extend_from_slice(&offset.to_le_bytes());
        table.extend_from_slice(&(body.len() as u64).to_le_bytes());
        offset += body.len() as u64;
        bodies.extend_from_slice(body);
    }
    let mut out = Vec::with_capacity(header_len + table.len() + bodies.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    out.extend_from_slice(&table);
    out.extend_from_slice(&bodies);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(r.fail("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(&format!("unsupported version {version}")));
    }
    let n_sections = r.u32()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let name = r.string()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        table.push((name, offset, len));
    }
    let section = |name: &str| -> Result<Reader<'_>> {
        let (_, offset, len) = table
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name}")))?;
        if offset + len > bytes.len() {
            return Err(Error::Checkpoint(format!("section {name} out of bounds")));
        }
        Ok(Reader {
            bytes: &bytes[*offset..offset + len],
            pos: 0,
            path: path.display().to_string(),
        })
    };

    let mut meta_r = section("meta")?;
    let meta = CheckpointMeta {
        step: meta_r.u64()?,
        config_hash: meta_r.u64()?,
    };

    let mut rng_r = section("rng")?;
    let rng_state = [rng_r.u64()?, rng_r.u64()?, rng_r.u64()?, rng_r.u64()?];

    let mut params_r = section("params")?;
    let n_params = params_r.u32()? as usize;
    let mut params = HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let name = params_r.string()?;
        let vals = params_r.f64s()?;
        params.insert(name, vals);
    }

    let mut adam_r = section("adam")?;
    let adam_step = adam_r.u64()?;
    let n_moments = adam_r.u32()? as usize;
    let mut adam_moments = HashMap::with_capacity(n_moments);
    for _ in 0..n_moments {
        let name = adam_r.string()?;
        let m = adam_r.f64s()?;
        let v = adam_r.f64s()?;
        adam_moments.insert(name, Moments { m, v });
    }

    Ok(Checkpoint {
        meta,
        rng_state,
        params,
        adam_step,
        adam_moments,
    })
}

/// Writes checkpointed values into a model; every model parameter must be
/// present with a matching length.
pub fn apply_params(model: &mut dyn Parameterized, ck: &Checkpoint) -> Result<()> {
    let mut missing: Vec<String> = Vec::new();
    let mut mismatched: Vec<String> = Vec::new();
    model.visit_params("", &mut |name, p| match ck.params.get(name) {
        Some(vals) if vals.len() == p.len() => p.value.copy_from_slice(vals),
        Some(_) => mismatched.push(name.to_string()),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(Error::Checkpoint(format!(
            "parameter mismatch: missing {missing:?}, wrong shape {mismatched:?}"
        )));
    }
    Ok(())
}

/// Restores optimizer state saved alongside the parameters.
pub fn restore_adam(cfg: AdamConfig, ck: &Checkpoint) -> Adam {
    let mut adam = Adam::new(cfg);
    adam.step_count = ck.adam_step;
    adam.moments = ck.adam_moments.clone();
    adam
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::linear::Linear;
    use crate::nn::param;

    #[test]
    fn round_trip_preserves_everything_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = Rng::seed_from(11);
        let mut model = Linear::new(7, 5, true, &mut rng);
        let mut adam = Adam::new(AdamConfig::default());
        // Produce some optimizer state.
        for _ in 0..3 {
            model.visit_params("", &mut |_, p| {
                for g in &mut p.grad {
                    *g = rng.uniform(-1.0, 1.0);
                }
            });
            adam.step(&mut model, 1e-3, &|_| false).unwrap();
        }
        let before = param::fingerprint(&mut model, |_| true);
        let meta = CheckpointMeta {
            step: 42,
            config_hash: 0xfeed_beef,
        };
        save_checkpoint(&path, &mut model, &adam, &rng, &meta).unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta.step, 42);
        assert_eq!(ck.meta.config_hash, 0xfeed_beef);
        assert_eq!(ck.rng_state, rng.state());
        assert_eq!(ck.adam_step, 3);

        let mut restored = Linear::new(7, 5, true, &mut Rng::seed_from(99));
        apply_params(&mut restored, &ck).unwrap();
        assert_eq!(param::fingerprint(&mut restored, |_| true), before);

        let adam2 = restore_adam(AdamConfig::default(), &ck);
        for (name, m) in &adam.moments {
            let m2 = &adam2.moments[name];
            assert_eq!(m.m, m2.m);
            assert_eq!(m.v, m2.v);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = Rng::seed_from(12);
        let mut model = Linear::new(3, 3, false, &mut rng);
        let adam = Adam::new(AdamConfig::default());
        let meta = CheckpointMeta {
            step: 0,
            config_hash: 0,
        };
        save_checkpoint(&path, &mut model, &adam, &rng, &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let mut other = Linear::new(4, 3, false, &mut rng);
        assert!(matches!(
            apply_params(&mut other, &ck),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
