//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, u32 manifest length, JSON manifest (parameter names
//! and shapes in visit order, arbitrary config value, seed), then the raw
//! parameter values as little-endian f64 blocks in the same order. Values
//! round-trip bit for bit.

use std::io::{Read as _, Write as _};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Parameterized;

const MAGIC: &[u8; 8] = b"MMALIGN1";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Manifest {
    params: Vec<ParamEntry>,
    config: serde_json::Value,
    seed: u64,
}

/// Write all parameters of `model` plus a serializable config and the run
/// seed to `path`.
pub fn save<P: Parameterized, C: serde::Serialize>(
    path: &Path,
    model: &mut P,
    config: &C,
    seed: u64,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    model.visit_params(&mut |name, p| {
        entries.push(ParamEntry {
            name: name.to_string(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        });
        for v in p.value.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let manifest = Manifest {
        params: entries,
        config: serde_json::to_value(config)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?,
        seed,
    };
    let mjson = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(mjson.len() as u32).to_le_bytes())?;
    f.write_all(&mjson)?;
    f.write_all(&blob)?;
    Ok(())
}

/// Load parameter values from `path` into `model`. Shapes and visit order
/// must match exactly. Returns the stored config value and seed.
pub fn load<P: Parameterized>(path: &Path, model: &mut P) -> Result<(serde_json::Value, u64)> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic header",
            path.display()
        )));
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut mjson = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut mjson)?;
    let manifest: Manifest = serde_json::from_slice(&mjson)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;
    let expected: usize = manifest.params.iter().map(|e| e.rows * e.cols * 8).sum();
    if blob.len() != expected {
        return Err(Error::Checkpoint(format!(
            "parameter block is {} bytes, manifest expects {expected}",
            blob.len()
        )));
    }
    let mut offset = 0usize;
    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    model.visit_params(&mut |name, p| {
        if mismatch.is_some() {
            return;
        }
        let Some(entry) = manifest.params.get(idx) else {
            mismatch = Some(format!("checkpoint has no entry for parameter {name}"));
            return;
        };
        if entry.name != name || entry.rows != p.value.nrows() || entry.cols != p.value.ncols() {
            mismatch = Some(format!(
                "parameter {idx} mismatch: model has {name} {}x{}, file has {} {}x{}",
                p.value.nrows(),
                p.value.ncols(),
                entry.name,
                entry.rows,
                entry.cols
            ));
            return;
        }
        for v in p.value.iter_mut() {
            let bytes: [u8; 8] = blob[offset..offset + 8].try_into().expect("8 bytes");
            *v = f64::from_le_bytes(bytes);
            offset += 8;
        }
        idx += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::Checkpoint(msg));
    }
    if idx != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, model visits {idx}",
            manifest.params.len()
        )));
    }
    Ok((manifest.config, manifest.seed))
}

/// SHA-256 digest of a file, as a lowercase hex string.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// SHA-256 of the parameter values of a model, hashing the same byte stream
/// the checkpoint writer produces. Convenient for determinism assertions.
pub fn param_digest<P: Parameterized>(model: &mut P) -> String {
    let mut hasher = Sha256::new();
    model.visit_params(&mut |_, p| {
        for v in p.value.iter() {
            hasher.update(v.to_le_bytes());
        }
    });
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::numerics::seeded_rng;
    use rand::Rng;

    fn small_model(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            d_in1: 3,
            d_in2: 3,
            d_model: 8,
            d_ff: 12,
            num_heads: 2,
            enc_layers: 1,
            fusion_layers: 1,
            max_len: 8,
            window: 2,
            head_hidden: 4,
            ..ModelConfig::default()
        };
        let mut rng = seeded_rng(seed, "ckpt-test");
        ModelParams::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut a = small_model(1);
        // salt in some awkward values
        let mut rng = seeded_rng(2, "salt");
        a.visit_params(&mut |_, p| {
            for v in p.value.iter_mut() {
                *v = rng.gen_range(-1.0..1.0) * 1e-12_f64.powf(rng.gen_range(0.0..1.0));
            }
        });
        let cfg = a.cfg.clone();
        save(&path, &mut a, &cfg, 42).unwrap();
        let mut b = small_model(3);
        let (cfg_json, seed) = load(&path, &mut b).unwrap();
        assert_eq!(seed, 42);
        assert!(cfg_json.get("d_model").is_some());
        let mut vals_a = Vec::new();
        a.visit_params(&mut |_, p| vals_a.extend(p.value.iter().map(|v| v.to_bits())));
        let mut vals_b = Vec::new();
        b.visit_params(&mut |_, p| vals_b.extend(p.value.iter().map(|v| v.to_bits())));
        assert_eq!(vals_a, vals_b, "round trip must be bit exact");
        assert_eq!(param_digest(&mut a), param_digest(&mut b));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut a = small_model(1);
        let cfg = a.cfg.clone();
        save(&path, &mut a, &cfg, 0).unwrap();
        let cfg = ModelConfig {
            d_model: 4,
            num_heads: 2,
            d_in1: 3,
            d_in2: 3,
            d_ff: 12,
            enc_layers: 1,
            fusion_layers: 1,
            max_len: 8,
            window: 2,
            head_hidden: 4,
            ..ModelConfig::default()
        };
        let mut rng = seeded_rng(9, "mismatch");
        let mut b = ModelParams::new(cfg, &mut rng).unwrap();
        assert!(matches!(load(&path, &mut b), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMAGIC....").unwrap();
        let mut m = small_model(1);
        assert!(matches!(load(&path, &mut m), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn file_digest_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob");
        std::fs::write(&path, b"abc").unwrap();
        // well-known SHA-256 of "abc"
        assert_eq!(
            file_digest(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
