//! Checkpoint files: a TOML manifest followed by named tensor records.
//!
//! Layout: 8-byte magic, u64 manifest length, manifest bytes, then records
//! of (u64 name length, name, tensor in the wire format of
//! `pvfi_tensor::io`).

use crate::config::ModelConfig;
use crate::network::Model;
use crate::params::ModelParams;
use crate::{NetError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PVFICKP1";

pub type Record = (String, Vec<usize>, Vec<f32>);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NetError + '_ {
    move |source| NetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, msg: impl Into<String>) -> NetError {
    NetError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Write a manifest and records to `path`.
pub fn save(path: &Path, manifest: &str, records: &[(&str, &[usize], &[f32])]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(manifest.as_bytes())?;
        for (name, shape, data) in records {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            pvfi_tensor::io::write_tensor(&mut w, shape, data)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Read back (manifest, records).
pub fn load(path: &Path) -> Result<(String, Vec<Record>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let manifest_len = read_u64(&mut r).map_err(io_err(path))? as usize;
    if manifest_len > 1 << 24 {
        return Err(bad(path, "manifest unreasonably large"));
    }
    let mut manifest = vec![0u8; manifest_len];
    r.read_exact(&mut manifest).map_err(io_err(path))?;
    let manifest =
        String::from_utf8(manifest).map_err(|_| bad(path, "manifest is not UTF-8"))?;
    let mut records = Vec::new();
    loop {
        let name_len = match read_u64(&mut r) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path)(e)),
        };
        if name_len > 4096 {
            return Err(bad(path, "record name unreasonably long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err(path))?;
        let name = String::from_utf8(name).map_err(|_| bad(path, "record name not UTF-8"))?;
        let (shape, data) = pvfi_tensor::io::read_tensor(&mut r).map_err(io_err(path))?;
        records.push((name, shape, data));
    }
    Ok((manifest, records))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelManifest {
    model: ModelConfig,
}

impl Model {
    /// Save configuration and parameters; `extra` records (optimizer state,
    /// counters) are appended verbatim.
    pub fn save_checkpoint(&self, path: &Path, extra: &[(&str, &[usize], &[f32])]) -> Result<()> {
        let manifest = toml::to_string(&ModelManifest {
            model: self.cfg().clone(),
        })
        .map_err(|e| bad(path, format!("manifest serialization: {e}")))?;
        let mut records: Vec<(&str, &[usize], &[f32])> = self
            .params()
            .iter()
            .map(|(spec, data)| (spec.name.as_str(), spec.shape.as_slice(), data))
            .collect();
        records.extend_from_slice(extra);
        save(path, &manifest, &records)
    }

    /// Load a model; returns any records that are not model parameters.
    pub fn load_checkpoint(path: &Path) -> Result<(Model, Vec<Record>)> {
        let (manifest, records) = load(path)?;
        let parsed: ModelManifest = toml::from_str(&manifest)
            .map_err(|e| bad(path, format!("manifest parse: {e}")))?;
        let cfg = parsed.model;
        cfg.validate()?;
        let mut params = ModelParams::init(&cfg, 0)?;
        let known: std::collections::HashSet<&str> =
            params.specs().iter().map(|s| s.name.as_str()).collect();
        let (own, extra): (Vec<Record>, Vec<Record>) = records
            .into_iter()
            .partition(|(name, _, _)| known.contains(name.as_str()));
        params.load_records(own)?;
        Ok((Model::from_parts(cfg, params)?, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            stages: 1,
            scales: 1,
            base_width: 8,
            heads: vec![2],
            cube: [2, 2, 2],
            channels: 4,
            frames: 6,
            pos_depthwise: true,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("pvfi_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let model = Model::new(tiny(), 42).unwrap();
        let extra_data = vec![1.5f32, -2.5];
        model
            .save_checkpoint(&path, &[("opt.step", &[2][..], &extra_data)])
            .unwrap();
        let (back, extra) = Model::load_checkpoint(&path).unwrap();
        assert_eq!(back.cfg(), model.cfg());
        for ((sa, da), (sb, db)) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(sa.name, sb.name);
            for (x, y) in da.iter().zip(db) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(extra.len(), 1);
        assert_eq!(extra[0].0, "opt.step");
        assert_eq!(extra[0].2, extra_data);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = std::env::temp_dir().join("pvfi_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(Model::load_checkpoint(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn missing_parameter_is_detected() {
        let dir = std::env::temp_dir().join("pvfi_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.ckpt");
        let model = Model::new(tiny(), 1).unwrap();
        // write a manifest but only the first record
        let manifest = toml::to_string(&ModelManifest {
            model: model.cfg().clone(),
        })
        .unwrap();
        let (spec, data) = model.params().iter().next().unwrap();
        save(
            &path,
            &manifest,
            &[(spec.name.as_str(), spec.shape.as_slice(), data)],
        )
        .unwrap();
        let err = match Model::load_checkpoint(&path) {
            Err(e) => e,
            Ok(_) => panic!("truncated checkpoint loaded"),
        };
        assert!(err.to_string().contains("missing parameter"));
        std::fs::remove_file(&path).ok();
    }
}
