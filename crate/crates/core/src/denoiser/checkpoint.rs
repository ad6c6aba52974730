//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! u64      length L of the metadata block
//! L bytes  JSON metadata (format, config, architecture, tensor list,
//!          normalizer, schedule fingerprint, dataset checksum)
//! P x f32  parameters in tensor-list order, each tensor row-major
//! u64      CRC-64/XZ of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, DenoiserConfig, DenoiserModel, FilmMlp, TensorSpec};
use crate::checksum::{crc64, hex};
use crate::datastore::Normalizer;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "reachcal-denoiser/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format: String,
    config: DenoiserConfig,
    architecture: Architecture,
    tensors: Vec<TensorSpec>,
    normalizer: Normalizer,
    schedule_fingerprint: String,
    dataset_checksum: Option<String>,
}

fn parse_hex(s: &str, offset: usize) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::Format {
        offset: offset as u64,
        detail: format!("bad hex field {s:?}"),
    })
}

pub fn model_to_bytes(model: &DenoiserModel) -> Result<Vec<u8>> {
    let meta = Metadata {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config.clone(),
        architecture: model.architecture().clone(),
        tensors: model.net.specs().to_vec(),
        normalizer: model.normalizer.clone(),
        schedule_fingerprint: hex(model.schedule_fingerprint),
        dataset_checksum: model.dataset_checksum.map(hex),
    };
    let json = serde_json::to_vec_pretty(&meta)?;
    let params = model.net.params();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc64(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DenoiserModel> {
    let fmt = |offset: usize, detail: String| Error::Format {
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 16 {
        return Err(fmt(bytes.len(), "truncated checkpoint".into()));
    }
    let body = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body..].try_into().unwrap());
    let actual = crc64(&bytes[..body]);
    if stored != actual {
        return Err(fmt(
            body,
            format!("checksum mismatch: stored {stored:016x}, computed {actual:016x}"),
        ));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if len > body - 8 {
        return Err(fmt(0, format!("metadata length {len} exceeds file")));
    }
    let meta: Metadata = serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| fmt(8, e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(fmt(8, format!("unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}", meta.format)));
    }
    if meta.tensors != meta.architecture.tensors() {
        return Err(fmt(8, "tensor list does not match architecture".into()));
    }
    let blob = &bytes[8 + len..body];
    if blob.len() != 4 * meta.architecture.param_count() {
        return Err(fmt(
            8 + len,
            format!(
                "parameter blob has {} bytes, architecture needs {}",
                blob.len(),
                4 * meta.architecture.param_count()
            ),
        ));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenoiserModel {
        config: meta.config,
        normalizer: meta.normalizer,
        schedule_fingerprint: parse_hex(&meta.schedule_fingerprint, 8)?,
        dataset_checksum: meta.dataset_checksum.as_deref().map(|s| parse_hex(s, 8)).transpose()?,
        net: FilmMlp::from_params(meta.architecture, params)?,
    })
}

pub fn save_model(model: &DenoiserModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DenoiserModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;
    use rand::Rng;

    fn model() -> DenoiserModel {
        let cfg = DenoiserConfig { hidden_dim: 8, layers: 2, embed_dim: 4, ..Default::default() };
        let mut net = FilmMlp::<f32>::init(cfg.architecture(2, 1000, 3), &mut stream(1, &[])).unwrap();
        let mut rng = stream(2, &[]);
        net.params_mut().iter_mut().for_each(|p| *p += rng.random_range(-0.1f32..0.1));
        DenoiserModel {
            config: cfg,
            normalizer: Normalizer { mean: vec![0.5, -1.0], std: vec![2.0, 0.25] },
            schedule_fingerprint: 0xdead_beef,
            dataset_checksum: Some(42),
            net,
        }
    }

    #[test]
    fn round_trip_reproduces_outputs_bit_identically() {
        let m = model();
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i as f32 - j as f32) * 0.3);
        assert_eq!(
            m.net.forward_shared(x.view(), 2, 1).unwrap(),
            back.net.forward_shared(x.view(), 2, 1).unwrap()
        );
    }

    #[test]
    fn header_starts_with_metadata_length() {
        let b = model_to_bytes(&model()).unwrap();
        let len = u64::from_le_bytes(b[..8].try_into().unwrap()) as usize;
        assert_eq!(b[8], b'{');
        assert_eq!(b[8 + len - 1], b'}');
        assert_eq!(b.len(), 8 + len + 4 * model().net.params().len() + 8);
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = model_to_bytes(&model()).unwrap();
        let n = b.len();
        b[n - 20] ^= 0x10;
        assert!(matches!(model_from_bytes(&b), Err(Error::Format { .. })));
        assert!(matches!(model_from_bytes(&b[..10]), Err(Error::Format { .. })));
    }
}
