use std::fs;
use std::path::Path;

use crate::checksum::crc64;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCHD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 3 + 8;

/// `N x K x n` trajectory states stored as `f32` in (trajectory, step,
/// dimension) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    states: Vec<f32>,
    n_traj: usize,
    steps: usize,
    dim: usize,
    dt: f64,
    system_tag: String,
    seed: u64,
}

impl Dataset {
    pub fn new(states: Vec<f32>, n_traj: usize, steps: usize, dim: usize, dt: f64) -> Result<Self> {
        if n_traj == 0 || steps == 0 || dim == 0 {
            return Err(Error::Contract("dataset dimensions must all be >= 1".into()));
        }
        if states.len() != n_traj * steps * dim {
            return Err(Error::Contract(format!(
                "dataset has {} values, expected {n_traj} x {steps} x {dim}",
                states.len()
            )));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite dataset entry at flat index {pos}")));
        }
        Ok(Self {
            states,
            n_traj,
            steps,
            dim,
            dt,
            system_tag: String::new(),
            seed: 0,
        })
    }

    pub fn with_provenance(mut self, system_tag: &str, seed: u64) -> Self {
        self.system_tag = system_tag.to_owned();
        self.seed = seed;
        self
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system_tag(&self) -> &str {
        &self.system_tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn states(&self) -> &[f32] {
        &self.states
    }

    pub fn state(&self, traj: usize, k: usize) -> &[f32] {
        let off = (traj * self.steps + k) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// States of the given trajectories at step `k`, as `f64` rows.
    pub fn rows_at(&self, ids: &[usize], k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            out.extend(self.state(i, k).iter().map(|&v| v as f64));
        }
        out
    }

    /// Keeps only the listed trajectories, in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let per = self.steps * self.dim;
        let mut states = Vec::with_capacity(ids.len() * per);
        for &i in ids {
            states.extend_from_slice(&self.states[i * per..(i + 1) * per]);
        }
        Self::new(states, ids.len(), self.steps, self.dim, self.dt)
            .map(|d| d.with_provenance(&self.system_tag, self.seed))
    }

    /// CRC-64 of the state payload, as stored in the file trailer.
    pub fn checksum(&self) -> u64 {
        let bytes: Vec<u8> = self.states.iter().flat_map(|v| v.to_le_bytes()).collect();
        crc64(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.states.len() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.n_traj, self.steps, self.dim] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.dt.to_le_bytes());
        let payload_start = out.len();
        for v in &self.states {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc64(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, detail: String| Error::Format {
            offset: offset as u64,
            detail,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(fmt(0, "bad magic, expected \"RCHD\"".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(fmt(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(fmt(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let (n, k, d) = (u64_at(8), u64_at(16), u64_at(24));
        let dt = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let count = n
            .checked_mul(k)
            .and_then(|x| x.checked_mul(d))
            .filter(|&c| c <= (usize::MAX / 4) as u64)
            .ok_or_else(|| fmt(8, "dimensions overflow".into()))? as usize;
        let payload_end = HEADER_LEN + 4 * count;
        if bytes.len() < payload_end + 8 {
            return Err(fmt(bytes.len(), format!("truncated: expected {} bytes", payload_end + 8)));
        }
        if bytes.len() > payload_end + 8 {
            return Err(fmt(payload_end + 8, "trailing bytes after checksum".into()));
        }
        let payload = &bytes[HEADER_LEN..payload_end];
        let stored = u64_at(payload_end);
        let actual = crc64(payload);
        if stored != actual {
            return Err(fmt(
                payload_end,
                format!("checksum mismatch: stored {stored:016x}, computed {actual:016x}"),
            ));
        }
        let states = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(states, n as usize, k as usize, d as usize, dt)
            .map_err(|e| fmt(HEADER_LEN, e.to_string()))
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, ds.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let states: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        Dataset::new(states, 3, 4, 2, 0.1).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = sample();
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back.states(), ds.states());
        assert_eq!((back.n_traj(), back.steps(), back.dim(), back.dt()), (3, 4, 2, 0.1));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"RCHD");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..16], &3u64.to_le_bytes());
        assert_eq!(&b[16..24], &4u64.to_le_bytes());
        assert_eq!(&b[24..32], &2u64.to_le_bytes());
        assert_eq!(&b[32..40], &0.1f64.to_le_bytes());
        assert_eq!(b.len(), 40 + 24 * 4 + 8);
        assert_eq!(&b[40..44], &(-3.0f32).to_le_bytes());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let b = sample().to_bytes();
        for cut in [3, 20, 41, b.len() - 1] {
            match Dataset::from_bytes(&b[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_magic_names_expected_value() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        let err = Dataset::from_bytes(&b).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(err.to_string().contains("\"RCHD\""));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut b = sample().to_bytes();
        b[50] ^= 1;
        assert!(matches!(Dataset::from_bytes(&b), Err(Error::Format { offset: 136, .. })));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut b = sample().to_bytes();
        b[4] = 2;
        assert!(matches!(Dataset::from_bytes(&b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn rejects_non_finite_states() {
        assert!(Dataset::new(vec![f32::NAN], 1, 1, 1, 1.0).is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let ds = sample();
        let s = ds.subset(&[2, 0]).unwrap();
        assert_eq!(s.state(0, 0), ds.state(2, 0));
        assert_eq!(s.state(1, 3), ds.state(0, 3));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.rchd");
        save_dataset(&sample(), &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap().states(), sample().states());
    }
}
