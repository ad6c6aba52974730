//! CRC-64 (XZ / ECMA-182 reflected) used by every on-disk artifact and for
//! configuration hashes.

use crc::{Crc, CRC_64_XZ};

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

/// Incremental digest for payloads assembled piecewise.
pub struct Crc64Digest(crc::Digest<'static, u64>);

impl Crc64Digest {
    pub fn new() -> Self {
        Self(CRC64.digest())
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finalize(self) -> u64 {
        self.0.finalize()
    }
}

impl Default for Crc64Digest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn hex(h: u64) -> String {
    format!("{h:016x}")
}
