//! Binary on-disk format for particle states and observation vectors.
//!
//! Layout, bit-exact across platforms:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PFST"
//! 4       4     format version, u32 LE
//! 8       8     cycle, u64 LE
//! 16      8     index, u64 LE
//! 24      8     vector dimension d, u64 LE
//! 32      8*d   f64 LE values
//! 32+8*d  4     CRC-32 over bytes [0, 32+8*d), u32 LE
//! ```

use std::io::Read;

use thiserror::Error;

use crate::store::ParticleId;

pub const MAGIC: [u8; 4] = *b"PFST";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum StateFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported state file version {0}")]
    Version(u32),
    #[error("truncated state file ({0} bytes)")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
}

/// Serialize a state vector with its identity into the file format.
pub fn encode(id: ParticleId, values: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + values.len() * 8 + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&id.cycle.to_le_bytes());
    buf.extend_from_slice(&id.index.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Parse and verify a state file image.
pub fn decode(bytes: &[u8]) -> Result<(ParticleId, Vec<f64>), StateFileError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(StateFileError::Truncated(bytes.len()));
    }
    if bytes[0..4] != MAGIC {
        return Err(StateFileError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(StateFileError::Version(version));
    }
    let cycle = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let index = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dim = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let payload_end = HEADER_LEN + dim * 8;
    if bytes.len() != payload_end + 4 {
        return Err(StateFileError::Truncated(bytes.len()));
    }
    let stored = u32::from_le_bytes(bytes[payload_end..payload_end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..payload_end]);
    if stored != computed {
        return Err(StateFileError::Checksum { stored, computed });
    }
    let mut values = Vec::with_capacity(dim);
    for i in 0..dim {
        let off = HEADER_LEN + i * 8;
        values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok((ParticleId { cycle, index }, values))
}

/// Read and verify a state file from disk.
pub fn read_file(path: &std::path::Path) -> Result<(ParticleId, Vec<f64>), StateFileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
