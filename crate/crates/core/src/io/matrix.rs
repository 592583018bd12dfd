//! Binary intersection-matrix files, little-endian throughout:
//!
//! | field       | type                        |
//! |-------------|-----------------------------|
//! | magic       | `b"POIM"`                   |
//! | version     | u16 (= 1)                   |
//! | scene id    | u32 byte length + UTF-8     |
//! | frames F    | u32                         |
//! | objects O   | u32                         |
//! | frame ids   | F x u32                     |
//! | object ids  | O x u32                     |
//! | scores      | F x O f32, row-major        |

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::intersection::IntersectionMatrix;

pub const MAGIC: &[u8; 4] = b"POIM";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "poim";

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (expected {VERSION})")]
    VersionMismatch { found: u16 },
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("matrix has no frames")]
    EmptyMatrix,
    #[error("corrupt matrix file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact file size for the given shape, saturating at `u64::MAX` for
/// shapes no file could hold.
pub fn encoded_len(scene_id_len: usize, frames: usize, objects: usize) -> u64 {
    let (l, f, o) = (scene_id_len as u128, frames as u128, objects as u128);
    let n = 4 + 2 + 4 + l + 4 + 4 + 4 * f + 4 * o + 4 * f * o;
    u64::try_from(n).unwrap_or(u64::MAX)
}

pub fn encode_matrix(m: &IntersectionMatrix) -> Result<Vec<u8>, MatrixFileError> {
    if m.n_frames() == 0 {
        return Err(MatrixFileError::EmptyMatrix);
    }
    let id = m.scene_id().as_bytes();
    let mut out = Vec::with_capacity(encoded_len(id.len(), m.n_frames(), m.n_objects()) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(m.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_objects() as u32).to_le_bytes());
    for f in m.frame_ids() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for o in m.object_ids() {
        out.extend_from_slice(&o.to_le_bytes());
    }
    for s in m.scores() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let b = &self.data[self.pos..self.pos + 4];
        self.pos += 4;
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }

    fn need(&self, total: u64) -> Result<(), MatrixFileError> {
        if (self.data.len() as u64) < total {
            return Err(MatrixFileError::LengthMismatch {
                expected: total,
                actual: self.data.len() as u64,
            });
        }
        Ok(())
    }
}

pub fn decode_matrix(data: &[u8]) -> Result<IntersectionMatrix, MatrixFileError> {
    let mut r = Reader { data, pos: 0 };
    r.need(4)?;
    let magic: [u8; 4] = data[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(MatrixFileError::BadMagic(magic));
    }
    r.need(10)?;
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != VERSION {
        return Err(MatrixFileError::VersionMismatch { found: version });
    }
    r.pos = 6;
    let id_len = r.u32() as usize;
    r.need(encoded_len(id_len, 0, 0))?;
    let scene_id = std::str::from_utf8(&data[r.pos..r.pos + id_len])
        .map_err(|_| MatrixFileError::Corrupt("scene id is not UTF-8".into()))?
        .to_owned();
    r.pos += id_len;
    let frames = r.u32() as usize;
    let objects = r.u32() as usize;
    let expected = encoded_len(id_len, frames, objects);
    if data.len() as u64 != expected {
        return Err(MatrixFileError::LengthMismatch {
            expected,
            actual: data.len() as u64,
        });
    }
    if frames == 0 {
        return Err(MatrixFileError::EmptyMatrix);
    }
    let frame_ids: Vec<u32> = (0..frames).map(|_| r.u32()).collect();
    let object_ids: Vec<u32> = (0..objects).map(|_| r.u32()).collect();
    let scores: Vec<f32> = (0..frames * objects).map(|_| f32::from_bits(r.u32())).collect();
    IntersectionMatrix::new(scene_id, frame_ids, object_ids, scores).map_err(|e| MatrixFileError::Corrupt(e.to_string()))
}

pub fn write_matrix(m: &IntersectionMatrix, path: impl AsRef<Path>) -> Result<(), MatrixFileError> {
    fs::write(path, encode_matrix(m)?)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<IntersectionMatrix, MatrixFileError> {
    decode_matrix(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let m = IntersectionMatrix::new("abc", vec![0], vec![1], vec![0.5]).unwrap();
        let bytes = encode_matrix(&m).unwrap();
        assert_eq!(bytes.len(), 30 + 3);
        assert_eq!(bytes.len() as u64, encoded_len(3, 1, 1));
        assert_eq!(decode_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn empty_frames_rejected() {
        let m = IntersectionMatrix::new("abc", vec![], vec![1], vec![]).unwrap();
        assert!(matches!(encode_matrix(&m), Err(MatrixFileError::EmptyMatrix)));
    }

    #[test]
    fn header_errors() {
        let m = IntersectionMatrix::new("s", vec![0, 1], vec![1], vec![0.5, 1.0]).unwrap();
        let good = encode_matrix(&m).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_matrix(&bad), Err(MatrixFileError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_matrix(&bad), Err(MatrixFileError::VersionMismatch { found: 9 })));
        assert!(matches!(decode_matrix(&good[..good.len() - 1]), Err(MatrixFileError::LengthMismatch { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_matrix(&long), Err(MatrixFileError::LengthMismatch { .. })));
        let mut out_of_range = good.clone();
        let n = out_of_range.len();
        out_of_range[n - 4..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_matrix(&out_of_range), Err(MatrixFileError::Corrupt(_))));
        assert!(matches!(decode_matrix(b"PO"), Err(MatrixFileError::LengthMismatch { .. })));
        let mut huge = good[..10 + 1].to_vec();
        huge.extend_from_slice(&[0xff; 8]);
        assert!(matches!(decode_matrix(&huge), Err(MatrixFileError::LengthMismatch { .. })));
    }
}
