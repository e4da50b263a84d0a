//! Binary parameter checkpoints.
//!
//! Layout: `"3DSD"`, `u32` version, then for each network (normal, SVBRDF,
//! lighting) a `u32` layer count followed by `layer count + 1` `u32` widths,
//! then every parameter as a little-endian `f32`. No trailing bytes.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{AppearanceFields, FieldsArchitecture};

pub const MAGIC: &[u8; 4] = b"3DSD";
pub const VERSION: u32 = 1;
/// Guards allocation when reading a corrupted header.
const MAX_LAYERS: u32 = 64;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("shape mismatch: checkpoint has {found}, engine expects {expected}")]
    ShapeMismatch { expected: String, found: String },
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: FieldsArchitecture,
    pub theta: Vec<f32>,
}

impl Checkpoint {
    /// Checks the layer configuration and builds the fields.
    pub fn into_fields(self, expected: &FieldsArchitecture) -> Result<AppearanceFields<f32>, CheckpointError> {
        if &self.architecture != expected {
            return Err(CheckpointError::ShapeMismatch {
                expected: expected.to_string(),
                found: self.architecture.to_string(),
            });
        }
        AppearanceFields::from_theta(self.architecture, self.theta)
            .map_err(|e| CheckpointError::Header(e.to_string()))
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, fields: &AppearanceFields<f32>) -> Result<(), CheckpointError> {
    let arch = fields.architecture();
    let mut buf = Vec::with_capacity(64 + 4 * fields.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for widths in [&arch.normal, &arch.svbrdf, &arch.lighting] {
        buf.extend_from_slice(&((widths.len() - 1) as u32).to_le_bytes());
        for &width in widths {
            buf.extend_from_slice(&(width as u32).to_le_bytes());
        }
    }
    for v in fields.theta() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { expected: VERSION, found: version });
    }
    let mut nets = Vec::with_capacity(3);
    for name in ["normal", "svbrdf", "lighting"] {
        let layers = c.u32(&format!("{name} layer count"))?;
        if layers == 0 || layers > MAX_LAYERS {
            return Err(CheckpointError::Header(format!("{name} network has {layers} layers")));
        }
        let widths = (0..=layers)
            .map(|_| c.u32(&format!("{name} widths")).map(|w| w as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if widths.contains(&0) {
            return Err(CheckpointError::Header(format!("{name} network has a zero width: {widths:?}")));
        }
        nets.push(widths);
    }
    let lighting = nets.pop().expect("three nets");
    let svbrdf = nets.pop().expect("three nets");
    let normal = nets.pop().expect("three nets");
    let architecture = FieldsArchitecture { normal, svbrdf, lighting };
    let count = architecture.param_count();
    let body = c.take(count.checked_mul(4).ok_or_else(|| CheckpointError::Header("parameter count overflows".into()))?, "parameters")?;
    let theta = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    let rest = bytes.len() - c.pos;
    if rest != 0 {
        return Err(CheckpointError::TrailingBytes(rest));
    }
    Ok(Checkpoint { architecture, theta })
}

pub fn save_checkpoint(fields: &AppearanceFields<f32>, path: &Path) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), fields)
}

/// Loads a checkpoint and requires it to match `expected`.
pub fn load_checkpoint(path: &Path, expected: &FieldsArchitecture) -> Result<AppearanceFields<f32>, CheckpointError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?.into_fields(expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::seeded_rng;
    use rand::Rng;

    fn random_fields(arch: FieldsArchitecture, seed: u64) -> AppearanceFields<f32> {
        let mut f = AppearanceFields::<f32>::zeros(arch);
        let mut rng = seeded_rng(seed);
        for v in f.theta_mut() {
            *v = f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff);
        }
        f
    }

    fn encode(f: &AppearanceFields<f32>) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, f).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = FieldsArchitecture::with_hidden(&[16, 16], &[8], &[4, 4, 4]);
        let f = random_fields(arch.clone(), 1);
        let bytes = encode(&f);
        assert_eq!(&bytes[..4], b"3DSD");
        assert_eq!(bytes.len(), 8 + 4 * (1 + 4 + 1 + 3 + 1 + 5) + 4 * f.param_count());
        let back = read_checkpoint(bytes.as_slice()).unwrap().into_fields(&arch).unwrap();
        let a: Vec<u32> = f.theta().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.theta().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip_with_default_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.ckpt");
        let f = AppearanceFields::<f32>::initialized(FieldsArchitecture::default(), 3);
        save_checkpoint(&f, &path).unwrap();
        let back = load_checkpoint(&path, &FieldsArchitecture::default()).unwrap();
        assert_eq!(back.theta(), f.theta());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let f = random_fields(FieldsArchitecture::with_hidden(&[4], &[4], &[4]), 2);
        let mut bytes = encode(&f);
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(CheckpointError::BadMagic(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let f = random_fields(FieldsArchitecture::with_hidden(&[4], &[4], &[4]), 2);
        let mut bytes = encode(&f);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(CheckpointError::Version { found: 7, .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let f = random_fields(FieldsArchitecture::with_hidden(&[4], &[4], &[4]), 2);
        let bytes = encode(&f);
        for cut in [0, 3, 7, 12, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(extra.as_slice()), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let small = FieldsArchitecture::with_hidden(&[8, 8], &[8, 8], &[4, 4]);
        let f = random_fields(small, 4);
        let err = read_checkpoint(encode(&f).as_slice()).unwrap().into_fields(&FieldsArchitecture::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }));
        assert!(msg.contains("[42, 8, 8, 3]"), "{msg}");
        assert!(msg.contains("[42, 256, 256, 3]"), "{msg}");
    }

    #[test]
    fn absurd_header_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"3DSD");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(CheckpointError::Header(_))));
    }
}
