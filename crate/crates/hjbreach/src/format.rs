//! Binary field and mask files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "RCHF" | version u16 | dim_count u16
//! per dimension: lower f64 | upper f64 | points u32 | periodic u8
//! meta: step_index u32 | dt f64 | horizon f64 | digest_len u16 | digest utf-8
//! field payload: node_count f64 values, row-major, first axis outermost
//! mask payload:  0x01 | threshold f64 | node_count bytes (0 or 1)
//! ```
//!
//! The two payload sizes (`8N` and `9 + N`) never coincide, so readers can
//! tell fields and masks apart without a separate tag for fields.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hjbreach_core::analysis::Mask;
use hjbreach_core::{Axis, FieldMeta, GridSpec, ValueField};
use serde::Serialize;

use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"RCHF";
pub const VERSION: u16 = 1;
pub const MASK_FLAG: u8 = 0x01;

/// Contents of a field or mask file.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldFile {
    Field(ValueField),
    Mask { mask: Mask, meta: FieldMeta },
}

fn write_header(buf: &mut Vec<u8>, grid: &GridSpec, meta: &FieldMeta) -> Result<(), FormatError> {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let dims = u16::try_from(grid.dim()).map_err(|_| FormatError::Invalid("too many dimensions".into()))?;
    buf.extend_from_slice(&dims.to_le_bytes());
    for a in grid.axes() {
        buf.extend_from_slice(&a.lower.to_le_bytes());
        buf.extend_from_slice(&a.upper.to_le_bytes());
        let points =
            u32::try_from(a.points).map_err(|_| FormatError::Invalid("axis too long".into()))?;
        buf.extend_from_slice(&points.to_le_bytes());
        buf.push(u8::from(a.periodic));
    }
    buf.extend_from_slice(&meta.step_index.to_le_bytes());
    buf.extend_from_slice(&meta.dt.to_le_bytes());
    buf.extend_from_slice(&meta.horizon.to_le_bytes());
    let digest = meta.problem_digest.as_bytes();
    let len =
        u16::try_from(digest.len()).map_err(|_| FormatError::Invalid("digest too long".into()))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(digest);
    Ok(())
}

pub fn encode_field(field: &ValueField) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::with_capacity(64 + 8 * field.values().len());
    write_header(&mut buf, field.grid(), field.meta())?;
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn encode_mask(mask: &Mask, meta: &FieldMeta) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::with_capacity(64 + mask.cells.len());
    write_header(&mut buf, &mask.grid, meta)?;
    buf.push(MASK_FLAG);
    buf.extend_from_slice(&mask.threshold.to_le_bytes());
    buf.extend_from_slice(&mask.cells);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(FormatError::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<FieldFile, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    r.take(4)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dims = r.u16()? as usize;
    let mut axes = Vec::with_capacity(dims);
    for _ in 0..dims {
        let lower = r.f64()?;
        let upper = r.f64()?;
        let points = r.u32()? as usize;
        let periodic = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(FormatError::Invalid(format!("periodic flag {other}"))),
        };
        axes.push(Axis {
            lower,
            upper,
            points,
            periodic,
        });
    }
    let grid = GridSpec::new(axes)?;
    let step_index = r.u32()?;
    let dt = r.f64()?;
    let horizon = r.f64()?;
    let len = r.u16()? as usize;
    let problem_digest = String::from_utf8(r.take(len)?.to_vec())
        .map_err(|_| FormatError::Invalid("digest is not utf-8".into()))?;
    let meta = FieldMeta {
        step_index,
        dt,
        horizon,
        problem_digest,
    };

    let n = grid.node_count();
    let field_len = n * 8;
    let mask_len = 9 + n;
    let rest = r.remaining();
    if rest == mask_len && bytes[r.pos] == MASK_FLAG {
        r.u8()?;
        let threshold = r.f64()?;
        let cells = r.take(n)?.to_vec();
        if cells.iter().any(|&c| c > 1) {
            return Err(FormatError::Invalid("mask cell outside {0, 1}".into()));
        }
        return Ok(FieldFile::Mask {
            mask: Mask {
                grid,
                threshold,
                cells,
            },
            meta,
        });
    }
    if rest < field_len {
        return Err(FormatError::Truncated {
            expected: r.pos + field_len,
            found: bytes.len(),
        });
    }
    if rest > field_len {
        return Err(FormatError::TrailingBytes(rest - field_len));
    }
    let values = r
        .take(field_len)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(FieldFile::Field(ValueField::new(grid, values, meta)?))
}

/// `field.rchf` -> `field.meta.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

#[derive(Serialize)]
struct SidecarAxis {
    lower: f64,
    upper: f64,
    points: usize,
    periodic: bool,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    version: u16,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    step_index: u32,
    dt: f64,
    horizon: f64,
    problem_digest: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_max: Option<f64>,
    axes: Vec<SidecarAxis>,
}

fn sidecar_text(
    grid: &GridSpec,
    meta: &FieldMeta,
    kind: &'static str,
    threshold: Option<f64>,
    range: Option<(f64, f64)>,
) -> Result<String, FormatError> {
    let s = Sidecar {
        format: "RCHF",
        version: VERSION,
        kind,
        threshold,
        step_index: meta.step_index,
        dt: meta.dt,
        horizon: meta.horizon,
        problem_digest: &meta.problem_digest,
        value_min: range.map(|r| r.0),
        value_max: range.map(|r| r.1),
        axes: grid
            .axes()
            .iter()
            .map(|a| SidecarAxis {
                lower: a.lower,
                upper: a.upper,
                points: a.points,
                periodic: a.periodic,
            })
            .collect(),
    };
    toml::to_string(&s).map_err(|e| FormatError::Invalid(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Writes the binary file and its `.meta.toml` sidecar.
pub fn save_field(field: &ValueField, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_field(field)?)?;
    let text = sidecar_text(
        field.grid(),
        field.meta(),
        "field",
        None,
        Some((field.min(), field.max())),
    )?;
    write_file(&sidecar_path(path), text.as_bytes())
}

pub fn save_mask(mask: &Mask, meta: &FieldMeta, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_mask(mask, meta)?)?;
    let text = sidecar_text(&mask.grid, meta, "mask", Some(mask.threshold), None)?;
    write_file(&sidecar_path(path), text.as_bytes())
}

pub fn load(path: &Path) -> Result<FieldFile, FormatError> {
    let bytes = fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Like [`load`] but rejects mask files.
pub fn load_field(path: &Path) -> Result<ValueField, FormatError> {
    match load(path)? {
        FieldFile::Field(f) => Ok(f),
        FieldFile::Mask { .. } => Err(FormatError::Invalid(format!(
            "{} holds a mask, not a field",
            path.display()
        ))),
    }
}
