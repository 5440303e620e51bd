//! IDX image/label files (the MNIST container format).
//!
//! Headers are big-endian: a magic word (0x00000803 for 3-D image files,
//! 0x00000801 for 1-D label files) followed by the dimension sizes, then the
//! raw u8 payload. Pixels load as `byte / 255` in [0, 1].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use std::io::Cursor;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image file; each image becomes a flat `rows·cols` tensor
/// with pixels scaled to [0, 1].
pub fn load_idx_images<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Tensor<S>>> {
    let bytes = std::fs::read(&path)?;
    parse_idx_images(&bytes)
}

/// Loads an IDX label file as raw class indices.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let bytes = std::fs::read(&path)?;
    parse_idx_labels(&bytes)
}

fn read_header_u32(cursor: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cursor
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("truncated IDX header while reading {what}")))
}

pub(crate) fn parse_idx_images<S: Scalar>(bytes: &[u8]) -> Result<Vec<Tensor<S>>> {
    let mut cursor = Cursor::new(bytes);
    let magic = read_header_u32(&mut cursor, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let count = read_header_u32(&mut cursor, "image count")? as usize;
    let rows = read_header_u32(&mut cursor, "row count")? as usize;
    let cols = read_header_u32(&mut cursor, "column count")? as usize;
    let pixels = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX image dimensions overflow".into()))?;
    let payload = &bytes[cursor.position() as usize..];
    if payload.len() < pixels {
        return Err(Error::Format(format!(
            "IDX image payload truncated: need {pixels} bytes, have {}",
            payload.len()
        )));
    }
    if payload.len() > pixels {
        return Err(Error::Format(format!(
            "IDX image file has {} trailing bytes",
            payload.len() - pixels
        )));
    }
    let scale = S::from_config(255.0);
    payload
        .chunks_exact(rows * cols)
        .map(|chunk| {
            Tensor::new(
                chunk
                    .iter()
                    .map(|&b| S::from_u8(b).unwrap() / scale)
                    .collect(),
            )
        })
        .collect()
}

pub(crate) fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut cursor = Cursor::new(bytes);
    let magic = read_header_u32(&mut cursor, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let count = read_header_u32(&mut cursor, "label count")? as usize;
    let payload = &bytes[cursor.position() as usize..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "IDX label payload holds {} bytes, header claims {count}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as u32).collect())
}

/// Writes an IDX image file from raw u8 pixel rows (fixture/tooling path).
pub fn write_idx_images(
    path: impl AsRef<Path>,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut out: Vec<u8> = Vec::with_capacity(16 + images.len() * rows * cols);
    out.write_u32::<BigEndian>(IMAGES_MAGIC).unwrap();
    out.write_u32::<BigEndian>(images.len() as u32).unwrap();
    out.write_u32::<BigEndian>(rows as u32).unwrap();
    out.write_u32::<BigEndian>(cols as u32).unwrap();
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Contract(format!(
                "image holds {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(img);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes an IDX label file (fixture/tooling path).
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out: Vec<u8> = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABELS_MAGIC).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}
