//! IDX container parsing (the stock MNIST distribution format).
//!
//! Images: big-endian magic 0x00000803, then counts n/rows/cols, then
//! n*rows*cols unsigned bytes. Labels: magic 0x00000801, count n, then n
//! unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor64;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                needed: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads an IDX image file into an `[n, rows, cols]` tensor of raw pixel
/// values in `[0, 255]`.
pub fn load_idx_images(path: &Path) -> Result<Tensor64> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor64> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.read_u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = r.read_u32_be()? as usize;
    let rows = r.read_u32_be()? as usize;
    let cols = r.read_u32_be()? as usize;
    let payload = r.take(n * rows * cols)?;
    let data = payload.iter().map(|&b| b as f64).collect();
    Ok(Tensor64::new(vec![n, rows, cols], data))
}

/// Reads an IDX label file; each label must lie in `[0, 9]`.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.read_u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = r.read_u32_be()? as usize;
    let payload = r.take(n)?;
    for (index, &value) in payload.iter().enumerate() {
        if value > 9 {
            return Err(Error::LabelOutOfRange { index, value });
        }
    }
    Ok(payload.to_vec())
}

/// Serializes an `[n, rows, cols]` tensor back to IDX image bytes.
/// Pixel values must already be integral and within `[0, 255]`.
pub fn write_idx_images(images: &Tensor64) -> Vec<u8> {
    let shape = images.shape();
    assert_eq!(shape.len(), 3, "expected [n, rows, cols]");
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for &extent in shape {
        out.extend_from_slice(&(extent as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| v as u8));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_byte_identical() {
        let pixels: Vec<f64> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as f64).collect();
        let t = Tensor64::new(vec![2, 3, 3], pixels);
        let bytes = write_idx_images(&t);
        let back = parse_idx_images(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(write_idx_images(&back), bytes);
    }

    #[test]
    fn wrong_container_kind_is_bad_magic() {
        let mut bytes = write_idx_labels(&[1, 2, 3]);
        // a label file handed to the image parser
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::BadMagic { found: LABEL_MAGIC, .. }));
        bytes.truncate(6);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn label_out_of_range() {
        let bytes = {
            let mut b = Vec::new();
            b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
            b.extend_from_slice(&2u32.to_be_bytes());
            b.extend_from_slice(&[3, 12]);
            b
        };
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(Error::LabelOutOfRange { index: 1, value: 12 })
        ));
    }

    #[test]
    fn empty_label_payload() {
        let bytes = write_idx_labels(&[]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), Vec::<u8>::new());
    }
}
