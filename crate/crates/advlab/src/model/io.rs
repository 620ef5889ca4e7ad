//! Model persistence.
//!
//! Layout: magic `ADVL`, format version (u16 LE), architecture tag (u8),
//! standardization mean and sd (two f64 LE), a shape table (u32 LE tensor
//! count, then per tensor a u32 LE rank and extents), then all weights as
//! f32 LE in declaration order.

use std::fs;
use std::path::Path;

use crate::dataset::Standardization;
use crate::error::{Error, Result};

use super::{ConvNetModel, ConvNetSize, LogisticModel, Model, IMAGE_LEN, N_CLASSES};

pub const MODEL_MAGIC: [u8; 4] = *b"ADVL";
pub const MODEL_VERSION: u16 = 1;

const ARCH_LOGISTIC: u8 = 0;
const ARCH_CONVNET: u8 = 1;

fn tensor_shapes(model: &Model) -> Vec<Vec<u32>> {
    match model {
        Model::Logistic(_) => vec![
            vec![N_CLASSES as u32, IMAGE_LEN as u32],
            vec![N_CLASSES as u32],
        ],
        Model::ConvNet(m) => {
            let (f1, f2, hidden) = m.size().dims();
            let flat = f2 * 16;
            vec![
                vec![f1 as u32, 1, 5, 5],
                vec![f1 as u32],
                vec![f2 as u32, f1 as u32, 5, 5],
                vec![f2 as u32],
                vec![hidden as u32, flat as u32],
                vec![hidden as u32],
                vec![N_CLASSES as u32, hidden as u32],
                vec![N_CLASSES as u32],
            ]
        }
    }
}

pub fn model_bytes(model: &Model) -> Vec<u8> {
    let std = model.standardization();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(match model {
        Model::Logistic(_) => ARCH_LOGISTIC,
        Model::ConvNet(_) => ARCH_CONVNET,
    });
    out.extend_from_slice(&std.global_mean.to_le_bytes());
    out.extend_from_slice(&std.global_sd.to_le_bytes());
    let shapes = tensor_shapes(model);
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for shape in &shapes {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            out.extend_from_slice(&extent.to_le_bytes());
        }
    }
    for &w in model.params() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    out
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_bytes(model)).map_err(|e| Error::io(path, e))
}

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

    fn u16_le(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64_le(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn parse_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::BadHeader);
    }
    let version = r.u16_le()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let arch = r.take(1)?[0];
    let standardization = Standardization {
        global_mean: r.f64_le()?,
        global_sd: r.f64_le()?,
    };
    if !(standardization.global_sd > 0.0) {
        return Err(Error::BadHeader);
    }
    let n_tensors = r.u32_le()? as usize;
    let mut shapes = Vec::with_capacity(n_tensors);
    let mut total = 0usize;
    for _ in 0..n_tensors {
        let rank = r.u32_le()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32_le()? as usize);
        }
        total += shape.iter().product::<usize>();
        shapes.push(shape);
    }
    let payload = r.take(total * 4)?;
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();

    match arch {
        ARCH_LOGISTIC => {
            if shapes != vec![vec![N_CLASSES, IMAGE_LEN], vec![N_CLASSES]] {
                return Err(Error::BadHeader);
            }
            Ok(Model::Logistic(LogisticModel::from_params(
                standardization,
                params,
            )))
        }
        ARCH_CONVNET => {
            if shapes.len() != 8 || shapes[0].len() != 4 || shapes[2].len() != 4 {
                return Err(Error::BadHeader);
            }
            let f1 = shapes[0][0];
            let f2 = shapes[2][0];
            let hidden = shapes[4][0];
            let size = ConvNetSize::from_dims(f1, f2, hidden).ok_or(Error::BadHeader)?;
            Ok(Model::ConvNet(ConvNetModel::from_params(
                standardization,
                size,
                params,
            )))
        }
        _ => Err(Error::BadHeader),
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes)
}
