//! Binary model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SSM1"                      4 bytes
//! header length               u64
//! header                      UTF-8 JSON
//! mean length, mean           u64, f64 × d·n
//! eigenvalue length, values   u64, f64 × q
//! basis length, basis         u64, f64 × d·n·q (column-major)
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Shape, ShapeModel};

pub const MAGIC: &[u8; 4] = b"SSM1";
pub const FORMAT_VERSION: u32 = 1;

/// Triangle as vertex indices (0-based).
pub type Triangle = [usize; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub d: usize,
    pub n: usize,
    pub q: usize,
    pub created: String,
    pub label: String,
    pub topology: Option<Vec<Triangle>>,
}

/// Descriptive fields stored next to a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMeta {
    pub label: String,
    /// Free-form creation stamp. Left to the caller so that writes stay
    /// reproducible.
    pub created: String,
    pub topology: Option<Vec<Triangle>>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            label: String::new(),
            created: "unspecified".into(),
            topology: None,
        }
    }
}

impl ModelMeta {
    pub fn labelled(label: impl Into<String>) -> Self {
        ModelMeta {
            label: label.into(),
            ..ModelMeta::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: ShapeModel,
    pub meta: ModelMeta,
}

fn push_segment(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &ShapeModel, meta: &ModelMeta) -> Result<Vec<u8>> {
    if let Some(tris) = &meta.topology {
        check_topology(tris, model.n())?;
    }
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        d: model.d(),
        n: model.n(),
        q: model.q(),
        created: meta.created.clone(),
        label: meta.label.clone(),
        topology: meta.topology.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(4 + 8 + json.len() + 24 + 8 * model.dim() * (model.q() + 1) + 8 * model.q());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_segment(&mut out, model.mean().as_slice());
    push_segment(&mut out, model.eigenvalues().as_slice());
    push_segment(&mut out, model.basis().as_slice());
    Ok(out)
}

pub(crate) fn check_topology(tris: &[Triangle], n: usize) -> Result<()> {
    if let Some((i, t)) = tris.iter().enumerate().find(|(_, t)| t.iter().any(|&v| v >= n)) {
        return Err(Error::Input(format!(
            "triangle {i} {t:?} references a vertex outside 0..{n}"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if len > remaining {
            return Err(Error::format(
                self.pos as u64,
                format!("{what} needs {len} bytes but only {remaining} remain"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn segment(&mut self, name: &str, expected: usize) -> Result<Vec<f64>> {
        let at = self.pos as u64;
        let len = self.u64(&format!("{name} length"))?;
        if len != expected as u64 {
            return Err(Error::format(
                at,
                format!("{name} declares {len} values but the header implies {expected}"),
            ));
        }
        let start = self.pos;
        let bytes = self.take(expected * 8, &format!("{name} payload"))?;
        bytes
            .chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::format(
                        (start + 8 * i) as u64,
                        format!("{name} value {i} is not finite"),
                    ))
                }
            })
            .collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"SSM1\""));
    }
    let header_len = r.u64("header length")?;
    let header_at = r.pos as u64;
    let header_len = usize::try_from(header_len)
        .map_err(|_| Error::format(4, "header length does not fit in memory"))?;
    let json = r.take(header_len, "header")?;
    let header: ModelHeader = serde_json::from_slice(json)
        .map_err(|e| Error::format(header_at, format!("invalid header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            header_at,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    if !matches!(header.d, 2 | 3) || header.n == 0 {
        return Err(Error::format(header_at, format!("invalid layout d={} n={}", header.d, header.n)));
    }
    let dim = header
        .d
        .checked_mul(header.n)
        .ok_or_else(|| Error::format(header_at, "d·n overflows"))?;
    let basis_len = dim
        .checked_mul(header.q)
        .ok_or_else(|| Error::format(header_at, "d·n·q overflows"))?;
    if let Some(tris) = &header.topology {
        check_topology(tris, header.n).map_err(|e| Error::format(header_at, e.to_string()))?;
    }
    let mean = r.segment("mean", dim)?;
    let eig_at = r.pos as u64;
    let eigenvalues = r.segment("eigenvalues", header.q)?;
    let basis = r.segment("basis", basis_len)?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after the basis", bytes.len() - r.pos),
        ));
    }
    let mean = Shape::new(mean, header.d, header.n).map_err(|e| Error::format(header_at, e.to_string()))?;
    let model = ShapeModel::new(
        mean,
        DMatrix::from_vec(dim, header.q, basis),
        DVector::from_vec(eigenvalues),
    )
    .map_err(|e| Error::format(eig_at, format!("invalid model: {e}")))?;
    Ok(ModelFile {
        model,
        meta: ModelMeta {
            label: header.label,
            created: header.created,
            topology: header.topology,
        },
    })
}

pub fn save_model_with(path: impl AsRef<Path>, model: &ShapeModel, meta: &ModelMeta) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_model(path: impl AsRef<Path>, model: &ShapeModel) -> Result<()> {
    save_model_with(path, model, &ModelMeta::default())
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ShapeModel> {
    Ok(load_model_file(path)?.model)
}
