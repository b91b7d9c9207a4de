//! Binary checkpoints: `b"SGCK"`, a `u32` version, a `u64` header length,
//! a JSON header, then every parameter tensor as little-endian `f32` in
//! header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ScoreModel, TrainConfig};
use crate::data::{Normalization, TableSchema};
use crate::diffcalc::Array;
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dim: usize,
    spec: DiffusionSpec,
    architecture: Architecture,
    frequencies: Vec<f32>,
    tensors: Vec<TensorInfo>,
    normalization: Option<Normalization>,
    schema: Option<TableSchema>,
    train: Option<TrainConfig>,
    #[serde(default)]
    final_loss: Option<f64>,
}

/// A trained model together with what is needed to map its samples back to
/// data space.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ScoreModel,
    pub normalization: Option<Normalization>,
    pub schema: Option<TableSchema>,
    pub train: Option<TrainConfig>,
    pub final_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: ScoreModel) -> Self {
        Self {
            model,
            normalization: None,
            schema: None,
            train: None,
            final_loss: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            e => e,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            e => e,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let m = &self.model;
        let tensors = m
            .architecture()
            .tensor_shapes(m.dim())
            .into_iter()
            .map(|(name, shape)| TensorInfo { name, shape })
            .collect();
        let header = Header {
            dim: m.dim(),
            spec: *m.spec(),
            architecture: m.architecture().clone(),
            frequencies: m.frequencies().to_vec(),
            tensors,
            normalization: self.normalization.clone(),
            schema: self.schema.clone(),
            train: self.train.clone(),
            final_loss: self.final_loss,
        };
        let json = serde_json::to_vec(&header)?;
        let io = |e| Error::io("<checkpoint>", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for p in m.parameters() {
            for v in p.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e| Error::io("<checkpoint>", e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let len = u64::from_le_bytes(b8);
        if len > 1 << 30 {
            return Err(Error::Checkpoint(format!("header length {len} is implausible")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json)?;
        header.architecture.validate()?;
        header.spec.validate()?;
        let expected = header.architecture.tensor_shapes(header.dim);
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((n, s), t)| *n != t.name || *s != t.shape)
        {
            return Err(Error::Checkpoint("tensor table does not match the architecture".into()));
        }
        if header.frequencies.len() * 2 != header.architecture.embedding_dim {
            return Err(Error::Checkpoint("frequency count does not match embedding_dim".into()));
        }
        let mut values = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let [rows, cols] = t.shape;
            let mut bytes = vec![0u8; rows * cols * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Checkpoint(format!("truncated tensor {}", t.name)))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            values.push(Array::matrix(rows, cols, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        let model = ScoreModel::from_parts(header.spec, header.architecture, header.dim, header.frequencies, values);
        Ok(Self {
            model,
            normalization: header.normalization,
            schema: header.schema,
            train: header.train,
            final_loss: header.final_loss,
        })
    }
}
