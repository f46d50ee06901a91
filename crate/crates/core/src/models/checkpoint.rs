//! Versioned JSON model container.
//!
//! ```text
//! {"format":"deltaguide-model","version":1,"kind":"lstm",
//!  "input_dim":20,"hidden_dim":32,
//!  "tensors":{"w":{"shape":[128,20],"data":[..row-major..]},..},
//!  "metadata":{..}}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::LinearPredictor;
use super::rnn::{CellType, Head, RecurrentParams};
use crate::error::{Error, Result};

pub const FORMAT: &str = "deltaguide-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        Tensor {
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn from_vector(v: &[f64]) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] if r * c == self.data.len() => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => Err(Error::Data(format!("tensor shape {:?} is not a matrix of {} values", self.shape, self.data.len()))),
        }
    }

    fn vector(&self) -> Result<DVector<f64>> {
        match self.shape[..] {
            [n] if n == self.data.len() => Ok(DVector::from_column_slice(&self.data)),
            _ => Err(Error::Data(format!("tensor shape {:?} is not a vector", self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `glm`, `glmer`, `lm`, `lmer`, `lstm` or `gru`.
    pub kind: String,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    pub tensors: BTreeMap<String, Tensor>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_recurrent(params: &RecurrentParams, metadata: serde_json::Value) -> Self {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".into(), Tensor::from_matrix(&params.w));
        tensors.insert("u".into(), Tensor::from_matrix(&params.u));
        tensors.insert("b".into(), Tensor::from_vector(params.b.as_slice()));
        for (prefix, head) in [("pretrain", &params.pretrain_head), ("task", &params.task_head)] {
            if let Some(h) = head {
                tensors.insert(format!("{prefix}_w"), Tensor::from_matrix(&h.w));
                tensors.insert(format!("{prefix}_b"), Tensor::from_vector(h.b.as_slice()));
            }
        }
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: match params.cell {
                CellType::Lstm => "lstm".into(),
                CellType::Gru => "gru".into(),
            },
            input_dim: params.input_dim,
            hidden_dim: params.hidden_dim,
            tensors,
            metadata,
        }
    }

    pub fn to_recurrent(&self) -> Result<RecurrentParams> {
        let cell = match self.kind.as_str() {
            "lstm" => CellType::Lstm,
            "gru" => CellType::Gru,
            other => return Err(Error::Data(format!("checkpoint kind {other} is not recurrent"))),
        };
        let get = |name: &str| {
            self.tensors
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))
        };
        let mut p = RecurrentParams::zeros(cell, self.input_dim, self.hidden_dim);
        let (w, u, b) = (get("w")?.matrix()?, get("u")?.matrix()?, get("b")?.vector()?);
        if w.shape() != p.w.shape() || u.shape() != p.u.shape() || b.len() != p.b.len() {
            return Err(Error::Dimension("checkpoint tensors disagree with the declared sizes".into()));
        }
        (p.w, p.u, p.b) = (w, u, b);
        let head = |prefix: &str| -> Result<Option<Head>> {
            match (self.tensors.get(&format!("{prefix}_w")), self.tensors.get(&format!("{prefix}_b"))) {
                (Some(w), Some(b)) => {
                    let h = Head { w: w.matrix()?, b: b.vector()? };
                    if h.w.ncols() != self.hidden_dim || h.b.len() != h.w.nrows() {
                        return Err(Error::Dimension(format!("{prefix} head shape")));
                    }
                    Ok(Some(h))
                }
                (None, None) => Ok(None),
                _ => Err(Error::Data(format!("incomplete {prefix} head"))),
            }
        };
        p.pretrain_head = head("pretrain")?;
        p.task_head = head("task")?;
        Ok(p)
    }

    pub fn from_linear(kind: &str, model: &LinearPredictor, metadata: serde_json::Value) -> Self {
        let mut tensors = BTreeMap::new();
        tensors.insert("intercept".into(), Tensor::from_vector(&[model.intercept]));
        tensors.insert("coefficients".into(), Tensor::from_vector(&model.coefficients));
        if let Some(c) = &model.covariance {
            tensors.insert("covariance".into(), Tensor::from_matrix(c));
        }
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            input_dim: model.coefficients.len(),
            hidden_dim: 0,
            tensors,
            metadata,
        }
    }

    pub fn to_linear(&self) -> Result<LinearPredictor> {
        let intercept = self
            .tensors
            .get("intercept")
            .and_then(|t| t.data.first().copied())
            .ok_or_else(|| Error::Data("checkpoint lacks an intercept".into()))?;
        let coefficients = self
            .tensors
            .get("coefficients")
            .ok_or_else(|| Error::Data("checkpoint lacks coefficients".into()))?
            .data
            .clone();
        let covariance = self.tensors.get("covariance").map(Tensor::matrix).transpose()?;
        Ok(LinearPredictor {
            intercept,
            coefficients,
            covariance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if c.format != FORMAT {
            return Err(Error::Data(format!("not a model checkpoint: format {}", c.format)));
        }
        if c.version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recurrent_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = RecurrentParams::init(CellType::Gru, 3, 4, &mut rng);
        p.task_head = Some(Head::init(1, 4, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::from_recurrent(&p, serde_json::json!({"seed": 1})).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.to_recurrent().unwrap(), p);
        assert_eq!(back.tensors["w"].shape, vec![12, 3]);
        assert_eq!(back.tensors["w"].data[1], p.w[(0, 1)]);
    }

    #[test]
    fn linear_round_trip_and_version_check() {
        let m = LinearPredictor {
            intercept: 0.5,
            coefficients: vec![1.0, -2.0],
            covariance: Some(DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 3.0])),
        };
        let mut c = Checkpoint::from_linear("glm", &m, serde_json::Value::Null);
        assert_eq!(c.to_linear().unwrap(), m);
        assert!(c.to_recurrent().is_err());
        c.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        c.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Data(_))));
    }
}
