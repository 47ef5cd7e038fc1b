use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    OneHot,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    values: Vec<f64>,
    kind: CodeKind,
}

impl LatentCode {
    pub fn one_hot(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Dimension {
                expected: dim,
                got: index,
            });
        }
        let mut values = vec![0.0; dim];
        values[index] = 1.0;
        Ok(Self {
            values,
            kind: CodeKind::OneHot,
        })
    }

    pub fn continuous(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: CodeKind::Continuous,
        }
    }

    /// Checks the one-hot invariant when `kind` says so.
    pub fn new(values: Vec<f64>, kind: CodeKind) -> Result<Self> {
        if kind == CodeKind::OneHot {
            let ones = values.iter().filter(|&&v| v == 1.0).count();
            let zeros = values.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != values.len() {
                return Err(Error::InvalidSpec(format!("{values:?} is not one-hot")));
            }
        }
        Ok(Self { values, kind })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Index of the hot entry for one-hot codes.
    pub fn domain(&self) -> Option<usize> {
        match self.kind {
            CodeKind::OneHot => self.values.iter().position(|&v| v == 1.0),
            CodeKind::Continuous => None,
        }
    }
}

/// Stack codes into a [B, S] batch.
pub fn codes_tensor(codes: &[&LatentCode]) -> Result<Tensor> {
    let s = codes.first().map_or(0, |c| c.dim());
    let mut data = Vec::with_capacity(codes.len() * s);
    for c in codes {
        if c.dim() != s {
            return Err(Error::Dimension {
                expected: s,
                got: c.dim(),
            });
        }
        data.extend_from_slice(c.values());
    }
    Tensor::new(&[codes.len(), s], data)
}

/// The code as S constant planes of size M x N.
pub fn replicate_latent(c: &LatentCode, m: usize, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(c.dim() * m * n);
    for &v in c.values() {
        data.extend(std::iter::repeat_n(v, m * n));
    }
    Tensor::new(&[c.dim(), m, n], data).expect("extent product matches")
}
