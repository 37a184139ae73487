//! Row-major sample buffers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `n` samples of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<F> {
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> Samples<F> {
    pub fn new(dim: usize, data: Vec<F>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Samples { dim, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        Samples::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn to_f64(&self) -> Samples<f64> {
        Samples {
            dim: self.dim,
            data: self.data.iter().map(|x| x.f64()).collect(),
        }
    }
}
