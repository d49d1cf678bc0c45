//! Labelled feature tables.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Training target: REAL = 0, FAKE = 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        if s.eq_ignore_ascii_case("real") {
            Some(Label::Real)
        } else if s.eq_ignore_ascii_case("fake") {
            Some(Label::Fake)
        } else {
            None
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An `n × c` table of feature vectors with one label per row and a domain tag.
///
/// Rows are stored contiguously in row-major order. Construction rejects
/// non-finite entries, so every consumer may assume finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<Label>,
    domain: String,
}

impl FeatureMatrix {
    pub fn new(dim: usize, values: Vec<f64>, labels: Vec<Label>, domain: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if values.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: labels.len() * dim,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            dim,
            values,
            labels,
            domain: domain.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<Label>, domain: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, rows.concat(), labels, domain)
    }

    /// All-REAL matrix from rows.
    pub fn real(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rows(rows, vec![Label::Real; rows.len()], "real")
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn set_domain(&mut self, domain: impl Into<String>) {
        self.domain = domain.into();
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Rows carrying `label`, in original order.
    pub fn filter(&self, label: Label) -> FeatureMatrix {
        self.select(|i| self.labels[i] == label)
    }

    /// Rows at the given indices, in the order given.
    pub fn take(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            dim: self.dim,
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain.clone(),
        }
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> FeatureMatrix {
        let idx: Vec<usize> = (0..self.n()).filter(|&i| keep(i)).collect();
        self.take(&idx)
    }

    /// Row-wise concatenation; the result carries `self`'s domain tag.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut out = self.clone();
        out.values.extend_from_slice(&other.values);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    /// Same labels and tag, new values produced row by row.
    pub(crate) fn map_rows(&self, dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> FeatureMatrix {
        let mut values = vec![0.0; self.n() * dim];
        for (src, dst) in self.rows().zip(values.chunks_exact_mut(dim)) {
            f(src, dst);
        }
        FeatureMatrix {
            dim,
            values,
            labels: self.labels.clone(),
            domain: self.domain.clone(),
        }
    }

    /// Errors with `LabelContamination` unless every row is REAL.
    pub fn ensure_real_only(&self) -> Result<()> {
        match self.labels.iter().position(|&l| l != Label::Real) {
            Some(row) => Err(Error::LabelContamination { row }),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
