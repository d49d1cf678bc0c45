//! Moment-based Gaussianity diagnostics.
//!
//! All moments use the biased (1/n) estimators. The aggregate score is the
//! per-dimension Jarque–Bera weighting `skew²/6 + kurt²/24`, averaged over
//! dimensions.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Relative standard-deviation threshold below which a sample is treated as constant.
const DEGENERATE_REL_SD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub per_dim_skewness: Vec<f64>,
    pub per_dim_excess_kurtosis: Vec<f64>,
    pub aggregate_score: f64,
}

impl MomentReport {
    fn from_moments(skew: Vec<f64>, kurt: Vec<f64>) -> Self {
        let c = skew.len() as f64;
        let aggregate_score = skew
            .iter()
            .zip(&kurt)
            .map(|(s, k)| s * s / 6.0 + k * k / 24.0)
            .sum::<f64>()
            / c;
        Self {
            per_dim_skewness: skew,
            per_dim_excess_kurtosis: kurt,
            aggregate_score,
        }
    }

    pub fn max_abs_kurtosis(&self) -> f64 {
        self.per_dim_excess_kurtosis.iter().fold(0.0_f64, |m, k| m.max(k.abs()))
    }
}

struct Central {
    m2: f64,
    m3: f64,
    m4: f64,
}

fn central_moments(xs: &[f64]) -> Option<Central> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2.sqrt() <= DEGENERATE_REL_SD * (1.0 + mean.abs()) {
        None
    } else {
        Some(Central { m2, m3, m4 })
    }
}

fn check_len(xs: &[f64], needed: usize) -> Result<()> {
    if xs.len() < needed {
        return Err(Error::InsufficientSamples { needed, got: xs.len() });
    }
    Ok(())
}

/// Third standardized central moment.
pub fn skewness(xs: &[f64]) -> Result<f64> {
    check_len(xs, 3)?;
    let m = central_moments(xs).ok_or(Error::DegenerateVariance { dim: 0 })?;
    Ok(m.m3 / m.m2.powf(1.5))
}

/// Fourth standardized central moment minus 3.
pub fn excess_kurtosis(xs: &[f64]) -> Result<f64> {
    check_len(xs, 4)?;
    let m = central_moments(xs).ok_or(Error::DegenerateVariance { dim: 0 })?;
    Ok(m.m4 / (m.m2 * m.m2) - 3.0)
}

/// Per-dimension skewness and excess kurtosis of the columns of `x`.
pub fn moment_report(x: &FeatureMatrix) -> Result<MomentReport> {
    check_len(x.values(), 4 * x.dim())?;
    let mut skew = Vec::with_capacity(x.dim());
    let mut kurt = Vec::with_capacity(x.dim());
    for dim in 0..x.dim() {
        let col = x.column(dim);
        let m = central_moments(&col).ok_or(Error::DegenerateVariance { dim })?;
        skew.push(m.m3 / m.m2.powf(1.5));
        kurt.push(m.m4 / (m.m2 * m.m2) - 3.0);
    }
    Ok(MomentReport::from_moments(skew, kurt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Uniform on [0, 1).
    Uniform,
    /// Exponential with unit rate.
    Exponential,
    /// Bernoulli with success probability 1/4.
    Bernoulli,
}

pub const BERNOULLI_P: f64 = 0.25;

impl Source {
    pub fn draw(self, rng: &mut Rng) -> f64 {
        let u = rng::open01(rng);
        match self {
            Source::Uniform => u,
            Source::Exponential => -u.ln(),
            Source::Bernoulli => f64::from(u < BERNOULLI_P),
        }
    }

    /// Analytic (skewness, excess kurtosis) of a single draw.
    pub fn moments(self) -> (f64, f64) {
        match self {
            Source::Uniform => (0.0, -1.2),
            Source::Exponential => (2.0, 6.0),
            Source::Bernoulli => {
                let (p, q) = (BERNOULLI_P, 1.0 - BERNOULLI_P);
                ((q - p) / (p * q).sqrt(), (1.0 - 6.0 * p * q) / (p * q))
            }
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Source::Uniform),
            "exponential" => Ok(Source::Exponential),
            "bernoulli" => Ok(Source::Bernoulli),
            other => Err(Error::InvalidArgument(format!("unknown source {other:?}"))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Uniform => "uniform",
            Source::Exponential => "exponential",
            Source::Bernoulli => "bernoulli",
        })
    }
}

/// Moment report of `trials` batch means of `batch_size` draws from `source`.
///
/// Trial `t` draws from substream `t` of a key taken from `rng`.
pub fn clt_probe(source: Source, batch_size: usize, trials: usize, rng: &mut Rng) -> Result<MomentReport> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if trials < 100 {
        return Err(Error::InvalidArgument("clt probe needs at least 100 trials".into()));
    }
    let key = rng::split_key(rng);
    let means: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::substream(key, t as u64);
            (0..batch_size).map(|_| source.draw(&mut r)).sum::<f64>() / batch_size as f64
        })
        .collect();
    let x = FeatureMatrix::new(1, means, vec![crate::data::Label::Real; trials], source.to_string())?;
    moment_report(&x)
}
