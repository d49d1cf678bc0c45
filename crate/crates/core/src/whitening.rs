//! Fixed and distribution-sampled whitening transforms.
//!
//! A transform maps `x ↦ W (x − μ)`. The fixed transform takes `μ` and the
//! covariance from real data. The sampled transform draws `μ′` and `S′`
//! from a [`MetaDistribution`] and whitens with `1/√S′`, either per
//! dimension ([`Mode::Diagonal`]) or as a symmetric matrix inverse square
//! root ([`Mode::Full`]).

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::rng::Rng;
use crate::stats::{self, MetaDistribution, Mode, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fixed,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scale {
    Diagonal(Vec<f64>),
    Full(SymMatrix),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Variance draws (diagonal) or eigenvalues (full) raised to the floor.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub center: Vec<f64>,
    pub scale: Scale,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
}

/// Lower bounds applied to sampled variances.
///
/// The effective floor is `max(eps, floor_ratio · v)`, where `v` is the law
/// mean of the variance (diagonal) or the smallest eigenvalue of the
/// law-mean covariance (full).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorOptions {
    pub eps: f64,
    pub floor_ratio: f64,
}

impl Default for FloorOptions {
    fn default() -> Self {
        Self {
            eps: linalg::DEFAULT_EPS,
            floor_ratio: 0.0,
        }
    }
}

impl FloorOptions {
    pub fn eps(eps: f64) -> Self {
        Self { eps, floor_ratio: 0.0 }
    }
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn mode(&self) -> Mode {
        match self.scale {
            Scale::Diagonal(_) => Mode::Diagonal,
            Scale::Full(_) => Mode::Full,
        }
    }

    pub fn identity(dim: usize, mode: Mode) -> Self {
        let scale = match mode {
            Mode::Diagonal => Scale::Diagonal(vec![1.0; dim]),
            Mode::Full => Scale::Full(SymMatrix::identity(dim)),
        };
        Self {
            center: vec![0.0; dim],
            scale,
            provenance: Provenance::Fixed,
            diagnostics: Diagnostics::default(),
        }
    }

    /// `out = W (x − center)`; `centered` is scratch space of the same length.
    #[inline]
    pub fn whiten_into(&self, x: &[f64], centered: &mut [f64], out: &mut [f64]) {
        for ((d, &v), &m) in centered.iter_mut().zip(x).zip(&self.center) {
            *d = v - m;
        }
        match &self.scale {
            Scale::Diagonal(s) => {
                for ((o, &d), &w) in out.iter_mut().zip(centered.iter()).zip(s) {
                    *o = w * d;
                }
            }
            Scale::Full(w) => w.mul_vec_into(centered, out),
        }
    }

    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut centered = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        self.whiten_into(x, &mut centered, &mut out);
        out
    }
}

/// Whitening from the real rows' own mean and biased (1/N) covariance.
///
/// Full mode uses `inv_sqrt_psd(S, eps)`; diagonal mode uses `1/√(var + eps)`.
pub fn fixed_transform(real: &FeatureMatrix, mode: Mode, eps: f64) -> Result<WhiteningTransform> {
    real.ensure_real_only()?;
    if real.n() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: real.n() });
    }
    let center = stats::batch_mean(real)?;
    let cov = stats::batch_cov(real, Normalization::Biased)?;
    let scale = match mode {
        Mode::Full => Scale::Full(linalg::inv_sqrt_psd(&cov, eps)?),
        Mode::Diagonal => Scale::Diagonal(
            cov.diag()
                .iter()
                .enumerate()
                .map(|(dim, &v)| {
                    let denom = v + eps;
                    if denom > 0.0 {
                        Ok(1.0 / denom.sqrt())
                    } else {
                        Err(Error::DegenerateVariance { dim })
                    }
                })
                .collect::<Result<_>>()?,
        ),
    };
    Ok(WhiteningTransform {
        center,
        scale,
        provenance: Provenance::Fixed,
        diagnostics: Diagnostics::default(),
    })
}

/// Draws whitening parameters from a meta-distribution.
///
/// Holds the per-dimension floors so repeated draws do not redo the
/// eigendecomposition of the law-mean covariance.
#[derive(Debug, Clone)]
pub struct TransformSampler<'a> {
    meta: &'a MetaDistribution,
    floors: Vec<f64>,
}

impl<'a> TransformSampler<'a> {
    pub fn new(meta: &'a MetaDistribution, opts: FloorOptions) -> Result<Self> {
        meta.validate()?;
        if !(opts.eps > 0.0) || !(opts.floor_ratio >= 0.0) {
            return Err(Error::InvalidArgument("eps must be positive and floor_ratio non-negative".into()));
        }
        let floors = match meta.mode {
            Mode::Diagonal => meta
                .mean_law
                .iter()
                .enumerate()
                .map(|(i, _)| opts.eps.max(opts.floor_ratio * meta.cov(i, i).mu.max(0.0)))
                .collect(),
            Mode::Full => {
                let reference = if opts.floor_ratio > 0.0 {
                    linalg::sym_eig(&meta.mean_cov()?)?.min_value().max(0.0)
                } else {
                    0.0
                };
                vec![opts.eps.max(opts.floor_ratio * reference)]
            }
        };
        Ok(Self { meta, floors })
    }

    pub fn meta(&self) -> &MetaDistribution {
        self.meta
    }

    /// Deterministic transform at the law means (`μ′ = μ̂_R̄`, `S′ = μ̂_S`).
    pub fn mean_transform(&self) -> Result<WhiteningTransform> {
        let c = self.meta.dim();
        let cov: Vec<f64> = match self.meta.mode {
            Mode::Diagonal => (0..c).map(|i| self.meta.cov(i, i).mu).collect(),
            Mode::Full => self.meta.cov_law.iter().map(|p| p.mu).collect(),
        };
        let mut t = self.build(self.meta.mean_center(), cov)?;
        t.provenance = Provenance::Fixed;
        Ok(t)
    }

    /// One draw of `(μ′, S′)` and its whitening transform.
    pub fn sample(&self, rng: &mut Rng) -> Result<WhiteningTransform> {
        let c = self.meta.dim();
        let center = self.meta.mean_law.iter().map(|p| p.sample(rng)).collect();
        let cov = match self.meta.mode {
            Mode::Diagonal => (0..c).map(|i| self.meta.cov(i, i).sample(rng)).collect(),
            Mode::Full => {
                let mut s = vec![0.0; c * c];
                for i in 0..c {
                    for j in i..c {
                        let v = self.meta.cov(i, j).sample(rng);
                        s[i * c + j] = v;
                        s[j * c + i] = v;
                    }
                }
                s
            }
        };
        self.build(center, cov)
    }

    fn build(&self, center: Vec<f64>, cov: Vec<f64>) -> Result<WhiteningTransform> {
        let mut clamped = 0;
        let scale = match self.meta.mode {
            Mode::Diagonal => Scale::Diagonal(
                cov.iter()
                    .zip(&self.floors)
                    .map(|(&v, &floor)| {
                        if v < floor {
                            clamped += 1;
                        }
                        1.0 / v.max(floor).sqrt()
                    })
                    .collect(),
            ),
            Mode::Full => {
                let s = SymMatrix::new(center.len(), cov)?;
                let eig = linalg::sym_eig(&s)?;
                let floor = self.floors[0];
                clamped = eig.values.iter().filter(|&&l| l < floor).count();
                Scale::Full(eig.rebuild(|l| 1.0 / l.max(floor).sqrt())?)
            }
        };
        Ok(WhiteningTransform {
            center,
            scale,
            provenance: Provenance::Sampled,
            diagnostics: Diagnostics { clamped },
        })
    }
}

/// One sampled transform with an absolute eigenvalue/variance floor `eps`.
pub fn sample_transform(meta: &MetaDistribution, rng: &mut Rng, eps: f64) -> Result<WhiteningTransform> {
    TransformSampler::new(meta, FloorOptions::eps(eps))?.sample(rng)
}

/// Applies `z = W (x − center)` to every row; labels and domain tag carry over.
pub fn apply(t: &WhiteningTransform, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: x.dim(),
        });
    }
    let mut centered = vec![0.0; x.dim()];
    Ok(x.map_rows(x.dim(), |src, dst| t.whiten_into(src, &mut centered, dst)))
}
