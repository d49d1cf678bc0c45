//! Batch statistics, the closed-form normal MLE, and estimation of the
//! meta-distribution of batch statistics over repeated real batches.
//!
//! The meta-distribution treats each coordinate of a batch mean and each
//! entry of a batch covariance as a scalar random variable and fits an
//! independent normal law to its values across `K` resampled batches.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::rng::{self, Rng};

pub const DEFAULT_META_N: usize = 32;
pub const DEFAULT_META_K: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by `N − 1`.
    Unbiased,
    /// Divide by `N`.
    Biased,
}

/// Which covariance entries are modelled and used for whitening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Per-dimension variances only.
    #[default]
    Diagonal,
    /// The full covariance matrix.
    Full,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Diagonal => "diagonal",
            Mode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl NormalParams {
    pub const ZERO: NormalParams = NormalParams { mu: 0.0, sigma2: 0.0 };

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.sigma2 == 0.0 {
            self.mu
        } else {
            self.mu + self.sigma2.sqrt() * rng::normal(rng)
        }
    }
}

/// Per-coordinate normal laws for the batch mean and batch covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDistribution {
    pub mean_law: Vec<NormalParams>,
    /// Row-major `c × c`. In diagonal mode off-diagonal laws are [`NormalParams::ZERO`].
    pub cov_law: Vec<NormalParams>,
    pub batch_size: usize,
    pub num_batches: usize,
    pub mode: Mode,
}

impl MetaDistribution {
    pub fn dim(&self) -> usize {
        self.mean_law.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> NormalParams {
        self.cov_law[i * self.dim() + j]
    }

    /// Law means of the batch mean.
    pub fn mean_center(&self) -> Vec<f64> {
        self.mean_law.iter().map(|p| p.mu).collect()
    }

    /// Law means of the batch covariance, as a matrix.
    pub fn mean_cov(&self) -> Result<SymMatrix> {
        SymMatrix::new(self.dim(), self.cov_law.iter().map(|p| p.mu).collect())
    }

    /// Structural checks: dimensions, symmetry, finite and non-negative variances.
    pub fn validate(&self) -> Result<()> {
        let c = self.dim();
        if c == 0 {
            return Err(Error::InvalidArgument("meta-distribution has zero dimension".into()));
        }
        if self.cov_law.len() != c * c {
            return Err(Error::LengthMismatch {
                left: self.cov_law.len(),
                right: c * c,
            });
        }
        let laws = self.mean_law.iter().chain(&self.cov_law);
        if laws.clone().any(|p| !p.mu.is_finite() || !p.sigma2.is_finite() || p.sigma2 < 0.0) {
            return Err(Error::InvalidArgument("law parameters must be finite with sigma2 >= 0".into()));
        }
        for i in 0..c {
            for j in (i + 1)..c {
                if self.cov(i, j) != self.cov(j, i) {
                    return Err(Error::InvalidArgument(format!("cov_law not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Coordinate-wise arithmetic mean of the rows.
pub fn batch_mean(x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(mean_of_rows(x.rows(), x.dim()))
}

// Mean accumulated relative to the first row, so identical rows reproduce
// that row exactly.
fn mean_of_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut rows = rows.peekable();
    let anchor = rows.peek().map(|r| r.to_vec()).unwrap_or_else(|| vec![0.0; dim]);
    let mut acc = vec![0.0; dim];
    for r in rows {
        for ((a, &v), &o) in acc.iter_mut().zip(r).zip(&anchor) {
            *a += v - o;
        }
    }
    anchor.iter().zip(&acc).map(|(o, a)| o + a / n).collect()
}

/// Centered outer-product average.
pub fn batch_cov(x: &FeatureMatrix, norm: Normalization) -> Result<SymMatrix> {
    if x.n() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.n() });
    }
    let mean = batch_mean(x)?;
    cov_of_rows(x.rows(), &mean, x.n(), norm, Mode::Full)
}

pub fn batch_stats(x: &FeatureMatrix, norm: Normalization) -> Result<BatchStats> {
    Ok(BatchStats {
        mean: batch_mean(x)?,
        cov: batch_cov(x, norm)?,
        batch_size: x.n(),
    })
}

fn cov_of_rows<'a>(
    rows: impl Iterator<Item = &'a [f64]>,
    mean: &[f64],
    n: usize,
    norm: Normalization,
    mode: Mode,
) -> Result<SymMatrix> {
    let c = mean.len();
    let mut acc = vec![0.0; c * c];
    let mut centered = vec![0.0; c];
    for r in rows {
        for ((d, &v), &m) in centered.iter_mut().zip(r).zip(mean) {
            *d = v - m;
        }
        match mode {
            Mode::Full => {
                for i in 0..c {
                    let di = centered[i];
                    for j in i..c {
                        acc[i * c + j] += di * centered[j];
                    }
                }
            }
            Mode::Diagonal => {
                for i in 0..c {
                    acc[i * c + i] += centered[i] * centered[i];
                }
            }
        }
    }
    let denom = match norm {
        Normalization::Unbiased => (n - 1) as f64,
        Normalization::Biased => n as f64,
    };
    for i in 0..c {
        for j in i..c {
            let v = acc[i * c + j] / denom;
            acc[i * c + j] = v;
            acc[j * c + i] = v;
        }
    }
    SymMatrix::new(c, acc)
}

/// Closed-form normal MLE: sample mean and mean squared deviation (1/N).
pub fn mle_normal(samples: &[f64]) -> Result<NormalParams> {
    let Some(&anchor) = samples.first() else {
        return Err(Error::EmptyInput);
    };
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: pos, col: 0 });
    }
    let n = samples.len() as f64;
    let mu = anchor + samples.iter().map(|v| v - anchor).sum::<f64>() / n;
    let sigma2 = samples.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok(NormalParams { mu, sigma2 })
}

/// Fits the meta-distribution from `num_batches` batches of `batch_size`
/// real rows.
///
/// Each batch is drawn uniformly without replacement; batches are
/// independent of one another. Batch covariances use the biased (1/N)
/// normalization. Batch `b` uses substream `b` of a key drawn from `rng`,
/// so the result is reproducible regardless of thread scheduling.
pub fn estimate_meta(
    real: &FeatureMatrix,
    batch_size: usize,
    num_batches: usize,
    mode: Mode,
    rng: &mut Rng,
) -> Result<MetaDistribution> {
    real.ensure_real_only()?;
    if batch_size < 2 {
        return Err(Error::InvalidArgument("meta batch size must be at least 2".into()));
    }
    if num_batches < 2 {
        return Err(Error::InvalidArgument("meta batch count must be at least 2".into()));
    }
    if real.n() < batch_size {
        return Err(Error::InsufficientSamples {
            needed: batch_size,
            got: real.n(),
        });
    }

    let c = real.dim();
    let key = rng::split_key(rng);
    let per_batch: Vec<(Vec<f64>, SymMatrix)> = (0..num_batches)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(key, b as u64);
            let picks = index::sample(&mut r, real.n(), batch_size);
            let rows: Vec<&[f64]> = picks.iter().map(|i| real.row(i)).collect();
            let mean = mean_of_rows(rows.iter().copied(), c);
            let cov = cov_of_rows(rows.iter().copied(), &mean, batch_size, Normalization::Biased, mode)?;
            Ok((mean, cov))
        })
        .collect::<Result<_>>()?;

    let mut scratch = vec![0.0; num_batches];
    type Stat = (Vec<f64>, SymMatrix);
    let mut fit = |get: &dyn Fn(&Stat) -> f64| -> Result<NormalParams> {
        for (s, b) in scratch.iter_mut().zip(&per_batch) {
            *s = get(b);
        }
        mle_normal(&scratch)
    };

    let mut mean_law = Vec::with_capacity(c);
    for i in 0..c {
        mean_law.push(fit(&|b| b.0[i])?);
    }
    let mut cov_law = vec![NormalParams::ZERO; c * c];
    for i in 0..c {
        let cols = match mode {
            Mode::Full => i..c,
            Mode::Diagonal => i..i + 1,
        };
        for j in cols {
            let law = fit(&|b| b.1.get(i, j))?;
            cov_law[i * c + j] = law;
            cov_law[j * c + i] = law;
        }
    }

    Ok(MetaDistribution {
        mean_law,
        cov_law,
        batch_size,
        num_batches,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn gaussian_rows(n: usize, mean: &[f64], sd: &[f64], seed: u64) -> FeatureMatrix {
        let mut r = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| mean.iter().zip(sd).map(|(m, s)| m + s * rng::normal(&mut r)).collect())
            .collect();
        FeatureMatrix::real(&rows).unwrap()
    }

    #[test]
    fn mean_small_cases() {
        let x = FeatureMatrix::real(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(batch_mean(&x).unwrap(), vec![2.0, 3.0]);
        let x = FeatureMatrix::real(&[vec![5.0, 7.0]]).unwrap();
        assert_eq!(batch_mean(&x).unwrap(), vec![5.0, 7.0]);
    }

    #[test]
    fn mean_monte_carlo() {
        let x = gaussian_rows(1000, &[3.0, 3.0, 3.0], &[1.0, 1.0, 1.0], 1);
        for m in batch_mean(&x).unwrap() {
            assert!((m - 3.0).abs() < 0.15);
        }
    }

    #[test]
    fn cov_two_points() {
        let x = FeatureMatrix::real(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let u = batch_cov(&x, Normalization::Unbiased).unwrap();
        assert_eq!(u.to_rows(), vec![vec![2.0, 0.0], vec![0.0, 0.0]]);
        let b = batch_cov(&x, Normalization::Biased).unwrap();
        assert_eq!(b.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn cov_needs_two_rows() {
        let x = FeatureMatrix::real(&[vec![1.0]]).unwrap();
        assert!(matches!(
            batch_cov(&x, Normalization::Biased),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn cov_monte_carlo() {
        let x = gaussian_rows(5000, &[0.0, 0.0], &[2.0, 1.0], 2);
        let s = batch_cov(&x, Normalization::Unbiased).unwrap();
        let want = SymMatrix::from_diag(&[4.0, 1.0]);
        assert!(s.max_abs_diff(&want) < 0.2);
    }

    #[test]
    fn mle_closed_forms() {
        let p = mle_normal(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.mu, 2.0);
        assert!((p.sigma2 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mle_normal(&[7.0]).unwrap(), NormalParams { mu: 7.0, sigma2: 0.0 });
        assert!(matches!(mle_normal(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn mle_monte_carlo() {
        let mut r = seeded(3);
        let xs: Vec<f64> = (0..10_000).map(|_| rng::normal(&mut r)).collect();
        let p = mle_normal(&xs).unwrap();
        assert!(p.mu.abs() < 0.05);
        assert!((p.sigma2 - 1.0).abs() < 0.05);
    }

    #[test]
    fn meta_constant_data_is_degenerate() {
        let rows = vec![vec![0.3, -1.7, 2.2]; 100];
        let x = FeatureMatrix::real(&rows).unwrap();
        for mode in [Mode::Diagonal, Mode::Full] {
            let m = estimate_meta(&x, 8, 16, mode, &mut seeded(4)).unwrap();
            assert!(m.mean_law.iter().all(|p| p.sigma2 == 0.0));
            assert!(m.cov_law.iter().all(|p| p.mu == 0.0 && p.sigma2 == 0.0));
            assert_eq!(m.mean_center(), rows[0]);
            m.validate().unwrap();
        }
    }

    #[test]
    fn meta_follows_clt_variance() {
        let sd = [1.0, 2.0, 0.5];
        let x = gaussian_rows(20_000, &[1.0, -2.0, 0.5], &sd, 5);
        let m = estimate_meta(&x, 32, 2000, Mode::Diagonal, &mut seeded(6)).unwrap();
        for (i, law) in m.mean_law.iter().enumerate() {
            assert!((law.mu - [1.0, -2.0, 0.5][i]).abs() < 0.05);
            let want = sd[i] * sd[i] / 32.0;
            assert!((law.sigma2 - want).abs() < 0.25 * want, "{} vs {want}", law.sigma2);
        }
    }

    #[test]
    fn meta_mean_variance_scales_with_batch_size() {
        let x = gaussian_rows(20_000, &[0.0, 0.0], &[1.0, 1.0], 7);
        let small = estimate_meta(&x, 8, 2000, Mode::Diagonal, &mut seeded(8)).unwrap();
        let large = estimate_meta(&x, 128, 2000, Mode::Diagonal, &mut seeded(8)).unwrap();
        for i in 0..2 {
            let ratio = small.mean_law[i].sigma2 / large.mean_law[i].sigma2;
            assert!((ratio / 16.0 - 1.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn meta_errors() {
        let x = gaussian_rows(10, &[0.0], &[1.0], 9);
        assert!(matches!(
            estimate_meta(&x, 32, 4, Mode::Diagonal, &mut seeded(0)),
            Err(Error::InsufficientSamples { needed: 32, got: 10 })
        ));
        let mixed = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]], vec![Label::Real, Label::Fake], "d").unwrap();
        assert!(matches!(
            estimate_meta(&mixed, 2, 4, Mode::Diagonal, &mut seeded(0)),
            Err(Error::LabelContamination { row: 1 })
        ));
    }

    #[test]
    fn meta_is_reproducible() {
        let x = gaussian_rows(500, &[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 10);
        let a = estimate_meta(&x, 16, 64, Mode::Full, &mut seeded(11)).unwrap();
        let b = estimate_meta(&x, 16, 64, Mode::Full, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    proptest! {
        #[test]
        fn biased_is_scaled_unbiased(seed in any::<u64>(), n in 2usize..40) {
            let x = gaussian_rows(n, &[0.0, 5.0, -1.0], &[1.0, 3.0, 0.1], seed);
            let u = batch_cov(&x, Normalization::Unbiased).unwrap();
            let b = batch_cov(&x, Normalization::Biased).unwrap();
            let k = (n as f64 - 1.0) / n as f64;
            for (bu, bb) in u.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((bu * k - bb).abs() <= 1e-12 * (1.0 + bu.abs()));
            }
        }

        #[test]
        fn mle_translation(xs in prop::collection::vec(-100.0f64..100.0, 1..50), shift in -1e3f64..1e3) {
            let p = mle_normal(&xs).unwrap();
            let moved: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let q = mle_normal(&moved).unwrap();
            prop_assert!((q.mu - (p.mu + shift)).abs() <= 1e-9 * (1.0 + shift.abs()));
            prop_assert!((q.sigma2 - p.sigma2).abs() <= 1e-7 * (1.0 + p.sigma2));
        }
    }
}
