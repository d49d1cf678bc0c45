//! Seeded generator for a synthetic real population, biased domains drawn
//! from it, and non-Gaussian fakes.
//!
//! The population is `N(μ*, Σ*)`. A domain sees it through two biases:
//!
//! * sampling bias: the population is split into `K` equal-probability
//!   strata along the leading principal axis of `Σ*`, and the domain draws
//!   strata with its own mixture weights (uniform weights recover the
//!   population exactly; concentrated weights shrink it);
//! * systematic bias: each draw is mapped through `x ↦ A x + δ`.
//!
//! Fakes are i.i.d. non-Gaussian sources per coordinate. With moment
//! matching they are whitened with their own sample statistics and then
//! colored with the domain's real statistics, so mean and covariance carry
//! no real/fake signal.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::rng::{self, Rng};
use crate::stats::{self, Normalization};

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub mu_star: Vec<f64>,
    pub sigma_star: SymMatrix,
}

impl PopulationSpec {
    pub fn new(mu_star: Vec<f64>, sigma_star: SymMatrix) -> Result<Self> {
        if mu_star.len() != sigma_star.dim() {
            return Err(Error::DimensionMismatch {
                expected: sigma_star.dim(),
                got: mu_star.len(),
            });
        }
        if linalg::sym_eig(&sigma_star)?.min_value() <= 0.0 {
            return Err(Error::InvalidArgument("population covariance must be positive definite".into()));
        }
        Ok(Self { mu_star, sigma_star })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu_star: vec![0.0; dim],
            sigma_star: SymMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu_star.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBias {
    pub name: String,
    /// Systematic shift `δ`.
    pub shift: Vec<f64>,
    /// Systematic scale `A`; the domain covariance becomes `A Σ Aᵀ`.
    pub scale: SymMatrix,
    /// Stratum weights (sampling bias).
    pub mixture_weights: Vec<f64>,
}

pub const DEFAULT_STRATA: usize = 4;

impl DomainBias {
    pub fn identity(dim: usize, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            shift: vec![0.0; dim],
            scale: SymMatrix::identity(dim),
            mixture_weights: vec![1.0 / DEFAULT_STRATA as f64; DEFAULT_STRATA],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.shift.len() != dim || self.scale.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.shift.len().min(self.scale.dim()),
            });
        }
        let w = &self.mixture_weights;
        if w.is_empty() || w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must be non-negative and sum to 1".into()));
        }
        let eig = linalg::sym_eig(&self.scale)?;
        if eig.values.iter().any(|l| l.abs() < 1e-12) {
            return Err(Error::InvalidArgument("systematic scale must be invertible".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeFamily {
    LaplaceMarginals,
    GaussianMixture,
    CubedGaussian,
}

impl FakeFamily {
    /// One zero-mean, unit-variance draw.
    pub fn draw(self, rng: &mut Rng) -> f64 {
        match self {
            FakeFamily::LaplaceMarginals => {
                let u = rng::open01(rng) - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / std::f64::consts::SQRT_2
            }
            FakeFamily::GaussianMixture => {
                // 0.2·N(1.6, 1) + 0.8·N(−0.4, 0.25): zero mean, variance 1.04,
                // right-skewed and leptokurtic.
                let g = rng::normal(rng);
                let v = if rng.random::<f64>() < 0.2 { 1.6 + g } else { -0.4 + 0.5 * g };
                v / 1.04_f64.sqrt()
            }
            FakeFamily::CubedGaussian => {
                let g = rng::normal(rng);
                g * g * g / 15.0_f64.sqrt()
            }
        }
    }
}

impl FromStr for FakeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "laplace" | "laplace_marginals" => Ok(FakeFamily::LaplaceMarginals),
            "gaussian_mixture" | "mixture" => Ok(FakeFamily::GaussianMixture),
            "cubed_gaussian" | "cubed" => Ok(FakeFamily::CubedGaussian),
            other => Err(Error::InvalidArgument(format!("unknown fake family {other:?}"))),
        }
    }
}

impl fmt::Display for FakeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FakeFamily::LaplaceMarginals => "laplace_marginals",
            FakeFamily::GaussianMixture => "gaussian_mixture",
            FakeFamily::CubedGaussian => "cubed_gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FakeSpec {
    pub family: FakeFamily,
    pub moment_matching: bool,
}

impl FakeSpec {
    pub fn matched(family: FakeFamily) -> Self {
        Self {
            family,
            moment_matching: true,
        }
    }
}

/// Precomputed population geometry shared by every draw.
struct Sampler<'a> {
    pop: &'a PopulationSpec,
    root: SymMatrix,
    /// `Σ u / (uᵀ Σ u)` for the stratification axis `u`.
    regress: Vec<f64>,
    axis: Vec<f64>,
    axis_sd: f64,
    /// CDF values of the stratum edges.
    edges: Vec<f64>,
    normal: Normal,
}

impl<'a> Sampler<'a> {
    fn new(pop: &'a PopulationSpec, strata: usize) -> Result<Self> {
        let eig = linalg::sym_eig(&pop.sigma_star)?;
        let axis = eig.vector(0);
        let sigma_u = pop.sigma_star.mul_vec(&axis);
        let var_u: f64 = axis.iter().zip(&sigma_u).map(|(a, b)| a * b).sum();
        let normal = Normal::standard();
        Ok(Self {
            pop,
            root: linalg::sqrt_psd(&pop.sigma_star)?,
            regress: sigma_u.iter().map(|v| v / var_u).collect(),
            axis,
            axis_sd: var_u.sqrt(),
            edges: (0..=strata).map(|k| k as f64 / strata as f64).collect(),
            normal,
        })
    }

    fn draw(&self, bias: &DomainBias, rng: &mut Rng, out: &mut [f64]) {
        let c = self.pop.dim();
        let eps: Vec<f64> = (0..c).map(|_| rng::normal(rng)).collect();
        let mut y = self.root.mul_vec(&eps);

        let stratum = pick(&bias.mixture_weights, rng);
        let (lo, hi) = (self.edges[stratum], self.edges[stratum + 1]);
        let u = lo + (hi - lo) * rng::open01(rng);
        let t = self.normal.inverse_cdf(u);

        // Condition the Gaussian draw on its axis projection equal to σ_u·t.
        let proj: f64 = self.axis.iter().zip(&y).map(|(a, b)| a * b).sum();
        let adjust = self.axis_sd * t - proj;
        for ((v, r), m) in y.iter_mut().zip(&self.regress).zip(&self.pop.mu_star) {
            *v += r * adjust + m;
        }
        bias.scale.mul_vec_into(&y, out);
        for (o, d) in out.iter_mut().zip(&bias.shift) {
            *o += d;
        }
    }
}

fn pick(weights: &[f64], rng: &mut Rng) -> usize {
    let mut u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// `n` REAL rows from the population as seen through `bias`.
pub fn sample_real(pop: &PopulationSpec, bias: &DomainBias, n: usize, rng: &mut Rng) -> Result<FeatureMatrix> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    bias.validate(pop.dim())?;
    let sampler = Sampler::new(pop, bias.mixture_weights.len())?;
    let c = pop.dim();
    let mut values = vec![0.0; n * c];
    for row in values.chunks_exact_mut(c) {
        sampler.draw(bias, rng, row);
    }
    FeatureMatrix::new(c, values, vec![Label::Real; n], bias.name.clone())
}

/// `n` FAKE rows; with moment matching they reproduce the mean and biased
/// covariance of `reference` exactly.
pub fn sample_fake_like(reference: &FeatureMatrix, spec: FakeSpec, n: usize, rng: &mut Rng) -> Result<FeatureMatrix> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let c = reference.dim();
    let raw: Vec<f64> = (0..n * c).map(|_| spec.family.draw(rng)).collect();
    let raw = FeatureMatrix::new(c, raw, vec![Label::Fake; n], reference.domain())?;
    if !spec.moment_matching {
        return Ok(raw);
    }
    let own_mean = stats::batch_mean(&raw)?;
    let own_cov = stats::batch_cov(&raw, Normalization::Biased)?;
    let target_mean = stats::batch_mean(reference)?;
    let target_cov = stats::batch_cov(reference, Normalization::Biased)?;
    // color · whiten, applied as one matrix
    let whiten = linalg::inv_sqrt_psd(&own_cov, 1e-300)?;
    let color = linalg::sqrt_psd(&target_cov)?;
    let m = color.matmul(&whiten);
    let mut centered = vec![0.0; c];
    Ok(raw.map_rows(c, |src, dst| {
        for ((d, &v), &mu) in centered.iter_mut().zip(src).zip(&own_mean) {
            *d = v - mu;
        }
        for (i, o) in dst.iter_mut().enumerate() {
            *o = target_mean[i] + m[i * c..(i + 1) * c].iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>();
        }
    }))
}

/// `n` FAKE rows for a domain. Moment matching targets a fresh real sample
/// of the same size from that domain.
pub fn sample_fake(
    pop: &PopulationSpec,
    bias: &DomainBias,
    spec: FakeSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    let reference = sample_real(pop, bias, n.max(2), rng)?;
    sample_fake_like(&reference, spec, n, rng)
}

/// Knobs for [`make_benchmark_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub dim: usize,
    /// Rows per class in every split.
    pub n_per_class: usize,
    pub num_targets: usize,
    pub strata: usize,
    /// Population means are drawn uniformly in `[−mean_spread, mean_spread]`.
    pub mean_spread: f64,
    /// Population standard deviations are log-uniform in `[sd_min, sd_max]`.
    pub sd_min: f64,
    pub sd_max: f64,
    /// Weight of the shared low-rank factor in the population correlation.
    pub correlation: f64,
    /// Target `δ` entries are uniform in `[−target_shift, target_shift]`.
    pub target_shift: f64,
    /// Target `A = I + target_scale · P` with `‖P‖₂ = 1`.
    pub target_scale: f64,
    /// Dirichlet concentration of target stratum weights.
    pub target_concentration: f64,
    pub source_shift: f64,
    pub source_scale: f64,
    pub source_concentration: f64,
    pub fake_family: FakeFamily,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_per_class: 4000,
            num_targets: 4,
            strata: DEFAULT_STRATA,
            mean_spread: 3.0,
            sd_min: 0.5,
            sd_max: 2.0,
            correlation: 0.3,
            target_shift: 1.0,
            target_scale: 0.2,
            target_concentration: 2.0,
            source_shift: 0.3,
            source_scale: 0.1,
            source_concentration: 8.0,
            fake_family: FakeFamily::LaplaceMarginals,
        }
    }
}

/// A source domain (train and held-out test splits) and several target domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub population: PopulationSpec,
    pub source_bias: DomainBias,
    pub target_biases: Vec<DomainBias>,
    pub source: FeatureMatrix,
    pub source_test: FeatureMatrix,
    pub targets: Vec<FeatureMatrix>,
}

impl Benchmark {
    pub fn dim(&self) -> usize {
        self.population.dim()
    }
}

pub const SOURCE_DOMAIN: &str = "source";

pub fn make_benchmark(seed: u64) -> Result<Benchmark> {
    make_benchmark_with(&BenchmarkConfig::default(), seed)
}

pub fn make_benchmark_with(cfg: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    let c = cfg.dim;
    let mut spec_rng = rng::substream(seed, 0);
    let population = random_population(cfg, &mut spec_rng)?;
    let source_bias = random_bias(
        SOURCE_DOMAIN,
        c,
        cfg.strata,
        cfg.source_shift,
        cfg.source_scale,
        cfg.source_concentration,
        &mut spec_rng,
    )?;
    let target_biases = (1..=cfg.num_targets)
        .map(|t| {
            random_bias(
                &format!("target-{t}"),
                c,
                cfg.strata,
                cfg.target_shift,
                cfg.target_scale,
                cfg.target_concentration,
                &mut spec_rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let fakes = FakeSpec::matched(cfg.fake_family);
    let domain = |bias: &DomainBias, stream: u64| -> Result<FeatureMatrix> {
        let mut r = rng::substream(seed, stream);
        let real = sample_real(&population, bias, cfg.n_per_class, &mut r)?;
        let fake = sample_fake_like(&real, fakes, cfg.n_per_class, &mut r)?;
        real.concat(&fake)
    };
    let source = domain(&source_bias, 1)?;
    let source_test = domain(&source_bias, 2)?;
    let targets = target_biases
        .iter()
        .enumerate()
        .map(|(i, b)| domain(b, 3 + i as u64))
        .collect::<Result<Vec<_>>>()?;

    Ok(Benchmark {
        population,
        source_bias,
        target_biases,
        source,
        source_test,
        targets,
    })
}

fn random_population(cfg: &BenchmarkConfig, r: &mut Rng) -> Result<PopulationSpec> {
    let c = cfg.dim;
    let mu_star: Vec<f64> = (0..c).map(|_| cfg.mean_spread * (2.0 * r.random::<f64>() - 1.0)).collect();
    let (lo, hi) = (cfg.sd_min.ln(), cfg.sd_max.ln());
    let sd: Vec<f64> = (0..c).map(|_| (lo + (hi - lo) * r.random::<f64>()).exp()).collect();
    // Correlation: (1 − ρ) I + ρ f fᵀ-style mix of a random unit-diagonal factor model.
    let factors: Vec<f64> = (0..c * 2).map(|_| rng::normal(r)).collect();
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let load: f64 = (0..2).map(|k| factors[i * 2 + k] * factors[j * 2 + k]).sum();
            let norm_i: f64 = (0..2).map(|k| factors[i * 2 + k].powi(2)).sum::<f64>().sqrt();
            let norm_j: f64 = (0..2).map(|k| factors[j * 2 + k].powi(2)).sum::<f64>().sqrt();
            let corr = if i == j { 1.0 } else { cfg.correlation * load / (norm_i * norm_j) };
            data[i * c + j] = corr * sd[i] * sd[j];
        }
    }
    PopulationSpec::new(mu_star, SymMatrix::new(c, data)?)
}

fn random_bias(
    name: &str,
    c: usize,
    strata: usize,
    shift: f64,
    scale: f64,
    concentration: f64,
    r: &mut Rng,
) -> Result<DomainBias> {
    let delta = (0..c).map(|_| shift * (2.0 * r.random::<f64>() - 1.0)).collect();
    let raw: Vec<f64> = (0..c * c).map(|_| rng::normal(r)).collect();
    let p = SymMatrix::new(c, raw)?;
    let spectral = linalg::sym_eig(&p)?.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut a = p.scale(scale / spectral).as_slice().to_vec();
    for i in 0..c {
        a[i * c + i] += 1.0;
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let g: Vec<f64> = (0..strata).map(|_| gamma.sample(r)).collect();
    let total: f64 = g.iter().sum();
    Ok(DomainBias {
        name: name.to_string(),
        shift: delta,
        scale: SymMatrix::new(c, a)?,
        mixture_weights: g.iter().map(|v| v / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussianity;
    use crate::rng::seeded;
    use crate::stats::Mode;
    use crate::whitening;

    fn pop3() -> PopulationSpec {
        PopulationSpec::new(
            vec![1.0, -2.0, 0.5],
            SymMatrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.2], vec![0.0, 0.2, 0.5]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_bias_matches_population() {
        let pop = pop3();
        let x = sample_real(&pop, &DomainBias::identity(3, "id"), 40_000, &mut seeded(1)).unwrap();
        let mean = stats::batch_mean(&x).unwrap();
        for (m, want) in mean.iter().zip(&pop.mu_star) {
            assert!((m - want).abs() < 0.03);
        }
        let cov = stats::batch_cov(&x, Normalization::Unbiased).unwrap();
        assert!(cov.max_abs_diff(&pop.sigma_star) < 0.06);
        assert_eq!(x.domain(), "id");
        assert_eq!(x.count(Label::Real), 40_000);
    }

    #[test]
    fn identity_bias_is_gaussian_after_whitening() {
        let pop = pop3();
        let x = sample_real(&pop, &DomainBias::identity(3, "id"), 10_000, &mut seeded(2)).unwrap();
        let z = whitening::apply(&whitening::fixed_transform(&x, Mode::Full, 1e-6).unwrap(), &x).unwrap();
        assert!(gaussianity::moment_report(&z).unwrap().aggregate_score < 0.01);
    }

    #[test]
    fn shift_moves_mean() {
        let pop = pop3();
        let mut bias = DomainBias::identity(3, "shifted");
        bias.shift[0] = 2.0;
        let x = sample_real(&pop, &bias, 20_000, &mut seeded(3)).unwrap();
        assert!((stats::batch_mean(&x).unwrap()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn collapsed_weights_shrink_spread() {
        let pop = pop3();
        let unbiased = sample_real(&pop, &DomainBias::identity(3, "u"), 20_000, &mut seeded(4)).unwrap();
        let mut bias = DomainBias::identity(3, "collapsed");
        bias.mixture_weights = vec![0.0, 1.0, 0.0, 0.0];
        let collapsed = sample_real(&pop, &bias, 20_000, &mut seeded(4)).unwrap();
        let t_u = stats::batch_cov(&unbiased, Normalization::Biased).unwrap().trace();
        let t_c = stats::batch_cov(&collapsed, Normalization::Biased).unwrap().trace();
        assert!(t_c < t_u, "{t_c} vs {t_u}");
    }

    #[test]
    fn bias_validation() {
        let mut bias = DomainBias::identity(3, "bad");
        bias.mixture_weights = vec![0.5, 0.6];
        assert!(bias.validate(3).is_err());
        let mut bias = DomainBias::identity(3, "singular");
        bias.scale = SymMatrix::from_diag(&[1.0, 0.0, 1.0]);
        assert!(bias.validate(3).is_err());
    }

    #[test]
    fn matched_laplace_fakes() {
        let pop = pop3();
        let bias = DomainBias::identity(3, "d");
        let real = sample_real(&pop, &bias, 10_000, &mut seeded(5)).unwrap();
        let fake = sample_fake_like(&real, FakeSpec::matched(FakeFamily::LaplaceMarginals), 10_000, &mut seeded(7)).unwrap();
        assert_eq!(fake.count(Label::Fake), 10_000);
        let rm = stats::batch_mean(&real).unwrap();
        let fm = stats::batch_mean(&fake).unwrap();
        assert!(rm.iter().zip(&fm).all(|(a, b)| (a - b).abs() < 1e-9));
        let rc = stats::batch_cov(&real, Normalization::Biased).unwrap();
        let fc = stats::batch_cov(&fake, Normalization::Biased).unwrap();
        assert!(rc.max_abs_diff(&fc) < 1e-9);
        // whitening with the real statistics recovers the independent sources;
        // the sample kurtosis of a Laplace column has sd ≈ 0.34 at this n
        let t = whitening::fixed_transform(&real, Mode::Full, 1e-6).unwrap();
        let rep = gaussianity::moment_report(&whitening::apply(&t, &fake).unwrap()).unwrap();
        assert!(rep.per_dim_excess_kurtosis.iter().all(|k| (2.4..3.6).contains(k)), "{rep:?}");
    }

    #[test]
    fn cubed_gaussian_is_heavy_tailed() {
        let spec = FakeSpec {
            family: FakeFamily::CubedGaussian,
            moment_matching: false,
        };
        let x = sample_fake(&PopulationSpec::standard(2), &DomainBias::identity(2, "d"), spec, 200_000, &mut seeded(7)).unwrap();
        for k in gaussianity::moment_report(&x).unwrap().per_dim_excess_kurtosis {
            assert!((k - 43.2).abs() < 0.2 * 43.2, "{k}");
        }
    }

    #[test]
    fn gaussian_mixture_is_skewed_and_leptokurtic() {
        let spec = FakeSpec {
            family: FakeFamily::GaussianMixture,
            moment_matching: false,
        };
        let x = sample_fake(&PopulationSpec::standard(1), &DomainBias::identity(1, "d"), spec, 100_000, &mut seeded(8)).unwrap();
        let rep = gaussianity::moment_report(&x).unwrap();
        assert!(rep.per_dim_skewness[0] > 0.5);
        assert!(rep.per_dim_excess_kurtosis[0] > 0.5);
        let mean = stats::batch_mean(&x).unwrap()[0];
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn unmatched_fakes_keep_raw_moments() {
        let pop = pop3();
        let spec = FakeSpec {
            family: FakeFamily::LaplaceMarginals,
            moment_matching: false,
        };
        let fake = sample_fake(&pop, &DomainBias::identity(3, "d"), spec, 5000, &mut seeded(9)).unwrap();
        let mean = stats::batch_mean(&fake).unwrap();
        assert!((mean[1] - pop.mu_star[1]).abs() > 1.0);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let cfg = BenchmarkConfig {
            n_per_class: 200,
            ..BenchmarkConfig::default()
        };
        let a = make_benchmark_with(&cfg, 42).unwrap();
        let b = make_benchmark_with(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = make_benchmark_with(&cfg, 43).unwrap();
        assert_ne!(a.source, c.source);
    }
}
