//! Linear logistic detector over whitened features.
//!
//! Training follows a warm-up / train loop: before every epoch the
//! meta-distribution is re-estimated from the REAL training rows; every
//! mini-batch is whitened with a transform chosen by the
//! [`SamplingPolicy`] and then takes one gradient step on the cross-entropy
//! loss. Labels are REAL = 0 and FAKE = 1, so scores are `P(FAKE)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::stats::{self, MetaDistribution, Mode};
use crate::whitening::{FloorOptions, TransformSampler, WhiteningTransform};

const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    #[inline]
    pub fn score(&self, features: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }

    pub fn prob(&self, features: &[f64]) -> f64 {
        sigmoid(self.score(features))
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Nonlinear expansion of a whitened vector fed to the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `z`
    Linear,
    /// `[z, z⊙z]`
    Quadratic,
    /// `[z, z⊙z, |z|]`
    #[default]
    QuadraticAbs,
}

impl FeatureMap {
    pub fn blocks(self) -> usize {
        match self {
            FeatureMap::Linear => 1,
            FeatureMap::Quadratic => 2,
            FeatureMap::QuadraticAbs => 3,
        }
    }

    pub fn output_dim(self, c: usize) -> usize {
        self.blocks() * c
    }

    #[inline]
    pub fn expand_into(self, z: &[f64], out: &mut [f64]) {
        let c = z.len();
        out[..c].copy_from_slice(z);
        if self.blocks() >= 2 {
            for (o, v) in out[c..2 * c].iter_mut().zip(z) {
                *o = v * v;
            }
        }
        if self.blocks() >= 3 {
            for (o, v) in out[2 * c..3 * c].iter_mut().zip(z) {
                *o = v.abs();
            }
        }
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "linear" => Ok(FeatureMap::Linear),
            "quadratic" => Ok(FeatureMap::Quadratic),
            "quadratic_abs" => Ok(FeatureMap::QuadraticAbs),
            other => Err(Error::InvalidArgument(format!("unknown feature map {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMap::Linear => "linear",
            FeatureMap::Quadratic => "quadratic",
            FeatureMap::QuadraticAbs => "quadratic_abs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPolicy {
    /// One sampled transform per mini-batch.
    #[default]
    PerBatch,
    /// One sampled transform per row.
    PerSample,
    /// The deterministic law-mean transform.
    Fixed,
    /// No whitening.
    None,
}

impl SamplingPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingPolicy::PerBatch => "per-batch",
            SamplingPolicy::PerSample => "per-sample",
            SamplingPolicy::Fixed => "fixed",
            SamplingPolicy::None => "none",
        }
    }
}

impl FromStr for SamplingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "per-batch" => Ok(SamplingPolicy::PerBatch),
            "per-sample" => Ok(SamplingPolicy::PerSample),
            "fixed" => Ok(SamplingPolicy::Fixed),
            "none" => Ok(SamplingPolicy::None),
            other => Err(Error::InvalidArgument(format!("unknown sampling policy {other:?}"))),
        }
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub mini_batch_size: usize,
    pub learning_rate: f64,
    pub meta_n: usize,
    pub meta_k: usize,
    pub whitening_mode: Mode,
    pub sampling_policy: SamplingPolicy,
    pub seed: u64,
    pub eps: f64,
    pub floor_ratio: f64,
    pub feature_map: FeatureMap,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            mini_batch_size: 32,
            learning_rate: 0.05,
            meta_n: stats::DEFAULT_META_N,
            meta_k: stats::DEFAULT_META_K,
            whitening_mode: Mode::Diagonal,
            sampling_policy: SamplingPolicy::PerBatch,
            seed: 0,
            eps: crate::linalg::DEFAULT_EPS,
            floor_ratio: 0.25,
            feature_map: FeatureMap::QuadraticAbs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("mini_batch_size", self.mini_batch_size),
            ("meta_n", self.meta_n),
            ("meta_k", self.meta_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.eps > 0.0) || !(self.floor_ratio >= 0.0) {
            return Err(Error::InvalidArgument("eps must be positive and floor_ratio non-negative".into()));
        }
        Ok(())
    }

    pub fn floor_options(&self) -> FloorOptions {
        FloorOptions {
            eps: self.eps,
            floor_ratio: self.floor_ratio,
        }
    }
}

/// Stored training state: everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LinearModel,
    pub meta: MetaDistribution,
    pub config: TrainConfig,
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn dim(&self) -> usize {
        self.meta.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let want = self.config.feature_map.output_dim(self.meta.dim());
        if self.model.weights.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: self.model.weights.len(),
            });
        }
        if self.model.weights.iter().any(|w| !w.is_finite()) || !self.model.bias.is_finite() {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// The deterministic inference transform, or `None` when whitening is disabled.
    pub fn inference_transform(&self) -> Result<Option<WhiteningTransform>> {
        if self.config.sampling_policy == SamplingPolicy::None {
            return Ok(None);
        }
        TransformSampler::new(&self.meta, self.config.floor_options())?
            .mean_transform()
            .map(Some)
    }
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-12, 1 − 1e-12]`.
pub fn cross_entropy(probs: &[f64], labels: &[Label]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            match l {
                Label::Fake => -p.ln(),
                Label::Real => -(1.0 - p).ln(),
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Analytic gradient of the mean cross-entropy of `sigmoid(w·x + b)` over
/// the rows of the design matrix `x`: `(1/n) Σ (p − y) x` and `(1/n) Σ (p − y)`.
pub fn grad_logistic(model: &LinearModel, x: &FeatureMatrix) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; x.dim()];
    let mut gb = 0.0;
    for (row, &label) in x.rows().zip(x.labels()) {
        let r = model.prob(row) - label.target();
        gb += r;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
    }
    let n = x.n() as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    (gw, gb / n)
}

/// Trains the detector. See the module docs for the loop structure.
///
/// Epoch `e` draws its meta-estimation, shuffling and transform sampling
/// from three separate substreams, so the mini-batch order does not depend
/// on the sampling policy.
pub fn train(data: &FeatureMatrix, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let real = data.filter(Label::Real);
    if real.is_empty() || real.n() == data.n() {
        return Err(Error::SingleClassData);
    }
    if real.n() < cfg.meta_n {
        return Err(Error::InsufficientSamples {
            needed: cfg.meta_n,
            got: real.n(),
        });
    }

    let c = data.dim();
    let fdim = cfg.feature_map.output_dim(c);
    let mut model = LinearModel::zeros(fdim);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut meta = None;

    let mut batch = Batch::new(c, fdim, cfg.mini_batch_size);
    for epoch in 0..cfg.epochs as u64 {
        let epoch_meta = stats::estimate_meta(
            &real,
            cfg.meta_n,
            cfg.meta_k,
            cfg.whitening_mode,
            &mut rng::substream(cfg.seed, 3 * epoch),
        )?;
        order.shuffle(&mut rng::substream(cfg.seed, 3 * epoch + 1));
        let mut draw_rng = rng::substream(cfg.seed, 3 * epoch + 2);

        let sampler = TransformSampler::new(&epoch_meta, cfg.floor_options())?;
        let fixed = sampler.mean_transform()?;
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.mini_batch_size) {
            let step_transform = match cfg.sampling_policy {
                SamplingPolicy::PerBatch => Some(sampler.sample(&mut draw_rng)?),
                _ => None,
            };
            batch.clear();
            for &i in idx {
                let per_row;
                let t = match cfg.sampling_policy {
                    SamplingPolicy::None => None,
                    SamplingPolicy::Fixed => Some(&fixed),
                    SamplingPolicy::PerBatch => step_transform.as_ref(),
                    SamplingPolicy::PerSample => {
                        per_row = sampler.sample(&mut draw_rng)?;
                        Some(&per_row)
                    }
                };
                batch.push(data.row(i), data.labels()[i], t, cfg.feature_map);
            }
            epoch_loss += batch.step(&mut model, cfg.learning_rate) * idx.len() as f64;
        }
        loss_curve.push(epoch_loss / data.n() as f64);
        meta = Some(epoch_meta);
    }

    Ok(Checkpoint {
        model,
        meta: meta.expect("at least one epoch"),
        config: cfg.clone(),
        loss_curve,
    })
}

/// Mini-batch scratch buffers.
struct Batch {
    features: Vec<f64>,
    targets: Vec<f64>,
    fdim: usize,
    centered: Vec<f64>,
    whitened: Vec<f64>,
}

impl Batch {
    fn new(c: usize, fdim: usize, capacity: usize) -> Self {
        Self {
            features: Vec::with_capacity(capacity * fdim),
            targets: Vec::with_capacity(capacity),
            fdim,
            centered: vec![0.0; c],
            whitened: vec![0.0; c],
        }
    }

    fn clear(&mut self) {
        self.features.clear();
        self.targets.clear();
    }

    fn push(&mut self, x: &[f64], label: Label, t: Option<&WhiteningTransform>, map: FeatureMap) {
        match t {
            Some(t) => t.whiten_into(x, &mut self.centered, &mut self.whitened),
            None => self.whitened.copy_from_slice(x),
        }
        let start = self.features.len();
        self.features.resize(start + self.fdim, 0.0);
        map.expand_into(&self.whitened, &mut self.features[start..]);
        self.targets.push(label.target());
    }

    /// One gradient step; returns the pre-step mean loss.
    fn step(&self, model: &mut LinearModel, lr: f64) -> f64 {
        let n = self.targets.len() as f64;
        let mut gw = vec![0.0; self.fdim];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (row, &y) in self.features.chunks_exact(self.fdim).zip(&self.targets) {
            let p = model.prob(row);
            let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let r = p - y;
            gb += r;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * g / n;
        }
        model.bias -= lr * gb / n;
        loss / n
    }
}

/// `P(FAKE)` for every row.
///
/// With `mc_samples == 0` rows are whitened by the law-mean transform; with
/// `mc_samples = M > 0` probabilities are averaged over `M` transforms drawn
/// from the stored meta-distribution using `mc_seed`.
pub fn predict(ckpt: &Checkpoint, x: &FeatureMatrix, mc_samples: usize, mc_seed: u64) -> Result<Vec<f64>> {
    if x.dim() != ckpt.dim() {
        return Err(Error::DimensionMismatch {
            expected: ckpt.dim(),
            got: x.dim(),
        });
    }
    let map = ckpt.config.feature_map;
    if ckpt.config.sampling_policy == SamplingPolicy::None {
        return Ok(probs_with(&ckpt.model, x, None, map));
    }
    if mc_samples == 0 {
        let t = ckpt.inference_transform()?;
        return Ok(probs_with(&ckpt.model, x, t.as_ref(), map));
    }
    let sampler = TransformSampler::new(&ckpt.meta, ckpt.config.floor_options())?;
    let mut r: Rng = rng::seeded(mc_seed);
    let mut acc = vec![0.0; x.n()];
    for _ in 0..mc_samples {
        let t = sampler.sample(&mut r)?;
        for (a, p) in acc.iter_mut().zip(probs_with(&ckpt.model, x, Some(&t), map)) {
            *a += p;
        }
    }
    Ok(acc.into_iter().map(|a| a / mc_samples as f64).collect())
}

/// Whitens (optionally), expands and scores every row.
pub fn probs_with(model: &LinearModel, x: &FeatureMatrix, t: Option<&WhiteningTransform>, map: FeatureMap) -> Vec<f64> {
    let c = x.dim();
    let mut centered = vec![0.0; c];
    let mut z = vec![0.0; c];
    let mut f = vec![0.0; map.output_dim(c)];
    x.rows()
        .map(|row| {
            match t {
                Some(t) => t.whiten_into(row, &mut centered, &mut z),
                None => z.copy_from_slice(row),
            }
            map.expand_into(&z, &mut f);
            model.prob(&f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn design(rows: &[Vec<f64>], labels: &[Label]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows, labels.to_vec(), "d").unwrap()
    }

    fn loss_of(model: &LinearModel, x: &FeatureMatrix) -> f64 {
        let p: Vec<f64> = x.rows().map(|r| model.prob(r)).collect();
        cross_entropy(&p, x.labels()).unwrap()
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.5], &[Label::Fake]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[1.0 - 1e-12], &[Label::Fake]).unwrap() < 1e-11);
        let v = cross_entropy(&[0.9, 0.1], &[Label::Fake, Label::Real]).unwrap();
        assert!((v - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(matches!(cross_entropy(&[0.5], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cross_entropy_clips_extremes() {
        let v = cross_entropy(&[0.0], &[Label::Fake]).unwrap();
        assert!((v - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn gradient_symmetry_and_hand_value() {
        let x = design(&[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]], &[Label::Real, Label::Real, Label::Fake, Label::Fake]);
        let (_, gb) = grad_logistic(&LinearModel::zeros(1), &x);
        assert_eq!(gb, 0.0);

        // p = 0.5 from the zero model, y = 0 → p − y = 0.5
        let x = design(&[vec![2.0]], &[Label::Real]);
        let (gw, gb) = grad_logistic(&LinearModel::zeros(1), &x);
        assert_eq!(gw, vec![1.0]);
        assert_eq!(gb, 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = seeded(1);
        for _ in 0..20 {
            let n = 1 + (rng::open01(&mut r) * 20.0) as usize;
            let d = 1 + (rng::open01(&mut r) * 5.0) as usize;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng::normal(&mut r)).collect()).collect();
            let labels: Vec<Label> = (0..n).map(|_| if rng::open01(&mut r) < 0.5 { Label::Real } else { Label::Fake }).collect();
            let x = design(&rows, &labels);
            let model = LinearModel {
                weights: (0..d).map(|_| rng::normal(&mut r)).collect(),
                bias: rng::normal(&mut r),
            };
            let (gw, gb) = grad_logistic(&model, &x);
            let h = 1e-5;
            for (k, &an) in gw.iter().chain([&gb]).enumerate() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if k < d {
                    plus.weights[k] += h;
                    minus.weights[k] -= h;
                } else {
                    plus.bias += h;
                    minus.bias -= h;
                }
                let fd = (loss_of(&plus, &x) - loss_of(&minus, &x)) / (2.0 * h);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let ckpt = Checkpoint {
            model: LinearModel::zeros(3),
            meta: crate::stats::estimate_meta(
                &FeatureMatrix::real(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
                2,
                4,
                Mode::Diagonal,
                &mut seeded(0),
            )
            .unwrap(),
            config: TrainConfig::default(),
            loss_curve: vec![],
        };
        let x = FeatureMatrix::real(&[vec![5.0], vec![-3.0]]).unwrap();
        assert_eq!(predict(&ckpt, &x, 0, 0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(predict(&ckpt, &x, 4, 9).unwrap(), vec![0.5, 0.5]);
        let wrong = FeatureMatrix::real(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(predict(&ckpt, &wrong, 0, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn boundary_point_scores_half() {
        let model = LinearModel {
            weights: vec![2.0, -1.0],
            bias: 1.0,
        };
        // 2·1 − 1·3 + 1 = 0
        assert_eq!(model.prob(&[1.0, 3.0]), 0.5);
    }

    #[test]
    fn train_rejects_single_class() {
        let x = FeatureMatrix::real(&vec![vec![0.0]; 64]).unwrap();
        assert!(matches!(train(&x, &TrainConfig::default()), Err(Error::SingleClassData)));
    }

    #[test]
    fn train_rejects_too_few_reals() {
        let x = design(&[vec![0.0], vec![1.0], vec![2.0]], &[Label::Real, Label::Fake, Label::Real]);
        assert!(matches!(train(&x, &TrainConfig::default()), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn feature_map_layout() {
        let mut out = vec![0.0; 6];
        FeatureMap::QuadraticAbs.expand_into(&[-2.0, 3.0], &mut out);
        assert_eq!(out, vec![-2.0, 3.0, 4.0, 9.0, 2.0, 3.0]);
        let mut out = vec![0.0; 4];
        FeatureMap::Quadratic.expand_into(&[-2.0, 3.0], &mut out);
        assert_eq!(out, vec![-2.0, 3.0, 4.0, 9.0]);
    }

    #[test]
    fn policy_parse_round_trip() {
        for p in [SamplingPolicy::PerBatch, SamplingPolicy::PerSample, SamplingPolicy::Fixed, SamplingPolicy::None] {
            assert_eq!(p.as_str().parse::<SamplingPolicy>().unwrap(), p);
        }
    }
}
