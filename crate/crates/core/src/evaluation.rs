//! Detection metrics and per-domain evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{self, Checkpoint};
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::gaussianity;
use crate::synthdata::Benchmark;
use crate::whitening::{self, TransformSampler};

pub const ACC_THRESHOLD: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 64;
pub const HISTOGRAM_RANGE: (f64, f64) = (-6.0, 6.0);

/// Probability that a random FAKE outscores a random REAL, ties counting ½.
///
/// Computed from the rank sum of the FAKE scores with midranks for ties.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_fake = labels.iter().filter(|&&l| l == Label::Fake).count();
    let n_real = labels.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::SingleClassData);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut fake_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let midrank = (start + 1 + end) as f64 / 2.0;
        let fakes = order[start..end].iter().filter(|&&i| labels[i] == Label::Fake).count();
        fake_rank_sum += midrank * fakes as f64;
        start = end;
    }
    let nf = n_fake as f64;
    let u = fake_rank_sum - nf * (nf + 1.0) / 2.0;
    Ok(u / (nf * n_real as f64))
}

/// Fraction classified correctly at `threshold` (scores `>= threshold` are FAKE),
/// optionally restricted to rows of one class.
pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64, class_filter: Option<Label>) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if class_filter.is_some_and(|f| f != l) {
            continue;
        }
        total += 1;
        let predicted = if s >= threshold { Label::Fake } else { Label::Real };
        correct += usize::from(predicted == l);
    }
    if total == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub auc: f64,
    pub acc: f64,
    pub real_acc: f64,
    pub fake_acc: f64,
    pub gaussianity_real: f64,
    pub gaussianity_fake: f64,
    pub n: usize,
}

/// Fixed-range histogram; values outside the range land in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let pos = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        let idx = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub source_domain: String,
    pub per_domain: BTreeMap<String, DomainMetrics>,
    /// Mean AUC over every domain except the source; absent when there are none.
    pub average_target_auc: Option<f64>,
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Whitened residuals per domain and class, named `<domain>/<class>`.
    pub histograms: Vec<Histogram>,
}

impl EvaluationReport {
    pub fn histograms_for(&self, domain: &str) -> Vec<&Histogram> {
        let prefix = format!("{domain}/");
        self.histograms.iter().filter(|h| h.name.starts_with(&prefix)).collect()
    }

    /// Plain-text table of the per-domain metrics.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>7} {:>7} {:>8} {:>8} {:>9} {:>9}",
            "domain", "n", "auc", "acc", "real_acc", "fake_acc", "gauss_r", "gauss_f"
        );
        for (name, m) in &self.per_domain {
            let tag = if *name == self.source_domain { format!("{name}*") } else { name.clone() };
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>7.4} {:>7.4} {:>8.4} {:>8.4} {:>9.4} {:>9.4}",
                tag, m.n, m.auc, m.acc, m.real_acc, m.fake_acc, m.gaussianity_real, m.gaussianity_fake
            );
        }
        let _ = match self.average_target_auc {
            Some(a) => writeln!(out, "average target auc: {a:.4}"),
            None => writeln!(out, "average target auc: n/a"),
        };
        let _ = writeln!(out, "(* source domain; mc_samples = {}, mc_seed = {})", self.mc_samples, self.mc_seed);
        out
    }
}

/// Scores every domain with `ckpt` and collects metrics and plot data.
///
/// Residual histograms and Gaussianity scores always use the law-mean
/// whitening transform of the stored meta-distribution, whatever the
/// checkpoint's sampling policy.
pub fn evaluate(
    ckpt: &Checkpoint,
    domains: &[FeatureMatrix],
    source_domain: &str,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<EvaluationReport> {
    let plot_transform = TransformSampler::new(&ckpt.meta, ckpt.config.floor_options())?.mean_transform()?;
    let mut per_domain = BTreeMap::new();
    let mut histograms = Vec::new();
    let mut target_aucs = Vec::new();

    for x in domains {
        let scores = classifier::predict(ckpt, x, mc_samples, mc_seed)?;
        let labels = x.labels();
        let z = whitening::apply(&plot_transform, x)?;
        let mut gauss = [0.0; 2];
        for (slot, label) in [Label::Real, Label::Fake].into_iter().enumerate() {
            let zc = z.filter(label);
            let mut h = Histogram::new(
                format!("{}/{}", x.domain(), label),
                HISTOGRAM_RANGE.0,
                HISTOGRAM_RANGE.1,
                HISTOGRAM_BINS,
            );
            zc.values().iter().for_each(|&v| h.add(v));
            histograms.push(h);
            gauss[slot] = gaussianity::moment_report(&zc)?.aggregate_score;
        }
        let metrics = DomainMetrics {
            auc: auc(&scores, labels)?,
            acc: accuracy(&scores, labels, ACC_THRESHOLD, None)?,
            real_acc: accuracy(&scores, labels, ACC_THRESHOLD, Some(Label::Real))?,
            fake_acc: accuracy(&scores, labels, ACC_THRESHOLD, Some(Label::Fake))?,
            gaussianity_real: gauss[0],
            gaussianity_fake: gauss[1],
            n: x.n(),
        };
        if x.domain() != source_domain {
            target_aucs.push(metrics.auc);
        }
        if per_domain.insert(x.domain().to_string(), metrics).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate domain tag {:?}", x.domain())));
        }
    }

    let average_target_auc =
        (!target_aucs.is_empty()).then(|| target_aucs.iter().sum::<f64>() / target_aucs.len() as f64);
    Ok(EvaluationReport {
        source_domain: source_domain.to_string(),
        per_domain,
        average_target_auc,
        mc_samples,
        mc_seed,
        histograms,
    })
}

/// Evaluates on the held-out source split and every target domain.
pub fn evaluate_benchmark(ckpt: &Checkpoint, bench: &Benchmark, mc_samples: usize, mc_seed: u64) -> Result<EvaluationReport> {
    let mut domains = vec![bench.source_test.clone()];
    domains.extend(bench.targets.iter().cloned());
    evaluate(ckpt, &domains, bench.source_test.domain(), mc_samples, mc_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, seeded};
    use proptest::prelude::*;
    use Label::{Fake, Real};

    pub(crate) fn brute_force_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let (mut wins, mut ties, mut pairs) = (0u64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li != Fake {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != Real {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
        (wins as f64 + 0.5 * ties as f64) / pairs as f64
    }

    #[test]
    fn auc_small_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[Fake, Real]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[Fake, Real, Fake, Real, Real, Fake]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.6, 0.4], &[Fake, Real, Fake]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[Real, Real]), Err(Error::SingleClassData)));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0.9, 0.1], &[Fake, Real], 0.5, None).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.4, 0.6], &[Real, Real], 0.5, Some(Real)).unwrap(), 0.5);
        assert_eq!(accuracy(&[0.5], &[Fake], 0.5, None).unwrap(), 1.0);
        assert!(matches!(accuracy(&[0.5], &[Fake], 0.5, Some(Real)), Err(Error::EmptySelection)));
    }

    #[test]
    fn histogram_clamps_to_edges() {
        let mut h = Histogram::new("x", -1.0, 1.0, 4);
        for v in [-5.0, -1.0, -0.1, 0.0, 0.99, 1.0, 7.0] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![2, 1, 1, 3]);
        assert_eq!(h.total(), 7);
    }

    fn random_instance(seed: u64) -> (Vec<f64>, Vec<Label>) {
        let mut r = seeded(seed);
        let n = 2 + (rng::open01(&mut r) * 199.0) as usize;
        let levels = 1 + (rng::open01(&mut r) * 30.0) as usize;
        let mut labels: Vec<Label> = (0..n).map(|_| if rng::open01(&mut r) < 0.5 { Real } else { Fake }).collect();
        labels[0] = Real;
        labels[1] = Fake;
        let scores = (0..n).map(|_| (rng::open01(&mut r) * levels as f64).floor() / levels as f64).collect();
        (scores, labels)
    }

    #[test]
    fn auc_matches_brute_force() {
        for seed in 0..200 {
            let (s, l) = random_instance(seed);
            assert_eq!(auc(&s, &l).unwrap(), brute_force_auc(&s, &l));
        }
    }

    proptest! {
        #[test]
        fn auc_monotone_invariance(seed in any::<u64>()) {
            let (s, l) = random_instance(seed);
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn auc_complement(seed in any::<u64>()) {
            let mut r = seeded(seed);
            let n = 2 + (rng::open01(&mut r) * 100.0) as usize;
            let scores: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
            let mut labels: Vec<Label> = (0..n).map(|_| if rng::open01(&mut r) < 0.5 { Real } else { Fake }).collect();
            labels[0] = Real;
            labels[1] = Fake;
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            let sum = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn real_only_accuracy(scores in prop::collection::vec(0.0f64..1.0, 1..100)) {
            let labels = vec![Real; scores.len()];
            let above = scores.iter().filter(|&&s| s >= 0.5).count();
            let want = (scores.len() - above) as f64 / scores.len() as f64;
            prop_assert_eq!(accuracy(&scores, &labels, 0.5, Some(Real)).unwrap(), want);
        }
    }
}
