//! Bootstrap particle-filter mathematics: likelihood evaluation, weight
//! accumulation and normalization, and multinomial resampling into a
//! (parents, counts) multiset.
//!
//! Everything here is a pure function of its value inputs. Resampling is a
//! pure function of the weight vector and a caller-provided seed, which is
//! what makes whole-run determinism testable end to end.

use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate ensemble: all weights are zero")]
    DegenerateEnsemble,
}

/// An unnormalized particle weight: a non-negative, finite density value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weight(f64);

impl Weight {
    pub fn new(value: f64) -> Result<Self, FilterError> {
        if !value.is_finite() || value < 0.0 {
            return Err(FilterError::Numeric(format!(
                "weight must be finite and non-negative, got {value}"
            )));
        }
        Ok(Weight(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Normalized weights: one entry per particle, each in [0, 1], summing to 1
/// within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights(Vec<f64>);

impl NormalizedWeights {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A vector in observation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsVector(pub Vec<f64>);

impl ObsVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianIid,
}

/// Observation-noise model used for likelihood evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Result<Self, FilterError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FilterError::Numeric(format!(
                "noise sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(NoiseSpec {
            kind: NoiseKind::GaussianIid,
            sigma,
        })
    }
}

/// The outcome of one resampling step: unique parent indices and how many
/// children each parent spawns. Parents are kept sorted ascending so the
/// representation is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleMultiset {
    pub parents: Vec<usize>,
    pub counts: Vec<u64>,
}

impl ResampleMultiset {
    /// Number of unique parents (the paper's Q).
    pub fn unique_parents(&self) -> usize {
        self.parents.len()
    }

    /// Total number of children (must equal the ensemble size P).
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn validate(&self, ensemble_size: usize) -> Result<(), FilterError> {
        if self.parents.len() != self.counts.len() {
            return Err(FilterError::InvalidEnsemble(
                "parents/counts length mismatch".into(),
            ));
        }
        if self.total() != ensemble_size as u64 {
            return Err(FilterError::InvalidEnsemble(format!(
                "multiset total {} != ensemble size {}",
                self.total(),
                ensemble_size
            )));
        }
        let mut prev: Option<usize> = None;
        for (&p, &c) in self.parents.iter().zip(&self.counts) {
            if c == 0 {
                return Err(FilterError::InvalidEnsemble("zero count".into()));
            }
            if p >= ensemble_size {
                return Err(FilterError::InvalidEnsemble(format!(
                    "parent index {p} out of range"
                )));
            }
            if let Some(q) = prev {
                if p <= q {
                    return Err(FilterError::InvalidEnsemble(
                        "parents not strictly ascending".into(),
                    ));
                }
            }
            prev = Some(p);
        }
        Ok(())
    }
}

/// Kahan-compensated sum; keeps the normalization invariant inside 1e-12
/// even for large ensembles.
fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Uniform initial weights 1/P.
pub fn init_weights(ensemble_size: usize) -> Result<NormalizedWeights, FilterError> {
    if ensemble_size == 0 {
        return Err(FilterError::InvalidEnsemble(
            "ensemble size must be at least 1".into(),
        ));
    }
    let w = 1.0 / ensemble_size as f64;
    Ok(NormalizedWeights(vec![w; ensemble_size]))
}

/// Gaussian likelihood kernel exp(-|y - Hx|^2 / (2 sigma^2)).
///
/// The (2 pi sigma^2)^(-d/2) constant is dropped: it cancels in
/// normalization and would underflow for large observation dimensions.
pub fn likelihood(
    projected: &ObsVector,
    observation: &ObsVector,
    noise: &NoiseSpec,
) -> Result<Weight, FilterError> {
    if projected.dim() != observation.dim() {
        return Err(FilterError::Shape(format!(
            "projected dim {} != observation dim {}",
            projected.dim(),
            observation.dim()
        )));
    }
    let mut sq = 0.0;
    for (p, y) in projected.0.iter().zip(&observation.0) {
        if !p.is_finite() || !y.is_finite() {
            return Err(FilterError::Numeric("non-finite observation input".into()));
        }
        let r = y - p;
        sq += r * r;
    }
    let NoiseKind::GaussianIid = noise.kind;
    let w = (-sq / (2.0 * noise.sigma * noise.sigma)).exp();
    Weight::new(w)
}

/// w_t = likelihood * w_{t-1}.
pub fn accumulate_weight(prev: Weight, like: Weight) -> Result<Weight, FilterError> {
    let product = prev.value() * like.value();
    if !product.is_finite() {
        return Err(FilterError::Numeric(format!(
            "weight product overflowed: {} * {}",
            prev.value(),
            like.value()
        )));
    }
    Weight::new(product)
}

/// Divide by the sum of weights. The divisor is the ensemble estimate of the
/// evidence (up to the dropped kernel constant). All-zero input is surfaced
/// as an error rather than silently reset to uniform.
pub fn normalize(weights: &[Weight]) -> Result<NormalizedWeights, FilterError> {
    if weights.is_empty() {
        return Err(FilterError::InvalidEnsemble("empty weight vector".into()));
    }
    let sum = kahan_sum(weights.iter().map(|w| w.value()));
    if sum <= 0.0 {
        return Err(FilterError::DegenerateEnsemble);
    }
    Ok(NormalizedWeights(
        weights.iter().map(|w| w.value() / sum).collect(),
    ))
}

/// Multinomial SIR: draw P indices with the given probabilities from a
/// seeded generator. Pure in (weights, seed).
pub fn resample(weights: &NormalizedWeights, seed: u64) -> ResampleMultiset {
    let p = weights.len();
    // Cumulative distribution; the final entry is forced to 1 so a draw of
    // u -> 1 cannot fall off the end.
    let mut cdf = Vec::with_capacity(p);
    let mut acc = 0.0;
    for &w in weights.values() {
        acc += w;
        cdf.push(acc);
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }

    let mut rng = rng::seeded_rng(seed);
    let mut counts = vec![0u64; p];
    for _ in 0..p {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        // First index whose cumulative weight exceeds u.
        let idx = cdf.partition_point(|&c| c <= u);
        counts[idx.min(p - 1)] += 1;
    }

    let mut parents = Vec::new();
    let mut kept = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            parents.push(i);
            kept.push(c);
        }
    }
    ResampleMultiset {
        parents,
        counts: kept,
    }
}

/// Effective sample size 1 / sum(w_hat^2); the classic degeneracy diagnostic.
pub fn effective_sample_size(weights: &NormalizedWeights) -> f64 {
    let sq = kahan_sum(weights.values().iter().map(|w| w * w));
    1.0 / sq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: f64) -> Weight {
        Weight::new(v).unwrap()
    }

    #[test]
    fn init_weights_uniform() {
        let nw = init_weights(4).unwrap();
        assert_eq!(nw.values(), &[0.25, 0.25, 0.25, 0.25]);
        let nw = init_weights(1).unwrap();
        assert_eq!(nw.values(), &[1.0]);
    }

    #[test]
    fn init_weights_large_ensemble_sums_to_one() {
        let nw = init_weights(2555).unwrap();
        assert!(nw.values().iter().all(|&v| v == 1.0 / 2555.0));
        let sum = kahan_sum(nw.values().iter().copied());
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_weights_rejects_empty() {
        assert!(matches!(
            init_weights(0),
            Err(FilterError::InvalidEnsemble(_))
        ));
    }

    #[test]
    fn likelihood_zero_residual_is_one() {
        let noise = NoiseSpec::gaussian(0.7).unwrap();
        let y = ObsVector(vec![1.0, -2.0, 3.5]);
        let like = likelihood(&y, &y, &noise).unwrap();
        assert_eq!(like.value(), 1.0);
    }

    #[test]
    fn likelihood_one_sigma_residual() {
        let noise = NoiseSpec::gaussian(2.0).unwrap();
        let proj = ObsVector(vec![0.0]);
        let obs = ObsVector(vec![2.0]);
        let like = likelihood(&proj, &obs, &noise).unwrap();
        assert!((like.value() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((like.value() - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn likelihood_only_residual_norm_matters() {
        // 2-D residual [2, 0] with sigma 2 equals the 1-D one-sigma case.
        let noise = NoiseSpec::gaussian(2.0).unwrap();
        let proj = ObsVector(vec![0.0, 5.0]);
        let obs = ObsVector(vec![2.0, 5.0]);
        let like = likelihood(&proj, &obs, &noise).unwrap();
        assert!((like.value() - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn likelihood_rejects_shape_mismatch_and_non_finite() {
        let noise = NoiseSpec::gaussian(1.0).unwrap();
        let a = ObsVector(vec![0.0, 1.0]);
        let b = ObsVector(vec![0.0]);
        assert!(matches!(
            likelihood(&a, &b, &noise),
            Err(FilterError::Shape(_))
        ));
        let nan = ObsVector(vec![f64::NAN]);
        assert!(matches!(
            likelihood(&nan, &b, &noise),
            Err(FilterError::Numeric(_))
        ));
    }

    #[test]
    fn accumulate_products() {
        assert_eq!(accumulate_weight(w(0.25), w(0.0)).unwrap().value(), 0.0);
        assert_eq!(accumulate_weight(w(0.25), w(0.5)).unwrap().value(), 0.125);
        let acc = accumulate_weight(w(0.25), w((-0.5f64).exp())).unwrap();
        assert!((acc.value() - 0.15163).abs() < 1e-5);
    }

    #[test]
    fn accumulate_overflow_is_an_error() {
        let big = w(f64::MAX);
        assert!(matches!(
            accumulate_weight(big, w(2.0)),
            Err(FilterError::Numeric(_))
        ));
    }

    #[test]
    fn normalize_divides_by_sum() {
        let nw = normalize(&[w(1.0), w(1.0), w(1.0), w(1.0)]).unwrap();
        assert_eq!(nw.values(), &[0.25, 0.25, 0.25, 0.25]);
        let nw = normalize(&[w(2.0), w(6.0)]).unwrap();
        assert_eq!(nw.values(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        assert!(matches!(
            normalize(&[w(0.0), w(0.0), w(0.0)]),
            Err(FilterError::DegenerateEnsemble)
        ));
    }

    #[test]
    fn resample_degenerate_weight_takes_all() {
        let nw = normalize(&[w(1.0), w(0.0), w(0.0), w(0.0)]).unwrap();
        for seed in [0u64, 1, 99, u64::MAX] {
            let ms = resample(&nw, seed);
            assert_eq!(ms.parents, vec![0]);
            assert_eq!(ms.counts, vec![4]);
        }
    }

    #[test]
    fn resample_conserves_total_and_is_deterministic() {
        let nw = init_weights(4).unwrap();
        let a = resample(&nw, 1234);
        let b = resample(&nw, 1234);
        assert_eq!(a, b);
        a.validate(4).unwrap();
        assert_eq!(a.total(), 4);
    }

    #[test]
    fn resample_mean_counts_match_expectation() {
        // Monte-Carlo oracle: E[alpha_q] = P * w_q for a multinomial draw.
        let nw = normalize(&[w(0.5), w(0.3), w(0.2)]).unwrap();
        let trials = 10_000u64;
        let mut sums = [0u64; 3];
        for seed in 0..trials {
            let ms = resample(&nw, seed);
            for (p, c) in ms.parents.iter().zip(&ms.counts) {
                sums[*p] += c;
            }
        }
        let expected = [1.5, 0.9, 0.6];
        for q in 0..3 {
            let mean = sums[q] as f64 / trials as f64;
            assert!(
                (mean - expected[q]).abs() < 0.05,
                "mean alpha[{q}] = {mean}, expected {}",
                expected[q]
            );
        }
    }

    #[test]
    fn effective_sample_size_examples() {
        assert!((effective_sample_size(&init_weights(4).unwrap()) - 4.0).abs() < 1e-12);
        let degenerate = normalize(&[w(1.0), w(0.0), w(0.0), w(0.0)]).unwrap();
        assert!((effective_sample_size(&degenerate) - 1.0).abs() < 1e-12);
        let skew = normalize(&[w(0.25), w(0.75)]).unwrap();
        assert!((effective_sample_size(&skew) - 1.6).abs() < 1e-12);
    }
}
