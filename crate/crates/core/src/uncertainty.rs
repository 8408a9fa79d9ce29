//! Monte-Carlo sample aggregation and per-vertebra uncertainty scores.

use serde::{Deserialize, Serialize};

use crate::domain::{ConfidenceState, McSampleSet, SpineCase, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Statistic a certainty weight is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMetric {
    /// `1 - H(p) / ln 24`.
    #[default]
    Entropy,
    /// `1 - variance / max_variance(N)`.
    Variance,
}

/// Uncertainty summary of one vertebra's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport<T> {
    pub mean_probs: ConfidenceState<T>,
    /// Predictive entropy of `mean_probs`, natural log.
    pub entropy: T,
    /// Mean over classes of the unbiased per-class sample variance.
    pub variance: T,
    /// `1 - entropy / ln 24`, in `[0, 1]`.
    pub certainty_weight: T,
    /// Number of samples the report was computed from.
    pub samples: usize,
}

impl<T: Real> UncertaintyReport<T> {
    /// Message weight used by fusion.
    pub fn weight(&self, metric: WeightMetric) -> T {
        match metric {
            WeightMetric::Entropy => self.certainty_weight,
            WeightMetric::Variance => variance_weight(self.variance, self.samples),
        }
    }
}

/// Element-wise mean of the samples, renormalized to sum to one.
///
/// Each class's values are summed in sorted order, so the result is exactly
/// invariant to sample order.
pub fn aggregate_samples<T: Real>(mc: &McSampleSet<T>) -> Result<ConfidenceState<T>> {
    if mc.is_empty() {
        return Err(Error::domain("cannot aggregate zero samples"));
    }
    let n = T::of_usize(mc.len());
    let mut mean: Vec<T> = (0..CLASS_COUNT)
        .map(|c| sorted_sum(mc.samples.iter().map(|s| s.probs[c])) / n)
        .collect();
    let total = sorted_sum(mean.iter().copied());
    mean.iter_mut().for_each(|p| *p = *p / total);
    ConfidenceState::new(mean)
}

fn sorted_sum<T: Real>(xs: impl Iterator<Item = T>) -> T {
    let mut v: Vec<T> = xs.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
    v.into_iter().sum()
}

/// Natural-log entropy with `0 * ln 0 = 0`.
pub fn entropy<T: Real>(p: &ConfidenceState<T>) -> T {
    let h: T = p
        .probs
        .iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| -x * x.ln())
        .sum();
    h.max(T::zero())
}

/// `ln 24`, the entropy of the uniform distribution.
pub fn max_entropy<T: Real>() -> T {
    T::of_usize(CLASS_COUNT).ln()
}

/// Upper bound of the mean per-class unbiased variance over `n` probability
/// samples: `n / (n - 1) * (1 - 1/24) / 24`. Each class's population variance
/// is at most `p_c (1 - p_c)`, and `sum_c p_c (1 - p_c) <= 1 - 1/24`.
pub fn max_variance<T: Real>(n: usize) -> T {
    if n < 2 {
        return T::zero();
    }
    let c = T::of_usize(CLASS_COUNT);
    let n = T::of_usize(n);
    n / (n - T::one()) * (T::one() - T::one() / c) / c
}

fn variance_weight<T: Real>(variance: T, n: usize) -> T {
    let bound = max_variance::<T>(n);
    if bound == T::zero() {
        return T::one();
    }
    (T::one() - variance / bound).max(T::zero()).min(T::one())
}

/// Mean probabilities, entropy, variance and certainty weight for one sample set.
pub fn report<T: Real>(mc: &McSampleSet<T>) -> Result<UncertaintyReport<T>> {
    let mean_probs = aggregate_samples(mc)?;
    let h = entropy(&mean_probs);
    let n = mc.len();
    let variance = if n < 2 {
        T::zero()
    } else {
        let nf = T::of_usize(n);
        let per_class: T = (0..CLASS_COUNT)
            .map(|c| {
                let m = sorted_sum(mc.samples.iter().map(|s| s.probs[c])) / nf;
                sorted_sum(mc.samples.iter().map(|s| (s.probs[c] - m) * (s.probs[c] - m))) / (nf - T::one())
            })
            .sum();
        per_class / T::of_usize(CLASS_COUNT)
    };
    let certainty_weight = (T::one() - h / max_entropy::<T>()).max(T::zero()).min(T::one());
    Ok(UncertaintyReport {
        mean_probs,
        entropy: h,
        variance,
        certainty_weight,
        samples: n,
    })
}

/// Computes a report for every vertebra and records the weight metric.
pub fn annotate_case<T: Real>(case: &mut SpineCase<T>, metric: WeightMetric) -> Result<()> {
    for v in &mut case.vertebrae {
        v.uncertainty = Some(report(&v.mc)?);
    }
    case.weight_metric = Some(metric);
    Ok(())
}

/// Mean confidences and message weights of a case, using attached reports
/// when present and computing them otherwise.
pub fn case_inputs<T: Real>(case: &SpineCase<T>, metric: WeightMetric) -> Result<(Vec<ConfidenceState<T>>, Vec<T>)> {
    let mut states = Vec::with_capacity(case.len());
    let mut weights = Vec::with_capacity(case.len());
    for v in &case.vertebrae {
        let r = match &v.uncertainty {
            Some(r) => r.clone(),
            None => report(&v.mc)?,
        };
        weights.push(r.weight(metric));
        states.push(r.mean_probs);
    }
    Ok((states, weights))
}
