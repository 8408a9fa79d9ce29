//! Supervised contrastive loss with its analytic gradient, the LIS-based
//! sequence loss, and the weighted total.

use serde::{Deserialize, Serialize};

use crate::domain::{VertebraLabel, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};

/// Default temperature.
pub const DEFAULT_TAU: f64 = 0.1;

/// A batch of embeddings with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch<T> {
    /// One row per batch member, L2-normalized.
    pub vectors: Vec<Vec<T>>,
    pub labels: Vec<VertebraLabel>,
    pub tau: T,
}

impl<T: Real> EmbeddingBatch<T> {
    pub fn new(vectors: Vec<Vec<T>>, labels: Vec<VertebraLabel>, tau: T) -> Result<Self> {
        let b = EmbeddingBatch { vectors, labels, tau };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(&self.vectors, &self.labels, self.tau)?;
        for (v, row) in self.vectors.iter().enumerate() {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if (norm - T::one()).abs() > T::NORM_TOL {
                return Err(Error::invalid("unit-rows", format!("row {v} has norm {norm}")));
            }
        }
        Ok(())
    }
}

fn check_shape<T: Real>(vectors: &[Vec<T>], labels: &[VertebraLabel], tau: T) -> Result<()> {
    if !(tau.is_finite() && tau > T::zero()) {
        return Err(Error::domain(format!("temperature {tau} must be finite and > 0")));
    }
    if vectors.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if dim == 0 || vectors.iter().any(|r| r.len() != dim) {
        return Err(Error::domain("embedding rows must share a nonzero dimension"));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::domain("embedding has a non-finite entry"));
    }
    for (v, l) in labels.iter().enumerate() {
        if labels.iter().filter(|m| *m == l).count() < 2 {
            return Err(Error::domain(format!("member {v} ({l}) has no positive in the batch")));
        }
    }
    Ok(())
}

/// Pairwise logits `z_v . z_w / tau`.
fn logits<T: Real>(vectors: &[Vec<T>], tau: T) -> Vec<Vec<T>> {
    vectors
        .iter()
        .map(|a| {
            vectors
                .iter()
                .map(|b| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>() / tau)
                .collect()
        })
        .collect()
}

/// Supervised contrastive loss, summed over the batch, with the mean over
/// positives inside the logarithm:
///
/// `sum_v -log( (1/|G(v)|) sum_{g in G(v)} exp(s_vg) / sum_{a != v} exp(s_va) )`
///
/// where `s_vw = z_v . z_w / tau` and `G(v)` are the other members sharing
/// `v`'s label.
pub fn supcon_loss<T: Real>(batch: &EmbeddingBatch<T>) -> Result<T> {
    supcon_loss_rows(&batch.vectors, &batch.labels, batch.tau)
}

/// [`supcon_loss`] on rows that need not be unit length.
pub fn supcon_loss_rows<T: Real>(vectors: &[Vec<T>], labels: &[VertebraLabel], tau: T) -> Result<T> {
    check_shape(vectors, labels, tau)?;
    let s = logits(vectors, tau);
    let n = vectors.len();
    let mut total = T::zero();
    for v in 0..n {
        let others = (0..n).filter(|&a| a != v);
        let positives = others.clone().filter(|&g| labels[g] == labels[v]);
        let count = positives.clone().count();
        let lse_all = log_sum_exp(others.map(|a| s[v][a]));
        let lse_pos = log_sum_exp(positives.map(|g| s[v][g]));
        total = total + lse_all - lse_pos + T::of_usize(count).ln();
    }
    Ok(total)
}

/// Gradient of [`supcon_loss`] with respect to every embedding row, treating
/// rows as free variables. Returns a matrix shaped like `batch.vectors`.
pub fn supcon_grad<T: Real>(batch: &EmbeddingBatch<T>) -> Result<Vec<Vec<T>>> {
    supcon_grad_rows(&batch.vectors, &batch.labels, batch.tau)
}

pub fn supcon_grad_rows<T: Real>(vectors: &[Vec<T>], labels: &[VertebraLabel], tau: T) -> Result<Vec<Vec<T>>> {
    check_shape(vectors, labels, tau)?;
    let s = logits(vectors, tau);
    let n = vectors.len();
    // coef[v][w] = dL/ds_vw = softmax over all others - softmax over positives
    let mut coef = vec![vec![T::zero(); n]; n];
    for v in 0..n {
        let others: Vec<usize> = (0..n).filter(|&a| a != v).collect();
        let lse_all = log_sum_exp(others.iter().map(|&a| s[v][a]));
        let pos: Vec<usize> = others.iter().copied().filter(|&g| labels[g] == labels[v]).collect();
        let lse_pos = log_sum_exp(pos.iter().map(|&g| s[v][g]));
        for &a in &others {
            coef[v][a] = (s[v][a] - lse_all).exp();
        }
        for &g in &pos {
            coef[v][g] = coef[v][g] - (s[v][g] - lse_pos).exp();
        }
    }
    // s_vw = s_wv, so z_v collects both directions
    let dim = vectors[0].len();
    let mut grad = vec![vec![T::zero(); dim]; n];
    for v in 0..n {
        for w in (0..n).filter(|&w| w != v) {
            let c = (coef[v][w] + coef[w][v]) / tau;
            for (g, &z) in grad[v].iter_mut().zip(&vectors[w]) {
                *g = *g + c * z;
            }
        }
    }
    Ok(grad)
}

/// A predicted label sequence in cranial-to-caudal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(seq: Vec<usize>) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::domain("label sequence is empty"));
        }
        if let Some(x) = seq.iter().find(|&&x| x >= CLASS_COUNT) {
            return Err(Error::domain(format!("label index {x} outside [0, 23]")));
        }
        Ok(LabelSequence(seq))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn loss(&self) -> usize {
        sequence_loss(&self.0).expect("non-empty by construction")
    }
}

/// Length of the longest strictly increasing subsequence, O(n^2).
pub fn longest_increasing_run(seq: &[usize]) -> usize {
    let mut best = vec![1usize; seq.len()];
    for i in 0..seq.len() {
        for j in 0..i {
            if seq[i] > seq[j] {
                best[i] = best[i].max(best[j] + 1);
            }
        }
    }
    best.into_iter().max().unwrap_or(0)
}

/// Sequence loss: `n` minus the longest strictly increasing subsequence.
/// Zero exactly when the sequence is strictly increasing. Integer valued and
/// not differentiable.
pub fn sequence_loss(seq: &[usize]) -> Result<usize> {
    if seq.is_empty() {
        return Err(Error::domain("sequence loss of an empty sequence"));
    }
    Ok(seq.len() - longest_increasing_run(seq))
}

/// Weights of the fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            alpha: T::of(0.1),
            beta: T::of(0.5),
            gamma: T::one(),
        }
    }
}

/// `alpha * l_se + beta * l_mse + gamma * l_ce`.
pub fn total_loss<T: Real>(l_se: T, l_mse: T, l_ce: T, w: LossWeights<T>) -> Result<T> {
    let all = [l_se, l_mse, l_ce, w.alpha, w.beta, w.gamma];
    if all.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("total loss needs finite inputs"));
    }
    if [w.alpha, w.beta, w.gamma].iter().any(|&x| x < T::zero()) {
        return Err(Error::domain("loss weights must be >= 0"));
    }
    Ok(w.alpha * l_se + w.beta * l_mse + w.gamma * l_ce)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ix: &[usize]) -> Vec<VertebraLabel> {
        ix.iter().map(|&i| VertebraLabel::new(i).unwrap()).collect()
    }

    #[test]
    fn identical_embeddings() {
        let b = EmbeddingBatch::new(vec![vec![1.0, 0.0]; 4], labels(&[0, 0, 1, 1]), 0.1).unwrap();
        let l = supcon_loss(&b).unwrap();
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn domain_errors() {
        let rows = vec![vec![1.0, 0.0]; 3];
        assert!(matches!(
            supcon_loss_rows(&rows, &labels(&[0, 0, 1]), 0.1),
            Err(Error::Domain(_))
        ));
        assert!(supcon_loss_rows(&rows, &labels(&[0, 0, 0]), 0.0).is_err());
        assert!(supcon_loss_rows(&rows, &labels(&[0, 0, 0]), -1.0).is_err());
        assert!(EmbeddingBatch::new(vec![vec![2.0, 0.0]; 2], labels(&[0, 0]), 0.1).is_err());
    }

    #[test]
    fn swapped_identical_rows_share_gradient() {
        let rows = vec![
            vec![0.6, 0.8],
            vec![0.6, 0.8],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let g = supcon_grad_rows(&rows, &labels(&[2, 2, 5, 5]), 0.5f64).unwrap();
        for (a, b) in g[0].iter().zip(&g[1]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sequence_loss_examples() {
        assert_eq!(sequence_loss(&[7, 8, 9, 10]).unwrap(), 0);
        assert_eq!(sequence_loss(&[3, 1, 2, 4]).unwrap(), 1);
        assert_eq!(sequence_loss(&[23, 22, 21, 20, 19]).unwrap(), 4);
        assert_eq!(sequence_loss(&[5, 5, 5]).unwrap(), 2, "duplicates are penalized");
        assert_eq!(sequence_loss(&[4]).unwrap(), 0);
        assert!(sequence_loss(&[]).is_err());
        assert!(LabelSequence::new(vec![24]).is_err());
        assert_eq!(LabelSequence::new(vec![7, 8, 9, 11, 10]).unwrap().loss(), 1);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert!((total_loss(2.0f64, 0.4, 0.8, w).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, w).unwrap(), 0.0);
        let ce_only = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        };
        assert_eq!(total_loss(3.0, 2.0, 0.7, ce_only).unwrap(), 0.7);
        assert!(total_loss(f64::NAN, 0.0, 0.0, w).is_err());
        assert!(total_loss(0.0, 0.0, 0.0, LossWeights { alpha: -1.0, ..w }).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let b = EmbeddingBatch::new(vec![vec![1.0f32, 0.0]; 4], labels(&[0, 0, 1, 1]), 0.1).unwrap();
        assert!((supcon_loss(&b).unwrap() - 4.0 * 3f32.ln()).abs() < 1e-5);
    }
}
