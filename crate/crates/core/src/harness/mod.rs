//! Synthetic data, metrics, decoding and stage chaining.

mod decode;
pub mod gen;
mod metrics;

pub use decode::{constrained_decode, decode, Decode};
pub use gen::{gen_case, gen_cases, ConfusionModel, DetectConfig, GenConfig, GeneratedCase, McConfig};
pub use metrics::{evaluate, id_rate, label_mse, EvalReport, RegionRates};

use crate::domain::{FusionParams, SpineCase, VertebraLabel};
use crate::error::{Error, Result};
use crate::fusion::fuse;
use crate::scalar::Real;
use crate::uncertainty::{case_inputs, WeightMetric};

/// Labels for a case: fused with `params` when given, otherwise decoded from
/// the mean MC confidences.
pub fn predict<T: Real>(
    case: &SpineCase<T>,
    params: Option<&FusionParams<T>>,
    mode: Decode,
    metric: WeightMetric,
) -> Result<Vec<VertebraLabel>> {
    let states = match params {
        Some(p) => fuse(case, p, metric)?.last().to_vec(),
        None => case_inputs(case, metric)?.0,
    };
    decode(&states, mode)
}

/// Predicts every case and evaluates against its truths.
pub fn evaluate_cases<T: Real>(
    cases: &[SpineCase<T>],
    params: Option<&FusionParams<T>>,
    mode: Decode,
    metric: WeightMetric,
) -> Result<EvalReport> {
    let pairs = cases
        .iter()
        .map(|c| {
            let truth = c
                .truths()
                .ok_or_else(|| Error::domain(format!("case {} lacks ground truth", c.case_id)))?;
            Ok((predict(c, params, mode, metric)?, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}
