use serde::{Deserialize, Serialize};

use crate::domain::{ConfidenceState, VertebraLabel, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How final confidences become labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decode {
    /// Per-vertebra argmax, ties to the smaller index.
    #[default]
    Argmax,
    /// Best consecutive window, see [`constrained_decode`].
    Constrained,
}

const LOG_FLOOR: f64 = 1e-12;

/// Chooses the start `s` maximizing `sum_i ln(C_i[s + i] + 1e-12)` over all
/// windows that fit in the 24 classes and returns `s, s + 1, ...`. Ties go to
/// the smallest start.
pub fn constrained_decode<T: Real>(states: &[ConfidenceState<T>]) -> Result<Vec<VertebraLabel>> {
    let k = states.len();
    if k == 0 {
        return Err(Error::domain("constrained decode of an empty case"));
    }
    if k > CLASS_COUNT {
        return Err(Error::domain(format!("{k} vertebrae exceed {CLASS_COUNT} classes")));
    }
    let floor = T::of(LOG_FLOOR);
    let score = |s: usize| -> T {
        states
            .iter()
            .enumerate()
            .map(|(i, c)| (c.probs[s + i] + floor).ln())
            .sum()
    };
    let mut best = 0;
    let mut best_score = score(0);
    for s in 1..=CLASS_COUNT - k {
        let v = score(s);
        if v > best_score {
            best = s;
            best_score = v;
        }
    }
    Ok((best..best + k).map(|i| VertebraLabel::new(i).expect("in range")).collect())
}

pub fn decode<T: Real>(states: &[ConfidenceState<T>], mode: Decode) -> Result<Vec<VertebraLabel>> {
    match mode {
        Decode::Argmax => Ok(states.iter().map(ConfidenceState::argmax).collect()),
        Decode::Constrained => constrained_decode(states),
    }
}
