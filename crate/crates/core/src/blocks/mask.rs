use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{broadcast_center, group, NeighborIndex};
use crate::tensor::{Linear, ParamId, ParamStore, Tape, Tensor, Var};

/// How attention weights are re-weighted per (point, neighbor).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskConfig {
    None,
    Soft,
    /// Binary mask: 1 where the largest score difference reaches `tau`.
    Hard { tau: f64 },
}

impl MaskConfig {
    pub fn hard(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(MaskConfig::Hard { tau })
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self, MaskConfig::None)
    }
}

/// Score query/key heads `C -> T`, each followed by a softmax over `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreProjections {
    pub query: Linear,
    pub key: Linear,
    pub classes: usize,
}

impl ScoreProjections {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "score projections need at least 2 classes, got {classes}"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, classes, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), width, classes, true, rng)?,
            classes,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.query.params();
        v.extend(self.key.params());
        v
    }
}

/// `G[softmax(W_k f)] - softmax(W_q f)` as `[N, K, T]`.
pub fn score_difference(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    idx: &NeighborIndex,
    scores: &ScoreProjections,
) -> Result<Var> {
    let width = *tape.shape(f).last().unwrap_or(&0);
    if width != scores.query.fan_in {
        return Err(Error::shape("score projections", tape.shape(f), &[scores.query.fan_in]));
    }
    let q = scores.query.forward(tape, store, f)?;
    let q = tape.softmax(q, 1)?;
    let k = scores.key.forward(tape, store, f)?;
    let k = tape.softmax(k, 1)?;
    let k = group(tape, k, idx)?;
    let qb = broadcast_center(tape, q, idx.k())?;
    tape.sub(k, qb)
}

/// Soft mask `[N, K]` in `[0, 1]`: min-max normalize the score difference
/// over the neighbor axis per (point, class), take the max over classes,
/// then the Euclidean norm of the resulting scalar.
pub fn soft_mask(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    idx: &NeighborIndex,
    scores: &ScoreProjections,
) -> Result<Var> {
    let d = score_difference(tape, store, f, idx, scores)?;
    let normed = tape.min_max_normalize(d, 1)?;
    let peak = tape.max_axis(normed, 2)?;
    let (n, k) = (idx.len(), idx.k());
    let peak = tape.reshape(peak, &[n, k, 1])?;
    tape.norm(peak, 2)
}

/// Binary mask `[N, K]`: 1 where `max_T(K^s - Q^s) >= tau`. Carries no
/// gradient.
pub fn hard_mask(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    idx: &NeighborIndex,
    scores: &ScoreProjections,
    tau: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    let d = score_difference(tape, store, f, idx, scores)?;
    let peak = tape.max_axis(d, 2)?;
    let values = tape.value(peak);
    let bits = values
        .data()
        .iter()
        .map(|&v| if v >= tau { 1.0 } else { 0.0 })
        .collect();
    let mask = Tensor::new(values.shape().to_vec(), bits)?;
    Ok(tape.constant(mask))
}
