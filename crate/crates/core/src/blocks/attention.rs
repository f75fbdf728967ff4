use rand::Rng;

use super::mask::{hard_mask, soft_mask, MaskConfig, ScoreProjections};
use super::position::PositionEncodingParams;
use super::Frame;
use crate::error::{Error, Result};
use crate::geometry::{broadcast_center, group};
use crate::tensor::{Linear, Mlp, ParamId, ParamStore, Tape, Var};

/// Weights of one vector-attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Relation MLP `C -> C -> C`; its output is softmaxed over neighbors.
    pub attention: Mlp,
    pub encoding: PositionEncodingParams,
    pub scores: Option<ScoreProjections>,
    /// Offset-driven multiplier on the query/key relation.
    pub multiplier: Option<Mlp>,
}

impl AttentionParams {
    /// `classes` adds score projections for masking; `multiplier` adds the
    /// relation multiplier.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        encoding: PositionEncodingParams,
        classes: Option<usize>,
        multiplier: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if encoding.width != width {
            return Err(Error::InvalidArgument(format!(
                "position encoding `{}` has width {}, block `{name}` needs {width}",
                encoding.sharing_key, encoding.width
            )));
        }
        let query = Linear::new(store, &format!("{name}.query"), width, width, true, rng)?;
        let key = Linear::new(store, &format!("{name}.key"), width, width, true, rng)?;
        let value = Linear::new(store, &format!("{name}.value"), width, width, true, rng)?;
        let attention = Mlp::new(store, &format!("{name}.attn"), &[width, width, width], rng)?;
        let scores = match classes {
            Some(t) => Some(ScoreProjections::new(store, &format!("{name}.scores"), width, t, rng)?),
            None => None,
        };
        let multiplier = if multiplier {
            Some(Mlp::new(store, &format!("{name}.mult"), &[3, width, width], rng)?)
        } else {
            None
        };
        Ok(Self {
            query,
            key,
            value,
            attention,
            encoding,
            scores,
            multiplier,
        })
    }

    pub fn width(&self) -> usize {
        self.query.fan_out
    }

    /// Parameters owned by this layer, excluding the position encoding.
    pub fn own_params(&self) -> Vec<ParamId> {
        let mut v = self.query.params();
        v.extend(self.key.params());
        v.extend(self.value.params());
        v.extend(self.attention.params());
        if let Some(s) = &self.scores {
            v.extend(s.params());
        }
        if let Some(m) = &self.multiplier {
            v.extend(m.params());
        }
        v
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.own_params();
        v.extend(self.encoding.params());
        v
    }

    fn check_width(&self, tape: &Tape, f: Var, rows: usize) -> Result<()> {
        let s = tape.shape(f);
        if s.len() != 2 || s[0] != rows || s[1] != self.width() {
            return Err(Error::shape("attention input", s, &[rows, self.width()]));
        }
        Ok(())
    }
}

/// Shared core: `sum_j softmax_j(A(rel_ij + pe_ij)) * (v_j + pe_ij) * s_ij`.
#[allow(clippy::too_many_arguments)]
fn vector_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    frame: &Frame<'_>,
    center: Var,
    neighbors: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let k = frame.k();
    let q = params.query.forward(tape, store, center)?;
    let kf = params.key.forward(tape, store, neighbors)?;
    let vf = params.value.forward(tape, store, neighbors)?;
    let kg = group(tape, kf, frame.idx)?;
    let vg = group(tape, vf, frame.idx)?;
    let qb = broadcast_center(tape, q, k)?;
    let pe = params.encoding.encode(tape, store, frame)?;

    let mut rel = tape.sub(kg, qb)?;
    if let Some(m) = &params.multiplier {
        let scale = m.forward(tape, store, frame.offsets)?;
        rel = tape.mul(scale, rel)?;
    }
    let rel = tape.add(rel, pe)?;
    let logits = params.attention.forward(tape, store, rel)?;
    let weights = tape.softmax(logits, 1)?;
    let values = tape.add(vg, pe)?;
    let mut weighted = tape.mul(weights, values)?;
    if let Some(s) = mask {
        weighted = tape.mul_rows(weighted, s)?;
    }
    tape.sum_axis(weighted, 1)
}

/// Baseline point-transformer vector attention.
pub fn pt_attention(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    frame: &Frame<'_>,
    params: &AttentionParams,
) -> Result<Var> {
    params.check_width(tape, f, frame.len())?;
    vector_attention(tape, store, params, frame, f, f, None)
}

/// Vector attention with the offset multiplier on the relation term.
pub fn ptv2_attention(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    frame: &Frame<'_>,
    params: &AttentionParams,
) -> Result<Var> {
    if params.multiplier.is_none() {
        return Err(Error::InvalidArgument("ptv2 attention needs a multiplier MLP".into()));
    }
    params.check_width(tape, f, frame.len())?;
    vector_attention(tape, store, params, frame, f, f, None)
}

/// Vector attention re-weighted by a soft or hard score-difference mask.
/// With [`MaskConfig::None`] this is exactly [`pt_attention`].
pub fn smtransformer(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    frame: &Frame<'_>,
    params: &AttentionParams,
    mask: MaskConfig,
) -> Result<Var> {
    params.check_width(tape, f, frame.len())?;
    let s = match mask {
        MaskConfig::None => None,
        MaskConfig::Soft | MaskConfig::Hard { .. } => {
            let scores = params
                .scores
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("masking requires score projections".into()))?;
            Some(match mask {
                MaskConfig::Hard { tau } => hard_mask(tape, store, f, frame.idx, scores, tau)?,
                _ => soft_mask(tape, store, f, frame.idx, scores)?,
            })
        }
    };
    vector_attention(tape, store, params, frame, f, f, s)
}

/// Queries from the fine features `f_h`, keys and values from the
/// upsampled features `f_mid` over the fine neighborhoods.
pub fn skip_attention(
    tape: &mut Tape,
    store: &ParamStore,
    f_h: Var,
    f_mid: Var,
    frame: &Frame<'_>,
    params: &AttentionParams,
) -> Result<Var> {
    params.check_width(tape, f_h, frame.len())?;
    if tape.shape(f_mid) != tape.shape(f_h) {
        return Err(Error::shape("skip_attention", tape.shape(f_h), tape.shape(f_mid)));
    }
    vector_attention(tape, store, params, frame, f_h, f_mid, None)
}
