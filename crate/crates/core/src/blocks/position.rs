use rand::Rng;

use super::Frame;
use crate::error::{Error, Result};
use crate::geometry::{broadcast_center, group};
use crate::tensor::{Mlp, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum EncodingKind {
    /// Bias `delta(dp_ij)` over local offsets only.
    Bias { local: Mlp },
    /// Global encoder on absolute positions, differenced over the
    /// neighborhood and concatenated with the local offsets before the
    /// local encoder.
    Enhanced { global: Mlp, local: Mlp },
}

/// Position-encoding parameters plus the key identifying who owns them.
/// Blocks holding equal keys hold the same [`ParamId`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionEncodingParams {
    pub sharing_key: String,
    pub width: usize,
    pub kind: EncodingKind,
}

impl PositionEncodingParams {
    /// `3 -> C -> C` offset encoder.
    pub fn bias(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            sharing_key: name.to_string(),
            width,
            kind: EncodingKind::Bias {
                local: Mlp::new(store, &format!("{name}.local"), &[3, width, width], rng)?,
            },
        })
    }

    /// Global `3 -> C -> C` encoder and local `(C + 3) -> C -> C` encoder.
    pub fn enhanced(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            sharing_key: name.to_string(),
            width,
            kind: EncodingKind::Enhanced {
                global: Mlp::new(store, &format!("{name}.global"), &[3, width, width], rng)?,
                local: Mlp::new(store, &format!("{name}.local"), &[width + 3, width, width], rng)?,
            },
        })
    }

    pub fn is_enhanced(&self) -> bool {
        matches!(self.kind, EncodingKind::Enhanced { .. })
    }

    pub fn params(&self) -> Vec<ParamId> {
        match &self.kind {
            EncodingKind::Bias { local } => local.params(),
            EncodingKind::Enhanced { global, local } => {
                let mut v = global.params();
                v.extend(local.params());
                v
            }
        }
    }

    /// `[N, K, C]` encoding of the frame's neighborhoods.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, frame: &Frame<'_>) -> Result<Var> {
        if let Some(v) = frame.cached(&self.sharing_key) {
            return Ok(v);
        }
        let out = match &self.kind {
            EncodingKind::Bias { local } => local.forward(tape, store, frame.offsets)?,
            EncodingKind::Enhanced { global, local } => {
                let q = global.forward(tape, store, frame.positions)?;
                let k = group(tape, q, frame.idx)?;
                let qb = broadcast_center(tape, q, frame.k())?;
                let diff = tape.sub(k, qb)?;
                let joined = tape.concat(&[diff, frame.offsets])?;
                local.forward(tape, store, joined)?
            }
        };
        frame.remember(&self.sharing_key, out);
        Ok(out)
    }
}

/// Global+local position encoding; rejects offset-only parameter sets.
pub fn enhanced_position_encoding(
    tape: &mut Tape,
    store: &ParamStore,
    frame: &Frame<'_>,
    pe: &PositionEncodingParams,
) -> Result<Var> {
    if !pe.is_enhanced() {
        return Err(Error::InvalidArgument(format!(
            "`{}` is an offset-only encoding",
            pe.sharing_key
        )));
    }
    pe.encode(tape, store, frame)
}
