//! Attention blocks: baseline vector attention, the score-difference soft
//! mask, global+local position encoding, the soft-masked transformer block
//! and the skip-attention upsampling block.
//!
//! Every block runs on a [`Tape`] against a [`ParamStore`]; the geometry of
//! one resolution level is bundled into a [`Frame`].

mod attention;
mod mask;
mod position;
mod saub;
mod smtb;

pub use attention::{pt_attention, ptv2_attention, skip_attention, smtransformer, AttentionParams};
pub use mask::{hard_mask, score_difference, soft_mask, MaskConfig, ScoreProjections};
pub use position::{enhanced_position_encoding, EncodingKind, PositionEncodingParams};
pub use saub::{grid_unpool_block, saub, GridUnpoolParams, SaubParams};
pub use smtb::{smtb, SmtbParams};

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::Result;
use crate::geometry::{relative_positions, NeighborIndex};
use crate::tensor::{Tape, Tensor, Var};

/// Geometry of one resolution level as recorded on a tape: positions,
/// neighbor table and relative offsets. Position encodings evaluated on the
/// frame are memoised by sharing key, so blocks that share encoding
/// parameters also share one evaluation.
pub struct Frame<'a> {
    pub idx: &'a NeighborIndex,
    pub positions: Var,
    pub offsets: Var,
    encodings: RefCell<HashMap<String, Var>>,
}

impl<'a> Frame<'a> {
    pub fn new(tape: &mut Tape, positions: &Tensor, idx: &'a NeighborIndex) -> Result<Self> {
        let offsets = relative_positions(positions, idx)?;
        Ok(Self {
            idx,
            positions: tape.constant(positions.clone()),
            offsets: tape.constant(offsets),
            encodings: RefCell::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn k(&self) -> usize {
        self.idx.k()
    }

    fn cached(&self, key: &str) -> Option<Var> {
        self.encodings.borrow().get(key).copied()
    }

    fn remember(&self, key: &str, v: Var) {
        self.encodings.borrow_mut().insert(key.to_string(), v);
    }
}
