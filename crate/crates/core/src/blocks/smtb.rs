use rand::Rng;

use super::attention::{smtransformer, AttentionParams};
use super::mask::MaskConfig;
use super::position::PositionEncodingParams;
use super::Frame;
use crate::error::Result;
use crate::tensor::{Mlp, ParamId, ParamStore, Tape, Var};

/// Projection, masked attention, residual, projection.
#[derive(Clone, Debug, PartialEq)]
pub struct SmtbParams {
    pub proj_in: Mlp,
    pub attention: AttentionParams,
    pub proj_out: Mlp,
    pub mask: MaskConfig,
}

impl SmtbParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        width: usize,
        encoding: PositionEncodingParams,
        mask: MaskConfig,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let proj_in = Mlp::projection(store, &format!("{name}.proj_in"), in_width, width, rng)?;
        let classes = mask.is_enabled().then_some(classes);
        let attention = AttentionParams::new(store, &format!("{name}.attn"), width, encoding, classes, false, rng)?;
        let proj_out = Mlp::projection(store, &format!("{name}.proj_out"), width, width, rng)?;
        Ok(Self {
            proj_in,
            attention,
            proj_out,
            mask,
        })
    }

    pub fn in_width(&self) -> usize {
        self.proj_in.in_width()
    }

    pub fn out_width(&self) -> usize {
        self.proj_out.out_width()
    }

    pub fn own_params(&self) -> Vec<ParamId> {
        let mut v = self.proj_in.params();
        v.extend(self.attention.own_params());
        v.extend(self.proj_out.params());
        v
    }
}

pub fn smtb(tape: &mut Tape, store: &ParamStore, f_in: Var, frame: &Frame<'_>, params: &SmtbParams) -> Result<Var> {
    let f = params.proj_in.forward(tape, store, f_in)?;
    let g = smtransformer(tape, store, f, frame, &params.attention, params.mask)?;
    let r = tape.add(g, f)?;
    params.proj_out.forward(tape, store, r)
}
