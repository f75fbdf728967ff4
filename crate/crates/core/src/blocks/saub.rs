use rand::Rng;

use super::attention::{skip_attention, AttentionParams};
use super::position::PositionEncodingParams;
use super::Frame;
use crate::error::{Error, Result};
use crate::geometry::{grid_unpool, PoolingMap};
use crate::tensor::{Mlp, ParamId, ParamStore, Tape, Var};

/// Skip-attention upsampling block.
#[derive(Clone, Debug, PartialEq)]
pub struct SaubParams {
    /// `(C_coarse + C_skip) -> C_fine` on the coarse level.
    pub proj_mid: Mlp,
    pub attention: AttentionParams,
    pub proj_out: Mlp,
}

impl SaubParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        coarse_width: usize,
        skip_width: usize,
        fine_width: usize,
        encoding: PositionEncodingParams,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let proj_mid = Mlp::projection(store, &format!("{name}.proj_mid"), coarse_width + skip_width, fine_width, rng)?;
        let attention = AttentionParams::new(store, &format!("{name}.attn"), fine_width, encoding, None, false, rng)?;
        let proj_out = Mlp::projection(store, &format!("{name}.proj_out"), fine_width, fine_width, rng)?;
        Ok(Self {
            proj_mid,
            attention,
            proj_out,
        })
    }

    pub fn own_params(&self) -> Vec<ParamId> {
        let mut v = self.proj_mid.params();
        v.extend(self.attention.own_params());
        v.extend(self.proj_out.params());
        v
    }
}

fn check_map(tape: &Tape, coarse: Var, fine: Var, map: &PoolingMap) -> Result<()> {
    let (cs, fs) = (tape.shape(coarse), tape.shape(fine));
    if cs.len() != 2 || cs[0] != map.coarse_len() {
        return Err(Error::shape("upsample coarse input", cs, &[map.coarse_len()]));
    }
    if fs.len() != 2 || fs[0] != map.fine_len() {
        return Err(Error::shape("upsample fine input", fs, &[map.fine_len()]));
    }
    Ok(())
}

/// `f_in2`, `f_l` live on the coarse level (`m` rows), `f_h` on the fine
/// level (`M` rows) described by `frame`.
#[allow(clippy::too_many_arguments)]
pub fn saub(
    tape: &mut Tape,
    store: &ParamStore,
    f_in2: Var,
    f_l: Var,
    f_h: Var,
    map: &PoolingMap,
    frame: &Frame<'_>,
    params: &SaubParams,
) -> Result<Var> {
    check_map(tape, f_in2, f_h, map)?;
    if tape.shape(f_l)[0] != tape.shape(f_in2)[0] {
        return Err(Error::shape("saub skip input", tape.shape(f_l), tape.shape(f_in2)));
    }
    let joined = tape.concat(&[f_in2, f_l])?;
    let mid = params.proj_mid.forward(tape, store, joined)?;
    let f_mid = grid_unpool(tape, mid, map)?;
    let g = skip_attention(tape, store, f_h, f_mid, frame, &params.attention)?;
    let r = tape.add(g, f_h)?;
    let r = tape.add(r, f_mid)?;
    params.proj_out.forward(tape, store, r)
}

/// Plain grid unpooling upsampler used when skip attention is disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct GridUnpoolParams {
    pub proj_coarse: Mlp,
    pub proj_skip: Mlp,
}

impl GridUnpoolParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        coarse_width: usize,
        fine_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            proj_coarse: Mlp::projection(store, &format!("{name}.proj_coarse"), coarse_width, fine_width, rng)?,
            proj_skip: Mlp::projection(store, &format!("{name}.proj_skip"), fine_width, fine_width, rng)?,
        })
    }

    pub fn own_params(&self) -> Vec<ParamId> {
        let mut v = self.proj_coarse.params();
        v.extend(self.proj_skip.params());
        v
    }
}

/// `unpool(proj(f_coarse)) + proj(f_h)`.
pub fn grid_unpool_block(
    tape: &mut Tape,
    store: &ParamStore,
    f_coarse: Var,
    f_h: Var,
    map: &PoolingMap,
    params: &GridUnpoolParams,
) -> Result<Var> {
    check_map(tape, f_coarse, f_h, map)?;
    let c = params.proj_coarse.forward(tape, store, f_coarse)?;
    let up = grid_unpool(tape, c, map)?;
    let s = params.proj_skip.forward(tape, store, f_h)?;
    tape.add(up, s)
}
