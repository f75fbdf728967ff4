//! Point clouds, neighbor search and voxel pooling.

mod cloud;
mod knn;
mod pooling;
pub mod xyzl;

pub use cloud::PointCloud;
pub use knn::{knn, knn_brute_force, knn_grid, NeighborIndex};
pub use pooling::{build_pooling_map, grid_pool, grid_unpool, pool_positions, PoolingMap};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Gathers neighbor rows: `[N, C]` values to `[N, K, C]`.
pub fn group(tape: &mut Tape, values: Var, idx: &NeighborIndex) -> Result<Var> {
    let shape = tape.shape(values).to_vec();
    if shape.len() != 2 || shape[0] != idx.len() {
        return Err(Error::shape("group", &shape, &[idx.len(), idx.k()]));
    }
    let flat = tape.gather(values, idx.flat().clone())?;
    tape.reshape(flat, &[idx.len(), idx.k(), shape[1]])
}

/// Non-differentiable [`group`] on a plain tensor.
pub fn group_tensor(values: &Tensor, idx: &NeighborIndex) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(values.clone());
    let g = group(&mut tape, v, idx)?;
    Ok(tape.value(g).clone())
}

/// Repeats each row `k` times: `[N, C]` to `[N, K, C]`.
pub fn broadcast_center(tape: &mut Tape, values: Var, k: usize) -> Result<Var> {
    let shape = tape.shape(values).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("broadcast_center", &shape, &[0, 0]));
    }
    let index: Vec<usize> = (0..shape[0]).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let flat = tape.gather(values, index)?;
    tape.reshape(flat, &[shape[0], k, shape[1]])
}

/// `out[i, j] = p[idx[i, j]] - p[i]`.
pub fn relative_positions(positions: &Tensor, idx: &NeighborIndex) -> Result<Tensor> {
    if positions.rank() != 2 || positions.shape()[1] != 3 || positions.shape()[0] != idx.len() {
        return Err(Error::shape("relative_positions", positions.shape(), &[idx.len(), 3]));
    }
    let (n, k) = (idx.len(), idx.k());
    let mut out = Vec::with_capacity(n * k * 3);
    for i in 0..n {
        let center = positions.row(i);
        for &j in idx.row(i) {
            let p = positions.row(j);
            out.extend((0..3).map(|a| p[a] - center[a]));
        }
    }
    Tensor::new(vec![n, k, 3], out)
}
