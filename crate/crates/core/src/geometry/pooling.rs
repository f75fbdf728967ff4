use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Assignment of fine points to voxel cells of side `grid_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingMap {
    cell_of: Arc<[usize]>,
    cells: usize,
    grid_size: f64,
}

impl PoolingMap {
    /// Identity map: every point is its own cell.
    pub fn identity(n: usize) -> Self {
        Self {
            cell_of: (0..n).collect::<Vec<_>>().into(),
            cells: n,
            grid_size: 0.0,
        }
    }

    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    /// Number of fine points.
    pub fn fine_len(&self) -> usize {
        self.cell_of.len()
    }

    /// Number of coarse cells.
    pub fn coarse_len(&self) -> usize {
        self.cells
    }

    pub fn grid_size(&self) -> f64 {
        self.grid_size
    }

    pub fn members_per_cell(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cells];
        for &c in self.cell_of.iter() {
            counts[c] += 1;
        }
        counts
    }
}

/// Quantizes positions to `floor(p / grid_size)` and numbers the occupied
/// cells in order of first appearance.
pub fn build_pooling_map(positions: &Tensor, grid_size: f64) -> Result<PoolingMap> {
    if !(grid_size > 0.0 && grid_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid size must be positive, got {grid_size}"
        )));
    }
    if positions.rank() != 2 || positions.shape()[1] != 3 {
        return Err(Error::shape("pooling positions", positions.shape(), &[0, 3]));
    }
    let n = positions.shape()[0];
    let mut ids: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cell_of = Vec::with_capacity(n);
    for i in 0..n {
        let p = positions.row(i);
        let key = [
            (p[0] / grid_size).floor() as i64,
            (p[1] / grid_size).floor() as i64,
            (p[2] / grid_size).floor() as i64,
        ];
        let next = ids.len();
        cell_of.push(*ids.entry(key).or_insert(next));
    }
    Ok(PoolingMap {
        cell_of: cell_of.into(),
        cells: ids.len(),
        grid_size,
    })
}

/// Mean position of each cell's members.
pub fn pool_positions(positions: &Tensor, map: &PoolingMap) -> Result<Tensor> {
    if positions.rank() != 2 || positions.shape()[0] != map.fine_len() {
        return Err(Error::shape("pool_positions", positions.shape(), &[map.fine_len(), 3]));
    }
    let c = positions.shape()[1];
    let mut sums = vec![0.0; map.cells * c];
    let counts = map.members_per_cell();
    for (i, &cell) in map.cell_of.iter().enumerate() {
        for (s, v) in sums[cell * c..(cell + 1) * c].iter_mut().zip(positions.row(i)) {
            *s += v;
        }
    }
    for (cell, &count) in counts.iter().enumerate() {
        for s in &mut sums[cell * c..(cell + 1) * c] {
            *s /= count as f64;
        }
    }
    Tensor::new(vec![map.cells, c], sums)
}

/// Per-cell channel max of features and mean of positions.
pub fn grid_pool(tape: &mut Tape, features: Var, positions: &Tensor, map: &PoolingMap) -> Result<(Var, Tensor)> {
    let fs = tape.shape(features);
    if fs.len() != 2 || fs[0] != map.fine_len() {
        return Err(Error::shape("grid_pool", fs, &[map.fine_len()]));
    }
    let pooled = tape.segment_max(features, &map.cell_of, map.cells)?;
    Ok((pooled, pool_positions(positions, map)?))
}

/// Broadcasts each coarse row back to every member of its cell.
pub fn grid_unpool(tape: &mut Tape, coarse: Var, map: &PoolingMap) -> Result<Var> {
    let cs = tape.shape(coarse);
    if cs.len() != 2 || cs[0] != map.cells {
        return Err(Error::shape("grid_unpool", cs, &[map.cells]));
    }
    tape.gather(coarse, map.cell_of.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(points: &[[f64; 3]]) -> Tensor {
        Tensor::new(
            vec![points.len(), 3],
            points.iter().flat_map(|p| p.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_cell_and_two_cell_examples() {
        let p = pts(&[[0.1, 0.1, 0.1], [0.2, 0.3, 0.4], [0.45, 0.0, 0.49]]);
        assert_eq!(build_pooling_map(&p, 0.5).unwrap().coarse_len(), 1);
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let map = build_pooling_map(&p, 0.5).unwrap();
        assert_eq!(map.coarse_len(), 2);
        assert_eq!(map.cell_of(), &[0, 1]);
    }

    #[test]
    fn rejects_non_positive_grid() {
        let p = pts(&[[0.0; 3]]);
        assert!(build_pooling_map(&p, 0.0).is_err());
        assert!(build_pooling_map(&p, -1.0).is_err());
        assert!(build_pooling_map(&p, f64::NAN).is_err());
    }

    #[test]
    fn negative_coordinates_floor_toward_minus_infinity() {
        let p = pts(&[[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        assert_eq!(build_pooling_map(&p, 1.0).unwrap().coarse_len(), 2);
    }

    #[test]
    fn pool_hand_example() {
        let p = pts(&[[0.1, 0.0, 0.0], [0.3, 0.2, 0.0]]);
        let map = build_pooling_map(&p, 1.0).unwrap();
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let (pooled, pos) = grid_pool(&mut tape, f, &p, &map).unwrap();
        assert_eq!(tape.value(pooled).data(), &[3.0, 5.0]);
        assert!((pos.data()[0] - 0.2).abs() < 1e-15);
        assert!((pos.data()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn unpool_single_cell_repeats_row() {
        let map = build_pooling_map(&pts(&[[0.0; 3], [0.1; 3], [0.2; 3]]), 1.0).unwrap();
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_rows(&[&[4.0, -1.0]]));
        let u = grid_unpool(&mut tape, c, &map).unwrap();
        assert_eq!(tape.value(u).data(), &[4.0, -1.0, 4.0, -1.0, 4.0, -1.0]);
        let wrong = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(grid_unpool(&mut tape, wrong, &map).is_err());
    }
}
