use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `K` neighbors per point, each row ordered by (distance, self first,
/// index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Arc<[usize]>,
    n: usize,
    k: usize,
}

impl NeighborIndex {
    /// Wraps a row-major `n x k` index table after validating every entry.
    pub fn from_rows(indices: Vec<usize>, n: usize, k: usize) -> Result<Self> {
        if indices.len() != n * k {
            return Err(Error::DataLength {
                expected: n * k,
                got: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(Self {
            indices: indices.into(),
            n,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn flat(&self) -> &Arc<[usize]> {
        &self.indices
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    not_self: bool,
    index: usize,
}

fn order(a: &Candidate, b: &Candidate) -> Ordering {
    a.d2.partial_cmp(&b.d2)
        .unwrap_or(Ordering::Equal)
        .then(a.not_self.cmp(&b.not_self))
        .then(a.index.cmp(&b.index))
}

fn point(positions: &Tensor, i: usize) -> [f64; 3] {
    let r = positions.row(i);
    [r[0], r[1], r[2]]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn check_inputs(positions: &Tensor, k: usize) -> Result<usize> {
    if positions.rank() != 2 || positions.shape()[1] != 3 {
        return Err(Error::shape("knn positions", positions.shape(), &[0, 3]));
    }
    let n = positions.shape()[0];
    if k > n {
        return Err(Error::TooManyNeighbors { k, n });
    }
    Ok(n)
}

fn take_k(mut cands: Vec<Candidate>, k: usize, out: &mut Vec<usize>) {
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(order);
    out.extend(cands.iter().map(|c| c.index));
}

/// Exact kNN by scanning every pair.
pub fn knn_brute_force(positions: &Tensor, k: usize) -> Result<NeighborIndex> {
    let n = check_inputs(positions, k)?;
    let mut out = Vec::with_capacity(n * k);
    if k > 0 {
        for i in 0..n {
            let p = point(positions, i);
            let cands = (0..n)
                .map(|j| Candidate {
                    d2: dist2(p, point(positions, j)),
                    not_self: j != i,
                    index: j,
                })
                .collect();
            take_k(cands, k, &mut out);
        }
    }
    NeighborIndex::from_rows(out, n, k)
}

/// Exact kNN through a uniform hash grid; returns the same table as
/// [`knn_brute_force`].
pub fn knn_grid(positions: &Tensor, k: usize) -> Result<NeighborIndex> {
    let n = check_inputs(positions, k)?;
    if k == 0 || n <= 64 {
        return knn_brute_force(positions, k);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..n {
        let p = point(positions, i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    let max_extent = extent.iter().copied().fold(0.0, f64::max);
    if max_extent <= 0.0 {
        return knn_brute_force(positions, k);
    }
    // Aim for about k points per occupied cell, treating flat axes as thin.
    let floor = max_extent * 1e-3;
    let volume: f64 = extent.iter().map(|e| e.max(floor)).product();
    let cell = (volume * k as f64 / n as f64).cbrt().max(floor);

    let key = |p: [f64; 3]| -> [i64; 3] {
        [
            ((p[0] - lo[0]) / cell).floor() as i64,
            ((p[1] - lo[1]) / cell).floor() as i64,
            ((p[2] - lo[2]) / cell).floor() as i64,
        ]
    };
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut max_key = [0i64; 3];
    for i in 0..n {
        let c = key(point(positions, i));
        for a in 0..3 {
            max_key[a] = max_key[a].max(c[a]);
        }
        cells.entry(c).or_default().push(i);
    }
    let max_ring = *max_key.iter().max().unwrap();

    let mut out = Vec::with_capacity(n * k);
    let mut cands = Vec::new();
    for i in 0..n {
        let p = point(positions, i);
        let c = key(p);
        cands.clear();
        let mut ring = 0i64;
        loop {
            visit_ring(c, ring, &cells, |j| {
                cands.push(Candidate {
                    d2: dist2(p, point(positions, j)),
                    not_self: j != i,
                    index: j,
                })
            });
            if ring >= max_ring {
                break;
            }
            if cands.len() >= k {
                // Unvisited points are at least (ring - 0.5) cells away; the
                // half-cell margin absorbs rounding in the cell assignment.
                let bound = (ring as f64 - 0.5) * cell;
                let mut scratch = cands.clone();
                scratch.select_nth_unstable_by(k - 1, order);
                let kth = scratch[k - 1].d2;
                if bound > 0.0 && kth < bound * bound {
                    break;
                }
            }
            ring += 1;
        }
        take_k(std::mem::take(&mut cands), k, &mut out);
    }
    NeighborIndex::from_rows(out, n, k)
}

/// Calls `f` for every point in cells at Chebyshev distance exactly `ring`.
fn visit_ring(
    center: [i64; 3],
    ring: i64,
    cells: &HashMap<[i64; 3], Vec<usize>>,
    mut f: impl FnMut(usize),
) {
    for dx in -ring..=ring {
        for dy in -ring..=ring {
            for dz in -ring..=ring {
                if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                    continue;
                }
                let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                if let Some(members) = cells.get(&key) {
                    members.iter().copied().for_each(&mut f);
                }
            }
        }
    }
}

/// Default kNN entry point (grid accelerated).
pub fn knn(positions: &Tensor, k: usize) -> Result<NeighborIndex> {
    knn_grid(positions, k)
}
