use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Positions (meters), per-point features and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Tensor,
    features: Tensor,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Tensor, features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if positions.rank() != 2 || positions.shape()[1] != 3 {
            return Err(Error::shape("point cloud positions", positions.shape(), &[0, 3]));
        }
        let n = positions.shape()[0];
        if n == 0 {
            return Err(Error::InvalidArgument("a point cloud needs at least one point".into()));
        }
        if !positions.is_finite() {
            return Err(Error::InvalidArgument("point positions must be finite".into()));
        }
        if features.rank() != 2 || features.shape()[0] != n {
            return Err(Error::shape("point cloud features", features.shape(), &[n, 0]));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("point cloud labels", &[l.len()], &[n]));
            }
        }
        Ok(Self {
            positions,
            features,
            labels,
        })
    }

    /// Cloud whose features are its own coordinates.
    pub fn from_positions(positions: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let features = positions.clone();
        Self::new(positions, features, labels)
    }

    pub fn len(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let r = self.positions.row(i);
        [r[0], r[1], r[2]]
    }

    /// Checks every label lies in `[0, classes)`.
    pub fn validate_labels(&self, classes: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    len: classes,
                });
            }
        }
        Ok(())
    }

    /// Reorders points so that new point `i` is old point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let take = |t: &Tensor| {
            let c = t.last_dim();
            let data = order.iter().flat_map(|&o| t.row(o).iter().copied()).collect();
            Tensor::new(vec![n, c], data)
        };
        Self::new(
            take(&self.positions)?,
            take(&self.features)?,
            self.labels
                .as_ref()
                .map(|l| order.iter().map(|&o| l[o]).collect()),
        )
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Self::new(self.positions.clone(), features, self.labels.clone())
    }

    pub fn into_parts(self) -> (Tensor, Tensor, Option<Vec<usize>>) {
        (self.positions, self.features, self.labels)
    }
}
