use crate::error::{Error, Result};

/// `T x T` confusion matrix, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::DataLength {
                expected: classes * classes,
                got: counts.len(),
            });
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::IndexOutOfRange {
                index: truth.max(pred),
                len: self.classes,
            });
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn add_all(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::DataLength {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        truth.iter().zip(pred).try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::InvalidArgument(format!(
                "cannot merge {}-class and {}-class confusion matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// `tp / (tp + fp + fn)`; `None` for a class absent from both truth and
    /// prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let denom = self.row_sum(c) + self.col_sum(c) - tp;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Per-class recall; `None` for classes without ground-truth points.
    pub fn accuracy(&self, c: usize) -> Option<f64> {
        let n = self.row_sum(c);
        (n > 0).then(|| self.get(c, c) as f64 / n as f64)
    }

    pub fn metrics(&self) -> Metrics {
        let mean = |vals: Vec<f64>| {
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let total = self.total();
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Metrics {
            miou: mean((0..self.classes).filter_map(|c| self.iou(c)).collect()),
            macc: mean((0..self.classes).filter_map(|c| self.accuracy(c)).collect()),
            oa: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub miou: f64,
    pub macc: f64,
    pub oa: f64,
}
