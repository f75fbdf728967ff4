use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    /// Unit square floor at `z = 0`.
    Plane,
    /// Sphere resting on the floor.
    Sphere,
    /// Axis-aligned box resting on the floor; its bottom face is not
    /// sampled.
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimitiveSpec {
    pub kind: Primitive,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub primitives: Vec<PrimitiveSpec>,
    pub points: usize,
    /// Per-axis Gaussian noise (scene units).
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    /// Floor (0), sphere (1) and box (2).
    pub fn toy(points: usize, noise: f64, seed: u64) -> Self {
        Self {
            primitives: vec![
                PrimitiveSpec { kind: Primitive::Plane, label: 0 },
                PrimitiveSpec { kind: Primitive::Sphere, label: 1 },
                PrimitiveSpec { kind: Primitive::Box, label: 2 },
            ],
            points,
            noise,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.primitives.iter().map(|p| p.label + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidArgument("scene needs at least one primitive".into()));
        }
        if self.points < 64 {
            return Err(Error::InvalidArgument(format!("scene needs at least 64 points, got {}", self.points)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise must be non-negative, got {}", self.noise)));
        }
        Ok(())
    }
}

fn sample_sphere(rng: &mut impl Rng, center: [f64; 3], r: f64) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [center[0] + r * s * phi.cos(), center[1] + r * s * phi.sin(), center[2] + r * z]
}

/// Uniform over the five non-bottom faces of a box `[lo, hi]`.
fn sample_box(rng: &mut impl Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    let e = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let faces = [e[0] * e[1], e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2]];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut face = 0;
    while face < faces.len() - 1 && pick >= faces[face] {
        pick -= faces[face];
        face += 1;
    }
    let mut p = [
        rng.gen_range(lo[0]..hi[0]),
        rng.gen_range(lo[1]..hi[1]),
        rng.gen_range(lo[2]..hi[2]),
    ];
    match face {
        0 => p[2] = hi[2],
        1 => p[0] = lo[0],
        2 => p[0] = hi[0],
        3 => p[1] = lo[1],
        _ => p[1] = hi[1],
    }
    p
}

/// Floor plus objects standing in random slots along `x`. Deterministic in
/// `spec.seed`; points are split evenly over primitives and shuffled.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = spec.primitives.iter().filter(|p| p.kind != Primitive::Plane).count();
    let mut slots: Vec<usize> = (0..objects).collect();
    slots.shuffle(&mut rng);
    let slot_width = 1.0 / objects.max(1) as f64;
    let size = (0.4 * slot_width).min(0.2);

    let n = spec.primitives.len();
    let mut points = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    let mut next_slot = slots.into_iter();
    for (i, prim) in spec.primitives.iter().enumerate() {
        let count = spec.points / n + usize::from(i < spec.points % n);
        match prim.kind {
            Primitive::Plane => {
                for _ in 0..count {
                    points.push([rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0]);
                }
            }
            Primitive::Sphere | Primitive::Box => {
                let slot = next_slot.next().expect("one slot per object");
                let cx = (slot as f64 + 0.5) * slot_width;
                let cy = rng.gen_range(0.35..0.65);
                let r = size * rng.gen_range(0.8..1.2);
                if prim.kind == Primitive::Sphere {
                    for _ in 0..count {
                        points.push(sample_sphere(&mut rng, [cx, cy, r], r));
                    }
                } else {
                    let h = [r * rng.gen_range(0.6..1.0), r * rng.gen_range(0.6..1.0), r * rng.gen_range(0.6..1.0)];
                    let lo = [cx - h[0], cy - h[1], 0.0];
                    let hi = [cx + h[0], cy + h[1], 2.0 * h[2]];
                    for _ in 0..count {
                        points.push(sample_box(&mut rng, lo, hi));
                    }
                }
            }
        }
        labels.extend(std::iter::repeat(prim.label).take(count));
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in &mut points {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let data = order.iter().flat_map(|&i| points[i]).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();
    PointCloud::from_positions(Tensor::new(vec![spec.points, 3], data)?, Some(labels))
}

/// `count` toy scenes whose seeds are drawn from `seed`.
pub fn generate_dataset(count: usize, points: usize, noise: f64, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| generate_scene(&SyntheticSceneSpec::toy(points, noise, rng.gen())))
        .collect()
}

/// Train and test toy sets with disjoint seed streams derived from `seed`.
pub fn toy_splits(
    train: usize,
    test: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let base = seed.wrapping_mul(2);
    Ok((
        generate_dataset(train, points, noise, base.wrapping_add(1))?,
        generate_dataset(test, points, noise, base.wrapping_add(2))?,
    ))
}

/// Random geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Isotropic scale drawn uniformly from this range.
    pub scale: (f64, f64),
    /// Axes that may be mirrored.
    pub flip_axes: [bool; 3],
    /// Chance of mirroring each enabled axis.
    pub flip_probability: f64,
    /// Per-axis Gaussian jitter.
    pub jitter: f64,
}

impl AugmentConfig {
    pub const IDENTITY: AugmentConfig = AugmentConfig {
        scale: (1.0, 1.0),
        flip_axes: [false; 3],
        flip_probability: 0.0,
        jitter: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidArgument(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale: (0.9, 1.1),
            flip_axes: [true, true, false],
            flip_probability: 0.5,
            jitter: 0.005,
        }
    }
}

/// Transforms positions; labels are untouched. Features that mirror the
/// positions are recomputed from the new positions.
pub fn augment(cloud: &PointCloud, ops: &AugmentConfig, seed: u64) -> Result<PointCloud> {
    ops.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ops.scale;
    let scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let mut sign = [1.0; 3];
    for a in 0..3 {
        if ops.flip_axes[a] && rng.gen_bool(ops.flip_probability) {
            sign[a] = -1.0;
        }
    }
    let mut data = cloud.positions().data().to_vec();
    for p in data.chunks_mut(3) {
        for a in 0..3 {
            p[a] *= scale * sign[a];
        }
    }
    if ops.jitter > 0.0 {
        let normal = Normal::new(0.0, ops.jitter).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    let positions = Tensor::new(cloud.positions().shape().to_vec(), data)?;
    let labels = cloud.labels().map(<[usize]>::to_vec);
    if cloud.features() == cloud.positions() {
        PointCloud::from_positions(positions, labels)
    } else {
        PointCloud::new(positions, cloud.features().clone(), labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_plane_without_noise_is_flat_and_single_class() {
        let spec = SyntheticSceneSpec {
            primitives: vec![PrimitiveSpec { kind: Primitive::Plane, label: 0 }],
            points: 100,
            noise: 0.0,
            seed: 3,
        };
        let c = generate_scene(&spec).unwrap();
        assert!(c.labels().unwrap().iter().all(|&l| l == 0));
        assert!((0..c.len()).all(|i| c.point(i)[2] == 0.0));
    }

    #[test]
    fn plane_and_sphere_give_two_labels() {
        let spec = SyntheticSceneSpec {
            primitives: vec![
                PrimitiveSpec { kind: Primitive::Plane, label: 0 },
                PrimitiveSpec { kind: Primitive::Sphere, label: 1 },
            ],
            points: 128,
            noise: 0.01,
            seed: 9,
        };
        let c = generate_scene(&spec).unwrap();
        let mut seen: Vec<usize> = c.labels().unwrap().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![0, 1]);
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(generate_scene(&SyntheticSceneSpec::toy(32, 0.0, 0)).is_err());
        assert!(generate_scene(&SyntheticSceneSpec::toy(128, -1.0, 0)).is_err());
        let empty = SyntheticSceneSpec {
            primitives: vec![],
            ..SyntheticSceneSpec::toy(128, 0.0, 0)
        };
        assert!(generate_scene(&empty).is_err());
    }

    #[test]
    fn bad_augment_ranges_rejected() {
        let c = generate_scene(&SyntheticSceneSpec::toy(64, 0.0, 1)).unwrap();
        for ops in [
            AugmentConfig { scale: (0.0, 1.0), ..AugmentConfig::IDENTITY },
            AugmentConfig { scale: (1.2, 1.1), ..AugmentConfig::IDENTITY },
            AugmentConfig { flip_probability: 1.5, ..AugmentConfig::IDENTITY },
            AugmentConfig { jitter: -0.1, ..AugmentConfig::IDENTITY },
        ] {
            assert!(augment(&c, &ops, 0).is_err());
        }
    }
}
