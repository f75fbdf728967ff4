//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on perturbed copies of a
//! [`ParamStore`]; the analytic side runs one tape backward. Anything that
//! should be checked (layer weights, but also plain op inputs) is placed in
//! the store.

pub mod suites;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    /// Second, larger step tried when `step` disagrees; it trades roundoff
    /// for truncation error.
    pub retry_step: f64,
    pub rtol: f64,
    /// Absolute slack for entries whose true gradient is ~0.
    pub atol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            retry_step: 1e-4,
            rtol: 1e-4,
            atol: 1e-8,
        }
    }
}

/// Which scalar entries to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Selection {
    All,
    /// A seeded random subset of roughly `fraction` of all entries (at least
    /// `min` of them).
    Fraction { fraction: f64, min: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
    /// Entries skipped because the forward and backward one-sided
    /// differences disagree: the step straddles a max/ReLU switch.
    pub kinks: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.kinks * 100 <= self.checked
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} entries, max rel err {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error
        )?;
        if self.kinks > 0 {
            write!(f, ", {} at kinks", self.kinks)?;
        }
        if let Some(m) = self.failures.first() {
            write!(
                f,
                " (first mismatch {}[{}]: analytic {:.6e} vs numeric {:.6e})",
                m.param, m.index, m.analytic, m.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares the tape gradient of `forward` against central differences for
/// the selected entries of `params` (all parameters when `None`).
pub fn check<F>(
    name: &str,
    store: &ParamStore,
    params: Option<&[ParamId]>,
    selection: Selection,
    config: GradcheckConfig,
    forward: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.ids().collect(),
    };

    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    let center = tape.value(loss).item();
    // Roundoff of a central difference on a loss of this magnitude.
    let noise = 8.0 * f64::EPSILON * center.abs().max(1.0) / config.step;
    tape.backward(loss)?;
    let analytic: std::collections::HashMap<ParamId, Vec<f64>> = tape
        .param_grads()
        .into_iter()
        .map(|(id, g)| (id, g.into_data()))
        .collect();

    let mut entries: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    if let Selection::Fraction {
        fraction,
        min,
        seed,
    } = selection
    {
        let want = ((entries.len() as f64 * fraction).ceil() as usize)
            .max(min)
            .min(entries.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, entries.len(), want).into_vec();
        picked.sort_unstable();
        entries = picked.into_iter().map(|i| entries[i]).collect();
    }

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut work = store.clone();
    let mut report = GradcheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
        kinks: 0,
    };
    for (id, i) in entries {
        let original = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = original + config.step;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[i] = original - config.step;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[i] = original;

        let a = analytic.get(&id).map_or(0.0, |g| g[i]);
        let compare = |numeric: f64, noise: f64| {
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            (diff, scale, config.rtol * scale + config.atol + noise)
        };
        let mut numeric = (up - down) / (2.0 * config.step);
        let (mut diff, mut scale, mut allowed) = compare(numeric, noise);
        if diff > allowed {
            let forward_slope = (up - center) / config.step;
            let backward_slope = (center - down) / config.step;
            let spread = (forward_slope - backward_slope).abs();
            let near_one_side = (a - forward_slope).abs() <= allowed || (a - backward_slope).abs() <= allowed;
            if near_one_side && spread > 10.0 * allowed {
                report.kinks += 1;
                continue;
            }
            let h = config.retry_step;
            work.get_mut(id).data_mut()[i] = original + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original;
            let wide = (up - down) / (2.0 * h);
            let retry = compare(wide, noise * config.step / h);
            if retry.0 <= retry.2 {
                numeric = wide;
                (diff, scale, allowed) = retry;
            }
        }
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        if diff > allowed - config.rtol * scale {
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        if diff > allowed {
            report.failures.push(Mismatch {
                param: store.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
            });
        }
        report.checked += 1;
    }
    Ok(report)
}

/// `sum(x * r)` for a fixed pseudo-random `r` in [-1, 1]; turns any tensor
/// into a scalar whose gradient exercises every output entry unequally.
pub fn random_projection(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    use rand::Rng;
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a0d);
    let n: usize = shape.iter().product();
    let r = crate::tensor::Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let r = tape.constant(r);
    let prod = tape.mul(x, r)?;
    Ok(tape.sum(prod))
}
