//! Named gradient-check suites over small random problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, random_projection, GradcheckConfig, GradcheckReport, Selection};
use crate::blocks::{
    enhanced_position_encoding, pt_attention, ptv2_attention, saub, skip_attention, smtb, smtransformer, soft_mask,
    AttentionParams, Frame, MaskConfig, PositionEncodingParams, SaubParams, ScoreProjections, SmtbParams,
};
use crate::error::{Error, Result};
use crate::geometry::{build_pooling_map, knn, pool_positions};
use crate::network::{Model, NetworkConfig};
use crate::tensor::{Linear, Mlp, ParamId, ParamStore, Tensor};

/// Suites runnable by name.
pub const SUITES: &[&str] = &[
    "linear",
    "softmax",
    "mlp",
    "pt_attention",
    "ptv2_attention",
    "soft_mask",
    "enhanced_position_encoding",
    "smtransformer",
    "smtb",
    "skip_attention",
    "saub",
    "network",
];

const POINTS: usize = 32;
const K: usize = 16;
const WIDTH: usize = 8;
const CLASSES: usize = 3;
const NETWORK_POINTS: usize = 48;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("volume matches")
}

pub fn random_positions(n: usize, rng: &mut impl Rng) -> Tensor {
    let n3 = n * 3;
    Tensor::new(vec![n, 3], (0..n3).map(|_| rng.gen_range(0.0..1.0)).collect()).expect("volume matches")
}

fn input(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut impl Rng) -> Result<ParamId> {
    store.insert(name, random_tensor(shape, rng))
}

/// Runs one named suite with the given seed.
pub fn run(name: &str, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = GradcheckConfig::default();
    let all = Selection::All;
    let label = format!("{name} (seed {seed})");
    match name {
        "linear" => {
            let x = input(&mut store, "input", &[5, 4], &mut rng)?;
            let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let xv = t.param(s, x);
                let y = lin.forward(t, s, xv)?;
                random_projection(t, y, seed)
            })
        }
        "softmax" => {
            let x = input(&mut store, "input", &[4, 3, 5], &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let xv = t.param(s, x);
                let y = t.softmax(xv, 1)?;
                random_projection(t, y, seed)
            })
        }
        "mlp" => {
            let x = input(&mut store, "input", &[12, 4], &mut rng)?;
            let mlp = Mlp::new(&mut store, "mlp", &[4, 6, 3], &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let xv = t.param(s, x);
                let y = mlp.forward(t, s, xv)?;
                random_projection(t, y, seed)
            })
        }
        "pt_attention" | "ptv2_attention" | "smtransformer" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let x = input(&mut store, "input", &[POINTS, WIDTH], &mut rng)?;
            let pe = if name == "smtransformer" {
                PositionEncodingParams::enhanced(&mut store, "pe", WIDTH, &mut rng)?
            } else {
                PositionEncodingParams::bias(&mut store, "pe", WIDTH, &mut rng)?
            };
            let classes = (name == "smtransformer").then_some(CLASSES);
            let params = AttentionParams::new(
                &mut store,
                "attn",
                WIDTH,
                pe,
                classes,
                name == "ptv2_attention",
                &mut rng,
            )?;
            check(&label, &store, None, all, cfg, |t, s| {
                let frame = Frame::new(t, &pos, &idx)?;
                let xv = t.param(s, x);
                let y = match name {
                    "pt_attention" => pt_attention(t, s, xv, &frame, &params)?,
                    "ptv2_attention" => ptv2_attention(t, s, xv, &frame, &params)?,
                    _ => smtransformer(t, s, xv, &frame, &params, MaskConfig::Soft)?,
                };
                random_projection(t, y, seed)
            })
        }
        "soft_mask" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let x = input(&mut store, "input", &[POINTS, WIDTH], &mut rng)?;
            let scores = ScoreProjections::new(&mut store, "scores", WIDTH, CLASSES, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let xv = t.param(s, x);
                let y = soft_mask(t, s, xv, &idx, &scores)?;
                random_projection(t, y, seed)
            })
        }
        "enhanced_position_encoding" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let pe = PositionEncodingParams::enhanced(&mut store, "pe", WIDTH, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let frame = Frame::new(t, &pos, &idx)?;
                let y = enhanced_position_encoding(t, s, &frame, &pe)?;
                random_projection(t, y, seed)
            })
        }
        "smtb" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let x = input(&mut store, "input", &[POINTS, 5], &mut rng)?;
            let pe = PositionEncodingParams::enhanced(&mut store, "pe", WIDTH, &mut rng)?;
            let block = SmtbParams::new(&mut store, "smtb", 5, WIDTH, pe, MaskConfig::Soft, CLASSES, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let frame = Frame::new(t, &pos, &idx)?;
                let xv = t.param(s, x);
                let y = smtb(t, s, xv, &frame, &block)?;
                random_projection(t, y, seed)
            })
        }
        "skip_attention" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let fh = input(&mut store, "f_h", &[POINTS, WIDTH], &mut rng)?;
            let fm = input(&mut store, "f_mid", &[POINTS, WIDTH], &mut rng)?;
            let pe = PositionEncodingParams::enhanced(&mut store, "pe", WIDTH, &mut rng)?;
            let params = AttentionParams::new(&mut store, "skip", WIDTH, pe, None, false, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let frame = Frame::new(t, &pos, &idx)?;
                let (h, m) = (t.param(s, fh), t.param(s, fm));
                let y = skip_attention(t, s, h, m, &frame, &params)?;
                random_projection(t, y, seed)
            })
        }
        "saub" => {
            let pos = random_positions(POINTS, &mut rng);
            let idx = knn(&pos, K)?;
            let map = build_pooling_map(&pos, 0.4)?;
            let coarse = pool_positions(&pos, &map)?;
            let m = coarse.shape()[0];
            let fin2 = input(&mut store, "f_in2", &[m, 6], &mut rng)?;
            let fl = input(&mut store, "f_l", &[m, 6], &mut rng)?;
            let fh = input(&mut store, "f_h", &[POINTS, WIDTH], &mut rng)?;
            let pe = PositionEncodingParams::enhanced(&mut store, "pe", WIDTH, &mut rng)?;
            let params = SaubParams::new(&mut store, "saub", 6, 6, WIDTH, pe, &mut rng)?;
            check(&label, &store, None, all, cfg, |t, s| {
                let frame = Frame::new(t, &pos, &idx)?;
                let (a, b, h) = (t.param(s, fin2), t.param(s, fl), t.param(s, fh));
                let y = saub(t, s, a, b, h, &map, &frame, &params)?;
                random_projection(t, y, seed)
            })
        }
        "network" => {
            let config = NetworkConfig {
                grid: vec![0.35, 0.7],
                ..NetworkConfig::tiny(CLASSES)
            };
            let model = Model::build(&config, seed)?;
            let pos = random_positions(NETWORK_POINTS, &mut rng);
            let hier = model.hierarchy(&pos)?;
            let mut store = model.store().clone();
            let x = store.insert("input", pos.clone())?;
            let selection = Selection::Fraction {
                fraction: 0.01,
                min: 64,
                seed,
            };
            check(&label, &store, None, selection, cfg, |t, s| {
                let xv = t.param(s, x);
                let y = model.logits(t, s, xv, &hier)?;
                random_projection(t, y, seed)
            })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown gradcheck suite `{other}` (known: {})",
            SUITES.join(", ")
        ))),
    }
}
