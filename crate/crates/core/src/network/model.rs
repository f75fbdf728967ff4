use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, Upsample};
use super::registry::ParamRegistry;
use crate::blocks::{grid_unpool_block, saub, smtb, Frame, GridUnpoolParams, SaubParams, SmtbParams};
use crate::error::{Error, Result};
use crate::geometry::{build_pooling_map, knn, pool_positions, NeighborIndex, PointCloud, PoolingMap};
use crate::tensor::{read_checkpoint, write_checkpoint, Mlp, ParamStore, Tape, Tensor, Var};

const CONFIG_TENSOR: &str = "meta.config";

/// Positions, neighbor tables and pooling maps of every level for one
/// cloud. `maps[l]` takes level `l` to level `l + 1`.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub positions: Vec<Tensor>,
    pub neighbors: Vec<NeighborIndex>,
    pub maps: Vec<PoolingMap>,
}

impl Hierarchy {
    /// `K` is clamped to the number of points at each level.
    pub fn build(positions: &Tensor, config: &NetworkConfig) -> Result<Self> {
        let mut levels = vec![positions.clone()];
        let mut maps = Vec::new();
        for &g in &config.grid {
            let prev = levels.last().unwrap();
            let map = build_pooling_map(prev, g)?;
            levels.push(pool_positions(prev, &map)?);
            maps.push(map);
        }
        let neighbors = levels
            .iter()
            .map(|p| knn(p, config.k.min(p.shape()[0])))
            .collect::<Result<_>>()?;
        Ok(Self {
            positions: levels,
            neighbors,
            maps,
        })
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.shape()[0]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Upsampler {
    Saub(SaubParams),
    Gub(GridUnpoolParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage {
    pub up: Upsampler,
    pub block: SmtbParams,
}

/// Parameter totals; `by_module` keys are the first name segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub position_encoding: usize,
    pub by_module: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetworkConfig,
    pub registry: ParamRegistry,
    pub stem: Mlp,
    pub encoder: Vec<Vec<SmtbParams>>,
    /// `decoder[d]` produces level `d` from level `d + 1`.
    pub decoder: Vec<DecoderStage>,
    pub head: Mlp,
}

impl Model {
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = ParamRegistry::new();
        let c = &config.channels;
        let levels = config.levels();

        let stem = Mlp::projection(&mut reg.store, "stem", config.in_channels, c[0], &mut rng)?;
        let mut encoder = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut blocks = Vec::new();
            for b in 0..config.blocks[l] {
                let name = format!("enc{l}.block{b}");
                let in_width = if b == 0 && l > 0 { c[l - 1] } else { c[l] };
                let pe = reg.encoding(config.sharing, config.encoding, l, &name, c[l], &mut rng)?;
                blocks.push(SmtbParams::new(
                    &mut reg.store,
                    &name,
                    in_width,
                    c[l],
                    pe,
                    config.mask,
                    config.classes,
                    &mut rng,
                )?);
            }
            encoder.push(blocks);
        }

        let mut decoder = Vec::with_capacity(levels.saturating_sub(1));
        for d in 0..levels.saturating_sub(1) {
            let up_name = format!("dec{d}.up");
            let up = match config.upsample {
                Upsample::Saub => {
                    let pe = reg.encoding(config.sharing, config.encoding, d, &up_name, c[d], &mut rng)?;
                    Upsampler::Saub(SaubParams::new(&mut reg.store, &up_name, c[d + 1], c[d + 1], c[d], pe, &mut rng)?)
                }
                Upsample::Gub => Upsampler::Gub(GridUnpoolParams::new(&mut reg.store, &up_name, c[d + 1], c[d], &mut rng)?),
            };
            let name = format!("dec{d}.block0");
            let pe = reg.encoding(config.sharing, config.encoding, d, &name, c[d], &mut rng)?;
            let block = SmtbParams::new(&mut reg.store, &name, c[d], c[d], pe, config.mask, config.classes, &mut rng)?;
            decoder.push(DecoderStage { up, block });
        }

        let head = Mlp::new(&mut reg.store, "head", &[c[0], c[0], config.classes], &mut rng)?;
        Ok(Self {
            config: config.clone(),
            registry: reg,
            stem,
            encoder,
            decoder,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.registry.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.registry.store
    }

    pub fn hierarchy(&self, positions: &Tensor) -> Result<Hierarchy> {
        Hierarchy::build(positions, &self.config)
    }

    /// Records the network on `tape` against `store` and returns `[N, T]`
    /// logits.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, features: Var, hier: &Hierarchy) -> Result<Var> {
        let fs = tape.shape(features);
        if fs.len() != 2 || fs[1] != self.config.in_channels || fs[0] != hier.positions[0].shape()[0] {
            return Err(Error::shape(
                "network input",
                fs,
                &[hier.positions[0].shape()[0], self.config.in_channels],
            ));
        }
        if hier.positions.len() != self.config.levels() {
            return Err(Error::Config(format!(
                "hierarchy has {} levels, network has {}",
                hier.positions.len(),
                self.config.levels()
            )));
        }
        let frames = hier
            .positions
            .iter()
            .zip(&hier.neighbors)
            .map(|(p, idx)| Frame::new(tape, p, idx))
            .collect::<Result<Vec<_>>>()?;

        let mut x = self.stem.forward(tape, store, features)?;
        let mut skips = Vec::with_capacity(frames.len());
        for (l, blocks) in self.encoder.iter().enumerate() {
            if l > 0 {
                let map = &hier.maps[l - 1];
                x = tape.segment_max(x, map.cell_of(), map.coarse_len())?;
            }
            for block in blocks {
                x = smtb(tape, store, x, &frames[l], block)?;
            }
            skips.push(x);
        }

        let mut dec = *skips.last().unwrap();
        for d in (0..self.decoder.len()).rev() {
            let stage = &self.decoder[d];
            let map = &hier.maps[d];
            let up = match &stage.up {
                Upsampler::Saub(p) => saub(tape, store, dec, skips[d + 1], skips[d], map, &frames[d], p)?,
                Upsampler::Gub(p) => grid_unpool_block(tape, store, dec, skips[d], map, p)?,
            };
            dec = smtb(tape, store, up, &frames[d], &stage.block)?;
        }
        self.head.forward(tape, store, dec)
    }

    /// Inference on one cloud.
    pub fn forward(&self, cloud: &PointCloud) -> Result<Tensor> {
        let hier = self.hierarchy(cloud.positions())?;
        let mut tape = Tape::new();
        let f = tape.constant(cloud.features().clone());
        let out = self.logits(&mut tape, self.store(), f, &hier)?;
        Ok(tape.value(out).clone())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut by_module = BTreeMap::new();
        for (_, name, t) in self.store().iter() {
            let module = name.split('.').next().unwrap_or(name).to_string();
            *by_module.entry(module).or_insert(0) += t.len();
        }
        let position_encoding = self
            .registry
            .sharing_table()
            .values()
            .flat_map(|pe| pe.params())
            .map(|id| self.store().get(id).len())
            .sum();
        ParamCount {
            total: self.registry.total_parameters(),
            position_encoding,
            by_module,
        }
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let text = self.config.to_text();
        let meta = Tensor::new(vec![text.len()], text.bytes().map(f64::from).collect())?;
        let mut tensors = vec![(CONFIG_TENSOR.to_string(), meta)];
        tensors.extend(self.store().iter().map(|(_, n, t)| (n.to_string(), t.clone())));
        write_checkpoint(w, &tensors)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let tensors = read_checkpoint(r)?;
        let meta = tensors
            .iter()
            .find(|(n, _)| n == CONFIG_TENSOR)
            .ok_or_else(|| Error::Format(format!("missing `{CONFIG_TENSOR}` tensor")))?;
        let bytes: Vec<u8> = meta
            .1
            .data()
            .iter()
            .map(|&b| if (0.0..=255.0).contains(&b) && b.fract() == 0.0 { Ok(b as u8) } else { Err(()) })
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("config tensor is not text".into()))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Format("config tensor is not UTF-8".into()))?;
        let config = NetworkConfig::parse(&text)?;
        let mut model = Self::build(&config, 0)?;
        let mut seen = 0;
        for (name, t) in tensors.into_iter().filter(|(n, _)| n != CONFIG_TENSOR) {
            let id = model
                .store()
                .id(&name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor `{name}`")))?;
            let want = model.store().get(id).shape().to_vec();
            if t.shape() != want {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            model.store_mut().set(id, t)?;
            seen += 1;
        }
        if seen != model.store().len() {
            return Err(Error::Format(format!(
                "checkpoint holds {seen} of {} parameter tensors",
                model.store().len()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
