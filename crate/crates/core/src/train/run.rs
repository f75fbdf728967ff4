use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::data::{augment, AugmentConfig};
use super::metrics::{Confusion, Metrics};
use super::optim::{MultiStepLr, Sgd};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::network::{KeyValues, Model};
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let classes = *tape.shape(logits).last().unwrap_or(&0);
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
    }
    tape.cross_entropy(logits, labels.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            milestones: vec![20, 26],
            gamma: 0.1,
            batch_size: 4,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> MultiStepLr {
        MultiStepLr {
            base: self.lr,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.augment.validate()
    }

    /// Overrides defaults with the training keys present in `kv`.
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        Self::default().with_key_values(kv)
    }

    pub fn with_key_values(self, kv: &mut KeyValues) -> Result<Self> {
        let mut c = self;
        if let Some(v) = kv.take("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = kv.take("lr")? {
            c.lr = v;
        }
        if let Some(v) = kv.take("momentum")? {
            c.momentum = v;
        }
        if let Some(v) = kv.take("weight_decay")? {
            c.weight_decay = v;
        }
        if let Some(v) = kv.take_list::<String>("milestones")? {
            c.milestones = v
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Config(format!("bad milestone `{s}`: {e}"))))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = kv.take("gamma")? {
            c.gamma = v;
        }
        if let Some(v) = kv.take("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.take_list::<f64>("scale")? {
            if v.len() != 2 {
                return Err(Error::Config("scale takes two values: lo,hi".into()));
            }
            c.augment.scale = (v[0], v[1]);
        }
        if let Some(v) = kv.take("flip_probability")? {
            c.augment.flip_probability = v;
        }
        if let Some(v) = kv.take("jitter")? {
            c.augment.jitter = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "mAcc")]
    pub macc: f64,
    #[serde(rename = "OA")]
    pub oa: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    /// Newline-delimited JSON, one [`EpochRecord`] per epoch.
    pub log: Option<PathBuf>,
    /// Written whenever test mIoU improves.
    pub best_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: Metrics,
}

impl TrainLog {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("at least one epoch")
    }
}

fn labels_of(cloud: &PointCloud) -> Result<&[usize]> {
    cloud
        .labels()
        .ok_or_else(|| Error::InvalidArgument("dataset cloud has no labels".into()))
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.last_dim().max(1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &Model, cloud: &PointCloud) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.forward(cloud)?))
}

/// Confusion matrix over every point of `dataset`.
pub fn evaluate(model: &Model, dataset: &[PointCloud]) -> Result<Confusion> {
    let parts = dataset
        .par_iter()
        .map(|cloud| {
            let labels = labels_of(cloud)?;
            cloud.validate_labels(model.config.classes)?;
            let mut conf = Confusion::new(model.config.classes);
            conf.add_all(labels, &predict(model, cloud)?)?;
            Ok(conf)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut conf = Confusion::new(model.config.classes);
    for part in &parts {
        conf.merge(part)?;
    }
    Ok(conf)
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients(model: &Model, cloud: &PointCloud) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let labels = labels_of(cloud)?;
    let hier = model.hierarchy(cloud.positions())?;
    let mut tape = Tape::new();
    let f = tape.constant(cloud.features().clone());
    let logits = model.logits(&mut tape, model.store(), f, &hier)?;
    let loss = cross_entropy(&mut tape, logits, labels)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    Ok((value, tape.param_grads()))
}

/// Mini-batch SGD over `train`, evaluating on `test` after every epoch.
pub fn train_loop(
    model: &mut Model,
    train: &[PointCloud],
    test: &[PointCloud],
    config: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for cloud in train.iter().chain(test) {
        labels_of(cloud)?;
        cloud.validate_labels(model.config.classes)?;
    }
    let mut log_file = match &outputs.log {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Sgd::new(config.momentum, config.weight_decay);
    let schedule = config.schedule();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Metrics)> = None;

    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            // Seeds are drawn in order so the result does not depend on
            // how scenes are spread over threads.
            let seeds: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.gen())).collect();
            let shared: &Model = model;
            let results = seeds
                .par_iter()
                .map(|&(i, seed)| scene_gradients(shared, &augment(&train[i], &config.augment, seed)?))
                .collect::<Result<Vec<_>>>()?;
            let mut summed: BTreeMap<ParamId, Tensor> = BTreeMap::new();
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss });
                }
                loss_sum += loss;
                for (id, g) in grads {
                    match summed.get_mut(&id) {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                        None => {
                            summed.insert(id, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let summed: Vec<(ParamId, Tensor)> = summed
                .into_iter()
                .map(|(id, mut g)| {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                    (id, g)
                })
                .collect();
            opt.step(model.store_mut(), &summed, lr)?;
        }

        let metrics = evaluate(model, test)?.metrics();
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            miou: metrics.miou,
            macc: metrics.macc,
            oa: metrics.oa,
            lr,
        };
        if let Some(w) = log_file.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
            let path = outputs.log.as_ref().unwrap();
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
        }
        if best.map_or(true, |(_, b)| metrics.miou > b.miou) {
            best = Some((epoch, metrics));
            if let Some(p) = &outputs.best_checkpoint {
                model.save(p)?;
            }
        }
        records.push(record);
    }
    let (best_epoch, best) = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    Ok(TrainLog {
        records,
        best_epoch,
        best,
    })
}
