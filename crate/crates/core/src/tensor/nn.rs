use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Variance floor inside [`Norm`].
pub const NORM_EPS: f64 = 1e-5;

/// Affine layer `x W + b` over the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.weight` (Glorot uniform) and `{name}.bias` (zeros).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.insert_glorot(format!("{name}.weight"), fan_in, fan_out, rng)?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Per-channel standardization with learnable scale and shift. Statistics
/// are taken over every leading position (points, or points x neighbors),
/// identically in training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            channels,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.channel_norm(x, g, b, NORM_EPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    pub linear: Linear,
    pub norm: Option<Norm>,
    pub activation: Activation,
}

impl MlpLayer {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = self.linear.forward(tape, store, x)?;
        if let Some(norm) = &self.norm {
            h = norm.forward(tape, store, h)?;
        }
        Ok(match self.activation {
            Activation::Relu => tape.relu(h),
            Activation::Identity => h,
        })
    }
}

/// Stack of linear / normalization / activation layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<MlpLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].linear.fan_out != pair[1].linear.fan_in {
                return Err(Error::shape(
                    "mlp",
                    &[pair[0].linear.fan_in, pair[0].linear.fan_out],
                    &[pair[1].linear.fan_in, pair[1].linear.fan_out],
                ));
            }
        }
        for layer in &layers {
            if let Some(n) = &layer.norm {
                if n.channels != layer.linear.fan_out {
                    return Err(Error::shape(
                        "mlp norm",
                        &[layer.linear.fan_out],
                        &[n.channels],
                    ));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Conventional MLP over `widths`: every hidden layer is
    /// linear + norm + ReLU, the final layer is a plain linear map.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("mlp needs at least two widths".into()));
        }
        let last = widths.len() - 2;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let linear = Linear::new(store, &format!("{name}.{i}"), pair[0], pair[1], true, rng)?;
            let (norm, activation) = if i < last {
                (
                    Some(Norm::new(store, &format!("{name}.{i}.norm"), pair[1])?),
                    Activation::Relu,
                )
            } else {
                (None, Activation::Identity)
            };
            layers.push(MlpLayer {
                linear,
                norm,
                activation,
            });
        }
        Self::from_layers(layers)
    }

    /// One linear + norm + ReLU layer: the projection used around every
    /// attention block.
    pub fn projection(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let linear = Linear::new(store, name, fan_in, fan_out, true, rng)?;
        let norm = Norm::new(store, &format!("{name}.norm"), fan_out)?;
        Self::from_layers(vec![MlpLayer {
            linear,
            norm: Some(norm),
            activation: Activation::Relu,
        }])
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].linear.fan_in
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().unwrap().linear.fan_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = *tape.shape(x).last().unwrap_or(&0);
        if width != self.in_width() {
            return Err(Error::shape("mlp input", tape.shape(x), &[self.in_width()]));
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut v = l.linear.params();
                if let Some(n) = &l.norm {
                    v.push(n.gamma);
                    v.push(n.beta);
                }
                v
            })
            .collect()
    }

    /// Replaces every activation, e.g. to make the stack affine in tests.
    pub fn set_activation(&mut self, activation: Activation) {
        for l in &mut self.layers {
            if l.norm.is_some() {
                l.activation = activation;
            }
        }
    }
}
