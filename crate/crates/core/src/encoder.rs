//! Convolutional encoder mapping a `[3, 224, 224]` feature image to an
//! embedding vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::io::TensorContainer;
use crate::layers::{glorot_uniform, Linear};
use crate::tensor::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

pub const EMBEDDING_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Three 3×3 conv blocks (8, 16, 32 channels), each followed by ReLU and
    /// 4×4 max-pooling, then one linear layer.
    Tiny,
    /// Five conv layers and three pooling stages in the AlexNet arrangement,
    /// two 4096-wide hidden layers, and a final linear layer to the embedding.
    AlexnetLike,
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Topology::Tiny),
            "alexnet_like" => Ok(Topology::AlexnetLike),
            other => Err(Error::Config(format!(
                "unknown encoder topology `{other}` (expected tiny or alexnet_like)"
            ))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Tiny => "tiny",
            Topology::AlexnetLike => "alexnet_like",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub topology: Topology,
    pub embedding_dim: usize,
    /// One weight set for both branches when true.
    pub shared_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Tiny,
            embedding_dim: EMBEDDING_DIM,
            shared_weights: true,
        }
    }
}

/// Shape-level description of one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_c,
                out_c,
                kernel,
                ..
            } => out_c * in_c * kernel * kernel + out_c,
            LayerSpec::Linear { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }
}

fn conv(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_c,
        out_c,
        kernel,
        stride,
        pad,
    }
}

fn pool(window: usize, stride: usize) -> LayerSpec {
    LayerSpec::MaxPool { window, stride }
}

/// Layer list for a topology on a `[3, 224, 224]` input. Linear input
/// widths are found by walking the spatial size through the conv stack.
pub fn layer_plan(topology: Topology, embedding_dim: usize) -> Vec<LayerSpec> {
    let features = match topology {
        Topology::Tiny => vec![
            conv(3, 8, 3, 1, 1),
            LayerSpec::Relu,
            pool(4, 4),
            conv(8, 16, 3, 1, 1),
            LayerSpec::Relu,
            pool(4, 4),
            conv(16, 32, 3, 1, 1),
            LayerSpec::Relu,
            pool(4, 4),
        ],
        Topology::AlexnetLike => vec![
            conv(3, 64, 11, 4, 2),
            LayerSpec::Relu,
            pool(3, 2),
            conv(64, 192, 5, 1, 2),
            LayerSpec::Relu,
            pool(3, 2),
            conv(192, 384, 3, 1, 1),
            LayerSpec::Relu,
            conv(384, 256, 3, 1, 1),
            LayerSpec::Relu,
            conv(256, 256, 3, 1, 1),
            LayerSpec::Relu,
            pool(3, 2),
        ],
    };
    let (mut channels, mut side) = (3, IMAGE_SIZE);
    for layer in &features {
        match *layer {
            LayerSpec::Conv {
                out_c,
                kernel,
                stride,
                pad,
                ..
            } => {
                channels = out_c;
                side = (side + 2 * pad - kernel) / stride + 1;
            }
            LayerSpec::MaxPool { window, stride } => side = (side - window) / stride + 1,
            _ => {}
        }
    }
    let flat = channels * side * side;
    let mut plan = features;
    plan.push(LayerSpec::Flatten);
    match topology {
        Topology::Tiny => plan.push(LayerSpec::Linear {
            in_dim: flat,
            out_dim: embedding_dim,
        }),
        Topology::AlexnetLike => plan.extend([
            LayerSpec::Linear {
                in_dim: flat,
                out_dim: 4096,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_dim: 4096,
                out_dim: 4096,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_dim: 4096,
                out_dim: embedding_dim,
            },
        ]),
    }
    plan
}

/// Trainable parameter count of a topology, without allocating it.
pub fn plan_param_count(topology: Topology, embedding_dim: usize) -> usize {
    layer_plan(topology, embedding_dim)
        .iter()
        .map(LayerSpec::num_params)
        .sum()
}

#[derive(Clone, Debug)]
enum Layer {
    Conv {
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear(Linear),
}

/// An encoder whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<Layer>,
    params: Vec<ParamId>,
    embedding_dim: usize,
}

impl Encoder {
    /// Registers parameters named `{prefix}.conv{i}.*` and `{prefix}.fc{i}.*`.
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut RngStream,
    ) -> Self {
        let mut layers = Vec::new();
        let mut params = Vec::new();
        let (mut n_conv, mut n_fc) = (0, 0);
        for spec in layer_plan(cfg.topology, cfg.embedding_dim) {
            layers.push(match spec {
                LayerSpec::Conv {
                    in_c,
                    out_c,
                    kernel,
                    stride,
                    pad,
                } => {
                    n_conv += 1;
                    let k2 = kernel * kernel;
                    let weight = store.add(
                        format!("{prefix}.conv{n_conv}.weight"),
                        glorot_uniform(&[out_c, in_c, kernel, kernel], in_c * k2, out_c * k2, rng),
                    );
                    let bias = store.add(
                        format!("{prefix}.conv{n_conv}.bias"),
                        Tensor::zeros(&[out_c]),
                    );
                    params.extend([weight, bias]);
                    Layer::Conv {
                        weight,
                        bias,
                        stride,
                        pad,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Linear { in_dim, out_dim } => {
                    n_fc += 1;
                    let l = Linear::new(
                        store,
                        &format!("{prefix}.fc{n_fc}"),
                        in_dim,
                        out_dim,
                        true,
                        rng,
                    );
                    params.extend(l.params());
                    Layer::Linear(l)
                }
            });
        }
        Self {
            layers,
            params,
            embedding_dim: cfg.embedding_dim,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        self.params.iter().map(|&p| store.value(p).len()).sum()
    }

    /// Maps `[N, 3, 224, 224]` images to `[N, embedding_dim]`.
    pub fn forward(&self, tape: &mut Tape<'_>, images: Var) -> Result<Var> {
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1..] != [3, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(Error::shape(
                "encoder",
                format!("expected [N, 3, {IMAGE_SIZE}, {IMAGE_SIZE}], got {shape:?}"),
            ));
        }
        let mut x = images;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (w, b) = (tape.param(*weight), tape.param(*bias));
                    tape.conv2d(x, w, Some(b), *stride, *pad)?
                }
                Layer::Relu => tape.relu(x),
                Layer::MaxPool { window, stride } => tape.maxpool2d(x, *window, *stride)?,
                Layer::Flatten => {
                    let s = tape.shape(x).to_vec();
                    tape.reshape(x, &[s[0], s[1..].iter().product()])?
                }
                Layer::Linear(l) => l.forward(tape, x)?,
            };
        }
        Ok(x)
    }

    /// Copies every encoder parameter into `out` under its store name.
    pub fn export_weights(&self, store: &ParamStore, out: &mut TensorContainer) -> Result<()> {
        for &p in &self.params {
            let param = store.get(p);
            out.insert(param.name.clone(), param.value.clone())?;
        }
        Ok(())
    }

    /// Overwrites the encoder parameters from `weights`. Every entry is
    /// validated before anything is written, so a failed import leaves the
    /// store untouched.
    pub fn import_weights(&self, store: &mut ParamStore, weights: &TensorContainer) -> Result<()> {
        for &p in &self.params {
            let param = store.get(p);
            let t = weights.require(&param.name)?;
            if t.shape() != param.value.shape() {
                return Err(Error::TensorShape {
                    name: param.name.clone(),
                    expected: param.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        for &p in &self.params {
            let name = store.get(p).name.clone();
            store.set_value(p, weights.require(&name)?.clone())?;
        }
        Ok(())
    }
}

/// Encodes the two recordings of a batch. With a shared encoder pass the same
/// [`Encoder`] twice; its parameters then collect gradients from both branches.
pub fn encode_pair(
    tape: &mut Tape<'_>,
    enc_read: &Encoder,
    enc_interview: &Encoder,
    f_read: Var,
    f_interview: Var,
) -> Result<(Var, Var)> {
    if tape.shape(f_read) != tape.shape(f_interview) {
        return Err(Error::shape(
            "encode_pair",
            format!("{:?} vs {:?}", tape.shape(f_read), tape.shape(f_interview)),
        ));
    }
    let r = enc_read.forward(tape, f_read)?;
    let i = enc_interview.forward(tape, f_interview)?;
    Ok((r, i))
}
