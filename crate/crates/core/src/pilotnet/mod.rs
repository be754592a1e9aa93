//! The end-to-end steering/throttle regressor: an input normalization step,
//! five valid-padding convolutions, three hidden fully connected layers and
//! a linear two-unit head (column 0 steering, column 1 throttle).

mod weights;

pub use weights::{load_weights, save_weights, LoadedWeights, TrainingMetadata, WeightsError, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, conv_output_dim, dense_backward, dense_forward, relu_backward, relu_forward,
    Scalar, Tensor, TensorError,
};
use crate::vision::{PlanarImage, MODEL_HEIGHT, MODEL_WIDTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("conv layer {layer} produces a non-positive spatial dimension ({height}x{width} input, kernel {kernel}, stride {stride})")]
    NonPositiveSpatial {
        layer: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("expected {expected} {what}, found {found}")]
    LayerCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input image {found:?} does not match network input {expected:?}")]
    InputShape { expected: [usize; 3], found: [usize; 3] },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
        }
    }
}

pub const CONV_LAYERS: usize = 5;
pub const HIDDEN_FC_LAYERS: usize = 3;
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotNetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv_specs: Vec<ConvSpec>,
    pub fc_sizes: Vec<usize>,
    pub output_dim: usize,
}

impl Default for PilotNetConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_height: MODEL_HEIGHT,
            input_width: MODEL_WIDTH,
            conv_specs: vec![
                ConvSpec::new(24, 5, 2),
                ConvSpec::new(36, 5, 2),
                ConvSpec::new(48, 5, 2),
                ConvSpec::new(64, 3, 1),
                ConvSpec::new(64, 3, 1),
            ],
            fc_sizes: vec![100, 50, 10],
            output_dim: OUTPUT_DIM,
        }
    }
}

impl PilotNetConfig {
    /// Spatial size after each conv layer, starting with the input size.
    pub fn spatial_chain(&self) -> Result<Vec<(usize, usize)>> {
        if self.conv_specs.len() != CONV_LAYERS {
            return Err(ModelError::LayerCount {
                what: "conv layers",
                expected: CONV_LAYERS,
                found: self.conv_specs.len(),
            });
        }
        if self.fc_sizes.len() != HIDDEN_FC_LAYERS {
            return Err(ModelError::LayerCount {
                what: "hidden fully connected layers",
                expected: HIDDEN_FC_LAYERS,
                found: self.fc_sizes.len(),
            });
        }
        if self.output_dim != OUTPUT_DIM {
            return Err(ModelError::LayerCount {
                what: "output units",
                expected: OUTPUT_DIM,
                found: self.output_dim,
            });
        }
        if self.input_channels == 0
            || self.fc_sizes.contains(&0)
            || self.conv_specs.iter().any(|c| c.out_channels == 0 || c.stride == 0 || c.kernel == 0)
        {
            return Err(ModelError::InvalidConfig("zero-sized layer".into()));
        }
        let mut chain = vec![(self.input_height, self.input_width)];
        for (layer, spec) in self.conv_specs.iter().enumerate() {
            let (h, w) = *chain.last().unwrap();
            match (
                conv_output_dim(h, spec.kernel, spec.stride),
                conv_output_dim(w, spec.kernel, spec.stride),
            ) {
                (Some(ho), Some(wo)) => chain.push((ho, wo)),
                _ => {
                    return Err(ModelError::NonPositiveSpatial {
                        layer,
                        height: h,
                        width: w,
                        kernel: spec.kernel,
                        stride: spec.stride,
                    })
                }
            }
        }
        Ok(chain)
    }

    /// Width of the flattened conv output feeding the first dense layer.
    pub fn flatten_dim(&self) -> Result<usize> {
        let (h, w) = *self.spatial_chain()?.last().unwrap();
        Ok(self.conv_specs.last().unwrap().out_channels * h * w)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.input_height, self.input_width]
    }
}

/// Layer inventory, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Normalization,
    Conv { out_channels: usize, kernel: usize, stride: usize },
    Dense { units: usize },
    Output { units: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Activations saved by [`PilotNet::forward_train`]: the input of every
/// parametric layer, in order (5 conv, 3 hidden dense, 1 output).
#[derive(Debug, Clone, Default)]
pub struct Trace<T = f32> {
    inputs: Vec<Tensor<T>>,
}

impl<T> Trace<T> {
    pub fn empty() -> Self {
        Self { inputs: Vec::new() }
    }

    /// Saved layer inputs: the network input, then each post-ReLU activation.
    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }
}

/// Parameter gradients in [`PilotNet::params`] order, plus the input
/// gradient when requested.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub params: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotNet<T = f32> {
    config: PilotNetConfig,
    conv: Vec<ConvLayer<T>>,
    /// Hidden layers followed by the output layer.
    dense: Vec<DenseLayer<T>>,
}

fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    Ok(Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)?)
}

impl<T: Scalar> PilotNet<T> {
    /// He-uniform weights, zero biases; deterministic in `seed`.
    pub fn build(config: PilotNetConfig, seed: u64) -> Result<Self> {
        config.spatial_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(CONV_LAYERS);
        let mut c_in = config.input_channels;
        for spec in &config.conv_specs {
            let fan_in = c_in * spec.kernel * spec.kernel;
            conv.push(ConvLayer {
                weight: he_uniform(&[spec.out_channels, c_in, spec.kernel, spec.kernel], fan_in, &mut rng)?,
                bias: Tensor::zeros(&[spec.out_channels])?,
                stride: spec.stride,
            });
            c_in = spec.out_channels;
        }
        let mut dense = Vec::with_capacity(HIDDEN_FC_LAYERS + 1);
        let mut n_in = config.flatten_dim()?;
        for &units in config.fc_sizes.iter().chain(std::iter::once(&config.output_dim)) {
            dense.push(DenseLayer {
                weight: he_uniform(&[units, n_in], n_in, &mut rng)?,
                bias: Tensor::zeros(&[units])?,
            });
            n_in = units;
        }
        Ok(Self { config, conv, dense })
    }

    /// Assembles a network from parameter tensors in [`Self::param_names`]
    /// order, validating every shape against `config`.
    pub fn from_params(config: PilotNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        let template = Self::build(config.clone(), 0)?;
        let expected = template.params().len();
        if params.len() != expected {
            return Err(ModelError::LayerCount {
                what: "parameter tensors",
                expected,
                found: params.len(),
            });
        }
        for (name, (want, got)) in Self::param_names().iter().zip(template.params().into_iter().zip(&params)) {
            if want.shape() != got.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} has shape {:?}, config requires {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut it = params.into_iter();
        let conv = config
            .conv_specs
            .iter()
            .map(|spec| ConvLayer {
                weight: it.next().unwrap(),
                bias: it.next().unwrap(),
                stride: spec.stride,
            })
            .collect();
        let dense = (0..=HIDDEN_FC_LAYERS)
            .map(|_| DenseLayer {
                weight: it.next().unwrap(),
                bias: it.next().unwrap(),
            })
            .collect();
        Ok(Self { config, conv, dense })
    }

    pub fn config(&self) -> &PilotNetConfig {
        &self.config
    }

    pub fn architecture(&self) -> Vec<LayerKind> {
        let mut out = vec![LayerKind::Normalization];
        out.extend(self.config.conv_specs.iter().map(|c| LayerKind::Conv {
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
        }));
        out.extend(self.config.fc_sizes.iter().map(|&units| LayerKind::Dense { units }));
        out.push(LayerKind::Output {
            units: self.config.output_dim,
        });
        out
    }

    pub fn param_names() -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=CONV_LAYERS {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        for i in 1..=HIDDEN_FC_LAYERS {
            names.push(format!("fc{i}.weight"));
            names.push(format!("fc{i}.bias"));
        }
        names.push("out.weight".into());
        names.push("out.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.conv {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for l in &self.dense {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in &mut self.dense {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn output_layer_mut(&mut self) -> &mut DenseLayer<T> {
        self.dense.last_mut().expect("output layer exists")
    }

    pub fn cast<U: Scalar>(&self) -> PilotNet<U> {
        PilotNet {
            config: self.config.clone(),
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    stride: l.stride,
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let want = self.config.input_shape();
        match *batch.shape() {
            [b, c, h, w] if [c, h, w] == want => Ok(b),
            [_, c, h, w] => Err(ModelError::InputShape {
                expected: want,
                found: [c, h, w],
            }),
            _ => Err(TensorError::RankMismatch {
                op: "pilotnet_forward",
                expected: 4,
                found: batch.rank(),
            }
            .into()),
        }
    }

    fn run(&self, batch: &Tensor<T>, mut save: Option<&mut Vec<Tensor<T>>>) -> Result<Tensor<T>> {
        let b = self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.conv {
            let y = relu_forward(&conv2d_forward(&x, &layer.weight, &layer.bias, layer.stride)?);
            if let Some(s) = save.as_deref_mut() {
                s.push(x);
            }
            x = y;
        }
        let flat = x.numel() / b;
        x = x.reshape(&[b, flat])?;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let mut y = dense_forward(&x, &layer.weight, &layer.bias)?;
            if i != last {
                y = relu_forward(&y);
            }
            if let Some(s) = save.as_deref_mut() {
                s.push(x);
            }
            x = y;
        }
        Ok(x)
    }

    /// `B×3×66×200` normalized batch → `B×2` raw (steering, throttle).
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(batch, None)
    }

    /// Forward pass that records what [`Self::backward`] needs.
    pub fn forward_train(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let mut inputs = Vec::with_capacity(CONV_LAYERS + HIDDEN_FC_LAYERS + 1);
        let out = self.run(batch, Some(&mut inputs))?;
        Ok((out, Trace { inputs }))
    }

    /// Reverse pass from `upstream = ∂L/∂output`. Each layer's ReLU mask is
    /// taken from the next layer's saved input (the post-activation value).
    pub fn backward(&self, trace: &Trace<T>, upstream: &Tensor<T>, want_input_grad: bool) -> Result<Gradients<T>> {
        let n_layers = self.conv.len() + self.dense.len();
        if trace.inputs.len() != n_layers {
            return Err(TensorError::MissingContext { op: "pilotnet_backward" }.into());
        }
        let mut grads: Vec<Tensor<T>> = Vec::with_capacity(2 * n_layers);
        let mut g = upstream.clone();
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate().rev() {
            let idx = self.conv.len() + i;
            if i != last {
                g = relu_backward(&trace.inputs[idx + 1], &g)?;
            }
            let dg = dense_backward(&trace.inputs[idx], &layer.weight, &g)?;
            grads.push(dg.bias);
            grads.push(dg.weights);
            g = dg.input;
        }
        let batch = g.shape()[0];
        let mut g = g.reshape(&conv_output_shape(&self.config, batch)?)?;
        for (i, layer) in self.conv.iter().enumerate().rev() {
            let post = if i + 1 < self.conv.len() {
                trace.inputs[i + 1].clone()
            } else {
                // Conv5 output feeds fc1 flattened; restore its spatial shape.
                trace.inputs[self.conv.len()].clone().reshape(g.shape())?
            };
            g = relu_backward(&post, &g)?;
            if i == 0 && !want_input_grad {
                let (dk, db) = conv2d_param_grads(&trace.inputs[i], &layer.weight, &g, layer.stride)?;
                grads.push(db);
                grads.push(dk);
            } else {
                let dg = conv2d_backward(&trace.inputs[i], &layer.weight, &g, layer.stride)?;
                grads.push(dg.bias);
                grads.push(dg.kernels);
                g = dg.input;
            }
        }
        grads.reverse();
        Ok(Gradients {
            params: grads,
            input: want_input_grad.then_some(g),
        })
    }
}

fn conv_output_shape(config: &PilotNetConfig, batch: usize) -> Result<Vec<usize>> {
    let (h, w) = *config.spatial_chain()?.last().unwrap();
    Ok(vec![batch, config.conv_specs.last().unwrap().out_channels, h, w])
}

/// `x ↦ x/127.5 − 1` on a `3×66×200` YUV image.
pub fn normalize_input(image: &PlanarImage) -> Result<Tensor<f32>> {
    let want = [3, MODEL_HEIGHT, MODEL_WIDTH];
    if image.shape() != want {
        return Err(ModelError::InputShape {
            expected: want,
            found: image.shape(),
        });
    }
    Ok(Tensor::new(&want, image.data.iter().map(|&v| normalize_pixel(v)).collect())?)
}

#[inline]
pub fn normalize_pixel(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Stacks normalized images into a `B×3×66×200` batch.
pub fn normalize_batch<'a>(images: impl IntoIterator<Item = &'a PlanarImage>) -> Result<Tensor<f32>> {
    let want = [3, MODEL_HEIGHT, MODEL_WIDTH];
    let mut data = Vec::new();
    let mut b = 0;
    for image in images {
        if image.shape() != want {
            return Err(ModelError::InputShape {
                expected: want,
                found: image.shape(),
            });
        }
        data.extend(image.data.iter().map(|&v| normalize_pixel(v)));
        b += 1;
    }
    Ok(Tensor::new(&[b, want[0], want[1], want[2]], data)?)
}
