//! From-scratch feed-forward training engine: dense and small conv networks with
//! exact batch, mini-batch, and per-example gradients.

mod backward;
mod eval;
mod forward;

pub use backward::{
    backward, per_example_backward, per_example_gradients, GradientVector, Gradients,
    PerExampleIntermediates,
};
pub(crate) use backward::assemble_per_example;
pub use eval::{
    aggregate, batch_from_examples, evaluate, evaluate_per_example, EvalResult, MaskMode,
    PerExampleEval,
};
pub use forward::{forward, loss_and_grad, per_example_dlogits, per_example_losses, Cache};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2d {
        k: usize,
    },
    Flatten,
    /// Loss attachment point; carries no parameters and must be the last layer.
    SoftmaxHead {
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Shape of one example, e.g. `[784]` or `[3, 32, 32]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub init_seed: u64,
    pub precision: Precision,
}

/// Where per-example turn-over masks attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Per-unit mask over a hidden dense layer's outputs.
    Unit { width: usize },
    /// Per-channel mask over a conv layer's output feature maps.
    Spatial { channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskableLayer {
    pub layer_index: usize,
    pub kind: MaskKind,
}

impl ModelConfig {
    pub fn mlp(input: usize, hidden: usize, classes: usize, init_seed: u64, precision: Precision) -> Self {
        ModelConfig {
            input_shape: vec![input],
            layers: vec![
                LayerSpec::Dense { input, output: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { input: hidden, output: classes },
                LayerSpec::SoftmaxHead { classes },
            ],
            init_seed,
            precision,
        }
    }

    /// Small conv net covering spatial masking within a CPU budget:
    /// Conv(3->16) - ReLU - Pool - Conv(16->32) - ReLU - Pool - Flatten - Dense - ReLU - Dense - head.
    pub fn small_cnn(in_ch: usize, side: usize, hidden: usize, classes: usize, init_seed: u64, precision: Precision) -> Self {
        let s1 = side / 2;
        let s2 = s1 / 2;
        let flat = 32 * s2 * s2;
        ModelConfig {
            input_shape: vec![in_ch, side, side],
            layers: vec![
                LayerSpec::Conv2d { in_ch, out_ch: 16, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { k: 2 },
                LayerSpec::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { k: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { input: flat, output: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { input: hidden, output: classes },
                LayerSpec::SoftmaxHead { classes },
            ],
            init_seed,
            precision,
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead { classes }) => *classes,
            _ => 0,
        }
    }

    /// Validates layer compatibility and returns the activation shape after every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::config("input shape must be non-empty with positive dims"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("model has no layers"));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let is_last = i + 1 == self.layers.len();
            match layer {
                LayerSpec::Dense { input, output } => {
                    if shape.len() != 1 || shape[0] != *input {
                        return Err(Error::config(format!(
                            "layer {i}: Dense expects [{input}], got {shape:?}"
                        )));
                    }
                    if *output == 0 {
                        return Err(Error::config(format!("layer {i}: Dense output must be > 0")));
                    }
                    shape = vec![*output];
                }
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    if shape.len() != 3 || shape[0] != *in_ch {
                        return Err(Error::config(format!(
                            "layer {i}: Conv2d expects [{in_ch}, H, W], got {shape:?}"
                        )));
                    }
                    if *kernel == 0 || *stride == 0 || *out_ch == 0 {
                        return Err(Error::config(format!("layer {i}: Conv2d dims must be > 0")));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    let he = h + 2 * pad;
                    let we = w + 2 * pad;
                    if he < *kernel || we < *kernel {
                        return Err(Error::config(format!(
                            "layer {i}: Conv2d kernel {kernel} larger than padded input {he}x{we}"
                        )));
                    }
                    let oh = (he - kernel) / stride + 1;
                    let ow = (we - kernel) / stride + 1;
                    shape = vec![*out_ch, oh, ow];
                }
                LayerSpec::Relu => {}
                LayerSpec::MaxPool2d { k } => {
                    if shape.len() != 3 {
                        return Err(Error::config(format!(
                            "layer {i}: MaxPool2d expects [C, H, W], got {shape:?}"
                        )));
                    }
                    if *k == 0 || shape[1] < *k || shape[2] < *k {
                        return Err(Error::config(format!("layer {i}: MaxPool2d window {k} too large")));
                    }
                    shape = vec![shape[0], shape[1] / k, shape[2] / k];
                }
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                }
                LayerSpec::SoftmaxHead { classes } => {
                    if !is_last {
                        return Err(Error::config(format!("layer {i}: head must be the last layer")));
                    }
                    if shape.len() != 1 || shape[0] != *classes {
                        return Err(Error::config(format!(
                            "layer {i}: head expects [{classes}] logits, got {shape:?}"
                        )));
                    }
                }
            }
            out.push(shape.clone());
        }
        match self.layers.last() {
            Some(LayerSpec::SoftmaxHead { .. }) => {}
            _ => return Err(Error::config("model must end with a softmax cross-entropy head")),
        }
        Ok(out)
    }

    /// Hidden dense layers get unit masks, conv layers get channel masks. The final
    /// dense layer produces class logits and is never masked, nor is the input.
    pub fn maskable_layers(&self) -> Vec<MaskableLayer> {
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { output, .. } if Some(i) != last_dense => {
                    out.push(MaskableLayer {
                        layer_index: i,
                        kind: MaskKind::Unit { width: *output },
                    });
                }
                LayerSpec::Conv2d { out_ch, .. } => {
                    out.push(MaskableLayer {
                        layer_index: i,
                        kind: MaskKind::Spatial { channels: *out_ch },
                    });
                }
                _ => {}
            }
        }
        out
    }
}

/// Weight and bias pair of one parameterized layer. Conv weights are stored as
/// `[out_ch, in_ch * k * k]` so im2col turns convolution into row dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> LayerParams<S> {
    pub fn zeros_like(other: &LayerParams<S>) -> Self {
        LayerParams {
            weight: Tensor::zeros(other.weight.shape()),
            bias: vec![S::ZERO; other.bias.len()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// A validated model: config, derived shapes, and parameters.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    config: ModelConfig,
    /// Activation shape after each layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams<S>>>,
    /// Bumped on every parameter mutation; caches record it to detect staleness.
    version: u64,
}

/// Seeded fan-in-scaled uniform initialization (He-style); biases zero.
/// Bit-identical for identical (config, seed).
pub fn init_params<S: Scalar>(config: &ModelConfig) -> Result<Network<S>> {
    let shapes = config.validate()?;
    let mut params = Vec::with_capacity(config.layers.len());
    for (i, layer) in config.layers.iter().enumerate() {
        let p = match layer {
            LayerSpec::Dense { input, output } => {
                Some(init_layer::<S>(config.init_seed, i, *output, *input, *input))
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                let fan_in = in_ch * kernel * kernel;
                Some(init_layer::<S>(config.init_seed, i, *out_ch, fan_in, fan_in))
            }
            _ => None,
        };
        params.push(p);
    }
    Ok(Network {
        config: config.clone(),
        shapes,
        params,
        version: 0,
    })
}

fn init_layer<S: Scalar>(seed: u64, layer_index: usize, rows: usize, cols: usize, fan_in: usize) -> LayerParams<S> {
    let mut rng = SplitMix64::new(derive_seed(seed, layer_index as u64));
    let limit = (6.0 / fan_in as f64).sqrt();
    let data: Vec<S> = (0..rows * cols)
        .map(|_| S::from_f64((rng.next_f64() * 2.0 - 1.0) * limit))
        .collect();
    LayerParams {
        weight: Tensor::from_vec(&[rows, cols], data).expect("init shape"),
        bias: vec![S::ZERO; rows],
    }
}

impl<S: Scalar> Network<S> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn params(&self) -> &[Option<LayerParams<S>>] {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn classes(&self) -> usize {
        self.config.classes()
    }

    /// Total number of trainable parameters, in flattened order.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.param_count())
            .sum()
    }

    /// Replaces parameters wholesale (model loading, tests). Shapes must match.
    pub fn set_params(&mut self, params: Vec<Option<LayerParams<S>>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::input("parameter layer count mismatch"));
        }
        for (new, old) in params.iter().zip(&self.params) {
            match (new, old) {
                (None, None) => {}
                (Some(a), Some(b)) if a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len() => {}
                _ => return Err(Error::input("parameter shape mismatch")),
            }
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }

    /// Test hook: mutate parameters in place through a closure.
    pub fn with_params_mut<R>(&mut self, f: impl FnOnce(&mut Vec<Option<LayerParams<S>>>) -> R) -> R {
        let r = f(&mut self.params);
        self.version += 1;
        r
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            config: ModelConfig {
                precision: self.config.precision,
                ..self.config.clone()
            },
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|lp| LayerParams {
                        weight: lp.weight.cast(),
                        bias: lp.bias.iter().map(|v| T::from_f64(v.to_f64())).collect(),
                    })
                })
                .collect(),
            version: self.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LRSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl LRSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LRSchedule {
            base_lr,
            milestones: Vec::new(),
            decay_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("lr milestones must be strictly increasing"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("lr decay factor must be in (0, 1]"));
        }
        Ok(())
    }
}

/// base_lr scaled down once per milestone already reached at `epoch`.
pub fn lr_at(schedule: &LRSchedule, epoch: usize) -> f64 {
    let passed = schedule.milestones.iter().filter(|&&m| m <= epoch).count();
    schedule.base_lr * schedule.decay_factor.powi(passed as i32)
}

/// Momentum buffers mirroring the parameter tensors.
#[derive(Debug, Clone)]
pub struct OptimizerState<S: Scalar> {
    pub momentum: f64,
    pub epoch: usize,
    buffers: Vec<Option<LayerParams<S>>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(net: &Network<S>, momentum: f64) -> Self {
        OptimizerState {
            momentum,
            epoch: 0,
            buffers: net
                .params
                .iter()
                .map(|p| p.as_ref().map(LayerParams::zeros_like))
                .collect(),
        }
    }
}

/// One momentum-SGD update: buffer <- mu * buffer + grad; param <- param - lr * buffer.
/// mu = 0 reduces to vanilla SGD.
pub fn sgd_step<S: Scalar>(
    net: &mut Network<S>,
    grads: &Gradients<S>,
    opt: &mut OptimizerState<S>,
    lr: f64,
) -> Result<()> {
    let mu = S::from_f64(opt.momentum);
    let lr = S::from_f64(lr);
    for (i, grad) in grads.layers.iter().enumerate() {
        let Some(g) = grad else { continue };
        if !g.weight.all_finite() || g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i}")));
        }
        let buf = opt.buffers[i].as_mut().expect("buffer layer");
        let p = net.params[i].as_mut().expect("param layer");
        for ((b, &gv), pv) in buf
            .weight
            .data_mut()
            .iter_mut()
            .zip(g.weight.data())
            .zip(p.weight.data_mut())
        {
            *b = mu * *b + gv;
            *pv -= lr * *b;
        }
        for ((b, &gv), pv) in buf.bias.iter_mut().zip(&g.bias).zip(p.bias.iter_mut()) {
            *b = mu * *b + gv;
            *pv -= lr * *b;
        }
    }
    net.version += 1;
    Ok(())
}
