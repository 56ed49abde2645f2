//! Shared MLP encoder with primary and auxiliary linear heads.
//!
//! Gradients are computed by hand-written backpropagation for exactly this
//! architecture. Every loss part is a batch mean; parts are summed. The
//! representation fed to the heads is the last hidden activation, optionally
//! perturbed by class-aware synthesis (see [`crate::caa::SynthNoise`]), in
//! which case the gradient is carried back through the perturbation.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::caa::SynthNoise;
use crate::error::{Error, Result};
use crate::loss::{overall_loss, LossSpec, OverallLoss};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Primary,
    Auxiliary,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden_dims: default_hidden(),
            num_classes,
            activation: default_activation(),
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.num_classes == 0
            || self.hidden_dims.is_empty()
            || self.hidden_dims.contains(&0)
        {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive with at least one hidden layer: {self:?}"
            )));
        }
        Ok(())
    }

    /// Length of the representation produced by the encoder.
    pub fn rep_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated config")
    }

    /// Uniform init half-width for an encoder layer with `fan_in` inputs:
    /// `sqrt(6 / fan_in)` for relu, `sqrt(3 / fan_in)` for tanh.
    pub fn encoder_init_bound(&self, fan_in: usize) -> f64 {
        let gain = match self.activation {
            Activation::Relu => 6.0,
            Activation::Tanh => 3.0,
        };
        (gain / fan_in as f64).sqrt()
    }

    /// Uniform init half-width for a head: `1 / sqrt(fan_in)`.
    pub fn head_init_bound(&self) -> f64 {
        1.0 / (self.rep_dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

impl OptimizerConfig {
    pub fn with_total_steps(total_steps: usize) -> Self {
        OptimizerConfig {
            base_lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr.is_finite()
            && self.base_lr > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && self.total_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// Fully connected layer, weights stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn uniform(in_dim: usize, out_dim: usize, bound: f64, rng: &mut Rng) -> Self {
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dW += dz x^T`, `db += dz` into `grad` and returns `W^T dz`.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for k in 0..self.in_dim {
                grow[k] += g * x[k];
                dx[k] += g * row[k];
            }
        }
        dx
    }
}

/// All trainable tensors. Also used as the shape of gradients and momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub encoder: Vec<Dense>,
    pub primary: Dense,
    pub auxiliary: Dense,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut encoder = Vec::with_capacity(config.hidden_dims.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden_dims {
            encoder.push(Dense::zeros(fan_in, width));
            fan_in = width;
        }
        Params {
            encoder,
            primary: Dense::zeros(fan_in, config.num_classes),
            auxiliary: Dense::zeros(fan_in, config.num_classes),
        }
    }

    pub fn head(&self, branch: Branch) -> &Dense {
        match branch {
            Branch::Primary => &self.primary,
            Branch::Auxiliary => &self.auxiliary,
        }
    }

    pub fn head_mut(&mut self, branch: Branch) -> &mut Dense {
        match branch {
            Branch::Primary => &mut self.primary,
            Branch::Auxiliary => &mut self.auxiliary,
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.primary))
            .chain(std::iter::once(&self.auxiliary))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.primary))
            .chain(std::iter::once(&mut self.auxiliary))
    }

    /// Tensors in a fixed order; the flag marks biases.
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        self.layers()
            .flat_map(|l| [(&l.weight[..], false), (&l.bias[..], true)])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        self.layers_mut()
            .flat_map(|l| [(&mut l.weight[..], false), (&mut l.bias[..], true)])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(t, _)| t.iter().copied())
            .collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for (t, _) in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(t, _)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }
}

/// Network parameters plus SGD momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    pub momentum: Params,
}

/// Builds a model with fan-in scaled uniform weights and zero biases.
pub fn init(config: &ModelConfig) -> Result<ModelState> {
    config.validate()?;
    let mut rng = rng::stream(config.init_seed, streams::INIT);
    let mut encoder = Vec::with_capacity(config.hidden_dims.len());
    let mut fan_in = config.input_dim;
    for &width in &config.hidden_dims {
        let bound = config.encoder_init_bound(fan_in);
        encoder.push(Dense::uniform(fan_in, width, bound, &mut rng));
        fan_in = width;
    }
    let head_bound = config.head_init_bound();
    let primary = Dense::uniform(fan_in, config.num_classes, head_bound, &mut rng);
    let auxiliary = Dense::uniform(fan_in, config.num_classes, head_bound, &mut rng);
    Ok(ModelState {
        config: config.clone(),
        params: Params {
            encoder,
            primary,
            auxiliary,
        },
        momentum: Params::zeros(config),
    })
}

/// Forward activations kept for backpropagation.
struct Trace {
    /// `activations[l]` is the input of encoder layer `l`; the last entry is `h`.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ModelState {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let act = self.config.activation;
        let mut activations = Vec::with_capacity(self.params.encoder.len() + 1);
        let mut pre = Vec::with_capacity(self.params.encoder.len());
        activations.push(x.to_vec());
        for layer in &self.params.encoder {
            let z = layer.forward(activations.last().unwrap());
            activations.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Trace { activations, pre }
    }

    /// Encoder output `h = g(x)`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).activations.pop().unwrap())
    }

    /// Affine map of a representation by the selected head.
    pub fn head_logits(&self, branch: Branch, h: &[f64]) -> Result<Vec<f64>> {
        let head = self.params.head(branch);
        if h.len() != head.in_dim {
            return Err(Error::DimensionMismatch {
                expected: head.in_dim,
                actual: h.len(),
            });
        }
        Ok(head.forward(h))
    }

    pub fn logits(&self, branch: Branch, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.encode(x)?;
        self.head_logits(branch, &h)
    }

    fn backprop_encoder(&self, trace: &Trace, mut da: Vec<f64>, grads: &mut Params) {
        let act = self.config.activation;
        for l in (0..self.params.encoder.len()).rev() {
            let a = &trace.activations[l + 1];
            let dz: Vec<f64> = da
                .iter()
                .zip(&trace.pre[l])
                .zip(a)
                .map(|((g, &z), &out)| g * act.derivative(z, out))
                .collect();
            da = self.params.encoder[l].backward(
                &trace.activations[l],
                &dz,
                &mut grads.encoder[l],
            );
        }
    }
}

/// One training example of a loss part. `synth` lists representation-space
/// perturbations of its encoding. The example and its perturbations share
/// one example's weight in the part's mean, so synthesis adds neighbours
/// without changing the class balance the part sees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem<'a> {
    pub features: &'a [f64],
    pub target: usize,
    pub synth: Vec<SynthNoise>,
}

impl<'a> TrainItem<'a> {
    pub fn new(features: &'a [f64], target: usize) -> Self {
        TrainItem {
            features,
            target,
            synth: Vec::new(),
        }
    }
}

/// A loss term applied as a mean over its items.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPart<'a> {
    pub spec: LossSpec,
    pub items: Vec<TrainItem<'a>>,
}

impl LossPart<'_> {
    /// Number of loss terms evaluated (originals plus synthesized).
    pub fn num_terms(&self) -> usize {
        self.items.iter().map(|i| 1 + i.synth.len()).sum()
    }
}

/// Loss values returned next to the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValues {
    pub parts: Vec<f64>,
    pub overall: OverallLoss,
}

/// Loss of each part and the total, without gradients.
pub fn loss_values(state: &ModelState, parts: &[LossPart]) -> Result<LossValues> {
    evaluate(state, parts, None)
}

/// Exact gradient of the summed batch-mean losses w.r.t. every parameter.
pub fn grads(state: &ModelState, parts: &[LossPart]) -> Result<(LossValues, Params)> {
    let mut g = Params::zeros(&state.config);
    let values = evaluate(state, parts, Some(&mut g))?;
    Ok((values, g))
}

fn evaluate(
    state: &ModelState,
    parts: &[LossPart],
    mut grads: Option<&mut Params>,
) -> Result<LossValues> {
    let c = state.config.num_classes;
    let mut part_values = Vec::with_capacity(parts.len());
    for part in parts {
        part.spec.validate()?;
        if let Some(prior) = &part.spec.prior {
            if prior.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: prior.len(),
                });
            }
        }
        if part.items.is_empty() {
            part_values.push(0.0);
            continue;
        }
        let item_weight = 1.0 / part.items.len() as f64;
        let branch = part.spec.branch();
        let head = state.params.head(branch);
        let mut sum = 0.0;
        for item in &part.items {
            let scale = item_weight / (1 + item.synth.len()) as f64;
            state.check_input(item.features)?;
            if item.target >= c {
                return Err(Error::InvalidInput(format!(
                    "target {} outside [0, {c})",
                    item.target
                )));
            }
            let trace = state.trace(item.features);
            let h = trace.activations.last().unwrap();
            let (loss, dlogits) = part.spec.eval(&head.forward(h), item.target);
            sum += loss * scale;
            let mut dh = grads.as_deref_mut().map(|g| {
                let dz: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
                head.backward(h, &dz, g.head_mut(branch))
            });
            for noise in &item.synth {
                let h_syn = noise.apply(h);
                let (loss, dlogits) = part.spec.eval(&head.forward(&h_syn), item.target);
                sum += loss * scale;
                if let (Some(g), Some(dh)) = (grads.as_deref_mut(), dh.as_mut()) {
                    let dz: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
                    let dh_syn = head.backward(&h_syn, &dz, g.head_mut(branch));
                    for (acc, v) in dh.iter_mut().zip(noise.backward(h, &dh_syn)) {
                        *acc += v;
                    }
                }
            }
            if let (Some(g), Some(dh)) = (grads.as_deref_mut(), dh) {
                state.backprop_encoder(&trace, dh, g);
            }
        }
        let mean = sum;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("{:?} loss", part.spec.kind)));
        }
        part_values.push(mean);
    }
    let labelled: Vec<(LossSpec, f64)> = parts
        .iter()
        .zip(&part_values)
        .map(|(p, &v)| (p.spec.clone(), v))
        .collect();
    let overall = overall_loss(&labelled)?;
    Ok(LossValues {
        parts: part_values,
        overall,
    })
}

/// SGD with momentum and decoupled-from-bias weight decay:
/// `buf = momentum * buf + grad + wd * param` (weights only),
/// `param -= lr * buf`. Updates `state` in place.
pub fn sgd_step(
    state: &mut ModelState,
    grads: &Params,
    lr: f64,
    opt: &OptimizerConfig,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidInput(format!("learning rate {lr}")));
    }
    let mut next = state.clone();
    {
        let params = next.params.tensors_mut();
        let buffers = next.momentum.tensors_mut();
        let grad_tensors = grads.tensors();
        if params.len() != grad_tensors.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: grad_tensors.len(),
            });
        }
        for (((p, is_bias), (buf, _)), (g, _)) in params.into_iter().zip(buffers).zip(grad_tensors)
        {
            let wd = if is_bias { 0.0 } else { opt.weight_decay };
            for ((pv, bv), gv) in p.iter_mut().zip(buf.iter_mut()).zip(g) {
                *bv = opt.momentum * *bv + gv + wd * *pv;
                *pv -= lr * *bv;
            }
        }
    }
    if !(next.params.is_finite() && next.momentum.is_finite()) {
        return Err(Error::NonFinite("parameter update".into()));
    }
    *state = next;
    Ok(())
}

/// `base_lr * cos(7 pi t / (16 T))`.
pub fn cosine_lr(step: usize, opt: &OptimizerConfig) -> Result<f64> {
    if step > opt.total_steps {
        return Err(Error::InvalidInput(format!(
            "step {step} beyond total_steps {}",
            opt.total_steps
        )));
    }
    let frac = step as f64 / opt.total_steps as f64;
    Ok(opt.base_lr * (7.0 * std::f64::consts::PI * frac / 16.0).cos())
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model, optimizer and RNG state.
///
/// JSON layout (version 1): `version`, `model_config`, `optimizer`, `params`
/// and `momentum` as flat arrays in [`Params::tensors`] order, `epoch`, and
/// `rngs` as serialized ChaCha8 states. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub params: Vec<f64>,
    pub momentum: Vec<f64>,
    pub epoch: usize,
    pub rngs: Vec<Rng>,
}

impl Checkpoint {
    pub fn capture(
        state: &ModelState,
        optimizer: &OptimizerConfig,
        epoch: usize,
        rngs: Vec<Rng>,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_config: state.config.clone(),
            optimizer: *optimizer,
            params: state.params.flatten(),
            momentum: state.momentum.flatten(),
            epoch,
            rngs,
        }
    }

    pub fn restore(&self) -> Result<ModelState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.model_config.validate()?;
        let mut params = Params::zeros(&self.model_config);
        params.load_flat(&self.params)?;
        let mut momentum = Params::zeros(&self.model_config);
        momentum.load_flat(&self.momentum)?;
        Ok(ModelState {
            config: self.model_config.clone(),
            params,
            momentum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
