//! Temporally unrolled spiking networks.
//!
//! Inputs are direct-coded: the same analog sample is injected as current at
//! every timestep. Activations travel time-major as `[T * B, ...]` so that
//! stateless layers process all steps at once and normalization statistics
//! are joint over batch and time. Logits are the mean of the final linear
//! layer over `T`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{code, KappaPolicy, NeuronKind, NeuronParams, SpikeMode, SpikingLayer};
use crate::ops::{self, Conv2dCtx, LinearCtx, RunningStats, TNormCtx};
use crate::tensor::{GradPair, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    AvgPool,
    TNorm {
        channels: usize,
    },
    Flatten,
    Neuron {
        model: NeuronKind,
        params: NeuronParams,
        channels: usize,
        kappa: KappaPolicy,
    },
}

impl LayerSpec {
    fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |want: &[usize]| Err(Error::shape("layer spec", input, want));
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => {
                if input.len() != 3 || input[0] != in_channels || kernel % 2 == 0 {
                    return mismatch(&[in_channels, 0, 0]);
                }
                Ok(vec![out_channels, input[1], input[2]])
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return mismatch(&[in_features]);
                }
                Ok(vec![out_features])
            }
            LayerSpec::AvgPool => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return mismatch(&[0, 2, 2]);
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::TNorm { channels } | LayerSpec::Neuron { channels, .. } => {
                if input.first() != Some(&channels) {
                    return mismatch(&[channels]);
                }
                if let LayerSpec::Neuron { model, params, .. } = self {
                    params.validate(*model)?;
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape, `[C, H, W]` or `[F]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub timesteps: usize,
    pub classes: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::InvalidParam("T must be at least 1".into()));
        }
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.out_shape(&shape)?;
        }
        match self.layers.last() {
            Some(LayerSpec::Linear { out_features, .. }) if *out_features == self.classes => Ok(()),
            _ => Err(Error::InvalidParam(
                "the final layer must be a linear readout with one output per class".into(),
            )),
        }
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.out_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn neuron_layers(&self) -> impl Iterator<Item = (usize, NeuronKind)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            LayerSpec::Neuron { model, .. } => Some((i, *model)),
            _ => None,
        })
    }

    /// Replaces the model, parameters and κ policy of every neuron layer.
    pub fn with_neurons(mut self, model: NeuronKind, params: NeuronParams, kappa: KappaPolicy) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Neuron {
                model: m,
                params: p,
                kappa: k,
                ..
            } = layer
            {
                *m = model;
                *p = params;
                *k = kappa;
            }
        }
        self
    }
}

fn spiking_block(layers: &mut Vec<LayerSpec>, channels: usize, model: NeuronKind, params: NeuronParams, kappa: KappaPolicy) {
    layers.push(LayerSpec::TNorm { channels });
    layers.push(LayerSpec::Neuron {
        model,
        params,
        channels,
        kappa,
    });
}

/// `8C3-16C3-AP2-32C3-AP2-64C3-AP2-64C3-AP2-FC`: the six-layer conv SNN
/// with every width divided by eight. `side` must be divisible by 16.
pub fn snn6_small(
    in_channels: usize,
    side: usize,
    classes: usize,
    timesteps: usize,
    model: NeuronKind,
    params: NeuronParams,
    kappa: KappaPolicy,
) -> Result<NetworkSpec> {
    if side == 0 || side % 16 != 0 {
        return Err(Error::InvalidParam(format!(
            "snn6-small needs an input side divisible by 16, got {side}"
        )));
    }
    let plan: [(usize, bool); 5] = [(8, false), (16, true), (32, true), (64, true), (64, true)];
    let mut layers = Vec::new();
    let mut cin = in_channels;
    for (cout, pool) in plan {
        layers.push(LayerSpec::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
        });
        spiking_block(&mut layers, cout, model, params, kappa);
        if pool {
            layers.push(LayerSpec::AvgPool);
        }
        cin = cout;
    }
    let rem = side / 16;
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear {
        in_features: cin * rem * rem,
        out_features: classes,
    });
    let spec = NetworkSpec {
        name: "snn6-small".into(),
        input_shape: vec![in_channels, side, side],
        layers,
        timesteps,
        classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Three linear layers with spiking hidden units.
pub fn mlp_snn(
    input_shape: &[usize],
    hidden: usize,
    classes: usize,
    timesteps: usize,
    model: NeuronKind,
    params: NeuronParams,
    kappa: KappaPolicy,
) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    if input_shape.len() > 1 {
        layers.push(LayerSpec::Flatten);
    }
    let fin: usize = input_shape.iter().product();
    for i in 0..2 {
        layers.push(LayerSpec::Linear {
            in_features: if i == 0 { fin } else { hidden },
            out_features: hidden,
        });
        spiking_block(&mut layers, hidden, model, params, kappa);
    }
    layers.push(LayerSpec::Linear {
        in_features: hidden,
        out_features: classes,
    });
    let spec = NetworkSpec {
        name: "mlp".into(),
        input_shape: input_shape.to_vec(),
        layers,
        timesteps,
        classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// `8C3-AP2-16C3-AP2-FC` for small images (side divisible by 4).
pub fn cnn_small(
    in_channels: usize,
    side: usize,
    classes: usize,
    timesteps: usize,
    model: NeuronKind,
    params: NeuronParams,
    kappa: KappaPolicy,
) -> Result<NetworkSpec> {
    if side == 0 || side % 4 != 0 {
        return Err(Error::InvalidParam(format!(
            "cnn-small needs an input side divisible by 4, got {side}"
        )));
    }
    let mut layers = Vec::new();
    let mut cin = in_channels;
    for cout in [8, 16] {
        layers.push(LayerSpec::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
        });
        spiking_block(&mut layers, cout, model, params, kappa);
        layers.push(LayerSpec::AvgPool);
        cin = cout;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear {
        in_features: cin * (side / 4) * (side / 4),
        out_features: classes,
    });
    let spec = NetworkSpec {
        name: "cnn-small".into(),
        input_shape: vec![in_channels, side, side],
        layers,
        timesteps,
        classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Named architecture family, built for a given input and neuron choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Snn6Small,
    Mlp { hidden: usize },
    CnnSmall,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Snn6Small => "snn6-small",
            Arch::Mlp { .. } => "mlp",
            Arch::CnnSmall => "cnn-small",
        }
    }

    pub fn build(
        &self,
        input_shape: &[usize],
        classes: usize,
        timesteps: usize,
        model: NeuronKind,
        params: NeuronParams,
        kappa: KappaPolicy,
    ) -> Result<NetworkSpec> {
        let image = |what: &str| -> Result<(usize, usize)> {
            match input_shape {
                [c, h, w] if h == w => Ok((*c, *h)),
                _ => Err(Error::InvalidParam(format!(
                    "{what} needs square [C, H, W] input, got {input_shape:?}"
                ))),
            }
        };
        match *self {
            Arch::Snn6Small => {
                let (c, side) = image("snn6-small")?;
                snn6_small(c, side, classes, timesteps, model, params, kappa)
            }
            Arch::CnnSmall => {
                let (c, side) = image("cnn-small")?;
                cnn_small(c, side, classes, timesteps, model, params, kappa)
            }
            Arch::Mlp { hidden } => mlp_snn(input_shape, hidden, classes, timesteps, model, params, kappa),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    /// `snn6-small`, `cnn-small`, `mlp` (64 hidden units) or `mlp:<hidden>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "snn6-small" => Ok(Arch::Snn6Small),
            None if s == "cnn-small" => Ok(Arch::CnnSmall),
            None if s == "mlp" => Ok(Arch::Mlp { hidden: 64 }),
            Some(("mlp", h)) => match h.parse() {
                Ok(hidden) if hidden > 0 => Ok(Arch::Mlp { hidden }),
                _ => Err(Error::InvalidParam(format!("bad hidden width in {s:?}"))),
            },
            _ => Err(Error::InvalidParam(format!(
                "unknown architecture {s:?} (expected snn6-small, cnn-small, mlp or mlp:<hidden>)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        w: GradPair,
        b: GradPair,
        ctx: Option<Conv2dCtx>,
    },
    Linear {
        w: GradPair,
        b: GradPair,
        ctx: Option<LinearCtx>,
    },
    AvgPool {
        in_shape: Option<Vec<usize>>,
    },
    TNorm {
        gamma: GradPair,
        beta: GradPair,
        running: RunningStats,
        ctx: Option<TNormCtx>,
    },
    Flatten {
        in_shape: Option<Vec<usize>>,
    },
    Neuron(SpikingLayer),
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl Layer {
    fn init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => {
                let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
                Layer::Conv {
                    w: GradPair::new(uniform(rng, &[out_channels, in_channels, kernel, kernel], bound)),
                    b: GradPair::new(uniform(rng, &[out_channels], bound)),
                    ctx: None,
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let bound = 1.0 / (in_features as f64).sqrt();
                Layer::Linear {
                    w: GradPair::new(uniform(rng, &[out_features, in_features], bound)),
                    b: GradPair::new(uniform(rng, &[out_features], bound)),
                    ctx: None,
                }
            }
            LayerSpec::AvgPool => Layer::AvgPool { in_shape: None },
            LayerSpec::Flatten => Layer::Flatten { in_shape: None },
            LayerSpec::TNorm { channels } => Layer::TNorm {
                gamma: GradPair::new(Tensor::full(&[channels], 1.0)),
                beta: GradPair::new(Tensor::zeros(&[channels])),
                running: RunningStats::new(channels),
                ctx: None,
            },
            LayerSpec::Neuron {
                model,
                params,
                channels,
                kappa,
            } => Layer::Neuron(SpikingLayer::new(model, params, channels, kappa)?),
        })
    }
}

/// Role of a parameter tensor, used by the optimizer for decay rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// LIFB burst intensity, or the second readout weight of a pair.
    Kappa,
    /// First readout weight of a pair.
    PairPrimary,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub role: ParamRole,
    pub param: &'a mut GradPair,
}

/// Emission record of one neuron layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRaster {
    pub layer: usize,
    pub kind: NeuronKind,
    pub timesteps: usize,
    pub batch: usize,
    /// Neurons per sample.
    pub neurons: usize,
    pub channels: usize,
    /// Codes laid out `[t][b][neuron]`.
    pub codes: Vec<u8>,
    pub kappa: Vec<f64>,
}

impl LayerRaster {
    pub fn code(&self, t: usize, b: usize, neuron: usize) -> u8 {
        self.codes[(t * self.batch + b) * self.neurons + neuron]
    }

    pub fn channel_of(&self, neuron: usize) -> usize {
        neuron / (self.neurons / self.channels)
    }

    /// Fractions `(rest, regular, burst)`; negative spikes count as regular.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let mut counts = [0usize; 3];
        for &c in &self.codes {
            counts[match c {
                code::REST => 0,
                code::BURST => 2,
                _ => 1,
            }] += 1;
        }
        let n = self.codes.len().max(1) as f64;
        (counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeRaster {
    pub layers: Vec<LayerRaster>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Use batch statistics in normalization layers and update running ones.
    pub train: bool,
    /// Keep per-layer contexts for a following [`Network::backward`].
    pub keep_ctx: bool,
    pub record_raster: bool,
    pub capture_emissions: bool,
}

impl ForwardOptions {
    pub fn training() -> Self {
        ForwardOptions {
            train: true,
            keep_ctx: true,
            ..Default::default()
        }
    }

    pub fn inference() -> Self {
        ForwardOptions::default()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub raster: Option<SpikeRaster>,
    /// Emissions of each neuron layer, `[T * B, ...]`, when requested.
    pub emissions: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    batch: Option<usize>,
}

impl Network {
    pub fn new(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| Layer::init(l, rng))
            .collect::<Result<_>>()?;
        Ok(Network {
            spec,
            layers,
            batch: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn timesteps(&self) -> usize {
        self.spec.timesteps
    }

    pub fn set_timesteps(&mut self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::InvalidParam("T must be at least 1".into()));
        }
        self.spec.timesteps = t;
        Ok(())
    }

    pub fn set_spike_mode(&mut self, mode: SpikeMode) {
        for layer in &mut self.layers {
            if let Layer::Neuron(n) = layer {
                n.mode = mode;
            }
        }
    }

    pub fn spiking_layer(&self, index: usize) -> Option<&SpikingLayer> {
        match self.layers.get(index) {
            Some(Layer::Neuron(n)) => Some(n),
            _ => None,
        }
    }

    pub fn spiking_layer_mut(&mut self, index: usize) -> Option<&mut SpikingLayer> {
        match self.layers.get_mut(index) {
            Some(Layer::Neuron(n)) => Some(n),
            _ => None,
        }
    }

    /// Direct coding: `x` (`[B, ...input_shape]`) is injected at every step.
    pub fn forward(&mut self, x: &Tensor, opts: ForwardOptions) -> Result<ForwardOutput> {
        if x.ndim() < 1 || x.shape()[1..] != self.spec.input_shape[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.spec.input_shape);
            return Err(Error::shape("network input", x.shape(), &want));
        }
        let xs = x.repeat_leading(self.spec.timesteps);
        self.forward_sequence(&xs, opts)
    }

    /// Per-step inputs laid out `[T * B, ...input_shape]`, time-major.
    pub fn forward_sequence(&mut self, xs: &Tensor, opts: ForwardOptions) -> Result<ForwardOutput> {
        let t = self.spec.timesteps;
        if xs.shape()[1..] != self.spec.input_shape[..] || xs.rows() % t != 0 {
            return Err(Error::shape("network input sequence", xs.shape(), &self.spec.input_shape));
        }
        let batch = xs.rows() / t;
        let mut h = xs.clone();
        let mut raster = opts.record_raster.then(SpikeRaster::default);
        let mut emissions = Vec::new();
        let keep = opts.keep_ctx;
        for (index, layer) in self.layers.iter_mut().enumerate() {
            h = match layer {
                Layer::Conv { w, b, ctx } => {
                    let out = ops::conv2d_forward(&h, &w.value, &b.value)?;
                    *ctx = keep.then(|| Conv2dCtx {
                        x: h,
                        w: w.value.clone(),
                    });
                    out
                }
                Layer::Linear { w, b, ctx } => {
                    let out = ops::linear_forward(&h, &w.value, &b.value)?;
                    *ctx = keep.then(|| LinearCtx {
                        x: h,
                        w: w.value.clone(),
                    });
                    out
                }
                Layer::AvgPool { in_shape } => {
                    let out = ops::avgpool2d_forward(&h)?;
                    *in_shape = keep.then(|| h.shape().to_vec());
                    out
                }
                Layer::Flatten { in_shape } => {
                    let rows = h.rows();
                    let n = h.row_len();
                    *in_shape = Some(h.shape().to_vec());
                    h.reshape(&[rows, n])?
                }
                Layer::TNorm {
                    gamma,
                    beta,
                    running,
                    ctx,
                } => {
                    let (out, c) = ops::tnorm_forward(&h, &gamma.value, &beta.value, running, opts.train)?;
                    *ctx = keep.then_some(c);
                    out
                }
                Layer::Neuron(n) => {
                    let mut codes = Vec::new();
                    let out = n.forward(&h, t, keep, raster.is_some().then_some(&mut codes))?;
                    if let Some(r) = raster.as_mut() {
                        r.layers.push(LayerRaster {
                            layer: index,
                            kind: n.kind,
                            timesteps: t,
                            batch,
                            neurons: out.row_len(),
                            channels: n.channels,
                            codes,
                            kappa: n.kappa().to_vec(),
                        });
                    }
                    if opts.capture_emissions {
                        emissions.push(out.clone());
                    }
                    out
                }
            };
        }
        self.batch = keep.then_some(batch);
        let classes = self.spec.classes;
        let mut logits = vec![0.0; batch * classes];
        for step in 0..t {
            for (acc, &v) in logits.iter_mut().zip(&h.data()[step * batch * classes..(step + 1) * batch * classes]) {
                *acc += v;
            }
        }
        let inv = t as f64;
        logits.iter_mut().for_each(|v| *v /= inv);
        Ok(ForwardOutput {
            logits: Tensor::new(vec![batch, classes], logits)?,
            raster,
            emissions,
        })
    }

    /// Reverse pass through all layers and timesteps; gradients accumulate
    /// into each parameter's buffer.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let batch = self.batch.ok_or(Error::MissingContext("network"))?;
        let t = self.spec.timesteps;
        if grad_logits.shape() != [batch, self.spec.classes] {
            return Err(Error::shape("network backward", grad_logits.shape(), &[batch, self.spec.classes]));
        }
        let mut g = grad_logits.repeat_leading(t);
        g.scale(1.0 / t as f64);
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Conv { w, b, ctx } => {
                    let grads = ops::conv2d_backward(ctx.as_ref(), &g)?;
                    w.accumulate(&grads.w)?;
                    b.accumulate(&grads.b)?;
                    grads.x
                }
                Layer::Linear { w, b, ctx } => {
                    let grads = ops::linear_backward(ctx.as_ref(), &g)?;
                    w.accumulate(&grads.w)?;
                    b.accumulate(&grads.b)?;
                    grads.x
                }
                Layer::AvgPool { in_shape } => ops::avgpool2d_backward(in_shape.as_deref(), &g)?,
                Layer::Flatten { in_shape } => {
                    let shape = in_shape.clone().ok_or(Error::MissingContext("flatten"))?;
                    g.reshape(&shape)?
                }
                Layer::TNorm { gamma, beta, ctx, .. } => {
                    let grads = ops::tnorm_backward(ctx.as_ref(), &g)?;
                    gamma.accumulate(&grads.gamma)?;
                    beta.accumulate(&grads.beta)?;
                    grads.x
                }
                Layer::Neuron(n) => n.backward(&g)?,
            };
        }
        Ok(())
    }

    /// Drops stored forward contexts.
    pub fn clear_ctx(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { ctx, .. } => *ctx = None,
                Layer::Linear { ctx, .. } => *ctx = None,
                Layer::TNorm { ctx, .. } => *ctx = None,
                Layer::AvgPool { in_shape } => *in_shape = None,
                Layer::Flatten { .. } => {}
                Layer::Neuron(n) => n.clear_ctx(),
            }
        }
        self.batch = None;
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let mut push = |suffix: &str, role, param| {
                out.push(ParamRef {
                    name: format!("{i}.{suffix}"),
                    role,
                    param,
                })
            };
            match layer {
                Layer::Conv { w, b, .. } | Layer::Linear { w, b, .. } => {
                    push("weight", ParamRole::Weight, w);
                    push("bias", ParamRole::Bias, b);
                }
                Layer::TNorm { gamma, beta, .. } => {
                    push("gamma", ParamRole::NormScale, gamma);
                    push("beta", ParamRole::NormShift, beta);
                }
                Layer::Neuron(n) if n.learnable => match n.kind {
                    NeuronKind::Lifb => push("kappa", ParamRole::Kappa, &mut n.burst),
                    NeuronKind::Pair => {
                        push("primary", ParamRole::PairPrimary, &mut n.primary);
                        push("kappa", ParamRole::Kappa, &mut n.burst);
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.param.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.param.zero_grad();
        }
    }

    pub fn flat_params(&mut self) -> Vec<f64> {
        self.params_mut()
            .iter()
            .flat_map(|p| p.param.value.data().to_vec())
            .collect()
    }

    pub fn flat_grads(&mut self) -> Vec<f64> {
        self.params_mut()
            .iter()
            .flat_map(|p| p.param.grad.data().to_vec())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.param.value.numel();
            let src = flat
                .get(off..off + n)
                .ok_or_else(|| Error::InvalidParam("flat parameter vector too short".into()))?;
            p.param.value.data_mut().copy_from_slice(src);
            off += n;
        }
        if off != flat.len() {
            return Err(Error::InvalidParam("flat parameter vector too long".into()));
        }
        Ok(())
    }

    /// Every persistent tensor (parameters, running statistics, channel
    /// weights of all neuron layers), by name.
    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut push = |suffix: &str, t: &Tensor| out.push((format!("{i}.{suffix}"), t.clone()));
            match layer {
                Layer::Conv { w, b, .. } | Layer::Linear { w, b, .. } => {
                    push("weight", &w.value);
                    push("bias", &b.value);
                }
                Layer::TNorm {
                    gamma,
                    beta,
                    running,
                    ..
                } => {
                    push("gamma", &gamma.value);
                    push("beta", &beta.value);
                    let c = running.mean.len();
                    push("running_mean", &Tensor::new(vec![c], running.mean.clone()).expect("len"));
                    push("running_var", &Tensor::new(vec![c], running.var.clone()).expect("len"));
                }
                Layer::Neuron(n) => {
                    push("kappa", &n.burst.value);
                    push("primary", &n.primary.value);
                }
                _ => {}
            }
        }
        out
    }

    pub fn load_state_dict(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let expected = self.state_dict();
        if expected.len() != state.len() {
            return Err(Error::Structure(format!(
                "state has {} tensors, network expects {}",
                state.len(),
                expected.len()
            )));
        }
        for ((name, t), (want_name, want)) in state.iter().zip(&expected) {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::Structure(format!(
                    "tensor {name} {:?} does not match {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        let lookup = |suffix: String| -> &Tensor {
            &state.iter().find(|(n, _)| *n == suffix).expect("validated").1
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { w, b, .. } | Layer::Linear { w, b, .. } => {
                    w.value = lookup(format!("{i}.weight")).clone();
                    b.value = lookup(format!("{i}.bias")).clone();
                }
                Layer::TNorm {
                    gamma,
                    beta,
                    running,
                    ..
                } => {
                    gamma.value = lookup(format!("{i}.gamma")).clone();
                    beta.value = lookup(format!("{i}.beta")).clone();
                    running.mean = lookup(format!("{i}.running_mean")).data().to_vec();
                    running.var = lookup(format!("{i}.running_var")).data().to_vec();
                }
                Layer::Neuron(n) => {
                    n.burst.value = lookup(format!("{i}.kappa")).clone();
                    n.primary.value = lookup(format!("{i}.primary")).clone();
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// `count` distinct indices out of `0..total` (all of them if `count >=
/// total`), drawn from `seed` and returned in ascending order.
pub fn select_neurons(total: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, count.min(total)).into_vec();
    idx.sort_unstable();
    idx
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.ndim() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape("cross_entropy", logits.shape(), &[labels.len()]));
    }
    let classes = logits.shape()[1];
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.numel()];
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (j, g) in grad[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / b;
        }
    }
    Ok((loss / b, Tensor::new(logits.shape().to_vec(), grad)?))
}
