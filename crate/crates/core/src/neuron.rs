//! Discrete-time spiking neurons and their surrogate-gradient backward.
//!
//! Membrane update for every model: `u = v + (I - v) / tau`. Spikes are
//! decided on `u` with a strict comparison, and the membrane hard-resets to
//! `v_rst` wherever the primary threshold `v_th` was crossed. The reset path
//! carries no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GradPair, Tensor};

/// Derivative stand-in for the Heaviside step.
pub trait Surrogate: Send + Sync {
    /// Surrogate of `dH/dx` at `x = u - threshold`.
    fn grad(&self, x: f64) -> f64;
    /// Antiderivative of [`Surrogate::grad`], used for the relaxed forward.
    fn primitive(&self, x: f64) -> f64;
}

/// Rectangular window `1/(2a) * 1[|x| < a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangular {
    half_width: f64,
}

impl Rectangular {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "surrogate half-width must be positive, got {half_width}"
            )));
        }
        Ok(Rectangular { half_width })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
}

impl Surrogate for Rectangular {
    fn grad(&self, x: f64) -> f64 {
        if x.abs() < self.half_width {
            1.0 / (2.0 * self.half_width)
        } else {
            0.0
        }
    }

    fn primitive(&self, x: f64) -> f64 {
        ((x + self.half_width) / (2.0 * self.half_width)).clamp(0.0, 1.0)
    }
}

/// Elementwise rectangular surrogate of `dH(u - threshold)/du`.
pub fn surrogate_grad(u: &Tensor, threshold: f64, a: f64) -> Result<Tensor> {
    let sg = Rectangular::new(a)?;
    Ok(u.map(|x| sg.grad(x - threshold)))
}

#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau: f64,
    pub v_th: f64,
    /// Burst threshold (LIFB) or second readout threshold (pair).
    pub v_h: f64,
    pub v_rst: f64,
    pub surrogate_width: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau: 2.0,
            v_th: 0.5,
            v_h: 1.0,
            v_rst: 0.0,
            surrogate_width: 0.5,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self, kind: NeuronKind) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.tau > 1.0) {
            return bad(format!("tau must exceed 1, got {}", self.tau));
        }
        if !(self.v_th > self.v_rst) {
            return bad(format!("need v_th > v_rst, got {} <= {}", self.v_th, self.v_rst));
        }
        match kind {
            NeuronKind::Lifb if !(self.v_h > self.v_th) => {
                return bad(format!("need v_h > v_th, got {} <= {}", self.v_h, self.v_th));
            }
            NeuronKind::Pair if !(self.v_h >= self.v_th) => {
                return bad(format!("need v_h >= v_th, got {} < {}", self.v_h, self.v_th));
            }
            _ => {}
        }
        Rectangular::new(self.surrogate_width)?;
        Ok(())
    }

    pub fn surrogate(&self) -> Rectangular {
        Rectangular {
            half_width: self.surrogate_width,
        }
    }

    #[inline]
    pub fn integrate(&self, v: f64, current: f64) -> f64 {
        v + (current - v) / self.tau
    }

    #[inline]
    pub fn decay(&self) -> f64 {
        1.0 - 1.0 / self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Lif,
    Lifb,
    PosNeg,
    /// Two binary readouts (thresholds `v_th`, `v_h`) sharing one membrane
    /// and one reset, combined through per-channel output weights.
    Pair,
}

impl NeuronKind {
    pub fn name(self) -> &'static str {
        match self {
            NeuronKind::Lif => "lif",
            NeuronKind::Lifb => "lifb",
            NeuronKind::PosNeg => "posneg",
            NeuronKind::Pair => "pair",
        }
    }
}

impl std::str::FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lif" => Ok(NeuronKind::Lif),
            "lifb" => Ok(NeuronKind::Lifb),
            "posneg" => Ok(NeuronKind::PosNeg),
            "pair" => Ok(NeuronKind::Pair),
            other => Err(Error::InvalidParam(format!("unknown neuron kind {other:?}"))),
        }
    }
}

/// Forward emission rule: exact Heaviside, or the surrogate's primitive.
/// The relaxed form exists so finite differences can check the backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    #[default]
    Hard,
    Relaxed,
}

/// Raster code for an emission.
pub mod code {
    pub const REST: u8 = 0;
    pub const REGULAR: u8 = 1;
    pub const BURST: u8 = 2;
    pub const NEGATIVE: u8 = 3;
}

/// Per-channel weights applied by a unit. For LIFB `burst` holds κ; for the
/// pair `primary`/`burst` are the two readout output weights.
#[derive(Debug, Clone, Copy)]
pub struct ChannelWeights {
    pub primary: f64,
    pub burst: f64,
}

/// Result of one unit at one step.
#[derive(Debug, Clone, Copy)]
pub struct UnitOut {
    pub s: f64,
    pub reset: bool,
    pub code: u8,
}

/// Emission of a single unit with post-integration potential `u`.
#[inline]
pub fn emit(kind: NeuronKind, p: &NeuronParams, w: ChannelWeights, u: f64, mode: SpikeMode) -> UnitOut {
    let above_th = u > p.v_th;
    let above_h = u > p.v_h;
    let code = match kind {
        NeuronKind::Lif => above_th as u8,
        NeuronKind::Lifb | NeuronKind::Pair => {
            if above_h && above_th {
                code::BURST
            } else {
                above_th as u8
            }
        }
        NeuronKind::PosNeg => {
            if above_th {
                code::REGULAR
            } else if -u > p.v_th {
                code::NEGATIVE
            } else {
                code::REST
            }
        }
    };
    let reset = match kind {
        NeuronKind::PosNeg => code != code::REST,
        _ => above_th,
    };
    let s = match mode {
        SpikeMode::Hard => match kind {
            NeuronKind::Lif => heaviside(u - p.v_th),
            NeuronKind::Lifb => match code {
                code::BURST => w.burst,
                code::REGULAR => 1.0,
                _ => 0.0,
            },
            NeuronKind::PosNeg => heaviside(u - p.v_th) - heaviside(-u - p.v_th),
            NeuronKind::Pair => {
                w.primary * heaviside(u - p.v_th) + w.burst * heaviside(u - p.v_h)
            }
        },
        SpikeMode::Relaxed => {
            let sg = p.surrogate();
            let a = sg.primitive(u - p.v_th);
            match kind {
                NeuronKind::Lif => a,
                NeuronKind::Lifb => a + (w.burst - 1.0) * sg.primitive(u - p.v_h),
                NeuronKind::PosNeg => a - sg.primitive(-u - p.v_th),
                NeuronKind::Pair => w.primary * a + w.burst * sg.primitive(u - p.v_h),
            }
        }
    };
    UnitOut { s, reset, code }
}

/// Surrogate `ds/du` for a unit.
#[inline]
pub fn emission_grad_u(kind: NeuronKind, p: &NeuronParams, w: ChannelWeights, u: f64) -> f64 {
    let sg = p.surrogate();
    match kind {
        NeuronKind::Lif => sg.grad(u - p.v_th),
        NeuronKind::Lifb => sg.grad(u - p.v_th) + (w.burst - 1.0) * sg.grad(u - p.v_h),
        NeuronKind::PosNeg => sg.grad(u - p.v_th) + sg.grad(-u - p.v_th),
        NeuronKind::Pair => w.primary * sg.grad(u - p.v_th) + w.burst * sg.grad(u - p.v_h),
    }
}

/// Gates multiplying the channel weights in the emission: `ds/d(primary)`
/// and `ds/d(burst)`. For LIFB `ds/dκ = H(u - v_h)` exactly in hard mode.
#[inline]
pub fn weight_gates(kind: NeuronKind, p: &NeuronParams, u: f64, mode: SpikeMode) -> (f64, f64) {
    let gate = |x: f64| match mode {
        SpikeMode::Hard => heaviside(x),
        SpikeMode::Relaxed => p.surrogate().primitive(x),
    };
    match kind {
        NeuronKind::Lifb => (0.0, gate(u - p.v_h)),
        NeuronKind::Pair => (gate(u - p.v_th), gate(u - p.v_h)),
        _ => (0.0, 0.0),
    }
}

/// `(channels, inner)` for a per-step tensor: axis 1 is the channel axis
/// for rank >= 2, otherwise every element is its own channel.
fn channel_layout(shape: &[usize]) -> (usize, usize) {
    if shape.len() >= 2 {
        (shape[1], shape[2..].iter().product())
    } else {
        (shape[0], 1)
    }
}

fn check_kappa(shape: &[usize], kappa: &[f64]) -> Result<usize> {
    let (c, inner) = channel_layout(shape);
    if kappa.len() != c {
        return Err(Error::InvalidParam(format!(
            "kappa has {} entries but the layer has {c} channels",
            kappa.len()
        )));
    }
    Ok(inner)
}

fn step_generic(
    kind: NeuronKind,
    v: &Tensor,
    current: &Tensor,
    p: &NeuronParams,
    burst: Option<&[f64]>,
) -> Result<(Tensor, Tensor, Tensor)> {
    v.same_shape(current, "neuron step")?;
    p.validate(kind)?;
    let (c, inner) = channel_layout(v.shape());
    let mut s = Vec::with_capacity(v.numel());
    let mut vn = Vec::with_capacity(v.numel());
    let mut us = Vec::with_capacity(v.numel());
    for (idx, (&vv, &iv)) in v.data().iter().zip(current.data()).enumerate() {
        let ch = (idx / inner) % c;
        let w = ChannelWeights {
            primary: 1.0,
            burst: burst.map_or(1.0, |k| k[ch]),
        };
        let u = p.integrate(vv, iv);
        let out = emit(kind, p, w, u, SpikeMode::Hard);
        s.push(out.s);
        vn.push(if out.reset { p.v_rst } else { u });
        us.push(u);
    }
    let shape = v.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), s)?,
        Tensor::new(shape.clone(), vn)?,
        Tensor::new(shape, us)?,
    ))
}

pub fn lif_step(v: &Tensor, current: &Tensor, p: &NeuronParams) -> Result<(Tensor, Tensor)> {
    let (s, vn, _) = step_generic(NeuronKind::Lif, v, current, p, None)?;
    Ok((s, vn))
}

/// Simplified LIFB step; `kappa` holds one burst intensity per channel.
pub fn lifb_step(v: &Tensor, current: &Tensor, p: &NeuronParams, kappa: &[f64]) -> Result<(Tensor, Tensor)> {
    let (s, vn, _) = lifb_forward(v, current, p, kappa)?;
    Ok((s, vn))
}

pub fn posneg_step(v: &Tensor, current: &Tensor, p: &NeuronParams) -> Result<(Tensor, Tensor)> {
    let (s, vn, _) = step_generic(NeuronKind::PosNeg, v, current, p, None)?;
    Ok((s, vn))
}

/// Forward state kept for [`lifb_backward`].
#[derive(Debug, Clone)]
pub struct LifbStepCtx {
    pub u: Tensor,
    pub kappa: Vec<f64>,
    pub params: NeuronParams,
}

pub fn lifb_forward(
    v: &Tensor,
    current: &Tensor,
    p: &NeuronParams,
    kappa: &[f64],
) -> Result<(Tensor, Tensor, LifbStepCtx)> {
    check_kappa(v.shape(), kappa)?;
    let (s, vn, u) = step_generic(NeuronKind::Lifb, v, current, p, Some(kappa))?;
    Ok((
        s,
        vn,
        LifbStepCtx {
            u,
            kappa: kappa.to_vec(),
            params: *p,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct LifbStepGrads {
    pub v: Tensor,
    pub current: Tensor,
    pub kappa: Vec<f64>,
}

/// Single-step backward of [`lifb_forward`] given upstream gradients for the
/// emission and for the next membrane potential.
pub fn lifb_backward(ctx: Option<&LifbStepCtx>, grad_s: &Tensor, grad_v_next: &Tensor) -> Result<LifbStepGrads> {
    let ctx = ctx.ok_or(Error::MissingContext("lifb"))?;
    ctx.u.same_shape(grad_s, "lifb_backward (grad_s)")?;
    ctx.u.same_shape(grad_v_next, "lifb_backward (grad_v_next)")?;
    let p = &ctx.params;
    let inner = check_kappa(ctx.u.shape(), &ctx.kappa)?;
    let c = ctx.kappa.len();
    let mut gv = Vec::with_capacity(ctx.u.numel());
    let mut gi = Vec::with_capacity(ctx.u.numel());
    let mut gk = vec![0.0; c];
    for (idx, ((&u, &gs), &gvn)) in ctx.u.data().iter().zip(grad_s.data()).zip(grad_v_next.data()).enumerate() {
        let ch = (idx / inner) % c;
        let w = ChannelWeights {
            primary: 1.0,
            burst: ctx.kappa[ch],
        };
        let reset = u > p.v_th;
        let du = gs * emission_grad_u(NeuronKind::Lifb, p, w, u) + if reset { 0.0 } else { gvn };
        gi.push(du / p.tau);
        gv.push(du * p.decay());
        gk[ch] += gs * weight_gates(NeuronKind::Lifb, p, u, SpikeMode::Hard).1;
    }
    let shape = ctx.u.shape().to_vec();
    Ok(LifbStepGrads {
        v: Tensor::new(shape.clone(), gv)?,
        current: Tensor::new(shape, gi)?,
        kappa: gk,
    })
}

/// How a layer's channel weights are treated by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum KappaPolicy {
    Learnable,
    Fixed(f64),
}

/// Multi-step spiking layer over time-major input `[T * B, C, ...]`.
#[derive(Debug, Clone)]
pub struct SpikingLayer {
    pub kind: NeuronKind,
    pub params: NeuronParams,
    pub channels: usize,
    /// κ for LIFB, readout-B weight for the pair; unused otherwise.
    pub burst: GradPair,
    /// Readout-A weight for the pair; unused otherwise.
    pub primary: GradPair,
    pub learnable: bool,
    pub mode: SpikeMode,
    ctx: Option<SpikingCtx>,
}

#[derive(Debug, Clone)]
struct SpikingCtx {
    u: Tensor,
    timesteps: usize,
}

impl SpikingLayer {
    pub fn new(kind: NeuronKind, params: NeuronParams, channels: usize, policy: KappaPolicy) -> Result<Self> {
        params.validate(kind)?;
        let (burst_init, learnable) = match (kind, policy) {
            (NeuronKind::Lifb, KappaPolicy::Learnable) => (1.0, true),
            (NeuronKind::Lifb, KappaPolicy::Fixed(k)) => (k, false),
            (NeuronKind::Pair, KappaPolicy::Learnable) => (0.0, true),
            (NeuronKind::Pair, KappaPolicy::Fixed(k)) => (k - 1.0, false),
            _ => (1.0, false),
        };
        Ok(SpikingLayer {
            kind,
            params,
            channels,
            burst: GradPair::new(Tensor::full(&[channels], burst_init)),
            primary: GradPair::new(Tensor::full(&[channels], 1.0)),
            learnable,
            mode: SpikeMode::Hard,
            ctx: None,
        })
    }

    pub fn kappa(&self) -> &[f64] {
        self.burst.value.data()
    }

    fn weights(&self, ch: usize) -> ChannelWeights {
        ChannelWeights {
            primary: self.primary.value.data()[ch],
            burst: self.burst.value.data()[ch],
        }
    }

    /// Runs all `timesteps` steps starting from `v = v_rst`. Returns the
    /// emissions and, when `codes` is given, fills it with one raster code
    /// per element in the same layout as the input.
    pub fn forward(
        &mut self,
        current: &Tensor,
        timesteps: usize,
        keep_ctx: bool,
        mut codes: Option<&mut Vec<u8>>,
    ) -> Result<Tensor> {
        let (c, inner) = channel_layout(current.shape());
        if c != self.channels || current.ndim() < 2 {
            return Err(Error::shape("spiking layer", current.shape(), &[0, self.channels]));
        }
        if timesteps == 0 || current.rows() % timesteps != 0 {
            return Err(Error::InvalidParam(format!(
                "leading axis {} is not a multiple of T={timesteps}",
                current.rows()
            )));
        }
        let step_len = current.numel() / timesteps;
        let p = self.params;
        let mut v = vec![p.v_rst; step_len];
        let mut s = vec![0.0; current.numel()];
        let mut us = if keep_ctx { vec![0.0; current.numel()] } else { Vec::new() };
        if let Some(codes) = codes.as_deref_mut() {
            codes.clear();
            codes.resize(current.numel(), code::REST);
        }
        for t in 0..timesteps {
            let base = t * step_len;
            for (e, vm) in v.iter_mut().enumerate() {
                let idx = base + e;
                let ch = (e / inner) % c;
                let u = p.integrate(*vm, current.data()[idx]);
                let out = emit(self.kind, &p, self.weights(ch), u, self.mode);
                s[idx] = out.s;
                *vm = if out.reset { p.v_rst } else { u };
                if keep_ctx {
                    us[idx] = u;
                }
                if let Some(codes) = codes.as_deref_mut() {
                    codes[idx] = out.code;
                }
            }
        }
        self.ctx = keep_ctx.then(|| SpikingCtx {
            u: Tensor::new(current.shape().to_vec(), us).expect("shape checked"),
            timesteps,
        });
        Tensor::new(current.shape().to_vec(), s)
    }

    /// BPTT through all stored steps. Accumulates channel-weight gradients
    /// and returns the gradient w.r.t. the input current.
    pub fn backward(&mut self, grad_s: &Tensor) -> Result<Tensor> {
        let ctx = self.ctx.as_ref().ok_or(Error::MissingContext("spiking layer"))?;
        ctx.u.same_shape(grad_s, "spiking layer backward")?;
        let p = self.params;
        let (c, inner) = channel_layout(grad_s.shape());
        let step_len = grad_s.numel() / ctx.timesteps;
        let mut carry = vec![0.0; step_len];
        let mut gi = vec![0.0; grad_s.numel()];
        let mut g_primary = vec![0.0; c];
        let mut g_burst = vec![0.0; c];
        for t in (0..ctx.timesteps).rev() {
            let base = t * step_len;
            for (e, cv) in carry.iter_mut().enumerate() {
                let idx = base + e;
                let ch = (e / inner) % c;
                let u = ctx.u.data()[idx];
                let gs = grad_s.data()[idx];
                let w = self.weights(ch);
                let reset = emit(self.kind, &p, w, u, SpikeMode::Hard).reset;
                let du = gs * emission_grad_u(self.kind, &p, w, u) + if reset { 0.0 } else { *cv };
                gi[idx] = du / p.tau;
                *cv = du * p.decay();
                let (ga, gb) = weight_gates(self.kind, &p, u, self.mode);
                g_primary[ch] += gs * ga;
                g_burst[ch] += gs * gb;
            }
        }
        if self.learnable {
            self.burst.accumulate_slice(&g_burst)?;
            if self.kind == NeuronKind::Pair {
                self.primary.accumulate_slice(&g_primary)?;
            }
        }
        Tensor::new(grad_s.shape().to_vec(), gi)
    }

    pub fn clear_ctx(&mut self) {
        self.ctx = None;
    }
}
