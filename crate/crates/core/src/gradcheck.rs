//! Central finite differences against the hand-written backward passes.
//!
//! Each check returns an [`FdReport`] with the worst elementwise relative
//! error; callers decide the tolerance. Spiking forwards have genuine
//! discontinuities (resets, and kinks of the relaxed emission), so points
//! where a perturbation crosses one are screened out and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{cross_entropy_loss, Arch, ForwardOptions, ForwardOutput, Network};
use crate::neuron::{code, KappaPolicy, NeuronKind, NeuronParams, SpikeMode, SpikingLayer};
use crate::ops::{
    avgpool2d_backward, avgpool2d_forward, conv2d_backward, conv2d_forward, linear_backward, linear_forward,
    tnorm_backward, tnorm_forward, Conv2dCtx, LinearCtx, RunningStats,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl FdReport {
    fn new(name: impl Into<String>, analytic: &[f64], numeric: &[f64], skipped: usize) -> Self {
        FdReport {
            name: name.into(),
            max_rel_err: rel_err(analytic, numeric),
            checked: analytic.len(),
            skipped,
        }
    }
}

/// Elementwise relative error with an absolute floor of `1e-6`, so exact
/// zeros compare sensibly.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn central_diff(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = f(&x);
            x.data_mut()[i] = orig - h;
            let down = f(&x);
            x.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// FD over one scalar; `None` when the perturbation changes any raster code
/// (a reset flipped, so the forward jumped).
fn screened_diff(h: f64, base_codes: &[u8], mut f: impl FnMut(f64) -> (f64, Vec<u8>)) -> Option<f64> {
    let (up, cu) = f(h);
    let (down, cd) = f(-h);
    (cu == base_codes && cd == base_codes).then(|| (up - down) / (2.0 * h))
}

/// A kink of the piecewise-linear relaxed emission within `±h` shows up as
/// disagreeing one-sided slopes.
fn kinked(eval: &mut impl FnMut(f64) -> (f64, Vec<u8>), l0: f64, h: f64) -> bool {
    let fwd = (eval(h).0 - l0) / h;
    let bwd = (l0 - eval(-h).0) / h;
    (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-4)
}

/// Linear, conv, pooling, normalization and the loss.
pub fn dense_layer_reports(seed: u64) -> Result<Vec<FdReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut out = Vec::new();

    let x = rand_tensor(&[5, 7], 1.0, &mut rng);
    let w = rand_tensor(&[4, 7], 1.0, &mut rng);
    let b = rand_tensor(&[4], 1.0, &mut rng);
    let r = rand_tensor(&[5, 4], 1.0, &mut rng);
    let g = linear_backward(Some(&LinearCtx { x: x.clone(), w: w.clone() }), &r)?;
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&linear_forward(x, w, b).expect("linear"), &r);
    out.push(FdReport::new("linear.x", g.x.data(), &central_diff(&x, h, |x| loss(x, &w, &b)), 0));
    out.push(FdReport::new("linear.w", g.w.data(), &central_diff(&w, h, |w| loss(&x, w, &b)), 0));
    out.push(FdReport::new("linear.b", g.b.data(), &central_diff(&b, h, |b| loss(&x, &w, b)), 0));

    // 11 samples spans more than one internal shard.
    let x = rand_tensor(&[11, 2, 5, 5], 1.0, &mut rng);
    let w = rand_tensor(&[3, 2, 3, 3], 1.0, &mut rng);
    let b = rand_tensor(&[3], 1.0, &mut rng);
    let r = rand_tensor(&[11, 3, 5, 5], 1.0, &mut rng);
    let g = conv2d_backward(Some(&Conv2dCtx { x: x.clone(), w: w.clone() }), &r)?;
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&conv2d_forward(x, w, b).expect("conv"), &r);
    out.push(FdReport::new("conv2d.x", g.x.data(), &central_diff(&x, h, |x| loss(x, &w, &b)), 0));
    out.push(FdReport::new("conv2d.w", g.w.data(), &central_diff(&w, h, |w| loss(&x, w, &b)), 0));
    out.push(FdReport::new("conv2d.b", g.b.data(), &central_diff(&b, h, |b| loss(&x, &w, b)), 0));

    let x = rand_tensor(&[3, 2, 5, 4], 1.0, &mut rng);
    let r = rand_tensor(&[3, 2, 2, 2], 1.0, &mut rng);
    let g = avgpool2d_backward(Some(x.shape()), &r)?;
    let numeric = central_diff(&x, h, |x| dot(&avgpool2d_forward(x).expect("pool"), &r));
    out.push(FdReport::new("avgpool.x", g.data(), &numeric, 0));

    let x = rand_tensor(&[6, 3, 2, 2], 2.0, &mut rng);
    let gamma = rand_tensor(&[3], 1.5, &mut rng);
    let beta = rand_tensor(&[3], 1.0, &mut rng);
    let r = rand_tensor(&[6, 3, 2, 2], 1.0, &mut rng);
    let (_, ctx) = tnorm_forward(&x, &gamma, &beta, &mut RunningStats::new(3), true)?;
    let g = tnorm_backward(Some(&ctx), &r)?;
    let loss = |x: &Tensor, gm: &Tensor, bt: &Tensor| {
        let (y, _) = tnorm_forward(x, gm, bt, &mut RunningStats::new(3), true).expect("tnorm");
        dot(&y, &r)
    };
    out.push(FdReport::new("tnorm.x", g.x.data(), &central_diff(&x, h, |x| loss(x, &gamma, &beta)), 0));
    out.push(FdReport::new("tnorm.gamma", g.gamma.data(), &central_diff(&gamma, h, |gm| loss(&x, gm, &beta)), 0));
    out.push(FdReport::new("tnorm.beta", g.beta.data(), &central_diff(&beta, h, |bt| loss(&x, &gamma, bt)), 0));

    let stats = RunningStats {
        mean: vec![0.3, -0.2, 0.1],
        var: vec![1.7, 0.6, 1.1],
    };
    let (_, ctx) = tnorm_forward(&x, &gamma, &beta, &mut stats.clone(), false)?;
    let g = tnorm_backward(Some(&ctx), &r)?;
    let numeric = central_diff(&x, h, |x| {
        dot(&tnorm_forward(x, &gamma, &beta, &mut stats.clone(), false).expect("tnorm").0, &r)
    });
    out.push(FdReport::new("tnorm(running).x", g.x.data(), &numeric, 0));

    let logits = rand_tensor(&[5, 4], 3.0, &mut rng);
    let labels = [0, 3, 1, 1, 2];
    let (_, g) = cross_entropy_loss(&logits, &labels)?;
    let numeric = central_diff(&logits, h, |l| cross_entropy_loss(l, &labels).expect("loss").0);
    out.push(FdReport::new("cross_entropy.logits", g.data(), &numeric, 0));
    Ok(out)
}

fn relaxed_layer(kind: NeuronKind) -> SpikingLayer {
    let mut layer =
        SpikingLayer::new(kind, NeuronParams::default(), 3, KappaPolicy::Learnable).expect("default params");
    // Channel weights away from their initial values exercise every term.
    layer.burst.value = Tensor::new(vec![3], vec![1.7, 0.6, 2.3]).expect("shape");
    if kind == NeuronKind::Pair {
        layer.primary.value = Tensor::new(vec![3], vec![0.9, 1.2, 0.8]).expect("shape");
    }
    layer.mode = SpikeMode::Relaxed;
    layer
}

fn run_layer(layer: &mut SpikingLayer, x: &Tensor, t: usize) -> (Tensor, Vec<u8>) {
    let mut codes = Vec::new();
    let s = layer.forward(x, t, false, Some(&mut codes)).expect("layer forward");
    (s, codes)
}

/// Relaxed spiking layer of `kind`: BPTT input gradient, plus the channel
/// weights where they are trainable.
pub fn spiking_layer_reports(kind: NeuronKind, seed: u64) -> Result<Vec<FdReport>> {
    let (t, b, h) = (4, 3, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[t * b, 3, 2], 1.5, &mut rng);
    let r = rand_tensor(&[t * b, 3, 2], 1.0, &mut rng);
    let mut layer = relaxed_layer(kind);
    let (_, base) = run_layer(&mut layer, &x, t);
    layer.forward(&x, t, true, None)?;
    let gx = layer.backward(&r)?;

    let (mut analytic, mut numeric, mut skipped) = (Vec::new(), Vec::new(), 0);
    for i in 0..x.numel() {
        let d = screened_diff(h, &base, |dh| {
            let mut xp = x.clone();
            xp.data_mut()[i] += dh;
            let (s, c) = run_layer(&mut relaxed_layer(kind), &xp, t);
            (dot(&s, &r), c)
        });
        match d {
            Some(d) => {
                analytic.push(gx.data()[i]);
                numeric.push(d);
            }
            None => skipped += 1,
        }
    }
    let mut out = vec![FdReport::new(format!("{}.input", kind.name()), &analytic, &numeric, skipped)];

    type Param = fn(&mut SpikingLayer) -> &mut Tensor;
    let mut channel: Vec<(&str, Param, &Tensor)> = Vec::new();
    if matches!(kind, NeuronKind::Lifb | NeuronKind::Pair) {
        channel.push(("burst", |l| &mut l.burst.value, &layer.burst.grad));
    }
    if kind == NeuronKind::Pair {
        channel.push(("primary", |l| &mut l.primary.value, &layer.primary.grad));
    }
    for (name, param, grad) in channel {
        let (mut numeric, mut skipped) = (Vec::new(), 0);
        let mut analytic = Vec::new();
        for ch in 0..3 {
            let d = screened_diff(h, &base, |dh| {
                let mut l = relaxed_layer(kind);
                param(&mut l).data_mut()[ch] += dh;
                let (s, c) = run_layer(&mut l, &x, t);
                (dot(&s, &r), c)
            });
            match d {
                Some(d) => {
                    analytic.push(grad.data()[ch]);
                    numeric.push(d);
                }
                None => skipped += 1,
            }
        }
        out.push(FdReport::new(format!("{}.{name}", kind.name()), &analytic, &numeric, skipped));
    }
    Ok(out)
}

/// Hard-mode LIFB κ gradient against FD and against the independent
/// indicator sum `Σ r · [code is burst]`. Inputs are redrawn until every
/// potential sits at least `1e-3` from both thresholds.
pub fn hard_kappa_report(seed: u64) -> Result<FdReport> {
    let (t, b, c) = (3, 8, 4);
    let p = NeuronParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&[t * b, c], 1.0, &mut rng);
    let mut redraws = 0;
    let x = loop {
        let x = rand_tensor(&[t * b, c], 4.0, &mut rng);
        let mut v = vec![p.v_rst; b * c];
        let mut clear = true;
        for step in 0..t {
            for (e, vm) in v.iter_mut().enumerate() {
                let u = p.integrate(*vm, x.data()[step * b * c + e]);
                clear &= (u - p.v_th).abs() > 1e-3 && (u - p.v_h).abs() > 1e-3;
                *vm = if u > p.v_th { p.v_rst } else { u };
            }
        }
        if clear {
            break x;
        }
        redraws += 1;
    };
    let kappa = [0.7, 1.0, 1.6, 2.4];
    let make = || {
        let mut l = SpikingLayer::new(NeuronKind::Lifb, p, c, KappaPolicy::Learnable).expect("params");
        l.burst.value = Tensor::new(vec![c], kappa.to_vec()).expect("shape");
        l
    };
    let mut layer = make();
    let mut codes = Vec::new();
    layer.forward(&x, t, true, Some(&mut codes))?;
    layer.backward(&r)?;
    let mut indicator = vec![0.0; c];
    for (i, &cd) in codes.iter().enumerate() {
        if cd == code::BURST {
            indicator[i % c] += r.data()[i];
        }
    }
    if indicator.iter().all(|&g| g == 0.0) {
        return Err(Error::InvalidParam("sample produced no bursts".into()));
    }
    let h = 1e-4;
    let mut numeric = Vec::new();
    for ch in 0..c {
        let f = |dh: f64| -> Result<f64> {
            let mut l = make();
            l.burst.value.data_mut()[ch] += dh;
            Ok(dot(&l.forward(&x, t, false, None)?, &r))
        };
        numeric.push((f(h)? - f(-h)?) / (2.0 * h));
    }
    let mut report = FdReport::new("lifb.kappa(hard)", layer.burst.grad.data(), &numeric, redraws);
    report.max_rel_err = report.max_rel_err.max(rel_err(&indicator, &numeric));
    Ok(report)
}

fn all_codes(o: &ForwardOutput) -> Vec<u8> {
    o.raster
        .as_ref()
        .map(|r| r.layers.iter().flat_map(|l| l.codes.iter().copied()).collect())
        .unwrap_or_default()
}

/// Whole network in relaxed spike mode with batch statistics: FD over every
/// trainable parameter of the cross-entropy loss.
pub fn relaxed_network_report(arch: Arch, shape: &[usize], kind: NeuronKind, seed: u64) -> Result<FdReport> {
    let spec = arch.build(shape, 3, 2, kind, NeuronParams::default(), KappaPolicy::Learnable)?;
    let mut net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    net.set_spike_mode(SpikeMode::Relaxed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let mut full = vec![4];
    full.extend_from_slice(shape);
    let x = rand_tensor(&full, 2.0, &mut rng);
    let labels = [0, 2, 1, 2];
    // Jitter every parameter so that κ leaves 1 and the burst branch
    // carries gradient.
    let mut flat = net.flat_params();
    for v in flat.iter_mut() {
        *v += rng.gen_range(-0.05..0.05);
    }
    net.set_flat_params(&flat)?;

    let opts = ForwardOptions {
        record_raster: true,
        ..ForwardOptions::training()
    };
    let out = net.forward(&x, opts)?;
    let base = all_codes(&out);
    let (_, grad) = cross_entropy_loss(&out.logits, &labels)?;
    net.zero_grad();
    net.backward(&grad)?;
    net.clear_ctx();
    let analytic = net.flat_grads();

    let probe = ForwardOptions {
        train: true,
        record_raster: true,
        ..Default::default()
    };
    // Loss values are O(1): h = 1e-5 keeps roundoff (~eps / h) below 1e-10.
    let h = 1e-5;
    let (mut a, mut n, mut skipped) = (Vec::new(), Vec::new(), 0);
    let mut probe_net = net.clone();
    for i in 0..flat.len() {
        let mut eval = |dh: f64| {
            let mut f = flat.clone();
            f[i] += dh;
            probe_net.set_flat_params(&f).expect("same length");
            let o = probe_net.forward(&x, probe).expect("forward");
            (cross_entropy_loss(&o.logits, &labels).expect("loss").0, all_codes(&o))
        };
        let (l0, _) = eval(0.0);
        match screened_diff(h, &base, &mut eval) {
            Some(_) if kinked(&mut eval, l0, h) => skipped += 1,
            Some(d) => {
                a.push(analytic[i]);
                n.push(d);
            }
            None => skipped += 1,
        }
    }
    Ok(FdReport::new(format!("{} {}", arch.name(), kind.name()), &a, &n, skipped))
}
