//! Rewriting LIFB layers as pairs of binary threshold units.
//!
//! A pair shares one membrane with the LIFB unit it replaces. Readout A
//! fires above `v_th` and carries output weight 1, readout B fires above
//! `v_h` and carries `κ - 1`; the membrane resets when A fires. The next
//! layer receives `A + (κ - 1) B`, which is `{0, 1, κ}` exactly whenever
//! `1 + (κ - 1)` rounds back to `κ` (every κ >= 0.5, among others).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ForwardOptions, LayerSpec, Network, NetworkSpec};
use crate::neuron::{KappaPolicy, NeuronKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecoupleReport {
    pub converted_layers: Vec<usize>,
    /// `(layer, channel, κ)` where `1 + (κ - 1)` does not round to `κ`.
    pub inexact_channels: Vec<(usize, usize, f64)>,
    pub warnings: Vec<String>,
}

/// Whether a pair with weights `1` and `κ - 1` reproduces `κ` bit-exactly.
pub fn kappa_is_exact(kappa: f64) -> bool {
    1.0 + (kappa - 1.0) == kappa
}

/// Replaces every LIFB layer by a frozen pair layer carrying the same
/// parameters. All other tensors are copied unchanged.
pub fn decouple_network(net: &Network) -> Result<(Network, DecoupleReport)> {
    let mut report = DecoupleReport::default();
    let mut spec = net.spec().clone();
    for (i, layer) in spec.layers.iter_mut().enumerate() {
        if let LayerSpec::Neuron { model, kappa, .. } = layer {
            if *model == NeuronKind::Lifb {
                *model = NeuronKind::Pair;
                *kappa = KappaPolicy::Fixed(1.0);
                report.converted_layers.push(i);
            }
        }
    }
    if report.converted_layers.is_empty() {
        let msg = "network has no lifb layers; nothing to decouple".to_string();
        log::warn!("{msg}");
        report.warnings.push(msg);
        return Ok((net.clone(), report));
    }
    spec.name = format!("{}-decoupled", net.spec().name);
    let mut out = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    out.load_state_dict(&net.state_dict())?;
    for &i in &report.converted_layers {
        let src = net.spiking_layer(i).expect("lifb layer").kappa().to_vec();
        let dst = out.spiking_layer_mut(i).expect("pair layer");
        dst.mode = net.spiking_layer(i).expect("lifb layer").mode;
        for (ch, &k) in src.iter().enumerate() {
            dst.primary.value.data_mut()[ch] = 1.0;
            dst.burst.value.data_mut()[ch] = k - 1.0;
            if !kappa_is_exact(k) {
                report.inexact_channels.push((i, ch, k));
            }
        }
    }
    if !report.inexact_channels.is_empty() {
        let msg = format!(
            "{} channel(s) have a κ for which 1 + (κ - 1) rounds away from κ; their decoupled emission may differ by one ulp",
            report.inexact_channels.len()
        );
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub timesteps: usize,
    pub max_logit_deviation: f64,
    /// `(layer index, max |emission difference|)` per neuron layer.
    pub layer_deviation: Vec<(usize, f64)>,
    pub passed: bool,
}

fn max_dev(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, |m, d| if d.is_nan() || m.is_nan() { f64::NAN } else { m.max(d) })
}

fn check_structure(a: &NetworkSpec, b: &NetworkSpec) -> Result<()> {
    let fail = |msg: String| Err(Error::Structure(msg));
    if a.input_shape != b.input_shape || a.classes != b.classes || a.layers.len() != b.layers.len() {
        return fail("networks differ in input shape, class count or depth".into());
    }
    for (i, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
        let ok = match (la, lb) {
            (
                LayerSpec::Neuron {
                    model: ma,
                    params: pa,
                    channels: ca,
                    ..
                },
                LayerSpec::Neuron {
                    model: mb,
                    params: pb,
                    channels: cb,
                    ..
                },
            ) => {
                let kinds = ma == mb
                    || matches!(
                        (ma, mb),
                        (NeuronKind::Lifb, NeuronKind::Pair) | (NeuronKind::Pair, NeuronKind::Lifb)
                    );
                kinds && pa == pb && ca == cb
            }
            _ => la == lb,
        };
        if !ok {
            return fail(format!("layer {i} differs: {la:?} vs {lb:?}"));
        }
    }
    Ok(())
}

/// Runs both networks on `inputs` (`[B, ...]`) in inference mode for
/// `timesteps` steps and compares logits and every neuron layer's emission.
/// Passes only when all deviations are exactly zero.
pub fn verify_equivalence(a: &Network, b: &Network, inputs: &Tensor, timesteps: usize) -> Result<EquivalenceReport> {
    check_structure(a.spec(), b.spec())?;
    let opts = ForwardOptions {
        capture_emissions: true,
        ..ForwardOptions::inference()
    };
    let run = |net: &Network| -> Result<_> {
        let mut net = net.clone();
        net.set_timesteps(timesteps)?;
        net.forward(inputs, opts)
    };
    let (oa, ob) = (run(a)?, run(b)?);
    let layer_deviation: Vec<(usize, f64)> = a
        .spec()
        .neuron_layers()
        .map(|(i, _)| i)
        .zip(oa.emissions.iter().zip(&ob.emissions))
        .map(|(i, (ea, eb))| (i, max_dev(ea, eb)))
        .collect();
    let max_logit_deviation = max_dev(&oa.logits, &ob.logits);
    let passed = max_logit_deviation == 0.0 && layer_deviation.iter().all(|&(_, d)| d == 0.0);
    Ok(EquivalenceReport {
        timesteps,
        max_logit_deviation,
        layer_deviation,
        passed,
    })
}

/// The decoupled topology of a LIFB spec with trainable readout weights.
pub fn scratch_spec(spec: &NetworkSpec) -> NetworkSpec {
    let mut out = spec.clone();
    for layer in &mut out.layers {
        if let LayerSpec::Neuron { model, kappa, .. } = layer {
            if *model == NeuronKind::Lifb {
                *model = NeuronKind::Pair;
                *kappa = KappaPolicy::Learnable;
            }
        }
    }
    out.name = format!("{}-scratch", spec.name);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScratchReport {
    /// Threshold units per sample in the LIFB network.
    pub lifb_units: usize,
    /// Threshold units per sample after decoupling (two per LIFB unit).
    pub pair_units: usize,
    pub param_count: usize,
}

/// Freshly initialized decoupled network for training from scratch.
pub fn decouple_scratch_baseline(spec: &NetworkSpec, seed: u64) -> Result<(Network, ScratchReport)> {
    let shapes = spec.layer_shapes()?;
    let lifb_units: usize = spec
        .neuron_layers()
        .filter(|&(_, k)| k == NeuronKind::Lifb)
        .map(|(i, _)| shapes[i].iter().product::<usize>())
        .sum();
    let mut net = Network::new(scratch_spec(spec), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let param_count = net.param_count();
    Ok((
        net,
        ScratchReport {
            lifb_units,
            pair_units: 2 * lifb_units,
            param_count,
        },
    ))
}
