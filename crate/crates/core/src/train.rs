//! Supervised training: momentum SGD for weights, the momentum rule for κ,
//! evaluation with firing statistics, and the ablation grid.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, DatasetSource, LabeledDataset};
use crate::decouple::scratch_spec;
use crate::error::{Error, Result};
use crate::graph::{cross_entropy_loss, Arch, ForwardOptions, Network, ParamRole, SpikeRaster};
use crate::neuron::{code, KappaPolicy, NeuronKind, NeuronParams};
use crate::tensor::Tensor;

/// One step of the κ rule: `Δκ ← μΔκ + εg`, then `κ ← κ − Δκ`.
pub fn kappa_update(kappa: &mut [f64], delta: &mut [f64], grad: &[f64], mu: f64, eps: f64) -> Result<()> {
    if kappa.len() != delta.len() || kappa.len() != grad.len() {
        return Err(Error::shape("kappa_update", &[kappa.len(), delta.len()], &[grad.len()]));
    }
    for ((k, d), g) in kappa.iter_mut().zip(delta.iter_mut()).zip(grad) {
        *d = mu * *d + eps * g;
        *k -= *d;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// L2 decay applied to conv/linear weight tensors only.
    pub weight_decay: f64,
    /// Learning rate for κ and pair readout weights; defaults to `lr`.
    pub kappa_lr: Option<f64>,
    pub kappa_momentum: f64,
    /// Fractions of `epochs` after which the learning rates are multiplied
    /// by `lr_decay`.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    pub shuffle: bool,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            epochs: 10,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            kappa_lr: None,
            kappa_momentum: 0.9,
            milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            shuffle: true,
            eval_batch: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.kappa_lr.is_some_and(|k| !(k >= 0.0 && k.is_finite())) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.kappa_momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }

    /// Learning-rate multiplier in effect during `epoch` (0-based).
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch as f64 >= (m * self.epochs as f64).round())
            .count();
        self.lr_decay.powi(passed as i32)
    }
}

/// Momentum buffers, one per trainable tensor in [`Network::params_mut`] order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub buffers: Vec<(String, Tensor)>,
}

impl OptimState {
    pub fn for_network(net: &mut Network) -> Self {
        OptimState {
            buffers: net
                .params_mut()
                .iter()
                .map(|p| (p.name.clone(), Tensor::zeros(p.param.value.shape())))
                .collect(),
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, net: &mut Network, cfg: &TrainConfig, scale: f64) -> Result<()> {
        let params = net.params_mut();
        if params.len() != self.buffers.len() {
            return Err(Error::Structure("optimizer state does not match the network".into()));
        }
        let lr = cfg.lr * scale;
        let kappa_lr = cfg.kappa_lr.unwrap_or(cfg.lr) * scale;
        for (p, (name, buf)) in params.into_iter().zip(&mut self.buffers) {
            if *name != p.name || buf.shape() != p.param.value.shape() {
                return Err(Error::Structure(format!("optimizer buffer {name} does not match {}", p.name)));
            }
            match p.role {
                ParamRole::Kappa | ParamRole::PairPrimary => kappa_update(
                    p.param.value.data_mut(),
                    buf.data_mut(),
                    p.param.grad.data(),
                    cfg.kappa_momentum,
                    kappa_lr,
                )?,
                role => {
                    let decay = if role == ParamRole::Weight { cfg.weight_decay } else { 0.0 };
                    let (w, g) = (p.param.value.data_mut(), p.param.grad.data());
                    for ((w, d), g) in w.iter_mut().zip(buf.data_mut()).zip(g) {
                        *d = cfg.momentum * *d + lr * (g + decay * *w);
                        *w -= *d;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rest/regular/burst counts of one neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFiring {
    pub layer: usize,
    pub rest: f64,
    pub regular: f64,
    pub burst: f64,
}

#[derive(Debug, Clone, Default)]
struct FiringCounter {
    counts: Vec<(usize, [u64; 3])>,
}

impl FiringCounter {
    fn add(&mut self, raster: &SpikeRaster) {
        if self.counts.is_empty() {
            self.counts = raster.layers.iter().map(|l| (l.layer, [0; 3])).collect();
        }
        for (l, (_, c)) in raster.layers.iter().zip(&mut self.counts) {
            for &code in &l.codes {
                c[match code {
                    code::REST => 0,
                    code::BURST => 2,
                    _ => 1,
                }] += 1;
            }
        }
    }

    fn fractions(&self) -> Vec<LayerFiring> {
        self.counts
            .iter()
            .map(|&(layer, c)| {
                let n = c.iter().sum::<u64>().max(1) as f64;
                LayerFiring {
                    layer,
                    rest: c[0] as f64 / n,
                    regular: c[1] as f64 / n,
                    burst: c[2] as f64 / n,
                }
            })
            .collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(logits.row(i)) == l)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub firing: Vec<LayerFiring>,
}

/// Inference-mode pass over `ds` at the network's current `T`. Running
/// statistics and parameters are left untouched.
pub fn evaluate(net: &mut Network, ds: &LabeledDataset, batch_size: usize) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let opts = ForwardOptions {
        record_raster: true,
        ..ForwardOptions::inference()
    };
    let mut firing = FiringCounter::default();
    let (mut loss_sum, mut correct) = (0.0, 0);
    for idx in batches(ds.len(), batch_size, 0, 0, false)? {
        let (x, y) = ds.batch(&idx);
        let out = net.forward(&x, opts)?;
        let (loss, _) = cross_entropy_loss(&out.logits, &y)?;
        loss_sum += loss * y.len() as f64;
        correct += count_correct(&out.logits, &y);
        firing.add(out.raster.as_ref().expect("raster requested"));
    }
    Ok(EvalMetrics {
        loss: loss_sum / ds.len() as f64,
        accuracy: correct as f64 / ds.len() as f64,
        correct,
        total: ds.len(),
        firing: firing.fractions(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train` or `val`.
    pub split: String,
    pub loss: f64,
    pub acc: f64,
    pub firing: Vec<LayerFiring>,
    /// `(layer, κ per channel)` at the end of the epoch.
    pub kappa: Vec<(usize, Vec<f64>)>,
}

pub fn kappa_snapshot(net: &Network) -> Vec<(usize, Vec<f64>)> {
    net.spec()
        .neuron_layers()
        .filter(|&(_, k)| matches!(k, NeuronKind::Lifb | NeuronKind::Pair))
        .map(|(i, k)| {
            let layer = net.spiking_layer(i).expect("neuron layer");
            // For a pair the effective burst emission is primary + burst.
            let kappa = match k {
                NeuronKind::Pair => layer
                    .primary
                    .value
                    .data()
                    .iter()
                    .zip(layer.kappa())
                    .map(|(a, b)| a + b)
                    .collect(),
                _ => layer.kappa().to_vec(),
            };
            (i, kappa)
        })
        .collect()
}

/// Writes the metric history as CSV: `epoch,split,loss,acc`, then
/// `L<i>_rest,L<i>_regular,L<i>_burst` per neuron layer, then one
/// `kappa_L<i>` column per burst-capable layer holding `;`-joined values.
pub fn write_metrics_csv<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let first = history.first();
    let mut header = vec!["epoch".to_string(), "split".into(), "loss".into(), "acc".into()];
    for f in first.map(|r| r.firing.as_slice()).unwrap_or_default() {
        for part in ["rest", "regular", "burst"] {
            header.push(format!("L{}_{part}", f.layer));
        }
    }
    for (layer, _) in first.map(|r| r.kappa.as_slice()).unwrap_or_default() {
        header.push(format!("kappa_L{layer}"));
    }
    out.write_record(&header).map_err(crate::capacity::csv_err)?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), r.split.clone(), r.loss.to_string(), r.acc.to_string()];
        for f in &r.firing {
            row.extend([f.rest.to_string(), f.regular.to_string(), f.burst.to_string()]);
        }
        for (_, k) in &r.kappa {
            row.push(k.iter().map(f64::to_string).collect::<Vec<_>>().join(";"));
        }
        out.write_record(&row).map_err(crate::capacity::csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Mutable training progress; everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optim: OptimState,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EpochRecord>,
    pub best_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_state: Option<Vec<(String, Tensor)>>,
}

fn non_finite(what: &str, epoch: usize, step: u64) -> Error {
    Error::NonFinite(format!(
        "{what} at epoch {epoch}, step {step}; lower the learning rate or check the input normalization"
    ))
}

impl Trainer {
    pub fn new(net: &mut Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optim: OptimState::for_network(net),
            config,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            best_val_acc: None,
            best_epoch: None,
            best_state: None,
        })
    }

    /// Trains one epoch and returns its train-split record.
    pub fn train_epoch(&mut self, net: &mut Network, ds: &LabeledDataset) -> Result<EpochRecord> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cfg = &self.config;
        let scale = cfg.lr_scale(self.epoch);
        let opts = ForwardOptions {
            record_raster: true,
            ..ForwardOptions::training()
        };
        let mut firing = FiringCounter::default();
        let (mut loss_sum, mut correct) = (0.0, 0);
        for idx in batches(ds.len(), cfg.batch_size, cfg.seed, self.epoch as u64, cfg.shuffle)? {
            let (x, y) = ds.batch(&idx);
            let out = net.forward(&x, opts)?;
            let (loss, grad) = cross_entropy_loss(&out.logits, &y)?;
            if !loss.is_finite() {
                net.clear_ctx();
                return Err(non_finite("loss is not finite", self.epoch, self.step));
            }
            net.zero_grad();
            net.backward(&grad)?;
            net.clear_ctx();
            if net.params_mut().iter().any(|p| !p.param.grad.is_finite()) {
                return Err(non_finite("gradient is not finite", self.epoch, self.step));
            }
            self.optim.step(net, cfg, scale)?;
            if net.params_mut().iter().any(|p| !p.param.value.is_finite()) {
                return Err(non_finite("parameter is not finite", self.epoch, self.step));
            }
            self.step += 1;
            loss_sum += loss * y.len() as f64;
            correct += count_correct(&out.logits, &y);
            firing.add(out.raster.as_ref().expect("raster requested"));
        }
        Ok(EpochRecord {
            epoch: self.epoch,
            split: "train".into(),
            loss: loss_sum / ds.len() as f64,
            acc: correct as f64 / ds.len() as f64,
            firing: firing.fractions(),
            kappa: kappa_snapshot(net),
        })
    }

    /// Runs the remaining epochs, evaluating on `val` after each one and
    /// keeping the parameters of the best validation epoch.
    pub fn fit(&mut self, net: &mut Network, train: &LabeledDataset, val: Option<&LabeledDataset>) -> Result<()> {
        self.fit_until(net, train, val, self.config.epochs)
    }

    /// Like [`Trainer::fit`] but stops once `stop` epochs are complete.
    pub fn fit_until(
        &mut self,
        net: &mut Network,
        train: &LabeledDataset,
        val: Option<&LabeledDataset>,
        stop: usize,
    ) -> Result<()> {
        while self.epoch < stop.min(self.config.epochs) {
            let rec = self.train_epoch(net, train)?;
            log::info!("epoch {} train loss {:.4} acc {:.4}", rec.epoch, rec.loss, rec.acc);
            self.history.push(rec);
            if let Some(val) = val {
                let m = evaluate(net, val, self.config.eval_batch)?;
                log::info!("epoch {} val loss {:.4} acc {:.4}", self.epoch, m.loss, m.accuracy);
                if self.best_val_acc.map_or(true, |b| m.accuracy > b) {
                    self.best_val_acc = Some(m.accuracy);
                    self.best_epoch = Some(self.epoch);
                    self.best_state = Some(net.state_dict());
                }
                self.history.push(EpochRecord {
                    epoch: self.epoch,
                    split: "val".into(),
                    loss: m.loss,
                    acc: m.accuracy,
                    firing: m.firing,
                    kappa: kappa_snapshot(net),
                });
            }
            self.epoch += 1;
        }
        Ok(())
    }

    pub fn last_val(&self) -> Option<&EpochRecord> {
        self.history.iter().rev().find(|r| r.split == "val")
    }
}

/// Convenience wrapper: fresh trainer, full run.
pub fn train(net: &mut Network, train: &LabeledDataset, val: Option<&LabeledDataset>, config: &TrainConfig) -> Result<Trainer> {
    let mut trainer = Trainer::new(net, config.clone())?;
    trainer.fit(net, train, val)?;
    Ok(trainer)
}

// ---------------------------------------------------------------- ablation

/// Neuron variant of one ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant", content = "kappa")]
pub enum Variant {
    Lif,
    Lifb,
    LifbFixed(f64),
    PosNeg,
    DecoupledScratch,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Lif => "lif".into(),
            Variant::Lifb => "lifb-learnable".into(),
            Variant::LifbFixed(k) => format!("lifb-fixed-{k}"),
            Variant::PosNeg => "posneg".into(),
            Variant::DecoupledScratch => "decoupled-scratch".into(),
        }
    }

    /// Neuron family column of the report.
    pub fn neuron(&self) -> &'static str {
        match self {
            Variant::Lif => "lif",
            Variant::Lifb | Variant::LifbFixed(_) => "lifb",
            Variant::PosNeg => "posneg",
            Variant::DecoupledScratch => "decoupled",
        }
    }

    /// Full grid: every neuron family plus fixed κ in {0.5, 1, 1.5, 2}.
    pub fn all() -> Vec<Variant> {
        vec![
            Variant::Lif,
            Variant::Lifb,
            Variant::LifbFixed(0.5),
            Variant::LifbFixed(1.0),
            Variant::LifbFixed(1.5),
            Variant::LifbFixed(2.0),
            Variant::PosNeg,
            Variant::DecoupledScratch,
        ]
    }

    /// Network for this variant, initialized from `seed`. Every variant
    /// draws the same weights for a given seed.
    pub fn build_with_seed(
        &self,
        arch: Arch,
        input_shape: &[usize],
        classes: usize,
        t: usize,
        params: NeuronParams,
        seed: u64,
    ) -> Result<Network> {
        let (kind, policy) = match *self {
            Variant::Lif => (NeuronKind::Lif, KappaPolicy::Learnable),
            Variant::Lifb | Variant::DecoupledScratch => (NeuronKind::Lifb, KappaPolicy::Learnable),
            Variant::LifbFixed(k) => (NeuronKind::Lifb, KappaPolicy::Fixed(k)),
            Variant::PosNeg => (NeuronKind::PosNeg, KappaPolicy::Learnable),
        };
        let mut spec = arch.build(input_shape, classes, t, kind, params, policy)?;
        if *self == Variant::DecoupledScratch {
            spec = scratch_spec(&spec);
        }
        Network::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lif" => Variant::Lif,
            "lifb" | "lifb-learnable" => Variant::Lifb,
            "posneg" => Variant::PosNeg,
            "decoupled-scratch" | "scratch" => Variant::DecoupledScratch,
            _ => match s.strip_prefix("lifb-fixed-").map(str::parse::<f64>) {
                Some(Ok(k)) if k.is_finite() => Variant::LifbFixed(k),
                _ => {
                    return Err(Error::InvalidParam(format!(
                        "unknown variant {s:?} (lif, lifb, lifb-fixed-<κ>, posneg, decoupled-scratch)"
                    )))
                }
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub arch: Arch,
    pub data: DatasetSource,
    pub variants: Vec<Variant>,
    pub timesteps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub params: NeuronParams,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub timesteps: usize,
    pub seed: u64,
    pub final_val_acc: f64,
    pub best_val_acc: f64,
    pub final_train_loss: f64,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<RunRecord>,
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pooled standard deviation of two equally sized groups.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (_, sa) = mean_std(a);
    let (_, sb) = mean_std(b);
    ((sa * sa + sb * sb) / 2.0).sqrt()
}

impl AblationReport {
    /// Final validation accuracies of `variant`, over seeds, at `t` (all T if `None`).
    pub fn accuracies(&self, variant: Variant, t: Option<usize>) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant && t.map_or(true, |t| r.timesteps == t))
            .map(|r| r.final_val_acc)
            .collect()
    }

    fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant);
            }
        }
        out
    }

    fn timesteps(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.runs.iter().map(|r| r.timesteps).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// One row per variant, one `T=<t>` column per timestep count, each
    /// cell `mean±std` of accuracy in percent.
    pub fn write_table_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let ts = self.timesteps();
        let mut header = vec!["neuron".to_string(), "variant".into()];
        header.extend(ts.iter().map(|t| format!("T={t}")));
        out.write_record(&header).map_err(crate::capacity::csv_err)?;
        for v in self.variants() {
            let mut row = vec![v.neuron().to_string(), v.label()];
            for &t in &ts {
                let (m, s) = mean_std(&self.accuracies(v, Some(t)));
                row.push(format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s));
            }
            out.write_record(&row).map_err(crate::capacity::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per training run.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "variant",
            "timesteps",
            "seed",
            "final_val_acc",
            "best_val_acc",
            "final_train_loss",
            "param_count",
        ])
        .map_err(crate::capacity::csv_err)?;
        for r in &self.runs {
            out.write_record([
                r.variant.label(),
                r.timesteps.to_string(),
                r.seed.to_string(),
                r.final_val_acc.to_string(),
                r.best_val_acc.to_string(),
                r.final_train_loss.to_string(),
                r.param_count.to_string(),
            ])
            .map_err(crate::capacity::csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains every (variant, T, seed) cell on the configured data. For a given
/// seed all variants share initialization and batch order.
pub fn ablation_suite(cfg: &AblationConfig) -> Result<AblationReport> {
    let (train_ds, val_ds) = cfg.data.load()?;
    ablation_on(cfg, &train_ds, &val_ds)
}

pub fn ablation_on(cfg: &AblationConfig, train_ds: &LabeledDataset, val_ds: &LabeledDataset) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &t in &cfg.timesteps {
        for &variant in &cfg.variants {
            for &seed in &cfg.seeds {
                let mut net =
                    variant.build_with_seed(cfg.arch, train_ds.sample_shape(), train_ds.classes, t, cfg.params, seed)?;
                let tc = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let trainer = train(&mut net, train_ds, Some(val_ds), &tc)?;
                let last_train = trainer.history.iter().rev().find(|r| r.split == "train");
                let rec = RunRecord {
                    variant,
                    timesteps: t,
                    seed,
                    final_val_acc: trainer.last_val().map_or(f64::NAN, |r| r.acc),
                    best_val_acc: trainer.best_val_acc.unwrap_or(f64::NAN),
                    final_train_loss: last_train.map_or(f64::NAN, |r| r.loss),
                    param_count: net.param_count(),
                };
                log::info!(
                    "ablation {} T={t} seed={seed}: val acc {:.4}",
                    variant.label(),
                    rec.final_val_acc
                );
                report.runs.push(rec);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;
    use crate::graph::mlp_snn;

    #[test]
    fn kappa_rule_hand_iteration() {
        let (mut k, mut d) = (vec![1.0], vec![0.0]);
        kappa_update(&mut k, &mut d, &[1.0], 0.9, 0.1).unwrap();
        assert_eq!(d, vec![0.1]);
        assert_eq!(k, vec![0.9]);
        kappa_update(&mut k, &mut d, &[1.0], 0.9, 0.1).unwrap();
        assert_eq!(d[0], 0.9 * 0.1 + 0.1);
        assert!((d[0] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn kappa_rule_decays_without_gradient() {
        let (mut k, mut d) = (vec![1.0], vec![0.5]);
        let mut prev = d[0];
        for _ in 0..200 {
            kappa_update(&mut k, &mut d, &[0.0], 0.9, 0.1).unwrap();
            assert_eq!(d[0], 0.9 * prev);
            prev = d[0];
        }
        // Total travel is 0.5 * 0.9 / (1 - 0.9).
        assert!((k[0] - (1.0 - 4.5)).abs() < 1e-8);
    }

    #[test]
    fn lr_schedule_steps_at_milestones() {
        let cfg = TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        };
        let s: Vec<f64> = (0..8).map(|e| cfg.lr_scale(e)).collect();
        assert_eq!(s[..4], [1.0; 4]);
        assert!((s[4] - 0.1).abs() < 1e-15 && (s[5] - 0.1).abs() < 1e-15);
        assert!((s[6] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn kappa_gets_no_weight_decay() {
        let spec = mlp_snn(&[2], 3, 2, 2, NeuronKind::Lifb, NeuronParams::default(), KappaPolicy::Learnable).unwrap();
        let mut net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig {
            weight_decay: 0.5,
            lr: 0.1,
            ..TrainConfig::default()
        };
        let mut opt = OptimState::for_network(&mut net);
        let before = net.state_dict();
        net.zero_grad();
        opt.step(&mut net, &cfg, 1.0).unwrap();
        let after = net.state_dict();
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.ends_with("kappa") {
                assert_eq!(a, b, "{name} moved");
            }
            if name.ends_with("weight") {
                assert_ne!(a, b, "{name} did not decay");
            }
        }
    }

    fn gaussian_task() -> (LabeledDataset, LabeledDataset) {
        DatasetSource::Gaussians {
            train: 200,
            val: 200,
            dim: 4,
            seed: 5,
        }
        .load()
        .unwrap()
    }

    fn mlp(kind: NeuronKind, kappa: KappaPolicy, seed: u64) -> Network {
        let spec = mlp_snn(&[4], 16, 2, 2, kind, NeuronParams::default(), kappa).unwrap();
        Network::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn gaussian_task_is_learned() {
        let (tr, va) = gaussian_task();
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 3);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let t = train(&mut net, &tr, Some(&va), &cfg).unwrap();
        let acc = t.last_val().unwrap().acc;
        assert!(acc > 0.95, "val acc {acc}");
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (tr, _) = gaussian_task();
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 3);
        let before = net.flat_params();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..TrainConfig::default()
        };
        train(&mut net, &tr, None, &cfg).unwrap();
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let (tr, va) = gaussian_task();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 9);
            train(&mut net, &tr, Some(&va), &cfg).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn frozen_unit_kappa_follows_lif_trajectory() {
        let (tr, va) = gaussian_task();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut lif = mlp(NeuronKind::Lif, KappaPolicy::Learnable, 4);
        let mut lifb = mlp(NeuronKind::Lifb, KappaPolicy::Fixed(1.0), 4);
        let a = train(&mut lif, &tr, Some(&va), &cfg).unwrap();
        let b = train(&mut lifb, &tr, Some(&va), &cfg).unwrap();
        assert_eq!(lif.flat_params(), lifb.flat_params());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!((ra.loss, ra.acc), (rb.loss, rb.acc));
        }
    }

    #[test]
    fn evaluation_is_side_effect_free_and_fractions_sum() {
        let (tr, va) = gaussian_task();
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 2);
        train(
            &mut net,
            &tr,
            None,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let a = evaluate(&mut net, &va, 64).unwrap();
        let b = evaluate(&mut net, &va, 64).unwrap();
        assert_eq!(a, b);
        for f in &a.firing {
            assert!((f.rest + f.regular + f.burst - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_input_rests() {
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 2);
        let mut state = net.state_dict();
        for (name, t) in &mut state {
            if name.ends_with("bias") || name.ends_with("beta") {
                *t = Tensor::zeros(t.shape());
            }
        }
        net.load_state_dict(&state).unwrap();
        let ds = LabeledDataset::new(Tensor::zeros(&[8, 4]), vec![0; 8], 2, crate::data::Split::Val).unwrap();
        let m = evaluate(&mut net, &ds, 4).unwrap();
        assert!(m.firing.iter().all(|f| f.rest == 1.0));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = synth_gaussians(4, 4, 1).unwrap().take(0);
        let mut net = mlp(NeuronKind::Lif, KappaPolicy::Learnable, 2);
        assert!(matches!(evaluate(&mut net, &ds, 4), Err(Error::EmptyDataset)));
        assert!(matches!(
            train(&mut net, &ds, None, &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn diverging_run_aborts() {
        let (tr, _) = gaussian_task();
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 2);
        let cfg = TrainConfig {
            lr: 1e200,
            epochs: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut net, &tr, None, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn metrics_csv_has_header_and_rows() {
        let (tr, va) = gaussian_task();
        let mut net = mlp(NeuronKind::Lifb, KappaPolicy::Learnable, 2);
        let t = train(
            &mut net,
            &tr,
            Some(&va),
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&t.history, &mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(&buf[..]);
        let h = rd.headers().unwrap().clone();
        assert_eq!(&h[0], "epoch");
        assert!(h.iter().any(|c| c == "kappa_L2"));
        assert_eq!(rd.records().count(), 4);
    }

    #[test]
    fn variants_parse_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn ablation_table_shape() {
        let (tr, va) = gaussian_task();
        let cfg = AblationConfig {
            arch: Arch::Mlp { hidden: 8 },
            data: DatasetSource::Gaussians {
                train: 0,
                val: 0,
                dim: 4,
                seed: 0,
            },
            variants: vec![Variant::Lif, Variant::LifbFixed(1.0), Variant::Lifb],
            timesteps: vec![1, 2],
            seeds: vec![1, 2],
            params: NeuronParams::default(),
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        };
        let rep = ablation_on(&cfg, &tr.take(64), &va.take(64)).unwrap();
        assert_eq!(rep.runs.len(), 12);
        // Frozen κ = 1 follows the LIF trajectory exactly.
        assert_eq!(rep.accuracies(Variant::Lif, None), rep.accuracies(Variant::LifbFixed(1.0), None));
        let mut buf = Vec::new();
        rep.write_table_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "neuron,variant,T=1,T=2");
        assert_eq!(lines.len(), 4);
    }
}
