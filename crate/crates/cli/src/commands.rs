use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use lifb::capacity::{capacity_curve, write_csv, CapacityReport, ExactPolicy};
use lifb::checkpoint::Checkpoint;
use lifb::data::{random_inputs, LabeledDataset};
use lifb::decouple::{decouple_network, verify_equivalence};
use lifb::graph::{select_neurons, ForwardOptions, Network};
use lifb::io::write_atomic;
use lifb::ode::{burst_stats, simulate as ode_simulate, OdeParams};
use lifb::svg;
use lifb::train::{ablation_suite, evaluate, kappa_snapshot, write_metrics_csv, AblationConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{Common, ModelFlags};

/// Config file, then `--set` overrides, then dedicated flags.
fn resolve(common: &Common, model: &ModelFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_overrides(&common.set)?;
    let mut put = |key: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
        Ok(())
    };
    put("out_dir", common.out.as_ref().map(|p| p.display().to_string()))?;
    put("seed", common.seed.map(|v| v.to_string()))?;
    put("arch", model.arch.clone())?;
    put("neuron", model.neuron.clone())?;
    put("timesteps", model.timesteps.map(|v| v.to_string()))?;
    put("kappa", model.kappa.clone())?;
    put("epochs", model.epochs.map(|v| v.to_string()))?;
    put("lr", model.lr.map(|v| v.to_string()))?;
    put("data", model.data.clone())?;
    put("data_dir", model.data_dir.as_ref().map(|p| p.display().to_string()))?;
    put("train_limit", model.train_limit.map(|v| v.to_string()))?;
    put("val_limit", model.val_limit.map(|v| v.to_string()))?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> lifb::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn checkpoint_data(ckpt: &Checkpoint) -> Result<(LabeledDataset, LabeledDataset)> {
    let data = ckpt
        .data
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint does not record its dataset"))?;
    Ok(data.load()?)
}

fn save_run(dir: &Path, name: &str, net: &Network, trainer: &Trainer, cfg: &RunConfig, ckpt_data: &lifb::data::DatasetSource) -> Result<()> {
    let mut ckpt = Checkpoint::from_network(net, Some(trainer));
    ckpt.data = Some(ckpt_data.clone());
    ckpt.run_config = cfg.snapshot();
    ckpt.save(&dir.join(name)).with_context(|| format!("saving {name}"))
}

pub fn train(common: &Common, model: &ModelFlags, resume: Option<&Path>) -> Result<()> {
    let (cfg, mut net, mut trainer, data) = match resume {
        None => {
            let cfg = resolve(common, model)?;
            let data = cfg.dataset()?;
            let (train_ds, _) = data.load()?;
            let spec = cfg.arch()?.build(
                train_ds.sample_shape(),
                train_ds.classes,
                cfg.get("timesteps")?,
                cfg.neuron()?,
                cfg.neuron_params()?,
                cfg.kappa_policy()?,
            )?;
            let mut net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(cfg.get("seed")?))?;
            let trainer = Trainer::new(&mut net, cfg.train_config()?)?;
            (cfg, net, trainer, data)
        }
        Some(path) => {
            let changed = [
                model.arch.is_some(),
                model.neuron.is_some(),
                model.timesteps.is_some(),
                model.kappa.is_some(),
                model.lr.is_some(),
                model.data.is_some(),
                model.data_dir.is_some(),
                model.train_limit.is_some(),
                model.val_limit.is_some(),
                common.seed.is_some(),
                common.config.is_some(),
                !common.set.is_empty(),
            ];
            if changed.iter().any(|&c| c) {
                bail!("--resume continues the stored run; only --epochs and --out may change");
            }
            let ckpt = load_checkpoint(path)?;
            let mut cfg = RunConfig::default();
            for (k, v) in &ckpt.run_config {
                cfg.set(k, v)?;
            }
            if let Some(out) = &common.out {
                cfg.set("out_dir", out.display())?;
            }
            let mut trainer = ckpt
                .trainer()
                .ok_or_else(|| anyhow!("checkpoint {} holds no training state", path.display()))?;
            if let Some(e) = model.epochs {
                cfg.set("epochs", e)?;
                trainer.config.epochs = e;
            }
            let data = ckpt
                .data
                .clone()
                .ok_or_else(|| anyhow!("checkpoint does not record its dataset"))?;
            (cfg, ckpt.network()?, trainer, data)
        }
    };
    let (train_ds, val_ds) = data.load()?;
    let dir = cfg.out_dir()?;
    create_dir(&dir)?;
    write_file(&dir.join("config.resolved"), cfg.resolved().as_bytes())?;
    let params = net.param_count();
    println!(
        "training {} ({params} parameters) on {} samples, validating on {}",
        net.spec().name,
        train_ds.len(),
        val_ds.len()
    );
    while trainer.epoch < trainer.config.epochs {
        let next = trainer.epoch + 1;
        trainer.fit_until(&mut net, &train_ds, Some(&val_ds), next)?;
        if let Some(v) = trainer.last_val() {
            println!("epoch {} val loss {:.4} acc {:.4}", v.epoch, v.loss, v.acc);
        }
        save_run(&dir, "final.ckpt", &net, &trainer, &cfg, &data)?;
        write_file(
            &dir.join("metrics.csv"),
            &csv_bytes(|b| write_metrics_csv(&trainer.history, b))?,
        )?;
    }
    if let Some(best) = trainer.best_state.clone() {
        let mut best_net = net.clone();
        best_net.load_state_dict(&best)?;
        save_run(&dir, "best.ckpt", &best_net, &trainer, &cfg, &data)?;
    } else if !dir.join("best.ckpt").exists() {
        save_run(&dir, "best.ckpt", &net, &trainer, &cfg, &data)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, split: &str, timesteps: Option<usize>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut net = ckpt.network()?;
    if let Some(t) = timesteps {
        net.set_timesteps(t)?;
    }
    let (train_ds, val_ds) = checkpoint_data(&ckpt)?;
    let ds = match split {
        "val" => &val_ds,
        "train" => &train_ds,
        other => bail!("unknown split {other:?} (val, train)"),
    };
    let batch = ckpt.train_config.as_ref().map_or(256, |c| c.eval_batch);
    let m = evaluate(&mut net, ds, batch)?;
    println!(
        "{split}: accuracy {:.4} ({}/{}) loss {:.4} T={}",
        m.accuracy,
        m.correct,
        m.total,
        m.loss,
        net.timesteps()
    );
    for f in &m.firing {
        println!(
            "  layer {}: rest {:.4} regular {:.4} burst {:.4}",
            f.layer, f.rest, f.regular, f.burst
        );
    }
    Ok(())
}

pub fn ablate(
    common: &Common,
    model: &ModelFlags,
    variants: Option<String>,
    t_list: Option<String>,
    seeds: Option<String>,
) -> Result<()> {
    let mut cfg = resolve(common, model)?;
    if let Some(v) = variants {
        cfg.set("variants", v)?;
    }
    if let Some(t) = t_list {
        cfg.set("ablate_timesteps", t)?;
    }
    if let Some(s) = seeds {
        cfg.set("seeds", s)?;
    }
    let ab = AblationConfig {
        arch: cfg.arch()?,
        data: cfg.dataset()?,
        variants: cfg.variants()?,
        timesteps: cfg.list("ablate_timesteps")?,
        seeds: cfg.list("seeds")?,
        params: cfg.neuron_params()?,
        train: cfg.train_config()?,
    };
    if ab.variants.is_empty() || ab.timesteps.is_empty() || ab.seeds.is_empty() {
        bail!("ablation needs at least one variant, one T and one seed");
    }
    let dir = cfg.out_dir()?;
    create_dir(&dir)?;
    write_file(&dir.join("config.resolved"), cfg.resolved().as_bytes())?;
    let report = ablation_suite(&ab)?;
    let table = csv_bytes(|b| report.write_table_csv(b))?;
    write_file(&dir.join("table.csv"), &table)?;
    write_file(&dir.join("runs.csv"), &csv_bytes(|b| report.write_runs_csv(b))?)?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}

pub struct CapacityArgs {
    pub tmax: usize,
    pub n: Vec<usize>,
    pub kappa: f64,
    pub from_checkpoint: Option<PathBuf>,
    pub allow_large: bool,
    pub require_exact: bool,
    pub out: Option<PathBuf>,
    pub svg: bool,
}

fn checkpoint_kappa(path: &Path) -> Result<f64> {
    let net = load_checkpoint(path)?.network()?;
    let all: Vec<f64> = kappa_snapshot(&net).into_iter().flat_map(|(_, k)| k).collect();
    if all.is_empty() {
        bail!("checkpoint {} has no burst-capable layers", path.display());
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

fn capacity_chart(rows: &[CapacityReport], kappa: f64) -> String {
    let mut series = Vec::new();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    for n in ns {
        let of_n = || rows.iter().filter(move |r| r.n == n);
        series.push(svg::Series {
            name: format!("bound, n={n}"),
            points: of_n().map(|r| (r.t as f64, r.bound)).collect(),
            dashed: true,
        });
        let exact: Vec<(f64, f64)> = of_n().filter_map(|r| r.exact_capacity.map(|c| (r.t as f64, c))).collect();
        if !exact.is_empty() {
            series.push(svg::Series {
                name: format!("exact, n={n}"),
                points: exact,
                dashed: false,
            });
        }
    }
    svg::line_chart(
        &format!("Capacity, burst alphabet with kappa = {kappa:.3}"),
        "T",
        "log2 #threshold functions",
        &series,
    )
}

pub fn capacity(args: CapacityArgs) -> Result<()> {
    if args.tmax == 0 || args.n.is_empty() {
        bail!("--tmax must be positive and --n non-empty");
    }
    let kappa = match &args.from_checkpoint {
        Some(p) => checkpoint_kappa(p)?,
        None => args.kappa,
    };
    let policy = match (args.require_exact, args.allow_large) {
        (_, true) => ExactPolicy::Large,
        (true, false) => ExactPolicy::Require,
        _ => ExactPolicy::WithinBudget,
    };
    let rows = capacity_curve(args.tmax, &args.n, kappa, policy)?;
    let table = csv_bytes(|b| write_csv(&rows, b))?;
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("capacity.csv"), &table)?;
            if args.svg {
                write_file(&dir.join("capacity.svg"), capacity_chart(&rows, kappa).as_bytes())?;
            }
            println!("kappa {kappa}: {} rows written to {}", rows.len(), dir.display());
        }
        None => {
            if args.svg {
                bail!("--svg needs --out");
            }
            print!("{}", String::from_utf8_lossy(&table));
        }
    }
    for r in rows.iter().filter(|r| !r.satisfied) {
        log::warn!(
            "T={} n={}: exact capacity {:.3} exceeds the bound {:.3}",
            r.t,
            r.n,
            r.exact_capacity.unwrap_or(f64::NAN),
            r.bound
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Input current amplitude after onset.
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub current: f64,
    /// Time at which the current step switches on.
    #[arg(long, default_value_t = 0.0)]
    pub onset: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Number of leading ISIs treated as the burst.
    #[arg(long, default_value_t = 3)]
    pub cluster: usize,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub v_th: Option<f64>,
    #[arg(long)]
    pub v_rst: Option<f64>,
    #[arg(long)]
    pub v_h: Option<f64>,
    /// T-current conductance; 0 gives a plain LIF neuron.
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub v_t: Option<f64>,
    #[arg(long)]
    pub tau_plus: Option<f64>,
    #[arg(long)]
    pub tau_minus: Option<f64>,
    #[arg(long)]
    pub h0: Option<f64>,
    /// Write trace.csv and trace.svg here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let d = OdeParams::default();
    let p = OdeParams {
        tau: a.tau.unwrap_or(d.tau),
        v_th: a.v_th.unwrap_or(d.v_th),
        v_rst: a.v_rst.unwrap_or(d.v_rst),
        v_h: a.v_h.unwrap_or(d.v_h),
        g: a.g.unwrap_or(d.g),
        v_t: a.v_t.unwrap_or(d.v_t),
        tau_plus: a.tau_plus.unwrap_or(d.tau_plus),
        tau_minus: a.tau_minus.unwrap_or(d.tau_minus),
        h0: a.h0.unwrap_or(d.h0),
    };
    let current: Vec<f64> = (0..a.steps)
        .map(|k| if k as f64 * a.dt >= a.onset { a.current } else { 0.0 })
        .collect();
    let trace = ode_simulate(&current, &p, a.dt, a.steps)?;
    let times = trace.spike_times();
    println!("spikes {}", times.len());
    match burst_stats(&trace, a.cluster) {
        Some(s) => println!(
            "initial mean ISI {:.4} tail mean ISI {:.4} ratio {:.4} tail CV {:.4}",
            s.initial_mean_isi, s.tail_mean_isi, s.ratio, s.tail_cv
        ),
        None => println!("too few spikes for burst statistics"),
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let mut csv = String::from("t,current,v,h,spike\n");
        let mut spikes = trace.spike_steps.iter().peekable();
        for k in 0..a.steps {
            let spike = spikes.next_if(|&&s| s == k).is_some();
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                (k + 1) as f64 * a.dt,
                current[k],
                trace.v[k],
                trace.h[k],
                u8::from(spike)
            );
        }
        write_file(&dir.join("trace.csv"), csv.as_bytes())?;
        let chart = svg::trace("Burst neuron under a current step", a.dt, &trace.v, &trace.h, &times, p.v_th);
        write_file(&dir.join("trace.svg"), chart.as_bytes())?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

pub fn decouple(checkpoint: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (net, report) = decouple_network(&ckpt.network()?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut converted = Checkpoint::from_network(&net, None);
    converted.data = ckpt.data.clone();
    converted.history = ckpt.history.clone();
    converted.run_config = ckpt.run_config.clone();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    converted.save(out).with_context(|| format!("saving {}", out.display()))?;
    println!(
        "converted layers {:?}; {} inexact channels; wrote {}",
        report.converted_layers,
        report.inexact_channels.len(),
        out.display()
    );
    Ok(())
}

/// Returned when decoupled and original networks disagree.
#[derive(Debug)]
pub struct VerifyFailed;

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("decoupled network is not equivalent")
    }
}

impl std::error::Error for VerifyFailed {}

pub fn verify(checkpoint: &Path, decoupled: Option<&Path>, inputs: usize, t_list: &[usize], seed: u64) -> Result<()> {
    if inputs == 0 || t_list.is_empty() {
        bail!("need at least one input and one T");
    }
    let original = load_checkpoint(checkpoint)?.network()?;
    let other = match decoupled {
        Some(p) => load_checkpoint(p)?.network()?,
        None => {
            let (net, report) = decouple_network(&original)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            net
        }
    };
    let x = random_inputs(inputs, &original.spec().input_shape, seed)?;
    let mut ok = true;
    for &t in t_list {
        let r = verify_equivalence(&original, &other, &x, t)?;
        let layers: Vec<String> = r.layer_deviation.iter().map(|(l, d)| format!("L{l}={d:e}")).collect();
        println!(
            "T={t}: max logit deviation {:e}; emissions {}: {}",
            r.max_logit_deviation,
            layers.join(" "),
            if r.passed { "PASS" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    if !ok {
        return Err(VerifyFailed.into());
    }
    println!("PASS");
    Ok(())
}

pub fn raster(checkpoint: &Path, layers: &[usize], neurons: usize, samples: usize, seed: u64, out: &Path) -> Result<()> {
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let mut net = ckpt.network()?;
    let (_, val_ds) = checkpoint_data(&ckpt)?;
    let idx: Vec<usize> = (0..samples.min(val_ds.len())).collect();
    let (x, _) = val_ds.batch(&idx);
    let opts = ForwardOptions {
        record_raster: true,
        ..ForwardOptions::inference()
    };
    let rec = net.forward(&x, opts)?.raster.expect("raster requested");
    let count = rec.layers.len();
    let chosen: Vec<usize> = if layers.is_empty() { (0..count).collect() } else { layers.to_vec() };
    if let Some(&bad) = chosen.iter().find(|&&l| l >= count) {
        bail!("layer {bad} out of range; the network has {count} neuron layers (0..{})", count.saturating_sub(1));
    }
    let mut header = String::from("layer,kind,neuron,channel,kappa");
    let (t_len, batch) = (rec.layers[0].timesteps, rec.layers[0].batch);
    for b in 0..batch {
        for t in 0..t_len {
            let _ = write!(header, ",s{b}_t{t}");
        }
    }
    let mut csv = header + "\n";
    let mut rows = Vec::new();
    for &ord in &chosen {
        let lr = &rec.layers[ord];
        for n in select_neurons(lr.neurons, neurons, seed.wrapping_add(ord as u64)) {
            let ch = lr.channel_of(n);
            let kappa = lr.kappa.get(ch).copied().unwrap_or(f64::NAN);
            let _ = write!(csv, "{ord},{},{n},{ch},{kappa}", lr.kind.name());
            let mut codes = Vec::with_capacity(batch * t_len);
            for b in 0..batch {
                for t in 0..t_len {
                    let c = lr.code(t, b, n);
                    let _ = write!(csv, ",{c}");
                    codes.push(c);
                }
            }
            csv.push('\n');
            rows.push(svg::RasterRow {
                label: format!("L{ord} n{n}"),
                codes,
            });
        }
    }
    create_dir(out)?;
    write_file(&out.join("raster.csv"), csv.as_bytes())?;
    let title = format!("Spike raster, {samples} sample(s) x T={t_len}");
    write_file(&out.join("raster.svg"), svg::raster(&title, &rows).as_bytes())?;
    println!("{} neurons from {} layers written to {}", rows.len(), chosen.len(), out.display());
    Ok(())
}
