//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Command-line
//! flags override file values, and the merged result is written next to a
//! run's outputs as `config.resolved`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use lifb::data::DatasetSource;
use lifb::graph::Arch;
use lifb::neuron::{KappaPolicy, NeuronKind, NeuronParams};
use lifb::train::{TrainConfig, Variant};

/// Every key with its default; `None` means "no default" (optional).
const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("1")),
    ("arch", Some("snn6-small")),
    ("neuron", Some("lifb")),
    ("timesteps", Some("2")),
    ("kappa", Some("learnable")),
    ("tau", Some("2")),
    ("v_th", Some("0.5")),
    ("v_h", Some("1")),
    ("v_rst", Some("0")),
    ("surrogate_width", Some("0.5")),
    ("epochs", Some("4")),
    ("batch_size", Some("64")),
    ("eval_batch", Some("256")),
    ("lr", Some("0.05")),
    ("kappa_lr", None),
    ("momentum", Some("0.9")),
    ("kappa_momentum", Some("0.9")),
    ("weight_decay", Some("0.0005")),
    ("milestones", Some("0.5,0.75")),
    ("lr_decay", Some("0.1")),
    ("data", Some("mnist")),
    ("data_dir", Some("data/mnist-subset")),
    ("train_limit", Some("3000")),
    ("val_limit", Some("1000")),
    ("shrink_pad", Some("1")),
    ("synth_train", Some("200")),
    ("synth_val", Some("200")),
    ("synth_dim", Some("4")),
    ("synth_side", Some("8")),
    ("out_dir", Some("runs/out")),
    ("variants", Some("lif,lifb,lifb-fixed-0.5,lifb-fixed-1,lifb-fixed-1.5,lifb-fixed-2,posneg,decoupled-scratch")),
    ("ablate_timesteps", Some("1,2")),
    ("seeds", Some("1,2,3")),
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", n + 1))?;
            let k = k.trim().replace('-', "_");
            if !known(&k) {
                bail!("line {}: unknown key {k:?}", n + 1);
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let key = key.replace('-', "_");
        if !known(&key) {
            bail!("unknown config key {key:?}");
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned().or_else(|| {
            KEYS.iter()
                .find(|(k, _)| *k == key)
                .and_then(|(_, d)| d.map(str::to_string))
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| anyhow!("missing config key {key:?}"))?;
        raw.parse().map_err(|e| anyhow!("config key {key}: cannot parse {raw:?}: {e}"))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) if raw.is_empty() || raw == "none" => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).unwrap_or_default();
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("config key {key}: cannot parse {s:?}: {e}")))
            .collect()
    }

    /// All keys with defaults filled in, sorted, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for (k, d) in KEYS {
            if let Some(v) = self.values.get(*k).cloned().or_else(|| d.map(str::to_string)) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .filter_map(|(k, _)| self.raw(k).map(|v| (k.to_string(), v)))
            .collect()
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.get("out_dir")
    }

    pub fn neuron_params(&self) -> Result<NeuronParams> {
        Ok(NeuronParams {
            tau: self.get("tau")?,
            v_th: self.get("v_th")?,
            v_h: self.get("v_h")?,
            v_rst: self.get("v_rst")?,
            surrogate_width: self.get("surrogate_width")?,
        })
    }

    pub fn kappa_policy(&self) -> Result<KappaPolicy> {
        let raw = self.raw("kappa").unwrap_or_default();
        if raw == "learnable" {
            return Ok(KappaPolicy::Learnable);
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| anyhow!("kappa must be `learnable` or a number, got {raw:?}"))?;
        if !v.is_finite() {
            bail!("kappa must be finite");
        }
        Ok(KappaPolicy::Fixed(v))
    }

    pub fn neuron(&self) -> Result<NeuronKind> {
        self.get("neuron")
    }

    pub fn arch(&self) -> Result<Arch> {
        self.get("arch")
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.list("variants")
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            seed: self.get("seed")?,
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lr: self.get("lr")?,
            momentum: self.get("momentum")?,
            weight_decay: self.get("weight_decay")?,
            kappa_lr: self.get_opt("kappa_lr")?,
            kappa_momentum: self.get("kappa_momentum")?,
            milestones: self.list("milestones")?,
            lr_decay: self.get("lr_decay")?,
            shuffle: true,
            eval_batch: self.get("eval_batch")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset(&self) -> Result<DatasetSource> {
        let data: String = self.get("data")?;
        Ok(match data.as_str() {
            "mnist" | "idx" => {
                let dir: PathBuf = self.get("data_dir")?;
                if !dir.is_dir() {
                    bail!(
                        "dataset directory {} does not exist; set data_dir to a folder holding the four IDX files",
                        dir.display()
                    );
                }
                let shrink: usize = self.get("shrink_pad")?;
                DatasetSource::mnist_dir(
                    &dir,
                    self.get_opt("train_limit")?,
                    self.get_opt("val_limit")?,
                    // shrink_pad = 0 keeps the native resolution.
                    (shrink > 0).then_some(shrink),
                )
            }
            "gaussians" => DatasetSource::Gaussians {
                train: self.get("synth_train")?,
                val: self.get("synth_val")?,
                dim: self.get("synth_dim")?,
                seed: self.get("seed")?,
            },
            "bars" => DatasetSource::Bars {
                train: self.get("synth_train")?,
                val: self.get("synth_val")?,
                side: self.get("synth_side")?,
                seed: self.get("seed")?,
            },
            other => bail!("unknown data source {other:?} (mnist, gaussians, bars)"),
        })
    }
}
