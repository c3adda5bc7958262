//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LIFBCKPT"
//! version  u32
//! meta     u64 length + UTF-8 JSON (spec, counters, history, run config)
//! count    u32
//! records  count x { group u8 (0 network, 1 optimizer), name u32 length +
//!                    UTF-8, rank u32, dims rank x u64, data numel x f64 }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSource;
use crate::error::{Error, Result};
use crate::graph::{Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::{EpochRecord, OptimState, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"LIFBCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    spec: NetworkSpec,
    train_config: Option<TrainConfig>,
    epoch: usize,
    step: u64,
    best_val_acc: Option<f64>,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
    data: Option<DatasetSource>,
    run_config: BTreeMap<String, String>,
}

/// Everything needed to rebuild a network and resume its training. Batch
/// order is a pure function of `(train_config.seed, epoch)`, so the
/// counters double as the RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub state: Vec<(String, Tensor)>,
    pub optimizer: Vec<(String, Tensor)>,
    pub train_config: Option<TrainConfig>,
    pub epoch: usize,
    pub step: u64,
    pub best_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub data: Option<DatasetSource>,
    pub run_config: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, trainer: Option<&Trainer>) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            state: net.state_dict(),
            optimizer: trainer.map(|t| t.optim.buffers.clone()).unwrap_or_default(),
            train_config: trainer.map(|t| t.config.clone()),
            epoch: trainer.map_or(0, |t| t.epoch),
            step: trainer.map_or(0, |t| t.step),
            best_val_acc: trainer.and_then(|t| t.best_val_acc),
            best_epoch: trainer.and_then(|t| t.best_epoch),
            history: trainer.map(|t| t.history.clone()).unwrap_or_default(),
            data: None,
            run_config: BTreeMap::new(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        let mut net = Network::new(self.spec.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        net.load_state_dict(&self.state)?;
        Ok(net)
    }

    /// Trainer positioned where the checkpoint left off, if one was saved.
    pub fn trainer(&self) -> Option<Trainer> {
        let config = self.train_config.clone()?;
        Some(Trainer {
            config,
            optim: OptimState {
                buffers: self.optimizer.clone(),
            },
            epoch: self.epoch,
            step: self.step,
            history: self.history.clone(),
            best_val_acc: self.best_val_acc,
            best_epoch: self.best_epoch,
            best_state: None,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Meta {
            spec: self.spec.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            step: self.step,
            best_val_acc: self.best_val_acc,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            data: self.data.clone(),
            run_config: self.run_config.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let records: Vec<(u8, &(String, Tensor))> = self
            .state
            .iter()
            .map(|r| (0, r))
            .chain(self.optimizer.iter().map(|r| (1, r)))
            .collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (group, (name, t)) in records {
            out.push(group);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let meta_len = r.u64()?;
        let meta_len = r.len(meta_len)?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()?;
        let (mut state, mut optimizer) = (Vec::new(), Vec::new());
        for _ in 0..count {
            let group = r.take(1)?[0];
            let name_len = u64::from(r.u32()?);
            let name_len = r.len(name_len)?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().and_then(|d| r.len(d))).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::format("checkpoint", format!("tensor {name} overruns the file")))?;
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(dims, data)?;
            match group {
                0 => state.push((name, t)),
                1 => optimizer.push((name, t)),
                g => return Err(Error::format("checkpoint", format!("unknown record group {g}"))),
            }
        }
        if r.remaining() != 0 {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint {
            spec: meta.spec,
            state,
            optimizer,
            train_config: meta.train_config,
            epoch: meta.epoch,
            step: meta.step,
            best_val_acc: meta.best_val_acc,
            best_epoch: meta.best_epoch,
            history: meta.history,
            data: meta.data,
            run_config: meta.run_config,
        })
    }

    /// Atomic write (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format("checkpoint", "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&self, v: u64) -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.remaining())
            .ok_or_else(|| Error::format("checkpoint", "length field overruns the file"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetSource;
    use crate::graph::{mlp_snn, ForwardOptions};
    use crate::neuron::{KappaPolicy, NeuronKind, NeuronParams};
    use crate::train::train;

    fn trained() -> (Network, Trainer, Tensor) {
        let (tr, va) = DatasetSource::Gaussians {
            train: 64,
            val: 32,
            dim: 3,
            seed: 1,
        }
        .load()
        .unwrap();
        let spec = mlp_snn(&[3], 6, 2, 3, NeuronKind::Lifb, NeuronParams::default(), KappaPolicy::Learnable).unwrap();
        let mut net = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let t = train(&mut net, &tr, Some(&va), &cfg).unwrap();
        (net, t, va.images)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut net, t, x) = trained();
        let ckpt = Checkpoint::from_network(&net, Some(&t));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut net2 = back.network().unwrap();
        let a = net.forward(&x, ForwardOptions::inference()).unwrap().logits;
        let b = net2.forward(&x, ForwardOptions::inference()).unwrap().logits;
        assert_eq!(a.data(), b.data());
        assert_eq!(back.trainer().unwrap().optim, t.optim);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (net, t, _) = trained();
        let bytes = Checkpoint::from_network(&net, Some(&t)).encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).unwrap_err().to_string().contains("magic"));
        let mut v2 = bytes.clone();
        v2[8] = 9;
        assert!(Checkpoint::decode(&v2).unwrap_err().to_string().contains("version"));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (tr, va) = DatasetSource::Gaussians {
            train: 64,
            val: 32,
            dim: 3,
            seed: 1,
        }
        .load()
        .unwrap();
        let spec = mlp_snn(&[3], 6, 2, 2, NeuronKind::Lifb, NeuronParams::default(), KappaPolicy::Learnable).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut full = Network::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let full_t = train(&mut full, &tr, Some(&va), &cfg).unwrap();

        let mut part = Network::new(spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut t = Trainer::new(&mut part, cfg.clone()).unwrap();
        t.fit_until(&mut part, &tr, Some(&va), 2).unwrap();
        let ckpt = Checkpoint::decode(&Checkpoint::from_network(&part, Some(&t)).encode().unwrap()).unwrap();
        let mut resumed = ckpt.network().unwrap();
        let mut rt = ckpt.trainer().unwrap();
        rt.fit(&mut resumed, &tr, Some(&va)).unwrap();
        assert_eq!(rt.history, full_t.history);
        assert_eq!(resumed.state_dict(), full.state_dict());
    }
}
