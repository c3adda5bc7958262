//! Original LIFB dynamics with a calcium T-current, integrated by forward
//! Euler:
//!
//! ```text
//! tau dv/dt = -v + I + g H(v - v_h) h (v_T - v),   v > v_th => spike, v <- v_rst
//! dh/dt     = -h / tau_minus  if v > v_h
//!           =  h / tau_plus   if v < v_h           (h clamped to [0, 1])
//! ```
//!
//! Here `v_h` is the T-current gate and sits between `v_rst` and `v_th`:
//! the current only acts on the depolarizing ramp before a spike.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub tau: f64,
    pub v_th: f64,
    pub v_rst: f64,
    pub v_h: f64,
    /// T-current conductance; `g = 0` recovers plain LIF.
    pub g: f64,
    pub v_t: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub h0: f64,
}

impl Default for OdeParams {
    fn default() -> Self {
        let v_th = 1.0;
        OdeParams {
            tau: 10.0,
            v_th,
            v_rst: 0.0,
            v_h: 0.5 * v_th,
            g: 4.0,
            v_t: 1.5 * v_th,
            tau_plus: 20.0,
            tau_minus: 5.0,
            h0: 1.0,
        }
    }
}

impl OdeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && self.v_th > self.v_rst
            && self.g >= 0.0
            && self.tau_plus > 0.0
            && self.tau_minus > 0.0
            && (0.0..=1.0).contains(&self.h0);
        if !ok {
            return Err(Error::InvalidParam(format!("invalid ODE parameters: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrace {
    pub dt: f64,
    /// Membrane potential after each step (post-reset).
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    /// Step indices at which a spike was emitted.
    pub spike_steps: Vec<usize>,
}

impl OdeTrace {
    pub fn spike_times(&self) -> Vec<f64> {
        self.spike_steps.iter().map(|&k| (k + 1) as f64 * self.dt).collect()
    }

    pub fn isis(&self) -> Vec<f64> {
        self.spike_times().windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Simulates `steps` Euler steps. `current` is either one value per step or
/// a single constant value. Diverging membranes (`|v| > 1e3 * |v_th|`)
/// abort with a hint to reduce `dt` (stable for `dt <= tau / 10`).
pub fn simulate(current: &[f64], params: &OdeParams, dt: f64, steps: usize) -> Result<OdeTrace> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParam("steps must be at least 1".into()));
    }
    if current.len() != 1 && current.len() < steps {
        return Err(Error::InvalidParam(format!(
            "current trace has {} samples, need 1 or at least {steps}",
            current.len()
        )));
    }
    let p = params;
    let limit = 1e3 * p.v_th.abs().max(1e-12);
    let mut v = p.v_rst;
    let mut h = p.h0;
    let mut trace = OdeTrace {
        dt,
        v: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
        spike_steps: Vec::new(),
    };
    for k in 0..steps {
        let i = if current.len() == 1 { current[0] } else { current[k] };
        let gate = if v > p.v_h { 1.0 } else { 0.0 };
        let dv = (-v + i + p.g * gate * h * (p.v_t - v)) / p.tau;
        let dh = if v > p.v_h {
            -h / p.tau_minus
        } else if v < p.v_h {
            h / p.tau_plus
        } else {
            0.0
        };
        v += dt * dv;
        h = (h + dt * dh).clamp(0.0, 1.0);
        if !v.is_finite() || v.abs() > limit {
            return Err(Error::NonFinite(format!(
                "membrane diverged at step {k} (v = {v}); reduce dt below tau/10 = {}",
                p.tau / 10.0
            )));
        }
        if v > p.v_th {
            trace.spike_steps.push(k);
            v = p.v_rst;
        }
        trace.v.push(v);
        trace.h.push(h);
    }
    Ok(trace)
}

/// Burst signature of a spike train: the first `cluster` ISIs versus the
/// ISIs in the second half of the train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstStats {
    pub spikes: usize,
    pub initial_mean_isi: f64,
    pub tail_mean_isi: f64,
    pub ratio: f64,
    pub tail_cv: f64,
}

pub fn burst_stats(trace: &OdeTrace, cluster: usize) -> Option<BurstStats> {
    let isis = trace.isis();
    let tail = &isis[isis.len() / 2..];
    if cluster == 0 || isis.len() < cluster + 2 || tail.len() < 2 {
        return None;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let initial = mean(&isis[..cluster]);
    let tail_mean = mean(tail);
    let var = tail.iter().map(|x| (x - tail_mean).powi(2)).sum::<f64>() / tail.len() as f64;
    Some(BurstStats {
        spikes: trace.spike_steps.len(),
        initial_mean_isi: initial,
        tail_mean_isi: tail_mean,
        ratio: initial / tail_mean,
        tail_cv: var.sqrt() / tail_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_arguments() {
        let p = OdeParams::default();
        assert!(simulate(&[1.0], &p, 0.0, 10).is_err());
        assert!(simulate(&[1.0], &p, 1.0, 0).is_err());
        assert!(simulate(&[1.0, 1.0], &p, 1.0, 10).is_err());
    }

    #[test]
    fn zero_current_stays_at_rest() {
        let p = OdeParams::default();
        let tr = simulate(&[0.0], &p, 1.0, 500).unwrap();
        assert!(tr.spike_steps.is_empty());
        assert!(tr.v.iter().all(|&v| v == p.v_rst));
    }

    #[test]
    fn zero_conductance_matches_lif_euler() {
        let p = OdeParams {
            g: 0.0,
            ..OdeParams::default()
        };
        let tr = simulate(&[1.5], &p, 0.5, 400).unwrap();
        let mut v = p.v_rst;
        for (k, &vt) in tr.v.iter().enumerate() {
            v += 0.5 * (-v + 1.5) / p.tau;
            if v > p.v_th {
                v = p.v_rst;
                assert!(tr.spike_steps.contains(&k));
            }
            assert_eq!(v, vt);
        }
    }

    #[test]
    fn step_current_bursts_first() {
        let tr = simulate(&[1.1], &OdeParams::default(), 0.1, 30_000).unwrap();
        let stats = burst_stats(&tr, 3).unwrap();
        let isis = tr.isis();
        assert!(isis[..3].iter().all(|&x| x < stats.tail_mean_isi), "{isis:?}");
        assert!(stats.ratio < 0.7, "{stats:?}");
    }

    #[test]
    fn detects_instability() {
        let p = OdeParams {
            g: 0.0,
            ..OdeParams::default()
        };
        assert!(matches!(simulate(&[-1e4], &p, 25.0, 50), Err(Error::NonFinite(_))));
    }
}
