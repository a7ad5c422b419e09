use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::grid::GridNetwork;
use crate::pf_equations::{all_line_loadings, StateVector};

/// Accuracy, convergence and timing of an estimator over a set of samples.
///
/// The RMSEs pool every usable sample; each `_std` is the standard
/// deviation of the same RMSE computed per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// RMS voltage magnitude error, pu.
    pub voltage_rmse: f64,
    pub voltage_rmse_std: f64,
    /// RMS loading error over closed lines, percent.
    pub loading_rmse_lines: f64,
    pub loading_rmse_lines_std: f64,
    /// RMS loading error over closed lines and transformers, percent.
    pub loading_rmse_all: f64,
    pub loading_rmse_all_std: f64,
    /// Percent of samples with a usable estimate.
    pub convergence_rate: f64,
    pub time_mean_ms: f64,
    pub time_std_ms: f64,
    pub n_samples: usize,
}

impl Metrics {
    pub fn is_finite(&self) -> bool {
        [
            self.voltage_rmse,
            self.voltage_rmse_std,
            self.loading_rmse_lines,
            self.loading_rmse_lines_std,
            self.loading_rmse_all,
            self.loading_rmse_all_std,
            self.convergence_rate,
            self.time_mean_ms,
            self.time_std_ms,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// One estimate: the state (if any), whether the estimator reports success,
/// and its wall time.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub state: Option<StateVector>,
    pub converged: bool,
    pub time: Duration,
}

fn rms(s: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        (s / n as f64).sqrt()
    }
}

fn finite_state(s: &StateVector) -> bool {
    s.v().iter().chain(s.theta()).all(|x| x.is_finite()) && s.v().iter().all(|&v| v > 0.0)
}

/// RMSEs over every estimate with a finite, positive-voltage state.
/// Estimates without one count as non-converged and are left out of the
/// error sums. If no estimate is usable the RMSEs are NaN.
pub fn compute_metrics(network: &GridNetwork, truth: &[&StateVector], estimates: &[Estimate]) -> Metrics {
    assert_eq!(truth.len(), estimates.len(), "one estimate per truth vector");
    let (mut sv, mut nv) = (0.0, 0usize);
    let (mut sl, mut nl, mut sa, mut na) = (0.0, 0usize, 0.0, 0usize);
    let mut converged = 0usize;
    let mut per_sample: [Vec<f64>; 3] = Default::default();
    for (t, e) in truth.iter().zip(estimates) {
        let Some(s) = e.state.as_ref().filter(|s| finite_state(s)) else { continue };
        let (Ok(lt), Ok(le)) = (all_line_loadings(t, network), all_line_loadings(s, network)) else { continue };
        if e.converged {
            converged += 1;
        }
        let (mut v2, mut l2, mut a2, mut nl0, mut na0) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for (a, b) in s.v().iter().zip(t.v()) {
            v2 += (a - b).powi(2);
        }
        for (br, (a, b)) in network.branches().iter().zip(le.iter().zip(&lt)) {
            if !br.is_closed {
                continue;
            }
            let d2 = (a - b).powi(2);
            a2 += d2;
            na0 += 1;
            if !br.is_transformer {
                l2 += d2;
                nl0 += 1;
            }
        }
        sv += v2;
        nv += t.n();
        sl += l2;
        nl += nl0;
        sa += a2;
        na += na0;
        per_sample[0].push(rms(v2, t.n()));
        per_sample[1].push(rms(l2, nl0));
        per_sample[2].push(rms(a2, na0));
    }
    let std = |x: &[f64]| {
        let x: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
        if x.is_empty() {
            return f64::NAN;
        }
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    let ms: Vec<f64> = estimates.iter().map(|e| e.time.as_secs_f64() * 1e3).collect();
    let mean = ms.iter().sum::<f64>() / ms.len().max(1) as f64;
    let var = ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / ms.len().max(1) as f64;
    Metrics {
        voltage_rmse: rms(sv, nv),
        voltage_rmse_std: std(&per_sample[0]),
        loading_rmse_lines: rms(sl, nl),
        loading_rmse_lines_std: std(&per_sample[1]),
        loading_rmse_all: rms(sa, na),
        loading_rmse_all_std: std(&per_sample[2]),
        convergence_rate: 100.0 * converged as f64 / estimates.len().max(1) as f64,
        time_mean_ms: mean,
        time_std_ms: var.sqrt(),
        n_samples: estimates.len(),
    }
}

/// Voltage RMSE only, for learning curves.
pub fn voltage_rmse(truth: &[&StateVector], estimates: &[StateVector]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (t, e) in truth.iter().zip(estimates) {
        for (a, b) in e.v().iter().zip(t.v()) {
            s += (a - b).powi(2);
            n += 1;
        }
    }
    (s / n.max(1) as f64).sqrt()
}
