//! Per-hyperedge input features.
//!
//! Bus rows (14 columns): for each of `V, theta, P, Q` the triple
//! `(value, weight, present)`, then `is_zero_injection, is_slack`.
//!
//! Branch rows (24 columns): for each side (from, to) and each of `P, Q, I`
//! the triple `(value, weight, present)`, then `Re Y, Im Y, Re Ys, Im Ys,
//! shift, is_closed`.
//!
//! A weight is `1 / sigma^2` divided by the largest such value of the same
//! measurement kind seen in training data, clamped to 1. Several readings of
//! one slot are merged into their inverse-variance weighted mean.
//!
//! Standardization statistics of value and weight columns are taken over
//! the rows where the slot is present, and absent slots stay zero. Otherwise
//! a sparsely metered column would be scaled by the gap between zeros and
//! readings, which hides the variation between samples.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::pf_equations::{Measurement, MeasurementKind};

pub const BUS_FEATURES: usize = 14;
pub const BRANCH_FEATURES: usize = 24;
/// Bumped whenever the column layout changes.
pub const FEATURE_LAYOUT_VERSION: u32 = 2;

const N_KINDS: usize = MeasurementKind::NAMES.len();

/// Offset of a measurement kind's `(value, weight, present)` triple in its row.
fn slot(kind: MeasurementKind) -> usize {
    use MeasurementKind::*;
    match kind {
        VBus(_) => 0,
        ThetaBus(_) => 3,
        PInj(_) => 6,
        QInj(_) => 9,
        PFlowFwd(_) => 0,
        QFlowFwd(_) => 3,
        IFlowFwd(_) => 6,
        PFlowRev(_) => 9,
        QFlowRev(_) => 12,
        IFlowRev(_) => 15,
    }
}

/// Raw (unstandardized) features of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub bus: Tensor,
    pub branch: Tensor,
}

/// Encodes `z` with per-kind weight scales `kind_max` (`1 / sigma^2` of the
/// most precise non-virtual reading of each kind).
pub fn encode_features(network: &GridNetwork, z: &[Measurement], kind_max: &[f64; N_KINDS]) -> Result<Features> {
    let (n, nb) = (network.n(), network.n_branches());
    let mut bus = Tensor::zeros(n, BUS_FEATURES);
    let mut branch = Tensor::zeros(nb, BRANCH_FEATURES);
    // Accumulate sum(w * z) in the value column and sum(w) in the weight
    // column, then normalize.
    for m in z {
        m.kind.check(network)?;
        if !(m.sigma > 0.0) || !m.value.is_finite() {
            return Err(Error::Validation(format!("invalid measurement {}@{}", m.kind.name(), m.kind.location())));
        }
        let w = 1.0 / (m.sigma * m.sigma);
        let (t, cols) = if m.kind.is_flow() { (&mut branch, BRANCH_FEATURES) } else { (&mut bus, BUS_FEATURES) };
        let base = m.kind.location() * cols + slot(m.kind);
        let d = t.data_mut();
        d[base] += w * m.value;
        d[base + 1] += w;
        d[base + 2] = 1.0;
    }
    for (t, cols, kinds) in [
        (&mut bus, BUS_FEATURES, &[0usize, 1, 2, 3][..]),
        (&mut branch, BRANCH_FEATURES, &[4, 6, 8, 5, 7, 9][..]),
    ] {
        let rows = t.rows();
        let d = t.data_mut();
        for r in 0..rows {
            for (s, &k) in kinds.iter().enumerate() {
                let base = r * cols + 3 * s;
                if d[base + 2] == 1.0 {
                    d[base] /= d[base + 1];
                    d[base + 1] = (d[base + 1] / kind_max[k]).min(1.0);
                }
            }
        }
    }
    for b in network.buses() {
        let d = bus.data_mut();
        d[b.id * BUS_FEATURES + 12] = f64::from(u8::from(b.is_zero_injection));
        d[b.id * BUS_FEATURES + 13] = f64::from(u8::from(b.is_slack));
    }
    for br in network.branches() {
        let row = &mut branch.data_mut()[br.id * BRANCH_FEATURES + 18..(br.id + 1) * BRANCH_FEATURES];
        row.copy_from_slice(&[
            br.y_series.re,
            br.y_series.im,
            br.y_shunt.re,
            br.y_shunt.im,
            br.phase_shift,
            f64::from(u8::from(br.is_closed)),
        ]);
    }
    Ok(Features { bus, branch })
}

/// Frozen normalization: weight scales and per-column standardization,
/// fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub kind_max: [f64; N_KINDS],
    pub bus_mean: Vec<f64>,
    pub bus_std: Vec<f64>,
    pub branch_mean: Vec<f64>,
    pub branch_std: Vec<f64>,
}

impl FeatureNormalizer {
    /// No scaling at all; useful for tests.
    pub fn identity() -> Self {
        FeatureNormalizer {
            kind_max: [1.0; N_KINDS],
            bus_mean: vec![0.0; BUS_FEATURES],
            bus_std: vec![1.0; BUS_FEATURES],
            branch_mean: vec![0.0; BRANCH_FEATURES],
            branch_std: vec![1.0; BRANCH_FEATURES],
        }
    }

    /// Fits on the measurement sets of training samples.
    pub fn fit<'a>(network: &GridNetwork, sets: impl IntoIterator<Item = &'a [Measurement]> + Clone) -> Result<Self> {
        let mut kind_max = [0.0f64; N_KINDS];
        for z in sets.clone() {
            for m in z.iter().filter(|m| !m.is_virtual) {
                let k = m.kind.kind_index();
                kind_max[k] = kind_max[k].max(1.0 / (m.sigma * m.sigma));
            }
        }
        for k in &mut kind_max {
            if *k == 0.0 {
                *k = 1.0;
            }
        }
        let mut bus = Moments::new(BUS_FEATURES, BUS_SLOTS);
        let mut branch = Moments::new(BRANCH_FEATURES, BRANCH_SLOTS);
        for z in sets {
            let f = encode_features(network, z, &kind_max)?;
            bus.add(&f.bus);
            branch.add(&f.branch);
        }
        let (bus_mean, bus_std) = bus.finish();
        let (branch_mean, branch_std) = branch.finish();
        Ok(FeatureNormalizer { kind_max, bus_mean, bus_std, branch_mean, branch_std })
    }

    pub fn encode(&self, network: &GridNetwork, z: &[Measurement]) -> Result<Features> {
        let mut f = encode_features(network, z, &self.kind_max)?;
        standardize(&mut f.bus, BUS_SLOTS, &self.bus_mean, &self.bus_std);
        standardize(&mut f.branch, BRANCH_SLOTS, &self.branch_mean, &self.branch_std);
        Ok(f)
    }
}

const BUS_SLOTS: usize = 4;
const BRANCH_SLOTS: usize = 6;

/// Whether column `c` of `row` counts: value and weight columns only where
/// their slot is present.
fn counts(row: &[f64], slots: usize, c: usize) -> bool {
    c >= 3 * slots || c % 3 == 2 || row[c - c % 3 + 2] == 1.0
}

fn standardize(t: &mut Tensor, slots: usize, mean: &[f64], std: &[f64]) {
    let cols = t.cols();
    for row in t.data_mut().chunks_mut(cols) {
        for c in 0..cols {
            row[c] = if counts(row, slots, c) { (row[c] - mean[c]) / std[c] } else { 0.0 };
        }
    }
}

struct Moments {
    slots: usize,
    count: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(cols: usize, slots: usize) -> Self {
        Moments { slots, count: vec![0.0; cols], sum: vec![0.0; cols], sum_sq: vec![0.0; cols] }
    }

    fn add(&mut self, t: &Tensor) {
        for r in 0..t.rows() {
            let row = t.row(r);
            for (c, x) in row.iter().enumerate() {
                if counts(row, self.slots, c) {
                    self.count[c] += 1.0;
                    self.sum[c] += x;
                    self.sum_sq[c] += x * x;
                }
            }
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let mean: Vec<f64> = self.sum.iter().zip(&self.count).map(|(s, n)| s / n.max(1.0)).collect();
        let std = self
            .sum_sq
            .iter()
            .zip(&mean)
            .zip(&self.count)
            .map(|((s, m), n)| {
                let var = (s / n.max(1.0) - m * m).max(0.0);
                // Constant columns pass through unscaled.
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }
}
