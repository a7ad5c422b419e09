//! Differentiable losses over a batch of model outputs.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::h2mgnn::{Batch, Output};
use crate::pf_equations::{Measurement, MeasurementKind, StateVector, SQRT3};

/// Weights and bounds of the physical penalty terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub v_lb: f64,
    pub v_ub: f64,
    /// Bound on `|theta_i - theta_j|` across a closed branch, rad.
    pub dtheta_ub: f64,
    /// Bound on line loading, percent.
    pub loading_ub: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda0: 0.8,
            lambda1: 0.8,
            lambda2: 0.8,
            lambda3: 0.8,
            v_lb: 0.95,
            v_ub: 1.05,
            dtheta_ub: 0.25,
            loading_ub: 100.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda0, self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("penalty weights must be non-negative".into()));
        }
        if !(self.v_lb < self.v_ub) || !(self.dtheta_ub > 0.0) || !(self.loading_ub > 0.0) {
            return Err(Error::Config("inconsistent penalty bounds".into()));
        }
        Ok(())
    }
}

/// Terms of the weak loss, each summed over the batch.
#[derive(Clone, Copy)]
pub struct WeakLoss<'t> {
    pub total: Var<'t>,
    pub wls: Var<'t>,
    pub voltage: Var<'t>,
    pub angle: Var<'t>,
    pub loading: Var<'t>,
}

impl WeakLoss<'_> {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [("wls", self.wls), ("voltage", self.voltage), ("angle", self.angle), ("loading", self.loading)]
            .into_iter()
            .find(|(_, v)| !v.item().is_finite())
            .map(|(name, _)| name)
    }
}

/// Network constants and measurement indexing for one batch.
pub struct Physics {
    n_rows: usize,
    b_rows: usize,
    from: Rc<Vec<usize>>,
    to: Rc<Vec<usize>>,
    g: Tensor,
    b: Tensor,
    g_gs: Tensor,
    b_bs: Tensor,
    shift: Tensor,
    closed: Tensor,
    inv_rating: Tensor,
    /// Row of each measurement in the stacked quantity column.
    index: Rc<Vec<usize>>,
    z: Tensor,
    inv_sigma: Tensor,
    sigma: Vec<f64>,
    virtual_rows: Vec<usize>,
}

impl Physics {
    pub fn new(network: &GridNetwork, batch: &Batch, sets: &[&[Measurement]]) -> Result<Physics> {
        assert_eq!(sets.len(), batch.n_samples, "one measurement set per batch sample");
        let (n, nb) = (network.n(), network.n_branches());
        let (n_rows, b_rows) = (batch.n_samples * n, batch.n_samples * nb);
        let column = |f: &dyn Fn(&crate::grid::Branch) -> f64| {
            Tensor::column((0..b_rows).map(|r| f(network.branch(r % nb))).collect())
        };
        let closed = column(&|br| f64::from(u8::from(br.is_closed)));
        let mut index = Vec::new();
        let (mut z, mut sigma, mut virtual_rows) = (Vec::new(), Vec::new(), Vec::new());
        for (s, set) in sets.iter().enumerate() {
            for m in set.iter() {
                m.kind.check(network)?;
                use MeasurementKind::*;
                let (block, loc) = match m.kind {
                    VBus(i) => (0, s * n + i),
                    ThetaBus(i) => (1, s * n + i),
                    PInj(i) => (2, s * n + i),
                    QInj(i) => (3, s * n + i),
                    PFlowFwd(b) => (4, s * nb + b),
                    PFlowRev(b) => (5, s * nb + b),
                    QFlowFwd(b) => (6, s * nb + b),
                    QFlowRev(b) => (7, s * nb + b),
                    IFlowFwd(b) => (8, s * nb + b),
                    IFlowRev(b) => (9, s * nb + b),
                };
                let offset = if block < 4 { block * n_rows } else { 4 * n_rows + (block - 4) * b_rows };
                if m.is_virtual {
                    virtual_rows.push(z.len());
                }
                index.push(offset + loc);
                z.push(m.value);
                sigma.push(m.sigma);
            }
        }
        Ok(Physics {
            n_rows,
            b_rows,
            from: batch.from_index(),
            to: batch.to_index(),
            g: column(&|br| br.y_series.re),
            b: column(&|br| br.y_series.im),
            g_gs: column(&|br| br.y_series.re + br.y_shunt.re / 2.0),
            b_bs: column(&|br| br.y_series.im + br.y_shunt.im / 2.0),
            shift: column(&|br| br.phase_shift),
            inv_rating: column(&|br| 1.0 / br.rating_amps_pu),
            closed,
            index: Rc::new(index),
            z: Tensor::column(z),
            inv_sigma: Tensor::column(sigma.iter().map(|s| 1.0 / s).collect()),
            sigma,
            virtual_rows,
        })
    }

    /// Weighs virtual measurements as if their σ were at least `floor`.
    /// A floor of 0 restores the measured σ.
    pub fn set_virtual_sigma_floor(&mut self, floor: f64) {
        for &k in &self.virtual_rows {
            self.inv_sigma.data_mut()[k] = 1.0 / self.sigma[k].max(floor);
        }
    }
}

struct Flows<'t> {
    p_fwd: Var<'t>,
    p_rev: Var<'t>,
    q_fwd: Var<'t>,
    q_rev: Var<'t>,
    i_fwd: Var<'t>,
    i_rev: Var<'t>,
    dtheta: Var<'t>,
}

fn flows<'t>(tape: &'t Tape, out: &Output<'t>, ph: &Physics) -> Flows<'t> {
    let c = |t: &Tensor| tape.constant(t.clone());
    let (g, b, g_gs, b_bs, closed) = (c(&ph.g), c(&ph.b), c(&ph.g_gs), c(&ph.b_bs), c(&ph.closed));
    let vi = out.v.gather_rows(ph.from.clone());
    let vj = out.v.gather_rows(ph.to.clone());
    let dtheta = out.theta.gather_rows(ph.from.clone()) - out.theta.gather_rows(ph.to.clone());
    let delta = dtheta + c(&ph.shift);
    let (cos, sin) = (delta.cos(), delta.sin());
    let vv = vi * vj;
    let (vi2, vj2) = (vi.square(), vj.square());
    let (gc, bs, gs, bc) = (g * cos, b * sin, g * sin, b * cos);

    let p_fwd = (vi2 * g_gs - vv * (gc + bs)) * closed;
    let p_rev = (vj2 * g_gs + vv * (bs - gc)) * closed;
    let q_fwd = (vv * (bc - gs) - vi2 * b_bs) * closed;
    let q_rev = (vv * (gs + bc) - vj2 * b_bs) * closed;

    let eps2 = crate::autodiff::ABS_SMOOTH_EPS * crate::autodiff::ABS_SMOOTH_EPS;
    let magnitude = |p: Var<'t>, q: Var<'t>| (p.square() + q.square()).offset(eps2).sqrt();
    let i_fwd = magnitude(p_fwd, q_fwd) / vi.scale(SQRT3) * closed;
    let i_rev = magnitude(p_rev, q_rev) / vj.scale(SQRT3) * closed;
    Flows { p_fwd, p_rev, q_fwd, q_rev, i_fwd, i_rev, dtheta }
}

fn hinge<'t>(x: Var<'t>, bound: f64) -> Var<'t> {
    x.offset(-bound).relu_plus()
}

/// Weighted residual sum of squares plus the physical penalties, summed
/// over the batch. Only measurements are read, never the true state.
pub fn weak_loss<'t>(tape: &'t Tape, out: &Output<'t>, ph: &Physics, lc: &LossConfig) -> WeakLoss<'t> {
    let f = flows(tape, out, ph);
    let p_inj = f.p_fwd.scatter_add_rows(ph.from.clone(), ph.n_rows) + f.p_rev.scatter_add_rows(ph.to.clone(), ph.n_rows);
    let q_inj = f.q_fwd.scatter_add_rows(ph.from.clone(), ph.n_rows) + f.q_rev.scatter_add_rows(ph.to.clone(), ph.n_rows);
    let quantities = tape.concat_rows(&[out.v, out.theta, p_inj, q_inj, f.p_fwd, f.p_rev, f.q_fwd, f.q_rev, f.i_fwd, f.i_rev]);
    debug_assert_eq!(quantities.rows(), 4 * ph.n_rows + 6 * ph.b_rows);
    let h = quantities.gather_rows(ph.index.clone());
    let r = (h - tape.constant(ph.z.clone())) * tape.constant(ph.inv_sigma.clone());
    let wls = r.square().sum();

    let voltage = (hinge(out.v, lc.v_ub) + hinge(out.v.neg(), -lc.v_lb)).sum();
    let closed = tape.constant(ph.closed.clone());
    let dtheta = f.dtheta.clamp(-std::f64::consts::PI, std::f64::consts::PI);
    let angle = ((hinge(dtheta, lc.dtheta_ub) + hinge(dtheta.neg(), lc.dtheta_ub)) * closed).sum();
    let loading_pct = f.i_fwd.max(f.i_rev) * tape.constant(ph.inv_rating.clone()).scale(100.0);
    let loading = (hinge(loading_pct, lc.loading_ub) * closed).sum();

    let penalty = (voltage.scale(lc.lambda1) + angle.scale(lc.lambda2) + loading.scale(lc.lambda3)).scale(lc.lambda0);
    WeakLoss { total: wls + penalty, wls, voltage, angle, loading }
}

/// Mean squared error over the `V` channels and the non-slack `theta`
/// channels, averaged over the batch.
pub fn supervised_loss<'t>(tape: &'t Tape, out: &Output<'t>, batch: &Batch, truth: &[&StateVector]) -> Var<'t> {
    assert_eq!(truth.len(), batch.n_samples, "one truth vector per batch sample");
    let v: Vec<f64> = truth.iter().flat_map(|t| t.v().iter().copied()).collect();
    let th: Vec<f64> = truth.iter().flat_map(|t| t.theta().iter().copied()).collect();
    let n = batch.n_buses;
    let mask: Vec<f64> = (0..v.len()).map(|r| if r % n == batch.slack() { 0.0 } else { 1.0 }).collect();
    let dv = out.v - tape.constant(Tensor::column(v));
    let dth = (out.theta - tape.constant(Tensor::column(th))) * tape.constant(Tensor::column(mask));
    let channels = (batch.n_samples * (2 * n - 1)) as f64;
    (dv.square().sum() + dth.square().sum()).scale(1.0 / channels)
}
