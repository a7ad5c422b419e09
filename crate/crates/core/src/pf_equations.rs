//! The measurement function `h(x)`: AC branch flows, currents and bus
//! injections as functions of the polar bus state, with an analytic
//! Jacobian.
//!
//! State layout for every Jacobian and solver in the crate:
//! `[V_0, .., V_{n-1}, theta_i for i != slack]`, i.e. `2n - 1` columns. The
//! slack angle is pinned to zero and never appears as a free variable.
//!
//! Injections follow the generator convention: `P_i` is the sum over incident
//! branches of the flow leaving bus `i`, so loads are negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Branch, GridNetwork};

/// `sqrt(3)` from the current-magnitude equations, kept in per-unit.
pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Voltages at or below this magnitude make the current equations singular.
pub const MIN_VOLTAGE: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    v: Vec<f64>,
    theta: Vec<f64>,
    slack: usize,
}

impl StateVector {
    pub fn new(v: Vec<f64>, theta: Vec<f64>, slack: usize) -> Result<Self> {
        if v.len() != theta.len() || slack >= v.len() {
            return Err(Error::Dimension(format!(
                "state with {} magnitudes, {} angles, slack {slack}",
                v.len(),
                theta.len()
            )));
        }
        if theta[slack] != 0.0 {
            return Err(Error::Dimension("slack angle must be exactly 0".into()));
        }
        if let Some(i) = v.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::DegenerateVoltage { bus: i, value: v[i] });
        }
        Ok(StateVector { v, theta, slack })
    }

    /// Builds a state without checking magnitude positivity. The slack
    /// angle is forced to zero.
    pub(crate) fn new_unchecked(v: Vec<f64>, mut theta: Vec<f64>, slack: usize) -> Self {
        theta[slack] = 0.0;
        StateVector { v, theta, slack }
    }

    pub fn flat(network: &GridNetwork) -> Self {
        let n = network.n();
        StateVector {
            v: vec![1.0; n],
            theta: vec![0.0; n],
            slack: network.slack_index(),
        }
    }

    /// Builds a state from the `2n - 1` free variables.
    pub fn from_free(network: &GridNetwork, x: &[f64]) -> Result<Self> {
        let n = network.n();
        if x.len() != 2 * n - 1 {
            return Err(Error::Dimension(format!("expected {} free variables, got {}", 2 * n - 1, x.len())));
        }
        let slack = network.slack_index();
        let v = x[..n].to_vec();
        let mut theta = vec![0.0; n];
        for i in 0..n {
            if i != slack {
                theta[i] = x[theta_column(n, slack, i) ];
            }
        }
        StateVector::new(v, theta, slack)
    }

    pub fn to_free(&self) -> Vec<f64> {
        let n = self.v.len();
        let mut x = self.v.clone();
        x.extend((0..n).filter(|&i| i != self.slack).map(|i| self.theta[i]));
        x
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// Relabels buses so that old bus `i` becomes bus `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> StateVector {
        let mut v = vec![0.0; self.n()];
        let mut theta = vec![0.0; self.n()];
        for i in 0..self.n() {
            v[perm[i]] = self.v[i];
            theta[perm[i]] = self.theta[i];
        }
        StateVector { v, theta, slack: perm[self.slack] }
    }

    fn check(&self, network: &GridNetwork) -> Result<()> {
        if self.n() != network.n() || self.slack != network.slack_index() {
            return Err(Error::Dimension(format!(
                "state of {} buses does not match network of {}",
                self.n(),
                network.n()
            )));
        }
        Ok(())
    }
}

/// Column of `theta_i` in the free-variable layout.
pub fn theta_column(n: usize, slack: usize, i: usize) -> usize {
    debug_assert_ne!(i, slack);
    n + i - usize::from(i > slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasurementKind {
    VBus(usize),
    ThetaBus(usize),
    PInj(usize),
    QInj(usize),
    PFlowFwd(usize),
    PFlowRev(usize),
    QFlowFwd(usize),
    QFlowRev(usize),
    IFlowFwd(usize),
    IFlowRev(usize),
}

impl MeasurementKind {
    pub const NAMES: [&'static str; 10] = [
        "v_bus", "theta_bus", "p_inj", "q_inj", "p_flow_fwd", "p_flow_rev", "q_flow_fwd",
        "q_flow_rev", "i_flow_fwd", "i_flow_rev",
    ];

    /// Position of the kind in [`MeasurementKind::NAMES`].
    pub fn kind_index(&self) -> usize {
        use MeasurementKind::*;
        match self {
            VBus(_) => 0,
            ThetaBus(_) => 1,
            PInj(_) => 2,
            QInj(_) => 3,
            PFlowFwd(_) => 4,
            PFlowRev(_) => 5,
            QFlowFwd(_) => 6,
            QFlowRev(_) => 7,
            IFlowFwd(_) => 8,
            IFlowRev(_) => 9,
        }
    }

    pub fn location(&self) -> usize {
        use MeasurementKind::*;
        match *self {
            VBus(i) | ThetaBus(i) | PInj(i) | QInj(i) => i,
            PFlowFwd(b) | PFlowRev(b) | QFlowFwd(b) | QFlowRev(b) | IFlowFwd(b) | IFlowRev(b) => b,
        }
    }

    pub fn is_flow(&self) -> bool {
        self.kind_index() >= 4
    }

    pub fn name(&self) -> &'static str {
        Self::NAMES[self.kind_index()]
    }

    pub fn from_name(name: &str, location: usize) -> Option<Self> {
        use MeasurementKind::*;
        let ctor: fn(usize) -> MeasurementKind = match name {
            "v_bus" => VBus,
            "theta_bus" => ThetaBus,
            "p_inj" => PInj,
            "q_inj" => QInj,
            "p_flow_fwd" => PFlowFwd,
            "p_flow_rev" => PFlowRev,
            "q_flow_fwd" => QFlowFwd,
            "q_flow_rev" => QFlowRev,
            "i_flow_fwd" => IFlowFwd,
            "i_flow_rev" => IFlowRev,
            _ => return None,
        };
        Some(ctor(location))
    }

    /// Same kind at a relabeled location.
    pub fn with_location(&self, loc: usize) -> Self {
        Self::from_name(self.name(), loc).expect("known name")
    }

    pub fn check(&self, network: &GridNetwork) -> Result<()> {
        let limit = if self.is_flow() { network.n_branches() } else { network.n() };
        if self.location() >= limit {
            return Err(Error::UnknownLocation(format!("{}@{}", self.name(), self.location())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub value: f64,
    pub sigma: f64,
    pub is_pseudo: bool,
    pub is_virtual: bool,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, value: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0, "measurement sigma must be positive");
        Measurement { kind, value, sigma, is_pseudo: false, is_virtual: false }
    }

    pub fn pseudo(mut self) -> Self {
        self.is_pseudo = true;
        self
    }

    pub fn virtual_(mut self) -> Self {
        self.is_virtual = true;
        self
    }
}

pub type MeasurementSet = Vec<Measurement>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchFlows {
    pub p_fwd: f64,
    pub p_rev: f64,
    pub q_fwd: f64,
    pub q_rev: f64,
    pub i_fwd: f64,
    pub i_rev: f64,
}

/// Partial derivatives of one flow quantity with respect to
/// `(V_from, V_to, delta)` where `delta = theta_from - theta_to + shift`.
#[derive(Debug, Clone, Copy, Default)]
struct Partials {
    dvi: f64,
    dvj: f64,
    ddelta: f64,
}

impl Partials {
    fn lin(a: f64, x: Partials, b: f64, y: Partials) -> Partials {
        Partials {
            dvi: a * x.dvi + b * y.dvi,
            dvj: a * x.dvj + b * y.dvj,
            ddelta: a * x.ddelta + b * y.ddelta,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FlowPartials {
    p_fwd: Partials,
    p_rev: Partials,
    q_fwd: Partials,
    q_rev: Partials,
    i_fwd: Partials,
    i_rev: Partials,
}

fn degenerate(i: usize, v: f64) -> Result<()> {
    if v <= MIN_VOLTAGE {
        Err(Error::DegenerateVoltage { bus: i, value: v })
    } else {
        Ok(())
    }
}

fn flows_with_partials(state: &StateVector, br: &Branch) -> Result<(BranchFlows, FlowPartials)> {
    if !br.is_closed {
        return Ok(Default::default());
    }
    let (i, j) = (br.from_bus, br.to_bus);
    let (vi, vj) = (state.v[i], state.v[j]);
    degenerate(i, vi)?;
    degenerate(j, vj)?;
    let delta = state.theta[i] - state.theta[j] + br.phase_shift;
    let (s, c) = delta.sin_cos();
    let (g, b) = (br.y_series.re, br.y_series.im);
    let (gs, bs) = (br.y_shunt.re / 2.0, br.y_shunt.im / 2.0);
    let vv = vi * vj;

    let p_fwd = -vv * (g * c + b * s) + vi * vi * (g + gs);
    let p_rev = vv * (-g * c + b * s) + vj * vj * (g + gs);
    let q_fwd = vv * (-g * s + b * c) - vi * vi * (b + bs);
    let q_rev = vv * (g * s + b * c) - vj * vj * (b + bs);

    let dp_fwd = Partials {
        dvi: -vj * (g * c + b * s) + 2.0 * vi * (g + gs),
        dvj: -vi * (g * c + b * s),
        ddelta: -vv * (-g * s + b * c),
    };
    let dp_rev = Partials {
        dvi: vj * (-g * c + b * s),
        dvj: vi * (-g * c + b * s) + 2.0 * vj * (g + gs),
        ddelta: vv * (g * s + b * c),
    };
    let dq_fwd = Partials {
        dvi: vj * (-g * s + b * c) - 2.0 * vi * (b + bs),
        dvj: vi * (-g * s + b * c),
        ddelta: vv * (-g * c - b * s),
    };
    let dq_rev = Partials {
        dvi: vj * (g * s + b * c),
        dvj: vi * (g * s + b * c) - 2.0 * vj * (b + bs),
        ddelta: vv * (g * c - b * s),
    };

    let (i_fwd, di_fwd) = current(p_fwd, q_fwd, dp_fwd, dq_fwd, vi, true);
    let (i_rev, di_rev) = current(p_rev, q_rev, dp_rev, dq_rev, vj, false);

    Ok((
        BranchFlows { p_fwd, p_rev, q_fwd, q_rev, i_fwd, i_rev },
        FlowPartials {
            p_fwd: dp_fwd,
            p_rev: dp_rev,
            q_fwd: dq_fwd,
            q_rev: dq_rev,
            i_fwd: di_fwd,
            i_rev: di_rev,
        },
    ))
}

/// `|P - jQ| / (sqrt(3) V)` and its partials. `own_is_from` selects which
/// voltage divides.
fn current(p: f64, q: f64, dp: Partials, dq: Partials, v: f64, own_is_from: bool) -> (f64, Partials) {
    let mag = p.hypot(q);
    let denom = SQRT3 * v;
    let value = mag / denom;
    // Subgradient 0 at zero flow.
    let dmag = if mag > 0.0 {
        Partials::lin(p / mag, dp, q / mag, dq)
    } else {
        Partials::default()
    };
    let mut d = Partials::lin(1.0 / denom, dmag, 0.0, Partials::default());
    let dv = -value / v;
    if own_is_from {
        d.dvi += dv;
    } else {
        d.dvj += dv;
    }
    (value, d)
}

pub fn branch_flows(state: &StateVector, branch: &Branch, network: &GridNetwork) -> Result<BranchFlows> {
    state.check(network)?;
    if branch.id >= network.n_branches() || network.branch(branch.id) != branch {
        return Err(Error::UnknownLocation(format!("branch {} is not part of the network", branch.id)));
    }
    Ok(flows_with_partials(state, branch)?.0)
}

/// Flows of every branch, in branch order.
pub fn all_branch_flows(state: &StateVector, network: &GridNetwork) -> Result<Vec<BranchFlows>> {
    state.check(network)?;
    network
        .branches()
        .iter()
        .map(|br| flows_with_partials(state, br).map(|(f, _)| f))
        .collect()
}

/// Per-bus `(P_i, Q_i)` injections.
pub fn bus_injections(state: &StateVector, network: &GridNetwork) -> Result<Vec<(f64, f64)>> {
    let flows = all_branch_flows(state, network)?;
    Ok(injections_from_flows(&flows, network))
}

fn injections_from_flows(flows: &[BranchFlows], network: &GridNetwork) -> Vec<(f64, f64)> {
    let mut inj = vec![(0.0, 0.0); network.n()];
    for (br, f) in network.branches().iter().zip(flows) {
        inj[br.from_bus].0 += f.p_fwd;
        inj[br.from_bus].1 += f.q_fwd;
        inj[br.to_bus].0 += f.p_rev;
        inj[br.to_bus].1 += f.q_rev;
    }
    inj
}

fn check_set(set: &[Measurement], network: &GridNetwork) -> Result<()> {
    set.iter().try_for_each(|m| m.kind.check(network))
}

/// Evaluates `h(x)` for every measurement, in the order of `set`.
pub fn measurement_function(state: &StateVector, set: &[Measurement], network: &GridNetwork) -> Result<Vec<f64>> {
    check_set(set, network)?;
    let flows = all_branch_flows(state, network)?;
    let inj = injections_from_flows(&flows, network);
    Ok(set
        .iter()
        .map(|m| {
            use MeasurementKind::*;
            match m.kind {
                VBus(i) => state.v[i],
                ThetaBus(i) => state.theta[i],
                PInj(i) => inj[i].0,
                QInj(i) => inj[i].1,
                PFlowFwd(b) => flows[b].p_fwd,
                PFlowRev(b) => flows[b].p_rev,
                QFlowFwd(b) => flows[b].q_fwd,
                QFlowRev(b) => flows[b].q_rev,
                IFlowFwd(b) => flows[b].i_fwd,
                IFlowRev(b) => flows[b].i_rev,
            }
        })
        .collect())
}

/// Dense row-major `m x (2n - 1)` Jacobian of [`measurement_function`].
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn measurement_jacobian(state: &StateVector, set: &[Measurement], network: &GridNetwork) -> Result<Jacobian> {
    check_set(set, network)?;
    state.check(network)?;
    let n = network.n();
    let slack = network.slack_index();
    let cols = 2 * n - 1;
    let partials: Vec<FlowPartials> = network
        .branches()
        .iter()
        .map(|br| flows_with_partials(state, br).map(|(_, p)| p))
        .collect::<Result<_>>()?;

    let mut data = vec![0.0; set.len() * cols];
    for (r, m) in set.iter().enumerate() {
        let row = &mut data[r * cols..(r + 1) * cols];
        let mut put = |br: &Branch, d: Partials| {
            let (i, j) = (br.from_bus, br.to_bus);
            row[i] += d.dvi;
            row[j] += d.dvj;
            if i != slack {
                row[theta_column(n, slack, i)] += d.ddelta;
            }
            if j != slack {
                row[theta_column(n, slack, j)] -= d.ddelta;
            }
        };
        use MeasurementKind::*;
        match m.kind {
            VBus(i) => row[i] = 1.0,
            ThetaBus(i) => {
                if i != slack {
                    row[theta_column(n, slack, i)] = 1.0;
                }
            }
            PInj(i) | QInj(i) => {
                let is_p = matches!(m.kind, PInj(_));
                for &b in network.incident_branches(i) {
                    let br = network.branch(b);
                    let fp = &partials[b];
                    let d = match (is_p, br.from_bus == i) {
                        (true, true) => fp.p_fwd,
                        (true, false) => fp.p_rev,
                        (false, true) => fp.q_fwd,
                        (false, false) => fp.q_rev,
                    };
                    put(br, d);
                }
            }
            PFlowFwd(b) => put(network.branch(b), partials[b].p_fwd),
            PFlowRev(b) => put(network.branch(b), partials[b].p_rev),
            QFlowFwd(b) => put(network.branch(b), partials[b].q_fwd),
            QFlowRev(b) => put(network.branch(b), partials[b].q_rev),
            IFlowFwd(b) => put(network.branch(b), partials[b].i_fwd),
            IFlowRev(b) => put(network.branch(b), partials[b].i_rev),
        }
    }
    Ok(Jacobian { rows: set.len(), cols, data })
}

/// Loading of a branch in percent of its rating; open branches load 0 %.
pub fn line_loading(state: &StateVector, branch: &Branch, network: &GridNetwork) -> Result<f64> {
    let f = branch_flows(state, branch, network)?;
    Ok(loading_from_flows(&f, branch))
}

pub(crate) fn loading_from_flows(f: &BranchFlows, branch: &Branch) -> f64 {
    if !branch.is_closed {
        return 0.0;
    }
    100.0 * f.i_fwd.max(f.i_rev) / branch.rating_amps_pu
}

/// Loading of every branch, in branch order.
pub fn all_line_loadings(state: &StateVector, network: &GridNetwork) -> Result<Vec<f64>> {
    let flows = all_branch_flows(state, network)?;
    Ok(flows
        .iter()
        .zip(network.branches())
        .map(|(f, br)| loading_from_flows(f, br))
        .collect())
}
