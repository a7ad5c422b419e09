//! Newton–Raphson AC power flow from a flat start.
//!
//! The slack bus holds `V = v_slack`, `theta = 0`; every other bus is a PQ
//! bus with a fixed `(P, Q)` injection. The Jacobian is built from the
//! `P_inj` / `Q_inj` rows of [`measurement_jacobian`], so the solver and the
//! estimators share one derivative implementation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::pf_equations::{
    bus_injections, measurement_jacobian, Measurement, MeasurementKind, StateVector,
};

/// Per-bus scheduled injections in per-unit (generator convention: loads are
/// negative). Entries at the slack bus are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v_slack: f64,
}

impl InjectionSpec {
    pub fn zeros(n: usize) -> Self {
        InjectionSpec { p: vec![0.0; n], q: vec![0.0; n], v_slack: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    pub mismatch: f64,
}

fn mismatch(state: &StateVector, network: &GridNetwork, spec: &InjectionSpec, pq: &[usize]) -> Result<Vec<f64>> {
    let inj = bus_injections(state, network)?;
    let mut f = Vec::with_capacity(2 * pq.len());
    for &i in pq {
        f.push(inj[i].0 - spec.p[i]);
    }
    for &i in pq {
        f.push(inj[i].1 - spec.q[i]);
    }
    Ok(f)
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn solve_power_flow(
    network: &GridNetwork,
    spec: &InjectionSpec,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let n = network.n();
    if spec.p.len() != n || spec.q.len() != n {
        return Err(Error::Dimension(format!("injection spec covers {} buses, network has {n}", spec.p.len())));
    }
    let slack = network.slack_index();
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let set: Vec<Measurement> = pq
        .iter()
        .map(|&i| Measurement::new(MeasurementKind::PInj(i), 0.0, 1.0))
        .chain(pq.iter().map(|&i| Measurement::new(MeasurementKind::QInj(i), 0.0, 1.0)))
        .collect();

    let mut v = vec![1.0; n];
    v[slack] = spec.v_slack;
    let mut state = StateVector::new(v, vec![0.0; n], slack)?;
    let unknowns = 2 * pq.len();

    let mut f = mismatch(&state, network, spec, &pq)?;
    let mut iterations = 0;
    while inf_norm(&f) > tol {
        if iterations == max_iter {
            return Err(Error::NonConvergence { iterations, mismatch: inf_norm(&f) });
        }
        let jac = measurement_jacobian(&state, &set, network)?;
        // Drop the slack magnitude column: free columns are V_pq then theta_pq.
        let cols: Vec<usize> = pq.iter().copied().chain(n..2 * n - 1).collect();
        let j = DMatrix::from_fn(unknowns, unknowns, |r, c| jac.get(r, cols[c]));
        let rhs = DVector::from_iterator(unknowns, f.iter().map(|x| -x));
        let dx = j
            .lu()
            .solve(&rhs)
            .ok_or(Error::NonConvergence { iterations, mismatch: inf_norm(&f) })?;
        let mut x = state.to_free();
        for (k, &c) in cols.iter().enumerate() {
            x[c] += dx[k];
        }
        state = StateVector::from_free(network, &x)
            .map_err(|_| Error::NonConvergence { iterations, mismatch: inf_norm(&f) })?;
        iterations += 1;
        f = mismatch(&state, network, spec, &pq)?;
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NonConvergence { iterations, mismatch: f64::INFINITY });
        }
    }
    Ok(PowerFlowSolution { state, iterations, mismatch: inf_norm(&f) })
}
