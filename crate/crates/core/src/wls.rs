//! Gauss–Newton weighted-least-squares state estimation.
//!
//! Each iteration solves `(H' W H + damping I) dx = H' W (z - h(x))` with
//! `W = diag(1 / sigma^2)`. With `damping > 0` a step that increases the
//! objective is halved until it does not, so the objective never rises
//! above its flat-start value. With `damping == 0` full steps are always
//! taken, which is the plain (and occasionally unstable) textbook method.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::pf_equations::{measurement_function, measurement_jacobian, Measurement, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct WlsResult {
    pub state: StateVector,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for WlsConfig {
    fn default() -> Self {
        WlsConfig { tol: 1e-6, max_iter: 50, damping: 1e-8 }
    }
}

impl WlsConfig {
    /// Undamped, loose-tolerance variant used to reproduce a poorly tuned
    /// baseline.
    pub fn detuned() -> Self {
        WlsConfig { tol: 1e-2, max_iter: 50, damping: 0.0 }
    }
}

/// `sum_k (z_k - h_k(x))^2 / sigma_k^2`.
pub fn wls_objective(z: &[Measurement], state: &StateVector, network: &GridNetwork) -> Result<f64> {
    let h = measurement_function(state, z, network)?;
    Ok(z.iter().zip(h).map(|(m, hk)| ((m.value - hk) / m.sigma).powi(2)).sum())
}

fn weighted_jacobian(state: &StateVector, z: &[Measurement], network: &GridNetwork) -> Result<DMatrix<f64>> {
    let jac = measurement_jacobian(state, z, network)?;
    Ok(DMatrix::from_fn(jac.rows, jac.cols, |r, c| jac.get(r, c) / z[r].sigma))
}

/// Checks that the weighted Jacobian at `state` has full column rank.
pub fn check_observable(state: &StateVector, z: &[Measurement], network: &GridNetwork) -> Result<()> {
    let p = network.n_state();
    if z.len() < p {
        return Err(Error::Unobservable(format!("{} measurements for {p} state variables", z.len())));
    }
    let hw = weighted_jacobian(state, z, network)?;
    let sv = hw.singular_values();
    let max = sv.max();
    let tol = max * 1e-12 * (z.len().max(p) as f64);
    let rank = sv.iter().filter(|s| **s > tol).count();
    if rank < p {
        return Err(Error::Unobservable(format!("measurement Jacobian has rank {rank} < {p}")));
    }
    Ok(())
}

fn solve_normal(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(&b));
    }
    a.lu().solve(&b)
}

pub fn estimate_wls(network: &GridNetwork, z: &[Measurement], config: &WlsConfig) -> Result<WlsResult> {
    let start = Instant::now();
    if !(config.tol > 0.0) || config.damping < 0.0 {
        return Err(Error::Config("tol must be positive and damping non-negative".into()));
    }
    let mut state = StateVector::flat(network);
    check_observable(&state, z, network)?;
    let p = network.n_state();
    let sigma = DVector::from_iterator(z.len(), z.iter().map(|m| m.sigma));
    let zv = DVector::from_iterator(z.len(), z.iter().map(|m| m.value));

    let mut objective = wls_objective(z, &state, network)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let h = DVector::from_vec(measurement_function(&state, z, network)?);
        let r = (&zv - h).component_div(&sigma);
        let hw = weighted_jacobian(&state, z, network)?;
        let ht = hw.transpose();
        let mut a = &ht * &hw;
        for k in 0..p {
            a[(k, k)] += config.damping;
        }
        let g = &ht * r;
        let Some(dx) = solve_normal(a, g) else {
            return Err(Error::Unobservable("singular normal matrix".into()));
        };
        iterations += 1;

        let x0 = state.to_free();
        let mut step = 1.0;
        let accepted = loop {
            let x: Vec<f64> = x0.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
            let candidate = StateVector::from_free(network, &x)
                .ok()
                .and_then(|s| wls_objective(z, &s, network).ok().map(|o| (s, o)));
            match candidate {
                Some((s, o)) if config.damping == 0.0 || o <= objective => break Some((s, o, step)),
                _ if config.damping == 0.0 || step < 1e-6 => break None,
                _ => step *= 0.5,
            }
        };
        let Some((s, o, step)) = accepted else {
            // A step this small that no longer lowers the objective is round-off.
            converged = dx.amax() <= config.tol;
            break;
        };
        state = s;
        objective = o;
        let step_norm = dx.iter().fold(0.0f64, |m, d| m.max((step * d).abs()));
        if !objective.is_finite() {
            break;
        }
        if step_norm <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(WlsResult { state, converged, iterations, objective, wall_time: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};
    use crate::pf_equations::MeasurementKind;
    use nalgebra::Complex;

    fn two_bus() -> GridNetwork {
        GridNetwork::new(
            vec![
                Bus { id: 0, is_slack: true, is_zero_injection: false, base_kv: 20.0 },
                Bus { id: 1, is_slack: false, is_zero_injection: false, base_kv: 20.0 },
            ],
            vec![Branch::new(0, 0, 1, 0.01, 0.1, Complex::new(0.0, 0.0), 0.0, true, 1.0, false)],
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn objective_of_exact_fit_is_zero() {
        let net = two_bus();
        let state = StateVector::new(vec![1.0, 0.98], vec![0.0, -0.02], 0).unwrap();
        let kinds = [MeasurementKind::VBus(1), MeasurementKind::PFlowFwd(0), MeasurementKind::QInj(1)];
        let set: Vec<Measurement> = kinds.iter().map(|&k| Measurement::new(k, 0.0, 0.01)).collect();
        let h = measurement_function(&state, &set, &net).unwrap();
        let z: Vec<Measurement> = set.iter().zip(h).map(|(m, v)| Measurement { value: v, ..*m }).collect();
        assert_eq!(wls_objective(&z, &state, &net).unwrap(), 0.0);
    }

    #[test]
    fn unit_residual_gives_unit_objective() {
        let net = two_bus();
        let state = StateVector::flat(&net);
        let z = [Measurement::new(MeasurementKind::VBus(1), 1.0 + 0.02, 0.02)];
        assert!((wls_objective(&z, &state, &net).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_measurements_is_unobservable() {
        let net = two_bus();
        let z = [Measurement::new(MeasurementKind::VBus(1), 1.0, 0.01)];
        assert!(matches!(estimate_wls(&net, &z, &WlsConfig::default()), Err(Error::Unobservable(_))));
    }

    #[test]
    fn duplicated_rows_are_unobservable() {
        let net = two_bus();
        let z = [
            Measurement::new(MeasurementKind::VBus(1), 1.0, 0.01),
            Measurement::new(MeasurementKind::VBus(1), 1.0, 0.01),
            Measurement::new(MeasurementKind::VBus(0), 1.0, 0.01),
        ];
        assert!(matches!(estimate_wls(&net, &z, &WlsConfig::default()), Err(Error::Unobservable(_))));
    }
}
