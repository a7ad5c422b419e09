use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use dsse::grid::{load_network, GridNetwork};
use dsse::pf_equations::{measurement_function, Measurement, MeasurementKind, StateVector};
use dsse::scenario::{
    exact_measurements, full_meter_kinds, generate_dataset, metered_kinds, virtual_measurements, NoiseLevel, NoiseSpec,
    ScenarioConfig, Split, SIGMA_FLOOR,
};
use dsse::wls::{estimate_wls, wls_objective, WlsConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn case14() -> (GridNetwork, ScenarioConfig) {
    (
        load_network(fixture("case14.grid")).unwrap(),
        ScenarioConfig::load(fixture("case14.scenario.json")).unwrap(),
    )
}

fn max_state_error(a: &StateVector, b: &StateVector) -> (f64, f64) {
    let dv = a.v().iter().zip(b.v()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let dt = a.theta().iter().zip(b.theta()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    (dv, dt)
}

#[test]
fn noiseless_full_set_recovers_the_truth() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 12, NoiseSpec::level(NoiseLevel::Default, 1), 1).unwrap();
    for s in &ds.samples {
        let mut z = exact_measurements(&s.truth, &net, &full_meter_kinds(&net)).unwrap();
        z.extend(virtual_measurements(&net));
        let r = estimate_wls(&net, &z, &WlsConfig::default()).unwrap();
        assert!(r.converged);
        let (dv, dt) = max_state_error(&r.state, &s.truth);
        assert!(dv <= 1e-6 && dt <= 1e-6, "dv {dv} dt {dt}");
    }
}

#[test]
fn exact_injections_instead_of_pseudos_give_a_consistent_estimate() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 6, NoiseSpec::level(NoiseLevel::Default, 2), 2).unwrap();
    let profiles = cfg.profiles(&net).unwrap();
    let mut kinds = metered_kinds(&cfg.meters);
    for p in profiles.iter() {
        kinds.extend([MeasurementKind::PInj(p.bus), MeasurementKind::QInj(p.bus)]);
    }
    for s in &ds.samples {
        let mut z = exact_measurements(&s.truth, &net, &kinds).unwrap();
        z.extend(virtual_measurements(&net));
        let r = estimate_wls(&net, &z, &WlsConfig::default()).unwrap();
        let (dv, dt) = max_state_error(&r.state, &s.truth);
        assert!(dv <= 1e-6 && dt <= 1e-6, "dv {dv} dt {dt}");
    }
}

#[test]
fn slack_virtuals_anchor_an_angle_free_set() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 1, NoiseSpec::level(NoiseLevel::Default, 3), 3).unwrap();
    let truth = &ds.samples[0].truth;
    // Injections everywhere but no voltage or angle reading at all.
    let kinds: Vec<MeasurementKind> =
        (0..net.n()).flat_map(|i| [MeasurementKind::PInj(i), MeasurementKind::QInj(i)]).collect();
    let mut z = exact_measurements(truth, &net, &kinds).unwrap();
    z.extend(virtual_measurements(&net));
    let r = estimate_wls(&net, &z, &WlsConfig::default()).unwrap();
    assert!(r.converged);
    assert!((r.state.v()[net.slack_index()] - 1.0).abs() < 1e-6);
}

#[test]
fn default_noise_estimates_are_accurate_and_never_worse_than_flat() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 240, NoiseSpec::level(NoiseLevel::Default, 4), 4).unwrap();
    let (mut se, mut n) = (0.0, 0usize);
    for s in ds.subset(Split::Train).into_iter().take(100) {
        let r = estimate_wls(&net, &s.z, &WlsConfig::default()).unwrap();
        assert!(r.converged);
        let flat = wls_objective(&s.z, &StateVector::flat(&net), &net).unwrap();
        assert!(r.objective <= flat);
        for (a, b) in r.state.v().iter().zip(s.truth.v()) {
            se += (a - b).powi(2);
            n += 1;
        }
    }
    let rmse = (se / n as f64).sqrt();
    // Same order as, or below, the published WLS error.
    assert!(rmse < 3e-2, "voltage RMSE {rmse}");
}

#[test]
fn damped_objective_never_ends_above_flat_start() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 48, NoiseSpec::level(NoiseLevel::High, 5), 5).unwrap();
    let damped = WlsConfig { damping: 1e-6, ..WlsConfig::default() };
    for s in &ds.samples {
        let flat = wls_objective(&s.z, &StateVector::flat(&net), &net).unwrap();
        let r = estimate_wls(&net, &s.z, &damped).unwrap();
        assert!(r.objective <= flat, "{} > {flat}", r.objective);
    }
}

#[test]
fn whitened_residuals_follow_chi_square() {
    let (net, cfg) = case14();
    let ds = generate_dataset(&net, &cfg, "case14", 100, NoiseSpec::level(NoiseLevel::Default, 6), 6).unwrap();
    let kinds = full_meter_kinds(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut ratio = 0.0;
    for s in &ds.samples {
        let probe: Vec<Measurement> = kinds.iter().map(|&k| Measurement::new(k, 0.0, 1.0)).collect();
        let h = measurement_function(&s.truth, &probe, &net).unwrap();
        let z: Vec<Measurement> = kinds
            .iter()
            .zip(h)
            .map(|(&k, q)| {
                let sigma = (0.01 * q.abs()).max(SIGMA_FLOOR);
                Measurement::new(k, q + sigma * std.sample(&mut rng), sigma)
            })
            .collect();
        let r = estimate_wls(&net, &z, &WlsConfig::default()).unwrap();
        assert!(r.converged);
        ratio += r.objective / (z.len() - net.n_state()) as f64;
    }
    let ratio = ratio / ds.samples.len() as f64;
    assert!((0.5..=2.0).contains(&ratio), "mean chi-square ratio {ratio}");
}
