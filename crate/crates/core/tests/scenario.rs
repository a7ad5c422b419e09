use std::path::PathBuf;

use dsse::grid::load_network;
use dsse::pf_equations::{measurement_function, StateVector};
use dsse::scenario::{
    generate_dataset, load_dataset, metered_kinds, save_dataset, split_dataset, NoiseLevel, NoiseSpec, ScenarioConfig,
    Split,
};
use dsse::wls::check_observable;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn meter_noise_is_unbiased() {
    let net = load_network(fixture("case14.grid")).unwrap();
    let cfg = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap();
    let ds = generate_dataset(&net, &cfg, "case14", 480, NoiseSpec::level(NoiseLevel::Default, 8), 8).unwrap();
    let kinds = metered_kinds(&cfg.meters);
    let (mut sum, mut n) = (0.0, 0usize);
    for s in &ds.samples {
        let metered: Vec<_> = s.z.iter().filter(|m| kinds.contains(&m.kind)).cloned().collect();
        assert_eq!(metered.len(), kinds.len());
        let h = measurement_function(&s.truth, &metered, &net).unwrap();
        for (m, hk) in metered.iter().zip(h) {
            sum += (m.value - hk) / m.sigma;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "mean standardized residual {mean} over {n}");
}

#[test]
fn every_sample_is_observable() {
    let net = load_network(fixture("case14.grid")).unwrap();
    let cfg = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap();
    let ds = generate_dataset(&net, &cfg, "case14", 48, NoiseSpec::level(NoiseLevel::High, 2), 2).unwrap();
    for s in &ds.samples {
        assert!(s.z.len() >= net.n_state());
        check_observable(&StateVector::flat(&net), &s.z, &net).unwrap();
    }
}

#[test]
fn full_dataset_split_sizes() {
    let split = split_dataset(8640, (0.8, 0.1, 0.1), 0).unwrap();
    let count = |k: Split| split.iter().filter(|&&s| s == k).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6912, 864, 864));
}

#[test]
fn generation_is_reproducible_and_survives_a_round_trip() {
    let net = load_network(fixture("case14.grid")).unwrap();
    let cfg = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap();
    let noise = NoiseSpec::level(NoiseLevel::Low, 4);
    let ds = generate_dataset(&net, &cfg, "case14", 30, noise, 4).unwrap();
    assert_eq!(generate_dataset(&net, &cfg, "case14", 30, noise, 4).unwrap(), ds);

    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}
