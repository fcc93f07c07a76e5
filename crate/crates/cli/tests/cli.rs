//! Runner-level behavior: config loading, validation errors, artifacts.

use sipmsim_cli::scenario::{Experiment, Scenario};

fn example_config() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/example.toml")
}

#[test]
fn shipped_example_config_parses_and_matches_defaults() {
    let loaded = Scenario::load(&example_config()).unwrap();
    // The annotated example spells out the defaults; apart from the seed the
    // two must describe the same scenario.
    let mut defaults = Scenario::default();
    defaults.seed = 1;
    let a = toml::to_string(&loaded).unwrap();
    let b = toml::to_string(&defaults).unwrap();
    // series_resistance is written with finite precision in the example.
    let canon = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("series_resistance"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(canon(&a), canon(&b));
    assert!((loaded.impedance.series_resistance - 1.0 / 11.0).abs() < 1e-9);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = toml::from_str::<Scenario>("sede = 3").unwrap_err();
    assert!(err.to_string().contains("sede"));
}

#[test]
fn invalid_config_errors_name_the_section() {
    let mut s = Scenario::default();
    s.tofct.geometry.scatter_fraction = 1.5;
    let err = s.validate_for(Experiment::TofCt).unwrap_err();
    assert!(format!("{err:#}").contains("[tofct.geometry]"));

    let mut s = Scenario::default();
    s.sipm.pde = 2.0;
    let err = s.validate_for(Experiment::Sptr).unwrap_err();
    assert!(format!("{err:#}").contains("[sipm]"));
}

#[test]
fn run_writes_all_artifacts() {
    let mut scenario = Scenario::default();
    scenario.darkcount.duration = 0.01;
    let dir = tempfile::tempdir().unwrap();
    let json = sipmsim_cli::run(Experiment::DarkCount, &scenario, dir.path()).unwrap();
    assert!(json.exists());
    assert!(dir.path().join("darkcount_times.csv").exists());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    for key in ["experiment = darkcount", "config_sha256 = ", "seed = 0", "expected_count = "] {
        assert!(manifest.contains(key), "missing `{key}` in {manifest}");
    }
}

#[test]
fn trials_override_reaches_the_experiment() {
    let mut s = Scenario::default();
    s.apply_trials(Experiment::Sptr, 123);
    assert_eq!(s.sptr.n_events, 123);
    s.apply_trials(Experiment::TofCt, 456);
    assert_eq!(s.tofct.n_events, 456);
}
