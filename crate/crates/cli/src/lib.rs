//! Scenario runner tying the simulation chain together: configuration,
//! experiment orchestration, deterministic seeding, and artifact emission.
//!
//! Every run writes a JSON result record, CSV histograms where applicable,
//! and a plain-text manifest into the output directory. Identical scenario
//! and seed reproduce the result records byte for byte.

pub mod experiments;
pub mod manifest;
pub mod scenario;

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use scenario::{Experiment, Scenario};
use sipmsim::impedance::write_impedance_csv;
use sipmsim::tdc::Histogram;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_histogram(path: &Path, hist: &Histogram) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    hist.write_csv(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Execute one experiment and write its artifacts. Returns the path of the
/// JSON result record.
pub fn run(experiment: Experiment, scenario: &Scenario, out_dir: &Path) -> anyhow::Result<PathBuf> {
    scenario
        .validate_for(experiment)
        .with_context(|| format!("validating scenario for `{}`", experiment.name()))?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let json_path = out_dir.join(format!("{}_result.json", experiment.name()));
    let mut extra: Vec<(String, String)> = Vec::new();

    match experiment {
        Experiment::Sptr => {
            let (result, hist) = experiments::run_sptr(scenario)
                .context("experiment `sptr`")?;
            write_json(&json_path, &result)?;
            write_histogram(&out_dir.join("sptr_delta_t.csv"), &hist)?;
            extra.push(("trials".into(), result.n_trials.to_string()));
        }
        Experiment::DarkCount => {
            let (result, hist) = experiments::run_darkcount(scenario)
                .context("experiment `darkcount`")?;
            write_json(&json_path, &result)?;
            write_histogram(&out_dir.join("darkcount_times.csv"), &hist)?;
            let expected = result.expected_count;
            let formatted = if expected.fract() == 0.0 {
                format!("{}", expected as u64)
            } else {
                format!("{expected}")
            };
            extra.push(("expected_count".into(), formatted));
        }
        Experiment::Calibrate => {
            let result = experiments::run_calibrate(scenario)
                .context("experiment `calibrate`")?;
            write_json(&json_path, &result)?;
            extra.push(("settings".into(), result.settings.len().to_string()));
        }
        Experiment::Impedance => {
            let (result, spectrum) = experiments::run_impedance(scenario)
                .context("experiment `impedance`")?;
            write_json(&json_path, &result)?;
            let mut buf = Vec::new();
            write_impedance_csv(&spectrum, &mut buf)?;
            std::fs::write(out_dir.join("impedance.csv"), buf)?;
            extra.push(("points".into(), result.n_points.to_string()));
        }
        Experiment::TofCt => {
            let (result, hist) = experiments::run_tofct(scenario)
                .context("experiment `tofct`")?;
            write_json(&json_path, &result)?;
            write_histogram(&out_dir.join("tofct_times.csv"), &hist)?;
            extra.push(("trials".into(), result.n_events.to_string()));
        }
        Experiment::Spectrum => {
            let (result, hist) = experiments::run_spectrum(scenario)
                .context("experiment `spectrum`")?;
            write_json(&json_path, &result)?;
            write_histogram(&out_dir.join("spectrum_tot.csv"), &hist)?;
            extra.push(("dark_events".into(), result.n_dark_events.to_string()));
        }
    }
    manifest::write_manifest(out_dir, experiment, scenario, &extra)?;
    Ok(json_path)
}
