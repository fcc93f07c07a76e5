use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sipmsim_cli::scenario::{Experiment, Scenario};

#[derive(Parser)]
#[command(name = "sipmsim", version, about = "SiPM fast-readout chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML); defaults apply for anything omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for result records, histograms, and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the experiment's event count.
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-photon time resolution from laser trials.
    Sptr(RunArgs),
    /// Dark-count acquisition against the Poisson expectation.
    Darkcount(RunArgs),
    /// Fit the ToT-to-energy model to a measured or synthetic dataset.
    Calibrate(RunArgs),
    /// Convert a reflection sweep to an impedance spectrum.
    Impedance(RunArgs),
    /// X-ray time-of-flight scatter-rejection Monte Carlo.
    Tofct(RunArgs),
    /// Dark-pulse ToT spectrum and optional threshold scan.
    Spectrum(RunArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Sptr(a) => (Experiment::Sptr, a),
        Command::Darkcount(a) => (Experiment::DarkCount, a),
        Command::Calibrate(a) => (Experiment::Calibrate, a),
        Command::Impedance(a) => (Experiment::Impedance, a),
        Command::Tofct(a) => (Experiment::TofCt, a),
        Command::Spectrum(a) => (Experiment::Spectrum, a),
    };
    let mut scenario = match &args.config {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(trials) = args.trials {
        scenario.apply_trials(experiment, trials);
    }
    let json_path = sipmsim_cli::run(experiment, &scenario, &args.out)?;
    println!(
        "{}: wrote {} (seed {})",
        experiment.name(),
        json_path.display(),
        scenario.seed
    );
    Ok(())
}
