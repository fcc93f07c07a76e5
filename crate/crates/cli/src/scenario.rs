//! Scenario configuration: one TOML file with a section per module plus a
//! section per experiment. Every field has a default, so a minimal config can
//! be empty and an annotated example can override selectively.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sipmsim::frontend::{ComparatorConfig, PreampConfig};
use sipmsim::photodetector::SipmConfig;
use sipmsim::tdc::TdcConfig;
use sipmsim::tofct::{GeometryConfig, ScintillatorConfig, XraySourceConfig};

/// Which experiment a scenario run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Experiment {
    Sptr,
    DarkCount,
    Calibrate,
    Impedance,
    TofCt,
    Spectrum,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sptr => "sptr",
            Experiment::DarkCount => "darkcount",
            Experiment::Calibrate => "calibrate",
            Experiment::Impedance => "impedance",
            Experiment::TofCt => "tofct",
            Experiment::Spectrum => "spectrum",
        }
    }
}

/// Single-photon time-resolution run: laser sync at t = 0, one incident
/// photon per trial with gaussian laser and transit jitter, full chain to the
/// TDC delta-T histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SptrSection {
    /// Number of laser trials.
    pub n_events: u64,
    /// Laser pulse width, FWHM in seconds.
    pub laser_fwhm: f64,
    /// Mean optical delay from sync to photon arrival, seconds.
    pub base_delay: f64,
    pub sample_period: f64,
    /// Waveform span per event; must cover the full ToT.
    pub span: f64,
}

impl Default for SptrSection {
    fn default() -> Self {
        Self {
            n_events: 100_000,
            laser_fwhm: 60e-12,
            base_delay: 10e-9,
            sample_period: 50e-12,
            span: 250e-9,
        }
    }
}

/// Dark-count acquisition: Poisson event generation over a fixed duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DarkCountSection {
    /// Acquisition duration, seconds.
    pub duration: f64,
    /// Bins of the arrival-time histogram.
    pub histogram_bins: usize,
}

impl Default for DarkCountSection {
    fn default() -> Self {
        Self {
            duration: 30.0,
            histogram_bins: 100,
        }
    }
}

/// ToT-to-energy calibration. With no `csv_path` the dataset is synthesized
/// from the `true_*` parameters at the standard source lines, optionally with
/// gaussian ToT noise, then refit from scratch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateSection {
    /// Measured dataset (source_label,energy_keV,tot_ns,bias_V,threshold_V).
    pub csv_path: Option<PathBuf>,
    pub true_a: f64,
    pub true_b: f64,
    pub true_c: f64,
    pub true_d: f64,
    /// Gaussian noise added to synthetic ToT values, ns.
    pub noise_rms_ns: f64,
    pub sipm_bias_v: f64,
    pub threshold_v: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            csv_path: None,
            true_a: 1.2,
            true_b: 6.0,
            true_c: 0.3,
            true_d: 5.0,
            noise_rms_ns: 0.0,
            sipm_bias_v: 40.0,
            threshold_v: 0.646,
        }
    }
}

/// Impedance-spectrum processing. With no `sweep_path` a synthetic series
/// R + jwL input model is swept; with `open/short/load` paths the raw sweep
/// is OSL-corrected first.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpedanceSection {
    /// Measured DUT sweep (.s1p or freq_hz,re_s11,im_s11 CSV).
    pub sweep_path: Option<PathBuf>,
    pub open_path: Option<PathBuf>,
    pub short_path: Option<PathBuf>,
    pub load_path: Option<PathBuf>,
    /// Synthetic model: series resistance, ohms.
    pub series_resistance: f64,
    /// Synthetic model: series inductance, henries.
    pub series_inductance: f64,
    pub f_start: f64,
    pub f_stop: f64,
    pub n_points: usize,
    /// Magnitude limit for the summary figure, ohms.
    pub limit_ohms: f64,
}

impl Default for ImpedanceSection {
    fn default() -> Self {
        Self {
            sweep_path: None,
            open_path: None,
            short_path: None,
            load_path: None,
            series_resistance: 1.0 / 11.0,
            series_inductance: 2.27e-9,
            f_start: 25e6,
            f_stop: 5e9,
            n_points: 200,
            limit_ohms: 50.0,
        }
    }
}

/// ToF-CT scatter-rejection Monte Carlo.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TofCtSection {
    pub n_events: u64,
    pub source: XraySourceConfig,
    pub scintillator: ScintillatorConfig,
    pub geometry: GeometryConfig,
    /// System timing resolution applied to arrivals, FWHM in seconds.
    pub timing_fwhm: f64,
    /// Derive detection times from the first scintillation photon instead of
    /// the bare X-ray arrival.
    pub use_scintillation: bool,
    /// Acceptance window relative to the primary flight time, seconds.
    pub window_before: f64,
    pub window_after: f64,
    pub histogram_bin: f64,
}

impl Default for TofCtSection {
    fn default() -> Self {
        Self {
            n_events: 100_000,
            source: XraySourceConfig::default(),
            scintillator: ScintillatorConfig::default(),
            geometry: GeometryConfig::default(),
            timing_fwhm: 200e-12,
            use_scintillation: false,
            window_before: 2e-9,
            window_after: 0.5e-9,
            histogram_bin: 50e-12,
        }
    }
}

/// Dark-pulse ToT spectrum: discriminate a dark acquisition and histogram the
/// time-over-threshold, optionally scanning comparator thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSection {
    /// Acquisition duration, seconds. Scaled well below the 30 s hardware
    /// run; the spectrum shape only needs a few thousand pulses.
    pub duration: f64,
    pub sample_period: f64,
    /// Waveform span per pulse cluster; events closer than this are shaped
    /// together so pile-up lands in the multi-photon peaks.
    pub span: f64,
    pub tot_bins: usize,
    /// Thresholds to scan, volts, ascending. Empty disables the scan.
    pub scan_thresholds: Vec<f64>,
    /// How far the first-peak center may drift during the scan, seconds.
    pub center_tolerance: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            duration: 2e-3,
            sample_period: 50e-12,
            span: 300e-9,
            // Single-photon ToT with default shaping sits near 170 ns, so
            // cover well past the two- and three-photon pile-up peaks.
            tot_bins: 256,
            scan_thresholds: Vec::new(),
            center_tolerance: 2e-9,
        }
    }
}

/// Full scenario: shared hardware sections plus one section per experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub sipm: SipmConfig,
    pub preamp: PreampConfig,
    pub comparator: ComparatorConfig,
    pub tdc: TdcConfig,
    pub sptr: SptrSection,
    pub darkcount: DarkCountSection,
    pub calibrate: CalibrateSection,
    pub impedance: ImpedanceSection,
    pub tofct: TofCtSection,
    pub spectrum: SpectrumSection,
}

impl Scenario {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
    }

    /// Map the generic `--trials` override onto the experiment's event count.
    pub fn apply_trials(&mut self, experiment: Experiment, trials: u64) {
        match experiment {
            Experiment::Sptr => self.sptr.n_events = trials,
            Experiment::TofCt => self.tofct.n_events = trials,
            Experiment::DarkCount | Experiment::Calibrate | Experiment::Impedance
            | Experiment::Spectrum => {}
        }
    }

    /// Validate every section the chosen experiment touches, with the
    /// offending section named in the error.
    pub fn validate_for(&self, experiment: Experiment) -> anyhow::Result<()> {
        let sipm = || self.sipm.validate().context("section [sipm]");
        let analog = || -> anyhow::Result<()> {
            sipm()?;
            self.preamp.validate().context("section [preamp]")?;
            self.comparator.validate().context("section [comparator]")?;
            self.tdc.validate().context("section [tdc]")?;
            Ok(())
        };
        match experiment {
            Experiment::Sptr => {
                analog()?;
                if self.sptr.laser_fwhm < 0.0 || self.sptr.n_events == 0 {
                    anyhow::bail!("section [sptr]: laser_fwhm must be >= 0 and n_events > 0");
                }
            }
            Experiment::DarkCount => {
                sipm()?;
                if self.darkcount.duration <= 0.0 || self.darkcount.histogram_bins == 0 {
                    anyhow::bail!("section [darkcount]: duration and histogram_bins must be > 0");
                }
            }
            Experiment::Calibrate => {
                if self.calibrate.noise_rms_ns < 0.0 {
                    anyhow::bail!("section [calibrate]: noise_rms_ns must be >= 0");
                }
            }
            Experiment::Impedance => {
                let s = &self.impedance;
                if s.sweep_path.is_none()
                    && !(s.f_start > 0.0 && s.f_start < s.f_stop && s.n_points >= 2)
                {
                    anyhow::bail!(
                        "section [impedance]: need 0 < f_start < f_stop and n_points >= 2"
                    );
                }
                if s.limit_ohms <= 0.0 {
                    anyhow::bail!("section [impedance]: limit_ohms must be > 0");
                }
            }
            Experiment::TofCt => {
                let s = &self.tofct;
                s.source.validate().context("section [tofct.source]")?;
                s.scintillator
                    .validate()
                    .context("section [tofct.scintillator]")?;
                s.geometry.validate().context("section [tofct.geometry]")?;
                if s.n_events == 0 || s.timing_fwhm < 0.0 || s.histogram_bin <= 0.0 {
                    anyhow::bail!(
                        "section [tofct]: n_events, timing_fwhm, histogram_bin out of range"
                    );
                }
                if s.window_before + s.window_after <= 0.0 {
                    anyhow::bail!("section [tofct]: acceptance window is empty");
                }
            }
            Experiment::Spectrum => {
                analog()?;
                let s = &self.spectrum;
                if s.duration <= 0.0 || s.tot_bins == 0 || s.span <= 0.0 {
                    anyhow::bail!("section [spectrum]: duration, span, tot_bins must be > 0");
                }
                if s.scan_thresholds.windows(2).any(|w| w[0] >= w[1]) {
                    anyhow::bail!("section [spectrum]: scan_thresholds must be ascending");
                }
            }
        }
        Ok(())
    }
}
