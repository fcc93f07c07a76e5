//! Small-signal model of the readout channel.
//!
//! The preamplifier is modeled by its input impedance (dual internal
//! feedback: flipped voltage follower plus a regulated-cascode gm boost), a
//! transimpedance DC gain `N * R_L` that is independent of the impedance
//! knobs, a single collapsed internal pole, and a bypass-capacitor high-pass
//! that restores the baseline between pulses. The comparator is behavioral:
//! threshold crossing with linear interpolation and noise-over-slope timing
//! jitter.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photodetector::{stream_rng, CurrentPulseTrain};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("invalid preamp config: {0}")]
    InvalidConfig(String),
    #[error("sample period {period} s undersamples bandwidth limit {bandwidth} Hz")]
    Undersampled { period: f64, bandwidth: f64 },
}

/// Small-signal parameters of the preamplifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreampConfig {
    /// Input-device transconductance, siemens.
    pub gm1: f64,
    /// Follower transconductance, siemens.
    pub gm2: f64,
    /// Feedback-device transconductance, siemens.
    pub gmf: f64,
    /// Feedback resistor, ohms.
    pub r_f: f64,
    /// Small-signal resistance of the first bias current source, ohms.
    pub r_b1: f64,
    /// Current-mirror size ratio N.
    pub mirror_ratio_n: f64,
    /// Load resistor, ohms.
    pub r_load: f64,
    /// Single-pole stand-in for all internal poles, Hz.
    pub bandwidth_limit: f64,
    /// High-pass corner of the bypass capacitor against the diode-connected
    /// bias device, Hz. Default 1.6 MHz (~100 ns time constant) restores the
    /// baseline quickly without clipping single-photon ToT.
    pub bypass_corner: f64,
}

impl Default for PreampConfig {
    fn default() -> Self {
        Self {
            gm1: 10e-3,
            gm2: 10e-3,
            gmf: 10e-3,
            r_f: 1e3,
            r_b1: 10e3,
            mirror_ratio_n: 8.0,
            r_load: 500.0,
            bandwidth_limit: 1e9,
            bypass_corner: 1.6e6,
        }
    }
}

impl PreampConfig {
    pub fn validate(&self) -> Result<(), FrontendError> {
        for (name, v) in [
            ("gm1", self.gm1),
            ("gm2", self.gm2),
            ("gmf", self.gmf),
            ("r_b1", self.r_b1),
            ("r_load", self.r_load),
            ("bandwidth_limit", self.bandwidth_limit),
            ("bypass_corner", self.bypass_corner),
        ] {
            if v <= 0.0 {
                return Err(FrontendError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.r_f < 0.0 {
            return Err(FrontendError::InvalidConfig("r_f must be >= 0".into()));
        }
        if self.mirror_ratio_n < 1.0 {
            return Err(FrontendError::InvalidConfig(
                "mirror_ratio_n must be >= 1".into(),
            ));
        }
        if self.bypass_corner >= self.bandwidth_limit {
            return Err(FrontendError::InvalidConfig(
                "bypass_corner must be below bandwidth_limit".into(),
            ));
        }
        Ok(())
    }
}

/// Behavioral comparator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparatorConfig {
    pub threshold: f64,
    /// Input-referred RMS noise, volts.
    pub noise_rms: f64,
    /// Digital-stage resolution floor; hits narrower than this are dropped.
    pub min_pulse_width: f64,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            threshold: 10e-3,
            noise_rms: 0.0,
            min_pulse_width: 100e-12,
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self) -> Result<(), FrontendError> {
        if self.threshold <= 0.0 {
            return Err(FrontendError::InvalidConfig(
                "comparator threshold must be > 0".into(),
            ));
        }
        if self.noise_rms < 0.0 {
            return Err(FrontendError::InvalidConfig(
                "comparator noise_rms must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogWaveform {
    /// Absolute time of sample 0, seconds.
    pub t0: f64,
    pub sample_period: f64,
    pub samples: Vec<f64>,
}

impl AnalogWaveform {
    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.sample_period
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Debug dump as CSV with a `time_s,volts` header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,volts")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.time_at(i), v)?;
        }
        Ok(())
    }
}

/// Comparator output: leading-edge timestamp plus time-over-threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitalHit {
    pub leading_edge: f64,
    pub tot: f64,
}

/// Input impedance of the preamplifier,
/// `1 / (gm1 * gm2 * R_B1 * (1 + gmf * R_f))`.
///
/// The expression has no negative term, so the result is strictly positive
/// for any valid config; no tuning against instability is needed.
pub fn input_impedance(cfg: &PreampConfig) -> f64 {
    1.0 / (cfg.gm1 * cfg.gm2 * cfg.r_b1 * (1.0 + cfg.gmf * cfg.r_f))
}

/// DC transimpedance gain `N * R_L`, decoupled from the impedance knobs.
pub fn transimpedance_gain(cfg: &PreampConfig) -> f64 {
    cfg.mirror_ratio_n * cfg.r_load
}

/// Frequency of the pole formed by the detector capacitance against the
/// preamp input impedance: `1 / (2 pi R_in C)`.
pub fn input_pole_frequency(cfg: &PreampConfig, c_sipm: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * input_impedance(cfg) * c_sipm)
}

/// Effective low-pass cutoff of the channel: whichever of the detector input
/// pole and the internal bandwidth limit comes first.
pub fn effective_bandwidth(cfg: &PreampConfig, c_sipm: f64) -> f64 {
    cfg.bandwidth_limit.min(input_pole_frequency(cfg, c_sipm))
}

fn one_pole_low_pass(samples: &mut [f64], cutoff: f64, dt: f64) {
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff * dt).exp();
    let mut y = 0.0;
    for s in samples.iter_mut() {
        y += alpha * (*s - y);
        *s = y;
    }
}

fn one_pole_high_pass(samples: &mut [f64], cutoff: f64, dt: f64) {
    let r = (-2.0 * std::f64::consts::PI * cutoff * dt).exp();
    let mut y = 0.0;
    let mut x_prev = 0.0;
    for s in samples.iter_mut() {
        y = r * (y + *s - x_prev);
        x_prev = *s;
        *s = y;
    }
}

const PRE_TRIGGER_SAMPLES: usize = 16;

fn sample_grid(train: &CurrentPulseTrain, sample_period: f64, span: f64) -> (f64, usize) {
    let t0 = train
        .first_fire_time()
        .map(|t| t - PRE_TRIGGER_SAMPLES as f64 * sample_period)
        .unwrap_or(0.0);
    let n = (span / sample_period).ceil() as usize;
    (t0, n)
}

/// Shape a current pulse train into the preamp output voltage.
///
/// Chain: transimpedance gain, single-pole low-pass at the effective
/// bandwidth, single-pole high-pass at the bypass corner. The high-pass
/// blocks DC, so the baseline returns to zero between well-separated pulses.
pub fn shape_pulse(
    train: &CurrentPulseTrain,
    cfg: &PreampConfig,
    c_sipm: f64,
    sample_period: f64,
    span: f64,
) -> Result<AnalogWaveform, FrontendError> {
    cfg.validate()?;
    if sample_period > 1.0 / (10.0 * cfg.bandwidth_limit) {
        return Err(FrontendError::Undersampled {
            period: sample_period,
            bandwidth: cfg.bandwidth_limit,
        });
    }
    let gain = transimpedance_gain(cfg);
    let (t0, n) = sample_grid(train, sample_period, span);
    let mut samples: Vec<f64> = (0..n)
        .map(|i| gain * train.current_at(t0 + i as f64 * sample_period))
        .collect();
    one_pole_low_pass(&mut samples, effective_bandwidth(cfg, c_sipm), sample_period);
    one_pole_high_pass(&mut samples, cfg.bypass_corner, sample_period);
    Ok(AnalogWaveform {
        t0,
        sample_period,
        samples,
    })
}

/// Leaky-integrator energy channel.
///
/// For pulses much shorter than `integrator_tau` the waveform peak is
/// proportional to the total pulse charge.
pub fn energy_channel_shape(
    train: &CurrentPulseTrain,
    integrator_tau: f64,
    sample_period: f64,
    span: f64,
) -> AnalogWaveform {
    let leak = (-sample_period / integrator_tau).exp();
    let (t0, n) = sample_grid(train, sample_period, span);
    let mut samples = Vec::with_capacity(n);
    let mut y = 0.0;
    for i in 0..n {
        y = y * leak + train.current_at(t0 + i as f64 * sample_period) * sample_period;
        samples.push(y);
    }
    AnalogWaveform {
        t0,
        sample_period,
        samples,
    }
}

/// Leading-edge discriminator over a sampled waveform.
///
/// The leading edge is the first upward threshold crossing, linearly
/// interpolated between samples; timing jitter is drawn gaussian with
/// `sigma = noise_rms / slope` at the crossing. ToT runs to the matching
/// downward crossing; hits narrower than `min_pulse_width` are dropped, as
/// are pulses still above threshold when the waveform ends.
pub fn discriminate(wave: &AnalogWaveform, cfg: &ComparatorConfig, seed: u64) -> Vec<DigitalHit> {
    let dt = wave.sample_period;
    let mut rng = stream_rng(seed, 2);
    let mut hits = Vec::new();
    let mut i = 0;
    let n = wave.samples.len();
    while i + 1 < n {
        let (a, b) = (wave.samples[i], wave.samples[i + 1]);
        if a < cfg.threshold && b >= cfg.threshold {
            let frac = (cfg.threshold - a) / (b - a);
            let rising_edge = wave.time_at(i) + frac * dt;
            let slope = (b - a) / dt;
            // Find the downward crossing.
            let mut j = i + 1;
            let mut falling_edge = None;
            while j + 1 < n {
                let (c, d) = (wave.samples[j], wave.samples[j + 1]);
                if c >= cfg.threshold && d < cfg.threshold {
                    let f = (c - cfg.threshold) / (c - d);
                    falling_edge = Some(wave.time_at(j) + f * dt);
                    break;
                }
                j += 1;
            }
            if let Some(fall) = falling_edge {
                let jitter = if cfg.noise_rms > 0.0 && slope > 0.0 {
                    Normal::new(0.0, cfg.noise_rms / slope)
                        .expect("sigma finite")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                let tot = fall - rising_edge;
                if tot >= cfg.min_pulse_width {
                    hits.push(DigitalHit {
                        leading_edge: rising_edge + jitter,
                        tot,
                    });
                }
                i = j + 1;
                continue;
            }
            break; // pulse never terminates inside the waveform
        }
        i += 1;
    }
    hits
}
