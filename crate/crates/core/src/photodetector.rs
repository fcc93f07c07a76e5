//! SPAD firing-event generation and summed avalanche current pulses.
//!
//! Dark counts are a homogeneous Poisson process with rate
//! `dark_rate_density * active_area`; photon detection is Bernoulli thinning
//! at the configured PDE. Every generator is deterministic for a given
//! `(seed, stream)` pair so batch acquisitions can run in parallel and still
//! reproduce bit-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhotodetectorError {
    #[error("duration must be positive, got {0} s")]
    NonPositiveDuration(f64),
    #[error("bias voltage {bias} V is below breakdown voltage {breakdown} V")]
    BiasBelowBreakdown { bias: f64, breakdown: f64 },
    #[error("invalid SiPM config: {0}")]
    InvalidConfig(String),
}

/// Device parameters of the SiPM under simulation.
///
/// Defaults match the 2x2 mm device used throughout: 32.5 V breakdown,
/// 16 V maximum overvoltage, 160 pF terminal capacitance, and a dark rate
/// density of 125 kcounts/s/mm2 at 40 V bias. The dark rate is carried as an
/// explicit per-bias-point number, not a rate-vs-bias curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SipmConfig {
    /// Active area in mm2.
    pub active_area_mm2: f64,
    pub breakdown_voltage: f64,
    pub max_overvoltage: f64,
    pub bias_voltage: f64,
    /// Terminal (parasitic) capacitance in farads.
    pub terminal_capacitance: f64,
    /// Dark count rate density in counts/s/mm2.
    pub dark_rate_density: f64,
    /// Photon detection efficiency in [0, 1].
    pub pde: f64,
    /// Peak avalanche current per fired cell per volt of overvoltage, A/V.
    pub single_cell_charge_gain: f64,
    pub pulse_rise_time: f64,
    pub pulse_decay_time: f64,
    /// Intrinsic SPAD transit-time jitter, FWHM in seconds.
    pub intrinsic_transit_jitter_fwhm: f64,
}

impl Default for SipmConfig {
    fn default() -> Self {
        Self {
            active_area_mm2: 4.0,
            breakdown_voltage: 32.5,
            max_overvoltage: 16.0,
            bias_voltage: 40.0,
            terminal_capacitance: 160e-12,
            dark_rate_density: 125e3,
            pde: 0.25,
            single_cell_charge_gain: 10e-6,
            pulse_rise_time: 1e-9,
            pulse_decay_time: 50e-9,
            intrinsic_transit_jitter_fwhm: 100e-12,
        }
    }
}

impl SipmConfig {
    pub fn validate(&self) -> Result<(), PhotodetectorError> {
        if self.bias_voltage < self.breakdown_voltage {
            return Err(PhotodetectorError::BiasBelowBreakdown {
                bias: self.bias_voltage,
                breakdown: self.breakdown_voltage,
            });
        }
        if self.bias_voltage - self.breakdown_voltage > self.max_overvoltage {
            return Err(PhotodetectorError::InvalidConfig(format!(
                "overvoltage {} V exceeds maximum {} V",
                self.bias_voltage - self.breakdown_voltage,
                self.max_overvoltage
            )));
        }
        if !(0.0..=1.0).contains(&self.pde) {
            return Err(PhotodetectorError::InvalidConfig(format!(
                "pde {} outside [0, 1]",
                self.pde
            )));
        }
        if self.dark_rate_density < 0.0 {
            return Err(PhotodetectorError::InvalidConfig(
                "dark_rate_density must be >= 0".into(),
            ));
        }
        for (name, v) in [
            ("active_area_mm2", self.active_area_mm2),
            ("terminal_capacitance", self.terminal_capacitance),
            ("pulse_rise_time", self.pulse_rise_time),
            ("pulse_decay_time", self.pulse_decay_time),
        ] {
            if v <= 0.0 {
                return Err(PhotodetectorError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.intrinsic_transit_jitter_fwhm < 0.0 {
            return Err(PhotodetectorError::InvalidConfig(
                "intrinsic_transit_jitter_fwhm must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Bias above breakdown, in volts.
    pub fn overvoltage(&self) -> f64 {
        self.bias_voltage - self.breakdown_voltage
    }

    /// Expected number of dark counts over `duration` seconds.
    pub fn expected_dark_counts(&self, duration: f64) -> f64 {
        self.dark_rate_density * self.active_area_mm2 * duration
    }
}

/// What triggered a SPAD firing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhotonOrigin {
    LaserPulse,
    DarkCount,
    Scintillation,
}

/// A timestamped SPAD-fire record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent {
    /// Absolute time within the acquisition, seconds.
    pub time: f64,
    pub origin: PhotonOrigin,
    pub n_cells_fired: u32,
}

/// One avalanche pulse: fire time and peak current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentPulse {
    pub fire_time: f64,
    pub peak_current: f64,
}

/// Summed avalanche current: a train of difference-of-exponential pulses
/// sharing the rise/decay constants of the SiPM.
#[derive(Debug, Clone)]
pub struct CurrentPulseTrain {
    pub events: Vec<CurrentPulse>,
    pub rise_time: f64,
    pub decay_time: f64,
    /// Peak value of the unnormalized shape exp(-t/decay) - exp(-t/rise).
    shape_peak: f64,
}

impl CurrentPulseTrain {
    fn new(events: Vec<CurrentPulse>, rise_time: f64, decay_time: f64) -> Self {
        // Peak of exp(-t/decay) - exp(-t/rise) occurs at
        // t* = rise*decay/(decay-rise) * ln(decay/rise).
        let shape_peak = if (decay_time - rise_time).abs() < f64::EPSILON * decay_time {
            // Degenerate limit t*exp(-t/tau)/tau peaks at 1/e.
            (-1.0f64).exp()
        } else {
            let t_star =
                rise_time * decay_time / (decay_time - rise_time) * (decay_time / rise_time).ln();
            (-t_star / decay_time).exp() - (-t_star / rise_time).exp()
        };
        Self {
            events,
            rise_time,
            decay_time,
            shape_peak,
        }
    }

    /// Summed current at absolute time `t`, in amperes.
    pub fn current_at(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for p in &self.events {
            let dt = t - p.fire_time;
            if dt <= 0.0 {
                continue;
            }
            // Pulses are causal and sorted; once a pulse has fully decayed
            // relative to t it still contributes, so no early exit on time.
            let shape = (-dt / self.decay_time).exp() - (-dt / self.rise_time).exp();
            total += p.peak_current * shape / self.shape_peak;
        }
        total
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Earliest fire time, if any pulse exists.
    pub fn first_fire_time(&self) -> Option<f64> {
        self.events.first().map(|p| p.fire_time)
    }
}

/// RNG for acquisition stream `stream` under master seed `seed`.
///
/// Distinct streams under the same seed are statistically independent, which
/// keeps parallel batch generation reproducible regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate dark counts over `duration` seconds as a homogeneous Poisson
/// process with rate `dark_rate_density * active_area`.
pub fn generate_dark_events(
    config: &SipmConfig,
    duration: f64,
    seed: u64,
) -> Result<Vec<PhotonEvent>, PhotodetectorError> {
    config.validate()?;
    if duration <= 0.0 {
        return Err(PhotodetectorError::NonPositiveDuration(duration));
    }
    let rate = config.dark_rate_density * config.active_area_mm2;
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = stream_rng(seed, 0);
    let exp = Exp::new(rate).expect("rate > 0");
    let mut events = Vec::with_capacity((rate * duration * 1.1) as usize + 16);
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        if t >= duration {
            break;
        }
        events.push(PhotonEvent {
            time: t,
            origin: PhotonOrigin::DarkCount,
            n_cells_fired: 1,
        });
    }
    Ok(events)
}

/// Bernoulli-thin incident photons at the configured PDE.
///
/// Realizes neutral-density attenuation plus detection efficiency; ordering
/// of the surviving events is preserved.
pub fn detect_photons(config: &SipmConfig, incident: &[PhotonEvent], seed: u64) -> Vec<PhotonEvent> {
    let mut rng = stream_rng(seed, 1);
    incident
        .iter()
        .filter(|_| rng.random::<f64>() < config.pde)
        .copied()
        .collect()
}

/// Convert fired events into a summed avalanche current pulse train.
///
/// Peak current is linear in the number of fired cells and in the
/// overvoltage: `n_cells * single_cell_charge_gain * (bias - breakdown)`.
pub fn avalanche_current(
    config: &SipmConfig,
    fires: &[PhotonEvent],
) -> Result<CurrentPulseTrain, PhotodetectorError> {
    if config.bias_voltage < config.breakdown_voltage {
        return Err(PhotodetectorError::BiasBelowBreakdown {
            bias: config.bias_voltage,
            breakdown: config.breakdown_voltage,
        });
    }
    let overvoltage = config.overvoltage();
    let events = fires
        .iter()
        .map(|e| CurrentPulse {
            fire_time: e.time,
            peak_current: e.n_cells_fired as f64 * config.single_cell_charge_gain * overvoltage,
        })
        .collect();
    Ok(CurrentPulseTrain::new(
        events,
        config.pulse_rise_time,
        config.pulse_decay_time,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SipmConfig {
        SipmConfig::default()
    }

    #[test]
    fn dark_expectation_matches_rated_density() {
        // 125 kcounts/s/mm2 * 4 mm2 * 30 s
        assert_eq!(cfg().expected_dark_counts(30.0), 15_000_000.0);
    }

    #[test]
    fn zero_rate_process_is_empty() {
        let mut c = cfg();
        c.dark_rate_density = 0.0;
        assert!(generate_dark_events(&c, 1.0, 7).unwrap().is_empty());
    }

    #[test]
    fn non_positive_duration_rejected() {
        assert!(matches!(
            generate_dark_events(&cfg(), 0.0, 1),
            Err(PhotodetectorError::NonPositiveDuration(_))
        ));
    }

    #[test]
    fn dark_events_sorted_and_deterministic() {
        let mut c = cfg();
        c.dark_rate_density = 1e6;
        let a = generate_dark_events(&c, 1e-3, 42).unwrap();
        let b = generate_dark_events(&c, 1e-3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        let other = generate_dark_events(&c, 1e-3, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn dark_count_poisson_mean_within_five_sigma() {
        // lambda*t = 10^4 per acquisition, 100 seeds. The sample mean of a
        // Poisson(10^4) over 100 draws has standard error sqrt(10^4/100) = 10.
        let mut c = cfg();
        c.dark_rate_density = 1e7; // 1e7 * 4 mm2 * 0.25 ms = 1e4
        let duration = 0.25e-3;
        let lambda_t = c.expected_dark_counts(duration);
        assert_eq!(lambda_t, 1e4);
        let n_seeds = 100;
        let total: usize = (0..n_seeds)
            .map(|s| generate_dark_events(&c, duration, s).unwrap().len())
            .sum();
        let mean = total as f64 / n_seeds as f64;
        let standard_error = (lambda_t / n_seeds as f64).sqrt();
        assert!(
            (mean - lambda_t).abs() < 5.0 * standard_error,
            "mean {mean} vs expectation {lambda_t}"
        );
    }

    #[test]
    fn dark_interarrivals_pass_exponential_ks_test() {
        let mut c = cfg();
        c.dark_rate_density = 1e7;
        let duration = 0.5e-3; // lambda*t = 2e4
        let events = generate_dark_events(&c, duration, 9).unwrap();
        let rate = c.dark_rate_density * c.active_area_mm2;
        let mut gaps: Vec<f64> = Vec::with_capacity(events.len());
        let mut prev = 0.0;
        for e in &events {
            gaps.push(e.time - prev);
            prev = e.time;
        }
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = gaps.len() as f64;
        let mut d_stat = 0.0f64;
        for (i, g) in gaps.iter().enumerate() {
            let f = 1.0 - (-rate * g).exp();
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d_stat = d_stat.max((f - lo).abs()).max((hi - f).abs());
        }
        // Asymptotic critical value at alpha = 0.01.
        let critical = 1.628 / n.sqrt();
        assert!(d_stat < critical, "KS statistic {d_stat} >= {critical}");
    }

    #[test]
    fn pde_one_is_identity_thinning() {
        let mut c = cfg();
        c.pde = 1.0;
        let incident: Vec<PhotonEvent> = (0..100)
            .map(|i| PhotonEvent {
                time: i as f64 * 1e-9,
                origin: PhotonOrigin::LaserPulse,
                n_cells_fired: 1,
            })
            .collect();
        assert_eq!(detect_photons(&c, &incident, 3), incident);
    }

    #[test]
    fn pde_zero_is_empty() {
        let mut c = cfg();
        c.pde = 0.0;
        let incident = vec![PhotonEvent {
            time: 0.0,
            origin: PhotonOrigin::LaserPulse,
            n_cells_fired: 1,
        }];
        assert!(detect_photons(&c, &incident, 3).is_empty());
    }

    #[test]
    fn thinning_matches_binomial_statistics() {
        // N = 40_000, p = 0.25: mean 10_000, sigma = sqrt(N p (1-p)).
        let mut c = cfg();
        c.pde = 0.25;
        let incident: Vec<PhotonEvent> = (0..40_000)
            .map(|i| PhotonEvent {
                time: i as f64 * 1e-9,
                origin: PhotonOrigin::LaserPulse,
                n_cells_fired: 1,
            })
            .collect();
        let sigma = (40_000.0f64 * 0.25 * 0.75).sqrt();
        let n_seeds = 50;
        let mean = (0..n_seeds)
            .map(|s| detect_photons(&c, &incident, s).len())
            .sum::<usize>() as f64
            / n_seeds as f64;
        let standard_error = sigma / (n_seeds as f64).sqrt();
        assert!((mean - 10_000.0).abs() < 5.0 * standard_error);
    }

    #[test]
    fn empty_fires_give_empty_train() {
        let train = avalanche_current(&cfg(), &[]).unwrap();
        assert!(train.is_empty());
        assert_eq!(train.current_at(1e-9), 0.0);
    }

    #[test]
    fn peak_current_linear_in_cells() {
        let c = cfg();
        let fires = [
            PhotonEvent {
                time: 0.0,
                origin: PhotonOrigin::DarkCount,
                n_cells_fired: 1,
            },
            PhotonEvent {
                time: 1e-6,
                origin: PhotonOrigin::DarkCount,
                n_cells_fired: 2,
            },
        ];
        let train = avalanche_current(&c, &fires).unwrap();
        assert_eq!(
            train.events[1].peak_current,
            2.0 * train.events[0].peak_current
        );
    }

    #[test]
    fn peak_current_linear_in_overvoltage() {
        let fire = [PhotonEvent {
            time: 0.0,
            origin: PhotonOrigin::DarkCount,
            n_cells_fired: 1,
        }];
        let mut lo = cfg();
        lo.bias_voltage = lo.breakdown_voltage + 7.5;
        let mut hi = cfg();
        hi.bias_voltage = hi.breakdown_voltage + 15.0;
        let p_lo = avalanche_current(&lo, &fire).unwrap().events[0].peak_current;
        let p_hi = avalanche_current(&hi, &fire).unwrap().events[0].peak_current;
        assert!((p_hi / p_lo - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bias_below_breakdown_rejected() {
        let mut c = cfg();
        c.bias_voltage = 30.0;
        assert!(matches!(
            avalanche_current(&c, &[]),
            Err(PhotodetectorError::BiasBelowBreakdown { .. })
        ));
    }

    #[test]
    fn pulse_peak_equals_configured_peak_current() {
        let c = cfg();
        let fires = [PhotonEvent {
            time: 0.0,
            origin: PhotonOrigin::DarkCount,
            n_cells_fired: 1,
        }];
        let train = avalanche_current(&c, &fires).unwrap();
        let expected_peak = c.single_cell_charge_gain * c.overvoltage();
        // Sample finely around the analytic peak time.
        let max = (0..20_000)
            .map(|i| train.current_at(i as f64 * 20e-12))
            .fold(f64::MIN, f64::max);
        assert!((max - expected_peak).abs() / expected_peak < 1e-4);
    }
}
