//! Toy Monte Carlo of pulsed X-ray time-of-flight CT.
//!
//! A Kramers-form Bremsstrahlung source fires at t = 0; each photon either
//! flies straight to the detector or single-scatters, picking up extra path
//! length (hence delay) and losing energy to a Compton-proxy factor. The
//! time window then separates late scattered photons from primaries and the
//! scattered-to-primary ratio quantifies how well.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photodetector::{stream_rng, PhotonEvent, PhotonOrigin};
use crate::{FWHM_PER_SIGMA, SPEED_OF_LIGHT};

#[derive(Debug, Error)]
pub enum TofCtError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("SPR undefined: no primary events")]
    NoPrimaries,
}

/// Pulsed Bremsstrahlung source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct XraySourceConfig {
    /// Tube voltage in kV; the spectrum endpoint in keV.
    pub kvp: f64,
    /// Source pulse width, FWHM in seconds.
    pub pulse_fwhm: f64,
    pub rep_rate: f64,
    /// Proxy for tube current: average photons per pulse.
    pub mean_photons_per_pulse: f64,
    /// Low-energy cutoff of the sampled spectrum, keV.
    pub e_min: f64,
}

impl Default for XraySourceConfig {
    fn default() -> Self {
        Self {
            kvp: 120.0,
            pulse_fwhm: 100e-12,
            rep_rate: 2e6,
            mean_photons_per_pulse: 1.0,
            e_min: 10.0,
        }
    }
}

impl XraySourceConfig {
    pub fn validate(&self) -> Result<(), TofCtError> {
        if self.kvp <= 0.0 || self.pulse_fwhm <= 0.0 {
            return Err(TofCtError::InvalidConfig(
                "kvp and pulse_fwhm must be > 0".into(),
            ));
        }
        if self.e_min <= 0.0 || self.e_min >= self.kvp {
            return Err(TofCtError::InvalidConfig(
                "e_min must lie in (0, kvp)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScintillatorKind {
    Lyso,
    Mqw,
}

/// Scintillator light emission parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScintillatorConfig {
    pub kind: ScintillatorKind,
    pub decay_time: f64,
    pub rise_time: f64,
    /// Photons per keV of deposited energy.
    pub light_yield: f64,
    /// Crystal dimensions in mm.
    pub dimensions_mm: [f64; 3],
    /// Scintillator-to-SiPM coupling; unpublished, default 0.1.
    pub collection_efficiency: f64,
}

impl Default for ScintillatorConfig {
    fn default() -> Self {
        Self {
            kind: ScintillatorKind::Lyso,
            decay_time: 40e-9,
            rise_time: 0.1e-9,
            light_yield: 33.0,
            dimensions_mm: [4.0, 4.0, 3.0],
            collection_efficiency: 0.1,
        }
    }
}

impl ScintillatorConfig {
    pub fn validate(&self) -> Result<(), TofCtError> {
        if !(self.decay_time > self.rise_time && self.rise_time > 0.0) {
            return Err(TofCtError::InvalidConfig(
                "need decay_time > rise_time > 0".into(),
            ));
        }
        if self.light_yield < 0.0 || self.collection_efficiency <= 0.0 {
            return Err(TofCtError::InvalidConfig(
                "light_yield must be >= 0 and collection_efficiency > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Flight geometry and the single-scatter model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub source_detector_distance: f64,
    /// Mean extra path length of a scattered photon, meters.
    pub scatter_extra_path_mean: f64,
    /// Gaussian spread of the extra path, meters (clamped at zero).
    pub scatter_extra_path_spread: f64,
    pub scatter_fraction: f64,
    /// Compton-proxy energy retention drawn uniform in this range.
    pub compton_retain_min: f64,
    pub compton_retain_max: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            source_detector_distance: 1.0,
            scatter_extra_path_mean: 0.15,
            scatter_extra_path_spread: 0.05,
            scatter_fraction: 0.3,
            compton_retain_min: 0.5,
            compton_retain_max: 0.95,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), TofCtError> {
        if self.source_detector_distance <= 0.0 {
            return Err(TofCtError::InvalidConfig("distance must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) {
            return Err(TofCtError::InvalidConfig(
                "scatter_fraction must be in [0, 1]".into(),
            ));
        }
        if self.scatter_extra_path_mean < 0.0 {
            return Err(TofCtError::InvalidConfig(
                "scatter_extra_path_mean must be >= 0".into(),
            ));
        }
        if !(0.0 < self.compton_retain_min
            && self.compton_retain_min <= self.compton_retain_max
            && self.compton_retain_max <= 1.0)
        {
            return Err(TofCtError::InvalidConfig(
                "compton retention range must satisfy 0 < min <= max <= 1".into(),
            ));
        }
        Ok(())
    }

    /// Flight time of an unscattered photon, seconds.
    pub fn primary_flight_time(&self) -> f64 {
        self.source_detector_distance / SPEED_OF_LIGHT
    }
}

/// One detected X-ray photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofEvent {
    /// Arrival at the detector relative to the source pulse, seconds.
    pub arrival_time: f64,
    pub energy_kev: f64,
    pub scattered: bool,
}

/// A ToF event with the time the acquisition chain actually measured
/// (arrival plus system timing jitter).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedEvent {
    pub event: TofEvent,
    pub measured_time: f64,
}

/// Kramers-form density (kvp - E)/E, unnormalized, on `[e_min, kvp]`.
pub fn bremsstrahlung_density(e: f64, cfg: &XraySourceConfig) -> f64 {
    if e < cfg.e_min || e > cfg.kvp {
        return 0.0;
    }
    (cfg.kvp - e) / e
}

/// Draw one photon energy from the Kramers-form spectrum.
///
/// Rejection sampling under a 1/E envelope: the envelope inverts in closed
/// form and the acceptance ratio is (kvp - E)/kvp.
pub fn sample_bremsstrahlung<R: Rng + ?Sized>(cfg: &XraySourceConfig, rng: &mut R) -> f64 {
    let log_ratio = (cfg.kvp / cfg.e_min).ln();
    loop {
        let e = cfg.e_min * (rng.random::<f64>() * log_ratio).exp();
        if rng.random::<f64>() < (cfg.kvp - e) / cfg.kvp {
            return e;
        }
    }
}

/// Simulate one photon of the pulse fired at t = 0.
pub fn simulate_event_with<R: Rng + ?Sized>(
    g: &GeometryConfig,
    src: &XraySourceConfig,
    rng: &mut R,
) -> TofEvent {
    let jitter = Normal::new(0.0, src.pulse_fwhm / FWHM_PER_SIGMA)
        .expect("finite sigma")
        .sample(rng);
    let mut energy = sample_bremsstrahlung(src, rng);
    let scattered = rng.random::<f64>() < g.scatter_fraction;
    let path = if scattered {
        let extra = if g.scatter_extra_path_spread > 0.0 {
            Normal::new(g.scatter_extra_path_mean, g.scatter_extra_path_spread)
                .expect("finite sigma")
                .sample(rng)
                .max(0.0)
        } else {
            g.scatter_extra_path_mean
        };
        energy *= if g.compton_retain_max > g.compton_retain_min {
            rng.random_range(g.compton_retain_min..g.compton_retain_max)
        } else {
            g.compton_retain_min
        };
        g.source_detector_distance + extra
    } else {
        g.source_detector_distance
    };
    TofEvent {
        arrival_time: path / SPEED_OF_LIGHT + jitter,
        energy_kev: energy,
        scattered,
    }
}

/// Seeded single-event convenience wrapper.
pub fn simulate_event(g: &GeometryConfig, src: &XraySourceConfig, seed: u64) -> TofEvent {
    simulate_event_with(g, src, &mut stream_rng(seed, 3))
}

/// Simulate `n` photons deterministically under one seed.
pub fn simulate_events(
    g: &GeometryConfig,
    src: &XraySourceConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<TofEvent>, TofCtError> {
    g.validate()?;
    src.validate()?;
    let mut rng = stream_rng(seed, 3);
    Ok((0..n).map(|_| simulate_event_with(g, src, &mut rng)).collect())
}

/// Convert an absorbed X-ray into scintillation photons.
///
/// Photon count is Poisson in `light_yield * energy * collection_efficiency`;
/// emission times follow the bi-exponential pulse (the sum of an
/// exponential rise delay and an exponential decay delay).
pub fn scintillate<R: Rng + ?Sized>(
    e: &TofEvent,
    s: &ScintillatorConfig,
    rng: &mut R,
) -> Vec<PhotonEvent> {
    let mean = s.light_yield * e.energy_kev * s.collection_efficiency;
    if mean <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("mean > 0").sample(rng) as usize;
    let rise = Exp::new(1.0 / s.rise_time).expect("rate > 0");
    let decay = Exp::new(1.0 / s.decay_time).expect("rate > 0");
    let mut photons: Vec<PhotonEvent> = (0..n)
        .map(|_| PhotonEvent {
            time: e.arrival_time + rise.sample(rng) + decay.sample(rng),
            origin: PhotonOrigin::Scintillation,
            n_cells_fired: 1,
        })
        .collect();
    photons.sort_by(|a, b| a.time.total_cmp(&b.time));
    photons
}

/// Apply system timing jitter to arrivals, producing measured times.
pub fn measure_events<R: Rng + ?Sized>(
    events: &[TofEvent],
    timing_fwhm: f64,
    rng: &mut R,
) -> Vec<DetectedEvent> {
    if timing_fwhm <= 0.0 {
        return events
            .iter()
            .map(|&event| DetectedEvent {
                event,
                measured_time: event.arrival_time,
            })
            .collect();
    }
    let normal = Normal::new(0.0, timing_fwhm / FWHM_PER_SIGMA).expect("finite sigma");
    events
        .iter()
        .map(|&event| DetectedEvent {
            event,
            measured_time: event.arrival_time + normal.sample(rng),
        })
        .collect()
}

/// Keep events whose measured time falls inside `[t_lo, t_hi]`.
pub fn tof_filter(events: &[DetectedEvent], window: (f64, f64)) -> Vec<DetectedEvent> {
    debug_assert!(window.0 < window.1, "window must be ordered");
    events
        .iter()
        .filter(|e| (window.0..=window.1).contains(&e.measured_time))
        .copied()
        .collect()
}

/// Scattered-to-primary ratio of an event set.
pub fn spr(events: &[DetectedEvent]) -> Result<f64, TofCtError> {
    let scattered = events.iter().filter(|e| e.event.scattered).count();
    let primary = events.len() - scattered;
    if primary == 0 {
        return Err(TofCtError::NoPrimaries);
    }
    Ok(scattered as f64 / primary as f64)
}

/// Percent reduction of the SPR going from `before` to `after`:
/// `(1 - spr_after / spr_before) * 100`.
pub fn spr_reduction(before: &[DetectedEvent], after: &[DetectedEvent]) -> Result<f64, TofCtError> {
    let spr_before = spr(before)?;
    let spr_after = spr(after)?;
    if spr_before == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - spr_after / spr_before) * 100.0)
}
