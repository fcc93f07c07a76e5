//! Experiment implementations: each takes a validated scenario and returns a
//! serializable result record plus any histograms worth plotting.

use std::path::Path;

use anyhow::Context;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use sipmsim::analysis::{
    fwhm, single_photon_tot, threshold_scan, verify_dark_rate, FwhmMethod, DEFAULT_MIN_PROMINENCE,
};
use sipmsim::calibration::{
    fit, group_by_setting, initial_guess, invert, parse_dataset_csv, reference_sources, tot_model,
    CalibrationDataset, CalibrationModel, CalibrationPoint, CalibrationSetting,
};
use sipmsim::frontend::{discriminate, shape_pulse, AnalogWaveform};
use sipmsim::impedance::{
    osl_correct, parse_sweep_csv, parse_touchstone, s11_to_impedance, summarize_below,
    impedance_to_s11, ImpedancePoint, ImpedanceSpectrum, ReflectionSweep,
};
use sipmsim::photodetector::{
    avalanche_current, generate_dark_events, stream_rng, PhotonEvent, PhotonOrigin,
};
use sipmsim::tdc::{measure_delta_t, tot_code, DeltaTReading, Histogram};
use sipmsim::tofct::{scintillate, simulate_events, spr, spr_reduction, tof_filter, DetectedEvent};
use sipmsim::FWHM_PER_SIGMA;

use crate::scenario::Scenario;

// RNG stream allocation across the run: streams 0-3 belong to the core
// library (dark counts, thinning, comparator noise, X-ray transport).
const STREAM_SPTR_JITTER: u64 = 10;
const STREAM_CALIBRATE_NOISE: u64 = 11;
const STREAM_TOFCT_MEASURE: u64 = 12;
const STREAM_TOFCT_SCINT: u64 = 13;

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

#[derive(Debug, Clone, Serialize)]
pub struct SptrRunResult {
    pub fwhm_ps: f64,
    pub peak_center_ns: f64,
    pub n_trials: u64,
    pub n_detected: u64,
    pub method: &'static str,
}

/// Laser trials through the full chain: photon jitter, PDE thinning,
/// avalanche, shaping, discrimination, TDC quantization, FWHM extraction.
pub fn run_sptr(s: &Scenario) -> anyhow::Result<(SptrRunResult, Histogram)> {
    let sigma_laser = s.sptr.laser_fwhm / FWHM_PER_SIGMA;
    let sigma_transit = s.sipm.intrinsic_transit_jitter_fwhm / FWHM_PER_SIGMA;
    let mut rng = stream_rng(s.seed, STREAM_SPTR_JITTER);
    let mut hist = Histogram::uniform(0.0, s.tdc.delta_t_lsb, s.tdc.delta_t_codes() as usize);
    let mut detected = 0u64;
    for trial in 0..s.sptr.n_events {
        let t_photon =
            s.sptr.base_delay + gaussian(&mut rng, sigma_laser) + gaussian(&mut rng, sigma_transit);
        if !rng.random_bool(s.sipm.pde) {
            continue;
        }
        detected += 1;
        let train = avalanche_current(
            &s.sipm,
            &[PhotonEvent {
                time: t_photon,
                origin: PhotonOrigin::LaserPulse,
                n_cells_fired: 1,
            }],
        )?;
        let wave = shape_pulse(
            &train,
            &s.preamp,
            s.sipm.terminal_capacitance,
            s.sptr.sample_period,
            s.sptr.span,
        )?;
        let hits = discriminate(&wave, &s.comparator, s.seed.wrapping_add(trial));
        if let Some(hit) = hits.first() {
            if let DeltaTReading::InWindow(code) = measure_delta_t(0.0, hit.leading_edge, &s.tdc) {
                hist.record_index(code as usize);
            }
        }
    }
    let r = fwhm(&hist, FwhmMethod::Interpolated).context("delta-T histogram")?;
    Ok((
        SptrRunResult {
            fwhm_ps: r.fwhm * 1e12,
            peak_center_ns: r.peak_center * 1e9,
            n_trials: s.sptr.n_events,
            n_detected: detected,
            method: "interpolated",
        },
        hist,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct DarkCountResult {
    pub expected_count: f64,
    pub observed_count: u64,
    pub z_score: f64,
    pub duration_s: f64,
}

pub fn run_darkcount(s: &Scenario) -> anyhow::Result<(DarkCountResult, Histogram)> {
    let duration = s.darkcount.duration;
    let events = generate_dark_events(&s.sipm, duration, s.seed)?;
    let mut hist = Histogram::uniform(
        0.0,
        duration / s.darkcount.histogram_bins as f64,
        s.darkcount.histogram_bins,
    );
    for e in &events {
        hist.record_value(e.time);
    }
    let observed = events.len() as u64;
    Ok((
        DarkCountResult {
            expected_count: s.sipm.expected_dark_counts(duration),
            observed_count: observed,
            z_score: verify_dark_rate(observed, &s.sipm, duration),
            duration_s: duration,
        },
        hist,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct FittedPoint {
    pub source_label: String,
    pub energy_kev: f64,
    pub tot_ns: f64,
    pub model_tot_ns: f64,
    pub inverted_kev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingFit {
    pub sipm_bias_v: f64,
    pub threshold_v: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub final_s_ns2: f64,
    pub iterations: u32,
    pub converged: bool,
    pub points: Vec<FittedPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateResult {
    pub settings: Vec<SettingFit>,
}

fn fit_one(ds: &CalibrationDataset) -> anyhow::Result<SettingFit> {
    let start = initial_guess(ds)?;
    let model = fit(ds, &start)?;
    let points = ds
        .points
        .iter()
        .zip(&ds.source_labels)
        .map(|(p, label)| {
            Ok(FittedPoint {
                source_label: label.clone(),
                energy_kev: p.energy_kev,
                tot_ns: p.tot_ns,
                model_tot_ns: tot_model(p.energy_kev, &model)?,
                inverted_kev: invert(p.tot_ns, &model)?,
            })
        })
        .collect::<Result<_, sipmsim::calibration::CalibrationError>>()?;
    Ok(SettingFit {
        sipm_bias_v: ds.setting.sipm_bias_v,
        threshold_v: ds.setting.threshold_v,
        a: model.a,
        b: model.b,
        c: model.c,
        d: model.d,
        final_s_ns2: model.fit.final_s,
        iterations: model.fit.iterations,
        converged: model.fit.converged,
        points,
    })
}

pub fn run_calibrate(s: &Scenario) -> anyhow::Result<CalibrateResult> {
    let datasets = match &s.calibrate.csv_path {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let rows = parse_dataset_csv(std::io::BufReader::new(file))?;
            group_by_setting(&rows)
        }
        None => {
            let c = &s.calibrate;
            let truth = CalibrationModel::new(c.true_a, c.true_b, c.true_c, c.true_d);
            let mut rng = stream_rng(s.seed, STREAM_CALIBRATE_NOISE);
            let sources = reference_sources();
            let points = sources
                .iter()
                .map(|&(_, e)| {
                    Ok(CalibrationPoint {
                        energy_kev: e,
                        tot_ns: tot_model(e, &truth)? + gaussian(&mut rng, c.noise_rms_ns),
                    })
                })
                .collect::<Result<_, sipmsim::calibration::CalibrationError>>()?;
            vec![CalibrationDataset {
                points,
                setting: CalibrationSetting {
                    sipm_bias_v: c.sipm_bias_v,
                    threshold_v: c.threshold_v,
                },
                source_labels: sources.iter().map(|&(l, _)| l.to_string()).collect(),
            }]
        }
    };
    let settings = datasets
        .iter()
        .map(fit_one)
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(CalibrateResult { settings })
}

#[derive(Debug, Clone, Serialize)]
pub struct ImpedanceResult {
    pub n_points: usize,
    pub n_ill_conditioned: usize,
    pub osl_applied: bool,
    pub limit_ohms: f64,
    /// Largest frequency up to which |Z| stays below the limit, Hz.
    pub below_limit_up_to_hz: f64,
}

fn load_sweep(path: &Path) -> anyhow::Result<ReflectionSweep> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sweep = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("s1p")) {
        parse_touchstone(&text)?
    } else {
        parse_sweep_csv(&text)?
    };
    Ok(sweep)
}

fn synthetic_sweep(s: &Scenario) -> ReflectionSweep {
    let sec = &s.impedance;
    let points = (0..sec.n_points)
        .map(|i| {
            let f = sec.f_start
                + (sec.f_stop - sec.f_start) * i as f64 / (sec.n_points - 1) as f64;
            let omega = 2.0 * std::f64::consts::PI * f;
            ImpedancePoint {
                frequency: f,
                z: num_complex::Complex64::new(
                    sec.series_resistance,
                    omega * sec.series_inductance,
                ),
            }
        })
        .collect();
    impedance_to_s11(&ImpedanceSpectrum { points }, 50.0)
}

pub fn run_impedance(s: &Scenario) -> anyhow::Result<(ImpedanceResult, ImpedanceSpectrum)> {
    let sec = &s.impedance;
    let raw = match &sec.sweep_path {
        Some(path) => load_sweep(path)?,
        None => synthetic_sweep(s),
    };
    raw.validate()?;
    let (sweep, ill, osl_applied) =
        match (&sec.open_path, &sec.short_path, &sec.load_path) {
            (Some(o), Some(sh), Some(l)) => {
                let corr = osl_correct(&raw, &load_sweep(o)?, &load_sweep(sh)?, &load_sweep(l)?)?;
                (corr.corrected, corr.ill_conditioned.len(), true)
            }
            _ => (raw, 0, false),
        };
    let spectrum = s11_to_impedance(&sweep);
    let below = summarize_below(&spectrum, sec.limit_ohms)?;
    Ok((
        ImpedanceResult {
            n_points: spectrum.points.len(),
            n_ill_conditioned: ill,
            osl_applied,
            limit_ohms: sec.limit_ohms,
            below_limit_up_to_hz: below,
        },
        spectrum,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct TofCtResult {
    pub n_events: u64,
    pub n_detected: u64,
    pub spr_before: f64,
    pub spr_after: f64,
    pub reduction_percent: f64,
    pub window_lo_s: f64,
    pub window_hi_s: f64,
    pub timing_fwhm_s: f64,
}

pub fn run_tofct(s: &Scenario) -> anyhow::Result<(TofCtResult, Histogram)> {
    let sec = &s.tofct;
    let events = simulate_events(&sec.geometry, &sec.source, sec.n_events as usize, s.seed)?;
    let sigma = sec.timing_fwhm / FWHM_PER_SIGMA;
    let mut measure_rng = stream_rng(s.seed, STREAM_TOFCT_MEASURE);
    let mut scint_rng = stream_rng(s.seed, STREAM_TOFCT_SCINT);
    let mut detected = Vec::with_capacity(events.len());
    for e in &events {
        let base_time = if sec.use_scintillation {
            match scintillate(e, &sec.scintillator, &mut scint_rng).first() {
                Some(first) => first.time,
                None => continue, // no light collected
            }
        } else {
            e.arrival_time
        };
        detected.push(DetectedEvent {
            event: *e,
            measured_time: base_time + gaussian(&mut measure_rng, sigma),
        });
    }

    let t_p = sec.geometry.primary_flight_time();
    let window = (t_p - sec.window_before, t_p + sec.window_after);
    let kept = tof_filter(&detected, window);
    let spr_before = spr(&detected)?;
    let spr_after = spr(&kept)?;
    let reduction = spr_reduction(&detected, &kept)?;

    let lo = -(sec.window_before + 1e-9);
    let hi = sec.window_after + 3e-9;
    let n_bins = ((hi - lo) / sec.histogram_bin).ceil() as usize;
    let mut hist = Histogram::uniform(lo, sec.histogram_bin, n_bins);
    for d in &detected {
        hist.record_value(d.measured_time - t_p);
    }
    Ok((
        TofCtResult {
            n_events: sec.n_events,
            n_detected: detected.len() as u64,
            spr_before,
            spr_after,
            reduction_percent: reduction,
            window_lo_s: window.0,
            window_hi_s: window.1,
            timing_fwhm_s: sec.timing_fwhm,
        },
        hist,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub n_dark_events: u64,
    pub n_hits: u64,
    pub single_photon_tot_ns: Option<f64>,
    pub recommended_threshold_v: Option<f64>,
}

/// Shape the dark acquisition cluster by cluster. Events closer than the
/// span are shaped into one waveform so pile-up contributes multi-photon
/// ToT; isolated events stay cheap.
fn dark_waveforms(s: &Scenario, events: &[PhotonEvent]) -> anyhow::Result<Vec<AnalogWaveform>> {
    let sec = &s.spectrum;
    let mut waves = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let mut j = i;
        while j + 1 < events.len() && events[j + 1].time - events[j].time < sec.span {
            j += 1;
        }
        let cluster = &events[i..=j];
        let train = avalanche_current(&s.sipm, cluster)?;
        let stretch = cluster[cluster.len() - 1].time - cluster[0].time;
        waves.push(shape_pulse(
            &train,
            &s.preamp,
            s.sipm.terminal_capacitance,
            sec.sample_period,
            sec.span + stretch,
        )?);
        i = j + 1;
    }
    Ok(waves)
}

fn tot_histogram(
    s: &Scenario,
    waves: &[AnalogWaveform],
    threshold: f64,
) -> (Histogram, u64) {
    let mut cmp = s.comparator.clone();
    cmp.threshold = threshold;
    let mut hist = Histogram::uniform(0.0, s.tdc.tot_bin_width, s.spectrum.tot_bins);
    let mut hits = 0u64;
    for (k, wave) in waves.iter().enumerate() {
        for hit in discriminate(wave, &cmp, s.seed.wrapping_add(k as u64)) {
            hits += 1;
            let code = tot_code(hit.tot, &s.tdc) as usize;
            if code < hist.n_bins() {
                hist.record_index(code);
            }
        }
    }
    (hist, hits)
}

pub fn run_spectrum(s: &Scenario) -> anyhow::Result<(SpectrumResult, Histogram)> {
    let events = generate_dark_events(&s.sipm, s.spectrum.duration, s.seed)?;
    let waves = dark_waveforms(s, &events)?;
    let (hist, hits) = tot_histogram(s, &waves, s.comparator.threshold);
    let reference = single_photon_tot(&hist).ok();
    let recommended = match (reference, s.spectrum.scan_thresholds.is_empty()) {
        (Some(reference_tot), false) => threshold_scan(
            |th| tot_histogram(s, &waves, th).0,
            &s.spectrum.scan_thresholds,
            reference_tot,
            s.spectrum.center_tolerance,
            DEFAULT_MIN_PROMINENCE,
        )
        .ok(),
        _ => None,
    };
    Ok((
        SpectrumResult {
            n_dark_events: events.len() as u64,
            n_hits: hits,
            single_photon_tot_ns: reference.map(|t| t * 1e9),
            recommended_threshold_v: recommended,
        },
        hist,
    ))
}
