//! One-port reflection processing: open/short/load error correction,
//! S11-to-impedance conversion, and the "below the limit up to f" summary.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImpedanceError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("standards share no common frequency grid")]
    MismatchedGrids,
    #[error("sweep is empty")]
    EmptySweep,
    #[error("sweep parse error: {0}")]
    Parse(String),
}

/// Highest frequency a sweep may contain, Hz (one 5 GHz acquisition).
pub const MAX_FREQUENCY: f64 = 5e9;
/// Passivity slack on |S11| for measured data.
pub const PASSIVITY_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub frequency: f64,
    pub s11: Complex64,
}

/// Raw or corrected one-port reflection data.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSweep {
    pub points: Vec<SweepPoint>,
    /// Reference impedance Z0, ohms (50 by convention).
    pub reference_impedance: f64,
}

impl ReflectionSweep {
    pub fn new(points: Vec<SweepPoint>, reference_impedance: f64) -> Self {
        Self {
            points,
            reference_impedance,
        }
    }

    pub fn validate(&self) -> Result<(), ImpedanceError> {
        if self.points.is_empty() {
            return Err(ImpedanceError::EmptySweep);
        }
        for w in self.points.windows(2) {
            if w[0].frequency >= w[1].frequency {
                return Err(ImpedanceError::InvalidSweep(
                    "frequencies must be strictly ascending".into(),
                ));
            }
        }
        let first = self.points[0].frequency;
        let last = self.points[self.points.len() - 1].frequency;
        if first <= 0.0 || last > MAX_FREQUENCY {
            return Err(ImpedanceError::InvalidSweep(format!(
                "frequencies must lie in (0, {MAX_FREQUENCY}] Hz, got [{first}, {last}]"
            )));
        }
        for p in &self.points {
            if p.s11.norm() > 1.0 + PASSIVITY_TOLERANCE {
                return Err(ImpedanceError::InvalidSweep(format!(
                    "|S11| = {} at {} Hz exceeds passivity bound",
                    p.s11.norm(),
                    p.frequency
                )));
            }
        }
        Ok(())
    }

    fn same_grid(&self, other: &ReflectionSweep) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.frequency == b.frequency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpedancePoint {
    pub frequency: f64,
    /// Complex impedance, ohms. Infinite for an exact open (`S11 = 1`).
    pub z: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceSpectrum {
    pub points: Vec<ImpedancePoint>,
}

/// Result of an OSL correction: the corrected DUT sweep plus the frequencies
/// where the standards were degenerate. Flagged frequencies are excluded
/// from the corrected sweep, not interpolated.
#[derive(Debug, Clone)]
pub struct OslCorrection {
    pub corrected: ReflectionSweep,
    pub ill_conditioned: Vec<f64>,
}

// Two standards closer than this (relative to full scale |Gamma| = 1) make
// the 3-term solve degenerate.
const DEGENERACY_TOL: f64 = 1e-9;

/// Open/short/load one-port error correction.
///
/// Solves the 3-term error model (directivity e00, source match e11, tracking
/// e10e01) from standards with ideal reflection coefficients +1, -1, 0 and
/// applies `Gamma = (m - e00) / (e10e01 + e11 (m - e00))` to the DUT.
pub fn osl_correct(
    dut: &ReflectionSweep,
    open_m: &ReflectionSweep,
    short_m: &ReflectionSweep,
    load_m: &ReflectionSweep,
) -> Result<OslCorrection, ImpedanceError> {
    if !(dut.same_grid(open_m) && dut.same_grid(short_m) && dut.same_grid(load_m)) {
        return Err(ImpedanceError::MismatchedGrids);
    }
    let mut corrected = Vec::with_capacity(dut.points.len());
    let mut ill_conditioned = Vec::new();
    for i in 0..dut.points.len() {
        let f = dut.points[i].frequency;
        let m_open = open_m.points[i].s11;
        let m_short = short_m.points[i].s11;
        let m_load = load_m.points[i].s11;

        // e00 is what the matched load reflects.
        let e00 = m_load;
        let a = m_open - e00;
        let b = m_short - e00;
        let denom = a - b;
        if a.norm() < DEGENERACY_TOL || b.norm() < DEGENERACY_TOL || denom.norm() < DEGENERACY_TOL {
            ill_conditioned.push(f);
            continue;
        }
        let e11 = (a + b) / denom;
        let tracking = a * (Complex64::new(1.0, 0.0) - e11);
        if tracking.norm() < DEGENERACY_TOL {
            ill_conditioned.push(f);
            continue;
        }
        let m = dut.points[i].s11 - e00;
        let gamma = m / (tracking + e11 * m);
        corrected.push(SweepPoint {
            frequency: f,
            s11: gamma,
        });
    }
    Ok(OslCorrection {
        corrected: ReflectionSweep::new(corrected, dut.reference_impedance),
        ill_conditioned,
    })
}

/// Convert a reflection sweep to impedance: `Z = Z0 (1 + Gamma)/(1 - Gamma)`.
/// An exact `Gamma = 1` becomes an infinite-impedance point, not an error.
pub fn s11_to_impedance(sweep: &ReflectionSweep) -> ImpedanceSpectrum {
    let z0 = sweep.reference_impedance;
    let points = sweep
        .points
        .iter()
        .map(|p| {
            let one = Complex64::new(1.0, 0.0);
            let denom = one - p.s11;
            let z = if denom.norm() == 0.0 {
                Complex64::new(f64::INFINITY, 0.0)
            } else {
                z0 * (one + p.s11) / denom
            };
            ImpedancePoint {
                frequency: p.frequency,
                z,
            }
        })
        .collect();
    ImpedanceSpectrum { points }
}

/// Algebraic inverse of [`s11_to_impedance`]: `Gamma = (Z - Z0)/(Z + Z0)`.
/// Round-trip cross-check and synthetic-sweep construction.
pub fn impedance_to_s11(spectrum: &ImpedanceSpectrum, z0: f64) -> ReflectionSweep {
    let points = spectrum
        .points
        .iter()
        .map(|p| SweepPoint {
            frequency: p.frequency,
            s11: (p.z - z0) / (p.z + z0),
        })
        .collect();
    ReflectionSweep::new(points, z0)
}

/// Largest frequency f* such that every point at or below f* has |Z| below
/// the limit; 0 if the first point already violates it. Non-finite points
/// count as violations.
pub fn summarize_below(spectrum: &ImpedanceSpectrum, limit: f64) -> Result<f64, ImpedanceError> {
    if spectrum.points.is_empty() {
        return Err(ImpedanceError::EmptySweep);
    }
    let mut f_star = 0.0;
    for p in &spectrum.points {
        let mag = p.z.norm();
        if !mag.is_finite() || mag >= limit {
            break;
        }
        f_star = p.frequency;
    }
    Ok(f_star)
}

/// Parse a one-port Touchstone-style text: `!` and `#`-option comment lines,
/// then `frequency re(S11) im(S11)` columns. Frequency unit comes from the
/// option line (`# HZ|KHZ|MHZ|GHZ S RI R <z0>`); defaults are Hz, real/imag,
/// 50 ohms.
pub fn parse_touchstone(text: &str) -> Result<ReflectionSweep, ImpedanceError> {
    let mut freq_scale = 1.0;
    let mut z0 = 50.0;
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if let Some(option) = line.strip_prefix('#') {
            let tokens: Vec<String> = option
                .split_whitespace()
                .map(|t| t.to_ascii_uppercase())
                .collect();
            for (i, t) in tokens.iter().enumerate() {
                match t.as_str() {
                    "HZ" => freq_scale = 1.0,
                    "KHZ" => freq_scale = 1e3,
                    "MHZ" => freq_scale = 1e6,
                    "GHZ" => freq_scale = 1e9,
                    "RI" => {}
                    "DB" | "MA" => {
                        return Err(ImpedanceError::Parse(format!(
                            "only RI format supported, got {t}"
                        )))
                    }
                    "R" => {
                        if let Some(v) = tokens.get(i + 1) {
                            z0 = v.parse().map_err(|_| {
                                ImpedanceError::Parse(format!("bad reference impedance {v}"))
                            })?;
                        }
                    }
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(ImpedanceError::Parse(format!(
                "line {}: expected `freq re im`",
                lineno + 1
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| ImpedanceError::Parse(format!("line {}: {e}", lineno + 1)))
        };
        points.push(SweepPoint {
            frequency: num(fields[0])? * freq_scale,
            s11: Complex64::new(num(fields[1])?, num(fields[2])?),
        });
    }
    Ok(ReflectionSweep::new(points, z0))
}

/// Parse the CSV form: optional `freq_hz,re_s11,im_s11` header then rows.
pub fn parse_sweep_csv(text: &str) -> Result<ReflectionSweep, ImpedanceError> {
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("freq")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(ImpedanceError::Parse(format!(
                "line {}: expected 3 fields",
                lineno + 1
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| ImpedanceError::Parse(format!("line {}: {e}", lineno + 1)))
        };
        points.push(SweepPoint {
            frequency: num(fields[0])?,
            s11: Complex64::new(num(fields[1])?, num(fields[2])?),
        });
    }
    Ok(ReflectionSweep::new(points, 50.0))
}

/// Export as CSV with a `freq_hz,re_z,im_z,abs_z` header.
pub fn write_impedance_csv<W: std::io::Write>(
    spectrum: &ImpedanceSpectrum,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "freq_hz,re_z,im_z,abs_z")?;
    for p in &spectrum.points {
        writeln!(w, "{},{},{},{}", p.frequency, p.z.re, p.z.im, p.z.norm())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64 * 5e9 / n as f64).collect()
    }

    fn sweep_from(gammas: &[(f64, Complex64)]) -> ReflectionSweep {
        ReflectionSweep::new(
            gammas
                .iter()
                .map(|&(frequency, s11)| SweepPoint { frequency, s11 })
                .collect(),
            50.0,
        )
    }

    fn constant_sweep(freqs: &[f64], gamma: Complex64) -> ReflectionSweep {
        sweep_from(&freqs.iter().map(|&f| (f, gamma)).collect::<Vec<_>>())
    }

    #[test]
    fn conversion_trivials() {
        let freqs = [1e9];
        let matched = s11_to_impedance(&constant_sweep(&freqs, Complex64::new(0.0, 0.0)));
        assert!((matched.points[0].z - Complex64::new(50.0, 0.0)).norm() < 1e-12);

        let short = s11_to_impedance(&constant_sweep(&freqs, Complex64::new(-1.0, 0.0)));
        assert!(short.points[0].z.norm() < 1e-12);

        let half = s11_to_impedance(&constant_sweep(&freqs, Complex64::new(0.5, 0.0)));
        assert!((half.points[0].z - Complex64::new(150.0, 0.0)).norm() < 1e-12);

        let open = s11_to_impedance(&constant_sweep(&freqs, Complex64::new(1.0, 0.0)));
        assert!(open.points[0].z.re.is_infinite());
    }

    #[test]
    fn passivity_preserves_nonnegative_real_part() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let r = rng.random::<f64>().sqrt() * 0.999;
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let gamma = Complex64::from_polar(r, phi);
            let z = s11_to_impedance(&constant_sweep(&[1e9], gamma)).points[0].z;
            assert!(z.re >= -1e-9, "negative real part {} for |G| {r}", z.re);
        }
    }

    #[test]
    fn ideal_standards_make_correction_identity() {
        let freqs = grid(16);
        let dut_gamma = Complex64::new(0.2, -0.3);
        let dut = constant_sweep(&freqs, dut_gamma);
        let result = osl_correct(
            &dut,
            &constant_sweep(&freqs, Complex64::new(1.0, 0.0)),
            &constant_sweep(&freqs, Complex64::new(-1.0, 0.0)),
            &constant_sweep(&freqs, Complex64::new(0.0, 0.0)),
        )
        .unwrap();
        assert!(result.ill_conditioned.is_empty());
        for p in &result.corrected.points {
            assert!((p.s11 - dut_gamma).norm() < 1e-12);
        }
    }

    /// Forward 3-term error box used as the oracle.
    fn apply_error_box(
        gamma: Complex64,
        e00: Complex64,
        e11: Complex64,
        tracking: Complex64,
    ) -> Complex64 {
        e00 + tracking * gamma / (Complex64::new(1.0, 0.0) - e11 * gamma)
    }

    #[test]
    fn synthetic_error_box_is_recovered() {
        let freqs = grid(32);
        let e00 = Complex64::new(0.05, -0.02);
        let e11 = Complex64::new(-0.1, 0.07);
        let tracking = Complex64::new(0.93, 0.11);
        let dut_gamma = Complex64::new(-0.4, 0.25);

        let measure = |g: Complex64| apply_error_box(g, e00, e11, tracking);
        let dut = constant_sweep(&freqs, measure(dut_gamma));
        let open_m = constant_sweep(&freqs, measure(Complex64::new(1.0, 0.0)));
        let short_m = constant_sweep(&freqs, measure(Complex64::new(-1.0, 0.0)));
        let load_m = constant_sweep(&freqs, measure(Complex64::new(0.0, 0.0)));

        let result = osl_correct(&dut, &open_m, &short_m, &load_m).unwrap();
        assert!(result.ill_conditioned.is_empty());
        for p in &result.corrected.points {
            assert!(
                (p.s11 - dut_gamma).norm() < 1e-9,
                "corrected {} vs {dut_gamma}",
                p.s11
            );
        }
    }

    #[test]
    fn degenerate_standards_flag_only_that_frequency() {
        let freqs = grid(4);
        let dut = constant_sweep(&freqs, Complex64::new(0.1, 0.0));
        let mut open_m = constant_sweep(&freqs, Complex64::new(1.0, 0.0));
        let short_m = constant_sweep(&freqs, Complex64::new(-1.0, 0.0));
        let load_m = constant_sweep(&freqs, Complex64::new(0.0, 0.0));
        // Make load == open at the second frequency.
        open_m.points[1].s11 = Complex64::new(0.0, 0.0);
        let result = osl_correct(&dut, &open_m, &short_m, &load_m).unwrap();
        assert_eq!(result.ill_conditioned, vec![freqs[1]]);
        assert_eq!(result.corrected.points.len(), 3);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let dut = constant_sweep(&grid(4), Complex64::new(0.1, 0.0));
        let other = constant_sweep(&grid(5), Complex64::new(1.0, 0.0));
        let short_m = constant_sweep(&grid(4), Complex64::new(-1.0, 0.0));
        let load_m = constant_sweep(&grid(4), Complex64::new(0.0, 0.0));
        assert!(matches!(
            osl_correct(&dut, &other, &short_m, &load_m),
            Err(ImpedanceError::MismatchedGrids)
        ));
    }

    #[test]
    fn round_trip_identity_within_tolerance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = rng.random::<f64>() * 0.99;
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let gamma = Complex64::from_polar(r, phi);
            let sweep = constant_sweep(&[1e9], gamma);
            let back = impedance_to_s11(&s11_to_impedance(&sweep), 50.0);
            assert!((back.points[0].s11 - gamma).norm() <= 1e-9 * gamma.norm().max(1.0));
        }
    }

    #[test]
    fn summarize_below_finds_the_crossing() {
        // |Z| ramps from 10 ohm through 50 ohm between 3.4 and 3.6 GHz.
        let freqs: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1e9).collect();
        let spectrum = ImpedanceSpectrum {
            points: freqs
                .iter()
                .map(|&f| ImpedancePoint {
                    frequency: f,
                    z: Complex64::new(10.0 + 40.5 * f / 3.5e9, 0.0),
                })
                .collect(),
        };
        let f_star = summarize_below(&spectrum, 50.0).unwrap();
        // Linear-scan oracle.
        let oracle = {
            let mut best = 0.0;
            for p in &spectrum.points {
                if p.z.norm() >= 50.0 {
                    break;
                }
                best = p.frequency;
            }
            best
        };
        assert_eq!(f_star, oracle);
        assert!(f_star >= 3.4e9 && f_star <= 3.6e9, "f* {f_star}");
    }

    #[test]
    fn summarize_below_edge_cases() {
        let low = ImpedanceSpectrum {
            points: vec![
                ImpedancePoint {
                    frequency: 1e9,
                    z: Complex64::new(10.0, 0.0),
                },
                ImpedancePoint {
                    frequency: 2e9,
                    z: Complex64::new(20.0, 0.0),
                },
            ],
        };
        assert_eq!(summarize_below(&low, 50.0).unwrap(), 2e9);

        let high = ImpedanceSpectrum {
            points: vec![ImpedancePoint {
                frequency: 1e9,
                z: Complex64::new(80.0, 0.0),
            }],
        };
        assert_eq!(summarize_below(&high, 50.0).unwrap(), 0.0);
    }

    #[test]
    fn touchstone_and_csv_parsing() {
        let ts = "! comment\n# GHZ S RI R 50\n0.5 0.1 -0.2\n1.0 0.05 -0.1\n";
        let sweep = parse_touchstone(ts).unwrap();
        assert_eq!(sweep.points.len(), 2);
        assert_eq!(sweep.points[0].frequency, 0.5e9);
        assert_eq!(sweep.points[1].s11, Complex64::new(0.05, -0.1));
        sweep.validate().unwrap();

        let csv = "freq_hz,re_s11,im_s11\n5e8,0.1,-0.2\n1e9,0.05,-0.1\n";
        let from_csv = parse_sweep_csv(csv).unwrap();
        assert_eq!(from_csv.points, sweep.points);
    }

    #[test]
    fn validate_rejects_bad_sweeps() {
        let out_of_band = constant_sweep(&[6e9], Complex64::new(0.0, 0.0));
        assert!(out_of_band.validate().is_err());
        let active = constant_sweep(&[1e9], Complex64::new(1.5, 0.0));
        assert!(active.validate().is_err());
        let empty = ReflectionSweep::new(vec![], 50.0);
        assert!(empty.validate().is_err());
    }
}
