//! ToT-to-energy calibration.
//!
//! The model is log-quadratic, `ToT(E) = a + b ln(E+d) + c ln^2(E+d)`, fitted
//! by damped Gauss-Newton (Levenberg-Marquardt style) with the analytic
//! Jacobian, and inverted on its monotone branch to reconstruct energy
//! spectra. Residuals are unweighted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("E + d = {0} is outside the log domain")]
    DomainError(f64),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("ToT {0} ns is outside the model range")]
    OutOfRange(f64),
    #[error("no real solution for ToT {0} ns")]
    NoSolution(f64),
    #[error("dataset CSV parse error: {0}")]
    CsvParse(String),
}

/// One calibration measurement: known energy vs observed ToT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub energy_kev: f64,
    pub tot_ns: f64,
}

/// The operating point a calibration belongs to: one model per
/// (bias, threshold) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSetting {
    pub sipm_bias_v: f64,
    pub threshold_v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationDataset {
    pub points: Vec<CalibrationPoint>,
    pub setting: CalibrationSetting,
    pub source_labels: Vec<String>,
}

impl CalibrationDataset {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.points.len() < 4 {
            return Err(CalibrationError::InvalidDataset(format!(
                "need at least 4 points for 4 free parameters, got {}",
                self.points.len()
            )));
        }
        for p in &self.points {
            if p.energy_kev <= 0.0 || p.tot_ns <= 0.0 {
                return Err(CalibrationError::InvalidDataset(format!(
                    "non-positive point (E = {} keV, ToT = {} ns)",
                    p.energy_kev, p.tot_ns
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Final sum of squared residuals, ns^2.
    pub final_s: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Fitted model parameters. `a`, `b`, `c` are in ns; `d` in keV shifts the
/// log argument so low energies stay in domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub fit: FitDiagnostics,
}

impl CalibrationModel {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            a,
            b,
            c,
            d,
            fit: FitDiagnostics {
                final_s: f64::NAN,
                iterations: 0,
                converged: false,
            },
        }
    }

    fn params(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    fn with_params(p: [f64; 4], fit: FitDiagnostics) -> Self {
        Self {
            a: p[0],
            b: p[1],
            c: p[2],
            d: p[3],
            fit,
        }
    }

    /// Local slope dToT/dE must stay positive over the fitted energies for
    /// the inversion branch to be well defined.
    pub fn is_monotone_over(&self, energies: impl IntoIterator<Item = f64>) -> bool {
        energies.into_iter().all(|e| {
            let u = e + self.d;
            u > 0.0 && self.b + 2.0 * self.c * u.ln() > 0.0
        })
    }
}

/// Standard nuclide-chart gamma lines for the usual calibration sources,
/// keV. Reference values, overridable in config.
pub fn reference_sources() -> Vec<(&'static str, f64)> {
    vec![
        ("Am-241", 59.5),
        ("Co-57", 122.0),
        ("Ge-68", 511.0), // annihilation line
        ("Cs-137", 662.0),
    ]
}

/// Evaluate the calibration model at energy `e` keV, returning ns.
pub fn tot_model(e: f64, m: &CalibrationModel) -> Result<f64, CalibrationError> {
    let u = e + m.d;
    if u <= 0.0 {
        return Err(CalibrationError::DomainError(u));
    }
    let l = u.ln();
    Ok(m.a + m.b * l + m.c * l * l)
}

/// Per-point residuals `tot_i - model(E_i)`.
pub fn residuals(
    ds: &CalibrationDataset,
    m: &CalibrationModel,
) -> Result<Vec<f64>, CalibrationError> {
    ds.points
        .iter()
        .map(|p| Ok(p.tot_ns - tot_model(p.energy_kev, m)?))
        .collect()
}

/// Total sum of squared residuals, ns^2.
pub fn residual_sum(ds: &CalibrationDataset, m: &CalibrationModel) -> Result<f64, CalibrationError> {
    Ok(residuals(ds, m)?.iter().map(|r| r * r).sum())
}

/// Analytic Jacobian of the model: row i is
/// `(1, ln(E_i+d), ln^2(E_i+d), (b + 2c ln(E_i+d))/(E_i+d))`.
pub fn jacobian(
    ds: &CalibrationDataset,
    m: &CalibrationModel,
) -> Result<Vec<[f64; 4]>, CalibrationError> {
    ds.points
        .iter()
        .map(|p| {
            let u = p.energy_kev + m.d;
            if u <= 0.0 {
                return Err(CalibrationError::DomainError(u));
            }
            let l = u.ln();
            Ok([1.0, l, l * l, (m.b + 2.0 * m.c * l) / u])
        })
        .collect()
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

const MAX_ITERATIONS: u32 = 200;
const CONVERGENCE_TOL: f64 = 1e-10;

/// Damped Gauss-Newton fit of (a, b, c, d) to the dataset.
///
/// Accepted steps never increase S; the loop stops when the relative change
/// in S drops below 1e-10 or after 200 iterations, with the `converged` flag
/// set accordingly.
pub fn fit(
    ds: &CalibrationDataset,
    initial: &CalibrationModel,
) -> Result<CalibrationModel, CalibrationError> {
    ds.validate()?;
    let mut params = initial.params();
    let mut current = CalibrationModel::with_params(params, initial.fit);
    let mut s = residual_sum(ds, &current)?;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let jac = jacobian(ds, &current)?;
        let res = residuals(ds, &current)?;

        // Normal equations: (J^T J + lambda * diag(J^T J)) delta = J^T r.
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (row, r) in jac.iter().zip(&res) {
            for i in 0..4 {
                jtr[i] += row[i] * r;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }

        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for i in 0..4 {
                // Guard zero diagonal so damping still regularizes.
                damped[i][i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(delta) = solve4(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial_params = [
                params[0] + delta[0],
                params[1] + delta[1],
                params[2] + delta[2],
                params[3] + delta[3],
            ];
            let trial = CalibrationModel::with_params(trial_params, current.fit);
            match residual_sum(ds, &trial) {
                Ok(s_trial) if s_trial <= s => {
                    let rel_change = (s - s_trial) / s.max(f64::MIN_POSITIVE);
                    params = trial_params;
                    current = trial;
                    s = s_trial;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel_change < CONVERGENCE_TOL {
                        converged = true;
                    }
                    break;
                }
                // Worse fit or out of domain: increase damping and retry.
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            if iterations == 1 {
                return Err(CalibrationError::FitFailed(format!(
                    "no acceptable step at any damping level (S = {s})"
                )));
            }
            // Cannot improve further; already at a local minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(CalibrationModel::with_params(
        params,
        FitDiagnostics {
            final_s: s,
            iterations,
            converged,
        },
    ))
}

/// Starting point for [`fit`]: fix d = 1 keV and solve the then-linear
/// least-squares problem in (a, b, c) over u = ln(E + d).
pub fn initial_guess(ds: &CalibrationDataset) -> Result<CalibrationModel, CalibrationError> {
    ds.validate()?;
    let d = 1.0;
    let mut s = [0.0f64; 5];
    let mut b = [0.0f64; 3];
    for p in &ds.points {
        let l = (p.energy_kev + d).ln();
        let mut lp = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += lp;
            if k < 3 {
                b[k] += p.tot_ns * lp;
            }
            lp *= l;
        }
    }
    let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    // Reuse the 4x4 solver by padding with an identity row.
    let a4 = [
        [a[0][0], a[0][1], a[0][2], 0.0],
        [a[1][0], a[1][1], a[1][2], 0.0],
        [a[2][0], a[2][1], a[2][2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let x = solve4(a4, [b[0], b[1], b[2], 0.0])
        .ok_or_else(|| CalibrationError::FitFailed("singular initial system".into()))?;
    Ok(CalibrationModel::new(x[0], x[1], x[2], d))
}

/// Invert the model: solve `c u^2 + b u + (a - tot) = 0` for `u = ln(E+d)`
/// on the monotone branch (`b + 2c u > 0`) and return `E = exp(u) - d`.
pub fn invert(tot_ns: f64, m: &CalibrationModel) -> Result<f64, CalibrationError> {
    let u = if m.c.abs() < 1e-300 {
        if m.b.abs() < 1e-300 {
            return Err(CalibrationError::OutOfRange(tot_ns));
        }
        (tot_ns - m.a) / m.b
    } else {
        let disc = m.b * m.b - 4.0 * m.c * (m.a - tot_ns);
        if disc < 0.0 {
            return Err(CalibrationError::NoSolution(tot_ns));
        }
        let sq = disc.sqrt();
        let u1 = (-m.b + sq) / (2.0 * m.c);
        let u2 = (-m.b - sq) / (2.0 * m.c);
        // The monotone branch has positive model slope in u.
        if m.b + 2.0 * m.c * u1 > 0.0 {
            u1
        } else if m.b + 2.0 * m.c * u2 > 0.0 {
            u2
        } else {
            return Err(CalibrationError::OutOfRange(tot_ns));
        }
    };
    Ok(u.exp() - m.d)
}

/// A parsed row of the calibration CSV
/// `source_label,energy_keV,tot_ns,bias_V,threshold_V`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub source_label: String,
    pub energy_kev: f64,
    pub tot_ns: f64,
    pub bias_v: f64,
    pub threshold_v: f64,
}

pub fn parse_dataset_csv<R: std::io::BufRead>(r: R) -> Result<Vec<DatasetRow>, CalibrationError> {
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CalibrationError::CsvParse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("source_label")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(CalibrationError::CsvParse(format!(
                "line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| CalibrationError::CsvParse(format!("line {}: {e}", lineno + 1)))
        };
        rows.push(DatasetRow {
            source_label: fields[0].to_string(),
            energy_kev: num(fields[1])?,
            tot_ns: num(fields[2])?,
            bias_v: num(fields[3])?,
            threshold_v: num(fields[4])?,
        });
    }
    Ok(rows)
}

/// Group parsed rows into one dataset per (bias, threshold) setting,
/// preserving first-appearance order of settings.
pub fn group_by_setting(rows: &[DatasetRow]) -> Vec<CalibrationDataset> {
    let mut datasets: Vec<CalibrationDataset> = Vec::new();
    for row in rows {
        let setting = CalibrationSetting {
            sipm_bias_v: row.bias_v,
            threshold_v: row.threshold_v,
        };
        let ds = match datasets.iter_mut().find(|d| d.setting == setting) {
            Some(d) => d,
            None => {
                datasets.push(CalibrationDataset {
                    points: Vec::new(),
                    setting,
                    source_labels: Vec::new(),
                });
                datasets.last_mut().unwrap()
            }
        };
        ds.points.push(CalibrationPoint {
            energy_kev: row.energy_kev,
            tot_ns: row.tot_ns,
        });
        ds.source_labels.push(row.source_label.clone());
    }
    datasets
}
