//! Measurement procedures over histograms: peak finding, single-photon ToT
//! identification, FWHM extraction, dark-rate verification, and the
//! threshold-scan protocol.

use serde::Serialize;
use thiserror::Error;

use crate::photodetector::SipmConfig;
use crate::tdc::Histogram;
use crate::FWHM_PER_SIGMA;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("histogram is empty or all-zero")]
    EmptyHistogram,
    #[error("no peak found")]
    NoPeak,
    #[error("peak flank never descends below half maximum inside the histogram")]
    UnboundedPeak,
    #[error("gaussian fit degenerate: {0}")]
    DegenerateFit(String),
    #[error("no threshold exhibits the single-photon peak")]
    NoThresholdQualifies,
}

/// A local maximum with its topographic prominence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub center: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Peaks in left-to-right order.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn first(&self) -> Option<&Peak> {
        self.peaks.first()
    }
}

/// FWHM extraction method. Interpolated is the default; the gaussian fit is
/// the cross-check route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FwhmMethod {
    Interpolated,
    GaussianFit,
}

/// Extracted time-resolution figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SptrResult {
    /// Full width at half maximum, seconds.
    pub fwhm: f64,
    /// Location of the distribution mode, seconds.
    pub peak_center: f64,
    pub method: FwhmMethod,
    pub n_events: u64,
}

/// Default prominence threshold as a fraction of the maximum count.
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.05;

/// Find local maxima whose prominence is at least
/// `min_prominence * max(counts)`. Boundary bins can be peaks; plateaus
/// count once, at their center.
pub fn find_peaks(h: &Histogram, min_prominence: f64) -> Result<PeakSet, AnalysisError> {
    let counts = &h.counts;
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let threshold = min_prominence * max as f64;
    let n = counts.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // Plateau run [i, j].
        let mut j = i;
        while j + 1 < n && counts[j + 1] == counts[i] {
            j += 1;
        }
        let height = counts[i];
        let left_lower = i == 0 || counts[i - 1] < height;
        let right_lower = j == n - 1 || counts[j + 1] < height;
        if height > 0 && left_lower && right_lower {
            // Per-side key level: the minimum between the peak and the
            // nearest strictly higher bar, or down to the boundary if none.
            // A side with no bins at all (peak touches the edge) imposes no
            // key level.
            let mut left_min = None;
            for k in (0..i).rev() {
                if counts[k] > height {
                    break;
                }
                left_min = Some(counts[k].min(left_min.unwrap_or(height)));
            }
            let mut right_min = None;
            for &c in &counts[j + 1..] {
                if c > height {
                    break;
                }
                right_min = Some(c.min(right_min.unwrap_or(height)));
            }
            let key_level = left_min.into_iter().chain(right_min).max().unwrap_or(0);
            let prominence = (height - key_level) as f64;
            if prominence >= threshold {
                peaks.push(Peak {
                    center: h.bin_center((i + j) / 2),
                    height: height as f64,
                    prominence,
                });
            }
        }
        i = j + 1;
    }
    Ok(PeakSet { peaks })
}

/// Center of the first (lowest-ToT) peak: the single-SPAD firing signature.
pub fn single_photon_tot(h: &Histogram) -> Result<f64, AnalysisError> {
    let peaks = find_peaks(h, DEFAULT_MIN_PROMINENCE)?;
    peaks.first().map(|p| p.center).ok_or(AnalysisError::NoPeak)
}

fn mode_index(counts: &[u64]) -> usize {
    counts
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn interpolated_fwhm(h: &Histogram) -> Result<(f64, f64), AnalysisError> {
    let counts = &h.counts;
    let m = mode_index(counts);
    let half = counts[m] as f64 / 2.0;
    let x = |i: usize| h.bin_center(i);
    let y = |i: usize| counts[i] as f64;

    let mut left = None;
    for i in (0..m).rev() {
        if y(i) < half {
            let t = (half - y(i)) / (y(i + 1) - y(i));
            left = Some(x(i) + t * (x(i + 1) - x(i)));
            break;
        }
    }
    let mut right = None;
    for i in m + 1..counts.len() {
        if y(i) < half {
            let t = (y(i - 1) - half) / (y(i - 1) - y(i));
            right = Some(x(i - 1) + t * (x(i) - x(i - 1)));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => {
            // Parabolic refinement of the mode when neighbors exist.
            let center = if m > 0 && m + 1 < counts.len() {
                let denom = y(m - 1) - 2.0 * y(m) + y(m + 1);
                if denom < 0.0 {
                    x(m) + 0.5 * (y(m - 1) - y(m + 1)) / denom * (x(m + 1) - x(m))
                } else {
                    x(m)
                }
            } else {
                x(m)
            };
            Ok((r - l, center))
        }
        _ => Err(AnalysisError::UnboundedPeak),
    }
}

fn gaussian_fit_fwhm(h: &Histogram) -> Result<(f64, f64), AnalysisError> {
    // Least-squares parabola on ln(counts) over the contiguous region around
    // the mode with counts above 10% of the maximum.
    let counts = &h.counts;
    let m = mode_index(counts);
    let floor = counts[m] as f64 * 0.1;
    let mut lo = m;
    while lo > 0 && counts[lo - 1] as f64 > floor {
        lo -= 1;
    }
    let mut hi = m;
    while hi + 1 < counts.len() && counts[hi + 1] as f64 > floor {
        hi += 1;
    }
    if hi - lo < 2 {
        return Err(AnalysisError::DegenerateFit("fewer than 3 usable bins".into()));
    }
    // Normal equations for ln(y) = c0 + c1 x + c2 x^2, x relative to mode.
    let x0 = h.bin_center(m);
    let mut s = [0.0f64; 5];
    let mut b = [0.0f64; 3];
    for i in lo..=hi {
        let x = h.bin_center(i) - x0;
        let ln_y = (counts[i] as f64).ln();
        let mut xp = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += xp;
            if k < 3 {
                b[k] += ln_y * xp;
            }
            xp *= x;
        }
    }
    let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let c = solve3(a, b).ok_or_else(|| AnalysisError::DegenerateFit("singular system".into()))?;
    if c[2] >= 0.0 {
        return Err(AnalysisError::DegenerateFit("non-concave log profile".into()));
    }
    let sigma = (-1.0 / (2.0 * c[2])).sqrt();
    let center = x0 - c[1] / (2.0 * c[2]);
    Ok((FWHM_PER_SIGMA * sigma, center))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Extract the FWHM of the (unimodal) delta-T distribution.
pub fn fwhm(h: &Histogram, method: FwhmMethod) -> Result<SptrResult, AnalysisError> {
    let n_events = h.total();
    if n_events == 0 {
        return Err(AnalysisError::EmptyHistogram);
    }
    let (width, center) = match method {
        FwhmMethod::Interpolated => interpolated_fwhm(h)?,
        FwhmMethod::GaussianFit => gaussian_fit_fwhm(h)?,
    };
    Ok(SptrResult {
        fwhm: width,
        peak_center: center,
        method,
        n_events,
    })
}

/// Z-score of an observed dark count against the Poisson expectation
/// `dark_rate_density * area * duration`.
pub fn verify_dark_rate(observed_count: u64, cfg: &SipmConfig, duration: f64) -> f64 {
    let lambda_t = cfg.expected_dark_counts(duration);
    (observed_count as f64 - lambda_t) / lambda_t.sqrt()
}

/// Scan ascending comparator thresholds and return the largest one whose ToT
/// spectrum still exhibits the single-photon first peak.
///
/// "Present" means the prominence test passes and the first-peak center is
/// within `center_tolerance` of the dark-calibration reference. The scan
/// stops at the first disappearance after a success, matching the observed
/// signature of a shift to lower ToT followed by a sudden drop.
pub fn threshold_scan<F>(
    mut harness: F,
    thresholds: &[f64],
    reference_tot: f64,
    center_tolerance: f64,
    min_prominence: f64,
) -> Result<f64, AnalysisError>
where
    F: FnMut(f64) -> Histogram,
{
    debug_assert!(thresholds.windows(2).all(|w| w[0] < w[1]));
    let mut best = None;
    for &th in thresholds {
        let hist = harness(th);
        let present = find_peaks(&hist, min_prominence)
            .ok()
            .and_then(|p| p.first().copied())
            .map(|p| (p.center - reference_tot).abs() <= center_tolerance)
            .unwrap_or(false);
        if present {
            best = Some(th);
        } else if best.is_some() {
            break;
        }
    }
    best.ok_or(AnalysisError::NoThresholdQualifies)
}
