//! Digital twin of a SiPM fast-readout chain.
//!
//! The chain runs SPAD firing events (laser-triggered, dark, or
//! scintillation-driven) through a small-signal front-end model
//! (low-input-impedance preamplifier, bypass high-pass, leading-edge
//! comparator), quantizes the result with an FPGA-style TDC, and feeds the
//! measurement pipeline: single-photon time-resolution extraction, dark-count
//! verification, ToT-to-energy calibration, one-port impedance processing,
//! and a ToF-CT scatter-rejection Monte Carlo.

pub mod analysis;
pub mod calibration;
pub mod frontend;
pub mod impedance;
pub mod photodetector;
pub mod tdc;
pub mod tofct;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// FWHM of a gaussian divided by its sigma: 2·sqrt(2·ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;
