//! Delay-line TDC model: delta-T quantization in a fixed window, ToT
//! quantization, 8-bin energy classification, and histogram accumulation.
//!
//! Quantization is floor (truncation), matching a tapped delay line. The
//! delta-T start is the sync signal and the stop is the channel output, so a
//! positive code means the channel fired after the sync edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TdcError {
    #[error("invalid TDC config: {0}")]
    InvalidConfig(String),
    #[error("histogram CSV parse error: {0}")]
    CsvParse(String),
}

pub const ENERGY_BINS: usize = 8;

/// TDC configuration: 20 ns window at 10 ps LSB, 1 ns ToT binning, and seven
/// ascending ToT thresholds defining the eight energy bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TdcConfig {
    pub delta_t_window: f64,
    pub delta_t_lsb: f64,
    pub tot_bin_width: f64,
    /// Ascending ToT thresholds, seconds. A ToT equal to an edge lands in
    /// the upper bin.
    pub energy_bin_edges: [f64; ENERGY_BINS - 1],
}

impl Default for TdcConfig {
    fn default() -> Self {
        Self {
            delta_t_window: 20e-9,
            delta_t_lsb: 10e-12,
            tot_bin_width: 1e-9,
            // Uniform over a typical observed ToT range; meant to be
            // overridden per scenario.
            energy_bin_edges: [5e-9, 10e-9, 15e-9, 20e-9, 25e-9, 30e-9, 35e-9],
        }
    }
}

impl TdcConfig {
    pub fn validate(&self) -> Result<(), TdcError> {
        if self.delta_t_lsb <= 0.0 || self.delta_t_lsb >= self.delta_t_window {
            return Err(TdcError::InvalidConfig(
                "delta_t_lsb must be positive and below delta_t_window".into(),
            ));
        }
        if self.tot_bin_width <= 0.0 {
            return Err(TdcError::InvalidConfig("tot_bin_width must be > 0".into()));
        }
        if self.energy_bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TdcError::InvalidConfig(
                "energy_bin_edges must be strictly ascending".into(),
            ));
        }
        Ok(())
    }

    /// Number of delta-T codes inside the window.
    pub fn delta_t_codes(&self) -> u32 {
        (self.delta_t_window / self.delta_t_lsb).round() as u32
    }
}

/// One quantized event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdcRecord {
    pub delta_t_code: u32,
    pub tot_code: u32,
    pub energy_bin: u8,
}

/// Outcome of a delta-T measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaTReading {
    InWindow(u32),
    /// Stop fell outside `[start, start + window)`; counted, not an error.
    OutOfWindow,
}

/// Quantize `stop - start` to a delta-T code, or flag it out-of-window.
pub fn measure_delta_t(start: f64, stop: f64, cfg: &TdcConfig) -> DeltaTReading {
    let dt = stop - start;
    if dt < 0.0 || dt >= cfg.delta_t_window {
        return DeltaTReading::OutOfWindow;
    }
    DeltaTReading::InWindow((dt / cfg.delta_t_lsb).floor() as u32)
}

/// Quantize a ToT to its 1 ns (by default) code.
pub fn tot_code(tot: f64, cfg: &TdcConfig) -> u32 {
    (tot / cfg.tot_bin_width).floor() as u32
}

/// Energy bin for a ToT value: the number of edges at or below it, so an
/// exact edge value belongs to the upper bin.
pub fn classify_energy(tot: f64, cfg: &TdcConfig) -> usize {
    cfg.energy_bin_edges.partition_point(|&e| e <= tot)
}

/// Build a full record from a delta-T pair and a ToT, if in window.
pub fn make_record(start: f64, stop: f64, tot: f64, cfg: &TdcConfig) -> Option<TdcRecord> {
    match measure_delta_t(start, stop, cfg) {
        DeltaTReading::InWindow(code) => Some(TdcRecord {
            delta_t_code: code,
            tot_code: tot_code(tot, cfg),
            energy_bin: classify_energy(tot, cfg) as u8,
        }),
        DeltaTReading::OutOfWindow => None,
    }
}

/// Binned counts with explicit ascending edges; `counts.len() + 1 == edges.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins: `n` bins of `width` starting at `lo`.
    pub fn uniform(lo: f64, width: f64, n: usize) -> Self {
        let bin_edges = (0..=n).map(|i| lo + i as f64 * width).collect();
        Self {
            bin_edges,
            counts: vec![0; n],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }

    pub fn record_index(&mut self, i: usize) {
        self.counts[i] += 1;
    }

    /// Count a value; values outside the edges are ignored.
    pub fn record_value(&mut self, v: f64) {
        let n = self.n_bins();
        if n == 0 {
            return;
        }
        let lo = self.bin_edges[0];
        let hi = self.bin_edges[n];
        if v < lo || v >= hi {
            return;
        }
        let idx = self.bin_edges[..n].partition_point(|&e| e <= v) - 1;
        self.counts[idx] += 1;
    }

    /// Element-wise merge of a shard with identical binning. Commutative and
    /// exact, so sharded accumulation composes in any order.
    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.bin_edges, other.bin_edges, "merge requires same bins");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Bit-exact CSV export with a `bin_low,bin_high,count` header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_low,bin_high,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self, TdcError> {
        let mut bin_edges: Vec<f64> = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| TdcError::CsvParse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("bin_low")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(TdcError::CsvParse(format!(
                    "line {}: expected 3 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| TdcError::CsvParse(format!("line {}: {e}", lineno + 1)))
            };
            let lo = parse(fields[0])?;
            let hi = parse(fields[1])?;
            let count = fields[2]
                .trim()
                .parse::<u64>()
                .map_err(|e| TdcError::CsvParse(format!("line {}: {e}", lineno + 1)))?;
            if bin_edges.is_empty() {
                bin_edges.push(lo);
            }
            bin_edges.push(hi);
            counts.push(count);
        }
        Ok(Self { bin_edges, counts })
    }
}

/// Result of accumulating a record stream: the global delta-T histogram, one
/// delta-T histogram per energy bin, and the ToT histogram.
#[derive(Debug, Clone)]
pub struct TdcHistograms {
    pub delta_t: Histogram,
    pub delta_t_by_energy: Vec<Histogram>,
    pub tot: Histogram,
}

impl TdcHistograms {
    pub fn new(cfg: &TdcConfig, tot_bins: usize) -> Self {
        let codes = cfg.delta_t_codes() as usize;
        let delta = Histogram::uniform(0.0, cfg.delta_t_lsb, codes);
        Self {
            delta_t: delta.clone(),
            delta_t_by_energy: vec![delta; ENERGY_BINS],
            tot: Histogram::uniform(0.0, cfg.tot_bin_width, tot_bins),
        }
    }

    pub fn record(&mut self, rec: &TdcRecord) {
        let i = rec.delta_t_code as usize;
        self.delta_t.record_index(i);
        self.delta_t_by_energy[rec.energy_bin as usize].record_index(i);
        if (rec.tot_code as usize) < self.tot.n_bins() {
            self.tot.record_index(rec.tot_code as usize);
        }
    }

    pub fn merge(&mut self, other: &TdcHistograms) {
        self.delta_t.merge(&other.delta_t);
        for (a, b) in self.delta_t_by_energy.iter_mut().zip(&other.delta_t_by_energy) {
            a.merge(b);
        }
        self.tot.merge(&other.tot);
    }
}

/// Accumulate a record stream into the three histogram families. The per-bin
/// delta-T histograms partition the global one exactly.
pub fn accumulate<'a, I>(records: I, cfg: &TdcConfig, tot_bins: usize) -> TdcHistograms
where
    I: IntoIterator<Item = &'a TdcRecord>,
{
    let mut h = TdcHistograms::new(cfg, tot_bins);
    for rec in records {
        h.record(rec);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cfg() -> TdcConfig {
        TdcConfig::default()
    }

    #[test]
    fn zero_interval_gives_code_zero() {
        assert_eq!(
            measure_delta_t(3e-9, 3e-9, &cfg()),
            DeltaTReading::InWindow(0)
        );
    }

    #[test]
    fn code_is_floor_of_interval_over_lsb() {
        // 5.004 ns at 10 ps LSB -> floor(500.4) = 500
        assert_eq!(
            measure_delta_t(0.0, 5.004e-9, &cfg()),
            DeltaTReading::InWindow(500)
        );
    }

    #[test]
    fn interval_beyond_window_is_flagged() {
        assert_eq!(measure_delta_t(0.0, 25e-9, &cfg()), DeltaTReading::OutOfWindow);
        assert_eq!(measure_delta_t(1e-9, 0.0, &cfg()), DeltaTReading::OutOfWindow);
    }

    #[test]
    fn quantization_error_in_zero_lsb_range() {
        let c = cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let dt = rng.random::<f64>() * c.delta_t_window;
            if let DeltaTReading::InWindow(code) = measure_delta_t(0.0, dt, &c) {
                let err = dt - code as f64 * c.delta_t_lsb;
                assert!((0.0..c.delta_t_lsb).contains(&err), "error {err} for dt {dt}");
            } else {
                panic!("in-range dt flagged out of window");
            }
        }
    }

    #[test]
    fn energy_classification_boundaries() {
        let c = cfg();
        assert_eq!(classify_energy(1e-9, &c), 0);
        assert_eq!(classify_energy(1e-6, &c), 7);
        // Exact edge values belong to the upper bin; cross-check against a
        // linear scan for every edge.
        for (k, &edge) in c.energy_bin_edges.iter().enumerate() {
            let linear = c.energy_bin_edges.iter().filter(|&&e| e <= edge).count();
            assert_eq!(classify_energy(edge, &c), k + 1);
            assert_eq!(classify_energy(edge, &c), linear);
        }
    }

    #[test]
    fn energy_classification_monotone() {
        let c = cfg();
        let mut prev = 0;
        for i in 0..4000 {
            let tot = i as f64 * 1e-11;
            let bin = classify_energy(tot, &c);
            assert!(bin >= prev);
            prev = bin;
        }
    }

    #[test]
    fn empty_stream_gives_zero_histograms() {
        let h = accumulate([].iter(), &cfg(), 64);
        assert_eq!(h.delta_t.total(), 0);
        assert_eq!(h.tot.total(), 0);
        assert!(h.delta_t_by_energy.iter().all(|h| h.total() == 0));
    }

    #[test]
    fn single_energy_bin_stream() {
        let c = cfg();
        let records: Vec<TdcRecord> = (0..1000)
            .map(|i| TdcRecord {
                delta_t_code: i % c.delta_t_codes(),
                tot_code: 16,
                energy_bin: 3,
            })
            .collect();
        let h = accumulate(records.iter(), &c, 64);
        assert_eq!(h.delta_t_by_energy[3].total(), 1000);
        for (i, hb) in h.delta_t_by_energy.iter().enumerate() {
            if i != 3 {
                assert_eq!(hb.total(), 0);
            }
        }
    }

    #[test]
    fn per_bin_histograms_partition_the_global_one() {
        let c = cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let records: Vec<TdcRecord> = (0..50_000)
            .map(|_| TdcRecord {
                delta_t_code: rng.random_range(0..c.delta_t_codes()),
                tot_code: rng.random_range(0..64),
                energy_bin: rng.random_range(0..8) as u8,
            })
            .collect();
        let h = accumulate(records.iter(), &c, 64);
        // Brute-force re-count.
        for code in 0..c.delta_t_codes() as usize {
            let summed: u64 = h.delta_t_by_energy.iter().map(|hb| hb.counts[code]).sum();
            assert_eq!(h.delta_t.counts[code], summed);
        }
        let brute = records
            .iter()
            .filter(|r| r.delta_t_code == 123)
            .count() as u64;
        assert_eq!(h.delta_t.counts[123], brute);
    }

    #[test]
    fn accumulation_is_order_independent_and_merge_associative() {
        let c = cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut records: Vec<TdcRecord> = (0..5000)
            .map(|_| TdcRecord {
                delta_t_code: rng.random_range(0..c.delta_t_codes()),
                tot_code: rng.random_range(0..64),
                energy_bin: rng.random_range(0..8) as u8,
            })
            .collect();
        let forward = accumulate(records.iter(), &c, 64);
        records.reverse();
        let backward = accumulate(records.iter(), &c, 64);
        assert_eq!(forward.delta_t, backward.delta_t);
        assert_eq!(forward.tot, backward.tot);

        // Sharded merge equals single-pass accumulation.
        let (left, right) = records.split_at(records.len() / 2);
        let mut sharded = accumulate(left.iter(), &c, 64);
        sharded.merge(&accumulate(right.iter(), &c, 64));
        assert_eq!(sharded.delta_t, forward.delta_t);
    }

    #[test]
    fn histogram_csv_round_trip_is_bit_exact() {
        let mut h = Histogram::uniform(0.0, 1e-9, 8);
        h.record_value(0.5e-9);
        h.record_value(7.2e-9);
        h.record_value(7.9e-9);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let parsed = Histogram::read_csv(&buf[..]).unwrap();
        assert_eq!(parsed.counts, h.counts);
        assert_eq!(parsed.bin_edges, h.bin_edges);
    }
}
