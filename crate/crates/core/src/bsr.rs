//! Buffer status report quantization tables.
//!
//! Every table covers `[0, B_MAX)` bytes with `2^bits - 2` half-open
//! intervals. Index 0 is reserved for an empty buffer and the top index for
//! volumes at or above `B_MAX`. Boundaries are integer bytes (floored).
//!
//! * `legacy8` - 254 intervals whose widths grow geometrically from 10 bytes.
//!   The boundaries ship as a pinned CSV so runs are reproducible; a different
//!   table can be loaded from file.
//! * `uniform10` - 1022 equal intervals.
//! * `adaptive8` - 254 intervals, `s` bytes wide inside the refined range
//!   `[mean - alpha, mean + alpha]` and `refinement * s` wide elsewhere, with
//!   `s = (W_in + W_out / refinement) / 254` so the budget is met exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::BsrScheme;
use crate::error::{Error, Result};

/// Upper end of the reportable range, 81.3 MB (decimal).
pub const B_MAX: u64 = 81_300_000;

/// First interval width of the legacy table.
pub const LEGACY_FIRST_STEP: f64 = 10.0;

const PINNED_LEGACY8: &str = include_str!("../data/bsr_legacy8.csv");

/// Application assistance used to centre the adaptive table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RApiAssistance {
    pub mean_volume_bytes: f64,
    pub std_volume_bytes: f64,
    pub alpha_bytes: f64,
    pub refinement_factor: f64,
}

impl RApiAssistance {
    pub fn new(mean_volume_bytes: f64, alpha_bytes: f64) -> Self {
        RApiAssistance {
            mean_volume_bytes,
            std_volume_bytes: 0.0,
            alpha_bytes,
            refinement_factor: 3.0,
        }
    }
}

/// Decoded range of an index: `lower <= v < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsrRange {
    pub lower: u64,
    pub upper: u64,
}

impl BsrRange {
    pub fn contains(&self, v: u64) -> bool {
        self.lower <= v && v < self.upper
    }

    pub fn width(&self) -> u64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsrIndex {
    pub value: u32,
    pub range: BsrRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsrTableSpec {
    pub variant: BsrScheme,
    pub index_bits: u32,
    pub b_max: u64,
    /// `2^bits - 1` strictly increasing boundaries from 0 to `b_max`.
    pub boundaries: Vec<u64>,
    /// Refined range and inside step, for adaptive tables.
    pub refined: Option<RefinedRange>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedRange {
    pub lower: f64,
    pub upper: f64,
    /// Exact (unrounded) inside step in bytes.
    pub step: f64,
    pub refinement: f64,
}

impl BsrTableSpec {
    /// Number of indices, reserved ones included.
    pub fn index_count(&self) -> u32 {
        1 << self.index_bits
    }

    pub fn empty_index(&self) -> u32 {
        0
    }

    pub fn overflow_index(&self) -> u32 {
        self.index_count() - 1
    }

    /// Number of quantization intervals between the reserved indices.
    pub fn interval_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn encode(&self, volume: u64) -> BsrIndex {
        let value = if volume == 0 {
            self.empty_index()
        } else if volume >= self.b_max {
            self.overflow_index()
        } else {
            // Interval k (1-based) is [boundaries[k-1], boundaries[k]).
            self.boundaries.partition_point(|&b| b <= volume) as u32
        };
        BsrIndex {
            value,
            range: self.range_of(value),
        }
    }

    pub fn decode(&self, index: u32) -> Result<BsrRange> {
        if index >= self.index_count() {
            return Err(Error::BsrIndex {
                index,
                bits: self.index_bits,
            });
        }
        Ok(self.range_of(index))
    }

    fn range_of(&self, index: u32) -> BsrRange {
        if index == self.empty_index() {
            BsrRange { lower: 0, upper: 1 }
        } else if index == self.overflow_index() {
            BsrRange {
                lower: self.b_max,
                upper: u64::MAX,
            }
        } else {
            let k = index as usize;
            BsrRange {
                lower: self.boundaries[k - 1],
                upper: self.boundaries[k],
            }
        }
    }

    /// Volume the scheduler plans for when it receives `index`: the upper
    /// end of the range, 0 for an empty buffer and `b_max` on overflow.
    pub fn grant_estimate(&self, index: u32) -> u64 {
        if index == self.empty_index() {
            0
        } else if index == self.overflow_index() {
            self.b_max
        } else {
            self.range_of(index).upper
        }
    }

    /// Width of the interval containing `volume` (the worst-case quantization error).
    pub fn step_at(&self, volume: u64) -> u64 {
        let idx = self.encode(volume).value;
        if idx == self.empty_index() || idx == self.overflow_index() {
            0
        } else {
            self.range_of(idx).width()
        }
    }

    /// `index,lower,upper` rows for every index, reserved ones included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,lower,upper\n");
        for i in 0..self.index_count() {
            let r = self.range_of(i);
            let upper = if i == self.overflow_index() {
                String::from("inf")
            } else {
                r.upper.to_string()
            };
            let _ = writeln!(out, "{},{},{}", i, r.lower, upper);
        }
        out
    }

    /// Parses a table written by [`BsrTableSpec::to_csv`].
    pub fn from_csv(variant: BsrScheme, text: &str) -> Result<Self> {
        let mut lowers = Vec::new();
        let mut uppers = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::BsrTable(format!(
                    "line {}: expected 3 columns",
                    n + 1
                )));
            }
            let parse = |s: &str| -> Result<u64> {
                if s == "inf" {
                    return Ok(u64::MAX);
                }
                s.parse()
                    .map_err(|_| Error::BsrTable(format!("line {}: bad number `{s}`", n + 1)))
            };
            let idx = parse(cols[0])?;
            if idx != lowers.len() as u64 {
                return Err(Error::BsrTable(format!(
                    "line {}: indices out of order",
                    n + 1
                )));
            }
            lowers.push(parse(cols[1])?);
            uppers.push(parse(cols[2])?);
        }
        let count = lowers.len();
        if count < 4 || !count.is_power_of_two() {
            return Err(Error::BsrTable(format!(
                "{count} rows; expected a power of two"
            )));
        }
        let bits = count.trailing_zeros();
        // Rows 1..count-1 carry the intervals.
        let mut boundaries = vec![lowers[1]];
        boundaries.extend_from_slice(&uppers[1..count - 1]);
        let b_max = *boundaries.last().unwrap();
        let table = BsrTableSpec {
            variant,
            index_bits: bits,
            b_max,
            boundaries,
            refined: None,
        };
        table.check()?;
        Ok(table)
    }

    pub fn load_csv(variant: BsrScheme, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(variant, &text)
    }

    /// Verifies the structural invariants of the table.
    pub fn check(&self) -> Result<()> {
        if self.boundaries.len() != self.index_count() as usize - 1 {
            return Err(Error::BsrTable(format!(
                "{} boundaries for a {}-bit table",
                self.boundaries.len(),
                self.index_bits
            )));
        }
        if self.boundaries.first() != Some(&0) {
            return Err(Error::BsrTable("first boundary must be 0".into()));
        }
        if self.boundaries.last() != Some(&self.b_max) {
            return Err(Error::BsrTable("last boundary must equal b_max".into()));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BsrTable(
                "boundaries must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Builds a table. `adaptive8` requires assistance; the other variants ignore it.
pub fn build_table(
    variant: BsrScheme,
    assistance: Option<&RApiAssistance>,
) -> Result<BsrTableSpec> {
    match variant {
        BsrScheme::Legacy8 => Ok(legacy8()),
        BsrScheme::Uniform10 => Ok(uniform(10, B_MAX)),
        BsrScheme::Adaptive8 => {
            let a = assistance
                .ok_or_else(|| Error::BsrTable("adaptive8 needs application assistance".into()))?;
            adaptive(8, B_MAX, a)
        }
    }
}

/// The pinned legacy table.
pub fn legacy8() -> BsrTableSpec {
    BsrTableSpec::from_csv(BsrScheme::Legacy8, PINNED_LEGACY8)
        .expect("pinned legacy8 table is valid")
}

/// Geometric table: first interval `first_step` bytes, each next one `q`
/// times wider, `q` solved so the widths sum to `b_max`.
pub fn geometric(bits: u32, b_max: u64, first_step: f64) -> BsrTableSpec {
    let n = (1usize << bits) - 2;
    let total = |q: f64| first_step * (q.powi(n as i32) - 1.0) / (q - 1.0);
    let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < b_max as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let mut boundaries = Vec::with_capacity(n + 1);
    boundaries.push(0);
    let mut acc = 0.0;
    for k in 0..n {
        acc += first_step * q.powi(k as i32);
        boundaries.push((acc.floor() as u64).min(b_max));
    }
    boundaries[n] = b_max;
    BsrTableSpec {
        variant: BsrScheme::Legacy8,
        index_bits: bits,
        b_max,
        boundaries,
        refined: None,
    }
}

/// Equal-width table; boundary `k` is `floor(k * b_max / n)`.
pub fn uniform(bits: u32, b_max: u64) -> BsrTableSpec {
    let n = (1u64 << bits) - 2;
    let boundaries = (0..=n)
        .map(|k| ((k as u128 * b_max as u128) / n as u128) as u64)
        .collect();
    BsrTableSpec {
        variant: BsrScheme::Uniform10,
        index_bits: bits,
        b_max,
        boundaries,
        refined: None,
    }
}

/// Piecewise-uniform table refined around the assisted mean.
///
/// The boundaries are the integer floors of `F^-1(k)`, where `F` counts
/// intervals per byte (`1/s` inside the refined range, `1/(r s)` outside).
/// Intervals that straddle a range edge are part fine, part coarse.
pub fn adaptive(bits: u32, b_max: u64, a: &RApiAssistance) -> Result<BsrTableSpec> {
    if a.alpha_bytes.is_nan() || a.alpha_bytes <= 0.0 {
        return Err(Error::BsrTable("alpha must be > 0".into()));
    }
    if a.refinement_factor.is_nan() || a.refinement_factor <= 1.0 {
        return Err(Error::BsrTable("refinement factor must be > 1".into()));
    }
    if a.mean_volume_bytes.is_nan() || a.mean_volume_bytes < 0.0 {
        return Err(Error::BsrTable("mean volume must be >= 0".into()));
    }
    let top = b_max as f64;
    let lo_raw = a.mean_volume_bytes - a.alpha_bytes;
    let hi_raw = a.mean_volume_bytes + a.alpha_bytes;
    if lo_raw >= top || hi_raw <= 0.0 {
        return Err(Error::BsrTable(format!(
            "refined range [{lo_raw}, {hi_raw}] lies outside [0, {b_max}]"
        )));
    }
    let lo = lo_raw.max(0.0);
    let hi = hi_raw.min(top);
    let r = a.refinement_factor;
    let n = (1usize << bits) - 2;
    let w_in = hi - lo;
    let w_out = top - w_in;
    let s = (w_in + w_out / r) / n as f64;

    // Interval-count coordinate of the range edges.
    let f_lo = lo / (r * s);
    let f_hi = f_lo + w_in / s;
    let inverse = |f: f64| -> f64 {
        if f <= f_lo {
            f * r * s
        } else if f <= f_hi {
            lo + (f - f_lo) * s
        } else {
            hi + (f - f_hi) * r * s
        }
    };
    let mut boundaries: Vec<u64> = (0..=n).map(|k| inverse(k as f64).floor() as u64).collect();
    boundaries[0] = 0;
    boundaries[n] = b_max;
    let table = BsrTableSpec {
        variant: BsrScheme::Adaptive8,
        index_bits: bits,
        b_max,
        boundaries,
        refined: Some(RefinedRange {
            lower: lo,
            upper: hi,
            step: s,
            refinement: r,
        }),
    };
    table.check()?;
    Ok(table)
}
