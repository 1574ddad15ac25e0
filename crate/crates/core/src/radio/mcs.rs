//! MCS table, CQI quantization, transport block sizing and the BLER curve.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};

const PINNED_MCS: &str = include_str!("../../data/mcs_table.csv");

/// Reference-signal overhead: one DMRS symbol per PRB per TTI.
pub const DMRS_RE_PER_PRB: u32 = 12;

/// Logistic slope of the BLER curve in 1/dB: one decade per dB at the 10% anchor.
pub const BLER_SLOPE: f64 = std::f64::consts::LN_10 / 0.9;

/// BLER at the MCS threshold.
pub const BLER_ANCHOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct McsEntry {
    pub index: u8,
    /// Bits per modulation symbol.
    pub modulation_order: u8,
    pub code_rate: f64,
    /// Information bits per resource element.
    pub efficiency: f64,
    /// SINR (dB) at which the BLER is 10%.
    pub threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    /// The shipped 28-entry table.
    pub fn pinned() -> Self {
        Self::from_csv(PINNED_MCS).expect("pinned MCS table is valid")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(Error::McsTable(format!(
                    "line {}: expected 5 columns",
                    n + 1
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::McsTable(format!("line {}: bad number `{s}`", n + 1)))
            };
            let modulation_order = match cols[1] {
                "QPSK" => 2,
                "16QAM" => 4,
                "64QAM" => 6,
                "256QAM" => 8,
                other => {
                    return Err(Error::McsTable(format!(
                        "line {}: unknown modulation `{other}`",
                        n + 1
                    )))
                }
            };
            entries.push(McsEntry {
                index: num(cols[0])? as u8,
                modulation_order,
                code_rate: num(cols[2])?,
                efficiency: num(cols[3])?,
                threshold_db: num(cols[4])?,
            });
        }
        if entries.is_empty() {
            return Err(Error::McsTable("no entries".into()));
        }
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].efficiency > w[0].efficiency && w[1].threshold_db > w[0].threshold_db) {
                return Err(Error::McsTable(format!(
                    "entry {} is not above entry {}",
                    i + 1,
                    i
                )));
            }
        }
        Ok(McsTable { entries })
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest reportable CQI; CQI `c >= 1` selects entry `c - 1`.
    pub fn max_cqi(&self) -> u8 {
        self.entries.len() as u8
    }

    /// Highest CQI whose threshold is at or below `sinr_db - backoff_db`; 0 when none is.
    pub fn sinr_to_cqi(&self, sinr_db: f64, backoff_db: f64) -> u8 {
        let x = sinr_db - backoff_db;
        self.entries.partition_point(|e| e.threshold_db <= x) as u8
    }

    /// Entry used for a CQI. CQI 0 (out of range) falls back to the lowest MCS.
    pub fn select_mcs(&self, cqi: u8) -> &McsEntry {
        let idx = (cqi.max(1) as usize - 1).min(self.entries.len() - 1);
        &self.entries[idx]
    }

    pub fn entry(&self, index: u8) -> &McsEntry {
        &self.entries[index as usize]
    }

    /// Payload bytes of a TB: `floor(efficiency * data REs) / 8`.
    pub fn tb_size(&self, mcs: u8, prb_count: usize, tti_symbols: u32) -> Result<u64> {
        tb_size(&self.entries[mcs as usize], prb_count, tti_symbols)
    }
}

pub fn tb_size(mcs: &McsEntry, prb_count: usize, tti_symbols: u32) -> Result<u64> {
    if prb_count == 0 {
        return Err(Error::EmptyGrant);
    }
    let re = (12 * tti_symbols).saturating_sub(DMRS_RE_PER_PRB) as f64 * prb_count as f64;
    let bits = (mcs.efficiency * re).floor() as u64;
    Ok(bits / 8)
}

/// Block error rate at `sinr_db` for an MCS with 10%-BLER threshold `threshold_db`.
pub fn bler(sinr_db: f64, threshold_db: f64) -> f64 {
    let x0 = -((1.0 - BLER_ANCHOR) / BLER_ANCHOR).ln() / BLER_SLOPE;
    let x = sinr_db - threshold_db;
    1.0 / (1.0 + (BLER_SLOPE * (x - x0)).exp())
}

/// Bernoulli decode draw for an effective (linear) SINR.
pub fn decode_success<R: Rng + ?Sized>(
    effective_sinr: f64,
    threshold_db: f64,
    rng: &mut R,
) -> bool {
    let p_fail = bler(lin_to_db(effective_sinr), threshold_db);
    rng.random::<f64>() >= p_fail
}

/// Capacity-averaged effective SINR of a set of subband SINRs (all linear).
pub fn effective_sinr(sinrs: &[f64]) -> f64 {
    if sinrs.is_empty() {
        return 0.0;
    }
    let mean_cap = sinrs.iter().map(|s| (1.0 + s).log2()).sum::<f64>() / sinrs.len() as f64;
    mean_cap.exp2() - 1.0
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.max(1e-30).log10()
}
