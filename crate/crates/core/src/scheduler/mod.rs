//! MAC scheduling: proportional fair allocation, grant sizing from BSR,
//! HARQ and semi-persistent grants.

pub mod harq;
pub mod sps;

use crate::bsr::BsrTableSpec;
use crate::radio::McsTable;
use crate::traffic::Direction;

pub use harq::{HarqEntity, HarqOutcome, HarqProcess};
pub use sps::{assign_sps, SpsConfig};

/// One resource allocation issued in a TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub ue: usize,
    pub direction: Direction,
    pub prbs: Vec<usize>,
    pub mcs: u8,
    pub tb_bytes: u64,
    pub tti: u64,
    pub harq_id: Option<u64>,
    pub new_tx: bool,
}

/// Exponentially averaged served bytes per TTI, per UE and direction.
#[derive(Debug, Clone)]
pub struct PfState {
    avg: Vec<[f64; 2]>,
    time_constant: f64,
}

/// Averages start here so a fresh UE has a finite, large PF metric.
const PF_INITIAL_AVG: f64 = 1.0;

impl PfState {
    pub fn new(ues: usize, time_constant_tti: f64) -> Self {
        PfState {
            avg: vec![[PF_INITIAL_AVG; 2]; ues],
            time_constant: time_constant_tti,
        }
    }

    pub fn average(&self, ue: usize, dir: Direction) -> f64 {
        self.avg[ue][dir.index()]
    }

    /// Folds one TTI of service into every UE's average.
    pub fn end_tti(&mut self, served: &[[u64; 2]]) {
        let a = 1.0 / self.time_constant;
        for (avg, s) in self.avg.iter_mut().zip(served) {
            for d in 0..2 {
                avg[d] = (1.0 - a) * avg[d] + a * s[d] as f64;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PfCandidate<'a> {
    pub ue: usize,
    pub demand_bytes: u64,
    pub avg_bytes: f64,
    /// Per-subband CQI as seen by the scheduler.
    pub cqi: &'a [u8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfAllocation {
    pub ue: usize,
    pub prbs: Vec<usize>,
    pub mcs: u8,
    pub tb_bytes: u64,
    /// Wideband PF metric used to rank the allocation.
    pub metric: f64,
}

/// Proportional fair allocation on the free PRBs.
///
/// Subbands are visited in order. On each one the UE with the largest
/// `rate / average` among those with remaining demand takes as many free PRBs
/// as its demand needs at that subband's rate; leftovers go to the next UE.
/// Each UE's MCS is then the floor of its PRB-weighted mean CQI.
/// Allocations come back ranked by their PF metric, best first.
pub fn pf_schedule(
    candidates: &[PfCandidate<'_>],
    free: &[bool],
    subband_size: usize,
    mcs: &McsTable,
    tti_symbols: u32,
) -> Vec<PfAllocation> {
    let re_per_prb =
        f64::from((12 * tti_symbols).saturating_sub(crate::radio::mcs::DMRS_RE_PER_PRB));
    let mut remaining: Vec<u64> = candidates.iter().map(|c| c.demand_bytes).collect();
    let mut prbs: Vec<Vec<usize>> = vec![Vec::new(); candidates.len()];
    let subbands = free.len().div_ceil(subband_size.max(1));

    for sb in 0..subbands {
        let range = sb * subband_size..((sb + 1) * subband_size).min(free.len());
        let open: Vec<usize> = range.filter(|&p| free[p]).collect();
        let mut next = 0;
        while next < open.len() {
            let best = candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| remaining[*i] > 0)
                .map(|(i, c)| {
                    let eff = mcs.select_mcs(c.cqi[sb]).efficiency;
                    (i, eff / c.avg_bytes.max(1e-9))
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((i, _)) = best else { break };
            let eff = mcs.select_mcs(candidates[i].cqi[sb]).efficiency;
            let per_prb = ((eff * re_per_prb / 8.0).floor() as u64).max(1);
            let need = remaining[i].div_ceil(per_prb) as usize;
            let k = need.min(open.len() - next);
            prbs[i].extend_from_slice(&open[next..next + k]);
            remaining[i] = remaining[i].saturating_sub(k as u64 * per_prb);
            next += k;
        }
    }

    let mut out: Vec<PfAllocation> = candidates
        .iter()
        .zip(prbs)
        .filter(|(_, p)| !p.is_empty())
        .map(|(c, p)| {
            let cqi_sum: u32 = p
                .iter()
                .map(|&prb| u32::from(c.cqi[prb / subband_size]))
                .sum();
            let cqi = (cqi_sum / p.len() as u32) as u8;
            let entry = mcs.select_mcs(cqi);
            let tb = crate::radio::tb_size(entry, p.len(), tti_symbols).expect("non-empty");
            PfAllocation {
                ue: c.ue,
                metric: entry.efficiency / c.avg_bytes.max(1e-9),
                prbs: p,
                mcs: entry.index,
                tb_bytes: tb,
            }
        })
        .collect();
    out.sort_by(|a, b| b.metric.total_cmp(&a.metric).then(a.ue.cmp(&b.ue)));
    out
}

/// Uplink demand the network plans for after decoding a BSR index: the upper
/// end of the reported range.
pub fn size_ul_grant(index: u32, table: &BsrTableSpec) -> u64 {
    table.grant_estimate(index)
}

/// Over-scheduling implied by a report: planned volume minus the true volume.
pub fn over_scheduling_bytes(estimate: u64, true_volume: u64) -> u64 {
    estimate.saturating_sub(true_volume)
}
