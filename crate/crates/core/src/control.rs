//! Downlink control channel: a per-cell, per-TTI pool of control resource
//! units (CRUs) that every grant must fit into.
//!
//! The legacy design sends one dedicated message per grant at an aggregation
//! level picked from the UE's wideband SINR. The two-stage design keeps
//! dedicated, conservatively coded messages for high-priority grants and packs
//! low-priority grants several to a message with aggressive coding.

use rand::Rng;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::radio::bler;

crate::config::string_enum!(
    PriorityClass {
        High => "high",
        Low => "low",
    }
);

/// Wideband SINR floor (dB) and decode threshold (dB) for each aggregation level.
pub const AGGREGATION_LEVELS: [(u32, f64, f64); 4] = [
    (1, 10.0, 3.0),
    (2, 4.0, 0.0),
    (4, 0.0, -3.0),
    (8, f64::NEG_INFINITY, -6.0),
];

/// Decode threshold of the shared low-priority message (16QAM-class coding).
pub const STAGE2_THRESHOLD_DB: f64 = 3.5;

/// CRUs a dedicated message needs at this wideband SINR.
pub fn cru_cost(wideband_sinr_db: f64) -> u32 {
    AGGREGATION_LEVELS
        .iter()
        .find(|(_, floor, _)| wideband_sinr_db >= *floor)
        .map_or(8, |(al, _, _)| *al)
}

fn dedicated_threshold_db(cost: u32) -> f64 {
    AGGREGATION_LEVELS
        .iter()
        .find(|(al, _, _)| *al == cost)
        .map_or(-6.0, |(_, _, thr)| *thr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// One dedicated message per grant.
    Dedicated,
    /// Shared message carrying several low-priority grants.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlPool {
    pub total_cru: u32,
    pub stage1_cru: u32,
}

impl ControlPool {
    pub fn legacy(total_cru: u32) -> Self {
        ControlPool {
            total_cru,
            stage1_cru: total_cru,
        }
    }

    pub fn two_stage(total_cru: u32, stage1_share: f64) -> Self {
        ControlPool {
            total_cru,
            stage1_cru: ((f64::from(total_cru) * stage1_share).floor() as u32).min(total_cru),
        }
    }

    pub fn stage2_cru(&self) -> u32 {
        self.total_cru - self.stage1_cru
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRequest {
    pub ue: usize,
    pub class: PriorityClass,
    pub wideband_sinr_db: f64,
}

impl ControlRequest {
    pub fn cost(&self) -> u32 {
        cru_cost(self.wideband_sinr_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlDecision {
    Sent {
        stage: Stage,
        /// Shared message number within the TTI, for shared grants.
        message: Option<usize>,
    },
    Deferred,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlAllocation {
    /// One decision per request, in request order.
    pub decisions: Vec<ControlDecision>,
    pub used_cru: u32,
}

impl ControlAllocation {
    pub fn sent(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| matches!(d, ControlDecision::Sent { .. }))
            .count()
    }

    pub fn deferred(&self) -> usize {
        self.decisions.len() - self.sent()
    }
}

/// Dedicated messages in request order until the pool runs out. A request that
/// does not fit blocks everything behind it.
pub fn allocate_legacy(pool: &ControlPool, requests: &[ControlRequest]) -> ControlAllocation {
    let mut left = pool.total_cru;
    let mut blocked = false;
    let decisions = requests
        .iter()
        .map(|r| {
            let c = r.cost();
            if !blocked && c <= left {
                left -= c;
                ControlDecision::Sent {
                    stage: Stage::Dedicated,
                    message: None,
                }
            } else {
                blocked = true;
                ControlDecision::Deferred
            }
        })
        .collect();
    ControlAllocation {
        decisions,
        used_cru: pool.total_cru - left,
    }
}

/// Two-stage allocation.
///
/// High-priority grants draw dedicated messages from the stage-1 share, low
/// priority grants are packed `per_message` to a shared message of
/// `message_cost` CRUs from the stage-2 share. Whatever either side leaves
/// unused is then offered to high-priority grants, then low ones. Within a
/// class a request that does not fit blocks those behind it.
///
/// A lone low-priority grant can cost more in a shared message than in its own,
/// so when all-dedicated allocation sends more grants, that plan is used.
pub fn allocate_two_stage(
    pool: &ControlPool,
    requests: &[ControlRequest],
    per_message: usize,
    message_cost: u32,
) -> ControlAllocation {
    let mut decisions = vec![ControlDecision::Deferred; requests.len()];
    let high: Vec<usize> = (0..requests.len())
        .filter(|&i| requests[i].class == PriorityClass::High)
        .collect();
    let low: Vec<usize> = (0..requests.len())
        .filter(|&i| requests[i].class == PriorityClass::Low)
        .collect();

    let mut s1 = pool.stage1_cru;
    let mut s2 = pool.stage2_cru();
    let mut hi_next = 0;
    let mut lo_next = 0;
    let mut messages = 0usize;
    let mut in_message = per_message;

    let place_high = |budget: &mut u32, hi_next: &mut usize, decisions: &mut [ControlDecision]| {
        while *hi_next < high.len() {
            let c = requests[high[*hi_next]].cost();
            if c > *budget {
                break;
            }
            *budget -= c;
            decisions[high[*hi_next]] = ControlDecision::Sent {
                stage: Stage::Dedicated,
                message: None,
            };
            *hi_next += 1;
        }
    };
    let place_low = |budget: &mut u32,
                     lo_next: &mut usize,
                     messages: &mut usize,
                     in_message: &mut usize,
                     decisions: &mut [ControlDecision]| {
        while *lo_next < low.len() {
            if *in_message >= per_message {
                if message_cost > *budget || per_message == 0 {
                    break;
                }
                *budget -= message_cost;
                *messages += 1;
                *in_message = 0;
            }
            decisions[low[*lo_next]] = ControlDecision::Sent {
                stage: Stage::Shared,
                message: Some(*messages - 1),
            };
            *in_message += 1;
            *lo_next += 1;
        }
    };

    place_high(&mut s1, &mut hi_next, &mut decisions);
    place_low(
        &mut s2,
        &mut lo_next,
        &mut messages,
        &mut in_message,
        &mut decisions,
    );
    let mut spare = s1 + s2;
    place_high(&mut spare, &mut hi_next, &mut decisions);
    place_low(
        &mut spare,
        &mut lo_next,
        &mut messages,
        &mut in_message,
        &mut decisions,
    );

    let packed = ControlAllocation {
        decisions,
        used_cru: pool.total_cru - spare,
    };
    let dedicated = allocate_legacy(pool, requests);
    if dedicated.sent() > packed.sent() {
        dedicated
    } else {
        packed
    }
}

/// Draws whether a UE decodes its control message.
pub fn decode_control<R: Rng + ?Sized>(stage: Stage, wideband_sinr_db: f64, rng: &mut R) -> bool {
    let threshold = match stage {
        Stage::Dedicated => dedicated_threshold_db(cru_cost(wideband_sinr_db)),
        Stage::Shared => STAGE2_THRESHOLD_DB,
    };
    rng.random::<f64>() >= bler(wideband_sinr_db, threshold)
}

/// Priority class of every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityAssignment {
    classes: Vec<Option<PriorityClass>>,
}

impl PriorityAssignment {
    pub fn new(classes: Vec<PriorityClass>) -> Self {
        PriorityAssignment {
            classes: classes.into_iter().map(Some).collect(),
        }
    }

    /// Each UE is high priority with probability `high_fraction`.
    pub fn random<R: Rng + ?Sized>(ues: usize, high_fraction: f64, rng: &mut R) -> Self {
        PriorityAssignment::new(
            (0..ues)
                .map(|_| {
                    if rng.random_bool(high_fraction) {
                        PriorityClass::High
                    } else {
                        PriorityClass::Low
                    }
                })
                .collect(),
        )
    }

    /// Lifts every UE whose wideband SINR is below `threshold_db` to high priority.
    pub fn promote_cell_edge(&mut self, wideband_sinr_db: &[f64], threshold_db: f64) {
        for (c, &s) in self.classes.iter_mut().zip(wideband_sinr_db) {
            if s < threshold_db {
                *c = Some(PriorityClass::High);
            }
        }
    }

    pub fn class(&self, ue: usize) -> Result<PriorityClass> {
        self.classes
            .get(ue)
            .copied()
            .flatten()
            .ok_or(Error::MissingPriority(ue))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}
