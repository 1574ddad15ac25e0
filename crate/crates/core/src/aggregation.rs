//! Device aggregation: nearby UEs form groups around the one with the best
//! channel, and the critical downlink flows of the others are carried over the
//! primary's cellular link, then relayed on a short-range link.

use crate::config::AggregationPolicy;
use crate::geometry::Point;
use crate::traffic::{Direction, FlowSpec, Priority};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationGroup {
    pub primary: usize,
    pub secondaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowRoute {
    Direct,
    ViaPrimary { primary: usize },
}

/// Greedy grouping: UEs are visited by descending wideband SINR (index breaks
/// ties); each UE not yet grouped becomes a primary and takes every ungrouped
/// UE within `radius_m`. Groups without secondaries are not returned.
pub fn form_groups(
    positions: &[Point],
    wideband_sinr_db: &[f64],
    radius_m: f64,
) -> Vec<AggregationGroup> {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        wideband_sinr_db[b]
            .total_cmp(&wideband_sinr_db[a])
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; positions.len()];
    let mut groups = Vec::new();
    for (k, &p) in order.iter().enumerate() {
        if taken[p] {
            continue;
        }
        taken[p] = true;
        let secondaries: Vec<usize> = order[k + 1..]
            .iter()
            .copied()
            .filter(|&s| !taken[s] && positions[p].dist(positions[s]) <= radius_m)
            .collect();
        for &s in &secondaries {
            taken[s] = true;
        }
        if !secondaries.is_empty() {
            groups.push(AggregationGroup {
                primary: p,
                secondaries,
            });
        }
    }
    groups
}

/// Route of every flow of every UE. Only critical downlink flows of
/// secondaries move onto the primary.
pub fn route_flows(
    policy: AggregationPolicy,
    groups: &[AggregationGroup],
    ue_count: usize,
    flows: &[FlowSpec],
) -> Vec<Vec<FlowRoute>> {
    let mut primary_of = vec![None; ue_count];
    if policy == AggregationPolicy::NetworkAware {
        for g in groups {
            for &s in &g.secondaries {
                primary_of[s] = Some(g.primary);
            }
        }
    }
    (0..ue_count)
        .map(|ue| {
            flows
                .iter()
                .map(|f| match primary_of[ue] {
                    Some(primary)
                        if f.direction == Direction::Dl && f.priority == Priority::Critical =>
                    {
                        FlowRoute::ViaPrimary { primary }
                    }
                    _ => FlowRoute::Direct,
                })
                .collect()
        })
        .collect()
}

/// FIFO short-range link from a primary to its secondaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayLink {
    pub capacity_bps: f64,
    pub hop_latency_s: f64,
    pub relay_delay_s: f64,
    busy_until_s: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl RelayLink {
    pub fn new(capacity_bps: f64, hop_latency_s: f64, relay_delay_s: f64) -> Self {
        RelayLink {
            capacity_bps,
            hop_latency_s,
            relay_delay_s,
            busy_until_s: 0.0,
            bytes_in: 0,
            bytes_out: 0,
        }
    }

    /// Forwards a packet fully received by the primary at `received_s`;
    /// returns its delivery time at the secondary.
    pub fn deliver_via_primary(&mut self, received_s: f64, bytes: u64) -> f64 {
        self.bytes_in += bytes;
        let start = (received_s + self.relay_delay_s).max(self.busy_until_s);
        self.busy_until_s = start + bytes as f64 * 8.0 / self.capacity_bps;
        self.bytes_out += bytes;
        self.busy_until_s + self.hop_latency_s
    }
}
