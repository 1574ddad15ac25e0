use std::collections::BTreeSet;

use proptest::prelude::*;

use xrsim_core::aggregation::{form_groups, RelayLink};
use xrsim_core::bsr::{build_table, RApiAssistance, B_MAX};
use xrsim_core::control::{
    allocate_legacy, allocate_two_stage, ControlDecision, ControlPool, ControlRequest,
    PriorityClass, Stage,
};
use xrsim_core::geometry::Point;
use xrsim_core::metrics::{percentile, Ecdf, SatisfactionSpec};
use xrsim_core::radio::{tb_size, McsTable};
use xrsim_core::scheduler::{pf_schedule, PfCandidate};
use xrsim_core::{run, BsrScheme, ScenarioConfig};

fn assistance() -> impl Strategy<Value = RApiAssistance> {
    (0.0..80e6f64, 1e3..40e6f64, 1.5..8.0f64).prop_map(|(m, a, r)| RApiAssistance {
        refinement_factor: r,
        ..RApiAssistance::new(m, a)
    })
}

fn request() -> impl Strategy<Value = ControlRequest> {
    (0usize..64, any::<bool>(), -10.0..30.0f64).prop_map(|(ue, high, sinr)| ControlRequest {
        ue,
        class: if high {
            PriorityClass::High
        } else {
            PriorityClass::Low
        },
        wideband_sinr_db: sinr,
    })
}

/// CRUs actually spent by a plan: dedicated costs plus one charge per shared message.
fn spent(reqs: &[ControlRequest], decisions: &[ControlDecision], msg_cost: u32) -> u32 {
    let mut shared = BTreeSet::new();
    let mut total = 0;
    for (r, d) in reqs.iter().zip(decisions) {
        match d {
            ControlDecision::Sent {
                stage: Stage::Dedicated,
                ..
            } => total += r.cost(),
            ControlDecision::Sent {
                stage: Stage::Shared,
                message,
            } => {
                shared.insert(message.expect("shared grants name their message"));
            }
            ControlDecision::Deferred => {}
        }
    }
    total + shared.len() as u32 * msg_cost
}

proptest! {
    #[test]
    fn bsr_round_trip_contains_volume(v in 0..B_MAX, scheme in 0usize..3, a in assistance()) {
        let scheme = BsrScheme::ALL[scheme];
        let Ok(t) = build_table(scheme, Some(&a)) else { return Ok(()) };
        let idx = t.encode(v);
        let r = t.decode(idx.value).unwrap();
        prop_assert!(r.contains(v));
        prop_assert_eq!(idx.range, r);
        prop_assert!(t.grant_estimate(idx.value) >= v);
        prop_assert!(t.boundaries.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(t.boundaries.len() as u32, t.index_count() - 1);
    }

    #[test]
    fn pf_allocations_are_disjoint_and_on_free_prbs(
        cqis in prop::collection::vec(prop::collection::vec(0u8..=15, 14), 1..7),
        demands in prop::collection::vec(0u64..200_000, 7),
        avgs in prop::collection::vec(0.5..1e5f64, 7),
        free in prop::collection::vec(any::<bool>(), 106),
    ) {
        let mcs = McsTable::pinned();
        let cands: Vec<PfCandidate> = cqis
            .iter()
            .enumerate()
            .map(|(i, c)| PfCandidate { ue: i, demand_bytes: demands[i], avg_bytes: avgs[i], cqi: c })
            .collect();
        let out = pf_schedule(&cands, &free, 8, &mcs, 7);
        let mut used = [false; 106];
        for a in &out {
            prop_assert!(!a.prbs.is_empty());
            prop_assert!(demands[a.ue] > 0);
            prop_assert_eq!(a.tb_bytes, tb_size(mcs.entry(a.mcs), a.prbs.len(), 7).unwrap());
            for &p in &a.prbs {
                prop_assert!(free[p], "PRB {} was busy", p);
                prop_assert!(!used[p], "PRB {} granted twice", p);
                used[p] = true;
            }
        }
        prop_assert!(out.windows(2).all(|w| w[0].metric >= w[1].metric));
    }

    #[test]
    fn control_never_exceeds_pool(
        reqs in prop::collection::vec(request(), 0..24),
        pool in 1u32..40,
        share in 0.0..=1.0f64,
        per_msg in 1usize..6,
        msg_cost in 1u32..4,
    ) {
        let legacy = allocate_legacy(&ControlPool::legacy(pool), &reqs);
        prop_assert_eq!(legacy.decisions.len(), reqs.len());
        prop_assert!(legacy.used_cru <= pool);
        prop_assert_eq!(spent(&reqs, &legacy.decisions, msg_cost), legacy.used_cru);

        let two = allocate_two_stage(&ControlPool::two_stage(pool, share), &reqs, per_msg, msg_cost);
        prop_assert_eq!(two.decisions.len(), reqs.len());
        prop_assert!(two.used_cru <= pool);
        prop_assert_eq!(spent(&reqs, &two.decisions, msg_cost), two.used_cru);
        prop_assert!(two.sent() >= legacy.sent());
    }

    #[test]
    fn percentile_is_monotone_and_bounded(
        xs in prop::collection::vec(-1e6..1e6f64, 1..200),
        p in 0.0..=100.0f64,
        q in 0.0..=100.0f64,
    ) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = percentile(&xs, lo).unwrap();
        let b = percentile(&xs, hi).unwrap();
        prop_assert!(a <= b);
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && b <= max);
        prop_assert!(xs.contains(&a));
    }

    #[test]
    fn ecdf_is_a_distribution(xs in prop::collection::vec(-1e3..1e3f64, 1..100)) {
        let e = Ecdf::new("x", "u", xs.clone());
        let pts: Vec<(f64, f64)> = e.points().collect();
        prop_assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert!(pts[0].1 > 0.0);
        prop_assert_eq!(pts.last().unwrap().1, 1.0);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(e.cdf(max), 1.0);
    }

    #[test]
    fn relay_link_is_fifo_and_never_early(
        pkts in prop::collection::vec((0.0..1.0f64, 0u64..2_000_000), 1..30),
        cap in 1e8..1e10f64,
    ) {
        let mut pkts = pkts;
        pkts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut link = RelayLink::new(cap, 1e-3, 0.5e-3);
        let mut last = 0.0;
        for (t, bytes) in pkts {
            let d = link.deliver_via_primary(t, bytes);
            prop_assert!(d >= t + 1.5e-3 + bytes as f64 * 8.0 / cap - 1e-12);
            prop_assert!(d >= last);
            last = d;
        }
        prop_assert_eq!(link.bytes_in, link.bytes_out);
    }

    #[test]
    fn groups_are_disjoint_and_local(
        pts in prop::collection::vec((0.0..300.0f64, 0.0..300.0f64, -5.0..30.0f64), 0..40),
        radius in 1.0..80.0f64,
    ) {
        let pos: Vec<Point> = pts.iter().map(|p| Point::new(p.0, p.1)).collect();
        let sinr: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let groups = form_groups(&pos, &sinr, radius);
        let mut seen = BTreeSet::new();
        for g in &groups {
            prop_assert!(!g.secondaries.is_empty());
            prop_assert!(!g.secondaries.contains(&g.primary));
            prop_assert!(seen.insert(g.primary));
            for &s in &g.secondaries {
                prop_assert!(seen.insert(s));
                prop_assert!(pos[g.primary].dist(pos[s]) <= radius);
                prop_assert!(sinr[g.primary] >= sinr[s]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn short_runs_keep_report_invariants(seed in 0u64..1000, ues in 1usize..4, scheme in 0usize..3, two_stage in any::<bool>()) {
        let mut c = ScenarioConfig::default();
        c.deployment.cells_per_site = 1;
        c.deployment.ues_per_cell_mean = ues;
        c.sim_duration_s = 0.1;
        c.rng_seed = seed;
        c.bsr_scheme = BsrScheme::ALL[scheme];
        c.control_design = if two_stage { xrsim_core::ControlDesign::TwoStage } else { xrsim_core::ControlDesign::Legacy };
        let r = run(&c).unwrap();
        let sat = r.satisfaction(&SatisfactionSpec { threshold: 0.99 });
        prop_assert!((0.0..=1.0).contains(&sat.aggregate));
        prop_assert!(sat.per_cell.iter().all(|x| (0.0..=1.0).contains(x)));
        let per_ue: u64 = r.ues.iter().flat_map(|u| &u.flows).map(|f| f.delivered_bytes).sum();
        prop_assert_eq!(per_ue, r.delivered_bytes);
        prop_assert!(r.delivered_bytes <= r.generated_bytes);
        for u in &r.ues {
            for f in &u.flows {
                prop_assert!(f.within_pdb <= f.judged && f.judged <= f.packets);
            }
        }
    }
}
