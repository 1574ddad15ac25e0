//! Time-stepped simulation of one scenario.
//!
//! Every TTI runs, in order: fading update, packet arrivals, HARQ feedback,
//! channel measurement, buffer status reporting and then scheduling of every
//! cell in both directions. Cells do not interact beyond the static
//! interference already folded into the radio model.
//!
//! Each source of randomness owns a ChaCha8 stream derived from the seed, so
//! the drop, shadowing, fading and traffic of a run do not depend on the
//! scheduler, BSR or control variant being simulated.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{form_groups, route_flows, AggregationGroup, FlowRoute, RelayLink};
use crate::bsr::{build_table, BsrTableSpec, RApiAssistance};
use crate::config::{
    AggregationPolicy, BsrAssist, BsrScheme, ControlDesign, PriorityMode, ScenarioConfig,
    SchedulerMode, Stage2Retry,
};
use crate::control::{
    allocate_legacy, allocate_two_stage, decode_control, ControlDecision, ControlPool,
    ControlRequest, PriorityAssignment, PriorityClass, Stage,
};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::metrics::{
    FlowStats, GrantKind, GrantOutcome, PacketRecord, RelayRecord, RunReport, TbRecord, TraceEvent,
    UeRecord, WasteCounters,
};
use crate::radio::{
    decode_success, drop_ues, effective_sinr, lin_to_db, tb_size, McsTable, RadioEnv,
};
use crate::scheduler::{
    assign_sps, pf_schedule, HarqEntity, HarqOutcome, HarqProcess, PfCandidate, PfState, SpsConfig,
};
use crate::traffic::{
    generate_arrivals, AppStats, Direction, FlowBuffer, Packet, Priority, Segment,
};

/// Stream ids of the run's random number generators.
pub mod stream {
    pub const DROP: u64 = 1;
    pub const SHADOWING: u64 = 2;
    pub const FADING: u64 = 3;
    pub const DECODE: u64 = 4;
    pub const CONTROL: u64 = 5;
    pub const PRIORITY: u64 = 6;
    /// Traffic of (ue, flow) uses `TRAFFIC + ue * 1024 + flow`.
    pub const TRAFFIC: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const RANDOM_HIGH_FRACTION: f64 = 0.5;
const DIRS: [Direction; 2] = [Direction::Dl, Direction::Ul];

/// A flow buffer at a UE: one of its own flows, or a flow relayed for a secondary.
#[derive(Debug, Clone)]
struct LocalFlow {
    owner: usize,
    direction: Direction,
    priority: Priority,
}

#[derive(Debug, Clone)]
struct PacketInfo {
    owner: usize,
    spec: usize,
    carrier: usize,
    local: usize,
    size: u64,
    arrival_s: f64,
    delivered: u64,
    delivery_s: Option<f64>,
}

#[derive(Debug, Clone)]
struct Report {
    arrive_tti: u64,
    estimate: u64,
    granted_at: u64,
}

#[derive(Debug, Clone)]
struct UeState {
    cell: usize,
    flows: Vec<LocalFlow>,
    bufs: Vec<FlowBuffer>,
    class: PriorityClass,
    wideband_sinr_db: f64,
    /// Adaptive table of this UE when it tracks its own statistics.
    own_table: Option<BsrTableSpec>,
    estimate: u64,
    granted_total: u64,
    reports: VecDeque<Report>,
    ul_new_data: bool,
    stats: AppStats,
    last_ul_volume: u64,
    cqi: [VecDeque<Vec<u8>>; 2],
    sinr: [Vec<f64>; 2],
    sps: [Option<SpsConfig>; 2],
    has_deferred: [bool; 2],
    served: [u64; 2],
    scheduled_bytes: u64,
    attempts: u64,
}

#[derive(Debug, Clone, Copy)]
struct Deferred {
    ue: usize,
    dir: Direction,
    prb_count: usize,
    mcs: u8,
    flow: Option<usize>,
    escalate: bool,
}

#[derive(Debug, Clone, Default)]
struct CellState {
    ues: Vec<usize>,
    /// (eligible tti, HARQ id) per direction.
    retx: [Vec<(u64, u64)>; 2],
    deferred: VecDeque<Deferred>,
}

#[derive(Debug, Clone, Copy)]
enum ReqKind {
    Retx(u64),
    Deferred { escalate: bool },
    New,
    Sps,
}

#[derive(Debug, Clone)]
struct Request {
    ue: usize,
    dir: Direction,
    prbs: Vec<usize>,
    mcs: u8,
    tb: u64,
    flow: Option<usize>,
    kind: ReqKind,
}

/// Byte totals used by the conservation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteLedger {
    pub generated: u64,
    pub delivered: u64,
    pub buffered: u64,
    pub in_flight: u64,
}

impl ByteLedger {
    pub fn balanced(&self) -> bool {
        self.generated == self.delivered + self.buffered + self.in_flight
    }
}

/// One run in progress.
pub struct Simulation {
    cfg: ScenarioConfig,
    mcs: McsTable,
    radio: RadioEnv,
    table: BsrTableSpec,
    ues: Vec<UeState>,
    cells: Vec<CellState>,
    groups: Vec<AggregationGroup>,
    relays: Vec<Option<RelayLink>>,
    /// Pending arrivals of each (owner, flow) source and where they are buffered.
    sources: Vec<(VecDeque<Packet>, usize, usize)>,
    packets: Vec<PacketInfo>,
    flow_stats: Vec<Vec<FlowStats>>,
    harq: HarqEntity,
    feedback: VecDeque<(u64, u64, bool)>,
    pf: PfState,
    decode_rng: ChaCha8Rng,
    control_rng: ChaCha8Rng,
    waste: WasteCounters,
    tbs: Vec<TbRecord>,
    trace: Vec<TraceEvent>,
    generated: u64,
    delivered: u64,
    tti: u64,
    tti_count: u64,
    dt: f64,
}

/// Runs a scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport> {
    let mut sim = Simulation::new(cfg)?;
    while !sim.finished() {
        sim.step()?;
    }
    Ok(sim.finish())
}

impl Simulation {
    #[allow(clippy::needless_range_loop)]
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.rng_seed;
        let layout = Layout::new(&cfg.deployment);
        let radio = drop_ues(
            cfg,
            &layout,
            &mut stream_rng(seed, stream::DROP),
            &mut stream_rng(seed, stream::SHADOWING),
            &mut stream_rng(seed, stream::FADING),
        );
        let mcs = McsTable::pinned();
        let n = radio.ue_count();
        let dt = cfg.tti_duration_s();
        let tti_count = cfg.tti_count();

        let assistance = RApiAssistance {
            refinement_factor: cfg.bsr.refinement,
            ..RApiAssistance::new(cfg.bsr.assist_mean_bytes, cfg.bsr.alpha_bytes)
        };
        let table = match (&cfg.bsr.legacy_table, cfg.bsr_scheme) {
            (Some(path), BsrScheme::Legacy8) => BsrTableSpec::load_csv(BsrScheme::Legacy8, path)?,
            _ => build_table(cfg.bsr_scheme, Some(&assistance))?,
        };

        let has_critical = cfg.traffic.iter().any(|f| f.priority == Priority::Critical);
        let mut priorities = match cfg.control.priority_mode {
            PriorityMode::Random => PriorityAssignment::random(
                n,
                RANDOM_HIGH_FRACTION,
                &mut stream_rng(seed, stream::PRIORITY),
            ),
            PriorityMode::Traffic => PriorityAssignment::new(vec![
                if has_critical {
                    PriorityClass::High
                } else {
                    PriorityClass::Low
                };
                n
            ]),
        };
        let wideband: Vec<f64> = (0..n).map(|u| radio.wideband_sinr_db(u)).collect();
        if cfg.control.cell_edge_promotion {
            priorities.promote_cell_edge(&wideband, cfg.control.cell_edge_sinr_db);
        }

        let mut ues = Vec::with_capacity(n);
        for u in 0..n {
            let flows: Vec<LocalFlow> = cfg
                .traffic
                .iter()
                .map(|f| LocalFlow {
                    owner: u,
                    direction: f.direction,
                    priority: f.priority,
                })
                .collect();
            ues.push(UeState {
                cell: radio.serving_cell(u),
                bufs: vec![FlowBuffer::default(); flows.len()],
                flows,
                class: priorities.class(u)?,
                wideband_sinr_db: wideband[u],
                own_table: None,
                estimate: 0,
                granted_total: 0,
                reports: VecDeque::new(),
                ul_new_data: false,
                stats: AppStats::new(cfg.stats_window_s),
                last_ul_volume: 0,
                cqi: [VecDeque::new(), VecDeque::new()],
                sinr: [
                    vec![0.0; radio.subband_count],
                    vec![0.0; radio.subband_count],
                ],
                sps: [None, None],
                has_deferred: [false; 2],
                served: [0; 2],
                scheduled_bytes: 0,
                attempts: 0,
            });
        }

        let mut cells = vec![CellState::default(); layout.cells.len()];
        for (u, ue) in ues.iter().enumerate() {
            cells[ue.cell].ues.push(u);
        }

        let positions: Vec<_> = radio.links.iter().map(|l| l.position).collect();
        let aggregate =
            cfg.aggregation_enabled && cfg.aggregation.policy == AggregationPolicy::NetworkAware;
        let groups = if aggregate {
            form_groups(&positions, &wideband, cfg.aggregation.radius_m)
        } else {
            Vec::new()
        };
        let policy = if aggregate {
            AggregationPolicy::NetworkAware
        } else {
            AggregationPolicy::Off
        };
        let routes = route_flows(policy, &groups, n, &cfg.traffic);
        let mut relays: Vec<Option<RelayLink>> = vec![None; n];
        for g in &groups {
            relays[g.primary] = Some(RelayLink::new(
                cfg.aggregation.link_capacity_bps,
                cfg.aggregation.hop_latency_ms * 1e-3,
                cfg.aggregation.relay_delay_ms * 1e-3,
            ));
        }

        let mut sources = Vec::new();
        for u in 0..n {
            for (f, spec) in cfg.traffic.iter().enumerate() {
                let (carrier, local) = match routes[u][f] {
                    FlowRoute::Direct => (u, f),
                    FlowRoute::ViaPrimary { primary } => {
                        let p = &mut ues[primary];
                        p.flows.push(LocalFlow {
                            owner: u,
                            direction: spec.direction,
                            priority: spec.priority,
                        });
                        p.bufs.push(FlowBuffer::default());
                        (primary, p.flows.len() - 1)
                    }
                };
                let mut rng = stream_rng(seed, stream::TRAFFIC + u as u64 * 1024 + f as u64);
                let mut ids = 0;
                let arrivals =
                    generate_arrivals(spec, f, 0.0, cfg.sim_duration_s, &mut ids, &mut rng);
                sources.push((VecDeque::from(arrivals), carrier, local));
            }
        }

        if cfg.scheduler_mode == SchedulerMode::SemiPersistent {
            for cell in &cells {
                for dir in DIRS {
                    let configs = assign_sps(
                        &cell.ues,
                        cfg.mac.sps_period_tti,
                        cfg.mac.sps_prbs_per_ue,
                        radio.prb_count,
                        cfg.mac.sps_validity_tti,
                        |ue| {
                            let cqi = mcs
                                .sinr_to_cqi(radio.mean_sinr_db(ue, dir), cfg.radio.cqi_backoff_db);
                            mcs.select_mcs(cqi).index
                        },
                    );
                    for c in configs {
                        let ue = c.ue;
                        ues[ue].sps[dir.index()] = Some(c);
                    }
                }
            }
        }

        Ok(Simulation {
            flow_stats: vec![vec![FlowStats::default(); cfg.traffic.len()]; n],
            harq: HarqEntity::new(cfg.mac.harq_max_tx, cfg.mac.harq_retx_delay_tti),
            pf: PfState::new(n, cfg.mac.pf_time_constant_tti),
            decode_rng: stream_rng(seed, stream::DECODE),
            control_rng: stream_rng(seed, stream::CONTROL),
            cfg: cfg.clone(),
            mcs,
            radio,
            table,
            ues,
            cells,
            groups,
            relays,
            sources,
            packets: Vec::new(),
            feedback: VecDeque::new(),
            waste: WasteCounters::default(),
            tbs: Vec::new(),
            trace: Vec::new(),
            generated: 0,
            delivered: 0,
            tti: 0,
            tti_count,
            dt,
        })
    }

    pub fn tti(&self) -> u64 {
        self.tti
    }

    pub fn finished(&self) -> bool {
        self.tti >= self.tti_count
    }

    pub fn radio(&self) -> &RadioEnv {
        &self.radio
    }

    pub fn groups(&self) -> &[AggregationGroup] {
        &self.groups
    }

    pub fn ledger(&self) -> ByteLedger {
        ByteLedger {
            generated: self.generated,
            delivered: self.delivered,
            buffered: self
                .ues
                .iter()
                .flat_map(|u| u.bufs.iter())
                .map(FlowBuffer::buffered_bytes)
                .sum(),
            in_flight: self.harq.in_flight_bytes(),
        }
    }

    /// Advances the run by one TTI.
    pub fn step(&mut self) -> Result<()> {
        let t = self.tti;
        if t > 0 {
            self.radio.advance();
        }
        self.arrivals(t);
        self.process_feedback(t)?;
        self.measure();
        if self.cfg.scheduler_mode == SchedulerMode::Dynamic {
            self.buffer_reports(t);
        }
        for c in 0..self.cells.len() {
            match self.cfg.scheduler_mode {
                SchedulerMode::Dynamic => self.schedule_dynamic(c, t)?,
                SchedulerMode::SemiPersistent => self.schedule_sps(c, t)?,
            }
        }
        let served: Vec<[u64; 2]> = self
            .ues
            .iter_mut()
            .map(|u| std::mem::take(&mut u.served))
            .collect();
        self.pf.end_tti(&served);
        self.update_app_stats(t);

        let ledger = self.ledger();
        if !ledger.balanced() {
            return Err(Error::Invariant(format!(
                "byte conservation at tti {t}: {ledger:?}"
            )));
        }
        self.tti += 1;
        Ok(())
    }

    fn arrivals(&mut self, t: u64) {
        let now = t as f64 * self.dt;
        for (queue, carrier, local) in &mut self.sources {
            while queue.front().is_some_and(|p| p.arrival_s < now) {
                let mut p = queue.pop_front().expect("non-empty");
                let id = self.packets.len() as u64;
                let owner = self.ues[*carrier].flows[*local].owner;
                let spec = p.flow;
                self.packets.push(PacketInfo {
                    owner,
                    spec,
                    carrier: *carrier,
                    local: *local,
                    size: p.size,
                    arrival_s: p.arrival_s,
                    delivered: 0,
                    delivery_s: None,
                });
                let fs = &mut self.flow_stats[owner][spec];
                fs.first_arrival_s.get_or_insert(p.arrival_s);
                self.generated += p.size;
                p.id = id;
                let ue = &mut self.ues[*carrier];
                if ue.flows[*local].direction == Direction::Ul {
                    ue.ul_new_data = true;
                }
                ue.bufs[*local].push(p);
            }
        }
    }

    fn process_feedback(&mut self, t: u64) -> Result<()> {
        while self.feedback.front().is_some_and(|f| f.0 <= t) {
            let (_, id, passed) = self.feedback.pop_front().expect("non-empty");
            match self.harq.feedback(id, passed)? {
                HarqOutcome::Delivered(p) => {
                    for s in &p.segments {
                        self.deliver(*s, t);
                    }
                }
                HarqOutcome::Retransmit { id, eligible_tti } => {
                    let p = self.harq.get(id).expect("open process");
                    let cell = self.ues[p.ue].cell;
                    self.cells[cell].retx[p.direction.index()].push((eligible_tti, id));
                }
                HarqOutcome::Dropped(p) => {
                    self.waste.harq_exhausted += 1;
                    let ue = &mut self.ues[p.ue];
                    for s in &p.segments {
                        ue.bufs[p.flow].restore(s.packet, s.bytes);
                    }
                    if p.direction == Direction::Ul {
                        ue.ul_new_data = true;
                    }
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, seg: Segment, t: u64) {
        let pk = &mut self.packets[seg.packet as usize];
        pk.delivered += seg.bytes;
        self.delivered += seg.bytes;
        self.flow_stats[pk.owner][pk.spec].delivered_bytes += seg.bytes;
        if pk.delivered < pk.size {
            return;
        }
        let now = t as f64 * self.dt;
        let at = if pk.carrier != pk.owner {
            self.relays[pk.carrier]
                .as_mut()
                .expect("relayed packet at a primary")
                .deliver_via_primary(now, pk.size)
        } else {
            now
        };
        pk.delivery_s = Some(at);
        let fs = &mut self.flow_stats[pk.owner][pk.spec];
        fs.last_delivery_s = Some(fs.last_delivery_s.map_or(at, |l: f64| l.max(at)));
        self.ues[pk.carrier].bufs[pk.local].remove(seg.packet);
    }

    fn measure(&mut self) {
        let backoff = self.cfg.radio.cqi_backoff_db;
        let keep = self.cfg.radio.cqi_delay_tti as usize + 1;
        for u in 0..self.ues.len() {
            for dir in DIRS {
                let d = dir.index();
                let mut cqi = Vec::with_capacity(self.radio.subband_count);
                for sb in 0..self.radio.subband_count {
                    let s = match dir {
                        Direction::Dl => self.radio.dl_sinr(u, sb),
                        Direction::Ul => self.radio.ul_sinr(u, sb),
                    };
                    self.ues[u].sinr[d][sb] = s;
                    cqi.push(self.mcs.sinr_to_cqi(lin_to_db(s), backoff));
                }
                let hist = &mut self.ues[u].cqi[d];
                hist.push_back(cqi);
                while hist.len() > keep {
                    hist.pop_front();
                }
            }
        }
    }

    fn ul_volume(&self, ue: usize) -> u64 {
        let u = &self.ues[ue];
        u.flows
            .iter()
            .zip(&u.bufs)
            .filter(|(f, _)| f.direction == Direction::Ul)
            .map(|(_, b)| b.buffered_bytes())
            .sum()
    }

    fn send_report(&mut self, ue: usize, arrive_tti: u64) {
        let volume = self.ul_volume(ue);
        let table = self.ues[ue].own_table.as_ref().unwrap_or(&self.table);
        let estimate = table.grant_estimate(table.encode(volume).value);
        self.waste.bsr_overestimate_bytes += estimate.saturating_sub(volume);
        self.waste.bsr_reports += 1;
        let u = &mut self.ues[ue];
        u.reports.push_back(Report {
            arrive_tti,
            estimate,
            granted_at: u.granted_total,
        });
    }

    fn buffer_reports(&mut self, t: u64) {
        let period = self.cfg.bsr.period_tti;
        let sr = self.cfg.mac.sr_delay_tti;
        for u in 0..self.ues.len() {
            let regular = std::mem::take(&mut self.ues[u].ul_new_data);
            let periodic =
                period > 0 && (t + u as u64).is_multiple_of(period) && self.ul_volume(u) > 0;
            if regular || periodic {
                self.send_report(u, t + sr);
            }
            let ue = &mut self.ues[u];
            while ue.reports.front().is_some_and(|r| r.arrive_tti <= t) {
                let r = ue.reports.pop_front().expect("non-empty");
                ue.estimate = r.estimate.saturating_sub(ue.granted_total - r.granted_at);
            }
        }
    }

    fn update_app_stats(&mut self, t: u64) {
        let now = (t + 1) as f64 * self.dt;
        let tracked = self.cfg.bsr_scheme == BsrScheme::Adaptive8
            && self.cfg.bsr.assist == BsrAssist::Tracked;
        let rapi = ((self.cfg.bsr.rapi_period_ms * 1e-3 / self.dt).round() as u64).max(1);
        for u in 0..self.ues.len() {
            let v = self.ul_volume(u);
            if v != self.ues[u].last_ul_volume || self.ues[u].stats.last_update_s.is_none() {
                self.ues[u].stats.update(now, v as f64);
                self.ues[u].last_ul_volume = v;
            }
            if tracked && (t + 1).is_multiple_of(rapi) {
                let s = &self.ues[u].stats;
                let a = RApiAssistance {
                    refinement_factor: self.cfg.bsr.refinement,
                    ..RApiAssistance::new(s.mean, s.std.max(self.cfg.bsr.alpha_bytes))
                };
                if let Ok(table) = build_table(BsrScheme::Adaptive8, Some(&a)) {
                    self.ues[u].own_table = Some(table);
                }
            }
        }
    }

    /// Flow to serve next: critical flows first, then the oldest head of line.
    fn choose_flow(&self, ue: usize, dir: Direction) -> Option<usize> {
        let u = &self.ues[ue];
        u.flows
            .iter()
            .zip(&u.bufs)
            .enumerate()
            .filter(|(_, (f, b))| f.direction == dir && !b.is_empty())
            .min_by(|(ia, (fa, ba)), (ib, (fb, bb))| {
                let ca = fa.priority != Priority::Critical;
                let cb = fb.priority != Priority::Critical;
                ca.cmp(&cb)
                    .then(
                        ba.head_arrival()
                            .unwrap_or(f64::INFINITY)
                            .total_cmp(&bb.head_arrival().unwrap_or(f64::INFINITY)),
                    )
                    .then(ia.cmp(ib))
            })
            .map(|(i, _)| i)
    }

    fn class_of(&self, req: &Request) -> PriorityClass {
        if let ReqKind::Deferred { escalate: true } = req.kind {
            return PriorityClass::High;
        }
        let u = &self.ues[req.ue];
        if self.cfg.control.cell_edge_promotion
            && u.wideband_sinr_db < self.cfg.control.cell_edge_sinr_db
        {
            return PriorityClass::High;
        }
        match (self.cfg.control.priority_mode, req.dir, req.flow) {
            (PriorityMode::Traffic, Direction::Dl, Some(f)) => match u.flows[f].priority {
                Priority::Critical => PriorityClass::High,
                Priority::BestEffort => PriorityClass::Low,
            },
            _ => u.class,
        }
    }

    fn schedule_dynamic(&mut self, c: usize, t: u64) -> Result<()> {
        let n_prb = self.radio.prb_count;
        let mut free = [vec![true; n_prb], vec![true; n_prb]];
        let mut reqs: Vec<Request> = Vec::new();

        for dir in DIRS {
            let d = dir.index();
            let mut queue = std::mem::take(&mut self.cells[c].retx[d]);
            queue.sort_unstable();
            let mut waiting = Vec::new();
            for (eligible, id) in queue {
                let p = self.harq.get(id).expect("open process");
                let prbs = if eligible <= t {
                    take_free(&mut free[d], p.prb_count)
                } else {
                    None
                };
                match prbs {
                    Some(prbs) => reqs.push(Request {
                        ue: p.ue,
                        dir,
                        prbs,
                        mcs: p.mcs,
                        tb: p.tb_bytes,
                        flow: Some(p.flow),
                        kind: ReqKind::Retx(id),
                    }),
                    None => waiting.push((eligible, id)),
                }
            }
            self.cells[c].retx[d] = waiting;
        }

        let deferred = std::mem::take(&mut self.cells[c].deferred);
        for q in deferred {
            let d = q.dir.index();
            match take_free(&mut free[d], q.prb_count) {
                Some(prbs) => {
                    self.ues[q.ue].has_deferred[d] = false;
                    reqs.push(Request {
                        ue: q.ue,
                        dir: q.dir,
                        tb: tb_size(self.mcs.entry(q.mcs), prbs.len(), self.cfg.tti_symbols)?,
                        prbs,
                        mcs: q.mcs,
                        flow: q.flow,
                        kind: ReqKind::Deferred {
                            escalate: q.escalate,
                        },
                    });
                }
                None => self.cells[c].deferred.push_back(q),
            }
        }

        let mut fresh: [Vec<Request>; 2] = [Vec::new(), Vec::new()];
        for dir in DIRS {
            let d = dir.index();
            let mut picks = Vec::new();
            for &u in &self.cells[c].ues {
                let ue = &self.ues[u];
                if ue.has_deferred[d] {
                    continue;
                }
                let (flow, demand) = match dir {
                    Direction::Dl => match self.choose_flow(u, dir) {
                        Some(f) => (Some(f), ue.bufs[f].buffered_bytes()),
                        None => continue,
                    },
                    Direction::Ul => (None, ue.estimate),
                };
                if demand > 0 {
                    picks.push((u, flow, demand));
                }
            }
            let cands: Vec<PfCandidate> = picks
                .iter()
                .map(|&(u, _, demand)| PfCandidate {
                    ue: u,
                    demand_bytes: demand,
                    avg_bytes: self.pf.average(u, dir),
                    cqi: self.ues[u].cqi[d].front().expect("measured"),
                })
                .collect();
            let allocs = pf_schedule(
                &cands,
                &free[d],
                self.radio.subband_size,
                &self.mcs,
                self.cfg.tti_symbols,
            );
            for a in allocs {
                mark(&mut free[d], &a.prbs, c, t)?;
                let flow = picks.iter().find(|p| p.0 == a.ue).and_then(|p| p.1);
                fresh[d].push(Request {
                    ue: a.ue,
                    dir,
                    prbs: a.prbs,
                    mcs: a.mcs,
                    tb: a.tb_bytes,
                    flow,
                    kind: ReqKind::New,
                });
            }
        }
        let [dl, ul] = fresh;
        let mut dl = dl.into_iter();
        let mut ul = ul.into_iter();
        loop {
            let a = dl.next();
            let b = ul.next();
            if a.is_none() && b.is_none() {
                break;
            }
            reqs.extend(a);
            reqs.extend(b);
        }

        let creqs: Vec<ControlRequest> = reqs
            .iter()
            .map(|r| ControlRequest {
                ue: r.ue,
                class: self.class_of(r),
                wideband_sinr_db: self.ues[r.ue].wideband_sinr_db,
            })
            .collect();
        let cc = &self.cfg.control;
        let alloc = match self.cfg.control_design {
            ControlDesign::Legacy => allocate_legacy(&ControlPool::legacy(cc.pool_cru), &creqs),
            ControlDesign::TwoStage => allocate_two_stage(
                &ControlPool::two_stage(cc.pool_cru, cc.stage1_share),
                &creqs,
                cc.stage2_grants_per_msg,
                cc.stage2_cost_cru,
            ),
        };
        self.waste.control_requests += reqs.len() as u64;
        self.waste.control_cru_offered += creqs.iter().map(|r| u64::from(r.cost())).sum::<u64>();

        for (r, decision) in reqs.into_iter().zip(alloc.decisions) {
            let wb = self.ues[r.ue].wideband_sinr_db;
            let outcome = match decision {
                ControlDecision::Deferred => {
                    self.waste.control_deferred += 1;
                    GrantOutcome::Deferred
                }
                ControlDecision::Sent { stage, .. } => {
                    if decode_control(stage, wb, &mut self.control_rng) {
                        GrantOutcome::Transmitted
                    } else {
                        self.waste.control_missed += 1;
                        if stage == Stage::Shared
                            && self.cfg.control.stage2_retry == Stage2Retry::Escalate
                        {
                            GrantOutcome::Missed
                        } else {
                            GrantOutcome::Deferred
                        }
                    }
                }
            };
            self.record(c, t, &r, outcome);
            let u = &mut self.ues[r.ue];
            u.attempts += 1;
            if outcome == GrantOutcome::Transmitted {
                u.scheduled_bytes += r.tb;
                self.transmit(&r, t)?;
            } else {
                self.requeue(c, t, r, outcome == GrantOutcome::Missed);
            }
        }
        Ok(())
    }

    fn requeue(&mut self, c: usize, t: u64, r: Request, escalate: bool) {
        let d = r.dir.index();
        match r.kind {
            ReqKind::Retx(id) => self.cells[c].retx[d].push((t + 1, id)),
            ReqKind::New | ReqKind::Deferred { .. } => {
                let escalate = escalate || matches!(r.kind, ReqKind::Deferred { escalate: true });
                self.ues[r.ue].has_deferred[d] = true;
                self.cells[c].deferred.push_back(Deferred {
                    ue: r.ue,
                    dir: r.dir,
                    prb_count: r.prbs.len(),
                    mcs: r.mcs,
                    flow: r.flow,
                    escalate,
                });
            }
            ReqKind::Sps => {}
        }
    }

    fn record(&mut self, c: usize, t: u64, r: &Request, outcome: GrantOutcome) {
        if !self.cfg.trace {
            return;
        }
        self.trace.push(TraceEvent {
            tti: t,
            cell: c,
            ue: r.ue,
            direction: r.dir,
            kind: match r.kind {
                ReqKind::Retx(_) => GrantKind::Retx,
                ReqKind::Deferred { .. } => GrantKind::Deferred,
                ReqKind::New => GrantKind::New,
                ReqKind::Sps => GrantKind::Sps,
            },
            prb_count: r.prbs.len(),
            tb_bytes: r.tb,
            outcome,
        });
    }

    fn schedule_sps(&mut self, c: usize, t: u64) -> Result<()> {
        let n_prb = self.radio.prb_count;
        for dir in DIRS {
            let d = dir.index();
            let mut free = vec![true; n_prb];
            let ues = self.cells[c].ues.clone();
            for u in ues {
                let Some(cfg) = self.ues[u].sps[d].clone() else {
                    continue;
                };
                if !cfg.is_occasion(t) {
                    continue;
                }
                let prbs: Vec<usize> = cfg.prbs.clone().collect();
                mark(&mut free, &prbs, c, t)?;
                self.waste.sps_occasions += 1;
                let retx = self.cells[c].retx[d].iter().position(|&(eligible, id)| {
                    eligible <= t && self.harq.get(id).is_some_and(|p| p.ue == u)
                });
                let req = match retx {
                    Some(i) => {
                        let (_, id) = self.cells[c].retx[d].remove(i);
                        let p = self.harq.get(id).expect("open process");
                        Request {
                            ue: u,
                            dir,
                            prbs,
                            mcs: p.mcs,
                            tb: p.tb_bytes,
                            flow: Some(p.flow),
                            kind: ReqKind::Retx(id),
                        }
                    }
                    None => Request {
                        ue: u,
                        dir,
                        tb: tb_size(self.mcs.entry(cfg.mcs), prbs.len(), self.cfg.tti_symbols)?,
                        prbs,
                        mcs: cfg.mcs,
                        flow: None,
                        kind: ReqKind::Sps,
                    },
                };
                self.record(c, t, &req, GrantOutcome::Transmitted);
                self.transmit(&req, t)?;
            }
        }
        Ok(())
    }

    fn transmit(&mut self, r: &Request, t: u64) -> Result<()> {
        let d = r.dir.index();
        let per_prb: Vec<f64> = r
            .prbs
            .iter()
            .map(|&p| self.ues[r.ue].sinr[d][self.radio.subband_of(p)])
            .collect();
        let attempt = effective_sinr(&per_prb);
        let threshold = self.mcs.entry(r.mcs).threshold_db;
        let fb = self.cfg.mac.harq_feedback_delay_tti;

        if let ReqKind::Retx(id) = r.kind {
            let p = self.harq.get_mut(id).ok_or(Error::UnknownHarqProcess(id))?;
            let acc = p.combine(attempt, t);
            let passed = decode_success(acc, threshold, &mut self.decode_rng);
            self.feedback.push_back((t + fb, id, passed));
            self.push_tb(t, r, false);
            return Ok(());
        }

        let flow = match (r.dir, r.flow) {
            (Direction::Dl, Some(f)) => Some(f),
            _ => self.choose_flow(r.ue, r.dir),
        };
        let segments = match flow {
            Some(f) => self.ues[r.ue].bufs[f].take(r.tb),
            None => Vec::new(),
        };
        let filled: u64 = segments.iter().map(|s| s.bytes).sum();
        let idle = r.tb - filled;
        if matches!(r.kind, ReqKind::Sps) {
            self.waste.sps_idle_bytes += idle;
        } else if r.dir == Direction::Ul {
            self.waste.ul_padding_bytes += idle;
        }
        if r.dir == Direction::Ul && !matches!(r.kind, ReqKind::Sps) {
            let u = &mut self.ues[r.ue];
            u.estimate = u.estimate.saturating_sub(r.tb);
            u.granted_total += r.tb;
            if self.cfg.bsr.piggyback {
                self.send_report(r.ue, t + 1);
            }
        }
        self.ues[r.ue].served[d] += filled;
        self.push_tb(t, r, true);

        if let (Some(f), true) = (flow, filled > 0) {
            let id = self.harq.open(HarqProcess {
                id: 0,
                ue: r.ue,
                direction: r.dir,
                flow: f,
                segments,
                tb_bytes: r.tb,
                mcs: r.mcs,
                prb_count: r.prbs.len(),
                tx_count: 0,
                accumulated_sinr: 0.0,
                last_tx_tti: t,
            });
            let acc = self
                .harq
                .get_mut(id)
                .expect("just opened")
                .combine(attempt, t);
            let passed = decode_success(acc, threshold, &mut self.decode_rng);
            self.feedback.push_back((t + fb, id, passed));
        }
        Ok(())
    }

    fn push_tb(&mut self, t: u64, r: &Request, new_tx: bool) {
        self.tbs.push(TbRecord {
            tti: t as u32,
            ue: r.ue as u32,
            bytes: r.tb as u32,
            direction: r.dir,
            new_tx,
        });
    }

    /// Builds the report; packets still inside their delay budget at the end are left out.
    pub fn finish(mut self) -> RunReport {
        let end = self.tti as f64 * self.dt;
        let mut packets = Vec::new();
        for pk in &self.packets {
            let pdb = self.cfg.traffic[pk.spec].pdb_ms;
            let fs = &mut self.flow_stats[pk.owner][pk.spec];
            fs.packets += 1;
            let judged = pk.delivery_s.is_some() || (end - pk.arrival_s) * 1e3 > pdb;
            if !judged {
                continue;
            }
            fs.judged += 1;
            let rec = PacketRecord {
                ue: pk.owner,
                flow: pk.spec,
                bytes: pk.size,
                arrival_s: pk.arrival_s,
                delivery_s: pk.delivery_s,
                pdb_ms: pdb,
            };
            if rec.within_pdb() {
                fs.within_pdb += 1;
            }
            packets.push(rec);
        }
        let ues = self
            .ues
            .iter()
            .enumerate()
            .map(|(i, u)| UeRecord {
                flows: std::mem::take(&mut self.flow_stats[i]),
                scheduled_bytes: u.scheduled_bytes,
                scheduling_attempts: u.attempts,
                ..UeRecord::new(i, u.cell, u.wideband_sinr_db, 0)
            })
            .collect();
        let relays = self
            .groups
            .iter()
            .map(|g| {
                let link = self.relays[g.primary].as_ref().expect("primary link");
                RelayRecord {
                    primary: g.primary,
                    secondaries: g.secondaries.clone(),
                    bytes_in: link.bytes_in,
                    bytes_out: link.bytes_out,
                }
            })
            .collect();
        RunReport {
            cell_count: self.cells.len(),
            flows: self.cfg.traffic.clone(),
            config: self.cfg,
            ues,
            packets,
            tbs: self.tbs,
            waste: self.waste,
            relays,
            trace: self.trace,
            generated_bytes: self.generated,
            delivered_bytes: self.delivered,
            sim_end_s: end,
        }
    }
}

/// First `count` free PRBs, marked busy; `None` (and nothing marked) if too few are free.
fn take_free(free: &mut [bool], count: usize) -> Option<Vec<usize>> {
    let prbs: Vec<usize> = free
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| i)
        .take(count)
        .collect();
    if prbs.len() < count || count == 0 {
        return None;
    }
    for &p in &prbs {
        free[p] = false;
    }
    Some(prbs)
}

fn mark(free: &mut [bool], prbs: &[usize], cell: usize, t: u64) -> Result<()> {
    for &p in prbs {
        if !free[p] {
            return Err(Error::Invariant(format!(
                "PRB {p} granted twice in cell {cell} at tti {t}"
            )));
        }
        free[p] = false;
    }
    Ok(())
}
