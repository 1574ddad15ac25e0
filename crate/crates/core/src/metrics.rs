//! Run measurements, ECDFs, percentiles, satisfaction and CSV export.
//!
//! Percentiles use the nearest-rank convention: the `p`-th percentile of `n`
//! sorted samples is sample `ceil(p / 100 * n)` (1-based), and `p = 0` gives
//! the minimum.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::traffic::{Direction, FlowSpec};

pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::PercentileRange(p));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(nearest_rank(&v, p))
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Empirical CDF of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    pub name: String,
    pub unit: String,
    values: Vec<f64>,
}

impl Ecdf {
    pub fn new(name: &str, unit: &str, mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Ecdf {
            name: name.to_string(),
            unit: unit.to_string(),
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn percentile(&self, p: f64) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::PercentileRange(p));
        }
        Ok(nearest_rank(&self.values, p))
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    /// `(value, F(value))` for every sample, ascending.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.values.len() as f64;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (v, (i + 1) as f64 / n))
    }
}

/// Delivery statistics of one flow of one UE.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowStats {
    pub delivered_bytes: u64,
    pub first_arrival_s: Option<f64>,
    pub last_delivery_s: Option<f64>,
    pub packets: u64,
    /// Packets whose fate is known: delivered, or overdue at the end of the run.
    pub judged: u64,
    pub within_pdb: u64,
}

impl FlowStats {
    /// Delivered bytes over the active time (first arrival to last delivery), bit/s.
    pub fn rate_bps(&self) -> f64 {
        match (self.first_arrival_s, self.last_delivery_s) {
            (Some(a), Some(d)) if d > a => self.delivered_bytes as f64 * 8.0 / (d - a),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeRecord {
    pub ue: usize,
    pub cell: usize,
    pub wideband_sinr_db: f64,
    /// Indexed like the run's flow list.
    pub flows: Vec<FlowStats>,
    /// Bytes scheduled per control attempt (0 for deferred or missed grants).
    pub scheduled_bytes: u64,
    pub scheduling_attempts: u64,
}

impl UeRecord {
    pub fn new(ue: usize, cell: usize, wideband_sinr_db: f64, flow_count: usize) -> Self {
        UeRecord {
            ue,
            cell,
            wideband_sinr_db,
            flows: vec![FlowStats::default(); flow_count],
            scheduled_bytes: 0,
            scheduling_attempts: 0,
        }
    }

    pub fn delivered_bytes(&self, flows: &[FlowSpec], dir: Direction) -> u64 {
        self.flows
            .iter()
            .zip(flows)
            .filter(|(_, f)| f.direction == dir)
            .map(|(s, _)| s.delivered_bytes)
            .sum()
    }

    /// Direction throughput over the UE's active time in that direction, Mbit/s.
    pub fn throughput_mbps(&self, flows: &[FlowSpec], dir: Direction) -> f64 {
        let stats = self
            .flows
            .iter()
            .zip(flows)
            .filter(|(_, f)| f.direction == dir);
        let first = stats
            .clone()
            .filter_map(|(s, _)| s.first_arrival_s)
            .min_by(f64::total_cmp);
        let last = stats
            .clone()
            .filter_map(|(s, _)| s.last_delivery_s)
            .max_by(f64::total_cmp);
        let bytes: u64 = stats.map(|(s, _)| s.delivered_bytes).sum();
        match (first, last) {
            (Some(a), Some(d)) if d > a => bytes as f64 * 8.0 / (d - a) / 1e6,
            _ => 0.0,
        }
    }

    /// Mean scheduled bytes per control attempt.
    pub fn mean_scheduled_bytes(&self) -> Option<f64> {
        (self.scheduling_attempts > 0)
            .then(|| self.scheduled_bytes as f64 / self.scheduling_attempts as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub ue: usize,
    pub flow: usize,
    pub bytes: u64,
    pub arrival_s: f64,
    pub delivery_s: Option<f64>,
    pub pdb_ms: f64,
}

impl PacketRecord {
    pub fn latency_ms(&self) -> Option<f64> {
        self.delivery_s.map(|d| (d - self.arrival_s) * 1e3)
    }

    pub fn within_pdb(&self) -> bool {
        self.latency_ms().is_some_and(|l| l <= self.pdb_ms)
    }

    /// Latency for percentile purposes: overdue undelivered packets count as infinite.
    pub fn latency_or_inf_ms(&self) -> f64 {
        self.latency_ms().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TbRecord {
    pub tti: u32,
    pub ue: u32,
    pub bytes: u32,
    pub direction: Direction,
    pub new_tx: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantKind {
    Retx,
    Deferred,
    New,
    Sps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantOutcome {
    Transmitted,
    Deferred,
    Missed,
}

/// One scheduling decision, recorded when tracing is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub tti: u64,
    pub cell: usize,
    pub ue: usize,
    pub direction: Direction,
    pub kind: GrantKind,
    pub prb_count: usize,
    pub tb_bytes: u64,
    pub outcome: GrantOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WasteCounters {
    /// Uplink TB bytes granted but not filled with data.
    pub ul_padding_bytes: u64,
    /// Grant estimate minus the true volume, summed over decoded reports.
    pub bsr_overestimate_bytes: u64,
    pub bsr_reports: u64,
    /// Capacity of semi-persistent occasions left unused.
    pub sps_idle_bytes: u64,
    pub sps_occasions: u64,
    pub control_requests: u64,
    /// Dedicated-message cost of every request, in CRUs.
    pub control_cru_offered: u64,
    pub control_deferred: u64,
    pub control_missed: u64,
    /// TBs given up after the last HARQ attempt (their bytes are requeued).
    pub harq_exhausted: u64,
}

impl WasteCounters {
    pub fn rows(&self) -> [(&'static str, u64); 10] {
        [
            ("ul_padding_bytes", self.ul_padding_bytes),
            ("bsr_overestimate_bytes", self.bsr_overestimate_bytes),
            ("bsr_reports", self.bsr_reports),
            ("sps_idle_bytes", self.sps_idle_bytes),
            ("sps_occasions", self.sps_occasions),
            ("control_requests", self.control_requests),
            ("control_cru_offered", self.control_cru_offered),
            ("control_deferred", self.control_deferred),
            ("control_missed", self.control_missed),
            ("harq_exhausted", self.harq_exhausted),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayRecord {
    pub primary: usize,
    pub secondaries: Vec<usize>,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub cell_count: usize,
    pub flows: Vec<FlowSpec>,
    pub ues: Vec<UeRecord>,
    pub packets: Vec<PacketRecord>,
    pub tbs: Vec<TbRecord>,
    pub waste: WasteCounters,
    pub relays: Vec<RelayRecord>,
    pub trace: Vec<TraceEvent>,
    pub generated_bytes: u64,
    /// Engine-level counter of bytes decoded over the air.
    pub delivered_bytes: u64,
    pub sim_end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionSpec {
    /// Fraction of judged packets that must meet their delay budget.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Satisfaction {
    pub per_cell: Vec<f64>,
    pub aggregate: f64,
}

impl RunReport {
    pub fn throughput(&self, dir: Direction) -> Ecdf {
        Ecdf::new(
            &format!("{dir}_throughput"),
            "Mbps",
            self.ues
                .iter()
                .map(|u| u.throughput_mbps(&self.flows, dir))
                .collect(),
        )
    }

    /// Mean scheduled bytes per control attempt of every UE that made one, in KB.
    pub fn scheduled_tb(&self) -> Ecdf {
        Ecdf::new(
            "scheduled_tb",
            "KB",
            self.ues
                .iter()
                .filter_map(UeRecord::mean_scheduled_bytes)
                .map(|b| b / 1e3)
                .collect(),
        )
    }

    /// Latencies of the packets of flows matching `pick`, overdue ones as infinity.
    pub fn latencies_ms<F>(&self, mut pick: F) -> Vec<f64>
    where
        F: FnMut(&PacketRecord) -> bool,
    {
        self.packets
            .iter()
            .filter(|p| pick(p))
            .map(PacketRecord::latency_or_inf_ms)
            .collect()
    }

    pub fn is_satisfied(&self, ue: &UeRecord, spec: &SatisfactionSpec) -> bool {
        let judged: u64 = ue.flows.iter().map(|f| f.judged).sum();
        let ok: u64 = ue.flows.iter().map(|f| f.within_pdb).sum();
        let latency_ok = judged == 0 || ok as f64 >= spec.threshold * judged as f64;
        let rate_ok = ue
            .flows
            .iter()
            .zip(&self.flows)
            .all(|(s, f)| f.target_rate_bps <= 0.0 || s.rate_bps() >= f.target_rate_bps);
        latency_ok && rate_ok
    }

    pub fn satisfaction(&self, spec: &SatisfactionSpec) -> Satisfaction {
        let mut sat = vec![0usize; self.cell_count];
        let mut tot = vec![0usize; self.cell_count];
        for u in &self.ues {
            tot[u.cell] += 1;
            if self.is_satisfied(u, spec) {
                sat[u.cell] += 1;
            }
        }
        let per_cell = sat
            .iter()
            .zip(&tot)
            .map(|(&s, &t)| if t == 0 { 0.0 } else { s as f64 / t as f64 })
            .collect();
        let all: usize = tot.iter().sum();
        let aggregate = if all == 0 {
            0.0
        } else {
            sat.iter().sum::<usize>() as f64 / all as f64
        };
        Satisfaction {
            per_cell,
            aggregate,
        }
    }

    /// Writes the CSV files and `manifest.cfg` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };

        let mut s = String::from("ue,cell,dir,mbps\n");
        for u in &self.ues {
            for d in Direction::ALL {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.6}",
                    u.ue,
                    u.cell,
                    d,
                    u.throughput_mbps(&self.flows, *d)
                );
            }
        }
        write("ue_throughput.csv", s)?;

        let mut s = String::from("flow,bytes,latency_ms,within_pdb\n");
        for p in &self.packets {
            let lat = p
                .latency_ms()
                .map_or_else(|| "inf".to_string(), |l| format!("{l:.3}"));
            let _ = writeln!(
                s,
                "ue{}.{},{},{},{}",
                p.ue,
                self.flows[p.flow].name,
                p.bytes,
                lat,
                u8::from(p.within_pdb())
            );
        }
        write("pkt_latency.csv", s)?;

        let mut s = String::from("tti,ue,bytes,newtx\n");
        for t in &self.tbs {
            let _ = writeln!(s, "{},{},{},{}", t.tti, t.ue, t.bytes, u8::from(t.new_tx));
        }
        write("tb_sizes.csv", s)?;

        let spec = SatisfactionSpec {
            threshold: self.config.satisfaction_threshold,
        };
        let sat = self.satisfaction(&spec);
        let mut s = String::from("cell,ratio\n");
        for (c, r) in sat.per_cell.iter().enumerate() {
            let _ = writeln!(s, "{c},{r:.6}");
        }
        let _ = writeln!(s, "all,{:.6}", sat.aggregate);
        write("satisfaction.csv", s)?;

        let mut s = String::from("counter,value\n");
        for (k, v) in self.waste.rows() {
            let _ = writeln!(s, "{k},{v}");
        }
        write("waste.csv", s)?;

        let mut s = String::from("ue,cell,mean_kbytes,attempts\n");
        for u in &self.ues {
            if let Some(m) = u.mean_scheduled_bytes() {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{}",
                    u.ue,
                    u.cell,
                    m / 1e3,
                    u.scheduling_attempts
                );
            }
        }
        write("scheduled_tb.csv", s)?;

        let mut s = String::from("primary,secondaries,bytes_in,bytes_out\n");
        for r in &self.relays {
            let sec: Vec<String> = r.secondaries.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.primary,
                sec.join(" "),
                r.bytes_in,
                r.bytes_out
            );
        }
        write("relay.csv", s)?;

        if !self.trace.is_empty() {
            let mut s = String::from("tti,cell,ue,dir,kind,prbs,tb_bytes,outcome\n");
            for e in &self.trace {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:?},{},{},{:?}",
                    e.tti, e.cell, e.ue, e.direction, e.kind, e.prb_count, e.tb_bytes, e.outcome
                );
            }
            write("trace.csv", s)?;
        }

        write("manifest.cfg", self.config.to_config_string())
    }
}

/// ECDF columns side by side: one `value` column per series and the shared
/// probability grid `p` (1..=100).
pub fn ecdf_table(series: &[(&str, &Ecdf)]) -> Result<String> {
    let mut s = String::from("p");
    for (name, _) in series {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for p in 1..=100 {
        let _ = write!(s, "{p}");
        for (_, e) in series {
            let _ = write!(s, ",{:.6}", e.percentile(f64::from(p))?);
        }
        s.push('\n');
    }
    Ok(s)
}
