//! FTP3-style Poisson traffic, per-flow packet buffers and the running buffer
//! statistics a UE reports through the application assistance interface.

use std::collections::VecDeque;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Poisson};

use crate::config::string_enum;
use crate::error::{Error, Result};

string_enum!(
    Direction {
        Dl => "dl",
        Ul => "ul",
    }
);

string_enum!(
    Priority {
        Critical => "critical",
        BestEffort => "best-effort",
    }
);

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Dl => 0,
            Direction::Ul => 1,
        }
    }
}

/// One Poisson packet stream attached to every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub name: String,
    pub direction: Direction,
    /// Mean packet arrival rate (packets/s).
    pub rate_pps: f64,
    pub packet_bytes: u64,
    pub priority: Priority,
    /// Packet delay budget.
    pub pdb_ms: f64,
    /// Rate the flow must reach for its UE to count as satisfied; 0 disables the check.
    pub target_rate_bps: f64,
}

impl FlowSpec {
    /// A flow with placeholder values, used when a config names a new flow.
    pub fn named(name: &str) -> Self {
        FlowSpec {
            name: name.to_string(),
            direction: Direction::Dl,
            rate_pps: 10.0,
            packet_bytes: 1_000_000,
            priority: Priority::BestEffort,
            pdb_ms: 100.0,
            target_rate_bps: 0.0,
        }
    }

    /// Default XR profile: a critical 1 MB x 10/s video stream and a 100 B x 100/s
    /// audio stream in each direction.
    pub fn xr_profile() -> Vec<FlowSpec> {
        let mut flows = Vec::new();
        for dir in [Direction::Dl, Direction::Ul] {
            flows.push(FlowSpec {
                name: format!("{dir}_video"),
                direction: dir,
                rate_pps: 10.0,
                packet_bytes: 1_000_000,
                priority: Priority::Critical,
                pdb_ms: 150.0,
                target_rate_bps: 30e6,
            });
            flows.push(FlowSpec {
                name: format!("{dir}_audio"),
                direction: dir,
                rate_pps: 100.0,
                packet_bytes: 100,
                priority: Priority::BestEffort,
                pdb_ms: 50.0,
                target_rate_bps: 0.0,
            });
        }
        flows
    }

    /// Offered load in bytes per second.
    pub fn offered_bytes_per_s(&self) -> f64 {
        self.rate_pps * self.packet_bytes as f64
    }

    pub fn validate(&self) -> Result<()> {
        let key = |field: &str| format!("flow.{}.{}", self.name, field);
        if !(self.rate_pps.is_finite() && self.rate_pps > 0.0) {
            return Err(Error::validation(&key("rate_pps"), "must be > 0"));
        }
        if self.packet_bytes == 0 {
            return Err(Error::validation(&key("packet_bytes"), "must be > 0"));
        }
        if !(self.pdb_ms.is_finite() && self.pdb_ms > 0.0) {
            return Err(Error::validation(&key("pdb_ms"), "must be > 0"));
        }
        if !(self.target_rate_bps.is_finite() && self.target_rate_bps >= 0.0) {
            return Err(Error::validation(&key("target_rate_bps"), "must be >= 0"));
        }
        Ok(())
    }
}

/// A packet waiting in (or delivered from) a flow buffer. Times are seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: usize,
    pub size: u64,
    pub arrival_s: f64,
    pub delivery_s: Option<f64>,
    /// Bytes not yet handed to a transport block.
    pub remaining: u64,
}

/// Draws the arrivals of one flow inside `[start_s, start_s + len_s)`: a
/// Poisson count with mean `rate * len`, instants uniform in the window.
pub fn generate_arrivals<R: Rng + ?Sized>(
    flow: &FlowSpec,
    flow_index: usize,
    start_s: f64,
    len_s: f64,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<Packet> {
    if len_s <= 0.0 {
        return Vec::new();
    }
    let mean = flow.rate_pps * len_s;
    let count = match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as usize,
        Err(_) => 0,
    };
    let mut instants: Vec<f64> = (0..count)
        .map(|_| start_s + rng.random::<f64>() * len_s)
        .collect();
    instants.sort_by(f64::total_cmp);
    instants
        .into_iter()
        .map(|t| {
            let id = *next_id;
            *next_id += 1;
            Packet {
                id,
                flow: flow_index,
                size: flow.packet_bytes,
                arrival_s: t,
                delivery_s: None,
                remaining: flow.packet_bytes,
            }
        })
        .collect()
}

/// A piece of a packet carried by one transport block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub packet: u64,
    pub bytes: u64,
}

/// FIFO of packets of one flow at one UE.
#[derive(Debug, Clone, Default)]
pub struct FlowBuffer {
    queue: VecDeque<Packet>,
    buffered: u64,
}

impl FlowBuffer {
    pub fn push(&mut self, p: Packet) {
        self.buffered += p.remaining;
        self.queue.push_back(p);
    }

    /// Bytes not yet handed to a transport block.
    pub fn buffered_bytes(&self) -> u64 {
        self.buffered
    }

    pub fn is_empty(&self) -> bool {
        self.buffered == 0
    }

    /// Arrival time of the oldest packet with untransmitted bytes.
    pub fn head_arrival(&self) -> Option<f64> {
        self.queue
            .iter()
            .find(|p| p.remaining > 0)
            .map(|p| p.arrival_s)
    }

    /// Takes up to `max_bytes` from the head of line, possibly spanning packets.
    pub fn take(&mut self, max_bytes: u64) -> Vec<Segment> {
        let mut left = max_bytes;
        let mut out = Vec::new();
        for p in self.queue.iter_mut() {
            if left == 0 {
                break;
            }
            if p.remaining == 0 {
                continue;
            }
            let n = p.remaining.min(left);
            p.remaining -= n;
            left -= n;
            self.buffered -= n;
            out.push(Segment {
                packet: p.id,
                bytes: n,
            });
        }
        out
    }

    /// Drops the untransmitted bytes of one packet; returns how many were dropped.
    pub fn discard(&mut self, packet: u64) -> u64 {
        match self.queue.iter_mut().find(|p| p.id == packet) {
            Some(p) => {
                let n = p.remaining;
                p.remaining = 0;
                self.buffered -= n;
                n
            }
            None => 0,
        }
    }

    /// Puts bytes of a packet back for transmission, e.g. after a transport
    /// block carrying them was given up. Returns false if the packet is gone.
    pub fn restore(&mut self, packet: u64, bytes: u64) -> bool {
        match self.queue.iter_mut().find(|p| p.id == packet) {
            Some(p) => {
                let n = bytes.min(p.size - p.remaining);
                p.remaining += n;
                self.buffered += n;
                true
            }
            None => false,
        }
    }

    /// Removes and returns a packet once nothing of it remains to be sent.
    pub fn remove(&mut self, packet: u64) -> Option<Packet> {
        let idx = self.queue.iter().position(|p| p.id == packet)?;
        self.queue.remove(idx)
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }
}

/// Buffered volume of a UE in one direction: sum of untransmitted bytes over its flows.
pub fn buffered_volume<'a, I>(buffers: I) -> u64
where
    I: IntoIterator<Item = &'a FlowBuffer>,
{
    buffers.into_iter().map(FlowBuffer::buffered_bytes).sum()
}

/// Running mean and standard deviation of a UE's buffered uplink volume.
///
/// The level held since the previous event is folded in with weight
/// `1 - exp(-dt / window)`, so the statistics are time-weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct AppStats {
    pub mean: f64,
    pub std: f64,
    pub window_s: f64,
    pub last_update_s: Option<f64>,
    last_level: f64,
    var: f64,
}

impl AppStats {
    pub fn new(window_s: f64) -> Self {
        AppStats {
            mean: 0.0,
            std: 0.0,
            window_s,
            last_update_s: None,
            last_level: 0.0,
            var: 0.0,
        }
    }

    /// Records a buffer-change event: the buffer now holds `level` bytes at `now_s`.
    pub fn update(&mut self, now_s: f64, level: f64) -> &Self {
        match self.last_update_s {
            None => {
                self.mean = level;
                self.var = 0.0;
            }
            Some(prev) => {
                let dt = (now_s - prev).max(0.0);
                let w = 1.0 - (-dt / self.window_s).exp();
                let delta = self.last_level - self.mean;
                self.mean += w * delta;
                self.var = (1.0 - w) * (self.var + w * delta * delta);
            }
        }
        self.mean = self.mean.max(0.0);
        self.var = self.var.max(0.0);
        self.std = self.var.sqrt();
        self.last_level = level;
        self.last_update_s = Some(now_s);
        self
    }
}
