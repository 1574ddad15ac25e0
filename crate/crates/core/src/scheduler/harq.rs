//! Asynchronous HARQ with chase combining.
//!
//! Every attempt adds its effective SINR (linear) to the process total and the
//! decode draw is made against that total. After `max_tx` failed attempts the
//! TB is dropped.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::traffic::{Direction, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub id: u64,
    pub ue: usize,
    pub direction: Direction,
    /// Index of the flow (within the UE) whose bytes the TB carries.
    pub flow: usize,
    pub segments: Vec<Segment>,
    pub tb_bytes: u64,
    pub mcs: u8,
    pub prb_count: usize,
    pub tx_count: u32,
    pub accumulated_sinr: f64,
    pub last_tx_tti: u64,
}

impl HarqProcess {
    pub fn payload_bytes(&self) -> u64 {
        self.segments.iter().map(|s| s.bytes).sum()
    }

    /// Records one more transmission at `attempt_sinr` and returns the combined SINR.
    pub fn combine(&mut self, attempt_sinr: f64, tti: u64) -> f64 {
        self.accumulated_sinr += attempt_sinr.max(0.0);
        self.tx_count += 1;
        self.last_tx_tti = tti;
        self.accumulated_sinr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HarqOutcome {
    Delivered(HarqProcess),
    Retransmit { id: u64, eligible_tti: u64 },
    Dropped(HarqProcess),
}

#[derive(Debug, Clone)]
pub struct HarqEntity {
    pub max_tx: u32,
    pub retx_delay_tti: u64,
    next_id: u64,
    processes: BTreeMap<u64, HarqProcess>,
}

impl HarqEntity {
    pub fn new(max_tx: u32, retx_delay_tti: u64) -> Self {
        HarqEntity {
            max_tx,
            retx_delay_tti,
            next_id: 0,
            processes: BTreeMap::new(),
        }
    }

    /// Registers a new TB (before its first transmission) and returns its id.
    pub fn open(&mut self, mut p: HarqProcess) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        p.id = id;
        p.tx_count = 0;
        p.accumulated_sinr = 0.0;
        self.processes.insert(id, p);
        id
    }

    pub fn get(&self, id: u64) -> Option<&HarqProcess> {
        self.processes.get(&id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut HarqProcess> {
        self.processes.get_mut(&id)
    }

    /// Applies the decode result of the latest attempt.
    pub fn feedback(&mut self, id: u64, passed: bool) -> Result<HarqOutcome> {
        let p = self
            .processes
            .get(&id)
            .ok_or(Error::UnknownHarqProcess(id))?;
        if passed {
            let p = self.processes.remove(&id).expect("present");
            return Ok(HarqOutcome::Delivered(p));
        }
        if p.tx_count >= self.max_tx {
            let p = self.processes.remove(&id).expect("present");
            return Ok(HarqOutcome::Dropped(p));
        }
        Ok(HarqOutcome::Retransmit {
            id,
            eligible_tti: p.last_tx_tti + self.retx_delay_tti,
        })
    }

    pub fn active(&self) -> usize {
        self.processes.len()
    }

    /// Payload bytes held by processes awaiting feedback or retransmission.
    pub fn in_flight_bytes(&self) -> u64 {
        self.processes
            .values()
            .map(HarqProcess::payload_bytes)
            .sum()
    }

    pub fn processes(&self) -> impl Iterator<Item = &HarqProcess> {
        self.processes.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tb() -> HarqProcess {
        HarqProcess {
            id: 0,
            ue: 1,
            direction: Direction::Ul,
            flow: 0,
            segments: vec![Segment {
                packet: 7,
                bytes: 900,
            }],
            tb_bytes: 1000,
            mcs: 10,
            prb_count: 4,
            tx_count: 0,
            accumulated_sinr: 0.0,
            last_tx_tti: 0,
        }
    }

    #[test]
    fn first_attempt_pass_delivers() {
        let mut h = HarqEntity::new(4, 4);
        let id = h.open(tb());
        h.get_mut(id).unwrap().combine(3.0, 10);
        match h.feedback(id, true).unwrap() {
            HarqOutcome::Delivered(p) => assert_eq!(p.payload_bytes(), 900),
            other => panic!("{other:?}"),
        }
        assert_eq!(h.active(), 0);
    }

    #[test]
    fn chase_combining_sums_linear_sinr() {
        let mut p = tb();
        let x = 1.7;
        p.combine(x, 0);
        let two = p.combine(x, 4);
        assert!((two - 2.0 * x).abs() < 1e-15);
        let mut prev = two;
        for k in 0..5 {
            let next = p.combine(0.3, 8 + k);
            assert!(next > prev);
            prev = next;
        }
    }

    #[test]
    fn drops_after_max_attempts() {
        let mut h = HarqEntity::new(4, 4);
        let id = h.open(tb());
        for attempt in 1..=4u64 {
            h.get_mut(id).unwrap().combine(0.01, attempt * 4);
            let out = h.feedback(id, false).unwrap();
            if attempt < 4 {
                assert_eq!(
                    out,
                    HarqOutcome::Retransmit {
                        id,
                        eligible_tti: attempt * 4 + 4
                    }
                );
                assert_eq!(h.in_flight_bytes(), 900);
            } else {
                assert!(matches!(out, HarqOutcome::Dropped(_)));
            }
        }
        assert!(matches!(
            h.feedback(id, true),
            Err(Error::UnknownHarqProcess(_))
        ));
    }
}
