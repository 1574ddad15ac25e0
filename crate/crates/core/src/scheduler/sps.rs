//! Semi-persistent scheduling: fixed grants recurring at `offset + k * period`.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct SpsConfig {
    pub ue: usize,
    pub period_tti: u64,
    pub offset_tti: u64,
    pub prbs: Range<usize>,
    pub mcs: u8,
    /// Last TTI (exclusive) the configuration is valid for; `None` means the whole run.
    pub valid_until: Option<u64>,
}

impl SpsConfig {
    pub fn is_occasion(&self, tti: u64) -> bool {
        if self.valid_until.is_some_and(|end| tti >= end) {
            return false;
        }
        tti >= self.offset_tti && (tti - self.offset_tti).is_multiple_of(self.period_tti)
    }

    /// Occasions in `[from, to)`.
    pub fn occasions(&self, from: u64, to: u64) -> impl Iterator<Item = u64> + '_ {
        (from..to).filter(move |&t| self.is_occasion(t))
    }

    /// First occasion at or after `tti`.
    pub fn next_occasion(&self, tti: u64) -> Option<u64> {
        let t = if tti <= self.offset_tti {
            self.offset_tti
        } else {
            let k = (tti - self.offset_tti).div_ceil(self.period_tti);
            self.offset_tti + k * self.period_tti
        };
        match self.valid_until {
            Some(end) if t >= end => None,
            _ => Some(t),
        }
    }
}

/// Assigns disjoint (offset, PRB block) slots to the UEs of a cell.
///
/// There are `period * floor(prb_count / prbs_per_ue)` slots; UEs beyond that
/// get no configuration. `mcs_of` picks each UE's fixed MCS.
pub fn assign_sps<F>(
    ues: &[usize],
    period_tti: u64,
    prbs_per_ue: usize,
    prb_count: usize,
    validity_tti: u64,
    mut mcs_of: F,
) -> Vec<SpsConfig>
where
    F: FnMut(usize) -> u8,
{
    let blocks = (prb_count / prbs_per_ue.max(1)).max(1);
    let width = prbs_per_ue.min(prb_count);
    let slots = blocks as u64 * period_tti;
    ues.iter()
        .enumerate()
        .take_while(|(i, _)| (*i as u64) < slots)
        .map(|(i, &ue)| {
            let block = i % blocks;
            let offset = (i / blocks) as u64;
            SpsConfig {
                ue,
                period_tti,
                offset_tti: offset,
                prbs: block * width..(block + 1) * width,
                mcs: mcs_of(ue),
                valid_until: (validity_tti > 0).then_some(offset + validity_tti),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_8_offset_3() {
        let c = SpsConfig {
            ue: 0,
            period_tti: 8,
            offset_tti: 3,
            prbs: 0..16,
            mcs: 5,
            valid_until: None,
        };
        let v: Vec<u64> = c.occasions(0, 30).collect();
        assert_eq!(v, vec![3, 11, 19, 27]);
        assert_eq!(c.next_occasion(4), Some(11));
        assert_eq!(c.next_occasion(11), Some(11));
        let limited = SpsConfig {
            valid_until: Some(19),
            ..c
        };
        assert_eq!(limited.occasions(0, 30).count(), 2);
        assert_eq!(limited.next_occasion(12), None);
    }

    #[test]
    fn slots_are_disjoint() {
        let ues: Vec<usize> = (0..60).collect();
        let cfgs = assign_sps(&ues, 8, 16, 106, 0, |_| 3);
        assert_eq!(cfgs.len(), 48);
        for t in 0..8 {
            let mut used = [false; 106];
            for c in cfgs.iter().filter(|c| c.is_occasion(t)) {
                for p in c.prbs.clone() {
                    assert!(!used[p]);
                    used[p] = true;
                }
            }
        }
    }
}
