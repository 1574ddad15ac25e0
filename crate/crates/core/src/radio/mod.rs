//! Radio environment: link budgets, fading, CQI/MCS and decoding.
//!
//! Every cell transmits on every PRB in the downlink (full-buffer
//! interference). Beamforming gain `10 log10(tx_antennas)` applies to the
//! serving data signal only; UE combining gain `10 log10(rx_antennas)`
//! multiplies the SINR and MMSE suppression divides the interference.
//! The serving link and the strongest `faded_interferers` interferers fade per
//! subband; the remaining interferers contribute their mean power.
//!
//! The uplink sees the BS combining gain over `tx_antennas` and a fixed
//! interference-over-thermal rise instead of explicit interfering UEs.
//!
//! "Wideband SINR" is the downlink geometry without beamforming gain, i.e.
//! what a cell-wide reference or control signal sees on average. It drives
//! control-channel aggregation levels, cell-edge promotion and primary election.

pub mod channel;
pub mod fading;
pub mod mcs;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ScenarioConfig;
use crate::geometry::{angle_diff_deg, Layout, Point};
use crate::traffic::Direction;

pub use channel::{pathloss_db, sector_attenuation_db, sinr};
pub use fading::FadingProcess;
pub use mcs::{
    bler, db_to_lin, decode_success, effective_sinr, lin_to_db, tb_size, McsEntry, McsTable,
};

/// Coupling gain in dB from a cell to a point: antenna gain minus pathloss,
/// plus the link's shadowing.
pub fn coupling_gain_db(
    layout: &Layout,
    cell: usize,
    ue: Point,
    carrier_hz: f64,
    element_gain_dbi: f64,
    shadowing_db: f64,
) -> f64 {
    let c = &layout.cells[cell];
    let off = layout.wrapped_offset(c.position, ue);
    let pattern = match c.boresight_deg {
        Some(b) => sector_attenuation_db(angle_diff_deg(off.angle_deg(), b)),
        None => 0.0,
    };
    element_gain_dbi + pattern - pathloss_db(off.norm(), carrier_hz) + shadowing_db
}

/// Index of the cell with the largest coupling gain.
pub fn attach(coupling_db: &[f64]) -> usize {
    coupling_db
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Large-scale and fading state of one UE.
#[derive(Debug, Clone)]
pub struct UeLink {
    pub position: Point,
    pub serving: usize,
    /// Coupling gain (dB) to every cell.
    pub coupling_db: Vec<f64>,
    pub wideband_sinr_db: f64,
    faded: Vec<usize>,
    dl_serving: FadingProcess,
    dl_interferers: Vec<FadingProcess>,
    ul_serving: FadingProcess,
    /// Mean received power of the interferers without their own fading, per PRB.
    unfaded_interference_mw: f64,
}

#[derive(Debug, Clone)]
pub struct RadioEnv {
    pub prb_count: usize,
    pub subband_size: usize,
    pub subband_count: usize,
    pub links: Vec<UeLink>,
    /// Shadowing (dB) per UE and site; sectors of a site share it.
    pub shadowing_db: Vec<Vec<f64>>,
    dl_prb_mw: f64,
    ul_prb_mw: f64,
    dl_noise_mw: f64,
    ul_noise_mw: f64,
    beamforming_lin: f64,
    dl_combining_lin: f64,
    ul_combining_lin: f64,
    suppression_lin: f64,
}

impl RadioEnv {
    pub fn new<R1, R2>(
        cfg: &ScenarioConfig,
        layout: &Layout,
        positions: &[Point],
        shadow_rng: &mut R1,
        fading_rng: &mut R2,
    ) -> Self
    where
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
    {
        let prb_count = cfg.prb_count();
        let subband_size = cfg.radio.subband_size_prb;
        let subband_count = cfg.subband_count();
        let per_prb = 10.0 * (prb_count as f64).log10();
        let dl_prb_mw = channel::dbm_to_mw(cfg.bs_power_dbm - per_prb);
        let ul_prb_mw = channel::dbm_to_mw(cfg.ue_power_dbm - per_prb);
        let dl_noise_mw = channel::dbm_to_mw(channel::noise_per_prb_dbm(
            cfg.subcarrier_spacing_hz,
            cfg.radio.ue_noise_figure_db,
        ));
        let ul_noise_mw = channel::dbm_to_mw(
            channel::noise_per_prb_dbm(cfg.subcarrier_spacing_hz, cfg.radio.bs_noise_figure_db)
                + cfg.radio.ul_iot_db,
        );
        let beamforming_lin = f64::from(cfg.tx_antennas);
        let dl_combining_lin = f64::from(cfg.rx_antennas);
        let ul_combining_lin = f64::from(cfg.tx_antennas);
        let suppression_lin = db_to_lin(cfg.radio.mmse_suppression_db);
        let doppler = fading::doppler_hz(cfg.ue_speed_kmh, cfg.carrier_freq_hz);
        let dt = cfg.tti_duration_s();

        let shadow =
            Normal::new(0.0, cfg.radio.shadowing_std_db.max(0.0)).expect("shadowing std is finite");
        let shadowing_db: Vec<Vec<f64>> = positions
            .iter()
            .map(|_| {
                layout
                    .sites
                    .iter()
                    .map(|_| {
                        if cfg.radio.shadowing_std_db > 0.0 {
                            shadow.sample(shadow_rng)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();

        let mut links = Vec::with_capacity(positions.len());
        for (u, &p) in positions.iter().enumerate() {
            let coupling_db: Vec<f64> = (0..layout.cells.len())
                .map(|c| {
                    coupling_gain_db(
                        layout,
                        c,
                        p,
                        cfg.carrier_freq_hz,
                        cfg.radio.bs_antenna_gain_dbi,
                        shadowing_db[u][layout.cells[c].site],
                    )
                })
                .collect();
            let serving = attach(&coupling_db);
            let mut others: Vec<usize> = (0..coupling_db.len()).filter(|&c| c != serving).collect();
            others.sort_by(|&a, &b| coupling_db[b].total_cmp(&coupling_db[a]).then(a.cmp(&b)));
            let n_faded = cfg.radio.faded_interferers.min(others.len());
            let faded = others[..n_faded].to_vec();
            let unfaded_interference_mw = others[n_faded..]
                .iter()
                .map(|&c| dl_prb_mw * db_to_lin(coupling_db[c]))
                .sum();
            let total_interference: f64 = others
                .iter()
                .map(|&c| dl_prb_mw * db_to_lin(coupling_db[c]))
                .sum();
            let wideband = sinr(
                dl_prb_mw * db_to_lin(coupling_db[serving]),
                [total_interference],
                dl_noise_mw,
                dl_combining_lin,
                suppression_lin,
            );
            let dl_serving = FadingProcess::new(subband_count, doppler, dt, fading_rng);
            let dl_interferers = faded
                .iter()
                .map(|_| FadingProcess::new(subband_count, doppler, dt, fading_rng))
                .collect();
            let ul_serving = FadingProcess::new(subband_count, doppler, dt, fading_rng);
            links.push(UeLink {
                position: p,
                serving,
                coupling_db,
                wideband_sinr_db: lin_to_db(wideband),
                faded,
                dl_serving,
                dl_interferers,
                ul_serving,
                unfaded_interference_mw,
            });
        }

        RadioEnv {
            prb_count,
            subband_size,
            subband_count,
            links,
            shadowing_db,
            dl_prb_mw,
            ul_prb_mw,
            dl_noise_mw,
            ul_noise_mw,
            beamforming_lin,
            dl_combining_lin,
            ul_combining_lin,
            suppression_lin,
        }
    }

    pub fn ue_count(&self) -> usize {
        self.links.len()
    }

    pub fn serving_cell(&self, ue: usize) -> usize {
        self.links[ue].serving
    }

    /// PRBs of a subband; the last one may be short.
    pub fn subband_prbs(&self, sb: usize) -> Range<usize> {
        let start = sb * self.subband_size;
        start..(start + self.subband_size).min(self.prb_count)
    }

    pub fn subband_of(&self, prb: usize) -> usize {
        prb / self.subband_size
    }

    /// Advances every fading process by one TTI.
    pub fn advance(&mut self) {
        for l in &mut self.links {
            l.dl_serving.advance();
            for f in &mut l.dl_interferers {
                f.advance();
            }
            l.ul_serving.advance();
        }
    }

    /// Downlink SINR (linear) of a UE on a subband at the current TTI.
    pub fn dl_sinr(&self, ue: usize, sb: usize) -> f64 {
        let l = &self.links[ue];
        let signal = self.dl_prb_mw
            * db_to_lin(l.coupling_db[l.serving])
            * self.beamforming_lin
            * l.dl_serving.gain(sb);
        let faded = l
            .faded
            .iter()
            .zip(&l.dl_interferers)
            .map(|(&c, f)| self.dl_prb_mw * db_to_lin(l.coupling_db[c]) * f.gain(sb));
        sinr(
            signal,
            faded.chain([l.unfaded_interference_mw]),
            self.dl_noise_mw,
            self.dl_combining_lin,
            self.suppression_lin,
        )
    }

    /// Uplink SINR (linear) of a UE on a subband at the current TTI.
    pub fn ul_sinr(&self, ue: usize, sb: usize) -> f64 {
        let l = &self.links[ue];
        let signal = self.ul_prb_mw * db_to_lin(l.coupling_db[l.serving]) * l.ul_serving.gain(sb);
        sinr(
            signal,
            std::iter::empty(),
            self.ul_noise_mw,
            self.ul_combining_lin,
            self.suppression_lin,
        )
    }

    pub fn wideband_sinr_db(&self, ue: usize) -> f64 {
        self.links[ue].wideband_sinr_db
    }

    /// Long-term SINR (dB) with every fading gain at its mean; the downlink
    /// includes the beamforming gain.
    pub fn mean_sinr_db(&self, ue: usize, dir: Direction) -> f64 {
        let l = &self.links[ue];
        let lin = match dir {
            Direction::Dl => sinr(
                self.dl_prb_mw * db_to_lin(l.coupling_db[l.serving]) * self.beamforming_lin,
                l.faded
                    .iter()
                    .map(|&c| self.dl_prb_mw * db_to_lin(l.coupling_db[c]))
                    .chain([l.unfaded_interference_mw]),
                self.dl_noise_mw,
                self.dl_combining_lin,
                self.suppression_lin,
            ),
            Direction::Ul => sinr(
                self.ul_prb_mw * db_to_lin(l.coupling_db[l.serving]),
                std::iter::empty(),
                self.ul_noise_mw,
                self.ul_combining_lin,
                self.suppression_lin,
            ),
        };
        lin_to_db(lin)
    }
}

/// Draws UE positions and builds the radio environment for them.
pub fn drop_ues<R1, R2, R3>(
    cfg: &ScenarioConfig,
    layout: &Layout,
    drop_rng: &mut R1,
    shadow_rng: &mut R2,
    fading_rng: &mut R3,
) -> RadioEnv
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
    R3: Rng + ?Sized,
{
    let positions = crate::geometry::drop_ue_positions(&cfg.deployment, layout, drop_rng);
    RadioEnv::new(cfg, layout, &positions, shadow_rng, fading_rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(cfg: &ScenarioConfig, seed: u64) -> (Layout, RadioEnv) {
        let layout = Layout::new(&cfg.deployment);
        let env = drop_ues(
            cfg,
            &layout,
            &mut ChaCha8Rng::seed_from_u64(seed),
            &mut ChaCha8Rng::seed_from_u64(seed + 1),
            &mut ChaCha8Rng::seed_from_u64(seed + 2),
        );
        (layout, env)
    }

    /// Link-budget oracle written from the formulas, independent of `RadioEnv`.
    fn oracle_geometry_db(cfg: &ScenarioConfig, layout: &Layout, env: &RadioEnv, ue: usize) -> f64 {
        let p = env.links[ue].position;
        let prb_dbm = 43.0 - 10.0 * 106f64.log10();
        let noise_dbm = -174.0 + 10.0 * 360e3f64.log10() + 9.0;
        let mut rx: Vec<f64> = layout
            .cells
            .iter()
            .map(|c| {
                let mut best = p - c.position;
                for s in &layout.wrap_shifts {
                    let cand = p + *s - c.position;
                    if cand.norm() < best.norm() {
                        best = cand;
                    }
                }
                let d3 = (best.norm().powi(2) + 23.5f64.powi(2)).sqrt();
                let pl = 13.54 + 39.08 * d3.log10() + 20.0 * 2.4f64.log10();
                let b = c.boresight_deg.unwrap();
                let mut off = (best.y.atan2(best.x).to_degrees() - b).abs() % 360.0;
                if off > 180.0 {
                    off = 360.0 - off;
                }
                let att = (12.0 * (off / 65.0).powi(2)).min(30.0);
                let sh = env.shadowing_db[ue][c.site];
                10f64.powf((prb_dbm + 8.0 - att - pl + sh) / 10.0)
            })
            .collect();
        rx.sort_by(|a, b| b.total_cmp(a));
        let s = rx[0];
        let i: f64 = rx[1..].iter().sum();
        let n = 10f64.powf(noise_dbm / 10.0);
        let _ = cfg;
        10.0 * (2.0 * s / (i / 10f64.powf(0.3) + n)).log10()
    }

    #[test]
    fn default_drop_has_210_ues_on_their_strongest_cell() {
        let cfg = ScenarioConfig::default();
        let (_, env) = env(&cfg, 1);
        assert_eq!(env.ue_count(), 210);
        assert_eq!(env.subband_count, 14);
        assert_eq!(env.subband_prbs(13), 104..106);
        for l in &env.links {
            let best = l
                .coupling_db
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(l.coupling_db[l.serving], best);
        }
    }

    #[test]
    fn wideband_sinr_matches_link_budget_oracle() {
        let cfg = ScenarioConfig::default();
        let (layout, env) = env(&cfg, 7);
        let mut ours = Vec::new();
        for u in 0..env.ue_count() {
            let o = oracle_geometry_db(&cfg, &layout, &env, u);
            assert!((o - env.wideband_sinr_db(u)).abs() < 1e-6, "ue {u}: {o}");
            ours.push(env.wideband_sinr_db(u));
        }
        ours.sort_by(f64::total_cmp);
        let median = ours[ours.len() / 2];
        assert!((0.0..=15.0).contains(&median), "median {median}");
    }

    #[test]
    fn single_cell_sinr_is_snr() {
        let mut cfg = ScenarioConfig::default();
        cfg.deployment.site_count = 1;
        cfg.deployment.cells_per_site = 1;
        cfg.deployment.ue_positions = vec![Point::new(100.0, 0.0)];
        cfg.radio.shadowing_std_db = 0.0;
        let (_, env) = env(&cfg, 3);
        let g = env.links[0].dl_serving.gain(0);
        let s = env.dl_prb_mw * db_to_lin(env.links[0].coupling_db[0]) * 8.0 * g;
        let snr = 2.0 * s / env.dl_noise_mw;
        assert!((env.dl_sinr(0, 0) / snr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wideband_sinr_plausible_for_single_sector_sites() {
        let mut cfg = ScenarioConfig::default();
        cfg.deployment.cells_per_site = 1;
        let (_, env) = env(&cfg, 5);
        assert_eq!(env.ue_count(), 70);
        let mut v: Vec<f64> = (0..70).map(|u| env.wideband_sinr_db(u)).collect();
        v.sort_by(f64::total_cmp);
        assert!(v[35] > -5.0 && v[35] < 20.0, "{}", v[35]);
    }
}
