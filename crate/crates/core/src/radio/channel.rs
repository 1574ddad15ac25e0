//! Large-scale link budget: pathloss, sector pattern, noise and the SINR formula.

pub const BS_HEIGHT_M: f64 = 25.0;
pub const UE_HEIGHT_M: f64 = 1.5;
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Sector pattern half-power beamwidth and maximum attenuation.
pub const HPBW_DEG: f64 = 65.0;
pub const MAX_ATTENUATION_DB: f64 = 30.0;

/// UMa NLOS pathloss in dB at 2D distance `d2d_m`:
/// `13.54 + 39.08 log10(d3D) + 20 log10(fc / 1 GHz)`.
pub fn pathloss_db(d2d_m: f64, carrier_hz: f64) -> f64 {
    let dh = BS_HEIGHT_M - UE_HEIGHT_M;
    let d3d = (d2d_m * d2d_m + dh * dh).sqrt();
    13.54 + 39.08 * d3d.log10() + 20.0 * (carrier_hz / 1e9).log10()
}

/// Horizontal sector pattern: `-min(12 (theta / HPBW)^2, 30)` dB.
pub fn sector_attenuation_db(off_boresight_deg: f64) -> f64 {
    -(12.0 * (off_boresight_deg / HPBW_DEG).powi(2)).min(MAX_ATTENUATION_DB)
}

/// Thermal noise over one PRB, in dBm.
pub fn noise_per_prb_dbm(scs_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * (12.0 * scs_hz).log10() + noise_figure_db
}

/// `combining * S / (sum(I) / suppression + N)`, all linear.
pub fn sinr<I>(signal: f64, interference: I, noise: f64, combining: f64, suppression: f64) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let i: f64 = interference.into_iter().sum();
    combining * signal / (i / suppression + noise)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}
