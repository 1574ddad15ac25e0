//! Shared inputs for the benchmarks in `benches/`.

use xrsim_core::ScenarioConfig;

/// Seven omni cells with `ues_per_cell` users, run for `duration_s`.
pub fn desk_scenario(ues_per_cell: usize, duration_s: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.deployment.cells_per_site = 1;
    c.deployment.ues_per_cell_mean = ues_per_cell;
    c.sim_duration_s = duration_s;
    c
}

/// Per-subband CQI rows that vary across users and subbands.
pub fn cqi_rows(users: usize, subbands: usize) -> Vec<Vec<u8>> {
    (0..users)
        .map(|u| {
            (0..subbands)
                .map(|s| (1 + (u * 7 + s * 3) % 15) as u8)
                .collect()
        })
        .collect()
}
