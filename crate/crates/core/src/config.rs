//! Scenario configuration.
//!
//! A run is described by a flat `key = value` file with `#` comments. Every
//! key is optional; anything not given keeps its default. Traffic flows are
//! written as key groups, `flow.<name>.<field> = value`. When a file names at
//! least one flow, its flows replace the default XR profile entirely.
//!
//! [`ScenarioConfig::to_config_string`] writes every key back out, so a run
//! manifest can be fed to [`ScenarioConfig::from_str`] to reproduce the run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::traffic::FlowSpec;

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($(#[$vmeta:meta])* $variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($(#[$vmeta])* $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown value `{}` (expected one of: {})",
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}
pub(crate) use string_enum;

string_enum!(
    /// How data resources are granted.
    SchedulerMode {
        Dynamic => "dynamic",
        SemiPersistent => "semi-persistent",
    }
);

string_enum!(
    /// Buffer status report quantization table.
    BsrScheme {
        Legacy8 => "legacy8",
        Uniform10 => "uniform10",
        Adaptive8 => "adaptive8",
    }
);

string_enum!(
    ControlDesign {
        Legacy => "legacy",
        TwoStage => "two-stage",
    }
);

string_enum!(
    UeDropMode {
        Uniform => "uniform",
    }
);

string_enum!(
    /// Where the adaptive BSR table gets its centre volume from.
    BsrAssist {
        /// A fixed configured mean (`bsr_assist_mean_bytes`).
        Static => "static",
        /// The UE's own running buffer statistics, refreshed every `rapi_period_ms`.
        Tracked => "tracked",
    }
);

string_enum!(
    PriorityMode {
        /// UE class follows the presence of a critical flow; DL grants take their flow's class.
        Traffic => "traffic",
        /// Each UE is high or low priority with probability 1/2.
        Random => "random",
    }
);

string_enum!(
    /// What happens to a grant whose stage-2 control message was missed.
    Stage2Retry {
        Stage2 => "stage2",
        Escalate => "escalate",
    }
);

string_enum!(
    AggregationPolicy {
        NetworkAware => "network-aware",
        Off => "off",
    }
);

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentLayout {
    pub site_count: usize,
    pub cells_per_site: usize,
    pub inter_site_distance_m: f64,
    pub wraparound: bool,
    pub ues_per_cell_mean: usize,
    pub ue_drop: UeDropMode,
    pub min_distance_m: f64,
    /// Explicit UE positions; when non-empty they replace the random drop.
    pub ue_positions: Vec<Point>,
}

impl Default for DeploymentLayout {
    fn default() -> Self {
        DeploymentLayout {
            site_count: 7,
            cells_per_site: 3,
            inter_site_distance_m: 500.0,
            wraparound: true,
            ues_per_cell_mean: 10,
            ue_drop: UeDropMode::Uniform,
            min_distance_m: 35.0,
            ue_positions: Vec::new(),
        }
    }
}

impl DeploymentLayout {
    pub fn cell_count(&self) -> usize {
        self.site_count * self.cells_per_site
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub shadowing_std_db: f64,
    pub bs_noise_figure_db: f64,
    pub ue_noise_figure_db: f64,
    pub bs_antenna_gain_dbi: f64,
    pub mmse_suppression_db: f64,
    pub ul_iot_db: f64,
    pub cqi_backoff_db: f64,
    pub cqi_delay_tti: u64,
    pub subband_size_prb: usize,
    /// Interfering cells per UE that get their own fast-fading process; the rest
    /// contribute their mean received power.
    pub faded_interferers: usize,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            shadowing_std_db: 8.0,
            bs_noise_figure_db: 5.0,
            ue_noise_figure_db: 9.0,
            bs_antenna_gain_dbi: 8.0,
            mmse_suppression_db: 3.0,
            ul_iot_db: 3.0,
            cqi_backoff_db: 1.0,
            cqi_delay_tti: 4,
            subband_size_prb: 8,
            faded_interferers: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub pf_time_constant_tti: f64,
    pub harq_max_tx: u32,
    pub harq_feedback_delay_tti: u64,
    pub harq_retx_delay_tti: u64,
    pub sr_delay_tti: u64,
    pub sps_period_tti: u64,
    pub sps_prbs_per_ue: usize,
    /// 0 means valid for the whole run.
    pub sps_validity_tti: u64,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            pf_time_constant_tti: 100.0,
            harq_max_tx: 4,
            harq_feedback_delay_tti: 4,
            harq_retx_delay_tti: 4,
            sr_delay_tti: 2,
            sps_period_tti: 8,
            sps_prbs_per_ue: 16,
            sps_validity_tti: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsrParams {
    /// Periodic report timer; 0 disables periodic reports.
    pub period_tti: u64,
    /// Attach a report to every uplink transport block.
    pub piggyback: bool,
    pub assist: BsrAssist,
    pub assist_mean_bytes: f64,
    pub alpha_bytes: f64,
    pub refinement: f64,
    pub legacy_table: Option<PathBuf>,
    pub rapi_period_ms: f64,
}

impl Default for BsrParams {
    fn default() -> Self {
        BsrParams {
            period_tti: 40,
            piggyback: false,
            assist: BsrAssist::Static,
            assist_mean_bytes: 10e6,
            alpha_bytes: 5e6,
            refinement: 3.0,
            legacy_table: None,
            rapi_period_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub pool_cru: u32,
    pub stage1_share: f64,
    pub stage2_grants_per_msg: usize,
    pub stage2_cost_cru: u32,
    pub priority_mode: PriorityMode,
    pub cell_edge_promotion: bool,
    pub cell_edge_sinr_db: f64,
    pub stage2_retry: Stage2Retry,
}

impl Default for ControlParams {
    fn default() -> Self {
        ControlParams {
            pool_cru: 16,
            stage1_share: 0.75,
            stage2_grants_per_msg: 4,
            stage2_cost_cru: 2,
            priority_mode: PriorityMode::Traffic,
            cell_edge_promotion: false,
            cell_edge_sinr_db: 0.0,
            stage2_retry: Stage2Retry::Stage2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationParams {
    pub policy: AggregationPolicy,
    pub radius_m: f64,
    pub link_capacity_bps: f64,
    pub hop_latency_ms: f64,
    pub relay_delay_ms: f64,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            policy: AggregationPolicy::NetworkAware,
            radius_m: 25.0,
            link_capacity_bps: 1e9,
            hop_latency_ms: 1.0,
            relay_delay_ms: 0.5,
        }
    }
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub deployment: DeploymentLayout,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub tti_symbols: u32,
    pub tx_antennas: u32,
    pub rx_antennas: u32,
    pub bs_power_dbm: f64,
    pub ue_power_dbm: f64,
    pub ue_speed_kmh: f64,
    pub traffic: Vec<FlowSpec>,
    pub scheduler_mode: SchedulerMode,
    pub bsr_scheme: BsrScheme,
    pub control_design: ControlDesign,
    pub aggregation_enabled: bool,
    pub sim_duration_s: f64,
    pub rng_seed: u64,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub bsr: BsrParams,
    pub control: ControlParams,
    pub aggregation: AggregationParams,
    pub stats_window_s: f64,
    pub satisfaction_threshold: f64,
    pub trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            deployment: DeploymentLayout::default(),
            carrier_freq_hz: 2.4e9,
            bandwidth_hz: 40e6,
            subcarrier_spacing_hz: 30e3,
            tti_symbols: 7,
            tx_antennas: 8,
            rx_antennas: 2,
            bs_power_dbm: 43.0,
            ue_power_dbm: 23.0,
            ue_speed_kmh: 3.0,
            traffic: FlowSpec::xr_profile(),
            scheduler_mode: SchedulerMode::Dynamic,
            bsr_scheme: BsrScheme::Legacy8,
            control_design: ControlDesign::Legacy,
            aggregation_enabled: false,
            sim_duration_s: 10.0,
            rng_seed: 1,
            radio: RadioParams::default(),
            mac: MacParams::default(),
            bsr: BsrParams::default(),
            control: ControlParams::default(),
            aggregation: AggregationParams::default(),
            stats_window_s: 1.0,
            satisfaction_threshold: 0.99,
            trace: false,
        }
    }
}

/// Value kind of a configuration key; decides whether a key can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Number,
    Flag,
    Choice,
    Text,
}

const KEYS: &[(&str, KeyKind)] = &[
    ("site_count", KeyKind::Number),
    ("cells_per_site", KeyKind::Number),
    ("inter_site_distance_m", KeyKind::Number),
    ("wraparound", KeyKind::Flag),
    ("ues_per_cell_mean", KeyKind::Number),
    ("ue_drop", KeyKind::Choice),
    ("min_distance_m", KeyKind::Number),
    ("ue_positions", KeyKind::Text),
    ("carrier_freq_hz", KeyKind::Number),
    ("bandwidth_hz", KeyKind::Number),
    ("subcarrier_spacing_hz", KeyKind::Number),
    ("tti_symbols", KeyKind::Number),
    ("tx_antennas", KeyKind::Number),
    ("rx_antennas", KeyKind::Number),
    ("bs_power_dbm", KeyKind::Number),
    ("ue_power_dbm", KeyKind::Number),
    ("ue_speed_kmh", KeyKind::Number),
    ("shadowing_std_db", KeyKind::Number),
    ("bs_noise_figure_db", KeyKind::Number),
    ("ue_noise_figure_db", KeyKind::Number),
    ("bs_antenna_gain_dbi", KeyKind::Number),
    ("mmse_suppression_db", KeyKind::Number),
    ("ul_iot_db", KeyKind::Number),
    ("cqi_backoff_db", KeyKind::Number),
    ("cqi_delay_tti", KeyKind::Number),
    ("subband_size_prb", KeyKind::Number),
    ("faded_interferers", KeyKind::Number),
    ("scheduler_mode", KeyKind::Choice),
    ("pf_time_constant_tti", KeyKind::Number),
    ("harq_max_tx", KeyKind::Number),
    ("harq_feedback_delay_tti", KeyKind::Number),
    ("harq_retx_delay_tti", KeyKind::Number),
    ("sr_delay_tti", KeyKind::Number),
    ("sps_period_tti", KeyKind::Number),
    ("sps_prbs_per_ue", KeyKind::Number),
    ("sps_validity_tti", KeyKind::Number),
    ("bsr_scheme", KeyKind::Choice),
    ("bsr_period_tti", KeyKind::Number),
    ("bsr_piggyback", KeyKind::Flag),
    ("bsr_assist", KeyKind::Choice),
    ("bsr_assist_mean_bytes", KeyKind::Number),
    ("bsr_alpha_bytes", KeyKind::Number),
    ("bsr_refinement", KeyKind::Number),
    ("bsr_legacy_table", KeyKind::Text),
    ("rapi_period_ms", KeyKind::Number),
    ("control_design", KeyKind::Choice),
    ("control_pool_cru", KeyKind::Number),
    ("stage1_share", KeyKind::Number),
    ("stage2_grants_per_msg", KeyKind::Number),
    ("stage2_cost_cru", KeyKind::Number),
    ("priority_mode", KeyKind::Choice),
    ("cell_edge_promotion", KeyKind::Flag),
    ("cell_edge_sinr_db", KeyKind::Number),
    ("stage2_retry", KeyKind::Choice),
    ("aggregation_enabled", KeyKind::Flag),
    ("agg_policy", KeyKind::Choice),
    ("agg_radius_m", KeyKind::Number),
    ("agg_link_capacity_bps", KeyKind::Number),
    ("agg_hop_latency_ms", KeyKind::Number),
    ("agg_relay_delay_ms", KeyKind::Number),
    ("stats_window_s", KeyKind::Number),
    ("satisfaction_threshold", KeyKind::Number),
    ("sim_duration_s", KeyKind::Number),
    ("rng_seed", KeyKind::Number),
    ("trace", KeyKind::Flag),
];

const FLOW_FIELDS: &[(&str, KeyKind)] = &[
    ("direction", KeyKind::Choice),
    ("rate_pps", KeyKind::Number),
    ("packet_bytes", KeyKind::Number),
    ("priority", KeyKind::Choice),
    ("pdb_ms", KeyKind::Number),
    ("target_rate_bps", KeyKind::Number),
];

fn parse_num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("`{value}` is not a valid number"))
}

fn parse_flag(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a flag (true/false)")),
    }
}

fn parse_positions(value: &str) -> std::result::Result<Vec<Point>, String> {
    let mut out = Vec::new();
    for pair in value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (x, y) = pair
            .split_once(',')
            .ok_or_else(|| format!("position `{pair}` is not `x,y`"))?;
        out.push(Point::new(parse_num(x.trim())?, parse_num(y.trim())?));
    }
    Ok(out)
}

fn format_positions(points: &[Point]) -> String {
    points
        .iter()
        .map(|p| format!("{},{}", p.x, p.y))
        .collect::<Vec<_>>()
        .join(";")
}

/// Splits `flow.<name>.<field>` into its name and field.
fn split_flow_key(key: &str) -> Option<(&str, &str)> {
    let rest = key.strip_prefix("flow.")?;
    let (name, field) = rest.rsplit_once('.')?;
    if name.is_empty() {
        return None;
    }
    Some((name, field))
}

impl ScenarioConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::load_unvalidated(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file without the cross-field checks, so overrides can still be applied.
    pub fn load_unvalidated(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses and validates configuration text.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses configuration text; values are checked, cross-field constraints are not.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut file_has_flows = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            if key.starts_with("flow.") && !file_has_flows {
                file_has_flows = true;
                cfg.traffic.clear();
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Validation { key, constraint } => Error::Parse {
                    line: line_no,
                    msg: format!("`{key}`: {constraint}"),
                },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of this config, then validates.
    pub fn with_overrides<'a, I>(mut self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::validation(item, "override must be written as key=value"))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Sets one key from its textual value. Does not validate cross-field constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key, value)
            .map_err(|constraint| Error::validation(key, constraint))
    }

    fn set_inner(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        if let Some((name, field)) = split_flow_key(key) {
            return self.set_flow(name, field, v);
        }
        let d = &mut self.deployment;
        match key {
            "site_count" => d.site_count = parse_num(v)?,
            "cells_per_site" => d.cells_per_site = parse_num(v)?,
            "inter_site_distance_m" => d.inter_site_distance_m = parse_num(v)?,
            "wraparound" => d.wraparound = parse_flag(v)?,
            "ues_per_cell_mean" => d.ues_per_cell_mean = parse_num(v)?,
            "ue_drop" => d.ue_drop = v.parse()?,
            "min_distance_m" => d.min_distance_m = parse_num(v)?,
            "ue_positions" => d.ue_positions = parse_positions(v)?,
            "carrier_freq_hz" => self.carrier_freq_hz = parse_num(v)?,
            "bandwidth_hz" => self.bandwidth_hz = parse_num(v)?,
            "subcarrier_spacing_hz" => self.subcarrier_spacing_hz = parse_num(v)?,
            "tti_symbols" => self.tti_symbols = parse_num(v)?,
            "tx_antennas" => self.tx_antennas = parse_num(v)?,
            "rx_antennas" => self.rx_antennas = parse_num(v)?,
            "bs_power_dbm" => self.bs_power_dbm = parse_num(v)?,
            "ue_power_dbm" => self.ue_power_dbm = parse_num(v)?,
            "ue_speed_kmh" => self.ue_speed_kmh = parse_num(v)?,
            "shadowing_std_db" => self.radio.shadowing_std_db = parse_num(v)?,
            "bs_noise_figure_db" => self.radio.bs_noise_figure_db = parse_num(v)?,
            "ue_noise_figure_db" => self.radio.ue_noise_figure_db = parse_num(v)?,
            "bs_antenna_gain_dbi" => self.radio.bs_antenna_gain_dbi = parse_num(v)?,
            "mmse_suppression_db" => self.radio.mmse_suppression_db = parse_num(v)?,
            "ul_iot_db" => self.radio.ul_iot_db = parse_num(v)?,
            "cqi_backoff_db" => self.radio.cqi_backoff_db = parse_num(v)?,
            "cqi_delay_tti" => self.radio.cqi_delay_tti = parse_num(v)?,
            "subband_size_prb" => self.radio.subband_size_prb = parse_num(v)?,
            "faded_interferers" => self.radio.faded_interferers = parse_num(v)?,
            "scheduler_mode" => self.scheduler_mode = v.parse()?,
            "pf_time_constant_tti" => self.mac.pf_time_constant_tti = parse_num(v)?,
            "harq_max_tx" => self.mac.harq_max_tx = parse_num(v)?,
            "harq_feedback_delay_tti" => self.mac.harq_feedback_delay_tti = parse_num(v)?,
            "harq_retx_delay_tti" => self.mac.harq_retx_delay_tti = parse_num(v)?,
            "sr_delay_tti" => self.mac.sr_delay_tti = parse_num(v)?,
            "sps_period_tti" => self.mac.sps_period_tti = parse_num(v)?,
            "sps_prbs_per_ue" => self.mac.sps_prbs_per_ue = parse_num(v)?,
            "sps_validity_tti" => self.mac.sps_validity_tti = parse_num(v)?,
            "bsr_scheme" => self.bsr_scheme = v.parse()?,
            "bsr_period_tti" => self.bsr.period_tti = parse_num(v)?,
            "bsr_piggyback" => self.bsr.piggyback = parse_flag(v)?,
            "bsr_assist" => self.bsr.assist = v.parse()?,
            "bsr_assist_mean_bytes" => self.bsr.assist_mean_bytes = parse_num(v)?,
            "bsr_alpha_bytes" => self.bsr.alpha_bytes = parse_num(v)?,
            "bsr_refinement" => self.bsr.refinement = parse_num(v)?,
            "bsr_legacy_table" => self.bsr.legacy_table = (!v.is_empty()).then(|| PathBuf::from(v)),
            "rapi_period_ms" => self.bsr.rapi_period_ms = parse_num(v)?,
            "control_design" => self.control_design = v.parse()?,
            "control_pool_cru" => self.control.pool_cru = parse_num(v)?,
            "stage1_share" => self.control.stage1_share = parse_num(v)?,
            "stage2_grants_per_msg" => self.control.stage2_grants_per_msg = parse_num(v)?,
            "stage2_cost_cru" => self.control.stage2_cost_cru = parse_num(v)?,
            "priority_mode" => self.control.priority_mode = v.parse()?,
            "cell_edge_promotion" => self.control.cell_edge_promotion = parse_flag(v)?,
            "cell_edge_sinr_db" => self.control.cell_edge_sinr_db = parse_num(v)?,
            "stage2_retry" => self.control.stage2_retry = v.parse()?,
            "aggregation_enabled" => self.aggregation_enabled = parse_flag(v)?,
            "agg_policy" => self.aggregation.policy = v.parse()?,
            "agg_radius_m" => self.aggregation.radius_m = parse_num(v)?,
            "agg_link_capacity_bps" => self.aggregation.link_capacity_bps = parse_num(v)?,
            "agg_hop_latency_ms" => self.aggregation.hop_latency_ms = parse_num(v)?,
            "agg_relay_delay_ms" => self.aggregation.relay_delay_ms = parse_num(v)?,
            "stats_window_s" => self.stats_window_s = parse_num(v)?,
            "satisfaction_threshold" => self.satisfaction_threshold = parse_num(v)?,
            "sim_duration_s" => self.sim_duration_s = parse_num(v)?,
            "rng_seed" => self.rng_seed = parse_num(v)?,
            "trace" => self.trace = parse_flag(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn set_flow(&mut self, name: &str, field: &str, v: &str) -> std::result::Result<(), String> {
        let idx = match self.traffic.iter().position(|f| f.name == name) {
            Some(i) => i,
            None => {
                self.traffic.push(FlowSpec::named(name));
                self.traffic.len() - 1
            }
        };
        let flow = &mut self.traffic[idx];
        match field {
            "direction" => flow.direction = v.parse()?,
            "rate_pps" => flow.rate_pps = parse_num(v)?,
            "packet_bytes" => flow.packet_bytes = parse_num(v)?,
            "priority" => flow.priority = v.parse()?,
            "pdb_ms" => flow.pdb_ms = parse_num(v)?,
            "target_rate_bps" => flow.target_rate_bps = parse_num(v)?,
            _ => return Err(format!("unknown flow field `{field}`")),
        }
        Ok(())
    }

    /// Current textual value of a key, or `None` for unknown keys.
    pub fn get(&self, key: &str) -> Option<String> {
        if let Some((name, field)) = split_flow_key(key) {
            let f = self.traffic.iter().find(|f| f.name == name)?;
            return Some(match field {
                "direction" => f.direction.to_string(),
                "rate_pps" => f.rate_pps.to_string(),
                "packet_bytes" => f.packet_bytes.to_string(),
                "priority" => f.priority.to_string(),
                "pdb_ms" => f.pdb_ms.to_string(),
                "target_rate_bps" => f.target_rate_bps.to_string(),
                _ => return None,
            });
        }
        let d = &self.deployment;
        Some(match key {
            "site_count" => d.site_count.to_string(),
            "cells_per_site" => d.cells_per_site.to_string(),
            "inter_site_distance_m" => d.inter_site_distance_m.to_string(),
            "wraparound" => d.wraparound.to_string(),
            "ues_per_cell_mean" => d.ues_per_cell_mean.to_string(),
            "ue_drop" => d.ue_drop.to_string(),
            "min_distance_m" => d.min_distance_m.to_string(),
            "ue_positions" => format_positions(&d.ue_positions),
            "carrier_freq_hz" => self.carrier_freq_hz.to_string(),
            "bandwidth_hz" => self.bandwidth_hz.to_string(),
            "subcarrier_spacing_hz" => self.subcarrier_spacing_hz.to_string(),
            "tti_symbols" => self.tti_symbols.to_string(),
            "tx_antennas" => self.tx_antennas.to_string(),
            "rx_antennas" => self.rx_antennas.to_string(),
            "bs_power_dbm" => self.bs_power_dbm.to_string(),
            "ue_power_dbm" => self.ue_power_dbm.to_string(),
            "ue_speed_kmh" => self.ue_speed_kmh.to_string(),
            "shadowing_std_db" => self.radio.shadowing_std_db.to_string(),
            "bs_noise_figure_db" => self.radio.bs_noise_figure_db.to_string(),
            "ue_noise_figure_db" => self.radio.ue_noise_figure_db.to_string(),
            "bs_antenna_gain_dbi" => self.radio.bs_antenna_gain_dbi.to_string(),
            "mmse_suppression_db" => self.radio.mmse_suppression_db.to_string(),
            "ul_iot_db" => self.radio.ul_iot_db.to_string(),
            "cqi_backoff_db" => self.radio.cqi_backoff_db.to_string(),
            "cqi_delay_tti" => self.radio.cqi_delay_tti.to_string(),
            "subband_size_prb" => self.radio.subband_size_prb.to_string(),
            "faded_interferers" => self.radio.faded_interferers.to_string(),
            "scheduler_mode" => self.scheduler_mode.to_string(),
            "pf_time_constant_tti" => self.mac.pf_time_constant_tti.to_string(),
            "harq_max_tx" => self.mac.harq_max_tx.to_string(),
            "harq_feedback_delay_tti" => self.mac.harq_feedback_delay_tti.to_string(),
            "harq_retx_delay_tti" => self.mac.harq_retx_delay_tti.to_string(),
            "sr_delay_tti" => self.mac.sr_delay_tti.to_string(),
            "sps_period_tti" => self.mac.sps_period_tti.to_string(),
            "sps_prbs_per_ue" => self.mac.sps_prbs_per_ue.to_string(),
            "sps_validity_tti" => self.mac.sps_validity_tti.to_string(),
            "bsr_scheme" => self.bsr_scheme.to_string(),
            "bsr_period_tti" => self.bsr.period_tti.to_string(),
            "bsr_piggyback" => self.bsr.piggyback.to_string(),
            "bsr_assist" => self.bsr.assist.to_string(),
            "bsr_assist_mean_bytes" => self.bsr.assist_mean_bytes.to_string(),
            "bsr_alpha_bytes" => self.bsr.alpha_bytes.to_string(),
            "bsr_refinement" => self.bsr.refinement.to_string(),
            "bsr_legacy_table" => self
                .bsr
                .legacy_table
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "rapi_period_ms" => self.bsr.rapi_period_ms.to_string(),
            "control_design" => self.control_design.to_string(),
            "control_pool_cru" => self.control.pool_cru.to_string(),
            "stage1_share" => self.control.stage1_share.to_string(),
            "stage2_grants_per_msg" => self.control.stage2_grants_per_msg.to_string(),
            "stage2_cost_cru" => self.control.stage2_cost_cru.to_string(),
            "priority_mode" => self.control.priority_mode.to_string(),
            "cell_edge_promotion" => self.control.cell_edge_promotion.to_string(),
            "cell_edge_sinr_db" => self.control.cell_edge_sinr_db.to_string(),
            "stage2_retry" => self.control.stage2_retry.to_string(),
            "aggregation_enabled" => self.aggregation_enabled.to_string(),
            "agg_policy" => self.aggregation.policy.to_string(),
            "agg_radius_m" => self.aggregation.radius_m.to_string(),
            "agg_link_capacity_bps" => self.aggregation.link_capacity_bps.to_string(),
            "agg_hop_latency_ms" => self.aggregation.hop_latency_ms.to_string(),
            "agg_relay_delay_ms" => self.aggregation.relay_delay_ms.to_string(),
            "stats_window_s" => self.stats_window_s.to_string(),
            "satisfaction_threshold" => self.satisfaction_threshold.to_string(),
            "sim_duration_s" => self.sim_duration_s.to_string(),
            "rng_seed" => self.rng_seed.to_string(),
            "trace" => self.trace.to_string(),
            _ => return None,
        })
    }

    /// Every key of this config in manifest order, flows last.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = KEYS.iter().map(|(k, _)| k.to_string()).collect();
        for flow in &self.traffic {
            for (field, _) in FLOW_FIELDS {
                keys.push(format!("flow.{}.{}", flow.name, field));
            }
        }
        keys
    }

    /// Kind of a key's value, used to decide whether it may be swept.
    pub fn key_kind(key: &str) -> Option<KeyKind> {
        if let Some((_, field)) = split_flow_key(key) {
            return FLOW_FIELDS
                .iter()
                .find(|(f, _)| *f == field)
                .map(|(_, k)| *k);
        }
        KEYS.iter().find(|(k, _)| *k == key).map(|(_, k)| *k)
    }

    pub fn is_sweepable(key: &str) -> bool {
        matches!(
            Self::key_kind(key),
            Some(KeyKind::Number | KeyKind::Choice | KeyKind::Flag)
        ) && key != "rng_seed"
    }

    /// Serializes every key, one `key = value` per line.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# xrsim scenario\n");
        for key in self.keys() {
            let value = self.get(&key).unwrap_or_default();
            out.push_str(&key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Number of PRBs for the configured bandwidth and numerology.
    ///
    /// Uses the NR maximum transmission bandwidth configuration where the
    /// (bandwidth, SCS) pair is listed there; otherwise assumes 90% occupancy.
    pub fn prb_count(&self) -> usize {
        prb_count(self.bandwidth_hz, self.subcarrier_spacing_hz)
    }

    pub fn subband_count(&self) -> usize {
        self.prb_count()
            .div_ceil(self.radio.subband_size_prb.max(1))
    }

    /// Length of one scheduling interval in seconds.
    pub fn tti_duration_s(&self) -> f64 {
        let symbol_s = 1e-3 / (14.0 * self.subcarrier_spacing_hz / 15e3);
        symbol_s * f64::from(self.tti_symbols)
    }

    pub fn tti_count(&self) -> u64 {
        (self.sim_duration_s / self.tti_duration_s()).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(key, format!("must be > 0 (got {v})")))
            }
        }
        fn non_negative(key: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(key, format!("must be >= 0 (got {v})")))
            }
        }

        let d = &self.deployment;
        if ![1, 7, 19].contains(&d.site_count) {
            return Err(Error::validation(
                "site_count",
                "must be 1, 7 or 19 (hexagonal rings)",
            ));
        }
        if ![1, 3].contains(&d.cells_per_site) {
            return Err(Error::validation("cells_per_site", "must be 1 or 3"));
        }
        positive("inter_site_distance_m", d.inter_site_distance_m)?;
        if d.ues_per_cell_mean == 0 && d.ue_positions.is_empty() {
            return Err(Error::validation("ues_per_cell_mean", "must be > 0"));
        }
        non_negative("min_distance_m", d.min_distance_m)?;
        if d.min_distance_m >= d.inter_site_distance_m / 3f64.sqrt() {
            return Err(Error::validation(
                "min_distance_m",
                "must be smaller than the cell radius",
            ));
        }
        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("subcarrier_spacing_hz", self.subcarrier_spacing_hz)?;
        if ![7, 14].contains(&self.tti_symbols) {
            return Err(Error::validation("tti_symbols", "must be 7 or 14"));
        }
        positive("tx_antennas", f64::from(self.tx_antennas))?;
        positive("rx_antennas", f64::from(self.rx_antennas))?;
        // dBm values are logarithmic; "positive" means a positive linear power.
        for (key, v) in [
            ("bs_power_dbm", self.bs_power_dbm),
            ("ue_power_dbm", self.ue_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(key, "must be finite"));
            }
        }
        positive("ue_speed_kmh", self.ue_speed_kmh)?;
        if self.prb_count() == 0 {
            return Err(Error::validation(
                "bandwidth_hz",
                "bandwidth holds no whole PRB at this subcarrier spacing",
            ));
        }
        non_negative("shadowing_std_db", self.radio.shadowing_std_db)?;
        non_negative("mmse_suppression_db", self.radio.mmse_suppression_db)?;
        non_negative("ul_iot_db", self.radio.ul_iot_db)?;
        non_negative("cqi_backoff_db", self.radio.cqi_backoff_db)?;
        positive("subband_size_prb", self.radio.subband_size_prb as f64)?;
        positive("pf_time_constant_tti", self.mac.pf_time_constant_tti)?;
        if self.mac.harq_max_tx == 0 {
            return Err(Error::validation("harq_max_tx", "must be >= 1"));
        }
        if self.mac.harq_feedback_delay_tti == 0 {
            return Err(Error::validation("harq_feedback_delay_tti", "must be >= 1"));
        }
        if self.mac.harq_retx_delay_tti < self.mac.harq_feedback_delay_tti {
            return Err(Error::validation(
                "harq_retx_delay_tti",
                "must not be shorter than harq_feedback_delay_tti",
            ));
        }
        if self.mac.sps_period_tti == 0 {
            return Err(Error::validation("sps_period_tti", "must be >= 1"));
        }
        positive("sps_prbs_per_ue", self.mac.sps_prbs_per_ue as f64)?;
        non_negative("bsr_assist_mean_bytes", self.bsr.assist_mean_bytes)?;
        positive("bsr_alpha_bytes", self.bsr.alpha_bytes)?;
        if self.bsr.refinement.is_nan() || self.bsr.refinement <= 1.0 {
            return Err(Error::validation("bsr_refinement", "must be > 1"));
        }
        positive("rapi_period_ms", self.bsr.rapi_period_ms)?;
        positive("control_pool_cru", f64::from(self.control.pool_cru))?;
        if !(0.0..=1.0).contains(&self.control.stage1_share) {
            return Err(Error::validation("stage1_share", "must lie in [0, 1]"));
        }
        positive(
            "stage2_grants_per_msg",
            self.control.stage2_grants_per_msg as f64,
        )?;
        positive("stage2_cost_cru", f64::from(self.control.stage2_cost_cru))?;
        positive("agg_radius_m", self.aggregation.radius_m)?;
        positive("agg_link_capacity_bps", self.aggregation.link_capacity_bps)?;
        non_negative("agg_hop_latency_ms", self.aggregation.hop_latency_ms)?;
        non_negative("agg_relay_delay_ms", self.aggregation.relay_delay_ms)?;
        positive("stats_window_s", self.stats_window_s)?;
        if !(self.satisfaction_threshold > 0.0 && self.satisfaction_threshold <= 1.0) {
            return Err(Error::validation(
                "satisfaction_threshold",
                "must lie in (0, 1]",
            ));
        }
        positive("sim_duration_s", self.sim_duration_s)?;
        if self.traffic.is_empty() {
            return Err(Error::validation("flow", "at least one flow is required"));
        }
        for flow in &self.traffic {
            flow.validate()?;
        }
        Ok(())
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_config_str(s)
    }
}

/// PRB count for a channel bandwidth and subcarrier spacing.
pub fn prb_count(bandwidth_hz: f64, scs_hz: f64) -> usize {
    // NR FR1 maximum transmission bandwidth configuration (N_RB).
    const TABLE: &[(u32, u32, usize)] = &[
        (15, 5, 25),
        (15, 10, 52),
        (15, 15, 79),
        (15, 20, 106),
        (15, 25, 133),
        (15, 30, 160),
        (15, 40, 216),
        (15, 50, 270),
        (30, 5, 11),
        (30, 10, 24),
        (30, 15, 38),
        (30, 20, 51),
        (30, 25, 65),
        (30, 30, 78),
        (30, 40, 106),
        (30, 50, 133),
        (30, 60, 162),
        (30, 80, 217),
        (30, 100, 273),
        (60, 10, 11),
        (60, 20, 24),
        (60, 40, 51),
        (60, 50, 65),
        (60, 100, 135),
    ];
    if !(bandwidth_hz > 0.0 && scs_hz > 0.0) {
        return 0;
    }
    let scs_khz = scs_hz / 1e3;
    let bw_mhz = bandwidth_hz / 1e6;
    for &(s, b, n) in TABLE {
        if (scs_khz - f64::from(s)).abs() < 1e-9 && (bw_mhz - f64::from(b)).abs() < 1e-9 {
            return n;
        }
    }
    (0.9 * bandwidth_hz / (12.0 * scs_hz)).floor() as usize
}
