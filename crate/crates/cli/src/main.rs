//! `xrsim`: run scenarios, sweep a key, compare schemes and dump BSR tables.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use xrsim_core::bsr::{build_table, BsrTableSpec, RApiAssistance};
use xrsim_core::metrics::ecdf_table;
use xrsim_core::{
    run, BsrScheme, ControlDesign, Direction, Ecdf, Priority, RunReport, SatisfactionSpec,
    ScenarioConfig,
};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "XRSIM_OUT";
const DEFAULT_OUT: &str = "xrsim-out";
const DELTA_PERCENTILES: [f64; 4] = [10.0, 50.0, 90.0, 95.0];

#[derive(Parser)]
#[command(
    name = "xrsim",
    version,
    about = "System-level simulator for XR traffic over a multi-cell radio network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario once per seed and write its CSV files.
    Run(RunArgs),
    /// Run a scenario for each value of one key and summarize.
    Sweep(SweepArgs),
    /// Run every variant of one design axis on the same seeds.
    Compare(CompareArgs),
    /// Print a BSR table as CSV.
    DumpBsr(DumpArgs),
    /// Check a configuration and print it with every key resolved.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario file (`key = value` lines).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a key after the file is read, e.g. `--set bsr_scheme=adaptive8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SeedArgs {
    /// Seed to run; repeatable. Defaults to the config's `rng_seed`.
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Comma-separated seeds, added to `--seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory. Defaults to $XRSIM_OUT, then `xrsim-out`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    seeds: SeedArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    /// Key to sweep.
    #[arg(long)]
    key: String,
    /// Comma-separated values of the key.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    #[value(name = "bsr_scheme")]
    BsrScheme,
    #[value(name = "control_design")]
    ControlDesign,
    #[value(name = "aggregation")]
    Aggregation,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long, value_enum)]
    axis: Axis,
}

#[derive(Args)]
struct DumpArgs {
    /// Table variant.
    #[arg(long)]
    scheme: BsrScheme,
    /// Take the assistance parameters (and legacy table file) from this config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Assisted mean buffered volume, bytes.
    #[arg(long)]
    mean_bytes: Option<f64>,
    /// Half-width of the refined range, bytes.
    #[arg(long)]
    alpha_bytes: Option<f64>,
    /// Outside/inside step ratio.
    #[arg(long)]
    refinement: Option<f64>,
    /// Write to this file instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            msg: msg.into(),
        }
    }

    fn runtime(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::runtime(format!("io: {}: {e}", path.display()))
    }
}

impl From<xrsim_core::Error> for Failure {
    fn from(e: xrsim_core::Error) -> Self {
        Failure {
            code: if e.is_config_error() { 1 } else { 2 },
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::DumpBsr(a) => cmd_dump(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("xrsim: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// Loads the file, applies overrides, then validates. A missing or
/// unreadable file counts as a configuration error.
fn load(args: &ConfigArgs) -> CliResult<ScenarioConfig> {
    let cfg = ScenarioConfig::load_unvalidated(&args.config)
        .map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg.with_overrides(args.overrides.iter().map(String::as_str))?)
}

fn seeds(cfg: &ScenarioConfig, args: &SeedArgs) -> Vec<u64> {
    let mut s: Vec<u64> = args.seed.iter().chain(&args.seeds).copied().collect();
    if s.is_empty() {
        s.push(cfg.rng_seed);
    }
    s.sort_unstable();
    s.dedup();
    s
}

fn out_root(args: &SeedArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn prepare_root(root: &Path) -> CliResult<()> {
    fs::create_dir_all(root).map_err(|e| Failure::io(root, e))
}

/// Exports into a sibling temp directory, then renames it into place.
fn export_atomic(report: &RunReport, dir: &Path) -> CliResult<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Failure::io(&tmp, e))?;
    }
    report.export(&tmp)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Failure::io(dir, e))
}

fn write_atomic(path: &Path, body: &str) -> CliResult<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, body).map_err(|e| Failure::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Failure::io(path, e))
}

/// Runs each (label, config) job in parallel and exports it to `root/label`.
fn run_jobs(root: &Path, jobs: Vec<(PathBuf, ScenarioConfig)>) -> CliResult<Vec<RunReport>> {
    jobs.into_par_iter()
        .map(|(rel, cfg)| {
            let report = run(&cfg)?;
            export_atomic(&report, &root.join(rel))?;
            Ok(report)
        })
        .collect()
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}"))
}

fn with_seed(cfg: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.rng_seed = seed;
    c
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let cfg = load(&a.config)?;
    let root = out_root(&a.seeds);
    prepare_root(&root)?;
    let jobs = seeds(&cfg, &a.seeds)
        .into_iter()
        .map(|s| (seed_dir(s), with_seed(&cfg, s)))
        .collect();
    let reports = run_jobs(&root, jobs)?;
    for r in &reports {
        println!(
            "seed {}: {} UEs, {:.3} of {:.3} MB delivered, satisfaction {:.3} -> {}",
            r.config.rng_seed,
            r.ues.len(),
            r.delivered_bytes as f64 / 1e6,
            r.generated_bytes as f64 / 1e6,
            satisfaction(r),
            root.join(seed_dir(r.config.rng_seed)).display()
        );
    }
    Ok(())
}

fn satisfaction(r: &RunReport) -> f64 {
    r.satisfaction(&SatisfactionSpec {
        threshold: r.config.satisfaction_threshold,
    })
    .aggregate
}

fn pooled(reports: &[&RunReport], f: impl Fn(&RunReport) -> Ecdf) -> Ecdf {
    let mut values = Vec::new();
    let (mut name, mut unit) = (String::new(), String::new());
    for r in reports {
        let e = f(r);
        values.extend_from_slice(e.values());
        name = e.name.clone();
        unit = e.unit.clone();
    }
    Ecdf::new(&name, &unit, values)
}

fn fmt_pct(e: &Ecdf, p: f64) -> String {
    e.percentile(p)
        .map_or_else(|_| "nan".into(), |v| format!("{v:.6}"))
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    if !ScenarioConfig::is_sweepable(&a.key) {
        return Err(Failure::config(format!(
            "config: `{}` is not a sweepable key",
            a.key
        )));
    }
    let base = load(&a.config)?;
    let seeds = seeds(&base, &a.seeds);
    let mut points = Vec::new();
    for v in &a.values {
        let mut c = base.clone();
        c.set(&a.key, v)?;
        c.validate()?;
        points.push((v.clone(), c));
    }
    let root = out_root(&a.seeds);
    prepare_root(&root)?;
    let key = a.key.as_str();
    let jobs = points
        .iter()
        .flat_map(|(v, c)| {
            seeds.iter().map(move |&s| {
                (
                    PathBuf::from(format!("{key}-{v}")).join(seed_dir(s)),
                    with_seed(c, s),
                )
            })
        })
        .collect();
    let reports = run_jobs(&root, jobs)?;

    let mut s = format!("{},seeds,satisfaction,ul_p10_mbps,ul_p50_mbps,ul_p90_mbps,dl_p10_mbps,dl_p50_mbps,dl_p90_mbps\n", a.key);
    for (i, (v, _)) in points.iter().enumerate() {
        let set: Vec<&RunReport> = reports[i * seeds.len()..(i + 1) * seeds.len()]
            .iter()
            .collect();
        let sat = set.iter().map(|r| satisfaction(r)).sum::<f64>() / set.len() as f64;
        let ul = pooled(&set, |r| r.throughput(Direction::Ul));
        let dl = pooled(&set, |r| r.throughput(Direction::Dl));
        let _ = write!(s, "{v},{},{sat:.6}", set.len());
        for e in [&ul, &dl] {
            for p in [10.0, 50.0, 90.0] {
                let _ = write!(s, ",{}", fmt_pct(e, p));
            }
        }
        s.push('\n');
    }
    let path = root.join("sweep_summary.csv");
    write_atomic(&path, &s)?;
    print!("{s}");
    println!("-> {}", path.display());
    Ok(())
}

fn axis_variants(axis: Axis, base: &ScenarioConfig) -> Vec<(String, ScenarioConfig)> {
    match axis {
        Axis::BsrScheme => [
            BsrScheme::Legacy8,
            BsrScheme::Adaptive8,
            BsrScheme::Uniform10,
        ]
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.bsr_scheme = v;
            (v.to_string(), c)
        })
        .collect(),
        Axis::ControlDesign => ControlDesign::ALL
            .iter()
            .map(|&v| {
                let mut c = base.clone();
                c.control_design = v;
                (v.to_string(), c)
            })
            .collect(),
        Axis::Aggregation => [("off", false), ("on", true)]
            .iter()
            .map(|&(name, on)| {
                let mut c = base.clone();
                c.aggregation_enabled = on;
                (name.to_string(), c)
            })
            .collect(),
    }
}

/// Metric compared along an axis.
fn axis_metric(axis: Axis, r: &RunReport) -> Ecdf {
    match axis {
        Axis::BsrScheme => r.throughput(Direction::Ul),
        Axis::ControlDesign => r.scheduled_tb(),
        Axis::Aggregation => {
            let critical_dl = |f: usize| {
                r.flows[f].priority == Priority::Critical && r.flows[f].direction == Direction::Dl
            };
            Ecdf::new(
                "critical_dl_latency",
                "ms",
                r.latencies_ms(|p| critical_dl(p.flow)),
            )
        }
    }
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let base = load(&a.config)?;
    let seeds = seeds(&base, &a.seeds);
    let variants = axis_variants(a.axis, &base);
    for (_, c) in &variants {
        c.validate()?;
    }
    let root = out_root(&a.seeds);
    prepare_root(&root)?;
    let jobs = variants
        .iter()
        .flat_map(|(name, c)| {
            seeds
                .iter()
                .map(move |&s| (PathBuf::from(name).join(seed_dir(s)), with_seed(c, s)))
        })
        .collect();
    let reports = run_jobs(&root, jobs)?;

    let ecdfs: Vec<Ecdf> = (0..variants.len())
        .map(|i| {
            let set: Vec<&RunReport> = reports[i * seeds.len()..(i + 1) * seeds.len()]
                .iter()
                .collect();
            pooled(&set, |r| axis_metric(a.axis, r))
        })
        .collect();
    if ecdfs.iter().any(Ecdf::is_empty) {
        return Err(Failure::runtime(
            "metrics: a variant produced no samples to compare",
        ));
    }
    let cols: Vec<(&str, &Ecdf)> = variants
        .iter()
        .map(|(n, _)| n.as_str())
        .zip(&ecdfs)
        .collect();
    let table = ecdf_table(&cols)?;
    write_atomic(&root.join("compare_ecdf.csv"), &table)?;

    let (base_name, base_ecdf) = cols[0];
    let mut s = String::from("percentile");
    for (n, _) in &cols {
        let _ = write!(s, ",{n}");
    }
    for (n, _) in &cols[1..] {
        let _ = write!(s, ",gain_{n}_vs_{base_name}");
    }
    s.push('\n');
    for p in DELTA_PERCENTILES {
        let _ = write!(s, "{p}");
        for (_, e) in &cols {
            let _ = write!(s, ",{}", fmt_pct(e, p));
        }
        let b = base_ecdf.percentile(p)?;
        for (_, e) in &cols[1..] {
            let v = e.percentile(p)?;
            let _ = write!(s, ",{:.6}", v / b - 1.0);
        }
        s.push('\n');
    }
    write_atomic(&root.join("compare_delta.csv"), &s)?;
    println!(
        "{} ({}) over seeds {:?}",
        base_ecdf.name, base_ecdf.unit, seeds
    );
    print!("{s}");
    println!("-> {}", root.display());
    Ok(())
}

fn cmd_dump(a: DumpArgs) -> CliResult<()> {
    let cfg = match &a.config {
        Some(p) => ScenarioConfig::load(p).map_err(|e| Failure::config(e.to_string()))?,
        None => ScenarioConfig::default(),
    };
    let table = match (&cfg.bsr.legacy_table, a.scheme) {
        (Some(p), BsrScheme::Legacy8) => BsrTableSpec::load_csv(BsrScheme::Legacy8, p)?,
        _ => {
            let assist = RApiAssistance {
                refinement_factor: a.refinement.unwrap_or(cfg.bsr.refinement),
                ..RApiAssistance::new(
                    a.mean_bytes.unwrap_or(cfg.bsr.assist_mean_bytes),
                    a.alpha_bytes.unwrap_or(cfg.bsr.alpha_bytes),
                )
            };
            build_table(a.scheme, Some(&assist))?
        }
    };
    let csv = table.to_csv();
    match a.out {
        Some(p) => write_atomic(&p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_validate(a: ConfigArgs) -> CliResult<()> {
    let cfg = load(&a)?;
    print!("{}", cfg.to_config_string());
    eprintln!(
        "config ok: {} cells, {} PRBs, {} TTIs",
        cfg.deployment.cell_count(),
        cfg.prb_count(),
        cfg.tti_count()
    );
    Ok(())
}
