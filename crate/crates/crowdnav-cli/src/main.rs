//! Command-line front end: single simulations, seeded batch experiments,
//! trajectory-forecast evaluation, rank-sum significance tests, and report
//! aggregation. Every output directory carries a manifest sufficient to
//! reproduce the run.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crowdnav::dynamics::AgentParams;
use crowdnav::forecast::{
    evaluate_split, load_trajectories, synthetic_dataset, DatasetSplit, ForecastConfig,
    TrajectoryDataset,
};
use crowdnav::metrics::{
    aggregate, mann_whitney_u, score_episode, EpisodeMetrics, EpisodeRow, ReportFormat,
};
use crowdnav::mpcc::MpccConfig;
use crowdnav::sim::policies::{PlannerPolicy, PlannerVariant};
use crowdnav::sim::{
    generate_scenario, run_episode, CorridorTemplate, HumanModel, OrcaRobotPolicy, RobotPolicy,
    Scenario,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "crowdnav", version, about = "Crowd navigation experiment runner")]
struct Cli {
    /// Planner/simulation configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads for batch commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Emit solver traces and progress notes to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode from a scenario file and write its JSON-lines log.
    Simulate(SimulateArgs),
    /// Generate seeded scenarios and run each policy on the identical set.
    Batch(BatchArgs),
    /// Evaluate trajectory forecasting on a benchmark split (or a synthetic
    /// surrogate corpus).
    Predict(PredictArgs),
    /// Pairwise rank-sum test between two episode tables.
    Stats(StatsArgs),
    /// Aggregate episode tables into a report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Policy: sicnav_p | sicnav_np | mpc_cvmm | orca_robot.
    #[arg(long)]
    policy: String,
}

#[derive(Args)]
struct BatchArgs {
    /// Scenario template.
    #[arg(long, default_value = "corridor-doorway")]
    template: String,
    /// Number of simulated humans.
    #[arg(long, default_value_t = 3)]
    humans: usize,
    /// Number of scenarios.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Comma-separated policies to run on the identical scenario set.
    #[arg(long, default_value = "sicnav_p,mpc_cvmm")]
    policies: String,
    /// Human model: orca | sfm.
    #[arg(long, default_value = "orca")]
    human_model: String,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory with benchmark files (eth.txt, hotel.txt, univ.txt,
    /// zara1.txt, zara2.txt).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Test split (leave-one-out over the remaining four).
    #[arg(long)]
    split: String,
    /// Use the bundled synthetic surrogate corpus instead of real data.
    #[arg(long)]
    synthetic: bool,
    /// Joint goal samples per scene.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Cap on evaluated scenes (0 = all).
    #[arg(long, default_value_t = 0)]
    max_scenes: usize,
}

#[derive(Args)]
struct StatsArgs {
    /// First episode table (CSV).
    a: PathBuf,
    /// Second episode table (CSV).
    b: PathBuf,
    /// Metric column: nav_time | collision_freq | frozen_freq | success.
    #[arg(long, default_value = "nav_time")]
    metric: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Episode tables to merge.
    #[arg(required = true)]
    episodes: Vec<PathBuf>,
    /// Output format: csv | json.
    #[arg(long, default_value = "csv")]
    format: String,
}

/// Experiment configuration file: planner, agent, and scenario settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ExperimentConfig {
    mpcc: MpccConfig,
    params: AgentParams,
    corridor_half_length: f64,
    spawn_min_x: f64,
    spawn_max_x: f64,
    time_limit: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = CorridorTemplate::default();
        Self {
            mpcc: MpccConfig::simulation(),
            params: AgentParams::default(),
            corridor_half_length: t.corridor_half_length,
            spawn_min_x: t.spawn_min_x,
            spawn_max_x: t.spawn_max_x,
            time_limit: 90.0,
        }
    }
}

impl ExperimentConfig {
    fn template(&self) -> CorridorTemplate {
        CorridorTemplate {
            corridor_half_length: self.corridor_half_length,
            spawn_min_x: self.spawn_min_x,
            spawn_max_x: self.spawn_max_x,
            ..CorridorTemplate::default()
        }
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: Vec<String>,
    config_path: Option<String>,
    seeds: Vec<u64>,
    out_dir: String,
    version: String,
}

fn write_manifest(out: &Path, seeds: &[u64], config: &Option<PathBuf>) -> Result<()> {
    let manifest = RunManifest {
        command: std::env::args().collect(),
        config_path: config.as_ref().map(|p| p.display().to_string()),
        seeds: seeds.to_vec(),
        out_dir: out.display().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| anyhow!("config {}:{}:{}: {e}", p.display(), e.line(), e.column()))
        }
    }
}

/// Usage errors exit with status 2, runtime failures with 1.
fn usage_error(msg: &str) -> ! {
    eprintln!("error: {msg}");
    std::process::exit(2);
}

fn make_policy(name: &str, cfg: &MpccConfig) -> Option<Box<dyn RobotPolicy>> {
    if name == "orca_robot" {
        return Some(Box::new(OrcaRobotPolicy { dt: cfg.dt }));
    }
    PlannerVariant::parse(name)
        .map(|v| Box::new(PlannerPolicy::new(v, cfg.clone())) as Box<dyn RobotPolicy>)
}

const POLICY_NAMES: &str = "sicnav_p | sicnav_np | mpc_cvmm | orca_robot";

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().ok();
    }
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Batch(args) => cmd_batch(&cli, args),
        Command::Predict(args) => cmd_predict(&cli, args),
        Command::Stats(args) => cmd_stats(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let config = load_config(&cli.config)?;
    let mut cfg = config.mpcc.clone();
    cfg.verbose = cli.verbose;
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| {
        anyhow!("scenario {}:{}:{}: {e}", args.scenario.display(), e.line(), e.column())
    })?;
    let Some(mut policy) = make_policy(&args.policy, &cfg) else {
        usage_error(&format!("unknown policy '{}' (expected {POLICY_NAMES})", args.policy));
    };
    let log = run_episode(&scenario, policy.as_mut(), cfg.dt);
    let metrics = score_episode(&log, &scenario);
    std::fs::write(cli.out.join("run.jsonl"), log.to_jsonl())?;
    std::fs::write(cli.out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    write_manifest(&cli.out, &[scenario.seed], &cli.config)?;
    if cli.verbose {
        eprintln!(
            "episode: success={} nav_time={:.2}s ticks={}",
            metrics.success,
            metrics.nav_time,
            log.ticks.len()
        );
    }
    Ok(())
}

fn episode_csv_header() -> &'static str {
    "policy,seed,success,nav_time,collision_freq,frozen_freq,total_ticks,colliding_ticks,frozen_ticks"
}

fn episode_csv_row(row: &EpisodeRow) -> String {
    let m = &row.metrics;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.policy,
        row.scenario_seed,
        u8::from(m.success),
        m.nav_time,
        m.collision_freq,
        m.frozen_freq,
        m.total_ticks,
        m.colliding_ticks,
        m.frozen_ticks
    )
}

fn parse_episode_csv(text: &str, path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            bail!("{}:{}: expected 9 columns", path.display(), idx + 1);
        }
        let num = |k: usize| -> Result<f64> {
            parts[k]
                .parse()
                .map_err(|e| anyhow!("{}:{}: column {}: {e}", path.display(), idx + 1, k + 1))
        };
        rows.push(EpisodeRow {
            policy: parts[0].to_string(),
            scenario_seed: parts[1].parse()?,
            metrics: EpisodeMetrics {
                success: parts[2] == "1",
                nav_time: num(3)?,
                collision_freq: num(4)?,
                frozen_freq: num(5)?,
                total_ticks: num(6)? as usize,
                colliding_ticks: num(7)? as usize,
                frozen_ticks: num(8)? as usize,
            },
        });
    }
    Ok(rows)
}

fn cmd_batch(cli: &Cli, args: &BatchArgs) -> Result<()> {
    let config = load_config(&cli.config)?;
    if args.template != "corridor-doorway" {
        usage_error(&format!("unknown template '{}' (expected corridor-doorway)", args.template));
    }
    let human_model = match args.human_model.as_str() {
        "orca" => HumanModel::Orca,
        "sfm" => HumanModel::Sfm,
        other => usage_error(&format!("unknown human model '{other}' (expected orca | sfm)")),
    };
    let policies: Vec<String> = args.policies.split(',').map(|s| s.trim().to_string()).collect();
    for p in &policies {
        if make_policy(p, &config.mpcc).is_none() {
            usage_error(&format!("unknown policy '{p}' (expected {POLICY_NAMES})"));
        }
    }

    let seeds: Vec<u64> = (0..args.count as u64).map(|k| cli.seed + k).collect();
    let template = config.template();
    let mut scenarios = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let mut s = generate_scenario(seed, args.humans, &template, &config.params, human_model)?;
        s.time_limit = config.time_limit;
        scenarios.push(s);
    }
    std::fs::write(cli.out.join("scenarios.json"), serde_json::to_string_pretty(&scenarios)?)?;

    // Resume: completed (policy, seed) pairs are read back from the table.
    let episodes_path = cli.out.join("episodes.csv");
    let mut done: BTreeMap<(String, u64), EpisodeRow> = BTreeMap::new();
    if episodes_path.exists() {
        let text = std::fs::read_to_string(&episodes_path)?;
        for row in parse_episode_csv(&text, &episodes_path)? {
            done.insert((row.policy.clone(), row.scenario_seed), row);
        }
    }

    let mut todo: Vec<(String, usize)> = Vec::new();
    for policy in &policies {
        for (idx, &seed) in seeds.iter().enumerate() {
            if !done.contains_key(&(policy.clone(), seed)) {
                todo.push((policy.clone(), idx));
            }
        }
    }
    let verbose = cli.verbose;
    let fresh: Vec<EpisodeRow> = todo
        .par_iter()
        .map(|(policy, idx)| {
            let scenario = &scenarios[*idx];
            let mut p = make_policy(policy, &config.mpcc).expect("validated above");
            let log = run_episode(scenario, p.as_mut(), config.mpcc.dt);
            let metrics = score_episode(&log, scenario);
            if verbose {
                eprintln!(
                    "{policy} seed {}: success={} nav={:.2}s",
                    scenario.seed, metrics.success, metrics.nav_time
                );
            }
            EpisodeRow { policy: policy.clone(), scenario_seed: scenario.seed, metrics }
        })
        .collect();
    for row in fresh {
        done.insert((row.policy.clone(), row.scenario_seed), row);
    }

    // Deterministic order: by policy listing, then seed.
    let mut rows = Vec::new();
    for policy in &policies {
        for &seed in &seeds {
            if let Some(row) = done.get(&(policy.clone(), seed)) {
                rows.push(row.clone());
            }
        }
    }
    let mut csv = String::from(episode_csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&episode_csv_row(row));
        csv.push('\n');
    }
    std::fs::write(&episodes_path, csv)?;

    let table = aggregate(&rows);
    crowdnav::metrics::emit_report(&table, &cli.out.join("aggregate.csv"), ReportFormat::Csv)?;
    write_manifest(&cli.out, &seeds, &cli.config)?;
    Ok(())
}

fn load_split(data_dir: &Path, split: DatasetSplit) -> Result<TrajectoryDataset> {
    let path = data_dir.join(split.file_name());
    load_trajectories(&path).with_context(|| format!("loading {}", path.display()))
}

/// Synthetic surrogate corpora, one flavor per split name.
fn synthetic_split(split: DatasetSplit, scenes: usize) -> TrajectoryDataset {
    let seed = match split {
        DatasetSplit::Eth => 101,
        DatasetSplit::Hotel => 202,
        DatasetSplit::Univ => 303,
        DatasetSplit::Zara1 => 404,
        DatasetSplit::Zara2 => 505,
    };
    synthetic_dataset(seed, scenes)
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let Some(split) = DatasetSplit::parse(&args.split) else {
        usage_error(&format!(
            "unknown split '{}' (expected eth | hotel | univ | zara1 | zara2)",
            args.split
        ));
    };
    let cfg = ForecastConfig {
        samples: args.samples,
        seed: cli.seed,
        max_scenes: args.max_scenes,
        ..Default::default()
    };
    let (train, test) = if args.synthetic {
        let mut train_scenes = Vec::new();
        for other in DatasetSplit::ALL.iter().filter(|s| **s != split) {
            train_scenes.extend(synthetic_split(*other, 30).scenes);
        }
        (TrajectoryDataset { scenes: train_scenes }, synthetic_split(split, 30))
    } else {
        let Some(dir) = &args.data_dir else {
            usage_error("either --data-dir or --synthetic is required");
        };
        let mut train_scenes = Vec::new();
        for other in DatasetSplit::ALL.iter().filter(|s| **s != split) {
            train_scenes.extend(load_split(dir, *other)?.scenes);
        }
        (TrajectoryDataset { scenes: train_scenes }, load_split(dir, split)?)
    };
    let (orca, cvmm, _) = evaluate_split(&train, &test, &cfg);
    let mut csv = String::from("split,method,ml_ade,ml_fde,bo20_ade,bo20_fde,kde_nll\n");
    for (method, s) in [("orca", &orca), ("cvmm", &cvmm)] {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            split.name(),
            method,
            s.ml_ade,
            s.ml_fde,
            s.bo20_ade,
            s.bo20_fde,
            s.kde_nll
        ));
    }
    std::fs::write(cli.out.join("forecast.csv"), csv)?;
    write_manifest(&cli.out, &[cli.seed], &cli.config)?;
    if cli.verbose {
        eprintln!(
            "{}: orca ml {:.3}/{:.3} vs cvmm ml {:.3}/{:.3} over {} agents",
            split.name(),
            orca.ml_ade,
            orca.ml_fde,
            cvmm.ml_ade,
            cvmm.ml_fde,
            orca.agents
        );
    }
    Ok(())
}

fn metric_column(rows: &[EpisodeRow], metric: &str) -> Option<Vec<f64>> {
    let pick: fn(&EpisodeMetrics) -> f64 = match metric {
        "nav_time" => |m| m.nav_time,
        "collision_freq" => |m| m.collision_freq,
        "frozen_freq" => |m| m.frozen_freq,
        "success" => |m| f64::from(u8::from(m.success)),
        _ => return None,
    };
    Some(rows.iter().map(|r| pick(&r.metrics)).collect())
}

fn cmd_stats(cli: &Cli, args: &StatsArgs) -> Result<()> {
    let a_text = std::fs::read_to_string(&args.a)?;
    let b_text = std::fs::read_to_string(&args.b)?;
    let a_rows = parse_episode_csv(&a_text, &args.a)?;
    let b_rows = parse_episode_csv(&b_text, &args.b)?;
    let Some(a) = metric_column(&a_rows, &args.metric) else {
        usage_error(&format!(
            "unknown metric '{}' (expected nav_time | collision_freq | frozen_freq | success)",
            args.metric
        ));
    };
    let b = metric_column(&b_rows, &args.metric).expect("validated above");
    if a.is_empty() || b.is_empty() {
        bail!("both episode tables must be non-empty");
    }
    let (u, p) = mann_whitney_u(&a, &b);
    println!("U = {u}");
    println!("p = {p}");
    let out = serde_json::json!({
        "metric": args.metric,
        "n_a": a.len(),
        "n_b": b.len(),
        "u_statistic": u,
        "p_value": p,
    });
    std::fs::write(cli.out.join("stats.json"), serde_json::to_string_pretty(&out)?)?;
    write_manifest(&cli.out, &[cli.seed], &cli.config)?;
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let format = match args.format.as_str() {
        "csv" => ReportFormat::Csv,
        "json" => ReportFormat::Json,
        other => usage_error(&format!("unknown format '{other}' (expected csv | json)")),
    };
    let mut rows = Vec::new();
    for path in &args.episodes {
        let text = std::fs::read_to_string(path)?;
        rows.extend(parse_episode_csv(&text, path)?);
    }
    if rows.is_empty() {
        bail!("no episode rows found");
    }
    let table = aggregate(&rows);
    let name = match format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Json => "report.json",
    };
    crowdnav::metrics::emit_report(&table, &cli.out.join(name), format)?;
    write_manifest(&cli.out, &[cli.seed], &cli.config)?;
    Ok(())
}
