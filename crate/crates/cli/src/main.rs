//! Command-line front end: simulate experiments, estimate effects on
//! ingested data, run Monte Carlo evaluations, and re-render stored reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spillkit::estimators::{run_all_estimators, BaselineMode, PropensityConfig};
use spillkit::evaluation::{run_monte_carlo, EstimatorSettings, McConfig};
use spillkit::propensity::ModelKind;
use spillkit::sim::{simulate_experiment, CasePreset};
use spillkit::Error;

use spillkit_cli::config::{
    parse_outlier_cap, resolve, resolve_baseline, resolve_out_dir, resolve_propensity,
    resolve_sim_config, FileConfig,
};
use spillkit_cli::ingest;
use spillkit_cli::report::{
    emit_estimate, emit_mc, load_report, EstimateReport, McReport, OutputFormat, StoredReport,
    ToolInfo, REPORT_SCHEMA_VERSION,
};

#[derive(Parser)]
#[command(
    name = "spillkit",
    version,
    about = "Simulate team-session experiments and estimate interference-adjusted treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic experiment and dump it as dataset CSV files.
    Simulate(SimulateArgs),
    /// Estimate treatment effects on one dataset loaded from CSV files.
    Estimate(EstimateArgs),
    /// Monte Carlo evaluation: replicate, estimate, and summarize.
    McEval(McEvalArgs),
    /// Re-render a stored JSON report into the selected formats.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output format: json, csv, or both.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario preset: I, II, or III.
    #[arg(long)]
    case: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of players.
    #[arg(long)]
    players: Option<usize>,
    /// Number of games.
    #[arg(long)]
    games: Option<usize>,
    /// Exposure truncation threshold K.
    #[arg(long)]
    truncate_at: Option<u32>,
    /// Uniform mass of the matching weights.
    #[arg(long)]
    uniform_mass: Option<f64>,
    /// Activity-tilt exponent of the matching weights.
    #[arg(long)]
    activity_exponent: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Players CSV (id,z,y,y_pre,x1..xk).
    #[arg(long)]
    players: Option<PathBuf>,
    /// Sessions CSV (session_id,p1..pk); exposures are derived from it.
    #[arg(long)]
    sessions: Option<PathBuf>,
    /// Exposure CSV (id,m); fallback when session logs are unavailable.
    #[arg(long)]
    exposures: Option<PathBuf>,
    /// Exposure truncation threshold K (ingestion default 21).
    #[arg(long)]
    truncate_at: Option<u32>,
    /// Outcome outlier cap; rows with y >= cap are dropped ("none" disables).
    #[arg(long)]
    outlier_cap: Option<String>,
    /// Baseline model: known-mu or did-linear.
    #[arg(long)]
    baseline: Option<String>,
    /// Propensity model: linear or boosted.
    #[arg(long)]
    propensity: Option<String>,
    /// Stabilization floor for propensity weights.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Seed echoed into the report.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the fitted propensity models (with diagnostics) into this directory.
    #[arg(long)]
    save_models: Option<PathBuf>,
    /// Reuse previously saved propensity models from this directory instead
    /// of fitting.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args)]
struct McEvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario preset: I, II, or III.
    #[arg(long)]
    case: Option<String>,
    /// Master seed of the replicate schedule.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<u32>,
    /// Number of players per replicate.
    #[arg(long)]
    players: Option<usize>,
    /// Number of games per replicate.
    #[arg(long)]
    games: Option<usize>,
    /// Exposure truncation threshold K (simulation default 10).
    #[arg(long)]
    truncate_at: Option<u32>,
    /// Baseline model: known-mu or did-linear.
    #[arg(long)]
    baseline: Option<String>,
    /// Propensity model: linear or boosted.
    #[arg(long)]
    propensity: Option<String>,
    /// Stabilization floor for propensity weights.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Uniform mass of the matching weights.
    #[arg(long)]
    uniform_mass: Option<f64>,
    /// Activity-tilt exponent of the matching weights.
    #[arg(long)]
    activity_exponent: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Stored JSON report to re-render.
    #[arg(long)]
    input: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Estimation(_) => 4,
    }
}

fn save_model(path: &std::path::Path, fit: spillkit::propensity::PropensityFit) -> Result<(), Error> {
    let saved = spillkit::propensity::SavedModel {
        schema_version: spillkit::propensity::MODEL_SCHEMA_VERSION,
        fit,
    };
    let json = serde_json::to_string_pretty(&saved)
        .map_err(|e| Error::data(format!("serialization failed: {e}")))?;
    std::fs::write(path, json + "\n")
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &std::path::Path) -> Result<spillkit::propensity::PropensityFit, Error> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let saved: spillkit::propensity::SavedModel = serde_json::from_str(&raw)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if saved.schema_version != spillkit::propensity::MODEL_SCHEMA_VERSION {
        return Err(Error::data(format!(
            "{}: model schema version {} is not supported (expected {})",
            path.display(),
            saved.schema_version,
            spillkit::propensity::MODEL_SCHEMA_VERSION
        )));
    }
    Ok(saved.fit)
}

fn parse_case(raw: Option<&str>) -> Result<Option<CasePreset>, Error> {
    match raw {
        None => Ok(None),
        Some(raw) => CasePreset::parse(raw)
            .map(Some)
            .ok_or_else(|| Error::config(format!("unknown case {raw:?} (I, II, III)"))),
    }
}

fn resolve_format(file: &FileConfig, flag: Option<&str>) -> Result<OutputFormat, Error> {
    let raw = flag.or_else(|| file.get("format"));
    match raw {
        None => Ok(OutputFormat::Both),
        Some(raw) => OutputFormat::parse(raw)
            .ok_or_else(|| Error::config(format!("unknown format {raw:?} (json, csv, both)"))),
    }
}

#[derive(Serialize)]
struct SimulateManifest {
    schema_version: u32,
    kind: String,
    tool: ToolInfo,
    config: spillkit::sim::SimulationConfig,
    case: Option<String>,
    group_sizes: spillkit::domain::GroupSizes,
    pure_control_redraws: u32,
    files: Vec<String>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let case = parse_case(args.case.as_deref())?;
    let sim = resolve_sim_config(
        &file,
        case,
        args.seed,
        args.players,
        args.games,
        args.truncate_at,
        args.uniform_mass,
        args.activity_exponent,
    )?;
    let out_dir = resolve_out_dir(&file, args.common.out_dir)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;

    let experiment = simulate_experiment(&sim)?;
    let dataset = &experiment.dataset;
    ingest::write_players_csv(dataset, &out_dir.join("players.csv"))?;
    ingest::write_sessions_csv(dataset, &out_dir.join("sessions.csv"))?;
    ingest::write_exposures_csv(dataset, &out_dir.join("exposures.csv"))?;

    let manifest = SimulateManifest {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "simulate-manifest".to_string(),
        tool: ToolInfo::current(),
        case: case.map(|c| c.name().to_string()),
        group_sizes: dataset.group_sizes(),
        pure_control_redraws: experiment.matching.pure_control_redraws,
        config: sim,
        files: vec![
            "players.csv".to_string(),
            "sessions.csv".to_string(),
            "exposures.csv".to_string(),
        ],
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(format!("serialization failed: {e}")))?;
    std::fs::write(out_dir.join("simulate_manifest.json"), json + "\n")
        .map_err(|e| Error::data(format!("cannot write manifest: {e}")))?;

    let sizes = manifest.group_sizes;
    println!(
        "simulated {} players, {} sessions -> {} (T={} C1={} C0={})",
        dataset.players.len(),
        dataset.sessions.len(),
        out_dir.display(),
        sizes.treatment,
        sizes.control_mixed,
        sizes.control_control,
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateSettingsEcho {
    players: String,
    sessions: Option<String>,
    exposures: Option<String>,
    truncation_k: u32,
    outlier_cap: Option<f64>,
    baseline: BaselineMode,
    propensity: PropensityConfig,
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let players_path = resolve(
        args.players,
        file.get("players-file").map(PathBuf::from),
        PathBuf::new(),
    );
    if players_path.as_os_str().is_empty() {
        return Err(Error::config("a players CSV is required (--players)"));
    }
    let sessions_path = args
        .sessions
        .or_else(|| file.get("sessions-file").map(PathBuf::from));
    let exposures_path = args
        .exposures
        .or_else(|| file.get("exposures-file").map(PathBuf::from));
    for path in [Some(&players_path), sessions_path.as_ref(), exposures_path.as_ref()]
        .into_iter()
        .flatten()
    {
        if !path.exists() {
            return Err(Error::config(format!("input file {} does not exist", path.display())));
        }
    }
    // Ingestion-mode defaults: truncate at 21, drop outcomes at or above 60.
    let truncation_k = resolve(args.truncate_at, file.parse("truncate-at")?, 21);
    let outlier_cap = match args.outlier_cap.as_deref().or_else(|| file.get("outlier-cap")) {
        None => Some(60.0),
        Some(raw) => parse_outlier_cap(raw)?,
    };
    let baseline = resolve_baseline(&file, args.baseline.as_deref(), BaselineMode::DidLinear)?;
    let options = resolve_propensity(&file, args.propensity.as_deref(), ModelKind::BoostedTrees)?;
    let epsilon = resolve(args.epsilon, file.parse("epsilon")?, 0.01);
    let propensity = PropensityConfig { options, epsilon };
    let seed = resolve(args.seed, file.parse("seed")?, 0);
    let out_dir = resolve_out_dir(&file, args.common.out_dir)?;
    let format = resolve_format(&file, args.common.format.as_deref())?;

    let ingest_options = ingest::IngestOptions {
        truncation_k,
        outlier_cap,
    };
    let (dataset, ingestion) = ingest::load_dataset(
        &players_path,
        sessions_path.as_deref(),
        exposures_path.as_deref(),
        &ingest_options,
    )?;
    for &(id, claimed, derived) in &ingestion.exposure_mismatches {
        eprintln!(
            "warning: player {id}: exposure file says m={claimed}, sessions derive m={derived}; using {derived}"
        );
    }
    let estimators = match &args.models {
        Some(dir) => {
            let pooled = load_model(&dir.join("propensity_pooled.json"))?;
            let treated = load_model(&dir.join("propensity_treated.json"))?;
            let pooled =
                spillkit::estimators::bind_fit_to_population(&dataset, true, &pooled, epsilon)?;
            let treated =
                spillkit::estimators::bind_fit_to_population(&dataset, false, &treated, epsilon)?;
            spillkit::estimators::run_all_estimators_with_tables(
                &dataset, pooled, treated, baseline,
            )?
        }
        None => {
            if let Some(dir) = &args.save_models {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::data(format!("cannot create {}: {e}", dir.display())))?;
                let (pooled_fit, _) = spillkit::estimators::fit_population_model(
                    &dataset, true, &options, epsilon,
                )?;
                let (treated_fit, _) = spillkit::estimators::fit_population_model(
                    &dataset, false, &options, epsilon,
                )?;
                save_model(&dir.join("propensity_pooled.json"), pooled_fit)?;
                save_model(&dir.join("propensity_treated.json"), treated_fit)?;
            }
            run_all_estimators(&dataset, &propensity, baseline)?
        }
    };

    let echo = EstimateSettingsEcho {
        players: players_path.display().to_string(),
        sessions: sessions_path.map(|p| p.display().to_string()),
        exposures: exposures_path.map(|p| p.display().to_string()),
        truncation_k,
        outlier_cap,
        baseline,
        propensity,
    };
    let report = EstimateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "estimate".to_string(),
        tool: ToolInfo::current(),
        seed,
        config: serde_json::to_value(&echo)
            .map_err(|e| Error::data(format!("serialization failed: {e}")))?,
        truncation_k,
        group_sizes: dataset.group_sizes(),
        ingestion: Some(ingestion),
        estimators,
    };
    let written = emit_estimate(&report, &out_dir, format)?;
    for tau in &report.estimators {
        match (&tau.overall, &tau.error) {
            (Some(v), _) => println!("{:16} overall tau = {v:.4}", tau.kind.name()),
            (None, Some(e)) => println!("{:16} errored: {e}", tau.kind.name()),
            (None, None) => println!("{:16} overall tau undefined", tau.kind.name()),
        }
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_mc_eval(args: McEvalArgs) -> Result<(), Error> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let case = parse_case(args.case.as_deref())?;
    let mut sim = resolve_sim_config(
        &file,
        case,
        Some(0),
        args.players,
        args.games,
        args.truncate_at,
        args.uniform_mass,
        args.activity_exponent,
    )?;
    sim.seed = 0; // replaced per replicate by the master schedule
    let master_seed = resolve(args.seed, file.parse("seed")?, 0);
    let replicates = resolve(args.replicates, file.parse("replicates")?, 100);
    let baseline = resolve_baseline(&file, args.baseline.as_deref(), BaselineMode::KnownMu)?;
    let options =
        resolve_propensity(&file, args.propensity.as_deref(), ModelKind::MultinomialLinear)?;
    let epsilon = resolve(args.epsilon, file.parse("epsilon")?, 0.01);
    let out_dir = resolve_out_dir(&file, args.common.out_dir)?;
    let format = resolve_format(&file, args.common.format.as_deref())?;

    let mc = McConfig {
        sim,
        replicates,
        master_seed,
        estimator: EstimatorSettings {
            baseline,
            propensity: PropensityConfig { options, epsilon },
        },
    };
    let summary = run_monte_carlo(&mc)?;
    if summary.replicates_failed > 0 {
        eprintln!(
            "warning: {} of {} replicates failed",
            summary.replicates_failed, summary.replicates_requested
        );
    }
    let report = McReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "mc-summary".to_string(),
        tool: ToolInfo::current(),
        config: mc,
        summary,
    };
    let written = emit_mc(&report, &out_dir, format)?;
    for cell in &report.summary.overall {
        if let (Some(mean), Some(lo), Some(hi)) = (cell.mean, cell.lower_2_5, cell.upper_97_5) {
            println!(
                "{:16} overall tau mean = {mean:.4}  95% interval [{lo:.4}, {hi:.4}]",
                cell.estimator.name()
            );
        }
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    if !args.input.exists() {
        return Err(Error::config(format!(
            "input file {} does not exist",
            args.input.display()
        )));
    }
    let out_dir = resolve_out_dir(&file, args.common.out_dir)?;
    let format = resolve_format(&file, args.common.format.as_deref())?;
    let written = match load_report(&args.input)? {
        StoredReport::Estimate(report) => emit_estimate(&report, &out_dir, format)?,
        StoredReport::Mc(report) => emit_mc(&report, &out_dir, format)?,
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::McEval(args) => cmd_mc_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
