//! `rcl` - conflict detection for AI-driven RANs from the command line.
//!
//! Subcommands follow the pipeline stages: `generate` synthetic telemetry,
//! `train` the two-tower interaction model, `detect` conflicts end to end,
//! `sweep` multi-seed binarizer comparisons, and `report` a summary table.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, SpecSource};
use rcl_core::binarize::{binarize_with, BinarizationMethod, BinarizeOptions};
use rcl_core::datagen::{generate, read_dataset, write_dataset, ConflictModelSpec, Dataset};
use rcl_core::eval::{
    self, conflict_f1, conflict_f1_agent_pairs, graph_f1, run_sweep, SweepConfig,
};
use rcl_core::graph::{
    boxplus_augment, full_adjacency_csv, learned_adjacency_csv, score_matrix_csv, write_string,
};
use rcl_core::identify::{
    ground_truth_conflicts, identify_conflicts_opts, ConflictKind, IdentifyOptions,
};
use rcl_core::twotower::{
    append_trace_csv, embed_dataset, full_score_matrix, load_model, save_model, train, Hyperparams,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "rcl",
    about = "Conflict detection for AI-driven RANs: learn interactions, reconstruct the conflict graph, identify conflicts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a known conflict model.
    Generate(GenerateArgs),
    /// Train the two-tower interaction model on a dataset.
    Train(TrainArgs),
    /// Run the full pipeline: scores -> binarize -> augment -> identify.
    Detect(DetectArgs),
    /// Multi-seed training sweep comparing binarization methods.
    Sweep(SweepArgs),
    /// Render a sweep summary.csv as an aligned table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Model spec JSON file; omit for the built-in default model.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of samples to draw.
    #[arg(long, default_value_t = 10_000)]
    length: usize,
    /// Root seed override (also via RCL_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Output model JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    latent: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Model init seed (also via RCL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Append per-epoch metrics to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run identifier recorded in the trace CSV.
    #[arg(long, default_value_t = 0)]
    run_id: u64,
}

#[derive(Args)]
struct DetectArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Trained model JSON; omit to train fresh.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Epochs for the fresh training run when no model is given.
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Model seed for fresh training (also via RCL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Binarizer: sparsemax | threshold:<t> | topk:<k> | quantile:<q>.
    #[arg(long, default_value = "sparsemax")]
    binarizer: String,
    /// Exclude the self-similarity diagonal from the sparsemax projection.
    #[arg(long)]
    mask_diagonal: bool,
    /// Longest mediated path searched for implicit conflicts.
    #[arg(long, default_value_t = 2)]
    max_path_len: usize,
    /// Score conflicts by (kind, agent pair) only instead of full witnesses.
    #[arg(long)]
    match_pairs: bool,
    /// Output directory for score/adjacency/conflict CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    /// Root dataset seed (also via RCL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated binarizers; `threshold:tuned`, `quantile:tuned`,
    /// `topk:auto` are resolved against the model.
    #[arg(long)]
    binarizers: Option<String>,
    /// Output directory for sweep.csv and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel runs (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Path to a summary.csv produced by `sweep`.
    #[arg(long)]
    summary: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

/// RCL_SEED env var takes precedence over flags and config files.
fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("RCL_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| config_err(format!("RCL_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_spec(path: Option<&Path>) -> Result<ConflictModelSpec, CliError> {
    let spec = match path {
        None => rcl_core::datagen::default_topology(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read spec file {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| config_err(format!("spec file {}: {e}", p.display())))?
        }
    };
    spec.validate()
        .map_err(|e| config_err(format!("invalid model spec: {e}")))?;
    Ok(spec)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    read_dataset(dir).map_err(|e| config_err(format!("dataset {}: {e}", dir.display())))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut spec = load_spec(args.spec.as_deref())?;
    if let Some(seed) = env_seed()?.or(args.seed) {
        spec.seed = seed;
    }
    let ds = generate(&spec, args.length).map_err(runtime_err)?;
    write_dataset(&ds, &args.out).map_err(runtime_err)?;
    let d = ds.dims();
    let density = ds.labels.count_ones() as f64 / (d.n_params * d.n_kpis) as f64;
    println!(
        "wrote {} ({} agents, {} parameters, {} KPIs, {} samples, label density {density:.3})",
        args.out.display(),
        d.n_agents,
        d.n_params,
        d.n_kpis,
        ds.len(),
    );
    Ok(())
}

fn hp_from_train_args(args: &TrainArgs) -> Result<Hyperparams, CliError> {
    let mut hp = Hyperparams {
        latent_dim: args.latent,
        hidden: args.hidden,
        learning_rate: args.lr,
        epochs: args.epochs,
        ..Default::default()
    };
    if let Some(seed) = env_seed()?.or(args.seed) {
        hp.seed = seed;
    }
    hp.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(hp)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.dataset)?;
    let hp = hp_from_train_args(&args)?;
    let (params, trace) = train(&ds, &hp).map_err(runtime_err)?;
    save_model(&params, &args.out).map_err(runtime_err)?;
    if let Some(trace_path) = &args.trace {
        append_trace_csv(trace_path, args.run_id, &trace).map_err(runtime_err)?;
    }
    match trace.records.last() {
        Some(last) => println!(
            "trained {} epochs: loss {:.6}, accuracy {:.3}, auc {} -> {}",
            last.epoch,
            last.loss,
            last.accuracy,
            last.auc
                .map(|a| format!("{a:.3}"))
                .unwrap_or_else(|| "-".into()),
            args.out.display(),
        ),
        None => println!(
            "trained 0 epochs (initialized model) -> {}",
            args.out.display()
        ),
    }
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.dataset)?;
    let method: BinarizationMethod = args
        .binarizer
        .parse()
        .map_err(|e: rcl_core::Error| config_err(e.to_string()))?;
    if args.max_path_len < 2 {
        return Err(config_err("--max-path-len must be >= 2"));
    }

    let params = match &args.model {
        Some(path) => {
            load_model(path).map_err(|e| config_err(format!("model {}: {e}", path.display())))?
        }
        None => {
            let mut hp = Hyperparams {
                epochs: args.epochs,
                ..Default::default()
            };
            if let Some(seed) = env_seed()?.or(args.seed) {
                hp.seed = seed;
            }
            train(&ds, &hp).map_err(runtime_err)?.0
        }
    };

    let emb = embed_dataset(&ds, &params).map_err(runtime_err)?;
    let scores = full_score_matrix(&emb, params.log_alpha, ds.dims()).map_err(runtime_err)?;
    let opts = BinarizeOptions {
        mask_diagonal: args.mask_diagonal,
    };
    let learned = binarize_with(&scores, method, opts).map_err(runtime_err)?;
    let full = boxplus_augment(&learned, &ds.known, ds.dims()).map_err(runtime_err)?;
    let identify_opts = IdentifyOptions {
        max_path_len: args.max_path_len,
    };
    let conflicts = identify_conflicts_opts(&full, identify_opts).map_err(runtime_err)?;

    write_string(&args.out.join("scores.csv"), &score_matrix_csv(&scores)).map_err(runtime_err)?;
    write_string(
        &args.out.join("learned.csv"),
        &learned_adjacency_csv(&learned, ds.dims()),
    )
    .map_err(runtime_err)?;
    write_string(&args.out.join("full.csv"), &full_adjacency_csv(&full)).map_err(runtime_err)?;
    write_string(&args.out.join("conflicts.csv"), &conflicts.to_csv()).map_err(runtime_err)?;

    let truth_conflicts = ground_truth_conflicts(&ds.spec).map_err(runtime_err)?;
    let (_, _, f1_graph) = graph_f1(&learned, &ds.truth_learned).map_err(runtime_err)?;
    let score_conflicts = if args.match_pairs {
        conflict_f1_agent_pairs
    } else {
        conflict_f1
    };
    let (_, _, f1_ind) =
        score_conflicts(&conflicts, &truth_conflicts, Some(ConflictKind::Indirect));
    let (_, _, f1_imp) =
        score_conflicts(&conflicts, &truth_conflicts, Some(ConflictKind::Implicit));

    println!(
        "{} conflicts ({} direct, {} indirect, {} implicit) -> {}",
        conflicts.len(),
        conflicts.count_kind(ConflictKind::Direct),
        conflicts.count_kind(ConflictKind::Indirect),
        conflicts.count_kind(ConflictKind::Implicit),
        args.out.display(),
    );
    println!("graph F1 {f1_graph:.3}, indirect F1 {f1_ind:.3}, implicit F1 {f1_imp:.3}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| config_err(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(runs) = args.runs {
        cfg.n_runs = runs;
    }
    if let Some(epochs) = args.epochs {
        cfg.hp.epochs = epochs;
    }
    if let Some(length) = args.length {
        cfg.length = length;
    }
    if let Some(b) = &args.binarizers {
        cfg.binarizers = b.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let mut spec = cfg.spec.resolve().map_err(config_err)?;
    if let Some(seed) = env_seed()?.or(args.seed) {
        spec.seed = seed;
        cfg.spec = SpecSource::Inline(Box::new(spec.clone()));
    }
    spec.validate()
        .map_err(|e| config_err(format!("invalid model spec: {e}")))?;
    cfg.hp.validate().map_err(|e| config_err(e.to_string()))?;
    if cfg.n_runs == 0 {
        return Err(config_err("n_runs must be >= 1"));
    }

    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| config_err(format!("cannot configure {jobs} worker threads: {e}")))?;
    }

    let binarizers = cfg.resolve_binarizers(&spec).map_err(config_err)?;
    println!(
        "sweep: {} runs x {} epochs, L = {}, binarizers: {}",
        cfg.n_runs,
        cfg.hp.epochs,
        cfg.length,
        binarizers
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    );

    let sweep_cfg = SweepConfig {
        spec,
        hp: cfg.hp.clone(),
        length: cfg.length,
        n_runs: cfg.n_runs,
        binarizers,
        f1_target: cfg.targets.f1,
    };
    let result = run_sweep(&sweep_cfg).map_err(runtime_err)?;
    eval::write_sweep_outputs(&result, &cfg.output_dir).map_err(runtime_err)?;
    for (run, msg) in &result.failures {
        eprintln!("run {run}: {msg}");
    }

    // Epochs to the accuracy/AUC targets, summarized across runs.
    let mut reached: Vec<f64> = (0..result.n_runs)
        .filter_map(|r| result.epochs_to_model_targets(r, cfg.targets.accuracy, cfg.targets.auc))
        .map(|e| e as f64)
        .collect();
    reached.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if reached.is_empty() {
        println!(
            "accuracy >= {} and auc >= {}: never reached",
            cfg.targets.accuracy, cfg.targets.auc
        );
    } else {
        println!(
            "accuracy >= {} and auc >= {}: median {} epochs ({}/{} runs)",
            cfg.targets.accuracy,
            cfg.targets.auc,
            rcl_core::binarize::quantile_linear(&reached, 0.5),
            reached.len(),
            result.n_runs,
        );
    }

    let summary_path = cfg.output_dir.join("summary.csv");
    let table = eval::render_summary_table(&eval::summary_csv(&result)).map_err(runtime_err)?;
    println!("{table}");
    println!(
        "wrote {} and {}",
        cfg.output_dir.join("sweep.csv").display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.summary)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.summary.display())))?;
    let table = eval::render_summary_table(&text).map_err(|e| config_err(e.to_string()))?;
    print!("{table}");
    Ok(())
}
