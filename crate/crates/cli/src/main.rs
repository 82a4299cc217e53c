//! `mmc` — experiment orchestration for the two-modality detector:
//! dataset synthesis, training every variant, evaluation, corruption
//! sweeps, targeted hiding attacks, and cross-run report joins.
//!
//! Settings flow defaults → `--config` file → `KEY=VALUE` overrides →
//! dedicated flags. Exit codes: 0 success, 2 usage error, 1 runtime error.

mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmc_core::config::{Config, ExperimentConfig};
use mmc_core::data::{build_dataset, load_split, manifest_hash, Sample, Split};
use mmc_core::eval::{evaluate, report_to_csv};
use mmc_core::robust::{attack_sweep, attack_to_csv, corruption_sweep, epsilon_grid, sweep_to_csv};
use mmc_core::train::{train, Model, Variant};

use manifest::{RunManifest, CONFIG_SNAPSHOT};

#[derive(Parser)]
#[command(
    name = "mmc",
    version,
    about = "Two-modality detection workbench: synthesize data, train variants, evaluate, stress-test",
    after_help = "Settings flow defaults -> --config file -> KEY=VALUE overrides -> dedicated flags.\n\
                  Config files are plaintext: [section] headers over `key = value` lines; unknown keys are errors.\n\
                  Sections/keys mirror the config schema: [train], [loss], [augment], [encoder], [data].\n\
                  Exit codes: 0 success, 2 usage error, 1 runtime error."
)]
struct Cli {
    /// Plaintext config file ([section] headers, one `key = value` per line)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Shorthand that sets train.seed and data.seed together
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving this run's artifacts (most commands print to
    /// stdout without it; synth and train require it)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the paired visual/thermal dataset
    Synth(SynthArgs),
    /// Train one variant; writes checkpoints, loss log, and manifest
    Train(TrainArgs),
    /// Score a trained checkpoint on the test split
    Eval(EvalArgs),
    /// Evaluate under each of the fifteen corruptions at one severity
    Corrupt(CorruptArgs),
    /// Targeted hiding attack swept over an epsilon grid
    Attack(AttackArgs),
    /// Join per-run eval CSVs into one variant-by-split table
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Training-split size
    #[arg(long)]
    n_train: Option<usize>,
    /// Test-split size
    #[arg(long)]
    n_test: Option<usize>,
    /// Fraction of each split generated as day scenes
    #[arg(long)]
    day_fraction: Option<f64>,
    /// section.key=value overrides (applied after --config)
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training variant (rgb, thermal, combined, input_fusion,
    /// feature_fusion, style_aug, mmc, mmc_recon, mmc_crossrecon)
    #[arg(long)]
    variant: Option<String>,
    /// Dataset directory produced by `synth`
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// section.key=value overrides (applied after --config)
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Where a scoring command finds its model and data: either a run
/// directory's manifest, or explicit --ckpt/--data (config then defaults
/// to <ckpt>/config.txt when present).
#[derive(Args)]
struct SourceArgs {
    /// Train-run directory or manifest file to reproduce from
    #[arg(long, value_name = "PATH", conflicts_with_all = ["ckpt", "data"])]
    manifest: Option<PathBuf>,
    /// Checkpoint directory (a train run directory)
    #[arg(long, value_name = "DIR")]
    ckpt: Option<PathBuf>,
    /// Dataset directory (from `synth`)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Split rows to emit: all (every split), day, or night
    #[arg(long, default_value = "all")]
    split: String,
    /// section.key=value overrides (applied after --config)
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Corruption severity, 1..=5
    #[arg(long, default_value_t = 3)]
    severity: u8,
    /// section.key=value overrides (applied after --config)
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Class id whose instances the attack hides (1-based)
    #[arg(long, default_value_t = 1)]
    hide: usize,
    /// Comma-separated epsilon values in units of 1/255 (default 0,1,2,4,8,16)
    #[arg(long, value_name = "LIST")]
    eps_grid: Option<String>,
    /// section.key=value overrides (applied after --config)
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// eval CSV files to join
    #[arg(required = true, value_name = "CSV")]
    inputs: Vec<PathBuf>,
}

/// A failed run, split by exit-code class: usage errors are mistakes in
/// the invocation itself; everything that goes wrong after a well-formed
/// command line is a runtime error.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mmc_core::MmcError> for Failure {
    fn from(e: mmc_core::MmcError) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive as non-error "failures"; real parse
            // errors (unknown flag/subcommand, bad value) exit 2.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Synth(args) => cmd_synth(cli, args),
        Cmd::Train(args) => cmd_train(cli, args),
        Cmd::Eval(args) => cmd_eval(cli, args),
        Cmd::Corrupt(args) => cmd_corrupt(cli, args),
        Cmd::Attack(args) => cmd_attack(cli, args),
        Cmd::Report(args) => cmd_report(cli, args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Base config: the --config file when given, else empty (all defaults).
fn base_config(cli: &Cli) -> Result<Config, Failure> {
    match &cli.config {
        Some(path) => Ok(Config::from_file(path)?),
        None => Ok(Config::empty()),
    }
}

/// Apply positional KEY=VALUE overrides; malformed ones are usage errors.
fn apply_sets(cfg: &mut Config, set: &[String]) -> Result<(), Failure> {
    for s in set {
        cfg.set(s).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

/// --seed is shorthand for both seed keys.
fn apply_seed(cfg: &mut Config, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.set(&format!("train.seed={s}")).expect("well-formed");
        cfg.set(&format!("data.seed={s}")).expect("well-formed");
    }
}

fn require_out(cli: &Cli, cmd: &str) -> Result<PathBuf, Failure> {
    cli.out
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{cmd} requires --out <DIR>")))
}

/// Deterministic run identity: a pure function of the effective config, so
/// repeated runs of one recipe produce byte-identical CSV rows.
fn run_id_of(exp: &ExperimentConfig) -> String {
    format!("{}-seed{}", exp.train.variant, exp.train.seed)
}

fn canonical(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Write `content` to `<out>/<file_name>` when --out is given, else stdout.
fn emit(cli: &Cli, file_name: &str, content: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(mmc_core::MmcError::from)?;
            let path = dir.join(file_name);
            fs::write(&path, content).map_err(mmc_core::MmcError::from)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn write_snapshot(dir: &Path, exp: &ExperimentConfig) -> Result<String, Failure> {
    let text = exp.to_text();
    fs::create_dir_all(dir).map_err(mmc_core::MmcError::from)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), &text).map_err(mmc_core::MmcError::from)?;
    Ok(manifest::sha256_hex(text.as_bytes()))
}

/// Everything a scoring command needs, resolved from either source form.
struct RunInputs {
    exp: ExperimentConfig,
    model: Model,
    samples: Vec<Sample>,
    run_id: String,
}

fn load_run(cli: &Cli, src: &SourceArgs, set: &[String]) -> Result<RunInputs, Failure> {
    let (mut cfg, ckpt_dir, data_dir, run_id) = if let Some(m) = &src.manifest {
        let (man, dir) = RunManifest::read(m)?;
        let snapshot = dir.join(&man.config_file);
        let text = fs::read_to_string(&snapshot).map_err(|e| {
            Failure::Runtime(format!("cannot read {}: {e}", snapshot.display()))
        })?;
        if manifest::sha256_hex(text.as_bytes()) != man.config_sha256 {
            return Err(Failure::Runtime(format!(
                "config snapshot {} does not match the manifest's hash",
                snapshot.display()
            )));
        }
        let got = manifest_hash(&man.dataset)?;
        if got != man.dataset_hash {
            return Err(Failure::Runtime(format!(
                "dataset {} changed since the run (hash mismatch)",
                man.dataset.display()
            )));
        }
        (
            Config::parse(&text)?,
            dir,
            man.dataset.clone(),
            Some(man.run_id),
        )
    } else {
        let ckpt = src.ckpt.clone().ok_or_else(|| {
            Failure::Usage("either --manifest or both --ckpt and --data are required".into())
        })?;
        let data = src.data.clone().ok_or_else(|| {
            Failure::Usage("either --manifest or both --ckpt and --data are required".into())
        })?;
        // Without --config, a run directory's own snapshot is the natural
        // source of the model hyperparameters.
        let cfg = match &cli.config {
            Some(path) => Config::from_file(path)?,
            None => {
                let snapshot = ckpt.join(CONFIG_SNAPSHOT);
                if snapshot.is_file() {
                    Config::from_file(&snapshot)?
                } else {
                    Config::empty()
                }
            }
        };
        (cfg, ckpt, data, None)
    };
    apply_sets(&mut cfg, set)?;
    apply_seed(&mut cfg, cli.seed);
    let exp = cfg.resolve()?;
    let model = Model::load(
        exp.train.variant,
        &exp.train.encoder,
        exp.train.weights.n_cls,
        &ckpt_dir,
    )?;
    let samples = load_split(&data_dir, Split::Test)?;
    let run_id = run_id.unwrap_or_else(|| run_id_of(&exp));
    Ok(RunInputs {
        exp,
        model,
        samples,
        run_id,
    })
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let out = require_out(cli, "synth")?;
    let mut cfg = base_config(cli)?;
    apply_sets(&mut cfg, &args.set)?;
    if let Some(v) = args.n_train {
        cfg.set(&format!("data.n_train={v}")).expect("well-formed");
    }
    if let Some(v) = args.n_test {
        cfg.set(&format!("data.n_test={v}")).expect("well-formed");
    }
    if let Some(v) = args.day_fraction {
        cfg.set(&format!("data.day_fraction={v}")).expect("well-formed");
    }
    apply_seed(&mut cfg, cli.seed);
    let exp = cfg.resolve()?;
    build_dataset(&out, &exp.data)?;
    let sha = write_snapshot(&out, &exp)?;
    RunManifest {
        run_id: format!("synth-seed{}", exp.data.seed),
        version: manifest::tool_version(),
        created_unix: manifest::now_unix(),
        variant: "none".into(),
        dataset: canonical(&out),
        dataset_hash: manifest_hash(&out)?,
        checkpoints: vec![],
        config_file: CONFIG_SNAPSHOT.into(),
        config_sha256: sha,
    }
    .write(&out)?;
    eprintln!(
        "synthesized {} train + {} test samples in {}",
        exp.data.n_train,
        exp.data.n_test,
        out.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), Failure> {
    let out = require_out(cli, "train")?;
    let mut cfg = base_config(cli)?;
    apply_sets(&mut cfg, &args.set)?;
    if let Some(v) = &args.variant {
        // Validate eagerly so a typo'd variant is a usage error.
        v.parse::<Variant>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        cfg.set(&format!("train.variant={v}")).expect("well-formed");
    }
    apply_seed(&mut cfg, cli.seed);
    let exp = cfg.resolve()?;
    let samples = load_split(&args.data, Split::Train)?;
    let outcome = train(&exp.train, &samples, Some(&out))?;
    let sha = write_snapshot(&out, &exp)?;
    let checkpoints = outcome
        .model
        .param_groups()
        .iter()
        .map(|(g, _)| format!("{g}.mmck"))
        .collect();
    RunManifest {
        run_id: run_id_of(&exp),
        version: manifest::tool_version(),
        created_unix: manifest::now_unix(),
        variant: exp.train.variant.to_string(),
        dataset: canonical(&args.data),
        dataset_hash: manifest_hash(&args.data)?,
        checkpoints,
        config_file: CONFIG_SNAPSHOT.into(),
        config_sha256: sha,
    }
    .write(&out)?;
    let last = outcome.log.last().expect("steps >= 1 yields a log row");
    eprintln!(
        "trained {} for {} steps (final total loss {:.4}); artifacts in {}",
        exp.train.variant,
        exp.train.steps,
        last.total,
        out.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    if !["all", "day", "night"].contains(&args.split.as_str()) {
        return Err(Failure::Usage(format!(
            "--split must be all, day, or night, got '{}'",
            args.split
        )));
    }
    let run = load_run(cli, &args.source, &args.set)?;
    let mut rep = evaluate(&run.model, &run.samples, run.exp.train.weights.n_cls)?;
    if args.split != "all" {
        rep.splits.retain(|s| s.split == args.split);
    }
    let csv = report_to_csv(&run.run_id, run.exp.train.variant.as_str(), &rep);
    emit(cli, "eval.csv", &csv)
}

fn cmd_corrupt(cli: &Cli, args: &CorruptArgs) -> Result<(), Failure> {
    if !(1..=5).contains(&args.severity) {
        return Err(Failure::Usage(format!(
            "--severity must lie in 1..=5, got {}",
            args.severity
        )));
    }
    let run = load_run(cli, &args.source, &args.set)?;
    let rows = corruption_sweep(
        &run.model,
        &run.samples,
        args.severity,
        run.exp.train.weights.n_cls,
        run.exp.train.seed,
    )?;
    emit(cli, "corrupt.csv", &sweep_to_csv(&run.run_id, args.severity, &rows))
}

fn cmd_attack(cli: &Cli, args: &AttackArgs) -> Result<(), Failure> {
    let eps = match &args.eps_grid {
        None => {
            let mut v = vec![0.0f32];
            v.extend(epsilon_grid());
            v
        }
        Some(list) => parse_eps_grid(list)?,
    };
    let run = load_run(cli, &args.source, &args.set)?;
    let n_cls = run.exp.train.weights.n_cls;
    if args.hide == 0 || args.hide > n_cls {
        return Err(Failure::Usage(format!(
            "--hide must name a class id in 1..={n_cls}, got {}",
            args.hide
        )));
    }
    let rows = attack_sweep(
        &run.model,
        &run.samples,
        args.hide,
        &eps,
        &run.exp.train.weights,
        n_cls,
    )?;
    emit(cli, "attack.csv", &attack_to_csv(&run.run_id, &rows))
}

/// "0,1,2,4,8,16" in 1/255 units → pixel-scale epsilons.
fn parse_eps_grid(list: &str) -> Result<Vec<f32>, Failure> {
    let mut out = Vec::new();
    for part in list.split(',') {
        let v: f32 = part.trim().parse().map_err(|_| {
            Failure::Usage(format!("--eps-grid: '{part}' is not a number"))
        })?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Failure::Usage(format!(
                "--eps-grid values must be >= 0, got {v}"
            )));
        }
        out.push(v / 255.0);
    }
    if out.is_empty() {
        return Err(Failure::Usage("--eps-grid must list at least one value".into()));
    }
    Ok(out)
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<(), Failure> {
    let table = report::join(&args.inputs)?;
    emit(cli, "report.csv", &table)
}
