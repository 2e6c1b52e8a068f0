mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use decent::data::io::{load_dataset, DatasetFiles};
use decent::data::validate::validate_dataset;
use decent::data::{Dataset, EntityKind, SECONDS_PER_DAY};
use decent::eval::{
    build_task_dataset, cross_validate, dispersion, load_outcomes, write_cv_reports, write_dispersion, Grouping,
    Metric, Task, Trajectory,
};
use decent::static_embed::{DomainGraphs, StaticMode};
use decent::synthgen::{generate, write_bundle};
use decent::training::gradcheck::{self, DEFAULT_STEP, DEFAULT_TOLERANCE};
use decent::training::{write_history, write_pretrain_history, Checkpoint, Prepared, TrainProgress, Trainer};
use decent::{Error, Exec};

use config::RunConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_INFEASIBLE: u8 = 5;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const PRETRAIN_HISTORY_FILE: &str = "pretrain_history.csv";
pub const FINAL_EMBEDDINGS_FILE: &str = "embeddings_final.csv";

#[derive(Parser)]
#[command(name = "decent", version, about = "Co-evolving embeddings of healthcare entities")]
struct Cli {
    /// Worker threads; 1 is the sequential reference mode, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log progress (repeat for debug output). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hospital dataset with planted cohorts.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a dataset directory for consistency.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Pretrain each interaction module, then train jointly.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_static_mode)]
        static_mode: Option<StaticMode>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Continue joint training from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Replay the log with trained parameters and export embeddings.
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export one snapshot of every entity at this time (seconds)
        /// instead of the full trajectory.
        #[arg(long)]
        at: Option<f64>,
    },
    /// Cross-validate a downstream task on trained embeddings.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Outcome labels; defaults to outcomes.csv in the data directory.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        /// Shuffle labels before cross-validation (null control).
        #[arg(long)]
        shuffle_labels: bool,
    },
    /// Pairwise dispersion between groups of one entity kind at time t.
    Dispersion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV `entity_id,group`; defaults to doctor specialties.
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Time in seconds.
        #[arg(long, conflicts_with = "day", required_unless_present = "day")]
        time: Option<f64>,
        /// Time as a day offset.
        #[arg(long)]
        day: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on random
    /// small models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// List the accepted config keys.
    Keys,
}

fn parse_static_mode(s: &str) -> Result<StaticMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fail(code: u8, message: impl fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

/// Divergence and infeasibility keep their codes wherever they surface.
fn classify(e: Error, default: u8) -> Failure {
    let code = match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => default,
    };
    fail(code, e)
}

fn usage(e: Error) -> Failure {
    classify(e, EXIT_USAGE)
}

fn data_err(e: Error) -> Failure {
    classify(e, EXIT_DATA)
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn resolve(args: &ConfigArgs, flags: &[(&str, Option<String>)]) -> CliResult<RunConfig> {
    let mut pairs = match &args.config {
        Some(p) => config::read_file(p).map_err(|e| fail(EXIT_USAGE, e))?,
        None => Vec::new(),
    };
    for s in &args.set {
        pairs.push(config::parse_assignment(s).map_err(|e| fail(EXIT_USAGE, e))?);
    }
    if let Some(seed) = args.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    for (k, v) in flags {
        if let Some(v) = v {
            pairs.push((k.to_string(), v.clone()));
        }
    }
    RunConfig::from_pairs(&pairs).map_err(|e| fail(EXIT_USAGE, e))
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn required(p: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    p.ok_or_else(|| fail(EXIT_USAGE, format!("missing {what} (flag or config key)")))
}

/// Loads and validates a dataset; any problem is a data error.
fn load_valid(dir: &Path) -> CliResult<Dataset> {
    let ds = load_dataset(dir).map_err(data_err)?;
    let graphs = DomainGraphs::from_dataset(&ds).map_err(data_err)?;
    let report = validate_dataset(
        &ds.populations,
        &ds.log,
        &ds.features,
        &[&graphs.doctor, &graphs.medication, &graphs.room],
    );
    if !report.is_empty() {
        return Err(fail(EXIT_DATA, format!("{}: dataset is inconsistent:\n{report}", dir.display())));
    }
    Ok(ds)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(data_err)
}

/// Prepares `ds` with the settings the checkpoint was trained with.
fn prepare_for(ds: &Dataset, ck: &Checkpoint, exec: &Exec) -> CliResult<Prepared> {
    let prep = Prepared::new(ds, ck.dims.d_dyn, ck.static_spec, exec).map_err(data_err)?;
    if prep.dims != ck.dims {
        return Err(fail(
            EXIT_DATA,
            format!("checkpoint dimensions {:?} do not match the dataset {:?}", ck.dims, prep.dims),
        ));
    }
    Ok(prep)
}

fn cmd_generate(cfg: ConfigArgs, preset: Option<String>, out: Option<PathBuf>) -> CliResult {
    let run = resolve(&cfg, &[("preset", preset), ("out", path_str(&out))])?;
    let out = required(run.out, "output directory (--out)")?;
    let bundle = generate(&run.synth).map_err(usage)?;
    write_bundle(&out, &bundle).map_err(|e| classify(e, 1))?;
    println!(
        "wrote {} interactions for {} patients to {}",
        bundle.dataset.log.len(),
        bundle.dataset.populations.patients,
        out.display()
    );
    Ok(())
}

fn cmd_validate(data: PathBuf) -> CliResult {
    let ds = load_valid(&data)?;
    let outcomes = DatasetFiles::in_dir(&data).outcomes;
    if outcomes.exists() {
        let table = load_outcomes(&outcomes).map_err(data_err)?;
        println!("{} outcome rows", table.len());
    }
    let c = ds.log.counts();
    println!(
        "dataset is consistent: {} events (physician {}, medication {}, transfer {})",
        ds.log.len(),
        c[0],
        c[1],
        c[2]
    );
    Ok(())
}

struct TrainArgs {
    cfg: ConfigArgs,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    static_mode: Option<StaticMode>,
    max_epochs: Option<usize>,
    resume: Option<PathBuf>,
}

fn cmd_train(a: TrainArgs, exec: &Exec) -> CliResult {
    let run = resolve(
        &a.cfg,
        &[
            ("data", path_str(&a.data)),
            ("out", path_str(&a.out)),
            ("static_mode", a.static_mode.map(|m| m.as_str().to_string())),
            ("max_epochs", a.max_epochs.map(|n| n.to_string())),
        ],
    )?;
    let data = required(run.data.clone(), "data directory (--data)")?;
    let out = required(run.out.clone(), "output directory (--out)")?;
    let mut tcfg = run.train;
    tcfg.validate().map_err(usage)?;
    let ds = load_valid(&data)?;

    let resumed = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.static_spec != tcfg.static_spec || ck.dims.d_dyn != tcfg.d_dyn {
                log::warn!("resuming with the static settings and dimension stored in {}", p.display());
                tcfg.static_spec = ck.static_spec;
                tcfg.d_dyn = ck.dims.d_dyn;
            }
            Some(ck)
        }
        None => None,
    };
    let prep = Prepared::new(&ds, tcfg.d_dyn, tcfg.static_spec, exec).map_err(data_err)?;
    let trainer = Trainer::new(&prep, &tcfg, exec).map_err(usage)?;
    std::fs::create_dir_all(&out).map_err(|e| fail(1, format!("{}: {e}", out.display())))?;
    let ck_path = out.join(CHECKPOINT_FILE);

    let every = run.checkpoint_every;
    let on_epoch = |p: &TrainProgress, _: &decent::training::EpochLoss| {
        if every > 0 && p.epoch.is_multiple_of(every) {
            p.checkpoint(&prep).save(&ck_path)?;
        }
        Ok(())
    };
    let (pretrain, train) = match resumed {
        Some(ck) => {
            let progress = TrainProgress::from_checkpoint(ck, &prep).map_err(data_err)?;
            (None, trainer.train(progress, on_epoch).map_err(|e| classify(e, 1))?)
        }
        None => {
            let fit = trainer.fit(on_epoch).map_err(|e| classify(e, 1))?;
            (Some(fit.pretrain), fit.train)
        }
    };

    let io = |e: Error| classify(e, 1);
    train.progress.checkpoint(&prep).save(&ck_path).map_err(io)?;
    write_history(out.join(HISTORY_FILE), &train.history).map_err(io)?;
    if let Some(pre) = &pretrain {
        write_pretrain_history(out.join(PRETRAIN_HISTORY_FILE), pre).map_err(io)?;
    }
    train.final_state.write_csv(out.join(FINAL_EMBEDDINGS_FILE)).map_err(io)?;

    let h = &train.history;
    match (h.first(), h.last()) {
        (Some(f), Some(l)) => println!(
            "trained {} epochs (to epoch {}{}): loss {:.6e} -> {:.6e}",
            h.len(),
            train.progress.epoch,
            if train.stopped_early { ", early stop" } else { "" },
            f.total(),
            l.total()
        ),
        _ => println!("no epochs run; checkpoint at epoch {}", train.progress.epoch),
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn replay(data: &Path, checkpoint: &Path, exec: &Exec) -> CliResult<(Dataset, Prepared, Checkpoint, Trajectory)> {
    let ds = load_valid(data)?;
    let ck = load_checkpoint(checkpoint)?;
    let prep = prepare_for(&ds, &ck, exec)?;
    let traj = Trajectory::replay(&prep, &ck.params, exec).map_err(|e| classify(e, 1))?;
    Ok((ds, prep, ck, traj))
}

fn cmd_embed(data: PathBuf, checkpoint: PathBuf, out: PathBuf, at: Option<f64>, exec: &Exec) -> CliResult {
    let (ds, prep, _, traj) = replay(&data, &checkpoint, exec)?;
    let io = |e: Error| classify(e, 1);
    match at {
        None => traj.write_csv(&out).map_err(io)?,
        Some(t) => {
            let mut snap = prep.zero_state();
            for kind in EntityKind::ALL {
                for i in 0..ds.populations.count(kind) {
                    let e = traj.embedding_at(kind, i, t).map_err(io)?;
                    snap.set(kind, i, &e, t);
                }
            }
            snap.write_csv(&out).map_err(io)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

struct EvalArgs {
    cfg: ConfigArgs,
    data: PathBuf,
    checkpoint: PathBuf,
    task: Task,
    out: Option<PathBuf>,
    outcomes: Option<PathBuf>,
    shuffle_labels: bool,
}

fn cmd_evaluate(a: EvalArgs, exec: &Exec) -> CliResult {
    let run = resolve(&a.cfg, &[])?;
    let outcomes_path = a.outcomes.clone().unwrap_or_else(|| DatasetFiles::in_dir(&a.data).outcomes);
    let (_, _, _, traj) = replay(&a.data, &a.checkpoint, exec)?;
    let outcomes = load_outcomes(&outcomes_path).map_err(data_err)?;
    let mut ds = build_task_dataset(a.task, &outcomes, &traj, run.seed).map_err(data_err)?;
    if a.shuffle_labels {
        ds = ds.shuffled_labels(run.seed ^ 0x5eed);
    }
    let metric = Metric::for_task(a.task);
    let report = cross_validate(&ds, &run.cv, metric, exec).map_err(data_err)?;
    for v in report.protocol_violations() {
        log::warn!("protocol: {v}");
    }
    println!(
        "{} {}: {:.4} ± {:.4} over {} repetitions x {} folds (class counts {:?})",
        a.task,
        metric.as_str(),
        report.mean,
        report.std,
        report.repetitions,
        report.folds,
        report.class_counts
    );
    if let Some(out) = &a.out {
        write_cv_reports(out, std::slice::from_ref(&report)).map_err(|e| classify(e, 1))?;
    }
    Ok(())
}

struct DispersionArgs {
    data: PathBuf,
    checkpoint: PathBuf,
    groups: Option<PathBuf>,
    time: Option<f64>,
    day: Option<f64>,
    out: PathBuf,
}

fn cmd_dispersion(a: DispersionArgs, exec: &Exec) -> CliResult {
    let t = match (a.time, a.day) {
        (Some(t), _) => t,
        (None, Some(d)) => d * SECONDS_PER_DAY,
        (None, None) => return Err(fail(EXIT_USAGE, "one of --time or --day is required")),
    };
    let ds = load_valid(&a.data)?;
    let grouping = match &a.groups {
        Some(p) => Grouping::load(p, |k| ds.populations.count(k)).map_err(usage)?,
        None => Grouping::from_labels(EntityKind::Doctor, &ds.doctor_specialties, ds.populations.doctors)
            .map_err(usage)?,
    };
    let ck = load_checkpoint(&a.checkpoint)?;
    let prep = prepare_for(&ds, &ck, exec)?;
    let traj = Trajectory::replay(&prep, &ck.params, exec).map_err(|e| classify(e, 1))?;
    let io = |e: Error| classify(e, 1);
    let mut names = Vec::new();
    let mut groups = Vec::new();
    for (name, members) in &grouping.groups {
        names.push(name.clone());
        groups.push(
            members
                .iter()
                .map(|&i| traj.embedding_at(grouping.kind, i, t))
                .collect::<decent::Result<Vec<_>>>()
                .map_err(io)?,
        );
    }
    let matrix = dispersion(&groups).map_err(usage)?;
    write_dispersion(&a.out, &names, &matrix).map_err(io)?;
    for (name, row) in names.iter().zip(&matrix) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("{name}: {}", cells.join(" "));
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, cases: usize, step: f64, tolerance: f64, corrupt: bool, exec: &Exec) -> CliResult {
    let report = gradcheck::run(cases, seed, step, tolerance, corrupt, exec).map_err(usage)?;
    println!("max relative error: {:.6e}", report.max_rel_error());
    if report.passed() {
        println!("gradient check passed ({cases} cases, tolerance {tolerance:e})");
        Ok(())
    } else {
        Err(fail(
            EXIT_DIVERGENCE,
            format!("gradient check failed: tolerance {tolerance:e}"),
        ))
    }
}

fn cmd_keys() -> CliResult {
    use std::io::Write;
    let w = config::KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = std::io::stdout().lock();
    for (k, doc) in config::KEYS {
        // a closed pipe (`decent keys | head`) is not an error
        if writeln!(out, "{k:w$}  {doc}").is_err() {
            break;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let exec = Exec::with_threads(cli.threads);
    match cli.command {
        Command::Generate { cfg, preset, out } => cmd_generate(cfg, preset, out),
        Command::Validate { data } => cmd_validate(data),
        Command::Train {
            cfg,
            data,
            out,
            static_mode,
            max_epochs,
            resume,
        } => cmd_train(
            TrainArgs {
                cfg,
                data,
                out,
                static_mode,
                max_epochs,
                resume,
            },
            &exec,
        ),
        Command::Embed { data, checkpoint, out, at } => cmd_embed(data, checkpoint, out, at, &exec),
        Command::Evaluate {
            cfg,
            data,
            checkpoint,
            task,
            out,
            outcomes,
            shuffle_labels,
        } => cmd_evaluate(
            EvalArgs {
                cfg,
                data,
                checkpoint,
                task,
                out,
                outcomes,
                shuffle_labels,
            },
            &exec,
        ),
        Command::Dispersion {
            data,
            checkpoint,
            groups,
            time,
            day,
            out,
        } => cmd_dispersion(
            DispersionArgs {
                data,
                checkpoint,
                groups,
                time,
                day,
                out,
            },
            &exec,
        ),
        Command::Gradcheck {
            seed,
            cases,
            step,
            tolerance,
            corrupt,
        } => cmd_gradcheck(seed, cases, step, tolerance, corrupt, &exec),
        Command::Keys => cmd_keys(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
