//! Command-line front end: dataset generation, expert planning, policy
//! training, evaluation and report aggregation.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 3 on a data error.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use motion_forge::dataset::{
    balanced_kind, generate_problem, plan_records, read_records, write_timings, Expert, ProblemRecord, RecordWriter,
};
use motion_forge::encoder::{read_checkpoint_header, CheckpointHeader, CHECKPOINT_VERSION};
use motion_forge::eval_metrics::{
    evaluate_results, Controller, DynamicSpeed, EvalConfig, MetricsReport, RolloutResult, EXPERT_REPLAY_PROFILE,
};
use motion_forge::policy::{read_checkpoint, train, write_checkpoint, PolicyParams, PolicyProfile, TrainConfig};
use motion_forge::seeding::{self, SEED_ENV};
use motion_forge::{EnvKind, Error, RobotModel};

const CONFIG_EXIT: u8 = 2;
const DATA_EXIT: u8 = 3;

#[derive(Parser)]
#[command(name = "motion-forge", version, about = "Neural motion planning data, experts, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tabletop,
    Cubby,
    Dresser,
}

impl From<KindArg> for EnvKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tabletop => EnvKind::Tabletop,
            KindArg::Cubby => EnvKind::Cubby,
            KindArg::Dresser => EnvKind::Dresser,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpertArg {
    Global,
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    PaperShapes,
    /// Writes a parameterless stub that replays expert trajectories.
    ExpertReplay,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicArg {
    Off,
    Slow,
    Medium,
    Fast,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    Off,
    On,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planning problems.
    Gen {
        /// Environment kind; the three kinds alternate when omitted.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        count: u64,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve generated problems with an expert planner, keeping records that
    /// pass validation.
    Plan {
        #[arg(long, value_enum)]
        expert: ExpertArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Planning timeout in seconds, converted to a fixed search budget.
        #[arg(long, default_value_t = 20.0)]
        timeout: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Defaults to the seed recorded in the input manifest.
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
    },
    /// Train the policy on planned records.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        /// TOML training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
    },
    /// Roll out a checkpoint on a problem set and report metrics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        problems: PathBuf,
        #[arg(long, value_enum, default_value = "off")]
        dynamic: DynamicArg,
        #[arg(long, value_enum, default_value = "off")]
        partial_view: Switch,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Standard deviation of obstacle-cloud noise in metres.
        #[arg(long, default_value_t = 0.0)]
        cloud_noise: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Optional per-problem results file for `metrics`.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate a results file written by `eval`.
    Metrics {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// Failure class, mapped onto the exit code.
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) => Failure::Config(e.into()),
        _ => Failure::Data(e.into()),
    }
}

trait OrData<T> {
    fn data(self, what: &str) -> Result<T, Failure>;
}

impl<T> OrData<T> for Result<T, Error> {
    fn data(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| match classify(e) {
            Failure::Config(e) => Failure::Config(e.context(what.to_string())),
            Failure::Data(e) => Failure::Data(e.context(what.to_string())),
        })
    }
}

impl<T> OrData<T> for std::io::Result<T> {
    fn data(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(anyhow::Error::from(e).context(what.to_string())))
    }
}

fn config_error(msg: String) -> Failure {
    Failure::Config(anyhow::anyhow!(msg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let robot = RobotModel::panda();
    let outcome = match cli.command {
        Command::Gen { kind, count, seed, out } => gen(&robot, kind.map(EnvKind::from), count, seed, &out),
        Command::Plan {
            expert,
            input,
            out,
            timeout,
            workers,
            seed,
        } => plan(&robot, expert, &input, &out, timeout, workers, seed),
        Command::Train {
            data,
            profile,
            config,
            out,
            seed,
        } => train_cmd(&robot, &data, profile, config.as_deref(), &out, seed),
        Command::Eval {
            ckpt,
            problems,
            dynamic,
            partial_view,
            format,
            cloud_noise,
            workers,
            results,
            seed,
        } => {
            let config = EvalConfig {
                dynamic: match dynamic {
                    DynamicArg::Off => DynamicSpeed::Off,
                    DynamicArg::Slow => DynamicSpeed::Slow,
                    DynamicArg::Medium => DynamicSpeed::Medium,
                    DynamicArg::Fast => DynamicSpeed::Fast,
                },
                partial_view: partial_view == Switch::On,
                cloud_noise,
                workers,
                seed,
                ..EvalConfig::default()
            };
            eval(&robot, &ckpt, &problems, &config, format, results.as_deref())
        }
        Command::Metrics { results, format } => metrics(&results, format),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(CONFIG_EXIT)
        }
        Err(Failure::Data(e)) => {
            eprintln!("data error: {e:#}");
            ExitCode::from(DATA_EXIT)
        }
    }
}

fn gen(robot: &RobotModel, kind: Option<EnvKind>, count: u64, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut writer = RecordWriter::create(out, seed).data("creating the dataset")?;
    let mut skipped = 0;
    for id in 0..count {
        let kind = kind.unwrap_or_else(|| balanced_kind(id));
        match generate_problem(kind, seed, id, robot) {
            Ok(p) => writer.append(&ProblemRecord::from_problem(p, seed)).data("writing a record")?,
            Err(e) => {
                skipped += 1;
                eprintln!("problem {id}: {e}");
            }
        }
    }
    let manifest = writer.finish().data("writing the manifest")?;
    eprintln!("generated {} problems ({skipped} skipped)", manifest.record_count);
    Ok(())
}

fn plan(
    robot: &RobotModel,
    expert: ExpertArg,
    input: &Path,
    out: &Path,
    timeout: f64,
    workers: usize,
    seed: Option<u64>,
) -> Result<(), Failure> {
    if !(timeout > 0.0) || workers == 0 {
        return Err(config_error("timeout and workers must be positive".into()));
    }
    let (manifest, records) = read_records(input).data("reading problems")?;
    let seed = seed.unwrap_or(manifest.seed);
    let expert = match expert {
        ExpertArg::Global => Expert::Global,
        ExpertArg::Hybrid => Expert::Hybrid,
    };
    let outcomes = plan_records(&records, expert, robot, timeout, seed, workers);
    let mut writer = RecordWriter::create(out, seed).data("creating the output dataset")?;
    let mut rejected: HashMap<String, usize> = HashMap::new();
    for o in &outcomes {
        match &o.record {
            Some(r) => writer.append(r).data("writing a record")?,
            None => *rejected.entry(o.timing.rejection.clone().unwrap_or_default()).or_default() += 1,
        }
    }
    let manifest = writer.finish().data("writing the manifest")?;
    let timings: Vec<_> = outcomes.into_iter().map(|o| o.timing).collect();
    write_timings(out, &timings).data("writing timings")?;
    eprintln!("kept {} of {} problems", manifest.record_count, records.len());
    let mut reasons: Vec<_> = rejected.into_iter().collect();
    reasons.sort();
    for (reason, n) in reasons {
        eprintln!("rejected {n}: {reason}");
    }
    Ok(())
}

fn train_cmd(
    robot: &RobotModel,
    data: &Path,
    profile: ProfileArg,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let profile = match profile {
        ProfileArg::ExpertReplay => {
            let header = CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                profile: EXPERT_REPLAY_PROFILE.to_string(),
                shapes: Vec::new(),
            };
            let line = serde_json_line(&header)?;
            std::fs::write(out, line).data("writing the checkpoint")?;
            return Ok(());
        }
        ProfileArg::Desk => PolicyProfile::desk(),
        ProfileArg::PaperShapes => PolicyProfile::paper(),
    };
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Config)?;
            toml::from_str::<TrainConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(Failure::Config)?
        }
        None => TrainConfig::default(),
    };
    cfg.profile = profile.name.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().data("checking the training config")?;
    let (_, records) = read_records(data).data("reading training data")?;
    let set = motion_forge::dataset::training_set(&records);
    if set.examples.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("no planned trajectories in {}", data.display())));
    }
    eprintln!("training on {} examples from {} scenes", set.examples.len(), set.scenes.len());
    let mut params = PolicyParams::new(profile, &mut seeding::stream(cfg.seed, 0));
    let curve = train(&mut params, robot, &set, &cfg, |epoch, l| {
        eprintln!("epoch {:>3}  total {:.6}  bc {:.6}  collision {:.6}", epoch + 1, l.total, l.bc, l.collision);
    })
    .data("training")?;
    let file = File::create(out).data("creating the checkpoint")?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&params, &mut w).data("writing the checkpoint")?;
    w.flush().data("writing the checkpoint")?;
    let mut curve_path = out.as_os_str().to_owned();
    curve_path.push(".curve.jsonl");
    let mut text = String::new();
    for l in &curve {
        text.push_str(&serde_json_line(l)?);
    }
    std::fs::write(curve_path, text).data("writing the loss curve")?;
    Ok(())
}

fn serde_json_line<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string(value).map_err(|e| Failure::Data(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn load_controller(ckpt: &Path, records: &[ProblemRecord]) -> Result<Controller, Failure> {
    let mut reader = BufReader::new(File::open(ckpt).data("opening the checkpoint")?);
    let header = read_checkpoint_header(&mut reader).data("reading the checkpoint")?;
    if header.profile == EXPERT_REPLAY_PROFILE {
        let replay = records
            .iter()
            .filter_map(|r| r.trajectory.clone().map(|t| (r.problem_id, t)))
            .collect();
        return Ok(Controller::ExpertReplay(replay));
    }
    let reader = BufReader::new(File::open(ckpt).data("opening the checkpoint")?);
    Ok(Controller::Network(read_checkpoint(reader).data("reading the checkpoint")?))
}

fn eval(
    robot: &RobotModel,
    ckpt: &Path,
    problems: &Path,
    config: &EvalConfig,
    format: Format,
    results_out: Option<&Path>,
) -> Result<(), Failure> {
    if config.workers == 0 || !(config.cloud_noise >= 0.0) {
        return Err(config_error("workers must be positive and cloud noise non-negative".into()));
    }
    let (_, records) = read_records(problems).data("reading problems")?;
    if records.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("{} holds no problems", problems.display())));
    }
    let controller = load_controller(ckpt, &records)?;
    let problems: Vec<_> = records.iter().map(ProblemRecord::problem).collect();
    let results = evaluate_results(&controller, &problems, robot, config);
    if let Some(path) = results_out {
        let mut w = BufWriter::new(File::create(path).data("creating the results file")?);
        for r in &results {
            w.write_all(serde_json_line(r)?.as_bytes()).data("writing results")?;
        }
        w.flush().data("writing results")?;
    }
    print_report(&MetricsReport::from_results(&results), format);
    Ok(())
}

fn metrics(path: &Path, format: Format) -> Result<(), Failure> {
    let reader = BufReader::new(File::open(path).data("opening results")?);
    let mut results = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.data("reading results")?;
        let r: RolloutResult = serde_json::from_str(&line)
            .map_err(|e| Failure::Data(anyhow::anyhow!("corrupt result at line {}: {e}", i + 1)))?;
        results.push(r);
    }
    print_report(&MetricsReport::from_results(&results), format);
    Ok(())
}

fn print_report(report: &MetricsReport, format: Format) {
    match format {
        Format::Table => print!("{}", report.table()),
        Format::Machine => println!("{}", report.machine()),
    }
}
