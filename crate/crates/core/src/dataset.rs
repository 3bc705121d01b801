//! Dataset persistence and the reproducible generation and planning passes.
//!
//! A dataset is a newline-delimited JSON file with one [`ProblemRecord`] per
//! line, plus a `<file>.manifest.json` sidecar. Numbers are written in the
//! shortest decimal form that parses back to the same `f64`, so a read after
//! a write is bit-exact and files are byte-identical across platforms.
//! Planner wall times go to a separate `<file>.timings.jsonl` sidecar so the
//! dataset itself does not depend on machine speed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::expert_global::{plan_global, validate_trajectory, validate_with, Provenance, Trajectory, ValidationLimits, ValidationReport};
use crate::expert_hybrid::plan_hybrid;
use crate::geometry::Pose;
use crate::kinematics::{JointConfig, RobotModel};
use crate::policy::{TrainingExample, TrainingSet};
use crate::scene::{EnvKind, Scene};
use crate::scenegen::{generate_scene, sample_problem, PlanningProblem};
use crate::seeding;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Scene redraws before generation of one problem gives up.
pub const GENERATION_ROUNDS: usize = 50;

const PLAN_TAG: u64 = 0x504c_414e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemRecord {
    pub problem_id: u64,
    pub env_kind: EnvKind,
    /// Run seed the scene was generated from; the scene stream is
    /// `stream(scene_seed, problem_id)`.
    pub scene_seed: u64,
    pub scene: Scene,
    pub start: JointConfig,
    pub original_target: Pose,
    pub target_volume_id: String,
    /// Final end-effector pose of a hybrid expert trajectory.
    pub revised_target: Option<Pose>,
    pub trajectory: Option<Trajectory>,
    pub provenance: Option<Provenance>,
    pub validation: Option<ValidationReport>,
}

impl ProblemRecord {
    pub fn from_problem(problem: PlanningProblem, scene_seed: u64) -> Self {
        Self {
            problem_id: problem.problem_id,
            env_kind: problem.scene.env_kind,
            scene_seed,
            scene: problem.scene,
            start: problem.start,
            original_target: problem.target,
            target_volume_id: problem.target_volume_id,
            revised_target: None,
            trajectory: None,
            provenance: None,
            validation: None,
        }
    }

    /// The problem as posed originally.
    pub fn original_problem(&self) -> PlanningProblem {
        PlanningProblem {
            scene: self.scene.clone(),
            start: self.start,
            target: self.original_target.clone(),
            target_volume_id: self.target_volume_id.clone(),
            problem_id: self.problem_id,
        }
    }

    /// The problem the stored trajectory solves: the revised target when
    /// there is one.
    pub fn problem(&self) -> PlanningProblem {
        let mut p = self.original_problem();
        if let Some(t) = &self.revised_target {
            p.target = t.clone();
        }
        p
    }

    /// Re-runs the validator on the stored trajectory. Revised records must
    /// end exactly on their revised target; others within the expert
    /// divergence limit of the original.
    pub fn revalidate(&self, robot: &RobotModel) -> Option<ValidationReport> {
        let traj = self.trajectory.as_ref()?;
        Some(match self.revised_target {
            Some(_) => validate_with(
                traj,
                &self.problem(),
                robot,
                &ValidationLimits {
                    divergence_limit: 0.0,
                    ..ValidationLimits::default()
                },
            ),
            None => validate_trajectory(traj, &self.problem(), robot),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub env_kinds: BTreeMap<String, usize>,
    pub seed: u64,
    pub tool_version: String,
    pub record_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub problem_id: u64,
    pub planning_time: f64,
    pub accepted: bool,
    pub rejection: Option<String>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    sidecar(path, "manifest.json")
}

pub fn timings_path(path: &Path) -> PathBuf {
    sidecar(path, "timings.jsonl")
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Streams records to disk and writes the manifest on [`finish`].
///
/// [`finish`]: RecordWriter::finish
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
    kinds: BTreeMap<String, usize>,
    count: usize,
    seed: u64,
}

impl RecordWriter {
    pub fn create(path: &Path, seed: u64) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(File::create(path)?),
            kinds: BTreeMap::new(),
            count: 0,
            seed,
        })
    }

    pub fn append(&mut self, record: &ProblemRecord) -> Result<()> {
        writeln!(self.out, "{}", json_line(record)?)?;
        *self.kinds.entry(record.env_kind.name().to_string()).or_default() += 1;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest> {
        self.out.flush()?;
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            env_kinds: self.kinds,
            seed: self.seed,
            tool_version: TOOL_VERSION.to_string(),
            record_count: self.count,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        text.push('\n');
        std::fs::write(manifest_path(&self.path), text)?;
        Ok(manifest)
    }
}

pub fn write_records(path: &Path, records: &[ProblemRecord], seed: u64) -> Result<DatasetManifest> {
    let mut w = RecordWriter::create(path, seed)?;
    for r in records {
        w.append(r)?;
    }
    w.finish()
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(manifest_path(path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    Ok(manifest)
}

/// Line-by-line record iterator; errors carry 1-based line numbers.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<ProblemRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => return Some(Err(e.into())),
        };
        self.line += 1;
        Some(serde_json::from_str(&text).map_err(|e| Error::CorruptRecord {
            line: self.line,
            msg: e.to_string(),
        }))
    }
}

pub fn open_records(path: &Path) -> Result<RecordReader<BufReader<File>>> {
    Ok(RecordReader::new(BufReader::new(File::open(path)?)))
}

/// Reads the manifest and every record, checking the counts agree.
pub fn read_records(path: &Path) -> Result<(DatasetManifest, Vec<ProblemRecord>)> {
    let manifest = read_manifest(path)?;
    let records = open_records(path)?.collect::<Result<Vec<_>>>()?;
    check_counts(&manifest, &records)?;
    Ok((manifest, records))
}

fn check_counts(manifest: &DatasetManifest, records: &[ProblemRecord]) -> Result<()> {
    let mut kinds = BTreeMap::new();
    for r in records {
        *kinds.entry(r.env_kind.name().to_string()).or_insert(0usize) += 1;
    }
    if manifest.record_count != records.len() || manifest.env_kinds != kinds {
        return Err(Error::Integrity(format!(
            "manifest lists {} records, file holds {}",
            manifest.record_count,
            records.len()
        )));
    }
    Ok(())
}

pub fn write_timings(path: &Path, timings: &[TimingRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(timings_path(path))?);
    for t in timings {
        writeln!(out, "{}", json_line(t)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timings(path: &Path) -> Result<Vec<TimingRecord>> {
    let reader = BufReader::new(File::open(timings_path(path))?);
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(&l?).map_err(|e| Error::CorruptRecord {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// One problem from its own stream `stream(seed, problem_id)`, so the
/// result never depends on which other problems are generated.
pub fn generate_problem(kind: EnvKind, seed: u64, problem_id: u64, robot: &RobotModel) -> Result<PlanningProblem> {
    let mut rng = seeding::stream(seed, problem_id);
    for _ in 0..GENERATION_ROUNDS {
        let scene = match generate_scene(kind, &mut rng) {
            Ok(s) => s,
            Err(Error::GenerationExhausted(_)) => continue,
            Err(e) => return Err(e),
        };
        match sample_problem(&scene, robot, &mut rng) {
            Ok(mut p) => {
                p.problem_id = problem_id;
                return Ok(p);
            }
            Err(Error::NoValidPair) | Err(Error::Unreachable) | Err(Error::IkFailed) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationExhausted(GENERATION_ROUNDS))
}

/// Kind of problem `id` when generating without a fixed kind: the three
/// kinds in turn.
pub fn balanced_kind(id: u64) -> EnvKind {
    [EnvKind::Tabletop, EnvKind::Cubby, EnvKind::Dresser][(id % 3) as usize]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expert {
    Global,
    Hybrid,
}

impl std::str::FromStr for Expert {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown expert {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub record: Option<ProblemRecord>,
    pub timing: TimingRecord,
}

/// Plans one record with the expert on the stream
/// `substream(seed, [PLAN, problem_id])`. Rejections are reported in the
/// timing entry rather than raised.
pub fn plan_record(record: &ProblemRecord, expert: Expert, robot: &RobotModel, timeout: f64, seed: u64) -> PlanOutcome {
    let mut rng = seeding::substream(seed, &[PLAN_TAG, record.problem_id]);
    let problem = record.original_problem();
    let planned = match expert {
        Expert::Global => plan_global(&problem, robot, timeout, &mut rng).map(|t| (t, None)),
        Expert::Hybrid => plan_hybrid(&problem, robot, timeout, &mut rng).map(|(t, _)| {
            let revised = robot.ee_pose(t.last());
            (t, Some(revised))
        }),
    };
    match planned {
        Ok((mut traj, revised_target)) => {
            let planning_time = traj.planning_time;
            traj.planning_time = 0.0;
            let mut out = record.clone();
            out.provenance = Some(traj.provenance);
            out.revised_target = revised_target;
            out.trajectory = Some(traj);
            let report = out.revalidate(robot).expect("trajectory present");
            let accepted = report.verdict;
            out.validation = Some(report);
            PlanOutcome {
                timing: TimingRecord {
                    problem_id: record.problem_id,
                    planning_time,
                    accepted,
                    rejection: (!accepted).then(|| "revalidation failed".to_string()),
                },
                record: accepted.then_some(out),
            }
        }
        Err(e) => PlanOutcome {
            record: None,
            timing: TimingRecord {
                problem_id: record.problem_id,
                planning_time: 0.0,
                accepted: false,
                rejection: Some(e.to_string()),
            },
        },
    }
}

/// Share-nothing worker pool over `records`; outcomes come back sorted by
/// problem id whatever the worker count.
pub fn plan_records(
    records: &[ProblemRecord],
    expert: Expert,
    robot: &RobotModel,
    timeout: f64,
    seed: u64,
    workers: usize,
) -> Vec<PlanOutcome> {
    let workers = workers.clamp(1, records.len().max(1));
    let mut outcomes: Vec<PlanOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    records
                        .iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|r| plan_record(r, expert, robot, timeout, seed))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("planning worker panicked")).collect()
    });
    outcomes.sort_by_key(|o| o.timing.problem_id);
    outcomes
}

/// Consecutive configuration pairs of every planned record, targeting the
/// revised pose where there is one.
pub fn training_set(records: &[ProblemRecord]) -> TrainingSet {
    let mut set = TrainingSet::default();
    for r in records {
        let Some(traj) = &r.trajectory else { continue };
        let scene = set.scenes.len();
        set.scenes.push(r.scene.clone());
        let target = r.revised_target.clone().unwrap_or_else(|| r.original_target.clone());
        for w in traj.configs.windows(2) {
            set.examples.push(TrainingExample {
                scene,
                q_t: w[0],
                q_next: w[1],
                target: target.clone(),
            });
        }
    }
    set
}
