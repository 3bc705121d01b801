//! Configuration-space expert: IK, bidirectional RRT with informed
//! refinement, collision-aware spline shortcutting, constant-speed
//! retiming, and the trajectory validator shared by every producer.
//!
//! Planner timeouts are converted to iteration budgets at a fixed nominal
//! rate, so results never depend on machine speed. Wall time is measured
//! separately and only reported.

use std::time::Instant;

use nalgebra::SVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kinematics::{ik_solve_with, IkOptions, JointConfig, JointVector, RobotModel, DOF};
use crate::scene::{config_in_collision, Scene};
use crate::scenegen::{in_correct_volume, PlanningProblem};
use crate::spline::{densify, polyline_length, resample_polyline, Hermite};
use crate::{Error, Result};

pub const DEFAULT_DT: f64 = 0.08;
pub const DEFAULT_JERK_LIMIT: f64 = 8500.0;
pub const DIVERGENCE_LIMIT: f64 = 0.05;
/// Joint-space speed of retimed expert trajectories (rad/s).
pub const JOINT_SPEED: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Global,
    Hybrid,
    Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub configs: Vec<JointConfig>,
    pub dt: f64,
    pub provenance: Provenance,
    /// Wall-clock seconds spent producing the trajectory.
    pub planning_time: f64,
}

impl Trajectory {
    pub fn new(configs: Vec<JointConfig>, dt: f64, provenance: Provenance) -> Result<Self> {
        if configs.len() < 2 {
            return Err(Error::InvalidArgument("trajectory needs at least two configurations".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !configs.iter().all(JointConfig::is_finite) {
            return Err(Error::InvalidArgument("non-finite configuration".into()));
        }
        Ok(Self {
            configs,
            dt,
            provenance,
            planning_time: 0.0,
        })
    }

    pub fn path_length(&self) -> f64 {
        polyline_length(&self.configs)
    }

    pub fn last(&self) -> &JointConfig {
        self.configs.last().expect("trajectory is never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub collision_free: bool,
    pub within_limits: bool,
    pub max_jerk: f64,
    pub divergence: f64,
    pub verdict: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ValidationLimits {
    pub jerk_limit: f64,
    pub divergence_limit: f64,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        Self {
            jerk_limit: DEFAULT_JERK_LIMIT,
            divergence_limit: DIVERGENCE_LIMIT,
        }
    }
}

/// Largest per-joint third finite difference divided by `dt³`.
pub fn max_jerk(traj: &Trajectory) -> f64 {
    let dt3 = traj.dt.powi(3);
    traj.configs
        .windows(4)
        .flat_map(|w| (0..DOF).map(move |j| (w[3].0[j] - 3.0 * w[2].0[j] + 3.0 * w[1].0[j] - w[0].0[j]).abs()))
        .fold(0.0, f64::max)
        / dt3
}

pub fn validate_trajectory(traj: &Trajectory, problem: &PlanningProblem, robot: &RobotModel) -> ValidationReport {
    validate_with(traj, problem, robot, &ValidationLimits::default())
}

pub fn validate_with(
    traj: &Trajectory,
    problem: &PlanningProblem,
    robot: &RobotModel,
    limits: &ValidationLimits,
) -> ValidationReport {
    let collision_free = traj
        .configs
        .iter()
        .all(|q| !config_in_collision(robot, q, &problem.scene, 0.0));
    let within_limits = traj.configs.iter().all(|q| robot.within_limits(q));
    let max_jerk = max_jerk(traj);
    let divergence = (robot.ee_pose(traj.last()).translation - problem.target.translation).norm();
    let verdict =
        collision_free && within_limits && max_jerk <= limits.jerk_limit && divergence <= limits.divergence_limit;
    ValidationReport {
        collision_free,
        within_limits,
        max_jerk,
        divergence,
        verdict,
    }
}

/// Every intermediate configuration at `resolution` spacing (and `b`) is
/// collision-free. `a` is assumed checked.
pub fn edge_free(robot: &RobotModel, scene: &Scene, a: &JointConfig, b: &JointConfig, resolution: f64) -> bool {
    let n = (a.distance(b) / resolution).ceil().max(1.0) as usize;
    (1..=n).all(|k| !config_in_collision(robot, &a.lerp(b, k as f64 / n as f64), scene, 0.0))
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalOptions {
    pub ik_attempts: usize,
    /// Nominal search iterations per second of timeout.
    pub iterations_per_second: f64,
    pub step: f64,
    pub edge_resolution: f64,
    pub goal_bias: f64,
    pub shortcut_attempts: usize,
    pub smoothing_resolution: f64,
    pub joint_speed: f64,
    pub dt: f64,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        Self {
            ik_attempts: 1000,
            iterations_per_second: 100.0,
            step: 0.3,
            edge_resolution: 0.02,
            goal_bias: 0.1,
            shortcut_attempts: 60,
            smoothing_resolution: 0.01,
            joint_speed: JOINT_SPEED,
            dt: DEFAULT_DT,
        }
    }
}

impl GlobalOptions {
    pub fn budget(&self, timeout: f64) -> usize {
        (timeout * self.iterations_per_second).ceil().max(1.0) as usize
    }
}

pub fn plan_global<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    robot: &RobotModel,
    timeout: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    plan_global_with(problem, robot, timeout, rng, &GlobalOptions::default())
}

pub fn plan_global_with<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    robot: &RobotModel,
    timeout: f64,
    rng: &mut R,
    opts: &GlobalOptions,
) -> Result<Trajectory> {
    if !(timeout > 0.0) {
        return Err(Error::InvalidArgument("timeout must be positive".into()));
    }
    let clock = Instant::now();
    let ik = IkOptions {
        max_attempts: opts.ik_attempts,
        ..IkOptions::default()
    };
    let goal = ik_solve_with(robot, &problem.target, &problem.scene, rng, &ik, Some(&problem.start))
        .map_err(|_| Error::IkFailed)?;
    let path = search(problem, robot, &goal, opts.budget(timeout), rng, opts)?;
    let smoothed = shortcut_path(&path, &problem.scene, robot, rng, opts);
    let configs = resample_polyline(&smoothed, opts.joint_speed * opts.dt);
    let mut traj = Trajectory::new(configs, opts.dt, Provenance::Global)?;
    let report = validate_trajectory(&traj, problem, robot);
    if !report.verdict {
        return Err(Error::ValidationFailed(describe(&report)));
    }
    let end = robot.ee_pose(traj.last()).translation;
    if !in_correct_volume(&problem.scene, &problem.target_volume_id, &end) {
        return Err(Error::ValidationFailed("final end effector outside the target volume".into()));
    }
    traj.planning_time = clock.elapsed().as_secs_f64();
    Ok(traj)
}

pub(crate) fn describe(report: &ValidationReport) -> String {
    let mut parts = Vec::new();
    if !report.collision_free {
        parts.push("collision".to_string());
    }
    if !report.within_limits {
        parts.push("joint limits".to_string());
    }
    if report.max_jerk > DEFAULT_JERK_LIMIT {
        parts.push(format!("jerk {:.0}", report.max_jerk));
    }
    if report.divergence > DIVERGENCE_LIMIT {
        parts.push(format!("divergence {:.3} m", report.divergence));
    }
    parts.join(", ")
}

/// RRT-Connect followed by informed refinement for whatever budget the
/// search left over.
pub fn search<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    robot: &RobotModel,
    goal: &JointConfig,
    budget: usize,
    rng: &mut R,
    opts: &GlobalOptions,
) -> Result<Vec<JointConfig>> {
    let start = problem.start;
    if start.distance(goal) <= 1e-12 {
        return Ok(vec![start, *goal]);
    }
    let scene = &problem.scene;
    if edge_free(robot, scene, &start, goal, opts.edge_resolution) {
        return Ok(vec![start, *goal]);
    }
    let (path, used) = rrt_connect(robot, scene, &start, goal, budget, rng, opts).ok_or(Error::SearchTimeout)?;
    Ok(informed_refine(robot, scene, path, budget - used, rng, opts))
}

struct Tree {
    nodes: Vec<JointConfig>,
    parent: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: JointConfig) -> Self {
        Self {
            nodes: vec![root],
            parent: vec![0],
        }
    }

    fn nearest(&self, q: &JointConfig) -> usize {
        let v = q.vector();
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.vector() - v).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn extend(&mut self, robot: &RobotModel, scene: &Scene, target: &JointConfig, opts: &GlobalOptions) -> Extend {
        let near = self.nearest(target);
        let from = self.nodes[near];
        let d = from.distance(target);
        let (to, reached) = if d <= opts.step {
            (*target, true)
        } else {
            (from.lerp(target, opts.step / d), false)
        };
        if !edge_free(robot, scene, &from, &to, opts.edge_resolution) {
            return Extend::Trapped;
        }
        self.nodes.push(to);
        self.parent.push(near);
        let idx = self.nodes.len() - 1;
        if reached {
            Extend::Reached(idx)
        } else {
            Extend::Advanced(idx)
        }
    }

    fn connect(&mut self, robot: &RobotModel, scene: &Scene, target: &JointConfig, opts: &GlobalOptions) -> Option<usize> {
        loop {
            match self.extend(robot, scene, target, opts) {
                Extend::Advanced(_) => continue,
                Extend::Reached(i) => return Some(i),
                Extend::Trapped => return None,
            }
        }
    }

    /// Nodes from `idx` back to the root.
    fn branch(&self, mut idx: usize) -> Vec<JointConfig> {
        let mut out = vec![self.nodes[idx]];
        while idx != 0 {
            idx = self.parent[idx];
            out.push(self.nodes[idx]);
        }
        out
    }
}

/// Bidirectional RRT with goal bias. Returns the path and the iterations
/// consumed, or `None` when the budget runs out.
pub fn rrt_connect<R: Rng + ?Sized>(
    robot: &RobotModel,
    scene: &Scene,
    start: &JointConfig,
    goal: &JointConfig,
    budget: usize,
    rng: &mut R,
    opts: &GlobalOptions,
) -> Option<(Vec<JointConfig>, usize)> {
    let mut a = Tree::new(*start);
    let mut b = Tree::new(*goal);
    let mut a_is_start = true;
    for it in 0..budget {
        let sample = if rng.random::<f64>() < opts.goal_bias {
            b.nodes[0]
        } else {
            robot.random_config(rng)
        };
        let new = match a.extend(robot, scene, &sample, opts) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(i) = new {
            let q = a.nodes[i];
            if let Some(j) = b.connect(robot, scene, &q, opts) {
                let mut from_a = a.branch(i);
                from_a.reverse();
                let from_b = b.branch(j);
                // from_b[0] duplicates q
                from_a.extend_from_slice(&from_b[1..]);
                if !a_is_start {
                    from_a.reverse();
                }
                return Some((from_a, it + 1));
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    None
}

/// Uniform sample from the prolate hyperspheroid of configurations whose
/// straight-line cost through them is below `c_best`.
pub fn sample_informed<R: Rng + ?Sized>(
    rng: &mut R,
    start: &JointConfig,
    goal: &JointConfig,
    c_best: f64,
) -> JointConfig {
    let s = start.vector();
    let g = goal.vector();
    let c_min = (g - s).norm();
    let centre = (s + g) / 2.0;
    let mut ball: SVector<f64, DOF> = SVector::from_fn(|_, _| StandardNormal.sample(rng));
    let r = rng.random::<f64>().powf(1.0 / DOF as f64);
    ball *= r / ball.norm();
    let major = c_best / 2.0;
    let minor = ((c_best * c_best - c_min * c_min).max(0.0)).sqrt() / 2.0;
    let mut scaled = ball * minor;
    scaled[0] = ball[0] * major;
    // Householder reflection sending e0 to the focal axis
    let axis = if c_min > 0.0 { (g - s) / c_min } else { JointVector::x() };
    let e0 = JointVector::x();
    let v = e0 - axis;
    let world = if v.norm() < 1e-12 {
        scaled
    } else {
        let v = v / v.norm();
        scaled - v * (2.0 * v.dot(&scaled))
    };
    JointConfig::from_vector(&(centre + world))
}

/// Replaces path sections with single informed via-points when strictly
/// shorter and collision-free.
pub fn informed_refine<R: Rng + ?Sized>(
    robot: &RobotModel,
    scene: &Scene,
    mut path: Vec<JointConfig>,
    budget: usize,
    rng: &mut R,
    opts: &GlobalOptions,
) -> Vec<JointConfig> {
    let start = path[0];
    let goal = *path.last().unwrap();
    let c_min = start.distance(&goal);
    for _ in 0..budget {
        let c_best = polyline_length(&path);
        if path.len() < 3 || c_best <= c_min * (1.0 + 1e-9) {
            break;
        }
        let x = sample_informed(rng, &start, &goal, c_best);
        if !robot.within_limits(&x) {
            continue;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        let old = polyline_length(&path[i..=j]);
        let new = path[i].distance(&x) + x.distance(&path[j]);
        if new >= old {
            continue;
        }
        if config_in_collision(robot, &x, scene, 0.0)
            || !edge_free(robot, scene, &path[i], &x, opts.edge_resolution)
            || !edge_free(robot, scene, &x, &path[j], opts.edge_resolution)
        {
            continue;
        }
        let mut next = path[..=i].to_vec();
        next.push(x);
        next.extend_from_slice(&path[j..]);
        path = next;
    }
    path
}

/// Random shortcutting through cubic Hermite segments on a densified copy
/// of the path; each candidate is checked at `smoothing_resolution`
/// spacing and kept only if strictly shorter. Returns the input unchanged
/// when nothing is accepted.
pub fn shortcut_path<R: Rng + ?Sized>(
    path: &[JointConfig],
    scene: &Scene,
    robot: &RobotModel,
    rng: &mut R,
    opts: &GlobalOptions,
) -> Vec<JointConfig> {
    let res = opts.smoothing_resolution;
    let mut dense = densify(path, res);
    let mut accepted = false;
    for _ in 0..opts.shortcut_attempts {
        let n = dense.len();
        if n < 3 {
            break;
        }
        let i = rng.random_range(0..n - 2);
        let j = rng.random_range(i + 2..n);
        let old = polyline_length(&dense[i..=j]);
        let chord = dense[i].distance(&dense[j]);
        let tangent = |k: usize| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            let t = dense[hi].vector() - dense[lo].vector();
            let norm = t.norm();
            if norm > 0.0 {
                t / norm
            } else {
                JointVector::zeros()
            }
        };
        for scale in [0.5, 0.0] {
            let seg = Hermite {
                p0: dense[i].vector(),
                p1: dense[j].vector(),
                m0: tangent(i) * chord * scale,
                m1: tangent(j) * chord * scale,
            };
            let pts = seg.sample(&dense[i], &dense[j], res);
            if polyline_length(&pts) >= old - 1e-9 {
                continue;
            }
            let ok = pts[1..pts.len() - 1]
                .iter()
                .all(|q| robot.within_limits(q) && !config_in_collision(robot, q, scene, 0.0));
            if ok {
                let mut next = dense[..i].to_vec();
                next.extend(pts);
                next.extend_from_slice(&dense[j + 1..]);
                dense = next;
                accepted = true;
                break;
            }
        }
    }
    if accepted {
        dense
    } else {
        path.to_vec()
    }
}

/// Shortcut smoothing of a trajectory's configurations; timing is left to
/// the caller.
pub fn smooth_trajectory<R: Rng + ?Sized>(
    traj: &Trajectory,
    scene: &Scene,
    robot: &RobotModel,
    rng: &mut R,
) -> Trajectory {
    let configs = shortcut_path(&traj.configs, scene, robot, rng, &GlobalOptions::default());
    Trajectory {
        configs,
        ..traj.clone()
    }
}

/// Constant joint-speed retiming at `dt`.
pub fn retime(path: &[JointConfig], speed: f64, dt: f64, provenance: Provenance) -> Result<Trajectory> {
    Trajectory::new(resample_polyline(path, speed * dt), dt, provenance)
}
