//! Closed-loop rollouts and the metric suite: termination, success gates,
//! orientation error, spectral arc length smoothness, the two-member
//! collision ensemble, dynamic-obstacle scenes and aggregate reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::expert_global::{Provenance, Trajectory, DEFAULT_DT, JOINT_SPEED};
use crate::geometry::geodesic_angle;
use crate::kinematics::{ik_solve, JointConfig, RobotModel, SurfaceAnchor};
use crate::policy::{observe, policy_forward, policy_step, CloudBudget, PolicyParams};
use crate::render::{render_partial_cloud, Camera};
use crate::scene::{sample_surface_cloud, Primitive, Scene};
use crate::scenegen::{in_correct_volume, PlanningProblem};
use crate::seeding;
use crate::{Error, Result};

pub const POSITION_TOLERANCE: f64 = 0.01;
pub const ORIENTATION_TOLERANCE: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const SMOOTH_THRESHOLD: f64 = -1.6;
pub const SPARC_MAX_CUTOFF: f64 = 10.0;
pub const SPARC_AMPLITUDE: f64 = 0.05;
/// Zero padding to `next_pow2(n) · 2^SPARC_PAD_LEVEL` samples.
pub const SPARC_PAD_LEVEL: u32 = 4;
pub const MIN_SPARC_SAMPLES: usize = 8;
pub const DEFAULT_HORIZON: f64 = 20.0;
pub const DENSE_POINTS_PER_LINK: usize = 64;
/// Profile name of the checkpoint stub that replays expert trajectories.
pub const EXPERT_REPLAY_PROFILE: &str = "expert-replay";

const ROLLOUT_TAG: u64 = 0x524f_4c4c;
const BASELINE_TAG: u64 = 0x4241_5345;

/// Geodesic angle between two rotations.
pub fn orientation_error(r_final: &Matrix3<f64>, r_target: &Matrix3<f64>) -> f64 {
    geodesic_angle(r_target, r_final)
}

/// Spectral arc length of a speed profile sampled at `fs` Hz. More negative
/// values mean a longer normalized magnitude spectrum.
pub fn sparc(speeds: &[f64], fs: f64) -> Result<f64> {
    if speeds.len() < MIN_SPARC_SAMPLES || !(fs > 0.0) || speeds.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "speed profile needs at least {MIN_SPARC_SAMPLES} finite samples and a positive rate"
        )));
    }
    if speeds.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateProfile);
    }
    let nfft = speeds.len().next_power_of_two() << SPARC_PAD_LEVEL;
    let mut buf: Vec<Complex<f64>> = speeds.iter().map(|v| Complex::new(*v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let magnitudes: Vec<f64> = buf[..=nfft / 2].iter().map(|c| c.norm()).collect();
    arc_length_from_spectrum(&magnitudes, fs, nfft)
}

/// Shared tail of [`sparc`]: DC normalization, adaptive cutoff and the arc
/// length of the piecewise-linear normalized spectrum.
fn arc_length_from_spectrum(magnitudes: &[f64], fs: f64, nfft: usize) -> Result<f64> {
    let dc = magnitudes[0];
    if !(dc > 0.0) {
        return Err(Error::DegenerateProfile);
    }
    let df = fs / nfft as f64;
    let band = magnitudes.iter().take_while({
        let mut k = 0usize;
        move |_| {
            let keep = k as f64 * df <= SPARC_MAX_CUTOFF;
            k += 1;
            keep
        }
    });
    let normalized: Vec<f64> = band.map(|m| m / dc).collect();
    let last = normalized.iter().rposition(|m| *m >= SPARC_AMPLITUDE).unwrap_or(0);
    if last == 0 {
        return Err(Error::DegenerateProfile);
    }
    let cutoff = last as f64 * df;
    let arc: f64 = normalized[..=last]
        .windows(2)
        .map(|w| ((df / cutoff).powi(2) + (w[1] - w[0]).powi(2)).sqrt())
        .sum();
    Ok(-arc)
}

/// Speeds between consecutive samples with the rest state prepended and
/// appended, so every profile starts and ends at zero.
fn rest_to_rest(points: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() + 1);
    out.push(0.0);
    out.extend(points.windows(2).map(|w| {
        w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt() / dt
    }));
    out.push(0.0);
    out
}

pub fn joint_speed_profile(traj: &Trajectory) -> Vec<f64> {
    let pts: Vec<Vec<f64>> = traj.configs.iter().map(|q| q.0.to_vec()).collect();
    rest_to_rest(&pts, traj.dt)
}

/// Translational end-effector speed only.
pub fn ee_speed_profile(traj: &Trajectory, robot: &RobotModel) -> Vec<f64> {
    let pts: Vec<Vec<f64>> = traj
        .configs
        .iter()
        .map(|q| robot.ee_pose(q).translation.iter().copied().collect())
        .collect();
    rest_to_rest(&pts, traj.dt)
}

/// Joint-space and end-effector SPARC, `None` where the profile is too
/// short or motionless.
pub fn trajectory_sparc(traj: &Trajectory, robot: &RobotModel) -> (Option<f64>, Option<f64>) {
    let fs = 1.0 / traj.dt;
    (
        sparc(&joint_speed_profile(traj), fs).ok(),
        sparc(&ee_speed_profile(traj, robot), fs).ok(),
    )
}

pub fn is_smooth(sparc_joint: Option<f64>, sparc_ee: Option<f64>) -> bool {
    matches!((sparc_joint, sparc_ee), (Some(j), Some(e)) if j < SMOOTH_THRESHOLD && e < SMOOTH_THRESHOLD)
}

/// Extra probe points per link for the second ensemble member, spread over
/// the link's collision spheres in proportion to their area.
pub fn dense_link_points(robot: &RobotModel) -> Vec<SurfaceAnchor> {
    let mut links: Vec<usize> = robot.collision_spheres.iter().map(|s| s.link).collect();
    links.sort_unstable();
    links.dedup();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut out = Vec::with_capacity(links.len() * DENSE_POINTS_PER_LINK);
    for link in links {
        let spheres: Vec<_> = robot.collision_spheres.iter().filter(|s| s.link == link).collect();
        let area: f64 = spheres.iter().map(|s| s.radius * s.radius).sum();
        let mut counts: Vec<usize> = spheres
            .iter()
            .map(|s| (DENSE_POINTS_PER_LINK as f64 * s.radius * s.radius / area).floor() as usize)
            .collect();
        let mut i = 0;
        while counts.iter().sum::<usize>() < DENSE_POINTS_PER_LINK {
            counts[i % spheres.len()] += 1;
            i += 1;
        }
        for (s, &n) in spheres.iter().zip(&counts) {
            for k in 0..n {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * k as f64;
                out.push(SurfaceAnchor {
                    link,
                    offset: s.center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * s.radius,
                });
            }
        }
    }
    out
}

/// Verdicts of the two ensemble members at one configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberVerdicts {
    pub sphere_env: bool,
    pub sphere_self: bool,
    pub dense_env: bool,
    pub dense_self: bool,
}

impl MemberVerdicts {
    /// Flags only what both members agree on: `(env, self)`.
    pub fn agreed(&self) -> (bool, bool) {
        (self.sphere_env && self.dense_env, self.sphere_self && self.dense_self)
    }
}

/// Collision checking at one configuration by a sphere member and a dense
/// probe-point member. The fixed base is excluded from environment checks.
pub struct CollisionEnsemble {
    dense: Vec<SurfaceAnchor>,
}

impl CollisionEnsemble {
    pub fn new(robot: &RobotModel) -> Self {
        Self {
            dense: dense_link_points(robot),
        }
    }

    pub fn members(&self, robot: &RobotModel, q: &JointConfig, scene: &Scene) -> MemberVerdicts {
        let frames = robot.forward_kinematics(q);
        let spheres = robot.placed_spheres(&frames);
        let sphere_env = spheres
            .iter()
            .filter(|s| s.link >= 1)
            .any(|s| scene.sphere_collides(&s.center, s.radius, 0.0));
        let sphere_self = robot.self_collision_from_spheres(&spheres);
        let probes: Vec<(usize, Vector3<f64>)> = self
            .dense
            .iter()
            .map(|a| (a.link, frames[a.link].transform_point(&a.offset)))
            .collect();
        let dense_env = probes.iter().any(|(link, p)| *link >= 1 && scene.distance(p) < 0.0);
        let dense_self = probes.iter().any(|(link, p)| {
            spheres
                .iter()
                .any(|s| !robot.ignores_pair(*link, s.link) && (p - s.center).norm() < s.radius)
        });
        MemberVerdicts {
            sphere_env,
            sphere_self,
            dense_env,
            dense_self,
        }
    }

    /// `(env, self)` flags over a trajectory; configuration `i` is checked
    /// against `scene_at(i)`.
    pub fn check_with(&self, traj: &Trajectory, robot: &RobotModel, scene_at: &dyn Fn(usize) -> Scene) -> (bool, bool) {
        traj.configs.iter().enumerate().fold((false, false), |(env, slf), (i, q)| {
            let (e, s) = self.members(robot, q, &scene_at(i)).agreed();
            (env || e, slf || s)
        })
    }
}

pub fn collision_ensemble(traj: &Trajectory, problem: &PlanningProblem, robot: &RobotModel) -> (bool, bool) {
    CollisionEnsemble::new(robot).check_with(traj, robot, &|_| problem.scene.clone())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicSpeed {
    #[default]
    Off,
    Slow,
    Medium,
    Fast,
}

impl DynamicSpeed {
    /// Peak speed of the block along its faster axis in m/s.
    pub fn speed(&self) -> f64 {
        match self {
            Self::Off => 0.0,
            Self::Slow => 0.02,
            Self::Medium => 0.06,
            Self::Fast => 0.12,
        }
    }
}

impl std::str::FromStr for DynamicSpeed {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "slow" => Ok(Self::Slow),
            "medium" => Ok(Self::Medium),
            "fast" => Ok(Self::Fast),
            other => Err(Error::InvalidArgument(format!("unknown dynamic setting {other:?}"))),
        }
    }
}

/// A block resting on the support surface below the midpoint between the
/// start and target end-effector positions, sweeping periodically in x and
/// y. The y period is the x period divided by √2, so the pair never
/// realigns.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingBlock {
    pub base: Scene,
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    pub amplitude: f64,
    pub speed: f64,
}

impl MovingBlock {
    pub const AMPLITUDE: f64 = 0.2;
    pub const HALF: Vector3<f64> = Vector3::new(0.05, 0.05, 0.08);

    pub fn for_problem(problem: &PlanningProblem, robot: &RobotModel, speed: f64) -> Self {
        let mid = (robot.ee_pose(&problem.start).translation + problem.target.translation) / 2.0;
        let mut top = mid.z.max(1.0);
        while top > 0.0 && problem.scene.distance(&Vector3::new(mid.x, mid.y, top)) > 0.0 {
            top -= 0.005;
        }
        Self {
            base: problem.scene.clone(),
            center: Vector3::new(mid.x, mid.y, top.max(0.0) + Self::HALF.z),
            half: Self::HALF,
            amplitude: Self::AMPLITUDE,
            speed,
        }
    }

    /// Block centre at time `t`; it starts `amplitude` to the side of the
    /// midpoint and first moves across it.
    pub fn position(&self, t: f64) -> Vector3<f64> {
        let w = self.speed / self.amplitude;
        let wy = w;
        let wx = w / std::f64::consts::SQRT_2;
        self.center + Vector3::new(self.amplitude * (wx * t).sin(), self.amplitude * (wy * t).cos(), 0.0)
    }

    pub fn scene_at(&self, t: f64) -> Scene {
        let mut scene = self.base.clone();
        scene.primitives.push(Primitive::cuboid(self.position(t), self.half));
        scene
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dt: f64,
    pub horizon: f64,
    pub budget: CloudBudget,
    pub partial_view: bool,
    /// Standard deviation of Gaussian noise on observed obstacle points (m).
    pub cloud_noise: f64,
    pub dynamic: DynamicSpeed,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            budget: CloudBudget::default(),
            partial_view: false,
            cloud_noise: 0.0,
            dynamic: DynamicSpeed::Off,
            seed: 0,
            workers: 1,
        }
    }
}

impl EvalConfig {
    pub fn step_budget(&self) -> usize {
        (self.horizon / self.dt).ceil() as usize
    }
}

/// What drives the robot during a rollout.
#[derive(Clone, Debug)]
pub enum Controller {
    Network(PolicyParams),
    /// Replays the expert trajectory stored under each problem id in full
    /// before the termination test applies.
    ExpertReplay(HashMap<u64, Trajectory>),
    /// Moves at expert joint speed along the straight configuration-space
    /// line to an IK solution of the target, ignoring obstacles.
    StraightLine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    StepBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub problem_id: u64,
    pub trajectory: Trajectory,
    pub terminated_by: Termination,
    pub final_pos_err: f64,
    pub final_ori_err: f64,
    pub env_collision: bool,
    pub self_collision: bool,
    pub joint_violation: bool,
    pub in_correct_volume: bool,
    pub sparc_joint: Option<f64>,
    pub sparc_ee: Option<f64>,
    pub success: bool,
    pub wall_time: f64,
}

pub fn success_check(result: &RolloutResult, problem: &PlanningProblem) -> bool {
    success_check_with(result, problem, POSITION_TOLERANCE, ORIENTATION_TOLERANCE)
}

/// Success gate with explicit position and orientation tolerances. The
/// volume check is recomputed from the problem's scene.
pub fn success_check_with(result: &RolloutResult, problem: &PlanningProblem, pos_tol: f64, ori_tol: f64) -> bool {
    result.final_pos_err <= pos_tol
        && result.final_ori_err <= ori_tol
        && !result.env_collision
        && !result.self_collision
        && !result.joint_violation
        && result.in_correct_volume
        && problem.target_volume().is_some()
}

fn straight_line_goal(problem: &PlanningProblem, robot: &RobotModel, seed: u64) -> JointConfig {
    let mut rng = seeding::substream(seed, &[BASELINE_TAG, problem.problem_id]);
    ik_solve(robot, &problem.target, &problem.scene, &mut rng, 100).unwrap_or(problem.start)
}

fn sense_obstacles<R: Rng + ?Sized>(scene: &Scene, config: &EvalConfig, rng: &mut R) -> Vec<Vector3<f64>> {
    let n = config.budget.obstacle;
    let mut pts = if config.partial_view {
        render_partial_cloud(scene, &Camera::default_view(), n, rng).unwrap_or_else(|_| sample_surface_cloud(scene, n, rng))
    } else {
        sample_surface_cloud(scene, n, rng)
    };
    if config.cloud_noise > 0.0 {
        let normal = Normal::new(0.0, config.cloud_noise).expect("positive noise");
        for p in pts.iter_mut() {
            *p += Vector3::from_fn(|_, _| normal.sample(rng));
        }
    }
    pts
}

/// Closed-loop rollout until the end effector is within 1 cm of the target
/// or the step budget runs out. Failures are recorded, never raised.
pub fn rollout(
    controller: &Controller,
    problem: &PlanningProblem,
    robot: &RobotModel,
    config: &EvalConfig,
    scene_fn: &dyn Fn(f64) -> Scene,
) -> RolloutResult {
    let clock = Instant::now();
    let mut rng = seeding::substream(config.seed, &[ROLLOUT_TAG, problem.problem_id]);
    let replay = match controller {
        Controller::ExpertReplay(map) => map.get(&problem.problem_id),
        _ => None,
    };
    let budget = match replay {
        Some(t) => config.step_budget().max(t.configs.len()),
        None => config.step_budget(),
    };
    let line_goal = matches!(controller, Controller::StraightLine).then(|| straight_line_goal(problem, robot, config.seed));
    let reached = |q: &JointConfig| (robot.ee_pose(q).translation - problem.target.translation).norm() <= POSITION_TOLERANCE;

    let mut q = problem.start;
    let mut configs = vec![q];
    let mut terminated_by = Termination::StepBudget;
    // a replayed expert trajectory executes open loop to its end
    let replay_len = replay.map_or(0, |t| t.configs.len());
    for step in 0..=budget {
        if step + 1 >= replay_len && reached(&q) {
            terminated_by = Termination::TargetReached;
            break;
        }
        if step == budget {
            break;
        }
        let t = step as f64 * config.dt;
        q = match controller {
            Controller::Network(params) => {
                let obstacle = sense_obstacles(&scene_fn(t), config, &mut rng);
                let (cloud, qn) = observe(robot, &q, obstacle, &problem.target, &config.budget, &mut rng);
                match policy_forward(params, &cloud, &qn, &mut rng) {
                    Ok((dq, _)) => policy_step(robot, &q, &dq),
                    Err(_) => q,
                }
            }
            Controller::ExpertReplay(_) => match replay {
                Some(t) => t.configs[(step + 1).min(t.configs.len() - 1)],
                None => q,
            },
            Controller::StraightLine => {
                let goal = line_goal.expect("set for the baseline");
                let d = q.distance(&goal);
                let stride = JOINT_SPEED * config.dt;
                if d <= stride { goal } else { q.lerp(&goal, stride / d) }
            }
        };
        configs.push(q);
    }

    let trajectory = Trajectory {
        configs,
        dt: config.dt,
        provenance: Provenance::Policy,
        planning_time: 0.0,
    };
    let last = robot.ee_pose(trajectory.last());
    let ensemble = CollisionEnsemble::new(robot);
    let (env_collision, self_collision) =
        ensemble.check_with(&trajectory, robot, &|i| scene_fn(i as f64 * config.dt));
    let (sparc_joint, sparc_ee) = trajectory_sparc(&trajectory, robot);
    let mut result = RolloutResult {
        problem_id: problem.problem_id,
        terminated_by,
        final_pos_err: (last.translation - problem.target.translation).norm(),
        final_ori_err: orientation_error(&last.rotation, &problem.target.rotation),
        env_collision,
        self_collision,
        joint_violation: !trajectory.configs.iter().all(|q| robot.within_limits(q)),
        in_correct_volume: in_correct_volume(&problem.scene, &problem.target_volume_id, &last.translation),
        sparc_joint,
        sparc_ee,
        success: false,
        wall_time: 0.0,
        trajectory,
    };
    result.success = success_check(&result, problem);
    result.wall_time = clock.elapsed().as_secs_f64();
    result
}

/// Rollout with the scene implied by `config.dynamic`.
pub fn rollout_problem(controller: &Controller, problem: &PlanningProblem, robot: &RobotModel, config: &EvalConfig) -> RolloutResult {
    match config.dynamic {
        DynamicSpeed::Off => rollout(controller, problem, robot, config, &|_| problem.scene.clone()),
        speed => {
            let block = MovingBlock::for_problem(problem, robot, speed.speed());
            rollout(controller, problem, robot, config, &|t| block.scene_at(t))
        }
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub problems: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub target_reached_rate: f64,
    pub env_collision_rate: f64,
    pub self_collision_rate: f64,
    pub joint_violation_rate: f64,
    pub correct_volume_rate: f64,
    pub smooth_rate: f64,
    pub within_1cm_rate: f64,
    pub within_2cm_rate: f64,
    pub within_15deg_rate: f64,
    pub within_30deg_rate: f64,
    pub pos_err_median: f64,
    pub pos_err_p90: f64,
    pub ori_err_median: f64,
    pub ori_err_p90: f64,
    /// Wall time over successful rollouts only.
    pub time_mean: f64,
    pub time_std: f64,
}

impl MetricsReport {
    /// Aggregates in problem-id order, so the report does not depend on
    /// the order results arrive in.
    pub fn from_results(results: &[RolloutResult]) -> Self {
        let mut rs: Vec<&RolloutResult> = results.iter().collect();
        rs.sort_by_key(|r| r.problem_id);
        let n = rs.len();
        let rate = |f: &dyn Fn(&RolloutResult) -> bool| {
            if n == 0 { 0.0 } else { rs.iter().filter(|r| f(r)).count() as f64 / n as f64 }
        };
        let mut pos: Vec<f64> = rs.iter().map(|r| r.final_pos_err).collect();
        let mut ori: Vec<f64> = rs.iter().map(|r| r.final_ori_err).collect();
        pos.sort_by(f64::total_cmp);
        ori.sort_by(f64::total_cmp);
        let times: Vec<f64> = rs.iter().filter(|r| r.success).map(|r| r.wall_time).collect();
        let (time_mean, time_std) = if times.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = times.iter().sum::<f64>() / times.len() as f64;
            let v = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / times.len() as f64;
            (m, v.sqrt())
        };
        let successes = rs.iter().filter(|r| r.success).count();
        Self {
            problems: n,
            successes,
            failures: n - successes,
            success_rate: rate(&|r| r.success),
            target_reached_rate: rate(&|r| r.terminated_by == Termination::TargetReached),
            env_collision_rate: rate(&|r| r.env_collision),
            self_collision_rate: rate(&|r| r.self_collision),
            joint_violation_rate: rate(&|r| r.joint_violation),
            correct_volume_rate: rate(&|r| r.in_correct_volume),
            smooth_rate: rate(&|r| is_smooth(r.sparc_joint, r.sparc_ee)),
            within_1cm_rate: rate(&|r| r.final_pos_err <= 0.01),
            within_2cm_rate: rate(&|r| r.final_pos_err <= 0.02),
            within_15deg_rate: rate(&|r| r.final_ori_err <= 15f64.to_radians()),
            within_30deg_rate: rate(&|r| r.final_ori_err <= 30f64.to_radians()),
            pos_err_median: quantile(&pos, 0.5),
            pos_err_p90: quantile(&pos, 0.9),
            ori_err_median: quantile(&ori, 0.5),
            ori_err_p90: quantile(&ori, 0.9),
            time_mean,
            time_std,
        }
    }

    pub fn machine(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let rows = [
            ("problems", self.problems.to_string()),
            ("successes", self.successes.to_string()),
            ("success rate", pct(self.success_rate)),
            ("target reached", pct(self.target_reached_rate)),
            ("env collision", pct(self.env_collision_rate)),
            ("self collision", pct(self.self_collision_rate)),
            ("joint violation", pct(self.joint_violation_rate)),
            ("correct volume", pct(self.correct_volume_rate)),
            ("smooth", pct(self.smooth_rate)),
            ("within 1 cm", pct(self.within_1cm_rate)),
            ("within 2 cm", pct(self.within_2cm_rate)),
            ("within 15 deg", pct(self.within_15deg_rate)),
            ("within 30 deg", pct(self.within_30deg_rate)),
            ("pos err median (m)", format!("{:.4}", self.pos_err_median)),
            ("pos err p90 (m)", format!("{:.4}", self.pos_err_p90)),
            ("ori err median (rad)", format!("{:.4}", self.ori_err_median)),
            ("ori err p90 (rad)", format!("{:.4}", self.ori_err_p90)),
            ("time (s)", format!("{:.3} ± {:.3}", self.time_mean, self.time_std)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>14}");
        }
        out
    }
}

/// Rolls out every problem on `config.workers` threads. Results come back
/// in input order.
pub fn evaluate_results(
    controller: &Controller,
    problems: &[PlanningProblem],
    robot: &RobotModel,
    config: &EvalConfig,
) -> Vec<RolloutResult> {
    let workers = config.workers.clamp(1, problems.len().max(1));
    let mut slots: Vec<Option<RolloutResult>> = vec![None; problems.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    problems
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, p)| (i, rollout_problem(controller, p, robot, config)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("rollout worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every problem rolled out")).collect()
}

pub fn evaluate_dataset(
    controller: &Controller,
    problems: &[PlanningProblem],
    robot: &RobotModel,
    config: &EvalConfig,
) -> Result<MetricsReport> {
    if problems.is_empty() {
        return Err(Error::InvalidArgument("no problems to evaluate".into()));
    }
    Ok(MetricsReport::from_results(&evaluate_results(controller, problems, robot, config)))
}
