//! Task-space expert: a floating-gripper search in SE(3), a reactive joint
//! controller that follows the resulting waypoints, spline retiming to a
//! steady joint speed, and hindsight goal revision.

use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::expert_global::{describe, validate_with, Provenance, Trajectory, ValidationLimits, DEFAULT_DT, JOINT_SPEED};
use crate::geometry::{axis_angle_matrix, geodesic_angle, rotation_log, Pose};
use crate::kinematics::{pose_error, JointConfig, JointVector, RobotModel, DOF};
use crate::scene::{gripper_in_collision, Scene};
use crate::scenegen::{in_correct_volume, PlanningProblem, SHOULDER};
use crate::spline::CubicSpline;
use crate::{Error, Result};

pub const WAYPOINT_SPACING: f64 = 0.02;
pub const WAYPOINT_RADIUS: f64 = 0.03;
pub const STALL_STEPS: usize = 300;
pub const CONTROL_DT: f64 = 0.02;
/// Nominal floating-gripper search iterations per second of timeout.
pub const EE_ITERATIONS_PER_SECOND: f64 = 400.0;
/// Translation-equivalent metres per radian in the SE(3) metric.
const ROTATION_WEIGHT: f64 = 0.1;
const EE_STEP: f64 = 0.05;
const EE_CHECK: f64 = 0.01;
const SAMPLE_REACH: f64 = 0.9;
const ORIENTATION_SPREAD: f64 = 0.5;
const EE_SHORTCUTS: usize = 50;

/// Dense end-effector waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EePath {
    pub poses: Vec<Pose>,
}

impl EePath {
    pub fn max_gap(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].translation - w[0].translation).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerState {
    pub q: JointConfig,
    pub q_dot: JointVector,
    pub waypoint_index: usize,
}

impl ControllerState {
    pub fn at_rest(q: JointConfig) -> Self {
        Self {
            q,
            q_dot: JointVector::zeros(),
            waypoint_index: 0,
        }
    }
}

/// Geodesic interpolation: linear in translation, constant angular rate in
/// rotation.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    let rel = rotation_log(&(a.rotation.transpose() * b.rotation));
    let angle = rel.norm();
    let step = if angle > 0.0 {
        axis_angle_matrix(&rel, angle * t)
    } else {
        Matrix3::identity()
    };
    Pose::new(a.rotation * step, a.translation + (b.translation - a.translation) * t)
}

fn se3_distance(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm() + ROTATION_WEIGHT * geodesic_angle(&a.rotation, &b.rotation)
}

fn gripper_edge_free(robot: &RobotModel, scene: &Scene, a: &Pose, b: &Pose) -> bool {
    let n = ((a.translation - b.translation).norm() / EE_CHECK)
        .max(geodesic_angle(&a.rotation, &b.rotation) / 0.1)
        .ceil()
        .max(1.0) as usize;
    (1..=n).all(|k| !gripper_in_collision(robot, &interpolate_pose(a, b, k as f64 / n as f64), scene, 0.0))
}

fn random_rotation_vector<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Vector3<f64> {
    let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    v.normalize() * rng.random::<f64>() * max_angle
}

/// Positions uniform in the reachable ball around the shoulder; orientations
/// near the start-goal geodesic.
fn sample_pose<R: Rng + ?Sized>(rng: &mut R, start: &Pose, goal: &Pose) -> Pose {
    let shoulder = SHOULDER;
    let p = loop {
        let c = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if c.norm() <= 1.0 {
            let p = shoulder + c * SAMPLE_REACH;
            if p.z >= 0.0 {
                break p;
            }
        }
    };
    let base = interpolate_pose(start, goal, rng.random::<f64>());
    let w = random_rotation_vector(rng, ORIENTATION_SPREAD);
    Pose::new(base.rotation * axis_angle_matrix(&w, w.norm()), p)
}

struct PoseTree {
    nodes: Vec<Pose>,
    parent: Vec<usize>,
}

impl PoseTree {
    fn nearest(&self, q: &Pose) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = se3_distance(n, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Steps toward `target`; `Some((index, reached))` unless blocked.
    fn extend(&mut self, robot: &RobotModel, scene: &Scene, target: &Pose) -> Option<(usize, bool)> {
        let near = self.nearest(target);
        let from = self.nodes[near];
        let d = se3_distance(&from, target);
        let (to, reached) = if d <= EE_STEP {
            (*target, true)
        } else {
            (interpolate_pose(&from, target, EE_STEP / d), false)
        };
        if !gripper_edge_free(robot, scene, &from, &to) {
            return None;
        }
        self.nodes.push(to);
        self.parent.push(near);
        Some((self.nodes.len() - 1, reached))
    }

    fn branch(&self, mut idx: usize) -> Vec<Pose> {
        let mut out = vec![self.nodes[idx]];
        while idx != 0 {
            idx = self.parent[idx];
            out.push(self.nodes[idx]);
        }
        out
    }
}

/// Bidirectional search for the floating gripper proxy, shortcut and
/// densified to the waypoint spacing.
pub fn plan_ee_path<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    robot: &RobotModel,
    rng: &mut R,
    timeout: f64,
) -> Result<EePath> {
    if !(timeout > 0.0) {
        return Err(Error::InvalidArgument("timeout must be positive".into()));
    }
    let scene = &problem.scene;
    let start = robot.ee_pose(&problem.start);
    let goal = problem.target;
    // no path exists when either end is blocked
    if gripper_in_collision(robot, &start, scene, 0.0) || gripper_in_collision(robot, &goal, scene, 0.0) {
        return Err(Error::SearchTimeout);
    }
    let coarse = if gripper_edge_free(robot, scene, &start, &goal) {
        vec![start, goal]
    } else {
        let budget = (timeout * EE_ITERATIONS_PER_SECOND).ceil() as usize;
        let path = pose_rrt_connect(robot, scene, &start, &goal, budget, rng).ok_or(Error::SearchTimeout)?;
        shortcut_poses(robot, scene, path, rng)
    };
    let path = densify_poses(&coarse);
    debug_assert!(path.poses.iter().all(|p| !gripper_in_collision(robot, p, scene, 0.0)));
    Ok(path)
}

fn pose_rrt_connect<R: Rng + ?Sized>(
    robot: &RobotModel,
    scene: &Scene,
    start: &Pose,
    goal: &Pose,
    budget: usize,
    rng: &mut R,
) -> Option<Vec<Pose>> {
    let mut a = PoseTree {
        nodes: vec![*start],
        parent: vec![0],
    };
    let mut b = PoseTree {
        nodes: vec![*goal],
        parent: vec![0],
    };
    let mut a_is_start = true;
    for _ in 0..budget {
        let sample = if rng.random::<f64>() < 0.1 {
            b.nodes[0]
        } else {
            sample_pose(rng, start, goal)
        };
        if let Some((i, _)) = a.extend(robot, scene, &sample) {
            let q = a.nodes[i];
            loop {
                match b.extend(robot, scene, &q) {
                    Some((j, true)) => {
                        let mut path = a.branch(i);
                        path.reverse();
                        path.extend_from_slice(&b.branch(j)[1..]);
                        if !a_is_start {
                            path.reverse();
                        }
                        return Some(path);
                    }
                    Some((_, false)) => continue,
                    None => break,
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    None
}

fn shortcut_poses<R: Rng + ?Sized>(robot: &RobotModel, scene: &Scene, mut path: Vec<Pose>, rng: &mut R) -> Vec<Pose> {
    for _ in 0..EE_SHORTCUTS {
        if path.len() < 3 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if gripper_edge_free(robot, scene, &path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Inserts geodesically interpolated poses so that translation gaps are at
/// most the waypoint spacing. Every inserted pose lies on the collision
/// check grid of its edge.
fn densify_poses(coarse: &[Pose]) -> EePath {
    let mut poses = vec![coarse[0]];
    for w in coarse.windows(2) {
        let n = ((w[1].translation - w[0].translation).norm() / WAYPOINT_SPACING)
            .ceil()
            .max(1.0) as usize;
        for k in 1..n {
            poses.push(interpolate_pose(&w[0], &w[1], k as f64 / n as f64));
        }
        poses.push(w[1]);
    }
    EePath { poses }
}

#[derive(Clone, Copy, Debug)]
pub struct FabricGains {
    /// Task-space attractor stiffness (s⁻²).
    pub stiffness: f64,
    pub damping: f64,
    /// Clearance below which obstacle repulsion is active (m).
    pub repulsion_range: f64,
    pub repulsion_static: f64,
    pub repulsion_dynamic: f64,
    /// Distance to a joint limit below which the barrier acts (rad).
    pub limit_margin: f64,
    pub limit_gain: f64,
    pub pinv_damping: f64,
}

impl Default for FabricGains {
    fn default() -> Self {
        let stiffness = 60.0;
        Self {
            stiffness,
            damping: 2.0 * stiffness.sqrt(),
            repulsion_range: 0.1,
            repulsion_static: 5.0,
            repulsion_dynamic: 30.0,
            limit_margin: 0.1,
            limit_gain: 40.0,
            pinv_damping: 0.05,
        }
    }
}

/// The four acceleration terms of one controller step, kept separate for
/// inspection.
#[derive(Clone, Copy, Debug)]
pub struct FabricTerms {
    pub attractor: JointVector,
    pub repulsion: JointVector,
    pub barrier: JointVector,
    pub damping: JointVector,
}

impl FabricTerms {
    pub fn total(&self) -> JointVector {
        self.attractor + self.repulsion + self.barrier + self.damping
    }
}

fn scene_gradient(scene: &Scene, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let (_, idx) = scene.sdf(p);
    idx.map(|i| scene.primitives[i].sdf_with_gradient(p))
}

pub fn fabric_terms(state: &ControllerState, target: &Pose, scene: &Scene, robot: &RobotModel, gains: &FabricGains) -> FabricTerms {
    let frames = robot.forward_kinematics(&state.q);
    let jac = robot.jacobian_from_frames(&frames);
    let err = pose_error(&frames[robot.ee_frame()], target);
    let jjt = jac * jac.transpose() + Matrix6::identity() * gains.pinv_damping.powi(2);
    let task: Vector6<f64> = err * gains.stiffness;
    let attractor = jjt
        .cholesky()
        .map(|c| jac.transpose() * c.solve(&task))
        .unwrap_or_else(JointVector::zeros);

    let axes = robot.joint_axes(&frames);
    let mut repulsion = JointVector::zeros();
    for s in robot.placed_spheres(&frames).iter().filter(|s| s.link >= 1) {
        let Some((d, n)) = scene_gradient(scene, &s.center) else {
            break;
        };
        let clearance = d - s.radius;
        if clearance >= gains.repulsion_range {
            continue;
        }
        let level = ((gains.repulsion_range - clearance) / gains.repulsion_range).min(2.0);
        let jp = robot.point_jacobian(&axes, s.link, &s.center);
        let approach = (-(jp * state.q_dot).dot(&n)).max(0.0);
        let magnitude = gains.repulsion_static * level.powi(4) + gains.repulsion_dynamic * level.powi(2) * approach;
        repulsion += jp.transpose() * (n * magnitude);
    }

    let mut barrier = JointVector::zeros();
    for j in 0..DOF {
        let to_lower = state.q.0[j] - robot.lower[j];
        let to_upper = robot.upper[j] - state.q.0[j];
        if to_lower < gains.limit_margin {
            barrier[j] += gains.limit_gain * ((gains.limit_margin - to_lower) / gains.limit_margin).powi(2);
        }
        if to_upper < gains.limit_margin {
            barrier[j] -= gains.limit_gain * ((gains.limit_margin - to_upper) / gains.limit_margin).powi(2);
        }
    }

    FabricTerms {
        attractor,
        repulsion,
        barrier,
        damping: -state.q_dot * gains.damping,
    }
}

/// One semi-implicit Euler step of the controller; positions are clamped
/// to the joint limits and velocity into a limit is zeroed.
pub fn fabric_step(state: &ControllerState, target: &Pose, scene: &Scene, robot: &RobotModel, dt: f64) -> ControllerState {
    fabric_step_with(state, target, scene, robot, dt, &FabricGains::default())
}

pub fn fabric_step_with(
    state: &ControllerState,
    target: &Pose,
    scene: &Scene,
    robot: &RobotModel,
    dt: f64,
    gains: &FabricGains,
) -> ControllerState {
    let acc = fabric_terms(state, target, scene, robot, gains).total();
    let mut q_dot = state.q_dot + acc * dt;
    let mut q = state.q.vector() + q_dot * dt;
    for j in 0..DOF {
        if q[j] < robot.lower[j] {
            q[j] = robot.lower[j];
            q_dot[j] = q_dot[j].max(0.0);
        } else if q[j] > robot.upper[j] {
            q[j] = robot.upper[j];
            q_dot[j] = q_dot[j].min(0.0);
        }
    }
    ControllerState {
        q: JointConfig::from_vector(&q),
        q_dot,
        waypoint_index: state.waypoint_index,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FollowOptions {
    pub control_dt: f64,
    pub waypoint_radius: f64,
    pub stall_steps: usize,
    /// Final-waypoint residual accepted once the arm has settled; larger
    /// residuals are left to goal revision or count as a stall.
    pub settle_radius: f64,
    pub settle_speed: f64,
    /// Distance within which a settled arm may pass an intermediate waypoint.
    pub pass_radius: f64,
    pub joint_speed: f64,
    pub dt: f64,
}

impl Default for FollowOptions {
    fn default() -> Self {
        Self {
            control_dt: CONTROL_DT,
            waypoint_radius: WAYPOINT_RADIUS,
            stall_steps: STALL_STEPS,
            settle_radius: 0.05,
            settle_speed: 0.01,
            pass_radius: 0.1,
            joint_speed: JOINT_SPEED,
            dt: DEFAULT_DT,
        }
    }
}

/// Raw controller rollout along `path`: every visited configuration,
/// starting with `start`.
pub fn follow_path(path: &EePath, start: &JointConfig, scene: &Scene, robot: &RobotModel, opts: &FollowOptions) -> Result<Vec<JointConfig>> {
    let last = path.poses.len() - 1;
    let mut state = ControllerState::at_rest(*start);
    let mut visited = vec![*start];
    let mut since_progress = 0;
    let mut best_final = f64::INFINITY;
    loop {
        let ee = robot.ee_pose(&state.q);
        while state.waypoint_index < last
            && (ee.translation - path.poses[state.waypoint_index].translation).norm() <= opts.waypoint_radius
        {
            state.waypoint_index += 1;
            since_progress = 0;
        }
        // An intermediate waypoint held off by repulsion is passed once the
        // arm settles nearby; only the final waypoint has to be reached.
        if state.waypoint_index < last
            && visited.len() > 1
            && state.q_dot.norm() <= opts.settle_speed
            && (ee.translation - path.poses[state.waypoint_index].translation).norm() <= opts.pass_radius
        {
            state.waypoint_index += 1;
            since_progress = 0;
        }
        if state.waypoint_index == last {
            let err = pose_error(&ee, &path.poses[last]);
            let pos = err.fixed_rows::<3>(0).norm();
            if pos <= 2e-3 && err.fixed_rows::<3>(3).norm() <= 2e-2 {
                break;
            }
            if pos <= opts.settle_radius && state.q_dot.norm() <= opts.settle_speed && visited.len() > 1 {
                break;
            }
            if pos < best_final - 1e-3 {
                best_final = pos;
                since_progress = 0;
            }
        }
        if since_progress >= opts.stall_steps {
            return Err(Error::Stuck);
        }
        state = fabric_step(&state, &path.poses[state.waypoint_index], scene, robot, opts.control_dt);
        visited.push(state.q);
        since_progress += 1;
    }
    Ok(visited)
}

/// Keeps configurations at least `spacing` apart; the last visited
/// configuration always ends the list.
pub fn downsample(visited: &[JointConfig], spacing: f64) -> Vec<JointConfig> {
    let mut kept = vec![visited[0]];
    for q in &visited[1..] {
        if kept.last().unwrap().distance(q) >= spacing {
            kept.push(*q);
        }
    }
    let end = *visited.last().unwrap();
    if *kept.last().unwrap() != end {
        if kept.len() > 1 {
            kept.pop();
        }
        kept.push(end);
    }
    kept
}

/// Natural spline through the downsampled configurations, sampled at
/// uniform joint-space arc length `speed · dt`.
pub fn retime_spline(visited: &[JointConfig], speed: f64, dt: f64) -> Result<(CubicSpline, Vec<f64>, Vec<JointConfig>)> {
    let kept = downsample(visited, 0.01);
    if kept.len() < 2 {
        let q = kept[0];
        let spline = CubicSpline::through(&[q, q]);
        return Ok((spline, vec![0.0, 0.0], vec![q, q]));
    }
    let spline = CubicSpline::through(&kept);
    let ts = spline.uniform_arc_parameters(speed * dt);
    let mut configs: Vec<JointConfig> = ts.iter().map(|&t| JointConfig::from_vector(&spline.eval(t))).collect();
    configs[0] = kept[0];
    Ok((spline, ts, configs))
}

/// Follows the waypoints with the controller, then retimes the visited
/// configurations. The result satisfies every validation clause except
/// the final-position one, which goal revision handles.
pub fn follow_and_retime(path: &EePath, start: &JointConfig, scene: &Scene, robot: &RobotModel) -> Result<Trajectory> {
    follow_and_retime_with(path, start, scene, robot, &FollowOptions::default())
}

pub fn follow_and_retime_with(
    path: &EePath,
    start: &JointConfig,
    scene: &Scene,
    robot: &RobotModel,
    opts: &FollowOptions,
) -> Result<Trajectory> {
    let visited = follow_path(path, start, scene, robot, opts)?;
    let (_, _, configs) = retime_spline(&visited, opts.joint_speed, opts.dt)?;
    let traj = Trajectory::new(configs, opts.dt, Provenance::Hybrid)?;
    let probe = PlanningProblem {
        scene: scene.clone(),
        start: *start,
        target: robot.ee_pose(traj.last()),
        target_volume_id: String::new(),
        problem_id: 0,
    };
    let limits = ValidationLimits {
        divergence_limit: f64::INFINITY,
        ..ValidationLimits::default()
    };
    let report = validate_with(&traj, &probe, robot, &limits);
    if !report.verdict {
        return Err(Error::ValidationFailed(describe(&report)));
    }
    Ok(traj)
}

/// The end-effector pose actually reached: FK of the final configuration.
pub fn hindsight_goal_revision(traj: &Trajectory, robot: &RobotModel) -> Pose {
    robot.ee_pose(traj.last())
}

/// `problem` with its target replaced by the reached pose; the volume label
/// is kept.
pub fn revise_problem(problem: &PlanningProblem, traj: &Trajectory, robot: &RobotModel) -> PlanningProblem {
    PlanningProblem {
        target: hindsight_goal_revision(traj, robot),
        ..problem.clone()
    }
}

/// Full hybrid pipeline. Returns the trajectory and the revised problem it
/// demonstrates. Runs whose pre-revision miss exceeds the divergence limit
/// or that end outside the target volume are rejected.
pub fn plan_hybrid<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    robot: &RobotModel,
    timeout: f64,
    rng: &mut R,
) -> Result<(Trajectory, PlanningProblem)> {
    let clock = Instant::now();
    let path = plan_ee_path(problem, robot, rng, timeout)?;
    let mut traj = follow_and_retime(&path, &problem.start, &problem.scene, robot)?;
    let reached = hindsight_goal_revision(&traj, robot);
    let miss = (reached.translation - problem.target.translation).norm();
    if miss > crate::expert_global::DIVERGENCE_LIMIT {
        return Err(Error::ValidationFailed(format!("controller missed the target by {miss:.3} m")));
    }
    if !in_correct_volume(&problem.scene, &problem.target_volume_id, &reached.translation) {
        return Err(Error::ValidationFailed("final end effector outside the target volume".into()));
    }
    traj.planning_time = clock.elapsed().as_secs_f64();
    let revised = revise_problem(problem, &traj, robot);
    Ok((traj, revised))
}
