//! Serial 7-DOF manipulator model.
//!
//! Frame indexing used throughout the crate: frame 0 is the fixed base,
//! frames 1..=7 are the links moved by joints 1..=7, and the remaining frames
//! are rigid tool frames chained after link 7 (hand, then tool centre point).
//! The last frame is the end effector.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{axis_angle_matrix, rotation_log, Pose};
use crate::scene::{config_in_collision, Scene};
use crate::Error;

pub const DOF: usize = 7;
pub const NUM_SURFACE_ANCHORS: usize = 1024;
pub const ROBOT_FORMAT_VERSION: u32 = 1;

pub type JointVector = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;
pub type PointJacobian = SMatrix<f64, 3, DOF>;

/// Joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig(pub [f64; DOF]);

impl JointConfig {
    pub fn zeros() -> Self {
        Self([0.0; DOF])
    }

    pub fn vector(&self) -> JointVector {
        JointVector::from_row_slice(&self.0)
    }

    pub fn from_vector(v: &JointVector) -> Self {
        let mut q = [0.0; DOF];
        q.copy_from_slice(v.as_slice());
        Self(q)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        (self.vector() - other.vector()).norm()
    }

    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        let mut out = [0.0; DOF];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.0[j] + (other.0[j] - self.0[j]) * t;
        }
        JointConfig(out)
    }
}

/// Per-joint affine image of a configuration in [-1, 1] (unclamped when it
/// represents a displacement).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfig(pub [f64; DOF]);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Fixed transform from the parent frame to the joint frame at q = 0.
    pub origin: Pose,
    /// Unit rotation axis in the joint frame.
    pub axis: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSphere {
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAnchor {
    pub link: usize,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub lower: [f64; DOF],
    pub upper: [f64; DOF],
    pub tool_frames: Vec<Pose>,
    pub neutral: JointConfig,
    pub collision_spheres: Vec<CollisionSphere>,
    /// Floating-gripper proxy; centres expressed in the end-effector frame.
    pub gripper_proxy: Vec<CollisionSphere>,
    /// Link pairs (a < b) excluded from self-collision checks.
    pub self_collision_ignore: Vec<(usize, usize)>,
    pub surface_anchors: Vec<SurfaceAnchor>,
}

/// World-frame geometry of the collision spheres at one configuration.
#[derive(Clone, Debug)]
pub struct PlacedSphere {
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl RobotModel {
    /// The bundled Panda-like arm.
    pub fn panda() -> Self {
        Self::from_json(include_str!("../assets/panda_like.json"))
            .expect("bundled robot description is valid")
    }

    pub fn num_frames(&self) -> usize {
        1 + DOF + self.tool_frames.len()
    }

    pub fn ee_frame(&self) -> usize {
        self.num_frames() - 1
    }

    /// Index of the first tool frame (the hand).
    pub fn hand_frame(&self) -> usize {
        1 + DOF
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidRobot(m));
        if self.joints.len() != DOF {
            return bad(format!("expected {DOF} joints, found {}", self.joints.len()));
        }
        for j in 0..DOF {
            if !(self.lower[j] < self.upper[j]) {
                return bad(format!("joint {j}: lower limit must be below upper limit"));
            }
            if (self.joints[j].axis.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("joint {j}: axis is not unit length"));
            }
            if !self.joints[j].origin.is_valid() {
                return bad(format!("joint {j}: origin rotation is not orthonormal"));
            }
        }
        if self.surface_anchors.len() != NUM_SURFACE_ANCHORS {
            return bad(format!(
                "expected {NUM_SURFACE_ANCHORS} surface anchors, found {}",
                self.surface_anchors.len()
            ));
        }
        let nf = self.num_frames();
        for s in self.collision_spheres.iter().chain(&self.gripper_proxy) {
            if !(s.radius > 0.0) {
                return bad("collision sphere radius must be positive".into());
            }
            if s.link >= nf {
                return bad(format!("sphere bound to missing frame {}", s.link));
            }
        }
        if let Some(a) = self.surface_anchors.iter().find(|a| a.link >= nf) {
            return bad(format!("anchor bound to missing frame {}", a.link));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        (0..DOF).all(|j| q.0[j] >= self.lower[j] && q.0[j] <= self.upper[j])
    }

    pub fn clamp_to_limits(&self, q: &JointConfig) -> JointConfig {
        let mut out = q.0;
        for (j, v) in out.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
        JointConfig(out)
    }

    pub fn random_config<R: Rng + ?Sized>(&self, rng: &mut R) -> JointConfig {
        let mut q = [0.0; DOF];
        for (j, v) in q.iter_mut().enumerate() {
            *v = self.lower[j] + rng.random::<f64>() * (self.upper[j] - self.lower[j]);
        }
        JointConfig(q)
    }

    /// Poses of every frame (base, seven links, tool frames); the end
    /// effector is last.
    pub fn forward_kinematics(&self, q: &JointConfig) -> Vec<Pose> {
        let mut frames = Vec::with_capacity(self.num_frames());
        let mut current = Pose::identity();
        frames.push(current);
        for (j, joint) in self.joints.iter().enumerate() {
            let rot = Pose::new(axis_angle_matrix(&joint.axis, q.0[j]), Vector3::zeros());
            current = current.compose(&joint.origin).compose(&rot);
            frames.push(current);
        }
        for tool in &self.tool_frames {
            current = current.compose(tool);
            frames.push(current);
        }
        frames
    }

    pub fn ee_pose(&self, q: &JointConfig) -> Pose {
        *self.forward_kinematics(q).last().unwrap()
    }

    /// World axis and origin of each joint given precomputed frames.
    pub fn joint_axes(&self, frames: &[Pose]) -> [(Vector3<f64>, Vector3<f64>); DOF] {
        let mut out = [(Vector3::zeros(), Vector3::zeros()); DOF];
        for (j, o) in out.iter_mut().enumerate() {
            let f = &frames[j + 1];
            *o = (f.rotation * self.joints[j].axis, f.translation);
        }
        out
    }

    /// Positional Jacobian of a world point rigidly attached to `link`.
    pub fn point_jacobian(
        &self,
        axes: &[(Vector3<f64>, Vector3<f64>); DOF],
        link: usize,
        p: &Vector3<f64>,
    ) -> PointJacobian {
        let mut jac = PointJacobian::zeros();
        for (j, (axis, origin)) in axes.iter().enumerate() {
            if link > j {
                let col = axis.cross(&(p - origin));
                jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
            }
        }
        jac
    }

    /// Geometric Jacobian of the end-effector origin: rows 0..3 linear,
    /// rows 3..6 angular velocity.
    pub fn jacobian(&self, q: &JointConfig) -> Jacobian {
        let frames = self.forward_kinematics(q);
        self.jacobian_from_frames(&frames)
    }

    pub fn jacobian_from_frames(&self, frames: &[Pose]) -> Jacobian {
        let axes = self.joint_axes(frames);
        let p = frames[self.ee_frame()].translation;
        let mut jac = Jacobian::zeros();
        for (j, (axis, origin)) in axes.iter().enumerate() {
            let lin = axis.cross(&(p - origin));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(axis);
        }
        jac
    }

    /// The fixed surface points in a stable order.
    pub fn surface_points(&self, q: &JointConfig) -> Vec<Vector3<f64>> {
        let frames = self.forward_kinematics(q);
        self.surface_points_from_frames(&frames)
    }

    pub fn surface_points_from_frames(&self, frames: &[Pose]) -> Vec<Vector3<f64>> {
        self.surface_anchors
            .iter()
            .map(|a| frames[a.link].transform_point(&a.offset))
            .collect()
    }

    pub fn placed_spheres(&self, frames: &[Pose]) -> Vec<PlacedSphere> {
        self.collision_spheres
            .iter()
            .map(|s| PlacedSphere {
                link: s.link,
                center: frames[s.link].transform_point(&s.center),
                radius: s.radius,
            })
            .collect()
    }

    /// True for same-link pairs and listed adjacent pairs.
    pub fn ignores_pair(&self, a: usize, b: usize) -> bool {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a == b || self.self_collision_ignore.contains(&(a, b))
    }

    /// True if two spheres on a non-ignored link pair overlap.
    pub fn self_collision_from_spheres(&self, spheres: &[PlacedSphere]) -> bool {
        for (i, a) in spheres.iter().enumerate() {
            for b in &spheres[i + 1..] {
                if self.ignores_pair(a.link, b.link) {
                    continue;
                }
                let r = a.radius + b.radius;
                if (a.center - b.center).norm_squared() < r * r {
                    return true;
                }
            }
        }
        false
    }

    pub fn self_collision(&self, q: &JointConfig) -> bool {
        let frames = self.forward_kinematics(q);
        self.self_collision_from_spheres(&self.placed_spheres(&frames))
    }

    pub fn normalize_config(&self, q: &JointConfig) -> NormalizedConfig {
        let mut out = [0.0; DOF];
        for (j, o) in out.iter_mut().enumerate() {
            *o = 2.0 * (q.0[j] - self.lower[j]) / (self.upper[j] - self.lower[j]) - 1.0;
        }
        NormalizedConfig(out)
    }

    /// Clamps each entry to [-1, 1] and maps back to radians.
    pub fn unnormalize_config(&self, qn: &NormalizedConfig) -> JointConfig {
        let mut out = [0.0; DOF];
        for (j, o) in out.iter_mut().enumerate() {
            let c = qn.0[j].clamp(-1.0, 1.0);
            // endpoints map exactly onto the limits
            *o = match c {
                1.0 => self.upper[j],
                -1.0 => self.lower[j],
                _ => (self.lower[j] + (c + 1.0) * 0.5 * (self.upper[j] - self.lower[j])).clamp(self.lower[j], self.upper[j]),
            };
        }
        JointConfig(out)
    }

    /// Half-range of each joint; the derivative of `unnormalize_config`.
    pub fn half_ranges(&self) -> [f64; DOF] {
        let mut out = [0.0; DOF];
        for (j, o) in out.iter_mut().enumerate() {
            *o = 0.5 * (self.upper[j] - self.lower[j]);
        }
        out
    }

    /// Upper bound on the distance from the base to the end effector.
    pub fn max_reach(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation.norm())
            .chain(self.tool_frames.iter().map(|t| t.translation.norm()))
            .sum()
    }
}

/// Pose error as a 6-vector: translation difference and rotation vector of
/// `target · currentᵀ`.
pub fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let dp = target.translation - current.translation;
    let dr = rotation_log(&(target.rotation * current.rotation.transpose()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

#[derive(Clone, Copy, Debug)]
pub struct IkOptions {
    pub max_attempts: usize,
    pub iterations_per_attempt: usize,
    pub damping: f64,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    pub collision_margin: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_attempts: 1000,
            iterations_per_attempt: 200,
            damping: 1e-2,
            position_tolerance: 1e-3,
            orientation_tolerance: 1e-2,
            collision_margin: 0.0,
        }
    }
}

/// Damped-least-squares IK from random restarts; succeeds only with a
/// collision-free, in-limit solution.
pub fn ik_solve<R: Rng + ?Sized>(
    robot: &RobotModel,
    target: &Pose,
    scene: &Scene,
    rng: &mut R,
    max_attempts: usize,
) -> Result<JointConfig, Error> {
    let opts = IkOptions {
        max_attempts,
        ..IkOptions::default()
    };
    ik_solve_with(robot, target, scene, rng, &opts, None)
}

/// As [`ik_solve`]; when `seed` is given the first attempt starts from it.
pub fn ik_solve_with<R: Rng + ?Sized>(
    robot: &RobotModel,
    target: &Pose,
    scene: &Scene,
    rng: &mut R,
    opts: &IkOptions,
    seed: Option<&JointConfig>,
) -> Result<JointConfig, Error> {
    if opts.max_attempts == 0 {
        return Err(Error::InvalidArgument("max_attempts must be at least 1".into()));
    }
    if target.translation.norm() > robot.max_reach() + opts.position_tolerance {
        return Err(Error::Unreachable);
    }
    for attempt in 0..opts.max_attempts {
        let start = match (attempt, seed) {
            (0, Some(s)) => robot.clamp_to_limits(s),
            _ => robot.random_config(rng),
        };
        if let Some(q) = dls_converge(robot, target, start, opts) {
            if !config_in_collision(robot, &q, scene, opts.collision_margin) {
                return Ok(q);
            }
        }
    }
    Err(Error::Unreachable)
}

/// Runs damped least squares from `q`; returns the in-limit solution if the
/// tolerances are met.
pub fn dls_converge(
    robot: &RobotModel,
    target: &Pose,
    mut q: JointConfig,
    opts: &IkOptions,
) -> Option<JointConfig> {
    let lambda2 = opts.damping * opts.damping;
    for _ in 0..opts.iterations_per_attempt {
        let frames = robot.forward_kinematics(&q);
        let err = pose_error(&frames[robot.ee_frame()], target);
        let pos_err = err.fixed_rows::<3>(0).norm();
        let rot_err = err.fixed_rows::<3>(3).norm();
        if pos_err <= opts.position_tolerance && rot_err <= opts.orientation_tolerance {
            return Some(q);
        }
        let jac = robot.jacobian_from_frames(&frames);
        let jjt = jac * jac.transpose() + Matrix6::identity() * lambda2;
        let solve = jjt.cholesky()?.solve(&err);
        let mut dq = jac.transpose() * solve;
        let n = dq.norm();
        if n > 0.5 {
            dq *= 0.5 / n;
        }
        q = robot.clamp_to_limits(&JointConfig::from_vector(&(q.vector() + dq)));
    }
    let err = pose_error(&robot.ee_pose(&q), target);
    (err.fixed_rows::<3>(0).norm() <= opts.position_tolerance
        && err.fixed_rows::<3>(3).norm() <= opts.orientation_tolerance)
        .then_some(q)
}

// ---------------------------------------------------------------------------
// Robot description file

#[derive(Serialize, Deserialize)]
struct RobotFile {
    format_version: u32,
    name: String,
    joints: Vec<JointEntry>,
    tool_frames: Vec<[f64; 16]>,
    neutral: [f64; DOF],
    collision_spheres: Vec<SphereEntry>,
    gripper_proxy: Vec<SphereEntry>,
    self_collision_ignore: Vec<[usize; 2]>,
    surface_anchors: Vec<AnchorEntry>,
}

#[derive(Serialize, Deserialize)]
struct JointEntry {
    origin: [f64; 16],
    axis: [f64; 3],
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct SphereEntry {
    link: usize,
    center: [f64; 3],
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct AnchorEntry {
    link: usize,
    offset: [f64; 3],
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn a3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl RobotModel {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let file: RobotFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidRobot(e.to_string()))?;
        if file.format_version != ROBOT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: ROBOT_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        let sphere = |s: &SphereEntry| CollisionSphere {
            link: s.link,
            center: v3(&s.center),
            radius: s.radius,
        };
        let mut lower = [0.0; DOF];
        let mut upper = [0.0; DOF];
        for (j, e) in file.joints.iter().take(DOF).enumerate() {
            lower[j] = e.lower;
            upper[j] = e.upper;
        }
        let robot = RobotModel {
            name: file.name,
            joints: file
                .joints
                .iter()
                .map(|e| JointSpec {
                    origin: Pose::from_row_major(&e.origin),
                    axis: v3(&e.axis),
                })
                .collect(),
            lower,
            upper,
            tool_frames: file.tool_frames.iter().map(Pose::from_row_major).collect(),
            neutral: JointConfig(file.neutral),
            collision_spheres: file.collision_spheres.iter().map(sphere).collect(),
            gripper_proxy: file.gripper_proxy.iter().map(sphere).collect(),
            self_collision_ignore: file
                .self_collision_ignore
                .iter()
                .map(|p| (p[0].min(p[1]), p[0].max(p[1])))
                .collect(),
            surface_anchors: file
                .surface_anchors
                .iter()
                .map(|a| SurfaceAnchor {
                    link: a.link,
                    offset: v3(&a.offset),
                })
                .collect(),
        };
        robot.validate()?;
        Ok(robot)
    }

    pub fn to_json(&self) -> String {
        let sphere = |s: &CollisionSphere| SphereEntry {
            link: s.link,
            center: a3(&s.center),
            radius: s.radius,
        };
        let file = RobotFile {
            format_version: ROBOT_FORMAT_VERSION,
            name: self.name.clone(),
            joints: self
                .joints
                .iter()
                .enumerate()
                .map(|(j, js)| JointEntry {
                    origin: js.origin.to_row_major(),
                    axis: a3(&js.axis),
                    lower: self.lower[j],
                    upper: self.upper[j],
                })
                .collect(),
            tool_frames: self.tool_frames.iter().map(|t| t.to_row_major()).collect(),
            neutral: self.neutral.0,
            collision_spheres: self.collision_spheres.iter().map(sphere).collect(),
            gripper_proxy: self.gripper_proxy.iter().map(sphere).collect(),
            self_collision_ignore: self.self_collision_ignore.iter().map(|&(a, b)| [a, b]).collect(),
            surface_anchors: self
                .surface_anchors
                .iter()
                .map(|a| AnchorEntry {
                    link: a.link,
                    offset: a3(&a.offset),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("robot serializes");
        s.push('\n');
        s
    }
}

/// Rotation matrix helper used by tests and builders.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    axis_angle_matrix(axis, angle)
}
