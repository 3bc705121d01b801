//! Obstacle primitives, their analytic signed distance functions, surface
//! sampling, and robot collision predicates.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::kinematics::{JointConfig, RobotModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box {
        half_extents: Vector3<f64>,
    },
    /// Upright along the local z axis.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Half-space `z <= 0` in the local frame. `patch` bounds the region used
    /// when sampling or rendering the (otherwise infinite) surface.
    Floor {
        patch: Vector2<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Tabletop,
    Cubby,
    Dresser,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Tabletop, EnvKind::Cubby, EnvKind::Dresser];

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Tabletop => "tabletop",
            EnvKind::Cubby => "cubby",
            EnvKind::Dresser => "dresser",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabletop" => Ok(EnvKind::Tabletop),
            "cubby" => Ok(EnvKind::Cubby),
            "dresser" => Ok(EnvKind::Dresser),
            other => Err(crate::Error::InvalidArgument(format!("unknown environment kind {other}"))),
        }
    }
}

/// Labeled box region, axis-aligned in its own frame (`pose`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalVolume {
    pub label: String,
    pub pose: Pose,
    pub half_extents: Vector3<f64>,
    /// Exclusive volumes (cubby holes, drawers) must not host both the start
    /// and the target of a problem.
    pub exclusive: bool,
}

impl GoalVolume {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.pose.inverse().transform_point(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R, margin: &Vector3<f64>) -> Vector3<f64> {
        let mut local = Vector3::zeros();
        for i in 0..3 {
            let h = (self.half_extents[i] - margin[i]).max(0.0);
            local[i] = (rng.random::<f64>() * 2.0 - 1.0) * h;
        }
        self.pose.transform_point(&local)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub env_kind: EnvKind,
    pub goal_volumes: Vec<GoalVolume>,
    pub rng_seed: u64,
}

impl Primitive {
    pub fn new(shape: Shape, pose: Pose) -> Self {
        Self { shape, pose }
    }

    pub fn cuboid(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self::new(Shape::Box { half_extents }, Pose::from_translation(center))
    }

    pub fn is_valid(&self) -> bool {
        let dims_ok = match self.shape {
            Shape::Box { half_extents } => half_extents.iter().all(|&v| v > 0.0),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0,
            Shape::Floor { patch } => patch.iter().all(|&v| v > 0.0),
        };
        dims_ok && self.pose.is_valid()
    }

    pub fn sdf_local(&self, p: &Vector3<f64>) -> f64 {
        match self.shape {
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let d = Vector2::new(p.xy().norm() - radius, p.z.abs() - half_height);
                d.x.max(d.y).min(0.0) + d.map(|v| v.max(0.0)).norm()
            }
            Shape::Floor { .. } => p.z,
        }
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let local = self.pose.rotation.transpose() * (p - self.pose.translation);
        self.sdf_local(&local)
    }

    /// Signed distance and its gradient (unit length almost everywhere).
    pub fn sdf_with_gradient(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let local = self.pose.rotation.transpose() * (p - self.pose.translation);
        let (d, g) = match self.shape {
            Shape::Box { half_extents } => box_sdf_grad(&local, &half_extents),
            Shape::Cylinder {
                radius,
                half_height,
            } => cylinder_sdf_grad(&local, radius, half_height),
            Shape::Floor { .. } => (local.z, Vector3::z()),
        };
        (d, self.pose.rotation * g)
    }

    /// Radius of a sphere about the pose origin enclosing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Cylinder {
                radius,
                half_height,
            } => (radius * radius + half_height * half_height).sqrt(),
            Shape::Floor { .. } => f64::INFINITY,
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.shape {
            Shape::Box { half_extents: h } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
            Shape::Cylinder {
                radius,
                half_height,
            } => std::f64::consts::TAU * radius * (2.0 * half_height + radius),
            Shape::Floor { patch } => 4.0 * patch.x * patch.y,
        }
    }

    /// Uniform point on this primitive's own surface (world frame), plus a
    /// face index used by tests (box: 0..6 as ±x, ±y, ±z; cylinder: 0 side,
    /// 1 top, 2 bottom; floor: 0).
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector3<f64>, usize) {
        let (local, face) = match self.shape {
            Shape::Box { half_extents: h } => {
                let areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
                let face = pick_weighted(rng, &areas);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vector3::zeros();
                for i in 0..3 {
                    p[i] = if i == axis {
                        sign * h[i]
                    } else {
                        (rng.random::<f64>() * 2.0 - 1.0) * h[i]
                    };
                }
                (p, face)
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let side = 2.0 * radius * 2.0 * half_height;
                let cap = radius * radius;
                let face = pick_weighted(rng, &[side, cap, cap]);
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                match face {
                    0 => (
                        Vector3::new(
                            radius * theta.cos(),
                            radius * theta.sin(),
                            (rng.random::<f64>() * 2.0 - 1.0) * half_height,
                        ),
                        0,
                    ),
                    _ => {
                        let r = radius * rng.random::<f64>().sqrt();
                        let z = if face == 1 { half_height } else { -half_height };
                        (Vector3::new(r * theta.cos(), r * theta.sin(), z), face)
                    }
                }
            }
            Shape::Floor { patch } => (
                Vector3::new(
                    (rng.random::<f64>() * 2.0 - 1.0) * patch.x,
                    (rng.random::<f64>() * 2.0 - 1.0) * patch.y,
                    0.0,
                ),
                0,
            ),
        };
        (self.pose.transform_point(&local), face)
    }
}

fn pick_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

fn box_sdf_grad(p: &Vector3<f64>, h: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let q = p.abs() - h;
    let sign = p.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
    let outside = q.map(|v| v.max(0.0));
    let n = outside.norm();
    if n > 0.0 {
        (n, outside.component_mul(&sign) / n)
    } else {
        let axis = if q.x >= q.y && q.x >= q.z {
            0
        } else if q.y >= q.z {
            1
        } else {
            2
        };
        let mut g = Vector3::zeros();
        g[axis] = sign[axis];
        (q[axis], g)
    }
}

fn cylinder_sdf_grad(p: &Vector3<f64>, radius: f64, half_height: f64) -> (f64, Vector3<f64>) {
    let rxy = p.xy().norm();
    let radial = if rxy > 0.0 {
        Vector3::new(p.x / rxy, p.y / rxy, 0.0)
    } else {
        Vector3::x()
    };
    let axial = Vector3::new(0.0, 0.0, if p.z < 0.0 { -1.0 } else { 1.0 });
    let d = Vector2::new(rxy - radius, p.z.abs() - half_height);
    let out = d.map(|v| v.max(0.0));
    let n = out.norm();
    if n > 0.0 {
        (n, (radial * out.x + axial * out.y) / n)
    } else if d.x >= d.y {
        (d.x, radial)
    } else {
        (d.y, axial)
    }
}

impl Scene {
    /// A scene with no obstacles; generated scenes are never empty.
    pub fn empty() -> Self {
        Self {
            primitives: Vec::new(),
            env_kind: EnvKind::Tabletop,
            goal_volumes: Vec::new(),
            rng_seed: 0,
        }
    }

    pub fn with_primitives(primitives: Vec<Primitive>) -> Self {
        Self {
            primitives,
            ..Self::empty()
        }
    }

    /// Minimum signed distance over primitives and the index attaining it.
    pub fn sdf(&self, p: &Vector3<f64>) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.sdf(p);
            if d < best.0 {
                best = (d, Some(i));
            }
        }
        best
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.sdf(p).0
    }

    /// True if the ball of radius `r` about `c` comes within `margin` of
    /// any obstacle.
    pub fn sphere_collides(&self, c: &Vector3<f64>, r: f64, margin: f64) -> bool {
        let reach = r + margin;
        self.primitives.iter().any(|prim| {
            let bound = prim.bounding_radius();
            if bound.is_finite() && (c - prim.pose.translation).norm() - bound >= reach {
                return false;
            }
            prim.sdf(c) < reach
        })
    }

    /// Volume whose label equals `label`.
    pub fn volume(&self, label: &str) -> Option<&GoalVolume> {
        self.goal_volumes.iter().find(|v| v.label == label)
    }

    pub fn is_valid(&self) -> bool {
        !self.primitives.is_empty()
            && self.primitives.iter().all(Primitive::is_valid)
            && self.goal_volumes.iter().all(|v| v.half_extents.iter().all(|&h| h > 0.0))
    }
}

/// `sdf_eval`: scene signed distance and the argmin primitive.
pub fn sdf_eval(scene: &Scene, p: &Vector3<f64>) -> (f64, Option<usize>) {
    scene.sdf(p)
}

/// Area-weighted uniform samples on the exposed surface of the scene.
///
/// Points falling inside another primitive are rejected, so every returned
/// point has `|sdf| <= 1e-6`.
pub fn sample_surface_cloud<R: Rng + ?Sized>(scene: &Scene, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    sample_surface_cloud_labeled(scene, n, rng)
        .into_iter()
        .map(|(p, _, _)| p)
        .collect()
}

/// As [`sample_surface_cloud`] with the source primitive and face index.
pub fn sample_surface_cloud_labeled<R: Rng + ?Sized>(
    scene: &Scene,
    n: usize,
    rng: &mut R,
) -> Vec<(Vector3<f64>, usize, usize)> {
    let areas: Vec<f64> = scene.primitives.iter().map(Primitive::surface_area).collect();
    let mut out = Vec::with_capacity(n);
    if areas.is_empty() {
        return out;
    }
    let max_draws = 1000 + 200 * n;
    let mut draws = 0;
    while out.len() < n && draws < max_draws {
        draws += 1;
        let idx = pick_weighted(rng, &areas);
        let (p, face) = scene.primitives[idx].sample_surface(rng);
        if scene.sdf(&p).0.abs() <= 1e-6 {
            out.push((p, idx, face));
        }
    }
    out
}

/// Sphere-based collision predicate: environment (links other than the
/// base) and self collision.
pub fn config_in_collision(robot: &RobotModel, q: &JointConfig, scene: &Scene, margin: f64) -> bool {
    let frames = robot.forward_kinematics(q);
    let spheres = robot.placed_spheres(&frames);
    spheres
        .iter()
        .filter(|s| s.link >= 1)
        .any(|s| scene.sphere_collides(&s.center, s.radius, margin))
        || robot.self_collision_from_spheres(&spheres)
}

/// Environment-only half of [`config_in_collision`].
pub fn config_env_collision(robot: &RobotModel, q: &JointConfig, scene: &Scene, margin: f64) -> bool {
    let frames = robot.forward_kinematics(q);
    robot
        .placed_spheres(&frames)
        .iter()
        .filter(|s| s.link >= 1)
        .any(|s| scene.sphere_collides(&s.center, s.radius, margin))
}

/// Floating-gripper proxy collision at an end-effector pose.
pub fn gripper_in_collision(robot: &RobotModel, ee: &Pose, scene: &Scene, margin: f64) -> bool {
    robot
        .gripper_proxy
        .iter()
        .any(|s| scene.sphere_collides(&ee.transform_point(&s.center), s.radius, margin))
}
