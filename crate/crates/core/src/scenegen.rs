//! Procedural tabletop, cubby and dresser environments and start/target
//! problem sampling.
//!
//! Robot base at the origin, x forward, z up. Every scene carries a floor
//! half-space at z = 0 as primitive 0.

use std::f64::consts::{FRAC_PI_6, PI};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{frame_from_z, sample_cone, Pose};
use crate::kinematics::{ik_solve_with, IkOptions, JointConfig, RobotModel, DOF};
use crate::scene::{config_in_collision, EnvKind, GoalVolume, Primitive, Scene, Shape};
use crate::{Error, Result};

pub const GENERATION_ROUNDS: usize = 100;
/// Half-angle of the target approach-direction cone.
pub const TARGET_CONE: f64 = PI / 6.0;
pub const DRAWER_MIN_EXTENT: f64 = 0.12;
pub const DRAWER_SPLIT_DECAY: f64 = 0.8;

pub const SHOULDER: Vector3<f64> = Vector3::new(0.0, 0.0, 0.333);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub scene: Scene,
    pub start: JointConfig,
    pub target: Pose,
    pub target_volume_id: String,
    pub problem_id: u64,
}

impl PlanningProblem {
    pub fn target_volume(&self) -> Option<&GoalVolume> {
        self.scene.volume(&self.target_volume_id)
    }
}

/// Generator bookkeeping exposed to tests.
#[cfg_attr(not(test), allow(dead_code))]
#[derive(Clone, Debug, Default)]
pub(crate) struct LayoutInfo {
    pub table_height: f64,
    pub object_count: usize,
    pub wall_thickness: f64,
    pub yaw: f64,
    /// Per recursion depth: (cells visited, cells split).
    pub split_stats: Vec<(usize, usize)>,
    pub drawer_count: usize,
}

pub fn generate_scene<R: Rng + ?Sized>(kind: EnvKind, rng: &mut R) -> Result<Scene> {
    generate_with_info(kind, rng).map(|(s, _)| s)
}

pub(crate) fn generate_with_info<R: Rng + ?Sized>(kind: EnvKind, rng: &mut R) -> Result<(Scene, LayoutInfo)> {
    let rng_seed = rng.random::<u64>();
    for _ in 0..GENERATION_ROUNDS {
        let built = match kind {
            EnvKind::Tabletop => tabletop(rng),
            EnvKind::Cubby => Some(cubby(rng)),
            EnvKind::Dresser => dresser(rng),
        };
        if let Some((primitives, goal_volumes, info)) = built {
            let scene = Scene {
                primitives,
                env_kind: kind,
                goal_volumes,
                rng_seed,
            };
            return Ok((scene, info));
        }
    }
    Err(Error::GenerationExhausted(GENERATION_ROUNDS))
}

fn floor() -> Primitive {
    Primitive::new(
        Shape::Floor {
            patch: Vector2::new(1.5, 1.5),
        },
        Pose::identity(),
    )
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

/// Box spanning `lo..hi` in the coordinates of `frame`.
fn frame_box(frame: &Pose, lo: Vector3<f64>, hi: Vector3<f64>) -> Primitive {
    Primitive::new(
        Shape::Box {
            half_extents: (hi - lo) / 2.0,
        },
        frame.compose(&Pose::from_translation((lo + hi) / 2.0)),
    )
}

fn frame_volume(frame: &Pose, lo: Vector3<f64>, hi: Vector3<f64>, label: String, exclusive: bool) -> GoalVolume {
    GoalVolume {
        label,
        pose: frame.compose(&Pose::from_translation((lo + hi) / 2.0)),
        half_extents: (hi - lo) / 2.0,
        exclusive,
    }
}

type Layout = (Vec<Primitive>, Vec<GoalVolume>, LayoutInfo);

/// Axis-aligned table top rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn clip(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        };
        (r.x1 > r.x0 && r.y1 > r.y0).then_some(r)
    }

    fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

fn tabletop<R: Rng + ?Sized>(rng: &mut R) -> Option<Layout> {
    let h = uniform(rng, 0.0, 0.40);
    let x0 = uniform(rng, 0.20, 0.35);
    let front = Rect {
        x0,
        x1: x0 + uniform(rng, 0.90, 1.10),
        y0: -uniform(rng, 1.025, 1.20),
        y1: uniform(rng, 1.025, 1.20),
    };
    let mut tables = vec![front];
    if rng.random::<bool>() {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let inner = uniform(rng, 0.25, 0.40);
        let width = uniform(rng, 0.425, 0.725);
        let depth = uniform(rng, 0.90, 2.475);
        let x1 = front.x0 + 0.05;
        let (y0, y1) = if side > 0.0 {
            (inner, inner + width)
        } else {
            (-inner - width, -inner)
        };
        tables.push(Rect {
            x0: x1 - depth,
            x1,
            y0,
            y1,
        });
    }

    let mut primitives = vec![floor()];
    for t in &tables {
        primitives.push(Primitive::cuboid(
            Vector3::new((t.x0 + t.x1) / 2.0, (t.y0 + t.y1) / 2.0, (h - 0.02) / 2.0),
            Vector3::new((t.x1 - t.x0) / 2.0, (t.y1 - t.y0) / 2.0, (h + 0.02) / 2.0),
        ));
    }

    let reach = Rect {
        x0: -0.85,
        x1: 0.85,
        y0: -0.85,
        y1: 0.85,
    };
    let areas: Vec<Rect> = tables.iter().filter_map(|t| t.clip(&reach)).collect();
    let count = rng.random_range(3..=15usize);
    for _ in 0..count {
        let height = uniform(rng, 0.05, 0.35);
        let (shape, footprint) = if rng.random::<bool>() {
            let half = Vector3::new(uniform(rng, 0.025, 0.075), uniform(rng, 0.025, 0.075), height / 2.0);
            (Shape::Box { half_extents: half }, half.xy().norm())
        } else {
            let radius = uniform(rng, 0.05, 0.15);
            (
                Shape::Cylinder {
                    radius,
                    half_height: height / 2.0,
                },
                radius,
            )
        };
        let yaw = uniform(rng, -PI, PI);
        let placed = (0..100).find_map(|_| {
            let total: f64 = areas.iter().map(Rect::area).sum();
            let mut pick = rng.random::<f64>() * total;
            let area = areas
                .iter()
                .find(|a| {
                    let hit = pick < a.area();
                    pick -= a.area();
                    hit
                })
                .unwrap_or(&areas[0]);
            let x = uniform(rng, area.x0, area.x1);
            let y = uniform(rng, area.y0, area.y1);
            let on_table = tables.iter().any(|t| {
                x - footprint >= t.x0 && x + footprint <= t.x1 && y - footprint >= t.y0 && y + footprint <= t.y1
            });
            let clear_of_base = Vector2::new(x, y).norm() - footprint >= 0.25;
            (on_table && clear_of_base).then_some(Vector2::new(x, y))
        })?;
        let pose = Pose::new(
            crate::geometry::axis_angle_matrix(&Vector3::z(), yaw),
            Vector3::new(placed.x, placed.y, h + height / 2.0),
        );
        primitives.push(Primitive::new(shape, pose));
    }

    let mut volumes = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let region = Rect {
            x0: t.x0 + 0.05,
            x1: t.x1.min(0.80),
            y0: t.y0.max(-0.60),
            y1: t.y1.min(0.60),
        };
        if region.x1 - region.x0 < 0.1 || region.y1 - region.y0 < 0.1 {
            continue;
        }
        let label = if i == 0 { "table-front" } else { "table-side" };
        volumes.push(frame_volume(
            &Pose::identity(),
            Vector3::new(region.x0, region.y0, h + 0.03),
            Vector3::new(region.x1, region.y1, h + 0.35),
            label.into(),
            false,
        ));
    }
    let info = LayoutInfo {
        table_height: h,
        object_count: count,
        ..LayoutInfo::default()
    };
    Some((primitives, volumes, info))
}

fn cubby<R: Rng + ?Sized>(rng: &mut R) -> Layout {
    let t = uniform(rng, 0.01, 0.02);
    let x_front = uniform(rng, 0.45, 0.60);
    let depth = uniform(rng, 0.20, 0.35);
    let y_left = -uniform(rng, 0.60, 0.80);
    let y_right = uniform(rng, 0.60, 0.80);
    let z_bottom = uniform(rng, 0.05, 0.35);
    let height = uniform(rng, 0.30, 0.60);
    let yaw = uniform(rng, -40f64.to_radians(), 40f64.to_radians());

    let width = y_right - y_left;
    let frame = Pose::new(
        crate::geometry::axis_angle_matrix(&Vector3::z(), yaw),
        Vector3::new(x_front + depth / 2.0, (y_left + y_right) / 2.0, z_bottom),
    );
    let (dx, wy) = (depth / 2.0, width / 2.0);
    let z_mid = height / 2.0 + uniform(rng, -0.10, 0.10);
    let y_mid = uniform(rng, -0.10, 0.10);
    let v = Vector3::new;

    let mut primitives = vec![
        floor(),
        frame_box(&frame, v(-dx, -wy, 0.0), v(dx, wy, t)),
        frame_box(&frame, v(-dx, -wy, height - t), v(dx, wy, height)),
        frame_box(&frame, v(-dx, -wy, 0.0), v(dx, -wy + t, height)),
        frame_box(&frame, v(-dx, wy - t, 0.0), v(dx, wy, height)),
        frame_box(&frame, v(dx - t, -wy, 0.0), v(dx, wy, height)),
    ];
    // divider halves: horizontal per column, vertical per row
    let horizontal = |col: usize| {
        let (y0, y1) = if col == 0 { (-wy, y_mid) } else { (y_mid, wy) };
        frame_box(&frame, v(-dx, y0, z_mid - t / 2.0), v(dx - t, y1, z_mid + t / 2.0))
    };
    let vertical = |row: usize| {
        let (z0, z1) = if row == 0 { (0.0, z_mid) } else { (z_mid, height) };
        frame_box(&frame, v(-dx, y_mid - t / 2.0, z0), v(dx - t, y_mid + t / 2.0, z1))
    };
    // walls[0..2] horizontal (col 0, 1), walls[2..4] vertical (row 0, 1)
    let mut keep = [true; 4];
    if rng.random::<bool>() {
        let a = rng.random_range(0..4usize);
        let b = (a + rng.random_range(1..4usize)) % 4;
        let (ra, ca, rb, cb) = (a / 2, a % 2, b / 2, b % 2);
        if ra == rb {
            keep[2 + ra] = false;
        } else if ca == cb {
            keep[ca] = false;
        } else if rng.random::<bool>() {
            // via the hole sharing a's row
            keep[2 + ra] = false;
            keep[cb] = false;
        } else {
            keep[ca] = false;
            keep[2 + rb] = false;
        }
    }
    for (i, k) in keep.iter().enumerate() {
        if *k {
            primitives.push(if i < 2 { horizontal(i) } else { vertical(i - 2) });
        }
    }

    let mut volumes = Vec::new();
    for row in 0..2 {
        for col in 0..2 {
            let (z0, z1) = if row == 0 {
                (t, z_mid - t / 2.0)
            } else {
                (z_mid + t / 2.0, height - t)
            };
            let (y0, y1) = if col == 0 {
                (-wy + t, y_mid - t / 2.0)
            } else {
                (y_mid + t / 2.0, wy - t)
            };
            volumes.push(frame_volume(
                &frame,
                v(-dx, y0, z0),
                v(dx - t, y1, z1),
                format!("cubby-r{row}c{col}"),
                true,
            ));
        }
    }
    let info = LayoutInfo {
        wall_thickness: t,
        yaw,
        ..LayoutInfo::default()
    };
    (primitives, volumes, info)
}

/// Drawer cell in the dresser's front plane: `y0..y1`, `z0..z1`.
#[derive(Clone, Copy, Debug)]
struct Cell {
    y0: f64,
    y1: f64,
    z0: f64,
    z1: f64,
}

fn split_cells<R: Rng + ?Sized>(
    cell: Cell,
    depth: usize,
    rng: &mut R,
    stats: &mut Vec<(usize, usize)>,
    leaves: &mut Vec<Cell>,
) {
    if stats.len() <= depth {
        stats.resize(depth + 1, (0, 0));
    }
    stats[depth].0 += 1;
    let can_y = cell.y1 - cell.y0 >= 2.0 * DRAWER_MIN_EXTENT;
    let can_z = cell.z1 - cell.z0 >= 2.0 * DRAWER_MIN_EXTENT;
    let p = DRAWER_SPLIT_DECAY.powi(depth as i32);
    if !(can_y || can_z) || rng.random::<f64>() >= p {
        leaves.push(cell);
        return;
    }
    stats[depth].1 += 1;
    let along_y = match (can_y, can_z) {
        (true, true) => rng.random::<bool>(),
        (y, _) => y,
    };
    let (lo, hi) = if along_y { (cell.y0, cell.y1) } else { (cell.z0, cell.z1) };
    let cut = uniform(rng, lo + DRAWER_MIN_EXTENT, hi - DRAWER_MIN_EXTENT);
    let (a, b) = if along_y {
        (Cell { y1: cut, ..cell }, Cell { y0: cut, ..cell })
    } else {
        (Cell { z1: cut, ..cell }, Cell { z0: cut, ..cell })
    };
    split_cells(a, depth + 1, rng, stats, leaves);
    split_cells(b, depth + 1, rng, stats, leaves);
}

const DRESSER_WALL: f64 = 0.01;
const DRAWER_WALL: f64 = 0.019;
const DRAWER_FACE: f64 = 0.004;
const DRAWER_GAP: f64 = 0.002;

fn dresser<R: Rng + ?Sized>(rng: &mut R) -> Option<Layout> {
    let width = uniform(rng, 0.80, 1.20);
    let depth = uniform(rng, 0.20, 0.40);
    let height = uniform(rng, 0.55, 0.85);
    let bearing = uniform(rng, -PI / 3.0, PI / 3.0);
    let dist = uniform(rng, 0.65, 0.95);
    let yaw = bearing + uniform(rng, -FRAC_PI_6, FRAC_PI_6);
    let frame = Pose::new(
        crate::geometry::axis_angle_matrix(&Vector3::z(), yaw),
        Vector3::new(dist * bearing.cos(), dist * bearing.sin(), 0.0),
    );
    let (dx, wy, w) = (depth / 2.0, width / 2.0, DRESSER_WALL);
    let v = Vector3::new;

    let mut primitives = vec![
        floor(),
        frame_box(&frame, v(-dx, -wy, 0.0), v(dx, wy, w)),
        frame_box(&frame, v(-dx, -wy, height - w), v(dx, wy, height)),
        frame_box(&frame, v(-dx, -wy, 0.0), v(dx, -wy + w, height)),
        frame_box(&frame, v(-dx, wy - w, 0.0), v(dx, wy, height)),
        frame_box(&frame, v(dx - w, -wy, 0.0), v(dx, wy, height)),
    ];

    let cavity = Cell {
        y0: -wy + w,
        y1: wy - w,
        z0: w,
        z1: height - w,
    };
    let mut stats = Vec::new();
    let mut leaves = Vec::new();
    split_cells(cavity, 0, rng, &mut stats, &mut leaves);

    // Open candidates: reachable pulled-out interior of usable size.
    let inner_depth = depth - w;
    let max_pull = dist - dx - 0.30;
    let pulls: Vec<Option<f64>> = leaves
        .iter()
        .map(|c| {
            let pull = (uniform(rng, 0.5, 0.9) * inner_depth).min(max_pull);
            let inner_w = c.y1 - c.y0 - 2.0 * (DRAWER_GAP + DRAWER_WALL);
            let inner_h = c.z1 - c.z0 - 2.0 * DRAWER_GAP - 0.02 - DRESSER_WALL;
            if pull < 0.10 || inner_w < 0.10 || inner_h < 0.05 {
                return None;
            }
            let centre = frame.transform_point(&v(-dx - pull / 2.0, (c.y0 + c.y1) / 2.0, (c.z0 + c.z1) / 2.0));
            let ok = (centre - SHOULDER).norm() <= 0.70 && centre.xy().norm() >= 0.30 && centre.z <= 0.80;
            ok.then_some(pull)
        })
        .collect();
    let candidates: Vec<usize> = (0..leaves.len()).filter(|&i| pulls[i].is_some()).collect();
    if candidates.len() < 2 {
        return None;
    }
    let first = candidates[rng.random_range(0..candidates.len())];
    let rest: Vec<usize> = candidates.iter().copied().filter(|&i| i != first).collect();
    let second = rest[rng.random_range(0..rest.len())];

    let mut volumes = Vec::new();
    for (i, cell) in leaves.iter().enumerate() {
        let (y0, y1, z0, z1) = (cell.y0, cell.y1, cell.z0, cell.z1);
        if i != first && i != second {
            primitives.push(frame_box(&frame, v(-dx, y0, z0), v(dx - w, y1, z1)));
            continue;
        }
        let pull = pulls[i].unwrap();
        // cavity liner around the open cell
        primitives.push(frame_box(&frame, v(-dx, y0, z0), v(dx - w, y1, z0 + w)));
        primitives.push(frame_box(&frame, v(-dx, y0, z1 - w), v(dx - w, y1, z1)));
        primitives.push(frame_box(&frame, v(-dx, y0, z0), v(dx - w, y0 + w, z1)));
        primitives.push(frame_box(&frame, v(-dx, y1 - w, z0), v(dx - w, y1, z1)));
        // drawer body, slid out by `pull`
        let xa = -dx - pull;
        let xb = xa + inner_depth - 0.01;
        let (ya, yb) = (y0 + w + DRAWER_GAP, y1 - w - DRAWER_GAP);
        let (za, zb) = (z0 + w + DRAWER_GAP, z1 - w - DRAWER_GAP);
        let wall_top = zb - 0.02;
        primitives.push(frame_box(&frame, v(xa, y0 + DRAWER_GAP, z0 + DRAWER_GAP), v(xa + DRAWER_FACE, y1 - DRAWER_GAP, z1 - DRAWER_GAP)));
        primitives.push(frame_box(&frame, v(xa, ya, za), v(xb, yb, za + DRESSER_WALL)));
        primitives.push(frame_box(&frame, v(xa, ya, za), v(xb, ya + DRAWER_WALL, wall_top)));
        primitives.push(frame_box(&frame, v(xa, yb - DRAWER_WALL, za), v(xb, yb, wall_top)));
        primitives.push(frame_box(&frame, v(xb - DRAWER_WALL, ya, za), v(xb, yb, wall_top)));
        volumes.push(frame_volume(
            &frame,
            v(xa + DRAWER_FACE, ya + DRAWER_WALL, za + DRESSER_WALL),
            v(-dx, yb - DRAWER_WALL, wall_top),
            format!("drawer-{i}"),
            true,
        ));
    }
    let info = LayoutInfo {
        yaw,
        split_stats: stats,
        drawer_count: leaves.len(),
        ..LayoutInfo::default()
    };
    Some((primitives, volumes, info))
}

// ---------------------------------------------------------------------------
// Problems

#[derive(Clone, Copy, Debug)]
pub struct ProblemOptions {
    /// Target candidates tried before giving up.
    pub attempts: usize,
    /// IK restarts per candidate pose.
    pub ik_attempts: usize,
    /// Probability that the start is a perturbed neutral configuration.
    pub neutral_probability: f64,
    /// Half-width of the uniform perturbation added to the neutral config.
    pub neutral_noise: f64,
    /// Minimum end-effector distance between start and target.
    pub min_separation: f64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            attempts: 40,
            ik_attempts: 20,
            neutral_probability: 0.5,
            neutral_noise: 0.25,
            min_separation: 0.10,
        }
    }
}

/// Nominal approach direction of targets in `volume`.
pub fn nominal_approach(kind: EnvKind, volume: &GoalVolume) -> Vector3<f64> {
    match kind {
        EnvKind::Cubby => volume.pose.rotation.column(0).into_owned(),
        EnvKind::Tabletop | EnvKind::Dresser => -Vector3::z(),
    }
}

/// Random target pose in `volume`: approach (end-effector z) inside the
/// 30° cone about the nominal direction; for exclusive volumes the finger
/// axis follows the volume's longer cross-section within ±20°.
pub fn sample_target_pose<R: Rng + ?Sized>(kind: EnvKind, volume: &GoalVolume, rng: &mut R) -> Pose {
    let nominal = nominal_approach(kind, volume);
    let approach = sample_cone(rng, &nominal, TARGET_CONE);
    let (base, roll, margin) = if volume.exclusive {
        let (a, b) = match kind {
            EnvKind::Cubby => (1, 2),
            _ => (0, 1),
        };
        let axis = if volume.half_extents[a] >= volume.half_extents[b] { a } else { b };
        let preferred: Vector3<f64> = volume.pose.rotation.column(axis).into_owned();
        let flip = if rng.random::<bool>() { PI } else { 0.0 };
        (
            frame_from_z(&approach, &preferred.cross(&approach)),
            flip + uniform(rng, -PI / 9.0, PI / 9.0),
            Vector3::new(0.04, 0.03, 0.03),
        )
    } else {
        (
            frame_from_z(&approach, &Vector3::x()),
            uniform(rng, -PI, PI),
            Vector3::new(0.03, 0.03, 0.0),
        )
    };
    Pose::new(
        base * crate::geometry::axis_angle_matrix(&Vector3::z(), roll),
        volume.sample_point(rng, &margin),
    )
}

fn ik_for_pose<R: Rng + ?Sized>(
    robot: &RobotModel,
    scene: &Scene,
    target: &Pose,
    rng: &mut R,
    attempts: usize,
) -> Option<JointConfig> {
    if (target.translation - SHOULDER).norm() > 0.95 {
        return None;
    }
    let opts = IkOptions {
        max_attempts: attempts,
        ..IkOptions::default()
    };
    ik_solve_with(robot, target, scene, rng, &opts, Some(&robot.neutral)).ok()
}

pub fn sample_problem<R: Rng + ?Sized>(scene: &Scene, robot: &RobotModel, rng: &mut R) -> Result<PlanningProblem> {
    sample_problem_with(scene, robot, rng, &ProblemOptions::default())
}

pub fn sample_problem_with<R: Rng + ?Sized>(
    scene: &Scene,
    robot: &RobotModel,
    rng: &mut R,
    opts: &ProblemOptions,
) -> Result<PlanningProblem> {
    let volumes = &scene.goal_volumes;
    if volumes.is_empty() {
        return Err(Error::NoValidPair);
    }
    for _ in 0..opts.attempts {
        let vi = rng.random_range(0..volumes.len());
        let volume = &volumes[vi];
        let target = sample_target_pose(scene.env_kind, volume, rng);
        let Some(goal_q) = ik_for_pose(robot, scene, &target, rng, opts.ik_attempts) else {
            continue;
        };
        let start = if rng.random::<f64>() < opts.neutral_probability {
            let mut q = robot.neutral.0;
            for v in q.iter_mut().take(DOF) {
                *v += uniform(rng, -opts.neutral_noise, opts.neutral_noise);
            }
            let q = robot.clamp_to_limits(&JointConfig(q));
            if config_in_collision(robot, &q, scene, 0.0) {
                continue;
            }
            q
        } else {
            let others: Vec<&GoalVolume> = volumes
                .iter()
                .filter(|v| !(v.exclusive && volume.exclusive && v.label == volume.label))
                .collect();
            if others.is_empty() {
                continue;
            }
            let other = others[rng.random_range(0..others.len())];
            let pose = sample_target_pose(scene.env_kind, other, rng);
            match ik_for_pose(robot, scene, &pose, rng, opts.ik_attempts) {
                Some(q) => q,
                None => continue,
            }
        };
        let start_ee = robot.ee_pose(&start).translation;
        if (start_ee - target.translation).norm() < opts.min_separation {
            continue;
        }
        // a start inside the target's own exclusive volume is not a pair
        if volume.exclusive && volume.contains(&start_ee) {
            continue;
        }
        debug_assert!(goal_q.is_finite());
        return Ok(PlanningProblem {
            scene: scene.clone(),
            start,
            target,
            target_volume_id: volume.label.clone(),
            problem_id: 0,
        });
    }
    Err(Error::NoValidPair)
}

/// End-effector position lies in `label`'s volume and in no other exclusive
/// volume.
pub fn in_correct_volume(scene: &Scene, label: &str, p: &Vector3<f64>) -> bool {
    let Some(target) = scene.volume(label) else {
        return false;
    };
    target.contains(p)
        && scene
            .goal_volumes
            .iter()
            .filter(|v| v.exclusive && v.label != label)
            .all(|v| !v.contains(p))
}

/// Tabletop scene with a plain table and no objects.
pub fn empty_tabletop() -> Scene {
    let h = 0.2;
    let table = Primitive::cuboid(Vector3::new(0.8, 0.0, (h - 0.02) / 2.0), Vector3::new(0.5, 1.1, (h + 0.02) / 2.0));
    Scene {
        primitives: vec![floor(), table],
        env_kind: EnvKind::Tabletop,
        goal_volumes: vec![frame_volume(
            &Pose::identity(),
            Vector3::new(0.35, -0.5, h + 0.03),
            Vector3::new(0.75, 0.5, h + 0.35),
            "table-front".into(),
            false,
        )],
        rng_seed: 0,
    }
}
