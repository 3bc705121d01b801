//! Builds the bundled Panda-like robot description.
//!
//! Joint frames follow the manufacturer's published modified-DH table. The
//! collision geometry is a hand-placed sphere cover of each link; the 1024
//! surface anchors are sampled uniformly (area weighted) on the outer surface
//! of each link's sphere union with a fixed seed. Self-collision exclusions
//! are derived by sampling: adjacent links, pairs touching at the neutral
//! configuration, and pairs that overlap in nearly every random sample.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::Vector3;
use rand::Rng;

use crate::geometry::Pose;
use crate::kinematics::{
    CollisionSphere, JointConfig, JointSpec, RobotModel, SurfaceAnchor, DOF, NUM_SURFACE_ANCHORS,
};
use crate::seeding;

pub const ANCHOR_SEED: u64 = 0x00A1_1C40;

/// (a, d, alpha) per joint, modified DH convention.
const DH: [(f64, f64, f64); DOF] = [
    (0.0, 0.333, 0.0),
    (0.0, 0.0, -FRAC_PI_2),
    (0.0, 0.316, FRAC_PI_2),
    (0.0825, 0.0, FRAC_PI_2),
    (-0.0825, 0.384, -FRAC_PI_2),
    (0.0, 0.0, FRAC_PI_2),
    (0.088, 0.0, FRAC_PI_2),
];

const LOWER: [f64; DOF] = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973];
const UPPER: [f64; DOF] = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973];

const FLANGE: f64 = 0.107;
const TCP: f64 = 0.1034;

/// (frame, x, y, z, radius)
const SPHERES: &[(usize, f64, f64, f64, f64)] = &[
    (1, 0.0, -0.08, 0.0, 0.06),
    (1, 0.0, -0.03, 0.0, 0.06),
    (1, 0.0, 0.0, -0.12, 0.06),
    (1, 0.0, 0.0, -0.17, 0.06),
    (2, 0.0, 0.0, 0.03, 0.06),
    (2, 0.0, 0.0, 0.08, 0.06),
    (2, 0.0, -0.12, 0.0, 0.06),
    (2, 0.0, -0.17, 0.0, 0.06),
    (3, 0.0, 0.0, -0.06, 0.05),
    (3, 0.0, 0.0, -0.10, 0.06),
    (3, 0.08, 0.06, 0.0, 0.055),
    (3, 0.08, 0.02, 0.0, 0.055),
    (4, 0.0, 0.0, 0.02, 0.055),
    (4, 0.0, 0.0, 0.06, 0.055),
    (4, -0.08, 0.095, 0.0, 0.06),
    (4, -0.08, 0.06, 0.0, 0.055),
    (5, 0.0, 0.055, 0.0, 0.06),
    (5, 0.0, 0.075, 0.0, 0.06),
    (5, 0.0, 0.0, -0.22, 0.06),
    (5, 0.0, 0.05, -0.18, 0.05),
    (5, 0.01, 0.08, -0.14, 0.025),
    (5, 0.01, 0.085, -0.11, 0.025),
    (5, 0.01, 0.09, -0.08, 0.025),
    (5, 0.01, 0.095, -0.05, 0.025),
    (5, -0.01, 0.08, -0.14, 0.025),
    (5, -0.01, 0.085, -0.11, 0.025),
    (5, -0.01, 0.09, -0.08, 0.025),
    (5, -0.01, 0.095, -0.05, 0.025),
    (6, 0.0, 0.0, 0.0, 0.06),
    (6, 0.08, 0.03, 0.0, 0.06),
    (6, 0.08, -0.01, 0.0, 0.06),
    (7, 0.0, 0.0, 0.07, 0.05),
    (7, 0.02, 0.04, 0.08, 0.025),
    (7, 0.04, 0.02, 0.08, 0.025),
    (7, 0.04, 0.06, 0.085, 0.02),
    (7, 0.06, 0.04, 0.085, 0.02),
    // hand: palm row along the finger-opening axis, then the two fingers
    (8, 0.0, -0.075, 0.02, 0.03),
    (8, 0.0, -0.045, 0.02, 0.03),
    (8, 0.0, -0.015, 0.02, 0.03),
    (8, 0.0, 0.015, 0.02, 0.03),
    (8, 0.0, 0.045, 0.02, 0.03),
    (8, 0.0, 0.075, 0.02, 0.03),
    (8, 0.0, -0.03, 0.085, 0.02),
    (8, 0.0, 0.03, 0.085, 0.02),
];

const HAND_FRAME: usize = 8;
const FINGER_Z: f64 = 0.085;

fn dh_origin(a: f64, d: f64, alpha: f64) -> Pose {
    Pose::rot_x(alpha)
        .compose(&Pose::from_translation(Vector3::new(a, 0.0, 0.0)))
        .compose(&Pose::from_translation(Vector3::new(0.0, 0.0, d)))
}

/// Kinematic chain and spheres without anchors or exclusions.
fn skeleton() -> RobotModel {
    let joints = DH
        .iter()
        .map(|&(a, d, alpha)| JointSpec {
            origin: dh_origin(a, d, alpha),
            axis: Vector3::z(),
        })
        .collect();
    let hand = Pose::from_translation(Vector3::new(0.0, 0.0, FLANGE)).compose(&Pose::rot_z(-FRAC_PI_4));
    let tcp = Pose::from_translation(Vector3::new(0.0, 0.0, TCP));
    let collision_spheres: Vec<CollisionSphere> = SPHERES
        .iter()
        .map(|&(link, x, y, z, r)| CollisionSphere {
            link,
            center: Vector3::new(x, y, z),
            radius: r,
        })
        .collect();
    RobotModel {
        name: "panda-like".into(),
        joints,
        lower: LOWER,
        upper: UPPER,
        tool_frames: vec![hand, tcp],
        neutral: JointConfig([0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4]),
        gripper_proxy: gripper_proxy(&collision_spheres),
        collision_spheres,
        self_collision_ignore: Vec::new(),
        surface_anchors: Vec::new(),
    }
}

/// Palm: centroid of the hand's palm-row spheres, radius enlarged by 2 cm.
/// Fingers: the two finger spheres. Centres re-expressed in the TCP frame.
fn gripper_proxy(spheres: &[CollisionSphere]) -> Vec<CollisionSphere> {
    let hand: Vec<&CollisionSphere> = spheres.iter().filter(|s| s.link == HAND_FRAME).collect();
    let palm: Vec<&&CollisionSphere> = hand.iter().filter(|s| s.center.z < FINGER_Z - 1e-9).collect();
    let centroid = palm.iter().map(|s| s.center).sum::<Vector3<f64>>() / palm.len() as f64;
    let palm_r = palm.iter().map(|s| s.radius).fold(0.0, f64::max) + 0.02;
    let to_tcp = Vector3::new(0.0, 0.0, -TCP);
    let mut out = vec![CollisionSphere {
        link: HAND_FRAME + 1,
        center: centroid + to_tcp,
        radius: palm_r,
    }];
    for f in hand.iter().filter(|s| s.center.z >= FINGER_Z - 1e-9) {
        out.push(CollisionSphere {
            link: HAND_FRAME + 1,
            center: f.center + to_tcp,
            radius: f.radius,
        });
    }
    out
}

fn sample_anchors(spheres: &[CollisionSphere]) -> Vec<SurfaceAnchor> {
    let mut rng = seeding::stream(ANCHOR_SEED, 0);
    let moving: Vec<&CollisionSphere> = spheres.iter().filter(|s| s.link >= 1).collect();
    let areas: Vec<f64> = moving.iter().map(|s| s.radius * s.radius).collect();
    let total: f64 = areas.iter().sum();
    let mut anchors = Vec::with_capacity(NUM_SURFACE_ANCHORS);
    while anchors.len() < NUM_SURFACE_ANCHORS {
        let mut pick = rng.random::<f64>() * total;
        let mut idx = 0;
        while idx + 1 < areas.len() && pick >= areas[idx] {
            pick -= areas[idx];
            idx += 1;
        }
        let s = moving[idx];
        let dir = loop {
            let v = Vector3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        let p = s.center + dir * s.radius;
        let buried = moving
            .iter()
            .any(|o| o.link == s.link && !std::ptr::eq(*o, s) && (p - o.center).norm() < o.radius);
        if !buried {
            anchors.push(SurfaceAnchor {
                link: s.link,
                offset: p,
            });
        }
    }
    anchors
}

fn link_pair_overlap(robot: &RobotModel, q: &JointConfig, a: usize, b: usize) -> bool {
    let frames = robot.forward_kinematics(q);
    let placed = robot.placed_spheres(&frames);
    placed.iter().filter(|s| s.link == a).any(|sa| {
        placed
            .iter()
            .filter(|s| s.link == b)
            .any(|sb| (sa.center - sb.center).norm() < sa.radius + sb.radius)
    })
}

fn ignore_pairs(robot: &RobotModel) -> Vec<(usize, usize)> {
    let links: Vec<usize> = {
        let mut l: Vec<usize> = robot.collision_spheres.iter().map(|s| s.link).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let mut rng = seeding::stream(ANCHOR_SEED, 1);
    let samples: Vec<JointConfig> = (0..2000).map(|_| robot.random_config(&mut rng)).collect();
    let mut out = Vec::new();
    for (i, &a) in links.iter().enumerate() {
        for &b in &links[i + 1..] {
            let adjacent = b - a <= 1;
            let at_neutral = link_pair_overlap(robot, &robot.neutral, a, b);
            let hits = samples.iter().filter(|q| link_pair_overlap(robot, q, a, b)).count();
            if adjacent || at_neutral || hits as f64 >= 0.95 * samples.len() as f64 {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn build_panda_like() -> RobotModel {
    let mut robot = skeleton();
    robot.surface_anchors = sample_anchors(&robot.collision_spheres);
    robot.self_collision_ignore = ignore_pairs(&robot);
    robot
}
