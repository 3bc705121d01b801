//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any criterion fails.
//! `ACCEPTANCE_ONLY=A1,A3` restricts the run to the listed criteria (the
//! dependent criteria pull in what they need).

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use motion_forge::dataset::{self, Expert, PlanOutcome, ProblemRecord};
use motion_forge::encoder::{self, draw_starts, encode_backward, encode_cloud_from, set_abstraction, set_abstraction_backward, CloudTensor};
use motion_forge::eval_metrics::{self, Controller, DynamicSpeed, EvalConfig, MovingBlock, RolloutResult};
use motion_forge::kinematics::DOF;
use motion_forge::nn::{leaky_relu, Linear, Mat, Mlp, Module};
use motion_forge::policy::{self, CloudBudget, PolicyParams, PolicyProfile, TrainConfig, TrainingExample};
use motion_forge::seeding;
use motion_forge::{EnvKind, JointConfig, Pose, Primitive, RobotModel, Scene, Shape};
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;

const PLAN_TIMEOUT: f64 = 20.0;
const DATA_SEED: u64 = 20_240_501;
const TRAIN_SEED: u64 = 20_240_502;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

// ---------------------------------------------------------------- A1

/// Modified DH transform `RotX(α)·TransX(a)·RotZ(θ)·TransZ(d)`.
fn dh(a: f64, d: f64, alpha: f64, theta: f64) -> Matrix4<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (st, ct) = theta.sin_cos();
    Matrix4::new(
        ct,
        -st,
        0.0,
        a,
        st * ca,
        ct * ca,
        -sa,
        -d * sa,
        st * sa,
        ct * sa,
        ca,
        d * ca,
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// Link, flange and tool-centre positions from the published arm parameters.
fn dh_oracle(q: &JointConfig) -> Vec<Vector3<f64>> {
    let a = [0.0, 0.0, 0.0, 0.0825, -0.0825, 0.0, 0.088];
    let d = [0.333, 0.0, 0.316, 0.0, 0.384, 0.0, 0.0];
    let alpha = [0.0, -FRAC_PI_2, FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, FRAC_PI_2, FRAC_PI_2];
    let mut t = Matrix4::identity();
    let mut out = Vec::new();
    for j in 0..DOF {
        t *= dh(a[j], d[j], alpha[j], q.0[j]);
        out.push(t.fixed_view::<3, 1>(0, 3).into_owned());
    }
    t *= dh(0.0, 0.107, 0.0, -FRAC_PI_4);
    out.push(t.fixed_view::<3, 1>(0, 3).into_owned());
    t *= dh(0.0, 0.1034, 0.0, 0.0);
    out.push(t.fixed_view::<3, 1>(0, 3).into_owned());
    out
}

fn a1(robot: &RobotModel) -> Verdict {
    let mut rng = seeding::stream(1, 0);
    let configs: Vec<JointConfig> = (0..100).map(|_| robot.random_config(&mut rng)).collect();
    let clock = Instant::now();
    let frames: Vec<Vec<Pose>> = configs.iter().map(|q| robot.forward_kinematics(q)).collect();
    let elapsed = clock.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for (q, f) in configs.iter().zip(&frames) {
        for (i, p) in dh_oracle(q).iter().enumerate() {
            worst = worst.max((f[i + 1].translation - p).norm());
        }
    }
    Verdict::new(
        worst <= 1e-9 && elapsed < 1.0,
        format!("max position error {worst:.2e} m over 100 configs x 9 frames, FK time {elapsed:.4} s"),
    )
}

// ---------------------------------------------------------------- A2

fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
    Pose::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).rotation
}

fn local_area(shape: &Shape) -> f64 {
    match *shape {
        Shape::Box { half_extents: h } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
        Shape::Cylinder { radius, half_height } => 2.0 * std::f64::consts::PI * radius * (radius + 2.0 * half_height),
        Shape::Floor { .. } => unreachable!("no floors in the oracle scene"),
    }
}

/// Cell-centred samples on a `2u × 2v` rectangle.
fn grid(u: f64, v: f64, h: f64, mut put: impl FnMut(f64, f64)) {
    let nu = (2.0 * u / h).ceil() as usize;
    let nv = (2.0 * v / h).ceil() as usize;
    for i in 0..nu {
        for j in 0..nv {
            put(-u + (i as f64 + 0.5) * 2.0 * u / nu as f64, -v + (j as f64 + 0.5) * 2.0 * v / nv as f64);
        }
    }
}

/// Stratified surface samples in the primitive's local frame at spacing `h`.
fn local_samples(shape: &Shape, h: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    match *shape {
        Shape::Box { half_extents: e } => {
            for s in [-1.0, 1.0] {
                grid(e.y, e.z, h, |a, b| out.push(Vector3::new(s * e.x, a, b)));
                grid(e.x, e.z, h, |a, b| out.push(Vector3::new(a, s * e.y, b)));
                grid(e.x, e.y, h, |a, b| out.push(Vector3::new(a, b, s * e.z)));
            }
        }
        Shape::Cylinder { radius, half_height } => {
            let turns = (2.0 * std::f64::consts::PI * radius / h).ceil() as usize;
            let rows = (2.0 * half_height / h).ceil() as usize;
            for i in 0..turns {
                let phi = (i as f64 + 0.5) * 2.0 * std::f64::consts::PI / turns as f64;
                for j in 0..rows {
                    let z = -half_height + (j as f64 + 0.5) * 2.0 * half_height / rows as f64;
                    out.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z));
                }
            }
            let rings = (radius / h).ceil() as usize;
            for k in 0..rings {
                let r = (k as f64 + 0.5) * radius / rings as f64;
                let n = ((2.0 * std::f64::consts::PI * r / h).ceil() as usize).max(1);
                for i in 0..n {
                    let phi = (i as f64 + 0.5) * 2.0 * std::f64::consts::PI / n as f64;
                    for s in [-1.0, 1.0] {
                        out.push(Vector3::new(r * phi.cos(), r * phi.sin(), s * half_height));
                    }
                }
            }
        }
        Shape::Floor { .. } => unreachable!(),
    }
    out
}

fn local_inside(shape: &Shape, p: &Vector3<f64>) -> bool {
    match *shape {
        Shape::Box { half_extents: e } => p.x.abs() < e.x && p.y.abs() < e.y && p.z.abs() < e.z,
        Shape::Cylinder { radius, half_height } => p.xy().norm() < radius && p.z.abs() < half_height,
        Shape::Floor { .. } => unreachable!(),
    }
}

fn oracle_scene(rng: &mut seeding::Rng) -> Scene {
    let mut prims: Vec<(Primitive, f64)> = Vec::new();
    while prims.len() < 6 {
        let shape = if prims.len() % 2 == 0 {
            Shape::Box {
                half_extents: Vector3::new(rng.random_range(0.04..0.15), rng.random_range(0.04..0.15), rng.random_range(0.04..0.15)),
            }
        } else {
            Shape::Cylinder {
                radius: rng.random_range(0.04..0.12),
                half_height: rng.random_range(0.04..0.15),
            }
        };
        let centre = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.0..0.6));
        let prim = Primitive::new(shape, Pose::new(random_rotation(rng), centre));
        let reach = prim.bounding_radius();
        if prims.iter().all(|(p, r)| (p.pose.translation - centre).norm() > r + reach + 0.02) {
            prims.push((prim, reach));
        }
    }
    Scene::with_primitives(prims.into_iter().map(|(p, _)| p).collect())
}

fn a2() -> Verdict {
    let clock = Instant::now();
    let mut rng = seeding::stream(2, 0);
    let scene = oracle_scene(&mut rng);
    let area: f64 = scene.primitives.iter().map(|p| local_area(&p.shape)).sum();
    // grid spacing chosen so the stratified samples stay within 200k
    let mut h = (area / 200_000.0).sqrt();
    let surface = loop {
        let pts: Vec<Vector3<f64>> = scene
            .primitives
            .iter()
            .flat_map(|p| local_samples(&p.shape, h).into_iter().map(move |s| p.pose.transform_point(&s)))
            .collect();
        if pts.len() <= 200_000 {
            break pts;
        }
        h *= 1.01;
    };
    let (lo, hi) = surface.iter().fold((Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    });
    let lo = lo - Vector3::repeat(0.05);
    let hi = hi + Vector3::repeat(0.05);
    let mut worst = 0.0f64;
    let mut inside = 0;
    for _ in 0..10_000 {
        let q = Vector3::from_fn(|i, _| rng.random_range(lo[i]..hi[i]));
        let d2 = surface.iter().map(|s| (s - q).norm_squared()).fold(f64::INFINITY, f64::min);
        let contained = scene.primitives.iter().any(|p| local_inside(&p.shape, &p.pose.inverse().transform_point(&q)));
        inside += contained as usize;
        let oracle = if contained { -d2.sqrt() } else { d2.sqrt() };
        worst = worst.max((scene.sdf(&q).0 - oracle).abs());
    }
    let elapsed = clock.elapsed().as_secs_f64();
    Verdict::new(
        worst <= 2e-3 && elapsed < 60.0,
        format!(
            "max |error| {:.3} mm on 10000 queries ({inside} inside) vs {} surface samples at {:.2} mm spacing, {elapsed:.1} s",
            worst * 1e3,
            surface.len(),
            h * 1e3
        ),
    )
}

// ---------------------------------------------------------------- A3

const REL_TOL: f64 = 1e-4;

#[derive(Default)]
struct Gauge {
    checks: usize,
    /// Directions dropped because they straddle an activation kink.
    redrawn: usize,
    excused: usize,
    failures: usize,
    worst: f64,
}

impl Gauge {
    /// Central-difference comparison. A difference below the roundoff level
    /// `100·ε·|L|/h` of the quotient itself is excused and counted apart.
    fn record(&mut self, analytic: f64, numeric: f64, loss_scale: f64, h: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        let floor = 100.0 * f64::EPSILON * loss_scale.abs().max(1.0) / h;
        self.checks += 1;
        if rel <= REL_TOL {
            self.worst = self.worst.max(rel);
        } else if (analytic - numeric).abs() <= floor {
            self.excused += 1;
        } else {
            self.failures += 1;
            self.worst = self.worst.max(rel);
        }
    }

    fn merge(&mut self, other: Gauge) {
        self.checks += other.checks;
        self.redrawn += other.redrawn;
        self.excused += other.excused;
        self.failures += other.failures;
        self.worst = self.worst.max(other.worst);
    }
}

fn random_dq<R: Rng>(rng: &mut R, scale: f64) -> [f64; DOF] {
    std::array::from_fn(|_| rng.random_range(-scale..scale))
}

fn directional(
    f: &dyn Fn(&[f64; DOF]) -> f64,
    grad: &[f64; DOF],
    at: &[f64; DOF],
    v: &[f64; DOF],
    h: f64,
    gauge: &mut Gauge,
) {
    let shift = |s: f64| {
        let mut d = *at;
        d.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
        f(&d)
    };
    let (up, down) = (shift(h), shift(-h));
    let analytic: f64 = grad.iter().zip(v).map(|(a, b)| a * b).sum();
    gauge.record(analytic, (up - down) / (2.0 * h), up, h);
}

/// Perturbs `k` random entries of every parameter tensor of `module` and
/// compares the loss change with the accumulated gradient in `with_grad`.
fn check_params<M: Module + Clone>(module: &M, with_grad: &M, loss: &dyn Fn(&M) -> f64, k: usize, rng: &mut seeding::Rng, gauge: &mut Gauge) {
    let mut grads = Vec::new();
    with_grad.visit_ref(&mut |p| grads.push(p.grad.clone()));
    let h = 1e-6;
    for (t, g) in grads.iter().enumerate() {
        for _ in 0..k {
            let e = rng.random_range(0..g.len());
            let shifted = |delta: f64| {
                let mut m = module.clone();
                let mut i = 0;
                m.visit(&mut |p| {
                    if i == t {
                        p.value[e] += delta;
                    }
                    i += 1;
                });
                loss(&m)
            };
            let (up, down) = (shifted(h), shifted(-h));
            gauge.record(g[e], (up - down) / (2.0 * h), up, h);
        }
    }
}

/// Input-gradient check along one random direction.
fn check_input(x: &Mat, dx: &Mat, loss: &dyn Fn(&Mat) -> f64, rng: &mut seeding::Rng, gauge: &mut Gauge) {
    check_input_on_piece(x, dx, loss, &|_, _| true, rng, gauge);
}

/// As [`check_input`], redrawing directions whose segment `x ± h·v` leaves
/// the smooth piece identified by `same_piece`.
fn check_input_on_piece(
    x: &Mat,
    dx: &Mat,
    loss: &dyn Fn(&Mat) -> f64,
    same_piece: &dyn Fn(&Mat, &Mat) -> bool,
    rng: &mut seeding::Rng,
    gauge: &mut Gauge,
) {
    let h = 1e-6;
    let v = loop {
        let v = Mat::from_fn(x.nrows(), x.ncols(), |_, _| rng.random_range(-1.0..1.0));
        if same_piece(&(x + &v * h), &(x - &v * h)) {
            break v;
        }
        gauge.redrawn += 1;
    };
    let up = loss(&(x + &v * h));
    let down = loss(&(x - &v * h));
    gauge.record(dx.dot(&v), (up - down) / (2.0 * h), up, h);
}

fn randomize<M: Module>(m: &mut M, rng: &mut seeding::Rng) {
    m.visit(&mut |p| {
        let scale = p.value.amax().max(0.5);
        p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2) * scale);
        p.grad.fill(0.0);
    });
}

fn random_mat(rows: usize, cols: usize, rng: &mut seeding::Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Signs of every activated pre-activation; equal patterns mean both inputs
/// lie on the same linear piece of the leaky ReLUs.
fn activation_pattern(mlp: &Mlp, x: &Mat) -> Vec<bool> {
    let mut x = x.clone();
    let mut signs = Vec::new();
    for block in &mlp.blocks {
        let mut y = block.linear.forward(&x);
        if let Some(norm) = &block.norm {
            y = norm.forward(&y).0;
        }
        if block.activate {
            signs.extend(y.iter().map(|v| *v > 0.0));
            y = leaky_relu(&y);
        }
        x = y;
    }
    signs
}

fn mlp_instances(mlp: &Mlp, rows: usize, rng: &mut seeding::Rng, gauge: &mut Gauge) -> usize {
    let mut n = 0;
    for block in &mlp.blocks {
        let x = random_mat(rows, block.linear.input_width(), rng);
        let r = random_mat(rows, block.linear.output_width(), rng);
        let loss = |l: &Linear, x: &Mat| l.forward(x).dot(&r);
        let mut with_grad = block.linear.clone();
        with_grad.zero_grad();
        let dx = with_grad.backward(&x, &r);
        check_params(&block.linear, &with_grad, &|l| loss(l, &x), 2, rng, gauge);
        check_input(&x, &dx, &|x| loss(&block.linear, x), rng, gauge);
        n += 1;
        if let Some(norm) = &block.norm {
            let mut norm = norm.clone();
            randomize(&mut norm, rng);
            let x = random_mat(rows, block.linear.output_width(), rng);
            let loss = |g: &motion_forge::nn::GroupNorm, x: &Mat| g.forward(x).0.dot(&r);
            let mut with_grad = norm.clone();
            let (_, cache) = with_grad.forward(&x);
            let dx = with_grad.backward(&cache, &r);
            check_params(&norm, &with_grad, &|g| loss(g, &x), 2, rng, gauge);
            check_input(&x, &dx, &|x| loss(&norm, x), rng, gauge);
            n += 1;
        }
    }
    let x = random_mat(rows, mlp.input_width(), rng);
    let r = random_mat(rows, mlp.output_width(), rng);
    let loss = |m: &Mlp, x: &Mat| m.forward(x).0.dot(&r);
    let mut with_grad = mlp.clone();
    with_grad.zero_grad();
    let (_, caches) = with_grad.forward(&x);
    let dx = with_grad.backward(&caches, &r);
    check_params(mlp, &with_grad, &|m| loss(m, &x), 1, rng, gauge);
    check_input_on_piece(&x, &dx, &|x| loss(mlp, x), &|a, b| activation_pattern(mlp, a) == activation_pattern(mlp, b), rng, gauge);
    n + 1
}

fn desk_cloud(robot: &RobotModel, rng: &mut seeding::Rng) -> (CloudTensor, motion_forge::NormalizedConfig, JointConfig, JointConfig, Scene) {
    let q_t = robot.random_config(rng);
    let ee = robot.ee_pose(&q_t).translation;
    let scene = Scene::with_primitives(vec![
        Primitive::cuboid(ee + Vector3::new(0.02, 0.0, 0.02), Vector3::new(0.06, 0.05, 0.05)),
        Primitive::cuboid(Vector3::new(0.5, 0.0, 0.2), Vector3::new(0.2, 0.3, 0.02)),
    ]);
    let ex = TrainingExample {
        scene: 0,
        q_t,
        q_next: robot.clamp_to_limits(&JointConfig(std::array::from_fn(|j| q_t.0[j] + rng.random_range(-0.05..0.05)))),
        target: robot.ee_pose(&robot.random_config(rng)),
    };
    let (cloud, qn, q) = policy::assemble_input(&ex, &scene, robot, &CloudBudget::default(), rng, 0.0);
    (cloud, qn, q, ex.q_next, scene)
}

fn a3(robot: &RobotModel) -> Verdict {
    let clock = Instant::now();
    let mut rng = seeding::stream(3, 0);
    let mut summary = Vec::new();
    let mut all = Gauge::default();

    let mut g = Gauge::default();
    for _ in 0..100 {
        let q_t = robot.random_config(&mut rng);
        let q_next = robot.random_config(&mut rng);
        let dq = random_dq(&mut rng, 0.1);
        let (_, grad) = policy::loss_bc(robot, &q_t, &dq, &q_next);
        let v = random_dq(&mut rng, 1.0);
        directional(&|d| policy::loss_bc(robot, &q_t, d, &q_next).0, &grad, &dq, &v, 1e-6, &mut g);
    }
    summary.push(format!("bc {} (worst {:.1e})", g.checks, g.worst));
    all.merge(g);

    let mut g = Gauge::default();
    while g.checks < 100 {
        let q_t = robot.random_config(&mut rng);
        let ee = robot.ee_pose(&q_t).translation;
        let scene = Scene::with_primitives(vec![Primitive::cuboid(
            ee + Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)),
            Vector3::new(0.06, 0.05, 0.04),
        )]);
        let dq = random_dq(&mut rng, 0.05);
        let (loss, grad) = policy::loss_collision(robot, &q_t, &dq, &scene);
        if loss == 0.0 {
            continue;
        }
        let v = random_dq(&mut rng, 1.0);
        directional(&|d| policy::loss_collision(robot, &q_t, d, &scene).0, &grad, &dq, &v, 1e-7, &mut g);
    }
    summary.push(format!("collision {} (worst {:.1e})", g.checks, g.worst));
    all.merge(g);

    // every Linear, GroupNorm and Mlp of the desk policy, three draws each
    let mut g = Gauge::default();
    let mut layers = 0;
    for _ in 0..3 {
        let params = PolicyParams::new(PolicyProfile::desk(), &mut rng);
        for mlp in params.encoder.blocks.iter().chain([&params.encoder.head, &params.config_encoder, &params.decoder]) {
            layers += mlp_instances(mlp, 12, &mut rng, &mut g);
        }
    }
    summary.push(format!("layers {layers} ({} checks, worst {:.1e})", g.checks, g.worst));
    all.merge(g);

    // set-abstraction blocks, whole encoder and whole policy on full desk clouds
    let mut g = Gauge::default();
    let mut encoders = 0;
    for _ in 0..5 {
        let params = PolicyParams::new(PolicyProfile::desk(), &mut rng);
        let (cloud, qn, q, q_next, scene) = desk_cloud(robot, &mut rng);
        let starts = draw_starts(&params.encoder.profile, cloud.len(), &mut rng);

        let spec = &params.encoder.profile.blocks[0];
        let mlp = &params.encoder.blocks[0];
        let (out, _) = set_abstraction(&cloud, mlp, spec, starts[0]).unwrap();
        let r = random_mat(out.features.nrows(), out.features.ncols(), &mut rng);
        let sa_loss = |m: &Mlp, c: &CloudTensor| set_abstraction(c, m, spec, starts[0]).unwrap().0.features.dot(&r);
        let mut with_grad = mlp.clone();
        with_grad.zero_grad();
        let (_, cache) = set_abstraction(&cloud, &with_grad, spec, starts[0]).unwrap();
        let d_features = set_abstraction_backward(&mut with_grad, &cache, &r);
        check_params(mlp, &with_grad, &|m| sa_loss(m, &cloud), 2, &mut rng, &mut g);
        let feat_loss = |f: &Mat| {
            let c = CloudTensor {
                points: cloud.points.clone(),
                features: f.clone(),
            };
            sa_loss(mlp, &c)
        };
        check_input(&cloud.features, &d_features, &feat_loss, &mut rng, &mut g);

        let (emb, _) = encode_cloud_from(&cloud, &params.encoder, &starts).unwrap();
        let w: Vec<f64> = (0..emb.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let enc_loss = |p: &encoder::EncoderParams| {
            encode_cloud_from(&cloud, p, &starts).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut with_grad = params.encoder.clone();
        with_grad.zero_grad();
        let (_, cache) = encode_cloud_from(&cloud, &with_grad, &starts).unwrap();
        encode_backward(&mut with_grad, &cache, &w);
        check_params(&params.encoder, &with_grad, &enc_loss, 1, &mut rng, &mut g);

        let total = |p: &PolicyParams| {
            let (dq, _) = policy::policy_forward_from(p, &cloud, &qn, &starts).unwrap();
            policy::compound_loss(robot, &q, &dq, &q_next, &scene, 1.0).0.total
        };
        let mut with_grad = params.clone();
        with_grad.zero_grad();
        let (dq, cache) = policy::policy_forward_from(&with_grad, &cloud, &qn, &starts).unwrap();
        let (_, grad) = policy::compound_loss(robot, &q, &dq, &q_next, &scene, 1.0);
        policy::policy_backward(&mut with_grad, &cache, &grad);
        check_params(&params, &with_grad, &total, 1, &mut rng, &mut g);
        encoders += 3;
    }
    summary.push(format!("block/encoder/policy {encoders} ({} checks, worst {:.1e})", g.checks, g.worst));
    all.merge(g);

    let elapsed = clock.elapsed().as_secs_f64();
    Verdict::new(
        all.failures == 0 && elapsed < 300.0,
        format!(
            "{} of {} checks over rel {REL_TOL:.0e} ({} within roundoff, {} kink-straddling directions redrawn); instances: {}; {elapsed:.1} s",
            all.failures,
            all.checks,
            all.excused,
            all.redrawn,
            summary.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- A4-A6, A8

struct ExpertRun {
    global: Vec<PlanOutcome>,
    hybrid: Vec<PlanOutcome>,
    global_records: Vec<ProblemRecord>,
    hybrid_records: Vec<ProblemRecord>,
}

fn problems(kinds: &[EnvKind], per_kind: usize, seed: u64, robot: &RobotModel) -> Vec<ProblemRecord> {
    (0..(kinds.len() * per_kind) as u64)
        .map(|id| {
            let kind = kinds[id as usize % kinds.len()];
            let p = dataset::generate_problem(kind, seed, id, robot).expect("problem generation");
            ProblemRecord::from_problem(p, seed)
        })
        .collect()
}

fn round_trip(records: &[ProblemRecord], dir: &Path, name: &str) -> Vec<ProblemRecord> {
    let path = dir.join(name);
    dataset::write_records(&path, records, DATA_SEED).expect("write records");
    dataset::read_records(&path).expect("read records").1
}

fn run_experts(robot: &RobotModel, dir: &Path) -> ExpertRun {
    let kinds = [EnvKind::Tabletop, EnvKind::Cubby, EnvKind::Dresser];
    let base = problems(&kinds, 100, DATA_SEED, robot);
    let clock = Instant::now();
    let global = dataset::plan_records(&base, Expert::Global, robot, PLAN_TIMEOUT, DATA_SEED, 1);
    eprintln!("  global expert: {:.1} s", clock.elapsed().as_secs_f64());
    let clock = Instant::now();
    let hybrid = dataset::plan_records(&base, Expert::Hybrid, robot, PLAN_TIMEOUT, DATA_SEED, 1);
    eprintln!("  hybrid expert: {:.1} s", clock.elapsed().as_secs_f64());
    let keep = |o: &[PlanOutcome]| o.iter().filter_map(|o| o.record.clone()).collect::<Vec<_>>();
    let global_records = round_trip(&keep(&global), dir, "global.jsonl");
    let hybrid_records = round_trip(&keep(&hybrid), dir, "hybrid.jsonl");
    ExpertRun {
        global,
        hybrid,
        global_records,
        hybrid_records,
    }
}

/// Rejection reasons with numbers stripped, so similar failures group.
fn rejection_counts(outcomes: &[PlanOutcome]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for o in outcomes {
        if let Some(r) = &o.timing.rejection {
            let key: String = r.chars().filter(|c| !c.is_ascii_digit() && *c != '.').collect();
            *counts.entry(key.trim().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

fn a4(robot: &RobotModel, run: &ExpertRun) -> Verdict {
    let mut bad = 0;
    for r in run.global_records.iter().chain(&run.hybrid_records) {
        match r.revalidate(robot) {
            Some(report) if report.verdict => {}
            _ => bad += 1,
        }
    }
    for (name, outcomes) in [("global", &run.global), ("hybrid", &run.hybrid)] {
        for (reason, n) in rejection_counts(outcomes) {
            println!("    {name} rejected {n:>3}: {reason}");
        }
    }
    let global_pre_hgr_ok = run.global_records.iter().all(|r| {
        let last = robot.ee_pose(r.trajectory.as_ref().unwrap().last());
        r.revised_target.is_none() && (last.translation - r.original_target.translation).norm() <= 0.05
    });
    Verdict::new(
        bad == 0 && global_pre_hgr_ok && !run.global_records.is_empty() && !run.hybrid_records.is_empty(),
        format!(
            "300 problems; emitted global {} / hybrid {}; {} records fail revalidation after a write/read round trip",
            run.global_records.len(),
            run.hybrid_records.len(),
            bad
        ),
    )
}

fn a5(robot: &RobotModel, run: &ExpertRun) -> Verdict {
    let n = run.hybrid_records.len();
    let smooth = run
        .hybrid_records
        .iter()
        .filter(|r| {
            let (j, e) = eval_metrics::trajectory_sparc(r.trajectory.as_ref().unwrap(), robot);
            eval_metrics::is_smooth(j, e)
        })
        .count();
    let frac = smooth as f64 / n.max(1) as f64;
    Verdict::new(n > 0 && frac >= 0.9, format!("{smooth} of {n} hybrid trajectories smooth ({:.1}%)", 100.0 * frac))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn a6(run: &ExpertRun) -> Verdict {
    let hybrid: HashMap<u64, f64> = run.hybrid.iter().filter(|o| o.timing.accepted).map(|o| (o.timing.problem_id, o.timing.planning_time)).collect();
    let both: Vec<(f64, f64)> = run
        .global
        .iter()
        .filter(|o| o.timing.accepted)
        .filter_map(|o| hybrid.get(&o.timing.problem_id).map(|&h| (o.timing.planning_time, h)))
        .take(100)
        .collect();
    if both.is_empty() {
        return Verdict::new(false, "no problem solved by both experts");
    }
    let g = median(both.iter().map(|p| p.0).collect());
    let h = median(both.iter().map(|p| p.1).collect());
    Verdict::new(
        h < g && both.len() == 100,
        format!("median hybrid {h:.4} s vs global {g:.4} s on {} problems solved by both", both.len()),
    )
}

fn a8(robot: &RobotModel, run: &ExpertRun) -> Verdict {
    let mut nonzero = 0;
    for r in &run.hybrid_records {
        let revised = r.revised_target.as_ref();
        let last = robot.ee_pose(r.trajectory.as_ref().unwrap().last());
        let exact = revised.is_some_and(|t| t.translation == last.translation && t.rotation == last.rotation);
        if !exact || (last.translation - revised.unwrap().translation).norm() != 0.0 {
            nonzero += 1;
        }
    }
    Verdict::new(
        nonzero == 0 && !run.hybrid_records.is_empty(),
        format!("{nonzero} of {} hybrid records with nonzero divergence from the revised target", run.hybrid_records.len()),
    )
}

// ---------------------------------------------------------------- A7, A10

struct Trained {
    params: PolicyParams,
    held_out: Vec<motion_forge::PlanningProblem>,
    trained_results: Vec<RolloutResult>,
}

fn success_rate(results: &[RolloutResult]) -> f64 {
    results.iter().filter(|r| r.success).count() as f64 / results.len().max(1) as f64
}

fn a7(robot: &RobotModel) -> (Verdict, Trained) {
    let clock = Instant::now();
    // hybrid demonstrations on tabletop scenes until 2000 transitions,
    // then 100 held-out problems the expert solves
    let mut train_records = Vec::new();
    let mut held_out = Vec::new();
    let mut examples = 0;
    let mut id = 0u64;
    while held_out.len() < 100 {
        let p = dataset::generate_problem(EnvKind::Tabletop, TRAIN_SEED, id, robot).expect("problem generation");
        id += 1;
        let outcome = dataset::plan_record(&ProblemRecord::from_problem(p, TRAIN_SEED), Expert::Hybrid, robot, PLAN_TIMEOUT, TRAIN_SEED);
        let Some(record) = outcome.record else { continue };
        if examples < 2000 {
            examples += record.trajectory.as_ref().unwrap().configs.len() - 1;
            train_records.push(record);
        } else {
            held_out.push(record.problem());
        }
    }
    let set = dataset::training_set(&train_records);
    let config = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let mut params = PolicyParams::new(PolicyProfile::desk(), &mut seeding::stream(TRAIN_SEED, u64::MAX));
    let curve = policy::train(&mut params, robot, &set, &config, |e, l| {
        eprintln!("  epoch {:>2}: total {:.5} (bc {:.5}, collision {:.5})", e + 1, l.total, l.bc, l.collision)
    })
    .expect("training");
    let train_time = clock.elapsed().as_secs_f64();
    let drop = 1.0 - curve.last().unwrap().total / curve[0].total;

    let eval = EvalConfig {
        seed: TRAIN_SEED,
        ..EvalConfig::default()
    };
    let trained_results = eval_metrics::evaluate_results(&Controller::Network(params.clone()), &held_out, robot, &eval);
    let zero = eval_metrics::evaluate_results(&Controller::Network(params.zeroed()), &held_out, robot, &eval);
    let line = eval_metrics::evaluate_results(&Controller::StraightLine, &held_out, robot, &eval);
    let (st, sz, sl) = (success_rate(&trained_results), success_rate(&zero), success_rate(&line));
    let elapsed = clock.elapsed().as_secs_f64();
    let verdict = Verdict::new(
        set.examples.len() >= 2000 && drop >= 0.5 && st >= sz + 0.2 && st >= sl + 0.2 && elapsed < 7200.0,
        format!(
            "{} examples from {} demonstrations; loss {:.4} -> {:.4} (drop {:.1}%); success trained {:.0}% / zero {:.0}% / straight line {:.0}% on {} held-out; train {train_time:.0} s, total {elapsed:.0} s",
            set.examples.len(),
            train_records.len(),
            curve[0].total,
            curve.last().unwrap().total,
            100.0 * drop,
            100.0 * st,
            100.0 * sz,
            100.0 * sl,
            held_out.len()
        ),
    );
    (
        verdict,
        Trained {
            params,
            held_out,
            trained_results,
        },
    )
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn a10(robot: &RobotModel, trained: &Trained) -> Verdict {
    let solvable: Vec<_> = trained
        .held_out
        .iter()
        .zip(&trained.trained_results)
        .filter(|(_, r)| r.success)
        .map(|(p, _)| p.clone())
        .collect();
    if solvable.is_empty() {
        return Verdict::new(false, "the trained policy solves none of the held-out problems, so the trends cannot be measured");
    }
    let controller = Controller::Network(trained.params.clone());
    let base = EvalConfig {
        seed: TRAIN_SEED,
        ..EvalConfig::default()
    };
    let stationary: Vec<RolloutResult> = solvable
        .iter()
        .map(|p| {
            let block = MovingBlock::for_problem(p, robot, 0.0);
            eval_metrics::rollout(&controller, p, robot, &base, &|t| block.scene_at(t))
        })
        .collect();
    let dynamic: Vec<f64> = [DynamicSpeed::Slow, DynamicSpeed::Medium, DynamicSpeed::Fast]
        .into_iter()
        .map(|speed| {
            let config = EvalConfig { dynamic: speed, ..base.clone() };
            success_rate(&eval_metrics::evaluate_results(&controller, &solvable, robot, &config))
        })
        .collect();
    let noise: Vec<f64> = [0.0, 0.01, 0.02, 0.03]
        .into_iter()
        .map(|sigma| {
            let config = EvalConfig {
                cloud_noise: sigma,
                ..base.clone()
            };
            success_rate(&eval_metrics::evaluate_results(&controller, &solvable, robot, &config))
        })
        .collect();
    let pct = |v: &[f64]| v.iter().map(|s| format!("{:.0}%", 100.0 * s)).collect::<Vec<_>>().join(" / ");
    Verdict::new(
        non_increasing(&dynamic) && non_increasing(&noise),
        format!(
            "{} solvable problems; block stationary {} then slow/medium/fast {}; noise 0/1/2/3 cm {}",
            solvable.len(),
            pct(&[success_rate(&stationary)]),
            pct(&dynamic),
            pct(&noise)
        ),
    )
}

// ---------------------------------------------------------------- A9

fn cli(args: &[&str], dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_motion-forge"))
        .args(args)
        .current_dir(dir)
        .env_remove(seeding::SEED_ENV)
        .stderr(std::process::Stdio::null())
        .status()
        .expect("launch cli");
    assert!(status.success(), "motion-forge {args:?} failed with {status}");
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).expect("read output") == std::fs::read(b).expect("read output")
}

fn a9(root: &Path) -> Verdict {
    let clock = Instant::now();
    let config = "epochs = 2\nbatch_size = 8\n\n[budget]\nobstacle = 256\nrobot = 128\ntarget = 128\n";
    let mut runs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let dir = root.join(run);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("train.toml"), config).unwrap();
        cli(&["gen", "--count", "9", "--seed", "7", "--out", "gen.jsonl"], &dir);
        for expert in ["global", "hybrid"] {
            let out = format!("{expert}.jsonl");
            cli(&["plan", "--expert", expert, "--in", "gen.jsonl", "--out", &out, "--workers", workers], &dir);
        }
        cli(&["train", "--data", "hybrid.jsonl", "--config", "train.toml", "--out", "policy.ckpt", "--seed", "3"], &dir);
        runs.push(dir);
    }
    let files = [
        "gen.jsonl",
        "gen.jsonl.manifest.json",
        "global.jsonl",
        "global.jsonl.manifest.json",
        "hybrid.jsonl",
        "hybrid.jsonl.manifest.json",
        "policy.ckpt",
        "policy.ckpt.curve.jsonl",
    ];
    let mut differing = Vec::new();
    for f in files {
        for other in &runs[1..] {
            if !same_bytes(&runs[0].join(f), &other.join(f)) {
                differing.push(format!("{f} ({})", other.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    let detail = if differing.is_empty() {
        format!("{} outputs byte-identical across two runs and workers 1 vs 4, {:.0} s", files.len(), clock.elapsed().as_secs_f64())
    } else {
        format!("differing: {}", differing.join(", "))
    };
    Verdict::new(differing.is_empty(), detail)
}

// ---------------------------------------------------------------- A11

fn a11(robot: &RobotModel) -> Verdict {
    let mut rng = seeding::stream(11, 0);
    let params = PolicyParams::new(PolicyProfile::desk(), &mut rng);
    let (cloud, _, _, _, _) = desk_cloud(robot, &mut rng);
    let starts = draw_starts(&params.encoder.profile, cloud.len(), &mut rng);
    let (a, _) = encode_cloud_from(&cloud, &params.encoder, &starts).unwrap();

    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.shuffle(&mut rng);
    let mut mapped = starts.clone();
    mapped[0] = perm.iter().position(|&i| i == starts[0]).unwrap();
    let (b, _) = encode_cloud_from(&cloud.select(&perm), &params.encoder, &mapped).unwrap();
    let perm_diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let twice: Vec<usize> = (0..cloud.len()).flat_map(|i| [i, i]).collect();
    let (c, _) = encoder::encode_cloud(&cloud, &params.encoder, &mut seeding::stream(11, 1)).unwrap();
    let (d, _) = encoder::encode_cloud(&cloud.select(&twice), &params.encoder, &mut seeding::stream(11, 1)).unwrap();
    let dup_same = c == d;

    let paper = PolicyParams::new(PolicyProfile::paper(), &mut rng);
    let (big, qn, _, _, _) = desk_cloud(robot, &mut rng);
    let (emb, _) = encoder::encode_cloud(&big, &paper.encoder, &mut rng).unwrap();
    let (dq, _) = policy::policy_forward(&paper, &big, &qn, &mut rng).unwrap();
    let chain_ok = emb.len() == 2048 && emb.iter().all(|v| v.is_finite()) && dq.iter().all(|v| v.is_finite());

    Verdict::new(
        perm_diff <= 1e-9 && dup_same && chain_ok,
        format!(
            "permutation max diff {perm_diff:.1e}; duplicated cloud identical: {dup_same}; paper chain embedding width {} finite: {chain_ok}",
            emb.len()
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let robot = RobotModel::panda();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failed = Vec::new();
    let mut report = |id: &str, title: &str, run: &mut dyn FnMut() -> Verdict| {
        let clock = Instant::now();
        let v = run();
        println!(
            "{id:<4}{}  {title}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            clock.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(id.to_string());
        }
    };

    if wanted("A1") {
        report("A1", "forward kinematics oracle", &mut || a1(&robot));
    }
    if wanted("A2") {
        report("A2", "signed distance oracle", &mut || a2());
    }
    if wanted("A3") {
        report("A3", "gradient suite", &mut || a3(&robot));
    }
    if ["A4", "A5", "A6", "A8"].iter().any(|id| wanted(id)) {
        let clock = Instant::now();
        let run = run_experts(&robot, tmp.path());
        eprintln!("  expert runs: {:.1} s", clock.elapsed().as_secs_f64());
        if wanted("A4") {
            report("A4", "expert gatekeeping", &mut || a4(&robot, &run));
        }
        if wanted("A5") {
            report("A5", "hybrid smoothness", &mut || a5(&robot, &run));
        }
        if wanted("A6") {
            report("A6", "planning speed ordering", &mut || a6(&run));
        }
        if wanted("A8") {
            report("A8", "goal revision identity", &mut || a8(&robot, &run));
        }
    }
    if wanted("A7") || wanted("A10") {
        let mut trained = None;
        report("A7", "training signal", &mut || {
            let (v, t) = a7(&robot);
            trained = Some(t);
            v
        });
        if wanted("A10") {
            let trained = trained.expect("A7 ran");
            report("A10", "robustness trends", &mut || a10(&robot, &trained));
        }
    }
    if wanted("A9") {
        report("A9", "determinism", &mut || a9(tmp.path()));
    }
    if wanted("A11") {
        report("A11", "encoder properties", &mut || a11(&robot));
    }

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
