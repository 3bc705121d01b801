//! The neural motion policy: observation assembly, the forward pass over
//! encoder, configuration encoder and displacement decoder, the step rule,
//! the geometric and collision losses with analytic gradients, training
//! with Adam, and checkpoints.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{draw_starts, encode_backward, encode_cloud_from, read_checkpoint_header, read_params_into, write_params, CloudTensor, EncoderCache, EncoderParams, EncoderProfile, PointClass};
use crate::geometry::Pose;
use crate::kinematics::{JointConfig, NormalizedConfig, RobotModel, DOF};
use crate::nn::{Adam, AdamConfig, BlockCache, Mat, Mlp, Module, Param, Tail};
use crate::scene::{sample_surface_cloud, Scene};
use crate::seeding;
use crate::{Error, Result};

pub const GRIPPER_POINTS: usize = 128;
pub const CONFIG_EMBEDDING: usize = 64;

/// Points per class in an assembled observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudBudget {
    pub obstacle: usize,
    pub robot: usize,
    pub target: usize,
}

impl Default for CloudBudget {
    fn default() -> Self {
        Self {
            obstacle: 2048,
            robot: 1024,
            target: GRIPPER_POINTS,
        }
    }
}

impl CloudBudget {
    pub fn total(&self) -> usize {
        self.obstacle + self.robot + self.target
    }
}

/// One supervised transition; `scene` indexes the training set's scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub scene: usize,
    pub q_t: JointConfig,
    pub q_next: JointConfig,
    pub target: Pose,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub scenes: Vec<Scene>,
    pub examples: Vec<TrainingExample>,
}

/// Fixed points on the gripper proxy spheres in the end-effector frame,
/// allotted by sphere area on a Fibonacci lattice.
pub fn gripper_points(robot: &RobotModel) -> Vec<Vector3<f64>> {
    let spheres = &robot.gripper_proxy;
    let area: f64 = spheres.iter().map(|s| s.radius * s.radius).sum();
    let mut counts: Vec<usize> = spheres
        .iter()
        .map(|s| (GRIPPER_POINTS as f64 * s.radius * s.radius / area).floor() as usize)
        .collect();
    let mut i = 0;
    while counts.iter().sum::<usize>() < GRIPPER_POINTS {
        counts[i % spheres.len()] += 1;
        i += 1;
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut out = Vec::with_capacity(GRIPPER_POINTS);
    for (s, &n) in spheres.iter().zip(&counts) {
        for k in 0..n {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            out.push(s.center + Vector3::new(r * phi.cos(), r * phi.sin(), z) * s.radius);
        }
    }
    out
}

/// Input-side joint noise, clamped to the limits after it is added.
pub fn perturb_config<R: Rng + ?Sized>(robot: &RobotModel, q: &JointConfig, sigma: f64, rng: &mut R) -> JointConfig {
    if sigma <= 0.0 {
        return robot.clamp_to_limits(q);
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut noisy = *q;
    for v in noisy.0.iter_mut() {
        *v += normal.sample(rng);
    }
    robot.clamp_to_limits(&noisy)
}

fn subsample<R: Rng + ?Sized>(points: Vec<Vector3<f64>>, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    if points.len() <= n {
        return points;
    }
    let mut picks = index::sample(rng, points.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| points[i]).collect()
}

/// Labelled cloud from robot, obstacle and target points, in that order.
pub fn build_cloud(robot: Vec<Vector3<f64>>, obstacle: Vec<Vector3<f64>>, target: Vec<Vector3<f64>>) -> CloudTensor {
    let mut classes = vec![PointClass::Robot; robot.len()];
    classes.extend(std::iter::repeat_n(PointClass::Obstacle, obstacle.len()));
    classes.extend(std::iter::repeat_n(PointClass::Target, target.len()));
    let mut points = robot;
    points.extend(obstacle);
    points.extend(target);
    CloudTensor::from_labeled(points, &classes)
}

/// Robot points at `q`, subsampled to the budget.
pub fn robot_cloud<R: Rng + ?Sized>(robot: &RobotModel, q: &JointConfig, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    subsample(robot.surface_points(q), n, rng)
}

pub fn target_cloud(robot: &RobotModel, target: &Pose) -> Vec<Vector3<f64>> {
    gripper_points(robot).iter().map(|p| target.transform_point(p)).take(GRIPPER_POINTS).collect()
}

/// Observation for one step: perturbs `q_t`, samples the scene surface,
/// and returns the cloud, the normalized perturbed configuration and the
/// perturbed configuration itself.
pub fn assemble_input<R: Rng + ?Sized>(
    example: &TrainingExample,
    scene: &Scene,
    robot: &RobotModel,
    budget: &CloudBudget,
    rng: &mut R,
    noise_sigma: f64,
) -> (CloudTensor, NormalizedConfig, JointConfig) {
    let q = perturb_config(robot, &example.q_t, noise_sigma, rng);
    let robot_pts = robot_cloud(robot, &q, budget.robot, rng);
    let obstacle = sample_surface_cloud(scene, budget.obstacle, rng);
    let target = subsample(target_cloud(robot, &example.target), budget.target, rng);
    (build_cloud(robot_pts, obstacle, target), robot.normalize_config(&q), q)
}

/// Observation at inference time from an externally sensed obstacle cloud.
pub fn observe<R: Rng + ?Sized>(
    robot: &RobotModel,
    q: &JointConfig,
    obstacle: Vec<Vector3<f64>>,
    target: &Pose,
    budget: &CloudBudget,
    rng: &mut R,
) -> (CloudTensor, NormalizedConfig) {
    let robot_pts = robot_cloud(robot, q, budget.robot, rng);
    let target = subsample(target_cloud(robot, target), budget.target, rng);
    (build_cloud(robot_pts, obstacle, target), robot.normalize_config(q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    pub name: String,
    pub encoder: EncoderProfile,
    /// Hidden widths of the configuration encoder.
    pub config_hidden: Vec<usize>,
    /// Hidden widths of the decoder.
    pub decoder_hidden: Vec<usize>,
}

impl PolicyProfile {
    pub fn paper() -> Self {
        Self {
            name: "paper-shapes".into(),
            encoder: EncoderProfile::paper(),
            config_hidden: vec![32, 64, 128, 128],
            decoder_hidden: vec![512, 256, 128],
        }
    }

    /// Encoder widths divided by eight; MLP hidden widths divided by four.
    pub fn desk() -> Self {
        let p = Self::paper();
        Self {
            name: "desk".into(),
            encoder: EncoderProfile::desk(),
            config_hidden: p.config_hidden.iter().map(|w| w / 4).collect(),
            decoder_hidden: p.decoder_hidden.iter().map(|w| w / 4).collect(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-shapes" => Ok(Self::paper()),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub profile: PolicyProfile,
    pub encoder: EncoderParams,
    pub config_encoder: Mlp,
    pub decoder: Mlp,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(profile: PolicyProfile, rng: &mut R) -> Self {
        let encoder = EncoderParams::new(profile.encoder.clone(), rng);
        let mut cw = vec![DOF];
        cw.extend(&profile.config_hidden);
        cw.push(CONFIG_EMBEDDING);
        let config_encoder = Mlp::new(&cw, 0, Tail::Linear, rng);
        let mut dw = vec![profile.encoder.embedding_width() + CONFIG_EMBEDDING];
        dw.extend(&profile.decoder_hidden);
        dw.push(DOF);
        let decoder = Mlp::new(&dw, 0, Tail::Linear, rng);
        Self {
            profile,
            encoder,
            config_encoder,
            decoder,
        }
    }

    /// Same shapes with every parameter zero.
    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.visit(&mut |p| {
            p.value.fill(0.0);
            p.grad.fill(0.0);
        });
        z
    }
}

impl Module for PolicyParams {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit(f);
        self.config_encoder.visit(f);
        self.decoder.visit(f);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.visit_ref(f);
        self.config_encoder.visit_ref(f);
        self.decoder.visit_ref(f);
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    encoder: EncoderCache,
    config: Vec<BlockCache>,
    decoder: Vec<BlockCache>,
    embedding_width: usize,
}

/// Normalized-space displacement for one observation.
pub fn policy_forward<R: Rng + ?Sized>(
    params: &PolicyParams,
    cloud: &CloudTensor,
    qn: &NormalizedConfig,
    rng: &mut R,
) -> Result<([f64; DOF], ForwardCache)> {
    let starts = draw_starts(&params.profile.encoder, cloud.len(), rng);
    policy_forward_from(params, cloud, qn, &starts)
}

/// Forward pass with fixed sampling start indices, one per sampled block.
pub fn policy_forward_from(
    params: &PolicyParams,
    cloud: &CloudTensor,
    qn: &NormalizedConfig,
    starts: &[usize],
) -> Result<([f64; DOF], ForwardCache)> {
    let (emb, encoder) = encode_cloud_from(cloud, &params.encoder, starts)?;
    let (cfg, config) = params.config_encoder.forward(&Mat::from_row_slice(1, DOF, &qn.0));
    let mut z = Mat::zeros(1, emb.len() + cfg.ncols());
    for (j, v) in emb.iter().chain(cfg.iter()).enumerate() {
        z[(0, j)] = *v;
    }
    let (out, decoder) = params.decoder.forward(&z);
    let mut dq = [0.0; DOF];
    dq.iter_mut().zip(out.iter()).for_each(|(d, v)| *d = *v);
    Ok((
        dq,
        ForwardCache {
            encoder,
            config,
            decoder,
            embedding_width: emb.len(),
        },
    ))
}

/// Accumulates parameter gradients for `d_dq`.
pub fn policy_backward(params: &mut PolicyParams, cache: &ForwardCache, d_dq: &[f64; DOF]) {
    let dz = params.decoder.backward(&cache.decoder, &Mat::from_row_slice(1, DOF, d_dq));
    let e = cache.embedding_width;
    let d_emb: Vec<f64> = (0..e).map(|j| dz[(0, j)]).collect();
    let d_cfg = Mat::from_fn(1, dz.ncols() - e, |_, j| dz[(0, e + j)]);
    params.config_encoder.backward(&cache.config, &d_cfg);
    encode_backward(&mut params.encoder, &cache.encoder, &d_emb);
}

/// Adds the displacement in normalized space, clamps to `[-1, 1]` and maps
/// back to joint angles.
pub fn policy_step(robot: &RobotModel, q_t: &JointConfig, dqn: &[f64; DOF]) -> JointConfig {
    let qn = robot.normalize_config(q_t);
    let mut next = [0.0; DOF];
    for j in 0..DOF {
        next[j] = (qn.0[j] + dqn[j]).clamp(-1.0, 1.0);
    }
    robot.unnormalize_config(&NormalizedConfig(next))
}

/// `∂q̂/∂Δqn` per joint: the half range where the clamp is inactive, zero
/// where it saturates.
fn step_jacobian(robot: &RobotModel, q_t: &JointConfig, dqn: &[f64; DOF]) -> [f64; DOF] {
    let qn = robot.normalize_config(q_t);
    let half = robot.half_ranges();
    let mut out = [0.0; DOF];
    for j in 0..DOF {
        let v = qn.0[j] + dqn[j];
        if v > -1.0 && v < 1.0 {
            out[j] = half[j];
        }
    }
    out
}

/// Sum over point pairs of L2 plus L1 residual norms, and the gradient
/// with respect to each predicted point.
pub fn point_pair_loss(pred: &[Vector3<f64>], target: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let mut loss = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            let n = d.norm();
            loss += n + d.abs().sum();
            let l2 = if n > 0.0 { d / n } else { Vector3::zeros() };
            l2 + d.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
        })
        .collect();
    (loss, grads)
}

/// Hinge penetration summed over points and primitives, with per-point
/// gradients. Points exactly on a surface contribute no gradient.
pub fn penetration_loss(points: &[Vector3<f64>], scene: &Scene) -> (f64, Vec<Vector3<f64>>) {
    let mut loss = 0.0;
    let grads = points
        .iter()
        .map(|p| {
            let mut g = Vector3::zeros();
            for prim in &scene.primitives {
                let (d, grad) = prim.sdf_with_gradient(p);
                if d < 0.0 {
                    loss -= d;
                    g -= grad;
                }
            }
            g
        })
        .collect();
    (loss, grads)
}

/// Pulls per-anchor point gradients back to `Δqn`. Anchors listed in
/// `skip_links` are ignored.
fn pull_back(robot: &RobotModel, q_hat: &JointConfig, point_grads: &[Vector3<f64>], step_jac: &[f64; DOF]) -> [f64; DOF] {
    let frames = robot.forward_kinematics(q_hat);
    let axes = robot.joint_axes(&frames);
    let pts = robot.surface_points_from_frames(&frames);
    let mut dq = nalgebra::SVector::<f64, DOF>::zeros();
    for ((anchor, p), g) in robot.surface_anchors.iter().zip(&pts).zip(point_grads) {
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        dq += robot.point_jacobian(&axes, anchor.link, p).transpose() * g;
    }
    let mut out = [0.0; DOF];
    for j in 0..DOF {
        out[j] = dq[j] * step_jac[j];
    }
    out
}

/// Geometric imitation loss between robot surface points at the stepped
/// configuration and at `q_next`.
pub fn loss_bc(robot: &RobotModel, q_t: &JointConfig, dqn: &[f64; DOF], q_next: &JointConfig) -> (f64, [f64; DOF]) {
    let q_hat = policy_step(robot, q_t, dqn);
    let (loss, g) = point_pair_loss(&robot.surface_points(&q_hat), &robot.surface_points(q_next));
    (loss, pull_back(robot, &q_hat, &g, &step_jacobian(robot, q_t, dqn)))
}

/// Hinge penetration of the stepped robot's moving surface points into
/// every scene primitive. Points on the fixed base are excluded.
pub fn loss_collision(robot: &RobotModel, q_t: &JointConfig, dqn: &[f64; DOF], scene: &Scene) -> (f64, [f64; DOF]) {
    let q_hat = policy_step(robot, q_t, dqn);
    let pts = robot.surface_points(&q_hat);
    let (mut loss, mut g) = (0.0, Vec::with_capacity(pts.len()));
    for (a, p) in robot.surface_anchors.iter().zip(&pts) {
        if a.link == 0 {
            g.push(Vector3::zeros());
            continue;
        }
        let (l, pg) = penetration_loss(std::slice::from_ref(p), scene);
        loss += l;
        g.push(pg[0]);
    }
    (loss, pull_back(robot, &q_hat, &g, &step_jacobian(robot, q_t, dqn)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bc: f64,
    pub collision: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bc: f64, collision: f64, lambda: f64) -> Self {
        Self {
            bc,
            collision,
            total: bc + lambda * collision,
        }
    }
}

/// Both losses and the gradient of `bc + λ·collision` with respect to
/// `Δqn`.
pub fn compound_loss(
    robot: &RobotModel,
    q_t: &JointConfig,
    dqn: &[f64; DOF],
    q_next: &JointConfig,
    scene: &Scene,
    lambda: f64,
) -> (LossBreakdown, [f64; DOF]) {
    let (bc, gb) = loss_bc(robot, q_t, dqn, q_next);
    let (col, gc) = loss_collision(robot, q_t, dqn, scene);
    let mut g = [0.0; DOF];
    for j in 0..DOF {
        g[j] = gb[j] + lambda * gc[j];
    }
    (LossBreakdown::new(bc, col, lambda), g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub budget: CloudBudget,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub profile: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            lambda: 1.0,
            noise_sigma: 0.02,
            budget: CloudBudget::default(),
            epochs: 20,
            batch_size: 32,
            seed: 0,
            profile: "desk".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.lambda >= 0.0
            && self.noise_sigma >= 0.0
            && self.batch_size >= 1
            && self.budget.obstacle >= 1
            && self.budget.robot >= 1
            && self.budget.target >= 1;
        if !ok {
            return Err(Error::InvalidArgument("training config out of range".into()));
        }
        PolicyProfile::by_name(&self.profile).map(|_| ())
    }
}

const SHUFFLE_TAG: u64 = 0x5348_5546;
const ASSEMBLE_TAG: u64 = 0x4153_4d42;

/// Loss and gradient accumulation for one example under the epoch's RNG
/// substream.
pub fn example_step(
    params: &mut PolicyParams,
    robot: &RobotModel,
    set: &TrainingSet,
    id: usize,
    epoch: usize,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let ex = &set.examples[id];
    let scene = &set.scenes[ex.scene];
    let mut rng = seeding::substream(config.seed, &[ASSEMBLE_TAG, epoch as u64, id as u64]);
    let (cloud, qn, q_noisy) = assemble_input(ex, scene, robot, &config.budget, &mut rng, config.noise_sigma);
    let (dq, cache) = policy_forward(params, &cloud, &qn, &mut rng)?;
    let (loss, grad) = compound_loss(robot, &q_noisy, &dq, &ex.q_next, scene, config.lambda);
    if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { example: id });
    }
    policy_backward(params, &cache, &grad);
    Ok(loss)
}

/// Minibatch Adam over the training set; returns the per-epoch mean losses.
/// `on_epoch` sees each epoch's mean as soon as it is known.
pub fn train(
    params: &mut PolicyParams,
    robot: &RobotModel,
    set: &TrainingSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>> {
    config.validate()?;
    if set.examples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut adam = Adam::new(
        &*params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    params.zero_grad();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..set.examples.len()).collect();
        order.shuffle(&mut seeding::substream(config.seed, &[SHUFFLE_TAG, epoch as u64]));
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            for &id in batch {
                let l = example_step(params, robot, set, id, epoch, config)?;
                sum.bc += l.bc;
                sum.collision += l.collision;
                sum.total += l.total;
            }
            adam.step(params, 1.0 / batch.len() as f64);
        }
        let n = set.examples.len() as f64;
        let mean = LossBreakdown::new(sum.bc / n, sum.collision / n, config.lambda);
        on_epoch(epoch, &mean);
        curve.push(mean);
    }
    Ok(curve)
}

/// Writes the policy in the shared checkpoint format.
pub fn write_checkpoint<W: Write>(params: &PolicyParams, w: W) -> Result<()> {
    write_params(params, &params.profile.name, w)
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<PolicyParams> {
    let header = read_checkpoint_header(&mut r)?;
    let profile = PolicyProfile::by_name(&header.profile)?;
    let mut params = PolicyParams::new(profile, &mut seeding::stream(0, 0));
    read_params_into(&mut params, &header, r)?;
    Ok(params)
}
