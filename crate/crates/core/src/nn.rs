//! Dense layers with hand-written backward passes: linear maps, group
//! normalization, leaky ReLU, layer stacks, and the Adam optimizer.
//!
//! Activations are row-major in meaning: one row per sample or point, one
//! column per channel.

use nalgebra::DMatrix;
use rand::Rng;

pub type Mat = DMatrix<f64>;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;

/// A trainable tensor and its gradient accumulator (same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Mat,
    pub grad: Mat,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            value: Mat::zeros(rows, cols),
            grad: Mat::zeros(rows, cols),
        }
    }

    pub fn from_value(value: Mat) -> Self {
        let grad = Mat::zeros(value.nrows(), value.ncols());
        Self { value, grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Anything owning parameters, visited in a fixed order.
pub trait Module {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param));

    fn visit_ref(&self, f: &mut dyn FnMut(&Param));

    fn zero_grad(&mut self) {
        self.visit(&mut |p| p.grad.fill(0.0));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_ref(&mut |p| n += p.value.len());
        n
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.visit_ref(&mut |p| out.push(p.shape()));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub w: Param,
    /// `out × 1`.
    pub b: Param,
}

impl Linear {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            w: Param::zeros(out, inp),
            b: Param::zeros(out, 1),
        }
    }

    /// Weights and biases uniform in `±1/√inp`. Keeps an untrained
    /// displacement head well inside the clamp range.
    pub fn init<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let mut layer = Self::zeros(inp, out);
        layer.w.value = Mat::from_fn(out, inp, |_, _| rng.random_range(-bound..bound));
        layer.b.value = Mat::from_fn(out, 1, |_, _| rng.random_range(-bound..bound));
        layer
    }

    pub fn input_width(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x * self.w.value.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.value.transpose();
        }
        y
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        self.w.grad += dy.transpose() * x;
        for (j, col) in dy.column_iter().enumerate() {
            self.b.grad[j] += col.sum();
        }
        dy * &self.w.value
    }
}

impl Module for Linear {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w);
        f(&self.b);
    }
}

/// Group normalization whose statistics span every row and the channels of
/// one group, with a per-channel affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    /// `1 × channels`.
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "{channels} channels do not split into {groups} groups");
        let mut gamma = Param::zeros(1, channels);
        gamma.value.fill(1.0);
        Self {
            groups,
            gamma,
            beta: Param::zeros(1, channels),
        }
    }

    fn group_width(&self) -> usize {
        self.gamma.value.ncols() / self.groups
    }

    pub fn forward(&self, x: &Mat) -> (Mat, NormCache) {
        let (rows, cols) = x.shape();
        let cg = self.group_width();
        let count = (rows * cg) as f64;
        let mut xhat = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let block = x.columns(g * cg, cg);
            let mean = block.sum() / count;
            let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            rstd.push(r);
            xhat.columns_mut(g * cg, cg).copy_from(&block.map(|v| (v - mean) * r));
        }
        let mut y = xhat.clone();
        for (j, mut col) in y.column_iter_mut().enumerate() {
            let (s, t) = (self.gamma.value[j], self.beta.value[j]);
            col.apply(|v| *v = *v * s + t);
        }
        (y, NormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &NormCache, dy: &Mat) -> Mat {
        let (rows, cols) = dy.shape();
        let cg = self.group_width();
        let count = (rows * cg) as f64;
        let mut dxhat = dy.clone();
        for j in 0..cols {
            self.gamma.grad[j] += dy.column(j).dot(&cache.xhat.column(j));
            self.beta.grad[j] += dy.column(j).sum();
            let s = self.gamma.value[j];
            dxhat.column_mut(j).apply(|v| *v *= s);
        }
        let mut dx = Mat::zeros(rows, cols);
        for g in 0..self.groups {
            let d = dxhat.columns(g * cg, cg);
            let xh = cache.xhat.columns(g * cg, cg);
            let sum_d = d.sum();
            let sum_dx = d.dot(&xh);
            let r = cache.rstd[g];
            let block = d.zip_map(&xh, |dv, xv| r / count * (count * dv - sum_d - xv * sum_dx));
            dx.columns_mut(g * cg, cg).copy_from(&block);
        }
        dx
    }
}

impl Module for GroupNorm {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
}

pub fn leaky_relu(x: &Mat) -> Mat {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward(x: &Mat, dy: &Mat) -> Mat {
    dy.zip_map(x, |d, v| if v > 0.0 { d } else { LEAKY_SLOPE * d })
}

/// Linear, optional group norm, optional leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub linear: Linear,
    pub norm: Option<GroupNorm>,
    pub activate: bool,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Mat,
    norm: Option<NormCache>,
    pre_activation: Mat,
}

/// A stack of blocks applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tail {
    /// Every layer, including the last, is normalized and activated.
    Activated,
    /// The last layer is a plain linear map.
    Linear,
}

impl Mlp {
    /// `widths[0]` is the input width. `groups == 0` disables normalization.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], groups: usize, tail: Tail, rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let blocks = (0..n)
            .map(|i| {
                let last_plain = i + 1 == n && tail == Tail::Linear;
                Block {
                    linear: Linear::init(widths[i], widths[i + 1], rng),
                    norm: (groups > 0 && !last_plain).then(|| GroupNorm::new(widths[i + 1], groups)),
                    activate: !last_plain,
                }
            })
            .collect();
        Self { blocks }
    }

    pub fn input_width(&self) -> usize {
        self.blocks[0].linear.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.blocks.last().unwrap().linear.output_width()
    }

    pub fn forward(&self, x: &Mat) -> (Mat, Vec<BlockCache>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &self.blocks {
            let z = block.linear.forward(&h);
            let (u, norm) = match &block.norm {
                Some(gn) => {
                    let (u, c) = gn.forward(&z);
                    (u, Some(c))
                }
                None => (z, None),
            };
            let out = if block.activate { leaky_relu(&u) } else { u.clone() };
            caches.push(BlockCache {
                input: h,
                norm,
                pre_activation: u,
            });
            h = out;
        }
        (h, caches)
    }

    pub fn infer(&self, x: &Mat) -> Mat {
        self.forward(x).0
    }

    pub fn backward(&mut self, caches: &[BlockCache], dy: &Mat) -> Mat {
        let mut d = dy.clone();
        for (block, cache) in self.blocks.iter_mut().zip(caches).rev() {
            if block.activate {
                d = leaky_relu_backward(&cache.pre_activation, &d);
            }
            if let Some(gn) = block.norm.as_mut() {
                d = gn.backward(cache.norm.as_ref().expect("cache matches block"), &d);
            }
            d = block.linear.backward(&cache.input, &d);
        }
        d
    }
}

impl Module for Mlp {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.linear.visit(f);
            if let Some(n) = b.norm.as_mut() {
                n.visit(f);
            }
        }
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            b.linear.visit_ref(f);
            if let Some(n) = &b.norm {
                n.visit_ref(f);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers follow the module's visit
/// order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new<M: Module + ?Sized>(module: &M, config: AdamConfig) -> Self {
        let mut m = Vec::new();
        module.visit_ref(&mut |p| m.push(Mat::zeros(p.value.nrows(), p.value.ncols())));
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// Applies gradients scaled by `scale` and clears them.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, scale: f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit(&mut |p| {
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for k in 0..p.value.len() {
                let g = p.grad[k] * scale;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.value[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
            p.grad.fill(0.0);
            i += 1;
        });
    }
}
