//! Joint-space curves: polylines, cubic Hermite segments, natural cubic
//! splines, and uniform arc-length resampling.

use crate::kinematics::{JointConfig, JointVector};

pub fn polyline_length(path: &[JointConfig]) -> f64 {
    path.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Inserts points so that consecutive configurations are at most `spacing`
/// apart. Original vertices are kept bitwise.
pub fn densify(path: &[JointConfig], spacing: f64) -> Vec<JointConfig> {
    let mut out = Vec::with_capacity(path.len());
    if let Some(first) = path.first() {
        out.push(*first);
    }
    for w in path.windows(2) {
        let n = (w[0].distance(&w[1]) / spacing).ceil().max(1.0) as usize;
        for k in 1..n {
            out.push(w[0].lerp(&w[1], k as f64 / n as f64));
        }
        out.push(w[1]);
    }
    out
}

/// Resamples a polyline at equal arc-length steps no longer than `step`.
/// The first and last configurations are copied exactly; a zero-length
/// path yields its two endpoints.
pub fn resample_polyline(path: &[JointConfig], step: f64) -> Vec<JointConfig> {
    let (first, last) = match (path.first(), path.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Vec::new(),
    };
    let total = polyline_length(path);
    if total <= 0.0 {
        return vec![first, last];
    }
    let k = (total / step).ceil().max(1.0) as usize;
    let delta = total / k as f64;
    let mut out = Vec::with_capacity(k + 1);
    out.push(first);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 1..k {
        let s = delta * i as f64;
        loop {
            let len = path[seg].distance(&path[seg + 1]);
            if seg_start + len >= s || seg + 2 == path.len() {
                let u = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push(path[seg].lerp(&path[seg + 1], u));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(last);
    out
}

/// Cubic Hermite segment on `u ∈ [0, 1]` with end tangents `m0`, `m1`.
#[derive(Clone, Copy, Debug)]
pub struct Hermite {
    pub p0: JointVector,
    pub p1: JointVector,
    pub m0: JointVector,
    pub m1: JointVector,
}

impl Hermite {
    pub fn eval(&self, u: f64) -> JointVector {
        let u2 = u * u;
        let u3 = u2 * u;
        self.p0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + self.m0 * (u3 - 2.0 * u2 + u)
            + self.p1 * (-2.0 * u3 + 3.0 * u2)
            + self.m1 * (u3 - u2)
    }

    /// Samples with spacing at most `spacing`; endpoints are exact.
    pub fn sample(&self, a: &JointConfig, b: &JointConfig, spacing: f64) -> Vec<JointConfig> {
        let mut n = 16usize;
        loop {
            let mut pts = Vec::with_capacity(n + 1);
            pts.push(*a);
            for k in 1..n {
                pts.push(JointConfig::from_vector(&self.eval(k as f64 / n as f64)));
            }
            pts.push(*b);
            let widest = pts.windows(2).map(|w| w[0].distance(&w[1])).fold(0.0, f64::max);
            if widest <= spacing || n >= 1 << 16 {
                return pts;
            }
            n = ((n as f64) * (widest / spacing) * 1.1).ceil() as usize;
        }
    }
}

/// Natural cubic spline through `points` at increasing parameters `knots`.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    knots: Vec<f64>,
    a: Vec<JointVector>,
    b: Vec<JointVector>,
    c: Vec<JointVector>,
    d: Vec<JointVector>,
}

impl CubicSpline {
    /// Chord-length parametrized natural spline. Requires at least two
    /// points with positive consecutive distances.
    pub fn through(points: &[JointConfig]) -> Self {
        let mut knots = vec![0.0];
        for w in points.windows(2) {
            knots.push(knots.last().unwrap() + w[0].distance(&w[1]));
        }
        Self::natural(&knots, &points.iter().map(JointConfig::vector).collect::<Vec<_>>())
    }

    pub fn natural(knots: &[f64], y: &[JointVector]) -> Self {
        let n = y.len() - 1;
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        // tridiagonal system for second-derivative coefficients c
        let mut c = vec![JointVector::zeros(); n + 1];
        if n >= 2 {
            let mut diag = vec![0.0; n + 1];
            let mut rhs = vec![JointVector::zeros(); n + 1];
            let mut upper = vec![0.0; n + 1];
            diag[0] = 1.0;
            diag[n] = 1.0;
            for i in 1..n {
                diag[i] = 2.0 * (h[i - 1] + h[i]);
                upper[i] = h[i];
                rhs[i] = (y[i + 1] - y[i]) * (3.0 / h[i]) - (y[i] - y[i - 1]) * (3.0 / h[i - 1]);
            }
            // Thomas algorithm; row i has sub-diagonal h[i-1]
            for i in 1..n {
                let sub = h[i - 1];
                let w = if i == 1 { 0.0 } else { sub / diag[i - 1] };
                diag[i] -= w * upper[i - 1];
                let prev = rhs[i - 1];
                rhs[i] -= prev * w;
            }
            for i in (1..n).rev() {
                c[i] = (rhs[i] - c[i + 1] * upper[i]) / diag[i];
            }
        }
        let mut b = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            b.push((y[i + 1] - y[i]) / h[i] - (c[i + 1] + c[i] * 2.0) * (h[i] / 3.0));
            d.push((c[i + 1] - c[i]) / (3.0 * h[i]));
        }
        c.truncate(n);
        Self {
            knots: knots.to_vec(),
            a: y.to_vec(),
            b,
            c,
            d,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.b.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Value at `t`; knots return their points exactly.
    pub fn eval(&self, t: f64) -> JointVector {
        let (_, hi) = self.domain();
        if t >= hi {
            return *self.a.last().unwrap();
        }
        let i = self.segment(t);
        let u = t - self.knots[i];
        self.a[i] + (self.b[i] + (self.c[i] + self.d[i] * u) * u) * u
    }

    pub fn derivative(&self, t: f64) -> JointVector {
        let i = self.segment(t);
        let u = t - self.knots[i];
        self.b[i] + (self.c[i] * 2.0 + self.d[i] * (3.0 * u)) * u
    }

    /// Parameters of points at equal arc-length steps no longer than
    /// `step`, found from a dense arc-length table.
    pub fn uniform_arc_parameters(&self, step: f64) -> Vec<f64> {
        const SUB: usize = 64;
        let mut ts = Vec::new();
        let mut ss = Vec::new();
        let mut s = 0.0;
        let mut prev = self.eval(self.knots[0]);
        ts.push(self.knots[0]);
        ss.push(0.0);
        for w in self.knots.windows(2) {
            for k in 1..=SUB {
                let t = w[0] + (w[1] - w[0]) * k as f64 / SUB as f64;
                let p = self.eval(t);
                s += (p - prev).norm();
                prev = p;
                ts.push(t);
                ss.push(s);
            }
        }
        let (lo, hi) = self.domain();
        if s <= 0.0 {
            return vec![lo, hi];
        }
        let k = (s / step).ceil().max(1.0) as usize;
        let delta = s / k as f64;
        let mut out = Vec::with_capacity(k + 1);
        out.push(lo);
        let mut j = 0;
        for i in 1..k {
            let target = delta * i as f64;
            while ss[j + 1] < target {
                j += 1;
            }
            let u = (target - ss[j]) / (ss[j + 1] - ss[j]);
            out.push(ts[j] + u * (ts[j + 1] - ts[j]));
        }
        out.push(hi);
        out
    }
}
