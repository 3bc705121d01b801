//! Single-view partial point clouds by sphere tracing the scene SDF.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::scene::{Scene, Shape};
use crate::{Error, Result};

pub const MAX_STEPS: usize = 128;
pub const SURFACE_TOLERANCE: f64 = 1e-4;
pub const MAX_DEPTH: f64 = 10.0;

/// Pinhole camera. In the camera frame z looks forward, x right, y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pose: Pose,
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// 60° vertical field of view, 4:3 pixel grid.
    pub fn new(pose: Pose) -> Self {
        Self {
            pose,
            vertical_fov: 60f64.to_radians(),
            width: 96,
            height: 72,
        }
    }

    /// Camera at `eye` looking at `target` with world z up.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&Vector3::z()).normalize();
        let y = z.cross(&x);
        Self::new(Pose::new(Matrix3::from_columns(&[x, y, z]), eye))
    }

    /// 1.6 m behind and above the base at 45° pitch, looking down at it.
    pub fn default_view() -> Self {
        let d = 1.6 * std::f64::consts::FRAC_1_SQRT_2;
        Self::look_at(Vector3::new(-d, 0.0, d), Vector3::zeros())
    }

    /// Unit ray directions in world coordinates, row-major over pixels.
    pub fn rays(&self) -> Vec<Vector3<f64>> {
        let fy = (self.vertical_fov / 2.0).tan();
        let fx = fy * self.width as f64 / self.height as f64;
        let mut out = Vec::with_capacity(self.width * self.height);
        for r in 0..self.height {
            let v = ((r as f64 + 0.5) / self.height as f64 * 2.0 - 1.0) * fy;
            for c in 0..self.width {
                let u = ((c as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * fx;
                out.push(self.pose.rotation * Vector3::new(u, v, 1.0).normalize());
            }
        }
        out
    }
}

/// First surface hit along a ray and the primitive that produced it.
pub fn sphere_trace(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(Vector3<f64>, usize)> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let p = origin + dir * t;
        let (d, idx) = scene.sdf(&p);
        let idx = idx?;
        if d.abs() < SURFACE_TOLERANCE {
            return Some((p, idx));
        }
        if d < 0.0 {
            return None;
        }
        t += d;
        if t > MAX_DEPTH {
            return None;
        }
    }
    None
}

/// Hits of every pixel ray, with floor hits outside its patch dropped.
pub fn render_hits(scene: &Scene, camera: &Camera) -> Vec<(Vector3<f64>, usize)> {
    let origin = camera.pose.translation;
    camera
        .rays()
        .iter()
        .filter_map(|dir| sphere_trace(scene, &origin, dir))
        .filter(|(p, idx)| {
            let prim = &scene.primitives[*idx];
            match prim.shape {
                Shape::Floor { patch } => {
                    let local = prim.pose.inverse().transform_point(p);
                    local.x.abs() <= patch.x && local.y.abs() <= patch.y
                }
                _ => true,
            }
        })
        .collect()
}

/// Obstacle points visible from `camera`, subsampled (or resampled with
/// replacement when there are fewer hits) to exactly `n`.
pub fn render_partial_cloud<R: Rng + ?Sized>(
    scene: &Scene,
    camera: &Camera,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vector3<f64>>> {
    let hits = render_hits(scene, camera);
    if hits.is_empty() {
        return Err(Error::EmptyView);
    }
    if hits.len() >= n {
        let mut picks = index::sample(rng, hits.len(), n).into_vec();
        picks.sort_unstable();
        Ok(picks.into_iter().map(|i| hits[i].0).collect())
    } else {
        Ok((0..n).map(|_| hits[rng.random_range(0..hits.len())].0).collect())
    }
}
