//! Hierarchical point-set encoder: furthest point sampling, ball query,
//! shared-MLP set abstraction with max pooling, a global block and a fully
//! connected head. Every stage has an analytic backward pass.

use std::io::{BufRead, Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{BlockCache, Mat, Mlp, Module, Param, Tail};
use crate::{Error, Result};

/// Per-point input channels: one-hot class followed by xyz.
pub const INPUT_FEATURES: usize = 6;
pub const NUM_CLASSES: usize = 3;
pub const NORM_GROUPS: usize = 8;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Robot = 0,
    Obstacle = 1,
    Target = 2,
}

/// Points with per-point feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudTensor {
    pub points: Vec<Vector3<f64>>,
    /// `N × C`.
    pub features: Mat,
}

impl CloudTensor {
    /// Featurizes labelled points as one-hot class plus xyz.
    pub fn from_labeled(points: Vec<Vector3<f64>>, classes: &[PointClass]) -> Self {
        assert_eq!(points.len(), classes.len());
        let features = Mat::from_fn(points.len(), INPUT_FEATURES, |i, j| match j {
            0..=2 => f64::from(classes[i] as usize == j),
            _ => points[i][j - 3],
        });
        Self { points, features }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        !self.points.is_empty()
            && self.features.nrows() == self.points.len()
            && self.features.ncols() >= 4
            && self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.features.iter().all(|v| v.is_finite())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            features: self.features.select_rows(idx),
        }
    }
}

/// Greedy max-min selection of `k` indices starting at `start`; ties go to
/// the lowest index.
pub fn furthest_point_sampling_from(points: &[Vector3<f64>], k: usize, start: usize) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len() && start < points.len());
    let mut picked = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..k {
        picked.push(current);
        let c = points[current];
        let mut best = (-1.0, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    picked
}

/// Start index `⌊u·N⌋` for a uniform draw `u`; scaling `N` by a power of two
/// maps interleaved copies of a point to the same original.
pub fn draw_start<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * n as f64) as usize).min(n - 1)
}

pub fn furthest_point_sampling<R: Rng + ?Sized>(points: &[Vector3<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let start = draw_start(rng, points.len());
    furthest_point_sampling_from(points, k, start)
}

/// For each center, up to `max_k` of the nearest points within `radius`
/// (ties by index), keeping one index per distinct position, padded by
/// repeating the nearest member.
pub fn ball_query(points: &[Vector3<f64>], centers: &[Vector3<f64>], radius: f64, max_k: usize) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) || max_k == 0 {
        return Err(Error::InvalidArgument("ball query needs radius > 0 and max_k ≥ 1".into()));
    }
    let r2 = radius * radius;
    centers
        .iter()
        .map(|c| {
            let mut near: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d = (p - c).norm_squared();
                    (d <= r2).then_some((d, i))
                })
                .collect();
            if near.is_empty() {
                return Err(Error::EmptyBall);
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut group: Vec<usize> = Vec::with_capacity(max_k);
            for (_, i) in near {
                if group.len() == max_k {
                    break;
                }
                if group.iter().all(|&j| points[j] != points[i]) {
                    group.push(i);
                }
            }
            let first = group[0];
            group.resize(max_k, first);
            Ok(group)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaSpec {
    /// Centers kept by sampling; `None` pools the whole cloud about the
    /// origin.
    pub samples: Option<usize>,
    pub radius: f64,
    pub max_group: usize,
    /// Output widths of the shared MLP layers.
    pub widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderProfile {
    pub name: String,
    pub blocks: Vec<SaSpec>,
    /// Output widths of the head layers; the last is the embedding width.
    pub head: Vec<usize>,
    pub groups: usize,
}

impl EncoderProfile {
    /// Full-width shape chain: 512/128 centers, 128-point groups, 2048 embedding.
    pub fn paper() -> Self {
        Self {
            name: "paper-shapes".into(),
            blocks: vec![
                SaSpec {
                    samples: Some(512),
                    radius: 0.05,
                    max_group: 128,
                    widths: vec![64, 64, 64],
                },
                SaSpec {
                    samples: Some(128),
                    radius: 0.3,
                    max_group: 128,
                    widths: vec![128, 128, 256],
                },
                SaSpec {
                    samples: None,
                    radius: f64::INFINITY,
                    max_group: usize::MAX,
                    widths: vec![512, 512, 1024],
                },
            ],
            head: vec![4096, 4096, 2048],
            groups: NORM_GROUPS,
        }
    }

    /// Every width and count of [`paper`](Self::paper) divided by eight.
    pub fn desk() -> Self {
        let mut p = Self::paper();
        p.name = "desk".into();
        for b in &mut p.blocks {
            b.samples = b.samples.map(|s| s / 8);
            if b.samples.is_some() {
                b.max_group /= 8;
            }
            b.widths.iter_mut().for_each(|w| *w /= 8);
        }
        p.head.iter_mut().for_each(|w| *w /= 8);
        p
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-shapes" => Ok(Self::paper()),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?}"))),
        }
    }

    pub fn embedding_width(&self) -> usize {
        *self.head.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub profile: EncoderProfile,
    pub blocks: Vec<Mlp>,
    pub head: Mlp,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(profile: EncoderProfile, rng: &mut R) -> Self {
        let mut c = INPUT_FEATURES;
        let mut blocks = Vec::new();
        for spec in &profile.blocks {
            let mut widths = vec![3 + c];
            widths.extend(&spec.widths);
            blocks.push(Mlp::new(&widths, profile.groups, Tail::Activated, rng));
            c = *spec.widths.last().unwrap();
        }
        let mut widths = vec![c];
        widths.extend(&profile.head);
        let head = Mlp::new(&widths, profile.groups, Tail::Linear, rng);
        Self { profile, blocks, head }
    }
}

impl Module for EncoderParams {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            b.visit_ref(f);
        }
        self.head.visit_ref(f);
    }
}

/// Intermediates of one set-abstraction block.
#[derive(Clone, Debug)]
pub struct SaCache {
    groups: Vec<Vec<usize>>,
    mlp: Vec<BlockCache>,
    /// Row of the grouped matrix attaining each (center, channel) maximum.
    argmax: Vec<Vec<usize>>,
    input_len: usize,
    input_width: usize,
}

/// One block: sample centers, group, run the shared MLP on
/// `[p − center, features]`, max-pool per group.
pub fn set_abstraction(cloud: &CloudTensor, mlp: &Mlp, spec: &SaSpec, start: usize) -> Result<(CloudTensor, SaCache)> {
    if mlp.input_width() != 3 + cloud.features.ncols() {
        return Err(Error::InvalidArgument("block width does not match incoming features".into()));
    }
    let (centers, groups): (Vec<Vector3<f64>>, Vec<Vec<usize>>) = match spec.samples {
        Some(k) => {
            let idx = furthest_point_sampling_from(&cloud.points, k.min(cloud.len()), start);
            let centers: Vec<_> = idx.iter().map(|&i| cloud.points[i]).collect();
            let groups = ball_query(&cloud.points, &centers, spec.radius, spec.max_group)?;
            (centers, groups)
        }
        None => (vec![Vector3::zeros()], vec![(0..cloud.len()).collect()]),
    };
    let c = cloud.features.ncols();
    let rows: usize = groups.iter().map(Vec::len).sum();
    let mut x = Mat::zeros(rows, 3 + c);
    let mut r = 0;
    for (center, group) in centers.iter().zip(&groups) {
        for &i in group {
            let rel = cloud.points[i] - center;
            for k in 0..3 {
                x[(r, k)] = rel[k];
            }
            for k in 0..c {
                x[(r, 3 + k)] = cloud.features[(i, k)];
            }
            r += 1;
        }
    }
    let (y, mlp_cache) = mlp.forward(&x);
    let width = y.ncols();
    let mut out = Mat::zeros(groups.len(), width);
    let mut argmax = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for (g, group) in groups.iter().enumerate() {
        let mut rows_max = Vec::with_capacity(width);
        for ch in 0..width {
            let mut best = (f64::NEG_INFINITY, offset);
            for row in offset..offset + group.len() {
                // strict comparison keeps the lowest row on ties
                if y[(row, ch)] > best.0 {
                    best = (y[(row, ch)], row);
                }
            }
            out[(g, ch)] = best.0;
            rows_max.push(best.1);
        }
        argmax.push(rows_max);
        offset += group.len();
    }
    let cache = SaCache {
        groups,
        mlp: mlp_cache,
        argmax,
        input_len: cloud.len(),
        input_width: c,
    };
    Ok((
        CloudTensor {
            points: centers,
            features: out,
        },
        cache,
    ))
}

/// Backward through pooling, the shared MLP and the gather; returns the
/// gradient with respect to the incoming features.
pub fn set_abstraction_backward(mlp: &mut Mlp, cache: &SaCache, d_out: &Mat) -> Mat {
    let rows: usize = cache.groups.iter().map(Vec::len).sum();
    let mut dy = Mat::zeros(rows, d_out.ncols());
    for (g, rows_max) in cache.argmax.iter().enumerate() {
        for (ch, &row) in rows_max.iter().enumerate() {
            dy[(row, ch)] += d_out[(g, ch)];
        }
    }
    let dx = mlp.backward(&cache.mlp, &dy);
    let mut d_in = Mat::zeros(cache.input_len, cache.input_width);
    let mut r = 0;
    for group in &cache.groups {
        for &i in group {
            for k in 0..cache.input_width {
                d_in[(i, k)] += dx[(r, 3 + k)];
            }
            r += 1;
        }
    }
    d_in
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    blocks: Vec<SaCache>,
    head: Vec<BlockCache>,
}

/// Sampling start indices for each sampled block, drawn in block order.
pub fn draw_starts<R: Rng + ?Sized>(profile: &EncoderProfile, n: usize, rng: &mut R) -> Vec<usize> {
    let mut len = n;
    let mut starts = Vec::new();
    for b in &profile.blocks {
        if let Some(k) = b.samples {
            starts.push(draw_start(rng, len));
            len = k.min(len);
        }
    }
    starts
}

pub fn encode_cloud<R: Rng + ?Sized>(cloud: &CloudTensor, params: &EncoderParams, rng: &mut R) -> Result<(Vec<f64>, EncoderCache)> {
    let starts = draw_starts(&params.profile, cloud.len(), rng);
    encode_cloud_from(cloud, params, &starts)
}

/// Encodes with explicit sampling start indices.
pub fn encode_cloud_from(cloud: &CloudTensor, params: &EncoderParams, starts: &[usize]) -> Result<(Vec<f64>, EncoderCache)> {
    if !cloud.is_valid() {
        return Err(Error::InvalidArgument("cloud must be non-empty and finite with ≥ 4 channels".into()));
    }
    let mut current = cloud.clone();
    let mut caches = Vec::with_capacity(params.blocks.len());
    let mut s = starts.iter();
    for (mlp, spec) in params.blocks.iter().zip(&params.profile.blocks) {
        let start = if spec.samples.is_some() { *s.next().expect("one start per sampled block") } else { 0 };
        let (next, cache) = set_abstraction(&current, mlp, spec, start)?;
        caches.push(cache);
        current = next;
    }
    let (emb, head) = params.head.forward(&current.features);
    Ok((emb.iter().copied().collect(), EncoderCache { blocks: caches, head }))
}

/// Accumulates parameter gradients for `d_embedding`.
pub fn encode_backward(params: &mut EncoderParams, cache: &EncoderCache, d_embedding: &[f64]) {
    let d = Mat::from_row_slice(1, d_embedding.len(), d_embedding);
    let mut d = params.head.backward(&cache.head, &d);
    for (mlp, c) in params.blocks.iter_mut().zip(&cache.blocks).rev() {
        d = set_abstraction_backward(mlp, c, &d);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub profile: String,
    pub shapes: Vec<(usize, usize)>,
}

/// One JSON header line followed by every parameter, in visit order, as
/// little-endian `f32`.
pub fn write_params<M: Module + ?Sized, W: Write>(module: &M, profile: &str, mut w: W) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        profile: profile.to_string(),
        shapes: module.shapes(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(w, "{line}")?;
    let mut buf = Vec::with_capacity(module.num_params() * 4);
    module.visit_ref(&mut |p| {
        for v in p.value.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    });
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint_header<R: BufRead>(r: &mut R) -> Result<CheckpointHeader> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::CorruptRecord { line: 1, msg: e.to_string() })?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: header.format_version,
        });
    }
    Ok(header)
}

/// Fills `module` from the parameter block after `header`; shapes and the
/// byte count must match exactly.
pub fn read_params_into<M: Module + ?Sized, R: Read>(module: &mut M, header: &CheckpointHeader, mut r: R) -> Result<()> {
    if module.shapes() != header.shapes {
        return Err(Error::Integrity("checkpoint shapes do not match the profile".into()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let expected = module.num_params() * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!("expected {expected} parameter bytes, found {}", bytes.len())));
    }
    let mut chunks = bytes.chunks_exact(4);
    module.visit(&mut |p| {
        for v in p.value.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::{random_mat, rel_err};
    use crate::seeding;
    use rand::seq::SliceRandom;

    fn random_points<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
            .collect()
    }

    fn random_cloud<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CloudTensor {
        let points = random_points(n, 0.4, rng);
        let classes: Vec<PointClass> = (0..n)
            .map(|_| [PointClass::Robot, PointClass::Obstacle, PointClass::Target][rng.random_range(0..3)])
            .collect();
        CloudTensor::from_labeled(points, &classes)
    }

    #[test]
    fn fps_of_all_points_is_a_permutation() {
        let pts = random_points(50, 1.0, &mut seeding::stream(81, 0));
        let mut idx = furthest_point_sampling(&pts, 50, &mut seeding::stream(81, 1));
        idx.sort_unstable();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn fps_square_picks_the_diagonal() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        assert_eq!(furthest_point_sampling_from(&pts, 2, 0), vec![0, 2]);
    }

    fn min_pairwise(pts: &[Vector3<f64>], idx: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                best = best.min((pts[i] - pts[j]).norm());
            }
        }
        best
    }

    #[test]
    fn fps_spreads_more_than_uniform_picks() {
        let mut rng = seeding::stream(82, 0);
        let (mut fps, mut uni) = (0.0, 0.0);
        for _ in 0..100 {
            let pts = random_points(1024, 1.0, &mut rng);
            fps += min_pairwise(&pts, &furthest_point_sampling(&pts, 32, &mut rng));
            let mut all: Vec<usize> = (0..1024).collect();
            all.shuffle(&mut rng);
            uni += min_pairwise(&pts, &all[..32]);
        }
        assert!(fps > uni, "{fps} vs {uni}");
    }

    #[test]
    fn isolated_center_groups_itself() {
        let pts = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)];
        let g = ball_query(&pts, &[pts[1]], 1e-3, 4).unwrap();
        assert_eq!(g, vec![vec![1, 1, 1, 1]]);
    }

    #[test]
    fn full_ball_is_truncated_to_max_k() {
        let pts = random_points(40, 0.1, &mut seeding::stream(83, 0));
        let g = ball_query(&pts, &[Vector3::zeros()], 1.0, 10).unwrap();
        assert_eq!(g[0].len(), 10);
        assert!(g[0].iter().all(|&i| pts[i].norm() <= 1.0));
        let mut unique = g[0].clone();
        unique.dedup();
        assert_eq!(unique.len(), 10);
    }

    #[test]
    fn empty_ball_is_reported() {
        let pts = vec![Vector3::zeros()];
        let err = ball_query(&pts, &[Vector3::new(1.0, 0.0, 0.0)], 0.1, 3).unwrap_err();
        assert!(matches!(err, Error::EmptyBall));
    }

    #[test]
    fn ball_query_matches_brute_force() {
        let mut rng = seeding::stream(84, 0);
        for _ in 0..100 {
            let pts = random_points(200, 0.5, &mut rng);
            let centers: Vec<_> = (0..8).map(|_| pts[rng.random_range(0..200)]).collect();
            let radius = rng.random_range(0.05..0.3);
            let groups = ball_query(&pts, &centers, radius, 500).unwrap();
            for (c, g) in centers.iter().zip(&groups) {
                let mut oracle: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - c).norm() <= radius).collect();
                let mut got = g.clone();
                got.sort_unstable();
                got.dedup();
                oracle.sort_unstable();
                assert_eq!(got, oracle);
            }
        }
    }

    fn desk_params(seed: u64) -> EncoderParams {
        EncoderParams::new(EncoderProfile::desk(), &mut seeding::stream(seed, 0))
    }

    #[test]
    fn identical_group_pools_to_single_point_output() {
        let params = desk_params(85);
        let spec = &SaSpec {
            samples: Some(1),
            ..params.profile.blocks[0].clone()
        };
        let p = Vector3::new(0.1, 0.2, 0.3);
        let cloud = CloudTensor::from_labeled(vec![p; 5], &[PointClass::Obstacle; 5]);
        let (out, _) = set_abstraction(&cloud, &params.blocks[0], spec, 0).unwrap();
        assert_eq!(out.len(), 1);
        let mut x = Mat::zeros(1, 9);
        for k in 0..6 {
            x[(0, 3 + k)] = cloud.features[(0, k)];
        }
        // a lone row normalizes like every padded copy of itself
        let padded = Mat::from_fn(spec.max_group, 9, |_, j| x[(0, j)]);
        let y = params.blocks[0].infer(&padded);
        for ch in 0..y.ncols() {
            assert_eq!(out.features[(0, ch)], y[(0, ch)]);
        }
    }

    #[test]
    fn permuting_within_groups_keeps_block_output() {
        let params = desk_params(86);
        let cloud = random_cloud(300, &mut seeding::stream(86, 1));
        let spec = SaSpec {
            samples: None,
            radius: f64::INFINITY,
            max_group: usize::MAX,
            widths: vec![],
        };
        let (a, _) = set_abstraction(&cloud, &params.blocks[0], &spec, 0).unwrap();
        let mut perm: Vec<usize> = (0..300).collect();
        perm.shuffle(&mut seeding::stream(86, 2));
        let (b, _) = set_abstraction(&cloud.select(&perm), &params.blocks[0], &spec, 0).unwrap();
        assert!((a.features - b.features).amax() <= 1e-12);
    }

    fn interleave_duplicate(cloud: &CloudTensor) -> CloudTensor {
        let idx: Vec<usize> = (0..cloud.len()).flat_map(|i| [i, i]).collect();
        cloud.select(&idx)
    }

    #[test]
    fn duplicated_cloud_encodes_identically() {
        let params = desk_params(87);
        let cloud = random_cloud(500, &mut seeding::stream(87, 1));
        let (a, _) = encode_cloud(&cloud, &params, &mut seeding::stream(87, 2)).unwrap();
        let (b, _) = encode_cloud(&interleave_duplicate(&cloud), &params, &mut seeding::stream(87, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shuffled_cloud_encodes_identically() {
        let params = desk_params(88);
        let cloud = random_cloud(600, &mut seeding::stream(88, 1));
        let starts = draw_starts(&params.profile, cloud.len(), &mut seeding::stream(88, 2));
        let (a, _) = encode_cloud_from(&cloud, &params, &starts).unwrap();
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut seeding::stream(88, 3));
        let mut mapped = starts.clone();
        mapped[0] = perm.iter().position(|&i| i == starts[0]).unwrap();
        let (b, _) = encode_cloud_from(&cloud.select(&perm), &params, &mapped).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-9, "{diff}");
    }

    #[test]
    fn encoding_is_deterministic_and_not_translation_invariant() {
        let params = desk_params(89);
        let cloud = random_cloud(400, &mut seeding::stream(89, 1));
        let (a, _) = encode_cloud(&cloud, &params, &mut seeding::stream(89, 2)).unwrap();
        let (b, _) = encode_cloud(&cloud, &params, &mut seeding::stream(89, 2)).unwrap();
        assert_eq!(a, b);
        let shift = Vector3::new(0.2, -0.1, 0.05);
        let moved_points: Vec<_> = cloud.points.iter().map(|p| p + shift).collect();
        let classes: Vec<PointClass> = (0..cloud.len())
            .map(|i| match (0..3).find(|&j| cloud.features[(i, j)] == 1.0).unwrap() {
                0 => PointClass::Robot,
                1 => PointClass::Obstacle,
                _ => PointClass::Target,
            })
            .collect();
        let moved = CloudTensor::from_labeled(moved_points, &classes);
        let (c, _) = encode_cloud(&moved, &params, &mut seeding::stream(89, 2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tied_group_routes_gradient_to_lowest_row() {
        let mut params = desk_params(90);
        let p = Vector3::new(0.0, 0.1, 0.2);
        let cloud = CloudTensor::from_labeled(vec![p; 3], &[PointClass::Robot; 3]);
        let spec = SaSpec {
            samples: Some(1),
            ..params.profile.blocks[0].clone()
        };
        let (out, cache) = set_abstraction(&cloud, &params.blocks[0], &spec, 0).unwrap();
        assert!(cache.argmax.iter().flatten().all(|&r| r == 0));
        let d = Mat::from_element(1, out.features.ncols(), 1.0);
        let din = set_abstraction_backward(&mut params.blocks[0], &cache, &d);
        // padding repeats index 0, so all gradient lands on point 0
        assert!(din.row(1).iter().all(|&v| v == 0.0) && din.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn set_abstraction_feature_gradient_matches_finite_differences() {
        let mut rng = seeding::stream(91, 0);
        for case in 0..10 {
            let params = desk_params(91 + case);
            let spec = params.profile.blocks[1].clone();
            let mut cloud = random_cloud(40, &mut rng);
            cloud.features = random_mat(40, 8, &mut rng);
            let mut mlp = EncoderParams::new(EncoderProfile::desk(), &mut seeding::stream(92, case)).blocks[1].clone();
            let (out, cache) = set_abstraction(&cloud, &mlp, &spec, 3).unwrap();
            let r = random_mat(out.features.nrows(), out.features.ncols(), &mut rng);
            let v = random_mat(40, 8, &mut rng);
            let din = set_abstraction_backward(&mut mlp, &cache, &r);
            let h = 1e-6;
            let f = |feat: &Mat| {
                let c = CloudTensor {
                    points: cloud.points.clone(),
                    features: feat.clone(),
                };
                set_abstraction(&c, &mlp, &spec, 3).unwrap().0.features.dot(&r)
            };
            let num = (f(&(&cloud.features + &v * h)) - f(&(&cloud.features - &v * h))) / (2.0 * h);
            let err = rel_err(din.dot(&v), num);
            assert!(err <= 1e-4, "case {case}: {err}");
        }
    }

    #[test]
    fn embedding_sum_gradient_matches_finite_differences() {
        let mut rng = seeding::stream(93, 0);
        let cloud = random_cloud(300, &mut rng);
        let base = desk_params(93);
        let starts = draw_starts(&base.profile, cloud.len(), &mut rng);
        let mut params = base.clone();
        let (emb, cache) = encode_cloud_from(&cloud, &params, &starts).unwrap();
        encode_backward(&mut params, &cache, &vec![1.0; emb.len()]);
        let mut grads = Vec::new();
        params.visit_ref(&mut |p| grads.push(p.grad.clone()));
        let sum = |p: &EncoderParams| encode_cloud_from(&cloud, p, &starts).unwrap().0.iter().sum::<f64>();
        for trial in 0..20 {
            let t = rng.random_range(0..grads.len());
            let k = rng.random_range(0..grads[t].len());
            let h = 1e-6;
            let shifted = |delta: f64| {
                let mut p = base.clone();
                let mut i = 0;
                p.visit(&mut |q| {
                    if i == t {
                        q.value[k] += delta;
                    }
                    i += 1;
                });
                sum(&p)
            };
            let num = (shifted(h) - shifted(-h)) / (2.0 * h);
            let err = rel_err(grads[t][k], num);
            assert!(err <= 1e-4 || (grads[t][k] - num).abs() <= 1e-7, "trial {trial} tensor {t}: {} vs {num}", grads[t][k]);
        }
    }

    #[test]
    fn paper_profile_shape_chain_runs() {
        let params = EncoderParams::new(EncoderProfile::paper(), &mut seeding::stream(94, 0));
        let cloud = random_cloud(4096, &mut seeding::stream(94, 1));
        let (emb, _) = encode_cloud(&cloud, &params, &mut seeding::stream(94, 2)).unwrap();
        assert_eq!(emb.len(), 2048);
        assert!(emb.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn desk_profile_widths() {
        let p = EncoderProfile::desk();
        assert_eq!(p.blocks[0].samples, Some(64));
        assert_eq!(p.blocks[0].max_group, 16);
        assert_eq!(p.blocks[2].widths, vec![64, 64, 128]);
        assert_eq!(p.head, vec![512, 512, 256]);
    }
}
