//! Point cloud container and the deterministic distance kernels used by the
//! losses and the evaluation metric.
//!
//! All distances are squared Euclidean. Nearest-neighbour searches are brute
//! force and resolve ties towards the lowest index, so every kernel is a pure
//! function of its inputs and agrees exactly with a scalar double loop.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn sq_dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered, non-empty set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a row-major `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat buffer length {} is not a multiple of 3",
                data.len()
            )));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for cloud of {}", self.len()))
            })?;
            out.push(*p);
        }
        Self::new(out)
    }

    pub fn map(&self, f: impl Fn(&Point) -> Point) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }

    pub fn translated(&self, offset: Point) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }

    pub fn centroid(&self) -> Point {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_center(&self) -> Point {
        let (lo, hi) = self.bounds();
        [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ]
    }

    /// Rounds every coordinate through `f32`, matching what the on-disk format keeps.
    pub fn quantized_f32(&self) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| c as f32 as f64))
                .collect(),
        }
    }
}

/// Row-major matrix of squared distances between two clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

pub fn pairwise_sq_dist(x: &PointCloud, y: &PointCloud) -> Result<DistanceMatrix> {
    check_non_empty(x, y)?;
    let mut values = Vec::with_capacity(x.len() * y.len());
    for a in x.points() {
        values.extend(y.points().iter().map(|b| sq_dist(a, b)));
    }
    Ok(DistanceMatrix {
        rows: x.len(),
        cols: y.len(),
        values,
    })
}

fn check_non_empty(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("distance kernels need two non-empty clouds"));
    }
    Ok(())
}

/// For every point of `x`, the index of its nearest point in `y` and the
/// squared distance to it. Ties go to the lowest index.
pub fn nearest_in(x: &[Point], y: &[Point]) -> Vec<(usize, f64)> {
    // Structure-of-arrays copy lets the inner loop vectorise.
    let ys: Vec<f64> = y.iter().map(|p| p[0]).collect();
    let yy: Vec<f64> = y.iter().map(|p| p[1]).collect();
    let yz: Vec<f64> = y.iter().map(|p| p[2]).collect();
    let mut dist = vec![0.0; y.len()];
    x.iter()
        .map(|a| {
            for (((d, &bx), &by), &bz) in dist.iter_mut().zip(&ys).zip(&yy).zip(&yz) {
                let dx = a[0] - bx;
                let dy = a[1] - by;
                let dz = a[2] - bz;
                *d = dx * dx + dy * dy + dz * dz;
            }
            let mut best = 0;
            let mut best_d = dist[0];
            for (j, &d) in dist.iter().enumerate().skip(1) {
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            (best, best_d)
        })
        .collect()
}

/// Unidirectional Chamfer distance: mean over `x` of the squared distance to
/// the nearest point of `y`.
pub fn ucd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    check_non_empty(x, y)?;
    Ok(ucd_points(x.points(), y.points()))
}

pub(crate) fn ucd_points(x: &[Point], y: &[Point]) -> f64 {
    let sum: f64 = nearest_in(x, y).iter().map(|&(_, d)| d).sum();
    sum / x.len() as f64
}

/// Symmetric Chamfer distance, `ucd(x, y) + ucd(y, x)`.
pub fn cd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    Ok(ucd(x, y)? + ucd(y, x)?)
}

/// Greedy farthest point sampling.
///
/// The first pick is `start`; each later pick is the unselected point whose
/// squared distance to the selected set is largest, lowest index on ties.
pub fn fps(x: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "fps sample count {k} must lie in 1..={n}"
        )));
    }
    if start >= n {
        return Err(Error::invalid(format!(
            "fps start index {start} out of range for cloud of {n}"
        )));
    }
    let pts = x.points();
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    let mut current = start;
    for _ in 0..k {
        out.push(current);
        taken[current] = true;
        let c = pts[current];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for j in 0..n {
            let d = sq_dist(&pts[j], &c);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if !taken[j] && min_d[j] > next_d {
                next_d = min_d[j];
                next = j;
            }
        }
        current = next;
    }
    Ok(out)
}

/// Convenience: `fps` followed by gathering the selected points.
pub fn fps_cloud(x: &PointCloud, k: usize, start: usize) -> Result<PointCloud> {
    x.select(&fps(x, k, start)?)
}

/// Draws `n` points without replacement. Deterministic for a given seed.
pub fn downsample_random(x: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 || n > x.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n} points from a cloud of {}",
            x.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, x.len(), n);
    x.select(&picks.into_vec())
}

/// Parameters of the map `p -> (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeTransform {
    pub center: Point,
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, x: &PointCloud) -> PointCloud {
        let (c, s) = (self.center, self.scale);
        PointCloud {
            points: x
                .points()
                .iter()
                .map(|p| [(p[0] - c[0]) / s, (p[1] - c[1]) / s, (p[2] - c[2]) / s])
                .collect(),
        }
    }

    pub fn invert(&self, x: &PointCloud) -> PointCloud {
        let (c, s) = (self.center, self.scale);
        PointCloud {
            points: x
                .points()
                .iter()
                .map(|p| [p[0] * s + c[0], p[1] * s + c[1], p[2] * s + c[2]])
                .collect(),
        }
    }
}

/// Centers the bounding box at the origin and scales the largest axis extent to 1.
pub fn normalize_to_unit_cube(x: &PointCloud) -> Result<(PointCloud, NormalizeTransform)> {
    let (lo, hi) = x.bounds();
    let scale = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if x.len() < 2 || scale <= 0.0 {
        return Err(Error::invalid(
            "cannot normalize a degenerate cloud (all points identical)",
        ));
    }
    let t = NormalizeTransform {
        center: x.bbox_center(),
        scale,
    };
    Ok((t.apply(x), t))
}
