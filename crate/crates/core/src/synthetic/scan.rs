//! Virtual scanning: keep the part of a complete cloud a sensor at a given
//! viewpoint would see, then resample to a fixed size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{downsample_random, Point, PointCloud};
use crate::rng::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Occlusion {
    /// Cut by a plane through the centroid facing the viewpoint.
    Halfspace,
    /// Remove a ball of random radius on the far side of the object.
    SphericalDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub output_points: usize,
    /// Range of the signed plane offset along the view direction (halfspace).
    pub plane_offset: (f64, f64),
    /// Range of the distance of the dropout ball center behind the centroid.
    pub ball_depth: (f64, f64),
    /// Range of the dropout ball radius.
    pub ball_radius: (f64, f64),
    /// Per-axis bound of the uniform jitter added to points duplicated when
    /// fewer than `output_points` survive.
    pub jitter: f64,
    pub max_retries: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            output_points: 2048,
            plane_offset: (-0.12, 0.05),
            ball_depth: (0.25, 0.45),
            ball_radius: (0.45, 0.6),
            jitter: 0.005,
            max_retries: 6,
        }
    }
}

fn unit(v: Point) -> Result<Point> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid("viewpoint coincides with the cloud centroid"));
    }
    Ok(v.map(|c| c / n))
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit view direction from the cloud centroid towards `viewpoint`.
pub fn view_direction(complete: &PointCloud, viewpoint: Point) -> Result<Point> {
    let c = complete.centroid();
    unit([viewpoint[0] - c[0], viewpoint[1] - c[1], viewpoint[2] - c[2]])
}

/// Result of a scan, with the cut that was applied.
#[derive(Debug, Clone)]
pub struct Scan {
    pub cloud: PointCloud,
    /// Number of complete points that survived the occlusion.
    pub survivors: usize,
    /// Halfspace: points kept satisfy `(p - centroid) . dir >= plane_offset`.
    pub plane_offset: Option<f64>,
}

pub fn virtual_scan(
    complete: &PointCloud,
    viewpoint: Point,
    occlusion: Occlusion,
    cfg: &ScanConfig,
    seed: u64,
) -> Result<Scan> {
    if cfg.output_points == 0 {
        return Err(Error::invalid("scan output size must be positive"));
    }
    let dir = view_direction(complete, viewpoint)?;
    let c = complete.centroid();
    let mut r = rng(seed);
    let mut offset = r.gen_range(cfg.plane_offset.0..cfg.plane_offset.1);
    let depth = r.gen_range(cfg.ball_depth.0..cfg.ball_depth.1);
    let mut radius = r.gen_range(cfg.ball_radius.0..cfg.ball_radius.1);
    let ball = [c[0] - dir[0] * depth, c[1] - dir[1] * depth, c[2] - dir[2] * depth];

    for _ in 0..=cfg.max_retries {
        let kept: Vec<Point> = complete
            .points()
            .iter()
            .filter(|p| match occlusion {
                Occlusion::Halfspace => {
                    dot(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]], &dir) >= offset
                }
                Occlusion::SphericalDropout => {
                    crate::geometry::sq_dist(p, &ball) >= radius * radius
                }
            })
            .copied()
            .collect();
        if kept.is_empty() {
            offset -= 0.1;
            radius *= 0.7;
            continue;
        }
        let survivors = kept.len();
        let cloud = resample(PointCloud::new(kept)?, cfg, derive_seed(seed, 1))?;
        return Ok(Scan {
            cloud,
            survivors,
            plane_offset: (occlusion == Occlusion::Halfspace).then_some(offset),
        });
    }
    Err(Error::Generation(format!(
        "virtual scan left no points after {} retries",
        cfg.max_retries
    )))
}

/// Downsamples to `output_points`, or tops up with jittered duplicates.
fn resample(kept: PointCloud, cfg: &ScanConfig, seed: u64) -> Result<PointCloud> {
    let n = cfg.output_points;
    if kept.len() >= n {
        return downsample_random(&kept, n, seed);
    }
    let mut r = rng(seed);
    let mut pts = kept.points().to_vec();
    let base = kept.len();
    while pts.len() < n {
        let p = pts[r.gen_range(0..base)];
        let e = cfg.jitter;
        pts.push([
            p[0] + r.gen_range(-e..=e),
            p[1] + r.gen_range(-e..=e),
            p[2] + r.gen_range(-e..=e),
        ]);
    }
    PointCloud::new(pts)
}
