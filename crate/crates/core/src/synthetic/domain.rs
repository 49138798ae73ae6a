//! Domain descriptions and the shift applied to scanned partial clouds.

use rand::distributions::{Distribution, WeightedIndex};
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::rng::{derive_seed, rng};
use crate::synthetic::scan::Occlusion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Per-axis standard deviation of the Gaussian jitter.
    pub noise_sigma: f64,
    /// 0 keeps the sampling density; 1 resamples fully in proportion to how
    /// far towards the viewer each point lies.
    pub density_bias: f64,
    pub occlusion: Occlusion,
    pub scale_anisotropy: [f64; 3],
    pub seed: u64,
}

impl DomainSpec {
    /// Clean scans: halfspace occlusion and no shift.
    pub fn source() -> Self {
        Self {
            noise_sigma: 0.0,
            density_bias: 0.0,
            occlusion: Occlusion::Halfspace,
            scale_anisotropy: [1.0; 3],
            seed: 0,
        }
    }

    /// Scan-like target domain: different occlusion pattern, stretched
    /// geometry, view-biased density and sensor noise.
    pub fn scan_like() -> Self {
        Self {
            noise_sigma: 0.004,
            density_bias: 0.5,
            occlusion: Occlusion::SphericalDropout,
            scale_anisotropy: [1.3, 0.8, 1.15],
            seed: 1,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.density_bias == 0.0 && self.scale_anisotropy == [1.0; 3]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("domain noise_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.density_bias) {
            return Err(Error::invalid("domain density_bias must lie in [0, 1]"));
        }
        if self.scale_anisotropy.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("domain scale multipliers must be positive"));
        }
        Ok(())
    }

    /// Geometry-only part of the shift, used for ground truth.
    pub fn scale(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let s = self.scale_anisotropy;
        cloud.map(|p| [p[0] * s[0], p[1] * s[1], p[2] * s[2]])
    }
}

/// Anisotropic scaling, then view-biased resampling, then Gaussian jitter.
///
/// `view_dir` orients the density bias; `sample_seed` is combined with the
/// domain seed so every sample gets its own stream.
pub fn apply_domain(cloud: &PointCloud, domain: &DomainSpec, view_dir: Point, sample_seed: u64) -> Result<PointCloud> {
    domain.validate()?;
    let scaled = domain.scale(cloud)?;
    let mut r = rng(derive_seed(domain.seed, sample_seed));

    let mut pts: Vec<Point> = scaled.points().to_vec();
    if domain.density_bias > 0.0 {
        let proj: Vec<f64> = pts
            .iter()
            .map(|p| p[0] * view_dir[0] + p[1] * view_dir[1] + p[2] * view_dir[2])
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let b = domain.density_bias;
        let weights: Vec<f64> = proj
            .iter()
            .map(|v| {
                let s = if span > 0.0 { (v - lo) / span } else { 1.0 };
                1.0 - b + b * s
            })
            .collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::Generation(e.to_string()))?;
        pts = (0..pts.len()).map(|_| pts[pick.sample(&mut r)]).collect();
    }
    if domain.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, domain.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for p in pts.iter_mut() {
            for c in p.iter_mut() {
                *c += normal.sample(&mut r);
            }
        }
    }
    PointCloud::new(pts)
}
