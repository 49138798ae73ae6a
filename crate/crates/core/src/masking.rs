//! Masked views of a partial cloud for consistency training.
//!
//! Two strategies: `Partition` splits space into eight octants around a
//! center and drops one; `View` drops the points nearest a random anchor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, Point, PointCloud};
use crate::rng::{derive_seed, rng};

/// Octant id reported when no octant could be removed.
pub const NO_OCTANT: u8 = u8::MAX;

/// Minimum share of the original points that a partition mask must keep.
pub const MIN_SURVIVOR_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionCenter {
    #[default]
    BoundingBox,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskStrategy {
    Partition {
        #[serde(default)]
        center: PartitionCenter,
    },
    View {
        #[serde(default = "default_view_fraction")]
        fraction: f64,
    },
}

fn default_view_fraction() -> f64 {
    0.125
}

impl Default for MaskStrategy {
    fn default() -> Self {
        MaskStrategy::partition()
    }
}

impl MaskStrategy {
    pub fn partition() -> Self {
        MaskStrategy::Partition {
            center: PartitionCenter::BoundingBox,
        }
    }

    pub fn view() -> Self {
        MaskStrategy::View {
            fraction: default_view_fraction(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Partition { .. } => "partition",
            MaskStrategy::View { .. } => "view",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskStrategy::View { fraction } if !(fraction > 0.0 && fraction < 1.0) => Err(
                Error::invalid(format!("view mask fraction {fraction} must lie in (0, 1)")),
            ),
            _ => Ok(()),
        }
    }
}

/// What a single mask removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMeta {
    Original,
    Octant { id: u8, fallback: bool },
    View { anchor: usize, removed: usize },
}

/// Octant index from the sign bits of `point - center` (bit order x, y, z).
/// Coordinates equal to the center count as positive.
pub fn octant_of(point: &Point, center: &Point) -> u8 {
    let bit = |k: usize| u8::from(point[k] >= center[k]);
    (bit(0) << 2) | (bit(1) << 1) | bit(2)
}

#[derive(Debug, Clone)]
pub struct PartitionMask {
    pub cloud: PointCloud,
    pub octant: u8,
    /// Set when no octant was admissible and the input came back unmasked.
    pub fallback: bool,
}

fn require_min_points(p: &PointCloud) -> Result<()> {
    if p.len() < 8 {
        return Err(Error::invalid(format!(
            "masking needs at least 8 points, got {}",
            p.len()
        )));
    }
    Ok(())
}

/// Removes every point of one randomly chosen octant.
///
/// Only non-empty octants whose removal keeps at least a quarter of the
/// points are eligible.
pub fn partition_mask(p: &PointCloud, center_mode: PartitionCenter, seed: u64) -> Result<PartitionMask> {
    require_min_points(p)?;
    let center = match center_mode {
        PartitionCenter::BoundingBox => p.bbox_center(),
        PartitionCenter::Centroid => p.centroid(),
    };
    let octants: Vec<u8> = p.points().iter().map(|q| octant_of(q, &center)).collect();
    let mut counts = [0usize; 8];
    for &o in &octants {
        counts[o as usize] += 1;
    }
    let n = p.len();
    let admissible: Vec<u8> = (0..8u8)
        .filter(|&o| {
            let c = counts[o as usize];
            c > 0 && (n - c) as f64 >= MIN_SURVIVOR_FRACTION * n as f64
        })
        .collect();
    if admissible.is_empty() {
        log::warn!("partition mask: no admissible octant among {n} points, returning input unmasked");
        return Ok(PartitionMask {
            cloud: p.clone(),
            octant: NO_OCTANT,
            fallback: true,
        });
    }
    let mut r = rng(seed);
    let chosen = admissible[r.gen_range(0..admissible.len())];
    let kept: Vec<Point> = p
        .points()
        .iter()
        .zip(&octants)
        .filter(|(_, &o)| o != chosen)
        .map(|(q, _)| *q)
        .collect();
    Ok(PartitionMask {
        cloud: PointCloud::new(kept)?,
        octant: chosen,
        fallback: false,
    })
}

#[derive(Debug, Clone)]
pub struct ViewMask {
    pub cloud: PointCloud,
    pub anchor: usize,
    /// Indices (into the input) of the removed points, nearest first.
    pub removed: Vec<usize>,
}

/// Removes the `floor(fraction * n)` points nearest a random anchor point.
/// The anchor itself is always among the removed points.
pub fn view_mask(p: &PointCloud, fraction: f64, seed: u64) -> Result<ViewMask> {
    require_min_points(p)?;
    MaskStrategy::View { fraction }.validate()?;
    let n = p.len();
    let count = (fraction * n as f64).floor() as usize;
    if count == 0 {
        return Err(Error::invalid(format!(
            "view mask fraction {fraction} removes no points from {n}"
        )));
    }
    let mut r = rng(seed);
    let anchor = r.gen_range(0..n);
    let a = p.points()[anchor];
    let mut order: Vec<(f64, bool, usize)> = p
        .points()
        .iter()
        .enumerate()
        .map(|(i, q)| (sq_dist(q, &a), i != anchor, i))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let removed: Vec<usize> = order[..count].iter().map(|e| e.2).collect();
    let mut drop = vec![false; n];
    for &i in &removed {
        drop[i] = true;
    }
    let kept = p
        .points()
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(q, _)| *q)
        .collect();
    Ok(ViewMask {
        cloud: PointCloud::new(kept)?,
        anchor,
        removed,
    })
}

/// The original partial cloud followed by `k` masked variants of it.
#[derive(Debug, Clone)]
pub struct MaskedSet {
    pub clouds: Vec<PointCloud>,
    pub meta: Vec<MaskMeta>,
}

impl MaskedSet {
    pub fn k(&self) -> usize {
        self.clouds.len() - 1
    }

    pub fn original(&self) -> &PointCloud {
        &self.clouds[0]
    }
}

pub fn apply_strategy(p: &PointCloud, strategy: MaskStrategy, seed: u64) -> Result<(PointCloud, MaskMeta)> {
    match strategy {
        MaskStrategy::Partition { center } => {
            let m = partition_mask(p, center, seed)?;
            Ok((
                m.cloud,
                MaskMeta::Octant {
                    id: m.octant,
                    fallback: m.fallback,
                },
            ))
        }
        MaskStrategy::View { fraction } => {
            let m = view_mask(p, fraction, seed)?;
            let removed = m.removed.len();
            Ok((
                m.cloud,
                MaskMeta::View {
                    anchor: m.anchor,
                    removed,
                },
            ))
        }
    }
}

/// Builds `{P, mask_1(P), ..., mask_k(P)}` with an independent seed per mask.
pub fn build_masked_set(p: &PointCloud, k: usize, strategy: MaskStrategy, seed: u64) -> Result<MaskedSet> {
    require_min_points(p)?;
    strategy.validate()?;
    let mut clouds = Vec::with_capacity(k + 1);
    let mut meta = Vec::with_capacity(k + 1);
    clouds.push(p.clone());
    meta.push(MaskMeta::Original);
    for i in 1..=k {
        let (c, m) = apply_strategy(p, strategy, derive_seed(seed, i as u64))?;
        clouds.push(c);
        meta.push(m);
    }
    Ok(MaskedSet { clouds, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners() -> PointCloud {
        let mut pts = Vec::new();
        for x in [-1.0, 1.0] {
            for y in [-1.0, 1.0] {
                for z in [-1.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn octant_bits() {
        let o = [0.0; 3];
        assert_eq!(octant_of(&[1.0, 1.0, 1.0], &o), 7);
        assert_eq!(octant_of(&[-1.0, 1.0, -1.0], &o), 2);
        assert_eq!(octant_of(&o, &o), 7);
        assert_eq!(octant_of(&[-1.0, -1.0, -1.0], &o), 0);
    }

    #[test]
    fn partition_one_point_per_octant() {
        let p = corners();
        for seed in 0..20 {
            let m = partition_mask(&p, PartitionCenter::BoundingBox, seed).unwrap();
            assert!(!m.fallback);
            assert_eq!(m.cloud.len(), 7);
            assert!(m
                .cloud
                .points()
                .iter()
                .all(|q| octant_of(q, &[0.0; 3]) != m.octant));
        }
        let a = partition_mask(&p, PartitionCenter::BoundingBox, 3).unwrap();
        let b = partition_mask(&p, PartitionCenter::BoundingBox, 3).unwrap();
        assert_eq!(a.cloud, b.cloud);
    }

    #[test]
    fn partition_falls_back_on_concentrated_cloud() {
        // Seven points stacked in one octant, one in the opposite corner: the
        // big octant would leave 1/8 < 25%, the lone octant is admissible.
        let mut pts = vec![[1.0, 1.0, 1.0]; 7];
        pts.push([-1.0, -1.0, -1.0]);
        let p = PointCloud::new(pts).unwrap();
        let m = partition_mask(&p, PartitionCenter::BoundingBox, 0).unwrap();
        assert_eq!(m.octant, 0);
        // All points identical: every point lands in octant 7, nothing admissible.
        let same = PointCloud::new(vec![[0.5; 3]; 8]).unwrap();
        let m = partition_mask(&same, PartitionCenter::BoundingBox, 0).unwrap();
        assert!(m.fallback);
        assert_eq!(m.octant, NO_OCTANT);
        assert_eq!(m.cloud, same);
    }

    #[test]
    fn too_small_clouds_are_rejected() {
        let p = PointCloud::new(vec![[0.0; 3]; 7]).unwrap();
        assert!(partition_mask(&p, PartitionCenter::BoundingBox, 0).is_err());
        assert!(view_mask(&p, 0.125, 0).is_err());
        assert!(build_masked_set(&p, 1, MaskStrategy::partition(), 0).is_err());
    }

    #[test]
    fn view_mask_counts() {
        let pts: Vec<Point> = (0..16).map(|i| [i as f64, 0.0, 0.0]).collect();
        let p = PointCloud::new(pts).unwrap();
        let m = view_mask(&p, 0.125, 5).unwrap();
        assert_eq!(m.cloud.len(), 14);
        assert!(m.removed.contains(&m.anchor));
        assert!(view_mask(&p, 0.0, 5).is_err());
        assert!(view_mask(&p, 1.0, 5).is_err());
        assert!(view_mask(&p, 0.05, 5).is_err());
    }

    #[test]
    fn view_anchor_wins_ties_with_duplicates() {
        let p = PointCloud::new(vec![[0.0; 3]; 8]).unwrap();
        for seed in 0..10 {
            let m = view_mask(&p, 0.125, seed).unwrap();
            assert_eq!(m.removed, vec![m.anchor]);
        }
    }

    #[test]
    fn masked_set_shapes() {
        let p = corners();
        let s0 = build_masked_set(&p, 0, MaskStrategy::partition(), 1).unwrap();
        assert_eq!(s0.clouds.len(), 1);
        assert_eq!(s0.clouds[0], p);
        let s4 = build_masked_set(&p, 4, MaskStrategy::partition(), 1).unwrap();
        assert_eq!(s4.k(), 4);
        assert_eq!(s4.meta[0], MaskMeta::Original);
        assert!(s4.clouds[1..].iter().all(|c| c.len() == 7));
    }
}
