mod common;

use common::{oracle_sq, random_points, rng};
use pointsfda::masking::{
    build_masked_set, octant_of, partition_mask, view_mask, MaskMeta, MaskStrategy, PartitionCenter, NO_OCTANT,
};
use pointsfda::PointCloud;
use rand::Rng;

fn input(seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let n = r.gen_range(8..400);
    let mut pts = random_points(&mut r, n, 1.0);
    // skew some clouds so octant populations are uneven
    let squash: f64 = r.gen_range(0.05..1.0);
    for p in &mut pts {
        p[2] *= squash;
        if p[0] > 0.5 {
            p[1] += 0.7;
        }
    }
    PointCloud::new(pts).unwrap()
}

fn is_ordered_subset(sub: &PointCloud, of: &PointCloud) -> bool {
    let mut it = of.points().iter();
    sub.points().iter().all(|p| it.any(|q| q == p))
}

#[test]
fn partition_invariants_over_100_seeds() {
    for seed in 0..100 {
        let p = input(seed);
        let before = p.clone();
        let m = partition_mask(&p, PartitionCenter::BoundingBox, seed).unwrap();
        assert_eq!(p, before, "input modified");
        assert!(is_ordered_subset(&m.cloud, &p));
        assert!(!m.fallback && m.octant < 8);
        // oracle: box center and sign pattern computed here
        let (lo, hi) = p.bounds();
        let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let oct = |q: &[f64; 3]| (0..3).fold(0u8, |acc, k| (acc << 1) | u8::from(q[k] >= c[k]));
        let expected: Vec<[f64; 3]> = p.points().iter().copied().filter(|q| oct(q) != m.octant).collect();
        assert_eq!(m.cloud.points(), expected.as_slice(), "seed {seed}");
        assert!(m.cloud.len() < p.len(), "an empty octant was chosen");
        assert!(m.cloud.len() as f64 >= 0.25 * p.len() as f64);
        for q in p.points() {
            assert_eq!(octant_of(q, &c), oct(q));
        }
        let again = partition_mask(&p, PartitionCenter::BoundingBox, seed).unwrap();
        assert_eq!((again.cloud, again.octant), (m.cloud, m.octant));
    }
}

#[test]
fn view_invariants_over_100_seeds() {
    for seed in 0..100 {
        let p = input(seed + 1000);
        let n = p.len();
        let m = view_mask(&p, 0.125, seed).unwrap();
        assert_eq!(m.removed.len(), n / 8, "seed {seed}");
        assert_eq!(m.cloud.len(), n - n / 8);
        assert!(m.removed.contains(&m.anchor));
        assert!(is_ordered_subset(&m.cloud, &p));
        let a = p.points()[m.anchor];
        let far_removed = m.removed.iter().map(|&i| oracle_sq(&p.points()[i], &a)).fold(0.0, f64::max);
        let near_kept = m.cloud.points().iter().map(|q| oracle_sq(q, &a)).fold(f64::INFINITY, f64::min);
        assert!(far_removed <= near_kept);
        let again = view_mask(&p, 0.125, seed).unwrap();
        assert_eq!((again.cloud, again.anchor), (m.cloud, m.anchor));
    }
}

#[test]
fn masked_sets_over_100_seeds() {
    for seed in 0..100 {
        let p = input(seed + 2000);
        for strategy in [MaskStrategy::partition(), MaskStrategy::view()] {
            let k = (seed % 4 + 1) as usize;
            let set = build_masked_set(&p, k, strategy, seed).unwrap();
            assert_eq!(set.k(), k);
            assert_eq!(set.original(), &p);
            assert_eq!(set.meta[0], MaskMeta::Original);
            for c in &set.clouds[1..] {
                assert!(is_ordered_subset(c, &p));
                assert!(c.len() < p.len());
            }
            let again = build_masked_set(&p, k, strategy, seed).unwrap();
            assert_eq!(again.clouds, set.clouds);
        }
    }
}

#[test]
fn degenerate_inputs() {
    // every point in one octant: no admissible octant, input returned unmasked
    let same = PointCloud::new(vec![[0.3, 0.3, 0.3]; 12]).unwrap();
    let m = partition_mask(&same, PartitionCenter::BoundingBox, 0).unwrap();
    assert!(m.fallback);
    assert_eq!(m.octant, NO_OCTANT);
    assert_eq!(m.cloud, same);
    let tiny = PointCloud::new(vec![[0.0; 3]; 7]).unwrap();
    assert!(partition_mask(&tiny, PartitionCenter::BoundingBox, 0).is_err());
    assert!(view_mask(&tiny, 0.125, 0).is_err());
    assert!(build_masked_set(&tiny, 1, MaskStrategy::view(), 0).is_err());
}
