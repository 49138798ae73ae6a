mod common;

use std::time::Instant;

use common::{oracle_cd, oracle_fps, oracle_sq, oracle_ucd, random_points, rng};
use pointsfda::geometry::{cd, downsample_random, fps, normalize_to_unit_cube, pairwise_sq_dist, ucd};
use pointsfda::PointCloud;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * b.abs().max(1.0)
}

#[test]
fn kernels_match_brute_force_on_200_instances() {
    let start = Instant::now();
    let mut r = rng(2024);
    for _ in 0..200 {
        let n = r.gen_range(1..=64);
        let m = r.gen_range(1..=64);
        let spread = r.gen_range(0.01..10.0);
        let x = random_points(&mut r, n, spread);
        let y = random_points(&mut r, m, spread);
        let (cx, cy) = (PointCloud::new(x.clone()).unwrap(), PointCloud::new(y.clone()).unwrap());

        let d = pairwise_sq_dist(&cx, &cy).unwrap();
        for i in 0..n {
            for j in 0..m {
                assert!(close(d.get(i, j), oracle_sq(&x[i], &y[j])));
            }
        }
        assert!(close(ucd(&cx, &cy).unwrap(), oracle_ucd(&x, &y)));
        assert!(close(ucd(&cy, &cx).unwrap(), oracle_ucd(&y, &x)));
        assert!(close(cd(&cx, &cy).unwrap(), oracle_cd(&x, &y)));

        let k = r.gen_range(1..=n);
        let s = r.gen_range(0..n);
        assert_eq!(fps(&cx, k, s).unwrap(), oracle_fps(&x, k, s));
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "suite took {secs:.2}s");
}

#[test]
fn fps_breaks_ties_towards_the_lowest_index() {
    // corners of a square: after 0, points 1 and 3 are equally far from it
    // as 2 is farther; then 1 and 3 tie
    let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
    assert_eq!(fps(&c, 4, 0).unwrap(), vec![0, 2, 1, 3]);
    // duplicate points: the copy is never preferred over a farther point
    let d = PointCloud::new(vec![[0.0; 3], [0.0; 3], [2.0, 0.0, 0.0]]).unwrap();
    assert_eq!(fps(&d, 3, 0).unwrap(), vec![0, 2, 1]);
}

#[test]
fn fps_and_downsample_reject_bad_counts() {
    let c = common::random_cloud(1, 10);
    assert!(fps(&c, 0, 0).is_err());
    assert!(fps(&c, 11, 0).is_err());
    assert!(fps(&c, 3, 10).is_err());
    assert!(downsample_random(&c, 11, 0).is_err());
    assert_eq!(downsample_random(&c, 10, 0).unwrap().len(), 10);
}

#[test]
fn normalization_fits_the_unit_cube_and_inverts() {
    let mut r = rng(5);
    for _ in 0..50 {
        let mut pts = random_points(&mut r, 40, 7.0);
        for p in &mut pts {
            p[1] *= 0.2;
            p[0] += 3.0;
        }
        let c = PointCloud::new(pts).unwrap();
        let (n, t) = normalize_to_unit_cube(&c).unwrap();
        let (lo, hi) = n.bounds();
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        assert!((extent - 1.0).abs() < 1e-12);
        for k in 0..3 {
            assert!((lo[k] + hi[k]).abs() < 1e-12, "box not centered on axis {k}");
        }
        let back = t.invert(&n);
        for (a, b) in back.points().iter().zip(c.points()) {
            assert!(oracle_sq(a, b).sqrt() < 1e-12);
        }
    }
    let single = PointCloud::new(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
    assert!(normalize_to_unit_cube(&single).is_err());
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_axioms(x in cloud_strategy(32), y in cloud_strategy(32)) {
        let (cx, cy) = (PointCloud::new(x.clone()).unwrap(), PointCloud::new(y.clone()).unwrap());
        let d = cd(&cx, &cy).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(cd(&cx, &cx).unwrap(), 0.0);
        prop_assert!(close(d, cd(&cy, &cx).unwrap()));
        // zero distance exactly when the point sets coincide
        let same_set = x.iter().all(|p| y.contains(p)) && y.iter().all(|p| x.contains(p));
        prop_assert_eq!(d == 0.0, same_set);
    }

    #[test]
    fn chamfer_permutation_and_translation(x in cloud_strategy(32), y in cloud_strategy(32),
                                           t in prop::array::uniform3(-3.0f64..3.0), seed in any::<u64>()) {
        let (cx, cy) = (PointCloud::new(x.clone()).unwrap(), PointCloud::new(y.clone()).unwrap());
        let base = cd(&cx, &cy).unwrap();
        let mut xp = x.clone();
        xp.shuffle(&mut rng(seed));
        let mut yp = y.clone();
        yp.shuffle(&mut rng(seed ^ 1));
        let permuted = cd(&PointCloud::new(xp).unwrap(), &PointCloud::new(yp).unwrap()).unwrap();
        prop_assert!(close(permuted, base));
        let moved = cd(&cx.translated(t), &cy.translated(t)).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * base.max(1.0));
        let u = ucd(&cx, &cy).unwrap();
        prop_assert!(u >= 0.0 && u <= base + TOL);
    }

    #[test]
    fn fps_permutation_equivariance(x in cloud_strategy(40), seed in any::<u64>(), k in 1usize..40) {
        let n = x.len();
        let k = k.min(n);
        let c = PointCloud::new(x.clone()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed));
        // permuted[i] = x[perm[i]]
        let permuted = PointCloud::new(perm.iter().map(|&i| x[i]).collect()).unwrap();
        let start_p = perm.iter().position(|&i| i == 0).unwrap();
        let a: Vec<[f64; 3]> = fps(&c, k, 0).unwrap().iter().map(|&i| x[i]).collect();
        let b: Vec<[f64; 3]> = fps(&permuted, k, start_p).unwrap().iter().map(|&i| x[perm[i]]).collect();
        // equal up to tie-breaking: the running coverage radius must agree
        let radius = |sel: &[[f64; 3]]| -> Vec<f64> {
            (1..sel.len()).map(|m| x.iter().map(|p| sel[..m].iter().map(|s| oracle_sq(p, s)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)).collect()
        };
        prop_assert_eq!(radius(&a), radius(&b));
        prop_assert_eq!(a.len(), k);
    }

    #[test]
    fn downsample_is_a_deterministic_subset(x in cloud_strategy(40), seed in any::<u64>(), k in 1usize..40) {
        let c = PointCloud::new(x.clone()).unwrap();
        let k = k.min(c.len());
        let a = downsample_random(&c, k, seed).unwrap();
        prop_assert_eq!(&a, &downsample_random(&c, k, seed).unwrap());
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.points().iter().all(|p| x.contains(p)));
    }
}
