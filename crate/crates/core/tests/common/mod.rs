#![allow(dead_code)]

use pointsfda::geometry::Point;
use pointsfda::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(r: &mut impl Rng, n: usize, spread: f64) -> Vec<Point> {
    (0..n)
        .map(|_| [r.gen_range(-spread..spread), r.gen_range(-spread..spread), r.gen_range(-spread..spread)])
        .collect()
}

pub fn random_cloud(seed: u64, n: usize) -> PointCloud {
    PointCloud::new(random_points(&mut rng(seed), n, 1.0)).unwrap()
}

/// Brute-force squared distance, written independently of the library.
pub fn oracle_sq(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

/// Mean over `x` of the squared distance to the closest point of `y`.
pub fn oracle_ucd(x: &[Point], y: &[Point]) -> f64 {
    let mut total = 0.0;
    for a in x {
        let mut best = f64::INFINITY;
        for b in y {
            best = best.min(oracle_sq(a, b));
        }
        total += best;
    }
    total / x.len() as f64
}

pub fn oracle_cd(x: &[Point], y: &[Point]) -> f64 {
    oracle_ucd(x, y) + oracle_ucd(y, x)
}

/// Farthest point sampling recomputing every distance to the selected set.
pub fn oracle_fps(x: &[Point], k: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in x.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| oracle_sq(p, &x[c])).fold(f64::INFINITY, f64::min);
            match best {
                Some((_, bd)) if d <= bd => {}
                _ => best = Some((i, d)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}
