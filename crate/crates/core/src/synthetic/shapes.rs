//! Procedural furniture-like shapes built from boxes, cylinders and frustums,
//! sampled uniformly over their surfaces.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_cube, Point, PointCloud};
use crate::rng::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    BoxTable,
    PanelChair,
    TubeLamp,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::BoxTable, Category::PanelChair, Category::TubeLamp];

    pub fn name(&self) -> &'static str {
        match self {
            Category::BoxTable => "box-table",
            Category::PanelChair => "panel-chair",
            Category::TubeLamp => "tube-lamp",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: Category,
    pub points_complete: usize,
}

impl ShapeSpec {
    pub fn new(category: Category) -> Self {
        Self {
            category,
            points_complete: 2048,
        }
    }

    pub fn with_points(self, points_complete: usize) -> Self {
        Self {
            points_complete,
            ..self
        }
    }
}

/// Parameter ranges; every lower bound is strictly positive so no part
/// (in particular no leg) can have zero extent.
mod ranges {
    pub const TOP_WIDTH: (f64, f64) = (0.8, 1.3);
    pub const TOP_DEPTH: (f64, f64) = (0.45, 0.9);
    pub const TOP_THICK: (f64, f64) = (0.03, 0.08);
    pub const LEG_LENGTH: (f64, f64) = (0.45, 0.85);
    pub const LEG_WIDTH: (f64, f64) = (0.04, 0.1);
    pub const SEAT_WIDTH: (f64, f64) = (0.45, 0.7);
    pub const SEAT_DEPTH: (f64, f64) = (0.4, 0.65);
    pub const SEAT_THICK: (f64, f64) = (0.04, 0.09);
    pub const BACK_HEIGHT: (f64, f64) = (0.4, 0.75);
    pub const BACK_THICK: (f64, f64) = (0.03, 0.07);
    pub const CHAIR_LEG: (f64, f64) = (0.35, 0.55);
    pub const BASE_RADIUS: (f64, f64) = (0.12, 0.25);
    pub const BASE_HEIGHT: (f64, f64) = (0.02, 0.06);
    pub const POLE_RADIUS: (f64, f64) = (0.015, 0.04);
    pub const POLE_HEIGHT: (f64, f64) = (0.5, 1.0);
    pub const SHADE_BOTTOM: (f64, f64) = (0.18, 0.35);
    pub const SHADE_TOP: (f64, f64) = (0.06, 0.16);
    pub const SHADE_HEIGHT: (f64, f64) = (0.15, 0.35);
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Axis-aligned box: center and half extents.
    Cuboid { c: Point, h: Point },
    /// Vertical closed cylinder: base center, radius, height.
    Cylinder { base: Point, r: f64, height: f64 },
    /// Vertical open frustum: base center, bottom/top radii, height.
    Frustum { base: Point, r0: f64, r1: f64, height: f64 },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid { h, .. } => 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2]),
            Primitive::Cylinder { r, height, .. } => 2.0 * PI * r * height + 2.0 * PI * r * r,
            Primitive::Frustum { r0, r1, height, .. } => {
                PI * (r0 + r1) * ((r0 - r1).powi(2) + height * height).sqrt()
            }
        }
    }

    fn sample<R: Rng>(&self, r: &mut R) -> Point {
        match *self {
            Primitive::Cuboid { c, h } => {
                // faces perpendicular to x, y, z weighted by their area
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut u = r.gen::<f64>() * total;
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if u < *a {
                        axis = k;
                        break;
                    }
                    u -= a;
                }
                let sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        c[k] + sign * h[k]
                    } else {
                        c[k] + h[k] * (2.0 * r.gen::<f64>() - 1.0)
                    };
                }
                p
            }
            Primitive::Cylinder { base, r: rad, height } => {
                let side = 2.0 * PI * rad * height;
                let cap = PI * rad * rad;
                let u = r.gen::<f64>() * (side + 2.0 * cap);
                let theta = 2.0 * PI * r.gen::<f64>();
                if u < side {
                    let y = base[1] + height * r.gen::<f64>();
                    [base[0] + rad * theta.cos(), y, base[2] + rad * theta.sin()]
                } else {
                    let rr = rad * r.gen::<f64>().sqrt();
                    let y = if u < side + cap { base[1] } else { base[1] + height };
                    [base[0] + rr * theta.cos(), y, base[2] + rr * theta.sin()]
                }
            }
            Primitive::Frustum { base, r0, r1, height } => {
                // lateral density is proportional to the local radius
                let rmax = r0.max(r1);
                let t = loop {
                    let t = r.gen::<f64>();
                    if r.gen::<f64>() * rmax <= r0 + (r1 - r0) * t {
                        break t;
                    }
                };
                let rad = r0 + (r1 - r0) * t;
                let theta = 2.0 * PI * r.gen::<f64>();
                [
                    base[0] + rad * theta.cos(),
                    base[1] + height * t,
                    base[2] + rad * theta.sin(),
                ]
            }
        }
    }
}

fn draw<R: Rng>(r: &mut R, range: (f64, f64)) -> f64 {
    r.gen_range(range.0..range.1)
}

fn legs(width: f64, depth: f64, leg_w: f64, leg_len: f64, top_y: f64) -> Vec<Primitive> {
    let hw = leg_w / 2.0;
    let (x, z) = (width / 2.0 - hw, depth / 2.0 - hw);
    [(-x, -z), (x, -z), (-x, z), (x, z)]
        .into_iter()
        .map(|(px, pz)| Primitive::Cuboid {
            c: [px, top_y - leg_len / 2.0, pz],
            h: [hw, leg_len / 2.0, hw],
        })
        .collect()
}

fn compose<R: Rng>(category: Category, r: &mut R) -> Vec<Primitive> {
    use ranges::*;
    match category {
        Category::BoxTable => {
            let (w, d, t) = (draw(r, TOP_WIDTH), draw(r, TOP_DEPTH), draw(r, TOP_THICK));
            let (len, lw) = (draw(r, LEG_LENGTH), draw(r, LEG_WIDTH));
            let mut parts = vec![Primitive::Cuboid {
                c: [0.0, len + t / 2.0, 0.0],
                h: [w / 2.0, t / 2.0, d / 2.0],
            }];
            parts.extend(legs(w, d, lw, len, len));
            parts
        }
        Category::PanelChair => {
            let (w, d, t) = (draw(r, SEAT_WIDTH), draw(r, SEAT_DEPTH), draw(r, SEAT_THICK));
            let (bh, bt) = (draw(r, BACK_HEIGHT), draw(r, BACK_THICK));
            let (len, lw) = (draw(r, CHAIR_LEG), draw(r, LEG_WIDTH));
            let mut parts = vec![
                Primitive::Cuboid {
                    c: [0.0, len + t / 2.0, 0.0],
                    h: [w / 2.0, t / 2.0, d / 2.0],
                },
                Primitive::Cuboid {
                    c: [0.0, len + t + bh / 2.0, -d / 2.0 + bt / 2.0],
                    h: [w / 2.0, bh / 2.0, bt / 2.0],
                },
            ];
            parts.extend(legs(w, d, lw, len, len));
            parts
        }
        Category::TubeLamp => {
            let (br, bh) = (draw(r, BASE_RADIUS), draw(r, BASE_HEIGHT));
            let (pr, ph) = (draw(r, POLE_RADIUS), draw(r, POLE_HEIGHT));
            let (s0, s1, sh) = (draw(r, SHADE_BOTTOM), draw(r, SHADE_TOP), draw(r, SHADE_HEIGHT));
            vec![
                Primitive::Cylinder {
                    base: [0.0; 3],
                    r: br,
                    height: bh,
                },
                Primitive::Cylinder {
                    base: [0.0, bh, 0.0],
                    r: pr,
                    height: ph,
                },
                Primitive::Frustum {
                    base: [0.0, bh + ph - 0.5 * sh, 0.0],
                    r0: s0,
                    r1: s1,
                    height: sh,
                },
            ]
        }
    }
}

const MAX_DRAWS: usize = 8;

/// Uniform surface samples of a randomly composed shape, normalized to the
/// unit cube, exactly `spec.points_complete` points.
pub fn make_complete_shape(spec: &ShapeSpec, seed: u64) -> Result<PointCloud> {
    if spec.points_complete < 2 {
        return Err(Error::invalid("a complete shape needs at least 2 points"));
    }
    let mut r = rng(seed);
    for _ in 0..MAX_DRAWS {
        let parts = compose(spec.category, &mut r);
        let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
        if areas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            continue;
        }
        let pick = WeightedIndex::new(&areas).map_err(|e| Error::Generation(e.to_string()))?;
        let pts: Vec<Point> = (0..spec.points_complete)
            .map(|_| parts[pick.sample(&mut r)].sample(&mut r))
            .collect();
        match normalize_to_unit_cube(&PointCloud::new(pts)?) {
            Ok((cloud, _)) => return Ok(cloud),
            Err(_) => continue,
        }
    }
    Err(Error::Generation(format!(
        "no valid {} after {MAX_DRAWS} parameter draws",
        spec.category.name()
    )))
}
