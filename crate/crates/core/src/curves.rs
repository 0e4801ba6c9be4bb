//! Closed polylines in the plane and the pairwise nesting test for
//! projected orbit families.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::orbit::PeriodicOrbit;

/// Distance below which curves are considered to touch.
pub const CURVE_TOL: f64 = 1e-7;
/// Hausdorff distance below which two curves are the same set.
pub const IDENTICAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct JordanCurve {
    pub id: usize,
    pub amplitude: f64,
    /// Vertices; the closing segment from the last back to the first is implied.
    pub points: Vec<[f64; 2]>,
    /// `+1` counterclockwise, `-1` clockwise.
    pub orientation: f64,
}

impl JordanCurve {
    pub fn new(id: usize, amplitude: f64, points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidInput(format!("curve {id} has {} vertices", points.len())));
        }
        let mut curve = Self {
            id,
            amplitude,
            points,
            orientation: 0.0,
        };
        curve.orientation = curve.signed_area().signum();
        curve.check_simple()?;
        Ok(curve)
    }

    /// `(x(t), x(t - 1))` at `n` vertices spread evenly in arc length, picked
    /// from a dense uniform-phase sampling (so equal profiles give equal
    /// vertex sets).
    pub fn from_orbit(id: usize, orbit: &PeriodicOrbit, n: usize) -> Result<Self> {
        let dense_n = crate::fourier::odd_size((16 * n).max(orbit.modes()));
        let interp = orbit.interpolant();
        let u = interp.grid_values(dense_n, 0, 0.0);
        let v = interp.grid_values(dense_n, 0, -1.0 / orbit.period);
        let mut arc = vec![0.0; dense_n + 1];
        for i in 0..dense_n {
            let k = (i + 1) % dense_n;
            arc[i + 1] = arc[i] + (u[k] - u[i]).hypot(v[k] - v[i]);
        }
        let total = arc[dense_n];
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
        let mut i = 0;
        for k in 0..n {
            let target = total * k as f64 / n as f64;
            while i + 1 < dense_n && arc[i + 1] <= target {
                i += 1;
            }
            let p = [u[i], v[i]];
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        Self::new(id, orbit.amplitude, pts)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn segment(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.points[i], self.points[(i + 1) % self.points.len()])
    }

    pub fn signed_area(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.segment(i);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    /// Winding number of the curve around `p`.
    pub fn winding(&self, p: [f64; 2]) -> i32 {
        let mut w = 0;
        for i in 0..self.len() {
            let (a, b) = self.segment(i);
            let side = cross(a, b, p);
            if a[1] <= p[1] {
                if b[1] > p[1] && side > 0.0 {
                    w += 1;
                }
            } else if b[1] <= p[1] && side < 0.0 {
                w -= 1;
            }
        }
        w
    }

    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.segment(i);
                point_segment_distance(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn check_simple(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            let (a, b) = self.segment(i);
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = self.segment(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::CurveNotSimple { id: self.id, i, j });
                }
            }
        }
        Ok(())
    }
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - s * d[0]).hypot(p[1] - a[1] - s * d[1])
}

/// Proper intersection (interiors cross transversally).
fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Disjoint,
    Identical,
    Crossing,
    Tangent,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub first: usize,
    pub second: usize,
    pub relation: Relation,
    /// Smallest vertex-to-curve distance in either direction.
    pub min_distance: f64,
    pub hausdorff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NestingReport {
    pub pairs: Vec<PairReport>,
    pub crossings: usize,
    pub tangencies: usize,
    pub identical: usize,
    /// Smallest distance over all non-identical pairs.
    pub margin: f64,
}

impl NestingReport {
    /// No crossings and no tangencies.
    pub fn nested(&self) -> bool {
        self.crossings == 0 && self.tangencies == 0
    }
}

struct Side {
    inside: bool,
    outside: bool,
    min_distance: f64,
    max_distance: f64,
}

fn classify(a: &JordanCurve, b: &JordanCurve) -> Side {
    let mut side = Side {
        inside: false,
        outside: false,
        min_distance: f64::INFINITY,
        max_distance: 0.0,
    };
    for &p in &a.points {
        let d = b.distance(p);
        side.min_distance = side.min_distance.min(d);
        side.max_distance = side.max_distance.max(d);
        if d > CURVE_TOL {
            if b.winding(p) != 0 {
                side.inside = true;
            } else {
                side.outside = true;
            }
        }
    }
    side
}

pub fn compare(a: &JordanCurve, b: &JordanCurve) -> PairReport {
    let ab = classify(a, b);
    let ba = classify(b, a);
    let hausdorff = ab.max_distance.max(ba.max_distance);
    let min_distance = ab.min_distance.min(ba.min_distance);
    let transversal = (0..a.len()).any(|i| {
        let (p, q) = a.segment(i);
        (0..b.len()).any(|j| {
            let (r, s) = b.segment(j);
            segments_intersect(p, q, r, s)
        })
    });
    let relation = if hausdorff < IDENTICAL_TOL {
        Relation::Identical
    } else if (ab.inside && ab.outside) || (ba.inside && ba.outside) || (transversal && min_distance > CURVE_TOL) {
        Relation::Crossing
    } else if min_distance < CURVE_TOL {
        Relation::Tangent
    } else {
        Relation::Disjoint
    };
    PairReport {
        first: a.id,
        second: b.id,
        relation,
        min_distance,
        hausdorff,
    }
}

/// All pairwise relations. Curves are expected to be simple already (the
/// constructor checks).
pub fn nesting_check(curves: &[JordanCurve]) -> NestingReport {
    let pairs: Vec<(usize, usize)> = (0..curves.len())
        .flat_map(|i| (i + 1..curves.len()).map(move |j| (i, j)))
        .collect();
    let pairs: Vec<PairReport> = pairs.par_iter().map(|&(i, j)| compare(&curves[i], &curves[j])).collect();
    let count = |r: Relation| pairs.iter().filter(|p| p.relation == r).count();
    let margin = pairs
        .iter()
        .filter(|p| p.relation != Relation::Identical)
        .map(|p| p.min_distance)
        .fold(f64::INFINITY, f64::min);
    NestingReport {
        crossings: count(Relation::Crossing),
        tangencies: count(Relation::Tangent),
        identical: count(Relation::Identical),
        margin,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn circle(id: usize, c: [f64; 2], r: f64, n: usize) -> JordanCurve {
        let pts = (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                [c[0] + r * t.cos(), c[1] + r * t.sin()]
            })
            .collect();
        JordanCurve::new(id, r, pts).unwrap()
    }

    #[test]
    fn concentric_circles_are_disjoint() {
        let rep = nesting_check(&[circle(0, [0.0, 0.0], 1.0, 200), circle(1, [0.0, 0.0], 2.0, 200)]);
        assert_eq!(rep.pairs[0].relation, Relation::Disjoint);
        assert!(rep.nested());
        assert!((rep.margin - 1.0).abs() < 1e-3);
    }

    #[test]
    fn shifted_circles_cross() {
        let rep = nesting_check(&[circle(0, [0.0, 0.0], 1.0, 200), circle(1, [0.5, 0.0], 1.0, 200)]);
        assert_eq!(rep.pairs[0].relation, Relation::Crossing);
        assert_eq!(rep.crossings, 1);
    }

    #[test]
    fn internally_touching_circles_are_tangent() {
        // Shared vertex at (1, 0), octagon otherwise strictly inside.
        let rep = nesting_check(&[circle(0, [0.0, 0.0], 1.0, 400), circle(1, [0.5, 0.0], 0.5, 8)]);
        assert_eq!(rep.pairs[0].relation, Relation::Tangent);
    }

    #[test]
    fn same_circle_is_identical() {
        let rep = nesting_check(&[circle(0, [0.0, 0.0], 1.0, 64), circle(1, [0.0, 0.0], 1.0, 64)]);
        assert_eq!(rep.pairs[0].relation, Relation::Identical);
    }

    #[test]
    fn figure_eight_is_rejected() {
        let pts = (0..100)
            .map(|i| {
                let t = TAU * i as f64 / 100.0;
                [t.sin(), (2.0 * t).sin()]
            })
            .collect();
        assert!(matches!(JordanCurve::new(3, 1.0, pts), Err(Error::CurveNotSimple { id: 3, .. })));
    }

    #[test]
    fn orientation_and_winding() {
        let c = circle(0, [1.0, 1.0], 2.0, 100);
        assert_eq!(c.orientation, 1.0);
        assert_eq!(c.winding([1.0, 1.0]), 1);
        assert_eq!(c.winding([4.0, 1.0]), 0);
        assert!((c.signed_area() - std::f64::consts::PI * 4.0).abs() < 0.01);
    }
}
