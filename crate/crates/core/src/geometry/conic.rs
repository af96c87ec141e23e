//! Ellipses in center/axes/angle form and their general conic representation.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Vector2};
use serde::{Deserialize, Serialize};

/// General conic `a·x² + b·x·y + c·y² + d·x + e·y + f = 0`.
///
/// Conics produced by [`Ellipse::to_conic`] are negative inside the ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Conic {
    pub fn from_coeffs(k: [f64; 6]) -> Self {
        Self {
            a: k[0],
            b: k[1],
            c: k[2],
            d: k[3],
            e: k[4],
            f: k[5],
        }
    }

    pub fn coeffs(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    /// Symmetric 3×3 matrix `Q` with `[x y 1] Q [x y 1]ᵀ` equal to the conic value.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a,
            self.b / 2.0,
            self.d / 2.0,
            self.b / 2.0,
            self.c,
            self.e / 2.0,
            self.d / 2.0,
            self.e / 2.0,
            self.f,
        )
    }

    pub fn from_matrix(q: &Matrix3<f64>) -> Self {
        Self {
            a: q[(0, 0)],
            b: q[(0, 1)] + q[(1, 0)],
            c: q[(1, 1)],
            d: q[(0, 2)] + q[(2, 0)],
            e: q[(1, 2)] + q[(2, 1)],
            f: q[(2, 2)],
        }
    }

    /// Conic in the coordinates `x'` where `x = H·x'` (homogeneous).
    pub fn pulled_back(&self, h: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(h.transpose() * self.matrix() * h))
    }

    pub fn value(&self, p: &Point2<f64>) -> f64 {
        let (x, y) = (p.x, p.y);
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    pub fn is_ellipse(&self) -> bool {
        4.0 * self.a * self.c - self.b * self.b > 0.0
    }

    /// Canonical ellipse of this conic, or `None` for non-ellipses and
    /// imaginary or degenerate ellipses.
    pub fn to_ellipse(&self) -> Option<Ellipse> {
        let scale = self
            .coeffs()
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) || !scale.is_finite() {
            return None;
        }
        let [a, b, c, d, e, f] = self.coeffs().map(|v| v / scale);
        let disc = 4.0 * a * c - b * b;
        if disc <= 0.0 {
            return None;
        }
        let x0 = (b * e - 2.0 * c * d) / disc;
        let y0 = (b * d - 2.0 * a * e) / disc;
        let mut f0 = f + (d * x0 + e * y0) / 2.0;
        let (mut a, mut b, mut c) = (a, b, c);
        if a + c < 0.0 {
            a = -a;
            b = -b;
            c = -c;
            f0 = -f0;
        }
        if f0 >= 0.0 {
            return None;
        }
        let mean = (a + c) / 2.0;
        let dev = (((a - c) / 2.0).powi(2) + (b / 2.0).powi(2)).sqrt();
        let lam_small = mean - dev;
        let lam_large = mean + dev;
        if lam_small <= 0.0 {
            return None;
        }
        let semi_major = (-f0 / lam_small).sqrt();
        let semi_minor = (-f0 / lam_large).sqrt();
        // Eigenvector of lam_small; pick the better-conditioned of the two forms.
        let v1 = Vector2::new(b / 2.0, lam_small - a);
        let v2 = Vector2::new(lam_small - c, b / 2.0);
        let v = if v1.norm_squared() >= v2.norm_squared() {
            v1
        } else {
            v2
        };
        let angle = if v.norm_squared() > 0.0 {
            v.y.atan2(v.x)
        } else {
            0.0
        };
        Ellipse::new(Point2::new(x0, y0), semi_major, semi_minor, angle)
    }
}

/// Ellipse in canonical form: `a ≥ b > 0`, major-axis angle in `[0, π)`,
/// and angle 0 for circles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point2<f64>,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Builds a canonical ellipse, swapping axes and wrapping the angle as
    /// needed. Returns `None` for non-positive or non-finite axes.
    pub fn new(center: Point2<f64>, a: f64, b: f64, angle: f64) -> Option<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && angle.is_finite()) {
            return None;
        }
        if !(center.x.is_finite() && center.y.is_finite()) {
            return None;
        }
        let (a, b, angle) = if a >= b {
            (a, b, angle)
        } else {
            (b, a, angle + PI / 2.0)
        };
        let mut angle = angle.rem_euclid(PI);
        if angle >= PI {
            angle = 0.0;
        }
        if (a - b) <= 1e-12 * a {
            angle = 0.0;
        }
        Some(Self {
            center,
            a,
            b,
            angle,
        })
    }

    pub fn circle(center: Point2<f64>, radius: f64) -> Option<Self> {
        Self::new(center, radius, radius, 0.0)
    }

    pub fn to_conic(&self) -> Conic {
        let (s, c) = self.angle.sin_cos();
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let (x0, y0) = (self.center.x, self.center.y);
        let ka = a2 * s * s + b2 * c * c;
        let kb = 2.0 * (b2 - a2) * s * c;
        let kc = a2 * c * c + b2 * s * s;
        Conic {
            a: ka,
            b: kb,
            c: kc,
            d: -2.0 * ka * x0 - kb * y0,
            e: -kb * x0 - 2.0 * kc * y0,
            f: ka * x0 * x0 + kb * x0 * y0 + kc * y0 * y0 - a2 * b2,
        }
    }

    pub fn major_axis_dir(&self) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c, s)
    }

    /// Point at parametric angle `t`.
    pub fn point_at(&self, t: f64) -> Point2<f64> {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (self.a * t.cos(), self.b * t.sin());
        Point2::new(
            self.center.x + c * x - s * y,
            self.center.y + s * x + c * y,
        )
    }

    /// `n` points evenly spaced in parametric angle.
    pub fn sample_points(&self, n: usize) -> Vec<Point2<f64>> {
        (0..n)
            .map(|i| self.point_at(2.0 * PI * i as f64 / n as f64))
            .collect()
    }

    fn to_local(&self, p: &Point2<f64>) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Parametric angle in `[0, 2π)` of the closest boundary point to `p`.
    pub fn closest_param(&self, p: &Point2<f64>) -> f64 {
        let (x, y) = self.to_local(p);
        let (a, b) = (self.a, self.b);
        let mut t = (a * y).atan2(b * x);
        // Newton on d/dt |E(t) - p|² = 0.
        for _ in 0..12 {
            let (st, ct) = t.sin_cos();
            let g = (b * b - a * a) * st * ct + a * x * st - b * y * ct;
            let dg = (b * b - a * a) * (ct * ct - st * st) + a * x * ct + b * y * st;
            if dg.abs() < 1e-300 {
                break;
            }
            let step = g / dg;
            t -= step.clamp(-0.5, 0.5);
            if step.abs() < 1e-14 {
                break;
            }
        }
        t.rem_euclid(2.0 * PI)
    }

    /// Signed Euclidean distance to the boundary: negative inside.
    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        let t = self.closest_param(p);
        let q = self.point_at(t);
        let d = (p - q).norm();
        let (x, y) = self.to_local(p);
        if (x / self.a).powi(2) + (y / self.b).powi(2) < 1.0 {
            -d
        } else {
            d
        }
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Intersections of the line `origin + s·dir` with the ellipse, as sorted
    /// line parameters. `dir` need not be normalized.
    pub fn line_intersections(&self, origin: &Point2<f64>, dir: &Vector2<f64>) -> Option<(f64, f64)> {
        let (ox, oy) = self.to_local(origin);
        let (s, c) = self.angle.sin_cos();
        let dx = c * dir.x + s * dir.y;
        let dy = -s * dir.x + c * dir.y;
        let (ia2, ib2) = (1.0 / (self.a * self.a), 1.0 / (self.b * self.b));
        let qa = dx * dx * ia2 + dy * dy * ib2;
        let qb = 2.0 * (ox * dx * ia2 + oy * dy * ib2);
        let qc = ox * ox * ia2 + oy * oy * ib2 - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if qa <= 0.0 || disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Numerically stable quadratic roots.
        let q = -0.5 * (qb + qb.signum() * sq);
        let (r1, r2) = if q != 0.0 {
            (q / qa, qc / q)
        } else {
            (sq / (2.0 * qa), -sq / (2.0 * qa))
        };
        Some((r1.min(r2), r1.max(r2)))
    }
}
