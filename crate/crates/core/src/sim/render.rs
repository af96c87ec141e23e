use std::f64::consts::PI;

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SceneSpec, SimError};
use crate::camera::BinaryMask;
use crate::geometry::{project_point, sphere_outline_ellipse, Ellipse};

const JITTER_KNOTS: usize = 72;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMask {
    pub mask: BinaryMask,
    /// Exact outline of the sphere.
    pub outline: Ellipse,
    /// Projection of the sphere center.
    pub true_center: Point2<f64>,
    /// Foreground pixels before corruption.
    pub clean_area: usize,
}

/// Area fraction of the unit disk beyond the chord at distance `s` from the center.
pub fn segment_area_fraction(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    (s.acos() - s * (1.0 - s * s).sqrt()) / PI
}

/// Chord offset whose cut-off segment has the given area fraction.
pub fn segment_offset_for_fraction(frac: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if segment_area_fraction(mid) > frac {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn rim_point(e: &Ellipse, polar: f64) -> Point2<f64> {
    let dir = Vector2::new(polar.cos(), polar.sin());
    let (_, s) = e.line_intersections(&e.center, &dir).expect("center is inside");
    e.center + dir * s
}

fn segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared().max(1e-300)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn clear_where(mask: &mut BinaryMask, mut pred: impl FnMut(&Point2<f64>) -> bool) -> usize {
    let fg: Vec<(u32, u32)> = mask.foreground().collect();
    let mut n = 0;
    for (x, y) in fg {
        if pred(&Point2::new(x as f64, y as f64)) {
            mask.set(x, y, false);
            n += 1;
        }
    }
    n
}

fn erode(mask: &BinaryMask) -> BinaryMask {
    let mut out = mask.clone();
    for (x, y) in mask.foreground() {
        let (xi, yi) = (x as i64, y as i64);
        let border = (-1..=1).any(|dy| (-1..=1).any(|dx| !mask.get_signed(xi + dx, yi + dy)));
        if border {
            out.set(x, y, false);
        }
    }
    out
}

/// Rasterizes the sphere's outline (pixel centers at integer coordinates)
/// with optional smooth boundary jitter, then applies the corruptions in
/// order: truncation, occluder blobs, mud, scratches, erosion.
pub fn render_mask(spec: &SceneSpec) -> Result<RenderedMask, SimError> {
    spec.validate()?;
    let k = &spec.k;
    let sphere = spec.sphere_in_camera();
    let outline = sphere_outline_ellipse(&sphere, k)?;
    let true_center = project_point(&sphere.center, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x3A5C_0DE5);
    let jitter = spec.noise.mask_jitter_px;
    let knots: Vec<f64> = (0..JITTER_KNOTS)
        .map(|_| jitter * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    let offset_at = |p: &Point2<f64>| {
        if jitter == 0.0 {
            return 0.0;
        }
        let v = p - outline.center;
        let u = v.y.atan2(v.x).rem_euclid(2.0 * PI) / (2.0 * PI) * JITTER_KNOTS as f64;
        let i = (u.floor() as usize) % JITTER_KNOTS;
        let f = u - u.floor();
        knots[i] * (1.0 - f) + knots[(i + 1) % JITTER_KNOTS] * f
    };

    let pad = (4.0 * jitter).ceil() + 2.0;
    let reach = outline.a + pad;
    let clip = |v: f64, hi: u32| v.clamp(0.0, hi as f64 - 1.0) as u32;
    let (x0, x1) = (clip((outline.center.x - reach).floor(), k.width), clip((outline.center.x + reach).ceil(), k.width));
    let (y0, y1) = (clip((outline.center.y - reach).floor(), k.height), clip((outline.center.y + reach).ceil(), k.height));
    let mut mask = BinaryMask::new(k.width, k.height);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Point2::new(x as f64, y as f64);
            if outline.signed_distance(&p) <= offset_at(&p) {
                mask.set(x, y, true);
            }
        }
    }
    let clean_area = mask.count();
    let c = &spec.corruption;

    let psi: f64 = rng.random_range(0.0..2.0 * PI);
    if c.truncation_frac > 0.0 {
        let s = segment_offset_for_fraction(c.truncation_frac);
        let n = Vector2::new(psi.cos(), psi.sin());
        let major = outline.major_axis_dir();
        let minor = Vector2::new(-major.y, major.x);
        clear_where(&mut mask, |p| {
            let v = p - outline.center;
            let w = Vector2::new(v.dot(&major) / outline.a, v.dot(&minor) / outline.b);
            w.dot(&n) > s
        });
    }

    for blob in &c.occluder_blobs {
        let phi = blob.center_deg.to_radians();
        let p = rim_point(&outline, phi);
        let q = rim_point(&outline, phi + blob.angular_radius_deg.to_radians());
        let r = (p - q).norm();
        clear_where(&mut mask, |x| (x - p).norm() <= r);
    }

    let mud_angle: f64 = rng.random_range(0.0..2.0 * PI);
    if c.mud_mask_frac > 0.0 {
        let p = rim_point(&outline, mud_angle);
        let target = c.mud_mask_frac * clean_area as f64;
        let fg: Vec<Point2<f64>> = mask.foreground().map(|(x, y)| Point2::new(x as f64, y as f64)).collect();
        let covered = |r: f64| fg.iter().filter(|x| (*x - p).norm() <= r).count() as f64;
        let (mut lo, mut hi) = (0.0, 2.0 * outline.a + 2.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if covered(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clear_where(&mut mask, |x| (x - p).norm() <= hi);
    }

    for _ in 0..c.scratch_lines {
        let a = rim_point(&outline, rng.random_range(0.0..2.0 * PI));
        let b = rim_point(&outline, rng.random_range(0.0..2.0 * PI));
        let half_width = if rng.random_bool(0.5) { 0.5 } else { 1.0 };
        clear_where(&mut mask, |x| segment_distance(x, &a, &b) <= half_width);
    }

    for _ in 0..c.blur_erosion_px {
        mask = erode(&mask);
    }

    Ok(RenderedMask {
        mask,
        outline,
        true_center,
        clean_area,
    })
}
