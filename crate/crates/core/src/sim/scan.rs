use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BoxSpec, GroundSpec, NoiseModel, ScanPattern, SceneSpec, SimError};
use crate::geometry::{rotation_about, SphereParams};
use crate::lidar::{PointCloud, PointLabel};

fn direction(az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Effective range noise at incidence angle θ given `cos θ`.
pub fn incidence_sigma(noise: &NoiseModel, cos_theta: f64) -> f64 {
    let c = cos_theta.abs().clamp(1e-9, 1.0);
    let tan = (1.0 - c * c).max(0.0).sqrt() / c;
    (noise.sigma0 * (1.0 + noise.incidence_gain * tan)).min(noise.sigma_max)
}

const ROSETTE_P1: f64 = 161.803_398_874_989_5;
const ROSETTE_P2: f64 = 7071.067_811_865_476;

/// Unit beam directions fired during `frame`.
pub fn beam_directions(pattern: &ScanPattern, frame: usize) -> Vec<Vector3<f64>> {
    match *pattern {
        ScanPattern::Spinning {
            rings,
            res_deg,
            az_min_deg,
            az_max_deg,
        } => {
            let res = res_deg.to_radians();
            let i0 = (az_min_deg.to_radians() / res).floor() as i64;
            let i1 = (az_max_deg.to_radians() / res).ceil() as i64;
            let half = rings as i64 / 2;
            let mut out = Vec::with_capacity(rings * (i1 - i0).max(0) as usize);
            for j in -half..rings as i64 - half {
                let el = (j as f64 + 0.5) * res;
                for i in i0..i1 {
                    out.push(direction((i as f64 + 0.5) * res, el));
                }
            }
            out
        }
        ScanPattern::SolidState {
            rows,
            cols,
            res_deg,
            az_center_deg,
            el_center_deg,
        } => {
            let res = res_deg.to_radians();
            let iu = (az_center_deg.to_radians() / res).floor() as i64 - cols as i64 / 2;
            let iv = (el_center_deg.to_radians() / res).floor() as i64 - rows as i64 / 2;
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows as i64 {
                for c in 0..cols as i64 {
                    out.push(direction((iu + c) as f64 * res + 0.5 * res, (iv + r) as f64 * res + 0.5 * res));
                }
            }
            out
        }
        ScanPattern::NonRepetitive {
            points_per_frame,
            fov_deg,
            az_center_deg,
            el_center_deg,
        } => {
            let half = fov_deg.to_radians() / 2.0;
            let (az0, el0) = (az_center_deg.to_radians(), el_center_deg.to_radians());
            (0..points_per_frame)
                .map(|i| {
                    let n = (frame * points_per_frame + i) as f64;
                    let rho = half * (2.0 * PI * n / ROSETTE_P1).sin();
                    let phi = 2.0 * PI * n / ROSETTE_P2;
                    direction(az0 + rho * phi.cos(), el0 + rho * phi.sin())
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    cos_incidence: f64,
    label: PointLabel,
}

fn hit_sphere(d: &Vector3<f64>, s: &SphereParams) -> Option<Hit> {
    let c = s.center.coords;
    let b = d.dot(&c);
    let disc = b * b - (c.norm_squared() - s.radius * s.radius);
    if disc < 0.0 {
        return None;
    }
    let t = b - disc.sqrt();
    (t > 0.0).then(|| {
        let n = (d * t - c) / s.radius;
        Hit {
            t,
            cos_incidence: -d.dot(&n),
            label: PointLabel::Sphere,
        }
    })
}

fn ground_normal(g: &GroundSpec) -> Vector3<f64> {
    rotation_about(Vector3::y(), g.tilt_deg) * Vector3::z()
}

fn hit_ground(d: &Vector3<f64>, g: &GroundSpec) -> Option<Hit> {
    let n = ground_normal(g);
    let denom = n.dot(d);
    if denom >= -1e-12 {
        return None;
    }
    // Plane through (0, 0, -height).
    let t = -g.height * n.z / denom;
    (t > 0.0).then_some(Hit {
        t,
        cos_incidence: -denom,
        label: PointLabel::Ground,
    })
}

fn hit_box(d: &Vector3<f64>, b: &BoxSpec) -> Option<Hit> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if 0.0 < b.min[a] || 0.0 > b.max[a] {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((b.min[a]) / d[a], (b.max[a]) / d[a]);
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > t_near {
            t_near = lo;
            axis = a;
        }
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 0.0).then(|| Hit {
        t: t_near,
        cos_incidence: d[axis].abs(),
        label: PointLabel::Clutter,
    })
}

fn cast(d: &Vector3<f64>, spec: &SceneSpec) -> Option<Hit> {
    let mut best: Option<Hit> = hit_sphere(d, &spec.sphere);
    let mut consider = |h: Option<Hit>| {
        if let Some(h) = h {
            if best.is_none_or(|b| h.t < b.t) {
                best = Some(h);
            }
        }
    };
    if let Some(g) = &spec.ground {
        consider(hit_ground(d, g));
    }
    for b in &spec.boxes {
        consider(hit_box(d, b));
    }
    best.filter(|h| h.t <= spec.max_range)
}

/// Ray-casts every frame of the scan pattern. Returns are perturbed along the
/// beam by `N(0, σ(θ)²)`; spurious returns are added at `clutter_rate`.
pub fn generate_scan(spec: &SceneSpec) -> Result<PointCloud, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5CA7_7E55);
    let fixed = !matches!(spec.scan, ScanPattern::NonRepetitive { .. });
    let mut cached: Option<(Vec<Vector3<f64>>, Vec<Option<Hit>>)> = None;
    let mut cloud = PointCloud {
        points: Vec::new(),
        frames: Some(Vec::new()),
        labels: Some(Vec::new()),
    };
    let mut sphere_hits = 0usize;
    for frame in 0..spec.frames {
        if !fixed || cached.is_none() {
            let dirs = beam_directions(&spec.scan, frame);
            let hits = dirs.iter().map(|d| cast(d, spec)).collect();
            cached = Some((dirs, hits));
        }
        let (dirs, hits) = cached.as_ref().expect("filled above");
        let mut returns = 0usize;
        for (d, hit) in dirs.iter().zip(hits) {
            let Some(h) = hit else { continue };
            let sigma = incidence_sigma(&spec.noise, h.cos_incidence);
            let z: f64 = StandardNormal.sample(&mut rng);
            cloud.points.push(Point3::from(d * (h.t + sigma * z)));
            cloud.frames.as_mut().unwrap().push(frame as u32);
            cloud.labels.as_mut().unwrap().push(h.label);
            returns += 1;
            if h.label == PointLabel::Sphere {
                sphere_hits += 1;
            }
        }
        let spurious = (spec.noise.clutter_rate * returns as f64).round() as usize;
        for _ in 0..spurious {
            if dirs.is_empty() {
                break;
            }
            let d = dirs[rng.random_range(0..dirs.len())];
            let t = rng.random_range(0.3..spec.max_range.max(0.31));
            cloud.points.push(Point3::from(d * t));
            cloud.frames.as_mut().unwrap().push(frame as u32);
            cloud.labels.as_mut().unwrap().push(PointLabel::Spurious);
        }
    }
    if sphere_hits == 0 {
        return Err(SimError::SphereNotVisible);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn sigma_law() {
        let n = NoiseModel {
            sigma0: 0.003,
            incidence_gain: 2.0,
            sigma_max: 0.05,
            clutter_rate: 0.0,
            mask_jitter_px: 0.0,
        };
        assert!((incidence_sigma(&n, 1.0) - 0.003).abs() < 1e-15);
        let c45 = 1.0 / SQRT_2;
        assert!((incidence_sigma(&n, c45) - 0.009).abs() < 1e-12);
        assert_eq!(incidence_sigma(&n, 1e-6), 0.05);
    }

    #[test]
    fn box_hit_from_outside() {
        let b = BoxSpec {
            min: [2.0, -0.5, -0.5],
            max: [3.0, 0.5, 0.5],
        };
        let h = hit_box(&Vector3::x(), &b).unwrap();
        assert!((h.t - 2.0).abs() < 1e-15);
        assert!((h.cos_incidence - 1.0).abs() < 1e-15);
        assert!(hit_box(&Vector3::y(), &b).is_none());
        assert!(hit_box(&-Vector3::x(), &b).is_none());
    }

    #[test]
    fn ground_hit_distance() {
        let g = GroundSpec {
            height: 1.0,
            tilt_deg: 0.0,
        };
        let d = direction(0.0, -(45f64.to_radians()));
        let h = hit_ground(&d, &g).unwrap();
        assert!((h.t - SQRT_2).abs() < 1e-12);
        assert!(hit_ground(&direction(0.0, 0.1), &g).is_none());
    }
}
