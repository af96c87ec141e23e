use std::collections::HashMap;
use std::f64::consts::PI;

use super::rays::az_el;
use super::{LidarError, PointCloud};

/// Half-width of the voting annulus, pixels.
const ANNULUS_PX: f64 = 1.0;
/// Angular sectors used to measure circumference coverage.
const SECTORS: u32 = 32;
/// Candidates checked for a filled interior before giving up.
const MAX_CANDIDATES: usize = 500;
/// Minimum occupied fraction of a candidate's interior.
const MIN_OCCUPIED: f64 = 0.6;
/// Minimum fraction of occupied interior pixels at the front depth.
const MIN_FRONT: f64 = 0.8;
/// Minimum fraction of the ring just outside a candidate that is empty or
/// well behind it.
const MIN_CLEAR: f64 = 0.85;

/// Angular pixel size of the spherical range image, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeImageSpec {
    pub az_res: f64,
    pub el_res: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiParams {
    pub radius_hint: f64,
    pub margin_px: f64,
    pub min_score: f64,
    pub range_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiDetection {
    /// Indices of ROI points in the input cloud, ascending.
    pub indices: Vec<usize>,
    pub center_az: f64,
    pub center_el: f64,
    /// Circle radius in elevation pixels.
    pub radius_px: f64,
    /// Fraction of angular sectors of the circle supported by edge pixels.
    pub score: f64,
    /// Near-surface range used for the depth gate.
    pub front_range: f64,
}

struct RangeImage {
    u0: i64,
    v0: i64,
    w: usize,
    h: usize,
    /// Minimum range per pixel; infinite when empty.
    depth: Vec<f64>,
}

impl RangeImage {
    fn get(&self, u: i64, v: i64) -> f64 {
        let (x, y) = (u - self.u0, v - self.v0);
        if x < 0 || y < 0 || x as usize >= self.w || y as usize >= self.h {
            f64::INFINITY
        } else {
            self.depth[y as usize * self.w + x as usize]
        }
    }
}

/// Fills empty pixels whose four neighbors are occupied at similar depth,
/// so sampling gaps of sparse scan patterns do not become edges.
fn fill_isolated_holes(img: &mut RangeImage, jump: f64) {
    let mut fills = Vec::new();
    for y in 0..img.h as i64 {
        for x in 0..img.w as i64 {
            let (u, v) = (x + img.u0, y + img.v0);
            if img.get(u, v).is_finite() {
                continue;
            }
            let n = [img.get(u + 1, v), img.get(u - 1, v), img.get(u, v + 1), img.get(u, v - 1)];
            let lo = n.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi.is_finite() && hi - lo <= jump {
                fills.push((y as usize * img.w + x as usize, lo));
            }
        }
    }
    for (i, d) in fills {
        img.depth[i] = d;
    }
}

/// True when the disk of radius `k - 1` around `(cu, cv)` is mostly occupied,
/// most occupied pixels lie within `depth_band` of its nearest depth, and the
/// ring between `k + 1.5` and `k + 2.5` is mostly empty or more than `jump`
/// behind that depth.
fn is_isolated_disk(
    img: &RangeImage,
    (cu, cv, k): (i64, i64, i64),
    spec: &RangeImageSpec,
    depth_band: f64,
    jump: f64,
) -> bool {
    let el = (cv as f64 + 0.5) * spec.el_res;
    let sx = spec.az_res * el.cos().max(1e-6) / spec.el_res;
    let kin = (k - 1).max(1) as f64;
    let (ring_lo, ring_hi) = (k as f64 + 1.5, k as f64 + 2.5);
    let reach_u = (ring_hi / sx).ceil() as i64;
    let reach_v = ring_hi.ceil() as i64;
    let mut total = 0usize;
    let mut depths = Vec::new();
    let mut ring = Vec::new();
    for dv in -reach_v..=reach_v {
        for du in -reach_u..=reach_u {
            let d = (du as f64 * sx).hypot(dv as f64);
            let depth = img.get(cu + du, cv + dv);
            if d <= kin {
                total += 1;
                if depth.is_finite() {
                    depths.push(depth);
                }
            } else if d >= ring_lo && d <= ring_hi {
                ring.push(depth);
            }
        }
    }
    if total == 0 || (depths.len() as f64) < MIN_OCCUPIED * total as f64 {
        return false;
    }
    depths.sort_by(f64::total_cmp);
    let front = depths[(depths.len() - 1) * 2 / 100];
    let near = depths.iter().filter(|&&d| d <= front + depth_band).count();
    let clear = ring.iter().filter(|&&d| d > front + jump).count();
    near as f64 >= MIN_FRONT * depths.len() as f64 && clear as f64 >= MIN_CLEAR * ring.len() as f64
}

fn pixel_of(az: f64, el: f64, spec: &RangeImageSpec) -> (i64, i64) {
    ((az / spec.az_res).floor() as i64, (el / spec.el_res).floor() as i64)
}

/// Finds the sphere as the best-supported circle of the expected apparent
/// size in a spherical range image and returns the points inside it.
///
/// Isolated one-pixel holes are filled first. Edge pixels are occupied pixels with an empty 4-neighbor or a neighbor
/// more than `2 r + range_margin` farther away. Each edge pixel at range ρ
/// votes for every center pixel within ±1 px of each apparent radius between
/// `asin(r / (ρ + r))` and `atan(r / ρ)`; a circle's score is the fraction of
/// its angular sectors holding at least one voter. The best-scoring circle
/// whose interior is mostly occupied at a common front depth and whose
/// immediate surroundings are mostly empty or far behind it wins.
pub fn detect_sphere_roi(cloud: &PointCloud, spec: &RangeImageSpec, params: &RoiParams) -> Result<RoiDetection, LidarError> {
    let polar: Vec<Option<(f64, f64, f64)>> = cloud
        .points
        .iter()
        .map(|p| {
            let rho = p.coords.norm();
            (rho > 0.0 && rho.is_finite()).then(|| {
                let (az, el) = az_el(p);
                (az, el, rho)
            })
        })
        .collect();
    let pix: Vec<Option<(i64, i64)>> = polar.iter().map(|o| o.map(|(a, e, _)| pixel_of(a, e, spec))).collect();
    let Some((u0, u1, v0, v1)) = pix.iter().flatten().fold(None, |acc: Option<(i64, i64, i64, i64)>, &(u, v)| {
        Some(match acc {
            None => (u, u, v, v),
            Some((a, b, c, d)) => (a.min(u), b.max(u), c.min(v), d.max(v)),
        })
    }) else {
        return Err(LidarError::TooFewPoints { have: 0, need: 1 });
    };
    let (w, h) = ((u1 - u0 + 1) as usize, (v1 - v0 + 1) as usize);
    let mut img = RangeImage {
        u0,
        v0,
        w,
        h,
        depth: vec![f64::INFINITY; w * h],
    };
    for (p, q) in pix.iter().zip(&polar) {
        if let (Some((u, v)), Some((_, _, rho))) = (p, q) {
            let i = (v - v0) as usize * w + (u - u0) as usize;
            img.depth[i] = img.depth[i].min(*rho);
        }
    }

    let r = params.radius_hint;
    let jump = 2.0 * r + params.range_margin;
    fill_isolated_holes(&mut img, jump);
    let mut acc: HashMap<(i64, i64, i64), u32> = HashMap::new();
    let mut votes = Vec::new();
    for v in v0..=v1 {
        for u in u0..=u1 {
            let rho = img.get(u, v);
            if !rho.is_finite() {
                continue;
            }
            let is_edge = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(du, dv)| img.get(u + du, v + dv) > rho + jump);
            if !is_edge {
                continue;
            }
            let el = (v as f64 + 0.5) * spec.el_res;
            // Azimuth pixel width in elevation-pixel units.
            let sx = spec.az_res * el.cos().max(1e-6) / spec.el_res;
            let a_lo = (r / (rho + r)).asin() / spec.el_res;
            let a_hi = (r / rho).atan() / spec.el_res;
            let k_lo = (a_lo.floor() as i64).max(2);
            let k_hi = a_hi.ceil() as i64;
            votes.clear();
            for k in k_lo..=k_hi {
                let kf = k as f64;
                let reach_v = k + 1;
                let reach_u = ((kf + ANNULUS_PX) / sx).ceil() as i64;
                for dv in -reach_v..=reach_v {
                    for du in -reach_u..=reach_u {
                        let (x, y) = (du as f64 * sx, dv as f64);
                        let d = x.hypot(y);
                        if (d - kf).abs() <= ANNULUS_PX {
                            let t = (y.atan2(x) + PI) / (2.0 * PI) * SECTORS as f64;
                            let sector = (t.floor() as u32).min(SECTORS - 1);
                            votes.push(((u + du, v + dv, k), 1u32 << sector));
                        }
                    }
                }
            }
            for (key, bit) in &votes {
                *acc.entry(*key).or_insert(0) |= bit;
            }
        }
    }
    let mut ranked: Vec<(f64, (i64, i64, i64))> = acc
        .iter()
        .map(|(&key, &bits)| (bits.count_ones() as f64 / SECTORS as f64, key))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let best_score = ranked.first().map_or(0.0, |c| c.0);
    let chosen = ranked
        .iter()
        .take_while(|c| c.0 >= params.min_score)
        .take(MAX_CANDIDATES)
        .find(|(_, key)| is_isolated_disk(&img, *key, spec, r + params.range_margin, jump));
    let Some(&(score, (cu, cv, k))) = chosen else {
        return Err(LidarError::NoCircleFound { best_score });
    };

    let center_az = (cu as f64 + 0.5) * spec.az_res;
    let center_el = (cv as f64 + 0.5) * spec.el_res;
    let cos_c = center_el.cos();
    let px_dist = |(u, v): (i64, i64)| {
        let daz = ((u as f64 + 0.5) * spec.az_res - center_az) * cos_c;
        let del = (v as f64 + 0.5) * spec.el_res - center_el;
        daz.hypot(del) / spec.el_res
    };
    let radius_px = k as f64;
    let mut inner: Vec<f64> = pix
        .iter()
        .zip(&polar)
        .filter_map(|(p, q)| match (p, q) {
            (Some(px), Some((_, _, rho))) if px_dist(*px) <= radius_px => Some(*rho),
            _ => None,
        })
        .collect();
    if inner.is_empty() {
        return Err(LidarError::NoCircleFound { best_score: score });
    }
    inner.sort_by(f64::total_cmp);
    let front_range = inner[(inner.len() - 1) * 2 / 100];
    let (lo, hi) = (front_range - params.range_margin, front_range + r + params.range_margin);
    let indices = (0..cloud.len())
        .filter(|&i| match (pix[i], polar[i]) {
            (Some(px), Some((_, _, rho))) => px_dist(px) <= radius_px + params.margin_px && rho >= lo && rho <= hi,
            _ => false,
        })
        .collect();
    Ok(RoiDetection {
        indices,
        center_az,
        center_el,
        radius_px,
        score,
        front_range,
    })
}
