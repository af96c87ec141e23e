//! Corruption-tolerant ellipse detection on an edge-point set: interior
//! exclusion, angular-coverage evaluation, and region-balanced rectification.

use std::f64::consts::TAU;

use nalgebra::Point2;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::geometry::Ellipse;

use super::{fit_ellipse_direct, fit_ellipse_geometric, CameraConfig, CameraError, EdgePointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    ValidIntact,
    ValidCorrupted,
    Invalid,
}

/// Ellipse plus the indices (into the edge set) of its boundary inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseDetection {
    pub ellipse: Ellipse,
    pub inliers: Vec<usize>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDetection {
    pub ellipse: Ellipse,
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngleHistogram {
    pub bin_counts: Vec<usize>,
}

impl AngleHistogram {
    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn total(&self) -> usize {
        self.bin_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    ValidIntact,
    /// Maximal circular runs of well-populated bins, each a list of bin indices.
    NeedsRectification { regions: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedEllipse {
    pub histogram: AngleHistogram,
    /// Bin index of each inlier, parallel to the inlier list.
    pub inlier_bins: Vec<usize>,
    pub evaluation: Evaluation,
}

fn boundary_stats(e: &Ellipse, pts: &[Point2<f64>], idx: impl Iterator<Item = usize>, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut support = Vec::new();
    let mut interior = Vec::new();
    for i in idx {
        let d = e.signed_distance(&pts[i]);
        if d < -tol {
            interior.push(i);
        } else if d <= tol {
            support.push(i);
        }
    }
    (support, interior)
}

/// Indices of `all` lying within `tol` of the boundary.
pub fn boundary_inliers(e: &Ellipse, points: &[Point2<f64>], tol: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| e.signed_distance(&points[i]).abs() <= tol)
        .collect()
}

/// Weight of an edge point outside a candidate relative to one on it.
/// Corruption only removes pixels, so the true outline has no edge points
/// outside it, while fits hugging a cut or a polygon side leave some.
const OUTSIDE_PENALTY: f64 = 20.0;

/// Share of boundary support that must lie within half the tolerance.
/// Curved outlines concentrate there; circles fitted to polygon sides spread
/// across the whole band.
const MIN_TIGHT_FRAC: f64 = 0.6;

/// Alternates boundary support selection among `pts` and an orthogonal
/// distance refit on it.
fn polish(e: Ellipse, pts: &[Point2<f64>], tol: f64) -> Ellipse {
    let mut e = e;
    for _ in 0..3 {
        let support: Vec<_> = pts.iter().filter(|p| e.signed_distance(p).abs() <= tol).copied().collect();
        match fit_ellipse_geometric(&e, &support) {
            Ok(refit) if (refit.center - e.center).norm() > 1e-9 || (refit.a - e.a).abs() > 1e-9 => e = refit,
            Ok(refit) => return refit,
            Err(_) => break,
        }
    }
    e
}

fn consensus_score(e: &Ellipse, pts: &[Point2<f64>], active: &[usize], tol: f64) -> f64 {
    let (mut on, mut outside) = (0usize, 0usize);
    for &i in active {
        let d = e.signed_distance(&pts[i]);
        if d > tol {
            outside += 1;
        } else if d.abs() <= 0.5 * tol {
            on += 1;
        }
    }
    on as f64 - OUTSIDE_PENALTY * outside as f64
}

/// Consensus fit over the active set: best of `sample_trials` random draws
/// of `sample_size` points, refit on its inliers while that does not lower
/// the score. The score counts points within half the tolerance, which
/// favors true arcs over fits bent onto straight cuts, and penalizes outside
/// points.
fn consensus_fit(
    pts: &[Point2<f64>],
    active: &[usize],
    cfg: &CameraConfig,
    rng: &mut impl Rng,
) -> Option<Ellipse> {
    let tol = cfg.inlier_tol_px;
    let mut best: Option<(f64, Ellipse)> = None;
    let mut buf = Vec::with_capacity(cfg.sample_size);
    for _ in 0..cfg.sample_trials.max(1) {
        buf.clear();
        buf.extend(sample(rng, active.len(), cfg.sample_size).iter().map(|i| pts[active[i]]));
        let Ok(e) = fit_ellipse_direct(&buf) else { continue };
        if !cfg.plausible(&e) {
            continue;
        }
        let score = consensus_score(&e, pts, active, tol);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, e));
        }
    }
    let (score, e) = best?;
    let active_pts: Vec<_> = active.iter().map(|&i| pts[i]).collect();
    let refit = polish(e, &active_pts, tol);
    if cfg.plausible(&refit) && consensus_score(&refit, pts, active, tol) >= score {
        return Some(refit);
    }
    Some(e)
}

/// Iteratively fits and drops edge points lying inside the fitted ellipse
/// until a fit with (almost) no interior points and adequate boundary support
/// remains. Points from damaged regions lie inside the true outline, so the
/// loop converges onto the intact arc.
pub fn initial_ellipse_detection(
    edges: &EdgePointSet,
    cfg: &CameraConfig,
    rng: &mut impl Rng,
) -> Result<InitialDetection, CameraError> {
    let pts = &edges.points;
    let mut active: Vec<usize> = (0..pts.len()).collect();
    let mut iterations = 0;
    let min_support = cfg.min_inliers.max(cfg.sample_size);
    loop {
        if active.len() < cfg.sample_size.max(5) {
            return Err(CameraError::Exhausted);
        }
        iterations += 1;
        let Some(e) = consensus_fit(pts, &active, cfg, rng) else {
            return Err(CameraError::Exhausted);
        };
        let (support, interior) = boundary_stats(&e, pts, active.iter().copied(), cfg.inlier_tol_px);
        let n = active.len() as f64;
        let supported = support.len() >= min_support && support.len() as f64 >= cfg.min_support_frac * n;
        let outside = n as usize - support.len() - interior.len();
        let enclosing = outside as f64 <= cfg.outside_frac * n;
        if interior.len() as f64 <= cfg.interior_frac * n && supported && enclosing {
            let inliers = boundary_inliers(&e, pts, cfg.inlier_tol_px);
            return Ok(InitialDetection {
                ellipse: e,
                inliers,
                iterations,
            });
        }
        // Drop interior points; a fit with nothing inside but weak support or
        // too many points outside has its own support consumed instead.
        // Either way the set shrinks.
        let drop = if interior.is_empty() { support } else { interior };
        if drop.is_empty() {
            return Err(CameraError::Exhausted);
        }
        let mut keep = vec![true; pts.len()];
        for i in drop {
            keep[i] = false;
        }
        active.retain(|&i| keep[i]);
    }
}

/// Angular histogram of inliers over the ellipse's parametric angle.
pub fn angle_histogram(e: &Ellipse, points: &[Point2<f64>], bins: usize) -> (AngleHistogram, Vec<usize>) {
    let mut counts = vec![0; bins];
    let idx: Vec<usize> = points
        .iter()
        .map(|p| {
            let t = e.closest_param(p);
            ((t / TAU * bins as f64) as usize).min(bins - 1)
        })
        .collect();
    for &b in &idx {
        counts[b] += 1;
    }
    (AngleHistogram { bin_counts: counts }, idx)
}

/// Maximal circular runs of bins with `count ≥ threshold`.
pub fn concentration_regions(hist: &AngleHistogram, threshold: f64) -> Vec<Vec<usize>> {
    let b = hist.bins();
    let full: Vec<bool> = hist.bin_counts.iter().map(|&c| c as f64 >= threshold).collect();
    if full.iter().all(|&f| f) {
        return vec![(0..b).collect()];
    }
    // Start scanning just after an empty bin so no run wraps the origin.
    let start = full.iter().position(|&f| !f).unwrap();
    let mut regions = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for k in 1..=b {
        let i = (start + k) % b;
        if full[i] {
            run.push(i);
        } else if !run.is_empty() {
            regions.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        regions.push(run);
    }
    regions
}

/// Accepts the ellipse as intact when every angular bin holds at least
/// `min_bin_frac` of the uniform share of inliers.
pub fn evaluate_ellipse(
    ellipse: &Ellipse,
    inlier_points: &[Point2<f64>],
    cfg: &CameraConfig,
) -> Result<EvaluatedEllipse, CameraError> {
    let bins = cfg.histogram_bins;
    if bins == 0 || inlier_points.len() < bins {
        return Err(CameraError::TooFewInliers(inlier_points.len()));
    }
    let (histogram, inlier_bins) = angle_histogram(ellipse, inlier_points, bins);
    let threshold = cfg.min_bin_frac * inlier_points.len() as f64 / bins as f64;
    let evaluation = if histogram.bin_counts.iter().all(|&c| c as f64 >= threshold) {
        Evaluation::ValidIntact
    } else {
        Evaluation::NeedsRectification {
            regions: concentration_regions(&histogram, threshold),
        }
    };
    Ok(EvaluatedEllipse {
        histogram,
        inlier_bins,
        evaluation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub ellipse: Ellipse,
    pub iterations: usize,
}

/// Re-fits from one random non-inlier edge point plus `region_samples`
/// points from every concentration region. Among fits that leave at most
/// `outside_frac` of all edge points outside and still explain
/// `min_support_frac` of them, keeps the best consensus score; `iterations`
/// is the trial that produced it.
pub fn rectify_ellipse(
    edges: &EdgePointSet,
    initial: &InitialDetection,
    evaluated: &EvaluatedEllipse,
    cfg: &CameraConfig,
    rng: &mut impl Rng,
) -> Result<Rectified, CameraError> {
    let Evaluation::NeedsRectification { regions } = &evaluated.evaluation else {
        return Ok(Rectified {
            ellipse: initial.ellipse,
            iterations: 0,
        });
    };
    let pts = &edges.points;
    let mut is_inlier = vec![false; pts.len()];
    for &i in &initial.inliers {
        is_inlier[i] = true;
    }
    let exterior: Vec<usize> = (0..pts.len()).filter(|&i| !is_inlier[i]).collect();
    if exterior.is_empty() {
        return Err(CameraError::NoExteriorCandidates);
    }
    let region_members: Vec<Vec<usize>> = regions
        .iter()
        .map(|bins| {
            initial
                .inliers
                .iter()
                .zip(&evaluated.inlier_bins)
                .filter(|(_, b)| bins.contains(b))
                .map(|(&i, _)| i)
                .collect::<Vec<_>>()
        })
        .filter(|m: &Vec<usize>| !m.is_empty())
        .collect();
    if region_members.is_empty() {
        return Err(CameraError::Invalid);
    }

    let arc: Vec<Point2<f64>> = region_members.iter().flatten().map(|&i| pts[i]).collect();
    let total = pts.len() as f64;
    let passes = |e: &Ellipse| {
        if !cfg.plausible(e) {
            return false;
        }
        let (mut outside, mut on, mut tight) = (0usize, 0usize, 0usize);
        for p in pts {
            let d = e.signed_distance(p);
            if d > cfg.inlier_tol_px {
                outside += 1;
            } else if d >= -cfg.inlier_tol_px {
                on += 1;
                if d.abs() <= 0.5 * cfg.inlier_tol_px {
                    tight += 1;
                }
            }
        }
        outside as f64 <= cfg.outside_frac * total
            && on as f64 >= cfg.min_support_frac * total
            && tight as f64 >= MIN_TIGHT_FRAC * on as f64
    };

    let all: Vec<usize> = (0..pts.len()).collect();
    let mut best: Option<(f64, Ellipse, usize)> = None;
    let mut sample_pts = Vec::new();
    for it in 1..=cfg.rectify_iters {
        sample_pts.clear();
        sample_pts.push(pts[exterior[rng.random_range(0..exterior.len())]]);
        for members in &region_members {
            let k = cfg.region_samples.min(members.len());
            sample_pts.extend(sample(rng, members.len(), k).iter().map(|j| pts[members[j]]));
        }
        let Ok(e) = fit_ellipse_direct(&sample_pts) else { continue };
        let ellipse = if cfg.rectify_polish && cfg.plausible(&e) {
            polish(e, &arc, cfg.inlier_tol_px)
        } else {
            e
        };
        if !passes(&ellipse) {
            continue;
        }
        let score = consensus_score(&ellipse, pts, &all, cfg.inlier_tol_px);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, ellipse, it));
        }
    }
    best.map(|(_, ellipse, iterations)| Rectified { ellipse, iterations }).ok_or(CameraError::Invalid)
}

/// Full per-mask detection: initial detection, evaluation, and rectification
/// when the inliers do not cover the perimeter.
pub fn detect_ellipse(edges: &EdgePointSet, cfg: &CameraConfig, rng: &mut impl Rng) -> Result<EllipseDetection, CameraError> {
    let initial = initial_ellipse_detection(edges, cfg, rng)?;
    let inlier_points: Vec<_> = initial.inliers.iter().map(|&i| edges.points[i]).collect();
    let evaluated = evaluate_ellipse(&initial.ellipse, &inlier_points, cfg)?;
    match evaluated.evaluation {
        Evaluation::ValidIntact => Ok(EllipseDetection {
            ellipse: initial.ellipse,
            inliers: initial.inliers,
            verdict: Verdict::ValidIntact,
        }),
        Evaluation::NeedsRectification { .. } => {
            let rect = rectify_ellipse(edges, &initial, &evaluated, cfg, rng)?;
            let inliers = boundary_inliers(&rect.ellipse, &edges.points, cfg.inlier_tol_px);
            Ok(EllipseDetection {
                ellipse: rect.ellipse,
                inliers,
                verdict: Verdict::ValidCorrupted,
            })
        }
    }
}
