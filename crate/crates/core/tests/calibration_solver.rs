use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spherecal::geometry::{rotation_geodesic_deg, CameraIntrinsics, RigidTransform};
use spherecal::solver::*;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
}

/// LiDAR-to-camera truth: axis swap plus a few degrees and centimeters.
fn truth() -> RigidTransform {
    let swap = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let perturb = Rotation3::from_euler_angles(0.03, -0.04, 0.05).into_inner();
    RigidTransform::new(perturb * swap, Vector3::new(0.08, -0.12, 0.05)).unwrap()
}

/// Pairs seen at random pixels and depths 2-6 m, with pixel noise `sigma`.
fn synth(n: usize, sigma: f64, t: &RigidTransform, rng: &mut impl Rng) -> Vec<CenterPair> {
    let k = k();
    let inv = t.inverse();
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    (0..n)
        .map(|i| {
            let u = rng.random_range(40.0..600.0);
            let v = rng.random_range(40.0..440.0);
            let z = rng.random_range(2.0..6.0);
            let q = Point3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
            let mut cam = Point2::new(u, v);
            if sigma > 0.0 {
                cam += Vector2::new(noise.sample(rng), noise.sample(rng));
            }
            CenterPair::new(format!("s{i:02}"), inv.apply(&q), cam)
        })
        .collect()
}

fn errs(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    ((a.translation - b.translation).norm(), rotation_geodesic_deg(&a.rotation, &b.rotation))
}

fn perturbed(t: &RigidTransform, deg: f64, m: f64, rng: &mut impl Rng) -> RigidTransform {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    RigidTransform {
        rotation: Rotation3::new(axis * deg.to_radians()).into_inner() * t.rotation,
        translation: t.translation + dir * m,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn init_recovers_pose_from_eight_noise_free_pairs() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = synth(8, 0.0, &truth(), &mut rng);
        let init = solve_pnp_init(&pairs, &k()).unwrap();
        let (dt, dr) = errs(&init, &truth());
        assert!(dt < 1e-3 && dr < 0.1, "seed {seed}: {dt} m {dr}°");
    }
}

#[test]
fn init_rejects_collinear_points() {
    let t = truth();
    let pairs: Vec<_> = (0..8)
        .map(|i| {
            let q = Point3::new(0.1 * i as f64 - 0.4, 0.05 * i as f64, 2.0 + 0.3 * i as f64);
            let cam = Point2::new(600.0 * q.x / q.z + 320.0, 600.0 * q.y / q.z + 240.0);
            CenterPair::new(format!("{i}"), t.inverse().apply(&q), cam)
        })
        .collect();
    assert_eq!(solve_pnp_init(&pairs, &k()), Err(SolverError::DegenerateConfiguration));
}

#[test]
fn init_from_six_noisy_pairs_is_initialization_grade() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pairs = synth(6, 1.0, &truth(), &mut rng);
        let init = solve_pnp_init(&pairs, &k()).unwrap();
        let (dt, dr) = errs(&init, &truth());
        assert!(dt.is_finite() && dt <= 0.1 && dr <= 5.0, "seed {seed}: {dt} m {dr}°");
    }
}

#[test]
fn lm_from_perturbed_init_reaches_truth() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let pairs = synth(10, 0.0, &truth(), &mut rng);
        let init = perturbed(&truth(), 5.0, 0.1, &mut rng);
        let res = solve_pnp_lm(&pairs, &k(), &init, cfg.robust_kernel(), &cfg).unwrap();
        assert!(res.converged, "seed {seed}: {:?}", res.termination);
        let (dt, dr) = errs(&res.transform, &truth());
        assert!(dt < 1e-9 && dr < 1e-8, "seed {seed}: {dt:e} m {dr:e}°");
    }
}

#[test]
fn rms_with_one_pixel_noise_is_on_the_noise_scale() {
    let cfg = SolverConfig::default();
    let rms: Vec<f64> = (0..100)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
            let pairs = synth(10, 1.0, &truth(), &mut rng);
            let res = solve_pnp_lm(&pairs, &k(), &truth(), cfg.robust_kernel(), &cfg).unwrap();
            res.rms_reprojection
        })
        .collect();
    let m = mean(&rms);
    assert!((0.5..=1.5).contains(&m), "mean rms {m}");
}

/// Mean translation error with one 50 px outlier over the mean without, per
/// kernel, over the same 100 noisy data sets.
fn outlier_degradation(kernel: RobustKernel) -> f64 {
    let cfg = SolverConfig::default();
    let (mut clean, mut dirty) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let mut pairs = synth(10, 1.0, &truth(), &mut rng);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let init = solve_pnp_init(&pairs, &k()).unwrap();
        let res = solve_pnp_lm(&pairs, &k(), &init, kernel, &cfg).unwrap();
        clean.push(errs(&res.transform, &truth()).0);
        pairs[0].p_cam += Vector2::new(a.cos(), a.sin()) * 50.0;
        let init = solve_pnp_init(&pairs, &k()).unwrap();
        let res = solve_pnp_lm(&pairs, &k(), &init, kernel, &cfg).unwrap();
        dirty.push(errs(&res.transform, &truth()).0);
    }
    mean(&dirty) / mean(&clean)
}

#[test]
fn huber_bounds_outlier_damage_that_quadratic_does_not() {
    let huber = outlier_degradation(RobustKernel::Huber(2.0));
    let quadratic = outlier_degradation(RobustKernel::Quadratic);
    assert!(huber <= 2.0, "huber {huber}");
    assert!(quadratic >= 5.0, "quadratic {quadratic}");
}

#[test]
fn rejection_is_a_fixed_point_without_outliers() {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = synth(10, 0.5, &truth(), &mut rng);
    let res = solve_pnp_lm(&pairs, &k(), &truth(), cfg.robust_kernel(), &cfg).unwrap();
    let again = reject_and_resolve(&res, &pairs, &k(), 5.0, &cfg).unwrap();
    assert_eq!(again, res);
}

#[test]
fn planted_false_detections_are_rejected_exactly() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let mut pairs = synth(10, 0.5, &truth(), &mut rng);
        for i in [3, 7] {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            pairs[i].p_cam += Vector2::new(a.cos(), a.sin()) * 40.0;
        }
        let res = calibrate(&pairs, &k(), &cfg).unwrap();
        let mut ids = res.rejected_ids.clone();
        ids.sort();
        assert_eq!(ids, vec!["s03".to_string(), "s07".to_string()], "seed {seed}");
        for r in &res.per_pair_residual {
            if !ids.contains(&r.scene_id) {
                assert!(r.residual_px <= 5.0);
            }
        }
        let kept: Vec<f64> = res.per_pair_residual.iter().filter(|r| !ids.contains(&r.scene_id)).map(|r| r.residual_px).collect();
        let rms = (kept.iter().map(|r| r * r).sum::<f64>() / kept.len() as f64).sqrt();
        assert!((rms - res.rms_reprojection).abs() < 1e-12);
    }
}

#[test]
fn everything_outlying_leaves_too_few_pairs() {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs = synth(10, 1.0, &truth(), &mut rng);
    let res = solve_pnp_lm(&pairs, &k(), &truth(), cfg.robust_kernel(), &cfg).unwrap();
    let err = reject_and_resolve(&res, &pairs, &k(), 0.0, &cfg).unwrap_err();
    assert_eq!(err, SolverError::TooFewPairs { got: 0, need: 4 });
}

#[test]
fn survivors_respect_the_threshold_after_resolve() {
    let cfg = SolverConfig::default();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(8000 + seed);
        let mut pairs = synth(14, 1.5, &truth(), &mut rng);
        for i in 0..rng.random_range(0..4) {
            pairs[i].p_cam += Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        }
        let Ok(res) = calibrate(&pairs, &k(), &cfg) else { continue };
        for r in &res.per_pair_residual {
            if !res.rejected_ids.contains(&r.scene_id) {
                assert!(r.residual_px <= cfg.reject_thresh_px, "seed {seed}");
            }
        }
    }
}

#[test]
fn truth_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs = synth(10, 1.0, &truth(), &mut rng);
    let cfg = SolverConfig::default();
    let mut res = solve_pnp_lm(&pairs, &k(), &truth(), cfg.robust_kernel(), &cfg).unwrap();
    res.transform = truth();
    let e = evaluate_against_truth(&res, &truth());
    assert_eq!((e.trans_err_m, e.rot_err_deg), (0.0, 0.0));
    assert_eq!(e.rms_px, res.rms_reprojection);

    res.transform.translation += Vector3::new(0.03, 0.0, 0.0);
    assert!((evaluate_against_truth(&res, &truth()).trans_err_m - 0.03).abs() < 1e-15);

    // Best reported configuration: 0.018 m, 0.157°, 1.873 px.
    let dir = Vector3::new(1.0, -2.0, 2.0).normalize();
    res.transform = RigidTransform {
        rotation: Rotation3::new(Vector3::new(0.3, 0.4, -0.5).normalize() * 0.157f64.to_radians()).into_inner()
            * truth().rotation,
        translation: truth().translation + dir * 0.018,
    };
    res.rms_reprojection = 1.873;
    let e = evaluate_against_truth(&res, &truth());
    assert!((e.trans_err_m - 0.018).abs() < 1e-12);
    assert!((e.rot_err_deg - 0.157).abs() < 1e-9);
    assert_eq!(e.rms_px, 1.873);
}

#[test]
fn analytic_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let kk = k();
    let mut checked = 0;
    while checked < 100 {
        let t = perturbed(&truth(), rng.random_range(0.0..30.0), rng.random_range(0.0..0.5), &mut rng);
        let pair = synth(1, 2.0, &truth(), &mut rng).remove(0);
        let Some((_, j)) = reprojection_jacobian(&t, &pair, &kk) else { continue };
        let h = 1e-6;
        let mut fd = nalgebra::SMatrix::<f64, 2, 6>::zeros();
        for i in 0..6 {
            let mut e = nalgebra::Vector6::zeros();
            e[i] = h;
            let shift = |d: nalgebra::Vector6<f64>| RigidTransform {
                rotation: Rotation3::new(d.fixed_rows::<3>(0).into_owned()).into_inner() * t.rotation,
                translation: t.translation + d.fixed_rows::<3>(3).into_owned(),
            };
            let rp = reprojection_residual(&shift(e), &pair, &kk).unwrap();
            let rm = reprojection_residual(&shift(-e), &pair, &kk).unwrap();
            fd.set_column(i, &((rp - rm) / (2.0 * h)));
        }
        let rel = (j - fd).norm() / j.norm();
        assert!(rel < 1e-5, "relative error {rel:e}");
        checked += 1;
    }
}

#[test]
fn robust_cost_never_increases() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + seed);
        let mut pairs = synth(12, 1.0, &truth(), &mut rng);
        pairs[0].p_cam += Vector2::new(60.0, -20.0);
        let init = perturbed(&truth(), 8.0, 0.2, &mut rng);
        for kernel in [RobustKernel::Huber(2.0), RobustKernel::Cauchy(2.0), RobustKernel::Quadratic] {
            let res = solve_pnp_lm(&pairs, &k(), &init, kernel, &cfg).unwrap();
            assert!(res.cost_history.len() >= 2);
            assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]), "seed {seed} {kernel:?}");
        }
    }
}

#[test]
fn solution_is_equivariant_to_lidar_frame_changes() {
    let cfg = SolverConfig::default();
    let s = RigidTransform::from_axis_angle(Vector3::new(0.4, -0.9, 1.3), Vector3::new(5.0, -3.0, 0.7));
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(12_000 + seed);
        let pairs = synth(10, 0.0, &truth(), &mut rng);
        let moved: Vec<_> = pairs
            .iter()
            .map(|p| CenterPair::new(p.scene_id.clone(), s.apply(&p.p_lidar), p.p_cam))
            .collect();
        let a = calibrate(&pairs, &k(), &cfg).unwrap();
        let b = calibrate(&moved, &k(), &cfg).unwrap();
        let diff = (b.transform.compose(&s).to_matrix4() - a.transform.to_matrix4()).amax();
        assert!(diff < 1e-6, "seed {seed}: {diff:e}");
    }
}

#[test]
fn six_noise_free_pairs_recover_the_pose_exactly() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(13_000 + seed);
        let pairs = synth(6, 0.0, &truth(), &mut rng);
        let res = calibrate(&pairs, &k(), &cfg).unwrap();
        let diff = (res.transform.to_matrix4() - truth().to_matrix4()).amax();
        assert!(diff < 1e-8, "seed {seed}: {diff:e}");
    }
}

#[test]
fn repeated_solves_are_bit_identical() {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut pairs = synth(12, 1.0, &truth(), &mut rng);
    pairs[4].p_cam += Vector2::new(35.0, 10.0);
    let a = calibrate(&pairs, &k(), &cfg).unwrap();
    let b = calibrate(&pairs, &k(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.transform.to_row_major(), b.transform.to_row_major());
}

#[test]
fn pairs_file_and_report_round_trip() {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let pairs = synth(8, 0.5, &truth(), &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.json");
    save_pairs(&pairs, &path).unwrap();
    assert_eq!(load_pairs(&path).unwrap(), pairs);

    let res = calibrate(&pairs, &k(), &cfg).unwrap();
    let json = serde_json::to_value(&res).unwrap();
    let rows = json["transform"]["matrix"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3], serde_json::json!([0.0, 0.0, 0.0, 1.0]));
    let back: CalibrationResult = serde_json::from_value(json).unwrap();
    assert_eq!(back, res);
    assert!(matches!(load_pairs(&dir.path().join("missing.json")), Err(SolverError::Io(_))));
}
