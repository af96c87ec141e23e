use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};
use proptest::prelude::*;
use spherecal::geometry::*;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(650.0, 610.0, 330.0, 235.0, 640, 480).unwrap()
}

fn transform(rv: [f64; 3], t: [f64; 3]) -> RigidTransform {
    RigidTransform::from_axis_angle(Vector3::from(rv), Vector3::from(t))
}

proptest! {
    /// Every outline point back-projects to a ray tangent to the sphere.
    #[test]
    fn outline_rays_are_tangent(x in -1.5..1.5f64, y in -1.0..1.0f64, z in 1.0..8.0f64, r in 0.05..0.4f64) {
        let s = SphereParams::new(Point3::new(x * z / 3.0, y * z / 3.0, z), r).unwrap();
        let e = sphere_outline_ellipse(&s, &k()).unwrap();
        for p in e.sample_points(24) {
            let d = pixel_ray(&p, &k()).normalize();
            let c = s.center.coords;
            let dist = (c - d * c.dot(&d)).norm();
            prop_assert!((dist - r).abs() < 1e-9 * z, "distance {dist} radius {r}");
        }
    }

    /// Projection of the center lies inside the outline.
    #[test]
    fn projected_center_is_inside_outline(x in -1.0..1.0f64, y in -1.0..1.0f64, z in 1.0..8.0f64) {
        let s = SphereParams::new(Point3::new(x * z / 3.0, y * z / 3.0, z), 0.1).unwrap();
        let e = sphere_outline_ellipse(&s, &k()).unwrap();
        let c = project_point(&s.center, &k()).unwrap();
        prop_assert!(e.signed_distance(&c) < 0.0);
    }

    #[test]
    fn inverse_and_composition(a in prop::array::uniform3(-2.0..2.0f64), ta in prop::array::uniform3(-5.0..5.0f64),
                               b in prop::array::uniform3(-2.0..2.0f64), tb in prop::array::uniform3(-5.0..5.0f64),
                               p in prop::array::uniform3(-10.0..10.0f64)) {
        let (ta_, tb_) = (transform(a, ta), transform(b, tb));
        let p = Point3::from(p);
        let composed = ta_.compose(&tb_).apply(&p);
        prop_assert!((composed - ta_.apply(&tb_.apply(&p))).norm() < 1e-12);
        prop_assert!((ta_.inverse().apply(&ta_.apply(&p)) - p).norm() < 1e-12);
        let rows = ta_.to_row_major();
        prop_assert_eq!(RigidTransform::from_row_major(&rows).unwrap(), ta_);
    }

    #[test]
    fn so3_projection_is_closest_rotation(rv in prop::array::uniform3(-2.0..2.0f64), eps in 0.0..0.05f64) {
        let r = Rotation3::new(Vector3::from(rv)).into_inner();
        let noisy = r + Matrix3::from_fn(|i, j| eps * ((i * 3 + j) as f64 / 8.0 - 0.5));
        let q = project_to_so3(&noisy);
        prop_assert!((q.transpose() * q - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((q.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(rotation_geodesic_deg(&q, &r) < 5.0 * eps.to_degrees() + 1e-9);
    }
}

#[test]
fn outline_of_a_centered_sphere_is_a_circle_in_normalized_units() {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let s = SphereParams::new(Point3::new(0.0, 0.0, 4.0), 0.2).unwrap();
    let e = sphere_outline_ellipse(&s, &k).unwrap();
    let expected = 500.0 * (0.2f64 / (16.0f64 - 0.04).sqrt());
    assert!((e.a - expected).abs() < 1e-9 && (e.b - expected).abs() < 1e-9);
    assert!((e.center - Point2::new(320.0, 240.0)).norm() < 1e-9);
}

#[test]
fn invalid_spheres_are_reported() {
    assert_eq!(SphereParams::new(Point3::origin(), 0.0), Err(GeometryError::NonPositiveRadius));
    let behind = SphereParams::new(Point3::new(0.0, 0.0, -3.0), 0.1).unwrap();
    assert_eq!(sphere_outline_ellipse(&behind, &k()), Err(GeometryError::SphereBehindCamera));
    let around = SphereParams::new(Point3::new(0.0, 0.0, 0.05), 0.1).unwrap();
    assert_eq!(sphere_outline_ellipse(&around, &k()), Err(GeometryError::SphereEnclosesCamera));
    assert!(matches!(project_point(&Point3::new(1.0, 1.0, 0.0), &k()), Err(GeometryError::NonPositiveDepth(_))));
}
