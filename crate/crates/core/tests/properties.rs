use mei3d::chamfer::{chamfer_with_grad, nearest_brute_force, nearest_grid, NeighborSearch};
use mei3d::deformation::{deform, RbfField};
use mei3d::mesh::{build_topology, make_sphere, parse_obj, write_obj, Mesh};
use mei3d::optim::{AdamConfig, AdamState, TraceRecord};
use mei3d::regularizers::{arap_loss, area_loss, edge_loss, laplacian_loss, ReferenceGeometry};
use mei3d::render::{image_to_gray8, normalize_image, render, Image, NormalizationSpec, Scene, Window};
use mei3d::response::{phase_distance_degrees, ComplexCell, GaborFilter, ResponseModel, SimpleCell};
use mei3d::sweeps::{dome_position, rotate_mesh, tertile_labels, Tertile};
use mei3d::Vec3;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn jittered_sphere(noise: Vec<Vec3>) -> Mesh {
    let s = make_sphere(1, 1.0).unwrap();
    let v = s.vertices().iter().zip(noise.iter().cycle()).map(|(p, n)| p + n).collect();
    s.with_vertices(v).unwrap()
}

fn non_constant_image() -> impl Strategy<Value = Image> {
    (2usize..12, 2usize..12)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(-50.0..50.0f64, w * h)))
        .prop_filter("needs spread", |(_, _, d)| {
            let (lo, hi) = d.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            hi - lo > 1e-3
        })
        .prop_map(|(w, h, d)| Image::new(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_norm_is_exact(img in non_constant_image(), mean in -2.0..2.0f64, std in 0.1..3.0f64) {
        let spec = NormalizationSpec { target_mean: mean, target_std: std, target_norm: 25.0 };
        let out = normalize_image(&img, &spec).unwrap();
        prop_assert!((out.norm() - 25.0).abs() <= 1e-9);
    }

    #[test]
    fn normalization_is_idempotent(img in non_constant_image()) {
        let spec = NormalizationSpec::default();
        let once = normalize_image(&img, &spec).unwrap();
        let twice = normalize_image(&once, &spec).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_offsets_are_identity(scales in prop::collection::vec(-3.0..1.0f64, 42)) {
        let base = make_sphere(1, 1.0).unwrap();
        let field = RbfField::new(base.vertices().to_vec(), vec![Vec3::zeros(); 42], scales).unwrap();
        let out = deform(&base, &field).unwrap();
        prop_assert_eq!(out.vertices(), base.vertices());
    }

    #[test]
    fn deformation_commutes_with_translation(
        offsets in prop::collection::vec(vec3(0.3), 12),
        t in vec3(5.0),
    ) {
        let base = make_sphere(0, 1.0).unwrap();
        let field = RbfField::new(base.vertices().to_vec(), offsets.clone(), vec![-0.5; 12]).unwrap();
        let moved = base.with_vertices(base.vertices().iter().map(|v| v + t).collect()).unwrap();
        let moved_field = RbfField::new(moved.vertices().to_vec(), offsets, vec![-0.5; 12]).unwrap();
        let a = deform(&base, &field).unwrap();
        let b = deform(&moved, &moved_field).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            prop_assert!((p + t - q).norm() <= 1e-12);
        }
    }

    #[test]
    fn regularizers_ignore_translation(noise in prop::collection::vec(vec3(0.1), 1..20), t in vec3(3.0)) {
        let base = make_sphere(1, 1.0).unwrap();
        let topo = build_topology(&base).unwrap();
        let reference = ReferenceGeometry::new(&base, &topo);
        let m = jittered_sphere(noise);
        let shifted = m.with_vertices(m.vertices().iter().map(|v| v + t).collect()).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(laplacian_loss(&m, &topo).unwrap(), laplacian_loss(&shifted, &topo).unwrap()));
        prop_assert!(close(edge_loss(&m, &topo), edge_loss(&shifted, &topo)));
        prop_assert!(close(area_loss(&m), area_loss(&shifted)));
        prop_assert!(close(
            arap_loss(&m, &reference, &topo).unwrap(),
            arap_loss(&shifted, &reference, &topo).unwrap()
        ));
    }

    #[test]
    fn area_loss_ignores_rotation(noise in prop::collection::vec(vec3(0.1), 1..20), az in -180.0..180.0f64, el in -90.0..90.0f64) {
        let m = jittered_sphere(noise);
        let r = rotate_mesh(&m, az, el).unwrap();
        prop_assert!((area_loss(&m) - area_loss(&r)).abs() <= 1e-12);
    }

    #[test]
    fn edge_loss_scales_quadratically(noise in prop::collection::vec(vec3(0.1), 1..20), s in 0.1..10.0f64) {
        let m = jittered_sphere(noise);
        let topo = build_topology(&m).unwrap();
        let scaled = m.with_vertices(m.vertices().iter().map(|v| v * s).collect()).unwrap();
        let (a, b) = (edge_loss(&m, &topo), edge_loss(&scaled, &topo));
        prop_assert!((b - s * s * a).abs() <= 1e-10 * b.max(1e-12));
    }

    #[test]
    fn arap_ignores_scaling_along_edges(s in 0.1..10.0f64) {
        let base = make_sphere(1, 1.0).unwrap();
        let topo = build_topology(&base).unwrap();
        let reference = ReferenceGeometry::new(&base, &topo);
        let scaled = base.with_vertices(base.vertices().iter().map(|v| v * s).collect()).unwrap();
        prop_assert!(arap_loss(&scaled, &reference, &topo).unwrap() <= 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_grid_matches_brute_force(
        a in prop::collection::vec(vec3(2.0), 1..60),
        b in prop::collection::vec(vec3(2.0), 1..60),
    ) {
        let ab = chamfer_with_grad(&a, &b, NeighborSearch::Grid).unwrap().0;
        let ba = chamfer_with_grad(&b, &a, NeighborSearch::Grid).unwrap().0;
        let brute = chamfer_with_grad(&a, &b, NeighborSearch::BruteForce).unwrap().0;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((ab - brute).abs() <= 1e-12);
        let g = nearest_grid(&a, &b);
        let bf = nearest_brute_force(&a, &b);
        for (x, y) in g.iter().zip(&bf) {
            prop_assert!((x.1 - y.1).abs() <= 1e-12);
        }
        prop_assert_eq!(chamfer_with_grad(&a, &a, NeighborSearch::Grid).unwrap().0, 0.0);
    }

    #[test]
    fn tertile_groups_are_balanced(values in prop::collection::vec(-1e3..1e3f64, 0..100)) {
        let labels = tertile_labels(&values);
        let n = values.len() as f64;
        let count = |t| labels.iter().filter(|&&l| l == t).count();
        let (h, m, l) = (count(Tertile::High), count(Tertile::Mid), count(Tertile::Low));
        for c in [h, m, l] {
            prop_assert!((c as f64 - n / 3.0).abs() <= 1.0);
        }
        prop_assert!(h >= m && m >= l);
        let min_high = values.iter().zip(&labels).filter(|(_, &t)| t == Tertile::High).map(|(v, _)| *v).fold(f64::MAX, f64::min);
        let max_low = values.iter().zip(&labels).filter(|(_, &t)| t == Tertile::Low).map(|(v, _)| *v).fold(f64::MIN, f64::max);
        if h > 0 && l > 0 {
            prop_assert!(min_high >= max_low);
        }
    }

    #[test]
    fn trace_rows_round_trip(vals in prop::array::uniform8(any::<f64>().prop_filter("finite", |x| x.is_finite())), step in 0usize..1_000_000) {
        let r = TraceRecord {
            step,
            response: vals[0],
            laplacian: vals[1],
            edge: vals[2],
            area: vals[3],
            arap: vals[4],
            total: vals[5],
            offset_norm: vals[6],
            mean_sigma: vals[7],
        };
        prop_assert_eq!(TraceRecord::from_csv_row(&r.to_csv_row()).unwrap(), r);
    }

    #[test]
    fn obj_round_trip(noise in prop::collection::vec(vec3(0.2), 1..10)) {
        let m = jittered_sphere(noise);
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        let back = parse_obj(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            prop_assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn adam_ignores_non_finite_gradients(g in prop::collection::vec(-5.0..5.0f64, 1..8), bad in 0usize..8) {
        let mut adam = AdamState::new(g.len(), AdamConfig::default()).unwrap();
        let mut x = vec![1.0; g.len()];
        adam.step(&mut x, &g).unwrap();
        let (snapshot, m) = (x.clone(), adam.first_moment().to_vec());
        let mut poisoned = g.clone();
        poisoned[bad % g.len()] = f64::NAN;
        prop_assert!(adam.step(&mut x, &poisoned).is_err());
        prop_assert_eq!(&x, &snapshot);
        prop_assert_eq!(adam.first_moment(), &m[..]);
        prop_assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn gabor_responses_stay_in_unit_interval(img in non_constant_image(), phase in 0.0..6.3f64, theta in 0.0..3.2f64) {
        let spec = NormalizationSpec::default();
        let x = normalize_image(&img, &spec).unwrap();
        let p = GaborFilter { orientation: theta, phase, frequency: 0.2, sigma: 2.0, ..GaborFilter::default() };
        let (w, h) = (x.width(), x.height());
        let simple = SimpleCell::new(p, w, h, 25.0).unwrap();
        let complex = ComplexCell::new(p, w, h, 25.0).unwrap();
        let rs = simple.respond(&x).unwrap();
        let rc = complex.respond(&x).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&rs));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&rc));
        let neg = x.scaled(-1.0);
        prop_assert!((complex.respond(&neg).unwrap() - rc).abs() <= 1e-12);
    }

    #[test]
    fn phase_distance_is_a_circular_metric(a in -720.0..720.0f64, b in -720.0..720.0f64) {
        let d = phase_distance_degrees(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!((d - phase_distance_degrees(b, a)).abs() <= 1e-9);
        prop_assert!(phase_distance_degrees(a, a + 360.0) <= 1e-9);
    }

    #[test]
    fn pose_rotation_is_rigid(az in -180.0..180.0f64, el in -180.0..180.0f64) {
        let m = make_sphere(1, 1.3).unwrap();
        let r = rotate_mesh(&m, az, el).unwrap();
        for v in r.vertices() {
            prop_assert!((v.norm() - 1.3).abs() <= 1e-12);
        }
        let same = rotate_mesh(&m, 0.0, 0.0).unwrap();
        prop_assert_eq!(same.vertices(), m.vertices());
    }

    #[test]
    fn dome_positions_lie_on_upper_hemisphere(r in 0.1..10.0f64, az in 0.0..360.0f64, el in 0.0..=90.0f64) {
        let p = dome_position(r, az, el);
        prop_assert!((p.norm() - r).abs() <= 1e-12 * r);
        prop_assert!(p.z >= -1e-12);
    }

    #[test]
    fn quantized_values_clip_into_range(vals in prop::collection::vec(-2.0..3.0f64, 64)) {
        let img = Image::new(8, 8, vals.clone()).unwrap();
        let bytes = image_to_gray8(&img, Window::Fixed);
        for (b, v) in bytes.iter().zip(&vals) {
            let expect = (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8;
            prop_assert_eq!(*b, expect);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn renders_stay_in_unit_range(noise in prop::collection::vec(vec3(0.15), 1..10), lx in -2.0..2.0f64, ly in -2.0..2.0f64) {
        let m = jittered_sphere(noise);
        let scene = Scene {
            light_position: Vec3::new(lx, ly, 2.6),
            ..Scene::default().with_resolution(24, 24)
        };
        let img = render(&m, &scene).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(render(&m, &scene).unwrap(), img);
    }
}
