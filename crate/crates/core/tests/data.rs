use std::collections::HashSet;
use std::fs;
use std::sync::Arc;

use proptest::prelude::*;
use sfa_core::data::io::{encode_points, parse_points};
use sfa_core::data::partial::{visible_indices, HprConfig};
use sfa_core::data::shapes::{generate_shape_labeled, shape_components, Surface};
use sfa_core::data::{
    fit_point_count, generate_dataset, generate_shape, load_pcn_layout, make_partial, make_sample, read_points, write_dataset, write_points,
    PointFormat, ShapeKind, Split, SynthConfig,
};
use sfa_core::geometry::Point3;
use sfa_core::{PointCloud, SfaError};

fn key(p: &Point3) -> [u64; 3] {
    p.map(f64::to_bits)
}

#[test]
fn sphere_from_above_keeps_the_upper_hemisphere() {
    let sphere = generate_shape(ShapeKind::Sphere, 2048, 3).unwrap();
    let cfg = HprConfig::default();
    for seed in 0..5 {
        let sphere = if seed == 0 { sphere.clone() } else { generate_shape(ShapeKind::Sphere, 2048, seed).unwrap() };
        let vis = visible_indices(&sphere, [0.0, 0.0, 1.0], &cfg).unwrap();
        let min_z = vis.iter().map(|&i| sphere.get(i)[2]).fold(f64::INFINITY, f64::min);
        assert!(min_z >= -0.1, "seed {seed}: visible point at z = {min_z}");
        let removed = 1.0 - vis.len() as f64 / sphere.len() as f64;
        assert!(removed >= 0.4, "seed {seed}: only {removed:.3} removed");
    }
}

#[test]
fn antipodal_views_cover_convex_shapes() {
    let cfg = HprConfig::default();
    for (kind, seed) in [(ShapeKind::Sphere, 1), (ShapeKind::Box, 2), (ShapeKind::Cylinder, 3)] {
        let shape = generate_shape(kind, 2048, seed).unwrap();
        let shape = shape.transformed(&shape.unit_sphere_transform());
        // general-position views: a face parallel to the view direction is seen from neither side
        for view in [[0.48, 0.6, 0.64], [-0.7, 0.2, 0.685], [0.3, 0.4, -0.866]] {
            let back = view.map(|v: f64| -v);
            let a: HashSet<usize> = visible_indices(&shape, view, &cfg).unwrap().into_iter().collect();
            let b: HashSet<usize> = visible_indices(&shape, back, &cfg).unwrap().into_iter().collect();
            let covered = a.union(&b).count() as f64 / shape.len() as f64;
            assert!(covered >= 0.95, "{kind} view {view:?}: {covered:.3}");
        }
    }
}

fn rect_area(u: Point3, v: Point3) -> f64 {
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

#[test]
fn table_component_shares_follow_area() {
    let n = 20_000;
    for seed in [4, 9] {
        let comps = shape_components(ShapeKind::Table, seed);
        assert_eq!(comps.len(), 5);
        let areas: Vec<f64> = comps
            .iter()
            .map(|c| {
                c.surfaces
                    .iter()
                    .map(|s| match *s {
                        Surface::Rect { u, v, .. } => rect_area(u, v),
                        _ => panic!("table parts are slabs"),
                    })
                    .sum()
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let (_, labels) = generate_shape_labeled(ShapeKind::Table, n, seed).unwrap();
        for (c, a) in areas.iter().enumerate() {
            let p = a / total;
            let count = labels.iter().filter(|&&l| l == c).count() as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() <= 3.0 * sigma, "component {c}: {count} vs {}", n as f64 * p);
        }
    }
}

#[test]
fn partial_is_a_subset_of_fixed_size() {
    let cfg = SynthConfig {
        train: 5,
        val: 0,
        test: 0,
        n_points: 256,
        m_points: 512,
        ..SynthConfig::default()
    };
    for i in 0..5 {
        let s = make_sample(&cfg, i).unwrap();
        let support: HashSet<[u64; 3]> = s.complete.points().iter().map(key).collect();
        for p in &s.partials {
            assert_eq!(p.len(), 256);
            assert!(p.points().iter().all(|q| support.contains(&key(q))));
        }
    }
    // more points requested than are visible: resampled with replacement
    let sphere = generate_shape(ShapeKind::Sphere, 128, 1).unwrap();
    let p = make_partial(&sphere, [1.0, 0.0, 0.0], 200, 7, &HprConfig::default()).unwrap();
    assert_eq!(p.len(), 200);
    assert_eq!(fit_point_count(&sphere, 64, 0).unwrap().len(), 64);
}

#[test]
fn normalization_is_idempotent() {
    for kind in ShapeKind::ALL {
        let c = generate_shape(kind, 512, 11).unwrap();
        let once = c.transformed(&c.unit_sphere_transform());
        let twice = once.transformed(&once.unit_sphere_transform());
        assert!(once.max_norm() <= 1.0 + 1e-6);
        for (a, b) in once.points().iter().zip(twice.points()) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() <= 1e-7);
            }
        }
    }
}

#[test]
fn generation_is_deterministic_and_dataset_round_trips() {
    let cfg = SynthConfig {
        train: 3,
        val: 1,
        test: 2,
        n_points: 64,
        m_points: 256,
        ..SynthConfig::default()
    };
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &a, PointFormat::Ascii).unwrap();
    assert_eq!(manifest.entries.len(), 6);
    let loaded = load_pcn_layout(dir.path(), Split::Train).unwrap().load_all().unwrap();
    assert_eq!(loaded.len(), 3 * cfg.views);
    for (pair, sample) in loaded.chunks(cfg.views).zip(&a.train) {
        assert_eq!(*pair[0].complete, sample.complete);
        assert_eq!(pair[1].partial, sample.partials[1]);
    }
}

#[test]
fn seven_partials_share_one_complete() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let complete = generate_shape(ShapeKind::Chair, 256, 1).unwrap();
    write_points(&root.join("train/complete/chair/m1.xyz"), &complete, PointFormat::Ascii).unwrap();
    for k in 0..7 {
        let p = make_partial(&complete, [1.0, k as f64, 0.5], 64, k, &HprConfig::default()).unwrap();
        write_points(&root.join(format!("train/partial/chair/m1.{k}.xyz")), &p, PointFormat::Ascii).unwrap();
    }
    let ds = load_pcn_layout(root, Split::Train).unwrap();
    assert_eq!(ds.len(), 7);
    assert_eq!(ds.manifest.entries.len(), 1);
    assert_eq!(ds.manifest.entries[0].partials.len(), 7);
    assert!(ds.missing.is_empty());
    let pairs = ds.load_all().unwrap();
    assert!(pairs.windows(2).all(|w| Arc::ptr_eq(&w[0].complete, &w[1].complete)));
    assert_eq!(pairs.iter().map(|p| p.partial.len()).collect::<Vec<_>>(), vec![64; 7]);
}

#[test]
fn empty_root_and_missing_partners() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_pcn_layout(dir.path(), Split::Test).unwrap();
    assert!(ds.is_empty());
    assert!(ds.manifest.entries.is_empty());

    let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
    write_points(&dir.path().join("test/partial/box/a.0.xyz"), &cloud, PointFormat::Ascii).unwrap();
    write_points(&dir.path().join("test/complete/box/b.xyz"), &cloud, PointFormat::Ascii).unwrap();
    let ds = load_pcn_layout(dir.path(), Split::Test).unwrap();
    assert!(ds.is_empty());
    assert_eq!(ds.missing.len(), 2);

    assert!(matches!(load_pcn_layout(&dir.path().join("absent"), Split::Test), Err(SfaError::Io { .. })));
}

#[test]
fn malformed_partial_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train/partial/box/m.0.xyz");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(&path, "# header\n0 0 0\n1 2\n").unwrap();
    match read_points(&path) {
        Err(SfaError::Parse { path: p, line, offset, .. }) => {
            assert_eq!(p, path);
            assert_eq!(line, Some(3));
            assert_eq!(offset, 15);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn coords() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ascii_round_trip_is_exact(pts in coords()) {
        let cloud = PointCloud::new(pts).unwrap();
        let bytes = encode_points(&cloud, PointFormat::Ascii);
        let back = parse_points(std::path::Path::new("mem.xyz"), &bytes).unwrap();
        prop_assert_eq!(back, cloud.points().to_vec());
    }

    #[test]
    fn partial_size_is_always_n(seed in 0u64..1000, n in 64usize..400, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let complete = generate_shape(ShapeKind::Cylinder, 256, seed).unwrap();
        let p = make_partial(&complete, [vx, vy, 0.3], n, seed, &HprConfig::default()).unwrap();
        prop_assert_eq!(p.len(), n);
    }
}
