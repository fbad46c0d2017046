use ndarray::Array2;
use proptest::prelude::*;
use sfa_core::geometry::{
    ball_query, chamfer_distance, farthest_point_sample, fold_grid, repulsion_loss, three_nn_interpolate, three_nn_weights, Point3, INTERP_EPS,
};
use sfa_core::PointCloud;

fn d(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn cloud(p: &[Point3]) -> PointCloud {
    PointCloud::new(p.to_vec()).unwrap()
}

fn pts(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..max)
}

fn sorted_distances(all: &[Point3], i: usize) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = all.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| (d(&all[i], q), j)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chamfer_is_symmetric_and_vanishes_on_itself(a in pts(24), b in pts(24)) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        let ab = chamfer_distance(&ca, &cb);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer_distance(&cb, &ca));
        prop_assert_eq!(chamfer_distance(&ca, &ca), 0.0);
    }

    #[test]
    fn ball_query_matches_scan(points in pts(40), centers in pts(8), radius in 0.05f64..1.5, max_samples in 1usize..12) {
        let (cp, cc) = (cloud(&points), cloud(&centers));
        let idx = ball_query(&cc, &cp, radius, max_samples).unwrap();
        prop_assert_eq!(idx.rows(), centers.len());
        for (row, c) in centers.iter().enumerate() {
            let inside: Vec<usize> = (0..points.len()).filter(|&i| d(c, &points[i]) * d(c, &points[i]) <= radius * radius).collect();
            let group = idx.group(row);
            let valid = idx.group_valid(row);
            let taken = inside.len().min(max_samples);
            prop_assert_eq!(&group[..taken], &inside[..taken]);
            prop_assert!(valid[..taken].iter().all(|&v| v));
            prop_assert!(valid[taken..].iter().all(|&v| !v));
            if !inside.is_empty() {
                let nearest = *inside.iter().min_by(|&&a, &&b| d(c, &points[a]).total_cmp(&d(c, &points[b]))).unwrap();
                prop_assert!(group[taken..].iter().all(|&g| d(c, &points[g]) == d(c, &points[nearest])));
            }
        }
    }

    #[test]
    fn ball_query_on_itself_contains_each_center(points in pts(30), radius in 0.01f64..1.0) {
        let c = cloud(&points);
        let idx = ball_query(&c, &c, radius, points.len()).unwrap();
        for i in 0..points.len() {
            prop_assert!(idx.group(i).contains(&i));
        }
    }

    #[test]
    fn three_nn_matches_oracle(sources in pts(12), targets in pts(12), value in -5.0f64..5.0) {
        let (cs, ct) = (cloud(&sources), cloud(&targets));
        let w = three_nn_weights(&ct, &cs).unwrap();
        prop_assert_eq!(w.k, sources.len().min(3));
        for (t, p) in targets.iter().enumerate() {
            let mut near: Vec<(f64, usize)> = sources.iter().enumerate().map(|(i, s)| (d(p, s), i)).collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let near = &near[..w.k];
            let total: f64 = near.iter().map(|&(dd, _)| 1.0 / (dd + INTERP_EPS)).sum();
            for (s, &(dd, i)) in near.iter().enumerate() {
                prop_assert_eq!(w.indices[t * w.k + s], i);
                let want = 1.0 / (dd + INTERP_EPS) / total;
                prop_assert!((w.weights[t * w.k + s] - want).abs() <= 1e-12);
            }
        }
        let feats = Array2::from_elem((sources.len(), 2), value);
        let out = three_nn_interpolate(&ct, &cs, &feats).unwrap();
        prop_assert!(out.iter().all(|&v| (v - value).abs() <= 1e-12 * value.abs().max(1.0)));
    }

    #[test]
    fn repulsion_matches_brute_force(points in prop::collection::vec(prop::array::uniform3(0.0f64..0.1), 12..13), k in 1usize..6) {
        let h = 0.03;
        let got = repulsion_loss(&cloud(&points), k, h).unwrap();
        let mut want = 0.0;
        for i in 0..points.len() {
            for &(dd, _) in &sorted_distances(&points, i)[..k] {
                want += -dd * (-(dd * dd) / (h * h)).exp();
            }
        }
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-12));
        prop_assert!(got <= 0.0);
    }

    #[test]
    fn fps_ignores_unselected_order(points in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 6..30), k in 1usize..6, seed in any::<u64>()) {
        let c = cloud(&points);
        let picked = farthest_point_sample(&c, k, 0).unwrap();
        let mut rest: Vec<usize> = (1..points.len()).collect();
        let n = rest.len();
        for i in (1..n).rev() {
            rest.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let order: Vec<usize> = std::iter::once(0).chain(rest).collect();
        let permuted = c.select(&order).unwrap();
        let again = farthest_point_sample(&permuted, k, 0).unwrap();
        let a: Vec<Point3> = picked.iter().map(|&i| c.get(i)).collect();
        let b: Vec<Point3> = again.iter().map(|&i| permuted.get(i)).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn twelve_point_repulsion_with_three_neighbours() {
    let points: Vec<Point3> = (0..12).map(|i| [0.01 * i as f64, 0.005 * (i % 3) as f64, 0.0]).collect();
    let (k, h) = (3, 0.03);
    let mut want = 0.0;
    for i in 0..12 {
        for &(dd, _) in &sorted_distances(&points, i)[..k] {
            want += -dd * (-(dd * dd) / (h * h)).exp();
        }
    }
    let got = repulsion_loss(&cloud(&points), k, h).unwrap();
    assert!((got - want).abs() <= 1e-14);
}

#[test]
fn widely_spaced_points_feel_no_repulsion() {
    let h = 0.03;
    let points: Vec<Point3> = (0..27).map(|i| [(i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64].map(|v| v * 10.0 * h)).collect();
    let got = repulsion_loss(&cloud(&points), 5, h).unwrap();
    assert!(got.abs() < 1e-40, "{got}");
}

#[test]
fn three_by_three_grid() {
    let g = fold_grid(3, 0.2).unwrap();
    assert_eq!(g.len(), 9);
    assert_eq!(g[0], [-0.2, -0.2]);
    assert_eq!(g[4], [0.0, 0.0]);
    assert_eq!(g[8], [0.2, 0.2]);
    assert_eq!(g[1], [-0.2, 0.0]);
}
