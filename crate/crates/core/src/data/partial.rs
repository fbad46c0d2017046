//! Single-view partial scans via spherical-flip hidden point removal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hull::hull_vertices;
use crate::error::{Result, SfaError};
use crate::geometry::{farthest_point_sample, norm, sub, Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HprConfig {
    /// Camera distance from the centroid, in multiples of the cloud's radius.
    pub camera_distance: f64,
    /// Flip radius in multiples of the cloud's diameter.
    pub radius_factor: f64,
}

impl Default for HprConfig {
    fn default() -> Self {
        HprConfig {
            camera_distance: 20.0,
            radius_factor: 1e3,
        }
    }
}

fn unit(v: Point3) -> Result<Point3> {
    let n = norm(&v);
    if !(n > 1e-12) || !n.is_finite() {
        return Err(SfaError::Domain(format!("viewpoint {v:?} has no direction")));
    }
    Ok(v.map(|c| c / n))
}

/// Indices (ascending) of the points visible from `camera`.
pub fn visible_from(cloud: &PointCloud, camera: Point3, flip_radius: f64) -> Vec<usize> {
    let mut flipped: Vec<Point3> = cloud
        .points()
        .iter()
        .map(|p| {
            let q = sub(p, &camera);
            let d = norm(&q).max(1e-12);
            let s = 1.0 + 2.0 * (flip_radius - d) / d;
            q.map(|c| c * s)
        })
        .collect();
    flipped.push([0.0; 3]);
    let n = cloud.len();
    hull_vertices(&flipped).into_iter().filter(|&i| i < n).collect()
}

/// Indices of the points of `complete` visible from direction `viewpoint`.
pub fn visible_indices(complete: &PointCloud, viewpoint: Point3, cfg: &HprConfig) -> Result<Vec<usize>> {
    let dir = unit(viewpoint)?;
    let center = complete.centroid();
    let radius = complete.points().iter().map(|p| norm(&sub(p, &center))).fold(0.0, f64::max).max(1e-9);
    let camera = [0, 1, 2].map(|d| center[d] + dir[d] * cfg.camera_distance * radius);
    Ok(visible_from(complete, camera, cfg.radius_factor * complete.diameter().max(1e-9)))
}

/// Visible subset of `complete` brought to exactly `n_points`: FPS when too
/// many are visible, resampling with replacement when too few.
pub fn make_partial(complete: &PointCloud, viewpoint: Point3, n_points: usize, seed: u64, cfg: &HprConfig) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(SfaError::Config("partial clouds need at least one point".into()));
    }
    let visible = complete.select(&visible_indices(complete, viewpoint, cfg)?)?;
    fit_point_count(&visible, n_points, seed)
}

/// Brings a cloud to exactly `n_points`: FPS (start 0) when larger, every
/// point plus seeded draws with replacement when smaller.
pub fn fit_point_count(cloud: &PointCloud, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(SfaError::Config("target point count must be at least 1".into()));
    }
    if cloud.len() >= n_points {
        let keep = farthest_point_sample(cloud, n_points, 0)?;
        return cloud.select(&keep);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..cloud.len()).collect();
    idx.extend((cloud.len()..n_points).map(|_| rng.random_range(0..cloud.len())));
    cloud.select(&idx)
}

/// A direction drawn uniformly on the unit sphere.
pub fn random_viewpoint(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let g: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
        if let Ok(v) = unit(g) {
            return v;
        }
    }
}
