//! Hierarchical multi-level feature extraction.
//!
//! Each level subsamples the previous level's points with FPS, groups them by
//! ball query, runs a shared point-wise stack over `[relative xyz / radius,
//! previous features]` and max-pools each group. Level features are then
//! interpolated back onto all `N` input points and linearly projected to
//! `C_m` channels. The global feature is a max over the last level, projected
//! to `C_m` and repeated for every point.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Result, SfaError};
use crate::geometry::{ball_query, farthest_point_sample, three_nn_weights, NeighborIndex, PointCloud};
use crate::nn::{Activation, Linear, Mlp, ParamSet};

/// Reference radii for five levels.
pub const DEFAULT_RADII: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub n_levels: usize,
    pub points_per_level: Vec<usize>,
    pub radii: Vec<f64>,
    pub c_m: usize,
    pub unit_mlp_widths: Vec<Vec<usize>>,
    /// Ball-query group size.
    pub max_samples: usize,
}

impl ExtractorConfig {
    /// Default schedule for `n_points` inputs and `n_levels` levels.
    ///
    /// 2048 points with five levels uses `[2048, 1024, 512, 256, 64]`; every
    /// other size halves per level (256 -> `[256, 128, 64, 32, 16]`).
    pub fn for_points(n_points: usize, n_levels: usize) -> Self {
        let points_per_level = if n_points == 2048 && n_levels == 5 {
            vec![2048, 1024, 512, 256, 64]
        } else {
            (0..n_levels).map(|i| (n_points >> i).max(1)).collect()
        };
        let radii = (0..n_levels)
            .map(|i| match DEFAULT_RADII.get(i) {
                Some(&r) => r,
                None => DEFAULT_RADII[4] * 2f64.powi((i - 4) as i32),
            })
            .collect();
        ExtractorConfig {
            n_levels,
            points_per_level,
            radii,
            c_m: 64,
            unit_mlp_widths: vec![vec![32, 32, 64]; n_levels],
            max_samples: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_levels;
        if n == 0 {
            return Err(SfaError::Config("feature extraction needs at least one level".into()));
        }
        if self.points_per_level.len() != n || self.radii.len() != n || self.unit_mlp_widths.len() != n {
            return Err(SfaError::Config(format!(
                "points_per_level, radii and unit_mlp_widths must each have n_levels = {n} entries"
            )));
        }
        if self.points_per_level.windows(2).any(|w| w[1] > w[0]) || self.points_per_level.contains(&0) {
            return Err(SfaError::Config("points_per_level must be positive and nonincreasing".into()));
        }
        if self.radii.iter().any(|&r| !(r > 0.0)) || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SfaError::Config("radii must be positive and strictly increasing".into()));
        }
        if self.c_m == 0 {
            return Err(SfaError::Config("C_m must be at least 1".into()));
        }
        if self.unit_mlp_widths.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return Err(SfaError::Config("every level needs a nonempty stack of positive widths".into()));
        }
        if self.max_samples == 0 {
            return Err(SfaError::Config("max_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learned weights of the extractor.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub cfg: ExtractorConfig,
    pub units: Vec<Mlp>,
    pub projections: Vec<Linear>,
    pub global_projection: Linear,
}

/// Per-level intermediate results before interpolation.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    /// Indices of this level's centers into the previous level's points.
    pub center_idx: Vec<usize>,
    pub centers: PointCloud,
    pub groups: NeighborIndex,
    /// Pooled features, one row per center.
    pub pooled: Var,
}

#[derive(Clone, Debug)]
pub struct MultiLevelFeatures {
    /// `f_1 .. f_n`, each `N x C_m`.
    pub level_features: Vec<Var>,
    /// `N x C_m`, every row identical.
    pub global_feature: Var,
    pub origin: PointCloud,
    pub levels: Vec<LevelOutput>,
}

pub(crate) fn cloud_to_mat(c: &PointCloud) -> Mat {
    Array2::from_shape_fn((c.len(), 3), |(i, d)| c.points()[i][d] as f32)
}

impl FeatureExtractor {
    pub fn new(params: &mut ParamSet, cfg: &ExtractorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut units = Vec::new();
        let mut projections = Vec::new();
        let mut in_width = 3;
        for (i, widths) in cfg.unit_mlp_widths.iter().enumerate() {
            let unit = Mlp::new(params, &format!("extract.level{i}.unit"), 3 + in_width, widths, Activation::Relu, rng);
            let out = unit.output_width(3 + in_width);
            projections.push(Linear::new(
                params,
                &format!("extract.level{i}.project"),
                out,
                cfg.c_m,
                Activation::Identity,
                rng,
            ));
            units.push(unit);
            in_width = out;
        }
        let global_projection = Linear::new(params, "extract.global", in_width, cfg.c_m, Activation::Identity, rng);
        Ok(FeatureExtractor {
            cfg: cfg.clone(),
            units,
            projections,
            global_projection,
        })
    }

    /// Runs all levels on `partial`; `fps_start` seeds the first subsampling.
    pub fn extract(&self, tape: &mut Tape, partial: &PointCloud, fps_start: usize) -> Result<MultiLevelFeatures> {
        let cfg = &self.cfg;
        let n = partial.len();
        if n != cfg.points_per_level[0] {
            return Err(SfaError::Size(format!(
                "extractor expects {} input points, got {n}",
                cfg.points_per_level[0]
            )));
        }
        let mut prev_points = partial.clone();
        let mut prev_feat = tape.constant(cloud_to_mat(partial));
        let mut level_features = Vec::with_capacity(cfg.n_levels);
        let mut levels = Vec::with_capacity(cfg.n_levels);
        for level in 0..cfg.n_levels {
            let start = if level == 0 { fps_start } else { 0 };
            let center_idx = farthest_point_sample(&prev_points, cfg.points_per_level[level], start)?;
            let centers = prev_points.select(&center_idx)?;
            let radius = cfg.radii[level];
            let groups = ball_query(&centers, &prev_points, radius, cfg.max_samples)?;

            let k = groups.k;
            let mut rel = Mat::zeros((groups.indices.len(), 3));
            for (row, &src) in groups.indices.iter().enumerate() {
                let c = centers.get(row / k);
                let p = prev_points.get(src);
                for d in 0..3 {
                    rel[[row, d]] = ((p[d] - c[d]) / radius) as f32;
                }
            }
            let rel = tape.constant(rel);
            let grouped = tape.gather_rows(prev_feat, groups.indices.clone());
            let input = tape.concat_cols(&[rel, grouped]);
            let hidden = self.units[level].forward(tape, input);
            let pooled = tape.group_max(hidden, k);

            let w = three_nn_weights(partial, &centers)?;
            let interp = tape.interpolate(pooled, w.k, w.indices, w.weights.iter().map(|&v| v as f32).collect());
            level_features.push(self.projections[level].forward(tape, interp));

            prev_points = centers.clone();
            prev_feat = pooled;
            levels.push(LevelOutput {
                center_idx,
                centers,
                groups,
                pooled,
            });
        }
        let rows = tape.shape(prev_feat).0;
        let pooled = tape.group_max(prev_feat, rows);
        let global = self.global_projection.forward(tape, pooled);
        let global_feature = tape.broadcast_row(global, n);
        Ok(MultiLevelFeatures {
            level_features,
            global_feature,
            origin: partial.clone(),
            levels,
        })
    }
}
