//! Refinement of the coarse cloud: FPS down to `(r/2)N`, attention keeps the
//! best-scoring `tN`, and a local folding unit grows each kept point into a
//! `u x u` patch, giving `tN * u^2 = rN` points again.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::mat_to_points;
use crate::autograd::{Mat, Tape, Var};
use crate::error::{Result, SfaError};
use crate::geometry::{farthest_point_sample, fold_grid, PointCloud};
use crate::nn::{Activation, Mlp, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub t: usize,
    pub u: usize,
    pub grid_scale: f64,
    pub attention_widths: Vec<usize>,
    pub folding_widths: Vec<usize>,
}

impl RefineConfig {
    pub fn new(t: usize, u: usize) -> Self {
        RefineConfig {
            t,
            u,
            grid_scale: 0.05,
            attention_widths: vec![64, 32, 1],
            folding_widths: vec![64, 64, 3],
        }
    }

    /// Checks the size chain `rN -> (r/2)N -> tN -> tN u^2 = rN`.
    pub fn validate(&self, r: usize, n: usize) -> Result<()> {
        if self.t * self.u * self.u != r {
            return Err(SfaError::Config(format!(
                "refinement needs t*u^2 = r, got t = {}, u = {}, r = {r} (t*u^2 = {})",
                self.t,
                self.u,
                self.t * self.u * self.u
            )));
        }
        if !(r * n).is_multiple_of(2) {
            return Err(SfaError::Config(format!("rN = {} must be even for the FPS stage", r * n)));
        }
        if self.t * n > r * n / 2 {
            return Err(SfaError::Config(format!(
                "attention keeps tN = {} points but only (r/2)N = {} are available",
                self.t * n,
                r * n / 2
            )));
        }
        if !(self.grid_scale > 0.0) {
            return Err(SfaError::Config("grid_scale must be positive".into()));
        }
        if self.attention_widths.last() != Some(&1) {
            return Err(SfaError::Config("attention stack must end in a single score channel".into()));
        }
        if self.folding_widths.last() != Some(&3) {
            return Err(SfaError::Config("folding stack must end in 3 offset channels".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Refiner {
    pub cfg: RefineConfig,
    pub attention: Mlp,
    pub folding: Mlp,
}

#[derive(Clone, Debug)]
pub struct FpsVars {
    /// Indices into `Y_rec`.
    pub indices: Vec<usize>,
    pub points: Var,
    pub features: Var,
}

#[derive(Clone, Debug)]
pub struct AttentionVars {
    /// Indices into the FPS subset, ascending.
    pub indices: Vec<usize>,
    pub y_att: Var,
    /// Softplus scores of the kept points (`tN x 1`).
    pub scores: Var,
    /// Kept features scaled by their score.
    pub features: Var,
}

pub(crate) fn var_cloud(tape: &Tape, v: Var) -> Result<PointCloud> {
    PointCloud::new(mat_to_points(&tape.value(v).to_owned()))
}

/// FPS over `Y_rec` down to half its size, gathering carried features alongside.
pub fn fps_subsample(tape: &mut Tape, y_rec: Var, carried: Var, start: usize) -> Result<FpsVars> {
    let rows = tape.shape(y_rec).0;
    if !rows.is_multiple_of(2) {
        return Err(SfaError::Config(format!("rN = {rows} must be even for the FPS stage")));
    }
    let cloud = var_cloud(tape, y_rec)?;
    let indices = farthest_point_sample(&cloud, rows / 2, start)?;
    let points = tape.gather_rows(y_rec, indices.clone());
    let features = tape.gather_rows(carried, indices.clone());
    Ok(FpsVars {
        indices,
        points,
        features,
    })
}

/// Indices of the `keep` largest scores, ties to the lower index, returned ascending.
pub fn top_k_indices(scores: &[f32], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

impl Refiner {
    pub fn new(params: &mut ParamSet, cfg: &RefineConfig, feature_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let attention = Mlp::new(params, "refine.attention", feature_width, &cfg.attention_widths, Activation::Softplus, rng);
        let folding = Mlp::new(params, "refine.folding", 2 + feature_width, &cfg.folding_widths, Activation::Identity, rng);
        Refiner {
            cfg: cfg.clone(),
            attention,
            folding,
        }
    }

    /// Scores every row and keeps the best `keep`.
    pub fn attention_select(&self, tape: &mut Tape, points: Var, features: Var, keep: usize) -> Result<AttentionVars> {
        let available = tape.shape(points).0;
        if keep > available {
            return Err(SfaError::Config(format!(
                "attention keeps tN = {keep} points but only {available} are available"
            )));
        }
        let all_scores = self.attention.forward(tape, features);
        let flat: Vec<f32> = tape.value(all_scores).iter().copied().collect();
        let indices = top_k_indices(&flat, keep);
        let y_att = tape.gather_rows(points, indices.clone());
        let scores = tape.gather_rows(all_scores, indices.clone());
        let kept = tape.gather_rows(features, indices.clone());
        let features = tape.row_scale(kept, scores);
        Ok(AttentionVars {
            indices,
            y_att,
            scores,
            features,
        })
    }

    /// Grows each point of `y_att` into `u^2` points: offsets predicted from
    /// `[grid coordinate, point feature]` and added to the point.
    pub fn local_fold(&self, tape: &mut Tape, y_att: Var, features: Var) -> Result<Var> {
        let u = self.cfg.u;
        let grid = fold_grid(u, self.cfg.grid_scale)?;
        let per = grid.len();
        let n = tape.shape(y_att).0;
        let repeat: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, per)).collect();
        let grid_block: Mat = Array2::from_shape_fn((n * per, 2), |(r, c)| grid[r % per][c] as f32);
        let grid_block = tape.constant(grid_block);
        let feats = tape.gather_rows(features, repeat.clone());
        let input = tape.concat_cols(&[grid_block, feats]);
        let offsets = self.folding.forward(tape, input);
        let centers = tape.gather_rows(y_att, repeat);
        Ok(tape.add(offsets, centers))
    }
}
