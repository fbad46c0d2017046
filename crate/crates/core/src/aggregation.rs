//! Separated feature aggregation: builds the known-part and missing-part
//! feature blocks from multi-level features.
//!
//! Column layout is fixed for every strategy: level blocks first, then the
//! three coordinate channels, then the global feature in the trailing `C_m`
//! columns.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Result, SfaError};
use crate::features::{cloud_to_mat, MultiLevelFeatures};
use crate::nn::{Activation, Linear, Mlp, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Low levels for the known part, high levels for the missing part.
    Glfa,
    /// Missing part from residuals `MLP(f_global - f_i)`.
    Rfa,
    /// No separation: both branches get every level.
    Nwosfa,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Glfa => "glfa",
            Strategy::Rfa => "rfa",
            Strategy::Nwosfa => "nwosfa",
        })
    }
}

impl FromStr for Strategy {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "glfa" => Ok(Strategy::Glfa),
            "rfa" => Ok(Strategy::Rfa),
            "nwosfa" => Ok(Strategy::Nwosfa),
            other => Err(SfaError::Config(format!("unknown strategy '{other}' (expected glfa, rfa or nwosfa)"))),
        }
    }
}

/// Number of levels in each GLFA window.
pub fn glfa_window(n_levels: usize) -> usize {
    n_levels / 2 + 1
}

/// Width of both `f_known` and `f_missing`.
pub fn aggregated_width(strategy: Strategy, n_levels: usize, c_m: usize) -> usize {
    let blocks = match strategy {
        Strategy::Glfa => glfa_window(n_levels),
        Strategy::Rfa | Strategy::Nwosfa => n_levels,
    };
    blocks * c_m + 3 + c_m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformNetConfig {
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
}

impl Default for TransformNetConfig {
    fn default() -> Self {
        TransformNetConfig {
            point_widths: vec![64, 128],
            head_widths: vec![64],
        }
    }
}

/// Predicts a 3x3 matrix and an offset from a max-pooled encoding of the
/// input coordinates. Both heads start with zero weights; the matrix head's
/// bias is the flattened identity, so a fresh net is the identity map.
#[derive(Clone, Debug)]
pub struct TransformNet {
    pub point_stack: Mlp,
    pub head: Mlp,
    pub matrix_head: Linear,
    pub offset_head: Linear,
}

impl TransformNet {
    pub fn new(params: &mut ParamSet, cfg: &TransformNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let point_stack = Mlp::new(params, "tnet.point", 3, &cfg.point_widths, Activation::Relu, rng);
        let pooled = point_stack.output_width(3);
        let head = Mlp::new(params, "tnet.head", pooled, &cfg.head_widths, Activation::Relu, rng);
        let feat = head.output_width(pooled);
        let matrix_head = Linear::new(params, "tnet.matrix", feat, 9, Activation::Identity, rng);
        let offset_head = Linear::new(params, "tnet.offset", feat, 3, Activation::Identity, rng);
        params.get_mut(matrix_head.weight).fill(0.0);
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        params
            .get_mut(matrix_head.bias)
            .iter_mut()
            .zip(identity)
            .for_each(|(b, v)| *b = v);
        params.get_mut(offset_head.weight).fill(0.0);
        TransformNet {
            point_stack,
            head,
            matrix_head,
            offset_head,
        }
    }

    /// Returns `(C_missing, M as 1x9, b as 1x3)` for the coordinate block `origin` (N x 3).
    pub fn forward(&self, tape: &mut Tape, origin: Var) -> (Var, Var, Var) {
        let h = self.point_stack.forward(tape, origin);
        let rows = tape.shape(h).0;
        let pooled = tape.group_max(h, rows);
        let feat = self.head.forward(tape, pooled);
        let m = self.matrix_head.forward(tape, feat);
        let b = self.offset_head.forward(tape, feat);
        (tape.point_affine(origin, m, b), m, b)
    }
}

#[derive(Clone, Debug)]
pub struct AggregatedFeatures {
    pub strategy: Strategy,
    pub f_known: Var,
    pub f_missing: Var,
    pub c_origin: Var,
    pub c_missing: Var,
}

fn origin_block(tape: &mut Tape, mlf: &MultiLevelFeatures) -> Var {
    tape.constant(cloud_to_mat(&mlf.origin))
}

pub fn aggregate_glfa(tape: &mut Tape, mlf: &MultiLevelFeatures, tnet: &TransformNet) -> Result<AggregatedFeatures> {
    let n = mlf.level_features.len();
    if n < 2 {
        return Err(SfaError::Config(format!("GLFA needs at least 2 levels, got {n}")));
    }
    let m = glfa_window(n);
    let c_origin = origin_block(tape, mlf);
    let (c_missing, _, _) = tnet.forward(tape, c_origin);
    let g = mlf.global_feature;
    let mut known: Vec<Var> = mlf.level_features[..m].to_vec();
    known.extend([c_origin, g]);
    let mut missing: Vec<Var> = mlf.level_features[n - m..].to_vec();
    missing.extend([c_missing, g]);
    Ok(AggregatedFeatures {
        strategy: Strategy::Glfa,
        f_known: tape.concat_cols(&known),
        f_missing: tape.concat_cols(&missing),
        c_origin,
        c_missing,
    })
}

/// `residual` is the shared stack applied to every `f_global - f_i`.
pub fn aggregate_rfa(
    tape: &mut Tape,
    mlf: &MultiLevelFeatures,
    tnet: &TransformNet,
    residual: &Mlp,
) -> Result<AggregatedFeatures> {
    let n = mlf.level_features.len();
    if n < 1 {
        return Err(SfaError::Config("RFA needs at least one level".into()));
    }
    let c_origin = origin_block(tape, mlf);
    let (c_missing, _, _) = tnet.forward(tape, c_origin);
    let g = mlf.global_feature;
    let mut known = mlf.level_features.clone();
    known.extend([c_origin, g]);
    let mut missing = Vec::with_capacity(n + 2);
    for &f in &mlf.level_features {
        let diff = tape.sub(g, f);
        missing.push(residual.forward(tape, diff));
    }
    missing.extend([c_missing, g]);
    Ok(AggregatedFeatures {
        strategy: Strategy::Rfa,
        f_known: tape.concat_cols(&known),
        f_missing: tape.concat_cols(&missing),
        c_origin,
        c_missing,
    })
}

/// Ablation baseline: `[f_1..f_n, C_origin, f_global]` feeds both branches.
pub fn aggregate_plain(tape: &mut Tape, mlf: &MultiLevelFeatures) -> Result<AggregatedFeatures> {
    let c_origin = origin_block(tape, mlf);
    let mut all = mlf.level_features.clone();
    all.extend([c_origin, mlf.global_feature]);
    let f = tape.concat_cols(&all);
    Ok(AggregatedFeatures {
        strategy: Strategy::Nwosfa,
        f_known: f,
        f_missing: f,
        c_origin,
        c_missing: c_origin,
    })
}

pub(crate) fn mat_to_points(m: &Array2<f32>) -> Vec<[f64; 3]> {
    m.rows()
        .into_iter()
        .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use rand::{Rng, SeedableRng};

    fn fake_mlf(tape: &mut Tape, n_levels: usize, c_m: usize, rows: usize, seed: u64) -> MultiLevelFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level_features = (0..n_levels)
            .map(|_| tape.constant(Array2::from_shape_fn((rows, c_m), |_| rng.random_range(-1.0..1.0))))
            .collect();
        let g: Vec<f32> = (0..c_m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let global_feature = tape.constant(Array2::from_shape_fn((rows, c_m), |(_, c)| g[c]));
        let origin = PointCloud::new(
            (0..rows)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect(),
        )
        .unwrap();
        MultiLevelFeatures {
            level_features,
            global_feature,
            origin,
            levels: Vec::new(),
        }
    }

    #[test]
    fn widths() {
        assert_eq!(glfa_window(5), 3);
        assert_eq!(glfa_window(2), 2);
        assert_eq!(aggregated_width(Strategy::Glfa, 5, 64), 259);
        assert_eq!(aggregated_width(Strategy::Rfa, 5, 64), 387);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("RFA".parse::<Strategy>().unwrap(), Strategy::Rfa);
        assert!(matches!("mixed".parse::<Strategy>(), Err(SfaError::Config(_))));
    }

    #[test]
    fn identity_transform_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::default();
        let tnet = TransformNet::new(&mut ps, &TransformNetConfig::default(), &mut rng);
        let mut tape = Tape::new(&ps);
        let mlf = fake_mlf(&mut tape, 3, 4, 10, 1);
        let agg = aggregate_glfa(&mut tape, &mlf, &tnet).unwrap();
        assert_eq!(tape.value(agg.c_missing), tape.value(agg.c_origin));
    }

    #[test]
    fn forced_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::default();
        let tnet = TransformNet::new(&mut ps, &TransformNetConfig::default(), &mut rng);
        ps.get_mut(tnet.matrix_head.bias)[[0, 0]] = -1.0;
        let mut tape = Tape::new(&ps);
        let mlf = fake_mlf(&mut tape, 2, 4, 6, 2);
        let agg = aggregate_glfa(&mut tape, &mlf, &tnet).unwrap();
        let (o, m) = (tape.value(agg.c_origin), tape.value(agg.c_missing));
        for r in 0..6 {
            assert_eq!(m[[r, 0]], -o[[r, 0]]);
            assert_eq!(m[[r, 1]], o[[r, 1]]);
            assert_eq!(m[[r, 2]], o[[r, 2]]);
        }
    }

    #[test]
    fn glfa_needs_two_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::default();
        let tnet = TransformNet::new(&mut ps, &TransformNetConfig::default(), &mut rng);
        let mut tape = Tape::new(&ps);
        let mlf = fake_mlf(&mut tape, 1, 4, 6, 2);
        assert!(matches!(aggregate_glfa(&mut tape, &mlf, &tnet), Err(SfaError::Config(_))));
    }

    #[test]
    fn glfa_two_levels_windows_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::default();
        let tnet = TransformNet::new(&mut ps, &TransformNetConfig::default(), &mut rng);
        let mut tape = Tape::new(&ps);
        let mlf = fake_mlf(&mut tape, 2, 4, 5, 3);
        let agg = aggregate_glfa(&mut tape, &mlf, &tnet).unwrap();
        let k = tape.value(agg.f_known).to_owned();
        let m = tape.value(agg.f_missing).to_owned();
        assert_eq!(k.ncols(), 2 * 4 + 3 + 4);
        assert_eq!(k.slice(ndarray::s![.., ..8]), m.slice(ndarray::s![.., ..8]));
    }
}
