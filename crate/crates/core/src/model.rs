//! The full completion network: extraction, aggregation, expansion,
//! reconstruction and refinement wired together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{aggregate_glfa, aggregate_plain, aggregate_rfa, aggregated_width, AggregatedFeatures, Strategy, TransformNet, TransformNetConfig};
use crate::autograd::{Mat, Tape};
use crate::error::{Result, SfaError};
use crate::features::{ExtractorConfig, FeatureExtractor, MultiLevelFeatures};
use crate::geometry::{Point3, PointCloud};
use crate::loss::{total_loss_with_grad, LossBreakdown, LossWeights};
use crate::nn::{Activation, Mlp, ParamGrads, ParamSet};
use crate::reconstruction::{CoarseVars, CoordHead, Expander, ExpansionConfig, PartLabel};
use crate::refinement::{fps_subsample, var_cloud, AttentionVars, FpsVars, RefineConfig, Refiner};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_points: usize,
    pub extractor: ExtractorConfig,
    pub strategy: Strategy,
    pub transform: TransformNetConfig,
    /// Residual stack for RFA; the last width must equal `C_m`.
    pub residual_widths: Vec<usize>,
    pub expansion: ExpansionConfig,
    pub refine: RefineConfig,
    /// First FPS index on the input cloud.
    pub fps_start: usize,
}

impl NetworkConfig {
    pub fn new(n_points: usize, n_levels: usize, strategy: Strategy, r: usize, t: usize, u: usize) -> Self {
        let extractor = ExtractorConfig::for_points(n_points, n_levels);
        let c_m = extractor.c_m;
        NetworkConfig {
            n_points,
            extractor,
            strategy,
            transform: TransformNetConfig::default(),
            residual_widths: vec![c_m, c_m],
            expansion: ExpansionConfig::balanced(r),
            refine: RefineConfig::new(t, u),
            fps_start: 0,
        }
    }

    /// Full-size setting: 2048 input points, five levels, `r = 8, t = 2, u = 2`.
    pub fn full(strategy: Strategy) -> Self {
        NetworkConfig::new(2048, 5, strategy, 8, 2, 2)
    }

    /// Desk-scale setting: 256 input points, five levels, `r = 4, t = 1, u = 2`.
    pub fn desk(strategy: Strategy) -> Self {
        NetworkConfig::new(256, 5, strategy, 4, 1, 2)
    }

    pub fn r(&self) -> usize {
        self.expansion.r
    }

    pub fn output_points(&self) -> usize {
        self.expansion.r * self.n_points
    }

    pub fn aggregated_width(&self) -> usize {
        aggregated_width(self.strategy, self.extractor.n_levels, self.extractor.c_m)
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.extractor.points_per_level[0] != self.n_points {
            return Err(SfaError::Config(format!(
                "first level must keep all {} input points, got {}",
                self.n_points, self.extractor.points_per_level[0]
            )));
        }
        if self.strategy == Strategy::Glfa && self.extractor.n_levels < 2 {
            return Err(SfaError::Config("GLFA needs n >= 2 levels".into()));
        }
        if self.strategy == Strategy::Rfa && self.residual_widths.last().is_some_and(|&w| w != self.extractor.c_m) {
            return Err(SfaError::Config("residual stack must end in C_m channels".into()));
        }
        if self.fps_start >= self.n_points {
            return Err(SfaError::Config("fps_start must index an input point".into()));
        }
        self.expansion.validate()?;
        self.refine.validate(self.expansion.r, self.n_points)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::nn::hex_string(&Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub params: ParamSet,
    pub extractor: FeatureExtractor,
    pub transform: Option<TransformNet>,
    pub residual: Option<Mlp>,
    pub expander: Expander,
    pub head: CoordHead,
    pub refiner: Refiner,
}

/// Every intermediate of one forward pass, as tape variables.
pub struct ForwardPass {
    pub features: MultiLevelFeatures,
    pub aggregated: AggregatedFeatures,
    pub coarse: CoarseVars,
    pub fps: FpsVars,
    pub attention: AttentionVars,
    pub y_final: crate::autograd::Var,
}

/// Plain-value completion result.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionOutput {
    pub y_rec: PointCloud,
    pub labels: Vec<PartLabel>,
    /// `Y_rec` after FPS.
    pub y_fps: PointCloud,
    pub y_att: PointCloud,
    pub att_scores: Vec<f64>,
    pub y_final: PointCloud,
}

impl CompletionOutput {
    pub fn part(&self, label: PartLabel) -> Option<PointCloud> {
        let pts: Vec<Point3> = self
            .y_rec
            .points()
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(p, _)| *p)
            .collect();
        PointCloud::new(pts).ok()
    }
}

/// Anything that maps a partial cloud to a completion.
pub trait Completer: Sync {
    fn complete(&self, partial: &PointCloud) -> Result<CompletionOutput>;

    /// Number of input points expected, if fixed.
    fn input_points(&self) -> Option<usize> {
        None
    }
}

fn points_to_mat(points: &[Point3]) -> Mat {
    Mat::from_shape_fn((points.len(), 3), |(i, d)| points[i][d] as f32)
}

impl Network {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let extractor = FeatureExtractor::new(&mut params, &cfg.extractor, &mut rng)?;
        let transform = match cfg.strategy {
            Strategy::Glfa | Strategy::Rfa => Some(TransformNet::new(&mut params, &cfg.transform, &mut rng)),
            Strategy::Nwosfa => None,
        };
        let residual = match cfg.strategy {
            Strategy::Rfa => Some(Mlp::new(
                &mut params,
                "rfa.residual",
                cfg.extractor.c_m,
                &cfg.residual_widths,
                Activation::Relu,
                &mut rng,
            )),
            _ => None,
        };
        let expander = Expander::new(&mut params, &cfg.expansion, cfg.aggregated_width(), &mut rng)?;
        let head = CoordHead::new(&mut params, &cfg.expansion, &mut rng);
        let refiner = Refiner::new(&mut params, &cfg.refine, cfg.expansion.carried_width(), &mut rng);
        Ok(Network {
            cfg: cfg.clone(),
            params,
            extractor,
            transform,
            residual,
            expander,
            head,
            refiner,
        })
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, partial: &PointCloud) -> Result<ForwardPass> {
        if !self.params.all_finite() {
            return Err(SfaError::Numeric("network weights contain non-finite values".into()));
        }
        let features = self.extractor.extract(tape, partial, self.cfg.fps_start)?;
        let aggregated = match (self.cfg.strategy, &self.transform) {
            (Strategy::Glfa, Some(t)) => aggregate_glfa(tape, &features, t)?,
            (Strategy::Rfa, Some(t)) => aggregate_rfa(tape, &features, t, self.residual.as_ref().expect("rfa residual"))?,
            _ => aggregate_plain(tape, &features)?,
        };
        let (expanded, labels) = self.expander.expand(tape, &aggregated)?;
        let coarse = self.head.reconstruct(tape, expanded, labels)?;
        let fps = fps_subsample(tape, coarse.y_rec, coarse.carried, 0)?;
        let keep = self.cfg.refine.t * self.cfg.n_points;
        let attention = self.refiner.attention_select(tape, fps.points, fps.features, keep)?;
        let y_final = self.refiner.local_fold(tape, attention.y_att, attention.features)?;
        Ok(ForwardPass {
            features,
            aggregated,
            coarse,
            fps,
            attention,
            y_final,
        })
    }

    /// Loss on one `(partial, complete)` pair and the gradient of every parameter.
    pub fn loss_and_grads(&self, partial: &PointCloud, gt: &PointCloud, weights: &LossWeights) -> Result<(LossBreakdown, ParamGrads)> {
        let mut tape = Tape::new(&self.params);
        let pass = self.forward(&mut tape, partial)?;
        let y_rec = var_cloud(&tape, pass.coarse.y_rec)?;
        let y_att = var_cloud(&tape, pass.attention.y_att)?;
        let y_final = var_cloud(&tape, pass.y_final)?;
        let (loss, g) = total_loss_with_grad(&y_rec, &y_att, &y_final, gt, weights)?;
        if !loss.total.is_finite() {
            return Err(SfaError::Numeric(format!("non-finite loss {}", loss.total)));
        }
        let grads = tape.backward(vec![
            (pass.coarse.y_rec, points_to_mat(&g.y_rec)),
            (pass.attention.y_att, points_to_mat(&g.y_att)),
            (pass.y_final, points_to_mat(&g.y_final)),
        ]);
        Ok((loss, grads))
    }
}

impl Completer for Network {
    fn complete(&self, partial: &PointCloud) -> Result<CompletionOutput> {
        let mut tape = Tape::new(&self.params);
        let pass = self.forward(&mut tape, partial)?;
        Ok(CompletionOutput {
            y_rec: var_cloud(&tape, pass.coarse.y_rec)?,
            labels: pass.coarse.labels.clone(),
            y_fps: var_cloud(&tape, pass.fps.points)?,
            y_att: var_cloud(&tape, pass.attention.y_att)?,
            att_scores: tape.value(pass.attention.scores).iter().map(|&v| v as f64).collect(),
            y_final: var_cloud(&tape, pass.y_final)?,
        })
    }

    fn input_points(&self) -> Option<usize> {
        Some(self.cfg.n_points)
    }
}
