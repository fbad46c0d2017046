//! Test-set evaluation, reference completers, and the known/missing partition check.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::Pair;
use crate::error::{Result, SfaError};
use crate::geometry::{chamfer_distance, one_sided_distance, PointCloud};
use crate::loss::{fidelity_error, mmd, MetricReport, SampleMetrics};
use crate::model::{Completer, CompletionOutput};
use crate::reconstruction::PartLabel;

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions<'a> {
    pub fidelity: bool,
    /// Reference set for MMD; `None` skips it.
    pub references: Option<&'a [PointCloud]>,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub report: MetricReport,
    pub samples: Vec<SampleMetrics>,
    /// Mean fidelity over all samples, when requested.
    pub mean_fidelity: Option<f64>,
    pub outputs: Vec<CompletionOutput>,
}

/// Runs `model` on every pair and scores `Y_final` against the complete cloud.
pub fn evaluate(model: &dyn Completer, pairs: &[Pair], opts: &EvalOptions) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(SfaError::Domain("evaluation set is empty".into()));
    }
    if let Some(n) = model.input_points() {
        if let Some(p) = pairs.iter().find(|p| p.partial.len() != n) {
            return Err(SfaError::Config(format!(
                "sample {} has {} partial points but the model expects N = {n}",
                p.id,
                p.partial.len()
            )));
        }
    }
    if opts.references.is_some_and(|r| r.is_empty()) {
        return Err(SfaError::Domain("MMD reference set is empty".into()));
    }
    let scored: Vec<Result<(SampleMetrics, CompletionOutput)>> = pairs
        .par_iter()
        .map(|p| {
            let out = model.complete(&p.partial)?;
            let cd = chamfer_distance(&out.y_final, &p.complete);
            let fidelity = opts.fidelity.then(|| fidelity_error(&p.partial, &out.y_final));
            let mmd = match opts.references {
                Some(refs) => Some(mmd(&out.y_final, refs)?.0),
                None => None,
            };
            Ok((
                SampleMetrics {
                    category: p.category.clone(),
                    cd,
                    fidelity,
                    mmd,
                },
                out,
            ))
        })
        .collect();
    let (samples, outputs): (Vec<_>, Vec<_>) = scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let report = MetricReport::from_samples(&samples)?;
    Ok(EvalResult {
        mean_fidelity: report.overall.fidelity,
        report,
        samples,
        outputs,
    })
}

fn cloud_key(c: &PointCloud) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in c.points() {
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn plain_output(y: PointCloud, labels: Vec<PartLabel>, att: PointCloud) -> CompletionOutput {
    let n = att.len();
    CompletionOutput {
        y_rec: y.clone(),
        labels,
        y_fps: att.clone(),
        y_att: att,
        att_scores: vec![1.0; n],
        y_final: y,
    }
}

/// Returns the ground truth of each known partial input.
pub struct OracleCompleter {
    truth: HashMap<[u8; 32], Arc<PointCloud>>,
}

impl OracleCompleter {
    pub fn new(pairs: &[Pair]) -> Self {
        OracleCompleter {
            truth: pairs.iter().map(|p| (cloud_key(&p.partial), Arc::clone(&p.complete))).collect(),
        }
    }
}

impl Completer for OracleCompleter {
    fn complete(&self, partial: &PointCloud) -> Result<CompletionOutput> {
        let gt = self
            .truth
            .get(&cloud_key(partial))
            .ok_or_else(|| SfaError::Domain("oracle has no ground truth for this input".into()))?;
        Ok(plain_output((**gt).clone(), vec![PartLabel::Known; gt.len()], partial.clone()))
    }
}

/// Repeats the partial input `r` times: the no-learning baseline.
pub struct TiledPartial {
    pub r: usize,
}

impl Completer for TiledPartial {
    fn complete(&self, partial: &PointCloud) -> Result<CompletionOutput> {
        if self.r == 0 {
            return Err(SfaError::Config("tiling factor must be at least 1".into()));
        }
        let pts: Vec<_> = (0..self.r).flat_map(|_| partial.points().iter().copied()).collect();
        let n = pts.len();
        Ok(plain_output(PointCloud::new(pts)?, vec![PartLabel::Known; n], partial.clone()))
    }
}

/// One-sided distances from each labeled part of `Y_rec` to the partial input.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionDiagnostic {
    pub known_distance: Option<f64>,
    pub missing_distance: Option<f64>,
    pub known: Option<PointCloud>,
    pub missing: Option<PointCloud>,
}

impl PartitionDiagnostic {
    /// `Some(true)` when the known part sits closer; `None` if either part is absent.
    pub fn known_closer(&self) -> Option<bool> {
        Some(self.known_distance? < self.missing_distance?)
    }
}

pub fn partition_of(output: &CompletionOutput, partial: &PointCloud) -> PartitionDiagnostic {
    let known = output.part(PartLabel::Known);
    let missing = output.part(PartLabel::Missing);
    PartitionDiagnostic {
        known_distance: known.as_ref().map(|k| one_sided_distance(k, partial)),
        missing_distance: missing.as_ref().map(|m| one_sided_distance(m, partial)),
        known,
        missing,
    }
}

pub fn partition_diagnostic(model: &dyn Completer, partial: &PointCloud) -> Result<PartitionDiagnostic> {
    Ok(partition_of(&model.complete(partial)?, partial))
}
