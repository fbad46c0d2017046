//! Training objective and evaluation metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};
use crate::geometry::{chamfer_distance, chamfer_with_grad, one_sided_distance, repulsion_loss, repulsion_with_grad, Point3, PointCloud};

/// How the repulsion double sum enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepulsionScale {
    /// The raw sum over all points and neighbours.
    Sum,
    /// The sum divided by `|S| * K`.
    PerPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub rep_k: usize,
    pub rep_h: f64,
    pub rep_scale: RepulsionScale,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 0.2,
            rep_k: 5,
            rep_h: 0.03,
            rep_scale: RepulsionScale::PerPair,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(SfaError::Config("loss weights alpha and beta must be nonnegative".into()));
        }
        if self.rep_k == 0 || !(self.rep_h > 0.0) {
            return Err(SfaError::Config("repulsion needs K >= 1 and h > 0".into()));
        }
        Ok(())
    }

    fn rep_factor(&self, points: usize) -> f64 {
        match self.rep_scale {
            RepulsionScale::Sum => 1.0,
            RepulsionScale::PerPair => 1.0 / (points * self.rep_k) as f64,
        }
    }
}

/// Value of each term and the weighted total. `rep` is already scaled per [`RepulsionScale`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cd_rec: f64,
    pub cd_att: f64,
    pub cd_final: f64,
    pub rep: f64,
}

/// Gradients of the total loss with respect to the three predicted clouds.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub y_rec: Vec<Point3>,
    pub y_att: Vec<Point3>,
    pub y_final: Vec<Point3>,
}

/// `alpha CD(Y_rec) + CD(Y_att) + CD(Y_final) + beta L_rep(Y_att)`, all against `gt`.
pub fn total_loss(y_rec: &PointCloud, y_att: &PointCloud, y_final: &PointCloud, gt: &PointCloud, w: &LossWeights) -> Result<LossBreakdown> {
    let cd_rec = chamfer_distance(y_rec, gt);
    let cd_att = chamfer_distance(y_att, gt);
    let cd_final = chamfer_distance(y_final, gt);
    let rep = repulsion_loss(y_att, w.rep_k, w.rep_h)? * w.rep_factor(y_att.len());
    Ok(LossBreakdown {
        total: w.alpha * cd_rec + cd_att + cd_final + w.beta * rep,
        cd_rec,
        cd_att,
        cd_final,
        rep,
    })
}

pub fn total_loss_with_grad(
    y_rec: &PointCloud,
    y_att: &PointCloud,
    y_final: &PointCloud,
    gt: &PointCloud,
    w: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    let (cd_rec, mut g_rec, _) = chamfer_with_grad(y_rec, gt);
    let (cd_att, mut g_att, _) = chamfer_with_grad(y_att, gt);
    let (cd_final, g_final, _) = chamfer_with_grad(y_final, gt);
    let (rep, g_rep) = repulsion_with_grad(y_att, w.rep_k, w.rep_h)?;
    let scale = w.rep_factor(y_att.len());
    let rep = rep * scale;
    for g in &mut g_rec {
        g.iter_mut().for_each(|v| *v *= w.alpha);
    }
    for (g, r) in g_att.iter_mut().zip(&g_rep) {
        for c in 0..3 {
            g[c] += w.beta * scale * r[c];
        }
    }
    let breakdown = LossBreakdown {
        total: w.alpha * cd_rec + cd_att + cd_final + w.beta * rep,
        cd_rec,
        cd_att,
        cd_final,
        rep,
    };
    Ok((
        breakdown,
        LossGrads {
            y_rec: g_rec,
            y_att: g_att,
            y_final: g_final,
        },
    ))
}

/// Mean distance from each input point to its nearest output point.
pub fn fidelity_error(input_partial: &PointCloud, output: &PointCloud) -> f64 {
    one_sided_distance(input_partial, output)
}

/// Smallest Chamfer distance from `output` to any reference, with its index (ties to the lowest).
pub fn mmd(output: &PointCloud, references: &[PointCloud]) -> Result<(f64, usize)> {
    if references.is_empty() {
        return Err(SfaError::Domain("minimal matching distance needs at least one reference".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, r) in references.iter().enumerate() {
        let d = chamfer_distance(output, r);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

/// Per-sample evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub category: String,
    pub cd: f64,
    pub fidelity: Option<f64>,
    pub mmd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub count: usize,
    pub cd_x1e4: f64,
    pub fidelity: Option<f64>,
    pub mmd: Option<f64>,
}

/// Per-category means plus the overall mean. The overall row averages every
/// sample, not the category means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub categories: Vec<CategoryRow>,
    pub overall: CategoryRow,
}

pub const OVERALL_LABEL: &str = "average";

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(category: &str, samples: &[&SampleMetrics]) -> CategoryRow {
    let cds: Vec<f64> = samples.iter().map(|s| s.cd).collect();
    let fid: Option<Vec<f64>> = samples.iter().map(|s| s.fidelity).collect();
    let mmd: Option<Vec<f64>> = samples.iter().map(|s| s.mmd).collect();
    CategoryRow {
        category: category.to_string(),
        count: samples.len(),
        cd_x1e4: mean(&cds) * 1e4,
        fidelity: fid.map(|v| mean(&v)),
        mmd: mmd.map(|v| mean(&v)),
    }
}

impl MetricReport {
    pub fn from_samples(samples: &[SampleMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(SfaError::Domain("cannot report on zero samples".into()));
        }
        let mut by_cat: BTreeMap<&str, Vec<&SampleMetrics>> = BTreeMap::new();
        for s in samples {
            by_cat.entry(s.category.as_str()).or_default().push(s);
        }
        let categories = by_cat.iter().map(|(c, v)| summarize(c, v)).collect();
        let all: Vec<&SampleMetrics> = samples.iter().collect();
        Ok(MetricReport {
            categories,
            overall: summarize(OVERALL_LABEL, &all),
        })
    }

    fn has_fidelity(&self) -> bool {
        self.overall.fidelity.is_some()
    }

    fn has_mmd(&self) -> bool {
        self.overall.mmd.is_some()
    }

    /// `category,count,cd_x1e4[,fidelity][,mmd]`, categories sorted by name, overall row last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,cd_x1e4");
        if self.has_fidelity() {
            out.push_str(",fidelity");
        }
        if self.has_mmd() {
            out.push_str(",mmd");
        }
        out.push('\n');
        for row in self.categories.iter().chain(std::iter::once(&self.overall)) {
            let _ = write!(out, "{},{},{:.6}", row.category, row.count, row.cd_x1e4);
            if let Some(f) = row.fidelity {
                let _ = write!(out, ",{f:.6}");
            }
            if let Some(m) = row.mmd {
                let _ = write!(out, ",{m:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Method-by-category table: one column per category plus the average.
    pub fn to_table(&self, method: &str) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.categories.iter().map(|c| c.category.clone()));
        header.push("Average".into());
        let widths: Vec<usize> = header.iter().map(|h| h.len().max(8)).collect();
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let rows_for = |f: &dyn Fn(&CategoryRow) -> Option<f64>, label: &str, digits: usize| -> Option<String> {
            let mut cells = vec![label.to_string()];
            for row in self.categories.iter().chain(std::iter::once(&self.overall)) {
                cells.push(format!("{:.*}", digits, f(row)?));
            }
            Some(line(&cells))
        };
        let mut out = String::new();
        let _ = writeln!(out, "# Chamfer distance x 1e4; Average is the mean over all samples, not over category means");
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        if let Some(r) = rows_for(&|r| Some(r.cd_x1e4), method, 2) {
            let _ = writeln!(out, "{r}");
        }
        if let Some(r) = rows_for(&|r| r.fidelity, "fidelity", 4) {
            let _ = writeln!(out, "{r}");
        }
        if let Some(r) = rows_for(&|r| r.mmd, "mmd", 4) {
            let _ = writeln!(out, "{r}");
        }
        out
    }
}

/// Per-category means of `(category, CD)` pairs.
pub fn category_report(results: &[(String, f64)]) -> Result<MetricReport> {
    let samples: Vec<SampleMetrics> = results
        .iter()
        .map(|(c, cd)| SampleMetrics {
            category: c.clone(),
            cd: *cd,
            fidelity: None,
            mmd: None,
        })
        .collect();
    MetricReport::from_samples(&samples)
}
