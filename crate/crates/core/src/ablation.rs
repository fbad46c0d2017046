//! Level-number and known/missing ratio sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Result, SfaError};
use crate::eval::{evaluate, EvalOptions};
use crate::features::ExtractorConfig;
use crate::reconstruction::parse_ratio;
use crate::train::{train, TrainConfig, TrainOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    LevelNumber,
    Ratio,
}

impl FromStr for AblationAxis {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level_number" | "level-number" | "levels" => Ok(AblationAxis::LevelNumber),
            "ratio" => Ok(AblationAxis::Ratio),
            other => Err(SfaError::Config(format!("unknown ablation axis {other:?} (expected level_number or ratio)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub levels: usize,
    pub j: usize,
    pub k: usize,
    pub mean_cd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.axis {
            AblationAxis::LevelNumber => {
                out.push_str("level_number,mean_cd_x1e4\n");
                for r in &self.rows {
                    let _ = writeln!(out, "{},{:.6}", r.levels, r.mean_cd * 1e4);
                }
            }
            AblationAxis::Ratio => {
                out.push_str("ratio,j,k,mean_cd_x1e4\n");
                for r in &self.rows {
                    let _ = writeln!(out, "{}:{},{},{},{:.6}", r.j, r.k, r.j, r.k, r.mean_cd * 1e4);
                }
            }
        }
        out
    }
}

/// One training config per sweep value. Every value is checked before any is returned.
pub fn ablation_variants(axis: AblationAxis, values: &[String], base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    if values.is_empty() {
        return Err(SfaError::Config("ablation needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        match axis {
            AblationAxis::LevelNumber => {
                let n: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| SfaError::Config(format!("level number {v:?} must be a positive integer")))?;
                if n == 0 {
                    return Err(SfaError::Config("level number must be at least 1".into()));
                }
                cfg.network.extractor = ExtractorConfig {
                    max_samples: base.network.extractor.max_samples,
                    ..ExtractorConfig::for_points(cfg.network.n_points, n)
                };
            }
            AblationAxis::Ratio => {
                let (j, k) = parse_ratio(v, cfg.network.expansion.r)?;
                cfg.network.expansion.j = j;
                cfg.network.expansion.k = k;
            }
        }
        cfg.validate().map_err(|e| match e {
            SfaError::Config(msg) => SfaError::Config(format!("ablation value {v:?}: {msg}")),
            other => other,
        })?;
        out.push((v.clone(), cfg));
    }
    Ok(out)
}

/// Trains each variant with the base seed and budget and reports mean test CD.
pub fn ablation_sweep(axis: AblationAxis, values: &[String], base: &TrainConfig, train_pairs: &[Pair], test_pairs: &[Pair]) -> Result<AblationTable> {
    let variants = ablation_variants(axis, values, base)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (value, cfg) in variants {
        let outcome = train(train_pairs, &cfg, &TrainOutput::default())?;
        let result = evaluate(&outcome.checkpoint.network, test_pairs, &EvalOptions::default())?;
        rows.push(AblationRow {
            value,
            levels: cfg.network.extractor.n_levels,
            j: cfg.network.expansion.j,
            k: cfg.network.expansion.k,
            mean_cd: result.report.overall.cd_x1e4 / 1e4,
        });
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Strategy;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ratio_axis_at_desk_scale() {
        let base = TrainConfig::desk(Strategy::Glfa);
        let v = ablation_variants(AblationAxis::Ratio, &strings(&["4:0", "3:1", "2:2", "1:3", "0:4"]), &base).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!((v[1].1.network.expansion.j, v[1].1.network.expansion.k), (3, 1));
        let err = ablation_variants(AblationAxis::Ratio, &strings(&["2:2", "3:2"]), &base).unwrap_err();
        assert!(err.to_string().contains("j + k = r"));
    }

    #[test]
    fn level_axis() {
        let base = TrainConfig::desk(Strategy::Glfa);
        let v = ablation_variants(AblationAxis::LevelNumber, &strings(&["2", "3", "4", "5"]), &base).unwrap();
        let levels: Vec<usize> = v.iter().map(|(_, c)| c.network.extractor.n_levels).collect();
        assert_eq!(levels, vec![2, 3, 4, 5]);
        assert!(matches!(ablation_variants(AblationAxis::LevelNumber, &strings(&["0"]), &base), Err(SfaError::Config(_))));
    }
}
