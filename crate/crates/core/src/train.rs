//! Minibatch Adam training with a step-decayed learning rate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::Strategy;
use crate::checkpoint::Checkpoint;
use crate::data::io::write_bytes;
use crate::data::Pair;
use crate::error::{Result, SfaError};
use crate::loss::{LossBreakdown, LossWeights};
use crate::model::{Network, NetworkConfig};
use crate::nn::{Adam, AdamConfig, ParamGrads};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    /// Stop after this many parameter updates even if epochs remain.
    pub max_iters: Option<u64>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub loss: LossWeights,
    pub network: NetworkConfig,
    /// Iterations (updates completed) at which a parameter snapshot is kept.
    pub snapshots: Vec<u64>,
}

impl TrainConfig {
    pub fn new(network: NetworkConfig) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr0: 7e-4,
            decay_factor: 0.7,
            decay_every: 50_000,
            max_iters: None,
            clip_norm: Some(5.0),
            seed: 0,
            loss: LossWeights::default(),
            network,
            snapshots: Vec::new(),
        }
    }

    /// The desk budget: 2000 updates with the decay rescaled to every 800.
    pub fn desk(strategy: Strategy) -> Self {
        TrainConfig {
            epochs: usize::MAX,
            max_iters: Some(2000),
            decay_every: 800,
            ..TrainConfig::new(NetworkConfig::desk(strategy))
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.network.strategy
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(SfaError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(SfaError::Config(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.batch_size == 0 {
            return Err(SfaError::Config("batch size must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(SfaError::Config("decay_every must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(SfaError::Config("clip norm must be positive".into()));
        }
        self.loss.validate()?;
        self.network.validate()
    }

    pub fn lr_at(&self, iter: u64) -> f64 {
        self.lr0 * self.decay_factor.powi((iter / self.decay_every) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const LOSS_LOG_HEADER: &str = "iter,lr,L_sum,cd_rec,cd_att,cd_final,rep";

pub fn loss_log_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in rows {
        let l = &r.loss;
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.iter, r.lr, l.total, l.cd_rec, l.cd_att, l.cd_final, l.rep);
    }
    out
}

/// Mean of the first and last `window` entries of a series.
pub fn smoothed_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if values.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(values.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}

/// Where training artifacts go. Without an output directory nothing is written.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.sfackpt";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

pub fn snapshot_file(iter: u64) -> String {
    format!("snapshot_{iter:06}.sfackpt")
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Parameter snapshots at the configured iterations, in ascending order.
    pub snapshots: Vec<(u64, Network)>,
}

fn batch_mean(losses: &[LossBreakdown]) -> LossBreakdown {
    let n = losses.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| losses.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        total: sum(|l| l.total),
        cd_rec: sum(|l| l.cd_rec),
        cd_att: sum(|l| l.cd_att),
        cd_final: sum(|l| l.cd_final),
        rep: sum(|l| l.rep),
    }
}

fn write_dump(dir: &Path, batch_id: u64, epoch: usize, ids: &[String], detail: &str) -> Option<PathBuf> {
    let path = dir.join(format!("nonfinite_batch_{batch_id}.json"));
    let dump = serde_json::json!({ "batch": batch_id, "epoch": epoch, "samples": ids, "detail": detail });
    write_bytes(&path, serde_json::to_string_pretty(&dump).ok()?.as_bytes()).ok()?;
    Some(path)
}

/// Trains a freshly initialised network on `pairs`.
pub fn train(pairs: &[Pair], cfg: &TrainConfig, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let network = Network::new(&cfg.network, cfg.seed)?;
    train_from(pairs, cfg, out, network, None, 0)
}

/// Continues training from given weights and optimizer state.
pub fn train_from(
    pairs: &[Pair],
    cfg: &TrainConfig,
    out: &TrainOutput,
    mut network: Network,
    adam: Option<Adam>,
    start_iter: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() && cfg.epochs > 0 && cfg.max_iters != Some(0) {
        return Err(SfaError::Domain("training set is empty".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.partial.len() != cfg.network.n_points) {
        return Err(SfaError::Config(format!(
            "sample {} has {} partial points but the network expects N = {}",
            p.id,
            p.partial.len(),
            cfg.network.n_points
        )));
    }
    let mut adam = adam.unwrap_or_else(|| Adam::new(&network.params, AdamConfig::default()));
    let mut iter = start_iter;
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let mut wanted: Vec<u64> = cfg.snapshots.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let budget_left = |iter: u64| cfg.max_iters.is_none_or(|m| iter < m);
    let save_snapshot = |iter: u64, network: &Network, adam: &Adam, snapshots: &mut Vec<(u64, Network)>| -> Result<()> {
        if wanted.binary_search(&iter).is_ok() && !snapshots.iter().any(|(i, _)| *i == iter) {
            if let Some(dir) = &out.dir {
                let ck = Checkpoint {
                    network: network.clone(),
                    adam: Some(adam.clone()),
                    iteration: iter,
                };
                ck.save(&dir.join(snapshot_file(iter)))?;
            }
            snapshots.push((iter, network.clone()));
        }
        Ok(())
    };
    save_snapshot(iter, &network, &adam, &mut snapshots)?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch = 0;
    while epoch < cfg.epochs && budget_left(iter) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if !budget_left(iter) {
                break;
            }
            let results: Vec<Result<(LossBreakdown, ParamGrads)>> = chunk
                .par_iter()
                .map(|&i| network.loss_and_grads(&pairs[i].partial, &pairs[i].complete, &cfg.loss))
                .collect();
            let ids: Vec<String> = chunk.iter().map(|&i| format!("{}/{}", pairs[i].category, pairs[i].id)).collect();
            let mut losses = Vec::with_capacity(chunk.len());
            let mut total = network.params.zero_grads();
            for r in results {
                match r {
                    Ok((l, g)) => {
                        losses.push(l);
                        total.add_assign(&g);
                    }
                    Err(SfaError::Numeric(msg)) => {
                        let dump = out.dir.as_deref().and_then(|d| write_dump(d, iter, epoch, &ids, &msg));
                        return Err(SfaError::Numeric(format!(
                            "batch {iter} (epoch {epoch}, batch {b}, samples {}): {msg}{}",
                            ids.join(" "),
                            dump.map(|p| format!("; dump written to {}", p.display())).unwrap_or_default()
                        )));
                    }
                    Err(e) => return Err(e),
                }
            }
            total.scale(1.0 / chunk.len() as f32);
            if !total.all_finite() {
                let msg = "non-finite gradient";
                let dump = out.dir.as_deref().and_then(|d| write_dump(d, iter, epoch, &ids, msg));
                return Err(SfaError::Numeric(format!(
                    "batch {iter} (samples {}): {msg}{}",
                    ids.join(" "),
                    dump.map(|p| format!("; dump written to {}", p.display())).unwrap_or_default()
                )));
            }
            if let Some(c) = cfg.clip_norm {
                let norm = total.global_norm();
                if norm > c {
                    total.scale((c / norm) as f32);
                }
            }
            let lr = cfg.lr_at(iter);
            adam.update(&mut network.params, &total, lr);
            log.push(LogRow {
                iter,
                lr,
                loss: batch_mean(&losses),
            });
            iter += 1;
            save_snapshot(iter, &network, &adam, &mut snapshots)?;
        }
        epoch += 1;
        if let Some(dir) = &out.dir {
            let ck = Checkpoint {
                network: network.clone(),
                adam: Some(adam.clone()),
                iteration: iter,
            };
            ck.save(&dir.join(CHECKPOINT_FILE))?;
            write_bytes(&dir.join(LOSS_LOG_FILE), loss_log_csv(&log).as_bytes())?;
        }
    }
    let checkpoint = Checkpoint {
        network,
        adam: Some(adam),
        iteration: iter,
    };
    if let Some(dir) = &out.dir {
        checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
        write_bytes(&dir.join(LOSS_LOG_FILE), loss_log_csv(&log).as_bytes())?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        snapshots,
    })
}
