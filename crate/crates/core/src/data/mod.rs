//! Synthetic dataset generation and the on-disk dataset layout.

mod hull;
pub mod io;
pub mod layout;
pub mod partial;
pub mod shapes;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hull::hull_vertices;
pub use io::{read_points, write_points, PointFormat};
pub use layout::{load_pcn_layout, write_dataset, DatasetManifest, ManifestEntry, MissingPartner, PcnDataset};
pub use partial::{fit_point_count, make_partial, HprConfig};
pub use shapes::{generate_shape, ShapeKind};

use crate::error::{Result, SfaError};
use crate::geometry::{Normalization, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(SfaError::Config(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

/// One shape with its views, all in the frame that maps `complete` into the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    pub category: String,
    pub id: String,
    pub complete: PointCloud,
    pub partials: Vec<PointCloud>,
    pub normalization: Normalization,
}

/// A training or evaluation pair. Views of one shape share the complete cloud.
#[derive(Clone, Debug)]
pub struct Pair {
    pub category: String,
    pub id: String,
    pub partial: PointCloud,
    pub complete: Arc<PointCloud>,
}

impl ShapeSample {
    pub fn pairs(&self) -> Vec<Pair> {
        let complete = Arc::new(self.complete.clone());
        self.partials
            .iter()
            .map(|p| Pair {
                category: self.category.clone(),
                id: self.id.clone(),
                partial: p.clone(),
                complete: Arc::clone(&complete),
            })
            .collect()
    }
}

pub fn pairs_of(samples: &[ShapeSample]) -> Vec<Pair> {
    samples.iter().flat_map(ShapeSample::pairs).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Points per partial view.
    pub n_points: usize,
    /// Points per complete cloud.
    pub m_points: usize,
    pub views: usize,
    pub seed: u64,
    pub kinds: Vec<ShapeKind>,
    pub hpr: HprConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 400,
            val: 50,
            test: 50,
            n_points: 256,
            m_points: 2048,
            views: 2,
            seed: 0,
            kinds: ShapeKind::ALL.to_vec(),
            hpr: HprConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let min = shapes::MIN_SHAPE_POINTS;
        if self.n_points < min || self.m_points < min {
            return Err(SfaError::Config(format!(
                "point counts must be at least {min} (got n = {}, m = {})",
                self.n_points, self.m_points
            )));
        }
        if self.views == 0 {
            return Err(SfaError::Config("need at least one view per shape".into()));
        }
        if self.kinds.is_empty() {
            return Err(SfaError::Config("need at least one shape kind".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Global index of the first sample of `split`; ids are unique across splits.
    fn first_index(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Val => self.train,
            Split::Test => self.train + self.val,
        }
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the `index`-th shape of the synthetic set.
pub fn make_sample(cfg: &SynthConfig, index: usize) -> Result<ShapeSample> {
    let kind = cfg.kinds[index % cfg.kinds.len()];
    let seed = mix_seed(cfg.seed, index as u64);
    let raw = generate_shape(kind, cfg.m_points, seed)?;
    let normalization = raw.unit_sphere_transform();
    let complete = raw.transformed(&normalization);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7669_6577));
    let partials = (0..cfg.views)
        .map(|v| {
            let view = partial::random_viewpoint(&mut rng);
            make_partial(&complete, view, cfg.n_points, mix_seed(seed, v as u64), &cfg.hpr)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapeSample {
        category: kind.to_string(),
        id: format!("m{index:05}"),
        complete,
        partials,
        normalization,
    })
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub cfg: SynthConfig,
    pub train: Vec<ShapeSample>,
    pub val: Vec<ShapeSample>,
    pub test: Vec<ShapeSample>,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> &[ShapeSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let build = |split: Split| -> Result<Vec<ShapeSample>> {
        let start = cfg.first_index(split);
        (start..start + cfg.count(split)).into_par_iter().map(|i| make_sample(cfg, i)).collect()
    };
    Ok(SynthDataset {
        cfg: cfg.clone(),
        train: build(Split::Train)?,
        val: build(Split::Val)?,
        test: build(Split::Test)?,
    })
}
