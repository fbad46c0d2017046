//! `root/{train,val,test}/{complete,partial}/category/model_id[.k].ext` plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::io::{read_points, write_bytes, write_points, PointFormat, POINT_EXTENSIONS};
use super::{Pair, Split, SynthDataset};
use crate::error::{Result, SfaError};
use crate::geometry::PointCloud;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub category: String,
    pub id: String,
    /// Paths relative to the dataset root, `/`-separated.
    pub complete: String,
    pub partials: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: Option<u64>,
    pub n_points: Option<usize>,
    pub m_points: Option<usize>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.id.as_str()).collect()
    }

    /// Number of models per category.
    pub fn categories(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.category.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn pair_count(&self) -> usize {
        self.entries.iter().map(|e| e.partials.len()).sum()
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| SfaError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| SfaError::Parse {
            path,
            offset: byte_offset(&text, e.line(), e.column()),
            line: Some(e.line()),
            msg: e.to_string(),
        })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)) as u64
}

fn rel(split: Split, part: &str, category: &str, file: &str) -> String {
    format!("{split}/{part}/{category}/{file}")
}

/// Writes every cloud of `data` under `root` and the manifest. Returns the manifest.
pub fn write_dataset(root: &Path, data: &SynthDataset, format: PointFormat) -> Result<DatasetManifest> {
    let ext = format.extension();
    let mut entries = Vec::new();
    for split in Split::ALL {
        for s in data.split(split) {
            let complete = rel(split, "complete", &s.category, &format!("{}.{ext}", s.id));
            write_points(&root.join(&complete), &s.complete, format)?;
            let mut partials = Vec::new();
            for (k, p) in s.partials.iter().enumerate() {
                let path = rel(split, "partial", &s.category, &format!("{}.{k}.{ext}", s.id));
                write_points(&root.join(&path), p, format)?;
                partials.push(path);
            }
            entries.push(ManifestEntry {
                split,
                category: s.category.clone(),
                id: s.id.clone(),
                complete,
                partials,
            });
        }
    }
    let manifest = DatasetManifest {
        seed: Some(data.cfg.seed),
        n_points: Some(data.cfg.n_points),
        m_points: Some(data.cfg.m_points),
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_bytes(&root.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}

/// A file whose partner is absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MissingPartner {
    /// A partial view whose model has no complete cloud.
    Complete { partial: PathBuf, expected: PathBuf },
    /// A complete cloud with no partial views.
    Partials { complete: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRef {
    pub category: String,
    pub id: String,
    pub view: Option<usize>,
    pub partial: PathBuf,
    pub complete: PathBuf,
}

/// Lazily loaded view of one split.
#[derive(Clone, Debug)]
pub struct PcnDataset {
    pub root: PathBuf,
    pub split: Split,
    pub manifest: DatasetManifest,
    pub pairs: Vec<PairRef>,
    pub missing: Vec<MissingPartner>,
}

impl PcnDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reads the `i`-th `(partial, complete)` pair from disk.
    pub fn load_pair(&self, i: usize) -> Result<(PointCloud, PointCloud)> {
        let p = &self.pairs[i];
        Ok((read_points(&p.partial)?, read_points(&p.complete)?))
    }

    /// Reads every pair; views of one model share a single complete cloud.
    pub fn load_all(&self) -> Result<Vec<Pair>> {
        let mut cache: BTreeMap<&Path, Arc<PointCloud>> = BTreeMap::new();
        let mut out = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let complete = match cache.get(p.complete.as_path()) {
                Some(c) => Arc::clone(c),
                None => {
                    let c = Arc::new(read_points(&p.complete)?);
                    cache.insert(&p.complete, Arc::clone(&c));
                    c
                }
            };
            out.push(Pair {
                category: p.category.clone(),
                id: p.id.clone(),
                partial: read_points(&p.partial)?,
                complete,
            });
        }
        Ok(out)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| SfaError::io(dir, e))? {
        out.push(e.map_err(|e| SfaError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_point_file(path: &Path) -> bool {
    path.is_file() && path.extension().and_then(|e| e.to_str()).is_some_and(|e| POINT_EXTENSIONS.contains(&e))
}

/// `model.3.xyz` -> `("model", Some(3))`, `model.xyz` -> `("model", None)`.
fn split_stem(path: &Path) -> (String, Option<usize>) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    match stem.rsplit_once('.') {
        Some((id, k)) if k.parse::<usize>().is_ok() => (id.to_string(), k.parse().ok()),
        _ => (stem.to_string(), None),
    }
}

/// Scans one split of a PCN-style directory tree.
pub fn load_pcn_layout(root: &Path, split: Split) -> Result<PcnDataset> {
    if !root.is_dir() {
        return Err(SfaError::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory")));
    }
    let saved = if root.join(MANIFEST_FILE).exists() { Some(DatasetManifest::read(root)?) } else { None };
    let base = root.join(split.as_str());
    let mut completes: BTreeMap<(String, String), PathBuf> = BTreeMap::new();
    for cat_dir in sorted_entries(&base.join("complete"))? {
        let category = cat_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        for f in sorted_entries(&cat_dir)?.into_iter().filter(|f| is_point_file(f)) {
            completes.insert((category.clone(), split_stem(&f).0), f);
        }
    }
    let mut grouped: BTreeMap<(String, String), Vec<(Option<usize>, PathBuf)>> = BTreeMap::new();
    for cat_dir in sorted_entries(&base.join("partial"))? {
        let category = cat_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        for f in sorted_entries(&cat_dir)?.into_iter().filter(|f| is_point_file(f)) {
            let (id, k) = split_stem(&f);
            grouped.entry((category.clone(), id)).or_default().push((k, f));
        }
    }

    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    let mut entries = Vec::new();
    let rel_of = |p: &Path| p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/");
    for ((category, id), mut views) in grouped {
        views.sort();
        let Some(complete) = completes.get(&(category.clone(), id.clone())) else {
            for (_, partial) in views {
                let expected = base.join("complete").join(&category).join(format!("{id}.{{{}}}", POINT_EXTENSIONS.join(",")));
                missing.push(MissingPartner::Complete { partial, expected });
            }
            continue;
        };
        entries.push(ManifestEntry {
            split,
            category: category.clone(),
            id: id.clone(),
            complete: rel_of(complete),
            partials: views.iter().map(|(_, p)| rel_of(p)).collect(),
        });
        for (view, partial) in views {
            pairs.push(PairRef {
                category: category.clone(),
                id: id.clone(),
                view,
                partial,
                complete: complete.clone(),
            });
        }
    }
    let with_partials: std::collections::BTreeSet<(&str, &str)> = entries.iter().map(|e| (e.category.as_str(), e.id.as_str())).collect();
    for ((category, id), path) in &completes {
        if !with_partials.contains(&(category.as_str(), id.as_str())) {
            missing.push(MissingPartner::Partials { complete: path.clone() });
        }
    }
    let manifest = DatasetManifest {
        seed: saved.as_ref().and_then(|m| m.seed),
        n_points: saved.as_ref().and_then(|m| m.n_points),
        m_points: saved.as_ref().and_then(|m| m.m_points),
        entries,
    };
    Ok(PcnDataset {
        root: root.to_path_buf(),
        split,
        manifest,
        pairs,
        missing,
    })
}
