use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sfa_core::ablation::{ablation_sweep, AblationAxis};
use sfa_core::aggregation::Strategy;
use sfa_core::checkpoint::Checkpoint;
use sfa_core::data::io::{encode_points, write_bytes, POINT_EXTENSIONS};
use sfa_core::data::layout::MissingPartner;
use sfa_core::data::{
    fit_point_count, generate_dataset, load_pcn_layout, read_points, write_dataset, write_points, DatasetManifest, Pair, PointFormat,
    Split, SynthConfig,
};
use sfa_core::eval::{evaluate, EvalOptions, OracleCompleter, TiledPartial};
use sfa_core::geometry::Point3;
use sfa_core::model::Completer;
use sfa_core::reconstruction::{parse_ratio, PartLabel};
use sfa_core::train::{train as run_training, TrainConfig, TrainOutput, CHECKPOINT_FILE, LOSS_LOG_FILE};
use sfa_core::{NetworkConfig, Result, SfaError};

use crate::config::{load_section, merge};
use crate::{AblateArgs, CompleteArgs, EvalArgs, GenDataArgs, TrainArgs, TrainOpts};

pub const RUN_CONFIG_FILE: &str = "config.json";

pub fn set_workers() -> Result<()> {
    let Ok(raw) = std::env::var("SFA_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SfaError::Config(format!("SFA_NUM_WORKERS must be a positive integer, got {raw:?}")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn resolve<T: Serialize + serde::de::DeserializeOwned>(flags: &T, config: Option<&Path>, section: &str) -> Result<T> {
    let file = config.map(|p| load_section(p, section)).transpose()?;
    merge(flags, file)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| SfaError::Config(format!("--{flag} is required")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

#[derive(Serialize)]
struct GenDataRun<'a> {
    out: &'a Path,
    format: &'a str,
    synth: &'a SynthConfig,
}

pub fn gen_data(flags: &GenDataArgs, config: Option<&Path>) -> Result<()> {
    let a = resolve(flags, config, "gen_data")?;
    let out = required(&a.out, "out")?;
    let format_name = a.format.clone().unwrap_or_else(|| "ascii".into());
    let format: PointFormat = format_name.parse()?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        train: a.train.unwrap_or(defaults.train),
        val: a.val.unwrap_or(0),
        test: a.test.unwrap_or(defaults.test),
        n_points: a.n.unwrap_or(defaults.n_points),
        m_points: a.m.unwrap_or(defaults.m_points),
        views: a.views.unwrap_or(defaults.views),
        seed: a.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    cfg.validate()?;
    let data = generate_dataset(&cfg)?;
    let manifest = write_dataset(out, &data, format)?;
    write_json(
        &out.join(RUN_CONFIG_FILE),
        &GenDataRun {
            out,
            format: &format_name,
            synth: &cfg,
        },
    )?;
    println!(
        "wrote {} shapes ({} train, {} val, {} test), {} pairs, to {}",
        manifest.entries.len(),
        cfg.train,
        cfg.val,
        cfg.test,
        manifest.pair_count(),
        out.display()
    );
    Ok(())
}

fn load_split(root: &Path, split: Split) -> Result<Vec<Pair>> {
    let ds = load_pcn_layout(root, split)?;
    for m in &ds.missing {
        match m {
            MissingPartner::Complete { partial, expected } => {
                eprintln!("warning: skipping {}: no complete cloud at {}", partial.display(), expected.display())
            }
            MissingPartner::Partials { complete } => eprintln!("warning: {} has no partial views", complete.display()),
        }
    }
    if ds.is_empty() {
        return Err(SfaError::Domain(format!("no {split} pairs under {}", root.display())));
    }
    ds.load_all()
}

fn manifest_points(root: &Path) -> Option<usize> {
    DatasetManifest::read(root).ok().and_then(|m| m.n_points)
}

/// Builds the full training config from flags. `n_points` is the input size to use
/// when no flag or preset fixes it.
fn train_config(o: &TrainOpts, n_points: usize) -> Result<TrainConfig> {
    let strategy: Strategy = o.strategy.as_deref().unwrap_or("glfa").parse()?;
    let preset = o.preset.as_deref().unwrap_or("full");
    let mut cfg = match preset {
        "full" => {
            let n = o.n_points.unwrap_or(n_points);
            TrainConfig::new(NetworkConfig::new(n, o.levels.unwrap_or(5), strategy, o.r.unwrap_or(8), o.t.unwrap_or(2), o.u.unwrap_or(2)))
        }
        "desk" => {
            let mut cfg = TrainConfig::desk(strategy);
            let d = &cfg.network;
            let n = o.n_points.unwrap_or(d.n_points);
            let (r, t, u) = (o.r.unwrap_or(d.r()), o.t.unwrap_or(d.refine.t), o.u.unwrap_or(d.refine.u));
            cfg.network = NetworkConfig::new(n, o.levels.unwrap_or(d.extractor.n_levels), strategy, r, t, u);
            cfg
        }
        other => return Err(SfaError::Config(format!("unknown preset {other:?} (expected full or desk)"))),
    };
    if let Some(ratio) = &o.ratio {
        let (j, k) = parse_ratio(ratio, cfg.network.r())?;
        cfg.network.expansion = cfg.network.expansion.clone().with_ratio(j, k);
    }
    if let Some(iters) = o.iters {
        cfg.max_iters = Some(iters);
        if o.epochs.is_none() {
            cfg.epochs = usize::MAX;
        }
    }
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = o.lr {
        cfg.lr0 = lr;
    }
    if let Some(f) = o.decay_factor {
        cfg.decay_factor = f;
    }
    if let Some(d) = o.decay_every {
        cfg.decay_every = d;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = &o.snapshots {
        cfg.snapshots = s.clone();
    }
    if o.no_clip {
        cfg.clip_norm = None;
    }
    cfg.validate()?;
    cfg.network.validate()?;
    Ok(cfg)
}

/// Resolves the config, checking it against the provisional input size before
/// touching the dataset, then again once the real size is known.
fn prepare_training(o: &TrainOpts) -> Result<(TrainConfig, PathBuf, PathBuf)> {
    let guess = o.data.as_deref().and_then(manifest_points).unwrap_or(256);
    let mut cfg = train_config(o, guess)?;
    let data = required(&o.data, "data")?.clone();
    let out = required(&o.out, "out")?.clone();
    if !data.is_dir() {
        return Err(SfaError::io(&data, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    if o.n_points.is_none() && o.preset.as_deref() != Some("desk") && manifest_points(&data).is_none() {
        let first = load_pcn_layout(&data, Split::Train)?;
        if !first.is_empty() {
            let n = first.load_pair(0)?.0.len();
            if n != cfg.network.n_points {
                cfg = train_config(o, n)?;
            }
        }
    }
    Ok((cfg, data, out))
}

#[derive(Serialize)]
struct TrainRun<'a> {
    data: &'a Path,
    out: &'a Path,
    config_hash: String,
    train: &'a TrainConfig,
}

pub fn train(flags: &TrainArgs, config: Option<&Path>) -> Result<()> {
    let a = resolve(flags, config, "train")?;
    let (cfg, data, out) = prepare_training(&a.opts)?;
    let pairs = load_split(&data, Split::Train)?;
    write_json(
        &out.join(RUN_CONFIG_FILE),
        &TrainRun {
            data: &data,
            out: &out,
            config_hash: cfg.network.hash(),
            train: &cfg,
        },
    )?;
    println!(
        "training {} on {} pairs (N = {}, r = {}, j:k = {}:{}, t = {}, u = {})",
        cfg.strategy(),
        pairs.len(),
        cfg.network.n_points,
        cfg.network.r(),
        cfg.network.expansion.j,
        cfg.network.expansion.k,
        cfg.network.refine.t,
        cfg.network.refine.u
    );
    let outcome = run_training(&pairs, &cfg, &TrainOutput { dir: Some(out.clone()) })?;
    if let Some(last) = outcome.log.last() {
        println!("finished at iteration {}: L_sum = {:.6}", last.iter, last.loss.total);
    }
    println!("wrote {} and {}", out.join(CHECKPOINT_FILE).display(), out.join(LOSS_LOG_FILE).display());
    Ok(())
}

fn point_files(dir: &Path, into: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SfaError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| SfaError::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            point_files(&p, into)?;
        } else if p.extension().and_then(|e| e.to_str()).is_some_and(|e| POINT_EXTENSIONS.contains(&e)) {
            into.push(p);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRun<'a> {
    #[serde(flatten)]
    args: &'a EvalArgs,
    split: Split,
    method: &'a str,
    references: Option<usize>,
}

pub fn eval(flags: &EvalArgs, config: Option<&Path>) -> Result<()> {
    let a = resolve(flags, config, "eval")?;
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let split: Split = a.split.as_deref().unwrap_or("test").parse()?;
    if a.mmd != a.reference_dir.is_some() {
        return Err(SfaError::Config("--mmd and --reference-dir go together".into()));
    }
    let checkpoint = a.checkpoint.as_deref().map(|p| Checkpoint::load(p, None, a.force)).transpose()?;
    let pairs = load_split(data, split)?;
    let model: Box<dyn Completer> = match (a.baseline.as_deref(), &checkpoint) {
        (Some("oracle"), _) => Box::new(OracleCompleter::new(&pairs)),
        (Some("tiled-partial"), ck) => Box::new(TiledPartial {
            r: a.r.or(ck.as_ref().map(|c| c.network.cfg.r())).unwrap_or(8),
        }),
        (Some(other), _) => return Err(SfaError::Config(format!("unknown baseline {other:?} (expected oracle or tiled-partial)"))),
        (None, Some(ck)) => Box::new(ck.network.clone()),
        (None, None) => return Err(SfaError::Config("eval needs --checkpoint or --baseline".into())),
    };
    let references = match &a.reference_dir {
        Some(dir) => {
            let mut files = Vec::new();
            point_files(dir, &mut files)?;
            if files.is_empty() {
                return Err(SfaError::Domain(format!("no point files under {}", dir.display())));
            }
            Some(files.iter().map(|f| read_points(f)).collect::<Result<Vec<_>>>()?)
        }
        None => None,
    };
    let result = evaluate(
        model.as_ref(),
        &pairs,
        &EvalOptions {
            fidelity: a.fidelity,
            references: references.as_deref(),
        },
    )?;
    let method = a
        .method
        .clone()
        .or_else(|| a.baseline.clone())
        .or_else(|| checkpoint.as_ref().map(|c| format!("NSFA-{}", c.network.cfg.strategy.to_string().to_uppercase())))
        .unwrap_or_default();
    let table = result.report.to_table(&method);
    write_text(&out.join("metrics.csv"), &result.report.to_csv())?;
    write_text(&out.join("metrics.txt"), &table)?;
    write_json(
        &out.join(RUN_CONFIG_FILE),
        &EvalRun {
            args: &a,
            split,
            method: &method,
            references: references.as_ref().map(Vec::len),
        },
    )?;
    if a.save_outputs {
        for (i, (p, o)) in pairs.iter().zip(&result.outputs).enumerate() {
            let path = out.join("outputs").join(&p.category).join(format!("{}.{i:04}.xyz", p.id));
            write_points(&path, &o.y_final, PointFormat::Ascii)?;
        }
    }
    print!("{table}");
    Ok(())
}

const KNOWN_RGB: [u8; 3] = [31, 119, 180];
const MISSING_RGB: [u8; 3] = [255, 127, 14];
const ATT_RGB: [u8; 3] = [44, 160, 44];
const FPS_RGB: [u8; 3] = [127, 127, 127];

/// `x y z r g b label` rows.
fn colored_rows(points: &[Point3], tag: impl Fn(usize) -> ([u8; 3], &'static str)) -> String {
    let mut out = String::with_capacity(points.len() * 48);
    for (i, p) in points.iter().enumerate() {
        let ([r, g, b], label) = tag(i);
        out.push_str(&format!("{} {} {} {r} {g} {b} {label}\n", p[0], p[1], p[2]));
    }
    out
}

#[derive(Serialize)]
struct CompleteRun<'a> {
    #[serde(flatten)]
    args: &'a CompleteArgs,
    input_points: usize,
    resampled_to: Option<usize>,
    config_hash: String,
}

pub fn complete(flags: &CompleteArgs, config: Option<&Path>) -> Result<()> {
    let a = resolve(flags, config, "complete")?;
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let input_path = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let ck = Checkpoint::load(ck_path, None, a.force)?;
    let net = &ck.network;
    let raw = read_points(input_path)?;
    let n = net.cfg.n_points;
    let input = if raw.len() == n {
        raw.clone()
    } else {
        eprintln!("note: resampling {} input points to N = {n}", raw.len());
        fit_point_count(&raw, n, 0)?
    };
    let result = net.complete(&input)?;
    write_points(&out.join("completed.xyz"), &result.y_final, PointFormat::Ascii)?;
    if a.export_parts {
        let labels = &result.labels;
        let parts = colored_rows(result.y_rec.points(), |i| match labels[i] {
            PartLabel::Known => (KNOWN_RGB, PartLabel::Known.as_str()),
            PartLabel::Missing => (MISSING_RGB, PartLabel::Missing.as_str()),
        });
        write_text(&out.join("parts.txt"), &parts)?;
        write_text(&out.join("attention.txt"), &colored_rows(result.y_att.points(), |_| (ATT_RGB, "att")))?;
        write_text(&out.join("fps.txt"), &colored_rows(result.y_fps.points(), |_| (FPS_RGB, "fps")))?;
        write_bytes(&out.join("input.xyz"), &encode_points(&input, PointFormat::Ascii))?;
    }
    write_json(
        &out.join(RUN_CONFIG_FILE),
        &CompleteRun {
            args: &a,
            input_points: raw.len(),
            resampled_to: (raw.len() != n).then_some(n),
            config_hash: net.cfg.hash(),
        },
    )?;
    println!("completed {} -> {} points in {}", input_path.display(), result.y_final.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AblateRun<'a> {
    axis: AblationAxis,
    values: &'a [String],
    data: &'a Path,
    base: &'a TrainConfig,
}

pub fn ablate(flags: &AblateArgs, config: Option<&Path>) -> Result<()> {
    let a = resolve(flags, config, "ablate")?;
    let axis: AblationAxis = required(&a.axis, "axis")?.parse()?;
    let values = required(&a.values, "values")?;
    let (base, data, out) = prepare_training(&a.opts)?;
    sfa_core::ablation::ablation_variants(axis, values, &base)?;
    let train_pairs = load_split(&data, Split::Train)?;
    let test_pairs = load_split(&data, Split::Test)?;
    write_json(
        &out.join(RUN_CONFIG_FILE),
        &AblateRun {
            axis,
            values,
            data: &data,
            base: &base,
        },
    )?;
    let table = ablation_sweep(axis, values, &base, &train_pairs, &test_pairs)?;
    let csv = table.to_csv();
    write_text(&out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
