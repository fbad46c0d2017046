use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfa_core::ablation::{ablation_sweep, AblationAxis};
use sfa_core::aggregation::Strategy as Agg;
use sfa_core::checkpoint::Checkpoint;
use sfa_core::data::{generate_dataset, pairs_of, Pair, SynthConfig};
use sfa_core::eval::{evaluate, partition_diagnostic, EvalOptions, OracleCompleter, TiledPartial};
use sfa_core::geometry::{chamfer_distance, Point3};
use sfa_core::loss::{total_loss, LossWeights, RepulsionScale};
use sfa_core::train::{train, TrainConfig, TrainOutput};
use sfa_core::reconstruction::PartLabel;
use sfa_core::{Completer, CompletionOutput, Network, NetworkConfig, PointCloud, SfaError};

fn tiny_pairs(train_n: usize, test_n: usize) -> (Vec<Pair>, Vec<Pair>) {
    let cfg = SynthConfig {
        train: train_n,
        val: 0,
        test: test_n,
        n_points: 64,
        m_points: 256,
        views: 1,
        seed: 5,
        ..SynthConfig::default()
    };
    let ds = generate_dataset(&cfg).unwrap();
    (pairs_of(&ds.train), pairs_of(&ds.test))
}

fn tiny_config(strategy: Agg) -> TrainConfig {
    let mut cfg = TrainConfig::desk(strategy);
    cfg.network = NetworkConfig::new(64, 3, strategy, 4, 1, 2);
    cfg.max_iters = Some(3);
    cfg.batch_size = 2;
    cfg
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let (train_pairs, test_pairs) = tiny_pairs(4, 2);
    let cfg = tiny_config(Agg::Rfa);
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&train_pairs, &cfg, &TrainOutput::default()).unwrap();
    let path = dir.path().join("m.sfackpt");
    outcome.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path, Some(&cfg.network), false).unwrap();
    assert_eq!(loaded.to_bytes(), outcome.checkpoint.to_bytes());
    for p in &test_pairs {
        let a = outcome.checkpoint.network.complete(&p.partial).unwrap();
        let b = loaded.network.complete(&p.partial).unwrap();
        assert_eq!(a.y_final, b.y_final);
        assert_eq!(a.y_rec, b.y_rec);
    }

    let other = NetworkConfig::new(64, 3, Agg::Glfa, 4, 1, 2);
    assert!(matches!(Checkpoint::load(&path, Some(&other), false), Err(SfaError::Config(_))));
}

#[test]
fn evaluation_leaves_weights_untouched() {
    let (_, test_pairs) = tiny_pairs(1, 3);
    let net = Network::new(&NetworkConfig::new(64, 3, Agg::Glfa, 4, 1, 2), 2).unwrap();
    let before = net.params.digest();
    let a = evaluate(&net, &test_pairs, &EvalOptions::default()).unwrap();
    let b = evaluate(&net, &test_pairs, &EvalOptions::default()).unwrap();
    assert_eq!(net.params.digest(), before);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
}

#[test]
fn full_schedule_learning_rates() {
    let cfg = TrainConfig::new(NetworkConfig::full(Agg::Glfa));
    assert_eq!(cfg.lr_at(0), 7e-4);
    assert_eq!(cfg.lr_at(49_999), 7e-4);
    assert!((cfg.lr_at(50_000) - 4.9e-4).abs() < 1e-15);
    assert!((cfg.lr_at(100_000) - 3.43e-4).abs() < 1e-15);
    assert_eq!(cfg.clip_norm, Some(5.0));
}

#[test]
fn ablation_reruns_are_identical() {
    let (train_pairs, test_pairs) = tiny_pairs(2, 2);
    let mut base = tiny_config(Agg::Glfa);
    base.max_iters = Some(1);
    let levels: Vec<String> = ["2", "3", "4", "5"].map(String::from).to_vec();
    let a = ablation_sweep(AblationAxis::LevelNumber, &levels, &base, &train_pairs, &test_pairs).unwrap();
    let b = ablation_sweep(AblationAxis::LevelNumber, &levels, &base, &train_pairs, &test_pairs).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.iter().map(|r| r.levels).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    assert!(a.rows.iter().all(|r| r.mean_cd.is_finite() && r.mean_cd > 0.0));

    let ratios: Vec<String> = ["4:0", "3:1", "2:2", "1:3", "0:4"].map(String::from).to_vec();
    let t = ablation_sweep(AblationAxis::Ratio, &ratios, &base, &train_pairs, &test_pairs).unwrap();
    assert_eq!(t.rows.iter().map(|r| (r.j, r.k)).collect::<Vec<_>>(), vec![(4, 0), (3, 1), (2, 2), (1, 3), (0, 4)]);
}

#[test]
fn baselines_match_direct_computation() {
    let (_, test_pairs) = tiny_pairs(1, 4);
    let tiled = evaluate(&TiledPartial { r: 4 }, &test_pairs, &EvalOptions::default()).unwrap();
    for (s, p) in tiled.samples.iter().zip(&test_pairs) {
        let tiles: Vec<Point3> = (0..4).flat_map(|_| p.partial.points().iter().copied()).collect();
        let want = chamfer_distance(&PointCloud::new(tiles).unwrap(), &p.complete);
        assert!((s.cd - want).abs() <= 1e-12 * want.max(1.0));
        // tiling only duplicates points, so it scores the same as the partial itself
        assert!((s.cd - chamfer_distance(&p.partial, &p.complete)).abs() <= 1e-12);
    }
    let oracle = evaluate(&OracleCompleter::new(&test_pairs), &test_pairs, &EvalOptions::default()).unwrap();
    assert!(oracle.samples.iter().all(|s| s.cd == 0.0));
}

/// Returns a fixed `Y_rec` whose first `j` rows are labeled known.
struct Fixed {
    rec: Vec<Point3>,
    j: usize,
}

impl Completer for Fixed {
    fn complete(&self, _partial: &PointCloud) -> sfa_core::Result<CompletionOutput> {
        let rec = PointCloud::new(self.rec.clone())?;
        let labels = (0..rec.len()).map(|i| if i < self.j { PartLabel::Known } else { PartLabel::Missing }).collect();
        Ok(CompletionOutput {
            y_rec: rec.clone(),
            labels,
            y_fps: rec.clone(),
            y_att: rec.clone(),
            att_scores: vec![1.0; rec.len()],
            y_final: rec,
        })
    }
}

#[test]
fn partition_diagnostic_on_stub_outputs() {
    let partial = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
    let stub = Fixed {
        rec: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 4.0]],
        j: 2,
    };
    let d = partition_diagnostic(&stub, &partial).unwrap();
    assert_eq!(d.known_distance, Some(0.0));
    assert_eq!(d.missing_distance, Some((3.0 + 4.0) / 2.0));
    assert_eq!(d.known_closer(), Some(true));

    let all_known = Fixed { rec: stub.rec.clone(), j: 4 };
    let d = partition_diagnostic(&all_known, &partial).unwrap();
    assert_eq!(d.missing_distance, None);
    assert!(d.missing.is_none());
    assert_eq!(d.known_closer(), None);
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.random_range(-0.5..0.5))).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_terms_recompose(seed in 0u64..10_000, alpha in 0.0f64..2.0, beta in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rec, att, fin, gt) = (random_cloud(&mut rng, 12), random_cloud(&mut rng, 6), random_cloud(&mut rng, 12), random_cloud(&mut rng, 10));
        let w = LossWeights { alpha, beta, ..LossWeights::default() };
        let l = total_loss(&rec, &att, &fin, &gt, &w).unwrap();
        prop_assert!((l.total - (alpha * l.cd_rec + l.cd_att + l.cd_final + beta * l.rep)).abs() <= 1e-12);

        let bare = LossWeights { alpha: 0.0, beta: 0.0, ..w };
        let b = total_loss(&rec, &att, &fin, &gt, &bare).unwrap();
        prop_assert!((b.total - (chamfer_distance(&att, &gt) + chamfer_distance(&fin, &gt))).abs() <= 1e-12);

        let sum = LossWeights { rep_scale: RepulsionScale::Sum, ..w };
        let s = total_loss(&rec, &att, &fin, &gt, &sum).unwrap();
        prop_assert!((s.rep / (6.0 * 5.0) - l.rep).abs() <= 1e-12 * s.rep.abs().max(1.0));
    }
}
