//! Library-level pipeline on synthetic data: prune, shrink, persist, encrypted inference.

use mofhei::datasets::{synthetic, SyntheticKind};
use mofhei::hesim::PackingConfig;
use mofhei::nncore::{
    evaluate, load_model, save_model, train, Loss, Metric, ModelBuilder, TrainConfig, TrainOptions,
};
use mofhei::pi::{analyze_cost, infer};
use mofhei::prune::{
    iterative_block_prune, shrink_structure, sparsity_report, BlockShapes, PruningSchedule,
};
use mofhei::{Dataset32, Model32, Model64};

fn blobs() -> (Dataset32, Dataset32) {
    let d: Dataset32 = synthetic(SyntheticKind::Blobs, 600, 5).unwrap();
    let mut parts = d.split(&[500, 100], 5).unwrap().into_iter();
    (parts.next().unwrap(), parts.next().unwrap())
}

fn cfg() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        batch_size: 25,
        learning_rate: 1e-2,
        patience_epochs: 12,
        loss: Loss::CrossEntropy,
        ..TrainConfig::default()
    }
}

#[test]
fn pruned_model_shrinks_without_changing_predictions() {
    let (tr, va) = blobs();
    let mut m: Model32 = ModelBuilder::new(&[2])
        .dense(24)
        .square()
        .dense(16)
        .square()
        .dense(3)
        .build(9)
        .unwrap();
    train(&mut m, &tr, &va, &cfg(), TrainOptions::default()).unwrap();
    let sched = PruningSchedule::new(0.5, 12, 20);
    let (pm, state, _) =
        iterative_block_prune(&m, &sched, &tr, &va, &cfg(), &BlockShapes::Columns).unwrap();
    assert!(state.is_frozen());
    assert!(evaluate(&pm, &va, Metric::Accuracy).unwrap() > 0.9);

    let small = shrink_structure(&pm, &state).unwrap();
    let gap = small
        .forward(&va.x)
        .unwrap()
        .max_abs_diff(&pm.forward(&va.x).unwrap());
    assert!(gap < 1e-4, "shrink changed outputs by {gap}");

    let report = sparsity_report(&m, &small).unwrap();
    let units: Vec<usize> = report.per_layer.iter().map(|l| l.kept_units).collect();
    assert_eq!(units[..2], [12, 8]);

    let he = PackingConfig::new(8192, 200).unwrap();
    let (big_cost, small_cost) = (
        analyze_cost(&m.cast::<f64>(), &he).unwrap(),
        analyze_cost(&small.cast::<f64>(), &he).unwrap(),
    );
    assert!(small_cost.reduction_vs(&big_cost) > 0.4);
}

#[test]
fn saved_model_runs_under_simulated_encryption() {
    let (tr, va) = blobs();
    let mut m: Model32 = ModelBuilder::new(&[2])
        .dense(8)
        .poly(2)
        .dense(3)
        .build(1)
        .unwrap();
    train(&mut m, &tr, &va, &cfg(), TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mofhei");
    save_model(&m, &path).unwrap();
    let back: Model64 = load_model(&path).unwrap();
    assert_eq!(back, m.cast::<f64>());

    let x = va.x.cast::<f64>();
    let (enc, cost) = infer(&back, &x, &PackingConfig::new(8192, 200).unwrap(), 2).unwrap();
    assert!(cost.depth_ok);
    assert!(enc.max_abs_diff(&back.forward(&x).unwrap()) < 1e-9);
}
