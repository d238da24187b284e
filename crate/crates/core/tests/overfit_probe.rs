//! A desk model trained on a handful of fixed trajectories must drive its loss well down.

use rand::Rng as _;

use rtgbbo::dataset::{Dataset, Trajectory};
use rtgbbo::model::{ModelConfig, Preset};
use rtgbbo::problems::{BaseFunction, DistributionConfig, TaskRef};
use rtgbbo::seed::rng_from;
use rtgbbo::trainer::{read_metrics, run_training, TrainVariant, TrainerConfig};

#[test]
fn desk_model_overfits_eight_trajectories() {
    let dist = DistributionConfig {
        name: "sphere2d".into(),
        base: BaseFunction::Sphere,
        dim: 2,
        lower: None,
        upper: None,
        translation_range: vec![[0.0, 0.0]],
        scaling_range: [1.0, 1.0],
        master_seed: 0,
    };
    let mut rng = rng_from(&[77]);
    let trajectories = (0..8u64)
        .map(|i| {
            let xs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random(), rng.random()]).collect();
            let ys = xs.iter().map(|x| -x.iter().map(|v| (10.0 * v - 5.0).powi(2)).sum::<f64>()).collect();
            Trajectory::new(TaskRef::new("sphere2d", i % 2), "random_search", i, xs, ys).unwrap()
        })
        .collect();
    let ds = Dataset::new(vec![dist], 0, 20, 4, trajectories).unwrap();
    let mut cfg = TrainerConfig::desk(TrainVariant::Ribbo, 2000, 5);
    cfg.tau = 19;
    cfg.eval_every = 1;
    cfg.checkpoint_every = 0;
    let mcfg = ModelConfig::preset(Preset::Desk, 2, TrainVariant::Ribbo.model_variant(), 20);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("probe.ckpt");
    run_training(&ds, mcfg, &cfg, &out, None).unwrap();
    let rows = read_metrics(&out).unwrap();
    assert_eq!(rows.len(), 2000);
    let first = rows[0].loss;
    let last = rows[rows.len() - 50..].iter().map(|r| r.loss).sum::<f64>() / 50.0;
    assert!(first > 0.0);
    assert!(last <= 0.2 * first, "initial loss {first}, final loss {last}");
}
