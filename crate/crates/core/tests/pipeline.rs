//! Public-API walk through: synthetic data, disk round trip, training,
//! checkpointing, tiled prediction and scoring.

use aeanet::imaging::{synth_generate, tile_and_stitch, Dataset, PadMode, SynthConfig};
use aeanet::metrics::delta_metrics;
use aeanet::model::{Checkpoint, ModelConfig};
use aeanet::trainer::{evaluate, train, TrainConfig, TrainState};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps: 4,
        crop: 32,
        val_every: 2,
        val_images: 2,
        model: ModelConfig {
            base_channels: 4,
            refs: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn dataset_survives_disk_round_trip() {
    let pairs = synth_generate(&SynthConfig {
        seed: 2,
        count: 4,
        size: 48,
        ..Default::default()
    })
    .unwrap();
    let ds = Dataset::with_holdout(pairs);
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.len(), 4);
    let (a, b) = (ds.train_test().unwrap(), back.train_test().unwrap());
    assert_eq!(a.0.len(), b.0.len());
    assert_eq!(a.1.len(), b.1.len());
    // 8-bit storage quantizes to within half a level.
    for (x, y) in a.0.iter().zip(&b.0) {
        assert!(x.hr.max_abs_diff(&y.hr).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn train_save_load_predict_evaluate() {
    let pairs = synth_generate(&SynthConfig {
        seed: 1,
        count: 4,
        size: 64,
        ..Default::default()
    })
    .unwrap();
    let (train_pairs, test) = Dataset::with_holdout(pairs).train_test().unwrap();
    let cfg = tiny_config();
    let run = train(&train_pairs, &test, &cfg, None, |_| {}).unwrap();
    assert!(run.diverged.is_none());
    assert_eq!(run.state.step, 4);
    assert_eq!(run.curve.len(), 4);
    assert!(run.curve.iter().all(|p| p.loss.is_finite()));
    let validated: Vec<u64> = run.curve.iter().filter(|p| p.val_delta_psnr.is_some()).map(|p| p.step).collect();
    assert_eq!(validated, [2, 4]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.aean");
    run.state.to_checkpoint().save(&path).unwrap();
    let state = TrainState::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert!(state == run.state);

    // Evaluation scores the same tiled prediction.
    let lr = &test[0].lr_up;
    let tiled = tile_and_stitch(lr, |p| state.model.predict_image(p), 32, PadMode::Reflect).unwrap();
    assert_eq!(tiled.shape(), lr.shape());
    let report = evaluate(&state.model, &test, 32, PadMode::Reflect).unwrap();
    let agg = report.aggregate().unwrap();
    assert!(agg.delta_psnr.is_finite() && agg.delta_ssim.is_finite());
    let (direct, _) = delta_metrics(&tiled, &test[0].hr, lr).unwrap();
    let first = &report.records[0];
    assert!((first.delta_psnr - direct).abs() < 1e-9, "{} vs {direct}", first.delta_psnr);
}
