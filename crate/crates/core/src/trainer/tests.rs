use super::*;
use crate::metrics::PatchRecord;
use crate::imaging::{synth_generate, SynthConfig};
use crate::model::Variant;
use crate::tensor::{finite_diff_check, GradCheckConfig, Var};

fn tiny_pairs(count: usize) -> Vec<ImagePair> {
    synth_generate(&SynthConfig {
        count,
        size: 32,
        ..Default::default()
    })
    .unwrap()
}

fn tiny_cfg(steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        batch_size: 4,
        steps,
        lr: 1e-3,
        crop: 16,
        seed: 3,
        val_every: 2,
        val_images: 2,
        prefetch: 2,
        ..Default::default()
    };
    cfg.model.base_channels = 4;
    cfg.model.refs = 4;
    cfg
}

#[test]
fn mse_trivial_values() {
    let a = Tensor::<f64>::from_f64(&[2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
    let b = a.map(|v| v + 0.1);
    assert!((mse_loss(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!(mse_loss(&a, &Tensor::zeros(&[4])).is_err());
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
    let target = Tensor::<f64>::randn(&[3, 5], 1.0, &mut rng);
    let f = |tape: &mut Tape<f64>, vs: &[Var]| {
        let t = tape.constant(target.clone());
        tape.mse(vs[0], t)
    };
    let report = finite_diff_check(f, &[pred.clone()], &GradCheckConfig::default()).unwrap();
    assert!(report.passed, "{report:?}");

    // Closed form 2(pred - target)/n.
    let mut tape = Tape::new();
    let p = tape.param(pred.clone());
    let t = tape.constant(target.clone());
    let l = tape.mse(p, t).unwrap();
    let g = tape.backward(l).unwrap().take(p).unwrap();
    let expect = pred.sub(&target).unwrap().scale(2.0 / 15.0);
    assert!(g.max_abs_diff(&expect).unwrap() < 1e-15);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let pairs = tiny_pairs(3);
    let cfg = TrainConfig { lr: 0.0, ..tiny_cfg(2) };
    let run = train(&pairs, &[], &cfg, None, |_| {}).unwrap();
    let init = Model::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
    assert_eq!(run.state.model.params(), init.params());
    assert_eq!(run.state.step, 2);
    assert_eq!(run.curve.len(), 2);
}

#[test]
fn training_is_bit_reproducible_and_validates_periodically() {
    let pairs = tiny_pairs(4);
    let (tr, te) = pairs.split_at(3);
    let cfg = tiny_cfg(4);
    let a = train(tr, te, &cfg, None, |_| {}).unwrap();
    let b = train(tr, te, &cfg, None, |_| {}).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.curve, b.curve);
    let validated: Vec<u64> = a.curve.iter().filter(|p| p.val_delta_psnr.is_some()).map(|p| p.step).collect();
    assert_eq!(validated, vec![2, 4]);
    assert!(a.curve.iter().all(|p| p.loss.is_finite()));
    let csv = curve_csv(&a.curve);
    assert!(csv.starts_with("step,loss,val_delta_psnr\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn batches_depend_only_on_seed_and_step() {
    let pairs = tiny_pairs(3);
    let cfg = tiny_cfg(1);
    let a = sample_batch(&pairs, &cfg, 7).unwrap();
    let b = sample_batch(&pairs, &cfg, 7).unwrap();
    let c = sample_batch(&pairs, &cfg, 8).unwrap();
    assert_eq!(a.input, b.input);
    assert_eq!(a.target, b.target);
    assert_ne!(a.input, c.input);
    assert_eq!(a.input.shape(), &[4, 16, 16, 1]);
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let pairs = tiny_pairs(3);
    let cfg = tiny_cfg(6);
    let full = train(&pairs, &[], &cfg, None, |_| {}).unwrap();

    let half = train(&pairs, &[], &TrainConfig { steps: 3, ..cfg.clone() }, None, |_| {}).unwrap();
    let bytes = half.state.to_checkpoint().to_bytes();
    let restored = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored, half.state);
    assert_eq!(restored.to_checkpoint().to_bytes(), bytes);

    let resumed = train(&pairs, &[], &cfg, Some(restored), |_| {}).unwrap();
    assert_eq!(resumed.state.step, 6);
    for (k, p) in full.state.model.params() {
        let d = p.max_abs_diff(&resumed.state.model.params()[k]).unwrap();
        assert!(d <= 1e-6, "{k}: {d}");
    }
    assert_eq!(resumed.curve, full.curve[3..]);
}

#[test]
fn resume_rejects_a_different_model() {
    let pairs = tiny_pairs(2);
    let cfg = tiny_cfg(1);
    let state = TrainState::new(&cfg).unwrap();
    let mut other = cfg.clone();
    other.model.base_channels = 8;
    assert!(matches!(train(&pairs, &[], &other, Some(state), |_| {}), Err(Error::Config(_))));
}

#[test]
fn tampered_config_hash_is_rejected() {
    let state = TrainState::new(&tiny_cfg(1)).unwrap();
    let mut c = state.to_checkpoint();
    c.insert_u64("meta/config_hash", vec![0]);
    assert!(matches!(TrainState::from_checkpoint(&c), Err(Error::Format { .. })));
}

#[test]
fn nan_input_stops_with_last_good_state() {
    let mut pairs = tiny_pairs(1);
    pairs[0].lr_up.data_mut().fill(f64::NAN);
    let cfg = tiny_cfg(3);
    let run = train(&pairs, &[], &cfg, None, |_| {}).unwrap();
    assert!(run.diverged.as_deref().unwrap().starts_with("step 1"));
    assert_eq!(run.state.step, 0);
    assert!(run.curve.is_empty());
    assert_eq!(run.state.model, Model::new(cfg.model.clone(), cfg.seed).unwrap());
}

#[test]
fn invalid_inputs_are_rejected() {
    let pairs = tiny_pairs(1);
    assert!(matches!(train(&[], &[], &tiny_cfg(1), None, |_| {}), Err(Error::Usage(_))));
    let big = TrainConfig { crop: 64, ..tiny_cfg(1) };
    assert!(matches!(train(&pairs, &[], &big, None, |_| {}), Err(Error::Config(_))));
    let single = TrainConfig { batch_size: 1, ..tiny_cfg(1) };
    assert!(train(&pairs, &[], &single, None, |_| {}).is_err());
}

#[test]
fn self_strategy_gives_one_model_per_pair() {
    let pairs = synth_generate(&SynthConfig {
        count: 2,
        size: 64,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        strategy: Strategy::SelfTrain,
        ..tiny_cfg(1)
    };
    let mut seen = Vec::new();
    let runs = train_per_pair(&pairs, &cfg, |id, _| seen.push(id.to_string())).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(seen, vec!["synth000", "synth001"]);
    for (id, run, test) in &runs {
        assert_eq!(run.state.step, 1);
        assert_eq!(test.len(), 3);
        assert!(test.iter().all(|p| p.id.starts_with(id.as_str())));
    }
}

#[test]
fn ablation_table_has_a_row_per_variant() {
    let pairs = tiny_pairs(3);
    let rows = default_ablation_rows();
    assert_eq!(rows.len(), 7);
    let small: Vec<AblationRow> = rows
        .iter()
        .map(|r| AblationRow {
            refs: r.refs.min(4),
            ..r.clone()
        })
        .collect();
    let results = run_ablation(&pairs[..2], &pairs[2..], &tiny_cfg(1), &small, |_| {}).unwrap();
    assert_eq!(results.len(), 7);
    let table = format_ablation_table(&results);
    assert_eq!(table.lines().count(), 8);
    for r in &rows {
        assert!(table.contains(r.label.as_str()));
    }
    assert!(results.iter().all(|r| r.delta_psnr.is_finite()));
}

#[test]
fn none_row_equals_a_plain_unet_run() {
    let pairs = tiny_pairs(3);
    let cfg = tiny_cfg(2);
    let row = default_ablation_rows().into_iter().find(|r| r.variant == Variant::None).unwrap();
    let result = &run_ablation(&pairs[..2], &pairs[2..], &cfg, &[row.clone()], |_| {}).unwrap()[0];
    let mut plain = cfg.clone();
    plain.model.variant = Variant::None;
    plain.model.refs = 0;
    let run = train(&pairs[..2], &[], &plain, None, |_| {}).unwrap();
    let agg = evaluate(&run.state.model, &pairs[2..], 16, PadMode::Reflect)
        .unwrap()
        .aggregate()
        .unwrap();
    assert_eq!(result.delta_psnr, agg.delta_psnr);
}

#[test]
fn patch_sweep_is_deterministic_and_handles_full_size() {
    let pairs = tiny_pairs(2);
    let model = Model::<f32>::new(tiny_cfg(1).model, 5).unwrap();
    let a = run_patch_sweep(&model, &pairs, &[32, 8, 16]).unwrap();
    let b = run_patch_sweep(&model, &pairs, &[8, 16, 32]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.iter().map(|p| p.size).collect::<Vec<_>>(), vec![8, 16, 32]);
    // Full size is a single tile, i.e. plain prediction.
    let direct = PatchRecord::evaluate(&model.predict_image(&pairs[0].lr_up).unwrap(), &pairs[0]).unwrap();
    let single = evaluate(&model, &pairs[..1], 32, PadMode::Reflect).unwrap();
    assert_eq!(single.records[0], direct);
    assert!(a.to_table().contains("monotonic"));
    assert!(run_patch_sweep(&model, &pairs, &[10]).is_err());
}
