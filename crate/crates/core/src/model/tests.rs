use super::*;
use crate::attention::shared_reference_attention;
use crate::permutation::{check_equivariance, check_invariance, make_permutation, PermutationKind};
use crate::tensor::{finite_diff_check, GradCheckConfig};
use rand::Rng;

fn cfg(variant: Variant) -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        refs: 4,
        variant,
        query_size: if variant == Variant::LearnedQuery { 16 * 16 } else { 0 },
        ..Default::default()
    }
}

fn random_batch<T: Element>(n: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * h * w).map(|_| rng.random::<f64>()).collect();
    Tensor::from_f64(&[n, h, w, 1], &data).unwrap()
}

fn instance<T: Element>(x: &Tensor<T>, i: usize) -> Vec<T> {
    let per = x.numel() / x.shape()[0];
    x.data()[i * per..(i + 1) * per].to_vec()
}

#[test]
fn every_variant_preserves_shape() {
    for v in Variant::ALL {
        let m = Model::<f32>::new(cfg(v), 1).unwrap();
        let x = random_batch::<f32>(2, 64, 64, 0);
        for mode in [Mode::Train, Mode::Predict] {
            let y = m.forward(&x, mode).unwrap();
            assert_eq!(y.shape(), &[2, 64, 64, 1], "{v}");
            assert!(y.all_finite());
        }
    }
}

#[test]
fn indivisible_input_is_rejected() {
    let m = Model::<f32>::new(cfg(Variant::Aea), 0).unwrap();
    let err = m.forward(&random_batch(1, 30, 32, 0), Mode::Predict).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn branch_group_sizes() {
    assert_eq!(branch_groups(5), (2, 3));
    assert_eq!(branch_groups(8), (4, 4));
    assert_eq!(branch_groups(1), (1, 0));
}

#[test]
fn predict_output_ignores_other_batch_members() {
    let m = Model::<f32>::new(cfg(Variant::Aea), 2).unwrap();
    let a = random_batch::<f32>(3, 16, 16, 1);
    let mut b = random_batch::<f32>(3, 16, 16, 2);
    // Same first instance, different companions.
    let per = 16 * 16;
    b.data_mut()[..per].copy_from_slice(&a.data()[..per]);
    let (ya, yb) = (m.forward(&a, Mode::Predict).unwrap(), m.forward(&b, Mode::Predict).unwrap());
    assert_eq!(instance(&ya, 0), instance(&yb, 0));
}

#[test]
fn single_instance_training_equals_prediction() {
    let m = Model::<f32>::new(cfg(Variant::Aea), 3).unwrap();
    let x = random_batch::<f32>(1, 16, 16, 4);
    assert_eq!(m.forward(&x, Mode::Train).unwrap(), m.forward(&x, Mode::Predict).unwrap());
}

#[test]
fn shared_reference_branch_matches_prediction() {
    let m = Model::<f32>::new(cfg(Variant::Aea), 5).unwrap();
    let x = random_batch::<f32>(4, 16, 16, 6);
    let (yt, yp) = (m.forward(&x, Mode::Train).unwrap(), m.forward(&x, Mode::Predict).unwrap());
    for i in 0..2 {
        let d = instance(&yt, i)
            .iter()
            .zip(instance(&yp, i))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(d <= 1e-6, "instance {i}: {d}");
    }
    // The batch-aware half sees the other instances and differs.
    assert_ne!(instance(&yt, 3), instance(&yp, 3));
}

fn block_params(c: usize, r: usize, seed: u64) -> AttentionParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = AttentionParams::init(c, r, NormMode::Division, &mut rng);
    // Larger weights than the init so the attention term is not negligible.
    for t in [&mut p.q.weight, &mut p.k.weight, &mut p.v.weight] {
        *t = t.scale(25.0);
    }
    p
}

#[test]
fn block_in_predict_mode_is_equivariant() {
    let p = block_params(6, 3, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let x = Tensor::randn(&[16, 6], 1.0, &mut rng);
        let spec = make_permutation(PermutationKind::Random { seed }, 4, 4).unwrap();
        let op = |x: &Tensor<f64>| Ok(attention_block_forward(&[x.clone()], &p, Variant::Aea, Mode::Predict)?.remove(0));
        let report = check_equivariance(op, &x, &spec, 1e-10).unwrap();
        assert!(report.passed, "{report:?}");
        // The residual adds exactly the operator output.
        let y = op(&x).unwrap();
        let a = shared_reference_attention(&x, &p).unwrap();
        assert!(y.sub(&x).unwrap().max_abs_diff(&a).unwrap() < 1e-12);
    }
}

#[test]
fn learned_query_block_is_invariant_not_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = block_params(4, 0, 10);
    let lq = LearnedQuery::<f64>::random(16, p.k.out_features(), 1.0, &mut rng);
    let attention_term = |x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, false);
        let q = tape.constant(lq.query.clone());
        let xv = tape.constant(x.clone());
        let y = attention_block_on(&mut tape, &[xv], &vars, Variant::LearnedQuery, Some(q), Mode::Predict)?;
        tape.value(y[0]).sub(x)
    };
    let x = Tensor::randn(&[16, 4], 1.0, &mut rng);
    let spec = make_permutation(PermutationKind::FlipH, 4, 4).unwrap();
    assert!(check_invariance(attention_term, &x, &spec, 1e-10).unwrap().passed);
    assert!(!check_equivariance(attention_term, &x, &spec, 1e-10).unwrap().passed);
}

#[test]
fn empty_block_batch_is_usage_error() {
    let p = block_params(4, 0, 1);
    let err = attention_block_forward::<f64>(&[], &p, Variant::Aea, Mode::Train).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn periodic_model_commutes_with_cyclic_shifts() {
    let config = ModelConfig {
        periodic: true,
        ..cfg(Variant::Aea)
    };
    let mut m = Model::<f32>::new(config, 11).unwrap();
    // Non-trivial attention weights and references.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for key in ["attn.wq", "attn.wk", "attn.wv", "attn.refs"] {
        let t = &m.params()[key];
        let fresh = Tensor::randn(t.shape(), 0.3, &mut rng);
        m.params_mut().insert(key.into(), fresh);
    }
    let (h, w) = (32, 32);
    let op = |flat: &Tensor<f32>| {
        let y = m.forward(&flat.reshape(&[1, h, w, 1])?, Mode::Predict)?;
        y.reshape(&[h * w, 1])
    };
    let x = random_batch::<f32>(1, h, w, 13).reshape(&[h * w, 1]).unwrap();
    for (dx, dy) in [(4, 0), (0, 8), (12, 4), (-4, -8)] {
        let spec = make_permutation(PermutationKind::CyclicShift { dx, dy }, w, h).unwrap();
        let report = check_equivariance(op, &x, &spec, 1e-4).unwrap();
        assert!(report.passed, "shift ({dx},{dy}): {report:?}");
    }
    // Zero padding breaks it at the borders.
    let zero = Model::<f32>::from_params(cfg(Variant::Aea), m.params().clone()).unwrap();
    let op0 = |flat: &Tensor<f32>| zero.forward(&flat.reshape(&[1, h, w, 1])?, Mode::Predict)?.reshape(&[h * w, 1]);
    let spec = make_permutation(PermutationKind::CyclicShift { dx: 4, dy: 4 }, w, h).unwrap();
    assert!(!check_equivariance(op0, &x, &spec, 1e-4).unwrap().passed);
}

#[test]
fn model_gradients_match_finite_differences() {
    let config = ModelConfig {
        base_channels: 2,
        refs: 2,
        ..Default::default()
    };
    let model = Model::<f64>::new(config.clone(), 14).unwrap();
    let names: Vec<String> = model.params().keys().cloned().collect();
    let params: Vec<Tensor<f64>> = model.params().values().cloned().collect();
    let x = random_batch::<f64>(2, 8, 8, 15);
    let target = random_batch::<f64>(2, 8, 8, 16);
    let f = |tape: &mut Tape<f64>, vs: &[Var]| {
        let vars: ModelVars = names.iter().cloned().zip(vs.iter().copied()).collect();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(target.clone());
        let y = forward_on(&config, tape, &vars, xv, Mode::Train)?;
        tape.mse(y, tv)
    };
    let report = finite_diff_check(
        f,
        &params,
        &GradCheckConfig {
            sample: Some(60),
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn heatmap_contract() {
    let mut m = Model::<f64>::new(cfg(Variant::Aea), 17).unwrap();
    let img = random_batch::<f64>(1, 32, 24, 18).reshape(&[32, 24]).unwrap();
    let maps = relevance_heatmap(&img, &m, &[0, 3]).unwrap();
    assert_eq!(maps.len(), 2);
    for map in &maps {
        assert_eq!(map.shape(), &[32, 24]);
        assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(relevance_heatmap(&img, &m, &[0, 3]).unwrap(), maps);
    assert!(matches!(relevance_heatmap(&img, &m, &[4]), Err(Error::Usage(_))));

    let zero = Tensor::zeros(m.params()["attn.refs"].shape());
    m.params_mut().insert("attn.refs".into(), zero);
    let flat = relevance_heatmap(&img, &m, &[1]).unwrap();
    assert!(flat[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let m = Model::<f32>::new(cfg(Variant::Aea), 19).unwrap();
    let mut c = Checkpoint::new();
    m.write_to(&mut c);
    let back = Model::<f32>::read_from(&Checkpoint::from_bytes(&c.to_bytes()).unwrap()).unwrap();
    assert_eq!(back, m);

    let mut wrong = m.params().clone();
    wrong.remove("attn.refs");
    assert!(Model::from_params(cfg(Variant::Aea), wrong).is_err());
}

#[test]
fn config_text_round_trip_and_variant_names() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        let c = cfg(v);
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
    }
    assert_eq!("self-only".parse::<Variant>().unwrap(), Variant::SelfOnly);
    assert!("bogus".parse::<Variant>().is_err());
    assert_ne!(cfg(Variant::Aea).hash(), cfg(Variant::None).hash());
}

#[test]
fn variants_allocate_references_only_when_used() {
    let has_refs = |v| Model::<f32>::new(cfg(v), 0).unwrap().params().contains_key("attn.refs");
    assert!(has_refs(Variant::Aea) && has_refs(Variant::SrOnly));
    assert!(!has_refs(Variant::SelfOnly) && !has_refs(Variant::BaOnly) && !has_refs(Variant::None));
}
