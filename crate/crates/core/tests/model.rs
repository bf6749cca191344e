use dmn_core::data::{generate_dataset, SceneSpec};
use dmn_core::model::ForwardOutput;
use dmn_core::numeric::{grad_check, Adam, BoundParams};
use dmn_core::train::{bce_loss, build_vocab, prepare, train, train_new, train_step, PROB_CLIP};
use dmn_core::visual::BackboneConfig;
use dmn_core::{Checkpoint, Dmn, DmnConfig, Graph, Stage, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_probs(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
}

fn random_mask(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()).unwrap()
}

fn loss_value(probs: &Tensor, target: &Tensor, pw: f64) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = bce_loss(&mut g, p, target, pw).unwrap();
    g.value(l).item()
}

#[test]
fn bce_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = random_mask(&[1, 4, 4], &mut rng);
    assert!(loss_value(&gt, &gt, 1.0) <= 2.0 * PROB_CLIP);

    let half = Tensor::new(&[1, 4, 4], vec![0.5; 16]).unwrap();
    assert!((loss_value(&half, &gt, 1.0) - std::f64::consts::LN_2).abs() <= 1e-12);
}

#[test]
fn bce_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for pw in [1.0, 2.5] {
        let p = random_probs(&[1, 4, 4], &mut rng);
        let y = random_mask(&[1, 4, 4], &mut rng);
        let mut sum = 0.0;
        for i in 0..16 {
            let (pi, yi) = (p.data()[i], y.data()[i]);
            sum -= pw * yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln();
        }
        assert!((loss_value(&p, &y, pw) - sum / 16.0).abs() <= 1e-12);
    }
}

#[test]
fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = random_mask(&[1, 3, 5], &mut rng);
    let p = random_probs(&[1, 3, 5], &mut rng);
    let err = grad_check(|g, v| bce_loss(g, v[0], &y, 1.7), &[p], 1e-5).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn bce_rejects_other_resolution() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[1, 4, 4], vec![0.5; 16]).unwrap());
    let y = Tensor::new(&[1, 8, 8], vec![0.0; 64]).unwrap();
    let err = bce_loss(&mut g, p, &y, 1.0).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("downsampl"), "{err}");
}

fn small_config() -> DmnConfig {
    DmnConfig {
        backbone: BackboneConfig {
            scales: 2,
            channels: vec![4, 6],
            blocks_per_scale: 1,
        },
        embedding_size: 6,
        hidden_size: 6,
        language_layers: 1,
        filters: 2,
        fusion_channels: 6,
        msru_layers: 1,
        msru_width: 6,
        epochs: 2,
        ..DmnConfig::tiny()
    }
}

fn dataset(seed: u64, n: usize) -> Vec<dmn_core::data::Example> {
    generate_dataset(seed, n, &SceneSpec::for_size(16, 16)).unwrap()
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let data = dataset(4, 6);
    let mut cfg = small_config();
    cfg.optimizer.lr = 0.0;
    let mut model = Dmn::new(cfg, build_vocab(&data)).unwrap();
    let before = model.to_checkpoint().to_bytes();
    train(&mut model, &data, &[], |_| {}).unwrap();
    assert_eq!(model.to_checkpoint().to_bytes(), before);
}

#[test]
fn single_example_overfits() {
    let data = dataset(5, 1);
    let mut cfg = DmnConfig::tiny();
    cfg.backbone.channels = vec![8, 16, 32];
    let mut model = Dmn::new(cfg, build_vocab(&data)).unwrap();
    let prepared = prepare(&model, &data, Stage::LowRes).unwrap();
    let mut adam = Adam::new(model.config().optimizer);
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        last = train_step(&mut model, &mut adam, &prepared[0], Stage::LowRes).unwrap();
        if last < 0.05 {
            break;
        }
    }
    assert!(last < 0.05, "loss still {last}");
}

#[test]
fn training_is_reproducible() {
    let data = dataset(6, 5);
    let run = || {
        let (m, report) = train_new(small_config(), &data, &data[..2], |_| {}).unwrap();
        (m.to_checkpoint().to_bytes(), report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.epochs.len(), 2);
}

#[test]
fn stages_train_disjoint_parts() {
    let data = dataset(7, 4);
    let (mut model, _) = train_new(small_config(), &data, &[], |_| {}).unwrap();
    let fresh = Dmn::new(small_config(), build_vocab(&data)).unwrap();
    let changed = |a: &Dmn, b: &Dmn, name: &str| a.store().by_name(name).unwrap() != b.store().by_name(name).unwrap();
    assert!(changed(&model, &fresh, "low.w"));
    assert!(changed(&model, &fresh, "lm.embedding"));
    assert!(!changed(&model, &fresh, "um.head.w"));

    let after_low = Dmn::from_checkpoint(&model.to_checkpoint()).unwrap();
    let mut cfg = model.config().clone();
    cfg.end_to_end = false;
    cfg.stage = Stage::HighRes;
    model = Dmn::from_checkpoint_with(&model.to_checkpoint(), cfg).unwrap();
    train(&mut model, &data, &[], |_| {}).unwrap();
    assert!(changed(&model, &after_low, "um.head.w"));
    assert!(!changed(&model, &after_low, "lm.embedding"));
    assert!(!changed(&model, &after_low, "vm.s1.b0.w"));
}

#[test]
fn only_vm_ignores_the_query() {
    let data = dataset(8, 2);
    let mut cfg = small_config();
    cfg.ablation.only_vm = true;
    let model = Dmn::new(cfg, build_vocab(&data)).unwrap();
    assert!(model.store().ids().all(|id| {
        let n = model.store().name(id);
        !n.starts_with("lm.") && !n.starts_with("sm.")
    }));
    let img = data[0].image.to_tensor();
    let a = model.heatmap(&img, "red circle", Stage::HighRes).unwrap();
    let b = model.heatmap(&img, "blue square on the left", Stage::HighRes).unwrap();
    assert_eq!(a, b);

    let full = Dmn::new(small_config(), build_vocab(&data)).unwrap();
    let a = full.heatmap(&img, "red circle", Stage::HighRes).unwrap();
    let b = full.heatmap(&img, "blue square on the left", Stage::HighRes).unwrap();
    assert_ne!(a, b);
}

#[test]
fn heatmap_resolution_per_stage() {
    let data = dataset(9, 1);
    let model = Dmn::new(small_config(), build_vocab(&data)).unwrap();
    let img = data[0].image.to_tensor();
    let hi = model.heatmap(&img, &data[0].query, Stage::HighRes).unwrap();
    assert_eq!(hi.shape(), [1, 16, 16]);
    assert!(hi.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    let lo = model.heatmap(&img, &data[0].query, Stage::LowRes).unwrap();
    assert_eq!(lo.shape(), [1, 4, 4]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = dataset(10, 3);
    let (mut model, _) = train_new(small_config(), &data, &[], |_| {}).unwrap();
    model.set_threshold(Some(0.37));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let loaded = Dmn::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(loaded.threshold(), Some(0.37));
    assert_eq!(loaded.vocab(), model.vocab());
    assert_eq!(loaded.config(), model.config());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(loaded.to_checkpoint().to_bytes(), bytes);

    // Reloading twice gives identical predictions.
    let again = Dmn::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let img = data[0].image.to_tensor();
    assert_eq!(
        loaded.heatmap(&img, &data[0].query, Stage::HighRes).unwrap(),
        again.heatmap(&img, &data[0].query, Stage::HighRes).unwrap()
    );
}

#[test]
fn mismatched_config_lists_fields() {
    let data = dataset(11, 1);
    let model = Dmn::new(small_config(), build_vocab(&data)).unwrap();
    let mut other = small_config();
    other.filters = 3;
    other.backbone.channels = vec![4, 8];
    other.epochs = 99;
    let err = Dmn::from_checkpoint_with(&model.to_checkpoint(), other).unwrap_err();
    let msg = err.to_string();
    assert_eq!(err.exit_code(), 1);
    assert!(msg.contains("filters") && msg.contains("backbone.channels"), "{msg}");
    assert!(!msg.contains("epochs"), "{msg}");
}

#[test]
fn config_json_round_trip() {
    let cfg = DmnConfig::tiny();
    assert_eq!(DmnConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let err = DmnConfig::from_json(r#"{"nonsense": 1}"#).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn full_model_gradient_low_stage() {
    let data = dataset(12, 1);
    let model = Dmn::new(small_config(), build_vocab(&data)).unwrap();
    let ids = model.tokenize(&data[0].query).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = model.store().len();
    let mut leaves: Vec<Tensor> = model
        .store()
        .ids()
        .filter(|&id| !model.store().name(id).starts_with("um."))
        .map(|id| model.store().get(id).clone())
        .collect();
    let live: Vec<_> = model
        .store()
        .ids()
        .filter(|&id| !model.store().name(id).starts_with("um."))
        .collect();
    leaves.push(Tensor::new(&[3, 16, 16], (0..768).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap());
    let target = data[0].mask.downsample(4).unwrap().to_tensor();
    let err = grad_check(
        |g, v| {
            // Decoder weights are constants here; the low stage never reads them.
            let mut vars = Vec::with_capacity(n);
            let mut k = 0;
            for id in model.store().ids() {
                if live.contains(&id) {
                    vars.push(v[k]);
                    k += 1;
                } else {
                    vars.push(g.constant(model.store().get(id).clone()));
                }
            }
            let p = BoundParams::from_vars(vars);
            let ForwardOutput { logits, .. } = model.forward(g, &p, v[v.len() - 1], &ids, Stage::LowRes)?;
            g.bce_with_logits(logits, &target, 1.0)
        },
        &leaves,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}
