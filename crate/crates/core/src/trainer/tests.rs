use super::*;
use crate::textgen::GenConfig;
use tempfile::TempDir;

fn tiny_gen_cfg() -> GenConfig {
    GenConfig {
        hr_size: 32,
        scale: 2,
        chars_min: 1,
        chars_max: 2,
        min_contrast: 0.3,
        glyph_cell: 12,
    }
}

fn tiny_dataset(n: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    textgen::dataset_generate(n, 900, dir.path(), &tiny_gen_cfg()).unwrap();
    dir
}

fn tiny_train_cfg(data: &TempDir) -> TrainConfig {
    TrainConfig {
        train_dir: data.path().to_str().unwrap().into(),
        batch_size: 2,
        pretrain_steps: 2,
        gan_steps: 2,
        refine_steps: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn config_validates_and_hashes_stably() {
    let cfg = TrainConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.hash(), cfg.hash());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(cfg.hash(), other.hash());
    let mut bad = cfg.clone();
    bad.adv_mode = "wasserstein".into();
    assert!(bad.validate().is_err());
    bad = cfg.clone();
    bad.lr_gen = 0.0;
    assert!(bad.validate().is_err());
    bad = cfg;
    bad.batch_size = 0;
    assert!(bad.validate().is_err());
}

#[test]
fn config_toml_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cfg.toml");
    let cfg = TrainConfig {
        seed: 99,
        w_char: 0.3,
        ..TrainConfig::default()
    };
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let loaded = TrainConfig::load(&path).unwrap();
    assert_eq!(loaded.seed, 99);
    assert_eq!(loaded.w_char, 0.3);
    assert_eq!(loaded.hash(), cfg.hash());
    std::fs::write(&path, "no_such_key = 1\n").unwrap();
    assert!(TrainConfig::load(&path).is_err());
}

#[test]
fn adam_minimizes_a_quadratic() {
    let x = Tensor::param(&[2], vec![3.0, -2.0]).unwrap();
    let params = vec![("x".to_string(), x.clone())];
    let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
    for _ in 0..200 {
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        opt.step(&params);
        x.zero_grad();
    }
    assert!(x.data().iter().all(|v| v.abs() < 0.05), "{:?}", x.data());
    assert_eq!(opt.t, 200);
}

#[test]
fn adam_skips_params_without_grads() {
    let x = Tensor::param(&[1], vec![1.0]).unwrap();
    let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
    opt.step(&[("x".to_string(), x.clone())]);
    assert_eq!(x.data(), vec![1.0]);
}

#[test]
fn make_batch_shapes() {
    let data = tiny_dataset(4);
    let ds = Dataset::load(data.path()).unwrap();
    let samples: Vec<_> = (0..3).map(|i| ds.sample(i).unwrap()).collect();
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    assert_eq!(batch.lr_layers.alpha.shape(), vec![3, 1, 16, 16]);
    assert_eq!(batch.lr_layers.fg.shape(), vec![3, 3, 16, 16]);
    assert_eq!(batch.gt_layers.alpha.shape(), vec![3, 1, 32, 32]);
    assert_eq!(batch.gt_hr.shape(), vec![3, 3, 32, 32]);
    assert_eq!(batch.boxes.len(), 3);
    assert!(make_batch(&[], Backend::Oracle, None).is_err());
    assert!(make_batch(&samples, Backend::Learned, None).is_err());
}

#[test]
fn dataset_hash_is_stable_and_content_sensitive() {
    let a = tiny_dataset(3);
    let b = tiny_dataset(3);
    let c = tiny_dataset(4);
    let ha = Dataset::load(a.path()).unwrap().hash().unwrap();
    let hb = Dataset::load(b.path()).unwrap().hash().unwrap();
    let hc = Dataset::load(c.path()).unwrap().hash().unwrap();
    assert_eq!(ha, hb);
    assert_ne!(ha, hc);
}

#[test]
fn pretrain_overfits_a_repeated_batch() {
    let data = tiny_dataset(2);
    let ds = Dataset::load(data.path()).unwrap();
    let samples: Vec<_> = (0..2).map(|i| ds.sample(i).unwrap()).collect();
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    let cfg = TrainConfig {
        lr_gen: 1e-3,
        ..tiny_train_cfg(&data)
    };
    let mut t = Trainer::new(&cfg).unwrap();
    let first = t.train_step(&batch, Stage::Pretrain).unwrap();
    let loss0 = first
        .losses
        .iter()
        .find(|(n, _)| *n == "pixel_composed")
        .unwrap()
        .1;
    let mut last = loss0;
    for _ in 0..99 {
        let r = t.train_step(&batch, Stage::Pretrain).unwrap();
        last = r.losses.iter().find(|(n, _)| *n == "pixel_composed").unwrap().1;
    }
    assert!(
        last <= loss0 * 0.5,
        "composed pixel loss {loss0} -> {last}, expected at least a halving"
    );
}

#[test]
fn gan_step_updates_discriminator_not_classifier() {
    let data = tiny_dataset(3);
    let ds = Dataset::load(data.path()).unwrap();
    let samples: Vec<_> = (0..2).map(|i| ds.sample(i).unwrap()).collect();
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    let cfg = tiny_train_cfg(&data);
    let mut t = Trainer::new(&cfg).unwrap();
    let disc_before: Vec<Vec<Elem>> = t.disc_params().iter().map(|(_, p)| p.data()).collect();
    let cls_before: Vec<Vec<Elem>> =
        t.models.classifier.params().iter().map(|(_, p)| p.data()).collect();
    t.train_step(&batch, Stage::Gan).unwrap();
    let disc_after: Vec<Vec<Elem>> = t.disc_params().iter().map(|(_, p)| p.data()).collect();
    let cls_after: Vec<Vec<Elem>> =
        t.models.classifier.params().iter().map(|(_, p)| p.data()).collect();
    assert!(disc_before != disc_after, "discriminators did not move");
    assert_eq!(cls_before, cls_after, "classifier must stay frozen");
}

#[test]
fn pretrain_leaves_discriminator_untouched() {
    let data = tiny_dataset(3);
    let ds = Dataset::load(data.path()).unwrap();
    let samples = vec![ds.sample(0).unwrap()];
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    let mut t = Trainer::new(&tiny_train_cfg(&data)).unwrap();
    let before: Vec<Vec<Elem>> = t.disc_params().iter().map(|(_, p)| p.data()).collect();
    t.train_step(&batch, Stage::Pretrain).unwrap();
    let after: Vec<Vec<Elem>> = t.disc_params().iter().map(|(_, p)| p.data()).collect();
    assert_eq!(before, after);
}

#[test]
fn refine_without_classifier_is_config_error() {
    let data = tiny_dataset(2);
    let ds = Dataset::load(data.path()).unwrap();
    let samples = vec![ds.sample(0).unwrap()];
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    let mut t = Trainer::new(&tiny_train_cfg(&data)).unwrap();
    match t.train_step(&batch, Stage::Refine) {
        Err(Error::Config(_)) => {}
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_bit_exact() {
    let data = tiny_dataset(3);
    let ds = Dataset::load(data.path()).unwrap();
    let samples: Vec<_> = (0..2).map(|i| ds.sample(i).unwrap()).collect();
    let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
    let cfg = tiny_train_cfg(&data);
    let mut t = Trainer::new(&cfg).unwrap();
    t.train_step(&batch, Stage::Pretrain).unwrap();
    t.train_step(&batch, Stage::Gan).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&t, &path).unwrap();
    let restored = load_checkpoint(&path, &cfg).unwrap();
    assert_eq!(restored.step, t.step);
    for ((na, pa), (nb, pb)) in t.models.all_params().iter().zip(&restored.models.all_params()) {
        assert_eq!(na, nb);
        assert_eq!(pa.data(), pb.data(), "{na} not restored bit-exactly");
    }
    assert_eq!(
        t.models.disc_color.sn_state(),
        restored.models.disc_color.sn_state()
    );
    // Identical forward outputs after restore.
    let (_, c1) = model::sr_forward(&t.models, &batch.lr_layers).unwrap();
    let (_, c2) = model::sr_forward(&restored.models, &batch.lr_layers).unwrap();
    assert_eq!(c1.data(), c2.data());
}

#[test]
fn checkpoint_rejects_bad_files() {
    let data = tiny_dataset(2);
    let cfg = tiny_train_cfg(&data);
    let t = Trainer::new(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let magic = dir.path().join("magic.ckpt");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&magic, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&magic, &cfg),
        Err(Error::CheckpointMagic)
    ));

    let ver = dir.path().join("ver.ckpt");
    let mut bad = bytes.clone();
    bad[6] = 0xEE;
    std::fs::write(&ver, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&ver, &cfg),
        Err(Error::CheckpointVersion(_))
    ));

    let trunc = dir.path().join("trunc.ckpt");
    std::fs::write(&trunc, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        load_checkpoint(&trunc, &cfg),
        Err(Error::CheckpointTruncated(_))
    ));

    let mut other = cfg.clone();
    other.seed += 1;
    assert!(matches!(load_checkpoint(&path, &other), Err(Error::Config(_))));
}

#[test]
fn interrupt_and_resume_replays_exactly() {
    let data = tiny_dataset(4);
    let ds = Dataset::load(data.path()).unwrap();
    let cfg = tiny_train_cfg(&data);
    let run = |t: &mut Trainer, steps: usize| {
        for _ in 0..steps {
            let stage = Stage::for_step(&t.cfg, t.step);
            let idx = t.draw_indices(ds.len());
            let samples: Vec<_> = idx.iter().map(|&i| ds.sample(i).unwrap()).collect();
            let batch = make_batch(&samples, Backend::Oracle, None).unwrap();
            t.train_step(&batch, stage).unwrap();
        }
    };
    let mut straight = Trainer::new(&cfg).unwrap();
    run(&mut straight, 4);

    let mut partial = Trainer::new(&cfg).unwrap();
    run(&mut partial, 2);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&partial, &path).unwrap();
    let mut resumed = load_checkpoint(&path, &cfg).unwrap();
    run(&mut resumed, 2);

    assert_eq!(resumed.step, straight.step);
    for ((name, pa), (_, pb)) in straight
        .models
        .all_params()
        .iter()
        .zip(&resumed.models.all_params())
    {
        assert_eq!(pa.data(), pb.data(), "{name} diverged after resume");
    }
}

#[test]
fn net_checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = CharClassifier::init(&mut rng);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cls.ckpt");
    save_net_checkpoint(&path, &c.params()).unwrap();
    let loaded = load_classifier(&path).unwrap();
    for ((na, pa), (_, pb)) in c.params().iter().zip(&loaded.params()) {
        assert_eq!(pa.data(), pb.data(), "{na}");
    }
}

#[test]
fn classifier_training_smoke() {
    let data = tiny_dataset(20);
    let cfg = TrainConfig {
        classifier_steps: 30,
        ..tiny_train_cfg(&data)
    };
    let (c, acc) = train_classifier(&cfg).unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(c.param_count() > 0);
    // Determinism: a rerun produces identical parameters.
    let (c2, acc2) = train_classifier(&cfg).unwrap();
    assert_eq!(acc, acc2);
    for ((na, pa), (_, pb)) in c.params().iter().zip(&c2.params()) {
        assert_eq!(pa.data(), pb.data(), "{na}");
    }
}

#[test]
fn matting_training_smoke() {
    let data = tiny_dataset(12);
    let cfg = TrainConfig {
        matting_steps: 10,
        ..tiny_train_cfg(&data)
    };
    let (net, mae) = train_matting(&cfg).unwrap();
    assert!(mae.is_finite() && mae >= 0.0);
    // The learned decomposition pipeline runs end to end on an LR image.
    let ds = Dataset::load(data.path()).unwrap();
    let s = ds.sample(0).unwrap();
    let layers = decompose_learned(&net, &imaging::to_float(&s.lr)).unwrap();
    assert_eq!(layers.alpha.shape(), vec![1, 1, 16, 16]);
}

#[test]
fn pseudo_alpha_rejects_constant_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = MattingNet::init(&mut rng);
    let flat = Tensor::full(&[1, 3, 8, 8], 0.5);
    assert!(matches!(
        decompose_learned(&net, &flat),
        Err(Error::DegenerateInput(_))
    ));
}

#[test]
fn stage_schedule_boundaries() {
    let cfg = TrainConfig {
        pretrain_steps: 3,
        gan_steps: 2,
        refine_steps: 1,
        ..TrainConfig::default()
    };
    assert_eq!(Stage::for_step(&cfg, 0), Stage::Pretrain);
    assert_eq!(Stage::for_step(&cfg, 2), Stage::Pretrain);
    assert_eq!(Stage::for_step(&cfg, 3), Stage::Gan);
    assert_eq!(Stage::for_step(&cfg, 4), Stage::Gan);
    assert_eq!(Stage::for_step(&cfg, 5), Stage::Refine);
    assert_eq!(cfg.total_steps(), 6);
}
