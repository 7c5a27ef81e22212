use depthgaze::datagen::{generate_synthetic, DomainStyle, SynthSpec};
use depthgaze::losses::LossTerm;
use depthgaze::model::ModelBatch;
use depthgaze::train::{
    fit, fit_with, load_checkpoint, prepare, save_checkpoint, FitData, Selection, TrainBatch, TrainConfig,
    TrainMode, Trainer,
};
use depthgaze::{DomainRole, LossWeighting, ModelConfig, Sample};

fn data(n: usize, seed: u64, style: DomainStyle) -> Vec<Sample> {
    generate_synthetic(&SynthSpec::new(32, n, seed, style)).unwrap()
}

fn small_model() -> ModelConfig {
    let mut m = ModelConfig::toy(32, 8);
    m.heatmap_size = 16;
    m
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 1e-3,
        selection: Selection::Last,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_bytes_are_stable_and_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let train = data(8, 1, DomainStyle::StyleA);
    let (trainer, _) = fit::<f32>(
        &small_model(),
        &small_train(1),
        FitData {
            train: &train,
            val: &train,
            target: None,
        },
        TrainMode::Plain,
        None,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&trainer, &a).unwrap();
    save_checkpoint(&trainer, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let loaded: Trainer<f32> = load_checkpoint(&a).unwrap();
    let cfg = trainer.model.config();
    let prepared = prepare(&train, cfg).unwrap();
    let batch = ModelBatch::<f32>::from_inputs(&prepared.iter().map(|p| &p.input).collect::<Vec<_>>()).unwrap();
    let before = trainer.model.predict(&batch).unwrap();
    let after = loaded.model.predict(&batch).unwrap();
    for (x, y) in before.iter().zip(&after) {
        assert_eq!(x.inout_logit.to_bits(), y.inout_logit.to_bits());
        assert!(x.heatmap.data().iter().zip(y.heatmap.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let c = dir.path().join("c.ckpt");
    save_checkpoint(&loaded, &c).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let train = data(8, 2, DomainStyle::StyleA);
    let val = data(4, 3, DomainStyle::StyleA);
    let fd = FitData {
        train: &train,
        val: &val,
        target: None,
    };
    let (full, full_rec) = fit::<f32>(&small_model(), &small_train(2), fd, TrainMode::Plain, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    fit::<f32>(&small_model(), &small_train(1), fd, TrainMode::Plain, Some(dir.path())).unwrap();
    let mut resumed: Trainer<f32> = load_checkpoint(&dir.path().join("last.ckpt")).unwrap();
    resumed.config.epochs = 2;
    let rec = fit_with(&mut resumed, fd, TrainMode::Plain, Some(dir.path())).unwrap();

    assert_eq!(rec.epochs.last().unwrap().losses, full_rec.epochs.last().unwrap().losses);
    for ((_, name, a), (_, _, b)) in full.model.params.iter().zip(resumed.model.params.iter()) {
        assert_eq!(a.data(), b.data(), "{name}");
    }
}

#[test]
fn da_with_zero_coupling_matches_plain_training() {
    let source = data(8, 4, DomainStyle::StyleA);
    let target: Vec<Sample> = generate_synthetic(&SynthSpec::new(32, 8, 5, DomainStyle::StyleB).with_role(DomainRole::Target)).unwrap();
    let mut base = small_model();
    base.loss_weighting = LossWeighting::Fixed;
    base.grl_lambda = 0.0;
    let mut da_cfg = base.clone();
    da_cfg.da_enabled = true;
    let tc = small_train(1)
        .with_weight(LossTerm::InOut, 0.0)
        .with_weight(LossTerm::RgbToDepth, 0.0)
        .with_weight(LossTerm::DepthToRgb, 0.0);

    let mut plain = Trainer::<f64>::new(&base, &tc).unwrap();
    let mut da = Trainer::<f64>::new(&da_cfg, &tc).unwrap();
    let src = prepare(&source, &base).unwrap();
    let tgt = prepare(&target, &base).unwrap();
    for step in 0..6 {
        let lo = (step * 4) % 8;
        let sb = TrainBatch::<f64>::from_prepared(&src[lo..lo + 4].iter().collect::<Vec<_>>()).unwrap();
        let tb = TrainBatch::<f64>::from_prepared(&tgt[lo..lo + 4].iter().collect::<Vec<_>>()).unwrap();
        let a = plain.train_step(&sb).unwrap();
        let b = da.da_train_step(&sb, &tb).unwrap();
        let (ha, hb) = (a.term(LossTerm::Heatmap).unwrap(), b.term(LossTerm::Heatmap).unwrap());
        assert!((ha - hb).abs() <= 1e-9, "step {step}: {ha} vs {hb}");
    }
}

#[test]
fn fit_record_tracks_epochs() {
    let train = data(8, 6, DomainStyle::StyleA);
    let val = data(4, 7, DomainStyle::StyleA);
    let dir = tempfile::tempdir().unwrap();
    let mut tc = small_train(2);
    tc.selection = Selection::BestAuc;
    let (_, rec) = fit::<f32>(
        &small_model(),
        &tc,
        FitData {
            train: &train,
            val: &val,
            target: None,
        },
        TrainMode::Plain,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(rec.epochs.len(), 2);
    assert!(rec.epochs.iter().all(|e| e.val_auc.is_some() && e.losses.contains_key("heatmap")));
    assert!(rec.best_epoch.is_some());
    assert!(rec.checkpoint_path.unwrap().exists());
    assert_eq!(rec.final_metrics.evaluated, val.len());
    assert!(dir.path().join("last.ckpt").exists());
}

#[test]
fn da_training_rejects_missing_target() {
    let train = data(4, 8, DomainStyle::StyleA);
    let mut cfg = small_model();
    cfg.da_enabled = true;
    let err = fit::<f32>(
        &cfg,
        &small_train(1),
        FitData {
            train: &train,
            val: &train,
            target: None,
        },
        TrainMode::Da,
        None,
    );
    assert!(err.is_err());
}
