mod common;

use common::rng;
use imf_core::checkpoint;
use imf_core::data::{FilterIndex, Modality, TargetsIndex, Triple, TripleStore};
use imf_core::eval::evaluate;
use imf_core::model::{Ablation, Features, ImfModel, ModelConfig, ModelMeta};
use imf_core::scorer::bce_loss;
use imf_core::trainer::{batch_targets, train, TrainConfig, TrainEvent};
use imf_core::{Error, Tensor};

/// 8 entities on two rings; relation 0 points to the next entity, relation 1 to the previous.
fn ring_store() -> TripleStore {
    let mut train = Vec::new();
    for ring in [0usize, 4] {
        for i in 0..4 {
            train.push(Triple::new(ring + i, 0, ring + (i + 1) % 4));
            train.push(Triple::new(ring + (i + 1) % 4, 1, ring + i));
        }
    }
    let valid = vec![train.pop().unwrap()];
    TripleStore {
        train,
        valid,
        test: vec![],
    }
}

fn setup(ablation: Ablation, scale: f64) -> (ModelMeta, Features) {
    let mut r = rng(8);
    let features = Features::new()
        .with(Modality::Structural, Tensor::xavier_uniform(&[8, 6], &mut r))
        .unwrap()
        .with(Modality::Visual, Tensor::xavier_uniform(&[8, 4], &mut r))
        .unwrap()
        .with(Modality::Textual, Tensor::xavier_uniform(&[8, 5], &mut r))
        .unwrap();
    let meta = ModelMeta {
        config: ModelConfig {
            dim: 8,
            rel_dim: 4,
            ablation,
            cosine_scale: scale,
            ..ModelConfig::default()
        },
        num_entities: 8,
        num_relations: 2,
        feature_widths: [6, 4, 5],
    };
    (meta, features)
}

fn mean_bce(model: &ImfModel, features: &Features, store: &TripleStore) -> f64 {
    let snap = model.snapshot(features).unwrap();
    let targets = TargetsIndex::build(&store.train);
    let queries = targets.queries();
    let t = batch_targets(&targets, &queries, 8, 0.0);
    let total: f64 = queries
        .iter()
        .enumerate()
        .map(|(i, q)| bce_loss(&snap.predict(q).unwrap(), t.row(i)).unwrap())
        .sum();
    total / queries.len() as f64
}

#[test]
fn training_halves_prediction_loss_on_eight_entities() {
    let mut store = ring_store();
    // without a validation split the returned model is the final one
    store.train.append(&mut store.valid);
    let (meta, features) = setup(Ablation::SVT, 10.0);
    let config = TrainConfig {
        epochs: 150,
        batch_size: 4,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let init = ImfModel::init(meta.clone(), &mut rng(config.seed)).unwrap();
    let before = mean_bce(&init, &features, &store);
    let out = train(meta, &features, &store, &config, &mut |_| Ok(())).unwrap();
    assert_eq!(out.best_epoch, config.epochs);
    assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    let after = mean_bce(&out.best, &features, &store);
    assert!(after <= 0.5 * before, "loss {before} -> {after}");
}

#[test]
fn same_seed_same_run() {
    let store = ring_store();
    let (meta, features) = setup(Ablation::SVT, 5.0);
    let config = TrainConfig {
        epochs: 5,
        batch_size: 3,
        lr: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(meta.clone(), &features, &store, &config, &mut |_| Ok(())).unwrap();
    let b = train(meta.clone(), &features, &store, &config, &mut |_| Ok(())).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.records, b.records);
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let c = train(meta, &features, &store, &TrainConfig { seed: 4, ..config }, &mut |_| {
        Ok(())
    })
    .unwrap();
    assert_ne!(a.epoch_losses, c.epoch_losses);
}

#[test]
fn zero_epoch_checkpoint_reproduces_initial_model() {
    let store = ring_store();
    let (meta, features) = setup(Ablation::SV, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.imfc");
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(meta.clone(), &features, &store, &config, &mut |ev| match ev {
        TrainEvent::Best { epoch, model } => checkpoint::save(&path, model, serde_json::json!({ "epoch": epoch })),
        TrainEvent::Record(_) => Ok(()),
    })
    .unwrap();
    assert_eq!(out.best_epoch, 0);
    assert!(out.epoch_losses.is_empty());
    let (loaded, header) = checkpoint::load(&path).unwrap();
    assert_eq!(header.info["epoch"], 0);
    assert_eq!(loaded, ImfModel::init(meta, &mut rng(config.seed)).unwrap());
    let filter = FilterIndex::build(&store);
    let a = evaluate(&loaded.snapshot(&features).unwrap(), &store.train, &filter, 1).unwrap();
    let b = evaluate(&out.best.snapshot(&features).unwrap(), &store.train, &filter, 1).unwrap();
    assert_eq!(a.ranks, b.ranks);
}

#[test]
fn non_finite_loss_reports_divergence() {
    let store = ring_store();
    let (meta, mut features) = setup(Ablation::S, 1.0);
    let mut bad = Tensor::zeros(&[8, 6]);
    bad.data_mut()[0] = f64::NAN;
    features.insert(Modality::Structural, bad).unwrap();
    let err = train(meta, &features, &store, &TrainConfig::default(), &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
}

#[test]
fn missing_modality_is_a_clear_error() {
    let store = ring_store();
    let (meta, _) = setup(Ablation::ST, 1.0);
    let features = Features::new()
        .with(Modality::Structural, Tensor::zeros(&[8, 6]))
        .unwrap();
    let err = train(meta, &features, &store, &TrainConfig::default(), &mut |_| Ok(())).unwrap_err();
    assert!(err.to_string().contains("textual"), "{err}");
}
