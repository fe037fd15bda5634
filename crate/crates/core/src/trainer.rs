//! Decision fusion and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FilterIndex, Modality, TargetsIndex, TripleStore};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics};
use crate::model::{Features, ImfModel, ModelMeta};
use crate::scorer::ScoreVector;
use crate::tensor::{softplus, Adam, AdamConfig, Tape, Tensor};

/// Learned positive weights `γ_k = softplus(w_k)`, one per active scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionWeights {
    modalities: Vec<Modality>,
    raw: Vec<f64>,
}

impl DecisionWeights {
    /// `ln(e − 1)`, the raw value for which `softplus` gives exactly 1.
    pub const UNIT_RAW: f64 = 0.541_324_854_612_918_1;

    pub fn from_raw(modalities: Vec<Modality>, raw: Vec<f64>) -> Result<Self> {
        if modalities.len() != raw.len() || raw.is_empty() {
            return Err(Error::shape("decision_weights", &[modalities.len()], &[raw.len()]));
        }
        Ok(Self { modalities, raw })
    }

    pub fn unit(modalities: Vec<Modality>) -> Result<Self> {
        let raw = vec![Self::UNIT_RAW; modalities.len()];
        Self::from_raw(modalities, raw)
    }

    /// Inverse of the softplus map; every `γ` must be positive.
    pub fn from_gammas(modalities: Vec<Modality>, gammas: &[f64]) -> Result<Self> {
        if let Some(bad) = gammas.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::Domain {
                op: "decision_weights",
                detail: format!("weight {bad} is not positive"),
            });
        }
        // ln(e^γ − 1) rewritten to stay finite for large γ
        let raw = gammas.iter().map(|&g| g + (-(-g).exp_m1()).ln()).collect();
        Self::from_raw(modalities, raw)
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.raw.iter().map(|&w| softplus(w)).collect()
    }

    /// `Σ γ_k L_k + L_CL`.
    pub fn joint_loss(&self, losses: &[f64], contrastive: f64) -> Result<f64> {
        if losses.len() != self.raw.len() {
            return Err(Error::shape("joint_loss", &[losses.len()], &[self.raw.len()]));
        }
        for (m, l) in self.modalities.iter().zip(losses) {
            if !l.is_finite() {
                return Err(Error::Domain {
                    op: "joint_loss",
                    detail: format!("{} loss is {l}", m.name()),
                });
            }
        }
        if !contrastive.is_finite() {
            return Err(Error::Domain {
                op: "joint_loss",
                detail: format!("contrastive loss is {contrastive}"),
            });
        }
        Ok(self.gammas().iter().zip(losses).map(|(g, l)| g * l).sum::<f64>() + contrastive)
    }

    /// `Σ γ_k y_k / Σ γ_k`.
    pub fn joint_predict(&self, scores: &[ScoreVector]) -> Result<ScoreVector> {
        if scores.len() != self.raw.len() {
            return Err(Error::shape("joint_predict", &[scores.len()], &[self.raw.len()]));
        }
        let n = scores[0].len();
        if let Some(bad) = scores.iter().find(|s| s.len() != n) {
            return Err(Error::shape("joint_predict", &[n], &[bad.len()]));
        }
        let gammas = self.gammas();
        let total: f64 = gammas.iter().sum();
        let mut out = vec![0.0; n];
        for (g, y) in gammas.iter().zip(scores) {
            let w = g / total;
            out.iter_mut().zip(y.values()).for_each(|(o, v)| *o += w * v);
        }
        // rounding can leave a convex combination a hair outside [0, 1]
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        ScoreVector::new(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Multiplier on the contrastive term.
    pub contrastive_weight: f64,
    pub label_smoothing: f64,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Stop after this many validations without a better MRR.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            contrastive_weight: 1.0,
            label_smoothing: 0.0,
            eval_every: 1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.contrastive_weight >= 0.0) {
            return Err(Error::Config("contrastive_weight must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    #[serde(rename = "MR")]
    pub mr: Option<f64>,
    #[serde(rename = "MRR")]
    pub mrr: Option<f64>,
    #[serde(rename = "H@1")]
    pub hits1: Option<f64>,
    #[serde(rename = "H@10")]
    pub hits10: Option<f64>,
    pub loss: Option<f64>,
}

impl LogRecord {
    pub fn loss(epoch: usize, split: &str, loss: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            mr: None,
            mrr: None,
            hits1: None,
            hits10: None,
            loss: Some(loss),
        }
    }

    pub fn metrics(epoch: usize, split: &str, m: &Metrics) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            mr: Some(m.mr),
            mrr: Some(m.mrr),
            hits1: Some(m.hits1),
            hits10: Some(m.hits10),
            loss: None,
        }
    }
}

pub enum TrainEvent<'a> {
    Record(&'a LogRecord),
    /// A new best model; epoch 0 is the initialization.
    Best {
        epoch: usize,
        model: &'a ImfModel,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the best validation MRR (the last one when there is no validation split).
    pub best: ImfModel,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    /// Joint loss of the first batch before any update.
    pub initial_loss: Option<f64>,
    /// Mean joint loss per trained epoch.
    pub epoch_losses: Vec<f64>,
    pub records: Vec<LogRecord>,
    pub stopped_early: bool,
}

/// Multi-hot targets for a batch, optionally smoothed toward `1/|E|`.
pub fn batch_targets(
    targets: &TargetsIndex,
    queries: &[crate::data::Query],
    num_entities: usize,
    smoothing: f64,
) -> Tensor {
    let base = smoothing / num_entities as f64;
    let mut data = vec![base; queries.len() * num_entities];
    for (row, q) in data.chunks_mut(num_entities).zip(queries) {
        if let Some(answers) = targets.answers(q) {
            for &e in answers {
                row[e] = 1.0 - smoothing + base;
            }
        }
    }
    Tensor::new(&[queries.len(), num_entities], data).expect("sized above")
}

/// Initializes a model from `train_config.seed` and trains it.
pub fn train(
    meta: ModelMeta,
    features: &Features,
    store: &TripleStore,
    config: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = ImfModel::init(meta, &mut rng)?;
    fit(model, features, store, config, &mut rng, observer)
}

fn fit(
    mut model: ImfModel,
    features: &Features,
    store: &TripleStore,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = model.meta.num_entities;
    features.check(model.config().ablation, n)?;
    store.validate(n, model.meta.num_relations)?;
    let targets = TargetsIndex::build(&store.train);
    let filter = FilterIndex::build(store);
    let mut queries = targets.queries();
    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    observer(TrainEvent::Best {
        epoch: 0,
        model: &model,
    })?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_mrr: Option<f64> = None;
    let mut stale = 0usize;
    let mut initial_loss = None;
    let mut epoch_losses = Vec::new();
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        if queries.is_empty() {
            break;
        }
        queries.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, batch) in queries.chunks(config.batch_size).enumerate() {
            let t = batch_targets(&targets, batch, n, config.label_smoothing);
            let mut seen = std::collections::BTreeSet::new();
            let cl_entities: Vec<usize> = batch.iter().map(|q| q.entity).filter(|e| seen.insert(*e)).collect();
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let fwd = model.loss_on_tape(
                &mut tape,
                &vars,
                features,
                batch,
                &t,
                &cl_entities,
                config.contrastive_weight,
            )?;
            let value = tape.value(fwd.total).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("joint loss became {value}"),
                });
            }
            initial_loss.get_or_insert(value);
            let grads = tape.backward(fwd.total)?;
            let g: Vec<Tensor> = vars
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, p)| grads.get_or_zeros(v, p))
                .collect();
            opt.step(&mut model.params.tensors_mut(), &g)?;
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: "parameters became non-finite after an update".into(),
                });
            }
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        epoch_losses.push(mean);
        let rec = LogRecord::loss(epoch, "train", mean);
        observer(TrainEvent::Record(&rec))?;
        records.push(rec);

        if store.valid.is_empty() {
            best = model.clone();
            best_epoch = epoch;
            observer(TrainEvent::Best { epoch, model: &model })?;
            continue;
        }
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let snap = model.snapshot(features)?;
        let report = evaluate(&snap, &store.valid, &filter, config.seed)?.report;
        let rec = LogRecord::metrics(epoch, "valid", &report.both);
        observer(TrainEvent::Record(&rec))?;
        records.push(rec);
        if best_mrr.is_none_or(|b| report.both.mrr > b) {
            best_mrr = Some(report.both.mrr);
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
            observer(TrainEvent::Best { epoch, model: &model })?;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_mrr: best_mrr,
        initial_loss,
        epoch_losses,
        records,
        stopped_early,
    })
}
