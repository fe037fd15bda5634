//! Structural encoder: a multi-head graph attention network over the
//! training graph, pretrained with a margin ranking objective on the L1
//! translation energy `‖h + r − t‖₁`. Only the entity outputs are kept;
//! they become the frozen structural modality.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{corrupt_triples, Modality, ModalityFeatures, Triple};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

pub use crate::tensor::Neighborhoods;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    /// Output width `d_s`.
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// Hinge margin γ.
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives drawn per positive.
    pub negatives: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            layers: 2,
            heads: 2,
            leaky_slope: 0.2,
            margin: 1.0,
            epochs: 100,
            batch_size: 1024,
            negatives: 1,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config(
                "GAT dim, layers, heads, batch size and negatives must be positive".into(),
            ));
        }
        if self.layers > 1 && !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden GAT layers split dim {} across {} heads; it must divide evenly",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Undirected training adjacency with mandatory self-loops, neighbors sorted.
pub fn build_neighborhoods(num_entities: usize, train: &[Triple]) -> Result<Neighborhoods> {
    let mut lists: Vec<Vec<usize>> = (0..num_entities).map(|i| vec![i]).collect();
    for t in train {
        if t.head >= num_entities || t.tail >= num_entities {
            return Err(Error::Data(format!(
                "triple {t:?} references an entity outside 0..{num_entities}"
            )));
        }
        lists[t.head].push(t.tail);
        lists[t.tail].push(t.head);
    }
    for l in &mut lists {
        l.sort_unstable();
        l.dedup();
    }
    Neighborhoods::from_lists(&lists)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    /// One `d_in × d_head` projection per head.
    pub weights: Vec<Tensor>,
    /// One `2·d_head` attention vector per head.
    pub attention: Vec<Tensor>,
    /// Hidden layers concatenate heads; the output layer averages them.
    pub concat: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    /// Learned input embedding per entity, `|E| × d_s`.
    pub input: Tensor,
    pub layers: Vec<GatLayer>,
    /// Relation translations for the energy, `|R| × d_s`. Discarded after pretraining.
    pub relations: Tensor,
    pub leaky_slope: f64,
}

impl GatParams {
    pub fn init(num_entities: usize, num_relations: usize, config: &GatConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let input = Tensor::xavier_uniform(&[num_entities, d], rng);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let last = l + 1 == config.layers;
            let d_head = if last { d } else { d / config.heads };
            let weights = (0..config.heads)
                .map(|_| Tensor::xavier_uniform(&[d, d_head], rng))
                .collect();
            let attention = (0..config.heads)
                .map(|_| Tensor::xavier_uniform(&[1, 2 * d_head], rng).reshape(&[2 * d_head]))
                .collect::<Result<_>>()?;
            layers.push(GatLayer {
                weights,
                attention,
                concat: !last,
            });
        }
        let relations = Tensor::xavier_uniform(&[num_relations.max(1), d], rng);
        Ok(Self {
            input,
            layers,
            relations,
            leaky_slope: config.leaky_slope,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input];
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.attention.iter());
        }
        out.push(&self.relations);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input];
        for l in &mut self.layers {
            out.extend(l.weights.iter_mut());
            out.extend(l.attention.iter_mut());
        }
        out.push(&mut self.relations);
        out
    }
}

/// Tape handles for every [`GatParams`] tensor, in [`GatParams::tensors`] order.
pub struct GatVars {
    pub all: Vec<Var>,
    pub input: Var,
    layers: Vec<(Vec<Var>, Vec<Var>, bool)>,
    pub relations: Var,
}

impl GatVars {
    pub fn register(tape: &mut Tape, params: &GatParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let input = leaf(&params.input);
        let mut all = vec![input];
        let mut layers = Vec::new();
        for l in &params.layers {
            let w: Vec<Var> = l.weights.iter().map(&mut leaf).collect();
            let a: Vec<Var> = l.attention.iter().map(&mut leaf).collect();
            all.extend(&w);
            all.extend(&a);
            layers.push((w, a, l.concat));
        }
        let relations = leaf(&params.relations);
        all.push(relations);
        Self {
            all,
            input,
            layers,
            relations,
        }
    }
}

/// Multi-head GAT forward over the whole graph. Hidden layers concatenate
/// heads, the output layer averages them; every layer ends in ELU.
pub fn gat_forward(tape: &mut Tape, graph: &Arc<Neighborhoods>, vars: &GatVars, slope: f64) -> Result<Var> {
    let mut x = vars.input;
    for (weights, attention, concat) in &vars.layers {
        let mut heads = Vec::with_capacity(weights.len());
        for (&w, &a) in weights.iter().zip(attention) {
            let hw = tape.matmul(x, w)?;
            heads.push(tape.graph_attention(hw, a, graph, slope)?);
        }
        let merged = if *concat {
            tape.concat_cols(&heads)?
        } else {
            let mut acc = heads[0];
            for &h in &heads[1..] {
                acc = tape.add(acc, h)?;
            }
            tape.scale(acc, 1.0 / heads.len() as f64)?
        };
        x = tape.elu(merged)?;
    }
    Ok(x)
}

/// L1 translation energy `‖h + r − t‖₁`.
pub fn energy(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(Error::shape("energy", &[h.len(), r.len()], &[t.len()]));
    }
    Ok(h.iter().zip(r).zip(t).map(|((a, b), c)| (a + b - c).abs()).sum())
}

/// Mean over aligned pairs of `max(0, γ + E(pos) − E(neg))`.
pub fn hinge_loss(pos: &[f64], neg: &[f64], margin: f64) -> Result<f64> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::shape("hinge_loss", &[pos.len()], &[neg.len()]));
    }
    let total: f64 = pos.iter().zip(neg).map(|(p, n)| (margin + p - n).max(0.0)).sum();
    Ok(total / pos.len() as f64)
}

/// Per-triple energies on the tape, shape `[batch]`.
pub fn energy_on_tape(tape: &mut Tape, emb: Var, rel: Var, triples: &[Triple]) -> Result<Var> {
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let h = tape.gather_rows(emb, &heads)?;
    let r = tape.gather_rows(rel, &rels)?;
    let t = tape.gather_rows(emb, &tails)?;
    let hr = tape.add(h, r)?;
    let diff = tape.sub(hr, t)?;
    let a = tape.abs(diff)?;
    tape.sum_rows(a)
}

/// Margin loss on the tape for aligned positive / negative batches.
pub fn hinge_on_tape(tape: &mut Tape, emb: Var, rel: Var, pos: &[Triple], neg: &[Triple], margin: f64) -> Result<Var> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::shape("hinge_loss", &[pos.len()], &[neg.len()]));
    }
    let ep = energy_on_tape(tape, emb, rel, pos)?;
    let en = energy_on_tape(tape, emb, rel, neg)?;
    let diff = tape.sub(ep, en)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.mean(hinge)
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub features: ModalityFeatures,
    pub params: GatParams,
    /// Mean hinge loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean hinge loss over the training split before any update.
    pub initial_loss: f64,
}

/// Entity embeddings for the current parameters, without gradients.
pub fn embed(graph: &Arc<Neighborhoods>, params: &GatParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = GatVars::register(&mut tape, params, false);
    let out = gat_forward(&mut tape, graph, &vars, params.leaky_slope)?;
    Ok(tape.value(out).clone())
}

fn full_hinge(
    graph: &Arc<Neighborhoods>,
    params: &GatParams,
    pos: &[Triple],
    neg: &[Triple],
    margin: f64,
) -> Result<f64> {
    let emb = embed(graph, params)?;
    let e = |t: &Triple| energy(emb.row(t.head), params.relations.row(t.relation), emb.row(t.tail));
    let ep = pos.iter().map(e).collect::<Result<Vec<_>>>()?;
    let en = neg.iter().map(e).collect::<Result<Vec<_>>>()?;
    hinge_loss(&ep, &en, margin)
}

/// Pretrains the encoder on `train` and returns the frozen structural features.
/// Deterministic for a fixed `config.seed`.
pub fn pretrain(num_entities: usize, num_relations: usize, train: &[Triple], config: &GatConfig) -> Result<Pretrained> {
    config.validate()?;
    let graph = Arc::new(build_neighborhoods(num_entities, train)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = GatParams::init(num_entities, num_relations, config, &mut rng)?;
    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let initial_loss = if train.is_empty() || num_entities < 2 {
        0.0
    } else {
        let neg = corrupt_triples(train, num_entities, &mut rng)?;
        full_hinge(&graph, &params, train, &neg, config.margin)?
    };

    let mut order: Vec<Triple> = train.to_vec();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if order.is_empty() {
            break;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let pos: Vec<Triple> = batch
                .iter()
                .flat_map(|t| std::iter::repeat_n(*t, config.negatives))
                .collect();
            let neg = corrupt_triples(&pos, num_entities, &mut rng)?;
            let mut tape = Tape::new();
            let vars = GatVars::register(&mut tape, &params, true);
            let emb = gat_forward(&mut tape, &graph, &vars, params.leaky_slope)?;
            let loss = hinge_on_tape(&mut tape, emb, vars.relations, &pos, &neg, config.margin)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("structural hinge loss became {value}"),
                });
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .all
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.get_or_zeros(v, t))
                .collect();
            opt.step(&mut params.tensors_mut(), &g)?;
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }

    let matrix = embed(&graph, &params)?;
    let features = ModalityFeatures::new(Modality::Structural, matrix)?;
    Ok(Pretrained {
        features,
        params,
        epoch_losses,
        initial_loss,
    })
}
