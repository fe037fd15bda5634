//! The full two-stage model: per-modality adapters, latent fusion, the four
//! relation-conditioned scorers and the learned decision weights.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, Modality, Query};
use crate::error::{Error, Result};
use crate::fusion::{contrastive_on_tape, fuse_on_tape, MODALITY_PAIRS};
use crate::scorer::{logits_on_tape, ScoreVector, ScorerKind};
use crate::tensor::{sigmoid, Tape, Tensor, Var, NORM_EPS};
use crate::trainer::DecisionWeights;

/// Which modalities take part in a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// Structural scorer only.
    #[serde(rename = "S")]
    S,
    #[serde(rename = "S+V")]
    SV,
    #[serde(rename = "S+T")]
    ST,
    /// The full model.
    #[default]
    #[serde(rename = "S+V+T")]
    SVT,
    /// Fused scorer only, no decision fusion.
    #[serde(rename = "no-DF")]
    NoDf,
    /// Full model without the contrastive term.
    #[serde(rename = "no-CL")]
    NoCl,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::S,
        Ablation::SV,
        Ablation::ST,
        Ablation::SVT,
        Ablation::NoDf,
        Ablation::NoCl,
    ];

    /// Modalities fed into the latent fusion stage.
    pub fn fused(self) -> &'static [Modality] {
        use Modality::*;
        match self {
            Ablation::S => &[],
            Ablation::SV => &[Structural, Visual],
            Ablation::ST => &[Structural, Textual],
            Ablation::SVT | Ablation::NoDf | Ablation::NoCl => &[Structural, Visual, Textual],
        }
    }

    /// Modalities with their own scorer, in decision-weight order.
    pub fn scorers(self) -> &'static [Modality] {
        use Modality::*;
        match self {
            Ablation::S => &[Structural],
            Ablation::SV => &[Structural, Visual, Multimodal],
            Ablation::ST => &[Structural, Textual, Multimodal],
            Ablation::SVT | Ablation::NoCl => &[Structural, Visual, Textual, Multimodal],
            Ablation::NoDf => &[Multimodal],
        }
    }

    /// Encoded feature matrices the mode reads.
    pub fn required(self) -> Vec<Modality> {
        Modality::ENCODED
            .into_iter()
            .filter(|m| self.fused().contains(m) || self.scorers().contains(m))
            .collect()
    }

    pub fn contrastive(self) -> bool {
        !matches!(self, Ablation::S | Ablation::NoCl)
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::S => "S",
            Ablation::SV => "S+V",
            Ablation::ST => "S+T",
            Ablation::SVT => "S+V+T",
            Ablation::NoDf => "no-DF",
            Ablation::NoCl => "no-CL",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        match key.as_str() {
            "s" => Ok(Ablation::S),
            "s+v" | "sv" => Ok(Ablation::SV),
            "s+t" | "st" => Ok(Ablation::ST),
            "s+v+t" | "svt" | "full" => Ok(Ablation::SVT),
            "no-df" | "nodf" => Ok(Ablation::NoDf),
            "no-cl" | "nocl" => Ok(Ablation::NoCl),
            _ => Err(Error::Config(format!(
                "unknown ablation mode {s:?} (expected S, S+V, S+T, S+V+T, no-DF or no-CL)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Shared width `D` of latents, fused embeddings and scorer inputs.
    pub dim: usize,
    /// Relation embedding width for the contextual scorer.
    pub rel_dim: usize,
    pub scorer: ScorerKind,
    pub ablation: Ablation,
    /// One relation table for every scorer, or one per scorer.
    pub share_relations: bool,
    /// Multiplier on the cosine before the sigmoid in the contextual scorer.
    pub cosine_scale: f64,
    /// Coefficient `β` of the `−β Σ ln γ_k` term that keeps decision weights
    /// from collapsing to zero; 0 disables it.
    pub weight_barrier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            rel_dim: 64,
            scorer: ScorerKind::Contextual,
            ablation: Ablation::SVT,
            share_relations: true,
            cosine_scale: 1.0,
            weight_barrier: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.rel_dim == 0 {
            return Err(Error::Config("dim and rel_dim must be positive".into()));
        }
        if !(self.cosine_scale > 0.0) || !self.cosine_scale.is_finite() {
            return Err(Error::Config(format!(
                "cosine_scale must be positive, got {}",
                self.cosine_scale
            )));
        }
        if !(self.weight_barrier >= 0.0) || !self.weight_barrier.is_finite() {
            return Err(Error::Config(format!(
                "weight_barrier must be non-negative, got {}",
                self.weight_barrier
            )));
        }
        Ok(())
    }

    /// TransE and DistMult combine entity and relation elementwise, so their
    /// relation rows are `D` wide.
    pub fn relation_width(&self) -> usize {
        match self.scorer {
            ScorerKind::Contextual => self.rel_dim,
            _ => self.dim,
        }
    }
}

/// Frozen encoder outputs, shared cheaply between tapes and threads.
#[derive(Clone, Debug, Default)]
pub struct Features {
    mats: [Option<Arc<Tensor>>; 3],
}

impl Features {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, modality: Modality, matrix: Tensor) -> Result<Self> {
        self.insert(modality, matrix)?;
        Ok(self)
    }

    pub fn insert(&mut self, modality: Modality, matrix: Tensor) -> Result<()> {
        if modality == Modality::Multimodal {
            return Err(Error::Config("the multimodal embedding is computed, not loaded".into()));
        }
        matrix.dims2()?;
        self.mats[modality.index()] = Some(Arc::new(matrix));
        Ok(())
    }

    pub fn get(&self, modality: Modality) -> Option<&Arc<Tensor>> {
        self.mats.get(modality.index()).and_then(Option::as_ref)
    }

    pub fn width(&self, modality: Modality) -> Option<usize> {
        self.get(modality).map(|t| t.cols())
    }

    fn require(&self, modality: Modality) -> Result<&Arc<Tensor>> {
        self.get(modality).ok_or_else(|| {
            Error::Data(format!(
                "{} features are required but were not provided",
                modality.name()
            ))
        })
    }

    /// Checks that every modality the mode reads is present with `num_entities` rows.
    pub fn check(&self, ablation: Ablation, num_entities: usize) -> Result<()> {
        for m in ablation.required() {
            let t = self.require(m)?;
            if t.rows() != num_entities {
                return Err(Error::Data(format!(
                    "{} features have {} rows, expected {num_entities}",
                    m.name(),
                    t.rows()
                )));
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Logic(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Logic(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self
            .position(name)
            .ok_or_else(|| Error::Logic(format!("no parameter named {name}")))?;
        Ok(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Shape information needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub num_entities: usize,
    pub num_relations: usize,
    /// Input widths of the structural, visual and textual features (0 when unused).
    pub feature_widths: [usize; 3],
}

enum Init {
    Xavier,
    Zeros,
    Filled(f64),
}

impl ModelMeta {
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let c = &self.config;
        let d = c.dim;
        let mut out = Vec::new();
        for &m in c.ablation.fused() {
            out.push((
                format!("proj.{m}"),
                vec![self.feature_widths[m.index()], d],
                Init::Xavier,
            ));
            out.push((format!("core.{m}"), vec![d, d], Init::Xavier));
        }
        for &m in c.ablation.scorers() {
            if m != Modality::Multimodal {
                out.push((
                    format!("adapt.{m}"),
                    vec![self.feature_widths[m.index()], d],
                    Init::Xavier,
                ));
            }
        }
        let rel_shape = vec![2 * self.num_relations, c.relation_width()];
        if c.share_relations {
            out.push(("rel".to_string(), rel_shape, Init::Xavier));
        } else {
            for &m in c.ablation.scorers() {
                out.push((format!("rel.{m}"), rel_shape.clone(), Init::Xavier));
            }
        }
        if c.scorer == ScorerKind::Contextual {
            for &m in c.ablation.scorers() {
                out.push((format!("ctx.{m}"), vec![d, c.rel_dim, d], Init::Xavier));
                out.push((format!("bias.{m}"), vec![d], Init::Zeros));
            }
        }
        out.push((
            "gamma".to_string(),
            vec![c.ablation.scorers().len()],
            Init::Filled(DecisionWeights::UNIT_RAW),
        ));
        out
    }

    /// `(name, shape)` of every parameter, in storage order.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layout().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.num_entities == 0 || self.num_relations == 0 {
            return Err(Error::Config("model needs at least one entity and one relation".into()));
        }
        for m in self.config.ablation.required() {
            if self.feature_widths[m.index()] == 0 {
                return Err(Error::Config(format!("{} feature width is zero", m.name())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImfModel {
    pub meta: ModelMeta,
    pub params: Params,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    pub total: Var,
    /// Per-scorer BCE losses, in decision-weight order.
    pub losses: Vec<(Modality, Var)>,
    pub contrastive: Option<Var>,
}

fn relation_key(config: &ModelConfig, m: Modality) -> String {
    if config.share_relations {
        "rel".to_string()
    } else {
        format!("rel.{m}")
    }
}

impl ImfModel {
    pub fn init<R: Rng + ?Sized>(meta: ModelMeta, rng: &mut R) -> Result<Self> {
        meta.validate()?;
        let mut params = Params::default();
        for (name, shape, init) in meta.layout() {
            let t = match init {
                Init::Xavier => Tensor::xavier_uniform(&shape, rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Filled(v) => Tensor::filled(&shape, v),
            };
            params.push(name, t)?;
        }
        Ok(Self { meta, params })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_params(meta: ModelMeta, params: Params) -> Result<Self> {
        meta.validate()?;
        let expected = meta.expected_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (have, t)) in expected.iter().zip(params.iter()) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {name} {shape:?}, found {have} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { meta, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn decision_weights(&self) -> Result<DecisionWeights> {
        let raw = self.params.get("gamma")?.data().to_vec();
        DecisionWeights::from_raw(self.config().ablation.scorers().to_vec(), raw)
    }

    /// Registers every parameter as a trainable leaf, in storage order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        self.params
            .position(name)
            .and_then(|i| vars.get(i).copied())
            .ok_or_else(|| Error::Logic(format!("no parameter named {name}")))
    }

    /// Candidate tables `E_k` (`|E| × D`) for every scorer, plus the fused
    /// modality latents when the mode fuses.
    fn tables_on_tape(&self, tape: &mut Tape, vars: &[Var], features: &Features) -> Result<(Vec<Var>, Vec<Var>)> {
        let ablation = self.config().ablation;
        let mut latents = Vec::new();
        let mut cores = Vec::new();
        for &m in ablation.fused() {
            let f = features.require(m)?;
            let z = tape.fixed_matmul(f, self.var(vars, &format!("proj.{m}"))?)?;
            latents.push(tape.relu(z)?);
            cores.push(self.var(vars, &format!("core.{m}"))?);
        }
        let fused = if latents.is_empty() {
            None
        } else {
            Some(fuse_on_tape(tape, &latents, &cores)?)
        };
        let mut tables = Vec::new();
        for &m in ablation.scorers() {
            let t = match m {
                Modality::Multimodal => fused.ok_or_else(|| Error::Logic("fused scorer without fusion".into()))?,
                _ => {
                    let f = features.require(m)?;
                    tape.fixed_matmul(f, self.var(vars, &format!("adapt.{m}"))?)?
                }
            };
            tables.push(t);
        }
        Ok((tables, latents))
    }

    /// Joint training loss for a batch of queries.
    ///
    /// `targets` is `B × |E|` (already smoothed if requested); the
    /// contrastive term is computed over `contrastive_entities` and scaled
    /// by `contrastive_weight`, and skipped when the weight is zero or the
    /// mode does not fuse.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: &Features,
        queries: &[Query],
        targets: &Tensor,
        contrastive_entities: &[usize],
        contrastive_weight: f64,
    ) -> Result<Forward> {
        let config = self.config();
        let n = self.meta.num_entities;
        if queries.is_empty() {
            return Err(Error::Data("empty query batch".into()));
        }
        if targets.shape() != [queries.len(), n] {
            return Err(Error::shape("loss_on_tape", targets.shape(), &[queries.len(), n]));
        }
        let (tables, latents) = self.tables_on_tape(tape, vars, features)?;
        let entities: Vec<usize> = queries.iter().map(|q| q.entity).collect();
        let slots: Vec<usize> = queries
            .iter()
            .map(|q| q.relation_slot(self.meta.num_relations))
            .collect();

        let gamma_raw = self.var(vars, "gamma")?;
        let gamma = tape.softplus(gamma_raw)?;
        let mut losses = Vec::new();
        let mut total: Option<Var> = None;
        for (k, (&m, &table)) in config.ablation.scorers().iter().zip(&tables).enumerate() {
            let rel = self.var(vars, &relation_key(config, m))?;
            let rel_rows = tape.gather_rows(rel, &slots)?;
            let q = tape.gather_rows(table, &entities)?;
            let context = match config.scorer {
                ScorerKind::Contextual => Some((
                    self.var(vars, &format!("ctx.{m}"))?,
                    self.var(vars, &format!("bias.{m}"))?,
                )),
                _ => None,
            };
            let logits = logits_on_tape(tape, config.scorer, q, rel_rows, table, context, config.cosine_scale)?;
            let loss = tape.bce_with_logits(logits, targets)?;
            let g = tape.select(gamma, k)?;
            let weighted = tape.mul(g, loss)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
            losses.push((m, loss));
        }
        let mut total = total.ok_or_else(|| Error::Logic("mode has no scorers".into()))?;
        if config.weight_barrier > 0.0 {
            let log_gamma = tape.log(gamma)?;
            let sum = tape.sum(log_gamma)?;
            let barrier = tape.scale(sum, -config.weight_barrier)?;
            total = tape.add(total, barrier)?;
        }

        let mut contrastive = None;
        if config.ablation.contrastive() && contrastive_weight != 0.0 && latents.len() >= 2 {
            if contrastive_entities.is_empty() {
                return Err(Error::Data("contrastive batch is empty".into()));
            }
            let views: Vec<Var> = latents
                .iter()
                .map(|&z| tape.gather_rows(z, contrastive_entities))
                .collect::<Result<_>>()?;
            let pairs: &[(usize, usize)] = if views.len() == 3 { &MODALITY_PAIRS } else { &[(0, 1)] };
            let cl = contrastive_on_tape(tape, &views, pairs)?;
            let scaled = tape.scale(cl, contrastive_weight)?;
            total = tape.add(total, scaled)?;
            contrastive = Some(cl);
        }
        Ok(Forward {
            total,
            losses,
            contrastive,
        })
    }

    /// Read-only view for scoring: entity tables computed once.
    pub fn snapshot(&self, features: &Features) -> Result<Snapshot> {
        features.check(self.config().ablation, self.meta.num_entities)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let (tables, _) = self.tables_on_tape(&mut tape, &vars, features)?;
        let config = self.config().clone();
        let mut scorers = Vec::new();
        for (&m, &table) in config.ablation.scorers().iter().zip(&tables) {
            let table = tape.value(table).clone();
            let norms = table
                .data()
                .chunks(config.dim)
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS))
                .collect();
            let (context, bias) = match config.scorer {
                ScorerKind::Contextual => (
                    Some(self.params.get(&format!("ctx.{m}"))?.clone()),
                    Some(self.params.get(&format!("bias.{m}"))?.clone()),
                ),
                _ => (None, None),
            };
            scorers.push(ModalityScorer {
                modality: m,
                scale: config.cosine_scale,
                table,
                norms,
                relations: self.params.get(&relation_key(&config, m))?.clone(),
                context,
                bias,
            });
        }
        Ok(Snapshot {
            kind: config.scorer,
            num_relations: self.meta.num_relations,
            weights: self.decision_weights()?,
            scorers,
        })
    }
}

struct ModalityScorer {
    modality: Modality,
    scale: f64,
    table: Tensor,
    norms: Vec<f64>,
    relations: Tensor,
    context: Option<Tensor>,
    bias: Option<Tensor>,
}

impl ModalityScorer {
    fn contextual(&self, entity: usize, slot: usize) -> Result<Vec<f64>> {
        let (Some(w), Some(b)) = (&self.context, &self.bias) else {
            return Err(Error::Logic("contextual embedding needs the contextual scorer".into()));
        };
        let e = self.table.row(entity);
        let r = self.relations.row(slot);
        let d = e.len();
        let d_r = r.len();
        let w = w.data();
        let mut out = b.data().to_vec();
        for (i, &x) in e.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (l, &rv) in r.iter().enumerate() {
                let c = x * rv;
                let src = &w[(i * d_r + l) * d..(i * d_r + l + 1) * d];
                out.iter_mut().zip(src).for_each(|(o, &v)| *o += c * v);
            }
        }
        Ok(out)
    }

    fn scores(&self, kind: ScorerKind, entity: usize, slot: usize) -> Result<ScoreVector> {
        let n = self.table.rows();
        let values = match kind {
            ScorerKind::Contextual => {
                let q = self.contextual(entity, slot)?;
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                (0..n)
                    .map(|i| {
                        let dot: f64 = self.table.row(i).iter().zip(&q).map(|(a, b)| a * b).sum();
                        sigmoid(self.scale * dot / (self.norms[i] * qn))
                    })
                    .collect()
            }
            ScorerKind::Transe => {
                let h = self.table.row(entity);
                let r = self.relations.row(slot);
                let shifted: Vec<f64> = h.iter().zip(r).map(|(a, b)| a + b).collect();
                (0..n)
                    .map(|i| {
                        let dist: f64 = shifted.iter().zip(self.table.row(i)).map(|(a, b)| (a - b).abs()).sum();
                        sigmoid(-dist)
                    })
                    .collect()
            }
            ScorerKind::Distmult => {
                let h = self.table.row(entity);
                let r = self.relations.row(slot);
                let hr: Vec<f64> = h.iter().zip(r).map(|(a, b)| a * b).collect();
                (0..n)
                    .map(|i| sigmoid(hr.iter().zip(self.table.row(i)).map(|(a, b)| a * b).sum()))
                    .collect()
            }
        };
        ScoreVector::new(values)
    }
}

/// Something that can score every candidate entity for a query.
pub trait QueryScorer: Sync {
    fn num_entities(&self) -> usize;
    fn score(&self, query: &Query) -> Result<ScoreVector>;
}

/// Frozen model state for inference; cheap to share across threads.
pub struct Snapshot {
    kind: ScorerKind,
    num_relations: usize,
    weights: DecisionWeights,
    scorers: Vec<ModalityScorer>,
}

impl Snapshot {
    pub fn weights(&self) -> &DecisionWeights {
        &self.weights
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.scorers.iter().map(|s| s.modality).collect()
    }

    fn scorer(&self, modality: Modality) -> Result<&ModalityScorer> {
        self.scorers
            .iter()
            .find(|s| s.modality == modality)
            .ok_or_else(|| Error::Config(format!("no {} scorer in this model", modality.name())))
    }

    fn check_query(&self, q: &Query) -> Result<usize> {
        let n = self.num_entities();
        if q.entity >= n || q.relation >= self.num_relations {
            return Err(Error::Domain {
                op: "score",
                detail: format!("query ({}, {}) outside model vocabulary", q.entity, q.relation),
            });
        }
        Ok(q.relation_slot(self.num_relations))
    }

    /// Entity table `E_k` used by one scorer.
    pub fn entity_table(&self, modality: Modality) -> Result<&Tensor> {
        Ok(&self.scorer(modality)?.table)
    }

    /// Contextual embedding `ê_k` of an entity under a relation and direction.
    pub fn contextual_embedding(
        &self,
        modality: Modality,
        entity: usize,
        relation: usize,
        direction: Direction,
    ) -> Result<Vec<f64>> {
        let q = Query {
            entity,
            relation,
            direction,
        };
        let slot = self.check_query(&q)?;
        self.scorer(modality)?.contextual(entity, slot)
    }

    /// Per-scorer probabilities for one query, in decision-weight order.
    pub fn modality_scores(&self, q: &Query) -> Result<Vec<ScoreVector>> {
        let slot = self.check_query(q)?;
        self.scorers
            .iter()
            .map(|s| s.scores(self.kind, q.entity, slot))
            .collect()
    }

    /// Decision-fused prediction.
    pub fn predict(&self, q: &Query) -> Result<ScoreVector> {
        let ys = self.modality_scores(q)?;
        self.weights.joint_predict(&ys)
    }

    pub fn predict_batch(&self, queries: &[Query]) -> Result<Vec<ScoreVector>> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

impl QueryScorer for Snapshot {
    fn num_entities(&self) -> usize {
        self.scorers.first().map_or(0, |s| s.table.rows())
    }

    fn score(&self, query: &Query) -> Result<ScoreVector> {
        self.predict(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta(ablation: Ablation) -> ModelMeta {
        ModelMeta {
            config: ModelConfig {
                dim: 3,
                rel_dim: 2,
                ablation,
                ..ModelConfig::default()
            },
            num_entities: 4,
            num_relations: 2,
            feature_widths: [2, 3, 4],
        }
    }

    #[test]
    fn ablation_parsing_round_trips() {
        for a in Ablation::ALL {
            assert_eq!(a.label().parse::<Ablation>().unwrap(), a);
        }
        assert!("S+X".parse::<Ablation>().is_err());
    }

    #[test]
    fn structural_only_layout_has_no_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ImfModel::init(meta(Ablation::S), &mut rng).unwrap();
        let names: Vec<&str> = m.params.names().iter().map(String::as_str).collect();
        assert_eq!(names, ["adapt.s", "rel", "ctx.s", "bias.s", "gamma"]);
        assert_eq!(m.params.get("gamma").unwrap().shape(), [1]);
    }

    #[test]
    fn unit_decision_weights_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ImfModel::init(meta(Ablation::SVT), &mut rng).unwrap();
        let w = m.decision_weights().unwrap();
        for g in w.gammas() {
            assert!((g - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.params.get("rel").unwrap().shape(), [4, 2]);
        assert_eq!(m.params.get("ctx.m").unwrap().shape(), [3, 2, 3]);
    }

    #[test]
    fn from_params_rejects_foreign_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = ImfModel::init(meta(Ablation::SVT), &mut rng).unwrap();
        assert!(ImfModel::from_params(meta(Ablation::S), full.params.clone()).is_err());
        assert!(ImfModel::from_params(meta(Ablation::SVT), full.params).is_ok());
    }

    #[test]
    fn missing_features_named() {
        let f = Features::new()
            .with(Modality::Structural, Tensor::zeros(&[4, 2]))
            .unwrap();
        let err = f.check(Ablation::SV, 4).unwrap_err().to_string();
        assert!(err.contains("visual"), "{err}");
        assert!(f.check(Ablation::S, 4).is_ok());
        assert!(f.check(Ablation::S, 5).is_err());
    }

    #[test]
    fn snapshot_matches_training_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ImfModel::init(meta(Ablation::SVT), &mut rng).unwrap();
        let features = Features::new()
            .with(Modality::Structural, Tensor::xavier_uniform(&[4, 2], &mut rng))
            .unwrap()
            .with(Modality::Visual, Tensor::xavier_uniform(&[4, 3], &mut rng))
            .unwrap()
            .with(Modality::Textual, Tensor::xavier_uniform(&[4, 4], &mut rng))
            .unwrap();
        let queries = [Query::tail(0, 1), Query::head(3, 0)];
        let targets = Tensor::new(&[2, 4], vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let fwd = model
            .loss_on_tape(&mut tape, &vars, &features, &queries, &targets, &[0, 3], 1.0)
            .unwrap();
        let snap = model.snapshot(&features).unwrap();
        for (k, &(m, loss)) in fwd.losses.iter().enumerate() {
            let mut total = 0.0;
            for (qi, q) in queries.iter().enumerate() {
                let y = &snap.modality_scores(q).unwrap()[k];
                total += crate::scorer::bce_loss(y, targets.row(qi)).unwrap();
            }
            let eager = total / queries.len() as f64;
            let taped = tape.value(loss).item().unwrap();
            assert!((eager - taped).abs() < 1e-12, "{m}: {eager} vs {taped}");
        }
    }
}
