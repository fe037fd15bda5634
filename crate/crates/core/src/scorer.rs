//! Per-modality relation-conditioned scoring.
//!
//! The contextual scorer contracts a 3-mode weight tensor with the relation
//! embedding to get an entity transformation, maps the query entity through
//! it, and scores every candidate by `sigmoid(cosine)`. TransE and DistMult
//! are available as drop-in replacements with the same output contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tape, Tensor, Var, NORM_EPS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Contextual,
    Transe,
    Distmult,
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contextual" | "crm" => Ok(ScorerKind::Contextual),
            "transe" => Ok(ScorerKind::Transe),
            "distmult" => Ok(ScorerKind::Distmult),
            other => Err(Error::Config(format!("unknown scorer kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScorerKind::Contextual => "contextual",
            ScorerKind::Transe => "transe",
            ScorerKind::Distmult => "distmult",
        })
    }
}

/// Per-candidate probabilities for one query, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain {
                op: "score_vector",
                detail: format!("score {bad} outside [0, 1]"),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Learnable pieces of one modality's contextual scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    /// `W_k`, stored `[D, d_r, D]`: input unit, relation unit, output unit.
    pub context: Tensor,
    /// `b_k`, length `D`.
    pub bias: Tensor,
}

/// Contextual transformation `W_k^r = W_k ×₃ r` as a `D × D` matrix.
pub fn contextual_matrix(context: &Tensor, relation: &[f64]) -> Result<Tensor> {
    let [d, d_r, d2] = context.shape() else {
        return Err(Error::shape("contextual_matrix", context.shape(), &[0, 0, 0]));
    };
    let (d, d_r, d2) = (*d, *d_r, *d2);
    if relation.len() != d_r || d != d2 {
        return Err(Error::shape("contextual_matrix", context.shape(), &[relation.len()]));
    }
    let w = context.data();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for (l, &r) in relation.iter().enumerate() {
            let src = &w[(i * d_r + l) * d..(i * d_r + l + 1) * d];
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(src) {
                *o += v * r;
            }
        }
    }
    Tensor::new(&[d, d], out)
}

/// `ê = eᵀ · W^r + b` with `r = relations[rel_id]`.
pub fn contextual_embed(e: &[f64], rel_id: usize, relations: &Tensor, params: &ScorerParams) -> Result<Vec<f64>> {
    if rel_id >= relations.rows() {
        return Err(Error::Domain {
            op: "contextual_embed",
            detail: format!("relation id {rel_id} outside 0..{}", relations.rows()),
        });
    }
    let wr = contextual_matrix(&params.context, relations.row(rel_id))?;
    let d = wr.rows();
    if e.len() != d || params.bias.len() != d {
        return Err(Error::shape("contextual_embed", &[e.len()], wr.shape()));
    }
    let mut out = params.bias.data().to_vec();
    for (i, &x) in e.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(wr.row(i)) {
            *o += x * w;
        }
    }
    Ok(out)
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORM_EPS);
    dot / (nu * nv)
}

/// `y[i] = sigmoid(cos(E[i], ê))` for every candidate row of `candidates`.
pub fn score_all(contextual: &[f64], candidates: &Tensor) -> Result<ScoreVector> {
    let (n, d) = candidates.dims2()?;
    if d != contextual.len() {
        return Err(Error::shape("score_all", &[contextual.len()], candidates.shape()));
    }
    ScoreVector::new((0..n).map(|i| sigmoid(cosine(candidates.row(i), contextual))).collect())
}

/// Mean binary cross-entropy over candidates.
pub fn bce_loss(scores: &ScoreVector, targets: &[f64]) -> Result<f64> {
    let y = scores.values();
    if y.len() != targets.len() || y.is_empty() {
        return Err(Error::shape("bce_loss", &[y.len()], &[targets.len()]));
    }
    let total: f64 = y
        .iter()
        .zip(targets)
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum();
    Ok(total / y.len() as f64)
}

/// TransE (`σ(−‖h + r − t‖₁)`) or DistMult (`σ(Σ h⊙r⊙t)`) over all candidates.
pub fn alternate_score(kind: ScorerKind, head: &[f64], relation: &[f64], candidates: &Tensor) -> Result<ScoreVector> {
    let (n, d) = candidates.dims2()?;
    if head.len() != d || relation.len() != d {
        return Err(Error::shape(
            "alternate_score",
            &[head.len(), relation.len()],
            candidates.shape(),
        ));
    }
    let values = match kind {
        ScorerKind::Transe => (0..n)
            .map(|i| {
                let dist: f64 = head
                    .iter()
                    .zip(relation)
                    .zip(candidates.row(i))
                    .map(|((h, r), t)| (h + r - t).abs())
                    .sum();
                sigmoid(-dist)
            })
            .collect(),
        ScorerKind::Distmult => (0..n)
            .map(|i| {
                let s: f64 = head
                    .iter()
                    .zip(relation)
                    .zip(candidates.row(i))
                    .map(|((h, r), t)| h * r * t)
                    .sum();
                sigmoid(s)
            })
            .collect(),
        ScorerKind::Contextual => {
            return Err(Error::Config("contextual is not an alternate scorer".into()));
        }
    };
    ScoreVector::new(values)
}

/// Pre-sigmoid candidate scores on the tape, shape `B × N`.
///
/// `queries: B × D` are the query-entity embeddings, `relations: B × d`
/// the gathered relation rows, `candidates: N × D` the entity table.
/// `context` (`[D, d_r, D]`) and `bias` are required for the contextual kind,
/// whose cosines are multiplied by `cosine_scale`.
pub fn logits_on_tape(
    tape: &mut Tape,
    kind: ScorerKind,
    queries: Var,
    relations: Var,
    candidates: Var,
    context: Option<(Var, Var)>,
    cosine_scale: f64,
) -> Result<Var> {
    match kind {
        ScorerKind::Contextual => {
            let (w, b) = context.ok_or_else(|| Error::Config("contextual scorer needs W and b".into()))?;
            let shape = tape.value(w).shape().to_vec();
            let [d, d_r, d_out] = shape.as_slice() else {
                return Err(Error::shape("contextual scorer", &shape, &[0, 0, 0]));
            };
            let flat = tape.reshape(w, &[d * d_r, *d_out])?;
            let outer = tape.outer_rows(queries, relations)?;
            let transformed = tape.matmul(outer, flat)?;
            let ctx = tape.add_row(transformed, b)?;
            let q = tape.normalize_rows(ctx)?;
            let c = tape.normalize_rows(candidates)?;
            let ct = tape.transpose(c)?;
            let cos = tape.matmul(q, ct)?;
            if cosine_scale == 1.0 {
                Ok(cos)
            } else {
                tape.scale(cos, cosine_scale)
            }
        }
        ScorerKind::Transe => {
            let shifted = tape.add(queries, relations)?;
            let dist = tape.l1_dist_all(shifted, candidates)?;
            tape.neg(dist)
        }
        ScorerKind::Distmult => {
            let hr = tape.mul(queries, relations)?;
            let ct = tape.transpose(candidates)?;
            tape.matmul(hr, ct)
        }
    }
}

/// Mean BCE of `sigmoid(logits)` against targets, evaluated without a tape.
pub fn bce_from_logits(logits: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = logits.iter().zip(targets).map(|(&x, &t)| softplus(x) - t * x).sum();
    total / logits.len().max(1) as f64
}
