#![allow(dead_code)]

use imf_core::data::{Modality, Query};
use imf_core::model::{Ablation, Features, ImfModel, ModelConfig, ModelMeta};
use imf_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 4 entities, 2 relations, feature widths 4/6/8.
pub struct Toy {
    pub model: ImfModel,
    pub features: Features,
    pub queries: Vec<Query>,
    pub targets: Tensor,
    pub contrastive: Vec<usize>,
}

pub fn toy(config: ModelConfig, seed: u64) -> Toy {
    let mut r = rng(seed);
    let meta = ModelMeta {
        config,
        num_entities: 4,
        num_relations: 2,
        feature_widths: [4, 6, 8],
    };
    let mut model = ImfModel::init(meta, &mut r).unwrap();
    // move decision weights and biases off their symmetric initial values
    let raw = [0.2, 0.9, -0.4, 1.3];
    for (name, t) in model
        .params
        .names()
        .to_vec()
        .into_iter()
        .zip(model.params.tensors_mut())
    {
        if name == "gamma" {
            let len = t.len();
            t.data_mut().copy_from_slice(&raw[..len]);
        } else if name.starts_with("bias") {
            let len = t.len();
            *t = Tensor::xavier_uniform(&[1, len], &mut r).reshape(&[len]).unwrap();
        }
    }
    let feats = |r: &mut ChaCha8Rng, w: usize| Tensor::xavier_uniform(&[4, w], r).map(|v| v * 3.0);
    let features = Features::new()
        .with(Modality::Structural, feats(&mut r, 4))
        .unwrap()
        .with(Modality::Visual, feats(&mut r, 6))
        .unwrap()
        .with(Modality::Textual, feats(&mut r, 8))
        .unwrap();
    let queries = vec![Query::tail(0, 0), Query::head(2, 1), Query::tail(3, 1)];
    let targets = Tensor::new(
        &[3, 4],
        vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    )
    .unwrap();
    Toy {
        model,
        features,
        queries,
        targets,
        contrastive: vec![0, 2, 3],
    }
}

pub fn toy_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        dim: 5,
        rel_dim: 3,
        ablation,
        ..ModelConfig::default()
    }
}

impl Toy {
    pub fn loss(&self, model: &ImfModel) -> f64 {
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let fwd = model
            .loss_on_tape(
                &mut tape,
                &vars,
                &self.features,
                &self.queries,
                &self.targets,
                &self.contrastive,
                1.0,
            )
            .unwrap();
        tape.value(fwd.total).item().unwrap()
    }

    pub fn gradients(&self) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let vars = self.model.register(&mut tape);
        let fwd = self
            .model
            .loss_on_tape(
                &mut tape,
                &vars,
                &self.features,
                &self.queries,
                &self.targets,
                &self.contrastive,
                1.0,
            )
            .unwrap();
        let grads = tape.backward(fwd.total).unwrap();
        vars.iter()
            .zip(self.model.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }

    /// Largest relative error between reverse-mode and central-difference
    /// gradients over every parameter element, with the offending name.
    pub fn worst_gradient_error(&self) -> (f64, String) {
        let analytic = self.gradients();
        let mut worst = (0.0, String::new());
        for (p, name) in self.model.params.names().iter().enumerate() {
            for i in 0..self.model.params.tensors()[p].len() {
                let mut plus = self.model.clone();
                plus.params.tensors_mut()[p].data_mut()[i] += STEP;
                let mut minus = self.model.clone();
                minus.params.tensors_mut()[p].data_mut()[i] -= STEP;
                let numeric = (self.loss(&plus) - self.loss(&minus)) / (2.0 * STEP);
                let err = relative_error(analytic[p].data()[i], numeric);
                if err > worst.0 {
                    worst = (err, format!("{name}[{i}]: {} vs {numeric}", analytic[p].data()[i]));
                }
            }
        }
        worst
    }
}

/// `|a − b| / max(|a|, |b|)`, with an absolute floor so that two
/// vanishing gradients compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        return (a - b).abs();
    }
    (a - b).abs() / scale
}

/// Fusion through an explicitly materialised 4-mode core
/// `W[i, j, l, o] = A[i, o] B[j, o] C[l, o]`, contracted index by index.
pub fn tucker_reference(z: [&[f64]; 3], cores: [&Tensor; 3]) -> Vec<f64> {
    let [a, b, c] = cores;
    let t_d = a.cols();
    let (n0, n1, n2) = (z[0].len(), z[1].len(), z[2].len());
    let mut w = vec![0.0; n0 * n1 * n2 * t_d];
    for i in 0..n0 {
        for j in 0..n1 {
            for l in 0..n2 {
                for o in 0..t_d {
                    w[((i * n1 + j) * n2 + l) * t_d + o] = a.get2(i, o) * b.get2(j, o) * c.get2(l, o);
                }
            }
        }
    }
    let mut out = vec![0.0; t_d];
    for (o, slot) in out.iter_mut().enumerate() {
        for i in 0..n0 {
            for j in 0..n1 {
                for l in 0..n2 {
                    *slot += w[((i * n1 + j) * n2 + l) * t_d + o] * z[0][i] * z[1][j] * z[2][l];
                }
            }
        }
    }
    out
}

/// Rank bounds of `truth` by sorting the unfiltered candidates: the
/// optimistic and pessimistic positions of its tie group.
pub fn rank_bounds(scores: &[f64], truth: usize, filter: &std::collections::BTreeSet<usize>) -> (usize, usize) {
    let mut kept: Vec<(f64, usize)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(i, _)| i == truth || !filter.contains(&i))
        .map(|(i, s)| (s, i))
        .collect();
    kept.sort_by(|x, y| y.0.total_cmp(&x.0));
    let target = scores[truth];
    let first = kept.iter().position(|&(s, _)| s == target).unwrap();
    let last = kept.iter().rposition(|&(s, _)| s == target).unwrap();
    (first + 1, last + 1)
}
