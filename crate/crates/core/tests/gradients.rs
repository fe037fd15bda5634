mod common;

use common::{relative_error, rng, toy, toy_config, STEP};
use imf_core::fusion::{contrastive_on_tape, fuse_on_tape, project_on_tape, MODALITY_PAIRS};
use imf_core::model::{Ablation, ModelConfig};
use imf_core::scorer::ScorerKind;
use imf_core::{Tape, Tensor};

const TOLERANCE: f64 = 1e-4;

fn check(config: ModelConfig, seed: u64) {
    let label = format!(
        "{} {} scale={} barrier={}",
        config.ablation, config.scorer, config.cosine_scale, config.weight_barrier
    );
    let (err, at) = toy(config, seed).worst_gradient_error();
    assert!(err <= TOLERANCE, "{label}: relative error {err:e} at {at}");
}

#[test]
fn joint_loss_gradients_every_ablation() {
    for (i, a) in Ablation::ALL.into_iter().enumerate() {
        check(toy_config(a), 10 + i as u64);
    }
}

#[test]
fn joint_loss_gradients_alternate_scorers() {
    for kind in [ScorerKind::Transe, ScorerKind::Distmult] {
        check(
            ModelConfig {
                scorer: kind,
                ..toy_config(Ablation::SVT)
            },
            3,
        );
    }
}

#[test]
fn joint_loss_gradients_with_scale_barrier_and_split_relations() {
    check(
        ModelConfig {
            cosine_scale: 7.0,
            weight_barrier: 0.3,
            share_relations: false,
            ..toy_config(Ablation::SVT)
        },
        4,
    );
}

/// Generic finite-difference check of a scalar function of several leaves.
fn check_leaves(leaves: &[Tensor], f: impl Fn(&mut Tape, &[imf_core::Var]) -> imf_core::Var) {
    let eval = |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    for (k, leaf) in leaves.iter().enumerate() {
        let g = grads.get_or_zeros(vars[k], leaf);
        for i in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = leaves.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let err = relative_error(g.data()[i], numeric);
            assert!(err <= TOLERANCE, "leaf {k}[{i}]: {} vs {numeric}", g.data()[i]);
        }
    }
}

#[test]
fn contrastive_gradients_match_finite_differences() {
    let mut r = rng(21);
    let views: Vec<Tensor> = (0..3).map(|_| Tensor::xavier_uniform(&[5, 4], &mut r)).collect();
    check_leaves(&views, |tape, v| contrastive_on_tape(tape, v, &MODALITY_PAIRS).unwrap());
}

#[test]
fn fusion_gradients_match_finite_differences() {
    let mut r = rng(22);
    let leaves = vec![
        Tensor::xavier_uniform(&[3, 4], &mut r).map(|v| v + 0.5),
        Tensor::xavier_uniform(&[4, 5], &mut r),
        Tensor::xavier_uniform(&[5, 5], &mut r),
        Tensor::xavier_uniform(&[3, 5], &mut r),
        Tensor::xavier_uniform(&[5, 5], &mut r),
    ];
    check_leaves(&leaves, |tape, v| {
        let z = project_on_tape(tape, v[0], v[1]).unwrap();
        let fused = fuse_on_tape(tape, &[z, v[3]], &[v[2], v[4]]).unwrap();
        let sq = tape.mul(fused, fused).unwrap();
        tape.sum(sq).unwrap()
    });
}
