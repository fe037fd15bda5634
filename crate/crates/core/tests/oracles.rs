mod common;

use std::collections::{BTreeSet, HashMap};

use common::{rank_bounds, rng, tucker_reference};
use imf_core::data::{FilterIndex, Modality, Query, Triple, TripleStore};
use imf_core::eval::{evaluate, rank_one, Metrics};
use imf_core::fusion::fuse;
use imf_core::model::{Ablation, Features, ImfModel, ModelConfig, ModelMeta, QueryScorer};
use imf_core::scorer::{
    alternate_score, bce_from_logits, bce_loss, contextual_embed, score_all, ScoreVector, ScorerKind, ScorerParams,
};
use imf_core::tensor::sigmoid;
use imf_core::trainer::DecisionWeights;
use imf_core::Tensor;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn contextual_embedding_matches_index_loop() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (d, d_r, n_rel) = (r.gen_range(1..6), r.gen_range(1..5), r.gen_range(1..4));
        let params = ScorerParams {
            context: Tensor::xavier_uniform(&[d, d_r, d], &mut r),
            bias: Tensor::vector((0..d).map(|_| r.gen_range(-1.0..1.0)).collect()),
        };
        let relations = Tensor::xavier_uniform(&[n_rel, d_r], &mut r);
        let e: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let rel = r.gen_range(0..n_rel);
        let got = contextual_embed(&e, rel, &relations, &params).unwrap();
        let w = params.context.data();
        for o in 0..d {
            let mut want = params.bias.data()[o];
            for (i, &x) in e.iter().enumerate() {
                for l in 0..d_r {
                    want += x * w[(i * d_r + l) * d + o] * relations.get2(rel, l);
                }
            }
            assert!(close(got[o], want, 1e-12), "{} vs {want}", got[o]);
        }
    }
}

#[test]
fn six_entity_scores_from_model_parameters() {
    let mut r = rng(2);
    let meta = ModelMeta {
        config: ModelConfig {
            dim: 4,
            rel_dim: 3,
            ablation: Ablation::S,
            ..ModelConfig::default()
        },
        num_entities: 6,
        num_relations: 2,
        feature_widths: [5, 0, 0],
    };
    let model = ImfModel::init(meta, &mut r).unwrap();
    let f = Tensor::xavier_uniform(&[6, 5], &mut r);
    let snap = model
        .snapshot(&Features::new().with(Modality::Structural, f.clone()).unwrap())
        .unwrap();
    let table = f.matmul(model.params.get("adapt.s").unwrap()).unwrap();
    let params = ScorerParams {
        context: model.params.get("ctx.s").unwrap().clone(),
        bias: model.params.get("bias.s").unwrap().clone(),
    };
    let rel = model.params.get("rel").unwrap();
    for q in [Query::tail(1, 0), Query::head(4, 1)] {
        let e_hat = contextual_embed(table.row(q.entity), q.relation_slot(2), rel, &params).unwrap();
        let want = score_all(&e_hat, &table).unwrap();
        let got = &snap.modality_scores(&q).unwrap()[0];
        for (a, b) in got.values().iter().zip(want.values()) {
            assert!(close(*a, *b, 1e-12));
        }
        // a single scorer with unit weight predicts its own scores
        let joint = snap.predict(&q).unwrap();
        assert_eq!(joint.values(), got.values());
    }
}

#[test]
fn binary_cross_entropy_hand_values() {
    let y = ScoreVector::new(vec![0.5]).unwrap();
    assert!(close(bce_loss(&y, &[1.0]).unwrap(), std::f64::consts::LN_2, 1e-15));
    let y = ScoreVector::new(vec![0.9, 0.2]).unwrap();
    let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    assert!(close(bce_loss(&y, &[1.0, 0.0]).unwrap(), want, 1e-15));
    // the logit form agrees with the probability form, including soft targets
    let logits = [-3.0, 0.2, 4.5];
    let targets = [0.1, 1.0, 0.95];
    let probs = ScoreVector::new(logits.iter().map(|&x| sigmoid(x)).collect()).unwrap();
    assert!(close(
        bce_from_logits(&logits, &targets),
        bce_loss(&probs, &targets).unwrap(),
        1e-12
    ));
}

#[test]
fn alternate_scorer_hand_values() {
    let head = [1.0, 0.0];
    let rel = [0.5, 2.0];
    let cands = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, -1.0]]).unwrap();
    let dm = alternate_score(ScorerKind::Distmult, &head, &rel, &cands).unwrap();
    assert!(close(dm.values()[0], sigmoid(0.5), 1e-15));
    assert!(close(dm.values()[1], 0.5, 1e-15));
    let te = alternate_score(ScorerKind::Transe, &head, &rel, &cands).unwrap();
    assert!(close(te.values()[0], sigmoid(-1.5), 1e-15));
    assert!(close(te.values()[1], sigmoid(-4.5), 1e-15));
}

#[test]
fn two_modality_fusion_is_three_way_with_ones() {
    let mut r = rng(3);
    let a = Tensor::xavier_uniform(&[3, 4], &mut r);
    let b = Tensor::xavier_uniform(&[2, 4], &mut r);
    let za = [0.3, 1.2, 0.0];
    let zb = [0.7, 0.4];
    let two = fuse(&[&za, &zb], &[&a, &b]).unwrap();
    // an all-ones third factor through an identity core leaves the product unchanged
    let three = tucker_reference([&za, &zb, &[1.0; 4]], [&a, &b, &Tensor::eye(4)]);
    for (x, y) in two.iter().zip(&three) {
        assert!(close(*x, *y, 1e-12));
    }
}

#[test]
fn metrics_from_known_ranks() {
    let m = Metrics::from_ranks([1, 2, 10, 11]).unwrap();
    assert!(close(m.mr, 6.0, 1e-12));
    assert!(close(m.mrr, (1.0 + 0.5 + 0.1 + 1.0 / 11.0) / 4.0, 1e-12));
    assert!(close(m.hits1, 25.0, 1e-12));
    assert!(close(m.hits10, 75.0, 1e-12));
    assert!(Metrics::from_ranks(std::iter::empty()).is_none());
}

#[test]
fn joint_loss_weights_each_term() {
    let mods = vec![Modality::Structural, Modality::Visual, Modality::Multimodal];
    let w = DecisionWeights::from_gammas(mods, &[0.5, 2.0, 1.0]).unwrap();
    let got = w.joint_loss(&[0.4, 0.1, 0.3], 1.5).unwrap();
    assert!(close(got, 0.5 * 0.4 + 2.0 * 0.1 + 0.3 + 1.5, 1e-12));
    assert!(w.joint_loss(&[0.4, f64::NAN, 0.3], 0.0).is_err());
}

/// Scores looked up from a table, for driving `evaluate` with known inputs.
struct Fixed {
    n: usize,
    scores: HashMap<Query, Vec<f64>>,
}

impl QueryScorer for Fixed {
    fn num_entities(&self) -> usize {
        self.n
    }

    fn score(&self, q: &Query) -> imf_core::Result<ScoreVector> {
        ScoreVector::new(self.scores[q].clone())
    }
}

#[test]
fn evaluate_agrees_with_sorting_reference() {
    let mut r = rng(4);
    for case in 0..100 {
        let n = r.gen_range(3..12);
        let rels = r.gen_range(1..3);
        let mut triples: Vec<Triple> = (0..r.gen_range(2..8))
            .map(|_| Triple::new(r.gen_range(0..n), r.gen_range(0..rels), r.gen_range(0..n)))
            .collect();
        triples.sort();
        triples.dedup();
        let split = triples.len() / 2;
        let store = TripleStore {
            train: triples[..split].to_vec(),
            valid: vec![],
            test: triples[split..].to_vec(),
        };
        let filter = FilterIndex::build(&store);
        // coarse integer-valued scores so tie groups are common
        let mut scores = HashMap::new();
        for t in &store.test {
            for q in [Query::tail(t.head, t.relation), Query::head(t.tail, t.relation)] {
                scores
                    .entry(q)
                    .or_insert_with(|| (0..n).map(|_| r.gen_range(0..4) as f64 / 4.0 * 0.9 + 0.05).collect());
            }
        }
        let scorer = Fixed { n, scores };
        let eval = evaluate(&scorer, &store.test, &filter, case).unwrap();
        assert_eq!(eval.ranks.len(), 2 * store.test.len());
        let empty = BTreeSet::new();
        for res in &eval.ranks {
            let s = &scorer.scores[&res.query];
            let answers = filter.answers(&res.query).unwrap_or(&empty);
            let (best, worst) = rank_bounds(s, res.true_entity, answers);
            assert!(
                (best..=worst).contains(&res.rank),
                "case {case}: rank {} outside {best}..={worst}",
                res.rank
            );
        }
        // same seed, same placements
        let again = evaluate(&scorer, &store.test, &filter, case).unwrap();
        assert_eq!(eval.ranks, again.ranks);
    }
}

#[test]
fn filtering_never_worsens_rank() {
    let mut r = rng(8);
    for _ in 0..500 {
        let n = r.gen_range(2..30);
        // continuous scores: no ties, so placement is deterministic
        let scores: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let truth = r.gen_range(0..n);
        let filter: BTreeSet<usize> = (0..n).filter(|_| r.gen_bool(0.3)).collect();
        let raw = rank_one(&scores, truth, None, &mut rng(0)).unwrap();
        let filtered = rank_one(&scores, truth, Some(&filter), &mut rng(0)).unwrap();
        assert!(filtered <= raw);
        assert_eq!(raw, 1 + scores.iter().filter(|&&s| s > scores[truth]).count());

        let mut raised = scores.clone();
        raised[truth] += r.gen::<f64>();
        assert!(rank_one(&raised, truth, Some(&filter), &mut rng(0)).unwrap() <= filtered);
    }
}

#[test]
fn random_scores_give_harmonic_mrr() {
    let n = 50;
    let mut r = rng(9);
    let queries = 20_000;
    let ranks: Vec<usize> = (0..queries)
        .map(|_| {
            let scores: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
            rank_one(&scores, 0, None, &mut r).unwrap()
        })
        .collect();
    let m = Metrics::from_ranks(ranks).unwrap();
    let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    // standard error is about 1.1e-3
    assert!(
        close(m.mrr, harmonic / n as f64, 5e-3),
        "{} vs {}",
        m.mrr,
        harmonic / n as f64
    );
    assert!(close(m.mr, (n as f64 + 1.0) / 2.0, 0.5), "{}", m.mr);
    assert!(close(m.hits10, 20.0, 1.0), "{}", m.hits10);
}
