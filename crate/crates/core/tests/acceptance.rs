//! Acceptance checks, one PASS/FAIL line each. Exits non-zero when any fails.
//!
//! A8 only runs when `A8_DATASET_DIR` points at a prepared FB15K-237 directory
//! with precomputed feature files; it reports metrics and never fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{rank_bounds, rng, toy, toy_config, tucker_reference};
use imf_core::data::{default_feature_path, load_features, Dataset, FilterIndex, MissingFill, Modality};
use imf_core::eval::{evaluate, query_rng, rank_one};
use imf_core::fusion::{contrastive_loss, contrastive_on_tape, fuse, MODALITY_PAIRS};
use imf_core::model::{Ablation, Features, ModelConfig, ModelMeta};
use imf_core::scorer::ScoreVector;
use imf_core::synthetic::{generate, RunSettings, SyntheticConfig};
use imf_core::trainer::{train, DecisionWeights, TrainConfig};
use imf_core::{Tape, Tensor};
use rand::Rng;

/// Valid MRR of the full model, seed 0, on the default synthetic graph, measured once.
const A7_CALIBRATED_MRR: f64 = 0.715;
const A7_TOLERANCE: f64 = 0.05;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn a1_gradients() -> Outcome {
    let t = Instant::now();
    let configs = [
        toy_config(Ablation::SVT),
        ModelConfig {
            cosine_scale: 20.0,
            weight_barrier: 0.1,
            ..toy_config(Ablation::SVT)
        },
    ];
    let mut worst = 0.0f64;
    for (i, config) in configs.into_iter().enumerate() {
        let (err, at) = toy(config, 100 + i as u64).worst_gradient_error();
        ensure(err <= 1e-4, || format!("relative error {err:e} at {at}"))?;
        worst = worst.max(err);
    }
    within(t.elapsed(), 10)?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn a2_fusion() -> Outcome {
    let t = Instant::now();
    let mut r = rng(200);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let t_d = r.gen_range(1..=6);
        let widths: Vec<usize> = (0..3).map(|_| r.gen_range(1..=6)).collect();
        let z: Vec<Vec<f64>> = widths
            .iter()
            .map(|&w| (0..w).map(|_| r.gen_range(0.0..2.0)).collect())
            .collect();
        let cores: Vec<Tensor> = widths
            .iter()
            .map(|&w| Tensor::xavier_uniform(&[w, t_d], &mut r))
            .collect();
        let got = fuse(&[&z[0], &z[1], &z[2]], &[&cores[0], &cores[1], &cores[2]]).map_err(|e| e.to_string())?;
        let want = tucker_reference([&z[0], &z[1], &z[2]], [&cores[0], &cores[1], &cores[2]]);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max abs error {worst:e}"))?;
    within(t.elapsed(), 5)?;
    Ok(format!("max abs error {worst:.1e} over 50 instances"))
}

fn a4_contrastive() -> Outcome {
    let mut r = rng(400);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let (n, t) = (r.gen_range(1..16), r.gen_range(1..8));
        let views: Vec<Tensor> = (0..3)
            .map(|_| Tensor::xavier_uniform(&[n, t], &mut r).map(|v| v * 4.0))
            .collect();
        let refs: Vec<&Tensor> = views.iter().collect();
        let l = contrastive_loss(&refs, &MODALITY_PAIRS).map_err(|e| e.to_string())?;
        ensure((0.0..=4.0).contains(&l), || format!("loss {l} outside [0, 4]"))?;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let row: Vec<f64> = (0..5).map(|_| r.gen_range(0.1..1.0)).collect();
    let same = Tensor::from_rows(&vec![row; 7]).map_err(|e| e.to_string())?;
    let eager = contrastive_loss(&[&same, &same, &same], &MODALITY_PAIRS).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let views: Vec<_> = (0..3).map(|_| tape.constant(same.clone())).collect();
    let cl = contrastive_on_tape(&mut tape, &views, &MODALITY_PAIRS).map_err(|e| e.to_string())?;
    let taped = tape.value(cl).item().map_err(|e| e.to_string())?;
    for v in [eager, taped] {
        ensure((v - 2.0).abs() <= 1e-12, || format!("identical batch gives {v}"))?;
    }
    Ok(format!("1000 batches in [{lo:.3}, {hi:.3}], identical batch {eager}"))
}

fn a5_ranking() -> Outcome {
    use imf_core::data::{Query, Triple, TripleStore};
    use imf_core::model::QueryScorer;
    use std::collections::{BTreeSet, HashMap};

    struct Fixed(usize, HashMap<Query, Vec<f64>>);
    impl QueryScorer for Fixed {
        fn num_entities(&self) -> usize {
            self.0
        }
        fn score(&self, q: &Query) -> imf_core::Result<ScoreVector> {
            ScoreVector::new(self.1[q].clone())
        }
    }

    let mut r = rng(500);
    let mut exact = 0usize;
    let mut tied = 0usize;
    for case in 0..100u64 {
        let n = r.gen_range(3..15);
        let mut triples: Vec<Triple> = (0..r.gen_range(2..10))
            .map(|_| Triple::new(r.gen_range(0..n), r.gen_range(0..2), r.gen_range(0..n)))
            .collect();
        triples.sort();
        triples.dedup();
        let cut = triples.len() / 2;
        let store = TripleStore {
            train: triples[..cut].to_vec(),
            valid: vec![],
            test: triples[cut..].to_vec(),
        };
        let filter = FilterIndex::build(&store);
        let mut scores = HashMap::new();
        for t in &store.test {
            for q in [Query::tail(t.head, t.relation), Query::head(t.tail, t.relation)] {
                scores
                    .entry(q)
                    .or_insert_with(|| (0..n).map(|_| f64::from(r.gen_range(0..5u8)) / 5.0).collect());
            }
        }
        let scorer = Fixed(n, scores);
        let eval = evaluate(&scorer, &store.test, &filter, case).map_err(|e| e.to_string())?;
        let empty = BTreeSet::new();
        for res in &eval.ranks {
            let s = &scorer.1[&res.query];
            let (best, worst) = rank_bounds(s, res.true_entity, filter.answers(&res.query).unwrap_or(&empty));
            ensure((best..=worst).contains(&res.rank), || {
                format!("case {case}: rank {} outside reference {best}..={worst}", res.rank)
            })?;
            if best == worst {
                exact += 1;
            } else {
                tied += 1;
            }
        }
    }

    // 3 candidates above, the truth tied with 4 others, 2 below, 2 filtered ties
    let scores = [0.9, 0.5, 0.9, 0.5, 0.1, 0.5, 0.9, 0.5, 0.5, 0.1, 0.5, 0.5];
    let truth = 1;
    let filter: BTreeSet<usize> = [10, 11].into();
    let draws = 10_000;
    let mut counts = [0usize; 12];
    for i in 0..draws {
        let rank = rank_one(&scores, truth, Some(&filter), &mut query_rng(7, i)).map_err(|e| e.to_string())?;
        counts[rank - 1] += 1;
    }
    let (best, worst) = (4, 8);
    let p = 1.0 / (worst - best + 1) as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        let rank = k + 1;
        if (best..=worst).contains(&rank) {
            let dev = (c as f64 - draws as f64 * p).abs();
            ensure(dev <= 3.0 * sigma, || {
                format!("rank {rank} drawn {c} times, {:.1} sigma off", dev / sigma)
            })?;
        } else {
            ensure(c == 0, || format!("rank {rank} outside the tie group drawn {c} times"))?;
        }
    }
    Ok(format!(
        "100 score sets ({exact} exact, {tied} tied ranks in range), tie frequencies within 3 sigma"
    ))
}

fn a6_weights() -> Outcome {
    let mods = vec![
        Modality::Structural,
        Modality::Visual,
        Modality::Textual,
        Modality::Multimodal,
    ];
    let mut r = rng(600);
    let ys: Vec<ScoreVector> = (0..4)
        .map(|_| ScoreVector::new((0..50).map(|_| r.gen_range(0.0..=1.0)).collect()).unwrap())
        .collect();
    let skewed = DecisionWeights::from_gammas(mods.clone(), &[1000.0, 1e-6, 1e-6, 1e-6]).map_err(|e| e.to_string())?;
    let out = skewed.joint_predict(&ys).map_err(|e| e.to_string())?;
    let dev = out
        .values()
        .iter()
        .zip(ys[0].values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(dev < 1e-3, || format!("deviation from structural scores {dev:e}"))?;
    let equal = DecisionWeights::from_gammas(mods, &[0.7; 4]).map_err(|e| e.to_string())?;
    let out = equal.joint_predict(&ys).map_err(|e| e.to_string())?;
    let mut mean_dev = 0.0f64;
    for (i, v) in out.values().iter().enumerate() {
        let mean = ys.iter().map(|y| y.values()[i]).sum::<f64>() / 4.0;
        mean_dev = mean_dev.max((v - mean).abs());
    }
    ensure(mean_dev <= 1e-12, || {
        format!("equal weights deviate from the mean by {mean_dev:e}")
    })?;
    Ok(format!(
        "skewed deviation {dev:.1e}, equal-weight deviation {mean_dev:.1e}"
    ))
}

struct Sweep {
    /// `mrr[seed][mode]` for modes S, S+V, S+T, S+V+T.
    mrr: Vec<[f64; 4]>,
    full_seed0_epoch: usize,
    elapsed: Duration,
}

fn run_sweep() -> Result<Sweep, String> {
    let t = Instant::now();
    let kg = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let settings = RunSettings::default();
    let modes = [Ablation::S, Ablation::SV, Ablation::ST, Ablation::SVT];
    let mut mrr = Vec::new();
    let mut full_seed0_epoch = 0;
    for seed in 0..5 {
        let mut row = [0.0; 4];
        for (slot, &mode) in row.iter_mut().zip(&modes) {
            let out = kg
                .run(mode, seed, &settings)
                .map_err(|e| format!("{mode} seed {seed}: {e}"))?;
            *slot = out.best_valid_mrr.ok_or("no validation metrics")?;
            if seed == 0 && mode == Ablation::SVT {
                full_seed0_epoch = out.best_epoch;
            }
        }
        println!(
            "     seed {seed}: S {:.3}  S+V {:.3}  S+T {:.3}  S+V+T {:.3}",
            row[0], row[1], row[2], row[3]
        );
        mrr.push(row);
    }
    Ok(Sweep {
        mrr,
        full_seed0_epoch,
        elapsed: t.elapsed(),
    })
}

fn a3_ablation(sweep: &Sweep) -> Outcome {
    let ordered = sweep
        .mrr
        .iter()
        .filter(|[s, sv, st, svt]| svt > sv && sv > s && svt > st && st > s)
        .count();
    let n = sweep.mrr.len() as f64;
    let mean = |k: usize| sweep.mrr.iter().map(|m| m[k]).sum::<f64>() / n;
    let gap = mean(3) - mean(0);
    ensure(ordered >= 4, || format!("ordering holds for {ordered} of 5 seeds"))?;
    ensure(gap >= 0.05, || format!("mean MRR(S+V+T) - MRR(S) = {gap:.3}"))?;
    within(sweep.elapsed, 15 * 60)?;
    Ok(format!(
        "ordering holds for {ordered}/5 seeds, mean S {:.3} S+V {:.3} S+T {:.3} S+V+T {:.3}, {:.0}s",
        mean(0),
        mean(1),
        mean(2),
        mean(3),
        sweep.elapsed.as_secs_f64()
    ))
}

fn a7_learning(sweep: &Sweep) -> Outcome {
    let mrr = sweep.mrr[0][3];
    ensure(sweep.full_seed0_epoch <= 200, || {
        format!("best epoch {}", sweep.full_seed0_epoch)
    })?;
    ensure(mrr >= 0.60, || format!("valid MRR {mrr:.3} < 0.60"))?;
    ensure((mrr - A7_CALIBRATED_MRR).abs() <= A7_TOLERANCE, || {
        format!("valid MRR {mrr:.3} drifted from calibrated {A7_CALIBRATED_MRR}")
    })?;
    Ok(format!(
        "valid MRR {mrr:.3} at epoch {} (calibrated {A7_CALIBRATED_MRR} +/- {A7_TOLERANCE})",
        sweep.full_seed0_epoch
    ))
}

fn a8_benchmark(dir: &std::path::Path) -> Outcome {
    let data = Dataset::load_dir(dir).map_err(|e| e.to_string())?;
    let n = data.num_entities();
    let mut features = Features::new();
    let mut widths = [0; 3];
    for m in Modality::ENCODED {
        let f = load_features(&default_feature_path(dir, m), m, n, MissingFill::Zero).map_err(|e| e.to_string())?;
        widths[m.index()] = f.width();
        features.insert(m, f.matrix).map_err(|e| e.to_string())?;
    }
    let meta = ModelMeta {
        config: ModelConfig::default(),
        num_entities: n,
        num_relations: data.num_relations(),
        feature_widths: widths,
    };
    let out =
        train(meta, &features, &data.triples, &TrainConfig::default(), &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let filter = FilterIndex::build(&data.triples);
    let snap = out.best.snapshot(&features).map_err(|e| e.to_string())?;
    let m = evaluate(&snap, &data.triples.test, &filter, 0)
        .map_err(|e| e.to_string())?
        .report
        .both;
    Ok(format!(
        "test MRR {:.3} H@10 {:.1} (reference 0.389 / 59.3)",
        m.mrr, m.hits10
    ))
}

fn report(name: &str, what: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let outcome = outcome.unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("{name} PASS  {what}: {detail}");
            true
        }
        Err(detail) => {
            println!("{name} FAIL  {what}: {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report("A1", "gradient fidelity", catch_unwind(a1_gradients));
    ok &= report("A2", "fusion oracle", catch_unwind(a2_fusion));
    let sweep = catch_unwind(run_sweep);
    let sweep = match sweep {
        Ok(Ok(s)) => Some(s),
        Ok(Err(e)) => {
            println!("     synthetic sweep failed: {e}");
            None
        }
        Err(_) => None,
    };
    let missing = || Err::<String, _>("synthetic sweep did not complete".to_string());
    ok &= report(
        "A3",
        "ablation trend",
        catch_unwind(AssertUnwindSafe(|| sweep.as_ref().map_or_else(missing, a3_ablation))),
    );
    ok &= report("A4", "contrastive bound", catch_unwind(a4_contrastive));
    ok &= report("A5", "ranking oracle", catch_unwind(a5_ranking));
    ok &= report("A6", "degenerate weights", catch_unwind(a6_weights));
    ok &= report(
        "A7",
        "learning sanity",
        catch_unwind(AssertUnwindSafe(|| sweep.as_ref().map_or_else(missing, a7_learning))),
    );
    match std::env::var_os("A8_DATASET_DIR") {
        Some(dir) => {
            let res = catch_unwind(|| a8_benchmark(std::path::Path::new(&dir)));
            report("A8", "benchmark (informational)", res);
        }
        None => println!("A8 SKIP  benchmark (informational): set A8_DATASET_DIR to a prepared dataset"),
    }
    if !ok {
        std::process::exit(1);
    }
}
