//! Filtered link-prediction evaluation with random placement inside tie groups.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, FilterIndex, Query, Triple};
use crate::error::{Error, Result};
use crate::model::QueryScorer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub query: Query,
    pub true_entity: usize,
    /// 1-based position of the true entity.
    pub rank: usize,
    pub filtered: bool,
}

/// Rank of `true_id` among `scores` (higher is better).
///
/// Members of `filter` other than `true_id` are ignored. The true entity is
/// placed uniformly at random among the candidates that tie with it.
pub fn rank_one<R: Rng + ?Sized>(
    scores: &[f64],
    true_id: usize,
    filter: Option<&BTreeSet<usize>>,
    rng: &mut R,
) -> Result<usize> {
    let Some(&target) = scores.get(true_id) else {
        return Err(Error::Logic(format!(
            "true entity {true_id} outside {} candidates",
            scores.len()
        )));
    };
    if !target.is_finite() {
        return Err(Error::Domain {
            op: "rank_one",
            detail: format!("true entity score is {target}"),
        });
    }
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == true_id || filter.is_some_and(|f| f.contains(&i)) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    Ok(greater + 1 + rng.gen_range(0..=ties))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "MR")]
    pub mr: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    /// Percent.
    #[serde(rename = "H@1")]
    pub hits1: f64,
    /// Percent.
    #[serde(rename = "H@10")]
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Option<Self> {
        let (mut n, mut sum, mut rr, mut h1, mut h10) = (0usize, 0.0, 0.0, 0usize, 0usize);
        for r in ranks {
            n += 1;
            sum += r as f64;
            rr += 1.0 / r as f64;
            h1 += usize::from(r <= 1);
            h10 += usize::from(r <= 10);
        }
        (n > 0).then(|| {
            let n = n as f64;
            Metrics {
                mr: sum / n,
                mrr: rr / n,
                hits1: 100.0 * h1 as f64 / n,
                hits10: 100.0 * h10 as f64 / n,
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub head: Metrics,
    pub tail: Metrics,
    pub both: Metrics,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[RankResult]) -> Result<Self> {
        let of = |dir: Option<Direction>| {
            Metrics::from_ranks(
                ranks
                    .iter()
                    .filter(|r| dir.is_none_or(|d| r.query.direction == d))
                    .map(|r| r.rank),
            )
            .ok_or_else(|| Error::Data("no ranks to summarize".into()))
        };
        Ok(Self {
            head: of(Some(Direction::Head))?,
            tail: of(Some(Direction::Tail))?,
            both: of(None)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table, one row per prediction direction.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>10} {:>8} {:>8} {:>8}", "", "MR", "MRR", "H@1", "H@10");
        for (name, m) in [("head", &self.head), ("tail", &self.tail), ("both", &self.both)] {
            let _ = writeln!(
                out,
                "{:<6} {:>10.2} {:>8.4} {:>8.2} {:>8.2}",
                name, m.mr, m.mrr, m.hits1, m.hits10
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Tail query then head query for every triple, in input order.
    pub ranks: Vec<RankResult>,
}

/// Per-query generator derived from the master seed, so parallel and serial
/// runs draw the same tie placements.
pub fn query_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Ranks both directions of every triple with filtering against `filter`.
pub fn evaluate(scorer: &dyn QueryScorer, triples: &[Triple], filter: &FilterIndex, seed: u64) -> Result<Evaluation> {
    if triples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let jobs: Vec<(Query, usize)> = triples
        .iter()
        .flat_map(|t| {
            [
                (Query::tail(t.head, t.relation), t.tail),
                (Query::head(t.tail, t.relation), t.head),
            ]
        })
        .collect();
    let ranks = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(query, truth))| {
            let scores = scorer.score(&query)?;
            let answers = filter.answers(&query);
            let mut rng = query_rng(seed, i);
            let rank = rank_one(scores.values(), truth, answers, &mut rng)?;
            Ok(RankResult {
                query,
                true_entity: truth,
                rank,
                filtered: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: MetricsReport::from_ranks(&ranks)?,
        ranks,
    })
}

/// Tab-separated rank dump with a header line.
pub fn write_rank_dump(path: &Path, ranks: &[RankResult]) -> Result<()> {
    let mut out = String::from("direction\tentity\trelation\ttrue\trank\n");
    for r in ranks {
        let dir = match r.query.direction {
            Direction::Tail => "tail",
            Direction::Head => "head",
        };
        let _ = writeln!(
            out,
            "{dir}\t{}\t{}\t{}\t{}",
            r.query.entity, r.query.relation, r.true_entity, r.rank
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_best_is_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(rank_one(&[0.1, 0.9, 0.3], 1, None, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn filtered_candidates_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f: BTreeSet<usize> = [0, 2, 3].into();
        assert_eq!(rank_one(&[0.9, 0.5, 0.8, 0.1, 0.6], 3, Some(&f), &mut rng).unwrap(), 3);
        assert_eq!(rank_one(&[0.9, 0.5, 0.8, 0.1, 0.6], 3, None, &mut rng).unwrap(), 5);
    }

    #[test]
    fn out_of_range_truth_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(rank_one(&[0.5], 1, None, &mut rng).is_err());
    }

    #[test]
    fn metrics_hand_case() {
        let m = Metrics::from_ranks([1, 2, 4, 20]).unwrap();
        assert_eq!(m.mr, 6.75);
        assert!((m.mrr - (1.0 + 0.5 + 0.25 + 0.05) / 4.0).abs() < 1e-15);
        assert_eq!(m.hits1, 25.0);
        assert_eq!(m.hits10, 75.0);
        assert!(Metrics::from_ranks([]).is_none());
    }
}
