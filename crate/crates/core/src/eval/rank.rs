//! Whole-catalog ranking metrics and their frequency breakdowns.

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::model::{Fusion, GateStats, PadModel};

/// 1-based rank of `target`: one plus the number of other items scoring at
/// least as high. Ties go against the target; a NaN competitor counts as higher.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    if scores.is_empty() {
        return Err(PadError::InvalidArgument("empty catalog".into()));
    }
    let t = *scores
        .get(target)
        .ok_or_else(|| PadError::InvalidArgument(format!("target {target} outside catalog of {}", scores.len())))?;
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && !(s < t))
        .count();
    Ok(1 + above)
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Warm,
    Median,
    Cold,
}

/// Assign each distinct test-target item to a tercile.
///
/// Items sort by test-target count descending, ties by id ascending; item at
/// sorted position `p` of `n` lands in group `⌊3p/n⌋`. Returns `(item, stratum)`
/// sorted by item id.
pub fn warm_med_cold_strata(test_targets: &[usize]) -> Result<Vec<(usize, Stratum)>> {
    let mut counts = std::collections::BTreeMap::<usize, u64>::new();
    for &t in test_targets {
        *counts.entry(t).or_default() += 1;
    }
    if counts.len() < 3 {
        return Err(PadError::InvalidArgument(format!(
            "stratification needs at least 3 distinct test targets, got {}",
            counts.len()
        )));
    }
    let mut items: Vec<(usize, u64)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = items.len();
    let mut out: Vec<(usize, Stratum)> = items
        .iter()
        .enumerate()
        .map(|(p, &(item, _))| {
            let s = match 3 * p / n {
                0 => Stratum::Warm,
                1 => Stratum::Median,
                _ => Stratum::Cold,
            };
            (item, s)
        })
        .collect();
    out.sort_by_key(|&(item, _)| item);
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub users: usize,
    pub hr: f64,
    pub ndcg: f64,
}

impl StratumMetrics {
    fn from_ranks(ranks: impl Iterator<Item = usize>, k: usize) -> Self {
        let (mut users, mut hr, mut ndcg) = (0usize, 0.0, 0.0);
        for r in ranks {
            users += 1;
            hr += hr_at_k(r, k);
            ndcg += ndcg_at_k(r, k);
        }
        if users == 0 {
            return StratumMetrics::default();
        }
        StratumMetrics {
            users,
            hr: 100.0 * hr / users as f64,
            ndcg: 100.0 * ndcg / users as f64,
        }
    }
}

/// HR@k and nDCG@k in percent, overall and per stratum / training-frequency bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub k: usize,
    pub overall: StratumMetrics,
    pub warm: StratumMetrics,
    pub median: StratumMetrics,
    pub cold: StratumMetrics,
    /// Index 0 is bucket 1 (warmest).
    pub buckets: Vec<StratumMetrics>,
}

impl RankReport {
    pub fn stratum(&self, s: Stratum) -> &StratumMetrics {
        match s {
            Stratum::Warm => &self.warm,
            Stratum::Median => &self.median,
            Stratum::Cold => &self.cold,
        }
    }
}

/// Summarise per-user ranks. `item_buckets` maps items to 0-based training-frequency buckets.
pub fn rank_report(
    ranks: &[usize],
    targets: &[usize],
    item_buckets: &[usize],
    n_buckets: usize,
    k: usize,
) -> Result<RankReport> {
    if ranks.len() != targets.len() {
        return Err(PadError::InvalidArgument(format!(
            "{} ranks for {} targets",
            ranks.len(),
            targets.len()
        )));
    }
    if k == 0 || ranks.contains(&0) {
        return Err(PadError::InvalidArgument("ranks and k are 1-based".into()));
    }
    let strata = warm_med_cold_strata(targets)?;
    let stratum_of = |item: usize| strata[strata.binary_search_by_key(&item, |&(i, _)| i).expect("target present")].1;
    let pick = |s: Stratum| {
        StratumMetrics::from_ranks(
            ranks
                .iter()
                .zip(targets)
                .filter(|&(_, &t)| stratum_of(t) == s)
                .map(|(&r, _)| r),
            k,
        )
    };
    let buckets = (0..n_buckets)
        .map(|b| {
            StratumMetrics::from_ranks(
                ranks
                    .iter()
                    .zip(targets)
                    .filter(|&(_, &t)| item_buckets[t] == b)
                    .map(|(&r, _)| r),
                k,
            )
        })
        .collect();
    Ok(RankReport {
        k,
        overall: StratumMetrics::from_ranks(ranks.iter().copied(), k),
        warm: pick(Stratum::Warm),
        median: pick(Stratum::Median),
        cold: pick(Stratum::Cold),
        buckets,
    })
}

/// Mean nDCG@k and HR@k in percent, without breakdowns.
pub fn mean_metrics(ranks: &[usize], k: usize) -> (f64, f64) {
    let m = StratumMetrics::from_ranks(ranks.iter().copied(), k);
    (m.hr, m.ndcg)
}

/// Users scored per encoder pass during evaluation.
pub const EVAL_CHUNK: usize = 128;

/// Rank each example's target against the whole catalog.
///
/// Work is split into fixed chunks of [`EVAL_CHUNK`] users; `threads` only
/// changes which worker handles a chunk, and results (including gate
/// statistics) merge in chunk order, so output does not depend on it.
pub fn rank_examples(
    model: &PadModel,
    fusion: &Fusion,
    examples: &[(&[usize], usize)],
    threads: usize,
    mut gate: Option<&mut GateStats>,
) -> Result<Vec<usize>> {
    let tables = model.item_tables(fusion)?;
    let chunks: Vec<&[(&[usize], usize)]> = examples.chunks(EVAL_CHUNK).collect();
    let gated = matches!(fusion, Fusion::Gated { .. });
    if let (true, Some(g)) = (gated, gate.as_deref()) {
        let names: Vec<&str> = tables.experts.iter().map(|e| e.name()).collect();
        if g.experts != names {
            return Err(PadError::InvalidArgument(format!(
                "gate statistics track {:?}, fusion uses {names:?}",
                g.experts
            )));
        }
    }
    let want_gate = gated && gate.is_some();
    let run = |chunk: &[(&[usize], usize)]| -> Result<(Vec<usize>, Option<GateStats>)> {
        let behaviors: Vec<&[usize]> = chunk.iter().map(|e| e.0).collect();
        let scorer = model.score_users(&tables, &behaviors)?;
        let mut stats = want_gate.then(|| GateStats::new(&tables.experts, model.config.buckets));
        let mut ranks = Vec::with_capacity(chunk.len());
        for (b, &(_, target)) in chunk.iter().enumerate() {
            let (scores, weights) = scorer.scores_and_weights(b);
            if let (Some(st), Some(w)) = (stats.as_mut(), weights) {
                st.observe(&w, model.buckets());
            }
            ranks.push(rank_of_target(&scores, target)?);
        }
        Ok((ranks, stats))
    };
    let threads = threads.max(1).min(chunks.len().max(1));
    let results: Vec<Result<(Vec<usize>, Option<GateStats>)>> = if threads == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<Result<(Vec<usize>, Option<GateStats>)>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let chunks = &chunks;
                    let run = &run;
                    scope.spawn(move || {
                        (t..chunks.len())
                            .step_by(threads)
                            .map(|c| (c, run(chunks[c])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("evaluation worker panicked") {
                    slots[c] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk evaluated")).collect()
    };
    let mut ranks = Vec::with_capacity(examples.len());
    for r in results {
        let (rs, st) = r?;
        ranks.extend(rs);
        if let (Some(g), Some(st)) = (gate.as_deref_mut(), st) {
            g.merge(&st);
        }
    }
    Ok(ranks)
}
