//! Distance diagnostics over behavior→target item pairs.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kendall::kendalls_tau;
use crate::error::{PadError, Result};
use crate::tensor::{l2_dist, Tensor};

/// Every `(seq[s], seq[t])` with `s < t`, in user then position order.
///
/// Pairs are deduplicated by unordered item pair, keeping the first
/// occurrence, and repeats of one item are skipped: `(a, b)` and `(b, a)`
/// always share a distance, as do all `(a, a)`, and such forced ties would
/// keep a table's tau against itself below 1.
pub fn behavior_target_pairs(sequences: &[&[usize]]) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for seq in sequences {
        for t in 1..seq.len() {
            for s in 0..t {
                let p = (seq[s], seq[t]);
                if p.0 != p.1 && seen.insert((p.0.min(p.1), p.0.max(p.1))) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Euclidean distance between the two rows of each pair.
pub fn pair_distances(table: &Tensor, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    if table.rank() != 2 {
        return Err(PadError::shape("pair_distances", format!("table {:?}", table.shape())));
    }
    let v = table.shape()[0];
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= v || b >= v {
                return Err(PadError::InvalidArgument(format!(
                    "item {} has no embedding (table has {v} rows)",
                    a.max(b)
                )));
            }
            Ok(l2_dist(table.row(a), table.row(b)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub behavior: usize,
    pub target: usize,
    pub distance: f64,
}

pub fn behavior_target_distances(table: &Tensor, sequences: &[&[usize]]) -> Result<Vec<PairDistance>> {
    let pairs = behavior_target_pairs(sequences);
    let d = pair_distances(table, &pairs)?;
    Ok(pairs
        .into_iter()
        .zip(d)
        .map(|((behavior, target), distance)| PairDistance {
            behavior,
            target,
            distance,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketTau {
    /// 1-based, 1 = warmest.
    pub bucket: usize,
    pub pairs: usize,
    /// `null` when the bucket holds fewer than two pairs.
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtReport {
    pub pairs: usize,
    pub overall: Option<f64>,
    pub buckets: Vec<BucketTau>,
    /// Mean over buckets with a defined tau.
    pub mean_bucket_tau: Option<f64>,
}

/// Kendall's tau between before/after pair distances, overall and grouped by the
/// target item's bucket (`buckets[item]`, 0-based).
pub fn bucketed_kt(
    before: &Tensor,
    after: &Tensor,
    sequences: &[&[usize]],
    buckets: &[usize],
    n_buckets: usize,
) -> Result<KtReport> {
    if before.shape() != after.shape() {
        return Err(PadError::InvalidArgument(format!(
            "tables differ in shape: {:?} vs {:?}",
            before.shape(),
            after.shape()
        )));
    }
    let pairs = behavior_target_pairs(sequences);
    let db = pair_distances(before, &pairs)?;
    let da = pair_distances(after, &pairs)?;
    let tau = |x: &[f64], y: &[f64]| {
        if x.len() < 2 {
            Ok(None)
        } else {
            kendalls_tau(x, y).map(Some)
        }
    };
    let mut grouped = vec![(Vec::new(), Vec::new()); n_buckets];
    for (k, &(_, target)) in pairs.iter().enumerate() {
        let b = *buckets
            .get(target)
            .ok_or_else(|| PadError::InvalidArgument(format!("item {target} has no bucket")))?;
        if b >= n_buckets {
            return Err(PadError::InvalidArgument(format!("bucket {b} out of range")));
        }
        grouped[b].0.push(db[k]);
        grouped[b].1.push(da[k]);
    }
    let mut out = Vec::with_capacity(n_buckets);
    for (b, (x, y)) in grouped.iter().enumerate() {
        out.push(BucketTau {
            bucket: b + 1,
            pairs: x.len(),
            tau: tau(x, y)?,
        });
    }
    let defined: Vec<f64> = out.iter().filter_map(|b| b.tau).collect();
    Ok(KtReport {
        pairs: pairs.len(),
        overall: tau(&db, &da)?,
        mean_bucket_tau: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        buckets: out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    /// Linear-interpolated quantiles at 0, 0.1, ..., 1.
    pub deciles: Vec<f64>,
}

impl GroupSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let deciles = (0..=10)
            .map(|j| {
                let pos = j as f64 / 10.0 * (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
            })
            .collect();
        GroupSummary {
            count: n,
            mean,
            sd: var.sqrt(),
            deciles,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairGroup {
    Top,
    Bottom,
}

impl PairGroup {
    pub fn name(self) -> &'static str {
        match self {
            PairGroup::Top => "top",
            PairGroup::Bottom => "bottom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub fraction: f64,
    pub pairs: usize,
    /// Text distances of the pairs farthest apart collaboratively.
    pub top: GroupSummary,
    /// Text distances of the collaboratively closest pairs.
    pub bottom: GroupSummary,
    /// `(mean_top − mean_bottom) / pooled_sd`; `null` when the pooled deviation
    /// is zero but the means differ.
    pub separation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub pair_id: usize,
    pub collab_distance: f64,
    pub text_distance: f64,
    pub group: PairGroup,
}

/// Compare text distances of the collaboratively farthest and closest `fraction` of pairs.
pub fn top_bottom_pair_analysis(
    collab: &Tensor,
    text: &Tensor,
    pairs: &[(usize, usize)],
    fraction: f64,
) -> Result<(PairAnalysis, Vec<PairRow>)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(PadError::InvalidArgument(format!(
            "fraction {fraction} outside (0, 0.5]"
        )));
    }
    if pairs.len() < 20 {
        return Err(PadError::InvalidArgument(format!(
            "pair analysis needs at least 20 pairs, got {}",
            pairs.len()
        )));
    }
    let m = (fraction * pairs.len() as f64).floor() as usize;
    if m == 0 {
        return Err(PadError::InvalidArgument("fraction selects no pairs".into()));
    }
    let dc = pair_distances(collab, pairs)?;
    let dt = pair_distances(text, pairs)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| dc[i].total_cmp(&dc[j]).then(i.cmp(&j)));
    let bottom_ids = &order[..m];
    let top_ids = &order[order.len() - m..];
    let pick = |ids: &[usize]| ids.iter().map(|&i| dt[i]).collect::<Vec<_>>();
    let (top, bottom) = (GroupSummary::of(&pick(top_ids)), GroupSummary::of(&pick(bottom_ids)));
    let dof = (top.count + bottom.count) as f64 - 2.0;
    let pooled = if dof > 0.0 {
        (((top.count - 1) as f64 * top.sd * top.sd + (bottom.count - 1) as f64 * bottom.sd * bottom.sd) / dof).sqrt()
    } else {
        0.0
    };
    let diff = top.mean - bottom.mean;
    let separation = if pooled > 0.0 {
        Some(diff / pooled)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(2 * m);
    for (ids, group) in [(top_ids, PairGroup::Top), (bottom_ids, PairGroup::Bottom)] {
        for &i in ids {
            rows.push(PairRow {
                pair_id: i,
                collab_distance: dc[i],
                text_distance: dt[i],
                group,
            });
        }
    }
    Ok((
        PairAnalysis {
            fraction,
            pairs: pairs.len(),
            top,
            bottom,
            separation,
        },
        rows,
    ))
}

pub fn write_pairs_csv(path: &Path, rows: &[PairRow]) -> Result<()> {
    let mut out = String::from("pair_id,collab_distance,text_distance,group\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{}\n",
            r.pair_id,
            r.collab_distance,
            r.text_distance,
            r.group.name()
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| PadError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| PadError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_pairs() {
        let seqs: [&[usize]; 1] = [&[1, 2, 3]];
        assert_eq!(behavior_target_pairs(&seqs), vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn dedup_keeps_first() {
        let seqs: [&[usize]; 2] = [&[0, 1], &[2, 0, 1]];
        assert_eq!(behavior_target_pairs(&seqs), vec![(0, 1), (2, 0), (2, 1)]);
        // reversed and self pairs are dropped
        let seqs: [&[usize]; 2] = [&[3, 4, 3], &[4, 3, 5]];
        assert_eq!(behavior_target_pairs(&seqs), vec![(3, 4), (4, 5), (3, 5)]);
    }

    #[test]
    fn self_comparison_is_one() {
        // generic coordinates: tau-a reaches 1 only without tied distances
        let t = Tensor::from_fn(&[6, 2], |k| ((k * k) as f64 * 0.7).sin());
        let seqs: [&[usize]; 2] = [&[0, 1, 2, 3], &[4, 5, 0, 2]];
        let r = bucketed_kt(&t, &t, &seqs, &[0, 0, 1, 1, 2, 2], 3).unwrap();
        for b in &r.buckets {
            if let Some(tau) = b.tau {
                assert_eq!(tau, 1.0);
            }
        }
        assert_eq!(r.overall, Some(1.0));
    }
}
