//! Ranking metrics, Kendall's tau diagnostics and pair-distance analysis.

mod kendall;
mod pairs;
mod rank;

pub use kendall::kendalls_tau;
pub use pairs::{
    behavior_target_distances, behavior_target_pairs, bucketed_kt, pair_distances, top_bottom_pair_analysis,
    write_pairs_csv, BucketTau, GroupSummary, KtReport, PairAnalysis, PairDistance, PairGroup, PairRow,
};
pub use rank::{
    hr_at_k, mean_metrics, ndcg_at_k, rank_examples, rank_of_target, rank_report, warm_med_cold_strata, RankReport,
    Stratum, StratumMetrics, EVAL_CHUNK,
};

use std::path::Path;

use serde::Serialize;

use crate::error::{PadError, Result};
use crate::model::GateStats;

/// Contents of `report.json`. Holds no timing data, so identical runs give identical files.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub rank: RankReport,
    /// The pre-trained recommendation expert on the same split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<RankReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kt: Option<KtReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PairAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateStats>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PadError::io(path, e))
    }
}
