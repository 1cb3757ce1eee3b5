use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::log::InteractionLog;
use crate::error::{PadError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub min_interactions: usize,
    pub max_len: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_interactions: 5,
            max_len: 23,
        }
    }
}

/// Per-user positive histories with leave-last-out targets.
///
/// For a sequence of length `l` the training view is the first `l − 2`
/// items (its last item is the training target), the validation target is
/// item `l − 1` and the test target is item `l`, each predicted from all
/// earlier items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// Dense id → original item id.
    pub items: Vec<String>,
    pub users: Vec<String>,
    pub sequences: Vec<Vec<usize>>,
    #[serde(skip)]
    item_lookup: HashMap<String, usize>,
    #[serde(skip)]
    train_freq: Vec<u32>,
}

impl SplitDataset {
    /// Build from already-dense sequences (each of length ≥ 3).
    pub fn from_parts(items: Vec<String>, users: Vec<String>, sequences: Vec<Vec<usize>>) -> Result<Self> {
        if users.len() != sequences.len() {
            return Err(PadError::Data(format!(
                "{} users but {} sequences",
                users.len(),
                sequences.len()
            )));
        }
        for (u, s) in sequences.iter().enumerate() {
            if s.len() < 3 {
                return Err(PadError::Data(format!("user {} has fewer than 3 items", users[u])));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= items.len()) {
                return Err(PadError::Data(format!(
                    "user {} references item {bad} outside vocabulary",
                    users[u]
                )));
            }
        }
        let mut ds = SplitDataset {
            items,
            users,
            sequences,
            item_lookup: HashMap::new(),
            train_freq: Vec::new(),
        };
        ds.rebuild_indexes();
        Ok(ds)
    }

    fn rebuild_indexes(&mut self) {
        self.item_lookup = self.items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut freq = vec![0u32; self.items.len()];
        for u in 0..self.sequences.len() {
            for &i in self.train_view(u) {
                freq[i] += 1;
            }
        }
        self.train_freq = freq;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SplitDataset = serde_json::from_str(text)?;
        Self::from_parts(raw.items, raw.users, raw.sequences)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn item_id(&self, name: &str) -> Option<usize> {
        self.item_lookup.get(name).copied()
    }

    /// Items `0..l−2`; its last element is the training target.
    pub fn train_view(&self, u: usize) -> &[usize] {
        let s = &self.sequences[u];
        &s[..s.len() - 2]
    }

    pub fn train_example(&self, u: usize) -> (&[usize], usize) {
        let v = self.train_view(u);
        (&v[..v.len() - 1], v[v.len() - 1])
    }

    pub fn val_example(&self, u: usize) -> (&[usize], usize) {
        let s = &self.sequences[u];
        (&s[..s.len() - 2], s[s.len() - 2])
    }

    pub fn test_example(&self, u: usize) -> (&[usize], usize) {
        let s = &self.sequences[u];
        (&s[..s.len() - 1], s[s.len() - 1])
    }

    /// Occurrences of each item in the training views (behaviors and target).
    pub fn train_freq(&self) -> &[u32] {
        &self.train_freq
    }

    /// Number of users whose test target is each item.
    pub fn test_target_freq(&self) -> Vec<u32> {
        let mut f = vec![0u32; self.n_items()];
        for u in 0..self.n_users() {
            f[self.test_example(u).1] += 1;
        }
        f
    }
}

/// Filter, order, truncate and split a raw log.
///
/// Only positive interactions form histories. Users are visited in
/// lexicographic id order; their events sort by (timestamp, item id, input
/// order). Dense item ids follow first appearance in the truncated histories.
pub fn preprocess_split(log: &InteractionLog, cfg: &SplitConfig) -> Result<SplitDataset> {
    if log.is_empty() {
        return Err(PadError::Data("interaction log is empty".into()));
    }
    if cfg.min_interactions < 3 || cfg.max_len < 3 {
        return Err(PadError::InvalidArgument(
            "min_interactions and max_len must both be at least 3".into(),
        ));
    }
    let mut per_user: BTreeMap<&str, Vec<(u64, &str, usize)>> = BTreeMap::new();
    for (k, r) in log.records.iter().enumerate() {
        if r.label.is_positive() {
            per_user.entry(&r.user).or_default().push((r.timestamp, &r.item, k));
        }
    }
    let mut items = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut sequences = Vec::new();
    for (user, mut events) in per_user {
        if events.len() < cfg.min_interactions {
            continue;
        }
        events.sort();
        let start = events.len().saturating_sub(cfg.max_len);
        let seq = events[start..]
            .iter()
            .map(|&(_, item, _)| {
                *lookup.entry(item).or_insert_with(|| {
                    items.push(item.to_string());
                    items.len() - 1
                })
            })
            .collect();
        users.push(user.to_string());
        sequences.push(seq);
    }
    if users.is_empty() {
        return Err(PadError::Data(format!(
            "no user has at least {} positive interactions",
            cfg.min_interactions
        )));
    }
    SplitDataset::from_parts(items, users, sequences)
}
