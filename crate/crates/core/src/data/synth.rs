//! Seeded synthetic worlds.
//!
//! Items carry latent vectors `z`. Users walk between nearby warm items in
//! latent space, biased toward popular ones, with occasional random jumps.
//! Cold items are spliced in afterwards: at most `cold_train_max` training
//! occurrences each, plus `cold_test_per_item` test targets each, always
//! right after a warm latent neighbour so they are predictable from text.
//! Text rows are `A z + noise·ε` from a separate random stream, then
//! standardized to zero mean and unit variance over the whole matrix, so the
//! interaction log does not depend on the noise level.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::log::{Interaction, InteractionLog, Label};
use super::text::TextEmbeddings;
use crate::error::{PadError, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_cold: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub text_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Candidate set size for each walk step.
    pub neighbors: usize,
    /// Probability of a popularity-driven random jump instead of a neighbour step.
    pub jump_prob: f64,
    pub cold_train_max: usize,
    pub cold_test_per_item: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_users: 5000,
            n_items: 500,
            n_cold: 50,
            latent_dim: 16,
            noise: 0.1,
            text_dim: 64,
            min_len: 5,
            max_len: 23,
            neighbors: 10,
            jump_prob: 0.1,
            cold_train_max: 2,
            cold_test_per_item: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub log: InteractionLog,
    pub text: TextEmbeddings,
    /// Generator indices of the cold items.
    pub cold_items: Vec<usize>,
    pub item_names: Vec<String>,
}

fn item_name(i: usize) -> String {
    format!("i{i:05}")
}

fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        r -= w;
        if r < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthWorld> {
    let bad = |m: String| Err(PadError::InvalidArgument(m));
    if cfg.n_items < 2 || cfg.n_cold >= cfg.n_items {
        return bad(format!(
            "need n_cold < n_items and n_items >= 2, got {} / {}",
            cfg.n_cold, cfg.n_items
        ));
    }
    if cfg.min_len < 5 || cfg.max_len < cfg.min_len {
        return bad(format!(
            "sequence lengths must satisfy 5 <= min <= max, got {}..{}",
            cfg.min_len, cfg.max_len
        ));
    }
    if cfg.latent_dim == 0 || cfg.text_dim == 0 || cfg.neighbors == 0 {
        return bad("latent_dim, text_dim and neighbors must be positive".into());
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return bad(format!("noise must be finite and >= 0, got {}", cfg.noise));
    }
    let n_warm = cfg.n_items - cfg.n_cold;
    if n_warm < 2 {
        return bad("need at least two warm items".into());
    }
    let cold_train_slots = cfg.n_cold * cfg.cold_train_max;
    let cold_test_slots = cfg.n_cold * cfg.cold_test_per_item;
    if cold_train_slots + cold_test_slots > cfg.n_users {
        return bad(format!(
            "infeasible cold quota: {} cold placements for {} users",
            cold_train_slots + cold_test_slots,
            cfg.n_users
        ));
    }

    let mut rng = seed::rng(cfg.seed, seed::SYNTH);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let latent: Vec<Vec<f64>> = (0..cfg.n_items)
        .map(|_| (0..cfg.latent_dim).map(|_| normal(&mut rng)).collect())
        .collect();
    let mut order: Vec<usize> = (0..cfg.n_items).collect();
    order.shuffle(&mut rng);
    let mut cold_items: Vec<usize> = order[..cfg.n_cold].to_vec();
    cold_items.sort_unstable();
    let mut is_cold = vec![false; cfg.n_items];
    for &c in &cold_items {
        is_cold[c] = true;
    }
    let warm: Vec<usize> = (0..cfg.n_items).filter(|&i| !is_cold[i]).collect();

    // Zipf-like popularity over a random ranking of warm items.
    let mut ranks: Vec<usize> = (0..n_warm).collect();
    ranks.shuffle(&mut rng);
    let pop: Vec<f64> = ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0).powf(0.8)).collect();

    let dist2 = |a: usize, b: usize| -> f64 { latent[a].iter().zip(&latent[b]).map(|(x, y)| (x - y) * (x - y)).sum() };
    let k = cfg.neighbors.min(n_warm - 1);
    // Nearest warm neighbours of every item, closest first, ties by index.
    let neighbours: Vec<Vec<usize>> = (0..cfg.n_items)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = warm
                .iter()
                .enumerate()
                .filter(|&(_, &j)| j != i)
                .map(|(w, &j)| (dist2(i, j), w))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, w)| w).collect()
        })
        .collect();

    let mut sequences: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_users);
    for _ in 0..cfg.n_users {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut cur = sample_weighted(&mut rng, &pop);
        let mut seq = vec![warm[cur]];
        while seq.len() < len {
            cur = if rng.random::<f64>() < cfg.jump_prob {
                sample_weighted(&mut rng, &pop)
            } else {
                let cands = &neighbours[warm[cur]];
                let w: Vec<f64> = cands
                    .iter()
                    .map(|&c| pop[c].sqrt() * (-0.5 * dist2(warm[cur], warm[c])).exp())
                    .collect();
                cands[sample_weighted(&mut rng, &w)]
            };
            seq.push(warm[cur]);
        }
        sequences.push(seq);
    }

    // Splice cold items into distinct users: first test targets, then training slots.
    let mut users: Vec<usize> = (0..cfg.n_users).collect();
    users.shuffle(&mut rng);
    let mut next_user = users.into_iter();
    for &c in &cold_items {
        for _ in 0..cfg.cold_test_per_item {
            let u = next_user.next().expect("quota checked");
            let s = &mut sequences[u];
            let l = s.len();
            let nb = neighbours[c][rng.random_range(0..k)];
            s[l - 2] = warm[nb];
            s[l - 1] = c;
        }
        let train_count = rng.random_range(1..=cfg.cold_train_max.max(1)).min(cfg.cold_train_max);
        for _ in 0..train_count {
            let u = next_user.next().expect("quota checked");
            let s = &mut sequences[u];
            let l = s.len();
            // Training view is s[..l-2]; keep the cold item and its lead-in inside it.
            let p = rng.random_range(1..l - 2);
            let nb = neighbours[c][rng.random_range(0..k)];
            s[p - 1] = warm[nb];
            s[p] = c;
        }
    }

    let mut records = Vec::new();
    for (u, seq) in sequences.iter().enumerate() {
        let start = 1_600_000_000u64 + u as u64 * 10_000;
        for (t, &item) in seq.iter().enumerate() {
            records.push(Interaction {
                user: format!("u{u:06}"),
                item: item_name(item),
                timestamp: start + t as u64 * 60,
                label: Label::Click(true),
            });
        }
    }

    let mut trng = seed::rng(cfg.seed, seed::SYNTH_TEXT);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let proj: Vec<f64> = (0..cfg.text_dim * cfg.latent_dim)
        .map(|_| normal(&mut trng) * scale)
        .collect();
    let mut raw = Vec::with_capacity(cfg.n_items * cfg.text_dim);
    for z in &latent {
        for r in 0..cfg.text_dim {
            let row = &proj[r * cfg.latent_dim..(r + 1) * cfg.latent_dim];
            let signal: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
            raw.push(signal + cfg.noise * normal(&mut trng));
        }
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
        .sqrt()
        .max(1e-300);
    let data = raw.iter().map(|v| ((v - mean) / sd) as f32).collect();

    let item_names: Vec<String> = (0..cfg.n_items).map(item_name).collect();
    Ok(SynthWorld {
        log: InteractionLog { records },
        text: TextEmbeddings {
            ids: item_names.clone(),
            dim: cfg.text_dim,
            data,
        },
        cold_items,
        item_names,
    })
}
