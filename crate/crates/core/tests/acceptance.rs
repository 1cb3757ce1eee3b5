//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Runs single-threaded; takes about 12 minutes.

use std::time::Instant;

use padrec::data::{gen_synthetic, preprocess_split, MissingPolicy, SplitConfig, SplitDataset, SynthConfig};
use padrec::eval::{hr_at_k, kendalls_tau, mean_metrics, ndcg_at_k, rank_examples, rank_of_target};
use padrec::gradcheck::grad_check;
use padrec::kernels::{
    mmd2_biased, mmd2_biased_value, mmd2_unbiased, mmd2_unbiased_value, permutation_test, KernelSpec, MultiKernel,
};
use padrec::model::{bucketize, Batch, EncoderKind, Expert, Fusion, GateMode, ModelConfig, PadModel};
use padrec::pipeline::{
    align_phase, alignment_kt, batch_loss, final_report, finetune_phase, phase_fusion, pretrain, run_pipeline,
    AlignLossConfig, AlignVariant, Objective, Phase, PhaseResult, Split, TrainConfig,
};
use padrec::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
        .collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, data).unwrap()
}

// ---------- 1: MMD² against a double loop ----------

fn oracle_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match spec {
        KernelSpec::Gaussian { sigma } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        }
        KernelSpec::Laplacian { sigma } => {
            let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
            (-d / (sigma * sigma)).exp()
        }
        KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        KernelSpec::Cosine => unreachable!("not used in banks"),
    }
}

/// Biased: V-statistic over all pairs. Unbiased (n = m): the pairwise
/// U-statistic `Σ_{i≠j} h(z_i, z_j) / n(n−1)` with
/// `h = k(x_i,x_j) + k(y_i,y_j) − k(x_i,y_j) − k(x_j,y_i)`.
fn oracle_mmd(x: &Tensor, y: &Tensor, mk: &MultiKernel, unbiased: bool) -> f64 {
    let (n, m) = (x.shape()[0], y.shape()[0]);
    let k = |a: &[f64], b: &[f64]| {
        mk.entries()
            .iter()
            .map(|(beta, s)| beta * oracle_kernel(s, a, b))
            .sum::<f64>()
    };
    if unbiased {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += k(x.row(i), x.row(j)) + k(y.row(i), y.row(j)) - k(x.row(i), y.row(j)) - k(x.row(j), y.row(i));
                }
            }
        }
        return s / (n * (n - 1)) as f64;
    }
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            sxx += k(x.row(i), x.row(j));
        }
    }
    for i in 0..m {
        for j in 0..m {
            syy += k(y.row(i), y.row(j));
        }
    }
    for i in 0..n {
        for j in 0..m {
            sxy += k(x.row(i), y.row(j));
        }
    }
    let (nf, mf) = (n as f64, m as f64);
    sxx / (nf * nf) + syy / (mf * mf) - 2.0 * sxy / (nf * mf)
}

fn tape_mmd(x: &Tensor, y: &Tensor, mk: &MultiKernel, unbiased: bool) -> f64 {
    let mut tape = Tape::new();
    let (vx, vy) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let v = if unbiased {
        mmd2_unbiased(&mut tape, vx, vy, mk)
    } else {
        mmd2_biased(&mut tape, vx, vy, mk)
    };
    tape.scalar(v.unwrap())
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let banks = [
        MultiKernel::default_gaussian_bank(),
        MultiKernel::new(vec![
            (0.5, KernelSpec::Gaussian { sigma: 0.7 }),
            (1.5, KernelSpec::Laplacian { sigma: 1.3 }),
            (0.1, KernelSpec::Linear),
        ])
        .unwrap(),
    ];
    let (mut max_err, mut max_self, mut symmetric) = (0.0f64, 0.0f64, true);
    for case in 0..50 {
        let mk = &banks[case % 2];
        let x = normal_matrix(&mut rng, 8, 4, 1.0);
        let y = normal_matrix(&mut rng, 8, 4, 1.5);
        for unbiased in [false, true] {
            let want = oracle_mmd(&x, &y, mk, unbiased);
            let value = if unbiased {
                mmd2_unbiased_value(&x, &y, mk)
            } else {
                mmd2_biased_value(&x, &y, mk)
            }
            .unwrap();
            max_err = max_err
                .max((value - want).abs())
                .max((tape_mmd(&x, &y, mk, unbiased) - want).abs());
            let swapped = if unbiased {
                mmd2_unbiased_value(&y, &x, mk)
            } else {
                mmd2_biased_value(&y, &x, mk)
            }
            .unwrap();
            symmetric &= swapped.to_bits() == value.to_bits();
            symmetric &= tape_mmd(&y, &x, mk, unbiased).to_bits() == tape_mmd(&x, &y, mk, unbiased).to_bits();
        }
        max_self = max_self.max(mmd2_biased_value(&x, &x, mk).unwrap().abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        max_err <= 1e-9 && max_self <= 1e-9 && symmetric && secs < 5.0,
        format!("max |err| {max_err:.2e}, max MMD²(X,X) {max_self:.2e}, symmetric {symmetric}, {secs:.2}s"),
    )
}

// ---------- 2: permutation test power and size ----------

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let linear = MultiKernel::single(KernelSpec::Linear).unwrap();
    let bank = MultiKernel::default_gaussian_bank();
    let (mut lin_ok, mut bank_ok) = (0, 0);
    let mut ps = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_matrix(&mut rng, 512, 2, 1.0);
        let y = normal_matrix(&mut rng, 512, 2, 2.0);
        let pl = permutation_test(&x, &y, &linear, 200, &mut rng).unwrap().p_value;
        let pb = permutation_test(&x, &y, &bank, 200, &mut rng).unwrap().p_value;
        lin_ok += (pl > 0.05) as usize;
        bank_ok += (pb < 0.01) as usize;
        ps.push(format!("{pl:.3}/{pb:.3}"));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        lin_ok >= 9 && bank_ok >= 9 && secs < 30.0,
        format!(
            "linear p>0.05 in {lin_ok}/10, gaussian bank p<0.01 in {bank_ok}/10, {secs:.1}s (p linear/bank: {})",
            ps.join(" ")
        ),
    )
}

// ---------- 3: gradient checks on a micro model ----------

fn micro_model() -> (PadModel, Batch) {
    let cfg = ModelConfig {
        n_items: 20,
        d_c: 8,
        d_t: 6,
        max_len: 5,
        encoder: EncoderKind::Attention,
        layers: 1,
        heads: 2,
        dropout: 0.1,
        buckets: 4,
        d_b: 4,
        gate_hidden: 6,
        init_std: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let text = normal_matrix(&mut rng, 20, 6, 1.0);
    let freq: Vec<u32> = (0..20).map(|i| (i * 7 % 13) as u32).collect();
    let buckets = bucketize(&freq, 4).unwrap();
    let model = PadModel::new(cfg, text, buckets, 3).unwrap();
    let seqs: Vec<Vec<usize>> = (0..4)
        .map(|_| (0..6).map(|_| rng.random_range(0..20)).collect())
        .collect();
    let negs: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| s[1..].iter().map(|&p| (p + 1 + rng.random_range(0..19)) % 20).collect())
        .collect();
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
    let batch = Batch::next_item(&refs, &negs, 5).unwrap();
    (model, batch)
}

fn check_loss(fusion: Fusion, objective: Objective) -> f64 {
    let (mut probe, batch) = micro_model();
    let ids: Vec<_> = probe
        .store
        .iter()
        .filter(|(_, p)| p.requires_grad())
        .map(|(id, _)| id)
        .collect();
    let mut store = probe.store.clone();
    let report = grad_check(&mut store, &ids, 1e-5, |s| {
        probe.store = s.clone();
        let mut tape = Tape::new();
        let l = batch_loss(&probe, &mut tape, &batch, &fusion, &objective)?;
        Ok((tape, l.total))
    })
    .unwrap();
    report.max_rel_err()
}

fn criterion_3() -> Outcome {
    let all = Fusion::Gated {
        experts: Expert::ALL.to_vec(),
        mode: GateMode::FrequencyAware,
    };
    let bce = check_loss(Fusion::Single(Expert::Id), Objective::rec_only());
    let anchored = check_loss(
        Fusion::Single(Expert::Align),
        Objective::for_variant(AlignVariant::RecAnchored, 0.2, AlignLossConfig::default()),
    );
    let fused = check_loss(all, Objective::rec_only());
    outcome(
        bce < 1e-4 && anchored < 1e-4 && fused < 1e-4,
        format!("max rel err: BCE {bce:.2e}, rec-anchored γ=0.2 {anchored:.2e}, triple-expert fused {fused:.2e}"),
    )
}

// ---------- 4: Kendall's tau ----------

fn brute_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * (a[i] != a[j]) as i64 as f64;
            let y = (b[i] - b[j]).signum() * (b[i] != b[j]) as i64 as f64;
            s += (x * y) as i64;
        }
    }
    s as f64 / ((n * (n - 1) / 2) as i64) as f64
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        let levels = [3, 10, 50, 1_000_000][case % 4];
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        if kendalls_tau(&a, &b).unwrap().to_bits() != brute_tau(&a, &b).to_bits() {
            mismatches += 1;
        }
    }
    let a = [1.0, 2.0, 3.0, 4.0];
    let same = kendalls_tau(&a, &a).unwrap();
    let reversed = kendalls_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap();
    let swap = kendalls_tau(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let hand = same == 1.0 && reversed == -1.0 && swap == 4.0 / 6.0;
    outcome(
        mismatches == 0 && hand,
        format!("{mismatches}/100 random mismatches; hand cases {same}, {reversed}, {swap}"),
    )
}

// ---------- 5: HR/nDCG against a full sort ----------

/// Position of `target` after sorting by score descending with the target
/// placed behind every item it ties with.
fn brute_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap()
            .then((i == target).cmp(&(j == target)))
    });
    order.iter().position(|&i| i == target).unwrap() + 1
}

fn brute_metrics(all_scores: &[Vec<f64>], targets: &[usize]) -> (f64, f64) {
    let (mut hr, mut ndcg) = (0.0, 0.0);
    for (s, &t) in all_scores.iter().zip(targets) {
        let pos = brute_rank(s, t);
        if pos <= 10 {
            hr += 1.0;
            ndcg += 1.0 / ((pos + 1) as f64).log2();
        }
    }
    let n = targets.len() as f64;
    (100.0 * hr / n, 100.0 * ndcg / n)
}

fn criterion_5() -> Outcome {
    let world = gen_synthetic(&SynthConfig {
        seed: 5,
        n_users: 20,
        n_items: 50,
        n_cold: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let data = preprocess_split(&world.log, &SplitConfig::default()).unwrap();
    let cfg = TrainConfig {
        seed: 5,
        model: padrec::pipeline::ModelHyper {
            d_c: 8,
            layers: 1,
            buckets: 4,
            ..Default::default()
        },
        ..TrainConfig::default()
    };
    let (text, _) = world.text.arrange(&data.items, MissingPolicy::Strict).unwrap();
    let model = padrec::pipeline::build_model(&cfg, &data, Some(&text)).unwrap();
    let fusion = Fusion::Gated {
        experts: Expert::ALL.to_vec(),
        mode: GateMode::FrequencyAware,
    };
    let examples = padrec::pipeline::split_examples(&data, Split::Test);
    let ranks = rank_examples(&model, &fusion, &examples, 1, None).unwrap();
    let tables = model.item_tables(&fusion).unwrap();
    let behaviors: Vec<&[usize]> = examples.iter().map(|e| e.0).collect();
    let targets: Vec<usize> = examples.iter().map(|e| e.1).collect();
    let scorer = model.score_users(&tables, &behaviors).unwrap();
    let model_scores: Vec<Vec<f64>> = (0..behaviors.len()).map(|b| scorer.scores(b)).collect();
    let brute_ranks: Vec<usize> = model_scores
        .iter()
        .zip(&targets)
        .map(|(s, &t)| brute_rank(s, t))
        .collect();
    let model_ok = ranks == brute_ranks && mean_metrics(&ranks, 10) == brute_metrics(&model_scores, &targets);

    // Heavily tied scores: 4 distinct levels over 50 items.
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut tie_ok = true;
    for _ in 0..10 {
        let scores: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..50).map(|_| rng.random_range(0..4) as f64).collect())
            .collect();
        let targets: Vec<usize> = (0..20).map(|_| rng.random_range(0..50)).collect();
        let ranks: Vec<usize> = scores
            .iter()
            .zip(&targets)
            .map(|(s, &t)| rank_of_target(s, t).unwrap())
            .collect();
        let brute: Vec<usize> = scores.iter().zip(&targets).map(|(s, &t)| brute_rank(s, t)).collect();
        tie_ok &= ranks == brute && mean_metrics(&ranks, 10) == brute_metrics(&scores, &targets);
    }
    let flat = vec![0.5; 50];
    tie_ok &= rank_of_target(&flat, 7).unwrap() == 50 && hr_at_k(50, 10) == 0.0 && ndcg_at_k(1, 10) == 1.0;
    outcome(
        model_ok && tie_ok,
        format!("model world (20 users, 50 items) match {model_ok}; tied-score worlds match {tie_ok}"),
    )
}

// ---------- shared small-world helpers (6, 7, 10) ----------

fn small_world(seed: u64) -> (SplitDataset, Tensor) {
    let world = gen_synthetic(&SynthConfig {
        seed,
        n_users: 500,
        n_items: 100,
        n_cold: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let data = preprocess_split(&world.log, &SplitConfig::default()).unwrap();
    let (text, _) = world.text.arrange(&data.items, MissingPolicy::Strict).unwrap();
    (data, text)
}

fn small_cfg(seed: u64, variant: AlignVariant) -> TrainConfig {
    TrainConfig {
        seed,
        variant,
        batch_size: 32,
        lr: 5e-3,
        pretrain_epochs: 3,
        align_epochs: 2,
        finetune_epochs: 2,
        model: padrec::pipeline::ModelHyper {
            d_c: 16,
            layers: 1,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

// ---------- 6: text and frozen tables stay fixed; no gradient reaches text ----------

fn criterion_6() -> Outcome {
    let (data, text) = small_world(6);
    let cfg = small_cfg(6, AlignVariant::RecAnchoredFrozen);
    let run = run_pipeline(&cfg, &data, &text, &mut |_| {}).unwrap();
    let want = text.checksum();
    let text_ok = run.align.model.text_checksum() == want && run.finetune.model.text_checksum() == want;

    let pre_table = run.pretrain.checkpoint.get("collab_rec").unwrap();
    let store = &run.align.model.store;
    let tables_ok = bits(store.value(run.align.model.collab_rec_id())) == bits(pre_table)
        && bits(store.value(run.align.model.collab_align_id())) == bits(pre_table);

    // Let the text matrix accumulate gradients, then push every loss through it.
    let mut model = run.finetune.model;
    let tid = model.text_id();
    model.store.get_mut(tid).grad = Some(vec![0.0; text.numel()]);
    let seqs: Vec<&[usize]> = (0..16).map(|u| data.train_example(u).0).collect();
    let negs: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| s[1..].iter().map(|&p| (p + 1) % data.n_items()).collect())
        .collect();
    let batch = Batch::next_item(&seqs, &negs, cfg.model.max_len).unwrap();
    let mut grad_zero = true;
    let mut others_flow = false;
    for variant in [
        AlignVariant::RecAnchored,
        AlignVariant::RecAnchoredFrozen,
        AlignVariant::NonAnchored,
    ] {
        model.store.zero_grad();
        let mut tape = Tape::new();
        let objective = Objective::for_variant(variant, 0.2, AlignLossConfig::default());
        let fusion = phase_fusion(Phase::Finetune, &cfg);
        let l = batch_loss(&model, &mut tape, &batch, &fusion, &objective).unwrap();
        tape.backward(l.total, &mut model.store).unwrap();
        grad_zero &= model.store.grad(tid).unwrap().iter().all(|&g| g == 0.0);
        others_flow |= model
            .store
            .iter()
            .any(|(id, p)| id != tid && p.grad.as_ref().is_some_and(|g| g.iter().any(|&x| x != 0.0)));
    }
    outcome(
        text_ok && tables_ok && grad_zero && others_flow,
        format!(
            "text checksum fixed {text_ok}; frozen collab tables bit-identical {tables_ok}; text gradient exactly zero {grad_zero}"
        ),
    )
}

// ---------- 8, 9, 7: the synthetic-world experiments ----------

fn experiment_cfg(seed: u64, variant: AlignVariant) -> TrainConfig {
    TrainConfig {
        seed,
        variant,
        batch_size: 64,
        lr: 5e-3,
        pretrain_epochs: 10,
        align_epochs: 3,
        finetune_epochs: 3,
        model: padrec::pipeline::ModelHyper {
            d_c: 32,
            layers: 1,
            ..Default::default()
        },
        threads: 1,
        ..TrainConfig::default()
    }
}

struct SeedRuns {
    data: SplitDataset,
    text: Tensor,
    pre: PhaseResult,
    anchored_align: PhaseResult,
    base_cold: f64,
    pad_cold: f64,
    pad_ndcg: f64,
    control_cold: f64,
    gate_ok: bool,
}

fn pad_on(
    cfg: &TrainConfig,
    data: &SplitDataset,
    text: &Tensor,
    pre: &PhaseResult,
) -> (PhaseResult, padrec::eval::Report, bool) {
    let ali = align_phase(cfg, data, text, &pre.checkpoint, &mut |_| {}).unwrap();
    let fin = finetune_phase(cfg, data, text, &pre.checkpoint, &ali.checkpoint, &mut |_| {}).unwrap();
    let report = final_report(cfg, data, pre, &ali, &fin).unwrap();
    let gate_ok = report.gate.as_ref().is_some_and(|g| g.on_simplex(1e-6))
        && fin.gate_stats.as_ref().is_some_and(|g| g.on_simplex(1e-6));
    (ali, report, gate_ok)
}

fn seed_runs(seed: u64) -> SeedRuns {
    let info = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let control = SynthConfig {
        noise: 1e6,
        ..info.clone()
    };
    let (w_info, w_ctrl) = (gen_synthetic(&info).unwrap(), gen_synthetic(&control).unwrap());
    assert_eq!(w_info.log, w_ctrl.log, "noise must only change text");
    let data = preprocess_split(&w_info.log, &SplitConfig::default()).unwrap();
    let (text, _) = w_info.text.arrange(&data.items, MissingPolicy::Strict).unwrap();
    let (ctrl_text, _) = w_ctrl.text.arrange(&data.items, MissingPolicy::Strict).unwrap();
    let cfg = experiment_cfg(seed, AlignVariant::RecAnchored);
    let pre = pretrain(&cfg, &data, &mut |_| {}).unwrap();
    let (anchored_align, report, gate_info) = pad_on(&cfg, &data, &text, &pre);
    let (_, ctrl_report, gate_ctrl) = pad_on(&cfg, &data, &ctrl_text, &pre);
    SeedRuns {
        base_cold: report.baseline.as_ref().unwrap().cold.ndcg,
        pad_cold: report.rank.cold.ndcg,
        pad_ndcg: report.rank.overall.ndcg,
        control_cold: ctrl_report.rank.cold.ndcg,
        gate_ok: gate_info && gate_ctrl,
        data,
        text,
        pre,
        anchored_align,
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_8(runs: &[SeedRuns], secs: f64) -> Outcome {
    let base = mean(runs.iter().map(|r| r.base_cold));
    let pad = mean(runs.iter().map(|r| r.pad_cold));
    let ctrl = mean(runs.iter().map(|r| r.control_cold));
    let lift = pad / base - 1.0;
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}/{:.2}", r.base_cold, r.pad_cold, r.control_cold))
        .collect();
    outcome(
        lift >= 0.2 && pad - base > ctrl - base && secs < 600.0,
        format!(
            "cold nDCG@10 baseline {base:.2}, PAD {pad:.2} ({:+.1}%), text gain {:.2} vs noise-control gain {:.2}, {secs:.0}s (per seed base/pad/control: {})",
            100.0 * lift,
            pad - base,
            ctrl - base,
            per_seed.join(" ")
        ),
    )
}

fn criterion_9(runs: &[SeedRuns]) -> Outcome {
    let mut kt_rec = Vec::new();
    let mut kt_non = Vec::new();
    let mut nd_non = Vec::new();
    for (seed, r) in runs.iter().enumerate() {
        kt_rec.push(
            alignment_kt(&r.data, &r.pre.checkpoint, &r.anchored_align.model)
                .unwrap()
                .mean_bucket_tau
                .unwrap(),
        );
        let cfg = experiment_cfg(seed as u64, AlignVariant::NonAnchored);
        let (ali, report, _) = pad_on(&cfg, &r.data, &r.text, &r.pre);
        kt_non.push(
            alignment_kt(&r.data, &r.pre.checkpoint, &ali.model)
                .unwrap()
                .mean_bucket_tau
                .unwrap(),
        );
        nd_non.push(report.rank.overall.ndcg);
    }
    let (kr, kn) = (mean(kt_rec.iter().copied()), mean(kt_non.iter().copied()));
    let (nr, nn) = (mean(runs.iter().map(|r| r.pad_ndcg)), mean(nd_non.iter().copied()));
    outcome(
        kr > kn && nr >= nn,
        format!(
            "mean bucketed KT rec_anchored {kr:.4} vs non_anchored {kn:.4} (per seed {:?} vs {:?}); final nDCG@10 {nr:.2} vs {nn:.2}",
            kt_rec.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            kt_non.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn criterion_7(runs: &[SeedRuns]) -> Outcome {
    let ok = runs.iter().all(|r| r.gate_ok);
    outcome(
        ok,
        format!("gate rows non-negative and summing to 1 within 1e-6 in training and test scoring of {} full runs (x2 text worlds)", runs.len()),
    )
}

// ---------- 10: determinism ----------

fn criterion_10() -> Outcome {
    let (data, text) = small_world(10);
    let cfg = small_cfg(10, AlignVariant::RecAnchored);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for k in 0..2 {
        let run = run_pipeline(&cfg, &data, &text, &mut |_| {}).unwrap();
        let p = dir.path().join(format!("final{k}.ckpt"));
        run.finetune.checkpoint.save(&p).unwrap();
        files.push(std::fs::read(&p).unwrap());
        reports.push(run.report.to_json().unwrap());
    }
    let same_ckpt = files[0] == files[1];
    let same_report = reports[0] == reports[1];
    outcome(
        same_ckpt && same_report,
        format!(
            "final.ckpt byte-identical {same_ckpt} ({} bytes); report.json identical {same_report}",
            files[0].len()
        ),
    )
}

fn main() {
    // Optional arguments select criteria, e.g. `cargo test --test acceptance -- 1 4`.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| only.is_empty() || only.contains(&id);
    let start = Instant::now();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |id: u32, run: &dyn Fn() -> Outcome| {
        if wanted(id) {
            let o = run();
            println!(
                "criterion {id:>2}: {}  {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            results.push((id, o));
        }
    };
    report(1, &criterion_1);
    report(2, &criterion_2);
    report(3, &criterion_3);
    report(4, &criterion_4);
    report(5, &criterion_5);
    report(6, &criterion_6);
    if [7, 8, 9].into_iter().any(wanted) {
        let t = Instant::now();
        let runs: Vec<SeedRuns> = (0..3).map(seed_runs).collect();
        let secs = t.elapsed().as_secs_f64();
        report(7, &|| criterion_7(&runs));
        report(8, &|| criterion_8(&runs, secs));
        report(9, &|| criterion_9(&runs));
    }
    report(10, &criterion_10);
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
