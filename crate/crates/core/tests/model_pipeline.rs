//! Model forward pass, gating, losses, checkpoints and short training runs.

use padrec::data::SplitDataset;
use padrec::model::{bucketize, Batch, EncoderKind, Expert, Fusion, GateMode, ModelConfig, PadModel};
use padrec::pipeline::{
    align_phase, batch_loss, early_stop, evaluate, model_from_checkpoint, negative_sample, pretrain, AlignLossConfig,
    AlignVariant, Checkpoint, CheckpointMeta, ModelHyper, Objective, Phase, Precision, Split, TrainConfig,
};
use padrec::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 20;

fn micro_model(seed: u64) -> PadModel {
    let cfg = ModelConfig {
        n_items: V,
        d_c: 8,
        d_t: 6,
        max_len: 5,
        encoder: EncoderKind::Attention,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        buckets: 4,
        d_b: 4,
        gate_hidden: 6,
        init_std: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = Tensor::from_fn(&[V, 6], |_| rng.random_range(-1.0..1.0));
    let freq: Vec<u32> = (0..V).map(|i| (i * 7 % 13) as u32).collect();
    PadModel::new(cfg, text, bucketize(&freq, 4).unwrap(), seed).unwrap()
}

fn micro_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<Vec<usize>> = (0..4)
        .map(|_| (0..6).map(|_| rng.random_range(0..V)).collect())
        .collect();
    let negs: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| {
            s[1..]
                .iter()
                .map(|&p| negative_sample(&mut rng, p, V).unwrap())
                .collect()
        })
        .collect();
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
    Batch::next_item(&refs, &negs, 5).unwrap()
}

fn all_experts() -> Fusion {
    Fusion::Gated {
        experts: Expert::ALL.to_vec(),
        mode: GateMode::FrequencyAware,
    }
}

/// Zero the second gate layer and set each expert's output bias.
fn pin_gate(model: &mut PadModel, biases: [f64; 3]) {
    for (name, b) in ["gate.id", "gate.align", "gate.llm"].iter().zip(biases) {
        let w2 = model.store.id(&format!("{name}.w2")).unwrap();
        let b2 = model.store.id(&format!("{name}.b2")).unwrap();
        let shape = model.store.value(w2).shape().to_vec();
        model.store.assign(w2, &Tensor::zeros(&shape)).unwrap();
        model.store.assign(b2, &Tensor::vector(vec![b])).unwrap();
    }
}

fn gate_rows(model: &PadModel, batch: &Batch) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, batch, &all_experts()).unwrap();
    let w = tape.value(out.gate_weights.unwrap()).clone();
    (0..w.shape()[0]).map(|r| w.row(r).to_vec()).collect()
}

#[test]
fn gate_weights_on_simplex_and_vary_by_bucket() {
    let model = micro_model(1);
    let batch = micro_batch(2);
    let rows = gate_rows(&model, &batch);
    for r in &rows {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|&w| w > 0.0));
    }
    assert!(rows.windows(2).any(|w| w[0] != w[1]), "gate ignores its inputs");
}

#[test]
fn gate_equal_logits_and_saturation() {
    let mut model = micro_model(1);
    let batch = micro_batch(2);
    pin_gate(&mut model, [0.7, 0.7, 0.7]);
    for r in gate_rows(&model, &batch) {
        for w in r {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    pin_gate(&mut model, [0.0, 30.0, 0.0]);
    for r in gate_rows(&model, &batch) {
        assert!(r[1] > 1.0 - 1e-12 && r[0] < 1e-12 && r[2] < 1e-12);
    }
    // A saturated gate reproduces the single expert's logits.
    let mut t1 = Tape::new();
    let fused = model.forward(&mut t1, &batch, &all_experts()).unwrap();
    let mut t2 = Tape::new();
    let single = model.forward(&mut t2, &batch, &Fusion::Single(Expert::Align)).unwrap();
    for (a, b) in t1.value(fused.logits).data().iter().zip(t2.value(single.logits).data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn single_expert_masks_reduce_to_the_expert() {
    let model = micro_model(4);
    let batch = micro_batch(5);
    for e in Expert::ALL {
        let mut t1 = Tape::new();
        let single = model.forward(&mut t1, &batch, &Fusion::Single(e)).unwrap();
        for mode in [GateMode::FrequencyAware, GateMode::GlobalLearned] {
            let mut t2 = Tape::new();
            let gated = model
                .forward(&mut t2, &batch, &Fusion::Gated { experts: vec![e], mode })
                .unwrap();
            assert_eq!(
                t1.value(single.logits).data(),
                t2.value(gated.logits).data(),
                "{e:?} {mode:?}"
            );
        }
    }
}

#[test]
fn bce_at_zero_logits_is_ln2() {
    let mut model = micro_model(7);
    let id = model.collab_rec_id();
    model.store.assign(id, &Tensor::zeros(&[V, 8])).unwrap();
    let batch = micro_batch(8);
    let mut tape = Tape::new();
    let l = batch_loss(
        &model,
        &mut tape,
        &batch,
        &Fusion::Single(Expert::Id),
        &Objective::rec_only(),
    )
    .unwrap();
    assert!((tape.value(l.total).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn loss_decomposes_and_grows_with_gamma() {
    let model = micro_model(9);
    let batch = micro_batch(10);
    let fusion = Fusion::Single(Expert::Align);
    let mut last = f64::NEG_INFINITY;
    for gamma in [0.0, 0.1, 0.5, 2.0] {
        let objective = Objective::for_variant(AlignVariant::RecAnchored, gamma, AlignLossConfig::default());
        let mut tape = Tape::new();
        let l = batch_loss(&model, &mut tape, &batch, &fusion, &objective).unwrap();
        let (total, bce, mmd) = (
            tape.value(l.total).item().unwrap(),
            tape.value(l.bce.unwrap()).item().unwrap(),
            tape.value(l.align.unwrap()).item().unwrap(),
        );
        assert!((total - (bce + gamma * mmd)).abs() < 1e-10);
        assert!(mmd > 0.0);
        assert!(total > last);
        last = total;
        if gamma == 0.0 {
            let mut t0 = Tape::new();
            let rec = batch_loss(&model, &mut t0, &batch, &fusion, &Objective::rec_only()).unwrap();
            assert_eq!(t0.value(rec.total).item().unwrap().to_bits(), total.to_bits());
        }
    }
    let na = Objective::for_variant(AlignVariant::NonAnchored, 0.3, AlignLossConfig::default());
    let mut tape = Tape::new();
    let l = batch_loss(&model, &mut tape, &batch, &fusion, &na).unwrap();
    assert!(l.bce.is_none());
    let mmd = tape.value(l.align.unwrap()).item().unwrap();
    assert!((tape.value(l.total).item().unwrap() - 0.3 * mmd).abs() < 1e-15);
}

#[test]
fn negatives_are_uniform_over_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, pos, draws) = (10usize, 3usize, 90_000usize);
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        counts[negative_sample(&mut rng, pos, n).unwrap()] += 1;
    }
    assert_eq!(counts[pos], 0);
    let expected = draws as f64 / (n - 1) as f64;
    let chi2: f64 = (0..n)
        .filter(|&i| i != pos)
        .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
        .sum();
    // 8 degrees of freedom, p = 0.001
    assert!(chi2 < 26.12, "chi2 {chi2}");
    assert!(negative_sample(&mut rng, 0, 1).is_err());
}

#[test]
fn early_stop_rules() {
    assert_eq!(early_stop(&[], 3), (false, None));
    assert_eq!(early_stop(&[0.1, 0.3, 0.2], 3), (false, Some(2)));
    assert_eq!(early_stop(&[0.1, 0.3, 0.2, 0.3, 0.25], 3), (true, Some(2)));
    assert_eq!(early_stop(&[0.5, 0.5], 1), (true, Some(1)));
    assert_eq!(early_stop(&[0.1, 0.2, 0.3], 1), (false, Some(3)));
}

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        phase: Phase::Pretrain,
        seed: 3,
        best_epoch: 2,
        epochs_run: 4,
        history: vec![0.1, 0.4, 0.3, 0.2],
    }
}

#[test]
fn checkpoint_round_trip_and_rejections() {
    let model = micro_model(12);
    for precision in [Precision::F64, Precision::F32] {
        let ckpt = Checkpoint::from_model(&model, precision, serde_json::json!({"a": 1}), meta());
        let bytes = ckpt.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"PADCKPT1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.meta, meta());
        assert!(back.get("collab_rec").is_some());
        back.check_against(&model).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
    let f64_ckpt = Checkpoint::from_model(&model, Precision::F64, serde_json::Value::Null, meta());
    let id = model.collab_rec_id();
    assert_eq!(f64_ckpt.get("collab_rec").unwrap(), model.store.value(id));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    f64_ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), f64_ckpt);

    let mut other_cfg = model.config.clone();
    other_cfg.d_c = 4;
    let other = PadModel::new(other_cfg, Tensor::zeros(&[V, 6]), vec![0; V], 0).unwrap();
    assert!(f64_ckpt.check_against(&other).is_err());
}

/// Twenty users walking a ring of ten items; each user starts somewhere else.
fn ring_data() -> SplitDataset {
    let items: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
    let users: Vec<String> = (0..20).map(|u| format!("u{u:02}")).collect();
    let sequences = (0..20).map(|u| (0..8).map(|k| (u + k) % 10).collect()).collect();
    SplitDataset::from_parts(items, users, sequences).unwrap()
}

fn toy_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 5,
        lr: 1e-2,
        pretrain_epochs: 15,
        patience: 20,
        model: ModelHyper {
            d_c: 8,
            layers: 1,
            buckets: 2,
            d_b: 2,
            gate_hidden: 4,
            max_len: 8,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn pretraining_learns_the_ring_and_checkpoint_replays() {
    let data = ring_data();
    let cfg = toy_cfg();
    let mut seen = Vec::new();
    let run = pretrain(&cfg, &data, &mut |m| seen.push(m.clone())).unwrap();
    assert_eq!(seen.len(), run.history.len());
    let losses: Vec<f64> = run.history.iter().map(|m| m.loss).collect();
    assert!(losses.last().unwrap() < &(0.8 * losses[0]), "{losses:?}");
    let best = &run.history[run.best_epoch - 1];
    assert!(best.val_ndcg10 > 50.0, "{}", best.val_ndcg10);

    let model = model_from_checkpoint(&cfg, &data, None, &run.checkpoint).unwrap();
    let fusion = Fusion::Single(Expert::Id);
    let report = evaluate(&model, &fusion, &data, Split::Val, 10, 1, None).unwrap();
    assert_eq!(report.overall.ndcg.to_bits(), best.val_ndcg10.to_bits());
    assert_eq!(report.overall.hr.to_bits(), best.val_hr10.to_bits());

    let again = pretrain(&cfg, &data, &mut |_| {}).unwrap();
    assert_eq!(again.checkpoint.to_bytes().unwrap(), run.checkpoint.to_bytes().unwrap());
}

#[test]
fn zero_gamma_alignment_matches_variant_none() {
    let data = ring_data();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let text = Tensor::from_fn(&[10, 4], |_| rng.random_range(-1.0..1.0));
    let cfg = TrainConfig {
        pretrain_epochs: 3,
        align_epochs: 3,
        ..toy_cfg()
    };
    let pre = pretrain(&cfg, &data, &mut |_| {}).unwrap();
    let run = |variant, gamma| {
        let c = TrainConfig {
            variant,
            gamma,
            ..cfg.clone()
        };
        align_phase(&c, &data, &text, &pre.checkpoint, &mut |_| {}).unwrap()
    };
    let none = run(AlignVariant::None, 0.2);
    let zero = run(AlignVariant::RecAnchored, 0.0);
    let bits = |r: &padrec::pipeline::PhaseResult| {
        r.checkpoint
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&none), bits(&zero));
    assert!(zero.history.iter().all(|m| m.loss_mmd.is_some()));
    assert!(none.history.iter().all(|m| m.loss_mmd.is_none()));
    assert_ne!(bits(&run(AlignVariant::RecAnchored, 0.5)), bits(&none));
}
