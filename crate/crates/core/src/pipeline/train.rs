//! The three training phases.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::checkpoint::{phase_groups, Checkpoint, CheckpointMeta};
use super::config::{AlignKernel, AlignLossConfig, AlignVariant, Estimator, Phase, Precision, TrainConfig};
use crate::data::SplitDataset;
use crate::error::{PadError, Result};
use crate::eval::{mean_metrics, rank_examples, rank_report, RankReport};
use crate::kernels::{infonce_loss, mmd2_biased, mmd2_unbiased, MultiKernel};
use crate::model::{bucketize, Batch, Expert, Fusion, GateStats, PadModel, ParamGroup};
use crate::optim::{AdamW, AdamWConfig};
use crate::param::ParamId;
use crate::seed;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform draw from the catalog excluding `positive`.
pub fn negative_sample<R: Rng + ?Sized>(rng: &mut R, positive: usize, n_items: usize) -> Result<usize> {
    if n_items < 2 {
        return Err(PadError::InvalidArgument(format!(
            "negative sampling needs at least 2 items, catalog has {n_items}"
        )));
    }
    let r = rng.random_range(0..n_items - 1);
    Ok(if r >= positive { r + 1 } else { r })
}

/// `(stop, best_epoch)` for a validation history; epochs are 1-based and the
/// earliest maximum wins. Stops once `patience` epochs pass without a strict improvement.
pub fn early_stop(history: &[f64], patience: usize) -> (bool, Option<usize>) {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in history.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k + 1, v));
        }
    }
    match best {
        None => (false, None),
        Some((e, _)) => (history.len() - e >= patience, Some(e)),
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, Serialize)]
pub struct EpochMetrics {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
    pub loss_bce: Option<f64>,
    pub loss_mmd: Option<f64>,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
    pub wall_seconds: f64,
}

/// The weighted alignment term of the phase-2 loss.
#[derive(Clone, Debug)]
pub struct AlignTerm {
    pub gamma: f64,
    /// Stop-gradient on the collaborative side.
    pub detach_collab: bool,
    pub loss: AlignLossConfig,
}

/// What a training step minimises.
#[derive(Clone, Debug)]
pub struct Objective {
    /// BCE of the (fused) logits.
    pub rec: bool,
    pub align: Option<AlignTerm>,
}

impl Objective {
    pub fn rec_only() -> Self {
        Objective { rec: true, align: None }
    }

    pub fn for_variant(variant: AlignVariant, gamma: f64, loss: AlignLossConfig) -> Self {
        let term = |detach_collab| {
            Some(AlignTerm {
                gamma,
                detach_collab,
                loss,
            })
        };
        match variant {
            AlignVariant::None => Objective::rec_only(),
            AlignVariant::NonAnchored => Objective {
                rec: false,
                align: term(false),
            },
            AlignVariant::RecAnchored => Objective {
                rec: true,
                align: term(false),
            },
            AlignVariant::RecAnchoredFrozen => Objective {
                rec: true,
                align: term(true),
            },
        }
    }
}

/// Loss nodes of one batch.
pub struct BatchLoss {
    pub total: Var,
    pub bce: Option<Var>,
    /// Unweighted alignment discrepancy.
    pub align: Option<Var>,
    /// `[rows, E]` gate weights and each row's target bucket.
    pub gate: Option<(Var, Vec<usize>)>,
}

/// Discrepancy between projected text `x` and collaborative `y` rows.
pub fn alignment_loss(tape: &mut Tape, x: Var, y: Var, cfg: &AlignLossConfig) -> Result<Var> {
    let n = tape.shape(x)[0];
    match cfg.kernel {
        AlignKernel::InfoNce => infonce_loss(tape, x, y, cfg.temperature),
        AlignKernel::Cosine => paired_cosine_distance(tape, x, y),
        _ => {
            let mk: MultiKernel = cfg.multi_kernel()?.expect("MMD kernels have a bank");
            if cfg.estimator == Estimator::Unbiased && n >= 2 {
                mmd2_unbiased(tape, x, y, &mk)
            } else {
                mmd2_biased(tape, x, y, &mk)
            }
        }
    }
}

/// `mean_i (1 − cos(x_i, y_i))` over row pairs of the same item. The cosine
/// kernel is a distance, so it is applied to matched rows rather than
/// plugged into MMD² (where it would reward pushing the two sets apart).
fn paired_cosine_distance(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    let xn = tape.normalize_rows(x)?;
    let yn = tape.normalize_rows(y)?;
    let prod = tape.mul(xn, yn)?;
    let total = tape.sum(prod)?;
    let mean = tape.scale(total, -1.0 / n as f64)?;
    tape.add_scalar(mean, 1.0)
}

/// Build the loss of `batch` on `tape`.
pub fn batch_loss(
    model: &PadModel,
    tape: &mut Tape,
    batch: &Batch,
    fusion: &Fusion,
    objective: &Objective,
) -> Result<BatchLoss> {
    let mut total = None;
    let mut bce = None;
    let mut gate = None;
    if objective.rec {
        let out = model.forward(tape, batch, fusion)?;
        let l = tape.bce_with_logits(out.logits, &out.labels, None)?;
        bce = Some(l);
        total = Some(l);
        gate = out.gate_weights.map(|w| (w, out.row_buckets));
    }
    let mut align = None;
    if let Some(term) = &objective.align {
        let items = batch.observed_items();
        let (proj, collab) = model.align_parts(tape, &items)?;
        let collab = if term.detach_collab {
            tape.detach(collab)?
        } else {
            collab
        };
        let d = alignment_loss(tape, proj, collab, &term.loss)?;
        align = Some(d);
        let weighted = tape.scale(d, term.gamma)?;
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| PadError::Config("objective has no loss term".into()))?;
    Ok(BatchLoss {
        total,
        bce,
        align,
        gate,
    })
}

/// Result of one phase: the best-validation model and its checkpoint.
pub struct PhaseResult {
    pub model: PadModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Gate rows seen while training and validating (fine-tuning only).
    pub gate_stats: Option<GateStats>,
}

/// Which split's targets to rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

pub fn split_examples(data: &SplitDataset, split: Split) -> Vec<(&[usize], usize)> {
    (0..data.n_users())
        .map(|u| match split {
            Split::Val => data.val_example(u),
            Split::Test => data.test_example(u),
        })
        .collect()
}

/// Whole-catalog ranking report for one split.
pub fn evaluate(
    model: &PadModel,
    fusion: &Fusion,
    data: &SplitDataset,
    split: Split,
    k: usize,
    threads: usize,
    gate: Option<&mut GateStats>,
) -> Result<RankReport> {
    let examples = split_examples(data, split);
    let ranks = rank_examples(model, fusion, &examples, threads, gate)?;
    let targets: Vec<usize> = examples.iter().map(|e| e.1).collect();
    rank_report(&ranks, &targets, model.buckets(), model.config.buckets, k)
}

/// Scoring rule of a phase's model.
pub fn phase_fusion(phase: Phase, cfg: &TrainConfig) -> Fusion {
    match phase {
        Phase::Pretrain => Fusion::Single(Expert::Id),
        Phase::Align => Fusion::Single(Expert::Align),
        Phase::Finetune => Fusion::Gated {
            experts: cfg.expert_mask(),
            mode: cfg.gating,
        },
    }
}

/// Fresh model. Without `text` a one-column zero matrix stands in; the
/// recommendation expert never reads it.
pub fn build_model(cfg: &TrainConfig, data: &SplitDataset, text: Option<&Tensor>) -> Result<PadModel> {
    cfg.validate()?;
    let v = data.n_items();
    let text = match text {
        Some(t) => {
            if t.rank() != 2 || t.shape()[0] != v {
                return Err(PadError::Data(format!(
                    "text matrix has shape {:?}, catalog has {v} items",
                    t.shape()
                )));
            }
            t.clone()
        }
        None => Tensor::zeros(&[v, 1]),
    };
    let buckets = bucketize(data.train_freq(), cfg.model.buckets)?;
    let mc = cfg.model.model_config(v, text.shape()[1]);
    let mut model = PadModel::new(mc, text, buckets, cfg.seed)?;
    if cfg.precision == Precision::F32 {
        let ids: Vec<ParamId> = model.store.ids().collect();
        round_f32(&mut model, &ids);
    }
    Ok(model)
}

/// Rebuild the model a checkpoint describes.
pub fn model_from_checkpoint(
    cfg: &TrainConfig,
    data: &SplitDataset,
    text: Option<&Tensor>,
    ckpt: &Checkpoint,
) -> Result<PadModel> {
    let mut model = build_model(cfg, data, text)?;
    ckpt.restore(&mut model, phase_groups(ckpt.meta.phase))?;
    Ok(model)
}

fn round_f32(model: &mut PadModel, ids: &[ParamId]) {
    for &id in ids {
        model
            .store
            .value_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = *v as f32 as f64);
    }
}

type Observer<'a> = &'a mut dyn FnMut(&EpochMetrics);

/// Phase 1: the recommendation expert alone.
pub fn pretrain(cfg: &TrainConfig, data: &SplitDataset, observer: Observer) -> Result<PhaseResult> {
    let model = build_model(cfg, data, None)?;
    let trainable = model.groups(&[ParamGroup::IdTable, ParamGroup::IdEncoder]);
    run_phase(
        cfg,
        data,
        model,
        Phase::Pretrain,
        trainable,
        &Objective::rec_only(),
        observer,
    )
}

/// Phase 2: the alignment expert, started from the pre-trained one.
pub fn align_phase(
    cfg: &TrainConfig,
    data: &SplitDataset,
    text: &Tensor,
    pretrained: &Checkpoint,
    observer: Observer,
) -> Result<PhaseResult> {
    expect_phase(pretrained, Phase::Pretrain)?;
    let mut model = build_model(cfg, data, Some(text))?;
    pretrained.restore(&mut model, phase_groups(Phase::Pretrain))?;
    model.copy_id_into_align()?;
    use ParamGroup::*;
    let groups: &[ParamGroup] = match cfg.variant {
        AlignVariant::None | AlignVariant::RecAnchored => &[AlignTable, AlignMlp, AlignFuse, AlignEncoder],
        AlignVariant::NonAnchored => &[AlignTable, AlignMlp],
        AlignVariant::RecAnchoredFrozen => &[AlignMlp, AlignFuse, AlignEncoder],
    };
    let trainable = model.groups(groups);
    let objective = Objective::for_variant(cfg.variant, cfg.gamma, cfg.align_loss.clone());
    run_phase(cfg, data, model, Phase::Align, trainable, &objective, observer)
}

/// Phase 3: all experts in the mask, fused by the gate.
pub fn finetune_phase(
    cfg: &TrainConfig,
    data: &SplitDataset,
    text: &Tensor,
    pretrained: &Checkpoint,
    aligned: &Checkpoint,
    observer: Observer,
) -> Result<PhaseResult> {
    expect_phase(pretrained, Phase::Pretrain)?;
    expect_phase(aligned, Phase::Align)?;
    let mut model = build_model(cfg, data, Some(text))?;
    pretrained.restore(&mut model, &[ParamGroup::IdTable, ParamGroup::IdEncoder])?;
    aligned.restore(
        &mut model,
        &[
            ParamGroup::AlignTable,
            ParamGroup::AlignMlp,
            ParamGroup::AlignFuse,
            ParamGroup::AlignEncoder,
        ],
    )?;
    let experts = cfg.expert_mask();
    let mut trainable: Vec<ParamId> = experts.iter().flat_map(|&e| model.expert_params(e)).collect();
    if experts.len() > 1 {
        trainable.extend(model.gate_params(&experts, cfg.gating));
    }
    run_phase(
        cfg,
        data,
        model,
        Phase::Finetune,
        trainable,
        &Objective::rec_only(),
        observer,
    )
}

fn expect_phase(ckpt: &Checkpoint, phase: Phase) -> Result<()> {
    if ckpt.meta.phase != phase {
        return Err(PadError::Checkpoint(format!(
            "expected a {phase} checkpoint, got {}",
            ckpt.meta.phase
        )));
    }
    Ok(())
}

fn run_phase(
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut model: PadModel,
    phase: Phase,
    trainable: Vec<ParamId>,
    objective: &Objective,
    observer: Observer,
) -> Result<PhaseResult> {
    let n_users = data.n_users();
    if n_users == 0 {
        return Err(PadError::Data("training set is empty".into()));
    }
    let fusion = phase_fusion(phase, cfg);
    let mut gate_stats =
        matches!(fusion, Fusion::Gated { .. }).then(|| GateStats::new(&fusion.experts(), cfg.model.buckets));
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let tag = phase.name();
    let mut shuffle_rng = seed::rng(cfg.seed, &format!("{}/{tag}", seed::SHUFFLE));
    let mut neg_rng = seed::rng(cfg.seed, &format!("{}/{tag}", seed::NEGATIVES));
    let dropout_base = seed::derive(cfg.seed, &format!("{}/{tag}", seed::DROPOUT));
    let v = data.n_items();
    let max_len = cfg.model.max_len;
    let config_json = serde_json::to_value(cfg)?;

    let start = Instant::now();
    let mut order: Vec<usize> = (0..n_users).collect();
    let mut history = Vec::new();
    let mut ndcgs = Vec::new();
    let mut best: Option<Vec<Tensor>> = None;
    let mut step: u64 = 0;
    for epoch in 1..=cfg.max_epochs(phase) {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_loss, mut sum_bce, mut sum_align, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&u| data.train_view(u)).collect();
            let negatives = seqs
                .iter()
                .map(|s| {
                    s[1..]
                        .iter()
                        .map(|&p| negative_sample(&mut neg_rng, p, v))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::next_item(&seqs, &negatives, max_len)?;
            let mut tape = Tape::training(seed::splitmix64(dropout_base.wrapping_add(step)));
            step += 1;
            let loss = batch_loss(&model, &mut tape, &batch, &fusion, objective)?;
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(PadError::domain(
                    "training",
                    format!("{tag} loss became {total} at epoch {epoch}"),
                ));
            }
            sum_loss += total;
            sum_bce += loss.bce.map_or(0.0, |b| tape.scalar(b));
            sum_align += loss.align.map_or(0.0, |a| tape.scalar(a));
            batches += 1;
            if let (Some(st), Some((w, rows))) = (gate_stats.as_mut(), &loss.gate) {
                st.observe(tape.value(*w).data(), rows);
            }
            model.store.zero_grad();
            tape.backward(loss.total, &mut model.store)?;
            opt.step(&mut model.store, &trainable)?;
            if cfg.precision == Precision::F32 {
                round_f32(&mut model, &trainable);
            }
        }
        let examples = split_examples(data, Split::Val);
        let ranks = rank_examples(&model, &fusion, &examples, cfg.threads, gate_stats.as_mut())?;
        let (hr, ndcg) = mean_metrics(&ranks, 10);
        let n = batches.max(1) as f64;
        let m = EpochMetrics {
            phase,
            epoch,
            loss: sum_loss / n,
            loss_bce: objective.rec.then_some(sum_bce / n),
            loss_mmd: objective.align.as_ref().map(|_| sum_align / n),
            val_hr10: hr,
            val_ndcg10: ndcg,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        observer(&m);
        history.push(m);
        ndcgs.push(ndcg);
        let (stop, best_epoch) = early_stop(&ndcgs, cfg.patience);
        if best_epoch == Some(epoch) {
            best = Some(trainable.iter().map(|&id| model.store.value(id).clone()).collect());
        }
        if stop {
            break;
        }
    }
    if let Some(values) = best {
        for (&id, t) in trainable.iter().zip(&values) {
            model.store.assign(id, t)?;
        }
    }
    let best_epoch = early_stop(&ndcgs, cfg.patience).1.unwrap_or(0);
    let meta = CheckpointMeta {
        phase,
        seed: cfg.seed,
        best_epoch,
        epochs_run: ndcgs.len(),
        history: ndcgs,
    };
    let checkpoint = Checkpoint::from_model(&model, cfg.precision, config_json, meta);
    Ok(PhaseResult {
        model,
        checkpoint,
        history,
        best_epoch,
        gate_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn negative_never_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(negative_sample(&mut rng, 0, 2).unwrap(), 1);
            assert_ne!(negative_sample(&mut rng, 3, 7).unwrap(), 3);
        }
        assert!(negative_sample(&mut rng, 0, 1).is_err());
    }

    #[test]
    fn early_stop_rules() {
        assert_eq!(early_stop(&[5.0, 4.0, 4.0], 2), (true, Some(1)));
        assert_eq!(early_stop(&[5.0, 4.0], 2), (false, Some(1)));
        assert_eq!(early_stop(&[1.0], 1), (false, Some(1)));
        assert_eq!(early_stop(&[1.0, 2.0, 3.0, 4.0], 1), (false, Some(4)));
        assert_eq!(early_stop(&[2.0, 2.0, 2.0], 2), (true, Some(1)));
        assert_eq!(early_stop(&[], 3), (false, None));
    }

    #[test]
    fn variant_objectives() {
        let l = AlignLossConfig::default();
        assert!(Objective::for_variant(AlignVariant::None, 0.2, l.clone())
            .align
            .is_none());
        assert!(!Objective::for_variant(AlignVariant::NonAnchored, 0.2, l.clone()).rec);
        assert!(
            Objective::for_variant(AlignVariant::RecAnchoredFrozen, 0.2, l)
                .align
                .unwrap()
                .detach_collab
        );
    }
}
