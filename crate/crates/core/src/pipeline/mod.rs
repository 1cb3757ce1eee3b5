//! Pre-train, align and fine-tune phases, checkpoints and the end-to-end run.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{phase_groups, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use config::{AlignKernel, AlignLossConfig, AlignVariant, Estimator, ModelHyper, Phase, Precision, TrainConfig};
pub use train::{
    align_phase, alignment_loss, batch_loss, build_model, early_stop, evaluate, finetune_phase, model_from_checkpoint,
    negative_sample, phase_fusion, pretrain, split_examples, AlignTerm, BatchLoss, EpochMetrics, Objective,
    PhaseResult, Split,
};

use crate::data::SplitDataset;
use crate::error::Result;
use crate::eval::{bucketed_kt, KtReport, Report};
use crate::model::{GateStats, PadModel};
use crate::tensor::Tensor;

/// Kendall's tau of behavior→target distances in `collab_align` before
/// (the pre-trained `collab_rec` it was copied from) and after alignment.
pub fn alignment_kt(data: &SplitDataset, pretrained: &Checkpoint, aligned: &PadModel) -> Result<KtReport> {
    let before = pretrained
        .get("collab_rec")
        .ok_or_else(|| crate::PadError::Checkpoint("pretrain checkpoint lacks collab_rec".into()))?;
    let after = aligned.store.value(aligned.collab_align_id());
    let views: Vec<&[usize]> = (0..data.n_users()).map(|u| data.train_view(u)).collect();
    bucketed_kt(before, after, &views, aligned.buckets(), aligned.config.buckets)
}

/// Test-split report of a fine-tuned model, with the baseline and alignment diagnostics.
pub fn final_report(
    cfg: &TrainConfig,
    data: &SplitDataset,
    pretrained: &PhaseResult,
    aligned: &PhaseResult,
    finetuned: &PhaseResult,
) -> Result<Report> {
    let fusion = phase_fusion(Phase::Finetune, cfg);
    let mut gate = GateStats::new(&fusion.experts(), cfg.model.buckets);
    let rank = evaluate(
        &finetuned.model,
        &fusion,
        data,
        Split::Test,
        cfg.eval_k,
        cfg.threads,
        Some(&mut gate),
    )?;
    let baseline = evaluate(
        &pretrained.model,
        &phase_fusion(Phase::Pretrain, cfg),
        data,
        Split::Test,
        cfg.eval_k,
        cfg.threads,
        None,
    )?;
    Ok(Report {
        rank,
        baseline: Some(baseline),
        kt: Some(alignment_kt(data, &pretrained.checkpoint, &aligned.model)?),
        pairs: None,
        gate: (fusion.experts().len() > 1).then_some(gate),
    })
}

/// All three phases in order.
pub struct PipelineRun {
    pub pretrain: PhaseResult,
    pub align: PhaseResult,
    pub finetune: PhaseResult,
    pub report: Report,
}

pub fn run_pipeline(
    cfg: &TrainConfig,
    data: &SplitDataset,
    text: &Tensor,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<PipelineRun> {
    let pre = pretrain(cfg, data, observer)?;
    let ali = align_phase(cfg, data, text, &pre.checkpoint, observer)?;
    let fin = finetune_phase(cfg, data, text, &pre.checkpoint, &ali.checkpoint, observer)?;
    let report = final_report(cfg, data, &pre, &ali, &fin)?;
    Ok(PipelineRun {
        pretrain: pre,
        align: ali,
        finetune: fin,
        report,
    })
}
