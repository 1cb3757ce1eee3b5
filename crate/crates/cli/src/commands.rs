use std::path::{Path, PathBuf};

use clap::Args;
use padrec::config::RunConfig;
use padrec::data::{
    gen_synthetic, load_text_embeddings, load_tsv, preprocess_split, write_text_file, write_tsv, SplitDataset,
    SynthConfig,
};
use padrec::eval::{behavior_target_pairs, bucketed_kt, top_bottom_pair_analysis, write_pairs_csv, RankReport, Report};
use padrec::model::{bucketize, Expert, GateMode, GateStats};
use padrec::pipeline::{
    align_phase, evaluate, finetune_phase, model_from_checkpoint, phase_fusion, pretrain as run_pretrain, run_pipeline,
    AlignKernel, AlignVariant, Checkpoint, Phase, TrainConfig,
};
use padrec::{PadError, Result, Tensor};

use crate::rundir::{MetricsLog, RunDir};
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    users: usize,
    #[arg(long, default_value_t = 500)]
    items: usize,
    #[arg(long, default_value_t = 50)]
    cold: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    /// Text noise scale; large values make text uninformative.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 64)]
    text_dim: usize,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Pre-trained checkpoint; defaults to `<run-dir>/pretrain.ckpt`.
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Aligned checkpoint; defaults to `<run-dir>/align.ckpt`.
    #[arg(long)]
    aligned: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to rank with; defaults to `<run-dir>/final.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<AlignVariant, String> {
    s.parse().map_err(|e: PadError| e.to_string())
}

fn parse_kernel(s: &str) -> std::result::Result<AlignKernel, String> {
    s.parse().map_err(|e: PadError| e.to_string())
}

fn parse_experts(s: &str) -> std::result::Result<Vec<Expert>, String> {
    let mut v: Vec<Expert> = s
        .split(',')
        .map(|x| x.trim().parse::<Expert>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn parse_gating(s: &str) -> std::result::Result<GateMode, String> {
    s.parse().map_err(|e: PadError| e.to_string())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Alignment variants to try. Repeatable.
    #[arg(long = "align-variant", value_parser = parse_variant)]
    variants: Vec<AlignVariant>,
    /// Alignment kernels to try. Repeatable.
    #[arg(long = "kernel", value_parser = parse_kernel)]
    kernels: Vec<AlignKernel>,
    /// Expert subsets such as `id` or `id,llm`. Repeatable.
    #[arg(long = "experts", value_parser = parse_experts)]
    experts: Vec<Vec<Expert>>,
    /// Gating modes to try. Repeatable.
    #[arg(long = "gating", value_parser = parse_gating)]
    gatings: Vec<GateMode>,
    /// Train the pre-trained model instead of reading `<run-dir>/pretrain.ckpt`.
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    pretrained: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Reference checkpoint; defaults to `<run-dir>/pretrain.ckpt`.
    #[arg(long)]
    before: Option<PathBuf>,
    /// Compared checkpoint; defaults to `<run-dir>/align.ckpt`.
    #[arg(long)]
    after: Option<PathBuf>,
    /// Table read from `--before`; defaults to collab_rec for a pre-train checkpoint, else collab_align.
    #[arg(long)]
    before_table: Option<String>,
    /// Table read from `--after`; defaults to collab_align when present, else collab_rec.
    #[arg(long)]
    after_table: Option<String>,
}

fn open(g: &GlobalArgs, cfg: &RunConfig) -> Result<RunDir> {
    let rd = RunDir::claim(&g.run_dir)?;
    rd.write("resolved_config.json", &cfg.to_json()?)?;
    Ok(rd)
}

/// Dataset from `data.dataset`, else a fresh split of `data.log`, else `<run-dir>/dataset.json`.
fn load_dataset(cfg: &RunConfig, rd: &RunDir) -> Result<SplitDataset> {
    let read_json = |p: &Path| -> Result<SplitDataset> {
        let text = std::fs::read_to_string(p).map_err(|e| PadError::io(p, e))?;
        SplitDataset::from_json(&text)
    };
    if let Some(p) = &cfg.data.dataset {
        return read_json(p);
    }
    if let Some(p) = &cfg.data.log {
        let log = load_tsv(p)?;
        let data = preprocess_split(&log, &cfg.split_config())?;
        rd.write("dataset.json", &data.to_json()?)?;
        return Ok(data);
    }
    let p = rd.file("dataset.json");
    if p.exists() {
        return read_json(&p);
    }
    Err(PadError::Config(
        "no data: set data.log or data.dataset, or run preprocess first".into(),
    ))
}

fn load_text(cfg: &RunConfig, data: &SplitDataset) -> Result<Tensor> {
    let path = cfg
        .data
        .text
        .as_ref()
        .ok_or_else(|| PadError::Config("data.text is required for this command".into()))?;
    let index = cfg.data.text_index_path().expect("text path is set");
    let (t, missing) = load_text_embeddings(path, &index, &data.items, cfg.data.missing_text)?;
    if !missing.is_empty() {
        eprintln!("warning: {} items have no text row and use zeros", missing.len());
    }
    Ok(t)
}

fn load_ckpt(explicit: &Option<PathBuf>, rd: &RunDir, default: &str) -> Result<Checkpoint> {
    let p = explicit.clone().unwrap_or_else(|| rd.file(default));
    Checkpoint::load(&p)
}

/// The training config a checkpoint was written with, keeping this run's threads and cutoff.
fn ckpt_config(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<TrainConfig> {
    let mut c: TrainConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| PadError::Checkpoint(format!("trailer config unreadable: {e}")))?;
    c.threads = cfg.train.threads;
    c.eval_k = cfg.train.eval_k;
    Ok(c)
}

fn summary(name: &str, r: &RankReport) {
    println!(
        "{name}: HR@{k} {:.2}  nDCG@{k} {:.2}  (warm {:.2} / median {:.2} / cold {:.2} nDCG)",
        r.overall.hr,
        r.overall.ndcg,
        r.warm.ndcg,
        r.median.ndcg,
        r.cold.ndcg,
        k = r.k
    );
}

pub fn synth(g: &GlobalArgs, cfg: RunConfig, a: &SynthArgs) -> Result<()> {
    let out = a.out_dir.clone().unwrap_or_else(|| g.run_dir.clone());
    let sc = SynthConfig {
        seed: cfg.train.seed,
        n_users: a.users,
        n_items: a.items,
        n_cold: a.cold,
        latent_dim: a.latent_dim,
        noise: a.noise,
        text_dim: a.text_dim,
        ..SynthConfig::default()
    };
    let world = gen_synthetic(&sc)?;
    let rd = RunDir::claim(&out)?;
    let (log, text) = (rd.file("log.tsv"), rd.file("text.padv1"));
    write_tsv(&log, &world.log)?;
    write_text_file(&text, &rd.file("text.padv1.index"), &world.text)?;
    let mut generated = cfg.clone();
    generated.data.log = Some(log.clone());
    generated.data.text = Some(text);
    generated.data.text_index = None;
    let mut table = toml::Table::new();
    for (k, v) in generated.to_flat() {
        if !v.is_null() && (k.starts_with("data.") || k == "seed") {
            table.insert(k, toml::Value::try_from(v).expect("scalar config values convert"));
        }
    }
    rd.write(
        "config.toml",
        &toml::to_string(&table).map_err(|e| PadError::Format(e.to_string()))?,
    )?;
    rd.write("resolved_config.json", &generated.to_json()?)?;
    println!(
        "wrote {} interactions, {} text rows ({} cold items) to {}",
        world.log.len(),
        world.text.ids.len(),
        world.cold_items.len(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(g: &GlobalArgs, cfg: RunConfig) -> Result<()> {
    let rd = open(g, &cfg)?;
    let path = cfg
        .data
        .log
        .as_ref()
        .ok_or_else(|| PadError::Config("data.log is required for preprocess".into()))?;
    let data = preprocess_split(&load_tsv(path)?, &cfg.split_config())?;
    rd.write("dataset.json", &data.to_json()?)?;
    println!(
        "{} users, {} items -> {}",
        data.n_users(),
        data.n_items(),
        rd.file("dataset.json").display()
    );
    Ok(())
}

pub fn pretrain(g: &GlobalArgs, cfg: RunConfig) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let mut log = MetricsLog::open(rd.file("metrics.jsonl"), false)?;
    let res = run_pretrain(&cfg.train, &data, &mut |m| log.record(m))?;
    log.finish()?;
    res.checkpoint.save(&rd.file("pretrain.ckpt"))?;
    println!("pretrain: best epoch {} of {}", res.best_epoch, res.history.len());
    Ok(())
}

pub fn align(g: &GlobalArgs, cfg: RunConfig, a: &AlignArgs) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let pre = load_ckpt(&a.pretrained, &rd, "pretrain.ckpt")?;
    let text = load_text(&cfg, &data)?;
    let mut log = MetricsLog::open(rd.file("metrics.jsonl"), false)?;
    let res = align_phase(&cfg.train, &data, &text, &pre, &mut |m| log.record(m))?;
    log.finish()?;
    res.checkpoint.save(&rd.file("align.ckpt"))?;
    println!(
        "align ({}): best epoch {} of {}",
        cfg.train.variant.name(),
        res.best_epoch,
        res.history.len()
    );
    Ok(())
}

pub fn finetune(g: &GlobalArgs, cfg: RunConfig, a: &FinetuneArgs) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let pre = load_ckpt(&a.pretrained, &rd, "pretrain.ckpt")?;
    let ali = load_ckpt(&a.aligned, &rd, "align.ckpt")?;
    let text = load_text(&cfg, &data)?;
    let mut log = MetricsLog::open(rd.file("metrics.jsonl"), false)?;
    let res = finetune_phase(&cfg.train, &data, &text, &pre, &ali, &mut |m| log.record(m))?;
    log.finish()?;
    res.checkpoint.save(&rd.file("final.ckpt"))?;
    println!("finetune: best epoch {} of {}", res.best_epoch, res.history.len());
    Ok(())
}

pub fn pipeline(g: &GlobalArgs, cfg: RunConfig) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let text = load_text(&cfg, &data)?;
    let mut log = MetricsLog::open(rd.file("metrics.jsonl"), true)?;
    let run = run_pipeline(&cfg.train, &data, &text, &mut |m| log.record(m))?;
    log.finish()?;
    run.pretrain.checkpoint.save(&rd.file("pretrain.ckpt"))?;
    run.align.checkpoint.save(&rd.file("align.ckpt"))?;
    run.finetune.checkpoint.save(&rd.file("final.ckpt"))?;
    run.report.write(&rd.file("report.json"))?;
    if let Some(b) = &run.report.baseline {
        summary("baseline (pretrain)", b);
    }
    summary("final", &run.report.rank);
    Ok(())
}

pub fn eval(g: &GlobalArgs, cfg: RunConfig, a: &EvalArgs) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let ckpt = load_ckpt(&a.checkpoint, &rd, "final.ckpt")?;
    let tc = ckpt_config(&ckpt, &cfg)?;
    let phase = ckpt.meta.phase;
    let text = match phase {
        Phase::Pretrain => None,
        _ => Some(load_text(&cfg, &data)?),
    };
    let model = model_from_checkpoint(&tc, &data, text.as_ref(), &ckpt)?;
    let fusion = phase_fusion(phase, &tc);
    let gated = fusion.experts().len() > 1;
    let mut gate = GateStats::new(&fusion.experts(), tc.model.buckets);
    let rank = evaluate(
        &model,
        &fusion,
        &data,
        cfg.eval.split,
        tc.eval_k,
        tc.threads,
        gated.then_some(&mut gate),
    )?;
    summary(phase.name(), &rank);
    Report {
        rank,
        baseline: None,
        kt: None,
        pairs: None,
        gate: gated.then_some(gate),
    }
    .write(&rd.file("eval_report.json"))
}

pub fn ablate(g: &GlobalArgs, cfg: RunConfig, a: &AblateArgs) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let text = load_text(&cfg, &data)?;
    let base = &cfg.train;
    let variants = or(&a.variants, base.variant);
    let kernels = or(&a.kernels, base.align_loss.kernel);
    let experts = if a.experts.is_empty() {
        vec![base.expert_mask()]
    } else {
        a.experts.clone()
    };
    let gatings = or(&a.gatings, base.gating);
    let mut log = MetricsLog::open(rd.file("metrics.jsonl"), false)?;
    let pre = if a.from_scratch {
        let r = run_pretrain(base, &data, &mut |m| log.record(m))?;
        r.checkpoint.save(&rd.file("pretrain.ckpt"))?;
        r.checkpoint
    } else {
        load_ckpt(&a.pretrained, &rd, "pretrain.ckpt")?
    };
    let k = base.eval_k;
    let mut csv = format!(
        "variant_id,hr@{k},ndcg@{k},warm_hr@{k},warm_ndcg@{k},median_hr@{k},median_ndcg@{k},cold_hr@{k},cold_ndcg@{k}\n"
    );
    for &variant in &variants {
        for &kernel in &kernels {
            let mut tc = base.clone();
            tc.variant = variant;
            tc.align_loss.kernel = kernel;
            let ali = align_phase(&tc, &data, &text, &pre, &mut |m| log.record(m))?;
            for ex in &experts {
                for &gating in &gatings {
                    let mut fc = tc.clone();
                    fc.experts = ex.clone();
                    fc.gating = gating;
                    fc.validate()?;
                    let fin = finetune_phase(&fc, &data, &text, &pre, &ali.checkpoint, &mut |m| log.record(m))?;
                    let fusion = phase_fusion(Phase::Finetune, &fc);
                    let r = evaluate(&fin.model, &fusion, &data, cfg.eval.split, k, fc.threads, None)?;
                    let names: Vec<&str> = ex.iter().map(|e| e.name()).collect();
                    let gating_name = serde_json::to_value(gating)?;
                    let id = format!(
                        "{}/{}/{}/{}",
                        variant.name(),
                        kernel.name(),
                        names.join("+"),
                        gating_name.as_str().unwrap_or_default()
                    );
                    summary(&id, &r);
                    csv.push_str(&format!(
                        "{id},{},{},{},{},{},{},{},{}\n",
                        r.overall.hr,
                        r.overall.ndcg,
                        r.warm.hr,
                        r.warm.ndcg,
                        r.median.hr,
                        r.median.ndcg,
                        r.cold.hr,
                        r.cold.ndcg
                    ));
                }
            }
        }
    }
    log.finish()?;
    rd.write("ablation.csv", &csv)
}

/// The flag values, or the configured value when the flag was not given.
fn or<T: Clone>(given: &[T], default: T) -> Vec<T> {
    if given.is_empty() {
        vec![default]
    } else {
        given.to_vec()
    }
}

fn default_before_table(ckpt: &Checkpoint) -> &'static str {
    match ckpt.meta.phase {
        Phase::Pretrain => "collab_rec",
        _ => "collab_align",
    }
}

fn default_after_table(ckpt: &Checkpoint) -> &'static str {
    if ckpt.get("collab_align").is_some() {
        "collab_align"
    } else {
        "collab_rec"
    }
}

fn table<'a>(ckpt: &'a Checkpoint, name: &str, which: &str, data: &SplitDataset) -> Result<&'a Tensor> {
    let t = ckpt
        .get(name)
        .ok_or_else(|| PadError::Checkpoint(format!("{which} checkpoint has no table '{name}'")))?;
    if t.rank() != 2 || t.shape()[0] != data.n_items() {
        return Err(PadError::Data(format!(
            "{which} table '{name}' has shape {:?} but the dataset has {} items",
            t.shape(),
            data.n_items()
        )));
    }
    Ok(t)
}

pub fn diagnose(g: &GlobalArgs, cfg: RunConfig, a: &DiagnoseArgs) -> Result<()> {
    let rd = open(g, &cfg)?;
    let data = load_dataset(&cfg, &rd)?;
    let before = load_ckpt(&a.before, &rd, "pretrain.ckpt")?;
    let after = load_ckpt(&a.after, &rd, "align.ckpt")?;
    let bt = a
        .before_table
        .clone()
        .unwrap_or_else(|| default_before_table(&before).into());
    let at = a
        .after_table
        .clone()
        .unwrap_or_else(|| default_after_table(&after).into());
    let tb = table(&before, &bt, "before", &data)?;
    let ta = table(&after, &at, "after", &data)?;
    let text = load_text(&cfg, &data)?;
    let views: Vec<&[usize]> = (0..data.n_users()).map(|u| data.train_view(u)).collect();
    let n_buckets = cfg.train.model.buckets;
    let buckets = bucketize(data.train_freq(), n_buckets)?;
    let kt = bucketed_kt(tb, ta, &views, &buckets, n_buckets)?;
    let pairs = behavior_target_pairs(&views);
    let (analysis, rows) = top_bottom_pair_analysis(ta, &text, &pairs, cfg.eval.pair_fraction)?;
    let tc = ckpt_config(&after, &cfg)?;
    let model = model_from_checkpoint(&tc, &data, Some(&text), &after)?;
    let rank = evaluate(
        &model,
        &phase_fusion(after.meta.phase, &tc),
        &data,
        cfg.eval.split,
        tc.eval_k,
        tc.threads,
        None,
    )?;
    write_pairs_csv(&rd.file("pairs.csv"), &rows)?;
    println!(
        "{bt} -> {at}: overall tau {:?}, mean bucket tau {:?}; pair separation {:?}",
        kt.overall, kt.mean_bucket_tau, analysis.separation
    );
    Report {
        rank,
        baseline: None,
        kt: Some(kt),
        pairs: Some(analysis),
        gate: None,
    }
    .write(&rd.file("report.json"))
}
