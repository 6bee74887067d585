//! Model commands: pretrain, finetune, multitask, eval, inspect, gradcheck.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use turnwise::evaluation::{read_examples, MetricReport};
use turnwise::model::{
    check_loss_gradients, inspect_example, load_checkpoint, save_checkpoint, EncoderConfig,
    GradCheckReport, LossKind,
};
use turnwise::samplegen::read_samples;
use turnwise::training::{
    self, rank_examples, write_history_json, write_loss_csv, TaskFlags, TaskSets,
};

use crate::artifacts::Artifacts;
use crate::config::Resolved;
use crate::manifest::Manifest;

use super::{load_vocab, manifest_for};

fn format_scores(scores: &BTreeMap<String, f64>) -> String {
    scores
        .iter()
        .map(|(name, value)| format!("{name} {value:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_report(report: &MetricReport) -> String {
    format!(
        "R_n@1 {:.4}, R_n@2 {:.4}, R_n@5 {:.4}, MAP {:.4}, MRR {:.4}, P@1 {:.4}",
        report.r_at_1, report.r_at_2, report.r_at_5, report.map, report.mrr, report.p_at_1
    )
}

fn fmt_step(step: Option<u64>) -> String {
    step.map(|s| s.to_string()).unwrap_or_else(|| "-".into())
}

fn load_task_sets(
    art: &Artifacts,
    flags: &TaskFlags,
    split: &str,
    manifest: &mut Manifest,
) -> Result<TaskSets> {
    let mut sets = TaskSets {
        insertion: Vec::new(),
        deletion: Vec::new(),
        replacement: Vec::new(),
    };
    let wanted = [
        (flags.insertion, "insertion"),
        (flags.deletion, "deletion"),
        (flags.replacement, "replacement"),
    ];
    for (enabled, task) in wanted {
        if !enabled {
            continue;
        }
        let path = art.samples(task, split);
        art.require(&path, &format!("gen --task {task}"))?;
        manifest.record_input(&path)?;
        let samples = read_samples(&path)?;
        match task {
            "insertion" => sets.insertion = samples,
            "deletion" => sets.deletion = samples,
            _ => sets.replacement = samples,
        }
    }
    Ok(sets)
}

pub fn pretrain(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let vocab = load_vocab(&art)?;

    let mut manifest = manifest_for("pretrain", cfg);
    manifest.record_input(&art.vocab())?;
    let tcfg = cfg.pretrain.clone();
    let train = load_task_sets(&art, &tcfg.tasks, "train", &mut manifest)?;
    let valid = load_task_sets(&art, &tcfg.tasks, "valid", &mut manifest)?;

    let mut enc = cfg.encoder.clone();
    if enc.vocab_size == 0 {
        enc.vocab_size = vocab.size();
    }

    let run = training::pretrain(&train, &valid, &vocab, &enc, &tcfg)?;

    save_checkpoint(&art.checkpoint("pretrain"), &run.best)?;
    write_loss_csv(&art.loss_csv("pretrain"), &run.trace)?;
    write_history_json(&art.history("pretrain"), &run.history)?;
    for path in [
        art.checkpoint("pretrain"),
        art.loss_csv("pretrain"),
        art.history("pretrain"),
    ] {
        manifest.record_output(&path)?;
    }
    manifest.write(art.out_dir())?;

    println!(
        "pretrained {} steps ({} over-long samples skipped)",
        run.steps_run, run.skipped
    );
    if let Some(record) = run.history.last() {
        println!("final validation: {}", format_scores(&record.scores));
    }
    println!(
        "best step {} -> {}",
        fmt_step(run.best.best_step),
        art.checkpoint("pretrain").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportsFile<'a> {
    schema_version: u32,
    reports: &'a [MetricReport],
}

pub fn finetune(cfg: &Resolved, init: Option<PathBuf>) -> Result<()> {
    run_selection(cfg, init, "finetune")
}

pub fn multitask(cfg: &Resolved, init: Option<PathBuf>) -> Result<()> {
    run_selection(cfg, init, "multitask")
}

fn run_selection(cfg: &Resolved, init: Option<PathBuf>, stage: &str) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let vocab = load_vocab(&art)?;
    let dialogues = cfg.dialogues.as_ref().context(
        "config has no \"dialogues\" section; fine-tuning needs train/valid example files",
    )?;
    let train = read_examples(&dialogues.train)?;
    let valid = read_examples(&dialogues.valid)?;

    let init_path = init.unwrap_or_else(|| art.checkpoint("pretrain"));
    art.require(&init_path, "pretrain")?;
    let init_ckpt = load_checkpoint(&init_path)?;

    let mut manifest = manifest_for(stage, cfg);
    manifest.record_input(&art.vocab())?;
    manifest.record_input(&dialogues.train)?;
    manifest.record_input(&dialogues.valid)?;
    manifest.record_input(&init_path)?;

    // Response selection is what these commands train; the flag is not
    // optional here. `finetune` additionally forces the auxiliaries off.
    let mut tcfg = cfg.finetune.clone();
    tcfg.tasks.reselect = true;

    let run = match stage {
        "finetune" => training::finetune(&train, &valid, init_ckpt, &vocab, &tcfg)?,
        _ => training::domain_multitask(&train, &valid, init_ckpt, &vocab, &tcfg)?,
    };

    save_checkpoint(&art.checkpoint(stage), &run.best)?;
    write_loss_csv(&art.loss_csv(stage), &run.trace)?;
    write_history_json(&art.history(stage), &run.history)?;
    let reports_json = serde_json::to_string_pretty(&ReportsFile {
        schema_version: 1,
        reports: &run.reports,
    })
    .context("serializing epoch reports")?;
    fs::write(art.reports(stage), reports_json)
        .with_context(|| format!("writing {}", art.reports(stage).display()))?;
    for path in [
        art.checkpoint(stage),
        art.loss_csv(stage),
        art.history(stage),
        art.reports(stage),
    ] {
        manifest.record_output(&path)?;
    }
    manifest.write(art.out_dir())?;

    if let Some(report) = run.reports.last() {
        println!(
            "epoch {} validation: {}",
            run.reports.len(),
            format_report(report)
        );
    }
    println!(
        "best step {} -> {}",
        fmt_step(run.best.best_step),
        art.checkpoint(stage).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    schema_version: u32,
    checkpoint: String,
    examples: String,
    report: &'a MetricReport,
}

pub fn eval(cfg: &Resolved, checkpoint: Option<PathBuf>, examples: Option<PathBuf>) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let vocab = load_vocab(&art)?;

    let ckpt_path = checkpoint.unwrap_or_else(|| art.checkpoint("finetune"));
    art.require(&ckpt_path, "finetune")?;
    let ckpt = load_checkpoint(&ckpt_path)?;

    let examples_path = match examples {
        Some(path) => path,
        None => cfg
            .dialogues
            .as_ref()
            .and_then(|d| d.test.clone())
            .context("no examples file: pass --examples or set dialogues.test in the config")?,
    };
    let examples = read_examples(&examples_path)?;

    let max_len = cfg.finetune.max_len.min(ckpt.config.max_positions);
    let report = rank_examples(&ckpt.params, &ckpt.config, &vocab, &examples, max_len)?;

    println!(
        "{}: {} examples, {} groups ({} excluded)",
        examples_path.display(),
        examples.len(),
        report.n_groups,
        report.n_excluded
    );
    println!("{}", format_report(&report));

    let json = serde_json::to_string_pretty(&MetricsFile {
        schema_version: 1,
        checkpoint: ckpt_path.display().to_string(),
        examples: examples_path.display().to_string(),
        report: &report,
    })
    .context("serializing metrics")?;
    fs::write(art.metrics(), json)
        .with_context(|| format!("writing {}", art.metrics().display()))?;

    let mut manifest = manifest_for("eval", cfg);
    manifest.record_input(&art.vocab())?;
    manifest.record_input(&ckpt_path)?;
    manifest.record_input(&examples_path)?;
    manifest.record_output(&art.metrics())?;
    manifest.write(art.out_dir())?;
    Ok(())
}

pub fn inspect(
    cfg: &Resolved,
    example: PathBuf,
    index: usize,
    checkpoint: Option<PathBuf>,
    threshold: Option<f64>,
) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    let vocab = load_vocab(&art)?;

    // Default to the fine-tuned model, falling back to pre-training.
    let ckpt_path = match checkpoint {
        Some(path) => {
            art.require(&path, "finetune")?;
            path
        }
        None => {
            let finetuned = art.checkpoint("finetune");
            if finetuned.exists() {
                finetuned
            } else {
                let pretrained = art.checkpoint("pretrain");
                art.require(&pretrained, "pretrain")?;
                pretrained
            }
        }
    };
    let ckpt = load_checkpoint(&ckpt_path)?;

    let examples = read_examples(&example)?;
    let chosen = examples.get(index).with_context(|| {
        format!(
            "example index {index} out of range ({} examples in {})",
            examples.len(),
            example.display()
        )
    })?;

    let max_len = cfg.finetune.max_len.min(ckpt.config.max_positions);
    let sims = inspect_example(
        &ckpt.config,
        &ckpt.params,
        &vocab,
        &chosen.context,
        &chosen.response,
        max_len,
    )?;

    println!("checkpoint: {}", ckpt_path.display());
    println!("response: {}", chosen.response);
    let dropped = chosen.context.len() - sims.len();
    if dropped > 0 {
        println!("(oldest {dropped} context turns truncated to fit)");
    }
    println!("{:>4}  {:>8}  utterance", "#", "cosine");
    for (offset, (sim, turn)) in sims.iter().zip(&chosen.context[dropped..]).enumerate() {
        let mark = match threshold {
            Some(t) if *sim >= t => " *",
            Some(_) => "  ",
            None => "",
        };
        println!("{:>4}  {sim:>8.4}{mark}  {turn}", dropped + offset + 1);
    }

    let mut manifest = manifest_for("inspect", cfg);
    manifest.record_input(&art.vocab())?;
    manifest.record_input(&ckpt_path)?;
    manifest.record_input(&example)?;
    manifest.write(art.out_dir())?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckFile {
    schema_version: u32,
    tolerance: f64,
    reports: Vec<GradCheckReport>,
}

pub fn gradcheck(cfg: &Resolved) -> Result<()> {
    let art = Artifacts::new(&cfg.out_dir);
    fs::create_dir_all(art.out_dir())
        .with_context(|| format!("creating {}", art.out_dir().display()))?;

    // A small fixed probe keeps central differences over every parameter
    // coordinate fast regardless of the configured encoder size.
    let enc = EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        max_positions: 64,
        vocab_size: 32,
        dropout: 0.0,
        seed: cfg.seed,
    };
    const EPS: f64 = 1e-5;
    const TOLERANCE: f64 = 1e-4;

    let mut reports = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in LossKind::ALL {
        let report = check_loss_gradients(&enc, kind, EPS)?;
        println!(
            "{:<12} loss {:.6}  max rel err {:.3e}  {}",
            report.kind.name(),
            report.loss,
            report.max_rel_err,
            if report.max_rel_err < TOLERANCE {
                "ok"
            } else {
                "FAIL"
            }
        );
        worst = worst.max(report.max_rel_err);
        reports.push(report);
    }

    let json = serde_json::to_string_pretty(&GradcheckFile {
        schema_version: 1,
        tolerance: TOLERANCE,
        reports,
    })
    .context("serializing gradient checks")?;
    fs::write(art.gradcheck(), json)
        .with_context(|| format!("writing {}", art.gradcheck().display()))?;

    let mut manifest = manifest_for("gradcheck", cfg);
    manifest.record_output(&art.gradcheck())?;
    manifest.write(art.out_dir())?;

    if worst >= TOLERANCE {
        bail!("gradient check failed: max relative error {worst:.3e} >= {TOLERANCE:e}");
    }
    Ok(())
}
