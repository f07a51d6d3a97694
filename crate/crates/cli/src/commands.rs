use std::fs;
use std::io::Write;
use std::path::Path;

use cka_core::amalgamation::{evaluate_union, Predictor};
use cka_core::checks::{check_all_losses, check_loss, CheckResult};
use cka_core::data::save_dataset;
use cka_core::losses::Metric;
use cka_core::models::{load_network, save_network, Network};
use cka_core::slots::SlotRange;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    final_accuracy, prepare_data, pretrain_all, pretrain_one, run_method, student_spec, summarize, teacher_dir, write_json,
    write_run, Method,
};

pub fn write_resolved(cfg: &RunConfig) -> CliResult<()> {
    write_json(&cfg.output_dir.join("resolved_config.json"), cfg)
}

pub fn gen_data(cfg: &RunConfig, out: &mut impl Write) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let dir = cfg.output_dir.join("data");
    let seed = Some(cfg.data.blobs.seed);
    save_dataset(&dir.join("train"), &data.train, seed)?;
    save_dataset(&dir.join("test"), &data.test_raw, seed)?;
    write_json(&dir.join("tasks.json"), &data.partition)?;
    writeln!(
        out,
        "{}",
        json!({"train": data.train.len(), "test": data.test_raw.len(), "classes": data.num_classes(), "dir": dir})
    )?;
    Ok(())
}

pub fn pretrain(cfg: &RunConfig, task: Option<usize>, out: &mut impl Write) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let trained = match task {
        Some(t) => vec![pretrain_one(cfg, &data, t)?],
        None => pretrain_all(cfg, &data)?,
    };
    for (net, eval) in trained {
        let dir = teacher_dir(cfg, eval.teacher_id);
        save_network(&net, &dir)?;
        write_json(&dir.join("report.json"), &eval)?;
        writeln!(out, "{}", serde_json::to_string(&eval)?)?;
    }
    Ok(())
}

pub fn load_teachers(cfg: &RunConfig, count: usize) -> CliResult<Vec<Network>> {
    (0..count)
        .map(|i| {
            let dir = teacher_dir(cfg, i);
            if !dir.join("manifest.json").exists() {
                return Err(CliError::MissingCheckpoint(dir));
            }
            Ok(load_network(&dir)?)
        })
        .collect()
}

fn train_student(cfg: &RunConfig, method: Method, subdir: &str, out: &mut impl Write) -> CliResult<()> {
    let data = prepare_data(cfg)?;
    let teachers = load_teachers(cfg, data.partition.tasks.len())?;
    let run = run_method(method, &teachers, &student_spec(cfg, &data), &data, &cfg.amalgamation())?;
    let summary = summarize(&run, method, cfg.train.seed);
    write_run(&cfg.output_dir.join(subdir), &run, &summary)?;
    if !summary.teachers_unchanged {
        return Err(CliError::Failed("teacher parameters changed during training".into()));
    }
    writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    Ok(())
}

pub fn amalgamate(cfg: &RunConfig, out: &mut impl Write) -> CliResult<()> {
    train_student(cfg, Method::Cka, "cka", out)
}

pub fn baseline(cfg: &RunConfig, method: &str, out: &mut impl Write) -> CliResult<()> {
    match method {
        "kd" => train_student(cfg, Method::Kd, "kd", out),
        "cfl" => train_student(cfg, Method::Cfl, "cfl", out),
        "ensemble" => {
            let data = prepare_data(cfg)?;
            let teachers = load_teachers(cfg, data.partition.tasks.len())?;
            let acc = evaluate_union(Predictor::Ensemble(&teachers), &data.test, &data.ranges)?;
            write_json(&cfg.output_dir.join("ensemble").join("summary.json"), &acc)?;
            writeln!(out, "{}", serde_json::to_string(&acc)?)?;
            Ok(())
        }
        other => Err(CliError::Failed(format!("unknown baseline `{other}` (ensemble, kd, cfl)"))),
    }
}

pub fn evaluate(cfg: &RunConfig, ckpt: &Path, out: &mut impl Write) -> CliResult<()> {
    if !ckpt.join("manifest.json").exists() {
        return Err(CliError::MissingCheckpoint(ckpt.to_path_buf()));
    }
    let net = load_network(ckpt)?;
    let data = prepare_data(cfg)?;
    let width = data.num_classes();
    let pred = if net.slots() == SlotRange::new(0, width)? {
        Predictor::Direct(&net)
    } else {
        Predictor::ZeroPadded { teacher: &net, width }
    };
    let acc = evaluate_union(pred, &data.test, &data.ranges)?;
    let record = json!({"checkpoint": ckpt, "acc_union": acc.union, "acc_tasks": acc.per_task});
    write_json(&cfg.output_dir.join("evaluation.json"), &record)?;
    writeln!(out, "{record}")?;
    Ok(())
}

pub fn format_check(r: &CheckResult) -> String {
    format!(
        "{:<12} max_rel_err={:.3e} configs={} {}",
        r.name,
        r.max_rel_error,
        r.configs,
        if r.passed { "PASS" } else { "FAIL" }
    )
}

pub fn gradcheck(op: &str, configs: usize, seed: u64, out: &mut impl Write) -> CliResult<()> {
    let results = if op == "all" {
        check_all_losses(configs, seed)?
    } else {
        vec![check_loss(op, configs, seed)?]
    };
    for r in &results {
        writeln!(out, "{}", format_check(r))?;
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

pub fn ablation_methods(axis: &str) -> CliResult<Vec<Method>> {
    match axis {
        "losses" => Ok(vec![Method::Cka, Method::CkaNoIntra, Method::CkaNoInter, Method::Kd, Method::Cfl]),
        "inter-metric" => Ok(vec![
            Method::CkaNoInter,
            Method::CkaMetric(Metric::Euclidean),
            Method::CkaMetric(Metric::Cosine),
            Method::CkaMetric(Metric::MmdSpatial),
        ]),
        other => Err(CliError::Failed(format!("unknown ablation axis `{other}` (losses, inter-metric)"))),
    }
}

/// One row per method and seed; teachers are retrained for every seed.
pub fn ablate(cfg: &RunConfig, axis: &str, out: &mut impl Write) -> CliResult<()> {
    let methods = ablation_methods(axis)?;
    let root = cfg.output_dir.join(format!("ablate-{axis}"));
    fs::create_dir_all(&root)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut tasks = 0;
    for &seed in &cfg.seeds {
        let seeded = cfg.clone().with_seed(seed);
        let data = prepare_data(&seeded)?;
        tasks = data.partition.tasks.len();
        let teachers: Vec<Network> = pretrain_all(&seeded, &data)?.into_iter().map(|(n, _)| n).collect();
        let spec = student_spec(&seeded, &data);
        for &m in &methods {
            // On the metric axis, dropping the inter term is the "no metric" row.
            let label = match (axis, m) {
                ("inter-metric", Method::CkaNoInter) => "CKA-NoInter".to_string(),
                _ => m.label(),
            };
            let run = run_method(m, &teachers, &spec, &data, &seeded.amalgamation())?;
            let dir = root.join(format!("{label}-seed{seed}"));
            let mut summary = summarize(&run, m, seed);
            summary.method = label.clone();
            write_run(&dir, &run, &summary)?;
            let acc = final_accuracy(&run);
            let mut row = vec![label, seed.to_string(), format!("{:.4}", acc.union)];
            row.extend(acc.per_task.iter().map(|a| format!("{a:.4}")));
            rows.push(row);
        }
    }
    let mut header = vec!["method".to_string(), "seed".into(), "acc_union".into()];
    header.extend((1..=tasks).map(|i| format!("acc_task{i}")));
    let path = cfg.output_dir.join(format!("ablate-{axis}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let mut buf = csv::Writer::from_writer(Vec::new());
    buf.write_record(&header)?;
    for r in &rows {
        buf.write_record(r)?;
    }
    out.write_all(&buf.into_inner().map_err(|e| CliError::Failed(e.to_string()))?)?;
    Ok(())
}
