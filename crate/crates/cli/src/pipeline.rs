//! Data preparation, teacher pretraining and method runs shared by the
//! subcommands and the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};

use cka_core::amalgamation::{
    amalgamate_student, cfl_baseline, evaluate_union, pretrain_teacher, vanilla_kd_baseline, Accuracy, AmalgamationConfig,
    AmalgamationRun, EvalSet, PretrainReport, Predictor, RunSummary,
};
use cka_core::data::{gen_blobs, gen_cross_dataset, load_idx, split_tasks, Dataset, Split, TaskPartition, TaskSpec};
use cka_core::losses::Metric;
use cka_core::models::{save_common_space, save_network, Network, NetworkSpec, ProjectionSpec, Role};
use cka_core::slots::SlotRange;
use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};

/// Train/test split plus the task partition. `test` carries union-slot labels.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub test_raw: Dataset,
    pub test: Dataset,
    pub partition: TaskPartition,
    pub ranges: Vec<SlotRange>,
}

impl Prepared {
    pub fn eval_set(&self) -> EvalSet<'_> {
        EvalSet {
            test: &self.test,
            tasks: &self.ranges,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.partition.num_classes()
    }
}

pub fn prepare_data(cfg: &RunConfig) -> CliResult<Prepared> {
    let (train, test_raw) = match cfg.data.source {
        DataSource::Blobs => gen_blobs(&cfg.data.blobs)?,
        DataSource::CrossBlobs => {
            let second = cfg.data.second.as_ref().ok_or_else(|| CliError::config("data.second", "missing"))?;
            gen_cross_dataset(&cfg.data.blobs, second)?
        }
        DataSource::Idx => {
            let p = cfg.data.idx.as_ref().ok_or_else(|| CliError::config("data.idx", "missing"))?;
            (
                load_idx(&p.train_images, &p.train_labels, p.num_classes, Split::Train)?,
                load_idx(&p.test_images, &p.test_labels, p.num_classes, Split::Test)?,
            )
        }
    };
    let c = train.num_classes;
    let partition = match &cfg.tasks.subsets {
        Some(subsets) => {
            let mut start = 0;
            let tasks = subsets
                .iter()
                .enumerate()
                .map(|(i, classes)| {
                    let slots = SlotRange::new(start, start + classes.len())
                        .map_err(|e| CliError::config(format!("tasks.subsets[{i}]"), e.to_string()))?;
                    start += classes.len();
                    Ok(TaskSpec {
                        teacher_id: i,
                        classes: classes.clone(),
                        slots,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            TaskPartition::from_tasks(tasks, c).map_err(|e| CliError::config("tasks.subsets", e.to_string()))?
        }
        None => split_tasks(c, cfg.tasks.teacher_count, cfg.tasks.seed)
            .map_err(|e| CliError::config("tasks.teacher_count", e.to_string()))?,
    };
    let test = partition.to_slot_space(&test_raw)?;
    let ranges = partition.slot_ranges();
    Ok(Prepared {
        train,
        test_raw,
        test,
        partition,
        ranges,
    })
}

pub fn teacher_hidden(cfg: &RunConfig, i: usize) -> &[usize] {
    let w = &cfg.model.teacher_widths;
    &w[i % w.len()]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TeacherEval {
    pub teacher_id: usize,
    /// Accuracy on the task's own test classes.
    pub acc_own: f64,
    /// Zero-padded accuracy on the whole union test set.
    pub acc_union: f64,
    pub pretrain: PretrainReport,
}

pub fn evaluate_teacher(teacher: &Network, task: usize, data: &Prepared) -> CliResult<(f64, f64)> {
    let own = data.partition.task_subset(&data.test_raw, task)?;
    let acc_own = evaluate_union(Predictor::Direct(teacher), &own, &[])?.union;
    let acc_union = evaluate_union(
        Predictor::ZeroPadded {
            teacher,
            width: data.num_classes(),
        },
        &data.test,
        &data.ranges,
    )?
    .union;
    Ok((acc_own, acc_union))
}

pub fn pretrain_one(cfg: &RunConfig, data: &Prepared, task: usize) -> CliResult<(Network, TeacherEval)> {
    let spec = data
        .partition
        .tasks
        .get(task)
        .ok_or_else(|| CliError::Failed(format!("no task {task}; there are {}", data.partition.tasks.len())))?;
    let (net, report) = pretrain_teacher(spec, &data.train, teacher_hidden(cfg, task), &cfg.pretrain)?;
    let (acc_own, acc_union) = evaluate_teacher(&net, task, data)?;
    Ok((
        net,
        TeacherEval {
            teacher_id: task,
            acc_own,
            acc_union,
            pretrain: report,
        },
    ))
}

pub fn pretrain_all(cfg: &RunConfig, data: &Prepared) -> CliResult<Vec<(Network, TeacherEval)>> {
    (0..data.partition.tasks.len()).map(|t| pretrain_one(cfg, data, t)).collect()
}

pub fn student_spec(cfg: &RunConfig, data: &Prepared) -> NetworkSpec {
    let mut widths = vec![data.train.dim()];
    widths.extend_from_slice(&cfg.model.student_widths);
    NetworkSpec {
        role: Role::Student,
        encoder_widths: widths,
        projection: Some(ProjectionSpec {
            hidden: cfg.model.projection_hidden,
            output: cfg.model.projection_output,
        }),
        slots: SlotRange::new(0, data.num_classes()).expect("at least one class"),
    }
}

/// Student training procedures comparable in one table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Cka,
    /// CKA without the intra-model term.
    CkaNoIntra,
    /// CKA without the inter-model term.
    CkaNoInter,
    CkaMetric(Metric),
    Kd,
    Cfl,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Cka => "CKA".into(),
            Method::CkaNoIntra => "CKA-Intra".into(),
            Method::CkaNoInter => "CKA-Inter".into(),
            Method::CkaMetric(Metric::Euclidean) => "CKA-Euclidean".into(),
            Method::CkaMetric(Metric::Cosine) => "CKA-Cosine".into(),
            Method::CkaMetric(Metric::MmdSpatial) => "CKA-MMD".into(),
            Method::Kd => "KD".into(),
            Method::Cfl => "CFL".into(),
        }
    }
}

/// Largest channel count ≤ 16 dividing every feature width, for set-MMD.
fn spatial_channels(widths: impl IntoIterator<Item = usize>) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = widths.into_iter().fold(0, gcd).max(1);
    (1..=16.min(g)).rev().find(|c| g.is_multiple_of(*c)).unwrap_or(1)
}

pub fn run_method(
    method: Method,
    teachers: &[Network],
    spec: &NetworkSpec,
    data: &Prepared,
    base: &AmalgamationConfig,
) -> CliResult<AmalgamationRun> {
    let pool = data.train.unlabeled();
    let eval = Some(data.eval_set());
    let mut cfg = base.clone();
    let run = match method {
        Method::Kd => vanilla_kd_baseline(teachers, spec.clone(), &pool, eval, &cfg)?,
        Method::Cfl => cfl_baseline(teachers, spec.clone(), &pool, eval, &cfg)?,
        _ => {
            match method {
                Method::CkaNoIntra => cfg.weights.lambda_intra = 0.0,
                Method::CkaNoInter => cfg.weights.lambda_inter = 0.0,
                Method::CkaMetric(m) => {
                    cfg.metric = m;
                    if m == Metric::MmdSpatial && cfg.spatial_channels.is_none() {
                        let widths = std::iter::once(*spec.encoder_widths.last().expect("widths"))
                            .chain(teachers.iter().map(Network::feature_dim));
                        cfg.spatial_channels = Some(spatial_channels(widths));
                    }
                }
                _ => {}
            }
            amalgamate_student(teachers, spec.clone(), &pool, eval, &cfg)?
        }
    };
    Ok(run)
}

pub fn final_accuracy(run: &AmalgamationRun) -> Accuracy {
    let last = run.metrics.last().expect("at least one epoch");
    Accuracy {
        union: last.acc_union.unwrap_or(0.0),
        per_task: last.acc_tasks.clone(),
    }
}

pub fn summarize(run: &AmalgamationRun, method: Method, seed: u64) -> RunSummary {
    run.metrics
        .summary(&method.label(), seed, run.student.params.fingerprint(|_| true))
}

/// Writes checkpoints, the per-epoch metrics and `summary.json` into `dir`.
pub fn write_run(dir: &Path, run: &AmalgamationRun, summary: &RunSummary) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    save_network(&run.student, &dir.join("student"))?;
    save_common_space(&run.common, &dir.join("common"))?;
    run.metrics.write_jsonl(&dir.join("metrics.jsonl"))?;
    summary.write(&dir.join("summary.json"))?;
    Ok(())
}

pub fn teacher_dir(cfg: &RunConfig, i: usize) -> PathBuf {
    cfg.output_dir.join("teachers").join(format!("teacher_{i}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}
