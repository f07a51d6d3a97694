use std::time::Instant;

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{derive_seed, make_batches, two_views, Dataset, UnlabeledPool};
use crate::error::{Error, Result};
use crate::losses::{
    alignment_loss, inter_contrast_loss, intra_margin_loss, kl_to_target, pairwise_distance_matrix, soft_target_from_blocks,
    soft_target_from_logits, total_loss, transport_map, KernelBank, LossBreakdown, LossTerms, LossWeights, TeacherBlock,
};
use crate::models::{cosine_lr, Bound, CommonSpaceSpec, CommonSpaceStack, Network, NetworkSpec, OptimizerState, Role};
use crate::slots::{check_partition, union_width, SlotRange};

use super::config::{AmalgamationConfig, TargetMode, TeacherView};
use super::eval::{evaluate_union, Predictor};
use super::metrics::{EpochMetrics, RunMetrics};

/// Held-out data for per-epoch accuracy; labels must be union slots.
#[derive(Clone, Copy, Debug)]
pub struct EvalSet<'a> {
    pub test: &'a Dataset,
    pub tasks: &'a [SlotRange],
}

#[derive(Clone, Debug)]
pub struct AmalgamationRun {
    pub student: Network,
    pub common: CommonSpaceStack,
    pub metrics: RunMetrics,
}

/// Loss values and parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    pub student: Vec<Option<Tensor>>,
    pub common: Vec<Option<Tensor>>,
}

/// Maps a kernel-level non-finite error to one naming the loss component.
fn component<T>(name: &str, batch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss {
            component: name.to_string(),
            batch,
        },
        other => other,
    })
}

fn check_teachers(teachers: &[Network], student: &NetworkSpec) -> Result<()> {
    if teachers.is_empty() {
        return Err(Error::invalid("amalgamation needs at least one teacher"));
    }
    if let Some(t) = teachers.iter().position(|t| !t.frozen) {
        return Err(Error::invalid(format!("teacher {t} is not frozen")));
    }
    let ranges: Vec<SlotRange> = teachers.iter().map(Network::slots).collect();
    let width = union_width(&ranges);
    check_partition(&ranges, Some(width))?;
    if student.slots != SlotRange::new(0, width)? {
        return Err(Error::invalid(format!(
            "student head covers {:?} but the teachers' union is 0..{width}",
            student.slots
        )));
    }
    if let Some(t) = teachers.iter().position(|t| t.input_dim() != student.encoder_widths[0]) {
        return Err(Error::invalid(format!("teacher {t} expects a different input width than the student")));
    }
    Ok(())
}

fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        data.extend_from_slice(p.data());
        rows += p.rows();
    }
    Tensor::new(rows, cols, data)
}

struct BatchGraph {
    g: Graph,
    total: Var,
    breakdown: LossBreakdown,
    student: Bound,
    common: Option<Bound>,
}

/// Builds every active loss term for one batch.
fn build_batch(
    student: &Network,
    stack: &CommonSpaceStack,
    teachers: &[Network],
    x: &Tensor,
    cfg: &AmalgamationConfig,
    epoch: usize,
    batch: usize,
    step: usize,
    omit_disabled: bool,
) -> Result<BatchGraph> {
    let w: &LossWeights = &cfg.weights;
    let active = |lambda: f64| !omit_disabled || lambda != 0.0;
    let (v1, v2) = two_views(&cfg.augmentation, x, epoch, batch)?;
    let teacher_input = match cfg.teacher_view {
        TeacherView::Clean => x,
        TeacherView::View1 => &v1,
    };
    // frozen, forward-only: safe to fan out
    let teacher_out = crate::par::map_slice(teachers, |t| t.evaluate(teacher_input))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut g = Graph::new();
    let sp = student.bind(&mut g, true);
    let x1 = g.constant(v1);
    let f1 = component("student-forward", step, student.encode(&mut g, &sp, x1))?;

    let intra = if active(w.lambda_intra) {
        component("intra", step, (|| {
            let x2 = g.constant(v2);
            let f2 = student.encode(&mut g, &sp, x2)?;
            let z1 = student.project(&mut g, &sp, f1)?;
            let z2 = student.project(&mut g, &sp, f2)?;
            intra_margin_loss(&mut g, z1, z2, w.margin, cfg.reduction)
        })())
        .map(Some)?
    } else {
        None
    };

    let teacher_feats: Vec<Var> = teacher_out.iter().map(|(f, _)| g.constant(f.clone())).collect();

    let inter = if active(w.lambda_inter) {
        component("inter", step, (|| {
            let ds = pairwise_distance_matrix(&mut g, f1, cfg.metric, cfg.spatial_channels)?;
            let pi_s = transport_map(&mut g, ds, cfg.metric, 0)?;
            let mut maps = Vec::with_capacity(teachers.len());
            for (t, &ft) in teacher_feats.iter().enumerate() {
                let dt = pairwise_distance_matrix(&mut g, ft, cfg.metric, cfg.spatial_channels)?;
                maps.push(transport_map(&mut g, dt, cfg.metric, t + 1)?);
            }
            inter_contrast_loss(&mut g, &pi_s, &maps, cfg.reduction)
        })())
        .map(Some)?
    } else {
        None
    };

    let (align, cp) = if active(w.lambda_align) {
        let cp = stack.params.bind(&mut g, true);
        let align = component("align", step, (|| {
            let hs = stack.to_common(&mut g, &cp, 0, f1)?;
            let mut ht = Vec::with_capacity(teachers.len());
            for (t, &ft) in teacher_feats.iter().enumerate() {
                ht.push(stack.to_common(&mut g, &cp, t + 1, ft)?);
            }
            let values: Vec<&Tensor> = ht.iter().map(|&v| g.value(v)).collect();
            let bank = KernelBank::median_heuristic(g.value(hs), Some(&stack_rows(&values)?))?;
            alignment_loss(&mut g, hs, &ht, &bank)
        })())?;
        (Some(align), Some(cp))
    } else {
        (None, None)
    };

    let std = if active(w.lambda_std) {
        component("std", step, (|| {
            let logits = student.classify(&mut g, &sp, f1)?;
            let t = w.distill_temperature;
            let target = match cfg.target_mode {
                TargetMode::TeacherBlocks => {
                    let blocks = teachers
                        .iter()
                        .zip(&teacher_out)
                        .map(|(teacher, (_, l))| {
                            Ok(TeacherBlock {
                                probs: super::eval::softmax_rows(&l.map(|v| v / t))?,
                                slots: teacher.slots(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    soft_target_from_blocks(&blocks)?
                }
                TargetMode::ConcatenatedLogits => {
                    let blocks: Vec<(Tensor, SlotRange)> =
                        teachers.iter().zip(&teacher_out).map(|(tc, (_, l))| (l.clone(), tc.slots())).collect();
                    soft_target_from_logits(&blocks, t)?
                }
            };
            kl_to_target(&mut g, logits, &target, t, cfg.kl_direction)
        })())
        .map(Some)?
    } else {
        None
    };

    let terms = LossTerms { intra, inter, align, std };
    let (total, breakdown) = component("total", step, total_loss(&mut g, &terms, w))?;
    for (name, v) in breakdown.components().into_iter().chain([("total", breakdown.total)]) {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                component: name.to_string(),
                batch: step,
            });
        }
    }
    Ok(BatchGraph {
        g,
        total,
        breakdown,
        student: sp,
        common: cp,
    })
}

/// Gradients of one batch without taking an optimizer step. With
/// `omit_disabled`, terms whose weight is zero are not built at all;
/// otherwise they are built and weighted by zero.
#[allow(clippy::too_many_arguments)]
pub fn student_gradients(
    student: &Network,
    stack: &CommonSpaceStack,
    teachers: &[Network],
    x: &Tensor,
    cfg: &AmalgamationConfig,
    epoch: usize,
    batch: usize,
    omit_disabled: bool,
) -> Result<StepGradients> {
    let bg = build_batch(student, stack, teachers, x, cfg, epoch, batch, batch, omit_disabled)?;
    let grads = bg.g.backward(bg.total)?;
    Ok(StepGradients {
        breakdown: bg.breakdown,
        student: bg.student.gradients(&bg.g, &grads),
        common: match &bg.common {
            Some(cp) => cp.gradients(&bg.g, &grads),
            None => vec![None; stack.params.len()],
        },
    })
}

fn clip(grads: &mut [&mut Vec<Option<Tensor>>], max_norm: f64) {
    let sq: f64 = grads
        .iter()
        .flat_map(|set| set.iter().flatten())
        .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for set in grads.iter_mut() {
            for t in set.iter_mut().flatten() {
                *t = t.map(|v| v * s);
            }
        }
    }
}

/// Trains a fresh student on the unlabeled pool from frozen teachers.
///
/// The student must have a projection head when the intra term is active.
pub fn amalgamate_student(
    teachers: &[Network],
    student_spec: NetworkSpec,
    pool: &UnlabeledPool,
    eval: Option<EvalSet<'_>>,
    cfg: &AmalgamationConfig,
) -> Result<AmalgamationRun> {
    cfg.validate()?;
    student_spec.validate()?;
    check_teachers(teachers, &student_spec)?;
    if student_spec.role != Role::Student {
        return Err(Error::invalid("student spec must have the student role"));
    }
    if pool.dim() != student_spec.encoder_widths[0] {
        return Err(Error::invalid(format!(
            "pool has width {} but the student expects {}",
            pool.dim(),
            student_spec.encoder_widths[0]
        )));
    }

    let fingerprints = |ts: &[Network]| ts.iter().map(Network::backbone_fingerprint).collect::<Vec<_>>();
    let mut metrics = RunMetrics {
        teacher_fingerprints_before: fingerprints(teachers),
        ..RunMetrics::default()
    };

    let mut student = Network::init(student_spec, derive_seed(cfg.seed, &[20]))?;
    let mut dims = vec![student.feature_dim()];
    dims.extend(teachers.iter().map(Network::feature_dim));
    let spec = CommonSpaceSpec {
        model_feature_dims: dims,
        adapter_width: cfg.adapter_width,
        shared_widths: vec![cfg.common_width; 2],
    };
    let mut stack = CommonSpaceStack::init(spec, derive_seed(cfg.seed, &[21]))?;
    if cfg.freeze_adapters {
        stack.freeze_adapters(1..=teachers.len());
    }
    let mut opt_s = OptimizerState::new(&student.params, cfg.adam);
    let mut opt_c = OptimizerState::new(&stack.params, cfg.adam);

    let data_seed = derive_seed(cfg.seed, &[22]);
    let batch_size = cfg.batch_size.min(pool.len());
    let start = Instant::now();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.adam.lr, epoch, cfg.epochs)?;
        opt_s.lr = lr;
        opt_c.lr = lr;
        let batches = make_batches(pool.len(), batch_size, data_seed, epoch, true)?;
        let mut sum = LossBreakdown::default();
        for (b, idx) in batches.iter().enumerate() {
            let x = pool.samples.gather_rows(idx)?;
            let bg = build_batch(&student, &stack, teachers, &x, cfg, epoch, b, step, true)?;
            let grads = bg.g.backward(bg.total)?;
            let mut gs = bg.student.gradients(&bg.g, &grads);
            let mut gc = bg.common.as_ref().map(|cp| cp.gradients(&bg.g, &grads));
            if let Some(max) = cfg.grad_clip {
                match gc.as_mut() {
                    Some(gc) => clip(&mut [&mut gs, gc], max),
                    None => clip(&mut [&mut gs], max),
                }
            }
            opt_s.adam_step(&mut student.params, &gs)?;
            if let Some(gc) = gc {
                opt_c.adam_step(&mut stack.params, &gc)?;
            }
            sum.intra += bg.breakdown.intra;
            sum.inter += bg.breakdown.inter;
            sum.align += bg.breakdown.align;
            sum.std += bg.breakdown.std;
            sum.total += bg.breakdown.total;
            step += 1;
        }
        let n = batches.len() as f64;
        let loss = LossBreakdown {
            intra: sum.intra / n,
            inter: sum.inter / n,
            align: sum.align / n,
            std: sum.std / n,
            total: sum.total / n,
        };
        let acc = eval
            .map(|e| evaluate_union(Predictor::Direct(&student), e.test, e.tasks))
            .transpose()?;
        metrics.epochs.push(EpochMetrics {
            epoch,
            loss,
            lr,
            acc_union: acc.as_ref().map(|a| a.union),
            acc_tasks: acc.map(|a| a.per_task).unwrap_or_default(),
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }
    metrics.teacher_fingerprints_after = fingerprints(teachers);
    Ok(AmalgamationRun {
        student,
        common: stack,
        metrics,
    })
}

/// Student trained only to match `softmax(concatenated teacher logits)`.
pub fn vanilla_kd_baseline(
    teachers: &[Network],
    student_spec: NetworkSpec,
    pool: &UnlabeledPool,
    eval: Option<EvalSet<'_>>,
    cfg: &AmalgamationConfig,
) -> Result<AmalgamationRun> {
    let mut cfg = cfg.clone();
    cfg.weights.lambda_intra = 0.0;
    cfg.weights.lambda_inter = 0.0;
    cfg.weights.lambda_align = 0.0;
    cfg.target_mode = TargetMode::ConcatenatedLogits;
    amalgamate_student(teachers, student_spec, pool, eval, &cfg)
}

/// Common-space alignment plus soft targets, no contrastive terms.
pub fn cfl_baseline(
    teachers: &[Network],
    student_spec: NetworkSpec,
    pool: &UnlabeledPool,
    eval: Option<EvalSet<'_>>,
    cfg: &AmalgamationConfig,
) -> Result<AmalgamationRun> {
    let mut cfg = cfg.clone();
    cfg.weights.lambda_intra = 0.0;
    cfg.weights.lambda_inter = 0.0;
    amalgamate_student(teachers, student_spec, pool, eval, &cfg)
}
