//! Finite-difference verification of every loss kernel over random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{grad_check_many, Graph, Tensor, Var};
use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{
    alignment_loss, info_nce_loss, inter_contrast_loss, intra_margin_loss, kl_to_target, mmd_sq, pairwise_distance_matrix,
    soft_target_from_blocks, total_loss, transport_map, KernelBank, KlDirection, LossTerms, LossWeights, Metric, Reduction,
    TeacherBlock,
};
use crate::slots::SlotRange;

pub const LOSS_CHECKS: [&str; 7] = ["info-nce", "intra", "inter", "mmd", "align", "soft-target", "total"];
pub const GRADCHECK_EPSILON: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub configs: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("non-empty")
}

fn probs(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let mut t = randn(rng, r, c).map(f64::exp);
    for i in 0..r {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.gen_range(0..items.len())]
}

/// Soft target over `blocks` teachers of `width` classes each.
fn block_target(rng: &mut ChaCha8Rng, rows: usize, blocks: usize, width: usize) -> Result<Tensor> {
    let bs = (0..blocks)
        .map(|t| {
            Ok(TeacherBlock {
                probs: probs(rng, rows, width),
                slots: SlotRange::new(t * width, (t + 1) * width)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    soft_target_from_blocks(&bs)
}

fn one_config(name: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let b = rng.gen_range(3..=7);
    let d = rng.gen_range(2..=5);
    let reduction = pick(rng, &[Reduction::Mean, Reduction::Sum]);
    match name {
        "info-nce" => {
            let tau = rng.gen_range(0.2..1.0);
            let f = move |g: &mut Graph, v: &[Var]| info_nce_loss(g, v[0], v[1], tau);
            grad_check_many(&f, &[randn(rng, b, d), randn(rng, b, d)], GRADCHECK_EPSILON)
        }
        "intra" => {
            let margin = rng.gen_range(0.0..0.8);
            let f = move |g: &mut Graph, v: &[Var]| {
                let z1 = g.normalize_rows(v[0])?;
                let z2 = g.normalize_rows(v[1])?;
                intra_margin_loss(g, z1, z2, margin, reduction)
            };
            grad_check_many(&f, &[randn(rng, b, d), randn(rng, b, d)], GRADCHECK_EPSILON)
        }
        "inter" => {
            // features → distances → transport maps → contrast, end to end
            let metric = pick(rng, &[Metric::Euclidean, Metric::Cosine]);
            let teachers = rng.gen_range(1..=2);
            let f = move |g: &mut Graph, v: &[Var]| {
                let ds = pairwise_distance_matrix(g, v[0], metric, None)?;
                let s = transport_map(g, ds, metric, 0)?;
                let mut maps = Vec::new();
                for (t, &ft) in v[1..].iter().enumerate() {
                    let dt = pairwise_distance_matrix(g, ft, metric, None)?;
                    maps.push(transport_map(g, dt, metric, t + 1)?);
                }
                inter_contrast_loss(g, &s, &maps, reduction)
            };
            let inputs: Vec<Tensor> = (0..=teachers).map(|_| randn(rng, b, d)).collect();
            grad_check_many(&f, &inputs, GRADCHECK_EPSILON)
        }
        "mmd" => {
            let (x, y) = (randn(rng, b, d), randn(rng, b + 1, d).map(|v| v + 0.5));
            let bank = KernelBank::median_heuristic(&x, Some(&y))?;
            let f = move |g: &mut Graph, v: &[Var]| mmd_sq(g, v[0], v[1], &bank);
            grad_check_many(&f, &[x, y], GRADCHECK_EPSILON)
        }
        "align" => {
            let teachers = rng.gen_range(1..=3);
            let inputs: Vec<Tensor> = (0..=teachers).map(|_| randn(rng, b, d)).collect();
            let bank = KernelBank::median_heuristic(&inputs[0], Some(&inputs[1]))?;
            let f = move |g: &mut Graph, v: &[Var]| alignment_loss(g, v[0], &v[1..], &bank);
            grad_check_many(&f, &inputs, GRADCHECK_EPSILON)
        }
        "soft-target" => {
            let (teachers, width) = (rng.gen_range(1..=3), rng.gen_range(2..=3));
            let target = block_target(rng, b, teachers, width)?;
            let t = rng.gen_range(0.5..4.0);
            let dir = pick(rng, &[KlDirection::StudentFirst, KlDirection::TeacherFirst]);
            let f = move |g: &mut Graph, v: &[Var]| kl_to_target(g, v[0], &target, t, dir);
            grad_check_many(&f, &[randn(rng, b, teachers * width)], GRADCHECK_EPSILON)
        }
        "total" => {
            let w = LossWeights {
                lambda_intra: rng.gen_range(0.1..2.0),
                lambda_inter: rng.gen_range(0.1..2.0),
                lambda_align: rng.gen_range(0.1..10.0),
                lambda_std: rng.gen_range(0.1..2.0),
                ..LossWeights::default()
            };
            let classes = 4;
            let target = block_target(rng, b, 2, classes / 2)?;
            let teacher = randn(rng, b, d);
            let student = randn(rng, b, d);
            let bank = KernelBank::median_heuristic(&student, Some(&teacher))?;
            let (head, view2) = (randn(rng, d, classes), randn(rng, b, d));
            let f = move |g: &mut Graph, v: &[Var]| {
                let (fs, f2, ft, wh) = (v[0], v[1], v[2], v[3]);
                let z1 = g.normalize_rows(fs)?;
                let z2 = g.normalize_rows(f2)?;
                let intra = intra_margin_loss(g, z1, z2, w.margin, reduction)?;
                let ds = pairwise_distance_matrix(g, fs, Metric::Euclidean, None)?;
                let dt = pairwise_distance_matrix(g, ft, Metric::Euclidean, None)?;
                let ps = transport_map(g, ds, Metric::Euclidean, 0)?;
                let pt = transport_map(g, dt, Metric::Euclidean, 1)?;
                let inter = inter_contrast_loss(g, &ps, &[pt], reduction)?;
                let align = alignment_loss(g, fs, &[ft], &bank)?;
                let logits = g.matmul(fs, wh)?;
                let std = kl_to_target(g, logits, &target, w.distill_temperature, KlDirection::StudentFirst)?;
                let terms = LossTerms {
                    intra: Some(intra),
                    inter: Some(inter),
                    align: Some(align),
                    std: Some(std),
                };
                Ok(total_loss(g, &terms, &w)?.0)
            };
            grad_check_many(&f, &[student, view2, teacher, head], GRADCHECK_EPSILON)
        }
        other => Err(Error::invalid(format!(
            "unknown loss `{other}` (expected one of {})",
            LOSS_CHECKS.join(", ")
        ))),
    }
}

/// Worst relative error of `name` over `configs` seeded random configurations.
pub fn check_loss(name: &str, configs: usize, seed: u64) -> Result<CheckResult> {
    let index = LOSS_CHECKS
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::invalid(format!("unknown loss `{name}` (expected one of {})", LOSS_CHECKS.join(", "))))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[30, index as u64]));
    let mut worst = 0.0f64;
    for _ in 0..configs {
        worst = worst.max(one_config(name, &mut rng)?);
    }
    Ok(CheckResult {
        name: name.to_string(),
        configs,
        max_rel_error: worst,
        passed: worst <= GRADCHECK_TOLERANCE,
    })
}

pub fn check_all_losses(configs: usize, seed: u64) -> Result<Vec<CheckResult>> {
    LOSS_CHECKS.iter().map(|n| check_loss(n, configs, seed)).collect()
}
