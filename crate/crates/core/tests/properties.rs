use cka_core::autodiff::{Graph, Tensor};
use cka_core::data::{make_batches, split_tasks};
use cka_core::losses::*;
use cka_core::models::{AdamConfig, CommonSpaceSpec, CommonSpaceStack, OptimizerState};
use cka_core::slots::SlotRange;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

fn pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (2usize..7, 2usize..7, 1usize..5).prop_flat_map(|(a, b, d)| (matrix(a, d), matrix(b, d)))
}

fn mmd(x: &Tensor, y: &Tensor, bank: &KernelBank) -> f64 {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let m = mmd_sq(&mut g, a, b, bank).unwrap();
    g.value(m).item()
}

proptest! {
    #[test]
    fn mmd_is_symmetric_and_non_negative((x, y) in pair()) {
        let bank = KernelBank::median_heuristic(&x, Some(&y)).unwrap();
        let (xy, yx) = (mmd(&x, &y, &bank), mmd(&y, &x, &bank));
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert!(xy >= -1e-12);
        prop_assert!(mmd(&x, &x, &bank).abs() <= 1e-12);
    }

    #[test]
    fn soft_target_loss_is_non_negative(
        logits in matrix(4, 6),
        teacher in matrix(4, 6),
        t in 0.5f64..4.0,
        teacher_first in any::<bool>(),
    ) {
        let blocks: Vec<TeacherBlock> = (0..2)
            .map(|k| {
                let mut g = Graph::new();
                let l = g.constant(teacher.slice_cols(3 * k, 3 * k + 3).unwrap());
                let p = g.softmax(l).unwrap();
                TeacherBlock { probs: g.value(p).clone(), slots: SlotRange::new(3 * k, 3 * k + 3).unwrap() }
            })
            .collect();
        let dir = if teacher_first { KlDirection::TeacherFirst } else { KlDirection::StudentFirst };
        let mut g = Graph::new();
        let s = g.constant(logits);
        let loss = soft_target_loss(&mut g, s, &blocks, t, dir).unwrap();
        prop_assert!(g.value(loss).item() >= -1e-12);
    }

    #[test]
    fn transport_maps_are_row_stochastic(f in (2usize..10, 1usize..6).prop_flat_map(|(b, d)| matrix(b, d)), cosine in any::<bool>()) {
        let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
        let mut g = Graph::new();
        let v = g.constant(f);
        // cosine distance is undefined for a zero row
        let Ok(d) = pairwise_distance_matrix(&mut g, v, metric, None) else { return Ok(()) };
        let pi = transport_map(&mut g, d, metric, 0).unwrap();
        prop_assert!(pi.check_invariants(&g, 1e-9).is_ok());
    }

    #[test]
    fn tasks_partition_the_classes(per in 1usize..6, teachers in 1usize..5, seed in any::<u64>()) {
        let c = per * teachers;
        let p = split_tasks(c, teachers, seed).unwrap();
        let mut seen = vec![false; c];
        for t in &p.tasks {
            prop_assert_eq!(t.classes.len(), per);
            for &k in &t.classes {
                prop_assert!(!seen[k]);
                seen[k] = true;
                prop_assert!(t.slots.contains(p.class_to_slot[k]));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        if teachers > 1 {
            prop_assert!(split_tasks(c + 1, teachers, seed).is_err() || (c + 1) % teachers == 0);
        }
    }

    #[test]
    fn batches_never_repeat_rows(n in 2usize..200, bs in 2usize..40, seed in any::<u64>(), epoch in 0usize..5) {
        let batches = make_batches(n, bs, seed, epoch, false).unwrap();
        let mut all: Vec<usize> = batches.concat();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), len);
        prop_assert!(n - len <= 1);
    }
}

#[test]
fn student_path_alone_updates_the_shared_mlp() {
    let mut stack = CommonSpaceStack::init(CommonSpaceSpec::new(vec![5, 7]), 3).unwrap();
    let before = stack.shared_fingerprint();
    let mut opt = OptimizerState::new(&stack.params, AdamConfig::default());
    let mut g = Graph::new();
    let p = stack.params.bind(&mut g, true);
    let x = g.constant(Tensor::new(4, 5, (0..20).map(|i| (i as f64).sin()).collect()).unwrap());
    let h = stack.to_common(&mut g, &p, 0, x).unwrap();
    let sq = g.mul(h, h).unwrap();
    let loss = g.mean(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    opt.adam_step(&mut stack.params, &p.gradients(&g, &grads)).unwrap();
    assert_ne!(stack.shared_fingerprint(), before);
}
