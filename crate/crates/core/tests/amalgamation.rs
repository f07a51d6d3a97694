use cka_core::amalgamation::*;
use cka_core::autodiff::Tensor;
use cka_core::data::*;
use cka_core::losses::{KlDirection, LossWeights};
use cka_core::models::*;
use cka_core::slots::SlotRange;
use cka_core::Error;

struct Setup {
    train: Dataset,
    test: Dataset,
    part: TaskPartition,
    teachers: Vec<Network>,
}

fn small_blobs(seed: u64) -> BlobConfig {
    BlobConfig {
        classes: 4,
        dim: 8,
        per_class: 60,
        seed,
        ..BlobConfig::default()
    }
}

fn setup(seed: u64) -> Setup {
    let (train, test) = gen_blobs(&small_blobs(seed)).unwrap();
    let part = split_tasks(4, 2, seed).unwrap();
    let cfg = PretrainConfig {
        epochs: 10,
        seed,
        ..PretrainConfig::default()
    };
    let teachers = part
        .tasks
        .iter()
        .zip([vec![16], vec![24]])
        .map(|(t, h)| pretrain_teacher(t, &train, &h, &cfg).unwrap().0)
        .collect();
    Setup {
        train,
        test,
        part,
        teachers,
    }
}

fn student_spec(dim: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        role: Role::Student,
        encoder_widths: vec![dim, 24],
        projection: Some(ProjectionSpec { hidden: 16, output: 8 }),
        slots: SlotRange::new(0, classes).unwrap(),
    }
}

fn quick(epochs: usize, seed: u64) -> AmalgamationConfig {
    AmalgamationConfig {
        epochs,
        seed,
        batch_size: 32,
        ..AmalgamationConfig::default()
    }
}

/// Nearest class mean of the training rows.
fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let d = train.dim();
    let mut means = vec![vec![0.0; d]; train.num_classes];
    let mut counts = vec![0usize; train.num_classes];
    for (i, &l) in train.labels.iter().enumerate() {
        counts[l] += 1;
        for (m, x) in means[l].iter_mut().zip(train.samples.row(i)) {
            *m += x;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let hits = (0..test.len())
        .filter(|&i| {
            let x = test.samples.row(i);
            let best = (0..means.len())
                .min_by(|&a, &b| {
                    let da: f64 = means[a].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                    let db: f64 = means[b].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == test.labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn teacher_reaches_centroid_headroom_on_own_classes() {
    let (train, test) = gen_blobs(&BlobConfig {
        classes: 8,
        per_class: 200,
        seed: 1,
        ..BlobConfig::default()
    })
    .unwrap();
    let part = split_tasks(8, 2, 1).unwrap();
    let task = &part.tasks[0];
    let own_train = train.restrict(&task.classes).unwrap();
    let own_test = test.restrict(&task.classes).unwrap();
    assert!(nearest_centroid_accuracy(&own_train, &own_test) >= 0.99);

    let cfg = PretrainConfig {
        epochs: 50,
        seed: 1,
        ..PretrainConfig::default()
    };
    let (teacher, report) = pretrain_teacher(task, &train, &[64, 64], &cfg).unwrap();
    assert!(teacher.frozen);
    let acc = evaluate_union(Predictor::Direct(&teacher), &own_test, &[]).unwrap();
    assert!(acc.union >= 0.95, "{}", acc.union);

    let (again, report2) = pretrain_teacher(task, &train, &[64, 64], &cfg).unwrap();
    assert_eq!(report, report2);
    assert_eq!(again, teacher);
}

#[test]
fn single_class_task_is_trivially_correct() {
    let s = setup(2);
    let task = TaskSpec {
        teacher_id: 0,
        classes: vec![3],
        slots: SlotRange::new(0, 1).unwrap(),
    };
    let cfg = PretrainConfig {
        epochs: 1,
        ..PretrainConfig::default()
    };
    let (t, _) = pretrain_teacher(&task, &s.train, &[4], &cfg).unwrap();
    let own = s.test.restrict(&[3]).unwrap();
    assert_eq!(evaluate_union(Predictor::Direct(&t), &own, &[]).unwrap().union, 1.0);
    assert!(pretrain_teacher(
        &TaskSpec {
            classes: vec![],
            slots: SlotRange::new(0, 1).unwrap(),
            ..task
        },
        &s.train,
        &[4],
        &cfg
    )
    .is_err());
}

#[test]
fn zero_padded_teachers_are_bounded_and_ensemble_is_exact() {
    let (train, test) = gen_blobs(&BlobConfig {
        per_class: 200,
        seed: 3,
        ..BlobConfig::default()
    })
    .unwrap();
    let part = split_tasks(8, 2, 3).unwrap();
    let teachers: Vec<Network> = part
        .tasks
        .iter()
        .zip([vec![64, 64], vec![128, 128]])
        .map(|(t, h)| pretrain_teacher(t, &train, &h, &PretrainConfig::default()).unwrap().0)
        .collect();
    let test = part.to_slot_space(&test).unwrap();
    let ranges = part.slot_ranges();
    for t in &teachers {
        let acc = evaluate_union(Predictor::ZeroPadded { teacher: t, width: 8 }, &test, &ranges).unwrap();
        assert!(acc.union <= 0.5 + 1e-12);
    }
    let ens = evaluate_union(Predictor::Ensemble(&teachers), &test, &ranges).unwrap();
    assert_eq!(ens.union, 1.0);
}

#[test]
fn intra_only_loss_trends_down() {
    let mut falling = 0;
    for seed in 0..3 {
        let s = setup(seed);
        let cfg = AmalgamationConfig {
            weights: LossWeights {
                lambda_intra: 1.0,
                lambda_inter: 0.0,
                lambda_align: 0.0,
                lambda_std: 0.0,
                ..LossWeights::default()
            },
            ..quick(5, seed)
        };
        let run = amalgamate_student(&s.teachers, student_spec(8, 4), &s.train.unlabeled(), None, &cfg).unwrap();
        let trace: Vec<f64> = run.metrics.epochs.iter().map(|e| e.loss.total).collect();
        if trace[4] < trace[0] {
            falling += 1;
        }
    }
    assert!(falling >= 2);
}

#[test]
fn distilling_one_matching_teacher_reproduces_its_argmax() {
    let (train, _) = gen_blobs(&small_blobs(4)).unwrap();
    let task = TaskSpec {
        teacher_id: 0,
        classes: vec![0, 1, 2, 3],
        slots: SlotRange::new(0, 4).unwrap(),
    };
    let pc = PretrainConfig {
        epochs: 60,
        ..PretrainConfig::default()
    };
    let (teacher, _) = pretrain_teacher(&task, &train, &[24], &pc).unwrap();
    let cfg = AmalgamationConfig {
        weights: LossWeights {
            lambda_intra: 0.0,
            lambda_inter: 0.0,
            lambda_align: 0.0,
            lambda_std: 1.0,
            ..LossWeights::default()
        },
        ..quick(60, 4)
    };
    let pool = train.unlabeled();
    let run = amalgamate_student(std::slice::from_ref(&teacher), student_spec(8, 4), &pool, None, &cfg).unwrap();
    let a = run.student.logits(&pool.samples).unwrap().argmax_rows();
    let b = teacher.logits(&pool.samples).unwrap().argmax_rows();
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
    assert!(agree >= 0.9, "{agree}");
}

#[test]
fn runs_are_deterministic_conserve_teachers_and_keep_the_ledger() {
    let s = setup(5);
    let test = s.part.to_slot_space(&s.test).unwrap();
    let ranges = s.part.slot_ranges();
    let eval = EvalSet {
        test: &test,
        tasks: &ranges,
    };
    let before: Vec<u64> = s.teachers.iter().map(Network::backbone_fingerprint).collect();
    let cfg = quick(3, 5);
    let a = amalgamate_student(&s.teachers, student_spec(8, 4), &s.train.unlabeled(), Some(eval), &cfg).unwrap();
    let b = amalgamate_student(&s.teachers, student_spec(8, 4), &s.train.unlabeled(), Some(eval), &cfg).unwrap();
    let fp = |r: &AmalgamationRun| r.student.params.fingerprint(|_| true);
    assert_eq!(a.metrics.summary("cka", 5, fp(&a)), b.metrics.summary("cka", 5, fp(&b)));
    assert_eq!(a.student, b.student);

    assert!(a.metrics.teachers_unchanged());
    assert_eq!(a.metrics.teacher_fingerprints_before, before);
    let after: Vec<u64> = s.teachers.iter().map(Network::backbone_fingerprint).collect();
    assert_eq!(before, after);

    for (i, e) in a.metrics.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i);
        assert!(e.loss.identity_residual(&cfg.weights) <= 1e-12);
        assert_eq!(e.acc_tasks.len(), 2);
    }
}

#[test]
fn baselines_are_weight_settings_of_the_main_loop() {
    let s = setup(6);
    let pool = s.train.unlabeled();
    let cfg = quick(2, 6);

    let kd = vanilla_kd_baseline(&s.teachers, student_spec(8, 4), &pool, None, &cfg).unwrap();
    let mut zeroed = cfg.clone();
    zeroed.weights.lambda_intra = 0.0;
    zeroed.weights.lambda_inter = 0.0;
    zeroed.weights.lambda_align = 0.0;
    zeroed.target_mode = TargetMode::ConcatenatedLogits;
    let cka = amalgamate_student(&s.teachers, student_spec(8, 4), &pool, None, &zeroed).unwrap();
    let trace = |r: &AmalgamationRun| r.metrics.epochs.iter().map(|e| e.loss).collect::<Vec<_>>();
    assert_eq!(trace(&kd), trace(&cka));
    assert!(trace(&kd).iter().all(|l| l.total >= 0.0));

    let cfl = cfl_baseline(&s.teachers, student_spec(8, 4), &pool, None, &cfg).unwrap();
    let mut no_contrast = cfg.clone();
    no_contrast.weights.lambda_intra = 0.0;
    no_contrast.weights.lambda_inter = 0.0;
    let cka = amalgamate_student(&s.teachers, student_spec(8, 4), &pool, None, &no_contrast).unwrap();
    assert_eq!(trace(&cfl), trace(&cka));
    assert_eq!(cfl.student, cka.student);
    assert!(trace(&cfl).iter().all(|l| l.align >= 0.0));
    assert!(cfl.metrics.teachers_unchanged());
}

#[test]
fn zero_weight_equals_removing_the_term() {
    let s = setup(7);
    let student = Network::init(student_spec(8, 4), 1).unwrap();
    let mut dims = vec![student.feature_dim()];
    dims.extend(s.teachers.iter().map(Network::feature_dim));
    let stack = CommonSpaceStack::init(CommonSpaceSpec::new(dims), 2).unwrap();
    let x = s.train.samples.gather_rows(&(0..16).collect::<Vec<_>>()).unwrap();
    for which in 0..4 {
        let mut cfg = quick(1, 7);
        let w = &mut cfg.weights;
        *[&mut w.lambda_intra, &mut w.lambda_inter, &mut w.lambda_align, &mut w.lambda_std][which] = 0.0;
        let kept = student_gradients(&student, &stack, &s.teachers, &x, &cfg, 0, 0, false).unwrap();
        let removed = student_gradients(&student, &stack, &s.teachers, &x, &cfg, 0, 0, true).unwrap();
        assert_eq!(kept.student, removed.student, "term {which}");
        assert_eq!(kept.breakdown.total, removed.breakdown.total);
        if which != 2 {
            assert_eq!(kept.common, removed.common, "term {which}");
        }
    }
}

#[test]
fn non_finite_inputs_abort_with_a_named_component() {
    let s = setup(8);
    let huge = Tensor::filled(s.train.len(), 8, 1e300);
    let pool = UnlabeledPool { samples: huge };
    let cfg = AmalgamationConfig {
        augmentation: AugmentationPolicy {
            noise_std: 0.0,
            mask_prob: 0.0,
            scale_jitter: 0.0,
            seed: 0,
        },
        ..quick(1, 8)
    };
    match amalgamate_student(&s.teachers, student_spec(8, 4), &pool, None, &cfg) {
        Err(Error::NonFiniteLoss { component, batch }) => {
            assert!(!component.is_empty());
            assert_eq!(batch, 0);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn misconfigured_runs_are_rejected() {
    let s = setup(9);
    let pool = s.train.unlabeled();
    let cfg = quick(1, 9);
    assert!(amalgamate_student(&[], student_spec(8, 4), &pool, None, &cfg).is_err());
    assert!(amalgamate_student(&s.teachers, student_spec(8, 3), &pool, None, &cfg).is_err());
    let mut unfrozen = s.teachers.clone();
    unfrozen[0].frozen = false;
    assert!(amalgamate_student(&unfrozen, student_spec(8, 4), &pool, None, &cfg).is_err());
    let bad = AmalgamationConfig {
        kl_direction: KlDirection::TeacherFirst,
        batch_size: 1,
        ..cfg
    };
    assert!(amalgamate_student(&s.teachers, student_spec(8, 4), &pool, None, &bad).is_err());
}

#[test]
fn thread_pool_and_sequential_runs_agree_bitwise() {
    let s = setup(6);
    let mut spec = student_spec(8, 4);
    spec.encoder_widths = vec![8, 128, 128];
    let cfg = AmalgamationConfig {
        batch_size: 64,
        ..quick(2, 6)
    };
    let pool = s.train.unlabeled();
    let par = amalgamate_student(&s.teachers, spec.clone(), &pool, None, &cfg).unwrap();
    let seq = cka_core::par::with_sequential(|| amalgamate_student(&s.teachers, spec, &pool, None, &cfg).unwrap());
    assert_eq!(par.student, seq.student);
    assert_eq!(par.common, seq.common);
}
