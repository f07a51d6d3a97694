use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

/// Weighted sum with fixed non-uniform weights so every output entry matters.
fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var> {
    let (r, c) = g.shape(v);
    let w = Tensor::new(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    g.sum(p)
}

fn check_many<F: ScalarFn>(name: &str, f: F, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..10 {
        let inputs = make(&mut rng);
        let err = grad_check_many(&f, &inputs, 1e-5).unwrap();
        assert!(err <= 1e-6, "{name} trial {trial}: rel err {err}");
    }
}

#[test]
fn primitive_gradients_match_finite_differences() {
    check_many(
        "matmul",
        |g: &mut Graph, v: &[Var]| {
            let m = g.matmul(v[0], v[1])?;
            weighted_sum(g, m)
        },
        |r| vec![random(r, 3, 4), random(r, 4, 2)],
    );
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
        for rhs_shape in [(3, 4), (1, 4), (3, 1), (1, 1)] {
            check_many(
                name,
                move |g: &mut Graph, v: &[Var]| {
                    let o = match op {
                        0 => g.add(v[0], v[1])?,
                        1 => g.sub(v[0], v[1])?,
                        2 => g.mul(v[0], v[1])?,
                        _ => g.div(v[0], v[1])?,
                    };
                    weighted_sum(g, o)
                },
                move |r| vec![random(r, 3, 4), positive(r, rhs_shape.0, rhs_shape.1)],
            );
        }
    }
    let unary: Vec<(&str, fn(&mut Graph, Var) -> Result<Var>, bool)> = vec![
        ("scale", |g, v| g.scale(v, -2.5), false),
        ("add_scalar", |g, v| g.add_scalar(v, 0.7), false),
        ("exp", |g, v| g.exp(v), false),
        ("log", |g, v| g.log(v), true),
        ("sqrt", |g, v| g.sqrt(v), true),
        ("relu", |g, v| g.relu(v), false),
        ("softmax", |g, v| g.softmax(v), false),
        ("log_softmax", |g, v| g.log_softmax(v), false),
        ("sum", |g, v| g.sum(v), false),
        ("mean", |g, v| g.mean(v), false),
        ("sum_rows", |g, v| g.sum_axis(v, Axis::Rows), false),
        ("sum_cols", |g, v| g.sum_axis(v, Axis::Cols), false),
        ("mean_rows", |g, v| g.mean_axis(v, Axis::Rows), false),
        ("mean_cols", |g, v| g.mean_axis(v, Axis::Cols), false),
        ("row_norm", |g, v| g.row_norm(v), false),
        ("normalize_rows", |g, v| g.normalize_rows(v), false),
        ("transpose", |g, v| g.transpose(v), false),
        ("gather_rows", |g, v| g.gather_rows(v, &[2, 0, 2, 1]), false),
        ("concat_rows", |g, v| g.concat(&[v, v], Axis::Rows), false),
        ("concat_cols", |g, v| {
            let e = g.exp(v)?;
            g.concat(&[v, e], Axis::Cols)
        }, false),
        ("pairwise_sq_dist_self", |g, v| g.pairwise_sq_dist(v, v), false),
        ("pairwise_set_mmd", |g, v| {
            g.pairwise_set_mmd(
                v,
                2,
                &[
                    KernelTerm { bandwidth: 0.8, weight: 0.5 },
                    KernelTerm { bandwidth: 2.0, weight: 0.5 },
                ],
            )
        }, false),
    ];
    for (name, op, pos) in unary {
        check_many(
            name,
            move |g: &mut Graph, v: &[Var]| {
                let o = op(g, v[0])?;
                weighted_sum(g, o)
            },
            move |r| {
                let mut t = if pos { positive(r, 3, 4) } else { random(r, 3, 4) };
                if name == "relu" {
                    // keep probes away from the kink
                    for x in t.data_mut() {
                        if x.abs() < 1e-3 {
                            *x = 0.5;
                        }
                    }
                }
                vec![t]
            },
        );
    }
    check_many(
        "pairwise_sq_dist",
        |g: &mut Graph, v: &[Var]| {
            let d = g.pairwise_sq_dist(v[0], v[1])?;
            weighted_sum(g, d)
        },
        |r| vec![random(r, 3, 4), random(r, 5, 4)],
    );
}

#[test]
fn matmul_example() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let mut g = Graph::new();
    let va = g.param(a);
    let vb = g.constant(b.clone());
    let m = g.matmul(va, vb).unwrap();
    assert_eq!(g.value(m).data(), &[1.0, 2.0, 4.0, 5.0]);
    let s = g.sum(m).unwrap();
    let grads = g.backward(s).unwrap();
    // d sum(A·B)/dA[i][k] = Σ_j B[k][j]
    let row_sums: Vec<f64> = (0..3).map(|k| b.row(k).iter().sum()).collect();
    let ga = grads.wrt(va);
    for i in 0..2 {
        assert_eq!(ga.row(i), row_sums.as_slice());
    }
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row_vector(vec![0.0, 0.0]).unwrap());
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    // max-subtraction keeps large logits finite
    let big = g.constant(Tensor::row_vector(vec![1000.0, 1000.0]).unwrap());
    let y = g.softmax(big).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn relu_derivative() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row_vector(vec![-1.0, 1.0]).unwrap());
    let y = g.relu(x).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.0, 1.0]);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 2));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(2, 3)") && msg.contains("(2, 2)"), "{msg}");
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut g = Graph::new();
    let bad = g.constant(Tensor::row_vector(vec![f64::NAN, 1.0]).unwrap());
    assert!(matches!(g.softmax(bad), Err(Error::NonFinite(_))));
    assert!(matches!(g.log(bad), Err(Error::NonFinite(_))));
    let neg = g.constant(Tensor::row_vector(vec![-1.0, 1.0]).unwrap());
    assert!(matches!(g.log(neg), Err(Error::NonFinite(_))));
}

#[test]
fn constant_output_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.param(random(&mut rng, 4, 3));
    let z = g.scale(x, 0.0).unwrap();
    let s = g.sum(z).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).data().iter().all(|&v| v == 0.0));

    // an output that never touches x
    let mut g = Graph::new();
    let x = g.param(random(&mut rng, 4, 3));
    let c = g.constant(Tensor::scalar(2.0));
    let s = g.sum(c).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
    assert_eq!(grads.wrt(x), Tensor::zeros(4, 3));
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = random(&mut rng, 3, 3);
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let e = g.exp(x).unwrap();
        let f1 = g.sum(e).unwrap();
        let sm = g.softmax(x).unwrap();
        let f2 = weighted_sum(&mut g, sm).unwrap();
        let out = match which {
            0 => f1,
            1 => f2,
            _ => g.add(f1, f2).unwrap(),
        };
        g.backward(out).unwrap().wrt(x)
    };
    let (a, b, both) = (grad_of(0), grad_of(1), grad_of(2));
    for ((x, y), z) in a.data().iter().zip(b.data()).zip(both.data()) {
        assert!((x + y - z).abs() < 1e-12);
    }
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, 16, 8);
    let w = random(&mut rng, 8, 8);
    let run = || {
        let mut g = Graph::new();
        let va = g.param(a.clone());
        let vw = g.param(w.clone());
        let h = g.matmul(va, vw).unwrap();
        let h = g.relu(h).unwrap();
        let d = g.pairwise_sq_dist(h, h).unwrap();
        let s = g.mean(d).unwrap();
        let grads = g.backward(s).unwrap();
        (grads.wrt(va), grads.wrt(vw))
    };
    let (a1, w1) = run();
    let (a2, w2) = run();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a1), bits(&a2));
    assert_eq!(bits(&w1), bits(&w2));
}

#[test]
fn set_mmd_diagonal_is_zero_and_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, 5, 6));
    let d = g
        .pairwise_set_mmd(x, 3, &[KernelTerm { bandwidth: 1.0, weight: 1.0 }])
        .unwrap();
    let d = g.value(d);
    for i in 0..5 {
        assert_eq!(d.get(i, i), 0.0);
        for j in 0..5 {
            assert!((d.get(i, j) - d.get(j, i)).abs() < 1e-12);
            assert!(d.get(i, j) >= -1e-12);
        }
    }
    assert!(g.pairwise_set_mmd(x, 4, &[KernelTerm { bandwidth: 1.0, weight: 1.0 }]).is_err());
}
