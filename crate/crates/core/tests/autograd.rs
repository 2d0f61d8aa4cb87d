mod common;

use proptest::prelude::*;
use secaps::autograd::{finite_difference_check, Graph, Tensor};
use secaps::gradcheck::{run_suite, OP_TOLERANCE};
use secaps::Error;

#[test]
fn identity_matmul_returns_input() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(3));
    let x = g.constant(Tensor::new([3, 1], vec![0.3, -1.2, 4.0]).unwrap());
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -1.2, 4.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn tanh_of_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.tanh(x).unwrap();
    assert_eq!(g.value(y).item().unwrap(), 0.0);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2, 3]"), "{detail}");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn overflow_is_reported() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(1000.0));
    assert!(matches!(g.exp(x), Err(Error::NonFinite { .. })));
    assert!(Tensor::new([1], vec![f64::NAN]).is_err());
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full([2, 3, 2], 0.4));
    let s = g.sum_all(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn square_gradient_at_three() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros([2]));
    let y = g.tanh(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn var_from_another_graph_is_a_state_error() {
    let mut g = Graph::new();
    let mut h = Graph::new();
    let x = h.param(Tensor::scalar(1.0));
    let _ = g.param(Tensor::scalar(1.0));
    assert!(matches!(g.tanh(x), Err(Error::State(_))));
}

#[test]
fn square_at_two_central_difference() {
    let err = finite_difference_check(|g, p| g.mul(p[0], p[0]), &[Tensor::scalar(2.0)], 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn argmax_tie_is_a_non_differentiable_point() {
    let x = Tensor::from_vec(vec![1.0, 1.0, 0.0]).unwrap();
    let r = finite_difference_check(
        |g, p| {
            let m = g.max(p[0], 0)?;
            g.sum_all(m)
        },
        &[x],
        1e-5,
    );
    assert!(matches!(r, Err(Error::NonDifferentiablePoint { .. })), "{r:?}");
}

#[test]
fn non_deterministic_function_is_rejected() {
    use std::sync::atomic::{AtomicU64, Ordering};
    let calls = AtomicU64::new(0);
    let r = finite_difference_check(
        |g, p| {
            let k = calls.fetch_add(1, Ordering::SeqCst) as f64;
            g.scale(p[0], 1.0 + k)
        },
        &[Tensor::scalar(1.0)],
        1e-5,
    );
    assert!(matches!(r, Err(Error::NonDeterministic)));
}

#[test]
fn every_op_matches_central_differences_over_100_seeds() {
    let outcomes = run_suite(100, 0).unwrap();
    for o in outcomes.iter().filter(|o| o.cases > 0) {
        assert!(o.max_rel_error < OP_TOLERANCE, "{} {:e}", o.name, o.max_rel_error);
        assert_eq!(o.cases, 100);
    }
}

#[test]
fn fan_out_gradient_is_the_sum_of_branches() {
    let mut r = common::rng(7);
    for _ in 0..50 {
        let x = Tensor::new([4], common::random_vec(&mut r, 4, 1.5)).unwrap();
        let grad_of = |branches: &[bool; 2]| {
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let mut terms = Vec::new();
            if branches[0] {
                let t = g.tanh(v).unwrap();
                terms.push(g.sum_all(t).unwrap());
            }
            if branches[1] {
                let e = g.powf(v, 2.0).unwrap();
                let s = g.sigmoid(e).unwrap();
                terms.push(g.sum_all(s).unwrap());
            }
            let root = terms.into_iter().reduce(|a, b| g.add(a, b).unwrap()).unwrap();
            g.backward(root).unwrap().get(v).unwrap().clone()
        };
        let both = grad_of(&[true, true]);
        let first = grad_of(&[true, false]);
        let second = grad_of(&[false, true]);
        for k in 0..4 {
            assert!((both.data()[k] - first.data()[k] - second.data()[k]).abs() < 1e-14);
        }
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let run = || {
        let mut r = common::rng(99);
        let a = Tensor::new([3, 4], common::random_vec(&mut r, 12, 1.0)).unwrap();
        let b = Tensor::new([4, 2], common::random_vec(&mut r, 8, 1.0)).unwrap();
        let mut g = Graph::new();
        let (va, vb) = (g.param(a), g.param(b));
        let y = g.matmul(va, vb).unwrap();
        let y = g.softmax(y, 1).unwrap();
        let y = g.log(y).unwrap();
        let s = g.sum_all(y).unwrap();
        let grads = g.backward(s).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        (
            g.value(s).item().unwrap().to_bits(),
            bits(grads.get(va).unwrap()),
            bits(grads.get(vb).unwrap()),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        data in proptest::collection::vec(-30.0f64..30.0, 1..40),
    ) {
        let cols = data.len().div_ceil(rows);
        let mut values = data.clone();
        values.resize(rows * cols, 0.5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([rows, cols], values).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let out = g.value(y);
        for r in 0..rows {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_matches_the_naive_triple_loop(
        seed in 0u64..1000, n in 1usize..5, k in 1usize..5, m in 1usize..5,
    ) {
        let mut r = common::rng(seed);
        let a = common::random_vec(&mut r, n * k, 2.0);
        let b = common::random_vec(&mut r, k * m, 2.0);
        let mut g = Graph::new();
        let va = g.constant(Tensor::new([n, k], a.clone()).unwrap());
        let vb = g.constant(Tensor::new([k, m], b.clone()).unwrap());
        let y = g.matmul(va, vb).unwrap();
        for i in 0..n {
            for j in 0..m {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * m + j]).sum();
                prop_assert!((g.value(y).get(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }
}
