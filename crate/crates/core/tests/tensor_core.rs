mod common;

use branchnet::tensor_core::{
    finite_diff_check, softmax_rows, BatchNormOptions, Mode, PoolKind, RunningStats, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let bv = b.map(|b| tape.constant(b.clone()));
    let out = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
    tape.value(out).clone()
}

#[test]
fn conv2d_scalar_and_summation_cases() {
    let out = conv(&t(&[1, 1, 1, 1], &[3.0]), &t(&[1, 1, 1, 1], &[2.0]), None, 1, 0);
    assert_eq!(out.data(), &[6.0]);

    let out = conv(&Tensor::ones(&[1, 1, 3, 3]), &Tensor::ones(&[1, 1, 3, 3]), None, 1, 0);
    assert_eq!(out.shape(), &[1, 1, 1, 1]);
    assert_eq!(out.data(), &[9.0]);
}

#[test]
fn conv2d_matches_loop_oracle_strided_padded() {
    let mut r = rng(1);
    let x = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 1.0, &mut r);
    let fast = conv(&x, &w, Some(&b), 2, 1);
    let slow = common::conv2d_direct(&x, &w, Some(&b), 2, 1);
    assert_eq!(fast.shape(), &[1, 3, 3, 3]);
    assert!(fast.max_abs_diff(&slow) < 1e-12);
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[3, 3, 3, 3]));
    let err = tape.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("Cin"), "{err}");

    let big = tape.constant(Tensor::zeros(&[1, 2, 7, 3]));
    let err = tape.conv2d(x, big, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("kh"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv2d_agrees_with_loop_oracle(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..9, w in 3usize..9, k in 1usize..4,
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[n, cin, h, w], 1.0, &mut r);
        let wt = Tensor::randn(&[cout, cin, k, k], 1.0, &mut r);
        let b = Tensor::randn(&[cout], 1.0, &mut r);
        let fast = conv(&x, &wt, Some(&b), stride, pad);
        let slow = common::conv2d_direct(&x, &wt, Some(&b), stride, pad);
        prop_assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn pooling_agrees_with_loop_oracle(
        n in 1usize..3, c in 1usize..3, h in 2usize..9, w in 2usize..9,
        win in 1usize..3, stride in 1usize..3, max in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[n, c, h, w], 1.0, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kind = if max { PoolKind::Max } else { PoolKind::Avg };
        let out = tape.pool2d(xv, kind, win, stride).unwrap();
        let oracle = common::pool_direct(&x, max, (win, win), (stride, stride));
        prop_assert!(tape.value(out).max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn linear_agrees_with_loop_oracle(n in 1usize..8, d in 1usize..8, k in 1usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[n, d], 1.0, &mut r);
        let w = Tensor::randn(&[k, d], 1.0, &mut r);
        let b = Tensor::randn(&[k], 1.0, &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let out = tape.linear(xv, wv, bv).unwrap();
        prop_assert!(tape.value(out).max_abs_diff(&common::linear_direct(&x, &w, &b)) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-1000.0f64..1000.0, 1..40)) {
        let k = vals.len();
        let p = softmax_rows(&Tensor::from_vec(&[1, k], vals).unwrap()).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn relu_is_idempotent(vals in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[vals.len()], vals).unwrap());
        let once = tape.relu(x).unwrap();
        let twice = tape.relu(once).unwrap();
        prop_assert_eq!(tape.value(once), tape.value(twice));
    }
}

#[test]
fn batch_norm_constant_input_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[2, 3, 2, 2], 4.2));
    let g = tape.constant(Tensor::ones(&[3]));
    let b = tape.constant(Tensor::zeros(&[3]));
    let mut stats = RunningStats::new(3);
    let y = tape
        .batch_norm2d(x, g, b, &mut stats, Mode::Train, BatchNormOptions::default())
        .unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn batch_norm_output_has_beta_mean_unit_variance() {
    let mut r = rng(3);
    let x = Tensor::randn(&[4, 3, 5, 5], 40.0, &mut r).map(|v| v + 7.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[3]));
    let b = tape.constant(Tensor::full(&[3], 5.0));
    let mut stats = RunningStats::new(3);
    let y = tape
        .batch_norm2d(xv, g, b, &mut stats, Mode::Train, BatchNormOptions::default())
        .unwrap();
    for (mean, var) in common::channel_stats(tape.value(y)) {
        assert!((mean - 5.0).abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }
}

#[test]
fn batch_norm_matches_two_pass_oracle_and_updates_running_stats() {
    let mut r = rng(4);
    let x = Tensor::randn(&[4, 3, 2, 2], 2.0, &mut r);
    let gamma: Vec<f64> = (0..3).map(|_| r.random_range(0.5..1.5)).collect();
    let beta: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    let opts = BatchNormOptions::default();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(t(&[3], &gamma));
    let b = tape.constant(t(&[3], &beta));
    let mut stats = RunningStats::new(3);
    let y = tape.batch_norm2d(xv, g, b, &mut stats, Mode::Train, opts).unwrap();
    let oracle = common::batch_norm_direct(&x, &gamma, &beta, opts.epsilon);
    assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12);

    let m = 16.0;
    for (ch, (mean, var)) in common::channel_stats(&x).into_iter().enumerate() {
        let expect_mean = 0.9 * 0.0 + 0.1 * mean;
        let expect_var = 0.9 * 1.0 + 0.1 * var * m / (m - 1.0);
        assert!((stats.mean.data()[ch] - expect_mean).abs() < 1e-12);
        assert!((stats.var.data()[ch] - expect_var).abs() < 1e-12);
    }

    // eval mode reads the running statistics only
    let before = stats.clone();
    let y = tape.batch_norm2d(xv, g, b, &mut stats, Mode::Eval, opts).unwrap();
    assert_eq!(stats, before);
    let v = tape.value(y).at(&[1, 2, 0, 1]);
    let expect =
        gamma[2] * (x.at(&[1, 2, 0, 1]) - stats.mean.data()[2]) / (stats.var.data()[2] + opts.epsilon).sqrt() + beta[2];
    assert!((v - expect).abs() < 1e-12);
}

#[test]
fn batch_norm_train_rejects_single_element() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
    let g = tape.constant(Tensor::ones(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let mut stats = RunningStats::new(2);
    assert!(tape
        .batch_norm2d(x, g, b, &mut stats, Mode::Train, BatchNormOptions::default())
        .is_err());
    assert!(tape
        .batch_norm2d(x, g, b, &mut stats, Mode::Eval, BatchNormOptions::default())
        .is_ok());
}

#[test]
fn relu_values_and_gradient_mask() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[-1.0, 2.0]));
    let y = tape.relu(x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn pool_small_cases_and_errors() {
    let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let mx = tape.pool2d(xv, PoolKind::Max, 2, 2).unwrap();
    let av = tape.pool2d(xv, PoolKind::Avg, 2, 2).unwrap();
    assert_eq!(tape.value(mx).data(), &[4.0]);
    assert_eq!(tape.value(av).data(), &[2.5]);
    assert!(tape.pool2d(xv, PoolKind::Max, 3, 1).is_err());

    let s = tape.sum(mx).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn max_pool_tie_goes_to_first_index() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[1, 1, 2, 2], 3.0));
    let y = tape.pool2d(x, PoolKind::Max, 2, 2).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn max_pool_6x6_matches_window_oracle() {
    let x = Tensor::randn(&[1, 1, 6, 6], 1.0, &mut rng(8));
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.pool2d(xv, PoolKind::Max, 2, 2).unwrap();
    let oracle = common::pool_direct(&x, true, (2, 2), (2, 2));
    assert_eq!(tape.value(y), &oracle);
}

#[test]
fn global_avg_pool_cases() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::full(&[2, 3, 4, 5], 7.0));
    let g = tape.global_avg_pool(c).unwrap();
    assert_eq!(tape.value(g).shape(), &[2, 3]);
    assert!(tape.value(g).data().iter().all(|&v| (v - 7.0).abs() < 1e-15));

    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]));
    let g = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(g).data(), &[4.0]);

    let r = Tensor::randn(&[2, 3, 4, 6], 1.0, &mut rng(9));
    let rv = tape.constant(r);
    let g = tape.global_avg_pool(rv).unwrap();
    let p = tape.pool2d_rect(rv, PoolKind::Avg, (4, 6), (1, 1)).unwrap();
    let flat = tape.value(p).clone().reshape(&[2, 3]).unwrap();
    assert!(tape.value(g).max_abs_diff(&flat) < 1e-12);
}

#[test]
fn linear_identity_and_zero_input() {
    let mut tape = Tape::new();
    let x = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.25, -4.0]);
    let mut eye = Tensor::zeros(&[3, 3]);
    (0..3).for_each(|i| eye.set(&[i, i], 1.0));
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(eye),
        tape.constant(Tensor::zeros(&[3])),
    );
    let y = tape.linear(xv, wv, bv).unwrap();
    assert_eq!(tape.value(y), &x);

    let bias = t(&[2], &[0.5, -1.5]);
    let z = tape.constant(Tensor::zeros(&[3, 4]));
    let w = tape.constant(Tensor::randn(&[2, 4], 1.0, &mut rng(2)));
    let b = tape.constant(bias);
    let y = tape.linear(z, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);

    assert!(tape.linear(xv, w, b).is_err());
}

#[test]
fn softmax_cases() {
    let p = softmax_rows(&t(&[1, 2], &[0.0, 0.0])).unwrap();
    assert_eq!(p.data(), &[0.5, 0.5]);
    let p = softmax_rows(&t(&[1, 2], &[1000.0, 1000.0])).unwrap();
    assert_eq!(p.data(), &[0.5, 0.5]);

    let x = Tensor::randn(&[3, 5], 3.0, &mut rng(5));
    let shifted = x.map(|v| v + 123.456);
    let a = softmax_rows(&x).unwrap();
    let b = softmax_rows(&shifted).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);

    assert!(softmax_rows(&t(&[1, 2], &[f64::NAN, 0.0])).is_err());
}

#[test]
fn residual_add_cases() {
    let mut tape = Tape::new();
    let mut r = rng(6);
    let a = tape.param(Tensor::randn(&[2, 3], 1.0, &mut r));
    let b = tape.param(Tensor::randn(&[2, 3], 1.0, &mut r));
    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let az = tape.residual_add(a, z).unwrap();
    assert_eq!(tape.value(az), tape.value(a));
    let ab = tape.residual_add(a, b).unwrap();
    let ba = tape.residual_add(b, a).unwrap();
    assert_eq!(tape.value(ab), tape.value(ba));
    let s = tape.sum(ab).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &Tensor::ones(&[2, 3]));

    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape.residual_add(a, c).is_err());
}

#[test]
fn backward_sum_and_fan_out() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::randn(&[2, 2, 3], 1.0, &mut rng(7)));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &Tensor::ones(&[2, 2, 3]));

    let mut tape = Tape::new();
    let x = tape.param(Tensor::randn(&[4], 1.0, &mut rng(7)));
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &Tensor::full(&[4], 2.0));
}

#[test]
fn duplicated_path_doubles_gradient_exactly() {
    let mut r = rng(10);
    let x0 = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut r);
    let w0 = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut r);

    let grad_of = |dup: bool| {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let w = tape.constant(w0.clone());
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        let y = tape.relu(y).unwrap();
        let out = if dup { tape.add(y, y).unwrap() } else { y };
        let s = tape.sum(out).unwrap();
        tape.backward(s).unwrap();
        tape.grad(x).unwrap().clone()
    };
    let single = grad_of(false);
    let double = grad_of(true);
    assert_eq!(single.map(|v| 2.0 * v), double);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::ones(&[3]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn finite_diff_conv_relu_linear() {
    let mut r = rng(11);
    let x = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut r);
    let w = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[2], 1.0, &mut r);
    let report = finite_diff_check(&[x, w, b], 1e-4, 1, |tape, v| tape.conv2d(v[0], v[1], Some(v[2]), 1, 1)).unwrap();
    assert!(report.passed(), "conv max rel err {}", report.max_rel_error);

    let x: Vec<f64> = (0..20)
        .map(|_| {
            let m = r.random_range(0.02..2.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let report = finite_diff_check(&[t(&[20], &x)], 1e-6, 2, |tape, v| tape.relu(v[0])).unwrap();
    assert!(report.passed(), "relu max rel err {}", report.max_rel_error);

    let x = Tensor::randn(&[3, 4], 1.0, &mut r);
    let w = Tensor::randn(&[5, 4], 1.0, &mut r);
    let b = Tensor::randn(&[5], 1.0, &mut r);
    let report = finite_diff_check(&[x, w, b], 1e-6, 3, |tape, v| tape.linear(v[0], v[1], v[2])).unwrap();
    assert!(report.passed(), "linear max rel err {}", report.max_rel_error);
}
