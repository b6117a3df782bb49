mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmc::losses::{grad_kl_to_uniform, grad_sample_loss, kl_to_uniform, sample_loss, LabelOneHot};
use tmc::network::{fuse_backward, fuse_forward, MultiViewModel, OutputActivation};
use tmc::opinion::DirichletParams;

use common::{central_difference, close};

#[test]
fn sample_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let k = rng.random_range(2..=6);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(1.2..25.0)).collect();
        let y = LabelOneHot::new(rng.random_range(0..k), k).unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let f = |a: &[f64]| sample_loss(&DirichletParams::new(a.to_vec()).unwrap(), y, lambda).unwrap();
        let g = grad_sample_loss(&DirichletParams::new(alpha.clone()).unwrap(), y, lambda).unwrap();
        for m in 0..k {
            let fd = central_difference(&f, &alpha, m, 1e-5);
            assert!(close(g[m], fd, 1e-5), "alpha {alpha:?} m {m}: {} vs {fd}", g[m]);
        }
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let k = rng.random_range(2..=5);
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(1.2..15.0)).collect();
        let f = |a: &[f64]| kl_to_uniform(&DirichletParams::new(a.to_vec()).unwrap());
        let g = grad_kl_to_uniform(&DirichletParams::new(alpha.clone()).unwrap());
        for m in 0..k {
            assert!(close(g[m], central_difference(&f, &alpha, m, 1e-5), 1e-5));
        }
    }
}

#[test]
fn fusion_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..100 {
        let v = if case % 2 == 0 { 2 } else { 3 };
        let k = if case % 4 < 2 { 2 } else { 5 };
        let evidences: Vec<Vec<f64>> = (0..v).map(|_| common::random_evidence(k, 0.5, 30.0, &mut rng)).collect();
        let weights = common::random_evidence(k, -1.0, 1.0, &mut rng);
        let (_, tape) = fuse_forward(&evidences).unwrap();
        let grads = fuse_backward(&tape, &weights).unwrap();
        let flat: Vec<f64> = evidences.concat();
        let f = |x: &[f64]| {
            let views: Vec<Vec<f64>> = x.chunks(k).map(<[f64]>::to_vec).collect();
            let (alpha, _) = fuse_forward(&views).unwrap();
            alpha.alpha().iter().zip(&weights).map(|(a, w)| a * w).sum()
        };
        for (i, g) in grads.concat().iter().enumerate() {
            let fd = central_difference(&f, &flat, i, 1e-5);
            assert!(close(*g, fd, 1e-5), "case {case} param {i}: {g} vs {fd}");
        }
    }
}

fn model_fd_check(head: OutputActivation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MultiViewModel::initialize(&[4, 3], &[8], 3, head, &mut rng).unwrap();
    let x0 = Array2::from_shape_fn((5, 4), |_| rng.random_range(-2.0..2.0));
    let x1 = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
    let labels = [0, 1, 2, 1, 0];
    let inputs = [x0.view(), x1.view()];
    let (_, grads) = model.loss_and_gradients(&inputs, &labels, 0.6).unwrap();
    let h = 1e-5;
    for v in 0..2 {
        let analytic = grads[v].flatten();
        let mut idx = 0;
        let groups = model.views()[v].parameter_slices().len();
        for group in 0..groups {
            for j in 0..model.views()[v].parameter_slices()[group].len() {
                let orig = model.views()[v].parameter_slices()[group][j];
                model.views_mut()[v].parameter_slices_mut()[group][j] = orig + h;
                let up = model.loss_and_gradients(&inputs, &labels, 0.6).unwrap().0;
                model.views_mut()[v].parameter_slices_mut()[group][j] = orig - h;
                let down = model.loss_and_gradients(&inputs, &labels, 0.6).unwrap().0;
                model.views_mut()[v].parameter_slices_mut()[group][j] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!(close(analytic[idx], fd, 1e-4), "view {v} param {idx}: {} vs {fd}", analytic[idx]);
                idx += 1;
            }
        }
    }
}

#[test]
fn end_to_end_gradients_with_relu_evidence() {
    model_fd_check(OutputActivation::Relu, 24);
}

#[test]
fn end_to_end_gradients_with_softplus_evidence() {
    model_fd_check(OutputActivation::Softplus, 25);
}
