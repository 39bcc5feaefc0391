use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn tiny_mlp(data_dim: usize, hidden: Vec<usize>, cond_dim: usize, time: TimeEmbedding) -> Architecture {
    Architecture::Mlp {
        data_dim,
        cond_dim,
        hidden,
        time,
    }
}

fn tiny_conv(cond_channels: usize) -> Architecture {
    Architecture::Conv {
        height: 4,
        width: 5,
        channels: 2,
        cond_channels,
        hidden: vec![3, 4, 3],
        time: TimeEmbedding::Sinusoidal {
            dim: 2,
            max_frequency: 4.0,
        },
    }
}

fn randomized(arch: Architecture, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = (0..arch.param_count())
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            0.5 * v
        })
        .collect();
    Network::from_params(arch, params).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central finite differences of the batch loss, h = 1e-5.
fn fd_gradient(net: &Network, batch: &RegressionBatch<'_>) -> Vec<f64> {
    let h = 1e-5;
    let mut probe = net.clone();
    (0..net.param_count())
        .map(|i| {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = probe.regression_loss_and_grad(batch).unwrap().loss;
            probe.params_mut()[i] = orig - h;
            let down = probe.regression_loss_and_grad(batch).unwrap().loss;
            probe.params_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn check_gradients(arch: Architecture, draws: u64) {
    let data_dim = arch.data_dim();
    let cond_dim = arch.cond_dim();
    for draw in 0..draws {
        let net = randomized(arch.clone(), 100 + draw);
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let rows = 3;
        let x = random_matrix(rows, data_dim, &mut rng);
        let target = random_matrix(rows, data_dim, &mut rng);
        let cond = (cond_dim > 0).then(|| random_matrix(rows, cond_dim, &mut rng));
        let weights = Array2::from_shape_fn((rows, data_dim), |_| if rng.random::<f64>() < 0.2 { 0.0 } else { 1.0 });
        let t: Vec<f64> = (0..rows).map(|_| rng.random()).collect();
        let batch = RegressionBatch {
            input: x.view(),
            cond: cond.as_ref().map(|c| c.view()),
            t: &t,
            target: target.view(),
            weights: Some(weights.view()),
        };
        let analytic = net.regression_loss_and_grad(&batch).unwrap().grad;
        let numeric = fd_gradient(&net, &batch);
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "draw {draw}: relative error {err}");
    }
}

#[test]
fn zero_output_layer_gives_zero_field() {
    let net = Network::new(Architecture::default_mlp(2, 0), 1).unwrap();
    let z = array![[0.3, -2.0], [5.0, 1.0]];
    let v = net.forward(z.view(), None, &[0.0, 0.9]).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));

    let conv = Network::new(tiny_conv(0), 1).unwrap();
    let z = Array2::from_elem((2, 40), 0.7);
    assert!(conv.forward(z.view(), None, &[0.2, 0.4]).unwrap().iter().all(|&x| x == 0.0));
}

#[test]
fn tiny_mlp_matches_hand_computation() {
    // 2 -> 4 -> 2 plus the appended time feature, every parameter 0.1.
    let arch = tiny_mlp(2, vec![4], 0, TimeEmbedding::ScalarAppend);
    let net = Network::from_params(arch.clone(), vec![0.1; arch.param_count()]).unwrap();
    let v = net.forward(array![[1.0, 0.0]].view(), None, &[0.0]).unwrap();
    // hidden: tanh(0.1*1 + 0.1*0 + 0.1*0 + 0.1) = tanh(0.2); output: 4 * 0.1 * tanh(0.2) + 0.1
    let expected = 0.1789501280899616;
    for &o in v.iter() {
        assert!((o - expected).abs() < 1e-15, "{o}");
    }
}

#[test]
fn sinusoidal_embedding_makes_output_time_dependent() {
    let net = randomized(Architecture::default_mlp(2, 0), 5);
    let z = array![[0.4, -0.1]];
    let a = net.forward(z.view(), None, &[0.0]).unwrap();
    let b = net.forward(z.view(), None, &[1.0]).unwrap();
    assert_ne!(a, b);
}

#[test]
fn perfect_fit_has_zero_loss_and_zero_bias_grad() {
    let arch = tiny_mlp(2, vec![8], 0, TimeEmbedding::default());
    let net = randomized(arch.clone(), 3);
    let x = array![[0.1, 0.2], [-0.3, 0.5]];
    let t = [0.25, 0.75];
    let target = net.forward(x.view(), None, &t).unwrap();
    let g = net
        .regression_loss_and_grad(&RegressionBatch {
            input: x.view(),
            cond: None,
            t: &t,
            target: target.view(),
            weights: None,
        })
        .unwrap();
    assert_eq!(g.loss, 0.0);
    let n = g.grad.len();
    assert!(g.grad[n - 2..].iter().all(|&v| v == 0.0));
}

#[test]
fn zero_field_loss_is_mean_squared_target() {
    let net = Network::new(Architecture::default_mlp(2, 0), 0).unwrap();
    let x = array![[1.0, 1.0]];
    let d = array![[3.0, 4.0]];
    let g = net
        .regression_loss_and_grad(&RegressionBatch {
            input: x.view(),
            cond: None,
            t: &[0.5],
            target: d.view(),
            weights: None,
        })
        .unwrap();
    // reduction is the mean over batch rows and coordinates: |d|^2 / dim
    assert_eq!(g.loss, 25.0 / 2.0);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    check_gradients(tiny_mlp(2, vec![8], 0, TimeEmbedding::default()), 10);
    check_gradients(tiny_mlp(3, vec![6, 5, 4], 0, TimeEmbedding::ScalarAppend), 10);
}

#[test]
fn conditioned_mlp_gradients_match_finite_differences() {
    check_gradients(tiny_mlp(2, vec![8, 8], 2, TimeEmbedding::default()), 10);
}

#[test]
fn conv_gradients_match_finite_differences() {
    check_gradients(tiny_conv(0), 10);
    check_gradients(tiny_conv(2), 10);
}

#[test]
fn forward_preserves_shape() {
    let net = randomized(tiny_conv(0), 2);
    let z = Array2::from_elem((3, 40), 0.1);
    assert_eq!(net.forward(z.view(), None, &[0.0, 0.5, 1.0]).unwrap().dim(), (3, 40));
    let mlp = randomized(Architecture::default_mlp(5, 0), 2);
    let z = Array2::from_elem((7, 5), 0.1);
    assert_eq!(mlp.forward(z.view(), None, &[0.3; 7]).unwrap().dim(), (7, 5));
}

#[test]
fn forward_rejects_bad_inputs() {
    let net = Network::new(Architecture::default_mlp(2, 0), 0).unwrap();
    let z = array![[0.0, 1.0]];
    assert!(matches!(net.forward(z.view(), None, &[1.5]), Err(Error::TimeOutOfRange(_))));
    assert!(matches!(net.forward(z.view(), None, &[-0.1]), Err(Error::TimeOutOfRange(_))));
    let bad = array![[f64::NAN, 1.0]];
    assert!(matches!(net.forward(bad.view(), None, &[0.5]), Err(Error::NonFinite(_))));
    let empty = Array2::<f64>::zeros((0, 2));
    assert!(matches!(net.forward(empty.view(), None, &[]), Err(Error::EmptyBatch)));
    let wrong = array![[0.0, 1.0, 2.0]];
    assert!(matches!(net.forward(wrong.view(), None, &[0.5]), Err(Error::Shape(_))));
    let nan_target = array![[f64::INFINITY, 0.0]];
    let r = net.regression_loss_and_grad(&RegressionBatch {
        input: z.view(),
        cond: None,
        t: &[0.5],
        target: nan_target.view(),
        weights: None,
    });
    assert!(matches!(r, Err(Error::NonFinite("target"))));
}

#[test]
fn param_counts_are_recorded() {
    let mlp = Architecture::default_mlp(2, 0);
    // (2 + 16) -> 128 -> 128 -> 128 -> 2
    assert_eq!(mlp.param_count(), 18 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 2 + 2);
    let conv = Architecture::default_conv(16, 16, 3, 0);
    assert_eq!(conv.param_count(), 32 * 99 + 32 + 2 * (32 * 288 + 32) + 3 * 288 + 3);
}

#[test]
fn training_steps_are_bit_reproducible() {
    let run = || {
        let mut net = Network::new(tiny_mlp(2, vec![16, 16], 0, TimeEmbedding::default()), 9).unwrap();
        let opt = AdamW::default();
        let mut state = OptimizerState::new(net.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random_matrix(8, 2, &mut rng);
            let y = random_matrix(8, 2, &mut rng);
            let t: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let g = net
                .regression_loss_and_grad(&RegressionBatch {
                    input: x.view(),
                    cond: None,
                    t: &t,
                    target: y.view(),
                    weights: None,
                })
                .unwrap();
            opt.apply(net.params_mut(), &g.grad, &mut state, 1e-2).unwrap();
        }
        net
    };
    let a = run();
    let b = run();
    assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
