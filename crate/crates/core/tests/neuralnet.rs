use errlab_core::linalg::{least_squares, Matrix};
use errlab_core::neuralnet::*;
use errlab_core::randmath::RngState;
use proptest::prelude::*;
use rand::Rng;

fn batch_mse(net: &Mlp<f64>, x: &Matrix<f64>, y: &[f64]) -> f64 {
    let p = predict_matrix(net, x).unwrap();
    p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Largest componentwise relative error between backprop and central
/// differences with step `h`.
fn gradient_error(net: &Mlp<f64>, x: &Matrix<f64>, y: &[f64], h: f64) -> f64 {
    let g = backprop_gradient(net, x, y).unwrap();
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for l in 0..net.weights.len() {
        for idx in 0..net.weights[l].as_slice().len() {
            let mut plus = net.clone();
            plus.weights[l].as_mut_slice()[idx] += h;
            let mut minus = net.clone();
            minus.weights[l].as_mut_slice()[idx] -= h;
            let numeric = (batch_mse(&plus, x, y) - batch_mse(&minus, x, y)) / (2.0 * h);
            check(g.weights[l].as_slice()[idx], numeric);
        }
        for j in 0..net.biases[l].len() {
            let mut plus = net.clone();
            plus.biases[l][j] += h;
            let mut minus = net.clone();
            minus.biases[l][j] -= h;
            let numeric = (batch_mse(&plus, x, y) - batch_mse(&minus, x, y)) / (2.0 * h);
            check(g.biases[l][j], numeric);
        }
    }
    worst
}

fn random_problem(seed: u64, act: Activation) -> (Mlp<f64>, Matrix<f64>, Vec<f64>) {
    let mut rng = RngState::new(seed).rng();
    let input = rng.random_range(1..5);
    let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..6)).collect();
    let arch = Architecture::regression(input, &hidden, act).unwrap();
    let mut net: Mlp<f64> = init_network(&arch, RngState::new(seed).substream(1)).unwrap();
    for b in net.biases.iter_mut().flatten() {
        *b = rng.random_range(-0.5..0.5);
    }
    let m = rng.random_range(1..8);
    let x = Matrix::from_fn(m, input, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    (net, x, y)
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20u64 {
        let act = Activation::ALL[seed as usize % 4];
        let (net, x, y) = random_problem(seed, act);
        let err = gradient_error(&net, &x, &y, 1e-5);
        assert!(err < 1e-5, "seed {seed} {act:?}: relative error {err:e}");
    }
}

#[test]
fn batch_gradient_is_mean_of_rows() {
    let (net, x, y) = random_problem(77, Activation::Tanh);
    let x = Matrix::from_fn(3, x.cols(), |i, j| 0.3 * i as f64 - 0.2 * j as f64);
    let y = vec![y[0], -1.0, 0.5];
    let whole = backprop_gradient(&net, &x, &y).unwrap();
    let parts: Vec<_> = (0..3)
        .map(|i| backprop_gradient(&net, &x.select_rows(&[i]), &y[i..=i]).unwrap())
        .collect();
    for l in 0..net.weights.len() {
        for idx in 0..whole.weights[l].as_slice().len() {
            let mean = parts.iter().map(|g| g.weights[l].as_slice()[idx]).sum::<f64>() / 3.0;
            assert!((whole.weights[l].as_slice()[idx] - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn identity_network_is_matrix_product() {
    let arch = Architecture::new(vec![3, 4, 2, 1], vec![Activation::Identity; 3]).unwrap();
    let net: Mlp<f64> = init_network(&arch, RngState::new(5)).unwrap();
    let composed = net.weights[0].matmul(&net.weights[1]).unwrap().matmul(&net.weights[2]).unwrap();
    let x = [0.7, -1.3, 2.1];
    let direct: f64 = (0..3).map(|i| x[i] * composed[(i, 0)]).sum();
    assert!((forward(&net, &x).unwrap().prediction() - direct).abs() < 1e-12);
}

#[test]
fn descent_step_reduces_quadratic_loss() {
    // one weight, one row: L(w) = (w·1 - 3)², L'(w) = 2(w - 3)
    let arch = Architecture::new(vec![1, 1], vec![Activation::Identity]).unwrap();
    let mut net = Mlp::<f64>::zeros(arch);
    let x = Matrix::from_vec(1, 1, vec![1.0]);
    let g = backprop_gradient(&net, &x, &[3.0]).unwrap();
    assert_eq!(g.weights[0].as_slice(), &[-6.0]);
    let before = batch_mse(&net, &x, &[3.0]);
    sgd_step(&mut net, &g, 0.01);
    assert!(batch_mse(&net, &x, &[3.0]) < before);
}

fn linear_data(n: usize, d: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
    let mut rng = RngState::new(seed).rng();
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.7..1.7));
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n)
        .map(|i| 0.5 + (0..d).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    (x, y)
}

#[test]
fn learns_y_equals_two_x() {
    let mut rng = RngState::new(11).rng();
    let x = Matrix::from_fn(1000, 1, |_, _| rng.random_range(-1.7..1.7));
    let y: Vec<f64> = (0..1000).map(|i| 2.0 * x[(i, 0)]).collect();
    let arch = Architecture::new(vec![1, 1], vec![Activation::Identity]).unwrap();
    let net = init_network(&arch, RngState::new(1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        max_epochs: 200,
        patience: 200,
        ..Default::default()
    };
    let (_, report) = train_matrix(&net, &x, &y, &cfg).unwrap();
    assert!(report.final_train_mse < 1e-3, "{}", report.final_train_mse);
}

#[test]
fn linear_network_matches_ols() {
    for seed in 0..3 {
        let (x, y) = linear_data(2000, 4, seed);
        let design = Matrix::from_fn(2000, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let beta = least_squares(&design, &y).unwrap();
        let ols_mse = (0..2000)
            .map(|i| {
                let p: f64 = (0..5).map(|j| design[(i, j)] * beta[j]).sum();
                (p - y[i]) * (p - y[i])
            })
            .sum::<f64>()
            / 2000.0;
        let arch = Architecture::new(vec![4, 1], vec![Activation::Identity]).unwrap();
        let net = init_network(&arch, RngState::new(seed)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 300,
            ..Default::default()
        };
        let (_, report) = train_matrix(&net, &x, &y, &cfg).unwrap();
        assert!(report.final_train_mse <= 1.01 * ols_mse, "{} vs {}", report.final_train_mse, ols_mse);
    }
}

#[test]
fn early_stopping_contract() {
    let (x, y) = linear_data(600, 3, 4);
    let arch = Architecture::regression(3, &[8], Activation::Relu).unwrap();
    let net = init_network(&arch, RngState::new(2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: 300,
        patience: 0,
        ..Default::default()
    };
    let (best, report) = train_matrix(&net, &x, &y, &cfg).unwrap();
    let min = report.validation_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(report.validation_loss[report.best_epoch], min);
    // patience 0: the run ends on the first epoch that fails to improve
    if report.epochs_run < cfg.max_epochs {
        let v = &report.validation_loss;
        let last = v.len() - 1;
        assert!(v[last] >= v[last - 1]);
        assert!(v[..last].windows(2).all(|w| w[1] < w[0]));
        assert_eq!(report.best_epoch, last - 1);
    }

    let (again, report2) = train_matrix(&net, &x, &y, &cfg).unwrap();
    assert_eq!(report, report2);
    assert_eq!(best, again);
}

#[test]
fn divergence_is_reported() {
    let (x, y) = linear_data(300, 3, 8);
    let y: Vec<f64> = y.iter().map(|v| v * 1e6).collect();
    let arch = Architecture::regression(3, &[8], Activation::Identity).unwrap();
    let net = init_network(&arch, RngState::new(2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 10.0,
        batch_size: 8,
        max_epochs: 50,
        ..Default::default()
    };
    assert!(matches!(train_matrix(&net, &x, &y, &cfg), Err(errlab_core::Error::Diverged { .. })));
}

#[test]
fn f32_network_trains() {
    let mut rng = RngState::new(3).rng();
    let x = Matrix::from_fn(500, 2, |_, _| rng.random_range(-1.0f32..1.0));
    let y: Vec<f32> = (0..500).map(|i| x[(i, 0)] - x[(i, 1)]).collect();
    let arch = Architecture::regression(2, &[6], Activation::Tanh).unwrap();
    let net: Mlp<f32> = init_network(&arch, RngState::new(1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: 100,
        ..Default::default()
    };
    let (_, report) = train_matrix(&net, &x, &y, &cfg).unwrap();
    assert!(report.final_train_mse < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_follow_row_order(seed in 0u64..1000, perm_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let (net, x, _) = random_problem(seed, Activation::Sigmoid);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut RngState::new(perm_seed).rng());
        let shuffled = x.select_rows(&order);
        let p = predict_matrix(&net, &shuffled).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(p[k], forward(&net, x.row(i)).unwrap().prediction());
        }
    }
}
