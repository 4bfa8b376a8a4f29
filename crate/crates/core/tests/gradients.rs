//! Reverse-mode gradients against central finite differences.

mod common;

use common::{eval_loss, rel_err, toy_dataset, toy_model};
use njode::sde::{MaskMode, SdeModel};
use njode::tensor::{init_weights, net_backward, net_forward, Mode};
use njode::training::batch_gradients;

const H: f64 = 1e-5;

#[test]
fn pure_net_gradients_match_finite_differences() {
    let mut net = init_weights(&[3, 8, 8, 2], 11).unwrap();
    let x = [0.4, -1.2, 0.7];
    let upstream = [0.6, -1.3];
    let objective = |net: &njode::tensor::FeedForwardNet, x: &[f64]| {
        let (y, _) = net_forward(net, x, Mode::Eval).unwrap();
        y.iter().zip(upstream).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, mut tape) = net_forward(&net, &x, Mode::Eval).unwrap();
    let grads = net_backward(&mut tape, &upstream).unwrap();

    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.as_slice()).copied().collect::<Vec<_>>())
        .collect();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    for p in 0..net.params().len() {
        for i in 0..net.params()[p].len() {
            let orig = net.params()[p].as_slice()[i];
            net.params_mut()[p].as_mut_slice()[i] = orig + H;
            let up = objective(&net, &x);
            net.params_mut()[p].as_mut_slice()[i] = orig - H;
            let down = objective(&net, &x);
            net.params_mut()[p].as_mut_slice()[i] = orig;
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * H)));
            k += 1;
        }
    }
    for i in 0..3 {
        let (mut xp, mut xm) = (x, x);
        xp[i] += H;
        xm[i] -= H;
        let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * H);
        worst = worst.max(rel_err(grads.input[i], fd));
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

fn njode_worst_error(masked: bool) -> f64 {
    let (ds, dim) = if masked {
        (toy_dataset(SdeModel::heston(2), 2, 10, MaskMode::Bernoulli { p: 0.6 }, 21), 2)
    } else {
        (toy_dataset(SdeModel::ornstein_uhlenbeck(), 2, 10, MaskMode::Full, 21), 1)
    };
    assert_eq!(ds.dim(), dim);
    let mut model = toy_model(&ds, 4, 8, masked, 5);
    let paths: Vec<_> = ds.paths.iter().collect();
    let analytic = batch_gradients(&model, &paths, &ds.grid, None).unwrap();
    assert!((analytic.loss - eval_loss(&model, &ds)).abs() < 1e-12);

    let mut worst: f64 = 0.0;
    for p in 0..analytic.grads.len() {
        for i in 0..analytic.grads[p].len() {
            let orig = model.params()[p].as_slice()[i];
            model.params_mut()[p].as_mut_slice()[i] = orig + H;
            let up = eval_loss(&model, &ds);
            model.params_mut()[p].as_mut_slice()[i] = orig - H;
            let down = eval_loss(&model, &ds);
            model.params_mut()[p].as_mut_slice()[i] = orig;
            worst = worst.max(rel_err(analytic.grads[p][i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

#[test]
fn njode_loss_gradients_match_finite_differences() {
    let worst = njode_worst_error(false);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

#[test]
fn masked_njode_loss_gradients_match_finite_differences() {
    let worst = njode_worst_error(true);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}
