use dns_core::nn::{adam_step, Activation, AdamConfig, AdamState, FlopLedger, Mlp};
use dns_core::rl::{
    policy_loss_and_grad, policy_update, Batch, CriticEnsemble, SquashedGaussianPolicy,
};
use dns_core::SeededRng;

mod common;
use common::*;

#[test]
fn backprop_matches_central_differences_on_random_networks() {
    let mut rng = SeededRng::new(2024);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let depth = 1 + rng.below(3);
        let mut sizes = vec![1 + rng.below(4)];
        for _ in 0..depth {
            sizes.push(1 + rng.below(6));
        }
        sizes.push(1 + rng.below(3));
        let act = if case % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let net = Mlp::new(&sizes, act, &mut rng).unwrap();
        let batch = 1 + rng.below(4);
        let x: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.normal()).collect();
        let upstream: Vec<f64> = (0..batch * net.output_size())
            .map(|_| rng.normal())
            .collect();

        let mut ledger = FlopLedger::new();
        let cache = net.forward_batch(&x, batch, &mut ledger).unwrap();
        let (grads, dx) = net.backward(&cache, &upstream, &mut ledger).unwrap();
        let (np, nx) = numeric_gradients(&net, &x, batch, &upstream);
        let err = relative_error(grads.as_slice(), &np).max(relative_error(&dx, &nx));
        assert!(
            err <= 1e-4,
            "case {case} sizes {sizes:?} {act:?}: relative error {err}"
        );
        let dx_only = net.backward_input(&cache, &upstream, &mut ledger).unwrap();
        assert!(relative_error(&dx_only, &dx) < 1e-14);
        worst = worst.max(err);
    }
    assert!(worst <= 1e-4);
}

fn small_setup(
    seed: u64,
    alpha_critics: bool,
) -> (
    SquashedGaussianPolicy,
    CriticEnsemble,
    Vec<f64>,
    Vec<f64>,
    usize,
) {
    let mut rng = SeededRng::new(seed);
    let policy = SquashedGaussianPolicy::new(2, 1, &[8, 8], &mut rng).unwrap();
    let ensemble = if alpha_critics {
        CriticEnsemble::new(3, 2, 1, &[8], &mut rng).unwrap()
    } else {
        let zero = Mlp::zeros(&[3, 4, 1], Activation::Relu).unwrap();
        CriticEnsemble::from_critics(vec![zero.clone(), zero], 2, 1)
    };
    let batch = 5;
    let states: Vec<f64> = (0..batch * 2)
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    let noise = policy.draw_noise(batch, &mut rng);
    (policy, ensemble, states, noise, batch)
}

#[test]
fn policy_gradient_matches_central_differences() {
    for seed in 0..5 {
        let (policy, ensemble, states, noise, batch) = small_setup(seed, true);
        let alpha = 0.3;
        let mut ledger = FlopLedger::new();
        let (_, grads) = policy_loss_and_grad(
            &policy,
            &ensemble,
            &states,
            batch,
            &noise,
            alpha,
            &mut ledger,
        )
        .unwrap();
        let loss_at = |p: &SquashedGaussianPolicy| {
            policy_loss_and_grad(
                p,
                &ensemble,
                &states,
                batch,
                &noise,
                alpha,
                &mut FlopLedger::new(),
            )
            .unwrap()
            .0
        };
        let mut probe = policy.clone();
        let mut numeric = Vec::new();
        for i in 0..policy.net.n_params() {
            let orig = probe.net.params()[i];
            probe.net.params_mut()[i] = orig + H;
            let up = loss_at(&probe);
            probe.net.params_mut()[i] = orig - H;
            let down = loss_at(&probe);
            probe.net.params_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        let err = relative_error(grads.as_slice(), &numeric);
        assert!(err <= 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn entropy_bonus_raises_log_std_against_flat_critics() {
    let (mut policy, ensemble, states, _, batch) = small_setup(9, false);
    // start narrow: the squashed entropy peaks near unit std
    let last = policy.net.n_params() - 1;
    policy.net.params_mut()[last] -= 2.0;
    let before = policy.mean_log_std(&states, batch).unwrap();
    let mut optim = AdamState::for_net(&policy.net);
    let adam = AdamConfig::with_lr(1e-2);
    let mut rng = SeededRng::new(1);
    let b = Batch {
        size: batch,
        states: states.clone(),
        actions: vec![0.0; batch],
        rewards: vec![0.0; batch],
        next_states: states.clone(),
        dones: vec![0.0; batch],
    };
    for _ in 0..50 {
        policy_update(
            &mut policy,
            &mut optim,
            &ensemble,
            &b,
            1.0,
            &adam,
            &mut rng,
            &mut FlopLedger::new(),
        )
        .unwrap();
    }
    let after = policy.mean_log_std(&states, batch).unwrap();
    assert!(after > before + 0.1, "log std {before} -> {after}");
}

#[test]
fn single_critic_overfits_a_fixed_batch() {
    let mut rng = SeededRng::new(5);
    let mut net = Mlp::new(&[3, 32, 32, 1], Activation::Relu, &mut rng).unwrap();
    let batch = 16;
    let x: Vec<f64> = (0..batch * 3)
        .map(|_| rng.uniform_range(-1.0, 1.0))
        .collect();
    let y: Vec<f64> = (0..batch).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut state = AdamState::for_net(&net);
    let cfg = AdamConfig::with_lr(1e-2);
    let mut mse = f64::INFINITY;
    for _ in 0..500 {
        let mut ledger = FlopLedger::new();
        let cache = net.forward_batch(&x, batch, &mut ledger).unwrap();
        let q = cache.output();
        mse = q.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / batch as f64;
        let upstream: Vec<f64> = q
            .iter()
            .zip(&y)
            .map(|(a, b)| 2.0 * (a - b) / batch as f64)
            .collect();
        let (g, _) = net.backward(&cache, &upstream, &mut ledger).unwrap();
        adam_step(&mut net, &g, &mut state, &cfg).unwrap();
    }
    assert!(mse < 1e-3, "final mse {mse}");
}
