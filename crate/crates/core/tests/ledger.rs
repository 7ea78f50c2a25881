use dns_core::rl::{train, BackwardCosts, RedqConfig, Selection, TrainConfig};

fn config(n: usize, k: usize) -> TrainConfig {
    TrainConfig {
        env: Default::default(),
        redq: RedqConfig {
            n_critics: n,
            k,
            batch_size: 16,
            hidden: vec![8, 8],
            ..RedqConfig::default()
        },
        selections: vec![],
        seeds: vec![0],
        total_steps: 300,
        warmup_steps: 100,
        cadence: 50,
        eval_episodes: 2,
        output_dir: None,
    }
}

#[test]
fn identical_configs_give_identical_runs() {
    let cfg = config(4, 2);
    for sel in [Selection::Dns, Selection::RandomK, Selection::All] {
        let a = train(&cfg, sel, 3).unwrap();
        let b = train(&cfg, sel, 3).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_return.to_bits(), b.final_return.to_bits());
    }
}

#[test]
fn backward_ratio_equals_cost_formula_exactly() {
    let cfg = config(6, 2);
    let costs = BackwardCosts::for_config(&cfg).unwrap();
    let all = train(&cfg, Selection::All, 1).unwrap();
    assert_eq!(all.update_rounds, 201);
    for sel in [Selection::Dns, Selection::RandomK] {
        let run = train(&cfg, sel, 1).unwrap();
        assert_eq!(run.update_rounds, all.update_rounds);
        let (num, den) = costs.ratio_fraction(2, 6);
        let bwd = run.ledger.total().backward_flops as u128;
        let bwd_all = all.ledger.total().backward_flops as u128;
        assert_eq!(bwd * den as u128, bwd_all * num as u128, "{sel}");
        // critic-only backward scales as k / N
        assert_eq!(
            run.ledger.critic.backward_flops * 6,
            all.ledger.critic.backward_flops * 2
        );
        assert_eq!(
            run.ledger.policy.backward_flops,
            all.ledger.policy.backward_flops
        );
        assert_eq!(
            bwd_all as u64,
            all.update_rounds * (6 * costs.critic + costs.policy)
        );
    }
}

#[test]
fn all_matches_dns_with_full_subset_in_flops() {
    let cfg = config(4, 4);
    let dns = train(&cfg, Selection::Dns, 2).unwrap();
    let all = train(&cfg, Selection::All, 2).unwrap();
    assert_eq!(dns.ledger, all.ledger);
}

#[test]
fn random_k_skips_forward_passes_of_unselected_critics() {
    let cfg = config(6, 3);
    let rnd = train(&cfg, Selection::RandomK, 0).unwrap();
    let dns = train(&cfg, Selection::Dns, 0).unwrap();
    assert!(rnd.ledger.critic.forward_flops < dns.ledger.critic.forward_flops);
    assert_eq!(
        rnd.ledger.critic.backward_flops,
        dns.ledger.critic.backward_flops
    );
}
