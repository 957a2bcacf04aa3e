use std::collections::BTreeMap;

use pifl::client::{build_preference_bids, BidPolicy, ImportanceWeights, RewardHistory};
use pifl::orchestrator::{self, build_population, run_baseline, BaselineKind, RunConfig};
use pifl::orchestrator::trace::model_hash;
use pifl::seeds;
use pifl::tokens::{EntryKind, Tokens};

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml(text).unwrap()
}

const MIXTURE: &str = r#"
[run]
rounds = 8
tiers = 2
seed = 3
[population]
kind = "mixture"
num_clients = 12
train_samples = 80
test_samples = 40
personal_samples = 20
[selection]
merit_per_tier = 4
random_per_tier = 1
"#;

#[test]
fn trace_reconciles_with_journal() {
    let out = orchestrator::run(&config(MIXTURE)).unwrap();
    let s = &out.summary;
    assert!(s.ledger.conserved_every_round);
    assert!(s.ledger.min_balance >= Tokens::ZERO);
    assert_eq!(s.ledger.balances_total + s.ledger.pool + s.ledger.treasury, s.ledger.minted);

    // Sum the journal per (round, client) and compare with the client rows.
    let mut flows: BTreeMap<(usize, usize, &str), i64> = BTreeMap::new();
    for e in &out.trace.journal {
        if let Some(c) = e.client {
            let key = match e.kind {
                EntryKind::Payment => "payment",
                EntryKind::Reimbursement => "reimbursement",
                EntryKind::Reward => "reward",
                _ => continue,
            };
            *flows.entry((e.round, c, key)).or_default() += e.amount.0;
        }
    }
    let initial = Tokens::from_tokens(100.0).0;
    let mut balance: BTreeMap<usize, i64> = BTreeMap::new();
    for r in &out.trace.clients {
        let get = |k| flows.get(&(r.round, r.client, k)).copied().unwrap_or(0);
        assert_eq!(r.payment.0, get("payment"), "{r:?}");
        assert_eq!(r.reimbursement.0, get("reimbursement"), "{r:?}");
        assert_eq!(r.reward.0, get("reward"), "{r:?}");
        let b = balance.entry(r.client).or_insert(initial);
        *b += r.payment.0 + r.reimbursement.0 + r.reward.0;
        assert_eq!(r.balance.0, *b, "{r:?}");
    }
    // Per tier, everything paid in comes back out.
    for t in &out.trace.tiers {
        assert!(t.reimbursed.0 + t.rewarded.0 == t.pool_share.0, "{t:?}");
    }
}

#[test]
fn broke_clients_are_refused_not_overdrawn() {
    let cfg = config(&format!("{MIXTURE}\n[incentive]\ninitial_balance = 0.5\n"));
    let out = orchestrator::run(&cfg).unwrap();
    let refusals = out.trace.journal.iter().filter(|e| e.kind == EntryKind::Refusal).count();
    assert!(refusals > 0);
    assert!(out.trace.clients.iter().all(|r| r.balance >= Tokens::ZERO));
    assert!(out.trace.clients.iter().filter(|r| r.round == 0).all(|r| r.refused && r.tier.is_none()));
    assert!(out.summary.ledger.conserved_every_round);
    assert_eq!(out.summary.completed_rounds, 8);
}

#[test]
fn pretraining_recovers_tiers() {
    let cfg = config(
        r#"
        [run]
        rounds = 1
        tiers = 2
        pretraining_rounds = 2
        [population]
        kind = "mixture"
        partition = "10:90"
        num_clients = 50
        "#,
    );
    let population = build_population(&cfg).unwrap();
    let p = orchestrator::run_pretraining(&cfg, &population).unwrap();
    assert_eq!(p.responders, 50);
    assert!(!p.tiering.random_fallback);
    assert!(p.purity >= 0.9, "purity {}", p.purity);
}

#[test]
fn slow_clients_are_tiered_at_random() {
    let cfg = config(
        r#"
        [run]
        rounds = 1
        tiers = 2
        pretraining_rounds = 2
        response_threshold = 0.0
        [population]
        kind = "mixture"
        num_clients = 10
        train_samples = 40
        "#,
    );
    let population = build_population(&cfg).unwrap();
    let p = orchestrator::run_pretraining(&cfg, &population).unwrap();
    assert_eq!(p.responders, 0);
    assert!(p.tiering.random_fallback);
    assert!(p.assignment.iter().all(|&t| t < 2));
}

#[test]
fn one_tier_selecting_everyone_is_global_fedavg() {
    let cfg = config(
        r#"
        [run]
        rounds = 5
        tiers = 1
        [population]
        kind = "mixture"
        num_clients = 10
        train_samples = 60
        [selection]
        merit_per_tier = 10
        random_per_tier = 0
        "#,
    );
    let out = orchestrator::run(&cfg).unwrap();
    assert!(out.trace.tiers.iter().all(|t| t.members == 10));
    let global = run_baseline(&cfg, &out.population, BaselineKind::GlobalFedavg).unwrap();
    assert_eq!(out.tier_models[0], global.final_models[0]);
    assert_eq!(model_hash(&out.tier_models[0]), model_hash(&global.final_models[0]));
}

#[test]
fn homogeneous_population_favours_federation() {
    let cfg = config(
        r#"
        [run]
        rounds = 10
        [population]
        kind = "mixture"
        partition = "iid"
        num_clients = 20
        train_samples = 30
        "#,
    );
    let population = build_population(&cfg).unwrap();
    let local = run_baseline(&cfg, &population, BaselineKind::LocalOnly).unwrap();
    let global = run_baseline(&cfg, &population, BaselineKind::GlobalFedavg).unwrap();
    assert!(
        global.mean_accuracy >= local.mean_accuracy,
        "global {} local {}",
        global.mean_accuracy,
        local.mean_accuracy
    );
}

#[test]
fn bids_fall_back_to_best_tier() {
    let w = ImportanceWeights {
        weights: vec![0.2, 0.3],
        correct: vec![2, 3],
        total: 10,
    };
    let policy = BidPolicy {
        threshold: Some(0.5),
        ..BidPolicy::default()
    };
    let bids = build_preference_bids(0, &w, &policy, &RewardHistory::default(), 1.0, &mut seeds::rng(0));
    assert_eq!(bids.tiers, vec![1]);
}

#[test]
fn gaussian_population_runs() {
    let cfg = config(
        r#"
        [run]
        rounds = 3
        [population]
        kind = "gaussian"
        m1 = 4
        m2 = 4
        beta2 = 5.0
        "#,
    );
    let out = orchestrator::run(&cfg).unwrap();
    assert_eq!(out.summary.completed_rounds, 3);
    assert_eq!(out.summary.clients, 8);
}
