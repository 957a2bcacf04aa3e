//! The simulation loop.
//!
//! Each round: select clients, collect payments, train locally on the tier
//! model, aggregate, profile (tier accuracy and contributions), settle
//! reimbursements and rewards, then let every client weigh the new tier
//! models, personalize and bid for the next round.
//!
//! Rounds are barriers. Client training and client-side evaluation run in
//! parallel; results are reduced in ascending client id so the outcome does
//! not depend on the number of threads.

pub mod config;
pub mod trace;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{
    build_personalized_model, build_preference_bids, compute_importance_weights, ImportanceWeights,
    PersonalizedModel, PreferenceBids, RewardHistory,
};
use crate::error::{Error, Result};
use crate::model::{self, LabeledDataset, ModelSpec, ParamVector, TrainingParams};
use crate::profiler::{
    self, estimate_shapley, AccuracyTracker, ClientUpdate, F1Profile, ShapleyInput, TieringOutcome,
};
use crate::properties::{self, PropertyVerdict};
use crate::scheduler::{select_clients, ContributionBook, Provenance, SelectionInput};
use crate::seeds;
use crate::stats;
use crate::synth::{self, complement_mixture, Population};
use crate::tokens::{
    compute_reimbursement, EntryKind, ParticipationRecord, RankedProvider, TierSettlement, TokenLedger, Tokens,
};

pub use config::{BaselineKind, EvalSource, PopulationConfig, RunConfig};
pub use trace::{ClientRoundRow, RunTrace, SelectionRow, ShapleyRow, TierRoundRow};

pub fn build_population(config: &RunConfig) -> Result<Population> {
    match &config.population {
        PopulationConfig::Mixture(m) => synth::generate_mixture_population(m),
        PopulationConfig::Gaussian(g) => synth::generate_gaussian_population(g),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainingOutcome {
    pub assignment: Vec<usize>,
    pub profiles: Vec<F1Profile>,
    pub tiering: TieringOutcome,
    pub responders: usize,
    /// Majority-label purity of the assignment against ground truth.
    pub purity: f64,
}

/// Local training from scratch for the pre-training rounds, F1 profiling on
/// a server IID split, and clustering of the clients that replied in time.
pub fn run_pretraining(config: &RunConfig, population: &Population) -> Result<PretrainingOutcome> {
    let rounds = config.run.pretraining_rounds;
    if rounds == 0 {
        return Err(Error::invalid("run.pretraining_rounds", "pre-training needs at least one round"));
    }
    let spec = config.model_spec();
    let training = config.model.training();
    let seed = config.run.seed;
    let s = population.num_distributions();
    let iid = population.sample(
        &vec![1.0 / s as f64; s],
        config.run.holdout_samples,
        &mut seeds::stream_rng(seed, seeds::HOLDOUT, &[u64::MAX]),
    )?;
    let latency = Exp::new(1.0 / config.run.mean_latency).map_err(|e| Error::Config(e.to_string()))?;
    let threshold = config.run.response_threshold.unwrap_or(f64::INFINITY);

    let profiles: Vec<F1Profile> = population
        .clients
        .par_iter()
        .map(|c| {
            let mut params = spec.init_params();
            for r in 0..rounds {
                let s = seeds::derive(seed, seeds::PRETRAIN, &[r as u64, c.client_id as u64]);
                params = model::train_local(&spec, &params, &c.train, &training, s)?;
            }
            let mut lat = seeds::stream_rng(seed, seeds::LATENCY, &[c.client_id as u64]);
            let responded = (0..rounds).all(|_| lat.sample(latency) <= threshold);
            profiler::f1_profile(c.client_id, &spec, &params, &iid, responded)
        })
        .collect::<Result<_>>()?;
    let tiering = profiler::pretraining_tiering(&profiles, config.run.tiers, seeds::derive(seed, seeds::KMEANS, &[]))?;
    let truth = population.ground_truth();
    let purity = purity_of(&tiering.assignment.iter().copied().zip(truth).collect::<Vec<_>>(), config.run.tiers);
    Ok(PretrainingOutcome {
        assignment: tiering.assignment.clone(),
        responders: profiles.iter().filter(|p| p.responded).count(),
        profiles,
        tiering,
        purity,
    })
}

/// Mean over nonempty tiers of the majority ground-truth share, given
/// `(tier, truth)` membership observations.
pub fn purity_of(members: &[(usize, usize)], tiers: usize) -> f64 {
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); tiers];
    for &(t, g) in members {
        *counts[t].entry(g).or_default() += 1;
    }
    let shares: Vec<f64> = counts
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| *c.values().max().unwrap_or(&0) as f64 / c.values().sum::<usize>() as f64)
        .collect();
    stats::mean(&shares)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub final_models: Vec<ParamVector>,
}

/// Reference points: every client training alone, or one FedAvg model over
/// all clients every round. Training seeds match the tiered run so a single
/// tier that selects everyone reproduces the global model exactly.
pub fn run_baseline(config: &RunConfig, population: &Population, kind: BaselineKind) -> Result<BaselineResult> {
    let spec = config.model_spec();
    let training = config.model.training();
    let seed = config.run.seed;
    let clients = &population.clients;
    let (accuracies, final_models) = match kind {
        BaselineKind::LocalOnly => {
            let models: Vec<ParamVector> = clients
                .par_iter()
                .map(|c| {
                    let mut p = spec.init_params();
                    for r in 0..config.run.rounds {
                        p = model::train_local(&spec, &p, &c.train, &training, train_seed(seed, r, c.client_id))?;
                    }
                    Ok(p)
                })
                .collect::<Result<_>>()?;
            let acc = clients
                .iter()
                .zip(&models)
                .map(|(c, m)| model::accuracy(&spec, m, &c.test))
                .collect::<Result<Vec<_>>>()?;
            (acc, models)
        }
        BaselineKind::GlobalFedavg => {
            let mut global = spec.init_params();
            let ids: Vec<usize> = (0..clients.len()).collect();
            for r in 0..config.run.rounds {
                global = fedavg_round(&spec, &training, seed, r, &global, &ids, population, config.profiler.variant)?.0;
            }
            let acc = clients
                .iter()
                .map(|c| model::accuracy(&spec, &global, &c.test))
                .collect::<Result<Vec<_>>>()?;
            (acc, vec![global])
        }
    };
    Ok(BaselineResult {
        kind,
        mean_accuracy: stats::mean(&accuracies),
        accuracies,
        final_models,
    })
}

fn train_seed(root: u64, round: usize, client: usize) -> u64 {
    seeds::derive(root, seeds::TRAIN, &[round as u64, client as u64])
}

/// Trains `members` (ascending ids) from `start` and aggregates them with
/// sample-size weights.
#[allow(clippy::too_many_arguments)]
fn fedavg_round(
    spec: &ModelSpec,
    training: &TrainingParams,
    seed: u64,
    round: usize,
    start: &ParamVector,
    members: &[usize],
    population: &Population,
    variant: profiler::ShapleyVariant,
) -> Result<(ParamVector, Vec<ClientUpdate>)> {
    let trained: Vec<ParamVector> = members
        .par_iter()
        .map(|&c| model::train_local(spec, start, &population.clients[c].train, training, train_seed(seed, round, c)))
        .collect::<Result<_>>()?;
    let total: f64 = members.iter().map(|&c| population.clients[c].train.len() as f64).sum();
    let updates: Vec<ClientUpdate> = members
        .iter()
        .zip(trained)
        .map(|(&c, params)| ClientUpdate {
            client_id: c,
            params,
            weight: population.clients[c].train.len() as f64 / total,
        })
        .collect();
    let aggregate = profiler::aggregate(&updates, variant)?;
    Ok((aggregate, updates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_personalized_accuracy: f64,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub round_count: usize,
    pub completed_rounds: usize,
    pub error: Option<String>,
    pub clients: usize,
    pub tiers: usize,
    pub seed: u64,
    pub final_mean_personalized_accuracy: f64,
    /// Majority-label purity over the final summary window.
    pub purity: f64,
    /// Final tier model accuracy on each source distribution's holdout.
    pub tier_dominance: Vec<Vec<f64>>,
    pub tier_model_hashes: Vec<String>,
    pub by_round: Vec<RoundSummary>,
    pub ledger: LedgerSummary,
    pub pretraining: Option<PretrainingSummary>,
    pub baselines: BTreeMap<String, f64>,
    pub properties: Vec<PropertyVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub minted: Tokens,
    pub pool: Tokens,
    pub treasury: Tokens,
    pub balances_total: Tokens,
    pub min_balance: Tokens,
    pub conserved_every_round: bool,
    pub journal_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainingSummary {
    pub responders: usize,
    pub purity: f64,
    pub selected_classes: Vec<usize>,
    pub random_fallback: bool,
}

pub struct RunOutput {
    pub trace: RunTrace,
    pub summary: Summary,
    pub tier_models: Vec<ParamVector>,
    pub ledger: TokenLedger,
    pub population: Population,
    pub baselines: Vec<BaselineResult>,
    pub final_accuracies: Vec<f64>,
}

impl RunOutput {
    /// Writes the full trace, `summary.json` and `personalized_cdf.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.trace.write_dir(dir)?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        std::fs::write(dir.join("summary.json"), json)?;
        write_cdf(&dir.join("personalized_cdf.csv"), &self.final_accuracies)?;
        if !self.baselines.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("baselines.csv"))?;
            w.write_record(["baseline", "client", "accuracy"])?;
            for b in &self.baselines {
                for (c, a) in b.accuracies.iter().enumerate() {
                    w.write_record([b.kind.to_string(), c.to_string(), a.to_string()])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn write_cdf(path: &Path, accuracies: &[f64]) -> Result<()> {
    let mut order: Vec<usize> = (0..accuracies.len()).collect();
    order.sort_by(|&a, &b| accuracies[a].total_cmp(&accuracies[b]).then(a.cmp(&b)));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trace::CDF_HEADER)?;
    let n = order.len() as f64;
    for (rank, &c) in order.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            c.to_string(),
            accuracies[c].to_string(),
            ((rank + 1) as f64 / n).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct ClientView {
    train_weights: ImportanceWeights,
    personalized: PersonalizedModel,
    accuracy: f64,
    gap: f64,
}

fn client_view(
    spec: &ModelSpec,
    data: &synth::ClientDataset,
    tier_models: &[ParamVector],
    threshold: f64,
) -> Result<ClientView> {
    let train_weights = compute_importance_weights(&data.train, tier_models, spec)?;
    let goal_weights = compute_importance_weights(&data.personal, tier_models, spec)?;
    let personalized = match build_personalized_model(&goal_weights, tier_models, threshold) {
        Ok(p) => p,
        Err(Error::NoInformativeTier) => {
            let k = tier_models.len();
            let mixing = vec![1.0 / k as f64; k];
            PersonalizedModel {
                params: model::weighted_sum(tier_models.iter().zip(mixing.iter().copied()))?,
                mixing,
            }
        }
        Err(e) => return Err(e),
    };
    let accuracy = model::accuracy(spec, &personalized.params, &data.test)?;
    let own = model::accuracy(spec, &personalized.params, &data.personal)?;
    let mixed: f64 = personalized
        .mixing
        .iter()
        .zip(&goal_weights.weights)
        .map(|(w, a)| w * a)
        .sum();
    Ok(ClientView {
        train_weights,
        personalized,
        accuracy,
        gap: (own - mixed).abs(),
    })
}

/// Runs the configured simulation. Setup problems are returned as errors;
/// a failure inside a round stops the loop and is reported in the summary
/// alongside the trace collected so far.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    with_pool(config.run.threads, || run_inner(config))?
}

fn run_inner(config: &RunConfig) -> Result<RunOutput> {
    let population = build_population(config)?;
    let pretraining = if config.run.pretraining_rounds > 0 {
        Some(run_pretraining(config, &population)?)
    } else {
        None
    };
    let mut engine = Engine::new(config, population)?;
    let mut error = None;
    for round in 0..config.run.rounds {
        let initial = if round == 0 { pretraining.as_ref().map(|p| p.assignment.as_slice()) } else { None };
        if let Err(e) = engine.round(round, initial) {
            error = Some(format!("round {round}: {e}"));
            break;
        }
        engine.completed += 1;
    }
    let baselines = config
        .run
        .baselines
        .iter()
        .map(|&k| run_baseline(config, &engine.population, k))
        .collect::<Result<Vec<_>>>()?;
    engine.finish(pretraining, baselines, error)
}

struct Engine<'a> {
    config: &'a RunConfig,
    population: Population,
    spec: ModelSpec,
    training: TrainingParams,
    tier_models: Vec<ParamVector>,
    ledger: TokenLedger,
    participation: ParticipationRecord,
    tracker: AccuracyTracker,
    book: ContributionBook,
    histories: Vec<RewardHistory>,
    bids: Vec<PreferenceBids>,
    trace: RunTrace,
    conserved: bool,
    completed: usize,
    last_accuracies: Vec<f64>,
    by_round: Vec<RoundSummary>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a RunConfig, population: Population) -> Result<Self> {
        let spec = config.model_spec();
        let k = config.run.tiers;
        let n = population.clients.len();
        Ok(Engine {
            config,
            spec,
            training: config.model.training(),
            tier_models: vec![spec.init_params(); k],
            ledger: TokenLedger::new(n, Tokens::from_tokens(config.incentive.initial_balance)),
            participation: ParticipationRecord::default(),
            tracker: AccuracyTracker::new(k),
            book: ContributionBook::new(),
            histories: vec![RewardHistory::default(); n],
            bids: Vec::new(),
            trace: RunTrace::default(),
            conserved: true,
            completed: 0,
            last_accuracies: vec![f64::NAN; n],
            by_round: Vec::new(),
            population,
        })
    }

    fn round(&mut self, round: usize, initial: Option<&[usize]>) -> Result<()> {
        let cfg = self.config;
        let seed = cfg.run.seed;
        let k = cfg.run.tiers;
        let n = self.population.clients.len();
        let inc = &cfg.incentive;
        let journal_start = self.ledger.journal().len();

        // Clients that cannot cover a bid are dropped before selection.
        let mut available = Vec::with_capacity(n);
        for c in 0..n {
            if self.ledger.can_afford(c, inc) {
                available.push(c);
            } else {
                let tier = self.bids.get(c).and_then(|b| b.tiers.first().copied());
                self.ledger.record_refusal(round, c, tier);
            }
        }
        let selection = if available.is_empty() {
            crate::scheduler::SelectionResult {
                rosters: vec![Vec::new(); k],
                short_tiers: Vec::new(),
            }
        } else {
            let input = SelectionInput {
                round,
                tiers: k,
                available: &available,
                bids: &self.bids,
                contributions: &self.book,
                initial_assignment: initial,
            };
            select_clients(&input, &cfg.selection, &mut seeds::stream_rng(seed, seeds::SCHEDULER, &[round as u64]))?
        };
        let rosters: Vec<Vec<usize>> = (0..k).map(|t| selection.clients(t)).collect();
        let payments = self.ledger.collect_payments(round, &rosters, inc);
        for (t, paid) in payments.paid.iter().enumerate() {
            for &c in paid {
                self.participation.increment(t, c);
            }
        }
        for (t, roster) in selection.rosters.iter().enumerate() {
            for p in roster {
                self.trace.selections.push(SelectionRow {
                    round,
                    tier: t,
                    client: p.client,
                    provenance: p.provenance,
                });
            }
        }

        let mut settlements = Vec::new();
        let mut tier_rows = Vec::new();
        let mut psi_of: BTreeMap<usize, f64> = BTreeMap::new();
        for t in 0..k {
            let mut members = payments.paid[t].clone();
            members.sort_unstable();
            if members.is_empty() {
                tier_rows.push(TierRoundRow {
                    round,
                    tier: t,
                    members: 0,
                    model_hash: trace::model_hash(&self.tier_models[t]),
                    acc: None,
                    acc_prev_max: None,
                    acc_max: self.tracker.running_max(t),
                    delta_util: None,
                    theta: None,
                    pool_share: Tokens::ZERO,
                    reimbursed: Tokens::ZERO,
                    rewarded: Tokens::ZERO,
                    eval_set_id: None,
                });
                continue;
            }
            let (aggregate, updates) = fedavg_round(
                &self.spec,
                &self.training,
                seed,
                round,
                &self.tier_models[t],
                &members,
                &self.population,
                cfg.profiler.variant,
            )?;
            self.tier_models[t] = aggregate;
            let model = &self.tier_models[t];

            let accs = members
                .iter()
                .map(|&c| model::accuracy(&self.spec, model, &self.population.clients[c].train))
                .collect::<Result<Vec<_>>>()?;
            let record = self.tracker.record(t, round, &accs).ok_or(Error::Empty("tier accuracies"))?;
            let reimb = compute_reimbursement(&record, inc);

            let eval_set_id = seeds::derive(seed, seeds::EVAL, &[round as u64, t as u64]);
            // Random fills explore; the tier's target is what its bidders declared.
            let mut anchors: Vec<usize> = selection.rosters[t]
                .iter()
                .filter(|p| p.provenance == Provenance::Merit && members.binary_search(&p.client).is_ok())
                .map(|p| p.client)
                .collect();
            if anchors.is_empty() {
                anchors = members.clone();
            }
            let eval = self.eval_set(&anchors, eval_set_id)?;
            let report = estimate_shapley(
                model,
                &updates,
                &ShapleyInput {
                    round,
                    tier: t,
                    eval_set_id,
                    spec: &self.spec,
                    eval: &eval,
                },
                cfg.profiler.variant,
            )?;
            for e in &report.entries {
                self.book.insert((t, e.client_id), e.psi);
                psi_of.insert(e.client_id, e.psi);
                self.trace.shapley.push(ShapleyRow {
                    round,
                    tier: t,
                    client: e.client_id,
                    psi: e.psi,
                    variant: report.variant.to_string(),
                });
            }
            settlements.push(TierSettlement {
                tier: t,
                collected: payments.collected[t],
                payers: members.clone(),
                theta: reimb.theta,
                providers: report
                    .entries
                    .iter()
                    .map(|e| RankedProvider {
                        client: e.client_id,
                        psi: e.psi,
                        participation: self.participation.get(t, e.client_id),
                    })
                    .collect(),
            });
            tier_rows.push(TierRoundRow {
                round,
                tier: t,
                members: members.len(),
                model_hash: trace::model_hash(model),
                acc: Some(record.acc),
                acc_prev_max: Some(record.acc_prev_max),
                acc_max: Some(record.acc_max),
                delta_util: Some(reimb.delta_util),
                theta: Some(reimb.theta),
                pool_share: Tokens::ZERO,
                reimbursed: Tokens::ZERO,
                rewarded: Tokens::ZERO,
                eval_set_id: Some(eval_set_id),
            });
        }

        let outcome = self.ledger.settle(round, &settlements)?;
        for p in &outcome.tiers {
            let row = &mut tier_rows[p.tier];
            row.pool_share = p.share;
            row.reimbursed = p.reimbursed;
            row.rewarded = p.rewarded;
        }
        if self.ledger.check_conservation().is_err() {
            self.conserved = false;
        }
        self.ledger.check_conservation()?;
        self.trace.tiers.extend(tier_rows);

        // Per-client token movements this round, straight from the journal.
        let mut moves: BTreeMap<usize, [Tokens; 3]> = BTreeMap::new();
        let mut refused = vec![false; n];
        for e in &self.ledger.journal()[journal_start..] {
            let Some(c) = e.client else { continue };
            let slot = moves.entry(c).or_insert([Tokens::ZERO; 3]);
            match e.kind {
                EntryKind::Payment => slot[0] = slot[0] + e.amount,
                EntryKind::Reimbursement => slot[1] = slot[1] + e.amount,
                EntryKind::Reward => slot[2] = slot[2] + e.amount,
                EntryKind::Refusal => refused[c] = true,
                _ => {}
            }
        }
        let tier_of: BTreeMap<usize, usize> = payments
            .paid
            .iter()
            .enumerate()
            .flat_map(|(t, m)| m.iter().map(move |&c| (c, t)))
            .collect();
        for (&c, &t) in &tier_of {
            let [pay, reimb, reward] = moves[&c];
            self.histories[c].record(t, (pay + reimb + reward).as_f64());
        }

        let threshold = cfg.bids.threshold_for(k);
        let views: Vec<ClientView> = self
            .population
            .clients
            .par_iter()
            .map(|d| client_view(&self.spec, d, &self.tier_models, threshold))
            .collect::<Result<_>>()?;
        self.bids = (0..n)
            .map(|c| {
                build_preference_bids(
                    c,
                    &views[c].train_weights,
                    &cfg.bids,
                    &self.histories[c],
                    inc.bid_amount,
                    &mut seeds::stream_rng(seed, seeds::BIDS, &[round as u64, c as u64]),
                )
            })
            .collect();

        let provenance: BTreeMap<usize, _> = selection
            .rosters
            .iter()
            .flat_map(|r| r.iter().map(|p| (p.client, p.provenance)))
            .collect();
        for (c, view) in views.iter().enumerate() {
            let [payment, reimbursement, reward] = moves.get(&c).copied().unwrap_or([Tokens::ZERO; 3]);
            self.trace.clients.push(ClientRoundRow {
                round,
                client: c,
                true_tier: self.population.clients[c].ground_truth_tier,
                tier: tier_of.get(&c).copied(),
                provenance: tier_of.get(&c).and(provenance.get(&c).copied()),
                next_bids: self.bids[c].tiers.clone(),
                upsilon: view.train_weights.weights.clone(),
                psi: psi_of.get(&c).copied(),
                payment,
                reimbursement,
                reward,
                balance: self.ledger.balance(c),
                personalized_acc: view.accuracy,
                mixing: view.personalized.mixing.clone(),
                mixture_gap: view.gap,
                refused: refused[c],
            });
            self.last_accuracies[c] = view.accuracy;
        }
        let members: Vec<(usize, usize)> = tier_of
            .iter()
            .map(|(&c, &t)| (t, self.population.clients[c].ground_truth_tier))
            .collect();
        self.by_round.push(RoundSummary {
            round,
            mean_personalized_accuracy: stats::mean(&self.last_accuracies),
            purity: purity_of(&members, k),
        });
        Ok(())
    }

    /// Server-held evaluation set drawn from the given clients' declared mixtures.
    fn eval_set(&self, members: &[usize], id: u64) -> Result<LabeledDataset> {
        let s = self.population.num_distributions();
        let mut mixture = vec![0.0; s];
        for &c in members {
            for (m, v) in mixture.iter_mut().zip(&self.population.clients[c].true_mixture) {
                *m += v / members.len() as f64;
            }
        }
        if self.config.profiler.eval_source == EvalSource::Inverted {
            mixture = complement_mixture(&mixture);
        }
        self.population
            .sample(&mixture, self.config.profiler.eval_samples, &mut seeds::rng(id))
    }

    fn finish(
        self,
        pretraining: Option<PretrainingOutcome>,
        baselines: Vec<BaselineResult>,
        error: Option<String>,
    ) -> Result<RunOutput> {
        let cfg = self.config;
        let k = cfg.run.tiers;
        let seed = cfg.run.seed;
        let s = self.population.num_distributions();
        let holdouts: Vec<LabeledDataset> = (0..s)
            .map(|d| {
                self.population.sample_distribution(
                    d,
                    cfg.run.holdout_samples,
                    &mut seeds::stream_rng(seed, seeds::HOLDOUT, &[d as u64]),
                )
            })
            .collect::<Result<_>>()?;
        let tier_dominance = self
            .tier_models
            .iter()
            .map(|m| holdouts.iter().map(|h| model::accuracy(&self.spec, m, h)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;

        let mut trace = self.trace;
        trace.journal = self.ledger.journal().to_vec();
        let window_start = self.completed.saturating_sub(cfg.run.summary_window);
        let members: Vec<(usize, usize)> = trace
            .clients
            .iter()
            .filter(|r| r.round >= window_start)
            .filter_map(|r| r.tier.map(|t| (t, r.true_tier)))
            .collect();
        let purity = purity_of(&members, k);
        let balances = self.ledger.balances();
        let ledger = LedgerSummary {
            minted: self.ledger.minted(),
            pool: self.ledger.pool(),
            treasury: self.ledger.treasury(),
            balances_total: Tokens(balances.iter().map(|b| b.0).sum()),
            min_balance: balances.iter().copied().min().unwrap_or(Tokens::ZERO),
            conserved_every_round: self.conserved,
            journal_entries: trace.journal.len(),
        };
        let properties = properties::evaluate(&trace.clients, k, cfg.incentive.bid(), cfg.run.summary_window);
        let summary = Summary {
            round_count: cfg.run.rounds,
            completed_rounds: self.completed,
            error,
            clients: self.population.clients.len(),
            tiers: k,
            seed,
            final_mean_personalized_accuracy: stats::mean(&self.last_accuracies),
            purity,
            tier_dominance,
            tier_model_hashes: self.tier_models.iter().map(trace::model_hash).collect(),
            by_round: self.by_round,
            ledger,
            pretraining: pretraining.as_ref().map(|p| PretrainingSummary {
                responders: p.responders,
                purity: p.purity,
                selected_classes: p.tiering.selected_classes.clone(),
                random_fallback: p.tiering.random_fallback,
            }),
            baselines: baselines.iter().map(|b| (b.kind.to_string(), b.mean_accuracy)).collect(),
            properties,
        };
        Ok(RunOutput {
            trace,
            summary,
            tier_models: self.tier_models,
            ledger: self.ledger,
            population: self.population,
            baselines,
            final_accuracies: self.last_accuracies,
        })
    }
}
