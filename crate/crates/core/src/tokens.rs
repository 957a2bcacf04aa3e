//! Token economy: payments into a round pool, quality-based reimbursement
//! and contribution-ranked rewards.
//!
//! Amounts are held as integer milli-tokens so the books balance exactly.
//! Real-valued formulas are evaluated in `f64` and rounded half-to-even.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::TierAccuracyRecord;

pub const MILLI: i64 = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tokens(pub i64);

impl Tokens {
    pub const ZERO: Tokens = Tokens(0);

    pub fn from_tokens(x: f64) -> Self {
        Tokens(round_milli(x * MILLI as f64))
    }

    pub fn milli(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / MILLI as f64
    }
}

impl fmt::Display for Tokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", abs / MILLI as u64, abs % MILLI as u64)
    }
}

impl std::ops::Add for Tokens {
    type Output = Tokens;
    fn add(self, o: Tokens) -> Tokens {
        Tokens(self.0 + o.0)
    }
}

impl std::ops::Sub for Tokens {
    type Output = Tokens;
    fn sub(self, o: Tokens) -> Tokens {
        Tokens(self.0 - o.0)
    }
}

fn round_milli(x: f64) -> i64 {
    x.round_ties_even() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncentiveParams {
    /// Per-round payment `τ_p`.
    pub bid_amount: f64,
    /// Largest fraction of the pool that can be reimbursed.
    pub eta: f64,
    /// Relative accuracy improvement at which nothing is reimbursed.
    pub gamma: f64,
    pub initial_balance: f64,
    /// Fraction of every payment routed to a treasury instead of the pool.
    pub fee_fraction: f64,
}

impl Default for IncentiveParams {
    fn default() -> Self {
        Self {
            bid_amount: 1.0,
            eta: 0.5,
            gamma: 0.2,
            initial_balance: 100.0,
            fee_fraction: 0.0,
        }
    }
}

impl IncentiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bid_amount.is_finite() && self.bid_amount > 0.0) {
            return Err(Error::invalid("incentive.bid_amount", "must be a positive number"));
        }
        if Tokens::from_tokens(self.bid_amount).0 == 0 {
            return Err(Error::invalid("incentive.bid_amount", "rounds to zero milli-tokens"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("incentive.eta", "must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("incentive.gamma", "must lie in (0, 1]"));
        }
        if !(self.initial_balance.is_finite() && self.initial_balance >= 0.0) {
            return Err(Error::invalid("incentive.initial_balance", "must be a nonnegative number"));
        }
        if !(0.0..1.0).contains(&self.fee_fraction) {
            return Err(Error::invalid("incentive.fee_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn bid(&self) -> Tokens {
        Tokens::from_tokens(self.bid_amount)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Mint,
    Payment,
    Fee,
    Reimbursement,
    Reward,
    Refusal,
    CarryOver,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Mint => "mint",
            EntryKind::Payment => "payment",
            EntryKind::Fee => "fee",
            EntryKind::Reimbursement => "reimbursement",
            EntryKind::Reward => "reward",
            EntryKind::Refusal => "refusal",
            EntryKind::CarryOver => "carry-over",
        })
    }
}

/// Amount sign is from the client's point of view for client entries
/// (payments negative) and from the pool's for carry-over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub round: usize,
    pub kind: EntryKind,
    pub client: Option<usize>,
    pub tier: Option<usize>,
    pub amount: Tokens,
}

/// Rounds each client participated in, per tier.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationRecord {
    counts: BTreeMap<(usize, usize), u64>,
}

impl ParticipationRecord {
    pub fn increment(&mut self, tier: usize, client: usize) {
        *self.counts.entry((tier, client)).or_default() += 1;
    }

    pub fn get(&self, tier: usize, client: usize) -> u64 {
        self.counts.get(&(tier, client)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reimbursement {
    pub delta_util: f64,
    pub theta: f64,
}

/// Relative improvement over the best earlier accuracy, and the pool
/// fraction returned to payers. A zero baseline counts as no improvement.
pub fn compute_reimbursement(record: &TierAccuracyRecord, params: &IncentiveParams) -> Reimbursement {
    let delta_util = if record.acc_prev_max > 0.0 {
        ((record.acc - record.acc_prev_max) / record.acc_prev_max).max(0.0)
    } else {
        0.0
    };
    let theta = params.eta * (params.gamma - params.gamma.min(delta_util)) / params.gamma;
    Reimbursement { delta_util, theta }
}

/// `R_t` for a pool share.
pub fn reimbursement_amount(share: Tokens, theta: f64) -> Tokens {
    Tokens(round_milli(share.0 as f64 * theta).clamp(0, share.0.max(0)))
}

/// A provider's entry in the contribution ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedProvider {
    pub client: usize,
    pub psi: f64,
    pub participation: u64,
}

/// Ascending order by contribution, then participation count, then id.
/// Position `p` has rank `α = p + 1`.
pub fn rank_providers(providers: &[RankedProvider]) -> Vec<RankedProvider> {
    let mut v = providers.to_vec();
    v.sort_by(|a, b| {
        a.psi
            .total_cmp(&b.psi)
            .then(a.participation.cmp(&b.participation))
            .then(a.client.cmp(&b.client))
    });
    v
}

/// Splits `amount` in proportion to ranks `1..=n` (normalizer `n(n+1)/2`).
/// Returns payouts in ranking order; rounding residual goes to the top.
pub fn rank_payouts(amount: Tokens, n: usize) -> Vec<Tokens> {
    if n == 0 {
        return Vec::new();
    }
    let beta = (n * (n + 1) / 2) as f64;
    let mut out: Vec<i64> = (1..=n).map(|a| round_milli(a as f64 * amount.0 as f64 / beta)).collect();
    let residual = amount.0 - out.iter().sum::<i64>();
    if out[n - 1] + residual < 0 {
        out = (1..=n).map(|a| (a as i128 * amount.0 as i128 / (n * (n + 1) / 2) as i128) as i64).collect();
        let residual = amount.0 - out.iter().sum::<i64>();
        out[n - 1] += residual;
    } else {
        out[n - 1] += residual;
    }
    out.into_iter().map(Tokens).collect()
}

/// Equal split with the remainder going one milli-token at a time to the
/// lowest ids.
fn equal_split(amount: Tokens, recipients: &[usize]) -> Vec<(usize, Tokens)> {
    let mut ids = recipients.to_vec();
    ids.sort_unstable();
    let n = ids.len() as i64;
    let base = amount.0.div_euclid(n);
    let extra = amount.0.rem_euclid(n);
    ids.into_iter()
        .enumerate()
        .map(|(i, c)| (c, Tokens(base + i64::from((i as i64) < extra))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PaymentOutcome {
    /// Per tier, clients that paid.
    pub paid: Vec<Vec<usize>>,
    pub refused: Vec<(usize, usize)>,
    /// Pool inflow per tier.
    pub collected: Vec<Tokens>,
}

/// Server-side view of one tier at settlement time.
#[derive(Debug, Clone, PartialEq)]
pub struct TierSettlement {
    pub tier: usize,
    pub collected: Tokens,
    pub payers: Vec<usize>,
    pub theta: f64,
    pub providers: Vec<RankedProvider>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TierPayout {
    pub tier: usize,
    pub share: Tokens,
    pub reimbursed: Tokens,
    pub rewarded: Tokens,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SettlementOutcome {
    pub tiers: Vec<TierPayout>,
    pub carried_over: Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub balances: Vec<Tokens>,
    pub pool: Tokens,
    pub treasury: Tokens,
    pub minted: Tokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLedger {
    balances: Vec<Tokens>,
    pool: Tokens,
    treasury: Tokens,
    minted: Tokens,
    journal: Vec<JournalEntry>,
}

impl TokenLedger {
    /// Mints `initial` to each of `clients` accounts.
    pub fn new(clients: usize, initial: Tokens) -> Self {
        let mut ledger = TokenLedger {
            balances: vec![Tokens::ZERO; clients],
            pool: Tokens::ZERO,
            treasury: Tokens::ZERO,
            minted: Tokens::ZERO,
            journal: Vec::new(),
        };
        for c in 0..clients {
            ledger.credit(0, EntryKind::Mint, c, None, initial);
            ledger.minted = ledger.minted + initial;
        }
        ledger
    }

    pub fn balance(&self, client: usize) -> Tokens {
        self.balances[client]
    }

    pub fn balances(&self) -> &[Tokens] {
        &self.balances
    }

    pub fn pool(&self) -> Tokens {
        self.pool
    }

    pub fn treasury(&self) -> Tokens {
        self.treasury
    }

    pub fn minted(&self) -> Tokens {
        self.minted
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn can_afford(&self, client: usize, params: &IncentiveParams) -> bool {
        self.balances[client] >= params.bid()
    }

    /// Journals that `client` could not cover its bid for `tier`.
    pub fn record_refusal(&mut self, round: usize, client: usize, tier: Option<usize>) {
        self.journal.push(JournalEntry {
            round,
            kind: EntryKind::Refusal,
            client: Some(client),
            tier,
            amount: Tokens::ZERO,
        });
    }

    fn credit(&mut self, round: usize, kind: EntryKind, client: usize, tier: Option<usize>, amount: Tokens) {
        self.balances[client] = self.balances[client] + amount;
        self.journal.push(JournalEntry {
            round,
            kind,
            client: Some(client),
            tier,
            amount,
        });
    }

    /// Each rostered client pays the bid once. Clients short of funds are
    /// dropped and journaled as refusals.
    pub fn collect_payments(&mut self, round: usize, rosters: &[Vec<usize>], params: &IncentiveParams) -> PaymentOutcome {
        let bid = params.bid();
        let fee = Tokens(round_milli(bid.0 as f64 * params.fee_fraction).clamp(0, bid.0));
        let mut out = PaymentOutcome {
            paid: vec![Vec::new(); rosters.len()],
            refused: Vec::new(),
            collected: vec![Tokens::ZERO; rosters.len()],
        };
        for (tier, roster) in rosters.iter().enumerate() {
            for &c in roster {
                if self.balances[c] < bid {
                    self.record_refusal(round, c, Some(tier));
                    out.refused.push((tier, c));
                    continue;
                }
                self.credit(round, EntryKind::Payment, c, Some(tier), Tokens(-bid.0));
                if fee.0 > 0 {
                    self.treasury = self.treasury + fee;
                    self.journal.push(JournalEntry {
                        round,
                        kind: EntryKind::Fee,
                        client: Some(c),
                        tier: Some(tier),
                        amount: fee,
                    });
                }
                self.pool = self.pool + (bid - fee);
                out.collected[tier] = out.collected[tier] + (bid - fee);
                out.paid[tier].push(c);
            }
        }
        out
    }

    /// Splits the whole pool across tiers by payment share, reimburses each
    /// tier's payers equally with `θ` of its share, and pays the rest out by
    /// contribution rank. With no payments this round the pool carries over.
    pub fn settle(&mut self, round: usize, tiers: &[TierSettlement]) -> Result<SettlementOutcome> {
        let total: i64 = tiers.iter().map(|t| t.collected.0).sum();
        if total == 0 || tiers.iter().all(|t| t.providers.is_empty()) {
            let carried = self.pool;
            if carried.0 > 0 {
                self.journal.push(JournalEntry {
                    round,
                    kind: EntryKind::CarryOver,
                    client: None,
                    tier: None,
                    amount: carried,
                });
            }
            return Ok(SettlementOutcome {
                tiers: Vec::new(),
                carried_over: carried,
            });
        }
        for t in tiers {
            if t.collected.0 > 0 && (t.payers.is_empty() || t.providers.is_empty()) {
                return Err(Error::invalid("settlement", format!("tier {} collected tokens without participants", t.tier)));
            }
        }

        let pool = self.pool.0;
        let mut shares: Vec<i64> = tiers
            .iter()
            .map(|t| (pool as i128 * t.collected.0 as i128 / total as i128) as i64)
            .collect();
        let largest = (0..tiers.len()).max_by_key(|&i| (tiers[i].collected, std::cmp::Reverse(i))).unwrap_or(0);
        shares[largest] += pool - shares.iter().sum::<i64>();

        let mut outcome = SettlementOutcome::default();
        for (t, &share) in tiers.iter().zip(&shares) {
            if share == 0 {
                continue;
            }
            let share = Tokens(share);
            let reimbursed = reimbursement_amount(share, t.theta);
            for (c, amount) in equal_split(reimbursed, &t.payers) {
                self.credit(round, EntryKind::Reimbursement, c, Some(t.tier), amount);
            }
            let rewarded = share - reimbursed;
            let ranking = rank_providers(&t.providers);
            for (p, amount) in ranking.iter().zip(rank_payouts(rewarded, ranking.len())) {
                self.credit(round, EntryKind::Reward, p.client, Some(t.tier), amount);
            }
            self.pool = self.pool - share;
            outcome.tiers.push(TierPayout {
                tier: t.tier,
                share,
                reimbursed,
                rewarded,
            });
        }
        debug_assert_eq!(self.pool, Tokens::ZERO);
        Ok(outcome)
    }

    /// `Σ balances + pool + treasury = minted`, and no balance negative.
    pub fn check_conservation(&self) -> Result<()> {
        let held: i64 = self.balances.iter().map(|b| b.0).sum::<i64>() + self.pool.0 + self.treasury.0;
        if held != self.minted.0 {
            return Err(Error::Trace(format!(
                "token conservation violated: held {} vs minted {}",
                Tokens(held),
                self.minted
            )));
        }
        if let Some(c) = self.balances.iter().position(|b| b.0 < 0) {
            return Err(Error::Trace(format!("client {c} has negative balance {}", self.balances[c])));
        }
        if self.pool.0 < 0 {
            return Err(Error::Trace(format!("negative pool {}", self.pool)));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            balances: self.balances.clone(),
            pool: self.pool,
            treasury: self.treasury,
            minted: self.minted,
        }
    }

    /// Journal as CSV: `round,type,client,tier,amount`.
    pub fn write_journal_csv<W: Write>(&self, out: W) -> Result<()> {
        write_journal(&self.journal, out)
    }
}

pub const JOURNAL_HEADER: [&str; 5] = ["round", "type", "client", "amount", "tier"];

pub fn write_journal<W: Write>(entries: &[JournalEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(JOURNAL_HEADER)?;
    for e in entries {
        w.write_record([
            e.round.to_string(),
            e.kind.to_string(),
            e.client.map(|c| c.to_string()).unwrap_or_default(),
            e.amount.to_string(),
            e.tier.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> IncentiveParams {
        IncentiveParams::default()
    }

    fn record(acc: f64, prev: f64) -> TierAccuracyRecord {
        TierAccuracyRecord {
            tier: 0,
            round: 1,
            acc,
            acc_prev_max: prev,
            acc_max: acc.max(prev),
        }
    }

    #[test]
    fn display_is_exact_decimal() {
        assert_eq!(Tokens(1500).to_string(), "1.500");
        assert_eq!(Tokens(-1).to_string(), "-0.001");
        assert_eq!(Tokens::from_tokens(0.0025), Tokens(2));
        assert_eq!(Tokens::from_tokens(0.0035), Tokens(4));
    }

    #[test]
    fn five_payers_fill_pool() {
        let mut l = TokenLedger::new(6, Tokens::from_tokens(10.0));
        let out = l.collect_payments(1, &[vec![0, 1, 2, 3, 4]], &params());
        assert_eq!(l.pool(), Tokens::from_tokens(5.0));
        assert_eq!(out.paid[0].len(), 5);
        for c in 0..5 {
            assert_eq!(l.balance(c), Tokens::from_tokens(9.0));
        }
        assert_eq!(l.balance(5), Tokens::from_tokens(10.0));
        l.check_conservation().unwrap();
    }

    #[test]
    fn empty_selection_is_identity() {
        let mut l = TokenLedger::new(3, Tokens::from_tokens(10.0));
        let before = l.snapshot();
        l.collect_payments(1, &[vec![], vec![]], &params());
        assert_eq!(l.snapshot(), before);
    }

    #[test]
    fn short_balance_is_refused() {
        let mut l = TokenLedger::new(2, Tokens::from_tokens(0.5));
        let out = l.collect_payments(1, &[vec![0, 1]], &params());
        assert_eq!(out.refused, vec![(0, 0), (0, 1)]);
        assert_eq!(l.pool(), Tokens::ZERO);
        assert_eq!(l.journal().iter().filter(|e| e.kind == EntryKind::Refusal).count(), 2);
        l.check_conservation().unwrap();
    }

    #[test]
    fn reimbursement_examples() {
        let r = compute_reimbursement(&record(0.55, 0.50), &params());
        assert!((r.delta_util - 0.1).abs() < 1e-12);
        let p = IncentiveParams {
            eta: 1.0,
            gamma: 0.2,
            ..params()
        };
        let r = compute_reimbursement(&record(0.525, 0.5), &p);
        assert!((r.theta - 0.75).abs() < 1e-12);
        let r = compute_reimbursement(&record(0.9, 0.5), &p);
        assert_eq!(r.theta, 0.0);
        assert_eq!(reimbursement_amount(Tokens(5000), r.theta), Tokens::ZERO);
        let r = compute_reimbursement(&record(0.3, 0.0), &p);
        assert_eq!((r.delta_util, r.theta), (0.0, 1.0));
    }

    #[test]
    fn rank_payouts_follow_ranks() {
        let p = rank_payouts(Tokens(10_000), 4);
        assert_eq!(p, vec![Tokens(1000), Tokens(2000), Tokens(3000), Tokens(4000)]);
        assert_eq!(rank_payouts(Tokens(777), 1), vec![Tokens(777)]);
        let odd = rank_payouts(Tokens(1001), 3);
        assert_eq!(odd.iter().map(|t| t.0).sum::<i64>(), 1001);
    }

    #[test]
    fn participation_breaks_psi_ties() {
        let ranked = rank_providers(&[
            RankedProvider {
                client: 0,
                psi: 0.2,
                participation: 5,
            },
            RankedProvider {
                client: 1,
                psi: 0.2,
                participation: 3,
            },
        ]);
        assert_eq!(ranked[1].client, 0);
    }

    #[test]
    fn settle_distributes_whole_pool() {
        let mut l = TokenLedger::new(4, Tokens::from_tokens(10.0));
        let pay = l.collect_payments(1, &[vec![0, 1], vec![2, 3]], &params());
        let prov = |c: usize, psi: f64| RankedProvider {
            client: c,
            psi,
            participation: 1,
        };
        let out = l
            .settle(
                1,
                &[
                    TierSettlement {
                        tier: 0,
                        collected: pay.collected[0],
                        payers: vec![0, 1],
                        theta: 0.5,
                        providers: vec![prov(0, 0.1), prov(1, 0.3)],
                    },
                    TierSettlement {
                        tier: 1,
                        collected: pay.collected[1],
                        payers: vec![2, 3],
                        theta: 0.0,
                        providers: vec![prov(2, 0.5), prov(3, -0.5)],
                    },
                ],
            )
            .unwrap();
        assert_eq!(l.pool(), Tokens::ZERO);
        assert_eq!(out.tiers[0].reimbursed, Tokens(1000));
        // tier 0: reimburse 0.5 each, rewards 1/3 and 2/3 of 1.0
        assert_eq!(l.balance(0), Tokens(9000 + 500 + 333));
        assert_eq!(l.balance(1), Tokens(9000 + 500 + 667));
        assert_eq!(l.balance(2), Tokens(9000 + 1333));
        assert_eq!(l.balance(3), Tokens(9000 + 667));
        l.check_conservation().unwrap();
    }

    #[test]
    fn no_providers_carry_over() {
        let mut l = TokenLedger::new(2, Tokens::from_tokens(5.0));
        l.collect_payments(1, &[vec![0]], &params());
        let out = l.settle(1, &[]).unwrap();
        assert_eq!(out.carried_over, Tokens(1000));
        assert_eq!(l.pool(), Tokens(1000));
        assert!(l.journal().iter().any(|e| e.kind == EntryKind::CarryOver));
        l.check_conservation().unwrap();
    }

    #[test]
    fn fee_goes_to_treasury() {
        let p = IncentiveParams {
            fee_fraction: 0.9,
            ..params()
        };
        let mut l = TokenLedger::new(2, Tokens::from_tokens(5.0));
        l.collect_payments(1, &[vec![0, 1]], &p);
        assert_eq!(l.pool(), Tokens(200));
        assert_eq!(l.treasury(), Tokens(1800));
        l.check_conservation().unwrap();
    }

    #[test]
    fn journal_csv_header() {
        let l = TokenLedger::new(1, Tokens(1000));
        let mut buf = Vec::new();
        l.write_journal_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,type,client,amount,tier\n0,mint,0,1.000,\n");
    }

    proptest! {
        #[test]
        fn theta_nonincreasing_in_delta(a in 0.0f64..1.0, b in 0.0f64..1.0, eta in 0.0f64..=1.0, gamma in 0.01f64..=1.0) {
            let p = IncentiveParams { eta, gamma, ..IncentiveParams::default() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t_lo = compute_reimbursement(&record(0.5 * (1.0 + lo), 0.5), &p).theta;
            let t_hi = compute_reimbursement(&record(0.5 * (1.0 + hi), 0.5), &p).theta;
            prop_assert!(t_hi <= t_lo + 1e-12);
            prop_assert!((0.0..=eta + 1e-12).contains(&t_lo));
        }

        #[test]
        fn payouts_sum_exactly_and_stay_nonnegative(amount in 0i64..10_000_000, n in 1usize..60) {
            let p = rank_payouts(Tokens(amount), n);
            prop_assert_eq!(p.iter().map(|t| t.0).sum::<i64>(), amount);
            prop_assert!(p.iter().all(|t| t.0 >= 0));
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn higher_psi_gets_more(psis in proptest::collection::vec(-1.0f64..1.0, 2..12), amount in 100_000i64..1_000_000) {
            let providers: Vec<RankedProvider> = psis.iter().enumerate()
                .map(|(c, &psi)| RankedProvider { client: c, psi, participation: 0 }).collect();
            let ranked = rank_providers(&providers);
            let pay = rank_payouts(Tokens(amount), ranked.len());
            let by_client: BTreeMap<usize, Tokens> = ranked.iter().map(|p| p.client).zip(pay).collect();
            for i in 0..psis.len() {
                for j in 0..psis.len() {
                    if psis[i] > psis[j] {
                        prop_assert!(by_client[&i] > by_client[&j]);
                    }
                }
            }
        }
    }
}
