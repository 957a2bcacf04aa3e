//! Executable checks of the incentive properties, computed purely from the
//! per-client trace rows so they can be re-run offline on `clients.csv`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::orchestrator::trace::{ClientRoundRow, RunTrace};
use crate::orchestrator::purity_of;
use crate::scheduler::Provenance;
use crate::stats;
use crate::tokens::Tokens;

pub const MIN_IR_ROUNDS: usize = 30;
pub const IR_TOP_HALF_SHARE: f64 = 0.6;
pub const GR_MIN_SPEARMAN: f64 = 0.5;
pub const PURITY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub name: String,
    pub scope: String,
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub status: VerdictStatus,
}

impl PropertyVerdict {
    fn new(name: &str, scope: String, statistic: Option<f64>, threshold: f64, pass: impl Fn(f64) -> bool) -> Self {
        let status = match statistic {
            Some(s) if s.is_finite() => {
                if pass(s) {
                    VerdictStatus::Pass
                } else {
                    VerdictStatus::Fail
                }
            }
            _ => VerdictStatus::Inconclusive,
        };
        PropertyVerdict {
            name: name.to_string(),
            scope,
            statistic: statistic.filter(|s| s.is_finite()),
            threshold,
            status,
        }
    }

    fn inconclusive(name: &str, scope: String, threshold: f64) -> Self {
        Self::new(name, scope, None, threshold, |_| false)
    }

    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

fn rounds_in(rows: &[ClientRoundRow]) -> usize {
    rows.iter().map(|r| r.round + 1).max().unwrap_or(0)
}

/// Groups participating rows by `(round, tier)`.
fn cohorts(rows: &[ClientRoundRow]) -> BTreeMap<(usize, usize), Vec<&ClientRoundRow>> {
    let mut out: BTreeMap<(usize, usize), Vec<&ClientRoundRow>> = BTreeMap::new();
    for r in rows {
        if let (Some(t), Some(_)) = (r.tier, r.psi) {
            out.entry((r.round, t)).or_default().push(r);
        }
    }
    out
}

/// Providers that rank in the top half of their tier in at least 60% of
/// their rounds must not lose tokens on average. The statistic is the
/// smallest mean net (reward + reimbursement - payment) in that cohort.
pub fn check_individual_rationality(rows: &[ClientRoundRow]) -> PropertyVerdict {
    const NAME: &str = "individual_rationality";
    let rounds = rounds_in(rows);
    if rounds < MIN_IR_ROUNDS {
        return PropertyVerdict::inconclusive(NAME, format!("{rounds} rounds (< {MIN_IR_ROUNDS})"), 0.0);
    }
    let mut top: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for members in cohorts(rows).values() {
        let mut sorted: Vec<&&ClientRoundRow> = members.iter().collect();
        sorted.sort_by(|a, b| b.psi.unwrap().total_cmp(&a.psi.unwrap()).then(a.client.cmp(&b.client)));
        let half = sorted.len() / 2;
        for (pos, r) in sorted.iter().enumerate() {
            let e = top.entry(r.client).or_default();
            e.1 += 1;
            if pos < half {
                e.0 += 1;
            }
        }
    }
    let cohort: Vec<usize> = top
        .iter()
        .filter(|(_, &(hits, total))| total > 0 && hits as f64 >= IR_TOP_HALF_SHARE * total as f64)
        .map(|(&c, _)| c)
        .collect();
    if cohort.is_empty() {
        return PropertyVerdict::inconclusive(NAME, "no consistently top-half providers".into(), 0.0);
    }
    let worst = cohort
        .iter()
        .map(|&c| {
            let nets: Vec<f64> = rows
                .iter()
                .filter(|r| r.client == c && r.tier.is_some())
                .map(|r| r.net().as_f64())
                .collect();
            stats::mean(&nets)
        })
        .fold(f64::INFINITY, f64::min);
    PropertyVerdict::new(
        NAME,
        format!("{} providers over {rounds} rounds", cohort.len()),
        Some(worst),
        0.0,
        |s| s >= 0.0,
    )
}

/// For every client seen in two tiers and every such pair of tiers, pairs
/// the difference in mean similarity with the difference in mean per-round
/// reward; the statistic is their rank correlation. Rounds where the client
/// was placed by the initial tiering are skipped: no bid was involved and
/// the tiers had no identity yet.
pub fn check_group_rationality(rows: &[ClientRoundRow]) -> PropertyVerdict {
    const NAME: &str = "group_rationality";
    // client -> tier -> (similarities, rewards)
    type PerTier = BTreeMap<usize, (Vec<f64>, Vec<f64>)>;
    let mut obs: BTreeMap<usize, PerTier> = BTreeMap::new();
    for r in rows {
        let Some(t) = r.tier else { continue };
        if r.provenance == Some(Provenance::Initial) {
            continue;
        }
        let Some(&sim) = r.upsilon.get(t) else { continue };
        let e = obs.entry(r.client).or_default().entry(t).or_default();
        e.0.push(sim);
        e.1.push(r.reward.as_f64());
    }
    let (mut d_sim, mut d_reward) = (Vec::new(), Vec::new());
    let mut clients = 0;
    for tiers in obs.values().filter(|t| t.len() >= 2) {
        clients += 1;
        let means: Vec<(f64, f64)> = tiers.values().map(|(s, r)| (stats::mean(s), stats::mean(r))).collect();
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                d_sim.push(means[j].0 - means[i].0);
                d_reward.push(means[j].1 - means[i].1);
            }
        }
    }
    let threshold = GR_MIN_SPEARMAN;
    let scope = format!("{clients} multi-tier clients, {} tier pairs", d_sim.len());
    if d_sim.len() < 3 {
        return PropertyVerdict::inconclusive(NAME, scope, threshold);
    }
    PropertyVerdict::new(NAME, scope, Some(stats::spearman(&d_sim, &d_reward)), threshold, |s| s >= threshold)
}

/// Majority-label purity of tier membership over the last `window` rounds.
pub fn check_tier_purity(rows: &[ClientRoundRow], tiers: usize, window: usize) -> PropertyVerdict {
    let rounds = rounds_in(rows);
    let start = rounds.saturating_sub(window);
    let members: Vec<(usize, usize)> = rows
        .iter()
        .filter(|r| r.round >= start)
        .filter_map(|r| r.tier.map(|t| (t, r.true_tier)))
        .collect();
    let stat = if members.is_empty() { None } else { Some(purity_of(&members, tiers)) };
    PropertyVerdict::new(
        "tier_purity",
        format!("rounds {start}..{rounds}"),
        stat,
        PURITY_THRESHOLD,
        |s| s >= PURITY_THRESHOLD,
    )
}

/// The gap between a personalized model's accuracy and the importance-
/// weighted accuracy of its tier models should not grow over the run. The
/// statistic is final-round mean gap minus first-round mean gap.
pub fn check_mixture_consistency(rows: &[ClientRoundRow]) -> PropertyVerdict {
    let rounds = rounds_in(rows);
    if rounds < 2 {
        return PropertyVerdict::inconclusive("mixture_consistency", format!("{rounds} rounds"), 0.0);
    }
    let gap = |round: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.round == round).map(|r| r.mixture_gap).collect();
        stats::mean(&v)
    };
    PropertyVerdict::new(
        "mixture_consistency",
        format!("round 0 vs round {}", rounds - 1),
        Some(gap(rounds - 1) - gap(0)),
        0.0,
        |s| s <= 0.0,
    )
}

pub fn evaluate(rows: &[ClientRoundRow], tiers: usize, _bid: Tokens, window: usize) -> Vec<PropertyVerdict> {
    vec![
        check_individual_rationality(rows),
        check_group_rationality(rows),
        check_tier_purity(rows, tiers, window),
        check_mixture_consistency(rows),
    ]
}

/// Re-evaluates every property from a run directory's `clients.csv`.
pub fn evaluate_dir(dir: &Path, window: usize) -> Result<Vec<PropertyVerdict>> {
    let rows = RunTrace::read_clients(&dir.join("clients.csv"))?;
    let tiers = rows.first().map(|r| r.upsilon.len()).unwrap_or(1).max(1);
    Ok(evaluate(&rows, tiers, Tokens::ZERO, window))
}

pub fn format_table(verdicts: &[PropertyVerdict]) -> String {
    let mut out = format!("{:<24} {:<13} {:>12} {:>10}  scope\n", "property", "status", "statistic", "threshold");
    for v in verdicts {
        let stat = v.statistic.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<24} {:<13} {:>12} {:>10.4}  {}\n",
            v.name, v.status, stat, v.threshold, v.scope
        ));
    }
    out
}
