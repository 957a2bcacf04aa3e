//! Per-round client selection.
//!
//! Round zero partitions the available clients at random (or follows a
//! pre-training assignment). Afterwards every tier takes its best `N_p`
//! bidders by latest contribution, then `N_r` random picks from whoever is
//! still unassigned.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::PreferenceBids;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// `N_p`, merit picks per tier.
    pub merit_per_tier: usize,
    /// `N_r`, random picks per tier.
    pub random_per_tier: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            merit_per_tier: 20,
            random_per_tier: 2,
        }
    }
}

impl SelectionConfig {
    pub fn per_tier(&self) -> usize {
        self.merit_per_tier + self.random_per_tier
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_tier() == 0 {
            return Err(Error::invalid(
                "selection",
                "merit_per_tier + random_per_tier must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Merit,
    Random,
    Initial,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Merit => "merit",
            Provenance::Random => "random",
            Provenance::Initial => "initial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pick {
    pub client: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rosters: Vec<Vec<Pick>>,
    /// Tiers that had fewer merit candidates than `N_p`.
    pub short_tiers: Vec<usize>,
}

impl SelectionResult {
    pub fn clients(&self, tier: usize) -> Vec<usize> {
        self.rosters[tier].iter().map(|p| p.client).collect()
    }

    pub fn tier_of(&self, client: usize) -> Option<usize> {
        self.rosters.iter().position(|r| r.iter().any(|p| p.client == client))
    }
}

/// Latest contribution of each client in each tier, keyed `(tier, client)`.
pub type ContributionBook = BTreeMap<(usize, usize), f64>;

pub struct SelectionInput<'a> {
    pub round: usize,
    pub tiers: usize,
    /// Clients able to pay this round, any order.
    pub available: &'a [usize],
    /// Latest bids, at most one entry per client. Empty at round zero.
    pub bids: &'a [PreferenceBids],
    pub contributions: &'a ContributionBook,
    /// Optional starting assignment indexed by client id.
    pub initial_assignment: Option<&'a [usize]>,
}

pub fn select_clients(input: &SelectionInput<'_>, config: &SelectionConfig, rng: &mut ChaCha8Rng) -> Result<SelectionResult> {
    if input.available.is_empty() {
        return Err(Error::Empty("available clients"));
    }
    if input.tiers == 0 {
        return Err(Error::invalid("tiers", "must be at least 1"));
    }
    let mut available = input.available.to_vec();
    available.sort_unstable();
    available.dedup();
    let k = input.tiers;
    let cap = config.per_tier();
    let mut rosters: Vec<Vec<Pick>> = vec![Vec::new(); k];

    if let Some(assign) = input.initial_assignment {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &c in &available {
            members[assign[c] % k].push(c);
        }
        for (t, mut m) in members.into_iter().enumerate() {
            if m.len() > cap {
                m.shuffle(rng);
                m.truncate(cap);
                m.sort_unstable();
            }
            rosters[t] = m
                .into_iter()
                .map(|client| Pick {
                    client,
                    provenance: Provenance::Initial,
                })
                .collect();
        }
        return Ok(SelectionResult {
            rosters,
            short_tiers: Vec::new(),
        });
    }

    if input.bids.is_empty() {
        available.shuffle(rng);
        available.truncate(cap * k);
        for (i, client) in available.into_iter().enumerate() {
            rosters[i % k].push(Pick {
                client,
                provenance: Provenance::Initial,
            });
        }
        return Ok(SelectionResult {
            rosters,
            short_tiers: Vec::new(),
        });
    }

    let is_available: std::collections::BTreeSet<usize> = available.iter().copied().collect();
    let mut taken = std::collections::BTreeSet::new();
    let mut short_tiers = Vec::new();
    for (tier, roster) in rosters.iter_mut().enumerate() {
        let mut candidates: Vec<(usize, Option<f64>)> = input
            .bids
            .iter()
            .filter(|b| b.top() == Some(tier) && is_available.contains(&b.client_id))
            .map(|b| (b.client_id, input.contributions.get(&(tier, b.client_id)).copied()))
            .collect();
        candidates.sort_by(|a, b| match (a.1, b.1) {
            (Some(x), Some(y)) => y.total_cmp(&x).then(a.0.cmp(&b.0)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.0.cmp(&b.0),
        });
        candidates.dedup_by_key(|c| c.0);
        if candidates.len() < config.merit_per_tier {
            short_tiers.push(tier);
        }
        for (client, _) in candidates.into_iter().take(config.merit_per_tier) {
            taken.insert(client);
            roster.push(Pick {
                client,
                provenance: Provenance::Merit,
            });
        }
    }
    for roster in rosters.iter_mut() {
        let want = cap - roster.len();
        let mut pool: Vec<usize> = available.iter().copied().filter(|c| !taken.contains(c)).collect();
        let (drawn, _) = pool.partial_shuffle(rng, want);
        for &client in drawn.iter() {
            taken.insert(client);
            roster.push(Pick {
                client,
                provenance: Provenance::Random,
            });
        }
    }
    Ok(SelectionResult { rosters, short_tiers })
}
