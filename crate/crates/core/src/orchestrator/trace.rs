//! Run trace rows and their CSV encoding.
//!
//! Floats are written in Rust's shortest round-trip form, lists are joined
//! with `;`, and absent values are empty cells. Column order is stable.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::scheduler::Provenance;
use crate::tokens::{self, JournalEntry, Tokens, MILLI};

pub const ROUNDS_HEADER: [&str; 13] = [
    "round",
    "tier",
    "members",
    "model_hash",
    "acc",
    "acc_prev_max",
    "acc_max",
    "delta_util",
    "theta",
    "pool_share",
    "reimbursed",
    "rewarded",
    "eval_set_id",
];

pub const CLIENTS_HEADER: [&str; 16] = [
    "round",
    "client",
    "true_tier",
    "tier",
    "provenance",
    "next_bids",
    "upsilon",
    "psi",
    "payment",
    "reimbursement",
    "reward",
    "balance",
    "personalized_acc",
    "mixing",
    "mixture_gap",
    "refused",
];

pub const SELECTIONS_HEADER: [&str; 4] = ["round", "tier", "client", "provenance"];
pub const SHAPLEY_HEADER: [&str; 5] = ["round", "tier", "client", "psi", "variant"];
pub const CDF_HEADER: [&str; 4] = ["rank", "client", "accuracy", "cdf"];

/// Short content hash of a parameter vector.
pub fn model_hash(params: &ParamVector) -> String {
    let mut h = Sha256::new();
    for v in params.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRoundRow {
    pub round: usize,
    pub tier: usize,
    pub members: usize,
    pub model_hash: String,
    pub acc: Option<f64>,
    pub acc_prev_max: Option<f64>,
    pub acc_max: Option<f64>,
    pub delta_util: Option<f64>,
    pub theta: Option<f64>,
    pub pool_share: Tokens,
    pub reimbursed: Tokens,
    pub rewarded: Tokens,
    pub eval_set_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRow {
    pub round: usize,
    pub client: usize,
    pub true_tier: usize,
    pub tier: Option<usize>,
    pub provenance: Option<Provenance>,
    /// Bids submitted at the end of this round for the next one.
    pub next_bids: Vec<usize>,
    /// Importance weights against this round's final tier models.
    pub upsilon: Vec<f64>,
    pub psi: Option<f64>,
    pub payment: Tokens,
    pub reimbursement: Tokens,
    pub reward: Tokens,
    pub balance: Tokens,
    pub personalized_acc: f64,
    pub mixing: Vec<f64>,
    /// `|acc(personalized) - Σ_k w_k acc(tier k)|` on the client's own split.
    pub mixture_gap: f64,
    pub refused: bool,
}

impl ClientRoundRow {
    pub fn net(&self) -> Tokens {
        self.reward + self.reimbursement + self.payment
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub round: usize,
    pub tier: usize,
    pub client: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyRow {
    pub round: usize,
    pub tier: usize,
    pub client: usize,
    pub psi: f64,
    pub variant: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub tiers: Vec<TierRoundRow>,
    pub clients: Vec<ClientRoundRow>,
    pub selections: Vec<SelectionRow>,
    pub shapley: Vec<ShapleyRow>,
    pub journal: Vec<JournalEntry>,
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl RunTrace {
    pub fn write_rounds<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ROUNDS_HEADER)?;
        for r in &self.tiers {
            w.write_record([
                r.round.to_string(),
                r.tier.to_string(),
                r.members.to_string(),
                r.model_hash.clone(),
                opt(r.acc.map(f)),
                opt(r.acc_prev_max.map(f)),
                opt(r.acc_max.map(f)),
                opt(r.delta_util.map(f)),
                opt(r.theta.map(f)),
                r.pool_share.to_string(),
                r.reimbursed.to_string(),
                r.rewarded.to_string(),
                opt(r.eval_set_id),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_clients<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CLIENTS_HEADER)?;
        for r in &self.clients {
            w.write_record([
                r.round.to_string(),
                r.client.to_string(),
                r.true_tier.to_string(),
                opt(r.tier),
                opt(r.provenance),
                join(&r.next_bids),
                join(&r.upsilon.iter().map(|&v| f(v)).collect::<Vec<_>>()),
                opt(r.psi.map(f)),
                r.payment.to_string(),
                r.reimbursement.to_string(),
                r.reward.to_string(),
                r.balance.to_string(),
                f(r.personalized_acc),
                join(&r.mixing.iter().map(|&v| f(v)).collect::<Vec<_>>()),
                f(r.mixture_gap),
                u8::from(r.refused).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_selections<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SELECTIONS_HEADER)?;
        for r in &self.selections {
            w.write_record([
                r.round.to_string(),
                r.tier.to_string(),
                r.client.to_string(),
                r.provenance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_shapley<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SHAPLEY_HEADER)?;
        for r in &self.shapley {
            w.write_record([
                r.round.to_string(),
                r.tier.to_string(),
                r.client.to_string(),
                f(r.psi),
                r.variant.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_ledger<W: Write>(&self, out: W) -> Result<()> {
        tokens::write_journal(&self.journal, out)
    }

    /// Writes `rounds.csv`, `clients.csv`, `selections.csv`, `shapley.csv`
    /// and `ledger.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.write_rounds(File::create(dir.join("rounds.csv"))?)?;
        self.write_clients(File::create(dir.join("clients.csv"))?)?;
        self.write_selections(File::create(dir.join("selections.csv"))?)?;
        self.write_shapley(File::create(dir.join("shapley.csv"))?)?;
        self.write_ledger(File::create(dir.join("ledger.csv"))?)?;
        Ok(())
    }

    /// Reads back the client rows, which carry everything the property
    /// checks need.
    pub fn read_clients(path: &Path) -> Result<Vec<ClientRoundRow>> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CLIENTS_HEADER {
            return Err(Error::Trace(format!("{}: unexpected header", path.display())));
        }
        let mut out = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            out.push(parse_client(&rec).map_err(|e| Error::Trace(format!("{} row {}: {e}", path.display(), line + 2)))?);
        }
        Ok(out)
    }

    pub fn read_selections(path: &Path) -> Result<Vec<SelectionRow>> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            out.push(SelectionRow {
                round: parse_num(&rec[0])?,
                tier: parse_num(&rec[1])?,
                client: parse_num(&rec[2])?,
                provenance: parse_provenance(&rec[3])?,
            });
        }
        Ok(out)
    }

    pub fn read_rounds(path: &Path) -> Result<Vec<TierRoundRow>> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            out.push(TierRoundRow {
                round: parse_num(&rec[0])?,
                tier: parse_num(&rec[1])?,
                members: parse_num(&rec[2])?,
                model_hash: rec[3].to_string(),
                acc: parse_opt_f(&rec[4])?,
                acc_prev_max: parse_opt_f(&rec[5])?,
                acc_max: parse_opt_f(&rec[6])?,
                delta_util: parse_opt_f(&rec[7])?,
                theta: parse_opt_f(&rec[8])?,
                pool_share: parse_tokens(&rec[9])?,
                reimbursed: parse_tokens(&rec[10])?,
                rewarded: parse_tokens(&rec[11])?,
                eval_set_id: if rec[12].is_empty() { None } else { Some(parse_num(&rec[12])?) },
            });
        }
        Ok(out)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Trace(format!("bad integer `{s}`")))
}

fn parse_f(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Trace(format!("bad number `{s}`")))
}

fn parse_opt_f(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f(s).map(Some)
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(item).collect()
}

/// Parses the fixed three-decimal token format.
pub fn parse_tokens(s: &str) -> Result<Tokens> {
    let bad = || Error::Trace(format!("bad token amount `{s}`"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 {
        return Err(bad());
    }
    let milli = whole.parse::<i64>().map_err(|_| bad())? * MILLI + frac.parse::<i64>().map_err(|_| bad())?;
    Ok(Tokens(if neg { -milli } else { milli }))
}

fn parse_provenance(s: &str) -> Result<Provenance> {
    match s {
        "merit" => Ok(Provenance::Merit),
        "random" => Ok(Provenance::Random),
        "initial" => Ok(Provenance::Initial),
        _ => Err(Error::Trace(format!("bad provenance `{s}`"))),
    }
}

fn parse_client(rec: &csv::StringRecord) -> Result<ClientRoundRow> {
    Ok(ClientRoundRow {
        round: parse_num(&rec[0])?,
        client: parse_num(&rec[1])?,
        true_tier: parse_num(&rec[2])?,
        tier: if rec[3].is_empty() { None } else { Some(parse_num(&rec[3])?) },
        provenance: if rec[4].is_empty() { None } else { Some(parse_provenance(&rec[4])?) },
        next_bids: parse_list(&rec[5], parse_num)?,
        upsilon: parse_list(&rec[6], parse_f)?,
        psi: parse_opt_f(&rec[7])?,
        payment: parse_tokens(&rec[8])?,
        reimbursement: parse_tokens(&rec[9])?,
        reward: parse_tokens(&rec[10])?,
        balance: parse_tokens(&rec[11])?,
        personalized_acc: parse_f(&rec[12])?,
        mixing: parse_list(&rec[13], parse_f)?,
        mixture_gap: parse_f(&rec[14])?,
        refused: &rec[15] == "1",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_format_round_trips() {
        for v in [0, 1, -1, 999, -1000, 123_456_789, -42_017] {
            assert_eq!(parse_tokens(&Tokens(v).to_string()).unwrap(), Tokens(v));
        }
        assert!(parse_tokens("1.5").is_err());
    }

    #[test]
    fn client_rows_round_trip() {
        let row = ClientRoundRow {
            round: 3,
            client: 7,
            true_tier: 1,
            tier: Some(0),
            provenance: Some(Provenance::Merit),
            next_bids: vec![1, 0],
            upsilon: vec![0.1 + 0.2, 0.7],
            psi: Some(-1.5e-7),
            payment: Tokens(-1000),
            reimbursement: Tokens(250),
            reward: Tokens(1333),
            balance: Tokens(100_583),
            personalized_acc: 0.83,
            mixing: vec![0.25, 0.75],
            mixture_gap: 0.0,
            refused: false,
        };
        let mut idle = row.clone();
        idle.tier = None;
        idle.provenance = None;
        idle.psi = None;
        idle.next_bids = vec![];
        let trace = RunTrace {
            clients: vec![row, idle],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clients.csv");
        trace.write_clients(File::create(&path).unwrap()).unwrap();
        assert_eq!(RunTrace::read_clients(&path).unwrap(), trace.clients);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ParamVector::new(vec![0.0, 1.0]);
        let b = ParamVector::new(vec![0.0, 1.0 + f64::EPSILON]);
        assert_eq!(model_hash(&a), model_hash(&a.clone()));
        assert_ne!(model_hash(&a), model_hash(&b));
        assert_eq!(model_hash(&a).len(), 16);
    }
}
