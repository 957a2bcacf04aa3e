//! Post-processing of finished run directories into comparison tables.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::trace::RunTrace;
use crate::orchestrator::Summary;

pub const DOMINANCE_HEADER: [&str; 4] = ["tier", "distribution", "accuracy", "argmax"];
pub const ABLATION_HEADER: [&str; 5] = ["metric", "tier", "run_a", "run_b", "delta"];

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Trace(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceRow {
    pub tier: usize,
    pub distribution: usize,
    pub accuracy: f64,
    pub argmax: bool,
}

/// Flattens the tier-by-distribution accuracy matrix, marking each tier's
/// best distribution (lowest index on ties).
pub fn dominance_rows(matrix: &[Vec<f64>]) -> Vec<DominanceRow> {
    let mut rows = Vec::new();
    for (tier, accs) in matrix.iter().enumerate() {
        let best = accs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((i, a)),
            })
            .map(|(i, _)| i);
        for (distribution, &accuracy) in accs.iter().enumerate() {
            rows.push(DominanceRow {
                tier,
                distribution,
                accuracy,
                argmax: Some(distribution) == best,
            });
        }
    }
    rows
}

/// True when every tier's argmax lands on a different distribution.
pub fn distinct_dominance(matrix: &[Vec<f64>]) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    dominance_rows(matrix)
        .iter()
        .filter(|r| r.argmax)
        .all(|r| seen.insert(r.distribution))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub metric: String,
    pub tier: Option<usize>,
    pub run_a: f64,
    pub run_b: f64,
    pub delta: f64,
}

fn final_tier_accuracy(dir: &Path) -> Result<Vec<f64>> {
    let rows = RunTrace::read_rounds(&dir.join("rounds.csv"))?;
    let last = rows.iter().map(|r| r.round).max();
    let mut out: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| Some(r.round) == last)
        .map(|r| (r.tier, r.acc.unwrap_or(f64::NAN)))
        .collect();
    out.sort_by_key(|&(t, _)| t);
    Ok(out.into_iter().map(|(_, a)| a).collect())
}

/// Differences `a - b` between two runs: overall personalized accuracy,
/// purity, and the last round's per-tier accuracy.
pub fn ablation_rows(a: &Path, b: &Path) -> Result<Vec<AblationRow>> {
    let (sa, sb) = (read_summary(a)?, read_summary(b)?);
    let row = |metric: &str, tier, x: f64, y: f64| AblationRow {
        metric: metric.to_string(),
        tier,
        run_a: x,
        run_b: y,
        delta: x - y,
    };
    let mut rows = vec![
        row(
            "mean_personalized_accuracy",
            None,
            sa.final_mean_personalized_accuracy,
            sb.final_mean_personalized_accuracy,
        ),
        row("purity", None, sa.purity, sb.purity),
    ];
    let (ta, tb) = (final_tier_accuracy(a)?, final_tier_accuracy(b)?);
    for t in 0..ta.len().max(tb.len()) {
        let x = ta.get(t).copied().unwrap_or(f64::NAN);
        let y = tb.get(t).copied().unwrap_or(f64::NAN);
        rows.push(row("tier_accuracy", Some(t), x, y));
    }
    Ok(rows)
}

/// Writes `tier_dominance.csv` for `run`, plus `ablation_delta.csv` when a
/// second run is given. Returns the paths written.
pub fn write_report(run: &Path, compare: Option<&Path>, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    let summary = read_summary(run)?;
    if let Some(c) = compare {
        read_summary(c)?;
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let path = out.join("tier_dominance.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(DOMINANCE_HEADER)?;
    for r in dominance_rows(&summary.tier_dominance) {
        w.write_record([
            r.tier.to_string(),
            r.distribution.to_string(),
            r.accuracy.to_string(),
            if r.argmax { "*".into() } else { String::new() },
        ])?;
    }
    w.flush()?;
    written.push(path);

    if let Some(c) = compare {
        let path = out.join("ablation_delta.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(ABLATION_HEADER)?;
        for r in ablation_rows(run, c)? {
            w.write_record([
                r.metric,
                r.tier.map(|t| t.to_string()).unwrap_or_default(),
                r.run_a.to_string(),
                r.run_b.to_string(),
                r.delta.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
