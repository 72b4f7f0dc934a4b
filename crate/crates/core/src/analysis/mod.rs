//! Gradient-conflict statistics, correlation analysis and report files.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::trainers::RunTrace;

pub use report::{
    density_rows, emit_report, language_winners, rare_unseen_rows, read_results_csv, winners, write_results_csv,
    DensityRow, LanguageWinner, RareUnseenRow, ReportInputs, ResultRow, WinnerRow, RESULTS_HEADER,
};

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "cosine of vectors of different length");
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosines of all unordered pairs in key order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairCosines {
    pub pairs: Vec<((String, String), f64)>,
    /// Pairs dropped because a gradient had zero norm.
    pub skipped: usize,
}

pub fn pairwise_cosines(grads: &BTreeMap<String, Vec<f64>>) -> Result<PairCosines> {
    let items: Vec<(&String, &Vec<f64>)> = grads.iter().collect();
    if let Some((_, first)) = items.first() {
        if items.iter().any(|(_, g)| g.len() != first.len()) {
            return Err(Error::contract("gradient vectors differ in length"));
        }
    }
    let mut out = PairCosines::default();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            match cosine(items[i].1, items[j].1) {
                Some(c) => out.pairs.push(((items[i].0.clone(), items[j].0.clone()), c)),
                None => out.skipped += 1,
            }
        }
    }
    if out.skipped > 0 {
        log::warn!("{} language pair(s) skipped: zero-norm gradient", out.skipped);
    }
    Ok(out)
}

/// Pairwise cosines over the iterations of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictTrace {
    pub pairs: Vec<(String, String)>,
    /// One row per iteration, aligned with `pairs`.
    pub cosines: Vec<Vec<Option<f64>>>,
}

impl ConflictTrace {
    pub fn from_run(trace: &RunTrace) -> Self {
        ConflictTrace {
            pairs: trace.pairs(),
            cosines: trace.iterations.iter().map(|r| r.cosines.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cosines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cosines.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: String,
    pub b: String,
    pub conflict_pct: f64,
    pub mean_cosine: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub window: usize,
    /// Share of cosines strictly below zero, in percent.
    pub conflict_pct: f64,
    pub mean_cosine: f64,
    pub n_cosines: usize,
    pub skipped: usize,
    pub per_pair: Vec<PairStat>,
}

fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let conflicts = values.iter().filter(|&&c| c < 0.0).count() as f64;
    (100.0 * conflicts / n, values.iter().sum::<f64>() / n)
}

/// Conflict percentage and mean cosine over the trailing `window` iterations.
pub fn conflict_stats(trace: &ConflictTrace, window: usize) -> Result<ConflictReport> {
    if window == 0 {
        return Err(Error::usage("window must be at least 1 iteration"));
    }
    if window > trace.len() {
        return Err(Error::usage(format!(
            "window of {window} iterations exceeds the trace length {}",
            trace.len()
        )));
    }
    let rows = &trace.cosines[trace.len() - window..];
    let mut all = Vec::new();
    let mut skipped = 0;
    let mut per_pair_vals = vec![Vec::new(); trace.pairs.len()];
    for row in rows {
        if row.len() != trace.pairs.len() {
            return Err(Error::contract("cosine row length differs from the pair count"));
        }
        for (k, c) in row.iter().enumerate() {
            match c {
                Some(v) => {
                    all.push(*v);
                    per_pair_vals[k].push(*v);
                }
                None => skipped += 1,
            }
        }
    }
    if all.is_empty() {
        return Err(Error::usage("no cosines in the analysis window"));
    }
    let (conflict_pct, mean_cosine) = summarize(&all);
    let per_pair = trace
        .pairs
        .iter()
        .zip(&per_pair_vals)
        .filter(|(_, v)| !v.is_empty())
        .map(|((a, b), v)| {
            let (p, m) = summarize(v);
            PairStat {
                a: a.clone(),
                b: b.clone(),
                conflict_pct: p,
                mean_cosine: m,
                n: v.len(),
            }
        })
        .collect();
    Ok(ConflictReport {
        window,
        conflict_pct,
        mean_cosine,
        n_cosines: all.len(),
        skipped,
        per_pair,
    })
}

/// Pearson correlation with a two-sided p-value from Student's t with
/// n − 2 degrees of freedom.
pub fn pearson_conflict_similarity(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::usage("series lengths differ"));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::usage("correlation needs at least 3 points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::usage("correlation is undefined for a constant series"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::contract(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p))
}

/// Per-iteration series for the correlation analysis: the drop in conflict
/// share and the gain in mean cosine of a run relative to a baseline run,
/// iteration by iteration (windows of `window` iterations sliding by one).
pub fn conflict_similarity_deltas(run: &ConflictTrace, baseline: &ConflictTrace, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = run.len().min(baseline.len());
    if window == 0 || window > len {
        return Err(Error::usage("window must be between 1 and the shorter trace length"));
    }
    let slice = |t: &ConflictTrace, end: usize| ConflictTrace {
        pairs: t.pairs.clone(),
        cosines: t.cosines[..end].to_vec(),
    };
    let mut dc = Vec::new();
    let mut ds = Vec::new();
    for end in window..=len {
        let a = conflict_stats(&slice(run, end), window)?;
        let b = conflict_stats(&slice(baseline, end), window)?;
        dc.push(b.conflict_pct - a.conflict_pct);
        ds.push(a.mean_cosine - b.mean_cosine);
    }
    Ok((dc, ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rows: Vec<Vec<f64>>) -> ConflictTrace {
        let k = rows[0].len();
        ConflictTrace {
            pairs: (0..k).map(|i| (format!("a{i}"), format!("b{i}"))).collect(),
            cosines: rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
        }
    }

    #[test]
    fn cosine_boundaries() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![1.0, 0.0]);
        g.insert("b".to_string(), vec![0.0, 1.0]);
        g.insert("c".to_string(), vec![-1.0, 0.0]);
        g.insert("z".to_string(), vec![0.0, 0.0]);
        let pc = pairwise_cosines(&g).unwrap();
        assert_eq!(pc.skipped, 3);
        let get = |x: &str, y: &str| pc.pairs.iter().find(|((a, b), _)| a == x && b == y).unwrap().1;
        assert_eq!(get("a", "b"), 0.0);
        assert_eq!(get("a", "c"), -1.0);
        let t = ConflictTrace {
            pairs: vec![("a".into(), "b".into())],
            cosines: vec![vec![Some(0.0)]],
        };
        assert_eq!(conflict_stats(&t, 1).unwrap().conflict_pct, 0.0);
    }

    #[test]
    fn conflict_arithmetic() {
        let t = trace(vec![vec![-0.5, -0.5]; 60]);
        let r = conflict_stats(&t, 50).unwrap();
        assert_eq!((r.conflict_pct, r.mean_cosine), (100.0, -0.5));
        let t = trace(vec![vec![0.5, -0.5]; 50]);
        let r = conflict_stats(&t, 50).unwrap();
        assert_eq!((r.conflict_pct, r.mean_cosine), (50.0, 0.0));
        assert!(conflict_stats(&t, 51).is_err());
        assert!(conflict_stats(&t, 0).is_err());
    }

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson_conflict_similarity(&x, &x).unwrap().0 - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_conflict_similarity(&x, &y).unwrap().0 + 1.0).abs() < 1e-12);
        assert!(pearson_conflict_similarity(&x, &[1.0; 4]).is_err());
        assert!(pearson_conflict_similarity(&x[..2], &x[..2]).is_err());
    }
}
