//! Result tables written as CSV: per-language scores, winners, conflicts,
//! rare/unseen label accuracy and relative-change data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConflictReport;
use crate::error::{Error, Result};
use crate::parser::ParseTree;
use crate::treebank::{classify_label_rarity, LabelRarity, LabelVocab, Sentence};

/// One evaluation: a method in a framework on a test language for a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub test_lang: String,
    pub method: String,
    pub framework: String,
    pub seed: u64,
    pub las: f64,
    pub uas: f64,
}

pub const RESULTS_HEADER: [&str; 6] = ["test_lang", "method", "framework", "seed", "LAS", "UAS"];

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::file(path, e.to_string())
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_table(
        path.as_ref(),
        &RESULTS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.test_lang.clone(),
                r.method.clone(),
                r.framework.clone(),
                r.seed.to_string(),
                f4(r.las),
                f4(r.uas),
            ]
        }),
    )
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::file(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Format {
            row: 1,
            message: format!("{}: expected header {}", path.display(), RESULTS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Format { row, message: e.to_string() })?;
        if rec.len() != 6 {
            return Err(Error::Format {
                row,
                message: format!("expected 6 fields, found {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Format {
                row,
                message: format!("{} is not a number: {:?}", RESULTS_HEADER[k], &rec[k]),
            })
        };
        out.push(ResultRow {
            test_lang: rec[0].to_string(),
            method: rec[1].to_string(),
            framework: rec[2].to_string(),
            seed: rec[3].parse().map_err(|_| Error::Format {
                row,
                message: format!("seed is not an integer: {:?}", &rec[3]),
            })?,
            las: num(4)?,
            uas: num(5)?,
        });
    }
    Ok(out)
}

/// Mean LAS per (framework, language, method) over seeds.
fn mean_las(rows: &[ResultRow]) -> BTreeMap<(String, String), BTreeMap<String, f64>> {
    let mut acc: BTreeMap<(String, String), BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((r.framework.clone(), r.test_lang.clone()))
            .or_default()
            .entry(r.method.clone())
            .or_insert((0.0, 0));
        e.0 += r.las;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, m)| (k, m.into_iter().map(|(method, (s, n))| (method, s / n as f64)).collect()))
        .collect()
}

/// Share of test languages on which a method has the best mean LAS within
/// its framework. A tie splits the language evenly between the tied
/// methods, so each framework's percentages sum to 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinnerRow {
    pub framework: String,
    pub method: String,
    pub best_pct: f64,
    pub n_langs: usize,
}

/// Best method(s) on one language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageWinner {
    pub framework: String,
    pub test_lang: String,
    pub methods: Vec<String>,
    pub las: f64,
}

pub fn language_winners(rows: &[ResultRow]) -> Vec<LanguageWinner> {
    mean_las(rows)
        .into_iter()
        .map(|((framework, test_lang), by_method)| {
            let best = by_method.values().copied().fold(f64::NEG_INFINITY, f64::max);
            LanguageWinner {
                framework,
                test_lang,
                methods: by_method.iter().filter(|(_, &v)| v == best).map(|(m, _)| m.clone()).collect(),
                las: best,
            }
        })
        .collect()
}

pub fn winners(rows: &[ResultRow]) -> Vec<WinnerRow> {
    let per_lang = language_winners(rows);
    let mut methods: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in rows {
        methods.entry(r.framework.clone()).or_default().insert(r.method.clone());
    }
    let mut out = Vec::new();
    for (framework, ms) in methods {
        let langs: Vec<&LanguageWinner> = per_lang.iter().filter(|w| w.framework == framework).collect();
        let n = langs.len();
        for method in ms {
            let share: f64 = langs
                .iter()
                .filter(|w| w.methods.contains(&method))
                .map(|w| 1.0 / w.methods.len() as f64)
                .sum();
            out.push(WinnerRow {
                framework: framework.clone(),
                method,
                best_pct: if n > 0 { 100.0 * share / n as f64 } else { 0.0 },
                n_langs: n,
            });
        }
    }
    out
}

/// Relative LAS change of a method against the baseline method of the same
/// framework on one language, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub test_lang: String,
    pub framework: String,
    pub method: String,
    pub rel_change_pct: f64,
}

pub fn density_rows(rows: &[ResultRow], baseline: &str) -> Vec<DensityRow> {
    let mut out = Vec::new();
    for ((framework, test_lang), by_method) in mean_las(rows) {
        let Some(&base) = by_method.get(baseline) else { continue };
        if base <= 0.0 {
            continue;
        }
        for (method, las) in by_method.iter().filter(|(m, _)| m.as_str() != baseline) {
            out.push(DensityRow {
                test_lang: test_lang.clone(),
                framework: framework.clone(),
                method: method.clone(),
                rel_change_pct: 100.0 * (las - base) / base,
            });
        }
    }
    out
}

/// Correct predictions on tokens whose gold label is rare or unseen in
/// training. A prediction counts as correct when head and label match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareUnseenRow {
    pub framework: String,
    pub method: String,
    /// "rare" or "unseen".
    pub class: String,
    /// Distinct labels of the class occurring in the test data.
    pub n_labels: usize,
    /// Test languages containing at least one such label.
    pub n_langs: usize,
    pub tokens: usize,
    pub correct: usize,
}

impl RareUnseenRow {
    pub fn pct(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.tokens as f64
        }
    }
}

/// Tallies rare and unseen label predictions over `(language, gold,
/// predicted)` evaluations.
pub fn rare_unseen_rows(
    framework: &str,
    method: &str,
    vocab: &LabelVocab,
    evals: &[(String, Vec<Sentence>, Vec<ParseTree>)],
) -> Result<[RareUnseenRow; 2]> {
    let mut labels = BTreeSet::new();
    for (_, gold, _) in evals {
        for s in gold {
            labels.extend(s.deprels().map(str::to_string));
        }
    }
    let classes = classify_label_rarity(vocab, &labels);
    let mut rows = [LabelRarity::Rare, LabelRarity::Unseen].map(|c| {
        (
            c,
            RareUnseenRow {
                framework: framework.to_string(),
                method: method.to_string(),
                class: if c == LabelRarity::Rare { "rare" } else { "unseen" }.to_string(),
                n_labels: 0,
                n_langs: 0,
                tokens: 0,
                correct: 0,
            },
            BTreeSet::new(),
            BTreeSet::new(),
        )
    });
    for (lang, gold, pred) in evals {
        if gold.len() != pred.len() {
            return Err(Error::contract(format!("{lang}: {} gold sentences but {} predictions", gold.len(), pred.len())));
        }
        for (g, p) in gold.iter().zip(pred) {
            if p.heads.len() != g.len() || p.labels.len() != g.len() {
                return Err(Error::contract(format!("{lang}: prediction length differs from sentence {}", g.source_id)));
            }
            for (i, t) in g.tokens.iter().enumerate() {
                for (class, row, seen_labels, langs) in rows.iter_mut() {
                    if classes.get(&t.deprel) == Some(class) {
                        row.tokens += 1;
                        if p.heads[i] == t.head && p.labels[i] == t.deprel {
                            row.correct += 1;
                        }
                        seen_labels.insert(t.deprel.clone());
                        langs.insert(lang.clone());
                    }
                }
            }
        }
    }
    Ok(rows.map(|(_, mut row, l, langs)| {
        row.n_labels = l.len();
        row.n_langs = langs.len();
        row
    }))
}

/// Everything [`emit_report`] writes.
#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub results: Vec<ResultRow>,
    /// Named conflict reports, e.g. "nonep/static".
    pub conflicts: Vec<(String, ConflictReport)>,
    pub rare_unseen: Vec<RareUnseenRow>,
    /// Method used as the reference for relative changes.
    pub baseline: Option<String>,
}

/// Writes the report tables into `out_dir` and returns their paths.
pub fn emit_report(inputs: &ReportInputs, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    if inputs.results.is_empty() {
        return Err(Error::usage("no results to report"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let p = dir.join("results.csv");
    write_results_csv(&p, &inputs.results)?;
    written.push(p);

    let p = dir.join("winners.csv");
    write_table(
        &p,
        &["framework", "method", "best_pct", "n_langs"],
        winners(&inputs.results)
            .into_iter()
            .map(|w| vec![w.framework, w.method, f4(w.best_pct), w.n_langs.to_string()]),
    )?;
    written.push(p);

    let p = dir.join("language_winners.csv");
    write_table(
        &p,
        &["framework", "test_lang", "methods", "LAS"],
        language_winners(&inputs.results)
            .into_iter()
            .map(|w| vec![w.framework, w.test_lang, w.methods.join("+"), f4(w.las)]),
    )?;
    written.push(p);

    if !inputs.conflicts.is_empty() {
        let p = dir.join("conflicts.csv");
        let mut rows = Vec::new();
        for (name, c) in &inputs.conflicts {
            rows.push(vec![
                name.clone(),
                "all".into(),
                c.window.to_string(),
                f4(c.conflict_pct),
                f4(c.mean_cosine),
                c.n_cosines.to_string(),
            ]);
            for pair in &c.per_pair {
                rows.push(vec![
                    name.clone(),
                    format!("{}-{}", pair.a, pair.b),
                    c.window.to_string(),
                    f4(pair.conflict_pct),
                    f4(pair.mean_cosine),
                    pair.n.to_string(),
                ]);
            }
        }
        write_table(&p, &["run", "pair", "window", "conflict_pct", "mean_cosine", "n"], rows)?;
        written.push(p);
    }

    if !inputs.rare_unseen.is_empty() {
        let p = dir.join("rare_unseen.csv");
        write_table(
            &p,
            &["framework", "method", "class", "n_labels", "n_langs", "tokens", "correct", "pct"],
            inputs.rare_unseen.iter().map(|r| {
                vec![
                    r.framework.clone(),
                    r.method.clone(),
                    r.class.clone(),
                    r.n_labels.to_string(),
                    r.n_langs.to_string(),
                    r.tokens.to_string(),
                    r.correct.to_string(),
                    f4(r.pct()),
                ]
            }),
        )?;
        written.push(p);
    }

    if let Some(base) = &inputs.baseline {
        let p = dir.join("density.csv");
        write_table(
            &p,
            &["test_lang", "framework", "method", "rel_change_pct"],
            density_rows(&inputs.results, base)
                .into_iter()
                .map(|d| vec![d.test_lang, d.framework, d.method, f4(d.rel_change_pct)]),
        )?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lang: &str, method: &str, fw: &str, seed: u64, las: f64) -> ResultRow {
        ResultRow {
            test_lang: lang.into(),
            method: method.into(),
            framework: fw.into(),
            seed,
            las,
            uas: las + 1.0,
        }
    }

    #[test]
    fn higher_las_wins_everything() {
        let rows = vec![row("xx", "full", "nonep", 0, 50.0), row("xx", "static", "nonep", 0, 60.0)];
        let w = winners(&rows);
        let get = |m: &str| w.iter().find(|r| r.method == m).unwrap().best_pct;
        assert_eq!(get("static"), 100.0);
        assert_eq!(get("full"), 0.0);
    }

    #[test]
    fn ties_split_and_sum_to_hundred() {
        let rows = vec![
            row("a", "full", "meta", 0, 50.0),
            row("a", "static", "meta", 0, 50.0),
            row("a", "dynamic", "meta", 0, 40.0),
            row("b", "full", "meta", 0, 10.0),
            row("b", "static", "meta", 0, 20.0),
            row("b", "dynamic", "meta", 0, 30.0),
            row("c", "full", "meta", 0, 70.0),
            row("c", "static", "meta", 0, 20.0),
            row("c", "dynamic", "meta", 0, 30.0),
        ];
        let w = winners(&rows);
        let total: f64 = w.iter().map(|r| r.best_pct).sum();
        assert!((total - 100.0).abs() < 1e-9);
        let get = |m: &str| w.iter().find(|r| r.method == m).unwrap().best_pct;
        assert!((get("full") - 50.0).abs() < 1e-9);
        assert!((get("static") - 100.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn seeds_are_averaged_before_ranking() {
        let rows = vec![
            row("a", "full", "nonep", 0, 90.0),
            row("a", "full", "nonep", 1, 10.0),
            row("a", "static", "nonep", 0, 60.0),
            row("a", "static", "nonep", 1, 60.0),
        ];
        let lw = language_winners(&rows);
        assert_eq!(lw[0].methods, vec!["static".to_string()]);
    }

    #[test]
    fn density_relative_to_baseline() {
        let rows = vec![row("a", "full", "nonep", 0, 50.0), row("a", "static", "nonep", 0, 55.0)];
        let d = density_rows(&rows, "full");
        assert_eq!(d.len(), 1);
        assert!((d[0].rel_change_pct - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rare_and_unseen_tallies() {
        use crate::treebank::Token;
        let vocab = LabelVocab::from_parts(vec!["root".into(), "nsubj".into(), "iobj".into()], vec![5000, 4999, 1]).unwrap();
        let s = Sentence {
            tokens: vec![Token::new(1, "a", 2, "iobj"), Token::new(2, "b", 0, "root"), Token::new(3, "c", 2, "vocative")],
            language: "xx".into(),
            source_id: "s1".into(),
        };
        let pred = ParseTree {
            heads: vec![2, 0, 1],
            labels: vec!["iobj".into(), "root".into(), "vocative".into()],
        };
        let [rare, unseen] = rare_unseen_rows("nonep", "full", &vocab, &[("xx".into(), vec![s], vec![pred])]).unwrap();
        assert_eq!((rare.n_labels, rare.tokens, rare.correct), (1, 1, 1));
        assert_eq!((unseen.n_labels, unseen.n_langs, unseen.tokens, unseen.correct), (1, 1, 1, 0));
    }
}
