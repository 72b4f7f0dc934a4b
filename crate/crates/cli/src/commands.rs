//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use subparse::analysis::{
    conflict_similarity_deltas, conflict_stats, emit_report, pearson_conflict_similarity, rare_unseen_rows,
    read_results_csv, write_results_csv, ConflictTrace, RareUnseenRow, ReportInputs, ResultRow, RESULTS_HEADER,
};
use subparse::checkpoint::Checkpoint;
use subparse::experiment::{
    ablation_plan, evaluate_transfer, load_split, model_for_directory, pretrain as run_pretrain, train_multilingual,
    Benchmark, Framework, MaskPlan, TransferMask,
};
use subparse::model::Model;
use subparse::subnet::{discover_mask, magnitude_prune, AblationKind, HeadMask, MaskFile, MaskProvenance, PruneConfig};
use subparse::trainers::{GroupLrs, SupervisedConfig};
use subparse::treebank::{load_language_vectors, read_conllu, Split, Treebank};
use subparse::{Error, Result};

use crate::config::{fewshot_config, ConfigFile, Sections};
use crate::{AblateArgs, AnalyzeArgs, FewshotArgs, GenToyArgs, PretrainArgs, PruneArgs, ReportArgs, TrainArgs};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::usage(format!("missing required option --{flag}")))
}

fn load<T: Serialize + serde::de::DeserializeOwned>(args: &T, config: Option<&Path>) -> Result<(T, Sections)> {
    let file = ConfigFile::load(config)?;
    Ok((file.merge(args)?, file.sections()?))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::contract(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `<dir>/<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn meta_str(ckpt: &Checkpoint, key: &str) -> Option<String> {
    ckpt.metadata.get(key).and_then(Value::as_str).map(str::to_string)
}

fn meta_f64(ckpt: &Checkpoint, key: &str) -> Option<f64> {
    ckpt.metadata.get(key).and_then(Value::as_f64)
}

pub fn gen_toy(args: &GenToyArgs) -> Result<()> {
    let (a, s) = load(args, args.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let mut spec = s.benchmark;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let bench = Benchmark::generate(&spec)?;
    bench.write(&out)?;
    log::info!(
        "wrote source {}, {} training and {} test languages to {}",
        bench.source.language,
        bench.train.len(),
        bench.test.len(),
        out.display()
    );
    Ok(())
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let (a, s) = load(args, args.config.as_deref())?;
    let data = required(&a.data, "data")?;
    let lang = required(&a.lang, "lang")?;
    let out = required(&a.out, "out")?;
    let mut cfg = s.train;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.stage1_epochs = e;
    }
    let arch = model_for_directory(&data, s.model)?;
    let source = load_split(&data, &lang, Split::Train)?;
    let model = run_pretrain(arch, &source, &cfg)?;
    let mut ckpt = Checkpoint::new(model);
    ckpt.metadata.insert("stage".into(), json!("stage1"));
    ckpt.metadata.insert("source".into(), json!(lang));
    ckpt.metadata.insert("seed".into(), json!(cfg.seed));
    ckpt.save(&out)
}

fn prune_config(s: &Sections, rate: f64, stop: f64) -> PruneConfig {
    PruneConfig {
        rate,
        stop_ratio: stop,
        finetune: SupervisedConfig {
            epochs: s.prune.finetune_epochs,
            batch_size: s.prune.finetune_batch,
            lrs: GroupLrs::new(s.prune.finetune_lr_encoder, s.prune.finetune_lr_classifier),
            weight_decay: s.train.weight_decay,
            warmup_fraction: s.train.warmup_fraction,
            schedule: s.train.schedule,
            freeze_encoder_first_epoch: false,
            seed: 0,
        },
        importance_sample: s.prune.importance_sample,
    }
}

/// Per-seed pruning run as written next to the mask file.
#[derive(Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub bits: Vec<u8>,
    pub original_dev_las: f64,
    pub dev_las: f64,
    pub trace: subparse::subnet::PruningTrace,
}

pub fn prune(args: &PruneArgs) -> Result<()> {
    let (a, s) = load(args, args.config.as_deref())?;
    let lang = required(&a.lang, "lang")?;
    let train = read_conllu(required(&a.train, "train")?, &lang, Split::Train)?;
    let dev = read_conllu(required(&a.dev, "dev")?, &lang, Split::Dev)?;
    let out = required(&a.out, "out")?;
    let n_seeds = a.seeds.unwrap_or(4);
    let cfg = prune_config(&s, a.rate.unwrap_or(0.10), a.stop.unwrap_or(0.95));
    cfg.validate()?;
    let model = match &a.ckpt {
        Some(p) => Checkpoint::load(p)?.model,
        None => {
            let dir = a.train.as_ref().and_then(|p| p.parent()).unwrap_or(Path::new("."));
            log::info!("no --ckpt; training a model on {lang} first");
            run_pretrain(model_for_directory(dir, s.model.clone())?, &train, &s.train)?
        }
    };
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    let (mask, runs, provenance) = discover_mask(&lang, &model, &train.sentences, &dev.sentences, &cfg, &seeds)?;
    log::info!("{lang}: {} of {} heads disabled", mask.n_disabled(), mask.total());
    MaskFile::from_head_mask(&mask, provenance).save(&out)?;
    let per_seed: Vec<SeedRun> = seeds
        .iter()
        .zip(runs)
        .map(|(&seed, r)| SeedRun {
            seed,
            bits: r.mask.bits.iter().copied().collect(),
            original_dev_las: r.original_dev_las,
            dev_las: r.dev_las,
            trace: r.trace,
        })
        .collect();
    write_json(&sibling(&out, ".runs.json"), &per_seed)
}

fn parse_ablation(kind: &str) -> Result<Option<AblationKind>> {
    let count = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::usage(format!("invalid head count in --kind {kind}")))
    };
    Ok(Some(match kind.split_once(':') {
        None if kind == "shuffle" => AblationKind::Shuffle,
        None if kind == "dr20" => AblationKind::RandomInitDynamic,
        None if kind == "magnitude" => return Ok(None),
        Some(("random", n)) => AblationKind::RandomN(count(n)?),
        Some(("bad", n)) => AblationKind::Bad(count(n)?, BTreeSet::new()),
        _ => {
            return Err(Error::usage(format!(
                "unknown ablation '{kind}' (expected shuffle, random:N, bad:N, dr20 or magnitude)"
            )))
        }
    }))
}

fn load_masks(maskdir: &Path, langs: &[String], shape: (usize, usize)) -> Result<BTreeMap<String, HeadMask>> {
    let mut out = BTreeMap::new();
    for l in langs {
        let p = maskdir.join(format!("{l}.json"));
        if !p.exists() {
            return Err(Error::usage(format!("no mask file for language {l} ({})", p.display())));
        }
        let mut m = MaskFile::load(&p)?.head_mask()?;
        m.check_shape(shape)?;
        m.language = l.clone();
        out.insert(l.clone(), m);
    }
    Ok(out)
}

fn method_name(masks: &str, ablation: Option<&str>) -> String {
    match (ablation, masks) {
        (Some(k), "none") => k.to_string(),
        (Some(k), m) => format!("{k}-{m}"),
        (None, "none") => "full".into(),
        (None, m) => m.to_string(),
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (a, s) = load(args, args.config.as_deref())?;
    run_train(&a, &s, None)
}

fn run_train(a: &TrainArgs, s: &Sections, ablation: Option<&str>) -> Result<()> {
    let framework: Framework = a.mode.as_deref().unwrap_or("nonep").parse()?;
    let masks = a.masks.clone().unwrap_or_else(|| "none".into());
    if !["none", "static", "dynamic"].contains(&masks.as_str()) {
        return Err(Error::usage(format!("unknown --masks '{masks}' (expected none, static or dynamic)")));
    }
    let langs = required(&a.langs, "langs")?;
    if langs.is_empty() {
        return Err(Error::usage("--langs is empty"));
    }
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let mut train_cfg = s.train.clone();
    let mut meta_cfg = s.meta.clone();
    if let Some(seed) = a.seed {
        train_cfg.seed = seed;
        meta_cfg.seed = seed;
    }
    let stage1 = match (&a.init, &a.stage1) {
        (Some(p), None) => Checkpoint::load(p)?.model,
        (None, Some(src)) => {
            let arch = model_for_directory(&data, s.model.clone())?;
            run_pretrain(arch, &load_split(&data, src, Split::Train)?, &train_cfg)?
        }
        _ => return Err(Error::usage("give exactly one of --init or --stage1")),
    };
    let shape = stage1.arch.mask_shape();
    let treebanks = langs
        .iter()
        .map(|l| load_split(&data, l, Split::Train))
        .collect::<Result<Vec<_>>>()?;

    let keep = match framework {
        Framework::NonEp => train_cfg.keep_fraction,
        Framework::Meta => meta_cfg.keep_fraction,
    };
    let soft_init = match framework {
        Framework::NonEp => train_cfg.soft_init,
        Framework::Meta => meta_cfg.soft_init,
    };
    let seed = train_cfg.seed;
    let plan = match ablation {
        Some("magnitude") => {
            let cfg = prune_config(s, 0.10, 0.95);
            let mut weights = BTreeMap::new();
            for (l, tb) in langs.iter().zip(&treebanks) {
                let dev = load_split(&data, l, Split::Dev)?;
                let r = magnitude_prune(l, &stage1, &tb.sentences, &dev.sentences, &cfg)?;
                weights.insert(l.clone(), r.mask);
            }
            MaskPlan::Weights(weights)
        }
        Some(kind) => {
            let kind = parse_ablation(kind)?.ok_or_else(|| Error::contract("magnitude handled above"))?;
            let maskdir = required(&a.maskdir, "maskdir")?;
            let reference = load_masks(&maskdir, &langs, shape)?;
            match (ablation_plan(&kind, &reference, seed)?, masks.as_str()) {
                (MaskPlan::Static(m), "dynamic") => MaskPlan::dynamic_from_static(&m, keep, soft_init)?,
                (plan, _) => plan,
            }
        }
        None if masks == "none" => MaskPlan::None,
        None => {
            let maskdir = required(&a.maskdir, "maskdir")?;
            let heads = load_masks(&maskdir, &langs, shape)?;
            if masks == "static" {
                MaskPlan::Static(heads)
            } else {
                MaskPlan::dynamic_from_static(&heads, keep, soft_init)?
            }
        }
    };
    let plan_name = plan.name();
    let pairs: Vec<(&str, &Treebank)> = langs.iter().map(String::as_str).zip(&treebanks).collect();
    let run = train_multilingual(&stage1, &pairs, &plan, framework, &train_cfg, &meta_cfg)?;

    create_dir(&out)?;
    let fewshot_lrs = match framework {
        Framework::NonEp => train_cfg.lrs(),
        Framework::Meta => meta_cfg.inner_lrs(),
    };
    let method = method_name(if plan_name == "weights" { "none" } else { plan_name }, ablation);
    let mut ckpt = Checkpoint::new(run.model.clone());
    let md = &mut ckpt.metadata;
    md.insert("stage".into(), json!("stage2"));
    md.insert("framework".into(), json!(framework.name()));
    md.insert("masks".into(), json!(plan_name));
    md.insert("method".into(), json!(method));
    md.insert("ablation".into(), json!(ablation));
    md.insert("langs".into(), json!(langs));
    md.insert("seed".into(), json!(seed));
    md.insert("fewshot_lr_encoder".into(), json!(fewshot_lrs.encoder));
    md.insert("fewshot_lr_classifier".into(), json!(fewshot_lrs.classifier));
    ckpt.save(out.join("model.ckpt"))?;
    run.trace.save(out.join("trace.json"))?;
    run.trace.write_loss_csv(out.join("losses.csv"))?;
    let mask_dir = out.join("masks");
    match &plan {
        MaskPlan::None => {}
        MaskPlan::Weights(w) => {
            create_dir(&mask_dir)?;
            for (l, m) in w {
                MaskFile::from_weight_mask(m, shape, MaskProvenance::default()).save(mask_dir.join(format!("{l}.json")))?;
            }
        }
        _ => {
            create_dir(&mask_dir)?;
            for (l, m) in &run.final_masks {
                MaskFile::from_head_mask(m, MaskProvenance::default()).save(mask_dir.join(format!("{l}.json")))?;
            }
        }
    }
    log::info!("{} {} run written to {}", framework.name(), method, out.display());
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let (a, s) = load(args, args.train.config.as_deref())?;
    let kind = required(&a.kind, "kind")?;
    parse_ablation(&kind)?;
    run_train(&a.train, &s, Some(&kind))
}

/// Summary written next to the few-shot results CSV.
#[derive(Serialize, Deserialize)]
pub struct FewshotSummary {
    pub language: String,
    pub framework: String,
    pub method: String,
    pub mask: String,
    pub transfer_languages: Vec<String>,
    pub mean_las: f64,
    pub mean_uas: f64,
}

pub fn fewshot(args: &FewshotArgs) -> Result<()> {
    let (a, s) = load(args, args.config.as_deref())?;
    let ckpt_path = required(&a.ckpt, "ckpt")?;
    let test_path = required(&a.test, "test")?;
    let out = required(&a.out, "out")?;
    let lang = match &a.lang {
        Some(l) => l.clone(),
        None => test_path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.split('-').next())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::usage("cannot infer the language from the test file name; pass --lang"))?
            .to_string(),
    };
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let test = read_conllu(&test_path, &lang, Split::Test)?;
    let dev = a.dev.as_ref().map(|p| read_conllu(p, &lang, Split::Dev)).transpose()?;
    let model: &Model = &ckpt.model;
    let shape = model.arch.mask_shape();

    let mode = a.mask.clone().unwrap_or_else(|| "none".into());
    let mut train_meta = Vec::new();
    let mut test_meta = subparse::treebank::LanguageMeta::new(lang.clone(), Vec::new());
    let mut masks = BTreeMap::new();
    let how = match mode.as_str() {
        "none" => TransferMask::None,
        "auto" | "random" => {
            let vec_path = a
                .langvec
                .clone()
                .ok_or_else(|| Error::usage(format!("--mask {mode} needs --langvec")))?;
            let maskdir = required(&a.maskdir, "maskdir")?;
            let vectors = load_language_vectors(&vec_path)?;
            test_meta = vectors
                .get(&lang)
                .cloned()
                .ok_or_else(|| Error::usage(format!("no language vector for {lang}")))?;
            let train_langs: Vec<String> = match ckpt.metadata.get("langs").and_then(Value::as_array) {
                Some(v) => v.iter().filter_map(Value::as_str).map(str::to_string).collect(),
                None => vectors.keys().filter(|k| maskdir.join(format!("{k}.json")).exists()).cloned().collect(),
            };
            for l in &train_langs {
                train_meta.push(
                    vectors
                        .get(l)
                        .cloned()
                        .ok_or_else(|| Error::usage(format!("no language vector for training language {l}")))?,
                );
            }
            masks = load_masks(&maskdir, &train_langs, shape)?;
            if mode == "auto" {
                TransferMask::Typological
            } else {
                TransferMask::Random
            }
        }
        path => {
            let m = MaskFile::load(path)?.head_mask()?;
            m.check_shape(shape)?;
            TransferMask::Fixed(m)
        }
    };

    let base = GroupLrs::new(
        meta_f64(&ckpt, "fewshot_lr_encoder").unwrap_or(s.train.encoder_lr),
        meta_f64(&ckpt, "fewshot_lr_classifier").unwrap_or(s.train.classifier_lr),
    );
    let cfg = fewshot_config(base, &s.fewshot, a.shots.unwrap_or(20), a.steps.unwrap_or(20), a.seeds.unwrap_or(5));
    let eval = evaluate_transfer(model, &test, dev.as_ref(), &test_meta, &train_meta, &masks, &how, &cfg)?;

    let framework = meta_str(&ckpt, "framework").unwrap_or_else(|| "none".into());
    let base_method = meta_str(&ckpt, "method").unwrap_or_else(|| "full".into());
    let method = a.method.clone().unwrap_or_else(|| match mode.as_str() {
        "none" | "auto" => base_method.clone(),
        "random" => format!("{base_method}-random"),
        _ => format!("{base_method}-fixed"),
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let rows: Vec<ResultRow> = eval
        .result
        .per_seed
        .iter()
        .map(|(seed, sc)| ResultRow {
            test_lang: lang.clone(),
            method: method.clone(),
            framework: framework.clone(),
            seed: *seed,
            las: sc.las(),
            uas: sc.uas(),
        })
        .collect();
    write_results_csv(&out, &rows)?;
    write_json(
        &sibling(&out, ".summary.json"),
        &FewshotSummary {
            language: lang.clone(),
            framework: framework.clone(),
            method: method.clone(),
            mask: mode,
            transfer_languages: eval.chosen.clone(),
            mean_las: eval.result.mean_las,
            mean_uas: eval.result.mean_uas,
        },
    )?;
    let evals: Vec<_> = eval
        .predictions
        .iter()
        .map(|p| (lang.clone(), p.eval.clone(), p.predictions.clone()))
        .collect();
    let rare = rare_unseen_rows(&framework, &method, &model.arch.labels, &evals)?;
    write_csv_rows(&sibling(&out, ".rare_unseen.csv"), &rare)?;
    println!("{lang}\t{framework}\t{method}\tLAS {:.2}\tUAS {:.2}", eval.result.mean_las, eval.result.mean_uas);
    Ok(())
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::file(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::file(path, e.to_string())))
        .collect()
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let (a, _) = load(args, args.config.as_deref())?;
    let trace = subparse::trainers::RunTrace::load(required(&a.trace, "trace")?)?;
    let out = required(&a.out, "out")?;
    let window = a.window.unwrap_or(50);
    let ct = ConflictTrace::from_run(&trace);
    let report = conflict_stats(&ct, window)?;
    let mut rows = vec![vec![
        "all".to_string(),
        window.to_string(),
        format!("{:.4}", report.conflict_pct),
        format!("{:.4}", report.mean_cosine),
        report.n_cosines.to_string(),
    ]];
    for p in &report.per_pair {
        rows.push(vec![
            format!("{}-{}", p.a, p.b),
            window.to_string(),
            format!("{:.4}", p.conflict_pct),
            format!("{:.4}", p.mean_cosine),
            p.n.to_string(),
        ]);
    }
    let mut w = csv::Writer::from_path(&out).map_err(|e| Error::file(&out, e.to_string()))?;
    let mut put = |r: &[String]| w.write_record(r).map_err(|e| Error::file(&out, e.to_string()));
    put(&["pair", "window", "conflict_pct", "mean_cosine", "n"].map(String::from))?;
    for r in &rows {
        put(r)?;
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    println!(
        "{}/{}: conflicts {:.2}% mean cosine {:.4} over the last {window} iterations",
        trace.framework, trace.masks, report.conflict_pct, report.mean_cosine
    );
    if let Some(b) = &a.baseline {
        let base = ConflictTrace::from_run(&subparse::trainers::RunTrace::load(b)?);
        let (dc, ds) = conflict_similarity_deltas(&ct, &base, window)?;
        let (r, p) = pearson_conflict_similarity(&dc, &ds)?;
        write_json(&sibling(&out, ".pearson.json"), &json!({ "r": r, "p_value": p, "n": dc.len() }))?;
        println!("pearson r {r:.4} (p {p:.4}, n {})", dc.len());
    }
    Ok(())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn is_results_csv(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().is_some_and(|h| h.trim() == RESULTS_HEADER.join(",")))
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let (a, _) = load(args, args.config.as_deref())?;
    let root = required(&a.results, "results")?;
    let out = required(&a.out, "out")?;
    let window = a.window.unwrap_or(50);
    let mut files = Vec::new();
    collect_files(&root, &mut files)?;
    let out_abs = out.canonicalize().ok();
    let mut inputs = ReportInputs {
        baseline: a.baseline.clone(),
        ..ReportInputs::default()
    };
    let mut rare: BTreeMap<(String, String, String), RareUnseenRow> = BTreeMap::new();
    for p in files {
        if out_abs.as_ref().is_some_and(|o| p.canonicalize().is_ok_and(|c| c.starts_with(o))) {
            continue;
        }
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if name.ends_with(".rare_unseen.csv") {
            for r in read_csv_rows::<RareUnseenRow>(&p)? {
                let key = (r.framework.clone(), r.method.clone(), r.class.clone());
                let e = rare.entry(key).or_insert_with(|| RareUnseenRow {
                    n_labels: 0,
                    n_langs: 0,
                    tokens: 0,
                    correct: 0,
                    ..r.clone()
                });
                e.n_labels = e.n_labels.max(r.n_labels);
                e.n_langs += r.n_langs;
                e.tokens += r.tokens;
                e.correct += r.correct;
            }
        } else if name.ends_with(".csv") && is_results_csv(&p)? {
            inputs.results.extend(read_results_csv(&p)?);
        } else if name == "trace.json" || name.ends_with(".trace.json") {
            let trace = subparse::trainers::RunTrace::load(&p)?;
            let rel = p.parent().and_then(|d| d.strip_prefix(&root).ok()).unwrap_or(Path::new(""));
            let label = format!("{} ({}/{})", rel.display(), trace.framework, trace.masks);
            match conflict_stats(&ConflictTrace::from_run(&trace), window) {
                Ok(c) => inputs.conflicts.push((label, c)),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
    }
    inputs.rare_unseen = rare.into_values().collect();
    let written = emit_report(&inputs, &out)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
