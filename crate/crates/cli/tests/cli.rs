//! End-to-end behaviour of the `subparse` binary on a tiny benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const TINY: &str = r#"
[model]
arc_dim = 8
tag_dim = 4

[model.encoder]
n_layers = 2
n_heads = 2
d_model = 8
d_ff = 16

[train]
stage1_epochs = 1
stage1_batch = 8
stage2_iterations = 6
per_language_batch = 4

[meta]
episodes = 3
shots = 4
inner_steps = 1

[prune]
finetune_epochs = 1
finetune_batch = 8
importance_sample = 10

[benchmark]
source_sentences = 40
train_sentences = 24
dev_sentences = 12
test_sentences = 16
"#;

const LANGS: &str = "sva,svb,sov,vso";

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn config(&self) -> PathBuf {
        self.root.join("tiny.toml")
    }
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn file(&self, name: &str) -> PathBuf {
        self.data().join(name)
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subparse")).args(args).output().expect("spawn subparse")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn must(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "subparse {}: {}", args.join(" "), stderr(&out));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Benchmark, stage-1 checkpoint, masks for every training language and a
/// trained NonEp static model, built once for all tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        fs::write(f.config(), TINY).unwrap();
        let cfg = f.config();
        must(&["gen-toy", "--out", s(&f.data()), "--config", s(&cfg)]);
        let ckpt = f.root.join("stage1.ckpt");
        must(&["pretrain", "--data", s(&f.data()), "--lang", "en", "--out", s(&ckpt), "--config", s(&cfg)]);
        fs::create_dir_all(f.root.join("masks")).unwrap();
        for l in LANGS.split(',') {
            must(&[
                "prune", "--lang", l,
                "--train", s(&f.file(&format!("{l}-train.conllu"))),
                "--dev", s(&f.file(&format!("{l}-dev.conllu"))),
                "--ckpt", s(&ckpt), "--seeds", "2",
                "--out", s(&f.root.join(format!("masks/{l}.json"))), "--config", s(&cfg),
            ]);
        }
        must(&[
            "train", "--mode", "nonep", "--masks", "static", "--langs", LANGS,
            "--data", s(&f.data()), "--maskdir", s(&f.root.join("masks")), "--init", s(&ckpt),
            "--out", s(&f.root.join("run")), "--config", s(&cfg),
        ]);
        f
    })
}

#[test]
fn help_exits_zero_and_bad_flag_exits_one() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn prune_without_dev_is_usage_error() {
    let f = fixture();
    let out = run(&["prune", "--lang", "sva", "--train", s(&f.file("sva-train.conllu")), "--out", "/tmp/x.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--dev"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let f = fixture();
    let cfg = f.root.join("bad.toml");
    fs::write(&cfg, "wat = 3\n").unwrap();
    let out = run(&["analyze", "--trace", s(&f.root.join("run/trace.json")), "--out", "/tmp/a.csv", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("wat"));
}

#[test]
fn train_needs_exactly_one_initialisation() {
    let f = fixture();
    let (data, out, cfg, ckpt) = (f.data(), f.root.join("never"), f.config(), f.root.join("stage1.ckpt"));
    let base = [
        "train", "--mode", "nonep", "--masks", "none", "--langs", LANGS, "--data", s(&data),
        "--out", s(&out), "--config", s(&cfg),
    ];
    assert_eq!(code(&run(&base)), 1);
    let mut both = base.to_vec();
    both.extend(["--init", s(&ckpt), "--stage1", "en"]);
    assert_eq!(code(&run(&both)), 1);
}

#[test]
fn missing_mask_file_names_the_language() {
    let f = fixture();
    let empty = f.root.join("no-masks");
    fs::create_dir_all(&empty).unwrap();
    let out = run(&[
        "train", "--mode", "nonep", "--masks", "static", "--langs", LANGS, "--data", s(&f.data()),
        "--maskdir", s(&empty), "--stage1", "en", "--out", s(&f.root.join("never2")), "--config", s(&f.config()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("sva"), "{}", stderr(&out));
}

#[test]
fn mask_of_wrong_shape_is_rejected() {
    let f = fixture();
    let bad = f.root.join("wide.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("masks/sva.json")).unwrap()).unwrap();
    m["n_layers"] = 3.into();
    m["n_heads"] = 3.into();
    m["bits"] = serde_json::json!([1, 1, 1, 1, 0, 1, 1, 1, 1]);
    fs::write(&bad, m.to_string()).unwrap();
    let out = run(&[
        "fewshot", "--ckpt", s(&f.root.join("run/model.ckpt")), "--test", s(&f.file("hsp-test.conllu")),
        "--mask", s(&bad), "--shots", "4", "--steps", "1", "--seeds", "1",
        "--out", s(&f.root.join("fs-bad.csv")), "--config", s(&f.config()),
    ]);
    assert_ne!(code(&out), 0);
    assert!(!f.root.join("fs-bad.csv").exists());
}

#[test]
fn prune_writes_mask_and_runs() {
    let f = fixture();
    let mask: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("masks/vso.json")).unwrap()).unwrap();
    assert_eq!(mask["bits"].as_array().unwrap().len(), 2 * 2);
    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("masks/vso.runs.json")).unwrap()).unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 2);
}

#[test]
fn train_writes_run_directory() {
    let f = fixture();
    for name in ["model.ckpt", "trace.json", "losses.csv", "masks/sva.json"] {
        assert!(f.root.join("run").join(name).exists(), "missing {name}");
    }
    let losses = fs::read_to_string(f.root.join("run/losses.csv")).unwrap();
    // One row per iteration and language.
    assert_eq!(losses.lines().count(), 1 + 6 * 4);
}

#[test]
fn analyze_rejects_oversized_window() {
    let f = fixture();
    let trace = f.root.join("run/trace.json");
    let csv = f.root.join("conf.csv");
    let out = run(&["analyze", "--trace", s(&trace), "--window", "7", "--out", s(&csv)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let stdout = must(&["analyze", "--trace", s(&trace), "--window", "6", "--out", s(&csv)]);
    assert!(stdout.contains("nonep/static"), "{stdout}");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("pair,window,conflict_pct,mean_cosine,n\nall,6,"));
    // One row per language pair.
    assert_eq!(text.lines().count(), 2 + 6);
}

#[test]
fn fewshot_single_seed_and_report() {
    let f = fixture();
    let out_dir = f.root.join("results");
    fs::create_dir_all(&out_dir).unwrap();
    let csv = out_dir.join("hsp.csv");
    let stdout = must(&[
        "fewshot", "--ckpt", s(&f.root.join("run/model.ckpt")), "--test", s(&f.file("hsp-test.conllu")),
        "--mask", "auto", "--langvec", s(&f.file("languages.csv")), "--maskdir", s(&f.root.join("masks")),
        "--shots", "4", "--steps", "2", "--seeds", "1", "--out", s(&csv), "--config", s(&f.config()),
    ]);
    assert!(stdout.starts_with("hsp\tnonep\t"), "{stdout}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("hsp.summary.json")).unwrap()).unwrap();
    let las = summary["mean_las"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&las));
    assert_eq!(summary["transfer_languages"].as_array().unwrap().len(), 1);

    fs::copy(f.root.join("run/trace.json"), out_dir.join("run.trace.json")).unwrap();
    let report = f.root.join("report");
    must(&["report", "--results", s(&out_dir), "--window", "6", "--out", s(&report)]);
    assert!(fs::read_dir(&report).unwrap().count() > 0);
}

#[test]
fn single_seed_prune_is_that_seed() {
    let f = fixture();
    let out = f.root.join("one/sva.json");
    fs::create_dir_all(out.parent().unwrap()).unwrap();
    must(&[
        "prune", "--lang", "sva", "--train", s(&f.file("sva-train.conllu")), "--dev", s(&f.file("sva-dev.conllu")),
        "--ckpt", s(&f.root.join("stage1.ckpt")), "--seeds", "1", "--out", s(&out), "--config", s(&f.config()),
    ]);
    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("one/sva.runs.json")).unwrap()).unwrap();
    let seed0: Vec<u64> = runs[0]["bits"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(mask_bits(&out), seed0);
    // The two-seed union from the fixture contains this seed's enabled heads.
    let union = mask_bits(&f.root.join("masks/sva.json"));
    assert!(seed0.iter().zip(&union).all(|(a, b)| b >= a));
}

fn mask_bits(path: &Path) -> Vec<u64> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["bits"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

#[test]
fn ablation_masks_follow_their_kind() {
    let f = fixture();
    for kind in ["random:1", "bad:1"] {
        let out = f.root.join(format!("ablate-{}", kind.replace(':', "-")));
        must(&[
            "ablate", "--kind", kind, "--mode", "nonep", "--masks", "static", "--langs", LANGS,
            "--data", s(&f.data()), "--maskdir", s(&f.root.join("masks")), "--init", s(&f.root.join("stage1.ckpt")),
            "--out", s(&out), "--config", s(&f.config()),
        ]);
        for l in LANGS.split(',') {
            let bits = mask_bits(&out.join(format!("masks/{l}.json")));
            assert_eq!(bits.iter().filter(|&&b| b == 0).count(), 1, "{kind} {l}");
            if kind.starts_with("bad") {
                let real = mask_bits(&f.root.join(format!("masks/{l}.json")));
                assert!(bits.iter().zip(&real).all(|(&b, &r)| b == 1 || r == 1), "{l}: bad mask overlaps the pruned set");
            }
        }
    }
    let bad = run(&[
        "ablate", "--kind", "sideways", "--mode", "nonep", "--masks", "static", "--langs", LANGS,
        "--data", s(&f.data()), "--maskdir", s(&f.root.join("masks")), "--init", s(&f.root.join("stage1.ckpt")),
        "--out", s(&f.root.join("never3")), "--config", s(&f.config()),
    ]);
    assert_eq!(code(&bad), 1);
}
