//! End-to-end behavior of the command-line binary: exit codes, config
//! validation messages, incremental re-runs, and artifact integrity
//! checking. Only the fast stages (ingest, build-vocab, perturb) are
//! exercised here so the suite stays quick.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_typolab"))
}

/// Write a tiny but fully valid corpus plus a config pointing at it.
/// Returns the config path.
fn write_fixture(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(
        data.join("passages.tsv"),
        "p1\tthe ledger balcor dunfel scroll was stored near quiet shelves zibquo marker\n\
         p2\tthe ledger garhol jinkam scroll was stored near quiet shelves xanvyr marker\n\
         p3\tthe folio balcor jinkam binder was kept near dusty racks jupkye marker\n\
         p4\tthe folio garhol dunfel binder was kept near dusty racks wibfyx marker\n",
    )
    .unwrap();
    fs::write(
        data.join("questions_train.tsv"),
        "t1\twhat is the balcor dunfel survey\t[\"zibquo\"]\n\
         t2\twho was the garhol jinkam report\t[\"xanvyr\"]\n\
         t3\twhich is the balcor jinkam study\t[\"jupkye\"]\n\
         t4\twhen was the garhol dunfel effort\t[\"wibfyx\"]\n",
    )
    .unwrap();
    fs::write(
        data.join("questions_test.tsv"),
        "e1\twho is the balcor dunfel record\t[\"zibquo\"]\n\
         e2\twhat was the garhol jinkam outcome\t[\"xanvyr\"]\n",
    )
    .unwrap();
    fs::write(data.join("qrels_train.tsv"), "t1\tp1\nt2\tp2\nt3\tp3\nt4\tp4\n").unwrap();
    fs::write(data.join("qrels_test.tsv"), "e1\tp1\ne2\tp2\n").unwrap();

    let config = dir.join("exp.toml");
    fs::write(
        &config,
        r#"
[paths]
passages = "data/passages.tsv"
train_questions = "data/questions_train.tsv"
test_questions = "data/questions_test.tsv"
train_qrels = "data/qrels_train.tsv"
test_qrels = "data/qrels_test.tsv"
out_dir = "out"

[model]
dim = 16
vocab_size = 300

[training]
mode = "DR"
batch_size = 2
steps = 4

[typo]
p = 0.5
settings = ["random_words", "non_stopwords"]

[seeds]
train = 1
testset = 2
"#,
    )
    .unwrap();
    config
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["ingest", "--help"][..]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?} should exit 0");
    }
    assert!(stdout_of(&run(&["--help"])).contains("experiment"));
}

#[test]
fn usage_errors_exit_one() {
    // Missing required --config.
    let out = run(&["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown subcommand.
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let body = fs::read_to_string(&config).unwrap().replace("mode = \"DR\"", "mode = \"DRX\"");
    fs::write(&config, body).unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("training.mode"), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_input_path_exits_one_and_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    fs::remove_file(tmp.path().join("data/passages.tsv")).unwrap();
    let out = run(&["ingest", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("paths.passages"), "stderr: {}", stderr_of(&out));
}

#[test]
fn malformed_data_exits_two() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    // Qrels referencing a question that does not exist is a data error.
    fs::write(tmp.path().join("data/qrels_test.tsv"), "ghost\tp1\n").unwrap();
    let out = run(&["ingest", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("ghost"));
}

#[test]
fn unchanged_rerun_skips_and_force_reruns() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();

    let first = run(&["ingest", "--config", cfg]);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr_of(&first));
    assert!(stdout_of(&first).contains("[ingest] done"));

    let second = run(&["ingest", "--config", cfg]);
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout_of(&second).contains("up to date"), "stdout: {}", stdout_of(&second));

    let forced = run(&["ingest", "--config", cfg, "--force"]);
    assert_eq!(forced.status.code(), Some(0));
    assert!(stdout_of(&forced).contains("[ingest] done"));
}

#[test]
fn edited_input_triggers_rerun() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();
    assert_eq!(run(&["ingest", "--config", cfg]).status.code(), Some(0));

    // Append a passage; the recorded input hash no longer matches.
    let passages = tmp.path().join("data/passages.tsv");
    let mut body = fs::read_to_string(&passages).unwrap();
    body.push_str("p5\tthe extra codex balcor garhol sheet was added near spare bins qapyl marker\n");
    fs::write(&passages, body).unwrap();

    let out = run(&["ingest", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("[ingest] done"), "stdout: {}", stdout_of(&out));
}

#[test]
fn tampered_artifact_is_rejected_with_exit_two() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();
    assert_eq!(run(&["ingest", "--config", cfg]).status.code(), Some(0));
    assert_eq!(run(&["build-vocab", "--config", cfg]).status.code(), Some(0));

    // Corrupt an ingest artifact behind the manifest's back.
    let artifact = tmp.path().join("out/corpus/passages.tsv");
    fs::write(&artifact, "p1\ttampered content\n").unwrap();

    let out = run(&["build-vocab", "--config", cfg]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("stale") && err.contains("ingest"), "stderr: {err}");
}

#[test]
fn consuming_stage_before_producer_names_the_missing_stage() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let out = run(&["build-vocab", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("ingest"), "stderr: {}", stderr_of(&out));
}

#[test]
fn perturb_writes_one_testset_per_setting() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();
    assert_eq!(run(&["ingest", "--config", cfg]).status.code(), Some(0));
    let out = run(&["perturb", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(tmp.path().join("out/typo/random_words.tsv").exists());
    assert!(tmp.path().join("out/typo/non_stopwords.tsv").exists());
    assert!(tmp.path().join("out/typo/manifest.json").exists());
}

#[test]
fn perturb_setting_override_restricts_output() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();
    assert_eq!(run(&["ingest", "--config", cfg]).status.code(), Some(0));
    let out = run(&[
        "perturb",
        "--config",
        cfg,
        "--typo-setting",
        "non_stopwords",
        "--seed",
        "99",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(tmp.path().join("out/typo/non_stopwords.tsv").exists());
    assert!(!tmp.path().join("out/typo/random_words.tsv").exists());
}

#[test]
fn out_dir_override_redirects_artifacts() {
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let elsewhere = tmp.path().join("elsewhere");
    let out = run(&[
        "ingest",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        elsewhere.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(elsewhere.join("corpus/passages.tsv").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn normalized_corpus_roundtrips_identically() {
    // Ingest twice into two trees: identical bytes (normalization is
    // deterministic).
    let tmp = TempDir::new().unwrap();
    let config = write_fixture(tmp.path());
    let cfg = config.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = run(&["ingest", "--config", cfg, "--out-dir", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }
    for name in ["passages.tsv", "questions_train.tsv", "qrels_test.tsv"] {
        let left = fs::read(a.join("corpus").join(name)).unwrap();
        let right = fs::read(b.join("corpus").join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}
