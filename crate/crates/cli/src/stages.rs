//! Pipeline stages. Each stage reads files, writes artifacts plus a
//! manifest into its own directory under the configured output root, and
//! is skipped when nothing it depends on has changed (unless forced).
//!
//! Layout under `out_dir`:
//! ```text
//! corpus/    normalized passages, question splits, judgments   (ingest)
//! vocab/     vocab.txt                                         (build-vocab)
//! typo/      one typoed testset per setting                    (perturb)
//! train/<mode>/   checkpoint.bin, train_log.csv                (train)
//! index/<mode>/   index.bin                                    (index)
//! runs/<mode>/    original + per-setting + removal run files   (search)
//! eval/<mode>/    eval.csv, significance.csv                   (evaluate)
//! analysis/<mode>/ trend.csv, freq_bins.csv, importance_bins.csv (analyze)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use typolab_core::analysis::{
    bin_by_frequency, bin_by_importance, edited_question_ids, removal_baseline, removal_token_ids,
    trend_rows, write_trend_csv, TrainFrequencies, TrendRow, DEFAULT_FREQUENCY_EDGES,
};
use typolab_core::corpus::{PassageCollection, QuestionSet, RelevanceJudgments};
use typolab_core::evaluation::{
    answer_recall_at_k, mrr_at_k, paired_t_test, recall_at_k, write_significance_report,
    MetricReport, PerQueryScores, SignificanceRow,
};
use typolab_core::textproc::{IdfTable, Stopwords};
use typolab_core::training::{train, TrainConfig};
use typolab_core::typogen::{
    load_testset, save_testset, KeyboardAdjacency, MisspellingDictionary, TypoEngine, TypoSetting,
    TypoedQuestion,
};
use typolab_core::{DenseIndex, ModelParams, RunResult, Vocabulary};

use crate::config::ResolvedConfig;
use crate::error::CliError;
use crate::manifest::{sha256_file, stage_is_fresh, verify_produced, Manifest};

/// Whether a stage did work or was already up to date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

pub struct Pipeline<'a> {
    pub cfg: &'a ResolvedConfig,
    pub force: bool,
}

/// The pipeline stages in execution order.
pub const STAGE_ORDER: [&str; 8] =
    ["ingest", "build-vocab", "perturb", "train", "index", "search", "evaluate", "analyze"];

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a ResolvedConfig, force: bool) -> Self {
        Pipeline { cfg, force }
    }

    fn corpus_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("corpus")
    }

    fn vocab_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("vocab")
    }

    fn typo_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("typo")
    }

    fn mode_dir(&self, stage: &str) -> PathBuf {
        self.cfg.out_dir.join(stage).join(self.cfg.mode.as_str())
    }

    fn testset_file(setting: TypoSetting) -> String {
        format!("{}.tsv", setting.as_str())
    }

    /// Generic stage driver: freshness check, directory setup, body, then
    /// manifest with input/output hashes.
    fn run_stage(
        &self,
        stage: &str,
        dir: &Path,
        params: BTreeMap<String, String>,
        inputs: &[(String, PathBuf)],
        outputs: &[String],
        body: impl FnOnce() -> Result<(), CliError>,
    ) -> Result<StageStatus, CliError> {
        let manifest_path = dir.join("manifest.json");
        let input_refs: Vec<(String, &Path)> =
            inputs.iter().map(|(label, path)| (label.clone(), path.as_path())).collect();
        if !self.force && stage_is_fresh(&manifest_path, stage, &params, &input_refs, dir) {
            return Ok(StageStatus::Skipped);
        }
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
        body()?;
        let mut manifest = Manifest::new(stage, params);
        for (label, path) in inputs {
            manifest.inputs.insert(label.clone(), sha256_file(path)?);
        }
        for name in outputs {
            manifest.outputs.insert(name.clone(), sha256_file(&dir.join(name))?);
        }
        manifest.save(&manifest_path)?;
        Ok(StageStatus::Ran)
    }

    /// Check that a corpus artifact still matches the ingest manifest.
    fn corpus_input(&self, name: &str) -> Result<(String, PathBuf), CliError> {
        let dir = self.corpus_dir();
        let path = dir.join(name);
        verify_produced(&dir.join("manifest.json"), "ingest", name, &path)?;
        Ok((name.to_owned(), path))
    }

    fn vocab_input(&self) -> Result<(String, PathBuf), CliError> {
        let dir = self.vocab_dir();
        let path = dir.join("vocab.txt");
        verify_produced(&dir.join("manifest.json"), "build-vocab", "vocab.txt", &path)?;
        Ok(("vocab.txt".to_owned(), path))
    }

    fn testset_input(&self, setting: TypoSetting) -> Result<(String, PathBuf), CliError> {
        let dir = self.typo_dir();
        let name = Self::testset_file(setting);
        let path = dir.join(&name);
        verify_produced(&dir.join("manifest.json"), "perturb", &name, &path)?;
        Ok((name, path))
    }

    fn produced_input(
        &self,
        stage: &str,
        name: &str,
    ) -> Result<(String, PathBuf), CliError> {
        let dir = self.mode_dir(stage);
        let path = dir.join(name);
        verify_produced(&dir.join("manifest.json"), stage, name, &path)?;
        Ok((format!("{stage}/{name}"), path))
    }

    // ------------------------------------------------------------------
    // ingest

    pub fn ingest(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.corpus_dir();
        let mut inputs = vec![
            ("passages".to_owned(), cfg.passages.clone()),
            ("train_questions".to_owned(), cfg.train_questions.clone()),
            ("test_questions".to_owned(), cfg.test_questions.clone()),
            ("train_qrels".to_owned(), cfg.train_qrels.clone()),
            ("test_qrels".to_owned(), cfg.test_qrels.clone()),
        ];
        let mut outputs = vec![
            "passages.tsv".to_owned(),
            "questions_train.tsv".to_owned(),
            "questions_test.tsv".to_owned(),
            "qrels_train.tsv".to_owned(),
            "qrels_test.tsv".to_owned(),
        ];
        if let Some((dev_q, dev_r)) = &cfg.dev {
            inputs.push(("dev_questions".to_owned(), dev_q.clone()));
            inputs.push(("dev_qrels".to_owned(), dev_r.clone()));
            outputs.push("questions_dev.tsv".to_owned());
            outputs.push("qrels_dev.tsv".to_owned());
        }
        self.run_stage("ingest", &dir, BTreeMap::new(), &inputs, &outputs, || {
            let passages = load_passages(&cfg.passages)?;
            let splits = [
                (&cfg.train_questions, &cfg.train_qrels, "train"),
                (&cfg.test_questions, &cfg.test_qrels, "test"),
            ];
            let mut loaded = Vec::new();
            for (q_path, r_path, split) in splits {
                loaded.push((load_questions(q_path)?, load_qrels(r_path)?, split));
            }
            if let Some((dev_q, dev_r)) = &cfg.dev {
                loaded.push((load_questions(dev_q)?, load_qrels(dev_r)?, "dev"));
            }
            for (questions, qrels, split) in &loaded {
                validate_qrels(questions, &passages, qrels, split)?;
            }
            save_as(&dir.join("passages.tsv"), |p| passages.save(p))?;
            for (questions, qrels, split) in &loaded {
                save_as(&dir.join(format!("questions_{split}.tsv")), |p| questions.save(p))?;
                save_as(&dir.join(format!("qrels_{split}.tsv")), |p| qrels.save(p))?;
            }
            Ok(())
        })
    }

    // ------------------------------------------------------------------
    // build-vocab

    pub fn build_vocab(&self) -> Result<StageStatus, CliError> {
        let dir = self.vocab_dir();
        let inputs = vec![
            self.corpus_input("passages.tsv")?,
            self.corpus_input("questions_train.tsv")?,
        ];
        let params = BTreeMap::from([(
            "vocab_size".to_owned(),
            self.cfg.vocab_size.to_string(),
        )]);
        let outputs = vec!["vocab.txt".to_owned()];
        self.run_stage("build-vocab", &dir, params, &inputs, &outputs, || {
            let passages = load_passages(&inputs[0].1)?;
            let questions = load_questions(&inputs[1].1)?;
            let vocab = Vocabulary::build(&passages, &questions, self.cfg.vocab_size)
                .map_err(|e| CliError::data(format!("building vocabulary: {e}")))?;
            save_as(&dir.join("vocab.txt"), |p| vocab.save(p))
        })
    }

    // ------------------------------------------------------------------
    // perturb

    fn typo_engine(&self) -> Result<TypoEngine, CliError> {
        let cfg = self.cfg;
        let adjacency = match &cfg.keyboard_adjacency {
            Some(p) => KeyboardAdjacency::from_path(p)
                .map_err(|e| CliError::data(format!("keyboard adjacency table: {e}")))?,
            None => KeyboardAdjacency::builtin(),
        };
        let dictionary = match &cfg.misspellings {
            Some(p) => MisspellingDictionary::from_path(p)
                .map_err(|e| CliError::data(format!("misspelling dictionary: {e}")))?,
            None => MisspellingDictionary::builtin(),
        };
        let stopwords = match &cfg.stopwords {
            Some(p) => Stopwords::from_path(p)
                .map_err(|e| CliError::data(format!("stopword list: {e}")))?,
            None => Stopwords::builtin(),
        };
        Ok(TypoEngine { adjacency, dictionary, stopwords })
    }

    pub fn perturb(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.typo_dir();
        let mut inputs = vec![
            self.corpus_input("questions_test.tsv")?,
            self.corpus_input("qrels_test.tsv")?,
            self.corpus_input("passages.tsv")?,
        ];
        for (label, path) in [
            ("keyboard_adjacency", &cfg.keyboard_adjacency),
            ("misspellings", &cfg.misspellings),
            ("stopwords", &cfg.stopwords),
        ] {
            if let Some(p) = path {
                inputs.push((label.to_owned(), p.clone()));
            }
        }
        let params = BTreeMap::from([
            ("p".to_owned(), cfg.typo_p.to_string()),
            ("seed".to_owned(), cfg.testset_seed.to_string()),
            (
                "settings".to_owned(),
                cfg.settings.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
            ),
        ]);
        let outputs: Vec<String> = cfg.settings.iter().map(|&s| Self::testset_file(s)).collect();
        self.run_stage("perturb", &dir, params, &inputs, &outputs, || {
            let questions = load_questions(&inputs[0].1)?;
            let qrels = load_qrels(&inputs[1].1)?;
            let passages = load_passages(&inputs[2].1)?;
            let engine = self.typo_engine()?;
            for &setting in &cfg.settings {
                let testset = engine
                    .build_testset(
                        &questions,
                        setting,
                        cfg.typo_p,
                        cfg.testset_seed,
                        Some((&qrels, &passages)),
                    )
                    .map_err(|e| CliError::data(format!("building {setting} testset: {e}")))?;
                save_as(&dir.join(Self::testset_file(setting)), |p| save_testset(&testset, p))?;
            }
            Ok(())
        })
    }

    // ------------------------------------------------------------------
    // train

    pub fn train(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.mode_dir("train");
        let mut inputs = vec![
            self.corpus_input("passages.tsv")?,
            self.corpus_input("questions_train.tsv")?,
            self.corpus_input("qrels_train.tsv")?,
            self.vocab_input()?,
        ];
        if cfg.dev.is_some() {
            inputs.push(self.corpus_input("questions_dev.tsv")?);
            inputs.push(self.corpus_input("qrels_dev.tsv")?);
        }
        let weights = cfg
            .weights
            .map(|w| format!("{},{},{}", w.w1, w.w2, w.w3))
            .unwrap_or_else(|| "equal".to_owned());
        let params = BTreeMap::from([
            ("mode".to_owned(), cfg.mode.to_string()),
            ("dim".to_owned(), cfg.dim.to_string()),
            ("batch_size".to_owned(), cfg.batch_size.to_string()),
            ("steps".to_owned(), cfg.steps.to_string()),
            ("lr".to_owned(), cfg.lr.to_string()),
            ("warmup_fraction".to_owned(), cfg.warmup_fraction.to_string()),
            ("weights".to_owned(), weights),
            ("typo_p".to_owned(), cfg.train_typo_p.to_string()),
            ("seed".to_owned(), cfg.train_seed.to_string()),
            ("dev_every".to_owned(), cfg.dev_every.to_string()),
        ]);
        let outputs = vec!["checkpoint.bin".to_owned(), "train_log.csv".to_owned()];
        self.run_stage("train", &dir, params, &inputs, &outputs, || {
            let passages = load_passages(&inputs[0].1)?;
            let questions = load_questions(&inputs[1].1)?;
            let qrels = load_qrels(&inputs[2].1)?;
            let vocab = load_vocab(&inputs[3].1)?;
            let dev_data = cfg
                .dev
                .as_ref()
                .map(|_| -> Result<_, CliError> {
                    Ok((load_questions(&inputs[4].1)?, load_qrels(&inputs[5].1)?))
                })
                .transpose()?;
            let engine = self.typo_engine()?;
            let mut tc = TrainConfig::new(cfg.mode, cfg.train_seed);
            tc.dim = cfg.dim;
            tc.batch_size = cfg.batch_size;
            tc.steps = cfg.steps;
            tc.lr = cfg.lr;
            tc.warmup_fraction = cfg.warmup_fraction;
            tc.weights = cfg.weights;
            tc.typo_p = cfg.train_typo_p;
            tc.dev_every = cfg.dev_every;
            tc.config_hash = cfg.config_hash;
            let outcome = train(
                &passages,
                &questions,
                &qrels,
                dev_data.as_ref().map(|(q, r)| (q, r)),
                &vocab,
                &engine,
                &tc,
            )
            .map_err(|e| CliError::runtime(format!("training failed: {e}")))?;
            save_as(&dir.join("checkpoint.bin"), |p| outcome.params.save(p))?;
            save_as(&dir.join("train_log.csv"), |p| outcome.write_log(p))
        })
    }

    // ------------------------------------------------------------------
    // index

    pub fn index(&self) -> Result<StageStatus, CliError> {
        let dir = self.mode_dir("index");
        let inputs = vec![
            self.corpus_input("passages.tsv")?,
            self.vocab_input()?,
            self.produced_input("train", "checkpoint.bin")?,
        ];
        let params = self.cfg.mode_params();
        let outputs = vec!["index.bin".to_owned()];
        self.run_stage("index", &dir, params, &inputs, &outputs, || {
            let passages = load_passages(&inputs[0].1)?;
            let vocab = load_vocab(&inputs[1].1)?;
            let model = load_model(&inputs[2].1)?;
            let index = DenseIndex::build(&passages, &model, &vocab)
                .map_err(|e| CliError::runtime(format!("building index: {e}")))?;
            save_as(&dir.join("index.bin"), |p| index.save(p))
        })
    }

    // ------------------------------------------------------------------
    // search

    fn run_file(setting: Option<TypoSetting>, removal: bool) -> String {
        match (setting, removal) {
            (None, _) => "original.tsv".to_owned(),
            (Some(s), false) => format!("{}.tsv", s.as_str()),
            (Some(s), true) => format!("removal_{}.tsv", s.as_str()),
        }
    }

    pub fn search(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.mode_dir("runs");
        let mut inputs = vec![
            self.corpus_input("questions_test.tsv")?,
            self.vocab_input()?,
            self.produced_input("train", "checkpoint.bin")?,
            self.produced_input("index", "index.bin")?,
        ];
        for &setting in &cfg.settings {
            inputs.push(self.testset_input(setting)?);
        }
        let mut params = cfg.mode_params();
        params.insert("k".to_owned(), cfg.max_cutoff().to_string());
        let mut outputs = vec![Self::run_file(None, false)];
        for &setting in &cfg.settings {
            outputs.push(Self::run_file(Some(setting), false));
            outputs.push(Self::run_file(Some(setting), true));
        }
        self.run_stage("search", &dir, params, &inputs, &outputs, || {
            let questions = load_questions(&inputs[0].1)?;
            let vocab = load_vocab(&inputs[1].1)?;
            let model = load_model(&inputs[2].1)?;
            let index = DenseIndex::load(&inputs[3].1)
                .map_err(|e| CliError::data(format!("loading index: {e}")))?;
            let k = cfg.max_cutoff();

            let encode = |text: &str| -> Result<Vec<f64>, CliError> {
                let ids = vocab.tokenize_text(text).ids;
                let ids = if ids.is_empty() { vec![vocab.unk_id()] } else { ids };
                model
                    .encode_question(&ids, vocab.pad_id())
                    .map_err(|e| CliError::runtime(format!("encoding query: {e}")))
            };
            let search_texts = |texts: &[(String, String)],
                                tag: &str|
             -> Result<RunResult, CliError> {
                let mut queries = Vec::with_capacity(texts.len());
                for (_, text) in texts {
                    queries.push(encode(text)?);
                }
                let ranked = index.search_batch(&queries, k);
                let mut run = RunResult::new(tag);
                for ((qid, _), hits) in texts.iter().zip(ranked) {
                    run.add(qid.as_str(), hits);
                }
                Ok(run)
            };

            let clean: Vec<(String, String)> =
                questions.iter().map(|q| (q.id.clone(), q.text.clone())).collect();
            let run = search_texts(&clean, "original")?;
            save_as(&dir.join(Self::run_file(None, false)), |p| run.save(p))?;

            for (label, path) in &inputs[4..] {
                let testset = load_typo_testset(path)?;
                let setting_name = label.trim_end_matches(".tsv");
                let typo_texts: Vec<(String, String)> = testset
                    .iter()
                    .map(|tq| (tq.base_question_id.clone(), tq.text.clone()))
                    .collect();
                let run = search_texts(&typo_texts, setting_name)?;
                save_as(&dir.join(label.as_str()), |p| run.save(p))?;

                let variants = removal_baseline(&testset, &questions)
                    .map_err(|e| CliError::data(format!("removal baseline: {e}")))?;
                let mut queries = Vec::with_capacity(variants.len());
                for v in &variants {
                    queries.push(
                        model
                            .encode_question(&removal_token_ids(v, &vocab), vocab.pad_id())
                            .map_err(|e| CliError::runtime(format!("encoding query: {e}")))?,
                    );
                }
                let ranked = index.search_batch(&queries, k);
                let mut removal_run = RunResult::new(&format!("removal_{setting_name}"));
                for (v, hits) in variants.iter().zip(ranked) {
                    removal_run.add(v.base_question_id.as_str(), hits);
                }
                save_as(&dir.join(format!("removal_{label}")), |p| removal_run.save(p))?;
            }
            Ok(())
        })
    }

    // ------------------------------------------------------------------
    // evaluate

    fn metric_report(
        &self,
        metric: &str,
        k: usize,
        run: &RunResult,
        qrels: &RelevanceJudgments,
        questions: &QuestionSet,
        passages: &PassageCollection,
    ) -> Result<MetricReport, CliError> {
        let report = match metric {
            "mrr" => mrr_at_k(run, qrels, k),
            "recall" => recall_at_k(run, qrels, k),
            "answer_recall" => answer_recall_at_k(run, questions, passages, k),
            other => return Err(CliError::config(format!("unknown metric {other:?}"))),
        };
        report.map_err(|e| CliError::data(format!("scoring {metric}@{k}: {e}")))
    }

    pub fn evaluate(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.mode_dir("eval");
        let mut inputs = vec![
            self.corpus_input("questions_test.tsv")?,
            self.corpus_input("qrels_test.tsv")?,
            self.corpus_input("passages.tsv")?,
        ];
        let mut run_names = vec![Self::run_file(None, false)];
        for &setting in &cfg.settings {
            run_names.push(Self::run_file(Some(setting), false));
            run_names.push(Self::run_file(Some(setting), true));
        }
        for name in &run_names {
            inputs.push(self.produced_input("runs", name)?);
        }
        let mut params = cfg.mode_params();
        params.insert("metrics".to_owned(), cfg.metrics.join(","));
        params.insert(
            "cutoffs".to_owned(),
            cfg.cutoffs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        let outputs = vec!["eval.csv".to_owned(), "significance.csv".to_owned()];
        self.run_stage("evaluate", &dir, params, &inputs, &outputs, || {
            let questions = load_questions(&inputs[0].1)?;
            let qrels = load_qrels(&inputs[1].1)?;
            let passages = load_passages(&inputs[2].1)?;

            let mut reports: Vec<(String, MetricReport)> = Vec::new();
            for (label, path) in &inputs[3..] {
                let run = load_run(path)?;
                let run_name = label
                    .strip_prefix("runs/")
                    .unwrap_or(label)
                    .trim_end_matches(".tsv")
                    .to_owned();
                for metric in &cfg.metrics {
                    for &k in &cfg.cutoffs {
                        let report =
                            self.metric_report(metric, k, &run, &qrels, &questions, &passages)?;
                        reports.push((run_name.clone(), report));
                    }
                }
            }

            // eval.csv with a leading run column.
            let mut eval_rows = String::from("run,metric,k,mean,n\n");
            for (run_name, r) in &reports {
                eval_rows.push_str(&format!(
                    "{run_name},{},{},{},{}\n",
                    r.metric,
                    r.k,
                    r.mean,
                    r.per_query.len()
                ));
            }
            fs::write(dir.join("eval.csv"), eval_rows)
                .map_err(|e| CliError::runtime(format!("writing eval.csv: {e}")))?;

            // Paired significance of every non-original run against the
            // original, per metric and cutoff.
            let mut significance = Vec::new();
            for metric in &cfg.metrics {
                for &k in &cfg.cutoffs {
                    let originals: Vec<&MetricReport> = reports
                        .iter()
                        .filter(|(name, r)| {
                            name == "original" && &r.metric == metric && r.k == k
                        })
                        .map(|(_, r)| r)
                        .collect();
                    let original = originals.first().expect("original run is always scored");
                    for (run_name, r) in &reports {
                        if run_name == "original" || &r.metric != metric || r.k != k {
                            continue;
                        }
                        let test = paired_t_test(&r.per_query, &original.per_query)
                            .map_err(|e| CliError::data(format!("t-test failed: {e}")))?;
                        significance.push(SignificanceRow {
                            system_a: format!("{}/{run_name}", cfg.mode),
                            system_b: format!("{}/original", cfg.mode),
                            metric: format!("{metric}@{k}"),
                            t: test.t,
                            p: test.p,
                        });
                    }
                }
            }
            write_significance_report(&significance, &dir.join("significance.csv"))
                .map_err(|e| CliError::runtime(format!("writing significance.csv: {e}")))
        })
    }

    // ------------------------------------------------------------------
    // analyze

    pub fn analyze(&self) -> Result<StageStatus, CliError> {
        let cfg = self.cfg;
        let dir = self.mode_dir("analysis");
        let mut inputs = vec![
            self.corpus_input("questions_train.tsv")?,
            self.corpus_input("questions_test.tsv")?,
            self.corpus_input("qrels_test.tsv")?,
            self.corpus_input("passages.tsv")?,
        ];
        let testset_start = inputs.len();
        for &setting in &cfg.settings {
            inputs.push(self.testset_input(setting)?);
        }
        let runs_start = inputs.len();
        let mut run_names = vec![Self::run_file(None, false)];
        for &setting in &cfg.settings {
            run_names.push(Self::run_file(Some(setting), false));
            run_names.push(Self::run_file(Some(setting), true));
        }
        for name in &run_names {
            inputs.push(self.produced_input("runs", name)?);
        }
        let focus = cfg.settings[0];
        let k = cfg.max_cutoff();
        let mut params = cfg.mode_params();
        params.insert("k".to_owned(), k.to_string());
        params.insert("bin_setting".to_owned(), focus.as_str().to_owned());
        let outputs = vec![
            "trend.csv".to_owned(),
            "freq_bins.csv".to_owned(),
            "importance_bins.csv".to_owned(),
        ];
        self.run_stage("analyze", &dir, params, &inputs, &outputs, || {
            let train_questions = load_questions(&inputs[0].1)?;
            let questions = load_questions(&inputs[1].1)?;
            let qrels = load_qrels(&inputs[2].1)?;
            let passages = load_passages(&inputs[3].1)?;
            let testsets: Vec<Vec<TypoedQuestion>> = cfg
                .settings
                .iter()
                .enumerate()
                .map(|(i, _)| load_typo_testset(&inputs[testset_start + i].1))
                .collect::<Result<_, _>>()?;
            let runs: Vec<RunResult> = run_names
                .iter()
                .enumerate()
                .map(|(i, _)| load_run(&inputs[runs_start + i].1))
                .collect::<Result<_, _>>()?;

            let recall = |run: &RunResult| -> Result<PerQueryScores, CliError> {
                Ok(recall_at_k(run, &qrels, k)
                    .map_err(|e| CliError::data(format!("scoring recall@{k}: {e}")))?
                    .per_query)
            };
            let original_scores = recall(&runs[0])?;

            // trend.csv: per-setting damage relative to the clean run.
            let mut rows: Vec<TrendRow> = Vec::new();
            let edited_sets: Vec<_> =
                testsets.iter().map(|ts| edited_question_ids(ts)).collect();
            let mut setting_scores = Vec::new();
            for (i, &setting) in cfg.settings.iter().enumerate() {
                // Typo runs come first in each per-setting pair.
                let scores = recall(&runs[1 + 2 * i])?;
                setting_scores.push((setting, scores));
            }
            let triples: Vec<(TypoSetting, &PerQueryScores, &std::collections::BTreeSet<String>)> =
                setting_scores
                    .iter()
                    .enumerate()
                    .map(|(i, (s, sc))| (*s, sc, &edited_sets[i]))
                    .collect();
            rows.extend(
                trend_rows(cfg.mode.as_str(), &format!("recall@{k}"), &original_scores, &triples)
                    .map_err(|e| CliError::data(format!("trend analysis: {e}")))?,
            );
            write_trend_csv(&rows, &dir.join("trend.csv"))
                .map_err(|e| CliError::runtime(format!("writing trend.csv: {e}")))?;

            // Frequency and importance bins on the first configured setting,
            // comparing the clean run, the typoed run, and the removal run.
            let focus_idx = 0;
            let focus_testset: Vec<TypoedQuestion> = testsets[focus_idx]
                .iter()
                .filter(|tq| tq.is_edited())
                .cloned()
                .collect();
            let typo_scores = &setting_scores[focus_idx].1;
            let removal_scores = recall(&runs[2 + 2 * focus_idx])?;
            let systems: BTreeMap<String, &PerQueryScores> = BTreeMap::from([
                ("original".to_owned(), &original_scores),
                ("typoed".to_owned(), typo_scores),
                ("removal".to_owned(), &removal_scores),
            ]);

            let freqs = TrainFrequencies::build(&train_questions);
            let freq_report =
                bin_by_frequency(&focus_testset, &systems, &freqs, &DEFAULT_FREQUENCY_EDGES)
                    .map_err(|e| CliError::data(format!("frequency bins: {e}")))?;
            freq_report
                .write_csv(&dir.join("freq_bins.csv"))
                .map_err(|e| CliError::runtime(format!("writing freq_bins.csv: {e}")))?;

            let idf = IdfTable::build(&passages);
            let imp_report =
                bin_by_importance(&focus_testset, &questions, &systems, &idf, None)
                    .map_err(|e| CliError::data(format!("importance bins: {e}")))?;
            imp_report
                .write_csv(&dir.join("importance_bins.csv"))
                .map_err(|e| CliError::runtime(format!("writing importance_bins.csv: {e}")))?;
            Ok(())
        })
    }

    // ------------------------------------------------------------------
    // experiment

    /// Run every stage in order; returns `(stage name, status)` pairs.
    pub fn experiment(&self) -> Result<Vec<(&'static str, StageStatus)>, CliError> {
        let mut statuses = Vec::with_capacity(STAGE_ORDER.len());
        statuses.push(("ingest", self.ingest()?));
        statuses.push(("build-vocab", self.build_vocab()?));
        statuses.push(("perturb", self.perturb()?));
        statuses.push(("train", self.train()?));
        statuses.push(("index", self.index()?));
        statuses.push(("search", self.search()?));
        statuses.push(("evaluate", self.evaluate()?));
        statuses.push(("analyze", self.analyze()?));
        Ok(statuses)
    }
}

// ----------------------------------------------------------------------
// Loading and saving helpers with exit-code-correct error mapping: input
// parsing and validation problems are data errors, write failures are
// runtime errors.

fn load_passages(path: &Path) -> Result<PassageCollection, CliError> {
    PassageCollection::load(path)
        .map_err(|e| CliError::data(format!("loading passages {}: {e}", path.display())))
}

fn load_questions(path: &Path) -> Result<QuestionSet, CliError> {
    QuestionSet::load(path)
        .map_err(|e| CliError::data(format!("loading questions {}: {e}", path.display())))
}

fn load_qrels(path: &Path) -> Result<RelevanceJudgments, CliError> {
    RelevanceJudgments::load(path)
        .map_err(|e| CliError::data(format!("loading qrels {}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path)
        .map_err(|e| CliError::data(format!("loading vocabulary {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    ModelParams::load(path)
        .map_err(|e| CliError::data(format!("loading checkpoint {}: {e}", path.display())))
}

fn load_run(path: &Path) -> Result<RunResult, CliError> {
    RunResult::load(path)
        .map_err(|e| CliError::data(format!("loading run {}: {e}", path.display())))
}

fn load_typo_testset(path: &Path) -> Result<Vec<TypoedQuestion>, CliError> {
    load_testset(path)
        .map_err(|e| CliError::data(format!("loading typo testset {}: {e}", path.display())))
}

fn save_as<E: std::fmt::Display>(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), CliError> {
    write(path).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

/// Cross-reference judgments against their question set and the passage
/// collection.
fn validate_qrels(
    questions: &QuestionSet,
    passages: &PassageCollection,
    qrels: &RelevanceJudgments,
    split: &str,
) -> Result<(), CliError> {
    for (qid, pids) in qrels.iter() {
        if questions.by_id(qid).is_none() {
            return Err(CliError::data(format!(
                "{split} qrels reference unknown question {qid:?}"
            )));
        }
        for pid in pids {
            if passages.by_id(pid).is_none() {
                return Err(CliError::data(format!(
                    "{split} qrels reference unknown passage {pid:?} (question {qid:?})"
                )));
            }
        }
    }
    Ok(())
}
