//! End-to-end drive of the library on the synthetic desk corpus: trains the
//! clean-only and fully-augmented objectives, then prints the clean/typo
//! retrieval quality per typo setting, the removal-baseline comparison, and
//! importance-bin margins. Used to sanity-check experimental margins before
//! wiring configs.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use typolab_core::analysis::{
    bin_by_importance, edited_question_ids, removal_baseline, removal_token_ids,
};
use typolab_core::corpus::{PassageCollection, QuestionSet, RelevanceJudgments};
use typolab_core::evaluation::{paired_t_test, recall_at_k, PerQueryScores};
use typolab_core::synth::{generate, SynthConfig};
use typolab_core::textproc::IdfTable;
use typolab_core::training::{train, TrainConfig, TrainMode};
use typolab_core::typogen::{TypoEngine, TypoSetting, TypoedQuestion};
use typolab_core::{DenseIndex, ModelParams, Vocabulary};

fn run_for_texts(
    params: &ModelParams,
    index: &DenseIndex,
    vocab: &Vocabulary,
    texts: &[(String, String)],
    tag: &str,
) -> typolab_core::RunResult {
    let queries: Vec<Vec<f64>> = texts
        .iter()
        .map(|(_, text)| {
            let ids = vocab.tokenize_text(text).ids;
            let ids = if ids.is_empty() { vec![vocab.unk_id()] } else { ids };
            params.encode_question(&ids, vocab.pad_id()).unwrap()
        })
        .collect();
    let ranked = index.search_batch(&queries, 10);
    let mut run = typolab_core::RunResult::new(tag);
    for ((qid, _), hits) in texts.iter().zip(ranked) {
        run.add(qid.as_str(), hits);
    }
    run
}

fn recall_scores(
    run: &typolab_core::RunResult,
    qrels: &RelevanceJudgments,
) -> (f64, PerQueryScores) {
    let report = recall_at_k(run, qrels, 10).unwrap();
    (report.mean, report.per_query)
}

fn main() {
    let t0 = Instant::now();
    let data = generate(&SynthConfig::default());
    println!(
        "corpus: {} passages, {}/{}/{} train/dev/test questions ({:.1?})",
        data.passages.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        t0.elapsed()
    );

    let t = Instant::now();
    let vocab = Vocabulary::build(&data.passages, &data.train, 1800).unwrap();
    println!("vocab: {} pieces ({:.1?})", vocab.len(), t.elapsed());

    let engine = TypoEngine::builtin();
    let mut models: BTreeMap<&str, ModelParams> = BTreeMap::new();
    for (name, mode) in [("DR", TrainMode::Dr), ("DR_Aug_CL", TrainMode::DrAugCl)] {
        let t = Instant::now();
        let mut config = TrainConfig::new(mode, 42);
        config.dev_every = 250;
        let outcome = train(
            &data.passages,
            &data.train,
            &data.train_qrels,
            Some((&data.dev, &data.dev_qrels)),
            &vocab,
            &engine,
            &config,
        )
        .unwrap();
        for e in &outcome.log {
            if let Some(dev) = e.dev_recall_at_10 {
                println!(
                    "  {name} step {:>4}: loss {:.4} (l1 {:.4} l2 {:.4} l3 {:.4}) dev r@10 {dev:.4}",
                    e.step, e.loss, e.l1, e.l2, e.l3
                );
            }
        }
        let last = outcome.log.last().unwrap();
        println!("trained {name}: final loss {:.4} ({:.1?})", last.loss, t.elapsed());
        models.insert(name, outcome.params);
    }

    let clean_texts: Vec<(String, String)> =
        data.test.iter().map(|q| (q.id.clone(), q.text.clone())).collect();

    let mut clean_scores: BTreeMap<&str, PerQueryScores> = BTreeMap::new();
    for (name, params) in &models {
        let index = DenseIndex::build(&data.passages, params, &vocab).unwrap();
        let run = run_for_texts(params, &index, &vocab, &clean_texts, "clean");
        let (mean, per_query) = recall_scores(&run, &data.test_qrels);
        println!("{name}: clean recall@10 = {mean:.4}");
        clean_scores.insert(name, per_query);
    }

    let mut testsets: BTreeMap<TypoSetting, Vec<TypoedQuestion>> = BTreeMap::new();
    for setting in TypoSetting::ALL {
        let ts = engine
            .build_testset(
                &data.test,
                setting,
                0.2,
                777,
                Some((&data.test_qrels, &data.passages)),
            )
            .unwrap();
        testsets.insert(setting, ts);
    }

    let mut setting_scores: BTreeMap<(&str, TypoSetting), PerQueryScores> = BTreeMap::new();
    for (name, params) in &models {
        let index = DenseIndex::build(&data.passages, params, &vocab).unwrap();
        for setting in TypoSetting::ALL {
            let ts = &testsets[&setting];
            let texts: Vec<(String, String)> =
                ts.iter().map(|tq| (tq.base_question_id.clone(), tq.text.clone())).collect();
            let run = run_for_texts(params, &index, &vocab, &texts, setting.as_str());
            let (_, per_query) = recall_scores(&run, &data.test_qrels);
            let edited = edited_question_ids(ts);
            let edited_mean = per_query
                .restricted_to(edited.iter().map(String::as_str))
                .mean();
            let clean_on_subset = clean_scores[name]
                .restricted_to(edited.iter().map(String::as_str))
                .mean();
            println!(
                "{name} / {:>26}: edited n={:>3} recall@10 = {edited_mean:.4} (clean on subset {clean_on_subset:.4})",
                setting.as_str(),
                edited.len(),
            );
            setting_scores.insert((name, setting), per_query);
        }
    }

    // Criterion-style gaps.
    let rand = TypoSetting::RandomWords;
    let edited_rand = edited_question_ids(&testsets[&rand]);
    let edited_refs: Vec<&str> = edited_rand.iter().map(String::as_str).collect();
    let dr_typo = setting_scores[&("DR", rand)].restricted_to(edited_refs.iter().copied());
    let aug_typo = setting_scores[&("DR_Aug_CL", rand)].restricted_to(edited_refs.iter().copied());
    let gain = aug_typo.mean() - dr_typo.mean();
    let sig = paired_t_test(&aug_typo, &dr_typo).unwrap();
    println!("\naug typo gain (random, edited) = {gain:+.4}  t={:.3} p={:.2e}", sig.t, sig.p);
    let clean_gap = clean_scores["DR_Aug_CL"].mean() - clean_scores["DR"].mean();
    println!("aug clean delta (all) = {clean_gap:+.4}");

    // Removal baseline vs augmented model, random setting, edited only.
    let variants = removal_baseline(&testsets[&rand], &data.test).unwrap();
    let aug = &models["DR_Aug_CL"];
    let index = DenseIndex::build(&data.passages, aug, &vocab).unwrap();
    let removal_texts: Vec<(String, String)> = variants
        .iter()
        .map(|v| (v.base_question_id.clone(), v.text.clone()))
        .collect();
    let queries: Vec<Vec<f64>> = variants
        .iter()
        .map(|v| {
            aug.encode_question(&removal_token_ids(v, &vocab), vocab.pad_id()).unwrap()
        })
        .collect();
    let ranked = index.search_batch(&queries, 10);
    let mut removal_run = typolab_core::RunResult::new("removal");
    for ((qid, _), hits) in removal_texts.iter().zip(ranked) {
        removal_run.add(qid.as_str(), hits);
    }
    let (_, removal_scores) = recall_scores(&removal_run, &data.test_qrels);
    let removal_edited = removal_scores.restricted_to(edited_refs.iter().copied());
    println!(
        "removal baseline (edited) = {:.4} vs aug typo = {:.4}  margin {:+.4}",
        removal_edited.mean(),
        aug_typo.mean(),
        aug_typo.mean() - removal_edited.mean()
    );

    // Importance-bin margins (aug minus removal per bin).
    let idf = IdfTable::build(&data.passages);
    let systems: BTreeMap<String, &PerQueryScores> = [
        ("aug".to_owned(), &setting_scores[&("DR_Aug_CL", rand)]),
        ("removal".to_owned(), &removal_scores),
    ]
    .into_iter()
    .collect();
    let report =
        bin_by_importance(&testsets[&rand], &data.test, &systems, &idf, None).unwrap();
    for bin in &report.bins {
        let aug_m = bin.per_system_mean["aug"];
        let rem_m = bin.per_system_mean["removal"];
        let margin = match (aug_m, rem_m) {
            (Some(a), Some(r)) => format!("{:+.4}", a - r),
            _ => "n/a".into(),
        };
        println!(
            "importance bin {:>18} n={:>3}: aug {:?} removal {:?} margin {margin}",
            bin.label, bin.count, aug_m, rem_m
        );
    }

    // Kept for API parity with the full pipeline.
    let _: (&PassageCollection, &QuestionSet, &BTreeSet<String>) =
        (&data.passages, &data.test, &edited_rand);
    println!("\ntotal {:.1?}", t0.elapsed());
}
