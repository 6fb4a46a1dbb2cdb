//! Hyperparameter sweep on the desk corpus: for each candidate trainer
//! configuration, trains the clean-only and fully-augmented objectives and
//! prints clean recall plus typo-robustness margins, split by whether an
//! entity word was hit, to pick defaults.

use std::collections::BTreeSet;
use std::time::Instant;

use typolab_core::evaluation::recall_at_k;
use typolab_core::synth::{generate, DeskDataset, SynthConfig};
use typolab_core::training::{train, TrainConfig, TrainMode};
use typolab_core::typogen::{TypoEngine, TypoSetting, TypoedQuestion};
use typolab_core::{DenseIndex, ModelParams, RunResult, Vocabulary};

struct Channels {
    /// Question ids with at least one edit on an entity word.
    entity_hit: BTreeSet<String>,
    /// Question ids edited only outside the entity words.
    safe_hit: BTreeSet<String>,
}

fn classify(data: &DeskDataset, engine: &TypoEngine, ts: &[TypoedQuestion]) -> Channels {
    let mut entity_hit = BTreeSet::new();
    let mut safe_hit = BTreeSet::new();
    for tq in ts {
        if !tq.is_edited() {
            continue;
        }
        let q = data.test.by_id(&tq.base_question_id).unwrap();
        let pid = data.test_qrels.relevant(&q.id).unwrap().iter().next().unwrap();
        let passage = data.passages.by_id(pid).unwrap();
        let entity = engine
            .eligible_indices(&q.text, TypoSetting::DiscriminativeUtterances, Some(&passage.text))
            .unwrap();
        if tq.edits.iter().any(|e| entity.contains(&e.word_index)) {
            entity_hit.insert(q.id.clone());
        } else {
            safe_hit.insert(q.id.clone());
        }
    }
    Channels { entity_hit, safe_hit }
}

struct Scores {
    clean: f64,
    typo_full: f64,
    typo_entity: f64,
    typo_safe: f64,
}

fn eval_model(
    params: &ModelParams,
    data: &DeskDataset,
    vocab: &Vocabulary,
    ts: &[TypoedQuestion],
    channels: &Channels,
) -> Scores {
    let index = DenseIndex::build(&data.passages, params, vocab).unwrap();
    let encode = |text: &str| {
        let ids = vocab.tokenize_text(text).ids;
        let ids = if ids.is_empty() { vec![vocab.unk_id()] } else { ids };
        params.encode_question(&ids, vocab.pad_id()).unwrap()
    };
    let clean_queries: Vec<Vec<f64>> = data.test.iter().map(|q| encode(&q.text)).collect();
    let mut clean_run = RunResult::new("clean");
    for (q, hits) in data.test.iter().zip(index.search_batch(&clean_queries, 10)) {
        clean_run.add(q.id.as_str(), hits);
    }
    let clean_report = recall_at_k(&clean_run, &data.test_qrels, 10).unwrap();

    let typo_queries: Vec<Vec<f64>> = ts.iter().map(|tq| encode(&tq.text)).collect();
    let mut typo_run = RunResult::new("typo");
    for (tq, hits) in ts.iter().zip(index.search_batch(&typo_queries, 10)) {
        typo_run.add(tq.base_question_id.as_str(), hits);
    }
    let typo_report = recall_at_k(&typo_run, &data.test_qrels, 10).unwrap();
    let sub = |ids: &BTreeSet<String>| {
        typo_report.per_query.restricted_to(ids.iter().map(String::as_str)).mean()
    };
    Scores {
        clean: clean_report.mean,
        typo_full: typo_report.mean,
        typo_entity: sub(&channels.entity_hit),
        typo_safe: sub(&channels.safe_hit),
    }
}

fn main() {
    let engine = TypoEngine::builtin();
    let data = generate(&SynthConfig::default());
    let vocab = Vocabulary::build(&data.passages, &data.train, 2048).unwrap();
    let ts = engine
        .build_testset(&data.test, TypoSetting::RandomWords, 0.2, 777, None)
        .unwrap();
    let channels = classify(&data, &engine, &ts);
    println!(
        "testset: {} edited ({} entity-hit, {} safe)",
        ts.iter().filter(|t| t.is_edited()).count(),
        channels.entity_hit.len(),
        channels.safe_hit.len()
    );
    // (batch_size, lr)
    let grid = [(64usize, 2e-3), (64, 3e-3), (64, 5e-3), (96, 2e-3), (128, 2e-3), (128, 3e-3)];
    for (batch, lr) in grid {
        let mut per_mode = Vec::new();
        let mut line = format!("B {batch:>3} lr {lr:<6}:");
        for mode in [TrainMode::Dr, TrainMode::DrAugCl] {
            let t = Instant::now();
            let mut config = TrainConfig::new(mode, 42);
            config.batch_size = batch;
            config.lr = lr;
            let outcome = train(
                &data.passages,
                &data.train,
                &data.train_qrels,
                None,
                &vocab,
                &engine,
                &config,
            )
            .unwrap();
            let s = eval_model(&outcome.params, &data, &vocab, &ts, &channels);
            line.push_str(&format!(
                "  {mode:?} clean {:.3} typo {:.3} ent {:.3} safe {:.3} [{:.0?}]",
                s.clean, s.typo_full, s.typo_entity, s.typo_safe,
                t.elapsed()
            ));
            per_mode.push(s);
        }
        let gain = per_mode[1].typo_full - per_mode[0].typo_full;
        let gap = (per_mode[1].clean - per_mode[0].clean).abs();
        line.push_str(&format!("  | gain {gain:+.3} gap {gap:.3}"));
        println!("{line}");
    }
}
