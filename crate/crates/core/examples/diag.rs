//! Diagnoses why contrastive-loss training can fail global retrieval while
//! in-batch losses converge: compares train-set vs test-set retrieval, and
//! inspects embedding norms for entity words vs template words.

use typolab_core::evaluation::recall_at_k;
use typolab_core::synth::{generate, SynthConfig};
use typolab_core::training::{train, TrainConfig, TrainMode};
use typolab_core::typogen::TypoEngine;
use typolab_core::{
    DenseIndex, ModelParams, QuestionSet, RelevanceJudgments, RunResult, Vocabulary,
};

fn recall_for(
    questions: &QuestionSet,
    qrels: &RelevanceJudgments,
    index: &DenseIndex,
    params: &ModelParams,
    vocab: &Vocabulary,
) -> f64 {
    let queries: Vec<Vec<f64>> = questions
        .iter()
        .map(|q| {
            params
                .encode_question(&vocab.tokenize_text(&q.text).ids, vocab.pad_id())
                .unwrap()
        })
        .collect();
    let mut run = RunResult::new("diag");
    for (q, hits) in questions.iter().zip(index.search_batch(&queries, 10)) {
        run.add(q.id.as_str(), hits);
    }
    recall_at_k(&run, qrels, 10).unwrap().mean
}

fn main() {
    let data = generate(&SynthConfig::default());
    let vocab = Vocabulary::build(&data.passages, &data.train, 1800).unwrap();
    let engine = TypoEngine::builtin();

    for mode in [TrainMode::Dr, TrainMode::DrCl] {
        let config = TrainConfig::new(mode, 42);
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
        let params = &outcome.params;
        let index = DenseIndex::build(&data.passages, params, &vocab).unwrap();

        let train_r = recall_for(&data.train, &data.train_qrels, &index, params, &vocab);
        let test_r = recall_for(&data.test, &data.test_qrels, &index, params, &vocab);
        println!("{mode:?}: train r@10 {train_r:.4}  test r@10 {test_r:.4}");

        // Question-tower embedding norms by word role.
        let norm_of = |word: &str| -> f64 {
            let ids = vocab.tokenize_text(word).ids;
            params
                .encode_question(&ids, vocab.pad_id())
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        for word in [
            "what", "did", "the", "show", "start", // train template words
            "where", "traced", "worth", "matter", "moved", // eval template words
        ] {
            println!("  |q({word})| = {:.3}", norm_of(word));
        }
        // A few entity halves from the first passages.
        for p in data.passages.iter().take(3) {
            let words: Vec<&str> = p.text.split_whitespace().collect();
            let (h1, h2) = (words[2], words[3]);
            println!(
                "  |q({h1})| = {:.3}  |q({h2})| = {:.3}",
                norm_of(h1),
                norm_of(h2)
            );
        }
        // Mean question-embedding norm on train vs test questions.
        let mean_norm = |qs: &QuestionSet| -> f64 {
            let norms: Vec<f64> = qs
                .iter()
                .map(|q| {
                    params
                        .encode_question(&vocab.tokenize_text(&q.text).ids, vocab.pad_id())
                        .unwrap()
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            norms.iter().sum::<f64>() / norms.len() as f64
        };
        println!(
            "  mean |q|: train {:.3}  test {:.3}",
            mean_norm(&data.train),
            mean_norm(&data.test)
        );
    }
}
