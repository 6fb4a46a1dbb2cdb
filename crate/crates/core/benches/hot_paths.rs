//! Hot-path benchmarks. Run twice to compare execution modes:
//! `cargo bench` (data-parallel) vs `cargo bench --no-default-features`
//! (sequential) — the public API is identical in both.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use typolab_core::encoder::encode_batch;
use typolab_core::synth::{generate, SynthConfig};
use typolab_core::training::{combined_loss, LossWeights, TrainBatch, TrainMode};
use typolab_core::{DenseIndex, ModelParams, Vocabulary};

fn bench_hot_paths(c: &mut Criterion) {
    let data = generate(&SynthConfig {
        seed: 3,
        n_passages: 600,
        n_train: 150,
        n_dev: 10,
        n_test: 100,
    });
    let vocab = Vocabulary::build(&data.passages, &data.train, 1200).unwrap();
    let params = ModelParams::init(64, vocab.len(), 0.01, 17, [0; 32]);

    let passage_tokens: Vec<Vec<u32>> = data
        .passages
        .iter()
        .map(|p| vocab.tokenize_text(&p.text).ids)
        .collect();
    c.bench_function("encode_batch_600_passages", |b| {
        b.iter(|| encode_batch(&params.passage, &passage_tokens, vocab.pad_id()).unwrap())
    });

    let index = DenseIndex::build(&data.passages, &params, &vocab).unwrap();
    let queries: Vec<Vec<f64>> = data
        .test
        .iter()
        .map(|q| params.encode_question(&vocab.tokenize_text(&q.text).ids, vocab.pad_id()).unwrap())
        .collect();
    c.bench_function("search_batch_100_queries_top10", |b| {
        b.iter(|| index.search_batch(&queries, 10))
    });

    let batch_q: Vec<Vec<u32>> = data
        .train
        .iter()
        .take(16)
        .map(|q| vocab.tokenize_text(&q.text).ids)
        .collect();
    let batch_p: Vec<Vec<u32>> = data
        .train
        .iter()
        .take(16)
        .map(|q| {
            let pid = data.train_qrels.relevant(&q.id).unwrap().iter().next().unwrap().clone();
            vocab.tokenize_text(&data.passages.by_id(&pid).unwrap().text).ids
        })
        .collect();
    let typos = Some(batch_q.clone());
    let batch = TrainBatch::new(batch_q, batch_p, typos).unwrap();
    let weights = LossWeights::equal_for(TrainMode::DrAugCl);
    c.bench_function("combined_loss_grad_b16", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(5),
            |mut rng| {
                combined_loss(
                    TrainMode::DrAugCl,
                    &batch,
                    &params,
                    &weights,
                    vocab.pad_id(),
                    &mut rng,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_hot_paths);
criterion_main!(benches);
