//! Regenerate the bundled desk dataset under `data/desk/`.
//!
//! ```text
//! cargo run --release --example gen_desk [out_dir]
//! ```
//!
//! The output is deterministic, so re-running produces byte-identical
//! files; commit the result when the generator changes.

use std::path::PathBuf;

use typolab_core::synth::{generate, SynthConfig};

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/desk"));
    std::fs::create_dir_all(&out).expect("create output directory");

    let data = generate(&SynthConfig::default());
    data.passages.save(&out.join("passages.tsv")).expect("write passages");
    data.train.save(&out.join("questions_train.tsv")).expect("write train questions");
    data.dev.save(&out.join("questions_dev.tsv")).expect("write dev questions");
    data.test.save(&out.join("questions_test.tsv")).expect("write test questions");
    data.train_qrels.save(&out.join("qrels_train.tsv")).expect("write train qrels");
    data.dev_qrels.save(&out.join("qrels_dev.tsv")).expect("write dev qrels");
    data.test_qrels.save(&out.join("qrels_test.tsv")).expect("write test qrels");

    println!(
        "wrote {} passages, {}/{}/{} questions to {}",
        data.passages.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        out.display()
    );
}
