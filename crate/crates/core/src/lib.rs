//! Desk-scale laboratory for studying how misspelled queries affect
//! dual-encoder dense retrieval, and how training-time countermeasures
//! (typo augmentation, a typo-contrastive objective) repair the damage.
//!
//! The pipeline is deliberately small enough to run on a laptop CPU in
//! minutes while still exhibiting the phenomenon end to end:
//!
//! * [`corpus`] — passage / question / relevance-judgment collections
//! * [`textproc`] — word splitting, merge-built subword vocabulary,
//!   greedy longest-match tokenization, IDF statistics, stopwords
//! * [`typogen`] — deterministic typo simulation (random edits, keyboard
//!   neighbors, common misspellings) and typoed test-set construction
//! * [`encoder`] — two embedding-bag towers scored by raw inner product
//! * [`training`] — contrastive losses, analytic gradients, Adam with
//!   linear warmup/decay, the four training modes
//! * [`retrieval`] — exact top-k maximum inner product search over a
//!   dense passage index
//! * [`evaluation`] — MRR@k, Recall@k, Answer Recall@k, paired t-test
//! * [`analysis`] — robustness breakdowns by word frequency and word
//!   importance, the typo-word-removal baseline, cross-setting trends
//! * [`synth`] — the deterministic generator behind the shipped
//!   desk-scale dataset
//!
//! All randomness flows from explicit seeds through per-item substreams,
//! so every artifact (typo test sets, checkpoints, indexes, run files)
//! is byte-reproducible regardless of iteration order or thread count.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod retrieval;
pub mod synth;
pub mod textproc;
pub mod training;
pub mod typogen;
pub mod util;

pub use corpus::{PassageCollection, Question, QuestionSet, RelevanceJudgments};
pub use encoder::{ModelParams, Tower};
pub use retrieval::{DenseIndex, RunResult};
pub use textproc::Vocabulary;
pub use typogen::{TypoKind, TypoSetting, TypoedQuestion};
pub use training::TrainMode;
