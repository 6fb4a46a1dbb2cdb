//! Dense passage index and exact top-k inner-product search.
//!
//! The index is a plain `|P| × d` matrix of passage embeddings. Search is an
//! exact single scan with a bounded best-k buffer — no approximation — and
//! ties break toward the lower passage index, so results are reproducible
//! byte-for-byte, with or without the parallel scan.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::PassageCollection;
use crate::encoder::{EncoderError, ModelParams};
use crate::textproc::Vocabulary;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: invalid index file: {reason}")]
    Format { path: String, reason: String },
    #[error("cannot index an empty passage collection")]
    EmptyCollection,
    #[error(transparent)]
    Encode(#[from] EncoderError),
    #[error("{path}:{line}: malformed run line: {reason}")]
    MalformedRun {
        path: String,
        line: usize,
        reason: String,
    },
}

const MAGIC: &[u8; 4] = b"DIDX";
const VERSION: u32 = 1;

/// Passage embeddings, aligned ids, and the hash of the model that encoded
/// them (so stale indexes are detectable).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    model_hash: [u8; 32],
    passage_ids: Vec<String>,
    rows: Vec<f64>,
}

/// Search hit ordering: higher score wins, lower passage index breaks ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    score: f64,
    index: usize,
}

impl Eq for Hit {}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DenseIndex {
    /// Encode every passage with the passage tower. Deterministic given
    /// (collection, params, vocabulary).
    pub fn build(
        passages: &PassageCollection,
        params: &ModelParams,
        vocab: &Vocabulary,
    ) -> Result<Self, RetrievalError> {
        if passages.is_empty() {
            return Err(RetrievalError::EmptyCollection);
        }
        let texts: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
        let encode = |text: &&str| -> Result<Vec<f64>, EncoderError> {
            let ids = vocab.tokenize_text(text).ids;
            params.passage.encode(&ids, vocab.pad_id())
        };
        #[cfg(feature = "parallel")]
        let embs: Result<Vec<Vec<f64>>, EncoderError> = {
            use rayon::prelude::*;
            texts.par_iter().map(encode).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let embs: Result<Vec<Vec<f64>>, EncoderError> = texts.iter().map(encode).collect();
        let embs = embs?;
        let mut rows = Vec::with_capacity(passages.len() * params.dim);
        for emb in embs {
            rows.extend_from_slice(&emb);
        }
        Ok(Self {
            dim: params.dim,
            model_hash: params.content_hash(),
            passage_ids: passages.iter().map(|p| p.id.clone()).collect(),
            rows,
        })
    }

    /// Build an index from precomputed embeddings: `rows` is row-major
    /// `|ids| × dim`. Useful when embeddings come from outside the encoder.
    pub fn from_embeddings(
        dim: usize,
        passage_ids: Vec<String>,
        rows: Vec<f64>,
        model_hash: [u8; 32],
    ) -> Result<Self, RetrievalError> {
        if passage_ids.is_empty() {
            return Err(RetrievalError::EmptyCollection);
        }
        if dim == 0 || rows.len() != passage_ids.len() * dim {
            return Err(RetrievalError::Format {
                path: "<memory>".to_owned(),
                reason: format!(
                    "embedding matrix is {} values, want {} ids x {} dim",
                    rows.len(),
                    passage_ids.len(),
                    dim
                ),
            });
        }
        Ok(Self {
            dim,
            model_hash,
            passage_ids,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passage_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_hash(&self) -> [u8; 32] {
        self.model_hash
    }

    pub fn matches_model(&self, params: &ModelParams) -> bool {
        self.model_hash == params.content_hash()
    }

    pub fn passage_id(&self, index: usize) -> &str {
        &self.passage_ids[index]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    /// Exact top-k by inner product; `k > |P|` returns all `|P|` hits.
    pub fn search(&self, q_emb: &[f64], k: usize) -> Vec<(String, f64)> {
        self.search_indices(q_emb, k)
            .into_iter()
            .map(|h| (self.passage_ids[h.1].clone(), h.0))
            .collect()
    }

    /// Like [`DenseIndex::search`] but yields `(score, passage index)`.
    pub fn search_indices(&self, q_emb: &[f64], k: usize) -> Vec<(f64, usize)> {
        assert_eq!(q_emb.len(), self.dim, "query dimension mismatch");
        assert!(k >= 1, "k must be positive");
        #[cfg(feature = "parallel")]
        let best = {
            use rayon::prelude::*;
            // Top-k under a total order is independent of the reduction
            // shape, so the parallel fold matches the sequential scan.
            (0..self.len())
                .into_par_iter()
                .fold(
                    || BinaryHeap::<std::cmp::Reverse<Hit>>::with_capacity(k + 1),
                    |mut heap, i| {
                        push_hit(&mut heap, self.hit(q_emb, i), k);
                        heap
                    },
                )
                .reduce(
                    || BinaryHeap::with_capacity(k + 1),
                    |mut a, b| {
                        for std::cmp::Reverse(h) in b {
                            push_hit(&mut a, h, k);
                        }
                        a
                    },
                )
        };
        #[cfg(not(feature = "parallel"))]
        let best = {
            let mut heap = BinaryHeap::with_capacity(k + 1);
            for i in 0..self.len() {
                push_hit(&mut heap, self.hit(q_emb, i), k);
            }
            heap
        };
        let mut hits: Vec<Hit> = best.into_iter().map(|r| r.0).collect();
        hits.sort_by(|a, b| b.cmp(a));
        hits.into_iter().map(|h| (h.score, h.index)).collect()
    }

    fn hit(&self, q_emb: &[f64], index: usize) -> Hit {
        let row = self.row(index);
        let score = q_emb.iter().zip(row).map(|(a, b)| a * b).sum();
        Hit { score, index }
    }

    /// Search many queries; result order matches the input order.
    pub fn search_batch(&self, q_embs: &[Vec<f64>], k: usize) -> Vec<Vec<(String, f64)>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            q_embs.par_iter().map(|q| self.search(q, k)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            q_embs.iter().map(|q| self.search(q, k)).collect()
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut out = Vec::with_capacity(16 + 32 + self.rows.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.model_hash);
        for id in &self.passage_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|reason| RetrievalError::Format {
            path: path.display().to_string(),
            reason,
        })
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], String> {
            if *pos + n > bytes.len() {
                return Err("truncated index file".into());
            }
            let out = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(out)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("fixed width"));
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("fixed width")) as usize;
        let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("fixed width")) as usize;
        let model_hash: [u8; 32] = take(&mut pos, 32)?.try_into().expect("fixed width");
        if n == 0 || dim == 0 {
            return Err("empty index".into());
        }
        let mut passage_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len =
                u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("fixed width")) as usize;
            let raw = take(&mut pos, len)?;
            let id = std::str::from_utf8(raw).map_err(|_| "non-UTF-8 passage id")?;
            passage_ids.push(id.to_owned());
        }
        let raw = take(&mut pos, n * dim * 8)?;
        let rows: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("fixed width")))
            .collect();
        if pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - pos));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err("non-finite embedding entry".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = passage_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(format!("duplicate passage id {dup:?}"));
        }
        Ok(Self {
            dim,
            model_hash,
            passage_ids,
            rows,
        })
    }
}

fn push_hit(heap: &mut BinaryHeap<std::cmp::Reverse<Hit>>, hit: Hit, k: usize) {
    if heap.len() < k {
        heap.push(std::cmp::Reverse(hit));
    } else if heap.peek().is_some_and(|worst| hit > worst.0) {
        heap.push(std::cmp::Reverse(hit));
        heap.pop();
    }
}

/// Ranked retrieval results for a set of questions, tagged with the system
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub tag: String,
    per_query: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunResult {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            per_query: BTreeMap::new(),
        }
    }

    /// Record one question's ranked list. Scores must be non-increasing and
    /// passage ids unique.
    pub fn add(&mut self, qid: impl Into<String>, ranked: Vec<(String, f64)>) {
        debug_assert!(
            ranked.windows(2).all(|w| w[0].1 >= w[1].1),
            "scores must be non-increasing"
        );
        debug_assert_eq!(
            ranked
                .iter()
                .map(|(pid, _)| pid.as_str())
                .collect::<std::collections::HashSet<_>>()
                .len(),
            ranked.len(),
            "duplicate passage id in ranked list"
        );
        self.per_query.insert(qid.into(), ranked);
    }

    pub fn get(&self, qid: &str) -> Option<&[(String, f64)]> {
        self.per_query.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.per_query.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.per_query.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    /// Run file: `qid \t pid \t rank \t score \t tag`, queries in id order,
    /// ranks starting at 1.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut out = String::new();
        for (qid, ranked) in &self.per_query {
            for (rank, (pid, score)) in ranked.iter().enumerate() {
                out.push_str(&format!("{qid}\t{pid}\t{}\t{score}\t{}\n", rank + 1, self.tag));
            }
        }
        fs::write(path, out).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let raw = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut tag: Option<String> = None;
        let mut per_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| RetrievalError::MalformedRun {
                path: path.display().to_string(),
                line: lineno + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, pid, rank, score, line_tag] = fields[..] else {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            };
            let rank: usize = rank.parse().map_err(|_| err(format!("bad rank {rank:?}")))?;
            let score: f64 = score.parse().map_err(|_| err(format!("bad score {score:?}")))?;
            match &tag {
                None => tag = Some(line_tag.to_owned()),
                Some(t) if t != line_tag => {
                    return Err(err(format!("mixed tags {t:?} and {line_tag:?}")));
                }
                _ => {}
            }
            let ranked = per_query.entry(qid.to_owned()).or_default();
            if rank != ranked.len() + 1 {
                return Err(err(format!(
                    "rank {rank} out of order (expected {})",
                    ranked.len() + 1
                )));
            }
            if ranked.last().is_some_and(|(_, prev)| *prev < score) {
                return Err(err("scores increase within a ranked list".into()));
            }
            ranked.push((pid.to_owned(), score));
        }
        Ok(Self {
            tag: tag.unwrap_or_default(),
            per_query,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_collection(texts: &[&str]) -> PassageCollection {
        PassageCollection::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("p{i}"),
                    text: (*t).to_owned(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn toy_model(vocab: &Vocabulary) -> ModelParams {
        ModelParams::init(8, vocab.len(), 0.01, 5, [0; 32])
    }

    fn toy_vocab(passages: &PassageCollection) -> Vocabulary {
        let questions = crate::corpus::QuestionSet::new(vec![crate::corpus::Question {
            id: "q0".into(),
            text: "placeholder".into(),
            answers: vec![],
        }])
        .unwrap();
        Vocabulary::build(passages, &questions, Vocabulary::base_size() + 20).unwrap()
    }

    /// Random index with controllable duplicate rows for tie coverage.
    fn random_index(n: usize, dim: usize, seed: u64, dup_every: usize) -> DenseIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n * dim);
        let mut prev_row: Vec<f64> = vec![0.0; dim];
        for i in 0..n {
            let row: Vec<f64> = if dup_every > 0 && i > 0 && i % dup_every == 0 {
                prev_row.clone()
            } else {
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            rows.extend_from_slice(&row);
            prev_row = row;
        }
        DenseIndex {
            dim,
            model_hash: [9; 32],
            passage_ids: (0..n).map(|i| format!("p{i}")).collect(),
            rows,
        }
    }

    fn naive_top_k(index: &DenseIndex, q: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = (0..index.len())
            .map(|i| {
                let row = index.row(i);
                (q.iter().zip(row).map(|(a, b)| a * b).sum(), i)
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn single_passage_index_row_is_its_encoding() {
        let passages = toy_collection(&["the grand harbor lighthouse"]);
        let vocab = toy_vocab(&passages);
        let params = toy_model(&vocab);
        let index = DenseIndex::build(&passages, &params, &vocab).unwrap();
        assert_eq!(index.len(), 1);
        let ids = vocab.tokenize_text("the grand harbor lighthouse").ids;
        let expect = params.passage.encode(&ids, vocab.pad_id()).unwrap();
        assert_eq!(index.row(0), expect.as_slice());
    }

    #[test]
    fn rebuild_is_identical() {
        let passages = toy_collection(&["alpha beta", "gamma delta", "epsilon zeta"]);
        let vocab = toy_vocab(&passages);
        let params = toy_model(&vocab);
        let a = DenseIndex::build(&passages, &params, &vocab).unwrap();
        let b = DenseIndex::build(&passages, &params, &vocab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_texts_share_rows_not_ids() {
        let passages = toy_collection(&["same words here", "same words here"]);
        let vocab = toy_vocab(&passages);
        let params = toy_model(&vocab);
        let index = DenseIndex::build(&passages, &params, &vocab).unwrap();
        assert_eq!(index.row(0), index.row(1));
        assert_ne!(index.passage_id(0), index.passage_id(1));
    }

    #[test]
    fn search_matches_the_full_sort_oracle() {
        let index = random_index(50, 8, 7, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..200 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for k in [1, 5, 50, 60] {
                let got = index.search_indices(&q, k);
                let want = naive_top_k(&index, &q, k);
                assert_eq!(got, want, "k={k}");
            }
        }
    }

    #[test]
    fn zero_query_returns_passages_in_index_order() {
        let index = random_index(20, 4, 3, 0);
        let hits = index.search_indices(&[0.0; 4], 5);
        let expect: Vec<(f64, usize)> = (0..5).map(|i| (0.0, i)).collect();
        assert_eq!(hits, expect);
    }

    #[test]
    fn oversized_k_returns_everything() {
        let index = random_index(6, 4, 1, 0);
        assert_eq!(index.search_indices(&[1.0; 4], 100).len(), 6);
    }

    #[test]
    fn batch_search_matches_individual_searches() {
        let index = random_index(30, 8, 11, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let queries: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = index.search_batch(&queries, 4);
        for (q, hits) in queries.iter().zip(&batch) {
            assert_eq!(hits, &index.search(q, 4));
        }
    }

    proptest! {
        #[test]
        fn search_is_exact_on_random_instances(
            seed in 0u64..500,
            n in 1usize..40,
            k in 1usize..45,
        ) {
            let index = random_index(n, 4, seed, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFFFF);
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = index.search_indices(&q, k);
            let want = naive_top_k(&index, &q, k);
            prop_assert_eq!(got.clone(), want);
            // Scores non-increasing within the list.
            prop_assert!(got.windows(2).all(|w| w[0].0 >= w[1].0));
        }
    }

    #[test]
    fn index_round_trips_through_disk() {
        let passages = toy_collection(&["alpha beta gamma", "delta epsilon"]);
        let vocab = toy_vocab(&passages);
        let params = toy_model(&vocab);
        let index = DenseIndex::build(&passages, &params, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        let loaded = DenseIndex::load(&path).unwrap();
        assert_eq!(index, loaded);
        assert!(loaded.matches_model(&params));
        let other = ModelParams::init(8, vocab.len(), 0.01, 6, [0; 32]);
        assert!(!loaded.matches_model(&other));
    }

    #[test]
    fn corrupt_index_files_are_rejected() {
        let index = random_index(3, 2, 1, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'Z';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(DenseIndex::load(&path), Err(RetrievalError::Format { .. })));

        index.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(DenseIndex::load(&path), Err(RetrievalError::Format { .. })));
    }

    #[test]
    fn run_files_round_trip() {
        let mut run = RunResult::new("DR_Aug_CL.random_words");
        run.add("q2", vec![("p9".into(), 1.5), ("p1".into(), 0.5)]);
        run.add("q1", vec![("p3".into(), 2.25)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        run.save(&path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        assert_eq!(
            raw,
            "q1\tp3\t1\t2.25\tDR_Aug_CL.random_words\n\
             q2\tp9\t1\t1.5\tDR_Aug_CL.random_words\n\
             q2\tp1\t2\t0.5\tDR_Aug_CL.random_words\n"
        );
        assert_eq!(RunResult::load(&path).unwrap(), run);
    }

    #[test]
    fn malformed_run_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        fs::write(&path, "q1\tp1\t1\tnot-a-number\ttag\n").unwrap();
        assert!(matches!(RunResult::load(&path), Err(RetrievalError::MalformedRun { .. })));
        fs::write(&path, "q1\tp1\t2\t1.0\ttag\n").unwrap();
        assert!(matches!(RunResult::load(&path), Err(RetrievalError::MalformedRun { .. })));
        fs::write(&path, "q1\tp1\t1\t1.0\ttag\nq1\tp2\t2\t3.0\ttag\n").unwrap();
        assert!(matches!(RunResult::load(&path), Err(RetrievalError::MalformedRun { .. })));
    }
}
