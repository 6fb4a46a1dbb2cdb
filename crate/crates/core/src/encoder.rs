//! Compact dual-encoder: two independent towers (question / passage), each an
//! embedding bag with mean pooling followed by one affine projection.
//! Similarity is the raw inner product — no normalization, no temperature.
//!
//! Checkpoints serialize to a fixed little-endian binary layout so training
//! runs are reproducible byte-for-byte and downstream indexes can record the
//! exact model they were built from.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: invalid checkpoint: {reason}")]
    Format { path: String, reason: String },
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
}

const MAGIC: &[u8; 4] = b"DENC";
const VERSION: u32 = 1;

/// One encoder tower: `|V| × d` embedding table, `d × d` projection, `d` bias,
/// all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub dim: usize,
    pub vocab_size: usize,
    pub embed: Vec<f64>,
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Tower {
    pub fn zeros(dim: usize, vocab_size: usize) -> Self {
        Self {
            dim,
            vocab_size,
            embed: vec![0.0; vocab_size * dim],
            proj: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn embedding(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.embed[start..start + self.dim]
    }

    /// Mean of the token embeddings, skipping `pad_id`.
    pub fn pool_mean(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>, EncoderError> {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for &id in ids {
            if id == pad_id {
                continue;
            }
            if id as usize >= self.vocab_size {
                return Err(EncoderError::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab_size,
                });
            }
            for (s, e) in sum.iter_mut().zip(self.embedding(id)) {
                *s += e;
            }
            count += 1;
        }
        if count == 0 {
            return Err(EncoderError::EmptySequence);
        }
        let inv = 1.0 / count as f64;
        for s in &mut sum {
            *s *= inv;
        }
        Ok(sum)
    }

    /// Affine projection `proj · v + bias`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.proj.chunks_exact(self.dim)) {
            *o += row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    pub fn encode(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>, EncoderError> {
        Ok(self.project(&self.pool_mean(ids, pad_id)?))
    }

    fn append_bytes(&self, out: &mut Vec<u8>) {
        for table in [&self.embed, &self.proj, &self.bias] {
            for v in table.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Full model: the two towers plus the identity of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Hash of the experiment configuration, carried so artifacts can be
    /// traced back to their settings. Opaque to the model itself.
    pub config_hash: [u8; 32],
    pub question: Tower,
    pub passage: Tower,
}

impl ModelParams {
    /// Fresh parameters: embeddings i.i.d. uniform in `[-1/√d, 1/√d]`,
    /// projections = identity plus uniform noise in `[-proj_noise,
    /// proj_noise]`, biases zero. Deterministic per seed.
    pub fn init(
        dim: usize,
        vocab_size: usize,
        proj_noise: f64,
        seed: u64,
        config_hash: [u8; 32],
    ) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        assert!(vocab_size >= 2, "vocabulary must include the reserved tokens");
        assert!(proj_noise >= 0.0);
        let bound = 1.0 / (dim as f64).sqrt();
        let tower = |name: &str| {
            let mut t = Tower::zeros(dim, vocab_size);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
            for v in &mut t.embed {
                *v = rng.gen_range(-bound..bound);
            }
            for (i, v) in t.proj.iter_mut().enumerate() {
                let noise = if proj_noise > 0.0 {
                    rng.gen_range(-proj_noise..proj_noise)
                } else {
                    0.0
                };
                *v = noise + if i / dim == i % dim { 1.0 } else { 0.0 };
            }
            t
        };
        Self {
            dim,
            vocab_size,
            seed,
            config_hash,
            question: tower("init.question"),
            passage: tower("init.passage"),
        }
    }

    pub fn encode_question(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>, EncoderError> {
        self.question.encode(ids, pad_id)
    }

    pub fn encode_passage(&self, ids: &[u32], pad_id: u32) -> Result<Vec<f64>, EncoderError> {
        self.passage.encode(ids, pad_id)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let table_len = self.vocab_size * self.dim + self.dim * self.dim + self.dim;
        let mut out = Vec::with_capacity(4 + 4 + 4 + 4 + 8 + 32 + 2 * table_len * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        self.question.append_bytes(&mut out);
        self.passage.append_bytes(&mut out);
        out
    }

    /// The six parameter tensors in a fixed order (question then passage;
    /// embed, proj, bias). Optimizers and gradient checks iterate these.
    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.question.embed,
            &self.question.proj,
            &self.question.bias,
            &self.passage.embed,
            &self.passage.proj,
            &self.passage.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.question.embed,
            &mut self.question.proj,
            &mut self.question.bias,
            &mut self.passage.embed,
            &mut self.passage.proj,
            &mut self.passage.bias,
        ]
    }

    /// SHA-256 of the serialized checkpoint; identifies the exact weights.
    pub fn content_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_bytes());
        digest.into()
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        fs::write(path, self.to_bytes()).map_err(|source| EncoderError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let bytes = fs::read(path).map_err(|source| EncoderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|reason| EncoderError::Format {
            path: path.display().to_string(),
            reason,
        })
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dim = cursor.u32()? as usize;
        let vocab_size = cursor.u32()? as usize;
        let seed = cursor.u64()?;
        let config_hash: [u8; 32] = cursor.take(32)?.try_into().expect("fixed width");
        if dim == 0 || vocab_size == 0 {
            return Err("zero dimension or vocabulary".into());
        }
        let tower = |cursor: &mut Cursor| -> Result<Tower, String> {
            Ok(Tower {
                dim,
                vocab_size,
                embed: cursor.f64s(vocab_size * dim)?,
                proj: cursor.f64s(dim * dim)?,
                bias: cursor.f64s(dim)?,
            })
        };
        let question = tower(&mut cursor)?;
        let passage = tower(&mut cursor)?;
        if cursor.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cursor.pos));
        }
        for t in [&question, &passage] {
            let finite = t.embed.iter().chain(&t.proj).chain(&t.bias).all(|v| v.is_finite());
            if !finite {
                return Err("non-finite parameter".into());
            }
        }
        Ok(Self {
            dim,
            vocab_size,
            seed,
            config_hash,
            question,
            passage,
        })
    }

    /// Human-readable dump of every parameter, for debugging.
    pub fn export_text(&self, path: &Path) -> Result<(), EncoderError> {
        use std::fmt::Write as _;
        let mut out = String::new();
        let hash_hex: String = self.config_hash.iter().map(|b| format!("{b:02x}")).collect();
        writeln!(
            out,
            "dim={} vocab_size={} seed={} config_hash={}",
            self.dim, self.vocab_size, self.seed, hash_hex
        )
        .expect("write to string");
        for (name, tower) in [("question", &self.question), ("passage", &self.passage)] {
            for (table, data) in [
                ("embed", &tower.embed),
                ("proj", &tower.proj),
                ("bias", &tower.bias),
            ] {
                writeln!(out, "[{name}.{table}]").expect("write to string");
                for row in data.chunks(tower.dim) {
                    let line: Vec<String> = row.iter().map(f64::to_string).collect();
                    writeln!(out, "{}", line.join(" ")).expect("write to string");
                }
            }
        }
        fs::write(path, out).map_err(|source| EncoderError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Inner product of two equal-length embeddings.
pub fn sim(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding dimensions differ");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encode many sequences with one tower; order of results matches input.
pub fn encode_batch(
    tower: &Tower,
    sequences: &[Vec<u32>],
    pad_id: u32,
) -> Result<Vec<Vec<f64>>, EncoderError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        sequences.par_iter().map(|ids| tower.encode(ids, pad_id)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequences.iter().map(|ids| tower.encode(ids, pad_id)).collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("truncated checkpoint".into());
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("fixed width")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("fixed width")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("fixed width")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const PAD: u32 = 1;

    fn toy_tower() -> Tower {
        // d=2, |V|=4; ids 2 and 3 carry (1,0) and (0,1).
        let mut t = Tower::zeros(2, 4);
        t.embed[2 * 2] = 1.0;
        t.embed[3 * 2 + 1] = 1.0;
        t.proj = vec![1.0, 0.0, 0.0, 1.0];
        t
    }

    #[test]
    fn mean_pooling_averages_token_embeddings() {
        let t = toy_tower();
        assert_eq!(t.encode(&[2, 3], PAD).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn single_token_passes_through_projection() {
        let mut t = toy_tower();
        t.proj = vec![2.0, 0.0, 0.0, 3.0];
        t.bias = vec![1.0, -1.0];
        t.embed[2 * 2] = 4.0;
        t.embed[2 * 2 + 1] = 5.0;
        assert_eq!(t.encode(&[2], PAD).unwrap(), vec![9.0, 14.0]);
    }

    #[test]
    fn token_order_is_irrelevant() {
        let t = toy_tower();
        assert_eq!(t.encode(&[2, 3, 2], PAD).unwrap(), t.encode(&[2, 2, 3], PAD).unwrap());
    }

    #[test]
    fn pad_tokens_are_excluded_from_pooling() {
        let t = toy_tower();
        assert_eq!(t.encode(&[2, 3, PAD, PAD], PAD).unwrap(), t.encode(&[2, 3], PAD).unwrap());
    }

    #[test]
    fn empty_or_all_pad_sequences_error() {
        let t = toy_tower();
        assert!(matches!(t.encode(&[], PAD), Err(EncoderError::EmptySequence)));
        assert!(matches!(t.encode(&[PAD, PAD], PAD), Err(EncoderError::EmptySequence)));
    }

    #[test]
    fn out_of_range_token_errors() {
        let t = toy_tower();
        assert!(matches!(
            t.encode(&[9], PAD),
            Err(EncoderError::TokenOutOfRange { id: 9, vocab_size: 4 })
        ));
    }

    #[test]
    fn sim_is_the_inner_product() {
        assert_eq!(sim(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        assert_eq!(sim(&[5.0, -7.0], &[0.0, 0.0]), 0.0);
        let a = [0.3, -1.2, 8.0];
        let b = [2.0, 0.5, -0.25];
        assert_eq!(sim(&a, &b), sim(&b, &a));
    }

    #[test]
    fn sim_is_bilinear_in_scaling() {
        let q = [0.4, -0.7, 1.1];
        let p = [2.0, 0.3, -0.9];
        let scaled: Vec<f64> = q.iter().map(|v| v * 3.5).collect();
        assert_relative_eq!(sim(&scaled, &p), 3.5 * sim(&q, &p), max_relative = 1e-12);
    }

    #[test]
    fn scaling_the_embedding_table_scales_pooled_output() {
        let params = ModelParams::init(8, 16, 0.01, 7, [0; 32]);
        let mut scaled = params.question.clone();
        for v in &mut scaled.embed {
            *v *= 2.5;
        }
        let base = params.question.pool_mean(&[3, 5, 9], PAD).unwrap();
        let big = scaled.pool_mean(&[3, 5, 9], PAD).unwrap();
        for (b, s) in base.iter().zip(&big) {
            assert_relative_eq!(*s, 2.5 * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ModelParams::init(16, 64, 0.01, 42, [7; 32]);
        let b = ModelParams::init(16, 64, 0.01, 42, [7; 32]);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = ModelParams::init(16, 64, 0.01, 43, [7; 32]);
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn zero_noise_gives_exact_identity_projection() {
        let p = ModelParams::init(4, 10, 0.0, 1, [0; 32]);
        for t in [&p.question, &p.passage] {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(t.proj[i * 4 + j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn init_respects_stated_bounds() {
        let p = ModelParams::init(4, 10, 0.01, 5, [0; 32]);
        let bound = 0.5; // 1/sqrt(4)
        for t in [&p.question, &p.passage] {
            assert!(t.embed.iter().all(|v| v.abs() <= bound));
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((t.proj[i * 4 + j] - expect).abs() <= 0.01);
                }
            }
            assert!(t.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn towers_are_initialized_independently() {
        let p = ModelParams::init(8, 32, 0.01, 11, [0; 32]);
        assert_ne!(p.question.embed, p.passage.embed);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let p = ModelParams::init(8, 32, 0.01, 99, [3; 32]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(p.to_bytes(), q.to_bytes());
        assert_eq!(p.content_hash(), q.content_hash());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let p = ModelParams::init(4, 8, 0.01, 1, [0; 32]);
        let dir = tempfile::tempdir().unwrap();

        let bad_magic = dir.path().join("bad_magic.bin");
        let mut bytes = p.to_bytes();
        bytes[0] = b'X';
        fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(ModelParams::load(&bad_magic), Err(EncoderError::Format { .. })));

        let truncated = dir.path().join("truncated.bin");
        let bytes = p.to_bytes();
        fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ModelParams::load(&truncated), Err(EncoderError::Format { .. })));

        let nonfinite = dir.path().join("nonfinite.bin");
        let mut bytes = p.to_bytes();
        let tail = bytes.len() - 8;
        bytes[tail..].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&nonfinite, &bytes).unwrap();
        assert!(matches!(ModelParams::load(&nonfinite), Err(EncoderError::Format { .. })));
    }

    #[test]
    fn content_hash_tracks_weights() {
        let a = ModelParams::init(4, 8, 0.01, 1, [0; 32]);
        let mut b = a.clone();
        b.passage.bias[0] = 0.125;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn batched_encoding_matches_per_item() {
        let p = ModelParams::init(8, 32, 0.01, 5, [0; 32]);
        let seqs: Vec<Vec<u32>> = vec![vec![2, 3, 4], vec![7], vec![30, 31, 2, 2]];
        let batch = encode_batch(&p.passage, &seqs, PAD).unwrap();
        for (ids, emb) in seqs.iter().zip(&batch) {
            assert_eq!(emb, &p.passage.encode(ids, PAD).unwrap());
        }
    }

    #[test]
    fn text_export_writes_all_tables() {
        let p = ModelParams::init(2, 4, 0.0, 1, [0; 32]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        p.export_text(&path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        for section in [
            "[question.embed]",
            "[question.proj]",
            "[question.bias]",
            "[passage.embed]",
            "[passage.proj]",
            "[passage.bias]",
        ] {
            assert!(raw.contains(section), "missing {section}");
        }
    }
}
