//! Losses, analytic gradients, Adam, and the training loop.
//!
//! Three loss components, all softmax cross-entropy with in-batch negatives:
//!
//! * retrieval loss — each question against its positive passage, the other
//!   B−1 passages in the batch acting as negatives;
//! * consistency loss — each question against its own typoed variant, the
//!   other B−1 original questions acting as negatives, pulling a question
//!   and its typoed form together in the question space;
//! * augmentation loss — the retrieval loss computed for the typoed variant.
//!
//! Four training modes combine these: `DR` (retrieval only), `DR_Aug`
//! (retrieval with a fair coin per question per step choosing original or
//! typoed input), `DR_CL` (retrieval + consistency), `DR_Aug_CL`
//! (retrieval + consistency + augmentation).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageCollection, QuestionSet, RelevanceJudgments};
use crate::encoder::{sim, EncoderError, ModelParams, Tower};
use crate::textproc::{split_words, Vocabulary};
use crate::typogen::TypoEngine;
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Encode(#[from] EncoderError),
    #[error("batch size {got} too small: in-batch negatives need at least 2")]
    BatchTooSmall { got: usize },
    #[error("batch fields misaligned: {questions} questions, {positives} positives{typos}")]
    MisalignedBatch {
        questions: usize,
        positives: usize,
        typos: String,
    },
    #[error("mode {0} requires typoed question variants in the batch")]
    MissingTypos(TrainMode),
    #[error("question {0} has no relevance judgment")]
    MissingJudgment(String),
    #[error("judged passage {0} is not in the collection")]
    UnknownPassage(String),
    #[error("{have} training pairs cannot fill a batch of {need}")]
    NotEnoughPairs { have: usize, need: usize },
    #[error("loss diverged (non-finite) at step {step}")]
    Diverged { step: u64 },
    #[error("dev evaluation failed: {0}")]
    DevEval(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "DR")]
    Dr,
    #[serde(rename = "DR_Aug")]
    DrAug,
    #[serde(rename = "DR_CL")]
    DrCl,
    #[serde(rename = "DR_Aug_CL")]
    DrAugCl,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] =
        [TrainMode::Dr, TrainMode::DrAug, TrainMode::DrCl, TrainMode::DrAugCl];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Dr => "DR",
            TrainMode::DrAug => "DR_Aug",
            TrainMode::DrCl => "DR_CL",
            TrainMode::DrAugCl => "DR_Aug_CL",
        }
    }

    /// Whether training must supply typoed question variants.
    pub fn uses_typos(self) -> bool {
        self != TrainMode::Dr
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DR" | "dr" => Ok(TrainMode::Dr),
            "DR_Aug" | "dr_aug" => Ok(TrainMode::DrAug),
            "DR_CL" | "dr_cl" => Ok(TrainMode::DrCl),
            "DR_Aug_CL" | "dr_aug_cl" => Ok(TrainMode::DrAugCl),
            other => Err(format!(
                "unknown training mode {other:?} (expected DR, DR_Aug, DR_CL, or DR_Aug_CL)"
            )),
        }
    }
}

/// Weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl LossWeights {
    /// Equal weighting over the components a mode activates (`1/k` each),
    /// keeping loss magnitudes comparable across modes.
    pub fn equal_for(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Dr | TrainMode::DrAug => Self { w1: 1.0, w2: 0.0, w3: 0.0 },
            TrainMode::DrCl => Self { w1: 0.5, w2: 0.5, w3: 0.0 },
            TrainMode::DrAugCl => Self {
                w1: 1.0 / 3.0,
                w2: 1.0 / 3.0,
                w3: 1.0 / 3.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ws = [self.w1, self.w2, self.w3];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("loss weights must be finite and nonnegative".into());
        }
        if ws.iter().sum::<f64>() <= 0.0 {
            return Err("at least one loss weight must be positive".into());
        }
        Ok(())
    }
}

/// One training batch of aligned token sequences.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub questions: Vec<Vec<u32>>,
    pub positives: Vec<Vec<u32>>,
    pub typos: Option<Vec<Vec<u32>>>,
}

impl TrainBatch {
    pub fn new(
        questions: Vec<Vec<u32>>,
        positives: Vec<Vec<u32>>,
        typos: Option<Vec<Vec<u32>>>,
    ) -> Result<Self, TrainingError> {
        if questions.len() < 2 {
            return Err(TrainingError::BatchTooSmall { got: questions.len() });
        }
        let typo_len = typos.as_ref().map(Vec::len);
        if positives.len() != questions.len() || typo_len.is_some_and(|t| t != questions.len()) {
            return Err(TrainingError::MisalignedBatch {
                questions: questions.len(),
                positives: positives.len(),
                typos: typo_len.map_or(String::new(), |t| format!(", {t} typos")),
            });
        }
        Ok(Self { questions, positives, typos })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// Per-parameter gradients, mirroring [`ModelParams`] shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub question: Tower,
    pub passage: Tower,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            question: Tower::zeros(params.dim, params.vocab_size),
            passage: Tower::zeros(params.dim, params.vocab_size),
        }
    }

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

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.question.embed,
            &mut self.question.proj,
            &mut self.question.bias,
            &mut self.passage.embed,
            &mut self.passage.proj,
            &mut self.passage.bias,
        ]
    }
}

/// Softmax cross-entropy of one candidate group, with max-subtraction.
/// Returns the loss and d(loss)/d(scores) = softmax − onehot(pos).
fn softmax_ce(scores: &[f64], pos: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - scores[pos];
    let mut ds: Vec<f64> = exps.iter().map(|e| e / z).collect();
    ds[pos] -= 1.0;
    (loss, ds)
}

/// Negative log-likelihood of the positive among positive + negatives:
/// `−log(e^pos / (e^pos + Σ e^neg))`.
pub fn loss_l1(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let mut scores = Vec::with_capacity(neg_scores.len() + 1);
    scores.push(pos_score);
    scores.extend_from_slice(neg_scores);
    softmax_ce(&scores, 0).0
}

/// Question/typo consistency loss: the typoed variant scored against the
/// question, other questions acting as negatives.
pub fn loss_l2(q_emb: &[f64], typo_emb: &[f64], other_q_embs: &[&[f64]]) -> f64 {
    let negs: Vec<f64> = other_q_embs.iter().map(|o| sim(q_emb, o)).collect();
    loss_l1(sim(q_emb, typo_emb), &negs)
}

/// Augmentation loss: the retrieval loss with the typoed question as query.
pub fn loss_l3(typo_emb: &[f64], pos_passage_emb: &[f64], other_passage_embs: &[&[f64]]) -> f64 {
    let negs: Vec<f64> = other_passage_embs.iter().map(|o| sim(typo_emb, o)).collect();
    loss_l1(sim(typo_emb, pos_passage_emb), &negs)
}

/// Batch-mean values of the loss components; inactive components stay 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

fn effective_weights(mode: TrainMode, weights: &LossWeights) -> (f64, f64, f64) {
    match mode {
        // Single-component modes ignore the weight configuration.
        TrainMode::Dr | TrainMode::DrAug => (1.0, 0.0, 0.0),
        TrainMode::DrCl => (weights.w1, weights.w2, 0.0),
        TrainMode::DrAugCl => (weights.w1, weights.w2, weights.w3),
    }
}

/// Pooled and projected vectors for one tower's batch half.
type PoolsAndEmbeddings = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn encode_role(
    tower: &Tower,
    seqs: &[Vec<u32>],
    pad_id: u32,
) -> Result<PoolsAndEmbeddings, EncoderError> {
    let item = |ids: &Vec<u32>| -> Result<(Vec<f64>, Vec<f64>), EncoderError> {
        let pool = tower.pool_mean(ids, pad_id)?;
        let emb = tower.project(&pool);
        Ok((pool, emb))
    };
    #[cfg(feature = "parallel")]
    let pairs: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        seqs.par_iter().map(item).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Result<Vec<_>, _> = seqs.iter().map(item).collect();
    Ok(pairs?.into_iter().unzip())
}

/// Chain gradient at a tower's output embedding back to its parameters.
fn backprop_item(
    tower: &Tower,
    grads: &mut Tower,
    ids: &[u32],
    pad_id: u32,
    pool: &[f64],
    demb: &[f64],
) {
    if demb.iter().all(|&v| v == 0.0) {
        return;
    }
    let dim = tower.dim;
    let mut dpool = vec![0.0; dim];
    for (o, &d) in demb.iter().enumerate() {
        grads.bias[o] += d;
        let row = o * dim;
        for j in 0..dim {
            grads.proj[row + j] += d * pool[j];
            dpool[j] += tower.proj[row + j] * d;
        }
    }
    let count = ids.iter().filter(|&&id| id != pad_id).count() as f64;
    debug_assert!(count > 0.0);
    let inv = 1.0 / count;
    for &id in ids {
        if id == pad_id {
            continue;
        }
        let row = id as usize * dim;
        for (j, &dp) in dpool.iter().enumerate() {
            grads.embed[row + j] += dp * inv;
        }
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (s, v) in acc.iter_mut().zip(x) {
        *s += a * v;
    }
}

/// Forward value and full analytic gradient of a mode's combined loss on one
/// batch. `DR_Aug` draws one fair coin per question from `rng` (before any
/// parallel work): heads keeps the original question, tails substitutes the
/// typoed variant.
pub fn combined_loss(
    mode: TrainMode,
    batch: &TrainBatch,
    params: &ModelParams,
    weights: &LossWeights,
    pad_id: u32,
    rng: &mut impl Rng,
) -> Result<(LossValue, Gradients), TrainingError> {
    let b = batch.len();
    if b < 2 {
        return Err(TrainingError::BatchTooSmall { got: b });
    }
    let (w1, w2, w3) = effective_weights(mode, weights);
    let coin_l1 = mode == TrainMode::DrAug;
    let needs_typos = coin_l1 || w2 > 0.0 || w3 > 0.0;
    if needs_typos && batch.typos.is_none() {
        return Err(TrainingError::MissingTypos(mode));
    }
    let use_typo: Vec<bool> = if coin_l1 {
        (0..b).map(|_| rng.gen::<bool>()).collect()
    } else {
        vec![false; b]
    };

    let dim = params.dim;
    let (q_pools, q_embs) = encode_role(&params.question, &batch.questions, pad_id)?;
    let (p_pools, p_embs) = encode_role(&params.passage, &batch.positives, pad_id)?;
    let (t_pools, t_embs) = if needs_typos {
        encode_role(&params.question, batch.typos.as_ref().expect("checked above"), pad_id)?
    } else {
        (Vec::new(), Vec::new())
    };

    let mut dq = vec![vec![0.0; dim]; b];
    let mut dp = vec![vec![0.0; dim]; b];
    let mut dt = vec![vec![0.0; dim]; t_embs.len()];
    let inv_b = 1.0 / b as f64;
    let (mut l1_mean, mut l2_mean, mut l3_mean) = (0.0, 0.0, 0.0);

    if w1 > 0.0 {
        for i in 0..b {
            let qe = if use_typo[i] { t_embs[i].clone() } else { q_embs[i].clone() };
            let scores: Vec<f64> = p_embs.iter().map(|pe| sim(&qe, pe)).collect();
            let (loss, ds) = softmax_ce(&scores, i);
            l1_mean += loss * inv_b;
            for j in 0..b {
                let g = ds[j] * inv_b * w1;
                let dquery = if use_typo[i] { &mut dt[i] } else { &mut dq[i] };
                axpy(dquery, g, &p_embs[j]);
                axpy(&mut dp[j], g, &qe);
            }
        }
    }

    if w2 > 0.0 {
        for i in 0..b {
            let qe = q_embs[i].clone();
            let scores: Vec<f64> = (0..b)
                .map(|j| if j == i { sim(&qe, &t_embs[i]) } else { sim(&qe, &q_embs[j]) })
                .collect();
            let (loss, ds) = softmax_ce(&scores, i);
            l2_mean += loss * inv_b;
            for j in 0..b {
                let g = ds[j] * inv_b * w2;
                if j == i {
                    axpy(&mut dq[i], g, &t_embs[i]);
                    axpy(&mut dt[i], g, &qe);
                } else {
                    let other = q_embs[j].clone();
                    axpy(&mut dq[i], g, &other);
                    axpy(&mut dq[j], g, &qe);
                }
            }
        }
    }

    if w3 > 0.0 {
        for i in 0..b {
            let te = t_embs[i].clone();
            let scores: Vec<f64> = p_embs.iter().map(|pe| sim(&te, pe)).collect();
            let (loss, ds) = softmax_ce(&scores, i);
            l3_mean += loss * inv_b;
            for j in 0..b {
                let g = ds[j] * inv_b * w3;
                axpy(&mut dt[i], g, &p_embs[j]);
                axpy(&mut dp[j], g, &te);
            }
        }
    }

    let mut grads = Gradients::zeros_like(params);
    for i in 0..b {
        backprop_item(&params.question, &mut grads.question, &batch.questions[i], pad_id, &q_pools[i], &dq[i]);
        backprop_item(&params.passage, &mut grads.passage, &batch.positives[i], pad_id, &p_pools[i], &dp[i]);
        if !dt.is_empty() {
            let t_ids = &batch.typos.as_ref().expect("typos encoded")[i];
            backprop_item(&params.question, &mut grads.question, t_ids, pad_id, &t_pools[i], &dt[i]);
        }
    }

    let value = LossValue {
        total: w1 * l1_mean + w2 * l2_mean + w3 * l3_mean,
        l1: l1_mean,
        l2: l2_mean,
        l3: l3_mean,
    };
    Ok((value, grads))
}

/// Adam hyperparameters plus the linear warmup/decay schedule bounds.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, warmup_fraction: f64, total_steps: u64) -> Self {
        Self {
            lr,
            warmup_fraction,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Effective learning rate at `step`: linear warmup from 0 over the first
/// `warmup_fraction` of steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, base_lr: f64, warmup_fraction: f64) -> f64 {
    assert!(total_steps >= 1);
    assert!((0.0..1.0).contains(&warmup_fraction));
    if step >= total_steps {
        return 0.0;
    }
    let warmup = (warmup_fraction * total_steps as f64).round() as u64;
    if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl OptimizerState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
        }
    }
}

/// One Adam update (β1/β2 bias correction included) at the schedule's
/// current learning rate; advances the step counter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &AdamConfig,
) {
    let lr = lr_at(state.step, config.total_steps, config.lr, config.warmup_fraction);
    let t = state.step + 1;
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    let p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    let m_tensors = state.m.tensors_mut();
    let v_tensors = state.v.tensors_mut();
    for (((p, g), m), v) in p_tensors.into_iter().zip(g_tensors).zip(m_tensors).zip(v_tensors) {
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] -= lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
    state.step = t;
}

/// Full training configuration with desk-scale defaults.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub dim: usize,
    pub proj_noise: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub warmup_fraction: f64,
    /// None → equal weighting over the mode's active components.
    pub weights: Option<LossWeights>,
    /// Per-word typo probability for training-time variants.
    pub typo_p: f64,
    pub seed: u64,
    /// Evaluate dev Recall@10 every this many steps; 0 disables.
    pub dev_every: u64,
    /// Carried into checkpoints for provenance; opaque here.
    pub config_hash: [u8; 32],
}

impl TrainConfig {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        Self {
            mode,
            dim: 128,
            proj_noise: 0.01,
            batch_size: 16,
            steps: 2000,
            lr: 1e-3,
            warmup_fraction: 0.1,
            weights: None,
            typo_p: 0.2,
            seed,
            dev_every: 0,
            config_hash: [0; 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub lr: f64,
    pub dev_recall_at_10: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    /// `train.log`: one CSV row per step.
    pub fn write_log(&self, path: &Path) -> Result<(), TrainingError> {
        let mut out = String::from("step,loss,l1,l2,l3,lr,dev_recall_at_10\n");
        for e in &self.log {
            let dev = e.dev_recall_at_10.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.step, e.loss, e.l1, e.l2, e.l3, e.lr, dev
            ));
        }
        fs::write(path, out).map_err(|source| TrainingError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Train a fresh model. Batches are reshuffled every epoch from a per-epoch
/// derived seed and the remainder is dropped; typoed variants (for modes
/// that use them) are regenerated each step, every word eligible, so the
/// model sees fresh typos throughout. Questions lacking judgments and
/// judged passages missing from the collection are errors.
pub fn train(
    passages: &PassageCollection,
    questions: &QuestionSet,
    qrels: &RelevanceJudgments,
    dev: Option<(&QuestionSet, &RelevanceJudgments)>,
    vocab: &Vocabulary,
    engine: &TypoEngine,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    if config.batch_size < 2 {
        return Err(TrainingError::BatchTooSmall { got: config.batch_size });
    }
    let weights = config.weights.unwrap_or_else(|| LossWeights::equal_for(config.mode));
    if let Err(reason) = weights.validate() {
        // Surface as divergence-class misuse rather than a panic.
        return Err(TrainingError::DevEval(reason));
    }

    // (question index, positive passage index); first judged passage wins.
    let mut pairs = Vec::with_capacity(questions.len());
    for (qi, q) in questions.iter().enumerate() {
        let pid = qrels
            .relevant(&q.id)
            .and_then(|pids| pids.iter().next())
            .ok_or_else(|| TrainingError::MissingJudgment(q.id.clone()))?;
        let pi = passages
            .index_of(pid)
            .ok_or_else(|| TrainingError::UnknownPassage(pid.clone()))?;
        pairs.push((qi, pi));
    }
    if pairs.len() < config.batch_size {
        return Err(TrainingError::NotEnoughPairs {
            have: pairs.len(),
            need: config.batch_size,
        });
    }

    let pad = vocab.pad_id();
    let q_tokens: Vec<Vec<u32>> =
        questions.iter().map(|q| vocab.tokenize_text(&q.text).ids).collect();
    let mut p_tokens: HashMap<usize, Vec<u32>> = HashMap::new();
    for &(_, pi) in &pairs {
        p_tokens
            .entry(pi)
            .or_insert_with(|| vocab.tokenize_text(&passages.get(pi).text).ids);
    }

    let mut params = ModelParams::init(
        config.dim,
        vocab.len(),
        config.proj_noise,
        config.seed,
        config.config_hash,
    );
    let mut state = OptimizerState::zeros_like(&params);
    let adam = AdamConfig::new(config.lr, config.warmup_fraction, config.steps);
    let mut coin_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "aug.coins"));
    let mut log = Vec::with_capacity(config.steps as usize);
    let mut step: u64 = 0;
    let mut epoch: u64 = 0;

    'steps: loop {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &format!("epoch{epoch}"),
        )));
        for chunk in order.chunks_exact(config.batch_size) {
            if step >= config.steps {
                break 'steps;
            }
            let batch_questions: Vec<Vec<u32>> =
                chunk.iter().map(|&ix| q_tokens[pairs[ix].0].clone()).collect();
            let batch_positives: Vec<Vec<u32>> =
                chunk.iter().map(|&ix| p_tokens[&pairs[ix].1].clone()).collect();
            let batch_typos = if config.mode.uses_typos() {
                let typod: Vec<Vec<u32>> = chunk
                    .iter()
                    .map(|&ix| {
                        let q = questions.get(pairs[ix].0);
                        let eligible = (0..split_words(&q.text).len()).collect();
                        let variant = engine.perturb_question(
                            q,
                            &eligible,
                            config.typo_p,
                            derive_seed(config.seed, &format!("typo.s{step}.{}", q.id)),
                        );
                        vocab.tokenize_text(&variant.text).ids
                    })
                    .collect();
                Some(typod)
            } else {
                None
            };
            let batch = TrainBatch::new(batch_questions, batch_positives, batch_typos)?;
            let (loss, grads) =
                combined_loss(config.mode, &batch, &params, &weights, pad, &mut coin_rng)?;
            if !loss.total.is_finite() {
                return Err(TrainingError::Diverged { step });
            }
            let lr_now = lr_at(step, config.steps, config.lr, config.warmup_fraction);
            adam_step(&mut params, &grads, &mut state, &adam);
            let dev_metric = match dev {
                Some((dev_q, dev_qrels))
                    if config.dev_every > 0 && (step + 1).is_multiple_of(config.dev_every) =>
                {
                    Some(dev_recall_at_10(&params, vocab, passages, dev_q, dev_qrels)?)
                }
                _ => None,
            };
            log.push(LogEntry {
                step,
                loss: loss.total,
                l1: loss.l1,
                l2: loss.l2,
                l3: loss.l3,
                lr: lr_now,
                dev_recall_at_10: dev_metric,
            });
            step += 1;
        }
        epoch += 1;
    }

    Ok(TrainOutcome { params, log })
}

fn dev_recall_at_10(
    params: &ModelParams,
    vocab: &Vocabulary,
    passages: &PassageCollection,
    dev_questions: &QuestionSet,
    dev_qrels: &RelevanceJudgments,
) -> Result<f64, TrainingError> {
    let index = crate::retrieval::DenseIndex::build(passages, params, vocab)
        .map_err(|e| TrainingError::DevEval(e.to_string()))?;
    let mut total = 0.0;
    let mut n = 0usize;
    for q in dev_questions.iter() {
        let Some(relevant) = dev_qrels.relevant(&q.id) else { continue };
        let ids = vocab.tokenize_text(&q.text).ids;
        let emb = params.encode_question(&ids, vocab.pad_id())?;
        let hits = index.search(&emb, 10);
        let found = hits
            .iter()
            .filter(|(pid, _)| relevant.contains(pid.as_str()))
            .count();
        total += found as f64 / relevant.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(TrainingError::DevEval("no judged dev questions".into()));
    }
    Ok(total / n as f64)
}
