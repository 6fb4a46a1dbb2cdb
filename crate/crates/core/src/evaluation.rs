//! Retrieval metrics (MRR@k, Recall@k, Answer Recall@k) and the paired
//! t-test used to compare systems.
//!
//! Answer matching normalizes both sides the same way — lowercase,
//! non-alphanumeric characters become spaces, then whitespace tokenization —
//! and checks contiguous token-sequence containment, so "Woodrow Wilson,"
//! matches the answer "woodrow wilson". The t-test's p-value comes from the
//! regularized incomplete beta function, implemented here and cross-checked
//! in tests against an independent statistics library.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{PassageCollection, QuestionSet, RelevanceJudgments};
use crate::retrieval::RunResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {0} appears in the run but has no relevance judgment")]
    MissingJudgment(String),
    #[error("question {0} is missing from the question set")]
    UnknownQuestion(String),
    #[error("question {0} carries no answer strings")]
    MissingAnswers(String),
    #[error("retrieved passage {0} is not in the collection")]
    UnknownPassage(String),
    #[error("run contains no queries")]
    EmptyRun,
    #[error("paired test needs identical question sets: {0}")]
    UnpairedQuestions(String),
    #[error("paired test needs at least 2 questions, got {0}")]
    TooFewPairs(usize),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// question id → metric value in [0, 1].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerQueryScores {
    values: BTreeMap<String, f64>,
}

impl PerQueryScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value), "metric value out of [0,1]");
        self.values.insert(qid.into(), value);
    }

    pub fn get(&self, qid: &str) -> Option<f64> {
        self.values.get(qid).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(q, v)| (q.as_str(), *v))
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.values().sum::<f64>() / self.values.len() as f64
    }

    /// Restrict to the given question ids (ids absent from `self` are
    /// ignored). Used to compare systems on a common question subset.
    pub fn restricted_to<'a>(&self, qids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = Self::new();
        for qid in qids {
            if let Some(v) = self.values.get(qid) {
                out.values.insert(qid.to_owned(), *v);
            }
        }
        out
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

impl FromIterator<(String, f64)> for PerQueryScores {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

/// One metric's summary plus its per-query values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub per_query: PerQueryScores,
}

impl MetricReport {
    fn from_scores(metric: &str, k: usize, per_query: PerQueryScores) -> Self {
        Self {
            metric: metric.to_owned(),
            k,
            mean: per_query.mean(),
            per_query,
        }
    }

    /// Per-query CSV: `qid,value`.
    pub fn write_per_query(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::from("qid,value\n");
        for (qid, v) in self.per_query.iter() {
            out.push_str(&format!("{qid},{v}\n"));
        }
        fs::write(path, out).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Summary CSV over several metrics: `metric,k,mean,n`.
pub fn write_eval_report(reports: &[MetricReport], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("metric,k,mean,n\n");
    for r in reports {
        out.push_str(&format!("{},{},{},{}\n", r.metric, r.k, r.mean, r.per_query.len()));
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Mean reciprocal rank of the first relevant passage within the top `k`.
pub fn mrr_at_k(
    run: &RunResult,
    qrels: &RelevanceJudgments,
    k: usize,
) -> Result<MetricReport, EvalError> {
    per_query_metric(run, "mrr", k, |qid, ranked| {
        let relevant = qrels
            .relevant(qid)
            .ok_or_else(|| EvalError::MissingJudgment(qid.to_owned()))?;
        let value = ranked
            .iter()
            .take(k)
            .position(|(pid, _)| relevant.contains(pid.as_str()))
            .map_or(0.0, |pos| 1.0 / (pos + 1) as f64);
        Ok(value)
    })
}

/// Fraction of a question's relevant passages found in the top `k`.
pub fn recall_at_k(
    run: &RunResult,
    qrels: &RelevanceJudgments,
    k: usize,
) -> Result<MetricReport, EvalError> {
    per_query_metric(run, "recall", k, |qid, ranked| {
        let relevant = qrels
            .relevant(qid)
            .ok_or_else(|| EvalError::MissingJudgment(qid.to_owned()))?;
        let found = ranked
            .iter()
            .take(k)
            .filter(|(pid, _)| relevant.contains(pid.as_str()))
            .count();
        Ok(found as f64 / relevant.len() as f64)
    })
}

/// 1 if any top-`k` passage contains any of the question's answers under
/// normalized token matching, else 0.
pub fn answer_recall_at_k(
    run: &RunResult,
    questions: &QuestionSet,
    passages: &PassageCollection,
    k: usize,
) -> Result<MetricReport, EvalError> {
    per_query_metric(run, "answer_recall", k, |qid, ranked| {
        let question = questions
            .by_id(qid)
            .ok_or_else(|| EvalError::UnknownQuestion(qid.to_owned()))?;
        if question.answers.is_empty() {
            return Err(EvalError::MissingAnswers(qid.to_owned()));
        }
        for (pid, _) in ranked.iter().take(k) {
            let passage = passages
                .by_id(pid)
                .ok_or_else(|| EvalError::UnknownPassage(pid.to_owned()))?;
            if question.answers.iter().any(|a| answer_matches(&passage.text, a)) {
                return Ok(1.0);
            }
        }
        Ok(0.0)
    })
}

fn per_query_metric(
    run: &RunResult,
    metric: &str,
    k: usize,
    mut score: impl FnMut(&str, &[(String, f64)]) -> Result<f64, EvalError>,
) -> Result<MetricReport, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut per_query = PerQueryScores::new();
    for (qid, ranked) in run.iter() {
        per_query.insert(qid, score(qid, ranked)?);
    }
    Ok(MetricReport::from_scores(metric, k, per_query))
}

/// Does the passage contain the answer as a contiguous normalized token
/// sequence?
pub fn answer_matches(passage_text: &str, answer: &str) -> bool {
    let haystack = normalize_tokens(passage_text);
    let needle = normalize_tokens(answer);
    if needle.is_empty() {
        return false;
    }
    if needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Lowercase, replace every non-alphanumeric character with a space, split
/// on whitespace.
fn normalize_tokens(text: &str) -> Vec<String> {
    let mapped: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().map(str::to_owned).collect()
}

/// Paired t-test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

impl TTestResult {
    pub fn significant_at_05(&self) -> bool {
        self.p < 0.05
    }
}

/// Two-sided paired t-test over matching question ids: t = mean(diff) /
/// (sd(diff)/√n) with the n−1 sample standard deviation. Degenerate cases:
/// zero-variance nonzero-mean differences give t = ±∞ with p = 0; all-zero
/// differences give t = 0 with p = 1.
pub fn paired_t_test(a: &PerQueryScores, b: &PerQueryScores) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::UnpairedQuestions(format!(
            "{} vs {} questions",
            a.len(),
            b.len()
        )));
    }
    let mut diffs = Vec::with_capacity(a.len());
    for (qid, va) in a.iter() {
        let vb = b
            .get(qid)
            .ok_or_else(|| EvalError::UnpairedQuestions(format!("{qid} missing from b")))?;
        diffs.push(va - vb);
    }
    let n = diffs.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult { t: 0.0, p: 1.0, n }
        } else {
            TTestResult {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                n,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let nu = (n - 1) as f64;
    // Two-sided: P(|T| > t) = I_{ν/(ν+t²)}(ν/2, 1/2).
    let p = incomplete_beta_regularized(nu / 2.0, 0.5, nu / (nu + t * t));
    Ok(TTestResult { t, p, n })
}

/// Lanczos approximation of ln Γ(x), x > 0.
fn ln_gamma(x: f64) -> f64 {
    // g = 7, n = 9 coefficient set.
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
fn incomplete_beta_regularized(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    // The continued fraction converges fastest below the distribution mode;
    // above it, evaluate the mirrored fraction and complement.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One row of a system-vs-system significance table.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub system_a: String,
    pub system_b: String,
    pub metric: String,
    pub t: f64,
    pub p: f64,
}

/// Significance CSV: `system_a,system_b,metric,t,p,significant_at_05`.
pub fn write_significance_report(rows: &[SignificanceRow], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("system_a,system_b,metric,t,p,significant_at_05\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.system_a,
            r.system_b,
            r.metric,
            r.t,
            r.p,
            r.p < 0.05
        ));
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
