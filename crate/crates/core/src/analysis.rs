//! Robustness analyses over evaluated runs: binning questions by properties
//! of their typoed words (training-set frequency, relative importance), the
//! oracle typo-removal baseline, and the cross-setting trend table.
//!
//! Binned and trend statistics cover *edited* questions only — a question
//! the typo process left untouched says nothing about typo damage — and
//! unedited questions are listed separately. Comparisons against the clean
//! run restrict it to the same question subset so paired tests stay paired.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::QuestionSet;
use crate::evaluation::{paired_t_test, EvalError, PerQueryScores};
use crate::textproc::{split_words, IdfTable, Vocabulary};
use crate::typogen::{TypoEdit, TypoSetting, TypoedQuestion};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no score for question {qid} under system {system}")]
    MissingScore { qid: String, system: String },
    #[error("typoed question {0} has no base question in the set")]
    UnknownQuestion(String),
    #[error("significance test failed: {0}")]
    Significance(#[from] EvalError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Token counts of original word forms across training questions.
#[derive(Debug, Clone, Default)]
pub struct TrainFrequencies {
    counts: HashMap<String, u64>,
}

impl TrainFrequencies {
    pub fn build(train_questions: &QuestionSet) -> Self {
        let mut counts = HashMap::new();
        for q in train_questions.iter() {
            for w in split_words(&q.text) {
                *counts.entry(w.text).or_insert(0) += 1;
            }
        }
        Self { counts }
    }

    /// Occurrences of the (pre-typo, lowercased) word; 0 when unseen.
    pub fn train_frequency(&self, word: &str) -> u64 {
        self.counts.get(&word.to_lowercase()).copied().unwrap_or(0)
    }
}

/// One bin of a [`BinnedReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub label: String,
    pub count: usize,
    /// system → mean metric over the bin's questions; None for empty bins.
    pub per_system_mean: BTreeMap<String, Option<f64>>,
}

/// Questions partitioned by a per-question key, with per-bin metric means.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReport {
    pub key_name: String,
    pub bins: Vec<BinRow>,
    /// Questions excluded from the bins because no word was edited.
    pub unedited: Vec<String>,
}

impl BinnedReport {
    /// Long-format CSV: `key,bin,count,system,mean`.
    pub fn write_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut out = String::from("key,bin,count,system,mean\n");
        for bin in &self.bins {
            for (system, mean) in &bin.per_system_mean {
                let mean = mean.map(|m| m.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.key_name, bin.label, bin.count, system, mean
                ));
            }
        }
        fs::write(path, out).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Ids of questions that actually received at least one edit.
pub fn edited_question_ids(testset: &[TypoedQuestion]) -> BTreeSet<String> {
    testset
        .iter()
        .filter(|tq| tq.is_edited())
        .map(|tq| tq.base_question_id.clone())
        .collect()
}

fn gather_bins(
    testset: &[TypoedQuestion],
    systems: &BTreeMap<String, &PerQueryScores>,
    key_name: &str,
    labels: Vec<String>,
    bin_of: impl Fn(&TypoedQuestion) -> Result<usize, AnalysisError>,
) -> Result<BinnedReport, AnalysisError> {
    let mut members: Vec<Vec<&str>> = vec![Vec::new(); labels.len()];
    let mut unedited = Vec::new();
    for tq in testset {
        if !tq.is_edited() {
            unedited.push(tq.base_question_id.clone());
            continue;
        }
        members[bin_of(tq)?].push(&tq.base_question_id);
    }
    let mut bins = Vec::with_capacity(labels.len());
    for (label, qids) in labels.into_iter().zip(members) {
        let mut per_system_mean = BTreeMap::new();
        for (system, scores) in systems {
            let mean = if qids.is_empty() {
                None
            } else {
                let mut total = 0.0;
                for qid in &qids {
                    total += scores.get(qid).ok_or_else(|| AnalysisError::MissingScore {
                        qid: (*qid).to_owned(),
                        system: system.clone(),
                    })?;
                }
                Some(total / qids.len() as f64)
            };
            per_system_mean.insert(system.clone(), mean);
        }
        bins.push(BinRow {
            label,
            count: qids.len(),
            per_system_mean,
        });
    }
    Ok(BinnedReport {
        key_name: key_name.to_owned(),
        bins,
        unedited,
    })
}

/// Default inclusive upper edges for frequency bins:
/// {0}, 1–10, 11–100, 101–1000, >1000.
pub const DEFAULT_FREQUENCY_EDGES: [u64; 4] = [0, 10, 100, 1000];

fn frequency_labels(edges: &[u64]) -> Vec<String> {
    if edges.is_empty() {
        return vec!["all".into()];
    }
    let mut labels = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0u64;
    for &e in edges {
        labels.push(if lo == e { format!("{e}") } else { format!("{lo}-{e}") });
        lo = e + 1;
    }
    labels.push(format!(">{}", edges[edges.len() - 1]));
    labels
}

/// Bin edited questions by the *minimum* training frequency among their
/// typoed words — the hardest word governs. `edges` are inclusive upper
/// bounds; an empty slice yields one catch-all bin.
pub fn bin_by_frequency(
    testset: &[TypoedQuestion],
    systems: &BTreeMap<String, &PerQueryScores>,
    freqs: &TrainFrequencies,
    edges: &[u64],
) -> Result<BinnedReport, AnalysisError> {
    let labels = frequency_labels(edges);
    gather_bins(testset, systems, "train_frequency", labels, |tq| {
        let key = tq
            .edits
            .iter()
            .map(|e| freqs.train_frequency(&e.original))
            .min()
            .expect("caller filters unedited questions");
        Ok(edges.iter().position(|&e| key <= e).unwrap_or(edges.len()))
    })
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn importance_labels(edges: &[f64]) -> Vec<String> {
    if edges.is_empty() {
        return vec!["all".into()];
    }
    let mut labels = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0.0;
    for &e in edges {
        labels.push(format!("[{lo:.4},{e:.4})"));
        lo = e;
    }
    labels.push(format!("[{lo:.4},1.0000]"));
    labels
}

/// Bin edited questions by the *maximum* relative importance among their
/// typoed words — the most damaging word governs. `explicit_edges` (strictly
/// ascending, open upper side) overrides the default quartile edges computed
/// over the test set's keys.
pub fn bin_by_importance(
    testset: &[TypoedQuestion],
    questions: &QuestionSet,
    systems: &BTreeMap<String, &PerQueryScores>,
    idf: &IdfTable,
    explicit_edges: Option<&[f64]>,
) -> Result<BinnedReport, AnalysisError> {
    // Key every edited question first; quartile edges need the keys.
    let mut keys: HashMap<&str, f64> = HashMap::new();
    for tq in testset.iter().filter(|tq| tq.is_edited()) {
        let q = questions
            .by_id(&tq.base_question_id)
            .ok_or_else(|| AnalysisError::UnknownQuestion(tq.base_question_id.clone()))?;
        let words: Vec<String> = split_words(&q.text).into_iter().map(|w| w.text).collect();
        let key = tq
            .edits
            .iter()
            .map(|e| idf.relative_importance(&e.original, &words))
            .fold(0.0f64, f64::max);
        keys.insert(tq.base_question_id.as_str(), key);
    }
    let edges: Vec<f64> = match explicit_edges {
        Some(e) => e.to_vec(),
        None => {
            let mut sorted: Vec<f64> = keys.values().copied().collect();
            sorted.sort_by(f64::total_cmp);
            if sorted.is_empty() {
                Vec::new()
            } else {
                vec![
                    quantile(&sorted, 0.25),
                    quantile(&sorted, 0.5),
                    quantile(&sorted, 0.75),
                ]
            }
        }
    };
    let labels = importance_labels(&edges);
    gather_bins(testset, systems, "relative_importance", labels, |tq| {
        let key = keys[tq.base_question_id.as_str()];
        Ok(edges.iter().position(|&e| key < e).unwrap_or(edges.len()))
    })
}

/// A typoed question with the typoed words removed instead of corrected —
/// the oracle "just delete the typos" baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalVariant {
    pub base_question_id: String,
    /// Remaining words, lowercased, joined by single spaces. Tokenization
    /// ignores case and punctuation, so an unedited question encodes
    /// identically to its original text.
    pub text: String,
    pub removed: Vec<TypoEdit>,
    /// Every word was typoed; there is nothing left to encode.
    pub all_removed: bool,
}

/// Drop each edited word from its question. Uses the recorded edits (we
/// generated the typos, so identification is oracle-exact).
pub fn removal_baseline(
    testset: &[TypoedQuestion],
    questions: &QuestionSet,
) -> Result<Vec<RemovalVariant>, AnalysisError> {
    testset
        .iter()
        .map(|tq| {
            let q = questions
                .by_id(&tq.base_question_id)
                .ok_or_else(|| AnalysisError::UnknownQuestion(tq.base_question_id.clone()))?;
            let words = split_words(&q.text);
            let removed_idx: BTreeSet<usize> = tq.edits.iter().map(|e| e.word_index).collect();
            let kept: Vec<&str> = words
                .iter()
                .enumerate()
                .filter(|(i, _)| !removed_idx.contains(i))
                .map(|(_, w)| w.text.as_str())
                .collect();
            let all_removed = kept.is_empty() && !words.is_empty();
            Ok(RemovalVariant {
                base_question_id: tq.base_question_id.clone(),
                text: kept.join(" "),
                removed: tq.edits.clone(),
                all_removed,
            })
        })
        .collect()
}

/// Token ids to feed the encoder for a removal variant; degenerate variants
/// become a single unknown-word token.
pub fn removal_token_ids(variant: &RemovalVariant, vocab: &Vocabulary) -> Vec<u32> {
    if variant.all_removed || variant.text.is_empty() {
        vec![vocab.unk_id()]
    } else {
        vocab.tokenize_text(&variant.text).ids
    }
}

/// One system × setting row of the trend table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub system: String,
    pub metric: String,
    /// None marks the clean-text reference row over all questions.
    pub setting: Option<TypoSetting>,
    /// Edited questions included (all questions for the reference row).
    pub n: usize,
    pub mean: f64,
    /// The clean run's mean over this row's question subset.
    pub original_mean_on_subset: f64,
    pub delta: f64,
    pub t: f64,
    pub p: f64,
}

impl TrendRow {
    pub fn setting_label(&self) -> &'static str {
        match self.setting {
            None => "original",
            Some(s) => s.as_str(),
        }
    }
}

/// Build one system's trend rows: a clean reference row over all questions,
/// then one row per typo setting over that setting's edited questions, with
/// the clean run restricted to the same subset for the delta and the paired
/// test.
pub fn trend_rows(
    system: &str,
    metric: &str,
    original: &PerQueryScores,
    settings: &[(TypoSetting, &PerQueryScores, &BTreeSet<String>)],
) -> Result<Vec<TrendRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(settings.len() + 1);
    rows.push(TrendRow {
        system: system.to_owned(),
        metric: metric.to_owned(),
        setting: None,
        n: original.len(),
        mean: original.mean(),
        original_mean_on_subset: original.mean(),
        delta: 0.0,
        t: 0.0,
        p: 1.0,
    });
    for (setting, scores, edited) in settings {
        let subset = scores.restricted_to(edited.iter().map(String::as_str));
        let original_subset = original.restricted_to(edited.iter().map(String::as_str));
        for qid in subset.question_ids() {
            if original_subset.get(qid).is_none() {
                return Err(AnalysisError::MissingScore {
                    qid: qid.to_owned(),
                    system: format!("{system} (original run)"),
                });
            }
        }
        let test = paired_t_test(&subset, &original_subset)?;
        rows.push(TrendRow {
            system: system.to_owned(),
            metric: metric.to_owned(),
            setting: Some(*setting),
            n: subset.len(),
            mean: subset.mean(),
            original_mean_on_subset: original_subset.mean(),
            delta: subset.mean() - original_subset.mean(),
            t: test.t,
            p: test.p,
        });
    }
    Ok(rows)
}

/// Trend CSV:
/// `system,metric,setting,n,mean,original_mean_on_subset,delta,t,p,significant_at_05`.
pub fn write_trend_csv(rows: &[TrendRow], path: &Path) -> Result<(), AnalysisError> {
    let mut out =
        String::from("system,metric,setting,n,mean,original_mean_on_subset,delta,t,p,significant_at_05\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.system,
            r.metric,
            r.setting_label(),
            r.n,
            r.mean,
            r.original_mean_on_subset,
            r.delta,
            r.t,
            r.p,
            r.p < 0.05
        ));
    }
    fs::write(path, out).map_err(|source| AnalysisError::Io {
        path: path.display().to_string(),
        source,
    })
}
