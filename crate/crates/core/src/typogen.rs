//! Deterministic typo simulation.
//!
//! Three transformation families: random character edits (insert / delete /
//! swap / substitute), keyboard-neighbor substitution on a QWERTY adjacency
//! map, and dictionary lookups of common human misspellings. A perturbed
//! question records every edit (word index, original, typoed form, kind).
//!
//! Randomness is derived per `(seed, question id, word index)`, so outputs
//! are independent of iteration order and of the eligibility setting: the
//! same word in the same question sees the same coin and the same edit
//! under every setting that allows it.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PassageCollection, Question, QuestionSet, RelevanceJudgments};
use crate::textproc::{split_words, Stopwords};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TypoError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("the discriminative-utterances setting requires relevance judgments and passages")]
    MissingDiscriminativeContext,
}

/// The chosen kind cannot be applied to this word (too short, not in the
/// misspelling dictionary, no editable position); the caller resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inapplicable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypoKind {
    RandomInsert,
    RandomDelete,
    RandomSwap,
    RandomSubstitute,
    Keyboard,
    Misspelling,
}

impl TypoKind {
    pub const ALL: [TypoKind; 6] = [
        TypoKind::RandomInsert,
        TypoKind::RandomDelete,
        TypoKind::RandomSwap,
        TypoKind::RandomSubstitute,
        TypoKind::Keyboard,
        TypoKind::Misspelling,
    ];

    /// The four `Random*` kinds form one family; sampling first picks a
    /// family, then a kind inside it.
    fn family(self) -> Family {
        match self {
            TypoKind::RandomInsert
            | TypoKind::RandomDelete
            | TypoKind::RandomSwap
            | TypoKind::RandomSubstitute => Family::Random,
            TypoKind::Keyboard => Family::Keyboard,
            TypoKind::Misspelling => Family::Misspelling,
        }
    }
}

impl fmt::Display for TypoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TypoKind::RandomInsert => "random_insert",
            TypoKind::RandomDelete => "random_delete",
            TypoKind::RandomSwap => "random_swap",
            TypoKind::RandomSubstitute => "random_substitute",
            TypoKind::Keyboard => "keyboard",
            TypoKind::Misspelling => "misspelling",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Random,
    Keyboard,
    Misspelling,
}

const FAMILIES: [Family; 3] = [Family::Random, Family::Keyboard, Family::Misspelling];

/// Which words a setting exposes to typos. Ordered from least to most
/// targeted, which is also the expected order of retrieval damage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypoSetting {
    RandomWords,
    NonStopwords,
    DiscriminativeUtterances,
}

impl TypoSetting {
    pub const ALL: [TypoSetting; 3] = [
        TypoSetting::RandomWords,
        TypoSetting::NonStopwords,
        TypoSetting::DiscriminativeUtterances,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypoSetting::RandomWords => "random_words",
            TypoSetting::NonStopwords => "non_stopwords",
            TypoSetting::DiscriminativeUtterances => "discriminative_utterances",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random_words" | "random" => Some(TypoSetting::RandomWords),
            "non_stopwords" | "nonstop" => Some(TypoSetting::NonStopwords),
            "discriminative_utterances" | "discriminative" => {
                Some(TypoSetting::DiscriminativeUtterances)
            }
            _ => None,
        }
    }
}

impl fmt::Display for TypoSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recorded word edit inside a [`TypoedQuestion`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypoEdit {
    pub word_index: usize,
    pub original: String,
    pub typoed: String,
    pub kind: TypoKind,
}

/// A question variant with typos applied and recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypoedQuestion {
    pub base_question_id: String,
    pub text: String,
    pub edits: Vec<TypoEdit>,
    /// True when the setting exposed no word at all (e.g. a stopword-only
    /// question under the non-stopword setting).
    pub no_eligible_words: bool,
}

impl TypoedQuestion {
    pub fn is_edited(&self) -> bool {
        !self.edits.is_empty()
    }
}

/// Lowercase QWERTY neighbor map (horizontal, vertical, diagonal keys).
#[derive(Debug, Clone)]
pub struct KeyboardAdjacency {
    map: HashMap<char, Vec<char>>,
}

impl KeyboardAdjacency {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/keyboard_adjacency.tsv"), "<builtin>")
            .expect("shipped adjacency map is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, TypoError> {
        let raw = fs::read_to_string(path).map_err(|source| TypoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    fn parse(raw: &str, origin: &str) -> Result<Self, TypoError> {
        let mut map: HashMap<char, Vec<char>> = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| TypoError::MalformedLine {
                path: origin.to_owned(),
                line: lineno + 1,
                reason: reason.to_owned(),
            };
            let (key, neighbors) = line.split_once('\t').ok_or_else(|| err("expected `char<TAB>neighbors`"))?;
            let mut key_chars = key.chars();
            let (Some(key), None) = (key_chars.next(), key_chars.next()) else {
                return Err(err("key must be a single character"));
            };
            if neighbors.is_empty() || neighbors.contains(key) {
                return Err(err("neighbor list must be nonempty and exclude the key"));
            }
            if map.insert(key, neighbors.chars().collect()).is_some() {
                return Err(err("duplicate key"));
            }
        }
        // Physical adjacency is symmetric; a one-way entry is a data bug.
        for (&k, ns) in &map {
            for n in ns {
                if !map.get(n).is_some_and(|back| back.contains(&k)) {
                    return Err(TypoError::MalformedLine {
                        path: origin.to_owned(),
                        line: 0,
                        reason: format!("asymmetric adjacency: {k:?} -> {n:?}"),
                    });
                }
            }
        }
        Ok(Self { map })
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        self.map.get(&c).map(Vec::as_slice)
    }
}

/// correct word → common misspelled variants.
#[derive(Debug, Clone)]
pub struct MisspellingDictionary {
    map: HashMap<String, Vec<String>>,
}

impl MisspellingDictionary {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/misspellings.tsv"), "<builtin>")
            .expect("shipped misspelling dictionary is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, TypoError> {
        let raw = fs::read_to_string(path).map_err(|source| TypoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    fn parse(raw: &str, origin: &str) -> Result<Self, TypoError> {
        let mut map = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| TypoError::MalformedLine {
                path: origin.to_owned(),
                line: lineno + 1,
                reason,
            };
            let (word, variants) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `word<TAB>variant,variant,...`".into()))?;
            if word.is_empty() || word.chars().any(char::is_uppercase) {
                return Err(err(format!("key {word:?} must be nonempty lowercase")));
            }
            let variants: Vec<String> = variants
                .split(',')
                .map(str::to_owned)
                .collect();
            if variants.is_empty() || variants.iter().any(|v| v.is_empty() || v == word) {
                return Err(err(format!("variants of {word:?} must be nonempty and differ from it")));
            }
            if map.insert(word.to_owned(), variants).is_some() {
                return Err(err(format!("duplicate key {word:?}")));
            }
        }
        Ok(Self { map })
    }

    pub fn variants(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Typo generator bundling the data assets it draws from.
#[derive(Debug, Clone)]
pub struct TypoEngine {
    pub adjacency: KeyboardAdjacency,
    pub dictionary: MisspellingDictionary,
    pub stopwords: Stopwords,
}

/// Words shorter than this are exempt from destructive edits, so "a" and
/// "i" survive deletion/substitution.
const MIN_DESTRUCTIVE_LEN: usize = 2;

impl TypoEngine {
    pub fn builtin() -> Self {
        Self {
            adjacency: KeyboardAdjacency::builtin(),
            dictionary: MisspellingDictionary::builtin(),
            stopwords: Stopwords::builtin(),
        }
    }

    fn is_applicable(&self, word: &str, kind: TypoKind) -> bool {
        let chars: Vec<char> = word.chars().collect();
        let long_enough = chars.len() >= MIN_DESTRUCTIVE_LEN;
        match kind {
            TypoKind::RandomInsert => !chars.is_empty(),
            TypoKind::RandomDelete | TypoKind::RandomSubstitute => {
                long_enough && chars.iter().any(|c| c.is_alphabetic())
            }
            TypoKind::RandomSwap => {
                long_enough
                    && chars
                        .windows(2)
                        .any(|w| w[0] != w[1] && w[0].is_alphabetic() && w[1].is_alphabetic())
            }
            TypoKind::Keyboard => {
                long_enough && chars.iter().any(|c| self.adjacency.neighbors(*c).is_some())
            }
            TypoKind::Misspelling => self.dictionary.variants(word).is_some(),
        }
    }

    /// All kinds applicable to `word`, in the fixed [`TypoKind::ALL`] order.
    pub fn applicable_kinds(&self, word: &str) -> Vec<TypoKind> {
        TypoKind::ALL
            .into_iter()
            .filter(|&k| self.is_applicable(word, k))
            .collect()
    }

    /// Apply exactly one edit of the given kind. `Err(Inapplicable)` signals
    /// the caller to resample the kind; on success the result differs from
    /// the input.
    pub fn perturb_word(
        &self,
        word: &str,
        kind: TypoKind,
        rng: &mut impl Rng,
    ) -> Result<String, Inapplicable> {
        if !self.is_applicable(word, kind) {
            return Err(Inapplicable);
        }
        let chars: Vec<char> = word.chars().collect();
        let out = match kind {
            TypoKind::RandomInsert => {
                let pos = rng.gen_range(0..=chars.len());
                let letter = char::from(b'a' + rng.gen_range(0..26u8));
                let mut c = chars.clone();
                c.insert(pos, letter);
                c.into_iter().collect()
            }
            TypoKind::RandomDelete => {
                let positions: Vec<usize> = alphabetic_positions(&chars);
                let pos = positions[rng.gen_range(0..positions.len())];
                let mut c = chars.clone();
                c.remove(pos);
                c.into_iter().collect()
            }
            TypoKind::RandomSwap => {
                let pairs: Vec<usize> = chars
                    .windows(2)
                    .enumerate()
                    .filter(|(_, w)| w[0] != w[1] && w[0].is_alphabetic() && w[1].is_alphabetic())
                    .map(|(i, _)| i)
                    .collect();
                let i = pairs[rng.gen_range(0..pairs.len())];
                let mut c = chars.clone();
                c.swap(i, i + 1);
                c.into_iter().collect()
            }
            TypoKind::RandomSubstitute => {
                let positions: Vec<usize> = alphabetic_positions(&chars);
                let pos = positions[rng.gen_range(0..positions.len())];
                let mut c = chars.clone();
                c[pos] = random_letter_excluding(c[pos], rng);
                c.into_iter().collect()
            }
            TypoKind::Keyboard => {
                let positions: Vec<usize> = chars
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| self.adjacency.neighbors(**c).is_some())
                    .map(|(i, _)| i)
                    .collect();
                let pos = positions[rng.gen_range(0..positions.len())];
                let neighbors = self.adjacency.neighbors(chars[pos]).expect("position was filtered");
                let mut c = chars.clone();
                c[pos] = neighbors[rng.gen_range(0..neighbors.len())];
                c.into_iter().collect()
            }
            TypoKind::Misspelling => {
                let variants = self.dictionary.variants(word).expect("applicability checked");
                variants[rng.gen_range(0..variants.len())].clone()
            }
        };
        debug_assert_ne!(out, word, "an applied edit must change the word");
        Ok(out)
    }

    /// Family-uniform kind choice among the applicable kinds: pick one of
    /// the three families (restricted to those with an applicable kind),
    /// then uniformly inside the family. Equivalent to resampling
    /// inapplicable kinds.
    fn choose_kind(&self, word: &str, rng: &mut impl Rng) -> Option<TypoKind> {
        let applicable = self.applicable_kinds(word);
        if applicable.is_empty() {
            return None;
        }
        let families: Vec<Family> = FAMILIES
            .into_iter()
            .filter(|f| applicable.iter().any(|k| k.family() == *f))
            .collect();
        let family = families[rng.gen_range(0..families.len())];
        let in_family: Vec<TypoKind> =
            applicable.into_iter().filter(|k| k.family() == family).collect();
        Some(in_family[rng.gen_range(0..in_family.len())])
    }

    /// Word indices a setting exposes. The discriminative setting requires
    /// the question's relevant passage text.
    pub fn eligible_indices(
        &self,
        question_text: &str,
        setting: TypoSetting,
        relevant_passage: Option<&str>,
    ) -> Result<BTreeSet<usize>, TypoError> {
        let words = split_words(question_text);
        match setting {
            TypoSetting::RandomWords => Ok((0..words.len()).collect()),
            TypoSetting::NonStopwords => Ok(words
                .iter()
                .enumerate()
                .filter(|(_, w)| !self.stopwords.is_stopword(&w.text))
                .map(|(i, _)| i)
                .collect()),
            TypoSetting::DiscriminativeUtterances => {
                let passage = relevant_passage.ok_or(TypoError::MissingDiscriminativeContext)?;
                let spans = self.discriminative_utterances(question_text, passage);
                Ok(spans.into_iter().flatten().collect())
            }
        }
    }

    /// Maximal contiguous word sequences (length ≥ 2) shared between the
    /// question and the passage, extracted longest-first with leftmost
    /// tie-break, non-overlapping in the question. Spans made up entirely
    /// of stopwords are discarded — shared scaffolding like "was the" is
    /// not a discriminative utterance.
    pub fn discriminative_utterances(
        &self,
        question_text: &str,
        passage_text: &str,
    ) -> Vec<Range<usize>> {
        let q: Vec<String> = split_words(question_text).into_iter().map(|w| w.text).collect();
        let p: Vec<String> = split_words(passage_text).into_iter().map(|w| w.text).collect();
        if q.is_empty() || p.is_empty() {
            return Vec::new();
        }

        // Longest-common-suffix DP; cell (i, j) = match length ending at
        // q[i-1], p[j-1]. Every cell ≥ 2 contributes a candidate span.
        let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new(); // (start, len)
        let mut prev = vec![0usize; p.len() + 1];
        for i in 1..=q.len() {
            let mut row = vec![0usize; p.len() + 1];
            for j in 1..=p.len() {
                if q[i - 1] == p[j - 1] {
                    row[j] = prev[j - 1] + 1;
                    if row[j] >= 2 {
                        candidates.insert((i - row[j], row[j]));
                    }
                }
            }
            prev = row;
        }

        let mut ordered: Vec<(usize, usize)> = candidates.into_iter().collect();
        // Longest first; leftmost wins ties.
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut taken = vec![false; q.len()];
        let mut spans = Vec::new();
        for (start, len) in ordered {
            let range = start..start + len;
            if range.clone().any(|i| taken[i]) {
                continue;
            }
            if range.clone().all(|i| self.stopwords.is_stopword(&q[i])) {
                continue;
            }
            for i in range.clone() {
                taken[i] = true;
            }
            spans.push(range);
        }
        spans.sort_by_key(|r| r.start);
        spans
    }

    /// Independently for each eligible word, with probability `p`, apply one
    /// uniformly chosen applicable edit. Randomness is drawn from a per-word
    /// substream of `question_seed`, so neither word order nor the
    /// eligibility set shifts another word's outcome.
    pub fn perturb_question(
        &self,
        question: &Question,
        eligible: &BTreeSet<usize>,
        p: f64,
        question_seed: u64,
    ) -> TypoedQuestion {
        assert!((0.0..=1.0).contains(&p), "typo probability must be in [0,1]");
        let words = split_words(&question.text);
        let mut edits = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(question_seed, &format!("w{i}")));
            let coin: f64 = rng.gen();
            if !eligible.contains(&i) || coin >= p {
                continue;
            }
            if let Some(kind) = self.choose_kind(&w.text, &mut rng) {
                let typoed = self
                    .perturb_word(&w.text, kind, &mut rng)
                    .expect("chosen kind is applicable");
                edits.push(TypoEdit {
                    word_index: i,
                    original: w.text.clone(),
                    typoed,
                    kind,
                });
            }
        }

        // Splice typoed words into the original text, preserving everything
        // else byte-for-byte.
        let mut text = String::with_capacity(question.text.len() + 8);
        let mut cursor = 0;
        let mut edit_iter = edits.iter().peekable();
        for (i, w) in words.iter().enumerate() {
            text.push_str(&question.text[cursor..w.range.start]);
            match edit_iter.peek() {
                Some(e) if e.word_index == i => {
                    text.push_str(&e.typoed);
                    edit_iter.next();
                }
                _ => text.push_str(&question.text[w.range.clone()]),
            }
            cursor = w.range.end;
        }
        text.push_str(&question.text[cursor..]);

        TypoedQuestion {
            base_question_id: question.id.clone(),
            text,
            edits,
            no_eligible_words: eligible.is_empty(),
        }
    }

    /// One typoed variant per question. Per-question randomness is derived
    /// from `(seed, question id)`: output does not depend on set order, and
    /// identical inputs reproduce identical files.
    pub fn build_testset(
        &self,
        questions: &QuestionSet,
        setting: TypoSetting,
        p: f64,
        seed: u64,
        context: Option<(&RelevanceJudgments, &PassageCollection)>,
    ) -> Result<Vec<TypoedQuestion>, TypoError> {
        if setting == TypoSetting::DiscriminativeUtterances && context.is_none() {
            return Err(TypoError::MissingDiscriminativeContext);
        }
        let mut out = Vec::with_capacity(questions.len());
        for q in questions.iter() {
            let passage_text = context.and_then(|(qrels, passages)| {
                qrels
                    .relevant(&q.id)
                    .and_then(|pids| pids.iter().next())
                    .and_then(|pid| passages.by_id(pid))
                    .map(|p| p.text.as_str())
            });
            let eligible = match setting {
                TypoSetting::DiscriminativeUtterances if passage_text.is_none() => {
                    // No judged passage: nothing is discriminative.
                    BTreeSet::new()
                }
                _ => self.eligible_indices(&q.text, setting, passage_text)?,
            };
            out.push(self.perturb_question(q, &eligible, p, derive_seed(seed, &q.id)));
        }
        Ok(out)
    }
}

fn alphabetic_positions(chars: &[char]) -> Vec<usize> {
    chars
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_alphabetic())
        .map(|(i, _)| i)
        .collect()
}

/// Uniform lowercase letter different from `orig`, using exactly one draw.
fn random_letter_excluding(orig: char, rng: &mut impl Rng) -> char {
    if orig.is_ascii_lowercase() {
        let idx = rng.gen_range(0..25u8);
        let orig_idx = orig as u8 - b'a';
        let shifted = if idx >= orig_idx { idx + 1 } else { idx };
        char::from(b'a' + shifted)
    } else {
        char::from(b'a' + rng.gen_range(0..26u8))
    }
}

/// `typo_questions.tsv`: `qid \t typoed text \t details-JSON` per line.
pub fn save_testset(testset: &[TypoedQuestion], path: &Path) -> Result<(), TypoError> {
    let mut out = String::new();
    for tq in testset {
        let details = serde_json::to_string(&TestsetDetails {
            no_eligible_words: tq.no_eligible_words,
            edits: &tq.edits,
        })
        .expect("serialize edit records");
        out.push_str(&format!("{}\t{}\t{}\n", tq.base_question_id, tq.text, details));
    }
    fs::write(path, out).map_err(|source| TypoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_testset(path: &Path) -> Result<Vec<TypoedQuestion>, TypoError> {
    let raw = fs::read_to_string(path).map_err(|source| TypoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(qid), Some(text), Some(details)) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(TypoError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "expected `qid<TAB>text<TAB>details-JSON`".into(),
            });
        };
        let details: OwnedTestsetDetails =
            serde_json::from_str(details).map_err(|e| TypoError::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("bad details JSON: {e}"),
            })?;
        out.push(TypoedQuestion {
            base_question_id: qid.to_owned(),
            text: text.to_owned(),
            edits: details.edits,
            no_eligible_words: details.no_eligible_words,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct TestsetDetails<'a> {
    no_eligible_words: bool,
    edits: &'a [TypoEdit],
}

#[derive(Deserialize)]
struct OwnedTestsetDetails {
    no_eligible_words: bool,
    edits: Vec<TypoEdit>,
}
