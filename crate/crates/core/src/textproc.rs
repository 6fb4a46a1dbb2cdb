//! Word segmentation, subword vocabulary, tokenization, IDF, stopwords.
//!
//! The subword scheme is greedy longest-prefix matching (continuation
//! pieces carry a `##` prefix) over a vocabulary grown by merging the
//! most frequent adjacent piece pair, starting from single characters.
//! Every visible ASCII character is present as both an initial and a
//! continuation piece, so tokenization of ASCII words is total; a word
//! containing any other character maps to a single `[UNK]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{PassageCollection, QuestionSet};

pub const UNK: &str = "[UNK]";
pub const PAD: &str = "[PAD]";

/// Visible ASCII, the guaranteed base alphabet: `'!'..='~'`.
fn base_alphabet() -> impl Iterator<Item = char> {
    (0x21u8..=0x7e).map(char::from)
}

#[derive(Debug, Error)]
pub enum TextprocError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocabulary invariant violated: {0}")]
    InvalidVocab(String),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the {base} base pieces + reserved tokens")]
    TargetTooSmall { target: usize, base: usize },
}

/// A word produced by [`split_words`]: lowercased text plus the byte range
/// it occupied in the source string (for in-place splicing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub range: Range<usize>,
}

/// Lowercased maximal runs of alphanumeric characters; everything else is
/// discarded but the original byte positions are kept.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            words.push(Word { text: text[s..i].to_lowercase(), range: s..i });
        }
    }
    if let Some(s) = start {
        words.push(Word { text: text[s..].to_lowercase(), range: s..text.len() });
    }
    words
}

/// Subword inventory with dense ids. Ids 0 and 1 are `[UNK]` and `[PAD]`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn pad_id(&self) -> u32 {
        1
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn pieces(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().map(String::as_str)
    }

    /// Number of pieces in a bare base vocabulary (reserved + alphabet in
    /// both positions); the minimum legal target size for [`Self::build`].
    pub fn base_size() -> usize {
        2 + 2 * base_alphabet().count()
    }

    fn from_pieces(pieces: Vec<String>) -> Result<Self, TextprocError> {
        let mut ids = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(TextprocError::InvalidVocab(format!("empty piece at id {i}")));
            }
            if ids.insert(p.clone(), i as u32).is_some() {
                return Err(TextprocError::InvalidVocab(format!("duplicate piece {p:?}")));
            }
        }
        let vocab = Self { pieces, ids };
        if vocab.pieces.first().map(String::as_str) != Some(UNK)
            || vocab.pieces.get(1).map(String::as_str) != Some(PAD)
        {
            return Err(TextprocError::InvalidVocab(format!(
                "ids 0/1 must be {UNK}/{PAD}"
            )));
        }
        for c in base_alphabet() {
            if vocab.id_of(&c.to_string()).is_none() {
                return Err(TextprocError::InvalidVocab(format!(
                    "missing base initial piece {c:?}"
                )));
            }
            if vocab.id_of(&format!("##{c}")).is_none() {
                return Err(TextprocError::InvalidVocab(format!(
                    "missing base continuation piece for {c:?}"
                )));
            }
        }
        Ok(vocab)
    }

    /// Grow a vocabulary from the word-segmented corpus: start from single
    /// characters, repeatedly merge the most frequent adjacent piece pair
    /// (ties broken by lexicographically smaller pair) until `target_size`
    /// pieces exist or no pair occurs anymore.
    pub fn build(
        passages: &PassageCollection,
        questions: &QuestionSet,
        target_size: usize,
    ) -> Result<Self, TextprocError> {
        if passages.is_empty() && questions.is_empty() {
            return Err(TextprocError::EmptyCorpus);
        }
        if target_size < Self::base_size() {
            return Err(TextprocError::TargetTooSmall {
                target: target_size,
                base: Self::base_size(),
            });
        }

        // Word frequencies over the whole corpus. Words with characters
        // outside the base alphabet can never fully match and are skipped.
        let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
        let texts = passages
            .iter()
            .map(|p| p.text.as_str())
            .chain(questions.iter().map(|q| q.text.as_str()));
        for text in texts {
            for w in split_words(text) {
                if w.text.chars().all(|c| (0x21..=0x7e).contains(&(c as u32))) {
                    *word_freq.entry(w.text).or_default() += 1;
                }
            }
        }

        // Each distinct word as a piece sequence: first char initial, rest
        // continuation. Merging pair (a, b) concatenates b's characters onto
        // a, keeping a's position marker.
        let mut segmented: Vec<(Vec<String>, u64)> = word_freq
            .into_iter()
            .map(|(word, freq)| {
                let pieces = word
                    .chars()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { c.to_string() } else { format!("##{c}") })
                    .collect();
                (pieces, freq)
            })
            .collect();

        let mut pieces: Vec<String> = vec![UNK.to_owned(), PAD.to_owned()];
        pieces.extend(base_alphabet().map(|c| c.to_string()));
        pieces.extend(base_alphabet().map(|c| format!("##{c}")));
        let mut known: HashSet<String> = pieces.iter().cloned().collect();

        while pieces.len() < target_size {
            let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (segs, freq) in &segmented {
                for pair in segs.windows(2) {
                    *pair_counts.entry((&pair[0], &pair[1])).or_default() += freq;
                }
            }
            // Max count, lexicographically smallest pair on ties; BTreeMap
            // iteration order makes the first max the smallest pair.
            let Some(((a, b), _)) = pair_counts
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then_with(|| y.0.cmp(x.0)))
                .map(|(k, v)| (*k, *v))
            else {
                break; // every word is a single piece already
            };
            let merged = format!("{a}{}", b.strip_prefix("##").unwrap_or(b));
            let (a, b) = (a.to_owned(), b.to_owned());
            for (segs, _) in &mut segmented {
                let mut i = 0;
                while i + 1 < segs.len() {
                    if segs[i] == a && segs[i + 1] == b {
                        segs[i] = merged.clone();
                        segs.remove(i + 1);
                    } else {
                        i += 1;
                    }
                }
            }
            // A merge can reproduce a piece that already exists (same string
            // reachable via different merge orders); it still changes the
            // segmentation but must not duplicate the inventory entry.
            if known.insert(merged.clone()) {
                pieces.push(merged);
            }
        }

        Self::from_pieces(pieces)
    }

    /// One piece per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), TextprocError> {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| TextprocError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TextprocError> {
        let raw = fs::read_to_string(path).map_err(|source| TextprocError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_pieces(raw.lines().map(str::to_owned).collect())
    }

    /// Greedy longest-prefix tokenization of one (lowercased) word. The
    /// first piece comes from the initial inventory, the rest from the
    /// `##` inventory. Any unmatchable character collapses the whole word
    /// to `[UNK]`; by the base-alphabet invariant this only happens for
    /// characters outside visible ASCII.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        debug_assert!(!word.is_empty(), "tokenize_word requires a nonempty word");
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let body: String = chars[start..end].iter().collect();
                let candidate =
                    if start == 0 { body } else { format!("##{body}") };
                if let Some(id) = self.id_of(&candidate) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => return vec![self.unk_id()],
            }
        }
        ids
    }

    /// Tokenize a full text; `word_spans[i]` is the contiguous id range
    /// produced by the i-th word. Spans partition the id list.
    pub fn tokenize_text(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut word_spans = Vec::new();
        for w in split_words(text) {
            let from = ids.len();
            ids.extend(self.tokenize_word(&w.text));
            word_spans.push(from..ids.len());
        }
        TokenSequence { ids, word_spans }
    }

    /// Reassemble a fully-matched word from its pieces (strips `##`).
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let p = self.piece(id);
            out.push_str(p.strip_prefix("##").unwrap_or(p));
        }
        out
    }
}

/// Token ids for a text plus the word → id-range mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub word_spans: Vec<Range<usize>>,
}

/// Passage-collection document frequencies for IDF lookups.
#[derive(Debug, Clone)]
pub struct IdfTable {
    df: HashMap<String, u32>,
    n_docs: u32,
}

impl IdfTable {
    pub fn build(passages: &PassageCollection) -> Self {
        let mut df: HashMap<String, u32> = HashMap::new();
        for p in passages.iter() {
            let distinct: HashSet<String> =
                split_words(&p.text).into_iter().map(|w| w.text).collect();
            for w in distinct {
                *df.entry(w).or_default() += 1;
            }
        }
        Self { df, n_docs: passages.len() as u32 }
    }

    pub fn document_count(&self) -> u32 {
        self.n_docs
    }

    /// Smoothed inverse document frequency: `ln((1+N)/(1+df))`; unseen
    /// terms use df = 0.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        (f64::from(1 + self.n_docs) / f64::from(1 + df)).ln()
    }

    /// The word's IDF divided by the sum of IDFs of all the question's
    /// words. A zero IDF sum falls back to the uniform 1/|words|.
    pub fn relative_importance(&self, word: &str, question_words: &[String]) -> f64 {
        assert!(!question_words.is_empty(), "question has no words");
        let total: f64 = question_words.iter().map(|w| self.idf(w)).sum();
        if total <= 0.0 {
            1.0 / question_words.len() as f64
        } else {
            self.idf(word) / total
        }
    }
}

/// Fixed lowercase stopword list.
#[derive(Debug, Clone)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    /// The list shipped with the crate (~175 common English words).
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/stopwords.txt"))
    }

    pub fn from_path(path: &Path) -> Result<Self, TextprocError> {
        let raw = fs::read_to_string(path).map_err(|source| TextprocError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&raw))
    }

    fn parse(raw: &str) -> Self {
        let words = raw
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        if word.chars().any(char::is_uppercase) {
            self.words.contains(&word.to_lowercase())
        } else {
            self.words.contains(word)
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, Question};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn passage_collection(texts: &[&str]) -> PassageCollection {
        PassageCollection::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage { id: format!("p{i}"), text: (*t).to_owned() })
                .collect(),
        )
        .unwrap()
    }

    fn question_set(texts: &[&str]) -> QuestionSet {
        QuestionSet::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Question {
                    id: format!("q{i}"),
                    text: (*t).to_owned(),
                    answers: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    /// Base vocabulary plus explicit extra pieces, for tokenizer tests.
    fn vocab_with(extra: &[&str]) -> Vocabulary {
        let mut pieces: Vec<String> = vec![UNK.to_owned(), PAD.to_owned()];
        pieces.extend(base_alphabet().map(|c| c.to_string()));
        pieces.extend(base_alphabet().map(|c| format!("##{c}")));
        pieces.extend(extra.iter().map(|s| (*s).to_owned()));
        Vocabulary::from_pieces(pieces).unwrap()
    }

    #[test]
    fn splits_lowercase_words_and_drops_punctuation() {
        let words: Vec<String> = split_words("Who was president Lincoln born?")
            .into_iter()
            .map(|w| w.text)
            .collect();
        assert_eq!(words, ["who", "was", "president", "lincoln", "born"]);
    }

    #[test]
    fn splits_empty_text_to_nothing() {
        assert!(split_words("").is_empty());
    }

    #[test]
    fn trailing_punctuation_is_stripped() {
        let words = split_words("wwi?");
        assert_eq!(words.len(), 1);
        assert_eq!(words[0].text, "wwi");
        assert_eq!(words[0].range, 0..3);
    }

    #[test]
    fn word_ranges_cover_original_bytes() {
        let text = "Alpha, beta-3!";
        for w in split_words(text) {
            assert_eq!(text[w.range.clone()].to_lowercase(), w.text);
        }
    }

    #[test]
    fn build_merges_the_repeated_pair() {
        let passages = passage_collection(&["ab ab ab"]);
        let questions = question_set(&[]);
        let vocab =
            Vocabulary::build(&passages, &questions, Vocabulary::base_size() + 1).unwrap();
        assert!(vocab.id_of("ab").is_some(), "pair (a, ##b) occurs 3x and must merge");
    }

    #[test]
    fn build_at_base_size_is_exactly_alphabet_plus_reserved() {
        let passages = passage_collection(&["ab ab"]);
        let questions = question_set(&[]);
        let vocab = Vocabulary::build(&passages, &questions, Vocabulary::base_size()).unwrap();
        assert_eq!(vocab.len(), Vocabulary::base_size());
        assert!(vocab.id_of("ab").is_none());
    }

    #[test]
    fn equal_count_pairs_merge_lexicographically_smaller_first() {
        // (a,##b) and (c,##d) both occur twice; only one merge is allowed.
        let passages = passage_collection(&["ab cd ab cd"]);
        let questions = question_set(&[]);
        let vocab =
            Vocabulary::build(&passages, &questions, Vocabulary::base_size() + 1).unwrap();
        assert!(vocab.id_of("ab").is_some());
        assert!(vocab.id_of("cd").is_none());
    }

    #[test]
    fn build_rejects_empty_corpus() {
        let err = Vocabulary::build(
            &PassageCollection::default(),
            &QuestionSet::default(),
            Vocabulary::base_size(),
        )
        .unwrap_err();
        assert!(matches!(err, TextprocError::EmptyCorpus));
    }

    #[test]
    fn tokenizes_with_continuation_pieces() {
        let vocab = vocab_with(&["robust", "##ness"]);
        let ids = vocab.tokenize_word("robustness");
        let pieces: Vec<&str> = ids.iter().map(|&i| vocab.piece(i)).collect();
        assert_eq!(pieces, ["robust", "##ness"]);
    }

    #[test]
    fn tokenizes_trailing_fragment_separately() {
        // "##d" is already a base single-char continuation piece.
        let vocab = vocab_with(&["robust", "##ness"]);
        let ids = vocab.tokenize_word("robustnessd");
        let pieces: Vec<&str> = ids.iter().map(|&i| vocab.piece(i)).collect();
        assert_eq!(pieces, ["robust", "##ness", "##d"]);
    }

    #[test]
    fn whole_word_piece_wins_over_fragments() {
        let vocab = vocab_with(&["robust", "##ness", "robustness"]);
        let ids = vocab.tokenize_word("robustness");
        assert_eq!(ids.len(), 1);
        assert_eq!(vocab.piece(ids[0]), "robustness");
    }

    #[test]
    fn non_ascii_word_maps_to_unk() {
        let vocab = vocab_with(&[]);
        assert_eq!(vocab.tokenize_word("naïve"), vec![vocab.unk_id()]);
    }

    #[test]
    fn text_tokenization_spans_partition_the_ids() {
        let vocab = vocab_with(&["robust", "##ness"]);
        let seq = vocab.tokenize_text("robustness is robustness");
        assert_eq!(seq.word_spans.len(), 3);
        let mut expected_start = 0;
        for span in &seq.word_spans {
            assert_eq!(span.start, expected_start);
            expected_start = span.end;
        }
        assert_eq!(expected_start, seq.ids.len());
    }

    #[test]
    fn vocab_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocab_with(&["robust", "##ness"]);
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        assert_eq!(loaded.id_of("robust"), vocab.id_of("robust"));
    }

    #[test]
    fn load_rejects_vocab_missing_reserved_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "a\nb\nc\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    #[test]
    fn idf_of_ubiquitous_term_is_zero() {
        let passages = passage_collection(&["apple pie", "apple cake", "apple tart"]);
        let table = IdfTable::build(&passages);
        assert_relative_eq!(table.idf("apple"), 0.0);
    }

    #[test]
    fn idf_matches_closed_form_for_unseen_and_partial_terms() {
        // N = 9: unseen → ln 10; df = 4 → ln 2.
        let texts: Vec<String> = (0..9)
            .map(|i| if i < 4 { format!("target word {i}") } else { format!("other word {i}") })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let table = IdfTable::build(&passage_collection(&refs));
        assert_relative_eq!(table.idf("missing"), 10f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(table.idf("target"), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn relative_importance_of_single_word_question_is_one() {
        let table = IdfTable::build(&passage_collection(&["some passage text"]));
        let words = vec!["rare".to_owned()];
        assert_relative_eq!(table.relative_importance("rare", &words), 1.0);
    }

    #[test]
    fn equal_idf_words_share_importance_uniformly() {
        let table = IdfTable::build(&passage_collection(&["filler body"]));
        let words: Vec<String> =
            ["aa", "bb", "cc", "dd"].iter().map(|s| (*s).to_owned()).collect();
        for w in &words {
            assert_relative_eq!(table.relative_importance(w, &words), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn importance_follows_idf_ratio() {
        // df: "everywhere" in 4/4 docs (idf 0 is unhelpful here), so build a
        // synthetic ratio instead: word A df=0 (idf ln5), B and C df=1 each
        // over N=4 → idf ln(5/2); check A's share = ln5/(ln5+2ln2.5).
        let passages = passage_collection(&["b c", "x y", "x z", "x w"]);
        let table = IdfTable::build(&passages);
        let words: Vec<String> = ["a", "b", "c"].iter().map(|s| (*s).to_owned()).collect();
        let ia = 5f64.ln();
        let ib = 2.5f64.ln();
        assert_relative_eq!(
            table.relative_importance("a", &words),
            ia / (ia + 2.0 * ib),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_idf_sum_falls_back_to_uniform() {
        let passages = passage_collection(&["common words here"]);
        let table = IdfTable::build(&passages);
        let words: Vec<String> = ["common", "words"].iter().map(|s| (*s).to_owned()).collect();
        assert_relative_eq!(table.relative_importance("common", &words), 0.5);
    }

    #[test]
    fn stopword_membership() {
        let sw = Stopwords::builtin();
        assert!(sw.is_stopword("the"));
        assert!(!sw.is_stopword("president"));
        assert!(sw.is_stopword("WaS"));
        assert!(sw.len() > 150, "shipped list should be ~175 entries");
    }

    proptest! {
        /// Tokenization is total over ASCII words, ids stay in range, and
        /// reassembling the pieces reproduces the word.
        #[test]
        fn tokenize_is_total_and_reversible(word in "[a-z0-9]{1,24}") {
            let vocab = vocab_with(&["ro", "##bu", "##st", "the", "##ess"]);
            let ids = vocab.tokenize_word(&word);
            prop_assert!(!ids.is_empty());
            prop_assert!(ids.iter().all(|&i| (i as usize) < vocab.len()));
            prop_assert!(ids.iter().all(|&i| i != vocab.unk_id()));
            prop_assert_eq!(vocab.detokenize(&ids), word);
        }

        /// Higher document frequency strictly lowers IDF at fixed N.
        #[test]
        fn idf_is_monotone_in_df(df1 in 0usize..30, df2 in 0usize..30, n in 30usize..60) {
            prop_assume!(df1 < df2);
            // Doc i contains "rarer" while i < df1 and "commoner" while i < df2.
            let texts: Vec<String> = (0..n)
                .map(|i| {
                    let mut t = format!("filler{i}");
                    if i < df1 { t.push_str(" rarer"); }
                    if i < df2 { t.push_str(" commoner"); }
                    t
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let table = IdfTable::build(&passage_collection(&refs));
            prop_assert!(table.idf("rarer") > table.idf("commoner"));
        }

        /// Importance shares over a question sum to 1 when any word has
        /// positive IDF.
        #[test]
        fn importance_sums_to_one(words in proptest::collection::vec("[a-z]{2,8}", 1..6)) {
            let passages = passage_collection(&["anchor text only"]);
            let table = IdfTable::build(&passages);
            let words: Vec<String> = words;
            let total: f64 =
                words.iter().map(|w| table.relative_importance(w, &words)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
