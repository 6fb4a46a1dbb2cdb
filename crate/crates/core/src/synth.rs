//! Deterministic synthetic corpus for desk-scale experiments.
//!
//! Every passage describes one *entity*: an unordered pair of invented
//! two-syllable words ("halves"). Halves are heavily reused across passages
//! (~60 passages each) but each unordered pair occurs exactly once, so a
//! question naming both halves pins a unique passage while a question with
//! one damaged half collides with dozens of distractors. This concentrates
//! the corpus' discriminative signal in exactly two question words, which
//! the question/passage templates keep as the only multi-word overlap
//! between a question and its passage.
//!
//! Questions compose grammar stopwords with fillers from a small shared
//! pool, so phrasings vary while the entity pair stays the load-bearing
//! content. Passage tails recycle the question lexicon (always flanked by
//! passage-only words), which keeps every question word's document
//! frequency above the halves': IDF-ranked word importance then peaks at
//! the entity words, as it does for entities in natural corpora. Passages
//! flank each entity half with passage-only content words, so the entity
//! bigram is the only multi-word sequence a question ever shares with a
//! passage. Each passage carries a globally unique "detail" word serving
//! as the question's answer string.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Passage, PassageCollection, Question, QuestionSet, RelevanceJudgments};
use crate::util::derive_seed;

/// Shape of the generated corpus. Defaults give ~2000 passages with
/// questions over the first quarter.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_passages: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 7, n_passages: 2000, n_train: 500, n_dev: 50, n_test: 200 }
    }
}

/// A complete generated corpus: one passage collection, three question
/// splits, and singleton relevance judgments per split.
#[derive(Debug, Clone)]
pub struct DeskDataset {
    pub passages: PassageCollection,
    pub train: QuestionSet,
    pub dev: QuestionSet,
    pub test: QuestionSet,
    pub train_qrels: RelevanceJudgments,
    pub dev_qrels: RelevanceJudgments,
    pub test_qrels: RelevanceJudgments,
}

const HALF_SYLLABLES: [&str; 20] = [
    "bal", "cor", "dun", "fel", "gar", "hol", "jin", "kam", "lor", "mev", "nor", "pel", "quin",
    "rav", "sol", "tor", "vul", "wex", "yar", "zem",
];

const DETAIL_SYLLABLES: [&str; 13] = [
    "zib", "quo", "xan", "vyr", "jup", "kye", "wib", "fyx", "gex", "pyl", "zod", "qua", "xim",
];

/// Content words for question phrasing. The pool is deliberately large:
/// two random questions rarely share a filler, so question embeddings are
/// naturally spread out and pulling a question toward its typo variant
/// while pushing it from other questions does not have to distort the
/// entity geometry. All splits share this pool (dev/test phrasing is held
/// out by combination, not by lexicon) so every evaluation word has a
/// trained embedding.
const FILLER_WORDS: [&str; 40] = [
    "survey", "records", "project", "study", "report", "effort", "outcome", "history", "review",
    "story", "result", "mission", "budget", "council", "tally", "audit", "motion", "verdict",
    "charter", "decree", "petition", "ballot", "census", "inquiry", "hearing", "summit", "debate",
    "treaty", "pledge", "mandate", "quota", "levy", "grant", "award", "prize", "medal", "trophy",
    "banner", "parade", "rally",
];

/// Question-initial interrogatives (all stopwords).
const WH_WORDS: [&str; 7] = ["what", "who", "when", "where", "why", "how", "which"];

/// Auxiliaries following the wh-word (all stopwords).
const AUX_WORDS: [&str; 7] = ["did", "was", "were", "does", "is", "had", "can"];

/// Slot words for passages; these never appear in questions.
const PASSAGE_WORDS: [&str; 12] = [
    "ledger", "archive", "bulletin", "registry", "chronicle", "dossier", "almanac", "gazette",
    "cabinet", "folio", "binder", "scroll",
];

const PASSAGE_VERBS: [&str; 6] = ["kept", "stored", "filed", "bound", "shelved", "logged"];

const ERA_WORDS: [&str; 6] = ["winter", "summer", "autumn", "spring", "harvest", "festival"];

/// The invented half-word pool: syllable pairs, 66 of them, giving
/// C(66,2) = 2145 possible entities.
fn half_pool() -> Vec<String> {
    let mut halves = Vec::with_capacity(66);
    'outer: for (i, a) in HALF_SYLLABLES.iter().enumerate() {
        for b in &HALF_SYLLABLES[i + 1..] {
            halves.push(format!("{a}{b}"));
            if halves.len() == 66 {
                break 'outer;
            }
        }
    }
    halves
}

/// Globally unique answer words: syllable triples, 2197 available.
fn detail_pool() -> Vec<String> {
    let mut details = Vec::with_capacity(DETAIL_SYLLABLES.len().pow(3));
    for a in DETAIL_SYLLABLES {
        for b in DETAIL_SYLLABLES {
            for c in DETAIL_SYLLABLES {
                details.push(format!("{a}{b}{c}"));
            }
        }
    }
    details
}

/// Every word questions are built from (beyond "the"). Passage tails cycle
/// through this pool so each question word occurs in many passages — more
/// than any entity half does — keeping document frequency, and therefore
/// IDF-based word importance, aligned with true discriminative power: the
/// halves are the rarest words in every question.
fn question_lexicon() -> Vec<&'static str> {
    WH_WORDS.iter().chain(&AUX_WORDS).chain(&FILLER_WORDS).copied().collect()
}

fn passage_text(idx: usize, h1: &str, h2: &str, detail: &str, rng: &mut ChaCha8Rng) -> String {
    let slots: Vec<&&str> = PASSAGE_WORDS.choose_multiple(rng, 5, ).collect();
    let (pw_a, pw_b, pw_c, pw_d, pw_e) = (slots[0], slots[1], slots[2], slots[3], slots[4]);
    let pv = PASSAGE_VERBS.choose(rng).unwrap();
    let era = if rng.gen_bool(0.5) {
        let w = ERA_WORDS.choose(rng).unwrap();
        format!("during {w} days ")
    } else {
        String::new()
    };
    // Every fifth passage carries one question-side word in a fixed tail,
    // flanked by passage-only words so no two-word question sequence ever
    // recurs in a passage: the entity bigram stays the unique multi-word
    // overlap. Round-robin assignment keeps every question word's document
    // frequency small but strictly above any entity half's, so entity words
    // rank highest under IDF while the tail adds almost no lexical noise.
    let tail = if idx % 5 == 0 {
        let lexicon = question_lexicon();
        let qa = lexicon[(idx / 5) % lexicon.len()];
        format!(" tagged under {qa} seal")
    } else {
        String::new()
    };
    format!(
        "the {pw_a} {h1} {h2} {pw_b} was {pv} in the {pw_c} hall {era}and its {detail} count \
         rested near {pw_d} {h1} {h2} {pw_e} rack{tail}"
    )
}

/// Compose a question around the entity bigram: a wh-word, an auxiliary,
/// and two to four fillers from `pool`. Grammar words are all stopwords,
/// and no filler is ever adjacent to a half in both a question and a
/// passage, so the entity bigram is the only multi-word overlap with any
/// passage. The four shapes vary length (7-9 words) and the bigram's
/// position.
fn question_text(h1: &str, h2: &str, pool: &[&str], rng: &mut ChaCha8Rng) -> String {
    let wh = WH_WORDS.choose(rng).unwrap();
    let aux = AUX_WORDS.choose(rng).unwrap();
    let f: Vec<&&str> = pool.choose_multiple(rng, 4).collect();
    match rng.gen_range(0..4u8) {
        0 => format!("{wh} {aux} the {h1} {h2} {} {}", f[0], f[1]),
        1 => format!("{wh} {aux} the {h1} {h2} {} {} {}", f[0], f[1], f[2]),
        2 => format!("{wh} {aux} the {} {h1} {h2} {} {}", f[0], f[1], f[2]),
        _ => format!("{wh} {aux} the {} {h1} {h2} {} {} {}", f[0], f[1], f[2], f[3]),
    }
}

/// Generate the corpus. Fully determined by `config`; every random choice
/// draws from a stream derived from the seed and a purpose label, so output
/// is independent of evaluation order.
pub fn generate(config: &SynthConfig) -> DeskDataset {
    let halves = half_pool();
    let mut entities: Vec<(usize, usize)> = (0..halves.len())
        .flat_map(|i| ((i + 1)..halves.len()).map(move |j| (i, j)))
        .collect();
    assert!(
        config.n_passages <= entities.len(),
        "at most {} distinct entities available",
        entities.len()
    );
    assert!(config.n_train <= config.n_passages, "train questions target distinct passages");
    assert!(config.n_dev <= config.n_train, "dev questions target trained passages");
    assert!(config.n_test <= config.n_train, "test questions target trained passages");
    entities.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "entities")));

    let mut details = detail_pool();
    details.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "details")));
    details.truncate(config.n_passages);

    let mut passages = Vec::with_capacity(config.n_passages);
    for (idx, &(i, j)) in entities[..config.n_passages].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("passage.{idx}")));
        passages.push(Passage {
            id: format!("p{idx:04}"),
            text: passage_text(idx, &halves[i], &halves[j], &details[idx], &mut rng),
        });
    }

    // Train texts by target passage index, so eval splits can redraw the
    // rare collision where a held-out phrasing reproduces the train one.
    let mut train_text_by_target: Vec<Option<String>> = vec![None; config.n_passages];
    let mut make_split = |prefix: &str, n: usize, offset: usize| {
        let mut questions = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(n);
        for k in 0..n {
            let target = offset + k;
            let (i, j) = entities[target];
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("{prefix}.{k}")));
            let mut text = question_text(&halves[i], &halves[j], &FILLER_WORDS, &mut rng);
            if prefix == "tr" {
                train_text_by_target[target] = Some(text.clone());
            } else {
                while train_text_by_target[target].as_deref() == Some(text.as_str()) {
                    text = question_text(&halves[i], &halves[j], &FILLER_WORDS, &mut rng);
                }
            }
            let id = format!("{prefix}{k:03}");
            questions.push(Question { id: id.clone(), text, answers: vec![details[target].clone()] });
            pairs.push((id, format!("p{target:04}")));
        }
        (
            QuestionSet::new(questions).expect("generated ids are unique"),
            RelevanceJudgments::new(pairs),
        )
    };

    let (train, train_qrels) = make_split("tr", config.n_train, 0);
    let (dev, dev_qrels) = make_split("dv", config.n_dev, config.n_train - config.n_dev);
    let (test, test_qrels) = make_split("te", config.n_test, 0);

    DeskDataset {
        passages: PassageCollection::new(passages).expect("generated ids are unique"),
        train,
        dev,
        test,
        train_qrels,
        dev_qrels,
        test_qrels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::split_words;
    use crate::typogen::{TypoEngine, TypoSetting};
    use std::collections::{BTreeMap, BTreeSet, HashSet};

    fn small() -> SynthConfig {
        SynthConfig { seed: 11, n_passages: 300, n_train: 80, n_dev: 10, n_test: 40 }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        for (pa, pb) in a.passages.iter().zip(b.passages.iter()) {
            assert_eq!((&pa.id, &pa.text), (&pb.id, &pb.text));
        }
        for (qa, qb) in a.test.iter().zip(b.test.iter()) {
            assert_eq!((&qa.id, &qa.text, &qa.answers), (&qb.id, &qb.text, &qb.answers));
        }
        let c = generate(&SynthConfig { seed: 12, ..small() });
        assert_ne!(a.passages.iter().next().unwrap().text, c.passages.iter().next().unwrap().text);
    }

    #[test]
    fn shapes_match_the_config() {
        let d = generate(&small());
        assert_eq!(d.passages.len(), 300);
        assert_eq!(d.train.len(), 80);
        assert_eq!(d.dev.len(), 10);
        assert_eq!(d.test.len(), 40);
        for p in d.passages.iter() {
            let n = split_words(&p.text).len();
            assert!((36..=39).contains(&n), "passage {} has {n} words", p.id);
        }
        for q in d.train.iter().chain(d.dev.iter()).chain(d.test.iter()) {
            let n = split_words(&q.text).len();
            assert!((7..=9).contains(&n), "question {} has {n} words", q.id);
        }
    }

    #[test]
    fn entity_pairs_are_unique_and_halves_are_balanced() {
        let d = generate(&SynthConfig::default());
        let halves: HashSet<String> = half_pool().into_iter().collect();
        let mut seen_pairs = HashSet::new();
        let mut half_docs: BTreeMap<String, usize> = BTreeMap::new();
        for p in d.passages.iter() {
            let words = split_words(&p.text);
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for w in &words {
                if halves.contains(&w.text) {
                    *counts.entry(w.text.as_str()).or_default() += 1;
                }
            }
            assert_eq!(counts.len(), 2, "passage {} names exactly two halves", p.id);
            for (&h, &c) in &counts {
                assert_eq!(c, 2, "half {h} appears twice in {}", p.id);
                *half_docs.entry(h.to_owned()).or_default() += 1;
            }
            let mut pair: Vec<&str> = counts.keys().copied().collect();
            pair.sort_unstable();
            assert!(seen_pairs.insert(pair.join("+")), "duplicate entity in {}", p.id);
        }
        for (h, docs) in half_docs {
            assert!((40..=85).contains(&docs), "half {h} in {docs} passages");
        }
    }

    #[test]
    fn details_are_unique_answers() {
        let d = generate(&small());
        let mut seen = HashSet::new();
        for (qid, pids) in d.test_qrels.iter() {
            let q = d.test.by_id(qid).unwrap();
            let pid = pids.iter().next().unwrap();
            let passage = d.passages.by_id(pid).unwrap();
            let answer = &q.answers[0];
            assert!(split_words(&passage.text).iter().any(|w| &w.text == answer));
            // The answer pins its passage: found nowhere else.
            for other in d.passages.iter() {
                if &other.id != pid {
                    assert!(!split_words(&other.text).iter().any(|w| &w.text == answer));
                }
            }
            assert!(seen.insert(answer.clone()));
        }
    }

    #[test]
    fn eval_splits_requery_trained_passages_with_new_phrasing() {
        let d = generate(&small());
        let train_pids: BTreeSet<&str> = d
            .train_qrels
            .iter()
            .flat_map(|(_, pids)| pids.iter().map(String::as_str))
            .collect();
        let train_text_by_pid: BTreeMap<&str, &str> = d
            .train_qrels
            .iter()
            .map(|(qid, pids)| {
                (pids.iter().next().unwrap().as_str(), d.train.by_id(qid).unwrap().text.as_str())
            })
            .collect();
        for (qid, pids) in d.test_qrels.iter().chain(d.dev_qrels.iter()) {
            let pid = pids.iter().next().unwrap().as_str();
            assert!(train_pids.contains(pid), "{qid} targets an untrained passage");
            let eval_q = d
                .test
                .by_id(qid)
                .or_else(|| d.dev.by_id(qid))
                .unwrap();
            assert_ne!(eval_q.text, train_text_by_pid[pid], "{qid} reuses the train phrasing");
        }
    }

    #[test]
    fn entity_halves_carry_the_highest_idf_in_every_question() {
        let d = generate(&small());
        let idf = crate::textproc::IdfTable::build(&d.passages);
        let halves: HashSet<String> = half_pool().into_iter().collect();
        for q in d.train.iter().chain(d.dev.iter()).chain(d.test.iter()) {
            let words = split_words(&q.text);
            let min_half_idf = words
                .iter()
                .filter(|w| halves.contains(&w.text))
                .map(|w| idf.idf(&w.text))
                .fold(f64::INFINITY, f64::min);
            for w in &words {
                if halves.contains(&w.text) {
                    continue;
                }
                assert!(
                    idf.idf(&w.text) < min_half_idf,
                    "word {:?} in {} outranks an entity half in IDF",
                    w.text,
                    q.id
                );
            }
        }
    }

    #[test]
    fn discriminative_span_is_exactly_the_entity_bigram() {
        let d = generate(&small());
        let engine = TypoEngine::builtin();
        let halves: HashSet<String> = half_pool().into_iter().collect();
        for (qid, pids) in d.test_qrels.iter() {
            let q = d.test.by_id(qid).unwrap();
            let passage = d.passages.by_id(pids.iter().next().unwrap()).unwrap();
            let eligible = engine
                .eligible_indices(&q.text, TypoSetting::DiscriminativeUtterances, Some(&passage.text))
                .unwrap();
            let words = split_words(&q.text);
            let entity_indices: BTreeSet<usize> = words
                .iter()
                .enumerate()
                .filter(|(_, w)| halves.contains(&w.text))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(entity_indices.len(), 2);
            assert_eq!(eligible, entity_indices, "question {qid}");
        }
    }
}
