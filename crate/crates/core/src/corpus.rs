//! Retrieval collections: passages, questions, relevance judgments.
//!
//! On-disk formats are UTF-8 tab-separated lines without headers:
//!
//! * `passages.tsv` — `id \t text`
//! * `questions.tsv` — `id \t text [\t answers-JSON-array]`
//! * `qrels.tsv` — `question-id \t passage-id`
//!
//! Collections preserve file order and assign dense integer indices at
//! load time; those indices address embedding-matrix rows downstream.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
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
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("judgments reference unknown ids: {0}")]
    DanglingIds(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// Gold answer strings; may be empty unless answer-recall is evaluated.
    pub answers: Vec<String>,
}

/// Ordered, id-addressable passage collection.
#[derive(Debug, Clone, Default)]
pub struct PassageCollection {
    items: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

/// Ordered, id-addressable question collection.
#[derive(Debug, Clone, Default)]
pub struct QuestionSet {
    items: Vec<Question>,
    by_id: HashMap<String, usize>,
}

/// question-id → set of relevant passage-ids (binary relevance).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    map: BTreeMap<String, BTreeSet<String>>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(raw.lines().map(str::to_owned).collect())
}

/// A text field may not contain the record separators.
fn check_field(path: &Path, line: usize, field: &str) -> Result<(), CorpusError> {
    if field.contains('\t') || field.contains('\n') {
        return Err(CorpusError::MalformedLine {
            path: path.display().to_string(),
            line,
            reason: "embedded tab or newline".into(),
        });
    }
    Ok(())
}

impl PassageCollection {
    pub fn new(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.id.is_empty() || p.text.is_empty() {
                return Err(CorpusError::Invalid(format!(
                    "passage at position {i}: empty id or text"
                )));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate passage id {:?}", p.id)));
            }
        }
        Ok(Self { items: passages, by_id })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut items = Vec::new();
        let mut by_id = HashMap::new();
        for (lineno, line) in read_lines(path)?.iter().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                reason: "expected `id<TAB>text`".into(),
            })?;
            if id.is_empty() || text.is_empty() {
                return Err(CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    reason: "empty id or text".into(),
                });
            }
            check_field(path, lineno, text)?;
            if by_id.insert(id.to_owned(), items.len()).is_some() {
                return Err(CorpusError::DuplicateId {
                    path: path.display().to_string(),
                    line: lineno,
                    id: id.to_owned(),
                });
            }
            items.push(Passage { id: id.to_owned(), text: text.to_owned() });
        }
        Ok(Self { items, by_id })
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for p in &self.items {
            writeln!(out, "{}\t{}", p.id, p.text).expect("string write");
        }
        fs::write(path, out).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> &Passage {
        &self.items[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Passage> {
        self.index_of(id).map(|i| &self.items[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.items.iter()
    }
}

impl QuestionSet {
    pub fn new(questions: Vec<Question>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if q.id.is_empty() || q.text.is_empty() {
                return Err(CorpusError::Invalid(format!(
                    "question at position {i}: empty id or text"
                )));
            }
            if by_id.insert(q.id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate question id {:?}", q.id)));
            }
        }
        Ok(Self { items: questions, by_id })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut questions = Vec::new();
        for (lineno, line) in read_lines(path)?.iter().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let id = fields.next().unwrap_or_default();
            let text = fields.next().ok_or_else(|| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                reason: "expected `id<TAB>text[<TAB>answers]`".into(),
            })?;
            if id.is_empty() || text.is_empty() {
                return Err(CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    reason: "empty id or text".into(),
                });
            }
            let answers = match fields.next() {
                None | Some("") => Vec::new(),
                Some(json) => {
                    serde_json::from_str::<Vec<String>>(json).map_err(|e| {
                        CorpusError::MalformedLine {
                            path: path.display().to_string(),
                            line: lineno,
                            reason: format!("answers field is not a JSON string array: {e}"),
                        }
                    })?
                }
            };
            questions.push(Question {
                id: id.to_owned(),
                text: text.to_owned(),
                answers,
            });
        }
        let path_str = path.display().to_string();
        Self::new(questions).map_err(|e| CorpusError::Invalid(format!("{path_str}: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for q in &self.items {
            if q.answers.is_empty() {
                writeln!(out, "{}\t{}", q.id, q.text).expect("string write");
            } else {
                let answers = serde_json::to_string(&q.answers).expect("serialize answers");
                writeln!(out, "{}\t{}\t{}", q.id, q.text, answers).expect("string write");
            }
        }
        fs::write(path, out).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> &Question {
        &self.items[index]
    }

    pub fn by_id(&self, id: &str) -> Option<&Question> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Question> {
        self.items.iter()
    }

    /// Ids of questions present here but also in `other` (disjointness check).
    pub fn overlap(&self, other: &QuestionSet) -> Vec<String> {
        self.items
            .iter()
            .filter(|q| other.contains(&q.id))
            .map(|q| q.id.clone())
            .collect()
    }
}

impl RelevanceJudgments {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (qid, pid) in pairs {
            map.entry(qid).or_default().insert(pid);
        }
        Self { map }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        for (lineno, line) in read_lines(path)?.iter().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let (qid, pid) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedLine {
                path: path.display().to_string(),
                line: lineno,
                reason: "expected `question-id<TAB>passage-id`".into(),
            })?;
            if qid.is_empty() || pid.is_empty() || pid.contains('\t') {
                return Err(CorpusError::MalformedLine {
                    path: path.display().to_string(),
                    line: lineno,
                    reason: "empty or malformed id".into(),
                });
            }
            pairs.push((qid.to_owned(), pid.to_owned()));
        }
        Ok(Self::new(pairs))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (qid, pids) in &self.map {
            for pid in pids {
                writeln!(out, "{qid}\t{pid}").expect("string write");
            }
        }
        fs::write(path, out).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn relevant(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.map.get(qid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Every judged id must resolve against the given collections; the error
    /// lists *all* dangling references, not just the first.
    pub fn validate(
        &self,
        passages: &PassageCollection,
        questions: &QuestionSet,
    ) -> Result<(), CorpusError> {
        let mut dangling = Vec::new();
        for (qid, pids) in &self.map {
            if !questions.contains(qid) {
                dangling.push(format!("question {qid:?}"));
            }
            for pid in pids {
                if passages.index_of(pid).is_none() {
                    dangling.push(format!("passage {pid:?} (judged for {qid:?})"));
                }
            }
        }
        if dangling.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::DanglingIds(dangling.join(", ")))
        }
    }

    /// Training splits additionally require ≥1 relevant passage per question.
    pub fn require_all_judged(&self, questions: &QuestionSet) -> Result<(), CorpusError> {
        let missing: Vec<&str> = questions
            .iter()
            .filter(|q| self.map.get(&q.id).is_none_or(BTreeSet::is_empty))
            .map(|q| q.id.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::Invalid(format!(
                "questions without a relevant passage: {}",
                missing.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("create temp file");
        f.write_all(content.as_bytes()).expect("write temp file");
        f
    }

    #[test]
    fn loads_passages_in_file_order() {
        let f = tmp_file("p1\talpha text\np2\tbeta text\n");
        let coll = PassageCollection::load(f.path()).unwrap();
        assert_eq!(coll.len(), 2);
        assert_eq!(coll.get(0).id, "p1");
        assert_eq!(coll.index_of("p1"), Some(0));
        assert_eq!(coll.by_id("p2").unwrap().text, "beta text");
    }

    #[test]
    fn duplicate_passage_id_is_rejected_by_name() {
        let f = tmp_file("p1\ta\np1\tb\n");
        let err = PassageCollection::load(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1"), "error should name the duplicate id: {msg}");
    }

    #[test]
    fn empty_passage_file_is_a_valid_empty_collection() {
        let f = tmp_file("");
        let coll = PassageCollection::load(f.path()).unwrap();
        assert!(coll.is_empty());
    }

    #[test]
    fn malformed_passage_line_reports_line_number() {
        let f = tmp_file("p1\tok\nno-tab-here\n");
        let err = PassageCollection::load(f.path()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn question_answers_parse_as_json_array() {
        let f = tmp_file("q1\twho founded rome\t[\"Romulus\"]\n");
        let qs = QuestionSet::load(f.path()).unwrap();
        assert_eq!(qs.get(0).answers, vec!["Romulus".to_owned()]);
    }

    #[test]
    fn missing_answers_field_gives_empty_list() {
        let f = tmp_file("q1\twho founded rome\n");
        let qs = QuestionSet::load(f.path()).unwrap();
        assert!(qs.get(0).answers.is_empty());
    }

    #[test]
    fn empty_question_text_is_rejected() {
        let f = tmp_file("q1\t\n");
        assert!(QuestionSet::load(f.path()).is_err());
    }

    #[test]
    fn qrels_group_by_question() {
        let f = tmp_file("q1\tp1\nq1\tp2\nq2\tp1\n");
        let qrels = RelevanceJudgments::load(f.path()).unwrap();
        let rel = qrels.relevant("q1").unwrap();
        assert!(rel.contains("p1") && rel.contains("p2"));
        assert_eq!(qrels.relevant("q2").unwrap().len(), 1);
    }

    #[test]
    fn validate_lists_every_dangling_id() {
        let passages =
            PassageCollection::new(vec![Passage { id: "p1".into(), text: "t".into() }]).unwrap();
        let questions = QuestionSet::new(vec![Question {
            id: "q1".into(),
            text: "t".into(),
            answers: vec![],
        }])
        .unwrap();
        let qrels = RelevanceJudgments::new(vec![
            ("q1".into(), "p9".into()),
            ("q7".into(), "p1".into()),
        ]);
        let err = qrels.validate(&passages, &questions).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p9") && msg.contains("q7"), "{msg}");
    }

    #[test]
    fn empty_qrels_fail_the_training_coverage_check() {
        let questions = QuestionSet::new(vec![Question {
            id: "q1".into(),
            text: "t".into(),
            answers: vec![],
        }])
        .unwrap();
        let qrels = RelevanceJudgments::default();
        assert!(qrels.require_all_judged(&questions).is_err());
    }

    #[test]
    fn round_trip_preserves_ids_order_and_texts() {
        let dir = tempfile::tempdir().unwrap();
        let passages = PassageCollection::new(vec![
            Passage { id: "b".into(), text: "second alphabetically but first here".into() },
            Passage { id: "a".into(), text: "first alphabetically".into() },
        ])
        .unwrap();
        let path = dir.path().join("p.tsv");
        passages.save(&path).unwrap();
        let reloaded = PassageCollection::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        for i in 0..2 {
            assert_eq!(reloaded.get(i), passages.get(i));
        }

        let questions = QuestionSet::new(vec![
            Question { id: "q1".into(), text: "with answers".into(), answers: vec!["x".into()] },
            Question { id: "q2".into(), text: "without".into(), answers: vec![] },
        ])
        .unwrap();
        let qpath = dir.path().join("q.tsv");
        questions.save(&qpath).unwrap();
        let reloaded = QuestionSet::load(&qpath).unwrap();
        for i in 0..2 {
            assert_eq!(reloaded.get(i), questions.get(i));
        }

        let qrels = RelevanceJudgments::new(vec![
            ("q1".into(), "b".into()),
            ("q2".into(), "a".into()),
        ]);
        let rpath = dir.path().join("qrels.tsv");
        qrels.save(&rpath).unwrap();
        assert_eq!(RelevanceJudgments::load(&rpath).unwrap(), qrels);
    }
}
