//! Multiple-choice comprehension quizzes: generation, administration
//! against a poster image, and raw plus density-augmented scoring.
//!
//! The on-disk quiz shape mirrors the generation prompt exactly
//! ({"Question 1": {...}, ...}), so fixtures, model output, and persisted
//! artifacts all pass through one validator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest};
use crate::prompts;
use crate::schemas::SchemaId;

pub const QUIZ_SIZE: usize = 50;
/// Per-letter correct-answer count allowed by the balance rule.
pub const BALANCE_MIN: usize = 8;
pub const BALANCE_MAX: usize = 18;
/// Verbatim aspects may carry at most this many questions.
pub const VERBATIM_ASPECT_MAX: usize = 5;
/// Interpretive aspects must each appear at least this often.
pub const INTERPRETIVE_ASPECT_MIN: usize = 2;
/// Fallback for the ground-truth median poster word count.
pub const DEFAULT_MEDIAN_WORDS: f64 = 774.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuizKind {
    Verbatim,
    Interpretive,
}

impl QuizKind {
    pub fn label(self) -> &'static str {
        match self {
            QuizKind::Verbatim => "verbatim",
            QuizKind::Interpretive => "interpretive",
        }
    }

    /// Aspect codes run 'A' through this letter inclusive.
    pub fn max_aspect(self) -> char {
        match self {
            QuizKind::Verbatim => 'M',
            QuizKind::Interpretive => 'J',
        }
    }

    pub fn role_tag(self) -> &'static str {
        match self {
            QuizKind::Verbatim => prompts::roles::QUIZ_GENERATE_VERBATIM,
            QuizKind::Interpretive => prompts::roles::QUIZ_GENERATE_INTERPRETIVE,
        }
    }

    fn schema(self) -> SchemaId {
        match self {
            QuizKind::Verbatim => SchemaId::QuizVerbatim,
            QuizKind::Interpretive => SchemaId::QuizInterpretive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizItem {
    /// 1-based question number.
    pub number: usize,
    pub aspect: char,
    pub question: String,
    pub options: [String; 4],
    pub answer_letter: char,
    pub answer_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuizSet {
    pub kind: QuizKind,
    pub items: Vec<QuizItem>,
}

const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

impl QuizSet {
    /// The prompt-shaped JSON object, answers included.
    pub fn to_value(&self) -> Value {
        let mut obj = serde_json::Map::new();
        for item in &self.items {
            obj.insert(
                format!("Question {}", item.number),
                json!({
                    "aspect": item.aspect.to_string(),
                    "question": item.question,
                    "options": item.options,
                    "answer": format!("{}. {}", item.answer_letter, item.answer_text),
                }),
            );
        }
        Value::Object(obj)
    }

    /// Same shape with the answer keys removed, for administration.
    pub fn stripped_value(&self) -> Value {
        let mut value = self.to_value();
        for (_, entry) in value.as_object_mut().unwrap() {
            entry.as_object_mut().unwrap().remove("answer");
        }
        value
    }

    /// Validate then decode; items come back ordered by question number.
    pub fn from_value(kind: QuizKind, value: &Value) -> Result<Self> {
        let issues = validate_quiz_value(value, kind);
        if !issues.is_empty() {
            return Err(Error::validation(kind.schema().name(), issues));
        }
        let obj = value.as_object().expect("validated object");
        let mut items = Vec::with_capacity(QUIZ_SIZE);
        let mut by_number: BTreeMap<usize, &Value> = BTreeMap::new();
        for (key, entry) in obj {
            let n: usize = key["Question ".len()..].trim().parse().expect("validated key");
            by_number.insert(n, entry);
        }
        for (n, entry) in by_number {
            let options_value = entry["options"].as_array().expect("validated options");
            let options: [String; 4] = std::array::from_fn(|i| {
                options_value[i].as_str().expect("validated option").to_string()
            });
            let answer = entry["answer"].as_str().expect("validated answer");
            let letter = answer.chars().next().expect("validated letter");
            items.push(QuizItem {
                number: n,
                aspect: entry["aspect"].as_str().expect("validated aspect").chars().next().unwrap(),
                question: entry["question"].as_str().expect("validated question").to_string(),
                options,
                answer_letter: letter,
                answer_text: answer[2..].trim_start().to_string(),
            });
        }
        Ok(QuizSet { kind, items })
    }

    /// Deterministic valid fixture satisfying every structural rule;
    /// used by tests and offline demos.
    pub fn synthetic(kind: QuizKind) -> Self {
        let n_aspects = (kind.max_aspect() as u8 - b'A' + 1) as usize;
        let items = (1..=QUIZ_SIZE)
            .map(|n| {
                let aspect = (b'A' + ((n - 1) % n_aspects) as u8) as char;
                let letter = LETTERS[(n - 1) % 4];
                let options: [String; 4] = std::array::from_fn(|i| {
                    format!("{}. Statement {} for item {n}", LETTERS[i], i + 1)
                });
                let answer_text = options[(letter as u8 - b'A') as usize][3..].to_string();
                QuizItem {
                    number: n,
                    aspect,
                    question: format!("What does point {n} of the document state?"),
                    options,
                    answer_letter: letter,
                    answer_text,
                }
            })
            .collect();
        QuizSet { kind, items }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_value()).expect("serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path, kind: QuizKind) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&raw)
            .map_err(|e| Error::validation(kind.schema().name(), vec![e.to_string()]))?;
        QuizSet::from_value(kind, &value)
    }
}

/// Structural validator for the prompt-shaped quiz object.
pub fn validate_quiz_value(value: &Value, kind: QuizKind) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    let mut numbers = BTreeSet::new();
    for key in obj.keys() {
        let parsed = key.strip_prefix("Question ").and_then(|r| r.trim().parse::<usize>().ok());
        match parsed {
            Some(n) => {
                numbers.insert(n);
            }
            None => issues.push(format!("unexpected key {key:?}")),
        }
    }
    if obj.len() != QUIZ_SIZE {
        issues.push(format!("item count {} != {QUIZ_SIZE}", obj.len()));
    }
    if numbers.len() == QUIZ_SIZE && !numbers.iter().copied().eq(1..=QUIZ_SIZE) {
        issues.push("question numbers are not exactly 1..50".into());
    }

    let mut aspect_counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut letter_counts: BTreeMap<char, usize> = BTreeMap::new();
    for (key, entry) in obj {
        let Some(item) = entry.as_object() else {
            issues.push(format!("{key} is not an object"));
            continue;
        };
        match item.get("aspect").and_then(Value::as_str) {
            Some(a) if a.len() == 1 => {
                let c = a.chars().next().unwrap();
                if ('A'..=kind.max_aspect()).contains(&c) {
                    *aspect_counts.entry(c).or_default() += 1;
                } else {
                    issues.push(format!(
                        "{key} aspect '{c}' outside A..{}",
                        kind.max_aspect()
                    ));
                }
            }
            _ => issues.push(format!("{key} missing single-letter 'aspect'")),
        }
        match item.get("question").and_then(Value::as_str) {
            Some(q) if !q.trim().is_empty() => {}
            _ => issues.push(format!("{key} missing non-empty 'question'")),
        }
        let options = item.get("options").and_then(Value::as_array);
        match options {
            Some(opts) if opts.len() == 4 => {
                for (i, opt) in opts.iter().enumerate() {
                    let prefix = format!("{}. ", LETTERS[i]);
                    match opt.as_str() {
                        Some(text) if text.starts_with(&prefix) && text.len() > prefix.len() => {}
                        _ => issues.push(format!(
                            "{key} option {} must start with {prefix:?}",
                            i + 1
                        )),
                    }
                }
            }
            _ => issues.push(format!("{key} needs exactly 4 'options'")),
        }
        match item.get("answer").and_then(Value::as_str) {
            Some(answer) => {
                let mut chars = answer.chars();
                let letter = chars.next().unwrap_or(' ');
                if !LETTERS.contains(&letter) || !answer[1..].starts_with(". ") {
                    issues.push(format!("{key} answer must look like \"A. <option text>\""));
                } else {
                    *letter_counts.entry(letter).or_default() += 1;
                    if let Some(opts) = options {
                        let idx = (letter as u8 - b'A') as usize;
                        let matches = opts
                            .get(idx)
                            .and_then(Value::as_str)
                            .is_some_and(|o| o == answer);
                        if !matches {
                            issues.push(format!(
                                "{key} answer text does not equal option {letter}"
                            ));
                        }
                    }
                }
            }
            None => issues.push(format!("{key} missing string 'answer'")),
        }
    }

    // Coverage and balance only mean something on a full set.
    if obj.len() == QUIZ_SIZE && issues.is_empty() {
        for c in 'A'..=kind.max_aspect() {
            let count = aspect_counts.get(&c).copied().unwrap_or(0);
            match kind {
                QuizKind::Verbatim => {
                    if count == 0 {
                        issues.push(format!("aspect {c} never appears"));
                    } else if count > VERBATIM_ASPECT_MAX {
                        issues.push(format!(
                            "aspect {c} appears {count} times (max {VERBATIM_ASPECT_MAX})"
                        ));
                    }
                }
                QuizKind::Interpretive => {
                    if count < INTERPRETIVE_ASPECT_MIN {
                        issues.push(format!(
                            "aspect {c} appears {count} times (min {INTERPRETIVE_ASPECT_MIN})"
                        ));
                    }
                }
            }
        }
        for letter in LETTERS {
            let count = letter_counts.get(&letter).copied().unwrap_or(0);
            if !(BALANCE_MIN..=BALANCE_MAX).contains(&count) {
                issues.push(format!(
                    "answer letter {letter} used {count} times (balance range {BALANCE_MIN}..{BALANCE_MAX})"
                ));
            }
        }
    }
    issues
}

/// Reader-answer schema gate. Deliberately minimal: individual entries are
/// coerced (missing or malformed answers become NA), so only the envelope
/// is enforced here.
pub fn validate_answers_value(value: &Value) -> Vec<String> {
    if value.is_object() {
        Vec::new()
    } else {
        vec!["not a JSON object".into()]
    }
}

/// Ask the examiner backend for a fresh quiz over the document markdown.
/// The gateway already reprompts once with the violation list; a second
/// invalid reply is a hard failure.
pub fn generate_quiz(
    document_markdown: &str,
    kind: QuizKind,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<QuizSet> {
    if document_markdown.trim().is_empty() {
        return Err(Error::Quiz("document markdown is empty".into()));
    }
    let user = json!({ "document_markdown": document_markdown }).to_string();
    let system = prompts::system_prompt(kind.role_tag()).expect("quiz roles ship prompts");
    let req = ModelRequest::text(kind.role_tag(), system, user);
    let value = gateway.complete_json(backend_id, &req, kind.schema())?;
    QuizSet::from_value(kind, &value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerChoice {
    A,
    B,
    C,
    D,
    #[serde(rename = "NA")]
    Na,
}

impl AnswerChoice {
    pub fn letter(self) -> Option<char> {
        match self {
            AnswerChoice::A => Some('A'),
            AnswerChoice::B => Some('B'),
            AnswerChoice::C => Some('C'),
            AnswerChoice::D => Some('D'),
            AnswerChoice::Na => None,
        }
    }

    /// Lenient parse: a bare letter in any case. Everything else is NA.
    fn coerce(raw: Option<&str>) -> Self {
        match raw.map(|s| s.trim().to_ascii_uppercase()).as_deref() {
            Some("A") => AnswerChoice::A,
            Some("B") => AnswerChoice::B,
            Some("C") => AnswerChoice::C,
            Some("D") => AnswerChoice::D,
            _ => AnswerChoice::Na,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderAnswer {
    pub question: usize,
    pub answer: AnswerChoice,
    pub reference: String,
}

/// Show the poster image and the answerless quiz to a reader backend.
/// Always returns exactly one entry per question, in question order;
/// anything the reader skipped or mangled comes back as NA.
pub fn administer_quiz(
    poster: &Path,
    quiz: &QuizSet,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<Vec<ReaderAnswer>> {
    if !poster.exists() {
        return Err(Error::Quiz(format!("poster image not found: {}", poster.display())));
    }
    let user = json!({ "questions": quiz.stripped_value() }).to_string();
    let system = prompts::system_prompt(prompts::roles::QUIZ_ANSWER).expect("answer prompt ships");
    let req = ModelRequest::vision(
        prompts::roles::QUIZ_ANSWER,
        system,
        user,
        vec![poster.to_path_buf()],
    );
    let value = gateway.complete_json(backend_id, &req, SchemaId::QuizAnswers)?;
    let empty = serde_json::Map::new();
    let obj = value.as_object().unwrap_or(&empty);
    let mut answers = Vec::with_capacity(quiz.items.len());
    for item in &quiz.items {
        let entry = obj.get(&format!("Question {}", item.number));
        let answer =
            AnswerChoice::coerce(entry.and_then(|e| e.get("answer")).and_then(Value::as_str));
        let reference = match answer {
            AnswerChoice::Na => "NA".to_string(),
            _ => entry
                .and_then(|e| e.get("reference"))
                .and_then(Value::as_str)
                .unwrap_or("NA")
                .to_string(),
        };
        answers.push(ReaderAnswer { question: item.number, answer, reference });
    }
    Ok(answers)
}

pub fn save_answers(path: &Path, answers: &[ReaderAnswer]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(answers).expect("serializes"))?;
    Ok(())
}

pub fn load_answers(path: &Path) -> Result<Vec<ReaderAnswer>> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| Error::validation("quiz.answers", vec![e.to_string()]))
}

/// Raw accuracy as a percentage. NA never matches, so abstention scores
/// as incorrect.
pub fn score_raw(answers: &[ReaderAnswer], quiz: &QuizSet) -> Result<f64> {
    if answers.len() != quiz.items.len() {
        return Err(Error::Quiz(format!(
            "{} answers for {} questions",
            answers.len(),
            quiz.items.len()
        )));
    }
    let by_number: BTreeMap<usize, char> =
        quiz.items.iter().map(|i| (i.number, i.answer_letter)).collect();
    let mut correct = 0usize;
    for answer in answers {
        let Some(&key) = by_number.get(&answer.question) else {
            return Err(Error::Quiz(format!("answer for unknown question {}", answer.question)));
        };
        if answer.answer.letter() == Some(key) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / quiz.items.len() as f64)
}

/// s_a = s_r * (1 + 1/max(1, l/w)). The multiplier is analytically
/// within [1, 2], rewarding posters at or under the reference length.
pub fn density_augmented(s_r: f64, l: f64, w: f64) -> Result<f64> {
    if w <= 0.0 {
        return Err(Error::Config(format!("reference poster length w must be positive, got {w}")));
    }
    if l < 0.0 || !l.is_finite() || !s_r.is_finite() {
        return Err(Error::Config("quiz score inputs must be finite and l >= 0".into()));
    }
    let multiplier = 1.0 + 1.0 / (l / w).max(1.0);
    Ok(s_r * multiplier)
}

/// Raw and density-augmented scores for one reader on one quiz kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizScore {
    pub s_r: f64,
    pub l: f64,
    pub w: f64,
    pub s_a: f64,
}

pub fn quiz_score(s_r: f64, l: f64, w: f64) -> Result<QuizScore> {
    Ok(QuizScore { s_r, l, w, s_a: density_augmented(s_r, l, w)? })
}

/// Whitespace token count of extracted poster text; the l in the formula.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderScore {
    pub reader: String,
    /// Config label grouping readers (e.g. open vs closed backends).
    pub group: String,
    pub raw: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindAverage {
    pub raw: f64,
    pub density: f64,
}

/// Mean of reader-group means: each group label contributes equally
/// regardless of how many readers it holds.
pub fn kind_average(scores: &[ReaderScore]) -> Option<KindAverage> {
    if scores.is_empty() {
        return None;
    }
    let mut groups: BTreeMap<&str, Vec<&ReaderScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.group.as_str()).or_default().push(s);
    }
    let mut raw_sum = 0.0;
    let mut density_sum = 0.0;
    for members in groups.values() {
        let n = members.len() as f64;
        raw_sum += members.iter().map(|s| s.raw).sum::<f64>() / n;
        density_sum += members.iter().map(|s| s.density).sum::<f64>() / n;
    }
    let g = groups.len() as f64;
    Some(KindAverage { raw: raw_sum / g, density: density_sum / g })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QuizReport {
    pub v_avg_raw: Option<f64>,
    pub v_avg_density: Option<f64>,
    pub i_avg_raw: Option<f64>,
    pub i_avg_density: Option<f64>,
    pub overall_raw: Option<f64>,
    pub overall_density: Option<f64>,
    pub verbatim_readers: Vec<ReaderScore>,
    pub interpretive_readers: Vec<ReaderScore>,
}

/// Overall is the mean of the kind averages that exist.
pub fn aggregate_scores(verbatim: &[ReaderScore], interpretive: &[ReaderScore]) -> QuizReport {
    let v = kind_average(verbatim);
    let i = kind_average(interpretive);
    let mean_present = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => Some((x + y) / 2.0),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    };
    QuizReport {
        v_avg_raw: v.map(|k| k.raw),
        v_avg_density: v.map(|k| k.density),
        i_avg_raw: i.map(|k| k.raw),
        i_avg_density: i.map(|k| k.density),
        overall_raw: mean_present(v.map(|k| k.raw), i.map(|k| k.raw)),
        overall_density: mean_present(v.map(|k| k.density), i.map(|k| k.density)),
        verbatim_readers: verbatim.to_vec(),
        interpretive_readers: interpretive.to_vec(),
    }
}

impl QuizReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "name",
        "v_avg_raw",
        "i_avg_raw",
        "overall_raw",
        "v_avg_density",
        "i_avg_density",
        "overall_density",
    ];

    pub fn csv_record(&self, name: &str) -> Vec<String> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        vec![
            name.to_string(),
            fmt(self.v_avg_raw),
            fmt(self.i_avg_raw),
            fmt(self.overall_raw),
            fmt(self.v_avg_density),
            fmt(self.i_avg_density),
            fmt(self.overall_density),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializes"))?;
        Ok(())
    }
}
