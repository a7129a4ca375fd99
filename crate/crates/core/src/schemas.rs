//! Central registry of structured-output schemas.
//!
//! Each model call that expects JSON names a schema here; extraction parses
//! the raw text (stripping fences/prose) and then runs the schema's
//! hand-rolled validator, which reports every failed field rather than the
//! first. The validators themselves live next to their domain types.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::parse_model_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaId {
    /// Section outline from the summarizer: meta + ordered sections.
    ParserOutline,
    /// Asset filter output: image_information + table_information keys.
    ParserFilter,
    /// Section → asset assignment map.
    PlannerMatch,
    /// Bullet block for one panel.
    PainterBlock,
    /// Single-criterion judge verdict {reason, score}.
    JudgeScore,
    /// 50-item verbatim quiz.
    QuizVerbatim,
    /// 50-item interpretive quiz.
    QuizInterpretive,
    /// Reader answer sheet keyed "Question k".
    QuizAnswers,
}

impl SchemaId {
    pub fn name(self) -> &'static str {
        match self {
            SchemaId::ParserOutline => "parser.outline",
            SchemaId::ParserFilter => "parser.filter",
            SchemaId::PlannerMatch => "planner.match",
            SchemaId::PainterBlock => "painter.block",
            SchemaId::JudgeScore => "judge.score",
            SchemaId::QuizVerbatim => "quiz.verbatim",
            SchemaId::QuizInterpretive => "quiz.interpretive",
            SchemaId::QuizAnswers => "quiz.answers",
        }
    }
}

/// Parse raw model text and validate it against the named schema.
pub fn extract_json(raw: &str, schema: SchemaId) -> Result<Value> {
    let value = parse_model_json(raw)?;
    validate(schema, &value)?;
    Ok(value)
}

/// Validate an already-parsed value. Collects all issues before failing.
pub fn validate(schema: SchemaId, value: &Value) -> Result<()> {
    let issues = match schema {
        SchemaId::ParserOutline => crate::parser::validate_outline_value(value),
        SchemaId::ParserFilter => crate::parser::validate_filter_value(value),
        SchemaId::PlannerMatch => crate::planner::validate_match_value(value),
        SchemaId::PainterBlock => crate::painter::validate_block_value(value),
        SchemaId::JudgeScore => validate_judge_score(value),
        SchemaId::QuizVerbatim => crate::quiz::validate_quiz_value(value, crate::quiz::QuizKind::Verbatim),
        SchemaId::QuizInterpretive => {
            crate::quiz::validate_quiz_value(value, crate::quiz::QuizKind::Interpretive)
        }
        SchemaId::QuizAnswers => crate::quiz::validate_answers_value(value),
    };
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(schema.name(), issues))
    }
}

fn validate_judge_score(value: &Value) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    match obj.get("reason") {
        Some(Value::String(_)) => {}
        Some(_) => issues.push("'reason' is not a string".into()),
        None => issues.push("missing 'reason'".into()),
    }
    match obj.get("score").and_then(Value::as_i64) {
        Some(s) if (1..=5).contains(&s) => {}
        Some(s) => issues.push(format!("'score' {s} outside 1..5")),
        None => issues.push("missing integer 'score'".into()),
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn judge_score_bounds() {
        assert!(validate(SchemaId::JudgeScore, &json!({"reason": "ok", "score": 3})).is_ok());
        assert!(validate(SchemaId::JudgeScore, &json!({"reason": "ok", "score": 0})).is_err());
        assert!(validate(SchemaId::JudgeScore, &json!({"reason": "ok", "score": 6})).is_err());
        assert!(validate(SchemaId::JudgeScore, &json!({"score": 3})).is_err());
        assert!(validate(SchemaId::JudgeScore, &json!({"reason": "r"})).is_err());
    }

    #[test]
    fn extraction_strips_fences_then_validates() {
        let raw = "```json\n{\"reason\": \"fine\", \"score\": 4}\n```";
        let v = extract_json(raw, SchemaId::JudgeScore).unwrap();
        assert_eq!(v["score"], 4);
    }

    #[test]
    fn validation_error_names_the_schema() {
        let err = extract_json("{}", SchemaId::JudgeScore).unwrap_err();
        assert!(err.to_string().contains("judge.score"));
    }
}
