//! Error type shared across the pipeline.
//!
//! Stage-tagged wrapping happens at the pipeline layer so the CLI can map a
//! failure to a distinct exit code without string matching.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage, used for exit codes and resume bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Summarize,
    Filter,
    Match,
    Layout,
    Paint,
    Assemble,
    Evaluate,
    Quiz,
    Bench,
}

impl Stage {
    /// Process exit code for a failure in this stage. Config errors use 2,
    /// generic errors 1.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Parse => 10,
            Stage::Summarize => 11,
            Stage::Filter => 12,
            Stage::Match => 13,
            Stage::Layout => 14,
            Stage::Paint => 15,
            Stage::Assemble => 16,
            Stage::Evaluate => 20,
            Stage::Quiz => 30,
            Stage::Bench => 40,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Parse => "parse",
            Stage::Summarize => "summarize",
            Stage::Filter => "filter",
            Stage::Match => "match",
            Stage::Layout => "layout",
            Stage::Paint => "paint",
            Stage::Assemble => "assemble",
            Stage::Evaluate => "evaluate",
            Stage::Quiz => "quiz",
            Stage::Bench => "bench",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad or missing configuration (unknown backend id, missing routing,
    /// invalid geometry). Detected before any work starts where possible.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an API precondition (image sent to a text backend,
    /// empty weight vector, answer sheet shorter than the quiz).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Transport failure talking to a model backend, after retries.
    #[error("backend '{backend}' unavailable: {detail}")]
    BackendUnavailable { backend: String, detail: String },

    /// Model output that could not be parsed as JSON even after the repair
    /// ladder. Carries the raw text for diagnosis.
    #[error("unparseable model output ({detail}); raw: {raw:?}")]
    JsonParse { detail: String, raw: String },

    /// Parsed JSON that fails schema validation. Lists every failed field.
    #[error("schema '{schema}' validation failed: {}", issues.join("; "))]
    Validation { schema: String, issues: Vec<String> },

    /// External PDF converter failed or produced no usable output.
    #[error("converter failed: {0}")]
    Conversion(String),

    /// Source document had no extractable text.
    #[error("empty document: no extractable text")]
    EmptyDocument,

    /// Layout construction failed (degenerate geometry, weight mismatch).
    #[error("layout error: {0}")]
    Layout(String),

    /// Rendering or document assembly failed.
    #[error("render error: {0}")]
    Render(String),

    /// Metric computation failed (zero vector, dimension mismatch,
    /// positive log-probability, missing capability).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("quiz error: {0}")]
    Quiz(String),

    /// A per-panel failure during painting; carries the panel index so
    /// parallel refinement reports name the offender.
    #[error("panel {index}: {source}")]
    Panel {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name so the CLI can pick an exit code.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(self, stage: Stage) -> Error {
        match self {
            // Keep the innermost stage tag: it names the actual failure site.
            e @ Error::Stage { .. } => e,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    pub fn at_panel(self, index: usize) -> Error {
        match self {
            e @ Error::Panel { .. } => e,
            other => Error::Panel { index, source: Box::new(other) },
        }
    }

    /// Exit code for the CLI: stage-specific where known.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { stage, .. } => stage.exit_code(),
            Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn validation(schema: &str, issues: Vec<String>) -> Error {
        Error::Validation { schema: schema.to_string(), issues }
    }
}
