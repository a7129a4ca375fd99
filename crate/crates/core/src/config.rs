//! Declarative run configuration: one TOML file describing geometry,
//! layout tuning, backends, role routing, external commands, and quiz
//! readers.
//!
//! Validation is strict and runs before any work: every role the pipeline
//! can emit must resolve to a defined backend of the right modality.
//! Credentials never live in the file; backends name an environment
//! variable instead.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{BackendDescriptor, Gateway, Modality};
use crate::metrics::{CommandEmbedder, CommandLm, Embedder, LmScorer, MockEmbedder, UniformLm};
use crate::planner::{LayoutParams, PosterGeometry};
use crate::prompts::roles;

/// Every role the pipeline can send through the gateway, with the
/// modality its backend must support.
pub const ALL_ROLES: [(&str, Modality); 14] = [
    (roles::PARSER_SUMMARIZE, Modality::Text),
    (roles::PARSER_FILTER, Modality::Text),
    (roles::PLANNER_MATCH, Modality::Text),
    (roles::PAINTER_COMPOSE, Modality::Text),
    (roles::COMMENTER_CRITIQUE, Modality::Vision),
    (roles::JUDGE_ELEMENT_QUALITY, Modality::Vision),
    (roles::JUDGE_LAYOUT_BALANCE, Modality::Vision),
    (roles::JUDGE_ENGAGEMENT, Modality::Vision),
    (roles::JUDGE_CLARITY, Modality::Vision),
    (roles::JUDGE_CONTENT_COMPLETENESS, Modality::Vision),
    (roles::JUDGE_LOGICAL_FLOW, Modality::Vision),
    (roles::QUIZ_GENERATE_VERBATIM, Modality::Text),
    (roles::QUIZ_GENERATE_INTERPRETIVE, Modality::Text),
    (roles::QUIZ_ANSWER, Modality::Vision),
];

pub fn role_modality(role: &str) -> Option<Modality> {
    ALL_ROLES.iter().find(|(r, _)| *r == role).map(|(_, m)| *m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub width_px: u32,
    pub height_px: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Weight of figure area demand relative to word count.
    pub lambda: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub max_columns: usize,
    pub title_strip_fraction: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            lambda: crate::planner::DEFAULT_ASSET_WEIGHT_SCALE,
            a_min: crate::planner::DEFAULT_ASPECT_MIN,
            a_max: crate::planner::DEFAULT_ASPECT_MAX,
            max_columns: crate::planner::DEFAULT_MAX_COLUMNS,
            title_strip_fraction: crate::planner::DEFAULT_TITLE_STRIP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PainterConfig {
    pub max_iters: usize,
    /// Refine panels on worker threads instead of sequentially.
    pub parallel: bool,
}

impl Default for PainterConfig {
    fn default() -> Self {
        PainterConfig { max_iters: crate::painter::DEFAULT_MAX_ITERS, parallel: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReaderConfig {
    pub id: String,
    pub backend: String,
    /// Aggregation label; readers sharing a label average together first.
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuizConfig {
    /// Reference (median ground-truth) poster word count for the density
    /// multiplier.
    pub w: f64,
    pub readers: Vec<ReaderConfig>,
}

impl Default for QuizConfig {
    fn default() -> Self {
        QuizConfig { w: crate::quiz::DEFAULT_MEDIAN_WORDS, readers: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    /// Default backend for text roles.
    pub text: Option<String>,
    /// Default backend for vision roles.
    pub vision: Option<String>,
    /// Per-role overrides, keyed by role tag.
    pub roles: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConverterConfig {
    /// PDF-to-markdown command; `{input}` is the PDF, `{output}` the
    /// destination directory. Unset means only markdown input works.
    pub command: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Page-raster command; `{input}` is a presentation file, `{page}` a
    /// zero-based page number, `{output}` the PNG to write. Unset falls
    /// back to the built-in synthetic rasterizer.
    pub command: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    /// Deterministic digest embedder; offline.
    #[default]
    Mock,
    /// External commands printing a JSON number array on stdout.
    Command { image_command: String, text_command: String },
}

impl EmbeddingConfig {
    pub fn embedder(&self) -> Box<dyn Embedder> {
        match self {
            EmbeddingConfig::Mock => Box::new(MockEmbedder),
            EmbeddingConfig::Command { image_command, text_command } => Box::new(CommandEmbedder {
                image_command: image_command.clone(),
                text_command: text_command.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LmConfig {
    /// Uniform-over-vocabulary scorer; offline.
    Uniform {
        #[serde(default = "default_vocab")]
        vocab_size: u32,
    },
    /// External command printing per-token log probabilities as JSON.
    Command { command: String },
}

fn default_vocab() -> u32 {
    50_000
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig::Uniform { vocab_size: default_vocab() }
    }
}

impl LmConfig {
    pub fn scorer(&self) -> Box<dyn LmScorer> {
        match self {
            LmConfig::Uniform { vocab_size } => Box::new(UniformLm { vocab_size: *vocab_size }),
            LmConfig::Command { command } => Box::new(CommandLm { command: command.clone() }),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// OCR command for image posters; `{input}` is the image path.
    pub ocr_command: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Default working directory; the CLI flag wins when both are set.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub painter: PainterConfig,
    #[serde(default)]
    pub quiz: QuizConfig,
    pub backends: Vec<BackendDescriptor>,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub converter: ConverterConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub lm: LmConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn poster_geometry(&self) -> Result<PosterGeometry> {
        PosterGeometry::new(
            self.geometry.width_px,
            self.geometry.height_px,
            self.layout.title_strip_fraction,
        )
    }

    pub fn layout_params(&self) -> LayoutParams {
        LayoutParams {
            aspect_min: self.layout.a_min,
            aspect_max: self.layout.a_max,
            max_columns: self.layout.max_columns,
        }
    }

    pub fn gateway(&self) -> Result<Gateway> {
        Gateway::new(self.backends.clone())
    }

    fn backend(&self, id: &str) -> Option<&BackendDescriptor> {
        self.backends.iter().find(|b| b.id == id)
    }

    /// Backend id serving `role`: per-role override first, then the
    /// modality default.
    pub fn resolve_role(&self, role: &str) -> Result<&str> {
        if let Some(id) = self.routing.roles.get(role) {
            return Ok(id.as_str());
        }
        let modality = role_modality(role)
            .ok_or_else(|| Error::Config(format!("unknown role '{role}'")))?;
        let default = match modality {
            Modality::Text => self.routing.text.as_deref(),
            Modality::Vision => self.routing.vision.as_deref(),
        };
        default.ok_or_else(|| Error::Config(format!("missing backend for role {role}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.poster_geometry()?;
        let l = &self.layout;
        if !(l.a_min > 0.0 && l.a_min < l.a_max && l.a_max.is_finite()) {
            return Err(Error::Config(format!(
                "aspect band [{}, {}] must satisfy 0 < a_min < a_max",
                l.a_min, l.a_max
            )));
        }
        if l.max_columns == 0 {
            return Err(Error::Config("max_columns must be at least 1".into()));
        }
        if !(l.lambda >= 0.0 && l.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", l.lambda)));
        }
        if self.painter.max_iters == 0 {
            return Err(Error::Config("painter max_iters must be at least 1".into()));
        }
        if self.quiz.w <= 0.0 {
            return Err(Error::Config(format!(
                "quiz reference length w must be positive, got {}",
                self.quiz.w
            )));
        }
        if self.backends.is_empty() {
            return Err(Error::Config("at least one backend must be defined".into()));
        }
        let mut seen = BTreeSet::new();
        for backend in &self.backends {
            backend.validate()?;
            if !seen.insert(backend.id.as_str()) {
                return Err(Error::Config(format!("duplicate backend id '{}'", backend.id)));
            }
        }
        for (role, modality) in ALL_ROLES {
            let id = self.resolve_role(role)?;
            let backend = self
                .backend(id)
                .ok_or_else(|| Error::Config(format!("role {role} routes to undefined backend '{id}'")))?;
            if backend.modality != modality {
                return Err(Error::Config(format!(
                    "role {role} needs a {modality:?} backend but '{id}' is {:?}",
                    backend.modality
                )));
            }
        }
        let mut reader_ids = BTreeSet::new();
        for reader in &self.quiz.readers {
            if !reader_ids.insert(reader.id.as_str()) {
                return Err(Error::Config(format!("duplicate reader id '{}'", reader.id)));
            }
            let backend = self.backend(&reader.backend).ok_or_else(|| {
                Error::Config(format!(
                    "reader '{}' routes to undefined backend '{}'",
                    reader.id, reader.backend
                ))
            })?;
            if backend.modality != Modality::Vision {
                return Err(Error::Config(format!(
                    "reader '{}' needs a vision backend but '{}' is {:?}",
                    reader.id, reader.backend, backend.modality
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_toml() -> String {
        r#"
workdir = "out"

[geometry]
width_px = 1800
height_px = 2400

[layout]
lambda = 50.0
a_min = 0.4
a_max = 2.5
max_columns = 6
title_strip_fraction = 0.12

[painter]
max_iters = 4
parallel = true

[quiz]
w = 774.0
readers = [
    { id = "reader-1", backend = "vision-main", group = "closed" },
    { id = "reader-2", backend = "vision-main", group = "open" },
]

[[backends]]
id = "text-main"
modality = "text"
kind = "mock"
fixtures = "fixtures.json"

[[backends]]
id = "vision-main"
modality = "vision"
kind = "mock"
fixtures = "fixtures.json"

[routing]
text = "text-main"
vision = "vision-main"

[routing.roles]
"painter.compose" = "text-main"

[converter]
command = "pdfconvert {input} {output}"

[render]
command = "rasterize {input} {page} {output}"

[embedding]
kind = "mock"

[lm]
kind = "uniform"
vocab_size = 50000

[evaluate]
ocr_command = "ocr {input}"
"#
        .to_string()
    }

    fn parse(toml_text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(toml_text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn full_config_parses_and_validates() {
        let config = parse(&full_toml()).unwrap();
        assert_eq!(config.geometry.width_px, 1800);
        assert_eq!(config.resolve_role(roles::PAINTER_COMPOSE).unwrap(), "text-main");
        assert_eq!(config.resolve_role(roles::JUDGE_CLARITY).unwrap(), "vision-main");
        assert_eq!(config.quiz.readers.len(), 2);
        config.poster_geometry().unwrap();
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let toml_text = r#"
[geometry]
width_px = 1200
height_px = 1800

[[backends]]
id = "t"
modality = "text"
kind = "mock"
fixtures = "f.json"

[[backends]]
id = "v"
modality = "vision"
kind = "mock"
fixtures = "f.json"

[routing]
text = "t"
vision = "v"
"#;
        let config = parse(toml_text).unwrap();
        assert_eq!(config.painter.max_iters, crate::painter::DEFAULT_MAX_ITERS);
        assert_eq!(config.layout.a_min, crate::planner::DEFAULT_ASPECT_MIN);
        assert_eq!(config.quiz.w, crate::quiz::DEFAULT_MEDIAN_WORDS);
        assert!(matches!(config.embedding, EmbeddingConfig::Mock));
        assert!(matches!(config.lm, LmConfig::Uniform { vocab_size: 50_000 }));
    }

    #[test]
    fn missing_vision_default_names_the_role() {
        let toml_text = r#"
[geometry]
width_px = 1200
height_px = 1800

[[backends]]
id = "t"
modality = "text"
kind = "mock"
fixtures = "f.json"

[routing]
text = "t"
"#;
        let err = parse(toml_text).unwrap_err();
        assert!(err.to_string().contains("missing backend for role commenter.critique"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn role_override_must_reference_defined_backend() {
        let mut toml_text = full_toml();
        toml_text = toml_text.replace(
            "\"painter.compose\" = \"text-main\"",
            "\"painter.compose\" = \"ghost\"",
        );
        let err = parse(&toml_text).unwrap_err();
        assert!(err.to_string().contains("undefined backend 'ghost'"), "{err}");
    }

    #[test]
    fn modality_mismatch_rejected() {
        let mut toml_text = full_toml();
        toml_text = toml_text.replace(
            "\"painter.compose\" = \"text-main\"",
            "\"commenter.critique\" = \"text-main\"",
        );
        let err = parse(&toml_text).unwrap_err();
        assert!(err.to_string().contains("commenter.critique"), "{err}");
        assert!(err.to_string().contains("Vision"), "{err}");
    }

    #[test]
    fn duplicate_backend_ids_rejected() {
        let mut toml_text = full_toml();
        toml_text = toml_text.replace("id = \"vision-main\"", "id = \"text-main\"");
        let err = parse(&toml_text).unwrap_err();
        assert!(err.to_string().contains("duplicate backend id"), "{err}");
    }

    #[test]
    fn reader_backend_must_be_vision() {
        let mut toml_text = full_toml();
        toml_text = toml_text.replace(
            "{ id = \"reader-1\", backend = \"vision-main\", group = \"closed\" }",
            "{ id = \"reader-1\", backend = \"text-main\", group = \"closed\" }",
        );
        let err = parse(&toml_text).unwrap_err();
        assert!(err.to_string().contains("reader 'reader-1'"), "{err}");
    }

    #[test]
    fn bad_geometry_rejected() {
        let toml_text = full_toml().replace("width_px = 1800", "width_px = 0");
        assert!(parse(&toml_text).is_err());
    }

    #[test]
    fn bad_aspect_band_rejected() {
        let toml_text = full_toml().replace("a_min = 0.4", "a_min = 3.0");
        let err = parse(&toml_text).unwrap_err();
        assert!(err.to_string().contains("a_min < a_max"), "{err}");
    }

    #[test]
    fn credentials_come_from_the_environment() {
        // The HTTP endpoint names an env var; no key field exists at all.
        let toml_text = r#"
[geometry]
width_px = 1200
height_px = 1800

[[backends]]
id = "t"
modality = "text"
kind = "open_ai_chat"
base_url = "http://localhost:9999/v1"
model = "demo"
api_key_env = "POSTER_TEXT_KEY"

[[backends]]
id = "v"
modality = "vision"
kind = "mock"
fixtures = "f.json"

[routing]
text = "t"
vision = "v"
"#;
        let config = parse(toml_text).unwrap();
        match &config.backends[0].endpoint {
            crate::gateway::Endpoint::OpenAiChat { api_key_env, .. } => {
                assert_eq!(api_key_env.as_deref(), Some("POSTER_TEXT_KEY"));
            }
            other => panic!("unexpected endpoint {other:?}"),
        }
    }
}
