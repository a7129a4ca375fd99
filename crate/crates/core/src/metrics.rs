//! Poster evaluation: embedding similarities, perplexity, and the
//! six-criterion judge.
//!
//! Embedding and language-model backends are pluggable traits so every
//! formula is testable offline with deterministic mocks. The judge issues
//! one vision call per criterion and aggregates into the standard
//! aesthetic/information/overall averages.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest};
use crate::prompts;
use crate::schemas::SchemaId;

/// Text fed to the text encoder is cut to this many whitespace tokens.
pub const TEXT_EMBED_TOKEN_LIMIT: usize = 512;
/// Dimension of the deterministic mock embedding.
pub const MOCK_EMBED_DIM: usize = 32;

pub trait Embedder: Sync {
    fn embed_image(&self, path: &Path) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic offline embedder: content digest mapped to a unit vector.
/// Identical bytes embed identically, so self-similarity is exactly 1.
pub struct MockEmbedder;

fn digest_embedding(bytes: &[u8]) -> Vec<f64> {
    let digest = Sha256::digest(bytes);
    let mut v: Vec<f64> =
        digest.iter().map(|&b| (b as f64 / 255.0) * 2.0 - 1.0).collect();
    debug_assert_eq!(v.len(), MOCK_EMBED_DIM);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A zero digest vector would need every byte equal to 127.5: impossible.
    for x in &mut v {
        *x /= norm;
    }
    v
}

impl Embedder for MockEmbedder {
    fn embed_image(&self, path: &Path) -> Result<Vec<f64>> {
        let bytes = std::fs::read(path)?;
        Ok(digest_embedding(&bytes))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(digest_embedding(truncate_tokens(text, TEXT_EMBED_TOKEN_LIMIT).as_bytes()))
    }
}

/// Shells out for embeddings: `{input}` is replaced with the image path or
/// a temp file holding the text; stdout must be a JSON array of numbers.
pub struct CommandEmbedder {
    pub image_command: String,
    pub text_command: String,
}

fn run_vector_command(template: &str, input: &Path) -> Result<Vec<f64>> {
    let cmd = template.replace("{input}", &input.display().to_string());
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::Metric(format!("embedding command failed to start: {e}")))?;
    if !out.status.success() {
        return Err(Error::Metric(format!(
            "embedding command exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let v: Vec<f64> = serde_json::from_str(text.trim())
        .map_err(|e| Error::Metric(format!("embedding command output is not a JSON array: {e}")))?;
    Ok(v)
}

impl Embedder for CommandEmbedder {
    fn embed_image(&self, path: &Path) -> Result<Vec<f64>> {
        run_vector_command(&self.image_command, path)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut tmp = tempfile::NamedTempFile::new()?;
        tmp.write_all(truncate_tokens(text, TEXT_EMBED_TOKEN_LIMIT).as_bytes())?;
        tmp.flush()?;
        run_vector_command(&self.text_command, tmp.path())
    }
}

/// First `limit` whitespace tokens, single-space joined.
pub fn truncate_tokens(text: &str, limit: usize) -> String {
    text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("cosine of an empty vector".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Metric("embedding has a non-finite entry".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("cosine of a zero-norm vector".into()));
    }
    // Rounding can push |cos| a hair past 1; clamp to the legal range.
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the two poster images' embeddings, in [-1, 1].
pub fn visual_similarity(gen: &Path, gt: &Path, embedder: &dyn Embedder) -> Result<f64> {
    for p in [gen, gt] {
        if !p.exists() {
            return Err(Error::Metric(format!("image not found: {}", p.display())));
        }
    }
    cosine(&embedder.embed_image(gen)?, &embedder.embed_image(gt)?)
}

/// A figure placed on the poster paired with the text of the section it
/// was matched to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureTextPair {
    pub figure: PathBuf,
    pub section_text: String,
}

/// Mean image/text cosine over the pairs; exactly 0 for an empty list.
/// Unreadable figures are skipped with a warning; all skipped counts as
/// the empty case.
pub fn figure_relevance(pairs: &[FigureTextPair], embedder: &dyn Embedder) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        let image_vec = match embedder.embed_image(&pair.figure) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping figure {}: {e}", pair.figure.display());
                continue;
            }
        };
        let text_vec = embedder.embed_text(&pair.section_text)?;
        sum += cosine(&image_vec, &text_vec)?;
        n += 1;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(sum / n as f64)
}

pub trait LmScorer {
    /// Per-token log probabilities for `text`, each <= 0.
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>>;
}

/// Every whitespace token scored as uniform over a fixed vocabulary.
pub struct UniformLm {
    pub vocab_size: u32,
}

impl LmScorer for UniformLm {
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        if self.vocab_size == 0 {
            return Err(Error::Metric("uniform LM needs a non-empty vocabulary".into()));
        }
        let lp = -(self.vocab_size as f64).ln();
        Ok(text.split_whitespace().map(|_| lp).collect())
    }
}

/// Fixed log-prob sequence regardless of input; test double.
pub struct ScriptedLm {
    pub logprobs: Vec<f64>,
}

impl LmScorer for ScriptedLm {
    fn token_logprobs(&self, _text: &str) -> Result<Vec<f64>> {
        Ok(self.logprobs.clone())
    }
}

/// Shells out: `{input}` is a temp file holding the text; stdout must be a
/// JSON array of per-token log probabilities.
pub struct CommandLm {
    pub command: String,
}

impl LmScorer for CommandLm {
    fn token_logprobs(&self, text: &str) -> Result<Vec<f64>> {
        let mut tmp = tempfile::NamedTempFile::new()?;
        tmp.write_all(text.as_bytes())?;
        tmp.flush()?;
        run_vector_command(&self.command, tmp.path())
    }
}

/// Pairwise sum: exact for power-of-two runs of identical values and far
/// more accurate than sequential addition on long sequences.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// exp of the mean negative log-likelihood.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::Metric("perplexity needs at least one token".into()));
    }
    if logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
        return Err(Error::Metric("log probabilities must be finite and <= 0".into()));
    }
    let mean = pairwise_sum(logprobs) / logprobs.len() as f64;
    Ok((-mean).exp())
}

pub fn perplexity(text: &str, lm: &dyn LmScorer) -> Result<f64> {
    if text.trim().is_empty() {
        return Err(Error::Metric("no text".into()));
    }
    perplexity_from_logprobs(&lm.token_logprobs(text)?)
}

/// The six judge criteria, in report order: three aesthetic, three
/// informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    ElementQuality,
    LayoutBalance,
    Engagement,
    Clarity,
    ContentCompleteness,
    LogicalFlow,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::ElementQuality,
        Criterion::LayoutBalance,
        Criterion::Engagement,
        Criterion::Clarity,
        Criterion::ContentCompleteness,
        Criterion::LogicalFlow,
    ];
    pub const AESTHETIC: [Criterion; 3] =
        [Criterion::ElementQuality, Criterion::LayoutBalance, Criterion::Engagement];
    pub const INFORMATION: [Criterion; 3] =
        [Criterion::Clarity, Criterion::ContentCompleteness, Criterion::LogicalFlow];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::ElementQuality => "ElementQuality",
            Criterion::LayoutBalance => "LayoutBalance",
            Criterion::Engagement => "Engagement",
            Criterion::Clarity => "Clarity",
            Criterion::ContentCompleteness => "ContentCompleteness",
            Criterion::LogicalFlow => "LogicalFlow",
        }
    }

    pub fn role_tag(self) -> &'static str {
        match self {
            Criterion::ElementQuality => prompts::roles::JUDGE_ELEMENT_QUALITY,
            Criterion::LayoutBalance => prompts::roles::JUDGE_LAYOUT_BALANCE,
            Criterion::Engagement => prompts::roles::JUDGE_ENGAGEMENT,
            Criterion::Clarity => prompts::roles::JUDGE_CLARITY,
            Criterion::ContentCompleteness => prompts::roles::JUDGE_CONTENT_COMPLETENESS,
            Criterion::LogicalFlow => prompts::roles::JUDGE_LOGICAL_FLOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub criterion: String,
    pub reason: String,
    pub score: u8,
}

/// Group and overall means over the six criterion scores, in the order of
/// [`Criterion::ALL`].
pub fn judge_aggregates(scores: &[f64; 6]) -> (f64, f64, f64) {
    let aesthetic = (scores[0] + scores[1] + scores[2]) / 3.0;
    let information = (scores[3] + scores[4] + scores[5]) / 3.0;
    let overall = scores.iter().sum::<f64>() / 6.0;
    (aesthetic, information, overall)
}

/// Full evaluation result. Judge fields are absent when a criterion failed
/// both attempts; `incomplete` flags any such gap.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub visual_similarity: Option<f64>,
    pub figure_relevance: Option<f64>,
    pub ppl: Option<f64>,
    pub scores: BTreeMap<String, JudgeScore>,
    pub aesthetic_avg: Option<f64>,
    pub information_avg: Option<f64>,
    pub overall: Option<f64>,
    pub incomplete: bool,
}

impl MetricReport {
    /// Range checks from the report contract.
    pub fn check(&self) -> Result<()> {
        let mut issues = Vec::new();
        for (name, value, lo, hi) in [
            ("visual_similarity", self.visual_similarity, -1.0, 1.0),
            ("figure_relevance", self.figure_relevance, -1.0, 1.0),
            ("aesthetic_avg", self.aesthetic_avg, 1.0, 5.0),
            ("information_avg", self.information_avg, 1.0, 5.0),
            ("overall", self.overall, 1.0, 5.0),
        ] {
            if let Some(v) = value {
                if !(lo..=hi).contains(&v) {
                    issues.push(format!("{name} {v} outside [{lo}, {hi}]"));
                }
            }
        }
        if let Some(p) = self.ppl {
            if p < 1.0 {
                issues.push(format!("ppl {p} below 1"));
            }
        }
        for (name, s) in &self.scores {
            if !(1..=5).contains(&s.score) {
                issues.push(format!("criterion {name} score {} outside 1..5", s.score));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("metric.report", issues))
        }
    }

    /// Recompute the three averages from whatever scores are present.
    /// Each average appears only when its full criterion group is present.
    pub fn recompute_aggregates(&mut self) {
        let value = |c: Criterion| self.scores.get(c.name()).map(|s| s.score as f64);
        let group = |cs: &[Criterion; 3]| {
            let vs: Vec<f64> = cs.iter().filter_map(|&c| value(c)).collect();
            (vs.len() == 3).then(|| vs.iter().sum::<f64>() / 3.0)
        };
        self.aesthetic_avg = group(&Criterion::AESTHETIC);
        self.information_avg = group(&Criterion::INFORMATION);
        let all: Vec<f64> = Criterion::ALL.iter().filter_map(|&c| value(c)).collect();
        self.overall = (all.len() == 6).then(|| all.iter().sum::<f64>() / 6.0);
        self.incomplete = all.len() != 6;
    }

    pub const CSV_HEADER: [&'static str; 14] = [
        "name",
        "vis_sim",
        "ppl",
        "fig_rel",
        "element_quality",
        "layout_balance",
        "engagement",
        "clarity",
        "content_completeness",
        "logical_flow",
        "aesthetic_avg",
        "information_avg",
        "overall",
        "incomplete",
    ];

    pub fn csv_record(&self, name: &str) -> Vec<String> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let score = |c: Criterion| {
            self.scores.get(c.name()).map(|s| s.score.to_string()).unwrap_or_default()
        };
        let mut rec = vec![
            name.to_string(),
            fmt(self.visual_similarity),
            fmt(self.ppl),
            fmt(self.figure_relevance),
        ];
        rec.extend(Criterion::ALL.iter().map(|&c| score(c)));
        rec.push(fmt(self.aesthetic_avg));
        rec.push(fmt(self.information_avg));
        rec.push(fmt(self.overall));
        rec.push(self.incomplete.to_string());
        rec
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let report: MetricReport = serde_json::from_str(&raw)
            .map_err(|e| Error::validation("metric.report", vec![e.to_string()]))?;
        report.check()?;
        Ok(report)
    }
}

const JUDGE_USER_PROMPT: &str = "Assess the attached poster image against the rubric. Respond \
with only a JSON object {\"reason\": \"...\", \"score\": <integer 1-5>}.";

/// Six independent vision calls, one per criterion. A criterion whose
/// response stays invalid after the gateway's single repair attempt is
/// recorded as missing rather than failing the whole report.
pub fn judge_poster(poster: &Path, gateway: &Gateway, backend_id: &str) -> Result<MetricReport> {
    if !poster.exists() {
        return Err(Error::Metric(format!("poster image not found: {}", poster.display())));
    }
    let mut report = MetricReport::default();
    for criterion in Criterion::ALL {
        let system = prompts::system_prompt(criterion.role_tag())
            .expect("every judge role ships a prompt");
        let req = ModelRequest::vision(
            criterion.role_tag(),
            system,
            JUDGE_USER_PROMPT.to_string(),
            vec![poster.to_path_buf()],
        );
        match gateway.complete_json(backend_id, &req, SchemaId::JudgeScore) {
            Ok(value) => {
                let score = JudgeScore {
                    criterion: criterion.name().to_string(),
                    reason: value["reason"].as_str().unwrap_or_default().to_string(),
                    score: value["score"].as_u64().expect("validated score") as u8,
                };
                report.scores.insert(criterion.name().to_string(), score);
            }
            Err(e) => {
                log::warn!("criterion {} unavailable: {e}", criterion.name());
            }
        }
    }
    report.recompute_aggregates();
    Ok(report)
}

/// Poster text in reading order: OOXML documents are walked shape by
/// shape; images need an OCR command (`{input}` placeholder, text on
/// stdout).
pub fn extract_poster_text(poster: &Path, ocr_command: Option<&str>) -> Result<String> {
    let ext = poster
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "pptx" => {
            let doc = crate::doc::read_document(poster)?;
            let mut blocks = Vec::new();
            for shape in &doc.shapes {
                for para in &shape.paragraphs {
                    let trimmed = para.trim();
                    if !trimmed.is_empty() {
                        blocks.push(trimmed.to_string());
                    }
                }
            }
            Ok(blocks.join(" "))
        }
        "png" | "jpg" | "jpeg" => {
            let Some(template) = ocr_command else {
                return Err(Error::Metric(
                    "poster is an image and no OCR command is configured".into(),
                ));
            };
            let cmd = template.replace("{input}", &poster.display().to_string());
            let out = Command::new("sh")
                .arg("-c")
                .arg(&cmd)
                .output()
                .map_err(|e| Error::Metric(format!("OCR command failed to start: {e}")))?;
            if !out.status.success() {
                return Err(Error::Metric(format!(
                    "OCR command exited with {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                )));
            }
            Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
        }
        other => Err(Error::Metric(format!("unsupported poster format '.{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendDescriptor, Endpoint, Modality};
    use proptest::prelude::*;
    use std::collections::HashMap;

    struct MapEmbedder {
        images: HashMap<String, Vec<f64>>,
        texts: HashMap<String, Vec<f64>>,
    }

    impl Embedder for MapEmbedder {
        fn embed_image(&self, path: &Path) -> Result<Vec<f64>> {
            let key = path.file_name().unwrap().to_string_lossy().to_string();
            self.images
                .get(&key)
                .cloned()
                .ok_or_else(|| Error::Metric(format!("no embedding for {key}")))
        }

        fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
            self.texts
                .get(text)
                .cloned()
                .ok_or_else(|| Error::Metric(format!("no embedding for {text:?}")))
        }
    }

    fn png(dir: &Path, name: &str, shade: u8) -> PathBuf {
        let p = dir.join(name);
        image::RgbImage::from_pixel(4, 4, image::Rgb([shade, shade, shade])).save(&p).unwrap();
        p
    }

    #[test]
    fn identical_images_have_unit_similarity() {
        let dir = tempfile::tempdir().unwrap();
        let a = png(dir.path(), "a.png", 100);
        let b = png(dir.path(), "b.png", 100);
        let s = visual_similarity(&a, &b, &MockEmbedder).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn orthogonal_vectors_have_zero_similarity() {
        let dir = tempfile::tempdir().unwrap();
        let a = png(dir.path(), "a.png", 0);
        let b = png(dir.path(), "b.png", 255);
        let embedder = MapEmbedder {
            images: HashMap::from([
                ("a.png".into(), vec![1.0, 0.0]),
                ("b.png".into(), vec![0.0, 1.0]),
            ]),
            texts: HashMap::new(),
        };
        let s = visual_similarity(&a, &b, &embedder).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn cosine_rejects_degenerate_inputs() {
        assert!(cosine(&[], &[]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[f64::NAN, 1.0], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            c in 0.001f64..1000.0,
        ) {
            prop_assume!(a.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let s = cosine(&scaled, &b).unwrap();
            prop_assert!((ab - s).abs() < 1e-9, "{ab} vs {s}");
        }
    }

    #[test]
    fn figure_relevance_empty_is_zero() {
        assert_eq!(figure_relevance(&[], &MockEmbedder).unwrap(), 0.0);
    }

    #[test]
    fn figure_relevance_identical_vectors_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = HashMap::new();
        let mut texts = HashMap::new();
        let mut pairs = Vec::new();
        for i in 0..3 {
            let name = format!("f{i}.png");
            let file = png(dir.path(), &name, i as u8 * 50);
            images.insert(name, vec![0.3, 0.4, 0.5]);
            texts.insert(format!("section {i}"), vec![0.3, 0.4, 0.5]);
            pairs.push(FigureTextPair { figure: file, section_text: format!("section {i}") });
        }
        let embedder = MapEmbedder { images, texts };
        let s = figure_relevance(&pairs, &embedder).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn figure_relevance_averages_cosines() {
        let dir = tempfile::tempdir().unwrap();
        let f0 = png(dir.path(), "f0.png", 10);
        let f1 = png(dir.path(), "f1.png", 20);
        let embedder = MapEmbedder {
            images: HashMap::from([
                ("f0.png".into(), vec![1.0, 0.0]),
                ("f1.png".into(), vec![1.0, 0.0]),
            ]),
            texts: HashMap::from([
                ("aligned".to_string(), vec![2.0, 0.0]),
                ("orthogonal".to_string(), vec![0.0, 3.0]),
            ]),
        };
        let pairs = vec![
            FigureTextPair { figure: f0, section_text: "aligned".into() },
            FigureTextPair { figure: f1, section_text: "orthogonal".into() },
        ];
        let s = figure_relevance(&pairs, &embedder).unwrap();
        assert!((s - 0.5).abs() < 1e-12, "{s}");
    }

    #[test]
    fn unreadable_figures_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let good = png(dir.path(), "good.png", 10);
        let pairs = vec![
            FigureTextPair { figure: dir.path().join("missing.png"), section_text: "t".into() },
            FigureTextPair { figure: good.clone(), section_text: "t".into() },
        ];
        let embedder = MapEmbedder {
            images: HashMap::from([("good.png".into(), vec![1.0, 1.0])]),
            texts: HashMap::from([("t".to_string(), vec![1.0, 1.0])]),
        };
        let s = figure_relevance(&pairs, &embedder).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        // Every figure unreadable collapses to the empty case.
        let all_bad =
            vec![FigureTextPair { figure: dir.path().join("nope.png"), section_text: "t".into() }];
        assert_eq!(figure_relevance(&all_bad, &embedder).unwrap(), 0.0);
    }

    #[test]
    fn mock_embedder_pairs_copies_identically() {
        let dir = tempfile::tempdir().unwrap();
        let f = png(dir.path(), "f.png", 99);
        let one = vec![FigureTextPair { figure: f.clone(), section_text: "same text".into() }];
        let many: Vec<_> = (0..5)
            .map(|_| FigureTextPair { figure: f.clone(), section_text: "same text".into() })
            .collect();
        let a = figure_relevance(&one, &MockEmbedder).unwrap();
        let b = figure_relevance(&many, &MockEmbedder).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        let lm = UniformLm { vocab_size: 4 };
        // Power-of-two token count keeps the pairwise mean exact.
        let ppl = perplexity("alpha beta gamma delta", &lm).unwrap();
        assert_eq!(ppl, 4.0);
    }

    #[test]
    fn certain_model_perplexity_is_one() {
        let lm = ScriptedLm { logprobs: vec![0.0; 7] };
        assert_eq!(perplexity("some text here", &lm).unwrap(), 1.0);
    }

    #[test]
    fn worked_perplexity_example() {
        let lm = ScriptedLm { logprobs: vec![-1.0, -2.0, -3.0] };
        let ppl = perplexity("a b c", &lm).unwrap();
        assert!((ppl - 2.0f64.exp()).abs() < 1e-12, "{ppl}");
    }

    #[test]
    fn perplexity_rejects_bad_inputs() {
        assert!(perplexity("", &UniformLm { vocab_size: 4 }).is_err());
        assert!(perplexity("   ", &UniformLm { vocab_size: 4 }).is_err());
        assert!(perplexity_from_logprobs(&[]).is_err());
        assert!(perplexity_from_logprobs(&[0.5]).is_err());
        assert!(perplexity_from_logprobs(&[f64::NEG_INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn perplexity_matches_oracle(
            logprobs in proptest::collection::vec(-8.0f64..0.0, 1..40)
        ) {
            let ppl = perplexity_from_logprobs(&logprobs).unwrap();
            let oracle = (-(logprobs.iter().sum::<f64>() / logprobs.len() as f64)).exp();
            prop_assert!((ppl - oracle).abs() <= 1e-9 * oracle.abs(), "{ppl} vs {oracle}");
        }
    }

    #[test]
    fn aggregate_arithmetic_matches_published_row() {
        let (a, i, o) = judge_aggregates(&[4.05, 3.89, 2.80, 4.00, 4.68, 3.98]);
        assert!((a - 3.58).abs() < 0.005, "{a}");
        assert!((i - 4.22).abs() < 0.005, "{i}");
        assert!((o - 3.90).abs() < 0.005, "{o}");
    }

    #[test]
    fn aggregate_constant_and_split_cases() {
        let (a, i, o) = judge_aggregates(&[3.0; 6]);
        assert_eq!((a, i, o), (3.0, 3.0, 3.0));
        let (a, i, o) = judge_aggregates(&[1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
        assert_eq!((a, i, o), (1.0, 5.0, 3.0));
    }

    fn vision_gateway(dir: &Path, fixtures: serde_json::Value) -> Gateway {
        let path = dir.join("fx.json");
        std::fs::write(&path, fixtures.to_string()).unwrap();
        Gateway::new(vec![BackendDescriptor {
            id: "vision".into(),
            modality: Modality::Vision,
            endpoint: Endpoint::Mock { fixtures: path },
            price_in: 0.0,
            price_out: 0.0,
            max_retries: 0,
            max_in_flight: None,
            vision_tokens_per_image: 765,
        }])
        .unwrap()
    }

    fn judge_fixtures(scores: [u8; 6]) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (c, s) in Criterion::ALL.iter().zip(scores) {
            m.insert(
                c.role_tag().to_string(),
                serde_json::json!(format!("{{\"reason\": \"ok\", \"score\": {s}}}")),
            );
        }
        serde_json::Value::Object(m)
    }

    #[test]
    fn judge_collects_six_scores() {
        let dir = tempfile::tempdir().unwrap();
        let poster = png(dir.path(), "poster.png", 30);
        let gw = vision_gateway(dir.path(), judge_fixtures([4, 4, 4, 2, 2, 2]));
        let report = judge_poster(&poster, &gw, "vision").unwrap();
        assert_eq!(report.scores.len(), 6);
        assert!(!report.incomplete);
        assert_eq!(report.aesthetic_avg, Some(4.0));
        assert_eq!(report.information_avg, Some(2.0));
        assert_eq!(report.overall, Some(3.0));
        assert_eq!(gw.call_count(), 6);
        report.check().unwrap();
    }

    #[test]
    fn judge_marks_failed_criterion_missing() {
        let dir = tempfile::tempdir().unwrap();
        let poster = png(dir.path(), "poster.png", 30);
        let mut fixtures = judge_fixtures([4, 4, 4, 2, 2, 2]);
        // Invalid on both the first attempt and the repair reprompt.
        fixtures[prompts::roles::JUDGE_CLARITY] = serde_json::json!([
            "{\"reason\": \"r\", \"score\": 9}",
            "{\"reason\": \"r\", \"score\": 0}"
        ]);
        let gw = vision_gateway(dir.path(), fixtures);
        let report = judge_poster(&poster, &gw, "vision").unwrap();
        assert_eq!(report.scores.len(), 5);
        assert!(report.incomplete);
        assert_eq!(report.aesthetic_avg, Some(4.0));
        assert_eq!(report.information_avg, None);
        assert_eq!(report.overall, None);
    }

    #[test]
    fn extract_text_walks_shapes_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut doc = crate::doc::PosterDoc::new(800.0, 600.0);
        let frame = crate::planner::Rect { x: 0.0, y: 0.0, w: 100.0, h: 50.0 };
        let item = |text: &str| crate::painter::BulletItem {
            alignment: crate::painter::Alignment::Left,
            bullet: false,
            level: 0,
            font_size: 20,
            runs: vec![crate::painter::TextRun { text: text.into(), bold: None, italic: None }],
        };
        doc.add_textbox(frame, vec![item("A b")], 1.0);
        doc.add_textbox(frame, vec![item("c")], 1.0);
        let path = dir.path().join("poster.pptx");
        doc.save(&path).unwrap();
        assert_eq!(extract_poster_text(&path, None).unwrap(), "A b c");
    }

    #[test]
    fn extract_text_empty_document() {
        let dir = tempfile::tempdir().unwrap();
        let doc = crate::doc::PosterDoc::new(800.0, 600.0);
        let path = dir.path().join("empty.pptx");
        doc.save(&path).unwrap();
        assert_eq!(extract_poster_text(&path, None).unwrap(), "");
    }

    #[test]
    fn extract_text_image_requires_ocr() {
        let dir = tempfile::tempdir().unwrap();
        let poster = png(dir.path(), "poster.png", 20);
        let err = extract_poster_text(&poster, None).unwrap_err();
        assert!(matches!(err, Error::Metric(_)), "{err}");
        let text = extract_poster_text(&poster, Some("printf 'ocr text'")).unwrap();
        assert_eq!(text, "ocr text");
    }

    #[test]
    fn report_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = MetricReport {
            visual_similarity: Some(0.82),
            figure_relevance: Some(0.31),
            ppl: Some(12.5),
            ..Default::default()
        };
        for (c, s) in Criterion::ALL.iter().zip([4, 4, 4, 3, 3, 3]) {
            report.scores.insert(
                c.name().to_string(),
                JudgeScore { criterion: c.name().into(), reason: "ok".into(), score: s },
            );
        }
        report.recompute_aggregates();
        let path = dir.path().join("report.json");
        report.save(&path).unwrap();
        let loaded = MetricReport::load(&path).unwrap();
        assert_eq!(loaded.overall, Some(3.5));
        assert!(!loaded.incomplete);
        let rec = loaded.csv_record("demo");
        assert_eq!(rec.len(), MetricReport::CSV_HEADER.len());
        assert_eq!(rec[0], "demo");
        assert_eq!(rec[4], "4");
    }

    #[test]
    fn report_check_rejects_out_of_range() {
        let report = MetricReport { ppl: Some(0.5), ..Default::default() };
        assert!(report.check().is_err());
        let report = MetricReport { visual_similarity: Some(1.5), ..Default::default() };
        assert!(report.check().is_err());
    }
}
