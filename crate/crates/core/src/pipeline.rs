//! End-to-end orchestration: the generate pipeline with persisted stage
//! artifacts and resume, plus the evaluate, quiz, and bench commands.
//!
//! Every stage writes its artifact before the manifest flag flips, so a
//! crashed or interrupted run resumes from the last completed stage. A
//! flagged artifact that fails revalidation clears its flag and every
//! downstream flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::doc::PosterDoc;
use crate::error::{Error, Result, Stage};
use crate::gateway::{Gateway, LedgerSnapshot};
use crate::metrics::{
    extract_poster_text, figure_relevance, judge_poster, perplexity, visual_similarity,
    FigureTextPair, MetricReport,
};
use crate::painter::{
    materialize_references, render_panel, render_title_strip, ModelCritic, PanelRenderer,
    RefineInputs,
};
use crate::parser::{self, AssetLibrary, FigureAsset, PaperDocument};
use crate::planner::{self, AssetMatch, Layout};
use crate::prompts::roles;
use crate::quiz::{
    administer_quiz, aggregate_scores, density_augmented, generate_quiz, load_answers, word_count,
    QuizKind, QuizReport, QuizSet, ReaderScore,
};

/// Resolved working-directory layout. Construction creates the skeleton.
#[derive(Debug, Clone)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Result<Self> {
        for sub in ["assets", "assets/images", "panels", "quiz", "quiz/answers", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Workdir { root: root.to_path_buf() })
    }

    pub fn document_md(&self) -> PathBuf {
        self.root.join("assets/document.md")
    }
    pub fn images_dir(&self) -> PathBuf {
        self.root.join("assets/images")
    }
    pub fn candidates_json(&self) -> PathBuf {
        self.root.join("assets/candidates.json")
    }
    pub fn library_json(&self) -> PathBuf {
        self.root.join("assets/library.json")
    }
    pub fn matches_json(&self) -> PathBuf {
        self.root.join("assets/matches.json")
    }
    pub fn layout_json(&self) -> PathBuf {
        self.root.join("layout.json")
    }
    pub fn panel_dir(&self, index: usize) -> PathBuf {
        self.root.join("panels").join(index.to_string())
    }
    pub fn poster_pptx(&self) -> PathBuf {
        self.root.join("poster.pptx")
    }
    pub fn references_dir(&self) -> PathBuf {
        self.root.join("references")
    }
    pub fn quiz_file(&self, kind: QuizKind) -> PathBuf {
        self.root.join("quiz").join(format!("{}.json", kind.label()))
    }
    pub fn answers_file(&self, reader: &str, kind: QuizKind) -> PathBuf {
        self.root.join("quiz/answers").join(format!("{reader}.{}.json", kind.label()))
    }
    pub fn quiz_score_json(&self) -> PathBuf {
        self.root.join("quiz/score.json")
    }
    pub fn quiz_score_csv(&self) -> PathBuf {
        self.root.join("quiz/score.csv")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("reports/metrics.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("reports/metrics.csv")
    }
    pub fn tokens_json(&self) -> PathBuf {
        self.root.join("tokens.json")
    }
    pub fn manifest_json(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Pipeline stages in execution order. Indices define "downstream".
const GENERATE_STAGES: [&str; 7] =
    ["parsed", "summarized", "filtered", "matched", "laid_out", "painted", "assembled"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageFlags {
    pub parsed: bool,
    pub summarized: bool,
    pub filtered: bool,
    pub matched: bool,
    pub laid_out: bool,
    pub painted: bool,
    pub assembled: bool,
}

impl StageFlags {
    fn get(&self, stage: &str) -> bool {
        match stage {
            "parsed" => self.parsed,
            "summarized" => self.summarized,
            "filtered" => self.filtered,
            "matched" => self.matched,
            "laid_out" => self.laid_out,
            "painted" => self.painted,
            "assembled" => self.assembled,
            _ => unreachable!("unknown stage {stage}"),
        }
    }

    fn set(&mut self, stage: &str, value: bool) {
        match stage {
            "parsed" => self.parsed = value,
            "summarized" => self.summarized = value,
            "filtered" => self.filtered = value,
            "matched" => self.matched = value,
            "laid_out" => self.laid_out = value,
            "painted" => self.painted = value,
            "assembled" => self.assembled = value,
            _ => unreachable!("unknown stage {stage}"),
        }
    }

    /// Clear `stage` and everything after it.
    fn clear_from(&mut self, stage: &str) {
        let start = GENERATE_STAGES.iter().position(|s| *s == stage).expect("known stage");
        for s in &GENERATE_STAGES[start..] {
            self.set(s, false);
        }
    }

    pub fn all_complete(&self) -> bool {
        GENERATE_STAGES.iter().all(|s| self.get(s))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub stages: StageFlags,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per completed stage.
    pub timings_secs: BTreeMap<String, f64>,
    pub tokens: Option<LedgerSnapshot>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::validation("manifest.json", vec![e.to_string()]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }

    /// Re-check every flagged artifact on disk; a failure clears that flag
    /// and all downstream flags. Returns the revalidated manifest.
    pub fn revalidate(mut self, dirs: &Workdir) -> Self {
        for stage in GENERATE_STAGES {
            if !self.stages.get(stage) {
                // Everything downstream of a missing flag is already void.
                self.stages.clear_from(stage);
                break;
            }
            if let Err(e) = validate_stage_artifacts(stage, dirs) {
                log::warn!("stage '{stage}' artifact invalid ({e}); rerunning from there");
                self.stages.clear_from(stage);
                break;
            }
        }
        self
    }
}

/// Artifact validity per stage; `Ok(())` means the stage flag may stand.
fn validate_stage_artifacts(stage: &str, dirs: &Workdir) -> Result<()> {
    match stage {
        "parsed" => {
            let md = std::fs::read_to_string(dirs.document_md())?;
            if md.trim().is_empty() {
                return Err(Error::EmptyDocument);
            }
            load_candidates(&dirs.candidates_json())?;
            Ok(())
        }
        "summarized" | "filtered" => AssetLibrary::load(&dirs.library_json()).map(|_| ()),
        "matched" => {
            let matches = AssetMatch::load(&dirs.matches_json())?;
            let library = AssetLibrary::load(&dirs.library_json())?;
            for (section, entry) in &matches.by_section {
                if *section >= library.body_sections().len() {
                    return Err(Error::validation(
                        "matches.json",
                        vec![format!("section index {section} out of range")],
                    ));
                }
                if library.asset(entry.kind, entry.asset_id).is_none() {
                    return Err(Error::validation(
                        "matches.json",
                        vec![format!("unknown asset {:?} {}", entry.kind, entry.asset_id)],
                    ));
                }
            }
            Ok(())
        }
        "laid_out" => {
            let layout = Layout::load(&dirs.layout_json())?;
            let library = AssetLibrary::load(&dirs.library_json())?;
            if layout.panels.len() != library.body_sections().len() {
                return Err(Error::validation(
                    "layout.json",
                    vec![format!(
                        "{} panels for {} body sections",
                        layout.panels.len(),
                        library.body_sections().len()
                    )],
                ));
            }
            Ok(())
        }
        "painted" => {
            let layout = Layout::load(&dirs.layout_json())?;
            for panel in &layout.panels {
                crate::painter::load_panel_artifacts(&dirs.panel_dir(panel.section_index))?;
            }
            Ok(())
        }
        "assembled" => crate::doc::read_document(&dirs.poster_pptx()).map(|_| ()),
        _ => unreachable!("unknown stage {stage}"),
    }
}

fn load_candidates(path: &Path) -> Result<Vec<FigureAsset>> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::validation("candidates.json", vec![e.to_string()]))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    /// Reuse valid artifacts from a previous run instead of starting over.
    pub resume: bool,
    /// Override the config's panel-parallelism flag.
    pub parallel: Option<bool>,
}

#[derive(Debug)]
pub struct GenerateOutcome {
    pub poster: PathBuf,
    pub manifest: RunManifest,
    /// Gateway calls made by this invocation (resume on a complete
    /// manifest must report zero).
    pub gateway_calls: u64,
}

/// Run parse -> summarize -> filter -> match -> layout -> paint ->
/// assemble, persisting every intermediate under `workdir`.
pub fn cmd_generate(
    paper: &Path,
    config: &RunConfig,
    workdir: &Path,
    options: GenerateOptions,
) -> Result<GenerateOutcome> {
    config.validate()?;
    let dirs = Workdir::new(workdir)?;
    let mut manifest = if options.resume {
        RunManifest::load(&dirs.manifest_json())?.revalidate(&dirs)
    } else {
        RunManifest::default()
    };

    let mut gateway = config.gateway()?;
    if options.resume && dirs.tokens_json().exists() {
        let raw = std::fs::read_to_string(dirs.tokens_json())?;
        if let Ok(snapshot) = serde_json::from_str::<LedgerSnapshot>(&raw) {
            gateway.restore_ledger(snapshot);
        }
    }
    let calls_at_start = gateway.call_count();
    let parallel = options.parallel.unwrap_or(config.painter.parallel);

    // Each closure runs one stage body; run_stage wraps timing, manifest
    // bookkeeping, and stage tagging around it.
    let run_stage = |manifest: &mut RunManifest,
                         stage_name: &str,
                         stage: Stage,
                         gateway: &Gateway,
                         body: &mut dyn FnMut(&Gateway) -> Result<()>|
     -> Result<()> {
        if manifest.stages.get(stage_name) {
            log::info!("stage {stage_name} already complete; skipping");
            return Ok(());
        }
        let start = Instant::now();
        body(gateway).map_err(|e| e.at_stage(stage))?;
        manifest.stages.set(stage_name, true);
        manifest.timings_secs.insert(stage_name.to_string(), start.elapsed().as_secs_f64());
        manifest.tokens = Some(
            gateway
                .ledger()
                .snapshot_with_cost(&config.backends)
                .unwrap_or_else(|_| gateway.ledger().snapshot()),
        );
        if let Some(snapshot) = &manifest.tokens {
            std::fs::write(
                dirs.tokens_json(),
                serde_json::to_string_pretty(snapshot).expect("snapshot serializes"),
            )?;
        }
        manifest.save(&dirs.manifest_json())?;
        Ok(())
    };

    run_stage(&mut manifest, "parsed", Stage::Parse, &gateway, &mut |_| {
        stage_parse(paper, config, &dirs)
    })?;

    run_stage(&mut manifest, "summarized", Stage::Summarize, &gateway, &mut |gw| {
        let doc = load_document(&dirs)?;
        let backend = config.resolve_role(roles::PARSER_SUMMARIZE)?;
        let library = parser::summarize_document(&doc, gw, backend)?;
        library.save(&dirs.library_json())
    })?;

    run_stage(&mut manifest, "filtered", Stage::Filter, &gateway, &mut |gw| {
        let library = AssetLibrary::load(&dirs.library_json())?;
        let candidates = load_candidates(&dirs.candidates_json())?;
        let backend = config.resolve_role(roles::PARSER_FILTER)?;
        let filtered = parser::filter_assets(&library, &candidates, gw, backend)?;
        filtered.save(&dirs.library_json())
    })?;

    run_stage(&mut manifest, "matched", Stage::Match, &gateway, &mut |gw| {
        let library = AssetLibrary::load(&dirs.library_json())?;
        let backend = config.resolve_role(roles::PLANNER_MATCH)?;
        let matches = planner::match_assets(&library, gw, backend)?;
        matches.save(&dirs.matches_json())
    })?;

    run_stage(&mut manifest, "laid_out", Stage::Layout, &gateway, &mut |_| {
        let library = AssetLibrary::load(&dirs.library_json())?;
        let matches = AssetMatch::load(&dirs.matches_json())?;
        let weights = planner::estimate_weights(&library, &matches, config.layout.lambda);
        let geometry = config.poster_geometry()?;
        let layout = planner::build_layout(&weights, &geometry, &config.layout_params(), &matches)?;
        layout.save(&dirs.layout_json())
    })?;

    run_stage(&mut manifest, "painted", Stage::Paint, &gateway, &mut |gw| {
        stage_paint(config, &dirs, gw, parallel)
    })?;

    run_stage(&mut manifest, "assembled", Stage::Assemble, &gateway, &mut |_| {
        stage_assemble(&dirs)
    })?;

    Ok(GenerateOutcome {
        poster: dirs.poster_pptx(),
        gateway_calls: gateway.call_count() - calls_at_start,
        manifest,
    })
}

/// Convert or ingest the paper, copy candidate images into the workdir,
/// and persist document.md + candidates.json.
fn stage_parse(paper: &Path, config: &RunConfig, dirs: &Workdir) -> Result<()> {
    let ext = paper.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    let (doc, candidates) = match ext.as_str() {
        "pdf" => {
            let command = config.converter.command.as_deref().ok_or_else(|| {
                Error::Config("PDF input needs [converter] command in the config".into())
            })?;
            parser::convert_pdf(paper, command, &dirs.root.join("assets/converted"))?
        }
        "md" | "markdown" => parser::ingest_markdown(paper)?,
        other => {
            return Err(Error::Conversion(format!(
                "unsupported paper format '.{other}' (expected .pdf or .md)"
            )))
        }
    };

    std::fs::write(dirs.document_md(), &doc.markdown)?;
    let mut copied = Vec::with_capacity(candidates.len());
    for asset in candidates {
        let stem = asset
            .file
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| format!("asset{}", asset.id));
        let target = dirs.images_dir().join(format!("{}_{}_{stem}", asset.kind.label(), asset.id));
        std::fs::copy(&asset.file, &target).map_err(|e| {
            Error::Conversion(format!("cannot copy asset {}: {e}", asset.file.display()))
        })?;
        copied.push(FigureAsset { file: target, ..asset });
    }
    std::fs::write(
        dirs.candidates_json(),
        serde_json::to_string_pretty(&copied).expect("candidates serialize"),
    )?;
    Ok(())
}

fn load_document(dirs: &Workdir) -> Result<PaperDocument> {
    let markdown = std::fs::read_to_string(dirs.document_md())?;
    if markdown.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let page_count = markdown.split_whitespace().count().div_ceil(500).max(1);
    Ok(PaperDocument { markdown, page_count, source_path: dirs.document_md() })
}

/// Refine every panel (optionally on worker threads) and persist each
/// panel's block, state, and iteration crops.
fn stage_paint(config: &RunConfig, dirs: &Workdir, gateway: &Gateway, parallel: bool) -> Result<()> {
    let library = AssetLibrary::load(&dirs.library_json())?;
    let layout = Layout::load(&dirs.layout_json())?;
    let geometry = config.poster_geometry()?;
    let compose_backend = config.resolve_role(roles::PAINTER_COMPOSE)?;
    let critique_backend = config.resolve_role(roles::COMMENTER_CRITIQUE)?;
    let (negative_ref, positive_ref) = materialize_references(&dirs.references_dir())?;
    let critic = ModelCritic {
        gateway,
        backend_id: critique_backend.to_string(),
        negative_ref,
        positive_ref,
    };
    let renderer =
        PanelRenderer { geometry: &geometry, render_command: config.render.command.clone() };
    let body = library.body_sections();

    let refine_one = |panel: &planner::Panel| -> Result<()> {
        let section = body.get(panel.section_index).ok_or_else(|| {
            Error::Contract(format!("panel {} has no section", panel.section_index))
        })?;
        let asset = layout
            .matches
            .get(panel.section_index)
            .and_then(|m| library.asset(m.kind, m.asset_id));
        let inputs = RefineInputs {
            panel_index: panel.section_index,
            panel,
            section,
            asset,
            max_iters: config.painter.max_iters,
        };
        crate::painter::refine_panel(
            &inputs,
            gateway,
            compose_backend,
            &critic,
            &renderer,
            &dirs.panel_dir(panel.section_index),
        )?;
        Ok(())
    };

    if parallel {
        std::thread::scope(|scope| -> Result<()> {
            let handles: Vec<_> =
                layout.panels.iter().map(|panel| scope.spawn(|| refine_one(panel))).collect();
            let mut first_error = None;
            for handle in handles {
                let result = handle.join().unwrap_or_else(|_| {
                    Err(Error::Contract("panel refinement thread panicked".into()))
                });
                if let (Err(e), None) = (result, &first_error) {
                    first_error = Some(e);
                }
            }
            first_error.map_or(Ok(()), Err)
        })
    } else {
        layout.panels.iter().try_for_each(refine_one)
    }
}

/// Build the final document from persisted panel artifacts, in reading
/// order, and save it.
fn stage_assemble(dirs: &Workdir) -> Result<()> {
    let library = AssetLibrary::load(&dirs.library_json())?;
    let layout = Layout::load(&dirs.layout_json())?;
    let geometry = &layout.geometry;
    let mut doc = PosterDoc::new(geometry.width_px as f64, geometry.height_px as f64);
    doc.doc_title = library.meta.poster_title.clone();

    let byline = match (library.meta.authors.trim(), library.meta.affiliations.trim()) {
        ("", "") => String::new(),
        (authors, "") => authors.to_string(),
        ("", affiliations) => affiliations.to_string(),
        (authors, affiliations) => format!("{authors} | {affiliations}"),
    };
    render_title_strip(&mut doc, &layout.title, &library.meta.poster_title, &byline);

    let order = planner::reading_order(&layout.panels);
    for &i in &order {
        let panel = &layout.panels[i];
        let (block, state) = crate::painter::load_panel_artifacts(&dirs.panel_dir(panel.section_index))?;
        let asset = layout
            .matches
            .get(panel.section_index)
            .and_then(|m| library.asset(m.kind, m.asset_id));
        render_panel(&mut doc, panel, &block, state.font_scale, asset);
    }
    doc.save(&dirs.poster_pptx())
}

pub struct EvaluateInputs<'a> {
    pub generated: &'a Path,
    pub ground_truth: Option<&'a Path>,
    /// A generate workdir; supplies the figure/section pairs and report
    /// destination when present.
    pub workdir: Option<&'a Path>,
    /// Skip the judge (e.g. for offline numeric-only runs).
    pub skip_judge: bool,
}

/// Compute the metric report for a generated poster.
pub fn cmd_evaluate(inputs: &EvaluateInputs<'_>, config: &RunConfig) -> Result<MetricReport> {
    let run = || -> Result<MetricReport> {
        config.validate()?;
        if !inputs.generated.exists() {
            return Err(Error::Metric(format!(
                "generated poster not found: {}",
                inputs.generated.display()
            )));
        }
        let embedder = config.embedding.embedder();
        let mut report = MetricReport::default();

        match inputs.ground_truth {
            Some(gt) => {
                report.visual_similarity =
                    Some(visual_similarity(inputs.generated, gt, embedder.as_ref())?);
            }
            None => log::warn!("no ground-truth poster; visual similarity omitted"),
        }

        let pairs = match inputs.workdir {
            Some(root) => figure_pairs(&Workdir::new(root)?)?,
            None => Vec::new(),
        };
        report.figure_relevance = Some(figure_relevance(&pairs, embedder.as_ref())?);

        let text = extract_poster_text(inputs.generated, config.evaluate.ocr_command.as_deref())?;
        if text.trim().is_empty() {
            log::warn!("poster has no extractable text; perplexity omitted");
        } else {
            let lm = config.lm.scorer();
            report.ppl = Some(perplexity(&text, lm.as_ref())?);
        }

        if !inputs.skip_judge {
            let gateway = config.gateway()?;
            let backend = config.resolve_role(roles::JUDGE_CLARITY)?;
            let judged = judge_poster(inputs.generated, &gateway, backend)?;
            report.scores = judged.scores;
        }
        report.recompute_aggregates();
        report.check()?;

        if let Some(root) = inputs.workdir {
            let dirs = Workdir::new(root)?;
            report.save(&dirs.metrics_json())?;
            let mut writer = csv::Writer::from_path(dirs.metrics_csv())
                .map_err(|e| Error::Metric(format!("cannot write metrics csv: {e}")))?;
            writer.write_record(MetricReport::CSV_HEADER).map_err(csv_err)?;
            let name = inputs.generated.file_stem().unwrap_or_default().to_string_lossy();
            writer.write_record(report.csv_record(&name)).map_err(csv_err)?;
            writer.flush()?;
        }
        Ok(report)
    };
    run().map_err(|e| e.at_stage(Stage::Evaluate))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Metric(format!("csv write failed: {e}"))
}

/// Figure/section-text pairs from a generate workdir: each placed asset
/// paired with the synopsis of the section it was matched to.
fn figure_pairs(dirs: &Workdir) -> Result<Vec<FigureTextPair>> {
    if !dirs.layout_json().exists() || !dirs.library_json().exists() {
        return Ok(Vec::new());
    }
    let layout = Layout::load(&dirs.layout_json())?;
    let library = AssetLibrary::load(&dirs.library_json())?;
    let body = library.body_sections();
    let mut pairs = Vec::new();
    for (&section, entry) in &layout.matches.by_section {
        let (Some(asset), Some(synopsis)) =
            (library.asset(entry.kind, entry.asset_id), body.get(section))
        else {
            continue;
        };
        pairs.push(FigureTextPair {
            figure: asset.file.clone(),
            section_text: synopsis.content.clone(),
        });
    }
    Ok(pairs)
}

/// Generate both quiz sets from the parsed document markdown.
pub fn cmd_quiz_gen(config: &RunConfig, workdir: &Path) -> Result<(QuizSet, QuizSet)> {
    let run = || -> Result<(QuizSet, QuizSet)> {
        config.validate()?;
        let dirs = Workdir::new(workdir)?;
        let markdown = std::fs::read_to_string(dirs.document_md()).map_err(|_| {
            Error::Quiz(format!(
                "no parsed document at {}; run generate first",
                dirs.document_md().display()
            ))
        })?;
        let gateway = config.gateway()?;
        let verbatim_backend = config.resolve_role(roles::QUIZ_GENERATE_VERBATIM)?;
        let interpretive_backend = config.resolve_role(roles::QUIZ_GENERATE_INTERPRETIVE)?;
        let verbatim = generate_quiz(&markdown, QuizKind::Verbatim, &gateway, verbatim_backend)?;
        verbatim.save(&dirs.quiz_file(QuizKind::Verbatim))?;
        let interpretive =
            generate_quiz(&markdown, QuizKind::Interpretive, &gateway, interpretive_backend)?;
        interpretive.save(&dirs.quiz_file(QuizKind::Interpretive))?;
        Ok((verbatim, interpretive))
    };
    run().map_err(|e| e.at_stage(Stage::Quiz))
}

/// Administer both quiz sets to every configured reader against the
/// poster image; one answer file per reader per kind.
pub fn cmd_quiz_run(poster: &Path, config: &RunConfig, workdir: &Path) -> Result<()> {
    let run = || -> Result<()> {
        config.validate()?;
        if config.quiz.readers.is_empty() {
            return Err(Error::Config("no quiz readers configured".into()));
        }
        let dirs = Workdir::new(workdir)?;
        let gateway = config.gateway()?;
        for kind in [QuizKind::Verbatim, QuizKind::Interpretive] {
            let quiz = QuizSet::load(&dirs.quiz_file(kind), kind)?;
            for reader in &config.quiz.readers {
                let answers = administer_quiz(poster, &quiz, &gateway, &reader.backend)?;
                crate::quiz::save_answers(&dirs.answers_file(&reader.id, kind), &answers)?;
            }
        }
        Ok(())
    };
    run().map_err(|e| e.at_stage(Stage::Quiz))
}

/// Score persisted answers: raw accuracy plus the density-augmented
/// variant, aggregated over reader groups.
pub fn cmd_quiz_score(poster: &Path, config: &RunConfig, workdir: &Path) -> Result<QuizReport> {
    let run = || -> Result<QuizReport> {
        config.validate()?;
        if config.quiz.readers.is_empty() {
            return Err(Error::Config("no quiz readers configured".into()));
        }
        let dirs = Workdir::new(workdir)?;
        let text = extract_poster_text(poster, config.evaluate.ocr_command.as_deref())?;
        let l = word_count(&text) as f64;
        let w = config.quiz.w;

        let mut per_kind: BTreeMap<&'static str, Vec<ReaderScore>> = BTreeMap::new();
        for kind in [QuizKind::Verbatim, QuizKind::Interpretive] {
            let quiz = QuizSet::load(&dirs.quiz_file(kind), kind)?;
            for reader in &config.quiz.readers {
                let answers = load_answers(&dirs.answers_file(&reader.id, kind))?;
                let raw = crate::quiz::score_raw(&answers, &quiz)?;
                per_kind.entry(kind.label()).or_default().push(ReaderScore {
                    reader: reader.id.clone(),
                    group: reader.group.clone(),
                    raw,
                    density: density_augmented(raw, l, w)?,
                });
            }
        }
        let report = aggregate_scores(
            per_kind.get(QuizKind::Verbatim.label()).map_or(&[][..], |v| v),
            per_kind.get(QuizKind::Interpretive.label()).map_or(&[][..], |v| v),
        );
        report.save(&dirs.quiz_score_json())?;
        let mut writer = csv::Writer::from_path(dirs.quiz_score_csv())
            .map_err(|e| Error::Quiz(format!("cannot write score csv: {e}")))?;
        writer.write_record(QuizReport::CSV_HEADER).map_err(|e| Error::Quiz(e.to_string()))?;
        let name = poster.file_stem().unwrap_or_default().to_string_lossy();
        writer.write_record(report.csv_record(&name)).map_err(|e| Error::Quiz(e.to_string()))?;
        writer.flush()?;
        Ok(report)
    };
    run().map_err(|e| e.at_stage(Stage::Quiz))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchRow {
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub visual_similarity: Option<f64>,
    pub figure_relevance: Option<f64>,
    pub ppl: Option<f64>,
    pub aesthetic_avg: Option<f64>,
    pub information_avg: Option<f64>,
    pub overall: Option<f64>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost_usd: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub mean: Option<BenchRow>,
}

const BENCH_CSV_HEADER: [&str; 13] = [
    "id",
    "ok",
    "vis_sim",
    "fig_rel",
    "ppl",
    "aesthetic_avg",
    "information_avg",
    "overall",
    "tokens_in",
    "tokens_out",
    "cost_usd",
    "seconds",
    "error",
];

fn bench_csv_record(row: &BenchRow) -> Vec<String> {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    vec![
        row.id.clone(),
        row.ok.to_string(),
        fmt(row.visual_similarity),
        fmt(row.figure_relevance),
        fmt(row.ppl),
        fmt(row.aesthetic_avg),
        fmt(row.information_avg),
        fmt(row.overall),
        row.tokens_in.to_string(),
        row.tokens_out.to_string(),
        fmt(row.cost_usd),
        format!("{:.3}", row.seconds),
        row.error.clone().unwrap_or_default(),
    ]
}

/// Run generate + evaluate over every `<id>/paper.{pdf,md}` +
/// `<id>/poster.png` pair under `root`. Failures are recorded per pair and
/// the batch continues.
pub fn cmd_bench(root: &Path, config: &RunConfig, out_dir: &Path) -> Result<BenchReport> {
    let run = || -> Result<BenchReport> {
        config.validate()?;
        let pairs = find_bench_pairs(root)?;
        if pairs.is_empty() {
            return Err(Error::Contract(format!("no pairs found under {}", root.display())));
        }
        std::fs::create_dir_all(out_dir)?;

        let mut rows = Vec::with_capacity(pairs.len());
        for (id, paper, gt_poster) in pairs {
            let start = Instant::now();
            let workdir = out_dir.join(&id);
            let row = match bench_one(&paper, gt_poster.as_deref(), config, &workdir) {
                Ok(mut row) => {
                    row.id = id;
                    row.ok = true;
                    row
                }
                Err(e) => {
                    log::warn!("pair failed: {e}");
                    BenchRow { id, ok: false, error: Some(e.to_string()), ..Default::default() }
                }
            };
            rows.push(BenchRow { seconds: start.elapsed().as_secs_f64(), ..row });
        }

        let mean = mean_row(&rows);
        let report = BenchReport { rows, mean };
        std::fs::write(
            out_dir.join("bench.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        let mut writer = csv::Writer::from_path(out_dir.join("bench.csv"))
            .map_err(|e| Error::Contract(format!("cannot write bench csv: {e}")))?;
        writer.write_record(BENCH_CSV_HEADER).map_err(|e| Error::Contract(e.to_string()))?;
        for row in &report.rows {
            writer.write_record(bench_csv_record(row)).map_err(|e| Error::Contract(e.to_string()))?;
        }
        if let Some(mean) = &report.mean {
            writer.write_record(bench_csv_record(mean)).map_err(|e| Error::Contract(e.to_string()))?;
        }
        writer.flush()?;
        Ok(report)
    };
    run().map_err(|e| e.at_stage(Stage::Bench))
}

fn bench_one(
    paper: &Path,
    gt_poster: Option<&Path>,
    config: &RunConfig,
    workdir: &Path,
) -> Result<BenchRow> {
    let outcome = cmd_generate(paper, config, workdir, GenerateOptions::default())?;
    let inputs = EvaluateInputs {
        generated: &outcome.poster,
        ground_truth: gt_poster,
        workdir: Some(workdir),
        skip_judge: false,
    };
    let report = cmd_evaluate(&inputs, config)?;
    let tokens = outcome.manifest.tokens.unwrap_or_default();
    let totals = tokens.grand_total();
    Ok(BenchRow {
        visual_similarity: report.visual_similarity,
        figure_relevance: report.figure_relevance,
        ppl: report.ppl,
        aesthetic_avg: report.aesthetic_avg,
        information_avg: report.information_avg,
        overall: report.overall,
        tokens_in: totals.input(),
        tokens_out: totals.output(),
        cost_usd: tokens.cost_usd,
        ..Default::default()
    })
}

/// `<id>/paper.pdf` (or `.md`) plus optional `<id>/poster.png`, sorted by id.
fn find_bench_pairs(root: &Path) -> Result<Vec<(String, PathBuf, Option<PathBuf>)>> {
    if !root.is_dir() {
        return Err(Error::Contract(format!("{} is not a directory", root.display())));
    }
    let mut pairs = Vec::new();
    let mut entries: Vec<_> =
        std::fs::read_dir(root)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    entries.sort();
    for dir in entries.into_iter().filter(|p| p.is_dir()) {
        let paper = ["paper.pdf", "paper.md"].iter().map(|n| dir.join(n)).find(|p| p.exists());
        let Some(paper) = paper else { continue };
        let poster = dir.join("poster.png");
        let id = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        pairs.push((id, paper, poster.exists().then_some(poster)));
    }
    Ok(pairs)
}

fn mean_row(rows: &[BenchRow]) -> Option<BenchRow> {
    let ok: Vec<&BenchRow> = rows.iter().filter(|r| r.ok).collect();
    if ok.is_empty() {
        return None;
    }
    let mean_of = |f: &dyn Fn(&BenchRow) -> Option<f64>| {
        let values: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let n = ok.len() as f64;
    Some(BenchRow {
        id: "mean".into(),
        ok: true,
        error: None,
        visual_similarity: mean_of(&|r| r.visual_similarity),
        figure_relevance: mean_of(&|r| r.figure_relevance),
        ppl: mean_of(&|r| r.ppl),
        aesthetic_avg: mean_of(&|r| r.aesthetic_avg),
        information_avg: mean_of(&|r| r.information_avg),
        overall: mean_of(&|r| r.overall),
        tokens_in: (ok.iter().map(|r| r.tokens_in).sum::<u64>() as f64 / n).round() as u64,
        tokens_out: (ok.iter().map(|r| r.tokens_out).sum::<u64>() as f64 / n).round() as u64,
        cost_usd: mean_of(&|r| r.cost_usd),
        seconds: ok.iter().map(|r| r.seconds).sum::<f64>() / n,
    })
}
