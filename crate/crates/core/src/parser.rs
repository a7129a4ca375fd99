//! Paper ingestion: PDF → markdown → structured asset library.
//!
//! PDF conversion is delegated to an external command (the conversion
//! internals are not interesting here); a markdown ingestion path covers
//! pre-converted input and offline tests. The summarizer and filter calls
//! go through the gateway, so the whole module runs scripted under mocks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest};
use crate::prompts;
use crate::schemas::SchemaId;

/// Hard cap on kept assets per kind after filtering, model output
/// notwithstanding.
pub const MAX_ASSETS_PER_KIND: usize = 5;

/// Section titles longer than this are truncated at load.
pub const MAX_TITLE_WORDS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaperDocument {
    pub markdown: String,
    pub page_count: usize,
    pub source_path: PathBuf,
}

impl PaperDocument {
    pub fn word_count(&self) -> usize {
        self.markdown.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSynopsis {
    pub title: String,
    pub content: String,
}

impl SectionSynopsis {
    pub fn word_count(&self) -> usize {
        self.content.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Image,
    Table,
}

impl AssetKind {
    pub fn label(self) -> &'static str {
        match self {
            AssetKind::Image => "Figure",
            AssetKind::Table => "Table",
        }
    }
}

/// A captioned figure or table crop extracted from the paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureAsset {
    pub id: u32,
    pub kind: AssetKind,
    pub caption: String,
    pub file: PathBuf,
    pub width_px: u32,
    pub height_px: u32,
}

impl FigureAsset {
    pub fn area(&self) -> f64 {
        self.width_px as f64 * self.height_px as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryMeta {
    pub poster_title: String,
    #[serde(default)]
    pub authors: String,
    #[serde(default)]
    pub affiliations: String,
}

/// Everything the planner needs: ordered section synopses plus filtered,
/// captioned visual assets. The first section is always the poster-title
/// section; the remaining sections are the poster body.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssetLibrary {
    pub meta: LibraryMeta,
    pub sections: Vec<SectionSynopsis>,
    #[serde(default)]
    pub figures: Vec<FigureAsset>,
    #[serde(default)]
    pub tables: Vec<FigureAsset>,
}

impl AssetLibrary {
    /// Body sections: everything after the poster-title section.
    pub fn body_sections(&self) -> &[SectionSynopsis] {
        if self.sections.is_empty() {
            &[]
        } else {
            &self.sections[1..]
        }
    }

    pub fn asset(&self, kind: AssetKind, id: u32) -> Option<&FigureAsset> {
        let pool = match kind {
            AssetKind::Image => &self.figures,
            AssetKind::Table => &self.tables,
        };
        pool.iter().find(|a| a.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        for asset in self.figures.iter().chain(&self.tables) {
            if !asset.file.exists() {
                return Err(Error::Contract(format!(
                    "asset file missing at save time: {}",
                    asset.file.display()
                )));
            }
        }
        let json = serde_json::to_string_pretty(self).expect("library serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        let library: AssetLibrary = serde_json::from_str(&data)
            .map_err(|e| Error::validation("library.json", vec![e.to_string()]))?;
        library.check()?;
        Ok(library)
    }

    /// Structural invariants, re-checked whenever the artifact is loaded.
    pub fn check(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.sections.is_empty() {
            issues.push("no sections".to_string());
        } else if !is_title_section(&self.sections[0].title) {
            issues.push(format!(
                "first section '{}' is not a poster-title section",
                self.sections[0].title
            ));
        }
        if self.meta.poster_title.trim().is_empty() {
            issues.push("meta.poster_title is empty".to_string());
        }
        if self.figures.len() > MAX_ASSETS_PER_KIND {
            issues.push(format!("{} figures exceed the cap of {MAX_ASSETS_PER_KIND}", self.figures.len()));
        }
        if self.tables.len() > MAX_ASSETS_PER_KIND {
            issues.push(format!("{} tables exceed the cap of {MAX_ASSETS_PER_KIND}", self.tables.len()));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("library.json", issues))
        }
    }
}

/// The summarizer prompt demands a leading poster-title section; this is the
/// deterministic predicate behind that rule.
pub fn is_title_section(title: &str) -> bool {
    title.to_ascii_lowercase().contains("title")
}

/// Entry in the converter's caption sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaptionEntry {
    file: String,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    kind: Option<AssetKind>,
}

/// Run the configured converter command on a PDF and collect its outputs:
/// one markdown file, an `images/` directory, and an optional
/// `captions.json` sidecar in the output directory.
///
/// The command template substitutes `{input}` and `{out_dir}`.
pub fn convert_pdf(
    pdf: &Path,
    command_template: &str,
    out_dir: &Path,
) -> Result<(PaperDocument, Vec<FigureAsset>)> {
    let bytes = std::fs::read(pdf)
        .map_err(|e| Error::Conversion(format!("cannot read {}: {e}", pdf.display())))?;
    if !bytes.starts_with(b"%PDF") {
        return Err(Error::Conversion(format!("{} is not a PDF", pdf.display())));
    }
    std::fs::create_dir_all(out_dir)?;

    let command = command_template
        .replace("{input}", &shell_quote(pdf))
        .replace("{out_dir}", &shell_quote(out_dir));
    let output = std::process::Command::new("sh")
        .arg("-c")
        .arg(&command)
        .output()
        .map_err(|e| Error::Conversion(format!("cannot spawn converter: {e}")))?;
    if !output.status.success() {
        return Err(Error::Conversion(format!(
            "converter exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr)
        )));
    }

    let markdown_path = find_markdown(out_dir)?;
    let markdown = std::fs::read_to_string(&markdown_path)?;
    if markdown.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let page_count = pdf_page_count(&bytes)
        .unwrap_or_else(|| estimate_pages(&markdown))
        .max(1);
    let doc = PaperDocument { markdown, page_count, source_path: pdf.to_path_buf() };
    let candidates = collect_assets(out_dir)?;
    Ok((doc, candidates))
}

/// Ingest pre-converted markdown, bypassing the converter. Looks for an
/// `images/` directory and `captions.json` sidecar next to the file.
pub fn ingest_markdown(md_path: &Path) -> Result<(PaperDocument, Vec<FigureAsset>)> {
    let markdown = std::fs::read_to_string(md_path)?;
    if markdown.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let doc = PaperDocument {
        page_count: estimate_pages(&markdown).max(1),
        source_path: md_path.to_path_buf(),
        markdown,
    };
    let dir = md_path.parent().unwrap_or(Path::new("."));
    let candidates = collect_assets(dir)?;
    Ok((doc, candidates))
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

fn find_markdown(dir: &Path) -> Result<PathBuf> {
    let preferred = dir.join("document.md");
    if preferred.exists() {
        return Ok(preferred);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "md"))
        .collect();
    found.sort();
    match found.len() {
        0 => Err(Error::Conversion(format!("converter produced no .md file in {}", dir.display()))),
        1 => Ok(found.remove(0)),
        n => Err(Error::Conversion(format!("converter produced {n} .md files, expected one"))),
    }
}

/// Count `/Type /Page` objects in raw PDF bytes (excluding `/Pages` nodes).
/// Crude but dependency-free; callers fall back to a word-count estimate.
fn pdf_page_count(bytes: &[u8]) -> Option<usize> {
    let mut count = 0usize;
    let needle = b"/Type";
    let mut i = 0;
    while i + needle.len() < bytes.len() {
        if &bytes[i..i + needle.len()] == needle {
            let mut j = i + needle.len();
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if bytes[j..].starts_with(b"/Page") && !bytes[j..].starts_with(b"/Pages") {
                count += 1;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    (count > 0).then_some(count)
}

fn estimate_pages(markdown: &str) -> usize {
    markdown.split_whitespace().count().div_ceil(500)
}

/// Read the caption sidecar (or enumerate images with synthesized captions)
/// and probe image dimensions. Ids are assigned 1.. per kind, in sidecar
/// order.
fn collect_assets(dir: &Path) -> Result<Vec<FigureAsset>> {
    let sidecar = dir.join("captions.json");
    let entries: Vec<CaptionEntry> = if sidecar.exists() {
        let data = std::fs::read_to_string(&sidecar)?;
        serde_json::from_str(&data)
            .map_err(|e| Error::Conversion(format!("bad captions.json: {e}")))?
    } else {
        let images_dir = dir.join("images");
        if !images_dir.is_dir() {
            return Ok(vec![]);
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&images_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg")
                )
            })
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|f| CaptionEntry {
                file: f.strip_prefix(dir).unwrap_or(&f).display().to_string(),
                caption: String::new(),
                kind: None,
            })
            .collect()
    };

    let mut assets = Vec::new();
    let mut next_id = std::collections::HashMap::from([(AssetKind::Image, 1u32), (AssetKind::Table, 1u32)]);
    for entry in entries {
        let file = dir.join(&entry.file);
        let (width_px, height_px) = match image::image_dimensions(&file) {
            Ok(dims) => dims,
            Err(e) => {
                log::warn!("skipping unreadable asset {}: {e}", file.display());
                continue;
            }
        };
        let kind = entry.kind.unwrap_or(AssetKind::Image);
        let id = next_id[&kind];
        *next_id.get_mut(&kind).unwrap() += 1;
        let caption = if entry.caption.trim().is_empty() {
            format!("{} {id}", kind.label())
        } else {
            entry.caption
        };
        assets.push(FigureAsset { id, kind, caption, file, width_px, height_px });
    }
    Ok(assets)
}

/// Ask the text backend for the section outline and assemble the library
/// skeleton (meta + sections; assets attach in the filter step).
pub fn summarize_document(
    doc: &PaperDocument,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<AssetLibrary> {
    let req = ModelRequest::text(
        prompts::roles::PARSER_SUMMARIZE,
        prompts::PARSER_SUMMARIZER,
        format!("Markdown document:\n\n{}", doc.markdown),
    );
    let value = gateway.complete_json(backend_id, &req, SchemaId::ParserOutline)?;

    let meta = &value["meta"];
    let meta = LibraryMeta {
        poster_title: meta["poster_title"].as_str().unwrap_or_default().to_string(),
        authors: meta["authors"].as_str().unwrap_or_default().to_string(),
        affiliations: meta["affiliations"].as_str().unwrap_or_default().to_string(),
    };
    let mut sections = Vec::new();
    for section in value["sections"].as_array().into_iter().flatten() {
        let title = normalize_title(section["title"].as_str().unwrap_or_default());
        let content = section["content"].as_str().unwrap_or_default().to_string();
        sections.push(SectionSynopsis { title, content });
    }
    let library = AssetLibrary { meta, sections, figures: vec![], tables: vec![] };
    library.check()?;
    Ok(library)
}

/// Truncate a section title to the first [`MAX_TITLE_WORDS`] words.
fn normalize_title(title: &str) -> String {
    let words: Vec<&str> = title.split_whitespace().collect();
    if words.len() > MAX_TITLE_WORDS {
        let truncated = words[..MAX_TITLE_WORDS].join(" ");
        log::warn!("section title '{title}' truncated to '{truncated}'");
        truncated
    } else {
        words.join(" ")
    }
}

/// Ask the model which candidate assets matter for this poster; cap at
/// [`MAX_ASSETS_PER_KIND`] per kind in candidate order regardless of what
/// the model says. No candidates → no call.
pub fn filter_assets(
    library: &AssetLibrary,
    candidates: &[FigureAsset],
    gateway: &Gateway,
    backend_id: &str,
) -> Result<AssetLibrary> {
    let mut filtered = library.clone();
    filtered.figures.clear();
    filtered.tables.clear();
    if candidates.is_empty() {
        return Ok(filtered);
    }

    let user = serde_json::json!({
        "json_content": outline_json(library),
        "image_information": asset_info(candidates, AssetKind::Image),
        "table_information": asset_info(candidates, AssetKind::Table),
    });
    let req = ModelRequest::text(
        prompts::roles::PARSER_FILTER,
        prompts::PARSER_FILTER,
        user.to_string(),
    );
    let value = gateway.complete_json(backend_id, &req, SchemaId::ParserFilter)?;

    let kept_images = kept_ids(&value["image_information"]);
    let kept_tables = kept_ids(&value["table_information"]);
    for asset in candidates {
        let kept = match asset.kind {
            AssetKind::Image => &kept_images,
            AssetKind::Table => &kept_tables,
        };
        if !kept.contains(&asset.id) {
            continue;
        }
        let pool = match asset.kind {
            AssetKind::Image => &mut filtered.figures,
            AssetKind::Table => &mut filtered.tables,
        };
        if pool.len() < MAX_ASSETS_PER_KIND {
            pool.push(asset.clone());
        } else {
            log::warn!("filter kept more than {MAX_ASSETS_PER_KIND} {:?} assets; dropping id {}", asset.kind, asset.id);
        }
    }
    let known: Vec<u32> = candidates.iter().filter(|a| a.kind == AssetKind::Image).map(|a| a.id).collect();
    for id in kept_images.iter().filter(|id| !known.contains(id)) {
        log::warn!("filter returned unknown image id {id}; dropped");
    }
    Ok(filtered)
}

/// The outline as the prompts expect it: meta + section titles/contents.
pub fn outline_json(library: &AssetLibrary) -> Value {
    serde_json::json!({
        "meta": {
            "poster_title": library.meta.poster_title,
            "authors": library.meta.authors,
            "affiliations": library.meta.affiliations,
        },
        "sections": library.sections.iter().map(|s| {
            serde_json::json!({"title": s.title, "content": s.content})
        }).collect::<Vec<_>>(),
    })
}

/// Asset descriptions keyed by id, as the filter/matching prompts expect.
pub fn asset_info(assets: &[FigureAsset], kind: AssetKind) -> Value {
    let mut map = serde_json::Map::new();
    for asset in assets.iter().filter(|a| a.kind == kind) {
        map.insert(
            asset.id.to_string(),
            serde_json::json!({
                "caption": asset.caption,
                "width_px": asset.width_px,
                "height_px": asset.height_px,
            }),
        );
    }
    Value::Object(map)
}

/// Ids named by a filter response, tolerating both the documented dict
/// shape (keys are ids) and an array of {id} objects or bare ints.
fn kept_ids(value: &Value) -> Vec<u32> {
    let mut ids = Vec::new();
    match value {
        Value::Object(map) => {
            for key in map.keys() {
                if let Ok(id) = key.parse::<u32>() {
                    ids.push(id);
                } else {
                    log::warn!("filter returned non-numeric asset id '{key}'; dropped");
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                if let Some(id) = item.as_u64() {
                    ids.push(id as u32);
                } else if let Some(id) = item.get("id").and_then(Value::as_u64) {
                    ids.push(id as u32);
                }
            }
        }
        _ => {}
    }
    ids
}

/// Schema validator for the summarizer outline (registered in `schemas`).
pub fn validate_outline_value(value: &Value) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    match obj.get("meta") {
        Some(Value::Object(meta)) => {
            match meta.get("poster_title").and_then(Value::as_str) {
                Some(t) if !t.trim().is_empty() => {}
                _ => issues.push("meta.poster_title missing or empty".into()),
            }
        }
        _ => issues.push("missing 'meta' object".into()),
    }
    match obj.get("sections").and_then(Value::as_array) {
        Some(sections) if !sections.is_empty() => {
            for (i, section) in sections.iter().enumerate() {
                match section.get("title").and_then(Value::as_str) {
                    Some(t) if !t.trim().is_empty() => {}
                    _ => issues.push(format!("section {i} missing non-empty 'title'")),
                }
                if section.get("content").and_then(Value::as_str).is_none() {
                    issues.push(format!("section {i} missing string 'content'"));
                }
            }
            if let Some(first) = sections[0].get("title").and_then(Value::as_str) {
                if !is_title_section(first) {
                    issues.push(format!("first section '{first}' is not a poster-title section"));
                }
            }
        }
        Some(_) => issues.push("'sections' is empty".into()),
        None => issues.push("missing 'sections' array".into()),
    }
    issues
}

/// Schema validator for the filter response (registered in `schemas`).
pub fn validate_filter_value(value: &Value) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    for key in ["image_information", "table_information"] {
        match obj.get(key) {
            Some(Value::Object(_)) | Some(Value::Array(_)) => {}
            Some(_) => issues.push(format!("'{key}' is neither object nor array")),
            None => issues.push(format!("missing '{key}'")),
        }
    }
    issues
}
