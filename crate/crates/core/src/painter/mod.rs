//! Bullet composition, fit estimation, and the critique/refine loop.
//!
//! Each panel is composed once, then rendered and critiqued up to
//! `max_iters` times. Overflow shrinks the font (dropping trailing bullets
//! once the scale floor is reached); emptiness grows it up to the cap. The
//! critic is pluggable: a vision backend with two in-context reference
//! images, or the deterministic fit estimator for offline runs.

pub mod render;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use render::{
    crop_window, plan_panel, render_panel, render_title_strip, PanelPlacement, PanelRenderer,
};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest};
use crate::parser::{FigureAsset, SectionSynopsis};
use crate::planner::{Panel, Rect};
use crate::prompts;
use crate::schemas::SchemaId;

/// Average glyph advance as a fraction of font size.
pub const GLYPH_WIDTH_FACTOR: f64 = 0.52;
/// Line height as a multiple of font size.
pub const LINE_HEIGHT_FACTOR: f64 = 1.25;
/// Text filling less than this fraction of the region height reads as blank.
pub const BLANK_THRESHOLD: f64 = 0.45;
pub const FONT_SCALE_MIN: f64 = 0.5;
pub const FONT_SCALE_MAX: f64 = 1.5;
/// Overflow remedy: multiply the font scale by this.
pub const SHRINK_STEP: f64 = 0.85;
/// Blank remedy: multiply the font scale by this (capped).
pub const GROW_STEP: f64 = 1.1;
pub const DEFAULT_MAX_ITERS: usize = 4;
/// Panels at least this wide relative to their height get two textboxes.
pub const TWO_TEXTBOX_ASPECT: f64 = 1.4;

/// Reference images for the critique prompt, bundled with the crate.
pub const NEGATIVE_REFERENCE_PNG: &[u8] = include_bytes!("../../assets/references/overflow.png");
pub const POSITIVE_REFERENCE_PNG: &[u8] = include_bytes!("../../assets/references/well_fitted.png");

/// Write the bundled reference images into `dir`, returning
/// (negative, positive) paths.
pub fn materialize_references(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let negative = dir.join("overflow.png");
    let positive = dir.join("well_fitted.png");
    std::fs::write(&negative, NEGATIVE_REFERENCE_PNG)?;
    std::fs::write(&positive, POSITIVE_REFERENCE_PNG)?;
    Ok((negative, positive))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRun {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bold: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub italic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulletItem {
    pub alignment: Alignment,
    pub bullet: bool,
    pub level: u8,
    pub font_size: u32,
    pub runs: Vec<TextRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulletBlock {
    pub title: Vec<BulletItem>,
    pub textbox1: Vec<BulletItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub textbox2: Option<Vec<BulletItem>>,
}

impl BulletBlock {
    /// All bullet texts in reading order, for integrity checks.
    pub fn texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for items in [Some(&self.textbox1), self.textbox2.as_ref()].into_iter().flatten() {
            for item in items {
                out.push(item.runs.iter().map(|r| r.text.as_str()).collect::<String>());
            }
        }
        out
    }
}

/// Commenter verdict codes: 1 = overflow, 2 = too blank, 3 = good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommentVerdict {
    Overflow,
    TooBlank,
    Good,
}

impl CommentVerdict {
    pub fn code(self) -> u8 {
        match self {
            CommentVerdict::Overflow => 1,
            CommentVerdict::TooBlank => 2,
            CommentVerdict::Good => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(CommentVerdict::Overflow),
            2 => Some(CommentVerdict::TooBlank),
            3 => Some(CommentVerdict::Good),
            _ => None,
        }
    }
}

/// Outcome of one panel's refinement loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementState {
    pub panel_index: usize,
    pub iterations: usize,
    pub font_scale: f64,
    pub dropped_bullets: usize,
    pub verdicts: Vec<CommentVerdict>,
    pub accepted: bool,
}

/// Two textboxes iff the panel has no asset and is wide (w/h at least
/// [`TWO_TEXTBOX_ASPECT`]); assets occupy the second slot otherwise.
pub fn decide_textbox_count(panel: &Panel, has_asset: bool) -> usize {
    if !has_asset && panel.bbox.aspect() >= TWO_TEXTBOX_ASPECT {
        2
    } else {
        1
    }
}

/// Line-wrapping simulation classifying how block text fills `region`.
/// Title items are excluded: the heading band has its own geometry.
pub fn estimate_fit(block: &BulletBlock, region: &Rect) -> CommentVerdict {
    estimate_fit_scaled(block, region, 1.0)
}

pub fn estimate_fit_scaled(block: &BulletBlock, region: &Rect, font_scale: f64) -> CommentVerdict {
    let boxes: Vec<&[BulletItem]> = match &block.textbox2 {
        Some(t2) => vec![&block.textbox1, t2.as_slice()],
        None => vec![&block.textbox1],
    };
    let box_w = if boxes.len() == 2 {
        (region.w - render::TEXTBOX_GUTTER_FRACTION * region.w) / 2.0
    } else {
        region.w
    };
    let needed = boxes
        .iter()
        .map(|items| {
            items
                .iter()
                .map(|item| {
                    let fs = item.font_size as f64 * font_scale;
                    let chars: usize = item.runs.iter().map(|r| r.text.chars().count()).sum();
                    let lines = (chars as f64 * GLYPH_WIDTH_FACTOR * fs / box_w).ceil().max(1.0);
                    lines * LINE_HEIGHT_FACTOR * fs
                })
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    if needed > region.h {
        CommentVerdict::Overflow
    } else if needed < BLANK_THRESHOLD * region.h {
        CommentVerdict::TooBlank
    } else {
        CommentVerdict::Good
    }
}

/// Ask the text backend for this section's bullet block. A textbox2 in a
/// one-textbox request is dropped locally (the render geometry already
/// committed to one box).
pub fn compose_bullets(
    section: &SectionSynopsis,
    n_textboxes: usize,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<BulletBlock> {
    if !(1..=2).contains(&n_textboxes) {
        return Err(Error::Contract(format!("n_textboxes must be 1 or 2, got {n_textboxes}")));
    }
    let user = serde_json::json!({
        "summary_of_section": {"title": section.title, "content": section.content},
        "number_of_textboxes": n_textboxes,
    });
    let req = ModelRequest::text(prompts::roles::PAINTER_COMPOSE, prompts::PAINTER, user.to_string());
    let value = gateway.complete_json(backend_id, &req, SchemaId::PainterBlock)?;
    let mut block: BulletBlock = serde_json::from_value(value)
        .map_err(|e| Error::Contract(format!("validated block failed to decode: {e}")))?;
    if n_textboxes == 1 && block.textbox2.is_some() {
        log::warn!("model returned textbox2 for a one-textbox panel; dropped");
        block.textbox2 = None;
    }
    if n_textboxes == 2 && block.textbox2.is_none() {
        log::warn!("model returned one textbox for a two-textbox panel; rendering one");
    }
    Ok(block)
}

fn parse_verdict(text: &str) -> Option<CommentVerdict> {
    match text.trim() {
        "1" => Some(CommentVerdict::Overflow),
        "2" => Some(CommentVerdict::TooBlank),
        "3" => Some(CommentVerdict::Good),
        _ => None,
    }
}

const CRITIQUE_USER_PROMPT: &str = "The first image is a reference panel with overflowing text \
(verdict 1). The second image is a reference panel whose text fits well (verdict 3). Evaluate \
the third image: reply 1 if text overflows the marked textbox, 2 if the textbox is left too \
blank, or 3 if it fits well. Reply with exactly one character.";

/// Send the crop plus both reference images to the vision backend. Strict
/// "1"/"2"/"3" parse; one reprompt on anything else; then Overflow.
pub fn critique_panel(
    crop: &Path,
    negative_ref: &Path,
    positive_ref: &Path,
    gateway: &Gateway,
    backend_id: &str,
) -> Result<CommentVerdict> {
    for (name, path) in [("negative", negative_ref), ("positive", positive_ref)] {
        if !path.exists() {
            return Err(Error::Contract(format!(
                "{name} reference image missing: {}",
                path.display()
            )));
        }
    }
    let images = vec![negative_ref.to_path_buf(), positive_ref.to_path_buf(), crop.to_path_buf()];
    let req = ModelRequest::vision(
        prompts::roles::COMMENTER_CRITIQUE,
        prompts::COMMENTER,
        CRITIQUE_USER_PROMPT.to_string(),
        images.clone(),
    );
    let first = gateway.complete(backend_id, &req)?;
    if let Some(verdict) = parse_verdict(&first.text) {
        return Ok(verdict);
    }
    log::warn!("commenter reply {:?} not in {{1,2,3}}; reprompting once", first.text.trim());
    let retry = ModelRequest::vision(
        prompts::roles::COMMENTER_CRITIQUE,
        prompts::COMMENTER,
        format!(
            "{CRITIQUE_USER_PROMPT}\nYour previous reply {:?} was invalid. Reply with exactly one \
             character: 1, 2, or 3.",
            first.text.trim()
        ),
        images,
    );
    let second = gateway.complete(backend_id, &retry)?;
    Ok(parse_verdict(&second.text).unwrap_or_else(|| {
        log::warn!("commenter reply {:?} still invalid; defaulting to overflow", second.text.trim());
        CommentVerdict::Overflow
    }))
}

/// Everything a critic sees about the panel under review.
pub struct CritiqueContext<'a> {
    pub crop_path: &'a Path,
    pub block: &'a BulletBlock,
    pub text_region: Rect,
    pub font_scale: f64,
}

pub trait PanelCritic: Sync {
    fn critique(&self, ctx: &CritiqueContext<'_>) -> Result<CommentVerdict>;
}

/// Offline critic: the fit estimator on the exact render geometry.
pub struct HeuristicCritic;

impl PanelCritic for HeuristicCritic {
    fn critique(&self, ctx: &CritiqueContext<'_>) -> Result<CommentVerdict> {
        Ok(estimate_fit_scaled(ctx.block, &ctx.text_region, ctx.font_scale))
    }
}

/// Vision-backend critic with the two bundled reference images.
pub struct ModelCritic<'a> {
    pub gateway: &'a Gateway,
    pub backend_id: String,
    pub negative_ref: PathBuf,
    pub positive_ref: PathBuf,
}

impl PanelCritic for ModelCritic<'_> {
    fn critique(&self, ctx: &CritiqueContext<'_>) -> Result<CommentVerdict> {
        critique_panel(ctx.crop_path, &self.negative_ref, &self.positive_ref, self.gateway, &self.backend_id)
    }
}

/// Drop the deepest-level trailing bullet from each textbox that still has
/// more than one item. Returns how many bullets were dropped.
fn drop_trailing_bullets(block: &mut BulletBlock) -> usize {
    let mut dropped = 0;
    let mut boxes: Vec<&mut Vec<BulletItem>> = vec![&mut block.textbox1];
    if let Some(t2) = block.textbox2.as_mut() {
        boxes.push(t2);
    }
    for items in boxes {
        if items.len() > 1 {
            let max_level = items.iter().map(|i| i.level).max().unwrap();
            let idx = items.iter().rposition(|i| i.level == max_level).unwrap();
            items.remove(idx);
            dropped += 1;
        }
    }
    dropped
}

fn apply_overflow_remedy(block: &mut BulletBlock, state: &mut RefinementState) {
    let next = state.font_scale * SHRINK_STEP;
    if next >= FONT_SCALE_MIN {
        state.font_scale = next;
        return;
    }
    // Scale floor reached: remove content instead of shrinking further.
    let dropped = drop_trailing_bullets(block);
    if dropped == 0 {
        state.font_scale = FONT_SCALE_MIN;
    } else {
        state.dropped_bullets += dropped;
    }
}

pub struct RefineInputs<'a> {
    pub panel_index: usize,
    pub panel: &'a Panel,
    pub section: &'a SectionSynopsis,
    pub asset: Option<&'a FigureAsset>,
    pub max_iters: usize,
}

/// Compose, then loop render/critique/remedy until the critic accepts or
/// the iteration budget runs out. Persists `block.json`, `state.json`, and
/// `iter<k>.png` under `panel_dir`.
pub fn refine_panel(
    inputs: &RefineInputs<'_>,
    gateway: &Gateway,
    compose_backend: &str,
    critic: &dyn PanelCritic,
    renderer: &PanelRenderer<'_>,
    panel_dir: &Path,
) -> Result<(BulletBlock, RefinementState)> {
    let index = inputs.panel_index;
    let run = || -> Result<(BulletBlock, RefinementState)> {
        std::fs::create_dir_all(panel_dir)?;
        let n_boxes = decide_textbox_count(inputs.panel, inputs.asset.is_some());
        let mut block = compose_bullets(inputs.section, n_boxes, gateway, compose_backend)?;
        let mut state = RefinementState {
            panel_index: index,
            iterations: 0,
            font_scale: 1.0,
            dropped_bullets: 0,
            verdicts: Vec::new(),
            accepted: false,
        };
        let placement = plan_panel(
            &inputs.panel.bbox,
            block.textbox2.is_some(),
            inputs.asset.map(|a| (a.width_px, a.height_px)),
        );
        for k in 1..=inputs.max_iters.max(1) {
            let crop_path = panel_dir.join(format!("iter{k}.png"));
            renderer.render_crop(
                inputs.panel,
                &placement,
                &block,
                state.font_scale,
                inputs.asset,
                &crop_path,
            )?;
            let ctx = CritiqueContext {
                crop_path: &crop_path,
                block: &block,
                text_region: placement.text_region,
                font_scale: state.font_scale,
            };
            let verdict = critic.critique(&ctx)?;
            state.iterations = k;
            state.verdicts.push(verdict);
            if verdict == CommentVerdict::Good {
                state.accepted = true;
                break;
            }
            if k == inputs.max_iters {
                break;
            }
            match verdict {
                CommentVerdict::Overflow => apply_overflow_remedy(&mut block, &mut state),
                CommentVerdict::TooBlank => {
                    state.font_scale = (state.font_scale * GROW_STEP).min(FONT_SCALE_MAX);
                }
                CommentVerdict::Good => unreachable!("good breaks above"),
            }
        }
        save_panel_artifacts(panel_dir, &block, &state)?;
        Ok((block, state))
    };
    run().map_err(|e| e.at_panel(index))
}

pub fn save_panel_artifacts(dir: &Path, block: &BulletBlock, state: &RefinementState) -> Result<()> {
    std::fs::write(dir.join("block.json"), serde_json::to_string_pretty(block).expect("block serializes"))?;
    std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(state).expect("state serializes"))?;
    Ok(())
}

pub fn load_panel_artifacts(dir: &Path) -> Result<(BulletBlock, RefinementState)> {
    let block_raw = std::fs::read_to_string(dir.join("block.json"))?;
    let block_value: Value = serde_json::from_str(&block_raw)
        .map_err(|e| Error::validation("painter.block", vec![e.to_string()]))?;
    let issues = validate_block_value(&block_value);
    if !issues.is_empty() {
        return Err(Error::validation("painter.block", issues));
    }
    let block: BulletBlock = serde_json::from_value(block_value)
        .map_err(|e| Error::validation("painter.block", vec![e.to_string()]))?;
    let state_raw = std::fs::read_to_string(dir.join("state.json"))?;
    let state: RefinementState = serde_json::from_str(&state_raw)
        .map_err(|e| Error::validation("painter.state", vec![e.to_string()]))?;
    Ok((block, state))
}

fn check_item(where_: &str, value: &Value, issues: &mut Vec<String>) {
    let Some(obj) = value.as_object() else {
        issues.push(format!("{where_} is not an object"));
        return;
    };
    match obj.get("alignment").and_then(Value::as_str) {
        Some("left" | "center" | "right") => {}
        Some(other) => issues.push(format!("{where_} alignment '{other}' not one of left|center|right")),
        None => issues.push(format!("{where_} missing string 'alignment'")),
    }
    if obj.get("bullet").and_then(Value::as_bool).is_none() {
        issues.push(format!("{where_} missing boolean 'bullet'"));
    }
    match obj.get("level").and_then(Value::as_u64) {
        Some(level) if level <= 3 => {}
        Some(level) => issues.push(format!("{where_} level {level} exceeds 3")),
        None => issues.push(format!("{where_} missing integer 'level'")),
    }
    match obj.get("font_size").and_then(Value::as_u64) {
        Some(size) if size >= 1 => {}
        Some(_) => issues.push(format!("{where_} font_size must be positive")),
        None => issues.push(format!("{where_} missing positive integer 'font_size'")),
    }
    match obj.get("runs").and_then(Value::as_array) {
        Some(runs) if !runs.is_empty() => {
            for (i, run) in runs.iter().enumerate() {
                match run.get("text").and_then(Value::as_str) {
                    Some(t) if !t.is_empty() => {}
                    _ => issues.push(format!("{where_} run {i} missing non-empty 'text'")),
                }
                for flag in ["bold", "italic"] {
                    if let Some(v) = run.get(flag) {
                        if !v.is_boolean() {
                            issues.push(format!("{where_} run {i} '{flag}' is not a boolean"));
                        }
                    }
                }
            }
        }
        Some(_) => issues.push(format!("{where_} has empty 'runs'")),
        None => issues.push(format!("{where_} missing 'runs' array")),
    }
}

/// Schema validator for composed bullet blocks (registered in `schemas`).
pub fn validate_block_value(value: &Value) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    for key in ["title", "textbox1"] {
        match obj.get(key).and_then(Value::as_array) {
            Some(items) if !items.is_empty() => {
                for (i, item) in items.iter().enumerate() {
                    check_item(&format!("{key}[{i}]"), item, &mut issues);
                }
            }
            Some(_) => issues.push(format!("'{key}' is empty")),
            None => issues.push(format!("missing '{key}' array")),
        }
    }
    match obj.get("textbox2") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                check_item(&format!("textbox2[{i}]"), item, &mut issues);
            }
            if let Some(t1) = obj.get("textbox1").and_then(Value::as_array) {
                if t1.len() != items.len() {
                    issues.push(format!(
                        "unequal textbox lengths: textbox1 has {} items but textbox2 has {}",
                        t1.len(),
                        items.len()
                    ));
                }
            }
        }
        Some(_) => issues.push("'textbox2' is not an array".into()),
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendDescriptor, Endpoint, Modality};
    use crate::planner::PosterGeometry;
    use proptest::prelude::*;

    fn item(text: &str, font_size: u32, level: u8) -> BulletItem {
        BulletItem {
            alignment: Alignment::Left,
            bullet: true,
            level,
            font_size,
            runs: vec![TextRun { text: text.into(), bold: None, italic: None }],
        }
    }

    fn simple_block(texts: &[&str], font_size: u32) -> BulletBlock {
        BulletBlock {
            title: vec![item("Heading", font_size + 6, 0)],
            textbox1: texts.iter().map(|t| item(t, font_size, 0)).collect(),
            textbox2: None,
        }
    }

    fn mock_gateway(dir: &Path, fixtures: serde_json::Value) -> Gateway {
        let text_path = dir.join("fx_text.json");
        std::fs::write(&text_path, fixtures.to_string()).unwrap();
        let vision_path = dir.join("fx_vision.json");
        if !vision_path.exists() {
            std::fs::write(&vision_path, "{}").unwrap();
        }
        Gateway::new(vec![
            BackendDescriptor {
                id: "text".into(),
                modality: Modality::Text,
                endpoint: Endpoint::Mock { fixtures: text_path },
                price_in: 0.0,
                price_out: 0.0,
                max_retries: 0,
                max_in_flight: None,
                vision_tokens_per_image: 765,
            },
            BackendDescriptor {
                id: "vision".into(),
                modality: Modality::Vision,
                endpoint: Endpoint::Mock { fixtures: vision_path },
                price_in: 0.0,
                price_out: 0.0,
                max_retries: 0,
                max_in_flight: None,
                vision_tokens_per_image: 765,
            },
        ])
        .unwrap()
    }

    fn vision_gateway(dir: &Path, replies: serde_json::Value) -> Gateway {
        let vision_path = dir.join("fx_vision.json");
        std::fs::write(&vision_path, serde_json::json!({"commenter.critique": replies}).to_string())
            .unwrap();
        let text_path = dir.join("fx_text.json");
        std::fs::write(&text_path, "{}").unwrap();
        mock_gateway_paths(text_path, vision_path)
    }

    fn mock_gateway_paths(text: PathBuf, vision: PathBuf) -> Gateway {
        Gateway::new(vec![
            BackendDescriptor {
                id: "text".into(),
                modality: Modality::Text,
                endpoint: Endpoint::Mock { fixtures: text },
                price_in: 0.0,
                price_out: 0.0,
                max_retries: 0,
                max_in_flight: None,
                vision_tokens_per_image: 765,
            },
            BackendDescriptor {
                id: "vision".into(),
                modality: Modality::Vision,
                endpoint: Endpoint::Mock { fixtures: vision },
                price_in: 0.0,
                price_out: 0.0,
                max_retries: 0,
                max_in_flight: None,
                vision_tokens_per_image: 765,
            },
        ])
        .unwrap()
    }

    fn block_json(n_bullets: usize) -> serde_json::Value {
        let bullets: Vec<_> = (0..n_bullets)
            .map(|i| {
                serde_json::json!({
                    "alignment": "left", "bullet": true, "level": 0, "font_size": 20,
                    "runs": [{"text": format!("point {i}")}]
                })
            })
            .collect();
        serde_json::json!({
            "title": [{"alignment": "left", "bullet": false, "level": 0, "font_size": 28,
                       "runs": [{"text": "Heading", "bold": true}]}],
            "textbox1": bullets,
        })
    }

    fn section() -> SectionSynopsis {
        SectionSynopsis { title: "Method".into(), content: "How the system works.".into() }
    }

    fn panel(w: f64, h: f64) -> Panel {
        Panel { section_index: 0, bbox: Rect { x: 0.0, y: 0.0, w, h } }
    }

    #[test]
    fn textbox_count_rules() {
        assert_eq!(decide_textbox_count(&panel(800.0, 400.0), true), 1);
        assert_eq!(decide_textbox_count(&panel(800.0, 400.0), false), 2);
        assert_eq!(decide_textbox_count(&panel(400.0, 400.0), false), 1);
        assert_eq!(decide_textbox_count(&panel(560.0, 400.0), false), 2);
    }

    #[test]
    fn empty_textboxes_are_too_blank() {
        let block = BulletBlock {
            title: vec![item("Heading", 30, 0)],
            textbox1: vec![],
            textbox2: None,
        };
        let region = Rect { x: 0.0, y: 0.0, w: 500.0, h: 500.0 };
        assert_eq!(estimate_fit(&block, &region), CommentVerdict::TooBlank);
    }

    #[test]
    fn tiny_text_in_huge_region_is_too_blank() {
        let block = simple_block(&["x"], 10);
        let region = Rect { x: 0.0, y: 0.0, w: 1000.0, h: 1000.0 };
        assert_eq!(estimate_fit(&block, &region), CommentVerdict::TooBlank);
    }

    #[test]
    fn fit_matches_hand_computation() {
        // 60 chars at font 20: line width 60*0.52*20 = 624 over a 300-wide
        // box is 3 lines; 80 chars is 832 -> 3 lines. Height 6*25 = 150,
        // region 200: between 90 (blank threshold) and 200, so Good.
        let block = simple_block(&[&"a".repeat(60), &"b".repeat(80)], 20);
        let region = Rect { x: 0.0, y: 0.0, w: 300.0, h: 200.0 };
        assert_eq!(estimate_fit(&block, &region), CommentVerdict::Good);
        // Squeeze the region: 150 > 140, overflow.
        let tight = Rect { x: 0.0, y: 0.0, w: 300.0, h: 140.0 };
        assert_eq!(estimate_fit(&block, &tight), CommentVerdict::Overflow);
    }

    #[test]
    fn scaled_fit_shrinks_needed_height() {
        // 250 chars at font 20 need ceil(250*0.52*20/300) = 9 lines, i.e.
        // 225 > 200: overflow. At scale 0.7 (font 14) they need 7 lines,
        // i.e. 122.5: inside the band.
        let block = simple_block(&[&"a".repeat(250)], 20);
        let region = Rect { x: 0.0, y: 0.0, w: 300.0, h: 200.0 };
        assert_eq!(estimate_fit(&block, &region), CommentVerdict::Overflow);
        assert_ne!(estimate_fit_scaled(&block, &region, 0.7), CommentVerdict::Overflow);
    }

    proptest! {
        #[test]
        fn adding_characters_never_relaxes_the_verdict(
            base_len in 1usize..120,
            extra in 1usize..200,
            font in 12u32..40,
            w in 150.0f64..900.0,
            h in 80.0f64..900.0,
        ) {
            let region = Rect { x: 0.0, y: 0.0, w, h };
            let before = estimate_fit(&simple_block(&[&"x".repeat(base_len)], font), &region);
            let after = estimate_fit(&simple_block(&[&"x".repeat(base_len + extra)], font), &region);
            // Rank TooBlank < Good < Overflow must not decrease.
            let rank = |v: CommentVerdict| match v {
                CommentVerdict::TooBlank => 0,
                CommentVerdict::Good => 1,
                CommentVerdict::Overflow => 2,
            };
            prop_assert!(rank(after) >= rank(before));
        }
    }

    #[test]
    fn compose_accepts_a_valid_block() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": block_json(3).to_string()}),
        );
        let block = compose_bullets(&section(), 1, &gw, "text").unwrap();
        assert_eq!(block.textbox1.len(), 3);
        assert!(block.textbox2.is_none());
    }

    #[test]
    fn compose_rejects_mismatched_textbox_lengths() {
        let mut bad = block_json(3);
        bad["textbox2"] = serde_json::json!([
            {"alignment": "left", "bullet": true, "level": 0, "font_size": 20, "runs": [{"text": "a"}]},
            {"alignment": "left", "bullet": true, "level": 0, "font_size": 20, "runs": [{"text": "b"}]}
        ]);
        let dir = tempfile::tempdir().unwrap();
        // Same invalid payload twice: the repair reprompt must also fail.
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": [bad.to_string(), bad.to_string()]}),
        );
        let err = compose_bullets(&section(), 2, &gw, "text").unwrap_err();
        assert!(err.to_string().contains("unequal textbox lengths"), "{err}");
    }

    #[test]
    fn compose_rejects_zero_font_size() {
        let mut bad = block_json(2);
        bad["textbox1"][0]["font_size"] = serde_json::json!(0);
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": [bad.to_string(), bad.to_string()]}),
        );
        let err = compose_bullets(&section(), 1, &gw, "text").unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn compose_drops_unrequested_textbox2() {
        let mut two = block_json(2);
        two["textbox2"] = two["textbox1"].clone();
        let dir = tempfile::tempdir().unwrap();
        let gw =
            mock_gateway(dir.path(), serde_json::json!({"painter.compose": two.to_string()}));
        let block = compose_bullets(&section(), 1, &gw, "text").unwrap();
        assert!(block.textbox2.is_none());
    }

    fn crop_png(dir: &Path) -> PathBuf {
        let p = dir.join("crop.png");
        image::RgbImage::from_pixel(10, 10, image::Rgb([255, 255, 255])).save(&p).unwrap();
        p
    }

    #[test]
    fn critique_maps_codes_directly() {
        let dir = tempfile::tempdir().unwrap();
        let gw = vision_gateway(dir.path(), serde_json::json!("3"));
        let (neg, pos) = materialize_references(&dir.path().join("refs")).unwrap();
        let crop = crop_png(dir.path());
        let verdict = critique_panel(&crop, &neg, &pos, &gw, "vision").unwrap();
        assert_eq!(verdict, CommentVerdict::Good);
        assert_eq!(gw.call_count(), 1);
    }

    #[test]
    fn critique_reprompts_once_on_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let gw = vision_gateway(dir.path(), serde_json::json!(["banana", "2"]));
        let (neg, pos) = materialize_references(&dir.path().join("refs")).unwrap();
        let crop = crop_png(dir.path());
        let verdict = critique_panel(&crop, &neg, &pos, &gw, "vision").unwrap();
        assert_eq!(verdict, CommentVerdict::TooBlank);
        assert_eq!(gw.call_count(), 2);
    }

    #[test]
    fn critique_defaults_to_overflow_after_two_failures() {
        let dir = tempfile::tempdir().unwrap();
        let gw = vision_gateway(dir.path(), serde_json::json!(["nope", "still nope"]));
        let (neg, pos) = materialize_references(&dir.path().join("refs")).unwrap();
        let crop = crop_png(dir.path());
        let verdict = critique_panel(&crop, &neg, &pos, &gw, "vision").unwrap();
        assert_eq!(verdict, CommentVerdict::Overflow);
    }

    #[test]
    fn critique_requires_reference_images() {
        let dir = tempfile::tempdir().unwrap();
        let gw = vision_gateway(dir.path(), serde_json::json!("3"));
        let crop = crop_png(dir.path());
        let err = critique_panel(&crop, &dir.path().join("missing.png"), &crop, &gw, "vision")
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    /// Scripted critic fed from a verdict list; sticky on the last entry.
    struct ScriptedCritic {
        verdicts: Vec<CommentVerdict>,
        cursor: std::sync::Mutex<usize>,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl ScriptedCritic {
        fn new(verdicts: &[CommentVerdict]) -> Self {
            ScriptedCritic {
                verdicts: verdicts.to_vec(),
                cursor: std::sync::Mutex::new(0),
                calls: std::sync::atomic::AtomicUsize::new(0),
            }
        }
    }

    impl PanelCritic for ScriptedCritic {
        fn critique(&self, _ctx: &CritiqueContext<'_>) -> Result<CommentVerdict> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let mut cursor = self.cursor.lock().unwrap();
            let verdict = self.verdicts[(*cursor).min(self.verdicts.len() - 1)];
            *cursor += 1;
            Ok(verdict)
        }
    }

    fn refine_with(
        verdicts: &[CommentVerdict],
        max_iters: usize,
        n_bullets: usize,
    ) -> (BulletBlock, RefinementState, usize) {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": block_json(n_bullets).to_string()}),
        );
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let renderer = PanelRenderer { geometry: &geometry, render_command: None };
        let critic = ScriptedCritic::new(verdicts);
        let p = panel(600.0, 500.0);
        let inputs = RefineInputs {
            panel_index: 0,
            panel: &p,
            section: &section(),
            asset: None,
            max_iters,
        };
        let (block, state) =
            refine_panel(&inputs, &gw, "text", &critic, &renderer, &dir.path().join("p0")).unwrap();
        let calls = critic.calls.load(std::sync::atomic::Ordering::SeqCst);
        (block, state, calls)
    }

    #[test]
    fn immediate_good_accepts_without_changes() {
        let (_, state, calls) = refine_with(&[CommentVerdict::Good], 4, 3);
        assert_eq!(state.iterations, 1);
        assert_eq!(calls, 1);
        assert_eq!(state.font_scale, 1.0);
        assert_eq!(state.dropped_bullets, 0);
        assert!(state.accepted);
    }

    #[test]
    fn overflow_then_good_shrinks_once() {
        let (_, state, calls) =
            refine_with(&[CommentVerdict::Overflow, CommentVerdict::Good], 4, 3);
        assert_eq!(state.iterations, 2);
        assert_eq!(calls, 2);
        assert!((state.font_scale - 0.85).abs() < 1e-12);
        assert!(state.accepted);
    }

    #[test]
    fn persistent_overflow_stops_at_max_iters() {
        let (_, state, calls) = refine_with(&[CommentVerdict::Overflow], 4, 3);
        assert_eq!(state.iterations, 4);
        assert_eq!(calls, 4, "exactly max_iters critique calls");
        assert!((state.font_scale - 0.85f64.powi(3)).abs() < 1e-12, "{}", state.font_scale);
        assert!(!state.accepted);
        assert_eq!(state.dropped_bullets, 0);
    }

    #[test]
    fn scale_floor_switches_to_bullet_drops() {
        let (block, state, _) = refine_with(&[CommentVerdict::Overflow], 8, 3);
        // Scales: 1.0 .85 .7225 .614125 .52200625; the next shrink would
        // cross 0.5, so two drops follow, then the floor pins the scale.
        assert_eq!(state.iterations, 8);
        assert_eq!(state.dropped_bullets, 2);
        assert_eq!(block.textbox1.len(), 1);
        assert_eq!(state.font_scale, FONT_SCALE_MIN);
    }

    #[test]
    fn too_blank_grows_capped() {
        let (_, state, _) = refine_with(&[CommentVerdict::TooBlank], 8, 3);
        assert!((state.font_scale - FONT_SCALE_MAX).abs() < 1e-9);
        assert!(state.font_scale <= FONT_SCALE_MAX + 1e-12);
    }

    #[test]
    fn surviving_bullets_keep_their_text_verbatim() {
        let (block, _, _) = refine_with(&[CommentVerdict::Overflow], 8, 4);
        let original: Vec<String> = (0..4).map(|i| format!("point {i}")).collect();
        for text in block.texts() {
            assert!(original.contains(&text), "modified bullet text: {text}");
        }
    }

    #[test]
    fn refine_writes_artifacts_and_crops() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": block_json(2).to_string()}),
        );
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let renderer = PanelRenderer { geometry: &geometry, render_command: None };
        let critic = ScriptedCritic::new(&[CommentVerdict::Overflow, CommentVerdict::Good]);
        let p = panel(600.0, 500.0);
        let inputs =
            RefineInputs { panel_index: 3, panel: &p, section: &section(), asset: None, max_iters: 4 };
        let panel_dir = dir.path().join("p3");
        let (block, state) = refine_panel(&inputs, &gw, "text", &critic, &renderer, &panel_dir).unwrap();
        assert!(panel_dir.join("iter1.png").exists());
        assert!(panel_dir.join("iter2.png").exists());
        assert!(!panel_dir.join("iter3.png").exists());
        let (loaded_block, loaded_state) = load_panel_artifacts(&panel_dir).unwrap();
        assert_eq!(loaded_block, block);
        assert_eq!(loaded_state, state);
        assert_eq!(loaded_state.panel_index, 3);
    }

    #[test]
    fn compose_error_carries_the_panel_index() {
        let dir = tempfile::tempdir().unwrap();
        let gw = mock_gateway(
            dir.path(),
            serde_json::json!({"painter.compose": ["not json at all", "still not json"]}),
        );
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let renderer = PanelRenderer { geometry: &geometry, render_command: None };
        let critic = ScriptedCritic::new(&[CommentVerdict::Good]);
        let p = panel(600.0, 500.0);
        let inputs =
            RefineInputs { panel_index: 5, panel: &p, section: &section(), asset: None, max_iters: 4 };
        let err =
            refine_panel(&inputs, &gw, "text", &critic, &renderer, &dir.path().join("p5")).unwrap_err();
        assert!(err.to_string().starts_with("panel 5:"), "{err}");
    }

    #[test]
    fn block_validator_flags_each_field() {
        assert!(validate_block_value(&block_json(2)).is_empty());
        let mut no_title = block_json(2);
        no_title.as_object_mut().unwrap().remove("title");
        assert!(!validate_block_value(&no_title).is_empty());
        let mut bad_align = block_json(2);
        bad_align["textbox1"][0]["alignment"] = serde_json::json!("justified");
        assert!(!validate_block_value(&bad_align).is_empty());
        let mut deep = block_json(2);
        deep["textbox1"][0]["level"] = serde_json::json!(7);
        assert!(!validate_block_value(&deep).is_empty());
        let mut empty_runs = block_json(2);
        empty_runs["textbox1"][0]["runs"] = serde_json::json!([]);
        assert!(!validate_block_value(&empty_runs).is_empty());
    }

    #[test]
    fn verdict_codes_round_trip() {
        for verdict in [CommentVerdict::Overflow, CommentVerdict::TooBlank, CommentVerdict::Good] {
            assert_eq!(CommentVerdict::from_code(verdict.code()), Some(verdict));
        }
        assert_eq!(CommentVerdict::from_code(0), None);
        assert_eq!(CommentVerdict::from_code(4), None);
    }
}
