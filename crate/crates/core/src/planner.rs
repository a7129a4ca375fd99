//! Layout planning: asset-to-section matching, content weights, and the
//! binary-tree panel layout.
//!
//! The layout strategy partitions body sections into contiguous column
//! groups (left to right), stacks each group's sections top to bottom, and
//! realizes the result as a binary split tree. Column widths are
//! proportional to group weight sums and row heights to section weights, so
//! every leaf's area share equals its weight share and column-major
//! traversal of the leaves reproduces section order by construction. The
//! column count and group boundaries are chosen by exhaustive search over
//! contiguous partitions, minimizing total aspect-band violation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, ModelRequest};
use crate::parser::{asset_info, outline_json, AssetKind, AssetLibrary};
use crate::prompts;
use crate::schemas::SchemaId;

/// Default word-equivalents contributed by an asset of exactly mean area.
pub const DEFAULT_ASSET_WEIGHT_SCALE: f64 = 50.0;
/// Weight floor for degenerate (empty) sections.
pub const WEIGHT_FLOOR: f64 = 1.0;
/// Default fraction of poster height reserved for the title strip.
pub const DEFAULT_TITLE_STRIP_FRACTION: f64 = 0.12;
/// Target panel aspect-ratio band (w/h); violations are minimized, not forbidden.
pub const DEFAULT_ASPECT_MIN: f64 = 0.4;
pub const DEFAULT_ASPECT_MAX: f64 = 2.5;
/// Most columns the partition search will consider.
pub const DEFAULT_MAX_COLUMNS: usize = 6;
/// Declared tolerance on |leaf area share − weight share|.
pub const PROPORTIONALITY_TOLERANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosterGeometry {
    pub width_px: u32,
    pub height_px: u32,
    pub title_strip_fraction: f64,
}

impl PosterGeometry {
    pub fn new(width_px: u32, height_px: u32, title_strip_fraction: f64) -> Result<Self> {
        let g = PosterGeometry { width_px, height_px, title_strip_fraction };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Config("poster dimensions must be positive".into()));
        }
        if !(self.title_strip_fraction > 0.0 && self.title_strip_fraction < 0.3) {
            return Err(Error::Config(format!(
                "title_strip_fraction {} outside (0, 0.3)",
                self.title_strip_fraction
            )));
        }
        Ok(())
    }
}

/// Tunables for the partition search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub max_columns: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            aspect_min: DEFAULT_ASPECT_MIN,
            aspect_max: DEFAULT_ASPECT_MAX,
            max_columns: DEFAULT_MAX_COLUMNS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }
}

/// One asset assignment; section indices are 0-based over body sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub kind: AssetKind,
    pub asset_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssetMatch {
    pub by_section: BTreeMap<usize, MatchEntry>,
}

impl AssetMatch {
    pub fn get(&self, body_index: usize) -> Option<&MatchEntry> {
        self.by_section.get(&body_index)
    }

    pub fn len(&self) -> usize {
        self.by_section.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_section.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("matches serialize"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        serde_json::from_str(&data).map_err(|e| Error::validation("matches.json", vec![e.to_string()]))
    }
}

/// Per-section layout demand; `weight` is the resolved value used by the
/// splitter (word count plus scaled asset area demand, floored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentWeight {
    pub section_index: usize,
    pub words: usize,
    pub figure_area_demand: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAxis {
    /// Vertical cut line: children sit side by side.
    Vertical,
    /// Horizontal cut line: children stack top to bottom.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayoutNode {
    Leaf { section_index: usize },
    Split { axis: SplitAxis, ratio: f64, left: Box<LayoutNode>, right: Box<LayoutNode> },
}

impl LayoutNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            LayoutNode::Leaf { .. } => 1,
            LayoutNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn check_ratios(&self, issues: &mut Vec<String>) {
        if let LayoutNode::Split { ratio, left, right, .. } = self {
            if !(*ratio > 0.0 && *ratio < 1.0) {
                issues.push(format!("split ratio {ratio} outside (0,1)"));
            }
            left.check_ratios(issues);
            right.check_ratios(issues);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub section_index: usize,
    pub bbox: Rect,
}

/// The full layout artifact: the contract between planner and painter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub geometry: PosterGeometry,
    pub title: Rect,
    pub tree: LayoutNode,
    pub panels: Vec<Panel>,
    pub weights: Vec<ContentWeight>,
    pub matches: AssetMatch,
}

impl Layout {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("layout serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        let layout: Layout = serde_json::from_str(&data)
            .map_err(|e| Error::validation("layout.json", vec![e.to_string()]))?;
        layout.check()?;
        Ok(layout)
    }

    pub fn check(&self) -> Result<()> {
        let mut issues = Vec::new();
        self.geometry.check().err().into_iter().for_each(|e| issues.push(e.to_string()));
        let (cw, ch) = (self.geometry.width_px as f64, self.geometry.height_px as f64);
        let eps = 1e-6 * cw.max(ch);
        for panel in &self.panels {
            let b = &panel.bbox;
            if b.w <= 0.0 || b.h <= 0.0 {
                issues.push(format!("panel {} has non-positive extent", panel.section_index));
            }
            if b.x < -eps || b.y < -eps || b.x + b.w > cw + eps || b.y + b.h > ch + eps {
                issues.push(format!("panel {} escapes the canvas", panel.section_index));
            }
        }
        let mut indices: Vec<usize> = self.panels.iter().map(|p| p.section_index).collect();
        indices.sort_unstable();
        if indices != (0..self.panels.len()).collect::<Vec<_>>() {
            issues.push("panel section indices are not 0..n".into());
        }
        if self.tree.leaf_count() != self.panels.len() {
            issues.push("tree leaves do not biject with panels".into());
        }
        self.tree.check_ratios(&mut issues);
        if reading_order(&self.panels) != (0..self.panels.len()).collect::<Vec<_>>() {
            issues.push("reading order is not the identity".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("layout.json", issues))
        }
    }
}

/// Ask the text backend to assign each filtered asset to at most one body
/// section. Duplicate assignments keep the first section in section order;
/// unknown ids and unknown section titles are dropped with a warning.
pub fn match_assets(library: &AssetLibrary, gateway: &Gateway, backend_id: &str) -> Result<AssetMatch> {
    if library.figures.is_empty() && library.tables.is_empty() {
        return Ok(AssetMatch::default());
    }
    let all_assets: Vec<_> = library.figures.iter().chain(&library.tables).cloned().collect();
    let user = serde_json::json!({
        "json_content": outline_json(library),
        "image_information": asset_info(&all_assets, AssetKind::Image),
        "table_information": asset_info(&all_assets, AssetKind::Table),
    });
    let req = ModelRequest::text(prompts::roles::PLANNER_MATCH, prompts::PLANNER_MATCHING, user.to_string());
    let value = gateway.complete_json(backend_id, &req, SchemaId::PlannerMatch)?;
    let obj = value.as_object().expect("validated as object");

    let mut matches = AssetMatch::default();
    let mut used: Vec<(AssetKind, u32)> = Vec::new();
    for (body_index, section) in library.body_sections().iter().enumerate() {
        let Some(entry) = obj.get(&section.title) else { continue };
        let (kind, id) = if let Some(id) = entry.get("image").and_then(Value::as_u64) {
            (AssetKind::Image, id as u32)
        } else if let Some(id) = entry.get("table").and_then(Value::as_u64) {
            (AssetKind::Table, id as u32)
        } else {
            continue;
        };
        if library.asset(kind, id).is_none() {
            log::warn!("match names unknown {kind:?} id {id} for '{}'; dropped", section.title);
            continue;
        }
        if used.contains(&(kind, id)) {
            log::warn!("{kind:?} id {id} already assigned; dropping duplicate for '{}'", section.title);
            continue;
        }
        used.push((kind, id));
        let reason = entry.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
        matches.by_section.insert(body_index, MatchEntry { kind, asset_id: id, reason });
    }
    for key in obj.keys() {
        if !library.body_sections().iter().any(|s| &s.title == key) {
            log::warn!("match output names unknown section '{key}'; ignored");
        }
    }
    Ok(matches)
}

/// Content weight per body section: whitespace word count plus
/// λ·(asset area / mean matched asset area), floored at [`WEIGHT_FLOOR`].
pub fn estimate_weights(library: &AssetLibrary, matches: &AssetMatch, lambda: f64) -> Vec<ContentWeight> {
    let body = library.body_sections();
    let areas: Vec<f64> = matches
        .by_section
        .values()
        .filter_map(|m| library.asset(m.kind, m.asset_id))
        .map(|a| a.area())
        .collect();
    let mean_area = if areas.is_empty() { 0.0 } else { areas.iter().sum::<f64>() / areas.len() as f64 };

    body.iter()
        .enumerate()
        .map(|(i, section)| {
            let words = section.word_count();
            let figure_area_demand = matches
                .get(i)
                .and_then(|m| library.asset(m.kind, m.asset_id))
                .map(|a| if mean_area > 0.0 { a.area() / mean_area } else { 0.0 })
                .unwrap_or(0.0);
            let weight = (words as f64 + lambda * figure_area_demand).max(WEIGHT_FLOOR);
            ContentWeight { section_index: i, words, figure_area_demand, weight }
        })
        .collect()
}

/// Distance of an aspect ratio from the target band.
fn band_violation(aspect: f64, params: &LayoutParams) -> f64 {
    if aspect < params.aspect_min {
        params.aspect_min - aspect
    } else if aspect > params.aspect_max {
        aspect - params.aspect_max
    } else {
        0.0
    }
}

/// Total band violation of one column holding `weights`, given its width
/// share of the body region.
fn column_cost(weights: &[f64], col_w: f64, body_h: f64, params: &LayoutParams) -> f64 {
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| band_violation(col_w / (body_h * w / sum), params)).sum()
}

/// Pick the contiguous partition of `weights` into at most `max_columns`
/// groups minimizing total aspect-band violation. Ties prefer fewer
/// columns, then lexicographically earlier boundaries. Returns group sizes.
fn best_partition(weights: &[f64], body_w: f64, body_h: f64, params: &LayoutParams) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let max_parts = params.max_columns.max(1).min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;

    let mut sizes = Vec::new();
    enumerate(weights, 0, max_parts, &mut sizes, &mut |sizes| {
        let mut cost = 0.0;
        let mut start = 0;
        for &len in sizes {
            let group = &weights[start..start + len];
            let col_w = body_w * group.iter().sum::<f64>() / total;
            cost += column_cost(group, col_w, body_h, params);
            start += len;
        }
        let better = match &best {
            None => true,
            Some((c, s)) => {
                cost < c - 1e-9
                    || (cost <= c + 1e-9 && (sizes.len() < s.len() || (sizes.len() == s.len() && sizes < s)))
            }
        };
        if better {
            best = Some((cost, sizes.clone()));
        }
    });
    best.expect("at least one partition exists").1
}

/// Visit every composition of `weights[from..]` into at most `parts_left`
/// contiguous groups.
fn enumerate(weights: &[f64], from: usize, parts_left: usize, sizes: &mut Vec<usize>, visit: &mut dyn FnMut(&Vec<usize>)) {
    let remaining = weights.len() - from;
    if remaining == 0 {
        visit(sizes);
        return;
    }
    if parts_left == 0 {
        return;
    }
    let min_len = if parts_left == 1 { remaining } else { 1 };
    for len in min_len..=remaining {
        sizes.push(len);
        enumerate(weights, from + len, parts_left - 1, sizes, visit);
        sizes.pop();
    }
}

/// Split index in 1..len minimizing |left sum − total/2|; earliest on ties.
fn bisect(weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut best = (f64::INFINITY, 1);
    let mut prefix = 0.0;
    for m in 1..weights.len() {
        prefix += weights[m - 1];
        let gap = (prefix - total / 2.0).abs();
        if gap < best.0 {
            best = (gap, m);
        }
    }
    best.1
}

/// Binary tree over one column's sections: weight-balanced horizontal cuts.
fn rows_tree(weights: &[f64], first_section: usize) -> LayoutNode {
    if weights.len() == 1 {
        return LayoutNode::Leaf { section_index: first_section };
    }
    let m = bisect(weights);
    let total: f64 = weights.iter().sum();
    let ratio = weights[..m].iter().sum::<f64>() / total;
    LayoutNode::Split {
        axis: SplitAxis::Horizontal,
        ratio,
        left: Box::new(rows_tree(&weights[..m], first_section)),
        right: Box::new(rows_tree(&weights[m..], first_section + m)),
    }
}

/// Binary tree over columns: weight-balanced vertical cuts, one subtree per
/// column group.
fn columns_tree(weights: &[f64], groups: &[(usize, usize)]) -> LayoutNode {
    if groups.len() == 1 {
        let (start, len) = groups[0];
        return rows_tree(&weights[start..start + len], start);
    }
    let sums: Vec<f64> = groups.iter().map(|&(s, l)| weights[s..s + l].iter().sum()).collect();
    let m = bisect(&sums);
    let total: f64 = sums.iter().sum();
    let ratio = sums[..m].iter().sum::<f64>() / total;
    LayoutNode::Split {
        axis: SplitAxis::Vertical,
        ratio,
        left: Box::new(columns_tree(weights, &groups[..m])),
        right: Box::new(columns_tree(weights, &groups[m..])),
    }
}

fn collect_panels(node: &LayoutNode, rect: Rect, out: &mut Vec<Panel>) {
    match node {
        LayoutNode::Leaf { section_index } => out.push(Panel { section_index: *section_index, bbox: rect }),
        LayoutNode::Split { axis, ratio, left, right } => {
            let (a, b) = match axis {
                SplitAxis::Vertical => {
                    let lw = rect.w * ratio;
                    (
                        Rect { x: rect.x, y: rect.y, w: lw, h: rect.h },
                        Rect { x: rect.x + lw, y: rect.y, w: rect.w - lw, h: rect.h },
                    )
                }
                SplitAxis::Horizontal => {
                    let th = rect.h * ratio;
                    (
                        Rect { x: rect.x, y: rect.y, w: rect.w, h: th },
                        Rect { x: rect.x, y: rect.y + th, w: rect.w, h: rect.h - th },
                    )
                }
            };
            collect_panels(left, a, out);
            collect_panels(right, b, out);
        }
    }
}

/// Build the poster layout: full-width title strip on top, body region
/// below split into weight-proportional panels.
pub fn build_layout(
    weights: &[ContentWeight],
    geometry: &PosterGeometry,
    params: &LayoutParams,
    matches: &AssetMatch,
) -> Result<Layout> {
    geometry.check()?;
    if weights.is_empty() {
        return Err(Error::Layout("no body sections to lay out".into()));
    }
    for w in weights {
        // NaN fails here too: it is neither positive nor laid-out-able.
        if w.weight.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Layout(format!("section {} has non-positive weight", w.section_index)));
        }
    }
    let (cw, ch) = (geometry.width_px as f64, geometry.height_px as f64);
    let title_h = ch * geometry.title_strip_fraction;
    let title = Rect { x: 0.0, y: 0.0, w: cw, h: title_h };
    let body = Rect { x: 0.0, y: title_h, w: cw, h: ch - title_h };

    let values: Vec<f64> = weights.iter().map(|w| w.weight).collect();
    let sizes = best_partition(&values, body.w, body.h, params);
    let mut groups = Vec::new();
    let mut start = 0;
    for len in sizes {
        groups.push((start, len));
        start += len;
    }
    let tree = columns_tree(&values, &groups);
    let mut panels = Vec::new();
    collect_panels(&tree, body, &mut panels);
    panels.sort_by_key(|p| p.section_index);

    let layout = Layout {
        geometry: *geometry,
        title,
        tree,
        panels,
        weights: weights.to_vec(),
        matches: matches.clone(),
    };
    layout.check()?;
    Ok(layout)
}

/// Column-major traversal of panels: group by center x (left to right),
/// sort each column by center y (top to bottom). Returns section indices.
pub fn reading_order(panels: &[Panel]) -> Vec<usize> {
    let mut order: Vec<&Panel> = panels.iter().collect();
    order.sort_by(|a, b| {
        let (ax, _) = a.bbox.center();
        let (bx, _) = b.bbox.center();
        ax.partial_cmp(&bx).expect("finite centers")
    });
    let eps = panels
        .iter()
        .map(|p| p.bbox.x + p.bbox.w)
        .fold(0.0f64, f64::max)
        * 1e-9
        + 1e-12;
    let mut result = Vec::with_capacity(panels.len());
    let mut i = 0;
    while i < order.len() {
        let anchor = order[i].bbox.center().0;
        let mut column: Vec<&Panel> = Vec::new();
        while i < order.len() && (order[i].bbox.center().0 - anchor).abs() <= eps {
            column.push(order[i]);
            i += 1;
        }
        column.sort_by(|a, b| {
            a.bbox.center().1.partial_cmp(&b.bbox.center().1).expect("finite centers")
        });
        result.extend(column.into_iter().map(|p| p.section_index));
    }
    result
}

/// Schema validator for the matching response (registered in `schemas`).
pub fn validate_match_value(value: &Value) -> Vec<String> {
    let mut issues = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["not a JSON object".into()];
    };
    for (section, entry) in obj {
        let Some(entry) = entry.as_object() else {
            issues.push(format!("entry '{section}' is not an object"));
            continue;
        };
        let has_image = entry.contains_key("image");
        let has_table = entry.contains_key("table");
        if has_image == has_table {
            issues.push(format!("entry '{section}' must name exactly one of 'image' or 'table'"));
        }
        for key in ["image", "table"] {
            if let Some(v) = entry.get(key) {
                if !v.is_u64() {
                    issues.push(format!("entry '{section}' field '{key}' is not a non-negative integer"));
                }
            }
        }
        match entry.get("reason") {
            Some(Value::String(_)) => {}
            Some(_) => issues.push(format!("entry '{section}' field 'reason' is not a string")),
            None => issues.push(format!("entry '{section}' missing 'reason'")),
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendDescriptor, Endpoint, Modality};
    use crate::parser::{FigureAsset, LibraryMeta, SectionSynopsis};
    use proptest::prelude::*;

    fn gateway_with(fixtures: serde_json::Value, dir: &Path) -> Gateway {
        let path = dir.join("fixtures.json");
        std::fs::write(&path, fixtures.to_string()).unwrap();
        Gateway::new(vec![BackendDescriptor {
            id: "text".into(),
            modality: Modality::Text,
            endpoint: Endpoint::Mock { fixtures: path },
            price_in: 0.0,
            price_out: 0.0,
            max_retries: 0,
            max_in_flight: None,
            vision_tokens_per_image: 765,
        }])
        .unwrap()
    }

    fn library_with_assets(dir: &Path) -> AssetLibrary {
        let png = |name: &str, w: u32, h: u32| {
            let path = dir.join(name);
            image::RgbImage::from_pixel(w, h, image::Rgb([0, 0, 0])).save(&path).unwrap();
            path
        };
        AssetLibrary {
            meta: LibraryMeta { poster_title: "T".into(), ..Default::default() },
            sections: vec![
                SectionSynopsis { title: "Poster Title".into(), content: "T by A".into() },
                SectionSynopsis { title: "Introduction".into(), content: "one two three".into() },
                SectionSynopsis { title: "Method".into(), content: "four five".into() },
                SectionSynopsis { title: "Results".into(), content: "six".into() },
            ],
            figures: vec![FigureAsset {
                id: 1,
                kind: AssetKind::Image,
                caption: "Overview".into(),
                file: png("f1.png", 200, 100),
                width_px: 200,
                height_px: 100,
            }],
            tables: vec![FigureAsset {
                id: 2,
                kind: AssetKind::Table,
                caption: "Scores".into(),
                file: png("t2.png", 300, 150),
                width_px: 300,
                height_px: 150,
            }],
        }
    }

    fn weights_of(values: &[f64]) -> Vec<ContentWeight> {
        values
            .iter()
            .enumerate()
            .map(|(i, &w)| ContentWeight { section_index: i, words: 0, figure_area_demand: 0.0, weight: w })
            .collect()
    }

    #[test]
    fn match_assigns_figures_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        let library = library_with_assets(dir.path());
        let response = serde_json::json!({
            "Introduction": {"image": 1, "reason": "overview figure"},
            "Results": {"table": 2, "reason": "score table"}
        });
        let gw = gateway_with(serde_json::json!({"planner.match": response.to_string()}), dir.path());
        let matches = match_assets(&library, &gw, "text").unwrap();
        assert_eq!(matches.len(), 2);
        assert_eq!(matches.get(0).unwrap().asset_id, 1);
        assert_eq!(matches.get(2).unwrap().kind, AssetKind::Table);
    }

    #[test]
    fn match_without_assets_makes_no_call() {
        let dir = tempfile::tempdir().unwrap();
        let mut library = library_with_assets(dir.path());
        library.figures.clear();
        library.tables.clear();
        let gw = gateway_with(serde_json::json!({}), dir.path());
        let matches = match_assets(&library, &gw, "text").unwrap();
        assert!(matches.is_empty());
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn duplicate_assignment_keeps_first_section() {
        let dir = tempfile::tempdir().unwrap();
        let library = library_with_assets(dir.path());
        let response = serde_json::json!({
            "Introduction": {"image": 1, "reason": "a"},
            "Method": {"image": 1, "reason": "b"}
        });
        let gw = gateway_with(serde_json::json!({"planner.match": response.to_string()}), dir.path());
        let matches = match_assets(&library, &gw, "text").unwrap();
        assert_eq!(matches.len(), 1);
        assert!(matches.get(0).is_some());
        assert!(matches.get(1).is_none());
    }

    #[test]
    fn unknown_ids_and_sections_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let library = library_with_assets(dir.path());
        let response = serde_json::json!({
            "Introduction": {"image": 9, "reason": "no such id"},
            "Epilogue": {"table": 2, "reason": "no such section"}
        });
        let gw = gateway_with(serde_json::json!({"planner.match": response.to_string()}), dir.path());
        let matches = match_assets(&library, &gw, "text").unwrap();
        assert!(matches.is_empty());
    }

    #[test]
    fn weight_formula_matches_the_contract() {
        let dir = tempfile::tempdir().unwrap();
        let mut library = library_with_assets(dir.path());
        let hundred = vec!["w"; 100].join(" ");
        library.sections[1].content = hundred.clone();
        library.sections[2].content = hundred;
        library.sections[3].content = String::new();

        // No matches anywhere: pure word counts, empty section floored.
        let none = estimate_weights(&library, &AssetMatch::default(), 50.0);
        assert_eq!(none[0].weight, 100.0);
        assert_eq!(none[2].weight, WEIGHT_FLOOR);

        // Single matched asset: its area is exactly the mean, demand 1.
        let mut matches = AssetMatch::default();
        matches.by_section.insert(
            0,
            MatchEntry { kind: AssetKind::Image, asset_id: 1, reason: String::new() },
        );
        let weights = estimate_weights(&library, &matches, 50.0);
        assert_eq!(weights[0].weight, 150.0);
        assert_eq!(weights[0].figure_area_demand, 1.0);
        assert_eq!(weights[1].weight, 100.0);
    }

    #[test]
    fn worked_example_one_one_two() {
        let geometry = PosterGeometry::new(1200, 1800, 0.1).unwrap();
        let layout = build_layout(
            &weights_of(&[1.0, 1.0, 2.0]),
            &geometry,
            &LayoutParams::default(),
            &AssetMatch::default(),
        )
        .unwrap();
        assert_eq!(layout.title, Rect { x: 0.0, y: 0.0, w: 1200.0, h: 180.0 });
        let body_area = 1200.0 * 1620.0;
        let shares: Vec<f64> = layout.panels.iter().map(|p| p.bbox.area() / body_area).collect();
        for (share, target) in shares.iter().zip([0.25, 0.25, 0.5]) {
            assert!((share - target).abs() < 1e-9, "share {share} vs {target}");
        }
        assert_eq!(reading_order(&layout.panels), vec![0, 1, 2]);
    }

    #[test]
    fn single_section_fills_the_body() {
        let geometry = PosterGeometry::new(1000, 1000, 0.12).unwrap();
        let layout = build_layout(
            &weights_of(&[7.0]),
            &geometry,
            &LayoutParams::default(),
            &AssetMatch::default(),
        )
        .unwrap();
        assert_eq!(layout.panels.len(), 1);
        assert_eq!(layout.panels[0].bbox, Rect { x: 0.0, y: 120.0, w: 1000.0, h: 880.0 });
    }

    #[test]
    fn two_equal_weights_split_in_half() {
        let geometry = PosterGeometry::new(2000, 1000, 0.1).unwrap();
        let layout = build_layout(
            &weights_of(&[5.0, 5.0]),
            &geometry,
            &LayoutParams::default(),
            &AssetMatch::default(),
        )
        .unwrap();
        match &layout.tree {
            LayoutNode::Split { axis, ratio, .. } => {
                assert_eq!(*axis, SplitAxis::Vertical);
                assert_eq!(*ratio, 0.5);
            }
            _ => panic!("expected a split"),
        }
        let body_area = 2000.0 * 900.0;
        for p in &layout.panels {
            assert!((p.bbox.area() - body_area / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_sections_is_a_layout_error() {
        let geometry = PosterGeometry::new(1000, 1000, 0.12).unwrap();
        let err = build_layout(&[], &geometry, &LayoutParams::default(), &AssetMatch::default())
            .unwrap_err();
        assert!(matches!(err, Error::Layout(_)));
    }

    #[test]
    fn layout_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let layout = build_layout(
            &weights_of(&[3.0, 1.0, 2.0, 5.0]),
            &geometry,
            &LayoutParams::default(),
            &AssetMatch::default(),
        )
        .unwrap();
        let path = dir.path().join("layout.json");
        layout.save(&path).unwrap();
        assert_eq!(Layout::load(&path).unwrap(), layout);
    }

    #[test]
    fn determinism_identical_inputs_identical_tree() {
        let geometry = PosterGeometry::new(1414, 2000, 0.12).unwrap();
        let w = weights_of(&[2.5, 1.0, 4.0, 1.0, 3.0]);
        let a = build_layout(&w, &geometry, &LayoutParams::default(), &AssetMatch::default()).unwrap();
        let b = build_layout(&w, &geometry, &LayoutParams::default(), &AssetMatch::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn match_validator_flags_corrupt_entries() {
        let good = serde_json::json!({"Intro": {"image": 1, "reason": "r"}});
        assert!(validate_match_value(&good).is_empty());
        let both = serde_json::json!({"Intro": {"image": 1, "table": 2, "reason": "r"}});
        assert_eq!(validate_match_value(&both).len(), 1);
        let neither = serde_json::json!({"Intro": {"reason": "r"}});
        assert_eq!(validate_match_value(&neither).len(), 1);
        let bad_id = serde_json::json!({"Intro": {"image": "one", "reason": "r"}});
        assert!(!validate_match_value(&bad_id).is_empty());
        let no_reason = serde_json::json!({"Intro": {"image": 1}});
        assert!(!validate_match_value(&no_reason).is_empty());
        assert!(!validate_match_value(&serde_json::json!([1, 2])).is_empty());
    }

    proptest! {
        #[test]
        fn layout_properties_hold_for_random_weights(
            values in proptest::collection::vec(0.5f64..300.0, 1..12),
            width in 800u32..2400,
            height in 800u32..2400,
        ) {
            let geometry = PosterGeometry::new(width, height, 0.12).unwrap();
            let layout = build_layout(
                &weights_of(&values),
                &geometry,
                &LayoutParams::default(),
                &AssetMatch::default(),
            )
            .unwrap();

            let body_h = height as f64 * (1.0 - 0.12);
            let body_area = width as f64 * body_h;
            let area_sum: f64 = layout.panels.iter().map(|p| p.bbox.area()).sum();
            prop_assert!((area_sum - body_area).abs() <= 1e-6 * body_area);

            let total: f64 = values.iter().sum();
            for (panel, w) in layout.panels.iter().zip(&values) {
                let share = panel.bbox.area() / body_area;
                prop_assert!((share - w / total).abs() <= 1e-9, "share {} target {}", share, w / total);
            }
            prop_assert_eq!(reading_order(&layout.panels), (0..values.len()).collect::<Vec<_>>());
        }
    }
}
