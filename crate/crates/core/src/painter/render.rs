//! Deterministic panel placement and crop export.
//!
//! Placement is pure geometry: title band at the panel top, textbox(es)
//! below, asset pinned to the bottom with its aspect preserved. Crops come
//! either from an external page renderer (command template) or from a
//! built-in synthetic rasterizer that draws the same geometry the fit
//! estimator models, so the critique loop runs without any office renderer.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::doc::PosterDoc;
use crate::error::{Error, Result};
use crate::painter::{BulletBlock, GLYPH_WIDTH_FACTOR, LINE_HEIGHT_FACTOR};
use crate::parser::FigureAsset;
use crate::planner::{Panel, PosterGeometry, Rect};

/// Inset of panel content from the panel bbox, as a fraction of the panel's
/// smaller dimension.
pub const PANEL_PADDING_FRACTION: f64 = 0.03;
/// Fraction of the panel's inner height given to the section heading band.
pub const PANEL_TITLE_BAND_FRACTION: f64 = 0.14;
/// Largest fraction of the panel's inner height an asset may occupy.
pub const PANEL_ASSET_MAX_FRACTION: f64 = 0.42;
/// Gap between two side-by-side textboxes, as a fraction of region width.
pub const TEXTBOX_GUTTER_FRACTION: f64 = 0.04;
/// Crop margin around a panel, as a fraction of poster width.
pub const CROP_MARGIN_FRACTION: f64 = 0.05;

/// Where each element of one panel goes, in poster pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelPlacement {
    pub title: Rect,
    /// Combined text region (both boxes plus the gutter when split).
    pub text_region: Rect,
    pub text1: Rect,
    pub text2: Option<Rect>,
    pub asset: Option<Rect>,
}

fn inset(r: &Rect, pad: f64) -> Rect {
    Rect { x: r.x + pad, y: r.y + pad, w: (r.w - 2.0 * pad).max(1.0), h: (r.h - 2.0 * pad).max(1.0) }
}

/// Pure placement: depends only on the panel bbox, whether the block splits
/// into two textboxes, and the asset's pixel dimensions.
pub fn plan_panel(bbox: &Rect, two_textboxes: bool, asset_dims: Option<(u32, u32)>) -> PanelPlacement {
    let pad = PANEL_PADDING_FRACTION * bbox.w.min(bbox.h);
    let inner = inset(bbox, pad);
    let title = Rect { x: inner.x, y: inner.y, w: inner.w, h: PANEL_TITLE_BAND_FRACTION * inner.h };

    let asset = asset_dims.map(|(aw, ah)| {
        let max_h = PANEL_ASSET_MAX_FRACTION * inner.h;
        let scale = (inner.w / aw as f64).min(max_h / ah as f64);
        let w = aw as f64 * scale;
        let h = ah as f64 * scale;
        Rect { x: inner.x + (inner.w - w) / 2.0, y: inner.y + inner.h - h, w, h }
    });

    let text_top = title.y + title.h + pad;
    let text_bottom = asset.as_ref().map(|a| a.y - pad).unwrap_or(inner.y + inner.h);
    let text_region =
        Rect { x: inner.x, y: text_top, w: inner.w, h: (text_bottom - text_top).max(1.0) };

    let (text1, text2) = if two_textboxes {
        let gutter = TEXTBOX_GUTTER_FRACTION * text_region.w;
        let bw = (text_region.w - gutter) / 2.0;
        (
            Rect { x: text_region.x, y: text_region.y, w: bw, h: text_region.h },
            Some(Rect { x: text_region.x + bw + gutter, y: text_region.y, w: bw, h: text_region.h }),
        )
    } else {
        (text_region, None)
    };

    PanelPlacement { title, text_region, text1, text2, asset }
}

/// Add one panel's shapes to the document. Returns the placement used.
pub fn render_panel(
    doc: &mut PosterDoc,
    panel: &Panel,
    block: &BulletBlock,
    font_scale: f64,
    asset: Option<&FigureAsset>,
) -> PanelPlacement {
    let placement = plan_panel(
        &panel.bbox,
        block.textbox2.is_some(),
        asset.map(|a| (a.width_px, a.height_px)),
    );
    doc.add_textbox(placement.title, block.title.clone(), 1.0);
    doc.add_textbox(placement.text1, block.textbox1.clone(), font_scale);
    if let (Some(rect), Some(items)) = (placement.text2, block.textbox2.as_ref()) {
        doc.add_textbox(rect, items.clone(), font_scale);
    }
    if let (Some(rect), Some(a)) = (placement.asset, asset) {
        doc.add_picture(rect, a.file.clone());
    }
    placement
}

/// Clamp font sizes used for the poster title strip.
const TITLE_FONT_MIN: u32 = 24;
const TITLE_FONT_MAX: u32 = 96;

/// Add the full-width poster title strip (title plus byline) to the document.
pub fn render_title_strip(
    doc: &mut PosterDoc,
    strip: &Rect,
    poster_title: &str,
    byline: &str,
) {
    use crate::painter::{Alignment, BulletItem, TextRun};
    let pad = 0.08 * strip.h;
    let inner = inset(strip, pad);
    let title_size = ((strip.h * 0.30) as u32).clamp(TITLE_FONT_MIN, TITLE_FONT_MAX);
    let mut items = vec![BulletItem {
        alignment: Alignment::Center,
        bullet: false,
        level: 0,
        font_size: title_size,
        runs: vec![TextRun { text: poster_title.to_string(), bold: Some(true), italic: None }],
    }];
    if !byline.trim().is_empty() {
        items.push(BulletItem {
            alignment: Alignment::Center,
            bullet: false,
            level: 0,
            font_size: (title_size / 2).max(14),
            runs: vec![TextRun { text: byline.to_string(), bold: None, italic: None }],
        });
    }
    doc.add_textbox(inner, items, 1.0);
}

/// Crop window for a panel: bbox inflated by the margin, clamped to canvas.
pub fn crop_window(panel: &Panel, geometry: &PosterGeometry) -> Rect {
    let margin = CROP_MARGIN_FRACTION * geometry.width_px as f64;
    let (cw, ch) = (geometry.width_px as f64, geometry.height_px as f64);
    let x0 = (panel.bbox.x - margin).max(0.0);
    let y0 = (panel.bbox.y - margin).max(0.0);
    let x1 = (panel.bbox.x + panel.bbox.w + margin).min(cw);
    let y1 = (panel.bbox.y + panel.bbox.h + margin).min(ch);
    Rect { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
}

/// Renders panel crops for the critique loop; external renderer when a page
/// render command is configured, synthetic rasterization otherwise.
pub struct PanelRenderer<'a> {
    pub geometry: &'a PosterGeometry,
    pub render_command: Option<String>,
}

impl PanelRenderer<'_> {
    pub fn render_crop(
        &self,
        panel: &Panel,
        placement: &PanelPlacement,
        block: &BulletBlock,
        font_scale: f64,
        asset: Option<&FigureAsset>,
        out: &Path,
    ) -> Result<()> {
        match &self.render_command {
            Some(cmd) => self.external_crop(cmd, panel, placement, block, font_scale, asset, out),
            None => self.synthetic_crop(panel, placement, block, font_scale, out),
        }
    }

    /// Render the panel through the external page renderer: build a
    /// single-panel document, rasterize page 0, crop, and mark the textbox.
    #[allow(clippy::too_many_arguments)]
    fn external_crop(
        &self,
        command_template: &str,
        panel: &Panel,
        placement: &PanelPlacement,
        block: &BulletBlock,
        font_scale: f64,
        asset: Option<&FigureAsset>,
        out: &Path,
    ) -> Result<()> {
        let dir = tempfile::Builder::new()
            .prefix("panel-render")
            .tempdir()
            .map_err(|e| Error::Render(format!("cannot create temp dir: {e}")))?;
        let doc_path = dir.path().join("panel.pptx");
        let png_path = dir.path().join("page.png");
        let mut doc = PosterDoc::new(self.geometry.width_px as f64, self.geometry.height_px as f64);
        render_panel(&mut doc, panel, block, font_scale, asset);
        doc.save(&doc_path)?;

        let command = command_template
            .replace("{input}", &doc_path.display().to_string())
            .replace("{page}", "0")
            .replace("{output}", &png_path.display().to_string());
        let status = std::process::Command::new("sh")
            .arg("-c")
            .arg(&command)
            .output()
            .map_err(|e| Error::Render(format!("cannot spawn page renderer: {e}")))?;
        if !status.status.success() {
            return Err(Error::Render(format!(
                "page renderer exited with {}: {}",
                status.status,
                String::from_utf8_lossy(&status.stderr)
            )));
        }
        let page = image::open(&png_path)
            .map_err(|e| Error::Render(format!("cannot read rendered page: {e}")))?
            .to_rgb8();

        let sx = page.width() as f64 / self.geometry.width_px as f64;
        let sy = page.height() as f64 / self.geometry.height_px as f64;
        let window = crop_window(panel, self.geometry);
        let scaled = Rect { x: window.x * sx, y: window.y * sy, w: window.w * sx, h: window.h * sy };
        let mut crop = image::imageops::crop_imm(
            &page,
            scaled.x.round() as u32,
            scaled.y.round() as u32,
            (scaled.w.round() as u32).max(1),
            (scaled.h.round() as u32).max(1),
        )
        .to_image();

        let to_crop = |r: &Rect| Rect {
            x: (r.x - window.x) * sx,
            y: (r.y - window.y) * sy,
            w: r.w * sx,
            h: r.h * sy,
        };
        let stroke = stroke_width(self.geometry);
        stroke_rect(&mut crop, &to_crop(&placement.text1), RED, stroke);
        if let Some(t2) = &placement.text2 {
            stroke_rect(&mut crop, &to_crop(t2), RED, stroke);
        }
        crop.save(out).map_err(|e| Error::Render(format!("cannot save crop: {e}")))?;
        Ok(())
    }

    /// Draw the panel geometry directly: gray bars stand in for wrapped
    /// text lines (same wrapping model as the fit estimator), so overflow
    /// is visible as bars escaping the marked textbox.
    fn synthetic_crop(
        &self,
        panel: &Panel,
        placement: &PanelPlacement,
        block: &BulletBlock,
        font_scale: f64,
        out: &Path,
    ) -> Result<()> {
        let window = crop_window(panel, self.geometry);
        let mut img = RgbImage::from_pixel(
            (window.w.round() as u32).max(1),
            (window.h.round() as u32).max(1),
            WHITE,
        );
        let local = |r: &Rect| Rect { x: r.x - window.x, y: r.y - window.y, w: r.w, h: r.h };

        fill_rect(&mut img, &local(&placement.title), TITLE_GRAY);
        if let Some(asset) = &placement.asset {
            fill_rect(&mut img, &local(asset), ASSET_GRAY);
        }
        let boxes: Vec<(&Rect, &[crate::painter::BulletItem])> = match (&placement.text2, &block.textbox2) {
            (Some(r2), Some(items2)) => {
                vec![(&placement.text1, block.textbox1.as_slice()), (r2, items2.as_slice())]
            }
            _ => vec![(&placement.text1, block.textbox1.as_slice())],
        };
        for (rect, items) in &boxes {
            let rect = local(rect);
            let mut y = rect.y;
            for item in *items {
                let fs = item.font_size as f64 * font_scale;
                let chars: usize = item.runs.iter().map(|r| r.text.chars().count()).sum();
                let line_w = chars as f64 * GLYPH_WIDTH_FACTOR * fs;
                let lines = (line_w / rect.w).ceil().max(1.0) as usize;
                let mut remaining = line_w;
                for _ in 0..lines {
                    let bar_w = remaining.min(rect.w);
                    // Bars intentionally run past the textbox when the text
                    // overflows; only the crop bounds clip them.
                    fill_rect(
                        &mut img,
                        &Rect { x: rect.x, y: y + 0.2 * fs, w: bar_w.max(1.0), h: 0.6 * fs },
                        TEXT_GRAY,
                    );
                    remaining -= bar_w;
                    y += LINE_HEIGHT_FACTOR * fs;
                }
            }
        }
        let stroke = stroke_width(self.geometry);
        for (rect, _) in &boxes {
            stroke_rect(&mut img, &local(rect), RED, stroke);
        }
        img.save(out).map_err(|e| Error::Render(format!("cannot save crop: {e}")))?;
        Ok(())
    }
}

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const TITLE_GRAY: Rgb<u8> = Rgb([214, 214, 214]);
const ASSET_GRAY: Rgb<u8> = Rgb([166, 166, 166]);
const TEXT_GRAY: Rgb<u8> = Rgb([96, 96, 96]);
const RED: Rgb<u8> = Rgb([220, 30, 30]);

fn stroke_width(geometry: &PosterGeometry) -> u32 {
    ((0.004 * geometry.width_px as f64).round() as u32).max(2)
}

fn fill_rect(img: &mut RgbImage, r: &Rect, color: Rgb<u8>) {
    let x0 = r.x.max(0.0).round() as u32;
    let y0 = r.y.max(0.0).round() as u32;
    let x1 = ((r.x + r.w).max(0.0).round() as u32).min(img.width());
    let y1 = ((r.y + r.h).max(0.0).round() as u32).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, color);
        }
    }
}

fn stroke_rect(img: &mut RgbImage, r: &Rect, color: Rgb<u8>, width: u32) {
    let w = width as f64;
    fill_rect(img, &Rect { x: r.x, y: r.y, w: r.w, h: w }, color);
    fill_rect(img, &Rect { x: r.x, y: r.y + r.h - w, w: r.w, h: w }, color);
    fill_rect(img, &Rect { x: r.x, y: r.y, w, h: r.h }, color);
    fill_rect(img, &Rect { x: r.x + r.w - w, y: r.y, w, h: r.h }, color);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::painter::{Alignment, BulletItem, TextRun};

    fn bullet(text: &str, font_size: u32) -> BulletItem {
        BulletItem {
            alignment: Alignment::Left,
            bullet: true,
            level: 0,
            font_size,
            runs: vec![TextRun { text: text.into(), bold: None, italic: None }],
        }
    }

    fn block(two: bool) -> BulletBlock {
        BulletBlock {
            title: vec![bullet("Heading", 30)],
            textbox1: vec![bullet("first point", 20), bullet("second point", 20)],
            textbox2: two.then(|| vec![bullet("third", 20), bullet("fourth", 20)]),
        }
    }

    fn panel() -> Panel {
        Panel { section_index: 0, bbox: Rect { x: 100.0, y: 200.0, w: 600.0, h: 400.0 } }
    }

    fn inside(outer: &Rect, inner: &Rect) -> bool {
        inner.x >= outer.x - 1e-9
            && inner.y >= outer.y - 1e-9
            && inner.x + inner.w <= outer.x + outer.w + 1e-9
            && inner.y + inner.h <= outer.y + outer.h + 1e-9
    }

    #[test]
    fn placement_stays_inside_the_panel() {
        let p = panel();
        let placement = plan_panel(&p.bbox, true, Some((800, 400)));
        assert!(inside(&p.bbox, &placement.title));
        assert!(inside(&p.bbox, &placement.text1));
        assert!(inside(&p.bbox, placement.text2.as_ref().unwrap()));
        assert!(inside(&p.bbox, placement.asset.as_ref().unwrap()));
    }

    #[test]
    fn two_textboxes_share_the_region_width() {
        let p = panel();
        let placement = plan_panel(&p.bbox, true, None);
        let region = placement.text_region;
        let gutter = TEXTBOX_GUTTER_FRACTION * region.w;
        let expected = (region.w - gutter) / 2.0;
        let t1 = placement.text1;
        let t2 = placement.text2.unwrap();
        assert!((t1.w - expected).abs() < 1e-9);
        assert!((t2.w - expected).abs() < 1e-9);
        assert!((t2.x - (t1.x + t1.w + gutter)).abs() < 1e-9);
    }

    #[test]
    fn asset_keeps_aspect_and_fits_width() {
        let p = panel();
        // 2:1 asset into a 600-wide panel.
        let placement = plan_panel(&p.bbox, false, Some((1000, 500)));
        let a = placement.asset.unwrap();
        assert!(a.w <= 600.0);
        let aspect = a.w / a.h;
        assert!((aspect - 2.0).abs() / 2.0 < 0.01, "aspect {aspect}");
    }

    #[test]
    fn one_textbox_no_asset_adds_exactly_two_shapes() {
        let mut doc = PosterDoc::new(1200.0, 1800.0);
        render_panel(&mut doc, &panel(), &block(false), 1.0, None);
        assert_eq!(doc.shape_count(), 2);
    }

    #[test]
    fn two_textboxes_with_asset_add_four_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.png");
        image::RgbImage::from_pixel(40, 20, image::Rgb([0, 0, 0])).save(&file).unwrap();
        let asset = FigureAsset {
            id: 1,
            kind: crate::parser::AssetKind::Image,
            caption: "c".into(),
            file,
            width_px: 40,
            height_px: 20,
        };
        let mut doc = PosterDoc::new(1200.0, 1800.0);
        render_panel(&mut doc, &panel(), &block(true), 1.0, Some(&asset));
        assert_eq!(doc.shape_count(), 4);
    }

    #[test]
    fn rendered_shapes_lie_inside_the_panel_bbox() {
        let mut doc = PosterDoc::new(1200.0, 1800.0);
        let p = panel();
        render_panel(&mut doc, &p, &block(true), 1.3, None);
        for shape in &doc.shapes {
            assert!(inside(&p.bbox, shape.frame()), "{:?}", shape.frame());
        }
    }

    #[test]
    fn synthetic_crop_is_deterministic_and_sized_to_the_window() {
        let dir = tempfile::tempdir().unwrap();
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let renderer = PanelRenderer { geometry: &geometry, render_command: None };
        let p = panel();
        let placement = plan_panel(&p.bbox, false, None);
        let out1 = dir.path().join("a.png");
        let out2 = dir.path().join("b.png");
        renderer.render_crop(&p, &placement, &block(false), 1.0, None, &out1).unwrap();
        renderer.render_crop(&p, &placement, &block(false), 1.0, None, &out2).unwrap();
        assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

        let window = crop_window(&p, &geometry);
        let img = image::open(&out1).unwrap();
        assert_eq!(img.width(), window.w.round() as u32);
        assert_eq!(img.height(), window.h.round() as u32);
    }

    #[test]
    fn failing_page_renderer_is_a_render_error() {
        let geometry = PosterGeometry::new(1200, 1800, 0.12).unwrap();
        let renderer =
            PanelRenderer { geometry: &geometry, render_command: Some("false".into()) };
        let p = panel();
        let placement = plan_panel(&p.bbox, false, None);
        let dir = tempfile::tempdir().unwrap();
        let err = renderer
            .render_crop(&p, &placement, &block(false), 1.0, None, &dir.path().join("x.png"))
            .unwrap_err();
        assert!(matches!(err, Error::Render(_)));
    }

    #[test]
    fn title_strip_is_one_shape_with_both_lines() {
        let mut doc = PosterDoc::new(1200.0, 1800.0);
        let strip = Rect { x: 0.0, y: 0.0, w: 1200.0, h: 216.0 };
        render_title_strip(&mut doc, &strip, "A Poster", "Alice, Bob (Example University)");
        assert_eq!(doc.shape_count(), 1);
    }
}
