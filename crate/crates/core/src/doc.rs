//! Minimal OOXML presentation writer/reader.
//!
//! The poster is one slide sized to the poster geometry. Writing is fully
//! deterministic (fixed zip timestamps, stable part order) so identical
//! inputs produce byte-identical files. The reader walks shapes in document
//! order and recovers frames and paragraph text, which backs both the
//! geometry containment checks and poster text extraction.

use std::borrow::Cow;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use quick_xml::escape::{escape, unescape};
use quick_xml::events::Event;

use crate::error::{Error, Result};
use crate::painter::{Alignment, BulletItem};
use crate::planner::Rect;

/// OOXML length unit: 9525 EMU per pixel at 96 dpi.
pub const EMU_PER_PX: f64 = 9525.0;

fn emu(px: f64) -> i64 {
    (px * EMU_PER_PX).round() as i64
}

fn px(emu: i64) -> f64 {
    emu as f64 / EMU_PER_PX
}

#[derive(Debug, Clone)]
pub enum Shape {
    TextBox { frame: Rect, items: Vec<BulletItem>, font_scale: f64 },
    Picture { frame: Rect, path: PathBuf },
}

impl Shape {
    pub fn frame(&self) -> &Rect {
        match self {
            Shape::TextBox { frame, .. } | Shape::Picture { frame, .. } => frame,
        }
    }
}

/// In-memory poster document; `save` serializes it as a .pptx file.
#[derive(Debug, Clone)]
pub struct PosterDoc {
    pub width_px: f64,
    pub height_px: f64,
    pub doc_title: String,
    pub shapes: Vec<Shape>,
}

impl PosterDoc {
    pub fn new(width_px: f64, height_px: f64) -> Self {
        PosterDoc { width_px, height_px, doc_title: String::new(), shapes: Vec::new() }
    }

    pub fn add_textbox(&mut self, frame: Rect, items: Vec<BulletItem>, font_scale: f64) {
        self.shapes.push(Shape::TextBox { frame, items, font_scale });
    }

    pub fn add_picture(&mut self, frame: Rect, path: PathBuf) {
        self.shapes.push(Shape::Picture { frame, path });
    }

    pub fn shape_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut zip = zip::ZipWriter::new(file);
        let stamp = zip::DateTime::from_date_and_time(2020, 1, 1, 0, 0, 0)
            .expect("valid fixed timestamp");
        let options = zip::write::SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated)
            .last_modified_time(stamp);

        let part = |zip: &mut zip::ZipWriter<std::fs::File>, name: &str, body: &[u8]| -> Result<()> {
            zip.start_file(name, options).map_err(zip_err)?;
            zip.write_all(body)?;
            Ok(())
        };

        // Media parts are numbered in shape order; relationship ids follow.
        let mut media: Vec<(String, PathBuf)> = Vec::new();
        for shape in &self.shapes {
            if let Shape::Picture { path, .. } = shape {
                let ext = match path.extension().and_then(|e| e.to_str()) {
                    Some("jpg") | Some("jpeg") => "jpeg",
                    _ => "png",
                };
                media.push((format!("image{}.{ext}", media.len() + 1), path.clone()));
            }
        }

        part(&mut zip, "[Content_Types].xml", CONTENT_TYPES.as_bytes())?;
        part(&mut zip, "_rels/.rels", ROOT_RELS.as_bytes())?;
        part(&mut zip, "ppt/presentation.xml", self.presentation_xml().as_bytes())?;
        part(&mut zip, "ppt/_rels/presentation.xml.rels", PRESENTATION_RELS.as_bytes())?;
        part(&mut zip, "ppt/slideMasters/slideMaster1.xml", SLIDE_MASTER.as_bytes())?;
        part(&mut zip, "ppt/slideMasters/_rels/slideMaster1.xml.rels", MASTER_RELS.as_bytes())?;
        part(&mut zip, "ppt/slideLayouts/slideLayout1.xml", SLIDE_LAYOUT.as_bytes())?;
        part(&mut zip, "ppt/slideLayouts/_rels/slideLayout1.xml.rels", LAYOUT_RELS.as_bytes())?;
        part(&mut zip, "ppt/theme/theme1.xml", THEME.as_bytes())?;
        part(&mut zip, "ppt/slides/slide1.xml", self.slide_xml().as_bytes())?;
        part(&mut zip, "ppt/slides/_rels/slide1.xml.rels", slide_rels(&media).as_bytes())?;
        for (name, src) in &media {
            let bytes = std::fs::read(src).map_err(|e| {
                Error::Render(format!("cannot read picture {}: {e}", src.display()))
            })?;
            part(&mut zip, &format!("ppt/media/{name}"), &bytes)?;
        }
        part(&mut zip, "docProps/core.xml", self.core_xml().as_bytes())?;
        part(&mut zip, "docProps/app.xml", APP_PROPS.as_bytes())?;
        zip.finish().map_err(zip_err)?;
        Ok(())
    }

    fn presentation_xml(&self) -> String {
        format!(
            concat!(
                r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
                r#"<p:presentation xmlns:a="{A}" xmlns:r="{R}" xmlns:p="{P}">"#,
                r#"<p:sldMasterIdLst><p:sldMasterId id="2147483648" r:id="rId1"/></p:sldMasterIdLst>"#,
                r#"<p:sldIdLst><p:sldId id="256" r:id="rId2"/></p:sldIdLst>"#,
                r#"<p:sldSz cx="{cx}" cy="{cy}"/>"#,
                r#"<p:notesSz cx="6858000" cy="9144000"/>"#,
                r#"</p:presentation>"#
            ),
            A = NS_A,
            R = NS_R,
            P = NS_P,
            cx = emu(self.width_px),
            cy = emu(self.height_px),
        )
    }

    fn slide_xml(&self) -> String {
        let mut xml = format!(
            concat!(
                r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
                r#"<p:sld xmlns:a="{A}" xmlns:r="{R}" xmlns:p="{P}">"#,
                r#"<p:cSld><p:spTree>"#,
                r#"<p:nvGrpSpPr><p:cNvPr id="1" name=""/><p:cNvGrpSpPr/><p:nvPr/></p:nvGrpSpPr>"#,
                r#"<p:grpSpPr><a:xfrm><a:off x="0" y="0"/><a:ext cx="{cx}" cy="{cy}"/>"#,
                r#"<a:chOff x="0" y="0"/><a:chExt cx="{cx}" cy="{cy}"/></a:xfrm></p:grpSpPr>"#
            ),
            A = NS_A,
            R = NS_R,
            P = NS_P,
            cx = emu(self.width_px),
            cy = emu(self.height_px),
        );
        let mut media_index = 0usize;
        for (i, shape) in self.shapes.iter().enumerate() {
            // Shape ids 1 and up to the group; 1 is the tree itself.
            let shape_id = i as u32 + 2;
            match shape {
                Shape::TextBox { frame, items, font_scale } => {
                    xml.push_str(&textbox_xml(shape_id, frame, items, *font_scale));
                }
                Shape::Picture { frame, .. } => {
                    media_index += 1;
                    xml.push_str(&picture_xml(shape_id, frame, media_index));
                }
            }
        }
        xml.push_str("</p:spTree></p:cSld><p:clrMapOvr><a:masterClrMapping/></p:clrMapOvr></p:sld>");
        xml
    }

    fn core_xml(&self) -> String {
        format!(
            concat!(
                r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
                r#"<cp:coreProperties xmlns:cp="http://schemas.openxmlformats.org/package/2006/metadata/core-properties" "#,
                r#"xmlns:dc="http://purl.org/dc/elements/1.1/" xmlns:dcterms="http://purl.org/dc/terms/" "#,
                r#"xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance">"#,
                r#"<dc:title>{title}</dc:title>"#,
                r#"<dcterms:created xsi:type="dcterms:W3CDTF">2020-01-01T00:00:00Z</dcterms:created>"#,
                r#"<dcterms:modified xsi:type="dcterms:W3CDTF">2020-01-01T00:00:00Z</dcterms:modified>"#,
                r#"</cp:coreProperties>"#
            ),
            title = escape(self.doc_title.as_str()),
        )
    }
}

fn zip_err(e: zip::result::ZipError) -> Error {
    Error::Render(format!("zip error: {e}"))
}

fn xfrm(frame: &Rect) -> String {
    format!(
        r#"<a:xfrm><a:off x="{}" y="{}"/><a:ext cx="{}" cy="{}"/></a:xfrm>"#,
        emu(frame.x),
        emu(frame.y),
        emu(frame.w).max(1),
        emu(frame.h).max(1),
    )
}

fn textbox_xml(id: u32, frame: &Rect, items: &[BulletItem], font_scale: f64) -> String {
    let mut xml = format!(
        concat!(
            r#"<p:sp><p:nvSpPr><p:cNvPr id="{id}" name="TextBox {id}"/>"#,
            r#"<p:cNvSpPr txBox="1"/><p:nvPr/></p:nvSpPr>"#,
            r#"<p:spPr>{xfrm}<a:prstGeom prst="rect"><a:avLst/></a:prstGeom></p:spPr>"#,
            r#"<p:txBody><a:bodyPr wrap="square" lIns="0" tIns="0" rIns="0" bIns="0"/><a:lstStyle/>"#
        ),
        id = id,
        xfrm = xfrm(frame),
    );
    for item in items {
        let algn = match item.alignment {
            Alignment::Left => "l",
            Alignment::Center => "ctr",
            Alignment::Right => "r",
        };
        let bullet = if item.bullet { r#"<a:buChar char="&#8226;"/>"# } else { "<a:buNone/>" };
        xml.push_str(&format!(
            r#"<a:p><a:pPr algn="{algn}" lvl="{}">{bullet}</a:pPr>"#,
            item.level,
        ));
        let sz = ((item.font_size as f64) * font_scale * 100.0).round().max(100.0) as i64;
        for run in &item.runs {
            let b = if run.bold.unwrap_or(false) { r#" b="1""# } else { "" };
            let i = if run.italic.unwrap_or(false) { r#" i="1""# } else { "" };
            xml.push_str(&format!(
                r#"<a:r><a:rPr lang="en-US" sz="{sz}"{b}{i}/><a:t>{}</a:t></a:r>"#,
                escape(run.text.as_str()),
            ));
        }
        xml.push_str("</a:p>");
    }
    if items.is_empty() {
        xml.push_str("<a:p/>");
    }
    xml.push_str("</p:txBody></p:sp>");
    xml
}

fn picture_xml(id: u32, frame: &Rect, media_index: usize) -> String {
    format!(
        concat!(
            r#"<p:pic><p:nvPicPr><p:cNvPr id="{id}" name="Picture {id}"/>"#,
            r#"<p:cNvPicPr/><p:nvPr/></p:nvPicPr>"#,
            r#"<p:blipFill><a:blip r:embed="rId{rid}"/><a:stretch><a:fillRect/></a:stretch></p:blipFill>"#,
            r#"<p:spPr>{xfrm}<a:prstGeom prst="rect"><a:avLst/></a:prstGeom></p:spPr></p:pic>"#
        ),
        id = id,
        rid = media_index,
        xfrm = xfrm(frame),
    )
}

fn slide_rels(media: &[(String, PathBuf)]) -> String {
    let mut xml = format!(
        r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?><Relationships xmlns="{NS_PKG_REL}">"#
    );
    for (i, (name, _)) in media.iter().enumerate() {
        xml.push_str(&format!(
            r#"<Relationship Id="rId{}" Type="{NS_DOC_REL}/image" Target="../media/{name}"/>"#,
            i + 1,
        ));
    }
    xml.push_str(&format!(
        r#"<Relationship Id="rId{}" Type="{NS_DOC_REL}/slideLayout" Target="../slideLayouts/slideLayout1.xml"/>"#,
        media.len() + 1,
    ));
    xml.push_str("</Relationships>");
    xml
}

const NS_A: &str = "http://schemas.openxmlformats.org/drawingml/2006/main";
const NS_R: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships";
const NS_P: &str = "http://schemas.openxmlformats.org/presentationml/2006/main";
const NS_PKG_REL: &str = "http://schemas.openxmlformats.org/package/2006/relationships";
const NS_DOC_REL: &str = "http://schemas.openxmlformats.org/officeDocument/2006/relationships";

const CONTENT_TYPES: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types">"#,
    r#"<Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/>"#,
    r#"<Default Extension="xml" ContentType="application/xml"/>"#,
    r#"<Default Extension="png" ContentType="image/png"/>"#,
    r#"<Default Extension="jpeg" ContentType="image/jpeg"/>"#,
    r#"<Override PartName="/ppt/presentation.xml" ContentType="application/vnd.openxmlformats-officedocument.presentationml.presentation.main+xml"/>"#,
    r#"<Override PartName="/ppt/slideMasters/slideMaster1.xml" ContentType="application/vnd.openxmlformats-officedocument.presentationml.slideMaster+xml"/>"#,
    r#"<Override PartName="/ppt/slideLayouts/slideLayout1.xml" ContentType="application/vnd.openxmlformats-officedocument.presentationml.slideLayout+xml"/>"#,
    r#"<Override PartName="/ppt/slides/slide1.xml" ContentType="application/vnd.openxmlformats-officedocument.presentationml.slide+xml"/>"#,
    r#"<Override PartName="/ppt/theme/theme1.xml" ContentType="application/vnd.openxmlformats-officedocument.theme+xml"/>"#,
    r#"<Override PartName="/docProps/core.xml" ContentType="application/vnd.openxmlformats-package.core-properties+xml"/>"#,
    r#"<Override PartName="/docProps/app.xml" ContentType="application/vnd.openxmlformats-officedocument.extended-properties+xml"/>"#,
    r#"</Types>"#
);

const ROOT_RELS: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">"#,
    r#"<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="ppt/presentation.xml"/>"#,
    r#"<Relationship Id="rId2" Type="http://schemas.openxmlformats.org/package/2006/relationships/metadata/core-properties" Target="docProps/core.xml"/>"#,
    r#"<Relationship Id="rId3" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/extended-properties" Target="docProps/app.xml"/>"#,
    r#"</Relationships>"#
);

const PRESENTATION_RELS: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">"#,
    r#"<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/slideMaster" Target="slideMasters/slideMaster1.xml"/>"#,
    r#"<Relationship Id="rId2" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/slide" Target="slides/slide1.xml"/>"#,
    r#"</Relationships>"#
);

const SLIDE_MASTER: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<p:sldMaster xmlns:a="http://schemas.openxmlformats.org/drawingml/2006/main" xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships" xmlns:p="http://schemas.openxmlformats.org/presentationml/2006/main">"#,
    r#"<p:cSld><p:spTree><p:nvGrpSpPr><p:cNvPr id="1" name=""/><p:cNvGrpSpPr/><p:nvPr/></p:nvGrpSpPr><p:grpSpPr/></p:spTree></p:cSld>"#,
    r#"<p:clrMap bg1="lt1" tx1="dk1" bg2="lt2" tx2="dk2" accent1="accent1" accent2="accent2" accent3="accent3" accent4="accent4" accent5="accent5" accent6="accent6" hlink="hlink" folHlink="folHlink"/>"#,
    r#"<p:sldLayoutIdLst><p:sldLayoutId id="2147483649" r:id="rId1"/></p:sldLayoutIdLst>"#,
    r#"</p:sldMaster>"#
);

const MASTER_RELS: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">"#,
    r#"<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/slideLayout" Target="../slideLayouts/slideLayout1.xml"/>"#,
    r#"<Relationship Id="rId2" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/theme" Target="../theme/theme1.xml"/>"#,
    r#"</Relationships>"#
);

const SLIDE_LAYOUT: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<p:sldLayout xmlns:a="http://schemas.openxmlformats.org/drawingml/2006/main" xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships" xmlns:p="http://schemas.openxmlformats.org/presentationml/2006/main" type="blank">"#,
    r#"<p:cSld><p:spTree><p:nvGrpSpPr><p:cNvPr id="1" name=""/><p:cNvGrpSpPr/><p:nvPr/></p:nvGrpSpPr><p:grpSpPr/></p:spTree></p:cSld>"#,
    r#"<p:clrMapOvr><a:masterClrMapping/></p:clrMapOvr>"#,
    r#"</p:sldLayout>"#
);

const LAYOUT_RELS: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">"#,
    r#"<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/slideMaster" Target="../slideMasters/slideMaster1.xml"/>"#,
    r#"</Relationships>"#
);

// Smallest theme the format accepts: one color scheme, one font scheme,
// and a three-entry format scheme.
const THEME: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<a:theme xmlns:a="http://schemas.openxmlformats.org/drawingml/2006/main" name="Poster">"#,
    r#"<a:themeElements>"#,
    r#"<a:clrScheme name="Poster">"#,
    r#"<a:dk1><a:srgbClr val="000000"/></a:dk1><a:lt1><a:srgbClr val="FFFFFF"/></a:lt1>"#,
    r#"<a:dk2><a:srgbClr val="1F1F1F"/></a:dk2><a:lt2><a:srgbClr val="F2F2F2"/></a:lt2>"#,
    r#"<a:accent1><a:srgbClr val="2E5B9A"/></a:accent1><a:accent2><a:srgbClr val="C0504D"/></a:accent2>"#,
    r#"<a:accent3><a:srgbClr val="9BBB59"/></a:accent3><a:accent4><a:srgbClr val="8064A2"/></a:accent4>"#,
    r#"<a:accent5><a:srgbClr val="4BACC6"/></a:accent5><a:accent6><a:srgbClr val="F79646"/></a:accent6>"#,
    r#"<a:hlink><a:srgbClr val="0000FF"/></a:hlink><a:folHlink><a:srgbClr val="800080"/></a:folHlink>"#,
    r#"</a:clrScheme>"#,
    r#"<a:fontScheme name="Poster">"#,
    r#"<a:majorFont><a:latin typeface="Arial"/><a:ea typeface=""/><a:cs typeface=""/></a:majorFont>"#,
    r#"<a:minorFont><a:latin typeface="Arial"/><a:ea typeface=""/><a:cs typeface=""/></a:minorFont>"#,
    r#"</a:fontScheme>"#,
    r#"<a:fmtScheme name="Poster">"#,
    r#"<a:fillStyleLst><a:solidFill><a:schemeClr val="phClr"/></a:solidFill><a:solidFill><a:schemeClr val="phClr"/></a:solidFill><a:solidFill><a:schemeClr val="phClr"/></a:solidFill></a:fillStyleLst>"#,
    r#"<a:lnStyleLst><a:ln><a:solidFill><a:schemeClr val="phClr"/></a:solidFill></a:ln><a:ln><a:solidFill><a:schemeClr val="phClr"/></a:solidFill></a:ln><a:ln><a:solidFill><a:schemeClr val="phClr"/></a:solidFill></a:ln></a:lnStyleLst>"#,
    r#"<a:effectStyleLst><a:effectStyle><a:effectLst/></a:effectStyle><a:effectStyle><a:effectLst/></a:effectStyle><a:effectStyle><a:effectLst/></a:effectStyle></a:effectStyleLst>"#,
    r#"<a:bgFillStyleLst><a:solidFill><a:schemeClr val="phClr"/></a:solidFill><a:solidFill><a:schemeClr val="phClr"/></a:solidFill><a:solidFill><a:schemeClr val="phClr"/></a:solidFill></a:bgFillStyleLst>"#,
    r#"</a:fmtScheme>"#,
    r#"</a:themeElements>"#,
    r#"</a:theme>"#
);

const APP_PROPS: &str = concat!(
    r#"<?xml version="1.0" encoding="UTF-8" standalone="yes"?>"#,
    r#"<Properties xmlns="http://schemas.openxmlformats.org/officeDocument/2006/extended-properties">"#,
    r#"<Application>posterkit</Application>"#,
    r#"</Properties>"#
);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    TextBox,
    Picture,
}

/// A shape read back from a saved document: frame in pixels plus paragraph
/// texts in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeInfo {
    pub kind: ShapeKind,
    pub frame: Rect,
    pub paragraphs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReadDoc {
    pub width_px: f64,
    pub height_px: f64,
    pub shapes: Vec<ShapeInfo>,
}

impl ReadDoc {
    /// All paragraph text in document order, newline-joined.
    pub fn text(&self) -> String {
        let mut lines = Vec::new();
        for shape in &self.shapes {
            for p in &shape.paragraphs {
                if !p.trim().is_empty() {
                    lines.push(p.clone());
                }
            }
        }
        lines.join("\n")
    }
}

fn read_zip_part(archive: &mut zip::ZipArchive<std::fs::File>, name: &str) -> Result<String> {
    use std::io::Read as _;
    let mut file = archive
        .by_name(name)
        .map_err(|e| Error::Render(format!("missing part {name}: {e}")))?;
    let mut body = String::new();
    file.read_to_string(&mut body)?;
    Ok(body)
}

/// Open a saved presentation and recover slide size plus per-shape frames
/// and text, in document order.
pub fn read_document(path: &Path) -> Result<ReadDoc> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Render(format!("cannot open {}: {e}", path.display())))?;
    let mut archive =
        zip::ZipArchive::new(file).map_err(|e| Error::Render(format!("not a zip archive: {e}")))?;

    let presentation = read_zip_part(&mut archive, "ppt/presentation.xml")?;
    let (mut width_px, mut height_px) = (0.0, 0.0);
    {
        let mut reader = quick_xml::Reader::from_str(&presentation);
        loop {
            match reader.read_event().map_err(|e| Error::Render(format!("bad xml: {e}")))? {
                Event::Empty(e) | Event::Start(e) if e.local_name().as_ref() == b"sldSz" => {
                    for attr in e.attributes().flatten() {
                        let v: i64 = String::from_utf8_lossy(&attr.value).parse().unwrap_or(0);
                        match attr.key.as_ref() {
                            b"cx" => width_px = px(v),
                            b"cy" => height_px = px(v),
                            _ => {}
                        }
                    }
                }
                Event::Eof => break,
                _ => {}
            }
        }
    }

    let slide = read_zip_part(&mut archive, "ppt/slides/slide1.xml")?;
    let shapes = parse_shapes(&slide)?;
    Ok(ReadDoc { width_px, height_px, shapes })
}

fn parse_shapes(slide_xml: &str) -> Result<Vec<ShapeInfo>> {
    let mut reader = quick_xml::Reader::from_str(slide_xml);
    let mut shapes: Vec<ShapeInfo> = Vec::new();
    let mut current: Option<(ShapeKind, Rect, bool, Vec<String>)> = None;
    let mut in_text = false;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| Error::Render(format!("bad slide xml: {e}")))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let local = e.local_name();
                let empty = matches!(event, Event::Empty(_));
                match local.as_ref() {
                    b"sp" if !empty => current = Some((ShapeKind::TextBox, Rect::default(), false, vec![])),
                    b"pic" if !empty => current = Some((ShapeKind::Picture, Rect::default(), false, vec![])),
                    b"off" => {
                        if let Some((_, frame, placed, _)) = current.as_mut() {
                            if !*placed {
                                for attr in e.attributes().flatten() {
                                    let v: i64 =
                                        String::from_utf8_lossy(&attr.value).parse().unwrap_or(0);
                                    match attr.key.as_ref() {
                                        b"x" => frame.x = px(v),
                                        b"y" => frame.y = px(v),
                                        _ => {}
                                    }
                                }
                            }
                        }
                    }
                    b"ext" => {
                        if let Some((_, frame, placed, _)) = current.as_mut() {
                            if !*placed {
                                for attr in e.attributes().flatten() {
                                    let v: i64 =
                                        String::from_utf8_lossy(&attr.value).parse().unwrap_or(0);
                                    match attr.key.as_ref() {
                                        b"cx" => frame.w = px(v),
                                        b"cy" => frame.h = px(v),
                                        _ => {}
                                    }
                                }
                                *placed = true;
                            }
                        }
                    }
                    b"p" if !empty => {
                        if let Some((_, _, _, paragraphs)) = current.as_mut() {
                            paragraphs.push(String::new());
                        }
                    }
                    b"t" if !empty => in_text = true,
                    _ => {}
                }
            }
            Event::Text(ref t) if in_text => {
                if let Some((_, _, _, paragraphs)) = current.as_mut() {
                    let raw = String::from_utf8_lossy(t.as_ref()).into_owned();
                    let text = unescape(&raw).map(Cow::into_owned).unwrap_or(raw);
                    if let Some(last) = paragraphs.last_mut() {
                        last.push_str(&text);
                    } else {
                        paragraphs.push(text);
                    }
                }
            }
            // Entity references inside text arrive as their own events.
            Event::GeneralRef(ref r) if in_text => {
                if let Some((_, _, _, paragraphs)) = current.as_mut() {
                    let name = String::from_utf8_lossy(r.as_ref()).into_owned();
                    let resolved = match name.as_str() {
                        "amp" => "&".to_string(),
                        "lt" => "<".to_string(),
                        "gt" => ">".to_string(),
                        "quot" => "\"".to_string(),
                        "apos" => "'".to_string(),
                        _ => r
                            .resolve_char_ref()
                            .ok()
                            .flatten()
                            .map(String::from)
                            .unwrap_or_default(),
                    };
                    if let Some(last) = paragraphs.last_mut() {
                        last.push_str(&resolved);
                    } else {
                        paragraphs.push(resolved);
                    }
                }
            }
            Event::End(ref e) => match e.local_name().as_ref() {
                b"sp" | b"pic" => {
                    if let Some((kind, frame, _, paragraphs)) = current.take() {
                        shapes.push(ShapeInfo { kind, frame, paragraphs });
                    }
                }
                b"t" => in_text = false,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(shapes)
}
