//! Annotation XML for counted figures and the selected 10HPF.
//!
//! ```xml
//! <annotation slide_id="s1" mpp="0.25">
//!   <figure id="1" x="812.500" y="90.000" width_um="9.125">
//!     <contour><point x="800.000" y="84.000"/>...</contour>
//!   </figure>
//!   <hpf x="4000.000" y="3900.000" side_px="6157.922" count="1">
//!     <member id="1"/>
//!   </hpf>
//! </annotation>
//! ```
//!
//! Coordinates, widths and `side_px` are written with three decimals; `mpp`
//! is written in shortest round-trip form. Documents compare equal after
//! [`AnnotationDoc::quantized`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Cursor;
use std::path::Path;

use quick_xml::events::{BytesDecl, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::hpf::HpfRegion;
use crate::postprocess::{convex_hull, SlideFigures};
use crate::units::{MicronsPerPixel, Point2};

/// Rounds to the three decimals used on disk.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.3}").parse().expect("formatted float parses")
}

fn quantize_point(p: Point2) -> Point2 {
    Point2::new(quantize(p.x), quantize(p.y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedFigure {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub width_um: f64,
    pub contour: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedHpf {
    pub x: f64,
    pub y: f64,
    pub side_px: f64,
    pub count: usize,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub slide_id: String,
    pub mpp: MicronsPerPixel,
    pub figures: Vec<AnnotatedFigure>,
    pub hpf: Option<AnnotatedHpf>,
}

impl AnnotationDoc {
    pub fn new(slide_id: impl Into<String>, mpp: MicronsPerPixel) -> Self {
        Self {
            slide_id: slide_id.into(),
            mpp,
            figures: Vec::new(),
            hpf: None,
        }
    }

    /// One figure per merged center, ids starting at 1 in center order.
    /// A center built from several instances carries the convex hull of
    /// their contours and the largest member width.
    pub fn from_results(
        slide_id: impl Into<String>,
        mpp: MicronsPerPixel,
        figures: &SlideFigures,
        hpf: Option<&HpfRegion>,
    ) -> Self {
        let mut doc = Self::new(slide_id, mpp);
        for (i, (center, members)) in figures.centers.iter().zip(&figures.clusters).enumerate() {
            let insts: Vec<_> = members.iter().map(|&m| &figures.instances[m]).collect();
            let contour = match insts.as_slice() {
                [one] => one.contour_fullres(),
                many => convex_hull(&many.iter().flat_map(|m| m.contour_fullres()).collect::<Vec<_>>()),
            };
            doc.figures.push(AnnotatedFigure {
                id: i as u32 + 1,
                x: center.x,
                y: center.y,
                width_um: insts.iter().map(|m| m.width_um).fold(0.0, f64::max),
                contour,
            });
        }
        doc.hpf = hpf.and_then(|h| {
            h.center.map(|c| AnnotatedHpf {
                x: c.x,
                y: c.y,
                side_px: 2.0 * h.radius_px,
                count: h.count,
                members: h.member_ids.iter().map(|&m| m as u32 + 1).collect(),
            })
        });
        doc
    }

    pub fn quantized(&self) -> Self {
        Self {
            slide_id: self.slide_id.clone(),
            mpp: self.mpp,
            figures: self
                .figures
                .iter()
                .map(|f| AnnotatedFigure {
                    id: f.id,
                    x: quantize(f.x),
                    y: quantize(f.y),
                    width_um: quantize(f.width_um),
                    contour: f.contour.iter().copied().map(quantize_point).collect(),
                })
                .collect(),
            hpf: self.hpf.as_ref().map(|h| AnnotatedHpf {
                x: quantize(h.x),
                y: quantize(h.y),
                side_px: quantize(h.side_px),
                count: h.count,
                members: h.members.clone(),
            }),
        }
    }

    /// Schema invariants shared by reader and writer.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for f in &self.figures {
            if !ids.insert(f.id) {
                return Err(Error::xml("figure", format!("duplicate id {}", f.id)));
            }
            let finite = [f.x, f.y, f.width_um].iter().all(|v| v.is_finite())
                && f.contour.iter().all(|p| p.is_finite());
            if !finite {
                return Err(Error::xml("figure", format!("figure {} has non-finite values", f.id)));
            }
        }
        if let Some(h) = &self.hpf {
            if h.count != h.members.len() {
                return Err(Error::xml(
                    "hpf",
                    format!("count {} but {} members", h.count, h.members.len()),
                ));
            }
            if let Some(m) = h.members.iter().find(|m| !ids.contains(*m)) {
                return Err(Error::xml("member", format!("id {m} is not a figure")));
            }
            if ![h.x, h.y, h.side_px].iter().all(|v| v.is_finite()) || h.side_px <= 0.0 {
                return Err(Error::xml("hpf", "bad geometry"));
            }
        }
        Ok(())
    }

    pub fn to_xml_string(&self) -> Result<String> {
        self.validate()?;
        let mut writer = Writer::new_with_indent(Cursor::new(Vec::new()), b' ', 2);
        let io = |e: std::io::Error| Error::xml("annotation", e.to_string());
        writer
            .write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
            .map_err(io)?;
        writer
            .create_element("annotation")
            .with_attribute(("slide_id", self.slide_id.as_str()))
            .with_attribute(("mpp", self.mpp.value().to_string().as_str()))
            .write_inner_content(|w| {
                for f in &self.figures {
                    w.create_element("figure")
                        .with_attribute(("id", f.id.to_string().as_str()))
                        .with_attribute(("x", format!("{:.3}", f.x).as_str()))
                        .with_attribute(("y", format!("{:.3}", f.y).as_str()))
                        .with_attribute(("width_um", format!("{:.3}", f.width_um).as_str()))
                        .write_inner_content(|w| {
                            let contour = w.create_element("contour");
                            if f.contour.is_empty() {
                                contour.write_empty()?;
                                return Ok(());
                            }
                            contour.write_inner_content(|w| {
                                for p in &f.contour {
                                    w.create_element("point")
                                        .with_attribute(("x", format!("{:.3}", p.x).as_str()))
                                        .with_attribute(("y", format!("{:.3}", p.y).as_str()))
                                        .write_empty()?;
                                }
                                Ok(())
                            })?;
                            Ok(())
                        })?;
                }
                if let Some(h) = &self.hpf {
                    let el = w
                        .create_element("hpf")
                        .with_attribute(("x", format!("{:.3}", h.x).as_str()))
                        .with_attribute(("y", format!("{:.3}", h.y).as_str()))
                        .with_attribute(("side_px", format!("{:.3}", h.side_px).as_str()))
                        .with_attribute(("count", h.count.to_string().as_str()));
                    if h.members.is_empty() {
                        el.write_empty()?;
                    } else {
                        el.write_inner_content(|w| {
                            for m in &h.members {
                                w.create_element("member")
                                    .with_attribute(("id", m.to_string().as_str()))
                                    .write_empty()?;
                            }
                            Ok(())
                        })?;
                    }
                }
                Ok(())
            })
            .map_err(io)?;
        let mut bytes = writer.into_inner().into_inner();
        bytes.push(b'\n');
        String::from_utf8(bytes).map_err(|e| Error::xml("annotation", e.to_string()))
    }

    pub fn from_xml_str(text: &str) -> Result<Self> {
        parse(text)
    }
}

pub fn write_annotation_xml(doc: &AnnotationDoc, path: &Path) -> Result<()> {
    let text = doc.to_xml_string()?;
    fs::write(path, text).context(|| format!("writing {}", path.display()))
}

pub fn read_annotation_xml(path: &Path) -> Result<AnnotationDoc> {
    let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    AnnotationDoc::from_xml_str(&text)
}

struct Attrs {
    element: String,
    values: HashMap<String, String>,
}

impl Attrs {
    fn read(e: &BytesStart<'_>) -> Result<Self> {
        let element = String::from_utf8_lossy(e.name().as_ref()).into_owned();
        let mut values = HashMap::new();
        for attr in e.attributes() {
            let attr = attr.map_err(|err| Error::xml(&element, err.to_string()))?;
            let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
            let value = attr
                .unescape_value()
                .map_err(|err| Error::xml(&element, err.to_string()))?
                .into_owned();
            values.insert(key, value);
        }
        Ok(Self { element, values })
    }

    fn text(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::xml(&self.element, format!("missing attribute `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.text(key)?;
        raw.parse()
            .map_err(|_| Error::xml(&self.element, format!("attribute `{key}` has bad value `{raw}`")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(Error::xml(&self.element, format!("attribute `{key}` is not finite")));
        }
        Ok(v)
    }
}

fn parse(text: &str) -> Result<AnnotationDoc> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<String> = Vec::new();
    let mut doc: Option<AnnotationDoc> = None;
    let mut root_closed = false;
    let mut contour_seen = false;

    loop {
        let event = reader.read_event().map_err(|e| {
            Error::xml(
                stack.last().map(String::as_str).unwrap_or("annotation"),
                format!("malformed xml at byte {}: {e}", reader.error_position()),
            )
        })?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            Event::End(_) => {
                let name = stack.pop();
                if name.as_deref() == Some("figure") && !contour_seen {
                    return Err(Error::xml("figure", "missing <contour>"));
                }
                if stack.is_empty() {
                    root_closed = true;
                }
                continue;
            }
            Event::Text(t) => {
                if !t.iter().all(u8::is_ascii_whitespace) {
                    let el = stack.last().map(String::as_str).unwrap_or("annotation");
                    return Err(Error::xml(el, "unexpected text content"));
                }
                continue;
            }
            Event::Eof => break,
            _ => continue,
        };
        let e = start.expect("start or empty");
        let attrs = Attrs::read(&e)?;
        let name = attrs.element.clone();
        let parent = stack.last().map(String::as_str);
        match (name.as_str(), parent) {
            ("annotation", None) if doc.is_none() && !root_closed => {
                let mpp = MicronsPerPixel::new(attrs.real("mpp")?)
                    .map_err(|e| Error::xml("annotation", e.to_string()))?;
                doc = Some(AnnotationDoc::new(attrs.text("slide_id")?, mpp));
            }
            ("figure", Some("annotation")) => {
                let d = doc.as_mut().expect("root parsed");
                if d.hpf.is_some() {
                    return Err(Error::xml("figure", "figures must precede <hpf>"));
                }
                if empty {
                    return Err(Error::xml("figure", "missing <contour>"));
                }
                contour_seen = false;
                d.figures.push(AnnotatedFigure {
                    id: attrs.parse("id")?,
                    x: attrs.real("x")?,
                    y: attrs.real("y")?,
                    width_um: attrs.real("width_um")?,
                    contour: Vec::new(),
                });
            }
            ("contour", Some("figure")) => {
                if contour_seen {
                    return Err(Error::xml("contour", "more than one contour in a figure"));
                }
                contour_seen = true;
            }
            ("point", Some("contour")) => {
                let p = Point2::new(attrs.real("x")?, attrs.real("y")?);
                let d = doc.as_mut().expect("root parsed");
                d.figures.last_mut().expect("inside figure").contour.push(p);
            }
            ("hpf", Some("annotation")) => {
                let d = doc.as_mut().expect("root parsed");
                if d.hpf.is_some() {
                    return Err(Error::xml("hpf", "more than one <hpf>"));
                }
                d.hpf = Some(AnnotatedHpf {
                    x: attrs.real("x")?,
                    y: attrs.real("y")?,
                    side_px: attrs.real("side_px")?,
                    count: attrs.parse("count")?,
                    members: Vec::new(),
                });
            }
            ("member", Some("hpf")) => {
                let id = attrs.parse("id")?;
                let d = doc.as_mut().expect("root parsed");
                d.hpf.as_mut().expect("inside hpf").members.push(id);
            }
            (_, Some(p)) => {
                return Err(Error::xml(&name, format!("unexpected inside <{p}>")));
            }
            (_, None) => {
                return Err(Error::xml(&name, "unexpected top-level element"));
            }
        }
        if !empty {
            stack.push(name);
        }
    }
    if !stack.is_empty() {
        return Err(Error::xml(&stack[stack.len() - 1], "element not closed"));
    }
    let doc = doc.ok_or_else(|| Error::xml("annotation", "missing root element"))?;
    doc.validate()?;
    Ok(doc)
}
