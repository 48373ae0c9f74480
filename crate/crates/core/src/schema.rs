//! Stateful screen schemas: composition, canonical bytes, parsing and the
//! compact text form handed to the language model.

use std::cmp::Ordering;

use serde::Deserialize;

use crate::canonical::{quantize4, Canon};
use crate::cursor::{detect_cursor, CnnParams};
use crate::error::{Error, Result};
use crate::frameio::{Clip, Frame};
use crate::keyframe::select_keyframes;
use crate::ocr::{match_menu_item, normalize_label, OcrBackend, OcrResult};
use crate::regions::{changed_regions, Rect};

pub const SCHEMA_VERSION: &str = "1";
pub const FILE_EXTENSION: &str = "schema.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    InitialFrame,
    ChangedRegion,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::InitialFrame => "initial_frame",
            Source::ChangedRegion => "changed_region",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ElementEntry {
    pub bbox: Rect,
    pub text: String,
    pub matched_item: Option<String>,
    pub match_score: Option<f64>,
    pub confidence: f64,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CursorMark {
    pub x: usize,
    pub y: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp_ms: u64,
    pub is_initial: bool,
    pub cursor: Option<CursorMark>,
    pub elements: Vec<ElementEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct ClipSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScreenSchema {
    pub version: String,
    pub clip_id: String,
    pub resolution: Resolution,
    pub clip_span: ClipSpan,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaConfig {
    pub delta: u8,
    pub k: usize,
    pub min_area: usize,
    pub merge_gap: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            delta: 30,
            k: 5,
            min_area: 25,
            merge_gap: 4,
        }
    }
}

fn element_order(a: &ElementEntry, b: &ElementEntry) -> Ordering {
    (a.bbox.y, a.bbox.x, &a.text, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, &b.text, b.bbox.w, b.bbox.h))
}

fn to_element(r: OcrResult, source: Source, vocab: &[String]) -> Result<ElementEntry> {
    let matched = if vocab.is_empty() || normalize_label(&r.text).is_empty() {
        None
    } else {
        match_menu_item(&r.text, vocab)?
    };
    let (matched_item, match_score) = match matched {
        Some((item, score)) => (Some(item), Some(quantize4(score))),
        None => (None, None),
    };
    Ok(ElementEntry {
        bbox: r.bbox,
        text: r.text,
        matched_item,
        match_score,
        confidence: quantize4(r.confidence),
        source,
    })
}

fn frame_entry(
    frame: &Frame,
    is_initial: bool,
    results: Vec<OcrResult>,
    cursor: Option<CursorMark>,
    vocab: &[String],
) -> Result<FrameEntry> {
    let source = if is_initial {
        Source::InitialFrame
    } else {
        Source::ChangedRegion
    };
    let mut elements = results
        .into_iter()
        .map(|r| to_element(r, source, vocab))
        .collect::<Result<Vec<_>>>()?;
    elements.sort_by(element_order);
    Ok(FrameEntry {
        index: frame.index,
        timestamp_ms: frame.timestamp_ms,
        is_initial,
        cursor,
        elements,
    })
}

fn key_frame_work(
    clip: &Clip,
    t: usize,
    cfg: &SchemaConfig,
    ocr: &dyn OcrBackend,
    cursor: Option<&CnnParams>,
) -> Result<(Vec<OcrResult>, Option<CursorMark>)> {
    let (prev, cur) = (&clip.frames[t - 1], &clip.frames[t]);
    let rects = changed_regions(prev, cur, cfg.delta, cfg.min_area, cfg.merge_gap)?;
    let mut results = Vec::new();
    for rect in rects {
        let found = ocr
            .recognize(cur, rect)
            .map_err(|e| e.context(format!("frame {t} rect ({},{},{},{})", rect.x, rect.y, rect.w, rect.h)))?;
        results.extend(found);
    }
    let mark = match cursor {
        Some(params) => {
            let p = detect_cursor(params, cur).map_err(|e| e.context(format!("frame {t} cursor")))?;
            Some(CursorMark {
                x: p.x,
                y: p.y,
                confidence: quantize4(p.confidence),
            })
        }
        None => None,
    };
    Ok((results, mark))
}

/// Builds the schema for one clip. Key frames are processed on scoped
/// threads and merged in index order.
pub fn compose_schema(
    clip: &Clip,
    cfg: &SchemaConfig,
    ocr: &dyn OcrBackend,
    cursor: Option<&CnnParams>,
    vocab: &[String],
) -> Result<ScreenSchema> {
    let selection = select_keyframes(clip, cfg.k)?;
    let first = &clip.frames[0];
    let initial_results = ocr
        .recognize(first, Rect::full(first))
        .map_err(|e| e.context(format!("frame {} (initial)", first.index)))?;

    let work: Vec<Result<(Vec<OcrResult>, Option<CursorMark>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = selection
            .indices
            .iter()
            .map(|&t| scope.spawn(move || key_frame_work(clip, t, cfg, ocr, cursor)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Argument("key-frame worker panicked".into()))))
            .collect()
    });

    let mut frames = vec![frame_entry(first, true, initial_results, None, vocab)?];
    for (&t, outcome) in selection.indices.iter().zip(work) {
        let (results, mark) = outcome?;
        frames.push(frame_entry(&clip.frames[t], false, results, mark, vocab)?);
    }
    let (width, height) = clip.resolution();
    let schema = ScreenSchema {
        version: SCHEMA_VERSION.to_string(),
        clip_id: clip.clip_id.clone(),
        resolution: Resolution { width, height },
        clip_span: ClipSpan {
            start_ms: clip.start_ms,
            end_ms: clip.end_ms,
        },
        frames,
    };
    schema.validate()?;
    Ok(schema)
}

fn rect_canon(r: &Rect) -> Canon {
    Canon::obj([
        ("h", Canon::uint(r.h)),
        ("w", Canon::uint(r.w)),
        ("x", Canon::uint(r.x)),
        ("y", Canon::uint(r.y)),
    ])
}

impl ElementEntry {
    fn to_canon(&self) -> Canon {
        Canon::obj([
            ("bbox", rect_canon(&self.bbox)),
            ("confidence", Canon::Fixed(self.confidence)),
            ("match_score", Canon::opt(self.match_score.map(Canon::Fixed))),
            ("matched_item", Canon::opt(self.matched_item.clone().map(Canon::Str))),
            ("source", Canon::str(self.source.as_str())),
            ("text", Canon::str(&self.text)),
        ])
    }
}

impl FrameEntry {
    fn to_canon(&self) -> Canon {
        let cursor = self.cursor.map(|c| {
            Canon::obj([
                ("confidence", Canon::Fixed(c.confidence)),
                ("x", Canon::uint(c.x)),
                ("y", Canon::uint(c.y)),
            ])
        });
        Canon::obj([
            ("cursor", Canon::opt(cursor)),
            ("elements", Canon::Arr(self.elements.iter().map(ElementEntry::to_canon).collect())),
            ("index", Canon::uint(self.index)),
            ("is_initial", Canon::Bool(self.is_initial)),
            ("timestamp_ms", Canon::uint(self.timestamp_ms)),
        ])
    }
}

fn check_score(field: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Serialization(format!("{field} is not finite")));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation(field, format!("{v} outside [0, 1]")));
    }
    if quantize4(v) != v {
        return Err(Error::validation(field, format!("{v} has more than four decimals")));
    }
    Ok(())
}

impl ScreenSchema {
    pub fn to_canon(&self) -> Canon {
        Canon::obj([
            (
                "clip_span",
                Canon::obj([
                    ("end_ms", Canon::uint(self.clip_span.end_ms)),
                    ("start_ms", Canon::uint(self.clip_span.start_ms)),
                ]),
            ),
            ("clip_id", Canon::str(&self.clip_id)),
            ("frames", Canon::Arr(self.frames.iter().map(FrameEntry::to_canon).collect())),
            (
                "resolution",
                Canon::obj([
                    ("height", Canon::uint(self.resolution.height)),
                    ("width", Canon::uint(self.resolution.width)),
                ]),
            ),
            ("version", Canon::str(&self.version)),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Version(self.version.clone()));
        }
        let Resolution { width, height } = self.resolution;
        if width == 0 || height == 0 {
            return Err(Error::validation("resolution", "zero-sized resolution"));
        }
        if self.clip_span.start_ms > self.clip_span.end_ms {
            return Err(Error::validation("clip_span", "start_ms after end_ms"));
        }
        let Some(first) = self.frames.first() else {
            return Err(Error::validation("frames", "no frame entries"));
        };
        if !first.is_initial {
            return Err(Error::validation("frames", "first entry is not the initial frame"));
        }
        for (pos, f) in self.frames.iter().enumerate() {
            if pos > 0 {
                if f.is_initial {
                    return Err(Error::validation("is_initial", format!("entry {pos} is a second initial frame")));
                }
                if f.index <= self.frames[pos - 1].index {
                    return Err(Error::validation("index", format!("entry {pos} is not in ascending order")));
                }
            }
            if let Some(c) = f.cursor {
                if c.x >= width || c.y >= height {
                    return Err(Error::validation("cursor", format!("({},{}) outside the frame", c.x, c.y)));
                }
                check_score("cursor.confidence", c.confidence)?;
            }
            let expected = if f.is_initial {
                Source::InitialFrame
            } else {
                Source::ChangedRegion
            };
            for e in &f.elements {
                if e.bbox.is_empty() || !e.bbox.fits_in(width, height) {
                    return Err(Error::validation("bbox", format!("{:?} outside {width}x{height}", e.bbox)));
                }
                if e.source != expected {
                    return Err(Error::validation("source", format!("{} in frame {}", e.source.as_str(), f.index)));
                }
                check_score("confidence", e.confidence)?;
                if let Some(s) = e.match_score {
                    check_score("match_score", s)?;
                }
                let matched = e.match_score.is_some_and(|s| s >= crate::ocr::MATCH_THRESHOLD);
                if e.matched_item.is_some() != matched {
                    return Err(Error::validation(
                        "matched_item",
                        format!("{:?} must be present exactly when match_score >= 0.8", e.text),
                    ));
                }
            }
            for pair in f.elements.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                if (a.bbox.y, a.bbox.x, &a.text) > (b.bbox.y, b.bbox.x, &b.text) {
                    return Err(Error::validation("elements", format!("frame {} elements out of order", f.index)));
                }
            }
        }
        Ok(())
    }
}

/// Canonical bytes, one trailing newline.
pub fn serialize_canonical(schema: &ScreenSchema) -> Result<Vec<u8>> {
    schema.validate()?;
    let mut line = schema.to_canon().to_line()?;
    line.push('\n');
    Ok(line.into_bytes())
}

pub fn parse_schema(bytes: &[u8]) -> Result<ScreenSchema> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::validation("document", e.to_string()))?;
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(Error::Version(v.clone())),
        Some(other) => return Err(Error::Version(other.to_string())),
        None => return Err(Error::validation("version", "missing")),
    }
    let schema: ScreenSchema = serde_json::from_value(value).map_err(|e| Error::validation("document", e.to_string()))?;
    schema.validate()?;
    Ok(schema)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Compact text form: a header line, then one line per frame entry with its
/// elements indented beneath it.
pub fn render_prompt_schema(schema: &ScreenSchema) -> String {
    let mut out = format!(
        "clip {} resolution={}x{} span={}-{}ms\n",
        json_str(&schema.clip_id),
        schema.resolution.width,
        schema.resolution.height,
        schema.clip_span.start_ms,
        schema.clip_span.end_ms
    );
    for f in &schema.frames {
        match f.cursor {
            Some(c) => out.push_str(&format!("t={} cursor=({},{})\n", f.timestamp_ms, c.x, c.y)),
            None => out.push_str(&format!("t={} cursor=none\n", f.timestamp_ms)),
        }
        for e in &f.elements {
            let b = e.bbox;
            out.push_str(&format!("  [{},{},{},{}] {}", b.y, b.x, b.w, b.h, json_str(&e.text)));
            if let Some(m) = &e.matched_item {
                out.push_str(&format!(" (-> {})", json_str(m)));
            }
            out.push('\n');
        }
    }
    out
}
