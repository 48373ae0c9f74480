//! Deterministic fixture corpus shared by the integration tests.
//!
//! Everything under `tests/fixtures/` except the metric oracle output is
//! produced here. `UPDATE_GOLDEN=1 cargo test --test golden` rewrites it.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use screen_schema::frameio::{Clip, Fps, Frame};
use screen_schema::memory::{Memory, MemoryConfig};
use screen_schema::mllm::{
    build_prompt, request_digest, session_run, Backend, DecodeParams, GenRequest, MockBackend, SessionContext, Task,
    Transcript,
};
use screen_schema::ocr::{crop_digest, MockOcr, MockOcrEntry, MockOcrScript, OcrResult};
use screen_schema::regions::Rect;
use screen_schema::schema::{compose_schema, render_prompt_schema, SchemaConfig};
use screen_schema::taxonomy::ToolTaxonomy;

pub const SIZE: usize = 64;
pub const FRAMES: usize = 12;
pub const FPS: u64 = 10;
pub const CLIP_IDS: [&str; 3] = ["clip_00", "clip_01", "clip_02"];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

fn paint(frame: &mut Frame, r: Rect, value: u8) {
    for y in r.y..r.bottom() {
        frame.luma[y * frame.width + r.x..y * frame.width + r.right()].fill(value);
    }
}

pub const MENU_STRIP: Rect = Rect::new(0, 0, SIZE, 9);
pub const POPUP: Rect = Rect::new(16, 20, 24, 12);
pub const HIGHLIGHT: Rect = Rect::new(16, 26, 24, 6);
pub const PANEL: Rect = Rect::new(8, 30, 30, 14);
pub const SIDEBAR: Rect = Rect::new(40, 12, 20, 40);
pub const SIDEBAR_ROW: Rect = Rect::new(42, 20, 16, 5);

/// Frame `i` of fixture clip `clip`.
pub fn fixture_frame(clip: usize, i: usize) -> Frame {
    let fps = Fps::new(FPS, 1).unwrap();
    let mut f = Frame::filled(SIZE, SIZE, 200, fps.timestamp_ms(i), i);
    paint(&mut f, MENU_STRIP, 60);
    match clip {
        0 => {
            if i >= 2 {
                paint(&mut f, POPUP, 255);
            }
            if i >= 7 {
                paint(&mut f, HIGHLIGHT, 120);
            }
        }
        1 => {
            if (3..9).contains(&i) {
                paint(&mut f, PANEL, 240);
            }
        }
        _ => {
            if i >= 5 {
                paint(&mut f, SIDEBAR, 90);
            }
            if i >= 6 {
                paint(&mut f, SIDEBAR_ROW, 250);
            }
        }
    }
    f
}

pub fn fixture_clip(clip: usize) -> Clip {
    fixture_clip_with(clip, FRAMES)
}

/// The same clip with `n` frames; frames past the last change repeat it.
pub fn fixture_clip_with(clip: usize, n: usize) -> Clip {
    Clip::new(CLIP_IDS[clip], (0..n).map(|i| fixture_frame(clip, i)).collect()).unwrap()
}

fn res(text: &str, bbox: Rect, confidence: f64) -> OcrResult {
    OcrResult {
        text: text.to_string(),
        bbox,
        confidence,
    }
}

/// Scripted OCR. Frame 0 is shared by all clips and keyed without a digest;
/// key-frame crops are keyed by content.
pub fn ocr_script() -> MockOcrScript {
    let menu = vec![
        res("File", Rect::new(2, 1, 12, 6), 0.98),
        res("Edit", Rect::new(18, 1, 12, 6), 0.97),
        res("Image", Rect::new(34, 1, 14, 6), 0.95),
        res("Layer", Rect::new(50, 1, 12, 6), 0.96),
    ];
    let mut entries = vec![MockOcrEntry {
        frame: 0,
        rect: Rect::new(0, 0, SIZE, SIZE),
        crop_sha256: None,
        results: menu,
    }];
    let keyed: [(usize, usize, Rect, Vec<OcrResult>); 5] = [
        (
            0,
            2,
            POPUP,
            vec![
                res("Brush Tool", Rect::new(17, 21, 20, 4), 0.91),
                res("Pencil Tol", Rect::new(17, 26, 20, 4), 0.62),
            ],
        ),
        (0, 7, HIGHLIGHT, vec![res("Pencil Tool", Rect::new(17, 27, 20, 4), 0.88)]),
        (
            1,
            3,
            PANEL,
            vec![
                res("Lasso Tool", Rect::new(9, 31, 24, 5), 0.95),
                res("Magnetic Lasso Tool", Rect::new(9, 37, 28, 5), 0.9),
            ],
        ),
        (
            2,
            5,
            SIDEBAR,
            vec![
                res("Layers", Rect::new(41, 13, 16, 5), 0.97),
                res("Layer 1", Rect::new(41, 20, 16, 5), 0.8),
            ],
        ),
        (2, 6, SIDEBAR_ROW, vec![res("Layer 1 copy", SIDEBAR_ROW, 0.75)]),
    ];
    for (clip, frame, rect, results) in keyed {
        entries.push(MockOcrEntry {
            frame,
            rect,
            crop_sha256: Some(crop_digest(&fixture_frame(clip, frame), rect).unwrap()),
            results,
        });
    }
    MockOcrScript { entries }
}

pub fn mock_ocr() -> MockOcr {
    MockOcr::from_script(ocr_script()).unwrap()
}

pub fn vocab() -> Vec<String> {
    ToolTaxonomy::embedded().tools().to_vec()
}

pub const ANSWERS: [&str; 3] = [
    r#"{"description": "Opens the brush flyout and switches to the Pencil Tool", "category": "Pen", "tool": "Pencil Tool"}"#,
    "The user picks a lasso.\n{\"description\":\"Selects the Magnetic Lasso Tool from the lasso group\",\"category\":\"Lasso\",\"tool\":\"Magnetic Lasso Tool\"}",
    r#"{"description": "Duplicates the active layer", "category": "Layers"}"#,
];

pub fn memory_config(alpha: f64, seed: u64) -> MemoryConfig {
    MemoryConfig {
        q_tokens: 4,
        dim: 8,
        alpha,
        seed,
    }
}

/// Mock script answering each clip's current-action prompt with `ANSWERS`.
pub fn mllm_script_json() -> String {
    let ocr = mock_ocr();
    let vocab = vocab();
    let mut entries = Vec::new();
    for (i, answer) in ANSWERS.iter().enumerate() {
        let schema = compose_schema(&fixture_clip(i), &SchemaConfig::default(), &ocr, None, &vocab).unwrap();
        let schema_text = render_prompt_schema(&schema);
        let req = GenRequest {
            prompt: build_prompt(Task::CurrentAction, &schema_text),
            schema_text,
            decode: DecodeParams::default(),
            embedding: None,
        };
        entries.push(serde_json::json!({"digest": request_digest(&req), "answer": answer}));
    }
    serde_json::to_string_pretty(&serde_json::json!({"strict": true, "entries": entries})).unwrap() + "\n"
}

pub fn run_fixture_session(backend: &dyn Backend, alpha: f64, seed: u64) -> Transcript {
    let ocr = mock_ocr();
    let vocab = vocab();
    let taxonomy = ToolTaxonomy::embedded();
    let ctx = SessionContext {
        schema: SchemaConfig::default(),
        ocr: &ocr,
        cursor: None,
        vocab: &vocab,
        taxonomy: &taxonomy,
        decode: DecodeParams::default(),
    };
    let clips: Vec<Clip> = (0..3).map(fixture_clip).collect();
    let mut memory = Memory::new(memory_config(alpha, seed)).unwrap();
    session_run(&clips, backend, &mut memory, Task::CurrentAction, &ctx).unwrap()
}

pub fn load_mock_backend() -> MockBackend {
    MockBackend::load(&fixtures_dir().join("mllm_script.json")).unwrap()
}

/// Twenty model answers, seven of which break the output contract.
pub const ANSWERS_20: [&str; 20] = [
    r#"{"description":"Selects the Move Tool","category":"Move","tool":"Move Tool"}"#,
    r#"{"description":"Draws a rectangular selection","category":"Marquee","tool":"Rectangular Marquee Tool"}"#,
    "I think the user is cropping the image.",
    r#"{"description":"Uses the lasso","category":"Lasso","tool":"Lasso Tool"}"#,
    r#"{"description":"Picks a color","category":"Eyedrop","tool":"Eyedropper Tool"}"#,
    r#"{"description":"Moves a layer","category":"Move","tool":"Lasso Tool"}"#,
    r#"Answer: {"description":"Heals a spot","category":"Repair","tool":"Spot Healing Brush Tool"}"#,
    r#"{"description":"Paints a stroke","category":"Pen","tool":"Brush Tool"}"#,
    r#"{"description":"Clones an area","category":"Stamp"}"#,
    r#"{"description":"Erases the background","category":"Eraser","tool":"Background Eraser Tool"}"#,
    r#"{"description":"Fills with a gradient","category":"Paint","tool":"Gradient Tool"}"#,
    r#"{"description":"Blurs the edge","category":"Blur","tool":"Blur Tool""#,
    r#"{"description":"Adds an anchor point","category":"Anchor","tool":"Add Anchor Point Tool"}"#,
    r#"{"description":"Types a caption","category":"Type","tool":"Horizontal Type Tool"}"#,
    r#"{"description":"Draws a star","category":"Shapes","tool":"Star Tool"}"#,
    r#"{"description":"Selects a path","category":"Selection","tool":"Path Selection Tool"}"#,
    r#"{"description":"Pans the canvas","category":"Drag","tool":"Hand Tool"}"#,
    r#"{"description": 3, "category":"Framing","tool":"Frame Tool"}"#,
    r#"{"description":"Samples a color","category":"Eyedrop","tool":"Color Sampler Tool"}"#,
    r#"{description: "Crops", category: "Cropping", tool: "Crop Tool"}"#,
];

pub fn read_fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Compares `actual` with the golden file, or rewrites it under `UPDATE_GOLDEN`.
pub fn check_golden(name: &str, actual: &[u8]) {
    let path = fixtures_dir().join(name);
    if updating() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("golden {name}: {e}"));
    assert!(
        expected == actual,
        "{name} differs from golden:\n--- expected\n{}\n--- actual\n{}",
        String::from_utf8_lossy(&expected),
        String::from_utf8_lossy(actual)
    );
}

pub struct MetricCheck {
    pub metric: String,
    pub expected: f64,
    pub actual: f64,
}

fn strings(v: &serde_json::Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

/// Evaluates every case in `metric_cases.json` with the library.
pub fn metric_checks() -> Vec<MetricCheck> {
    use screen_schema::metrics::*;
    use screen_schema::mllm::ParsedAnswer;
    let cases: Vec<serde_json::Value> = serde_json::from_slice(&read_fixture("metric_cases.json")).unwrap();
    cases
        .iter()
        .map(|c| {
            let metric = c["metric"].as_str().unwrap().to_string();
            let refs = || -> Vec<Vec<String>> { strings(&c["references"]).iter().map(|r| tokenize(r)).collect() };
            let cand = || tokenize(c["candidate"].as_str().unwrap_or_default());
            let actual = match metric.as_str() {
                "bleu1" => bleu(&cand(), &refs(), 1).unwrap(),
                "bleu2" => bleu(&cand(), &refs(), 2).unwrap(),
                "rouge_l" => rouge_l(&cand(), &refs()[0]),
                "meteor" => meteor(&cand(), &refs()[0]),
                "cider_d" => {
                    let cands: Vec<Vec<String>> = strings(&c["candidates"]).iter().map(|s| tokenize(s)).collect();
                    let sets: Vec<Vec<Vec<String>>> = c["reference_sets"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|rs| strings(rs).iter().map(|r| tokenize(r)).collect())
                        .collect();
                    cider_d(&cands, &sets).unwrap()
                }
                "accuracy" => accuracy(&strings(&c["preds"]), &strings(&c["golds"])).unwrap(),
                "failure_rate" => {
                    let parsed: Vec<ParsedAnswer> = c["flags"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|f| ParsedAnswer {
                            description: String::new(),
                            category: String::new(),
                            tool: String::new(),
                            is_failure: f.as_bool().unwrap(),
                        })
                        .collect();
                    failure_rate(&parsed).unwrap()
                }
                other => panic!("unknown metric {other}"),
            };
            MetricCheck {
                metric,
                expected: c["expected"].as_f64().unwrap(),
                actual,
            }
        })
        .collect()
}
