//! Text recognition port and menu-vocabulary matching.
//!
//! Any OCR engine can be wrapped as a child process: it receives the cropped
//! region as a binary PGM on stdin and prints one JSON object per recognized
//! text line on stdout, e.g.
//!
//! ```text
//! {"text":"File","x":1,"y":2,"w":20,"h":10,"conf":0.97}
//! ```
//!
//! Coordinates are relative to the crop and translated back to frame space.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::frameio::{pgm, Frame};
use crate::regions::Rect;

pub const DEFAULT_OCR_TIMEOUT: Duration = Duration::from_secs(10);
pub const MATCH_THRESHOLD: f64 = 0.8;
const STDERR_EXCERPT: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    pub text: String,
    /// Frame coordinates.
    pub bbox: Rect,
    pub confidence: f64,
}

pub trait OcrBackend: Send + Sync {
    /// Recognizes text inside `rect` of `frame`. Returned boxes lie within `rect`.
    fn recognize(&self, frame: &Frame, rect: Rect) -> Result<Vec<OcrResult>>;
}

/// Cuts `rect` out of `frame` and encodes it as PGM.
pub fn crop_pgm(frame: &Frame, rect: Rect) -> Result<Vec<u8>> {
    if !rect.fits_in(frame.width, frame.height) {
        return Err(Error::Dimension(format!(
            "crop {rect:?} outside {}x{} frame",
            frame.width, frame.height
        )));
    }
    let mut pixels = Vec::with_capacity(rect.area());
    for y in rect.y..rect.bottom() {
        pixels.extend_from_slice(&frame.luma[y * frame.width + rect.x..y * frame.width + rect.right()]);
    }
    Ok(pgm::encode(rect.w, rect.h, &pixels))
}

/// Runs a shell command per request, one child per call.
#[derive(Debug, Clone)]
pub struct ExternalProcessOcr {
    command: String,
    timeout: Duration,
}

#[derive(Deserialize)]
struct WireResult {
    text: String,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    conf: f64,
}

impl ExternalProcessOcr {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalProcessOcr {
            command: command.into(),
            timeout: DEFAULT_OCR_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn backend_error(message: impl Into<String>, stderr: &[u8]) -> Error {
        let text = String::from_utf8_lossy(stderr);
        let excerpt: String = text.trim().chars().take(STDERR_EXCERPT).collect();
        Error::OcrBackend {
            message: message.into(),
            stderr: excerpt,
        }
    }

    fn run(&self, input: Vec<u8>) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut command = Command::new("sh");
        command
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut command, 0);
        let mut child = command
            .spawn()
            .map_err(|e| Self::backend_error(format!("cannot launch {:?}: {e}", self.command), b""))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // A child that exits without reading its input closes the pipe; that is not our failure.
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let status = match child.wait_timeout(self.timeout)? {
            Some(status) => status,
            None => {
                // Grandchildren of `sh` would keep the pipes open; take down the whole group.
                #[cfg(unix)]
                if let Ok(pgid) = libc::pid_t::try_from(child.id()) {
                    // SAFETY: plain syscall on a process group this call created.
                    unsafe {
                        libc::kill(-pgid, libc::SIGKILL);
                    }
                }
                let _ = child.kill();
                let _ = child.wait();
                let err = err_reader.join().unwrap_or_default();
                return Err(Self::backend_error(
                    format!("{:?} timed out after {} ms", self.command, self.timeout.as_millis()),
                    &err,
                ));
            }
        };
        let _ = writer.join();
        let out = out_reader
            .join()
            .map_err(|_| Self::backend_error("stdout reader panicked", b""))??;
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(Self::backend_error(format!("{:?} exited with {status}", self.command), &err));
        }
        Ok((out, err))
    }
}

impl OcrBackend for ExternalProcessOcr {
    fn recognize(&self, frame: &Frame, rect: Rect) -> Result<Vec<OcrResult>> {
        let input = crop_pgm(frame, rect)?;
        let (out, err) = self.run(input)?;
        let text = String::from_utf8(out).map_err(|_| Self::backend_error("stdout is not UTF-8", &err))?;
        let mut results = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |why: String| Self::backend_error(format!("line {}: {why}", lineno + 1), &err);
            let wire: WireResult = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let local = Rect::new(wire.x, wire.y, wire.w, wire.h);
            if !local.fits_in(rect.w, rect.h) {
                return Err(malformed(format!("box {local:?} outside {}x{} crop", rect.w, rect.h)));
            }
            if wire.text.is_empty() {
                return Err(malformed("empty text".into()));
            }
            if !(0.0..=1.0).contains(&wire.conf) {
                return Err(malformed(format!("confidence {} outside [0,1]", wire.conf)));
            }
            results.push(OcrResult {
                text: wire.text,
                bbox: Rect::new(rect.x + local.x, rect.y + local.y, local.w, local.h),
                confidence: wire.conf,
            });
        }
        Ok(results)
    }
}

/// Scripted backend keyed by `(frame index, rect)`, optionally narrowed by
/// the SHA-256 of the PGM crop so clips sharing frame numbers can be told
/// apart. Digest-specific entries win; unknown keys return nothing.
#[derive(Debug, Clone, Default)]
pub struct MockOcr {
    script: HashMap<(usize, Rect, Option<String>), Vec<OcrResult>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MockOcrEntry {
    pub frame: usize,
    pub rect: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_sha256: Option<String>,
    pub results: Vec<OcrResult>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct MockOcrScript {
    pub entries: Vec<MockOcrEntry>,
}

/// Lowercase hex SHA-256 of the PGM crop a backend would receive.
pub fn crop_digest(frame: &Frame, rect: Rect) -> Result<String> {
    let bytes = crop_pgm(frame, rect)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl MockOcr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: usize, rect: Rect, results: Vec<OcrResult>) -> Result<()> {
        self.insert_keyed(frame, rect, None, results)
    }

    pub fn insert_keyed(
        &mut self,
        frame: usize,
        rect: Rect,
        crop_sha256: Option<String>,
        results: Vec<OcrResult>,
    ) -> Result<()> {
        for r in &results {
            if !rect.contains(&r.bbox) || r.bbox.is_empty() {
                return Err(Error::validation(
                    "bbox",
                    format!("scripted {:?} for {:?} lies outside {rect:?}", r.bbox, r.text),
                ));
            }
            if r.text.is_empty() {
                return Err(Error::validation("text", "scripted OCR text is empty"));
            }
        }
        self.script.insert((frame, rect, crop_sha256), results);
        Ok(())
    }

    pub fn from_script(script: MockOcrScript) -> Result<Self> {
        let mut mock = MockOcr::new();
        for e in script.entries {
            mock.insert_keyed(e.frame, e.rect, e.crop_sha256, e.results)?;
        }
        Ok(mock)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let script: MockOcrScript = serde_json::from_slice(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_script(script)
    }

    fn has_digest_keys(&self) -> bool {
        self.script.keys().any(|k| k.2.is_some())
    }
}

impl OcrBackend for MockOcr {
    fn recognize(&self, frame: &Frame, rect: Rect) -> Result<Vec<OcrResult>> {
        if self.has_digest_keys() {
            let key = (frame.index, rect, Some(crop_digest(frame, rect)?));
            if let Some(found) = self.script.get(&key) {
                return Ok(found.clone());
            }
        }
        Ok(self.script.get(&(frame.index, rect, None)).cloned().unwrap_or_default())
    }
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_label(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `1 - levenshtein / max_len` over normalized labels, counted in chars.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_label(a), normalize_label(b));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / longest as f64
}

/// Best vocabulary item scoring at least 0.8; earlier items win ties.
pub fn match_menu_item<S: AsRef<str>>(text: &str, vocabulary: &[S]) -> Result<Option<(String, f64)>> {
    if vocabulary.is_empty() {
        return Err(Error::Argument("menu vocabulary is empty".into()));
    }
    if normalize_label(text).is_empty() {
        return Err(Error::Argument("cannot match empty text".into()));
    }
    let mut best: Option<(&str, f64)> = None;
    for item in vocabulary {
        let score = similarity(text, item.as_ref());
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((item.as_ref(), score));
        }
    }
    Ok(best
        .filter(|&(_, s)| s >= MATCH_THRESHOLD)
        .map(|(item, s)| (item.to_string(), s)))
}
