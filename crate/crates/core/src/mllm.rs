//! Language-model session loop: prompts, backends, answer parsing and the
//! per-clip transcript.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::canonical::Canon;
use crate::cursor::CnnParams;
use crate::error::{Error, Result};
use crate::frameio::Clip;
use crate::linalg::Matrix;
use crate::memory::Memory;
use crate::ocr::OcrBackend;
use crate::schema::{compose_schema, render_prompt_schema, SchemaConfig, ScreenSchema};
use crate::taxonomy::ToolTaxonomy;

pub const PROMPT_VERSION: &str = "v1";
pub const DEFAULT_HTTP_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    CurrentAction,
    NextAction,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::CurrentAction => "current_action",
            Task::NextAction => "next_action",
        }
    }

    fn instruction(&self) -> &'static str {
        match self {
            Task::CurrentAction => {
                "Below is a screen schema of a short screen recording from an image editor. \
                 Describe the action the user performed in this clip in one sentence and name the tool used."
            }
            Task::NextAction => {
                "Below is a screen schema of a short screen recording from an image editor. \
                 Predict the next action the user will perform after this clip in one sentence and name the tool it needs."
            }
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current_action" => Ok(Task::CurrentAction),
            "next_action" => Ok(Task::NextAction),
            other => Err(Error::Argument(format!(
                "unknown task {other:?}, expected current_action or next_action"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Task template followed by the schema text. Constant per task.
pub fn build_prompt(task: Task, schema_text: &str) -> String {
    format!(
        "[prompt {PROMPT_VERSION} {task}]\n{}\n\
         Reply with a single JSON object and nothing else, using exactly these string keys:\n\
         {{\"description\": \"<one sentence>\", \"category\": \"<tool category>\", \"tool\": \"<tool name>\"}}\n\
         Screen schema:\n{schema_text}",
        task.instruction()
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            top_p: 0.7,
            max_tokens: 256,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Argument(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Argument(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Argument("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub prompt: String,
    pub schema_text: String,
    pub decode: DecodeParams,
    /// Memory-adjusted embedding from the previous step; backends without
    /// access to model internals ignore it.
    pub embedding: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub answer: String,
    pub embedding: Option<Matrix>,
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse>;
}

/// Hex SHA-256 over the length-prefixed prompt and schema text plus the
/// decoding parameters. The embedding is not part of the key.
pub fn request_digest(request: &GenRequest) -> String {
    let mut h = Sha256::new();
    for part in [request.prompt.as_bytes(), request.schema_text.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(request.decode.temperature.to_le_bytes());
    h.update(request.decode.top_p.to_le_bytes());
    h.update(request.decode.max_tokens.to_le_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockEntry {
    pub digest: String,
    pub answer: String,
    /// Rows of a Q×D matrix.
    #[serde(default)]
    pub embedding: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockScript {
    #[serde(default = "strict_default")]
    pub strict: bool,
    pub entries: Vec<MockEntry>,
}

fn strict_default() -> bool {
    true
}

/// Scripted backend. Unknown requests fail in strict mode and answer `{}` otherwise.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    strict: bool,
    answers: HashMap<String, GenResponse>,
}

impl MockBackend {
    pub fn new(strict: bool) -> Self {
        MockBackend {
            strict,
            answers: HashMap::new(),
        }
    }

    pub fn insert(&mut self, digest: impl Into<String>, answer: impl Into<String>, embedding: Option<Matrix>) {
        self.answers.insert(
            digest.into(),
            GenResponse {
                answer: answer.into(),
                embedding,
            },
        );
    }

    pub fn from_script(script: MockScript) -> Result<Self> {
        let mut mock = MockBackend::new(script.strict);
        for e in script.entries {
            let embedding = match e.embedding {
                Some(rows) => {
                    let cols = rows.first().map_or(0, Vec::len);
                    if rows.iter().any(|r| r.len() != cols) {
                        return Err(Error::Scripting(format!("ragged embedding for {}", e.digest)));
                    }
                    let n = rows.len();
                    Some(Matrix::from_vec(n, cols, rows.into_iter().flatten().collect())?)
                }
                None => None,
            };
            mock.insert(e.digest, e.answer, embedding);
        }
        Ok(mock)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let script: MockScript = serde_json::from_slice(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_script(script)
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        let digest = request_digest(request);
        match self.answers.get(&digest) {
            Some(r) => Ok(r.clone()),
            None if self.strict => Err(Error::Scripting(format!("no scripted answer for request {digest}"))),
            None => Ok(GenResponse {
                answer: "{}".into(),
                embedding: None,
            }),
        }
    }
}

/// Completion endpoint speaking `{model, prompt, temperature, top_p, max_tokens}` → `{text}`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: DEFAULT_HTTP_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "prompt": request.prompt,
            "temperature": request.decode.temperature,
            "top_p": request.decode.top_p,
            "max_tokens": request.decode.max_tokens,
        });
        let timeout_ms = self.timeout.as_millis() as u64;
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => Error::Timeout(timeout_ms),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => Error::Timeout(timeout_ms),
            other => Error::Connection(format!("{}: {other}", self.endpoint)),
        };
        let mut response = agent.post(&self.endpoint).send_json(&body).map_err(map_err)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(Error::Transport { status });
        }
        let text = response.body_mut().read_to_string().map_err(map_err)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
        match value.get("text") {
            Some(serde_json::Value::String(s)) => Ok(GenResponse {
                answer: s.clone(),
                embedding: None,
            }),
            _ => Err(Error::Protocol("response has no string field `text`".into())),
        }
    }
}

/// Stand-in embedding: ChaCha8 seeded with the first eight bytes of
/// SHA-256(text) as a little-endian `u64`, drawing Q·D values in (−1, 1).
pub fn surrogate_embed(text: &str, q_tokens: usize, dim: usize) -> Matrix {
    let digest = Sha256::digest(text.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(q_tokens, dim, |_, _| rng.gen_range(-1.0..1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub description: String,
    pub category: String,
    pub tool: String,
    pub is_failure: bool,
}

impl ParsedAnswer {
    pub fn to_canon(&self) -> Canon {
        Canon::obj([
            ("category", Canon::str(&self.category)),
            ("description", Canon::str(&self.description)),
            ("is_failure", Canon::Bool(self.is_failure)),
            ("tool", Canon::str(&self.tool)),
        ])
    }
}

/// Byte range of the first balanced `{...}` block, skipping braces inside strings.
pub fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let (mut depth, mut in_string, mut escaped) = (0usize, false, false);
    for (i, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Never fails: anything that breaks the answer contract is returned with
/// `is_failure` set and whatever fields could be read.
pub fn parse_answer(text: &str, taxonomy: &ToolTaxonomy) -> ParsedAnswer {
    let mut parsed = ParsedAnswer {
        description: String::new(),
        category: String::new(),
        tool: String::new(),
        is_failure: true,
    };
    let Some(block) = first_object(text) else {
        return parsed;
    };
    let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(block) else {
        return parsed;
    };
    let field = |k: &str| match map.get(k) {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        _ => None,
    };
    let (d, c, t) = (field("description"), field("category"), field("tool"));
    parsed.description = d.clone().unwrap_or_default();
    parsed.category = c.clone().unwrap_or_default();
    parsed.tool = t.clone().unwrap_or_default();
    if let (Some(_), Some(c), Some(t)) = (d, c, t) {
        parsed.is_failure = !taxonomy.validate(&c, &t);
    }
    parsed
}

/// Pipeline settings shared by every step of a session.
pub struct SessionContext<'a> {
    pub schema: SchemaConfig,
    pub ocr: &'a dyn OcrBackend,
    pub cursor: Option<&'a CnnParams>,
    pub vocab: &'a [String],
    pub taxonomy: &'a ToolTaxonomy,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptStep {
    pub step: usize,
    pub clip_id: String,
    pub schema: ScreenSchema,
    pub prompt: String,
    pub answer: String,
    pub parsed: ParsedAnswer,
    /// Hex SHA-256 of the little-endian bytes of `e_prime`.
    pub e_prime_digest: String,
}

impl TranscriptStep {
    pub fn to_line(&self) -> Result<String> {
        Canon::obj([
            ("answer", Canon::str(&self.answer)),
            ("clip_id", Canon::str(&self.clip_id)),
            ("e_prime_sha256", Canon::str(&self.e_prime_digest)),
            ("parsed", self.parsed.to_canon()),
            ("prompt", Canon::str(&self.prompt)),
            ("schema", self.schema.to_canon()),
            ("step", Canon::uint(self.step)),
        ])
        .to_line()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub steps: Vec<TranscriptStep>,
}

impl Transcript {
    /// One canonical JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.to_line()?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parsed(&self) -> Vec<ParsedAnswer> {
        self.steps.iter().map(|s| s.parsed.clone()).collect()
    }

    pub fn failure_count(&self) -> usize {
        self.steps.iter().filter(|s| s.parsed.is_failure).count()
    }
}

pub fn matrix_digest(m: &Matrix) -> String {
    hex(&Sha256::digest(m.to_le_bytes()))
}

/// Runs the clips in order through schema composition, generation and the memory.
pub fn session_run(
    clips: &[Clip],
    backend: &dyn Backend,
    memory: &mut Memory,
    task: Task,
    ctx: &SessionContext<'_>,
) -> Result<Transcript> {
    if clips.is_empty() {
        return Err(Error::Argument("session needs at least one clip".into()));
    }
    ctx.decode.validate()?;
    let (q, d) = (memory.config().q_tokens, memory.config().dim);
    let mut carried: Option<Matrix> = None;
    let mut transcript = Transcript::default();
    for (step, clip) in clips.iter().enumerate() {
        let at = |e: Error| e.context(format!("step {step} (clip {})", clip.clip_id));
        let schema = compose_schema(clip, &ctx.schema, ctx.ocr, ctx.cursor, ctx.vocab).map_err(at)?;
        let schema_text = render_prompt_schema(&schema);
        let prompt = build_prompt(task, &schema_text);
        let request = GenRequest {
            prompt: prompt.clone(),
            schema_text: schema_text.clone(),
            decode: ctx.decode,
            embedding: carried.take(),
        };
        let response = backend.generate(&request).map_err(at)?;
        let e_t = match response.embedding {
            Some(e) => e,
            None => surrogate_embed(&format!("{}{}", response.answer, schema_text), q, d),
        };
        let e_prime = memory.step(&e_t).map_err(at)?;
        transcript.steps.push(TranscriptStep {
            step,
            clip_id: clip.clip_id.clone(),
            schema,
            prompt,
            parsed: parse_answer(&response.answer, ctx.taxonomy),
            answer: response.answer,
            e_prime_digest: matrix_digest(&e_prime),
        });
        carried = Some(e_prime);
    }
    Ok(transcript)
}
