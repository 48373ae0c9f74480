mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use screen_schema::canonical::{fixed4, Canon};
use screen_schema::cursor::{augment, detect_cursor, synth_dataset, train_sgd_from, CnnParams};
use screen_schema::frameio::{load_frame_directory, pgm, Clip, Frame};
use screen_schema::keyframe::{select_from_series, DiffSeries};
use screen_schema::memory::Memory;
use screen_schema::metrics::{failure_rate, EvalRecord, MetricReport};
use screen_schema::mllm::{session_run, Backend, HttpBackend, MockBackend, SessionContext, Task};
use screen_schema::ocr::{ExternalProcessOcr, MockOcr, OcrBackend};
use screen_schema::schema::{compose_schema, serialize_canonical};
use screen_schema::taxonomy::ToolTaxonomy;
use screen_schema::{Error, Result};

use config::{FileConfig, Overrides, Settings};

#[derive(Parser)]
#[command(name = "screenschema", version, about = "Screen-recording schemas, memory sessions and caption metrics")]
struct Cli {
    /// TOML file with flat settings keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Score frames of a clip and print the selected key frames.
    Keyframes {
        dir: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        fps: Option<String>,
    },
    /// Compose the canonical schema of one clip.
    Schema {
        dir: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Train or apply the cursor localizer.
    #[command(subcommand)]
    Cursor(CursorCommand),
    /// Run a memory session over ordered clip directories and write the transcript.
    Run {
        root: PathBuf,
        #[arg(long, default_value = "current_action")]
        task: Task,
        #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
        backend: BackendKind,
        #[arg(long, required_if_eq("backend", "mock"))]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        q_tokens: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        top_p: Option<f64>,
        #[arg(long)]
        max_tokens: Option<u32>,
        /// Tool taxonomy JSON; the embedded table when omitted.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Transcript destination (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score line-delimited prediction records.
    Eval { records: PathBuf },
}

#[derive(Subcommand)]
enum CursorCommand {
    /// Train on synthetic patches and write a parameter file.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        synthetic: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Apply one random rotation/scale/translation to every sample.
        #[arg(long)]
        augment: bool,
    },
    /// Print `x y confidence` for one PGM frame.
    Detect {
        #[arg(long)]
        params: PathBuf,
        frame: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

/// Flags shared by commands that compose schemas.
#[derive(Args, Default)]
struct PipelineArgs {
    #[arg(long)]
    delta: Option<u8>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    merge_gap: Option<usize>,
    #[arg(long)]
    fps: Option<String>,
    /// Shell command speaking the line-delimited OCR protocol.
    #[arg(long, conflicts_with = "ocr_script")]
    ocr_cmd: Option<String>,
    /// Scripted OCR answers (JSON) instead of a child process.
    #[arg(long)]
    ocr_script: Option<PathBuf>,
    /// Menu vocabulary, one item per line; taxonomy tool names when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    cursor_params: Option<PathBuf>,
}

impl PipelineArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            delta: self.delta,
            k: self.k,
            min_area: self.min_area,
            merge_gap: self.merge_gap,
            fps: self.fps.clone(),
            ocr_cmd: self.ocr_cmd.clone(),
            ..Default::default()
        }
    }
}

fn settings(config: Option<&Path>, flags: &Overrides) -> Result<Settings> {
    let file = match config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Settings::resolve(flags, &file, |key| std::env::var(key).ok())
}

fn ocr_backend(args: &PipelineArgs, settings: &Settings) -> Result<Box<dyn OcrBackend>> {
    if let Some(script) = &args.ocr_script {
        return Ok(Box::new(MockOcr::load(script)?));
    }
    match &settings.ocr_cmd {
        Some(cmd) => Ok(Box::new(
            ExternalProcessOcr::new(cmd.clone()).with_timeout(Duration::from_millis(settings.ocr_timeout_ms)),
        )),
        None => Err(Error::Argument(
            "no OCR backend: pass --ocr-cmd or --ocr-script, or set OCR_CMD".into(),
        )),
    }
}

fn vocabulary(args: &PipelineArgs, taxonomy: &ToolTaxonomy) -> Result<Vec<String>> {
    match &args.vocab {
        Some(path) => Ok(std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()),
        None => Ok(taxonomy.tools().to_vec()),
    }
}

fn cursor_params(args: &PipelineArgs) -> Result<Option<CnnParams>> {
    args.cursor_params.as_deref().map(CnnParams::load).transpose()
}

fn load_clip(dir: &Path, settings: &Settings) -> Result<Clip> {
    if !dir.is_dir() {
        return Err(Error::Argument(format!("{} is not a directory", dir.display())));
    }
    load_frame_directory(dir, settings.fps)
}

fn fixed_array(values: &[f64]) -> Canon {
    Canon::Arr(values.iter().map(|&v| Canon::Fixed(v)).collect())
}

fn cmd_keyframes(config: Option<&Path>, dir: &Path, k: Option<usize>, fps: Option<String>) -> Result<String> {
    let settings = settings(
        config,
        &Overrides {
            k,
            fps,
            ..Default::default()
        },
    )?;
    let clip = load_clip(dir, &settings)?;
    if clip.len() < 3 {
        return Err(Error::Size(format!("{} has {} frames, need 3", dir.display(), clip.len())));
    }
    let series = DiffSeries::from_clip(&clip)?;
    let selection = select_from_series(&series, settings.schema.k);
    Canon::obj([
        ("d", fixed_array(&series.first_order())),
        ("g", fixed_array(&series.second_order())),
        ("k", Canon::uint(settings.schema.k)),
        ("keyframes", Canon::Arr(selection.indices.iter().map(|&i| Canon::uint(i)).collect())),
    ])
    .to_line()
}

fn cmd_schema(config: Option<&Path>, dir: &Path, out: Option<&Path>, args: &PipelineArgs) -> Result<Option<String>> {
    let settings = settings(config, &args.overrides())?;
    let clip = load_clip(dir, &settings)?;
    let ocr = ocr_backend(args, &settings)?;
    let vocab = vocabulary(args, &ToolTaxonomy::embedded())?;
    let cursor = cursor_params(args)?;
    let schema = compose_schema(&clip, &settings.schema, ocr.as_ref(), cursor.as_ref(), &vocab)?;
    let bytes = serialize_canonical(&schema)?;
    match out {
        Some(path) => {
            std::fs::write(path, &bytes)?;
            Ok(None)
        }
        None => Ok(Some(String::from_utf8(bytes).expect("canonical output is UTF-8"))),
    }
}

fn cmd_cursor(config: Option<&Path>, command: CursorCommand) -> Result<String> {
    match command {
        CursorCommand::Train {
            out,
            synthetic,
            epochs,
            lr,
            seed,
            augment: augmented,
        } => {
            let settings = settings(
                config,
                &Overrides {
                    seed,
                    ..Default::default()
                },
            )?;
            let seed = settings.memory.seed;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = synth_dataset(&mut rng, synthetic)?;
            if augmented {
                data = data.iter().map(|s| augment(s, &mut rng)).collect();
            }
            let report = train_sgd_from(CnnParams::seeded(seed), &data, epochs, lr, seed)?;
            report.params.save(&out)?;
            let final_loss = report.epoch_losses.last().copied();
            Canon::obj([
                ("epochs", Canon::uint(epochs)),
                ("final_loss", Canon::opt(final_loss.map(Canon::Fixed))),
                ("samples", Canon::uint(data.len())),
            ])
            .to_line()
        }
        CursorCommand::Detect { params, frame } => {
            let params = CnnParams::load(&params)?;
            let img = pgm::decode(&std::fs::read(&frame)?, &frame)?;
            let frame = Frame::new(img.width, img.height, img.pixels, 0, 0)?;
            let p = detect_cursor(&params, &frame)?;
            Ok(format!("{} {} {}", p.x, p.y, fixed4(p.confidence)?))
        }
    }
}

fn clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Argument(format!("{} is not a directory", root.display())));
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no clip directories under {}", root.display())));
    }
    Ok(dirs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: Option<&Path>,
    root: &Path,
    task: Task,
    backend_kind: BackendKind,
    mock_script: Option<&Path>,
    flags: Overrides,
    taxonomy: Option<&Path>,
    out: &Path,
    pipeline: &PipelineArgs,
) -> Result<String> {
    let settings = settings(config, &flags)?;
    let clips = clip_dirs(root)?
        .iter()
        .map(|dir| load_clip(dir, &settings))
        .collect::<Result<Vec<_>>>()?;
    let taxonomy = match taxonomy {
        Some(path) => ToolTaxonomy::load(path)?,
        None => ToolTaxonomy::embedded(),
    };
    let backend: Box<dyn Backend> = match backend_kind {
        BackendKind::Mock => {
            let path = mock_script.ok_or_else(|| Error::Argument("--mock-script is required".into()))?;
            Box::new(MockBackend::load(path)?)
        }
        BackendKind::Http => {
            let endpoint = settings.mllm_endpoint.clone().ok_or_else(|| {
                Error::Argument("http backend needs --endpoint or MLLM_ENDPOINT".into())
            })?;
            Box::new(
                HttpBackend::new(endpoint, settings.mllm_model.clone())
                    .with_timeout(Duration::from_millis(settings.mllm_timeout_ms)),
            )
        }
    };
    let ocr = ocr_backend(pipeline, &settings)?;
    let vocab = vocabulary(pipeline, &taxonomy)?;
    let cursor = cursor_params(pipeline)?;
    let ctx = SessionContext {
        schema: settings.schema,
        ocr: ocr.as_ref(),
        cursor: cursor.as_ref(),
        vocab: &vocab,
        taxonomy: &taxonomy,
        decode: settings.decode,
    };
    let mut memory = Memory::new(settings.memory)?;
    let transcript = session_run(&clips, backend.as_ref(), &mut memory, task, &ctx)?;
    std::fs::write(out, transcript.to_jsonl()?)?;
    let parsed = transcript.parsed();
    Canon::obj([
        ("failure_rate", Canon::Fixed(failure_rate(&parsed)?)),
        ("failures", Canon::uint(transcript.failure_count())),
        ("steps", Canon::uint(parsed.len())),
    ])
    .to_line()
}

fn cmd_eval(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(line).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Argument(format!("{} has no records", path.display())));
    }
    MetricReport::evaluate(&records)?.to_canon().to_line()
}

fn dispatch(cli: Cli) -> Result<Option<String>> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Keyframes { dir, k, fps } => cmd_keyframes(config, &dir, k, fps).map(Some),
        Command::Schema { dir, out, pipeline } => cmd_schema(config, &dir, out.as_deref(), &pipeline),
        Command::Cursor(c) => cmd_cursor(config, c).map(Some),
        Command::Run {
            root,
            task,
            backend,
            mock_script,
            endpoint,
            model,
            alpha,
            seed,
            q_tokens,
            dim,
            temperature,
            top_p,
            max_tokens,
            taxonomy,
            out,
            pipeline,
        } => {
            let flags = Overrides {
                alpha,
                seed,
                q_tokens,
                dim,
                temperature,
                top_p,
                max_tokens,
                mllm_endpoint: endpoint,
                mllm_model: model,
                ..pipeline.overrides()
            };
            cmd_run(
                config,
                &root,
                task,
                backend,
                mock_script.as_deref(),
                flags,
                taxonomy.as_deref(),
                &out,
                &pipeline,
            )
            .map(Some)
        }
        Command::Eval { records } => cmd_eval(&records).map(Some),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(report) => {
            if let Some(line) = report {
                let mut stdout = std::io::stdout().lock();
                let _ = if line.ends_with('\n') {
                    write!(stdout, "{line}")
                } else {
                    writeln!(stdout, "{line}")
                };
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_external() { 3 } else { 2 })
        }
    }
}
