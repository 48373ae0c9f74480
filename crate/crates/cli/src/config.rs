//! Settings layered as flags > environment > config file > defaults.

use std::path::Path;

use serde::Deserialize;

use screen_schema::frameio::Fps;
use screen_schema::memory::MemoryConfig;
use screen_schema::mllm::DecodeParams;
use screen_schema::schema::SchemaConfig;
use screen_schema::{Error, Result};

pub const ENV_OCR_CMD: &str = "OCR_CMD";
pub const ENV_MLLM_ENDPOINT: &str = "MLLM_ENDPOINT";

/// Flat keys accepted in the TOML config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub delta: Option<u8>,
    pub k: Option<usize>,
    pub min_area: Option<usize>,
    pub merge_gap: Option<usize>,
    pub q_tokens: Option<usize>,
    pub dim: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub fps: Option<String>,
    pub ocr_cmd: Option<String>,
    pub ocr_timeout_ms: Option<u64>,
    pub mllm_endpoint: Option<String>,
    pub mllm_model: Option<String>,
    pub mllm_timeout_ms: Option<u64>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }
}

/// Values given on the command line; same keys as the file.
pub type Overrides = FileConfig;

#[derive(Debug, Clone)]
pub struct Settings {
    pub schema: SchemaConfig,
    pub memory: MemoryConfig,
    pub decode: DecodeParams,
    pub fps: Fps,
    pub ocr_cmd: Option<String>,
    pub ocr_timeout_ms: u64,
    pub mllm_endpoint: Option<String>,
    pub mllm_model: String,
    pub mllm_timeout_ms: u64,
}

impl Settings {
    pub fn resolve(flags: &Overrides, file: &FileConfig, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                flags.$field.clone().or(file.$field.clone()).unwrap_or($default)
            };
        }
        let schema_defaults = SchemaConfig::default();
        let decode_defaults = DecodeParams::default();
        let fps: Fps = pick!(fps, "30".to_string()).parse()?;
        let settings = Settings {
            schema: SchemaConfig {
                delta: pick!(delta, schema_defaults.delta),
                k: pick!(k, schema_defaults.k),
                min_area: pick!(min_area, schema_defaults.min_area),
                merge_gap: pick!(merge_gap, schema_defaults.merge_gap),
            },
            memory: MemoryConfig {
                q_tokens: pick!(q_tokens, 4),
                dim: pick!(dim, 8),
                alpha: pick!(alpha, 0.5),
                seed: pick!(seed, 42),
            },
            decode: DecodeParams {
                temperature: pick!(temperature, decode_defaults.temperature),
                top_p: pick!(top_p, decode_defaults.top_p),
                max_tokens: pick!(max_tokens, decode_defaults.max_tokens),
            },
            fps,
            ocr_cmd: flags.ocr_cmd.clone().or_else(|| env(ENV_OCR_CMD)).or(file.ocr_cmd.clone()),
            ocr_timeout_ms: pick!(ocr_timeout_ms, 10_000),
            mllm_endpoint: flags
                .mllm_endpoint
                .clone()
                .or_else(|| env(ENV_MLLM_ENDPOINT))
                .or(file.mllm_endpoint.clone()),
            mllm_model: pick!(mllm_model, "default".to_string()),
            mllm_timeout_ms: pick!(mllm_timeout_ms, 60_000),
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        if self.schema.k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.schema.min_area == 0 {
            return Err(Error::Argument("min_area must be at least 1".into()));
        }
        self.memory.validate()?;
        self.decode.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(&Overrides::default(), &FileConfig::default(), no_env).unwrap();
        assert_eq!(
            (s.schema.delta, s.schema.k, s.schema.min_area, s.schema.merge_gap),
            (30, 5, 25, 4)
        );
        assert_eq!((s.memory.q_tokens, s.memory.dim, s.memory.alpha, s.memory.seed), (4, 8, 0.5, 42));
        assert_eq!((s.decode.temperature, s.decode.top_p, s.decode.max_tokens), (0.0, 0.7, 256));
        assert!(s.ocr_cmd.is_none());
    }

    #[test]
    fn precedence() {
        let file: FileConfig = toml::from_str("k = 3\ndelta = 12\nocr_cmd = \"file-ocr\"\nmllm_endpoint = \"http://file\"").unwrap();
        let flags = Overrides {
            k: Some(7),
            ..Default::default()
        };
        let env = |key: &str| (key == ENV_OCR_CMD).then(|| "env-ocr".to_string());
        let s = Settings::resolve(&flags, &file, env).unwrap();
        assert_eq!(s.schema.k, 7);
        assert_eq!(s.schema.delta, 12);
        assert_eq!(s.ocr_cmd.as_deref(), Some("env-ocr"));
        assert_eq!(s.mllm_endpoint.as_deref(), Some("http://file"));
        let flags = Overrides {
            ocr_cmd: Some("flag-ocr".into()),
            ..Default::default()
        };
        assert_eq!(Settings::resolve(&flags, &file, env).unwrap().ocr_cmd.as_deref(), Some("flag-ocr"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<FileConfig>("unknown = 1").is_err());
        let bad = Overrides {
            alpha: Some(1.5),
            ..Default::default()
        };
        assert!(Settings::resolve(&bad, &FileConfig::default(), no_env).is_err());
        let bad = Overrides {
            k: Some(0),
            ..Default::default()
        };
        assert!(Settings::resolve(&bad, &FileConfig::default(), no_env).is_err());
    }
}
