//! `aflow.toml` plus environment overrides. Flags are applied last by the
//! caller, so precedence is file < env < flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use aflow_core::executor::live::ENDPOINT_ENV;
use aflow_core::inference::lm::{EMBED_MODEL_ENV, LM_KEY_ENV, LM_MODEL_ENV, LM_URL_ENV};
use aflow_core::SyntaxStyle;
use serde::Deserialize;

pub const DEFAULT_CONFIG: &str = "aflow.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

/// Every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Catalog document; the bundled test catalog when unset.
    pub catalog: Option<PathBuf>,
    pub syntax: SyntaxStyle,
    pub format: OutputFormat,
    pub iteration_limit: usize,
    pub k: usize,
    pub lm_url: Option<String>,
    pub lm_model: Option<String>,
    pub lm_key: Option<String>,
    pub embed_model: Option<String>,
    pub comfy_url: String,
    pub poll_interval_secs: f64,
    pub timeout_secs: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            catalog: None,
            syntax: SyntaxStyle::Declarative,
            format: OutputFormat::Text,
            iteration_limit: 3,
            k: 3,
            lm_url: None,
            lm_model: None,
            lm_key: None,
            embed_model: None,
            comfy_url: "http://127.0.0.1:8188".into(),
            poll_interval_secs: 1.0,
            timeout_secs: 600.0,
        }
    }
}

impl CliConfig {
    /// Reads `path`, or `./aflow.toml` if it exists when no path is given.
    pub fn load(path: Option<&Path>) -> Result<CliConfig, String> {
        let mut cfg = match path {
            Some(p) => Self::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
            None if Path::new(DEFAULT_CONFIG).is_file() => Self::parse(&read(Path::new(DEFAULT_CONFIG))?)
                .map_err(|e| format!("{DEFAULT_CONFIG}: {e}"))?,
            None => CliConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok().filter(|v| !v.is_empty()));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<CliConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var(LM_URL_ENV) {
            self.lm_url = Some(v);
        }
        if let Some(v) = var(LM_MODEL_ENV) {
            self.lm_model = Some(v);
        }
        if let Some(v) = var(LM_KEY_ENV) {
            self.lm_key = Some(v);
        }
        if let Some(v) = var(EMBED_MODEL_ENV) {
            self.embed_model = Some(v);
        }
        if let Some(v) = var(ENDPOINT_ENV) {
            self.comfy_url = v;
        }
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_secs_f64(self.poll_interval_secs.max(0.0))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_parse() {
        let cfg = CliConfig::parse(
            "syntax = \"dataflow\"\nformat = \"json\"\niteration_limit = 5\ncomfy_url = \"http://gpu:8188\"\n",
        )
        .unwrap();
        assert_eq!(cfg.syntax, SyntaxStyle::Dataflow);
        assert_eq!(cfg.format, OutputFormat::Json);
        assert_eq!(cfg.iteration_limit, 5);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.comfy_url, "http://gpu:8188");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::parse("lm_urll = \"x\"").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut cfg = CliConfig::parse("lm_model = \"from-file\"\ncomfy_url = \"http://a\"").unwrap();
        cfg.apply_env(|k| match k {
            "AFLOW_LM_MODEL" => Some("from-env".into()),
            _ => None,
        });
        assert_eq!(cfg.lm_model.as_deref(), Some("from-env"));
        assert_eq!(cfg.comfy_url, "http://a");
    }
}
