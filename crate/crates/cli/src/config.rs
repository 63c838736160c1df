//! Optional TOML configuration with provider defaults. Secrets are never
//! read from here; `api_key_env` and `token_env` name environment variables.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mlr_core::llm::HttpChatConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub literature: LiteratureConfig,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub server: ServerConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        token_budget: Option<u64>,
    },
    Scripted {
        session: PathBuf,
    },
}

fn default_timeout() -> u64 {
    120
}

impl ProviderConfig {
    pub fn http_chat(&self) -> Option<HttpChatConfig> {
        match self {
            Self::Http {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                ..
            } => Some(HttpChatConfig {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
                timeout_secs: *timeout_secs,
            }),
            Self::Scripted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiteratureConfig {
    pub file: Option<PathBuf>,
    pub url: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    #[serde(default = "default_store")]
    pub root: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { root: default_store() }
    }
}

fn default_store() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            token_env: default_token_env(),
        }
    }
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_token_env() -> String {
    "MLR_API_TOKEN".into()
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ProviderConfig::Scripted { session }) = &mut config.provider {
            if session.is_relative() {
                *session = base.join(&*session);
            }
        }
        if let Some(file) = &mut config.literature.file {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(config)
    }
}
