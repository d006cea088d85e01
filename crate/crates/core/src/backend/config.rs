use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::{MockBackend, PlantedTable, SamplerConfig};
use super::remote::RemoteBackend;
use super::{BackendError, RetryPolicy, VlmBackend};

fn default_concurrency() -> usize {
    4
}

/// Backend configuration file (TOML), selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockConfig),
    Remote(RemoteConfig),
}

impl BackendConfig {
    pub fn concurrency(&self) -> usize {
        match self {
            BackendConfig::Mock(m) => m.concurrency,
            BackendConfig::Remote(r) => r.concurrency,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        match self {
            BackendConfig::Mock(m) => m.retry,
            BackendConfig::Remote(r) => r.retry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// Planted table, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "RetryPolicy::no_delay")]
    pub retry: RetryPolicy,
}

impl RetryPolicy {
    fn no_delay() -> Self {
        Self::immediate(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "RemoteConfig::default_top_p")]
    pub top_p: f64,
    #[serde(default = "RemoteConfig::default_top_k")]
    pub top_k: u32,
    #[serde(default = "RemoteConfig::default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Minimum spacing between requests across all workers.
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default = "RemoteConfig::default_timeout_secs")]
    pub timeout_secs: u64,
    /// Root for relative image paths; defaults to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

impl RemoteConfig {
    fn default_top_p() -> f64 {
        0.01
    }

    fn default_top_k() -> u32 {
        1
    }

    fn default_max_output_tokens() -> u32 {
        4000
    }

    fn default_timeout_secs() -> u64 {
        120
    }
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            temperature: 0.0,
            top_p: Self::default_top_p(),
            top_k: Self::default_top_k(),
            max_output_tokens: Self::default_max_output_tokens(),
            concurrency: default_concurrency(),
            retry: RetryPolicy::default(),
            min_interval_ms: 0,
            timeout_secs: Self::default_timeout_secs(),
            image_root: None,
        }
    }
}

pub fn load_backend_config(path: &Path) -> Result<BackendConfig, BackendError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
}

/// Instantiates the configured backend. Relative paths resolve against
/// `base_dir`; `image_root` is used for relative image URIs when the config
/// does not name one.
pub fn build_backend(config: &BackendConfig, base_dir: &Path, image_root: &Path) -> Result<Arc<dyn VlmBackend>, BackendError> {
    match config {
        BackendConfig::Mock(m) => {
            let table = match &m.planted {
                Some(p) => PlantedTable::load(&base_dir.join(p)).map_err(BackendError::Config)?,
                None => PlantedTable::default(),
            };
            Ok(Arc::new(MockBackend::new(table, m.sampler.clone())))
        }
        BackendConfig::Remote(r) => {
            if r.endpoint.trim().is_empty() || r.model.trim().is_empty() {
                return Err(BackendError::Config("remote backend needs `endpoint` and `model`".into()));
            }
            let root = r.image_root.as_ref().map_or_else(|| image_root.to_path_buf(), |p| base_dir.join(p));
            Ok(Arc::new(RemoteBackend::new(r.clone(), root)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_defaults_are_deterministic_decoding() {
        let c: BackendConfig = toml::from_str(
            r#"
            kind = "remote"
            endpoint = "https://api.example/v1"
            model = "vlm"
            api_key_env = "VLM_KEY"
            "#,
        )
        .unwrap();
        let BackendConfig::Remote(r) = c else { panic!() };
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.top_p, 0.01);
        assert_eq!(r.top_k, 1);
        assert_eq!(r.max_output_tokens, 4000);
        assert_eq!(r.retry.max_retries, 3);
    }

    #[test]
    fn mock_config_with_sampler() {
        let c: BackendConfig = toml::from_str(
            r#"
            kind = "mock"
            concurrency = 2
            [sampler]
            seed = 7
            scene_bias = "outdoor-bias"
            "#,
        )
        .unwrap();
        assert_eq!(c.concurrency(), 2);
        let BackendConfig::Mock(m) = c else { panic!() };
        assert_eq!(m.sampler.seed, 7);
        assert_eq!(m.sampler.scene_bias, super::super::SceneBias::OutdoorBias);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<BackendConfig>("kind = \"remote\"\nendpoint = \"x\"\nmodel = \"m\"\ntemprature = 0.5\n");
        assert!(err.is_err());
    }
}
