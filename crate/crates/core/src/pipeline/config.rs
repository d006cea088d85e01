use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::export::ExportFormat;
use crate::aggregate::{Axis, RobustnessConfig};
use crate::catalog::Thresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    #[serde(default = "RobustnessSettings::default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "RobustnessSettings::default_seeds")]
    pub seeds: Vec<u64>,
}

impl RobustnessSettings {
    fn default_budgets() -> Vec<usize> {
        RobustnessConfig::default().budgets
    }

    fn default_seeds() -> Vec<u64> {
        RobustnessConfig::default().seeds
    }
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self {
            budgets: Self::default_budgets(),
            seeds: Self::default_seeds(),
        }
    }
}

impl From<&RobustnessSettings> for RobustnessConfig {
    fn from(s: &RobustnessSettings) -> Self {
        RobustnessConfig {
            budgets: s.budgets.clone(),
            seeds: s.seeds.clone(),
        }
    }
}

fn default_axes() -> Vec<Axis> {
    Axis::GEODIV.to_vec()
}

fn default_format() -> ExportFormat {
    ExportFormat::Tabular
}

/// One run: inputs, backend, output location and scoring settings. Paths in
/// a config file are relative to that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Catalog documents to merge; the bundled catalogs when empty.
    #[serde(default)]
    pub catalogs: Vec<PathBuf>,
    pub backend: PathBuf,
    pub output: PathBuf,
    /// Response cache; `<output>/cache.jsonl` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_axes")]
    pub axes: Vec<Axis>,
    /// Overrides the backend's worker count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robustness: RobustnessSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: ExportFormat,
}

/// Command-line values that replace config-file fields. Paths are taken as
/// given (relative to the working directory).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub manifest: Option<PathBuf>,
    pub catalogs: Option<Vec<PathBuf>>,
    pub backend: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub coverage_threshold: Option<f64>,
    pub others_threshold: Option<f64>,
    pub axes: Option<Vec<Axis>>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
    pub budgets: Option<Vec<usize>>,
    pub robustness_seeds: Option<Vec<u64>>,
    pub annotations: Option<PathBuf>,
    pub format: Option<ExportFormat>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid run configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl RunConfig {
    /// Reads a TOML config and makes its paths relative to the working
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let de = toml::Deserializer::parse(&text).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    /// Builds a config from overrides alone; required fields must be given.
    pub fn from_overrides(o: &RunOverrides) -> Result<Self, ConfigError> {
        let mut missing = Vec::new();
        for (name, v) in [("manifest", &o.manifest), ("backend", &o.backend), ("output", &o.output)] {
            if v.is_none() {
                missing.push(format!("{name}: required (no config file given)"));
            }
        }
        if !missing.is_empty() {
            return Err(ConfigError::Invalid(missing));
        }
        let mut c = RunConfig {
            manifest: PathBuf::new(),
            catalogs: Vec::new(),
            backend: PathBuf::new(),
            output: PathBuf::new(),
            cache: None,
            thresholds: Thresholds::default(),
            axes: default_axes(),
            concurrency: None,
            seed: 0,
            robustness: RobustnessSettings::default(),
            annotations: None,
            format: default_format(),
        };
        c.apply(o);
        Ok(c)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.manifest);
        join(&mut self.backend);
        join(&mut self.output);
        self.catalogs.iter_mut().for_each(join);
        self.cache.iter_mut().for_each(join);
        self.annotations.iter_mut().for_each(join);
    }

    pub fn apply(&mut self, o: &RunOverrides) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = &$value {
                    $field = v.clone();
                }
            };
        }
        set!(self.manifest, o.manifest);
        set!(self.catalogs, o.catalogs);
        set!(self.backend, o.backend);
        set!(self.output, o.output);
        set!(self.thresholds.coverage, o.coverage_threshold);
        set!(self.thresholds.others, o.others_threshold);
        set!(self.axes, o.axes);
        set!(self.seed, o.seed);
        set!(self.robustness.budgets, o.budgets);
        set!(self.robustness.seeds, o.robustness_seeds);
        set!(self.format, o.format);
        if o.cache.is_some() {
            self.cache = o.cache.clone();
        }
        if o.concurrency.is_some() {
            self.concurrency = o.concurrency;
        }
        if o.annotations.is_some() {
            self.annotations = o.annotations.clone();
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.output.join("cache.jsonl"))
    }

    /// Every problem with the config, one message per offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut exists = |field: &str, p: &Path| {
            if !p.is_file() {
                errors.push(format!("{field}: `{}` does not exist", p.display()));
            }
        };
        exists("manifest", &self.manifest);
        exists("backend", &self.backend);
        for (i, c) in self.catalogs.iter().enumerate() {
            exists(&format!("catalogs[{i}]"), c);
        }
        if let Some(a) = &self.annotations {
            exists("annotations", a);
        }
        for (field, v) in [
            ("thresholds.coverage", self.thresholds.coverage),
            ("thresholds.others", self.thresholds.others),
        ] {
            if !(v > 0.0 && v < 1.0) {
                errors.push(format!("{field}: {v} is outside (0, 1)"));
            }
        }
        if self.axes.is_empty() {
            errors.push("axes: at least one axis must be enabled".into());
        }
        if self.concurrency == Some(0) {
            errors.push("concurrency: must be at least 1".into());
        }
        if self.robustness.budgets.is_empty() || self.robustness.budgets.contains(&0) {
            errors.push("robustness.budgets: need one or more positive budgets".into());
        }
        if self.robustness.seeds.is_empty() {
            errors.push("robustness.seeds: need at least one seed".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}
