//! Staged batch runs. Each stage reads what earlier stages left in the
//! response cache, writes its outputs under the run's output directory and
//! records a summary in `<output>/stages/<stage>.json`. Scoring stages only
//! read the cache, so they never reach the backend.

mod config;

pub use config::{ConfigError, RobustnessSettings, RunConfig, RunOverrides};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::export::{export_ratings, export_scores, write_csv, ExportHeader};
use crate::aggregate::{jsd_analysis, robustness_analysis, AggregateError, Axis, JsdSummary, RobustnessConfig, RobustnessReport, ScoreMatrix};
use crate::backend::{build_backend, load_backend_config, BackendError, VlmBackend};
use crate::cache::{CacheError, ResponseCache};
use crate::catalog::{builtin_background, builtin_entity, load_catalog, Catalog, CatalogError, Scene};
use crate::manifest::{ImageRecord, Manifest, ManifestError};
use crate::sevi::{run_sevi_pass, RatingDimension, RatingScale, SeviPassResult};
use crate::validation::{
    agreement_by_target, export_validation, load_annotations, sevi_correlation, vdi_accuracy, MatchRule, Target,
    ValidationError, ValidationReport,
};
use crate::vqa::{run_vdi_pass, Orchestrator, OrchestratorConfig, QuestionStatus, Step, VdiPassResult, VqaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Classify,
    Visibility,
    Vqa,
    Sevi,
    Score,
    Jsd,
    Robustness,
    Validate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Classify,
        Stage::Visibility,
        Stage::Vqa,
        Stage::Sevi,
        Stage::Score,
        Stage::Jsd,
        Stage::Robustness,
        Stage::Validate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Classify => "classify",
            Stage::Visibility => "visibility",
            Stage::Vqa => "vqa",
            Stage::Sevi => "sevi",
            Stage::Score => "score",
            Stage::Jsd => "jsd",
            Stage::Robustness => "robustness",
            Stage::Validate => "validate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }

    /// Stages that must have completed under the same config first.
    pub fn prerequisites(self, rates: bool) -> Vec<Stage> {
        let sevi = if rates { vec![Stage::Sevi] } else { Vec::new() };
        match self {
            Stage::Classify | Stage::Sevi => Vec::new(),
            Stage::Visibility => vec![Stage::Classify],
            Stage::Vqa => vec![Stage::Visibility],
            Stage::Score | Stage::Robustness | Stage::Validate => [vec![Stage::Vqa], sevi].concat(),
            Stage::Jsd | Stage::Report => vec![Stage::Score],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum StageOrderError {
    #[error("stage `{stage}` needs `{missing}` to run first")]
    Missing { stage: Stage, missing: Stage },
    #[error("stage `{stage}` needs `{prerequisite}` to be rerun: it ran under a different configuration")]
    Stale { stage: Stage, prerequisite: Stage },
    #[error("stage `{stage}` found no cached reply ({detail}); rerun the earlier stages")]
    MissingReplies { stage: Stage, detail: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    StageOrder(#[from] StageOrderError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl From<ManifestError> for PipelineError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io { path, source } => PipelineError::Io {
                path,
                message: source.to_string(),
            },
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<CatalogError> for PipelineError {
    fn from(e: CatalogError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<CacheError> for PipelineError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Io { path, source } => PipelineError::Io {
                path,
                message: source.to_string(),
            },
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<AggregateError> for PipelineError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::Io { path, source } => PipelineError::Io {
                path,
                message: source.to_string(),
            },
            AggregateError::Vqa(v) => v.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<ValidationError> for PipelineError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Io { path, source } => PipelineError::Io {
                path,
                message: source.to_string(),
            },
            ValidationError::Export(a) => a.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<VqaError> for PipelineError {
    fn from(e: VqaError) -> Self {
        match e {
            VqaError::Backend(b) => PipelineError::Backend(b),
            VqaError::Cache(c) => c.into(),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Machine-readable record of a finished stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub config_digest: String,
    /// Digest of the settings later stages depend on; staleness is judged by
    /// this alone.
    pub input_digest: String,
    pub details: Value,
}

/// A loaded run: config, inputs, backend and cache.
pub struct Pipeline {
    config: RunConfig,
    manifest: Manifest,
    catalog: Catalog,
    backend: Arc<dyn VlmBackend>,
    cache: Arc<ResponseCache>,
    orchestrator: OrchestratorConfig,
    digest: String,
    input_digest: String,
}

impl Pipeline {
    /// Validates the config, loads inputs and builds the configured backend.
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let backend_config = load_backend_config(&config.backend).map_err(PipelineError::Backend)?;
        let base = config.backend.parent().unwrap_or(Path::new(""));
        let image_root = config.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
        let backend = build_backend(&backend_config, base, &image_root).map_err(PipelineError::Backend)?;
        let orchestrator = OrchestratorConfig {
            concurrency: config.concurrency.unwrap_or(backend_config.concurrency()),
            retry: backend_config.retry(),
            cache_only: false,
        };
        Self::with_backend(config, backend, orchestrator)
    }

    /// Like [`Pipeline::open`] with a caller-supplied backend.
    pub fn with_backend(
        config: RunConfig,
        backend: Arc<dyn VlmBackend>,
        orchestrator: OrchestratorConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let manifest = Manifest::load(&config.manifest)?;
        if manifest.is_empty() {
            return Err(PipelineError::Data(format!("{}: manifest is empty", config.manifest.display())));
        }
        let catalog = if config.catalogs.is_empty() {
            let mut parts = vec![builtin_background()];
            for e in manifest.entities() {
                parts.push(
                    builtin_entity(e)
                        .ok_or_else(|| PipelineError::Data(format!("no bundled catalog for entity `{e}`; pass one with --catalog")))?,
                );
            }
            Catalog::merge(parts)?
        } else {
            let mut parts = Vec::new();
            for p in &config.catalogs {
                parts.push(load_catalog(std::fs::File::open(p).map_err(io_error(p))?)?);
            }
            Catalog::merge(parts)?
        };
        for e in manifest.entities() {
            if catalog.entity_questions(e).next().is_none() && config.axes.iter().any(|a| is_vdi(*a)) {
                return Err(VqaError::UncoveredEntity(e.to_string()).into());
            }
        }
        let cache_path = config.cache_path();
        let cache = Arc::new(ResponseCache::open(&cache_path)?);
        let input_digest = input_digest(&config, &manifest, &catalog, &backend.id());
        let digest = config_digest(&config, &input_digest);
        Ok(Self {
            config,
            manifest,
            catalog,
            backend,
            cache,
            orchestrator,
            digest,
            input_digest,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    pub fn header(&self) -> ExportHeader {
        ExportHeader {
            config_digest: self.digest.clone(),
            backend_id: self.backend.id(),
            catalog_digest: self.catalog.digest(),
            coverage_threshold: self.config.thresholds.coverage,
            others_threshold: self.config.thresholds.others,
            seed: self.config.seed,
        }
    }

    fn dimensions(&self) -> Vec<RatingDimension> {
        self.config.axes.iter().filter_map(|a| a.dimension()).collect()
    }

    fn runs_vdi(&self) -> bool {
        self.config.axes.iter().any(|a| is_vdi(*a))
    }

    fn live(&self) -> Orchestrator {
        Orchestrator::new(self.backend.clone(), self.cache.clone(), self.orchestrator)
    }

    fn cached(&self) -> Orchestrator {
        Orchestrator::new(
            self.backend.clone(),
            self.cache.clone(),
            OrchestratorConfig {
                cache_only: true,
                ..self.orchestrator
            },
        )
    }

    fn stage_path(&self, stage: Stage) -> PathBuf {
        self.config.output.join("stages").join(format!("{stage}.json"))
    }

    /// Summary left by an earlier run of `stage`, if any.
    pub fn summary(&self, stage: Stage) -> Option<StageSummary> {
        let text = std::fs::read_to_string(self.stage_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn check_order(&self, stage: Stage) -> Result<(), StageOrderError> {
        for p in stage.prerequisites(!self.dimensions().is_empty()) {
            if p == Stage::Vqa && !self.runs_vdi() {
                continue;
            }
            match self.summary(p) {
                None => return Err(StageOrderError::Missing { stage, missing: p }),
                Some(s) if s.input_digest != self.input_digest => {
                    return Err(StageOrderError::Stale { stage, prerequisite: p })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn finish(&self, stage: Stage, details: Value) -> Result<StageSummary, PipelineError> {
        let summary = StageSummary {
            stage,
            config_digest: self.digest.clone(),
            input_digest: self.input_digest.clone(),
            details,
        };
        let path = self.stage_path(stage);
        std::fs::create_dir_all(path.parent().expect("stage path has a parent")).map_err(io_error(&path))?;
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_error(&path))?;
        Ok(summary)
    }

    fn relative(&self, files: &[PathBuf]) -> Vec<String> {
        files
            .iter()
            .map(|f| f.strip_prefix(&self.config.output).unwrap_or(f).display().to_string())
            .collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        self.check_order(stage)?;
        let details = match stage {
            Stage::Classify => self.classify()?,
            Stage::Visibility => self.visibility()?,
            Stage::Vqa => self.vqa()?,
            Stage::Sevi => self.sevi()?,
            Stage::Score => self.score()?,
            Stage::Jsd => self.jsd()?,
            Stage::Robustness => self.robustness()?,
            Stage::Validate => self.validate()?,
            Stage::Report => self.report()?,
        };
        self.finish(stage, details)
    }

    fn classify(&self) -> Result<Value, PipelineError> {
        let orch = self.live();
        let images: Vec<&ImageRecord> = self.manifest.records().iter().collect();
        let (mut indoor, mut outdoor, mut failed) = (0u64, 0u64, 0u64);
        for s in orch.fan_out(&images, |img| orch.scene(img)) {
            match s? {
                Step::Done(Scene::Indoor) => indoor += 1,
                Step::Done(Scene::Outdoor) => outdoor += 1,
                Step::Failed(_) => failed += 1,
            }
        }
        Ok(json!({"images": images.len(), "indoor": indoor, "outdoor": outdoor, "failed": failed}))
    }

    fn visibility(&self) -> Result<Value, PipelineError> {
        let orch = self.live();
        let mut tasks = Vec::new();
        for img in self.manifest.records() {
            for q in self.catalog.entity_questions(&img.entity) {
                if q.visibility_text.is_some() {
                    tasks.push((img, q));
                }
            }
        }
        let (mut visible, mut hidden, mut failed) = (0u64, 0u64, 0u64);
        for v in orch.fan_out(&tasks, |(img, q)| orch.visibility(img, q)) {
            match v? {
                Step::Done(true) => visible += 1,
                Step::Done(false) => hidden += 1,
                Step::Failed(_) => failed += 1,
            }
        }
        Ok(json!({"checks": tasks.len(), "visible": visible, "hidden": hidden, "failed": failed}))
    }

    fn vdi_passes(&self, orch: &Orchestrator) -> Result<Vec<VdiPassResult>, VqaError> {
        let mut out = Vec::new();
        if !self.runs_vdi() {
            return Ok(out);
        }
        for (key, images) in self.manifest.slices() {
            out.push(run_vdi_pass(&key, &images, &self.catalog, orch, self.config.thresholds)?);
        }
        Ok(out)
    }

    fn sevi_passes(&self, orch: &Orchestrator) -> Result<Vec<SeviPassResult>, VqaError> {
        let dims = self.dimensions();
        let mut out = Vec::new();
        if dims.is_empty() {
            return Ok(out);
        }
        for (key, images) in self.manifest.slices() {
            out.push(run_sevi_pass(&key, &images, &dims, orch)?);
        }
        Ok(out)
    }

    fn vqa(&self) -> Result<Value, PipelineError> {
        let passes = self.vdi_passes(&self.live())?;
        let slices: Vec<Value> = passes
            .iter()
            .map(|p| {
                let count = |s: QuestionStatus| p.questions.iter().filter(|q| q.status == s).count();
                json!({
                    "slice": p.key.to_string(),
                    "scenes": p.scenes,
                    "kept": count(QuestionStatus::Kept),
                    "dropped": count(QuestionStatus::Dropped),
                    "not_applicable": count(QuestionStatus::NotApplicable),
                })
            })
            .collect();
        Ok(json!({"slices": slices}))
    }

    fn sevi(&self) -> Result<Value, PipelineError> {
        let passes = self.sevi_passes(&self.live())?;
        let rated: usize = passes.iter().map(|p| p.ratings.len()).sum();
        let failed: u64 = passes.iter().flat_map(|p| p.failed.iter().map(|f| f.1)).sum();
        Ok(json!({
            "slices": passes.len(),
            "dimensions": self.dimensions(),
            "ratings": rated,
            "failed": failed,
        }))
    }

    fn cached_passes(&self, stage: Stage) -> Result<(Vec<VdiPassResult>, Vec<SeviPassResult>), PipelineError> {
        let orch = self.cached();
        let wrap = |e: VqaError| -> PipelineError {
            match e {
                VqaError::MissingCache { .. } => StageOrderError::MissingReplies {
                    stage,
                    detail: e.to_string(),
                }
                .into(),
                other => other.into(),
            }
        };
        let vdi = self.vdi_passes(&orch).map_err(wrap)?;
        let sevi = self.sevi_passes(&orch).map_err(wrap)?;
        Ok((vdi, sevi))
    }

    /// Per-slice question and rating results rebuilt from cached replies.
    pub fn pass_results(&self) -> Result<(Vec<VdiPassResult>, Vec<SeviPassResult>), PipelineError> {
        self.cached_passes(Stage::Score)
    }

    /// The score matrix rebuilt from cached replies, restricted to the
    /// enabled axes.
    pub fn score_matrix(&self) -> Result<ScoreMatrix, PipelineError> {
        let (vdi, sevi) = self.cached_passes(Stage::Score)?;
        Ok(self.restrict(ScoreMatrix::from_passes(&vdi, &sevi)))
    }

    fn restrict(&self, mut m: ScoreMatrix) -> ScoreMatrix {
        let enabled: BTreeSet<Axis> = self.config.axes.iter().copied().collect();
        m.scores.retain(|k, _| enabled.contains(&k.axis));
        m.mean_ratings.retain(|(_, d), _| enabled.contains(&Axis::of_dimension(*d)));
        m.rating_counts.retain(|(_, d), _| enabled.contains(&Axis::of_dimension(*d)));
        m.questions.retain(|_, r| enabled.contains(&Axis::of_question(r.axis)));
        m
    }

    fn score(&self) -> Result<Value, PipelineError> {
        let m = self.score_matrix()?;
        let files = export_scores(&m, None, &self.header(), self.config.format, &self.config.output.join("scores"))?;
        Ok(json!({"slices": m.slices().len(), "files": self.relative(&files)}))
    }

    fn jsd_summary(&self, m: &ScoreMatrix) -> Result<Option<JsdSummary>, PipelineError> {
        match jsd_analysis(m) {
            Ok(j) => Ok(Some(j)),
            Err(AggregateError::InsufficientCountries(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn jsd(&self) -> Result<Value, PipelineError> {
        let m = self.score_matrix()?;
        let j = jsd_analysis(&m)?;
        let dir = self.config.output.join("jsd");
        std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        let header = self.header();
        let mut pairs = Vec::new();
        for q in &j.questions {
            for a in 0..q.countries.len() {
                for b in (a + 1)..q.countries.len() {
                    pairs.push(vec![
                        q.dataset.clone(),
                        q.entity.clone(),
                        q.question_id.clone(),
                        q.countries[a].clone(),
                        q.countries[b].clone(),
                        format!("{}", q.matrix[a][b]),
                    ]);
                }
            }
        }
        let matrix = dir.join("jsd.csv");
        write_csv(
            &matrix,
            &header,
            &["dataset", "entity", "question_id", "country_a", "country_b", "distance"],
            &pairs,
        )?;
        let rows: Vec<Vec<String>> = j
            .entities
            .iter()
            .map(|e| {
                vec![
                    e.dataset.clone(),
                    e.entity.clone(),
                    e.questions.to_string(),
                    format!("{}", e.max),
                    format!("{}", e.mean),
                ]
            })
            .collect();
        let summary = dir.join("jsd_summary.csv");
        write_csv(&summary, &header, &["dataset", "entity", "questions", "max", "mean"], &rows)?;
        Ok(json!({
            "questions": j.questions.len(),
            "entities": j.entities.len(),
            "files": self.relative(&[matrix, summary]),
        }))
    }

    /// Subsampling analysis over cached replies.
    pub fn robustness_report(&self) -> Result<RobustnessReport, PipelineError> {
        if !self.runs_vdi() {
            return Err(PipelineError::Data("robustness needs an appearance axis enabled".into()));
        }
        robustness_analysis(
            &self.manifest,
            &self.catalog,
            &self.cached(),
            self.config.thresholds,
            &self.dimensions(),
            &RobustnessConfig::from(&self.config.robustness),
        )
        .map_err(|e| match e {
            AggregateError::Vqa(v @ VqaError::MissingCache { .. }) => StageOrderError::MissingReplies {
                stage: Stage::Robustness,
                detail: v.to_string(),
            }
            .into(),
            other => PipelineError::from(other),
        })
    }

    fn robustness(&self) -> Result<Value, PipelineError> {
        let report = self.robustness_report()?;
        let dir = self.config.output.join("robustness");
        std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        let header = self.header();
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let cells: Vec<Vec<String>> = report
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.budget.to_string(),
                    c.slice.dataset.clone(),
                    c.slice.entity.clone(),
                    c.slice.country.clone(),
                    c.axis.map_or("geodiv", |a| a.as_str()).to_string(),
                    c.samples.len().to_string(),
                    format!("{}", c.mean),
                    format!("{}", c.ci_half_width),
                ]
            })
            .collect();
        let cells_path = dir.join("robustness.csv");
        write_csv(
            &cells_path,
            &header,
            &["budget", "dataset", "entity", "country", "axis", "samples", "mean", "ci_half_width"],
            &cells,
        )?;
        let budgets: Vec<Vec<String>> = report
            .budgets
            .iter()
            .map(|b| {
                vec![
                    b.budget.to_string(),
                    format!("{}", b.mean_ci_half_width),
                    opt(b.rank_rho_mean),
                    opt(b.rank_rho_min),
                ]
            })
            .collect();
        let summary_path = dir.join("robustness_summary.csv");
        write_csv(
            &summary_path,
            &header,
            &["budget", "mean_ci_half_width", "rank_rho_mean", "rank_rho_min"],
            &budgets,
        )?;
        Ok(json!({
            "budgets": report.budgets.iter().map(|b| json!({
                "budget": b.budget,
                "mean_ci_half_width": b.mean_ci_half_width,
                "rank_rho_mean": b.rank_rho_mean,
                "rank_rho_min": b.rank_rho_min,
            })).collect::<Vec<_>>(),
            "files": self.relative(&[cells_path, summary_path]),
        }))
    }

    /// Accuracy, correlation and agreement of cached model replies against
    /// the configured annotation file.
    pub fn validation_report(&self) -> Result<ValidationReport, PipelineError> {
        let path = self.config.annotations.as_ref().ok_or_else(|| {
            ConfigError::Invalid(vec!["annotations: required by the validate stage".into()])
        })?;
        let annotations = load_annotations(path)?;
        let orch = self.cached();
        let images: BTreeMap<&str, &ImageRecord> =
            self.manifest.records().iter().map(|r| (r.image_id.as_str(), r)).collect();

        let mut answers = BTreeMap::new();
        let mut ratings = BTreeMap::new();
        let items: BTreeSet<(String, Target)> = annotations.iter().map(|a| (a.image_id.clone(), a.target())).collect();
        for (image_id, target) in items {
            let Some(img) = images.get(image_id.as_str()) else { continue };
            match target {
                Target::Question(qid) => {
                    let Some(q) = self.catalog.get(&qid) else { continue };
                    if let Ok(Step::Done(sel)) = orch.answer(img, q) {
                        answers.insert((image_id, qid), sel.into_iter().collect());
                    }
                }
                Target::Dimension(d) => {
                    if let Ok(Step::Done(r)) = orch.rating(img, &RatingScale::standard(d)) {
                        ratings.insert((image_id, d), r);
                    }
                }
            }
        }

        let mut accuracy = Vec::new();
        let has_questions = annotations.iter().any(|a| a.question_id.is_some());
        if has_questions {
            for rule in [MatchRule::Exact, MatchRule::Intersect] {
                accuracy.push(vdi_accuracy(&answers, &annotations, &self.catalog, rule)?);
            }
        }
        let correlation = if annotations.iter().any(|a| a.dimension.is_some()) {
            let country_of = self
                .manifest
                .records()
                .iter()
                .map(|r| (r.image_id.clone(), r.country.clone()))
                .collect();
            Some(sevi_correlation(&ratings, &annotations, &country_of)?)
        } else {
            None
        };
        Ok(ValidationReport {
            accuracy,
            correlation,
            agreement: agreement_by_target(&annotations),
        })
    }

    fn validate(&self) -> Result<Value, PipelineError> {
        let report = self.validation_report()?;
        let files = export_validation(&report, &self.header(), &self.config.output.join("validation"))?;
        let accuracy: Vec<Value> = report
            .accuracy
            .iter()
            .map(|r| {
                json!({
                    "rule": r.rule,
                    "entity": r.entity.accuracy(),
                    "background": r.background.accuracy(),
                    "overall": r.overall.accuracy(),
                    "ties_skipped": r.ties_skipped,
                })
            })
            .collect();
        Ok(json!({
            "accuracy": accuracy,
            "correlation": report.correlation.as_ref().map(|c| &c.averages),
            "files": self.relative(&files),
        }))
    }

    fn report(&self) -> Result<Value, PipelineError> {
        let (vdi, sevi) = self.cached_passes(Stage::Report)?;
        let m = self.restrict(ScoreMatrix::from_passes(&vdi, &sevi));
        let jsd = self.jsd_summary(&m)?;
        let dir = self.config.output.join("report");
        let header = self.header();
        let mut files = export_scores(&m, jsd.as_ref(), &header, self.config.format, &dir)?;
        if !sevi.is_empty() {
            let path = dir.join("ratings.csv");
            export_ratings(&sevi, &header, &path)?;
            files.push(path);
        }
        Ok(json!({
            "format": self.config.format,
            "slices": m.slices().len(),
            "files": self.relative(&files),
        }))
    }
}

fn is_vdi(a: Axis) -> bool {
    matches!(a, Axis::EntityAppearance | Axis::Background)
}

/// Digest of the settings that shape replies and scores. Robustness settings
/// and annotations only feed leaf stages and are left out.
fn input_digest(config: &RunConfig, manifest: &Manifest, catalog: &Catalog, backend_id: &str) -> String {
    let doc = json!({
        "manifest": manifest.digest(),
        "catalog": catalog.digest(),
        "backend": backend_id,
        "thresholds": config.thresholds,
        "axes": config.axes,
        "seed": config.seed,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// Digest of everything that determines a run's results. Output location,
/// cache location, worker count and export format are excluded.
fn config_digest(config: &RunConfig, input_digest: &str) -> String {
    let doc = json!({
        "inputs": input_digest,
        "robustness": config.robustness,
        "annotations": config.annotations.as_ref().and_then(|p| std::fs::read(p).ok()).map(|b| hex::encode(Sha256::digest(&b))),
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::fixture::{generate, FixtureSpec};

    fn small_run() -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        let f = generate(&FixtureSpec {
            images_per_slice: 12,
            ..FixtureSpec::default()
        });
        f.write(dir.path()).unwrap();
        let mut c = RunConfig::load(&dir.path().join("run.toml")).unwrap();
        c.robustness.budgets = vec![4, 12];
        (dir, c)
    }

    #[test]
    fn score_before_vqa_is_a_stage_order_error() {
        let (_d, c) = small_run();
        let p = Pipeline::open(c).unwrap();
        let err = p.run(Stage::Score).unwrap_err();
        assert!(matches!(err, PipelineError::StageOrder(StageOrderError::Missing { missing: Stage::Vqa, .. })));
        assert!(matches!(
            p.run(Stage::Vqa),
            Err(PipelineError::StageOrder(StageOrderError::Missing { missing: Stage::Visibility, .. }))
        ));
    }

    #[test]
    fn stages_run_in_order_and_record_the_digest() {
        let (d, c) = small_run();
        let p = Pipeline::open(c.clone()).unwrap();
        for s in [Stage::Classify, Stage::Visibility, Stage::Vqa, Stage::Sevi, Stage::Score, Stage::Jsd, Stage::Report] {
            let summary = p.run(s).unwrap();
            assert_eq!(summary.config_digest, p.config_digest());
        }
        let scores = std::fs::read_to_string(d.path().join("out/scores/scores.csv")).unwrap();
        assert!(scores.contains(p.config_digest()));

        let mut leaf_only = c.clone();
        leaf_only.robustness.budgets = vec![6];
        let r = Pipeline::open(leaf_only).unwrap();
        assert_ne!(r.config_digest(), p.config_digest());
        r.run(Stage::Robustness).unwrap();

        let mut changed = c;
        changed.thresholds.others = 0.4;
        let q = Pipeline::open(changed).unwrap();
        assert!(matches!(
            q.run(Stage::Score),
            Err(PipelineError::StageOrder(StageOrderError::Stale { .. }))
        ));
    }

    #[test]
    fn scoring_stages_never_call_the_backend() {
        let (_d, c) = small_run();
        let p = Pipeline::open(c.clone()).unwrap();
        for s in [Stage::Classify, Stage::Visibility, Stage::Vqa, Stage::Sevi] {
            p.run(s).unwrap();
        }
        let backend_config = load_backend_config(&c.backend).unwrap();
        let crate::backend::BackendConfig::Mock(m) = backend_config else { panic!() };
        let table = crate::backend::PlantedTable::load(&c.backend.parent().unwrap().join(m.planted.unwrap())).unwrap();
        let mock = Arc::new(MockBackend::new(table, m.sampler));
        let q = Pipeline::with_backend(c, mock.clone(), OrchestratorConfig::default()).unwrap();
        for s in [Stage::Score, Stage::Robustness, Stage::Report] {
            q.run(s).unwrap();
        }
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn validate_without_annotations_is_a_config_error() {
        let (_d, c) = small_run();
        let p = Pipeline::open(c).unwrap();
        for s in [Stage::Classify, Stage::Visibility, Stage::Vqa, Stage::Sevi] {
            p.run(s).unwrap();
        }
        assert!(matches!(p.run(Stage::Validate), Err(PipelineError::Config(_))));
    }
}
