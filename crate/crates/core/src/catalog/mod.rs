//! Question/answer catalogs and the control-step rules applied to them:
//! low-coverage exclusion and promotion of heavy "None of the above" answers to
//! a permanent "Others" category.

mod builtin;

pub use builtin::{builtin_background, builtin_entities, builtin_entity};

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{diversity_score, Distribution, MetricsError};

/// Abstention option appended to every question put to the VQA model.
pub const NOTA: &str = "None of the above";
/// Category that absorbs NOTA answers once they exceed the promotion threshold.
pub const OTHERS: &str = "Others";

/// Default minimum visibility retention for a question to be scored.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.5;
/// Default NOTA fraction above which "Others" is added to the answer set.
pub const DEFAULT_OTHERS_THRESHOLD: f64 = 0.30;

/// Control-step thresholds applied when scoring a question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub coverage: f64,
    pub others: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            coverage: DEFAULT_COVERAGE_THRESHOLD,
            others: DEFAULT_OTHERS_THRESHOLD,
        }
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("coverage report for `{0}` has no images")]
    EmptyCell(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CatalogError {
    CatalogError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scene {
    Indoor,
    Outdoor,
}

impl Scene {
    pub fn as_str(self) -> &'static str {
        match self {
            Scene::Indoor => "indoor",
            Scene::Outdoor => "outdoor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionAxis {
    EntityAppearance,
    BackgroundIndoor,
    BackgroundOutdoor,
}

impl QuestionAxis {
    pub fn background(scene: Scene) -> Self {
        match scene {
            Scene::Indoor => QuestionAxis::BackgroundIndoor,
            Scene::Outdoor => QuestionAxis::BackgroundOutdoor,
        }
    }

    pub fn is_background(self) -> bool {
        !matches!(self, QuestionAxis::EntityAppearance)
    }
}

/// One attribute question and its approximate answer set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSpec {
    pub id: String,
    pub axis: QuestionAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub text: String,
    pub options: Vec<String>,
    #[serde(default)]
    pub multi_select: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility_text: Option<String>,
}

impl QuestionSpec {
    /// Options offered to the model: the answer set followed by NOTA.
    pub fn offered_options(&self) -> Vec<String> {
        let mut offered = self.options.clone();
        offered.push(NOTA.to_string());
        offered
    }

    fn validate(&self, path: &str) -> Result<(), CatalogError> {
        if self.id.trim().is_empty() {
            return Err(schema(format!("{path}.id"), "must be nonempty"));
        }
        if self.text.trim().is_empty() {
            return Err(schema(format!("{path}.text"), "must be nonempty"));
        }
        if self.options.len() < 2 {
            return Err(schema(
                format!("{path}.options"),
                format!("needs at least 2 options, got {}", self.options.len()),
            ));
        }
        let mut seen = HashSet::new();
        for (i, option) in self.options.iter().enumerate() {
            let at = format!("{path}.options[{i}]");
            if option.trim().is_empty() {
                return Err(schema(at, "label must be nonempty"));
            }
            if option == NOTA || option == OTHERS {
                return Err(schema(at, format!("`{option}` is a reserved label")));
            }
            if !seen.insert(option.as_str()) {
                return Err(schema(at, format!("duplicate label `{option}`")));
            }
        }
        match self.axis {
            QuestionAxis::EntityAppearance => {
                if self.entity.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(schema(
                        format!("{path}.entity"),
                        "entity questions must name their entity",
                    ));
                }
                if self.visibility_text.as_deref().is_none_or(|v| v.trim().is_empty()) {
                    return Err(schema(
                        format!("{path}.visibility_text"),
                        "entity questions need a visibility question",
                    ));
                }
            }
            QuestionAxis::BackgroundIndoor | QuestionAxis::BackgroundOutdoor => {
                if self.entity.is_some() {
                    return Err(schema(
                        format!("{path}.entity"),
                        "background questions apply to every entity",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A validated set of questions with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    #[serde(default)]
    pub provenance: String,
    pub questions: Vec<QuestionSpec>,
}

impl Catalog {
    pub fn new(provenance: impl Into<String>, questions: Vec<QuestionSpec>) -> Result<Self, CatalogError> {
        let catalog = Self {
            provenance: provenance.into(),
            questions,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let mut ids = HashSet::new();
        for (i, q) in self.questions.iter().enumerate() {
            q.validate(&format!("questions[{i}]"))?;
            if !ids.insert(q.id.as_str()) {
                return Err(CatalogError::DuplicateId(q.id.clone()));
            }
        }
        Ok(())
    }

    /// Combines several catalog documents; ids must stay unique across all.
    pub fn merge(catalogs: impl IntoIterator<Item = Catalog>) -> Result<Self, CatalogError> {
        let mut provenance = Vec::new();
        let mut questions = Vec::new();
        for c in catalogs {
            if !c.provenance.is_empty() {
                provenance.push(c.provenance);
            }
            questions.extend(c.questions);
        }
        Self::new(provenance.join("\n"), questions)
    }

    pub fn get(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn entity_questions<'a>(&'a self, entity: &'a str) -> impl Iterator<Item = &'a QuestionSpec> + 'a {
        self.questions.iter().filter(move |q| {
            q.axis == QuestionAxis::EntityAppearance && q.entity.as_deref() == Some(entity)
        })
    }

    pub fn background_questions(&self, scene: Scene) -> impl Iterator<Item = &QuestionSpec> + '_ {
        let axis = QuestionAxis::background(scene);
        self.questions.iter().filter(move |q| q.axis == axis)
    }

    pub fn entities(&self) -> BTreeSet<String> {
        self.questions.iter().filter_map(|q| q.entity.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    /// SHA-256 of the canonical serialization, used for provenance headers.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Parses and validates a catalog document.
pub fn load_catalog(mut source: impl Read) -> Result<Catalog, CatalogError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(schema("$", "empty document"));
    }
    let mut de = serde_json::Deserializer::from_str(&text);
    let catalog: Catalog = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    catalog.validate()?;
    Ok(catalog)
}

/// Visibility bookkeeping for one question in one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub question_id: String,
    pub total_images: u64,
    pub retained_after_visibility: u64,
    /// NOTA share among the retained images that were answered.
    pub nota_fraction: f64,
}

impl CoverageReport {
    pub fn retention(&self) -> Option<f64> {
        (self.total_images > 0).then(|| self.retained_after_visibility as f64 / self.total_images as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageDecision {
    Keep,
    Drop,
}

/// Drops a question whose visibility step retained strictly less than
/// `threshold` of the images it was asked on.
pub fn low_coverage_filter(report: &CoverageReport, threshold: f64) -> Result<CoverageDecision, CatalogError> {
    let retention = report
        .retention()
        .ok_or_else(|| CatalogError::EmptyCell(report.question_id.clone()))?;
    Ok(if retention < threshold {
        CoverageDecision::Drop
    } else {
        CoverageDecision::Keep
    })
}

/// Answer set used for scoring: the question's options, plus a trailing
/// "Others" when NOTA answers make up strictly more than `others_threshold`.
pub fn effective_answer_set(q: &QuestionSpec, nota_fraction: f64, others_threshold: f64) -> Vec<String> {
    let mut labels = q.options.clone();
    if nota_fraction > others_threshold {
        labels.push(OTHERS.to_string());
    }
    labels
}

/// Empirical answer distribution for one question in one slice.
///
/// Below the promotion threshold NOTA selections are left out and the
/// remaining counts renormalize over the answer set; above it they are
/// counted under "Others".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub question_id: String,
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    pub nota_count: u64,
    pub others_promoted: bool,
}

impl AnswerDistribution {
    /// `option_counts` is aligned with `q.options`; `answered_images` is the
    /// number of images that produced a valid reply.
    pub fn build(
        q: &QuestionSpec,
        option_counts: &[u64],
        nota_count: u64,
        answered_images: u64,
        others_threshold: f64,
    ) -> Self {
        assert_eq!(option_counts.len(), q.options.len(), "counts misaligned with options");
        let nota_fraction = if answered_images == 0 {
            0.0
        } else {
            nota_count as f64 / answered_images as f64
        };
        let labels = effective_answer_set(q, nota_fraction, others_threshold);
        let others_promoted = labels.len() > q.options.len();
        let mut counts = option_counts.to_vec();
        if others_promoted {
            counts.push(nota_count);
        }
        Self {
            question_id: q.id.clone(),
            labels,
            counts,
            nota_count,
            others_promoted,
        }
    }

    /// |answer set| as used in the diversity denominator.
    pub fn answer_set_size(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diversity(&self) -> Result<f64, MetricsError> {
        diversity_score(&self.counts, self.answer_set_size())
    }

    pub fn distribution(&self) -> Result<Distribution<f64>, MetricsError> {
        Distribution::from_counts(self.labels.clone(), &self.counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn question(options: &[&str]) -> QuestionSpec {
        QuestionSpec {
            id: "house.roof".into(),
            axis: QuestionAxis::EntityAppearance,
            entity: Some("house".into()),
            text: "Is the roof sloped or flat?".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            multi_select: true,
            visibility_text: Some("Is the roof visible?".into()),
        }
    }

    fn report(retained: u64, total: u64) -> CoverageReport {
        CoverageReport {
            question_id: "q".into(),
            total_images: total,
            retained_after_visibility: retained,
            nota_fraction: 0.0,
        }
    }

    #[test]
    fn coverage_threshold_is_strict() {
        assert_eq!(low_coverage_filter(&report(49, 100), 0.5).unwrap(), CoverageDecision::Drop);
        assert_eq!(low_coverage_filter(&report(50, 100), 0.5).unwrap(), CoverageDecision::Keep);
        assert_eq!(low_coverage_filter(&report(100, 100), 0.5).unwrap(), CoverageDecision::Keep);
        assert!(matches!(
            low_coverage_filter(&report(0, 0), 0.5),
            Err(CatalogError::EmptyCell(_))
        ));
    }

    #[test]
    fn others_promotion_is_strictly_greater() {
        let abc = question(&["A", "B", "C"]);
        assert_eq!(effective_answer_set(&abc, 0.31, 0.30), ["A", "B", "C", OTHERS]);
        assert_eq!(effective_answer_set(&abc, 0.02, 0.30), ["A", "B", "C"]);
        let ab = question(&["A", "B"]);
        assert_eq!(effective_answer_set(&ab, 0.30, 0.30), ["A", "B"]);
    }

    #[test]
    fn distribution_renormalizes_or_promotes() {
        let q = question(&["A", "B", "C"]);
        let low = AnswerDistribution::build(&q, &[40, 30, 0], 5, 75, 0.30);
        assert!(!low.others_promoted);
        assert_eq!(low.counts, [40, 30, 0]);
        assert_eq!(low.answer_set_size(), 3);

        let high = AnswerDistribution::build(&q, &[40, 30, 0], 31, 100, 0.30);
        assert!(high.others_promoted);
        assert_eq!(high.labels.last().unwrap(), OTHERS);
        assert_eq!(high.counts, [40, 30, 0, 31]);
        assert_eq!(high.answer_set_size(), 4);
    }

    #[test]
    fn rejects_bad_questions() {
        let mut q = question(&["A"]);
        assert!(matches!(
            q.validate("questions[0]"),
            Err(CatalogError::Schema { path, .. }) if path == "questions[0].options"
        ));
        q = question(&["A", "A"]);
        assert!(q.validate("q").is_err());
        q = question(&["A", NOTA]);
        assert!(q.validate("q").is_err());
        q = question(&["A", "B"]);
        q.visibility_text = None;
        assert!(matches!(
            q.validate("q"),
            Err(CatalogError::Schema { path, .. }) if path == "q.visibility_text"
        ));
        q = question(&["A", "B"]);
        q.axis = QuestionAxis::BackgroundOutdoor;
        assert!(q.validate("q").is_err());
    }

    #[test]
    fn load_reports_paths_and_duplicates() {
        assert!(matches!(
            load_catalog("".as_bytes()),
            Err(CatalogError::Schema { .. })
        ));
        let bad = r#"{"questions":[{"id":"x","axis":"sideways","text":"t","options":["a","b"]}]}"#;
        match load_catalog(bad.as_bytes()) {
            Err(CatalogError::Schema { path, .. }) => assert_eq!(path, "questions[0].axis"),
            other => panic!("unexpected {other:?}"),
        }
        let dup = r#"{"questions":[
            {"id":"x","axis":"background_indoor","text":"t","options":["a","b"]},
            {"id":"x","axis":"background_outdoor","text":"t","options":["a","b"]}]}"#;
        assert!(matches!(load_catalog(dup.as_bytes()), Err(CatalogError::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn offered_options_append_nota() {
        assert_eq!(question(&["A", "B"]).offered_options(), ["A", "B", NOTA]);
    }
}
