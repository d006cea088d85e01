//! Axis and overall scores, cross-country distances, budget robustness and
//! report exports.

pub mod export;
mod jsd;
mod robustness;

pub use jsd::{jsd_analysis, jsd_question, EntityJsd, JsdSummary, QuestionJsd};
pub use robustness::{robustness_analysis, score_slices, subsample, BudgetSummary, RobustnessCell, RobustnessConfig, RobustnessReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AnswerDistribution, CoverageReport, QuestionAxis};
use crate::manifest::SliceKey;
use crate::sevi::{mean_rating, sevi_diversity, RatingDimension, SeviPassResult, LEVELS};
use crate::vqa::{QuestionStatus, VdiPassResult, VqaError};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no surviving scores for axis `{0}`")]
    EmptyAxis(String),
    #[error("need at least two countries to compare, got {0}")]
    InsufficientCountries(usize),
    #[error("budget {budget} exceeds the {size} images of slice {slice}")]
    BudgetExceedsSlice { slice: String, budget: usize, size: usize },
    #[error("nothing to export: the score matrix is empty")]
    EmptyMatrix,
    #[error("{path}: {message}")]
    Import { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Vqa(#[from] VqaError),
}

/// Scoring axes. The overall score averages the first four; cultural
/// localization is reported alongside when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    EntityAppearance,
    Background,
    Affluence,
    Maintenance,
    CulturalLocalization,
}

impl Axis {
    pub const GEODIV: [Axis; 4] = [Axis::EntityAppearance, Axis::Background, Axis::Affluence, Axis::Maintenance];
    pub const ALL: [Axis; 5] = [
        Axis::EntityAppearance,
        Axis::Background,
        Axis::Affluence,
        Axis::Maintenance,
        Axis::CulturalLocalization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::EntityAppearance => "entity_appearance",
            Axis::Background => "background",
            Axis::Affluence => "affluence",
            Axis::Maintenance => "maintenance",
            Axis::CulturalLocalization => "cultural_localization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn of_question(axis: QuestionAxis) -> Self {
        match axis {
            QuestionAxis::EntityAppearance => Axis::EntityAppearance,
            QuestionAxis::BackgroundIndoor | QuestionAxis::BackgroundOutdoor => Axis::Background,
        }
    }

    pub fn of_dimension(d: RatingDimension) -> Self {
        match d {
            RatingDimension::Affluence => Axis::Affluence,
            RatingDimension::Maintenance => Axis::Maintenance,
            RatingDimension::CulturalLocalization => Axis::CulturalLocalization,
        }
    }

    pub fn dimension(self) -> Option<RatingDimension> {
        match self {
            Axis::Affluence => Some(RatingDimension::Affluence),
            Axis::Maintenance => Some(RatingDimension::Maintenance),
            Axis::CulturalLocalization => Some(RatingDimension::CulturalLocalization),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unweighted mean of the surviving per-question scores of one axis.
pub fn axis_score(scores: &[f64]) -> Result<f64, AggregateError> {
    if scores.is_empty() {
        return Err(AggregateError::EmptyAxis("axis".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean of the four axis scores; every one must be present.
pub fn geodiv_score(axes: &BTreeMap<Axis, f64>) -> Result<f64, AggregateError> {
    let mut sum = 0.0;
    for axis in Axis::GEODIV {
        sum += axes
            .get(&axis)
            .ok_or_else(|| AggregateError::EmptyAxis(axis.as_str().into()))?;
    }
    Ok(sum / Axis::GEODIV.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScoreKey {
    pub slice: SliceKey,
    pub axis: Axis,
    /// `None` for the axis aggregate.
    pub question_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub axis: QuestionAxis,
    pub status: QuestionStatus,
    pub coverage: Option<CoverageReport>,
    pub distribution: Option<AnswerDistribution>,
}

/// When averaging over entities for a country or dataset score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AveragingOrder {
    /// Overall score per (entity, country) first, then the mean over entities.
    AxisFirst,
    /// Each axis averaged over entities first, then the mean over axes.
    EntityFirst,
}

impl AveragingOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            AveragingOrder::AxisFirst => "axis_first",
            AveragingOrder::EntityFirst => "entity_first",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreMatrix {
    pub scores: BTreeMap<ScoreKey, f64>,
    pub mean_ratings: BTreeMap<(SliceKey, RatingDimension), f64>,
    pub rating_counts: BTreeMap<(SliceKey, RatingDimension), [u64; LEVELS]>,
    pub questions: BTreeMap<(SliceKey, String), QuestionRecord>,
}

impl ScoreMatrix {
    pub fn from_passes(vdi: &[VdiPassResult], sevi: &[SeviPassResult]) -> Self {
        let mut m = Self::default();
        for pass in vdi {
            let mut per_axis: BTreeMap<Axis, Vec<f64>> = BTreeMap::new();
            for q in &pass.questions {
                m.questions.insert(
                    (pass.key.clone(), q.question_id.clone()),
                    QuestionRecord {
                        axis: q.axis,
                        status: q.status,
                        coverage: q.coverage.clone(),
                        distribution: q.distribution.clone(),
                    },
                );
                if let (QuestionStatus::Kept, Some(score)) = (q.status, q.score) {
                    let axis = Axis::of_question(q.axis);
                    per_axis.entry(axis).or_default().push(score);
                    m.scores.insert(
                        ScoreKey {
                            slice: pass.key.clone(),
                            axis,
                            question_id: Some(q.question_id.clone()),
                        },
                        score,
                    );
                }
            }
            for (axis, scores) in per_axis {
                let score = axis_score(&scores).expect("axes are only created with a score");
                m.scores.insert(
                    ScoreKey {
                        slice: pass.key.clone(),
                        axis,
                        question_id: None,
                    },
                    score,
                );
            }
        }
        for pass in sevi {
            for rd in &pass.distributions {
                let (Ok(div), Ok(mean)) = (sevi_diversity(rd), mean_rating(rd)) else {
                    continue;
                };
                let slot = (pass.key.clone(), rd.dimension);
                m.scores.insert(
                    ScoreKey {
                        slice: pass.key.clone(),
                        axis: Axis::of_dimension(rd.dimension),
                        question_id: None,
                    },
                    div,
                );
                m.mean_ratings.insert(slot.clone(), mean);
                m.rating_counts.insert(slot, rd.counts);
            }
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn slices(&self) -> BTreeSet<SliceKey> {
        self.scores.keys().map(|k| k.slice.clone()).collect()
    }

    pub fn axis(&self, slice: &SliceKey, axis: Axis) -> Option<f64> {
        self.scores
            .get(&ScoreKey {
                slice: slice.clone(),
                axis,
                question_id: None,
            })
            .copied()
    }

    pub fn axis_scores(&self, slice: &SliceKey) -> BTreeMap<Axis, f64> {
        Axis::ALL
            .into_iter()
            .filter_map(|a| self.axis(slice, a).map(|s| (a, s)))
            .collect()
    }

    pub fn geodiv(&self, slice: &SliceKey) -> Result<f64, AggregateError> {
        geodiv_score(&self.axis_scores(slice))
    }

    /// Per-question scores of one slice and axis.
    pub fn question_scores(&self, slice: &SliceKey, axis: Axis) -> Vec<(&str, f64)> {
        self.scores
            .iter()
            .filter(|(k, _)| &k.slice == slice && k.axis == axis)
            .filter_map(|(k, &v)| k.question_id.as_deref().map(|q| (q, v)))
            .collect()
    }

    /// Overall scores averaged over every slice mapped to the same group.
    /// Slices missing an axis are skipped under `AxisFirst`; under
    /// `EntityFirst` each axis averages whatever slices carry it.
    pub fn grouped_geodiv(&self, order: AveragingOrder, group: impl Fn(&SliceKey) -> String) -> BTreeMap<String, f64> {
        let mut groups: BTreeMap<String, Vec<SliceKey>> = BTreeMap::new();
        for s in self.slices() {
            groups.entry(group(&s)).or_default().push(s);
        }
        let mut out = BTreeMap::new();
        for (name, slices) in groups {
            let value = match order {
                AveragingOrder::AxisFirst => {
                    let per_slice: Vec<f64> = slices.iter().filter_map(|s| self.geodiv(s).ok()).collect();
                    axis_score(&per_slice).ok()
                }
                AveragingOrder::EntityFirst => {
                    let mut axes = BTreeMap::new();
                    for axis in Axis::GEODIV {
                        let vals: Vec<f64> = slices.iter().filter_map(|s| self.axis(s, axis)).collect();
                        if let Ok(v) = axis_score(&vals) {
                            axes.insert(axis, v);
                        }
                    }
                    geodiv_score(&axes).ok()
                }
            };
            if let Some(v) = value {
                out.insert(name, v);
            }
        }
        out
    }

    /// Country scores within each dataset, keyed `(dataset, country)`.
    pub fn country_geodiv(&self, order: AveragingOrder) -> BTreeMap<(String, String), f64> {
        self.grouped_geodiv(order, |s| format!("{}\u{0}{}", s.dataset, s.country))
            .into_iter()
            .map(|(k, v)| {
                let (d, c) = k.split_once('\u{0}').expect("group key has two parts");
                ((d.to_string(), c.to_string()), v)
            })
            .collect()
    }

    pub fn dataset_geodiv(&self, order: AveragingOrder) -> BTreeMap<String, f64> {
        self.grouped_geodiv(order, |s| s.dataset.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn axis_means() {
        assert_abs_diff_eq!(axis_score(&[0.4, 0.6]).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(axis_score(&[0.37]).unwrap(), 0.37);
        assert!(matches!(axis_score(&[]), Err(AggregateError::EmptyAxis(_))));
    }

    #[test]
    fn overall_score() {
        let axes = |v: [f64; 4]| Axis::GEODIV.into_iter().zip(v).collect::<BTreeMap<_, _>>();
        assert_eq!(geodiv_score(&axes([1.0; 4])).unwrap(), 1.0);
        assert_abs_diff_eq!(geodiv_score(&axes([0.2, 0.4, 0.4, 0.6])).unwrap(), 0.4, epsilon = 1e-15);
        let mut partial = axes([0.5; 4]);
        partial.remove(&Axis::Maintenance);
        assert!(matches!(geodiv_score(&partial), Err(AggregateError::EmptyAxis(a)) if a == "maintenance"));
    }

    fn put(m: &mut ScoreMatrix, slice: &SliceKey, axis: Axis, v: f64) {
        m.scores.insert(
            ScoreKey {
                slice: slice.clone(),
                axis,
                question_id: None,
            },
            v,
        );
    }

    #[test]
    fn averaging_orders_differ_only_with_missing_axes() {
        let a = SliceKey::new("d", "house", "India");
        let b = SliceKey::new("d", "car", "India");
        let mut m = ScoreMatrix::default();
        for (i, axis) in Axis::GEODIV.into_iter().enumerate() {
            put(&mut m, &a, axis, 0.1 * (i + 1) as f64);
            put(&mut m, &b, axis, 0.2);
        }
        let k = ("d".to_string(), "India".to_string());
        let x = m.country_geodiv(AveragingOrder::AxisFirst)[&k];
        let y = m.country_geodiv(AveragingOrder::EntityFirst)[&k];
        assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        assert_abs_diff_eq!(x, (0.25 + 0.2) / 2.0, epsilon = 1e-15);

        m.scores.retain(|key, _| !(key.slice == b && key.axis == Axis::Background));
        let x = m.country_geodiv(AveragingOrder::AxisFirst)[&k];
        let y = m.country_geodiv(AveragingOrder::EntityFirst)[&k];
        assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(y, (0.15 + 0.2 + 0.25 + 0.3) / 4.0, epsilon = 1e-15);
    }
}
