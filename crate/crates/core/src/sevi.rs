//! Socio-economic ratings: per-image 1-5 scores on Affluence, Maintenance and
//! (optionally) Cultural Localization, their per-slice distributions, and the
//! inverse-frequency generation plan used to rebalance a skewed slice.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::manifest::{ImageRecord, SliceKey};
use crate::metrics::{diversity_score, MetricsError};
use crate::vqa::{Orchestrator, Step, VqaError};

pub const LEVELS: usize = 5;

/// Smoothing added to level frequencies before inverting them.
pub const DEFAULT_MITIGATION_EPSILON: f64 = 1e-3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeviError {
    #[error("rating distribution is empty")]
    EmptyCell,
    #[error("mitigation budget must be at least {LEVELS}, got {0}")]
    InvalidBudget(u64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingDimension {
    Affluence,
    Maintenance,
    CulturalLocalization,
}

impl RatingDimension {
    pub const ALL: [RatingDimension; 3] = [
        RatingDimension::Affluence,
        RatingDimension::Maintenance,
        RatingDimension::CulturalLocalization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RatingDimension::Affluence => "affluence",
            RatingDimension::Maintenance => "maintenance",
            RatingDimension::CulturalLocalization => "cultural_localization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for RatingDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLevel {
    pub label: String,
    pub description: String,
}

/// A 1-5 rating scale; `levels[0]` defines score 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    pub dimension: RatingDimension,
    pub levels: [ScaleLevel; LEVELS],
}

fn level(label: &str, description: &str) -> ScaleLevel {
    ScaleLevel {
        label: label.to_string(),
        description: description.to_string(),
    }
}

impl RatingScale {
    pub fn standard(dimension: RatingDimension) -> Self {
        let levels = match dimension {
            RatingDimension::Affluence => [
                level("Impoverished", "clear signs of poverty; scarce, makeshift or deprived surroundings"),
                level("Low", "modest means; basic, inexpensive items and settings"),
                level("Moderate", "ordinary middle-income surroundings"),
                level("High", "comfortable, well-off surroundings with quality items"),
                level("Luxury", "opulent, high-end items and settings"),
            ],
            RatingDimension::Maintenance => [
                level("Severely Damaged", "broken, collapsing or unusable"),
                level("Poor", "visibly worn, dirty or in disrepair"),
                level("Moderate", "functional with ordinary wear"),
                level("Well-Maintained", "clean and cared for with little wear"),
                level("Excellent", "pristine, as new"),
            ],
            RatingDimension::CulturalLocalization => [
                level("Highly Globalized", "no distinct cultural markers; generic, global appearance"),
                level("Slightly Localized", "minor local hints outweighed by global aesthetics"),
                level("Moderately Localized", "a mix of global and local cues"),
                level("Strongly Localized", "clear, prominent elements tied to the local identity"),
                level("Deeply Rooted in Culture", "rich, highly characteristic traditional cues"),
            ],
        };
        Self { dimension, levels }
    }

    /// Human-readable scale definition, one level per line.
    pub fn describe(&self) -> String {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{} = {}: {}", i + 1, l.label, l.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.describe().as_bytes()))
    }
}

/// Rates one image on `scale`; `None` when the image failed.
pub fn rate_image(
    orchestrator: &Orchestrator,
    image: &ImageRecord,
    scale: &RatingScale,
) -> Result<Option<u8>, VqaError> {
    Ok(match orchestrator.rating(image, scale)? {
        Step::Done(score) => Some(score),
        Step::Failed(_) => None,
    })
}

/// One stored per-image rating, as exported for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRating {
    pub image_id: String,
    pub dimension: RatingDimension,
    pub score: u8,
    pub transcript_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeviPassResult {
    pub key: SliceKey,
    pub distributions: Vec<RatingDistribution>,
    pub ratings: Vec<ImageRating>,
    /// Images that could not be rated, per dimension.
    pub failed: Vec<(RatingDimension, u64)>,
}

impl SeviPassResult {
    pub fn distribution(&self, dimension: RatingDimension) -> Option<&RatingDistribution> {
        self.distributions.iter().find(|d| d.dimension == dimension)
    }
}

/// Rates every image of a slice on each enabled dimension.
pub fn run_sevi_pass(
    key: &SliceKey,
    images: &[&ImageRecord],
    dimensions: &[RatingDimension],
    orchestrator: &Orchestrator,
) -> Result<SeviPassResult, VqaError> {
    if images.is_empty() {
        return Err(VqaError::EmptySlice(key.to_string()));
    }
    let scales: Vec<RatingScale> = dimensions.iter().map(|&d| RatingScale::standard(d)).collect();
    let tasks: Vec<(usize, usize)> = (0..scales.len())
        .flat_map(|si| (0..images.len()).map(move |ii| (si, ii)))
        .collect();
    let scores = orchestrator
        .fan_out(&tasks, |&(si, ii)| rate_image(orchestrator, images[ii], &scales[si]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut result = SeviPassResult {
        key: key.clone(),
        distributions: Vec::new(),
        ratings: Vec::new(),
        failed: Vec::new(),
    };
    for (si, scale) in scales.iter().enumerate() {
        let mut counts = [0u64; LEVELS];
        let mut failed = 0;
        for (&(s, ii), score) in tasks.iter().zip(&scores) {
            if s != si {
                continue;
            }
            match score {
                Some(r) => {
                    counts[usize::from(*r) - 1] += 1;
                    let digest = orchestrator
                        .cached_rating(images[ii], scale)
                        .map(|c| c.transcript_digest())
                        .unwrap_or_default();
                    result.ratings.push(ImageRating {
                        image_id: images[ii].image_id.clone(),
                        dimension: scale.dimension,
                        score: *r,
                        transcript_digest: digest,
                    });
                }
                None => failed += 1,
            }
        }
        if failed == images.len() as u64 {
            return Err(VqaError::EmptySlice(key.to_string()));
        }
        result.distributions.push(RatingDistribution::new(key.clone(), scale.dimension, counts));
        result.failed.push((scale.dimension, failed));
    }
    Ok(result)
}

/// Counts of ratings 1..=5 for one slice and dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub key: SliceKey,
    pub dimension: RatingDimension,
    pub counts: [u64; LEVELS],
}

impl RatingDistribution {
    pub fn new(key: SliceKey, dimension: RatingDimension, counts: [u64; LEVELS]) -> Self {
        Self { key, dimension, counts }
    }

    pub fn from_ratings(key: SliceKey, dimension: RatingDimension, ratings: impl IntoIterator<Item = u8>) -> Self {
        let mut counts = [0; LEVELS];
        for r in ratings {
            assert!((1..=LEVELS as u8).contains(&r), "rating {r} outside 1..=5");
            counts[usize::from(r) - 1] += 1;
        }
        Self { key, dimension, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Count-weighted mean rating in `[1, 5]`.
pub fn mean_rating(rd: &RatingDistribution) -> Result<f64, SeviError> {
    let total = rd.total();
    if total == 0 {
        return Err(SeviError::EmptyCell);
    }
    let weighted: u64 = rd.counts.iter().zip(1u64..).map(|(&c, level)| c * level).sum();
    Ok(weighted as f64 / total as f64)
}

/// Diversity score of the rating distribution over the five levels.
pub fn sevi_diversity(rd: &RatingDistribution) -> Result<f64, SeviError> {
    if rd.total() == 0 {
        return Err(SeviError::EmptyCell);
    }
    Ok(diversity_score(&rd.counts, LEVELS)?)
}

/// Splits `budget` new generations across levels in inverse proportion to
/// their observed frequency (`1 / (p + epsilon)`), rounded by largest
/// remainder so the plan sums to `budget` exactly.
pub fn mitigation_plan(rd: &RatingDistribution, budget: u64, epsilon: f64) -> Result<[u64; LEVELS], SeviError> {
    if budget < LEVELS as u64 {
        return Err(SeviError::InvalidBudget(budget));
    }
    let total = rd.total();
    if total == 0 {
        return Err(SeviError::EmptyCell);
    }
    let weights: Vec<f64> = rd
        .counts
        .iter()
        .map(|&c| 1.0 / (c as f64 / total as f64 + epsilon))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / weight_sum * budget as f64).collect();

    let mut plan = [0u64; LEVELS];
    for (slot, q) in plan.iter_mut().zip(&quotas) {
        *slot = q.floor() as u64;
    }
    let assigned: u64 = plan.iter().sum();
    let mut order: Vec<usize> = (0..LEVELS).collect();
    // largest remainder first; equal remainders favour the rarer level, then the lower one
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
            .then(weights[b].total_cmp(&weights[a]))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take((budget - assigned) as usize) {
        plan[i] += 1;
    }
    Ok(plan)
}

/// Rating counts after adding the planned generations to the rated set,
/// assuming each planned image lands on its target level.
pub fn augmented_counts(rd: &RatingDistribution, plan: &[u64; LEVELS]) -> [u64; LEVELS] {
    let mut out = rd.counts;
    for (slot, add) in out.iter_mut().zip(plan) {
        *slot += add;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rd(counts: [u64; 5]) -> RatingDistribution {
        RatingDistribution::new(SliceKey::new("d", "house", "India"), RatingDimension::Affluence, counts)
    }

    #[test]
    fn scale_wording() {
        let a = RatingScale::standard(RatingDimension::Affluence);
        let labels: Vec<_> = a.levels.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["Impoverished", "Low", "Moderate", "High", "Luxury"]);
        let m = RatingScale::standard(RatingDimension::Maintenance);
        let labels: Vec<_> = m.levels.iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["Severely Damaged", "Poor", "Moderate", "Well-Maintained", "Excellent"]);
        let c = RatingScale::standard(RatingDimension::CulturalLocalization);
        assert_eq!(c.levels[4].label, "Deeply Rooted in Culture");
        assert!(a.describe().starts_with("1 = Impoverished"));
    }

    #[test]
    fn means() {
        assert_eq!(mean_rating(&rd([0, 0, 0, 0, 7])).unwrap(), 5.0);
        assert_eq!(mean_rating(&rd([1, 0, 0, 0, 1])).unwrap(), 3.0);
        assert_eq!(mean_rating(&rd([0; 5])), Err(SeviError::EmptyCell));
    }

    #[test]
    fn diversities() {
        assert_eq!(sevi_diversity(&rd([0, 0, 250, 0, 0])).unwrap(), 0.0);
        assert_eq!(sevi_diversity(&rd([50; 5])).unwrap(), 1.0);
        assert_abs_diff_eq!(sevi_diversity(&rd([125, 125, 0, 0, 0])).unwrap(), 0.25, epsilon = 1e-12);
        assert_eq!(sevi_diversity(&rd([0; 5])), Err(SeviError::EmptyCell));
    }

    #[test]
    fn plan_for_uniform_input_is_uniform() {
        assert_eq!(mitigation_plan(&rd([7; 5]), 100, 1e-3).unwrap(), [20; 5]);
    }

    #[test]
    fn plan_follows_inverse_weights() {
        let input = rd([96, 1, 1, 1, 1]);
        let plan = mitigation_plan(&input, 100, 1e-3).unwrap();
        assert_eq!(plan.iter().sum::<u64>(), 100);
        // inverse-weight oracle: 1/(0.961) vs 1/(0.011)
        let w_common: f64 = 1.0 / 0.961;
        let w_rare = 1.0 / 0.011;
        let share = w_common / (w_common + 4.0 * w_rare);
        assert_eq!(plan[0], (share * 100.0).round() as u64);
        assert!(plan[1..].iter().all(|&p| p > plan[0]));
    }

    #[test]
    fn plan_rejects_small_budget() {
        assert_eq!(mitigation_plan(&rd([1; 5]), 4, 1e-3), Err(SeviError::InvalidBudget(4)));
    }

    #[test]
    fn from_ratings_tallies_levels() {
        let d = RatingDistribution::from_ratings(SliceKey::new("d", "e", "c"), RatingDimension::Maintenance, [1, 5, 5, 3]);
        assert_eq!(d.counts, [1, 0, 1, 0, 2]);
    }
}
