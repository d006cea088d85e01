use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{AggregateError, AveragingOrder, Axis, ScoreMatrix};
use crate::catalog::{Catalog, Thresholds};
use crate::manifest::{ImageRecord, Manifest, SliceKey};
use crate::metrics::{spearman_rho, PairedSamples};
use crate::sevi::{run_sevi_pass, RatingDimension};
use crate::vqa::{run_vdi_pass, Orchestrator};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobustnessConfig {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            budgets: vec![10, 50, 100, 150, 200, 250],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Scores of one slice and axis (`None` = overall) at one budget, per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCell {
    pub budget: usize,
    pub slice: SliceKey,
    pub axis: Option<Axis>,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSummary {
    pub budget: usize,
    /// Mean 95% interval half-width over every (slice, axis) cell.
    pub mean_ci_half_width: f64,
    /// Spearman correlation of country rankings against the full run, over
    /// seeds and datasets.
    pub rank_rho_mean: Option<f64>,
    pub rank_rho_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub cells: Vec<RobustnessCell>,
    pub budgets: Vec<BudgetSummary>,
    pub full: ScoreMatrix,
}

/// `budget` images of a slice drawn without replacement, in manifest order.
/// The draw depends only on `seed` and the slice key.
pub fn subsample<'a>(
    key: &SliceKey,
    images: &[&'a ImageRecord],
    budget: usize,
    seed: u64,
) -> Result<Vec<&'a ImageRecord>, AggregateError> {
    if budget > images.len() {
        return Err(AggregateError::BudgetExceedsSlice {
            slice: key.to_string(),
            budget,
            size: images.len(),
        });
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.to_string().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut idx: Vec<usize> = (0..images.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(budget);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| images[i]).collect())
}

/// Scores every slice of `slices` into one matrix.
pub fn score_slices(
    slices: &BTreeMap<SliceKey, Vec<&ImageRecord>>,
    catalog: &Catalog,
    orch: &Orchestrator,
    thresholds: Thresholds,
    dimensions: &[RatingDimension],
) -> Result<ScoreMatrix, AggregateError> {
    let mut vdi = Vec::with_capacity(slices.len());
    let mut sevi = Vec::with_capacity(slices.len());
    for (key, images) in slices {
        vdi.push(run_vdi_pass(key, images, catalog, orch, thresholds)?);
        if !dimensions.is_empty() {
            sevi.push(run_sevi_pass(key, images, dimensions, orch)?);
        }
    }
    Ok(ScoreMatrix::from_passes(&vdi, &sevi))
}

fn ci_half_width(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Z95 * var.sqrt() / k.sqrt())
}

fn rank_rhos(sample: &ScoreMatrix, full: &ScoreMatrix) -> Vec<f64> {
    let at = sample.country_geodiv(AveragingOrder::AxisFirst);
    let reference = full.country_geodiv(AveragingOrder::AxisFirst);
    let mut per_dataset: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((dataset, country), &v) in &at {
        if let Some(&r) = reference.get(&(dataset.clone(), country.clone())) {
            let e = per_dataset.entry(dataset.as_str()).or_default();
            e.0.push(v);
            e.1.push(r);
        }
    }
    per_dataset
        .into_values()
        .filter_map(|(xs, ys)| {
            let s = PairedSamples::new(xs, ys).ok()?;
            spearman_rho(&s).ok()
        })
        .collect()
}

/// Re-scores random subsamples of every slice at each budget and seed, then
/// reports spread and ranking stability against the full run. Replies come
/// from the cache once the full run has been scored.
pub fn robustness_analysis(
    manifest: &Manifest,
    catalog: &Catalog,
    orch: &Orchestrator,
    thresholds: Thresholds,
    dimensions: &[RatingDimension],
    config: &RobustnessConfig,
) -> Result<RobustnessReport, AggregateError> {
    let slices = manifest.slices();
    if let Some(&largest) = config.budgets.iter().max() {
        for (key, images) in &slices {
            if largest > images.len() {
                return Err(AggregateError::BudgetExceedsSlice {
                    slice: key.to_string(),
                    budget: largest,
                    size: images.len(),
                });
            }
        }
    }
    let full = score_slices(&slices, catalog, orch, thresholds, dimensions)?;

    let mut cells = Vec::new();
    let mut budgets = Vec::new();
    for &budget in &config.budgets {
        let mut samples: BTreeMap<(SliceKey, Option<Axis>), Vec<f64>> = BTreeMap::new();
        let mut rhos = Vec::new();
        for &seed in &config.seeds {
            let mut sub = BTreeMap::new();
            for (key, images) in &slices {
                sub.insert(key.clone(), subsample(key, images, budget, seed)?);
            }
            let m = score_slices(&sub, catalog, orch, thresholds, dimensions)?;
            for slice in m.slices() {
                for axis in Axis::GEODIV {
                    if let Some(v) = m.axis(&slice, axis) {
                        samples.entry((slice.clone(), Some(axis))).or_default().push(v);
                    }
                }
                if let Ok(v) = m.geodiv(&slice) {
                    samples.entry((slice.clone(), None)).or_default().push(v);
                }
            }
            rhos.extend(rank_rhos(&m, &full));
        }
        let mut widths = Vec::new();
        for ((slice, axis), values) in samples {
            let (mean, half) = ci_half_width(&values);
            if axis.is_some() {
                widths.push(half);
            }
            cells.push(RobustnessCell {
                budget,
                slice,
                axis,
                samples: values,
                mean,
                ci_half_width: half,
            });
        }
        budgets.push(BudgetSummary {
            budget,
            mean_ci_half_width: if widths.is_empty() {
                0.0
            } else {
                widths.iter().sum::<f64>() / widths.len() as f64
            },
            rank_rho_mean: (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64),
            rank_rho_min: rhos.iter().cloned().reduce(f64::min),
        });
    }
    Ok(RobustnessReport { cells, budgets, full })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| ImageRecord {
                image_id: format!("i{i}"),
                uri: String::new(),
                entity: "e".into(),
                country: "c".into(),
                dataset: "d".into(),
                seed: None,
            })
            .collect()
    }

    #[test]
    fn subsample_is_seeded_and_bounded() {
        let imgs = images(30);
        let refs: Vec<&ImageRecord> = imgs.iter().collect();
        let key = SliceKey::new("d", "e", "c");
        let a = subsample(&key, &refs, 10, 1).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample(&key, &refs, 10, 1).unwrap());
        assert_ne!(a, subsample(&key, &refs, 10, 2).unwrap());
        assert_eq!(subsample(&key, &refs, 30, 9).unwrap(), refs);
        assert!(matches!(
            subsample(&key, &refs, 31, 0),
            Err(AggregateError::BudgetExceedsSlice { budget: 31, size: 30, .. })
        ));
    }

    #[test]
    fn interval_half_width() {
        let (mean, half) = ci_half_width(&[1.0, 2.0, 3.0]);
        assert_eq!(mean, 2.0);
        assert!((half - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(ci_half_width(&[0.5, 0.5, 0.5]).1, 0.0);
    }
}
