//! Numerical kernel: entropy, normalized Hill numbers, Jensen-Shannon distance,
//! and the correlation and agreement statistics used by the rest of the crate.
//!
//! Everything here is a pure function over immutable inputs and is generic over
//! [`Scalar`], so the same code runs in `f32` or `f64`.

mod correlation;
mod vote;

pub use correlation::{average_ranks, kendall_tau, pearson_r, spearman_rho, PairedSamples};
pub use vote::{majority_vote, Vote};

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("an answer set needs at least two categories, got {0}")]
    InvalidAnswerSet(usize),
    #[error("cell holds no observations")]
    EmptyCell,
    #[error("distributions are defined over different category sets")]
    CategoryMismatch,
    #[error("series is constant, correlation is undefined")]
    DegenerateSeries,
    #[error("expected {expected} counts, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid paired samples: {0}")]
    InvalidSamples(String),
}

/// A probability vector over uniquely labelled categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    labels: Vec<String>,
    probabilities: Vec<T>,
}

impl<T: Scalar> Distribution<T> {
    pub fn new(labels: Vec<String>, probabilities: Vec<T>) -> Result<Self, MetricsError> {
        if probabilities.is_empty() {
            return Err(MetricsError::InvalidDistribution("no categories".into()));
        }
        if labels.len() != probabilities.len() {
            return Err(MetricsError::InvalidDistribution(format!(
                "{} labels for {} probabilities",
                labels.len(),
                probabilities.len()
            )));
        }
        check_unique(&labels)?;
        let mut total = T::zero();
        for p in &probabilities {
            if !(*p >= T::zero() && *p <= T::one()) {
                return Err(MetricsError::InvalidDistribution(format!(
                    "probability {p:?} outside [0, 1]"
                )));
            }
            total = total + *p;
        }
        if (total - T::one()).abs() > T::sum_tolerance() {
            return Err(MetricsError::InvalidDistribution(format!(
                "probabilities sum to {total:?}"
            )));
        }
        Ok(Self {
            labels,
            probabilities,
        })
    }

    /// Categories labelled `"0"`, `"1"`, ...
    pub fn unlabeled(probabilities: Vec<T>) -> Result<Self, MetricsError> {
        let labels = (0..probabilities.len()).map(|i| i.to_string()).collect();
        Self::new(labels, probabilities)
    }

    pub fn from_counts(labels: Vec<String>, counts: &[u64]) -> Result<Self, MetricsError> {
        if labels.len() != counts.len() {
            return Err(MetricsError::LengthMismatch {
                expected: labels.len(),
                actual: counts.len(),
            });
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(MetricsError::EmptyCell);
        }
        let total = T::from_count(total);
        let probabilities = counts.iter().map(|&c| T::from_count(c) / total).collect();
        Self::new(labels, probabilities)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probability_of(&self, label: &str) -> Option<T> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probabilities[i])
    }

    /// Re-expresses the distribution over `labels`, giving zero mass to labels it
    /// does not carry. Fails if `self` has mass on a label missing from `labels`.
    pub fn padded_to(&self, labels: &[String]) -> Result<Self, MetricsError> {
        check_unique(labels)?;
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut probabilities = vec![T::zero(); labels.len()];
        for (label, p) in self.labels.iter().zip(&self.probabilities) {
            match index.get(label.as_str()) {
                Some(&i) => probabilities[i] = *p,
                None => return Err(MetricsError::CategoryMismatch),
            }
        }
        Ok(Self {
            labels: labels.to_vec(),
            probabilities,
        })
    }
}

fn check_unique(labels: &[String]) -> Result<(), MetricsError> {
    let mut seen = std::collections::HashSet::with_capacity(labels.len());
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(MetricsError::InvalidDistribution(format!(
                "duplicate label {label:?}"
            )));
        }
    }
    Ok(())
}

fn entropy_of<T: Scalar>(probabilities: &[T]) -> T {
    let floor = T::zero_mass();
    probabilities
        .iter()
        .filter(|&&p| p > floor)
        .fold(T::zero(), |acc, &p| acc - p * p.ln())
}

/// Shannon entropy in nats.
pub fn shannon_entropy<T: Scalar>(d: &Distribution<T>) -> T {
    entropy_of(d.probabilities())
}

/// `exp(H)`: the effective number of categories, in `[1, len]`.
pub fn hill_number<T: Scalar>(d: &Distribution<T>) -> T {
    shannon_entropy(d).exp()
}

/// Normalized Hill number of a distribution: `(exp(H) - 1) / (len - 1)`.
pub fn normalized_hill<T: Scalar>(d: &Distribution<T>) -> Result<T, MetricsError> {
    let size = d.len();
    if size < 2 {
        return Err(MetricsError::InvalidAnswerSet(size));
    }
    let denom = T::from_usize(size - 1).expect("size fits");
    Ok(clamp_unit((hill_number(d) - T::one()) / denom))
}

/// Diversity score of a count vector over an answer set of `answer_set_size`
/// categories.
///
/// Returns exactly `0` when a single category holds all the mass and exactly `1`
/// when every category holds the same positive count.
pub fn diversity_score<T: Scalar>(counts: &[u64], answer_set_size: usize) -> Result<T, MetricsError> {
    if answer_set_size < 2 {
        return Err(MetricsError::InvalidAnswerSet(answer_set_size));
    }
    if counts.len() != answer_set_size {
        return Err(MetricsError::LengthMismatch {
            expected: answer_set_size,
            actual: counts.len(),
        });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(MetricsError::EmptyCell);
    }
    let nonzero = counts.iter().filter(|&&c| c > 0).count();
    if nonzero == 1 {
        return Ok(T::zero());
    }
    if nonzero == counts.len() && counts.iter().all(|&c| c == counts[0]) {
        return Ok(T::one());
    }
    let total = T::from_count(total);
    let probabilities: Vec<T> = counts.iter().map(|&c| T::from_count(c) / total).collect();
    let denom = T::from_usize(answer_set_size - 1).expect("size fits");
    Ok(clamp_unit((entropy_of(&probabilities).exp() - T::one()) / denom))
}

/// Jensen-Shannon distance: square root of the base-2 Jensen-Shannon divergence.
///
/// The two distributions must carry the same label set; order may differ.
pub fn js_distance<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::CategoryMismatch);
    }
    let q = if p.labels() == q.labels() {
        q.clone()
    } else {
        q.padded_to(p.labels())?
    };
    let half = T::lit(0.5);
    let floor = T::zero_mass();
    let mut divergence = T::zero();
    for (&a, &b) in p.probabilities().iter().zip(q.probabilities()) {
        let m = (a + b) * half;
        if a > floor {
            divergence = divergence + half * a * (a / m).ln();
        }
        if b > floor {
            divergence = divergence + half * b * (b / m).ln();
        }
    }
    let bits = divergence / T::lit(std::f64::consts::LN_2);
    Ok(bits.max(T::zero()).sqrt().min(T::one()))
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(p: &[f64]) -> Distribution<f64> {
        Distribution::unlabeled(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(shannon_entropy(&dist(&[1.0])), 0.0);
        assert_abs_diff_eq!(shannon_entropy(&dist(&[0.25; 4])), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            shannon_entropy(&dist(&[0.5, 0.5, 0.0, 0.0])),
            0.693147,
            epsilon = 1e-6
        );
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity_score::<f64>(&[120, 0, 0, 0], 4).unwrap(), 0.0);
        assert_eq!(diversity_score::<f64>(&[30, 30, 30, 30], 4).unwrap(), 1.0);
        assert_abs_diff_eq!(
            diversity_score::<f64>(&[60, 60, 0, 0], 4).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn diversity_errors() {
        assert_eq!(
            diversity_score::<f64>(&[3], 1),
            Err(MetricsError::InvalidAnswerSet(1))
        );
        assert_eq!(diversity_score::<f64>(&[0, 0, 0], 3), Err(MetricsError::EmptyCell));
        assert!(matches!(
            diversity_score::<f64>(&[1, 2], 3),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn diversity_in_f32() {
        let v: f32 = diversity_score(&[60, 60, 0, 0], 4).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_distance(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            js_distance(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // sqrt((log2(4/3) + (0.5 log2(2/3) + 0.5)) / 2)
        let expected = ((4f64 / 3.0).log2() + 0.5 * (2f64 / 3.0).log2() + 0.5) / 2.0;
        assert_abs_diff_eq!(
            js_distance(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap(),
            expected.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn js_reorders_labels_and_rejects_mismatch() {
        let p = Distribution::new(vec!["a".into(), "b".into()], vec![0.2, 0.8]).unwrap();
        let q = Distribution::new(vec!["b".into(), "a".into()], vec![0.8, 0.2]).unwrap();
        assert_eq!(js_distance(&p, &q).unwrap(), 0.0);
        let r = Distribution::new(vec!["a".into(), "c".into()], vec![0.2, 0.8]).unwrap();
        assert_eq!(js_distance(&p, &r), Err(MetricsError::CategoryMismatch));
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::<f64>::unlabeled(vec![]).is_err());
        assert!(Distribution::<f64>::unlabeled(vec![0.5, 0.6]).is_err());
        assert!(Distribution::<f64>::unlabeled(vec![-0.1, 1.1]).is_err());
        assert!(Distribution::new(vec!["a".into(), "a".into()], vec![0.5, 0.5]).is_err());
        let d = Distribution::<f64>::from_counts(vec!["x".into(), "y".into()], &[1, 3]).unwrap();
        assert_eq!(d.probability_of("y"), Some(0.75));
        assert_eq!(
            Distribution::<f64>::from_counts(vec!["x".into()], &[0]),
            Err(MetricsError::EmptyCell)
        );
    }

    #[test]
    fn padding_adds_zero_mass() {
        let d = Distribution::<f64>::from_counts(vec!["a".into(), "b".into()], &[1, 1]).unwrap();
        let padded = d
            .padded_to(&["b".into(), "a".into(), "Others".into()])
            .unwrap();
        assert_eq!(padded.probabilities(), &[0.5, 0.5, 0.0]);
        assert_eq!(
            d.padded_to(&["a".into()]),
            Err(MetricsError::CategoryMismatch)
        );
    }

    #[test]
    fn tiny_probabilities_count_as_zero() {
        let d = dist(&[1.0, 1e-16]);
        assert_eq!(shannon_entropy(&d), 0.0);
    }
}
