use std::collections::BTreeMap;

use super::{AggregateError, ScoreMatrix};
use crate::catalog::AnswerDistribution;
use crate::metrics::{js_distance, Distribution};
use crate::vqa::QuestionStatus;

/// Pairwise country distances for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionJsd {
    pub dataset: String,
    pub entity: String,
    pub question_id: String,
    pub countries: Vec<String>,
    /// Union of the compared answer sets, in first-seen order.
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityJsd {
    pub dataset: String,
    pub entity: String,
    pub questions: usize,
    /// Per-question maximum over country pairs, averaged across questions.
    pub max: f64,
    /// Per-question mean over country pairs, averaged across questions.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JsdSummary {
    pub questions: Vec<QuestionJsd>,
    pub entities: Vec<EntityJsd>,
}

/// Distances between every pair of countries' answer distributions for one
/// question. Distributions are aligned on the union of their labels; labels a
/// country never offered (such as a promoted "Others") get zero mass.
pub fn jsd_question(
    dataset: &str,
    entity: &str,
    question_id: &str,
    per_country: &BTreeMap<String, AnswerDistribution>,
) -> Result<QuestionJsd, AggregateError> {
    if per_country.len() < 2 {
        return Err(AggregateError::InsufficientCountries(per_country.len()));
    }
    let mut labels: Vec<String> = Vec::new();
    for d in per_country.values() {
        for l in &d.labels {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let aligned: Vec<Distribution<f64>> = per_country
        .values()
        .map(|d| {
            d.distribution()
                .and_then(|x| x.padded_to(&labels))
                .expect("kept distributions are nonempty and covered by the union")
        })
        .collect();
    let n = aligned.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let (mut max, mut sum, mut pairs) = (0.0f64, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = js_distance(&aligned[i], &aligned[j]).expect("aligned distributions share labels");
            matrix[i][j] = d;
            matrix[j][i] = d;
            max = max.max(d);
            sum += d;
            pairs += 1;
        }
    }
    Ok(QuestionJsd {
        dataset: dataset.to_string(),
        entity: entity.to_string(),
        question_id: question_id.to_string(),
        countries: per_country.keys().cloned().collect(),
        labels,
        matrix,
        max,
        mean: sum / pairs as f64,
    })
}

/// Cross-country distances for every kept question compared in at least two
/// countries, summarized per (dataset, entity).
pub fn jsd_analysis(matrix: &ScoreMatrix) -> Result<JsdSummary, AggregateError> {
    let mut grouped: BTreeMap<(String, String, String), BTreeMap<String, AnswerDistribution>> = BTreeMap::new();
    for ((slice, qid), record) in &matrix.questions {
        if let (QuestionStatus::Kept, Some(d)) = (record.status, &record.distribution) {
            grouped
                .entry((slice.dataset.clone(), slice.entity.clone(), qid.clone()))
                .or_default()
                .insert(slice.country.clone(), d.clone());
        }
    }
    let most_countries = grouped.values().map(BTreeMap::len).max().unwrap_or(0);
    let mut summary = JsdSummary::default();
    for ((dataset, entity, qid), per_country) in &grouped {
        if per_country.len() >= 2 {
            summary.questions.push(jsd_question(dataset, entity, qid, per_country)?);
        }
    }
    if summary.questions.is_empty() {
        return Err(AggregateError::InsufficientCountries(most_countries));
    }
    let mut per_entity: BTreeMap<(String, String), Vec<&QuestionJsd>> = BTreeMap::new();
    for q in &summary.questions {
        per_entity.entry((q.dataset.clone(), q.entity.clone())).or_default().push(q);
    }
    summary.entities = per_entity
        .into_iter()
        .map(|((dataset, entity), qs)| EntityJsd {
            dataset,
            entity,
            questions: qs.len(),
            max: qs.iter().map(|q| q.max).sum::<f64>() / qs.len() as f64,
            mean: qs.iter().map(|q| q.mean).sum::<f64>() / qs.len() as f64,
        })
        .collect();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(labels: &[&str], counts: &[u64]) -> AnswerDistribution {
        AnswerDistribution {
            question_id: "q".into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            counts: counts.to_vec(),
            nota_count: 0,
            others_promoted: false,
        }
    }

    fn countries(ds: Vec<AnswerDistribution>) -> BTreeMap<String, AnswerDistribution> {
        ds.into_iter().enumerate().map(|(i, d)| (format!("c{i}"), d)).collect()
    }

    #[test]
    fn identical_countries_are_at_distance_zero() {
        let per = countries(vec![dist(&["A", "B"], &[3, 1]); 3]);
        let q = jsd_question("d", "e", "q", &per).unwrap();
        assert_eq!(q.max, 0.0);
        assert_eq!(q.mean, 0.0);
    }

    #[test]
    fn disjoint_answers_are_at_distance_one() {
        let per = countries(vec![dist(&["A", "B"], &[5, 0]), dist(&["A", "B"], &[0, 5])]);
        assert_abs_diff_eq!(jsd_question("d", "e", "q", &per).unwrap().max, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn others_in_one_country_only_is_padded() {
        let per = countries(vec![dist(&["A", "B", "Others"], &[1, 1, 2]), dist(&["A", "B"], &[1, 1])]);
        let q = jsd_question("d", "e", "q", &per).unwrap();
        assert_eq!(q.labels, ["A", "B", "Others"]);
        assert!(q.max > 0.0 && q.max <= 1.0);
    }

    #[test]
    fn matches_brute_force_pairs() {
        let raw = [[0.5, 0.3, 0.2], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]];
        let per = countries(
            raw.iter()
                .map(|p| dist(&["A", "B", "C"], &p.map(|x| (x * 10.0) as u64)))
                .collect(),
        );
        let q = jsd_question("d", "e", "q", &per).unwrap();
        // direct base-2 divergence per pair
        let jsd = |p: &[f64; 3], r: &[f64; 3]| {
            let kl = |a: &[f64; 3], m: &[f64; 3]| {
                (0..3).filter(|&i| a[i] > 0.0).map(|i| a[i] * (a[i] / m[i]).log2()).sum::<f64>()
            };
            let m = [(p[0] + r[0]) / 2.0, (p[1] + r[1]) / 2.0, (p[2] + r[2]) / 2.0];
            ((kl(p, &m) + kl(r, &m)) / 2.0).sqrt()
        };
        let pairs = [jsd(&raw[0], &raw[1]), jsd(&raw[0], &raw[2]), jsd(&raw[1], &raw[2])];
        assert_abs_diff_eq!(q.matrix[0][1], pairs[0], epsilon = 1e-12);
        assert_abs_diff_eq!(q.matrix[2][0], pairs[1], epsilon = 1e-12);
        assert_abs_diff_eq!(q.matrix[1][2], pairs[2], epsilon = 1e-12);
        assert_abs_diff_eq!(q.max, pairs.iter().cloned().fold(0.0, f64::max), epsilon = 1e-12);
        assert_abs_diff_eq!(q.mean, pairs.iter().sum::<f64>() / 3.0, epsilon = 1e-12);
        for i in 0..3 {
            assert_eq!(q.matrix[i][i], 0.0);
        }
    }

    #[test]
    fn single_country_is_insufficient() {
        let per = countries(vec![dist(&["A", "B"], &[1, 1])]);
        assert!(matches!(
            jsd_question("d", "e", "q", &per),
            Err(AggregateError::InsufficientCountries(1))
        ));
    }
}
