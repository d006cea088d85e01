//! Human-study harness: VQA accuracy against majority labels, rating
//! correlations per country, and agreement between annotators.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::export::{write_csv, ExportHeader};
use crate::aggregate::AggregateError;
use crate::catalog::{Catalog, QuestionAxis};
use crate::metrics::{kendall_tau, majority_vote, spearman_rho, PairedSamples, Vote};
use crate::sevi::{RatingDimension, LEVELS};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation for unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),
    #[error(transparent)]
    Export(#[from] AggregateError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationAnswer {
    Options(BTreeSet<String>),
    Rating(u8),
}

/// One annotator's answer for one image, either to a question or on a
/// rating dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanAnnotation {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<RatingDimension>,
    pub annotator_id: String,
    pub answer: AnnotationAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realism: Option<u8>,
}

/// What an annotation refers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Question(String),
    Dimension(RatingDimension),
}

impl HumanAnnotation {
    pub fn target(&self) -> Target {
        match (&self.question_id, self.dimension) {
            (Some(q), _) => Target::Question(q.clone()),
            (None, Some(d)) => Target::Dimension(d),
            (None, None) => unreachable!("validated on load"),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let scale = 1..=LEVELS as u8;
        match (&self.question_id, self.dimension, &self.answer) {
            (Some(_), Some(_), _) | (None, None, _) => {
                return Err("exactly one of `question_id` and `dimension` is required".into())
            }
            (Some(_), None, AnnotationAnswer::Options(o)) if o.is_empty() => {
                return Err("empty option set".into())
            }
            (Some(_), None, AnnotationAnswer::Rating(_)) => return Err("question answered with a rating".into()),
            (None, Some(_), AnnotationAnswer::Options(_)) => return Err("dimension answered with options".into()),
            (None, Some(_), AnnotationAnswer::Rating(r)) if !scale.contains(r) => {
                return Err(format!("rating {r} outside 1-5"))
            }
            _ => {}
        }
        for (name, v) in [("confidence", self.confidence), ("realism", self.realism)] {
            if let Some(v) = v.filter(|v| !scale.contains(v)) {
                return Err(format!("{name} {v} outside 1-5"));
            }
        }
        Ok(())
    }
}

/// Reads one annotation per line. Blank lines are skipped.
pub fn read_annotations(reader: impl BufRead) -> Result<Vec<HumanAnnotation>, ValidationError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ValidationError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ValidationError::Parse { line: i + 1, message };
        let a: HumanAnnotation = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        a.validate().map_err(parse_err)?;
        out.push(a);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<HumanAnnotation>, ValidationError> {
    let file = std::fs::File::open(path).map_err(|source| ValidationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_annotations(std::io::BufReader::new(file))
}

/// When a model's option set counts as matching the human label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Exact,
    Intersect,
}

impl MatchRule {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchRule::Exact => "exact",
            MatchRule::Intersect => "intersect",
        }
    }

    pub fn matches(self, model: &BTreeSet<String>, human: &BTreeSet<String>) -> bool {
        match self {
            MatchRule::Exact => model == human,
            MatchRule::Intersect => !model.is_disjoint(human),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GroupAccuracy {
    pub evaluated: usize,
    pub correct: usize,
}

impl GroupAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.correct as f64 / self.evaluated as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub rule: MatchRule,
    pub entity: GroupAccuracy,
    pub background: GroupAccuracy,
    pub overall: GroupAccuracy,
    /// Items with a model reply and human answers.
    pub items: usize,
    /// Items whose annotators reached no strict majority.
    pub ties_skipped: usize,
    /// Annotated items the model has no reply for.
    pub unreplied: usize,
}

fn group_by_item(annotations: &[HumanAnnotation]) -> BTreeMap<(String, Target), Vec<&HumanAnnotation>> {
    let mut items: BTreeMap<(String, Target), Vec<&HumanAnnotation>> = BTreeMap::new();
    for a in annotations {
        items.entry((a.image_id.clone(), a.target())).or_default().push(a);
    }
    items
}

/// Fraction of (image, question) items where the model's selection matches
/// the annotators' majority option set. Model replies are keyed
/// `(image_id, question_id)`.
pub fn vdi_accuracy(
    model: &BTreeMap<(String, String), BTreeSet<String>>,
    annotations: &[HumanAnnotation],
    catalog: &Catalog,
    rule: MatchRule,
) -> Result<AccuracyReport, ValidationError> {
    let mut report = AccuracyReport {
        rule,
        entity: GroupAccuracy::default(),
        background: GroupAccuracy::default(),
        overall: GroupAccuracy::default(),
        items: 0,
        ties_skipped: 0,
        unreplied: 0,
    };
    for ((image, target), group) in group_by_item(annotations) {
        let Target::Question(qid) = target else { continue };
        let q = catalog.get(&qid).ok_or_else(|| ValidationError::UnknownQuestion(qid.clone()))?;
        let Some(reply) = model.get(&(image, qid)) else {
            report.unreplied += 1;
            continue;
        };
        report.items += 1;
        let votes: Vec<&BTreeSet<String>> = group
            .iter()
            .filter_map(|a| match &a.answer {
                AnnotationAnswer::Options(o) => Some(o),
                AnnotationAnswer::Rating(_) => None,
            })
            .collect();
        let Vote::Majority(label) = majority_vote(&votes) else {
            report.ties_skipped += 1;
            continue;
        };
        let hit = rule.matches(reply, label) as usize;
        let slot = match q.axis {
            QuestionAxis::EntityAppearance => &mut report.entity,
            QuestionAxis::BackgroundIndoor | QuestionAxis::BackgroundOutdoor => &mut report.background,
        };
        for g in [slot, &mut report.overall] {
            g.evaluated += 1;
            g.correct += hit;
        }
    }
    if report.overall.evaluated == 0 {
        return Err(ValidationError::EmptyEvaluation(format!(
            "no question item with both a model reply and a human majority ({} tied, {} unreplied)",
            report.ties_skipped, report.unreplied
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationGroup {
    pub dimension: RatingDimension,
    pub country: String,
    pub items: usize,
    pub rho: Option<f64>,
    /// Why `rho` is missing.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeviCorrelationReport {
    pub groups: Vec<CorrelationGroup>,
    /// Mean of the per-country correlations that could be computed.
    pub averages: BTreeMap<RatingDimension, f64>,
}

/// Spearman correlation between model ratings and mean human ratings, per
/// dimension and country. Model ratings are keyed `(image_id, dimension)`;
/// `country_of` maps image ids to countries.
pub fn sevi_correlation(
    model: &BTreeMap<(String, RatingDimension), u8>,
    annotations: &[HumanAnnotation],
    country_of: &BTreeMap<String, String>,
) -> Result<SeviCorrelationReport, ValidationError> {
    let mut pairs: BTreeMap<(RatingDimension, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((image, target), group) in group_by_item(annotations) {
        let Target::Dimension(dim) = target else { continue };
        let (Some(&m), Some(country)) = (model.get(&(image.clone(), dim)), country_of.get(&image)) else {
            continue;
        };
        let ratings: Vec<f64> = group
            .iter()
            .filter_map(|a| match a.answer {
                AnnotationAnswer::Rating(r) => Some(r as f64),
                AnnotationAnswer::Options(_) => None,
            })
            .collect();
        let human = ratings.iter().sum::<f64>() / ratings.len() as f64;
        let e = pairs.entry((dim, country.clone())).or_default();
        e.0.push(m as f64);
        e.1.push(human);
    }
    if pairs.is_empty() {
        return Err(ValidationError::EmptyEvaluation(
            "no rated image has both a model rating and a known country".into(),
        ));
    }
    let mut groups = Vec::new();
    let mut per_dim: BTreeMap<RatingDimension, Vec<f64>> = BTreeMap::new();
    for ((dimension, country), (xs, ys)) in pairs {
        let items = xs.len();
        let rho = PairedSamples::new(xs, ys).and_then(|s| spearman_rho(&s));
        if let Ok(r) = rho {
            per_dim.entry(dimension).or_default().push(r);
        }
        groups.push(CorrelationGroup {
            dimension,
            country,
            items,
            rho: rho.as_ref().ok().copied(),
            error: rho.err().map(|e| e.to_string()),
        });
    }
    let averages = per_dim
        .into_iter()
        .map(|(d, rs)| (d, rs.iter().sum::<f64>() / rs.len() as f64))
        .collect();
    Ok(SeviCorrelationReport { groups, averages })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    /// Items with at least two annotators.
    pub items: usize,
    /// Fraction of items whose annotators reach a strict majority.
    pub consensus: f64,
    /// Fraction of agreeing annotator pairs, averaged over items.
    pub pairwise_agreement: f64,
    /// Rank correlations between annotator pairs on shared rating items,
    /// averaged over pairs; `None` without usable rating pairs.
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
}

/// Agreement among annotators over every item with two or more of them.
/// Mix question and rating annotations only deliberately; split by target
/// kind with [`agreement_by_target`].
pub fn inter_annotator(annotations: &[HumanAnnotation]) -> Result<AgreementReport, ValidationError> {
    let items: Vec<Vec<&HumanAnnotation>> = group_by_item(annotations)
        .into_values()
        .filter(|g| g.len() >= 2)
        .collect();
    if items.is_empty() {
        return Err(ValidationError::EmptyEvaluation("no item has two or more annotators".into()));
    }
    let mut consensus = 0usize;
    let mut agreement = 0.0;
    for g in &items {
        let answers: Vec<&AnnotationAnswer> = g.iter().map(|a| &a.answer).collect();
        if matches!(majority_vote(&answers), Vote::Majority(_)) {
            consensus += 1;
        }
        let (mut agree, mut total) = (0usize, 0usize);
        for i in 0..answers.len() {
            for j in (i + 1)..answers.len() {
                total += 1;
                agree += (answers[i] == answers[j]) as usize;
            }
        }
        agreement += agree as f64 / total as f64;
    }

    // annotator -> item -> rating
    let mut by_annotator: BTreeMap<&str, BTreeMap<(&str, Target), f64>> = BTreeMap::new();
    for g in &items {
        for a in g {
            if let AnnotationAnswer::Rating(r) = a.answer {
                by_annotator
                    .entry(&a.annotator_id)
                    .or_default()
                    .insert((&a.image_id, a.target()), r as f64);
            }
        }
    }
    let annotators: Vec<_> = by_annotator.iter().collect();
    let (mut taus, mut rhos) = (Vec::new(), Vec::new());
    for i in 0..annotators.len() {
        for j in (i + 1)..annotators.len() {
            let (a, b) = (annotators[i].1, annotators[j].1);
            let (xs, ys): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|(k, &x)| b.get(k).map(|&y| (x, y)))
                .unzip();
            let Ok(s) = PairedSamples::new(xs, ys) else { continue };
            if let Ok(t) = kendall_tau(&s) {
                taus.push(t);
            }
            if let Ok(r) = spearman_rho(&s) {
                rhos.push(r);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(AgreementReport {
        items: items.len(),
        consensus: consensus as f64 / items.len() as f64,
        pairwise_agreement: agreement / items.len() as f64,
        kendall_tau: mean(&taus),
        spearman_rho: mean(&rhos),
    })
}

/// Agreement computed separately for question answers (`"vdi"`) and for each
/// rating dimension. Groups without any multiply-annotated item are omitted.
pub fn agreement_by_target(annotations: &[HumanAnnotation]) -> BTreeMap<String, AgreementReport> {
    let mut split: BTreeMap<String, Vec<HumanAnnotation>> = BTreeMap::new();
    for a in annotations {
        let key = match a.target() {
            Target::Question(_) => "vdi".to_string(),
            Target::Dimension(d) => d.as_str().to_string(),
        };
        split.entry(key).or_default().push(a.clone());
    }
    split
        .into_iter()
        .filter_map(|(k, v)| inter_annotator(&v).ok().map(|r| (k, r)))
        .collect()
}

/// Full evaluation written by [`export_validation`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub accuracy: Vec<AccuracyReport>,
    pub correlation: Option<SeviCorrelationReport>,
    pub agreement: BTreeMap<String, AgreementReport>,
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `validation_accuracy.csv`, `validation_correlation.csv` and
/// `validation_agreement.csv` into `dir`.
pub fn export_validation(
    report: &ValidationReport,
    header: &ExportHeader,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>, ValidationError> {
    std::fs::create_dir_all(dir).map_err(|source| ValidationError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for r in &report.accuracy {
        for (group, g) in [("entity", r.entity), ("background", r.background), ("overall", r.overall)] {
            rows.push(vec![
                r.rule.as_str().to_string(),
                group.to_string(),
                g.evaluated.to_string(),
                g.correct.to_string(),
                opt_num(g.accuracy()),
                r.ties_skipped.to_string(),
                r.unreplied.to_string(),
            ]);
        }
    }
    let accuracy = dir.join("validation_accuracy.csv");
    write_csv(
        &accuracy,
        header,
        &["rule", "group", "evaluated", "correct", "accuracy", "ties_skipped", "unreplied"],
        &rows,
    )?;

    let mut rows = Vec::new();
    if let Some(c) = &report.correlation {
        for g in &c.groups {
            rows.push(vec![
                g.dimension.as_str().to_string(),
                g.country.clone(),
                g.items.to_string(),
                opt_num(g.rho),
                g.error.clone().unwrap_or_default(),
            ]);
        }
        for (d, avg) in &c.averages {
            rows.push(vec![d.as_str().to_string(), "average".into(), String::new(), format!("{avg}"), String::new()]);
        }
    }
    let correlation = dir.join("validation_correlation.csv");
    write_csv(&correlation, header, &["dimension", "country", "items", "rho", "error"], &rows)?;

    let rows: Vec<Vec<String>> = report
        .agreement
        .iter()
        .map(|(k, a)| {
            vec![
                k.clone(),
                a.items.to_string(),
                format!("{}", a.consensus),
                format!("{}", a.pairwise_agreement),
                opt_num(a.kendall_tau),
                opt_num(a.spearman_rho),
            ]
        })
        .collect();
    let agreement = dir.join("validation_agreement.csv");
    write_csv(
        &agreement,
        header,
        &["target", "items", "consensus", "pairwise_agreement", "kendall_tau", "spearman_rho"],
        &rows,
    )?;
    Ok(vec![accuracy, correlation, agreement])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{builtin_background, QuestionSpec, Scene};

    fn opts(labels: &[&str]) -> AnnotationAnswer {
        AnnotationAnswer::Options(labels.iter().map(|s| s.to_string()).collect())
    }

    fn ann(image: &str, q: &str, who: &str, answer: AnnotationAnswer) -> HumanAnnotation {
        HumanAnnotation {
            image_id: image.into(),
            question_id: Some(q.into()),
            dimension: None,
            annotator_id: who.into(),
            answer,
            confidence: None,
            realism: None,
        }
    }

    fn rating(image: &str, dim: RatingDimension, who: &str, r: u8) -> HumanAnnotation {
        HumanAnnotation {
            image_id: image.into(),
            question_id: None,
            dimension: Some(dim),
            annotator_id: who.into(),
            answer: AnnotationAnswer::Rating(r),
            confidence: None,
            realism: None,
        }
    }

    fn catalog() -> (Catalog, String, String) {
        let entity = QuestionSpec {
            id: "house.roof".into(),
            axis: QuestionAxis::EntityAppearance,
            entity: Some("house".into()),
            text: "What roof does the house have?".into(),
            options: vec!["flat".into(), "sloped".into(), "dome".into()],
            multi_select: true,
            visibility_text: Some("Is the roof of the house visible?".into()),
        };
        let bg = builtin_background().background_questions(Scene::Outdoor).next().unwrap().clone();
        let bg_id = bg.id.clone();
        (Catalog::new("test", vec![entity, bg]).unwrap(), "house.roof".into(), bg_id)
    }

    fn reply(pairs: &[(&str, &str, &[&str])]) -> BTreeMap<(String, String), BTreeSet<String>> {
        pairs
            .iter()
            .map(|(i, q, l)| ((i.to_string(), q.to_string()), l.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn parses_annotation_lines() {
        let text = r#"{"image_id":"a","question_id":"q","annotator_id":"w1","answer":["flat","dome"]}
{"image_id":"a","dimension":"affluence","annotator_id":"w1","answer":4,"confidence":5}

"#;
        let a = read_annotations(text.as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].answer, opts(&["dome", "flat"]));
        assert_eq!(a[1].target(), Target::Dimension(RatingDimension::Affluence));
        for bad in [
            r#"{"image_id":"a","question_id":"q","annotator_id":"w","answer":3}"#,
            r#"{"image_id":"a","dimension":"affluence","annotator_id":"w","answer":["x"]}"#,
            r#"{"image_id":"a","dimension":"affluence","annotator_id":"w","answer":6}"#,
            r#"{"image_id":"a","annotator_id":"w","answer":3}"#,
            r#"{"image_id":"a","question_id":"q","annotator_id":"w","answer":[]}"#,
            r#"{"image_id":"a","question_id":"q","annotator_id":"w","answer":["x"],"realism":0}"#,
        ] {
            assert!(matches!(read_annotations(bad.as_bytes()), Err(ValidationError::Parse { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn one_match_of_four() {
        let (cat, q, _) = catalog();
        let mut a = Vec::new();
        for (img, label) in [("i1", "flat"), ("i2", "sloped"), ("i3", "dome"), ("i4", "flat")] {
            for w in ["w1", "w2", "w3"] {
                a.push(ann(img, &q, w, opts(&[label])));
            }
        }
        let model = reply(&[
            ("i1", &q, &["flat"]),
            ("i2", &q, &["flat"]),
            ("i3", &q, &["flat"]),
            ("i4", &q, &["sloped"]),
        ]);
        let r = vdi_accuracy(&model, &a, &cat, MatchRule::Exact).unwrap();
        assert_eq!(r.overall.accuracy(), Some(0.25));
        assert_eq!(r.entity.accuracy(), Some(0.25));
        assert_eq!(r.background.accuracy(), None);
    }

    #[test]
    fn ties_are_skipped_and_counted() {
        let (cat, q, bg) = catalog();
        let a = vec![
            ann("i1", &q, "w1", opts(&["flat"])),
            ann("i1", &q, "w2", opts(&["dome"])),
            ann("i1", &q, "w3", opts(&["sloped"])),
            ann("i2", &bg, "w1", opts(&["x"])),
            ann("i2", &bg, "w2", opts(&["x"])),
            ann("i3", &q, "w1", opts(&["flat"])),
        ];
        let model = reply(&[("i1", &q, &["flat"]), ("i2", &bg, &["x"])]);
        let r = vdi_accuracy(&model, &a, &cat, MatchRule::Exact).unwrap();
        assert_eq!((r.items, r.ties_skipped, r.unreplied), (2, 1, 1));
        assert_eq!(r.overall.evaluated + r.ties_skipped, r.items);
        assert_eq!(r.background.accuracy(), Some(1.0));
    }

    #[test]
    fn match_rules_differ_on_partial_overlap() {
        let (cat, q, _) = catalog();
        let a: Vec<_> = ["w1", "w2", "w3"].iter().map(|w| ann("i1", &q, w, opts(&["flat", "dome"]))).collect();
        let model = reply(&[("i1", &q, &["flat"])]);
        assert_eq!(vdi_accuracy(&model, &a, &cat, MatchRule::Exact).unwrap().overall.correct, 0);
        assert_eq!(vdi_accuracy(&model, &a, &cat, MatchRule::Intersect).unwrap().overall.correct, 1);
    }

    #[test]
    fn empty_and_unknown_are_errors() {
        let (cat, q, _) = catalog();
        let a = vec![ann("i1", &q, "w1", opts(&["flat"]))];
        assert!(matches!(
            vdi_accuracy(&BTreeMap::new(), &a, &cat, MatchRule::Exact),
            Err(ValidationError::EmptyEvaluation(_))
        ));
        let a = vec![ann("i1", "nope", "w1", opts(&["flat"]))];
        assert!(matches!(
            vdi_accuracy(&BTreeMap::new(), &a, &cat, MatchRule::Exact),
            Err(ValidationError::UnknownQuestion(_))
        ));
    }

    fn rating_fixture(model_of: impl Fn(usize) -> u8) -> (BTreeMap<(String, RatingDimension), u8>, Vec<HumanAnnotation>, BTreeMap<String, String>) {
        let dim = RatingDimension::Affluence;
        let mut model = BTreeMap::new();
        let mut a = Vec::new();
        let mut country = BTreeMap::new();
        for i in 0..5 {
            let img = format!("i{i}");
            model.insert((img.clone(), dim), model_of(i));
            a.push(rating(&img, dim, "w1", (i + 1) as u8));
            a.push(rating(&img, dim, "w2", (i + 1) as u8));
            country.insert(img, "India".to_string());
        }
        (model, a, country)
    }

    #[test]
    fn correlation_extremes() {
        let (m, a, c) = rating_fixture(|i| (i + 1) as u8);
        let r = sevi_correlation(&m, &a, &c).unwrap();
        assert_eq!(r.groups[0].rho, Some(1.0));
        assert_eq!(r.averages[&RatingDimension::Affluence], 1.0);
        let (m, a, c) = rating_fixture(|i| (5 - i) as u8);
        assert_eq!(sevi_correlation(&m, &a, &c).unwrap().groups[0].rho, Some(-1.0));
    }

    #[test]
    fn degenerate_group_is_reported_not_fatal() {
        let (m, a, mut c) = rating_fixture(|_| 3);
        c.insert("i4".into(), "Egypt".into());
        let r = sevi_correlation(&m, &a, &c).unwrap();
        assert_eq!(r.groups.len(), 2);
        assert!(r.groups.iter().all(|g| g.rho.is_none() && g.error.is_some()));
        assert!(r.averages.is_empty());
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let (_, a, _) = rating_fixture(|_| 1);
        let r = inter_annotator(&a).unwrap();
        assert_eq!(r.consensus, 1.0);
        assert_eq!(r.pairwise_agreement, 1.0);
        assert_eq!(r.kendall_tau, Some(1.0));
        assert_eq!(r.spearman_rho, Some(1.0));
    }

    #[test]
    fn three_way_disagreement_has_no_consensus() {
        let a = vec![
            ann("i1", "q", "w1", opts(&["a"])),
            ann("i1", "q", "w2", opts(&["b"])),
            ann("i1", "q", "w3", opts(&["c"])),
        ];
        let r = inter_annotator(&a).unwrap();
        assert_eq!(r.consensus, 0.0);
        assert_eq!(r.pairwise_agreement, 0.0);
        assert_eq!(r.kendall_tau, None);
    }

    #[test]
    fn partial_agreement_fraction() {
        let a = vec![
            ann("i1", "q", "w1", opts(&["a"])),
            ann("i1", "q", "w2", opts(&["a"])),
            ann("i1", "q", "w3", opts(&["c"])),
            ann("i2", "q", "w1", opts(&["a"])),
        ];
        let r = inter_annotator(&a).unwrap();
        assert_eq!(r.items, 1);
        assert_eq!(r.consensus, 1.0);
        assert!((r.pairwise_agreement - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(inter_annotator(&a[3..]), Err(ValidationError::EmptyEvaluation(_))));
    }
}
