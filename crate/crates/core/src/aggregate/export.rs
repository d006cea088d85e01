//! Score reports: tabular (CSV files) and structured (one nested JSON
//! document). Every file opens with a provenance header of `# key: value`
//! lines. Output is sorted and contains no timestamps, so identical inputs
//! give identical bytes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{AggregateError, AveragingOrder, Axis, JsdSummary, QuestionRecord, ScoreKey, ScoreMatrix};
use crate::catalog::{AnswerDistribution, CoverageReport, QuestionAxis};
use crate::manifest::SliceKey;
use crate::sevi::{RatingDimension, SeviPassResult, LEVELS};
use crate::vqa::QuestionStatus;

pub const NOTA_POLICY: &str =
    "NOTA excluded and renormalized at or below the Others threshold; counted as Others above it";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Tabular,
    Structured,
}

/// Provenance recorded at the top of every export.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub config_digest: String,
    pub backend_id: String,
    pub catalog_digest: String,
    pub coverage_threshold: f64,
    pub others_threshold: f64,
    pub seed: u64,
}

impl ExportHeader {
    fn lines(&self) -> String {
        format!(
            "# config_digest: {}\n# backend_id: {}\n# catalog_digest: {}\n# coverage_threshold: {}\n# others_threshold: {}\n# seed: {}\n# nota_policy: {}\n",
            self.config_digest,
            self.backend_id,
            self.catalog_digest,
            self.coverage_threshold,
            self.others_threshold,
            self.seed,
            NOTA_POLICY
        )
    }

    fn parse(text: &str, path: &Path) -> Result<Self, AggregateError> {
        let fields: BTreeMap<&str, &str> = text
            .lines()
            .map_while(|l| l.strip_prefix("# "))
            .filter_map(|l| l.split_once(": "))
            .collect();
        let get = |k: &str| {
            fields
                .get(k)
                .map(|v| v.to_string())
                .ok_or_else(|| import_err(path, format!("header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<f64, AggregateError> {
            get(k)?.parse().map_err(|_| import_err(path, format!("bad `{k}`")))
        };
        Ok(Self {
            config_digest: get("config_digest")?,
            backend_id: get("backend_id")?,
            catalog_digest: get("catalog_digest")?,
            coverage_threshold: num("coverage_threshold")?,
            others_threshold: num("others_threshold")?,
            seed: get("seed")?.parse().map_err(|_| import_err(path, "bad `seed`"))?,
        })
    }
}

fn import_err(path: &Path, message: impl Into<String>) -> AggregateError {
    AggregateError::Import {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AggregateError + '_ {
    move |source| AggregateError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a CSV file preceded by the provenance header.
pub fn write_csv(path: &Path, header: &ExportHeader, columns: &[&str], rows: &[Vec<String>]) -> Result<(), AggregateError> {
    let mut buf = header.lines().into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(|e| import_err(path, e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| import_err(path, e.to_string()))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

/// Reads a CSV file written by [`write_csv`] as (header, column map per row).
pub fn read_csv(path: &Path) -> Result<(ExportHeader, Vec<BTreeMap<String, String>>), AggregateError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    let header = ExportHeader::parse(&text, path)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns = reader.headers().map_err(|e| import_err(path, e.to_string()))?.clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| import_err(path, e.to_string()))?;
        rows.push(columns.iter().map(str::to_string).zip(rec.iter().map(str::to_string)).collect());
    }
    Ok((header, rows))
}

const SCORE_COLUMNS: &[&str] = &["dataset", "entity", "country", "axis", "question_id", "score", "mean_rating"];
const QUESTION_COLUMNS: &[&str] = &[
    "dataset",
    "entity",
    "country",
    "question_id",
    "question_axis",
    "status",
    "total_images",
    "retained",
    "nota_fraction",
    "nota_count",
    "answer_set_size",
    "others_promoted",
];
const DISTRIBUTION_COLUMNS: &[&str] = &["dataset", "entity", "country", "kind", "key", "label", "count"];

fn slice_cols(s: &SliceKey) -> [String; 3] {
    [s.dataset.clone(), s.entity.clone(), s.country.clone()]
}

fn score_rows(m: &ScoreMatrix) -> Vec<Vec<String>> {
    m.scores
        .iter()
        .map(|(k, &v)| {
            let mean = k
                .axis
                .dimension()
                .filter(|_| k.question_id.is_none())
                .and_then(|d| m.mean_ratings.get(&(k.slice.clone(), d)));
            let mut row = slice_cols(&k.slice).to_vec();
            row.extend([k.axis.as_str().to_string(), opt(k.question_id.clone()), num(v), opt(mean.map(|x| num(*x)))]);
            row
        })
        .collect()
}

fn question_axis_str(a: QuestionAxis) -> &'static str {
    match a {
        QuestionAxis::EntityAppearance => "entity_appearance",
        QuestionAxis::BackgroundIndoor => "background_indoor",
        QuestionAxis::BackgroundOutdoor => "background_outdoor",
    }
}

fn parse_question_axis(s: &str) -> Option<QuestionAxis> {
    [
        QuestionAxis::EntityAppearance,
        QuestionAxis::BackgroundIndoor,
        QuestionAxis::BackgroundOutdoor,
    ]
    .into_iter()
    .find(|a| question_axis_str(*a) == s)
}

fn parse_status(s: &str) -> Option<QuestionStatus> {
    [QuestionStatus::Kept, QuestionStatus::Dropped, QuestionStatus::NotApplicable]
        .into_iter()
        .find(|q| q.as_str() == s)
}

fn question_rows(m: &ScoreMatrix) -> Vec<Vec<String>> {
    m.questions
        .iter()
        .map(|((slice, qid), r)| {
            let c = r.coverage.as_ref();
            let d = r.distribution.as_ref();
            let mut row = slice_cols(slice).to_vec();
            row.extend([
                qid.clone(),
                question_axis_str(r.axis).to_string(),
                r.status.as_str().to_string(),
                opt(c.map(|c| c.total_images)),
                opt(c.map(|c| c.retained_after_visibility)),
                opt(c.map(|c| num(c.nota_fraction))),
                opt(d.map(|d| d.nota_count)),
                opt(d.map(|d| d.answer_set_size())),
                opt(d.map(|d| d.others_promoted)),
            ]);
            row
        })
        .collect()
}

fn distribution_rows(m: &ScoreMatrix) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for ((slice, qid), r) in &m.questions {
        if let Some(d) = &r.distribution {
            for (label, count) in d.labels.iter().zip(&d.counts) {
                let mut row = slice_cols(slice).to_vec();
                row.extend(["question".into(), qid.clone(), label.clone(), count.to_string()]);
                rows.push(row);
            }
        }
    }
    for ((slice, dim), counts) in &m.rating_counts {
        for (level, count) in counts.iter().enumerate() {
            let mut row = slice_cols(slice).to_vec();
            row.extend(["rating".into(), dim.as_str().into(), (level + 1).to_string(), count.to_string()]);
            rows.push(row);
        }
    }
    rows
}

fn geodiv_rows(m: &ScoreMatrix) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for s in m.slices() {
        if let Ok(v) = m.geodiv(&s) {
            let mut row = vec!["slice".to_string(), String::new()];
            row.extend(slice_cols(&s));
            row.push(num(v));
            rows.push(row);
        }
    }
    for order in [AveragingOrder::AxisFirst, AveragingOrder::EntityFirst] {
        for ((d, c), v) in m.country_geodiv(order) {
            rows.push(vec!["country".into(), order.as_str().into(), d, String::new(), c, num(v)]);
        }
    }
    for order in [AveragingOrder::AxisFirst, AveragingOrder::EntityFirst] {
        for (d, v) in m.dataset_geodiv(order) {
            rows.push(vec!["dataset".into(), order.as_str().into(), d, String::new(), String::new(), num(v)]);
        }
    }
    rows
}

fn jsd_rows(jsd: &JsdSummary) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut pairs = Vec::new();
    for q in &jsd.questions {
        for i in 0..q.countries.len() {
            for j in (i + 1)..q.countries.len() {
                pairs.push(vec![
                    q.dataset.clone(),
                    q.entity.clone(),
                    q.question_id.clone(),
                    q.countries[i].clone(),
                    q.countries[j].clone(),
                    num(q.matrix[i][j]),
                ]);
            }
        }
    }
    let summary = jsd
        .entities
        .iter()
        .map(|e| vec![e.dataset.clone(), e.entity.clone(), e.questions.to_string(), num(e.max), num(e.mean)])
        .collect();
    (pairs, summary)
}

/// Writes the report into `dir` and returns the files written. An empty
/// matrix is an error and writes nothing.
pub fn export_scores(
    matrix: &ScoreMatrix,
    jsd: Option<&JsdSummary>,
    header: &ExportHeader,
    format: ExportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, AggregateError> {
    if matrix.is_empty() {
        return Err(AggregateError::EmptyMatrix);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Tabular => {
            let mut emit = |name: &str, columns: &[&str], rows: Vec<Vec<String>>| -> Result<(), AggregateError> {
                let path = dir.join(name);
                write_csv(&path, header, columns, &rows)?;
                written.push(path);
                Ok(())
            };
            emit("scores.csv", SCORE_COLUMNS, score_rows(matrix))?;
            emit("questions.csv", QUESTION_COLUMNS, question_rows(matrix))?;
            emit("distributions.csv", DISTRIBUTION_COLUMNS, distribution_rows(matrix))?;
            emit(
                "geodiv.csv",
                &["level", "order", "dataset", "entity", "country", "score"],
                geodiv_rows(matrix),
            )?;
            if let Some(jsd) = jsd {
                let (pairs, summary) = jsd_rows(jsd);
                emit(
                    "jsd.csv",
                    &["dataset", "entity", "question_id", "country_a", "country_b", "distance"],
                    pairs,
                )?;
                emit("jsd_summary.csv", &["dataset", "entity", "questions", "max", "mean"], summary)?;
            }
        }
        ExportFormat::Structured => {
            let path = dir.join("report.json");
            let mut text = serde_json::to_string_pretty(&structured(matrix, jsd, header)).expect("report serializes");
            text.push('\n');
            std::fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Per-image ratings with transcript digests.
pub fn export_ratings(passes: &[SeviPassResult], header: &ExportHeader, path: &Path) -> Result<(), AggregateError> {
    let mut rows = Vec::new();
    for p in passes {
        for r in &p.ratings {
            let mut row = slice_cols(&p.key).to_vec();
            row.extend([
                r.image_id.clone(),
                r.dimension.as_str().to_string(),
                r.score.to_string(),
                r.transcript_digest.clone(),
            ]);
            rows.push(row);
        }
    }
    rows.sort();
    write_csv(
        path,
        header,
        &["dataset", "entity", "country", "image_id", "dimension", "score", "transcript_digest"],
        &rows,
    )
}

fn structured(m: &ScoreMatrix, jsd: Option<&JsdSummary>, header: &ExportHeader) -> Value {
    let mut datasets = Map::new();
    let by_dataset_af = m.dataset_geodiv(AveragingOrder::AxisFirst);
    let by_dataset_ef = m.dataset_geodiv(AveragingOrder::EntityFirst);
    for s in m.slices() {
        let mut axes = Map::new();
        for (a, v) in m.axis_scores(&s) {
            axes.insert(a.as_str().into(), json!(v));
        }
        let mut means = Map::new();
        let mut ratings = Map::new();
        for d in RatingDimension::ALL {
            if let Some(v) = m.mean_ratings.get(&(s.clone(), d)) {
                means.insert(d.as_str().into(), json!(v));
            }
            if let Some(c) = m.rating_counts.get(&(s.clone(), d)) {
                ratings.insert(d.as_str().into(), json!(c));
            }
        }
        let mut questions = Map::new();
        for ((slice, qid), r) in m.questions.range((s.clone(), String::new())..) {
            if slice != &s {
                break;
            }
            let score = m.scores.get(&ScoreKey {
                slice: s.clone(),
                axis: Axis::of_question(r.axis),
                question_id: Some(qid.clone()),
            });
            questions.insert(
                qid.clone(),
                json!({
                    "axis": r.axis,
                    "status": r.status,
                    "score": score,
                    "coverage": r.coverage,
                    "distribution": r.distribution,
                }),
            );
        }
        let cell = json!({
            "geodiv": m.geodiv(&s).ok(),
            "axes": axes,
            "mean_ratings": means,
            "rating_counts": ratings,
            "questions": questions,
        });
        let dataset = datasets.entry(s.dataset.clone()).or_insert_with(|| {
            json!({
                "geodiv": {
                    "axis_first": by_dataset_af.get(&s.dataset),
                    "entity_first": by_dataset_ef.get(&s.dataset),
                },
                "entities": {},
            })
        });
        dataset["entities"]
            .as_object_mut()
            .expect("entities is an object")
            .entry(s.entity.clone())
            .or_insert_with(|| json!({"countries": {}}))["countries"]
            .as_object_mut()
            .expect("countries is an object")
            .insert(s.country.clone(), cell);
    }
    let af = m.country_geodiv(AveragingOrder::AxisFirst);
    let ef = m.country_geodiv(AveragingOrder::EntityFirst);
    let countries: Vec<Value> = af
        .keys()
        .chain(ef.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|k| json!({"dataset": k.0, "country": k.1, "axis_first": af.get(k), "entity_first": ef.get(k)}))
        .collect();
    let mut doc = json!({
        "header": header,
        "nota_policy": NOTA_POLICY,
        "datasets": datasets,
        "countries": countries,
    });
    if let Some(j) = jsd {
        doc["jsd"] = json!({
            "questions": j.questions.iter().map(|q| json!({
                "dataset": q.dataset, "entity": q.entity, "question_id": q.question_id,
                "countries": q.countries, "labels": q.labels, "matrix": q.matrix,
                "max": q.max, "mean": q.mean,
            })).collect::<Vec<_>>(),
            "entities": j.entities.iter().map(|e| json!({
                "dataset": e.dataset, "entity": e.entity, "questions": e.questions,
                "max": e.max, "mean": e.mean,
            })).collect::<Vec<_>>(),
        });
    }
    doc
}

fn field<'a>(row: &'a BTreeMap<String, String>, name: &str, path: &Path) -> Result<&'a str, AggregateError> {
    row.get(name)
        .map(String::as_str)
        .ok_or_else(|| import_err(path, format!("missing column `{name}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, path: &Path) -> Result<T, AggregateError> {
    s.parse().map_err(|_| import_err(path, format!("bad {what} `{s}`")))
}

fn row_slice(row: &BTreeMap<String, String>, path: &Path) -> Result<SliceKey, AggregateError> {
    Ok(SliceKey::new(
        field(row, "dataset", path)?,
        field(row, "entity", path)?,
        field(row, "country", path)?,
    ))
}

/// Reads back a tabular export written by [`export_scores`].
pub fn import_tabular(dir: &Path) -> Result<(ExportHeader, ScoreMatrix), AggregateError> {
    let mut m = ScoreMatrix::default();

    let path = dir.join("scores.csv");
    let (header, rows) = read_csv(&path)?;
    for row in &rows {
        let slice = row_slice(row, &path)?;
        let axis_name = field(row, "axis", &path)?;
        let axis = Axis::parse(axis_name).ok_or_else(|| import_err(&path, format!("unknown axis `{axis_name}`")))?;
        let qid = field(row, "question_id", &path)?;
        let score: f64 = parse_num(field(row, "score", &path)?, "score", &path)?;
        let mean = field(row, "mean_rating", &path)?;
        if !mean.is_empty() {
            let d = axis.dimension().ok_or_else(|| import_err(&path, "mean rating on a non-rating axis"))?;
            m.mean_ratings.insert((slice.clone(), d), parse_num(mean, "mean rating", &path)?);
        }
        m.scores.insert(
            ScoreKey {
                slice,
                axis,
                question_id: (!qid.is_empty()).then(|| qid.to_string()),
            },
            score,
        );
    }

    let path = dir.join("distributions.csv");
    let (_, rows) = read_csv(&path)?;
    let mut labels: BTreeMap<(SliceKey, String), (Vec<String>, Vec<u64>)> = BTreeMap::new();
    for row in &rows {
        let slice = row_slice(row, &path)?;
        let key = field(row, "key", &path)?.to_string();
        let label = field(row, "label", &path)?.to_string();
        let count: u64 = parse_num(field(row, "count", &path)?, "count", &path)?;
        match field(row, "kind", &path)? {
            "question" => {
                let e = labels.entry((slice, key)).or_default();
                e.0.push(label);
                e.1.push(count);
            }
            "rating" => {
                let d = RatingDimension::parse(&key).ok_or_else(|| import_err(&path, format!("unknown dimension `{key}`")))?;
                let level: usize = parse_num(&label, "level", &path)?;
                if !(1..=LEVELS).contains(&level) {
                    return Err(import_err(&path, format!("level {level} outside 1-5")));
                }
                m.rating_counts.entry((slice, d)).or_insert([0; LEVELS])[level - 1] = count;
            }
            other => return Err(import_err(&path, format!("unknown kind `{other}`"))),
        }
    }

    let path = dir.join("questions.csv");
    let (_, rows) = read_csv(&path)?;
    for row in &rows {
        let slice = row_slice(row, &path)?;
        let qid = field(row, "question_id", &path)?.to_string();
        let axis_name = field(row, "question_axis", &path)?;
        let axis = parse_question_axis(axis_name).ok_or_else(|| import_err(&path, format!("unknown axis `{axis_name}`")))?;
        let status_name = field(row, "status", &path)?;
        let status = parse_status(status_name).ok_or_else(|| import_err(&path, format!("unknown status `{status_name}`")))?;
        let total = field(row, "total_images", &path)?;
        let coverage = if total.is_empty() {
            None
        } else {
            Some(CoverageReport {
                question_id: qid.clone(),
                total_images: parse_num(total, "total", &path)?,
                retained_after_visibility: parse_num(field(row, "retained", &path)?, "retained", &path)?,
                nota_fraction: parse_num(field(row, "nota_fraction", &path)?, "nota fraction", &path)?,
            })
        };
        let distribution = match labels.remove(&(slice.clone(), qid.clone())) {
            Some((labels, counts)) => Some(AnswerDistribution {
                question_id: qid.clone(),
                labels,
                counts,
                nota_count: parse_num(field(row, "nota_count", &path)?, "nota count", &path)?,
                others_promoted: parse_num(field(row, "others_promoted", &path)?, "flag", &path)?,
            }),
            None => None,
        };
        m.questions.insert(
            (slice, qid),
            QuestionRecord {
                axis,
                status,
                coverage,
                distribution,
            },
        );
    }
    Ok((header, m))
}

/// Reads back a structured export written by [`export_scores`].
pub fn import_structured(path: &Path) -> Result<(ExportHeader, ScoreMatrix), AggregateError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| import_err(path, e.to_string()))?;
    let header: ExportHeader =
        serde_json::from_value(doc["header"].clone()).map_err(|e| import_err(path, format!("header: {e}")))?;
    let bad = |what: &str| import_err(path, format!("malformed {what}"));
    let mut m = ScoreMatrix::default();
    let datasets = doc["datasets"].as_object().ok_or_else(|| bad("datasets"))?;
    for (d, dv) in datasets {
        let entities = dv["entities"].as_object().ok_or_else(|| bad("entities"))?;
        for (e, ev) in entities {
            let countries = ev["countries"].as_object().ok_or_else(|| bad("countries"))?;
            for (c, cell) in countries {
                let slice = SliceKey::new(d.as_str(), e.as_str(), c.as_str());
                for (a, v) in cell["axes"].as_object().ok_or_else(|| bad("axes"))? {
                    let axis = Axis::parse(a).ok_or_else(|| bad("axis name"))?;
                    m.scores.insert(
                        ScoreKey {
                            slice: slice.clone(),
                            axis,
                            question_id: None,
                        },
                        v.as_f64().ok_or_else(|| bad("axis score"))?,
                    );
                }
                for (dim, v) in cell["mean_ratings"].as_object().ok_or_else(|| bad("mean_ratings"))? {
                    let dim = RatingDimension::parse(dim).ok_or_else(|| bad("dimension"))?;
                    m.mean_ratings.insert((slice.clone(), dim), v.as_f64().ok_or_else(|| bad("mean rating"))?);
                }
                for (dim, v) in cell["rating_counts"].as_object().ok_or_else(|| bad("rating_counts"))? {
                    let dim = RatingDimension::parse(dim).ok_or_else(|| bad("dimension"))?;
                    let counts: [u64; LEVELS] = serde_json::from_value(v.clone()).map_err(|_| bad("rating counts"))?;
                    m.rating_counts.insert((slice.clone(), dim), counts);
                }
                for (qid, q) in cell["questions"].as_object().ok_or_else(|| bad("questions"))? {
                    let record = QuestionRecord {
                        axis: serde_json::from_value(q["axis"].clone()).map_err(|_| bad("question axis"))?,
                        status: serde_json::from_value(q["status"].clone()).map_err(|_| bad("status"))?,
                        coverage: serde_json::from_value(q["coverage"].clone()).map_err(|_| bad("coverage"))?,
                        distribution: serde_json::from_value(q["distribution"].clone()).map_err(|_| bad("distribution"))?,
                    };
                    if let Some(score) = q["score"].as_f64() {
                        m.scores.insert(
                            ScoreKey {
                                slice: slice.clone(),
                                axis: Axis::of_question(record.axis),
                                question_id: Some(qid.clone()),
                            },
                            score,
                        );
                    }
                    m.questions.insert((slice.clone(), qid.clone()), record);
                }
            }
        }
    }
    Ok((header, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vqa::QuestionStatus;

    pub(crate) fn fixture_matrix() -> ScoreMatrix {
        let mut m = ScoreMatrix::default();
        for (country, x) in [("Egypt", 0.41), ("India", 1.0 / 3.0)] {
            let s = SliceKey::new("SD2.1", "house", country);
            for (i, axis) in Axis::GEODIV.into_iter().enumerate() {
                m.scores.insert(
                    ScoreKey {
                        slice: s.clone(),
                        axis,
                        question_id: None,
                    },
                    x + 0.01 * i as f64,
                );
            }
            m.scores.insert(
                ScoreKey {
                    slice: s.clone(),
                    axis: Axis::EntityAppearance,
                    question_id: Some("house.roof".into()),
                },
                x,
            );
            m.mean_ratings.insert((s.clone(), RatingDimension::Affluence), 3.25);
            m.rating_counts.insert((s.clone(), RatingDimension::Affluence), [1, 0, 2, 0, 1]);
            m.questions.insert(
                (s.clone(), "house.roof".into()),
                QuestionRecord {
                    axis: QuestionAxis::EntityAppearance,
                    status: QuestionStatus::Kept,
                    coverage: Some(CoverageReport {
                        question_id: "house.roof".into(),
                        total_images: 10,
                        retained_after_visibility: 9,
                        nota_fraction: 4.0 / 9.0,
                    }),
                    distribution: Some(AnswerDistribution {
                        question_id: "house.roof".into(),
                        labels: vec!["sloped, tiled".into(), "flat".into(), "Others".into()],
                        counts: vec![3, 2, 4],
                        nota_count: 4,
                        others_promoted: true,
                    }),
                },
            );
            m.questions.insert(
                (s.clone(), "bg.indoor.floor".into()),
                QuestionRecord {
                    axis: QuestionAxis::BackgroundIndoor,
                    status: QuestionStatus::NotApplicable,
                    coverage: None,
                    distribution: None,
                },
            );
        }
        m
    }

    fn header() -> ExportHeader {
        ExportHeader {
            config_digest: "abc".into(),
            backend_id: "mock:1:x:y".into(),
            catalog_digest: "def".into(),
            coverage_threshold: 0.5,
            others_threshold: 0.3,
            seed: 7,
        }
    }

    #[test]
    fn empty_matrix_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let err = export_scores(&ScoreMatrix::default(), None, &header(), ExportFormat::Tabular, &out);
        assert!(matches!(err, Err(AggregateError::EmptyMatrix)));
        assert!(!out.exists());
    }

    #[test]
    fn tabular_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture_matrix();
        export_scores(&m, None, &header(), ExportFormat::Tabular, dir.path()).unwrap();
        let (h, back) = import_tabular(dir.path()).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, m);
        let text = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
        assert!(text.starts_with("# config_digest: abc\n"));
    }

    #[test]
    fn structured_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture_matrix();
        let files = export_scores(&m, None, &header(), ExportFormat::Structured, dir.path()).unwrap();
        let (h, back) = import_structured(&files[0]).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, m);
    }

    #[test]
    fn exports_are_byte_stable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = fixture_matrix();
        for format in [ExportFormat::Tabular, ExportFormat::Structured] {
            let fa = export_scores(&m, None, &header(), format, a.path()).unwrap();
            let fb = export_scores(&m.clone(), None, &header(), format, b.path()).unwrap();
            for (x, y) in fa.iter().zip(&fb) {
                assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            }
        }
    }
}
