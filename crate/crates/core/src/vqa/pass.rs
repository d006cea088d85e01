use serde::{Deserialize, Serialize};

use super::{Orchestrator, Step, VqaError};
use crate::catalog::{
    low_coverage_filter, AnswerDistribution, Catalog, CoverageDecision, CoverageReport, QuestionAxis, QuestionSpec,
    Scene, Thresholds, NOTA,
};
use crate::manifest::{ImageRecord, SliceKey};

/// Per-question tallies for one slice. `counts` is aligned with `options`,
/// which end with NOTA. A multi-select reply adds one to every selected option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellAccumulator {
    pub question_id: String,
    pub options: Vec<String>,
    pub counts: Vec<u64>,
    pub images_seen: u64,
    pub answered: u64,
    pub rejected_visibility: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageOutcome {
    Answered(Vec<String>),
    Rejected,
    Failed(String),
}

impl CellAccumulator {
    pub fn new(q: &QuestionSpec) -> Self {
        let options = q.offered_options();
        Self {
            question_id: q.id.clone(),
            counts: vec![0; options.len()],
            options,
            images_seen: 0,
            answered: 0,
            rejected_visibility: 0,
            failed: 0,
        }
    }

    pub fn record(&mut self, outcome: &ImageOutcome) {
        self.images_seen += 1;
        match outcome {
            ImageOutcome::Answered(selection) => {
                self.answered += 1;
                for label in selection {
                    let i = self
                        .options
                        .iter()
                        .position(|o| o == label)
                        .expect("validated selections only name offered options");
                    self.counts[i] += 1;
                }
            }
            ImageOutcome::Rejected => self.rejected_visibility += 1,
            ImageOutcome::Failed(_) => self.failed += 1,
        }
    }

    /// Counts over the question's own options, without NOTA.
    pub fn option_counts(&self) -> &[u64] {
        &self.counts[..self.counts.len() - 1]
    }

    pub fn nota_count(&self) -> u64 {
        debug_assert_eq!(self.options.last().map(String::as_str), Some(NOTA));
        *self.counts.last().expect("options include NOTA")
    }

    /// Failed images are left out of both numerator and denominator.
    pub fn coverage(&self) -> CoverageReport {
        CoverageReport {
            question_id: self.question_id.clone(),
            total_images: self.answered + self.rejected_visibility,
            retained_after_visibility: self.answered,
            nota_fraction: if self.answered == 0 {
                0.0
            } else {
                self.nota_count() as f64 / self.answered as f64
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Kept,
    Dropped,
    /// No image was eligible (e.g. no image of the question's scene).
    NotApplicable,
}

impl QuestionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionStatus::Kept => "kept",
            QuestionStatus::Dropped => "dropped",
            QuestionStatus::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub axis: QuestionAxis,
    pub accumulator: CellAccumulator,
    pub status: QuestionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<AnswerDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTally {
    pub indoor: u64,
    pub outdoor: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdiPassResult {
    pub key: SliceKey,
    pub scenes: SceneTally,
    pub questions: Vec<QuestionOutcome>,
}

impl VdiPassResult {
    pub fn question(&self, id: &str) -> Option<&QuestionOutcome> {
        self.questions.iter().find(|q| q.question_id == id)
    }
}

fn outcome(orch: &Orchestrator, image: &ImageRecord, q: &QuestionSpec) -> Result<ImageOutcome, VqaError> {
    match orch.visibility(image, q)? {
        Step::Failed(why) => return Ok(ImageOutcome::Failed(why)),
        Step::Done(false) => return Ok(ImageOutcome::Rejected),
        Step::Done(true) => {}
    }
    Ok(match orch.answer(image, q)? {
        Step::Done(selection) => ImageOutcome::Answered(selection),
        Step::Failed(why) => ImageOutcome::Failed(why),
    })
}

fn finish(q: &QuestionSpec, accumulator: CellAccumulator, thresholds: Thresholds) -> QuestionOutcome {
    let coverage = accumulator.coverage();
    let mut out = QuestionOutcome {
        question_id: q.id.clone(),
        axis: q.axis,
        status: QuestionStatus::NotApplicable,
        coverage: None,
        distribution: None,
        score: None,
        accumulator,
    };
    let Ok(decision) = low_coverage_filter(&coverage, thresholds.coverage) else {
        return out;
    };
    out.coverage = Some(coverage);
    if decision == CoverageDecision::Drop {
        out.status = QuestionStatus::Dropped;
        return out;
    }
    let acc = &out.accumulator;
    let dist = AnswerDistribution::build(q, acc.option_counts(), acc.nota_count(), acc.answered, thresholds.others);
    if let Ok(score) = dist.diversity() {
        out.status = QuestionStatus::Kept;
        out.score = Some(score);
        out.distribution = Some(dist);
    }
    out
}

/// Scene classification, visibility filtering and answering for every
/// question that applies to one slice. Entity questions see every image;
/// background questions see the images classified into their scene.
pub fn run_vdi_pass(
    key: &SliceKey,
    images: &[&ImageRecord],
    catalog: &Catalog,
    orch: &Orchestrator,
    thresholds: Thresholds,
) -> Result<VdiPassResult, VqaError> {
    if images.is_empty() {
        return Err(VqaError::EmptySlice(key.to_string()));
    }
    let mut questions: Vec<&QuestionSpec> = catalog.entity_questions(&key.entity).collect();
    if questions.is_empty() {
        return Err(VqaError::UncoveredEntity(key.entity.clone()));
    }
    questions.extend(catalog.background_questions(Scene::Indoor));
    questions.extend(catalog.background_questions(Scene::Outdoor));

    let scenes = orch
        .fan_out(images, |img| orch.scene(img))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut tally = SceneTally::default();
    for s in &scenes {
        match s {
            Step::Done(Scene::Indoor) => tally.indoor += 1,
            Step::Done(Scene::Outdoor) => tally.outdoor += 1,
            Step::Failed(_) => tally.failed += 1,
        }
    }

    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for (qi, q) in questions.iter().enumerate() {
        for (ii, scene) in scenes.iter().enumerate() {
            let eligible = match q.axis {
                QuestionAxis::EntityAppearance => true,
                QuestionAxis::BackgroundIndoor => *scene == Step::Done(Scene::Indoor),
                QuestionAxis::BackgroundOutdoor => *scene == Step::Done(Scene::Outdoor),
            };
            if eligible {
                tasks.push((qi, ii));
            }
        }
    }
    let outcomes = orch
        .fan_out(&tasks, |&(qi, ii)| outcome(orch, images[ii], questions[qi]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let usable = tally.failed < images.len() as u64 || outcomes.iter().any(|o| !matches!(o, ImageOutcome::Failed(_)));
    if !usable {
        return Err(VqaError::EmptySlice(key.to_string()));
    }

    let mut accumulators: Vec<CellAccumulator> = questions.iter().map(|q| CellAccumulator::new(q)).collect();
    for (&(qi, _), o) in tasks.iter().zip(&outcomes) {
        accumulators[qi].record(o);
    }
    let questions = questions
        .iter()
        .zip(accumulators)
        .map(|(q, acc)| finish(q, acc, thresholds))
        .collect();
    Ok(VdiPassResult {
        key: key.clone(),
        scenes: tally,
        questions,
    })
}
