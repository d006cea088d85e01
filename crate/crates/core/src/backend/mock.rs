//! Deterministic backend for tests and fixtures.
//!
//! Replies come from a planted per-image table when present and from a
//! seeded sampler otherwise. Every sampled value depends only on the seed,
//! the image id and what is being asked, so runs are reproducible in any
//! order and at any concurrency.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, Reply, VlmBackend};
use crate::catalog::{QuestionSpec, Scene, NOTA};
use crate::manifest::ImageRecord;
use crate::sevi::{RatingDimension, RatingScale, LEVELS};

/// Everything planted for one image. Absent entries fall through to the sampler.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedImage {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
    /// The image cannot be loaded.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unreachable: bool,
    /// Number of transient errors raised per capability before succeeding.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub transient_failures: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub visibility: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub answers: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ratings: BTreeMap<RatingDimension, u8>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlantedTable {
    images: BTreeMap<String, PlantedImage>,
}

impl PlantedTable {
    pub fn new(images: impl IntoIterator<Item = PlantedImage>) -> Self {
        Self {
            images: images.into_iter().map(|p| (p.image_id.clone(), p)).collect(),
        }
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, String> {
        let mut images = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let image: PlantedImage =
                serde_json::from_str(&line).map_err(|e| format!("planted table line {}: {e}", i + 1))?;
            images.push(image);
        }
        Ok(Self::new(images))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_reader(file)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for image in self.images.values() {
            serde_json::to_writer(&mut out, image)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()
    }

    pub fn get(&self, image_id: &str) -> Option<&PlantedImage> {
        self.images.get(image_id)
    }

    pub fn images(&self) -> impl Iterator<Item = &PlantedImage> {
        self.images.values()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneBias {
    IndoorBias,
    OutdoorBias,
    Mixed,
}

/// Distribution-driven replies for anything not planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "SamplerConfig::default_scene_bias")]
    pub scene_bias: SceneBias,
    /// Share of indoor scenes under `SceneBias::Mixed`.
    #[serde(default = "SamplerConfig::half")]
    pub indoor_fraction: f64,
    #[serde(default = "SamplerConfig::one")]
    pub visibility_rate: f64,
    #[serde(default)]
    pub nota_rate: f64,
    /// Per-question weights over the question's options; uniform otherwise.
    #[serde(default)]
    pub answer_weights: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub rating_weights: BTreeMap<RatingDimension, [f64; LEVELS]>,
}

impl SamplerConfig {
    fn default_scene_bias() -> SceneBias {
        SceneBias::Mixed
    }

    fn half() -> f64 {
        0.5
    }

    fn one() -> f64 {
        1.0
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("sampler config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_bias: Self::default_scene_bias(),
            indoor_fraction: 0.5,
            visibility_rate: 1.0,
            nota_rate: 0.0,
            answer_weights: BTreeMap::new(),
            rating_weights: BTreeMap::new(),
        }
    }
}

pub struct MockBackend {
    table: PlantedTable,
    sampler: SamplerConfig,
    id: String,
    calls: AtomicU64,
    attempts: Mutex<HashMap<(String, &'static str), u32>>,
}

impl MockBackend {
    pub fn new(table: PlantedTable, sampler: SamplerConfig) -> Self {
        let id = format!("mock:{}:{}:{}", sampler.seed, &table.digest()[..16], &sampler.digest()[..16]);
        Self {
            table,
            sampler,
            id,
            calls: AtomicU64::new(0),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::new(PlantedTable::default(), SamplerConfig::seeded(seed))
    }

    /// Backend invocations since construction, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn planted(&self) -> &PlantedTable {
        &self.table
    }

    fn rng(&self, image_id: &str, capability: &str, key: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.sampler.seed.to_le_bytes());
        for part in [image_id, capability, key] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn enter(&self, image: &ImageRecord, capability: &'static str) -> Result<Option<&PlantedImage>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if image.uri.starts_with("unreachable:") {
            return Err(BackendError::Unreachable {
                image_id: image.image_id.clone(),
                reason: format!("cannot open `{}`", image.uri),
            });
        }
        let planted = self.table.get(&image.image_id);
        if let Some(p) = planted {
            if p.unreachable {
                return Err(BackendError::Unreachable {
                    image_id: image.image_id.clone(),
                    reason: "planted as unreachable".into(),
                });
            }
            if p.transient_failures > 0 {
                let mut attempts = self.attempts.lock().expect("attempt table poisoned");
                let n = attempts.entry((image.image_id.clone(), capability)).or_insert(0);
                if *n < p.transient_failures {
                    *n += 1;
                    return Err(BackendError::Transport(format!("planted transient failure {n}")));
                }
            }
        }
        Ok(planted)
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

impl VlmBackend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn classify_scene(&self, image: &ImageRecord) -> Result<Reply<Scene>, BackendError> {
        if let Some(scene) = self.enter(image, "scene")?.and_then(|p| p.scene) {
            return Ok(Reply::new(scene, format!("planted: {}", scene.as_str())));
        }
        let scene = match self.sampler.scene_bias {
            SceneBias::IndoorBias => Scene::Indoor,
            SceneBias::OutdoorBias => Scene::Outdoor,
            SceneBias::Mixed => {
                if self.rng(&image.image_id, "scene", "").random::<f64>() < self.sampler.indoor_fraction {
                    Scene::Indoor
                } else {
                    Scene::Outdoor
                }
            }
        };
        Ok(Reply::new(scene, format!("sampled: {}", scene.as_str())))
    }

    fn check_visibility(&self, image: &ImageRecord, question: &QuestionSpec) -> Result<Reply<bool>, BackendError> {
        let planted = self.enter(image, "visibility")?;
        if let Some(&v) = planted.and_then(|p| p.visibility.get(&question.id)) {
            return Ok(Reply::new(v, format!("planted: {}", if v { "yes" } else { "no" })));
        }
        let v = self.rng(&image.image_id, "visibility", &question.id).random::<f64>() < self.sampler.visibility_rate;
        Ok(Reply::new(v, format!("sampled: {}", if v { "yes" } else { "no" })))
    }

    fn answer_multiselect(
        &self,
        image: &ImageRecord,
        question: &QuestionSpec,
        options: &[String],
        reask: Option<&str>,
    ) -> Result<Reply<Vec<String>>, BackendError> {
        let planted = self.enter(image, "answer")?;
        if let Some(answer) = planted.and_then(|p| p.answers.get(&question.id)) {
            let note = reask.map(|r| format!(" (re-asked: {r})")).unwrap_or_default();
            return Ok(Reply::new(answer.clone(), format!("planted: {}{note}", answer.join(", "))));
        }
        let mut rng = self.rng(&image.image_id, "answer", &question.id);
        if rng.random::<f64>() < self.sampler.nota_rate {
            return Ok(Reply::new(vec![NOTA.to_string()], format!("sampled: {NOTA}")));
        }
        let answerable: Vec<&String> = options.iter().filter(|o| o.as_str() != NOTA).collect();
        let uniform = vec![1.0; answerable.len()];
        let weights = match self.sampler.answer_weights.get(&question.id) {
            Some(w) if w.len() == answerable.len() => w,
            _ => &uniform,
        };
        let pick = answerable[weighted_index(&mut rng, weights)].clone();
        Ok(Reply::new(vec![pick.clone()], format!("sampled: {pick}")))
    }

    fn rate_scale(&self, image: &ImageRecord, scale: &RatingScale, _reask: Option<&str>) -> Result<Reply<u8>, BackendError> {
        let planted = self.enter(image, "rating")?;
        if let Some(&r) = planted.and_then(|p| p.ratings.get(&scale.dimension)) {
            return Ok(Reply::new(r, format!("planted: {r}")));
        }
        let weights = self
            .sampler
            .rating_weights
            .get(&scale.dimension)
            .copied()
            .unwrap_or([1.0; LEVELS]);
        let mut rng = self.rng(&image.image_id, "rating", scale.dimension.as_str());
        let r = weighted_index(&mut rng, &weights) as u8 + 1;
        Ok(Reply::new(r, format!("sampled: {r}")))
    }
}
