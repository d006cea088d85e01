//! Seeded planted datasets for tests and demonstrations.
//!
//! Every image gets a planted scene, visibility verdicts, answers and
//! ratings, so a mock run reproduces known counts exactly. Countries differ
//! sharply in how concentrated their answers are, which makes their
//! diversity ranking stable under subsampling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::backend::{BackendConfig, MockConfig, PlantedImage, PlantedTable, RetryPolicy, SamplerConfig};
use crate::catalog::{builtin_background, builtin_entity, Catalog, QuestionAxis, QuestionSpec, Scene, NOTA};
use crate::manifest::{ImageRecord, Manifest};
use crate::sevi::{RatingDimension, LEVELS};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub images_per_slice: usize,
    pub datasets: Vec<String>,
    /// Entities with the share of their images planted as indoor scenes.
    pub entities: Vec<(String, f64)>,
    /// Countries with a concentration in (0, 1]: near 1 spreads answers
    /// evenly, near 0 piles them on one option.
    pub countries: Vec<(String, f64)>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            images_per_slice: 250,
            datasets: vec!["SD2.1".into(), "FLUX.1".into()],
            entities: vec![("house".into(), 0.2), ("chair".into(), 0.9)],
            countries: vec![("Egypt".into(), 0.95), ("India".into(), 0.5), ("Nigeria".into(), 0.15)],
        }
    }
}

impl FixtureSpec {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// A generated fixture held in memory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub manifest: Manifest,
    pub planted: PlantedTable,
    pub background: Catalog,
    pub entities: Vec<Catalog>,
}

impl Fixture {
    pub fn catalog(&self) -> Catalog {
        let mut all = vec![self.background.clone()];
        all.extend(self.entities.iter().cloned());
        Catalog::merge(all).expect("fixture catalogs have distinct ids")
    }

    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig::Mock(MockConfig {
            planted: Some(PathBuf::from("planted.jsonl")),
            sampler: SamplerConfig::seeded(self.spec.seed),
            concurrency: 4,
            retry: RetryPolicy::immediate(3),
        })
    }

    /// Writes `manifest.jsonl`, `planted.jsonl`, `catalogs/*.json`,
    /// `backend.toml` and `run.toml` under `dir`. All references between
    /// files are relative.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        let catalogs = dir.join("catalogs");
        std::fs::create_dir_all(&catalogs)?;
        let mut written = Vec::new();
        let mut put = |path: PathBuf, bytes: Vec<u8>| -> std::io::Result<()> {
            std::fs::write(&path, bytes)?;
            written.push(path);
            Ok(())
        };

        let mut buf = Vec::new();
        self.manifest.write_to(&mut buf)?;
        put(dir.join("manifest.jsonl"), buf)?;
        let mut buf = Vec::new();
        self.planted.write_to(&mut buf)?;
        put(dir.join("planted.jsonl"), buf)?;

        let mut catalog_paths = vec!["catalogs/background.json".to_string()];
        put(catalogs.join("background.json"), self.background.to_json().into_bytes())?;
        for (c, (name, _)) in self.entities.iter().zip(&self.spec.entities) {
            put(catalogs.join(format!("{name}.json")), c.to_json().into_bytes())?;
            catalog_paths.push(format!("catalogs/{name}.json"));
        }

        let backend = toml::to_string(&self.backend_config()).expect("backend config serializes");
        put(dir.join("backend.toml"), backend.into_bytes())?;
        let catalogs_toml = catalog_paths.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(", ");
        let run = format!(
            "manifest = \"manifest.jsonl\"\ncatalogs = [{catalogs_toml}]\nbackend = \"backend.toml\"\noutput = \"out\"\nseed = {}\n\n[thresholds]\ncoverage = 0.5\nothers = 0.3\n",
            self.spec.seed
        );
        put(dir.join("run.toml"), run.into_bytes())?;
        Ok(written)
    }
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Splits `total` into integer parts proportional to `weights`, handing
/// leftovers to the largest fractional parts (lower index on ties).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

/// Geometric weights `c^0, c^1, ...` rotated so the dominant option depends
/// on the question.
fn profile(n: usize, concentration: f64, rotate: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|i| concentration.powi(i as i32)).collect();
    w.rotate_right(rotate % n);
    w
}

fn rotation(key: &str) -> usize {
    Sha256::digest(key.as_bytes())[0] as usize
}

/// Share of images whose answer is NOTA, by question.
fn nota_rate(q: &QuestionSpec) -> f64 {
    match rotation(&q.id) % 4 {
        0 => 0.4,
        1 => 0.1,
        _ => 0.0,
    }
}

/// Plants one question's answers for the images in scope. A tenth of the
/// answered images on multi-select questions also pick a second option.
fn plant_question(
    seed: u64,
    slice: &str,
    q: &QuestionSpec,
    concentration: f64,
    visibility_rate: f64,
    images: &[usize],
    planted: &mut [PlantedImage],
) {
    let n = images.len();
    let visible = (visibility_rate * n as f64).round() as usize;
    let nota = (nota_rate(q) * visible as f64).round() as usize;
    let counts = apportion(visible - nota, &profile(q.options.len(), concentration, rotation(&q.id)));

    let mut answers: Vec<Option<Vec<String>>> = Vec::with_capacity(n);
    answers.extend(std::iter::repeat_n(Some(vec![NOTA.to_string()]), nota));
    for (i, &c) in counts.iter().enumerate() {
        for k in 0..c {
            let mut sel = vec![q.options[i].clone()];
            if q.multi_select && q.options.len() > 1 && k % 10 == 9 {
                sel.push(q.options[(i + 1) % q.options.len()].clone());
            }
            answers.push(Some(sel));
        }
    }
    answers.extend(std::iter::repeat_n(None, n - visible));
    answers.shuffle(&mut rng_for(seed, &[slice, &q.id]));

    for (&img, answer) in images.iter().zip(answers) {
        let p = &mut planted[img];
        if q.visibility_text.is_some() {
            p.visibility.insert(q.id.clone(), answer.is_some());
        }
        if let Some(a) = answer {
            // keep catalog order so planted and validated selections agree
            let ordered = q.options.iter().chain([&NOTA.to_string()]).filter(|o| a.contains(o)).cloned().collect();
            p.answers.insert(q.id.clone(), ordered);
        }
    }
}

/// Builds the fixture described by `spec`. The house ground-cover question
/// in the least diverse country is planted with 45% visibility, so it is
/// dropped there.
pub fn generate(spec: &FixtureSpec) -> Fixture {
    let background = builtin_background();
    let entities: Vec<Catalog> = spec
        .entities
        .iter()
        .map(|(e, _)| builtin_entity(e).unwrap_or_else(|| panic!("no bundled catalog for `{e}`")))
        .collect();
    let least_diverse = spec
        .countries
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|c| c.0.clone());

    let mut records = Vec::new();
    let mut planted = Vec::new();
    for dataset in &spec.datasets {
        let shift = if dataset == &spec.datasets[0] { 1.0 } else { 0.8 };
        for ((entity, indoor_share), catalog) in spec.entities.iter().zip(&entities) {
            for (country, concentration) in &spec.countries {
                let concentration = concentration * shift;
                let slice = format!("{dataset}/{entity}/{country}");
                let base = planted.len();
                let n = spec.images_per_slice;
                for i in 0..n {
                    let id = format!("{}-{}-{}-{i:04}", dataset.to_lowercase().replace('.', ""), entity, country.to_lowercase());
                    records.push(ImageRecord {
                        image_id: id.clone(),
                        uri: format!("images/{id}.png"),
                        entity: entity.clone(),
                        country: country.clone(),
                        dataset: dataset.clone(),
                        seed: Some(i as u64),
                    });
                    planted.push(PlantedImage {
                        image_id: id,
                        transient_failures: u32::from(i == 0),
                        ..PlantedImage::default()
                    });
                }
                let slice_images = &mut planted[base..];

                let indoor = (indoor_share * n as f64).round() as usize;
                let mut scenes: Vec<Scene> = std::iter::repeat_n(Scene::Indoor, indoor)
                    .chain(std::iter::repeat_n(Scene::Outdoor, n - indoor))
                    .collect();
                scenes.shuffle(&mut rng_for(spec.seed, &[&slice, "scene"]));
                for (p, s) in slice_images.iter_mut().zip(&scenes) {
                    p.scene = Some(*s);
                }

                let all: Vec<usize> = (0..n).collect();
                for q in catalog.entity_questions(entity) {
                    let low = least_diverse.as_deref() == Some(country.as_str()) && q.id == "house.ground";
                    let rate = if low { 0.45 } else { 0.9 };
                    plant_question(spec.seed, &slice, q, concentration, rate, &all, slice_images);
                }
                for scene in [Scene::Indoor, Scene::Outdoor] {
                    let in_scene: Vec<usize> = (0..n).filter(|&i| scenes[i] == scene).collect();
                    for q in background.background_questions(scene) {
                        plant_question(spec.seed, &slice, q, concentration, 1.0, &in_scene, slice_images);
                    }
                }

                for dim in RatingDimension::ALL {
                    let counts = apportion(n, &profile(LEVELS, concentration, rotation(dim.as_str()) % 2 + 1));
                    let mut levels: Vec<u8> = counts
                        .iter()
                        .enumerate()
                        .flat_map(|(l, &c)| std::iter::repeat_n(l as u8 + 1, c))
                        .collect();
                    levels.shuffle(&mut rng_for(spec.seed, &[&slice, dim.as_str()]));
                    for (p, r) in slice_images.iter_mut().zip(levels) {
                        p.ratings.insert(dim, r);
                    }
                }
            }
        }
    }
    Fixture {
        spec: spec.clone(),
        manifest: Manifest::new(records).expect("fixture ids are unique"),
        planted: PlantedTable::new(planted),
        background,
        entities,
    }
}

/// One slice of 100 outdoor images and three single-select questions with
/// planted control-step outcomes: `ctl.visibility` keeps 49 images,
/// `ctl.nota_above` gets 31% NOTA and `ctl.nota_below` 29%.
pub fn control_fixture() -> (Manifest, Catalog, PlantedTable) {
    let q = |id: &str| QuestionSpec {
        id: id.into(),
        axis: QuestionAxis::EntityAppearance,
        entity: Some("house".into()),
        text: format!("Control question {id}"),
        options: vec!["A".into(), "B".into(), "C".into()],
        multi_select: false,
        visibility_text: Some(format!("Is {id} visible?")),
    };
    let catalog = Catalog::new(
        "control-step fixture",
        vec![q("ctl.visibility"), q("ctl.nota_above"), q("ctl.nota_below")],
    )
    .expect("control catalog is valid");
    let mut records = Vec::new();
    let mut planted = Vec::new();
    for i in 0..100usize {
        let id = format!("ctl-{i:03}");
        records.push(ImageRecord {
            image_id: id.clone(),
            uri: format!("images/{id}.png"),
            entity: "house".into(),
            country: "Testland".into(),
            dataset: "control".into(),
            seed: None,
        });
        let label = |k: usize| ["A", "B", "C"][k % 3].to_string();
        let pick = |nota_below: usize| if i < nota_below { NOTA.to_string() } else { label(i) };
        planted.push(PlantedImage {
            image_id: id,
            scene: Some(Scene::Outdoor),
            visibility: BTreeMap::from([
                ("ctl.visibility".to_string(), i < 49),
                ("ctl.nota_above".to_string(), true),
                ("ctl.nota_below".to_string(), true),
            ]),
            answers: BTreeMap::from([
                ("ctl.visibility".to_string(), vec![label(i)]),
                ("ctl.nota_above".to_string(), vec![pick(31)]),
                ("ctl.nota_below".to_string(), vec![pick(29)]),
            ]),
            ratings: RatingDimension::ALL.into_iter().map(|d| (d, (i % LEVELS) as u8 + 1)).collect(),
            ..PlantedImage::default()
        });
    }
    (
        Manifest::new(records).expect("control ids are unique"),
        catalog,
        PlantedTable::new(planted),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), [4, 3, 3]);
        assert_eq!(apportion(7, &[0.5, 0.25, 0.25]), [3, 2, 2]);
        assert_eq!(apportion(0, &[1.0, 2.0]), [0, 0]);
        assert_eq!(apportion(100, &[0.6, 0.25, 0.1, 0.04, 0.01]), [60, 25, 10, 4, 1]);
    }

    #[test]
    fn generation_is_deterministic_and_complete() {
        let spec = FixtureSpec {
            images_per_slice: 20,
            ..FixtureSpec::seeded(3)
        };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.manifest.digest(), b.manifest.digest());
        assert_eq!(a.planted, b.planted);
        assert_eq!(a.manifest.len(), 2 * 2 * 3 * 20);
        assert_eq!(a.manifest.slices().len(), 12);
        for p in a.planted.images() {
            assert!(p.scene.is_some());
            assert_eq!(p.ratings.len(), RatingDimension::ALL.len());
        }
        assert_ne!(generate(&FixtureSpec::seeded(4)).planted, generate(&FixtureSpec::seeded(3)).planted);
    }

    #[test]
    fn written_tree_is_relative() {
        let dir = tempfile::tempdir().unwrap();
        let f = generate(&FixtureSpec {
            images_per_slice: 5,
            ..FixtureSpec::default()
        });
        let files = f.write(dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("run.toml")));
        let backend = std::fs::read_to_string(dir.path().join("backend.toml")).unwrap();
        assert!(backend.contains("planted = \"planted.jsonl\""));
        assert!(!backend.contains(dir.path().to_str().unwrap()));
    }

    #[test]
    fn control_fixture_rates() {
        let (m, c, t) = control_fixture();
        assert_eq!(m.len(), 100);
        assert_eq!(c.questions.len(), 3);
        let count = |q: &str| t.images().filter(|p| p.answers[q] == [NOTA]).count();
        assert_eq!(count("ctl.nota_above"), 31);
        assert_eq!(count("ctl.nota_below"), 29);
        assert_eq!(t.images().filter(|p| p.visibility["ctl.visibility"]).count(), 49);
    }
}
