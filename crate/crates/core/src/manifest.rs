//! Image manifests: one JSON record per line describing a generated (or real)
//! image and the (dataset, entity, country) slice it belongs to.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub entity: String,
    pub country: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ImageRecord {
    pub fn slice_key(&self) -> SliceKey {
        SliceKey {
            dataset: self.dataset.clone(),
            entity: self.entity.clone(),
            country: self.country.clone(),
        }
    }
}

/// Identifies the image subset for one entity and country within one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceKey {
    pub dataset: String,
    pub entity: String,
    pub country: String,
}

impl SliceKey {
    pub fn new(dataset: impl Into<String>, entity: impl Into<String>, country: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            entity: entity.into(),
            country: country.into(),
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.dataset, self.entity, self.country)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    records: Vec<ImageRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self, ManifestError> {
        let mut ids = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            for (field, value) in [
                ("image_id", &r.image_id),
                ("entity", &r.entity),
                ("country", &r.country),
                ("dataset", &r.dataset),
            ] {
                if value.trim().is_empty() {
                    return Err(ManifestError::Parse {
                        line: i + 1,
                        message: format!("`{field}` must be nonempty"),
                    });
                }
            }
            if !ids.insert(r.image_id.as_str()) {
                return Err(ManifestError::DuplicateImage(r.image_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, ManifestError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|source| ManifestError::Io {
                path: "<manifest>".into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Self::new(records)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let io = |source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out).map_err(io)?;
        out.flush().map_err(io)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Slices in key order; images keep manifest order within a slice.
    pub fn slices(&self) -> BTreeMap<SliceKey, Vec<&ImageRecord>> {
        let mut slices: BTreeMap<SliceKey, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &self.records {
            slices.entry(r.slice_key()).or_default().push(r);
        }
        slices
    }

    pub fn entities(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.entity.as_str()).collect()
    }

    pub fn countries(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.country.as_str()).collect()
    }

    pub fn datasets(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.dataset.as_str()).collect()
    }

    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{"image_id":"a","uri":"img/a.png","entity":"house","country":"India","dataset":"SD2.1"}

{"image_id":"b","uri":"img/b.png","entity":"house","country":"Egypt","dataset":"SD2.1","seed":4}
{"image_id":"c","uri":"img/c.png","entity":"house","country":"India","dataset":"SD2.1"}
"#;

    #[test]
    fn parses_and_slices() {
        let m = Manifest::from_reader(DOC.as_bytes()).unwrap();
        assert_eq!(m.len(), 3);
        let slices = m.slices();
        let india = &slices[&SliceKey::new("SD2.1", "house", "India")];
        assert_eq!(india.iter().map(|r| r.image_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(m.get("b").unwrap().seed, Some(4));
    }

    #[test]
    fn rejects_duplicates_and_bad_lines() {
        let dup = format!("{}\n{}", DOC.lines().next().unwrap(), DOC.lines().next().unwrap());
        assert!(matches!(
            Manifest::from_reader(dup.as_bytes()),
            Err(ManifestError::DuplicateImage(id)) if id == "a"
        ));
        assert!(matches!(
            Manifest::from_reader("{\"image_id\": 3}".as_bytes()),
            Err(ManifestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trips_through_jsonl() {
        let m = Manifest::from_reader(DOC.as_bytes()).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(Manifest::from_reader(buf.as_slice()).unwrap(), m);
    }
}
