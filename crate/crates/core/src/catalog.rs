//! Artifact libraries and intent/artifact benchmark pairs.
//!
//! Both are stored as UTF-8 JSON lines, one object per line:
//!
//! ```text
//! {"id": "a1", "name": "left-pad", "description": "...", "ecosystem": "npm", "extra": {"downloads": "12"}}
//! {"intent": "I need to pad strings", "target_id": "a1"}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate artifact id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: artifact {id:?} has an empty description")]
    EmptyDescription { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: target id {id:?} is not in the library")]
    UnresolvedTarget { path: PathBuf, line: usize, id: String },
    #[error("artifact library is empty")]
    EmptyLibrary,
}

/// One reusable unit: an npm package, a pretrained model, a package group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub ecosystem: String,
    /// Opaque metadata (download counts and the like). Never read by the
    /// ranking code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<BTreeMap<String, String>>,
}

impl Artifact {
    pub fn new(id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            ecosystem: String::new(),
            extra: None,
        }
    }

    /// Text used for matching: the description, optionally preceded by the name.
    pub fn text(&self, include_name: bool) -> String {
        if include_name {
            format!("{} {}", self.name, self.description)
        } else {
            self.description.clone()
        }
    }
}

/// The candidate pool a recommendation is drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactLibrary {
    ecosystem: String,
    artifacts: Vec<Artifact>,
    by_id: HashMap<String, usize>,
}

impl ArtifactLibrary {
    /// Validates and wraps a list of artifacts. Descriptions are trimmed.
    pub fn new(artifacts: Vec<Artifact>) -> Result<Self, CatalogError> {
        Self::validate(artifacts, Path::new("<memory>"), None)
    }

    fn validate(
        artifacts: Vec<Artifact>,
        path: &Path,
        lines: Option<&[usize]>,
    ) -> Result<Self, CatalogError> {
        if artifacts.is_empty() {
            return Err(CatalogError::EmptyLibrary);
        }
        let mut by_id = HashMap::with_capacity(artifacts.len());
        let mut out = Vec::with_capacity(artifacts.len());
        for (i, mut a) in artifacts.into_iter().enumerate() {
            let line = lines.map_or(i + 1, |l| l[i]);
            let trimmed = a.description.trim();
            if trimmed.is_empty() {
                return Err(CatalogError::EmptyDescription {
                    path: path.to_path_buf(),
                    line,
                    id: a.id,
                });
            }
            if trimmed.len() != a.description.len() {
                a.description = trimmed.to_string();
            }
            if by_id.insert(a.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId {
                    path: path.to_path_buf(),
                    line,
                    id: a.id,
                });
            }
            out.push(a);
        }
        let ecosystem = out[0].ecosystem.clone();
        Ok(Self {
            ecosystem,
            artifacts: out,
            by_id,
        })
    }

    pub fn ecosystem(&self) -> &str {
        &self.ecosystem
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Artifact> {
        self.by_id.get(id).map(|&i| &self.artifacts[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Artifact> {
        self.artifacts.iter()
    }
}

impl<'a> IntoIterator for &'a ArtifactLibrary {
    type Item = &'a Artifact;
    type IntoIter = std::slice::Iter<'a, Artifact>;

    fn into_iter(self) -> Self::IntoIter {
        self.artifacts.iter()
    }
}

/// A development intent paired with the artifact that satisfies it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSample {
    pub intent: String,
    pub target_id: String,
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CatalogError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads non-blank lines of a JSON-lines file, deserializing each one and
/// keeping its 1-based line number.
fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, CatalogError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CatalogError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn load_library(path: impl AsRef<Path>) -> Result<ArtifactLibrary, CatalogError> {
    let path = path.as_ref();
    let records: Vec<(usize, Artifact)> = read_records(path)?;
    let (lines, artifacts): (Vec<usize>, Vec<Artifact>) = records.into_iter().unzip();
    ArtifactLibrary::validate(artifacts, path, Some(&lines))
}

pub fn save_library(lib: &ArtifactLibrary, path: impl AsRef<Path>) -> Result<(), CatalogError> {
    let path = path.as_ref();
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for a in lib {
        let line = serde_json::to_string(a).expect("artifact serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Loads intent/target pairs and resolves every target against `lib`.
pub fn load_pairs(path: impl AsRef<Path>, lib: &ArtifactLibrary) -> Result<Vec<IntentSample>, CatalogError> {
    let path = path.as_ref();
    let records: Vec<(usize, IntentSample)> = read_records(path)?;
    if records.is_empty() {
        log::warn!("{}: no intent pairs found", path.display());
    }
    records
        .into_iter()
        .map(|(line, s)| {
            if lib.contains(&s.target_id) {
                Ok(s)
            } else {
                Err(CatalogError::UnresolvedTarget {
                    path: path.to_path_buf(),
                    line,
                    id: s.target_id,
                })
            }
        })
        .collect()
}

pub fn save_pairs(pairs: &[IntentSample], path: impl AsRef<Path>) -> Result<(), CatalogError> {
    let path = path.as_ref();
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for p in pairs {
        writeln!(w, "{}", serde_json::to_string(p).expect("pair serializes")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Description word-length statistics, laid out as Aver/Max/Min.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LibraryStats {
    pub count: usize,
    pub mean_words: f64,
    pub max_words: usize,
    pub min_words: usize,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn library_stats(lib: &ArtifactLibrary) -> Result<LibraryStats, CatalogError> {
    if lib.is_empty() {
        return Err(CatalogError::EmptyLibrary);
    }
    let counts: Vec<usize> = lib.iter().map(|a| word_count(&a.description)).collect();
    let total: usize = counts.iter().sum();
    Ok(LibraryStats {
        count: counts.len(),
        mean_words: total as f64 / counts.len() as f64,
        max_words: *counts.iter().max().unwrap(),
        min_words: *counts.iter().min().unwrap(),
    })
}
