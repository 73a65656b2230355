//! Persistent parameter catalog, calibration and performance profiles.
//!
//! A store is a directory holding one human-editable JSON document per
//! profile, `<dir>/<profile_key>.json`. Writes go through a temporary file
//! and a rename while holding an advisory lock on `<dir>/.<profile_key>.lock`,
//! so readers never observe a half-written record.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entity::EntityPair;
use crate::kernel::params::{self, ParamError, ParamValue, ParameterTree};
use crate::knowledge::KnowledgeEntry;
use crate::tune::{Overrides, TuneOutcome};
use crate::TOOLCHAIN_VERSION;

/// Profile name reported when calibration falls back to the defaults.
pub const DEFAULT_PROFILE: &str = "default";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("invalid catalog record: {0}")]
    InvalidRecord(String),
    #[error("profile `{0}` not found")]
    ProfileNotFound(String),
    #[error("catalog file {path} is corrupt: {message}")]
    StoreCorrupt { path: String, message: String },
    #[error("catalog i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown performance profile `{0}` (expected accuracy, fast or cheap)")]
    UnknownProfile(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub profile_key: String,
    pub overrides: Overrides,
    pub rules: Vec<KnowledgeEntry>,
    pub experiences: Vec<KnowledgeEntry>,
    pub score: Option<f64>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub toolchain_version: String,
    /// Sorted attribute names of the data the profile was tuned on.
    #[serde(default)]
    pub signature: Vec<String>,
}

impl CatalogRecord {
    pub fn new(profile_key: impl Into<String>) -> Self {
        let now = Utc::now().trunc_subsecs(0);
        Self {
            profile_key: profile_key.into(),
            overrides: Overrides::new(),
            rules: Vec::new(),
            experiences: Vec::new(),
            score: None,
            created_at: now,
            updated_at: now,
            toolchain_version: TOOLCHAIN_VERSION.to_string(),
            signature: Vec::new(),
        }
    }

    /// Record holding a tuning outcome: best overrides, learned knowledge and score.
    pub fn from_outcome(profile_key: impl Into<String>, outcome: &TuneOutcome) -> Self {
        Self {
            overrides: outcome.best_overrides.clone(),
            rules: outcome.rules.clone(),
            experiences: outcome.experiences.clone(),
            score: Some(outcome.best_score),
            ..Self::new(profile_key)
        }
    }

    pub fn with_signature<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        self.signature = set.into_iter().collect();
        self
    }

    /// Rules followed by experiences.
    pub fn knowledge(&self) -> Vec<KnowledgeEntry> {
        self.rules.iter().chain(&self.experiences).cloned().collect()
    }

    /// Checks the key and that every override is accepted by `tree`.
    pub fn validate(&self, tree: &ParameterTree) -> Result<(), CatalogError> {
        validate_key(&self.profile_key)?;
        canonical_overrides(tree, &self.overrides).map_err(|e| CatalogError::InvalidRecord(e.to_string()))?;
        Ok(())
    }
}

/// Overrides as `tree` stores them; e.g. a string read back from JSON becomes
/// a choice again when the path is a choice parameter.
pub fn canonical_overrides(tree: &ParameterTree, overrides: &Overrides) -> Result<Overrides, ParamError> {
    overrides
        .iter()
        .map(|(path, value)| {
            let stored = tree.set(path, value.clone())?;
            Ok((path.clone(), stored.get(path)?.clone()))
        })
        .collect()
}

/// Keys double as file names: ASCII letters, digits, `-`, `_` and `.`, not
/// starting with a dot.
pub fn validate_key(key: &str) -> Result<(), CatalogError> {
    let ok = !key.is_empty()
        && !key.starts_with('.')
        && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CatalogError::InvalidRecord(format!(
            "profile key {key:?} must be non-empty and use only letters, digits, '-', '_' or '.'"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogStore {
    dir: PathBuf,
}

impl CatalogStore {
    /// A store rooted at `dir`. The directory is created on first save.
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CatalogError + '_ {
        move |e| CatalogError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Inserts or replaces the record under its key. `created_at` of an
    /// existing record is kept and `updated_at` moves strictly forward (by at
    /// least one second). Returns the record as stored.
    pub fn save(&self, record: &CatalogRecord) -> Result<CatalogRecord, CatalogError> {
        record.validate(&ParameterTree::defaults())?;
        let key = &record.profile_key;
        fs::create_dir_all(&self.dir).map_err(Self::io_err(&self.dir))?;
        let lock_path = self.dir.join(format!(".{key}.lock"));
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(Self::io_err(&lock_path))?;
        lock.lock().map_err(Self::io_err(&lock_path))?;

        let now = Utc::now().trunc_subsecs(0);
        let mut stored = record.clone();
        stored.overrides = canonical_overrides(&ParameterTree::defaults(), &record.overrides)?;
        stored.toolchain_version = TOOLCHAIN_VERSION.to_string();
        stored.updated_at = now;
        match self.load(key) {
            Ok(previous) => {
                stored.created_at = previous.created_at;
                if stored.updated_at <= previous.updated_at {
                    stored.updated_at = previous.updated_at + TimeDelta::seconds(1);
                }
            }
            Err(CatalogError::ProfileNotFound(_)) => {
                stored.created_at = stored.created_at.trunc_subsecs(0).min(now);
            }
            Err(e) => return Err(e),
        }

        let path = self.path_of(key);
        let tmp = self.dir.join(format!(".{key}.json.tmp"));
        let body = serde_json::to_string_pretty(&stored).expect("record serializes");
        let mut file = File::create(&tmp).map_err(Self::io_err(&tmp))?;
        file.write_all(body.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .and_then(|_| file.sync_all())
            .map_err(Self::io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(Self::io_err(&path))?;
        drop(lock);
        Ok(stored)
    }

    pub fn load(&self, key: &str) -> Result<CatalogRecord, CatalogError> {
        validate_key(key).map_err(|_| CatalogError::ProfileNotFound(key.into()))?;
        let path = self.path_of(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CatalogError::ProfileNotFound(key.into()));
            }
            Err(e) => return Err(Self::io_err(&path)(e)),
        };
        let corrupt = |message: String| CatalogError::StoreCorrupt {
            path: path.display().to_string(),
            message,
        };
        let mut record: CatalogRecord = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        record.overrides =
            canonical_overrides(&ParameterTree::defaults(), &record.overrides).map_err(|e| corrupt(e.to_string()))?;
        if record.profile_key != key {
            return Err(corrupt(format!("file holds profile `{}`", record.profile_key)));
        }
        if record.toolchain_version != TOOLCHAIN_VERSION {
            tracing::warn!(
                profile = key,
                stored = %record.toolchain_version,
                current = TOOLCHAIN_VERSION,
                "catalog record was written by a different toolchain version"
            );
        }
        Ok(record)
    }

    /// All profile keys, sorted. A missing directory is an empty store.
    pub fn list_profiles(&self) -> Result<Vec<String>, CatalogError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Self::io_err(&self.dir)(e)),
        };
        let mut keys = Vec::new();
        for entry in entries {
            let entry = entry.map_err(Self::io_err(&self.dir))?;
            let name = entry.file_name();
            let Some(key) = name.to_str().and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            if validate_key(key).is_ok() {
                keys.push(key.to_string());
            }
        }
        keys.sort();
        Ok(keys)
    }

    /// Every record, in key order.
    pub fn snapshot(&self) -> Result<Vec<CatalogRecord>, CatalogError> {
        self.list_profiles()?.iter().map(|k| self.load(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub tree: ParameterTree,
    pub knowledge: Vec<KnowledgeEntry>,
    pub chosen_profile: String,
}

/// Attribute names over every record of `pairs`, sorted.
pub fn sample_signature(pairs: &[EntityPair]) -> Vec<String> {
    let set: BTreeSet<String> = pairs.iter().flat_map(EntityPair::attribute_signature).collect();
    set.into_iter().collect()
}

/// Picks the profile a run uses: the `hint` when given (it must exist), else
/// the first profile (in key order) whose signature equals the attribute
/// names of `sample`, else the defaults with no knowledge. Reads the store
/// once and never writes to it.
pub fn calibrate(
    store: &CatalogStore,
    defaults: &ParameterTree,
    hint: Option<&str>,
    sample: Option<&[EntityPair]>,
) -> Result<Calibration, CatalogError> {
    let chosen = if let Some(key) = hint {
        Some(store.load(key)?)
    } else if let Some(sample) = sample.filter(|s| !s.is_empty()) {
        let wanted = sample_signature(sample);
        store.snapshot()?.into_iter().find(|r| r.signature == wanted)
    } else {
        None
    };
    match chosen {
        Some(record) => Ok(Calibration {
            tree: defaults.with_overrides(&record.overrides)?,
            knowledge: record.knowledge(),
            chosen_profile: record.profile_key,
        }),
        None => Ok(Calibration {
            tree: defaults.clone(),
            knowledge: Vec::new(),
            chosen_profile: DEFAULT_PROFILE.into(),
        }),
    }
}

/// Named cost/quality trade-offs applied on top of calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceProfile {
    Accuracy,
    Fast,
    Cheap,
}

impl PerformanceProfile {
    pub const ALL: [PerformanceProfile; 3] = [Self::Accuracy, Self::Fast, Self::Cheap];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Fast => "fast",
            Self::Cheap => "cheap",
        }
    }

    pub fn overrides(self) -> Overrides {
        let pairs: Vec<(&str, ParamValue)> = match self {
            Self::Accuracy => vec![
                (params::PREPARE_SCHEMA, true.into()),
                (params::MATCH_COT, true.into()),
                (params::MATCH_BROWSE, true.into()),
            ],
            Self::Fast => vec![(params::MATCH_BROWSE, false.into()), (params::MATCH_COT, false.into())],
            Self::Cheap => vec![
                (params::MATCH_BROWSE, false.into()),
                (params::MATCH_COT, false.into()),
                (params::MATCH_MAX_TOOL_ROUNDS, 1.0.into()),
            ],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

impl FromStr for PerformanceProfile {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, CatalogError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CatalogError::UnknownProfile(s.into()))
    }
}

pub fn apply_profile(tree: &ParameterTree, profile: PerformanceProfile) -> Result<ParameterTree, CatalogError> {
    Ok(tree.with_overrides(&profile.overrides())?)
}

/// [`apply_profile`] by name.
pub fn apply_profile_named(tree: &ParameterTree, name: &str) -> Result<ParameterTree, CatalogError> {
    apply_profile(tree, name.parse()?)
}
