//! JSON case manifest.
//!
//! ```json
//! {"cases": [{"id": "case000", "volume": "case000_t2.nii.gz",
//!             "labels": "case000_labels.nii.gz", "lesion_mask": null,
//!             "grade": null, "split": "train", "diagnosis": "NotGMH-IVH"}]}
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PapileGrade {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "validation-internal")]
    ValidationInternal,
    #[serde(rename = "validation-external")]
    ValidationExternal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "GMH-IVH")]
    GmhIvh,
    #[serde(rename = "NotGMH-IVH")]
    NotGmhIvh,
}

impl Diagnosis {
    pub fn is_positive(self) -> bool {
        self == Diagnosis::GmhIvh
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::GmhIvh => "GMH-IVH",
            Diagnosis::NotGmhIvh => "NotGMH-IVH",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One fetus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub volume: PathBuf,
    pub labels: PathBuf,
    pub lesion_mask: Option<PathBuf>,
    pub grade: Option<PapileGrade>,
    pub split: Split,
    pub diagnosis: Diagnosis,
}

impl CaseRecord {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Manifest("case with empty id".into()));
        }
        if self.lesion_mask.is_some() && !self.diagnosis.is_positive() {
            return Err(Error::Manifest(format!(
                "case {} has a lesion mask but is not diagnosed GMH-IVH",
                self.id
            )));
        }
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        let paths = [Some(&self.volume), Some(&self.labels), self.lesion_mask.as_ref()];
        for p in paths.into_iter().flatten() {
            fs::File::open(p).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CaseRecord>,
}

impl Manifest {
    /// Parses a manifest, resolves relative paths and checks that every
    /// referenced file is readable.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = std::collections::HashSet::new();
        for case in &mut manifest.cases {
            case.validate()?;
            if !seen.insert(case.id.clone()) {
                return Err(Error::Manifest(format!("duplicate case id {}", case.id)));
            }
            case.volume = base.join(&case.volume);
            case.labels = base.join(&case.labels);
            if let Some(m) = case.lesion_mask.as_mut() {
                *m = base.join(&*m);
            }
            case.check_files()?;
        }
        Ok(manifest)
    }

    /// Writes the manifest as pretty JSON; paths are written as given.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        for case in &self.cases {
            case.validate()?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.id == id)
    }
}
