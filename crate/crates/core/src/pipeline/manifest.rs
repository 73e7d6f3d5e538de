use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::LossWeights;
use crate::morph::Connectivity;
use crate::records::ExportMode;
use crate::register::RegistrationConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub mri_path: PathBuf,
    pub ct_path: PathBuf,
    /// MRI weighting, used in record file names.
    #[serde(default = "default_modality")]
    pub modality: String,
    /// Half-open slice ranges `[lo, hi)` removed after cleaning.
    #[serde(default)]
    pub trim: Vec<[usize; 2]>,
    /// Synthesized CT on the prepared grid, compared by the evaluate stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_path: Option<PathBuf>,
}

fn default_modality() -> String {
    "T1".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub mode: ExportMode,
    pub stride: usize,
    pub min_foreground_fraction: f64,
    /// Transverse size after center pad/crop, `[height, width]`.
    pub target_hw: Option<[usize; 2]>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            mode: ExportMode::Patch3d,
            stride: 8,
            min_foreground_fraction: 0.0,
            target_hw: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub output_dir: PathBuf,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default)]
    pub registration: RegistrationConfig,
    /// CT foreground threshold; defaults to 10% above the minimum.
    #[serde(default)]
    pub clean_threshold: Option<f64>,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub patch: PatchConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Weight λ of the mask boost map `1 + λ·mask`; 0 disables it.
    #[serde(default)]
    pub boost_lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_index: Option<PathBuf>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads a manifest and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, super::PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::PipelineError::io(path, e))?;
        let mut m = Manifest::from_json(&text).map_err(|e| super::PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        m.resolve_relative(base);
        Ok(m)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for s in &mut self.subjects {
            fix(&mut s.mri_path);
            fix(&mut s.ct_path);
            if let Some(p) = &mut s.prediction_path {
                fix(p);
            }
        }
        if let Some(p) = &mut self.dataset_index {
            fix(p);
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), String> {
        if self.subjects.is_empty() {
            return Err("manifest lists no subjects".into());
        }
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for s in &self.subjects {
            if s.id.is_empty() || !s.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || s.id.starts_with('.') {
                return Err(format!("subject id {:?} must be non-empty [A-Za-z0-9._-]", s.id));
            }
            if !ids.insert(&s.id) {
                return Err(format!("duplicate subject id {:?}", s.id));
            }
            if s.mri_path == s.ct_path {
                return Err(format!("subject {:?}: MRI and CT paths are the same", s.id));
            }
            for p in [&s.mri_path, &s.ct_path] {
                if !paths.insert(p) {
                    return Err(format!("subject {:?}: {} is used more than once", s.id, p.display()));
                }
            }
            if s.modality.is_empty() || s.modality.contains(['/', '\\']) {
                return Err(format!("subject {:?}: invalid modality {:?}", s.id, s.modality));
            }
        }
        self.registration.validate().map_err(|e| e.to_string())?;
        self.loss_weights.validate().map_err(|e| e.to_string())?;
        if self.patch.stride == 0 {
            return Err("patch stride must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.patch.min_foreground_fraction) {
            return Err("min_foreground_fraction must be in [0, 1]".into());
        }
        if self.patch.target_hw.is_some_and(|[h, w]| h == 0 || w == 0) {
            return Err("target_hw extents must be positive".into());
        }
        if !(self.boost_lambda.is_finite() && self.boost_lambda >= 0.0) {
            return Err("boost_lambda must be finite and non-negative".into());
        }
        if self.clean_threshold.is_some_and(|t| !t.is_finite()) {
            return Err("clean_threshold must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "output_dir": "out",
        "subjects": [{"id": "s01", "mri_path": "s01/mr.mhd", "ct_path": "s01/ct.mhd", "trim": [[0, 4]]}]
    }"#;

    #[test]
    fn defaults_and_paths() {
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.validate().unwrap();
        assert_eq!(m.subjects[0].modality, "T1");
        assert_eq!(m.patch.mode, ExportMode::Patch3d);
        assert_eq!(m.registration, RegistrationConfig::default());
        m.resolve_relative(Path::new("/data"));
        assert_eq!(m.subjects[0].ct_path, Path::new("/data/s01/ct.mhd"));
        assert_eq!(m.output_dir, Path::new("/data/out"));
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(Manifest::from_json(r#"{"output_dir": "o", "subjects": [], "extra": 1}"#).is_err());
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.subjects.push(m.subjects[0].clone());
        assert!(m.validate().unwrap_err().contains("duplicate"));
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.subjects[0].id = "../x".into();
        assert!(m.validate().is_err());
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.registration.bins = 2;
        assert!(m.validate().is_err());
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.subjects[0].ct_path = m.subjects[0].mri_path.clone();
        assert!(m.validate().is_err());
    }
}
