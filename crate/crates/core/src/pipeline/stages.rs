use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{run_stamped, Manifest, Stage, StageError, StageJob, SubjectEntry};
use crate::formats::{mhd, read_volume, write_nifti};
use crate::metrics::{self, combined_loss, EvalReport, GradientRule, Grid};
use crate::morph::{clean_ct, default_threshold, trim_slices};
use crate::patch::{extract_pairs, make_boost_weights, target_cube, ExtractOptions};
use crate::records::{self, write_dataset, DatasetHeader, ExportMode, PairExample};
use crate::register::{register, resample, RegistrationResult};
use crate::volume::{minmax_normalize, pad_or_crop, IntensityDomain, Volume, RAW16_MAX};

pub fn subject_dir(m: &Manifest, id: &str) -> PathBuf {
    m.output_dir.join(id)
}

/// Files a subject's stages read and write, relative to the output
/// directory.
#[derive(Clone, Debug)]
pub struct SubjectPaths {
    pub dir: PathBuf,
    pub mri: PathBuf,
    pub ct: PathBuf,
    pub transform: PathBuf,
    pub mri_registered: PathBuf,
    pub ct_clean: PathBuf,
    pub mask: PathBuf,
    pub mri_clean: PathBuf,
    pub mri_prep: PathBuf,
    pub ct_prep: PathBuf,
    pub mask_prep: PathBuf,
    pub boost: PathBuf,
    pub patches: PathBuf,
    pub records: PathBuf,
}

impl SubjectPaths {
    pub fn new(m: &Manifest, s: &SubjectEntry) -> Self {
        let dir = subject_dir(m, &s.id);
        let f = |name: &str| dir.join(name);
        SubjectPaths {
            mri: f("mri.nii"),
            ct: f("ct.nii"),
            transform: f("transform.json"),
            mri_registered: f("mri_registered.nii"),
            ct_clean: f("ct_clean.nii"),
            mask: f("mask.nii"),
            mri_clean: f("mri_clean.nii"),
            mri_prep: f("mri_prep.nii"),
            ct_prep: f("ct_prep.nii"),
            mask_prep: f("mask_prep.nii"),
            boost: f("boost.nii"),
            patches: f("patches.json"),
            records: m
                .output_dir
                .join("records")
                .join(records::record_file_name(&s.id, &s.modality)),
            dir,
        }
    }
}

/// Summary of the prepared training samples, written by the patch stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub mode: ExportMode,
    /// Prepared grid, `[depth, height, width]`.
    pub shape: [usize; 3],
    pub stride: usize,
    pub samples: usize,
    /// Target anchors `(k, j, i)` in 3D mode; empty in 2D mode.
    #[serde(default)]
    pub anchors: Vec<[usize; 3]>,
}

fn load(path: &Path) -> Result<Volume, StageError> {
    if !path.is_file() {
        return Err(StageError::MissingInput(path.to_path_buf()));
    }
    Ok(read_volume(path)?)
}

fn save(v: &Volume, path: &Path) -> Result<PathBuf, StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| StageError::io(parent, e))?;
    }
    write_nifti(v, path)?;
    Ok(path.to_path_buf())
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf, StageError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| StageError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => StageError::MissingInput(path.to_path_buf()),
        _ => StageError::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| StageError::Internal(format!("{}: {e}", path.display())))
}

/// A source volume plus its detached data file, if any.
fn source_files(path: &Path) -> Result<Vec<PathBuf>, StageError> {
    let mut files = vec![path.to_path_buf()];
    if matches!(path.extension().and_then(|e| e.to_str()), Some("mhd")) {
        let bytes = std::fs::read(path).map_err(|e| StageError::io(path, e))?;
        let (header, _) = mhd::parse_header(&bytes).map_err(StageError::Format)?;
        if let mhd::ElementDataFile::File(name) = header.element_data_file {
            let data = path.parent().unwrap_or(Path::new("")).join(name);
            // a broken source set is an I/O failure, not a stage ordering one
            std::fs::metadata(&data).map_err(|e| StageError::io(&data, e))?;
            files.push(data);
        }
    }
    Ok(files)
}

fn extract_options(m: &Manifest) -> ExtractOptions {
    ExtractOptions {
        stride: m.patch.stride,
        min_foreground_fraction: m.patch.min_foreground_fraction,
    }
}

pub(crate) fn run_subject_stage(m: &Manifest, s: &SubjectEntry, stage: Stage, force: bool) -> Result<bool, StageError> {
    let p = SubjectPaths::new(m, s);
    std::fs::create_dir_all(&p.dir).map_err(|e| StageError::io(&p.dir, e))?;
    let job = match stage {
        Stage::Convert => {
            let mut inputs = source_files(&s.mri_path)?;
            inputs.extend(source_files(&s.ct_path)?);
            StageJob {
                stage,
                root: m.output_dir.clone(),
                dir: p.dir.clone(),
                inputs,
                params: json!({}),
                run: Box::new(|| Ok(vec![save(&load(&s.mri_path)?, &p.mri)?, save(&load(&s.ct_path)?, &p.ct)?])),
            }
        }
        Stage::Register => StageJob {
            stage,
            root: m.output_dir.clone(),
            dir: p.dir.clone(),
            inputs: vec![p.mri.clone(), p.ct.clone()],
            params: serde_json::to_value(&m.registration).expect("serializable"),
            run: Box::new(|| {
                let (ct, mri) = (load(&p.ct)?, load(&p.mri)?);
                // CT is the fixed volume; MRI moves onto its grid.
                let result: RegistrationResult = register(&ct, &mri, &m.registration)?;
                if result.warning.is_some() {
                    log::warn!("{}: registration kept the identity transform", s.id);
                }
                let moved = resample(&mri, &result.transform, &ct);
                Ok(vec![save_json(&result, &p.transform)?, save(&moved, &p.mri_registered)?])
            }),
        },
        Stage::Clean => StageJob {
            stage,
            root: m.output_dir.clone(),
            dir: p.dir.clone(),
            inputs: vec![p.ct.clone(), p.mri_registered.clone()],
            params: json!({
                "threshold": m.clean_threshold,
                "connectivity": m.connectivity,
                "trim": s.trim,
            }),
            run: Box::new(|| {
                let ct = load(&p.ct)?;
                let threshold = m.clean_threshold.unwrap_or_else(|| default_threshold(&ct));
                let (cleaned, mask) = clean_ct(&ct, threshold, m.connectivity)?;
                let mri = load(&p.mri_registered)?;
                Ok(vec![
                    save(&trim_slices(&cleaned, &s.trim)?, &p.ct_clean)?,
                    save(&trim_slices(&mask, &s.trim)?, &p.mask)?,
                    save(&trim_slices(&mri, &s.trim)?, &p.mri_clean)?,
                ])
            }),
        },
        Stage::Patch => StageJob {
            stage,
            root: m.output_dir.clone(),
            dir: p.dir.clone(),
            inputs: vec![p.mri_clean.clone(), p.ct_clean.clone(), p.mask.clone()],
            params: json!({ "patch": m.patch, "boost_lambda": m.boost_lambda }),
            run: Box::new(|| {
                let fit = |v: Volume| -> Result<Volume, StageError> {
                    Ok(match m.patch.target_hw {
                        Some([h, w]) => pad_or_crop(&v, (h, w))?,
                        None => v,
                    })
                };
                let mri = fit(minmax_normalize(&load(&p.mri_clean)?))?;
                let ct = fit(minmax_normalize(&load(&p.ct_clean)?))?;
                let mask = fit(load(&p.mask)?)?;
                let shape = ct.shape();
                let plan = match m.patch.mode {
                    ExportMode::Slice2d => PatchPlan {
                        mode: m.patch.mode,
                        shape: shape.dims(),
                        stride: 1,
                        samples: shape.depth,
                        anchors: Vec::new(),
                    },
                    ExportMode::Patch3d => {
                        let anchors: Vec<[usize; 3]> =
                            extract_pairs(&mri, &ct, &extract_options(m))?.map(|pp| pp.anchor).collect();
                        PatchPlan {
                            mode: m.patch.mode,
                            shape: shape.dims(),
                            stride: m.patch.stride,
                            samples: anchors.len(),
                            anchors,
                        }
                    }
                };
                let mut out = vec![save(&mri, &p.mri_prep)?, save(&ct, &p.ct_prep)?, save(&mask, &p.mask_prep)?];
                if m.boost_lambda > 0.0 {
                    let boost = make_boost_weights(&mask, m.boost_lambda)?;
                    out.push(save(&boost.to_volume(ct.geometry()), &p.boost)?);
                }
                out.push(save_json(&plan, &p.patches)?);
                Ok(out)
            }),
        },
        Stage::Export => {
            let mut inputs = vec![p.mri_prep.clone(), p.ct_prep.clone(), p.patches.clone()];
            if m.boost_lambda > 0.0 {
                inputs.push(p.boost.clone());
            }
            StageJob {
                stage,
                root: m.output_dir.clone(),
                dir: p.dir.clone(),
                inputs,
                params: json!({ "modality": s.modality }),
                run: Box::new(|| {
                    let plan: PatchPlan = read_json(&p.patches)?;
                    let (mri, ct) = (load(&p.mri_prep)?, load(&p.ct_prep)?);
                    let boost = if m.boost_lambda > 0.0 {
                        Some(load(&p.boost)?.to_f32_vec())
                    } else {
                        None
                    };
                    let pairs = export_pairs(&plan, &mri, &ct, boost.as_deref())?;
                    let header = DatasetHeader {
                        mode: plan.mode,
                        subject: s.id.clone(),
                        modality: s.modality.clone(),
                    };
                    let dir = p.records.parent().expect("records dir");
                    std::fs::create_dir_all(dir).map_err(|e| StageError::io(dir, e))?;
                    write_dataset(&p.records, &header, &pairs)?;
                    Ok(vec![p.records.clone()])
                }),
            }
        }
        Stage::Evaluate => return Err(StageError::Internal("evaluate is not a per-subject stage".into())),
    };
    run_stamped(job, force)
}

fn export_pairs(plan: &PatchPlan, mri: &Volume, ct: &Volume, boost: Option<&[f32]>) -> Result<Vec<PairExample>, StageError> {
    let shape = ct.shape();
    if shape.dims() != plan.shape || mri.shape() != shape {
        return Err(StageError::Internal(format!(
            "prepared volumes ({}, {}) do not match the patch plan {:?}",
            mri.shape(),
            shape,
            plan.shape
        )));
    }
    let mut pairs = match plan.mode {
        ExportMode::Slice2d => records::slice_pairs(mri, ct)?,
        ExportMode::Patch3d => {
            let opts = ExtractOptions {
                stride: plan.stride,
                min_foreground_fraction: 0.0,
            };
            let wanted: std::collections::HashSet<[usize; 3]> = plan.anchors.iter().copied().collect();
            extract_pairs(mri, ct, &opts)?
                .filter(|pp| wanted.contains(&pp.anchor))
                .map(|pp| PairExample::from_patch(&pp))
                .collect()
        }
    };
    if pairs.len() != plan.samples {
        return Err(StageError::Internal(format!(
            "expected {} samples, extracted {}",
            plan.samples,
            pairs.len()
        )));
    }
    if let Some(w) = boost {
        let plane = shape.height * shape.width;
        for pair in &mut pairs {
            pair.weight = Some(match pair.anchor.as_deref() {
                Some(&[k]) => w[k * plane..(k + 1) * plane].to_vec(),
                Some(&[k, j, i]) => target_cube(w, shape, [k, j, i]),
                _ => return Err(StageError::Internal("sample without anchor".into())),
            });
        }
    }
    Ok(pairs)
}

/// Evaluates every subject that lists a prediction. Returns `None` when no
/// subject has one.
pub(crate) fn run_evaluate(m: &Manifest, force: bool) -> Result<Option<bool>, StageError> {
    let subjects: Vec<(&SubjectEntry, &PathBuf)> = m
        .subjects
        .iter()
        .filter_map(|s| s.prediction_path.as_ref().map(|p| (s, p)))
        .collect();
    if subjects.is_empty() {
        log::info!("evaluate: no subject lists a prediction_path; nothing to do");
        return Ok(None);
    }
    let mut inputs = Vec::new();
    for (s, pred) in &subjects {
        inputs.push((*pred).clone());
        inputs.push(SubjectPaths::new(m, s).ct_prep);
    }
    let json_path = m.output_dir.join("report.json");
    let text_path = m.output_dir.join("report.txt");
    let job = StageJob {
        stage: Stage::Evaluate,
        root: m.output_dir.clone(),
        dir: m.output_dir.clone(),
        inputs,
        params: json!({ "loss_weights": m.loss_weights }),
        run: Box::new(|| {
            let mut per_volume = Vec::new();
            for (s, pred_path) in &subjects {
                let truth = load(&SubjectPaths::new(m, s).ct_prep)?;
                let mut pred = load(pred_path)?;
                // A bare [0, 1] prediction is read on the truth's intensity scale.
                if pred.domain() == IntensityDomain::Unit && pred.source_range().is_none() {
                    pred = pred.with_source_range(truth.source_range());
                }
                let mut vm = metrics::evaluate(&s.id, &pred, &truth, RAW16_MAX)?;
                let w = &m.loss_weights;
                if w.lambda_mae + w.lambda_mse + w.lambda_gdl > 0.0 {
                    let dims = truth.shape().dims();
                    let (x, y) = (pred.raw_scale_values(), truth.raw_scale_values());
                    let loss = combined_loss(Grid::new(&x, &dims)?, Grid::new(&y, &dims)?, w, GradientRule::InteriorOnly)?;
                    vm.combined_loss = Some(loss);
                }
                per_volume.push(vm);
            }
            let report = EvalReport::new(per_volume, RAW16_MAX)?;
            std::fs::write(&json_path, report.to_json() + "\n").map_err(|e| StageError::io(&json_path, e))?;
            std::fs::write(&text_path, report.to_table()).map_err(|e| StageError::io(&text_path, e))?;
            Ok(vec![json_path.clone(), text_path.clone()])
        }),
    };
    run_stamped(job, force).map(Some)
}
