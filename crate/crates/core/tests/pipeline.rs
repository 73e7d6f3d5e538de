use std::path::Path;

use voxelforge::formats::read_nifti;
use voxelforge::pipeline::{self, ErrorClass, RunOptions, Stage};
use voxelforge::records::{read_dataset, stack_slices, ExportMode};
use voxelforge::synth::write_demo_dataset;
use voxelforge::{IntensityDomain, Shape};

fn opts(stage: Option<Stage>) -> RunOptions {
    RunOptions {
        jobs: 2,
        stage,
        force: false,
    }
}

#[test]
fn slice_records_restack_to_prepared_volumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = write_demo_dataset(tmp.path(), 2, Shape::new(10, 36, 40), 3).unwrap();
    m.patch.mode = ExportMode::Slice2d;
    m.patch.target_hw = Some([32, 48]);
    let summary = pipeline::run(&m, &opts(None)).unwrap();
    assert_eq!(summary.ran(), 10);

    for s in &m.subjects {
        let dir = m.output_dir.join(&s.id);
        let mri = read_nifti(dir.join("mri_prep.nii")).unwrap();
        let ct = read_nifti(dir.join("ct_prep.nii")).unwrap();
        assert_eq!(mri.shape(), Shape::new(8, 32, 48));
        assert_eq!(mri.domain(), IntensityDomain::Unit);
        let (lo, hi) = ct.data().min_max().unwrap();
        assert_eq!((lo, hi), (0.0, 1.0));

        let (header, pairs) = read_dataset(&m.output_dir.join("records").join(format!("{}-T1.tfrecord", s.id))).unwrap();
        assert_eq!(header.mode, ExportMode::Slice2d);
        assert_eq!(header.modality, "T1");
        let (shape, input, target) = stack_slices(&pairs).unwrap();
        assert_eq!(shape, mri.shape());
        assert_eq!(input, mri.to_f32_vec());
        assert_eq!(target, ct.to_f32_vec());
    }
}

#[test]
fn registration_undoes_the_synthetic_misalignment() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_demo_dataset(tmp.path(), 1, Shape::new(36, 48, 48), 11).unwrap();
    pipeline::run(&m, &opts(Some(Stage::Convert))).unwrap();
    pipeline::run(&m, &opts(Some(Stage::Register))).unwrap();
    let dir = m.output_dir.join("s01");
    let ct = read_nifti(dir.join("ct.nii")).unwrap();
    let before = read_nifti(dir.join("mri.nii")).unwrap();
    let after = read_nifti(dir.join("mri_registered.nii")).unwrap();
    assert_eq!(after.shape(), ct.shape());
    // MI with the CT must go up once the MRI is aligned
    let mi = |v| voxelforge::register::mutual_information(&ct, v, 64).unwrap();
    assert!(mi(&after) > mi(&before) + 0.05, "{} -> {}", mi(&before), mi(&after));
}

#[test]
fn later_stage_without_earlier_outputs_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_demo_dataset(tmp.path(), 1, Shape::new(8, 32, 32), 1).unwrap();
    let err = pipeline::run(&m, &opts(Some(Stage::Clean))).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Validation);
    assert_eq!(err.exit_code(), 1);
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_noops_and_forced_runs_reproduce_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = write_demo_dataset(tmp.path(), 2, Shape::new(8, 32, 32), 5).unwrap();
    m.patch.mode = ExportMode::Slice2d;
    pipeline::run(&m, &opts(None)).unwrap();
    let first = snapshot(&m.output_dir);
    let again = pipeline::run(&m, &opts(None)).unwrap();
    assert_eq!(again.ran(), 0);
    assert_eq!(snapshot(&m.output_dir), first);
    let forced = pipeline::run(
        &m,
        &RunOptions {
            jobs: 1,
            stage: None,
            force: true,
        },
    )
    .unwrap();
    assert_eq!(forced.ran(), 10);
    assert_eq!(snapshot(&m.output_dir), first);
}
