//! Seeded synthetic phantoms: smoothed random blobs, a head-like CT/MRI pair
//! and random rigid perturbations.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formats::{write_mhd, FormatError};
use crate::pipeline::{Manifest, PatchConfig, SubjectEntry};
use crate::register::{resample, RigidTransform};
use crate::volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

struct Blob {
    center: [f64; 3],
    inv_two_sigma2: f64,
    amplitude: f64,
}

fn blobs(shape: Shape, count: usize, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let dims = [shape.width as f64, shape.height as f64, shape.depth as f64];
    let min_dim = dims.iter().copied().fold(f64::INFINITY, f64::min);
    (0..count)
        .map(|_| {
            let sigma = rng.random_range(0.05..0.14) * min_dim;
            Blob {
                center: [0, 1, 2].map(|a| rng.random_range(0.25..0.75) * dims[a]),
                inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                amplitude: rng.random_range(0.3..1.0),
            }
        })
        .collect()
}

/// Sum of Gaussian blobs placed in the middle half of each axis, scaled so
/// the maximum is 1000. Values fall smoothly to ~0 at the borders.
pub fn blob_volume(shape: Shape, count: usize, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = blobs(shape, count, &mut rng);
    let mut data = Vec::with_capacity(shape.len());
    for k in 0..shape.depth {
        for j in 0..shape.height {
            for i in 0..shape.width {
                let p = [i as f64, j as f64, k as f64];
                let v: f64 = bs
                    .iter()
                    .map(|b| {
                        let d2: f64 = (0..3).map(|a| (p[a] - b.center[a]).powi(2)).sum();
                        b.amplitude * (-d2 * b.inv_two_sigma2).exp()
                    })
                    .sum();
                data.push(v as f32);
            }
        }
    }
    let max = data.iter().copied().fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);
    data.iter_mut().for_each(|v| *v *= 1000.0 / max);
    Volume::from_f32(shape, Geometry::default(), data, IntensityDomain::Real).expect("valid phantom")
}

/// A second "modality": a non-monotonic remap of the intensities, so the
/// pair is related statistically but not linearly.
pub fn remap_modality(v: &Volume) -> Volume {
    let data: Vec<f32> = v
        .data()
        .to_f32_vec()
        .into_iter()
        .map(|x| {
            let t = x / 1000.0;
            (1000.0 * (t * (1.0 - t) * 3.2 + 0.2 * t)).max(0.0)
        })
        .collect();
    Volume::from_f32(v.shape(), *v.geometry(), data, IntensityDomain::Real).expect("same shape")
}

/// Random rigid transform with every translation component within
/// `±max_shift_mm` and every Euler angle within `±max_deg`, rotating about
/// the volume center.
pub fn random_rigid(rng: &mut impl Rng, max_shift_mm: f64, max_deg: f64, center: [f64; 3]) -> RigidTransform {
    let a = max_deg.to_radians();
    let angles = [0; 3].map(|_| rng.random_range(-a..=a));
    let t = [0; 3].map(|_| rng.random_range(-max_shift_mm..=max_shift_mm));
    RigidTransform::new(angles, t, center)
}

/// A head-like CT/MRI pair on a 16-bit scale: an ellipsoidal skull shell
/// around soft tissue with blob texture, plus a flat table slab under the
/// head spanning the full width (CT only, as on a scanner).
pub fn head_pair(shape: Shape, spacing: [f64; 3], seed: u64) -> (Volume, Volume) {
    let texture = blob_volume(shape, 10, seed).data().to_f32_vec();
    let (d, h, w) = (shape.depth as f64, shape.height as f64, shape.width as f64);
    let (cz, cy, cx) = (d / 2.0, h * 0.45, w / 2.0);
    let (rz, ry, rx) = (d * 0.4, h * 0.33, w * 0.38);
    let mut ct = Vec::with_capacity(shape.len());
    let mut mri = Vec::with_capacity(shape.len());
    for k in 0..shape.depth {
        for j in 0..shape.height {
            for i in 0..shape.width {
                let r = (((k as f64 - cz) / rz).powi(2) + ((j as f64 - cy) / ry).powi(2) + ((i as f64 - cx) / rx).powi(2)).sqrt();
                let tex = texture[shape.index(k, j, i)] as f64 / 1000.0;
                let (c, m) = if r < 0.85 {
                    (1000.0 + 80.0 * tex, 900.0 + 1500.0 * tex)
                } else if r < 1.0 {
                    (2400.0, 150.0)
                } else if j + 3 >= shape.height && j + 1 < shape.height {
                    (1800.0, 0.0)
                } else {
                    (0.0, 0.0)
                };
                ct.push(c as f32);
                mri.push(m as f32);
            }
        }
    }
    let geom = Geometry::with_spacing(spacing);
    let to_u16 = |v: Vec<f32>| crate::volume::VoxelData::U16(v.into_iter().map(|x| x.round() as u16).collect());
    let ct = Volume::new(shape, geom, to_u16(ct), IntensityDomain::Raw16).expect("valid phantom");
    let mri = Volume::new(shape, geom, to_u16(mri), IntensityDomain::Raw16).expect("valid phantom");
    (ct, mri)
}

/// Writes `count` synthetic subjects as MetaImage pairs under `dir`, the MRI
/// of each slightly misaligned, plus a `manifest.json` (relative paths,
/// output in `dir/out`). Returns the manifest with paths resolved.
pub fn write_demo_dataset(dir: &Path, count: usize, shape: Shape, seed: u64) -> Result<Manifest, FormatError> {
    let spacing = [1.0, 1.0, 1.5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(count);
    for n in 0..count {
        let id = format!("s{:02}", n + 1);
        let sub = PathBuf::from(&id);
        std::fs::create_dir_all(dir.join(&sub))?;
        let (ct, mri) = head_pair(shape, spacing, seed.wrapping_add(n as u64));
        let c = ct.geometry().center(shape);
        let t = random_rigid(&mut rng, 3.0, 3.0, [c.x, c.y, c.z]);
        let moved = resample(&mri, &t, &mri);
        let voxels = moved
            .to_f32_vec()
            .into_iter()
            .map(|x| x.round().clamp(0.0, 65535.0) as u16)
            .collect();
        let mri = mri.with_voxels(VoxelData::U16(voxels), IntensityDomain::Raw16)?;
        write_mhd(&ct, dir.join(&sub).join("ct.mhd"))?;
        write_mhd(&mri, dir.join(&sub).join("mr_T1.mhd"))?;
        let trim = if shape.depth > 4 {
            vec![[0, 1], [shape.depth - 1, shape.depth]]
        } else {
            Vec::new()
        };
        subjects.push(SubjectEntry {
            id,
            mri_path: sub.join("mr_T1.mhd"),
            ct_path: sub.join("ct.mhd"),
            modality: "T1".into(),
            trim,
            prediction_path: None,
        });
    }
    let manifest = Manifest {
        output_dir: "out".into(),
        subjects,
        registration: Default::default(),
        clean_threshold: None,
        connectivity: Default::default(),
        patch: PatchConfig::default(),
        loss_weights: Default::default(),
        boost_lambda: 0.0,
        dataset_index: None,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), text)?;
    let mut resolved = manifest;
    resolved.resolve_relative(dir);
    Ok(resolved)
}
