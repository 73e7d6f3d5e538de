//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::io::Cursor;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxelforge::formats::{read_nifti, write_nifti};
use voxelforge::metrics::{
    adversarial_lsq, adversarial_minmax, combined_loss, gdl, mae, mse, psnr, psnr_from_mse, EvalReport, GradientRule, Grid,
    LeastSquaresForm, LossWeights, VolumeMetrics,
};
use voxelforge::morph::{fill_holes_grid, trim_slices, Connectivity, TrimManifest};
use voxelforge::netshape::{builtin_tables, verify_table};
use voxelforge::patch::{aggregate, extract_pairs, AggregationBuffer, ExtractOptions, PatchWeighting, TARGET_EDGE};
use voxelforge::pipeline::dataset::{DatasetIndex, DatasetReport, RIRE_COUNTS};
use voxelforge::records::{RecordReader, RecordWriter};
use voxelforge::register::{register, resample, RegistrationConfig};
use voxelforge::synth::{blob_volume, random_rigid, remap_modality};
use voxelforge::volume::minmax_normalize;
use voxelforge::{Geometry, IntensityDomain, Shape, Volume, VoxelData};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Neumaier-compensated mean, used as the high-accuracy reference.
fn exact_mean(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
        n += 1;
    }
    (sum + comp) / n as f64
}

/// Gradient-difference reference with explicit coordinate arithmetic.
fn gdl_oracle(x: &[f64], y: &[f64], shape: &[usize]) -> f64 {
    let rank = shape.len();
    let mut per_axis = Vec::new();
    for axis in 0..rank {
        let stride: usize = shape[axis + 1..].iter().product();
        let terms = (0..x.len()).map(|flat| {
            let mut rem = flat;
            let mut coords = vec![0; rank];
            for a in (0..rank).rev() {
                coords[a] = rem % shape[a];
                rem /= shape[a];
            }
            let c = coords[axis];
            // interior points only, both ends are zero
            if c == 0 || c + 1 >= shape[axis] {
                return 0.0;
            }
            let gx = x[flat] - x[flat + stride];
            let gy = y[flat] - y[flat + stride];
            (gx - gy) * (gx - gy)
        });
        per_axis.push(exact_mean(terms));
    }
    per_axis.iter().sum::<f64>() / rank as f64
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let rank = rng.random_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=64)).collect();
        if shape.iter().product::<usize>() <= 4096 {
            return shape;
        }
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let shape = random_shape(&mut rng);
        let n: usize = shape.iter().product();
        let scale = 10f64.powi(rng.random_range(-3..5));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let real: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let fake: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();

        let mae_ref = exact_mean(x.iter().zip(&y).map(|(a, b)| (a - b).abs()));
        let mse_ref = exact_mean(x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)));
        let psnr_ref = 10.0 * (65535.0f64 * 65535.0 / mse_ref).log10();
        let minmax_ref = exact_mean(real.iter().zip(&fake).map(|(r, f)| r.ln() + (1.0 - f).ln()));
        let lsq_log_ref = exact_mean(
            real.iter()
                .zip(&fake)
                .map(|(r, f)| (r * r).ln() + ((1.0 - f) * (1.0 - f)).ln()),
        );
        let lsq_std_ref = exact_mean(real.iter().zip(&fake).map(|(r, f)| (r - 1.0) * (r - 1.0) + f * f));

        let (gx, gy) = (Grid::new(&x, &shape).unwrap(), Grid::new(&y, &shape).unwrap());
        let pairs = [
            (mae(&x, &y).unwrap(), mae_ref),
            (mse(&x, &y).unwrap(), mse_ref),
            (psnr(&x, &y, 65535.0).unwrap().db(), psnr_ref),
            (gdl(gx, gy, GradientRule::InteriorOnly).unwrap(), gdl_oracle(&x, &y, &shape)),
            (adversarial_minmax(&real, &fake).unwrap(), minmax_ref),
            (adversarial_lsq(&real, &fake, LeastSquaresForm::LogSquares).unwrap(), lsq_log_ref),
            (
                adversarial_lsq(&real, &fake, LeastSquaresForm::Standard).unwrap(),
                lsq_std_ref,
            ),
        ];
        for (got, want) in pairs {
            worst = worst.max(rel(got, want));
        }
    }
    outcome(worst <= 1e-12, format!("1000 grids, worst rel err {worst:.2e} (tol 1e-12)"))
}

fn psnr_formula() -> Outcome {
    let db = psnr_from_mse(6577.0, 65535.0).db();
    let vm = |name: &str, mse: f64| VolumeMetrics {
        name: name.into(),
        voxels: 100,
        mae: mse.sqrt(),
        mse,
        psnr_db: psnr_from_mse(mse, 65535.0),
        combined_loss: None,
    };
    let report = EvalReport::new(vec![vm("a", 2000.0), vm("b", 11154.0)], 65535.0).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let both = json["aggregate"]["psnr_of_mean_mse_db"].is_number() && json["aggregate"]["mean_volume_psnr_db"].is_number();
    let pooled = report.aggregate.psnr_of_mean_mse_db.db();
    let ok = (db - 58.15).abs() <= 0.01 && both && (pooled - db).abs() < 1e-9;
    outcome(
        ok,
        format!(
            "mse 6577 -> {db:.4} dB (want 58.15 +- 0.01), pooled {pooled:.2} / per-volume mean {:.2} dB",
            report.aggregate.mean_volume_psnr_db.db()
        ),
    )
}

fn gdl_weight() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = LossWeights {
        lambda_mae: 1.0,
        lambda_gdl: 1e-7,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let shape = random_shape(&mut rng);
        let n: usize = shape.iter().product();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let (gx, gy) = (Grid::new(&x, &shape).unwrap(), Grid::new(&y, &shape).unwrap());
        let rule = GradientRule::InteriorOnly;
        let want = mae(&x, &y).unwrap() + 1e-7 * gdl(gx, gy, rule).unwrap();
        worst = worst.max(rel(combined_loss(gx, gy, &w, rule).unwrap(), want));
    }
    outcome(worst <= 1e-15, format!("200 grids, worst rel err {worst:.2e} (tol 1e-15)"))
}

fn registration_recovery() -> Outcome {
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    let mut misses = Vec::new();
    for case in 0..20u64 {
        let moving = blob_volume(Shape::cube(64), 12, 100 + case);
        let c = moving.geometry().center(moving.shape());
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let truth = random_rigid(&mut rng, 10.0, 10.0, [c.x, c.y, c.z]);
        let fixed = remap_modality(&resample(&moving, &truth, &moving));
        let start = Instant::now();
        let found = register(&fixed, &moving, &RegistrationConfig::default()).unwrap();
        let took = start.elapsed();
        slowest = slowest.max(took);
        let err = found.transform.inverse().compose(&truth);
        // unit spacing, so millimetres are voxels
        let (dt, da) = (err.center_displacement(), err.rotation_angle().to_degrees());
        if dt <= 0.5 && da <= 0.5 && took < Duration::from_secs(30) {
            good += 1;
        } else {
            misses.push(format!("case {case}: {dt:.2} vox {da:.2} deg {:.1}s", took.as_secs_f64()));
        }
    }
    let mut detail = format!(
        "{good}/20 within 0.5 vox and 0.5 deg (need 18), slowest {:.1}s (limit 30s)",
        slowest.as_secs_f64()
    );
    if !misses.is_empty() {
        detail += &format!("; {}", misses.join(", "));
    }
    outcome(good >= 18, detail)
}

/// Complement of the background reachable from the border, by 6-neighbor BFS.
fn flood_oracle(mask: &[bool], n: usize) -> Vec<bool> {
    let at = |k: usize, j: usize, i: usize| (k * n + j) * n + i;
    let mut outside = vec![false; mask.len()];
    let mut stack = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let border = [k, j, i].iter().any(|&p| p == 0 || p == n - 1);
                if border && !mask[at(k, j, i)] {
                    outside[at(k, j, i)] = true;
                    stack.push((k, j, i));
                }
            }
        }
    }
    while let Some((k, j, i)) = stack.pop() {
        let mut visit = |k: usize, j: usize, i: usize| {
            let p = at(k, j, i);
            if !mask[p] && !outside[p] {
                outside[p] = true;
                stack.push((k, j, i));
            }
        };
        if k > 0 {
            visit(k - 1, j, i);
        }
        if k + 1 < n {
            visit(k + 1, j, i);
        }
        if j > 0 {
            visit(k, j - 1, i);
        }
        if j + 1 < n {
            visit(k, j + 1, i);
        }
        if i > 0 {
            visit(k, j, i - 1);
        }
        if i + 1 < n {
            visit(k, j, i + 1);
        }
    }
    outside.iter().map(|&o| !o).collect()
}

fn hole_filling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = Shape::cube(16);
    let masks: Vec<Vec<bool>> = (0..1000)
        .map(|_| {
            let p = rng.random_range(0.3..0.8);
            (0..shape.len()).map(|_| rng.random_bool(p)).collect()
        })
        .collect();
    let start = Instant::now();
    let filled: Vec<Vec<bool>> = masks.iter().map(|m| fill_holes_grid(m, shape, Connectivity::Face)).collect();
    let took = start.elapsed();
    let mismatches = masks.iter().zip(&filled).filter(|(m, f)| flood_oracle(m, 16) != **f).count();
    let changed = masks.iter().zip(&filled).filter(|(m, f)| m != f).count();
    outcome(
        mismatches == 0 && took < Duration::from_secs(5),
        format!(
            "1000 masks, {mismatches} mismatches, {changed} had holes, {:.3}s (limit 5s)",
            took.as_secs_f64()
        ),
    )
}

fn patch_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut sizes = Vec::new();
    for (n, shape) in [
        Shape::cube(64),
        Shape::new(80, 96, 72),
        Shape::new(128, 100, 64),
        Shape::cube(128),
    ]
    .into_iter()
    .enumerate()
    {
        let ct = minmax_normalize(&blob_volume(shape, 10, 60 + n as u64));
        let mri = remap_modality(&ct);
        let opts = ExtractOptions {
            stride: 8,
            ..Default::default()
        };
        let dims = shape.dims();
        for weighting in [PatchWeighting::Uniform, PatchWeighting::CenterTapered] {
            let pairs = extract_pairs(&mri, &ct, &opts).unwrap().map(|p| (p.target, p.anchor));
            let out = aggregate(pairs, shape, weighting).unwrap();
            for k in 8..dims[0] - 8 {
                for j in 8..dims[1] - 8 {
                    for i in 8..dims[2] - 8 {
                        worst = worst.max((out.get(k, j, i) - ct.get(k, j, i)).abs());
                    }
                }
            }
        }
        sizes.push(format!("{}x{}x{}", dims[0], dims[1], dims[2]));
    }

    let shape = Shape::cube(256);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let span = 256 - TARGET_EDGE + 1;
    let patches: Vec<(Vec<f32>, [usize; 3])> = (0..10_000)
        .map(|_| {
            let v = rng.random_range(0.0f32..1.0);
            (vec![v; TARGET_EDGE.pow(3)], [0; 3].map(|_| rng.random_range(0..span)))
        })
        .collect();
    let start = Instant::now();
    let mut buf = AggregationBuffer::new(shape, PatchWeighting::Uniform);
    for (p, a) in &patches {
        buf.add(p, *a).unwrap();
    }
    let volume = buf.finish();
    let took = start.elapsed();
    let nonzero = volume.iter().filter(|&&v| v != 0.0).count();
    outcome(
        worst < 1e-6 && took < Duration::from_secs(5) && nonzero > 0,
        format!(
            "stride 8 on {}: max err {worst:.2e} (tol 1e-6); 10000 patches into 256^3 in {:.2}s single-threaded (limit 5s)",
            sizes.join(", "),
            took.as_secs_f64()
        ),
    )
}

fn shape_tables() -> Outcome {
    let reports: Vec<_> = builtin_tables().iter().map(verify_table).collect();
    let flagged: Vec<Vec<usize>> = reports.iter().map(|r| r.flagged().map(|row| row.row).collect()).collect();
    let finals = [reports[0].final_shape.clone(), reports[2].final_shape.clone()];
    let ok = reports.len() == 4
        && flagged == vec![vec![], vec![5], vec![], vec![7]]
        && finals == [vec![384, 384, 1], vec![16, 16, 16, 1]];
    outcome(ok, format!("flagged rows per table {flagged:?}, clean finals {finals:?}"))
}

fn random_volume(rng: &mut ChaCha8Rng) -> Volume {
    let shape = Shape::new(rng.random_range(1..8), rng.random_range(1..24), rng.random_range(1..24));
    let n = shape.len();
    let geometry = Geometry {
        spacing: nalgebra::Vector3::new(
            rng.random_range(0.3..3.0),
            rng.random_range(0.3..3.0),
            rng.random_range(0.3..5.0),
        ),
        origin: nalgebra::Vector3::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        ),
        ..Default::default()
    };
    let (data, domain) = match rng.random_range(0..3) {
        0 => (VoxelData::U16((0..n).map(|_| rng.random()).collect()), IntensityDomain::Raw16),
        1 => (VoxelData::I16((0..n).map(|_| rng.random()).collect()), IntensityDomain::Raw16),
        _ => (
            VoxelData::F32((0..n).map(|_| rng.random_range(0.0..=1.0)).collect()),
            IntensityDomain::Unit,
        ),
    };
    Volume::new(shape, geometry, data, domain).unwrap()
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    let mut nifti_ok = 0;
    for n in 0..100 {
        let v = random_volume(&mut rng);
        let path = dir.path().join(if n % 2 == 0 { "v.nii" } else { "v.nii.gz" });
        write_nifti(&v, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        if back.shape() == v.shape() && back.data() == v.data() && back.domain() == v.domain() {
            nifti_ok += 1;
        }
    }
    let (mut streams_ok, mut detected, mut corruptions) = (0, 0, 0);
    for _ in 0..100 {
        let payloads: Vec<Vec<u8>> = (0..rng.random_range(1..6))
            .map(|_| (0..rng.random_range(0..400)).map(|_| rng.random()).collect())
            .collect();
        let mut w = RecordWriter::new(Vec::new());
        for p in &payloads {
            w.write(p).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let read = |b: &[u8]| RecordReader::new(Cursor::new(b)).collect::<Result<Vec<_>, _>>();
        if read(&bytes).ok().as_ref() == Some(&payloads) {
            streams_ok += 1;
        }
        for _ in 0..10 {
            let mut bad = bytes.clone();
            let at = rng.random_range(0..bad.len());
            bad[at] ^= rng.random_range(1..=255u8);
            corruptions += 1;
            if read(&bad).is_err() {
                detected += 1;
            }
        }
    }
    outcome(
        nifti_ok == 100 && streams_ok == 100 && detected == corruptions,
        format!("nifti {nifti_ok}/100, record streams {streams_ok}/100, corrupted bytes detected {detected}/{corruptions}"),
    )
}

fn dataset_counts() -> Outcome {
    let index = DatasetIndex::bundled();
    let report = DatasetReport::new(&index, RIRE_COUNTS);
    let c = report.counts;
    let ok = index.validate().is_ok() && report.passed() && c.all == [17, 14, 19, 18, 9, 8] && c.with_ct == [12, 17, 16, 9, 6];
    outcome(ok, format!("all {:?}, with CT {:?}", c.all, c.with_ct))
}

fn trim_arithmetic() -> Outcome {
    const TRAINING: [(usize, usize); 13] = [
        (161, 137),
        (149, 130),
        (112, 111),
        (155, 143),
        (143, 141),
        (149, 148),
        (200, 198),
        (218, 208),
        (191, 162),
        (200, 185),
        (181, 180),
        (186, 184),
        (112, 93),
    ];
    const VALIDATION: [(usize, usize); 4] = [(112, 105), (223, 190), (223, 202), (204, 198)];
    let mut wrong = Vec::new();
    for (n, &(before, after)) in TRAINING.iter().chain(&VALIDATION).enumerate() {
        // split the removal between the two ends, the larger part at the bottom
        let cut = before - after;
        let (low, high) = (cut.div_ceil(2), cut / 2);
        let mut trim = Vec::new();
        if low > 0 {
            trim.push([0, low]);
        }
        if high > 0 {
            trim.push([before - high, before]);
        }
        let m = TrimManifest {
            subject: format!("s{n}"),
            trim,
        };
        let v = Volume::new(
            Shape::new(before, 2, 2),
            Geometry::default(),
            VoxelData::U16(vec![0; before * 4]),
            IntensityDomain::Raw16,
        )
        .unwrap();
        let depth = trim_slices(&v, &m.trim).unwrap().shape().depth;
        if depth != after || m.removed() != cut {
            wrong.push(format!("{before}->{depth} (want {after})"));
        }
    }
    let detail = if wrong.is_empty() {
        "17 subjects reach their trimmed depths".to_string()
    } else {
        wrong.join(", ")
    };
    outcome(wrong.is_empty(), detail)
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let checks: [Check; 10] = [
        ("metric oracles", metric_oracles),
        ("psnr formula", psnr_formula),
        ("gdl weight", gdl_weight),
        ("registration recovery", registration_recovery),
        ("hole filling oracle", hole_filling),
        ("patch identity", patch_identity),
        ("shape tables", shape_tables),
        ("format round trips", round_trips),
        ("dataset counts", dataset_counts),
        ("trim arithmetic", trim_arithmetic),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:>2} {name:<22} {} [{:.1}s]",
            n + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        println!("acceptance: all {} criteria pass", checks.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria failed", checks.len());
        ExitCode::FAILURE
    }
}
