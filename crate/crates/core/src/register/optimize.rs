//! Multi-resolution pattern search (coordinate steps with step halving plus
//! Hooke-Jeeves extrapolation) maximizing MI.

use log::{debug, warn};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::histogram::{Binning, JointHistogram};
use super::resample::{downsample2, IndexMap, Interpolator};
use super::{RegisterError, RegistrationConfig, RigidTransform};
use crate::volume::{Shape, Volume};

// Below this many voxels a level is evaluated densely regardless of the
// sampling fraction.
const MIN_SAMPLES: usize = 4096;
const MIN_LEVEL_EXTENT: usize = 8;
// Histogram chunk size; fixed so parallel and sequential evaluation agree.
#[cfg(feature = "parallel")]
const CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 0 is the coarsest pyramid level.
    pub level: usize,
    pub iteration: usize,
    pub mi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationWarning {
    /// No step improved MI at the coarsest level; the identity was returned.
    DidNotImprove,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub trace: Vec<TraceEntry>,
    pub final_mi: f64,
    pub evaluations: usize,
    pub warning: Option<RegistrationWarning>,
}

/// One pyramid level: sampled fixed-voxel indices with their bins, and the
/// moving volume at the same resolution.
struct Level {
    fixed: Volume,
    samples: Vec<[f64; 3]>,
    fixed_bins: Vec<u16>,
    moving: Volume,
    moving_interp: Interpolator,
    factor: f64,
}

struct Problem<'a> {
    fixed_binning: &'a Binning,
    moving_binning: &'a Binning,
    center: [f64; 3],
    rotation_scale: f64,
}

impl Problem<'_> {
    fn transform(&self, p: &[f64; 6]) -> RigidTransform {
        RigidTransform::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], self.center)
    }

    fn histogram(&self, level: &Level, t: &RigidTransform, range: std::ops::Range<usize>) -> JointHistogram {
        let map = IndexMap::new(level.fixed.geometry(), t, level.moving.geometry());
        let mut h = JointHistogram::empty(self.fixed_binning, self.moving_binning);
        for n in range {
            let [i, j, k] = level.samples[n];
            let u = map.map(i, j, k);
            let value = level.moving_interp.sample(u.x, u.y, u.z).unwrap_or(0.0);
            h.add_bins(level.fixed_bins[n] as usize, self.moving_binning.bin(value));
        }
        h
    }

    /// Sequential coordinate moves of one step each, keeping every
    /// improvement over `mi`.
    fn explore(&self, level: &Level, mut p: [f64; 6], mut mi: f64, step: f64, evaluations: &mut usize) -> ([f64; 6], f64) {
        for axis in 0..6 {
            let delta = if axis < 3 { step / self.rotation_scale } else { step };
            for sign in [1.0, -1.0] {
                let mut q = p;
                q[axis] += sign * delta;
                let m = self.mi(level, &q);
                *evaluations += 1;
                if m > mi {
                    (p, mi) = (q, m);
                    break;
                }
            }
        }
        (p, mi)
    }

    fn mi(&self, level: &Level, p: &[f64; 6]) -> f64 {
        let t = self.transform(p);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let n = level.samples.len();
            let parts: Vec<JointHistogram> = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| self.histogram(level, &t, c * CHUNK..((c + 1) * CHUNK).min(n)))
                .collect();
            let mut h = JointHistogram::empty(self.fixed_binning, self.moving_binning);
            parts.iter().for_each(|p| h.merge(p));
            h.mutual_information()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.histogram(level, &t, 0..level.samples.len()).mutual_information()
        }
    }
}

fn pyramid(v: &Volume, levels: usize) -> Vec<Volume> {
    let mut out = vec![v.clone()];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        if last.shape().dims().iter().any(|&n| n.div_ceil(2) < MIN_LEVEL_EXTENT) {
            break;
        }
        out.push(downsample2(last));
    }
    out.reverse();
    out
}

fn sample_indices(shape: Shape, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut all: Vec<usize> = (0..shape.len()).collect();
    let keep = ((shape.len() as f64 * fraction).ceil() as usize)
        .max(MIN_SAMPLES)
        .min(shape.len());
    if keep < shape.len() {
        all.shuffle(rng);
        all.truncate(keep);
        all.sort_unstable();
    }
    all.into_iter()
        .map(|idx| {
            let (k, j, i) = shape.unravel(idx);
            [i as f64, j as f64, k as f64]
        })
        .collect()
}

/// Rigidly aligns `moving` to `fixed` by maximizing mutual information.
///
/// The returned transform maps fixed-space points into moving space, so
/// `resample(moving, &result.transform, fixed)` brings the moving volume onto
/// the fixed grid.
pub fn register(fixed: &Volume, moving: &Volume, cfg: &RegistrationConfig) -> Result<RegistrationResult, RegisterError> {
    cfg.validate()?;
    let fixed_values = fixed.to_f64_vec();
    let moving_values = moving.to_f64_vec();
    let fixed_binning = Binning::over(&fixed_values, cfg.bins)?;
    let moving_binning = Binning::over(&moving_values, cfg.bins)?;

    let center = fixed.geometry().center(fixed.shape());
    let diag = {
        let s = fixed.shape();
        let sp = fixed.geometry().spacing;
        Vector3::new(s.width as f64 * sp.x, s.height as f64 * sp.y, s.depth as f64 * sp.z).norm()
    };
    let problem = Problem {
        fixed_binning: &fixed_binning,
        moving_binning: &moving_binning,
        center: [center.x, center.y, center.z],
        rotation_scale: diag / 2.0,
    };

    let fixed_levels = pyramid(fixed, cfg.pyramid_levels);
    let moving_levels = pyramid(moving, fixed_levels.len());
    let n_levels = fixed_levels.len().min(moving_levels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let levels: Vec<Level> = fixed_levels[fixed_levels.len() - n_levels..]
        .iter()
        .zip(&moving_levels[moving_levels.len() - n_levels..])
        .enumerate()
        .map(|(l, (f, m))| {
            let samples = sample_indices(f.shape(), cfg.sampling_fraction, &mut rng);
            let fixed_bins = samples
                .iter()
                .map(|&[i, j, k]| fixed_binning.bin(f.get(k as usize, j as usize, i as usize)) as u16)
                .collect();
            Level {
                fixed: f.clone(),
                samples,
                fixed_bins,
                moving_interp: Interpolator::from_volume(m),
                moving: m.clone(),
                factor: (1u64 << (n_levels - 1 - l)) as f64,
            }
        })
        .collect();

    let mut params = [0.0f64; 6];
    let mut trace = Vec::new();
    let mut evaluations = 0usize;
    let mut best = 0.0;
    for (l, level) in levels.iter().enumerate() {
        best = problem.mi(level, &params);
        evaluations += 1;
        trace.push(TraceEntry {
            level: l,
            iteration: 0,
            mi: best,
        });
        let mut step = cfg.initial_step_mm * level.factor;
        let min_step = cfg.convergence_tol * level.factor;
        let mut accepted = 0usize;
        let mut iteration = 0usize;
        while step >= min_step && iteration < cfg.max_iterations {
            iteration += 1;
            let (p, mi) = problem.explore(level, params, best, step, &mut evaluations);
            if mi <= best {
                step /= 2.0;
                continue;
            }
            // Pattern moves: keep extrapolating the last improvement while it
            // pays off.
            let (mut base, mut base_mi) = (params, best);
            let (mut next, mut next_mi) = (p, mi);
            while next_mi > base_mi && iteration < cfg.max_iterations {
                (params, best) = (next, next_mi);
                accepted += 1;
                trace.push(TraceEntry {
                    level: l,
                    iteration,
                    mi: best,
                });
                let pattern: [f64; 6] = std::array::from_fn(|a| 2.0 * next[a] - base[a]);
                (base, base_mi) = (next, next_mi);
                let start_mi = problem.mi(level, &pattern);
                evaluations += 1;
                (next, next_mi) = problem.explore(level, pattern, start_mi, step, &mut evaluations);
                iteration += 1;
            }
        }
        debug!(
            "level {l} (x{}) finished: {accepted} steps, MI {best:.5}, params {params:?}",
            level.factor
        );
        if l == 0 && accepted == 0 {
            warn!("registration did not improve MI at the coarsest level; returning identity");
            return Ok(RegistrationResult {
                transform: problem.transform(&[0.0; 6]),
                trace,
                final_mi: best,
                evaluations,
                warning: Some(RegistrationWarning::DidNotImprove),
            });
        }
    }

    Ok(RegistrationResult {
        transform: problem.transform(&params),
        trace,
        final_mi: best,
        evaluations,
        warning: None,
    })
}
