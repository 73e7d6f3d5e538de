//! Distance losses, adversarial loss forms, the weighted combined loss and
//! PSNR evaluation.
//!
//! Every reduction sums fixed-size chunks left to right and then combines the
//! chunk sums pairwise, so results do not depend on how chunks are scheduled.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::volume::{Volume, RAW16_MAX};

const CHUNK: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("empty input")]
    Empty,
    #[error("grid of {len} values does not match shape {shape:?}")]
    BadGrid { len: usize, shape: Vec<usize> },
    #[error("score {value} at index {index} is outside the log domain")]
    DomainError { index: usize, value: f64 },
    #[error("loss weights must be finite and non-negative")]
    InvalidWeights,
}

/// Row-major N-d grid view (last axis fastest).
#[derive(Clone, Copy, Debug)]
pub struct Grid<'a> {
    data: &'a [f64],
    shape: &'a [usize],
}

impl<'a> Grid<'a> {
    pub fn new(data: &'a [f64], shape: &'a [usize]) -> Result<Self, MetricError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(MetricError::BadGrid {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        if data.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(Grid { data, shape })
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    pub fn shape(&self) -> &'a [usize] {
        self.shape
    }
}

fn pairwise(mut sums: Vec<f64>) -> f64 {
    while sums.len() > 1 {
        sums = sums
            .chunks(2)
            .map(|c| if c.len() == 2 { c[0] + c[1] } else { c[0] })
            .collect();
    }
    sums.first().copied().unwrap_or(0.0)
}

/// Mean of `term(i)` over `0..n` with deterministic chunked summation.
fn chunked_mean(n: usize, term: impl Fn(usize) -> f64 + Sync) -> f64 {
    let chunk_sum = |c: usize| ((c * CHUNK)..((c + 1) * CHUNK).min(n)).map(&term).sum::<f64>();
    let chunks = n.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let sums: Vec<f64> = {
        use rayon::prelude::*;
        if chunks > 8 {
            (0..chunks).into_par_iter().map(chunk_sum).collect()
        } else {
            (0..chunks).map(chunk_sum).collect()
        }
    };
    #[cfg(not(feature = "parallel"))]
    let sums: Vec<f64> = (0..chunks).map(chunk_sum).collect();
    pairwise(sums) / n as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::ShapeMismatch(vec![x.len()], vec![y.len()]));
    }
    if x.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// `(1/N) Σ |xᵢ − yᵢ|`
pub fn mae(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    Ok(chunked_mean(x.len(), |i| (x[i] - y[i]).abs()))
}

/// `(1/N) Σ (xᵢ − yᵢ)²`
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    Ok(chunked_mean(x.len(), |i| {
        let d = x[i] - y[i];
        d * d
    }))
}

/// Boundary rule of the gradient approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum GradientRule {
    /// `gᵢ = xᵢ − xᵢ₊₁` for `1 < i < N` (1-based), zero at both ends.
    #[default]
    InteriorOnly,
    /// `gᵢ = xᵢ − xᵢ₊₁` for `i < N`, zero only at the last element.
    ForwardDifference,
}

/// Difference along `axis` under the given boundary rule.
pub fn spatial_gradient(x: Grid<'_>, axis: usize, rule: GradientRule) -> Vec<f64> {
    let n = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let mut g = vec![0.0; x.data.len()];
    let first = match rule {
        GradientRule::InteriorOnly => 1,
        GradientRule::ForwardDifference => 0,
    };
    for (idx, slot) in g.iter_mut().enumerate() {
        let pos = (idx / inner) % n;
        if pos >= first && pos + 1 < n {
            *slot = x.data[idx] - x.data[idx + inner];
        }
    }
    g
}

fn check_grids(x: Grid<'_>, y: Grid<'_>) -> Result<(), MetricError> {
    if x.shape != y.shape {
        return Err(MetricError::ShapeMismatch(x.shape.to_vec(), y.shape.to_vec()));
    }
    Ok(())
}

/// Mean over axes of `mse(∇ₐx, ∇ₐy)`.
pub fn gdl(x: Grid<'_>, y: Grid<'_>, rule: GradientRule) -> Result<f64, MetricError> {
    check_grids(x, y)?;
    let axes = x.shape.len();
    let mut total = 0.0;
    for axis in 0..axes {
        total += mse(&spatial_gradient(x, axis, rule), &spatial_gradient(y, axis, rule))?;
    }
    Ok(total / axes as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_mae: f64,
    pub lambda_mse: f64,
    pub lambda_gdl: f64,
    /// Weight of the adversarial term; not part of the distance loss.
    pub lambda_adv: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MetricError> {
        let all = [self.lambda_mae, self.lambda_mse, self.lambda_gdl, self.lambda_adv];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(MetricError::InvalidWeights)
        }
    }
}

/// `λ_MAE·mae + λ_MSE·mse + λ_GDL·gdl`
pub fn combined_loss(x: Grid<'_>, y: Grid<'_>, w: &LossWeights, rule: GradientRule) -> Result<f64, MetricError> {
    w.validate()?;
    check_grids(x, y)?;
    let mut loss = 0.0;
    if w.lambda_mae != 0.0 {
        loss += w.lambda_mae * mae(x.data, y.data)?;
    }
    if w.lambda_mse != 0.0 {
        loss += w.lambda_mse * mse(x.data, y.data)?;
    }
    if w.lambda_gdl != 0.0 {
        loss += w.lambda_gdl * gdl(x, y, rule)?;
    }
    Ok(loss)
}

fn check_scores(scores: &[f64], valid: impl Fn(f64) -> bool) -> Result<(), MetricError> {
    match scores.iter().position(|&s| !valid(s)) {
        Some(index) => Err(MetricError::DomainError {
            index,
            value: scores[index],
        }),
        None => Ok(()),
    }
}

/// Mean of `ln D(x) + ln(1 − D(G(z)))` over the score maps.
pub fn adversarial_minmax(d_real: &[f64], d_fake: &[f64]) -> Result<f64, MetricError> {
    check_pair(d_real, d_fake)?;
    check_scores(d_real, |s| s > 0.0 && s <= 1.0)?;
    check_scores(d_fake, |s| (0.0..1.0).contains(&s))?;
    Ok(chunked_mean(d_real.len(), |i| d_real[i].ln() + (1.0 - d_fake[i]).ln()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeastSquaresForm {
    /// `ln(D(x)²) + ln((1 − D(G(z)))²)`, taken literally; unbounded below.
    LogSquares,
    /// `(D(x) − 1)² + D(G(z))²`, the usual LSGAN discriminator objective.
    #[default]
    Standard,
}

pub fn adversarial_lsq(d_real: &[f64], d_fake: &[f64], form: LeastSquaresForm) -> Result<f64, MetricError> {
    check_pair(d_real, d_fake)?;
    match form {
        LeastSquaresForm::LogSquares => {
            check_scores(d_real, |s| s != 0.0 && s.is_finite())?;
            check_scores(d_fake, |s| s != 1.0 && s.is_finite())?;
            Ok(chunked_mean(d_real.len(), |i| {
                let f = 1.0 - d_fake[i];
                (d_real[i] * d_real[i]).ln() + (f * f).ln()
            }))
        }
        LeastSquaresForm::Standard => {
            check_scores(d_real, f64::is_finite)?;
            check_scores(d_fake, f64::is_finite)?;
            Ok(chunked_mean(d_real.len(), |i| {
                let r = d_real[i] - 1.0;
                r * r + d_fake[i] * d_fake[i]
            }))
        }
    }
}

/// Peak signal-to-noise ratio in dB; infinite when the inputs are identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.2}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

/// `10·log₁₀(M² / mse)`
pub fn psnr_from_mse(mse: f64, max_value: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (max_value * max_value / mse).log10())
    }
}

pub fn psnr(x: &[f64], y: &[f64], max_value: f64) -> Result<Psnr, MetricError> {
    Ok(psnr_from_mse(mse(x, y)?, max_value))
}

/// Metrics of one predicted volume against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeMetrics {
    pub name: String,
    pub voxels: usize,
    pub mae: f64,
    pub mse: f64,
    pub psnr_db: Psnr,
    /// Weighted distance loss, when loss weights were supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined_loss: Option<f64>,
}

/// Voxel-weighted aggregate. PSNR is reported both from the aggregate MSE
/// and as the mean of per-volume values, since the two differ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub volumes: usize,
    pub voxels: usize,
    pub mae: f64,
    pub mse: f64,
    pub psnr_of_mean_mse_db: Psnr,
    pub mean_volume_psnr_db: Psnr,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub max_value: f64,
    pub per_volume: Vec<VolumeMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Compares a prediction with ground truth on the raw intensity scale
/// (Unit volumes are mapped back through their recorded source range).
pub fn evaluate(name: &str, pred: &Volume, truth: &Volume, max_value: f64) -> Result<VolumeMetrics, MetricError> {
    if pred.shape() != truth.shape() {
        return Err(MetricError::ShapeMismatch(
            pred.shape().dims().to_vec(),
            truth.shape().dims().to_vec(),
        ));
    }
    let x = pred.raw_scale_values();
    let y = truth.raw_scale_values();
    let mse = mse(&x, &y)?;
    Ok(VolumeMetrics {
        name: name.to_string(),
        voxels: x.len(),
        mae: mae(&x, &y)?,
        mse,
        psnr_db: psnr_from_mse(mse, max_value),
        combined_loss: None,
    })
}

impl EvalReport {
    pub fn new(per_volume: Vec<VolumeMetrics>, max_value: f64) -> Result<Self, MetricError> {
        if per_volume.is_empty() {
            return Err(MetricError::Empty);
        }
        let voxels: usize = per_volume.iter().map(|m| m.voxels).sum();
        let weighted =
            |f: fn(&VolumeMetrics) -> f64| pairwise(per_volume.iter().map(|m| f(m) * m.voxels as f64).collect()) / voxels as f64;
        let mae = weighted(|m| m.mae);
        let mse = weighted(|m| m.mse);
        let mean_volume_psnr_db = if per_volume.iter().any(|m| m.psnr_db.is_infinite()) {
            Psnr::Infinite
        } else {
            Psnr::Finite(per_volume.iter().map(|m| m.psnr_db.db()).sum::<f64>() / per_volume.len() as f64)
        };
        Ok(EvalReport {
            max_value,
            aggregate: AggregateMetrics {
                volumes: per_volume.len(),
                voxels,
                mae,
                mse,
                psnr_of_mean_mse_db: psnr_from_mse(mse, max_value),
                mean_volume_psnr_db,
            },
            per_volume,
        })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a Volume, &'a Volume)>) -> Result<Self, MetricError> {
        let per_volume = pairs
            .into_iter()
            .map(|(name, p, t)| evaluate(name, p, t, RAW16_MAX))
            .collect::<Result<Vec<_>, _>>()?;
        EvalReport::new(per_volume, RAW16_MAX)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: one row per volume plus the aggregate rows.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![["Volume".into(), "MAE".into(), "MSE".into(), "PSNR".into()]];
        for m in &self.per_volume {
            rows.push([
                m.name.clone(),
                format!("{:.2}", m.mae),
                format!("{:.0}", m.mse),
                m.psnr_db.to_string(),
            ]);
        }
        let a = &self.aggregate;
        rows.push([
            "aggregate (PSNR of mean MSE)".into(),
            format!("{:.2}", a.mae),
            format!("{:.0}", a.mse),
            a.psnr_of_mean_mse_db.to_string(),
        ]);
        rows.push([
            "aggregate (mean volume PSNR)".into(),
            String::new(),
            String::new(),
            a.mean_volume_psnr_db.to_string(),
        ]);
        let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (n, r) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            if n == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 6));
            }
        }
        out
    }
}
