//! Layer output-shape inference and row-by-row verification of architecture
//! tables.
//!
//! Shapes are spatial extents followed by the channel count, e.g.
//! `[384, 384, 1]` or `[32, 32, 32, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_TABLES: &str = include_str!("../data/shape_tables.json");

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("layer produces a non-positive extent on axis {axis} (input {input}, kernel {kernel})")]
    NonPositiveOutput { axis: usize, input: usize, kernel: usize },
    #[error("kernel/stride rank {kernel} does not match {spatial} spatial axes")]
    RankMismatch { kernel: usize, spatial: usize },
    #[error("kernel and stride extents must be positive")]
    NonPositiveParameter,
    #[error("{0} layer needs a feature count")]
    MissingFeatures(LayerKind),
    #[error("padding must be resolved to same or valid before inference")]
    UnresolvedPadding,
    #[error("malformed table: {0}")]
    MalformedTable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Convolution,
    Deconvolution,
    MaxPooling,
    Dense,
    Output,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Input => "Input",
            LayerKind::Convolution => "Convolution",
            LayerKind::Deconvolution => "Deconvolution",
            LayerKind::MaxPooling => "Max Pooling",
            LayerKind::Dense => "Dense",
            LayerKind::Output => "Output",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
    #[default]
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kernel: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strides: Vec<usize>,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
}

impl LayerSpec {
    pub fn conv(kernel: &[usize], strides: &[usize], padding: Padding, features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Convolution,
            kernel: kernel.to_vec(),
            strides: strides.to_vec(),
            padding,
            features: Some(features),
        }
    }

    pub fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }

    fn is_windowed(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Convolution | LayerKind::Deconvolution | LayerKind::MaxPooling
        )
    }
}

fn spatial_out(kind: LayerKind, padding: Padding, input: usize, k: usize, s: usize, axis: usize) -> Result<usize, ShapeError> {
    let out = match (kind, padding) {
        (LayerKind::Deconvolution, Padding::Same) => input * s,
        (LayerKind::Deconvolution, Padding::Valid) => (input - 1) * s + k,
        (_, Padding::Same) => input.div_ceil(s),
        (_, Padding::Valid) => {
            if k > input {
                return Err(ShapeError::NonPositiveOutput { axis, input, kernel: k });
            }
            (input - k) / s + 1
        }
        (_, Padding::Infer) => return Err(ShapeError::UnresolvedPadding),
    };
    if out == 0 {
        return Err(ShapeError::NonPositiveOutput { axis, input, kernel: k });
    }
    Ok(out)
}

/// Output shape of `layer` applied to `input` (spatial extents + channels).
pub fn infer_shape(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>, ShapeError> {
    if input.is_empty() || input.contains(&0) {
        return Err(ShapeError::MalformedTable(format!("input shape {input:?} is not positive")));
    }
    let (spatial, channels) = input.split_at(input.len() - 1);
    match layer.kind {
        LayerKind::Input | LayerKind::Output => Ok(input.to_vec()),
        LayerKind::Dense => {
            let units = layer.features.ok_or(ShapeError::MissingFeatures(layer.kind))?;
            Ok(spatial.iter().copied().chain([units]).collect())
        }
        kind => {
            let d = spatial.len();
            let broadcast = |v: &[usize]| -> Result<Vec<usize>, ShapeError> {
                match v.len() {
                    1 => Ok(vec![v[0]; d]),
                    n if n == d => Ok(v.to_vec()),
                    n => Err(ShapeError::RankMismatch { kernel: n, spatial: d }),
                }
            };
            let kernel = broadcast(&layer.kernel)?;
            let strides = broadcast(&layer.strides)?;
            if kernel.iter().chain(&strides).any(|&x| x == 0) {
                return Err(ShapeError::NonPositiveParameter);
            }
            let mut out = Vec::with_capacity(input.len());
            for axis in 0..d {
                out.push(spatial_out(
                    kind,
                    layer.padding,
                    spatial[axis],
                    kernel[axis],
                    strides[axis],
                    axis,
                )?);
            }
            let features = match kind {
                LayerKind::MaxPooling => layer.features.unwrap_or(channels[0]),
                _ => layer.features.ok_or(ShapeError::MissingFeatures(kind))?,
            };
            out.push(features);
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(flatten)]
    pub layer: LayerSpec,
    pub expected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub name: String,
    pub rows: Vec<TableRow>,
}

impl ShapeTable {
    pub fn validate(&self) -> Result<(), ShapeError> {
        let bad = |m: String| Err(ShapeError::MalformedTable(format!("{}: {m}", self.name)));
        match (self.rows.first(), self.rows.last()) {
            (Some(f), Some(l)) if f.layer.kind == LayerKind::Input && l.layer.kind == LayerKind::Output => {}
            _ => return bad("first row must be Input and last row Output".into()),
        }
        for (n, r) in self.rows.iter().enumerate() {
            if r.expected.is_empty() || r.expected.contains(&0) {
                return bad(format!("row {n} expected shape {:?} is not positive", r.expected));
            }
            if r.layer.is_windowed() && (r.layer.kernel.is_empty() || r.layer.strides.is_empty()) {
                return bad(format!("row {n} ({}) lacks kernel or strides", r.layer.kind));
            }
            if r.layer.kind == LayerKind::Dense && !(r.layer.kernel.is_empty() && r.layer.strides.is_empty()) {
                return bad(format!("row {n}: Dense carries units only"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowStatus {
    Match {
        padding: Option<Padding>,
    },
    Mismatch {
        expected: Vec<usize>,
        computed: Vec<usize>,
    },
    /// No padding choice (or no shape rule at all, for Dense) reproduces the
    /// expected shape. `candidates` lists what each choice would give.
    Unresolvable {
        expected: Vec<usize>,
        candidates: Vec<(Option<Padding>, Vec<usize>)>,
    },
}

impl RowStatus {
    pub fn is_match(&self) -> bool {
        matches!(self, RowStatus::Match { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowReport {
    pub row: usize,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    #[serde(flatten)]
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableReport {
    pub name: String,
    pub rows: Vec<RowReport>,
    pub final_shape: Vec<usize>,
}

impl TableReport {
    pub fn flagged(&self) -> impl Iterator<Item = &RowReport> {
        self.rows.iter().filter(|r| !r.status.is_match())
    }

    pub fn is_consistent(&self) -> bool {
        self.flagged().next().is_none()
    }
}

fn dims(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for TableReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.name)?;
        for r in &self.rows {
            let status = match &r.status {
                RowStatus::Match { padding: Some(p) } => format!("ok ({})", if *p == Padding::Same { "same" } else { "valid" }),
                RowStatus::Match { padding: None } => "ok".to_string(),
                RowStatus::Mismatch { expected, computed } => {
                    format!("MISMATCH expected {} computed {}", dims(expected), dims(computed))
                }
                RowStatus::Unresolvable { expected, candidates } => {
                    let c: Vec<String> = candidates
                        .iter()
                        .map(|(p, s)| match p {
                            Some(Padding::Same) => format!("same {}", dims(s)),
                            Some(_) => format!("valid {}", dims(s)),
                            None => dims(s),
                        })
                        .collect();
                    format!("UNRESOLVABLE expected {} ({})", dims(expected), c.join(", "))
                }
            };
            writeln!(
                f,
                "  {:>2}  {:<13} {:>14} -> {}",
                r.row,
                r.kind.to_string(),
                dims(&r.input),
                status
            )?;
        }
        write!(f, "  final shape {}", dims(&self.final_shape))
    }
}

/// Propagates shapes through the table. Rows with `Infer` padding try same
/// then valid. After a flagged row propagation continues from the table's
/// expected shape, so one typo produces one flagged row.
pub fn verify_table(table: &ShapeTable) -> TableReport {
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut current = table.rows.first().map(|r| r.expected.clone()).unwrap_or_default();
    for (n, row) in table.rows.iter().enumerate() {
        let input = current.clone();
        let status = if n == 0 && row.layer.kind == LayerKind::Input {
            RowStatus::Match { padding: None }
        } else if row.layer.is_windowed() {
            let choices: Vec<Padding> = match row.layer.padding {
                Padding::Infer => vec![Padding::Same, Padding::Valid],
                p => vec![p],
            };
            let candidates: Vec<(Padding, Result<Vec<usize>, ShapeError>)> = choices
                .iter()
                .map(|&p| {
                    let layer = LayerSpec {
                        padding: p,
                        ..row.layer.clone()
                    };
                    (p, infer_shape(&layer, &input))
                })
                .collect();
            match candidates.iter().find(|(_, s)| s.as_ref().is_ok_and(|s| *s == row.expected)) {
                Some((p, _)) => RowStatus::Match { padding: Some(*p) },
                None if row.layer.padding != Padding::Infer => match &candidates[0].1 {
                    Ok(s) => RowStatus::Mismatch {
                        expected: row.expected.clone(),
                        computed: s.clone(),
                    },
                    Err(_) => RowStatus::Unresolvable {
                        expected: row.expected.clone(),
                        candidates: Vec::new(),
                    },
                },
                None => RowStatus::Unresolvable {
                    expected: row.expected.clone(),
                    candidates: candidates
                        .into_iter()
                        .filter_map(|(p, s)| s.ok().map(|s| (Some(p), s)))
                        .collect(),
                },
            }
        } else {
            match infer_shape(&row.layer, &input) {
                Ok(s) if s == row.expected => RowStatus::Match { padding: None },
                Ok(s) if row.layer.kind == LayerKind::Dense => RowStatus::Unresolvable {
                    expected: row.expected.clone(),
                    candidates: vec![(None, s)],
                },
                Ok(s) => RowStatus::Mismatch {
                    expected: row.expected.clone(),
                    computed: s,
                },
                Err(_) => RowStatus::Unresolvable {
                    expected: row.expected.clone(),
                    candidates: Vec::new(),
                },
            }
        };
        current = row.expected.clone();
        rows.push(RowReport {
            row: n,
            kind: row.layer.kind,
            input,
            status,
        });
    }
    TableReport {
        name: table.name.clone(),
        rows,
        final_shape: current,
    }
}

pub fn parse_tables(json: &str) -> Result<Vec<ShapeTable>, ShapeError> {
    let tables: Vec<ShapeTable> = serde_json::from_str(json).map_err(|e| ShapeError::MalformedTable(e.to_string()))?;
    for t in &tables {
        t.validate()?;
    }
    Ok(tables)
}

/// The four bundled architecture tables: u-net generator, pix2pix
/// discriminator, context-aware 3D generator and discriminator.
pub fn builtin_tables() -> Vec<ShapeTable> {
    parse_tables(BUILTIN_TABLES).expect("bundled tables are well formed")
}
