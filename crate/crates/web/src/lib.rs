//! Compute side of the browser demo. The page owns the DOM; everything here
//! takes and returns plain numbers, bytes and strings.

use wasm_bindgen::prelude::*;

use voxelforge::morph::{fill_holes_grid, Connectivity};
use voxelforge::netshape::{builtin_tables, parse_tables, verify_table};
use voxelforge::register::{register, resample, RegistrationConfig, RigidTransform};
use voxelforge::synth::{blob_volume, remap_modality};
use voxelforge::volume::minmax_normalize;
use voxelforge::{Shape, Volume};

/// Edge of the demo cube; small enough to register in well under a second.
pub const DEMO_EDGE: usize = 40;

#[wasm_bindgen]
pub struct RegistrationDemo {
    truth: RigidTransform,
    found: RigidTransform,
    trace: Vec<f64>,
    before: Vec<u8>,
    after: Vec<u8>,
}

#[wasm_bindgen]
impl RegistrationDemo {
    /// Misaligns a synthetic volume by `shift_mm` along x and `angle_deg`
    /// in the axial plane, remaps its contrast, then registers it back.
    #[wasm_bindgen(constructor)]
    pub fn new(shift_mm: f64, angle_deg: f64, seed: u32) -> RegistrationDemo {
        let moving = blob_volume(Shape::cube(DEMO_EDGE), 8, seed as u64);
        let c = moving.geometry().center(moving.shape());
        let truth = RigidTransform::new([0.0, 0.0, angle_deg.to_radians()], [shift_mm, 0.0, 0.0], [c.x, c.y, c.z]);
        let fixed = remap_modality(&resample(&moving, &truth, &moving));
        let cfg = RegistrationConfig {
            pyramid_levels: 2,
            ..Default::default()
        };
        let result = register(&fixed, &moving, &cfg).expect("synthetic volumes register");
        let aligned = resample(&moving, &result.transform, &fixed);
        RegistrationDemo {
            truth,
            found: result.transform,
            trace: result.trace.iter().map(|t| t.mi).collect(),
            before: overlay(&fixed, &moving),
            after: overlay(&fixed, &aligned),
        }
    }

    pub fn edge(&self) -> usize {
        DEMO_EDGE
    }

    /// `[rx, ry, rz]` in degrees followed by `[tx, ty, tz]` in mm.
    pub fn found(&self) -> Vec<f64> {
        params(&self.found)
    }

    pub fn truth(&self) -> Vec<f64> {
        params(&self.truth)
    }

    /// Residual `[mm at the center, degrees]` between found and true motion.
    pub fn error(&self) -> Vec<f64> {
        let e = self.found.inverse().compose(&self.truth);
        vec![e.center_displacement(), e.rotation_angle().to_degrees()]
    }

    /// MI after every accepted search step.
    pub fn mi_trace(&self) -> Vec<f64> {
        self.trace.clone()
    }

    /// RGBA of the middle axial slice before registration.
    pub fn before_rgba(&self) -> Vec<u8> {
        self.before.clone()
    }

    pub fn after_rgba(&self) -> Vec<u8> {
        self.after.clone()
    }
}

fn params(t: &RigidTransform) -> Vec<f64> {
    t.angles.iter().map(|a| a.to_degrees()).chain(t.translation).collect()
}

/// Middle axial slice with the fixed volume in magenta and the moving one in
/// green, so aligned structure reads as gray.
pub fn overlay(fixed: &Volume, moving: &Volume) -> Vec<u8> {
    let (f, m) = (minmax_normalize(fixed), minmax_normalize(moving));
    let s = fixed.shape();
    let k = s.depth / 2;
    let mut out = Vec::with_capacity(s.height * s.width * 4);
    for j in 0..s.height {
        for i in 0..s.width {
            let a = (f.get(k, j, i) * 255.0).round() as u8;
            let b = (m.get(k, j, i) * 255.0).round() as u8;
            out.extend_from_slice(&[a, b, a, 255]);
        }
    }
    out
}

/// Fills enclosed background in a `height × width` mask of 0/1 bytes.
pub fn fill_mask(mask: &[u8], height: usize, width: usize) -> Result<Vec<u8>, String> {
    if mask.len() != height * width {
        return Err(format!("mask has {} cells, expected {height}x{width}", mask.len()));
    }
    let bits: Vec<bool> = mask.iter().map(|&b| b != 0).collect();
    let filled = fill_holes_grid(&bits, Shape::new(1, height, width), Connectivity::Face);
    Ok(filled.into_iter().map(u8::from).collect())
}

/// Verifies shape tables given as JSON, or the bundled ones for blank input,
/// and returns the printed reports.
pub fn shape_report(json: &str) -> Result<String, String> {
    let tables = if json.trim().is_empty() {
        builtin_tables()
    } else {
        parse_tables(json).map_err(|e| e.to_string())?
    };
    let mut out = String::new();
    for t in &tables {
        let r = verify_table(t);
        let verdict = match r.flagged().count() {
            0 => "consistent".to_string(),
            n => format!("{n} flagged row(s)"),
        };
        out += &format!("{r}\n{verdict}\n\n");
    }
    Ok(out.trim_end().to_string())
}

#[wasm_bindgen]
pub fn fill_holes_2d(mask: &[u8], height: usize, width: usize) -> Result<Vec<u8>, JsError> {
    fill_mask(mask, height, width).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn verify_shape_tables(json: &str) -> Result<String, JsError> {
    shape_report(json).map_err(|e| JsError::new(&e))
}

/// The bundled tables, for prefilling the editor.
#[wasm_bindgen]
pub fn builtin_tables_json() -> String {
    include_str!("../../core/data/shape_tables.json").to_string()
}
