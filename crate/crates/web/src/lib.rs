//! Browser demo. Each operation takes and returns a JSON document so the page
//! needs no generated bindings beyond strings.

use ligament_bands::asymptotics::{predicted_band, rigid_corrections, Convention, CorrectionCurve, CouplingVector};
use ligament_bands::config::default_eta_grid;
use ligament_bands::eigen::EigenOptions;
use ligament_bands::elastic::isotropic_hooke;
use ligament_bands::geometry::{CellParams, MeshSpec};
use ligament_bands::limit::LimitOptions;
use ligament_bands::pipeline::{CellModel, LimitModel};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn default_convention() -> Convention {
    Convention::Factor2
}

fn default_n_eta() -> usize {
    33
}

#[derive(Deserialize)]
pub struct CurveInput {
    pub lambda: f64,
    pub a: f64,
    pub trace_top: [f64; 3],
    pub trace_bottom: [f64; 3],
    pub m_plus: [[f64; 3]; 3],
    pub h: f64,
    #[serde(default = "default_convention")]
    pub convention: Convention,
    #[serde(default = "default_n_eta")]
    pub n_eta: usize,
}

#[derive(Serialize)]
pub struct CurveOutput {
    pub curve: CorrectionCurve,
    pub band: ligament_bands::asymptotics::PredictedBand,
    /// `λ + h Λ′(η)` on the curve's grid.
    pub dispersion: Vec<f64>,
}

pub fn correction_curve_impl(input: &str) -> Result<String, String> {
    let p: CurveInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if p.n_eta < 2 {
        return Err("n_eta must be at least 2".into());
    }
    let cv = CouplingVector::from_traces(p.trace_top, p.trace_bottom);
    let curve = CorrectionCurve::new(0, p.lambda, p.a, &cv, &p.m_plus, p.convention, &default_eta_grid(p.n_eta));
    let band = predicted_band(&curve, p.h);
    let dispersion = curve.values.iter().map(|v| p.lambda + p.h * v).collect();
    serde_json::to_string(&CurveOutput { curve, band, dispersion }).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
pub struct RigidInput {
    pub half_x: f64,
    pub half_y: f64,
    pub m_plus: [[f64; 3]; 3],
    pub h: f64,
    #[serde(default = "default_convention")]
    pub convention: Convention,
    #[serde(default = "default_n_eta")]
    pub n_eta: usize,
}

#[derive(Serialize)]
pub struct RigidOutput {
    pub betas: [f64; 6],
    pub etas: Vec<f64>,
    /// `h μ_j(η)`, sorted, three zeros first.
    pub bands: Vec<[f64; 6]>,
}

/// Normalization constants of the rigid motions of the box `ϖ_0`.
pub fn box_betas(half_x: f64, half_y: f64) -> [f64; 6] {
    let v = 4.0 * half_x * half_y;
    let j = [v * half_x * half_x / 3.0, v * half_y * half_y / 3.0, v / 12.0];
    let t = v.powf(-0.5);
    [t, t, t, (j[1] + j[2]).powf(-0.5), (j[0] + j[2]).powf(-0.5), (j[0] + j[1]).powf(-0.5)]
}

pub fn rigid_predictions_impl(input: &str) -> Result<String, String> {
    let p: RigidInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if !(p.half_x > 0.0 && p.half_y > 0.0) || p.n_eta < 2 {
        return Err("half widths must be positive and n_eta at least 2".into());
    }
    let betas = box_betas(p.half_x, p.half_y);
    let etas = default_eta_grid(p.n_eta);
    let bands = etas
        .iter()
        .map(|&eta| rigid_corrections(&betas, &p.m_plus, eta, p.convention).map(|v| p.h * v))
        .collect();
    serde_json::to_string(&RigidOutput { betas, etas, bands }).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
pub struct DispersionInput {
    pub cell: CellParams,
    pub h: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_small_n_eta")]
    pub n_eta: usize,
    #[serde(default = "default_n_bands")]
    pub n_bands: usize,
}

fn default_resolution() -> f64 {
    0.25
}

fn default_small_n_eta() -> usize {
    9
}

fn default_n_bands() -> usize {
    9
}

#[derive(Serialize)]
pub struct DispersionOutput {
    pub h: f64,
    pub n_dofs: usize,
    pub limit: Vec<f64>,
    pub etas: Vec<f64>,
    pub bands: Vec<Vec<f64>>,
}

/// Direct dispersion on a coarse mesh with isotropic `λ = μ = 1`.
pub fn coarse_dispersion_impl(input: &str) -> Result<String, String> {
    let p: DispersionInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if p.n_eta < 2 || p.n_bands < 7 {
        return Err("n_eta must be at least 2 and n_bands at least 7".into());
    }
    let err = |e: ligament_bands::Error| e.to_string();
    p.cell.validate().map_err(err)?;
    let a = isotropic_hooke(1.0, 1.0).map_err(err)?;
    let spec = MeshSpec {
        resolution: p.resolution,
        growth: 2.0,
        ..MeshSpec::default()
    };
    let lo = LimitOptions {
        n_eigs: p.n_bands,
        ..LimitOptions::default()
    };
    let limit = LimitModel::build(&p.cell, &a, p.h, &spec, &lo).map_err(err)?;
    let cell = CellModel::build(&p.cell, &a, p.h, &spec).map_err(err)?;
    let eo = EigenOptions {
        n_eigs: p.n_bands,
        block: 8,
        ..EigenOptions::default()
    };
    let etas = default_eta_grid(p.n_eta);
    let d = cell.sweep(&etas, &eo);
    if !d.is_complete() {
        return Err(d.failures.join("; "));
    }
    let out = DispersionOutput {
        h: p.h,
        n_dofs: d.n_dofs,
        limit: limit.spectrum.eigenvalues.clone(),
        etas: d.etas.clone(),
        bands: d.values.into_iter().map(Option::unwrap).collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// `Λ′(η)` of one simple band and its predicted band interval.
#[wasm_bindgen]
pub fn correction_curve(input: &str) -> Result<String, JsValue> {
    correction_curve_impl(input).map_err(|e| JsValue::from_str(&e))
}

/// Asymptotics of the six lowest bands from the rigid motions.
#[wasm_bindgen]
pub fn rigid_predictions(input: &str) -> Result<String, JsValue> {
    rigid_predictions_impl(input).map_err(|e| JsValue::from_str(&e))
}

/// Finite element band diagram on a coarse mesh.
#[wasm_bindgen]
pub fn coarse_dispersion(input: &str) -> Result<String, JsValue> {
    coarse_dispersion_impl(input).map_err(|e| JsValue::from_str(&e))
}
