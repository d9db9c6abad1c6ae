//! WebAssembly bindings for the static demo page in `www/`. Every export
//! takes plain numbers and returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qlink_core::calibration::{scan_ratios, PhaseSearch, ScanPoint};
use qlink_core::experiments::{self, Config, ExperimentKind, NoiseSpec, Payload};
use qlink_core::noise::NoiseModel;
use qlink_core::protocol::ProtocolConfig;
use qlink_core::quantum::gates;
use qlink_core::tomography::ProcessMatrix;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Calibrated profile with the Bell-pair and local-gate errors replaced.
fn noise_with(werner_p: f64, local_cz: f64) -> NoiseModel {
    let mut m = NoiseModel::calibrated();
    m.bell.werner_p = werner_p;
    m.alice.local_cz_depolarizing = local_cz;
    m.bob.local_cz_depolarizing = local_cz;
    m
}

#[derive(Serialize)]
struct ChiView {
    labels: Vec<String>,
    /// `|χ_ab|`, row-major.
    magnitude: Vec<Vec<f64>>,
    average_gate_fidelity: f64,
    process_fidelity: f64,
}

fn chi_view(werner_p: f64, local_cz: f64, seed: u64) -> qlink_core::Result<ChiView> {
    let noise = noise_with(werner_p, local_cz);
    let ch = experiments::teleported_cz_channel(&noise, &ProtocolConfig::default(), 2, seed)?;
    let chi: ProcessMatrix = ch.process()?;
    let cz = gates::cz();
    Ok(ChiView {
        labels: ProcessMatrix::labels(),
        magnitude: (0..16).map(|i| (0..16).map(|j| chi.chi[(i, j)].norm()).collect()).collect(),
        average_gate_fidelity: chi.average_gate_fidelity(&cz)?,
        process_fidelity: chi.process_fidelity(&cz)?,
    })
}

/// Process matrix of the teleported CZ for a Werner weight and local CZ
/// depolarizing probability; everything else calibrated.
#[wasm_bindgen]
pub fn teleported_cz_chi(werner_p: f64, local_cz: f64, seed: u32) -> Result<String, JsError> {
    let view = chi_view(werner_p, local_cz, seed as u64).map_err(js_err)?;
    serde_json::to_string(&view).map_err(js_err)
}

/// Grover histograms for all four marked states.
#[wasm_bindgen]
pub fn grover(werner_p: f64, local_cz: f64, shots: u32, seed: u32) -> Result<String, JsError> {
    let mut cfg = Config {
        noise: NoiseSpec::Custom(Box::new(noise_with(werner_p, local_cz))),
        ..Config::default()
    };
    cfg.grover.shots = shots.max(1) as u64;
    let r = experiments::run(ExperimentKind::Grover, &cfg, seed as u64).map_err(js_err)?;
    match r.payload {
        Payload::Grover(g) => serde_json::to_string(&g).map_err(js_err),
        _ => Err(JsError::new("unexpected payload")),
    }
}

/// Optimal middle phase and leakage over a range of Rabi ratios (kHz).
#[wasm_bindgen]
pub fn composite_scan(rabi_t0: f64, detuning: f64, ratio_min: f64, ratio_max: f64, steps: u32) -> Result<String, JsError> {
    let n = steps.max(2);
    let ratios: Vec<f64> = (0..n)
        .map(|k| ratio_min + (ratio_max - ratio_min) * k as f64 / (n - 1) as f64)
        .collect();
    let scan: Vec<ScanPoint> =
        scan_ratios(rabi_t0, detuning, &ratios, &PhaseSearch::default()).map_err(js_err)?;
    serde_json::to_string(&scan).map_err(js_err)
}
