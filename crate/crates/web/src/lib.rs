//! WebAssembly bindings for the browser demo. Every export returns JSON.

use std::sync::Arc;

use gsdde::econ::{self, EconConfig};
use gsdde::gcalc::{NoiseSource, VolatilityBand};
use gsdde::relaxed::ChatterConfig;
use gsdde::stats::normal_pdf;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Debug, Serialize)]
pub struct TableView {
    pub x: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    pub normal_pdf: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct PathsView {
    pub t: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    pub mean_terminal: f64,
    pub nonpositive_paths: usize,
}

#[derive(Debug, Serialize)]
pub struct GapView {
    pub level: u32,
    pub gap: f64,
    pub se_gap: f64,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn table_config(sigma_min: f64, sigma_max: f64) -> gsdde::Result<EconConfig> {
    Ok(EconConfig {
        band: VolatilityBand::new(sigma_min, sigma_max)?,
        ..EconConfig::default()
    })
}

/// G-normal density and cdf on `[-4, 4]`, with the standard normal density for reference.
pub fn table_view(sigma_min: f64, sigma_max: f64) -> gsdde::Result<TableView> {
    let table = table_config(sigma_min, sigma_max)?.build_table()?;
    let keep: Vec<usize> = (0..table.x().len()).filter(|&i| table.x()[i].abs() <= 4.0).collect();
    Ok(TableView {
        x: keep.iter().map(|&i| table.x()[i]).collect(),
        pdf: keep.iter().map(|&i| table.pdf()[i]).collect(),
        cdf: keep.iter().map(|&i| table.cdf()[i]).collect(),
        normal_pdf: keep.iter().map(|&i| normal_pdf(table.x()[i])).collect(),
    })
}

/// Uncontrolled capital paths under G-normal increments.
pub fn paths_view(sigma_min: f64, sigma_max: f64, n_paths: usize, seed: u64) -> gsdde::Result<PathsView> {
    let cfg = EconConfig {
        n_paths,
        seed,
        ..table_config(sigma_min, sigma_max)?
    };
    cfg.validate()?;
    let source = NoiseSource::GNormal(Arc::new(cfg.build_table()?));
    let ens = econ::simulate(&cfg, &source)?;
    let terminal = ens.terminal_states();
    Ok(PathsView {
        t: ens.grid.times(),
        mean_terminal: gsdde::stats::mean(&terminal),
        nonpositive_paths: ens.paths.iter().filter(|p| p.states.iter().any(|&k| k <= 0.0)).count(),
        paths: ens.paths.into_iter().map(|p| p.states).collect(),
    })
}

/// Chattering gap per refinement level for a two-action relaxed control with weight `w_plus` on `+1`.
pub fn gap_view(w_plus: f64, n_paths: usize, seed: u64) -> gsdde::Result<Vec<GapView>> {
    let cfg = ChatterConfig {
        weights: vec![1.0 - w_plus, w_plus],
        n_paths,
        seed,
        ..ChatterConfig::default()
    };
    Ok(cfg
        .run()?
        .into_iter()
        .map(|r| GapView {
            level: r.level,
            gap: r.gap,
            se_gap: r.se_gap,
        })
        .collect())
}

#[wasm_bindgen]
pub fn gnormal_table(sigma_min: f64, sigma_max: f64) -> Result<String, String> {
    table_view(sigma_min, sigma_max)
        .map(|v| json(&v))
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn forward_paths(sigma_min: f64, sigma_max: f64, n_paths: usize, seed: u32) -> Result<String, String> {
    paths_view(sigma_min, sigma_max, n_paths, seed.into())
        .map(|v| json(&v))
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn chattering_gap(w_plus: f64, n_paths: usize, seed: u32) -> Result<String, String> {
    gap_view(w_plus, n_paths, seed.into())
        .map(|v| json(&v))
        .map_err(|e| e.to_string())
}
