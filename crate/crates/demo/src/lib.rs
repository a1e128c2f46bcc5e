//! Browser demo: KDE density grid, density-based sampling, reward combination
//! and early-stop rate, exported through wasm-bindgen.

use serde::Serialize;
use usp_core::authenticity::esr;
use usp_core::reward::combine;
use usp_core::sampler::{fit_kde, sample_majority, sample_minority, DensityModel, ReducedPoint};
use usp_core::{Dialogue, Role, UserProfile};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct DensityGrid {
    pub bandwidth: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `ny` rows of `nx` values, row 0 at `y_min`.
    pub values: Vec<f64>,
    pub max: f64,
}

#[derive(Debug, Serialize)]
pub struct EsrResult {
    pub rate: f64,
    pub total: usize,
    pub flagged: Vec<usize>,
}

fn parse_points(json: &str) -> Result<Vec<[f64; 2]>, String> {
    serde_json::from_str(json).map_err(|e| format!("points must be a JSON array of [x, y] pairs: {e}"))
}

fn model(points: &[[f64; 2]], bandwidth: f64) -> Result<DensityModel, String> {
    let reduced = points
        .iter()
        .enumerate()
        .map(|(i, p)| ReducedPoint {
            id: i.to_string(),
            coords: p.to_vec(),
        })
        .collect();
    let bw = (bandwidth > 0.0).then_some(bandwidth);
    fit_kde(reduced, bw).map_err(|e| e.to_string())
}

/// Density of the KDE fitted to `points` on an `nx` × `ny` grid over the given box.
/// A non-positive `bandwidth` selects Scott's rule.
pub fn density_grid(
    points: &[[f64; 2]],
    bandwidth: f64,
    (x_min, x_max, y_min, y_max): (f64, f64, f64, f64),
    nx: usize,
    ny: usize,
) -> Result<DensityGrid, String> {
    if nx < 2 || ny < 2 {
        return Err("grid needs at least 2 × 2 cells".into());
    }
    let m = model(points, bandwidth)?;
    let mut values = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = y_min + (y_max - y_min) * j as f64 / (ny - 1) as f64;
        for i in 0..nx {
            let x = x_min + (x_max - x_min) * i as f64 / (nx - 1) as f64;
            values.push(m.density(&[x, y]));
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(DensityGrid {
        bandwidth: m.bandwidth,
        x_min,
        x_max,
        y_min,
        y_max,
        nx,
        ny,
        values,
        max,
    })
}

/// Indices of `n` points picked by `strategy` ("major" or "minor").
pub fn sample_indices(points: &[[f64; 2]], bandwidth: f64, strategy: &str, n: usize, seed: u64) -> Result<Vec<usize>, String> {
    let m = model(points, bandwidth)?;
    let profiles: Vec<UserProfile> = (0..points.len())
        .map(|i| UserProfile::from_narratives(i.to_string(), "", ""))
        .collect();
    let picked = match strategy {
        "major" => sample_majority(&m, &profiles, n),
        "minor" => sample_minority(&m, &profiles, n, seed),
        other => return Err(format!("unknown strategy {other:?}; use major or minor")),
    }
    .map_err(|e| e.to_string())?;
    Ok(picked.iter().map(|p| p.id.parse().expect("ids are indices")).collect())
}

/// Early-stop rate over dialogues given as blocks of user turns, one per
/// line, separated by blank lines.
pub fn esr_from_text(text: &str, threshold: f64) -> Result<EsrResult, String> {
    let dialogues: Vec<Dialogue> = text
        .split("\n\n")
        .map(|block| block.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>())
        .filter(|users| !users.is_empty())
        .enumerate()
        .map(|(i, users)| {
            let turns = users
                .into_iter()
                .flat_map(|u| [(Role::User, u.to_string()), (Role::Assistant, "(assistant reply)".to_string())]);
            Dialogue::new(i.to_string(), turns).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let r = esr(&dialogues, threshold).map_err(|e| e.to_string())?;
    Ok(EsrResult {
        rate: r.rate,
        total: r.total,
        flagged: r.flagged.iter().map(|id| id.parse().expect("ids are indices")).collect(),
    })
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("demo results serialize"))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = densityGrid)]
#[allow(clippy::too_many_arguments)]
pub fn density_grid_js(
    points_json: &str,
    bandwidth: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
) -> Result<String, JsError> {
    js(parse_points(points_json).and_then(|p| density_grid(&p, bandwidth, (x_min, x_max, y_min, y_max), nx, ny)))
}

#[wasm_bindgen(js_name = sampleIndices)]
pub fn sample_indices_js(points_json: &str, bandwidth: f64, strategy: &str, n: usize, seed: u32) -> Result<String, JsError> {
    js(parse_points(points_json).and_then(|p| sample_indices(&p, bandwidth, strategy, n, u64::from(seed))))
}

#[wasm_bindgen(js_name = combineReward)]
pub fn combine_reward_js(r_cc: f64, r_ai: f64, lambda: f64) -> Result<f64, JsError> {
    combine(r_cc, r_ai, lambda).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = earlyStopRate)]
pub fn early_stop_rate_js(text: &str, threshold: f64) -> Result<String, JsError> {
    js(esr_from_text(text, threshold))
}
