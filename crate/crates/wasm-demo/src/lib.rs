//! Browser bindings for three small operations: draw a Gaussian random
//! field as an image, estimate its radial spectrum, and pair two point
//! clouds by exact optimal assignment.
//!
//! Build with `wasm-pack build --target web crates/wasm-demo` and serve
//! `www/` next to the generated `pkg/`.

use fotcfm::evalmetrics::radial_spectrum;
use fotcfm::grf::build_sampler;
use fotcfm::otcouple::{solve_assignment, CostMatrix};
use fotcfm::{Field, GridSpec, KernelSpec, Result};
use wasm_bindgen::prelude::*;

fn sampler(n: usize, nu: f64, length_scale: f64, seed: u64) -> Result<fotcfm::GrfSampler> {
    let grid = GridSpec::torus(n)?;
    build_sampler(KernelSpec::new(nu, length_scale, 1.0, 0.0)?, grid, seed)
}

/// Diverging blue-white-red colour map, symmetric about zero.
pub fn field_to_rgba(f: &Field) -> Vec<u8> {
    let scale = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut out = Vec::with_capacity(4 * f.values().len());
    for &v in f.values() {
        let t = (v / scale).clamp(-1.0, 1.0);
        let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
        let (r, g, b) = if t >= 0.0 {
            (255, fade(t), fade(t))
        } else {
            (fade(t), fade(t), 255)
        };
        out.extend_from_slice(&[r, g, b, 255]);
    }
    out
}

pub fn grf_rgba(n: usize, nu: f64, length_scale: f64, seed: u64) -> Result<Vec<u8>> {
    let f = sampler(n, nu, length_scale, seed)?.sample_at(0);
    Ok(field_to_rgba(&f))
}

/// Mean radial energy of `count` draws, one value per integer shell.
pub fn grf_spectrum(n: usize, nu: f64, length_scale: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let mut s = sampler(n, nu, length_scale, seed)?;
    let fields = s.sample(count.max(1))?;
    Ok(radial_spectrum(&fields)?.energy)
}

/// Pairs points of `a` with points of `b` (flat `[x0, y0, x1, y1, ...]`)
/// minimising total squared distance. Entry `i` is the partner of `a[i]`.
pub fn pair_points(a: &[f64], b: &[f64]) -> Result<Vec<u32>> {
    if a.len() != b.len() || !a.len().is_multiple_of(2) || a.is_empty() {
        return Err(fotcfm::Error::InvalidArgument(format!(
            "point arrays must have equal even length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() / 2;
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dx = a[2 * i] - b[2 * j];
            let dy = a[2 * i + 1] - b[2 * j + 1];
            cost.push(dx * dx + dy * dy);
        }
    }
    let c = solve_assignment(&CostMatrix::from_entries(n, cost)?)?;
    Ok(c.sigma.into_iter().map(|s| s as u32).collect())
}

fn js(e: fotcfm::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = grfImage)]
pub fn grf_image(n: usize, nu: f64, length_scale: f64, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    grf_rgba(n, nu, length_scale, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = radialSpectrum)]
pub fn radial_spectrum_js(
    n: usize,
    nu: f64,
    length_scale: f64,
    count: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    grf_spectrum(n, nu, length_scale, count, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = pairPoints)]
pub fn pair_points_js(a: &[f64], b: &[f64]) -> std::result::Result<Vec<u32>, JsError> {
    pair_points(a, b).map_err(js)
}
