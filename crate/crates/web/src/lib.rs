//! Browser bindings: the Carleman weight over the space-time rectangle, the
//! weighted-integral lemma ratios, and the stability parameter calculus.
//! Results cross the boundary as JSON strings or flat `f64` arrays.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mfg_cip::carleman::{verify_lemma, weight_extrema, weight_scaled, CarlemanParams, Lemma};
use mfg_cip::family::random_family;
use mfg_cip::kernels::{Kernel, YBar};
use mfg_cip::stability::{epsilon_window, select_parameters};
use mfg_cip::{make_grid, Prism};

fn error(e: impl std::fmt::Display) -> Value {
    json!({ "error": e.to_string() })
}

/// `φ_λ / max φ_λ` on an `nx × nt` grid of `(a, b) × (0, T)`, time-major.
pub fn weight_map(a: f64, b: f64, t_final: f64, lambda: f64, alpha: f64, nx: usize, nt: usize) -> Result<Vec<f64>, String> {
    let prism = Prism::interval(a, b, t_final).map_err(|e| e.to_string())?;
    let grid = make_grid(prism, vec![nx], nt).map_err(|e| e.to_string())?;
    let p = CarlemanParams::new(lambda, alpha).map_err(|e| e.to_string())?;
    let w = weight_scaled(&p, &grid, p.peak_log(grid.prism()));
    Ok(w.data().iter().copied().collect())
}

/// Extrema of the weight: peak, its location and the minimum over the
/// truncated cylinder `|t − T/2| < T/2 − ε`, all in log scale.
pub fn weight_info(a: f64, b: f64, t_final: f64, lambda: f64, alpha: f64, eps: f64) -> Value {
    let run = || -> Result<Value, String> {
        let prism = Prism::interval(a, b, t_final).map_err(|e| e.to_string())?;
        let p = CarlemanParams::new(lambda, alpha).map_err(|e| e.to_string())?;
        let grid = make_grid(prism.clone(), vec![129], 257).map_err(|e| e.to_string())?;
        let log_peak = p.peak_log(&prism);
        let extrema = weight_extrema(&p, &grid, eps).ok();
        Ok(json!({
            "log_max": log_peak,
            "log_min_truncated": extrema.as_ref().map(|e| e.min_truncated.ln()),
            "argmax": extrema.as_ref().map(|e| [e.argmax.0, e.argmax.1]),
            "negligible_decays": p.negligible_decays(&prism),
        }))
    };
    run().unwrap_or_else(error)
}

/// Lemma ratios `∫(Ih)²φ / ∫h²φ` over `λ` for `members` seeded test
/// functions on `(1, 2) × (0, 1)`.
pub fn lemma_report(which: &str, lambdas: &[f64], alpha: f64, members: usize, seed: u64) -> Value {
    let run = || -> Result<Value, String> {
        let lemma = Lemma::parse(which).map_err(|e| e.to_string())?;
        let kernel = match lemma {
            Lemma::TimeIntegral => None,
            Lemma::SeparableKernel => Some(Kernel::separable(YBar::Constant(1.0))),
            Lemma::CausalKernel => Some(Kernel::causal(YBar::Constant(1.0))),
        };
        // The separable form needs a transverse variable to act on.
        let (prism, nx, nt) = match lemma {
            Lemma::SeparableKernel => (Prism::new(1.0, 2.0, vec![1.0], 1.0), vec![33, 9], 65),
            Lemma::TimeIntegral => (Prism::interval(1.0, 2.0, 1.0), vec![33], 513),
            Lemma::CausalKernel => (Prism::interval(1.0, 2.0, 1.0), vec![65], 129),
        };
        let grid = make_grid(prism.map_err(|e| e.to_string())?, nx, nt).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for f in random_family(grid.dim(), members, seed) {
            let r = verify_lemma(lemma, &f.sample(&grid), kernel.as_ref(), alpha, lambdas).map_err(|e| e.to_string())?;
            rows.push(json!({ "ratios": r.ratios, "slope": r.slope, "spread": r.spread, "pass": r.pass }));
        }
        let mut ls = lambdas.to_vec();
        ls.sort_by(f64::total_cmp);
        Ok(json!({ "lemma": lemma.label(), "lambdas": ls, "members": rows }))
    };
    run().unwrap_or_else(error)
}

/// `s, β, α, d, δ₀` for the given `ρ, ε` on `(a, b) × (0, T)`, with the
/// admissible `ε`-window.
pub fn parameters(rho: f64, eps: f64, a: f64, b: f64, t_final: f64, lambda1: f64) -> Value {
    let (lo, hi) = epsilon_window(rho, t_final);
    let window = json!([lo, hi]);
    match Prism::interval(a, b, t_final).and_then(|p| select_parameters(rho, eps, &p, lambda1)) {
        Ok(p) => json!({ "params": p, "window": window }),
        Err(e) => json!({ "error": e.to_string(), "window": window }),
    }
}

#[wasm_bindgen(js_name = weightMap)]
pub fn weight_map_js(a: f64, b: f64, t_final: f64, lambda: f64, alpha: f64, nx: usize, nt: usize) -> Result<Vec<f64>, JsError> {
    weight_map(a, b, t_final, lambda, alpha, nx, nt).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = weightInfo)]
pub fn weight_info_js(a: f64, b: f64, t_final: f64, lambda: f64, alpha: f64, eps: f64) -> String {
    weight_info(a, b, t_final, lambda, alpha, eps).to_string()
}

#[wasm_bindgen(js_name = lemmaReport)]
pub fn lemma_report_js(which: &str, lambdas: Vec<f64>, alpha: f64, members: usize, seed: u64) -> String {
    lemma_report(which, &lambdas, alpha, members, seed).to_string()
}

#[wasm_bindgen(js_name = stabilityParameters)]
pub fn parameters_js(rho: f64, eps: f64, a: f64, b: f64, t_final: f64, lambda1: f64) -> String {
    parameters(rho, eps, a, b, t_final, lambda1).to_string()
}
