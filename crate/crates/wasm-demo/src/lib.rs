//! JSON-in/JSON-out wrappers around `hcrv` for the static page in `www/`.
//! The `*_json` functions are plain Rust and tested natively; the exported
//! bindings only turn errors into JS exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use hcrv::coeffs::{mixture_weights, stirling_column};
use hcrv::data::ingest_groups;
use hcrv::elicitation::{hcrv_moments, hdp_moments, hdp_params_from, solve_hcrv_params};
use hcrv::exact::{build_plan, exact_draw};
use hcrv::{ModelParams, Streams};

const MAX_DRAWS: usize = 20_000;
const RESIDUAL_L: usize = 50;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// hCRV and HDP parameters for target `(σ², ρ)` with their prior moments at `P₀(A)`.
pub fn elicit_json(sigma2: f64, rho: f64, p0a: f64) -> Result<String, String> {
    let h = solve_hcrv_params(sigma2, rho).map_err(err)?;
    let (a, a0) = hdp_params_from(sigma2, rho).map_err(err)?;
    let out = json!({
        "hcrv": {"alpha": h.alpha, "alpha0": h.alpha0, "moments": hcrv_moments(h.alpha, h.alpha0, p0a).map_err(err)?},
        "hdp": {"alpha": a, "alpha0": a0, "moments": hdp_moments(a, a0, p0a).map_err(err)?},
    });
    Ok(out.to_string())
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse `{s}`")))
        .collect()
}

/// Stirling column for per-group counts `q` (comma separated) and the
/// table-count mixture weights at `λ`.
pub fn stirling_json(q: &str, lambda: f64) -> Result<String, String> {
    let q: Vec<u32> = parse_list(q)?;
    if q.iter().map(|&x| x as usize).sum::<usize>() > 2000 {
        return Err("total count above 2000".into());
    }
    let col = stirling_column(&q).map_err(err)?;
    let w = mixture_weights(&col, lambda).map_err(err)?;
    let rows: Vec<Value> =
        (col.h_min..=col.h_max).zip(col.log_s.iter().zip(&w)).map(|(h, (ls, p))| json!({"h": h, "log_s": ls, "weight": p})).collect();
    let mean: f64 = (col.h_min..=col.h_max).zip(&w).map(|(h, p)| h as f64 * p).sum();
    Ok(json!({"h_min": col.h_min, "h_max": col.h_max, "mean_tables": mean, "rows": rows}).to_string())
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// Exact i.i.d. posterior draws for groups given one per line (values
/// separated by commas or spaces).
pub fn posterior_json(groups: &str, alpha: f64, alpha0: f64, draws: usize, seed: u64) -> Result<String, String> {
    let groups: Vec<Vec<f64>> =
        groups.lines().map(parse_list::<f64>).filter(|g| !matches!(g, Ok(v) if v.is_empty())).collect::<Result<_, _>>()?;
    if !(1..=MAX_DRAWS).contains(&draws) {
        return Err(format!("draws must lie in 1..={MAX_DRAWS}"));
    }
    let data = ingest_groups(&groups).map_err(err)?;
    let params = ModelParams::new(alpha, alpha0);
    let mut plan = build_plan(&data, &params).map_err(err)?;
    let mut rng = Streams::new(seed).stream("demo", 0);
    let (d, k) = (data.d(), data.k());
    let mut alpha_t = Vec::with_capacity(draws);
    let mut mean_w = vec![vec![0.0; k]; d];
    let mut mean_res = vec![0.0; d];
    for _ in 0..draws {
        let mut atoms = exact_draw(&mut plan, &data, &mut rng).map_err(err)?;
        atoms.attach_residual(&params, RESIDUAL_L, &mut rng).map_err(err)?;
        let w = atoms.normalize().map_err(err)?;
        alpha_t.push(atoms.latent.alpha_t.unwrap_or(f64::NAN));
        for (i, (row, res)) in mean_w.iter_mut().zip(mean_res.iter_mut()).enumerate() {
            for (m, x) in row.iter_mut().zip(&w.fixed[i]) {
                *m += x / draws as f64;
            }
            *res += w.residual_total(i) / draws as f64;
        }
    }
    let (m, sd) = mean_sd(&alpha_t);
    Ok(json!({
        "d": d,
        "k": k,
        "distinct": data.distinct(),
        "counts": data.counts(),
        "r_opt": plan.r_opt,
        "acceptance": plan.stats.rate(),
        "alpha_t": {"mean": m, "sd": sd},
        "mean_weights": mean_w,
        "mean_residual": mean_res,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn elicit(sigma2: f64, rho: f64, p0a: f64) -> Result<String, JsError> {
    elicit_json(sigma2, rho, p0a).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stirling(q: &str, lambda: f64) -> Result<String, JsError> {
    stirling_json(q, lambda).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn posterior(groups: &str, alpha: f64, alpha0: f64, draws: usize, seed: u64) -> Result<String, JsError> {
    posterior_json(groups, alpha, alpha0, draws, seed).map_err(|e| JsError::new(&e))
}
