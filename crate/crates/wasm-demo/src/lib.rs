//! Browser bindings. Every export returns a JSON string: the payload on
//! success, `{"error": "..."}` otherwise.

use eiv_adapt::dgp::{generate, ModelId, ModelSpec, SigmaChoice};
use eiv_adapt::mc::{bandwidth_sweep, power_curve as mc_power_curve, McConfig, McResult, McTest, ValidationSize};
use eiv_adapt::{run_test, Error, LinkFunction, RegimeRequest, Result, TestConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

fn respond(result: Result<Value>) -> String {
    match result {
        Ok(value) => value.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn model_spec(model: &str, p: usize, a: f64) -> Result<ModelSpec> {
    let model: ModelId = model.parse()?;
    ModelSpec::new(model, p.max(model.min_p()), a, SigmaChoice::Identity)
}

fn grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(hi > lo) {
        return Err(Error::InvalidConfig("a grid needs two or more points and hi > lo".into()));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| lo + step * k as f64).collect())
}

fn series(result: &McResult) -> Value {
    let mut tests: Vec<&str> = Vec::new();
    for row in &result.rows {
        if !tests.contains(&row.test.as_str()) {
            tests.push(&row.test);
        }
    }
    tests
        .iter()
        .map(|t| {
            let rows: Vec<_> = result.rows.iter().filter(|r| r.test == *t).collect();
            json!({
                "test": t,
                "model": rows[0].model,
                "a": rows.iter().map(|r| r.a).collect::<Vec<_>>(),
                "c": rows.iter().map(|r| r.c).collect::<Vec<_>>(),
                "rate": rows.iter().map(|r| r.reject_rate).collect::<Vec<_>>(),
                "failures": rows.iter().map(|r| r.failures).sum::<usize>(),
            })
        })
        .collect()
}

pub fn single_test_value(
    model: &str,
    p: usize,
    n: usize,
    ratio: f64,
    a: f64,
    c: f64,
    regime: &str,
    seed: u64,
) -> Result<Value> {
    let spec = model_spec(model, p, a)?;
    let big_n = ValidationSize::Ratio(ratio).resolve(n)?;
    let data = generate(&spec, n, big_n, seed)?;
    let config = TestConfig::new(spec.link(), c)?.with_regime(RegimeRequest::parse(regime)?);
    let outcome = run_test(&data.primary, &data.validation, &config)?;
    let w = data.primary.w();
    let index: Vec<f64> = (0..n)
        .map(|i| w.row(i).iter().zip(&outcome.beta_hat).map(|(a, b)| a * b).sum())
        .collect();
    let link = match spec.link() {
        LinkFunction::Linear => "linear",
        _ => "cubic",
    };
    Ok(json!({
        "outcome": outcome,
        "link": link,
        "p": spec.p,
        "N": big_n,
        "index": index,
        "y": data.primary.y().as_slice(),
    }))
}

pub fn power_curve_value(model: &str, p: usize, n: usize, reps: usize, a_max: f64, points: usize, seed: u64) -> Result<Value> {
    let spec = model_spec(model, p, 0.0)?;
    let config = McConfig {
        reps,
        seed,
        a_grid: grid(0.0, a_max, points)?,
        tests: vec![McTest::new(RegimeRequest::Split), McTest::with_c(RegimeRequest::Zheng, 3.9)],
        ..McConfig::new(spec.clone(), n)
    };
    let result = mc_power_curve(&config, &[spec.model])?;
    Ok(json!({ "series": series(&result) }))
}

pub fn size_vs_bandwidth_value(p: usize, n: usize, reps: usize, c_min: f64, c_max: f64, points: usize, seed: u64) -> Result<Value> {
    let spec = model_spec("H11", p, 0.0)?;
    let config = McConfig {
        reps,
        seed,
        c_grid: grid(c_min, c_max, points)?,
        tests: vec![McTest::new(RegimeRequest::Split), McTest::new(RegimeRequest::Tilde)],
        ..McConfig::new(spec, n)
    };
    Ok(json!({ "series": series(&bandwidth_sweep(&config)?) }))
}

/// Generates one dataset and runs the test on it.
#[wasm_bindgen]
pub fn single_test(model: &str, p: usize, n: usize, ratio: f64, a: f64, c: f64, regime: &str, seed: u64) -> String {
    respond(single_test_value(model, p, n, ratio, a, c, regime, seed))
}

/// Rejection rates of the split and Zheng tests on `points` values of `a`
/// from 0 to `a_max`.
#[wasm_bindgen]
pub fn power_curve(model: &str, p: usize, n: usize, reps: usize, a_max: f64, points: usize, seed: u64) -> String {
    respond(power_curve_value(model, p, n, reps, a_max, points, seed))
}

/// Empirical size of the split and tilde tests under H11 over a grid of `c`.
#[wasm_bindgen]
pub fn size_vs_bandwidth(p: usize, n: usize, reps: usize, c_min: f64, c_max: f64, points: usize, seed: u64) -> String {
    respond(size_vs_bandwidth_value(p, n, reps, c_min, c_max, points, seed))
}
