//! Monte Carlo replication of empirical sizes and powers, bandwidth sweeps
//! and power curves.
//!
//! A replication's seed depends on the master seed, the model cell and the
//! replication index only. Every test and bandwidth constant in a cell is
//! evaluated on the same data, and replication results are collected in
//! index order, so output is identical for any worker count.

use std::io::Write;

use serde::Serialize;

use crate::dgp::{generate, replication_seed, ModelId, ModelSpec};
use crate::error::{Error, Result};
use crate::kernels::BandwidthPlan;
use crate::teststat::{evaluate, prepare, CriticalConvention, RegimeRequest, TestConfig};

/// Share of failed replications above which a cell is flagged invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ValidationSize {
    /// `N = round(ratio · n)`.
    Ratio(f64),
    Explicit(usize),
}

impl ValidationSize {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let big_n = match *self {
            ValidationSize::Ratio(r) if r > 0.0 && r.is_finite() => (r * n as f64).round() as usize,
            ValidationSize::Ratio(r) => {
                return Err(Error::InvalidConfig(format!("ratio must be positive, got {r}")))
            }
            ValidationSize::Explicit(k) => k,
        };
        if big_n < 2 {
            return Err(Error::InvalidConfig(format!(
                "validation size must be at least 2, got {big_n}"
            )));
        }
        Ok(big_n)
    }
}

/// A test in a simulation cell. With `c = None` the cell's bandwidth
/// constant is used; otherwise the test keeps its own constant. A zero
/// constant is accepted so sweeps can include the grid origin; every
/// replication of such a cell is counted as a failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McTest {
    pub regime: RegimeRequest,
    pub c: Option<f64>,
}

impl McTest {
    pub fn new(regime: RegimeRequest) -> Self {
        Self { regime, c: None }
    }

    pub fn with_c(regime: RegimeRequest, c: f64) -> Self {
        Self { regime, c: Some(c) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig {
    /// Model, dimension and covariance; its `a` is replaced by each grid value.
    pub spec: ModelSpec,
    pub n: usize,
    pub validation: ValidationSize,
    pub reps: usize,
    pub a_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub tests: Vec<McTest>,
    pub alpha: f64,
    pub seed: u64,
    pub critical: CriticalConvention,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl McConfig {
    /// Table-replication defaults: `N = 4n`, 500 replications, `c = 1.6`, the
    /// split test, 1.65 critical value.
    pub fn new(spec: ModelSpec, n: usize) -> Self {
        let a = spec.a;
        Self {
            spec,
            n,
            validation: ValidationSize::Ratio(4.0),
            reps: 500,
            a_grid: vec![a],
            c_grid: vec![1.6],
            tests: vec![McTest::new(RegimeRequest::Split)],
            alpha: 0.05,
            seed: 0,
            critical: CriticalConvention::Literal165,
            workers: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.a_grid.is_empty() || self.c_grid.is_empty() || self.tests.is_empty() {
            return Err(Error::InvalidConfig(
                "a grid, c grid and test list must be nonempty".into(),
            ));
        }
        if self.c_grid.iter().chain(self.tests.iter().filter_map(|t| t.c.as_ref())).any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidConfig("bandwidth constants must be nonnegative".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.critical.critical_value(self.alpha)?;
        Ok(())
    }

    /// `(test index, c)` pairs evaluated per replication. Tests with their
    /// own constant appear once.
    fn cells(&self) -> Vec<(usize, f64)> {
        let mut cells = Vec::new();
        for (t, test) in self.tests.iter().enumerate() {
            match test.c {
                Some(c) => cells.push((t, c)),
                None => cells.extend(self.c_grid.iter().map(|&c| (t, c))),
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub test: String,
    pub model: String,
    pub p: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub a: f64,
    pub c: f64,
    /// Replications that produced a statistic.
    pub reps: usize,
    pub reject_rate: f64,
    pub mean_stat: f64,
    pub sd_stat: f64,
    pub failures: usize,
}

impl McRow {
    /// False when more than 1% of replications failed.
    pub fn valid(&self) -> bool {
        let total = self.reps + self.failures;
        total > 0 && self.reps > 0 && (self.failures as f64) <= MAX_FAILURE_SHARE * total as f64
    }

    pub fn rejections(&self) -> usize {
        (self.reject_rate * self.reps as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct McResult {
    pub rows: Vec<McRow>,
}

impl McResult {
    pub fn find(&self, test: &str, a: f64, c: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.test == test && r.a == a && r.c == c)
    }
}

type CellOutcome = Option<(f64, bool)>;

fn replicate(config: &McConfig, spec: &ModelSpec, big_n: usize, rep: usize, cells: &[(usize, f64)]) -> Vec<CellOutcome> {
    let seed = replication_seed(config.seed, spec, config.n, big_n, rep as u64);
    let Ok(data) = generate(spec, config.n, big_n, seed) else {
        return vec![None; cells.len()];
    };
    let link = spec.link();
    let Ok(prepared) = prepare(&data.primary, &data.validation, link) else {
        return vec![None; cells.len()];
    };
    cells
        .iter()
        .map(|&(t, c)| {
            let test = &config.tests[t];
            let plan = BandwidthPlan::standard(c).ok()?;
            let cfg = TestConfig {
                link,
                plan,
                alpha: config.alpha,
                regime: test.regime,
                critical: config.critical,
            };
            evaluate(&data.primary, &data.validation, &prepared, &cfg)
                .ok()
                .map(|o| (o.standardized, o.reject))
        })
        .collect()
}

fn run_reps(config: &McConfig, spec: &ModelSpec, big_n: usize, cells: &[(usize, f64)]) -> Vec<Vec<CellOutcome>> {
    let job = |rep: usize| replicate(config, spec, big_n, rep, cells);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let par = || (0..config.reps).into_par_iter().map(job).collect::<Vec<_>>();
        match config.workers {
            Some(1) => return (0..config.reps).map(job).collect(),
            Some(k) => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                    return pool.install(par);
                }
            }
            None => {}
        }
        par()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..config.reps).map(job).collect()
    }
}

fn summarize(values: &[(f64, bool)]) -> (f64, f64, f64) {
    let k = values.len();
    if k == 0 {
        return (0.0, f64::NAN, f64::NAN);
    }
    let rejects = values.iter().filter(|(_, r)| *r).count();
    let mean = values.iter().map(|(s, _)| s).sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (values.iter().map(|(s, _)| (s - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    (rejects as f64 / k as f64, mean, sd)
}

/// Runs every `(a, c, test)` cell of the configuration.
pub fn run_mc(config: &McConfig) -> Result<McResult> {
    config.validate()?;
    let big_n = config.validation.resolve(config.n)?;
    let cells = config.cells();
    let mut result = McResult::default();
    for &a in &config.a_grid {
        let spec = config.spec.with_a(a);
        let outcomes = run_reps(config, &spec, big_n, &cells);
        for (k, &(t, c)) in cells.iter().enumerate() {
            let values: Vec<(f64, bool)> = outcomes.iter().filter_map(|o| o[k]).collect();
            let (reject_rate, mean_stat, sd_stat) = summarize(&values);
            result.rows.push(McRow {
                test: config.tests[t].regime.name().to_string(),
                model: spec.model.name().to_string(),
                p: spec.p,
                n: config.n,
                big_n,
                a,
                c,
                reps: values.len(),
                reject_rate,
                mean_stat,
                sd_stat,
                failures: config.reps - values.len(),
            });
        }
    }
    Ok(result)
}

/// Empirical size over the bandwidth grid; every test follows the grid.
pub fn bandwidth_sweep(config: &McConfig) -> Result<McResult> {
    if config.a_grid.iter().any(|&a| a != 0.0) {
        return Err(Error::InvalidConfig(
            "a bandwidth sweep reports sizes, so every a must be 0".into(),
        ));
    }
    let mut cfg = config.clone();
    for test in &mut cfg.tests {
        test.c = None;
    }
    run_mc(&cfg)
}

/// Power over the `a` grid for each model. The covariate dimension is raised
/// to the model's minimum where needed.
pub fn power_curve(config: &McConfig, models: &[ModelId]) -> Result<McResult> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("power curve needs at least one model".into()));
    }
    let mut result = McResult::default();
    for &model in models {
        let mut cfg = config.clone();
        cfg.spec = ModelSpec {
            model,
            p: config.spec.p.max(model.min_p()),
            ..config.spec.clone()
        };
        result.rows.extend(run_mc(&cfg)?.rows);
    }
    Ok(result)
}

pub const CSV_HEADER: &str = "test,model,p,n,N,a,c,reps,reject_rate,mean_stat,sd_stat,failures";

pub fn write_csv<W: Write>(result: &McResult, out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    for row in &result.rows {
        csv.serialize(row).map_err(io)?;
    }
    if result.rows.is_empty() {
        csv.write_record(CSV_HEADER.split(',')).map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Rejection rate against `c`, one curve per test and dimension.
    SizeVsBandwidth,
    /// Rejection rate against `a`, one curve per test and model.
    PowerVsA,
}

/// A gnuplot script that plots `csv_path` as written by [`write_csv`].
pub fn gnuplot_script(result: &McResult, csv_path: &str, kind: PlotKind) -> String {
    let (xcol, xlabel) = match kind {
        PlotKind::SizeVsBandwidth => (7, "c"),
        PlotKind::PowerVsA => (6, "a"),
    };
    let mut groups: Vec<(String, String, usize)> = Vec::new();
    for r in &result.rows {
        let key = (r.test.clone(), r.model.clone(), r.p);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key outside right\n");
    s.push_str(&format!("set xlabel '{xlabel}'\n"));
    s.push_str("set ylabel 'rejection rate'\n");
    s.push_str("set yrange [0:1]\n");
    if kind == PlotKind::SizeVsBandwidth {
        s.push_str("set arrow from graph 0, first 0.05 to graph 1, first 0.05 nohead dt 2\n");
    }
    let plots: Vec<String> = groups
        .iter()
        .map(|(test, model, p)| {
            format!(
                "'{csv_path}' every ::1 using (strcol(1) eq '{test}' && strcol(2) eq '{model}' && $3 == {p} ? ${xcol} : 1/0):9 with linespoints title '{test} {model} p={p}'"
            )
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&plots.join(", \\\n     "));
    s.push('\n');
    s
}
