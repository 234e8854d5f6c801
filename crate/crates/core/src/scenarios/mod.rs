//! Named experiments with versioned parameter presets. Each runner produces
//! a [`ScenarioReport`] whose summary and verdict are computed from its own
//! tables by [`recompute`], so a stored report can be re-checked without
//! rerunning anything.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

mod book_runs;
mod impact_runs;

pub use book_runs::{
    heat_kernel_convergence, run_cn_convergence, run_cross_validation, run_stationary_book, run_tracking,
    stationary_book_error,
};
pub use impact_runs::{
    dep_can_linear_benchmark, run_arcsine, run_cost_scaling, run_manipulation, run_monotonicity, run_sqrt_law,
};

/// Bumped whenever a preset value changes.
pub const PRESET_VERSION: u32 = 1;

/// Named columns of `f64` rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Domain(format!("table '{}' has no column '{name}'", self.name)))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub id: String,
    pub preset: String,
    pub preset_version: u32,
    pub params: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, f64>,
    pub pass: bool,
}

impl ScenarioReport {
    fn new(settings: &Settings, tables: Vec<Table>, notes: Vec<String>) -> Result<Self> {
        let mut report = Self {
            id: settings.id.to_string(),
            preset: settings.preset.clone(),
            preset_version: PRESET_VERSION,
            params: settings.values.clone(),
            notes,
            tables,
            summary: BTreeMap::new(),
            pass: false,
        };
        let (summary, pass) = recompute(&report)?;
        report.summary = summary;
        report.pass = pass;
        Ok(report)
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Domain(format!("report '{}' has no table '{name}'", self.id)))
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }
}

/// Summary statistics and verdict of a report, from its tables alone.
pub fn recompute(report: &ScenarioReport) -> Result<(BTreeMap<String, f64>, bool)> {
    match report.id.as_str() {
        "sqrt-law" => impact_runs::summarize_sqrt_law(report),
        "cost-scaling" => impact_runs::summarize_cost_scaling(report),
        "manipulation" => impact_runs::summarize_manipulation(report),
        "monotonicity" => impact_runs::summarize_monotonicity(report),
        "arcsine" => impact_runs::summarize_arcsine(report),
        "tracking" => book_runs::summarize_tracking(report),
        "cross-validation" => book_runs::summarize_cross_validation(report),
        "stationary-book" => book_runs::summarize_stationary_book(report),
        "cn-convergence" => book_runs::summarize_cn_convergence(report),
        other => Err(unknown(other)),
    }
}

/// Scenario ids, sorted.
pub const SCENARIOS: &[&str] = &[
    "arcsine",
    "cn-convergence",
    "cost-scaling",
    "cross-validation",
    "manipulation",
    "monotonicity",
    "sqrt-law",
    "stationary-book",
    "tracking",
];

fn unknown(id: &str) -> Error {
    Error::Domain(format!("unknown scenario '{id}'; known: {}", SCENARIOS.join(", ")))
}

/// Preset names per scenario; the first is the default.
pub fn presets(id: &str) -> Result<&'static [&'static str]> {
    Ok(match id {
        "manipulation" => &["asia-ny", "equal-nu"],
        "monotonicity" => &["diffusion", "kappa"],
        "sqrt-law" | "cost-scaling" | "arcsine" | "tracking" | "cross-validation" | "stationary-book"
        | "cn-convergence" => &["default"],
        other => return Err(unknown(other)),
    })
}

/// Numeric settings of one scenario run. Keys are fixed by the preset;
/// overrides may only change existing keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub id: &'static str,
    pub preset: String,
    pub values: BTreeMap<String, f64>,
}

impl Settings {
    pub fn preset(id: &str, preset: Option<&str>) -> Result<Self> {
        let names = presets(id)?;
        let preset = preset.unwrap_or(names[0]);
        if !names.contains(&preset) {
            return Err(Error::Domain(format!(
                "scenario '{id}' has no preset '{preset}'; known: {}",
                names.join(", ")
            )));
        }
        let id = SCENARIOS.iter().copied().find(|s| *s == id).ok_or_else(|| unknown(id))?;
        let pairs: &[(&str, f64)] = match (id, preset) {
            ("sqrt-law", _) => &[
                ("sigma", std::f64::consts::SQRT_2),
                ("L", 1.0),
                ("T", 1.0),
                ("n_steps", 4096.0),
                ("ratio_min", 1e-2),
                ("ratio_max", 1e2),
                ("ratio_count", 9.0),
                ("fit_points", 40.0),
            ],
            ("cost-scaling", _) => &[
                ("sigma", std::f64::consts::SQRT_2),
                ("L", 1.0),
                ("T", 1.0),
                ("n_steps", 4096.0),
                ("large_ratio", 100.0),
                ("small_ratio", 1e-3),
                ("volume_count", 16.0),
                ("volume_span", 100.0),
            ],
            ("manipulation", "asia-ny") => &[
                ("sigma", std::f64::consts::SQRT_2),
                ("L", 1.0),
                ("nu_asia", 0.5),
                ("nu_ny", 0.05),
                ("t_ny", 10.0),
                ("T", 20.0),
                ("ratio", 1e-3),
                ("n_steps", 2000.0),
            ],
            ("manipulation", _) => &[
                ("sigma", std::f64::consts::SQRT_2),
                ("L", 1.0),
                ("nu_asia", 0.05),
                ("nu_ny", 0.05),
                ("t_ny", 10.0),
                ("T", 20.0),
                ("ratio", 1e-3),
                ("n_steps", 2000.0),
            ],
            ("monotonicity", "diffusion") => &[
                ("m0", 1.0),
                ("L", 1.0),
                ("T", 1.0),
                ("n_steps", 1024.0),
                ("min", 0.1),
                ("max", 10.0),
                ("count", 8.0),
            ],
            ("monotonicity", _) => &[
                ("sigma", 1.0),
                ("m0", 1.0),
                ("L", 1.0),
                ("T", 1.0),
                ("n_steps", 1024.0),
                ("min", 1e-3),
                ("max", 1.0),
                ("count", 8.0),
            ],
            ("arcsine", _) => &[
                ("sigma", 1.0),
                ("kappa", 1.0),
                ("L", 1.0),
                ("rate_over_l_sigma", 1e-3),
                ("T", 8.0),
                ("n_steps", 2048.0),
                ("short_kappa_t", 0.05),
                ("short_steps", 1024.0),
            ],
            ("tracking", _) => &[
                ("sigma", 1.0),
                ("L", 1.0),
                ("M", 6.0),
                ("P", 480.0),
                ("dT", 0.0005),
                ("T", 4.0),
                ("vol", 0.5),
                ("seed", 20.0),
                ("kappa_small", 0.1),
                ("kappa_mid", 1.0),
                ("kappa_large", 5.0),
                ("mc_paths", 1000.0),
                ("mc_steps", 1000.0),
                ("mc_t", 1.0),
            ],
            ("cross-validation", _) => &[
                ("sigma", std::f64::consts::SQRT_2),
                ("L", 1.0),
                ("ratio", 0.1),
                ("T", 1.0),
                ("M", 5.0),
                ("P", 500.0),
                ("levels", 3.0),
                ("cfl", 1.0),
                ("n_steps", 500.0),
            ],
            ("stationary-book", _) => &[
                ("sigma", 1.0),
                ("kappa", 0.05),
                ("L", 50.0),
                ("M", 10.0),
                ("P", 200.0),
                ("dT", 0.2),
                ("steps", 1500.0),
            ],
            ("cn-convergence", _) => &[
                ("sigma", 1.0),
                ("M", 8.0),
                ("P", 80.0),
                ("dT", 0.1),
                ("T", 1.0),
                ("width", 0.5),
                ("levels", 3.0),
            ],
            _ => unreachable!("preset names checked above"),
        };
        Ok(Self {
            id,
            preset: preset.to_string(),
            values: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        })
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::Domain(format!(
                "scenario '{}' has no setting '{key}'; known: {}",
                self.id,
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v = self.get(key);
        if !(v >= 1.0 && v.fract() == 0.0 && v < 1e9) {
            return Err(Error::Domain(format!("setting '{key}' must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    }
}

/// Run a scenario with the given settings.
pub fn run(settings: &Settings) -> Result<ScenarioReport> {
    match settings.id {
        "sqrt-law" => run_sqrt_law(settings),
        "cost-scaling" => run_cost_scaling(settings),
        "manipulation" => run_manipulation(settings),
        "monotonicity" => run_monotonicity(settings),
        "arcsine" => run_arcsine(settings),
        "tracking" => run_tracking(settings),
        "cross-validation" => run_cross_validation(settings),
        "stationary-book" => run_stationary_book(settings),
        "cn-convergence" => run_cn_convergence(settings),
        other => Err(unknown(other)),
    }
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain("line fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("line fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Log-log fit dropping the two smallest-`x` points.
pub(crate) fn power_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let kept = pairs.get(2..).unwrap_or(&[]);
    if kept.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0)) {
        return Err(Error::Domain("power-law fit needs positive values".into()));
    }
    let lx: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    fit_line(&lx, &ly)
}

pub(crate) fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Distinct grid indices in `1..=n`, roughly log-spaced.
pub(crate) fn log_nodes(n: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = log_space(1.0, n as f64, count)
        .into_iter()
        .map(|v| (v.round() as usize).clamp(1, n))
        .collect();
    out.dedup();
    out
}

pub(crate) fn sup_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
