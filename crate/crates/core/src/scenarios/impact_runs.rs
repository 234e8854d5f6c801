use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::{flag, log_nodes, log_space, power_fit, sup_abs, ScenarioReport, Settings, Table};
use crate::analytic::{arcsine_limit, arcsine_propagator, cost_constant_rate, impact_small_rate, solve_a, Regime};
use crate::error::{Error, Result};
use crate::impact::{solve_impact, KernelVariant, SolverConfig};
use crate::model::{CancellationRate, CancellationWeighting, ExecutionProfile, ModelParams};
use crate::special::{erf, erfc};

type Summary = Result<(BTreeMap<String, f64>, bool)>;

fn config(s: &Settings, key: &str) -> Result<SolverConfig> {
    let cfg = SolverConfig::default().with_steps(s.count(key)?);
    cfg.validate()?;
    Ok(cfg)
}

fn constant_rate_solve(variant: &KernelVariant, m0: f64, horizon: f64, cfg: &SolverConfig) -> Result<(ExecutionProfile, Vec<f64>)> {
    let profile = ExecutionProfile::constant(cfg.grid(horizon)?, m0)?;
    let traj = solve_impact(&profile, variant, cfg)?;
    Ok((profile, traj.y().to_vec()))
}

/// Impact grows like the square root of executed volume along every
/// constant-rate trajectory, with the small- and large-rate prefactors at the
/// ends of the rate range.
pub fn run_sqrt_law(s: &Settings) -> Result<ScenarioReport> {
    let params = ModelParams::plain(s.get("sigma"), s.get("L"))?;
    let horizon = s.get("T");
    let cfg = config(s, "n_steps")?;
    let ratios = log_space(s.get("ratio_min"), s.get("ratio_max"), s.count("ratio_count")?);
    let nodes = log_nodes(cfg.n_steps, s.count("fit_points")?);
    let variant = KernelVariant::Llob(params.clone());
    let j = params.rate_scale();
    let d = params.diffusivity();

    let solved: Vec<(f64, f64, Vec<f64>, f64)> = ratios
        .par_iter()
        .map(|&r| {
            let m0 = r * j;
            let (_, y) = constant_rate_solve(&variant, m0, horizon, &cfg)?;
            Ok((r, m0, y, solve_a(r)?.a))
        })
        .collect::<Result<_>>()?;

    let grid = cfg.grid(horizon)?;
    let mut points = Table::new("points", &["ratio", "t", "Q", "y"]);
    let mut rates = Table::new(
        "rates",
        &["ratio", "m0", "T", "D", "y_T", "Q_T", "a_exact", "small_prefactor", "large_prefactor"],
    );
    for (r, m0, y, a) in &solved {
        for &k in &nodes {
            let t = grid.node(k);
            points.push(vec![*r, t, m0 * t, y[k]]);
        }
        let q = m0 * horizon;
        rates.push(vec![
            *r,
            *m0,
            horizon,
            d,
            y[cfg.n_steps],
            q,
            *a,
            impact_small_rate(horizon, *m0, &params) / q.sqrt(),
            (2.0 / params.slope()).sqrt(),
        ]);
    }
    let notes = vec!["per-rate exponent fits exclude the two smallest-Q points".to_string()];
    ScenarioReport::new(s, vec![points, rates], notes)
}

pub(super) fn summarize_sqrt_law(report: &ScenarioReport) -> Summary {
    let points = report.table("points")?;
    let rates = report.table("rates")?;
    let (pr, pq, py) = (points.column("ratio")?, points.column("Q")?, points.column("y")?);
    let ratios = rates.column("ratio")?;
    if ratios.is_empty() {
        return Err(Error::Domain("sqrt-law report has no rates".into()));
    }
    let mut exps = Vec::new();
    let mut r2_min = f64::INFINITY;
    for &r in &ratios {
        let (q, y): (Vec<f64>, Vec<f64>) = pr
            .iter()
            .zip(pq.iter().zip(&py))
            .filter(|(pr, _)| **pr == r)
            .map(|(_, (q, y))| (*q, *y))
            .unzip();
        let fit = power_fit(&q, &y)?;
        exps.push(fit.slope);
        r2_min = r2_min.min(fit.r2);
    }
    let y_t = rates.column("y_T")?;
    let q_t = rates.column("Q_T")?;
    let pref: Vec<f64> = y_t.iter().zip(&q_t).map(|(y, q)| y / q.sqrt()).collect();
    let last = ratios.len() - 1;
    let large_err = (pref[last] / rates.column("large_prefactor")?[last] - 1.0).abs();
    let small_err = (pref[0] / rates.column("small_prefactor")?[0] - 1.0).abs();
    let (a, t, d) = (rates.column("a_exact")?, rates.column("T")?, rates.column("D")?);
    let a_err = (0..ratios.len())
        .map(|i| (y_t[i] / (a[i] * (d[i] * t[i]).sqrt()) - 1.0).abs())
        .fold(0.0, f64::max);

    let mean = exps.iter().sum::<f64>() / exps.len() as f64;
    let min = exps.iter().copied().fold(f64::INFINITY, f64::min);
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = min >= 0.45 && max <= 0.55 && r2_min >= 0.99 && large_err <= 0.05 && small_err <= 0.05;
    let summary = BTreeMap::from([
        ("exponent".to_string(), mean),
        ("exponent_min".to_string(), min),
        ("exponent_max".to_string(), max),
        ("r2_min".to_string(), r2_min),
        ("large_prefactor_rel_err".to_string(), large_err),
        ("small_prefactor_rel_err".to_string(), small_err),
        ("self_similar_rel_err".to_string(), a_err),
    ]);
    Ok((summary, pass))
}

/// Cost of a constant-rate execution against executed volume (large rate),
/// plus the small-rate closed form.
pub fn run_cost_scaling(s: &Settings) -> Result<ScenarioReport> {
    let params = ModelParams::plain(s.get("sigma"), s.get("L"))?;
    let horizon = s.get("T");
    let cfg = config(s, "n_steps")?;
    let variant = KernelVariant::Llob(params.clone());
    let j = params.rate_scale();
    let d = params.diffusivity();

    let m_large = s.get("large_ratio") * j;
    let profile = ExecutionProfile::constant(cfg.grid(horizon)?, m_large)?;
    let traj = solve_impact(&profile, &variant, &cfg)?;
    let grid = profile.grid();
    let span = s.get("volume_span");
    let mut costs = Table::new("costs", &["t", "Q", "cost", "cost_exact_a"]);
    let a = solve_a(s.get("large_ratio"))?.a;
    let mut ks: Vec<usize> = log_space(horizon / span, horizon, s.count("volume_count")?)
        .into_iter()
        .map(|t| ((t / grid.dt()).round() as usize).clamp(1, grid.steps()))
        .collect();
    ks.dedup();
    for k in ks {
        let t = grid.node(k);
        let exact = 2.0 / 3.0 * a * m_large * d.sqrt() * t.powf(1.5);
        costs.push(vec![t, profile.cumulative_volume(k), traj.cost_running()[k - 1], exact]);
    }

    let m_small = s.get("small_ratio") * j;
    let small = ExecutionProfile::constant(cfg.grid(horizon)?, m_small)?;
    let small_traj = solve_impact(&small, &variant, &cfg)?;
    let mut small_t = Table::new("small_rate", &["m0", "T", "cost", "cost_analytic"]);
    small_t.push(vec![
        m_small,
        horizon,
        small_traj.cost_running()[grid.steps() - 1],
        cost_constant_rate(m_small, horizon, &params, Regime::SmallRate)?,
    ]);
    let notes = vec![
        "cost at node k sums m y over the k steps before it".to_string(),
        "exponent fit excludes the two smallest-Q points".to_string(),
    ];
    ScenarioReport::new(s, vec![costs, small_t], notes)
}

pub(super) fn summarize_cost_scaling(report: &ScenarioReport) -> Summary {
    let costs = report.table("costs")?;
    let q = costs.column("Q")?;
    let c = costs.column("cost")?;
    let fit = power_fit(&q, &c)?;
    let exact = costs.column("cost_exact_a")?;
    let last = c.len() - 1;
    let large_err = (c[last] / exact[last] - 1.0).abs();
    let small = report.table("small_rate")?;
    let small_err = (small.column("cost")?[0] / small.column("cost_analytic")?[0] - 1.0).abs();
    let pass = (fit.slope - 1.5).abs() <= 0.05 && small_err <= 0.03 && large_err <= 0.02;
    let summary = BTreeMap::from([
        ("exponent".to_string(), fit.slope),
        ("r2".to_string(), fit.r2),
        ("large_rate_rel_err".to_string(), large_err),
        ("small_rate_rel_err".to_string(), small_err),
    ]);
    Ok((summary, pass))
}

/// `integral_lo^hi e^{nu s} (t - s)^{-1/2} ds` for `hi <= t`.
fn exp_kernel_integral(nu: f64, t: f64, lo: f64, hi: f64) -> f64 {
    if nu == 0.0 {
        return 2.0 * ((t - lo).sqrt() - (t - hi).sqrt());
    }
    let (a, b) = ((nu * (t - lo)).sqrt(), (nu * (t - hi)).sqrt());
    let diff = if b > 1.0 { erfc(b) - erfc(a) } else { erf(a) - erf(b) };
    (nu * t).exp() * (PI / nu).sqrt() * diff
}

/// Small-rate limit of the deposition/cancellation impact, evaluated in
/// closed form for a step profile: only the metaorder term is kept, and each
/// run of constant rate is split at the pieces of `nu`.
pub fn dep_can_linear_benchmark(
    profile: &ExecutionProfile,
    params: &ModelParams,
    weighting: CancellationWeighting,
) -> Result<Vec<f64>> {
    if params.lambda() != 0.0 {
        return Err(Error::Domain("linear benchmark needs lambda = 0".into()));
    }
    let grid = profile.grid();
    let n = grid.steps();
    let mut runs: Vec<(f64, f64, f64)> = Vec::new();
    for j in 0..n {
        let (a, b, m) = (grid.node(j), grid.node(j + 1), profile.rate(j));
        match runs.last_mut() {
            Some(run) if run.2 == m => run.1 = b,
            _ => runs.push((a, b, m)),
        }
    }
    let nu = params.nu();
    let pieces = nu.pieces();
    let pref = 1.0 / (params.slope() * (4.0 * PI * params.diffusivity()).sqrt());
    Ok((0..=n)
        .map(|k| {
            let t = grid.node(k);
            let mut acc = 0.0;
            for &(a, b, m) in runs.iter().take_while(|r| r.0 < t) {
                if m == 0.0 {
                    continue;
                }
                let b = b.min(t);
                for (i, &(start, rate)) in pieces.iter().enumerate() {
                    let end = pieces.get(i + 1).map_or(f64::INFINITY, |p| p.0);
                    let (lo, hi) = (a.max(start), b.min(end));
                    if hi <= lo {
                        continue;
                    }
                    let log_c = match weighting {
                        CancellationWeighting::Instantaneous => 0.0,
                        CancellationWeighting::Cumulative => nu.integral(start) - rate * start,
                    };
                    acc += m * log_c.exp() * exp_kernel_integral(rate, t, lo, hi);
                }
            }
            pref * acc
        })
        .collect())
}

/// Buy at the Asian cancellation rate, sell back at the New York rate.
pub fn run_manipulation(s: &Settings) -> Result<ScenarioReport> {
    let (nu_a, nu_n, t_ny) = (s.get("nu_asia"), s.get("nu_ny"), s.get("t_ny"));
    let nu = CancellationRate::piecewise(vec![(0.0, nu_a), (t_ny, nu_n)])?;
    let params = ModelParams::new(s.get("sigma"), 0.0, 0.0, nu, s.get("L"))?;
    let horizon = s.get("T");
    if !(t_ny > 0.0 && t_ny < horizon) {
        return Err(Error::invalid("t_ny", "must lie inside (0, T)"));
    }
    let cfg = config(s, "n_steps")?;
    let m0 = s.get("ratio") * params.rate_scale();
    let profile = ExecutionProfile::round_trip(cfg.grid(horizon)?, m0, t_ny)?;
    let variant = KernelVariant::dep_can(params.clone());
    let traj = solve_impact(&profile, &variant, &cfg)?;
    let bench = dep_can_linear_benchmark(&profile, &params, CancellationWeighting::Instantaneous)?;

    let grow = |nu: f64, a: f64, b: f64| if nu == 0.0 { b - a } else { ((nu * b).exp() - (nu * a).exp()) / nu };
    let mut table = Table::new("trajectory", &["t", "m", "y", "benchmark", "literal"]);
    for (k, t) in traj.grid().nodes().into_iter().enumerate() {
        let literal = m0 / params.slope() * (grow(nu_a, 0.0, t.min(t_ny)) - grow(nu_n, t_ny, t.max(t_ny)));
        table.push(vec![t, profile.rate(k), traj.y()[k], bench[k], literal]);
    }
    let mut setup = Table::new("setup", &["nu_asia", "nu_ny", "t_ny"]);
    setup.push(vec![nu_a, nu_n, t_ny]);
    let notes = vec![
        "benchmark is the small-rate limit of the deposition/cancellation equation in closed form".to_string(),
        "literal is the kernel-free volume formula; only its cost sign is reported".to_string(),
    ];
    ScenarioReport::new(s, vec![table, setup], notes)
}

/// `dT * sum_k m_k v_k` over all but the last node, matching the running cost.
fn cost_of(t: &[f64], m: &[f64], v: &[f64]) -> f64 {
    let dt = t[1] - t[0];
    dt * m.iter().zip(v).take(t.len() - 1).map(|(a, b)| a * b).sum::<f64>()
}

pub(super) fn summarize_manipulation(report: &ScenarioReport) -> Summary {
    let tr = report.table("trajectory")?;
    let (t, m, y) = (tr.column("t")?, tr.column("m")?, tr.column("y")?);
    let (b, lit) = (tr.column("benchmark")?, tr.column("literal")?);
    if t.len() < 2 {
        return Err(Error::Domain("manipulation trajectory too short".into()));
    }
    let setup = report.table("setup")?;
    let (nu_a, nu_n) = (setup.column("nu_asia")?[0], setup.column("nu_ny")?[0]);
    let cost = cost_of(&t, &m, &y);
    let rel = sup_abs(y.iter().zip(&b).map(|(a, c)| a - c)) / sup_abs(b.iter().copied());
    let expect_negative = nu_a > nu_n;
    let sign_ok = if expect_negative { cost < 0.0 } else { cost >= 0.0 };
    let summary = BTreeMap::from([
        ("cost".to_string(), cost),
        ("benchmark_cost".to_string(), cost_of(&t, &m, &b)),
        ("literal_cost".to_string(), cost_of(&t, &m, &lit)),
        ("benchmark_rel_err".to_string(), rel),
        ("expect_negative_cost".to_string(), flag(expect_negative)),
    ]);
    Ok((summary, sign_ok && rel < 0.03))
}

/// Terminal impact of a constant-rate execution across a sweep of `D`
/// (plain book) or `kappa` (mean-reverted book).
pub fn run_monotonicity(s: &Settings) -> Result<ScenarioReport> {
    let (m0, slope, horizon) = (s.get("m0"), s.get("L"), s.get("T"));
    let cfg = config(s, "n_steps")?;
    let values = log_space(s.get("min"), s.get("max"), s.count("count")?);
    let by_kappa = s.preset == "kappa";
    let table = if by_kappa {
        let sigma = s.get("sigma");
        let plain = ModelParams::plain(sigma, slope)?;
        let (_, y) = constant_rate_solve(&KernelVariant::Llob(plain), m0, horizon, &cfg)?;
        let reference = y[cfg.n_steps];
        let rows: Vec<Vec<f64>> = values
            .par_iter()
            .map(|&kappa| {
                let p = ModelParams::new(sigma, kappa, 0.0, CancellationRate::constant(0.0)?, slope)?;
                let (_, y) = constant_rate_solve(&KernelVariant::MeanRev(p), m0, horizon, &cfg)?;
                // B = 0, so the observed price is e^{-kappa T} y_T
                Ok(vec![kappa, (-kappa * horizon).exp() * y[cfg.n_steps], reference])
            })
            .collect::<Result<_>>()?;
        let mut t = Table::new("sweep_kappa", &["kappa", "impact", "llob_reference"]);
        rows.into_iter().for_each(|r| t.push(r));
        t
    } else {
        let rows: Vec<Vec<f64>> = values
            .par_iter()
            .map(|&d| {
                let p = ModelParams::plain((2.0 * d).sqrt(), slope)?;
                let (_, y) = constant_rate_solve(&KernelVariant::Llob(p.clone()), m0, horizon, &cfg)?;
                let a = solve_a(m0 / p.rate_scale())?.a;
                Ok(vec![d, y[cfg.n_steps], a * (d * horizon).sqrt()])
            })
            .collect::<Result<_>>()?;
        let mut t = Table::new("sweep_diffusion", &["D", "impact", "self_similar"]);
        rows.into_iter().for_each(|r| t.push(r));
        t
    };
    ScenarioReport::new(s, vec![table], Vec::new())
}

pub(super) fn summarize_monotonicity(report: &ScenarioReport) -> Summary {
    let (table, reference) = match report.table("sweep_kappa") {
        Ok(t) => (t, "llob_reference"),
        Err(_) => (report.table("sweep_diffusion")?, "self_similar"),
    };
    let impact = table.column("impact")?;
    let refs = table.column(reference)?;
    if impact.is_empty() {
        return Err(Error::Domain("empty sweep".into()));
    }
    let max_increase = impact.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let nonincreasing = impact.windows(2).all(|w| w[1] <= w[0]);
    let mut summary = BTreeMap::from([
        ("nonincreasing".to_string(), flag(nonincreasing)),
        ("max_increase".to_string(), max_increase),
    ]);
    let err = if reference == "llob_reference" {
        let e = (impact[0] / refs[0] - 1.0).abs();
        summary.insert("endpoint_rel_diff".to_string(), e);
        e
    } else {
        let e = impact.iter().zip(&refs).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
        summary.insert("self_similar_rel_err".to_string(), e);
        e
    };
    Ok((summary, nonincreasing && err < 0.01))
}

/// Small-rate mean-reverted impact against the arcsine law.
pub fn run_arcsine(s: &Settings) -> Result<ScenarioReport> {
    let (sigma, kappa, slope) = (s.get("sigma"), s.get("kappa"), s.get("L"));
    let params = ModelParams::new(sigma, kappa, 0.0, CancellationRate::constant(0.0)?, slope)?;
    let variant = KernelVariant::MeanRev(params.clone());
    variant.validate()?;
    let m0 = s.get("rate_over_l_sigma") * slope * sigma;
    let horizon = s.get("T");
    let cfg = config(s, "n_steps")?;
    let (profile, y) = constant_rate_solve(&variant, m0, horizon, &cfg)?;
    let limit = arcsine_limit(m0, &params)?;
    let mut traj = Table::new("trajectory", &["t", "y", "arcsine", "limit"]);
    for (k, t) in profile.grid().nodes().into_iter().enumerate() {
        traj.push(vec![t, y[k], arcsine_propagator(t, m0, &params)?, limit]);
    }

    let short_cfg = config(s, "short_steps")?;
    let short_t = s.get("short_kappa_t") / kappa;
    let (short_profile, ys) = constant_rate_solve(&variant, m0, short_t, &short_cfg)?;
    let mut short = Table::new("short_time", &["t", "y"]);
    for k in log_nodes(short_cfg.n_steps, 30) {
        short.push(vec![short_profile.grid().node(k), ys[k]]);
    }
    let notes = vec!["short-time exponent fit excludes the two earliest points".to_string()];
    ScenarioReport::new(s, vec![traj, short], notes)
}

pub(super) fn summarize_arcsine(report: &ScenarioReport) -> Summary {
    let traj = report.table("trajectory")?;
    let (y, a, lim) = (traj.column("y")?, traj.column("arcsine")?, traj.column("limit")?);
    let dev = sup_abs(y.iter().zip(&a).map(|(p, q)| p - q)) / sup_abs(a.iter().copied());
    let plateau = y[y.len() - 1] / lim[lim.len() - 1];
    let short = report.table("short_time")?;
    let fit = power_fit(&short.column("t")?, &short.column("y")?)?;
    let pass = dev < 0.02 && (fit.slope - 0.5).abs() <= 0.05 && (0.98..=1.02).contains(&plateau);
    let summary = BTreeMap::from([
        ("sup_rel_dev".to_string(), dev),
        ("short_time_exponent".to_string(), fit.slope),
        ("plateau_ratio".to_string(), plateau),
    ]);
    Ok((summary, pass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::linear_propagator_llob;
    use crate::model::TimeGrid;

    #[test]
    fn benchmark_reduces_to_plain_propagator_without_cancellation() {
        let params = ModelParams::plain(1.3, 2.0).unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let profile = ExecutionProfile::round_trip(grid, 0.01, 0.7).unwrap();
        let b = dep_can_linear_benchmark(&profile, &params, CancellationWeighting::Instantaneous).unwrap();
        let lp = linear_propagator_llob(&profile, &params);
        for (u, v) in b.iter().zip(lp.y()) {
            assert!((u - v).abs() < 1e-12, "{u} {v}");
        }
    }

    #[test]
    fn benchmark_matches_quadrature_with_cancellation() {
        let nu = CancellationRate::piecewise(vec![(0.0, 0.4), (1.0, 0.1)]).unwrap();
        let params = ModelParams::new(1.0, 0.0, 0.0, nu.clone(), 1.0).unwrap();
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let profile = ExecutionProfile::constant(grid, 0.02).unwrap();
        for weighting in [CancellationWeighting::Instantaneous, CancellationWeighting::Cumulative] {
            let b = dep_can_linear_benchmark(&profile, &params, weighting).unwrap();
            let t: f64 = 2.0;
            // substitute s = t - v^2 to remove the singularity; the weight jumps at s = 1, v = 1
            let f = |v: f64| 2.0 * 0.02 * nu.weight(t - v * v, weighting);
            let q = (crate::special::integrate_gl(f, 0.0, 1.0, 50) + crate::special::integrate_gl(f, 1.0, t.sqrt(), 50))
                / (4.0 * PI * 0.5f64).sqrt();
            assert!((b[20] / q - 1.0).abs() < 1e-6, "{weighting:?} {} {q}", b[20]);
        }
    }

    #[test]
    fn quick_sqrt_law_report_recomputes() {
        let mut s = Settings::preset("sqrt-law", None).unwrap();
        s.set("n_steps", 256.0).unwrap();
        s.set("ratio_count", 3.0).unwrap();
        let r = run_sqrt_law(&s).unwrap();
        assert_eq!(super::super::recompute(&r).unwrap(), (r.summary.clone(), r.pass));
        assert!((r.value("exponent").unwrap() - 0.5).abs() < 0.01);
    }
}
