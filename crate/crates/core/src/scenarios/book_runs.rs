use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{flag, sup_abs, ScenarioReport, Settings, Table};
use crate::analytic::{f_of_t, mispricing_variance, stationary_mr_pinned, stationary_phi_mr};
use crate::error::{Error, Result};
use crate::impact::{solve_impact, KernelVariant, SolverConfig};
use crate::model::{brownian_path, BookState, CancellationRate, ExecutionProfile, ModelParams, ReferencePath, TimeGrid};
use crate::pde::{simulate, AdvectionStencil, CrankNicolson, GridSpec, SimOptions};

type Summary = Result<(BTreeMap<String, f64>, bool)>;

fn book_params(sigma: f64, kappa: f64, slope: f64) -> Result<ModelParams> {
    ModelParams::new(sigma, kappa, 0.0, CancellationRate::constant(0.0)?, slope)
}

fn even(s: &Settings, key: &str) -> Result<usize> {
    let p = s.count(key)?;
    if p % 2 != 0 {
        return Err(Error::invalid("P", "must be even"));
    }
    Ok(p)
}

/// Sup-norm error of pure diffusion of a Gaussian bump against the exact
/// heat-kernel solution, on `levels` grids each halving `dx` and `dT`.
pub fn heat_kernel_convergence(grid: GridSpec, levels: usize, sigma: f64, width: f64, horizon: f64) -> Result<Vec<(GridSpec, f64)>> {
    let params = book_params(sigma, 0.0, 1.0)?;
    let d = params.diffusivity();
    let mut out = Vec::with_capacity(levels);
    let mut g = grid;
    for _ in 0..levels {
        let steps = (horizon / g.dt()).round() as usize;
        if steps == 0 || ((steps as f64) * g.dt() - horizon).abs() > 1e-9 * horizon {
            return Err(Error::invalid("dT", "must divide the horizon"));
        }
        let w2 = width * width;
        let state = BookState::from_fn(g.space(), |x| (-x * x / (2.0 * w2)).exp())?;
        let op = CrankNicolson::new(g, &params, AdvectionStencil::Forward);
        let mut phi = state.phi().to_vec();
        let mut scratch = Vec::new();
        for _ in 0..steps {
            op.step_in_place(&mut phi, 0.0, &mut scratch);
        }
        let v = w2 + 2.0 * d * horizon;
        let space = g.space();
        let err = sup_abs(
            phi.iter()
                .enumerate()
                .map(|(i, p)| p - (w2 / v).sqrt() * (-space.node(i).powi(2) / (2.0 * v)).exp()),
        );
        out.push((g, err));
        g = g.refined();
    }
    Ok(out)
}

pub fn run_cn_convergence(s: &Settings) -> Result<ScenarioReport> {
    let grid = GridSpec::new(s.get("M"), even(s, "P")?, s.get("dT"))?;
    let errs = heat_kernel_convergence(grid, s.count("levels")?, s.get("sigma"), s.get("width"), s.get("T"))?;
    let mut t = Table::new("levels", &["P", "dT", "dx", "error"]);
    for (g, e) in errs {
        t.push(vec![g.intervals() as f64, g.dt(), g.dx(), e]);
    }
    ScenarioReport::new(s, vec![t], Vec::new())
}

pub(super) fn summarize_cn_convergence(report: &ScenarioReport) -> Summary {
    let e = report.table("levels")?.column("error")?;
    if e.len() < 2 {
        return Err(Error::Domain("convergence needs at least two levels".into()));
    }
    let min_ratio = e.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let summary = BTreeMap::from([
        ("min_error_ratio".to_string(), min_ratio),
        ("finest_error".to_string(), e[e.len() - 1]),
    ]);
    Ok((summary, min_ratio >= 3.5))
}

/// Relax the linear book with `B = 0` and compare with the stationary profile
/// that has the same pinned boundary values. Returns `(x, phi, stationary)`.
fn relax_to_stationary(s: &Settings) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (slope, m) = (s.get("L"), s.get("M"));
    let params = book_params(s.get("sigma"), s.get("kappa"), slope)?;
    let grid = GridSpec::new(m, even(s, "P")?, s.get("dT"))?;
    let op = CrankNicolson::new(grid, &params, AdvectionStencil::Forward);
    let space = grid.space();
    let mut phi = BookState::linear(space, slope).phi().to_vec();
    let mut scratch = Vec::new();
    for _ in 0..s.count("steps")? {
        op.step_in_place(&mut phi, 0.0, &mut scratch);
    }
    let (c0, c1) = stationary_mr_pinned(&params, m, slope)?;
    let xs = space.nodes();
    let stat = xs.iter().map(|&x| stationary_phi_mr(x, &params, c0, c1)).collect::<Result<Vec<_>>>()?;
    Ok((xs, phi, stat))
}

/// Worst deviation from the pinned stationary profile on the inner 80% of the
/// domain, relative to `L M`.
pub fn stationary_book_error(s: &Settings) -> Result<f64> {
    let r = run_stationary_book(s)?;
    r.value("max_rel_err").ok_or_else(|| Error::Domain("missing summary".into()))
}

pub fn run_stationary_book(s: &Settings) -> Result<ScenarioReport> {
    let (x, phi, stat) = relax_to_stationary(s)?;
    let scale = s.get("L") * s.get("M");
    let mut t = Table::new("book", &["x", "phi", "stationary", "scale", "half_width"]);
    for i in 0..x.len() {
        t.push(vec![x[i], phi[i], stat[i], scale, s.get("M")]);
    }
    let notes = vec!["error measured on |x| <= 0.8 M".to_string()];
    ScenarioReport::new(s, vec![t], notes)
}

pub(super) fn summarize_stationary_book(report: &ScenarioReport) -> Summary {
    let t = report.table("book")?;
    let (x, phi, stat) = (t.column("x")?, t.column("phi")?, t.column("stationary")?);
    let (scale, m) = (t.column("scale")?, t.column("half_width")?);
    let err = (0..x.len())
        .filter(|&i| x[i].abs() <= 0.8 * m[i])
        .map(|i| (phi[i] - stat[i]).abs() / scale[i])
        .fold(0.0, f64::max);
    Ok((BTreeMap::from([("max_rel_err".to_string(), err)]), err < 0.02))
}

/// Books without a metaorder following a Brownian reference price, plus a
/// Monte Carlo check of the mispricing variance.
pub fn run_tracking(s: &Settings) -> Result<ScenarioReport> {
    let (sigma, slope, m) = (s.get("sigma"), s.get("L"), s.get("M"));
    let p = even(s, "P")?;
    let dt = s.get("dT");
    let horizon = s.get("T");
    let steps = (horizon / dt).round() as usize;
    if steps == 0 {
        return Err(Error::invalid("dT", "must be smaller than T"));
    }
    let vol = s.get("vol");
    let seed = s.count("seed")? as u64;
    let kappas = [s.get("kappa_small"), s.get("kappa_mid"), s.get("kappa_large")];
    // one fine path, subsampled for the coarse level
    let fine = brownian_path(seed, 2 * steps, dt / 2.0, vol, 0.0)?;
    let coarse_prices: Vec<f64> = fine.prices().iter().step_by(2).copied().collect();
    let coarse = ReferencePath::new(TimeGrid::new(dt * steps as f64, steps)?, coarse_prices)?;
    let base = GridSpec::new(m, p, dt)?;
    let stride = (steps / 200).max(1);

    let jobs: Vec<(usize, usize)> = (0..kappas.len()).flat_map(|i| [(i, 0), (i, 1)]).collect();
    let runs: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(i, level)| {
            let kappa = kappas[i];
            let params = book_params(sigma, kappa, slope)?;
            let (grid, path, every) = if level == 0 { (base, &coarse, stride) } else { (base.refined(), &fine, 2 * stride) };
            let run = simulate(&grid, &params, path, &ExecutionProfile::zero(*path.grid()), None, &SimOptions::default())?;
            let f = f_of_t(path, kappa);
            Ok((0..run.prices.len())
                .step_by(every)
                .map(|k| vec![kappa, level as f64, k as f64 * grid.dt(), path.price(k), f[k], run.prices[k]])
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut paths = Table::new("paths", &["kappa", "level", "t", "B", "f", "p"]);
    runs.into_iter().flatten().for_each(|r| paths.push(r));

    let n_paths = s.count("mc_paths")?;
    let mc_steps = s.count("mc_steps")?;
    let mc_t = s.get("mc_t");
    let mut mc = Table::new("mispricing", &["kappa", "t", "paths", "sample_var", "analytic_var", "std_error"]);
    for &kappa in &kappas {
        let samples: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let path = brownian_path(seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1), mc_steps, mc_t / mc_steps as f64, vol, 0.0)?;
                let f = f_of_t(&path, kappa);
                Ok(path.price(mc_steps) - f[mc_steps])
            })
            .collect::<Result<_>>()?;
        let n = n_paths as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var) / n).sqrt();
        mc.push(vec![kappa, mc_t, n, var, vol * vol * mispricing_variance(kappa, mc_t)?, se]);
    }
    let notes = vec![
        "level 1 halves dx and dT on the same Brownian path".to_string(),
        "path rows are sampled at common times on both levels".to_string(),
    ];
    ScenarioReport::new(s, vec![paths, mc], notes)
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for x in v {
        acc += x * x;
        n += 1;
    }
    (acc / n.max(1) as f64).sqrt()
}

pub(super) fn summarize_tracking(report: &ScenarioReport) -> Summary {
    let paths = report.table("paths")?;
    let (kap, lvl) = (paths.column("kappa")?, paths.column("level")?);
    let (b, f, p) = (paths.column("B")?, paths.column("f")?, paths.column("p")?);
    let mut kappas: Vec<f64> = kap.clone();
    kappas.sort_by(f64::total_cmp);
    kappas.dedup();
    if kappas.len() < 2 {
        return Err(Error::Domain("tracking needs at least two kappa values".into()));
    }
    let mut summary = BTreeMap::new();
    let mut pass = true;
    let mut pb = Vec::new();
    for &k in &kappas {
        let (kap, lvl) = (&kap, &lvl);
        let sel = |level: f64| (0..kap.len()).filter(move |&i| kap[i] == k && lvl[i] == level);
        let pf0 = rms(sel(0.0).map(|i| p[i] - f[i]));
        let pf1 = rms(sel(1.0).map(|i| p[i] - f[i]));
        let pb0 = rms(sel(0.0).map(|i| p[i] - b[i]));
        summary.insert(format!("rms_p_minus_f[kappa={k}]"), pf0);
        summary.insert(format!("rms_p_minus_f_refined[kappa={k}]"), pf1);
        summary.insert(format!("rms_p_minus_b[kappa={k}]"), pb0);
        pass &= pf1 < pf0;
        pb.push(pb0);
    }
    let tighter = pb[pb.len() - 1] < pb[0];
    summary.insert("large_kappa_tracks_b_closer".to_string(), flag(tighter));
    pass &= tighter;

    let mc = report.table("mispricing")?;
    let (sv, av, se) = (mc.column("sample_var")?, mc.column("analytic_var")?, mc.column("std_error")?);
    let mut worst_z = 0.0f64;
    for i in 0..sv.len() {
        worst_z = worst_z.max((sv[i] - av[i]).abs() / se[i]);
    }
    summary.insert("mispricing_max_z".to_string(), worst_z);
    pass &= worst_z <= 3.0 && mc.column("paths")?.iter().all(|&n| n >= 200.0);
    Ok((summary, pass))
}

/// Price from the book simulation against the impact equation for the same
/// constant-rate execution, on grids refined with `D dT / dx^2` fixed.
pub fn run_cross_validation(s: &Settings) -> Result<ScenarioReport> {
    let params = book_params(s.get("sigma"), 0.0, s.get("L"))?;
    let d = params.diffusivity();
    let m0 = s.get("ratio") * params.rate_scale();
    let horizon = s.get("T");
    let n = s.count("n_steps")?;
    let cfg = SolverConfig::default().with_steps(n);
    let coarse = cfg.grid(horizon)?;
    let traj = solve_impact(&ExecutionProfile::constant(coarse, m0)?, &KernelVariant::Llob(params.clone()), &cfg)?;
    let (m, p0, cfl) = (s.get("M"), even(s, "P")?, s.get("cfl"));

    let levels: Vec<usize> = (0..s.count("levels")?).map(|l| p0 << l).collect();
    let runs: Vec<Vec<Vec<f64>>> = levels
        .par_iter()
        .enumerate()
        .map(|(li, &pp)| {
            let dx = 2.0 * m / pp as f64;
            // fine steps per solver step, so the book is sampled on the solver grid
            let per = ((horizon / n as f64) * d / (cfl * dx * dx)).ceil().max(1.0) as usize;
            let fine = TimeGrid::new(horizon, n * per)?;
            let grid = GridSpec::new(m, pp, fine.dt())?;
            let run = simulate(
                &grid,
                &params,
                &ReferencePath::constant(fine, 0.0),
                &ExecutionProfile::constant(fine, m0)?,
                None,
                &SimOptions::default(),
            )?;
            Ok((0..=n)
                .map(|k| vec![li as f64, pp as f64, coarse.node(k), run.prices[k * per], traj.y()[k]])
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("prices", &["level", "P", "t", "p_book", "y_impact"]);
    runs.into_iter().flatten().for_each(|r| t.push(r));
    let notes = vec!["deviation is the sup over solver nodes divided by the terminal impact".to_string()];
    ScenarioReport::new(s, vec![t], notes)
}

pub(super) fn summarize_cross_validation(report: &ScenarioReport) -> Summary {
    let t = report.table("prices")?;
    let (lvl, pb, y) = (t.column("level")?, t.column("p_book")?, t.column("y_impact")?);
    let n_levels = lvl.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
    let scale = sup_abs(y.iter().copied());
    let mut devs = Vec::new();
    let mut summary = BTreeMap::new();
    for l in 0..n_levels {
        let dev = sup_abs((0..lvl.len()).filter(|&i| lvl[i] == l as f64).map(|i| pb[i] - y[i])) / scale;
        summary.insert(format!("deviation[level={l}]"), dev);
        devs.push(dev);
    }
    let decreasing = devs.windows(2).all(|w| w[1] < w[0]);
    summary.insert("decreasing".to_string(), flag(decreasing));
    let finest = devs.last().copied().unwrap_or(f64::INFINITY);
    Ok((summary, decreasing && finest < 0.05))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::recompute;

    #[test]
    fn heat_kernel_error_quarters() {
        let g = GridSpec::new(8.0, 80, 0.1).unwrap();
        let e = heat_kernel_convergence(g, 3, 1.0, 0.5, 1.0).unwrap();
        for w in e.windows(2) {
            assert!(w[0].1 / w[1].1 > 3.5, "{} {}", w[0].1, w[1].1);
        }
    }

    #[test]
    fn stationary_report_recomputes() {
        let r = run_stationary_book(&Settings::preset("stationary-book", None).unwrap()).unwrap();
        assert!(r.pass, "{:?}", r.summary);
        assert_eq!(recompute(&r).unwrap(), (r.summary.clone(), r.pass));
    }
}
