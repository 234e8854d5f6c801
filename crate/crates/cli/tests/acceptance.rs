//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use llob::analytic::{linear_propagator_llob, solve_a};
use llob::scenarios::{self, ScenarioReport, Settings};
use llob::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(id: &str, preset: Option<&str>) -> ScenarioReport {
    scenarios::run(&Settings::preset(id, preset).unwrap()).unwrap()
}

fn summary(r: &ScenarioReport, keys: &[&str]) -> String {
    keys.iter()
        .map(|k| format!("{k}={:.4e}", r.value(k).unwrap_or(f64::NAN)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn plain_cfg(n: usize) -> SolverConfig {
    SolverConfig::default().with_steps(n)
}

fn c1_self_similar() -> Outcome {
    let big = solve_a(1e3).unwrap().a;
    let small = solve_a(1e-3).unwrap().a;
    let e_big = (big / 2000f64.sqrt() - 1.0).abs();
    let e_small = (small / (1e-3 / std::f64::consts::PI.sqrt()) - 1.0).abs();
    Outcome {
        pass: e_big <= 0.05 && e_small <= 0.005,
        detail: format!("A(1e3)={big:.6} rel_err={e_big:.2e}; A(1e-3)={small:.6e} rel_err={e_small:.2e}"),
    }
}

fn c2_sqrt_law() -> Outcome {
    let r = scenario("sqrt-law", None);
    let (mean, min, max, r2) = (
        r.value("exponent").unwrap(),
        r.value("exponent_min").unwrap(),
        r.value("exponent_max").unwrap(),
        r.value("r2_min").unwrap(),
    );
    Outcome {
        pass: (mean - 0.5).abs() <= 0.05 && min >= 0.45 && max <= 0.55 && r2 >= 0.99,
        detail: summary(&r, &["exponent", "exponent_min", "exponent_max", "r2_min"]),
    }
}

fn c3_large_rate_prefactor() -> Outcome {
    let p = ModelParams::plain(std::f64::consts::SQRT_2, 1.0).unwrap();
    let m0 = 100.0 * p.rate_scale();
    let grid = TimeGrid::new(1.0, 4096).unwrap();
    let profile = ExecutionProfile::constant(grid, m0).unwrap();
    let y = solve_impact(&profile, &KernelVariant::Llob(p.clone()), &plain_cfg(4096)).unwrap().terminal_y();
    let want = (2.0 * profile.total_volume() / p.slope()).sqrt();
    let err = (y / want - 1.0).abs();
    Outcome {
        pass: err <= 0.05,
        detail: format!("y_T={y:.6} sqrt(2Q/L)={want:.6} rel_err={err:.3e}"),
    }
}

fn c4_cost_scaling() -> Outcome {
    let r = scenario("cost-scaling", None);
    let e = r.value("exponent").unwrap();
    Outcome {
        pass: (e - 1.5).abs() <= 0.05,
        detail: summary(&r, &["exponent", "r2", "small_rate_rel_err"]),
    }
}

fn c5_arcsine() -> Outcome {
    let r = scenario("arcsine", None);
    let dev = r.value("sup_rel_dev").unwrap();
    let e = r.value("short_time_exponent").unwrap();
    let plateau = r.value("plateau_ratio").unwrap();
    Outcome {
        pass: dev < 0.02 && (e - 0.5).abs() <= 0.05 && (plateau - 1.0).abs() <= 0.02,
        detail: summary(&r, &["sup_rel_dev", "short_time_exponent", "plateau_ratio"]),
    }
}

fn strictly_nonincreasing(r: &ScenarioReport, table: &str) -> bool {
    let v = r.table(table).unwrap().column("impact").unwrap();
    v.len() == 8 && v.windows(2).all(|w| w[1] <= w[0])
}

fn c6_monotonicity() -> Outcome {
    let d = scenario("monotonicity", Some("diffusion"));
    let k = scenario("monotonicity", Some("kappa"));
    Outcome {
        pass: strictly_nonincreasing(&d, "sweep_diffusion") && strictly_nonincreasing(&k, "sweep_kappa"),
        detail: format!(
            "D sweep max_increase={:.3e}; kappa sweep max_increase={:.3e}",
            d.value("max_increase").unwrap(),
            k.value("max_increase").unwrap()
        ),
    }
}

fn c7_kappa_continuity() -> Outcome {
    let grid = TimeGrid::new(1.0, 1024).unwrap();
    let profile = ExecutionProfile::from_fn(grid, |t| 1.0 + 0.5 * (3.0 * t).sin()).unwrap();
    let nu = CancellationRate::constant(0.0).unwrap();
    let llob = ModelParams::new(1.0, 0.0, 0.0, nu.clone(), 1.0).unwrap();
    let mr = ModelParams::new(1.0, 1e-6, 0.0, nu, 1.0).unwrap();
    let a = solve_impact(&profile, &KernelVariant::Llob(llob), &plain_cfg(1024)).unwrap();
    let b = solve_impact(&profile, &KernelVariant::MeanRev(mr), &plain_cfg(1024)).unwrap();
    let scale = a.y().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a.y().iter().zip(b.y()).map(|(u, v)| (u - v).abs()).fold(0.0f64, f64::max) / scale;
    Outcome {
        pass: dev <= 0.005,
        detail: format!("sup rel deviation {dev:.3e}"),
    }
}

fn c8_manipulation() -> Outcome {
    let flat = scenario("manipulation", Some("equal-nu"));
    let piece = scenario("manipulation", Some("asia-ny"));
    let (c_flat, c_piece) = (flat.value("cost").unwrap(), piece.value("cost").unwrap());
    Outcome {
        pass: c_flat >= 0.0 && c_piece < 0.0,
        detail: format!(
            "constant nu cost={c_flat:.4e}; piecewise nu cost={c_piece:.4e}; benchmark rel err {:.2e}/{:.2e}",
            flat.value("benchmark_rel_err").unwrap(),
            piece.value("benchmark_rel_err").unwrap()
        ),
    }
}

fn c9_crank_nicolson() -> Outcome {
    let conv = scenario("cn-convergence", None);
    let stat = scenario("stationary-book", None);
    let ratio = conv.value("min_error_ratio").unwrap();
    let err = stat.value("max_rel_err").unwrap();
    Outcome {
        pass: ratio >= 3.5 && err < 0.02,
        detail: format!("min error ratio {ratio:.3}; stationary profile rel err {err:.3e}"),
    }
}

fn c10_mispricing() -> Outcome {
    let r = scenario("tracking", None);
    let mc = r.table("mispricing").unwrap();
    let kappas = mc.column("kappa").unwrap();
    let paths = mc.column("paths").unwrap();
    let (sv, av, se) = (
        mc.column("sample_var").unwrap(),
        mc.column("analytic_var").unwrap(),
        mc.column("std_error").unwrap(),
    );
    let z: Vec<f64> = (0..sv.len()).map(|i| (sv[i] - av[i]).abs() / se[i]).collect();
    Outcome {
        pass: kappas == [0.1, 1.0, 5.0] && paths.iter().all(|&n| n >= 200.0) && z.iter().all(|&z| z <= 3.0),
        detail: format!("kappa={kappas:?} z={z:.2?} paths={}", paths[0]),
    }
}

fn c11_cross_solver() -> Outcome {
    let r = scenario("cross-validation", None);
    let devs: Vec<f64> = (0..3).map(|l| r.value(&format!("deviation[level={l}]")).unwrap()).collect();
    Outcome {
        pass: devs[2] < 0.05 && devs.windows(2).all(|w| w[1] < w[0]),
        detail: format!("deviation by level {devs:.4?}"),
    }
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_llob"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .success()
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = walk(a);
    names.sort();
    let mut other: Vec<_> = walk(b);
    other.sort();
    names == other
        && names
            .iter()
            .all(|rel| std::fs::read(a.join(rel)).unwrap() == std::fs::read(b.join(rel)).unwrap())
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}

fn c12_properties() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let grid = TimeGrid::new(1.0, 256).unwrap();
    let profile = ExecutionProfile::from_fn(grid, |t| 2.0 * (4.0 * t).sin() + 0.5).unwrap();
    let nu = CancellationRate::constant(0.2).unwrap();
    let variants = [
        KernelVariant::Llob(ModelParams::plain(1.0, 1.0).unwrap()),
        KernelVariant::dep_can(ModelParams::new(1.0, 0.0, 0.5, nu, 1.0).unwrap()),
        KernelVariant::MeanRev(ModelParams::new(1.0, 0.7, 0.0, CancellationRate::constant(0.0).unwrap(), 1.0).unwrap()),
    ];
    let mut worst_odd = 0.0f64;
    for v in &variants {
        let up = solve_impact(&profile, v, &plain_cfg(256)).unwrap();
        let down = solve_impact(&profile.scaled(-1.0), v, &plain_cfg(256)).unwrap();
        let zero = solve_impact(&ExecutionProfile::zero(grid), v, &plain_cfg(256)).unwrap();
        let scale = up.y().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst_odd = worst_odd.max(up.y().iter().zip(down.y()).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max) / scale);
        pass &= zero.y().iter().all(|&y| y == 0.0);
    }
    pass &= worst_odd <= 1e-12;
    notes.push(format!("antisymmetry {worst_odd:.1e}"));

    let lin = linear_propagator_llob(&ExecutionProfile::zero(grid), &ModelParams::plain(1.0, 1.0).unwrap());
    pass &= lin.y().iter().all(|&y| y == 0.0);
    // unforced book with B = 0: the price stays at 0 up to roundoff
    let book_grid = TimeGrid::new(0.5, 50).unwrap();
    let book_drift = |kappa: f64, stencil: AdvectionStencil| {
        let run = simulate(
            &GridSpec::new(3.0, 60, 0.01).unwrap(),
            &ModelParams::new(1.0, kappa, 0.0, CancellationRate::constant(0.0).unwrap(), 1.0).unwrap(),
            &ReferencePath::constant(book_grid, 0.0),
            &ExecutionProfile::zero(book_grid),
            None,
            &SimOptions {
                stencil,
                ..Default::default()
            },
        )
        .unwrap();
        run.prices.iter().fold(0.0f64, |m, p| m.max(p.abs()))
    };
    let exact = book_drift(0.0, AdvectionStencil::Forward).max(book_drift(0.5, AdvectionStencil::Centered));
    pass &= exact < 1e-12;
    notes.push(format!(
        "zero in/zero out ok={pass} (book {exact:.1e}; forward stencil at kappa>0 drifts {:.1e})",
        book_drift(0.5, AdvectionStencil::Forward)
    ));

    let p = ModelParams::plain(std::f64::consts::SQRT_2, 1.0).unwrap();
    let mut worst_collapse = 0.0f64;
    for ratio in [0.01, 1.0, 100.0] {
        let g = TimeGrid::new(1.0, 2048).unwrap();
        let y = solve_impact(&ExecutionProfile::constant(g, ratio).unwrap(), &KernelVariant::Llob(p.clone()), &plain_cfg(2048))
            .unwrap();
        let a = solve_a(ratio).unwrap().a;
        // nodes before T/10 still carry the start-up discretization error
        for k in 205..=2048 {
            worst_collapse = worst_collapse.max((y.y()[k] / (a * g.node(k).sqrt()) - 1.0).abs());
        }
    }
    pass &= worst_collapse <= 0.01;
    notes.push(format!("collapse on t >= T/10 {worst_collapse:.2e}"));

    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 4] = [
        &["impact", "--variant", "depcan", "--profile", "round-trip", "--set", "model.lambda=0.3", "--set", "model.nu=0:0.5,0.5:0.1", "--set", "solver.n_steps=200"],
        &["impact", "--variant", "meanrev", "--set", "model.kappa=1", "--set", "path.kind=brownian", "--set", "solver.n_steps=200"],
        &["book", "--profile", "constant", "--set", "path.kind=brownian", "--set", "path.vol=0.2", "--set", "model.kappa=0.5", "--set", "book.P=200", "--set", "book.dT=0.01", "--set", "book.stride=25"],
        &["scenario", "manipulation", "--set", "n_steps=200"],
    ];
    let mut deterministic = true;
    for (i, args) in runs.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a")), dir.path().join(format!("{i}b")));
        deterministic &= run_cli(args, &a) && run_cli(args, &b) && same_tree(&a, &b);
    }
    pass &= deterministic;
    notes.push(format!("cli deterministic={deterministic}"));
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome, u64); 12] = [
        ("1 self-similar coefficient", c1_self_similar, 1),
        ("2 square-root law", c2_sqrt_law, 30),
        ("3 large-rate prefactor", c3_large_rate_prefactor, 5),
        ("4 cost scaling", c4_cost_scaling, 60),
        ("5 arcsine propagator", c5_arcsine, 30),
        ("6 monotonicity", c6_monotonicity, 60),
        ("7 kappa continuity", c7_kappa_continuity, 10),
        ("8 manipulation pair", c8_manipulation, 10),
        ("9 crank-nicolson", c9_crank_nicolson, 60),
        ("10 mispricing variance", c10_mispricing, 60),
        ("11 cross-solver consistency", c11_cross_solver, 120),
        ("12 property suite", c12_properties, 60),
    ];
    let mut failed = Vec::new();
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let ok = out.pass && in_time;
        println!(
            "criterion {name}: {} ({}; {:.2}s of {budget}s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
