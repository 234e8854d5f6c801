//! `llob`: run impact solves, book simulations, named scenarios and closed
//! forms from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llob::analytic::{self, Regime};
use llob::impact::to_original_frame;
use llob::scenarios::{self, ScenarioReport, Settings, Table};
use llob::*;

mod config;

use config::{split_assignment, Config, ConfigError};

#[derive(Parser)]
#[command(name = "llob", version, about = "Price impact in latent order book models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set model.sigma=2` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory
    #[arg(long, env = "LLOB_OUT_DIR", default_value = "llob-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the impact equation; writes trajectory.csv
    Impact {
        #[arg(long, default_value = "llob")]
        variant: String,
        /// zero, constant, const-small, const-large, round-trip, ramp, or a `t,m` CSV file
        #[arg(long, default_value = "constant")]
        profile: String,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the book density; writes price.csv and book_NNNN.csv snapshots
    Book {
        #[arg(long, default_value = "zero")]
        profile: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named scenario, `list` the ids, or run `all`
    Scenario {
        id: String,
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a closed form and print it
    Analytic {
        #[command(subcommand)]
        which: AnalyticCmd,
    },
}

#[derive(Subcommand)]
enum AnalyticCmd {
    /// Self-similar amplitude for rate ratio m0/J
    #[command(name = "A", alias = "a")]
    A {
        #[arg(long)]
        ratio: f64,
        #[arg(long, default_value = "exact")]
        regime: String,
    },
    /// Small-rate mean-reverted impact at time t
    Arcsine {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        m0: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
    },
    /// Stationary book of the deposition/cancellation model at distance y
    Stationary {
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
    },
    /// Variance of B_t - f(t)
    Mispricing {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        t: f64,
    },
    /// Cost of a constant-rate execution
    Cost {
        #[arg(long)]
        m0: f64,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
        #[arg(long, default_value = "exact")]
        regime: String,
    },
    /// Variance function C(s, t) of the mean-reverted kernel
    #[command(name = "C", alias = "c")]
    C {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        kappa: f64,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
    Io(String),
    ScenarioFailed,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root_cause() {
            Error::NoConvergence { .. }
            | Error::RootNotFound { .. }
            | Error::BoundaryContamination { .. }
            | Error::BookExhausted { .. }
            | Error::BookOneSided => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), Failure> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(num).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io(path))
}

fn write_table(dir: &Path, table: &Table) -> Result<(), Failure> {
    let header: Vec<&str> = table.columns.iter().map(String::as_str).collect();
    write_csv(&dir.join(format!("{}.csv", table.name)), &header, table.rows.iter().cloned())
}

fn prepare(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &common.overrides {
        let (k, v) = split_assignment(o)?;
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn echo_config(dir: &Path, cfg: &Config, extra: &[(&str, &str)]) -> Result<(), Failure> {
    let mut text = String::new();
    for (k, v) in extra {
        let _ = writeln!(text, "{k} = {v}");
    }
    text.push_str(&cfg.resolved());
    let path = dir.join("config.resolved");
    fs::write(&path, text).map_err(io(&path))
}

fn run_impact(variant: &str, profile: &str, common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let v = cfg.variant(variant)?;
    let solver = cfg.solver()?;
    let grid = solver.grid(cfg.f64("time.T")?)?;
    let m = cfg.profile(profile, grid, v.params())?;
    let path = cfg.path(grid)?;
    let traj = solve_impact(&m, &v, &solver)?;
    let kappa = match v {
        KernelVariant::MeanRev(ref p) => p.kappa(),
        _ => 0.0,
    };
    let traj = to_original_frame(&traj, &path, kappa)?;
    prepare(&common.out)?;
    let q = m.cumulative_volumes();
    let rows = (0..grid.len()).map(|k| {
        vec![grid.node(k), traj.y()[k], traj.x()[k], m.rate(k), q[k], traj.cost_running()[k]]
    });
    write_csv(&common.out.join("trajectory.csv"), &["t", "y", "x", "m", "Q", "cost"], rows)?;
    echo_config(&common.out, &cfg, &[("command", "impact"), ("variant", variant), ("profile", profile)])?;
    println!("terminal_y = {}", num(traj.terminal_y()));
    println!("total_cost = {}", num(traj.total_cost()));
    Ok(())
}

fn run_book(profile: &str, common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let params = cfg.params()?;
    let (spec, tg) = cfg.book_grid()?;
    let m = cfg.profile(profile, tg, &params)?;
    let path = cfg.path(tg)?;
    let options = cfg.sim_options()?;
    let run = simulate(&spec, &params, &path, &m, None, &options)?;
    prepare(&common.out)?;
    let f = analytic::f_of_t(&path, params.kappa());
    let rows = (0..run.prices.len()).map(|k| vec![tg.node(k), run.prices[k], path.price(k), f[k]]);
    write_csv(&common.out.join("price.csv"), &["t", "p", "B", "f"], rows)?;
    for state in &run.snapshots {
        let step = (state.t() / spec.dt()).round() as usize;
        let grid = state.grid();
        let rows = (0..grid.len()).map(|i| vec![grid.node(i), state.phi()[i]]);
        write_csv(&common.out.join(format!("book_{step:04}.csv")), &["x", "phi"], rows)?;
    }
    echo_config(&common.out, &cfg, &[("command", "book"), ("profile", profile)])?;
    println!("final_price = {}", num(*run.prices.last().expect("initial price")));
    println!("executed = {}", num(run.total_executed()));
    Ok(())
}

fn save_report(dir: &Path, report: &ScenarioReport) -> Result<(), Failure> {
    prepare(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Failure::Io(e.to_string()))?;
    let path = dir.join("report.json");
    fs::write(&path, json + "\n").map_err(io(&path))?;
    for t in &report.tables {
        write_table(dir, t)?;
    }
    let mut text = format!("scenario = {}\npreset = {}\npreset_version = {}\n", report.id, report.preset, report.preset_version);
    for (k, v) in &report.params {
        let _ = writeln!(text, "{k} = {v}");
    }
    let path = dir.join("settings.resolved");
    fs::write(&path, text).map_err(io(&path))
}

fn run_one(id: &str, preset: Option<&str>, common: &Common) -> Result<bool, Failure> {
    let mut settings = Settings::preset(id, preset)?;
    if common.config.is_some() {
        return Err(Failure::Usage("scenarios take --set overrides, not --config".into()));
    }
    for o in &common.overrides {
        let (k, v) = split_assignment(o)?;
        let value: f64 = v.parse().map_err(|_| Failure::Usage(format!("{k}: expected a number, got '{v}'")))?;
        settings.set(&k, value)?;
    }
    let report = scenarios::run(&settings)?;
    save_report(&common.out.join(id).join(&report.preset), &report)?;
    println!("{} {} {}", id, report.preset, if report.pass { "PASS" } else { "FAIL" });
    for (k, v) in &report.summary {
        println!("  {k} = {}", num(*v));
    }
    Ok(report.pass)
}

fn run_scenario(id: &str, preset: Option<&str>, common: &Common) -> Result<(), Failure> {
    match id {
        "list" => {
            for s in scenarios::SCENARIOS {
                println!("{s}");
            }
            Ok(())
        }
        "all" => {
            if preset.is_some() || !common.overrides.is_empty() {
                return Err(Failure::Usage("`scenario all` runs the stored presets; drop --preset/--set".into()));
            }
            let mut ok = true;
            for id in scenarios::SCENARIOS {
                for p in scenarios::presets(id)? {
                    ok &= run_one(id, Some(p), common)?;
                }
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::ScenarioFailed)
            }
        }
        id => {
            if !scenarios::SCENARIOS.contains(&id) {
                return Err(Failure::Usage(format!(
                    "unknown scenario '{id}'; known: {}",
                    scenarios::SCENARIOS.join(", ")
                )));
            }
            if run_one(id, preset, common)? {
                Ok(())
            } else {
                Err(Failure::ScenarioFailed)
            }
        }
    }
}

fn regime(s: &str) -> Result<Regime, Failure> {
    Ok(s.parse::<Regime>()?)
}

fn zero_nu() -> CancellationRate {
    CancellationRate::constant(0.0).expect("zero rate is valid")
}

fn run_analytic(which: &AnalyticCmd) -> Result<(), Failure> {
    let value = match *which {
        AnalyticCmd::A { ratio, regime: ref r } => analytic::fit_for_regime(ratio, regime(r)?)?.a,
        AnalyticCmd::Arcsine { t, m0, sigma, kappa, slope } => {
            let p = ModelParams::new(sigma, kappa, 0.0, zero_nu(), slope)?;
            analytic::arcsine_propagator(t, m0, &p)?
        }
        AnalyticCmd::Stationary { y, sigma, lambda, nu, slope } => {
            let p = ModelParams::new(sigma, 0.0, lambda, CancellationRate::constant(nu)?, slope)?;
            analytic::stationary_phi_llob(y, &p)?
        }
        AnalyticCmd::Mispricing { kappa, t } => analytic::mispricing_variance(kappa, t)?,
        AnalyticCmd::Cost { m0, horizon, sigma, slope, regime: ref r } => {
            let p = ModelParams::plain(sigma, slope)?;
            analytic::cost_constant_rate(m0, horizon, &p, regime(r)?)?
        }
        AnalyticCmd::C { s, t, kappa } => analytic::c_of(s, t, kappa)?,
    };
    println!("{}", num(value));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Impact { variant, profile, common } => run_impact(variant, profile, common),
        Command::Book { profile, common } => run_book(profile, common),
        Command::Scenario { id, preset, common } => run_scenario(id, preset.as_deref(), common),
        Command::Analytic { which } => run_analytic(which),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::ScenarioFailed) => ExitCode::from(1),
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
