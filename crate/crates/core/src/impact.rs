//! Solvers for the impacted-price integral equations.
//!
//! All three variants share one discretization. The solution is marched node
//! by node; at node `t_k` every earlier value is frozen and the scalar
//! equation `y_k = F_k(y_k)` is solved by damped Picard iteration started from
//! `y_{k-1}`. On each step `[t_j, t_{j+1})` the rate is held at `m_j`, the
//! weakly singular factor is integrated exactly and the Gaussian factor is
//! evaluated at the step midpoint with `y` averaged over the two ends. On the
//! last step `y` is taken linear between `y_{k-1}` and `y_k`, which makes the
//! whole step integral an error function of the increment.

use std::f64::consts::PI;

use serde::Serialize;

use crate::analytic::{c_of_unchecked, f_of_t, mr_step_weight};
use crate::error::{Error, Result};
use crate::model::{CancellationWeighting, ExecutionProfile, ImpactTrajectory, ModelParams, ReferencePath, TimeGrid};
use crate::special::{erf, erf_time_integral, gl20};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Time steps used when a caller builds a grid from a horizon.
    pub n_steps: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Initial Picard relaxation factor; halved whenever the increments
    /// alternate in sign.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_steps: 1024,
            picard_tol: 1e-10,
            picard_max_iter: 500,
            damping: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::invalid("n_steps", "must be at least 2"));
        }
        if !(self.picard_tol > 0.0 && self.picard_tol.is_finite()) {
            return Err(Error::invalid("picard_tol", "must be positive"));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::invalid("picard_max_iter", "must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_steps(self, n_steps: usize) -> Self {
        Self { n_steps, ..self }
    }

    /// Uniform grid on `[0, horizon]` with `n_steps` steps.
    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::new(horizon, self.n_steps)
    }
}

/// How the deposition term of the deposition/cancellation equation is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepositionTerm {
    /// `lambda * erf(...)` with no cancellation weight.
    #[default]
    Plain,
    /// Same weight as the metaorder term.
    Weighted,
}

/// Which impact equation to solve, with the coefficients it uses.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum KernelVariant {
    /// Plain book: only `D` and `L` are used.
    Llob(ModelParams),
    /// Deposition at rate `lambda`, cancellation at rate `nu(t)`.
    DepCan {
        params: ModelParams,
        deposition: DepositionTerm,
        weighting: CancellationWeighting,
    },
    /// Mean-reverted book in the working frame; needs `kappa > 0`.
    MeanRev(ModelParams),
}

impl KernelVariant {
    pub fn dep_can(params: ModelParams) -> Self {
        KernelVariant::DepCan {
            params,
            deposition: DepositionTerm::default(),
            weighting: CancellationWeighting::default(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            KernelVariant::Llob(p) | KernelVariant::MeanRev(p) => p,
            KernelVariant::DepCan { params, .. } => params,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelVariant::Llob(_) => "llob",
            KernelVariant::DepCan { .. } => "depcan",
            KernelVariant::MeanRev(_) => "meanrev",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelVariant::MeanRev(p) = self {
            if p.kappa() <= 0.0 {
                return Err(Error::invalid("kappa", "must be positive for the mean-reverted kernel"));
            }
        }
        Ok(())
    }
}

/// Precomputed per-grid quantities.
struct Kernel<'a> {
    variant: &'a KernelVariant,
    grid: TimeGrid,
    /// Exact step integrals of the singular factor, divided by `L`, by lag `d = k - j`.
    weights: Vec<f64>,
    /// Rate times any smooth weight, per step.
    source: Vec<f64>,
}

impl<'a> Kernel<'a> {
    fn new(variant: &'a KernelVariant, profile: &ExecutionProfile) -> Self {
        let grid = *profile.grid();
        let n = grid.steps();
        let dt = grid.dt();
        let p = variant.params();
        let slope = p.slope();
        let weights: Vec<f64> = match variant {
            KernelVariant::Llob(_) | KernelVariant::DepCan { .. } => {
                let norm = slope * (4.0 * PI * p.diffusivity()).sqrt();
                (0..=n)
                    .map(|d| {
                        if d == 0 {
                            0.0
                        } else {
                            2.0 * ((d as f64 * dt).sqrt() - ((d - 1) as f64 * dt).sqrt()) / norm
                        }
                    })
                    .collect()
            }
            KernelVariant::MeanRev(_) => (0..=n)
                .map(|d| {
                    if d == 0 {
                        0.0
                    } else {
                        mr_step_weight((d - 1) as f64 * dt, d as f64 * dt, p.sigma(), p.kappa()) / slope
                    }
                })
                .collect(),
        };
        let source = (0..n)
            .map(|j| {
                let m = profile.rate(j);
                match variant {
                    KernelVariant::DepCan { params, weighting, .. } => {
                        m * params.nu().weight(grid.node(j) + 0.5 * dt, *weighting)
                    }
                    _ => m,
                }
            })
            .collect();
        Self {
            variant,
            grid,
            weights,
            source,
        }
    }

    /// Gaussian exponent coefficient `1 / (2 * variance)` for step `j` seen from node `k`.
    fn inv_two_var(&self, j: usize, k: usize) -> f64 {
        let dt = self.grid.dt();
        let p = self.variant.params();
        match self.variant {
            KernelVariant::MeanRev(_) => {
                let s = self.grid.node(j) + 0.5 * dt;
                let c = c_of_unchecked(s, self.grid.node(k), p.kappa());
                1.0 / (2.0 * p.sigma() * p.sigma() * c)
            }
            _ => 1.0 / (4.0 * p.diffusivity() * ((k - j) as f64 - 0.5) * dt),
        }
    }

    /// `1 / (2 * variance)` accumulated over the whole last step before node `k`.
    fn inv_two_var_last(&self, k: usize) -> f64 {
        let p = self.variant.params();
        match self.variant {
            KernelVariant::MeanRev(_) => {
                let c = c_of_unchecked(self.grid.node(k - 1), self.grid.node(k), p.kappa());
                1.0 / (2.0 * p.sigma() * p.sigma() * c)
            }
            _ => 1.0 / (4.0 * p.diffusivity() * self.grid.dt()),
        }
    }

    /// The scalar map at node `k >= 1` with `y[..k]` frozen.
    fn node_map(&self, y: &[f64], k: usize) -> NodeMap<'_> {
        let mut terms = Vec::with_capacity(k.saturating_sub(1));
        for j in 0..k - 1 {
            let c = self.source[j] * self.weights[k - j];
            if c != 0.0 {
                terms.push((c, self.inv_two_var(j, k), 0.5 * (y[j] + y[j + 1])));
            }
        }
        NodeMap {
            kernel: self,
            k,
            last: (self.source[k - 1] * self.weights[1], self.inv_two_var_last(k), y[k - 1]),
            terms,
        }
    }
}

struct NodeMap<'a> {
    kernel: &'a Kernel<'a>,
    k: usize,
    /// `(coefficient, 1/(2 var), y_{k-1})` of the last step.
    last: (f64, f64, f64),
    /// `(coefficient, 1/(2 var), midpoint y)` of each frozen step.
    terms: Vec<(f64, f64, f64)>,
}

impl NodeMap<'_> {
    fn eval(&self, yk: f64) -> f64 {
        let (c, a, prev) = self.last;
        let mut acc = c * last_step_factor((yk - prev).abs() * a.sqrt());
        for &(c, a, ybar) in &self.terms {
            let dy = yk - ybar;
            acc += c * (-a * dy * dy).exp();
        }
        if let KernelVariant::DepCan {
            params, deposition, weighting,
        } = self.kernel.variant
        {
            if params.lambda() != 0.0 {
                acc += deposition_term(yk, self.k, &self.kernel.grid, params, *deposition, *weighting);
            }
        }
        acc
    }
}

/// `(1/(2 sqrt h)) integral_0^h u^{-1/2} exp(-z^2 u / h) du = sqrt(pi) erf(z) / (2 z)`.
fn last_step_factor(z: f64) -> f64 {
    if z < 1e-4 {
        1.0 - z * z / 3.0
    } else {
        PI.sqrt() * erf(z) / (2.0 * z)
    }
}

/// `(lambda/L) integral_0^t erf(y / (2 sqrt(D (t-s)))) w(s) ds` at node `k`.
fn deposition_term(
    y: f64,
    k: usize,
    grid: &TimeGrid,
    params: &ModelParams,
    deposition: DepositionTerm,
    weighting: CancellationWeighting,
) -> f64 {
    let a = y / (2.0 * params.diffusivity().sqrt());
    let scale = params.lambda() / params.slope();
    match deposition {
        DepositionTerm::Plain => scale * erf_time_integral(a, grid.node(k)),
        DepositionTerm::Weighted => {
            let dt = grid.dt();
            let mut acc = 0.0;
            let mut upper = 0.0;
            for d in 1..=k {
                let lower = erf_time_integral(a, d as f64 * dt);
                let j = k - d;
                acc += params.nu().weight(grid.node(j) + 0.5 * dt, weighting) * (lower - upper);
                upper = lower;
            }
            scale * acc
        }
    }
}

/// Solve the selected impact equation on the profile's grid.
pub fn solve_impact(profile: &ExecutionProfile, variant: &KernelVariant, config: &SolverConfig) -> Result<ImpactTrajectory> {
    config.validate()?;
    variant.validate()?;
    let kernel = Kernel::new(variant, profile);
    let len = profile.grid().len();
    let mut y = vec![0.0; len];
    let mut omega = config.damping;
    for k in 1..len {
        let map = kernel.node_map(&y, k);
        let (yk, w) = picard(&map, y[k - 1], omega, config).map_err(|e| match e {
            Error::NoConvergence { residual, iterations, .. } => Error::NoConvergence {
                node: k,
                residual,
                iterations,
            },
            e => e,
        })?;
        y[k] = yk;
        omega = (2.0 * w).min(config.damping);
    }
    ImpactTrajectory::new(profile, y)
}

/// Damped Picard on a scalar map; returns the fixed point and the final damping.
fn picard(map: &NodeMap<'_>, start: f64, omega: f64, config: &SolverConfig) -> Result<(f64, f64)> {
    let mut y = start;
    let mut omega = omega;
    let mut prev = 0.0;
    let mut inc = f64::NAN;
    for _ in 0..config.picard_max_iter {
        inc = map.eval(y) - y;
        if !inc.is_finite() {
            break;
        }
        if inc.abs() < config.picard_tol {
            return Ok((y, omega));
        }
        if inc * prev < 0.0 {
            omega *= 0.5;
        } else if prev != 0.0 && inc.abs() > 0.9 * prev.abs() {
            // monotone but stalling: relax less
            omega = (omega * 1.5).min(1.0);
        }
        y += omega * inc;
        prev = inc;
    }
    Err(Error::NoConvergence {
        node: map.k,
        residual: inc.abs(),
        iterations: config.picard_max_iter,
    })
}

fn check_grid(trajectory: &ImpactTrajectory, profile: &ExecutionProfile) -> Result<()> {
    if trajectory.grid() != profile.grid() {
        return Err(Error::GridMismatch(format!(
            "trajectory grid ({} steps over {}) differs from profile grid ({} steps over {})",
            trajectory.grid().steps(),
            trajectory.grid().horizon(),
            profile.grid().steps(),
            profile.grid().horizon()
        )));
    }
    Ok(())
}

/// Largest defect `|y_k - F_k(y_k)|` of the solver's own discrete equations.
pub fn discrete_residual(trajectory: &ImpactTrajectory, profile: &ExecutionProfile, variant: &KernelVariant) -> Result<f64> {
    check_grid(trajectory, profile)?;
    variant.validate()?;
    let kernel = Kernel::new(variant, profile);
    let y = trajectory.y();
    let mut worst = y[0].abs();
    for k in 1..y.len() {
        let map = kernel.node_map(y, k);
        worst = worst.max((y[k] - map.eval(y[k])).abs());
    }
    Ok(worst)
}

/// Largest defect of the continuous equation at the grid nodes, with the
/// right-hand side recomputed by Gauss-Legendre quadrature in `v = sqrt(t - s)`
/// (20 points per step, `y` interpolated linearly between nodes).
///
/// This measures discretization error as well as fixed-point error, so it
/// shrinks with grid refinement rather than with `picard_tol`.
pub fn residual(trajectory: &ImpactTrajectory, profile: &ExecutionProfile, variant: &KernelVariant) -> Result<f64> {
    check_grid(trajectory, profile)?;
    variant.validate()?;
    let grid = *profile.grid();
    let dt = grid.dt();
    let y = trajectory.y();
    let p = variant.params();
    let (nodes, weights) = gl20();
    let y_at = |s: f64| {
        let pos = (s / dt).clamp(0.0, grid.steps() as f64);
        let j = (pos.floor() as usize).min(grid.steps() - 1);
        let frac = pos - j as f64;
        y[j] * (1.0 - frac) + y[j + 1] * frac
    };
    let mut worst = y[0].abs();
    for k in 1..y.len() {
        let t = grid.node(k);
        let yk = y[k];
        let mut acc = 0.0;
        let mut dep = 0.0;
        for j in 0..k {
            let m = profile.rate(j);
            let (va, vb) = ((t - grid.node(j + 1)).max(0.0).sqrt(), (t - grid.node(j)).sqrt());
            let half = 0.5 * (vb - va);
            let mid = 0.5 * (va + vb);
            for (x, w) in nodes.iter().zip(weights) {
                let v = mid + half * x;
                let u = v * v;
                let s = t - u;
                let dy = yk - y_at(s);
                // ds = 2 v dv absorbs the 1/sqrt(u) singularity
                let (kernel, smooth) = match variant {
                    KernelVariant::Llob(_) => (
                        2.0 / (4.0 * PI * p.diffusivity()).sqrt(),
                        (-dy * dy / (4.0 * p.diffusivity() * u)).exp(),
                    ),
                    KernelVariant::DepCan { weighting, .. } => (
                        2.0 / (4.0 * PI * p.diffusivity()).sqrt(),
                        p.nu().weight(s, *weighting) * (-dy * dy / (4.0 * p.diffusivity() * u)).exp(),
                    ),
                    KernelVariant::MeanRev(_) => {
                        let kappa = p.kappa();
                        let c = c_of_unchecked(s, t, kappa);
                        // e^{kappa s} / sqrt(C) * v = sqrt(2 kappa u / expm1(2 kappa u))
                        let ratio = (2.0 * kappa * u / (2.0 * kappa * u).exp_m1()).sqrt();
                        (
                            2.0 * ratio / (2.0 * PI * p.sigma() * p.sigma()).sqrt(),
                            (-dy * dy / (2.0 * p.sigma() * p.sigma() * c)).exp(),
                        )
                    }
                };
                acc += half * w * m * kernel * smooth;
                if let KernelVariant::DepCan {
                    deposition, weighting, ..
                } = variant
                {
                    let wt = match deposition {
                        DepositionTerm::Plain => 1.0,
                        DepositionTerm::Weighted => p.nu().weight(s, *weighting),
                    };
                    dep += half * w * 2.0 * v * wt * erf(yk / (2.0 * (p.diffusivity() * u).sqrt()));
                }
            }
        }
        let rhs = (acc + p.lambda() * dep) / p.slope();
        worst = worst.max((yk - rhs).abs());
    }
    Ok(worst)
}

/// Fill the original-frame price `x_t = e^{-kappa t} y_t + f(t)`, `f` the
/// exponentially weighted average of the reference path. At `kappa = 0` the
/// frames coincide and `x = y`.
pub fn to_original_frame(trajectory: &ImpactTrajectory, path: &ReferencePath, kappa: f64) -> Result<ImpactTrajectory> {
    if path.grid() != trajectory.grid() {
        return Err(Error::GridMismatch("reference path and trajectory grids differ".into()));
    }
    if kappa < 0.0 {
        return Err(Error::invalid("kappa", "must be non-negative"));
    }
    if kappa == 0.0 {
        return Ok(trajectory.clone().with_x(trajectory.y().to_vec()));
    }
    let f = f_of_t(path, kappa);
    let grid = trajectory.grid();
    let x = trajectory
        .y()
        .iter()
        .enumerate()
        .map(|(k, y)| (-kappa * grid.node(k)).exp() * y + f[k])
        .collect();
    Ok(trajectory.clone().with_x(x))
}

/// Inverse of [`to_original_frame`]: `y_t = e^{kappa t} (x_t - f(t))`.
pub fn to_working_frame(x: &[f64], path: &ReferencePath, kappa: f64) -> Result<Vec<f64>> {
    if x.len() != path.grid().len() {
        return Err(Error::GridMismatch("price series and reference path lengths differ".into()));
    }
    if kappa == 0.0 {
        return Ok(x.to_vec());
    }
    let f = f_of_t(path, kappa);
    let grid = path.grid();
    Ok(x
        .iter()
        .enumerate()
        .map(|(k, xk)| (kappa * grid.node(k)).exp() * (xk - f[k]))
        .collect())
}
