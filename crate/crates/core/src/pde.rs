//! Crank-Nicolson simulation of the signed book density
//! `d phi/dt = kappa (x - B_t) d phi/dx + D d^2 phi/dx^2` on `[-M, M]`, with
//! optional deposition/cancellation source terms and metaorder execution by
//! consuming the opposite side of the book.
//!
//! Diffusion is implicit, advection explicit, so each step is one tridiagonal
//! solve. The first and last rows of both difference operators are zero, which
//! pins the boundary values at whatever the initial state had there.

use std::sync::mpsc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BookState, ExecutionProfile, ModelParams, ReferencePath, SpaceGrid};

/// Space-time discretization: half-width `M`, `P` intervals, time step `dT`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    half_width: f64,
    intervals: usize,
    dt: f64,
}

impl GridSpec {
    pub fn new(half_width: f64, intervals: usize, dt: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("M", "must be positive"));
        }
        if intervals < 8 || !intervals.is_multiple_of(2) {
            return Err(Error::invalid("P", "must be even and at least 8"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dT", "must be positive"));
        }
        Ok(Self {
            half_width,
            intervals,
            dt,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn intervals(&self) -> usize {
        self.intervals
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.intervals as f64
    }

    pub fn space(&self) -> SpaceGrid {
        SpaceGrid::new(self.half_width, self.intervals).expect("validated")
    }

    /// Both steps halved, for convergence studies.
    pub fn refined(&self) -> Self {
        Self {
            intervals: self.intervals * 2,
            dt: self.dt / 2.0,
            ..*self
        }
    }
}

/// First-difference stencil of the advection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvectionStencil {
    /// `(U_{i+1} - U_i) / dx`.
    #[default]
    Forward,
    /// `(U_{i+1} - U_{i-1}) / (2 dx)`.
    Centered,
}

/// Crank-Nicolson step operator with its tridiagonal elimination
/// precomputed. Reusable across steps on the same grid.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: GridSpec,
    diffusivity: f64,
    kappa: f64,
    stencil: AdvectionStencil,
    /// Eliminated super-diagonal and inverse pivots of the left-hand matrix.
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl CrankNicolson {
    pub fn new(grid: GridSpec, params: &ModelParams, stencil: AdvectionStencil) -> Self {
        let n = grid.intervals + 1;
        let r = params.diffusivity() * grid.dt / (grid.dx() * grid.dx());
        let (sub, diag, sup) = (-0.5 * r, 1.0 + r, -0.5 * r);
        // rows 0 and n-1 are identity rows
        let mut upper = vec![0.0; n];
        let mut inv_pivot = vec![1.0; n];
        for i in 1..n - 1 {
            let pivot = diag - sub * upper[i - 1];
            assert!(pivot.abs() > 0.0, "singular Crank-Nicolson system");
            inv_pivot[i] = 1.0 / pivot;
            upper[i] = sup * inv_pivot[i];
        }
        Self {
            grid,
            diffusivity: params.diffusivity(),
            kappa: params.kappa(),
            stencil,
            upper,
            inv_pivot,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Advance `phi` by one step with reference price `reference`.
    pub fn step_in_place(&self, phi: &mut [f64], reference: f64, scratch: &mut Vec<f64>) {
        let n = phi.len();
        debug_assert_eq!(n, self.grid.intervals + 1);
        let dx = self.grid.dx();
        let r = self.diffusivity * self.grid.dt / (dx * dx);
        let adv = self.grid.dt * self.kappa / dx;
        scratch.clear();
        scratch.resize(n, 0.0);
        let rhs = scratch;
        rhs[0] = phi[0];
        rhs[n - 1] = phi[n - 1];
        for i in 1..n - 1 {
            let x = -self.grid.half_width + dx * i as f64;
            let lap = phi[i - 1] - 2.0 * phi[i] + phi[i + 1];
            let grad = match self.stencil {
                AdvectionStencil::Forward => phi[i + 1] - phi[i],
                AdvectionStencil::Centered => 0.5 * (phi[i + 1] - phi[i - 1]),
            };
            rhs[i] = phi[i] + 0.5 * r * lap + adv * (x - reference) * grad;
        }
        // forward sweep (sub-diagonal is -r/2 on interior rows, 0 on the last)
        let sub = -0.5 * r;
        let mut prev = rhs[0];
        for i in 1..n - 1 {
            rhs[i] = (rhs[i] - sub * prev) * self.inv_pivot[i];
            prev = rhs[i];
        }
        // back substitution
        phi[n - 1] = rhs[n - 1];
        for i in (1..n - 1).rev() {
            phi[i] = rhs[i] - self.upper[i] * phi[i + 1];
        }
        phi[0] = rhs[0];
    }
}

/// One Crank-Nicolson step of the book, forward advection stencil.
pub fn cn_step(state: &BookState, params: &ModelParams, reference: f64, grid: &GridSpec) -> Result<BookState> {
    cn_step_with(state, params, reference, grid, AdvectionStencil::Forward)
}

pub fn cn_step_with(
    state: &BookState,
    params: &ModelParams,
    reference: f64,
    grid: &GridSpec,
    stencil: AdvectionStencil,
) -> Result<BookState> {
    check_space(state, grid)?;
    let op = CrankNicolson::new(*grid, params, stencil);
    let mut phi = state.phi().to_vec();
    op.step_in_place(&mut phi, reference, &mut Vec::new());
    Ok(BookState::from_parts(*state.grid(), phi, state.t() + grid.dt))
}

fn check_space(state: &BookState, grid: &GridSpec) -> Result<()> {
    if *state.grid() != grid.space() {
        return Err(Error::GridMismatch(format!(
            "book has {} intervals on [-{}, {}], grid spec has {} on [-{}, {}]",
            state.grid().intervals(),
            state.grid().half_width(),
            state.grid().half_width(),
            grid.intervals,
            grid.half_width,
            grid.half_width
        )));
    }
    Ok(())
}

/// Deposition/cancellation sub-step over `dt`: integrates
/// `phi' = lambda sign(p - x) - nu phi` exactly at every interior node, with
/// `nu` taken at the state's time.
pub fn apply_source_terms(state: &BookState, params: &ModelParams, price: f64, dt: f64) -> BookState {
    let mut phi = state.phi().to_vec();
    source_in_place(&mut phi, state.grid(), params, price, state.t(), dt);
    BookState::from_parts(*state.grid(), phi, state.t())
}

fn source_in_place(phi: &mut [f64], grid: &SpaceGrid, params: &ModelParams, price: f64, t: f64, dt: f64) {
    let lambda = params.lambda();
    let nu = params.nu().at(t);
    if lambda == 0.0 && nu == 0.0 {
        return;
    }
    let decay = (-nu * dt).exp();
    // (1 - e^{-nu dt}) / nu, dt at nu = 0
    let gain = if nu == 0.0 { dt } else { -(-nu * dt).exp_m1() / nu };
    let n = phi.len();
    for (i, v) in phi.iter_mut().enumerate().take(n - 1).skip(1) {
        let side = sign(price - grid.node(i));
        *v = *v * decay + lambda * side * gain;
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Zero of the density. Adjacent sign changes are located by linear
/// interpolation; a run of exact zeros between opposite signs gives the
/// midpoint of the run. With several crossings, the one nearest `previous`
/// (or nearest 0 when there is none) wins, ties to the lower price.
pub fn extract_price(state: &BookState, previous: Option<f64>) -> Result<f64> {
    let grid = state.grid();
    let phi = state.phi();
    let target = previous.unwrap_or(0.0);
    let mut best: Option<f64> = None;
    let mut last: Option<usize> = None;
    for (i, &v) in phi.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if let Some(l) = last {
            if (phi[l] > 0.0) != (v > 0.0) {
                let zero = if i == l + 1 {
                    grid.node(l) + phi[l] / (phi[l] - v) * grid.dx()
                } else {
                    0.5 * (grid.node(l + 1) + grid.node(i - 1))
                };
                best = match best {
                    Some(b) if (b - target).abs() <= (zero - target).abs() => Some(b),
                    _ => Some(zero),
                };
            }
        }
        last = Some(i);
    }
    best.ok_or(Error::BookOneSided)
}

/// Result of filling a metaorder slice against the book.
#[derive(Debug, Clone, PartialEq)]
pub struct Fill {
    pub state: BookState,
    /// Signed volume removed from the book.
    pub filled: f64,
    /// Edge of the consumed region: where the opposite side of the book now starts.
    pub front: f64,
}

/// Fill `volume` (positive buys consume the ask side `phi < 0` above
/// `price`, negative sells the bid side below it) cell by cell, each cell
/// holding `dx |phi_i|`. Boundary nodes are never consumed.
pub fn consume_metaorder(state: &BookState, volume: f64, price: f64) -> Result<Fill> {
    let mut phi = state.phi().to_vec();
    let (filled, front) = consume_in_place(&mut phi, state.grid(), volume, price)?;
    Ok(Fill {
        state: BookState::from_parts(*state.grid(), phi, state.t()),
        filled,
        front,
    })
}

fn consume_in_place(phi: &mut [f64], grid: &SpaceGrid, volume: f64, price: f64) -> Result<(f64, f64)> {
    if volume == 0.0 {
        return Ok((0.0, price));
    }
    let dx = grid.dx();
    let n = phi.len();
    let buy = volume > 0.0;
    let mut remaining = volume.abs();
    let order: Box<dyn Iterator<Item = usize>> = if buy {
        Box::new((1..n - 1).filter(move |&i| grid.node(i) > price))
    } else {
        Box::new((1..n - 1).rev().filter(move |&i| grid.node(i) < price))
    };
    let mut front = price;
    for i in order {
        // opposite side only: asks are negative, bids positive
        let held = if buy { (-phi[i]).max(0.0) } else { phi[i].max(0.0) };
        let capacity = dx * held;
        if capacity == 0.0 {
            continue;
        }
        if capacity <= remaining {
            remaining -= capacity;
            phi[i] = 0.0;
            front = grid.node(i);
        } else {
            let take = remaining / dx;
            phi[i] += if buy { take } else { -take };
            remaining = 0.0;
            // fraction of the cell consumed, measured from the side facing the price
            let frac = take / held;
            front = grid.node(i) + if buy { (frac - 0.5) * dx } else { (0.5 - frac) * dx };
            break;
        }
        if remaining == 0.0 {
            break;
        }
    }
    if remaining > 0.0 {
        return Err(Error::BookExhausted { shortfall: remaining });
    }
    Ok((volume, front))
}

/// How executed volume enters the book.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaorderMode {
    /// Remove volume from the best opposite cells.
    #[default]
    Consume,
    /// Add `m dT` times a unit Gaussian of width `dx` centred at the price.
    Mollified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOptions {
    /// Keep every `stride`-th book state (and the last); 0 keeps none.
    pub snapshot_stride: usize,
    pub source_terms: bool,
    pub stencil: AdvectionStencil,
    pub metaorder: MetaorderMode,
    /// Abort when the price comes within this fraction of the domain edge.
    pub boundary_margin: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            snapshot_stride: 0,
            source_terms: false,
            stencil: AdvectionStencil::default(),
            metaorder: MetaorderMode::default(),
            boundary_margin: 0.1,
        }
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub snapshots: Vec<BookState>,
    /// Extracted price at every time node, starting from the initial book.
    pub prices: Vec<f64>,
    /// Signed volume filled in each step.
    pub executed: Vec<f64>,
    pub dt: f64,
}

impl SimRun {
    pub fn times(&self) -> Vec<f64> {
        (0..self.prices.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn total_executed(&self) -> f64 {
        self.executed.iter().sum()
    }

    pub fn final_state(&self) -> Option<&BookState> {
        self.snapshots.last()
    }
}

/// Run the book forward over the path's grid: each step does the CN update
/// with `B` at the start of the step, then the source sub-step, then the
/// metaorder fill of `m_k dT`, then price extraction.
///
/// The initial book defaults to the linear far field `-L x`.
pub fn simulate(
    grid: &GridSpec,
    params: &ModelParams,
    path: &ReferencePath,
    profile: &ExecutionProfile,
    initial: Option<BookState>,
    options: &SimOptions,
) -> Result<SimRun> {
    let mut snapshots = Vec::new();
    let mut run = simulate_with(grid, params, path, profile, initial, options, |s| snapshots.push(s.clone()))?;
    run.snapshots = snapshots;
    Ok(run)
}

/// As [`simulate`], handing each kept snapshot to a channel instead of
/// collecting it. The channel is unbounded, so stepping never waits on the
/// receiver.
pub fn simulate_streaming(
    grid: &GridSpec,
    params: &ModelParams,
    path: &ReferencePath,
    profile: &ExecutionProfile,
    initial: Option<BookState>,
    options: &SimOptions,
    sink: mpsc::Sender<BookState>,
) -> Result<SimRun> {
    simulate_with(grid, params, path, profile, initial, options, |s| {
        // a dropped receiver only means nobody wants the snapshots
        let _ = sink.send(s.clone());
    })
}

fn simulate_with(
    grid: &GridSpec,
    params: &ModelParams,
    path: &ReferencePath,
    profile: &ExecutionProfile,
    initial: Option<BookState>,
    options: &SimOptions,
    mut emit: impl FnMut(&BookState),
) -> Result<SimRun> {
    let tgrid = profile.grid();
    if path.grid() != tgrid {
        return Err(Error::GridMismatch("reference path and profile grids differ".into()));
    }
    if (tgrid.dt() - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::GridMismatch(format!(
            "profile step {} differs from book step {}",
            tgrid.dt(),
            grid.dt
        )));
    }
    let space = grid.space();
    let state = initial.unwrap_or_else(|| BookState::linear(space, params.slope()));
    check_space(&state, grid)?;
    let op = CrankNicolson::new(*grid, params, options.stencil);
    let steps = tgrid.steps();
    let limit = (1.0 - options.boundary_margin) * grid.half_width;
    let dx = grid.dx();
    let t0 = state.t();
    let mut phi = state.into_phi();
    let mut scratch = Vec::with_capacity(phi.len());

    let mut price = extract_price(&BookState::from_parts(space, phi.clone(), t0), None).map_err(|e| e.at_step(0))?;
    let mut prices = Vec::with_capacity(steps + 1);
    let mut executed = Vec::with_capacity(steps);
    prices.push(price);
    let keep = |k: usize| options.snapshot_stride > 0 && (k.is_multiple_of(options.snapshot_stride) || k == steps);
    if keep(0) {
        emit(&BookState::from_parts(space, phi.clone(), t0));
    }

    for k in 0..steps {
        let t = t0 + k as f64 * grid.dt;
        op.step_in_place(&mut phi, path.price(k), &mut scratch);
        if options.source_terms {
            source_in_place(&mut phi, &space, params, price, t, grid.dt);
        }
        let volume = profile.rate(k) * grid.dt;
        let filled = match options.metaorder {
            MetaorderMode::Consume => consume_in_place(&mut phi, &space, volume, price).map_err(|e| e.at_step(k + 1))?.0,
            MetaorderMode::Mollified => {
                if volume != 0.0 {
                    let norm = 1.0 / (dx * (2.0 * std::f64::consts::PI).sqrt());
                    let n = phi.len();
                    for (i, v) in phi.iter_mut().enumerate().take(n - 1).skip(1) {
                        let z = (space.node(i) - price) / dx;
                        *v += volume * norm * (-0.5 * z * z).exp();
                    }
                }
                volume
            }
        };
        executed.push(filled);
        let state_view = BookState::from_parts(space, phi, t + grid.dt);
        price = extract_price(&state_view, Some(price)).map_err(|e| e.at_step(k + 1))?;
        if price.abs() > limit {
            return Err(Error::BoundaryContamination {
                step: k + 1,
                price,
                half_width: grid.half_width,
            });
        }
        prices.push(price);
        if keep(k + 1) {
            emit(&state_view);
        }
        phi = state_view.into_phi();
    }
    Ok(SimRun {
        snapshots: Vec::new(),
        prices,
        executed,
        dt: grid.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{stationary_mr_pinned, stationary_phi_llob, stationary_phi_mr};
    use crate::model::{CancellationRate, TimeGrid};

    fn params(sigma: f64, kappa: f64, slope: f64) -> ModelParams {
        ModelParams::new(sigma, kappa, 0.0, CancellationRate::constant(0.0).unwrap(), slope).unwrap()
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(1.0, 8, 0.1).is_ok());
        assert!(GridSpec::new(1.0, 9, 0.1).is_err());
        assert!(GridSpec::new(1.0, 6, 0.1).is_err());
        assert!(GridSpec::new(0.0, 8, 0.1).is_err());
        assert!(GridSpec::new(1.0, 8, 0.0).is_err());
        let g = GridSpec::new(2.0, 8, 0.1).unwrap();
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.refined().intervals(), 16);
    }

    #[test]
    fn linear_book_is_a_fixed_point() {
        let g = GridSpec::new(5.0, 100, 0.3).unwrap();
        let p = params(1.0, 0.0, 3.0);
        let s = BookState::linear(g.space(), 3.0);
        let next = cn_step(&s, &p, 0.0, &g).unwrap();
        for (a, b) in s.phi().iter().zip(next.phi()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((next.t() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn boundaries_stay_pinned() {
        let g = GridSpec::new(4.0, 80, 0.1).unwrap();
        let p = params(1.0, 0.5, 2.0);
        let mut s = BookState::from_fn(g.space(), |x| -2.0 * x + (3.0 * x).sin()).unwrap();
        let (left, right) = (s.phi()[0], s.phi()[80]);
        for _ in 0..50 {
            s = cn_step(&s, &p, 0.7, &g).unwrap();
        }
        assert_eq!(s.phi()[0], left);
        assert_eq!(s.phi()[80], right);
    }

    #[test]
    fn source_terms() {
        let g = GridSpec::new(3.0, 60, 0.1).unwrap();
        let s = BookState::from_fn(g.space(), |x| -x + 0.3 * (2.0 * x).cos()).unwrap();
        let none = params(1.0, 0.0, 1.0);
        assert_eq!(apply_source_terms(&s, &none, 0.0, 0.1), s);

        // nu only: exact exponential decay of the interior
        let nu = ModelParams::new(1.0, 0.0, 0.0, CancellationRate::constant(0.7).unwrap(), 1.0).unwrap();
        let out = apply_source_terms(&s, &nu, 0.0, 0.4);
        for i in 1..60 {
            assert!((out.phi()[i] - s.phi()[i] * (-0.28f64).exp()).abs() < 1e-15);
        }
        assert_eq!(out.phi()[0], s.phi()[0]);
    }

    #[test]
    fn stationary_llob_book_barely_moves() {
        // with kappa = 0 the deposition/cancellation steady state is a fixed
        // point of diffusion plus sources; away from its kink at the price a
        // full step moves it by a tiny fraction of either term's size dt * lambda
        let (lambda, nu, d): (f64, f64, f64) = (2.0, 1.0, 0.5);
        let slope = lambda / (nu * d).sqrt();
        let p = ModelParams::from_diffusivity(d, 0.0, lambda, CancellationRate::constant(nu).unwrap(), slope).unwrap();
        for dt in [0.01, 0.005] {
            let g = GridSpec::new(8.0, 1600, dt).unwrap();
            let s = BookState::from_fn(g.space(), |x| stationary_phi_llob(x, &p).unwrap()).unwrap();
            let stepped = apply_source_terms(&cn_step(&s, &p, 0.0, &g).unwrap(), &p, 0.0, dt);
            let change = (1..1600)
                .filter(|&i| g.space().node(i).abs() > 1.0)
                .map(|i| (stepped.phi()[i] - s.phi()[i]).abs())
                .fold(0.0, f64::max);
            assert!(change < 1e-4 * dt * lambda, "dt={dt}: {change}");
        }
    }

    #[test]
    fn price_extraction() {
        let g = SpaceGrid::new(2.0, 40).unwrap();
        assert!(extract_price(&BookState::linear(g, 3.0), None).unwrap().abs() < 1e-15);
        let shifted = BookState::from_fn(g, |x| -3.0 * (x - 0.37)).unwrap();
        assert!((extract_price(&shifted, None).unwrap() - 0.37).abs() < 1e-12);
        let flat = BookState::from_fn(g, |_| 1.0).unwrap();
        assert_eq!(extract_price(&flat, None), Err(Error::BookOneSided));
        // two crossings: pick the one nearest the previous price
        let two = BookState::from_fn(g, |x| (x - 1.0) * (x + 1.0)).unwrap();
        assert!((extract_price(&two, Some(0.8)).unwrap() - 1.0).abs() < 1e-12);
        assert!((extract_price(&two, Some(-0.8)).unwrap() + 1.0).abs() < 1e-12);
        // tie: lower price
        assert!((extract_price(&two, Some(0.0)).unwrap() + 1.0).abs() < 1e-12);
        // plateau of zeros
        let plateau = BookState::from_fn(g, |x| if x < 0.0 { 1.0 } else if x <= 0.5 { 0.0 } else { -1.0 }).unwrap();
        assert!((extract_price(&plateau, None).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn consumption_of_linear_book() {
        let g = SpaceGrid::new(4.0, 800).unwrap();
        let slope = 2.0;
        let book = BookState::linear(g, slope);
        assert_eq!(consume_metaorder(&book, 0.0, 0.0).unwrap().state, book);
        let q = 1.3;
        let fill = consume_metaorder(&book, q, 0.0).unwrap();
        let expect = (2.0 * q / slope).sqrt();
        assert!((fill.front - expect).abs() < g.dx(), "{} vs {expect}", fill.front);
        assert_eq!(fill.filled, q);
        let removed = fill.state.integral() - book.integral();
        assert!((removed - q).abs() < 1e-12);
        // sells take bids below the price
        let sell = consume_metaorder(&book, -q, 0.0).unwrap();
        assert!((sell.front + expect).abs() < g.dx());
        assert!((book.integral() - sell.state.integral() - q).abs() < 1e-12);
        match consume_metaorder(&book, 1e3, 0.0) {
            Err(Error::BookExhausted { shortfall }) => assert!(shortfall > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fig_preset_reaches_pinned_stationary_profile() {
        let g = GridSpec::new(10.0, 200, 0.2).unwrap();
        let p = params(1.0, 0.05, 50.0);
        let mut s = BookState::linear(g.space(), 50.0);
        let op = CrankNicolson::new(g, &p, AdvectionStencil::Forward);
        let mut phi = s.phi().to_vec();
        let mut scratch = Vec::new();
        for _ in 0..1500 {
            op.step_in_place(&mut phi, 0.0, &mut scratch);
        }
        s = BookState::new(g.space(), phi, 300.0).unwrap();
        let (c0, c1) = stationary_mr_pinned(&p, 10.0, 50.0).unwrap();
        let scale = 500.0;
        let mut worst = 0.0f64;
        for (i, v) in s.phi().iter().enumerate() {
            let x = g.space().node(i);
            if x.abs() <= 8.0 {
                let exact = stationary_phi_mr(x, &p, c0, c1).unwrap();
                worst = worst.max((v - exact).abs() / scale);
            }
        }
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn simulate_without_orders_stays_put() {
        let g = GridSpec::new(3.0, 60, 0.05).unwrap();
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let p = params(1.0, 0.0, 1.0);
        let run = simulate(
            &g,
            &p,
            &ReferencePath::constant(tg, 0.0),
            &ExecutionProfile::zero(tg),
            None,
            &SimOptions {
                snapshot_stride: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(run.prices.iter().all(|&p| p.abs() < 1e-12));
        assert_eq!(run.snapshots.len(), 5);
        assert_eq!(run.prices.len(), 21);
        let none = simulate(
            &g,
            &p,
            &ReferencePath::constant(tg, 0.0),
            &ExecutionProfile::zero(tg),
            None,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(none.snapshots.is_empty());
    }

    #[test]
    fn streaming_matches_collected() {
        let g = GridSpec::new(3.0, 60, 0.05).unwrap();
        let tg = TimeGrid::new(0.5, 10).unwrap();
        let p = params(1.0, 0.2, 1.0);
        let path = ReferencePath::constant(tg, 0.1);
        let prof = ExecutionProfile::constant(tg, 0.2).unwrap();
        let opts = SimOptions {
            snapshot_stride: 3,
            ..Default::default()
        };
        let collected = simulate(&g, &p, &path, &prof, None, &opts).unwrap();
        let (tx, rx) = mpsc::channel();
        let streamed = simulate_streaming(&g, &p, &path, &prof, None, &opts, tx).unwrap();
        let received: Vec<BookState> = rx.iter().collect();
        assert_eq!(received, collected.snapshots);
        assert_eq!(streamed.prices, collected.prices);
    }

    #[test]
    fn boundary_guard_trips() {
        let g = GridSpec::new(1.0, 40, 0.01).unwrap();
        let tg = TimeGrid::new(1.0, 100).unwrap();
        let p = params(1.0, 0.0, 1.0);
        let err = simulate(
            &g,
            &p,
            &ReferencePath::constant(tg, 0.0),
            &ExecutionProfile::constant(tg, 5.0).unwrap(),
            None,
            &SimOptions {
                boundary_margin: 0.3,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::BoundaryContamination { .. }), "{err}");
    }
}
