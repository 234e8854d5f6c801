//! Domain types shared by every solver: model coefficients, uniform time and
//! price grids, execution profiles, reference-price paths, book snapshots and
//! impact trajectories.
//!
//! All types are immutable once built. Constructors validate their inputs and
//! derived quantities (`D = sigma^2 / 2`, `J = L * D`) are computed on demand
//! rather than stored, so they can never drift out of sync.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// How a time-varying cancellation rate enters the metaorder weight `e^{...}`
/// in the deposition/cancellation impact equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CancellationWeighting {
    /// `exp(nu(s) * s)`: the rate in force at `s` times `s`.
    #[default]
    Instantaneous,
    /// `exp(integral_0^s nu(u) du)`.
    Cumulative,
}

/// Piecewise-constant cancellation rate `nu(t)`. A constant rate is the
/// single-piece case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CancellationRate {
    /// `(start_time, rate)` pairs, strictly increasing in start time, first start is 0.
    pieces: Vec<(f64, f64)>,
}

impl CancellationRate {
    pub fn constant(rate: f64) -> Result<Self> {
        Self::piecewise(vec![(0.0, rate)])
    }

    pub fn piecewise(pieces: Vec<(f64, f64)>) -> Result<Self> {
        let Some(&(first, _)) = pieces.first() else {
            return Err(Error::invalid("nu", "needs at least one piece"));
        };
        if first != 0.0 {
            return Err(Error::invalid("nu", "first piece must start at t = 0"));
        }
        for w in pieces.windows(2) {
            if !(w[1].0 > w[0].0) || !w[1].0.is_finite() {
                return Err(Error::invalid("nu", "piece start times must be strictly increasing"));
            }
        }
        for &(_, rate) in &pieces {
            if !rate.is_finite() {
                return Err(Error::invalid("nu", "must be finite"));
            }
            if rate < 0.0 {
                return Err(Error::invalid("nu", "must be non-negative"));
            }
        }
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.len() == 1
    }

    /// Rate in force at time `t` (pieces are closed on the left).
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.pieces.partition_point(|&(start, _)| start <= t);
        self.pieces[idx.saturating_sub(1)].1
    }

    /// `integral_0^t nu(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(start, rate)) in self.pieces.iter().enumerate() {
            if start >= t {
                break;
            }
            let end = self.pieces.get(i + 1).map_or(t, |p| p.0.min(t));
            acc += rate * (end - start);
        }
        acc
    }

    /// Metaorder weight at time `s`.
    pub fn weight(&self, s: f64, weighting: CancellationWeighting) -> f64 {
        match weighting {
            CancellationWeighting::Instantaneous => (self.at(s) * s).exp(),
            CancellationWeighting::Cumulative => self.integral(s).exp(),
        }
    }

    /// Exact `integral_a^b weight(s) ds`, split at the piece boundaries.
    pub fn weight_integral(&self, a: f64, b: f64, weighting: CancellationWeighting) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, &(start, rate)) in self.pieces.iter().enumerate() {
            let end = self.pieces.get(i + 1).map_or(f64::INFINITY, |p| p.0);
            let lo = a.max(start);
            let hi = b.min(end);
            if hi <= lo {
                continue;
            }
            // weight(s) = c * exp(rate * s) on this piece
            let log_c = match weighting {
                CancellationWeighting::Instantaneous => 0.0,
                CancellationWeighting::Cumulative => self.integral(start) - rate * start,
            };
            acc += if rate == 0.0 {
                log_c.exp() * (hi - lo)
            } else {
                (log_c + rate * lo).exp() * (rate * (hi - lo)).exp_m1() / rate
            };
        }
        acc
    }
}

/// Model coefficients. `D` and `J` are derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    sigma: f64,
    kappa: f64,
    lambda: f64,
    nu: CancellationRate,
    slope: f64,
}

impl ModelParams {
    /// Validates and builds a parameter set.
    ///
    /// `sigma` is the price volatility, `kappa` the mean-reversion intensity
    /// (0 selects the plain book), `lambda` the deposition rate, `nu` the
    /// cancellation rate and `slope` the book slope `L` near the price.
    pub fn new(sigma: f64, kappa: f64, lambda: f64, nu: CancellationRate, slope: f64) -> Result<Self> {
        check_finite("sigma", sigma)?;
        check_finite("kappa", kappa)?;
        check_finite("lambda", lambda)?;
        check_finite("L", slope)?;
        if sigma <= 0.0 {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if slope <= 0.0 {
            return Err(Error::invalid("L", "must be positive"));
        }
        if kappa < 0.0 {
            return Err(Error::invalid("kappa", "must be non-negative"));
        }
        if lambda < 0.0 {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        Ok(Self {
            sigma,
            kappa,
            lambda,
            nu,
            slope,
        })
    }

    /// Plain book: only diffusion and slope, no reversion, deposition or cancellation.
    pub fn plain(sigma: f64, slope: f64) -> Result<Self> {
        Self::new(sigma, 0.0, 0.0, CancellationRate::constant(0.0)?, slope)
    }

    /// Builds from the diffusivity `D` instead of `sigma`.
    pub fn from_diffusivity(d: f64, kappa: f64, lambda: f64, nu: CancellationRate, slope: f64) -> Result<Self> {
        check_finite("D", d)?;
        if d <= 0.0 {
            return Err(Error::invalid("D", "must be positive"));
        }
        Self::new((2.0 * d).sqrt(), kappa, lambda, nu, slope)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn nu(&self) -> &CancellationRate {
        &self.nu
    }
    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// Price diffusivity `D = sigma^2 / 2`.
    pub fn diffusivity(&self) -> f64 {
        self.sigma * self.sigma / 2.0
    }

    /// Trading-rate scale `J = L * D`.
    pub fn rate_scale(&self) -> f64 {
        self.slope * self.diffusivity()
    }

    /// `gamma = sqrt(nu / D)` for a constant cancellation rate.
    pub fn gamma(&self) -> Result<f64> {
        let nu = self.constant_nu()?;
        Ok((nu / self.diffusivity()).sqrt())
    }

    pub fn constant_nu(&self) -> Result<f64> {
        if !self.nu.is_constant() {
            return Err(Error::Domain("operation requires a constant cancellation rate".into()));
        }
        Ok(self.nu.at(0.0))
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(sigma, self.kappa, self.lambda, self.nu.clone(), self.slope)
    }
    pub fn with_diffusivity(&self, d: f64) -> Result<Self> {
        Self::from_diffusivity(d, self.kappa, self.lambda, self.nu.clone(), self.slope)
    }
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.sigma, kappa, self.lambda, self.nu.clone(), self.slope)
    }
    pub fn with_deposition(&self, lambda: f64, nu: CancellationRate) -> Result<Self> {
        Self::new(self.sigma, self.kappa, lambda, nu, self.slope)
    }
    pub fn with_slope(&self, slope: f64) -> Result<Self> {
        Self::new(self.sigma, self.kappa, self.lambda, self.nu.clone(), slope)
    }
}

fn check_finite(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

/// Uniform time grid `t_k = T * k / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("T", "must be positive and finite"));
        }
        if steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
    pub fn node(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// Metaorder trading rate sampled on a uniform grid. `rate[j]` applies on
/// `[t_j, t_{j+1})`; positive is a buy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionProfile {
    grid: TimeGrid,
    rate: Vec<f64>,
}

impl ExecutionProfile {
    pub fn new(grid: TimeGrid, rate: Vec<f64>) -> Result<Self> {
        if rate.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "profile has {} rates for {} grid nodes",
                rate.len(),
                grid.len()
            )));
        }
        if rate.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("m", "trading rates must be finite"));
        }
        Ok(Self { grid, rate })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            rate: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: TimeGrid, m0: f64) -> Result<Self> {
        Self::from_fn(grid, |_| m0)
    }

    /// `+m0` on `[0, t_switch)`, `-m0` on `[t_switch, T]`.
    pub fn round_trip(grid: TimeGrid, m0: f64, t_switch: f64) -> Result<Self> {
        Self::from_fn(grid, |t| if t < t_switch { m0 } else { -m0 })
    }

    /// Linear ramp from `m_start` at 0 to `m_end` at `T`.
    pub fn ramp(grid: TimeGrid, m_start: f64, m_end: f64) -> Result<Self> {
        let horizon = grid.horizon();
        Self::from_fn(grid, |t| m_start + (m_end - m_start) * t / horizon)
    }

    /// Resamples `(time, rate)` samples onto `grid` by step-function
    /// interpolation: each node takes the rate of the last sample at or before
    /// it, and the first sample's rate before it.
    pub fn from_step_samples(grid: TimeGrid, samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("profile", "needs at least one sample"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("profile", "sample times must be strictly increasing"));
        }
        Self::from_fn(grid, |t| {
            let idx = samples.partition_point(|&(ts, _)| ts <= t);
            samples[idx.saturating_sub(1)].1
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn rates(&self) -> &[f64] {
        &self.rate
    }
    pub fn rate(&self, k: usize) -> f64 {
        self.rate[k]
    }

    /// `Q(t_k) = dT * sum_{j<k} m_j`.
    pub fn cumulative_volume(&self, k: usize) -> f64 {
        self.grid.dt() * self.rate[..k].iter().sum::<f64>()
    }

    pub fn cumulative_volumes(&self) -> Vec<f64> {
        let dt = self.grid.dt();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.rate.len());
        for &m in &self.rate {
            out.push(dt * acc);
            acc += m;
        }
        out
    }

    pub fn total_volume(&self) -> f64 {
        self.cumulative_volume(self.grid.steps())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            rate: self.rate.iter().map(|m| m * factor).collect(),
        }
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.rate.iter().fold(0.0, |a, m| a.max(m.abs()))
    }
}

/// Exogenous reference-price path `B_t` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    grid: TimeGrid,
    price: Vec<f64>,
    seed: Option<u64>,
}

impl ReferencePath {
    pub fn new(grid: TimeGrid, price: Vec<f64>) -> Result<Self> {
        if price.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "path has {} prices for {} grid nodes",
                price.len(),
                grid.len()
            )));
        }
        if price.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("B", "reference prices must be finite"));
        }
        Ok(Self {
            grid,
            price,
            seed: None,
        })
    }

    pub fn constant(grid: TimeGrid, level: f64) -> Self {
        Self {
            grid,
            price: vec![level; grid.len()],
            seed: None,
        }
    }

    /// Brownian path `B_0 = offset`, independent `N(0, vol^2 dt)` increments.
    ///
    /// The generator is ChaCha8 seeded through `seed_from_u64` and the normals
    /// come from `rand_distr`'s ziggurat sampler, so a given seed reproduces the
    /// same path bit-for-bit on every platform.
    pub fn brownian(seed: u64, n_steps: usize, dt: f64, vol: f64, offset: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        if !(vol.is_finite() && vol >= 0.0) {
            return Err(Error::invalid("vol", "must be non-negative and finite"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("offset", "must be finite"));
        }
        let grid = TimeGrid::new(dt * n_steps as f64, n_steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = vol * dt.sqrt();
        let mut price = Vec::with_capacity(n_steps + 1);
        let mut b = offset;
        price.push(b);
        for _ in 0..n_steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += scale * z;
            price.push(b);
        }
        Ok(Self {
            grid,
            price,
            seed: Some(seed),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn prices(&self) -> &[f64] {
        &self.price
    }
    pub fn price(&self, k: usize) -> f64 {
        self.price[k]
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Uniform price grid `x_i = -M + 2M i / P`, `i = 0..=P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceGrid {
    half_width: f64,
    intervals: usize,
}

impl SpaceGrid {
    pub fn new(half_width: f64, intervals: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::invalid("M", "must be positive and finite"));
        }
        if intervals < 4 {
            return Err(Error::invalid("P", "must be at least 4"));
        }
        Ok(Self {
            half_width,
            intervals,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn intervals(&self) -> usize {
        self.intervals
    }
    pub fn len(&self) -> usize {
        self.intervals + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.intervals as f64
    }
    pub fn node(&self, i: usize) -> f64 {
        -self.half_width + 2.0 * self.half_width * i as f64 / self.intervals as f64
    }
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.intervals).map(|i| self.node(i)).collect()
    }
}

/// Signed book density `phi = rho_B - rho_A` on a price grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BookState {
    grid: SpaceGrid,
    phi: Vec<f64>,
    t: f64,
}

impl BookState {
    pub fn new(grid: SpaceGrid, phi: Vec<f64>, t: f64) -> Result<Self> {
        if phi.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "state has {} values for {} grid nodes",
                phi.len(),
                grid.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("phi", "density must be finite"));
        }
        Ok(Self { grid, phi, t })
    }

    pub fn from_fn(grid: SpaceGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect(), 0.0)
    }

    /// Linear book `phi(x) = -L x`.
    pub fn linear(grid: SpaceGrid, slope: f64) -> Self {
        Self {
            grid,
            phi: grid.nodes().into_iter().map(|x| -slope * x).collect(),
            t: 0.0,
        }
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
    pub fn t(&self) -> f64 {
        self.t
    }

    pub(crate) fn from_parts(grid: SpaceGrid, phi: Vec<f64>, t: f64) -> Self {
        Self { grid, phi, t }
    }

    pub(crate) fn into_phi(self) -> Vec<f64> {
        self.phi
    }

    /// `phi[0] = +L M` and `phi[P] = -L M` within `tol`.
    pub fn has_linear_far_field(&self, slope: f64, tol: f64) -> bool {
        let m = self.grid.half_width();
        let last = *self.phi.last().expect("non-empty grid");
        (self.phi[0] - slope * m).abs() <= tol && (last + slope * m).abs() <= tol
    }

    /// `dx * sum phi_i`: the discrete book volume, consistent with the cell
    /// capacities used by metaorder consumption.
    pub fn integral(&self) -> f64 {
        self.grid.dx() * self.phi.iter().sum::<f64>()
    }
}

/// Impacted-price trajectory on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactTrajectory {
    grid: TimeGrid,
    y: Vec<f64>,
    x: Vec<f64>,
    cost_running: Vec<f64>,
}

impl ImpactTrajectory {
    /// Working-frame trajectory with `x = y` and running cost
    /// `dT * sum_{j<=k} m_j y_j`.
    pub fn new(profile: &ExecutionProfile, y: Vec<f64>) -> Result<Self> {
        let grid = *profile.grid();
        if y.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "trajectory has {} values for {} grid nodes",
                y.len(),
                grid.len()
            )));
        }
        let dt = grid.dt();
        let mut acc = 0.0;
        let cost_running = y
            .iter()
            .zip(profile.rates())
            .map(|(yk, mk)| {
                acc += mk * yk;
                dt * acc
            })
            .collect();
        Ok(Self {
            grid,
            x: y.clone(),
            y,
            cost_running,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn cost_running(&self) -> &[f64] {
        &self.cost_running
    }
    pub fn terminal_y(&self) -> f64 {
        *self.y.last().expect("non-empty grid")
    }
    pub fn total_cost(&self) -> f64 {
        *self.cost_running.last().expect("non-empty grid")
    }

    pub(crate) fn with_x(mut self, x: Vec<f64>) -> Self {
        debug_assert_eq!(x.len(), self.y.len());
        self.x = x;
        self
    }
}

/// Shorthand for [`ReferencePath::brownian`].
pub fn brownian_path(seed: u64, n_steps: usize, dt: f64, vol: f64, offset: f64) -> Result<ReferencePath> {
    ReferencePath::brownian(seed, n_steps, dt, vol, offset)
}
