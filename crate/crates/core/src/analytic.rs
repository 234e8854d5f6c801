//! Closed-form results: stationary book shapes, Green-function kernels, the
//! self-similar amplitude for constant-rate execution, small/large-rate
//! impact and cost asymptotics, the arcsine propagator of the mean-reverted
//! book and the mispricing variance.
//!
//! These are user-facing and also serve as oracles for the numerical solvers.
//! Every `kappa = 0` case uses its exact limit; nothing divides by `kappa`.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    CancellationRate, CancellationWeighting, ExecutionProfile, ImpactTrajectory, ModelParams, ReferencePath,
};
use crate::special::{erfc, integrate_gl};

/// Which approximation produced a self-similar amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    ExactRoot,
    SmallRate,
    LargeRate,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact-root" => Ok(Regime::ExactRoot),
            "small" | "small-rate" => Ok(Regime::SmallRate),
            "large" | "large-rate" => Ok(Regime::LargeRate),
            other => Err(Error::Domain(format!(
                "unknown regime '{other}' (expected exact, small or large)"
            ))),
        }
    }
}

/// Amplitude `A` of the self-similar solution `y_t = A sqrt(D t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfSimilarFit {
    pub a: f64,
    pub regime: Regime,
}

/// Stationary plain-book density with deposition and cancellation:
/// `-(lambda/nu)(1 - e^{-gamma y})` for `y >= 0`, odd extension below.
pub fn stationary_phi_llob(y: f64, params: &ModelParams) -> Result<f64> {
    let nu = params.constant_nu()?;
    if nu <= 0.0 {
        return Err(Error::Domain(
            "stationary book needs nu > 0 (use the linear far field -L y instead)".into(),
        ));
    }
    let gamma = params.gamma()?;
    let level = params.lambda() / nu;
    // -(l/nu)(1 - e^{-g|y|}) sign(y), via expm1 for small |y|
    Ok(level * (-gamma * y.abs()).exp_m1() * y.signum() * if y == 0.0 { 0.0 } else { 1.0 })
}

/// Stationary mean-reverted density `c0 + c1 * integral_{-inf}^y e^{-kappa x^2/sigma^2} dx`.
pub fn stationary_phi_mr(y: f64, params: &ModelParams, c0: f64, c1: f64) -> Result<f64> {
    let kappa = params.kappa();
    if kappa <= 0.0 {
        return Err(Error::Domain("stationary mean-reverted book needs kappa > 0".into()));
    }
    let sigma = params.sigma();
    let scale = sigma / kappa.sqrt();
    // integral = scale * sqrt(pi)/2 * (1 + erf(y/scale)) = scale * sqrt(pi)/2 * erfc(-y/scale)
    let integral = scale * PI.sqrt() / 2.0 * erfc(-y / scale);
    Ok(c0 + c1 * integral)
}

/// Coefficients `(c0, c1)` of the stationary mean-reverted density that is
/// odd about 0 and passes through `phi(-M) = L M`, `phi(M) = -L M`.
pub fn stationary_mr_pinned(params: &ModelParams, half_width: f64, slope: f64) -> Result<(f64, f64)> {
    let kappa = params.kappa();
    if kappa <= 0.0 {
        return Err(Error::Domain("stationary mean-reverted book needs kappa > 0".into()));
    }
    let scale = params.sigma() / kappa.sqrt();
    let total = scale * PI.sqrt();
    let c1 = -2.0 * slope * half_width / (total * crate::special::erf(half_width / scale));
    let c0 = -c1 * total / 2.0;
    Ok((c0, c1))
}

/// Heat kernel with cancellation decay:
/// `e^{-nu tau} (4 pi D tau)^{-1/2} exp(-y^2 / (4 D tau))`.
pub fn heat_kernel(y: f64, tau: f64, params: &ModelParams) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs tau > 0, got {tau}")));
    }
    let nu = params.constant_nu()?;
    let d = params.diffusivity();
    Ok((-nu * tau).exp() / (4.0 * PI * d * tau).sqrt() * (-y * y / (4.0 * d * tau)).exp())
}

/// Effective diffusion time `C(s, t) = integral_s^t e^{2 kappa u} du`; exactly
/// `t - s` at `kappa = 0`.
pub fn c_of(s: f64, t: f64, kappa: f64) -> Result<f64> {
    if s > t {
        return Err(Error::Domain(format!("C(s, t) needs s <= t, got s={s}, t={t}")));
    }
    if s < 0.0 {
        return Err(Error::Domain(format!("C(s, t) needs s >= 0, got {s}")));
    }
    if kappa < 0.0 {
        return Err(Error::Domain("C(s, t) needs kappa >= 0".into()));
    }
    Ok(c_of_unchecked(s, t, kappa))
}

pub(crate) fn c_of_unchecked(s: f64, t: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        t - s
    } else {
        (2.0 * kappa * s).exp() * (2.0 * kappa * (t - s)).exp_m1() / (2.0 * kappa)
    }
}

/// Right-hand side of the fixed-point equation for the self-similar
/// amplitude, `(m0/J) * integral_0^1 (4 pi (1-u))^{-1/2} exp(-A^2 (1-sqrt u) / (4 (1+sqrt u))) du`.
///
/// Evaluated after `u = cos^2(2 phi)`, which turns it into the smooth integral
/// `(2/sqrt pi) integral_0^{pi/4} exp(-A^2 tan^2(phi) / 4) cos(2 phi) dphi`.
pub fn self_similar_rhs(a: f64, ratio: f64) -> f64 {
    ratio * self_similar_integral(a).0
}

/// Integral and its derivative in `A`.
fn self_similar_integral(a: f64) -> (f64, f64) {
    let panels = 8 + (a.abs() / 4.0).ceil() as usize;
    let a2 = a * a;
    let val = integrate_gl(|p| (-a2 * p.tan().powi(2) / 4.0).exp() * (2.0 * p).cos(), 0.0, PI / 4.0, panels);
    let der = integrate_gl(
        |p| {
            let q = p.tan().powi(2) / 4.0;
            -2.0 * a * q * (-a2 * q).exp() * (2.0 * p).cos()
        },
        0.0,
        PI / 4.0,
        panels,
    );
    (2.0 * val / PI.sqrt(), 2.0 * der / PI.sqrt())
}

/// Positive root `A` of `A = self_similar_rhs(A, m0/J)`, by bisection on a
/// guaranteed bracket then Newton polishing.
pub fn solve_a(ratio: f64) -> Result<SelfSimilarFit> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Domain(format!("m0/J must be positive and finite, got {ratio}")));
    }
    let f = |a: f64| a - self_similar_rhs(a, ratio);
    // f(0) < 0; RHS <= ratio/sqrt(pi) so f > 0 beyond that.
    let mut lo = 0.0;
    let mut hi = (2.0 * ratio).sqrt() + 1.0;
    if f(hi) <= 0.0 {
        hi = ratio / PI.sqrt() * (1.0 + 1e-9) + 1e-12;
    }
    if f(hi) <= 0.0 {
        return Err(Error::RootNotFound {
            message: "failed to bracket the self-similar amplitude".into(),
            residual: f(hi),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-7 * hi {
            break;
        }
    }
    let mut a = 0.5 * (lo + hi);
    for _ in 0..20 {
        let (i, di) = self_similar_integral(a);
        let g = a - ratio * i;
        let dg = 1.0 - ratio * di;
        let next = a - g / dg;
        if !(next > lo && next < hi) {
            break;
        }
        let done = (next - a).abs() <= 1e-15 * a.max(1e-300);
        a = next;
        if done {
            break;
        }
    }
    let residual = f(a).abs();
    if !(residual < 1e-8) {
        return Err(Error::RootNotFound {
            message: format!("self-similar amplitude for m0/J = {ratio}"),
            residual,
        });
    }
    Ok(SelfSimilarFit {
        a,
        regime: Regime::ExactRoot,
    })
}

/// Small-rate approximation `A = (m0/J)/sqrt(pi)`.
pub fn small_rate_fit(ratio: f64) -> SelfSimilarFit {
    SelfSimilarFit {
        a: ratio / PI.sqrt(),
        regime: Regime::SmallRate,
    }
}

/// Large-rate approximation `A = sqrt(2 m0/J)`.
pub fn large_rate_fit(ratio: f64) -> SelfSimilarFit {
    SelfSimilarFit {
        a: (2.0 * ratio).sqrt(),
        regime: Regime::LargeRate,
    }
}

pub fn fit_for_regime(ratio: f64, regime: Regime) -> Result<SelfSimilarFit> {
    match regime {
        Regime::ExactRoot => solve_a(ratio),
        Regime::SmallRate => Ok(small_rate_fit(ratio)),
        Regime::LargeRate => Ok(large_rate_fit(ratio)),
    }
}

/// Small-rate impact `(1/sqrt pi)(m0/J) sqrt(D t)`, i.e. `sqrt(m0 D / pi) sqrt(Q_t) / J`.
pub fn impact_small_rate(t: f64, m0: f64, params: &ModelParams) -> f64 {
    m0 / (params.rate_scale() * PI.sqrt()) * (params.diffusivity() * t).sqrt()
}

/// Large-rate impact `sqrt(2 Q / L)` (signed with the volume).
pub fn impact_large_rate(volume: f64, params: &ModelParams) -> f64 {
    volume.signum() * (2.0 * volume.abs() / params.slope()).sqrt()
}

/// Large-rate impact for a constant rate, `sqrt(2 D m0 t / J)`.
pub fn impact_large_rate_constant(t: f64, m0: f64, params: &ModelParams) -> f64 {
    impact_large_rate(m0 * t, params)
}

/// Residual of the first-order large-rate relation
/// `y y' = (1/L)(m - 2 D m' / y'^2)`. Exposed as a check, not a solver.
pub fn large_rate_ode_residual(y: f64, dy: f64, m: f64, dm: f64, params: &ModelParams) -> f64 {
    y * dy - (m - 2.0 * params.diffusivity() * dm / (dy * dy)) / params.slope()
}

/// Linear propagator of the plain book,
/// `y_t = (1/L) integral_0^t m_s ds / sqrt(4 pi D (t-s))`.
///
/// Product integration: `m` is held constant on each step and the
/// `(t-s)^{-1/2}` kernel is integrated exactly, so constant-rate profiles are
/// reproduced exactly. Intended for `|m| << J`.
pub fn linear_propagator_llob(profile: &ExecutionProfile, params: &ModelParams) -> ImpactTrajectory {
    let grid = profile.grid();
    let dt = grid.dt();
    let n = grid.steps();
    let pref = 1.0 / (params.slope() * (4.0 * PI * params.diffusivity()).sqrt());
    // w[d] = 2 (sqrt(d dt) - sqrt((d-1) dt)), d = k - j >= 1
    let roots: Vec<f64> = (0..=n).map(|d| (d as f64 * dt).sqrt()).collect();
    let m = profile.rates();
    let mut y = vec![0.0; n + 1];
    for (k, yk) in y.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for j in 0..k {
            acc += m[j] * 2.0 * (roots[k - j] - roots[k - j - 1]);
        }
        *yk = pref * acc;
    }
    ImpactTrajectory::new(profile, y).expect("same grid")
}

/// Small-rate impact of the mean-reverted book for a constant rate (working frame):
/// `m0 / (L sigma sqrt(kappa pi)) * (pi/2 - arcsin(e^{-kappa t}))`.
pub fn arcsine_propagator(t: f64, m0: f64, params: &ModelParams) -> Result<f64> {
    let kappa = params.kappa();
    if kappa <= 0.0 {
        return Err(Error::Domain("arcsine propagator needs kappa > 0".into()));
    }
    if t < 0.0 {
        return Err(Error::Domain("arcsine propagator needs t >= 0".into()));
    }
    Ok(m0 / (params.slope() * params.sigma() * (kappa * PI).sqrt()) * acos_exp_neg(kappa * t))
}

/// `t -> inf` limit of [`arcsine_propagator`]: `m0 / (L sigma sqrt(kappa pi)) * pi/2`.
pub fn arcsine_limit(m0: f64, params: &ModelParams) -> Result<f64> {
    let kappa = params.kappa();
    if kappa <= 0.0 {
        return Err(Error::Domain("arcsine propagator needs kappa > 0".into()));
    }
    Ok(m0 / (params.slope() * params.sigma() * (kappa * PI).sqrt()) * PI / 2.0)
}

/// `arccos(e^{-x}) = pi/2 - arcsin(e^{-x})`, accurate for small `x`.
pub(crate) fn acos_exp_neg(x: f64) -> f64 {
    // arccos(z) = 2 arcsin(sqrt((1-z)/2))
    2.0 * ((-(-x).exp_m1()) / 2.0).sqrt().asin()
}

/// Cost `C = (2/3) A m0 sqrt(D) T^{3/2}` of a constant-rate execution, with
/// `A` taken from the selected regime.
pub fn cost_constant_rate(m0: f64, horizon: f64, params: &ModelParams, regime: Regime) -> Result<f64> {
    if horizon < 0.0 {
        return Err(Error::Domain("cost needs T >= 0".into()));
    }
    if m0 == 0.0 {
        return Ok(0.0);
    }
    let ratio = m0.abs() / params.rate_scale();
    let fit = fit_for_regime(ratio, regime)?;
    Ok(2.0 / 3.0 * fit.a * m0.abs() * params.diffusivity().sqrt() * horizon.powf(1.5))
}

/// Rescaled volume `Q^ = integral_0^T m_s e^{integral_0^s nu} ds`, with each
/// piece of `nu` and each constant-rate step integrated exactly.
pub fn rescaled_volume(profile: &ExecutionProfile, nu: &CancellationRate) -> f64 {
    rescaled_volume_with(profile, nu, CancellationWeighting::Cumulative)
}

pub fn rescaled_volume_with(
    profile: &ExecutionProfile,
    nu: &CancellationRate,
    weighting: CancellationWeighting,
) -> f64 {
    let grid = profile.grid();
    (0..grid.steps())
        .map(|j| profile.rate(j) * nu.weight_integral(grid.node(j), grid.node(j + 1), weighting))
        .sum()
}

/// Variance of the mispricing `B_t - f(t)`: `(1 - e^{-2 kappa t}) / (2 kappa)`, `t` at `kappa = 0`.
pub fn mispricing_variance(kappa: f64, t: f64) -> Result<f64> {
    if kappa < 0.0 {
        return Err(Error::Domain("mispricing variance needs kappa >= 0".into()));
    }
    if t < 0.0 {
        return Err(Error::Domain("mispricing variance needs t >= 0".into()));
    }
    if kappa == 0.0 {
        Ok(t)
    } else {
        Ok(-(-2.0 * kappa * t).exp_m1() / (2.0 * kappa))
    }
}

/// Exponentially weighted average `f(t) = kappa integral_0^t B_s e^{-kappa(t-s)} ds`
/// on the path's grid, `f(0) = 0`.
///
/// Integrates `f' + kappa f = kappa B` exactly over each step with `B`
/// linear between nodes.
pub fn f_of_t(path: &ReferencePath, kappa: f64) -> Vec<f64> {
    let grid = path.grid();
    let b = path.prices();
    let mut f = vec![0.0; b.len()];
    if kappa == 0.0 {
        return f;
    }
    let h = grid.dt();
    let x = kappa * h;
    let decay = (-x).exp();
    let gain = -(-x).exp_m1();
    // ramp = 1 - (1 - e^{-x}) / x
    let ramp = if x < 1e-3 {
        x / 2.0 - x * x / 6.0 + x * x * x / 24.0
    } else {
        1.0 - gain / x
    };
    for k in 0..b.len() - 1 {
        f[k + 1] = f[k] * decay + b[k] * gain + (b[k + 1] - b[k]) * ramp;
    }
    f
}

/// Weights used by the mean-reverted kernel: exact
/// `integral e^{kappa s} (2 pi sigma^2 C(s,t))^{-1/2} ds` over a step whose
/// lags `t - s` run from `lag_lo` to `lag_hi`.
pub(crate) fn mr_step_weight(lag_lo: f64, lag_hi: f64, sigma: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        2.0 * (lag_hi.sqrt() - lag_lo.sqrt()) / (sigma * (2.0 * PI).sqrt())
    } else {
        (acos_exp_neg(kappa * lag_hi) - acos_exp_neg(kappa * lag_lo)) / (sigma * (PI * kappa).sqrt())
    }
}
