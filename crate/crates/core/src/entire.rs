//! Entire solutions built from an increasing front `φ` and a decreasing
//! front `φ̂`: the phase function `p`, the sum supersolution, the
//! backward-started Cauchy ladder and its diagnostics.
//!
//! Runs are carried out directly in the frame of the requested phase `θ`:
//! the ladder member started at time `-n` has data
//! `max{φ(x - cn + θ), φ̂(x - ĉn - θ)}`, which is the `θ = ω` construction
//! translated by `(x₀, t₀)`. Supersolution comparisons map back to the
//! `ω` frame through [`PhaseShift`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy::{regularity_probe, Integrator, RegularityEstimate, Scheme, Trajectory};
use crate::error::{Error, Result};
use crate::field::{Convolver, GridFunction, DERIVATIVE_STENCIL};
use crate::kernel::SampledKernel;
use crate::quad;
use crate::reaction::{IgnitionNonlinearity, ReactionConstants};
use crate::spectral::CharacteristicRoots;
use crate::waves::{classify_speeds, Orientation, SpeedClass, WaveSolution};

/// Default `p(0)`.
pub const DEFAULT_P0: f64 = -1.0;

/// Profile values below this are ignored when measuring tail constants.
pub const TAIL_FLOOR: f64 = 1e-8;

/// Parameters of `p' = c₀ + N e^{σp}`, `p(0) = p0`, and the derived
/// constants of its closed-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PParams {
    pub c0: f64,
    pub cbar: f64,
    pub n: f64,
    pub sigma: f64,
    pub p0: f64,
    pub omega: f64,
    /// Smallest `K` with `p(t) - c₀t - ω ≤ K e^{c₀σt}` on `t ≤ 0`.
    pub k_bound: f64,
    pub r: f64,
}

impl PParams {
    /// Builds the parameters from the two speeds.
    pub fn new(c: f64, c_hat: f64, n: f64, sigma: f64, p0: f64) -> Result<Self> {
        let c0 = 0.5 * (c - c_hat);
        if !(c0 > 0.0) {
            return Err(Error::Validity(format!("need c > ĉ, got c = {c}, ĉ = {c_hat}")));
        }
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Validity(format!("N = {n} must be positive")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Validity(format!("σ = {sigma} must be positive")));
        }
        if !(p0 < 0.0) {
            return Err(Error::Validity(format!("p(0) = {p0} must be negative")));
        }
        let r = n / c0 * (sigma * p0).exp();
        let omega = p0 - (r.ln_1p()) / sigma;
        Ok(PParams {
            c0,
            cbar: 0.5 * (c + c_hat),
            n,
            sigma,
            p0,
            omega,
            // (p - c0 t - ω) e^{-c0σt} = -ln(1 - y)/(σ y) · r/(1+r) with
            // y = r/(1+r) e^{c0σt}; increasing in y, so the sup sits at t = 0.
            k_bound: r.ln_1p() / sigma,
            r,
        })
    }

    /// Same construction with a different `N`.
    pub fn with_n(&self, n: f64) -> Result<Self> {
        let c = self.cbar + self.c0;
        let c_hat = self.cbar - self.c0;
        PParams::new(c, c_hat, n, self.sigma, self.p0)
    }

    /// `p'(t)` from the differential equation.
    pub fn rate(&self, p: f64) -> f64 {
        self.c0 + self.n * (self.sigma * p).exp()
    }
}

/// `p(t) = c₀t + ω - σ⁻¹ ln(1 - r/(1+r) e^{c₀σt})` for `t ≤ 0`.
pub fn p_closed_form(params: &PParams, t: f64) -> Result<f64> {
    if !(t <= 0.0) {
        return Err(Error::Domain(format!("p is only used for t ≤ 0, got t = {t}")));
    }
    let a = params.r / (1.0 + params.r);
    let y = a * (params.c0 * params.sigma * t).exp();
    Ok(params.c0 * t + params.omega - (-y).ln_1p() / params.sigma)
}

/// Worst sampled ratio `(p - c₀t - ω) / (K e^{c₀σt})` and the smallest gap
/// `p - c₀t - ω`; the bound holds when the ratio is at most one, the gap is
/// positive and `p ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PBoundReport {
    pub max_ratio: f64,
    pub min_gap: f64,
    pub max_p: f64,
    pub holds: bool,
}

pub fn p_bound_check(params: &PParams, times: &[f64]) -> Result<PBoundReport> {
    let mut rep = PBoundReport {
        max_ratio: 0.0,
        min_gap: f64::INFINITY,
        max_p: f64::NEG_INFINITY,
        holds: true,
    };
    for &t in times {
        let p = p_closed_form(params, t)?;
        // p - c₀t - ω in closed form; subtracting c₀t + ω from p cancels
        // every digit once the correction is below ~1e-16 |c₀t|.
        let decay = (params.c0 * params.sigma * t).exp();
        let y = params.r / (1.0 + params.r) * decay;
        let gap = -(-y).ln_1p() / params.sigma;
        let ratio = gap / (params.k_bound * decay);
        rep.max_ratio = rep.max_ratio.max(ratio);
        rep.min_gap = rep.min_gap.min(gap);
        rep.max_p = rep.max_p.max(p);
    }
    rep.holds = rep.min_gap >= 0.0 && rep.max_ratio <= 1.0 + 1e-12 && rep.max_p <= 0.0;
    Ok(rep)
}

/// Largest gap between [`p_closed_form`] and a classical RK4 integration of
/// `p' = c₀ + N e^{σp}` from `p(0) = p0` back to `t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIntegrationReport {
    pub t_start: f64,
    pub steps: usize,
    pub max_error: f64,
    pub at_t: f64,
}

pub fn p_rk4_check(params: &PParams, t_start: f64, steps: usize) -> Result<PIntegrationReport> {
    if !(t_start < 0.0) || steps == 0 {
        return Err(Error::Config(format!("need t_start < 0 and steps > 0, got {t_start}, {steps}")));
    }
    let dt = t_start / steps as f64;
    let mut p = params.p0;
    let mut rep = PIntegrationReport {
        t_start,
        steps,
        max_error: 0.0,
        at_t: 0.0,
    };
    for i in 1..=steps {
        let k1 = params.rate(p);
        let k2 = params.rate(p + 0.5 * dt * k1);
        let k3 = params.rate(p + 0.5 * dt * k2);
        let k4 = params.rate(p + dt * k3);
        p += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = i as f64 * dt;
        let err = (p - p_closed_form(params, t)?).abs();
        if err > rep.max_error {
            rep.max_error = err;
            rep.at_t = t;
        }
    }
    Ok(rep)
}

/// `N* = max{LÂ₁/k, LA₁/k̂, LA₁/k, LÂ₁/k̂}`.
pub fn n_star(l: f64, a1: f64, a1_hat: f64, k: f64, k_hat: f64) -> Result<f64> {
    if !(k > 0.0 && k_hat > 0.0) {
        return Err(Error::ConditionFailure { k, k_hat });
    }
    Ok([l * a1_hat / k, l * a1 / k_hat, l * a1 / k, l * a1_hat / k_hat]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// A profile sampled with its discrete derivative and `J*φ - φ`, all
/// continued by their far fields.
#[derive(Debug, Clone)]
pub struct Profile {
    pub values: GridFunction,
    pub slope: GridFunction,
    pub operator: GridFunction,
}

impl Profile {
    fn new(values: GridFunction, conv: &Convolver) -> Result<Self> {
        let slope = GridFunction::new(values.x0, values.h, values.derivative(), 0.0, 0.0);
        let mut op = vec![0.0; values.len()];
        conv.apply(&values.values, values.farfield_left, values.farfield_right, &mut op);
        for (o, v) in op.iter_mut().zip(&values.values) {
            *o -= v;
        }
        let operator = GridFunction::new(values.x0, values.h, op, 0.0, 0.0);
        Ok(Profile {
            values,
            slope,
            operator,
        })
    }

    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        self.values.interpolate(xi)
    }

    #[inline]
    pub fn derivative(&self, xi: f64) -> f64 {
        self.slope.interpolate(xi)
    }

    #[inline]
    pub fn operator(&self, xi: f64) -> f64 {
        self.operator.interpolate(xi)
    }
}

/// Shifts a monotone profile so that it equals `level` at the origin.
fn normalize(profile: &GridFunction, level: f64) -> Result<GridFunction> {
    let (lo, hi) = (profile.min(), profile.max());
    if !(level > lo && level < hi) {
        return Err(Error::Config(format!(
            "normalization level 1 - m0 = {level} is not attained by the profile (range [{lo}, {hi}]); m0 misconfigured"
        )));
    }
    let increasing = profile.farfield_right > profile.farfield_left;
    let g = |x: f64| {
        let v = profile.interpolate(x) - level;
        if increasing {
            v
        } else {
            -v
        }
    };
    let i = profile
        .values
        .windows(2)
        .position(|w| (w[0] - level) * (w[1] - level) <= 0.0)
        .ok_or_else(|| Error::Config(format!("profile never crosses {level}")))?;
    let (a, b) = (profile.x(i), profile.x(i + 1));
    let mut lo = a;
    let mut hi = b;
    // Keep g(lo) ≤ 0 < g(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let shift = 0.5 * (lo + hi);
    Ok(GridFunction::new(
        profile.x0 - shift,
        profile.h,
        profile.values.clone(),
        profile.farfield_left,
        profile.farfield_right,
    ))
}

/// Measured constants of the exponential-ratio condition and the threshold
/// `N*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConstants {
    /// `inf_{ξ ≤ 0} φ'/φ` over the resolved tail, capped by `μ₁`.
    pub k: f64,
    /// `inf_{ξ̂ ≥ 0} -φ̂'/φ̂` over the resolved tail, capped by `μ̂₁`.
    pub k_hat: f64,
    /// `sup_{ξ ≤ 0} φ(ξ) e^{-μ₁ξ}`.
    pub a1: f64,
    /// `sup_{ξ̂ ≥ 0} φ̂(ξ̂) e^{μ̂₁ξ̂}`.
    pub a1_hat: f64,
    /// `max_{[0,2]} f''`.
    pub l: f64,
    pub n_star: f64,
}

/// Options of the construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionOptions {
    pub p0: f64,
    /// `N = n_factor · N*`.
    pub n_factor: f64,
    pub tail_floor: f64,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        ConstructionOptions {
            p0: DEFAULT_P0,
            n_factor: 2.0,
            tail_floor: TAIL_FLOOR,
        }
    }
}

/// Normalized fronts, their speeds and the phase function: everything the
/// sub- and supersolutions need.
#[derive(Debug, Clone)]
pub struct Construction {
    pub phi: Profile,
    pub phi_hat: Profile,
    pub c: f64,
    pub c_hat: f64,
    pub nl: IgnitionNonlinearity,
    pub reaction: ReactionConstants,
    pub constants: ConditionConstants,
    pub pparams: PParams,
    pub class: SpeedClass,
}

impl Construction {
    /// Normalizes the fronts so that `φ ≥ 1 - m0` on `ξ ≥ 0` and
    /// `φ̂ ≥ 1 - m0` on `ξ̂ ≤ 0`, measures the condition constants and sets
    /// `N = n_factor · N*`, `σ = min{μ₁, μ̂₁}`.
    pub fn new(
        kernel: &SampledKernel,
        nl: &IgnitionNonlinearity,
        up: &WaveSolution,
        down: &WaveSolution,
        roots: &CharacteristicRoots,
        opts: &ConstructionOptions,
    ) -> Result<Self> {
        if up.orientation != Orientation::Increasing || down.orientation != Orientation::Decreasing {
            return Err(Error::Validity("need an increasing and a decreasing front".into()));
        }
        let class = classify_speeds(up.speed, down.speed)?;
        let reaction = nl.derive_constants(1e-12)?;
        let level = 1.0 - reaction.m0;
        let phi_v = normalize(&up.profile, level)?;
        let hat_v = normalize(&down.profile, level)?;
        if (phi_v.h - kernel.h).abs() > 1e-12 || (hat_v.h - kernel.h).abs() > 1e-12 {
            return Err(Error::Grid(format!(
                "profile spacing {} differs from kernel spacing {}",
                phi_v.h, kernel.h
            )));
        }
        let phi = Profile::new(phi_v, &Convolver::auto(kernel, up.profile.len()))?;
        let phi_hat = Profile::new(hat_v, &Convolver::auto(kernel, down.profile.len()))?;

        // Only the resolved part of each tail is measured: values above the
        // floor, away from the nodes whose derivative stencil reads the far
        // field. Beyond it the ratio tends to μ₁ (resp. μ̂₁), which closes
        // the infimum.
        let floor = opts.tail_floor;
        let guard = DERIVATIVE_STENCIL.len();
        let resolved = |g: &GridFunction, i: usize| i >= guard && i + guard < g.len() && g.values[i] >= floor;
        let (mut k, mut a1) = (roots.mu1, 0.0f64);
        for (i, &v) in phi.values.values.iter().enumerate() {
            let x = phi.values.x(i);
            if x <= 0.0 && resolved(&phi.values, i) {
                k = k.min(phi.slope.values[i] / v);
                a1 = a1.max(v * (-roots.mu1 * x).exp());
            }
        }
        let (mut k_hat, mut a1_hat) = (roots.mu1_hat, 0.0f64);
        for (i, &v) in phi_hat.values.values.iter().enumerate() {
            let x = phi_hat.values.x(i);
            if x >= 0.0 && resolved(&phi_hat.values, i) {
                k_hat = k_hat.min(-phi_hat.slope.values[i] / v);
                a1_hat = a1_hat.max(v * (roots.mu1_hat * x).exp());
            }
        }
        let l = reaction.max_f_second;
        let ns = n_star(l, a1, a1_hat, k, k_hat)?;
        let sigma = roots.mu1.min(roots.mu1_hat);
        let pparams = PParams::new(up.speed, down.speed, opts.n_factor * ns, sigma, opts.p0)?;
        Ok(Construction {
            phi,
            phi_hat,
            c: up.speed,
            c_hat: down.speed,
            nl: *nl,
            reaction,
            constants: ConditionConstants {
                k,
                k_hat,
                a1,
                a1_hat,
                l,
                n_star: ns,
            },
            pparams,
            class,
        })
    }

    /// Same fronts with a different `N`.
    pub fn with_n(&self, n: f64) -> Result<Self> {
        let mut out = self.clone();
        out.pparams = self.pparams.with_n(n)?;
        Ok(out)
    }

    pub fn omega(&self) -> f64 {
        self.pparams.omega
    }

    /// `max{φ(x + ct + θ), φ̂(x + ĉt - θ)}`.
    pub fn lower(&self, x: f64, t: f64, theta: f64) -> f64 {
        self.phi
            .value(x + self.c * t + theta)
            .max(self.phi_hat.value(x + self.c_hat * t - theta))
    }

    /// `φ(x + c̄t + p(t)) + φ̂(x + c̄t - p(t))` for `t ≤ 0`.
    pub fn upper(&self, x: f64, t: f64) -> Result<f64> {
        let p = p_closed_form(&self.pparams, t)?;
        let m = x + self.pparams.cbar * t;
        Ok(self.phi.value(m + p) + self.phi_hat.value(m - p))
    }

    /// `𝓛(ū) = ū_t - (J*ū - ū) - f(ū)` with `ū_t` by the chain rule.
    pub fn supersolution_residual(&self, x: f64, t: f64) -> Result<f64> {
        let pp = &self.pparams;
        let p = p_closed_form(pp, t)?;
        let dp = pp.rate(p);
        let m = x + pp.cbar * t;
        let (xi, xi_hat) = (m + p, m - p);
        let (a, b) = (self.phi.value(xi), self.phi_hat.value(xi_hat));
        let ut = (pp.cbar + dp) * self.phi.derivative(xi) + (pp.cbar - dp) * self.phi_hat.derivative(xi_hat);
        let op = self.phi.operator(xi) + self.phi_hat.operator(xi_hat);
        Ok(ut - op - self.nl.value(a + b))
    }

    /// Translation `(x₀, t₀)` taking the `ω` solution to the `θ` solution.
    pub fn phase_shift(&self, theta: f64) -> PhaseShift {
        phase_shift(self.c, self.c_hat, self.omega(), theta)
    }

    /// Time at which the two level sets `ξ = 0` and `ξ̂ = 0` of the lower
    /// solution meet in the `θ` frame.
    pub fn meeting_time(&self, theta: f64) -> f64 {
        -2.0 * theta / (self.c - self.c_hat)
    }
}

/// `ũ(x, t) = u(x + x₀, t + t₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseShift {
    pub x0: f64,
    pub t0: f64,
}

/// `x₀ = (c + ĉ)(ω - θ)/(c - ĉ)`, `t₀ = 2(θ - ω)/(c - ĉ)`.
pub fn phase_shift(c: f64, c_hat: f64, omega: f64, theta: f64) -> PhaseShift {
    let d = c - c_hat;
    PhaseShift {
        x0: (c + c_hat) * (omega - theta) / d,
        t0: 2.0 * (theta - omega) / d,
    }
}

/// Minimum of `𝓛(ū)` over a space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionReport {
    pub min_residual: f64,
    pub at_x: f64,
    pub at_t: f64,
    pub n: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluates `𝓛(ū)` at every node of `window` (a grid with spacing `h`) and
/// every time in `times`, all `≤ 0`.
pub fn supersolution_check(
    cons: &Construction,
    window: (f64, f64),
    h: f64,
    times: &[f64],
    tol: f64,
) -> Result<SupersolutionReport> {
    let n = crate::field::grid_points(window.0, window.1, h);
    let per_time: Vec<(f64, f64, f64)> = times
        .par_iter()
        .map(|&t| -> Result<(f64, f64, f64)> {
            let mut best = (f64::INFINITY, 0.0, t);
            for i in 0..n {
                let x = window.0 + i as f64 * h;
                let r = cons.supersolution_residual(x, t)?;
                if r < best.0 {
                    best = (r, x, t);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (min_residual, at_x, at_t) = per_time
        .into_iter()
        .fold((f64::INFINITY, 0.0, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    Ok(SupersolutionReport {
        min_residual,
        at_x,
        at_t,
        n: cons.pparams.n,
        tolerance: tol,
        passed: min_residual >= -tol,
    })
}

/// `t_start, t_start + step, ..., 0`.
pub fn time_grid(t_start: f64, step: f64) -> Vec<f64> {
    let k = (-t_start / step).round() as i64;
    (0..=k).map(|i| t_start + i as f64 * step).map(|t| t.min(0.0)).collect()
}

/// Settings of a ladder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntireConfig {
    /// Phase; `None` selects `ω`.
    pub theta: Option<f64>,
    /// Start times `-n` of the ladder, increasing.
    pub n_list: Vec<u32>,
    /// Final time; `None` sizes it past the meeting of the fronts.
    pub t_forward: Option<f64>,
    /// Largest time step; the step is further capped so that no front
    /// moves more than `max_front_shift` per step.
    pub dt: f64,
    pub max_front_shift: f64,
    pub h: f64,
    /// Distance kept between the fronts and the window edges.
    pub margin: f64,
    /// Explicit window, shared by runs that are to be compared.
    pub window: Option<(f64, f64)>,
    pub checkpoint_every: f64,
    pub sandwich_tol: f64,
    pub monotonicity_tol: f64,
    /// Half-width of the window for successive differences, centred at 0.
    pub compact_radius: f64,
    pub limit_times: Vec<f64>,
}

impl Default for EntireConfig {
    fn default() -> Self {
        EntireConfig {
            theta: None,
            n_list: vec![5, 10, 20],
            t_forward: None,
            dt: 0.05,
            max_front_shift: 0.025,
            h: 0.05,
            margin: 40.0,
            window: None,
            checkpoint_every: 1.0,
            sandwich_tol: 1e-6,
            monotonicity_tol: 1e-8,
            compact_radius: 30.0,
            limit_times: vec![5.0, 10.0, 20.0],
        }
    }
}

impl EntireConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) || self.n_list[0] == 0 {
            return Err(Error::Config(format!(
                "n_list must be positive and strictly increasing, got {:?}",
                self.n_list
            )));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("max_front_shift", self.max_front_shift),
            ("h", self.h),
            ("margin", self.margin),
            ("checkpoint_every", self.checkpoint_every),
            ("sandwich_tol", self.sandwich_tol),
            ("monotonicity_tol", self.monotonicity_tol),
            ("compact_radius", self.compact_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        for &n in &self.n_list {
            let k = n as f64 / self.checkpoint_every;
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "start time -{n} is not a multiple of the checkpoint spacing {}",
                    self.checkpoint_every
                )));
            }
        }
        Ok(())
    }

    fn n_max(&self) -> f64 {
        *self.n_list.last().expect("validated") as f64
    }
}

/// Final time: past the meeting of the fronts by the time a front needs to
/// cross the window's margin, and never before 20.
pub fn default_t_forward(cons: &Construction, theta: f64, margin: f64) -> f64 {
    let meet = cons.meeting_time(theta);
    let slow = cons.c.abs().min(cons.c_hat.abs()).max(0.05);
    (meet + (margin / slow).min(60.0)).max(20.0)
}

/// Window containing both fronts over `[-n_max, t_forward]` for every phase
/// in `thetas`, padded by `margin` and aligned to `h`.
pub fn run_window(cons: &Construction, thetas: &[f64], n_max: f64, t_forward: f64, margin: f64, h: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &theta in thetas {
        let meet = cons.meeting_time(theta).clamp(-n_max, t_forward);
        for t in [-n_max, meet, t_forward.min(meet.max(-n_max))] {
            for x in [-cons.c * t - theta, -cons.c_hat * t + theta] {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    let lo = ((lo - margin) / h).floor() * h;
    let hi = ((hi + margin) / h).ceil() * h;
    (lo, hi)
}

/// One member of the ladder, started at `-n`.
#[derive(Debug, Clone)]
pub struct LadderRun {
    pub n: u32,
    pub trajectory: Trajectory,
    pub diagnostics: LadderDiagnostics,
}

impl LadderRun {
    pub fn state_at(&self, t: f64) -> Option<&GridFunction> {
        self.trajectory
            .times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .map(|k| &self.trajectory.states[k])
    }

    /// State at `t = 0`.
    pub fn at_zero(&self) -> &GridFunction {
        self.state_at(0.0).expect("checkpoints include t = 0")
    }
}

/// Per-run sandwich diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderDiagnostics {
    pub n: u32,
    /// `min (u_n - u̲)` over all checkpoints.
    pub lower_margin: f64,
    pub lower_at: (f64, f64),
    /// `min (ū - u_n)` over checkpoints with `ω`-frame time `≤ 0`.
    pub upper_margin: f64,
    pub upper_at: (f64, f64),
    pub max_value: f64,
    pub min_value: f64,
    /// `min ∂u/∂t` over all checkpoints.
    pub min_time_derivative: f64,
}

/// Result of [`build_entire`].
#[derive(Debug, Clone)]
pub struct EntireRun {
    pub theta: f64,
    pub shift: PhaseShift,
    pub window: (f64, f64),
    pub t_forward: f64,
    pub runs: Vec<LadderRun>,
    pub diagnostics: EntireDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntireDiagnostics {
    pub theta: f64,
    pub omega: f64,
    pub shift: PhaseShift,
    pub window: (f64, f64),
    pub t_forward: f64,
    pub n_list: Vec<u32>,
    pub ladder: Vec<LadderDiagnostics>,
    pub sandwich_tol: f64,
    pub sandwich_ok: bool,
    /// `min (u_{n_{k+1}} - u_{n_k})` at shared checkpoints, per consecutive pair.
    pub monotonicity_gaps: Vec<f64>,
    pub monotonicity_tol: f64,
    pub monotonicity_ok: bool,
    /// `sup |u_{n_{k+1}} - u_{n_k}|` on `|x| ≤ compact_radius`,
    /// `t ∈ [-n_1, 0]`.
    pub successive_differences: Vec<f64>,
    pub successive_decreasing: bool,
}

/// Integrates the ladder `n ∈ n_list` from `max{φ(x - cn + θ), φ̂(x - ĉn - θ)}`
/// and checks the sandwich `u̲ ≤ u_n ≤ ū`, `u_n ≤ 1`.
///
/// A sandwich violation beyond `sandwich_tol` is an error naming the worst
/// point.
pub fn build_entire(cons: &Construction, kernel: &SampledKernel, cfg: &EntireConfig) -> Result<EntireRun> {
    let run = assemble_entire(cons, kernel, cfg)?;
    if !run.diagnostics.sandwich_ok {
        let d = run
            .diagnostics
            .ladder
            .iter()
            .min_by(|a, b| {
                a.lower_margin
                    .min(a.upper_margin)
                    .total_cmp(&b.lower_margin.min(b.upper_margin))
            })
            .expect("nonempty ladder");
        let (what, m, (x, t)) = if d.lower_margin < d.upper_margin {
            ("subsolution", d.lower_margin, d.lower_at)
        } else {
            ("supersolution", d.upper_margin, d.upper_at)
        };
        return Err(Error::InvariantViolation(format!(
            "construction failed: u_{} crosses the {what} by {:e} at x = {x}, t = {t} (tolerance {:e})",
            d.n, -m, cfg.sandwich_tol
        )));
    }
    Ok(run)
}

/// [`build_entire`] without the final sandwich verdict.
pub fn assemble_entire(cons: &Construction, kernel: &SampledKernel, cfg: &EntireConfig) -> Result<EntireRun> {
    cfg.validate()?;
    if (kernel.h - cfg.h).abs() > 1e-12 {
        return Err(Error::Grid(format!("kernel sampled at {} but run spacing is {}", kernel.h, cfg.h)));
    }
    let theta = cfg.theta.unwrap_or(cons.omega());
    let shift = cons.phase_shift(theta);
    let n_max = cfg.n_max();
    let t_forward = cfg.t_forward.unwrap_or_else(|| default_t_forward(cons, theta, cfg.margin));
    if !(t_forward >= 0.0) {
        return Err(Error::Config(format!("t_forward = {t_forward} must be nonnegative")));
    }
    let window = cfg
        .window
        .unwrap_or_else(|| run_window(cons, &[theta], n_max, t_forward, cfg.margin, cfg.h));
    let npts = crate::field::grid_points(window.0, window.1, cfg.h);
    let dt = cfg.dt.min(cfg.max_front_shift / cons.c.abs().max(cons.c_hat.abs()));

    let step = cfg.checkpoint_every;
    let mut shared: Vec<f64> = Vec::new();
    let mut k = 0;
    loop {
        let t = -n_max + k as f64 * step;
        if t >= t_forward - 1e-9 {
            break;
        }
        shared.push(t);
        k += 1;
    }
    shared.push(t_forward);

    let runs: Vec<LadderRun> = cfg
        .n_list
        .par_iter()
        .map(|&n| -> Result<LadderRun> {
            let t0 = -(n as f64);
            let u0 = GridFunction::from_fn(window.0, window.1, cfg.h, 1.0, 1.0, |x| cons.lower(x, t0, theta));
            let checkpoints: Vec<f64> = shared.iter().copied().filter(|&t| t > t0 + 1e-9).collect();
            let integ = Integrator::new(kernel, &cons.nl, npts, dt, Scheme::Rk4)?;
            let trajectory = integ.run(&u0, t0, &checkpoints)?;
            let diagnostics = sandwich(cons, &integ, &trajectory, n, theta, shift)?;
            Ok(LadderRun {
                n,
                trajectory,
                diagnostics,
            })
        })
        .collect::<Result<_>>()?;

    let ladder: Vec<LadderDiagnostics> = runs.iter().map(|r| r.diagnostics).collect();
    let sandwich_ok = ladder.iter().all(|d| {
        d.lower_margin >= -cfg.sandwich_tol
            && d.upper_margin >= -cfg.sandwich_tol
            && d.max_value <= 1.0 + 1e-10
            && d.min_value >= -1e-10
    });

    let mut monotonicity_gaps = Vec::new();
    let mut successive_differences = Vec::new();
    let first_start = -(cfg.n_list[0] as f64);
    for pair in runs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mut gap = f64::INFINITY;
        let mut diff = 0.0f64;
        for (t, ua) in a.trajectory.times.iter().zip(&a.trajectory.states) {
            let Some(ub) = b.state_at(*t) else { continue };
            let in_range = *t >= first_start - 1e-9 && *t <= 1e-9;
            for (i, (va, vb)) in ua.values.iter().zip(&ub.values).enumerate() {
                gap = gap.min(vb - va);
                if in_range && ua.x(i).abs() <= cfg.compact_radius {
                    diff = diff.max((vb - va).abs());
                }
            }
        }
        monotonicity_gaps.push(gap);
        successive_differences.push(diff);
    }
    let monotonicity_ok = monotonicity_gaps.iter().all(|&g| g >= -cfg.monotonicity_tol);
    let successive_decreasing = successive_differences.windows(2).all(|w| w[1] < w[0]);

    Ok(EntireRun {
        theta,
        shift,
        window,
        t_forward,
        diagnostics: EntireDiagnostics {
            theta,
            omega: cons.omega(),
            shift,
            window,
            t_forward,
            n_list: cfg.n_list.clone(),
            ladder,
            sandwich_tol: cfg.sandwich_tol,
            sandwich_ok,
            monotonicity_gaps,
            monotonicity_tol: cfg.monotonicity_tol,
            monotonicity_ok,
            successive_differences,
            successive_decreasing,
        },
        runs,
    })
}

fn sandwich(
    cons: &Construction,
    integ: &Integrator,
    traj: &Trajectory,
    n: u32,
    theta: f64,
    shift: PhaseShift,
) -> Result<LadderDiagnostics> {
    let mut d = LadderDiagnostics {
        n,
        lower_margin: f64::INFINITY,
        lower_at: (0.0, 0.0),
        upper_margin: f64::INFINITY,
        upper_at: (0.0, 0.0),
        max_value: f64::NEG_INFINITY,
        min_value: f64::INFINITY,
        min_time_derivative: f64::INFINITY,
    };
    for (&t, u) in traj.times.iter().zip(&traj.states) {
        d.max_value = d.max_value.max(u.max());
        d.min_value = d.min_value.min(u.min());
        d.min_time_derivative = d.min_time_derivative.min(integ.time_derivative(u).min());
        // Time in the frame where the phase is ω.
        let s = t + shift.t0;
        let upper_ok = s <= 1e-12;
        for (i, &v) in u.values.iter().enumerate() {
            let x = u.x(i);
            let m = v - cons.lower(x, t, theta);
            if m < d.lower_margin {
                d.lower_margin = m;
                d.lower_at = (x, t);
            }
            if upper_ok {
                let m = cons.upper(x + shift.x0, s.min(0.0))? - v;
                if m < d.upper_margin {
                    d.upper_margin = m;
                    d.upper_at = (x, t);
                }
            }
        }
    }
    Ok(d)
}

impl EntireRun {
    /// The member started earliest, the best approximation of the entire
    /// solution.
    pub fn finest(&self) -> &LadderRun {
        self.runs.last().expect("nonempty ladder")
    }

    /// Regularity constants of the finest member, shift `η`.
    pub fn regularity(&self, kernel: &SampledKernel, nl: &IgnitionNonlinearity, eta: f64) -> Result<RegularityEstimate> {
        regularity_probe(&self.finest().trajectory, kernel, nl, eta)
    }
}

/// Deviation from the two fronts at time `-t_back`, split at the moving
/// midline `x = -c̄ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitPoint {
    pub t_back: f64,
    pub deviation: f64,
}

/// `D(T) = sup_{x ≤ c̄T} |u - φ̂(x - ĉT - θ)| + sup_{x ≥ c̄T} |u - φ(x - cT + θ)|`
/// on the finest member's grid.
pub fn limit_match(cons: &Construction, run: &EntireRun, t_back: f64) -> Result<f64> {
    let t = -t_back;
    let u = run.finest().state_at(t).ok_or_else(|| {
        Error::InsufficientData(format!("no state at t = {t}; extend the ladder or the checkpoints"))
    })?;
    let mid = -0.5 * (cons.c + cons.c_hat) * t;
    let (mut left, mut right) = (0.0f64, 0.0f64);
    for (i, &v) in u.values.iter().enumerate() {
        let x = u.x(i);
        if x <= mid {
            left = left.max((v - cons.phi_hat.value(x + cons.c_hat * t - run.theta)).abs());
        }
        if x >= mid {
            right = right.max((v - cons.phi.value(x + cons.c * t + run.theta)).abs());
        }
    }
    Ok(left + right)
}

/// `D(T)` over a ladder of times and the fitted exponential decay rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub points: Vec<LimitPoint>,
    pub strictly_decreasing: bool,
    /// `-d ln D / dT` by least squares.
    pub decay_rate: Option<f64>,
    /// `c₀σ`, the rate of the phase function's correction.
    pub reference_rate: f64,
}

pub fn limit_report(cons: &Construction, run: &EntireRun, times: &[f64]) -> Result<LimitReport> {
    let points = times
        .iter()
        .map(|&t| Ok(LimitPoint { t_back: t, deviation: limit_match(cons, run, t)? }))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.t_back.total_cmp(&b.t_back));
    let strictly_decreasing = sorted.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let (xs, ys): (Vec<f64>, Vec<f64>) = sorted
        .iter()
        .filter(|p| p.deviation > 0.0)
        .map(|p| (p.t_back, p.deviation.ln()))
        .unzip();
    let decay_rate = if xs.len() >= 2 {
        quad::linear_fit(&xs, &ys).map(|f| -f.slope)
    } else {
        None
    };
    Ok(LimitReport {
        points,
        strictly_decreasing,
        decay_rate,
        reference_rate: cons.pparams.c0 * cons.pparams.sigma,
    })
}

/// Which of the three sign cases a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// `c > 0`, `ĉ > 0`.
    A,
    /// `c < 0`, `ĉ < 0`.
    B,
    /// `c > 0 > ĉ`.
    C,
}

impl Case {
    pub fn of(class: SpeedClass) -> Case {
        match class {
            SpeedClass::BothPositive => Case::A,
            SpeedClass::BothNegative => Case::B,
            SpeedClass::CPosChatNeg => Case::C,
        }
    }

    pub fn parse(s: &str) -> Result<Case> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Case::A),
            "b" => Ok(Case::B),
            "c" => Ok(Case::C),
            _ => Err(Error::Config(format!("unknown case {s:?}; expected a, b or c"))),
        }
    }
}

/// Finite-range proxies of the large-time and far-field limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeReport {
    pub case: Case,
    pub epsilon: f64,
    /// `(t, x_right - x_left)` of the level-½ crossings bounding the gap,
    /// while the gap exists.
    pub separations: Vec<(f64, f64)>,
    pub separation_decreasing: bool,
    /// First checkpoint at which no node lies below ½.
    pub merge_time: Option<f64>,
    /// `min_{t ≥ 0} u(hi - margin, t)`.
    pub right_edge_min: f64,
    /// `min_{t ≥ 0} u(lo + margin, t)`.
    pub left_edge_min: f64,
    /// `sup_x |u(x, t_end) - 1|` over the window.
    pub final_sup_deviation: f64,
    /// `min u(x, t_end)` on the half-line proxy of the case.
    pub final_halfline_min: f64,
    pub min_time_derivative: f64,
    pub time_derivative_tol: f64,
    pub passed: bool,
}

/// Checks the case-specific limits on the finest member.
pub fn qualitative_checks(
    run: &EntireRun,
    integ_kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    case: Case,
    margin: f64,
    n_range: f64,
    epsilon: f64,
) -> Result<QualitativeReport> {
    let finest = run.finest();
    let traj = &finest.trajectory;
    let u_end = traj.last();
    let integ = Integrator::new(integ_kernel, nl, u_end.len(), stability_dt(nl)?, Scheme::Rk4)?;
    let mut separations = Vec::new();
    let mut merge_time = None;
    let mut right_edge_min = f64::INFINITY;
    let mut left_edge_min = f64::INFINITY;
    let mut min_ut = f64::INFINITY;
    let (lo, hi) = run.window;
    for (&t, u) in traj.times.iter().zip(&traj.states) {
        min_ut = min_ut.min(integ.time_derivative(u).min());
        if t >= 0.0 {
            right_edge_min = right_edge_min.min(u.interpolate(hi - margin));
            left_edge_min = left_edge_min.min(u.interpolate(lo + margin));
        }
        match gap_bounds(u) {
            Some((a, b)) => separations.push((t, b - a)),
            None => {
                if merge_time.is_none() {
                    merge_time = Some(t);
                }
            }
        }
    }
    let separation_decreasing = separations.windows(2).all(|w| w[1].1 < w[0].1);
    let final_sup_deviation = u_end.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let final_halfline_min = u_end
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let x = u_end.x(*i);
            match case {
                Case::A => x >= -n_range,
                Case::B => x <= n_range,
                Case::C => true,
            }
        })
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let time_derivative_tol = 1e-8;
    let passed = match case {
        Case::A => right_edge_min >= 1.0 - epsilon && final_halfline_min >= 1.0 - epsilon,
        Case::B => left_edge_min >= 1.0 - epsilon && final_halfline_min >= 1.0 - epsilon,
        Case::C => {
            right_edge_min >= 1.0 - epsilon
                && left_edge_min >= 1.0 - epsilon
                && final_sup_deviation <= epsilon
                && min_ut >= -time_derivative_tol
        }
    };
    Ok(QualitativeReport {
        case,
        epsilon,
        separations,
        separation_decreasing,
        merge_time,
        right_edge_min,
        left_edge_min,
        final_sup_deviation,
        final_halfline_min,
        min_time_derivative: min_ut,
        time_derivative_tol,
        passed,
    })
}

fn stability_dt(nl: &IgnitionNonlinearity) -> Result<f64> {
    Ok(crate::cauchy::stability_budget(nl.derive_constants(1e-10)?.fprime_max))
}

/// Positions of the level-½ crossings bounding the region where `u < ½`.
fn gap_bounds(u: &GridFunction) -> Option<(f64, f64)> {
    let first = u.values.iter().position(|&v| v < 0.5)?;
    let last = u.values.iter().rposition(|&v| v < 0.5)?;
    let cross = |i: usize, j: usize| {
        let (a, b) = (u.values[i] - 0.5, u.values[j] - 0.5);
        u.x(i) + (u.x(j) - u.x(i)) * a / (a - b)
    };
    let left = if first == 0 { u.x(0) } else { cross(first - 1, first) };
    let right = if last + 1 == u.len() {
        u.x_end()
    } else {
        cross(last, last + 1)
    };
    Some((left, right))
}

/// `min (u_{θ₂} - u_{θ₁})` over members and checkpoints shared by two runs
/// on the same grid.
pub fn theta_monotonicity(lower: &EntireRun, upper: &EntireRun) -> Result<f64> {
    if upper.theta < lower.theta {
        return Err(Error::Validity(format!(
            "expected θ₂ = {} ≥ θ₁ = {}",
            upper.theta, lower.theta
        )));
    }
    let mut gap = f64::INFINITY;
    let mut compared = 0usize;
    for a in &lower.runs {
        let Some(b) = upper.runs.iter().find(|b| b.n == a.n) else { continue };
        for (t, ua) in a.trajectory.times.iter().zip(&a.trajectory.states) {
            let Some(ub) = b.state_at(*t) else { continue };
            gap = gap.min(
                ua.values
                    .iter()
                    .zip(&ub.values)
                    .map(|(x, y)| y - x)
                    .fold(f64::INFINITY, f64::min),
            );
            ua.same_grid(ub)?;
            compared += 1;
        }
    }
    if compared == 0 {
        return Err(Error::InsufficientData("no shared members and checkpoints".into()));
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> PParams {
        PParams::new(1.0, -1.0, 1.0, 1.0, -1.0).unwrap()
    }

    #[test]
    fn closed_form_reproduces_initial_value() {
        let p = unit_params();
        assert_eq!(p.c0, 1.0);
        assert_eq!(p.cbar, 0.0);
        let omega = -1.0 - (1.0 + (-1.0f64).exp()).ln();
        assert!((p.omega - omega).abs() < 1e-15);
        assert!((p_closed_form(&p, 0.0).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_solves_the_equation_at_zero() {
        let p = unit_params();
        let h = 1e-5;
        let fd = (p_closed_form(&p, 0.0).unwrap() - p_closed_form(&p, -h).unwrap()) / h;
        let fd2 = (3.0 * p_closed_form(&p, 0.0).unwrap() - 4.0 * p_closed_form(&p, -h).unwrap()
            + p_closed_form(&p, -2.0 * h).unwrap())
            / (2.0 * h);
        let exact = 1.0 + (-1.0f64).exp();
        assert!((fd2 - exact).abs() < 1e-8, "{fd2} vs {exact}");
        assert!((fd - exact).abs() < 1e-4);
    }

    #[test]
    fn positive_time_is_refused() {
        assert!(matches!(p_closed_form(&unit_params(), 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn bound_constant_is_the_sup() {
        let p = PParams::new(0.7, -0.2, 3.0, 0.4, -1.5).unwrap();
        let times: Vec<f64> = (0..=4000).map(|i| -40.0 + i as f64 * 0.01).collect();
        let rep = p_bound_check(&p, &times).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!((rep.max_ratio - 1.0).abs() < 1e-12);
        let (_, best) = quad::golden_max(
            |t| {
                let g = p_closed_form(&p, t).unwrap() - p.c0 * t - p.omega;
                g * (-p.c0 * p.sigma * t).exp()
            },
            -40.0,
            0.0,
            1e-12,
        );
        assert!((best - p.k_bound).abs() < 1e-9 * p.k_bound);
    }

    #[test]
    fn closed_form_matches_rk4() {
        let p = PParams::new(0.45, -0.41, 13.4, 0.27, DEFAULT_P0).unwrap();
        let rep = p_rk4_check(&p, -20.0, 20_000).unwrap();
        assert!(rep.max_error < 1e-10, "{rep:?}");
    }

    #[test]
    fn invalid_parameters() {
        assert!(PParams::new(0.1, 0.2, 1.0, 1.0, -1.0).is_err());
        assert!(PParams::new(1.0, 0.0, 0.0, 1.0, -1.0).is_err());
        assert!(PParams::new(1.0, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn n_star_arithmetic() {
        assert_eq!(n_star(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(n_star(2.0, 3.0, 1.0, 0.5, 0.25).unwrap(), 24.0);
        let base = n_star(1.3, 0.7, 2.1, 0.4, 0.9).unwrap();
        assert!((n_star(3.9, 0.7, 2.1, 0.4, 0.9).unwrap() - 3.0 * base).abs() < 1e-12);
        assert!(matches!(
            n_star(1.0, 1.0, 1.0, 0.0, 1.0),
            Err(Error::ConditionFailure { .. })
        ));
    }

    #[test]
    fn shift_vanishes_at_omega() {
        let s = phase_shift(0.45, -0.41, -12.0, -12.0);
        assert_eq!((s.x0, s.t0), (0.0, 0.0));
        // The shifted front sits at phase θ: x₀ + c t₀ = θ - ω.
        let s = phase_shift(0.45, -0.41, -12.0, -7.0);
        assert!((s.x0 + 0.45 * s.t0 - 5.0).abs() < 1e-12);
        assert!((s.x0 - 0.41 * s.t0 + 5.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_places_the_level_at_origin() {
        let g = GridFunction::from_fn(-10.0, 10.0, 0.05, 0.0, 1.0, |x| 0.5 * (1.0 + (0.7 * x).tanh()));
        let n = normalize(&g, 0.8).unwrap();
        assert!((n.interpolate(0.0) - 0.8).abs() < 1e-12);
        for (i, &v) in n.values.iter().enumerate() {
            if n.x(i) >= 0.0 {
                assert!(v >= 0.8 - 1e-12);
            }
        }
        let d = g.mirrored();
        let n = normalize(&d, 0.8).unwrap();
        assert!((n.interpolate(0.0) - 0.8).abs() < 1e-12);
        assert!(matches!(normalize(&g, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn gap_bounds_of_a_well() {
        let u = GridFunction::from_fn(-20.0, 20.0, 0.1, 1.0, 1.0, |x| if x.abs() < 5.0 { 0.0 } else { 1.0 });
        let (a, b) = gap_bounds(&u).unwrap();
        assert!((a + 5.0).abs() < 0.11 && (b - 5.0).abs() < 0.11);
        assert!(gap_bounds(&GridFunction::constant(-1.0, 1.0, 0.1, 0.9)).is_none());
    }

    #[test]
    fn time_grid_ends_at_zero() {
        let g = time_grid(-20.0, 0.5);
        assert_eq!(g.len(), 41);
        assert_eq!(*g.last().unwrap(), 0.0);
    }
}
