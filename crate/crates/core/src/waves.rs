//! Traveling waves `c φ' = J*φ - φ + f(φ)`: an increasing front `0 → 1` by
//! front tracking or Newton, and the decreasing front `1 → 0` through the
//! reflected kernel `J(-·)`.

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::cauchy::{Integrator, Scheme};
use crate::error::{Error, Iterate, Result};
use crate::field::{level_crossing, Convolver, GridFunction, DERIVATIVE_STENCIL};
use crate::kernel::{KernelSpec, SampledKernel};
use crate::quad;
use crate::reaction::IgnitionNonlinearity;

/// Speeds with smaller magnitude are refused.
pub const ZERO_SPEED_GUARD: f64 = 1e-4;

/// Tolerance on one-signed discrete differences of a profile.
pub const MONOTONICITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// `0` at `-∞`, `1` at `+∞`.
    Increasing,
    /// `1` at `-∞`, `0` at `+∞`.
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tracking,
    Newton,
}

/// Profile and speed, normalized so that the profile equals `ρ` at `0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveSolution {
    pub profile: GridFunction,
    pub speed: f64,
    pub orientation: Orientation,
    pub method: Method,
    /// `‖c Dφ - (J*φ - φ + f(φ))‖∞` with the eighth-order centered `D`.
    pub residual_norm: f64,
}

/// Truncated line `[lo, hi]` with spacing `h`; `0` must be a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveGrid {
    pub lo: f64,
    pub hi: f64,
    pub h: f64,
}

impl Default for WaveGrid {
    fn default() -> Self {
        WaveGrid {
            lo: -60.0,
            hi: 60.0,
            h: 0.05,
        }
    }
}

impl WaveGrid {
    pub fn new(lo: f64, hi: f64, h: f64) -> Result<Self> {
        let g = WaveGrid { lo, hi, h };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.lo < 0.0 && self.hi > 0.0) {
            return Err(Error::Config(format!(
                "wave window [{}, {}] with h = {} must contain 0 in its interior",
                self.lo, self.hi, self.h
            )));
        }
        let k = -self.lo / self.h;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "left end {} is not a multiple of h = {}",
                self.lo, self.h
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        crate::field::grid_points(self.lo, self.hi, self.h)
    }

    pub fn origin_index(&self) -> usize {
        (-self.lo / self.h).round() as usize
    }

    pub fn mirrored(&self) -> WaveGrid {
        WaveGrid {
            lo: -self.hi,
            hi: -self.lo,
            h: self.h,
        }
    }
}

/// Front-tracking settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Level whose crossing is tracked.
    pub level: f64,
    /// Time between position samples.
    pub sample_every: f64,
    /// Minimum `r²` of the position fit.
    pub min_r2: f64,
}

impl Default for TrackingOptions {
    fn default() -> Self {
        TrackingOptions {
            dt: 0.1,
            t_end: 300.0,
            level: 0.5,
            sample_every: 1.0,
            min_r2: 0.999,
        }
    }
}

/// Newton settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Target `‖residual‖∞`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Halvings of the step tried before declaring stagnation.
    pub max_damping: usize,
    /// Kernel tail mass left out of the banded Jacobian.
    pub jacobian_tail_mass: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-6,
            max_iterations: 60,
            max_damping: 5,
            jacobian_tail_mass: 1e-9,
        }
    }
}

/// `c Dφ - (J*φ - φ + f(φ))` on the grid, far fields taken from `phi`.
pub fn wave_residual(conv: &Convolver, nl: &IgnitionNonlinearity, phi: &GridFunction, c: f64) -> Vec<f64> {
    let mut ju = vec![0.0; phi.len()];
    conv.apply(&phi.values, phi.farfield_left, phi.farfield_right, &mut ju);
    let d = phi.derivative();
    phi.values
        .iter()
        .zip(ju)
        .zip(d)
        .map(|((&u, k), du)| c * du - (k - u + nl.value(u)))
        .collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sup-norm residual of a solution on its own grid.
pub fn residual_norm(kernel: &SampledKernel, nl: &IgnitionNonlinearity, wave: &WaveSolution) -> f64 {
    let conv = Convolver::auto(kernel, wave.profile.len());
    sup_norm(&wave_residual(&conv, nl, &wave.profile, wave.speed))
}

/// Shifts `u` so that it equals `level` at `0` (to interpolation accuracy)
/// and pins the node at `0` to `level`.
fn normalize_at_origin(u: &GridFunction, level: f64) -> Result<GridFunction> {
    let x = level_crossing(u, level)?;
    // Refine the linear crossing on the interpolant.
    let g = |s: f64| u.interpolate(s) - level;
    let a = x - u.h;
    let b = x + u.h;
    let root = if g(a) * g(b) <= 0.0 { quad::bisect(g, a, b, 1e-14) } else { x };
    let mut v = u.advanced(root);
    if let Some(i0) = v.index_of(0.0) {
        v.values[i0] = level;
    }
    Ok(v)
}

/// Increasing wave by direct simulation from a smoothed step.
pub fn solve_wave_tracking(
    spec: &KernelSpec,
    nl: &IgnitionNonlinearity,
    grid: &WaveGrid,
    opts: &TrackingOptions,
) -> Result<WaveSolution> {
    grid.validate()?;
    let kernel = spec.sample(grid.h)?;
    let radius = spec.dispersal_radius();
    let n = grid.points();
    let center = 0.5 * (grid.lo + grid.hi);
    let integ = Integrator::new(&kernel, nl, n, opts.dt, Scheme::Rk4)?;
    let mut u = GridFunction::from_fn(grid.lo, grid.hi, grid.h, 0.0, 1.0, |x| {
        0.5 * (1.0 + ((x - center) / radius).tanh())
    });
    let guard = 10.0 * radius;
    let recenter_at = 0.1 * (grid.hi - grid.lo);
    let mut offset = 0.0;
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let samples = (opts.t_end / opts.sample_every).round().max(4.0) as usize;
    for k in 1..=samples {
        u = integ.advance(&u, opts.sample_every)?;
        let x = level_crossing(&u, opts.level)?;
        if x - grid.lo < guard || grid.hi - x < guard {
            return Err(Error::Window(format!(
                "front at {x} within {guard} of the window [{}, {}]",
                grid.lo, grid.hi
            )));
        }
        times.push(k as f64 * opts.sample_every);
        positions.push(x + offset);
        if (x - center).abs() > recenter_at {
            let cells = ((x - center) / grid.h).round();
            let d = cells * grid.h;
            u = u.advanced(d);
            offset += d;
        }
    }
    let half = times.len() / 2;
    let fit = quad::linear_fit(&times[half..], &positions[half..])
        .ok_or_else(|| Error::InsufficientData("too few front positions".into()))?;
    let speed = -fit.slope;
    if fit.r2 < opts.min_r2 && speed.abs() > ZERO_SPEED_GUARD {
        return Err(Error::Convergence(format!(
            "front position is not linear in time: r² = {} < {}",
            fit.r2, opts.min_r2
        )));
    }
    let profile = normalize_at_origin(&u, nl.rho)?;
    let conv = Convolver::auto(&kernel, n);
    let residual_norm = sup_norm(&wave_residual(&conv, nl, &profile, speed));
    Ok(WaveSolution {
        profile,
        speed,
        orientation: Orientation::Increasing,
        method: Method::Tracking,
        residual_norm,
    })
}

/// Banded part of the Jacobian of [`wave_residual`] with respect to the
/// profile, with the kernel clipped to `[jt_min, jt_max]`.
fn jacobian_band(
    kernel: &SampledKernel,
    jt: (i64, i64),
    nl: &IgnitionNonlinearity,
    phi: &GridFunction,
    c: f64,
) -> BandMatrix {
    let n = phi.len();
    let (jt_min, jt_max) = jt;
    let reach = DERIVATIVE_STENCIL.len() as i64;
    let kl = jt_max.max(reach) as usize;
    let ku = (-jt_min).max(reach) as usize;
    let mut m = BandMatrix::zeros(n, kl, ku);
    let stencil = DERIVATIVE_STENCIL
        .iter()
        .flat_map(|&(o, w)| [(o, c * w / phi.h), (-o, -c * w / phi.h)]);
    for i in 0..n {
        let ii = i as i64;
        for (off, v) in stencil.clone() {
            let k = ii + off;
            if k >= 0 && (k as usize) < n {
                m.add(i, k as usize, v);
            }
        }
        for (j, w) in kernel.offsets() {
            if j < jt_min || j > jt_max {
                continue;
            }
            let k = ii - j;
            if k >= 0 && (k as usize) < n {
                m.add(i, k as usize, -w);
            }
        }
        m.add(i, i, 1.0 - nl.slope(phi.values[i]));
    }
    m
}

/// Exact Jacobian-vector product of [`wave_residual`] in the direction
/// `(dphi, dc)`.
pub fn jacobian_apply(
    conv: &Convolver,
    nl: &IgnitionNonlinearity,
    phi: &GridFunction,
    c: f64,
    dphi: &[f64],
    dc: f64,
) -> Vec<f64> {
    let v = GridFunction::new(phi.x0, phi.h, dphi.to_vec(), 0.0, 0.0);
    let mut jv = vec![0.0; phi.len()];
    conv.apply(&v.values, 0.0, 0.0, &mut jv);
    let dv = v.derivative();
    let dphi_x = phi.derivative();
    (0..phi.len())
        .map(|i| c * dv[i] + dc * dphi_x[i] - (jv[i] - dphi[i] + nl.slope(phi.values[i]) * dphi[i]))
        .collect()
}

/// Offsets `[j_lo, j_hi]` carrying all but `tail` of the discrete mass.
fn jacobian_range(kernel: &SampledKernel, tail: f64) -> (i64, i64) {
    let w = &kernel.weights;
    let mut lo = 0;
    let mut acc = 0.0;
    while lo + 1 < w.len() && acc + w[lo] < 0.5 * tail {
        acc += w[lo];
        lo += 1;
    }
    let mut hi = w.len() - 1;
    acc = 0.0;
    while hi > lo && acc + w[hi] < 0.5 * tail {
        acc += w[hi];
        hi -= 1;
    }
    (kernel.j_min + lo as i64, kernel.j_min + hi as i64)
}

/// Increasing wave by damped Newton on the profile and speed, with the phase
/// condition `φ(0) = ρ`.
pub fn solve_wave_newton(
    spec: &KernelSpec,
    nl: &IgnitionNonlinearity,
    guess: &GridFunction,
    speed_guess: f64,
    opts: &NewtonOptions,
) -> Result<WaveSolution> {
    let kernel = spec.sample(guess.h)?;
    let i0 = guess
        .index_of(0.0)
        .filter(|&i| guess.x(i).abs() < 1e-9 * guess.h.max(1.0))
        .ok_or_else(|| Error::Config("0 must be a node of the Newton grid".into()))?;
    let n = guess.len();
    let conv = Convolver::auto(&kernel, n);
    let jt = jacobian_range(&kernel, opts.jacobian_tail_mass);

    let mut phi = normalize_at_origin(
        &GridFunction::new(guess.x0, guess.h, guess.values.clone(), 0.0, 1.0),
        nl.rho,
    )?;
    let mut c = speed_guess;
    let mut r = wave_residual(&conv, nl, &phi, c);
    let mut norm = l2_norm(&r);
    let mut best = (sup_norm(&r), phi.clone(), c);
    let mut iterations = 0;
    while best.0 > opts.tol {
        if iterations == opts.max_iterations {
            return Err(Error::Nonconvergence {
                residual: best.0,
                iterations,
                best: Box::new(Iterate { profile: best.1, speed: best.2 }),
            });
        }
        iterations += 1;
        // Unknown slot i0 carries the speed, since φ(0) is pinned.
        let mut b = jacobian_band(&kernel, jt, nl, &phi, c);
        b.clear_col(i0);
        b.set(i0, i0, 1.0);
        let lu = b.factor()?;
        let mut y: Vec<f64> = r.iter().map(|v| -v).collect();
        lu.solve(&mut y);
        let mut z = phi.derivative();
        z[i0] -= 1.0;
        lu.solve(&mut z);
        let s = y[i0] / (1.0 + z[i0]);
        let delta: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - s * b).collect();

        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_damping {
            let mut trial = phi.clone();
            for (k, v) in trial.values.iter_mut().enumerate() {
                if k != i0 {
                    *v += lambda * delta[k];
                }
            }
            let tc = c + lambda * delta[i0];
            let tr = wave_residual(&conv, nl, &trial, tc);
            let tn = l2_norm(&tr);
            if tn <= (1.0 - 1e-4 * lambda) * norm {
                phi = trial;
                c = tc;
                r = tr;
                norm = tn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::Nonconvergence {
                residual: best.0,
                iterations,
                best: Box::new(Iterate { profile: best.1, speed: best.2 }),
            });
        }
        let sup = sup_norm(&r);
        if sup < best.0 {
            best = (sup, phi.clone(), c);
        }
    }
    let (residual_norm, profile, speed) = best;
    Ok(WaveSolution {
        profile,
        speed,
        orientation: Orientation::Increasing,
        method: Method::Newton,
        residual_norm,
    })
}

/// Default Newton starting profile: a ramp of width one dispersal radius.
pub fn tanh_guess(spec: &KernelSpec, grid: &WaveGrid) -> Result<GridFunction> {
    let radius = spec.dispersal_radius();
    Ok(GridFunction::from_fn(grid.lo, grid.hi, grid.h, 0.0, 1.0, |x| {
        0.5 * (1.0 + (x / radius).tanh())
    }))
}

/// Which solver(s) produce a wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Tracking,
    Newton,
    /// Tracking, then Newton started from the tracked wave.
    #[default]
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavePair {
    pub tracking: Option<WaveSolution>,
    pub newton: Option<WaveSolution>,
}

impl WavePair {
    /// The most accurate solution available.
    pub fn best(&self) -> &WaveSolution {
        self.newton.as_ref().or(self.tracking.as_ref()).expect("at least one solve")
    }
}

/// Solves the increasing wave by the requested method(s).
pub fn solve_increasing(
    spec: &KernelSpec,
    nl: &IgnitionNonlinearity,
    grid: &WaveGrid,
    method: SolveMethod,
    tracking: &TrackingOptions,
    newton: &NewtonOptions,
) -> Result<WavePair> {
    let tracked = match method {
        SolveMethod::Tracking | SolveMethod::Both => Some(solve_wave_tracking(spec, nl, grid, tracking)?),
        SolveMethod::Newton => None,
    };
    let solved = match (method, &tracked) {
        (SolveMethod::Tracking, _) => None,
        (_, Some(t)) => Some(solve_wave_newton(spec, nl, &t.profile, t.speed, newton)?),
        (_, None) => {
            let guess = tanh_guess(spec, grid)?;
            // A short tracking run is a far better start than a bare ramp.
            let short = TrackingOptions {
                t_end: 60.0,
                min_r2: 0.0,
                ..*tracking
            };
            match solve_wave_tracking(spec, nl, grid, &short) {
                Ok(t) => Some(solve_wave_newton(spec, nl, &t.profile, t.speed, newton)?),
                Err(_) => Some(solve_wave_newton(spec, nl, &guess, 0.1, newton)?),
            }
        }
    };
    Ok(WavePair {
        tracking: tracked,
        newton: solved,
    })
}

/// Mirrors an increasing wave of `J(-·)` into the decreasing wave of `J`:
/// `φ̂(s) = ψ(-s)`, `ĉ = -c_ψ`.
pub fn reflect_wave(psi: &WaveSolution) -> WaveSolution {
    WaveSolution {
        profile: psi.profile.mirrored(),
        speed: -psi.speed,
        orientation: match psi.orientation {
            Orientation::Increasing => Orientation::Decreasing,
            Orientation::Decreasing => Orientation::Increasing,
        },
        method: psi.method,
        residual_norm: psi.residual_norm,
    }
}

/// Decreasing wave of `J` via the increasing wave of the reflected kernel.
pub fn solve_decreasing(
    spec: &KernelSpec,
    nl: &IgnitionNonlinearity,
    grid: &WaveGrid,
    method: SolveMethod,
    tracking: &TrackingOptions,
    newton: &NewtonOptions,
) -> Result<WavePair> {
    let reflected = spec.reflect();
    let pair = solve_increasing(&reflected, nl, &grid.mirrored(), method, tracking, newton)?;
    Ok(WavePair {
        tracking: pair.tracking.as_ref().map(reflect_wave),
        newton: pair.newton.as_ref().map(reflect_wave),
    })
}

/// `∫ f(φ)` over the window by the trapezoid rule.
pub fn reaction_integral(nl: &IgnitionNonlinearity, wave: &WaveSolution) -> f64 {
    wave.profile.map(|u| nl.value(u)).trapezoid()
}

/// `|c + m₁ - ∫f(φ)|` for increasing waves, `|ĉ + m₁ + ∫f(φ̂)|` for
/// decreasing ones.
pub fn speed_identity_check(wave: &WaveSolution, m1: f64, nl: &IgnitionNonlinearity) -> f64 {
    let integral = reaction_integral(nl, wave);
    match wave.orientation {
        Orientation::Increasing => (wave.speed + m1 - integral).abs(),
        Orientation::Decreasing => (wave.speed + m1 + integral).abs(),
    }
}

/// `|(c - ĉ) - (∫f(φ) + ∫f(φ̂))|`.
pub fn difference_identity(up: &WaveSolution, down: &WaveSolution, nl: &IgnitionNonlinearity) -> f64 {
    ((up.speed - down.speed) - (reaction_integral(nl, up) + reaction_integral(nl, down))).abs()
}

/// Largest violation of monotonicity in the declared orientation (0 when
/// monotone).
pub fn monotonicity_defect(wave: &WaveSolution) -> f64 {
    let sign = match wave.orientation {
        Orientation::Increasing => 1.0,
        Orientation::Decreasing => -1.0,
    };
    wave.profile
        .values
        .windows(2)
        .map(|w| (-(sign * (w[1] - w[0]))).max(0.0))
        .fold(0.0, f64::max)
}

/// `sup |φ'|` and the bound `(2 + M)/|c|`.
pub fn derivative_bound(wave: &WaveSolution, max_f: f64) -> (f64, f64) {
    let sup = sup_norm(&wave.profile.derivative());
    (sup, (2.0 + max_f) / wave.speed.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    BothPositive,
    CPosChatNeg,
    BothNegative,
}

/// Sign pattern of `(c, ĉ)`; the pattern `c < 0 < ĉ` cannot occur for true
/// waves and is reported as an invariant violation.
pub fn classify_speeds(c: f64, c_hat: f64) -> Result<SpeedClass> {
    for s in [c, c_hat] {
        if s.abs() < ZERO_SPEED_GUARD {
            return Err(Error::ZeroSpeed {
                speed: s,
                guard: ZERO_SPEED_GUARD,
            });
        }
    }
    if c < 0.0 && c_hat > 0.0 {
        return Err(Error::InvariantViolation(format!(
            "c = {c} < 0 < ĉ = {c_hat} is impossible for genuine waves"
        )));
    }
    if c <= c_hat {
        return Err(Error::InvariantViolation(format!("expected c > ĉ, got c = {c}, ĉ = {c_hat}")));
    }
    Ok(if c_hat > 0.0 {
        SpeedClass::BothPositive
    } else if c > 0.0 {
        SpeedClass::CPosChatNeg
    } else {
        SpeedClass::BothNegative
    })
}
