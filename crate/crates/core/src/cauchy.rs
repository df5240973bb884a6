//! Explicit time stepping of `u_t = J*u - u + f(u)` on a truncated grid,
//! plus comparison and regularity diagnostics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Convolver, GridFunction};
use crate::kernel::SampledKernel;
use crate::reaction::IgnitionNonlinearity;

/// Overshoot tolerated above the initial range before a run is declared
/// unstable.
pub const INSTABILITY_BUDGET: f64 = 1e-6;

/// Ordering tolerance of the comparison test.
pub const COMPARISON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

/// Largest admissible step, `0.5 / (1 + max f')`.
pub fn stability_budget(fprime_max: f64) -> f64 {
    0.5 / (1.0 + fprime_max)
}

/// States recorded at increasing times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    pub scheme: Scheme,
    pub dt: f64,
}

impl Trajectory {
    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Writes every `stride`-th state as a binary checkpoint plus an index
    /// of times.
    pub fn write_snapshots(&self, dir: &Path, stride: usize) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        let mut index = Vec::new();
        for (k, (t, u)) in self.times.iter().zip(&self.states).enumerate() {
            if k % stride.max(1) != 0 && k + 1 != self.states.len() {
                continue;
            }
            let name = format!("snapshot_{k:05}.bin");
            let file = std::fs::File::create(dir.join(&name))?;
            u.write_checkpoint(std::io::BufWriter::new(file))?;
            index.push(serde_json::json!({ "file": name, "t": t }));
            names.push(name);
        }
        std::fs::write(dir.join("snapshots.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(names)
    }
}

/// Time stepper bound to one kernel, nonlinearity and grid length.
#[derive(Debug)]
pub struct Integrator {
    conv: Convolver,
    nl: IgnitionNonlinearity,
    dt: f64,
    scheme: Scheme,
}

impl Integrator {
    /// Validates `dt` against the stability budget.
    pub fn new(
        kernel: &SampledKernel,
        nl: &IgnitionNonlinearity,
        n: usize,
        dt: f64,
        scheme: Scheme,
    ) -> Result<Self> {
        let fprime_max = nl.derive_constants(1e-10)?.fprime_max;
        let budget = stability_budget(fprime_max);
        if !(dt > 0.0 && dt <= budget * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "time step {dt} outside (0, {budget}] = (0, 0.5/(1 + max f'))"
            )));
        }
        Ok(Integrator {
            conv: Convolver::auto(kernel, n),
            nl: *nl,
            dt,
            scheme,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn nonlinearity(&self) -> &IgnitionNonlinearity {
        &self.nl
    }

    pub fn convolver(&self) -> &Convolver {
        &self.conv
    }

    /// `out = J*u - u + f(u)`.
    pub fn rhs(&self, u: &[f64], fl: f64, fr: f64, out: &mut [f64]) {
        self.conv.apply(u, fl, fr, out);
        for (o, &v) in out.iter_mut().zip(u) {
            *o += self.nl.value(v) - v;
        }
    }

    /// Right-hand side as a grid function (`∂u/∂t` of the semi-discrete
    /// system).
    pub fn time_derivative(&self, u: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; u.len()];
        self.rhs(&u.values, u.farfield_left, u.farfield_right, &mut out);
        GridFunction::new(u.x0, u.h, out, 0.0, 0.0)
    }

    fn step(&self, u: &mut [f64], fl: f64, fr: f64, dt: f64, work: &mut Work) {
        let n = u.len();
        match self.scheme {
            Scheme::Euler => {
                self.rhs(u, fl, fr, &mut work.k1);
                for i in 0..n {
                    u[i] += dt * work.k1[i];
                }
            }
            Scheme::Rk4 => {
                let Work { k1, k2, k3, k4, tmp } = work;
                self.rhs(u, fl, fr, k1);
                for i in 0..n {
                    tmp[i] = u[i] + 0.5 * dt * k1[i];
                }
                self.rhs(tmp, fl, fr, k2);
                for i in 0..n {
                    tmp[i] = u[i] + 0.5 * dt * k2[i];
                }
                self.rhs(tmp, fl, fr, k3);
                for i in 0..n {
                    tmp[i] = u[i] + dt * k3[i];
                }
                self.rhs(tmp, fl, fr, k4);
                let s = dt / 6.0;
                for i in 0..n {
                    u[i] += s * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
                }
            }
        }
    }

    /// Integrates from `t0` through the increasing `checkpoints`, recording
    /// the state at `t0` and at each checkpoint. Each segment uses the
    /// largest step not exceeding `dt` that lands exactly on the checkpoint.
    pub fn run(&self, u0: &GridFunction, t0: f64, checkpoints: &[f64]) -> Result<Trajectory> {
        let mut times = vec![t0];
        let mut states = vec![u0.clone()];
        self.run_observed(u0, t0, checkpoints, |t, u| {
            times.push(t);
            states.push(u.clone());
            Ok(())
        })?;
        Ok(Trajectory {
            times,
            states,
            scheme: self.scheme,
            dt: self.dt,
        })
    }

    /// Like [`Integrator::run`], handing each checkpoint state to `observe`
    /// instead of storing it.
    pub fn run_observed<F>(&self, u0: &GridFunction, t0: f64, checkpoints: &[f64], mut observe: F) -> Result<GridFunction>
    where
        F: FnMut(f64, &GridFunction) -> Result<()>,
    {
        if u0.len() != self.conv.len() {
            return Err(Error::Grid(format!(
                "integrator built for {} points, got {}",
                self.conv.len(),
                u0.len()
            )));
        }
        let ceiling = u0.max().max(u0.farfield_left).max(u0.farfield_right).max(1.0) + INSTABILITY_BUDGET;
        let floor = u0.min().min(u0.farfield_left).min(u0.farfield_right).min(0.0) - INSTABILITY_BUDGET;
        let mut u = u0.clone();
        let mut work = Work::new(u.len());
        let mut t = t0;
        for &tc in checkpoints {
            if tc < t - 1e-12 {
                return Err(Error::Config(format!("checkpoint {tc} precedes current time {t}")));
            }
            let span = tc - t;
            let steps = (span / self.dt - 1e-9).ceil().max(0.0) as usize;
            if steps > 0 {
                let dt = span / steps as f64;
                for _ in 0..steps {
                    self.step(&mut u.values, u.farfield_left, u.farfield_right, dt, &mut work);
                }
            }
            t = tc;
            let (lo, hi) = (u.min(), u.max());
            if !(lo >= floor && hi <= ceiling) {
                return Err(Error::Integration(format!(
                    "state left [{floor}, {ceiling}] at t = {t}: range [{lo}, {hi}]"
                )));
            }
            observe(t, &u)?;
        }
        Ok(u)
    }

    /// State after `duration`, recording nothing.
    pub fn advance(&self, u0: &GridFunction, duration: f64) -> Result<GridFunction> {
        self.run_observed(u0, 0.0, &[duration], |_, _| Ok(()))
    }
}

struct Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// Integrates to `t_end`, recording every step.
pub fn integrate(
    kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    u0: &GridFunction,
    t_end: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<Trajectory> {
    let integ = Integrator::new(kernel, nl, u0.len(), dt, scheme)?;
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let checkpoints: Vec<f64> = (1..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
    integ.run(u0, 0.0, &checkpoints)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `max_{x,t} (u - v)_+` over every step.
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Integrates ordered data `u0 <= v0` with identical steps and reports the
/// worst ordering violation.
pub fn comparison_test(
    kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    u0: &GridFunction,
    v0: &GridFunction,
    t_end: f64,
    dt: f64,
) -> Result<ComparisonReport> {
    u0.same_grid(v0)?;
    if u0.values.iter().zip(&v0.values).any(|(a, b)| a > b) {
        return Err(Error::Validity("initial data are not ordered".into()));
    }
    let integ = Integrator::new(kernel, nl, u0.len(), dt, Scheme::Rk4)?;
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut wu = Work::new(u.len());
    let mut wv = Work::new(v.len());
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        integ.step(&mut u.values, u.farfield_left, u.farfield_right, h, &mut wu);
        integ.step(&mut v.values, v.farfield_left, v.farfield_right, h, &mut wv);
        for (a, b) in u.values.iter().zip(&v.values) {
            worst = worst.max(a - b);
        }
    }
    Ok(ComparisonReport {
        max_violation: worst,
        tolerance: COMPARISON_TOL,
        passed: worst <= COMPARISON_TOL,
    })
}

/// Random ordered pair `u0 ≤ v0` with values in `[0, 1]`: `u0` is piecewise
/// linear through uniform values at knots `knot_spacing` apart and
/// `v0 = u0 + (1 - u0) w` with `w` drawn the same way.
pub fn random_ordered_pair<R: Rng>(
    rng: &mut R,
    lo: f64,
    hi: f64,
    h: f64,
    knot_spacing: f64,
) -> (GridFunction, GridFunction) {
    let knots = ((hi - lo) / knot_spacing).ceil() as usize + 1;
    let mut draw = || -> Vec<f64> { (0..knots).map(|_| rng.random::<f64>()).collect() };
    let (a, w) = (draw(), draw());
    let interp = |v: &[f64], x: f64| {
        let s = ((x - lo) / knot_spacing).clamp(0.0, (knots - 1) as f64);
        let i = (s.floor() as usize).min(knots - 2);
        let t = s - i as f64;
        v[i] * (1.0 - t) + v[i + 1] * t
    };
    let u = GridFunction::from_fn(lo, hi, h, a[0], a[knots - 1], |x| interp(&a, x));
    let values = u
        .xs()
        .zip(&u.values)
        .map(|(x, &ui)| ui + (1.0 - ui) * interp(&w, x))
        .collect();
    let fl = a[0] + (1.0 - a[0]) * w[0];
    let fr = a[knots - 1] + (1.0 - a[knots - 1]) * w[knots - 1];
    let v = GridFunction::new(u.x0, h, values, fl, fr);
    (u, v)
}

/// Outcome of [`comparison_suite`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSuiteReport {
    pub seed: u64,
    pub pairs: usize,
    pub t_end: f64,
    pub worst_violation: f64,
    pub failures: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs [`comparison_test`] on `pairs` random ordered pairs; pair `i` draws
/// from stream `i` of a ChaCha generator seeded with `seed`.
pub fn comparison_suite(
    kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    window: (f64, f64),
    pairs: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<ComparisonSuiteReport> {
    let reports: Vec<ComparisonReport> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (u0, v0) = random_ordered_pair(&mut rng, window.0, window.1, kernel.h, 1.5);
            comparison_test(kernel, nl, &u0, &v0, t_end, dt)
        })
        .collect::<Result<_>>()?;
    let worst_violation = reports.iter().map(|r| r.max_violation).fold(0.0, f64::max);
    let failures = reports.iter().filter(|r| !r.passed).count();
    Ok(ComparisonSuiteReport {
        seed,
        pairs,
        t_end,
        worst_violation,
        failures,
        tolerance: COMPARISON_TOL,
        passed: failures == 0,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegularityEstimate {
    /// `sup |u(x+η,t) - u(x,t)| / η`.
    pub c1: f64,
    /// The same quotient for `∂u/∂t`.
    pub c2: f64,
}

/// Empirical shift-quotient constants over a trajectory; `∂u/∂t` comes from
/// the right-hand side.
pub fn regularity_probe(
    traj: &Trajectory,
    kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    eta: f64,
) -> Result<RegularityEstimate> {
    let first = traj.states.first().ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    let m = (eta / first.h).round();
    if m < 1.0 || (m * first.h - eta).abs() > 1e-9 * eta.max(1.0) {
        return Err(Error::Config(format!("eta = {eta} is not a positive multiple of h = {}", first.h)));
    }
    let m = m as usize;
    let conv = Convolver::auto(kernel, first.len());
    let quotient = |v: &[f64]| -> f64 {
        v.windows(m + 1)
            .map(|w| (w[m] - w[0]).abs())
            .fold(0.0, f64::max)
            / eta
    };
    let mut est = RegularityEstimate { c1: 0.0, c2: 0.0 };
    let mut ut = vec![0.0; first.len()];
    for u in &traj.states {
        est.c1 = est.c1.max(quotient(&u.values));
        conv.apply(&u.values, u.farfield_left, u.farfield_right, &mut ut);
        for (o, &v) in ut.iter_mut().zip(&u.values) {
            *o += nl.value(v) - v;
        }
        est.c2 = est.c2.max(quotient(&ut));
    }
    Ok(est)
}
