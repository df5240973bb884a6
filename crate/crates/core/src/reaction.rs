//! Ignition nonlinearities `f(u) = A (u - ρ)^q (1 - u)` on `(ρ, 2]`, zero on
//! `[0, ρ]`, and the constants the entire-solution construction needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Upper end of the interval on which `f` is defined.
pub const DOMAIN_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgnitionNonlinearity {
    pub rho: f64,
    pub amplitude: f64,
    pub q: u32,
}

/// Constants derived from `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionConstants {
    /// `max_{[0,1]} f`.
    pub max_f: f64,
    /// `max_{[0,2]} f''`.
    pub max_f_second: f64,
    /// Largest `m0 ∈ (0,1)` with `f' < 0` on `(1 - m0, 2)`.
    pub m0: f64,
    /// `max_{[0,1]} f'`.
    pub fprime_max: f64,
}

impl IgnitionNonlinearity {
    pub fn new(rho: f64, q: u32, amplitude: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("threshold rho = {rho} must lie in (0, 1)")));
        }
        if q < 3 {
            return Err(Error::Config(format!(
                "smoothness exponent q = {q} must be at least 3 for a C² nonlinearity"
            )));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Config(format!("amplitude {amplitude} must be positive")));
        }
        Ok(IgnitionNonlinearity { rho, amplitude, q })
    }

    /// Chooses the amplitude so that `max_{[0,1]} f' = target`.
    pub fn with_max_slope(rho: f64, q: u32, target: f64) -> Result<Self> {
        let unit = IgnitionNonlinearity::new(rho, q, 1.0)?;
        let slope = unit.unit_slope_max();
        IgnitionNonlinearity::new(rho, q, target / slope)
    }

    /// Default configuration: `ρ = 1/4`, `q = 3`, `max f' = 1/2`.
    pub fn standard() -> Self {
        IgnitionNonlinearity::with_max_slope(0.25, 3, 0.5).expect("valid defaults")
    }

    /// `max f'` at unit amplitude; attained where `f'' = 0`, i.e. at
    /// `u = (q - 1 + 2ρ) / (q + 1)`.
    fn unit_slope_max(&self) -> f64 {
        let q = self.q as f64;
        let u = (q - 1.0 + 2.0 * self.rho) / (q + 1.0);
        (u - self.rho).powi(self.q as i32 - 1) * (q * (1.0 - u) - (u - self.rho))
    }

    /// `f(u)`, extended by zero below the threshold; no domain check.
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        if u <= self.rho {
            0.0
        } else {
            self.amplitude * (u - self.rho).powi(self.q as i32) * (1.0 - u)
        }
    }

    /// `f'(u)`; no domain check.
    #[inline]
    pub fn slope(&self, u: f64) -> f64 {
        if u <= self.rho {
            0.0
        } else {
            let q = self.q as f64;
            let s = u - self.rho;
            self.amplitude * s.powi(self.q as i32 - 1) * (q * (1.0 - u) - s)
        }
    }

    /// `f''(u)`; no domain check.
    #[inline]
    pub fn curvature(&self, u: f64) -> f64 {
        if u <= self.rho {
            0.0
        } else {
            let q = self.q as f64;
            let s = u - self.rho;
            self.amplitude * s.powi(self.q as i32 - 2) * (q * (q - 1.0) * (1.0 - u) - 2.0 * q * s)
        }
    }

    fn check_domain(u: f64) -> Result<()> {
        if (0.0..=DOMAIN_MAX).contains(&u) {
            Ok(())
        } else {
            Err(Error::Domain(format!("u = {u} outside [0, {DOMAIN_MAX}]")))
        }
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        Self::check_domain(u)?;
        Ok(self.value(u))
    }

    pub fn eval_prime(&self, u: f64) -> Result<f64> {
        Self::check_domain(u)?;
        Ok(self.slope(u))
    }

    pub fn eval_second(&self, u: f64) -> Result<f64> {
        Self::check_domain(u)?;
        Ok(self.curvature(u))
    }

    /// Maximizes the closed forms and locates `m0` by bisection.
    pub fn derive_constants(&self, tol: f64) -> Result<ReactionConstants> {
        let rho = self.rho;
        let (_, max_f) = quad::golden_max(|u| self.value(u), rho, 1.0, tol);
        let (_, fprime_max) = quad::scan_max(|u| self.slope(u), 0.0, 1.0, 2000, tol);
        let (_, max_f_second) = quad::scan_max(|u| self.curvature(u), 0.0, DOMAIN_MAX, 4000, tol);
        if fprime_max >= 1.0 {
            return Err(Error::Config(format!(
                "max f' = {fprime_max} must be below 1; reduce the amplitude"
            )));
        }
        // g(m) = max of f' over (1 - m, 2); negative for small m, zero once
        // the window reaches the critical point of f.
        let g = |m: f64| quad::scan_max(|u| self.slope(u), 1.0 - m, DOMAIN_MAX, 400, tol * 1e-3).1;
        if g(1e-9) >= 0.0 {
            return Err(Error::Config("f'(1) must be negative".into()));
        }
        let boundary = quad::bisect(|m| if g(m) < 0.0 { -1.0 } else { 1.0 }, 1e-9, 1.0, tol);
        let m0 = (boundary - tol).max(0.5 * boundary);
        Ok(ReactionConstants {
            max_f: max_f.max(0.0),
            max_f_second,
            m0,
            fprime_max,
        })
    }
}

/// Reaction settings as read from JSON; `amplitude` and `target_fprime_max`
/// are mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionConfig {
    pub rho: f64,
    #[serde(default = "default_q")]
    pub q: u32,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub target_fprime_max: Option<f64>,
}

fn default_q() -> u32 {
    3
}

impl Default for ReactionConfig {
    fn default() -> Self {
        ReactionConfig {
            rho: 0.25,
            q: 3,
            amplitude: None,
            target_fprime_max: Some(0.5),
        }
    }
}

impl ReactionConfig {
    pub fn build(&self) -> Result<IgnitionNonlinearity> {
        match (self.amplitude, self.target_fprime_max) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either amplitude or target_fprime_max, not both".into(),
            )),
            (Some(a), None) => IgnitionNonlinearity::new(self.rho, self.q, a),
            (None, Some(t)) => IgnitionNonlinearity::with_max_slope(self.rho, self.q, t),
            (None, None) => IgnitionNonlinearity::with_max_slope(self.rho, self.q, 0.5),
        }
    }
}
