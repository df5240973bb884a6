//! Characteristic functions of the linearized wave equations at `0` and `1`,
//! their real roots, and tail diagnostics of computed profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::kernel::{Interval, KernelSpec};
use crate::quad;
use crate::waves::{Orientation, WaveSolution};

/// Number of bracketing samples per search interval.
pub const ROOT_SAMPLES: usize = 1000;

/// Default value band for tail fits.
pub const TAIL_BAND: (f64, f64) = (1e-8, 1e-3);

/// Minimum number of grid points in a tail fit.
pub const MIN_TAIL_POINTS: usize = 30;

/// Search bound used when the analyticity window is unbounded.
const UNBOUNDED_SEARCH: f64 = 60.0;

const MGF_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Characteristic {
    /// `∫J(-y)e^{μy}dy - 1 - cμ`.
    F1,
    /// `F1 + f'(1)`.
    F2,
    /// `∫J(y)e^{μy}dy - 1 + ĉμ`.
    F1Hat,
    /// `F1Hat + f'(1)`.
    F2Hat,
}

impl Characteristic {
    fn hatted(self) -> bool {
        matches!(self, Characteristic::F1Hat | Characteristic::F2Hat)
    }

    fn shifted(self) -> bool {
        matches!(self, Characteristic::F2 | Characteristic::F2Hat)
    }

    pub fn name(self) -> &'static str {
        match self {
            Characteristic::F1 => "F1",
            Characteristic::F2 => "F2",
            Characteristic::F1Hat => "F1hat",
            Characteristic::F2Hat => "F2hat",
        }
    }
}

/// The window of `μ` on which `which` is finite.
pub fn characteristic_window(spec: &KernelSpec, which: Characteristic) -> Interval {
    let w = spec.mgf_window();
    if which.hatted() {
        Interval { lo: -w.hi, hi: -w.lo }
    } else {
        w
    }
}

/// Evaluates a characteristic function; `speed` is `c` for the plain
/// functions and `ĉ` for the hatted ones.
pub fn characteristic_eval(
    which: Characteristic,
    mu: f64,
    spec: &KernelSpec,
    speed: f64,
    fprime_at_1: f64,
) -> Result<f64> {
    let (m, lin) = if which.hatted() {
        (spec.mgf(-mu, MGF_TOL)?, speed * mu)
    } else {
        (spec.mgf(mu, MGF_TOL)?, -speed * mu)
    };
    let shift = if which.shifted() { fprime_at_1 } else { 0.0 };
    Ok(m - 1.0 + lin + shift)
}

/// First `μ`-derivative of a characteristic function.
pub fn characteristic_slope(which: Characteristic, mu: f64, spec: &KernelSpec, speed: f64) -> Result<f64> {
    Ok(if which.hatted() {
        -spec.mgf_derivative(-mu, 1, MGF_TOL)? + speed
    } else {
        spec.mgf_derivative(mu, 1, MGF_TOL)? - speed
    })
}

/// Second `μ`-derivative; nonnegative by convexity of the transform.
pub fn characteristic_curvature(which: Characteristic, mu: f64, spec: &KernelSpec) -> Result<f64> {
    let m = if which.hatted() { -mu } else { mu };
    spec.mgf_derivative(m, 2, MGF_TOL)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacteristicRoots {
    pub mu1: f64,
    pub mu21: f64,
    pub mu22: f64,
    pub mu1_hat: f64,
    pub mu21_hat: f64,
    pub mu22_hat: f64,
    pub analyticity_window: Interval,
    pub hat_window: Interval,
    /// Largest `|F(μ)|` over the six returned roots.
    pub max_residual: f64,
    /// The sampled sign patterns hold and sampled curvatures are nonnegative.
    pub sign_patterns_hold: bool,
}

/// Sample points strictly between `0` and `end` (either sign), dense near
/// both ends.
fn search_points(end: f64, samples: usize) -> Vec<f64> {
    let half = samples / 2;
    let mut ts = Vec::with_capacity(samples);
    for k in 0..half {
        let e = -8.0 + 8.0 * k as f64 / (half - 1) as f64;
        ts.push(0.5 * 10f64.powf(e));
        ts.push(1.0 - 0.5 * 10f64.powf(e));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.into_iter().map(|t| t * end).collect()
}

struct Problem<'a> {
    spec: &'a KernelSpec,
    which: Characteristic,
    speed: f64,
    fprime_at_1: f64,
}

impl Problem<'_> {
    fn eval(&self, mu: f64) -> Result<f64> {
        characteristic_eval(self.which, mu, self.spec, self.speed, self.fprime_at_1)
    }

    /// Root on the ray from `0` towards `end`, where the function starts
    /// negative: the first sampled sign change, refined by bisection and
    /// Newton.
    fn root_towards(&self, end: f64, tol: f64) -> Result<f64> {
        let window = characteristic_window(self.spec, self.which);
        let mut prev = 0.0;
        for mu in search_points(end, ROOT_SAMPLES) {
            let v = match self.eval(mu) {
                Ok(v) => v,
                Err(Error::Divergence(_)) => break,
                Err(e) => return Err(e),
            };
            if v > 0.0 {
                return self.refine(prev, mu, tol);
            }
            prev = mu;
        }
        Err(Error::RootBeyondWindow {
            function: self.which.name().into(),
            lo: window.lo,
            hi: window.hi,
        })
    }

    /// Bisection keeping `F(neg) <= 0 < F(pos)`, then Newton polishing.
    fn refine(&self, mut neg: f64, mut pos: f64, tol: f64) -> Result<f64> {
        for _ in 0..200 {
            let mid = 0.5 * (neg + pos);
            if mid == neg || mid == pos {
                break;
            }
            if self.eval(mid)? > 0.0 {
                pos = mid;
            } else {
                neg = mid;
            }
        }
        let (lo, hi) = if neg < pos { (neg, pos) } else { (pos, neg) };
        let mut x = 0.5 * (neg + pos);
        for _ in 0..3 {
            let f = self.eval(x)?;
            if f.abs() <= tol * 1e-2 {
                break;
            }
            let d = characteristic_slope(self.which, x, self.spec, self.speed)?;
            if d == 0.0 || !(x - f / d >= lo && x - f / d <= hi) {
                break;
            }
            x -= f / d;
        }
        Ok(x)
    }
}

fn search_end(window: Interval, positive: bool) -> f64 {
    if positive {
        if window.hi.is_finite() {
            window.hi
        } else {
            UNBOUNDED_SEARCH
        }
    } else if window.lo.is_finite() {
        window.lo
    } else {
        -UNBOUNDED_SEARCH
    }
}

/// Locates the six real roots of the characteristic functions.
pub fn find_roots(
    spec: &KernelSpec,
    c: f64,
    c_hat: f64,
    fprime_at_1: f64,
    tol: f64,
) -> Result<CharacteristicRoots> {
    if fprime_at_1 >= 0.0 {
        return Err(Error::Validity(format!("f'(1) = {fprime_at_1} must be negative")));
    }
    let plain = characteristic_window(spec, Characteristic::F1);
    let hat = characteristic_window(spec, Characteristic::F1Hat);
    let solve = |which: Characteristic, speed: f64, positive: bool| -> Result<f64> {
        let p = Problem {
            spec,
            which,
            speed,
            fprime_at_1,
        };
        let end = search_end(characteristic_window(spec, which), positive);
        p.root_towards(end, tol)
    };
    let mu1 = solve(Characteristic::F1, c, true)?;
    let mu21 = solve(Characteristic::F2, c, false)?;
    let mu22 = solve(Characteristic::F2, c, true)?;
    let mu1_hat = solve(Characteristic::F1Hat, c_hat, true)?;
    let mu21_hat = solve(Characteristic::F2Hat, c_hat, false)?;
    let mu22_hat = solve(Characteristic::F2Hat, c_hat, true)?;

    let residuals = [
        (Characteristic::F1, mu1, c),
        (Characteristic::F2, mu21, c),
        (Characteristic::F2, mu22, c),
        (Characteristic::F1Hat, mu1_hat, c_hat),
        (Characteristic::F2Hat, mu21_hat, c_hat),
        (Characteristic::F2Hat, mu22_hat, c_hat),
    ];
    let mut max_residual: f64 = 0.0;
    for (w, mu, s) in residuals {
        max_residual = max_residual.max(characteristic_eval(w, mu, spec, s, fprime_at_1)?.abs());
    }
    let sign_patterns_hold = sign_patterns(spec, c, fprime_at_1, Characteristic::F1, mu1, mu21, mu22)?
        && sign_patterns(spec, c_hat, fprime_at_1, Characteristic::F1Hat, mu1_hat, mu21_hat, mu22_hat)?;
    Ok(CharacteristicRoots {
        mu1,
        mu21,
        mu22,
        mu1_hat,
        mu21_hat,
        mu22_hat,
        analyticity_window: plain,
        hat_window: hat,
        max_residual,
        sign_patterns_hold,
    })
}

/// Checks, on [`ROOT_SAMPLES`] points per side, that `F1 < 0` on `(0, μ1)`
/// and `> 0` beyond, that `F2` is `(+, -, +)` around `μ21 < 0 < μ22`, and
/// that the curvature is nonnegative.
fn sign_patterns(
    spec: &KernelSpec,
    speed: f64,
    fprime_at_1: f64,
    first: Characteristic,
    mu1: f64,
    mu21: f64,
    mu22: f64,
) -> Result<bool> {
    let second = if first == Characteristic::F1 {
        Characteristic::F2
    } else {
        Characteristic::F2Hat
    };
    let window = characteristic_window(spec, first);
    let hi = search_end(window, true);
    let lo = search_end(window, false);
    let margin = 1e-9;
    for mu in search_points(hi, ROOT_SAMPLES) {
        let f1 = characteristic_eval(first, mu, spec, speed, fprime_at_1)?;
        if (mu < mu1 * (1.0 - margin) && f1 >= 0.0) || (mu > mu1 * (1.0 + margin) && f1 <= 0.0) {
            return Ok(false);
        }
        let f2 = f1 + fprime_at_1;
        if (mu < mu22 * (1.0 - margin) && f2 >= 0.0) || (mu > mu22 * (1.0 + margin) && f2 <= 0.0) {
            return Ok(false);
        }
        if characteristic_curvature(first, mu, spec)? < 0.0 {
            return Ok(false);
        }
    }
    for mu in search_points(lo, ROOT_SAMPLES) {
        let f2 = characteristic_eval(second, mu, spec, speed, fprime_at_1)?;
        if (mu > mu21 * (1.0 - margin) && f2 >= 0.0) || (mu < mu21 * (1.0 + margin) && f2 <= 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailFit {
    /// Slope of `ln |u - u(±∞)|` against `x`.
    pub rate: f64,
    pub r2: f64,
    /// `exp(intercept)`: the fitted prefactor.
    pub prefactor: f64,
    pub points: usize,
}

/// Log-linear fit of the distance to the far field on one side, using the
/// nodes where that distance lies inside `band`.
pub fn tail_rate_fit(profile: &GridFunction, side: Side, band: (f64, f64)) -> Result<TailFit> {
    let (target, keep): (f64, Box<dyn Fn(f64) -> bool>) = match side {
        Side::Left => (profile.farfield_left, Box::new(|x: f64| x < 0.0)),
        Side::Right => (profile.farfield_right, Box::new(|x: f64| x > 0.0)),
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &u) in profile.values.iter().enumerate() {
        let x = profile.x(i);
        let q = (u - target).abs();
        if keep(x) && q > band.0 && q < band.1 {
            xs.push(x);
            ys.push(q.ln());
        }
    }
    if xs.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} grid points with tail values in ({:e}, {:e}); need {MIN_TAIL_POINTS}",
            xs.len(),
            band.0,
            band.1
        )));
    }
    let fit = quad::linear_fit(&xs, &ys).ok_or_else(|| Error::InsufficientData("degenerate tail fit".into()))?;
    Ok(TailFit {
        rate: fit.slope,
        r2: fit.r2,
        prefactor: fit.intercept.exp(),
        points: xs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioBranch {
    Zero,
    Mu1,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatioReport {
    /// Mean of `|φ'/φ|` over the deep-tail band.
    pub limit_est: f64,
    pub branch: RatioBranch,
    pub mu1: f64,
    /// `2(c + m₁)/m₂`, the leading-order root for narrow kernels.
    pub small_support: Option<f64>,
    pub points: usize,
}

/// Limit of `φ'/φ` at the zero state (left for increasing waves, right for
/// decreasing ones), averaged over nodes where `φ` lies inside `band`.
pub fn ratio_diagnostic(
    wave: &WaveSolution,
    mu1: f64,
    band: (f64, f64),
    moments: Option<(f64, f64)>,
) -> Result<RatioReport> {
    let p = &wave.profile;
    let d = p.derivative();
    let mut ratios = Vec::new();
    for (i, &u) in p.values.iter().enumerate() {
        let x = p.x(i);
        let on_side = match wave.orientation {
            Orientation::Increasing => x < 0.0,
            Orientation::Decreasing => x > 0.0,
        };
        if on_side && u > band.0 && u < band.1 {
            ratios.push((d[i] / u).abs());
        }
    }
    if ratios.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} grid points in the zero-state tail band ({:e}, {:e})",
            ratios.len(),
            band.0,
            band.1
        )));
    }
    let limit_est = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let branch = if (limit_est - mu1).abs() <= 0.1 * mu1 {
        RatioBranch::Mu1
    } else if limit_est < 0.1 * mu1 {
        RatioBranch::Zero
    } else {
        RatioBranch::Indeterminate
    };
    let small_support = moments.map(|(m1, m2)| {
        let c = match wave.orientation {
            Orientation::Increasing => wave.speed,
            Orientation::Decreasing => -wave.speed,
        };
        2.0 * (c + m1) / m2
    });
    Ok(RatioReport {
        limit_est,
        branch,
        mu1,
        small_support,
        points: ratios.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waves::Method;

    const FP1: f64 = -2.0;

    #[test]
    fn values_at_origin() {
        let spec = KernelSpec::asymmetric_example();
        for c in [0.45, -0.3] {
            assert!(characteristic_eval(Characteristic::F1, 0.0, &spec, c, FP1).unwrap().abs() < 1e-12);
            let f2 = characteristic_eval(Characteristic::F2, 0.0, &spec, c, FP1).unwrap();
            assert!((f2 - FP1).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_at_origin_is_minus_m1_minus_c() {
        let spec = KernelSpec::asymmetric_example().shifted(0.3);
        let m1 = spec.moment(1, 1e-12).unwrap();
        let c = 0.2;
        let eps = 1e-5;
        let fd = (characteristic_eval(Characteristic::F1, eps, &spec, c, FP1).unwrap()
            - characteristic_eval(Characteristic::F1, -eps, &spec, c, FP1).unwrap())
            / (2.0 * eps);
        assert!((fd - (-m1 - c)).abs() < 1e-8, "{fd} vs {}", -m1 - c);
    }

    #[test]
    fn window_violation_is_divergence() {
        let spec = KernelSpec::asymmetric_example();
        assert!(matches!(
            characteristic_eval(Characteristic::F1, 2.5, &spec, 0.4, FP1),
            Err(Error::Divergence(_))
        ));
        let w = characteristic_window(&spec, Characteristic::F2Hat);
        assert_eq!((w.lo, w.hi), (-2.0, 1.0));
    }

    #[test]
    fn roots_and_sign_patterns() {
        let spec = KernelSpec::asymmetric_example();
        let r = find_roots(&spec, 0.45, -0.35, FP1, 1e-10).unwrap();
        assert!(r.mu1 > 0.0 && r.mu21 < 0.0 && r.mu22 > 0.0);
        assert!(r.mu1_hat > 0.0 && r.mu21_hat < 0.0 && r.mu22_hat > 0.0);
        assert!(r.max_residual <= 1e-10, "{}", r.max_residual);
        assert!(r.sign_patterns_hold);
        assert!(r.mu1 < r.mu22);
    }

    #[test]
    fn symmetric_kernel_reflection() {
        let spec = KernelSpec::gaussian(0.0, 1.0).unwrap();
        let c = 0.3;
        let r = find_roots(&spec, c, -c, FP1, 1e-12).unwrap();
        assert!((r.mu1 - r.mu1_hat).abs() < 1e-8);
        assert!((r.mu21 - r.mu21_hat).abs() < 1e-8);
    }

    #[test]
    fn missing_root_is_reported() {
        // A compact kernel has an unbounded window, which the search caps;
        // a huge speed keeps F1 negative up to the cap.
        let spec = KernelSpec::top_hat(-0.2, 0.2).unwrap();
        let err = find_roots(&spec, 1e5, -0.3, FP1, 1e-10).unwrap_err();
        assert!(matches!(err, Error::RootBeyondWindow { .. }));
    }

    #[test]
    fn exact_exponential_tail() {
        let mu = 0.37;
        let p = GridFunction::from_fn(-80.0, 0.0, 0.05, 0.0, 1.0, |x| 0.2 * (mu * x).exp());
        let fit = tail_rate_fit(&p, Side::Left, TAIL_BAND).unwrap();
        assert!((fit.rate - mu).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!((fit.prefactor - 0.2).abs() < 1e-8);
    }

    #[test]
    fn contaminated_tail() {
        let mu = 0.5;
        let p = GridFunction::from_fn(-60.0, 0.0, 0.05, 0.0, 1.0, |x| {
            0.1 * (mu * x).exp() + 0.05 * (2.0 * mu * x).exp()
        });
        let fit = tail_rate_fit(&p, Side::Left, TAIL_BAND).unwrap();
        assert!((fit.rate - mu).abs() < 0.01 * mu, "{}", fit.rate);
    }

    #[test]
    fn narrow_band_is_insufficient() {
        let p = GridFunction::from_fn(-1.0, 1.0, 0.1, 0.0, 1.0, |x| 0.5 * (1.0 + x.tanh()));
        assert!(matches!(tail_rate_fit(&p, Side::Left, TAIL_BAND), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn synthetic_ratio_branches() {
        let mu = 0.8;
        let wave = |rate: f64| WaveSolution {
            profile: GridFunction::from_fn(-60.0, 0.0, 0.05, 0.0, 1.0, move |x| 0.25 * (rate * x).exp()),
            speed: 0.4,
            orientation: Orientation::Increasing,
            method: Method::Newton,
            residual_norm: 0.0,
        };
        let r = ratio_diagnostic(&wave(mu), mu, TAIL_BAND, Some((0.0, 1.0))).unwrap();
        assert_eq!(r.branch, RatioBranch::Mu1);
        assert!((r.limit_est - mu).abs() < 1e-6);
        assert!((r.small_support.unwrap() - 0.8).abs() < 1e-12);
        let r = ratio_diagnostic(&wave(0.5), mu, TAIL_BAND, None).unwrap();
        assert_eq!(r.branch, RatioBranch::Indeterminate);
    }
}
