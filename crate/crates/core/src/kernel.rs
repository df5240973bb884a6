//! Dispersal kernels: closed-form piecewise densities, their moments and
//! moment generating function, reflection, validation, and the discrete
//! weights used by the convolution on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Tail mass left outside the truncation radius of a sampled kernel.
pub const TRUNCATION_TAIL_MASS: f64 = 1e-12;

/// Relative weight below which sampled kernel entries are dropped.
pub const RELATIVE_WEIGHT_FLOOR: f64 = 1e-14;

/// Number of points scanned for (J2) witnesses.
pub const WITNESS_SCAN_POINTS: usize = 10_000;

/// Closed form of one kernel piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum PieceForm {
    /// `a * exp(b * (x - x0))`.
    Exponential { a: f64, b: f64, x0: f64 },
    /// `sum_k coeffs[k] * x^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `weight` times the normal density with the given mean and deviation.
    Gaussian { weight: f64, mean: f64, sd: f64 },
    /// Constant density.
    TopHat { height: f64 },
}

/// A closed-form density on `[lo, hi]`; infinite bounds are written as
/// `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(with = "extended_real::lower")]
    pub lo: f64,
    #[serde(with = "extended_real::upper")]
    pub hi: f64,
    #[serde(flatten)]
    pub form: PieceForm,
}

impl Piece {
    pub fn new(lo: f64, hi: f64, form: PieceForm) -> Self {
        Piece { lo, hi, form }
    }

    /// Evaluates the piece's closed form (ignores the interval).
    pub fn value_at(&self, x: f64) -> f64 {
        match &self.form {
            PieceForm::Exponential { a, b, x0 } => a * (b * (x - x0)).exp(),
            PieceForm::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            PieceForm::Gaussian { weight, mean, sd } => {
                let z = (x - mean) / sd;
                weight * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            PieceForm::TopHat { height } => *height,
        }
    }

    fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn reflected(&self) -> Piece {
        let form = match &self.form {
            PieceForm::Exponential { a, b, x0 } => PieceForm::Exponential {
                a: *a,
                b: -b,
                x0: -x0,
            },
            PieceForm::Polynomial { coeffs } => PieceForm::Polynomial {
                coeffs: coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| if k % 2 == 1 { -c } else { *c })
                    .collect(),
            },
            PieceForm::Gaussian { weight, mean, sd } => PieceForm::Gaussian {
                weight: *weight,
                mean: -mean,
                sd: *sd,
            },
            PieceForm::TopHat { height } => PieceForm::TopHat { height: *height },
        };
        Piece::new(-self.hi, -self.lo, form)
    }

    fn shifted(&self, s: f64) -> Piece {
        let form = match &self.form {
            PieceForm::Exponential { a, b, x0 } => PieceForm::Exponential {
                a: *a,
                b: *b,
                x0: x0 + s,
            },
            PieceForm::Polynomial { coeffs } => {
                // p(x - s) expanded by the binomial theorem.
                let n = coeffs.len();
                let mut out = vec![0.0; n];
                for (k, c) in coeffs.iter().enumerate() {
                    let mut binom = 1.0;
                    for j in 0..=k {
                        out[j] += c * binom * (-s).powi((k - j) as i32);
                        binom = binom * (k - j) as f64 / (j + 1) as f64;
                    }
                }
                PieceForm::Polynomial { coeffs: out }
            }
            PieceForm::Gaussian { weight, mean, sd } => PieceForm::Gaussian {
                weight: *weight,
                mean: mean + s,
                sd: *sd,
            },
            PieceForm::TopHat { height } => PieceForm::TopHat { height: *height },
        };
        Piece::new(self.lo + s, self.hi + s, form)
    }

    /// `∫ piece(y) y^k e^{-mu y} dy` over `[lo, hi] ∩ [self.lo, self.hi]`.
    fn integrate_weighted(&self, lo: f64, hi: f64, k: u32, mu: f64, tol: f64) -> Result<f64> {
        let lo = lo.max(self.lo);
        let hi = hi.min(self.hi);
        if lo >= hi {
            return Ok(0.0);
        }
        let integrand = |y: f64| self.value_at(y) * y.powi(k as i32) * (-mu * y).exp();
        match &self.form {
            PieceForm::Exponential { a, b, x0 } => {
                let beta = b - mu;
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => Ok(quad::integrate(integrand, lo, hi, tol).value),
                    (true, false) => {
                        if beta >= 0.0 {
                            return Err(Error::Divergence(format!(
                                "exponential tail with net rate {beta} on [{lo}, inf)"
                            )));
                        }
                        Ok(-exp_poly_antiderivative(*a, *b, *x0, mu, k, lo))
                    }
                    (false, true) => {
                        if beta <= 0.0 {
                            return Err(Error::Divergence(format!(
                                "exponential tail with net rate {beta} on (-inf, {hi}]"
                            )));
                        }
                        Ok(exp_poly_antiderivative(*a, *b, *x0, mu, k, hi))
                    }
                    (false, false) => Err(Error::Divergence(
                        "exponential piece on the whole line".into(),
                    )),
                }
            }
            PieceForm::Gaussian { weight, mean, sd } => {
                // Exponential tilting moves the bulk to mean - mu sd^2.
                let center = mean - mu * sd * sd;
                if lo == f64::NEG_INFINITY && hi == f64::INFINITY && k <= 2 {
                    let scale = weight * (-mu * mean + 0.5 * mu * mu * sd * sd).exp();
                    let m = match k {
                        0 => 1.0,
                        1 => center,
                        _ => center * center + sd * sd,
                    };
                    return Ok(scale * m);
                }
                let a = lo.max(center - 40.0 * sd);
                let b = hi.min(center + 40.0 * sd);
                if a >= b {
                    return Ok(0.0);
                }
                Ok(quad::integrate(integrand, a, b, tol).value)
            }
            PieceForm::Polynomial { .. } | PieceForm::TopHat { .. } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(Error::Divergence(
                        "polynomial or constant piece on an unbounded interval".into(),
                    ));
                }
                Ok(quad::integrate(integrand, lo, hi, tol).value)
            }
        }
    }
}

/// Antiderivative of `a e^{b(x-x0)} x^k e^{-mu x}` at `x`, normalized to vanish
/// at the infinite end where the integrand decays.
fn exp_poly_antiderivative(a: f64, b: f64, x0: f64, mu: f64, k: u32, x: f64) -> f64 {
    let beta = b - mu;
    let expo = a * (b * (x - x0) - mu * x).exp();
    let mut sum = 0.0;
    let mut falling = 1.0; // k! / (k - j)!
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * falling * x.powi((k - j) as i32) / beta.powi(j as i32 + 1);
        falling *= (k - j) as f64;
    }
    expo * sum
}

/// Open interval of reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "extended_real::lower")]
    pub lo: f64,
    #[serde(with = "extended_real::upper")]
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
}

/// Analytic description of a dispersal density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub pieces: Vec<Piece>,
    /// `λ` with `∫ J(x) e^{λ|x|} dx < ∞`.
    pub lambda_window: Interval,
    /// Declared support bounds (possibly infinite).
    pub support_hint: Interval,
}

impl KernelSpec {
    /// Validates the pieces and derives the exponential windows.
    pub fn new(mut pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Validity("kernel has no pieces".into()));
        }
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for p in &pieces {
            if !(p.lo < p.hi) {
                return Err(Error::Validity(format!("empty piece [{}, {}]", p.lo, p.hi)));
            }
            match &p.form {
                PieceForm::Exponential { b, .. } => {
                    if p.hi == f64::INFINITY && *b >= 0.0 {
                        return Err(Error::Divergence(format!(
                            "right tail with rate {b} is not integrable"
                        )));
                    }
                    if p.lo == f64::NEG_INFINITY && *b <= 0.0 {
                        return Err(Error::Divergence(format!(
                            "left tail with rate {b} is not integrable"
                        )));
                    }
                    if !p.lo.is_finite() && !p.hi.is_finite() {
                        return Err(Error::Divergence(
                            "exponential piece on the whole line".into(),
                        ));
                    }
                }
                PieceForm::Polynomial { .. } | PieceForm::TopHat { .. } => {
                    if !(p.lo.is_finite() && p.hi.is_finite()) {
                        return Err(Error::Divergence(
                            "polynomial or constant piece must have finite support".into(),
                        ));
                    }
                }
                PieceForm::Gaussian { sd, .. } => {
                    if !(*sd > 0.0) {
                        return Err(Error::Validity("gaussian deviation must be positive".into()));
                    }
                }
            }
        }
        for w in pieces.windows(2) {
            if w[0].hi > w[1].lo {
                return Err(Error::Validity(format!(
                    "pieces overlap: [{}, {}] and [{}, {}]",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        let (left_rate, right_rate) = tail_rates(&pieces);
        let support_hint = Interval {
            lo: pieces.first().map(|p| p.lo).unwrap(),
            hi: pieces.iter().map(|p| p.hi).fold(f64::NEG_INFINITY, f64::max),
        };
        let spec = KernelSpec {
            pieces,
            lambda_window: Interval {
                lo: 0.0,
                hi: left_rate.min(right_rate),
            },
            support_hint,
        };
        spec.check_nonnegative()?;
        Ok(spec)
    }

    /// Explicit asymmetric kernel with zero first moment: exponential tails
    /// `2/15 e^{-(x-2)}` on `[2, ∞)`, `8/15 e^{2(x+1)}` on `(-∞, -1]` and the
    /// quadratic `4/45 x² - 2/9 x + 2/9` between.
    pub fn asymmetric_example() -> Self {
        KernelSpec::new(vec![
            Piece::new(
                f64::NEG_INFINITY,
                -1.0,
                PieceForm::Exponential {
                    a: 8.0 / 15.0,
                    b: 2.0,
                    x0: -1.0,
                },
            ),
            Piece::new(
                -1.0,
                2.0,
                PieceForm::Polynomial {
                    coeffs: vec![2.0 / 9.0, -2.0 / 9.0, 4.0 / 45.0],
                },
            ),
            Piece::new(
                2.0,
                f64::INFINITY,
                PieceForm::Exponential {
                    a: 2.0 / 15.0,
                    b: -1.0,
                    x0: 2.0,
                },
            ),
        ])
        .expect("built-in kernel is valid")
    }

    /// Normal density with the given mean and standard deviation.
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        KernelSpec::new(vec![Piece::new(
            f64::NEG_INFINITY,
            f64::INFINITY,
            PieceForm::Gaussian {
                weight: 1.0,
                mean,
                sd,
            },
        )])
    }

    /// Uniform density on `[lo, hi]`.
    pub fn top_hat(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Validity(format!("top-hat needs lo < hi, got [{lo}, {hi}]")));
        }
        KernelSpec::new(vec![Piece::new(
            lo,
            hi,
            PieceForm::TopHat {
                height: 1.0 / (hi - lo),
            },
        )])
    }

    /// Laplace-type kernel `(1/2s) e^{-|x - m|/s}`.
    pub fn laplace(mean: f64, scale: f64) -> Result<Self> {
        let a = 0.5 / scale;
        KernelSpec::new(vec![
            Piece::new(
                f64::NEG_INFINITY,
                mean,
                PieceForm::Exponential {
                    a,
                    b: 1.0 / scale,
                    x0: mean,
                },
            ),
            Piece::new(
                mean,
                f64::INFINITY,
                PieceForm::Exponential {
                    a,
                    b: -1.0 / scale,
                    x0: mean,
                },
            ),
        ])
    }

    /// Density value `J(x)`.
    pub fn density(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .find(|p| p.contains(x))
            .map_or(0.0, |p| p.value_at(x))
    }

    /// Interior breakpoints between pieces.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.lo, p.hi])
            .filter(|x| x.is_finite())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Open interval of `mu` for which `∫ J(y) e^{-mu y} dy` is finite.
    pub fn mgf_window(&self) -> Interval {
        let (left, right) = tail_rates(&self.pieces);
        Interval { lo: -right, hi: left }
    }

    /// `∫_{lo}^{hi} J(y) y^k e^{-mu y} dy`.
    pub fn integrate_weighted(&self, lo: f64, hi: f64, k: u32, mu: f64, tol: f64) -> Result<f64> {
        let share = tol / self.pieces.len() as f64;
        let mut total = 0.0;
        for p in &self.pieces {
            total += p.integrate_weighted(lo, hi, k, mu, share)?;
        }
        Ok(total)
    }

    /// `∫_{lo}^{hi} J(y) g(y) dy` for a smooth weight `g`, split at the
    /// kernel's breakpoints. Bounds must be finite.
    pub fn integrate_with<G: Fn(f64) -> f64>(&self, lo: f64, hi: f64, g: G, tol: f64) -> f64 {
        let mut cuts = vec![lo];
        cuts.extend(self.breakpoints().into_iter().filter(|&b| lo < b && b < hi));
        cuts.push(hi);
        let share = tol / cuts.len() as f64;
        cuts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                match self.pieces.iter().find(|p| p.contains(mid)) {
                    Some(p) => quad::integrate(|y| p.value_at(y) * g(y), w[0], w[1], share).value,
                    None => 0.0,
                }
            })
            .sum()
    }

    /// Total mass, via adaptive quadrature on bounded pieces and exact
    /// antiderivatives on exponential tails.
    pub fn mass(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::Validity("tolerance must be positive".into()));
        }
        self.check_nonnegative()?;
        self.mgf(0.0, tol)
    }

    /// `∫ J(y) y^k dy` for `k ∈ {1, 2}`.
    pub fn moment(&self, k: u32, tol: f64) -> Result<f64> {
        if !(1..=2).contains(&k) {
            return Err(Error::Validity(format!("moment order {k} not supported")));
        }
        self.integrate_weighted(f64::NEG_INFINITY, f64::INFINITY, k, 0.0, tol)
    }

    /// Moment generating function `μ ↦ ∫ J(y) e^{-μ y} dy`.
    pub fn mgf(&self, mu: f64, tol: f64) -> Result<f64> {
        let w = self.mgf_window();
        if !w.contains(mu) {
            return Err(Error::Divergence(format!(
                "mu = {mu} outside the analyticity window ({}, {})",
                w.lo, w.hi
            )));
        }
        self.integrate_weighted(f64::NEG_INFINITY, f64::INFINITY, 0, mu, tol)
    }

    /// `k`-th derivative of the moment generating function,
    /// `(-1)^k ∫ J(y) y^k e^{-μ y} dy`.
    pub fn mgf_derivative(&self, mu: f64, k: u32, tol: f64) -> Result<f64> {
        let w = self.mgf_window();
        if !w.contains(mu) {
            return Err(Error::Divergence(format!(
                "mu = {mu} outside the analyticity window ({}, {})",
                w.lo, w.hi
            )));
        }
        let v = self.integrate_weighted(f64::NEG_INFINITY, f64::INFINITY, k, mu, tol)?;
        Ok(if k % 2 == 0 { v } else { -v })
    }

    /// The kernel of `y ↦ J(-y)`.
    pub fn reflect(&self) -> KernelSpec {
        let mut pieces: Vec<Piece> = self.pieces.iter().map(Piece::reflected).collect();
        pieces.reverse();
        KernelSpec::new(pieces).expect("reflection preserves validity")
    }

    /// The kernel of `y ↦ J(y - s)`; adds `s` to the first moment.
    pub fn shifted(&self, s: f64) -> KernelSpec {
        KernelSpec::new(self.pieces.iter().map(|p| p.shifted(s)).collect())
            .expect("translation preserves validity")
    }

    /// Mass strictly to the right of `r`.
    pub fn right_tail_mass(&self, r: f64) -> f64 {
        self.integrate_weighted(r, f64::INFINITY, 0, 0.0, 1e-15)
            .unwrap_or(f64::INFINITY)
    }

    /// Mass strictly to the left of `-r`.
    pub fn left_tail_mass(&self, r: f64) -> f64 {
        self.integrate_weighted(f64::NEG_INFINITY, -r, 0, 0.0, 1e-15)
            .unwrap_or(f64::INFINITY)
    }

    /// Smallest radii `(left, right)` beyond which the tail mass is below
    /// `mass`.
    pub fn truncation_radii(&self, mass: f64) -> (f64, f64) {
        let right = if self.support_hint.hi.is_finite() {
            self.support_hint.hi.max(0.0)
        } else {
            smallest_radius(|r| self.right_tail_mass(r), mass)
        };
        let left = if self.support_hint.lo.is_finite() {
            (-self.support_hint.lo).max(0.0)
        } else {
            smallest_radius(|r| self.left_tail_mass(r), mass)
        };
        (left, right)
    }

    /// Root-mean-square jump length `sqrt(∫ J(y) y² dy)`; the "kernel radius"
    /// used when sizing windows and collars.
    pub fn dispersal_radius(&self) -> f64 {
        self.moment(2, 1e-12).map(f64::sqrt).unwrap_or(f64::INFINITY)
    }

    /// Bounds used when a finite scan of the support is needed.
    pub fn scan_bounds(&self) -> (f64, f64) {
        let (l, r) = self.truncation_radii(TRUNCATION_TAIL_MASS);
        let lo = if self.support_hint.lo.is_finite() {
            self.support_hint.lo
        } else {
            -l
        };
        let hi = if self.support_hint.hi.is_finite() {
            self.support_hint.hi
        } else {
            r
        };
        (lo, hi)
    }

    fn check_nonnegative(&self) -> Result<()> {
        for p in &self.pieces {
            let (a, b) = match (p.lo.is_finite(), p.hi.is_finite()) {
                (true, true) => (p.lo, p.hi),
                (true, false) => (p.lo, p.lo + 50.0),
                (false, true) => (p.hi - 50.0, p.hi),
                (false, false) => (-50.0, 50.0),
            };
            for i in 0..=256 {
                let x = a + (b - a) * i as f64 / 256.0;
                let v = p.value_at(x);
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Validity(format!("density {v} at x = {x}")));
                }
            }
        }
        Ok(())
    }

    /// `∫ |J(x + η) - J(x)| dx`.
    pub fn shift_variation(&self, eta: f64, tol: f64) -> f64 {
        let (lo, hi) = self.scan_bounds();
        let mut cuts: Vec<f64> = vec![lo - eta.abs(), hi + eta.abs()];
        for b in self.breakpoints() {
            cuts.push(b);
            cuts.push(b - eta);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let share = tol / cuts.len() as f64;
        cuts.windows(2)
            .map(|w| {
                quad::integrate(
                    |x| (self.density(x + eta) - self.density(x)).abs(),
                    w[0],
                    w[1],
                    share,
                )
                .value
            })
            .sum()
    }

    /// Validates (J1)/(J2) and collects the kernel diagnostics.
    pub fn check(&self, tol: f64) -> Result<KernelReport> {
        let mass = self.mass(tol)?;
        if (mass - 1.0).abs() > tol {
            return Err(Error::Validity(format!("kernel mass {mass} deviates from 1")));
        }
        let m1 = self.moment(1, tol)?;
        let m2 = self.moment(2, tol)?;
        let (a, b) = self.j2_witnesses().ok_or_else(|| {
            Error::Validity("no positive density on both sides of the origin".into())
        })?;
        let lipschitz_k1 = self.lipschitz_estimate(tol);
        Ok(KernelReport {
            mass,
            m1,
            m2,
            lambda_window: self.lambda_window,
            j2_witnesses: (a, b),
            lipschitz_k1,
        })
    }

    /// Scans the support for points `a ≤ 0 ≤ b`, `a ≠ b`, with positive
    /// density; returns the densest point on each side.
    pub fn j2_witnesses(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.scan_bounds();
        let lo = lo.min(0.0);
        let hi = hi.max(0.0);
        let mut left: Option<(f64, f64)> = None;
        let mut right: Option<(f64, f64)> = None;
        for i in 0..WITNESS_SCAN_POINTS {
            let x = lo + (hi - lo) * i as f64 / (WITNESS_SCAN_POINTS - 1) as f64;
            let v = self.density(x);
            if v <= 0.0 {
                continue;
            }
            if x <= 0.0 && left.map_or(true, |(_, best)| v > best) {
                left = Some((x, v));
            }
            if x >= 0.0 && right.map_or(true, |(_, best)| v > best) {
                right = Some((x, v));
            }
        }
        let (a, _) = left?;
        let (mut b, _) = right?;
        if a == b {
            // Only the origin itself carries mass on one side; look for any
            // other positive point to the right.
            b = (0..WITNESS_SCAN_POINTS)
                .map(|i| lo + (hi - lo) * i as f64 / (WITNESS_SCAN_POINTS - 1) as f64)
                .find(|&x| x > 0.0 && self.density(x) > 0.0)?;
        }
        Some((a, b))
    }

    /// Largest difference quotient `∫|J(·+η) - J| / η` over a halving
    /// η-grid `1, 1/2, …, 2^{-levels+1}`.
    pub fn lipschitz_estimate_levels(&self, levels: u32, tol: f64) -> f64 {
        (0..levels)
            .map(|i| {
                let eta = 0.5f64.powi(i as i32);
                self.shift_variation(eta, tol * eta) / eta
            })
            .fold(0.0, f64::max)
    }

    fn lipschitz_estimate(&self, tol: f64) -> f64 {
        self.lipschitz_estimate_levels(10, tol.max(1e-12))
    }

    /// Discrete convolution weights on spacing `h`.
    pub fn sample(&self, h: f64) -> Result<SampledKernel> {
        SampledKernel::new(self, h)
    }
}

/// Rates `(left, right)` of the slowest exponential tails; infinite when a
/// side is compactly supported or Gaussian.
fn tail_rates(pieces: &[Piece]) -> (f64, f64) {
    let mut left = f64::INFINITY;
    let mut right = f64::INFINITY;
    for p in pieces {
        if let PieceForm::Exponential { b, .. } = p.form {
            if p.hi == f64::INFINITY {
                right = right.min(-b);
            }
            if p.lo == f64::NEG_INFINITY {
                left = left.min(b);
            }
        }
    }
    (left, right)
}

fn smallest_radius<F: Fn(f64) -> f64>(tail: F, mass: f64) -> f64 {
    if tail(0.0) < mass {
        return 0.0;
    }
    let mut hi = 1.0;
    while tail(hi) >= mass {
        hi *= 2.0;
        if hi > 1e6 {
            return hi;
        }
    }
    let lo = hi / 2.0;
    quad::bisect(|r| tail(r) - mass, lo.min(hi), hi, 1e-9)
}

/// Diagnostics returned by [`KernelSpec::check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub mass: f64,
    pub m1: f64,
    pub m2: f64,
    pub lambda_window: Interval,
    pub j2_witnesses: (f64, f64),
    pub lipschitz_k1: f64,
}

/// How the continuous kernel is turned into grid weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Product integration against piecewise-quadratic interpolation of the
    /// convolved function on two-cell panels.
    Quadratic,
    /// Product integration against piecewise-linear (hat) interpolation.
    Linear,
}

/// Kernel weights `w_j` on offsets `y_j = j h`, `j = j_min ..= j_max`, with
/// `h Σ`-free normalization `Σ w_j = 1`, so that
/// `(J*u)(x_i) ≈ Σ_j w_j u(x_i - y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledKernel {
    pub h: f64,
    pub j_min: i64,
    pub weights: Vec<f64>,
    /// Truncation radii `(left, right)` of the continuous kernel.
    pub radii: (f64, f64),
    pub rule: WeightRule,
}

impl SampledKernel {
    pub fn new(spec: &KernelSpec, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Grid(format!("spacing must be positive, got {h}")));
        }
        let radii = spec.truncation_radii(TRUNCATION_TAIL_MASS);
        // Offsets rounded outwards to even indices so quadratic panels tile.
        let mut j_lo = -((radii.0 / h - 1e-9).ceil() as i64);
        let mut j_hi = (radii.1 / h - 1e-9).ceil() as i64;
        if j_lo % 2 != 0 {
            j_lo -= 1;
        }
        if j_hi % 2 != 0 {
            j_hi += 1;
        }
        if j_lo == j_hi {
            j_lo -= 2;
            j_hi += 2;
        }
        let lo = j_lo as f64 * h;
        let hi = j_hi as f64 * h;
        let mut rule = WeightRule::Quadratic;
        let mut weights = quadratic_weights(spec, h, j_lo, j_hi, lo, hi);
        if weights.iter().any(|&w| w < 0.0) {
            rule = WeightRule::Linear;
            weights = linear_weights(spec, h, j_lo, j_hi, lo, hi);
        }
        // Drop negligible end weights.
        let wmax = weights.iter().cloned().fold(0.0, f64::max);
        let floor = RELATIVE_WEIGHT_FLOOR * wmax;
        let first = weights.iter().position(|&w| w >= floor).unwrap_or(0);
        let last = weights.iter().rposition(|&w| w >= floor).unwrap_or(weights.len() - 1);
        let mut weights = weights[first..=last].to_vec();
        let j_min = j_lo + first as i64;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Validity("sampled kernel has no mass".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(SampledKernel {
            h,
            j_min,
            weights,
            radii,
            rule,
        })
    }

    pub fn j_max(&self) -> i64 {
        self.j_min + self.weights.len() as i64 - 1
    }

    pub fn offsets(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| (self.j_min + k as i64, w))
    }

    /// Discrete moment `Σ w_j (j h)^k`.
    pub fn moment(&self, k: i32) -> f64 {
        self.offsets()
            .map(|(j, w)| w * (j as f64 * self.h).powi(k))
            .sum()
    }

    /// Discrete moment generating function `Σ w_j e^{-μ j h}`.
    pub fn mgf(&self, mu: f64) -> f64 {
        self.offsets()
            .map(|(j, w)| w * (-mu * j as f64 * self.h).exp())
            .sum()
    }
}

fn quadratic_weights(spec: &KernelSpec, h: f64, j_lo: i64, j_hi: i64, lo: f64, _hi: f64) -> Vec<f64> {
    let n = (j_hi - j_lo) as usize + 1;
    let mut w = vec![0.0; n];
    let panels = (n - 1) / 2;
    for p in 0..panels {
        let a = lo + 2.0 * p as f64 * h;
        let m = a + h;
        let b = a + 2.0 * h;
        let tol = 1e-16;
        let l0 = spec.integrate_with(a, b, |y| (y - m) * (y - b) / (2.0 * h * h), tol);
        let l1 = spec.integrate_with(a, b, |y| -(y - a) * (y - b) / (h * h), tol);
        let l2 = spec.integrate_with(a, b, |y| (y - a) * (y - m) / (2.0 * h * h), tol);
        w[2 * p] += l0;
        w[2 * p + 1] += l1;
        w[2 * p + 2] += l2;
    }
    w
}

fn linear_weights(spec: &KernelSpec, h: f64, j_lo: i64, j_hi: i64, lo: f64, _hi: f64) -> Vec<f64> {
    let n = (j_hi - j_lo) as usize + 1;
    let mut w = vec![0.0; n];
    for c in 0..n - 1 {
        let a = lo + c as f64 * h;
        let b = a + h;
        let tol = 1e-16;
        w[c] += spec.integrate_with(a, b, |y| (b - y) / h, tol);
        w[c + 1] += spec.integrate_with(a, b, |y| (y - a) / h, tol);
    }
    w
}

/// Kernel configuration as read from JSON.
///
/// ```json
/// {"kind": "preset", "name": "paper-example-2.1", "shift": 0.5}
/// {"kind": "gaussian", "sd": 1.0}
/// {"kind": "top-hat", "lo": -0.2, "hi": 0.2}
/// {"kind": "piecewise", "pieces": [{"lo": null, "hi": 0, "form": "exponential", "a": 0.5, "b": 1, "x0": 0}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub source: KernelSource,
    /// Translation `J(y) ↦ J(y - shift)` applied after construction.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSource {
    Preset { name: String },
    Gaussian {
        #[serde(default)]
        mean: f64,
        sd: f64,
    },
    TopHat { lo: f64, hi: f64 },
    Laplace {
        #[serde(default)]
        mean: f64,
        scale: f64,
    },
    Piecewise { pieces: Vec<Piece> },
}

/// Name of the built-in asymmetric preset.
pub const EXAMPLE_PRESET: &str = "paper-example-2.1";

impl KernelConfig {
    pub fn preset(name: &str) -> Self {
        KernelConfig {
            source: KernelSource::Preset { name: name.into() },
            shift: 0.0,
        }
    }

    pub fn build(&self) -> Result<KernelSpec> {
        let base = match &self.source {
            KernelSource::Preset { name } => match name.as_str() {
                EXAMPLE_PRESET => KernelSpec::asymmetric_example(),
                "gaussian" => KernelSpec::gaussian(0.0, 1.0)?,
                "laplace" => KernelSpec::laplace(0.0, 1.0)?,
                other => return Err(Error::Config(format!("unknown kernel preset '{other}'"))),
            },
            KernelSource::Gaussian { mean, sd } => KernelSpec::gaussian(*mean, *sd)?,
            KernelSource::TopHat { lo, hi } => KernelSpec::top_hat(*lo, *hi)?,
            KernelSource::Laplace { mean, scale } => KernelSpec::laplace(*mean, *scale)?,
            KernelSource::Piecewise { pieces } => KernelSpec::new(pieces.clone())?,
        };
        Ok(if self.shift != 0.0 {
            base.shifted(self.shift)
        } else {
            base
        })
    }
}

/// Serde helpers writing infinite bounds as `null`.
mod extended_real {
    macro_rules! side {
        ($name:ident, $inf:expr) => {
            pub mod $name {
                use serde::{Deserialize, Deserializer, Serializer};

                pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
                    if x.is_finite() {
                        s.serialize_f64(*x)
                    } else {
                        s.serialize_none()
                    }
                }

                pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
                    Ok(Option::<f64>::deserialize(d)?.unwrap_or($inf))
                }
            }
        };
    }
    side!(lower, f64::NEG_INFINITY);
    side!(upper, f64::INFINITY);
}
