//! Profiles on a truncated uniform grid and the nonlocal operator
//! `J*u - u + f(u)`.
//!
//! Outside the window a profile is continued by its declared far-field
//! constants, never periodically: the fronts studied here connect two
//! different states, and a periodic wrap would glue a spurious second front
//! onto every profile.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SampledKernel;
use crate::reaction::IgnitionNonlinearity;

/// Uniform-grid samples `u(x0 + i h)` with constant far fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub x0: f64,
    pub h: f64,
    pub values: Vec<f64>,
    pub farfield_left: f64,
    pub farfield_right: f64,
}

/// Uniform grid covering `[lo, hi]` with `lo` a node; `hi` is rounded to the
/// nearest node.
/// Half of the antisymmetric eighth-order stencil of `d/dx` at unit spacing:
/// `u'(x) ≈ Σ w (u(x + o) - u(x - o))`.
pub const DERIVATIVE_STENCIL: [(i64, f64); 4] = [
    (1, 4.0 / 5.0),
    (2, -1.0 / 5.0),
    (3, 4.0 / 105.0),
    (4, -1.0 / 280.0),
];

pub fn grid_points(lo: f64, hi: f64, h: f64) -> usize {
    ((hi - lo) / h).round() as usize + 1
}

impl GridFunction {
    pub fn new(x0: f64, h: f64, values: Vec<f64>, farfield_left: f64, farfield_right: f64) -> Self {
        GridFunction {
            x0,
            h,
            values,
            farfield_left,
            farfield_right,
        }
    }

    /// Samples `g` on the grid `[lo, hi]` with spacing `h`.
    pub fn from_fn<G: Fn(f64) -> f64>(lo: f64, hi: f64, h: f64, fl: f64, fr: f64, g: G) -> Self {
        let n = grid_points(lo, hi, h);
        let values = (0..n).map(|i| g(lo + i as f64 * h)).collect();
        GridFunction::new(lo, h, values, fl, fr)
    }

    pub fn constant(lo: f64, hi: f64, h: f64, c: f64) -> Self {
        GridFunction::from_fn(lo, hi, h, c, c, |_| c)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn x_end(&self) -> f64 {
        self.x(self.len() - 1)
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.x(i))
    }

    /// Value at integer index, continued by the far fields.
    #[inline]
    pub fn at(&self, i: i64) -> f64 {
        if i < 0 {
            self.farfield_left
        } else if i as usize >= self.values.len() {
            self.farfield_right
        } else {
            self.values[i as usize]
        }
    }

    /// Index of the node nearest to `x`, if it lies in the window.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = ((x - self.x0) / self.h).round();
        if r < 0.0 || r as usize >= self.len() {
            None
        } else {
            Some(r as usize)
        }
    }

    /// Six-point Lagrange interpolation, continued by the far fields.
    pub fn interpolate(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.h;
        let n = self.len() as f64;
        if s < -3.0 {
            return self.farfield_left;
        }
        if s > n + 2.0 {
            return self.farfield_right;
        }
        let i = s.floor();
        let t = s - i;
        let i = i as i64;
        if t == 0.0 {
            return self.at(i);
        }
        // Nodes i-2 ..= i+3 at offsets -2..=3 relative to t.
        let mut acc = 0.0;
        for a in -2i64..=3 {
            let mut l = 1.0;
            for b in -2i64..=3 {
                if a != b {
                    l *= (t - b as f64) / (a - b) as f64;
                }
            }
            acc += l * self.at(i + a);
        }
        acc
    }

    /// Resamples `x ↦ u(x + d)` on the same grid; an integer number of cells
    /// is an exact index shift.
    pub fn advanced(&self, d: f64) -> GridFunction {
        let cells = d / self.h;
        let m = cells.round();
        let values = if (cells - m).abs() < 1e-12 {
            let m = m as i64;
            (0..self.len() as i64).map(|i| self.at(i + m)).collect()
        } else {
            self.xs().map(|x| self.interpolate(x + d)).collect()
        };
        GridFunction::new(self.x0, self.h, values, self.farfield_left, self.farfield_right)
    }

    /// Translates the profile to the right by `d`: `v(x) = u(x - d)`.
    pub fn translated(&self, d: f64) -> GridFunction {
        self.advanced(-d)
    }

    /// `v(x) = u(-x)` on the mirrored grid.
    pub fn mirrored(&self) -> GridFunction {
        let mut values = self.values.clone();
        values.reverse();
        GridFunction::new(-self.x_end(), self.h, values, self.farfield_right, self.farfield_left)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, g: F) -> GridFunction {
        GridFunction::new(
            self.x0,
            self.h,
            self.values.iter().map(|&v| g(v)).collect(),
            g(self.farfield_left),
            g(self.farfield_right),
        )
    }

    /// Pointwise `a u + b v` on identical grids.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        self.same_grid(other)?;
        Ok(GridFunction::new(
            self.x0,
            self.h,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(u, v)| a * u + b * v)
                .collect(),
            a * self.farfield_left + b * other.farfield_left,
            a * self.farfield_right + b * other.farfield_right,
        ))
    }

    pub fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.len() != other.len()
            || (self.h - other.h).abs() > 1e-12 * self.h
            || (self.x0 - other.x0).abs() > 1e-9 * self.h
        {
            return Err(Error::Grid(format!(
                "grids differ: ({}, {}, {}) vs ({}, {}, {})",
                self.x0,
                self.h,
                self.len(),
                other.x0,
                other.h,
                other.len()
            )));
        }
        Ok(())
    }

    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Eighth-order centered first derivative, with far-field ghost nodes.
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.len() as i64;
        (0..n)
            .map(|i| {
                DERIVATIVE_STENCIL
                    .iter()
                    .map(|&(o, w)| w * (self.at(i + o) - self.at(i - o)))
                    .sum::<f64>()
                    / self.h
            })
            .collect()
    }

    /// Composite trapezoid rule over the window.
    pub fn trapezoid(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.h * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Writes `x,u` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("x,u\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(s, "{},{}", self.x(i), v).expect("string write");
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Binary checkpoint: little-endian `x0: f64, h: f64, n: u64,
    /// farfield_left: f64, farfield_right: f64`, then `n` values as `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.x0.to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.farfield_left.to_le_bytes())?;
        w.write_all(&self.farfield_right.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<GridFunction> {
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let x0 = f64::from_le_bytes(next(&mut r)?);
        let h = f64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let fl = f64::from_le_bytes(next(&mut r)?);
        let fr = f64::from_le_bytes(next(&mut r)?);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(GridFunction::new(x0, h, values, fl, fr))
    }
}

/// Which summation route a [`Convolver`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvolutionMethod {
    /// `Σ_j w_j u_{i-j}` in a fixed order per output point.
    Direct,
    /// Zero-padded FFT of the far-field-extended signal.
    Fft,
}

/// Convolution with a sampled kernel on grids of a fixed length.
pub struct Convolver {
    kernel: SampledKernel,
    n: usize,
    method: ConvolutionMethod,
    fft_len: usize,
    forward: Option<Arc<dyn Fft<f64>>>,
    inverse: Option<Arc<dyn Fft<f64>>>,
    spectrum: Vec<Complex<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("n", &self.n)
            .field("method", &self.method)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

/// Smallest 5-smooth integer `>= n`.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl Convolver {
    pub fn new(kernel: &SampledKernel, n: usize, method: ConvolutionMethod) -> Self {
        let m = kernel.weights.len();
        let mut conv = Convolver {
            kernel: kernel.clone(),
            n,
            method,
            fft_len: 0,
            forward: None,
            inverse: None,
            spectrum: Vec::new(),
        };
        if method == ConvolutionMethod::Fft {
            let len = fast_len(n + m - 1);
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let mut spectrum = vec![Complex::new(0.0, 0.0); len];
            for (k, w) in kernel.weights.iter().enumerate() {
                spectrum[k] = Complex::new(*w, 0.0);
            }
            forward.process(&mut spectrum);
            conv.fft_len = len;
            conv.forward = Some(forward);
            conv.inverse = Some(inverse);
            conv.spectrum = spectrum;
        }
        conv
    }

    /// FFT for long grids, direct sums otherwise.
    pub fn auto(kernel: &SampledKernel, n: usize) -> Self {
        let method = if n * kernel.weights.len() > 200_000 {
            ConvolutionMethod::Fft
        } else {
            ConvolutionMethod::Direct
        };
        Convolver::new(kernel, n, method)
    }

    pub fn kernel(&self) -> &SampledKernel {
        &self.kernel
    }

    pub fn method(&self) -> ConvolutionMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `out_i = Σ_j w_j u_{i-j}` with far-field continuation.
    pub fn apply(&self, u: &[f64], fl: f64, fr: f64, out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n);
        match self.method {
            ConvolutionMethod::Direct => self.apply_direct(u, fl, fr, out),
            ConvolutionMethod::Fft => self.apply_fft(u, fl, fr, out),
        }
    }

    fn apply_direct(&self, u: &[f64], fl: f64, fr: f64, out: &mut [f64]) {
        let n = u.len() as i64;
        let j_min = self.kernel.j_min;
        let w = &self.kernel.weights;
        let body = |(i, o): (usize, &mut f64)| {
            let base = i as i64 - j_min;
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let idx = base - k as i64;
                let v = if idx < 0 {
                    fl
                } else if idx >= n {
                    fr
                } else {
                    u[idx as usize]
                };
                acc += wk * v;
            }
            *o = acc;
        };
        if u.len() * w.len() > 100_000 {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
    }

    fn apply_fft(&self, u: &[f64], fl: f64, fr: f64, out: &mut [f64]) {
        let m = self.kernel.weights.len();
        let j_max = self.kernel.j_max();
        let n = u.len() as i64;
        let len = self.fft_len;
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        // e[t] = u_{t - j_max} for t < n + m - 1.
        for (t, slot) in buf.iter_mut().take(u.len() + m - 1).enumerate() {
            let idx = t as i64 - j_max;
            let v = if idx < 0 {
                fl
            } else if idx >= n {
                fr
            } else {
                u[idx as usize]
            };
            *slot = Complex::new(v, 0.0);
        }
        self.forward.as_ref().expect("fft plan").process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.as_ref().expect("fft plan").process(&mut buf);
        let scale = 1.0 / len as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = buf[i + m - 1].re * scale;
        }
    }

    /// Convolution of a grid function; keeps its far fields.
    pub fn convolve(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.len() != self.n {
            return Err(Error::Grid(format!(
                "convolver built for {} points, got {}",
                self.n,
                u.len()
            )));
        }
        check_spacing(&self.kernel, u)?;
        let mut out = vec![0.0; self.n];
        self.apply(&u.values, u.farfield_left, u.farfield_right, &mut out);
        Ok(GridFunction::new(u.x0, u.h, out, u.farfield_left, u.farfield_right))
    }
}

fn check_spacing(kernel: &SampledKernel, u: &GridFunction) -> Result<()> {
    if (kernel.h - u.h).abs() > 1e-12 * u.h {
        return Err(Error::Grid(format!(
            "kernel sampled at h = {} but grid has h = {}",
            kernel.h, u.h
        )));
    }
    Ok(())
}

/// `J*u` with the direct sum.
pub fn convolve(kernel: &SampledKernel, u: &GridFunction) -> Result<GridFunction> {
    Convolver::new(kernel, u.len(), ConvolutionMethod::Direct).convolve(u)
}

/// Pointwise `J*u - u + f(u)`; values must lie in `[0, 2]`.
pub fn apply_operator(
    kernel: &SampledKernel,
    nl: &IgnitionNonlinearity,
    u: &GridFunction,
) -> Result<GridFunction> {
    let ju = convolve(kernel, u)?;
    let mut out = Vec::with_capacity(u.len());
    for (a, &v) in ju.values.iter().zip(&u.values) {
        out.push(a - v + nl.eval(v)?);
    }
    Ok(GridFunction::new(u.x0, u.h, out, 0.0, 0.0))
}

/// Leftmost crossing of `level`, by linear interpolation between nodes.
pub fn level_crossing(u: &GridFunction, level: f64) -> Result<f64> {
    for i in 0..u.len() {
        let a = u.values[i] - level;
        if a == 0.0 {
            return Ok(u.x(i));
        }
        if i + 1 < u.len() {
            let b = u.values[i + 1] - level;
            if b == 0.0 {
                return Ok(u.x(i + 1));
            }
            if (a < 0.0) != (b < 0.0) {
                return Ok(u.x(i) + u.h * a / (a - b));
            }
        }
    }
    Err(Error::Diagnostic(format!("profile never crosses level {level}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    fn example_kernel(h: f64) -> SampledKernel {
        KernelSpec::asymmetric_example().sample(h).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        let k = example_kernel(0.05);
        let u = GridFunction::constant(-20.0, 20.0, 0.05, 0.7);
        for method in [ConvolutionMethod::Direct, ConvolutionMethod::Fft] {
            let ju = Convolver::new(&k, u.len(), method).convolve(&u).unwrap();
            let err = ju.sup_distance(&u).unwrap();
            assert!(err < 1e-12, "{method:?}: {err}");
        }
    }

    #[test]
    fn smooth_profile_matches_quadrature() {
        let h = 0.05;
        let spec = KernelSpec::asymmetric_example();
        let k = spec.sample(h).unwrap();
        let bump = |x: f64| (-x * x / 8.0).exp();
        let u = GridFunction::from_fn(-60.0, 60.0, h, 0.0, 0.0, bump);
        let ju = convolve(&k, &u).unwrap();
        for x in [-7.0, -2.45, -1.0, 0.0, 0.35, 2.0, 3.1, 9.0] {
            let want = spec.integrate_with(-80.0, 80.0, |y| bump(x - y), 1e-13);
            let got = ju.values[u.index_of(x).unwrap()];
            assert!((got - want).abs() < 1e-8, "x = {x}: {got} vs {want}");
        }
    }

    #[test]
    fn step_matches_kernel_cdf() {
        // J*H(x) is the kernel mass below x. A grid step is discontinuous
        // data, so the discrete sum agrees only to first order in h.
        let h = 0.05;
        let k = example_kernel(h);
        let u = GridFunction::from_fn(-30.0, 30.0, h, 0.0, 1.0, |x| if x >= 0.0 { 1.0 } else { 0.0 });
        let ju = convolve(&k, &u).unwrap();
        let poly = |t: f64| 4.0 / 135.0 * t.powi(3) - 1.0 / 9.0 * t * t + 2.0 / 9.0 * t;
        let cdf = |x: f64| {
            if x <= -1.0 {
                4.0 / 15.0 * (2.0 * (x + 1.0)).exp()
            } else if x <= 2.0 {
                4.0 / 15.0 + poly(x) - poly(-1.0)
            } else {
                1.0 - 2.0 / 15.0 * (-(x - 2.0)).exp()
            }
        };
        let jmax = 8.0 / 15.0;
        for i in 0..u.len() {
            let x = u.x(i);
            assert!((ju.values[i] - cdf(x)).abs() <= h * jmax, "x = {x}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let k = example_kernel(0.05);
        let u = GridFunction::from_fn(-30.0, 30.0, 0.05, 0.0, 1.0, |x| 0.5 * (1.0 + (x / 3.0).tanh()));
        let shifted = u.translated(0.05 * 7.0);
        let a = convolve(&k, &shifted).unwrap();
        let b = convolve(&k, &u).unwrap().translated(0.05 * 7.0);
        for i in 700..(u.len() - 700) {
            assert!((a.values[i] - b.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_and_fft_agree() {
        let k = example_kernel(0.05);
        let u = GridFunction::from_fn(-40.0, 40.0, 0.05, 0.0, 1.0, |x| {
            0.5 * (1.0 + (x / 2.0).tanh()) + 0.1 * (x * 1.7).sin() * (-x * x / 50.0).exp()
        });
        let a = Convolver::new(&k, u.len(), ConvolutionMethod::Direct).convolve(&u).unwrap();
        let b = Convolver::new(&k, u.len(), ConvolutionMethod::Fft).convolve(&u).unwrap();
        assert!(a.sup_distance(&b).unwrap() < 1e-10);
    }

    #[test]
    fn spacing_mismatch_is_reported() {
        let k = example_kernel(0.1);
        let u = GridFunction::constant(-5.0, 5.0, 0.05, 1.0);
        assert!(matches!(convolve(&k, &u), Err(Error::Grid(_))));
    }

    #[test]
    fn operator_vanishes_on_equilibria() {
        let k = example_kernel(0.05);
        let nl = IgnitionNonlinearity::standard();
        for c in [0.0, 1.0, nl.rho] {
            let u = GridFunction::constant(-10.0, 10.0, 0.05, c);
            let r = apply_operator(&k, &nl, &u).unwrap();
            assert!(r.values.iter().all(|v| v.abs() < 1e-12));
        }
        let bad = GridFunction::constant(-1.0, 1.0, 0.05, 2.5);
        assert!(matches!(apply_operator(&k, &nl, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn crossing_cases() {
        let u = GridFunction::from_fn(0.0, 1.0, 0.1, 0.0, 1.0, |x| x);
        assert!((level_crossing(&u, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((level_crossing(&u, 0.3).unwrap() - 0.3).abs() < 1e-12);
        let v = GridFunction::from_fn(-10.0, 10.0, 0.05, 0.0, 1.0, |x| 0.5 * (1.0 + x.tanh()));
        let d = 0.05 * 13.0;
        let a = level_crossing(&v, 0.25).unwrap();
        let b = level_crossing(&v.translated(d), 0.25).unwrap();
        assert!((b - a - d).abs() < 1e-10);
        assert!(level_crossing(&v, 2.0).is_err());
    }

    #[test]
    fn checkpoint_layout() {
        let u = GridFunction::new(-1.5, 0.25, vec![0.0, 0.5, 1.0], 0.0, 1.0);
        let mut bytes = Vec::new();
        u.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 5 * 8 + 3 * 8);
        assert_eq!(&bytes[0..8], &(-1.5f64).to_le_bytes());
        assert_eq!(&bytes[16..24], &3u64.to_le_bytes());
        let back = GridFunction::read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn interpolation_is_high_order() {
        let u = GridFunction::from_fn(-10.0, 10.0, 0.1, 0.0, 1.0, |x| 0.5 * (1.0 + (x / 2.0).tanh()));
        let mut err: f64 = 0.0;
        for i in 0..500 {
            let x = -5.0 + 0.0137 * i as f64;
            err = err.max((u.interpolate(x) - 0.5 * (1.0 + (x / 2.0).tanh())).abs());
        }
        assert!(err < 1e-8, "{err}");
    }
}
