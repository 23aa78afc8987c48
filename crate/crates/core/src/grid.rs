//! Uniform periodic grids on the unit torus `[0,1)^n` and the pseudospectral
//! machinery built on them: transforms, derivatives, trigonometric
//! interpolation and quadrature.
//!
//! Layout is row-major with axis 0 varying slowest, so the flat index of
//! `(i_0, .., i_{d-1})` is `sum_a i_a * n^(d-1-a)`.
//!
//! Odd derivatives zero the unmatched Nyquist mode. Interpolation uses the
//! symmetric trigonometric interpolant (Nyquist coefficient split evenly
//! between `+n/2` and `-n/2`), which reproduces nodal values exactly and is
//! a tensor product of periodic sinc kernels.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::Zero;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{max_abs, Real};

/// Discretization of `T^dim = R^dim / Z^dim` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 2 && dim != 4 {
            return Err(Error::UnsupportedDimension(dim));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidResolution(n));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn point_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing<T: Real>(&self) -> T {
        T::one() / T::from_usize_lossy(self.n)
    }

    /// Flat-index stride of `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Per-axis integer index of a flat index.
    #[inline]
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.n
    }

    /// Coordinate of grid point `flat` along `axis`, `i / n`.
    #[inline]
    pub fn coord<T: Real>(&self, flat: usize, axis: usize) -> T {
        T::from_usize_lossy(self.axis_index(flat, axis)) / T::from_usize_lossy(self.n)
    }

    pub fn point<T: Real>(&self, flat: usize) -> Vec<T> {
        (0..self.dim).map(|a| self.coord(flat, a)).collect()
    }

    /// Signed wavenumber of FFT bin `i`: `i` below `n/2`, `i - n` from `n/2` on.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Wavenumber of spectral bin `flat` along `axis`.
    #[inline]
    pub fn mode(&self, flat: usize, axis: usize) -> i64 {
        self.wavenumber(self.axis_index(flat, axis))
    }

    #[inline]
    pub fn is_nyquist(&self, flat: usize, axis: usize) -> bool {
        self.axis_index(flat, axis) == self.n / 2
    }

    /// Largest per-axis wavenumber kept by the two-thirds dealiasing rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            Err(Error::AxisOutOfRange {
                axis,
                dim: self.dim,
            })
        } else {
            Ok(())
        }
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            Err(Error::GridMismatch(format!(
                "{}D n={} vs {}D n={}",
                self.dim, self.n, other.dim, other.n
            )))
        } else {
            Ok(())
        }
    }
}

/// Flat index of `-k` for every flat index `k`.
fn negated_indices(grid: &TorusGrid) -> Vec<usize> {
    let n = grid.n;
    (0..grid.point_count())
        .map(|i| (0..grid.dim).fold(0, |acc, a| acc * n + (n - grid.axis_index(i, a)) % n))
        .collect()
}

/// Spectra of several real fields, transforming them two at a time.
pub fn spectra_of<T: Real>(fields: &[&ScalarField<T>]) -> Vec<Spectrum<T>> {
    let mut out = Vec::with_capacity(fields.len());
    for pair in fields.chunks(2) {
        if let [a, b] = pair {
            let (sa, sb) = ScalarField::spectrum_pair(a, b);
            out.push(sa);
            out.push(sb);
        } else {
            out.push(pair[0].spectrum());
        }
    }
    out
}

/// Inverse transforms of several real-field spectra, two at a time.
pub fn fields_from_spectra<T: Real>(spectra: Vec<Spectrum<T>>) -> Vec<ScalarField<T>> {
    let mut out = Vec::with_capacity(spectra.len());
    for pair in spectra.chunks(2) {
        if let [a, b] = pair {
            let (fa, fb) = Spectrum::to_field_pair(a, b);
            out.push(fa);
            out.push(fb);
        } else {
            out.push(pair[0].to_field());
        }
    }
    out
}

/// Alias matching the operation name used throughout the docs.
pub fn make_grid(dim: usize, n: usize) -> Result<TorusGrid> {
    TorusGrid::new(dim, n)
}

// ---------------------------------------------------------------------------
// FFT plumbing

type PlanKey = (TypeId, usize, bool);

fn plan<T: Real>(n: usize, inverse: bool) -> Arc<dyn Fft<T>> {
    static CACHE: OnceLock<Mutex<HashMap<PlanKey, Box<dyn Any + Send + Sync>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (TypeId::of::<T>(), n, inverse);
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    if let Some(p) = guard
        .get(&key)
        .and_then(|b| b.downcast_ref::<Arc<dyn Fft<T>>>())
    {
        return Arc::clone(p);
    }
    let dir = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let p: Arc<dyn Fft<T>> = FftPlanner::<T>::new().plan_fft(n, dir);
    guard.insert(key, Box::new(Arc::clone(&p)));
    p
}

/// Unnormalized d-dimensional FFT in place.
fn fft_nd<T: Real>(grid: &TorusGrid, data: &mut [Complex<T>], inverse: bool) {
    let n = grid.n;
    let fft = plan::<T>(n, inverse);
    let mut scratch = vec![Complex::zero(); fft.get_inplace_scratch_len()];
    let total = data.len();
    let mut lines: Vec<Complex<T>> = Vec::new();
    for axis in 0..grid.dim {
        let stride = grid.stride(axis);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        lines.resize(total, Complex::zero());
        let block = n * stride;
        for b in 0..total / block {
            let base = b * block;
            for j in 0..stride {
                let line = (b * stride + j) * n;
                for k in 0..n {
                    lines[line + k] = data[base + k * stride + j];
                }
            }
        }
        fft.process_with_scratch(&mut lines, &mut scratch);
        for b in 0..total / block {
            let base = b * block;
            for j in 0..stride {
                let line = (b * stride + j) * n;
                for k in 0..n {
                    data[base + k * stride + j] = lines[line + k];
                }
            }
        }
    }
}

/// Fourier coefficients of a real field, normalized so that
/// `value(x) = sum_k c_k exp(2 pi i k.x)`.
#[derive(Debug, Clone)]
pub struct Spectrum<T: Real> {
    grid: TorusGrid,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex<T>>) -> Self {
        assert_eq!(coeffs.len(), grid.point_count());
        Self { grid, coeffs }
    }

    /// Back to physical space; imaginary residue is discarded.
    pub fn to_field(&self) -> ScalarField<T> {
        let mut data = self.coeffs.clone();
        fft_nd(&self.grid, &mut data, true);
        ScalarField {
            grid: self.grid,
            values: data.into_iter().map(|c| c.re).collect(),
        }
    }

    /// Spectrum of `d/dx_axis`.
    pub fn derivative(&self, axis: usize) -> Spectrum<T> {
        let n = self.grid.n;
        let two_pi = T::lit(2.0) * T::PI();
        let table: Vec<T> = (0..n)
            .map(|j| {
                if 2 * j == n {
                    T::zero()
                } else {
                    T::lit(self.grid.wavenumber(j) as f64) * two_pi
                }
            })
            .collect();
        let stride = self.grid.stride(axis);
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for block in self.coeffs.chunks_exact(n * stride) {
            for (j, run) in block.chunks_exact(stride).enumerate() {
                let k = table[j];
                coeffs.extend(run.iter().map(|c| Complex::new(-c.im * k, c.re * k)));
            }
        }
        Spectrum {
            grid: self.grid,
            coeffs,
        }
    }

    /// Applies a real multiplier `m(k)` (given the signed wavevector) to every mode.
    pub fn map_modes(&self, mut m: impl FnMut(&[i64]) -> T) -> Spectrum<T> {
        let (dim, n) = (self.grid.dim, self.grid.n);
        // odometer over the multi-index, last axis fastest
        let mut idx = vec![0usize; dim];
        let mut k = vec![0i64; dim];
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for &c in &self.coeffs {
            for a in 0..dim {
                k[a] = self.grid.wavenumber(idx[a]);
            }
            coeffs.push(c * m(&k));
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
            }
        }
        Spectrum {
            grid: self.grid,
            coeffs,
        }
    }

    /// Inverse transforms of two spectra of real fields with a single FFT.
    pub fn to_field_pair(a: &Spectrum<T>, b: &Spectrum<T>) -> (ScalarField<T>, ScalarField<T>) {
        assert_eq!(a.grid, b.grid, "grid mismatch");
        let mut data: Vec<Complex<T>> = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| Complex::new(x.re - y.im, x.im + y.re))
            .collect();
        fft_nd(&a.grid, &mut data, true);
        let re = data.iter().map(|c| c.re).collect();
        let im = data.iter().map(|c| c.im).collect();
        (
            ScalarField {
                grid: a.grid,
                values: re,
            },
            ScalarField {
                grid: a.grid,
                values: im,
            },
        )
    }
}

// ---------------------------------------------------------------------------
// Scalar fields

/// Real function sampled on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T: Real> {
    grid: TorusGrid,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: TorusGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.point_count() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.point_count(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.point_count()],
        }
    }

    pub fn constant(grid: TorusGrid, c: T) -> Self {
        Self {
            grid,
            values: vec![c; grid.point_count()],
        }
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(&[T]) -> T) -> Self {
        let mut x = vec![T::zero(); grid.dim];
        let values = (0..grid.point_count())
            .map(|i| {
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa = grid.coord(i, a);
                }
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> T {
        max_abs(&self.values)
    }

    pub fn min(&self) -> T {
        self.values.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn spectrum(&self) -> Spectrum<T> {
        let mut data: Vec<Complex<T>> = self
            .values
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        fft_nd(&self.grid, &mut data, false);
        let inv_n = T::one() / T::from_usize_lossy(self.grid.point_count());
        for c in data.iter_mut() {
            *c = *c * inv_n;
        }
        Spectrum {
            grid: self.grid,
            coeffs: data,
        }
    }

    /// Spectra of two real fields with a single FFT.
    pub fn spectrum_pair(a: &Self, b: &Self) -> (Spectrum<T>, Spectrum<T>) {
        assert_eq!(a.grid, b.grid, "grid mismatch");
        let grid = a.grid;
        let mut data: Vec<Complex<T>> = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| Complex::new(x, y))
            .collect();
        fft_nd(&grid, &mut data, false);
        let half = T::lit(0.5) / T::from_usize_lossy(grid.point_count());
        let neg = negated_indices(&grid);
        let mut sa = Vec::with_capacity(data.len());
        let mut sb = Vec::with_capacity(data.len());
        for (i, &z) in data.iter().enumerate() {
            let zc = data[neg[i]].conj();
            sa.push((z + zc) * half);
            // (z - zc) / 2i
            let d = z - zc;
            sb.push(Complex::new(d.im, -d.re) * half);
        }
        (Spectrum { grid, coeffs: sa }, Spectrum { grid, coeffs: sb })
    }

    /// Derivative of the trigonometric interpolant along `axis`.
    pub fn spectral_derivative(&self, axis: usize) -> Result<Self> {
        self.grid.check_axis(axis)?;
        Ok(self.spectrum().derivative(axis).to_field())
    }

    /// All first partials, sharing one forward transform.
    pub fn gradient(&self) -> Vec<Self> {
        let s = self.spectrum();
        fields_from_spectra((0..self.grid.dim).map(|a| s.derivative(a)).collect())
    }

    /// Flat Laplacian `sum_a d_a^2`.
    pub fn laplacian(&self) -> Self {
        let four_pi2 = T::lit(4.0) * T::PI() * T::PI();
        self.spectrum()
            .map_modes(|k| -four_pi2 * T::lit(k.iter().map(|&x| (x * x) as f64).sum::<f64>()))
            .to_field()
    }

    /// Two-thirds rule: zero every mode with some `|k_a| > n/3`.
    pub fn dealiased(&self) -> Self {
        let cut = self.grid.dealias_cutoff();
        self.spectrum()
            .map_modes(|k| {
                if k.iter().all(|&x| x.abs() <= cut) {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .to_field()
    }

    /// Integral over the unit torus (mean of the samples).
    pub fn integrate(&self) -> T {
        integrate(self)
    }

    pub fn mean(&self) -> T {
        self.integrate()
    }

    /// Evaluates the trigonometric interpolant at arbitrary points (reduced mod 1).
    pub fn interpolate(&self, points: &[Vec<T>]) -> Vec<T> {
        Interpolator::new(self.grid, points).apply(self)
    }
}

/// Integral over `[0,1)^dim`; exact for trigonometric polynomials below Nyquist.
pub fn integrate<T: Real>(field: &ScalarField<T>) -> T {
    // pairwise-ish summation keeps roundoff low on 4D grids
    let s: T = field
        .values
        .chunks(1024)
        .map(|c| c.iter().copied().sum::<T>())
        .sum();
    s / T::from_usize_lossy(field.values.len())
}

pub fn spectral_derivative<T: Real>(field: &ScalarField<T>, axis: usize) -> Result<ScalarField<T>> {
    field.spectral_derivative(axis)
}

pub fn interpolate<T: Real>(field: &ScalarField<T>, points: &[Vec<T>]) -> Vec<T> {
    field.interpolate(points)
}

macro_rules! field_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<'a, T: Real> $tr<&'a ScalarField<T>> for &'a ScalarField<T> {
            type Output = ScalarField<T>;
            fn $m(self, rhs: &'a ScalarField<T>) -> ScalarField<T> {
                assert_eq!(self.grid, rhs.grid, "grid mismatch");
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
    };
}
field_binop!(Add, add, +);
field_binop!(Sub, sub, -);
field_binop!(Mul, mul, *);

impl<T: Real> Neg for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn neg(self) -> ScalarField<T> {
        self.map(|v| -v)
    }
}

// ---------------------------------------------------------------------------
// Interpolation

/// Precomputed periodic-sinc weights for a batch of evaluation points; reuse
/// across several fields sampled on the same grid.
#[derive(Debug, Clone)]
pub struct Interpolator<T: Real> {
    grid: TorusGrid,
    // weights[p * dim * n + a * n + j]
    weights: Vec<T>,
    count: usize,
}

/// 1D symmetric trigonometric interpolation weight: `sin(n pi t) / (n tan(pi t))`.
fn sinc_weights<T: Real>(n: usize, x: T, out: &mut [T]) {
    let nf = T::from_usize_lossy(n);
    let xr = x - x.floor();
    let pos = xr * nf;
    let nearest = pos.round();
    if (pos - nearest).mag() < T::lit(1e-12) {
        out.iter_mut().for_each(|w| *w = T::zero());
        let j = nearest.to_usize().unwrap_or(0) % n;
        out[j] = T::one();
        return;
    }
    let pi = T::PI();
    for (j, w) in out.iter_mut().enumerate() {
        let mut t = xr - T::from_usize_lossy(j) / nf;
        if t > T::lit(0.5) {
            t = t - T::one();
        } else if t <= T::lit(-0.5) {
            t = t + T::one();
        }
        *w = (nf * pi * t).sin() / (nf * (pi * t).tan());
    }
}

impl<T: Real> Interpolator<T> {
    pub fn new(grid: TorusGrid, points: &[Vec<T>]) -> Self {
        let (dim, n) = (grid.dim, grid.n);
        let mut weights = vec![T::zero(); points.len() * dim * n];
        for (p, x) in points.iter().enumerate() {
            assert_eq!(x.len(), dim, "point dimension mismatch");
            for (a, &xa) in x.iter().enumerate() {
                let off = (p * dim + a) * n;
                sinc_weights(n, xa, &mut weights[off..off + n]);
            }
        }
        Self {
            grid,
            weights,
            count: points.len(),
        }
    }

    /// Builds an interpolator from points stored as `dim` coordinate arrays.
    pub fn from_coordinates(grid: TorusGrid, coords: &[Vec<T>]) -> Self {
        let count = coords.first().map_or(0, |c| c.len());
        let pts: Vec<Vec<T>> = (0..count)
            .map(|p| coords.iter().map(|c| c[p]).collect())
            .collect();
        Self::new(grid, &pts)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn apply(&self, field: &ScalarField<T>) -> Vec<T> {
        assert_eq!(field.grid, self.grid, "grid mismatch");
        let (dim, n) = (self.grid.dim, self.grid.n);
        let mut buf = vec![T::zero(); field.values.len() / n];
        let mut buf2 = vec![T::zero(); buf.len()];
        (0..self.count)
            .map(|p| {
                let w = |a: usize| &self.weights[(p * dim + a) * n..(p * dim + a + 1) * n];
                // contract the last axis straight from the field values
                let wl = w(dim - 1);
                for (o, chunk) in buf.iter_mut().zip(field.values.chunks_exact(n)) {
                    *o = chunk
                        .iter()
                        .zip(wl)
                        .fold(T::zero(), |s, (&v, &c)| s + v * c);
                }
                let mut len = buf.len();
                for a in (0..dim - 1).rev() {
                    let wa = w(a);
                    let out_len = len / n;
                    for (o, chunk) in buf2[..out_len].iter_mut().zip(buf[..len].chunks_exact(n)) {
                        *o = chunk
                            .iter()
                            .zip(wa)
                            .fold(T::zero(), |s, (&v, &c)| s + v * c);
                    }
                    std::mem::swap(&mut buf, &mut buf2);
                    len = out_len;
                }
                buf[0]
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Tests
