//! Seeded random test data: smooth periodic fields and near-identity maps.
//!
//! The generator is ChaCha8 seeded with the little-endian bytes of a `u64`
//! (remaining seed bytes zero); a uniform draw in `[0,1)` is
//! `(next_u64 >> 11) * 2^-53`. Modes are visited in row-major order of the
//! grid, so the output depends only on the seed, the grid and the band.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::error::Result;
use crate::forms::{Structure, VectorField};
use crate::grid::{ScalarField, Spectrum, TorusGrid};
use crate::linalg::SmallMat;
use crate::maps::TorusMap;
use crate::scalar::Real;

/// Spectral decay exponent of [`random_displacement`]: coefficients are
/// damped by `(1 + |k|^2)^-DISPLACEMENT_DECAY`.
pub const DISPLACEMENT_DECAY: f64 = 1.5;

/// Platform-independent generator for a given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Uniform draw in `[0, 1)`.
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[-1, 1)`.
pub fn uniform_pm1(rng: &mut impl RngCore) -> f64 {
    2.0 * uniform01(rng) - 1.0
}

/// Zero-mean real trigonometric polynomial with modes `0 < max_a |k_a| <= band`
/// and coefficients uniform in `[-1,1]` damped by `(1 + |k|^2)^-decay`.
pub fn random_smooth_field<T: Real>(
    grid: TorusGrid,
    band: usize,
    decay: f64,
    rng: &mut impl RngCore,
) -> ScalarField<T> {
    let band = band.min(grid.n_per_axis() / 2 - 1) as i64;
    let n = grid.point_count();
    let mut raw = vec![Complex::new(0.0f64, 0.0); n];
    let mut modes = vec![0i64; grid.dim()];
    for (i, c) in raw.iter_mut().enumerate() {
        for (a, m) in modes.iter_mut().enumerate() {
            *m = grid.mode(i, a);
        }
        if modes.iter().all(|&k| k == 0) || modes.iter().any(|&k| k.abs() > band) {
            continue;
        }
        let k2: i64 = modes.iter().map(|k| k * k).sum();
        let damp = (1.0 + k2 as f64).powf(-decay);
        *c = Complex::new(uniform_pm1(rng) * damp, uniform_pm1(rng) * damp);
    }
    // Hermitian symmetrization so the field is real
    let neg = |i: usize| -> usize {
        (0..grid.dim()).fold(0, |acc, a| {
            let idx = grid.axis_index(i, a);
            acc * grid.n_per_axis() + (grid.n_per_axis() - idx) % grid.n_per_axis()
        })
    };
    let coeffs: Vec<Complex<T>> = (0..n)
        .map(|i| {
            let c = (raw[i] + raw[neg(i)].conj()) * 0.5;
            Complex::new(T::lit(c.re), T::lit(c.im))
        })
        .collect();
    Spectrum::from_coeffs(grid, coeffs).to_field()
}

/// Near-identity map `id + u` with `u` band-limited to `|k_a| <= n/8`,
/// scaled so that `max_x |u(x)| = amplitude`.
pub fn random_displacement<T: Real>(
    grid: TorusGrid,
    amplitude: T,
    seed: u64,
) -> Result<TorusMap<T>> {
    if amplitude == T::zero() {
        return Ok(TorusMap::identity(grid));
    }
    let mut rng = seeded_rng(seed);
    let band = grid.n_per_axis() / 8;
    let comps: Vec<ScalarField<T>> = (0..grid.dim())
        .map(|_| random_smooth_field(grid, band, DISPLACEMENT_DECAY, &mut rng))
        .collect();
    let u = VectorField::new(comps)?;
    let scale = amplitude / u.max_norm();
    TorusMap::new(u.scale(scale))
}

/// Trigonometric Hamiltonian `h(x) = sum_j a_j cos(2 pi k_j.x + p_j)` whose
/// flow maps are symplectomorphisms of `sigma` (`T^2`) or `omega` (`T^4`).
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianGenerator {
    dim: usize,
    terms: Vec<(f64, Vec<i64>, f64)>,
}

impl HamiltonianGenerator {
    /// Explicit terms `(a_j, k_j, p_j)`.
    pub fn new(dim: usize, terms: Vec<(f64, Vec<i64>, f64)>) -> Self {
        assert!(terms.iter().all(|t| t.1.len() == dim));
        Self { dim, terms }
    }

    /// `count` random terms with `0 < max_a |k_a| <= max_mode`, amplitudes in
    /// `[-amplitude, amplitude]`.
    pub fn random(dim: usize, count: usize, max_mode: i64, amplitude: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let span = 2 * max_mode + 1;
        let mut terms = Vec::with_capacity(count);
        while terms.len() < count {
            let k: Vec<i64> = (0..dim)
                .map(|_| ((uniform01(&mut rng) * span as f64) as i64).min(span - 1) - max_mode)
                .collect();
            if k.iter().all(|&x| x == 0) {
                continue;
            }
            let a = amplitude * uniform_pm1(&mut rng);
            let p = 2.0 * std::f64::consts::PI * uniform01(&mut rng);
            terms.push((a, k, p));
        }
        Self { dim, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let tp = 2.0 * std::f64::consts::PI;
        self.terms
            .iter()
            .map(|(a, k, p)| a * (tp * dot(k, x) + p).cos())
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let tp = 2.0 * std::f64::consts::PI;
        let mut g = vec![0.0; self.dim];
        for (a, k, p) in &self.terms {
            let s = -a * tp * (tp * dot(k, x) + p).sin();
            for (ga, &ka) in g.iter_mut().zip(k) {
                *ga += s * ka as f64;
            }
        }
        g
    }

    fn sharp(&self) -> SmallMat<f64> {
        let structure = if self.dim == 2 {
            Structure::Sigma
        } else {
            Structure::Omega
        };
        structure.sharp_matrix(self.dim).expect("dimension 2 or 4")
    }

    /// `X_h(x) = -sharp(dh)(x)`.
    pub fn vector_field_at(&self, x: &[f64]) -> Vec<f64> {
        self.sharp()
            .mul_vec(&self.gradient(x))
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// `X_h` sampled on a grid.
    pub fn vector_field<T: Real>(&self, grid: TorusGrid) -> VectorField<T> {
        VectorField::from_fn(grid, |x: &[T]| {
            let xf: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
            self.vector_field_at(&xf).into_iter().map(T::lit).collect()
        })
    }

    /// Time-`time` flow map, integrated from every grid point by RK4 with `steps` steps.
    pub fn flow_map<T: Real>(
        &self,
        grid: TorusGrid,
        time: f64,
        steps: usize,
    ) -> Result<TorusMap<T>> {
        let sharp = self.sharp();
        let field = |x: &[f64]| -> Vec<f64> {
            sharp
                .mul_vec(&self.gradient(x))
                .into_iter()
                .map(|v| -v)
                .collect()
        };
        let h = time / steps.max(1) as f64;
        let disp: Vec<Vec<T>> = (0..grid.point_count())
            .map(|i| {
                let x0: Vec<f64> = grid.point::<f64>(i);
                let mut x = x0.clone();
                for _ in 0..steps {
                    x = rk4_step(&field, &x, h);
                }
                x.iter().zip(&x0).map(|(a, b)| T::lit(a - b)).collect()
            })
            .collect();
        TorusMap::new(VectorField::from_points(grid, &disp))
    }
}

fn dot(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

/// One classical RK4 step of `x' = v(x)`.
pub fn rk4_step(v: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let add = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| p + c * q).collect()
    };
    let k1 = v(x);
    let k2 = v(&add(x, &k1, 0.5 * h));
    let k3 = v(&add(x, &k2, 0.5 * h));
    let k4 = v(&add(x, &k3, h));
    (0..x.len())
        .map(|a| x[a] + h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_zero_mean() {
        let g = TorusGrid::new(2, 16).unwrap();
        let a: ScalarField<f64> = random_smooth_field(g, 3, 1.0, &mut seeded_rng(7));
        let b: ScalarField<f64> = random_smooth_field(g, 3, 1.0, &mut seeded_rng(7));
        assert_eq!(a, b);
        assert!(a.mean().abs() < 1e-15);
        assert!(a.max_abs() > 0.0);
        // band-limited: no energy above the band
        let s = a.spectrum();
        for (i, c) in s.coeffs().iter().enumerate() {
            if (0..2).any(|ax| g.mode(i, ax).abs() > 3) {
                assert!(c.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_range() {
        let mut r = seeded_rng(1);
        for _ in 0..1000 {
            let u = uniform01(&mut r);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
