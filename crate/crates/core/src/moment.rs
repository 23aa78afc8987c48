//! Moment maps, the energy `phi` and its gradient on `T^2` and `T^4`.
//!
//! Gradients are taken with respect to `G(u, v) = int g(u, v)` over the
//! source torus, with tangent vectors represented as displacement variations.
//!
//! On `T^2`, `mu = 1 - H` and `phi = 1/2 int mu^2`.
//!
//! On `T^4`, `dev(f) = ((f^-1)^* omega)^- - omega^-` and
//! `phi = 1/2 int |dev|^2 vol`. Writing `A = Df` and `H = det A`, the
//! change of variables `y = F(x)` gives
//!
//! ```text
//! (f^-1)^* omega (F(x)) = A^-T Omega A^-1,    phi = 1/2 int |dev(F(x))|^2 H(x) dx,
//! ```
//!
//! so the energy is a pointwise function `e(A)` integrated over the source
//! and needs neither an inverse map nor interpolation. Both tori therefore
//! share one gradient: `grad phi^c = -sum_a D_a (de/dA_ca)` with spectral
//! derivatives `D_a`, which is the exact gradient of the discrete energy.
//! The inverse-map pipeline is kept as `*_via_inverse` for cross-checks.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::forms::{
    asd_split, codifferential, multi_indices, ConstantStructures, KForm, VectorField,
};
use crate::grid::{fields_from_spectra, spectra_of, ScalarField, Spectrum, TorusGrid};
use crate::linalg::SmallMat;
use crate::maps::{inverse, jacobian, pullback_1form, JacobianField, TangentField, TorusMap};
use crate::scalar::Real;

/// `mu = 1 - H_f` on `T^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValueT2<T: Real> {
    pub mu: ScalarField<T>,
}

/// Hyperkähler moment components and the anti-self-dual moment on `T^4`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentValueT4<T: Real> {
    pub mu_i: ScalarField<T>,
    pub mu_j: ScalarField<T>,
    pub mu_k: ScalarField<T>,
    /// `((f^-1)^* omega)^-` on the target grid.
    pub mu_tilde: KForm<T>,
}

fn require_dim<T: Real>(f: &TorusMap<T>, dim: usize) -> Result<()> {
    if f.dim() != dim {
        return Err(Error::UnsupportedDimension(f.dim()));
    }
    Ok(())
}

pub fn moment_t2<T: Real>(f: &TorusMap<T>) -> Result<MomentValueT2<T>> {
    require_dim(f, 2)?;
    Ok(MomentValueT2 {
        mu: f.density().map(|h| T::one() - h),
    })
}

/// `(a ^ b)_1234` for two 2-forms given as antisymmetric matrices.
fn wedge_top<T: Real>(a: &SmallMat<T>, b: &SmallMat<T>) -> T {
    let p = |m: &SmallMat<T>, i: usize, j: usize| m.get(i, j);
    p(a, 0, 1) * p(b, 2, 3) - p(a, 0, 2) * p(b, 1, 3)
        + p(a, 0, 3) * p(b, 1, 2)
        + p(a, 1, 2) * p(b, 0, 3)
        - p(a, 1, 3) * p(b, 0, 2)
        + p(a, 2, 3) * p(b, 0, 1)
}

/// `mu_u = -((f^* omega_u - omega_u) ^ omega) / vol` for `u = I, J, K`.
///
/// The constant `omega_u ^ omega / vol` is subtracted so that every
/// component has zero mean and vanishes at the identity.
pub fn moment_hk<T: Real>(f: &TorusMap<T>) -> Result<[ScalarField<T>; 3]> {
    require_dim(f, 4)?;
    moment_hk_with_jacobian(&jacobian(f))
}

pub fn moment_hk_with_jacobian<T: Real>(jac: &JacobianField<T>) -> Result<[ScalarField<T>; 3]> {
    let s = ConstantStructures::<T>::new();
    let w = s.omega_matrix();
    let grid = *jac.grid();
    let triple: Vec<SmallMat<T>> = s
        .triple()
        .iter()
        .map(|b| b.matrix().expect("2-form"))
        .collect();
    let base: Vec<T> = triple.iter().map(|b| wedge_top(b, &w)).collect();
    let mut out: Vec<Vec<T>> = (0..3)
        .map(|_| Vec::with_capacity(grid.point_count()))
        .collect();
    for i in 0..grid.point_count() {
        let a = jac.at(i);
        for (u, b) in triple.iter().enumerate() {
            let pulled = a.transpose().mul(b).mul(&a);
            out[u].push(base[u] - wedge_top(&pulled, &w));
        }
    }
    let mut it = out
        .into_iter()
        .map(|v| ScalarField::new(grid, v).expect("point count"));
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// `((f^-1)^* omega)^-` on the target grid, via the inverse map.
pub fn mu_tilde<T: Real>(f: &TorusMap<T>, tol: T) -> Result<KForm<T>> {
    require_dim(f, 4)?;
    let g = inverse(f, tol)?;
    let s = ConstantStructures::<T>::new();
    let pulled = crate::maps::pullback_2form_constant(&g, &s.omega)?;
    Ok(asd_split(&pulled)?.1)
}

/// `dev(f) = mu_tilde(f) - omega^-` on the target grid.
pub fn dev<T: Real>(f: &TorusMap<T>, tol: T) -> Result<KForm<T>> {
    let s = ConstantStructures::<T>::new();
    let m = mu_tilde(f, tol)?;
    m.sub(&s.omega_minus().to_kform(*f.grid())?)
}

pub fn moment_t4<T: Real>(f: &TorusMap<T>, tol: T) -> Result<MomentValueT4<T>> {
    let [mu_i, mu_j, mu_k] = moment_hk(f)?;
    Ok(MomentValueT4 {
        mu_i,
        mu_j,
        mu_k,
        mu_tilde: mu_tilde(f, tol)?,
    })
}

/// Largest `|mu|` (`T^2`) or largest `|mu_u|` over the triple (`T^4`).
pub fn moment_sup<T: Real>(f: &TorusMap<T>) -> Result<T> {
    match f.dim() {
        2 => Ok(moment_t2(f)?.mu.max_abs()),
        4 => Ok(moment_hk(f)?
            .iter()
            .fold(T::zero(), |m, c| m.max(c.max_abs()))),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

// ---------------------------------------------------------------------------
// Pointwise energy densities

/// Anti-self-dual part of an antisymmetric 4x4 matrix.
fn asd_matrix<T: Real>(x: &SmallMat<T>) -> SmallMat<T> {
    // *X in components (12,13,14,23,24,34) is (X34, -X24, X23, X14, -X13, X12)
    let star = [
        x.get(2, 3),
        -x.get(1, 3),
        x.get(1, 2),
        x.get(0, 3),
        -x.get(0, 2),
        x.get(0, 1),
    ];
    let mut out = SmallMat::zeros(4);
    let half = T::lit(0.5);
    for (p, idx) in multi_indices(4, 2).iter().enumerate() {
        let v = half * (x.get(idx[0], idx[1]) - star[p]);
        out.set(idx[0], idx[1], v);
        out.set(idx[1], idx[0], -v);
    }
    out
}

/// Squared form norm `sum_{i<j} X_ij^2`.
fn form_norm2<T: Real>(x: &SmallMat<T>) -> T {
    let n = x.size();
    let mut s = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            s = s + x.get(i, j) * x.get(i, j);
        }
    }
    s
}

/// Energy density as a function of `A = Df` at one point.
pub trait EnergyDensity<T: Real> {
    /// `e(A)`; `None` when `A` is singular.
    fn value(&self, a: &SmallMat<T>) -> Option<T>;
    /// `(e(A), de/dA)`.
    fn value_and_gradient(&self, a: &SmallMat<T>) -> Option<(T, SmallMat<T>)>;
}

/// `e(A) = 1/2 (1 - det A)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AreaDensity;

impl<T: Real> EnergyDensity<T> for AreaDensity {
    fn value(&self, a: &SmallMat<T>) -> Option<T> {
        let mu = T::one() - a.det();
        Some(T::lit(0.5) * mu * mu)
    }

    fn value_and_gradient(&self, a: &SmallMat<T>) -> Option<(T, SmallMat<T>)> {
        let mu = T::one() - a.det();
        // cofactor matrix of a 2x2
        let cof = SmallMat::from_fn(2, |r, c| match (r, c) {
            (0, 0) => a.get(1, 1),
            (0, 1) => -a.get(1, 0),
            (1, 0) => -a.get(0, 1),
            _ => a.get(0, 0),
        });
        Some((T::lit(0.5) * mu * mu, cof.scale(-mu)))
    }
}

/// `e(A) = 1/2 |asd(A^-T Omega A^-1) - omega^-|^2 det A`.
#[derive(Debug, Clone)]
pub struct DeviationDensity<T: Real> {
    omega: SmallMat<T>,
    omega_minus: SmallMat<T>,
}

impl<T: Real> Default for DeviationDensity<T> {
    fn default() -> Self {
        let s = ConstantStructures::<T>::new();
        let omega = s.omega_matrix();
        let omega_minus = asd_matrix(&omega);
        Self { omega, omega_minus }
    }
}

/// `(H, B = A^-1, M = B^T Omega B, D = asd(M) - omega^-)`.
type DeviationParts<T> = (T, SmallMat<T>, SmallMat<T>, SmallMat<T>);

impl<T: Real> DeviationDensity<T> {
    fn parts(&self, a: &SmallMat<T>) -> Option<DeviationParts<T>> {
        let b = a.inverse()?;
        let m = b.transpose().mul(&self.omega).mul(&b);
        let d = asd_matrix(&m).add(&self.omega_minus.scale(-T::one()));
        Some((a.det(), b, m, d))
    }

    /// `dev(F(x))` as an antisymmetric matrix.
    pub fn deviation(&self, a: &SmallMat<T>) -> Option<SmallMat<T>> {
        self.parts(a).map(|p| p.3)
    }
}

impl<T: Real> EnergyDensity<T> for DeviationDensity<T> {
    fn value(&self, a: &SmallMat<T>) -> Option<T> {
        let (h, _, _, d) = self.parts(a)?;
        Some(T::lit(0.5) * form_norm2(&d) * h)
    }

    fn value_and_gradient(&self, a: &SmallMat<T>) -> Option<(T, SmallMat<T>)> {
        // de = H <D, dM> + 1/2 |D|^2 H tr(B dA), dM = -(B^T dA^T M + M dA B),
        // which gives de/dA = H M D B^T + 1/2 |D|^2 H B^T
        let (h, b, m, d) = self.parts(a)?;
        let n2 = form_norm2(&d);
        let bt = b.transpose();
        let grad = m
            .mul(&d)
            .mul(&bt)
            .scale(h)
            .add(&bt.scale(T::lit(0.5) * n2 * h));
        Some((T::lit(0.5) * n2 * h, grad))
    }
}

fn density_for<T: Real>(dim: usize) -> Result<Box<dyn EnergyDensity<T>>> {
    match dim {
        2 => Ok(Box::new(AreaDensity)),
        4 => Ok(Box::new(DeviationDensity::<T>::default())),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// `phi(f)` from a precomputed Jacobian.
pub fn energy_with_jacobian<T: Real>(jac: &JacobianField<T>) -> Result<T> {
    let grid = *jac.grid();
    let e = density_for::<T>(grid.dim())?;
    let vals: Option<Vec<T>> = (0..grid.point_count())
        .map(|i| e.value(&jac.at(i)))
        .collect();
    let vals = vals.ok_or(Error::NonPositiveJacobian {
        count: 1,
        min_det: 0.0,
        worst_index: 0,
    })?;
    Ok(ScalarField::new(grid, vals)?.integrate())
}

/// `phi(f)`: `1/2 int mu^2` on `T^2`, `1/2 G(dev, dev)` on `T^4`.
pub fn energy<T: Real>(f: &TorusMap<T>) -> Result<T> {
    energy_with_jacobian(&jacobian(f))
}

pub fn energy_t2<T: Real>(f: &TorusMap<T>) -> Result<T> {
    require_dim(f, 2)?;
    energy(f)
}

pub fn energy_t4<T: Real>(f: &TorusMap<T>) -> Result<T> {
    require_dim(f, 4)?;
    energy(f)
}

/// `1/2 G(dev, dev)` evaluated on the target grid through the inverse map.
pub fn energy_t4_via_inverse<T: Real>(f: &TorusMap<T>, tol: T) -> Result<T> {
    let d = dev(f, tol)?;
    Ok(T::lit(0.5) * crate::forms::l2_inner(&d, &d)?)
}

/// `-sum_a D_a G_ca` for a matrix field `G` stored row-major over `(c, a)`.
fn negative_row_divergence<T: Real>(grid: TorusGrid, g: Vec<Vec<T>>) -> VectorField<T> {
    let dim = grid.dim();
    let fields: Vec<ScalarField<T>> = g
        .into_iter()
        .map(|v| ScalarField::new(grid, v).expect("point count"))
        .collect();
    let spectra = spectra_of(&fields.iter().collect::<Vec<_>>());
    let rows = (0..dim)
        .map(|c| {
            let mut acc = vec![Complex::new(T::zero(), T::zero()); grid.point_count()];
            for a in 0..dim {
                let s = spectra[c * dim + a].derivative(a);
                for (x, y) in acc.iter_mut().zip(s.coeffs()) {
                    *x = *x - *y;
                }
            }
            Spectrum::from_coeffs(grid, acc)
        })
        .collect();
    VectorField::new(fields_from_spectra(rows)).expect("dimension")
}

/// Unrolled [`AreaDensity`] path: `de/dA = -mu cof(A)`.
fn area_energy_and_gradient<T: Real>(jac: &JacobianField<T>) -> (T, VectorField<T>) {
    let grid = *jac.grid();
    let (a00, a01, a10, a11) = (
        jac.entry(0, 0).values(),
        jac.entry(0, 1).values(),
        jac.entry(1, 0).values(),
        jac.entry(1, 1).values(),
    );
    let count = grid.point_count();
    let mut g: Vec<Vec<T>> = (0..4).map(|_| Vec::with_capacity(count)).collect();
    let mut sum = T::zero();
    for i in 0..count {
        let mu = T::one() - (a00[i] * a11[i] - a01[i] * a10[i]);
        sum = sum + mu * mu;
        g[0].push(-mu * a11[i]);
        g[1].push(mu * a10[i]);
        g[2].push(mu * a01[i]);
        g[3].push(-mu * a00[i]);
    }
    let phi = T::lit(0.5) * sum / T::from_usize_lossy(count);
    (phi, negative_row_divergence(grid, g))
}

/// `(phi, grad phi)` from a precomputed Jacobian.
pub fn energy_and_gradient_with_jacobian<T: Real>(
    jac: &JacobianField<T>,
) -> Result<(T, VectorField<T>)> {
    let grid = *jac.grid();
    let dim = grid.dim();
    if dim == 2 {
        return Ok(area_energy_and_gradient(jac));
    }
    let e = density_for::<T>(dim)?;
    let mut g: Vec<Vec<T>> = vec![Vec::with_capacity(grid.point_count()); dim * dim];
    let mut vals = Vec::with_capacity(grid.point_count());
    for i in 0..grid.point_count() {
        let (v, de) = e
            .value_and_gradient(&jac.at(i))
            .ok_or(Error::NonPositiveJacobian {
                count: 1,
                min_det: 0.0,
                worst_index: i,
            })?;
        vals.push(v);
        for c in 0..dim {
            for a in 0..dim {
                g[c * dim + a].push(de.get(c, a));
            }
        }
    }
    let phi = ScalarField::new(grid, vals)?.integrate();
    Ok((phi, negative_row_divergence(grid, g)))
}

/// `grad phi` for either torus.
pub fn gradient<T: Real>(f: &TorusMap<T>) -> Result<TangentField<T>> {
    let (_, g) = energy_and_gradient_with_jacobian(&jacobian(f))?;
    TangentField::new(f.clone(), g)
}

pub fn grad_t2<T: Real>(f: &TorusMap<T>) -> Result<TangentField<T>> {
    require_dim(f, 2)?;
    gradient(f)
}

pub fn grad_t4<T: Real>(f: &TorusMap<T>) -> Result<TangentField<T>> {
    require_dim(f, 4)?;
    gradient(f)
}

/// Closed form on `T^2`: `grad phi = A^-T sharp_sigma(H d*(H sigma)) = -H A^-T grad H`.
///
/// Agrees with [`grad_t2`] up to the discretization error of the Piola
/// identity `sum_a d_a (H A^-1)_ac = 0`.
pub fn grad_t2_closed_form<T: Real>(f: &TorusMap<T>) -> Result<TangentField<T>> {
    require_dim(f, 2)?;
    let jac = jacobian(f);
    let h = jac.det();
    let dh = h.gradient();
    let grid = *f.grid();
    let pts: Vec<Vec<T>> = (0..grid.point_count())
        .map(|i| {
            let a = jac.at(i);
            let ait = a.inverse().expect("det > 0").transpose();
            let v = ait.mul_vec(&[dh[0].values()[i], dh[1].values()[i]]);
            let hi = h.values()[i];
            vec![-hi * v[0], -hi * v[1]]
        })
        .collect();
    TangentField::new(f.clone(), VectorField::from_points(grid, &pts))
}

/// `T^4` gradient through the inverse map:
/// `-H A^-T Omega A^-1 eta~`, `eta~ = A^-T f^*(d* dev)`.
pub fn grad_t4_via_inverse<T: Real>(f: &TorusMap<T>, tol: T) -> Result<TangentField<T>> {
    require_dim(f, 4)?;
    let eta = codifferential(&dev(f, tol)?)?;
    let pulled = pullback_1form(f, &eta)?;
    let jac = jacobian(f);
    let w = ConstantStructures::<T>::new().omega_matrix();
    let grid = *f.grid();
    let pts: Vec<Vec<T>> = (0..grid.point_count())
        .map(|i| {
            let a = jac.at(i);
            let b = a.inverse().expect("det > 0");
            let p: Vec<T> = pulled.components().iter().map(|c| c.values()[i]).collect();
            let eta_f = b.transpose().mul_vec(&p);
            let m = b.transpose().mul(&w).mul(&b);
            let h = a.det();
            m.mul_vec(&eta_f).into_iter().map(|v| -h * v).collect()
        })
        .collect();
    TangentField::new(f.clone(), VectorField::from_points(grid, &pts))
}

/// `dev(F(x))` sampled at the source points, without inversion.
pub fn deviation_at_source<T: Real>(f: &TorusMap<T>) -> Result<KForm<T>> {
    require_dim(f, 4)?;
    let jac = jacobian(f);
    let dens = DeviationDensity::<T>::default();
    let grid = *f.grid();
    let idx = multi_indices(4, 2);
    let mut comps: Vec<Vec<T>> = (0..6)
        .map(|_| Vec::with_capacity(grid.point_count()))
        .collect();
    for i in 0..grid.point_count() {
        let d = dens
            .deviation(&jac.at(i))
            .ok_or(Error::NonPositiveJacobian {
                count: 1,
                min_det: 0.0,
                worst_index: i,
            })?;
        for (p, ix) in idx.iter().enumerate() {
            comps[p].push(d.get(ix[0], ix[1]));
        }
    }
    KForm::new(
        grid,
        2,
        comps
            .into_iter()
            .map(|v| ScalarField::new(grid, v).expect("point count"))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{l2_inner, ConstantForm};
    use crate::maps::compose;
    use crate::perturb::{random_smooth_field, seeded_rng};
    use std::f64::consts::PI;

    const TP: f64 = 2.0 * PI;

    fn grid(dim: usize, n: usize) -> TorusGrid {
        TorusGrid::new(dim, n).unwrap()
    }

    fn random_map(g: TorusGrid, amp: f64, seed: u64) -> TorusMap<f64> {
        random_map_band(g, amp, seed, 2)
    }

    fn random_map_band(g: TorusGrid, amp: f64, seed: u64, band: usize) -> TorusMap<f64> {
        let mut rng = seeded_rng(seed);
        let comps: Vec<ScalarField<f64>> = (0..g.dim())
            .map(|_| random_smooth_field(g, band, 1.0, &mut rng))
            .collect();
        let m = comps.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
        TorusMap::new(VectorField::new(comps).unwrap().scale(amp / m)).unwrap()
    }

    fn compression(g: TorusGrid, eps: f64) -> TorusMap<f64> {
        TorusMap::from_displacement_fn(g, |x: &[f64]| vec![eps * (TP * x[0]).sin(), 0.0]).unwrap()
    }

    #[test]
    fn moment_t2_examples() {
        let g = grid(2, 16);
        assert_eq!(
            moment_t2(&TorusMap::<f64>::identity(g))
                .unwrap()
                .mu
                .max_abs(),
            0.0
        );
        let shear =
            TorusMap::from_displacement_fn(g, |x: &[f64]| vec![0.05 * (TP * x[1]).sin(), 0.0])
                .unwrap();
        assert!(moment_t2(&shear).unwrap().mu.max_abs() < 1e-14);
        let eps = 0.05;
        let mu = moment_t2(&compression(g, eps)).unwrap().mu;
        let want = ScalarField::<f64>::from_fn(g, |x| -TP * eps * (TP * x[0]).cos());
        assert!((&mu - &want).max_abs() < 1e-13);
        assert!(mu.mean().abs() < 1e-10);
    }

    #[test]
    fn energy_t2_example() {
        let g = grid(2, 16);
        let eps = 0.05;
        assert_eq!(energy(&TorusMap::<f64>::identity(g)).unwrap(), 0.0);
        let phi = energy(&compression(g, eps)).unwrap();
        assert!((phi - PI * PI * eps * eps).abs() < 1e-14);
    }

    #[test]
    fn hyperkahler_moments() {
        let g = grid(4, 8);
        for mu in moment_hk(&TorusMap::<f64>::identity(g)).unwrap() {
            assert_eq!(mu.max_abs(), 0.0);
        }
        let f = random_map(grid(4, 16), 0.02, 3);
        let mus = moment_hk(&f).unwrap();
        assert!(mus.iter().any(|m| m.max_abs() > 1e-3));
        for m in &mus {
            assert!(m.mean().abs() < 1e-8);
        }
    }

    #[test]
    fn wedge_top_matches_forms() {
        let s = ConstantStructures::<f64>::new();
        let a = ConstantForm::<f64>::new(4, 2, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap();
        let b = ConstantForm::<f64>::new(4, 2, vec![1.1, 0.2, -0.3, 0.5, 0.9, 1.7]).unwrap();
        let want = a.wedge(&b).unwrap().coeffs()[0];
        assert!((wedge_top(&a.matrix().unwrap(), &b.matrix().unwrap()) - want).abs() < 1e-15);
        assert_eq!(wedge_top(&s.omega_matrix(), &s.omega_matrix()), -2.0);
    }

    #[test]
    fn asd_matrix_matches_forms() {
        let a = ConstantForm::<f64>::new(4, 2, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap();
        let (_, minus) = a.asd_split().unwrap();
        assert!(asd_matrix(&a.matrix().unwrap()).max_abs_diff(&minus.matrix().unwrap()) < 1e-15);
    }

    fn check_density_gradient(e: &dyn EnergyDensity<f64>, dim: usize) {
        let mut rng = seeded_rng(11);
        let noise: Vec<f64> = (0..dim * dim)
            .map(|_| crate::perturb::uniform_pm1(&mut rng))
            .collect();
        let a = SmallMat::from_fn(
            dim,
            |r, c| if r == c { 1.0 } else { 0.0 } + 0.2 * noise[r * dim + c],
        );
        let (_, grad) = e.value_and_gradient(&a).unwrap();
        let s = 1e-6;
        for r in 0..dim {
            for c in 0..dim {
                let mut ap = a.clone();
                ap.set(r, c, a.get(r, c) + s);
                let mut am = a.clone();
                am.set(r, c, a.get(r, c) - s);
                let fd = (e.value(&ap).unwrap() - e.value(&am).unwrap()) / (2.0 * s);
                assert!(
                    (fd - grad.get(r, c)).abs() < 1e-8,
                    "{r}{c}: {fd} vs {}",
                    grad.get(r, c)
                );
            }
        }
    }

    #[test]
    fn pointwise_density_gradients() {
        check_density_gradient(&AreaDensity, 2);
        check_density_gradient(&DeviationDensity::<f64>::default(), 4);
    }

    #[test]
    fn deviation_vanishes_at_identity() {
        let d = DeviationDensity::<f64>::default();
        assert_eq!(d.value(&SmallMat::identity(4)).unwrap(), 0.0);
        // symplectic linear maps keep omega
        let r = crate::forms::left_multiplication::<f64>(crate::forms::Quaternion::I);
        let rot = SmallMat::identity(4).scale(0.6).add(&r.scale(0.8));
        assert!(d.value(&rot).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gradients_vanish_at_identity() {
        for dim in [2, 4] {
            let g = grid(dim, 8);
            let grad = gradient(&TorusMap::<f64>::identity(g)).unwrap();
            assert_eq!(grad.value().max_abs(), 0.0);
        }
    }

    #[test]
    fn area_preserving_map_has_zero_gradient() {
        let g = grid(2, 32);
        let shear =
            TorusMap::from_displacement_fn(g, |x: &[f64]| vec![0.05 * (TP * x[1]).sin(), 0.0])
                .unwrap();
        let shear2 =
            TorusMap::from_displacement_fn(g, |x: &[f64]| vec![0.0, 0.04 * (TP * x[0]).cos()])
                .unwrap();
        let f = compose(&shear, &shear2).unwrap();
        // composition is area preserving only up to interpolation error
        assert!(grad_t2(&shear).unwrap().value().max_abs() < 1e-12);
        assert!(grad_t2(&f).unwrap().value().max_abs() < 1e-9);
    }

    /// Centered differences of phi along `f + s Df Y`.
    fn fd_directional(f: &TorusMap<f64>, y: &VectorField<f64>, s: f64) -> f64 {
        let delta = f.jacobian().apply(y);
        (energy(&f.perturbed(s, &delta)).unwrap() - energy(&f.perturbed(-s, &delta)).unwrap())
            / (2.0 * s)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (dim, n) in [(2, 32), (4, 8)] {
            let g = grid(dim, n);
            let f = random_map(g, 0.05, 21);
            let mut rng = seeded_rng(22);
            let y = VectorField::new(
                (0..dim)
                    .map(|_| random_smooth_field(g, 2, 1.0, &mut rng))
                    .collect(),
            )
            .unwrap();
            let grad = gradient(&f).unwrap();
            let pushed = crate::maps::pushforward_vector(&f, &y).unwrap();
            let want = grad.inner(&pushed);
            for s in [1e-4, 1e-5] {
                let fd = fd_directional(&f, &y, s);
                assert!(
                    (fd - want).abs() <= 1e-4 * want.abs(),
                    "dim {dim} s {s}: {fd} vs {want}"
                );
            }
        }
    }

    #[test]
    fn closed_form_t2_gradient_agrees() {
        let g = grid(2, 32);
        let f = random_map(g, 0.05, 23);
        let a = grad_t2(&f).unwrap();
        let b = grad_t2_closed_form(&f).unwrap();
        let scale = a.value().max_abs();
        assert!(
            a.value().sub(b.value()).max_abs() < 1e-8 * scale.max(1.0),
            "{}",
            a.value().sub(b.value()).max_abs()
        );
    }

    #[test]
    fn inverse_pipeline_agrees_in_four_dimensions() {
        // single-mode band keeps the energy integrand resolved at n = 8
        let g = grid(4, 8);
        let f = random_map_band(g, 0.01, 24, 1);
        let tol = 1e-12;
        let e_b = energy(&f).unwrap();
        let e_a = energy_t4_via_inverse(&f, tol).unwrap();
        assert!((e_a - e_b).abs() < 1e-8 * e_b, "{e_a} vs {e_b}");
        let ga = grad_t4_via_inverse(&f, tol).unwrap();
        let gb = grad_t4(&f).unwrap();
        let rel = ga.value().sub(gb.value()).max_abs() / gb.value().max_abs();
        assert!(rel < 1e-3, "{rel}");

        // mu_tilde is anti-self-dual and dev(id) = 0
        let m = mu_tilde(&f, tol).unwrap();
        assert!(crate::forms::hodge_star(&m).add(&m).unwrap().max_abs() < 1e-14);
        let d0 = dev(&TorusMap::<f64>::identity(g), tol).unwrap();
        assert_eq!(d0.max_abs(), 0.0);
        let ds = deviation_at_source(&TorusMap::<f64>::identity(g)).unwrap();
        assert_eq!(ds.max_abs(), 0.0);
        assert_eq!(l2_inner(&d0, &d0).unwrap(), 0.0);
    }

    #[test]
    fn mu_tilde_matches_finite_difference_pullback() {
        // u^1 = eps sin(2 pi x_2): the inverse is the opposite shear, so
        // (f^-1)^* omega = omega - c d23 with c = 2 pi eps cos(2 pi x_2)
        let g = grid(4, 8);
        let eps = 0.03;
        let f = TorusMap::from_displacement_fn(g, |x: &[f64]| {
            vec![eps * (TP * x[1]).sin(), 0.0, 0.0, 0.0]
        })
        .unwrap();
        let m = mu_tilde(&f, 1e-12).unwrap();
        let h = 1e-5;
        let s = ConstantStructures::<f64>::new();
        for i in [0usize, 17, 301, 2048] {
            let x2 = g.coord::<f64>(i, 1);
            // low-order oracle: centered differences of the inverse displacement
            let v = |y: f64| -eps * (TP * y).sin();
            let c = -(v(x2 + h) - v(x2 - h)) / (2.0 * h);
            let pulled = s.omega.add(&ConstantForm::from_terms(4, &[(-c, &[2, 3])]));
            let (_, want) = pulled.asd_split().unwrap();
            for (p, comp) in m.components().iter().enumerate() {
                assert!((comp.values()[i] - want.coeffs()[p]).abs() < 1e-6);
            }
        }
    }
}
