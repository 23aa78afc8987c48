//! Torus diffeomorphisms homotopic to the identity, stored through their
//! lift `F(x) = x + u(x)` with periodic displacement `u`.
//!
//! Tangent vectors along `f` live in the global trivialization
//! `T T^n = T^n x R^n`, and `f_* X` means `Df(x) X(x)` at the same base point.

use crate::error::{Error, Result};
use crate::forms::{multi_indices, ConstantForm, KForm, VectorField};
use crate::grid::{
    fields_from_spectra, spectra_of, Interpolator, ScalarField, Spectrum, TorusGrid,
};
use crate::linalg::SmallMat;
use crate::scalar::Real;

/// Newton iteration cap for [`inverse`].
pub const INVERSE_MAX_ITERATIONS: usize = 50;

/// A diffeomorphism `f` with lift `x -> x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusMap<T: Real> {
    displacement: VectorField<T>,
}

impl<T: Real> TorusMap<T> {
    /// Wraps a displacement, rejecting maps with `det Df <= 0` somewhere.
    pub fn new(displacement: VectorField<T>) -> Result<Self> {
        let f = Self { displacement };
        f.check_orientation()?;
        Ok(f)
    }

    /// Wraps a displacement without the Jacobian check.
    pub fn new_unchecked(displacement: VectorField<T>) -> Self {
        Self { displacement }
    }

    pub fn identity(grid: TorusGrid) -> Self {
        Self {
            displacement: VectorField::zeros(grid),
        }
    }

    /// Map with displacement `u(x)` sampled on the grid.
    pub fn from_displacement_fn(grid: TorusGrid, u: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        Self::new(VectorField::from_fn(grid, u))
    }

    pub fn grid(&self) -> &TorusGrid {
        self.displacement.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn displacement(&self) -> &VectorField<T> {
        &self.displacement
    }

    pub fn into_displacement(self) -> VectorField<T> {
        self.displacement
    }

    /// Lift values `F(x_i)` at the grid points.
    pub fn lift_points(&self) -> Vec<Vec<T>> {
        let g = *self.grid();
        (0..g.point_count())
            .map(|i| {
                let mut x = g.point::<T>(i);
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa = *xa + self.displacement.components()[a].values()[i];
                }
                x
            })
            .collect()
    }

    pub fn jacobian(&self) -> JacobianField<T> {
        jacobian(self)
    }

    pub fn density(&self) -> ScalarField<T> {
        density(self)
    }

    /// Errors with the location of the worst point if `det Df <= 0` anywhere.
    pub fn check_orientation(&self) -> Result<()> {
        check_positive(&self.density())
    }

    /// Displacement of `self + c * delta`, i.e. the lift perturbed additively.
    pub fn perturbed(&self, c: T, delta: &VectorField<T>) -> Self {
        Self {
            displacement: self.displacement.axpy(c, delta),
        }
    }
}

/// Fails if some density value is not positive.
pub fn check_positive<T: Real>(h: &ScalarField<T>) -> Result<()> {
    let mut count = 0;
    let mut worst = (T::infinity(), 0usize);
    for (i, &v) in h.values().iter().enumerate() {
        // NaN counts as non-positive
        if v.is_nan() || v <= T::zero() {
            count += 1;
        }
        if v < worst.0 || v.is_nan() {
            worst = (v, i);
        }
    }
    if count > 0 {
        return Err(Error::NonPositiveJacobian {
            count,
            min_det: worst.0.to_f64_lossy(),
            worst_index: worst.1,
        });
    }
    Ok(())
}

/// `Df` on the grid: `entry(c, a) = d_a F^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField<T: Real> {
    grid: TorusGrid,
    // row-major over (c, a)
    entries: Vec<ScalarField<T>>,
}

impl<T: Real> JacobianField<T> {
    /// Builds `I + Du` from the partials `du[c][a] = d_a u^c`.
    pub fn from_displacement_gradient(grid: TorusGrid, du: Vec<Vec<ScalarField<T>>>) -> Self {
        let dim = grid.dim();
        let mut entries = Vec::with_capacity(dim * dim);
        for (c, row) in du.into_iter().enumerate() {
            for (a, d) in row.into_iter().enumerate() {
                entries.push(if a == c { d.map(|v| v + T::one()) } else { d });
            }
        }
        Self { grid, entries }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// `d_a F^c` as a field.
    pub fn entry(&self, c: usize, a: usize) -> &ScalarField<T> {
        &self.entries[c * self.grid.dim() + a]
    }

    /// Matrix `Df` at grid point `i`.
    pub fn at(&self, i: usize) -> SmallMat<T> {
        let d = self.grid.dim();
        SmallMat::from_fn(d, |c, a| self.entries[c * d + a].values()[i])
    }

    pub fn det(&self) -> ScalarField<T> {
        let values = (0..self.grid.point_count())
            .map(|i| self.at(i).det())
            .collect();
        ScalarField::new(self.grid, values).expect("point count")
    }

    /// Pointwise `Df(x) X(x)`.
    pub fn apply(&self, x: &VectorField<T>) -> VectorField<T> {
        let d = self.grid.dim();
        let comps = (0..d)
            .map(|c| {
                let mut acc = ScalarField::zeros(self.grid);
                for a in 0..d {
                    acc = acc.zip_map(&(self.entry(c, a) * &x.components()[a]), |s, v| s + v);
                }
                acc
            })
            .collect();
        VectorField::new(comps).expect("dimension")
    }

    /// Pointwise `Df(x)^T a(x)`.
    pub fn apply_transpose(&self, x: &VectorField<T>) -> VectorField<T> {
        let d = self.grid.dim();
        let comps = (0..d)
            .map(|a| {
                let mut acc = ScalarField::zeros(self.grid);
                for c in 0..d {
                    acc = acc.zip_map(&(self.entry(c, a) * &x.components()[c]), |s, v| s + v);
                }
                acc
            })
            .collect();
        VectorField::new(comps).expect("dimension")
    }
}

pub fn jacobian<T: Real>(f: &TorusMap<T>) -> JacobianField<T> {
    let grid = *f.grid();
    let dim = grid.dim();
    let comps: Vec<&ScalarField<T>> = f.displacement.components().iter().collect();
    let partials: Vec<Spectrum<T>> = spectra_of(&comps)
        .iter()
        .flat_map(|s| (0..dim).map(move |a| s.derivative(a)))
        .collect();
    let mut flat = fields_from_spectra(partials).into_iter();
    let du = (0..dim)
        .map(|_| flat.by_ref().take(dim).collect())
        .collect();
    JacobianField::from_displacement_gradient(grid, du)
}

/// `H_f = det Df`, the density of `f^* vol` against `vol`.
pub fn density<T: Real>(f: &TorusMap<T>) -> ScalarField<T> {
    jacobian(f).det()
}

/// `f^* b` for a constant 2-form: `(Df^T B Df)` read off its upper triangle.
pub fn pullback_2form_constant<T: Real>(f: &TorusMap<T>, b: &ConstantForm<T>) -> Result<KForm<T>> {
    pullback_2form_with_jacobian(&jacobian(f), b)
}

/// Same as [`pullback_2form_constant`] but accepting a sampled form, which
/// must have constant coefficients.
pub fn pullback_2form<T: Real>(f: &TorusMap<T>, b: &KForm<T>) -> Result<KForm<T>> {
    let c = b.constant_coeffs().ok_or(Error::NonConstantForm)?;
    pullback_2form_constant(f, &c)
}

pub fn pullback_2form_with_jacobian<T: Real>(
    jac: &JacobianField<T>,
    b: &ConstantForm<T>,
) -> Result<KForm<T>> {
    let grid = *jac.grid();
    let dim = grid.dim();
    if b.dim() != dim {
        return Err(Error::GridMismatch(format!(
            "{}-form on a {dim}-d map",
            b.dim()
        )));
    }
    let bm = b.matrix()?;
    let comps = multi_indices(dim, 2)
        .iter()
        .map(|idx| {
            let (a, e) = (idx[0], idx[1]);
            let values = (0..grid.point_count())
                .map(|i| {
                    let mut s = T::zero();
                    for c in 0..dim {
                        let fca = jac.entry(c, a).values()[i];
                        for cc in 0..dim {
                            let bcc = bm.get(c, cc);
                            if bcc != T::zero() {
                                s = s + fca * bcc * jac.entry(cc, e).values()[i];
                            }
                        }
                    }
                    s
                })
                .collect();
            ScalarField::new(grid, values).expect("point count")
        })
        .collect();
    KForm::new(grid, 2, comps)
}

/// `(f^* a)_c(x) = a_e(F(x)) d_c F^e`, with `a` evaluated by trigonometric interpolation.
pub fn pullback_1form<T: Real>(f: &TorusMap<T>, a: &KForm<T>) -> Result<KForm<T>> {
    f.grid().ensure_same(a.grid())?;
    if a.degree() != 1 {
        return Err(Error::InvalidDegree(
            a.degree(),
            "pullback_1form needs a 1-form",
        ));
    }
    let grid = *f.grid();
    let interp = Interpolator::new(grid, &f.lift_points());
    let composed: Vec<ScalarField<T>> = a
        .components()
        .iter()
        .map(|c| ScalarField::new(grid, interp.apply(c)).expect("point count"))
        .collect();
    let v = jacobian(f).apply_transpose(&VectorField::new(composed)?);
    KForm::one_form(v.into_components())
}

/// `h o f` by interpolation.
pub fn compose_scalar<T: Real>(h: &ScalarField<T>, f: &TorusMap<T>) -> ScalarField<T> {
    let interp = Interpolator::new(*f.grid(), &f.lift_points());
    ScalarField::new(*f.grid(), interp.apply(h)).expect("point count")
}

/// `X o f` componentwise by interpolation.
pub fn compose_vector<T: Real>(x: &VectorField<T>, f: &TorusMap<T>) -> VectorField<T> {
    let interp = Interpolator::new(*f.grid(), &f.lift_points());
    let comps = x
        .components()
        .iter()
        .map(|c| ScalarField::new(*f.grid(), interp.apply(c)).expect("point count"))
        .collect();
    VectorField::new(comps).expect("dimension")
}

/// `f o g`: displacement `u_g(x) + u_f(x + u_g(x))`, re-sampled on the grid.
pub fn compose<T: Real>(f: &TorusMap<T>, g: &TorusMap<T>) -> Result<TorusMap<T>> {
    f.grid().ensure_same(g.grid())?;
    let moved = compose_vector(&f.displacement, g);
    TorusMap::new(g.displacement.add(&moved))
}

/// Inverse map by damped Newton iteration per grid point.
///
/// For each grid point `y` solve `z + u(z) = y` starting from `z = y - u(y)`;
/// `u` and `Du` are evaluated by trigonometric interpolation, and a step is
/// halved until the residual decreases. The result has displacement `z - y`.
pub fn inverse<T: Real>(f: &TorusMap<T>, tol: T) -> Result<TorusMap<T>> {
    let grid = *f.grid();
    let dim = grid.dim();
    let count = grid.point_count();
    let u = f.displacement.components();
    let du: Vec<Vec<ScalarField<T>>> = u.iter().map(|c| c.gradient()).collect();
    let targets: Vec<Vec<T>> = (0..count).map(|i| grid.point::<T>(i)).collect();

    let residual = |z: &[T], y: &[T], uz: &[T]| -> T {
        (0..dim).fold(T::zero(), |m, a| m.max((z[a] + uz[a] - y[a]).mag()))
    };
    let eval_u = |pts: &[Vec<T>]| -> Vec<Vec<T>> {
        let interp = Interpolator::new(grid, pts);
        let cols: Vec<Vec<T>> = u.iter().map(|c| interp.apply(c)).collect();
        (0..pts.len())
            .map(|p| cols.iter().map(|c| c[p]).collect())
            .collect()
    };

    let mut z: Vec<Vec<T>> = (0..count)
        .map(|i| (0..dim).map(|a| targets[i][a] - u[a].values()[i]).collect())
        .collect();
    let mut uz = eval_u(&z);
    let mut res: Vec<T> = (0..count)
        .map(|i| residual(&z[i], &targets[i], &uz[i]))
        .collect();
    let mut active: Vec<usize> = (0..count).filter(|&i| res[i] > tol).collect();

    let mut iterations = 0;
    while !active.is_empty() && iterations < INVERSE_MAX_ITERATIONS {
        iterations += 1;
        let pts: Vec<Vec<T>> = active.iter().map(|&i| z[i].clone()).collect();
        let interp = Interpolator::new(grid, &pts);
        let jac_cols: Vec<Vec<T>> = du
            .iter()
            .flat_map(|row| row.iter().map(|d| interp.apply(d)))
            .collect();
        let steps: Vec<Vec<T>> = active
            .iter()
            .enumerate()
            .map(|(p, &i)| {
                let j = SmallMat::from_fn(dim, |c, a| {
                    jac_cols[c * dim + a][p] + if c == a { T::one() } else { T::zero() }
                });
                let r: Vec<T> = (0..dim)
                    .map(|a| z[i][a] + uz[i][a] - targets[i][a])
                    .collect();
                match j.inverse() {
                    Some(ji) => ji.mul_vec(&r),
                    None => r,
                }
            })
            .collect();

        let mut scale = T::one();
        let mut pending: Vec<usize> = (0..active.len()).collect();
        for _halving in 0..30 {
            let trial: Vec<Vec<T>> = pending
                .iter()
                .map(|&p| {
                    let i = active[p];
                    (0..dim).map(|a| z[i][a] - scale * steps[p][a]).collect()
                })
                .collect();
            let ut = eval_u(&trial);
            let mut still = Vec::new();
            for (q, &p) in pending.iter().enumerate() {
                let i = active[p];
                let r = residual(&trial[q], &targets[i], &ut[q]);
                if r < res[i] {
                    z[i] = trial[q].clone();
                    uz[i] = ut[q].clone();
                    res[i] = r;
                } else {
                    still.push(p);
                }
            }
            pending = still;
            if pending.is_empty() {
                break;
            }
            scale = scale * T::lit(0.5);
        }
        active.retain(|&i| res[i] > tol);
        // points whose step cannot reduce the residual any further are stuck
        if !pending.is_empty() && pending.len() == active.len() {
            break;
        }
    }
    if !active.is_empty() {
        let worst = active.iter().fold(T::zero(), |m, &i| m.max(res[i]));
        return Err(Error::InverseNotConverged {
            iterations,
            worst_residual: worst.to_f64_lossy(),
        });
    }
    let v: Vec<Vec<T>> = (0..count)
        .map(|i| (0..dim).map(|a| z[i][a] - targets[i][a]).collect())
        .collect();
    TorusMap::new(VectorField::from_points(grid, &v))
}

/// An element of `T_f M`: a vector-valued field along `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField<T: Real> {
    base: TorusMap<T>,
    value: VectorField<T>,
}

impl<T: Real> TangentField<T> {
    pub fn new(base: TorusMap<T>, value: VectorField<T>) -> Result<Self> {
        base.grid().ensure_same(value.grid())?;
        Ok(Self { base, value })
    }

    pub fn base(&self) -> &TorusMap<T> {
        &self.base
    }

    pub fn value(&self) -> &VectorField<T> {
        &self.value
    }

    pub fn into_value(self) -> VectorField<T> {
        self.value
    }

    /// `G(u, v) = int g(u, v)` over the source torus.
    pub fn inner(&self, other: &Self) -> T {
        self.value.l2_inner(&other.value)
    }

    pub fn norm(&self) -> T {
        self.inner(self).sqrt()
    }
}

/// `f_* X = Df X` pointwise.
pub fn pushforward_vector<T: Real>(f: &TorusMap<T>, x: &VectorField<T>) -> Result<TangentField<T>> {
    f.grid().ensure_same(x.grid())?;
    TangentField::new(f.clone(), jacobian(f).apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{exterior_derivative, ConstantStructures};
    use crate::perturb::{random_smooth_field, seeded_rng};
    use std::f64::consts::PI;

    const TP: f64 = 2.0 * PI;

    fn grid(dim: usize, n: usize) -> TorusGrid {
        TorusGrid::new(dim, n).unwrap()
    }

    fn shear(g: TorusGrid, eps: f64) -> TorusMap<f64> {
        TorusMap::from_displacement_fn(g, |x: &[f64]| vec![eps * (TP * x[1]).sin(), 0.0]).unwrap()
    }

    fn random_map(g: TorusGrid, amp: f64, seed: u64) -> TorusMap<f64> {
        let mut rng = seeded_rng(seed);
        let comps: Vec<ScalarField<f64>> = (0..g.dim())
            .map(|_| random_smooth_field(g, 2, 1.0, &mut rng))
            .collect();
        let m = comps.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
        TorusMap::new(VectorField::new(comps).unwrap().scale(amp / m)).unwrap()
    }

    /// Smooth analytic map used in refinement studies.
    fn analytic_map(g: TorusGrid, eps: f64, phase: f64) -> TorusMap<f64> {
        TorusMap::from_displacement_fn(g, |x: &[f64]| {
            vec![
                eps * (TP * x[1] + phase).sin() + 0.5 * eps * (TP * x[0]).cos(),
                eps * (TP * (x[0] + x[1]) + phase).cos(),
            ]
        })
        .unwrap()
    }

    #[test]
    fn identity_jacobian_and_density() {
        let g = grid(2, 8);
        let id = TorusMap::<f64>::identity(g);
        let j = id.jacobian();
        for i in 0..g.point_count() {
            assert_eq!(j.at(i), SmallMat::identity(2));
        }
        assert_eq!(id.density(), ScalarField::constant(g, 1.0));
    }

    #[test]
    fn shear_jacobian_and_density() {
        let g = grid(2, 16);
        let eps = 0.05;
        let f = shear(g, eps);
        let j = f.jacobian();
        for i in 0..g.point_count() {
            let y = g.coord::<f64>(i, 1);
            let want = SmallMat::from_fn(2, |c, a| match (c, a) {
                (0, 0) | (1, 1) => 1.0,
                (0, 1) => TP * eps * (TP * y).cos(),
                _ => 0.0,
            });
            assert!(j.at(i).max_abs_diff(&want) < 1e-13);
        }
        assert!((&f.density() - &ScalarField::constant(g, 1.0)).max_abs() < 1e-14);
    }

    #[test]
    fn density_of_compression() {
        let g = grid(2, 16);
        let eps = 0.05;
        let f = TorusMap::from_displacement_fn(g, |x: &[f64]| vec![eps * (TP * x[0]).sin(), 0.0])
            .unwrap();
        let want = ScalarField::<f64>::from_fn(g, |x| 1.0 + TP * eps * (TP * x[0]).cos());
        assert!((&f.density() - &want).max_abs() < 1e-13);
    }

    #[test]
    fn random_maps_are_valid_and_have_unit_mean_density() {
        // band 2 keeps quartic products unaliased from n = 16 on
        for (dim, n) in [(2, 32), (4, 16)] {
            let f = random_map(grid(dim, n), 0.05, 1);
            assert!(f.density().min() > 0.0);
            assert!((f.density().mean() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn folded_map_is_rejected() {
        let g = grid(2, 16);
        let r = TorusMap::from_displacement_fn(g, |x: &[f64]| vec![0.5 * (TP * x[0]).sin(), 0.0]);
        assert!(matches!(r, Err(Error::NonPositiveJacobian { .. })));
    }

    #[test]
    fn pullback_of_constant_forms() {
        let s = ConstantStructures::<f64>::new();
        let g = grid(2, 16);
        let id = TorusMap::identity(g);
        assert_eq!(
            pullback_2form_constant(&id, &s.sigma)
                .unwrap()
                .constant_coeffs()
                .unwrap(),
            s.sigma
        );
        let p = pullback_2form_constant(&shear(g, 0.05), &s.sigma).unwrap();
        assert!((&p.components()[0] - &ScalarField::constant(g, 1.0)).max_abs() < 1e-14);

        // T^4 with u^1 = eps sin(2 pi x_2): Df = I + c e_1 e_2^T, c = 2 pi eps cos(2 pi x_2)
        let g4 = grid(4, 8);
        let eps = 0.03;
        let f = TorusMap::from_displacement_fn(g4, |x: &[f64]| {
            vec![eps * (TP * x[1]).sin(), 0.0, 0.0, 0.0]
        })
        .unwrap();
        let p = pullback_2form_constant(&f, &s.omega).unwrap();
        let i = 3 * g4.stride(1) + 5;
        let cval = TP * eps * (TP * g4.coord::<f64>(i, 1)).cos();
        // omega = d13 + d24; f^*dx1 = dx1 + c dx2, so f^*omega = d13 + d24 + c d23
        let want = [0.0, 1.0, 0.0, cval, 1.0, 0.0];
        for (k, w) in want.iter().enumerate() {
            assert!((p.components()[k].values()[i] - w).abs() < 1e-13);
        }
        let nonconst = KForm::new(
            g4,
            2,
            vec![random_smooth_field(g4, 2, 1.0, &mut seeded_rng(1)); 6],
        )
        .unwrap();
        assert!(matches!(
            pullback_2form(&f, &nonconst),
            Err(Error::NonConstantForm)
        ));
    }

    #[test]
    fn pullback_of_one_forms() {
        let g = grid(2, 32);
        let id = TorusMap::identity(g);
        let mut rng = seeded_rng(3);
        let h: ScalarField<f64> = random_smooth_field(g, 2, 1.0, &mut rng);
        let dh = exterior_derivative(&KForm::scalar(h.clone())).unwrap();
        let e = pullback_1form(&id, &dh)
            .unwrap()
            .sub(&dh)
            .unwrap()
            .max_abs();
        assert!(e < 1e-12, "{e}");

        // h o f is not band-limited; keep it resolved at n = 32
        let f = random_map(g, 0.02, 4);
        let lhs = pullback_1form(&f, &dh).unwrap();
        let rhs = exterior_derivative(&KForm::scalar(compose_scalar(&h, &f))).unwrap();
        assert!(
            lhs.sub(&rhs).unwrap().max_abs() < 1e-9,
            "{}",
            lhs.sub(&rhs).unwrap().max_abs()
        );

        let dx = ConstantForm::from_terms(2, &[(1.0, &[1])])
            .to_kform(g)
            .unwrap();
        let p = pullback_1form(&f, &dx).unwrap();
        let j = f.jacobian();
        for c in 0..2 {
            assert!((&p.components()[c] - j.entry(0, c)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn composition_with_identity_is_exact() {
        let g = grid(2, 16);
        let f = random_map(g, 0.05, 5);
        let id = TorusMap::identity(g);
        assert_eq!(compose(&f, &id).unwrap(), f);
        assert_eq!(compose(&id, &f).unwrap(), f);
    }

    #[test]
    fn inverse_examples() {
        let g = grid(2, 16);
        let id = TorusMap::<f64>::identity(g);
        assert_eq!(inverse(&id, 1e-12).unwrap(), id);

        let eps = 0.05;
        let inv = inverse(&shear(g, eps), 1e-12).unwrap();
        assert!(
            inv.displacement()
                .sub(shear(g, -eps).displacement())
                .max_abs()
                < 1e-11
        );

        let g32 = grid(2, 32);
        let tol = 1e-10;
        let f = random_map(g32, 0.05, 6);
        let fi = inverse(&f, tol).unwrap();
        let round = compose(&f, &fi).unwrap();
        assert!(round.displacement().max_abs() < 1e-8);
        // the inverse's displacement is only approximately band-limited, so
        // the double inverse is checked on a gentler map
        let f = random_map(g32, 0.02, 6);
        let back = inverse(&inverse(&f, tol).unwrap(), tol).unwrap();
        let e = back.displacement().sub(f.displacement()).max_abs();
        assert!(e < 10.0 * tol, "{e}");
    }

    #[test]
    fn inverse_in_four_dimensions() {
        let f = random_map(grid(4, 8), 0.02, 7);
        let fi = inverse(&f, 1e-11).unwrap();
        assert!(compose(&f, &fi).unwrap().displacement().max_abs() < 1e-9);
    }

    #[test]
    fn density_chain_rule() {
        let g = grid(2, 32);
        let (f, h) = (analytic_map(g, 0.03, 0.3), analytic_map(g, 0.02, 1.1));
        let lhs = compose(&f, &h).unwrap().density();
        let rhs = &compose_scalar(&f.density(), &h) * &h.density();
        assert!(
            (&lhs - &rhs).max_abs() < 1e-8,
            "{}",
            (&lhs - &rhs).max_abs()
        );
    }

    #[test]
    fn composition_is_associative_under_refinement() {
        let err = |n: usize| {
            let g = grid(2, n);
            let (f, gm, h) = (
                analytic_map(g, 0.04, 0.0),
                analytic_map(g, 0.03, 0.7),
                analytic_map(g, 0.02, 2.0),
            );
            let left = compose(&compose(&f, &gm).unwrap(), &h).unwrap();
            let right = compose(&f, &compose(&gm, &h).unwrap()).unwrap();
            left.displacement().sub(right.displacement()).max_abs()
        };
        let (e8, e16) = (err(8), err(16));
        assert!(e16 * 4.0 <= e8, "{e8} {e16}");
    }

    #[test]
    fn pushforward_examples() {
        let g = grid(2, 16);
        let eps = 0.05;
        let x = VectorField::constant(g, &[0.0, 1.0]);
        let id = TorusMap::identity(g);
        assert_eq!(pushforward_vector(&id, &x).unwrap().value(), &x);
        let v = pushforward_vector(&shear(g, eps), &x).unwrap();
        let want = VectorField::from_fn(g, |p: &[f64]| vec![TP * eps * (TP * p[1]).cos(), 1.0]);
        assert!(v.value().sub(&want).max_abs() < 1e-13);

        let f = random_map(g, 0.05, 8);
        let mut rng = seeded_rng(9);
        let y = VectorField::new(vec![
            random_smooth_field(g, 2, 1.0, &mut rng),
            random_smooth_field(g, 2, 1.0, &mut rng),
        ])
        .unwrap();
        let lin = pushforward_vector(&f, &x.scale(2.0).axpy(-3.0, &y)).unwrap();
        let sep = pushforward_vector(&f, &x)
            .unwrap()
            .value()
            .scale(2.0)
            .axpy(-3.0, pushforward_vector(&f, &y).unwrap().value());
        assert!(lin.value().sub(&sep).max_abs() < 1e-14);
    }
}
