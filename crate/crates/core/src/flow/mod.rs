//! DeTurck-modified gradient flow: Hamiltonian fields, the gauge field `W`,
//! the modified velocity, time stepping and gauge reconstruction.
//!
//! The flow is integrated on the periodic displacement `u` of `F = id + u`:
//! `du/dt = -grad phi(f) + Df W(f)`. Reconstructing the gauge family
//! `ds phi_s = -W_s o phi_s` afterwards turns the modified trajectory back
//! into a solution `f_t o phi_t` of the plain gradient flow.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{codifferential, interior_product, ConstantStructures};
pub use crate::forms::{Structure, VectorField};
use crate::grid::{
    fields_from_spectra, spectra_of, Interpolator, ScalarField, Spectrum, TorusGrid,
};
use crate::linalg::SmallMat;
use crate::maps::{
    compose, compose_scalar, inverse, jacobian, JacobianField, TangentField, TorusMap,
};
use crate::moment::{energy_and_gradient_with_jacobian, moment_hk_with_jacobian};
use crate::scalar::Real;

/// Structure whose Hamiltonian fields generate the gauge group on a torus of
/// dimension `dim`.
pub fn symplectic_structure(dim: usize) -> Result<Structure> {
    match dim {
        2 => Ok(Structure::Sigma),
        4 => Ok(Structure::Omega),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// `X_h` with `i_{X_h} s = -dh`, i.e. `X_h = -sharp(dh)`.
pub fn hamiltonian_vector_field<T: Real>(
    h: &ScalarField<T>,
    structure: Structure,
) -> Result<VectorField<T>> {
    let grid = *h.grid();
    let sharp = structure.sharp_matrix::<T>(grid.dim())?;
    let dh = VectorField::new(h.gradient())?;
    Ok(dh.apply_matrix(&sharp.scale(-T::one())))
}

/// `d* i_X s` for the linear field `X(x) = x`, computed by exact central
/// differences of its affine coefficients. Vanishes because the components
/// of `i_X s` are divergence-free, which is what lets `W` depend on the
/// periodic displacement alone.
pub fn linear_lift_coclosed_residual<T: Real>(structure: Structure, dim: usize) -> Result<T> {
    let flat = structure.flat_matrix::<T>(dim)?;
    // (i_X s)_b(x) = sum_a flat_ba x^a; d* = -div
    let x0: Vec<T> = (0..dim).map(|a| T::lit(0.3 + 0.1 * a as f64)).collect();
    let mut div = T::zero();
    for b in 0..dim {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[b] = xp[b] + T::one();
        xm[b] = xm[b] - T::one();
        div = div + (flat.mul_vec(&xp)[b] - flat.mul_vec(&xm)[b]) / T::lit(2.0);
    }
    Ok(-div)
}

/// Hamiltonian `d* i_u sigma` of the `T^2` gauge field.
pub fn deturck_hamiltonian_t2<T: Real>(f: &TorusMap<T>) -> Result<ScalarField<T>> {
    require_dim(f, 2)?;
    let sigma = ConstantStructures::<T>::new().sigma.to_kform(*f.grid())?;
    let c = codifferential(&interior_product(f.displacement(), &sigma)?)?;
    Ok(c.into_components().remove(0))
}

/// `W(f) = -sharp_sigma d d* i_u sigma` on `T^2`.
pub fn deturck_field_t2<T: Real>(f: &TorusMap<T>) -> Result<VectorField<T>> {
    hamiltonian_vector_field(&deturck_hamiltonian_t2(f)?, Structure::Sigma)
}

/// Hamiltonian of the `T^4` gauge field, `-(d* i_v omega) o f` with
/// `F^-1 = id + v`, evaluated at the source points from
/// `Dv(F(x)) = Df(x)^-1 - I`: `sum_ab Omega_ab (Df^-1)_ab`.
///
/// The sign makes the modified velocity linearize to `-L` at the identity,
/// with `L` elliptic; paired with the exact energy gradient the opposite sign
/// gives a backward-parabolic equation.
pub fn deturck_hamiltonian_t4<T: Real>(f: &TorusMap<T>) -> Result<ScalarField<T>> {
    require_dim(f, 4)?;
    pointwise_hamiltonian(&jacobian(f))
}

/// `W(f) = sharp_omega f^* d d* i_v omega` on `T^4`, without inverting `f`.
pub fn deturck_field_t4<T: Real>(f: &TorusMap<T>) -> Result<VectorField<T>> {
    hamiltonian_vector_field(&deturck_hamiltonian_t4(f)?, Structure::Omega)
}

/// Same field as [`deturck_field_t4`], built literally: invert `f`, form
/// `d* i_v omega` on the target grid, pull it back by interpolation.
pub fn deturck_field_t4_via_inverse<T: Real>(f: &TorusMap<T>, tol: T) -> Result<VectorField<T>> {
    require_dim(f, 4)?;
    let g = inverse(f, tol)?;
    let omega = ConstantStructures::<T>::new().omega.to_kform(*f.grid())?;
    let psi = codifferential(&interior_product(g.displacement(), &omega)?)?
        .into_components()
        .remove(0);
    hamiltonian_vector_field(&-&compose_scalar(&psi, f), Structure::Omega)
}

/// Gauge field of either torus.
pub fn deturck_field<T: Real>(f: &TorusMap<T>) -> Result<VectorField<T>> {
    match f.dim() {
        2 => deturck_field_t2(f),
        _ => deturck_field_t4(f),
    }
}

fn require_dim<T: Real>(f: &TorusMap<T>, dim: usize) -> Result<()> {
    if f.dim() != dim {
        return Err(Error::UnsupportedDimension(f.dim()));
    }
    Ok(())
}

fn pointwise_hamiltonian<T: Real>(jac: &JacobianField<T>) -> Result<ScalarField<T>> {
    let grid = *jac.grid();
    let values: Result<Vec<T>> = if grid.dim() == 2 {
        Ok((0..grid.point_count())
            .map(|i| jac.entry(1, 0).values()[i] - jac.entry(0, 1).values()[i])
            .collect())
    } else {
        let w = ConstantStructures::<T>::new().omega_matrix();
        (0..grid.point_count())
            .map(|i| {
                let b = jac.at(i).inverse().ok_or(Error::NonPositiveJacobian {
                    count: 1,
                    min_det: 0.0,
                    worst_index: i,
                })?;
                let mut s = T::zero();
                for a in 0..4 {
                    for c in 0..4 {
                        s = s + w.get(a, c) * b.get(a, c);
                    }
                }
                Ok(s)
            })
            .collect()
    };
    ScalarField::new(grid, values?)
}

/// Everything the integrator needs at one displacement.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Real> {
    pub phi: T,
    pub gradient: VectorField<T>,
    pub gauge: VectorField<T>,
    pub velocity: VectorField<T>,
    pub jacobian: JacobianField<T>,
}

impl<T: Real> Evaluation<T> {
    pub fn at(f: &TorusMap<T>, dealias: bool) -> Result<Self> {
        let jac = jacobian(f);
        let (phi, gradient) = energy_and_gradient_with_jacobian(&jac)?;
        let structure = symplectic_structure(f.dim())?;
        let gauge = hamiltonian_vector_field(&pointwise_hamiltonian(&jac)?, structure)?;
        let mut velocity = jac.apply(&gauge).sub(&gradient);
        if dealias {
            velocity = velocity.dealiased();
        }
        Ok(Self {
            phi,
            gradient,
            gauge,
            velocity,
            jacobian: jac,
        })
    }

    pub fn min_density(&self) -> T {
        self.jacobian.det().min()
    }

    pub fn max_density(&self) -> T {
        self.jacobian.det().max()
    }

    /// `max |mu|` on `T^2`, `max |mu_.|` over the hyperkahler triple on `T^4`.
    pub fn moment_sup(&self) -> Result<T> {
        if self.jacobian.grid().dim() == 2 {
            Ok(self.jacobian.det().map(|h| T::one() - h).max_abs())
        } else {
            Ok(moment_hk_with_jacobian(&self.jacobian)?
                .iter()
                .fold(T::zero(), |m, c| m.max(c.max_abs())))
        }
    }

    pub fn gradient_norm(&self) -> T {
        self.gradient.l2_inner(&self.gradient).sqrt()
    }
}

/// `-grad phi(f) + f_* W(f)`.
pub fn modified_velocity<T: Real>(f: &TorusMap<T>) -> Result<TangentField<T>> {
    let e = Evaluation::at(f, false)?;
    TangentField::new(f.clone(), e.velocity)
}

/// Symbol of the velocity linearized at the identity, acting on the Fourier
/// coefficients of the displacement at covector `xi`:
/// `-|xi|^2 I` on `T^2`, `-(|xi|^2 I + eta eta^T)/2` with `eta = Omega xi` on `T^4`.
pub fn linearized_velocity_symbol<T: Real>(xi: &[T]) -> SmallMat<T> {
    let dim = xi.len();
    let xi2 = xi.iter().fold(T::zero(), |s, &v| s + v * v);
    if dim == 2 {
        return SmallMat::identity(2).scale(-xi2);
    }
    let eta = ConstantStructures::<T>::new().omega_matrix().mul_vec(xi);
    let half = T::lit(0.5);
    SmallMat::from_fn(4, |i, j| {
        let d = if i == j { xi2 } else { T::zero() };
        -half * (d + eta[i] * eta[j])
    })
}

/// Applies a per-mode real matrix `m(xi)` (`xi = 2 pi k`, Nyquist components
/// zeroed) to the Fourier coefficients of a vector field.
pub fn apply_mode_operator<T: Real>(
    u: &VectorField<T>,
    m: impl Fn(&[T]) -> SmallMat<T>,
) -> VectorField<T> {
    let grid = *u.grid();
    let dim = grid.dim();
    let spectra = spectra_of(&u.components().iter().collect::<Vec<_>>());
    let mut out: Vec<Vec<Complex<T>>> =
        vec![vec![Complex::new(T::zero(), T::zero()); grid.point_count()]; dim];
    let tp = T::lit(2.0 * std::f64::consts::PI);
    let mut xi = vec![T::zero(); dim];
    for i in 0..grid.point_count() {
        for (a, x) in xi.iter_mut().enumerate() {
            *x = if grid.is_nyquist(i, a) {
                T::zero()
            } else {
                tp * T::lit(grid.mode(i, a) as f64)
            };
        }
        let mat = m(&xi);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (c, s) in spectra.iter().enumerate() {
                acc = acc + s.coeffs()[i] * mat.get(r, c);
            }
            o[i] = acc;
        }
    }
    let out = out
        .into_iter()
        .map(|c| Spectrum::from_coeffs(grid, c))
        .collect();
    VectorField::new(fields_from_spectra(out)).expect("dimension")
}

mod run;
pub use run::{
    run, run_with_observer, DtSetting, PerturbationKind, RunConfig, RunOutcome, RunSummary,
    IMEX_AUTO_FACTOR,
};

/// Time integrator of the modified flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    /// Classical four-stage Runge-Kutta.
    Rk4,
    /// Linearly implicit Euler: the identity linearization is solved per mode.
    Imex,
}

/// Knobs of the accept/reject stepping loop.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions<T: Real> {
    pub integrator: Integrator,
    pub dealias: bool,
    /// Reject a step whose minimum density falls to or below this value.
    pub min_density: T,
    /// Abort when a step would need `dt` below this value.
    pub min_dt: T,
    /// Accept `phi_new <= phi_old + phi_slack`.
    pub phi_slack: T,
    /// Keep `W` at every accepted state.
    pub record_gauge: bool,
}

impl<T: Real> Default for StepOptions<T> {
    fn default() -> Self {
        Self {
            integrator: Integrator::Rk4,
            dealias: true,
            min_density: T::lit(0.1),
            min_dt: T::lit(1e-10),
            phi_slack: T::lit(1e-12),
            record_gauge: false,
        }
    }
}

/// Diagnostics of one accepted state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<T: Real> {
    pub t: T,
    pub phi: T,
    pub mu_inf: T,
    pub min_density: T,
    pub grad_norm: T,
    /// Step that produced this state (zero for the initial state).
    pub dt: T,
    /// DeTurck equivalence residual, when reconstructed.
    pub residual: Option<T>,
}

/// One recorded accepted state `(t_k, f_k, W(f_k))`.
#[derive(Debug, Clone)]
pub struct HistorySample<T: Real> {
    pub t: T,
    pub map: TorusMap<T>,
    pub gauge: VectorField<T>,
}

/// Current map plus the accepted-step history.
#[derive(Debug, Clone)]
pub struct FlowState<T: Real> {
    pub t: T,
    pub f: TorusMap<T>,
    /// Accepted states with their gauge field, when recording is enabled.
    pub history: Vec<HistorySample<T>>,
    pub diagnostics: Vec<StepRecord<T>>,
    pub rejected: usize,
    current: Evaluation<T>,
}

impl<T: Real> FlowState<T> {
    pub fn new(f: TorusMap<T>, opts: &StepOptions<T>) -> Result<Self> {
        let current = Evaluation::at(&f, opts.dealias)?;
        let record = record_for(T::zero(), T::zero(), &current)?;
        let history = if opts.record_gauge {
            vec![HistorySample {
                t: T::zero(),
                map: f.clone(),
                gauge: current.gauge.clone(),
            }]
        } else {
            Vec::new()
        };
        Ok(Self {
            t: T::zero(),
            f,
            history,
            diagnostics: vec![record],
            rejected: 0,
            current,
        })
    }

    pub fn phi(&self) -> T {
        self.current.phi
    }

    pub fn evaluation(&self) -> &Evaluation<T> {
        &self.current
    }

    pub fn accepted_steps(&self) -> usize {
        self.diagnostics.len() - 1
    }
}

fn record_for<T: Real>(t: T, dt: T, e: &Evaluation<T>) -> Result<StepRecord<T>> {
    Ok(StepRecord {
        t,
        phi: e.phi,
        mu_inf: e.moment_sup()?,
        min_density: e.min_density(),
        grad_norm: e.gradient_norm(),
        dt,
        residual: None,
    })
}

/// Candidate displacement after one step of size `dt` from `state`.
fn propose<T: Real>(state: &FlowState<T>, dt: T, opts: &StepOptions<T>) -> Result<VectorField<T>> {
    let u0 = state.f.displacement();
    let k1 = &state.current.velocity;
    match opts.integrator {
        Integrator::Rk4 => {
            let half = dt * T::lit(0.5);
            let stage = |u: VectorField<T>| -> Result<VectorField<T>> {
                Ok(Evaluation::at(&TorusMap::new(u)?, opts.dealias)?.velocity)
            };
            let k2 = stage(u0.axpy(half, k1))?;
            let k3 = stage(u0.axpy(half, &k2))?;
            let k4 = stage(u0.axpy(dt, &k3))?;
            let sixth = dt / T::lit(6.0);
            let two = T::lit(2.0);
            Ok(u0
                .axpy(sixth, k1)
                .axpy(sixth * two, &k2)
                .axpy(sixth * two, &k3)
                .axpy(sixth, &k4))
        }
        Integrator::Imex => {
            // (I - dt L) u1 = u0 + dt (V(u0) - L u0)
            let lu = apply_mode_operator(u0, linearized_velocity_symbol);
            let rhs = u0.axpy(dt, k1).axpy(-dt, &lu);
            Ok(apply_mode_operator(&rhs, |xi| imex_inverse(xi, dt)))
        }
    }
}

/// `(I - dt L(xi))^-1`, using Sherman-Morrison on `T^4` where
/// `I - dt L = a I + b eta eta^T`.
fn imex_inverse<T: Real>(xi: &[T], dt: T) -> SmallMat<T> {
    let xi2 = xi.iter().fold(T::zero(), |s, &v| s + v * v);
    if xi.len() == 2 {
        return SmallMat::identity(2).scale(T::one() / (T::one() + dt * xi2));
    }
    let half = T::lit(0.5);
    let a = T::one() + dt * half * xi2;
    let b = dt * half;
    let eta = ConstantStructures::<T>::new().omega_matrix().mul_vec(xi);
    let eta2 = eta.iter().fold(T::zero(), |s, &v| s + v * v);
    let c = b / (a + b * eta2);
    SmallMat::from_fn(4, |i, j| {
        let d = if i == j { T::one() } else { T::zero() };
        (d - c * eta[i] * eta[j]) / a
    })
}

/// Advances `state` by one accepted step, starting from `dt` and halving on
/// rejection. Returns the step size actually used.
pub fn step<T: Real>(state: &mut FlowState<T>, dt: T, opts: &StepOptions<T>) -> Result<T> {
    if dt <= T::zero() || !dt.is_finite() {
        return Err(Error::Config {
            key: "dt".into(),
            message: format!("must be positive, got {}", dt.to_f64_lossy()),
        });
    }
    let mut h = dt;
    loop {
        if h < opts.min_dt {
            return Err(Error::StepUnderflow {
                t: state.t.to_f64_lossy(),
                dt: h.to_f64_lossy(),
            });
        }
        if let Some((f, e)) = try_step(state, h, opts) {
            let t = state.t + h;
            let record = record_for(t, h, &e)?;
            if opts.record_gauge {
                state.history.push(HistorySample {
                    t,
                    map: f.clone(),
                    gauge: e.gauge.clone(),
                });
            }
            state.t = t;
            state.f = f;
            state.current = e;
            state.diagnostics.push(record);
            return Ok(h);
        }
        state.rejected += 1;
        h = h * T::lit(0.5);
    }
}

fn try_step<T: Real>(
    state: &FlowState<T>,
    h: T,
    opts: &StepOptions<T>,
) -> Option<(TorusMap<T>, Evaluation<T>)> {
    let u = propose(state, h, opts).ok()?;
    if !u.is_finite() {
        return None;
    }
    let f = TorusMap::new(u).ok()?;
    let e = Evaluation::at(&f, opts.dealias).ok()?;
    let ok = e.phi <= state.current.phi + opts.phi_slack && e.min_density() > opts.min_density;
    ok.then_some((f, e))
}

/// Explicit stability heuristic `0.2 h^2 / max(H^2)`, with an extra factor
/// `2 / dim` for the larger `T^4` symbol.
pub fn auto_dt<T: Real>(f: &TorusMap<T>) -> T {
    auto_dt_for(f.grid(), f.density().max_abs())
}

/// [`auto_dt`] from a known maximum density.
pub fn auto_dt_for<T: Real>(grid: &TorusGrid, max_density: T) -> T {
    let h: T = grid.spacing();
    T::lit(0.2) * h * h / (max_density * max_density) * T::lit(2.0)
        / T::from_usize_lossy(grid.dim())
}

/// Gauge family `phi_t` from recorded samples `(t_k, W_k)`: solves
/// `ds phi_s = -W_s o phi_s`, `phi_0 = id`, per grid point with RK4 on the
/// sample intervals. `W` is interpolated spectrally in space and linearly in
/// time, so the midpoint stage uses the average of the two end samples.
/// Returns `phi_{t_k}` for every sample.
pub fn gauge_reconstruct<T: Real>(samples: &[(T, VectorField<T>)]) -> Result<Vec<TorusMap<T>>> {
    let Some((_, first)) = samples.first() else {
        return Ok(Vec::new());
    };
    let grid = *first.grid();
    let dim = grid.dim();
    let mut points: Vec<Vec<T>> = (0..grid.point_count()).map(|i| grid.point(i)).collect();
    let mut out = vec![TorusMap::identity(grid)];
    let sample_at = |w: &VectorField<T>, pts: &[Vec<T>]| -> Vec<Vec<T>> {
        let interp = Interpolator::new(grid, pts);
        let cols: Vec<Vec<T>> = w.components().iter().map(|c| interp.apply(c)).collect();
        (0..pts.len())
            .map(|p| cols.iter().map(|c| -c[p]).collect())
            .collect()
    };
    let shift = |pts: &[Vec<T>], k: &[Vec<T>], c: T| -> Vec<Vec<T>> {
        pts.iter()
            .zip(k)
            .map(|(p, v)| p.iter().zip(v).map(|(&x, &y)| x + c * y).collect())
            .collect()
    };
    for pair in samples.windows(2) {
        let (t0, w0) = (&pair[0].0, &pair[0].1);
        let (t1, w1) = (&pair[1].0, &pair[1].1);
        w0.grid().ensure_same(w1.grid())?;
        let h = *t1 - *t0;
        let wm = w0.add(w1).scale(T::lit(0.5));
        let k1 = sample_at(w0, &points);
        let k2 = sample_at(&wm, &shift(&points, &k1, h * T::lit(0.5)));
        let k3 = sample_at(&wm, &shift(&points, &k2, h * T::lit(0.5)));
        let k4 = sample_at(w1, &shift(&points, &k3, h));
        let sixth = h / T::lit(6.0);
        for (p, pt) in points.iter_mut().enumerate() {
            for a in 0..dim {
                pt[a] = pt[a] + sixth * (k1[p][a] + T::lit(2.0) * (k2[p][a] + k3[p][a]) + k4[p][a]);
            }
        }
        let disp: Vec<Vec<T>> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.iter()
                    .zip(grid.point::<T>(i))
                    .map(|(&x, y)| x - y)
                    .collect()
            })
            .collect();
        out.push(TorusMap::new(VectorField::from_points(grid, &disp))?);
    }
    Ok(out)
}

/// Times and maps `f~_k = f_k o phi_k` of the plain gradient flow recovered
/// from a recorded history.
pub fn reconstruct_trajectory<T: Real>(
    history: &[HistorySample<T>],
) -> Result<(Vec<T>, Vec<TorusMap<T>>)> {
    let samples: Vec<(T, VectorField<T>)> =
        history.iter().map(|h| (h.t, h.gauge.clone())).collect();
    let gauges = gauge_reconstruct(&samples)?;
    let maps = history
        .iter()
        .zip(&gauges)
        .map(|(h, g)| compose(&h.map, g))
        .collect::<Result<Vec<_>>>()?;
    Ok((history.iter().map(|h| h.t).collect(), maps))
}

/// `max_x |d/dt f~ + grad phi(f~)|` at the interior samples of a
/// reconstructed trajectory, by central differences in time (one-sided at
/// the two ends).
pub fn deturck_residuals<T: Real>(times: &[T], maps: &[TorusMap<T>]) -> Result<Vec<T>> {
    let m = maps.len();
    if m < 2 {
        return Ok(vec![T::zero(); m]);
    }
    (0..m)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(m - 1));
            let rate = maps[hi]
                .displacement()
                .sub(maps[lo].displacement())
                .scale(T::one() / (times[hi] - times[lo]));
            let (_, grad) = energy_and_gradient_with_jacobian(&jacobian(&maps[k]))?;
            Ok(rate.add(&grad).max_norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{exterior_derivative, flat, KForm};
    use crate::perturb::{
        random_displacement, random_smooth_field, seeded_rng, HamiltonianGenerator,
    };
    use std::f64::consts::PI;

    const TP: f64 = 2.0 * PI;

    fn grid(dim: usize, n: usize) -> TorusGrid {
        TorusGrid::new(dim, n).unwrap()
    }

    fn smooth_map(g: TorusGrid, amp: f64, seed: u64, band: usize) -> TorusMap<f64> {
        let mut rng = seeded_rng(seed);
        let comps: Vec<ScalarField<f64>> = (0..g.dim())
            .map(|_| random_smooth_field(g, band, 1.0, &mut rng))
            .collect();
        let m = comps.iter().fold(0.0f64, |m, c| m.max(c.max_abs()));
        TorusMap::new(VectorField::new(comps).unwrap().scale(amp / m)).unwrap()
    }

    fn contraction_residual(x: &VectorField<f64>, h: &ScalarField<f64>, s: Structure) -> f64 {
        let ix = flat(x, s).unwrap();
        let dh = exterior_derivative(&KForm::scalar(h.clone())).unwrap();
        ix.add(&dh).unwrap().max_abs()
    }

    #[test]
    fn hamiltonian_field_examples() {
        let g = grid(2, 16);
        let z = hamiltonian_vector_field(&ScalarField::constant(g, 3.0), Structure::Sigma).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let h = ScalarField::from_fn(g, |x: &[f64]| (TP * x[1]).sin());
        let x = hamiltonian_vector_field(&h, Structure::Sigma).unwrap();
        // i_X sigma = X^x dy - X^y dx = -2 pi cos(2 pi y) dy
        let expect = VectorField::from_fn(g, |p: &[f64]| vec![-TP * (TP * p[1]).cos(), 0.0]);
        assert!(x.sub(&expect).max_abs() < 1e-12);
        for (dim, s) in [(2, Structure::Sigma), (4, Structure::Omega)] {
            let g = grid(dim, 8);
            let h: ScalarField<f64> = random_smooth_field(g, 3, 1.0, &mut seeded_rng(dim as u64));
            let x = hamiltonian_vector_field(&h, s).unwrap();
            assert!(contraction_residual(&x, &h, s) < 1e-12);
            assert!(x.divergence().max_abs() < 1e-12);
        }
        assert!(hamiltonian_vector_field(&h, Structure::Omega).is_err());
    }

    #[test]
    fn linear_lift_part_is_coclosed() {
        assert_eq!(
            linear_lift_coclosed_residual::<f64>(Structure::Sigma, 2).unwrap(),
            0.0
        );
        assert_eq!(
            linear_lift_coclosed_residual::<f64>(Structure::Omega, 4).unwrap(),
            0.0
        );
    }

    #[test]
    fn deturck_t2_examples() {
        let g = grid(2, 32);
        assert_eq!(
            deturck_field_t2(&TorusMap::<f64>::identity(g))
                .unwrap()
                .max_abs(),
            0.0
        );
        // u = (e sin 2 pi x, 0): i_u sigma = e sin(2 pi x) dy, d* of it = 0, so W = 0
        let eps = 0.01;
        let f = TorusMap::from_displacement_fn(g, |x: &[f64]| vec![eps * (TP * x[0]).sin(), 0.0])
            .unwrap();
        assert!(deturck_field_t2(&f).unwrap().max_abs() < 1e-13);
        // u = (0, e sin 2 pi x): psi = 2 pi e cos 2 pi x, W = (0, -4 pi^2 e sin 2 pi x)
        let f = TorusMap::from_displacement_fn(g, |x: &[f64]| vec![0.0, eps * (TP * x[0]).sin()])
            .unwrap();
        let w = deturck_field_t2(&f).unwrap();
        let expect =
            VectorField::from_fn(g, |x: &[f64]| vec![0.0, -TP * TP * eps * (TP * x[0]).sin()]);
        assert!(w.sub(&expect).max_abs() < 1e-12);
        // defining property
        let f = smooth_map(g, 0.03, 1, 3);
        let psi = deturck_hamiltonian_t2(&f).unwrap();
        let w = deturck_field_t2(&f).unwrap();
        assert!(contraction_residual(&w, &psi, Structure::Sigma) < 1e-11);
        // the integrator's pointwise Hamiltonian is the same function
        let e = Evaluation::at(&f, false).unwrap();
        assert!(e.gauge.sub(&w).max_abs() < 1e-12);
    }

    #[test]
    fn deturck_t4_routes_agree() {
        let g = grid(4, 8);
        assert_eq!(
            deturck_field_t4(&TorusMap::<f64>::identity(g))
                .unwrap()
                .max_abs(),
            0.0
        );
        let f = smooth_map(g, 0.01, 2, 1);
        let psi = deturck_hamiltonian_t4(&f).unwrap();
        let w = deturck_field_t4(&f).unwrap();
        assert!(contraction_residual(&w, &psi, Structure::Omega) < 1e-9);
        // the routes differ by aliasing of the inverse displacement, which is
        // cubic in the amplitude
        let rel = |amp: f64| {
            let f = smooth_map(g, amp, 2, 1);
            let w = deturck_field_t4(&f).unwrap();
            w.sub(&deturck_field_t4_via_inverse(&f, 1e-13).unwrap())
                .max_abs()
                / w.max_abs()
        };
        let (coarse, fine) = (rel(0.01), rel(0.001));
        assert!(fine < 1e-6, "{fine}");
        assert!(coarse / fine > 100.0, "{coarse} {fine}");
    }

    #[test]
    fn deturck_t4_shear_matches_closed_form_inverse() {
        // F = id + (0, 0, e sin 2 pi x1, 0) has F^-1 = id - (0, 0, e sin 2 pi x1, 0),
        // so d* i_v omega = -Omega_31 d_1 v^3 = -(-1)(-2 pi e cos 2 pi x1) and the
        // gauge Hamiltonian is its negative
        let g = grid(4, 8);
        let eps = 0.02;
        let f = TorusMap::from_displacement_fn(g, |x: &[f64]| {
            vec![0.0, 0.0, eps * (TP * x[0]).sin(), 0.0]
        })
        .unwrap();
        let psi = deturck_hamiltonian_t4(&f).unwrap();
        let expect = ScalarField::from_fn(g, |x: &[f64]| TP * eps * (TP * x[0]).cos());
        assert!((&psi - &expect).max_abs() < 1e-13);
    }

    #[test]
    fn velocity_vanishes_at_identity_and_is_pure_gauge_at_symplectomorphisms() {
        for dim in [2, 4] {
            let g = grid(dim, 8);
            assert_eq!(
                modified_velocity(&TorusMap::<f64>::identity(g))
                    .unwrap()
                    .value()
                    .max_abs(),
                0.0
            );
        }
        let g = grid(2, 32);
        let f: TorusMap<f64> = HamiltonianGenerator::random(2, 3, 2, 0.01, 3)
            .flow_map(g, 0.1, 32)
            .unwrap();
        let e = Evaluation::at(&f, false).unwrap();
        assert!(e.gradient.max_abs() < 1e-10);
        let pushed = e.jacobian.apply(&e.gauge);
        assert!(e.velocity.sub(&pushed).max_abs() < 1e-10);
    }

    /// Directional derivative of the velocity at the identity against the
    /// identity linearization applied mode by mode.
    fn velocity_fd_probe(dim: usize, n: usize, seed: u64) -> f64 {
        let g = grid(dim, n);
        let mut rng = seeded_rng(seed);
        let dir = VectorField::new(
            (0..dim)
                .map(|_| random_smooth_field(g, 2, 1.0, &mut rng))
                .collect(),
        )
        .unwrap();
        let s = 1e-5;
        let v = |c: f64| {
            Evaluation::at(&TorusMap::new(dir.scale(c)).unwrap(), false)
                .unwrap()
                .velocity
        };
        let fd = v(s).sub(&v(-s)).scale(0.5 / s);
        let lin = apply_mode_operator(&dir, linearized_velocity_symbol);
        fd.sub(&lin).max_abs() / lin.max_abs()
    }

    #[test]
    fn velocity_linearization_matches_symbol() {
        let a = velocity_fd_probe(2, 32, 4);
        let b = velocity_fd_probe(4, 8, 5);
        assert!(a < 1e-3 && b < 1e-3, "{a} {b}");
    }

    #[test]
    fn imex_inverse_solves_the_mode_system() {
        let xi = [1.0, -2.0, 0.5, 3.0];
        let dt = 0.01;
        let l = linearized_velocity_symbol(&xi);
        let m = SmallMat::identity(4).add(&l.scale(-dt));
        assert!(
            m.mul(&imex_inverse(&xi, dt))
                .max_abs_diff(&SmallMat::identity(4))
                < 1e-14
        );
    }

    #[test]
    fn steps_decrease_energy_and_keep_density() {
        for integrator in [Integrator::Rk4, Integrator::Imex] {
            let g = grid(2, 32);
            let f: TorusMap<f64> = random_displacement(g, 0.05, 9).unwrap();
            let opts = StepOptions {
                integrator,
                ..Default::default()
            };
            let mut st = FlowState::new(f, &opts).unwrap();
            let dt = auto_dt(&st.f);
            for _ in 0..100 {
                step(&mut st, dt, &opts).unwrap();
            }
            let d = &st.diagnostics;
            assert!(d.windows(2).all(|w| w[1].phi < w[0].phi), "{integrator:?}");
            assert!(d.iter().all(|r| r.min_density > 0.1));
            assert!(d.last().unwrap().phi < 0.5 * d[0].phi);
        }
    }

    #[test]
    fn step_at_symplectomorphism_keeps_energy() {
        let g = grid(2, 32);
        let f: TorusMap<f64> = HamiltonianGenerator::random(2, 3, 2, 0.01, 8)
            .flow_map(g, 0.1, 32)
            .unwrap();
        let opts = StepOptions::default();
        let mut st = FlowState::new(f.clone(), &opts).unwrap();
        let phi0 = st.phi();
        step(&mut st, auto_dt(&f), &opts).unwrap();
        assert!((st.phi() - phi0).abs() < 1e-10);
        assert!(st.f.displacement().sub(f.displacement()).max_abs() > 0.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let g = grid(2, 16);
        let f = smooth_map(g, 0.02, 11, 2);
        let opts = StepOptions {
            dealias: false,
            ..Default::default()
        };
        let horizon = 2e-3;
        let run = |steps: usize| -> VectorField<f64> {
            let mut st = FlowState::new(f.clone(), &opts).unwrap();
            let dt = horizon / steps as f64;
            for _ in 0..steps {
                assert_eq!(step(&mut st, dt, &opts).unwrap(), dt);
            }
            st.f.into_displacement()
        };
        let reference = run(64);
        let e1 = run(8).sub(&reference).max_abs();
        let e2 = run(16).sub(&reference).max_abs();
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn step_rejects_invalid_dt() {
        let g = grid(2, 8);
        let opts = StepOptions::default();
        let mut st = FlowState::new(TorusMap::<f64>::identity(g), &opts).unwrap();
        assert!(step(&mut st, 0.0, &opts).is_err());
        assert!(step(&mut st, 1e-3, &opts).is_ok());
    }

    #[test]
    fn gauge_reconstruction_examples() {
        let g = grid(2, 16);
        let zero: Vec<(f64, VectorField<f64>)> = (0..4)
            .map(|k| (0.1 * k as f64, VectorField::zeros(g)))
            .collect();
        for m in gauge_reconstruct(&zero).unwrap() {
            assert_eq!(m.displacement().max_abs(), 0.0);
        }
        // constant-in-time Hamiltonian field: the reconstruction is the flow of -W
        let h =
            HamiltonianGenerator::new(2, vec![(0.01, vec![1, 0], 0.3), (0.02, vec![1, 1], 1.1)]);
        let w: VectorField<f64> = h.vector_field(g);
        let samples = |k: usize| -> Vec<(f64, VectorField<f64>)> {
            (0..=k)
                .map(|j| (0.2 * j as f64 / k as f64, w.clone()))
                .collect()
        };
        let neg =
            HamiltonianGenerator::new(2, vec![(-0.01, vec![1, 0], 0.3), (-0.02, vec![1, 1], 1.1)]);
        let exact: TorusMap<f64> = neg.flow_map(g, 0.2, 512).unwrap();
        let err = |k: usize| {
            gauge_reconstruct(&samples(k))
                .unwrap()
                .last()
                .unwrap()
                .displacement()
                .sub(exact.displacement())
                .max_abs()
        };
        let (e4, e8) = (err(4), err(8));
        assert!(e4 / e8 > 12.0, "{e4} {e8}");
        for m in gauge_reconstruct(&samples(8)).unwrap() {
            assert!((&m.density() - &ScalarField::constant(g, 1.0)).max_abs() < 1e-6);
        }
    }

    #[test]
    fn gauge_composition_solves_the_plain_flow() {
        let g = grid(2, 32);
        let f: TorusMap<f64> = random_displacement(g, 0.02, 3).unwrap();
        let opts = StepOptions {
            record_gauge: true,
            ..Default::default()
        };
        let residual = |dt: f64, steps: usize| -> f64 {
            let mut st = FlowState::new(f.clone(), &opts).unwrap();
            for _ in 0..steps {
                step(&mut st, dt, &opts).unwrap();
            }
            let (times, maps) = reconstruct_trajectory(&st.history).unwrap();
            for m in gauge_reconstruct(
                &st.history
                    .iter()
                    .map(|h| (h.t, h.gauge.clone()))
                    .collect::<Vec<_>>(),
            )
            .unwrap()
            {
                assert!((&m.density() - &ScalarField::constant(g, 1.0)).max_abs() < 1e-6);
            }
            let r = deturck_residuals(&times, &maps).unwrap();
            r[1..r.len() - 1].iter().fold(0.0f64, |m, &v| m.max(v))
        };
        let r1 = residual(1e-4, 10);
        let r2 = residual(5e-5, 20);
        assert!(r1 / r2 >= 2.0, "{r1} {r2}");
    }
}
