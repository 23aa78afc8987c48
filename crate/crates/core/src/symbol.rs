//! Principal symbols of the linearized modified flows on 1-forms.
//!
//! On `T^2` the operator is `c d*d + dd*`; on `T^4` it is `c d*d^- + dd*`
//! with `d^- = (1 - *) d / 2`. With the convention `d -> i xi`, the pieces are
//! `sym(dd*) = xi xi^T` and `sym(d*d) = |xi|^2 I - xi xi^T`, while `d* * d`
//! vanishes identically, so `sym(d*d^-) = sym(d*d) / 2`.

use crate::error::{Error, Result};
use crate::forms::KForm;
use crate::grid::{ScalarField, TorusGrid};
use crate::linalg::SmallMat;
use crate::scalar::Real;

/// Symbol of a second-order operator on 1-forms at a covector `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix<T: Real> {
    pub xi: Vec<T>,
    /// Pointwise coefficient in front of the `d*d` part.
    pub coeff: T,
    pub matrix: SmallMat<T>,
}

impl<T: Real> SymbolMatrix<T> {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn det(&self) -> T {
        self.matrix.det()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.matrix
            .symmetric_eigenvalues()
            .into_iter()
            .fold(T::infinity(), |m, v| m.min(v))
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.matrix.mul_vec(v)
    }
}

fn norm2<T: Real>(xi: &[T]) -> T {
    xi.iter().fold(T::zero(), |s, &v| s + v * v)
}

/// `a (|xi|^2 I - xi xi^T) + xi xi^T`.
fn split_symbol<T: Real>(a: T, xi: &[T]) -> SmallMat<T> {
    let x2 = norm2(xi);
    SmallMat::from_fn(xi.len(), |i, j| {
        let d = if i == j { x2 } else { T::zero() };
        a * (d - xi[i] * xi[j]) + xi[i] * xi[j]
    })
}

fn check_coeff<T: Real>(coeff: T) -> Result<()> {
    if coeff > T::zero() {
        Ok(())
    } else {
        Err(Error::NonPositiveCoefficient(coeff.to_f64_lossy()))
    }
}

/// Symbol of `coeff d*d + dd*` on `T^2`:
/// `[[xi_x^2 + c xi_y^2, (1-c) xi_x xi_y], [(1-c) xi_x xi_y, xi_y^2 + c xi_x^2]]`,
/// with determinant `c |xi|^4`.
pub fn symbol_t2<T: Real>(coeff: T, xi: [T; 2]) -> Result<SymbolMatrix<T>> {
    check_coeff(coeff)?;
    Ok(SymbolMatrix {
        xi: xi.to_vec(),
        coeff,
        matrix: split_symbol(coeff, &xi),
    })
}

/// Symbol of `coeff d*d^- + dd*` on `T^4`, determinant `(c/2)^3 |xi|^8`.
pub fn symbol_t4<T: Real>(coeff: T, xi: [T; 4]) -> Result<SymbolMatrix<T>> {
    check_coeff(coeff)?;
    Ok(SymbolMatrix {
        xi: xi.to_vec(),
        coeff,
        matrix: split_symbol(coeff * T::lit(0.5), &xi),
    })
}

/// Symbol of `coeff d*d` alone; its kernel contains `xi` for every `xi`.
pub fn symbol_unmodified<T: Real>(coeff: T, xi: &[T]) -> SymbolMatrix<T> {
    let x2 = norm2(xi);
    let matrix = SmallMat::from_fn(xi.len(), |i, j| {
        let d = if i == j { x2 } else { T::zero() };
        coeff * (d - xi[i] * xi[j])
    })
    .scale(if xi.len() == 4 { T::lit(0.5) } else { T::one() });
    SymbolMatrix {
        xi: xi.to_vec(),
        coeff,
        matrix,
    }
}

/// Closed form of `det symbol_t2` / `det symbol_t4`.
pub fn symbol_det_closed_form<T: Real>(coeff: T, xi: &[T]) -> T {
    let x2 = norm2(xi);
    if xi.len() == 2 {
        coeff * x2 * x2
    } else {
        let h = coeff * T::lit(0.5);
        h * h * h * x2 * x2 * x2 * x2
    }
}

/// Reads off the symbol of a constant-coefficient second-order operator on
/// 1-forms by applying it to the plane waves `cos(2 pi k.x) dx_a`. The
/// returned `xi` is `2 pi k`.
pub fn symbol_probe<T: Real>(
    grid: TorusGrid,
    k: &[i64],
    operator: impl Fn(&KForm<T>) -> Result<KForm<T>>,
) -> Result<SymbolMatrix<T>> {
    let dim = grid.dim();
    if k.len() != dim {
        return Err(Error::DegreeMismatch(format!(
            "wave vector of length {} on a {dim}-torus",
            k.len()
        )));
    }
    let half = (grid.n_per_axis() / 2) as i64;
    if k.iter().all(|&v| v == 0) || k.iter().any(|&v| v.abs() >= half) {
        return Err(Error::Config {
            key: "k".into(),
            message: format!("{k:?} is zero or outside the Nyquist range"),
        });
    }
    let tp = T::lit(2.0 * std::f64::consts::PI);
    let phase = ScalarField::from_fn(grid, |x: &[T]| {
        x.iter()
            .zip(k)
            .fold(T::zero(), |s, (&xa, &ka)| s + tp * T::lit(ka as f64) * xa)
    });
    let wave = phase.map(|p| p.cos());
    let norm = wave.values().iter().fold(T::zero(), |s, &v| s + v * v);
    let mut m = SmallMat::zeros(dim);
    for a in 0..dim {
        let comps = (0..dim)
            .map(|b| {
                if b == a {
                    wave.clone()
                } else {
                    ScalarField::zeros(grid)
                }
            })
            .collect();
        let out = operator(&KForm::one_form(comps)?)?;
        for (b, c) in out.components().iter().enumerate() {
            let proj = c
                .values()
                .iter()
                .zip(wave.values())
                .fold(T::zero(), |s, (&u, &w)| s + u * w);
            m.set(b, a, proj / norm);
        }
    }
    let xi = k.iter().map(|&v| tp * T::lit(v as f64)).collect();
    Ok(SymbolMatrix {
        xi,
        coeff: T::nan(),
        matrix: m,
    })
}

/// Grid-level `coeff d*d + dd*` (`T^2`) or `coeff d*d^- + dd*` (`T^4`).
pub fn modified_operator<T: Real>(coeff: T, alpha: &KForm<T>) -> Result<KForm<T>> {
    let da = alpha.exterior_derivative()?;
    let top = if alpha.grid().dim() == 4 {
        da.sub(&da.hodge_star())?.scale(T::lit(0.5))
    } else {
        da
    };
    let rough = top.codifferential()?.scale(coeff);
    rough.add(&alpha.codifferential()?.exterior_derivative()?)
}

/// Worst relative determinant error and smallest eigenvalue over `samples`
/// random draws of `coeff` log-uniform in `[0.1, 10]` and `xi` in `[-10, 10]^dim`.
pub fn sampled_symbol_check(dim: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    use crate::perturb::{seeded_rng, uniform01, uniform_pm1};
    let mut rng = seeded_rng(seed);
    let (mut worst, mut min_eig) = (0.0f64, f64::INFINITY);
    for _ in 0..samples {
        let coeff = 10f64.powf(2.0 * uniform01(&mut rng) - 1.0);
        let xi: Vec<f64> = (0..dim).map(|_| 10.0 * uniform_pm1(&mut rng)).collect();
        let s = match dim {
            2 => symbol_t2(coeff, [xi[0], xi[1]])?,
            4 => symbol_t4(coeff, [xi[0], xi[1], xi[2], xi[3]])?,
            d => return Err(Error::UnsupportedDimension(d)),
        };
        let exact = symbol_det_closed_form(coeff, &xi);
        worst = worst.max((s.det() - exact).abs() / exact);
        // scale-free ellipticity margin
        min_eig = min_eig.min(s.min_eigenvalue() / norm2(&xi));
    }
    Ok((worst, min_eig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::linearized_velocity_symbol;
    use crate::forms::Structure;
    use proptest::prelude::*;

    #[test]
    fn unit_coefficient_on_t2_is_the_laplacian() {
        let s = symbol_t2(1.0, [0.3, -1.7]).unwrap();
        let x2 = 0.09 + 1.7 * 1.7;
        assert!(s.matrix.max_abs_diff(&SmallMat::identity(2).scale(x2)) < 1e-15);
    }

    #[test]
    fn determinant_examples() {
        assert_eq!(symbol_t2(4.0, [1.0, 0.0]).unwrap().det(), 4.0);
        assert_eq!(symbol_t4(2.0, [1.0, 0.0, 0.0, 0.0]).unwrap().det(), 1.0);
        let z = symbol_t4(3.0, [0.0; 4]).unwrap();
        assert_eq!(z.matrix, SmallMat::zeros(4));
        assert_eq!(z.det(), 0.0);
    }

    #[test]
    fn non_positive_coefficient_is_rejected() {
        assert!(matches!(
            symbol_t2(0.0, [1.0, 1.0]),
            Err(Error::NonPositiveCoefficient(_))
        ));
        assert!(matches!(
            symbol_t4(-1.0, [1.0; 4]),
            Err(Error::NonPositiveCoefficient(_))
        ));
    }

    #[test]
    fn t2_second_diagonal_entry() {
        let (c, x, y) = (3.0, 0.5, 2.0);
        let s = symbol_t2(c, [x, y]).unwrap();
        assert_eq!(s.matrix.get(1, 1), y * y + c * x * x);
        assert_eq!(s.matrix.get(0, 0), x * x + c * y * y);
        assert_eq!(s.matrix.get(0, 1), (1.0 - c) * x * y);
    }

    #[test]
    fn sampled_determinants_and_positivity() {
        let (e2, m2) = sampled_symbol_check(2, 1000, 11).unwrap();
        let (e4, m4) = sampled_symbol_check(4, 1000, 12).unwrap();
        assert!(e2 <= 1e-13, "{e2}");
        assert!(e4 <= 1e-12, "{e4}");
        assert!(m2 > 0.0 && m4 > 0.0);
    }

    #[test]
    fn probe_of_hodge_laplacian() {
        let g = TorusGrid::new(2, 16).unwrap();
        let s = symbol_probe::<f64>(g, &[3, 0], |a| modified_operator(1.0, a)).unwrap();
        let expect = (2.0 * std::f64::consts::PI * 3.0).powi(2);
        assert!(s.matrix.max_abs_diff(&SmallMat::identity(2).scale(expect)) < 1e-10 * expect);
    }

    #[test]
    fn probes_match_closed_forms() {
        let g2 = TorusGrid::new(2, 16).unwrap();
        let p = symbol_probe::<f64>(g2, &[2, -3], |a| modified_operator(2.5, a)).unwrap();
        let s = symbol_t2(2.5, [p.xi[0], p.xi[1]]).unwrap();
        let scale = s.matrix.max_abs_diff(&SmallMat::zeros(2));
        assert!(p.matrix.max_abs_diff(&s.matrix) <= 1e-10 * scale);

        let g4 = TorusGrid::new(4, 8).unwrap();
        for k in [[1, 0, 0, 0], [1, -2, 3, 1], [0, 2, 1, -1]] {
            let p = symbol_probe::<f64>(g4, &k, |a| modified_operator(0.7, a)).unwrap();
            let s = symbol_t4(0.7, [p.xi[0], p.xi[1], p.xi[2], p.xi[3]]).unwrap();
            let scale = s.matrix.max_abs_diff(&SmallMat::zeros(4));
            assert!(p.matrix.max_abs_diff(&s.matrix) <= 1e-10 * scale, "{k:?}");
        }
    }

    #[test]
    fn probe_rejects_out_of_range_modes() {
        let g = TorusGrid::new(2, 8).unwrap();
        assert!(symbol_probe::<f64>(g, &[4, 0], |a| modified_operator(1.0, a)).is_err());
        assert!(symbol_probe::<f64>(g, &[0, 0], |a| modified_operator(1.0, a)).is_err());
    }

    #[test]
    fn unmodified_operator_kills_the_longitudinal_direction() {
        let g = TorusGrid::new(4, 8).unwrap();
        let k = [1, 2, 0, -1];
        let p = symbol_probe::<f64>(g, &k, |a| {
            let da = a.exterior_derivative()?;
            Ok(da
                .sub(&da.hodge_star())?
                .scale(0.5)
                .codifferential()?
                .scale(1.3))
        })
        .unwrap();
        let image = p.apply(&p.xi);
        let x2 = norm2(&p.xi);
        assert!(image.iter().all(|v| v.abs() < 1e-10 * x2), "{image:?}");
        let closed = symbol_unmodified(1.3, &p.xi);
        assert!(p.matrix.max_abs_diff(&closed.matrix) < 1e-10 * x2);
        assert!(closed.apply(&p.xi).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn flow_linearization_is_minus_the_unit_symbol_on_covectors() {
        // flat = -Omega on T^4, the rotation J on T^2; both are orthogonal
        for (dim, structure) in [(2, Structure::Sigma), (4, Structure::Omega)] {
            let flat = structure.flat_matrix::<f64>(dim).unwrap();
            let sharp = structure.sharp_matrix::<f64>(dim).unwrap();
            let xi: Vec<f64> = (0..dim).map(|a| 0.7 - 0.9 * a as f64).collect();
            let v = linearized_velocity_symbol(&xi);
            let on_forms = flat.mul(&v).mul(&sharp).scale(-1.0);
            let s = if dim == 2 {
                symbol_t2(1.0, [xi[0], xi[1]])
            } else {
                symbol_t4(1.0, [xi[0], xi[1], xi[2], xi[3]])
            };
            assert!(
                on_forms.max_abs_diff(&s.unwrap().matrix) < 1e-13,
                "dim {dim}"
            );
        }
    }

    proptest! {
        #[test]
        fn symbols_are_symmetric_quadratic_and_elliptic(
            c in 0.01f64..10.0,
            xi in proptest::collection::vec(-5.0f64..5.0, 4),
            t in 0.1f64..3.0,
        ) {
            prop_assume!(norm2(&xi) > 1e-3);
            let s = symbol_t4(c, [xi[0], xi[1], xi[2], xi[3]]).unwrap();
            prop_assert!(s.matrix.is_symmetric(0.0));
            let scaled = symbol_t4(c, [t * xi[0], t * xi[1], t * xi[2], t * xi[3]]).unwrap();
            prop_assert!(scaled.matrix.max_abs_diff(&s.matrix.scale(t * t)) <= 1e-12 * t * t * norm2(&xi));
            prop_assert!(s.min_eigenvalue() > 0.0);
            let s2 = symbol_t2(c, [xi[0], xi[1]]);
            if xi[0] * xi[0] + xi[1] * xi[1] > 1e-3 {
                prop_assert!(s2.unwrap().min_eigenvalue() > 0.0);
            }
        }
    }
}
