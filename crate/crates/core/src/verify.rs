//! Verification suites: each check measures an error against a threshold.
//!
//! The `fast` level runs small grids and is meant for a quick sanity pass;
//! `full` runs the production resolutions and adds the `T^4` inversion and
//! short flow runs.

use std::fmt;
use std::time::Instant;

use crate::error::Result;
use crate::flow::{run, RunConfig};
use crate::forms::{
    asd_split, binomial, codifferential_with, exterior_derivative, hodge_star, l2_inner,
    ConstantStructures, KForm, VectorField,
};
use crate::grid::{ScalarField, TorusGrid};
use crate::maps::{compose, compose_scalar, inverse, pushforward_vector, TorusMap};
use crate::moment::{energy, energy_t4_via_inverse, gradient, moment_hk, moment_sup, moment_t2};
use crate::perturb::{random_displacement, random_smooth_field, seeded_rng, HamiltonianGenerator};
use crate::symbol::{modified_operator, sampled_symbol_check, symbol_probe, symbol_t2, symbol_t4};

const TP: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Level {
    #[default]
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level {other:?} (expected fast or full)")),
        }
    }
}

/// One measured quantity. `passed` is `measured <= threshold` unless the
/// check is a lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub lower_bound: bool,
    pub passed: bool,
}

impl CheckResult {
    pub fn at_most(suite: &str, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        let passed = measured <= threshold;
        Self {
            suite: suite.into(),
            name: name.into(),
            measured,
            threshold,
            lower_bound: false,
            passed,
        }
    }

    pub fn at_least(suite: &str, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        let passed = measured >= threshold;
        Self {
            suite: suite.into(),
            name: name.into(),
            measured,
            threshold,
            lower_bound: true,
            passed,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.lower_bound { ">=" } else { "<=" };
        write!(
            f,
            "[{}] {}/{}: {:.3e} {op} {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub level: Level,
    pub results: Vec<CheckResult>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.results.iter().find(|r| !r.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        write!(
            f,
            "{} checks, {failed} failed, {:.1} s",
            self.results.len(),
            self.seconds
        )
    }
}

fn random_form(
    g: TorusGrid,
    k: usize,
    band: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> KForm<f64> {
    let comps = (0..binomial(g.dim(), k))
        .map(|_| random_smooth_field(g, band, 1.0, rng))
        .collect();
    KForm::new(g, k, comps).expect("component count")
}

fn l2_norm(a: &KForm<f64>) -> f64 {
    l2_inner(a, a).expect("same shape").sqrt()
}

/// Star with the sign flipped on 1-forms only. A global flip cancels inside
/// `d* = +- * d *`; this one does not, so adjointness must fail with it.
pub fn flipped_star(a: &KForm<f64>) -> KForm<f64> {
    let s = hodge_star(a);
    if a.degree() == 1 {
        s.scale(-1.0)
    } else {
        s
    }
}

const BAND: usize = 3;

/// `d^2 = 0`, `(d*)^2 = 0`, `** = (-1)^{k(n-k)}` and `<d a, b> = <a, d* b>`,
/// with `d*` assembled from `star`. Derivative errors are relative to
/// `max|a| (2 pi band)^2`; adjointness is relative to `|da| |b|`.
pub fn exterior_calculus(
    grid: TorusGrid,
    star: impl Fn(&KForm<f64>) -> KForm<f64>,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let suite = format!("forms-T{}", grid.dim());
    let n = grid.dim();
    let mut rng = seeded_rng(seed);
    let scale2 = (TP * BAND as f64).powi(2);
    let (mut dd, mut cc, mut ss, mut adj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..=n {
        let a = random_form(grid, k, BAND, &mut rng);
        if k + 2 <= n {
            let r =
                exterior_derivative(&exterior_derivative(&a)?)?.max_abs() / (a.max_abs() * scale2);
            dd = dd.max(r);
        }
        if k >= 2 {
            let r = codifferential_with(&codifferential_with(&a, &star)?, &star)?.max_abs()
                / (a.max_abs() * scale2);
            cc = cc.max(r);
        }
        let sign = if (k * (n - k)).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        ss = ss.max(star(&star(&a)).sub(&a.scale(sign))?.max_abs() / a.max_abs());
        if k < n {
            // b carries a component along da so a sign error cannot hide in a
            // small correlation
            let da = exterior_derivative(&a)?;
            let r = random_form(grid, k + 1, BAND, &mut rng);
            let b = r.add(&da.scale(l2_norm(&r) / l2_norm(&da)))?;
            let lhs = l2_inner(&da, &b)?;
            let rhs = l2_inner(&a, &codifferential_with(&b, &star)?)?;
            adj = adj.max((lhs - rhs).abs() / (l2_norm(&da) * l2_norm(&b)));
        }
    }
    Ok(vec![
        CheckResult::at_most(&suite, "d^2 = 0", dd, 1e-10),
        CheckResult::at_most(&suite, "(d*)^2 = 0", cc, 1e-10),
        CheckResult::at_most(&suite, "star-star sign law", ss, 1e-10),
        CheckResult::at_most(&suite, "adjointness", adj, 1e-10),
    ])
}

/// Anti-self-duality and orthogonality of the constant triple, and the star
/// table on the basis 2-forms; all exact.
pub fn structure_identities() -> Vec<CheckResult> {
    let s = ConstantStructures::<f64>::new();
    let triple = s.triple();
    let asd = triple.iter().fold(0.0f64, |m, w| {
        m.max(
            w.hodge_star()
                .add(w)
                .coeffs()
                .iter()
                .fold(0.0, |a, v| a.max(v.abs())),
        )
    });
    let mut orth = 0.0f64;
    for i in 0..3 {
        for j in (i + 1)..3 {
            orth = orth.max(triple[i].inner(triple[j]).abs());
        }
    }
    let norms = triple
        .iter()
        .fold(0.0f64, |m, w| m.max((w.inner(w) - 2.0).abs()));
    let basis = |idx: &[usize]| crate::forms::ConstantForm::<f64>::from_terms(4, &[(1.0, idx)]);
    let table: [(&[usize], f64, &[usize]); 3] = [
        (&[1, 2], 1.0, &[3, 4]),
        (&[1, 3], -1.0, &[2, 4]),
        (&[1, 4], 1.0, &[2, 3]),
    ];
    let star_err = table.iter().fold(0.0f64, |m, (from, sign, to)| {
        m.max(
            basis(from)
                .hodge_star()
                .max_abs_diff(&basis(to).scale(*sign)),
        )
    });
    vec![
        CheckResult::at_most("structures", "triple anti-self-dual", asd, 0.0),
        CheckResult::at_most("structures", "triple pairwise orthogonal", orth, 0.0),
        CheckResult::at_most("structures", "triple norms equal", norms, 0.0),
        CheckResult::at_most("structures", "star table", star_err, 0.0),
    ]
}

/// `| |(da)^+|^2 - |(da)^-|^2 | / |da|^2` over random 1-forms on `T^4`.
pub fn self_dual_balance(grid: TorusGrid, count: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let a = random_form(grid, 1, BAND, &mut rng);
        let da = exterior_derivative(&a)?;
        let (p, m) = asd_split(&da)?;
        let total = l2_inner(&da, &da)?;
        worst = worst.max((l2_inner(&p, &p)? - l2_inner(&m, &m)?).abs() / total);
    }
    Ok(CheckResult::at_most(
        "forms-T4",
        format!("exact 2-forms balanced ({count} samples)"),
        worst,
        1e-8,
    ))
}

/// Determinant identities and positivity over random draws, plus plane-wave probes.
pub fn symbol_suite(samples: usize) -> Result<Vec<CheckResult>> {
    let (e2, m2) = sampled_symbol_check(2, samples, 101)?;
    let (e4, m4) = sampled_symbol_check(4, samples, 102)?;
    let mut probe = 0.0f64;
    for (dim, n, k) in [(2, 16, vec![2i64, -3]), (4, 8, vec![1, -2, 3, 1])] {
        let g = TorusGrid::new(dim, n)?;
        let p = symbol_probe::<f64>(g, &k, |a| modified_operator(1.7, a))?;
        let exact = if dim == 2 {
            symbol_t2(1.7, [p.xi[0], p.xi[1]])?
        } else {
            symbol_t4(1.7, [p.xi[0], p.xi[1], p.xi[2], p.xi[3]])?
        };
        let scale = exact
            .matrix
            .max_abs_diff(&crate::linalg::SmallMat::zeros(dim));
        probe = probe.max(p.matrix.max_abs_diff(&exact.matrix) / scale);
    }
    Ok(vec![
        CheckResult::at_most("symbol", "T2 determinant", e2, 1e-12),
        CheckResult::at_most("symbol", "T4 determinant", e4, 1e-12),
        CheckResult::at_least(
            "symbol",
            "T2 min eigenvalue / |xi|^2",
            m2,
            f64::MIN_POSITIVE,
        ),
        CheckResult::at_least(
            "symbol",
            "T4 min eigenvalue / |xi|^2",
            m4,
            f64::MIN_POSITIVE,
        ),
        CheckResult::at_most("symbol", "plane-wave probe", probe, 1e-10),
    ])
}

/// Central differences of the energy at `s` along the variation `Df Y`.
fn directional_fd(f: &TorusMap<f64>, delta: &VectorField<f64>, s: f64) -> Result<f64> {
    Ok((energy(&f.perturbed(s, delta))? - energy(&f.perturbed(-s, delta))?) / (2.0 * s))
}

/// Worst relative mismatch between `G(grad phi, f_* Y)` and central
/// differences of `phi`, each read at the plateau of the step-size sweep
/// (the step whose value changes least when the step shrinks tenfold).
pub fn gradient_oracle(
    grid: TorusGrid,
    maps: usize,
    directions: usize,
    seed: u64,
) -> Result<CheckResult> {
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0f64;
    for m in 0..maps {
        let f = random_displacement::<f64>(grid, 0.05, seed.wrapping_add(1 + m as u64))?;
        let grad = gradient(&f)?;
        let jac = f.jacobian();
        for _ in 0..directions {
            let y = VectorField::new(
                (0..grid.dim())
                    .map(|_| random_smooth_field(grid, 2, 1.0, &mut rng))
                    .collect(),
            )?;
            let want = grad.inner(&pushforward_vector(&f, &y)?);
            let delta = jac.apply(&y);
            let steps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
            let fd: Vec<f64> = steps
                .iter()
                .map(|&s| directional_fd(&f, &delta, s))
                .collect::<Result<_>>()?;
            let plateau = (0..fd.len() - 1)
                .min_by(|&a, &b| {
                    (fd[a] - fd[a + 1])
                        .abs()
                        .total_cmp(&(fd[b] - fd[b + 1]).abs())
                })
                .expect("several steps");
            worst = worst.max((fd[plateau] - want).abs() / want.abs());
        }
    }
    Ok(CheckResult::at_most(
        &format!("gradient-T{}", grid.dim()),
        format!("finite differences ({maps} maps x {directions} directions)"),
        worst,
        1e-4,
    ))
}

/// `max_c sum |k_2pi|^power |u^c_k|` over modes with `max_a |k_a| > n/4`:
/// the part of the derivative spectrum in the outer half of the resolved
/// band, which bounds the truncation error of quantities built from `Df`
/// (`power = 1`) or its derivative (`power = 2`).
pub fn resolution_floor(f: &TorusMap<f64>, power: i32) -> f64 {
    let g = *f.grid();
    let quarter = (g.n_per_axis() / 4) as i64;
    let mut worst = 0.0f64;
    for c in f.displacement().components() {
        let s = c.spectrum();
        let mut acc = 0.0;
        for (i, z) in s.coeffs().iter().enumerate() {
            let k: Vec<i64> = (0..g.dim()).map(|a| g.mode(i, a)).collect();
            if k.iter().any(|v| v.abs() > quarter) {
                let k2: i64 = k.iter().map(|v| v * v).sum();
                acc += z.norm() * (TP * (k2 as f64).sqrt()).powi(power);
            }
        }
        worst = worst.max(acc);
    }
    worst
}

/// Identity and Hamiltonian flow maps at `n` and `2n`: `|grad phi|` and
/// `max|mu|` against five times the resolution floor, and the floor's decay.
pub fn fixed_points(dim: usize, n: usize, amplitude: f64, seed: u64) -> Result<Vec<CheckResult>> {
    let suite = format!("fixed-points-T{dim}");
    let h = HamiltonianGenerator::random(dim, 3, 2, amplitude, seed);
    let mut out = Vec::new();
    let mut floors = Vec::new();
    for res in [n, 2 * n] {
        let g = TorusGrid::new(dim, res)?;
        let id = TorusMap::<f64>::identity(g);
        out.push(CheckResult::at_most(
            &suite,
            format!("identity |grad| n={res}"),
            gradient(&id)?.norm(),
            0.0,
        ));
        out.push(CheckResult::at_most(
            &suite,
            format!("identity max|mu| n={res}"),
            moment_sup(&id)?,
            0.0,
        ));
        let f = h.flow_map::<f64>(g, 1.0, 64)?;
        let (f1, f2) = (resolution_floor(&f, 1), resolution_floor(&f, 2));
        out.push(CheckResult::at_most(
            &suite,
            format!("max|mu| / floor n={res}"),
            moment_sup(&f)? / f1,
            5.0,
        ));
        out.push(CheckResult::at_most(
            &suite,
            format!("|grad| / floor n={res}"),
            gradient(&f)?.norm() / f2,
            5.0,
        ));
        floors.push((f1, f2));
    }
    out.push(CheckResult::at_least(
        &suite,
        "mu floor decay on doubling",
        floors[0].0 / floors[1].0,
        4.0,
    ));
    out.push(CheckResult::at_least(
        &suite,
        "gradient floor decay on doubling",
        floors[0].1 / floors[1].1,
        4.0,
    ));
    Ok(out)
}

/// Smooth test map with a few low modes, identical at every resolution.
pub fn reference_map(grid: TorusGrid) -> Result<TorusMap<f64>> {
    let dim = grid.dim();
    TorusMap::from_displacement_fn(grid, move |x: &[f64]| {
        (0..dim)
            .map(|c| {
                let a = (c + 1) % dim;
                let b = (c + 2) % dim;
                0.03 * (TP * x[a]).sin() + 0.02 * (TP * (x[b] - x[c]) + 0.3 * c as f64).cos()
            })
            .collect()
    })
}

/// `(|phi(f o psi) - phi(f)|, max|mu(f o psi) - mu(f) o psi|)` with `psi` the
/// time-one flow map of a random Hamiltonian of the given amplitude,
/// integrated in `steps` steps.
pub fn equivariance_defects(
    grid: TorusGrid,
    steps: usize,
    amplitude: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let f = reference_map(grid)?;
    let psi = HamiltonianGenerator::random(grid.dim(), 3, 2, amplitude, seed)
        .flow_map::<f64>(grid, 1.0, steps)?;
    let fp = compose(&f, &psi)?;
    let phi_err = (energy(&fp)? - energy(&f)?).abs();
    let before: Vec<ScalarField<f64>> = match grid.dim() {
        2 => vec![moment_t2(&f)?.mu],
        _ => moment_hk(&f)?.to_vec(),
    };
    let after: Vec<ScalarField<f64>> = match grid.dim() {
        2 => vec![moment_t2(&fp)?.mu],
        _ => moment_hk(&fp)?.to_vec(),
    };
    let mu_err = before.iter().zip(&after).fold(0.0f64, |m, (b, a)| {
        m.max((&compose_scalar(b, &psi) - a).max_abs())
    });
    Ok((phi_err, mu_err))
}

/// Equivariance defects at `(n, steps)` and `(2n, 2 steps)` and their decay.
pub fn equivariance(
    dim: usize,
    n: usize,
    steps: usize,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let suite = format!("equivariance-T{dim}");
    let coarse = equivariance_defects(TorusGrid::new(dim, n)?, steps, amplitude, seed)?;
    let fine = equivariance_defects(TorusGrid::new(dim, 2 * n)?, 2 * steps, amplitude, seed)?;
    Ok(vec![
        CheckResult::at_least(
            &suite,
            format!("phi defect decay (n={n}: {:.2e})", coarse.0),
            coarse.0 / fine.0,
            4.0,
        ),
        CheckResult::at_least(
            &suite,
            format!("mu defect decay (n={n}: {:.2e})", coarse.1),
            coarse.1 / fine.1,
            4.0,
        ),
    ])
}

/// Newton inverse on `T^4` and the energy through the inverse pipeline.
pub fn inversion_suite(n: usize, tol: f64) -> Result<Vec<CheckResult>> {
    let g = TorusGrid::new(4, n)?;
    let f = reference_map(g)?.into_displacement().scale(0.3);
    let f = TorusMap::new(f)?;
    let inv = inverse(&f, tol)?;
    let round = compose(&f, &inv)?.displacement().max_abs();
    let e = energy(&f)?;
    let e_inv = energy_t4_via_inverse(&f, tol)?;
    Ok(vec![
        CheckResult::at_most("inversion-T4", "f o f^-1 = id", round, 1e-8),
        CheckResult::at_most(
            "inversion-T4",
            "energy through the inverse",
            (e - e_inv).abs() / e,
            1e-6,
        ),
    ])
}

/// Short flow runs: monotone energy, and on `T^2` the gauge study.
pub fn flow_suite(n2: usize, n4: usize, steps4: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let cfg = RunConfig {
        amplitude: 0.02,
        seed: 3,
        t_end: 2e-3,
        gauge_steps: Some(8),
        ..RunConfig::new(2, n2, 0.0)
    };
    let r = run::<f64>(&cfg)?;
    let up = r
        .records
        .windows(2)
        .filter(|w| w[1].phi >= w[0].phi)
        .count();
    out.push(CheckResult::at_most(
        "flow-T2",
        "non-decreasing steps",
        up as f64,
        0.0,
    ));
    out.push(CheckResult::at_most(
        "flow-T2",
        "aborted",
        r.aborted.is_some() as u8 as f64,
        0.0,
    ));
    let (c, f) = r.residuals.unwrap_or((0.0, f64::INFINITY));
    out.push(CheckResult::at_least(
        "flow-T2",
        "residual ratio dt/(dt/2)",
        c / f,
        2.0,
    ));
    out.push(CheckResult::at_most(
        "flow-T2",
        "gauge density error",
        r.gauge_density_error.unwrap_or(f64::INFINITY),
        1e-6,
    ));

    let cfg = RunConfig {
        amplitude: 0.02,
        seed: 4,
        t_end: 10.0,
        max_steps: Some(steps4),
        ..RunConfig::new(4, n4, 0.0)
    };
    let r = run::<f64>(&cfg)?;
    let up = r
        .records
        .windows(2)
        .filter(|w| w[1].phi >= w[0].phi)
        .count();
    out.push(CheckResult::at_most(
        "flow-T4",
        "non-decreasing steps",
        up as f64,
        0.0,
    ));
    out.push(CheckResult::at_least(
        "flow-T4",
        "accepted steps",
        r.steps() as f64,
        steps4 as f64,
    ));
    Ok(out)
}

pub fn run_suite(level: Level) -> Result<Report> {
    let start = Instant::now();
    let mut results = Vec::new();
    let (n2, n4) = match level {
        Level::Fast => (16, 8),
        Level::Full => (32, 16),
    };
    results.extend(exterior_calculus(TorusGrid::new(2, n2)?, hodge_star, 1)?);
    results.extend(exterior_calculus(TorusGrid::new(4, n4)?, hodge_star, 2)?);
    results.extend(structure_identities());
    results.push(self_dual_balance(
        TorusGrid::new(4, 8.max(n4 / 2))?,
        100,
        3,
    )?);
    results.extend(symbol_suite(10_000)?);
    let (maps, dirs) = match level {
        Level::Fast => (2, 5),
        Level::Full => (5, 20),
    };
    results.push(gradient_oracle(TorusGrid::new(2, 32)?, maps, dirs, 4)?);
    results.push(gradient_oracle(TorusGrid::new(4, 8)?, maps, dirs, 5)?);
    results.extend(fixed_points(2, 16, 0.02, 9)?);
    results.extend(fixed_points(4, 8, 0.002, 9)?);
    results.extend(equivariance(2, 16, 8, 0.01, 6)?);
    results.extend(equivariance(4, 8, 8, 0.004, 7)?);
    if level == Level::Full {
        results.extend(inversion_suite(8, 1e-12)?);
        results.extend(flow_suite(32, 8, 40)?);
    }
    Ok(Report {
        level,
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exterior_calculus_passes_with_the_library_star() {
        for (dim, n) in [(2, 16), (4, 8)] {
            let r = exterior_calculus(TorusGrid::new(dim, n).unwrap(), hodge_star, 1).unwrap();
            assert!(r.iter().all(|c| c.passed), "{r:?}");
        }
    }

    #[test]
    fn flipped_star_breaks_adjointness() {
        for (dim, n) in [(2, 16), (4, 8)] {
            let r = exterior_calculus(TorusGrid::new(dim, n).unwrap(), flipped_star, 1).unwrap();
            let adj = r.iter().find(|c| c.name == "adjointness").unwrap();
            assert!(!adj.passed && adj.measured > 0.1, "{adj}");
        }
    }

    #[test]
    fn structures_are_exact() {
        assert!(structure_identities().iter().all(|c| c.passed));
    }

    #[test]
    fn floors_vanish_for_band_limited_maps() {
        let g = TorusGrid::new(2, 16).unwrap();
        assert_eq!(resolution_floor(&TorusMap::identity(g), 1), 0.0);
        let f = reference_map(g).unwrap();
        assert!(resolution_floor(&f, 2) < 1e-12);
    }

    #[test]
    fn level_parsing_and_rendering() {
        assert_eq!("full".parse::<Level>().unwrap(), Level::Full);
        assert!("slow".parse::<Level>().is_err());
        let c = CheckResult::at_most("s", "x", 2.0, 1.0);
        assert!(!c.passed);
        assert!(c.to_string().starts_with("[FAIL] s/x"));
        let rep = Report {
            level: Level::Fast,
            results: vec![CheckResult::at_least("s", "y", 2.0, 1.0), c],
            seconds: 0.0,
        };
        assert!(!rep.passed());
        assert_eq!(rep.first_failure().unwrap().name, "x");
    }
}
