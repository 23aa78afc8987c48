//! Run configuration and the end-to-end driver: integrate the modified flow,
//! then reconstruct the gauge on an initial window and measure how the
//! equivalence residual shrinks with the step size.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    auto_dt_for, deturck_residuals, gauge_reconstruct, reconstruct_trajectory, step, FlowState,
    Integrator, StepOptions, StepRecord,
};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::maps::TorusMap;
use crate::perturb::{random_displacement, HamiltonianGenerator};
use crate::scalar::Real;

/// Time step: fixed, or re-derived from the current density every step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DtSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for DtSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DtSetting::Auto => s.serialize_str("auto"),
            DtSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DtSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(DtSetting::Fixed(v)),
            Repr::Text(t) if t == "auto" => Ok(DtSetting::Auto),
            Repr::Text(t) => t.parse::<f64>().map(DtSetting::Fixed).map_err(|_| {
                serde::de::Error::custom(format!("expected a number or \"auto\", got {t:?}"))
            }),
        }
    }
}

/// Initial data family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    /// `id + u`, `u` band-limited to `n/8` with `max |u| = amplitude`.
    #[default]
    Random,
    /// Time-one flow of a random trigonometric Hamiltonian of the given amplitude.
    Hamiltonian,
    /// The identity.
    None,
}

fn default_inverse_tol() -> f64 {
    1e-10
}
fn default_amplitude() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_phi_rtol() -> f64 {
    1e-20
}

/// Flat JSON run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    /// Points per axis.
    pub n: usize,
    #[serde(default)]
    pub dt: DtSetting,
    pub t_end: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub perturbation: PerturbationKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    /// Newton tolerance for the inverse-map cross-checks.
    #[serde(default = "default_inverse_tol")]
    pub inverse_tol: f64,
    /// Two-thirds-rule filtering of the velocity.
    #[serde(default = "default_true")]
    pub dealias: bool,
    /// Stop once `phi <= phi_rtol * phi(0)`; `0` disables the test.
    #[serde(default = "default_phi_rtol")]
    pub phi_rtol: f64,
    /// Accepted steps covered by gauge reconstruction and the residual
    /// refinement study; defaults to 10 on `T^2` and 0 on `T^4`.
    #[serde(default)]
    pub gauge_steps: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Output directory for the CLI (diagnostics, summary, snapshots).
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Write a snapshot of the map every this many accepted steps; `0` = never.
    #[serde(default)]
    pub snapshot_every: usize,
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Config with every optional key at its default.
    pub fn new(dim: usize, n: usize, t_end: f64) -> Self {
        Self {
            dim,
            n,
            dt: DtSetting::Auto,
            t_end,
            integrator: Integrator::Rk4,
            perturbation: PerturbationKind::Random,
            amplitude: default_amplitude(),
            seed: 0,
            inverse_tol: default_inverse_tol(),
            dealias: true,
            phi_rtol: default_phi_rtol(),
            gauge_steps: None,
            max_steps: None,
            out_dir: None,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 4 {
            return Err(invalid(
                "dim",
                format!("unsupported dimension {} (expected 2 or 4)", self.dim),
            ));
        }
        if TorusGrid::new(self.dim, self.n).is_err() {
            return Err(invalid(
                "n",
                format!("{} is not a power of two >= 8", self.n),
            ));
        }
        if let DtSetting::Fixed(v) = self.dt {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(
                    "dt",
                    format!("must be positive or \"auto\", got {v}"),
                ));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid(
                "t_end",
                format!("must be positive, got {}", self.t_end),
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid(
                "amplitude",
                format!("must be non-negative, got {}", self.amplitude),
            ));
        }
        if !(self.inverse_tol > 0.0 && self.inverse_tol.is_finite()) {
            return Err(invalid(
                "inverse_tol",
                format!("must be positive, got {}", self.inverse_tol),
            ));
        }
        if !(0.0..1.0).contains(&self.phi_rtol) {
            return Err(invalid(
                "phi_rtol",
                format!("must lie in [0, 1), got {}", self.phi_rtol),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.dim, self.n)
    }

    pub fn gauge_window(&self) -> usize {
        self.gauge_steps
            .unwrap_or(if self.dim == 2 { 10 } else { 0 })
    }

    /// Initial map; a perturbation too large for `det Df > 0` is reported
    /// against the `amplitude` key.
    pub fn initial_map<T: Real>(&self) -> Result<TorusMap<T>> {
        let grid = self.grid()?;
        let f = match self.perturbation {
            PerturbationKind::None => Ok(TorusMap::identity(grid)),
            _ if self.amplitude == 0.0 => Ok(TorusMap::identity(grid)),
            PerturbationKind::Random => {
                random_displacement(grid, T::lit(self.amplitude), self.seed)
            }
            PerturbationKind::Hamiltonian => {
                HamiltonianGenerator::random(self.dim, 3, 2, self.amplitude, self.seed)
                    .flow_map(grid, 1.0, 64)
            }
        };
        f.map_err(|e| match e {
            Error::NonPositiveJacobian { .. } => invalid(
                "amplitude",
                format!("initial map is not orientation preserving: {e}"),
            ),
            other => other,
        })
    }

    fn step_options<T: Real>(&self) -> StepOptions<T> {
        StepOptions {
            integrator: self.integrator,
            dealias: self.dealias,
            ..Default::default()
        }
    }
}

/// JSON summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "phi0")]
    pub phi0: f64,
    #[serde(rename = "phiT")]
    pub phi_t: f64,
    pub steps: usize,
    pub aborted: bool,
    pub residual_order: Option<f64>,
    pub t_final: f64,
    pub rejected: usize,
    pub converged: bool,
    pub abort_reason: Option<String>,
    pub residual_coarse: Option<f64>,
    pub residual_fine: Option<f64>,
    pub gauge_density_error: Option<f64>,
}

/// Trajectory diagnostics and the outcome of the residual study.
#[derive(Debug, Clone)]
pub struct RunOutcome<T: Real> {
    pub records: Vec<StepRecord<T>>,
    pub initial: TorusMap<T>,
    pub final_map: TorusMap<T>,
    pub rejected: usize,
    pub converged: bool,
    pub aborted: Option<Error>,
    /// Max interior residual on the window at the run's steps and at half steps.
    pub residuals: Option<(T, T)>,
    pub gauge_density_error: Option<T>,
}

impl<T: Real> RunOutcome<T> {
    pub fn phi0(&self) -> T {
        self.records[0].phi
    }

    pub fn phi_final(&self) -> T {
        self.records.last().expect("initial record").phi
    }

    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    /// `log2(r(dt) / r(dt/2))`.
    pub fn residual_order(&self) -> Option<f64> {
        self.residuals
            .map(|(c, f)| (c.to_f64_lossy() / f.to_f64_lossy()).log2())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            phi0: self.phi0().to_f64_lossy(),
            phi_t: self.phi_final().to_f64_lossy(),
            steps: self.steps(),
            aborted: self.aborted.is_some(),
            residual_order: self.residual_order(),
            t_final: self
                .records
                .last()
                .expect("initial record")
                .t
                .to_f64_lossy(),
            rejected: self.rejected,
            converged: self.converged,
            abort_reason: self.aborted.as_ref().map(|e| e.to_string()),
            residual_coarse: self.residuals.map(|r| r.0.to_f64_lossy()),
            residual_fine: self.residuals.map(|r| r.1.to_f64_lossy()),
            gauge_density_error: self.gauge_density_error.map(|v| v.to_f64_lossy()),
        }
    }
}

/// [`run_with_observer`] without an observer.
pub fn run<T: Real>(cfg: &RunConfig) -> Result<RunOutcome<T>> {
    run_with_observer(cfg, |_| Ok(()))
}

/// Integrates the configured flow. `observer` sees the initial state and
/// every accepted state. Configuration problems are errors; an integrator
/// abort ends the run early and is reported in [`RunOutcome::aborted`].
pub fn run_with_observer<T: Real>(
    cfg: &RunConfig,
    mut observer: impl FnMut(&FlowState<T>) -> Result<()>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    for (s, dim) in [(super::Structure::Sigma, 2), (super::Structure::Omega, 4)] {
        let r: T = super::linear_lift_coclosed_residual(s, dim)?;
        if r != T::zero() {
            return Err(Error::Config {
                key: "self-test".into(),
                message: format!("linear lift not coclosed: {}", r.to_f64_lossy()),
            });
        }
    }
    let f0 = cfg.initial_map::<T>()?;
    let window = cfg.gauge_window();
    let mut opts = cfg.step_options::<T>();
    opts.record_gauge = window > 0;
    let mut st = FlowState::new(f0.clone(), &opts)?;
    observer(&st)?;
    let phi0 = st.phi();
    let t_end = T::lit(cfg.t_end);
    let rtol = T::lit(cfg.phi_rtol);
    let mut converged = false;
    let mut aborted = None;
    loop {
        if st.t >= t_end * (T::one() - T::lit(1e-12)) {
            break;
        }
        if cfg.phi_rtol > 0.0 && st.phi() <= rtol * phi0 {
            converged = true;
            break;
        }
        if cfg.max_steps.is_some_and(|m| st.accepted_steps() >= m) {
            break;
        }
        if st.accepted_steps() >= window {
            opts.record_gauge = false;
        }
        let dt = nominal_dt(cfg, &st).min(t_end - st.t);
        match step(&mut st, dt, &opts) {
            Ok(_) => observer(&st)?,
            Err(e) => {
                aborted = Some(e);
                break;
            }
        }
    }

    let mut records = st.diagnostics.clone();
    let (mut residuals, mut gauge_density_error) = (None, None);
    if window > 0 && st.history.len() >= 3 {
        let coarse = window_residuals(&st.history)?;
        for (rec, r) in records.iter_mut().zip(&coarse.0) {
            rec.residual = Some(*r);
        }
        gauge_density_error = Some(coarse.2);
        let steps: Vec<T> = st.history.windows(2).map(|w| w[1].t - w[0].t).collect();
        let fine = refined_window(&f0, &steps, &opts)?;
        residuals = Some((coarse.1, window_residuals(&fine)?.1));
    }
    Ok(RunOutcome {
        records,
        initial: f0,
        final_map: st.f.clone(),
        rejected: st.rejected,
        converged,
        aborted,
        residuals,
        gauge_density_error,
    })
}

fn nominal_dt<T: Real>(cfg: &RunConfig, st: &FlowState<T>) -> T {
    match cfg.dt {
        DtSetting::Fixed(v) => T::lit(v),
        DtSetting::Auto => {
            let explicit = auto_dt_for(st.f.grid(), st.evaluation().max_density());
            match cfg.integrator {
                Integrator::Rk4 => explicit,
                Integrator::Imex => explicit * T::lit(IMEX_AUTO_FACTOR),
            }
        }
    }
}

/// Multiple of the explicit heuristic used by `dt = "auto"` with the IMEX integrator.
pub const IMEX_AUTO_FACTOR: f64 = 10.0;

/// `(r_k for every sample, max interior r_k, max |density(phi_k) - 1|)`.
fn window_residuals<T: Real>(history: &[super::HistorySample<T>]) -> Result<(Vec<T>, T, T)> {
    let samples: Vec<(T, super::VectorField<T>)> =
        history.iter().map(|h| (h.t, h.gauge.clone())).collect();
    let gauges = gauge_reconstruct(&samples)?;
    let grid = *history[0].map.grid();
    let one = ScalarField::constant(grid, T::one());
    let density_error = gauges
        .iter()
        .fold(T::zero(), |m, g| m.max((&g.density() - &one).max_abs()));
    let (times, maps) = reconstruct_trajectory(history)?;
    let r = deturck_residuals(&times, &maps)?;
    let interior = r[1..r.len() - 1].iter().fold(T::zero(), |m, &v| m.max(v));
    Ok((r, interior, density_error))
}

/// Re-integrates the window from `f0`, splitting each recorded step in two.
fn refined_window<T: Real>(
    f0: &TorusMap<T>,
    steps: &[T],
    opts: &StepOptions<T>,
) -> Result<Vec<super::HistorySample<T>>> {
    let opts = StepOptions {
        record_gauge: true,
        ..*opts
    };
    let mut st = FlowState::new(f0.clone(), &opts)?;
    for &h in steps {
        for _ in 0..2 {
            let target = st.t + h * T::lit(0.5);
            while st.t < target - h * T::lit(1e-9) {
                let h = target - st.t;
                step(&mut st, h, &opts)?;
            }
        }
    }
    Ok(st.history)
}
