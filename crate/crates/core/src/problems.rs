//! Problem definitions: coefficient functions with their derivatives, the
//! constants of the standing assumptions, and a small library of built-in
//! benchmark problems with known reference behavior.
//!
//! A [`ProblemSpec`] carries the controlled dynamics
//!
//! ```text
//! dX(t) = b(t, X(t), μ_{t+δ}, u(t)) dt + σ(t, X(t), μ_{t+δ}, u(t)) dB(t)
//! ```
//!
//! where μ_{t+δ} is the law of the solution at the future time t+δ (with the
//! convention X(t) = X(T) for t ≥ T), the cost integrands l and g, and every
//! partial derivative (∂_x, ∂_u, ∂_μ) the variational and adjoint solvers
//! need. Coefficient maps must be pure functions; they are shared across
//! worker threads.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::TimeGrid;
use crate::measure::{wasserstein2, EmpiricalMeasure};

/// Coefficient map (t, x, μ, u) → ℝ.
pub type CoefFn = Arc<dyn Fn(f64, f64, &EmpiricalMeasure, f64) -> f64 + Send + Sync>;
/// Terminal map (x, μ) → ℝ.
pub type TerminalFn = Arc<dyn Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync>;
/// Scalar map y → ℝ used as the point factor of a factored Lions derivative.
pub type PointFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// General Lions-derivative kernel (t, x, μ, y, u) → ℝ.
pub type MeasureKernelFn = Arc<dyn Fn(f64, f64, &EmpiricalMeasure, f64, f64) -> f64 + Send + Sync>;
/// General Lions-derivative kernel (x, μ, y) → ℝ for the terminal cost.
pub type TerminalMeasureKernelFn = Arc<dyn Fn(f64, &EmpiricalMeasure, f64) -> f64 + Send + Sync>;

pub fn coef(f: impl Fn(f64, f64, &EmpiricalMeasure, f64) -> f64 + Send + Sync + 'static) -> CoefFn {
    Arc::new(f)
}

pub fn terminal(f: impl Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync + 'static) -> TerminalFn {
    Arc::new(f)
}

pub fn point(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> PointFn {
    Arc::new(f)
}

pub fn measure_kernel(
    f: impl Fn(f64, f64, &EmpiricalMeasure, f64, f64) -> f64 + Send + Sync + 'static,
) -> MeasureKernelFn {
    Arc::new(f)
}

/// Lions derivative ∂_μc(t, x, μ, u)(y) of a coefficient with respect to its
/// measure argument.
///
/// The statistic form c(t, x, g(∫f dμ), u) factorizes as
/// `weight(t, x, μ, u) · point(y)` and is the default representation; the
/// mean-field solvers exploit the factorization to keep tilde-copy averages
/// linear in the particle count. `General` is the escape hatch for arbitrary
/// measure dependence (quadratic cost in the particle count where it mixes
/// samples).
#[derive(Clone)]
pub enum MeasureDerivative {
    /// Coefficient does not depend on the measure.
    Zero,
    /// ∂_μc(t, x, μ, u)(y) = weight(t, x, μ, u) · point(y).
    Factored { weight: CoefFn, point: PointFn },
    /// Arbitrary kernel (t, x, μ, y, u).
    General(MeasureKernelFn),
}

impl MeasureDerivative {
    pub fn eval(&self, t: f64, x: f64, mu: &EmpiricalMeasure, y: f64, u: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Factored { weight, point } => weight(t, x, mu, u) * point(y),
            Self::General(k) => k(t, x, mu, y, u),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

/// Lions derivative ∂_μg(x, μ)(y) of the terminal cost.
#[derive(Clone)]
pub enum TerminalMeasureDerivative {
    Zero,
    /// ∂_μg(x, μ)(y) = weight(x, μ) · point(y).
    Factored { weight: TerminalFn, point: PointFn },
    General(TerminalMeasureKernelFn),
}

impl TerminalMeasureDerivative {
    pub fn eval(&self, x: f64, mu: &EmpiricalMeasure, y: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Factored { weight, point } => weight(x, mu) * point(y),
            Self::General(k) => k(x, mu, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

/// A complete problem description: dynamics, costs, derivatives, constants.
#[derive(Clone)]
pub struct ProblemSpec {
    /// Initial state X(0).
    pub x0: f64,
    /// Horizon T.
    pub t_horizon: f64,
    /// Anticipation lag δ ≥ 0.
    pub delta: f64,
    /// The Lipschitz constant C of the drift/diffusion in (x, μ).
    pub lipschitz_c: f64,
    /// Control interval U = [control_lo, control_hi].
    pub control_lo: f64,
    pub control_hi: f64,

    /// Drift b(t, x, μ, u).
    pub drift: CoefFn,
    /// Diffusion σ(t, x, μ, u).
    pub diffusion: CoefFn,
    /// Running cost l(t, x, μ, u).
    pub running_cost: CoefFn,
    /// Terminal cost g(x, μ).
    pub terminal_cost: TerminalFn,

    pub drift_dx: CoefFn,
    pub drift_du: CoefFn,
    pub drift_dmu: MeasureDerivative,
    pub diffusion_dx: CoefFn,
    pub diffusion_du: CoefFn,
    pub diffusion_dmu: MeasureDerivative,
    pub running_cost_dx: CoefFn,
    pub running_cost_du: CoefFn,
    pub running_cost_dmu: MeasureDerivative,
    pub terminal_cost_dx: TerminalFn,
    pub terminal_cost_dmu: TerminalMeasureDerivative,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("x0", &self.x0)
            .field("t_horizon", &self.t_horizon)
            .field("delta", &self.delta)
            .field("lipschitz_c", &self.lipschitz_c)
            .field("control_lo", &self.control_lo)
            .field("control_hi", &self.control_hi)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Contraction bound δ₀ = 1/(7C) for the forward Picard map.
    pub fn forward_delta0(&self) -> f64 {
        1.0 / (7.0 * self.lipschitz_c)
    }

    /// Whether δ lies inside the forward contraction regime δ ≤ 1/(7C).
    pub fn delta_within_forward_bound(&self) -> bool {
        self.delta <= self.forward_delta0() * (1.0 + 1e-12)
    }

    pub fn clamp_control(&self, u: f64) -> f64 {
        u.clamp(self.control_lo, self.control_hi)
    }

    /// Checks a control against the interval U and the grid's δ.
    pub fn check_control(&self, control: &Control) -> Result<()> {
        let grid = control.grid();
        if (grid.t_horizon() - self.t_horizon).abs() > 1e-12 * self.t_horizon.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "control grid horizon {} does not match problem horizon {}",
                grid.t_horizon(),
                self.t_horizon
            )));
        }
        if (grid.delta() - self.delta).abs() > 1e-9 * self.t_horizon.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "control grid delta {} does not match problem delta {}",
                grid.delta(),
                self.delta
            )));
        }
        for (k, &v) in control.values().iter().enumerate() {
            if !v.is_finite() || v < self.control_lo - 1e-12 || v > self.control_hi + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "control value {v} at cell {k} outside [{}, {}]",
                    self.control_lo, self.control_hi
                )));
            }
        }
        Ok(())
    }
}

/// Open-loop deterministic control: one value per grid cell, constant on
/// [t_k, t_{k+1}).
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    values: Vec<f64>,
    grid: TimeGrid,
}

impl Control {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps() {
            return Err(Error::LengthMismatch { left: values.len(), right: grid.n_steps() });
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index: idx });
        }
        Ok(Self { values, grid })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        let n = grid.n_steps();
        Self { values: vec![value; n], grid }
    }

    /// Builds the control u(t_k) = f(t_k) sampled at the left cell endpoints.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_steps()).map(|k| f(grid.time(k))).collect();
        Self { values, grid }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Value on the cell containing step index k (clamped to the last cell).
    pub fn at_step(&self, k: usize) -> f64 {
        self.values[k.min(self.values.len() - 1)]
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Control {
        Control {
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
            grid: self.grid,
        }
    }

    /// Pointwise combination u* + θ(u − u*) along the segment toward `other`.
    pub fn blend(&self, other: &Control, theta: f64) -> Control {
        let values = self
            .values
            .iter()
            .zip(other.values())
            .map(|(a, b)| a + theta * (b - a))
            .collect();
        Control { values, grid: self.grid }
    }
}

/// One finite-difference agreement entry of a validation report.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheck {
    pub name: String,
    pub max_error: f64,
}

/// Result of sampling-based validation of a [`ProblemSpec`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    /// Largest sampled ratio |Δb| / (|Δx| + W₂(μ, μ′)).
    pub drift_lipschitz_ratio: f64,
    /// Largest sampled ratio |Δσ| / (|Δx| + W₂(μ, μ′)).
    pub diffusion_lipschitz_ratio: f64,
    pub declared_lipschitz_c: f64,
    pub lipschitz_ok: bool,
    pub derivative_checks: Vec<DerivativeCheck>,
    pub max_derivative_error: f64,
    pub delta: f64,
    pub forward_delta0: f64,
    pub delta_within_bound: bool,
}

fn probe_measure(rng: &mut ChaCha8Rng, center: f64, spread: f64) -> EmpiricalMeasure {
    let samples: Vec<f64> = (0..16)
        .map(|_| center + spread * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    EmpiricalMeasure::new(samples).expect("finite probe samples")
}

fn check_finite(name: &'static str, v: f64, t: f64, x: f64, u: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteCoefficient { name, t, x, u })
    }
}

/// Samples random probe points and reports (a) Lipschitz-ratio estimates for
/// b and σ against the declared constant, (b) finite-difference agreement of
/// every supplied partial derivative, and (c) whether δ ≤ 1/(7C).
pub fn validate(spec: &ProblemSpec, rng_seed: u64, n_probes: usize) -> Result<ValidationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let eps = 1e-5;

    let mut ratio_b: f64 = 0.0;
    let mut ratio_s: f64 = 0.0;
    let mut checks: BTreeMap<&'static str, f64> = BTreeMap::new();
    let record = |map: &mut BTreeMap<&'static str, f64>, name: &'static str, err: f64| {
        let slot = map.entry(name).or_insert(0.0);
        if err > *slot {
            *slot = err;
        }
    };

    for _ in 0..n_probes.max(1) {
        let t = rng.gen_range(0.0..=spec.t_horizon);
        let x = spec.x0 + 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let x2 = spec.x0 + 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let u = rng.gen_range(spec.control_lo..=spec.control_hi);
        let mu = probe_measure(&mut rng, spec.x0, 1.5);
        let mu2 = probe_measure(&mut rng, spec.x0, 1.5);

        // (a) Lipschitz ratios in (x, μ) at fixed (t, u).
        let denom = (x - x2).abs() + wasserstein2(&mu, &mu2)?;
        if denom > 1e-9 {
            let db = check_finite("b", (spec.drift)(t, x, &mu, u), t, x, u)?
                - check_finite("b", (spec.drift)(t, x2, &mu2, u), t, x2, u)?;
            let ds = check_finite("sigma", (spec.diffusion)(t, x, &mu, u), t, x, u)?
                - check_finite("sigma", (spec.diffusion)(t, x2, &mu2, u), t, x2, u)?;
            ratio_b = ratio_b.max(db.abs() / denom);
            ratio_s = ratio_s.max(ds.abs() / denom);
        }

        // (b) central-difference agreement of the state and control partials.
        let fd_pairs: [(&'static str, &CoefFn, &CoefFn, bool); 6] = [
            ("db_dx", &spec.drift, &spec.drift_dx, true),
            ("db_du", &spec.drift, &spec.drift_du, false),
            ("dsigma_dx", &spec.diffusion, &spec.diffusion_dx, true),
            ("dsigma_du", &spec.diffusion, &spec.diffusion_du, false),
            ("dl_dx", &spec.running_cost, &spec.running_cost_dx, true),
            ("dl_du", &spec.running_cost, &spec.running_cost_du, false),
        ];
        for (name, f, df, in_x) in fd_pairs {
            let fd = if in_x {
                (check_finite(name, f(t, x + eps, &mu, u), t, x + eps, u)?
                    - check_finite(name, f(t, x - eps, &mu, u), t, x - eps, u)?)
                    / (2.0 * eps)
            } else {
                (check_finite(name, f(t, x, &mu, u + eps), t, x, u + eps)?
                    - check_finite(name, f(t, x, &mu, u - eps), t, x, u - eps)?)
                    / (2.0 * eps)
            };
            let supplied = check_finite(name, df(t, x, &mu, u), t, x, u)?;
            record(&mut checks, name, (fd - supplied).abs());
        }
        let gd = (check_finite("dg_dx", (spec.terminal_cost)(x + eps, &mu), t, x + eps, u)?
            - check_finite("dg_dx", (spec.terminal_cost)(x - eps, &mu), t, x - eps, u)?)
            / (2.0 * eps);
        let supplied = check_finite("dg_dx", (spec.terminal_cost_dx)(x, &mu), t, x, u)?;
        record(&mut checks, "dg_dx", (gd - supplied).abs());

        // (b′) measure derivatives via the lifted central difference along a
        // random direction η applied to the probe cloud.
        let eta: Vec<f64> = (0..mu.len())
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let shift = |sgn: f64| -> EmpiricalMeasure {
            let shifted: Vec<f64> = mu
                .samples()
                .iter()
                .zip(&eta)
                .map(|(s, e)| s + sgn * eps * e)
                .collect();
            EmpiricalMeasure::new(shifted).expect("finite shifted samples")
        };
        let mu_plus = shift(1.0);
        let mu_minus = shift(-1.0);
        let m = mu.len() as f64;

        let dmu_tripod: [(&'static str, &CoefFn, &MeasureDerivative); 3] = [
            ("db_dmu", &spec.drift, &spec.drift_dmu),
            ("dsigma_dmu", &spec.diffusion, &spec.diffusion_dmu),
            ("dl_dmu", &spec.running_cost, &spec.running_cost_dmu),
        ];
        for (name, f, dmu) in dmu_tripod {
            let fd = (check_finite(name, f(t, x, &mu_plus, u), t, x, u)?
                - check_finite(name, f(t, x, &mu_minus, u), t, x, u)?)
                / (2.0 * eps);
            let mut pairing = 0.0;
            for (&y, &e) in mu.samples().iter().zip(&eta) {
                pairing += check_finite(name, dmu.eval(t, x, &mu, y, u), t, x, u)? * e;
            }
            pairing /= m;
            record(&mut checks, name, (fd - pairing).abs());
        }
        let fd = (check_finite("dg_dmu", (spec.terminal_cost)(x, &mu_plus), t, x, u)?
            - check_finite("dg_dmu", (spec.terminal_cost)(x, &mu_minus), t, x, u)?)
            / (2.0 * eps);
        let mut pairing = 0.0;
        for (&y, &e) in mu.samples().iter().zip(&eta) {
            pairing += check_finite("dg_dmu", spec.terminal_cost_dmu.eval(x, &mu, y), t, x, u)? * e;
        }
        pairing /= m;
        record(&mut checks, "dg_dmu", (fd - pairing).abs());
    }

    let derivative_checks: Vec<DerivativeCheck> = checks
        .into_iter()
        .map(|(name, max_error)| DerivativeCheck { name: name.to_string(), max_error })
        .collect();
    let max_derivative_error = derivative_checks
        .iter()
        .map(|c| c.max_error)
        .fold(0.0, f64::max);
    let tol = 1e-9 + 1e-9 * spec.lipschitz_c;
    Ok(ValidationReport {
        drift_lipschitz_ratio: ratio_b,
        diffusion_lipschitz_ratio: ratio_s,
        declared_lipschitz_c: spec.lipschitz_c,
        lipschitz_ok: ratio_b <= spec.lipschitz_c + tol && ratio_s <= spec.lipschitz_c + tol,
        derivative_checks,
        max_derivative_error,
        delta: spec.delta,
        forward_delta0: spec.forward_delta0(),
        delta_within_bound: spec.delta_within_forward_bound(),
    })
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

const BUILTIN_NAMES: &str = "constant, decoupled, deterministic-mean, lq-anticipating-mean";

fn zero_coef() -> CoefFn {
    coef(|_, _, _, _| 0.0)
}

/// Constructs one of the built-in benchmark problems.
///
/// - `"constant"`: b, σ constant (params `b`, `sigma`), l = u², g = x.
/// - `"deterministic-mean"`: σ ≡ 0, b(t, x, μ, u) = ∫ y μ(dy); the cloud mean
///   follows the scalar delay equation m(t) = x0 + ∫₀ᵗ m(min(s+δ, T)) ds.
/// - `"decoupled"`: b = a·x + c·u, σ = σ₀, l = ½(λx² + u²), g = ½κx²; no
///   measure dependence anywhere, the classical controlled benchmark.
/// - `"lq-anticipating-mean"`: b = a·x + ā·∫y μ(dy) + c·u, σ = σ₀,
///   l = ½(λx² + u²), g = ½κx²; params `a`, `abar`, `c`, `sigma0`, `lambda`,
///   `kappa`, optional `sin_perturb` adding sin_perturb·sin(x) to the drift.
///
/// Common params: `x0`, `T`, `delta`, `control_lo`, `control_hi`, `C`
/// (Lipschitz-constant override).
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ProblemSpec> {
    let x0 = param(params, "x0", if name == "constant" { 0.0 } else { 1.0 });
    let t_horizon = param(params, "T", 1.0);
    let delta = param(params, "delta", 0.0);
    if t_horizon <= 0.0 {
        return Err(Error::InvalidInput("T must be positive".into()));
    }
    if delta < 0.0 {
        return Err(Error::InvalidInput("delta must be nonnegative".into()));
    }

    match name {
        "constant" => {
            let b0 = param(params, "b", 0.0);
            let s0 = param(params, "sigma", 0.0);
            Ok(ProblemSpec {
                x0,
                t_horizon,
                delta,
                lipschitz_c: param(params, "C", 1.0),
                control_lo: param(params, "control_lo", -1.0),
                control_hi: param(params, "control_hi", 1.0),
                drift: coef(move |_, _, _, _| b0),
                diffusion: coef(move |_, _, _, _| s0),
                running_cost: coef(|_, _, _, u| u * u),
                terminal_cost: terminal(|x, _| x),
                drift_dx: zero_coef(),
                drift_du: zero_coef(),
                drift_dmu: MeasureDerivative::Zero,
                diffusion_dx: zero_coef(),
                diffusion_du: zero_coef(),
                diffusion_dmu: MeasureDerivative::Zero,
                running_cost_dx: zero_coef(),
                running_cost_du: coef(|_, _, _, u| 2.0 * u),
                running_cost_dmu: MeasureDerivative::Zero,
                terminal_cost_dx: terminal(|_, _| 1.0),
                terminal_cost_dmu: TerminalMeasureDerivative::Zero,
            })
        }
        "deterministic-mean" => Ok(ProblemSpec {
            x0,
            t_horizon,
            delta,
            lipschitz_c: param(params, "C", 1.0),
            control_lo: param(params, "control_lo", -1.0),
            control_hi: param(params, "control_hi", 1.0),
            drift: coef(|_, _, mu, _| mu.mean()),
            diffusion: zero_coef(),
            running_cost: zero_coef(),
            terminal_cost: terminal(|x, _| x),
            drift_dx: zero_coef(),
            drift_du: zero_coef(),
            drift_dmu: MeasureDerivative::Factored {
                weight: coef(|_, _, _, _| 1.0),
                point: point(|_| 1.0),
            },
            diffusion_dx: zero_coef(),
            diffusion_du: zero_coef(),
            diffusion_dmu: MeasureDerivative::Zero,
            running_cost_dx: zero_coef(),
            running_cost_du: zero_coef(),
            running_cost_dmu: MeasureDerivative::Zero,
            terminal_cost_dx: terminal(|_, _| 1.0),
            terminal_cost_dmu: TerminalMeasureDerivative::Zero,
        }),
        "decoupled" => {
            let a = param(params, "a", 0.3);
            let c = param(params, "c", 1.0);
            let s0 = param(params, "sigma0", 0.3);
            let lambda = param(params, "lambda", 1.0);
            let kappa = param(params, "kappa", 1.0);
            Ok(ProblemSpec {
                x0,
                t_horizon,
                delta,
                lipschitz_c: param(params, "C", a.abs().max(1e-6)),
                control_lo: param(params, "control_lo", -6.0),
                control_hi: param(params, "control_hi", 6.0),
                drift: coef(move |_, x, _, u| a * x + c * u),
                diffusion: coef(move |_, _, _, _| s0),
                running_cost: coef(move |_, x, _, u| 0.5 * (lambda * x * x + u * u)),
                terminal_cost: terminal(move |x, _| 0.5 * kappa * x * x),
                drift_dx: coef(move |_, _, _, _| a),
                drift_du: coef(move |_, _, _, _| c),
                drift_dmu: MeasureDerivative::Zero,
                diffusion_dx: zero_coef(),
                diffusion_du: zero_coef(),
                diffusion_dmu: MeasureDerivative::Zero,
                running_cost_dx: coef(move |_, x, _, _| lambda * x),
                running_cost_du: coef(|_, _, _, u| u),
                running_cost_dmu: MeasureDerivative::Zero,
                terminal_cost_dx: terminal(move |x, _| kappa * x),
                terminal_cost_dmu: TerminalMeasureDerivative::Zero,
            })
        }
        "lq-anticipating-mean" => {
            let a = param(params, "a", 0.5);
            let abar = param(params, "abar", 0.5);
            let c = param(params, "c", 1.0);
            let s0 = param(params, "sigma0", 0.3);
            let lambda = param(params, "lambda", 1.0);
            let kappa = param(params, "kappa", 1.0);
            let sin_perturb = param(params, "sin_perturb", 0.0);
            let c_default = (a.abs() + sin_perturb.abs()).max(abar.abs()).max(1e-6);
            Ok(ProblemSpec {
                x0,
                t_horizon,
                delta,
                lipschitz_c: param(params, "C", c_default),
                control_lo: param(params, "control_lo", -6.0),
                control_hi: param(params, "control_hi", 6.0),
                drift: coef(move |_, x, mu, u| {
                    a * x + abar * mu.mean() + c * u + sin_perturb * x.sin()
                }),
                diffusion: coef(move |_, _, _, _| s0),
                running_cost: coef(move |_, x, _, u| 0.5 * (lambda * x * x + u * u)),
                terminal_cost: terminal(move |x, _| 0.5 * kappa * x * x),
                drift_dx: coef(move |_, x, _, _| a + sin_perturb * x.cos()),
                drift_du: coef(move |_, _, _, _| c),
                drift_dmu: MeasureDerivative::Factored {
                    weight: coef(move |_, _, _, _| abar),
                    point: point(|_| 1.0),
                },
                diffusion_dx: zero_coef(),
                diffusion_du: zero_coef(),
                diffusion_dmu: MeasureDerivative::Zero,
                running_cost_dx: coef(move |_, x, _, _| lambda * x),
                running_cost_du: coef(|_, _, _, u| u),
                running_cost_dmu: MeasureDerivative::Zero,
                terminal_cost_dx: terminal(move |x, _| kappa * x),
                terminal_cost_dmu: TerminalMeasureDerivative::Zero,
            })
        }
        _ => Err(Error::UnknownBuiltin {
            name: name.to_string(),
            available: BUILTIN_NAMES.to_string(),
        }),
    }
}
