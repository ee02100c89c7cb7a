//! Delayed adjoint BSDE with implicit terminal condition, solved by an outer
//! fixed point around a regression-based backward sweep.
//!
//! The equation has the lifted form
//!
//! ```text
//! dp(t) = −φ(P̃_{θ_t(p(t), q(t), p̃(t−δ), q̃(t−δ))}) dt + q(t) dB(t),
//! p(T)  = ζ + ∫_{T−δ}^{T} ψ(P̃_{ϑ_t(p̃(t), q̃(t))}) dt,
//! ```
//!
//! with the conventions p(t) = p(0) and q(t) = 0 for t ≤ 0, and P̃ the law of
//! the tilde copy. Freezing the arguments of θ and ϑ at a candidate pair
//! (U, V) leaves a standard linear BSDE which the inner solver integrates
//! backward with least-squares Monte-Carlo conditional expectations; the
//! outer map Φ(U, V) := (p, q) is iterated from (0, 0) until the difference
//! of successive iterates is small in the exponentially weighted norm
//!
//! ```text
//! ‖(U, V)‖²_β = E[U(0)²] + E[∫₀ᵀ e^{βt} (U(t)² + V(t)²) dt],
//! ```
//!
//! whose weight comes from the backward contraction regime ρ = 1/(8C),
//! β = C_ρ + 1 (C_ρ realized as C²/ρ + C; C is the Lipschitz constant of θ
//! in its frozen arguments). For the adjoint of the control problem, θ and ϑ
//! are assembled from the problem's partial derivatives and φ = ψ is the
//! tilde-copy mean realized as the cloud average.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{FixedPointReport, ParticleEnsemble, TimeGrid};
use crate::lsmc::RegressionStep;
use crate::measure::EmpiricalMeasure;
use crate::problems::{Control, MeasureDerivative, ProblemSpec, TerminalMeasureDerivative};
use crate::variational::VariationalEnsemble;

/// Constants of the backward contraction regime derived from the Lipschitz
/// constant of the frozen driver.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BsdeConstants {
    pub lipschitz: f64,
    pub rho: f64,
    pub c_rho: f64,
    pub beta: f64,
    /// Largest δ for which the outer map is certified contracting:
    /// min(1/(8C), ln(3)/β) so that (1 + e^{βδ})/8 ≤ 1/2.
    pub delta0: f64,
}

impl BsdeConstants {
    pub fn from_lipschitz(lipschitz: f64) -> Self {
        let c = lipschitz.max(1e-6);
        let rho = 1.0 / (8.0 * c);
        let c_rho = c * c / rho + c;
        let beta = c_rho + 1.0;
        let delta0 = rho.min(3.0_f64.ln() / beta);
        Self { lipschitz: c, rho, c_rho, beta, delta0 }
    }
}

type ThetaFn = Box<dyn Fn(usize, usize, usize, [f64; 4]) -> f64 + Send + Sync>;
type VarthetaFn = Box<dyn Fn(usize, usize, usize, f64, f64) -> f64 + Send + Sync>;
type LawFn = Box<dyn Fn(&EmpiricalMeasure) -> f64 + Send + Sync>;

/// Driver data for the backward solve.
pub enum DriverAssembly {
    /// Arbitrary θ/ϑ with Lipschitz maps φ/ψ applied to the tilde law.
    /// θ receives (step k, base index i, tilde index j, [x₁, x₂, x₃, x₄])
    /// where (x₁, x₂) are the frozen solution at t_k for sample i and
    /// (x₃, x₄) the frozen delayed pair for tilde sample j; ϑ receives
    /// (step k, i, j, x₃, x₄).
    General {
        theta: ThetaFn,
        vartheta: VarthetaFn,
        phi: LawFn,
        psi: LawFn,
        zeta: Vec<f64>,
        /// Lipschitz constant of θ in (x₁..x₄); drives the outer norm weight.
        lipschitz: f64,
    },
    /// Adjoint of the control problem: φ = ψ = tilde-copy mean, θ affine in
    /// the frozen arguments with coefficients from the problem's partials.
    ControlAdjoint(ControlAdjointDriver),
}

/// Precomputed coefficient tables for the control-problem adjoint along a
/// frozen base trajectory.
pub struct ControlAdjointDriver {
    grid: TimeGrid,
    particles: usize,
    /// X*_i(t_k): indexed [k][i], k = 0..=N.
    states: Vec<Vec<f64>>,
    /// Cloud measure per node.
    measures: Vec<EmpiricalMeasure>,
    u_star: Vec<f64>,
    spec: ProblemSpec,
    /// ∂_x b, ∂_x σ, ∂_x l at (t_k, X_i(t_k), μ̂_{k+δ/dt}, u_k): [k][i].
    dxb: Vec<Vec<f64>>,
    dxs: Vec<Vec<f64>>,
    dxl: Vec<Vec<f64>>,
    zeta: Vec<f64>,
    driver_lipschitz: f64,
}

impl DriverAssembly {
    pub fn zeta(&self) -> &[f64] {
        match self {
            Self::General { zeta, .. } => zeta,
            Self::ControlAdjoint(d) => &d.zeta,
        }
    }

    /// Lipschitz constant of θ in its frozen arguments.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::General { lipschitz, .. } => *lipschitz,
            Self::ControlAdjoint(d) => d.driver_lipschitz,
        }
    }

    pub fn constants(&self) -> BsdeConstants {
        BsdeConstants::from_lipschitz(self.lipschitz())
    }

    /// Implicit terminal integral per particle evaluated at an arbitrary
    /// (p, q) pair; at the fixed point it reproduces p(T) − ζ.
    pub fn implicit_terminal_for(
        &self,
        grid: &TimeGrid,
        p: &[Vec<f64>],
        q: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        match self {
            Self::ControlAdjoint(d) => Ok(d.implicit_terminal(p, q)),
            Self::General { vartheta, psi, .. } => {
                let m = p.len();
                let n = grid.n_steps();
                let ds = grid.delta_steps();
                let dt = grid.dt();
                let start = n.saturating_sub(ds);
                let mut implicit = vec![0.0; m];
                for k in start..n {
                    let p_col = column(p, k);
                    let q_col = column(q, k);
                    let step: Vec<Result<f64>> = (0..m)
                        .into_par_iter()
                        .map(|i| {
                            let vals: Vec<f64> =
                                (0..m).map(|j| vartheta(k, i, j, p_col[j], q_col[j])).collect();
                            Ok(psi(&EmpiricalMeasure::new(vals)?))
                        })
                        .collect();
                    for (acc, s) in implicit.iter_mut().zip(step) {
                        *acc += s? * dt;
                    }
                }
                Ok(implicit)
            }
        }
    }
}

/// Adds the tilde-copy average (1/M) Σ_j ∂_μc(t̃, X_j, μ, y_i, ũ)·w_j to
/// `out[i]`, where w is a frozen column (or identically 1 for the ∂_μl term).
#[allow(clippy::too_many_arguments)]
fn add_mixed_term(
    dmu: &MeasureDerivative,
    t_tilde: f64,
    tilde_states: &[f64],
    mu: &EmpiricalMeasure,
    y_states: &[f64],
    u_tilde: f64,
    frozen: Option<&[f64]>,
    out: &mut [f64],
) {
    let m = tilde_states.len() as f64;
    match dmu {
        MeasureDerivative::Zero => {}
        MeasureDerivative::Factored { weight, point } => {
            let j_sum = match frozen {
                Some(w) => tilde_states
                    .iter()
                    .zip(w)
                    .map(|(xj, wj)| weight(t_tilde, *xj, mu, u_tilde) * wj)
                    .sum::<f64>(),
                None => tilde_states
                    .iter()
                    .map(|xj| weight(t_tilde, *xj, mu, u_tilde))
                    .sum::<f64>(),
            } / m;
            for (o, &yi) in out.iter_mut().zip(y_states) {
                *o += point(yi) * j_sum;
            }
        }
        MeasureDerivative::General(kernel) => {
            out.par_iter_mut().zip(y_states.par_iter()).for_each(|(o, &yi)| {
                let mut acc = 0.0;
                match frozen {
                    Some(w) => {
                        for (xj, wj) in tilde_states.iter().zip(w) {
                            acc += kernel(t_tilde, *xj, mu, yi, u_tilde) * wj;
                        }
                    }
                    None => {
                        for xj in tilde_states {
                            acc += kernel(t_tilde, *xj, mu, yi, u_tilde);
                        }
                    }
                }
                *o += acc / m;
            });
        }
    }
}

fn column(paths: &[Vec<f64>], k: usize) -> Vec<f64> {
    paths.iter().map(|p| p[k]).collect()
}

impl ControlAdjointDriver {
    /// Driver values per particle at step k for frozen (U, V).
    fn driver_at(&self, k: usize, frozen_p: &[Vec<f64>], frozen_q: &[Vec<f64>]) -> Vec<f64> {
        let m = self.particles;
        let ds = self.grid.delta_steps();
        let mut out = vec![0.0; m];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.dxb[k][i] * frozen_p[i][k]
                + self.dxs[k][i] * frozen_q[i][k]
                + self.dxl[k][i];
        }
        // Delayed terms carry the indicator I_{[δ,T]}(t_k).
        if k >= ds {
            let kd = k - ds;
            let t_del = self.grid.time(kd);
            let u_del = self.u_star[kd];
            let mu_t = &self.measures[k];
            let p_del = column(frozen_p, kd);
            let q_del = column(frozen_q, kd);
            add_mixed_term(
                &self.spec.drift_dmu,
                t_del,
                &self.states[kd],
                mu_t,
                &self.states[k],
                u_del,
                Some(&p_del),
                &mut out,
            );
            add_mixed_term(
                &self.spec.diffusion_dmu,
                t_del,
                &self.states[kd],
                mu_t,
                &self.states[k],
                u_del,
                Some(&q_del),
                &mut out,
            );
            add_mixed_term(
                &self.spec.running_cost_dmu,
                t_del,
                &self.states[kd],
                mu_t,
                &self.states[k],
                u_del,
                None,
                &mut out,
            );
        }
        out
    }

    /// Left-Riemann implicit terminal integral per particle for frozen (U, V).
    fn implicit_terminal(&self, frozen_p: &[Vec<f64>], frozen_q: &[Vec<f64>]) -> Vec<f64> {
        let m = self.particles;
        let n = self.grid.n_steps();
        let ds = self.grid.delta_steps();
        let dt = self.grid.dt();
        let mut implicit = vec![0.0; m];
        let start = n.saturating_sub(ds);
        for k in start..n {
            let t = self.grid.time(k);
            let u_k = self.u_star[k];
            let mu_t = &self.measures[n];
            let p_col = column(frozen_p, k);
            let q_col = column(frozen_q, k);
            let mut step = vec![0.0; m];
            add_mixed_term(
                &self.spec.drift_dmu,
                t,
                &self.states[k],
                mu_t,
                &self.states[n],
                u_k,
                Some(&p_col),
                &mut step,
            );
            add_mixed_term(
                &self.spec.diffusion_dmu,
                t,
                &self.states[k],
                mu_t,
                &self.states[n],
                u_k,
                Some(&q_col),
                &mut step,
            );
            add_mixed_term(
                &self.spec.running_cost_dmu,
                t,
                &self.states[k],
                mu_t,
                &self.states[n],
                u_k,
                None,
                &mut step,
            );
            for (acc, s) in implicit.iter_mut().zip(&step) {
                *acc += s * dt;
            }
        }
        implicit
    }
}

/// Builds the adjoint driver of the control problem along a converged base
/// trajectory: θ = (∂_x b)x₁ + (∂_x σ)x₂ + ∂_x l + delayed ∂_μ terms with the
/// tilde-copy index swap (kernels evaluated at (X̃_j, ·, X_i) and weighted by
/// the frozen tilde values), ζ = ∂_x g + Ẽ[∂_μ g], and the implicit terminal
/// integrand from the same ∂_μ data at the horizon.
pub fn assemble_control_adjoint(
    spec: &ProblemSpec,
    base: &ParticleEnsemble,
    u_star: &Control,
) -> Result<DriverAssembly> {
    spec.check_control(u_star)?;
    let grid = *base.grid();
    let m = base.particles();
    let n = grid.n_steps();
    let ds = grid.delta_steps();

    let states: Vec<Vec<f64>> =
        (0..=n).map(|k| (0..m).map(|i| base.state(i, k)).collect()).collect();
    let measures = base.all_measures()?;

    let mut dxb = vec![vec![0.0; m]; n];
    let mut dxs = vec![vec![0.0; m]; n];
    let mut dxl = vec![vec![0.0; m]; n];
    for k in 0..n {
        let t = grid.time(k);
        let mu = &measures[grid.extended(k + ds)];
        let u = u_star.values()[k];
        for i in 0..m {
            let x = states[k][i];
            dxb[k][i] = (spec.drift_dx)(t, x, mu, u);
            dxs[k][i] = (spec.diffusion_dx)(t, x, mu, u);
            dxl[k][i] = (spec.running_cost_dx)(t, x, mu, u);
            for (name, v) in [("db_dx", dxb[k][i]), ("dsigma_dx", dxs[k][i]), ("dl_dx", dxl[k][i])]
            {
                if !v.is_finite() {
                    return Err(Error::NonFiniteCoefficient { name, t, x, u });
                }
            }
        }
    }

    // ζ_i = ∂_x g(X_i(T), μ̂_T) + (1/M) Σ_j ∂_μ g(X_j(T), μ̂_T, X_i(T)).
    let mu_t = &measures[n];
    let mut zeta = vec![0.0; m];
    for i in 0..m {
        zeta[i] = (spec.terminal_cost_dx)(states[n][i], mu_t);
    }
    match &spec.terminal_cost_dmu {
        TerminalMeasureDerivative::Zero => {}
        TerminalMeasureDerivative::Factored { weight, point } => {
            let j_sum = states[n].iter().map(|xj| weight(*xj, mu_t)).sum::<f64>() / m as f64;
            for (z, &yi) in zeta.iter_mut().zip(&states[n]) {
                *z += point(yi) * j_sum;
            }
        }
        TerminalMeasureDerivative::General(kernel) => {
            let terminal = states[n].clone();
            zeta.par_iter_mut().zip(terminal.par_iter()).for_each(|(z, &yi)| {
                let mut acc = 0.0;
                for xj in &terminal {
                    acc += kernel(*xj, mu_t, yi);
                }
                *z += acc / m as f64;
            });
        }
    }
    if let Some(idx) = zeta.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFiniteState { particle: idx, step: n });
    }

    // Lipschitz estimate for θ in (x₁..x₄): norm of the coefficient vector,
    // sampled on a stride through (k, i, j).
    let stride = (m / 16).max(1);
    let mut lip: f64 = 0.0;
    for k in (0..n).step_by((n / 32).max(1)) {
        for i in (0..m).step_by(stride) {
            let mut local = dxb[k][i].powi(2) + dxs[k][i].powi(2);
            if k >= ds {
                let kd = k - ds;
                let t_del = grid.time(kd);
                let u_del = u_star.values()[kd];
                let mu_t = &measures[k];
                let mut worst_mixed: f64 = 0.0;
                for j in (0..m).step_by(stride) {
                    let mb = spec.drift_dmu.eval(t_del, states[kd][j], mu_t, states[k][i], u_del);
                    let ms =
                        spec.diffusion_dmu.eval(t_del, states[kd][j], mu_t, states[k][i], u_del);
                    worst_mixed = worst_mixed.max(mb * mb + ms * ms);
                }
                local += worst_mixed;
            }
            lip = lip.max(local.sqrt());
        }
    }

    Ok(DriverAssembly::ControlAdjoint(ControlAdjointDriver {
        grid,
        particles: m,
        states,
        measures,
        u_star: u_star.values().to_vec(),
        spec: spec.clone(),
        dxb,
        dxs,
        dxl,
        zeta,
        driver_lipschitz: lip,
    }))
}

/// Output of one frozen-argument backward sweep.
pub struct InnerBsdeSolution {
    pub p_paths: Vec<Vec<f64>>,
    pub q_paths: Vec<Vec<f64>>,
    /// Per-particle value of the implicit terminal integral.
    pub terminal_implicit_part: Vec<f64>,
    /// Number of time steps where the regression dropped below the requested
    /// basis degree (the t = 0 step always does: all states equal x0).
    pub regression_fallbacks: usize,
}

/// Solves the standard BSDE obtained by freezing the driver arguments at
/// (U, V): terminal value ζ + left-Riemann ψ-integral over [T−δ, T), then
/// backward in time
///
/// ```text
/// q_i(t_k) = Ê[p(t_{k+1})·ΔB_k | X(t_k)] / dt,
/// p_i(t_k) = Ê[p(t_{k+1}) | X(t_k)] + φ(law θ_{t_k}(U, V, Ũ_{t_k−δ}, Ṽ_{t_k−δ}))·dt,
/// ```
///
/// with conditional expectations regressed on {1, X(t_k), …, X(t_k)^degree}.
pub fn inner_bsde_solve(
    base: &ParticleEnsemble,
    assembly: &DriverAssembly,
    frozen_p: &[Vec<f64>],
    frozen_q: &[Vec<f64>],
    basis_degree: usize,
) -> Result<InnerBsdeSolution> {
    let grid = *base.grid();
    let m = base.particles();
    let n = grid.n_steps();
    let dt = grid.dt();
    let ds = grid.delta_steps();
    if frozen_p.len() != m || frozen_q.len() != m {
        return Err(Error::LengthMismatch { left: frozen_p.len(), right: m });
    }
    if assembly.zeta().len() != m {
        return Err(Error::LengthMismatch { left: assembly.zeta().len(), right: m });
    }

    // Terminal: p(T) = ζ + Σ_{t_k ∈ [T−δ, T)} ψ(law of ϑ_{t_k}(Ũ, Ṽ))·dt.
    let implicit = assembly.implicit_terminal_for(&grid, frozen_p, frozen_q)?;

    let mut p = vec![vec![0.0; n + 1]; m];
    let mut q = vec![vec![0.0; n]; m];
    for i in 0..m {
        let terminal = assembly.zeta()[i] + implicit[i];
        if !terminal.is_finite() {
            return Err(Error::NonFiniteState { particle: i, step: n });
        }
        p[i][n] = terminal;
    }

    let mut fallbacks = 0usize;
    for k in (0..n).rev() {
        let states_k: Vec<f64> = (0..m).map(|i| base.state(i, k)).collect();
        let reg = RegressionStep::new(&states_k, basis_degree);
        if reg.fell_back() {
            fallbacks += 1;
        }
        let p_next: Vec<f64> = (0..m).map(|i| p[i][k + 1]).collect();
        let cond_p = reg.fitted(&p_next);
        let weighted: Vec<f64> = (0..m).map(|i| p_next[i] * base.increments()[i][k]).collect();
        let cond_q = reg.fitted(&weighted);

        let driver = match assembly {
            DriverAssembly::ControlAdjoint(d) => d.driver_at(k, frozen_p, frozen_q),
            DriverAssembly::General { theta, phi, .. } => {
                let x3: Vec<f64> = if k >= ds {
                    column(frozen_p, k - ds)
                } else {
                    column(frozen_p, 0) // p(t) = p(0) for t ≤ 0
                };
                let x4: Vec<f64> = if k >= ds {
                    column(frozen_q, k - ds)
                } else {
                    vec![0.0; m] // q(t) = 0 for t ≤ 0
                };
                let rows: Vec<Result<f64>> = (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let x1 = frozen_p[i][k];
                        let x2 = frozen_q[i][k];
                        let vals: Vec<f64> =
                            (0..m).map(|j| theta(k, i, j, [x1, x2, x3[j], x4[j]])).collect();
                        Ok(phi(&EmpiricalMeasure::new(vals)?))
                    })
                    .collect();
                rows.into_iter().collect::<Result<Vec<f64>>>()?
            }
        };

        for i in 0..m {
            q[i][k] = cond_q[i] / dt;
            let value = cond_p[i] + driver[i] * dt;
            if !value.is_finite() || !q[i][k].is_finite() {
                return Err(Error::NonFiniteState { particle: i, step: k });
            }
            p[i][k] = value;
        }
    }

    Ok(InnerBsdeSolution {
        p_paths: p,
        q_paths: q,
        terminal_implicit_part: implicit,
        regression_fallbacks: fallbacks,
    })
}

/// Exponentially weighted norm of a (p, q) pair difference:
/// sqrt( E[U(0)²] + E[∫₀ᵀ e^{βt}(U² + V²) dt] ), trapezoid in U (nodes) and
/// left Riemann in V (cells).
pub fn bsde_norm(p_diff: &[Vec<f64>], q_diff: &[Vec<f64>], grid: &TimeGrid, beta: f64) -> f64 {
    let m = p_diff.len() as f64;
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut acc = 0.0;
    for (pi, qi) in p_diff.iter().zip(q_diff) {
        acc += pi[0] * pi[0];
        for (k, &v) in pi.iter().enumerate() {
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            acc += w * (beta * grid.time(k)).exp() * v * v;
        }
        for (k, &v) in qi.iter().enumerate() {
            acc += dt * (beta * grid.time(k)).exp() * v * v;
        }
    }
    (acc / m).sqrt()
}

/// Converged adjoint pair with diagnostics.
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    /// M × (N+1) costate paths.
    pub p_paths: Vec<Vec<f64>>,
    /// M × N martingale-integrand paths (cell values).
    pub q_paths: Vec<Vec<f64>>,
    pub report: FixedPointReport,
    /// Per-particle implicit terminal integral at the fixed point.
    pub terminal_implicit_part: Vec<f64>,
    pub constants: BsdeConstants,
    pub regression_fallbacks: usize,
}

impl AdjointSolution {
    pub fn p(&self, particle: usize, node: usize) -> f64 {
        self.p_paths[particle][node]
    }

    pub fn q(&self, particle: usize, cell: usize) -> f64 {
        self.q_paths[particle][cell]
    }
}

/// Iterates Φ(U, V) := inner solve with frozen (U, V), starting from an
/// optional warm-start pair (default (0, 0)), until the β-weighted norm of
/// the difference of successive iterates falls below `tol`.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint_from(
    base: &ParticleEnsemble,
    assembly: &DriverAssembly,
    tol: f64,
    max_iter: usize,
    basis_degree: usize,
    beta_override: Option<f64>,
    initial: Option<(&[Vec<f64>], &[Vec<f64>])>,
) -> Result<AdjointSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let grid = *base.grid();
    let m = base.particles();
    let n = grid.n_steps();
    let constants = assembly.constants();
    let beta = beta_override.unwrap_or(constants.beta);

    let (mut u, mut v) = match initial {
        Some((p0, q0)) if p0.len() == m && q0.len() == m => (p0.to_vec(), q0.to_vec()),
        _ => (vec![vec![0.0; n + 1]; m], vec![vec![0.0; n]; m]),
    };

    let mut residuals: Vec<f64> = Vec::new();
    let mut growth_streak = 0usize;
    let mut implicit = vec![0.0; m];
    let mut fallbacks = 0usize;
    for _ in 0..max_iter {
        let inner = inner_bsde_solve(base, assembly, &u, &v, basis_degree)?;
        let p_diff: Vec<Vec<f64>> = inner
            .p_paths
            .iter()
            .zip(&u)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let q_diff: Vec<Vec<f64>> = inner
            .q_paths
            .iter()
            .zip(&v)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let residual = bsde_norm(&p_diff, &q_diff, &grid, beta);
        if let Some(&last) = residuals.last() {
            if residual > last {
                growth_streak += 1;
                if growth_streak >= 3 {
                    return Err(Error::BsdeDivergence);
                }
            } else {
                growth_streak = 0;
            }
        }
        residuals.push(residual);
        u = inner.p_paths;
        v = inner.q_paths;
        implicit = inner.terminal_implicit_part;
        fallbacks = inner.regression_fallbacks;
        if residual <= tol {
            break;
        }
    }

    let iterations = residuals.len();
    let monotone = residuals.windows(2).all(|w| w[1] < w[0]);
    let converged = residuals.last().is_some_and(|r| *r <= tol) && monotone;
    let floor = residuals.first().copied().unwrap_or(0.0) * 1e-13;
    let contraction_estimates = residuals
        .windows(2)
        .filter(|w| w[0] > floor && w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    Ok(AdjointSolution {
        p_paths: u,
        q_paths: v,
        report: FixedPointReport {
            iterations,
            residuals,
            beta,
            converged,
            contraction_estimates,
        },
        terminal_implicit_part: implicit,
        constants,
        regression_fallbacks: fallbacks,
    })
}

/// Solves the delayed adjoint BSDE from the zero initial pair.
pub fn solve_adjoint(
    base: &ParticleEnsemble,
    assembly: &DriverAssembly,
    tol: f64,
    max_iter: usize,
    basis_degree: usize,
) -> Result<AdjointSolution> {
    solve_adjoint_from(base, assembly, tol, max_iter, basis_degree, None, None)
}

/// Term-by-term evaluation of the costate/variational duality identity.
#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    /// E[p(T)·Y(T)].
    pub lhs: f64,
    /// state_term + tilde_term − driver_term + control_term.
    pub rhs: f64,
    pub gap: f64,
    /// 1 + |lhs| + Σ|terms|; the natural magnitude for relative comparison.
    pub scale: f64,
    pub state_term: f64,
    pub tilde_term: f64,
    pub driver_term: f64,
    pub control_term: f64,
}

/// Computes E[p(T)Y(T)] and its integral representation from the ensembles:
/// the ∂_x pairing with Y, the tilde-copy ∂_μ pairing with Y(t+δ), the full
/// driver pairing with Y, and the ∂_u pairing with (u − u*).
pub fn duality_gap(
    spec: &ProblemSpec,
    base: &ParticleEnsemble,
    u_star: &Control,
    u: &Control,
    y: &VariationalEnsemble,
    adj: &AdjointSolution,
) -> Result<DualityReport> {
    let grid = *base.grid();
    let m = base.particles();
    let n = grid.n_steps();
    let dt = grid.dt();
    let ds = grid.delta_steps();
    let mf = m as f64;
    let measures = base.all_measures()?;
    let states: Vec<Vec<f64>> =
        (0..=n).map(|k| (0..m).map(|i| base.state(i, k)).collect()).collect();

    let lhs = (0..m).map(|i| adj.p(i, n) * y.value(i, n)).sum::<f64>() / mf;

    let mut state_term = 0.0;
    let mut tilde_term = 0.0;
    let mut driver_term = 0.0;
    let mut control_term = 0.0;
    for k in 0..n {
        let t = grid.time(k);
        let fut = grid.extended(k + ds);
        let mu_fut = &measures[fut];
        let u_k = u_star.values()[k];
        let du_k = u.values()[k] - u_k;

        let mut acc_state = 0.0;
        let mut acc_control = 0.0;
        for i in 0..m {
            let x = states[k][i];
            acc_state += ((spec.drift_dx)(t, x, mu_fut, u_k) * adj.p(i, k)
                + (spec.diffusion_dx)(t, x, mu_fut, u_k) * adj.q(i, k))
                * y.value(i, k);
            acc_control += ((spec.drift_du)(t, x, mu_fut, u_k) * adj.p(i, k)
                + (spec.diffusion_du)(t, x, mu_fut, u_k) * adj.q(i, k))
                * du_k;
        }
        state_term += dt * acc_state / mf;
        control_term += dt * acc_control / mf;

        // Swapped tilde pairing: kernels at (t_k, X_j(t_k), μ̂_{t_k+δ},
        // X_i(t_k+δ), u_k), weighted by p_j(t_k)/q_j(t_k), paired with
        // Y_i(t_k+δ).
        let p_col = column(&adj.p_paths, k);
        let q_col = column(&adj.q_paths, k);
        let mut mixed = vec![0.0; m];
        add_mixed_term(
            &spec.drift_dmu,
            t,
            &states[k],
            mu_fut,
            &states[fut],
            u_k,
            Some(&p_col),
            &mut mixed,
        );
        add_mixed_term(
            &spec.diffusion_dmu,
            t,
            &states[k],
            mu_fut,
            &states[fut],
            u_k,
            Some(&q_col),
            &mut mixed,
        );
        let acc_tilde: f64 =
            (0..m).map(|i| mixed[i] * y.value_extended(i, fut)).sum::<f64>() / mf;
        tilde_term += dt * acc_tilde;

        // Full driver α(t_k) paired with Y(t_k).
        let mut alpha = vec![0.0; m];
        for (i, a) in alpha.iter_mut().enumerate() {
            let x = states[k][i];
            *a = (spec.drift_dx)(t, x, mu_fut, u_k) * adj.p(i, k)
                + (spec.diffusion_dx)(t, x, mu_fut, u_k) * adj.q(i, k)
                + (spec.running_cost_dx)(t, x, mu_fut, u_k);
        }
        if k >= ds {
            let kd = k - ds;
            let t_del = grid.time(kd);
            let u_del = u_star.values()[kd];
            let mu_t = &measures[k];
            let p_del = column(&adj.p_paths, kd);
            let q_del = column(&adj.q_paths, kd);
            add_mixed_term(
                &spec.drift_dmu,
                t_del,
                &states[kd],
                mu_t,
                &states[k],
                u_del,
                Some(&p_del),
                &mut alpha,
            );
            add_mixed_term(
                &spec.diffusion_dmu,
                t_del,
                &states[kd],
                mu_t,
                &states[k],
                u_del,
                Some(&q_del),
                &mut alpha,
            );
            add_mixed_term(
                &spec.running_cost_dmu,
                t_del,
                &states[kd],
                mu_t,
                &states[k],
                u_del,
                None,
                &mut alpha,
            );
        }
        let acc_driver: f64 = (0..m).map(|i| alpha[i] * y.value(i, k)).sum::<f64>() / mf;
        driver_term += dt * acc_driver;
    }

    let rhs = state_term + tilde_term - driver_term + control_term;
    let scale = 1.0
        + lhs.abs()
        + state_term.abs()
        + tilde_term.abs()
        + driver_term.abs()
        + control_term.abs();
    Ok(DualityReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        scale,
        state_term,
        tilde_term,
        driver_term,
        control_term,
    })
}

/// Sampled verification of the driver regularity bounds: the Lipschitz ratio
/// of θ in (x₁..x₄) and the size of ϑ at the origin.
#[derive(Clone, Debug, Serialize)]
pub struct DriverProbeReport {
    pub theta_lipschitz_max: f64,
    pub vartheta_at_zero_max: f64,
}

pub fn check_driver_assumptions(
    assembly: &DriverAssembly,
    base: &ParticleEnsemble,
    seed: u64,
    n_probes: usize,
) -> Result<DriverProbeReport> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = base.particles();
    let n = base.grid().n_steps();
    let ds = base.grid().delta_steps();

    let eval_theta = |k: usize, i: usize, j: usize, x: [f64; 4]| -> f64 {
        match assembly {
            DriverAssembly::General { theta, .. } => theta(k, i, j, x),
            DriverAssembly::ControlAdjoint(d) => {
                let mut v = d.dxb[k][i] * x[0] + d.dxs[k][i] * x[1] + d.dxl[k][i];
                if k >= ds {
                    let kd = k - ds;
                    let t_del = d.grid.time(kd);
                    let u_del = d.u_star[kd];
                    let mu_t = &d.measures[k];
                    v += d.spec.drift_dmu.eval(t_del, d.states[kd][j], mu_t, d.states[k][i], u_del)
                        * x[2];
                    v += d
                        .spec
                        .diffusion_dmu
                        .eval(t_del, d.states[kd][j], mu_t, d.states[k][i], u_del)
                        * x[3];
                    v += d
                        .spec
                        .running_cost_dmu
                        .eval(t_del, d.states[kd][j], mu_t, d.states[k][i], u_del);
                }
                v
            }
        }
    };
    let eval_vartheta = |k: usize, i: usize, j: usize, x3: f64, x4: f64| -> f64 {
        match assembly {
            DriverAssembly::General { vartheta, .. } => vartheta(k, i, j, x3, x4),
            DriverAssembly::ControlAdjoint(d) => {
                let t = d.grid.time(k);
                let u_k = d.u_star[k.min(d.u_star.len() - 1)];
                let mu_t = &d.measures[n];
                d.spec.drift_dmu.eval(t, d.states[k][j], mu_t, d.states[n][i], u_k) * x3
                    + d.spec.diffusion_dmu.eval(t, d.states[k][j], mu_t, d.states[n][i], u_k) * x4
                    + d.spec.running_cost_dmu.eval(t, d.states[k][j], mu_t, d.states[n][i], u_k)
            }
        }
    };

    let mut theta_lip: f64 = 0.0;
    let mut vartheta_zero: f64 = 0.0;
    for _ in 0..n_probes {
        let k = rng.gen_range(0..n);
        let i = rng.gen_range(0..m);
        let j = rng.gen_range(0..m);
        let x: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let x2: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let dist = x.iter().zip(&x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist > 1e-9 {
            let ratio = (eval_theta(k, i, j, x) - eval_theta(k, i, j, x2)).abs() / dist;
            theta_lip = theta_lip.max(ratio);
        }
        let k_term = (n.saturating_sub(ds) + k % ds.max(1)).min(n - 1);
        vartheta_zero = vartheta_zero.max(eval_vartheta(k_term, i, j, 0.0, 0.0).abs());
    }
    Ok(DriverProbeReport { theta_lipschitz_max: theta_lip, vartheta_at_zero_max: vartheta_zero })
}
