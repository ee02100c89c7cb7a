//! The variational SDE for the Gâteaux derivative Y of the controlled state
//! with respect to a control perturbation, and the difference-quotient check
//! that certifies it.
//!
//! Y solves the linear SDE driven by the frozen base trajectory X*:
//!
//! ```text
//! dY(t) = { ∂_x b·Y(t) + Ẽ[∂_μ b·Ỹ(t+δ)] + ∂_u b·(u−u*)(t) } dt
//!       + { ∂_x σ·Y(t) + Ẽ[∂_μ σ·Ỹ(t+δ)] + ∂_u σ·(u−u*)(t) } dB(t),
//! Y(0) = 0,   Y(t) = Y(T) for t ≥ T,
//! ```
//!
//! with every coefficient evaluated along (t, X*(t), μ̂_{t+δ}, u*(t)) and the
//! tilde expectation realized as the average over the same particle cloud.
//! Because Y(t+δ) anticipates, the solve is a Picard iteration over Y-paths
//! with the same weighted-norm stopping rule as the forward solver.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{
    solve_forward, weighted_norm, FixedPointReport, ParticleEnsemble, PicardMode, TimeGrid,
};
use crate::problems::{Control, MeasureDerivative, ProblemSpec};

/// Gâteaux-derivative paths for one base trajectory and one direction.
#[derive(Clone, Debug)]
pub struct VariationalEnsemble {
    /// M × (N+1) values of Y, with Y(0) = 0 and the Y(t)=Y(T) extension.
    pub y_paths: Vec<Vec<f64>>,
    pub grid: TimeGrid,
    /// Per-cell direction (u − u*).
    pub direction: Vec<f64>,
    pub report: FixedPointReport,
}

impl VariationalEnsemble {
    pub fn value(&self, particle: usize, node: usize) -> f64 {
        self.y_paths[particle][node]
    }

    pub fn value_extended(&self, particle: usize, node: usize) -> f64 {
        self.y_paths[particle][self.grid.extended(node)]
    }

    /// Cloud mean of Y at a node.
    pub fn mean_at(&self, node: usize) -> f64 {
        let node = self.grid.extended(node);
        self.y_paths.iter().map(|p| p[node]).sum::<f64>() / self.y_paths.len() as f64
    }
}

/// Tilde-copy average (1/M) Σ_j ∂_μc(t, x_i, μ, X*_j(t+δ), u)·Y_j(t+δ) for
/// every particle i at one time step. The factored form separates the j-sum
/// from the i-loop.
#[allow(clippy::too_many_arguments)]
fn tilde_average(
    dmu: &MeasureDerivative,
    t: f64,
    states: &[f64],
    future_states: &[f64],
    future_y: &[f64],
    mu: &crate::measure::EmpiricalMeasure,
    u: f64,
    out: &mut [f64],
) {
    let m = states.len() as f64;
    match dmu {
        MeasureDerivative::Zero => out.fill(0.0),
        MeasureDerivative::Factored { weight, point } => {
            let j_sum: f64 = future_states
                .iter()
                .zip(future_y)
                .map(|(xj, yj)| point(*xj) * yj)
                .sum::<f64>()
                / m;
            for (o, &xi) in out.iter_mut().zip(states) {
                *o = weight(t, xi, mu, u) * j_sum;
            }
        }
        MeasureDerivative::General(kernel) => {
            out.par_iter_mut().zip(states.par_iter()).for_each(|(o, &xi)| {
                let mut acc = 0.0;
                for (xj, yj) in future_states.iter().zip(future_y) {
                    acc += kernel(t, xi, mu, *xj, u) * yj;
                }
                *o = acc / m;
            });
        }
    }
}

/// Solves the variational equation along a converged base trajectory under
/// u*, for the direction u − u*.
pub fn solve_variational(
    spec: &ProblemSpec,
    base: &ParticleEnsemble,
    u_star: &Control,
    u: &Control,
    tol: f64,
    max_iter: usize,
) -> Result<VariationalEnsemble> {
    spec.check_control(u_star)?;
    if u.values().len() != u_star.values().len() {
        return Err(Error::LengthMismatch {
            left: u.values().len(),
            right: u_star.values().len(),
        });
    }
    let grid = *base.grid();
    let m = base.particles();
    let n = grid.n_steps();
    let dt = grid.dt();
    let ds = grid.delta_steps();
    let direction: Vec<f64> = u
        .values()
        .iter()
        .zip(u_star.values())
        .map(|(a, b)| a - b)
        .collect();

    let measures = base.all_measures()?;
    let states: Vec<Vec<f64>> =
        (0..=n).map(|k| (0..m).map(|i| base.state(i, k)).collect()).collect();

    let beta = 7.0 * spec.lipschitz_c;
    let mut current = vec![vec![0.0; n + 1]; m];
    let mut residuals: Vec<f64> = Vec::new();
    let mut growth_streak = 0usize;

    for _ in 0..max_iter {
        // Frozen tilde averages per step, from the previous iterate.
        let mut eterm_b = vec![vec![0.0; m]; n];
        let mut eterm_s = vec![vec![0.0; m]; n];
        for k in 0..n {
            let t = grid.time(k);
            let fut = grid.extended(k + ds);
            let mu = &measures[fut];
            let u_k = u_star.values()[k];
            let future_y: Vec<f64> = (0..m).map(|j| current[j][fut]).collect();
            tilde_average(
                &spec.drift_dmu,
                t,
                &states[k],
                &states[fut],
                &future_y,
                mu,
                u_k,
                &mut eterm_b[k],
            );
            tilde_average(
                &spec.diffusion_dmu,
                t,
                &states[k],
                &states[fut],
                &future_y,
                mu,
                u_k,
                &mut eterm_s[k],
            );
        }

        let next: Vec<Result<Vec<f64>>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut y = vec![0.0; n + 1];
                for k in 0..n {
                    let t = grid.time(k);
                    let fut = grid.extended(k + ds);
                    let mu = &measures[fut];
                    let u_k = u_star.values()[k];
                    let x = states[k][i];
                    let y_prev = current[i][k];
                    let d = direction[k];
                    let drift = (spec.drift_dx)(t, x, mu, u_k) * y_prev
                        + eterm_b[k][i]
                        + (spec.drift_du)(t, x, mu, u_k) * d;
                    let diff = (spec.diffusion_dx)(t, x, mu, u_k) * y_prev
                        + eterm_s[k][i]
                        + (spec.diffusion_du)(t, x, mu, u_k) * d;
                    let next_y = y[k] + drift * dt + diff * base.increments()[i][k];
                    if !next_y.is_finite() {
                        return Err(Error::NonFiniteState { particle: i, step: k });
                    }
                    y[k + 1] = next_y;
                }
                Ok(y)
            })
            .collect();
        let next = next.into_iter().collect::<Result<Vec<_>>>()?;

        let diff: Vec<Vec<f64>> = next
            .iter()
            .zip(&current)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let residual = weighted_norm(&diff, &grid, beta);
        if let Some(&last) = residuals.last() {
            if residual > last {
                growth_streak += 1;
                if growth_streak >= 3 {
                    return Err(Error::PicardDivergence);
                }
            } else {
                growth_streak = 0;
            }
        }
        residuals.push(residual);
        current = next;
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
    Ok(VariationalEnsemble {
        y_paths: current,
        grid,
        direction,
        report: FixedPointReport {
            iterations,
            residuals,
            beta,
            converged,
            contraction_estimates,
        },
    })
}

/// Per-θ difference-quotient error of the Gâteaux derivative.
#[derive(Clone, Debug, Serialize)]
pub struct DifferenceQuotientRow {
    pub theta: f64,
    /// (1/M) Σ_i sup_k |Y_i(t_k) − ζ^θ_i(t_k)|² with ζ^θ = (X^θ − X*)/θ.
    pub mean_sup_sq_error: f64,
}

/// Solves the forward problem at u^θ = u* + θ(u − u*) with the same noise as
/// the base run and measures how fast the pathwise difference quotient
/// approaches Y. The returned errors must decrease toward the grid floor.
#[allow(clippy::too_many_arguments)]
pub fn difference_quotient_check(
    spec: &ProblemSpec,
    u_star: &Control,
    u: &Control,
    theta_sequence: &[f64],
    particles: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<DifferenceQuotientRow>> {
    for &theta in theta_sequence {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::InvalidInput("theta values must lie in (0, 1]".into()));
        }
    }
    let (base, _) =
        solve_forward(spec, u_star, particles, seed, tol, max_iter, PicardMode::Full)?;
    let y = solve_variational(spec, &base, u_star, u, tol, max_iter)?;

    let mut rows = Vec::with_capacity(theta_sequence.len());
    for &theta in theta_sequence {
        let u_theta = u_star.blend(u, theta);
        let (bumped, _) =
            solve_forward(spec, &u_theta, particles, seed, tol, max_iter, PicardMode::Full)?;
        let m = particles as f64;
        let mut acc = 0.0;
        for i in 0..particles {
            let mut sup: f64 = 0.0;
            for k in 0..base.grid().n_nodes() {
                let quotient = (bumped.state(i, k) - base.state(i, k)) / theta;
                sup = sup.max((y.value(i, k) - quotient).abs());
            }
            acc += sup * sup;
        }
        rows.push(DifferenceQuotientRow { theta, mean_sup_sq_error: acc / m });
    }
    Ok(rows)
}
