//! Interacting-particle Euler-Maruyama simulation of the anticipating
//! McKean-Vlasov SDE via a Picard fixed point.
//!
//! The map Φ sends a candidate ensemble U to the ensemble V defined by
//!
//! ```text
//! V_i(t_{k+1}) = V_i(t_k) + b(t_k, U_i(t_k), μ̂_{k+δ/dt}, u_k)·dt
//!                        + σ(t_k, U_i(t_k), μ̂_{k+δ/dt}, u_k)·ΔB_{i,k}
//! ```
//!
//! where μ̂_j is the empirical measure of U's particle cloud at time
//! t_{min(j,N)} (the extension X(t) = X(T) for t ≥ T). Both the state and the
//! law argument read the previous iterate, so the iteration realizes the
//! full fixed-point map whose contraction factor is certified in the weighted
//! norm
//!
//! ```text
//! ‖U‖²_{−β} = E[e^{−βT}|U(T)|²] + (6/7)·β·E[∫₀ᵀ e^{−βs}|U(s)|² ds],
//! ```
//!
//! with β = 7C and contraction guaranteed for δ ≤ δ₀ = 1/(7C). Brownian
//! increments are drawn once per seed (one counter stream per particle) and
//! reused across all Picard iterations, giving a pathwise fixed point and
//! common random numbers across control evaluations.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::problems::{Control, ProblemSpec};

/// Uniform grid on [0, T] with the anticipation lag pinned to a whole number
/// of steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    t_horizon: f64,
    n_steps: usize,
    dt: f64,
    delta_steps: usize,
}

impl TimeGrid {
    /// Builds a grid with N steps over [0, T]; δ must be an integer multiple
    /// of dt = T/N (within 1e-9 relative), otherwise construction fails.
    pub fn new(t_horizon: f64, n_steps: usize, delta: f64) -> Result<Self> {
        if !(t_horizon > 0.0) || !t_horizon.is_finite() {
            return Err(Error::InvalidGrid("horizon must be positive and finite".into()));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidGrid("delta must be nonnegative and finite".into()));
        }
        let dt = t_horizon / n_steps as f64;
        let ratio = delta / dt;
        let delta_steps = ratio.round() as usize;
        if (delta_steps as f64 - ratio).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::DeltaNotGridMultiple);
        }
        Ok(Self { t_horizon, n_steps, dt, delta_steps })
    }

    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delta_steps(&self) -> usize {
        self.delta_steps
    }

    pub fn delta(&self) -> f64 {
        self.delta_steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Node index for a time-shifted query, clamped by the X(t)=X(T) extension.
    pub fn extended(&self, k: usize) -> usize {
        k.min(self.n_steps)
    }
}

/// Which arguments of the step map read the previous Picard iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PicardMode {
    /// State and law both frozen at the previous iterate (the map Φ itself).
    Full,
    /// Only the anticipated law is frozen; the state argument reads the path
    /// being built. Usually converges in fewer sweeps; same fixed point.
    LawOnly,
}

/// M particle paths on the grid together with the Brownian increments that
/// generated them.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    seed: u64,
    /// M × (N+1) states.
    paths: Vec<Vec<f64>>,
    /// M × N increments ΔB_{i,k}.
    increments: Vec<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn from_paths(
        grid: TimeGrid,
        paths: Vec<Vec<f64>>,
        increments: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if paths.is_empty() || paths.len() != increments.len() {
            return Err(Error::InvalidInput("paths/increments shape mismatch".into()));
        }
        if paths.iter().any(|p| p.len() != grid.n_nodes())
            || increments.iter().any(|w| w.len() != grid.n_steps())
        {
            return Err(Error::InvalidInput("path length does not match grid".into()));
        }
        Ok(Self { grid, seed, paths, increments })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particles(&self) -> usize {
        self.paths.len()
    }

    pub fn paths(&self) -> &[Vec<f64>] {
        &self.paths
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    pub fn state(&self, particle: usize, node: usize) -> f64 {
        self.paths[particle][node]
    }

    /// State with the X(t) = X(T) extension for node queries past the horizon.
    pub fn state_extended(&self, particle: usize, node: usize) -> f64 {
        self.paths[particle][self.grid.extended(node)]
    }

    /// Brownian path value B_i(t_k) reconstructed from the increments.
    pub fn brownian(&self, particle: usize, node: usize) -> f64 {
        self.increments[particle][..node].iter().sum()
    }

    /// Empirical measure of the cloud at node min(k, N).
    pub fn measure_extended(&self, node: usize) -> Result<EmpiricalMeasure> {
        let node = self.grid.extended(node);
        EmpiricalMeasure::new(self.paths.iter().map(|p| p[node]).collect())
    }

    /// Cloud mean at node min(k, N).
    pub fn mean_at(&self, node: usize) -> f64 {
        let node = self.grid.extended(node);
        self.paths.iter().map(|p| p[node]).sum::<f64>() / self.paths.len() as f64
    }

    /// Cloud measures at every node, with ties in sample order preserved.
    pub fn all_measures(&self) -> Result<Vec<EmpiricalMeasure>> {
        (0..self.grid.n_nodes()).map(|k| self.measure_extended(k)).collect()
    }
}

/// Draws M × N Brownian increments, one ChaCha stream per particle, so that
/// existing paths are unchanged when M grows and results do not depend on the
/// worker-thread count.
pub fn sample_increments(grid: &TimeGrid, particles: usize, seed: u64) -> Vec<Vec<f64>> {
    let sqrt_dt = grid.dt().sqrt();
    let n = grid.n_steps();
    (0..particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..n)
                .map(|_| sqrt_dt * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect()
}

/// Sanity bound on the sampled increments: per step, the cloud mean stays
/// within 5·sqrt(dt/M) and the cloud variance within dt·(1 ± 5·sqrt(2/M)).
pub fn noise_sanity(increments: &[Vec<f64>], grid: &TimeGrid) -> Result<()> {
    let m = increments.len();
    if m < 2 {
        return Ok(());
    }
    let dt = grid.dt();
    let mf = m as f64;
    for k in 0..grid.n_steps() {
        let mean = increments.iter().map(|w| w[k]).sum::<f64>() / mf;
        let var = increments.iter().map(|w| (w[k] - mean).powi(2)).sum::<f64>() / mf;
        let mean_bound = 5.0 * (dt / mf).sqrt();
        let var_slack = 5.0 * dt * (2.0 / mf).sqrt();
        if mean.abs() > mean_bound {
            return Err(Error::NoiseSanity(format!(
                "step {k}: |mean| = {} exceeds {mean_bound}",
                mean.abs()
            )));
        }
        if (var - dt).abs() > var_slack {
            return Err(Error::NoiseSanity(format!(
                "step {k}: |var − dt| = {} exceeds {var_slack}",
                (var - dt).abs()
            )));
        }
    }
    Ok(())
}

/// Diagnostics of a fixed-point solve: residual history in the weighted norm
/// and the measured contraction ratios.
#[derive(Clone, Debug, Serialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub beta: f64,
    pub converged: bool,
    pub contraction_estimates: Vec<f64>,
}

impl FixedPointReport {
    fn from_residuals(residuals: Vec<f64>, beta: f64, tol: f64) -> Self {
        let iterations = residuals.len();
        let monotone = residuals.windows(2).all(|w| w[1] < w[0]);
        let converged = residuals.last().is_some_and(|r| *r <= tol) && monotone;
        let floor = residuals.first().copied().unwrap_or(0.0) * 1e-13;
        let contraction_estimates = residuals
            .windows(2)
            .filter(|w| w[0] > floor && w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect();
        Self { iterations, residuals, beta, converged, contraction_estimates }
    }
}

/// Discrete weighted norm of an ensemble-shaped difference: trapezoid rule
/// on the time integral plus the terminal atom,
/// sqrt( (1/M)Σ_i e^{−βT}U_i(T)² + (6/7)β (1/M)Σ_i Σ_k w_k e^{−βt_k}U_i(t_k)² ).
pub fn weighted_norm(diff: &[Vec<f64>], grid: &TimeGrid, beta: f64) -> f64 {
    let m = diff.len() as f64;
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut terminal = 0.0;
    let mut integral = 0.0;
    let decay_t = (-beta * grid.t_horizon()).exp();
    for path in diff {
        terminal += decay_t * path[n] * path[n];
        for (k, &v) in path.iter().enumerate() {
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            integral += w * (-beta * grid.time(k)).exp() * v * v;
        }
    }
    ((terminal + (6.0 / 7.0) * beta * integral) / m).sqrt()
}

fn diff_paths(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Vec<Vec<f64>> {
    a.paths
        .iter()
        .zip(&b.paths)
        .map(|(pa, pb)| pa.iter().zip(pb).map(|(x, y)| x - y).collect())
        .collect()
}

fn sweep(
    prev: &ParticleEnsemble,
    spec: &ProblemSpec,
    control: &Control,
    mode: PicardMode,
) -> Result<ParticleEnsemble> {
    let grid = prev.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let delta_steps = grid.delta_steps();
    let measures = prev.all_measures()?;

    let paths: Vec<Result<Vec<f64>>> = prev
        .paths
        .par_iter()
        .zip(&prev.increments)
        .enumerate()
        .map(|(i, (prev_path, inc))| {
            let mut path = vec![0.0; n + 1];
            path[0] = spec.x0;
            for k in 0..n {
                let t = grid.time(k);
                let mu = &measures[grid.extended(k + delta_steps)];
                let u = control.values()[k];
                let x_arg = match mode {
                    PicardMode::Full => prev_path[k],
                    PicardMode::LawOnly => path[k],
                };
                let b = (spec.drift)(t, x_arg, mu, u);
                let s = (spec.diffusion)(t, x_arg, mu, u);
                let next = path[k] + b * dt + s * inc[k];
                if !next.is_finite() {
                    return Err(Error::NonFiniteState { particle: i, step: k });
                }
                path[k + 1] = next;
            }
            Ok(path)
        })
        .collect();
    let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
    ParticleEnsemble::from_paths(grid, paths, prev.increments.clone(), prev.seed)
}

/// One application of the fixed-point map Φ: drift/diffusion arguments (state
/// and anticipated law) read the previous iterate, the noise is reused.
pub fn picard_step(
    prev: &ParticleEnsemble,
    spec: &ProblemSpec,
    control: &Control,
) -> Result<ParticleEnsemble> {
    sweep(prev, spec, control, PicardMode::Full)
}

fn constant_ensemble(
    grid: TimeGrid,
    particles: usize,
    seed: u64,
    x0: f64,
    increments: Vec<Vec<f64>>,
) -> Result<ParticleEnsemble> {
    let paths = vec![vec![x0; grid.n_nodes()]; particles];
    ParticleEnsemble::from_paths(grid, paths, increments, seed)
}

/// Iterates the Picard map from an optional initial guess until the weighted
/// norm of successive iterates falls below `tol`.
#[allow(clippy::too_many_arguments)]
pub fn solve_forward_from(
    spec: &ProblemSpec,
    control: &Control,
    particles: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    mode: PicardMode,
    initial: Option<&ParticleEnsemble>,
) -> Result<(ParticleEnsemble, FixedPointReport)> {
    if particles < 2 {
        return Err(Error::InvalidInput("need at least 2 particles".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    spec.check_control(control)?;
    let grid = *control.grid();

    let increments = sample_increments(&grid, particles, seed);
    noise_sanity(&increments, &grid)?;

    let mut current = match initial {
        Some(guess)
            if guess.particles() == particles && guess.grid == grid =>
        {
            ParticleEnsemble::from_paths(grid, guess.paths.clone(), increments, seed)?
        }
        _ => constant_ensemble(grid, particles, seed, spec.x0, increments)?,
    };

    let beta = 7.0 * spec.lipschitz_c;
    let mut residuals = Vec::new();
    let mut growth_streak = 0usize;
    for _ in 0..max_iter {
        let next = sweep(&current, spec, control, mode)?;
        let residual = weighted_norm(&diff_paths(&next, &current), &grid, beta);
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
    let report = FixedPointReport::from_residuals(residuals, beta, tol);
    Ok((current, report))
}

/// Solves the anticipating McKean-Vlasov SDE from the constant initial guess
/// U⁰ ≡ x0. Noise is drawn once from `seed` and reused across iterations.
pub fn solve_forward(
    spec: &ProblemSpec,
    control: &Control,
    particles: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    mode: PicardMode,
) -> Result<(ParticleEnsemble, FixedPointReport)> {
    solve_forward_from(spec, control, particles, seed, tol, max_iter, mode, None)
}

/// Measures ‖Φ(U¹)−Φ(U²)‖_{−β} / ‖U¹−U²‖_{−β} for random ensemble pairs with
/// shared noise; pairs with zero denominator are skipped.
pub fn contraction_probe(
    spec: &ProblemSpec,
    control: &Control,
    particles: usize,
    seed: u64,
    n_pairs: usize,
) -> Result<Vec<f64>> {
    spec.check_control(control)?;
    let grid = *control.grid();
    let beta = 7.0 * spec.lipschitz_c;
    let increments = sample_increments(&grid, particles, seed);
    noise_sanity(&increments, &grid)?;

    // Brownian paths shared by every probe ensemble.
    let brownian: Vec<Vec<f64>> = increments
        .iter()
        .map(|inc| {
            let mut b = vec![0.0; grid.n_nodes()];
            for k in 0..grid.n_steps() {
                b[k + 1] = b[k] + inc[k];
            }
            b
        })
        .collect();

    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed);
    probe_rng.set_stream(u64::MAX); // keep probe draws off the particle streams
    let random_ensemble = |rng: &mut ChaCha8Rng| -> Result<ParticleEnsemble> {
        let paths: Vec<Vec<f64>> = brownian
            .iter()
            .map(|b| {
                let slope: f64 = rng.sample(rand_distr::StandardNormal);
                let amp: f64 = rng.sample(rand_distr::StandardNormal);
                (0..grid.n_nodes())
                    .map(|k| spec.x0 + slope * grid.time(k) / grid.t_horizon() + amp * b[k])
                    .collect()
            })
            .collect();
        ParticleEnsemble::from_paths(grid, paths, increments.clone(), seed)
    };

    let mut ratios = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let u1 = random_ensemble(&mut probe_rng)?;
        let u2 = random_ensemble(&mut probe_rng)?;
        let denom = weighted_norm(&diff_paths(&u1, &u2), &grid, beta);
        if denom == 0.0 {
            continue;
        }
        let v1 = picard_step(&u1, spec, control)?;
        let v2 = picard_step(&u2, spec, control)?;
        let num = weighted_norm(&diff_paths(&v1, &v2), &grid, beta);
        ratios.push(num / denom);
    }
    Ok(ratios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{builtin, coef};
    use std::collections::BTreeMap;

    fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn grid_requires_delta_multiple_of_dt() {
        assert!(TimeGrid::new(1.0, 10, 0.1).is_ok());
        assert!(matches!(TimeGrid::new(1.0, 10, 0.15), Err(Error::DeltaNotGridMultiple)));
        let g = TimeGrid::new(1.0, 10, 0.3).unwrap();
        assert_eq!(g.delta_steps(), 3);
        assert!((g.delta() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn weighted_norm_zero_and_beta_zero() {
        let grid = TimeGrid::new(1.0, 50, 0.0).unwrap();
        let zero = vec![vec![0.0; grid.n_nodes()]; 3];
        assert_eq!(weighted_norm(&zero, &grid, 7.0), 0.0);

        // β = 0 kills the integral term; constant 1 and T = 1 leave exactly 1.
        let ones = vec![vec![1.0; grid.n_nodes()]; 3];
        assert!((weighted_norm(&ones, &grid, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_norm_matches_closed_form_at_beta_seven() {
        // For U ≡ 1, T = 1: norm² = e^{−β} + (6/7)β ∫₀¹ e^{−βs} ds
        //                          = e^{−β} + (6/7)(1 − e^{−β}).
        let beta: f64 = 7.0;
        let expected = ((-beta).exp() + (6.0 / 7.0) * (1.0 - (-beta).exp())).sqrt();
        let grid = TimeGrid::new(1.0, 4000, 0.0).unwrap();
        let ones = vec![vec![1.0; grid.n_nodes()]; 2];
        let norm = weighted_norm(&ones, &grid, beta);
        assert!((norm - expected).abs() < 1e-6, "norm {norm} vs {expected}");
    }

    #[test]
    fn picard_step_constant_coefficients() {
        let grid = TimeGrid::new(1.0, 20, 0.0).unwrap();
        let spec = builtin("constant", &params(&[("b", 0.0), ("sigma", 0.0)])).unwrap();
        let control = Control::constant(grid, 0.0);
        let increments = sample_increments(&grid, 4, 9);
        let prev = ParticleEnsemble::from_paths(
            grid,
            vec![vec![5.0; grid.n_nodes()]; 4], // arbitrary previous iterate
            increments,
            9,
        )
        .unwrap();
        let next = picard_step(&prev, &spec, &control).unwrap();
        for i in 0..4 {
            for k in 0..=20 {
                assert_eq!(next.state(i, k), 0.0); // x0 = 0 for "constant"
            }
        }
    }

    #[test]
    fn picard_step_unit_drift_gives_linear_paths() {
        let grid = TimeGrid::new(1.0, 10, 0.0).unwrap();
        let spec = builtin("constant", &params(&[("b", 1.0), ("x0", 2.0)])).unwrap();
        let control = Control::constant(grid, 0.0);
        let increments = sample_increments(&grid, 3, 1);
        let prev = ParticleEnsemble::from_paths(
            grid,
            vec![vec![-7.0; grid.n_nodes()]; 3],
            increments,
            1,
        )
        .unwrap();
        let next = picard_step(&prev, &spec, &control).unwrap();
        for i in 0..3 {
            for k in 0..=10 {
                assert!((next.state(i, k) - (2.0 + grid.time(k))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn picard_step_deterministic_mean_frozen_at_one() {
        // prev ≡ x0 = 1 freezes the anticipated mean at 1, so one sweep
        // gives V(t_k) = 1 + t_k.
        let grid = TimeGrid::new(1.0, 10, 0.1).unwrap();
        let spec = builtin("deterministic-mean", &params(&[("delta", 0.1)])).unwrap();
        let control = Control::constant(grid, 0.0);
        let increments = sample_increments(&grid, 4, 3);
        let prev =
            ParticleEnsemble::from_paths(grid, vec![vec![1.0; grid.n_nodes()]; 4], increments, 3)
                .unwrap();
        let next = picard_step(&prev, &spec, &control).unwrap();
        for k in 0..=10 {
            assert!((next.state(0, k) - (1.0 + grid.time(k))).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_constant_problem_two_iterations() {
        let grid = TimeGrid::new(1.0, 50, 0.0).unwrap();
        let spec =
            builtin("constant", &params(&[("b", 0.4), ("sigma", 0.7), ("x0", 1.0)])).unwrap();
        let control = Control::constant(grid, 0.0);
        let (ens, report) =
            solve_forward(&spec, &control, 32, 17, 1e-10, 50, PicardMode::Full).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2, "iterations {}", report.iterations);
        assert_eq!(*report.residuals.last().unwrap(), 0.0);
        // X_i(t_k) = x0 + b·t_k + σ·B_i(t_k) pathwise.
        for i in 0..ens.particles() {
            for k in 0..=grid.n_steps() {
                let expected = 1.0 + 0.4 * grid.time(k) + 0.7 * ens.brownian(i, k);
                assert!((ens.state(i, k) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_mean_without_lag_reaches_e() {
        let grid = TimeGrid::new(1.0, 1000, 0.0).unwrap();
        let spec = builtin("deterministic-mean", &BTreeMap::new()).unwrap();
        let control = Control::constant(grid, 0.0);
        let (ens, report) =
            solve_forward(&spec, &control, 8, 5, 1e-10, 200, PicardMode::Full).unwrap();
        assert!(report.converged);
        let mean = ens.mean_at(grid.n_steps());
        assert!(
            (mean - std::f64::consts::E).abs() < 2e-3,
            "mean {mean} vs e"
        );
    }

    #[test]
    fn extra_step_after_convergence_is_small() {
        let grid = TimeGrid::new(1.0, 100, 0.1).unwrap();
        let spec = builtin(
            "lq-anticipating-mean",
            &params(&[("delta", 0.1), ("sigma0", 0.3)]),
        )
        .unwrap();
        let control = Control::constant(grid, 0.2);
        let tol = 1e-9;
        let (ens, report) =
            solve_forward(&spec, &control, 64, 11, tol, 200, PicardMode::Full).unwrap();
        assert!(report.converged);
        let again = picard_step(&ens, &spec, &control).unwrap();
        let moved = weighted_norm(&diff_paths(&again, &ens), &grid, report.beta);
        assert!(moved <= 10.0 * tol, "moved {moved}");
    }

    #[test]
    fn law_only_mode_reaches_same_fixed_point() {
        let grid = TimeGrid::new(1.0, 80, 0.2).unwrap();
        let spec = builtin("lq-anticipating-mean", &params(&[("delta", 0.2)])).unwrap();
        let control = Control::constant(grid, -0.3);
        let (a, _) = solve_forward(&spec, &control, 32, 23, 1e-12, 200, PicardMode::Full).unwrap();
        let (b, _) =
            solve_forward(&spec, &control, 32, 23, 1e-12, 200, PicardMode::LawOnly).unwrap();
        let gap = weighted_norm(&diff_paths(&a, &b), &grid, 7.0 * spec.lipschitz_c);
        assert!(gap < 1e-10, "gap {gap}");
    }

    #[test]
    fn decoupled_paths_do_not_depend_on_particle_count() {
        let grid = TimeGrid::new(1.0, 60, 0.0).unwrap();
        let spec = builtin("decoupled", &BTreeMap::new()).unwrap();
        let control = Control::constant(grid, 0.5);
        let (small, _) =
            solve_forward(&spec, &control, 16, 77, 1e-12, 100, PicardMode::Full).unwrap();
        let (large, _) =
            solve_forward(&spec, &control, 64, 77, 1e-12, 100, PicardMode::Full).unwrap();
        for i in 0..16 {
            assert_eq!(small.paths()[i], large.paths()[i], "particle {i} differs");
        }
    }

    #[test]
    fn divergence_detected_for_violent_coefficients() {
        // Drift with a huge Lipschitz constant but a tiny declared C: the
        // iteration blows up and must be reported as divergence.
        let grid = TimeGrid::new(1.0, 40, 0.5).unwrap();
        let mut spec = builtin("lq-anticipating-mean", &params(&[("delta", 0.5)])).unwrap();
        spec.drift = coef(|_, x, mu, _| 40.0 * x + 40.0 * mu.mean());
        spec.lipschitz_c = 0.01; // dishonest on purpose
        let control = Control::constant(grid, 0.0);
        let err =
            solve_forward(&spec, &control, 16, 3, 1e-10, 200, PicardMode::Full).unwrap_err();
        assert!(matches!(err, Error::PicardDivergence | Error::NonFiniteState { .. }));
    }

    #[test]
    fn contraction_probe_zero_for_insensitive_map() {
        let grid = TimeGrid::new(1.0, 30, 0.0).unwrap();
        let spec = builtin("constant", &params(&[("b", 1.0), ("sigma", 0.5)])).unwrap();
        let control = Control::constant(grid, 0.0);
        let ratios = contraction_probe(&spec, &control, 16, 5, 6).unwrap();
        assert_eq!(ratios.len(), 6);
        for r in ratios {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn contraction_probe_lq_within_proof_bound() {
        // δ at the contraction boundary 1/(7C) with C = max(|a|, |ā|) = 0.5.
        let delta = 2.0 / 7.0;
        let grid = TimeGrid::new(1.0, 140, delta).unwrap();
        let spec = builtin("lq-anticipating-mean", &params(&[("delta", delta)])).unwrap();
        let control = Control::constant(grid, 0.1);
        let ratios = contraction_probe(&spec, &control, 64, 31, 10).unwrap();
        let bound = (2.0f64 / 3.0).sqrt() + 0.05;
        for r in &ratios {
            assert!(*r <= bound, "ratio {r} above {bound}");
        }
    }

    #[test]
    fn noise_sanity_accepts_fresh_draws() {
        let grid = TimeGrid::new(1.0, 100, 0.0).unwrap();
        let inc = sample_increments(&grid, 256, 12345);
        noise_sanity(&inc, &grid).unwrap();
    }

    #[test]
    fn noise_streams_extend_without_reshuffling() {
        let grid = TimeGrid::new(1.0, 25, 0.0).unwrap();
        let small = sample_increments(&grid, 8, 99);
        let large = sample_increments(&grid, 32, 99);
        assert_eq!(small, large[..8].to_vec());
    }
}
