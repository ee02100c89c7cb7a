//! Property-based invariants: metric axioms and exact couplings for the
//! empirical 2-Wasserstein distance, and pathwise agreement of the Picard
//! solver with a direct one-pass scheme when the anticipation lag vanishes.

use itertools::Itertools;
use proptest::prelude::*;

use mvsde_core::forward::{
    sample_increments, solve_forward, ParticleEnsemble, PicardMode, TimeGrid,
};
use mvsde_core::measure::{wasserstein2, EmpiricalMeasure};
use mvsde_core::problems::{builtin, Control};
use std::collections::BTreeMap;

fn finite_samples(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

/// Minimum of sqrt((1/M) Σ |x_i − y_{π(i)}|²) over all permutations π.
fn brute_force_w2(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    (0..ys.len())
        .permutations(ys.len())
        .map(|perm| {
            let sum: f64 = xs
                .iter()
                .zip(perm.iter().map(|&j| ys[j]))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (sum / m).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_metric_axioms(a in finite_samples(12), b in finite_samples(12), c in finite_samples(12)) {
        let mu = EmpiricalMeasure::new(a).unwrap();
        let nu = EmpiricalMeasure::new(b).unwrap();
        let rho = EmpiricalMeasure::new(c).unwrap();
        prop_assert_eq!(wasserstein2(&mu, &mu).unwrap(), 0.0);
        prop_assert_eq!(
            wasserstein2(&mu, &nu).unwrap(),
            wasserstein2(&nu, &mu).unwrap()
        );
        let direct = wasserstein2(&mu, &rho).unwrap();
        let via = wasserstein2(&mu, &nu).unwrap() + wasserstein2(&nu, &rho).unwrap();
        prop_assert!(direct <= via + 1e-12);
    }

    #[test]
    fn wasserstein_equals_permutation_brute_force(
        m in 1usize..=6,
        raw_a in finite_samples(6),
        raw_b in finite_samples(6),
    ) {
        let xs = &raw_a[..m];
        let ys = &raw_b[..m];
        let mu = EmpiricalMeasure::new(xs.to_vec()).unwrap();
        let nu = EmpiricalMeasure::new(ys.to_vec()).unwrap();
        let fast = wasserstein2(&mu, &nu).unwrap();
        let brute = brute_force_w2(xs, ys);
        prop_assert!((fast - brute).abs() <= 1e-12 * (1.0 + brute));
    }

    #[test]
    fn paired_coupling_bounds_wasserstein(
        a in finite_samples(16),
        b in finite_samples(16),
    ) {
        // W₂ between the clouds never exceeds the paired root-mean-square
        // displacement: the sorted coupling is optimal.
        let rms = (a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            / a.len() as f64)
            .sqrt();
        let mu = EmpiricalMeasure::new(a).unwrap();
        let nu = EmpiricalMeasure::new(b).unwrap();
        prop_assert!(wasserstein2(&mu, &nu).unwrap() <= rms + 1e-12);
    }
}

/// Direct one-pass Euler scheme for δ = 0: the law argument at step k is the
/// cloud of already-computed states at t_k. Independent of the Picard path.
fn direct_mckean_vlasov_euler(
    spec: &mvsde_core::problems::ProblemSpec,
    control: &Control,
    particles: usize,
    seed: u64,
) -> ParticleEnsemble {
    let grid = *control.grid();
    assert_eq!(grid.delta_steps(), 0);
    let n = grid.n_steps();
    let increments = sample_increments(&grid, particles, seed);
    let mut paths = vec![vec![0.0; n + 1]; particles];
    for path in paths.iter_mut() {
        path[0] = spec.x0;
    }
    for k in 0..n {
        let t = grid.time(k);
        let mu = EmpiricalMeasure::new(paths.iter().map(|p| p[k]).collect()).unwrap();
        let u = control.values()[k];
        for (i, path) in paths.iter_mut().enumerate() {
            let x = path[k];
            path[k + 1] = x
                + (spec.drift)(t, x, &mu, u) * grid.dt()
                + (spec.diffusion)(t, x, &mu, u) * increments[i][k];
        }
    }
    ParticleEnsemble::from_paths(grid, paths, increments, seed).unwrap()
}

#[test]
fn zero_delay_matches_direct_euler_pathwise() {
    let grid = TimeGrid::new(1.0, 100, 0.0).unwrap();
    let params: BTreeMap<String, f64> =
        [("sigma0".to_string(), 0.3)].into_iter().collect();
    let spec = builtin("lq-anticipating-mean", &params).unwrap();
    let control = Control::from_fn(grid, |t| 0.3 * (2.0 * t).sin());
    let picard_tol = 1e-12;
    let (ens, report) =
        solve_forward(&spec, &control, 200, 42, picard_tol, 200, PicardMode::Full).unwrap();
    assert!(report.converged);
    let direct = direct_mckean_vlasov_euler(&spec, &control, 200, 42);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        for k in 0..=100 {
            worst = worst.max((ens.state(i, k) - direct.state(i, k)).abs());
        }
    }
    assert!(worst <= 1e-8, "pathwise gap {worst}");
}

#[test]
fn deterministic_mean_with_lag_matches_scalar_picard_oracle() {
    // Cloud mean under the anticipating mean drift vs the scalar fixed point
    // of m(t) = x0 + ∫₀ᵗ m(min(s+δ, T)) ds iterated on a 10× finer grid.
    let delta = 0.1;
    let grid = TimeGrid::new(1.0, 1000, delta).unwrap();
    let params: BTreeMap<String, f64> =
        [("delta".to_string(), delta)].into_iter().collect();
    let spec = builtin("deterministic-mean", &params).unwrap();
    let control = Control::constant(grid, 0.0);
    let (ens, report) =
        solve_forward(&spec, &control, 8, 7, 1e-10, 200, PicardMode::Full).unwrap();
    assert!(report.converged);

    let fine = 10_000usize;
    let dt = 1.0 / fine as f64;
    let lag = (delta / dt).round() as usize;
    let mut m = vec![1.0_f64; fine + 1];
    loop {
        let mut next = vec![1.0_f64; fine + 1];
        for k in 0..fine {
            next[k + 1] = next[k] + m[(k + lag).min(fine)] * dt;
        }
        let change = m
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        m = next;
        if change < 1e-10 {
            break;
        }
    }
    let oracle = m[fine];
    let mean = ens.mean_at(1000);
    assert!((mean - oracle).abs() < 2e-3, "mean {mean} vs oracle {oracle}");
}
