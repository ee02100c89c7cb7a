//! Empirical probability measures on the real line, the 2-Wasserstein
//! distance, and Lions derivatives of measure functionals.
//!
//! Laws are represented as equally weighted empirical measures of a particle
//! cloud. For measures with equal sample counts the 2-Wasserstein distance is
//! realized exactly by the monotone (sorted-quantile) coupling,
//!
//! ```text
//! W₂(μ, ν) = sqrt( (1/M) Σ_i (sort(μ)_i − sort(ν)_i)² ).
//! ```
//!
//! Measure functionals of the statistic form φ(μ) = g(∫ f dμ) carry an
//! explicit Lions derivative ∂_μφ(μ, y) = g′(∫ f dμ)·f′(y), which is the
//! form used by the coefficient library; a general callback is available as
//! an escape hatch on the problem side.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar map ℝ → ℝ, shared across threads.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An equally weighted empirical measure with finite second moment.
///
/// Samples are sorted ascending once at construction (stable order on ties)
/// so that quantile couplings are deterministic.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    samples: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from raw samples. Rejects empty or non-finite input.
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        for (index, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFiniteSample { index });
            }
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    /// Number of samples M.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees M ≥ 1
    }

    /// Sorted samples, ascending.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Sample mean, ∫ y μ(dy).
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Second moment ∫ |y|² μ(dy).
    pub fn second_moment(&self) -> f64 {
        self.samples.iter().map(|y| y * y).sum::<f64>() / self.samples.len() as f64
    }
}

/// 2-Wasserstein distance between equally weighted empirical measures with
/// the same sample count, via the monotone coupling (exact in one dimension).
pub fn wasserstein2(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return Err(Error::SampleCountMismatch { left: mu1.len(), right: mu2.len() });
    }
    let m = mu1.len() as f64;
    let sum: f64 = mu1
        .samples
        .iter()
        .zip(&mu2.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / m).sqrt())
}

/// Evaluates ∫ f dμ as the sample average (1/M) Σ f(sample_i).
pub fn statistic(mu: &EmpiricalMeasure, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for &s in &mu.samples {
        let v = f(s);
        if !v.is_finite() {
            return Err(Error::NonFiniteStatistic);
        }
        acc += v;
    }
    Ok(acc / mu.samples.len() as f64)
}

/// A measure functional of the statistic form φ(P_ζ) = g(E[f(ζ)]), carried
/// together with the scalar derivatives needed for its Lions derivative.
#[derive(Clone)]
pub struct StatisticFunctional {
    pub f: ScalarFn,
    pub f_prime: ScalarFn,
    pub g: ScalarFn,
    pub g_prime: ScalarFn,
}

impl StatisticFunctional {
    pub fn new(f: ScalarFn, f_prime: ScalarFn, g: ScalarFn, g_prime: ScalarFn) -> Self {
        Self { f, f_prime, g, g_prime }
    }

    /// φ(μ) = g(∫ f dμ).
    pub fn eval(&self, mu: &EmpiricalMeasure) -> Result<f64> {
        let inner = statistic(mu, |y| (self.f)(y))?;
        let v = (self.g)(inner);
        if !v.is_finite() {
            return Err(Error::NonFiniteStatistic);
        }
        Ok(v)
    }
}

/// Lions derivative of the statistic functional: (∂_μφ)(μ, y) = g′(∫f dμ)·f′(y).
pub fn lions_derivative_statistic(
    phi: &StatisticFunctional,
    mu: &EmpiricalMeasure,
    y: f64,
) -> Result<f64> {
    let inner = statistic(mu, |v| (phi.f)(v))?;
    let out = (phi.g_prime)(inner) * (phi.f_prime)(y);
    if !out.is_finite() {
        return Err(Error::NonFiniteStatistic);
    }
    Ok(out)
}

/// Compares the lifted difference quotient of φ against the Lions-derivative
/// pairing, for a perturbation direction η applied to the sample vector ζ.
///
/// Returns `( [φ(P_{ζ+ε·η}) − φ(P_ζ)]/ε , (1/M) Σ_i ∂_μφ(P_ζ, ζ_i)·η_i )`;
/// the two components converge to each other as ε → 0.
pub fn lifted_directional_derivative_check(
    phi: &StatisticFunctional,
    zeta: &[f64],
    eta: &[f64],
    eps: f64,
) -> Result<(f64, f64)> {
    if zeta.len() != eta.len() {
        return Err(Error::LengthMismatch { left: zeta.len(), right: eta.len() });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let base = EmpiricalMeasure::new(zeta.to_vec())?;
    let shifted: Vec<f64> = zeta.iter().zip(eta).map(|(z, e)| z + eps * e).collect();
    let shifted = EmpiricalMeasure::new(shifted)?;
    let quotient = (phi.eval(&shifted)? - phi.eval(&base)?) / eps;

    let m = zeta.len() as f64;
    let mut pairing = 0.0;
    for (&z, &e) in zeta.iter().zip(eta) {
        pairing += lions_derivative_statistic(phi, &base, z)? * e;
    }
    pairing /= m;
    Ok((quotient, pairing))
}

/// Convenience constructor wrapping plain functions into a `StatisticFunctional`.
pub fn statistic_functional(
    f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    g_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> StatisticFunctional {
    StatisticFunctional::new(Arc::new(f), Arc::new(f_prime), Arc::new(g), Arc::new(g_prime))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_functional() -> StatisticFunctional {
        statistic_functional(|y| y, |_| 1.0, |s| s, |_| 1.0)
    }

    #[test]
    fn wasserstein_identity_of_indiscernibles() {
        let mu = EmpiricalMeasure::new(vec![0.3, 1.7, -2.0]).unwrap();
        assert_eq!(wasserstein2(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_point_masses() {
        let a = EmpiricalMeasure::new(vec![1.25]).unwrap();
        let b = EmpiricalMeasure::new(vec![-0.75]).unwrap();
        assert_eq!(wasserstein2(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn wasserstein_monotone_matching_beats_crossing() {
        // Brute-force minimum over both pairings of {0,2} vs {3,1}:
        // monotone 0↔1, 2↔3 gives sqrt((1+1)/2) = 1; crossed gives sqrt((9+1)/2).
        let mu1 = EmpiricalMeasure::new(vec![0.0, 2.0]).unwrap();
        let mu2 = EmpiricalMeasure::new(vec![3.0, 1.0]).unwrap();
        let monotone = (0.5_f64 * ((0.0 - 1.0f64).powi(2) + (2.0 - 3.0f64).powi(2))).sqrt();
        let crossed = (0.5_f64 * ((0.0 - 3.0f64).powi(2) + (2.0 - 1.0f64).powi(2))).sqrt();
        let brute = monotone.min(crossed);
        assert!((wasserstein2(&mu1, &mu2).unwrap() - brute).abs() < 1e-15);
        assert!((wasserstein2(&mu1, &mu2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_rejects_unequal_counts() {
        let a = EmpiricalMeasure::new(vec![0.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::new(vec![0.0]).unwrap();
        assert!(matches!(
            wasserstein2(&a, &b),
            Err(Error::SampleCountMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn measure_rejects_bad_samples() {
        assert!(matches!(EmpiricalMeasure::new(vec![]), Err(Error::EmptySamples)));
        assert!(matches!(
            EmpiricalMeasure::new(vec![0.0, f64::NAN]),
            Err(Error::NonFiniteSample { index: 1 })
        ));
        assert!(matches!(
            EmpiricalMeasure::new(vec![f64::INFINITY]),
            Err(Error::NonFiniteSample { index: 0 })
        ));
    }

    #[test]
    fn statistic_examples() {
        let mu = EmpiricalMeasure::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(statistic(&mu, |y| y).unwrap(), 2.0);

        let mu = EmpiricalMeasure::new(vec![-1.0, 1.0]).unwrap();
        assert_eq!(statistic(&mu, |y| y * y).unwrap(), 1.0);

        let mu = EmpiricalMeasure::new(vec![0.5]).unwrap();
        assert!((statistic(&mu, f64::exp).unwrap() - 0.5_f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn statistic_rejects_non_finite_map() {
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(statistic(&mu, |_| f64::NAN), Err(Error::NonFiniteStatistic)));
    }

    #[test]
    fn lions_derivative_of_mean_is_one() {
        let phi = identity_functional();
        let mu = EmpiricalMeasure::new(vec![-3.0, 0.25, 9.0]).unwrap();
        for y in [-5.0, 0.0, 2.5] {
            assert_eq!(lions_derivative_statistic(&phi, &mu, y).unwrap(), 1.0);
        }
    }

    #[test]
    fn lions_derivative_square_inner() {
        // f = square, g = identity: ∂_μφ(μ, y) = f′(y) = 2y.
        let phi = statistic_functional(|y| y * y, |y| 2.0 * y, |s| s, |_| 1.0);
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0, -4.0]).unwrap();
        assert_eq!(lions_derivative_statistic(&phi, &mu, 3.0).unwrap(), 6.0);
    }

    #[test]
    fn lions_derivative_square_outer_matches_finite_differences() {
        // f = identity, g = square, mu = {1, 3}: ∂_μφ(μ, y) = 2·mean = 4 for any y.
        let phi = statistic_functional(|y| y, |_| 1.0, |s| s * s, |s| 2.0 * s);
        let mu = EmpiricalMeasure::new(vec![1.0, 3.0]).unwrap();
        let value = lions_derivative_statistic(&phi, &mu, 5.0).unwrap();
        assert!((value - 4.0).abs() < 1e-12);

        // Finite-difference oracle: central-difference g at ∫f dμ and f at y,
        // then multiply. The statistic form makes the product the derivative.
        let eps = 1e-6;
        let s = statistic(&mu, |y| y).unwrap();
        let g = |v: f64| v * v;
        let f = |y: f64| y;
        let dg = (g(s + eps) - g(s - eps)) / (2.0 * eps);
        let df = (f(5.0 + eps) - f(5.0 - eps)) / (2.0 * eps);
        assert!((value - dg * df).abs() < 1e-8);
    }

    #[test]
    fn lifted_check_zero_direction() {
        let phi = identity_functional();
        let (q, p) = lifted_directional_derivative_check(
            &phi,
            &[0.4, -1.0, 2.0],
            &[0.0, 0.0, 0.0],
            0.1,
        )
        .unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn lifted_check_linear_functional_exact() {
        let phi = identity_functional();
        let (q, p) =
            lifted_directional_derivative_check(&phi, &[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        assert!((q - 1.0).abs() < 1e-15);
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lifted_check_square_inner_direct_evaluation() {
        // φ(ζ) = E[ζ²], ζ = {1,2}, η = {1,0}, ε = 1e-4:
        // quotient = ((1+ε)² − 1)/(2ε) = 1 + ε/2; pairing = f′(1)/2 = 1.
        let phi = statistic_functional(|y| y * y, |y| 2.0 * y, |s| s, |_| 1.0);
        let eps = 1e-4;
        let (q, p) =
            lifted_directional_derivative_check(&phi, &[1.0, 2.0], &[1.0, 0.0], eps).unwrap();
        assert!((q - (1.0 + eps / 2.0)).abs() < 1e-10);
        assert!((p - 1.0).abs() < 1e-15);
        assert!((q - p).abs() < eps);
    }

    #[test]
    fn lifted_check_rejects_length_mismatch() {
        let phi = identity_functional();
        assert!(matches!(
            lifted_directional_derivative_check(&phi, &[1.0], &[1.0, 2.0], 0.1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn lifted_check_error_shrinks_linearly_in_eps() {
        // Nonlinear lift: error between the two components is Θ(ε); halving ε
        // should halve the error within factor 1.5.
        let families = [
            statistic_functional(|y| y * y, |y| 2.0 * y, |s| s, |_| 1.0),
            statistic_functional(|y| y, |_| 1.0, |s| s * s, |s| 2.0 * s),
            statistic_functional(f64::sin, f64::cos, f64::exp, f64::exp),
        ];
        let zeta = [0.3, -0.8, 1.4, 0.1];
        let eta = [1.0, -0.5, 0.25, 2.0];
        for phi in &families {
            let mut last: Option<f64> = None;
            let mut eps = 1e-2;
            for _ in 0..4 {
                let (q, p) = lifted_directional_derivative_check(phi, &zeta, &eta, eps).unwrap();
                let err = (q - p).abs();
                if let Some(prev) = last {
                    let ratio = prev / err.max(1e-300);
                    assert!(
                        ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5,
                        "halving ratio {ratio} out of range"
                    );
                }
                last = Some(err);
                eps /= 2.0;
            }
        }
    }
}
