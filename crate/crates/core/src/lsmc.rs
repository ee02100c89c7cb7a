//! Least-squares Monte-Carlo estimation of conditional expectations by
//! regressing particle values on a polynomial basis of the current state.
//!
//! The basis {1, x̃, x̃², …, x̃^degree} uses the standardized state
//! x̃ = (x − mean)/std for conditioning. Degenerate designs (all states
//! equal, or a rank-deficient normal matrix) fall back to a lower degree;
//! degree 0 is the plain cloud mean, which is the correct conditional
//! expectation whenever the regressor carries no information.

use nalgebra::{DMatrix, DVector};

/// A factorized regression design for one time step, reusable across targets.
pub struct RegressionStep {
    /// Thin Q factor of the design, M × (used_degree + 1); `None` means
    /// degree 0 (plain mean).
    q: Option<DMatrix<f64>>,
    used_degree: usize,
    requested_degree: usize,
}

impl RegressionStep {
    pub fn new(states: &[f64], degree: usize) -> Self {
        let m = states.len();
        let mean = states.iter().sum::<f64>() / m as f64;
        let var = states.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
        let std = var.sqrt();

        let max_degree = if std <= 1e-12 * (mean.abs() + 1.0) || m < 2 {
            0
        } else {
            degree.min(m - 1)
        };

        let mut d = max_degree;
        loop {
            if d == 0 {
                return Self { q: None, used_degree: 0, requested_degree: degree };
            }
            let mut design = DMatrix::zeros(m, d + 1);
            for (row, &x) in states.iter().enumerate() {
                let z = (x - mean) / std;
                let mut pow = 1.0;
                for col in 0..=d {
                    design[(row, col)] = pow;
                    pow *= z;
                }
            }
            // Rank check on the R diagonal; a collapsed column means the
            // powers are numerically dependent and the degree must drop.
            let qr = design.qr();
            let r = qr.r();
            let diag: Vec<f64> = (0..=d).map(|c| r[(c, c)].abs()).collect();
            let max_diag = diag.iter().cloned().fold(0.0, f64::max);
            if diag.iter().any(|delta| *delta <= 1e-10 * max_diag) || max_diag == 0.0 {
                d -= 1;
                continue;
            }
            return Self { q: Some(qr.q()), used_degree: d, requested_degree: degree };
        }
    }

    /// Fitted values of the regression of `targets` on the basis, i.e. the
    /// estimated conditional expectation per particle: the orthogonal
    /// projection Q·(Qᵀ·targets) onto the basis span.
    pub fn fitted(&self, targets: &[f64]) -> Vec<f64> {
        match &self.q {
            None => {
                let mean = targets.iter().sum::<f64>() / targets.len() as f64;
                vec![mean; targets.len()]
            }
            Some(q) => {
                let y = DVector::from_column_slice(targets);
                let coords = q.transpose() * y;
                (q * coords).iter().copied().collect()
            }
        }
    }

    pub fn used_degree(&self) -> usize {
        self.used_degree
    }

    /// Whether the design had to drop below the requested degree.
    pub fn fell_back(&self) -> bool {
        self.used_degree < self.requested_degree
    }
}
