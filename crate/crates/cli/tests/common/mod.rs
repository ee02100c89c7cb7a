//! Reference oracles used by the acceptance suite. Each is an independent
//! integration path (scalar fixed points, RK4 on closed ODE systems) that
//! never touches the particle solvers it is checking.

/// Fixed point of m(t) = x0 + ∫₀ᵗ m(min(s+δ, T)) ds on a fine grid,
/// iterated until the sup change drops below 1e-10. Returns m at the fine
/// nodes.
pub fn scalar_delay_mean(x0: f64, t_horizon: f64, delta: f64, fine: usize) -> Vec<f64> {
    let dt = t_horizon / fine as f64;
    let lag = (delta / dt).round() as usize;
    let mut m = vec![x0; fine + 1];
    loop {
        let mut next = vec![x0; fine + 1];
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
            return m;
        }
    }
}

/// Classical costate representation p(t) = ρ(t)·X(t) + η(t) for the scalar
/// controlled problem dX = (aX + cu)dt + σdB with running cost ½(λx² + u²)
/// and terminal cost ½κx², at a fixed open-loop control u(t):
///
///   ρ′ = −2aρ − λ,        ρ(T) = κ,
///   η′ = −aη − c·ρ·u(t),  η(T) = 0.
///
/// RK4 backward on `fine` steps; returns (ρ, η) at the fine nodes (index 0
/// is t = 0).
pub fn riccati_costate(
    a: f64,
    c: f64,
    lambda: f64,
    kappa: f64,
    t_horizon: f64,
    u_of_t: impl Fn(f64) -> f64,
    fine: usize,
) -> (Vec<f64>, Vec<f64>) {
    let h = t_horizon / fine as f64;
    let mut rho = vec![0.0; fine + 1];
    let mut eta = vec![0.0; fine + 1];
    rho[fine] = kappa;
    eta[fine] = 0.0;
    // Integrate in reversed time s = T − t: dρ/ds = 2aρ + λ, dη/ds = aη + cρu.
    for step in (0..fine).rev() {
        let t_right = (step + 1) as f64 * h;
        let r = rho[step + 1];
        let e = eta[step + 1];
        let f_r = |r: f64| 2.0 * a * r + lambda;
        let f_e = |e: f64, r: f64, t: f64| a * e + c * r * u_of_t(t);
        let (k1r, k1e) = (f_r(r), f_e(e, r, t_right));
        let (k2r, k2e) = (
            f_r(r + 0.5 * h * k1r),
            f_e(e + 0.5 * h * k1e, r + 0.5 * h * k1r, t_right - 0.5 * h),
        );
        let (k3r, k3e) = (
            f_r(r + 0.5 * h * k2r),
            f_e(e + 0.5 * h * k2e, r + 0.5 * h * k2r, t_right - 0.5 * h),
        );
        let (k4r, k4e) =
            (f_r(r + h * k3r), f_e(e + h * k3e, r + h * k3r, t_right - h));
        rho[step] = r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        eta[step] = e + h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
    }
    (rho, eta)
}

/// Open-loop optimum of the deterministic mean problem
///   minimize ∫ ½(λ m² + u²) dt + ½κ m(T)²  s.t.  m′ = A·m + c·u, m(0) = x0:
/// Riccati P′ = −2AP + c²P² − λ with P(T) = κ, optimal mean flow
/// m′ = (A − c²P)m, and u_ref(t) = −c·P(t)·m(t). Returns u_ref at the fine
/// nodes.
pub fn riccati_open_loop_control(
    a_total: f64,
    c: f64,
    lambda: f64,
    kappa: f64,
    x0: f64,
    t_horizon: f64,
    fine: usize,
) -> Vec<f64> {
    let h = t_horizon / fine as f64;
    let mut p = vec![0.0; fine + 1];
    p[fine] = kappa;
    // Reversed time: dP/ds = 2AP − c²P² + λ.
    for step in (0..fine).rev() {
        let v = p[step + 1];
        let f = |p: f64| 2.0 * a_total * p - c * c * p * p + lambda;
        let k1 = f(v);
        let k2 = f(v + 0.5 * h * k1);
        let k3 = f(v + 0.5 * h * k2);
        let k4 = f(v + h * k3);
        p[step] = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let mut m = vec![0.0; fine + 1];
    m[0] = x0;
    for step in 0..fine {
        let f = |m: f64, pk: f64| (a_total - c * c * pk) * m;
        let p_mid = 0.5 * (p[step] + p[step + 1]);
        let k1 = f(m[step], p[step]);
        let k2 = f(m[step] + 0.5 * h * k1, p_mid);
        let k3 = f(m[step] + 0.5 * h * k2, p_mid);
        let k4 = f(m[step] + h * k3, p[step + 1]);
        m[step + 1] = m[step] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    (0..=fine).map(|k| -c * p[k] * m[k]).collect()
}

/// Prints the per-criterion verdict line and panics on failure.
pub fn criterion(number: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number:02} [{name}]: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number:02} [{name}] failed: {detail}");
}
