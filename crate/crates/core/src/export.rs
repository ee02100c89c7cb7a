//! Deterministic artifact writers: CSV for path data and traces, with every
//! floating-point value printed at 17 significant digits so identical runs
//! produce byte-identical files.

use std::io::{self, Write};

use crate::adjoint::AdjointSolution;
use crate::forward::ParticleEnsemble;
use crate::optimizer::TraceRow;
use crate::problems::Control;

/// 17 significant digits, locale-independent; round-trips any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Ensemble paths as `particle,t,X` rows.
pub fn write_ensemble_csv(w: &mut impl Write, ens: &ParticleEnsemble) -> io::Result<()> {
    writeln!(w, "particle,t,X")?;
    let grid = ens.grid();
    for i in 0..ens.particles() {
        for k in 0..grid.n_nodes() {
            writeln!(w, "{i},{},{}", fmt_f64(grid.time(k)), fmt_f64(ens.state(i, k)))?;
        }
    }
    Ok(())
}

/// Adjoint paths as `particle,t,p,q` rows; q is the cell value to the right
/// of t and is empty on the final node.
pub fn write_adjoint_csv(
    w: &mut impl Write,
    ens: &ParticleEnsemble,
    adj: &AdjointSolution,
) -> io::Result<()> {
    writeln!(w, "particle,t,p,q")?;
    let grid = ens.grid();
    for i in 0..ens.particles() {
        for k in 0..grid.n_nodes() {
            let q = if k < grid.n_steps() { fmt_f64(adj.q(i, k)) } else { String::new() };
            writeln!(w, "{i},{},{},{q}", fmt_f64(grid.time(k)), fmt_f64(adj.p(i, k)))?;
        }
    }
    Ok(())
}

/// Optimization trace as `iteration,J,SE,max_grad,step_size` rows.
pub fn write_trace_csv(w: &mut impl Write, trace: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "iteration,J,SE,max_grad,step_size")?;
    for row in trace {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.iteration,
            fmt_f64(row.cost),
            fmt_f64(row.std_error),
            fmt_f64(row.max_gradient),
            fmt_f64(row.step_size)
        )?;
    }
    Ok(())
}

/// Control values as `t,u` rows at the left cell endpoints.
pub fn write_control_csv(w: &mut impl Write, control: &Control) -> io::Result<()> {
    writeln!(w, "t,u")?;
    let grid = control.grid();
    for (k, &u) in control.values().iter().enumerate() {
        writeln!(w, "{},{}", fmt_f64(grid.time(k)), fmt_f64(u))?;
    }
    Ok(())
}
