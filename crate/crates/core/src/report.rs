//! Per-kernel time shares of a solver run.

use std::io::Write;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::solver::SolverTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelShare {
    pub kernel: &'static str,
    pub seconds: f64,
    pub percent: f64,
}

/// Splits the measured time of the four solver kernels (Φ, Π, KKT check,
/// multiplicative update) into percentages.
pub fn report_kernel_breakdown(trace: &SolverTrace) -> Result<Vec<KernelShare>> {
    let t = &trace.totals;
    let parts: [(&'static str, Duration); 4] = [("phi", t.phi), ("pi", t.pi), ("kkt", t.kkt), ("mu", t.mu)];
    let total: f64 = parts.iter().map(|(_, d)| d.as_secs_f64()).sum();
    if trace.inner_iterations == 0 || total <= 0.0 {
        return Err(Error::EmptyTrace);
    }
    Ok(parts
        .iter()
        .map(|&(kernel, d)| KernelShare {
            kernel,
            seconds: d.as_secs_f64(),
            percent: d.as_secs_f64() / total * 100.0,
        })
        .collect())
}

pub fn write_breakdown_csv<W: Write>(shares: &[KernelShare], mut out: W) -> Result<()> {
    writeln!(out, "kernel,seconds,percent")?;
    for s in shares {
        writeln!(out, "{},{:.9},{:.4}", s.kernel, s.seconds, s.percent)?;
    }
    Ok(())
}
