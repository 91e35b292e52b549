//! Pressure-point analysis: time the Φ kernel with suspected bottlenecks
//! idealized away and report the speedups.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::PreparedPhi;
use crate::phi::KernelConfig;
use crate::policy::PolicyParams;
use crate::solver::SolverOptions;
use crate::tensor::SparseTensor;

/// Which perturbation a kernel run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PerturbationMode {
    #[default]
    None,
    /// Serialized adds become plain load/add/store.
    NoAtomics,
    /// Every matrix row index is pinned to a per-worker constant.
    FixedRow,
    Both,
}

impl PerturbationMode {
    pub const ALL: [PerturbationMode; 4] = [
        PerturbationMode::None,
        PerturbationMode::NoAtomics,
        PerturbationMode::FixedRow,
        PerturbationMode::Both,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationMode::None => "none",
            PerturbationMode::NoAtomics => "no-atomics",
            PerturbationMode::FixedRow => "fixed-row",
            PerturbationMode::Both => "both",
        }
    }

    /// Whether kernel output under this mode is numerically meaningful.
    pub fn numerically_valid(&self) -> bool {
        *self == PerturbationMode::None
    }
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown perturbation {s:?}")))
    }
}

/// Kernel variant chosen for a perturbation. Dispatch happens once per
/// launch; the variants are separate monomorphized kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelVariant {
    pub serialized_adds: bool,
    pub fixed_rows: bool,
}

pub fn perturb_kernel(mode: PerturbationMode) -> KernelVariant {
    match mode {
        PerturbationMode::None => KernelVariant {
            serialized_adds: true,
            fixed_rows: false,
        },
        PerturbationMode::NoAtomics => KernelVariant {
            serialized_adds: false,
            fixed_rows: false,
        },
        PerturbationMode::FixedRow => KernelVariant {
            serialized_adds: true,
            fixed_rows: true,
        },
        PerturbationMode::Both => KernelVariant {
            serialized_adds: false,
            fixed_rows: true,
        },
    }
}

/// exp(mean(ln v)).
pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("geometric mean of nothing".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::InvalidArgument(format!("geometric mean needs positive values, got {v}")));
    }
    let mean_log = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    Ok(mean_log.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaRow {
    pub tensor: String,
    pub perturbation: PerturbationMode,
    pub mean_ms: f64,
    /// Unperturbed time divided by this row's time.
    pub speedup: f64,
    pub numerically_valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpaReport {
    pub rows: Vec<PpaRow>,
    /// Geometric mean of speedups across tensors, per perturbation.
    pub geomeans: Vec<(PerturbationMode, f64)>,
}

impl PpaReport {
    pub fn speedup(&self, tensor: &str, mode: PerturbationMode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.tensor == tensor && r.perturbation == mode)
            .map(|r| r.speedup)
    }

    /// CSV with columns `tensor,perturbation,mean_ms,speedup,valid`, then
    /// one `geomean` row per perturbation.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tensor,perturbation,mean_ms,speedup,valid")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{}",
                r.tensor, r.perturbation, r.mean_ms, r.speedup, r.numerically_valid
            )?;
        }
        for (m, g) in &self.geomeans {
            writeln!(out, "geomean,{m},,{g:.6},{}", m.numerically_valid())?;
        }
        Ok(())
    }
}

/// Times Φ over all modes of each tensor under the four perturbation modes
/// with identical data and policy.
///
/// Repetitions interleave the four modes so slow drift affects them equally.
pub fn run_ppa(
    tensors: &[(String, SparseTensor)],
    options: &SolverOptions,
    policy: PolicyParams,
    reps: usize,
) -> Result<PpaReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if tensors.is_empty() {
        return Err(Error::InvalidArgument("no tensors given".into()));
    }
    policy.validate()?;
    let mut rows = Vec::new();
    let mut per_mode: Vec<Vec<f64>> = vec![Vec::new(); PerturbationMode::ALL.len()];

    for (name, tensor) in tensors {
        let prepared = PreparedPhi::new(tensor, options.rank, options.seed, options.epsilon)?;
        let mut totals = [Duration::ZERO; 4];
        // warm-up pass
        for mode in PerturbationMode::ALL {
            prepared.sweep_time(&config_for(options, policy, mode))?;
        }
        for _ in 0..reps {
            for (k, mode) in PerturbationMode::ALL.into_iter().enumerate() {
                totals[k] += prepared.sweep_time(&config_for(options, policy, mode))?;
            }
        }
        let means: Vec<f64> = totals.iter().map(|t| t.as_secs_f64() * 1e3 / reps as f64).collect();
        for (k, mode) in PerturbationMode::ALL.into_iter().enumerate() {
            let speedup = if k == 0 { 1.0 } else { means[0] / means[k] };
            per_mode[k].push(speedup);
            rows.push(PpaRow {
                tensor: name.clone(),
                perturbation: mode,
                mean_ms: means[k],
                speedup,
                numerically_valid: mode.numerically_valid(),
            });
        }
    }

    let geomeans = PerturbationMode::ALL
        .into_iter()
        .zip(&per_mode)
        .map(|(m, s)| Ok((m, geometric_mean(s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PpaReport { rows, geomeans })
}

fn config_for(options: &SolverOptions, policy: PolicyParams, perturbation: PerturbationMode) -> KernelConfig {
    KernelConfig {
        strategy: options.strategy,
        policy,
        worker_budget: options.worker_budget,
        perturbation,
    }
}
