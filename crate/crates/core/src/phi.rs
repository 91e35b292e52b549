//! The Φ kernel: Φ = (X_(n) ⊘ max(B·Π, ε)) Πᵀ evaluated one nonzero at a time.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kernel::{scatter, CountingProbe, KernelCounters, NoProbe, Probe, ScatterPlan, SharedRows};
use crate::kruskal::PiMatrix;
use crate::policy::{hardware_concurrency, map_policy_to_kernel, KernelSchedule, PolicyParams};
use crate::ppa::PerturbationMode;
use crate::tensor::{Permutation, SparseTensor};

/// How concurrent updates to the same Φ row are kept consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhiStrategy {
    /// One nonzero at a time in storage order, serialized add per nonzero.
    AtomicPerNonzero,
    /// Contiguous chunks of `chunk_size` mode-sorted nonzeros; rows wholly
    /// inside a chunk are flushed without serialization.
    ChunkedSorted { chunk_size: usize },
}

impl PhiStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhiStrategy::ChunkedSorted { chunk_size: 0 } => {
                Err(Error::InvalidArgument("chunk size V must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// The same strategy with the chunk width taken from the policy's
    /// vector size.
    pub fn with_policy_vector(self, policy: PolicyParams) -> Self {
        match self {
            PhiStrategy::AtomicPerNonzero => self,
            PhiStrategy::ChunkedSorted { .. } => PhiStrategy::ChunkedSorted {
                chunk_size: policy.vector_size,
            },
        }
    }

    pub fn needs_permutation(&self) -> bool {
        matches!(self, PhiStrategy::ChunkedSorted { .. })
    }
}

impl Default for PhiStrategy {
    fn default() -> Self {
        PhiStrategy::ChunkedSorted { chunk_size: 128 }
    }
}

impl fmt::Display for PhiStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiStrategy::AtomicPerNonzero => write!(f, "atomic"),
            PhiStrategy::ChunkedSorted { chunk_size } => write!(f, "chunked:{chunk_size}"),
        }
    }
}

impl FromStr for PhiStrategy {
    type Err = Error;

    /// Accepts `atomic`, `chunked` (default V) or `chunked:V`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let strategy = match s.split_once(':') {
            None if s.eq_ignore_ascii_case("atomic") => PhiStrategy::AtomicPerNonzero,
            None if s.eq_ignore_ascii_case("chunked") => PhiStrategy::default(),
            Some((name, v)) if name.eq_ignore_ascii_case("chunked") => PhiStrategy::ChunkedSorted {
                chunk_size: v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad chunk size in {s:?}")))?,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown strategy {s:?} (expected atomic, chunked or chunked:V)"
                )))
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Everything that decides how a scatter kernel is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub strategy: PhiStrategy,
    pub policy: PolicyParams,
    pub worker_budget: usize,
    pub perturbation: PerturbationMode,
}

impl KernelConfig {
    /// Single worker; results are bit-reproducible.
    pub fn sequential(strategy: PhiStrategy) -> Self {
        KernelConfig {
            strategy,
            policy: PolicyParams::SEQUENTIAL,
            worker_budget: 1,
            perturbation: PerturbationMode::None,
        }
    }

    pub fn schedule(&self, nnz: usize) -> Result<KernelSchedule> {
        map_policy_to_kernel(self.policy, self.strategy, self.worker_budget, nnz)
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        let workers = hardware_concurrency();
        KernelConfig {
            strategy: PhiStrategy::default(),
            policy: PolicyParams::default_for(workers),
            worker_budget: workers,
            perturbation: PerturbationMode::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhiOutput {
    pub phi: DenseMatrix,
    /// Set when a perturbation was applied; `phi` is then meaningless.
    pub perturbed: bool,
    /// Time spent in the parallel region only.
    pub kernel_time: Duration,
}

/// Computes Φ for `pi.mode()`.
///
/// `permutation` must be the mode's sort order when the strategy is
/// [`PhiStrategy::ChunkedSorted`]; it is ignored otherwise.
pub fn compute_phi(
    tensor: &SparseTensor,
    b: &DenseMatrix,
    pi: &PiMatrix,
    permutation: Option<&Permutation>,
    epsilon: f64,
    cfg: &KernelConfig,
) -> Result<PhiOutput> {
    run_phi(tensor, b, pi, permutation, epsilon, cfg, &NoProbe)
}

/// [`compute_phi`] with operation counting enabled.
pub fn compute_phi_counted(
    tensor: &SparseTensor,
    b: &DenseMatrix,
    pi: &PiMatrix,
    permutation: Option<&Permutation>,
    epsilon: f64,
    cfg: &KernelConfig,
) -> Result<(PhiOutput, KernelCounters)> {
    let probe = CountingProbe::default();
    let out = run_phi(tensor, b, pi, permutation, epsilon, cfg, &probe)?;
    Ok((out, probe.snapshot()))
}

fn run_phi<P: Probe>(
    tensor: &SparseTensor,
    b: &DenseMatrix,
    pi: &PiMatrix,
    permutation: Option<&Permutation>,
    epsilon: f64,
    cfg: &KernelConfig,
    probe: &P,
) -> Result<PhiOutput> {
    let mode = pi.mode();
    tensor.check_mode(mode)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let rank = b.cols();
    if b.rows() != tensor.dims()[mode] || pi.rank() != rank || pi.nnz() != tensor.nnz() {
        return Err(Error::ShapeMismatch(format!(
            "B is {:?}, Π is {}x{}, tensor mode {mode} has dim {} and {} nonzeros",
            b.shape(),
            pi.nnz(),
            pi.rank(),
            tensor.dims()[mode],
            tensor.nnz()
        )));
    }
    let order = sorted_order(tensor, mode, permutation, cfg.strategy)?;
    let plan = ScatterPlan {
        tensor,
        mode,
        permutation: order,
        schedule: cfg.schedule(tensor.nnz())?,
        rank,
    };

    let values = tensor.values();
    let flops = 4 * rank as u64 + 2;
    let body = |j: usize, row: usize, source: usize, acc: &mut [f64], probe: &P| {
        let b_row = b.row(row);
        let pi_row = pi.row(source);
        let mut s = 0.0;
        for (bv, pv) in b_row.iter().zip(pi_row) {
            s += bv * pv;
        }
        let s = values[j] / s.max(epsilon);
        for (a, pv) in acc.iter_mut().zip(pi_row) {
            *a += s * pv;
        }
        probe.flops(flops);
    };

    let out = SharedRows::zeros(b.rows(), rank);
    let start = Instant::now();
    dispatch(cfg.perturbation, &plan, &out, probe, &body);
    let kernel_time = start.elapsed();
    Ok(PhiOutput {
        phi: out.into_matrix(),
        perturbed: cfg.perturbation != PerturbationMode::None,
        kernel_time,
    })
}

pub(crate) fn sorted_order<'a>(
    tensor: &SparseTensor,
    mode: usize,
    permutation: Option<&'a Permutation>,
    strategy: PhiStrategy,
) -> Result<Option<&'a [usize]>> {
    if !strategy.needs_permutation() {
        return Ok(None);
    }
    match permutation {
        Some(p) if p.mode() == mode && p.len() == tensor.nnz() => Ok(Some(p.order())),
        Some(p) => Err(Error::ShapeMismatch(format!(
            "permutation for mode {} with {} entries does not fit mode {mode} with {} nonzeros",
            p.mode(),
            p.len(),
            tensor.nnz()
        ))),
        None => Err(Error::InvalidArgument(
            "chunked strategy requires the mode's permutation".into(),
        )),
    }
}

/// Selects the statically compiled kernel variant for a perturbation.
pub(crate) fn dispatch<P, F>(mode: PerturbationMode, plan: &ScatterPlan<'_>, out: &SharedRows, probe: &P, body: &F)
where
    P: Probe,
    F: Fn(usize, usize, usize, &mut [f64], &P) + Sync,
{
    match mode {
        PerturbationMode::None => scatter::<false, false, P, F>(plan, out, probe, body),
        PerturbationMode::NoAtomics => scatter::<true, false, P, F>(plan, out, probe, body),
        PerturbationMode::FixedRow => scatter::<false, true, P, F>(plan, out, probe, body),
        PerturbationMode::Both => scatter::<true, true, P, F>(plan, out, probe, body),
    }
}
