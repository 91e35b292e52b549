//! Shared fixtures for the criterion benchmarks.

use cpapr_core::{random_tensor, KernelConfig, PerturbationMode, PhiStrategy, PolicyParams, SparseTensor};

/// Seeded random 3-way tensor with `nnz` nonzeros and counts up to 10.
pub fn fixture_tensor(nnz: usize) -> SparseTensor {
    random_tensor(&[400, 300, 200], nnz, 10, 0xbe4c).expect("valid fixture dims")
}

/// Kernel configuration for `strategy` using every available worker.
pub fn config(strategy: PhiStrategy, perturbation: PerturbationMode) -> KernelConfig {
    let workers = cpapr_core::hardware_concurrency();
    KernelConfig {
        strategy,
        policy: PolicyParams::default_for(workers),
        worker_budget: workers,
        perturbation,
    }
}

pub const STRATEGIES: [PhiStrategy; 3] = [
    PhiStrategy::AtomicPerNonzero,
    PhiStrategy::ChunkedSorted { chunk_size: 16 },
    PhiStrategy::ChunkedSorted { chunk_size: 128 },
];
