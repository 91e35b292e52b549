//! Sparse Poisson tensor decomposition (CP-APR, multiplicative updates) with
//! a parallel-policy kernel layer, performance-portability perturbation
//! harness, roofline model and bandwidth microbenchmarks.

pub mod dense;
pub mod error;
pub mod harness;
mod kernel;
pub mod kruskal;
pub mod microbench;
pub mod phi;
pub mod policy;
pub mod ppa;
pub mod report;
pub mod roofline;
pub mod solver;
pub mod tensor;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use harness::PreparedPhi;
pub use kernel::{CountingProbe, KernelCounters, NoProbe, Probe};
pub use kruskal::{compute_pi, init_model, load_model, normalize, save_model, KruskalModel, Normalized, PiMatrix};
pub use microbench::{mttkrp, mttkrp_bandwidth, mttkrp_bytes, mttkrp_with, run_stream, BandwidthResult, StreamKernel};
pub use phi::{compute_phi, compute_phi_counted, KernelConfig, PhiOutput, PhiStrategy};
pub use policy::{
    enumerate_policies, grid_search, hardware_concurrency, map_policy_to_kernel, GridEntry, GridResult, GridTarget, KernelSchedule,
    PolicyParams, PolicySpace,
};
pub use ppa::{geometric_mean, perturb_kernel, run_ppa, KernelVariant, PerturbationMode, PpaReport, PpaRow};
pub use report::{report_kernel_breakdown, KernelShare};
pub use roofline::{
    attainable, load_machine, operational_intensity, peak_flops, resolve_machine, work_and_traffic, KernelCostModel,
    MachineSpec,
};
pub use solver::{cp_apr_mu, cp_apr_mu_from, SolverOptions, SolverTrace};
pub use tensor::{
    build_permutation, parse_tns_str, random_tensor, read_tns, row_segments, to_tns_string, write_tns, Permutation,
    RowSegment, SparseTensor,
};
