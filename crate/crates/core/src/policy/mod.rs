//! Parallel policy triples, their mapping onto CPU worker schedules, and the
//! policy grid search.

mod grid;

pub use grid::{
    enumerate_policies, grid_search, write_grid_csv, write_heatmap, GridEntry, GridResult, GridTarget, PolicySpace,
    AUTO_VECTOR_SIZE,
};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phi::PhiStrategy;

/// Upper bound on `team_size * vector_size`.
pub const MAX_TEAM_TIMES_VECTOR: usize = 1024;

/// League / team / vector sizes controlling how kernel work is decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyParams {
    pub league_size: usize,
    pub team_size: usize,
    pub vector_size: usize,
}

impl PolicyParams {
    pub const SEQUENTIAL: PolicyParams = PolicyParams {
        league_size: 1,
        team_size: 1,
        vector_size: 1,
    };

    pub fn new(league_size: usize, team_size: usize, vector_size: usize) -> Result<Self> {
        let p = PolicyParams {
            league_size,
            team_size,
            vector_size,
        };
        p.validate()?;
        Ok(p)
    }

    /// One team per available worker, 128 nonzeros per step.
    pub fn default_for(workers: usize) -> Self {
        PolicyParams {
            league_size: workers.max(1),
            team_size: 1,
            vector_size: 128,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        if self.league_size == 0 || self.team_size == 0 || self.vector_size == 0 {
            return Err(Error::InvalidPolicy(format!("{self}: all sizes must be >= 1")));
        }
        match self.team_size.checked_mul(self.vector_size) {
            Some(p) if p <= MAX_TEAM_TIMES_VECTOR => Ok(()),
            _ => Err(Error::InvalidPolicy(format!(
                "{self}: team_size * vector_size exceeds {MAX_TEAM_TIMES_VECTOR}"
            ))),
        }
    }
}

impl fmt::Display for PolicyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.league_size, self.team_size, self.vector_size)
    }
}

impl FromStr for PolicyParams {
    type Err = Error;

    /// Parses `L,T,V`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [l, t, v] = parts.as_slice() else {
            return Err(Error::InvalidPolicy(format!("{s:?}: expected L,T,V")));
        };
        let num = |x: &str| {
            x.parse::<usize>()
                .map_err(|_| Error::InvalidPolicy(format!("{s:?}: {x:?} is not a positive integer")))
        };
        PolicyParams::new(num(l)?, num(t)?, num(v)?)
    }
}

/// Concrete assignment of nonzero ranges to workers for one kernel launch.
///
/// Positions `0..nnz` (nonzero indices, or permutation positions for the
/// chunked kernel) are cut into chunks of `chunk_width`; chunk `c` runs on
/// worker `c % workers`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSchedule {
    pub concurrent_teams: usize,
    pub team_workers: usize,
    pub workers: usize,
    pub chunk_width: usize,
    pub nnz: usize,
}

impl KernelSchedule {
    pub fn num_chunks(&self) -> usize {
        self.nnz.div_ceil(self.chunk_width)
    }

    pub fn chunk(&self, c: usize) -> Range<usize> {
        let start = c * self.chunk_width;
        start..(start + self.chunk_width).min(self.nnz)
    }

    pub fn chunks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_chunks()).map(|c| self.chunk(c))
    }

    /// Chunks executed by `worker`, in execution order.
    pub fn worker_chunks(&self, worker: usize) -> impl Iterator<Item = Range<usize>> + '_ {
        (worker..self.num_chunks())
            .step_by(self.workers)
            .map(|c| self.chunk(c))
    }

    pub fn is_sequential(&self) -> bool {
        self.workers == 1
    }
}

/// Maps a policy onto the CPU worker pool.
///
/// At most `min(league_size, worker_budget)` teams run concurrently, each
/// with up to `team_size` workers, never exceeding `worker_budget` threads in
/// total. The chunked kernel uses its own `V` as chunk width; the atomic
/// kernel advances `vector_size` nonzeros per step.
pub fn map_policy_to_kernel(
    policy: PolicyParams,
    strategy: PhiStrategy,
    worker_budget: usize,
    nnz: usize,
) -> Result<KernelSchedule> {
    policy.validate()?;
    strategy.validate()?;
    let budget = worker_budget.max(1);
    let concurrent_teams = policy.league_size.min(budget);
    let team_workers = policy.team_size.min((budget / concurrent_teams).max(1));
    let chunk_width = match strategy {
        PhiStrategy::AtomicPerNonzero => policy.vector_size,
        PhiStrategy::ChunkedSorted { chunk_size } => chunk_size,
    };
    Ok(KernelSchedule {
        concurrent_teams,
        team_workers,
        workers: concurrent_teams * team_workers,
        chunk_width,
        nnz,
    })
}

/// Worker budget used when none is given: the machine's available parallelism.
pub fn hardware_concurrency() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
