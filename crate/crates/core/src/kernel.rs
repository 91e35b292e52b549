//! Row-scatter engine shared by the Φ and MTTKRP kernels.
//!
//! Every nonzero produces a length-R contribution that is added into one row
//! of a shared output matrix. Two accumulation schemes exist: one
//! serialized add per nonzero in storage order, or chunks of a mode-sorted
//! permutation whose runs of equal row are summed locally and flushed once,
//! serialized only when the run may be shared with another chunk.

use std::hint::black_box;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::dense::DenseMatrix;
use crate::policy::KernelSchedule;
use crate::tensor::SparseTensor;

/// Output matrix whose cells accept concurrent adds.
pub(crate) struct SharedRows {
    cells: Vec<AtomicU64>,
    rows: usize,
    cols: usize,
}

impl SharedRows {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        let zero = 0f64.to_bits();
        SharedRows {
            cells: (0..rows * cols).map(|_| AtomicU64::new(zero)).collect(),
            rows,
            cols,
        }
    }

    pub(crate) fn into_matrix(self) -> DenseMatrix {
        let data = self
            .cells
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect();
        DenseMatrix::from_vec(self.rows, self.cols, data).expect("sized buffer")
    }

    #[inline]
    fn row(&self, i: usize) -> &[AtomicU64] {
        &self.cells[i * self.cols..(i + 1) * self.cols]
    }

    /// Serialized read-modify-write add.
    #[inline]
    fn atomic_add_row(&self, i: usize, vals: &[f64]) {
        for (cell, &v) in self.row(i).iter().zip(vals) {
            let mut cur = cell.load(Ordering::Relaxed);
            loop {
                let next = (f64::from_bits(cur) + v).to_bits();
                match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
                    Ok(_) => break,
                    Err(seen) => cur = seen,
                }
            }
        }
    }

    /// Unguarded add: a separate load and store. Concurrent callers on the
    /// same row may lose updates.
    #[inline]
    fn plain_add_row(&self, i: usize, vals: &[f64]) {
        for (cell, &v) in self.row(i).iter().zip(vals) {
            let cur = f64::from_bits(cell.load(Ordering::Relaxed));
            cell.store((cur + v).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Instrumentation hook. The default methods compile to nothing.
pub trait Probe: Sync {
    #[inline]
    fn nonzero(&self) {}
    #[inline]
    fn flops(&self, _n: u64) {}
    #[inline]
    fn flush(&self, _serialized: bool) {}
}

/// Probe that records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Probe counting processed nonzeros, floating-point operations and flushes.
#[derive(Debug, Default)]
pub struct CountingProbe {
    nonzeros: AtomicU64,
    flops: AtomicU64,
    serialized_flushes: AtomicU64,
    plain_flushes: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelCounters {
    pub nonzeros: u64,
    /// Arithmetic in the per-nonzero body, excluding row flushes.
    pub flops: u64,
    pub serialized_flushes: u64,
    pub plain_flushes: u64,
}

impl CountingProbe {
    pub fn snapshot(&self) -> KernelCounters {
        KernelCounters {
            nonzeros: self.nonzeros.load(Ordering::Relaxed),
            flops: self.flops.load(Ordering::Relaxed),
            serialized_flushes: self.serialized_flushes.load(Ordering::Relaxed),
            plain_flushes: self.plain_flushes.load(Ordering::Relaxed),
        }
    }
}

impl Probe for CountingProbe {
    fn nonzero(&self) {
        self.nonzeros.fetch_add(1, Ordering::Relaxed);
    }

    fn flops(&self, n: u64) {
        self.flops.fetch_add(n, Ordering::Relaxed);
    }

    fn flush(&self, serialized: bool) {
        let c = if serialized {
            &self.serialized_flushes
        } else {
            &self.plain_flushes
        };
        c.fetch_add(1, Ordering::Relaxed);
    }
}

pub(crate) struct ScatterPlan<'a> {
    pub tensor: &'a SparseTensor,
    pub mode: usize,
    /// Mode-sorted order for chunked accumulation; `None` scatters every
    /// nonzero in storage order with a serialized add.
    pub permutation: Option<&'a [usize]>,
    pub schedule: KernelSchedule,
    pub rank: usize,
}

/// Runs the scatter over `plan.schedule`.
///
/// `contribution(j, row, source, acc, probe)` adds nonzero `j`'s contribution
/// into `acc`, reading model rows at `row` (output/factor row) and `source`
/// (per-nonzero row). Without `FIXED_ROW` those are the true indices; with it
/// both are pinned to a per-worker constant. `NO_ATOMICS` replaces every
/// serialized add by an unguarded one.
pub(crate) fn scatter<const NO_ATOMICS: bool, const FIXED_ROW: bool, P, F>(
    plan: &ScatterPlan<'_>,
    out: &SharedRows,
    probe: &P,
    contribution: &F,
) where
    P: Probe,
    F: Fn(usize, usize, usize, &mut [f64], &P) + Sync,
{
    let workers = plan.schedule.workers;
    if workers <= 1 {
        run_worker::<NO_ATOMICS, FIXED_ROW, P, F>(0, plan, out, probe, contribution);
        return;
    }
    std::thread::scope(|s| {
        for w in 0..workers {
            s.spawn(move || run_worker::<NO_ATOMICS, FIXED_ROW, P, F>(w, plan, out, probe, contribution));
        }
    });
}

fn run_worker<const NO_ATOMICS: bool, const FIXED_ROW: bool, P, F>(
    worker: usize,
    plan: &ScatterPlan<'_>,
    out: &SharedRows,
    probe: &P,
    contribution: &F,
) where
    P: Probe,
    F: Fn(usize, usize, usize, &mut [f64], &P) + Sync,
{
    let tensor = plan.tensor;
    let mode = plan.mode;
    let nnz = tensor.nnz();
    let fixed_row = worker % out.rows.max(1);
    let fixed_source = worker % nnz.max(1);
    let mut acc = vec![0.0; plan.rank];

    let Some(perm) = plan.permutation else {
        for chunk in plan.schedule.worker_chunks(worker) {
            for j in chunk {
                let i = tensor.coord(j, mode);
                let (row, source) = if FIXED_ROW {
                    black_box(i);
                    (fixed_row, fixed_source)
                } else {
                    (i, j)
                };
                acc.fill(0.0);
                contribution(j, row, source, &mut acc, probe);
                probe.nonzero();
                if NO_ATOMICS {
                    out.plain_add_row(row, &acc);
                } else {
                    out.atomic_add_row(row, &acc);
                }
                probe.flush(!NO_ATOMICS);
            }
        }
        return;
    };

    let row_at = |z: usize| tensor.coord(perm[z], mode);
    for chunk in plan.schedule.worker_chunks(worker) {
        let end = chunk.end;
        let mut z = chunk.start;
        while z < end {
            let i = row_at(z);
            let run_start = z;
            let row = if FIXED_ROW { fixed_row } else { i };
            acc.fill(0.0);
            while z < end && row_at(z) == i {
                let j = perm[z];
                let source = if FIXED_ROW { fixed_source } else { j };
                contribution(j, row, source, &mut acc, probe);
                probe.nonzero();
                z += 1;
            }
            // The run owns row i only if no neighbouring position shares it.
            let owned = (run_start == 0 || row_at(run_start - 1) != i) && (z == nnz || row_at(z) != i);
            if owned || NO_ATOMICS {
                out.plain_add_row(row, &acc);
            } else {
                out.atomic_add_row(row, &acc);
            }
            probe.flush(!owned && !NO_ATOMICS);
        }
    }
}
