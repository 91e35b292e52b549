//! Prepared Φ inputs for repeated timing runs.

use std::time::Duration;

use crate::dense::DenseMatrix;
use crate::error::Result;
use crate::kernel::KernelCounters;
use crate::kruskal::{compute_pi, init_model, PiMatrix};
use crate::phi::{compute_phi, compute_phi_counted, KernelConfig, PhiOutput};
use crate::tensor::{Permutation, SparseTensor};

/// B, Π and the permutation for every mode of one tensor, built from a
/// seeded, column-normalized initial model.
#[derive(Debug, Clone)]
pub struct PreparedPhi<'a> {
    tensor: &'a SparseTensor,
    b: Vec<DenseMatrix>,
    pi: Vec<PiMatrix>,
    perms: Vec<Permutation>,
    epsilon: f64,
}

impl<'a> PreparedPhi<'a> {
    pub fn new(tensor: &'a SparseTensor, rank: usize, seed: u64, epsilon: f64) -> Result<Self> {
        let mut model = init_model(tensor.dims(), rank, seed)?;
        model.normalize_all();
        let mut b = Vec::with_capacity(tensor.order());
        let mut pi = Vec::with_capacity(tensor.order());
        for mode in 0..tensor.order() {
            let mut bm = model.factor(mode).clone();
            for i in 0..bm.rows() {
                for (v, lam) in bm.row_mut(i).iter_mut().zip(model.weights()) {
                    *v *= lam;
                }
            }
            b.push(bm);
            pi.push(compute_pi(&model, tensor, mode)?);
        }
        Ok(PreparedPhi {
            tensor,
            b,
            pi,
            perms: tensor.permutations(),
            epsilon,
        })
    }

    pub fn tensor(&self) -> &SparseTensor {
        self.tensor
    }

    pub fn order(&self) -> usize {
        self.tensor.order()
    }

    pub fn run(&self, mode: usize, cfg: &KernelConfig) -> Result<PhiOutput> {
        compute_phi(
            self.tensor,
            &self.b[mode],
            &self.pi[mode],
            Some(&self.perms[mode]),
            self.epsilon,
            cfg,
        )
    }

    pub fn run_counted(&self, mode: usize, cfg: &KernelConfig) -> Result<(PhiOutput, KernelCounters)> {
        compute_phi_counted(
            self.tensor,
            &self.b[mode],
            &self.pi[mode],
            Some(&self.perms[mode]),
            self.epsilon,
            cfg,
        )
    }

    /// Mean kernel time of `reps` runs for one mode.
    pub fn mean_time(&self, mode: usize, cfg: &KernelConfig, reps: usize) -> Result<Duration> {
        let reps = reps.max(1);
        let mut total = Duration::ZERO;
        for _ in 0..reps {
            total += self.run(mode, cfg)?.kernel_time;
        }
        Ok(total / reps as u32)
    }

    /// Kernel time summed over all modes, one run each.
    pub fn sweep_time(&self, cfg: &KernelConfig) -> Result<Duration> {
        (0..self.order()).try_fold(Duration::ZERO, |acc, m| Ok(acc + self.run(m, cfg)?.kernel_time))
    }
}
