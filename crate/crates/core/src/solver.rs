//! CP-APR with multiplicative updates.
//!
//! For every outer iteration and mode: fold λ (plus the inadmissible-zero
//! offset) into B, build Π, then alternate Φ and B ← B ∗ Φ for the inner
//! iterations, and finally renormalize B into λ and the mode's factor.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kruskal::{compute_pi, init_model, normalize, KruskalModel};
use crate::phi::{compute_phi, KernelConfig, PhiStrategy};
use crate::policy::{hardware_concurrency, PolicyParams};
use crate::ppa::PerturbationMode;
use crate::tensor::SparseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rank: usize,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Smallest divisor allowed in Φ and in the objective.
    pub epsilon: f64,
    /// Offset added to inadmissible zeros.
    pub kappa: f64,
    /// Entries below this are candidates for the offset.
    pub kappa_tol: f64,
    /// Stop once the KKT violation of every mode falls below this.
    pub kkt_tol: f64,
    pub seed: u64,
    pub strategy: PhiStrategy,
    pub perturbation: PerturbationMode,
    pub policy: PolicyParams,
    pub worker_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let workers = hardware_concurrency();
        SolverOptions {
            rank: 10,
            max_outer: 1000,
            max_inner: 10,
            epsilon: 1e-10,
            kappa: 1e-2,
            kappa_tol: 1e-10,
            kkt_tol: 1e-4,
            seed: 0,
            strategy: PhiStrategy::default(),
            perturbation: PerturbationMode::None,
            policy: PolicyParams::default_for(workers),
            worker_budget: workers,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.rank == 0 {
            return bad("rank must be at least 1");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("max_outer and max_inner must be at least 1");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.kappa.is_nan() || self.kappa < 0.0 {
            return bad("kappa must be nonnegative");
        }
        if !(self.kappa_tol > 0.0 && self.kkt_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.worker_budget == 0 {
            return bad("worker budget must be at least 1");
        }
        self.strategy.validate()?;
        self.policy.validate()
    }

    /// Single worker with a sequential policy: bit-reproducible runs.
    pub fn sequential(mut self) -> Self {
        self.worker_budget = 1;
        self.policy = PolicyParams::SEQUENTIAL;
        self
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            strategy: self.strategy,
            policy: self.policy,
            worker_budget: self.worker_budget,
            perturbation: self.perturbation,
        }
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx + 1, format!("expected key=value, got {line:?}")))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
        }
        match key {
            "rank" => self.rank = num(key, value)?,
            "max_outer" => self.max_outer = num(key, value)?,
            "max_inner" => self.max_inner = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "kappa_tol" => self.kappa_tol = num(key, value)?,
            "kkt_tol" => self.kkt_tol = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "threads" => self.worker_budget = num(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "perturbation" => self.perturbation = value.parse()?,
            "policy" => self.policy = value.parse()?,
            _ => return Err(Error::InvalidArgument(format!("unknown option {key:?}"))),
        }
        Ok(())
    }
}

/// B ← B ∗ Φ.
pub fn mu_update(b: &DenseMatrix, phi: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = b.clone();
    mu_update_in_place(&mut out, phi)?;
    Ok(out)
}

fn mu_update_in_place(b: &mut DenseMatrix, phi: &DenseMatrix) -> Result<()> {
    b.ensure_same_shape(phi, "B and Φ")?;
    for (x, p) in b.as_mut_slice().iter_mut().zip(phi.as_slice()) {
        *x *= p;
    }
    Ok(())
}

/// B = (A + S)·diag(λ), where S is `kappa` at entries below `kappa_tol`
/// whose previous Φ exceeded 1, and zero elsewhere (or everywhere when no
/// previous Φ exists).
pub fn apply_scooch(
    a: &DenseMatrix,
    phi_prev: Option<&DenseMatrix>,
    weights: &[f64],
    kappa: f64,
    kappa_tol: f64,
) -> Result<DenseMatrix> {
    if weights.len() != a.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} columns",
            weights.len(),
            a.cols()
        )));
    }
    if let Some(p) = phi_prev {
        a.ensure_same_shape(p, "A and previous Φ")?;
    }
    let mut b = a.clone();
    for i in 0..b.rows() {
        let row = b.row_mut(i);
        for (r, (v, lam)) in row.iter_mut().zip(weights).enumerate() {
            if let Some(p) = phi_prev {
                if *v < kappa_tol && p.get(i, r) > 1.0 {
                    *v += kappa;
                }
            }
            *v *= lam;
        }
    }
    Ok(b)
}

/// max |min(B, 1 − Φ)| over all entries.
pub fn kkt_violation(b: &DenseMatrix, phi: &DenseMatrix) -> Result<f64> {
    b.ensure_same_shape(phi, "B and Φ")?;
    Ok(b.as_slice()
        .iter()
        .zip(phi.as_slice())
        .map(|(&bv, &pv)| bv.min(1.0 - pv).abs())
        .fold(0.0, f64::max))
}

/// Poisson negative log-likelihood (up to constants):
/// Σ_r λ_r − Σ_j x_j log(max(m_j, ε)).
pub fn log_likelihood(tensor: &SparseTensor, model: &KruskalModel, epsilon: f64) -> Result<f64> {
    model.check_compatible(tensor)?;
    let mass: f64 = model.weights().iter().sum();
    let fit: f64 = (0..tensor.nnz())
        .map(|j| {
            let x = tensor.value(j);
            if x == 0.0 {
                0.0
            } else {
                x * model.value_at(tensor.coords(j)).max(epsilon).ln()
            }
        })
        .sum();
    Ok(mass - fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiTiming {
    pub outer: usize,
    pub mode: usize,
    pub inner: usize,
    pub phi_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub objective: f64,
    /// Largest per-mode KKT violation seen in this outer iteration.
    pub kkt: f64,
}

/// Accumulated wall time of the four main kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelTotals {
    pub phi: Duration,
    pub pi: Duration,
    pub kkt: Duration,
    pub mu: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub phi_timings: Vec<PhiTiming>,
    pub outer: Vec<OuterRecord>,
    pub initial_objective: f64,
    pub totals: KernelTotals,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Kernels ran perturbed; the model is not a valid fit.
    pub perturbed: bool,
    /// Number of times normalization met an all-zero column.
    pub zero_columns: usize,
}

impl SolverTrace {
    pub fn outer_iterations(&self) -> usize {
        self.outer.len()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.outer.iter().map(|o| o.objective).collect()
    }

    /// CSV with columns `outer,mode,inner,phi_ms,objective,kkt`; the last two
    /// repeat the values of the row's outer iteration.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "outer,mode,inner,phi_ms,objective,kkt")?;
        for t in &self.phi_timings {
            let o = &self.outer[t.outer];
            writeln!(
                out,
                "{},{},{},{:.6},{:.17e},{:.6e}",
                t.outer, t.mode, t.inner, t.phi_ms, o.objective, o.kkt
            )?;
        }
        Ok(())
    }
}

fn timed<T>(acc: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *acc += start.elapsed();
    out
}

/// Runs CP-APR MU from a seeded random start.
pub fn cp_apr_mu(tensor: &SparseTensor, options: &SolverOptions) -> Result<(KruskalModel, SolverTrace)> {
    options.validate()?;
    let model = init_model(tensor.dims(), options.rank, options.seed)?;
    cp_apr_mu_from(tensor, model, options)
}

/// Runs CP-APR MU starting from `model`, which is column-normalized first.
pub fn cp_apr_mu_from(
    tensor: &SparseTensor,
    mut model: KruskalModel,
    options: &SolverOptions,
) -> Result<(KruskalModel, SolverTrace)> {
    options.validate()?;
    if tensor.nnz() == 0 {
        return Err(Error::InvalidArgument("tensor has no nonzeros".into()));
    }
    model.check_compatible(tensor)?;
    if model.rank() != options.rank {
        return Err(Error::ShapeMismatch(format!(
            "model rank {} vs requested rank {}",
            model.rank(),
            options.rank
        )));
    }
    let cfg = options.kernel_config();
    let order = tensor.order();
    let perms = if cfg.strategy.needs_permutation() {
        tensor.permutations()
    } else {
        Vec::new()
    };

    let mut trace = SolverTrace {
        perturbed: cfg.perturbation != PerturbationMode::None,
        ..SolverTrace::default()
    };
    trace.zero_columns += model.normalize_all().len();
    trace.initial_objective = log_likelihood(tensor, &model, options.epsilon)?;
    let mut phi_prev: Vec<Option<DenseMatrix>> = vec![None; order];

    for outer in 0..options.max_outer {
        let mut kkt_max: f64 = 0.0;
        for mode in 0..order {
            let mut b = timed(&mut trace.totals.mu, || {
                apply_scooch(
                    model.factor(mode),
                    phi_prev[mode].as_ref(),
                    model.weights(),
                    options.kappa,
                    options.kappa_tol,
                )
            })?;
            let pi = timed(&mut trace.totals.pi, || compute_pi(&model, tensor, mode))?;
            let mut last_phi = None;
            for inner in 0..options.max_inner {
                let start = Instant::now();
                let out = compute_phi(tensor, &b, &pi, perms.get(mode), options.epsilon, &cfg)?;
                let elapsed = start.elapsed();
                trace.totals.phi += elapsed;
                trace.phi_timings.push(PhiTiming {
                    outer,
                    mode,
                    inner,
                    phi_ms: elapsed.as_secs_f64() * 1e3,
                });
                if inner == 0 {
                    let v = timed(&mut trace.totals.kkt, || kkt_violation(&b, &out.phi))?;
                    kkt_max = kkt_max.max(v);
                }
                timed(&mut trace.totals.mu, || mu_update_in_place(&mut b, &out.phi))?;
                trace.inner_iterations += 1;
                last_phi = Some(out.phi);
            }
            phi_prev[mode] = last_phi;

            let normalized = timed(&mut trace.totals.mu, || normalize(&b));
            trace.zero_columns += normalized.zero_columns.len();
            model.weights_mut().copy_from_slice(&normalized.weights);
            model.set_factor(mode, normalized.factor)?;
        }
        let objective = log_likelihood(tensor, &model, options.epsilon)?;
        trace.outer.push(OuterRecord {
            objective,
            kkt: kkt_max,
        });
        if kkt_max < options.kkt_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_tensor;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mu_update_examples() {
        let b = m(&[&[2.0, 3.0]]);
        assert_eq!(mu_update(&b, &m(&[&[1.0, 1.0]])).unwrap(), b);
        assert_eq!(mu_update(&b, &m(&[&[0.5, 2.0]])).unwrap(), m(&[&[1.0, 6.0]]));
        let zeroed = mu_update(&b, &m(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(zeroed.get(0, 0), 0.0);
        assert_eq!(mu_update(&zeroed, &m(&[&[5.0, 1.0]])).unwrap().get(0, 0), 0.0);
        assert!(mu_update(&b, &m(&[&[1.0]])).is_err());
    }

    #[test]
    fn scooch_examples() {
        let a = m(&[&[0.0, 0.5]]);
        let cold = apply_scooch(&a, None, &[2.0, 3.0], 1e-2, 1e-10).unwrap();
        assert_eq!(cold, m(&[&[0.0, 1.5]]));

        let prev = m(&[&[1.5, 7.0]]);
        let b = apply_scooch(&a, Some(&prev), &[2.0, 3.0], 1e-2, 1e-10).unwrap();
        assert_eq!(b.get(0, 0), 0.02);
        assert_eq!(b.get(0, 1), 1.5);

        let small_phi = m(&[&[0.9, 7.0]]);
        assert_eq!(apply_scooch(&a, Some(&small_phi), &[2.0, 3.0], 1e-2, 1e-10).unwrap().get(0, 0), 0.0);
        assert!(apply_scooch(&a, None, &[1.0], 1e-2, 1e-10).is_err());
    }

    #[test]
    fn kkt_examples() {
        let b = m(&[&[0.3, 2.0]]);
        assert_eq!(kkt_violation(&b, &m(&[&[1.0, 1.0]])).unwrap(), 0.0);
        assert_eq!(kkt_violation(&m(&[&[0.0]]), &m(&[&[2.0]])).unwrap(), 1.0);
        let v = kkt_violation(&m(&[&[0.3]]), &m(&[&[0.9]])).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
        assert!(kkt_violation(&b, &m(&[&[1.0]])).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let empty = SparseTensor::new(vec![2, 2], vec![], vec![]).unwrap();
        let model = KruskalModel::new(vec![1.5, 2.0], vec![DenseMatrix::filled(2, 2, 0.5); 2]).unwrap();
        assert_eq!(log_likelihood(&empty, &model, 1e-10).unwrap(), 3.5);

        let one = SparseTensor::new(vec![1, 1], vec![vec![0, 0]], vec![1.0]).unwrap();
        let unit = KruskalModel::new(vec![1.0], vec![DenseMatrix::filled(1, 1, 1.0); 2]).unwrap();
        assert_eq!(log_likelihood(&one, &unit, 1e-10).unwrap(), 1.0);

        let zeros = SparseTensor::new(vec![2, 2], vec![vec![0, 1]], vec![0.0]).unwrap();
        let f1 = log_likelihood(&zeros, &model, 1e-10).unwrap();
        let doubled = KruskalModel::new(vec![3.0, 4.0], model.factors().to_vec()).unwrap();
        assert_eq!(log_likelihood(&zeros, &doubled, 1e-10).unwrap(), 2.0 * f1);
    }

    #[test]
    fn option_validation_and_config() {
        assert!(SolverOptions { max_outer: 0, ..Default::default() }.validate().is_err());
        assert!(SolverOptions { rank: 0, ..Default::default() }.validate().is_err());
        assert!(SolverOptions { epsilon: 0.0, ..Default::default() }.validate().is_err());
        let mut o = SolverOptions::default();
        o.apply_config("# comment\nrank = 4\nstrategy=chunked:3\npolicy=2,1,3\nthreads=2\n\nkappa=0.5").unwrap();
        assert_eq!(o.rank, 4);
        assert_eq!(o.strategy, PhiStrategy::ChunkedSorted { chunk_size: 3 });
        assert_eq!(o.policy, PolicyParams::new(2, 1, 3).unwrap());
        assert_eq!(o.worker_budget, 2);
        assert_eq!(o.kappa, 0.5);
        assert!(matches!(o.apply_config("bogus=1"), Err(Error::Parse { line: 1, .. })));
        assert!(o.apply_config("rank").is_err());
        assert!(o.apply_config("rank=x").is_err());
    }

    #[test]
    fn one_by_one_fit() {
        let t = SparseTensor::new(vec![1, 1], vec![vec![0, 0]], vec![7.0]).unwrap();
        let opts = SolverOptions { rank: 1, ..SolverOptions::default() }.sequential();
        let (model, trace) = cp_apr_mu(&t, &opts).unwrap();
        assert!(trace.converged);
        assert!((model.value_at(&[0, 0]) - 7.0).abs() <= 1e-6 * 7.0);
    }

    #[test]
    fn rejects_empty_tensor() {
        let t = SparseTensor::new(vec![2, 2], vec![], vec![]).unwrap();
        assert!(cp_apr_mu(&t, &SolverOptions { rank: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn trace_shapes_and_determinism() {
        let t = random_tensor(&[6, 7, 5], 120, 6, 3).unwrap();
        let opts = SolverOptions {
            rank: 3,
            max_outer: 4,
            max_inner: 3,
            kkt_tol: 1e-12,
            seed: 9,
            ..SolverOptions::default()
        }
        .sequential();
        let (_, a) = cp_apr_mu(&t, &opts).unwrap();
        let (_, b) = cp_apr_mu(&t, &opts).unwrap();
        assert_eq!(a.outer_iterations(), 4);
        assert_eq!(a.phi_timings.len(), 4 * 3 * 3);
        assert_eq!(a.inner_iterations, 36);
        assert_eq!(a.objectives(), b.objectives());
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), "outer,mode,inner,phi_ms,objective,kkt");
        assert_eq!(text.lines().count(), 37);
    }
}
