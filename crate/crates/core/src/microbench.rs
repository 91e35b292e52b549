//! Bandwidth microbenchmarks: STREAM-style vector kernels and a sparse
//! MTTKRP built on the same scatter machinery as the Φ kernel.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kernel::{NoProbe, ScatterPlan, SharedRows};
use crate::phi::{dispatch, sorted_order, KernelConfig};
use crate::ppa::PerturbationMode;
use crate::tensor::{Permutation, SparseTensor};

/// Scalar used by the Scale and Triad kernels.
pub const STREAM_SCALAR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKernel {
    Copy,
    Scale,
    Add,
    Triad,
}

impl StreamKernel {
    pub const ALL: [StreamKernel; 4] = [StreamKernel::Copy, StreamKernel::Scale, StreamKernel::Add, StreamKernel::Triad];

    pub fn name(self) -> &'static str {
        match self {
            StreamKernel::Copy => "copy",
            StreamKernel::Scale => "scale",
            StreamKernel::Add => "add",
            StreamKernel::Triad => "triad",
        }
    }

    pub fn bytes_per_iter(self) -> u64 {
        match self {
            StreamKernel::Copy | StreamKernel::Scale => 16,
            StreamKernel::Add | StreamKernel::Triad => 24,
        }
    }

    pub fn flops_per_iter(self) -> u64 {
        match self {
            StreamKernel::Copy => 0,
            StreamKernel::Scale | StreamKernel::Add => 1,
            StreamKernel::Triad => 2,
        }
    }

    pub fn intensity(self) -> Ratio<u64> {
        Ratio::new(self.flops_per_iter(), self.bytes_per_iter())
    }

    /// Intensity rounded the way it is usually tabulated.
    pub fn intensity_label(self) -> &'static str {
        match self {
            StreamKernel::Copy => "0",
            StreamKernel::Scale => "0.0625",
            StreamKernel::Add => "0.042",
            StreamKernel::Triad => "0.083",
        }
    }
}

impl fmt::Display for StreamKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StreamKernel::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown STREAM kernel {s:?}")))
    }
}

/// c = a
pub fn stream_copy(c: &mut [f64], a: &[f64]) {
    c.par_iter_mut().zip(a.par_iter()).for_each(|(c, a)| *c = *a);
}

/// b = s·c
pub fn stream_scale(b: &mut [f64], c: &[f64], s: f64) {
    b.par_iter_mut().zip(c.par_iter()).for_each(|(b, c)| *b = s * *c);
}

/// c = a + b
pub fn stream_add(c: &mut [f64], a: &[f64], b: &[f64]) {
    c.par_iter_mut()
        .zip(a.par_iter().zip(b.par_iter()))
        .for_each(|(c, (a, b))| *c = *a + *b);
}

/// a = b + s·c
pub fn stream_triad(a: &mut [f64], b: &[f64], c: &[f64], s: f64) {
    a.par_iter_mut()
        .zip(b.par_iter().zip(c.par_iter()))
        .for_each(|(a, (b, c))| *a = *b + s * *c);
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthResult {
    pub kernel: String,
    /// Array length for STREAM, nonzero count for MTTKRP.
    pub length: usize,
    pub reps: usize,
    pub bytes_per_rep: u64,
    pub best_gbs: f64,
    pub mean_gbs: f64,
    pub percent_of_peak: Option<f64>,
    pub validated: bool,
}

impl BandwidthResult {
    fn from_times(kernel: String, length: usize, bytes: u64, times: &[Duration], validated: bool) -> Self {
        let secs: Vec<f64> = times.iter().map(|t| t.as_secs_f64().max(1e-12)).collect();
        let best = secs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = secs.iter().sum::<f64>() / secs.len() as f64;
        BandwidthResult {
            kernel,
            length,
            reps: times.len() + 1,
            bytes_per_rep: bytes,
            best_gbs: bytes as f64 / best / 1e9,
            mean_gbs: bytes as f64 / mean / 1e9,
            percent_of_peak: None,
            validated,
        }
    }

    /// Records best bandwidth as a percentage of `peak_gbs`.
    pub fn with_peak(mut self, peak_gbs: f64) -> Self {
        self.percent_of_peak = Some(self.best_gbs / peak_gbs * 100.0);
        self
    }
}

/// Writes `kernel,length,reps,bytes,best_gbs,mean_gbs,pct_peak,validated`.
pub fn write_bandwidth_csv<W: Write>(results: &[BandwidthResult], mut out: W) -> Result<()> {
    writeln!(out, "kernel,length,reps,bytes,best_gbs,mean_gbs,pct_peak,validated")?;
    for r in results {
        let pct = r.percent_of_peak.map(|p| format!("{p:.3}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{}",
            r.kernel, r.length, r.reps, r.bytes_per_rep, r.best_gbs, r.mean_gbs, pct, r.validated
        )?;
    }
    Ok(())
}

fn alloc(length: usize, value: f64) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(length)
        .map_err(|e| Error::InvalidArgument(format!("cannot allocate {length} doubles: {e}")))?;
    v.resize(length, value);
    Ok(v)
}

/// Runs the selected kernels `reps` times in the canonical order
/// copy, scale, add, triad. The first repetition is a warm-up and is not
/// timed into the results. Afterwards every array is compared exactly with
/// a scalar replay of the same sequence.
pub fn run_stream(length: usize, reps: usize, kernels: &[StreamKernel]) -> Result<Vec<BandwidthResult>> {
    if length == 0 {
        return Err(Error::InvalidArgument("STREAM length must be positive".into()));
    }
    if reps < 2 {
        return Err(Error::InvalidArgument("STREAM needs at least 2 repetitions".into()));
    }
    if kernels.is_empty() {
        return Err(Error::InvalidArgument("no STREAM kernels selected".into()));
    }
    let mut a = alloc(length, 1.0)?;
    let mut b = alloc(length, 2.0)?;
    let mut c = alloc(length, 0.0)?;
    let s = STREAM_SCALAR;
    let (mut ea, mut eb, mut ec) = (1.0f64, 2.0f64, 0.0f64);

    let mut times: Vec<Vec<Duration>> = vec![Vec::with_capacity(reps - 1); kernels.len()];
    for rep in 0..reps {
        for k in StreamKernel::ALL {
            let Some(slot) = kernels.iter().position(|&x| x == k) else {
                continue;
            };
            let start = Instant::now();
            match k {
                StreamKernel::Copy => {
                    stream_copy(&mut c, &a);
                    ec = ea;
                }
                StreamKernel::Scale => {
                    stream_scale(&mut b, &c, s);
                    eb = s * ec;
                }
                StreamKernel::Add => {
                    stream_add(&mut c, &a, &b);
                    ec = ea + eb;
                }
                StreamKernel::Triad => {
                    stream_triad(&mut a, &b, &c, s);
                    ea = eb + s * ec;
                }
            }
            let elapsed = start.elapsed();
            if rep > 0 {
                times[slot].push(elapsed);
            }
        }
    }

    let validated = a.iter().all(|&x| x == ea) && b.iter().all(|&x| x == eb) && c.iter().all(|&x| x == ec);
    Ok(kernels
        .iter()
        .zip(&times)
        .map(|(k, t)| {
            BandwidthResult::from_times(k.name().to_string(), length, k.bytes_per_iter() * length as u64, t, validated)
        })
        .collect())
}

fn check_factors(tensor: &SparseTensor, factors: &[DenseMatrix], mode: usize) -> Result<usize> {
    tensor.check_mode(mode)?;
    if factors.len() != tensor.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            tensor.order()
        )));
    }
    let rank = factors[0].cols();
    for (m, f) in factors.iter().enumerate() {
        if f.rows() != tensor.dims()[m] || f.cols() != rank {
            return Err(Error::ShapeMismatch(format!(
                "factor {m} is {:?}, expected {}x{rank}",
                f.shape(),
                tensor.dims()[m]
            )));
        }
    }
    Ok(rank)
}

/// Sequential sparse MTTKRP: X_(mode) times the Khatri-Rao product of all
/// other factors.
pub fn mttkrp(tensor: &SparseTensor, factors: &[DenseMatrix], mode: usize) -> Result<DenseMatrix> {
    mttkrp_with(tensor, factors, mode, None, &KernelConfig::sequential(crate::phi::PhiStrategy::AtomicPerNonzero))
}

/// MTTKRP under an explicit kernel configuration. Chunked strategies need
/// the mode's permutation.
pub fn mttkrp_with(
    tensor: &SparseTensor,
    factors: &[DenseMatrix],
    mode: usize,
    permutation: Option<&Permutation>,
    cfg: &KernelConfig,
) -> Result<DenseMatrix> {
    let rank = check_factors(tensor, factors, mode)?;
    cfg.strategy.validate()?;
    let order = sorted_order(tensor, mode, permutation, cfg.strategy)?;
    let plan = ScatterPlan {
        tensor,
        mode,
        permutation: order,
        schedule: cfg.schedule(tensor.nnz())?,
        rank,
    };
    let values = tensor.values();
    let body = |j: usize, _row: usize, _source: usize, acc: &mut [f64], _probe: &NoProbe| {
        let coords = tensor.coords(j);
        let v = values[j];
        for (r, a) in acc.iter_mut().enumerate() {
            let mut t = v;
            for (m, f) in factors.iter().enumerate() {
                if m != mode {
                    t *= f.get(coords[m], r);
                }
            }
            *a += t;
        }
    };
    let out = SharedRows::zeros(tensor.dims()[mode], rank);
    dispatch(PerturbationMode::None, &plan, &out, &NoProbe, &body);
    Ok(out.into_matrix())
}

/// Bytes moved by one MTTKRP: per nonzero, the value, (N-1) factor rows and
/// a read plus write of the output row.
pub fn mttkrp_bytes(order: usize, nnz: usize, rank: usize) -> u64 {
    let per = 8 + (order.saturating_sub(1) * rank * 8) as u64 + 16 * rank as u64;
    nnz as u64 * per
}

/// Times MTTKRP over every mode and reports effective bandwidth. The
/// result is validated against the sequential kernel.
pub fn mttkrp_bandwidth(
    tensor: &SparseTensor,
    rank: usize,
    reps: usize,
    cfg: &KernelConfig,
    seed: u64,
) -> Result<BandwidthResult> {
    if reps < 2 {
        return Err(Error::InvalidArgument("MTTKRP timing needs at least 2 repetitions".into()));
    }
    let model = crate::kruskal::init_model(tensor.dims(), rank, seed)?;
    let factors = model.factors().to_vec();
    let perms = if cfg.strategy.needs_permutation() {
        tensor.permutations()
    } else {
        Vec::new()
    };
    let run = |m: usize| mttkrp_with(tensor, &factors, m, perms.get(m), cfg);

    let mut validated = true;
    for m in 0..tensor.order() {
        let got = run(m)?;
        let want = mttkrp(tensor, &factors, m)?;
        validated &= got
            .as_slice()
            .iter()
            .zip(want.as_slice())
            .all(|(g, w)| (g - w).abs() <= 1e-10 * w.abs().max(1.0));
    }
    let mut times = Vec::with_capacity(reps - 1);
    for _ in 1..reps {
        let start = Instant::now();
        for m in 0..tensor.order() {
            std::hint::black_box(run(m)?);
        }
        times.push(start.elapsed());
    }
    let bytes = mttkrp_bytes(tensor.order(), tensor.nnz(), rank) * tensor.order() as u64;
    Ok(BandwidthResult::from_times(
        "mttkrp".to_string(),
        tensor.nnz(),
        bytes,
        &times,
        validated,
    ))
}
