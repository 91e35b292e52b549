//! Kruskal (CP) model state and the per-nonzero Π rows used by the Φ kernel.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::tensor::{format_g17, parse_tns_str, SparseTensor};

/// Weights λ plus one `dims[n] × rank` factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    weights: Vec<f64>,
    factors: Vec<DenseMatrix>,
}

impl KruskalModel {
    pub fn new(weights: Vec<f64>, factors: Vec<DenseMatrix>) -> Result<Self> {
        let rank = weights.len();
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one factor".into()));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} has {} columns, rank is {rank}",
                    f.cols()
                )));
            }
        }
        Ok(KruskalModel { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn factors(&self) -> &[DenseMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DenseMatrix {
        &self.factors[mode]
    }

    pub fn set_factor(&mut self, mode: usize, factor: DenseMatrix) -> Result<()> {
        let current = &self.factors[mode];
        current.ensure_same_shape(&factor, "replacement factor")?;
        self.factors[mode] = factor;
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(DenseMatrix::rows).collect()
    }

    /// Checks that factor row counts match the tensor's dimensions.
    pub fn check_compatible(&self, tensor: &SparseTensor) -> Result<()> {
        if self.dims() != tensor.dims() {
            return Err(Error::ShapeMismatch(format!(
                "model dims {:?} vs tensor dims {:?}",
                self.dims(),
                tensor.dims()
            )));
        }
        Ok(())
    }

    /// Model value at a coordinate: Σ_r λ_r ∏_m A^(m)[coords[m]][r].
    pub fn value_at(&self, coords: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(coords)
                    .fold(self.weights[r], |acc, (f, &i)| acc * f.get(i, r))
            })
            .sum()
    }

    /// Rescales every factor to unit column sums, folding the sums into λ.
    /// Returns the `(mode, column)` pairs that were all-zero.
    pub fn normalize_all(&mut self) -> Vec<(usize, usize)> {
        let mut zero = Vec::new();
        for mode in 0..self.order() {
            let Normalized {
                weights,
                factor,
                zero_columns,
            } = normalize(&self.factors[mode]);
            for (lam, w) in self.weights.iter_mut().zip(weights) {
                *lam *= w;
            }
            self.factors[mode] = factor;
            zero.extend(zero_columns.into_iter().map(|c| (mode, c)));
        }
        zero
    }
}

/// Random model with factor entries drawn from (0, 1] and unit weights.
pub fn init_model(dims: &[usize], rank: usize, seed: u64) -> Result<KruskalModel> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = dims
        .iter()
        .map(|&d| {
            // random() is in [0, 1); flip it into (0, 1]
            let data = (0..d * rank).map(|_| 1.0 - rng.random::<f64>()).collect();
            DenseMatrix::from_vec(d, rank, data).expect("sized buffer")
        })
        .collect();
    KruskalModel::new(vec![1.0; rank], factors)
}

/// Row `j` holds the Khatri-Rao row of every factor except `mode`, evaluated
/// at nonzero `j`'s coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PiMatrix {
    mode: usize,
    entries: DenseMatrix,
}

impl PiMatrix {
    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        self.entries.row(j)
    }

    pub fn rank(&self) -> usize {
        self.entries.cols()
    }

    pub fn nnz(&self) -> usize {
        self.entries.rows()
    }
}

pub fn compute_pi(model: &KruskalModel, tensor: &SparseTensor, mode: usize) -> Result<PiMatrix> {
    tensor.check_mode(mode)?;
    model.check_compatible(tensor)?;
    let rank = model.rank();
    let mut entries = DenseMatrix::filled(tensor.nnz(), rank, 1.0);
    if rank > 0 {
        entries
            .as_mut_slice()
            .par_chunks_mut(rank)
            .enumerate()
            .with_min_len(256)
            .for_each(|(j, out)| {
                let coords = tensor.coords(j);
                for (m, factor) in model.factors().iter().enumerate() {
                    if m == mode {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(factor.row(coords[m])) {
                        *o *= a;
                    }
                }
            });
    }
    Ok(PiMatrix { mode, entries })
}

/// Column sums of `B` and `B` rescaled to unit column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub weights: Vec<f64>,
    pub factor: DenseMatrix,
    /// Columns whose sum was zero; they are left as-is.
    pub zero_columns: Vec<usize>,
}

pub fn normalize(b: &DenseMatrix) -> Normalized {
    let weights = b.column_sums();
    let zero_columns: Vec<usize> = (0..weights.len()).filter(|&r| weights[r] == 0.0).collect();
    let mut factor = b.clone();
    let rank = b.cols();
    for i in 0..b.rows() {
        let row = factor.row_mut(i);
        for r in 0..rank {
            if weights[r] != 0.0 {
                row[r] /= weights[r];
            }
        }
    }
    Normalized {
        weights,
        factor,
        zero_columns,
    }
}

fn lambda_path(prefix: &Path) -> PathBuf {
    suffixed(prefix, ".lambda")
}

fn factor_path(prefix: &Path, mode: usize) -> PathBuf {
    suffixed(prefix, &format!(".factor{mode}.tns"))
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>.lambda` and one `<prefix>.factor<n>.tns` per mode.
/// Returns the written paths.
pub fn save_model(model: &KruskalModel, prefix: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref();
    let mut written = Vec::with_capacity(model.order() + 1);

    let lam: Vec<String> = model.weights().iter().map(|&v| format_g17(v)).collect();
    let path = lambda_path(prefix);
    fs::write(&path, format!("# lambda rank={}\n{}\n", model.rank(), lam.join(" ")))?;
    written.push(path);

    for (n, f) in model.factors().iter().enumerate() {
        let mut text = format!("# factor {n}\n{} {}\n", f.rows(), f.cols());
        for i in 0..f.rows() {
            for r in 0..f.cols() {
                text.push_str(&format!("{} {} {}\n", i + 1, r + 1, format_g17(f.get(i, r))));
            }
        }
        let path = factor_path(prefix, n);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a model written by [`save_model`].
pub fn load_model(prefix: impl AsRef<Path>) -> Result<KruskalModel> {
    let prefix = prefix.as_ref();
    let text = fs::read_to_string(lambda_path(prefix))?;
    let (lineno, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .ok_or(Error::EmptyInput)?;
    let weights = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(lineno + 1, format!("non-numeric weight {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rank = weights.len();

    let mut factors = Vec::new();
    loop {
        let path = factor_path(prefix, factors.len());
        if !path.exists() {
            break;
        }
        let sparse = parse_tns_str(&fs::read_to_string(&path)?)?;
        if sparse.order() != 2 || sparse.dims()[1] != rank {
            return Err(Error::ShapeMismatch(format!(
                "{} is not a {rank}-column factor",
                path.display()
            )));
        }
        let mut f = DenseMatrix::zeros(sparse.dims()[0], rank);
        for j in 0..sparse.nnz() {
            let c = sparse.coords(j);
            f.set(c[0], c[1], f.get(c[0], c[1]) + sparse.value(j));
        }
        factors.push(f);
    }
    KruskalModel::new(weights, factors)
}
