//! Dense reference implementations shared by the integration tests. They
//! deliberately avoid the library's sparse kernels: the tensor is unfolded
//! into an explicit matrix and the Khatri-Rao product is formed in full.

#![allow(dead_code)]

use cpapr_core::{random_tensor, DenseMatrix, KruskalModel, SparseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Column index of `coords` in the mode-`mode` unfolding, with the
/// remaining modes ordered first-fastest.
fn unfold_column(dims: &[usize], coords: &[usize], mode: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for (m, (&c, &d)) in coords.iter().zip(dims).enumerate() {
        if m != mode {
            col += c * stride;
            stride *= d;
        }
    }
    col
}

/// Dense X_(mode), summing duplicate coordinates.
pub fn matricize(tensor: &SparseTensor, mode: usize) -> Vec<Vec<f64>> {
    let dims = tensor.dims();
    let cols: usize = dims.iter().enumerate().filter(|&(m, _)| m != mode).map(|(_, &d)| d).product();
    let mut x = vec![vec![0.0; cols]; dims[mode]];
    for j in 0..tensor.nnz() {
        let c = tensor.coords(j);
        x[c[mode]][unfold_column(dims, c, mode)] += tensor.value(j);
    }
    x
}

/// Full Khatri-Rao product of every factor except `mode`, one row per
/// column of the unfolding.
pub fn khatri_rao(factors: &[DenseMatrix], mode: usize) -> Vec<Vec<f64>> {
    let dims: Vec<usize> = factors.iter().map(|f| f.rows()).collect();
    let rank = factors[0].cols();
    let cols: usize = dims.iter().enumerate().filter(|&(m, _)| m != mode).map(|(_, &d)| d).product();
    let mut kr = vec![vec![1.0; rank]; cols];
    for (col, row) in kr.iter_mut().enumerate() {
        let mut rest = col;
        for (m, f) in factors.iter().enumerate() {
            if m == mode {
                continue;
            }
            let k = rest % dims[m];
            rest /= dims[m];
            for (o, a) in row.iter_mut().zip(f.row(k)) {
                *o *= a;
            }
        }
    }
    kr
}

/// Sequential dense Φ: (X_(n) ⊘ max(B·KRᵀ, ε))·KR, evaluated only where the
/// unfolding is nonzero.
pub fn dense_phi(tensor: &SparseTensor, b: &DenseMatrix, factors: &[DenseMatrix], mode: usize, eps: f64) -> DenseMatrix {
    let x = matricize(tensor, mode);
    let kr = khatri_rao(factors, mode);
    let rank = b.cols();
    let mut out = DenseMatrix::zeros(b.rows(), rank);
    for (i, xrow) in x.iter().enumerate() {
        for (col, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let m: f64 = (0..rank).map(|r| b.get(i, r) * kr[col][r]).sum();
            let z = xv / m.max(eps);
            for r in 0..rank {
                out.set(i, r, out.get(i, r) + z * kr[col][r]);
            }
        }
    }
    out
}

/// Dense X_(n)·KR.
pub fn dense_mttkrp(tensor: &SparseTensor, factors: &[DenseMatrix], mode: usize) -> DenseMatrix {
    let x = matricize(tensor, mode);
    let kr = khatri_rao(factors, mode);
    let rank = factors[0].cols();
    let mut out = DenseMatrix::zeros(x.len(), rank);
    for (i, xrow) in x.iter().enumerate() {
        for r in 0..rank {
            let s: f64 = xrow.iter().zip(&kr).map(|(xv, k)| xv * k[r]).sum();
            out.set(i, r, s);
        }
    }
    out
}

/// Largest entrywise relative difference.
pub fn max_rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Small random problem: order in `orders`, dims ≤ 8, nnz ≤ 200, R ≤ 5.
pub struct Instance {
    pub tensor: SparseTensor,
    pub model: KruskalModel,
}

pub fn random_instance(seed: u64, orders: &[usize]) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = orders[rng.random_range(0..orders.len())];
    let dims: Vec<usize> = (0..order).map(|_| rng.random_range(1..=8)).collect();
    let nnz = rng.random_range(1..=200);
    let rank = rng.random_range(1..=5);
    let tensor = random_tensor(&dims, nnz, 10, seed ^ 0x5eed).unwrap();
    let mut model = cpapr_core::init_model(&dims, rank, seed.wrapping_add(17)).unwrap();
    for w in model.weights_mut() {
        *w = rng.random_range(0.5..4.0);
    }
    Instance { tensor, model }
}

/// B = A^(n)·diag(λ).
pub fn weighted_factor(model: &KruskalModel, mode: usize) -> DenseMatrix {
    let mut b = model.factor(mode).clone();
    for i in 0..b.rows() {
        for (v, w) in b.row_mut(i).iter_mut().zip(model.weights()) {
            *v *= w;
        }
    }
    b
}
