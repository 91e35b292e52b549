//! Sparse count tensors in coordinate form, `.tns` ingestion, and per-mode
//! permutation arrays that group nonzeros by their mode coordinate.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An N-way sparse tensor stored as a coordinate list.
///
/// Coordinates are 0-based. Duplicate coordinate tuples are kept as separate
/// nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    // nnz * order, nonzero-major
    coords: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    /// Builds a tensor from per-nonzero coordinate tuples.
    pub fn new(dims: Vec<usize>, coords: Vec<Vec<usize>>, values: Vec<f64>) -> Result<Self> {
        let order = dims.len();
        let mut flat = Vec::with_capacity(coords.len() * order);
        for (j, c) in coords.iter().enumerate() {
            if c.len() != order {
                return Err(Error::ShapeMismatch(format!(
                    "nonzero {j} has {} coordinates, tensor order is {order}",
                    c.len()
                )));
            }
            flat.extend_from_slice(c);
        }
        Self::from_flat(dims, flat, values)
    }

    /// Builds a tensor from a flat nonzero-major coordinate buffer.
    pub fn from_flat(dims: Vec<usize>, coords: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let order = dims.len();
        if order == 0 {
            return Err(Error::InvalidArgument("tensor order must be at least 1".into()));
        }
        if let Some(m) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("dimension of mode {m} is zero")));
        }
        if coords.len() != values.len() * order {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for {} nonzeros of an order-{order} tensor",
                coords.len(),
                values.len()
            )));
        }
        for (j, c) in coords.chunks_exact(order).enumerate() {
            for (m, (&i, &d)) in c.iter().zip(&dims).enumerate() {
                if i >= d {
                    return Err(Error::InvalidArgument(format!(
                        "nonzero {j}: coordinate {i} out of range for mode {m} (dim {d})"
                    )));
                }
            }
        }
        if let Some(j) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "nonzero {j}: value {} is not a nonnegative count",
                values[j]
            )));
        }
        Ok(SparseTensor {
            dims,
            coords,
            values,
        })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Coordinate tuple of nonzero `j`.
    #[inline]
    pub fn coords(&self, j: usize) -> &[usize] {
        let n = self.order();
        &self.coords[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn coord(&self, j: usize, mode: usize) -> usize {
        self.coords[j * self.order() + mode]
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Builds the permutation array for every mode.
    pub fn permutations(&self) -> Vec<Permutation> {
        (0..self.order())
            .map(|m| build_permutation(self, m).expect("mode in range"))
            .collect()
    }
}

/// Reads a `.tns` file from disk.
pub fn read_tns(path: impl AsRef<Path>) -> Result<SparseTensor> {
    parse_tns(BufReader::new(File::open(path)?))
}

pub fn parse_tns_str(text: &str) -> Result<SparseTensor> {
    parse_tns(text.as_bytes())
}

/// Parses FROSTT-style text: `#` comments, rows of N 1-based coordinates
/// followed by a value, and an optional leading row of N dimensions.
pub fn parse_tns<R: BufRead>(reader: R) -> Result<SparseTensor> {
    let mut lines: Vec<(usize, Vec<String>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((idx + 1, trimmed.split_whitespace().map(str::to_owned).collect()));
    }
    if lines.is_empty() {
        return Err(Error::EmptyInput);
    }

    // A dims header has one column fewer than the data rows and only positive integers.
    let header = match lines.get(1) {
        Some((_, second)) if lines[0].1.len() + 1 == second.len() => {
            let parsed: Option<Vec<usize>> = lines[0]
                .1
                .iter()
                .map(|t| t.parse::<usize>().ok().filter(|&d| d > 0))
                .collect();
            parsed
        }
        _ => None,
    };
    let data = if header.is_some() { &lines[1..] } else { &lines[..] };

    let width = data[0].1.len();
    if width < 2 {
        return Err(Error::parse(
            data[0].0,
            "expected at least one coordinate and a value",
        ));
    }
    let order = width - 1;
    let mut coords = Vec::with_capacity(data.len() * order);
    let mut values = Vec::with_capacity(data.len());
    let mut observed = vec![0usize; order];
    for (lineno, tokens) in data {
        if tokens.len() != width {
            return Err(Error::parse(
                *lineno,
                format!("expected {width} columns, found {}", tokens.len()),
            ));
        }
        for (m, tok) in tokens[..order].iter().enumerate() {
            let c: usize = tok
                .parse()
                .map_err(|_| Error::parse(*lineno, format!("non-numeric coordinate {tok:?}")))?;
            if c == 0 {
                return Err(Error::parse(*lineno, "coordinates are 1-based; found 0"));
            }
            observed[m] = observed[m].max(c);
            coords.push(c - 1);
        }
        let tok = &tokens[order];
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(*lineno, format!("non-numeric value {tok:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(*lineno, format!("non-finite value {tok:?}")));
        }
        if v < 0.0 {
            return Err(Error::parse(*lineno, format!("negative count value {v}")));
        }
        values.push(v);
    }

    let dims = match header {
        Some(h) => {
            if h.len() != order {
                return Err(Error::parse(lines[0].0, "header does not match tensor order"));
            }
            if let Some(m) = (0..order).find(|&m| observed[m] > h[m]) {
                return Err(Error::parse(
                    lines[0].0,
                    format!("mode {m} coordinate {} exceeds declared dim {}", observed[m], h[m]),
                ));
            }
            h
        }
        None => observed,
    };
    SparseTensor::from_flat(dims, coords, values)
}

/// Writes `tensor` as `.tns` text: a dims header, then 1-based coordinates
/// and `%.17g`-formatted values.
pub fn write_tns<W: Write>(tensor: &SparseTensor, mut out: W) -> Result<()> {
    let header: Vec<String> = tensor.dims().iter().map(ToString::to_string).collect();
    writeln!(out, "{}", header.join(" "))?;
    let mut line = String::new();
    for j in 0..tensor.nnz() {
        line.clear();
        for &c in tensor.coords(j) {
            line.push_str(&(c + 1).to_string());
            line.push(' ');
        }
        line.push_str(&format_g17(tensor.value(j)));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn to_tns_string(tensor: &SparseTensor) -> String {
    let mut buf = Vec::new();
    write_tns(tensor, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("tns output is ASCII")
}

/// Formats a value like C's `printf("%.17g")`.
pub fn format_g17(v: f64) -> String {
    const P: i32 = 17;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Stable ordering of nonzeros by one mode's coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mode: usize,
    order: Vec<usize>,
}

impl Permutation {
    pub fn mode(&self) -> usize {
        self.mode
    }

    /// Nonzero indices in sorted order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Stable counting sort of the nonzero indices by their `mode` coordinate.
pub fn build_permutation(tensor: &SparseTensor, mode: usize) -> Result<Permutation> {
    tensor.check_mode(mode)?;
    let dim = tensor.dims()[mode];
    let mut offsets = vec![0usize; dim + 1];
    for j in 0..tensor.nnz() {
        offsets[tensor.coord(j, mode) + 1] += 1;
    }
    for i in 0..dim {
        offsets[i + 1] += offsets[i];
    }
    let mut order = vec![0usize; tensor.nnz()];
    for j in 0..tensor.nnz() {
        let slot = &mut offsets[tensor.coord(j, mode)];
        order[*slot] = j;
        *slot += 1;
    }
    Ok(Permutation { mode, order })
}

/// Half-open range `[start, end)` of permutation positions sharing `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSegment {
    pub row: usize,
    pub start: usize,
    pub end: usize,
}

/// Splits the permutation order into maximal runs of equal mode coordinate.
pub fn row_segments(perm: &Permutation, tensor: &SparseTensor) -> Vec<RowSegment> {
    let mode = perm.mode();
    let mut segments: Vec<RowSegment> = Vec::new();
    for (pos, &j) in perm.order().iter().enumerate() {
        let row = tensor.coord(j, mode);
        match segments.last_mut() {
            Some(seg) if seg.row == row => seg.end = pos + 1,
            _ => segments.push(RowSegment {
                row,
                start: pos,
                end: pos + 1,
            }),
        }
    }
    segments
}

/// Uniformly random sparse tensor with integer counts in `1..=max_count`.
/// Coordinates may repeat.
pub fn random_tensor(dims: &[usize], nnz: usize, max_count: u32, seed: u64) -> Result<SparseTensor> {
    if max_count == 0 {
        return Err(Error::InvalidArgument("max_count must be positive".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(nnz * dims.len());
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        for &d in dims {
            coords.push(rng.random_range(0..d));
        }
        values.push(f64::from(rng.random_range(1..=max_count)));
    }
    SparseTensor::from_flat(dims.to_vec(), coords, values)
}
