//! Dense and sparse matrix primitives.
//!
//! Every kernel accumulates in a fixed order (left to right over the inner
//! index), so identical inputs give bitwise-identical outputs. Row loops may
//! be parallelized without changing that order.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{GicError, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GicError::Shape(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(GicError::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a 0-column matrix still has `rows` rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// New matrix whose row `i` is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(perm.len(), self.cols);
        for (i, &src) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    /// Rows selected by `ids`, in order.
    pub fn select_rows(&self, ids: &[usize]) -> DenseMatrix {
        self.permute_rows(ids)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Mean over rows (a length-`cols` vector); summation in row order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (a, &x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors unless every entry is finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(p) => Err(GicError::NonFinite(format!(
                "{what}: entry ({}, {}) is {}",
                p / self.cols.max(1),
                p % self.cols.max(1),
                self.data[p]
            ))),
        }
    }

    /// Writes one row per line, 17 significant digits per value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| GicError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut line = String::new();
        for r in self.row_iter() {
            line.clear();
            for (j, x) in r.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{}", format_f64(*x)).expect("write to String");
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| GicError::io(path, e))?;
        }
        w.flush().map_err(|e| GicError::io(path, e))
    }

    /// Reads a CSV written by [`DenseMatrix::write_csv`] (or any
    /// comma-separated decimal table with a constant column count).
    pub fn read_csv(path: &Path) -> Result<DenseMatrix> {
        let file = std::fs::File::open(path).map_err(|e| GicError::io(path, e))?;
        let mut data = Vec::new();
        let mut cols: Option<usize> = None;
        let mut rows = 0;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GicError::io(path, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    GicError::parse(path, lineno + 1, format!("non-numeric entry {field:?}"))
                })?;
                data.push(v);
            }
            let n = data.len() - before;
            match cols {
                None => cols = Some(n),
                Some(c) if c != n => {
                    return Err(GicError::parse(
                        path,
                        lineno + 1,
                        format!("expected {c} columns, found {n}"),
                    ))
                }
                _ => {}
            }
            rows += 1;
        }
        DenseMatrix::from_vec(rows, cols.unwrap_or(0), data)
    }
}

/// Formats with 17 significant digits, which round-trips every `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Compressed sparse row matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrixCsr {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrixCsr {
    /// Validates and wraps raw CSR arrays.
    pub fn new(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != rows + 1 || offsets[0] != 0 {
            return Err(GicError::Shape(format!(
                "CSR offsets must have length {} and start at 0",
                rows + 1
            )));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(GicError::Shape("CSR offsets must be nondecreasing".into()));
        }
        let nnz = offsets[rows];
        if indices.len() != nnz || values.len() != nnz {
            return Err(GicError::Shape(format!(
                "CSR nnz is {nnz} but indices/values have {}/{} entries",
                indices.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let idx = &indices[offsets[r]..offsets[r + 1]];
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GicError::Shape(format!(
                    "CSR row {r} column indices are not strictly increasing"
                )));
            }
            if idx.last().is_some_and(|&c| c >= cols) {
                return Err(GicError::Shape(format!("CSR row {r} has a column index >= {cols}")));
            }
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in d.row_iter() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            offsets,
            indices,
            values,
        }
    }

    /// The transpose, again in CSR form with sorted column indices.
    pub fn transpose(&self) -> SparseMatrixCsr {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.indices.len()];
        let mut values = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                indices[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        SparseMatrixCsr {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column indices, values)` of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// Stored value at `(i, j)`, or 0.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                d.set(r, c, v);
            }
        }
        d
    }
}

/// Sparse × dense product. Row `i` of the output accumulates the stored
/// entries of row `i` of `s` in ascending column order.
pub fn spmm(s: &SparseMatrixCsr, d: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols() != d.rows() {
        return Err(GicError::Shape(format!(
            "spmm: sparse is {}x{}, dense is {}x{}",
            s.rows(),
            s.cols(),
            d.rows(),
            d.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(s.rows(), d.cols());
    let cols = d.cols();
    for i in 0..s.rows() {
        let (idx, vals) = s.row(i);
        let orow = &mut out.data[i * cols..(i + 1) * cols];
        for (&c, &v) in idx.iter().zip(vals) {
            for (o, &x) in orow.iter_mut().zip(d.row(c)) {
                *o += v * x;
            }
        }
    }
    out.check_finite("spmm output")?;
    Ok(out)
}

/// Dense product `op(a) · op(b)` where `op` optionally transposes.
///
/// Each output entry is summed sequentially over the inner index in
/// ascending order.
/// Zero entries of `a` are skipped in the non-transposed-`b` paths, which
/// only matters for the sign of an exact zero result.
pub fn matmul(
    a: &DenseMatrix,
    b: &DenseMatrix,
    transpose_a: bool,
    transpose_b: bool,
) -> Result<DenseMatrix> {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (k2, n) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if k != k2 {
        return Err(GicError::Shape(format!(
            "matmul: inner dimensions differ ({}x{}{} times {}x{}{})",
            a.rows,
            a.cols,
            if transpose_a { "^T" } else { "" },
            b.rows,
            b.cols,
            if transpose_b { "^T" } else { "" }
        )));
    }
    let mut out = DenseMatrix::zeros(m, n);
    match (transpose_a, transpose_b) {
        (false, false) => {
            for i in 0..m {
                let arow = a.row(i);
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (o, &bv) in orow.iter_mut().zip(b.row(p)) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let arow = a.row(p);
                let brow = b.row(p);
                for (i, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let orow = &mut out.data[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = a.row(i);
                for j in 0..n {
                    let mut acc = 0.0;
                    for (x, y) in arow.iter().zip(b.row(j)) {
                        acc += x * y;
                    }
                    out.data[i * n + j] = acc;
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.get(p, i) * b.get(j, p);
                    }
                    out.data[i * n + j] = acc;
                }
            }
        }
    }
    out.check_finite("matmul output")?;
    Ok(out)
}

/// Inner product over the common prefix of `a` and `b`.
///
/// Products are accumulated in four interleaved lanes (element `i` goes to
/// lane `i % 4`), then combined as `(l0 + l1) + (l2 + l3) + tail`. The
/// order is fixed, so results are reproducible, and the independent lanes
/// let the compiler vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// A feature matrix `X` as the left operand of `X·B` and `Xᵀ·B`.
///
/// Implemented densely by [`DenseMatrix`] and sparsely by
/// [`SparseFeatures`]; both produce bit-identical results because they
/// accumulate the same nonzero terms in the same order.
pub trait FeatureOperand {
    fn num_rows(&self) -> usize;
    fn num_cols(&self) -> usize;
    /// `X · b`
    fn mul(&self, b: &DenseMatrix) -> Result<DenseMatrix>;
    /// `Xᵀ · b`
    fn mul_t(&self, b: &DenseMatrix) -> Result<DenseMatrix>;
}

impl FeatureOperand for DenseMatrix {
    fn num_rows(&self) -> usize {
        self.rows
    }
    fn num_cols(&self) -> usize {
        self.cols
    }
    fn mul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        matmul(self, b, false, false)
    }
    fn mul_t(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        matmul(self, b, true, false)
    }
}

/// CSR copies of `X` and `Xᵀ` for sparse (e.g. bag-of-words) features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    x: SparseMatrixCsr,
    xt: SparseMatrixCsr,
}

impl SparseFeatures {
    pub fn from_dense(x: &DenseMatrix) -> Self {
        let x = SparseMatrixCsr::from_dense(x);
        let xt = x.transpose();
        Self { x, xt }
    }
}

impl FeatureOperand for SparseFeatures {
    fn num_rows(&self) -> usize {
        self.x.rows
    }
    fn num_cols(&self) -> usize {
        self.x.cols
    }
    fn mul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        spmm(&self.x, b)
    }
    fn mul_t(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        spmm(&self.xt, b)
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Logistic sigmoid, branching on sign so large |x| never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_matrix(x: &DenseMatrix) -> DenseMatrix {
    x.map(sigmoid)
}

/// Given `y = sigmoid(x)` and upstream `dy`, returns `dx = dy·y·(1−y)`.
#[inline]
pub fn sigmoid_backward(y: f64, dy: f64) -> f64 {
    dy * y * (1.0 - y)
}

/// PReLU with one slope shared across all channels.
pub fn prelu(x: &DenseMatrix, slope: f64) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Returns `(dx, d_slope)` for `y = prelu(x, slope)`.
pub fn prelu_backward(x: &DenseMatrix, slope: f64, dy: &DenseMatrix) -> (DenseMatrix, f64) {
    debug_assert_eq!(x.shape(), dy.shape());
    let mut dx = DenseMatrix::zeros(x.rows, x.cols);
    let mut dslope = 0.0;
    for ((d, &xv), &g) in dx.data.iter_mut().zip(&x.data).zip(&dy.data) {
        if xv > 0.0 {
            *d = g;
        } else {
            *d = slope * g;
            dslope += g * xv;
        }
    }
    (dx, dslope)
}

/// Cosine similarity between every row of `h` and every row of `m`.
/// A pair involving a zero-norm row has similarity 0.
pub fn cosine_rows(h: &DenseMatrix, m: &DenseMatrix) -> Result<DenseMatrix> {
    if h.cols != m.cols {
        return Err(GicError::Shape(format!(
            "cosine_rows: {} vs {} columns",
            h.cols, m.cols
        )));
    }
    let m_norms: Vec<f64> = m.row_iter().map(norm).collect();
    let mut out = DenseMatrix::zeros(h.rows, m.rows);
    for i in 0..h.rows {
        let hi = h.row(i);
        let hn = norm(hi);
        for (k, &mn) in m_norms.iter().enumerate() {
            let v = if hn == 0.0 || mn == 0.0 {
                0.0
            } else {
                dot(hi, m.row(k)) / (hn * mn)
            };
            out.data[i * m.rows + k] = v;
        }
    }
    Ok(out)
}

/// Scales every nonzero row to unit L2 norm; zero rows are left as is.
pub fn row_l2_normalize(h: &DenseMatrix) -> DenseMatrix {
    let mut out = h.clone();
    for i in 0..out.rows {
        let r = out.row_mut(i);
        let n = norm(r);
        if n > 0.0 {
            r.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}
