//! Matrix-free measurement operators.
//!
//! Vectorization convention: the flat index of the matrix unit `E_{i,j}` of a
//! `N x n` matrix is `(i-1)*n + j` (1-based), i.e. `vec(E_{i,j}) = e_i (x) e_j`
//! with the first tensor factor slowest. Under this convention
//! `(A (x) B) vec(X) = vec(A X B^T)`, and the flip operator realizes the
//! transpose: `F_{N,n} vec(X) = vec(X^T)`. Kronecker applications never
//! materialize the product matrix; they run one mode product per factor.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entry budget for [`MeasurementOperator::materialize`] (rows times cols).
pub const DEFAULT_MATERIALIZE_BUDGET: u128 = 10_000_000;

/// Dense row-major matrix of finite doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidSpec(format!("zero matrix dimension {rows}x{cols}")));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: entries.len(),
                context: "dense matrix entries",
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("matrix entry {pos}") });
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    /// 0-based column copy.
    pub(crate) fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut entries = vec![0.0; self.entries.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                entries[c * self.rows + r] = self.get(r, c);
            }
        }
        Self { rows: self.cols, cols: self.rows, entries }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
                context: "matvec input",
            });
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(y)
    }

    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: y.len(),
                context: "transposed matvec input",
            });
        }
        let mut x = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            let w = y[r];
            for (xi, a) in x.iter_mut().zip(row) {
                *xi += w * a;
            }
        }
        Ok(x)
    }

    /// Writes the matrix in the text MAT1 format: a `MAT1 <rows> <cols>`
    /// header line, then row-major entries, one row per line. Values use
    /// shortest round-trip formatting, so write/read is lossless.
    pub fn to_mat1(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MAT1 {} {}", self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.get(r, c));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the MAT1 text format; entries may be split across lines freely.
    pub fn from_mat1(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("MAT1") => {}
            other => return Err(Error::Parse(format!("expected MAT1 magic, got {other:?}"))),
        }
        let rows: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("missing row count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad row count: {e}")))?;
        let cols: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("missing column count".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad column count: {e}")))?;
        let mut entries = Vec::with_capacity(rows * cols);
        for tok in tokens {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("bad entry {tok:?}: {e}")))?;
            entries.push(v);
        }
        DenseMatrix::new(rows, cols, entries)
    }

    pub fn write_mat1(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_mat1())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_mat1(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_mat1(&text)
    }
}

/// Matrix-free linear map with an adjoint.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementOperator {
    /// Explicit dense matrix.
    Dense(DenseMatrix),
    /// Kronecker product of the factors, first factor slowest.
    Kronecker(Vec<DenseMatrix>),
    /// Tensor-swap permutation on `K^{blocks * block_len}`: sends the flat
    /// index `(i-1)*block_len + j` to `(j-1)*blocks + i`.
    Flip { blocks: usize, block_len: usize },
}

impl MeasurementOperator {
    pub fn dense(m: DenseMatrix) -> Self {
        MeasurementOperator::Dense(m)
    }

    pub fn kronecker(factors: Vec<DenseMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidSpec("Kronecker product needs at least one factor".into()));
        }
        Ok(MeasurementOperator::Kronecker(factors))
    }

    pub fn flip(blocks: usize, block_len: usize) -> Result<Self> {
        if blocks == 0 || block_len == 0 {
            return Err(Error::InvalidSpec("flip dimensions must be positive".into()));
        }
        Ok(MeasurementOperator::Flip { blocks, block_len })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            MeasurementOperator::Dense(m) => m.cols(),
            MeasurementOperator::Kronecker(fs) => fs.iter().map(|f| f.cols()).product(),
            MeasurementOperator::Flip { blocks, block_len } => blocks * block_len,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MeasurementOperator::Dense(m) => m.rows(),
            MeasurementOperator::Kronecker(fs) => fs.iter().map(|f| f.rows()).product(),
            MeasurementOperator::Flip { blocks, block_len } => blocks * block_len,
        }
    }

    /// Applies the operator. Kronecker products run factor-by-factor mode
    /// products (cost `sum_l m_l n_l * (other dims)`), never the full matrix.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "operator apply",
            });
        }
        match self {
            MeasurementOperator::Dense(m) => m.matvec(x),
            MeasurementOperator::Kronecker(fs) => Ok(kron_apply(fs, x, false)),
            MeasurementOperator::Flip { blocks, block_len } => {
                Ok(flip_apply(*blocks, *block_len, x))
            }
        }
    }

    /// Applies the transpose, matrix-free for Kronecker factors.
    pub fn adjoint_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: y.len(),
                context: "operator adjoint apply",
            });
        }
        match self {
            MeasurementOperator::Dense(m) => m.matvec_transposed(y),
            MeasurementOperator::Kronecker(fs) => Ok(kron_apply(fs, y, true)),
            // a permutation's transpose is its inverse: the opposite flip
            MeasurementOperator::Flip { blocks, block_len } => {
                Ok(flip_apply(*block_len, *blocks, y))
            }
        }
    }

    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_with_budget(DEFAULT_MATERIALIZE_BUDGET)
    }

    /// Expands the operator into an explicit dense matrix. Refuses when
    /// `rows * cols` exceeds the entry budget.
    pub fn materialize_with_budget(&self, budget: u128) -> Result<DenseMatrix> {
        let required = self.output_dim() as u128 * self.input_dim() as u128;
        if required > budget {
            return Err(Error::BudgetExceeded { required, budget });
        }
        match self {
            MeasurementOperator::Dense(m) => Ok(m.clone()),
            MeasurementOperator::Kronecker(fs) => {
                let mut acc = fs[0].clone();
                for f in &fs[1..] {
                    acc = kron_dense(&acc, f);
                }
                Ok(acc)
            }
            MeasurementOperator::Flip { blocks, block_len } => {
                let d = blocks * block_len;
                let mut entries = vec![0.0; d * d];
                for i in 0..*blocks {
                    for j in 0..*block_len {
                        let src = i * block_len + j;
                        let dst = j * blocks + i;
                        entries[dst * d + src] = 1.0;
                    }
                }
                DenseMatrix::new(d, d, entries)
            }
        }
    }

    /// Extracts the submatrix of the given 1-based columns without
    /// materializing. A Kronecker column factors into one column per factor:
    /// the flat column `(i-1)*n + j` of `A (x) B` is `a_i (x) b_j`.
    pub fn extract_columns(&self, flat_indices: &[usize]) -> Result<DenseMatrix> {
        let dim = self.input_dim();
        for &c in flat_indices {
            if c == 0 || c > dim {
                return Err(Error::InvalidSupport(format!(
                    "column index {c} outside [1, {dim}]"
                )));
            }
        }
        if flat_indices.is_empty() {
            return Err(Error::InvalidSupport("no columns requested".into()));
        }
        let rows = self.output_dim();
        let cols = flat_indices.len();
        let mut entries = vec![0.0; rows * cols];
        match self {
            MeasurementOperator::Dense(m) => {
                for (k, &c) in flat_indices.iter().enumerate() {
                    for r in 0..rows {
                        entries[r * cols + k] = m.get(r, c - 1);
                    }
                }
            }
            MeasurementOperator::Kronecker(fs) => {
                for (k, &c) in flat_indices.iter().enumerate() {
                    let col = kron_column(fs, c - 1);
                    for (r, v) in col.into_iter().enumerate() {
                        entries[r * cols + k] = v;
                    }
                }
            }
            MeasurementOperator::Flip { blocks, block_len } => {
                for (k, &c) in flat_indices.iter().enumerate() {
                    let src = c - 1;
                    let i = src / block_len;
                    let j = src % block_len;
                    entries[(j * blocks + i) * cols + k] = 1.0;
                }
            }
        }
        DenseMatrix::new(rows, cols, entries)
    }
}

fn flip_apply(blocks: usize, block_len: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for i in 0..blocks {
        for j in 0..block_len {
            y[j * blocks + i] = x[i * block_len + j];
        }
    }
    y
}

/// Mode-product chain: multiplies factor `l` (or its transpose) into tensor
/// mode `l`, last mode first. The tensor layout is row-major over
/// `(d_1, .., d_L)` with mode 1 slowest.
fn kron_apply(factors: &[DenseMatrix], x: &[f64], transposed: bool) -> Vec<f64> {
    let mut cur = x.to_vec();
    // dims of the current tensor; starts at the input dims, each step swaps
    // one mode's extent to the factor's output extent
    let mut dims: Vec<usize> = factors
        .iter()
        .map(|f| if transposed { f.rows() } else { f.cols() })
        .collect();
    for (l, f) in factors.iter().enumerate().rev() {
        let (out_extent, in_extent) = if transposed {
            (f.cols(), f.rows())
        } else {
            (f.rows(), f.cols())
        };
        let pre: usize = dims[..l].iter().product();
        let post: usize = dims[l + 1..].iter().product();
        let mut next = vec![0.0; pre * out_extent * post];
        for p in 0..pre {
            for c in 0..in_extent {
                let src_base = (p * in_extent + c) * post;
                for r in 0..out_extent {
                    let w = if transposed { f.get(c, r) } else { f.get(r, c) };
                    if w == 0.0 {
                        continue;
                    }
                    let dst_base = (p * out_extent + r) * post;
                    for q in 0..post {
                        next[dst_base + q] += w * cur[src_base + q];
                    }
                }
            }
        }
        dims[l] = out_extent;
        cur = next;
    }
    cur
}

fn kron_dense(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    let mut entries = vec![0.0; rows * cols];
    for ra in 0..a.rows() {
        for ca in 0..a.cols() {
            let w = a.get(ra, ca);
            for rb in 0..b.rows() {
                for cb in 0..b.cols() {
                    entries[(ra * b.rows() + rb) * cols + ca * b.cols() + cb] = w * b.get(rb, cb);
                }
            }
        }
    }
    DenseMatrix { rows, cols, entries }
}

/// 0-based flat column of a Kronecker product as the tensor product of the
/// factor columns.
fn kron_column(factors: &[DenseMatrix], flat_col: usize) -> Vec<f64> {
    // decompose the flat column into per-factor column indices, last fastest
    let mut rem = flat_col;
    let mut col_idx = vec![0usize; factors.len()];
    for (l, f) in factors.iter().enumerate().rev() {
        col_idx[l] = rem % f.cols();
        rem /= f.cols();
    }
    let mut col = vec![1.0];
    for (f, &c) in factors.iter().zip(&col_idx) {
        let fc = f.column(c);
        let mut next = Vec::with_capacity(col.len() * fc.len());
        for &v in &col {
            for &w in &fc {
                next.push(v * w);
            }
        }
        col = next;
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: usize, cols: usize, entries: &[f64]) -> DenseMatrix {
        DenseMatrix::new(rows, cols, entries.to_vec()).unwrap()
    }

    #[test]
    fn dense_matrix_invariants() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn flip_2x2_swaps_tensor_factors() {
        let op = MeasurementOperator::flip(2, 2).unwrap();
        let y = op.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn flip_adjoint_is_inverse() {
        let op = MeasurementOperator::flip(2, 3).unwrap();
        let x: Vec<f64> = (1..=6).map(|v| v as f64).collect();
        let y = op.apply(&x).unwrap();
        assert_eq!(op.adjoint_apply(&y).unwrap(), x);
        // unitarity
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        assert_eq!(nx, ny);
    }

    #[test]
    fn flip_materializes_to_permutation() {
        let op = MeasurementOperator::flip(2, 3).unwrap();
        let m = op.materialize().unwrap();
        assert_eq!((m.rows(), m.cols()), (6, 6));
        for r in 0..6 {
            let ones = (0..6).filter(|&c| m.get(r, c) == 1.0).count();
            let zeros = (0..6).filter(|&c| m.get(r, c) == 0.0).count();
            assert_eq!((ones, zeros), (1, 5));
        }
        for c in 0..6 {
            assert_eq!((0..6).map(|r| m.get(r, c)).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn kron_identity_factor_applies_blockwise() {
        let b = dm(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let op =
            MeasurementOperator::kronecker(vec![DenseMatrix::identity(2), b.clone()]).unwrap();
        let x = [1.0, 1.0, 2.0, -1.0];
        let y = op.apply(&x).unwrap();
        let y1 = b.matvec(&x[0..2]).unwrap();
        let y2 = b.matvec(&x[2..4]).unwrap();
        assert_eq!(&y[0..2], &y1[..]);
        assert_eq!(&y[2..4], &y2[..]);
    }

    #[test]
    fn kron_1x2_example() {
        let a = dm(1, 2, &[1.0, 2.0]);
        let b = dm(1, 2, &[1.0, 1.0]);
        let op = MeasurementOperator::kronecker(vec![a, b]).unwrap();
        let y = op.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        // A (x) B = [1 1 2 2]
        assert_eq!(y, vec![17.0]);
    }

    #[test]
    fn scalar_and_identity_materialization() {
        let op = MeasurementOperator::kronecker(vec![dm(1, 1, &[2.0]), dm(1, 1, &[3.0])]).unwrap();
        assert_eq!(op.materialize().unwrap().entries(), &[6.0]);
        let op = MeasurementOperator::kronecker(vec![
            DenseMatrix::identity(2),
            DenseMatrix::identity(3),
        ])
        .unwrap();
        assert_eq!(op.materialize().unwrap(), DenseMatrix::identity(6));
    }

    #[test]
    fn materialize_budget_refusal() {
        let op = MeasurementOperator::kronecker(vec![DenseMatrix::identity(100); 4]).unwrap();
        assert!(matches!(
            op.materialize(),
            Err(Error::BudgetExceeded { required: 10_000_000_000_000_000, .. })
        ));
    }

    #[test]
    fn dense_identity_adjoint_roundtrip() {
        let op = MeasurementOperator::dense(DenseMatrix::identity(4));
        let y = [1.0, -2.0, 0.5, 3.0];
        assert_eq!(op.adjoint_apply(&y).unwrap(), y.to_vec());
    }

    #[test]
    fn extract_all_columns_of_dense_equals_materialize() {
        let m = dm(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let op = MeasurementOperator::dense(m.clone());
        let all: Vec<usize> = (1..=3).collect();
        assert_eq!(op.extract_columns(&all).unwrap(), m);
    }

    #[test]
    fn extract_first_kron_column_is_tensor_of_first_columns() {
        let a = dm(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = dm(3, 2, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let op = MeasurementOperator::kronecker(vec![a.clone(), b.clone()]).unwrap();
        let got = op.extract_columns(&[1]).unwrap();
        for r in 0..2 {
            for t in 0..3 {
                assert_eq!(got.get(r * 3 + t, 0), a.get(r, 0) * b.get(t, 0));
            }
        }
    }

    #[test]
    fn extract_rejects_out_of_range() {
        let op = MeasurementOperator::dense(DenseMatrix::identity(3));
        assert!(op.extract_columns(&[0]).is_err());
        assert!(op.extract_columns(&[4]).is_err());
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let op = MeasurementOperator::dense(DenseMatrix::identity(3));
        assert!(matches!(op.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(op.adjoint_apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mat1_roundtrip_is_lossless() {
        let m = dm(2, 3, &[1.0, -0.25, 1e-17, 3.5e300, 2.0 / 3.0, 0.1]);
        let text = m.to_mat1();
        assert!(text.starts_with("MAT1 2 3\n"));
        assert_eq!(DenseMatrix::from_mat1(&text).unwrap(), m);
    }

    #[test]
    fn mat1_rejects_garbage() {
        assert!(DenseMatrix::from_mat1("MAT2 1 1\n3").is_err());
        assert!(DenseMatrix::from_mat1("MAT1 2 2\n1 2 3").is_err());
        assert!(DenseMatrix::from_mat1("MAT1 1 1\nxyz").is_err());
    }
}
