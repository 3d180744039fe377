//! Dense vectors, images and compressed-sparse-row matrices.
//!
//! The projection matrix `R` is stored once in CSR form. Transposed products
//! are computed by scattering row contributions, so `Rᵀ` is never stored, and
//! the Gram operator `RᵀR` is always applied as a composition of the two.
//!
//! Operator applications (`matvec`, `rmatvec`, `normal_op`) treat a length
//! mismatch as a programming error and panic with both lengths in the
//! message. Constructors and I/O return [`Result`].

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Magic bytes opening a serialized [`SparseMatrix`].
pub const CSR_MAGIC: &[u8; 12] = b"SUPTOMO-CSR1";

/// A 2-D image stored row-major: pixel `(i, j)` (0-based) is `data[i * cols + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("shape", format!("{rows}x{cols} image has no pixels")));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "image data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Image { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(rows, cols, 0.0)
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "image shape must be positive");
        Image {
            data: vec![value; rows * cols],
            rows,
            cols,
        }
    }

    /// Wraps `data` with the shape of `self`.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            self.data.len(),
            "image data length {} does not match shape {}x{}",
            data.len(),
            self.rows,
            self.cols
        );
        Image {
            data,
            rows: self.rows,
            cols: self.cols,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Compressed sparse row matrix with strictly increasing column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::param("shape", format!("{n_rows}x{n_cols} matrix is empty")));
        }
        if row_ptr.len() != n_rows + 1 {
            return Err(Error::DimensionMismatch {
                what: "row_ptr",
                expected: n_rows + 1,
                found: row_ptr.len(),
            });
        }
        if col_idx.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "col_idx",
                expected: values.len(),
                found: col_idx.len(),
            });
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != values.len() {
            return Err(Error::Format(format!(
                "row_ptr must run from 0 to nnz={}, got {}..{}",
                values.len(),
                row_ptr[0],
                row_ptr[n_rows]
            )));
        }
        for (i, w) in row_ptr.windows(2).enumerate() {
            if w[0] > w[1] {
                return Err(Error::Format(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[w[0]..w[1]];
            if let Some(&c) = cols.iter().find(|&&c| c >= n_cols) {
                return Err(Error::Format(format!(
                    "row {i}: column index {c} out of range for {n_cols} columns"
                )));
            }
            if cols.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Format(format!(
                    "row {i}: column indices not strictly increasing"
                )));
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from per-row `(column, value)` lists. Entries are sorted
    /// by column and duplicates are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }

    /// Builds a matrix from a dense row-major array, dropping exact zeros.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                what: "dense matrix",
                expected: n_rows * n_cols,
                found: dense.len(),
            });
        }
        let rows = dense
            .chunks(n_cols.max(1))
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_rows(n_cols, rows)
    }

    pub fn identity(n: usize) -> Self {
        Self::new(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
            .expect("identity is well formed")
    }

    /// Row-major dense copy. Intended for small test problems only.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[i * self.n_cols + c] = v;
            }
        }
        out
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// `⟨row_i, x⟩`.
    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `‖row_i‖²`.
    #[inline]
    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.row(i).1.iter().map(|v| v * v).sum()
    }

    /// Writes the `SUPTOMO-CSR1` container: magic, little-endian u64 `n_rows`,
    /// `n_cols`, `nnz`, then `row_ptr` and `col_idx` as u64 and `values` as f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CSR_MAGIC)?;
        for n in [self.n_rows, self.n_cols, self.nnz()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &p in &self.row_ptr {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        for &c in &self.col_idx {
            w.write_all(&(c as u64).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 12];
        r.read_exact(&mut magic)?;
        if &magic != CSR_MAGIC {
            return Err(Error::Format("missing SUPTOMO-CSR1 magic".into()));
        }
        let n_rows = read_u64(&mut r)?;
        let n_cols = read_u64(&mut r)?;
        let nnz = read_u64(&mut r)?;
        let row_ptr = (0..=n_rows)
            .map(|_| read_u64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let col_idx = (0..nnz).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        Self::new(n_rows, n_cols, row_ptr, col_idx, values)
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    usize::try_from(u64::from_le_bytes(buf))
        .map_err(|_| Error::Format("u64 field does not fit in usize".into()))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// `Ax`, accumulated row by row in storage order.
pub fn matvec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    assert!(
        x.len() == a.n_cols,
        "matvec: matrix has {} columns but vector has length {}",
        a.n_cols,
        x.len()
    );
    (0..a.n_rows).map(|i| a.row_dot(i, x)).collect()
}

/// `Aᵀy`, computed by scattering each row; the transpose is never formed.
pub fn rmatvec(a: &SparseMatrix, y: &[f64]) -> Vec<f64> {
    assert!(
        y.len() == a.n_rows,
        "rmatvec: matrix has {} rows but vector has length {}",
        a.n_rows,
        y.len()
    );
    let mut out = vec![0.0; a.n_cols];
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c] += v * yi;
        }
    }
    out
}

/// `Aᵀ(Ax)`.
pub fn normal_op(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    assert!(
        x.len() == a.n_cols,
        "normal_op: matrix has {} columns but vector has length {}",
        a.n_cols,
        x.len()
    );
    rmatvec(a, &matvec(a, x))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y ← y + alpha·x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a - b`
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub: length mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + b`
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "add: length mismatch");
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
