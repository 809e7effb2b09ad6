//! Compressed sparse row storage for real matrices.
//!
//! Entries are kept sorted by (row, column) with no duplicates and no
//! explicitly stored zeros, so iteration order is always index order and
//! norms cost O(nnz).

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).expect("identity is in range")
    }

    /// Build from (row, col, value) triplets in any order. Duplicates are
    /// summed; entries that end up exactly zero are dropped.
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut trips: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &trips {
            if r >= n_rows || c >= n_cols {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "sparse matrix".into(),
                    position: format!("({r}, {c})"),
                });
            }
        }
        trips.sort_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values = Vec::with_capacity(trips.len());
        let mut i = 0;
        while i < trips.len() {
            let (r, c, mut v) = trips[i];
            i += 1;
            while i < trips.len() && trips[i].0 == r && trips[i].1 == c {
                v += trips[i].2;
                i += 1;
            }
            if v != 0.0 {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps every nonzero of `dense`.
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (cols, vals) = self.row(row);
        match cols.binary_search(&col) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Column indices and values of one row.
    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[row]..self.indptr[row + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// All stored entries in row-major index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.n_cols, self.n_rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transpose stays in range")
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Entrywise absolute sum.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn mul_dense(&self, rhs: &Array2<f64>) -> Result<Array2<f64>> {
        if self.n_cols != rhs.nrows() {
            return Err(Error::dims(
                "sparse lhs",
                "dense rhs",
                format!("{}x{} times {:?}", self.n_rows, self.n_cols, rhs.dim()),
            ));
        }
        let mut out = Array2::zeros((self.n_rows, rhs.ncols()));
        for (r, c, v) in self.iter() {
            out.row_mut(r).scaled_add(v, &rhs.row(c));
        }
        Ok(out)
    }

    /// `lhs · self` for a dense left-hand side.
    pub fn left_mul_dense(&self, lhs: &Array2<f64>) -> Result<Array2<f64>> {
        if lhs.ncols() != self.n_rows {
            return Err(Error::dims(
                "dense lhs",
                "sparse rhs",
                format!("{:?} times {}x{}", lhs.dim(), self.n_rows, self.n_cols),
            ));
        }
        let mut out = Array2::zeros((lhs.nrows(), self.n_cols));
        for (r, c, v) in self.iter() {
            out.column_mut(c).scaled_add(v, &lhs.column(r));
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }
}
