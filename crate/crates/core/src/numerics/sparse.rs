use crate::error::{Error, Result};

use super::Tensor;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            debug_assert!(r < rows && c < cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut csr = Csr { rows, cols, indptr, indices, values };
        csr.drop_zeros();
        csr
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut indptr = vec![0; self.rows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr[r + 1] = indices.len();
        }
        *self = Csr { rows: self.rows, cols: self.cols, indptr, indices, values };
    }

    pub fn identity(n: usize) -> Csr {
        Csr {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    /// `self · x`
    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} · {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let n = x.cols();
        let xd = x.data();
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let o = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &xv) in o.iter_mut().zip(&xd[c * n..(c + 1) * n]) {
                    *o += v * xv;
                }
            }
        }
        Tensor::matrix(self.rows, n, out)
    }

    /// `selfᵀ · g`
    pub fn matmul_transposed(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.rows {
            return Err(Error::shape(
                "spmm_t",
                format!("({}x{})ᵀ · {}x{}", self.rows, self.cols, g.rows(), g.cols()),
            ));
        }
        let n = g.cols();
        let gd = g.data();
        let mut out = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let g_row = &gd[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &gv) in out[c * n..(c + 1) * n].iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
        Tensor::matrix(self.cols, n, out)
    }
}
