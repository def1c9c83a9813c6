//! Dense 2-D tensors in 64-bit floating point, row-major.
//!
//! This is the only array type in the crate: node features, parameter
//! matrices, attention vectors and per-edge scalars are all `Tensor`s
//! (column vectors are `n x 1`). Gradients are managed by the tape in
//! [`crate::tape`], not stored inline.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds a tensor from row-major data; the length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Convenience constructor for a column vector.
    pub fn column(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise accumulate: `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `self @ other`, with an inner-dimension check.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }
}

/// `out = a @ b` with shapes already validated. i-k-j loop order keeps the
/// inner updates contiguous in both `b` and `out`.
pub(crate) fn matmul_into(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.cols;
    debug_assert_eq!(b.rows, k);
    debug_assert_eq!(out.shape(), (m, n));
    let bd = &b.data;
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a @ b^T` for `a: m x n`, `b: k x n` -> `m x k` (used for `dA = G B^T`).
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.cols, b.cols);
    let (m, n) = a.shape();
    let k = b.rows;
    let mut out = Tensor::zeros(m, k);
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out.data[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    out
}

/// `a^T @ b` for `a: m x k`, `b: m x n` -> `k x n` (used for `dB = A^T G`).
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.rows, b.rows);
    let (m, k) = a.shape();
    let n = b.cols;
    let mut out = Tensor::zeros(k, n);
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix_is_matrix() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = Tensor::identity(2).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn row_times_column_is_dot_product() {
        let a = Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), (1, 1));
        assert_eq!(out.at(0, 0), 11.0);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "both shapes should be reported: {msg}");
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        // Independent route: direct dot product per output cell.
        let mut rng = crate::seeding::rng_from(7);
        use rand::Rng;
        for _ in 0..20 {
            let m = rng.random_range(1..=32);
            let k = rng.random_range(1..=32);
            let n = rng.random_range(1..=32);
            let a = Tensor::from_vec(m, k, (0..m * k).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap();
            let b = Tensor::from_vec(k, n, (0..k * n).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap();
            let fast = a.matmul(&b).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        acc += a.at(i, kk) * b.at(kk, j);
                    }
                    assert!((fast.at(i, j) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        // a^T @ b
        let tn = matmul_tn(&a, &b);
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = 0.0;
                for r in 0..3 {
                    acc += a.at(r, i) * b.at(r, j);
                }
                assert!((tn.at(i, j) - acc).abs() < 1e-12);
            }
        }
        // b @ a^T  (b: 3x4 doesn't fit; use fresh shapes)
        let g = Tensor::from_vec(2, 4, (0..8).map(|v| v as f64 * 0.5).collect()).unwrap();
        let c = Tensor::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.25).collect()).unwrap();
        let nt = matmul_nt(&g, &c);
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = 0.0;
                for kk in 0..4 {
                    acc += g.at(i, kk) * c.at(j, kk);
                }
                assert!((nt.at(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}
