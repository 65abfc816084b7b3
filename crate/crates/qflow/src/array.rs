//! Dense row-major `f64` arrays of rank ≤ 2.
//!
//! A batch of n points in ℝᵈ is an `(n, d)` array; scalars are `(1, 1)`.
//! The only broadcasting rule is adding a `(1, c)` row to every row of an
//! `(n, c)` array (bias addition). All shape violations panic with the op
//! name and both shapes.

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Array { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Array { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec: {} values for shape ({rows}, {cols})", data.len());
        Array { rows, cols, data }
    }

    /// Single row vector `(1, d)`.
    pub fn from_row(v: &[f64]) -> Self {
        Array { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows: empty row list");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "from_rows: ragged rows ({} vs {cols})", r.len());
            data.extend_from_slice(r);
        }
        Array { rows: rows.len(), cols, data }
    }

    /// d×d identity.
    pub fn identity(n: usize) -> Self {
        let mut a = Array::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
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

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// New array holding the given subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Array {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Array { rows: idx.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Array, op: &str, f: impl Fn(f64, f64) -> f64) -> Array {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Array { rows: self.rows, cols: self.cols, data }
    }

    pub fn add(&self, other: &Array) -> Array {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Array {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Array) -> Array {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Array {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch {:?} vs {:?}", self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// `(n, c) + (1, c)`: adds `row` to every row.
    pub fn add_row_broadcast(&self, row: &Array) -> Array {
        assert!(
            row.rows == 1 && row.cols == self.cols,
            "add_row_broadcast: shape mismatch {:?} vs {:?}",
            self.shape(),
            row.shape()
        );
        let mut out = self.clone();
        for i in 0..self.rows {
            let base = i * self.cols;
            for j in 0..self.cols {
                out.data[base + j] += row.data[j];
            }
        }
        out
    }

    /// Column sums as a `(1, c)` row (adjoint of row broadcast).
    pub fn col_sums(&self) -> Array {
        let mut out = Array::zeros(1, self.cols);
        for i in 0..self.rows {
            let base = i * self.cols;
            for j in 0..self.cols {
                out.data[j] += self.data[base + j];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Σᵢⱼ aᵢⱼ² over the whole array.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn transpose(&self) -> Array {
        let mut out = Array::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`, shapes `(n, k) · (k, m)`.
    pub fn matmul(&self, other: &Array) -> Array {
        assert_eq!(
            self.cols, other.rows,
            "matmul: shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Array::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for j in 0..m {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, shapes `(n, k) · (m, k)ᵀ → (n, m)`.
    pub fn matmul_bt(&self, other: &Array) -> Array {
        assert_eq!(
            self.cols, other.cols,
            "matmul_bt: shape mismatch {:?} x {:?}^T",
            self.shape(),
            other.shape()
        );
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Array::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a_row[p] * b_row[p];
                }
                out.data[i * m + j] = acc;
            }
        }
        out
    }

    /// `selfᵀ · other`, shapes `(k, n)ᵀ · (k, m) → (n, m)`.
    pub fn matmul_at(&self, other: &Array) -> Array {
        assert_eq!(
            self.rows, other.rows,
            "matmul_at: shape mismatch {:?}^T x {:?}",
            self.shape(),
            other.shape()
        );
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Array::zeros(n, m);
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = a_row[i];
                let o_row = &mut out.data[i * m..(i + 1) * m];
                for j in 0..m {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// Horizontal concatenation `(n, c1) ++ (n, c2) → (n, c1+c2)`.
    pub fn concat_cols(&self, other: &Array) -> Array {
        assert_eq!(
            self.rows, other.rows,
            "concat_cols: row mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Array { rows: self.rows, cols, data }
    }

    /// Columns `start..end` as a new array.
    pub fn slice_cols(&self, start: usize, end: usize) -> Array {
        assert!(start <= end && end <= self.cols, "slice_cols: {start}..{end} out of {} cols", self.cols);
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Array { rows: self.rows, cols, data }
    }

    /// Mean of each row's squared Euclidean norm: (1/n) Σᵢ ‖rowᵢ‖².
    pub fn mean_row_sq_norm(&self) -> f64 {
        self.sq_norm() / self.rows as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_by_hand() {
        let a = Array::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_bt_equals_matmul_with_transpose() {
        let a = Array::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 5.0, -6.0]);
        let b = Array::from_vec(4, 3, vec![7.0, 8.0, 9.0, 1.0, -1.0, 2.0, 0.0, 3.0, 4.0, -2.0, 1.0, 1.0]);
        assert_eq!(a.matmul_bt(&b), a.matmul(&b.transpose()));
    }

    #[test]
    fn matmul_at_equals_transpose_matmul() {
        let a = Array::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::from_vec(3, 4, (0..12).map(|v| v as f64).collect());
        assert_eq!(a.matmul_at(&b), a.transpose().matmul(&b));
    }

    #[test]
    fn row_broadcast_and_col_sums_are_adjoint_shapes() {
        let x = Array::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::from_row(&[10.0, 20.0]);
        let y = x.add_row_broadcast(&b);
        assert_eq!(y.row(2), &[15.0, 26.0]);
        assert_eq!(y.col_sums().data(), &[9.0 + 30.0, 12.0 + 60.0]);
    }

    #[test]
    #[should_panic(expected = "matmul: shape mismatch")]
    fn matmul_shape_mismatch_panics() {
        let a = Array::zeros(2, 3);
        let b = Array::zeros(2, 3);
        let _ = a.matmul(&b);
    }

    #[test]
    fn select_rows_copies_in_order() {
        let x = Array::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = x.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
    }
}
