//! Minimal dense linear algebra: 2x2 matrices for the velocity-state Kalman
//! recursion and a row-major matrix for the LSTM weights. Dimensions in this
//! problem are tiny on one side (state dim 2) or only feed matrix-vector
//! products, so hand-rolled kernels beat pulling in a full linalg stack.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// out = self * x
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// out += self^T * x  (accumulating transpose-apply, used by backprop)
    pub fn matvec_t_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), out);
            }
        }
    }

    /// self += alpha * a * b^T  (rank-1 update, used by backprop weight grads)
    pub fn rank1_acc(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            let coeff = alpha * ar;
            if coeff != 0.0 {
                axpy(coeff, b, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }
}

/// Four-accumulator dot product. The fixed summation order keeps results
/// deterministic while breaking the serial dependency chain a naive
/// reduction would pin the CPU on.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric-friendly 2x2 matrix for the velocity-state covariance algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    /// [[a, b], [c, d]] as [a, b, c, d]
    pub m: [f64; 4],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { m: [0.0; 4] };
    pub const IDENTITY: Mat2 = Mat2 { m: [1.0, 0.0, 0.0, 1.0] };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [a, b, c, d] }
    }

    pub fn scale(s: f64) -> Self {
        Mat2::new(s, 0.0, 0.0, s)
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] + o.m[0],
            self.m[1] + o.m[1],
            self.m[2] + o.m[2],
            self.m[3] + o.m[3],
        )
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] - o.m[0],
            self.m[1] - o.m[1],
            self.m[2] - o.m[2],
            self.m[3] - o.m[3],
        )
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0] * o.m[0] + self.m[1] * o.m[2],
            self.m[0] * o.m[1] + self.m[1] * o.m[3],
            self.m[2] * o.m[0] + self.m[3] * o.m[2],
            self.m[2] * o.m[1] + self.m[3] * o.m[3],
        )
    }

    pub fn mul_scalar(&self, s: f64) -> Mat2 {
        Mat2::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(self.m[3] / d, -self.m[1] / d, -self.m[2] / d, self.m[0] / d))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0] * v[0] + self.m[1] * v[1],
            self.m[2] * v[0] + self.m[3] * v[1],
        ]
    }

    pub fn max_abs_diff(&self, o: &Mat2) -> f64 {
        self.m
            .iter()
            .zip(&o.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Principal square root of a symmetric PSD 2x2 matrix.
    ///
    /// Closed form: sqrt(M) = (M + sqrt(det) I) / sqrt(trace + 2 sqrt(det)),
    /// with the zero matrix mapped to zero. Inputs here are covariance
    /// matrices, so symmetry and positive semidefiniteness hold by
    /// construction; tiny negative round-off is clamped.
    pub fn sqrt_psd(&self) -> Mat2 {
        let tr = self.m[0] + self.m[3];
        let det = self.det().max(0.0);
        let s = det.sqrt();
        let t2 = (tr + 2.0 * s).max(0.0);
        let t = t2.sqrt();
        if t == 0.0 {
            return Mat2::ZERO;
        }
        self.add(&Mat2::scale(s)).mul_scalar(1.0 / t)
    }
}
