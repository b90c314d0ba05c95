/// Compressed-row square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..n {
            for c in 0..n {
                let v = dense[r * n + c];
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[r * self.n + self.cols[i]] = self.vals[i];
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.vals.iter_mut().for_each(|v| *v *= factor);
    }

    /// `out = A·x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[i] * x[self.cols[i]];
            }
            out[r] = acc;
        }
    }

    /// `out = A·X` for a row-major `n × width` block `X`.
    pub fn mul_block(&self, x: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n * width);
        out[..self.n * width].fill(0.0);
        for r in 0..self.n {
            let row = &mut out[r * width..(r + 1) * width];
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.vals[i];
                let src = &x[self.cols[i] * width..(self.cols[i] + 1) * width];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }
}
