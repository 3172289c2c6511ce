//! Uniform B-spline bases and difference penalties.

use nalgebra::DMatrix;

/// B-spline basis on equally spaced knots, extended past both ends of the
/// domain so every function has full support shape.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
    lo: f64,
    hi: f64,
}

impl BSplineBasis {
    pub fn uniform(n_interior: usize, degree: usize, lo: f64, hi: f64) -> Self {
        let h = (hi - lo) / (n_interior + 1) as f64;
        let count = n_interior + 2 + 2 * degree;
        let knots = (0..count).map(|j| lo + (j as f64 - degree as f64) * h).collect();
        Self { knots, degree, lo, hi }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Index of the first non-zero function at `x` and the `degree + 1`
    /// non-zero values from there. `x` is clamped to the domain.
    pub fn nonzero(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let t = &self.knots;
        let x = x.clamp(self.lo, self.hi);
        let last_span = self.n_basis() - 1;
        let mut span = p;
        while span < last_span && x >= t[span + 1] {
            span += 1;
        }
        // Cox-de Boor recursion, triangular form
        let mut values = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - p, values)
    }

    pub fn row(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_basis()];
        let (first, values) = self.nonzero(x);
        row[first..first + values.len()].copy_from_slice(&values);
        row
    }

    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.n_basis());
        for (i, &x) in xs.iter().enumerate() {
            let (first, values) = self.nonzero(x);
            for (k, v) in values.into_iter().enumerate() {
                m[(i, first + k)] = v;
            }
        }
        m
    }
}

/// `DᵀD` for the `order`-th difference operator on `q` coefficients.
pub fn difference_penalty(q: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(q, q);
    for _ in 0..order {
        let rows = d.nrows();
        d = DMatrix::from_fn(rows - 1, q, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d.transpose() * d
}
