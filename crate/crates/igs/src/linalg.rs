//! Small dense linear algebra used by the exact solvers: LU with partial
//! pivoting and Cholesky. Sizes stay in the low thousands, so dense
//! factorizations are the simple and reliable choice.

/// Row-major dense square matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Solve `A x = b` by LU with partial pivoting; `None` for (numerically)
/// singular systems. Consumes the matrix.
pub fn solve_lu(mut a: DenseMatrix, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.n;
    assert_eq!(b.len(), n);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a.at(perm[col], col).abs();
        for row in col + 1..n {
            let v = a.at(perm[row], col).abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        perm.swap(col, pivot);
        let prow = perm[col];
        let pval = a.at(prow, col);
        for row in col + 1..n {
            let r = perm[row];
            let factor = a.at(r, col) / pval;
            if factor != 0.0 {
                *a.at_mut(r, col) = factor;
                for j in col + 1..n {
                    *a.at_mut(r, j) -= factor * a.at(prow, j);
                }
                b[r] -= factor * b[prow];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let r = perm[col];
        let mut acc = b[r];
        for j in col + 1..n {
            acc -= a.at(r, j) * x[j];
        }
        x[col] = acc / a.at(r, col);
    }
    Some(x)
}

/// Cholesky factor of a symmetric positive definite matrix (lower
/// triangular, in place); `None` when the matrix is not SPD.
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &DenseMatrix) -> Option<Cholesky> {
        let n = a.n;
        let mut l = a.data.clone();
        for j in 0..n {
            let mut diag = l[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if diag <= 0.0 {
                return None;
            }
            let diag = diag.sqrt();
            l[j * n + j] = diag;
            for i in j + 1..n {
                let mut v = l[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / diag;
            }
        }
        // Zero the strict upper triangle for cleanliness.
        for i in 0..n {
            for j in i + 1..n {
                l[i * n + j] = 0.0;
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solve `A x = b` given the factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc -= self.l[i * n + k] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc -= self.l[k * n + i] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        y
    }
}
