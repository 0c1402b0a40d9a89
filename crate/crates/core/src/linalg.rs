//! Small dense linear algebra used by the solvers: symmetric factorization
//! with diagonal pivoting and a square LU solve.
//!
//! Matrices are row-major `Vec<f64>` with an explicit dimension. The
//! problems here are tiny (a few dozen columns at most), so nothing is
//! blocked or vectorized.

/// Relative pivot threshold for declaring a symmetric matrix rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Failure of a pivoted factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deficient {
    /// Original index of the column whose pivot fell under the threshold.
    pub column: usize,
    pub rank: usize,
}

/// Cholesky factorization `P A P' = L L'` of a symmetric positive
/// semidefinite matrix, computed on the diagonally equilibrated matrix.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    dim: usize,
    lower: Vec<f64>,
    perm: Vec<usize>,
    scale: Vec<f64>,
}

impl PivotedCholesky {
    /// Factors `a` (row-major `dim x dim`). Pivots are compared against
    /// `rel_tol` times the largest pivot of the equilibrated matrix.
    pub fn factor(a: &[f64], dim: usize, rel_tol: f64) -> Result<Self, Deficient> {
        debug_assert_eq!(a.len(), dim * dim);
        let mut scale = vec![0.0; dim];
        for i in 0..dim {
            let d = a[i * dim + i];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Deficient { column: i, rank: 0 });
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut work = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                work[i * dim + j] = a[i * dim + j] * scale[i] * scale[j];
            }
        }
        let mut perm: Vec<usize> = (0..dim).collect();
        let mut largest = 0.0_f64;
        for k in 0..dim {
            let mut piv = k;
            for j in (k + 1)..dim {
                if work[j * dim + j] > work[piv * dim + piv] {
                    piv = j;
                }
            }
            let pivot = work[piv * dim + piv];
            if k == 0 {
                largest = pivot;
            }
            if !(pivot > rel_tol * largest) || !pivot.is_finite() {
                return Err(Deficient { column: perm[piv], rank: k });
            }
            if piv != k {
                swap_symmetric(&mut work, dim, k, piv);
                perm.swap(k, piv);
            }
            let root = pivot.sqrt();
            work[k * dim + k] = root;
            for i in (k + 1)..dim {
                work[i * dim + k] /= root;
            }
            for i in (k + 1)..dim {
                let lik = work[i * dim + k];
                if lik == 0.0 {
                    continue;
                }
                for j in (k + 1)..=i {
                    work[i * dim + j] -= lik * work[j * dim + k];
                }
            }
            // keep the trailing block symmetric for the next pivot search
            for i in (k + 1)..dim {
                for j in (k + 1)..i {
                    work[j * dim + i] = work[i * dim + j];
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                work[i * dim + j] = 0.0;
            }
        }
        Ok(Self { dim, lower: work, perm, scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        // A = S^{-1} P' L L' P S^{-1}
        let mut t: Vec<f64> = (0..n).map(|k| b[self.perm[k]] * self.scale[self.perm[k]]).collect();
        for i in 0..n {
            let mut acc = t[i];
            for j in 0..i {
                acc -= self.lower[i * n + j] * t[j];
            }
            t[i] = acc / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = t[i];
            for j in (i + 1)..n {
                acc -= self.lower[j * n + i] * t[j];
            }
            t[i] = acc / self.lower[i * n + i];
        }
        for k in 0..n {
            let orig = self.perm[k];
            b[orig] = t[k] * self.scale[orig];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut out = b.to_vec();
        self.solve_in_place(&mut out);
        out
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.dim;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        symmetrize(&mut inv, n);
        inv
    }
}

fn swap_symmetric(a: &mut [f64], n: usize, p: usize, q: usize) {
    for j in 0..n {
        a.swap(p * n + j, q * n + j);
    }
    for i in 0..n {
        a.swap(i * n + p, i * n + q);
    }
}

/// Replaces `a` with `(a + a') / 2`.
pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when a pivot drops under `rel_tol` times the
/// largest absolute entry of `a`.
pub fn lu_solve(a: &[f64], b: &[f64], n: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(scale > 0.0) {
        return None;
    }
    for k in 0..n {
        let mut piv = k;
        for i in (k + 1)..n {
            if m[i * n + k].abs() > m[piv * n + k].abs() {
                piv = i;
            }
        }
        if !(m[piv * n + k].abs() > rel_tol * scale) {
            return None;
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            x.swap(k, piv);
        }
        let d = m[k * n + k];
        for i in (k + 1)..n {
            let f = m[i * n + k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i * n + j] -= f * m[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= m[i * n + j] * x[j];
        }
        x[i] = acc / m[i * n + i];
    }
    Some(x)
}

/// `a * b` for row-major square matrices.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}
