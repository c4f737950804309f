//! Householder QR for tall, column-oriented design matrices.

/// Squared partial norm of a column, relative to its raw squared norm, below
/// which the column is treated as a linear combination of earlier columns.
pub const COLLINEARITY_TOL: f64 = 1e-12;

/// Thin QR factorization `A = Q R` of an `n x p` matrix stored as columns.
#[derive(Debug, Clone)]
pub struct Qr {
    n: usize,
    /// Householder vectors, `reflectors[k]` acts on rows `k..n`.
    reflectors: Vec<Vec<f64>>,
    /// Upper triangular factor, row-major `p x p`.
    r: Vec<f64>,
    p: usize,
}

impl Qr {
    /// Factor the columns of `a`. On rank deficiency returns the indices of
    /// every column whose partial norm, after projecting out the columns
    /// before it, falls below [`COLLINEARITY_TOL`].
    pub fn factor(columns: &[Vec<f64>]) -> Result<Self, Vec<usize>> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        debug_assert!(columns.iter().all(|c| c.len() == n));
        if n < p {
            return Err((n..p).collect());
        }
        let mut work: Vec<Vec<f64>> = columns.to_vec();
        let mut reflectors = Vec::with_capacity(p);
        let mut r = vec![0.0; p * p];
        let mut dependent = Vec::new();

        for j in 0..p {
            let raw_norm2: f64 = columns[j].iter().map(|v| v * v).sum();
            let k = reflectors.len();
            let tail_norm2: f64 = work[j][k..].iter().map(|v| v * v).sum();
            if raw_norm2 == 0.0 || tail_norm2 <= COLLINEARITY_TOL * raw_norm2 {
                dependent.push(j);
                continue;
            }
            let v = householder(&work[j][k..], tail_norm2);
            for col in work.iter_mut().skip(j) {
                apply_reflector(&v, &mut col[k..]);
            }
            // row k of R; only read back when the design has full rank (k == j)
            for (i, col) in work.iter().enumerate().skip(j) {
                r[k * p + i] = col[k];
            }
            reflectors.push(v);
        }
        if !dependent.is_empty() {
            return Err(dependent);
        }
        Ok(Qr { n, reflectors, r, p })
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    /// Least-squares solve. Returns coefficients and residuals; residuals are
    /// formed through `Q` so they are orthogonal to the design to rounding.
    pub fn solve(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(y.len(), self.n);
        let mut qty = y.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            apply_reflector(v, &mut qty[k..]);
        }
        let mut coef = vec![0.0; self.p];
        for i in (0..self.p).rev() {
            let row = &self.r[i * self.p..(i + 1) * self.p];
            let acc = qty[i] - (i + 1..self.p).map(|j| row[j] * coef[j]).sum::<f64>();
            coef[i] = acc / row[i];
        }
        let mut resid = qty;
        for v in resid.iter_mut().take(self.p) {
            *v = 0.0;
        }
        for (k, v) in self.reflectors.iter().enumerate().rev() {
            apply_reflector(v, &mut resid[k..]);
        }
        (coef, resid)
    }

    /// Diagonal of `(A'A)^{-1} = R^{-1} R^{-T}`.
    pub fn gram_inverse_diag(&self) -> Vec<f64> {
        let p = self.p;
        // rows of R^{-1}
        let mut rinv = vec![0.0; p * p];
        for col in 0..p {
            for i in (0..=col).rev() {
                let mut acc = if i == col { 1.0 } else { 0.0 };
                for j in i + 1..=col {
                    acc -= self.r[i * p + j] * rinv[j * p + col];
                }
                rinv[i * p + col] = acc / self.r[i * p + i];
            }
        }
        (0..p)
            .map(|i| (i..p).map(|j| rinv[i * p + j] * rinv[i * p + j]).sum())
            .collect()
    }
}

fn householder(x: &[f64], norm2: f64) -> Vec<f64> {
    let norm = norm2.sqrt();
    let mut v = x.to_vec();
    let alpha = if x[0] >= 0.0 { -norm } else { norm };
    v[0] -= alpha;
    let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for a in &mut v {
        *a /= vnorm;
    }
    v
}

#[inline]
fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let s = 2.0 * dot;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solves_exact_system() {
        let ones = vec![1.0; 4];
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let qr = Qr::factor(&[ones, x]).unwrap();
        let (coef, resid) = qr.solve(&y);
        assert_abs_diff_eq!(coef[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef[1], 3.0, epsilon = 1e-12);
        assert!(resid.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn reports_all_dependent_columns() {
        let ones = vec![1.0; 5];
        let a = vec![1.0, 2.0, 3.0, 4.0, 6.0];
        let constant = vec![3.0; 5];
        let b = vec![2.0, 1.0, 0.0, 5.0, 1.0];
        let twice_a: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let err = Qr::factor(&[ones, a, constant, b, twice_a]).unwrap_err();
        assert_eq!(err, vec![2, 4]);
    }

    #[test]
    fn gram_inverse_matches_closed_form() {
        // simple regression: var(slope) factor is 1 / Sxx
        let x = vec![1.0, 2.0, 4.0, 7.0];
        let m = x.iter().sum::<f64>() / 4.0;
        let sxx: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let qr = Qr::factor(&[vec![1.0; 4], x]).unwrap();
        assert_abs_diff_eq!(qr.gram_inverse_diag()[1], 1.0 / sxx, epsilon = 1e-12);
    }
}
