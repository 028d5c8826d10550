use super::{numeric_policy, require_square, require_symmetric, LinalgError, Matrix};

/// LU factorisation with partial pivoting, `P·A = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Lu, LinalgError> {
        let n = require_square(a)?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let threshold = numeric_policy().singular_tol * a.max_abs().max(f64::MIN_POSITIVE) * n as f64;
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= threshold {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!("rhs of length {} for {n}x{n}", b.len())));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(LinalgError::DimensionMismatch(format!("rhs with {} rows for {n}x{n}", b.rows())));
        }
        let mut out = Matrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.col(j))?;
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.rows()).map(|i| self.lu[(i, i)]).product::<f64>() * self.sign
    }
}

pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    Lu::new(a)?.solve(b)
}

pub fn inverse(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = require_square(a)?;
    Lu::new(a)?.solve_matrix(&Matrix::identity(n))
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = require_square(a)?;
    require_symmetric(a)?;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Thin singular value decomposition `M = U·diag(σ)·Vᵀ`, σ descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::diag(&self.sigma);
        &(&self.u * &s) * &self.v.transpose()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd, LinalgError> {
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd { u: t.v, sigma: t.sigma, v: t.u });
    }
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = Matrix::identity(cols);
    let max_sweeps = numeric_policy().max_jacobi_sweeps;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    alpha += a[(i, p)] * a[(i, p)];
                    beta += a[(i, q)] * a[(i, q)];
                    gamma += a[(i, p)] * a[(i, q)];
                }
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..cols {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence("one-sided Jacobi SVD"));
    }

    let mut order: Vec<(usize, f64)> =
        (0..cols).map(|j| (j, (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));

    let mut u = Matrix::zeros(rows, cols);
    let mut vs = Matrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    let cutoff = order.first().map_or(0.0, |o| o.1) * f64::EPSILON * rows as f64;
    for (dst, &(src, s)) in order.iter().enumerate() {
        sigma.push(s);
        for i in 0..cols {
            vs[(i, dst)] = v[(i, src)];
        }
        if s > cutoff && s > 0.0 {
            for i in 0..rows {
                u[(i, dst)] = a[(i, src)] / s;
            }
        }
    }
    complete_orthonormal_columns(&mut u, &sigma, cutoff);
    Ok(Svd { u, sigma, v: vs })
}

/// Fills columns belonging to (numerically) zero singular values with
/// vectors orthonormal to the rest, via Gram-Schmidt on the standard basis.
fn complete_orthonormal_columns(u: &mut Matrix, sigma: &[f64], cutoff: f64) {
    let (rows, cols) = u.shape();
    for j in 0..cols {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            continue;
        }
        for e in 0..rows {
            let mut cand = vec![0.0; rows];
            cand[e] = 1.0;
            for k in 0..cols {
                if k == j || (k > j && !(sigma[k] > cutoff && sigma[k] > 0.0)) {
                    continue;
                }
                let dot: f64 = (0..rows).map(|i| u[(i, k)] * cand[i]).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= dot * u[(i, k)];
                }
            }
            let norm = cand.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, c) in cand.iter().enumerate() {
                    u[(i, j)] = c / norm;
                }
                break;
            }
        }
    }
}
