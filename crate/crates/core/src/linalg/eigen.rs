use num_complex::Complex64;

use super::{numeric_policy, require_square, require_symmetric, LinalgError, Matrix};

/// Symmetric eigendecomposition: ascending eigenvalues, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// `V·diag(f(λ))·Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let fl = f(lambda);
            if fl == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * fl;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_spectrum(|l| l)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(s: &Matrix) -> Result<SymEig, LinalgError> {
    let n = require_square(s)?;
    require_symmetric(s)?;
    let mut a = s.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = a.max_abs();
    let max_sweeps = numeric_policy().max_jacobi_sweeps;

    let mut converged = n <= 1 || scale == 0.0;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let off: f64 = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum();
        if off.sqrt() <= f64::EPSILON * 1e-2 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One last check: the final sweep may have finished the job.
        let off: f64 = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * a[(i, j)]).sum();
        if off.sqrt() > 1e-12 * scale {
            return Err(LinalgError::NoConvergence("cyclic Jacobi"));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Positive / negative / zero eigenvalue counts of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

pub fn inertia(s: &Matrix) -> Result<Inertia, LinalgError> {
    let eig = sym_eig(s)?;
    let tol = numeric_policy().zero_eig_tol * s.max_abs().max(f64::MIN_POSITIVE);
    let mut out = Inertia { positive: 0, negative: 0, zero: 0 };
    for v in eig.values {
        if v > tol {
            out.positive += 1;
        } else if v < -tol {
            out.negative += 1;
        } else {
            out.zero += 1;
        }
    }
    Ok(out)
}

/// Eigenvalues of a general real matrix, sorted by decreasing modulus.
/// Complex eigenvalues come in conjugate pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
    let n = require_square(m)?;
    if !m.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite matrix entries".into()));
    }
    let mut h = m.clone();
    reduce_to_hessenberg(&mut h);
    let mut values = hessenberg_qr(&mut h, n)?;
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    Ok(values)
}

pub fn spectral_radius(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?.first().map_or(0.0, |z| z.norm()))
}

/// Householder reduction to upper Hessenberg form (similarity transform).
fn reduce_to_hessenberg(h: &mut Matrix) {
    let n = h.rows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_sq: f64 = ((k + 1)..n).map(|i| h[(i, k)] * h[(i, k)]).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let alpha = if x0 > 0.0 { -alpha_sq.sqrt() } else { alpha_sq.sqrt() };
        let mut v = vec![0.0; n];
        v[k + 1] = x0 - alpha;
        for i in (k + 2)..n {
            v[i] = h[(i, k)];
        }
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        // H <- (I - 2vvᵀ/vᵀv) H (I - 2vvᵀ/vᵀv)
        for j in 0..n {
            let dot: f64 = ((k + 1)..n).map(|i| v[i] * h[(i, j)]).sum();
            let f = 2.0 * dot / vnorm_sq;
            for i in (k + 1)..n {
                h[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot: f64 = ((k + 1)..n).map(|j| h[(i, j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm_sq;
            for j in (k + 1)..n {
                h[(i, j)] -= f * v[j];
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
fn hessenberg_qr(h: &mut Matrix, n: usize) -> Result<Vec<Complex64>, LinalgError> {
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let max_iter = numeric_policy().max_qr_iterations;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += h[(i, j)].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // Look for a single small subdiagonal element.
            let mut l = nn;
            while l >= 1 {
                let lu = l as usize;
                let s = h[(lu - 1, lu - 1)].abs() + h[(lu, lu)].abs();
                let s = if s == 0.0 { anorm } else { s };
                if h[(lu, lu - 1)].abs() <= f64::EPSILON * s {
                    h[(lu, lu - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let nu = nn as usize;
            let x = h[(nu, nu)];
            if l == nn {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let y = h[(nu - 1, nu - 1)];
            let w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + if p >= 0.0 { z } else { -z };
                    wr[nu - 1] = x + z;
                    wr[nu] = if z != 0.0 { x - w / z } else { x + z };
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == max_iter {
                return Err(LinalgError::NoConvergence("Hessenberg QR"));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                let s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            let lu = l as usize;
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = h[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - rr - ss;
                r = h[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == lu {
                    break;
                }
                let u = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                h[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if k + 1 != nu { h[(k + 2, k - 1)] } else { 0.0 };
                    let xx = p.abs() + q.abs() + r.abs();
                    if xx != 0.0 {
                        p /= xx;
                        q /= xx;
                        r /= xx;
                    }
                    x = xx;
                }
                let s = (p * p + q * q + r * r).sqrt();
                let s = if p < 0.0 { -s } else { s };
                if s != 0.0 {
                    if k == m {
                        if l as usize != m {
                            h[(k, k - 1)] = -h[(k, k - 1)];
                        }
                    } else {
                        h[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    let xx = p / s;
                    let yy = q / s;
                    let zz = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = h[(k, j)] + q * h[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= pp * zz;
                        }
                        h[(k + 1, j)] -= pp * yy;
                        h[(k, j)] -= pp * xx;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in lu..=mmin {
                        let mut pp = xx * h[(i, k)] + yy * h[(i, k + 1)];
                        if k + 1 != nu {
                            pp += zz * h[(i, k + 2)];
                            h[(i, k + 2)] -= pp * r;
                        }
                        h[(i, k + 1)] -= pp * q;
                        h[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, n, data).unwrap()
    }

    #[test]
    fn identity_eigenvalues() {
        let ev = eigenvalues(&Matrix::identity(3)).unwrap();
        assert!(ev.iter().all(|z| (z.re - 1.0).abs() < 1e-14 && z.im == 0.0));
    }

    #[test]
    fn companion_of_quadratic() {
        // x^2 - 5x + 6 = (x-2)(x-3)
        let c = Matrix::from_rows(&[[5.0, -6.0], [1.0, 0.0]]);
        let ev = eigenvalues(&c).unwrap();
        assert!((ev[0].re - 3.0).abs() < 1e-12 && (ev[1].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_complex_pair() {
        let th: f64 = 0.3;
        let r = Matrix::from_rows(&[[th.cos(), -th.sin(), 0.0], [th.sin(), th.cos(), 0.0], [0.0, 0.0, 0.5]]);
        let ev = eigenvalues(&r).unwrap();
        assert!((ev[0].norm() - 1.0).abs() < 1e-12 && (ev[0].im.abs() - th.sin()).abs() < 1e-12);
        assert!((ev[0].im + ev[1].im).abs() < 1e-12);
        assert!((ev[2].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn characteristic_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=8 {
            let m = random_matrix(&mut rng, n);
            let ev = eigenvalues(&m).unwrap();
            assert_eq!(ev.len(), n);
            // trace and determinant are the sum and product of the eigenvalues
            let sum: Complex64 = ev.iter().sum();
            assert!((sum.re - m.trace()).abs() < 1e-9 && sum.im.abs() < 1e-9);
            let prod: Complex64 = ev.iter().product();
            let det = super::super::Lu::new(&m).unwrap().determinant();
            assert!((prod.re - det).abs() < 1e-9 && prod.im.abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn similar_matrices_share_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 6);
            let t = &random_matrix(&mut rng, 6) + &Matrix::identity(6).scale(3.0);
            let tinv = super::super::inverse(&t).unwrap();
            let sim = &(&tinv * &m) * &t;
            let a = eigenvalues(&m).unwrap();
            let b = eigenvalues(&sim).unwrap();
            for z in &a {
                let nearest = b.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
                assert!(nearest <= 1e-6 * z.norm().max(1.0), "{z} unmatched");
            }
        }
    }

    #[test]
    fn sym_eig_hand_cases() {
        let d = sym_eig(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(d.values, vec![1.0, 2.0, 3.0]);
        let s = sym_eig(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert!((s.values[0] + 1.0).abs() < 1e-14 && (s.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_eig_reconstruction_and_gram_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=12 {
            let a = random_matrix(&mut rng, n);
            let s = &a.transpose() * &a;
            let e = sym_eig(&s).unwrap();
            assert!(e.min() >= -1e-10);
            assert!((&e.reconstruct() - &s).max_abs() <= 1e-9 * s.max_abs());
            let vtv = &e.vectors.transpose() * &e.vectors;
            assert!((&vtv - &Matrix::identity(n)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&m), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn inertia_counts() {
        let i = inertia(&Matrix::diag(&[2.0, -1.0, 0.0, 5.0])).unwrap();
        assert_eq!(i, Inertia { positive: 2, negative: 1, zero: 1 });
    }
}
