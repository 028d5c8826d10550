use super::{cholesky, inverse, require_square, require_symmetric, spectral_radius, sym_eig, LinalgError, Lu, Matrix};

/// Solves `Fᵀ·P·F − ρ·P = −Q` for symmetric `P`.
///
/// The equation is vectorised (row-major) into an `n²×n²` linear system and
/// solved by LU. A positive definite solution for positive definite `Q`
/// exists iff `ρ(F)² < ρ`.
pub fn solve_discrete_lyapunov(f: &Matrix, q: &Matrix, rho: f64) -> Result<Matrix, LinalgError> {
    let n = require_square(f)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!("Q is {:?}, F is {n}x{n}", q.shape())));
    }
    require_symmetric(q)?;
    if !(rho > 0.0) {
        return Err(LinalgError::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let sr = spectral_radius(f)?;
    if sr * sr >= rho {
        return Err(LinalgError::LyapunovInfeasible { spectral_radius: sr, rho });
    }

    // (FᵀPF)_{ij} = Σ_{k,l} F_{ki} F_{lj} P_{kl}
    let nn = n * n;
    let mut sys = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                let fki = f[(k, i)];
                if fki == 0.0 {
                    continue;
                }
                for l in 0..n {
                    sys[(row, k * n + l)] += fki * f[(l, j)];
                }
            }
            sys[(row, row)] -= rho;
        }
    }
    let rhs: Vec<f64> = q.as_slice().iter().map(|v| -v).collect();
    let vec_p = Lu::new(&sys)?.solve(&rhs)?;
    let p = Matrix::from_vec(n, n, vec_p)?.symmetrize();
    Ok(p)
}

/// Smallest `δ` with `M ⪯ δ·P`, i.e. the largest eigenvalue of `L⁻¹·M·L⁻ᵀ`
/// where `P = L·Lᵀ`.
pub fn max_gen_eig(m: &Matrix, p: &Matrix) -> Result<f64, LinalgError> {
    let n = require_square(p)?;
    if m.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!("M is {:?}, P is {n}x{n}", m.shape())));
    }
    require_symmetric(m)?;
    let l = cholesky(p)?;
    let linv = inverse(&l)?;
    let whitened = (&(&linv * m) * &linv.transpose()).symmetrize();
    Ok(sym_eig(&whitened)?.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_dynamics_give_q() {
        let p = solve_discrete_lyapunov(&Matrix::zeros(3, 3), &Matrix::identity(3), 1.0).unwrap();
        assert!((&p - &Matrix::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn scalar_geometric_series() {
        let f = Matrix::identity(2).scale(0.5);
        let p = solve_discrete_lyapunov(&f, &Matrix::identity(2), 1.0).unwrap();
        // P = Σ 0.25^k = 4/3
        assert!((&p - &Matrix::identity(2).scale(4.0 / 3.0)).max_abs() < 1e-14);
    }

    #[test]
    fn random_stable_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let data = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let raw = Matrix::from_vec(4, 4, data).unwrap();
            let f = raw.scale(0.9 / spectral_radius(&raw).unwrap());
            let rho = rng.gen_range(0.85..1.2);
            let q = Matrix::identity(4);
            let p = solve_discrete_lyapunov(&f, &q, rho).unwrap();
            let resid = &(&(&(&f.transpose() * &p) * &f) - &p.scale(rho)) + &q;
            assert!(resid.max_abs() <= 1e-8 * q.max_abs());
            assert!(sym_eig(&p).unwrap().min() > 0.0);
        }
    }

    #[test]
    fn unstable_rate_is_infeasible() {
        let f = Matrix::identity(2).scale(0.9);
        assert!(matches!(
            solve_discrete_lyapunov(&f, &Matrix::identity(2), 0.8),
            Err(LinalgError::LyapunovInfeasible { .. })
        ));
    }

    #[test]
    fn generalized_eigenvalue_cases() {
        let p = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]);
        assert!((max_gen_eig(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((max_gen_eig(&p.scale(2.0), &p).unwrap() - 2.0).abs() < 1e-12);
        let d = max_gen_eig(&Matrix::diag(&[1.0, 8.0]), &Matrix::diag(&[1.0, 2.0])).unwrap();
        assert!((d - 4.0).abs() < 1e-12);
        assert!(max_gen_eig(&p, &Matrix::diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn generalized_eigenvalue_is_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = Matrix::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = Matrix::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let m = &a.transpose() * &a;
            let p = &(&b.transpose() * &b) + &Matrix::identity(3).scale(0.1);
            let delta = max_gen_eig(&m, &p).unwrap();
            let gap = sym_eig(&(&m - &p.scale(delta)).symmetrize()).unwrap().max();
            assert!(gap <= 1e-9 * m.max_abs().max(1.0));
            assert!(gap >= -1e-9 * m.max_abs().max(1.0) * delta.max(1.0));
        }
    }
}
