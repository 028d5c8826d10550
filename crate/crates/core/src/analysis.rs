//! Closed-loop stability analysis for resetting controllers.
//!
//! A certificate `(P, μ, δ, ϵ, ε, T)` witnesses
//! `P ≻ ϵI`, `FᵀPF ⪯ (1+μ)P`, `F̃ᵀPF̃ ⪯ δP` and `δ(1+μ)^{T−1} < ε`,
//! which together make the loop with resets every `T` steps globally
//! asymptotically stable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller_runtime::ControllerMatrices;
use crate::linalg::{max_gen_eig, solve_discrete_lyapunov, spectral_radius, sym_eig, LinalgError, Matrix};
use crate::plant::PlantModel;

/// Default `ε`, just below one.
pub const DEFAULT_EPS_BAR: f64 = 1.0 - 1e-9;
/// Relative inflation applied to the computed minimal `δ` so the reset condition holds strictly.
pub const DELTA_INFLATION: f64 = 1e-9;
pub const DEFAULT_MU_GRID_POINTS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `F = [A+BD_cC, BC_c; B_cC, A_c]`, `F̃ = H·F` with `H = diag(I, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMatrix {
    pub f: Matrix,
    pub f_tilde: Matrix,
    pub h: Matrix,
    pub n_x: usize,
    pub n_c: usize,
}

impl ClosedLoopMatrix {
    /// Wraps an arbitrary square `F` whose first `n_x` coordinates survive a reset.
    pub fn from_f(f: Matrix, n_x: usize) -> Result<Self, AnalysisError> {
        if !f.is_square() || n_x > f.rows() {
            return Err(AnalysisError::Dimension(format!("F is {:?}, n_x = {n_x}", f.shape())));
        }
        let n = f.rows();
        let mut h = Matrix::zeros(n, n);
        for i in 0..n_x {
            h[(i, i)] = 1.0;
        }
        let f_tilde = &h * &f;
        Ok(ClosedLoopMatrix { f, f_tilde, h, n_x, n_c: n - n_x })
    }

    pub fn dim(&self) -> usize {
        self.f.rows()
    }
}

pub fn build_closed_loop(plant: &PlantModel, ctrl: &ControllerMatrices) -> Result<ClosedLoopMatrix, AnalysisError> {
    ctrl.check_plant(plant).map_err(|e| AnalysisError::Dimension(e.to_string()))?;
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let top_left = a + &(&(b * ctrl.d_c()) * c);
    let top_right = b * ctrl.c_c();
    let bottom_left = ctrl.b_c() * c;
    let f = Matrix::block(&[&[&top_left, &top_right], &[&bottom_left, ctrl.a_c()]]);
    ClosedLoopMatrix::from_f(f, plant.n_x())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    #[serde(rename = "P")]
    pub p: Matrix,
    pub mu: f64,
    pub delta: f64,
    pub eps_small: f64,
    pub eps_bar: f64,
    #[serde(rename = "T")]
    pub t: u64,
}

/// Outcome of one of the four certificate conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// Signed slack: non-negative when the condition holds exactly.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateVerdict {
    /// `P ≻ ϵI`: margin `λ_min(P − ϵI)`.
    pub positive_definite: Condition,
    /// `FᵀPF ⪯ (1+μ)P`: margin `−λ_max(FᵀPF − (1+μ)P)`.
    pub contraction: Condition,
    /// `F̃ᵀPF̃ ⪯ δP`: margin `−λ_max(F̃ᵀPF̃ − δP)`.
    pub reset_gain: Condition,
    /// `δ(1+μ)^{T−1} < ε`: margin `ε − δ(1+μ)^{T−1}`.
    pub horizon: Condition,
    /// Field-range problems (μ outside `[−1,0)`, `δ < 1`, ...).
    pub range_errors: Vec<String>,
}

impl CertificateVerdict {
    pub fn passed(&self) -> bool {
        self.range_errors.is_empty()
            && self.positive_definite.passed
            && self.contraction.passed
            && self.reset_gain.passed
            && self.horizon.passed
    }

    /// Names of the failed conditions.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = vec![];
        if !self.range_errors.is_empty() {
            out.push("ranges");
        }
        for (name, c) in [
            ("positive_definite", self.positive_definite),
            ("contraction", self.contraction),
            ("reset_gain", self.reset_gain),
            ("horizon", self.horizon),
        ] {
            if !c.passed {
                out.push(name);
            }
        }
        out
    }
}

fn range_errors(cert: &StabilityCertificate) -> Vec<String> {
    let mut errs = vec![];
    if !(-1.0..0.0).contains(&cert.mu) {
        errs.push(format!("mu = {} not in [-1, 0)", cert.mu));
    }
    if !(cert.delta >= 1.0) || !cert.delta.is_finite() {
        errs.push(format!("delta = {} not in [1, inf)", cert.delta));
    }
    if !(cert.eps_small > 0.0) {
        errs.push(format!("eps_small = {} not positive", cert.eps_small));
    }
    if !(cert.eps_bar > 0.0 && cert.eps_bar < 1.0) {
        errs.push(format!("eps_bar = {} not in (0, 1)", cert.eps_bar));
    }
    if cert.t == 0 {
        errs.push("T must be positive".into());
    }
    if cert.p.asymmetry() > 1e-9 * cert.p.max_abs().max(1.0) {
        errs.push("P is not symmetric".into());
    }
    errs
}

fn condition(margin: f64, tol: f64) -> Condition {
    Condition { margin, passed: margin >= -tol }
}

fn congruence(f: &Matrix, p: &Matrix) -> Matrix {
    (&(&f.transpose() * p) * f).symmetrize()
}

/// Checks each condition with an absolute eigenvalue tolerance `tol`.
pub fn check_certificate(
    cl: &ClosedLoopMatrix,
    cert: &StabilityCertificate,
    tol: f64,
) -> Result<CertificateVerdict, AnalysisError> {
    let n = cl.dim();
    if cert.p.shape() != (n, n) {
        return Err(AnalysisError::Dimension(format!("P is {:?}, F is {n}x{n}", cert.p.shape())));
    }
    let p = cert.p.symmetrize();
    let pd = sym_eig(&(&p - &Matrix::identity(n).scale(cert.eps_small)))?.min();
    let contraction = -sym_eig(&(&congruence(&cl.f, &p) - &p.scale(1.0 + cert.mu)))?.max();
    let reset_gain = -sym_eig(&(&congruence(&cl.f_tilde, &p) - &p.scale(cert.delta)))?.max();
    let exponent = cert.t.saturating_sub(1);
    let horizon = cert.eps_bar - cert.delta * (1.0 + cert.mu).powf(exponent as f64);
    Ok(CertificateVerdict {
        positive_definite: condition(pd, tol),
        contraction: condition(contraction, tol),
        reset_gain: condition(reset_gain, tol),
        // strict scalar inequality
        horizon: Condition { margin: horizon, passed: horizon > 0.0 },
        range_errors: range_errors(cert),
    })
}

/// Which exponent the horizon condition uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonForm {
    /// `δ(1+μ)^T < ε`.
    #[default]
    Period,
    /// `δ(1+μ)^{T−1} < ε`, the form checked by [`check_certificate`].
    PeriodMinusOne,
}

impl HorizonForm {
    pub fn offset(self) -> u64 {
        match self {
            HorizonForm::Period => 0,
            HorizonForm::PeriodMinusOne => 1,
        }
    }
}

/// Smallest `T ≥ 1` whose exponent `T − offset` is at least one and satisfies
/// `δ(1+μ)^{T−offset} < ε`.
pub fn min_reset_horizon(delta: f64, mu: f64, eps_bar: f64, form: HorizonForm) -> Result<u64, AnalysisError> {
    if !(delta >= 1.0) || !delta.is_finite() {
        return Err(AnalysisError::InvalidArgument(format!("delta = {delta} must be a finite value >= 1")));
    }
    if !(-1.0..0.0).contains(&mu) {
        return Err(AnalysisError::InvalidArgument(format!("mu = {mu} must lie in [-1, 0)")));
    }
    if !(eps_bar > 0.0 && eps_bar <= 1.0) {
        return Err(AnalysisError::InvalidArgument(format!("eps_bar = {eps_bar} must lie in (0, 1]")));
    }
    let offset = form.offset();
    if mu == -1.0 {
        return Ok(1 + offset);
    }
    let rate = 1.0 + mu;
    let holds = |e: u64| delta * rate.powf(e as f64) < eps_bar;
    let estimate = ((eps_bar / delta).ln() / rate.ln()).floor().max(1.0);
    let mut e = if estimate.is_finite() { estimate as u64 } else { 1 };
    while e > 1 && holds(e - 1) {
        e -= 1;
    }
    while !holds(e) {
        e += 1;
    }
    Ok(e + offset)
}

/// `n_μ` evenly spaced points from −0.99 to −0.01.
pub fn default_mu_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![-0.5],
        _ => (0..points).map(|i| -0.99 + 0.98 * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Result of a certificate search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CertificateSearch {
    Certified(StabilityCertificate),
    Infeasible { spectral_radius: f64, reason: String },
}

impl CertificateSearch {
    pub fn certificate(&self) -> Option<&StabilityCertificate> {
        match self {
            CertificateSearch::Certified(c) => Some(c),
            CertificateSearch::Infeasible { .. } => None,
        }
    }
}

fn certificate_at(cl: &ClosedLoopMatrix, mu: f64, eps_bar: f64) -> Option<StabilityCertificate> {
    let n = cl.dim();
    let p = solve_discrete_lyapunov(&cl.f, &Matrix::identity(n), 1.0 + mu).ok()?;
    let eig = sym_eig(&p).ok()?;
    if eig.min() <= 0.0 {
        return None;
    }
    let gain = max_gen_eig(&congruence(&cl.f_tilde, &p), &p).ok()?;
    let delta = (gain * (1.0 + DELTA_INFLATION)).max(1.0);
    let t = min_reset_horizon(delta, mu, eps_bar, HorizonForm::PeriodMinusOne).ok()?;
    Some(StabilityCertificate { p, mu, delta, eps_small: eig.min() / 2.0, eps_bar, t })
}

/// Lyapunov-based certificate per grid point (`Q = I`, `ρ = 1+μ`), keeping the
/// one with the smallest `T` (ties broken by smaller `|μ|`). `T` uses the
/// exponent form that [`check_certificate`] verifies.
pub fn find_certificate(
    cl: &ClosedLoopMatrix,
    mu_grid: &[f64],
    eps_bar: f64,
) -> Result<CertificateSearch, AnalysisError> {
    let rho = spectral_radius(&cl.f)?;
    if rho >= 1.0 {
        return Ok(CertificateSearch::Infeasible {
            spectral_radius: rho,
            reason: "closed loop is not Schur stable".into(),
        });
    }
    let best = mu_grid
        .par_iter()
        .filter(|&&mu| (-1.0..0.0).contains(&mu) && rho * rho < 1.0 + mu)
        .filter_map(|&mu| certificate_at(cl, mu, eps_bar))
        .min_by(|a, b| a.t.cmp(&b.t).then(a.mu.abs().total_cmp(&b.mu.abs())));
    Ok(match best {
        Some(c) => CertificateSearch::Certified(c),
        None => CertificateSearch::Infeasible {
            spectral_radius: rho,
            reason: "no grid point admits a Lyapunov certificate".into(),
        },
    })
}

/// `log₂((λ_max(CᵀC)/ϵ)·x₀ᵀHPHx₀) + 1`; `x₀` is zero-padded to the size of `P`.
/// Returns `None` when the argument of the logarithm is zero (no constraint).
pub fn word_length_bound(p: &Matrix, eps_small: f64, c: &Matrix, x0: &[f64]) -> Result<Option<f64>, AnalysisError> {
    if !p.is_square() || x0.len() > p.rows() || c.cols() > p.rows() {
        return Err(AnalysisError::Dimension(format!(
            "P is {:?}, C is {:?}, x0 has {} entries",
            p.shape(),
            c.shape(),
            x0.len()
        )));
    }
    if !(eps_small > 0.0) {
        return Err(AnalysisError::InvalidArgument(format!("eps_small = {eps_small} must be positive")));
    }
    let n_x = c.cols();
    let mut z = vec![0.0; p.rows()];
    z[..x0.len().min(n_x)].copy_from_slice(&x0[..x0.len().min(n_x)]);
    let pz = p.mul_vec(&z);
    let quad: f64 = z.iter().zip(&pz).map(|(a, b)| a * b).sum();
    let ctc = (&c.transpose() * c).symmetrize();
    let lmax = sym_eig(&ctc)?.max();
    let arg = lmax / eps_small * quad;
    Ok((arg > 0.0).then(|| arg.log2() + 1.0))
}

/// `ρ(H·F^T)`, the period-to-period spectral radius of the resetting loop.
pub fn lifted_spectral_radius(cl: &ClosedLoopMatrix, t: u64) -> Result<f64, AnalysisError> {
    if t == 0 {
        return Err(AnalysisError::InvalidArgument("T must be positive".into()));
    }
    let exp = u32::try_from(t).map_err(|_| AnalysisError::InvalidArgument(format!("T = {t} too large")))?;
    Ok(spectral_radius(&(&cl.h * &cl.f.pow(exp)))?)
}
