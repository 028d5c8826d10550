use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_change_of_variables, build_l_of_nu, build_ltilde_of_nu, build_p_of_nu, build_r_of_nu,
    check_synthesis_certificate, SynthesisError, SynthesisVariables,
};
use crate::analysis::{default_mu_grid, min_reset_horizon, HorizonForm, DEFAULT_EPS_BAR, DEFAULT_MU_GRID_POINTS};
use crate::controller_runtime::ControllerMatrices;
use crate::linalg::{cholesky, inverse, max_gen_eig, sym_eig, Lu, Matrix};
use crate::plant::PlantModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mu_grid: Vec<f64>,
    pub delta_range: (f64, f64),
    pub delta_tol: f64,
    pub max_iterations: usize,
    /// Relative step size below which a run counts as stalled.
    pub tol: f64,
    /// Every constraint is projected onto `{M ⪰ margin·I}`.
    pub margin: f64,
    pub restarts: usize,
    /// Newton-step budget of the central-path phase that follows a stalled projection run.
    pub newton_iterations: usize,
    pub seed: u64,
    pub eps_bar: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu_grid: default_mu_grid(DEFAULT_MU_GRID_POINTS),
            delta_range: (1.0, 1e4),
            delta_tol: 0.5,
            max_iterations: 5000,
            tol: 1e-7,
            margin: 1e-6,
            restarts: 2,
            newton_iterations: 400,
            seed: 0,
            eps_bar: DEFAULT_EPS_BAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mu: f64,
    /// Smallest certified `δ` at this `μ`, if any.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SynthesisOutcome {
    /// The grid point with the smallest reset horizon (ties: smaller `δ`).
    Feasible {
        nu: SynthesisVariables,
        mu: f64,
        delta: f64,
        #[serde(rename = "T")]
        t: u64,
        grid: Vec<GridPoint>,
    },
    Infeasible {
        reason: String,
        grid: Vec<GridPoint>,
    },
}

/// Coordinates of `ν`: upper triangles of `X` and `Y`, then `K₁..K₄` row-major.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    n_y: usize,
    n_u: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        let (n, n_y, n_u) = (self.n, self.n_y, self.n_u);
        n * (n + 1) + n * n + n * n_y + n_u * n + n_u * n_y
    }

    fn unpack(&self, theta: &[f64]) -> SynthesisVariables {
        let (n, n_y, n_u) = (self.n, self.n_y, self.n_u);
        let mut it = theta.iter().copied();
        let mut sym = || {
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = it.next().unwrap_or(0.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        };
        let x = sym();
        let y = sym();
        let rest: Vec<f64> = theta[n * (n + 1)..].to_vec();
        let mut it = rest.into_iter();
        let mut full = |r: usize, c: usize| Matrix::from_vec(r, c, it.by_ref().take(r * c).collect()).expect("layout");
        let k1 = full(n, n);
        let k2 = full(n, n_y);
        let k3 = full(n_u, n);
        let k4 = full(n_u, n_y);
        SynthesisVariables { x, y, k1, k2, k3, k4 }
    }

    fn pack(&self, nu: &SynthesisVariables) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for m in [&nu.x, &nu.y] {
            for i in 0..self.n {
                for j in i..self.n {
                    out.push(m[(i, j)]);
                }
            }
        }
        for m in [&nu.k1, &nu.k2, &nu.k3, &nu.k4] {
            out.extend_from_slice(m.as_slice());
        }
        out
    }
}

/// The three constraint matrices as one affine map `θ ↦ b₀ + A·θ`, with the
/// least-squares projection onto its range precomputed.
struct AffineConstraints {
    layout: Layout,
    sizes: Vec<usize>,
    offset: Vec<f64>,
    pinv: Matrix,
    a: Matrix,
    /// `generators[i][j]`: coefficient of `θ_j` in block `i`.
    generators: Vec<Vec<Matrix>>,
}

fn constraint_blocks(
    plant: &PlantModel,
    nu: &SynthesisVariables,
    mu: f64,
    delta: f64,
) -> Result<Vec<Matrix>, SynthesisError> {
    Ok(vec![build_p_of_nu(nu), build_l_of_nu(plant, nu, mu)?, build_ltilde_of_nu(plant, nu, delta)?])
}

fn flatten(blocks: &[Matrix]) -> Vec<f64> {
    blocks.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

impl AffineConstraints {
    fn new(plant: &PlantModel, mu: f64, delta: f64) -> Result<Self, SynthesisError> {
        let layout = Layout { n: plant.n_x(), n_y: plant.n_y(), n_u: plant.n_u() };
        let d = layout.dim();
        let zero = constraint_blocks(plant, &layout.unpack(&vec![0.0; d]), mu, delta)?;
        let sizes: Vec<usize> = zero.iter().map(|m| m.rows()).collect();
        let offset = flatten(&zero);
        let rows = offset.len();
        let mut a = Matrix::zeros(rows, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = flatten(&constraint_blocks(plant, &layout.unpack(&e), mu, delta)?);
            for i in 0..rows {
                a[(i, j)] = col[i] - offset[i];
            }
            e[j] = 0.0;
        }
        let at = a.transpose();
        let mut normal = &at * &a;
        let ridge = 1e-12 * normal.trace().max(1.0) / d as f64;
        for i in 0..d {
            normal[(i, i)] += ridge;
        }
        let pinv = Lu::new(&normal)?.solve_matrix(&at)?;
        let mut generators = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in &sizes {
            let per_block = (0..d)
                .map(|j| {
                    let col: Vec<f64> = (start..start + s * s).map(|i| a[(i, j)]).collect();
                    Matrix::from_vec(s, s, col).expect("block size").symmetrize()
                })
                .collect();
            generators.push(per_block);
            start += s * s;
        }
        Ok(AffineConstraints { layout, sizes, offset, pinv, a, generators })
    }

    fn eval(&self, theta: &[f64]) -> Vec<Matrix> {
        let flat: Vec<f64> = self.a.mul_vec(theta).iter().zip(&self.offset).map(|(x, b)| x + b).collect();
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut start = 0;
        for &s in &self.sizes {
            out.push(Matrix::from_vec(s, s, flat[start..start + s * s].to_vec()).expect("block size").symmetrize());
            start += s * s;
        }
        out
    }

    fn project(&self, blocks: &[Matrix]) -> Vec<f64> {
        let target: Vec<f64> = flatten(blocks).iter().zip(&self.offset).map(|(z, b)| z - b).collect();
        self.pinv.mul_vec(&target)
    }
}

enum RunResult {
    Feasible(SynthesisVariables),
    Failed,
}

fn alternating_projections(
    cons: &AffineConstraints,
    start: &SynthesisVariables,
    cfg: &SolverConfig,
) -> Result<RunResult, SynthesisError> {
    let mut theta = cons.layout.pack(start);
    for _ in 0..cfg.max_iterations {
        let blocks = cons.eval(&theta);
        let mut feasible = true;
        let mut projected = Vec::with_capacity(blocks.len());
        for (i, m) in blocks.iter().enumerate() {
            let eig = sym_eig(m)?;
            let min = eig.min();
            // the first block must be strictly positive definite
            feasible &= if i == 0 { min > cfg.margin * 0.5 } else { min >= 0.0 };
            projected.push(eig.map_spectrum(|l| l.max(cfg.margin)));
        }
        if feasible {
            return Ok(RunResult::Feasible(cons.layout.unpack(&theta)));
        }
        let next = cons.project(&projected);
        let step: f64 = next.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = 1.0 + theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        theta = next;
        if step < cfg.tol * scale {
            break;
        }
    }
    Ok(RunResult::Failed)
}

/// Barrier state at `z = (θ, s)`: the inverses of `M_i(θ) − s·I` and the
/// value `−τs − Σ log det(M_i − sI) − log(R² − ‖θ‖²)`, or `None` outside the domain.
struct BarrierPoint {
    inverses: Vec<Matrix>,
    value: f64,
    slack: f64,
}

fn barrier_at(cons: &AffineConstraints, z: &[f64], tau: f64, radius: f64) -> Option<BarrierPoint> {
    let (theta, s) = z.split_at(z.len() - 1);
    let s = s[0];
    let slack = radius * radius - theta.iter().map(|v| v * v).sum::<f64>();
    if !(slack > 0.0) {
        return None;
    }
    let mut value = -tau * s - slack.ln();
    let mut inverses = Vec::with_capacity(cons.sizes.len());
    for (i, m) in cons.eval(theta).into_iter().enumerate() {
        let shifted = &m - &Matrix::identity(cons.sizes[i]).scale(s);
        let l = cholesky(&shifted).ok()?;
        value -= 2.0 * (0..l.rows()).map(|k| l[(k, k)].ln()).sum::<f64>();
        inverses.push(inverse(&shifted).ok()?.symmetrize());
    }
    value.is_finite().then_some(BarrierPoint { inverses, value, slack })
}

fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for p in 0..n {
        for q in 0..n {
            acc += a[(p, q)] * b[(q, p)];
        }
    }
    acc
}

/// Newton step for the barrier objective: `(Δz, gᵀΔz)`, or `None` for a singular Hessian.
fn newton_step(
    cons: &AffineConstraints,
    z: &[f64],
    point: &BarrierPoint,
    tau: f64,
) -> Result<Option<(Vec<f64>, f64)>, SynthesisError> {
    let d = z.len() - 1;
    let mut grad = vec![0.0; d + 1];
    let mut hess = Matrix::zeros(d + 1, d + 1);
    for (i, s_inv) in point.inverses.iter().enumerate() {
        let mut w: Vec<Matrix> = cons.generators[i].iter().map(|g| s_inv * g).collect();
        w.push(s_inv.scale(-1.0));
        for j in 0..=d {
            grad[j] -= w[j].trace();
            for k in j..=d {
                let h = trace_product(&w[j], &w[k]);
                hess[(j, k)] += h;
                if k != j {
                    hess[(k, j)] += h;
                }
            }
        }
    }
    grad[d] -= tau;
    for j in 0..d {
        grad[j] += 2.0 * z[j] / point.slack;
        hess[(j, j)] += 2.0 / point.slack;
        for k in 0..d {
            hess[(j, k)] += 4.0 * z[j] * z[k] / (point.slack * point.slack);
        }
    }
    let scale: Vec<f64> = (0..=d).map(|j| 1.0 / hess[(j, j)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for j in 0..=d {
        for k in 0..=d {
            hess[(j, k)] *= scale[j] * scale[k];
        }
        hess[(j, j)] += 1e-12;
    }
    let rhs: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| g * s).collect();
    let Ok(lu) = Lu::new(&hess) else { return Ok(None) };
    let step: Vec<f64> = lu.solve(&rhs)?.iter().zip(&scale).map(|(v, s)| -v * s).collect();
    let slope = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
    Ok(Some((step, slope)))
}

/// Follows the log-det central path of `max s` subject to `M_i(θ) ⪰ s·I` and
/// `‖θ‖ ≤ R`, stopping once `s` exceeds the margin or the duality gap proves
/// that it cannot.
fn central_path(
    cons: &AffineConstraints,
    start: &SynthesisVariables,
    cfg: &SolverConfig,
) -> Result<RunResult, SynthesisError> {
    let theta = cons.layout.pack(start);
    let lowest = cons.eval(&theta).iter().map(|m| sym_eig(m).map(|e| e.min())).collect::<Result<Vec<_>, _>>()?;
    let s0 = lowest.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let radius = 1e4 * (1.0 + theta.iter().map(|v| v * v).sum::<f64>().sqrt());
    let barrier_order = (cons.sizes.iter().sum::<usize>() + 1) as f64;
    let mut z = theta;
    z.push(s0);
    let d = z.len() - 1;
    let mut tau = 1.0;
    let mut steps = 0;
    let Some(mut point) = barrier_at(cons, &z, tau, radius) else {
        return Ok(RunResult::Failed);
    };
    while steps < cfg.newton_iterations {
        let Some((dz, slope)) = newton_step(cons, &z, &point, tau)? else { break };
        steps += 1;
        if -slope < 1e-9 {
            if z[d] + barrier_order / tau < cfg.margin || tau > 1e14 {
                break;
            }
            tau *= 8.0;
            point = barrier_at(cons, &z, tau, radius).expect("interior point stays interior");
            continue;
        }
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + t * b).collect();
            if let Some(p) = barrier_at(cons, &trial, tau, radius) {
                if p.value <= point.value + 0.25 * t * slope {
                    break Some((trial, p));
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        let Some((next, p)) = accepted else { break };
        z = next;
        point = p;
        if z[d] > cfg.margin {
            return Ok(RunResult::Feasible(cons.layout.unpack(&z[..d])));
        }
    }
    Ok(RunResult::Failed)
}

fn random_start(layout: Layout, rng: &mut ChaCha8Rng) -> SynthesisVariables {
    let theta: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut nu = layout.unpack(&theta);
    nu.y = &nu.y + &Matrix::identity(layout.n);
    nu.x = &nu.x + &Matrix::identity(layout.n).scale(1.5);
    nu
}

fn solve_at(
    plant: &PlantModel,
    mu: f64,
    delta: f64,
    warm: Option<&SynthesisVariables>,
    cfg: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SynthesisVariables>, SynthesisError> {
    let cons = AffineConstraints::new(plant, mu, delta)?;
    let mut starts: Vec<SynthesisVariables> = warm.into_iter().cloned().collect();
    starts.extend((0..=cfg.restarts).map(|_| random_start(cons.layout, rng)));
    for start in &starts {
        for run in [alternating_projections, central_path] {
            if let RunResult::Feasible(nu) = run(&cons, start, cfg)? {
                if check_synthesis_certificate(plant, &nu, mu, delta, 0.0)?.passed() {
                    return Ok(Some(nu));
                }
            }
        }
    }
    Ok(None)
}

/// Smallest `δ ≥ 1` with `𝐋̃(ν) ⪰ 0` for this `ν`, or `None` when `2I − X` is not positive definite.
pub fn minimal_delta(plant: &PlantModel, nu: &SynthesisVariables) -> Result<Option<f64>, SynthesisError> {
    let corner = &Matrix::identity(nu.n_x()).scale(2.0) - &nu.x;
    if sym_eig(&corner)?.min() <= 0.0 {
        return Ok(None);
    }
    let r = build_r_of_nu(plant, nu)?;
    let m = (&(&r.transpose() * &inverse(&corner)?) * &r).symmetrize();
    let gain = max_gen_eig(&m, &build_p_of_nu(nu))?;
    Ok(Some((gain * (1.0 + 1e-9)).max(1.0)))
}

/// `ν` for a full-order controller certified by `P`, with `P` rescaled so that
/// `λ_max(X) = 1`, together with the smallest `δ` that makes `𝐋̃(ν) ⪰ 0`.
pub fn nu_from_certificate(
    plant: &PlantModel,
    ctrl: &ControllerMatrices,
    p: &Matrix,
) -> Result<(SynthesisVariables, f64), SynthesisError> {
    let n = plant.n_x();
    if p.shape() != (2 * n, 2 * n) {
        return Err(SynthesisError::Dimension(format!("P is {:?}, expected {}x{}", p.shape(), 2 * n, 2 * n)));
    }
    let x_max = sym_eig(&p.submatrix(0, 0, n, n).symmetrize())?.max();
    if !(x_max > 0.0) {
        return Err(SynthesisError::NotPositiveDefinite(x_max));
    }
    let nu = apply_change_of_variables(&p.scale(1.0 / x_max), ctrl, plant)?;
    let delta =
        minimal_delta(plant, &nu)?.ok_or_else(|| SynthesisError::InvalidArgument("2I - X is singular".into()))?;
    Ok((nu, delta))
}

fn search_mu(
    plant: &PlantModel,
    mu: f64,
    cfg: &SolverConfig,
    index: usize,
) -> Result<Option<(SynthesisVariables, f64)>, SynthesisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (mut lo, hi) = cfg.delta_range;
    let Some(mut best) = solve_at(plant, mu, hi, None, cfg, &mut rng)? else {
        return Ok(None);
    };
    let mut hi = minimal_delta(plant, &best)?.map_or(hi, |d| d.min(hi)).max(lo);
    while hi - lo > cfg.delta_tol {
        let mid = 0.5 * (lo + hi);
        match solve_at(plant, mu, mid, Some(&best), cfg, &mut rng)? {
            Some(nu) => {
                hi = minimal_delta(plant, &nu)?.map_or(mid, |d| d.min(mid)).max(lo);
                best = nu;
            }
            None => lo = mid,
        }
    }
    Ok(Some((best, hi)))
}

/// Line search over `μ` with a bisection on `δ` at each grid point. Grid points
/// run in parallel; every returned `ν` passes [`check_synthesis_certificate`].
pub fn feasibility_search(plant: &PlantModel, cfg: &SolverConfig) -> Result<SynthesisOutcome, SynthesisError> {
    let (lo, hi) = cfg.delta_range;
    if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
        return Err(SynthesisError::InvalidArgument(format!("delta range [{lo}, {hi}] must satisfy 1 <= lo <= hi")));
    }
    if !(cfg.delta_tol > 0.0) {
        return Err(SynthesisError::InvalidArgument("delta tolerance must be positive".into()));
    }
    let results: Vec<Result<Option<(SynthesisVariables, f64)>, SynthesisError>> = cfg
        .mu_grid
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| {
            if !(-1.0..0.0).contains(&mu) {
                return Err(SynthesisError::InvalidArgument(format!("mu = {mu} must lie in [-1, 0)")));
            }
            search_mu(plant, mu, cfg, i)
        })
        .collect();

    let mut grid = Vec::with_capacity(results.len());
    let mut best: Option<(SynthesisVariables, f64, f64, u64)> = None;
    for (&mu, r) in cfg.mu_grid.iter().zip(results) {
        let found = r?;
        grid.push(GridPoint { mu, delta: found.as_ref().map(|(_, d)| *d) });
        if let Some((nu, delta)) = found {
            let t = min_reset_horizon(delta, mu, cfg.eps_bar, HorizonForm::PeriodMinusOne)?;
            let better = match &best {
                None => true,
                Some((_, _, bd, bt)) => t < *bt || (t == *bt && delta < *bd),
            };
            if better {
                best = Some((nu, mu, delta, t));
            }
        }
    }
    Ok(match best {
        Some((nu, mu, delta, t)) => SynthesisOutcome::Feasible { nu, mu, delta, t, grid },
        None => SynthesisOutcome::Infeasible {
            reason: "no grid point became feasible within the iteration budget".into(),
            grid,
        },
    })
}
