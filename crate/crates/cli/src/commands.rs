use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rescon_core::analysis::{
    build_closed_loop, check_certificate, default_mu_grid, find_certificate, lifted_spectral_radius, min_reset_horizon,
    word_length_bound, CertificateSearch, HorizonForm, StabilityCertificate,
};
use rescon_core::controller_runtime::{
    run_closed_loop, run_until_divergence, EncryptedPipeline, IntegerPipeline, LoopController, QuantizedPipeline,
    RealController, RealPipeline, ResetPeriod, SessionParams, SimulationTrace,
};
use rescon_core::crypto_paillier::{KeyFile, KeyRadix, Keypair};
use rescon_core::linalg::{eigenvalues, spectral_radius};
use rescon_core::netdemo::{connect_plant, loopback, serve_cloud_once, PlantConfig};
use rescon_core::synthesis::{
    feasibility_search, reconstruct_controller, reconstruct_with_split, FactorSplit, SolverConfig, SynthesisOutcome,
    SynthesisVariables,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    load_controller, load_plant, read_json, Defaults, Realization, Resolved, RunConfig, SIMULATE_DEFAULTS,
};
use crate::error::CliError;

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(path, &text)
}

/// Prints a JSON summary to stdout, unless stdout already carries the main artifact.
fn summary(main_out: Option<&Path>, value: Value) -> Result<(), CliError> {
    if main_out.is_some() {
        emit_json(None, &value)?;
    }
    Ok(())
}

fn trace_summary(trace: &SimulationTrace) -> Value {
    json!({
        "steps": trace.rows.len(),
        "initial_norm_x": trace.rows.first().map(|r| r.norm_x),
        "final_norm_x": trace.rows.last().map(|r| r.norm_x),
        "max_norm_x": trace.max_norm_x(),
        "overflow": trace.any_overflow(),
    })
}

pub fn keygen(
    bits: u64,
    seed: Option<u64>,
    hex: bool,
    out: Option<&Path>,
    public_out: Option<&Path>,
) -> Result<(), CliError> {
    let kp = match seed {
        Some(s) => Keypair::generate(bits, &mut ChaCha20Rng::seed_from_u64(s))?,
        None => Keypair::generate(bits, &mut OsRng)?,
    };
    let radix = if hex { KeyRadix::Hex } else { KeyRadix::Decimal };
    if let Some(p) = public_out {
        emit_json(Some(p), &KeyFile::public_only(&kp.public, radix))?;
    }
    emit_json(out, &kp.to_file(radix))
}

fn pipeline(r: &Resolved) -> Result<Box<dyn LoopController>, CliError> {
    Ok(match r.realization {
        Realization::Real => Box::new(RealPipeline(RealController::new(r.controller.clone(), r.session.period))),
        Realization::Quantized => Box::new(QuantizedPipeline::new(r.quantized.clone(), r.session.period)),
        Realization::Integer => Box::new(IntegerPipeline::new(r.quantized.clone(), r.session)),
        Realization::Encrypted => {
            Box::new(EncryptedPipeline::new(r.quantized.clone(), r.session, r.keypair()?, r.seed)?)
        }
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let r = Resolved::new(cfg, &SIMULATE_DEFAULTS)?;
    let mut ctrl = pipeline(&r)?;
    let trace = run_closed_loop(&r.plant, ctrl.as_mut(), r.horizon)?;
    emit(r.out.as_deref(), &trace.to_csv()?)?;
    summary(r.out.as_deref(), trace_summary(&trace))
}

pub struct AnalyzeArgs {
    pub plant: String,
    pub controller: String,
    pub mu_points: usize,
    pub eps_bar: f64,
    pub period: Option<u64>,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub cert_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn horizons(delta: f64, mu: f64, eps_bar: f64) -> Result<Value, CliError> {
    Ok(json!({
        "delta": delta,
        "mu": mu,
        "T_period": min_reset_horizon(delta, mu, eps_bar, HorizonForm::Period)?,
        "T_period_minus_one": min_reset_horizon(delta, mu, eps_bar, HorizonForm::PeriodMinusOne)?,
    }))
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let plant = load_plant(&a.plant)?;
    let (ctrl, design_t) = load_controller(&a.controller)?;
    let cl = build_closed_loop(&plant, &ctrl)?;
    let eig: Vec<[f64; 2]> = eigenvalues(plant.a())
        .map_err(rescon_core::analysis::AnalysisError::from)?
        .iter()
        .map(|z| [z.re, z.im])
        .collect();
    let rho = spectral_radius(&cl.f).map_err(rescon_core::analysis::AnalysisError::from)?;
    let search = find_certificate(&cl, &default_mu_grid(a.mu_points), a.eps_bar)?;
    let mut report = json!({
        "plant_eigenvalues": eig,
        "closed_loop_spectral_radius": rho,
        "certificate": search,
    });
    if let CertificateSearch::Certified(cert) = &search {
        report["horizons"] = horizons(cert.delta, cert.mu, cert.eps_bar)?;
        report["verdict"] = serde_json::to_value(check_certificate(&cl, cert, 1e-8)?)?;
        report["word_length_bound"] = json!(word_length_bound(&cert.p, cert.eps_small, plant.c(), plant.x0())?);
        report["lifted_spectral_radius"] = json!({ "T": cert.t, "value": lifted_spectral_radius(&cl, cert.t)? });
        if let Some(p) = &a.cert_out {
            emit_json(Some(p), cert)?;
        }
    }
    if let Some(t) = a.period.or(design_t) {
        report["configured_period"] = json!({ "T": t, "lifted_spectral_radius": lifted_spectral_radius(&cl, t)? });
    }
    if let (Some(delta), Some(mu)) = (a.delta, a.mu) {
        report["given"] = horizons(delta, mu, a.eps_bar)?;
    }
    emit_json(a.out.as_deref(), &report)
}

pub fn verify_certificate(cert: &Path, plant: &str, controller: &str, tol: f64) -> Result<(), CliError> {
    let cert: StabilityCertificate = read_json(cert)?;
    let plant = load_plant(plant)?;
    let (ctrl, _) = load_controller(controller)?;
    let cl = build_closed_loop(&plant, &ctrl)?;
    let verdict = check_certificate(&cl, &cert, tol)?;
    emit_json(None, &verdict)?;
    if verdict.passed() {
        Ok(())
    } else {
        Err(CliError::Rejected { failures: verdict.failures().iter().map(|s| s.to_string()).collect() })
    }
}

pub struct SynthesizeArgs {
    pub plant: String,
    pub solver: Option<PathBuf>,
    pub mu_points: Option<usize>,
    pub seed: Option<u64>,
    pub controller_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn synthesize(a: &SynthesizeArgs) -> Result<(), CliError> {
    let plant = load_plant(&a.plant)?;
    let mut cfg: SolverConfig = match &a.solver {
        Some(p) => read_json(p)?,
        None => SolverConfig::default(),
    };
    if let Some(points) = a.mu_points {
        cfg.mu_grid = default_mu_grid(points);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let outcome = feasibility_search(&plant, &cfg)?;
    if let (SynthesisOutcome::Feasible { nu, .. }, Some(p)) = (&outcome, &a.controller_out) {
        emit_json(Some(p), &reconstruct_controller(&plant, nu)?.controller)?;
    }
    emit_json(a.out.as_deref(), &outcome)
}

/// Reads `ν` from a bare variables document or from a feasible synthesis result.
fn read_nu(path: &Path) -> Result<SynthesisVariables, CliError> {
    let value: Value = read_json(path)?;
    if value.get("status").is_some() {
        match serde_json::from_value::<SynthesisOutcome>(value)? {
            SynthesisOutcome::Feasible { nu, .. } => Ok(nu),
            SynthesisOutcome::Infeasible { reason, .. } => Err(CliError::Parse {
                path: path.display().to_string(),
                message: format!("infeasible result: {reason}"),
            }),
        }
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

pub fn reconstruct(nu: &Path, plant: &str, split: FactorSplit, out: Option<&Path>) -> Result<(), CliError> {
    let plant = load_plant(plant)?;
    let nu = read_nu(nu)?;
    emit_json(out, &reconstruct_with_split(&plant, &nu, split)?)
}

pub const OVERFLOW_DEFAULTS: Defaults =
    Defaults { controller: "reactor-t8", horizon: 1000, realization: Realization::Integer };

pub fn demo_overflow(
    cfg: &RunConfig,
    resetting_out: Option<&Path>,
    non_resetting_out: Option<&Path>,
) -> Result<(), CliError> {
    let mut resetting_cfg = cfg.clone();
    resetting_cfg.no_reset = Some(false);
    let r = Resolved::new(&resetting_cfg, &OVERFLOW_DEFAULTS)?;
    let x0 = r.plant.x0().iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut resetting = IntegerPipeline::new(r.quantized.clone(), r.session);
    let kept = run_closed_loop(&r.plant, &mut resetting, r.horizon)?;

    let never = SessionParams { period: ResetPeriod::Never, ..r.session };
    let mut non_resetting = IntegerPipeline::new(r.quantized.clone(), never);
    let (lost, stopped) = run_until_divergence(&r.plant, &mut non_resetting, r.horizon, 1e12 * x0.max(1.0))?;
    let first_exceed = lost.rows.iter().find(|row| row.norm_x > 10.0 * x0).map(|row| row.k);

    if let Some(p) = resetting_out {
        emit(Some(p), &kept.to_csv()?)?;
    }
    if let Some(p) = non_resetting_out {
        emit(Some(p), &lost.to_csv()?)?;
    }
    let mut non = trace_summary(&lost);
    non["first_step_above_10x_initial_norm"] = json!(first_exceed);
    non["stopped_at"] = json!(stopped);
    emit_json(
        None,
        &json!({
            "ring_bits": r.session.ring.n_tilde,
            "T": match r.session.period { ResetPeriod::Every(t) => Some(t), ResetPeriod::Never => None },
            "resetting": trace_summary(&kept),
            "non_resetting": non,
        }),
    )
}

pub const NETDEMO_DEFAULTS: Defaults =
    Defaults { controller: "reactor-t8", horizon: 50, realization: Realization::Encrypted };

fn plant_config(cfg: &RunConfig, session_id: u64) -> Result<(PlantConfig, Option<PathBuf>), CliError> {
    let r = Resolved::new(cfg, &NETDEMO_DEFAULTS)?;
    let keypair = r.keypair()?;
    Ok((
        PlantConfig {
            plant: r.plant,
            controller: r.quantized,
            session: r.session,
            keypair,
            seed: r.seed,
            session_id,
            steps: r.horizon,
        },
        r.out,
    ))
}

pub fn netdemo_cloud(listen: &str, timeout: Duration) -> Result<(), CliError> {
    let listener = TcpListener::bind(listen).map_err(|e| CliError::io(Path::new(listen), e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io(Path::new(listen), e))?;
    eprintln!("{}", json!({ "listening": addr.to_string() }));
    let report = serve_cloud_once(&listener, timeout)?;
    emit_json(
        None,
        &json!({
            "session_id": report.hello.session_id,
            "steps": report.steps,
            "bytes_received": report.received.len(),
            "bytes_sent": report.sent.len(),
        }),
    )
}

pub fn netdemo_plant(cfg: &RunConfig, connect: &str, session_id: u64, timeout: Duration) -> Result<(), CliError> {
    let (pc, out) = plant_config(cfg, session_id)?;
    let report = connect_plant(connect, &pc, timeout)?;
    emit(out.as_deref(), &report.trace.to_csv()?)?;
    summary(out.as_deref(), trace_summary(&report.trace))
}

pub fn netdemo_loopback(cfg: &RunConfig, session_id: u64, timeout: Duration, check: bool) -> Result<(), CliError> {
    let (pc, out) = plant_config(cfg, session_id)?;
    let report = loopback(&pc, timeout)?;
    let mut s = trace_summary(&report.plant.trace);
    s["cloud_bytes"] = json!(report.cloud.transcript().len());
    if check {
        let mut local = EncryptedPipeline::new(pc.controller.clone(), pc.session, pc.keypair.clone(), pc.seed)?;
        let expected = run_closed_loop(&pc.plant, &mut local, pc.steps)?;
        s["matches_in_process"] = json!(expected == report.plant.trace);
    }
    emit(out.as_deref(), &report.plant.trace.to_csv()?)?;
    summary(out.as_deref(), s)
}
