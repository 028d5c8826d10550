use rand_chacha::ChaCha20Rng;

use super::encrypted::{cloud_rng, sensor_rng};
use super::{
    sensor_ring_image, Actuator, EncryptedCloud, IntegerRealization, QuantizedController, QuantizedRealization,
    RealController, ResetPeriod, RuntimeError, Sensor, SessionParams,
};
use crate::crypto_paillier::Keypair;
use crate::fixedpoint::{budgets_at_phase, from_ring, proj, BitBudget, BudgetDims, FixedPointFormat, FixedPointScalar};
use crate::plant::PlantModel;

/// What a controller reports for one step of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub u: Vec<f64>,
    /// Decoded controller state at the start of the step.
    pub x_c: Vec<f64>,
    /// Sensor saturation, or a step whose worst-case width does not fit the ring.
    pub overflow: bool,
    /// State and input budgets at this step, where arithmetic is exact.
    pub budgets: Option<(BitBudget, BitBudget)>,
}

/// A controller driven by real plant outputs.
pub trait LoopController {
    fn n_c(&self) -> usize;
    fn step(&mut self, k: u64, y: &[f64]) -> Result<ControlStep, RuntimeError>;
}

pub struct RealPipeline(pub RealController);

impl LoopController for RealPipeline {
    fn n_c(&self) -> usize {
        self.0.controller().n_c()
    }

    fn step(&mut self, _k: u64, y: &[f64]) -> Result<ControlStep, RuntimeError> {
        let x_c = self.0.state().to_vec();
        let u = self.0.step(y)?;
        Ok(ControlStep { u, x_c, overflow: false, budgets: None })
    }
}

fn quantize_output(y: &[f64], fmt: FixedPointFormat) -> Result<(Vec<FixedPointScalar>, bool), RuntimeError> {
    let mut saturated = false;
    let mut out = Vec::with_capacity(y.len());
    for &v in y {
        let p = proj(v, fmt)?;
        saturated |= p.saturated;
        out.push(p.value);
    }
    Ok((out, saturated))
}

fn step_budgets(period: ResetPeriod, k: u64, dims: BudgetDims) -> (BitBudget, BitBudget) {
    budgets_at_phase(period.phase(k), dims)
}

/// Whether the signals produced at step `k` can exceed the ring.
pub(crate) fn exceeds_ring(session: &SessionParams, k: u64, dims: BudgetDims) -> bool {
    let (_, input) = budgets_at_phase(session.period.phase(k), dims);
    let (next_state, _) = budgets_at_phase(session.period.phase(k + 1), dims);
    let limit = session.ring.n_tilde as i64;
    input.total_bits() >= limit || (!session.period.resets_after(k) && next_state.total_bits() >= limit)
}

pub struct QuantizedPipeline {
    ctrl: QuantizedRealization,
    period: ResetPeriod,
}

impl QuantizedPipeline {
    pub fn new(ctrl: QuantizedController, period: ResetPeriod) -> Self {
        QuantizedPipeline { ctrl: QuantizedRealization::new(ctrl, period), period }
    }

    pub fn realization(&self) -> &QuantizedRealization {
        &self.ctrl
    }
}

impl LoopController for QuantizedPipeline {
    fn n_c(&self) -> usize {
        self.ctrl.controller().n_c()
    }

    fn step(&mut self, k: u64, y: &[f64]) -> Result<ControlStep, RuntimeError> {
        let q = self.ctrl.controller();
        let fmt = q.format();
        let dims = BudgetDims::new(fmt, q.n_c(), q.n_y());
        let (y_bar, saturated) = quantize_output(y, fmt)?;
        let x_c = self.ctrl.state().iter().map(|d| d.to_f64()).collect();
        let u = self.ctrl.step(&y_bar)?.iter().map(|d| d.to_f64()).collect();
        Ok(ControlStep { u, x_c, overflow: saturated, budgets: Some(step_budgets(self.period, k, dims)) })
    }
}

pub struct IntegerPipeline {
    ctrl: IntegerRealization,
}

impl IntegerPipeline {
    pub fn new(ctrl: QuantizedController, session: SessionParams) -> Self {
        IntegerPipeline { ctrl: IntegerRealization::new(ctrl, session) }
    }

    pub fn realization(&self) -> &IntegerRealization {
        &self.ctrl
    }
}

impl LoopController for IntegerPipeline {
    fn n_c(&self) -> usize {
        self.ctrl.controller().n_c()
    }

    fn step(&mut self, k: u64, y: &[f64]) -> Result<ControlStep, RuntimeError> {
        let session = *self.ctrl.session();
        let q = self.ctrl.controller();
        let dims = session.budget_dims(q.n_c(), q.n_y());
        let (y_bar, saturated) = quantize_output(y, session.format)?;
        let y_tilde = sensor_ring_image(&y_bar, session.ring);
        let x_scale = session.state_scale(k);
        let x_c = self.ctrl.state().iter().map(|w| from_ring(w, x_scale, session.ring)).collect::<Result<_, _>>()?;
        let u_scale = session.input_scale(k);
        let u =
            self.ctrl.step(&y_tilde)?.iter().map(|w| from_ring(w, u_scale, session.ring)).collect::<Result<_, _>>()?;
        Ok(ControlStep {
            u,
            x_c,
            overflow: saturated || exceeds_ring(&session, k, dims),
            budgets: Some(step_budgets(session.period, k, dims)),
        })
    }
}

/// Sensor, cloud and actuator in one process.
pub struct EncryptedPipeline {
    sensor: Sensor,
    cloud: EncryptedCloud,
    actuator: Actuator,
    session: SessionParams,
    dims: BudgetDims,
}

impl EncryptedPipeline {
    pub fn new(
        ctrl: QuantizedController,
        session: SessionParams,
        keypair: Keypair,
        seed: u64,
    ) -> Result<Self, RuntimeError> {
        Self::with_rngs(ctrl, session, keypair, sensor_rng(seed), cloud_rng(seed))
    }

    pub fn with_rngs(
        ctrl: QuantizedController,
        session: SessionParams,
        keypair: Keypair,
        sensor_rng: ChaCha20Rng,
        cloud_rng: ChaCha20Rng,
    ) -> Result<Self, RuntimeError> {
        let dims = session.budget_dims(ctrl.n_c(), ctrl.n_y());
        let sensor = Sensor::new(session, keypair.public.clone(), sensor_rng)?;
        let actuator = Actuator::new(session, keypair.clone(), ctrl.n_c(), ctrl.n_y())?;
        let cloud = EncryptedCloud::new(ctrl, session, keypair.public, cloud_rng)?;
        Ok(EncryptedPipeline { sensor, cloud, actuator, session, dims })
    }

    pub fn cloud(&self) -> &EncryptedCloud {
        &self.cloud
    }

    pub fn actuator(&self) -> &Actuator {
        &self.actuator
    }

    pub fn sensor_mut(&mut self) -> &mut Sensor {
        &mut self.sensor
    }

    pub fn cloud_mut(&mut self) -> &mut EncryptedCloud {
        &mut self.cloud
    }
}

impl LoopController for EncryptedPipeline {
    fn n_c(&self) -> usize {
        self.dims.n_c as usize
    }

    fn step(&mut self, k: u64, y: &[f64]) -> Result<ControlStep, RuntimeError> {
        let reading = self.sensor.measure(y)?;
        let x_c = self.actuator.decode_state(k, self.cloud.state())?;
        let u_check = self.cloud.step(&reading.y_check)?;
        let out = self.actuator.extract(k, &u_check)?;
        Ok(ControlStep {
            u: out.u,
            x_c,
            overflow: reading.saturated || out.budget_violation || exceeds_ring(&self.session, k, self.dims),
            budgets: Some(step_budgets(self.session.period, k, self.dims)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub x: Vec<f64>,
    pub x_c: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub norm_x: f64,
    pub norm_xc: f64,
    pub overflow: bool,
    pub budgets: Option<(BitBudget, BitBudget)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub n_x: usize,
    pub n_c: usize,
    pub n_u: usize,
    pub rows: Vec<TraceRow>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Closes the loop for `horizon` steps starting from the plant's `x₀`.
pub fn run_closed_loop(
    plant: &PlantModel,
    ctrl: &mut dyn LoopController,
    horizon: u64,
) -> Result<SimulationTrace, RuntimeError> {
    let (trace, stop) = run_loop(plant, ctrl, horizon, f64::INFINITY)?;
    match stop {
        Some(k) => Err(RuntimeError::NonFinite(k)),
        None => Ok(trace),
    }
}

/// Like [`run_closed_loop`], but stops after the first step whose plant state
/// norm exceeds `norm_limit` or whose signals stop being finite. Returns the
/// trace so far and the step at which the run stopped.
pub fn run_until_divergence(
    plant: &PlantModel,
    ctrl: &mut dyn LoopController,
    horizon: u64,
    norm_limit: f64,
) -> Result<(SimulationTrace, Option<u64>), RuntimeError> {
    run_loop(plant, ctrl, horizon, norm_limit)
}

fn run_loop(
    plant: &PlantModel,
    ctrl: &mut dyn LoopController,
    horizon: u64,
    norm_limit: f64,
) -> Result<(SimulationTrace, Option<u64>), RuntimeError> {
    let mut state = plant.initial_state();
    let mut rows = Vec::with_capacity(horizon.min(1 << 20) as usize);
    let mut stop = None;
    for k in 0..horizon {
        let y = plant.output(&state);
        if y.iter().any(|v| !v.is_finite()) {
            stop = Some(k);
            break;
        }
        let step = ctrl.step(k, &y)?;
        super::check_len("u", step.u.len(), plant.n_u())?;
        let next = plant.step(&state, &step.u)?;
        let norm_x = norm(&state.x);
        rows.push(TraceRow {
            k,
            norm_x,
            norm_xc: norm(&step.x_c),
            x: state.x,
            x_c: step.x_c,
            u: step.u,
            y,
            overflow: step.overflow,
            budgets: step.budgets,
        });
        if !(norm_x <= norm_limit) {
            stop = Some(k);
            break;
        }
        state = next;
    }
    Ok((SimulationTrace { n_x: plant.n_x(), n_c: ctrl.n_c(), n_u: plant.n_u(), rows }, stop))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

impl SimulationTrace {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        h.extend((1..=self.n_x).map(|i| format!("x_{i}")));
        h.extend((1..=self.n_c).map(|i| format!("xc_{i}")));
        h.extend((1..=self.n_u).map(|i| format!("u_{i}")));
        h.extend(["norm_x", "norm_xc", "overflow_flag"].map(String::from));
        h
    }

    pub fn to_csv(&self) -> Result<String, TraceCsvError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.k.to_string()];
            rec.extend(r.x.iter().chain(&r.x_c).chain(&r.u).map(|v| v.to_string()));
            rec.push(r.norm_x.to_string());
            rec.push(r.norm_xc.to_string());
            rec.push(u8::from(r.overflow).to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| TraceCsvError::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| TraceCsvError::Malformed(e.to_string()))
    }

    /// Parses a CSV written by [`to_csv`](Self::to_csv). Outputs and budgets are not stored in the CSV.
    pub fn from_csv(text: &str) -> Result<Self, TraceCsvError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n_x, n_c, n_u) = (count("x_"), count("xc_"), count("u_"));
        let expected = SimulationTrace { n_x, n_c, n_u, rows: vec![] }.header();
        if header != expected {
            return Err(TraceCsvError::Malformed(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| TraceCsvError::Malformed(format!("{s:?}: {e}")));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f: Vec<&str> = rec.iter().collect();
            let k = f[0].parse::<u64>().map_err(|e| TraceCsvError::Malformed(e.to_string()))?;
            let vals = f[1..1 + n_x + n_c + n_u].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
            let tail = &f[1 + n_x + n_c + n_u..];
            let overflow = match tail[2] {
                "0" => false,
                "1" => true,
                other => return Err(TraceCsvError::Malformed(format!("overflow flag {other:?}"))),
            };
            rows.push(TraceRow {
                k,
                x: vals[..n_x].to_vec(),
                x_c: vals[n_x..n_x + n_c].to_vec(),
                u: vals[n_x + n_c..].to_vec(),
                y: vec![],
                norm_x: num(tail[0])?,
                norm_xc: num(tail[1])?,
                overflow,
                budgets: None,
            });
        }
        Ok(SimulationTrace { n_x, n_c, n_u, rows })
    }

    pub fn any_overflow(&self) -> bool {
        self.rows.iter().any(|r| r.overflow)
    }

    pub fn max_norm_x(&self) -> f64 {
        self.rows.iter().map(|r| r.norm_x).fold(0.0, f64::max)
    }
}
