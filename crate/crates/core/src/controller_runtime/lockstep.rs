use super::encrypted::{cloud_rng, sensor_rng};
use super::{
    sensor_ring_image, Actuator, EncryptedCloud, IntegerRealization, QuantizedController, QuantizedRealization,
    RealController, RuntimeError, Sensor, SessionParams,
};
use crate::crypto_paillier::Keypair;
use crate::fixedpoint::{from_ring_exact, proj};
use crate::plant::PlantModel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockstepMismatch {
    pub k: u64,
    pub signal: &'static str,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockstepReport {
    pub steps: u64,
    /// Every step and component where an exact realization disagreed with the quantized one.
    pub mismatches: Vec<LockstepMismatch>,
    /// Largest `|u_real − ū| / max(1, |ū|)` of the floating-point realization run on quantized data.
    pub max_real_deviation: f64,
    pub encrypted_checked: bool,
}

impl LockstepReport {
    pub fn all_exact(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn first_mismatch(&self) -> Option<u64> {
        self.mismatches.iter().map(|m| m.k).min()
    }
}

/// Drives the plant with the quantized realization and feeds the identical
/// quantized measurements to the integer, encrypted (when a key is given) and
/// floating-point realizations, comparing every signal at every step.
pub fn lockstep(
    plant: &PlantModel,
    ctrl: &QuantizedController,
    session: SessionParams,
    keypair: Option<&Keypair>,
    seed: u64,
    horizon: u64,
) -> Result<LockstepReport, RuntimeError> {
    let mut quantized = QuantizedRealization::new(ctrl.clone(), session.period);
    let mut integer = IntegerRealization::new(ctrl.clone(), session);
    let mut real = RealController::new(ctrl.to_real(), session.period);
    let mut encrypted = match keypair {
        Some(kp) => Some((
            Sensor::new(session, kp.public.clone(), sensor_rng(seed))?,
            EncryptedCloud::new(ctrl.clone(), session, kp.public.clone(), cloud_rng(seed))?,
            Actuator::new(session, kp.clone(), ctrl.n_c(), ctrl.n_y())?,
        )),
        None => None,
    };
    let ring = session.ring;
    let mut report = LockstepReport {
        steps: horizon,
        mismatches: vec![],
        max_real_deviation: 0.0,
        encrypted_checked: keypair.is_some(),
    };
    let mut state = plant.initial_state();

    for k in 0..horizon {
        let y = plant.output(&state);
        let y_bar = y.iter().map(|&v| proj(v, session.format).map(|p| p.value)).collect::<Result<Vec<_>, _>>()?;
        let y_tilde = sensor_ring_image(&y_bar, ring);

        let u_bar = quantized.step(&y_bar)?;
        let u_tilde = integer.step(&y_tilde)?;
        let y_real: Vec<f64> = y_bar.iter().map(|s| s.to_f64()).collect();
        let u_real = real.step(&y_real)?;

        let u_scale = session.input_scale(k);
        for (i, (q, w)) in u_bar.iter().zip(&u_tilde).enumerate() {
            if &from_ring_exact(w, u_scale, ring)? != q {
                report.mismatches.push(LockstepMismatch { k, signal: "integer u", component: i });
            }
            let uq = q.to_f64();
            let dev = (u_real[i] - uq).abs() / uq.abs().max(1.0);
            report.max_real_deviation = report.max_real_deviation.max(dev);
        }
        let x_scale = session.state_scale(k + 1);
        for (i, (q, w)) in quantized.state().iter().zip(integer.state()).enumerate() {
            if &from_ring_exact(w, x_scale, ring)? != q {
                report.mismatches.push(LockstepMismatch { k, signal: "integer x_c", component: i });
            }
        }

        if let Some((sensor, cloud, actuator)) = encrypted.as_mut() {
            let reading = sensor.measure(&y)?;
            if reading.y_tilde != y_tilde {
                report.mismatches.push(LockstepMismatch { k, signal: "encrypted y", component: 0 });
            }
            let u_check = cloud.step(&reading.y_check)?;
            let out = actuator.extract(k, &u_check)?;
            for (i, (w, e)) in u_tilde.iter().zip(&out.u_tilde).enumerate() {
                if w != e {
                    report.mismatches.push(LockstepMismatch { k, signal: "encrypted u", component: i });
                }
            }
            let x_dec = actuator.decrypt_state(cloud.state())?;
            for (i, (w, e)) in integer.state().iter().zip(&x_dec).enumerate() {
                if w != e {
                    report.mismatches.push(LockstepMismatch { k, signal: "encrypted x_c", component: i });
                }
            }
        }

        let u: Vec<f64> = u_bar.iter().map(|d| d.to_f64()).collect();
        state = plant.step(&state, &u)?;
    }
    Ok(report)
}
