//! Sensor/actuator and cloud as separate endpoints of a framed byte stream.
//!
//! The plant side quantizes, encrypts, decrypts and drives the plant; the
//! cloud side holds only the public modulus and the integer controller. One
//! `SENSOR_DATA` frame is answered by exactly one `CONTROL_DATA` frame.

mod roles;
mod wire;

use thiserror::Error;

use crate::controller_runtime::RuntimeError;
use crate::crypto_paillier::PaillierError;

pub use roles::{
    connect_plant, loopback, run_cloud, run_plant, serve_cloud_once, CloudReport, LoopbackReport, PlantConfig,
    PlantReport, Recorder, DEFAULT_TIMEOUT,
};
pub use wire::{
    read_frame, write_frame, Frame, MessageType, SessionHello, StepMessage, MAX_FRAME_LEN, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error{}: {msg}", k.map(|k| format!(" at step {k}")).unwrap_or_default())]
    Protocol { k: Option<u64>, msg: String },
    #[error("peer reported: {0}")]
    Remote(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error("session document: {0}")]
    Json(#[from] serde_json::Error),
}

impl NetError {
    pub(crate) fn protocol(k: Option<u64>, msg: String) -> Self {
        NetError::Protocol { k, msg }
    }
}
