//! Framing: `u32` big-endian length of everything after it, a one-byte
//! message type, then the payload.

use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};

use super::NetError;
use crate::controller_runtime::{QuantizedController, ResetPeriod, SessionParams};
use crate::crypto_paillier::{parse_biguint, Ciphertext, PublicKey};
use crate::fixedpoint::{FixedPointFormat, IntegerRingParams};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a frame body; a 2048-bit key with a handful of channels
/// stays far below it.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    Ack = 0x02,
    SensorData = 0x03,
    ControlData = 0x04,
    Bye = 0x05,
    Error = 0x7F,
}

impl TryFrom<u8> for MessageType {
    type Error = NetError;
    fn try_from(b: u8) -> Result<Self, NetError> {
        Ok(match b {
            0x01 => MessageType::Hello,
            0x02 => MessageType::Ack,
            0x03 => MessageType::SensorData,
            0x04 => MessageType::ControlData,
            0x05 => MessageType::Bye,
            0x7F => MessageType::Error,
            other => return Err(NetError::protocol(None, format!("unknown message type 0x{other:02x}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&((self.payload.len() + 1) as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), NetError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; a clean end of stream before the length prefix yields `None`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, NetError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(NetError::protocol(None, format!("frame length {len} outside 1..={MAX_FRAME_LEN}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let kind = MessageType::try_from(body[0])?;
    body.remove(0);
    Ok(Some(Frame { kind, payload: body }))
}

/// Session binding sent by the plant side and echoed in the cloud's ACK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHello {
    pub version: u32,
    pub n: u32,
    pub m: u32,
    pub n_tilde: u64,
    /// Reset period; `null` for a controller that never resets.
    #[serde(rename = "T")]
    pub t: Option<u64>,
    pub n_x: usize,
    pub n_c: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Decimal public modulus.
    pub kappa_p: String,
    pub session_id: u64,
    /// Seed of the cloud's randomness for fresh encryptions of zero.
    pub seed: u64,
    pub controller: QuantizedController,
}

impl SessionHello {
    pub fn new(
        session: &SessionParams,
        controller: &QuantizedController,
        n_x: usize,
        pk: &PublicKey,
        session_id: u64,
        seed: u64,
    ) -> Self {
        SessionHello {
            version: PROTOCOL_VERSION,
            n: session.format.n(),
            m: session.format.m(),
            n_tilde: session.ring.n_tilde,
            t: match session.period {
                ResetPeriod::Every(t) => Some(t),
                ResetPeriod::Never => None,
            },
            n_x,
            n_c: controller.n_c(),
            n_u: controller.n_u(),
            n_y: controller.n_y(),
            kappa_p: pk.kappa_p().to_str_radix(10),
            session_id,
            seed,
            controller: controller.clone(),
        }
    }

    /// Checks every binding and returns the session and public key it describes.
    pub fn validate(&self) -> Result<(SessionParams, PublicKey), NetError> {
        let bad = |msg: String| NetError::protocol(None, msg);
        if self.version != PROTOCOL_VERSION {
            return Err(bad(format!("protocol version {} is not {PROTOCOL_VERSION}", self.version)));
        }
        if [self.n_x, self.n_c, self.n_u, self.n_y].contains(&0) {
            return Err(bad("all dimensions must be positive".into()));
        }
        let q = &self.controller;
        if (q.n_c(), q.n_u(), q.n_y()) != (self.n_c, self.n_u, self.n_y) {
            return Err(bad(format!(
                "controller is ({}, {}, {}) but the hello declares (n_c, n_u, n_y) = ({}, {}, {})",
                q.n_c(),
                q.n_u(),
                q.n_y(),
                self.n_c,
                self.n_u,
                self.n_y
            )));
        }
        let format = FixedPointFormat::new(self.n, self.m).map_err(|e| bad(e.to_string()))?;
        if q.format() != format {
            return Err(bad(format!("controller format {} differs from Q({},{})", q.format(), self.n, self.m)));
        }
        let period = match self.t {
            Some(t) => ResetPeriod::every(t)?,
            None => ResetPeriod::Never,
        };
        let ring = IntegerRingParams::new(self.n_tilde).map_err(|e| bad(e.to_string()))?;
        let session = SessionParams { format, ring, period };
        session.validate(self.n_c, self.n_y)?;
        let pk = PublicKey::new(parse_biguint(&self.kappa_p)?)?;
        session.validate_key(&pk)?;
        Ok((session, pk))
    }
}

/// `SENSOR_DATA` / `CONTROL_DATA` payload: `u64` step, `u32` count, then the
/// length-prefixed ciphertexts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMessage {
    pub k: u64,
    pub ciphertexts: Vec<Ciphertext>,
}

impl StepMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.k.to_be_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u32).to_be_bytes());
        for c in &self.ciphertexts {
            c.encode_into(&mut out);
        }
        out
    }

    pub fn decode(buf: &[u8], pk: &PublicKey) -> Result<Self, NetError> {
        if buf.len() < 12 {
            return Err(NetError::protocol(None, "step message shorter than its header".into()));
        }
        let k = u64::from_be_bytes(buf[..8].try_into().expect("8 bytes"));
        let count = u32::from_be_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
        let mut pos = 12;
        let mut ciphertexts = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (c, used) =
                Ciphertext::decode(&buf[pos..], pk).map_err(|e| NetError::protocol(Some(k), e.to_string()))?;
            ciphertexts.push(c);
            pos += used;
        }
        if pos != buf.len() {
            return Err(NetError::protocol(Some(k), format!("{} trailing bytes", buf.len() - pos)));
        }
        Ok(StepMessage { k, ciphertexts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto_paillier::Keypair;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn frame_layout_is_byte_exact() {
        let f = Frame::new(MessageType::Bye, vec![]);
        assert_eq!(f.encode(), vec![0, 0, 0, 1, 0x05]);
        let f = Frame::new(MessageType::Error, b"no".to_vec());
        assert_eq!(f.encode(), vec![0, 0, 0, 3, 0x7F, b'n', b'o']);
    }

    #[test]
    fn step_message_layout_with_toy_key() {
        let kp = Keypair::from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap();
        let c = kp.public.encrypt_with_nonce(&BigUint::from(4u32), &BigUint::from(2u32)).unwrap();
        let msg = StepMessage { k: 3, ciphertexts: vec![c] };
        let bytes = msg.encode();
        assert_eq!(bytes, vec![0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 88]);
        assert_eq!(StepMessage::decode(&bytes, &kp.public).unwrap(), msg);
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        let kp = Keypair::from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap();
        assert!(StepMessage::decode(&[0; 5], &kp.public).is_err());
        let mut bad = vec![0, 0, 0, 0, 0, 0, 0, 9, 0, 0, 0, 1, 0, 0, 0, 2, 0x10, 0x00];
        let err = StepMessage::decode(&bad, &kp.public).unwrap_err();
        assert!(matches!(err, NetError::Protocol { k: Some(9), .. }), "{err}");
        bad.push(1);
        assert!(StepMessage::decode(&bad, &kp.public).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 1, 0x42][..]).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 0][..]).is_err());
        assert_eq!(read_frame(&mut &[][..]).unwrap(), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn step_messages_round_trip(seed in any::<u64>(), k in any::<u64>(), count in 0usize..5) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let kp = Keypair::generate(64, &mut rng).unwrap();
            let cts: Vec<Ciphertext> = (0..count)
                .map(|i| kp.public.encrypt(&BigUint::from(i as u32), &mut rng).unwrap())
                .collect();
            let msg = StepMessage { k, ciphertexts: cts };
            let frame = Frame::new(MessageType::SensorData, msg.encode());
            let back = read_frame(&mut frame.encode().as_slice()).unwrap().unwrap();
            prop_assert_eq!(back.kind, MessageType::SensorData);
            prop_assert_eq!(StepMessage::decode(&back.payload, &kp.public).unwrap(), msg);
        }
    }
}
