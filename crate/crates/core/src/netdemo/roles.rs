use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use num_bigint::BigUint;

use super::wire::{read_frame, write_frame, Frame, MessageType, SessionHello, StepMessage};
use super::NetError;
use crate::controller_runtime::{
    cloud_rng, exceeds_ring, sensor_rng, Actuator, EncryptedCloud, QuantizedController, RuntimeError, Sensor,
    SessionParams, SimulationTrace, TraceRow,
};
use crate::crypto_paillier::{Keypair, PublicKey};
use crate::fixedpoint::budgets_at_phase;
use crate::plant::PlantModel;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Stream wrapper keeping a copy of every byte sent and received.
#[derive(Debug)]
pub struct Recorder<S> {
    inner: S,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

impl<S> Recorder<S> {
    pub fn new(inner: S) -> Self {
        Recorder { inner, sent: Vec::new(), received: Vec::new() }
    }
}

impl<S: Read> Read for Recorder<S> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.received.extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<S: Write> Write for Recorder<S> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.sent.extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Sends an `ERROR` frame on a best-effort basis and hands the error back.
fn report<S: Write>(stream: &mut S, err: NetError) -> NetError {
    let _ = write_frame(stream, &Frame::new(MessageType::Error, err.to_string().into_bytes()));
    err
}

fn expect_frame<S: Read>(stream: &mut S, k: Option<u64>) -> Result<Frame, NetError> {
    let frame = read_frame(stream)?.ok_or_else(|| NetError::protocol(k, "peer closed the stream".into()))?;
    if frame.kind == MessageType::Error {
        return Err(NetError::Remote(String::from_utf8_lossy(&frame.payload).into_owned()));
    }
    Ok(frame)
}

#[derive(Debug, Clone)]
pub struct CloudReport {
    pub hello: SessionHello,
    pub steps: u64,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

impl CloudReport {
    /// Every byte that crossed the cloud's endpoint, received then sent.
    pub fn transcript(&self) -> Vec<u8> {
        [self.received.as_slice(), self.sent.as_slice()].concat()
    }
}

/// Serves one session over an established stream until `BYE`. The cloud only
/// ever sees the public modulus, so no decryption is possible here.
pub fn run_cloud<S: Read + Write>(stream: S) -> Result<CloudReport, NetError> {
    let mut rec = Recorder::new(stream);
    let outcome = cloud_session(&mut rec);
    match outcome {
        Ok((hello, steps)) => Ok(CloudReport { hello, steps, sent: rec.sent, received: rec.received }),
        Err(e @ NetError::Remote(_)) => Err(e),
        Err(e) => Err(report(&mut rec, e)),
    }
}

fn cloud_session<S: Read + Write>(rec: &mut Recorder<S>) -> Result<(SessionHello, u64), NetError> {
    let frame = expect_frame(rec, None)?;
    if frame.kind != MessageType::Hello {
        return Err(NetError::protocol(None, format!("expected HELLO, got {:?}", frame.kind)));
    }
    let hello: SessionHello = serde_json::from_slice(&frame.payload)?;
    let (session, pk) = hello.validate()?;
    let mut cloud = EncryptedCloud::new(hello.controller.clone(), session, pk.clone(), cloud_rng(hello.seed))?;
    write_frame(rec, &Frame::new(MessageType::Ack, hello.session_id.to_be_bytes().to_vec()))?;
    loop {
        let k = cloud.k();
        let frame = expect_frame(rec, Some(k))?;
        match frame.kind {
            MessageType::SensorData => {
                let msg = StepMessage::decode(&frame.payload, &pk)?;
                if msg.k != k {
                    return Err(NetError::protocol(Some(k), format!("SENSOR_DATA for step {}", msg.k)));
                }
                let state = cloud.state().to_vec();
                let mut ciphertexts =
                    cloud.step(&msg.ciphertexts).map_err(|e| NetError::protocol(Some(k), e.to_string()))?;
                ciphertexts.extend(state);
                write_frame(rec, &Frame::new(MessageType::ControlData, StepMessage { k, ciphertexts }.encode()))?;
            }
            MessageType::Bye => {
                write_frame(rec, &Frame::new(MessageType::Bye, vec![]))?;
                return Ok((hello, k));
            }
            other => return Err(NetError::protocol(Some(k), format!("unexpected {other:?}"))),
        }
    }
}

/// Everything the sensor/actuator process holds, private key included.
#[derive(Debug, Clone)]
pub struct PlantConfig {
    pub plant: PlantModel,
    pub controller: QuantizedController,
    pub session: SessionParams,
    pub keypair: Keypair,
    pub seed: u64,
    pub session_id: u64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct PlantReport {
    pub trace: SimulationTrace,
    /// Decrypted ring inputs `ũ[k]`.
    pub u_tilde: Vec<Vec<BigUint>>,
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Drives the plant through a remote cloud for `cfg.steps` steps.
pub fn run_plant<S: Read + Write>(stream: S, cfg: &PlantConfig) -> Result<PlantReport, NetError> {
    let mut rec = Recorder::new(stream);
    match plant_session(&mut rec, cfg) {
        Ok((trace, u_tilde)) => Ok(PlantReport { trace, u_tilde, sent: rec.sent, received: rec.received }),
        Err(e @ NetError::Remote(_)) => Err(e),
        Err(e) => Err(report(&mut rec, e)),
    }
}

fn plant_session<S: Read + Write>(
    rec: &mut Recorder<S>,
    cfg: &PlantConfig,
) -> Result<(SimulationTrace, Vec<Vec<BigUint>>), NetError> {
    let (session, ctrl, pk): (SessionParams, &QuantizedController, &PublicKey) =
        (cfg.session, &cfg.controller, &cfg.keypair.public);
    ctrl.to_real().check_plant(&cfg.plant)?;
    let (n_c, n_u, n_y) = (ctrl.n_c(), ctrl.n_u(), ctrl.n_y());
    let hello = SessionHello::new(&session, ctrl, cfg.plant.n_x(), pk, cfg.session_id, cfg.seed);
    hello.validate()?;
    write_frame(rec, &Frame::new(MessageType::Hello, serde_json::to_vec(&hello)?))?;
    let ack = expect_frame(rec, None)?;
    if ack.kind != MessageType::Ack || ack.payload != cfg.session_id.to_be_bytes() {
        return Err(NetError::protocol(None, "handshake not acknowledged for this session".into()));
    }

    let mut sensor = Sensor::new(session, pk.clone(), sensor_rng(cfg.seed))?;
    let actuator = Actuator::new(session, cfg.keypair.clone(), n_c, n_y)?;
    let dims = session.budget_dims(n_c, n_y);
    let mut state = cfg.plant.initial_state();
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    let mut u_tilde = Vec::with_capacity(cfg.steps as usize);
    for k in 0..cfg.steps {
        let y = cfg.plant.output(&state);
        let reading = sensor.measure(&y)?;
        let msg = StepMessage { k, ciphertexts: reading.y_check };
        write_frame(rec, &Frame::new(MessageType::SensorData, msg.encode()))?;
        let frame = expect_frame(rec, Some(k))?;
        if frame.kind != MessageType::ControlData {
            return Err(NetError::protocol(Some(k), format!("expected CONTROL_DATA, got {:?}", frame.kind)));
        }
        let reply = StepMessage::decode(&frame.payload, pk)?;
        if reply.k != k || reply.ciphertexts.len() != n_u + n_c {
            return Err(NetError::protocol(
                Some(k),
                format!("CONTROL_DATA for step {} with {} ciphertexts", reply.k, reply.ciphertexts.len()),
            ));
        }
        let (u_check, x_check) = reply.ciphertexts.split_at(n_u);
        let x_c = actuator.decode_state(k, x_check)?;
        let out = actuator.extract(k, u_check)?;
        let next = cfg.plant.step(&state, &out.u).map_err(RuntimeError::from)?;
        rows.push(TraceRow {
            k,
            norm_x: norm(&state.x),
            norm_xc: norm(&x_c),
            x: state.x,
            x_c,
            u: out.u,
            y,
            overflow: reading.saturated || out.budget_violation || exceeds_ring(&session, k, dims),
            budgets: Some(budgets_at_phase(session.period.phase(k), dims)),
        });
        u_tilde.push(out.u_tilde);
        state = next;
    }
    write_frame(rec, &Frame::new(MessageType::Bye, vec![]))?;
    let bye = expect_frame(rec, Some(cfg.steps))?;
    if bye.kind != MessageType::Bye {
        return Err(NetError::protocol(Some(cfg.steps), format!("expected BYE, got {:?}", bye.kind)));
    }
    let trace = SimulationTrace { n_x: cfg.plant.n_x(), n_c, n_u, rows };
    Ok((trace, u_tilde))
}

fn with_timeouts(stream: TcpStream, timeout: Duration) -> Result<TcpStream, NetError> {
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    Ok(stream)
}

/// Accepts one connection and serves it.
pub fn serve_cloud_once(listener: &TcpListener, timeout: Duration) -> Result<CloudReport, NetError> {
    let (stream, _) = listener.accept()?;
    run_cloud(with_timeouts(stream, timeout)?)
}

pub fn connect_plant<A: ToSocketAddrs>(addr: A, cfg: &PlantConfig, timeout: Duration) -> Result<PlantReport, NetError> {
    let addr: SocketAddr =
        addr.to_socket_addrs()?.next().ok_or_else(|| NetError::protocol(None, "address resolves to nothing".into()))?;
    let stream = TcpStream::connect_timeout(&addr, timeout)?;
    run_plant(with_timeouts(stream, timeout)?, cfg)
}

#[derive(Debug, Clone)]
pub struct LoopbackReport {
    pub plant: PlantReport,
    pub cloud: CloudReport,
}

/// Both endpoints in one process over a TCP socket on `127.0.0.1`.
pub fn loopback(cfg: &PlantConfig, timeout: Duration) -> Result<LoopbackReport, NetError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let cloud = thread::spawn(move || serve_cloud_once(&listener, timeout));
    let plant = connect_plant(addr, cfg, timeout);
    let cloud = cloud.join().map_err(|_| NetError::protocol(None, "cloud thread panicked".into()))?;
    Ok(LoopbackReport { plant: plant?, cloud: cloud? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller_runtime::{run_closed_loop, EncryptedPipeline, ResetPeriod};
    use crate::fixedpoint::{FixedPointFormat, IntegerRingParams};
    use crate::plant::batch_reactor;
    use crate::presets::reactor_controller_t8;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::io::Cursor;
    use std::sync::OnceLock;

    fn keypair() -> &'static Keypair {
        static KEY: OnceLock<Keypair> = OnceLock::new();
        KEY.get_or_init(|| Keypair::generate(232, &mut ChaCha20Rng::seed_from_u64(21)).unwrap())
    }

    fn config(steps: u64) -> PlantConfig {
        let format = FixedPointFormat::new(20, 8).unwrap();
        PlantConfig {
            plant: batch_reactor(),
            controller: reactor_controller_t8().quantize(format).unwrap().value,
            session: SessionParams {
                format,
                ring: IntegerRingParams::new(220).unwrap(),
                period: ResetPeriod::Every(8),
            },
            keypair: keypair().clone(),
            seed: 5,
            session_id: 0xfeed,
            steps,
        }
    }

    /// In-memory duplex: reads from a fixed script, collects writes.
    struct Scripted {
        input: Cursor<Vec<u8>>,
        output: Vec<u8>,
    }

    impl Read for Scripted {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            self.input.read(buf)
        }
    }

    impl Write for Scripted {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.output.write(buf)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn hello_frame(cfg: &PlantConfig) -> Vec<u8> {
        let hello = SessionHello::new(&cfg.session, &cfg.controller, 4, &cfg.keypair.public, cfg.session_id, cfg.seed);
        Frame::new(MessageType::Hello, serde_json::to_vec(&hello).unwrap()).encode()
    }

    #[test]
    fn loopback_equals_in_process_and_is_deterministic() {
        let cfg = config(17);
        let a = loopback(&cfg, DEFAULT_TIMEOUT).unwrap();
        let mut local =
            EncryptedPipeline::new(cfg.controller.clone(), cfg.session, cfg.keypair.clone(), cfg.seed).unwrap();
        let expected = run_closed_loop(&cfg.plant, &mut local, cfg.steps).unwrap();
        assert_eq!(a.plant.trace, expected);
        assert_eq!(a.cloud.steps, 17);
        assert_eq!(a.plant.sent, a.cloud.received);
        assert_eq!(a.plant.received, a.cloud.sent);
        let b = loopback(&cfg, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(a.cloud.transcript(), b.cloud.transcript());
    }

    #[test]
    fn cloud_transcript_holds_no_private_material() {
        let cfg = config(3);
        let report = loopback(&cfg, DEFAULT_TIMEOUT).unwrap();
        let transcript = report.cloud.transcript();
        let hay = |needle: &[u8]| transcript.windows(needle.len()).any(|w| w == needle);
        let file = cfg.keypair.to_file(crate::crypto_paillier::KeyRadix::Decimal);
        for secret in [file.lambda.unwrap(), file.mu_dec.unwrap()] {
            let v = crate::crypto_paillier::parse_biguint(&secret).unwrap();
            assert!(!hay(&v.to_bytes_be()));
            assert!(!hay(secret.as_bytes()));
        }
    }

    #[test]
    fn zero_output_gives_zero_input() {
        let mut cfg = config(1);
        cfg.plant = cfg.plant.with_x0(vec![0.0; 4]).unwrap();
        let report = loopback(&cfg, DEFAULT_TIMEOUT).unwrap();
        assert_eq!(report.plant.trace.rows[0].u, vec![0.0]);
        assert_eq!(report.plant.u_tilde[0], vec![BigUint::default()]);
    }

    #[test]
    fn tampered_ciphertexts_are_flagged() {
        let cfg = config(1);
        let mut sensor = Sensor::new(cfg.session, cfg.keypair.public.clone(), sensor_rng(1)).unwrap();
        let mut cloud =
            EncryptedCloud::new(cfg.controller.clone(), cfg.session, cfg.keypair.public.clone(), cloud_rng(1)).unwrap();
        let actuator = Actuator::new(cfg.session, cfg.keypair.clone(), 4, 2).unwrap();
        let reading = sensor.measure(&cfg.plant.output(&cfg.plant.initial_state())).unwrap();
        let u = cloud.step(&reading.y_check).unwrap();
        let mut bytes = Vec::new();
        u[0].encode_into(&mut bytes);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut flagged = 0;
        for _ in 0..100 {
            let mut bad = bytes.clone();
            let i = rng.gen_range(4..bad.len());
            bad[i] ^= 1 << rng.gen_range(0..8);
            let caught = match crate::crypto_paillier::Ciphertext::decode(&bad, &cfg.keypair.public) {
                Ok((c, _)) => actuator.extract(0, &[c]).map_or(true, |o| o.budget_violation),
                Err(_) => true,
            };
            flagged += caught as u32;
        }
        assert!(flagged >= 99, "{flagged}");
    }

    #[test]
    fn malformed_sensor_frame_reports_the_step() {
        let cfg = config(1);
        let mut script = hello_frame(&cfg);
        script.extend(Frame::new(MessageType::SensorData, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0]).encode());
        let stream = Scripted { input: Cursor::new(script), output: Vec::new() };
        let err = run_cloud(stream).unwrap_err();
        assert!(matches!(err, NetError::Protocol { k: Some(0), .. }), "{err}");
    }

    #[test]
    fn cloud_answers_errors_with_an_error_frame() {
        let cfg = config(1);
        let mut hello = SessionHello::new(&cfg.session, &cfg.controller, 4, &cfg.keypair.public, 1, 1);
        hello.n_tilde = 40;
        let script = Frame::new(MessageType::Hello, serde_json::to_vec(&hello).unwrap()).encode();
        let mut stream = Scripted { input: Cursor::new(script), output: Vec::new() };
        let err = run_cloud(&mut stream).unwrap_err();
        assert!(err.to_string().contains("ring width 40"), "{err}");
        let frame = read_frame(&mut stream.output.as_slice()).unwrap().unwrap();
        assert_eq!(frame.kind, MessageType::Error);
        assert_eq!(frame.payload, err.to_string().into_bytes());
    }

    #[test]
    fn unacknowledged_session_is_refused() {
        let cfg = config(1);
        let script = Frame::new(MessageType::Ack, 7u64.to_be_bytes().to_vec()).encode();
        let err = run_plant(Scripted { input: Cursor::new(script), output: Vec::new() }, &cfg).unwrap_err();
        assert!(matches!(err, NetError::Protocol { .. }), "{err}");
    }
}
