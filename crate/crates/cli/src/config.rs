use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rescon_core::controller_runtime::{ControllerMatrices, QuantizedController, ResetPeriod, SessionParams};
use rescon_core::crypto_paillier::{KeyFile, Keypair, DEFAULT_KEY_BITS};
use rescon_core::fixedpoint::{auto_ring_bits, FixedPointFormat, IntegerRingParams};
use rescon_core::plant::{batch_reactor, PlantModel};
use rescon_core::presets::{reactor_controller_t25, reactor_controller_t8};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Ring width: a number of bits or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RingBitsRepr", into = "RingBitsRepr")]
pub enum RingBits {
    Auto,
    Bits(u64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RingBitsRepr {
    Bits(u64),
    Word(String),
}

impl TryFrom<RingBitsRepr> for RingBits {
    type Error = String;
    fn try_from(r: RingBitsRepr) -> Result<Self, String> {
        match r {
            RingBitsRepr::Bits(b) => Ok(RingBits::Bits(b)),
            RingBitsRepr::Word(w) => w.parse(),
        }
    }
}

impl From<RingBits> for RingBitsRepr {
    fn from(r: RingBits) -> Self {
        match r {
            RingBits::Auto => RingBitsRepr::Word("auto".into()),
            RingBits::Bits(b) => RingBitsRepr::Bits(b),
        }
    }
}

impl FromStr for RingBits {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RingBits::Auto);
        }
        s.parse().map(RingBits::Bits).map_err(|_| format!("ring width {s:?} is neither a bit count nor `auto`"))
    }
}

impl fmt::Display for RingBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RingBits::Auto => f.write_str("auto"),
            RingBits::Bits(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Realization {
    Real,
    Quantized,
    Integer,
    Encrypted,
}

/// Run parameters, loadable from JSON with `--config`; flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Plant: `reactor` or a JSON file with `A`, `B`, `C`, `x0`.
    #[arg(long)]
    pub plant: Option<String>,
    /// Controller: `reactor-t25`, `reactor-t8`, or a JSON file with `a_c`, `b_c`, `c_c`, `d_c`.
    #[arg(long)]
    pub controller: Option<String>,
    /// Total bits of the fixed-point format.
    #[arg(long)]
    pub n: Option<u32>,
    /// Fractional bits of the fixed-point format.
    #[arg(long)]
    pub m: Option<u32>,
    /// Reset period.
    #[arg(long = "period", short = 'T')]
    #[serde(rename = "T")]
    pub period: Option<u64>,
    /// Never reset the controller state.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_reset: Option<bool>,
    /// Ring width in bits, or `auto`.
    #[arg(long)]
    pub ring_bits: Option<RingBits>,
    /// Paillier modulus size for generated keys.
    #[arg(long)]
    pub key_bits: Option<u64>,
    /// Key file produced by `keygen`; generated from the seed when absent.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of steps.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long, value_enum)]
    pub realization: Option<Realization>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Loads `--config` when given and lays the flags over it.
    pub fn merged(file: Option<&Path>, flags: &RunConfig) -> Result<RunConfig, CliError> {
        let mut base: RunConfig = match file {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($f:ident),*) => { $( if flags.$f.is_some() { base.$f = flags.$f.clone(); } )* };
        }
        overlay!(plant, controller, n, m, period, no_reset, ring_bits, key_bits, key, seed, horizon, realization, out);
        Ok(base)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Parse { path: path.display().to_string(), message: e.to_string() })
}

pub fn load_plant(src: &str) -> Result<PlantModel, CliError> {
    match src {
        "reactor" | "batch-reactor" => Ok(batch_reactor()),
        path => read_json(Path::new(path)),
    }
}

/// Preset name to controller and its design period.
pub fn preset_controller(name: &str) -> Option<(ControllerMatrices, u64)> {
    match name {
        "reactor-t25" => Some((reactor_controller_t25(), 25)),
        "reactor-t8" => Some((reactor_controller_t8(), 8)),
        _ => None,
    }
}

pub fn load_controller(src: &str) -> Result<(ControllerMatrices, Option<u64>), CliError> {
    match preset_controller(src) {
        Some((c, t)) => Ok((c, Some(t))),
        None => Ok((read_json(Path::new(src))?, None)),
    }
}

/// Everything a run needs, with defaults applied and invariants checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: PlantModel,
    pub controller: ControllerMatrices,
    pub quantized: QuantizedController,
    pub session: SessionParams,
    pub key_bits: u64,
    pub key: Option<PathBuf>,
    pub seed: u64,
    pub horizon: u64,
    pub realization: Realization,
    pub out: Option<PathBuf>,
}

pub struct Defaults {
    pub controller: &'static str,
    pub horizon: u64,
    pub realization: Realization,
}

pub const SIMULATE_DEFAULTS: Defaults =
    Defaults { controller: "reactor-t25", horizon: 1000, realization: Realization::Integer };

impl Resolved {
    pub fn new(cfg: &RunConfig, defaults: &Defaults) -> Result<Resolved, CliError> {
        let plant = load_plant(cfg.plant.as_deref().unwrap_or("reactor"))?;
        let (controller, design_t) = load_controller(cfg.controller.as_deref().unwrap_or(defaults.controller))?;
        controller.check_plant(&plant).map_err(|e| CliError::invariant("controller matches plant", e))?;
        let n = cfg.n.unwrap_or(24);
        let m = cfg.m.unwrap_or(14);
        let format = FixedPointFormat::new(n, m).map_err(|e| CliError::invariant("1 <= n <= 62 and m <= n", e))?;
        let realization = cfg.realization.unwrap_or(defaults.realization);
        let projected = controller.quantize(format)?;
        if projected.saturated && realization != Realization::Real {
            return Err(CliError::invariant("controller entries fit Q(n,m)", format!("some entry saturates {format}")));
        }
        let quantized = projected.value;
        let no_reset = cfg.no_reset.unwrap_or(false);
        let t = cfg.period.or(design_t);
        let period = if no_reset {
            ResetPeriod::Never
        } else {
            let t =
                t.ok_or_else(|| CliError::invariant("T given", "a controller file needs an explicit reset period"))?;
            ResetPeriod::every(t).map_err(|e| CliError::invariant("T >= 1", e))?
        };
        let n_tilde = match (cfg.ring_bits.unwrap_or(RingBits::Auto), period) {
            (RingBits::Bits(b), _) => b,
            (RingBits::Auto, ResetPeriod::Every(t)) => {
                auto_ring_bits(t, n as u64, controller.n_c() as u64, controller.n_y() as u64, controller.n_u() as u64)
            }
            (RingBits::Auto, ResetPeriod::Never) => {
                return Err(CliError::invariant("ring width given", "`auto` needs a reset period"))
            }
        };
        let ring = IntegerRingParams::new(n_tilde).map_err(|e| CliError::invariant("ring width >= 2", e))?;
        let session = SessionParams { format, ring, period };
        session
            .validate(controller.n_c(), controller.n_y())
            .map_err(|e| CliError::invariant("ring holds a full period", e))?;
        Ok(Resolved {
            plant,
            controller,
            quantized,
            session,
            key_bits: cfg.key_bits.unwrap_or(DEFAULT_KEY_BITS),
            key: cfg.key.clone(),
            seed: cfg.seed.unwrap_or(0),
            horizon: cfg.horizon.unwrap_or(defaults.horizon),
            realization,
            out: cfg.out.clone(),
        })
    }

    /// The configured key file, or a key generated from the seed.
    pub fn keypair(&self) -> Result<Keypair, CliError> {
        let kp = match &self.key {
            Some(path) => read_json::<KeyFile>(path)?.keypair()?,
            None => Keypair::generate(self.key_bits, &mut key_rng(self.seed))?,
        };
        self.session.validate_key(&kp.public).map_err(|e| CliError::invariant("kappa_p >= 2^(ring bits + 1)", e))?;
        Ok(kp)
    }
}

/// Randomness for keys generated from a run seed, separate from the loop streams.
pub fn key_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}
