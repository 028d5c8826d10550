pub mod analysis;
pub mod controller_runtime;
pub mod crypto_paillier;
pub mod fixedpoint;
pub mod linalg;
pub mod netdemo;
pub mod plant;
pub mod presets;
pub mod synthesis;
