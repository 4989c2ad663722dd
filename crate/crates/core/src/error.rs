//! Error type shared across the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("eviction set for set {set} did not reach eviction rate {threshold} within {limit} candidates (best {best:.3}); check geometry, memory block size, and replacement policy")]
    EvictionUnreachable { set: u64, threshold: f64, limit: usize, best: f64 },

    #[error("no vulnerable cache set found: no monitored set matched the activity pattern")]
    NoVulnerableSet,

    #[error("trace too short to resample: spans {span} cycles, need at least one {window}-cycle window")]
    TraceTooShort { span: u64, window: u64 },

    #[error("cannot merge zero partial keys")]
    NoPartialKeys,

    #[error("unsupported key size {key_bits} bits: must be a positive multiple of 8 (table sizes: 1024, 2048, 4096, 8192)")]
    UnsupportedKeySize { key_bits: usize },

    #[error("counting timer needs at least 2 logical CPUs (found {found}); use the simulated counter (sim_kernel attacker clock) instead")]
    SingleCore { found: usize },

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
