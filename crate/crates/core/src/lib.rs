//! Deterministic simulator of a last-level-cache Prime+Probe side channel
//! against square-and-multiply RSA, from eviction-set construction through
//! multi-trace key recovery.
//!
//! The pipeline, end to end:
//! 1. [`addr`]/[`cache`]/[`dram`]: the machine model — set/slice indexing,
//!    a sliced set-associative LLC with an imperfect-LRU policy, and an
//!    open-row DRAM timing model with an XOR bank hash.
//! 2. [`kernel`]: glue — derived random streams, the cycle clock, the
//!    interrupt/noise process, and the attacker's counting-thread clock.
//! 3. [`victim`]: the exponentiation whose multiplier-buffer sweeps leak.
//! 4. [`attacker`]: eviction sets from row-border anchoring, Prime+Probe
//!    monitoring, and scanning for the victim's sets.
//! 5. [`recovery`]: trace resampling, peak detection, and majority merge of
//!    partial keys.
//! 6. [`harness`]: end-to-end runs, parameter sweeps, and noise calibration;
//!    [`report`] serializes the artifacts.
//!
//! Everything downstream of a seed is reproducible: same configuration and
//! seed, same bytes out.

pub mod addr;
pub mod attacker;
pub mod cache;
pub mod config;
pub mod dram;
pub mod error;
pub mod kernel;
pub mod recovery;
pub mod victim;

pub use addr::{CacheGeometry, CacheLocation, DramMapping, PhysicalAddress};
pub use attacker::{EvictionSet, RawTrace, TraceMeta};
pub use cache::{CacheSim, ReplacementPolicy};
pub use config::ExperimentConfig;
pub use dram::{DramSim, DramTimings};
pub use error::SimError;
pub use kernel::SimKernel;
pub use victim::{RsaKey, VictimLayout};
