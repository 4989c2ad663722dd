//! Experiment configuration: one structured TOML file covering geometry,
//! timings, memory layout, victim parameters, noise, and attack knobs.
//! Unknown keys are rejected so typos fail loudly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::addr::{CacheGeometry, DramMapping};
use crate::cache::ReplacementPolicy;
use crate::dram::DramTimings;
use crate::error::SimError;

/// Cycle-accounting constants. These are calibratable plumbing, not
/// measurements: defaults are chosen so the end-to-end pipeline reproduces the
/// reference probe and multiplication costs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timings {
    /// Latency of an isolated cache-hit load.
    pub hit_latency: u64,
    /// Per-access cost of a cache hit inside the attacker's tight probe loop,
    /// where back-to-back loads overlap in the pipeline.
    pub probe_hit_cost: u64,
    /// Cycles per counting-thread increment (the simulated attacker clock).
    pub counter_resolution: f64,
    /// Slowdown applied to victim multiplications while the attacker's probe
    /// and counter threads share the machine.
    pub contention_factor: f64,
    /// Simulated core frequency, used to convert second-based budgets.
    pub cpu_ghz: f64,
    pub dram: DramTimings,
}

impl Default for Timings {
    fn default() -> Self {
        Timings {
            hit_latency: 40,
            probe_hit_cost: 12,
            counter_resolution: 0.87,
            contention_factor: 1.41,
            cpu_ghz: 2.3,
            dram: DramTimings::default(),
        }
    }
}

impl Timings {
    pub fn validate(&self) -> Result<(), SimError> {
        self.dram.validate()?;
        if self.hit_latency == 0 || self.hit_latency >= self.dram.row_hit {
            return Err(SimError::Config(format!(
                "hit_latency ({}) must be positive and below the fastest miss ({})",
                self.hit_latency, self.dram.row_hit
            )));
        }
        if self.probe_hit_cost == 0 || self.probe_hit_cost > self.hit_latency {
            return Err(SimError::Config(format!(
                "probe_hit_cost ({}) must be in 1..=hit_latency ({})",
                self.probe_hit_cost, self.hit_latency
            )));
        }
        if !(self.counter_resolution > 0.0) {
            return Err(SimError::Config("counter_resolution must be positive".into()));
        }
        if !(self.contention_factor >= 1.0) {
            return Err(SimError::Config("contention_factor must be >= 1".into()));
        }
        if !(self.cpu_ghz > 0.0) {
            return Err(SimError::Config("cpu_ghz must be positive".into()));
        }
        Ok(())
    }
}

/// Physical placement of the two parties.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryLayout {
    /// Total modeled physical memory.
    pub physical_bytes: u64,
    /// Base of the attacker's contiguous block (page-aligned, as provided by
    /// the enclave's contiguous physical mapping).
    pub attacker_base: u64,
    pub attacker_bytes: u64,
    /// Base of the victim's multiplier buffer.
    pub victim_base: u64,
    /// Redraw the victim buffer base before every signature (heap
    /// randomization countermeasure).
    pub randomize_victim_base: bool,
}

impl Default for MemoryLayout {
    fn default() -> Self {
        MemoryLayout {
            physical_bytes: 256 * 1024 * 1024,
            attacker_base: 0x240_0000,
            attacker_bytes: 16 * 1024 * 1024,
            victim_base: 0x180_0800,
            randomize_victim_base: false,
        }
    }
}

impl MemoryLayout {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.attacker_base % 4096 != 0 {
            return Err(SimError::Config("attacker_base must be page-aligned".into()));
        }
        if self.attacker_bytes < 8 * 1024 * 1024 {
            return Err(SimError::Config(
                "attacker block must be at least 8 MiB (4 MiB row scan plus stride headroom)".into(),
            ));
        }
        if self.attacker_base + self.attacker_bytes > self.physical_bytes {
            return Err(SimError::Config("attacker block exceeds physical memory".into()));
        }
        if self.victim_base % 8 != 0 {
            return Err(SimError::Config("victim_base must be 8-byte aligned".into()));
        }
        if self.victim_base >= self.physical_bytes {
            return Err(SimError::Config("victim_base exceeds physical memory".into()));
        }
        Ok(())
    }

    pub fn attacker_end(&self) -> u64 {
        self.attacker_base + self.attacker_bytes
    }
}

/// Victim-side knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimConfig {
    pub key_bits: usize,
    /// Times each multiplier-buffer line is touched per multiply; touches are
    /// spread across the multiplication so a probe interval during a multiply
    /// almost surely observes at least one miss.
    pub k_touches: usize,
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig { key_bits: 4096, k_touches: 4 }
    }
}

/// Noise model: an interrupt process plus measurement noise. All rates are
/// zero by default; `calibrate` searches them to hit a target error rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Interrupt events per million cycles (Poisson process in time).
    pub interrupt_rate: f64,
    /// Uniform interrupt duration bounds, cycles.
    pub interrupt_min: u64,
    pub interrupt_max: u64,
    /// Which parties an interrupt deschedules (probabilities; the remainder
    /// hits unrelated cores and is a no-op). Descheduling both also suspends
    /// the counting thread.
    pub victim_desched_prob: f64,
    pub attacker_desched_prob: f64,
    pub both_desched_prob: f64,
    /// Per-probe probability of observing a spurious miss (prefetcher or
    /// unrelated cache activity).
    pub spurious_miss_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            interrupt_rate: 0.0,
            interrupt_min: 40_000,
            interrupt_max: 200_000,
            victim_desched_prob: 0.4,
            attacker_desched_prob: 0.4,
            both_desched_prob: 0.2,
            spurious_miss_rate: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.interrupt_rate < 0.0 || self.spurious_miss_rate < 0.0 {
            return Err(SimError::Config("noise rates must be nonnegative".into()));
        }
        if self.spurious_miss_rate >= 1.0 {
            return Err(SimError::Config("spurious_miss_rate must be < 1".into()));
        }
        if self.interrupt_min > self.interrupt_max {
            return Err(SimError::Config("interrupt_min must be <= interrupt_max".into()));
        }
        let p = self.victim_desched_prob + self.attacker_desched_prob + self.both_desched_prob;
        if self.victim_desched_prob < 0.0
            || self.attacker_desched_prob < 0.0
            || self.both_desched_prob < 0.0
            || p > 1.0 + 1e-9
        {
            return Err(SimError::Config("desched probabilities must be >= 0 and sum to <= 1".into()));
        }
        Ok(())
    }

    /// True when every noise source is disabled.
    pub fn is_zero(&self) -> bool {
        self.interrupt_rate == 0.0 && self.spurious_miss_rate == 0.0
    }
}

/// Attacker-side knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Trials per eviction-rate evaluation in the grow phase.
    pub rate_trials: usize,
    /// Trials used to confirm a member removal while pruning.
    pub prune_trials: usize,
    /// Grow-loop stopping threshold.
    pub eviction_threshold: f64,
    /// Per-set monitoring budget while scanning, in simulated seconds.
    pub scan_budget_seconds: f64,
    /// Scan every set even after the victim's contiguous run was found.
    pub scan_full: bool,
    /// Skip scanning and monitor this set index directly.
    pub target_set: Option<u64>,
    /// Override the automatic hit/miss probe threshold (counter increments).
    pub probe_threshold: Option<u64>,
    /// Minimum detected peaks for a scanned set to count as matching; None
    /// derives it from the expected number of one-bits.
    pub min_scan_peaks: Option<usize>,
    /// Resampling grid spacing, cycles.
    pub resample_interval: u64,
    /// Energy window width, cycles.
    pub resample_window: u64,
    /// Outlier cutoff as a multiple of the median recorded probe latency.
    pub outlier_factor: f64,
    /// Edit-distance window for merging partial keys.
    pub lookahead: usize,
    /// Traces collected by `e2e` unless overridden on the command line.
    pub n_traces: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            rate_trials: 128,
            prune_trials: 256,
            eviction_threshold: 0.99,
            scan_budget_seconds: 0.21,
            scan_full: false,
            target_set: None,
            probe_threshold: None,
            min_scan_peaks: None,
            resample_interval: 1000,
            resample_window: 10_000,
            outlier_factor: 10.0,
            lookahead: 20,
            n_traces: 1,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rate_trials == 0 || self.prune_trials == 0 {
            return Err(SimError::Config("rate_trials and prune_trials must be positive".into()));
        }
        if !(0.0 < self.eviction_threshold && self.eviction_threshold < 1.0) {
            return Err(SimError::Config("eviction_threshold must be in (0, 1)".into()));
        }
        if self.scan_budget_seconds <= 0.0 {
            return Err(SimError::Config("scan_budget_seconds must be positive".into()));
        }
        if self.resample_interval == 0 || self.resample_window < self.resample_interval {
            return Err(SimError::Config(
                "resample_window must be >= resample_interval >= 1".into(),
            ));
        }
        if self.outlier_factor <= 1.0 {
            return Err(SimError::Config("outlier_factor must exceed 1".into()));
        }
        if self.lookahead == 0 {
            return Err(SimError::Config("lookahead must be positive".into()));
        }
        if self.n_traces == 0 {
            return Err(SimError::Config("n_traces must be positive".into()));
        }
        Ok(())
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every stochastic component derives its stream from it.
    pub seed: u64,
    pub geometry: CacheGeometry,
    pub mapping: DramMapping,
    pub policy: ReplacementPolicy,
    pub timings: Timings,
    pub memory: MemoryLayout,
    pub victim: VictimConfig,
    pub noise: NoiseConfig,
    pub attack: AttackConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.geometry.validate()?;
        self.mapping.validate()?;
        self.policy.validate()?;
        self.timings.validate()?;
        self.memory.validate()?;
        self.noise.validate()?;
        self.attack.validate()?;
        crate::victim::buffer_bytes_for(self.victim.key_bits)?;
        if self.victim.k_touches == 0 {
            return Err(SimError::Config("k_touches must be positive".into()));
        }
        if let Some(set) = self.attack.target_set {
            if set >= self.geometry.n_sets {
                return Err(SimError::Config(format!(
                    "target_set {set} out of range (n_sets = {})",
                    self.geometry.n_sets
                )));
            }
        }
        // The victim buffer must not live inside the attacker's block, and
        // both must fit in physical memory.
        let (buf, _) = crate::victim::buffer_bytes_for(self.victim.key_bits)?;
        let v_end = self.memory.victim_base + buf;
        if v_end > self.memory.physical_bytes {
            return Err(SimError::Config("victim buffer exceeds physical memory".into()));
        }
        if self.memory.victim_base < self.memory.attacker_end()
            && v_end > self.memory.attacker_base
        {
            return Err(SimError::Config(
                "victim buffer overlaps the attacker's memory block".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<ExperimentConfig, SimError> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 over the canonical JSON encoding; stamped into every trace
    /// and report so artifacts can be matched to the exact configuration.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&canon);
        let out = h.finalize();
        let mut s = String::with_capacity(64);
        for b in out {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Per-set scan budget in cycles.
    pub fn scan_budget_cycles(&self) -> u64 {
        (self.attack.scan_budget_seconds * self.timings.cpu_ghz * 1e9) as u64
    }
}
