//! Event-driven simulation kernel: owns the cache and DRAM models, the cycle
//! clock, and the derived random streams. Victim and attacker code drive it by
//! issuing memory accesses; time is tracked by the drivers and anchored back
//! into the kernel between activities.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::addr::PhysicalAddress;
use crate::cache::CacheSim;
use crate::config::{ExperimentConfig, NoiseConfig};
use crate::dram::DramSim;

/// splitmix64 finalizer; spreads purpose tags far apart in seed space.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from the master seed and a purpose tag.
/// Identical (master, purpose) pairs always yield the same stream.
pub fn derive_seed(master: u64, purpose: u64) -> u64 {
    splitmix64(master ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Purpose tags for [`derive_seed`]. Kept in one place so no two components
/// accidentally share a stream.
pub mod seeds {
    pub const KEY: u64 = 1;
    pub const MACHINE: u64 = 2;
    /// Base for per-trace noise streams; add the trace index.
    pub const NOISE: u64 = 0x1000;
    /// Base for per-signature victim-base randomization; add the signature index.
    pub const VICTIM_BASE: u64 = 0x2000;
    /// Base for scan-time noise streams; add the set index.
    pub const SCAN: u64 = 0x4000;
}

/// Outcome of one memory access, after cache and (on a miss) DRAM.
#[derive(Debug, Clone, Copy)]
pub struct AccessOutcome {
    pub hit: bool,
    pub latency: u64,
    /// Line base address evicted from the cache, if any.
    pub evicted: Option<u64>,
}

/// The simulated machine. `now` is a convenience anchor that activities
/// (eviction-set construction, monitoring) advance when they finish, so that
/// consecutive traces occupy disjoint spans of the global timeline.
pub struct SimKernel {
    pub cfg: ExperimentConfig,
    pub cache: CacheSim,
    pub dram: DramSim,
    /// Randomness for the machine itself: replacement choices and DRAM jitter.
    pub machine_rng: ChaCha12Rng,
    pub now: u64,
    pub accesses: u64,
    border: Option<PhysicalAddress>,
}

impl SimKernel {
    pub fn new(cfg: &ExperimentConfig) -> SimKernel {
        let cache = CacheSim::new(cfg.geometry, cfg.policy);
        let dram = DramSim::new(cfg.mapping.clone(), cfg.timings.dram);
        let machine_rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, seeds::MACHINE));
        SimKernel { cfg: cfg.clone(), cache, dram, machine_rng, now: 0, accesses: 0, border: None }
    }

    fn raw_access(&mut self, addr: PhysicalAddress, hit_cost: u64) -> AccessOutcome {
        self.accesses += 1;
        let res = self.cache.access(addr, &mut self.machine_rng);
        if res.hit {
            AccessOutcome { hit: true, latency: hit_cost, evicted: None }
        } else {
            let latency = self.dram.access(addr, &mut self.machine_rng);
            AccessOutcome { hit: false, latency, evicted: res.evicted }
        }
    }

    /// An isolated load: full hit latency, or the DRAM latency on a miss.
    pub fn access(&mut self, addr: PhysicalAddress) -> AccessOutcome {
        self.raw_access(addr, self.cfg.timings.hit_latency)
    }

    /// A load inside the attacker's probe loop, where consecutive hits overlap
    /// in the pipeline and cost only `probe_hit_cost` each.
    pub fn probe_access(&mut self, addr: PhysicalAddress) -> AccessOutcome {
        self.raw_access(addr, self.cfg.timings.probe_hit_cost)
    }

    /// First address after the highest-latency hammer pair in the attack
    /// block's first 4 MiB: the start of a DRAM row, and in particular a
    /// 4 MiB-aligned physical address. Scanned once, then cached.
    ///
    /// The scan hammers (base+i-64, base+i) for i stepped a page at a time and
    /// keeps the argmax: at a row border the two addresses share a bank but
    /// sit in different rows, so every access is a row conflict.
    pub fn row_border(&mut self) -> PhysicalAddress {
        if let Some(b) = self.border {
            return b;
        }
        let base = self.cfg.memory.attacker_base;
        let rounds = 8;
        let mut best = (0u64, 0f64);
        let mut i = 0xFC0u64;
        while i < 4 * 1024 * 1024 {
            let a = PhysicalAddress(base + i);
            let b = PhysicalAddress(base + i + 64);
            let mean = self.dram.hammer(a, b, rounds, &mut self.machine_rng);
            // Hammering costs simulated time like any other activity.
            self.now += (mean * (2 * rounds) as f64) as u64;
            if mean > best.1 {
                best = (i, mean);
            }
            i += 4096;
        }
        let border = PhysicalAddress(base + best.0 + 64);
        self.border = Some(border);
        border
    }
}

/// What an interrupt deschedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeschedKind {
    Victim,
    Attacker,
    /// Victim, attacker, and the counting thread all stop: the victim loses
    /// time that the attacker's clock also fails to count.
    Both,
    /// Lands on an uninvolved core.
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseEvent {
    /// Cycle at which the interrupt fires.
    pub at: u64,
    /// Cycles until the descheduled party resumes.
    pub dur: u64,
    pub kind: DeschedKind,
}

/// Lazily extended Poisson stream of interrupt events, shared by the victim
/// cursor, the monitor loop, and the counting clock through per-consumer
/// indices. Events are drawn strictly in time order, so the stream is
/// identical no matter how consumers interleave their queries.
pub struct NoiseStream {
    pub cfg: NoiseConfig,
    rng: ChaCha12Rng,
    /// Separate stream for per-probe spurious misses so interrupt draws and
    /// spurious draws never perturb each other.
    spurious_rng: ChaCha12Rng,
    pub events: Vec<NoiseEvent>,
    horizon: u64,
    exhausted: bool,
}

impl NoiseStream {
    pub fn new(cfg: NoiseConfig, seed: u64, start: u64) -> NoiseStream {
        NoiseStream {
            cfg,
            rng: ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xA)),
            spurious_rng: ChaCha12Rng::seed_from_u64(derive_seed(seed, 0xB)),
            events: Vec::new(),
            horizon: start,
            exhausted: cfg.interrupt_rate <= 0.0,
        }
    }

    /// Extends the stream so every event with `at <= t` has been drawn.
    pub fn ensure(&mut self, t: u64) {
        if self.exhausted {
            return;
        }
        let rate_per_cycle = self.cfg.interrupt_rate / 1e6;
        while self.horizon <= t {
            let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
            let dt = (-u.ln() / rate_per_cycle).ceil() as u64;
            self.horizon = self.horizon.saturating_add(dt.max(1));
            let dur = self.rng.gen_range(self.cfg.interrupt_min..=self.cfg.interrupt_max);
            let p: f64 = self.rng.gen();
            let kind = if p < self.cfg.victim_desched_prob {
                DeschedKind::Victim
            } else if p < self.cfg.victim_desched_prob + self.cfg.attacker_desched_prob {
                DeschedKind::Attacker
            } else if p
                < self.cfg.victim_desched_prob
                    + self.cfg.attacker_desched_prob
                    + self.cfg.both_desched_prob
            {
                DeschedKind::Both
            } else {
                DeschedKind::None
            };
            self.events.push(NoiseEvent { at: self.horizon, dur, kind });
        }
    }

    /// Number of probes until the next spurious miss fires, and the extra
    /// latency it adds to that probe. Geometric in the per-probe rate.
    pub fn next_spurious(&mut self, dram_row_closed: u64, jitter: u64) -> Option<(u64, u64)> {
        let s = self.cfg.spurious_miss_rate;
        if s <= 0.0 {
            return None;
        }
        let u: f64 = self.spurious_rng.gen_range(f64::EPSILON..1.0);
        let gap = (u.ln() / (1.0 - s).ln()).floor() as u64 + 1;
        let amp = dram_row_closed
            .saturating_add(self.spurious_rng.gen_range(0..=2 * jitter))
            .saturating_sub(jitter);
        Some((gap, amp))
    }
}

/// The attacker's clock: a counting thread incrementing a shared variable,
/// read as "increments since the trace started". One increment lands every
/// `resolution` cycles, and the count freezes while a [`DeschedKind::Both`]
/// interrupt has the counting thread off-core.
pub struct TraceCounter {
    resolution: f64,
    start: u64,
    /// Index of the next Both-event not yet fully accounted, plus the frozen
    /// cycles fully accumulated before it. Queries must be time-monotone.
    idx: usize,
    frozen: u64,
}

impl TraceCounter {
    pub fn new(resolution: f64, start: u64) -> TraceCounter {
        TraceCounter { resolution, start, idx: 0, frozen: 0 }
    }

    /// Counter reading at global cycle `t`. `stream` must have been `ensure`d
    /// up to `t`, and calls must use non-decreasing `t`.
    pub fn reading(&mut self, stream: &NoiseStream, t: u64) -> u64 {
        while self.idx < stream.events.len() {
            let ev = stream.events[self.idx];
            if ev.kind != DeschedKind::Both {
                self.idx += 1;
                continue;
            }
            if ev.at.saturating_add(ev.dur) <= t {
                self.frozen += ev.dur;
                self.idx += 1;
            } else {
                break;
            }
        }
        let mut frozen = self.frozen;
        if self.idx < stream.events.len() {
            let ev = stream.events[self.idx];
            if ev.kind == DeschedKind::Both && ev.at < t {
                frozen += t - ev.at;
            }
        }
        let run = t.saturating_sub(self.start).saturating_sub(frozen);
        (run as f64 / self.resolution).round() as u64
    }
}
