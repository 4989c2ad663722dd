//! The victim: square-and-multiply modular exponentiation with a secret
//! exponent. Squarings are multiplier-free, while every multiplication walks
//! the per-key multiplier buffer, so the sequence of buffer touches leaks the
//! exponent's bit pattern to anyone watching the buffer's cache sets.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::addr::{CacheGeometry, CacheLocation, PhysicalAddress, LINE_SIZE};
use crate::config::{ExperimentConfig, MemoryLayout};
use crate::error::SimError;
use crate::kernel::{DeschedKind, NoiseStream, SimKernel};

/// Per-multiply base cost (cycles) for calibrated key sizes, excluding the
/// buffer-touch loads themselves.
const COST_TABLE: [(usize, f64); 4] =
    [(1024, 1764.0), (2048, 6624.0), (4096, 25462.0), (8192, 100_440.0)];

/// A secret exponent, most-significant bit first. The optional modulus/base
/// pair lets tests check functional correctness of the exponentiation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaKey {
    pub bits: Vec<u8>,
    pub modulus: Option<u64>,
    pub base: Option<u64>,
}

impl RsaKey {
    /// Random exponent of exactly `n_bits` bits. The top bit is set so the
    /// length is exact, and the low bit is set as private exponents are odd.
    pub fn generate(n_bits: usize, rng: &mut ChaCha12Rng) -> RsaKey {
        assert!(n_bits >= 2);
        let mut bits = vec![0u8; n_bits];
        bits[0] = 1;
        bits[n_bits - 1] = 1;
        for b in bits.iter_mut().take(n_bits - 1).skip(1) {
            *b = rng.gen_range(0..=1u8);
        }
        RsaKey { bits, modulus: None, base: None }
    }

    /// Attach a random small modulus/base pair for functional checking.
    pub fn with_check_values(mut self, rng: &mut ChaCha12Rng) -> RsaKey {
        let modulus = rng.gen_range(3u64..=u32::MAX as u64) | 1;
        self.base = Some(rng.gen_range(2..modulus));
        self.modulus = Some(modulus);
        self
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<RsaKey, SimError> {
        if bits.is_empty() || bits.iter().any(|&b| b > 1) {
            return Err(SimError::Config("key bits must be a nonempty 0/1 sequence".into()));
        }
        Ok(RsaKey { bits, modulus: None, base: None })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hamming_weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Lowercase hex of the exponent, `ceil(len/4)` nibbles.
    pub fn to_hex(&self) -> String {
        bits_to_hex(&self.bits)
    }

    /// Parse hex back into exactly `n_bits` bits (left-padded with zeros).
    pub fn from_hex(s: &str, n_bits: usize) -> Result<RsaKey, SimError> {
        let mut bits = Vec::with_capacity(s.len() * 4);
        for ch in s.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| SimError::Config(format!("invalid hex digit {ch:?}")))?;
            for i in (0..4).rev() {
                bits.push(((v >> i) & 1) as u8);
            }
        }
        while bits.len() > n_bits && bits[0] == 0 {
            bits.remove(0);
        }
        if bits.len() > n_bits {
            return Err(SimError::Config(format!(
                "hex value does not fit in {n_bits} bits"
            )));
        }
        while bits.len() < n_bits {
            bits.insert(0, 0);
        }
        RsaKey::from_bits(bits)
    }
}

/// Hex rendering shared by keys and recovered bit strings.
pub fn bits_to_hex(bits: &[u8]) -> String {
    if bits.is_empty() {
        return String::new();
    }
    let nibbles = (bits.len() + 3) / 4;
    let mut out = String::with_capacity(nibbles);
    let pad = nibbles * 4 - bits.len();
    for n in 0..nibbles {
        let mut v = 0u32;
        for i in 0..4 {
            let pos = (n * 4 + i) as isize - pad as isize;
            let bit = if pos < 0 { 0 } else { bits[pos as usize] };
            v = (v << 1) | bit as u32;
        }
        out.push(char::from_digit(v, 16).unwrap());
    }
    out
}

/// Multiplier-buffer size for a key size: one limb per 64 key bits plus an
/// 8-byte header. The `bool` is true when the key size is outside the
/// calibrated cost table and per-multiply cost is extrapolated.
pub fn buffer_bytes_for(key_bits: usize) -> Result<(u64, bool), SimError> {
    if key_bits < 16 || key_bits % 8 != 0 {
        return Err(SimError::UnsupportedKeySize { key_bits });
    }
    let bytes = key_bits as u64 / 8 + 8;
    let in_table = COST_TABLE.iter().any(|&(b, _)| b == key_bits);
    Ok((bytes, !in_table))
}

/// Per-multiply base cost in cycles. Outside the calibrated sizes the cost is
/// extrapolated quadratically from the 4096-bit point and clamped below at the
/// smallest calibrated cost so tiny keys stay slower than one probe sweep.
pub fn base_mult_cost(key_bits: usize) -> (f64, bool) {
    if let Some(&(_, c)) = COST_TABLE.iter().find(|&&(b, _)| b == key_bits) {
        return (c, false);
    }
    let r = key_bits as f64 / 4096.0;
    ((25462.0 * r * r).max(1764.0), true)
}

/// Where the victim's multiplier buffer landed and which cache lines it spans.
#[derive(Debug, Clone)]
pub struct VictimLayout {
    pub base: PhysicalAddress,
    pub bytes: u64,
    pub key_bits: usize,
    /// Key size outside the calibrated cost table.
    pub extrapolated: bool,
    /// Line base address of every cache line the buffer touches.
    pub lines: Vec<PhysicalAddress>,
    /// Cache location of each spanned line, same order as `lines`.
    pub locations: Vec<CacheLocation>,
}

/// Lays the multiplier buffer out at `base` (or the configured default) and
/// computes its spanned cache lines.
pub fn allocate_victim(
    geo: CacheGeometry,
    mem: &MemoryLayout,
    key_bits: usize,
    base_override: Option<u64>,
) -> Result<VictimLayout, SimError> {
    let (bytes, extrapolated) = buffer_bytes_for(key_bits)?;
    let base = base_override.unwrap_or(mem.victim_base);
    if base + bytes > mem.physical_bytes {
        return Err(SimError::Config("victim buffer exceeds physical memory".into()));
    }
    let first = base / LINE_SIZE;
    let last = (base + bytes - 1) / LINE_SIZE;
    let lines: Vec<PhysicalAddress> =
        (first..=last).map(|l| PhysicalAddress(l * LINE_SIZE)).collect();
    let locations = lines.iter().map(|&a| geo.location_of(a)).collect();
    Ok(VictimLayout { base: PhysicalAddress(base), bytes, key_bits, extrapolated, lines, locations })
}

/// Draw a random buffer base for the heap-randomization countermeasure:
/// 8-byte aligned, outside the attacker's block.
pub fn random_victim_base(mem: &MemoryLayout, bytes: u64, rng: &mut ChaCha12Rng) -> u64 {
    loop {
        let max = (mem.physical_bytes - bytes) / 8;
        let base = rng.gen_range(0x10_0000 / 8..max) * 8;
        if base + bytes <= mem.attacker_base || base >= mem.attacker_end() {
            return base;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Square,
    Multiply,
}

/// One exponentiation operation as it executed: wall-clock bounds plus the
/// start time of every multiplier-buffer sweep.
#[derive(Debug, Clone)]
pub struct OpRecord {
    pub kind: OpKind,
    pub start: u64,
    pub end: u64,
    pub bursts: Vec<u64>,
}

/// A victim exponentiation in progress. The cursor advances itself through
/// squarings and inter-burst gaps (pure time, no memory traffic worth
/// modeling) and pauses at every multiplier-buffer sweep so the caller can
/// interleave it with attacker activity at access granularity.
pub struct VictimCursor {
    bits: Vec<u8>,
    lines: Vec<PhysicalAddress>,
    /// Gap before/after/between the k bursts of one multiply.
    gap: u64,
    /// Duration of one squaring: (k+1) gaps plus the time the buffer loads
    /// would have taken, so quiet squarings and multiplies are
    /// indistinguishable by duration.
    square_dur: u64,
    k: usize,
    t: u64,
    op: usize,
    burst: usize,
    next_burst: Option<u64>,
    noise_idx: usize,
    pub log: Vec<OpRecord>,
    pub done: bool,
    pub end_time: Option<u64>,
    pub start_time: u64,
    /// Running product for functional checking, when the key carries a
    /// modulus/base pair.
    acc: Option<(u64, u64, u64)>,
}

impl VictimCursor {
    /// `contended` applies the configured slowdown to every operation,
    /// modeling the attacker's probe and counter threads sharing the machine.
    pub fn new(
        cfg: &ExperimentConfig,
        key: &RsaKey,
        layout: &VictimLayout,
        start: u64,
        contended: bool,
        stream: &mut NoiseStream,
    ) -> VictimCursor {
        let k = cfg.victim.k_touches;
        let hit = cfg.timings.hit_latency;
        let lines = layout.lines.clone();
        let (cost, _) = base_mult_cost(layout.key_bits);
        let touch_cost = (lines.len() * k) as f64 * hit as f64;
        let base = (cost - touch_cost).max(0.0);
        let factor = if contended { cfg.timings.contention_factor } else { 1.0 };
        let gap = (base * factor / (k + 1) as f64).round() as u64;
        let square_dur = gap * (k + 1) as u64 + (lines.len() * k) as u64 * hit;
        let acc = match (key.modulus, key.base) {
            (Some(m), Some(b)) => Some((1 % m, b % m, m)),
            _ => None,
        };
        let mut c = VictimCursor {
            bits: key.bits.clone(),
            lines,
            gap,
            square_dur,
            k,
            t: start,
            op: 0,
            burst: 0,
            next_burst: None,
            noise_idx: 0,
            log: Vec::new(),
            done: false,
            end_time: None,
            start_time: start,
            acc,
        };
        c.roll_forward(stream);
        c
    }

    /// Global cycle of the next multiplier-buffer sweep, or None when the
    /// exponentiation has finished.
    pub fn next_burst_at(&self) -> Option<u64> {
        self.next_burst
    }

    /// Advance the victim clock by `dur` busy cycles, stalling for any
    /// interrupt that deschedules the victim inside the (extended) window.
    fn advance(&mut self, dur: u64, stream: &mut NoiseStream) {
        let mut end = self.t + dur;
        stream.ensure(end);
        while self.noise_idx < stream.events.len() && stream.events[self.noise_idx].at < end {
            let ev = stream.events[self.noise_idx];
            self.noise_idx += 1;
            if matches!(ev.kind, DeschedKind::Victim | DeschedKind::Both) {
                end += ev.dur;
                stream.ensure(end);
            }
        }
        self.t = end;
    }

    /// Run squarings (and the functional math) until the next multiply's
    /// first burst, or to completion.
    fn roll_forward(&mut self, stream: &mut NoiseStream) {
        loop {
            if self.op >= self.bits.len() {
                self.done = true;
                self.end_time = Some(self.t);
                self.next_burst = None;
                return;
            }
            let start = self.t;
            if let Some((acc, _, m)) = self.acc.as_mut() {
                let sq = mulmod(*acc, *acc, *m);
                *acc = sq;
            }
            self.advance(self.square_dur, stream);
            self.log.push(OpRecord { kind: OpKind::Square, start, end: self.t, bursts: Vec::new() });
            if self.bits[self.op] == 1 {
                let mstart = self.t;
                self.log.push(OpRecord {
                    kind: OpKind::Multiply,
                    start: mstart,
                    end: mstart,
                    bursts: Vec::new(),
                });
                self.advance(self.gap, stream);
                self.burst = 0;
                self.next_burst = Some(self.t);
                return;
            }
            self.op += 1;
        }
    }

    /// Execute the pending buffer sweep through the cache, then advance to the
    /// next burst or the next multiply. Panics if no burst is pending.
    pub fn apply_burst(&mut self, kernel: &mut SimKernel, stream: &mut NoiseStream) {
        let at = self.next_burst.take().expect("no burst pending");
        debug_assert_eq!(at, self.t);
        let mut cost = 0u64;
        for &line in &self.lines {
            cost += kernel.access(line).latency;
        }
        self.t += cost;
        let rec = self.log.last_mut().expect("multiply record open");
        rec.bursts.push(at);
        self.advance(self.gap, stream);
        self.burst += 1;
        if self.burst < self.k {
            self.next_burst = Some(self.t);
        } else {
            if let Some((acc, base, m)) = self.acc.as_mut() {
                *acc = mulmod(*acc, *base, *m);
            }
            let rec = self.log.last_mut().unwrap();
            rec.end = self.t;
            self.op += 1;
            self.roll_forward(stream);
        }
    }

    /// Functional result, when check values were attached.
    pub fn result(&self) -> Option<u64> {
        self.acc.map(|(acc, _, _)| acc)
    }
}

fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

/// A completed standalone exponentiation.
#[derive(Debug)]
pub struct VictimRun {
    pub result: Option<u64>,
    pub log: Vec<OpRecord>,
    pub start: u64,
    pub end: u64,
}

/// Run one full exponentiation with no attacker present. Noise (if configured)
/// still applies to the victim; `noise_seed` selects the event stream.
pub fn mod_exp(
    kernel: &mut SimKernel,
    key: &RsaKey,
    layout: &VictimLayout,
    noise_seed: u64,
) -> VictimRun {
    let start = kernel.now;
    let mut stream = NoiseStream::new(kernel.cfg.noise, noise_seed, start);
    let cfg = kernel.cfg.clone();
    let mut cur = VictimCursor::new(&cfg, key, layout, start, false, &mut stream);
    while !cur.done {
        cur.apply_burst(kernel, &mut stream);
    }
    let end = cur.end_time.unwrap();
    kernel.now = end;
    VictimRun { result: cur.result(), log: cur.log, start, end }
}

/// Expected duration of one multiply while the attacker probes the buffer's
/// set: slowed base cost, buffer loads, and one probe-evicted miss per sweep.
pub fn predicted_attacked_multiply(cfg: &ExperimentConfig, layout: &VictimLayout) -> f64 {
    let k = cfg.victim.k_touches as f64;
    let hit = cfg.timings.hit_latency as f64;
    let lines = layout.lines.len() as f64;
    let (cost, _) = base_mult_cost(layout.key_bits);
    let base = (cost - lines * k * hit).max(0.0);
    base * cfg.timings.contention_factor + k * ((lines - 1.0) * hit + cfg.timings.dram.row_hit as f64)
}
