//! The attacker: builds eviction sets for chosen cache sets out of its own
//! physically contiguous block, then monitors a set with Prime+Probe, where
//! each probe's accesses double as the next prime. Only probes classified as
//! misses are recorded, timestamped with the attacker's counting-thread clock.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::addr::{CacheLocation, PhysicalAddress};
use crate::error::SimError;
use crate::kernel::{derive_seed, seeds, DeschedKind, NoiseStream, SimKernel, TraceCounter};
use crate::recovery;
use crate::victim::{predicted_attacked_multiply, RsaKey, VictimCursor, VictimLayout};

/// Access order for one probe of an n-member eviction set: a doubled sliding
/// window of three, which keeps every line's reuse distance short enough to
/// survive an imperfectly-LRU cache while still touching all members.
pub fn pattern_indices(n: usize) -> impl Iterator<Item = usize> {
    (0..n.saturating_sub(2)).flat_map(|i| [i, i + 1, i + 2, i, i + 1, i + 2])
}

/// Cycles one probe takes when every access hits.
pub fn probe_baseline_cycles(n_members: usize, probe_hit_cost: u64) -> u64 {
    6 * n_members.saturating_sub(2) as u64 * probe_hit_cost
}

/// A minimal eviction set for one cache set.
#[derive(Debug, Clone)]
pub struct EvictionSet {
    /// The set index the attacker asked for.
    pub set_index: u64,
    /// Cache location of the held-out congruent address the set was tuned
    /// against (its slice is the one the set actually evicts from).
    pub target: CacheLocation,
    /// The held-out address itself; never a member.
    pub target_addr: PhysicalAddress,
    pub addrs: Vec<PhysicalAddress>,
    /// Row-border anchor the candidates were derived from.
    pub border: PhysicalAddress,
    /// Eviction-rate evaluations spent building the set.
    pub rate_evals: usize,
    /// Size when the grow phase stopped, before pruning.
    pub grown_size: usize,
}

/// One probe with no victim or noise: every member accessed in pattern order.
/// Returns (cycles, misses). Also the priming primitive.
pub fn prime_probe(kernel: &mut SimKernel, addrs: &[PhysicalAddress]) -> (u64, usize) {
    let mut dur = 0u64;
    let mut misses = 0usize;
    for idx in pattern_indices(addrs.len()) {
        let out = kernel.probe_access(addrs[idx]);
        dur += out.latency;
        if !out.hit {
            misses += 1;
        }
    }
    (dur, misses)
}

/// Acceptance bar for a measured eviction rate: the configured threshold
/// minus three standard deviations of Bernoulli sampling noise at that
/// threshold. A finite-trial estimate of a rate genuinely at the threshold
/// then passes almost surely, while a set that lost a necessary member
/// (rate near zero) still fails by a wide margin.
fn passing_bar(threshold: f64, trials: usize) -> f64 {
    threshold - 3.0 * (threshold * (1.0 - threshold) / trials as f64).sqrt()
}

/// Fraction of `trials` in which accessing `target` and then probing the
/// candidate set leaves `target` evicted. Charges simulated time to the
/// kernel clock like any real measurement loop.
fn eviction_rate_timed(
    kernel: &mut SimKernel,
    members: &[PhysicalAddress],
    target: PhysicalAddress,
    trials: usize,
) -> f64 {
    let mut evicted = 0usize;
    let mut cycles = 0u64;
    for _ in 0..trials {
        cycles += kernel.access(target).latency;
        // Two pattern passes per trial so one unlucky non-LRU victim choice
        // cannot leave the target resident; see `cache::eviction_rate`.
        for _ in 0..2 {
            for idx in pattern_indices(members.len()) {
                cycles += kernel.probe_access(members[idx]).latency;
            }
        }
        if !kernel.cache.is_resident(target) {
            evicted += 1;
        }
    }
    kernel.now += cycles;
    evicted as f64 / trials as f64
}

/// Build a minimal eviction set for `set` from the attacker's block.
///
/// Three phases: anchor on the hammer-scanned row border (a 4 MiB-aligned
/// address, so its set-index bits are zero); grow by adding congruent
/// addresses one set-stride apart until the held-out target's eviction rate
/// exceeds the threshold; prune by removing every member whose removal keeps
/// the rate above the threshold.
pub fn generate_eviction_set(
    kernel: &mut SimKernel,
    set: u64,
) -> Result<EvictionSet, SimError> {
    let cfg = kernel.cfg.clone();
    let geo = cfg.geometry;
    if set >= geo.n_sets {
        return Err(SimError::Config(format!("set {set} out of range")));
    }
    let border = kernel.row_border();
    let base = border.0 + (set << crate::addr::SET_INDEX_LOW_BIT);
    let stride = geo.set_stride();
    let limit = cfg.memory.attacker_end();
    if base + 64 > limit {
        return Err(SimError::Config("attacker block too small for this set".into()));
    }
    let max_j = (limit - 64 - base) / stride;
    // Hold out the highest congruent address in the block that shares the
    // anchor's slice; rates are measured against it, and grow candidates stay
    // strictly below it.
    let base_slice = geo.slice_of(PhysicalAddress(base));
    let mut target_j = None;
    let mut j = max_j;
    loop {
        if geo.slice_of(PhysicalAddress(base + j * stride)) == base_slice && j > 0 {
            target_j = Some(j);
            break;
        }
        if j == 0 {
            break;
        }
        j -= 1;
    }
    let target_j = target_j.ok_or_else(|| SimError::Config(
        "attacker block has no congruent address pair for this set".into(),
    ))?;
    let target = PhysicalAddress(base + target_j * stride);

    let threshold = cfg.attack.eviction_threshold;
    let screen_trials = (cfg.attack.rate_trials / 8).max(16);
    let screen_bar = passing_bar(threshold, screen_trials);
    let grow_bar = passing_bar(threshold, cfg.attack.rate_trials);
    let mut evals = 0usize;
    let mut members: Vec<PhysicalAddress> = Vec::new();
    let mut reached = false;
    let mut best = 0.0f64;
    for j in 0..target_j {
        members.push(PhysicalAddress(base + j * stride));
        let screen = eviction_rate_timed(kernel, &members, target, screen_trials);
        evals += 1;
        best = best.max(screen);
        if screen > screen_bar {
            let confirm = eviction_rate_timed(kernel, &members, target, cfg.attack.rate_trials);
            evals += 1;
            best = best.max(confirm);
            if confirm > grow_bar {
                reached = true;
                break;
            }
        }
    }
    if !reached {
        return Err(SimError::EvictionUnreachable {
            set,
            threshold,
            limit: members.len(),
            best,
        });
    }
    let grown = members.len();

    // Prune: drop members whose removal keeps the rate at the threshold.
    let prune_bar = passing_bar(threshold, cfg.attack.prune_trials);
    let mut i = 0usize;
    while i < members.len() {
        if members.len() <= 1 {
            break;
        }
        let removed = members.remove(i);
        let screen = eviction_rate_timed(kernel, &members, target, screen_trials);
        evals += 1;
        let mut keep_removed = false;
        if screen > screen_bar {
            let confirm = eviction_rate_timed(kernel, &members, target, cfg.attack.prune_trials);
            evals += 1;
            keep_removed = confirm > prune_bar;
        }
        if !keep_removed {
            members.insert(i, removed);
            i += 1;
        }
    }

    Ok(EvictionSet {
        set_index: set,
        target: geo.location_of(target),
        target_addr: target,
        addrs: members,
        border,
        rate_evals: evals,
        grown_size: grown,
    })
}

/// Metadata carried with every trace; enough to rerun recovery without the
/// original configuration file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceMeta {
    pub trace_index: usize,
    pub noise_seed: u64,
    pub config_digest: String,
    pub set_index: u64,
    pub slice: u64,
    pub counter_resolution: f64,
    pub key_bits: usize,
    /// Trace length in counter increments.
    pub span_units: u64,
    /// Global cycle at which the monitored window began.
    pub start_cycle: u64,
    pub predicted_mult_cycles: f64,
    pub probes: u64,
    pub mean_probe_cycles: f64,
    pub threshold_units: u64,
    pub resample_interval: u64,
    pub resample_window: u64,
    pub outlier_factor: f64,
}

/// Probes classified as misses: counter reading at probe end, and probe
/// duration in counter increments. Timestamps are relative to trace start and
/// strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub timestamps: Vec<u64>,
    pub latencies: Vec<u64>,
    pub meta: TraceMeta,
}

/// Advance past exhausted irrelevant events, then return the time of the next
/// interrupt that deschedules the attacker (or the counting thread).
fn next_attacker_noise(
    stream: &mut NoiseStream,
    att_idx: &mut usize,
    t: u64,
    upto: u64,
) -> u64 {
    stream.ensure(upto);
    while *att_idx < stream.events.len() {
        let ev = stream.events[*att_idx];
        let relevant = matches!(ev.kind, DeschedKind::Attacker | DeschedKind::Both);
        if ev.at <= t && !relevant {
            *att_idx += 1;
            continue;
        }
        break;
    }
    let mut j = *att_idx;
    while j < stream.events.len() {
        let ev = stream.events[j];
        if matches!(ev.kind, DeschedKind::Attacker | DeschedKind::Both) {
            return ev.at;
        }
        j += 1;
    }
    u64::MAX
}

/// Monitor one full victim signature (or up to `budget` cycles) with
/// Prime+Probe on the given eviction set. The victim is triggered as soon as
/// the attacker's lines are primed. Deterministic for fixed inputs.
///
/// Probes whose members all hit are simulated analytically in batches: they
/// cannot disturb cache state or consume randomness, so the loop leaps from
/// one forcing event (victim buffer sweep, attacker-relevant interrupt,
/// scheduled spurious miss) to the next.
pub fn monitor(
    kernel: &mut SimKernel,
    eset: &EvictionSet,
    key: &RsaKey,
    layout: &VictimLayout,
    noise_seed: u64,
    trace_index: usize,
    budget: Option<u64>,
) -> RawTrace {
    let cfg = kernel.cfg.clone();
    let n = eset.addrs.len();
    assert!(n >= 3, "eviction sets below 3 members cannot be probed");
    let baseline = probe_baseline_cycles(n, cfg.timings.probe_hit_cost);
    let res = cfg.timings.counter_resolution;
    let threshold_units = cfg.attack.probe_threshold.unwrap_or_else(|| {
        (((baseline + cfg.timings.dram.row_hit / 2) as f64) / res).round() as u64
    });

    // Prime until a probe runs clean.
    let mut t = kernel.now;
    let mut stable = false;
    for _ in 0..16 {
        let (dur, misses) = prime_probe(kernel, &eset.addrs);
        t += dur;
        if misses == 0 {
            stable = true;
            break;
        }
    }

    let t0 = t;
    let mut stream = NoiseStream::new(cfg.noise, noise_seed, t0);
    let mut counter = TraceCounter::new(res, t0);
    let mut victim = VictimCursor::new(&cfg, key, layout, t0, true, &mut stream);
    let classes: HashSet<CacheLocation> =
        eset.addrs.iter().map(|&a| cfg.geometry.location_of(a)).collect();
    let victim_hits_monitored = layout.locations.iter().any(|loc| classes.contains(loc));

    let mut att_idx = 0usize;
    let mut spurious =
        stream.next_spurious(cfg.timings.dram.row_closed, cfg.timings.dram.jitter);
    let end_limit = budget.map(|b| t0.saturating_add(b));
    let mut probes = 0u64;
    let mut probe_cycles = 0u128;
    let mut timestamps: Vec<u64> = Vec::new();
    let mut latencies: Vec<u64> = Vec::new();
    let mut last_reading = 0u64;

    loop {
        if let Some(e) = victim.end_time {
            if t >= e {
                break;
            }
        }
        if let Some(lim) = end_limit {
            if t >= lim {
                break;
            }
        }

        let next_victim = victim.next_burst_at().unwrap_or(u64::MAX);
        let hard_end = victim
            .end_time
            .unwrap_or(u64::MAX)
            .min(end_limit.unwrap_or(u64::MAX));
        let peek_to = next_victim.min(hard_end).min(t.saturating_add(1 << 24));
        let next_noise = next_attacker_noise(&mut stream, &mut att_idx, t, peek_to);
        let horizon = next_victim.min(next_noise).min(hard_end);

        // Leap over provably all-hit probes.
        if stable && horizon > t + baseline {
            let mut k_leap = (horizon - t) / baseline;
            if let Some((rem, _)) = spurious {
                k_leap = k_leap.min(rem.saturating_sub(1));
            }
            if k_leap > 0 {
                t += k_leap * baseline;
                probes += k_leap;
                probe_cycles += (k_leap * baseline) as u128;
                if let Some((rem, _)) = spurious.as_mut() {
                    *rem -= k_leap;
                }
                continue;
            }
        }

        // Concrete probe.
        let start = t;
        let mut dur = 0u64;
        let mut misses = 0usize;
        let mut victim_touched = false;
        for idx in pattern_indices(n) {
            while victim.next_burst_at().map_or(false, |b| b <= start + dur) {
                victim.apply_burst(kernel, &mut stream);
                victim_touched |= victim_hits_monitored;
            }
            let out = kernel.probe_access(eset.addrs[idx]);
            dur += out.latency;
            if !out.hit {
                misses += 1;
            }
        }
        // Interrupts that desched the attacker stall the probe; the victim
        // keeps running (and may evict us) while we are off-core.
        stream.ensure(start + dur);
        while att_idx < stream.events.len() && stream.events[att_idx].at < start + dur {
            let ev = stream.events[att_idx];
            att_idx += 1;
            if matches!(ev.kind, DeschedKind::Attacker | DeschedKind::Both) {
                dur += ev.dur;
                stream.ensure(start + dur);
                while victim.next_burst_at().map_or(false, |b| b <= start + dur) {
                    victim.apply_burst(kernel, &mut stream);
                    victim_touched |= victim_hits_monitored;
                }
            }
        }
        // Scheduled spurious miss: measurement artifact only.
        if let Some((rem, amp)) = spurious.as_mut() {
            *rem -= 1;
            if *rem == 0 {
                dur += *amp;
                misses += 1;
                spurious =
                    stream.next_spurious(cfg.timings.dram.row_closed, cfg.timings.dram.jitter);
            }
        }
        let end = start + dur;
        stream.ensure(end);
        let r0 = counter.reading(&stream, start);
        let r1 = counter.reading(&stream, end);
        let units = r1 - r0;
        probes += 1;
        probe_cycles += dur as u128;
        if units > threshold_units {
            timestamps.push(r1);
            latencies.push(units);
        }
        last_reading = r1;
        stable = misses == 0 && !victim_touched;
        t = end;
    }

    // The signature completes whether or not the attacker keeps watching.
    while !victim.done {
        victim.apply_burst(kernel, &mut stream);
    }
    let v_end = victim.end_time.unwrap();
    kernel.now = t.max(v_end);

    let span_units = if t >= v_end.min(end_limit.unwrap_or(u64::MAX)) && timestamps.is_empty() {
        // No recorded probes at all: span from clean leaps.
        ((t - t0) as f64 / res).round() as u64
    } else {
        last_reading.max(((t.min(v_end) - t0) as f64 / res) as u64)
    };

    let mean_probe_cycles =
        if probes > 0 { probe_cycles as f64 / probes as f64 } else { 0.0 };
    RawTrace {
        timestamps,
        latencies,
        meta: TraceMeta {
            trace_index,
            noise_seed,
            config_digest: cfg.digest(),
            set_index: eset.set_index,
            slice: eset.target.slice,
            counter_resolution: res,
            key_bits: layout.key_bits,
            span_units,
            start_cycle: t0,
            predicted_mult_cycles: predicted_attacked_multiply(&cfg, layout),
            probes,
            mean_probe_cycles,
            threshold_units,
            resample_interval: cfg.attack.resample_interval,
            resample_window: cfg.attack.resample_window,
            outlier_factor: cfg.attack.outlier_factor,
        },
    }
}

/// Scan verdict for one cache set.
#[derive(Debug, Clone, Serialize)]
pub struct SetScan {
    pub set: u64,
    pub slice: u64,
    pub peaks: usize,
    pub matched: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanOutcome {
    pub per_set: Vec<SetScan>,
    /// The chosen contiguous run of matched sets.
    pub run: Vec<u64>,
    /// Interior of the run (first and last excluded when the run has three or
    /// more sets: edge sets cover the buffer's partial first/last lines),
    /// ranked by peak count.
    pub candidates: Vec<CacheLocation>,
    pub sets_scanned: usize,
}

/// Derived minimum peak count for a set to be considered active: an
/// exponentiation of this key size should show about one peak per one-bit.
pub fn default_min_peaks(key_bits: usize) -> usize {
    (key_bits / 16).max(8)
}

/// Walk cache sets in order, building an eviction set and recording one
/// monitored signature for each, and report the contiguous run of sets whose
/// traces look like square-and-multiply activity. Stops early once the run is
/// found unless `scan_full` is set.
pub fn scan_vulnerable_sets(
    kernel: &mut SimKernel,
    key: &RsaKey,
    layout: &VictimLayout,
) -> Result<ScanOutcome, SimError> {
    let cfg = kernel.cfg.clone();
    let budget = cfg.scan_budget_cycles();
    let min_peaks = cfg.attack.min_scan_peaks.unwrap_or_else(|| default_min_peaks(layout.key_bits));
    let pred = predicted_attacked_multiply(&cfg, layout);
    let (interval, window) = recovery::effective_resample_params(
        cfg.attack.resample_interval,
        cfg.attack.resample_window,
        pred,
    );
    // A real final multiplication is preceded by more activity close by; a
    // lone trailing artifact is not. Generous window: long zero runs are rare
    // but legal.
    let tail_window = 32.0 * pred;

    let mut per_set: Vec<SetScan> = Vec::new();
    let mut stop_after: Option<u64> = None;
    for set in 0..cfg.geometry.n_sets {
        if let Some(limit) = stop_after {
            if set > limit {
                break;
            }
        }
        let (slice, peaks) = match generate_eviction_set(kernel, set) {
            Ok(eset) => {
                let seed = derive_seed(cfg.seed, seeds::SCAN + set);
                let trace = monitor(kernel, &eset, key, layout, seed, set as usize, Some(budget));
                let peaks = match recovery::resample(&trace, interval, window, cfg.attack.outlier_factor)
                {
                    Ok(rt) => recovery::detect_peaks(&rt, pred),
                    Err(_) => Vec::new(),
                };
                (eset.target.slice, peaks)
            }
            Err(SimError::EvictionUnreachable { .. }) => (0, Vec::new()),
            Err(e) => return Err(e),
        };
        let mut matched = peaks.len() >= min_peaks;
        if matched {
            let last = peaks[peaks.len() - 1].time;
            let prev = peaks[peaks.len() - 2].time;
            matched = last - prev <= tail_window;
        }
        per_set.push(SetScan { set, slice, peaks: peaks.len(), matched });

        if !cfg.attack.scan_full && stop_after.is_none() {
            // A finished run: matched sets followed by a margin of quiet ones.
            let matched_flags: Vec<bool> = per_set.iter().map(|s| s.matched).collect();
            if let Some(run_end) = finished_run_end(&matched_flags, 8) {
                stop_after = Some(per_set[run_end].set + 8);
            }
        }
    }

    let run = best_run(&per_set, cfg.attack.scan_full);
    let interior: Vec<u64> = if run.len() >= 3 { run[1..run.len() - 1].to_vec() } else { run.clone() };
    let mut candidates: Vec<(u64, u64, usize)> = interior
        .iter()
        .map(|&s| {
            let rec = per_set.iter().find(|r| r.set == s).unwrap();
            (s, rec.slice, rec.peaks)
        })
        .collect();
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    Ok(ScanOutcome {
        sets_scanned: per_set.len(),
        candidates: candidates
            .into_iter()
            .map(|(set, slice, _)| CacheLocation { set, slice })
            .collect(),
        run,
        per_set,
    })
}

/// Index of the last set of a matched run that is already followed by
/// `margin` consecutive unmatched sets, if any.
fn finished_run_end(flags: &[bool], margin: usize) -> Option<usize> {
    if flags.len() < margin + 1 {
        return None;
    }
    let tail = &flags[flags.len() - margin..];
    if tail.iter().any(|&m| m) {
        return None;
    }
    let end = flags.len() - margin;
    if end == 0 || !flags[end - 1] {
        return None;
    }
    Some(end - 1)
}

/// Longest contiguous run of matched sets; under a full scan, runs touching
/// both ends of the index space are joined (set indices wrap).
fn best_run(per_set: &[SetScan], wrap: bool) -> Vec<u64> {
    let mut runs: Vec<Vec<u64>> = Vec::new();
    let mut cur: Vec<u64> = Vec::new();
    for rec in per_set {
        if rec.matched {
            cur.push(rec.set);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    if wrap && runs.len() >= 2 {
        let first_starts_at_zero = runs[0].first() == Some(&per_set[0].set);
        let last_ends_at_top = runs.last().unwrap().last() == per_set.last().map(|r| &r.set);
        if first_starts_at_zero && last_ends_at_top {
            let first = runs.remove(0);
            runs.last_mut().unwrap().extend(first);
        }
    }
    runs.into_iter().max_by_key(Vec::len).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::victim::allocate_victim;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn pattern_is_doubled_sliding_window() {
        let p: Vec<usize> = pattern_indices(4).collect();
        assert_eq!(p, vec![0, 1, 2, 0, 1, 2, 1, 2, 3, 1, 2, 3]);
        let p3: Vec<usize> = pattern_indices(3).collect();
        assert_eq!(p3, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(pattern_indices(2).count(), 0);
        for n in [3usize, 5, 12, 20] {
            let p: Vec<usize> = pattern_indices(n).collect();
            assert_eq!(p.len(), 6 * (n - 2));
            assert_eq!(*p.iter().max().unwrap(), n - 1);
            assert_eq!(*p.iter().min().unwrap(), 0);
        }
    }

    fn pure_lru_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.policy = crate::cache::ReplacementPolicy::PURE_LRU;
        cfg.geometry.n_slices = 1;
        cfg
    }

    #[test]
    fn eviction_set_is_exactly_associativity_under_pure_lru() {
        let cfg = pure_lru_config();
        let mut kernel = SimKernel::new(&cfg);
        for set in [0u64, 7, 1024, 2047] {
            let eset = generate_eviction_set(&mut kernel, set).unwrap();
            assert_eq!(
                eset.addrs.len(),
                cfg.geometry.n_ways,
                "set {set}: minimal eviction set under pure LRU is one line per way"
            );
            assert!(eset.rate_evals <= 4 * eset.grown_size,
                "set {set}: {} evals for grown size {}", eset.rate_evals, eset.grown_size);
            for &a in &eset.addrs {
                assert_eq!(cfg.geometry.set_of(a), set);
                assert_ne!(a, PhysicalAddress(0));
            }
            // The held-out target is congruent but never a member.
            assert_eq!(cfg.geometry.set_of(eset.target_addr), set);
            assert!(!eset.addrs.contains(&eset.target_addr));
        }
    }

    #[test]
    fn pure_lru_eviction_set_is_minimal() {
        let cfg = pure_lru_config();
        let mut kernel = SimKernel::new(&cfg);
        let eset = generate_eviction_set(&mut kernel, 100).unwrap();
        let target = eset.target_addr;
        // Removing any single member leaves the target un-evictable.
        for skip in 0..eset.addrs.len() {
            let reduced: Vec<PhysicalAddress> = eset
                .addrs
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &a)| a)
                .collect();
            let rate = eviction_rate_timed(&mut kernel, &reduced, target, 32);
            assert!(
                rate < cfg.attack.eviction_threshold,
                "dropping member {skip} should break eviction, rate {rate}"
            );
        }
    }

    #[test]
    fn eviction_set_under_randomized_policy_still_works() {
        let cfg = ExperimentConfig::default();
        let mut kernel = SimKernel::new(&cfg);
        let eset = generate_eviction_set(&mut kernel, 32).unwrap();
        assert!(
            (cfg.geometry.n_ways..=cfg.geometry.n_ways + 6).contains(&eset.addrs.len()),
            "size {} way out of range for a nearly-LRU 12-way cache",
            eset.addrs.len()
        );
        assert!(eset.rate_evals <= 4 * eset.grown_size);
        // All members index the requested set; the useful ones share the
        // target's slice.
        for &a in &eset.addrs {
            assert_eq!(cfg.geometry.set_of(a), 32);
        }
        let same_slice = eset
            .addrs
            .iter()
            .filter(|&&a| cfg.geometry.slice_of(a) == eset.target.slice)
            .count();
        assert!(same_slice >= cfg.geometry.n_ways);
    }

    fn small_key_setup(seed: u64) -> (ExperimentConfig, RsaKey, VictimLayout) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.victim.key_bits = 64;
        let key = RsaKey::generate(64, &mut ChaCha12Rng::seed_from_u64(seed));
        let layout = allocate_victim(cfg.geometry, &cfg.memory, 64, None).unwrap();
        (cfg, key, layout)
    }

    #[test]
    fn monitor_sees_every_multiplication_and_nothing_else() {
        let (cfg, key, layout) = small_key_setup(11);
        let mut kernel = SimKernel::new(&cfg);
        let set = layout.locations[0].set;
        let eset = generate_eviction_set(&mut kernel, set).unwrap();
        // Default bases are slice-aligned: the victim's line and the eviction
        // set's target land in the same slice, so probes see the sweeps.
        assert_eq!(eset.target.slice, layout.locations[0].slice);
        let trace = monitor(&mut kernel, &eset, &key, &layout, 5, 0, None);
        let mults = key.hamming_weight();
        assert!(
            trace.timestamps.len() >= mults,
            "{} recorded probes for {} multiplications",
            trace.timestamps.len(),
            mults
        );
        assert!(trace.timestamps.len() <= mults * cfg.victim.k_touches + 4);
        for w in trace.timestamps.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(*trace.timestamps.last().unwrap() <= trace.meta.span_units);
        assert!(trace.meta.probes > 0);
        let baseline = probe_baseline_cycles(eset.addrs.len(), cfg.timings.probe_hit_cost) as f64;
        assert!(trace.meta.mean_probe_cycles >= baseline);
        // One displaced way makes the sliding-window probe miss-cascade
        // through the whole set, so a disturbed probe can cost up to a full
        // set of row-conflict fills on top of the all-hit baseline.
        let cascade = cfg.geometry.n_ways as f64
            * (cfg.timings.dram.row_conflict + cfg.timings.dram.jitter) as f64;
        assert!(trace.meta.mean_probe_cycles < baseline + cascade);
    }

    #[test]
    fn quiet_set_records_nothing_and_monitor_is_deterministic() {
        let (cfg, key, layout) = small_key_setup(12);
        let quiet_set = (layout.locations[0].set + 700) % cfg.geometry.n_sets;
        let run = |_: u32| {
            let mut kernel = SimKernel::new(&cfg);
            let eset = generate_eviction_set(&mut kernel, quiet_set).unwrap();
            monitor(&mut kernel, &eset, &key, &layout, 5, 0, None)
        };
        let a = run(0);
        let b = run(1);
        assert!(a.timestamps.is_empty(), "no victim activity, no noise: {:?}", a.timestamps);
        assert_eq!(a, b, "identical configuration and seeds must give identical traces");
        assert!(a.meta.span_units > 0);
    }

    #[test]
    fn budget_truncates_monitoring_but_signature_completes() {
        let (cfg, key, layout) = small_key_setup(13);
        let mut kernel = SimKernel::new(&cfg);
        let set = layout.locations[0].set;
        let eset = generate_eviction_set(&mut kernel, set).unwrap();
        let full = monitor(&mut kernel, &eset, &key, &layout, 5, 0, None);
        let full_span = full.meta.span_units;
        let start_after_full = kernel.now;

        let budget = (full_span as f64 * cfg.timings.counter_resolution / 3.0) as u64;
        let cut = monitor(&mut kernel, &eset, &key, &layout, 5, 1, Some(budget));
        assert!(cut.meta.span_units < full_span / 2);
        assert!(cut.timestamps.len() < full.timestamps.len());
        // The victim ran to completion regardless: the kernel clock advanced
        // by at least one undisturbed signature, i.e. one base-cost operation
        // per square and per multiply.
        let ops = (key.bits.len() - 1) + (key.hamming_weight() - 1);
        let quiet_cycles = ops as f64 * crate::victim::base_mult_cost(key.bits.len()).0;
        assert!((kernel.now - start_after_full) as f64 >= quiet_cycles * 0.9);
    }

    #[test]
    fn spurious_misses_appear_at_the_configured_rate() {
        let (mut cfg, key, layout) = small_key_setup(14);
        cfg.noise.spurious_miss_rate = 0.01;
        let quiet_set = (layout.locations[0].set + 900) % cfg.geometry.n_sets;
        let mut kernel = SimKernel::new(&cfg);
        let eset = generate_eviction_set(&mut kernel, quiet_set).unwrap();
        let trace = monitor(&mut kernel, &eset, &key, &layout, 5, 0, None);
        let expected = trace.meta.probes as f64 * 0.01;
        let got = trace.timestamps.len() as f64;
        assert!(
            (got - expected).abs() < 4.0 * expected.sqrt() + 2.0,
            "spurious rate off: {got} recorded vs expected {expected}"
        );
    }

    #[test]
    fn scan_finds_the_victim_sets_and_stops_early() {
        let (cfg, key, layout) = small_key_setup(15);
        let mut kernel = SimKernel::new(&cfg);
        let outcome = scan_vulnerable_sets(&mut kernel, &key, &layout).unwrap();
        let victim_set = layout.locations[0].set;
        assert!(
            outcome.run.contains(&victim_set),
            "run {:?} misses victim set {victim_set}",
            outcome.run
        );
        assert!(!outcome.candidates.is_empty());
        for c in &outcome.candidates {
            assert!(outcome.run.contains(&c.set));
        }
        // Early stop: nothing close to a full 2048-set walk.
        assert!(outcome.sets_scanned < 80, "scanned {}", outcome.sets_scanned);
        // Sets outside the victim run reported no activity.
        let quiet = outcome.per_set.iter().filter(|r| !r.matched).count();
        assert!(quiet >= outcome.sets_scanned - layout.lines.len() - 2);
    }

    #[test]
    fn run_helpers_pick_longest_and_handle_wrap() {
        let mk = |flags: &[bool]| -> Vec<SetScan> {
            flags
                .iter()
                .enumerate()
                .map(|(i, &m)| SetScan { set: i as u64, slice: 0, peaks: 0, matched: m })
                .collect()
        };
        let r = best_run(&mk(&[false, true, true, false, true, true, true, false]), false);
        assert_eq!(r, vec![4, 5, 6]);
        // Wrapping run under full scan: tail joins head.
        let r = best_run(&mk(&[true, true, false, false, true]), true);
        assert_eq!(r, vec![4, 0, 1]);
        assert_eq!(finished_run_end(&[false; 10], 8), None);
        let mut flags = vec![false; 12];
        flags[2] = true;
        flags[3] = true;
        assert_eq!(finished_run_end(&flags, 8), Some(3));
    }
}
