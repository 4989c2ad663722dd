//! Set-associative, multi-slice last-level cache model with a
//! pseudo-LRU-with-randomization replacement policy.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::addr::{CacheGeometry, PhysicalAddress};

/// Replacement policy for a full set on a miss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplacementPolicy {
    /// Probability that the true LRU way is chosen as the victim; the
    /// remainder picks a uniformly random resident way. 1.0 selects pure LRU.
    pub lru_prob: f64,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        ReplacementPolicy { lru_prob: 0.9 }
    }
}

impl ReplacementPolicy {
    pub const PURE_LRU: ReplacementPolicy = ReplacementPolicy { lru_prob: 1.0 };

    pub fn validate(&self) -> Result<(), crate::error::SimError> {
        if !(0.0..=1.0).contains(&self.lru_prob) {
            return Err(crate::error::SimError::Config(format!(
                "lru_prob must be in [0, 1], got {}",
                self.lru_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    /// Line index (address >> 6); uniquely identifies the cached line.
    tag: u64,
    last_used: u64,
}

/// Result of a single cache lookup, before timing is applied.
#[derive(Debug, Clone, Copy)]
pub struct Access {
    pub hit: bool,
    /// Line index of the evicted line, if the insertion displaced one.
    pub evicted: Option<u64>,
}

/// The modeled LLC: `n_slices * n_sets` sets of `n_ways` lines each.
#[derive(Debug, Clone)]
pub struct CacheSim {
    geo: CacheGeometry,
    policy: ReplacementPolicy,
    sets: Vec<Vec<Line>>,
    tick: u64,
}

impl CacheSim {
    pub fn new(geo: CacheGeometry, policy: ReplacementPolicy) -> CacheSim {
        let count = (geo.n_slices * geo.n_sets) as usize;
        let mut sets = Vec::with_capacity(count);
        for _ in 0..count {
            sets.push(Vec::with_capacity(geo.n_ways));
        }
        CacheSim { geo, policy, sets, tick: 0 }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geo
    }

    fn set_slot(&self, addr: PhysicalAddress) -> usize {
        let loc = self.geo.location_of(addr);
        (loc.slice * self.geo.n_sets + loc.set) as usize
    }

    /// True when the line containing `addr` is currently cached.
    pub fn is_resident(&self, addr: PhysicalAddress) -> bool {
        let tag = addr.line_index();
        self.sets[self.set_slot(addr)].iter().any(|l| l.tag == tag)
    }

    /// Number of resident lines in the set `addr` maps to.
    pub fn occupancy(&self, addr: PhysicalAddress) -> usize {
        self.sets[self.set_slot(addr)].len()
    }

    /// Look up `addr`, inserting it on a miss. The RNG is consumed only when a
    /// full set must choose a victim, so hit-only sequences are
    /// RNG-transparent (the event-driven kernel relies on this to skip over
    /// provably all-hit probe sequences).
    pub fn access(&mut self, addr: PhysicalAddress, rng: &mut ChaCha12Rng) -> Access {
        let slot = self.set_slot(addr);
        let tag = addr.line_index();
        self.tick += 1;
        let set = &mut self.sets[slot];

        if let Some(line) = set.iter_mut().find(|l| l.tag == tag) {
            line.last_used = self.tick;
            return Access { hit: true, evicted: None };
        }

        let evicted = if set.len() < self.geo.n_ways {
            set.push(Line { tag, last_used: self.tick });
            None
        } else {
            let victim = if rng.gen::<f64>() < self.policy.lru_prob {
                set.iter()
                    .enumerate()
                    .min_by_key(|(_, l)| l.last_used)
                    .map(|(i, _)| i)
                    .unwrap()
            } else {
                rng.gen_range(0..set.len())
            };
            let old = set[victim].tag;
            set[victim] = Line { tag, last_used: self.tick };
            Some(old)
        };
        Access { hit: false, evicted }
    }

    /// Drop the line containing `addr` if resident. Used to model flushes in
    /// tests; the attack itself never flushes.
    pub fn evict_line(&mut self, addr: PhysicalAddress) {
        let slot = self.set_slot(addr);
        let tag = addr.line_index();
        self.sets[slot].retain(|l| l.tag != tag);
    }
}

/// Fraction of `trials` in which accessing `eviction_set` with the sliding
/// doubled-window pattern evicts a freshly cached `target` line.
pub fn eviction_rate(
    cache: &mut CacheSim,
    eviction_set: &[PhysicalAddress],
    target: PhysicalAddress,
    trials: usize,
    rng: &mut ChaCha12Rng,
) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let mut evictions = 0usize;
    for _ in 0..trials {
        cache.access(target, rng);
        // Two full pattern passes per trial: a single pass can leave the
        // target resident when the randomized policy picks a non-LRU victim,
        // which would make the measured rate hover just under 1.0 and turn
        // high-confidence confirmation runs into coin flips.
        for _ in 0..2 {
            for idx in crate::attacker::pattern_indices(eviction_set.len()) {
                cache.access(eviction_set[idx], rng);
            }
        }
        if !cache.is_resident(target) {
            evictions += 1;
        }
    }
    evictions as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::LINE_SIZE;
    use rand::SeedableRng;

    fn small_geo() -> CacheGeometry {
        CacheGeometry { n_sets: 16, n_ways: 4, n_slices: 1 }
    }

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(7)
    }

    /// Addresses in the same set: stride = n_sets * 64 for a 1-slice cache.
    fn same_set_addrs(geo: &CacheGeometry, set: u64, n: usize) -> Vec<PhysicalAddress> {
        (0..n as u64).map(|i| PhysicalAddress((set + i * geo.n_sets) * LINE_SIZE)).collect()
    }

    #[test]
    fn second_access_hits() {
        let mut c = CacheSim::new(small_geo(), ReplacementPolicy::default());
        let mut r = rng();
        let a = PhysicalAddress(0x1000);
        assert!(!c.access(a, &mut r).hit);
        assert!(c.access(a, &mut r).hit);
        // Any address within the same line also hits.
        assert!(c.access(PhysicalAddress(0x103f), &mut r).hit);
    }

    #[test]
    fn occupancy_never_exceeds_ways() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::default());
        let mut r = rng();
        let addrs = same_set_addrs(&geo, 3, 64);
        for &a in &addrs {
            c.access(a, &mut r);
            assert!(c.occupancy(a) <= geo.n_ways);
        }
        assert_eq!(c.occupancy(addrs[0]), geo.n_ways);
    }

    #[test]
    fn accessed_line_is_always_resident_afterwards() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::default());
        let mut r = rng();
        for i in 0..1000u64 {
            let a = PhysicalAddress((i * 37) % (1 << 20) / 64 * 64);
            c.access(a, &mut r);
            assert!(c.is_resident(a));
        }
    }

    #[test]
    fn pure_lru_evicts_least_recently_used() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::PURE_LRU);
        let mut r = rng();
        let addrs = same_set_addrs(&geo, 0, 5);
        for &a in &addrs[..4] {
            c.access(a, &mut r);
        }
        // Refresh addrs[0]; the LRU is now addrs[1].
        c.access(addrs[0], &mut r);
        let out = c.access(addrs[4], &mut r);
        assert_eq!(out.evicted, Some(addrs[1].line_index()));
    }

    #[test]
    fn eviction_rate_of_empty_set_is_zero() {
        let mut c = CacheSim::new(small_geo(), ReplacementPolicy::default());
        let mut r = rng();
        assert_eq!(eviction_rate(&mut c, &[], PhysicalAddress(0), 32, &mut r), 0.0);
    }

    #[test]
    fn eviction_rate_of_wrong_set_is_zero() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::default());
        let mut r = rng();
        let eset = same_set_addrs(&geo, 5, 8);
        let target = PhysicalAddress(3 * LINE_SIZE); // set 3, not 5
        assert_eq!(eviction_rate(&mut c, &eset, target, 32, &mut r), 0.0);
    }

    #[test]
    fn eviction_rate_full_set_pure_lru_is_one() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::PURE_LRU);
        let mut r = rng();
        let eset = same_set_addrs(&geo, 2, 4);
        let target = PhysicalAddress((2 + 10 * geo.n_sets) * LINE_SIZE);
        assert_eq!(eviction_rate(&mut c, &eset, target, 64, &mut r), 1.0);
    }

    #[test]
    fn eviction_rate_below_associativity_is_low() {
        let geo = small_geo();
        let mut c = CacheSim::new(geo, ReplacementPolicy::PURE_LRU);
        let mut r = rng();
        let eset = same_set_addrs(&geo, 2, 3);
        let target = PhysicalAddress((2 + 10 * geo.n_sets) * LINE_SIZE);
        assert_eq!(eviction_rate(&mut c, &eset, target, 64, &mut r), 0.0);
    }

    /// The doubled sliding-window pattern recovers from randomized victim
    /// choices: with the default policy a correct-size set still reaches the
    /// grow-loop's stopping threshold once one or two extra members join.
    #[test]
    fn randomized_policy_rate_reaches_stopping_threshold() {
        let geo = CacheGeometry { n_sets: 64, n_ways: 12, n_slices: 1 };
        let mut c = CacheSim::new(geo, ReplacementPolicy::default());
        let mut r = rng();
        let target = PhysicalAddress((7 + 40 * geo.n_sets) * LINE_SIZE);
        let mut reached = false;
        for n in 12..=16 {
            let eset = same_set_addrs(&geo, 7, n);
            if eviction_rate(&mut c, &eset, target, 512, &mut r) > 0.99 {
                reached = true;
                break;
            }
        }
        assert!(reached, "rate > 99% must be reachable under the default policy");
    }
}
