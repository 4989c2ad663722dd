//! Open-row DRAM timing model: per-bank row buffers, three latency classes
//! (row hit, closed row, row conflict), and the alternating-access hammer
//! primitive used to locate row starts by timing.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::addr::{DramMapping, PhysicalAddress};
use crate::error::SimError;

/// Memory-access latencies in cycles. Plumbing constants, configurable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramTimings {
    /// Access to the currently open row of a bank.
    pub row_hit: u64,
    /// First access to a bank with no open row.
    pub row_closed: u64,
    /// Access that must close one row and open another.
    pub row_conflict: u64,
    /// Uniform additive jitter in [-jitter, +jitter] cycles per access.
    pub jitter: u64,
}

impl Default for DramTimings {
    fn default() -> Self {
        DramTimings { row_hit: 200, row_closed: 250, row_conflict: 350, jitter: 5 }
    }
}

impl DramTimings {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.row_hit < self.row_closed && self.row_closed < self.row_conflict) {
            return Err(SimError::Config(format!(
                "dram latencies must satisfy row_hit < row_closed < row_conflict, got {}/{}/{}",
                self.row_hit, self.row_closed, self.row_conflict
            )));
        }
        if self.jitter * 2 >= self.row_closed - self.row_hit
            || self.jitter * 2 >= self.row_conflict - self.row_closed
        {
            return Err(SimError::Config(format!(
                "jitter {} too large to keep latency classes separable",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// DRAM state: the open row of every touched bank.
#[derive(Debug, Clone)]
pub struct DramSim {
    mapping: DramMapping,
    timings: DramTimings,
    open_rows: HashMap<(u8, u8, u8, u8), u64>,
}

impl DramSim {
    pub fn new(mapping: DramMapping, timings: DramTimings) -> DramSim {
        DramSim { mapping, timings, open_rows: HashMap::new() }
    }

    pub fn mapping(&self) -> &DramMapping {
        &self.mapping
    }

    pub fn timings(&self) -> &DramTimings {
        &self.timings
    }

    /// Latency of one DRAM access, updating the bank's open row.
    pub fn access(&mut self, addr: PhysicalAddress, rng: &mut ChaCha12Rng) -> u64 {
        let loc = self.mapping.location_of(addr);
        let key = loc.bank_key();
        let base = match self.open_rows.get(&key) {
            Some(&row) if row == loc.row => self.timings.row_hit,
            Some(_) => self.timings.row_conflict,
            None => self.timings.row_closed,
        };
        self.open_rows.insert(key, loc.row);
        let j = self.timings.jitter as i64;
        if j == 0 {
            base
        } else {
            (base as i64 + rng.gen_range(-j..=j)) as u64
        }
    }

    /// Mean per-access latency of `rounds` alternating accesses to `a` and
    /// `b`. Same-bank different-row pairs conflict on every access and stand
    /// out against same-row or different-bank pairs.
    pub fn hammer(
        &mut self,
        a: PhysicalAddress,
        b: PhysicalAddress,
        rounds: usize,
        rng: &mut ChaCha12Rng,
    ) -> f64 {
        if rounds == 0 {
            return 0.0;
        }
        let mut total = 0u64;
        for _ in 0..rounds {
            total += self.access(a, rng);
            total += self.access(b, rng);
        }
        total as f64 / (2 * rounds) as f64
    }
}
