//! Physical-address arithmetic shared by the cache and DRAM models: set and
//! slice indexing, XOR-mask bank functions, and the row-start pair search that
//! seeds eviction-set construction.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Cache line size in bytes. Fixed for the modeled microarchitecture.
pub const LINE_SIZE: u64 = 64;
/// Lowest physical address bit that feeds the cache set index.
pub const SET_INDEX_LOW_BIT: u32 = 6;

/// A physical address in the simulated machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhysicalAddress(pub u64);

impl PhysicalAddress {
    /// Base address of the cache line containing this address.
    pub fn line_base(self) -> PhysicalAddress {
        PhysicalAddress(self.0 & !(LINE_SIZE - 1))
    }

    /// Index of the cache line in physical memory (address >> 6).
    pub fn line_index(self) -> u64 {
        self.0 >> SET_INDEX_LOW_BIT
    }

    pub fn add(self, delta: u64) -> PhysicalAddress {
        PhysicalAddress(self.0 + delta)
    }
}

/// Last-level cache geometry. Defaults model a 3 MB, 12-way LLC split into
/// two slices of 2048 sets each; `n_sets` is the per-slice set count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheGeometry {
    pub n_sets: u64,
    pub n_ways: usize,
    pub n_slices: u64,
}

impl Default for CacheGeometry {
    fn default() -> Self {
        CacheGeometry { n_sets: 2048, n_ways: 12, n_slices: 2 }
    }
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.n_sets.is_power_of_two() {
            return Err(SimError::Config(format!("n_sets must be a power of two, got {}", self.n_sets)));
        }
        if !self.n_slices.is_power_of_two() {
            return Err(SimError::Config(format!("n_slices must be a power of two, got {}", self.n_slices)));
        }
        if self.n_ways == 0 {
            return Err(SimError::Config("n_ways must be at least 1".into()));
        }
        Ok(())
    }

    /// Set index: bits [6, 6 + log2(n_sets)) of the address.
    pub fn set_of(&self, addr: PhysicalAddress) -> u64 {
        addr.line_index() & (self.n_sets - 1)
    }

    /// Slice: XOR-fold of all address bits >= 6, reduced mod n_slices.
    ///
    /// The real slice-selection function hashes the full physical address with
    /// an undocumented polynomial; because the simulator controls both sides of
    /// the channel, any documented address-dependent fold reproduces the
    /// relevant dynamics (stride members alternating slices, pruning).
    pub fn slice_of(&self, addr: PhysicalAddress) -> u64 {
        if self.n_slices == 1 {
            return 0;
        }
        let shift = self.n_slices.trailing_zeros();
        let mask = self.n_slices - 1;
        let mut v = addr.line_index();
        let mut fold = 0u64;
        while v != 0 {
            fold ^= v & mask;
            v >>= shift;
        }
        fold
    }

    pub fn location_of(&self, addr: PhysicalAddress) -> CacheLocation {
        CacheLocation { set: self.set_of(addr), slice: self.slice_of(addr) }
    }

    /// Stride that preserves the set index while walking distinct tags:
    /// n_sets * n_slices * 64 B = 256 KB at default geometry.
    pub fn set_stride(&self) -> u64 {
        self.n_sets * self.n_slices * LINE_SIZE
    }
}

/// A (set, slice) pair identifying one congruence class of the LLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheLocation {
    pub set: u64,
    pub slice: u64,
}

/// DRAM addressing functions: each of the six bank coordinates is the XOR of
/// a fixed set of physical address bits; the row index is the address shifted
/// by `row_low_bit`. Defaults model a dual-DIMM DDR4 configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramMapping {
    /// Bit positions XORed into the channel select.
    pub channel: Vec<u32>,
    /// Bank group bit 0.
    pub bg0: Vec<u32>,
    /// Bank group bit 1.
    pub bg1: Vec<u32>,
    /// Bank address bit 0.
    pub ba0: Vec<u32>,
    /// Bank address bit 1.
    pub ba1: Vec<u32>,
    /// Rank select.
    pub rank: Vec<u32>,
    /// The row index is the physical address shifted right by this many bits.
    pub row_low_bit: u32,
}

impl Default for DramMapping {
    fn default() -> Self {
        DramMapping {
            channel: vec![19, 18, 13, 12, 9, 8],
            bg0: vec![14, 7],
            bg1: vec![22, 18],
            ba0: vec![19, 15],
            ba1: vec![21, 17],
            rank: vec![20, 16],
            row_low_bit: 18,
        }
    }
}

fn mask_of(bits: &[u32]) -> u64 {
    bits.iter().fold(0u64, |m, b| m | (1u64 << b))
}

fn xor_bits(addr: u64, mask: u64) -> u8 {
    ((addr & mask).count_ones() & 1) as u8
}

impl DramMapping {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, bits) in [
            ("channel", &self.channel),
            ("bg0", &self.bg0),
            ("bg1", &self.bg1),
            ("ba0", &self.ba0),
            ("ba1", &self.ba1),
            ("rank", &self.rank),
        ] {
            for &b in bits.iter() {
                if !(6..=22).contains(&b) {
                    return Err(SimError::Config(format!(
                        "dram mapping {name} uses bit {b}, outside the supported range 6..=22"
                    )));
                }
            }
        }
        if self.row_low_bit < 18 {
            return Err(SimError::Config(format!(
                "row_low_bit must be >= 18, got {}",
                self.row_low_bit
            )));
        }
        Ok(())
    }

    pub fn location_of(&self, addr: PhysicalAddress) -> DramLocation {
        let a = addr.0;
        DramLocation {
            channel: xor_bits(a, mask_of(&self.channel)),
            bank_group: xor_bits(a, mask_of(&self.bg0)) | (xor_bits(a, mask_of(&self.bg1)) << 1),
            bank: xor_bits(a, mask_of(&self.ba0)) | (xor_bits(a, mask_of(&self.ba1)) << 1),
            rank: xor_bits(a, mask_of(&self.rank)),
            row: a >> self.row_low_bit,
        }
    }
}

/// Decoded DRAM coordinates of a physical address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramLocation {
    pub channel: u8,
    pub bank_group: u8,
    pub bank: u8,
    pub rank: u8,
    pub row: u64,
}

impl DramLocation {
    /// Everything except the row: two addresses conflict (same bank, different
    /// row) exactly when their bank keys match and rows differ.
    pub fn bank_key(&self) -> (u8, u8, u8, u8) {
        (self.channel, self.rank, self.bank_group, self.bank)
    }
}

/// Exhaustively searches a `[0, block_size]` address block for pairs
/// (low, high) that land in the same DRAM bank but different rows, sit 64 B to
/// 4 KB apart, and have fully determined middle bits: bits 6..=21 all ones for
/// the low member and all zeros for the high member. Such pairs straddle row
/// starts, so timing them identifies where a DRAM row begins without knowing
/// the physical base of the scanned buffer.
///
/// Returns an empty vector when the mapping makes the constraints
/// unsatisfiable, which signals misconfigured masks.
pub fn find_row_start_pairs(
    mapping: &DramMapping,
    block_size: u64,
) -> Vec<(PhysicalAddress, PhysicalAddress)> {
    const MID_MASK: u64 = ((1 << 22) - 1) & !((1 << 6) - 1); // bits 6..=21
    let mut pairs = Vec::new();
    let mut low = 0u64;
    while low + LINE_SIZE <= block_size {
        if low & MID_MASK == MID_MASK {
            let low_loc = mapping.location_of(PhysicalAddress(low));
            let mut delta = LINE_SIZE;
            while delta <= 4096 && low + delta <= block_size {
                let high = low + delta;
                if high & MID_MASK == 0 {
                    let high_loc = mapping.location_of(PhysicalAddress(high));
                    if low_loc.bank_key() == high_loc.bank_key() && low_loc.row != high_loc.row {
                        pairs.push((PhysicalAddress(low), PhysicalAddress(high)));
                    }
                }
                delta += LINE_SIZE;
            }
        }
        low += LINE_SIZE;
    }
    pairs
}
