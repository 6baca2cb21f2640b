//! Stacked-memory structure: vault/bank address mapping, per-bank request
//! queues with stall accounting, and crossbar transfer cost.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per block, the memory access granularity.
pub const BLOCK_BYTES: u64 = 16;
/// Largest sub-page indicator (256 B sub-pages).
pub const MAX_INDICATOR: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmcError {
    #[error("address {addr:#x} outside the {capacity}-byte address space")]
    AddressRange { addr: u64, capacity: u64 },
    #[error("sub-page indicator {0:#05b} not in 000..=100")]
    Indicator(u8),
    #[error("request of {n_blocks} blocks does not fit a {subpage_bytes}-byte sub-page")]
    RequestSpan { n_blocks: u32, subpage_bytes: u64 },
    #[error("request must cover at least one block")]
    EmptyRequest,
    #[error("vault {vault} out of range for {n_vaults} vaults")]
    VaultRange { vault: usize, n_vaults: usize },
    #[error("invalid memory config: {0}")]
    Config(String),
}

/// Memory-cube parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub n_vaults: usize,
    pub banks_per_vault: usize,
    pub capacity_bytes: u64,
    /// Host link bandwidth, bytes/s.
    pub external_bw: f64,
    /// Aggregate vault-side bandwidth, bytes/s.
    pub internal_bw: f64,
    pub pes_per_vault: usize,
    pub vault_freq_hz: f64,
    pub block_bytes: u64,
    /// Row access time for the first block of a burst.
    pub access_latency_ns: f64,
    /// Transfer time of each additional block in a burst.
    pub block_transfer_ns: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            n_vaults: 32,
            banks_per_vault: 16,
            capacity_bytes: 8 << 30,
            external_bw: 320e9,
            internal_bw: 512e9,
            pes_per_vault: 16,
            vault_freq_hz: 312.5e6,
            block_bytes: BLOCK_BYTES,
            access_latency_ns: 25.6,
            block_transfer_ns: 3.2,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<(), HmcError> {
        let pow2 = |n: u64| n > 0 && n.is_power_of_two();
        if !pow2(self.n_vaults as u64) || !pow2(self.banks_per_vault as u64) {
            return Err(HmcError::Config("vault and bank counts must be powers of two".into()));
        }
        if self.block_bytes != BLOCK_BYTES {
            return Err(HmcError::Config(format!("block size must be {BLOCK_BYTES} bytes")));
        }
        if !pow2(self.capacity_bytes) {
            return Err(HmcError::Config("capacity must be a power of two".into()));
        }
        let min_capacity = (self.n_vaults * self.banks_per_vault) as u64 * BLOCK_BYTES * (1 << MAX_INDICATOR);
        if self.capacity_bytes < min_capacity {
            return Err(HmcError::Config(format!(
                "capacity {} too small for the vault/bank geometry",
                self.capacity_bytes
            )));
        }
        if self.pes_per_vault == 0 {
            return Err(HmcError::Config("need at least one PE per vault".into()));
        }
        for (name, v) in [
            ("external_bw", self.external_bw),
            ("internal_bw", self.internal_bw),
            ("vault_freq_hz", self.vault_freq_hz),
            ("access_latency_ns", self.access_latency_ns),
            ("block_transfer_ns", self.block_transfer_ns),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HmcError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn bank_bytes(&self) -> u64 {
        self.capacity_bytes / (self.n_vaults * self.banks_per_vault) as u64
    }

    pub fn with_frequency(&self, freq_hz: f64) -> Self {
        HmcConfig {
            vault_freq_hz: freq_hz,
            ..*self
        }
    }

    pub fn with_vaults(&self, n_vaults: usize) -> Self {
        HmcConfig { n_vaults, ..*self }
    }

    fn ns_to_cycles(&self, ns: f64) -> u64 {
        // Guard against 25.6 ns * 312.5 MHz landing a hair above 8.
        ((ns * 1e-9 * self.vault_freq_hz) - 1e-9).ceil().max(1.0) as u64
    }

    /// Bank busy cycles for the first block of a burst.
    pub fn access_cycles(&self) -> u64 {
        self.ns_to_cycles(self.access_latency_ns)
    }

    /// Bank busy cycles for each further block of a burst.
    pub fn transfer_cycles(&self) -> u64 {
        self.ns_to_cycles(self.block_transfer_ns)
    }

    /// Bytes the crossbar moves per vault cycle.
    pub fn crossbar_bytes_per_cycle(&self) -> f64 {
        self.internal_bw / self.vault_freq_hz
    }

    /// Bytes one vault port moves per cycle.
    pub fn port_bytes_per_cycle(&self) -> f64 {
        self.crossbar_bytes_per_cycle() / self.n_vaults as f64
    }

    /// Bytes the host link moves per cycle.
    pub fn external_bytes_per_cycle(&self) -> f64 {
        self.external_bw / self.vault_freq_hz
    }

    pub fn block_addr_bits(&self) -> u32 {
        (self.capacity_bytes / BLOCK_BYTES).trailing_zeros()
    }
}

/// Cycles to move `bytes` through the crossbar at the aggregate internal
/// bandwidth.
pub fn crossbar_cost(bytes: u64, cfg: &HmcConfig) -> u64 {
    (bytes as f64 / cfg.crossbar_bytes_per_cycle()).ceil() as u64
}

/// Cycles one vault port needs to move `bytes`, at its share of the
/// internal bandwidth.
pub fn link_cost(bytes: u64, cfg: &HmcConfig) -> u64 {
    (bytes as f64 / cfg.port_bytes_per_cycle()).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AddressMode {
    /// Block, vault, bank, sub-page from low to high bits.
    Default,
    /// Block, bank, sub-page, vault from low to high bits.
    Proposed,
}

/// Decoded position of a block address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Location {
    pub vault: usize,
    pub bank: usize,
    pub subpage: u64,
    pub block: u64,
}

/// Bit-field layout of a block address for one mode and sub-page size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressLayout {
    pub mode: AddressMode,
    /// log2 of blocks per sub-page.
    pub k: u32,
    vault_bits: u32,
    bank_bits: u32,
    block_addr_bits: u32,
}

impl AddressLayout {
    pub fn new(mode: AddressMode, indicator: u8, cfg: &HmcConfig) -> Result<Self, HmcError> {
        if indicator > MAX_INDICATOR {
            return Err(HmcError::Indicator(indicator));
        }
        cfg.validate()?;
        Ok(AddressLayout {
            mode,
            k: indicator as u32,
            vault_bits: cfg.n_vaults.trailing_zeros(),
            bank_bits: cfg.banks_per_vault.trailing_zeros(),
            block_addr_bits: cfg.block_addr_bits(),
        })
    }

    /// Width of the sub-page ID field.
    pub fn subpage_bits(&self) -> u32 {
        self.block_addr_bits - self.k - self.vault_bits - self.bank_bits
    }

    pub fn subpage_bytes(&self) -> u64 {
        BLOCK_BYTES << self.k
    }

    /// Field widths from low to high bits.
    pub fn field_widths(&self) -> [(&'static str, u32); 4] {
        match self.mode {
            AddressMode::Default => [
                ("block", self.k),
                ("vault", self.vault_bits),
                ("bank", self.bank_bits),
                ("subpage", self.subpage_bits()),
            ],
            AddressMode::Proposed => [
                ("block", self.k),
                ("bank", self.bank_bits),
                ("subpage", self.subpage_bits()),
                ("vault", self.vault_bits),
            ],
        }
    }

    fn capacity(&self) -> u64 {
        BLOCK_BYTES << self.block_addr_bits
    }

    pub fn map(&self, addr: u64) -> Result<Location, HmcError> {
        if addr >= self.capacity() {
            return Err(HmcError::AddressRange {
                addr,
                capacity: self.capacity(),
            });
        }
        let mut rest = addr >> BLOCK_BYTES.trailing_zeros();
        let mut take = |bits: u32| {
            let v = rest & ((1u64 << bits) - 1);
            rest >>= bits;
            v
        };
        let mut loc = Location {
            vault: 0,
            bank: 0,
            subpage: 0,
            block: 0,
        };
        for (name, bits) in self.field_widths() {
            let v = take(bits);
            match name {
                "block" => loc.block = v,
                "vault" => loc.vault = v as usize,
                "bank" => loc.bank = v as usize,
                _ => loc.subpage = v,
            }
        }
        Ok(loc)
    }

    /// Block-aligned byte address of `loc`.
    pub fn unmap(&self, loc: Location) -> u64 {
        let mut out = 0u64;
        let mut shift = 0u32;
        for (name, bits) in self.field_widths() {
            let v = match name {
                "block" => loc.block,
                "vault" => loc.vault as u64,
                "bank" => loc.bank as u64,
                _ => loc.subpage,
            };
            out |= (v & ((1u64 << bits) - 1)) << shift;
            shift += bits;
        }
        out << BLOCK_BYTES.trailing_zeros()
    }
}

/// Default-mode mapping with sub-page size `16·2^k` bytes.
pub fn map_address_default(addr: u64, k: u8, cfg: &HmcConfig) -> Result<Location, HmcError> {
    AddressLayout::new(AddressMode::Default, k, cfg)?.map(addr)
}

/// Proposed mapping driven by the request's sub-page indicator.
pub fn map_address_pim(addr: u64, indicator: u8, cfg: &HmcConfig) -> Result<Location, HmcError> {
    AddressLayout::new(AddressMode::Proposed, indicator, cfg)?.map(addr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Requester {
    Host,
    Pe { vault: usize, pe: usize },
}

impl fmt::Display for Requester {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requester::Host => f.write_str("host"),
            Requester::Pe { vault, pe } => write!(f, "pe{vault}.{pe}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryRequest {
    pub requester: Requester,
    pub address: u64,
    pub n_blocks: u32,
    pub indicator: u8,
    pub issue_cycle: u64,
}

/// One serviced request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub request: MemoryRequest,
    pub vault: usize,
    pub bank: usize,
    pub cycle_issued: u64,
    pub cycle_completed: u64,
    pub stalled_cycles: u64,
}

impl Completion {
    pub const CSV_HEADER: &'static str = "cycle_issued,cycle_completed,requester,vault,bank,stalled_cycles";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.cycle_issued, self.cycle_completed, self.request.requester, self.vault, self.bank, self.stalled_cycles
        )
    }
}

#[derive(Debug, Clone)]
struct Pending {
    seq: u64,
    request: MemoryRequest,
    bank: usize,
    stalled: u64,
}

/// Queues and bank timers of one vault.
#[derive(Debug, Clone)]
pub struct VaultState {
    banks: Vec<VecDeque<Pending>>,
    bank_busy_until: Vec<u64>,
    queued: usize,
    vrs_count: u64,
    bank_accesses: u64,
    host_priority: bool,
}

impl VaultState {
    pub fn new(n_banks: usize) -> Self {
        VaultState {
            banks: vec![VecDeque::new(); n_banks],
            bank_busy_until: vec![0; n_banks],
            queued: 0,
            vrs_count: 0,
            bank_accesses: 0,
            host_priority: false,
        }
    }

    /// Queue depth `Q`.
    pub fn q(&self) -> usize {
        self.queued
    }

    pub fn vrs_count(&self) -> u64 {
        self.vrs_count
    }

    /// Blocks read or written so far.
    pub fn bank_accesses(&self) -> u64 {
        self.bank_accesses
    }

    pub fn bank_busy_until(&self) -> &[u64] {
        &self.bank_busy_until
    }

    pub fn set_host_priority(&mut self, on: bool) {
        self.host_priority = on;
    }

    pub fn host_priority(&self) -> bool {
        self.host_priority
    }

    /// Requests in arrival order.
    pub fn queue(&self) -> Vec<MemoryRequest> {
        let mut all: Vec<&Pending> = self.banks.iter().flatten().collect();
        all.sort_by_key(|p| p.seq);
        all.into_iter().map(|p| p.request).collect()
    }

    fn pick(&self, bank: usize) -> Option<usize> {
        let q = &self.banks[bank];
        if self.host_priority {
            if let Some(pos) = q.iter().position(|p| p.request.requester == Requester::Host) {
                return Some(pos);
            }
        }
        (!q.is_empty()).then_some(0)
    }
}

/// All vaults of one cube plus the request-to-bank mapping.
#[derive(Debug, Clone)]
pub struct VaultArray {
    cfg: HmcConfig,
    mode: AddressMode,
    vaults: Vec<VaultState>,
    next_seq: u64,
    access_cycles: u64,
    transfer_cycles: u64,
    in_flight: Vec<Completion>,
}

impl VaultArray {
    pub fn new(cfg: HmcConfig, mode: AddressMode) -> Result<Self, HmcError> {
        cfg.validate()?;
        Ok(VaultArray {
            vaults: (0..cfg.n_vaults)
                .map(|_| VaultState::new(cfg.banks_per_vault))
                .collect(),
            cfg,
            mode,
            next_seq: 0,
            access_cycles: cfg.access_cycles(),
            transfer_cycles: cfg.transfer_cycles(),
            in_flight: Vec::new(),
        })
    }

    pub fn config(&self) -> &HmcConfig {
        &self.cfg
    }

    pub fn vault(&self, v: usize) -> &VaultState {
        &self.vaults[v]
    }

    pub fn vault_mut(&mut self, v: usize) -> &mut VaultState {
        &mut self.vaults[v]
    }

    pub fn n_vaults(&self) -> usize {
        self.vaults.len()
    }

    pub fn total_vrs(&self) -> u64 {
        self.vaults.iter().map(|v| v.vrs_count).sum()
    }

    pub fn total_bank_accesses(&self) -> u64 {
        self.vaults.iter().map(|v| v.bank_accesses).sum()
    }

    /// Bank busy time for a burst of `n_blocks`.
    pub fn burst_cycles(&self, n_blocks: u32) -> u64 {
        self.access_cycles + (n_blocks.max(1) as u64 - 1) * self.transfer_cycles
    }

    pub fn locate(&self, req: &MemoryRequest) -> Result<Location, HmcError> {
        if req.n_blocks == 0 {
            return Err(HmcError::EmptyRequest);
        }
        let layout = AddressLayout::new(self.mode, req.indicator, &self.cfg)?;
        let loc = layout.map(req.address)?;
        if matches!(req.requester, Requester::Pe { .. }) && loc.block + req.n_blocks as u64 > 1u64 << layout.k {
            return Err(HmcError::RequestSpan {
                n_blocks: req.n_blocks,
                subpage_bytes: layout.subpage_bytes(),
            });
        }
        Ok(loc)
    }

    /// Appends `req` to its vault's queue.
    pub fn enqueue(&mut self, req: MemoryRequest) -> Result<Location, HmcError> {
        let loc = self.locate(&req)?;
        self.enqueue_at(req, loc.vault, loc.bank)?;
        Ok(loc)
    }

    /// Appends `req` with an explicit target, bypassing address decoding.
    pub fn enqueue_at(&mut self, req: MemoryRequest, vault: usize, bank: usize) -> Result<(), HmcError> {
        if req.n_blocks == 0 {
            return Err(HmcError::EmptyRequest);
        }
        let n_vaults = self.vaults.len();
        let v = self
            .vaults
            .get_mut(vault)
            .ok_or(HmcError::VaultRange { vault, n_vaults })?;
        let bank = bank % v.banks.len();
        v.banks[bank].push_back(Pending {
            seq: self.next_seq,
            request: req,
            bank,
            stalled: 0,
        });
        v.queued += 1;
        self.next_seq += 1;
        Ok(())
    }

    /// Issues, at `cycle`, the oldest eligible request of every idle bank,
    /// charges one stall cycle to every request left waiting on a busy bank,
    /// and returns the requests whose service ends by `cycle`.
    pub fn service_cycle(&mut self, cycle: u64) -> Vec<Completion> {
        self.issue(cycle);
        self.charge_stalls(1, cycle);
        self.drain_completed(cycle)
    }

    fn issue(&mut self, cycle: u64) {
        for (vid, v) in self.vaults.iter_mut().enumerate() {
            if v.queued == 0 {
                continue;
            }
            for bank in 0..v.banks.len() {
                if v.bank_busy_until[bank] > cycle {
                    continue;
                }
                let Some(pos) = v.pick(bank) else { continue };
                if v.banks[bank][pos].request.issue_cycle > cycle {
                    continue;
                }
                let p = v.banks[bank].remove(pos).expect("position in range");
                let busy = self.access_cycles + (p.request.n_blocks.max(1) as u64 - 1) * self.transfer_cycles;
                v.bank_busy_until[bank] = cycle + busy;
                v.queued -= 1;
                v.bank_accesses += p.request.n_blocks as u64;
                self.in_flight.push(Completion {
                    request: p.request,
                    vault: vid,
                    bank: p.bank,
                    cycle_issued: cycle,
                    cycle_completed: cycle + busy,
                    stalled_cycles: p.stalled,
                });
            }
        }
    }

    /// Adds `span` stall cycles to every arrived request blocked by a busy
    /// bank as of `cycle`.
    fn charge_stalls(&mut self, span: u64, cycle: u64) {
        for v in &mut self.vaults {
            if v.queued == 0 {
                continue;
            }
            for (bank, q) in v.banks.iter_mut().enumerate() {
                if v.bank_busy_until[bank] <= cycle {
                    continue;
                }
                for p in q.iter_mut().filter(|p| p.request.issue_cycle <= cycle) {
                    p.stalled += span;
                    v.vrs_count += span;
                }
            }
        }
    }

    fn drain_completed(&mut self, cycle: u64) -> Vec<Completion> {
        let (done, rest): (Vec<_>, Vec<_>) = self.in_flight.drain(..).partition(|c| c.cycle_completed <= cycle);
        self.in_flight = rest;
        let mut done = done;
        done.sort_by_key(|c| (c.cycle_completed, c.vault, c.bank));
        done
    }

    /// Earliest cycle after `cycle` at which the queue state can change.
    fn next_event(&self, cycle: u64) -> Option<u64> {
        let mut next: Option<u64> = None;
        let mut consider = |t: u64| {
            if t > cycle {
                next = Some(next.map_or(t, |n| n.min(t)));
            }
        };
        for v in &self.vaults {
            if v.queued == 0 {
                continue;
            }
            for (bank, q) in v.banks.iter().enumerate() {
                if q.is_empty() {
                    continue;
                }
                consider(v.bank_busy_until[bank]);
                for p in q {
                    consider(p.request.issue_cycle);
                }
            }
        }
        for c in &self.in_flight {
            consider(c.cycle_completed);
        }
        next
    }

    /// Services everything queued, starting at `start`, skipping idle
    /// stretches. Returns completions in completion order.
    pub fn run_to_idle(&mut self, start: u64) -> Vec<Completion> {
        let mut out = Vec::new();
        let mut cycle = start;
        loop {
            self.issue(cycle);
            let next = self.next_event(cycle);
            let span = next.map_or(0, |n| n - cycle);
            self.charge_stalls(span, cycle);
            out.extend(self.drain_completed(cycle));
            match next {
                Some(n) => cycle = n,
                None => break,
            }
        }
        out
    }

    /// Issues at `now`, then advances to the next queue event or `horizon`,
    /// whichever is first, charging stalls over the span. Returns the new
    /// cycle and the requests completed by it.
    pub fn advance(&mut self, now: u64, horizon: u64) -> (u64, Vec<Completion>) {
        self.issue(now);
        let next = self.next_event(now).map_or(horizon, |n| n.min(horizon)).max(now + 1);
        self.charge_stalls(next - now, now);
        (next, self.drain_completed(next))
    }

    /// Earliest cycle after `cycle` at which queued or in-flight work changes
    /// state, if any.
    pub fn next_event_after(&self, cycle: u64) -> Option<u64> {
        self.next_event(cycle)
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_empty() && self.vaults.iter().all(|v| v.queued == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> HmcConfig {
        HmcConfig::default()
    }

    fn pe_req(addr: u64, cycle: u64) -> MemoryRequest {
        MemoryRequest {
            requester: Requester::Pe { vault: 0, pe: 0 },
            address: addr,
            n_blocks: 1,
            indicator: 1,
            issue_cycle: cycle,
        }
    }

    #[test]
    fn defaults_match_cube_table() {
        let c = cfg();
        assert_eq!(c.capacity_bytes, 8 << 30);
        assert_eq!(c.bank_bytes() * 32 * 16, c.capacity_bytes);
        assert_eq!(c.access_cycles(), 8);
        assert_eq!(c.transfer_cycles(), 1);
        assert_eq!(c.with_frequency(625e6).access_cycles(), 16);
        for mode in [AddressMode::Default, AddressMode::Proposed] {
            for k in 0..=MAX_INDICATOR {
                let l = AddressLayout::new(mode, k, &c).unwrap();
                assert_eq!(l.field_widths().iter().map(|f| f.1).sum::<u32>(), 29);
            }
        }
    }

    #[test]
    fn default_mapping_examples() {
        let c = cfg();
        let loc = map_address_default(0x20, 1, &c).unwrap();
        assert_eq!((loc.vault, loc.bank, loc.subpage, loc.block), (1, 0, 0, 0));
        let zero = map_address_default(0, 1, &c).unwrap();
        assert_eq!((zero.vault, zero.bank, zero.subpage, zero.block), (0, 0, 0, 0));
        let a = map_address_default(0x1234_5600, 1, &c).unwrap();
        let b = map_address_default(0x1234_5610, 1, &c).unwrap();
        assert_eq!((a.vault, a.bank), (b.vault, b.bank));
        assert_ne!(a.block, b.block);
        assert!(map_address_default(1 << 33, 1, &c).is_err());
    }

    #[test]
    fn proposed_mapping_examples() {
        let c = cfg();
        let loc = map_address_pim(0x20, 0b001, &c).unwrap();
        assert_eq!((loc.vault, loc.bank, loc.subpage, loc.block), (0, 1, 0, 0));
        assert!(map_address_pim(0, 0b101, &c).is_err());
        let mut banks: Vec<usize> = (0..16u64)
            .map(|sp| map_address_pim(0x4000_0000 + sp * 32, 1, &c).unwrap().bank)
            .collect();
        banks.sort();
        assert_eq!(banks, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn default_mode_interleaves_subpages_across_vaults() {
        let c = cfg();
        for k in 0..=MAX_INDICATOR {
            let step = BLOCK_BYTES << k;
            for sp in 0..100u64 {
                let a = map_address_default(sp * step, k, &c).unwrap();
                let b = map_address_default((sp + 1) * step, k, &c).unwrap();
                assert_eq!(b.vault, (a.vault + 1) % 32);
            }
        }
    }

    #[test]
    fn round_trip_on_sampled_addresses() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [AddressMode::Default, AddressMode::Proposed] {
            for k in 0..=MAX_INDICATOR {
                let l = AddressLayout::new(mode, k, &c).unwrap();
                for _ in 0..2000 {
                    let addr = rng.random_range(0..1u64 << 33) & !0xf;
                    assert_eq!(l.unmap(l.map(addr).unwrap()), addr);
                }
            }
        }
    }

    #[test]
    fn enqueue_fifo_and_isolation() {
        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        arr.enqueue(pe_req(0x20, 0)).unwrap();
        assert_eq!(arr.vault(0).q(), 1);
        arr.enqueue(pe_req(0x40, 0)).unwrap();
        let q = arr.vault(0).queue();
        assert_eq!((q[0].address, q[1].address), (0x20, 0x40));
        arr.enqueue(pe_req(1 << 28, 0)).unwrap();
        assert_eq!(arr.vault(1).q(), 1);
        assert_eq!(arr.vault(0).q(), 2);
    }

    #[test]
    fn pe_requests_cannot_span_subpages() {
        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        let mut r = pe_req(0x10, 0);
        r.n_blocks = 2;
        assert!(matches!(arr.enqueue(r), Err(HmcError::RequestSpan { .. })));
        r.address = 0;
        assert!(arr.enqueue(r).is_ok());
    }

    #[test]
    fn same_bank_conflict_stalls() {
        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        arr.enqueue(pe_req(0x00, 0)).unwrap();
        arr.enqueue(pe_req(0x200, 0)).unwrap(); // next bank rotation, same bank 0
        let done = arr.run_to_idle(0);
        assert_eq!(done[0].bank, done[1].bank);
        assert!(done[1].cycle_completed >= done[0].cycle_completed + 8);
        assert!(arr.total_vrs() > 0);
    }

    #[test]
    fn distinct_banks_complete_together() {
        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        arr.enqueue(pe_req(0x00, 0)).unwrap();
        arr.enqueue(pe_req(0x20, 0)).unwrap();
        let done = arr.run_to_idle(0);
        assert_ne!(done[0].bank, done[1].bank);
        assert_eq!(done[0].cycle_completed, done[1].cycle_completed);
        assert_eq!(arr.total_vrs(), 0);
    }

    #[test]
    fn replay_is_deterministic_and_stepping_matches_skipping() {
        let trace = [
            (0x000u64, 0u64),
            (0x200, 0),
            (0x020, 1),
            (0x400, 2),
            (0x040, 2),
            (0x220, 5),
        ];
        let run = || {
            let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
            for (a, t) in trace {
                arr.enqueue(pe_req(a, t)).unwrap();
            }
            let done = arr.run_to_idle(0);
            (done, arr.total_vrs())
        };
        let (a, va) = run();
        let (b, vb) = run();
        assert_eq!(a, b);
        assert_eq!(va, vb);

        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        for (a, t) in trace {
            arr.enqueue(pe_req(a, t)).unwrap();
        }
        let mut stepped = Vec::new();
        for cycle in 0..200 {
            stepped.extend(arr.service_cycle(cycle));
        }
        let key = |c: &Completion| (c.request.address, c.cycle_issued, c.cycle_completed, c.stalled_cycles);
        let mut x: Vec<_> = a.iter().map(key).collect();
        let mut y: Vec<_> = stepped.iter().map(key).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
        assert_eq!(arr.total_vrs(), va);
    }

    #[test]
    fn host_priority_jumps_the_bank_queue() {
        let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
        arr.vault_mut(0).set_host_priority(true);
        arr.enqueue(pe_req(0x000, 0)).unwrap();
        arr.enqueue(pe_req(0x200, 0)).unwrap();
        let mut host = pe_req(0x400, 0);
        host.requester = Requester::Host;
        arr.enqueue(host).unwrap();
        let done = arr.run_to_idle(0);
        assert_eq!(done[0].request.requester, Requester::Host);
    }

    #[test]
    fn crossbar_examples() {
        let c = cfg();
        assert_eq!(crossbar_cost(0, &c), 0);
        let quantum = c.crossbar_bytes_per_cycle() as u64;
        assert_eq!(crossbar_cost(quantum, &c), 1);
        for bytes in [1u64, 100, 1638, 1639, 10_000, 123_457] {
            let one = crossbar_cost(bytes, &c);
            let two = crossbar_cost(2 * bytes, &c);
            assert!(two <= 2 * one && two + 1 >= 2 * one);
        }
    }

    proptest! {
        #[test]
        fn stalls_follow_triangular_law(r in 1usize..=16, spread in any::<bool>()) {
            let mut arr = VaultArray::new(cfg(), AddressMode::Proposed).unwrap();
            for n in 0..r {
                let bank_step = if spread { 0x20 } else { 0x200 };
                arr.enqueue(pe_req(n as u64 * bank_step, 0)).unwrap();
            }
            arr.run_to_idle(0);
            let expect = if spread { 0 } else { 8 * (r * (r - 1) / 2) as u64 };
            prop_assert_eq!(arr.total_vrs(), expect);
        }

        #[test]
        fn matched_indicator_keeps_request_in_one_bank(
            addr in 0u64..(1u64 << 33), ind in 0u8..=4, n in 1u32..=16,
        ) {
            let c = cfg();
            let l = AddressLayout::new(AddressMode::Proposed, ind, &c).unwrap();
            let blocks = 1u64 << ind;
            let base = addr & !((blocks * BLOCK_BYTES) - 1);
            let n = (n as u64).min(blocks);
            let first = l.map(base).unwrap();
            for b in 0..n {
                let loc = l.map(base + b * BLOCK_BYTES).unwrap();
                prop_assert_eq!((loc.vault, loc.bank), (first.vault, first.bank));
            }
        }

        #[test]
        fn proposed_mode_vault_is_region_stable(a in 0u64..(1u64 << 33), off in 0u64..(1u64 << 28), ind in 0u8..=4) {
            let c = cfg();
            let region = a & !((1u64 << 28) - 1);
            let x = map_address_pim(region, ind, &c).unwrap();
            let y = map_address_pim(region + off, ind, &c).unwrap();
            prop_assert_eq!(x.vault, y.vault);
        }
    }
}
