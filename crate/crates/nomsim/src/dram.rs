//! Bank arrays, vault controllers, and the physical address layout.
//!
//! Addresses pack `(vault, bank-in-vault, row, column)` high to low. The
//! bank-in-vault field is always 3 bits wide so the layout is independent of
//! mesh height; meshes with fewer than 4 layers leave holes that
//! [`AddressMap::decode`] rejects.
//!
//! Each vault has one controller with a FIFO queue of regular accesses and a
//! schedule of copy commands keyed by due cycle. Copy commands are placed by
//! the circuit scheduler so that no two ever land on the same bank in the
//! same cycle; the controller asserts this rather than arbitrating. A copy
//! command occupies its bank for `t_cas` cycles, during which no new regular
//! access to that bank is started, but an access already in flight finishes
//! undisturbed.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::config::SimConfig;
use crate::topology::{bank_in_vault, bank_of, coord_of, vault_of, BankCoord, BankId, Cycle, MeshDims, VaultId};
use crate::{Error, Result};

/// Widest possible bank-in-vault field: 2 banks per mesh slice, 4 layers.
const BANK_IN_VAULT_SLOTS: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timings {
    pub t_rcd: u32,
    pub t_cas: u32,
    pub t_rp: u32,
}

impl Timings {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Timings { t_rcd: cfg.t_rcd, t_cas: cfg.t_cas, t_rp: cfg.t_rp }
    }
}

/// A decoded physical address.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub bank: BankId,
    pub row: u64,
    /// Byte offset within the row.
    pub col: u32,
}

#[derive(Clone, Debug)]
pub struct AddressMap {
    dims: MeshDims,
    vaults_x: u8,
    row_bytes: u32,
    rows_per_bank: u64,
    rows_per_subarray: u32,
}

impl AddressMap {
    pub fn new(cfg: &SimConfig) -> Self {
        let dims = cfg.dims();
        AddressMap {
            dims,
            vaults_x: dims.x.div_ceil(2),
            row_bytes: cfg.row_bytes,
            rows_per_bank: cfg.rows_per_bank(),
            rows_per_subarray: cfg.rows_per_subarray,
        }
    }

    pub fn row_bytes(&self) -> u32 {
        self.row_bytes
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.rows_per_bank
    }

    /// Size of the address space including undecodable holes.
    pub fn capacity(&self) -> u64 {
        self.dims.vault_count() as u64 * BANK_IN_VAULT_SLOTS * self.rows_per_bank * self.row_bytes as u64
    }

    pub fn encode(&self, bank: BankId, row: u64, col: u32) -> u64 {
        debug_assert!(row < self.rows_per_bank && col < self.row_bytes);
        let c = coord_of(bank, &self.dims);
        let slot =
            vault_of(c, &self.dims) as u64 * BANK_IN_VAULT_SLOTS + bank_in_vault(c) as u64;
        (slot * self.rows_per_bank + row) * self.row_bytes as u64 + col as u32 as u64
    }

    pub fn decode(&self, addr: u64) -> Result<Location> {
        let col = (addr % self.row_bytes as u64) as u32;
        let rest = addr / self.row_bytes as u64;
        let row = rest % self.rows_per_bank;
        let slot = rest / self.rows_per_bank;
        let vault = (slot / BANK_IN_VAULT_SLOTS) as u16;
        let biv = (slot % BANK_IN_VAULT_SLOTS) as u8;
        let x = 2 * (vault % self.vaults_x as u16) as u8 + (biv & 1);
        let y = (vault / self.vaults_x as u16) as u8;
        let z = biv >> 1;
        if vault >= self.dims.vault_count() || x >= self.dims.x || z >= self.dims.z {
            return Err(Error::Invalid(format!("address {addr:#x} maps to no bank")));
        }
        let bank = bank_of(BankCoord::new(x, y, z), &self.dims);
        Ok(Location { bank, row, col })
    }

    pub fn subarray_of(&self, row: u64) -> u64 {
        row / self.rows_per_subarray as u64
    }

    pub fn same_subarray(&self, a: Location, b: Location) -> bool {
        a.bank == b.bank && self.subarray_of(a.row) == self.subarray_of(b.row)
    }
}

/// Sparse payload storage: a block reads back as its last written bytes,
/// or zeros if never written.
#[derive(Debug, Default)]
pub struct MemStore {
    block_bytes: u32,
    blocks: HashMap<(BankId, u64), Box<[u8]>>,
}

impl MemStore {
    pub fn new(block_bytes: u32) -> Self {
        MemStore { block_bytes, blocks: HashMap::new() }
    }

    /// `offset` is the byte offset within the bank; must be block aligned,
    /// as must `len`.
    pub fn read(&self, bank: BankId, offset: u64, len: u64) -> Vec<u8> {
        let bb = self.block_bytes as u64;
        debug_assert!(offset % bb == 0 && len % bb == 0);
        let mut out = Vec::with_capacity(len as usize);
        let mut at = offset;
        while at < offset + len {
            match self.blocks.get(&(bank, at)) {
                Some(b) => out.extend_from_slice(b),
                None => out.resize(out.len() + bb as usize, 0),
            }
            at += bb;
        }
        out
    }

    pub fn write(&mut self, bank: BankId, offset: u64, data: &[u8]) {
        let bb = self.block_bytes as u64;
        debug_assert!(offset % bb == 0 && data.len() as u64 % bb == 0);
        for (i, chunk) in data.chunks(self.block_bytes as usize).enumerate() {
            self.blocks.insert((bank, offset + i as u64 * bb), chunk.into());
        }
    }

    pub fn zero(&mut self, bank: BankId, offset: u64, len: u64) {
        let bb = self.block_bytes as u64;
        debug_assert!(offset % bb == 0 && len % bb == 0);
        let mut at = offset;
        while at < offset + len {
            self.blocks.remove(&(bank, at));
            at += bb;
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BankState {
    pub open_row: Option<u64>,
    /// A regular access is in the array until this cycle.
    pub busy_until: Cycle,
    /// A copy command holds the array against new regular accesses until
    /// this cycle.
    pub copy_block_until: Cycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One queued regular access. `blocks > 1` streams consecutive blocks after
/// a single row activation, paying `t_cas` per extra block.
#[derive(Clone, Copy, Debug)]
pub struct RegularReq {
    pub id: u64,
    pub bank: BankId,
    pub row: u64,
    pub kind: AccessKind,
    pub blocks: u32,
    pub enqueued: Cycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopyHalf {
    Read,
    Write,
    /// A whole in-bank copy (in-place or cross-subarray), claiming the bank
    /// for its full fixed latency.
    InBank,
}

/// A copy command scheduled at an exact cycle. Read/Write halves come from
/// the circuit scheduler, which guarantees at most one per bank per cycle;
/// InBank claims are paced by the copy engine and may legally coincide
/// with a circuit command on the same bank.
#[derive(Clone, Copy, Debug)]
pub struct CopyCmd {
    pub circuit: u64,
    pub bank: BankId,
    pub row: u64,
    pub half: CopyHalf,
    /// Claim duration in cycles; 0 means the default endpoint claim of
    /// `t_cas`.
    pub hold: u32,
}

/// A regular access that left the queue; data is on the bank pins at `done`.
#[derive(Clone, Copy, Debug)]
pub struct Served {
    pub id: u64,
    pub enqueued: Cycle,
    pub done: Cycle,
}

#[derive(Debug, Default)]
struct VaultController {
    queue: VecDeque<RegularReq>,
    copy_cmds: BTreeMap<Cycle, Vec<CopyCmd>>,
    /// Spans when the vault data TSV carries a regular access to an upper
    /// layer; consulted for the TSV coincidence statistic.
    tsv_spans: VecDeque<(Cycle, Cycle)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DramStats {
    pub served_regular: u64,
    /// Sum over cycles of total queued requests; divide by cycles for the
    /// average queue occupancy.
    pub queued_cycle_sum: u64,
    pub max_queue_depth: usize,
    /// Cycles a queue head waited only because of a copy command's bank claim.
    pub blocked_by_copy: u64,
    /// Cycles a queue head waited because the shared internal bus was held.
    pub blocked_by_bus: u64,
}

pub struct Dram {
    pub t: Timings,
    pub addr: AddressMap,
    pub store: MemStore,
    dims: MeshDims,
    banks: Vec<BankState>,
    vaults: Vec<VaultController>,
    pub stats: DramStats,
}

impl Dram {
    pub fn new(cfg: &SimConfig) -> Self {
        let dims = cfg.dims();
        Dram {
            t: Timings::from_config(cfg),
            addr: AddressMap::new(cfg),
            store: MemStore::new(cfg.block_bytes),
            dims,
            banks: vec![BankState::default(); dims.bank_count() as usize],
            vaults: (0..dims.vault_count()).map(|_| VaultController::default()).collect(),
            stats: DramStats::default(),
        }
    }

    pub fn bank(&self, bank: BankId) -> &BankState {
        &self.banks[bank as usize]
    }

    pub fn bank_mut(&mut self, bank: BankId) -> &mut BankState {
        &mut self.banks[bank as usize]
    }

    pub fn row_latency(&self, bank: BankId, row: u64) -> u32 {
        match self.banks[bank as usize].open_row {
            Some(r) if r == row => self.t.t_cas,
            None => self.t.t_rcd + self.t.t_cas,
            Some(_) => self.t.t_rp + self.t.t_rcd + self.t.t_cas,
        }
    }

    /// Run one access immediately, bypassing the queue. Used by copy engines
    /// that already own the datapath. Returns the data-ready cycle.
    pub fn access(&mut self, bank: BankId, row: u64, now: Cycle) -> Cycle {
        let lat = self.row_latency(bank, row) as Cycle;
        let b = &mut self.banks[bank as usize];
        b.open_row = Some(row);
        b.busy_until = now + lat;
        now + lat
    }

    /// First cycle at which the bank is free of accesses and copy claims.
    pub fn bank_free_at(&self, bank: BankId) -> Cycle {
        let b = &self.banks[bank as usize];
        b.busy_until.max(b.copy_block_until)
    }

    /// Claim a bank for a copy engine that owns the datapath directly,
    /// leaving the named row open.
    pub fn occupy_for_copy(&mut self, bank: BankId, row: u64, until: Cycle) {
        let b = &mut self.banks[bank as usize];
        b.open_row = Some(row);
        b.busy_until = b.busy_until.max(until);
    }

    fn vault_idx(&self, bank: BankId) -> usize {
        vault_of(coord_of(bank, &self.dims), &self.dims) as usize
    }

    pub fn enqueue(&mut self, req: RegularReq) {
        let v = self.vault_idx(req.bank);
        self.vaults[v].queue.push_back(req);
        let depth: usize = self.vaults.iter().map(|vc| vc.queue.len()).sum();
        self.stats.max_queue_depth = self.stats.max_queue_depth.max(depth);
    }

    pub fn schedule_copy(&mut self, due: Cycle, cmd: CopyCmd) {
        let v = self.vault_idx(cmd.bank);
        self.vaults[v].copy_cmds.entry(due).or_default().push(cmd);
    }

    /// True while any queue or copy schedule still holds work.
    pub fn pending(&self) -> bool {
        self.vaults.iter().any(|v| !v.queue.is_empty() || !v.copy_cmds.is_empty())
    }

    /// True if some copy command is already due on this bank at this cycle.
    pub fn has_copy_due(&self, bank: BankId, cycle: Cycle) -> bool {
        let v = self.vault_idx(bank);
        self.vaults[v]
            .copy_cmds
            .get(&cycle)
            .is_some_and(|cmds| cmds.iter().any(|c| c.bank == bank))
    }

    /// Earliest future cycle at which this tick could do something new,
    /// given the per-vault bus-stall mask. `None` when fully idle.
    pub fn next_event_after(&self, now: Cycle, stall: &[bool]) -> Option<Cycle> {
        let mut next: Option<Cycle> = None;
        let mut consider = |c: Cycle| {
            let c = c.max(now + 1);
            next = Some(next.map_or(c, |n: Cycle| n.min(c)));
        };
        for (v, vc) in self.vaults.iter().enumerate() {
            if let Some((&due, _)) = vc.copy_cmds.iter().next() {
                consider(due);
            }
            if stall[v] {
                continue;
            }
            if let Some(head) = vc.queue.front() {
                let b = &self.banks[head.bank as usize];
                consider(b.busy_until.max(b.copy_block_until));
            }
        }
        next
    }

    /// Advance all vault controllers by one cycle. `stall[v]` freezes vault
    /// `v`'s regular queue (shared internal bus held). Returns accesses whose
    /// service started this cycle.
    pub fn tick(&mut self, now: Cycle, stall: &[bool]) -> Vec<Served> {
        let mut served = Vec::new();
        let mut circuit_claimed: Vec<BankId> = Vec::new();
        for v in 0..self.vaults.len() {
            if let Some(cmds) = self.vaults[v].copy_cmds.remove(&now) {
                for cmd in cmds {
                    if cmd.half != CopyHalf::InBank {
                        assert!(
                            !circuit_claimed.contains(&cmd.bank),
                            "two circuit copy commands due on bank {} at cycle {now}",
                            cmd.bank
                        );
                        circuit_claimed.push(cmd.bank);
                    }
                    let hold =
                        if cmd.hold == 0 { self.t.t_cas as Cycle } else { cmd.hold as Cycle };
                    let b = &mut self.banks[cmd.bank as usize];
                    b.open_row = Some(cmd.row);
                    b.copy_block_until = b.copy_block_until.max(now + hold);
                }
            }

            self.stats.queued_cycle_sum += self.vaults[v].queue.len() as u64;
            let Some(head) = self.vaults[v].queue.front().copied() else { continue };
            if stall[v] {
                self.stats.blocked_by_bus += 1;
                continue;
            }
            let b = self.banks[head.bank as usize];
            if b.busy_until > now {
                continue;
            }
            if b.copy_block_until > now {
                self.stats.blocked_by_copy += 1;
                continue;
            }
            self.vaults[v].queue.pop_front();
            let lat =
                self.row_latency(head.bank, head.row) + (head.blocks - 1) * self.t.t_cas;
            let done = now + lat as Cycle;
            let bank = &mut self.banks[head.bank as usize];
            bank.open_row = Some(head.row);
            bank.busy_until = done;
            if coord_of(head.bank, &self.dims).z > 0 {
                self.vaults[v].tsv_spans.push_back((now, done));
            }
            self.stats.served_regular += 1;
            served.push(Served { id: head.id, enqueued: head.enqueued, done });
        }
        served
    }

    /// True if a regular access is crossing vault `v`'s data TSV at `cycle`.
    pub fn tsv_active(&mut self, v: VaultId, cycle: Cycle) -> bool {
        let spans = &mut self.vaults[v as usize].tsv_spans;
        while spans.front().is_some_and(|&(_, end)| end <= cycle) {
            spans.pop_front();
        }
        spans.iter().any(|&(from, to)| from <= cycle && cycle < to)
    }
}
