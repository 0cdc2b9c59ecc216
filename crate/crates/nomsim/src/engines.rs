//! Copy engines: the request-level layer above the vault controllers.
//!
//! Every trace record is admitted here. Reads, writes and init fills go
//! straight to the regular vault queues. Copies are dispatched to one of
//! five mechanisms depending on the configured policy and the geometry of
//! the pair:
//!
//! * `Conventional`: the processor walks the copy block by block through
//!   the regular queues, with two off-chip transfers per block, strictly
//!   one copy at a time.
//! * `RowCloneIntraSubarray`: in-bank, fixed latency per row.
//! * `Lisa`: in-bank across subarrays, fixed latency per row.
//! * `RowCloneInterBank`: block by block over the internal bus, which is
//!   held for the whole copy and stalls every other request in its scope.
//! * `NomCircuit`: handed to the circuit scheduler and carried by the
//!   fabric.
//!
//! Payloads use issue-time semantics: the source bytes are snapshotted
//! when the mechanism starts and land in the destination store at the
//! completion cycle.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use crate::ccu::{Ccu, CopyRequest};
use crate::config::{BusScope, CopyPolicy, SimConfig};
use crate::dram::{AccessKind, CopyCmd, CopyHalf, Dram, Location, RegularReq, Served};
use crate::topology::{coord_of, vault_of, Cycle, MeshDims, VaultId};
use crate::{Error, Result};

/// How a single copy is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Conventional,
    RowCloneIntraSubarray,
    Lisa,
    RowCloneInterBank,
    NomCircuit,
}

impl Mechanism {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        match self {
            Mechanism::Conventional => 0,
            Mechanism::RowCloneIntraSubarray => 1,
            Mechanism::Lisa => 2,
            Mechanism::RowCloneInterBank => 3,
            Mechanism::NomCircuit => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Conventional => "conventional",
            Mechanism::RowCloneIntraSubarray => "rowclone-intra",
            Mechanism::Lisa => "lisa",
            Mechanism::RowCloneInterBank => "rowclone-inter",
            Mechanism::NomCircuit => "nom",
        }
    }
}

/// One operation from the trace, with addresses already decoded.
#[derive(Clone, Debug)]
pub enum Op {
    Read { loc: Location, bytes: u64 },
    Write { loc: Location, bytes: u64 },
    Init { loc: Location, bytes: u64 },
    Copy { src: Location, dst: Location, bytes: u64 },
}

#[derive(Clone, Debug)]
pub struct Request {
    pub id: u64,
    pub arrival: Cycle,
    pub op: Op,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpClass {
    Read,
    Write,
    Init,
    Copy,
}

impl OpClass {
    pub fn name(self) -> &'static str {
        match self {
            OpClass::Read => "read",
            OpClass::Write => "write",
            OpClass::Init => "init",
            OpClass::Copy => "copy",
        }
    }
}

/// One finished request, kept for the final report.
#[derive(Clone, Copy, Debug)]
pub struct Completion {
    pub id: u64,
    pub class: OpClass,
    pub mechanism: Option<Mechanism>,
    pub arrival: Cycle,
    pub done: Cycle,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EngineStats {
    pub copies_by_mechanism: [u64; Mechanism::COUNT],
    pub copy_bytes: u64,
    pub offchip_transactions: u64,
    pub bus_held_cycles: u64,
}

/// A copy in flight.
struct CopyJob {
    id: u64,
    arrival: Cycle,
    src: Location,
    dst: Location,
    bytes: u64,
    mech: Mechanism,
    snapshot: Option<Vec<u8>>,
}

/// Why the engine enqueued a regular request.
enum Purpose {
    Workload { id: u64, class: OpClass, arrival: Cycle },
    InitFill { id: u64, arrival: Cycle, loc: Location, bytes: u64 },
    ConvRead { job: u64 },
    ConvWrite { job: u64 },
}

/// Scheduled engine work, ordered by cycle then by insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    StartCopy(u64),
    /// Read block has arrived at the processor: issue the write back.
    ConvWriteIssue(u64),
    /// Destination write acknowledged: move to the next block.
    ConvNextBlock(u64),
    Finish(u64),
}

struct ConvRun {
    job: u64,
    block: u32,
    blocks: u32,
}

struct BusHold {
    until: Cycle,
    src_vault: VaultId,
    dst_vault: VaultId,
}

pub struct Engines {
    policy: CopyPolicy,
    dims: MeshDims,
    block_bytes: u64,
    row_bytes: u64,
    t_cas: u32,
    coherence: u32,
    /// One off-chip leg: fixed latency plus the serialized block transfer.
    offchip_leg: Cycle,
    /// Internal bus occupancy for one block.
    bus_block_cycles: Cycle,
    bus_scope: BusScope,
    rcis_cycles: u64,
    lisa_cycles: u64,

    jobs: HashMap<u64, CopyJob>,
    events: BinaryHeap<Reverse<(Cycle, u64, Ev)>>,
    event_seq: u64,
    pending_regular: HashMap<u64, Purpose>,
    next_internal_id: u64,

    conv_active: Option<ConvRun>,
    conv_wait: VecDeque<u64>,
    bus_holds: Vec<BusHold>,
    /// Engine-side claims keeping two in-bank copies off one bank.
    inbank_hold: HashMap<u16, Cycle>,
    /// Circuit id to job id for copies in the fabric.
    nom_jobs: HashMap<u64, u64>,

    completions: Vec<Completion>,
    pub stats: EngineStats,
}

impl Engines {
    pub fn new(cfg: &SimConfig) -> Self {
        let block = cfg.block_bytes as u64;
        Engines {
            policy: cfg.policy,
            dims: cfg.dims(),
            block_bytes: block,
            row_bytes: cfg.row_bytes as u64,
            t_cas: cfg.t_cas,
            coherence: cfg.coherence_penalty_cycles,
            offchip_leg: cfg.offchip_latency_cycles as Cycle
                + block.div_ceil(cfg.offchip_bytes_per_cycle as u64),
            bus_block_cycles: block.div_ceil(cfg.internal_bus_bytes_per_cycle as u64),
            bus_scope: cfg.rowclone_bus_scope,
            rcis_cycles: cfg.rowclone_intra_cycles_per_row as u64,
            lisa_cycles: cfg.lisa_cycles_per_row as u64,
            jobs: HashMap::new(),
            events: BinaryHeap::new(),
            event_seq: 0,
            pending_regular: HashMap::new(),
            next_internal_id: 1 << 62,
            conv_active: None,
            conv_wait: VecDeque::new(),
            bus_holds: Vec::new(),
            inbank_hold: HashMap::new(),
            nom_jobs: HashMap::new(),
            completions: Vec::new(),
            stats: EngineStats::default(),
        }
    }

    /// Pick the mechanism for a copy under the configured policy.
    pub fn mechanism_for(&self, src: Location, dst: Location, dram: &Dram) -> Mechanism {
        match self.policy {
            CopyPolicy::Conventional => Mechanism::Conventional,
            CopyPolicy::RowClone | CopyPolicy::Nom => {
                if src.bank == dst.bank {
                    if dram.addr.same_subarray(src, dst) {
                        Mechanism::RowCloneIntraSubarray
                    } else {
                        Mechanism::Lisa
                    }
                } else if self.policy == CopyPolicy::RowClone {
                    Mechanism::RowCloneInterBank
                } else {
                    Mechanism::NomCircuit
                }
            }
        }
    }

    fn push_event(&mut self, cycle: Cycle, ev: Ev) {
        self.event_seq += 1;
        self.events.push(Reverse((cycle, self.event_seq, ev)));
    }

    fn internal_id(&mut self) -> u64 {
        self.next_internal_id += 1;
        self.next_internal_id
    }

    /// Admit one trace record at its arrival cycle.
    pub fn admit(&mut self, req: Request, dram: &mut Dram) -> Result<()> {
        let now = req.arrival;
        match req.op {
            Op::Read { loc, bytes } => {
                let blocks = self.span_blocks(loc, bytes)?;
                self.pending_regular.insert(
                    req.id,
                    Purpose::Workload { id: req.id, class: OpClass::Read, arrival: now },
                );
                dram.enqueue(RegularReq {
                    id: req.id,
                    bank: loc.bank,
                    row: loc.row,
                    kind: AccessKind::Read,
                    blocks,
                    enqueued: now,
                });
            }
            Op::Write { loc, bytes } => {
                let blocks = self.span_blocks(loc, bytes)?;
                self.pending_regular.insert(
                    req.id,
                    Purpose::Workload { id: req.id, class: OpClass::Write, arrival: now },
                );
                dram.enqueue(RegularReq {
                    id: req.id,
                    bank: loc.bank,
                    row: loc.row,
                    kind: AccessKind::Write,
                    blocks,
                    enqueued: now,
                });
            }
            Op::Init { loc, bytes } => {
                let blocks = self.span_blocks(loc, bytes)?;
                self.pending_regular.insert(
                    req.id,
                    Purpose::InitFill { id: req.id, arrival: now, loc, bytes },
                );
                dram.enqueue(RegularReq {
                    id: req.id,
                    bank: loc.bank,
                    row: loc.row,
                    kind: AccessKind::Write,
                    blocks,
                    enqueued: now,
                });
            }
            Op::Copy { src, dst, bytes } => {
                self.span_blocks(src, bytes)?;
                self.span_blocks(dst, bytes)?;
                let mech = self.mechanism_for(src, dst, dram);
                self.jobs.insert(
                    req.id,
                    CopyJob { id: req.id, arrival: now, src, dst, bytes, mech, snapshot: None },
                );
                self.push_event(now + self.coherence as Cycle, Ev::StartCopy(req.id));
            }
        }
        Ok(())
    }

    fn span_blocks(&self, loc: Location, bytes: u64) -> Result<u32> {
        if bytes == 0 || bytes % self.block_bytes != 0 {
            return Err(Error::Invalid(format!(
                "payload of {bytes} bytes is not a positive multiple of {}-byte blocks",
                self.block_bytes
            )));
        }
        if loc.col as u64 % self.block_bytes != 0 || loc.col as u64 + bytes > self.row_bytes {
            return Err(Error::Invalid(format!(
                "span of {bytes} bytes at column {} leaves the row",
                loc.col
            )));
        }
        Ok((bytes / self.block_bytes) as u32)
    }

    fn snapshot(job: &mut CopyJob, dram: &Dram) {
        let off = job.src.row * dram.addr.row_bytes() as u64 + job.src.col as u64;
        job.snapshot = Some(dram.store.read(job.src.bank, off, job.bytes));
    }

    fn finish_copy(&mut self, job_id: u64, done: Cycle, dram: &mut Dram) {
        let job = self.jobs.remove(&job_id).expect("finishing unknown copy");
        let bytes = job.snapshot.expect("copy finished without a snapshot");
        let off = job.dst.row * dram.addr.row_bytes() as u64 + job.dst.col as u64;
        dram.store.write(job.dst.bank, off, &bytes);
        self.stats.copies_by_mechanism[job.mech.index()] += 1;
        self.stats.copy_bytes += job.bytes;
        self.completions.push(Completion {
            id: job.id,
            class: OpClass::Copy,
            mechanism: Some(job.mech),
            arrival: job.arrival,
            done,
        });
    }

    /// Vaults frozen by a held internal bus at this cycle.
    pub fn stall_mask(&mut self, now: Cycle) -> Vec<bool> {
        self.bus_holds.retain(|h| h.until > now);
        let mut mask = vec![false; self.dims.vault_count() as usize];
        for h in &self.bus_holds {
            match self.bus_scope {
                BusScope::Global => mask.iter_mut().for_each(|m| *m = true),
                BusScope::PerVault => {
                    mask[h.src_vault as usize] = true;
                    mask[h.dst_vault as usize] = true;
                }
            }
        }
        mask
    }

    fn bus_free_at(&self, src_vault: VaultId, dst_vault: VaultId) -> Cycle {
        self.bus_holds
            .iter()
            .filter(|h| match self.bus_scope {
                BusScope::Global => true,
                BusScope::PerVault => {
                    h.src_vault == src_vault
                        || h.dst_vault == dst_vault
                        || h.src_vault == dst_vault
                        || h.dst_vault == src_vault
                }
            })
            .map(|h| h.until)
            .max()
            .unwrap_or(0)
    }

    fn vault_of_bank(&self, bank: u16) -> VaultId {
        vault_of(coord_of(bank, &self.dims), &self.dims)
    }

    /// React to regular requests leaving the vault queues.
    pub fn on_served(&mut self, served: &[Served], dram: &mut Dram) {
        for s in served {
            let Some(p) = self.pending_regular.remove(&s.id) else { continue };
            match p {
                Purpose::Workload { id, class, arrival } => {
                    self.completions.push(Completion {
                        id,
                        class,
                        mechanism: None,
                        arrival,
                        done: s.done,
                    });
                }
                Purpose::InitFill { id, arrival, loc, bytes } => {
                    let off = loc.row * dram.addr.row_bytes() as u64 + loc.col as u64;
                    dram.store.zero(loc.bank, off, bytes);
                    self.completions.push(Completion {
                        id,
                        class: OpClass::Init,
                        mechanism: None,
                        arrival,
                        done: s.done,
                    });
                }
                Purpose::ConvRead { job } => {
                    self.push_event(s.done + self.offchip_leg, Ev::ConvWriteIssue(job));
                }
                Purpose::ConvWrite { job } => {
                    self.push_event(s.done, Ev::ConvNextBlock(job));
                }
            }
        }
    }

    /// A circuit finished: the endpoint write tail is the last beat's
    /// column access at the destination.
    pub fn on_circuit_done(&mut self, circuit: u64, done_cycle: Cycle) {
        let job = self.nom_jobs.remove(&circuit).expect("finish for unknown circuit");
        self.push_event(done_cycle + self.t_cas as Cycle, Ev::Finish(job));
    }

    /// Record which circuit carries which copy.
    pub fn on_launch(&mut self, circuit: u64, request_id: u64) {
        self.nom_jobs.insert(circuit, request_id);
    }

    /// Run engine work scheduled for this cycle.
    pub fn tick(&mut self, now: Cycle, dram: &mut Dram, ccu: &mut Ccu) -> Result<()> {
        while let Some(&Reverse((cycle, _, ev))) = self.events.peek() {
            if cycle > now {
                break;
            }
            self.events.pop();
            match ev {
                Ev::StartCopy(id) => self.start_copy(id, now, dram, ccu)?,
                Ev::ConvWriteIssue(id) => self.conv_write_issue(id, now, dram),
                Ev::ConvNextBlock(id) => self.conv_next_block(id, now, dram),
                Ev::Finish(id) => self.finish_copy(id, now, dram),
            }
        }
        Ok(())
    }

    fn start_copy(&mut self, id: u64, now: Cycle, dram: &mut Dram, ccu: &mut Ccu) -> Result<()> {
        let mech = self.jobs[&id].mech;
        match mech {
            Mechanism::Conventional => {
                if self.conv_active.is_some() {
                    self.conv_wait.push_back(id);
                } else {
                    self.conv_start(id, now, dram);
                }
            }
            Mechanism::RowCloneIntraSubarray | Mechanism::Lisa => {
                self.try_inbank(id, now, dram);
            }
            Mechanism::RowCloneInterBank => {
                self.try_interbank_bus(id, now, dram);
            }
            Mechanism::NomCircuit => {
                let job = self.jobs.get_mut(&id).expect("starting unknown copy");
                Self::snapshot(job, dram);
                ccu.submit(
                    CopyRequest { id, src: job.src, dst: job.dst, bytes: job.bytes },
                    now,
                )?;
            }
        }
        Ok(())
    }

    /// Begin the processor-driven walk: one block read through the
    /// regular queue, two off-chip legs, one block write, repeat.
    fn conv_start(&mut self, id: u64, now: Cycle, dram: &mut Dram) {
        let job = self.jobs.get_mut(&id).expect("starting unknown copy");
        Self::snapshot(job, dram);
        let blocks = (job.bytes / self.block_bytes) as u32;
        let (bank, row) = (job.src.bank, job.src.row);
        self.conv_active = Some(ConvRun { job: id, block: 0, blocks });
        let rid = self.internal_id();
        self.pending_regular.insert(rid, Purpose::ConvRead { job: id });
        dram.enqueue(RegularReq {
            id: rid,
            bank,
            row,
            kind: AccessKind::Read,
            blocks: 1,
            enqueued: now,
        });
    }

    fn conv_write_issue(&mut self, id: u64, now: Cycle, dram: &mut Dram) {
        let run = self.conv_active.as_ref().expect("write issue without an active copy");
        assert_eq!(run.job, id);
        let job = &self.jobs[&id];
        // One transaction returned the block, one sends it back out.
        self.stats.offchip_transactions += 2;
        let (bank, row) = (job.dst.bank, job.dst.row);
        let rid = self.internal_id();
        self.pending_regular.insert(rid, Purpose::ConvWrite { job: id });
        dram.enqueue(RegularReq {
            id: rid,
            bank,
            row,
            kind: AccessKind::Write,
            blocks: 1,
            enqueued: now,
        });
    }

    fn conv_next_block(&mut self, id: u64, now: Cycle, dram: &mut Dram) {
        let run = self.conv_active.as_mut().expect("block step without an active copy");
        assert_eq!(run.job, id);
        run.block += 1;
        if run.block < run.blocks {
            let job = &self.jobs[&id];
            let (bank, row) = (job.src.bank, job.src.row);
            let rid = self.internal_id();
            self.pending_regular.insert(rid, Purpose::ConvRead { job: id });
            dram.enqueue(RegularReq {
                id: rid,
                bank,
                row,
                kind: AccessKind::Read,
                blocks: 1,
                enqueued: now,
            });
        } else {
            self.conv_active = None;
            self.finish_copy(id, now, dram);
            if let Some(next) = self.conv_wait.pop_front() {
                self.conv_start(next, now, dram);
            }
        }
    }

    /// In-bank copies claim the bank through the copy command path for
    /// their whole fixed latency.
    fn try_inbank(&mut self, id: u64, now: Cycle, dram: &mut Dram) {
        let job = &self.jobs[&id];
        let bank = job.src.bank;
        let free = dram
            .bank_free_at(bank)
            .max(self.inbank_hold.get(&bank).copied().unwrap_or(0));
        // The claim lands next cycle, before that cycle's regular serve.
        if now < free || dram.has_copy_due(bank, now + 1) {
            let retry = free.max(now + 1);
            self.push_event(retry, Ev::StartCopy(id));
            return;
        }
        let rows = job.bytes.div_ceil(self.row_bytes).max(1);
        let per_row = match job.mech {
            Mechanism::RowCloneIntraSubarray => self.rcis_cycles,
            Mechanism::Lisa => self.lisa_cycles,
            other => unreachable!("in-bank start for {other:?}"),
        };
        let hold = rows * per_row;
        let (dst_row, start) = (job.dst.row, now + 1);
        let job = self.jobs.get_mut(&id).expect("starting unknown copy");
        Self::snapshot(job, dram);
        dram.schedule_copy(
            start,
            CopyCmd { circuit: id, bank, row: dst_row, half: CopyHalf::InBank, hold: hold as u32 },
        );
        self.inbank_hold.insert(bank, start + hold);
        self.push_event(start + hold, Ev::Finish(id));
    }

    /// Inter-bank copy over the shared internal bus. The bus is held for
    /// the whole copy; its duration is the serialized block walk with the
    /// first accesses paying the row state on each side.
    fn try_interbank_bus(&mut self, id: u64, now: Cycle, dram: &mut Dram) {
        let job = &self.jobs[&id];
        let (sv, dv) = (self.vault_of_bank(job.src.bank), self.vault_of_bank(job.dst.bank));
        let free = self
            .bus_free_at(sv, dv)
            .max(dram.bank_free_at(job.src.bank))
            .max(dram.bank_free_at(job.dst.bank));
        if now < free {
            self.push_event(free, Ev::StartCopy(id));
            return;
        }
        let blocks = job.bytes / self.block_bytes;
        let first_read = dram.row_latency(job.src.bank, job.src.row) as Cycle;
        let first_write = dram.row_latency(job.dst.bank, job.dst.row) as Cycle;
        let later = (blocks - 1) * 2 * self.t_cas as Cycle;
        let duration = first_read + first_write + later + blocks * self.bus_block_cycles;
        let until = now + duration;
        let (src, dst) = (job.src, job.dst);
        let job = self.jobs.get_mut(&id).expect("starting unknown copy");
        Self::snapshot(job, dram);
        dram.occupy_for_copy(src.bank, src.row, until);
        dram.occupy_for_copy(dst.bank, dst.row, until);
        self.bus_holds.push(BusHold { until, src_vault: sv, dst_vault: dv });
        self.stats.bus_held_cycles += duration;
        self.push_event(until, Ev::Finish(id));
    }

    /// Earliest cycle at which scheduled engine work exists.
    pub fn next_event(&self) -> Option<Cycle> {
        self.events.peek().map(|Reverse((c, _, _))| *c)
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn completed(&self) -> u64 {
        self.completions.len() as u64
    }

    /// True when nothing is in flight anywhere in the engine layer.
    pub fn idle(&self) -> bool {
        self.jobs.is_empty() && self.pending_regular.is_empty() && self.events.is_empty()
    }
}
