//! The centralized circuit control unit: FIFO service of inter-bank copy
//! requests and the setup pipeline that turns each into a live circuit.
//!
//! Setup runs in three stages, serialized across requests. At pickup cycle
//! `c` the unit searches the allocator for a path and start slots whose
//! first departure can be no earlier than cycle `c + 3` (the minimum
//! search / program / issue latency), reserving them on success. Slot
//! tables are then programmed over the per-vault sideband links, one table
//! entry per vault per cycle, so a path that puts `r` entries in some vault
//! stretches programming to `r` cycles; when that pushes past the reserved
//! start, the start moves by whole windows, which keeps every granted slot
//! phase intact. Finally the unit issues the source read command, due
//! exactly at the first beat's departure cycle, and hands the flight plan
//! to the fabric. A failed search retries at the queue head every cycle,
//! so a hard-to-route request blocks the ones behind it.

use std::collections::{BTreeMap, VecDeque};

use crate::config::SimConfig;
use crate::dram::{CopyCmd, CopyHalf, Dram, Location};
use crate::fabric::{ClockMap, Fabric, FlightPlan, Tick};
use crate::tdm::{Allocator, CircuitPlan, Reservation, SlotMask};
use crate::topology::{
    coord_of, vault_of, BankCoord, Cycle, FabricMode, MeshDims, PathDag, Port, VaultId,
};
use crate::{Error, Result};

/// An inter-bank copy to be carried by a circuit.
#[derive(Clone, Copy, Debug)]
pub struct CopyRequest {
    pub id: u64,
    pub src: Location,
    pub dst: Location,
    pub bytes: u64,
}

/// Pack one slot-table entry for a vault's sideband link: bank-in-vault
/// (3 bits), slot (4 bits), input port (3 bits), output port (3 bits),
/// high to low.
pub fn encode_word(biv: u8, slot: u8, input: Port, output: Port) -> u16 {
    assert!(biv < 8 && slot < 16);
    ((biv as u16) << 10)
        | ((slot as u16) << 6)
        | ((input.index() as u16) << 3)
        | output.index() as u16
}

pub fn decode_word(w: u16) -> Result<(u8, u8, Port, Port)> {
    if w >= 1 << 13 {
        return Err(Error::Invalid(format!("sideband word {w:#x} out of range")));
    }
    let input = Port::from_index((w as usize >> 3) & 0x7)
        .ok_or_else(|| Error::Invalid(format!("sideband word {w:#x}: bad input port")))?;
    let output = Port::from_index(w as usize & 0x7)
        .ok_or_else(|| Error::Invalid(format!("sideband word {w:#x}: bad output port")))?;
    Ok(((w >> 10) as u8 & 0x7, (w >> 6) as u8 & 0xf, input, output))
}

/// The router a sideband word addresses, given the vault it was sent to.
fn router_of(dims: &MeshDims, vault: VaultId, biv: u8) -> BankCoord {
    let vaults_x = dims.x.div_ceil(2) as u16;
    BankCoord::new(
        2 * (vault % vaults_x) as u8 + (biv & 1),
        (vault / vaults_x) as u8,
        biv >> 1,
    )
}

/// Emitted when a circuit goes live.
#[derive(Clone, Copy, Debug)]
pub struct LaunchRecord {
    pub circuit: u64,
    pub request: u64,
    /// Due cycle of the source read command = first beat departure.
    pub read_cycle: Cycle,
    pub read_tick: Tick,
    pub hops: u8,
    pub seqs: u8,
    /// Cycle the request reached the head of the queue.
    pub pickup: Cycle,
}

#[derive(Debug)]
struct Live {
    req: CopyRequest,
    reservation: Reservation,
    /// Programmed table entries, kept for exact teardown.
    entries: Vec<(BankCoord, u8, Port, Port)>,
}

enum Stage {
    Idle,
    /// Delivering sideband words, one per vault per cycle. `None` words
    /// carry a light-mode bus-receiver tag: they cost their cycle on the
    /// vault's sideband link but write no slot-table row.
    Programming {
        words: BTreeMap<VaultId, VecDeque<Option<u16>>>,
        applied: Vec<(BankCoord, u8, Port, Port)>,
        launch: Box<PendingLaunch>,
    },
    /// All tables written; read issues and the circuit launches next tick.
    Ready { launch: Box<PendingLaunch> },
}

struct PendingLaunch {
    circuit: u64,
    req: CopyRequest,
    reservation: Reservation,
    plan: FlightPlan,
    read_due: Cycle,
    read_tick: Tick,
    pickup: Cycle,
    applied: Vec<(BankCoord, u8, Port, Port)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CcuStats {
    pub setups: u64,
    /// Search attempts that found no free circuit and retried.
    pub failed_searches: u64,
    pub programming_cycles: u64,
    /// Sum over launched circuits of launch cycle minus pickup cycle.
    pub setup_latency_sum: u64,
    pub max_live_circuits: usize,
}

pub struct Ccu {
    dims: MeshDims,
    n: u8,
    mode: FabricMode,
    max_seqs: u8,
    link_bits: u64,
    block_bytes: u64,
    row_bytes: u64,
    queue: VecDeque<(CopyRequest, Cycle)>,
    stage: Stage,
    pickup: Option<Cycle>,
    next_circuit: u64,
    live: BTreeMap<u64, Live>,
    pub stats: CcuStats,
}

impl Ccu {
    pub fn new(cfg: &SimConfig) -> Self {
        Ccu {
            dims: cfg.dims(),
            n: cfg.slots_per_window,
            mode: cfg.fabric_mode,
            max_seqs: cfg.slots_per_window_max,
            link_bits: cfg.link_width_bits as u64,
            block_bytes: cfg.block_bytes as u64,
            row_bytes: cfg.row_bytes as u64,
            queue: VecDeque::new(),
            stage: Stage::Idle,
            pickup: None,
            next_circuit: 1,
            live: BTreeMap::new(),
            stats: CcuStats::default(),
        }
    }

    pub fn submit(&mut self, req: CopyRequest, now: Cycle) -> Result<()> {
        if req.src.bank == req.dst.bank {
            return Err(Error::Invalid(format!(
                "request {}: circuit copy needs distinct banks",
                req.id
            )));
        }
        if req.bytes == 0 || req.bytes % self.block_bytes != 0 {
            return Err(Error::Invalid(format!(
                "request {}: size must be a positive multiple of {} bytes",
                req.id, self.block_bytes
            )));
        }
        for loc in [req.src, req.dst] {
            if loc.col as u64 % self.block_bytes != 0 || loc.col as u64 + req.bytes > self.row_bytes
            {
                return Err(Error::Invalid(format!(
                    "request {}: payload must be block aligned within one row",
                    req.id
                )));
            }
        }
        self.queue.push_back((req, now));
        Ok(())
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn live_circuits(&self) -> usize {
        self.live.len()
    }

    /// True when the unit would do something on a tick.
    pub fn busy(&self) -> bool {
        !self.queue.is_empty() || !matches!(self.stage, Stage::Idle)
    }

    /// Advance the setup pipeline by one logic cycle.
    pub fn tick(
        &mut self,
        now: Cycle,
        clock: &ClockMap,
        alloc: &mut Allocator,
        fabric: &mut Fabric,
        dram: &mut Dram,
    ) -> Option<LaunchRecord> {
        match std::mem::replace(&mut self.stage, Stage::Idle) {
            Stage::Idle => {
                self.try_search(now, clock, alloc);
                None
            }
            Stage::Programming { mut words, mut applied, launch } => {
                for (&vault, queue) in words.iter_mut() {
                    if let Some(Some(w)) = queue.pop_front() {
                        let (biv, slot, input, output) = decode_word(w).expect("own word");
                        let router = router_of(&self.dims, vault, biv);
                        fabric.program(router, slot, input, output);
                        applied.push((router, slot, input, output));
                    }
                }
                self.stats.programming_cycles += 1;
                words.retain(|_, q| !q.is_empty());
                self.stage = if words.is_empty() {
                    let mut launch = launch;
                    launch.applied = applied;
                    Stage::Ready { launch }
                } else {
                    Stage::Programming { words, applied, launch }
                };
                None
            }
            Stage::Ready { launch } => {
                let l = *launch;
                dram.schedule_copy(
                    l.read_due,
                    CopyCmd {
                        circuit: l.circuit,
                        bank: l.req.src.bank,
                        row: l.req.src.row,
                        half: CopyHalf::Read,
                        hold: 0,
                    },
                );
                let record = LaunchRecord {
                    circuit: l.circuit,
                    request: l.req.id,
                    read_cycle: l.read_due,
                    read_tick: l.read_tick,
                    hops: l.plan.path.len() as u8,
                    seqs: l.plan.seq_slots.len() as u8,
                    pickup: l.pickup,
                };
                fabric.launch(l.plan);
                self.live.insert(
                    l.circuit,
                    Live { req: l.req, reservation: l.reservation, entries: l.applied },
                );
                self.stats.setups += 1;
                self.stats.setup_latency_sum += now - l.pickup;
                self.stats.max_live_circuits = self.stats.max_live_circuits.max(self.live.len());
                self.pickup = None;
                Some(record)
            }
        }
    }

    fn try_search(&mut self, now: Cycle, clock: &ClockMap, alloc: &mut Allocator) {
        let Some(&(req, _)) = self.queue.front() else { return };
        let pickup = *self.pickup.get_or_insert(now);
        let src = coord_of(req.src.bank, &self.dims);
        let dst = coord_of(req.dst.bank, &self.dims);
        let dag = PathDag::new(src, dst, self.mode, &self.dims);

        let total_beats = (req.bytes * 8).div_ceil(self.link_bits);
        let want_seqs = (self.max_seqs as u64).min(total_beats) as u8;

        // Slots exist only on fabric ticks; the earliest permissible first
        // departure is 3 cycles after pickup.
        let t0 = clock.tick_at_or_after(now + 3);
        let first_slot = (t0 % self.n as Tick) as u8;
        let Some(mut plan) = alloc.search(&dag, first_slot, want_seqs) else {
            self.stats.failed_searches += 1;
            return;
        };
        // Light mode: the vault TSV buses are outside the slot tables, so
        // the allocator cannot see them. Steer the start slots off live
        // bus claims when the plan would collide; under saturation no free
        // phase may exist and the collision stands, to be arbitrated in
        // flight window by window.
        if self.mode == FabricMode::Light {
            if let Some((better, old_clash, new_clash)) =
                self.steer_off_bus(&plan, &dag, first_slot, want_seqs, alloc)
            {
                if new_clash < old_clash {
                    plan = better;
                }
            }
        }
        let circuit = self.next_circuit;
        self.next_circuit += 1;
        let reservation = alloc.reserve(&plan, circuit);

        // Table entries, one per router the circuit crosses, per sequence.
        let hops = plan.hops.len();
        let mut words: BTreeMap<VaultId, VecDeque<Option<u16>>> = BTreeMap::new();
        for &s0 in &plan.slots {
            for k in 0..=hops {
                let (router, input, output) = if k == 0 {
                    (plan.hops[0].0, Port::Local, plan.hops[0].1)
                } else if k < hops {
                    (plan.hops[k].0, plan.hops[k - 1].1.opposite(), plan.hops[k].1)
                } else {
                    (plan.dst, plan.hops[hops - 1].1.opposite(), Port::Local)
                };
                // A light-mode bus receiver routes beats by circuit tag,
                // not by slot, since deferrals separate same-slot beats
                // only by whole windows. Its sideband word programs the
                // tag match instead of a slot-table row, at the same
                // one-word-per-vault-per-cycle cost.
                let word = if self.mode == FabricMode::Light && input.is_vertical() {
                    None
                } else {
                    let slot = ((s0 as u16 + k as u16) % self.n as u16) as u8;
                    Some(encode_word(crate::topology::bank_in_vault(router), slot, input, output))
                };
                words.entry(vault_of(router, &self.dims)).or_default().push_back(word);
            }
        }
        let rounds = words.values().map(|q| q.len()).max().unwrap() as u64;

        // First departure per sequence; a programming phase longer than one
        // cycle can invalidate the earliest starts, which then move by whole
        // windows so the slot phases survive.
        let min_read_cycle = now + rounds + 2;
        let mut departs: Vec<Tick> = plan
            .slots
            .iter()
            .map(|&s| {
                let delta = (s as Tick + self.n as Tick - first_slot as Tick) % self.n as Tick;
                let mut d = t0 + delta;
                while clock.logic_of(d) < min_read_cycle {
                    d += self.n as Tick;
                }
                d
            })
            .collect();
        let read_tick = *departs.iter().min().unwrap();
        let read_due = clock.logic_of(read_tick);

        // Distribute beats over the granted sequences, earliest first.
        let base = total_beats / want_seqs as u64;
        let extra = (total_beats % want_seqs as u64) as usize;
        let mut order: Vec<usize> = (0..departs.len()).collect();
        order.sort_by_key(|&i| departs[i]);
        let mut beats = vec![base; departs.len()];
        for &i in order.iter().take(extra) {
            beats[i] += 1;
        }
        // A sequence that would carry nothing still holds its reservation;
        // keep it out of the flight plan.
        let mut seq_slots = Vec::new();
        let mut first_departs = Vec::new();
        let mut plan_beats = Vec::new();
        for i in 0..departs.len() {
            if beats[i] > 0 {
                seq_slots.push(plan.slots[i]);
                first_departs.push(departs[i]);
                plan_beats.push(beats[i]);
            }
        }
        departs.truncate(seq_slots.len());

        let flight = FlightPlan {
            circuit,
            path: plan.hops.clone(),
            dst: plan.dst,
            dst_bank: req.dst.bank,
            dst_row: req.dst.row,
            seq_slots,
            first_departs,
            beats: plan_beats,
        };
        self.queue.pop_front();
        self.stage = Stage::Programming {
            words,
            applied: Vec::new(),
            launch: Box::new(PendingLaunch {
                circuit,
                req,
                reservation,
                plan: flight,
                read_due,
                read_tick,
                pickup,
            applied: Vec::new(),
            }),
        };
    }

    /// Slots at which any live circuit crosses this vault's TSV bus,
    /// recovered from the vertical-output table entries it programmed.
    fn live_bus_mask(&self, vault: VaultId) -> SlotMask {
        let mut mask: SlotMask = 0;
        for l in self.live.values() {
            for &(router, slot, _, output) in &l.entries {
                if output.is_vertical() && vault_of(router, &self.dims) == vault {
                    mask |= 1 << slot;
                }
            }
        }
        mask
    }

    /// Crossing slots this plan would occupy on its bus vault that are
    /// already claimed by live circuits.
    fn bus_clashes(&self, plan: &CircuitPlan) -> u32 {
        let Some(k_bus) = plan.hops.iter().position(|&(_, p)| p.is_vertical()) else {
            return 0;
        };
        let busy = self.live_bus_mask(vault_of(plan.hops[k_bus].0, &self.dims));
        plan.slots
            .iter()
            .filter(|&&s| busy >> ((s as usize + k_bus) % self.n as usize) & 1 == 1)
            .count() as u32
    }

    /// Re-search with the clashing bus phases excluded. Returns the
    /// alternative plan with the old and new clash counts, or None when
    /// the original plan is clash-free or no alternative exists.
    fn steer_off_bus(
        &self,
        plan: &CircuitPlan,
        dag: &PathDag,
        first_slot: u8,
        want_seqs: u8,
        alloc: &Allocator,
    ) -> Option<(CircuitPlan, u32, u32)> {
        let old_clash = self.bus_clashes(plan);
        if old_clash == 0 {
            return None;
        }
        let k_bus = plan.hops.iter().position(|&(_, p)| p.is_vertical()).unwrap();
        let busy = self.live_bus_mask(vault_of(plan.hops[k_bus].0, &self.dims));
        // Start-slot frame: start s crosses the bus at slot (s + k_bus).
        let n = self.n as u32;
        let k = k_bus as u32 % n;
        let avoid = if k == 0 {
            busy
        } else {
            (busy >> k | busy << (n - k)) & crate::tdm::slot_mask(self.n)
        };
        let better = alloc.search_avoiding(dag, first_slot, want_seqs, avoid)?;
        let new_clash = self.bus_clashes(&better);
        Some((better, old_clash, new_clash))
    }

    /// Tear down a completed circuit: free its slots and erase its table
    /// entries. Returns the request it carried.
    pub fn complete(
        &mut self,
        circuit: u64,
        alloc: &mut Allocator,
        fabric: &mut Fabric,
    ) -> CopyRequest {
        let live = self.live.remove(&circuit).expect("completing unknown circuit");
        alloc.release(&live.reservation);
        for (router, slot, input, output) in live.entries {
            fabric.unprogram(router, slot, input, output);
        }
        live.req
    }
}
