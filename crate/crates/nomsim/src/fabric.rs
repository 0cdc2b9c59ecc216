//! The circuit-switched mesh datapath: per-router slot tables and beat
//! (flit) movement along established circuits.
//!
//! A router's slot table maps, for each TDM slot, input ports to output
//! ports as a partial permutation. Tables are programmed out of band by the
//! setup unit; the fabric itself never routes. Every flit movement is
//! checked against the table of the router it crosses, so a scheduling bug
//! surfaces as a panic here rather than as silent data corruption.
//!
//! A beat departs its source in the sequence's slot and then takes exactly
//! one hop per fabric tick, which keeps it aligned with the consecutive
//! slots reserved along the path. In light mode all routers of a vault share
//! one vertical TSV bus; the slot allocator cannot see that sharing, so two
//! circuits may arrive at the bus on the same tick. The earlier-established
//! circuit wins and the loser's whole circuit goes quiet for one window:
//! every in-flight beat holds its position and retries the same slot in the
//! next window, and pending injections shift with it, so the circuit's slot
//! phases never drift. A beat parked this way waits in its router's per-port
//! buffer; buffer space is not contended across circuits in this model.
//!
//! The destination write command is issued by the fabric when the first
//! beat is ejected: it opens the destination row, and later beats stream
//! into the open row through the CS buffer. Issuing it here rather than in
//! the setup unit keeps it correct in light mode, where a deferral can move
//! the arrival after setup has finished.

use std::collections::BTreeMap;

use crate::dram::{CopyCmd, CopyHalf, Dram};
use crate::topology::{
    bank_of, vault_of, BankCoord, BankId, Cycle, FabricMode, MeshDims, Port, PORT_COUNT,
};

/// Fabric time: counts fabric clock ticks, not DRAM logic cycles.
pub type Tick = u64;

/// Everything the fabric needs to move one circuit's payload.
#[derive(Clone, Debug)]
pub struct FlightPlan {
    pub circuit: u64,
    /// Hop k departs `path[k].0` through `path[k].1`.
    pub path: Vec<(BankCoord, Port)>,
    pub dst: BankCoord,
    pub dst_bank: BankId,
    pub dst_row: u64,
    /// Departure slot per granted sequence.
    pub seq_slots: Vec<u8>,
    /// Absolute tick of each sequence's first departure; `% n` equals the
    /// sequence's slot.
    pub first_departs: Vec<Tick>,
    /// Beats carried by each sequence.
    pub beats: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
struct SeqRun {
    slot: u8,
    next_inject: Tick,
    injected: u64,
    beats: u64,
}

#[derive(Clone, Copy, Debug)]
struct Flit {
    /// Index into the path; equal to the path length once the flit sits at
    /// the destination awaiting ejection.
    hop: usize,
    due: Tick,
}

#[derive(Debug)]
struct CircuitRun {
    plan: FlightPlan,
    seqs: Vec<SeqRun>,
    flits: Vec<Flit>,
    delivered: u64,
    total: u64,
    freeze_until: Tick,
    /// (tick, logic cycle) of the first ejection, once it happened.
    write_issued: Option<(Tick, Cycle)>,
    defers: u64,
}

/// A circuit whose final beat just left the network.
#[derive(Clone, Copy, Debug)]
pub struct CircuitDone {
    pub circuit: u64,
    /// When the first beat was ejected and the destination write command
    /// was issued.
    pub write_tick: Tick,
    pub write_cycle: Cycle,
    /// When the final beat was ejected.
    pub done_tick: Tick,
    pub done_cycle: Cycle,
    /// One-window deferrals this circuit suffered (light mode only).
    pub defers: u64,
}

/// One link traversal, logged when auditing is on. Two entries agreeing
/// on everything but the circuit are a double-booked link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub router: BankCoord,
    pub port: Port,
    pub slot: u8,
    pub window: u64,
    pub circuit: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FabricStats {
    /// Link traversals, excluding ejections.
    pub flit_hops: u64,
    pub beats_delivered: u64,
    pub vertical_crossings: u64,
    /// Light mode: arrivals at a vault TSV bus that lost arbitration.
    pub vertical_conflicts: u64,
    /// Vertical crossings that happened while a regular access held the same
    /// vault's data TSV interface.
    pub tsv_coincidences: u64,
    /// One-window circuit deferrals (equals vertical_conflicts).
    pub window_defers: u64,
    /// Fabric ticks executed while at least one circuit was live.
    pub busy_ticks: u64,
}


/// Maps fabric ticks onto DRAM logic cycles when the fabric runs at
/// `num/den <= 1` of the logic clock. Tick `k` lands on logic cycle
/// `floor(k * den / num)`; at ratio 1 the two domains coincide.
#[derive(Clone, Copy, Debug)]
pub struct ClockMap {
    num: u64,
    den: u64,
}

impl ClockMap {
    pub fn new(num: u32, den: u32) -> Self {
        assert!(num > 0 && num <= den);
        ClockMap { num: num as u64, den: den as u64 }
    }

    pub fn logic_of(&self, tick: Tick) -> Cycle {
        tick * self.den / self.num
    }

    /// The tick scheduled on this logic cycle, if any.
    pub fn tick_on(&self, cycle: Cycle) -> Option<Tick> {
        let k = (cycle * self.num).div_ceil(self.den);
        (self.logic_of(k) == cycle).then_some(k)
    }

    /// First tick at or after this logic cycle.
    pub fn tick_at_or_after(&self, cycle: Cycle) -> Tick {
        (cycle * self.num).div_ceil(self.den)
    }
}

pub struct Fabric {
    dims: MeshDims,
    n: u8,
    mode: FabricMode,
    /// `tables[router][slot][input] = output`.
    tables: Vec<Vec<[Option<Port>; PORT_COUNT]>>,
    circuits: BTreeMap<u64, CircuitRun>,
    audit: Option<Vec<AuditEntry>>,
    pub stats: FabricStats,
}

impl Fabric {
    pub fn new(dims: MeshDims, n: u8, mode: FabricMode) -> Self {
        Fabric {
            dims,
            n,
            mode,
            tables: vec![vec![[None; PORT_COUNT]; n as usize]; dims.bank_count() as usize],
            circuits: BTreeMap::new(),
            audit: None,
            stats: FabricStats::default(),
        }
    }

    pub fn mode(&self) -> FabricMode {
        self.mode
    }

    /// Start logging every link traversal. Costs memory proportional to
    /// beats times hops; meant for audits, not production runs.
    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(Vec::new);
    }

    pub fn take_audit(&mut self) -> Vec<AuditEntry> {
        self.audit.take().unwrap_or_default()
    }

    pub fn idle(&self) -> bool {
        self.circuits.is_empty()
    }

    pub fn active_circuits(&self) -> usize {
        self.circuits.len()
    }

    /// Install one slot-table entry. Panics if the entry would break the
    /// slot's partial permutation: the input already routed or the output
    /// already driven.
    pub fn program(&mut self, router: BankCoord, slot: u8, input: Port, output: Port) {
        let r = bank_of(router, &self.dims) as usize;
        let row = &mut self.tables[r][slot as usize];
        assert!(
            row[input.index()].is_none(),
            "router {router:?} slot {slot}: input {input:?} already routed"
        );
        assert!(
            !row.iter().any(|&o| o == Some(output)),
            "router {router:?} slot {slot}: output {output:?} already driven"
        );
        row[input.index()] = Some(output);
    }

    /// Remove one entry; it must exist with exactly this mapping.
    pub fn unprogram(&mut self, router: BankCoord, slot: u8, input: Port, output: Port) {
        let r = bank_of(router, &self.dims) as usize;
        let row = &mut self.tables[r][slot as usize];
        assert_eq!(
            row[input.index()],
            Some(output),
            "router {router:?} slot {slot}: removing an entry that is not installed"
        );
        row[input.index()] = None;
    }

    fn expect_entry(&self, router: BankCoord, slot: u8, input: Port, output: Port) {
        let r = bank_of(router, &self.dims) as usize;
        let got = self.tables[r][slot as usize][input.index()];
        assert_eq!(
            got,
            Some(output),
            "flit at router {router:?} slot {slot} needs {input:?}->{output:?}, table has {got:?}"
        );
    }

    /// Start moving a circuit's payload. The read command at the source is
    /// the setup unit's business; beats here only model the network.
    pub fn launch(&mut self, plan: FlightPlan) {
        assert!(!plan.path.is_empty() && !plan.seq_slots.is_empty());
        assert_eq!(plan.seq_slots.len(), plan.first_departs.len());
        assert_eq!(plan.seq_slots.len(), plan.beats.len());
        let (last, port) = *plan.path.last().unwrap();
        // A vertical bus hop may span several layers at once; planar hops
        // always move exactly one router.
        debug_assert!(
            port.step(last, &self.dims) == Some(plan.dst)
                || (port.is_vertical() && (last.x, last.y) == (plan.dst.x, plan.dst.y)),
            "last hop {last:?} via {port:?} misses destination {:?}",
            plan.dst
        );
        let seqs: Vec<SeqRun> = plan
            .seq_slots
            .iter()
            .zip(&plan.first_departs)
            .zip(&plan.beats)
            .map(|((&slot, &d0), &beats)| {
                assert_eq!(d0 % self.n as Tick, slot as Tick, "first departure off its slot");
                SeqRun { slot, next_inject: d0, injected: 0, beats }
            })
            .collect();
        let total = seqs.iter().map(|s| s.beats).sum();
        assert!(total > 0);
        let id = plan.circuit;
        let prev = self.circuits.insert(
            id,
            CircuitRun {
                plan,
                seqs,
                flits: Vec::new(),
                delivered: 0,
                total,
                freeze_until: 0,
                write_issued: None,
                defers: 0,
            },
        );
        assert!(prev.is_none(), "circuit {id} launched twice");
    }

    /// Advance every live circuit by one fabric tick. `logic_now` is the
    /// DRAM cycle this tick falls on.
    pub fn tick(&mut self, dram: &mut Dram, now: Tick, logic_now: Cycle) -> Vec<CircuitDone> {
        if self.circuits.is_empty() {
            return Vec::new();
        }
        self.stats.busy_ticks += 1;
        let slot = (now % self.n as Tick) as u8;

        // Injections first so a fresh beat can take its first hop this tick.
        for c in self.circuits.values_mut() {
            if now < c.freeze_until {
                continue;
            }
            for s in c.seqs.iter_mut() {
                if s.injected < s.beats && s.next_inject == now {
                    debug_assert_eq!(s.slot, slot);
                    c.flits.push(Flit { hop: 0, due: now });
                    s.injected += 1;
                    s.next_inject += self.n as Tick;
                }
            }
        }

        // Light mode: one vertical transfer per vault per tick. Later
        // circuits lose and sit out a full window.
        if self.mode == FabricMode::Light {
            let mut by_vault: BTreeMap<u16, Vec<u64>> = BTreeMap::new();
            for (&id, c) in &self.circuits {
                if now < c.freeze_until {
                    continue;
                }
                for f in &c.flits {
                    if f.due != now || f.hop >= c.plan.path.len() {
                        continue;
                    }
                    let (router, port) = c.plan.path[f.hop];
                    if port.is_vertical() {
                        by_vault.entry(vault_of(router, &self.dims)).or_default().push(id);
                    }
                }
            }
            for (_, mut ids) in by_vault {
                ids.sort_unstable();
                for &loser in &ids[1..] {
                    let c = self.circuits.get_mut(&loser).unwrap();
                    c.freeze_until = now + self.n as Tick;
                    for f in &mut c.flits {
                        f.due += self.n as Tick;
                    }
                    for s in &mut c.seqs {
                        s.next_inject += self.n as Tick;
                    }
                    c.defers += 1;
                    self.stats.vertical_conflicts += 1;
                    self.stats.window_defers += 1;
                }
            }
        }

        let mut done = Vec::new();
        let ids: Vec<u64> = self.circuits.keys().copied().collect();
        for id in ids {
            let c = self.circuits.get_mut(&id).unwrap();
            if now < c.freeze_until {
                continue;
            }
            let path_len = c.plan.path.len();
            let mut moved: Vec<(usize, BankCoord, Port)> = Vec::new();
            let mut ejected = 0u64;
            c.flits.retain_mut(|f| {
                if f.due != now {
                    return true;
                }
                if f.hop == path_len {
                    ejected += 1;
                    false
                } else {
                    let (router, port) = c.plan.path[f.hop];
                    moved.push((f.hop, router, port));
                    f.hop += 1;
                    f.due += 1;
                    true
                }
            });
            c.delivered += ejected;
            let plan_dst = c.plan.dst;
            let last_in = c.plan.path.last().unwrap().1.opposite();
            let complete = c.delivered == c.total;
            let need_write = ejected > 0 && c.write_issued.is_none();
            let (dst_bank, dst_row) = (c.plan.dst_bank, c.plan.dst_row);
            let prev_in: Vec<Port> =
                c.plan.path.iter().map(|&(_, p)| p.opposite()).collect();

            for &(hop, router, port) in &moved {
                let input = if hop == 0 { Port::Local } else { prev_in[hop - 1] };
                // Beats leaving a light-mode TSV bus carry their tag; the
                // landing router holds no table row for them.
                if !(self.mode == FabricMode::Light && input.is_vertical()) {
                    self.expect_entry(router, slot, input, port);
                }
                if let Some(log) = &mut self.audit {
                    log.push(AuditEntry {
                        router,
                        port,
                        slot,
                        window: now / self.n as Tick,
                        circuit: id,
                    });
                }
                self.stats.flit_hops += 1;
                if port.is_vertical() {
                    self.stats.vertical_crossings += 1;
                    let v = vault_of(router, &self.dims);
                    if dram.tsv_active(v, logic_now) {
                        self.stats.tsv_coincidences += 1;
                    }
                }
            }
            if ejected > 0 {
                if !(self.mode == FabricMode::Light && last_in.is_vertical()) {
                    self.expect_entry(plan_dst, slot, last_in, Port::Local);
                }
                self.stats.beats_delivered += ejected;
                if need_write {
                    self.circuits.get_mut(&id).unwrap().write_issued = Some((now, logic_now));
                    dram.schedule_copy(
                        logic_now,
                        CopyCmd { circuit: id, bank: dst_bank, row: dst_row, half: CopyHalf::Write, hold: 0 },
                    );
                }
            }
            if complete {
                let c = self.circuits.remove(&id).unwrap();
                let (write_tick, write_cycle) = c.write_issued.unwrap();
                done.push(CircuitDone {
                    circuit: id,
                    write_tick,
                    write_cycle,
                    done_tick: now,
                    done_cycle: logic_now,
                    defers: c.defers,
                });
            }
        }
        done
    }
}
