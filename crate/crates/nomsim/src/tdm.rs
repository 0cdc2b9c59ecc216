//! TDM slot allocation: occupancy tracking, availability propagation over
//! shortest-path DAGs, and circuit reservation.
//!
//! Time on every link repeats in windows of `n` slots. A circuit claims one
//! output-port slot in each router it crosses, on consecutive slots: if the
//! source injects at slot `s`, hop `k` departs its router at slot
//! `(s + k) % n` and the destination ejects at slot `(s + hops) % n`.
//!
//! # Occupancy rows
//!
//! `V[port][slot]` is a busy bit per output port per slot. The six mesh
//! rows track the departing links. The `Local` row tracks the bank-side
//! buffer port: a circuit claims it at the source on its injection slot and
//! at the destination on its ejection slot, so no two circuits ever touch
//! one bank's buffer interface in the same cycle. That also keeps the copy
//! read/write commands of distinct circuits on distinct cycles at any bank.
//!
//! # Vector frame convention
//!
//! Availability vectors are indexed by *local* slot: while propagating, bit
//! `j` of the vector at some router refers to that router's own departure
//! (or ejection) happening at slot `j`, not to the source start slot. The
//! rotate-right applied at each router converts the predecessor's frame to
//! the local frame, because the circuit departs each next router one slot
//! later. The vector that reaches the destination is therefore in the
//! ejection-slot frame; subtracting the hop count (mod `n`) converts a free
//! ejection slot back to a source start slot.

use crate::topology::{bank_of, BankCoord, BankId, MeshDims, PathDag, Port, PORT_COUNT};

/// Bitmask over the `n` slots of a window (`n <= 64`).
pub type SlotMask = u64;

pub fn slot_mask(n: u8) -> SlotMask {
    debug_assert!(n >= 1 && n <= 64);
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Shift busy bits one slot later (bit `j` moves to bit `(j + 1) % n`):
/// the frame change applied when a vector moves one hop downstream.
pub fn rotate_later(v: SlotMask, n: u8) -> SlotMask {
    ((v << 1) | (v >> (n - 1))) & slot_mask(n)
}

/// Shift busy bits one slot earlier (bit `j` moves to bit `(j - 1) % n`).
pub fn rotate_earlier(v: SlotMask, n: u8) -> SlotMask {
    ((v >> 1) | (v << (n - 1))) & slot_mask(n)
}

/// Windows a circuit must hold its slots to move `payload_bits` over
/// `link_bits`-wide links with `seqs` parallel slot sequences per window.
pub fn windows_needed(payload_bits: u64, link_bits: u64, seqs: u64) -> u64 {
    assert!(link_bits > 0 && seqs > 0);
    payload_bits.div_ceil(link_bits * seqs)
}

/// A planned circuit before reservation: one path plus the start slots of
/// every granted slot sequence, earliest first.
#[derive(Clone, Debug)]
pub struct CircuitPlan {
    pub src: BankCoord,
    pub dst: BankCoord,
    /// `(router, output port)` per hop; `hops[0].0 == src`.
    pub hops: Vec<(BankCoord, Port)>,
    /// Start slots in departure order beginning at the requested first slot.
    pub slots: Vec<u8>,
}

impl CircuitPlan {
    pub fn hop_count(&self) -> u8 {
        self.hops.len() as u8
    }
}

/// Claims held by a reserved circuit, kept for exact release.
#[derive(Clone, Debug)]
pub struct Reservation {
    pub circuit_id: u64,
    claims: Vec<(BankId, Port, u8)>,
}

/// Independent record of who holds each `(router, port, slot)` claim.
/// A claim recurs in every window of its circuit's life, so simultaneous
/// ownership here is exactly a per-window double-booking.
#[derive(Default)]
pub struct AuditLog {
    owners: std::collections::BTreeMap<(BankId, Port, u8), u64>,
    pub double_bookings: u64,
    pub total_claims: u64,
}

impl AuditLog {
    fn claim(&mut self, key: (BankId, Port, u8), circuit: u64) -> bool {
        self.total_claims += 1;
        if let Some(prev) = self.owners.insert(key, circuit) {
            self.double_bookings += 1;
            self.owners.insert(key, prev);
            return false;
        }
        true
    }

    fn release(&mut self, key: (BankId, Port, u8), circuit: u64) {
        let prev = self.owners.remove(&key);
        assert_eq!(prev, Some(circuit), "releasing a claim not held by circuit {circuit}");
    }

    pub fn live_claims(&self) -> usize {
        self.owners.len()
    }
}

/// Slot occupancy for every router plus the reservation bookkeeping.
pub struct Allocator {
    dims: MeshDims,
    n: u8,
    rows: Vec<[SlotMask; PORT_COUNT]>,
    pub audit: AuditLog,
}

impl Allocator {
    pub fn new(dims: MeshDims, slots_per_window: u8) -> Self {
        assert!((2..=64).contains(&slots_per_window));
        Allocator {
            dims,
            n: slots_per_window,
            rows: vec![[0; PORT_COUNT]; dims.bank_count() as usize],
            audit: AuditLog::default(),
        }
    }

    pub fn slots_per_window(&self) -> u8 {
        self.n
    }

    pub fn row(&self, bank: BankId, port: Port) -> SlotMask {
        self.rows[bank as usize][port.index()]
    }

    pub fn is_busy(&self, c: BankCoord, port: Port, slot: u8) -> bool {
        self.row(bank_of(c, &self.dims), port) >> slot & 1 == 1
    }

    /// Test hook: mark a single slot busy without an owning circuit.
    pub fn set_busy(&mut self, c: BankCoord, port: Port, slot: u8) {
        assert!(slot < self.n);
        self.rows[bank_of(c, &self.dims) as usize][port.index()] |= 1 << slot;
    }

    /// Run the availability vector across the DAG and return the vector as
    /// seen at the destination, in the ejection-slot frame (busy bits set).
    ///
    /// The vector starts at the source as that bank's `Local` row, is ORed
    /// with the departing port's row on each outgoing edge, and at every
    /// subsequent router is first rotated one slot later and then ORed with
    /// the rows of the productive output ports. Vectors meeting at a DAG
    /// join AND their busy bits: a slot stays busy only if it is busy along
    /// every incoming branch, i.e. free as soon as one branch can carry it.
    pub fn propagate(&self, dag: &PathDag) -> SlotMask {
        let all = slot_mask(self.n);
        let mut incoming = vec![all; dag.nodes.len()];
        incoming[0] = self.row(bank_of(dag.src, &self.dims), Port::Local);
        for (i, node) in dag.nodes.iter().enumerate() {
            if node.edges.is_empty() {
                continue;
            }
            let base = if i == 0 { incoming[0] } else { rotate_later(incoming[i], self.n) };
            let bank = bank_of(node.coord, &self.dims);
            for e in &node.edges {
                incoming[e.to] &= base | self.row(bank, e.port);
            }
        }
        let dst_in = rotate_later(incoming[dag.nodes.len() - 1], self.n);
        dst_in | self.row(bank_of(dag.dst, &self.dims), Port::Local)
    }

    /// Free source start slots for the DAG, as a mask with feasible slots
    /// set. Derived from [`Allocator::propagate`] by unwinding the hop-count
    /// frame shift.
    pub fn feasible_starts(&self, dag: &PathDag) -> SlotMask {
        let dest = self.propagate(dag);
        let free_ejects = !dest & slot_mask(self.n);
        rotate_mask_earlier_by(free_ejects, dag.hops() as u32 % self.n as u32, self.n)
    }

    /// Per-node mask of departure slots from which a fully free path to the
    /// destination (including its `Local` ejection) still exists.
    fn backward_free(&self, dag: &PathDag) -> Vec<SlotMask> {
        let mut busy = vec![0u64; dag.nodes.len()];
        let last = dag.nodes.len() - 1;
        busy[last] = self.row(bank_of(dag.dst, &self.dims), Port::Local);
        for i in (0..last).rev() {
            let node = &dag.nodes[i];
            let bank = bank_of(node.coord, &self.dims);
            let mut acc = slot_mask(self.n);
            for e in &node.edges {
                acc &= self.row(bank, e.port) | rotate_earlier(busy[e.to], self.n);
            }
            busy[i] = acc;
        }
        busy
    }

    /// Find the earliest-starting circuit on the DAG.
    ///
    /// Start slots are considered in departure order beginning at
    /// `first_slot` (the slot of the earliest cycle data may move). Among
    /// paths supporting the chosen slot the lexicographically first by port
    /// order wins. Up to `max_seqs` start slots are granted, all on that
    /// one path, again in departure order.
    pub fn search(&self, dag: &PathDag, first_slot: u8, max_seqs: u8) -> Option<CircuitPlan> {
        self.search_avoiding(dag, first_slot, max_seqs, 0)
    }

    /// `search` with a best-effort start-slot exclusion. Bits set in
    /// `avoid` (start-slot frame) are granted only when no other start
    /// exists, and never mixed with unavoided ones in a grant. Feasibility
    /// is unchanged: a circuit refused here would be refused by `search`.
    pub fn search_avoiding(
        &self,
        dag: &PathDag,
        first_slot: u8,
        max_seqs: u8,
        avoid: SlotMask,
    ) -> Option<CircuitPlan> {
        assert!(first_slot < self.n && max_seqs >= 1);
        let backward = self.backward_free(dag);
        let src_bank = bank_of(dag.src, &self.dims);
        let feasible = !(backward[0] | self.row(src_bank, Port::Local)) & slot_mask(self.n);
        debug_assert_eq!(feasible, self.feasible_starts(dag), "forward/backward disagree");
        if feasible == 0 {
            return None;
        }
        let pool = if feasible & !avoid != 0 { feasible & !avoid } else { feasible };
        let s0 = (0..self.n)
            .map(|off| (first_slot + off) % self.n)
            .find(|s| pool >> s & 1 == 1)
            .unwrap();

        let mut hops = Vec::with_capacity(dag.hops() as usize);
        let mut at = 0usize;
        let mut slot = s0;
        let last = dag.nodes.len() - 1;
        while at != last {
            let node = &dag.nodes[at];
            let bank = bank_of(node.coord, &self.dims);
            let e = node
                .edges
                .iter()
                .find(|e| {
                    let port_free = self.row(bank, e.port) >> slot & 1 == 0;
                    let next_slot = (slot + 1) % self.n;
                    let onward_free = backward[e.to] >> next_slot & 1 == 0;
                    port_free && onward_free
                })
                .expect("feasible slot must admit a path");
            hops.push((node.coord, e.port));
            at = e.to;
            slot = (slot + 1) % self.n;
        }

        let path_free = self.path_free_starts(&hops, dag.dst);
        debug_assert!(path_free >> s0 & 1 == 1);
        let grant = if path_free & !avoid != 0 { path_free & !avoid } else { path_free };
        debug_assert!(grant >> s0 & 1 == 1);
        let slots = (0..self.n)
            .map(|off| (first_slot + off) % self.n)
            .filter(|s| grant >> s & 1 == 1)
            .take(max_seqs as usize)
            .collect();
        Some(CircuitPlan { src: dag.src, dst: dag.dst, hops, slots })
    }

    /// Start slots free along one concrete path (all hops plus both `Local`
    /// endpoint claims), as a mask in the start-slot frame.
    fn path_free_starts(&self, hops: &[(BankCoord, Port)], dst: BankCoord) -> SlotMask {
        let mut busy = self.row(bank_of(hops[0].0, &self.dims), Port::Local);
        for (k, (coord, port)) in hops.iter().enumerate() {
            let row = self.row(bank_of(*coord, &self.dims), *port);
            busy |= rotate_mask_earlier_by(row, k as u32 % self.n as u32, self.n);
        }
        let eject = self.row(bank_of(dst, &self.dims), Port::Local);
        busy |= rotate_mask_earlier_by(eject, hops.len() as u32 % self.n as u32, self.n);
        !busy & slot_mask(self.n)
    }

    /// Claim every slot of the plan. Panics if any targeted bit is already
    /// set: the search must only ever hand out collision-free plans.
    pub fn reserve(&mut self, plan: &CircuitPlan, circuit_id: u64) -> Reservation {
        let mut claims = Vec::with_capacity(plan.slots.len() * (plan.hops.len() + 2));
        for &s in &plan.slots {
            claims.push((bank_of(plan.src, &self.dims), Port::Local, s));
            for (k, (coord, port)) in plan.hops.iter().enumerate() {
                let slot = (s as u32 + k as u32) % self.n as u32;
                claims.push((bank_of(*coord, &self.dims), *port, slot as u8));
            }
            let eject = (s as u32 + plan.hops.len() as u32) % self.n as u32;
            claims.push((bank_of(plan.dst, &self.dims), Port::Local, eject as u8));
        }
        for &(bank, port, slot) in &claims {
            let row = &mut self.rows[bank as usize][port.index()];
            let ok = self.audit.claim((bank, port, slot), circuit_id);
            assert!(
                ok && *row >> slot & 1 == 0,
                "slot collision: bank {bank} port {port:?} slot {slot} already reserved"
            );
            *row |= 1 << slot;
        }
        Reservation { circuit_id, claims }
    }

    /// Clear every claim of a reservation. Inverse of [`Allocator::reserve`].
    pub fn release(&mut self, res: &Reservation) {
        for &(bank, port, slot) in &res.claims {
            let row = &mut self.rows[bank as usize][port.index()];
            assert!(*row >> slot & 1 == 1, "releasing a free slot");
            *row &= !(1u64 << slot);
            self.audit.release((bank, port, slot), res.circuit_id);
        }
    }
}

fn rotate_mask_earlier_by(v: SlotMask, k: u32, n: u8) -> SlotMask {
    let k = k % n as u32;
    if k == 0 {
        v
    } else {
        ((v >> k) | (v << (n as u32 - k))) & slot_mask(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{coord_of, FabricMode};
    use rand::{Rng, SeedableRng};

    fn line3_dims() -> MeshDims {
        MeshDims::new(3, 1, 1)
    }

    #[test]
    fn windows_needed_examples() {
        assert_eq!(windows_needed(512, 64, 1), 8);
        assert_eq!(windows_needed(32768, 64, 1), 512);
        assert_eq!(windows_needed(32768, 64, 4), 128);
        assert_eq!(windows_needed(1, 64, 1), 1);
    }

    #[test]
    fn rotate_is_a_cyclic_frame_shift() {
        let n = 8;
        assert_eq!(rotate_later(0b0000_0100, n), 0b0000_1000);
        assert_eq!(rotate_later(0b1000_0000, n), 0b0000_0001);
        assert_eq!(rotate_earlier(rotate_later(0b1010, n), n), 0b1010);
    }

    /// Hand-traced case on a 3-router line with 4 slots: the middle router's
    /// XPlus row is busy at slot 2, which is exactly where a circuit starting
    /// at slot 1 would depart that router, so start slot 1 must be the one
    /// infeasible start.
    #[test]
    fn propagate_blocks_start_slot_covered_by_a_middle_hop() {
        let dims = line3_dims();
        let mut alloc = Allocator::new(dims, 4);
        alloc.set_busy(BankCoord::new(1, 0, 0), Port::XPlus, 2);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 0, 0), FabricMode::Full, &dims);
        let dest = alloc.propagate(&dag);
        // Ejection frame: start slot 1 ejects at slot 3.
        assert_eq!(dest, 0b1000);
        assert_eq!(alloc.feasible_starts(&dag), 0b1101);
    }

    #[test]
    fn propagate_on_empty_mesh_leaves_every_slot_free() {
        let dims = MeshDims::new(3, 3, 2);
        let alloc = Allocator::new(dims, 8);
        for (s, d) in [(0u16, 17u16), (4, 12), (0, 1)] {
            let dag = PathDag::new(coord_of(s, &dims), coord_of(d, &dims), FabricMode::Full, &dims);
            assert_eq!(alloc.feasible_starts(&dag), slot_mask(8));
        }
    }

    /// Brute-force reference: a start slot is feasible iff some enumerated
    /// shortest path has every hop's output port free on its slot, plus both
    /// endpoint Local claims free. Mirrors the resource model exactly and
    /// stays independent of the propagation code.
    fn brute_force_starts(alloc: &Allocator, dag: &PathDag, dims: &MeshDims) -> SlotMask {
        let n = alloc.slots_per_window();
        let mut feasible = 0u64;
        for path in dag.enumerate_paths() {
            for s in 0..n {
                if feasible >> s & 1 == 1 {
                    continue;
                }
                let mut at = dag.src;
                let mut ok = !alloc.is_busy(dag.src, Port::Local, s);
                for (k, port) in path.iter().enumerate() {
                    let slot = ((s as usize + k) % n as usize) as u8;
                    if alloc.is_busy(at, *port, slot) {
                        ok = false;
                        break;
                    }
                    at = port.step(at, dims).unwrap();
                }
                let eject = ((s as usize + path.len()) % n as usize) as u8;
                if ok && !alloc.is_busy(dag.dst, Port::Local, eject) {
                    feasible |= 1 << s;
                }
            }
        }
        feasible
    }

    fn randomized_occupancy(seed: u64, dims: &MeshDims, n: u8, fill: f64) -> Allocator {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut alloc = Allocator::new(*dims, n);
        for b in 0..dims.bank_count() {
            for p in 0..PORT_COUNT {
                for s in 0..n {
                    if rng.gen_bool(fill) {
                        alloc.set_busy(coord_of(b, dims), Port::from_index(p).unwrap(), s);
                    }
                }
            }
        }
        alloc
    }

    #[test]
    fn propagate_matches_brute_force_on_random_occupancy() {
        let dims = MeshDims::new(3, 3, 2);
        for case in 0..25u64 {
            let fill = 0.1 + 0.04 * (case % 16) as f64;
            let alloc = randomized_occupancy(1000 + case, &dims, 8, fill);
            for sb in 0..dims.bank_count() {
                for db in 0..dims.bank_count() {
                    if sb == db {
                        continue;
                    }
                    let dag =
                        PathDag::new(coord_of(sb, &dims), coord_of(db, &dims), FabricMode::Full, &dims);
                    assert_eq!(
                        alloc.feasible_starts(&dag),
                        brute_force_starts(&alloc, &dag, &dims),
                        "case {case} src {sb} dst {db}"
                    );
                }
            }
        }
    }

    #[test]
    fn propagate_matches_brute_force_in_light_mode() {
        let dims = MeshDims::new(3, 3, 2);
        for case in 0..10u64 {
            let alloc = randomized_occupancy(7000 + case, &dims, 8, 0.3);
            for sb in 0..dims.bank_count() {
                for db in 0..dims.bank_count() {
                    if sb == db {
                        continue;
                    }
                    let dag =
                        PathDag::new(coord_of(sb, &dims), coord_of(db, &dims), FabricMode::Light, &dims);
                    assert_eq!(
                        alloc.feasible_starts(&dag),
                        brute_force_starts(&alloc, &dag, &dims),
                        "case {case} src {sb} dst {db}"
                    );
                }
            }
        }
    }

    #[test]
    fn search_prefers_the_first_slot_in_departure_order() {
        let dims = MeshDims::default();
        let alloc = Allocator::new(dims, 16);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 2, 0), FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 3, 1).unwrap();
        assert_eq!(plan.slots, vec![3]);
        assert_eq!(plan.hop_count(), 4);
    }

    #[test]
    fn avoided_starts_are_granted_only_as_a_last_resort() {
        let dims = MeshDims::default();
        let alloc = Allocator::new(dims, 16);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 2, 0), FabricMode::Full, &dims);
        // Slots 3..6 are undesirable; the pick moves past them.
        let plan = alloc.search_avoiding(&dag, 3, 2, 0b111 << 3).unwrap();
        assert_eq!(plan.slots, vec![6, 7]);
        // With every slot undesirable the avoidance is waived entirely.
        let plan = alloc.search_avoiding(&dag, 3, 2, slot_mask(16)).unwrap();
        assert_eq!(plan.slots, vec![3, 4]);
        // A grant never mixes avoided and unavoided starts: one free slot
        // caps the grant at one sequence.
        let plan = alloc.search_avoiding(&dag, 3, 2, !(1 << 9) & slot_mask(16)).unwrap();
        assert_eq!(plan.slots, vec![9]);
    }

    #[test]
    fn search_breaks_path_ties_by_port_order() {
        let dims = MeshDims::default();
        let alloc = Allocator::new(dims, 16);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(1, 1, 1), FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 0, 1).unwrap();
        let ports: Vec<Port> = plan.hops.iter().map(|h| h.1).collect();
        assert_eq!(ports, vec![Port::XPlus, Port::YPlus, Port::ZPlus]);
    }

    #[test]
    fn search_routes_around_a_blocked_link() {
        let dims = MeshDims::default();
        let mut alloc = Allocator::new(dims, 16);
        // Block the lexicographically preferred first hop on every slot.
        for s in 0..16 {
            alloc.set_busy(BankCoord::new(0, 0, 0), Port::XPlus, s);
        }
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(1, 1, 0), FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 0, 1).unwrap();
        let ports: Vec<Port> = plan.hops.iter().map(|h| h.1).collect();
        assert_eq!(ports, vec![Port::YPlus, Port::XPlus]);
    }

    #[test]
    fn search_grants_multiple_sequences_on_one_path() {
        let dims = MeshDims::default();
        let alloc = Allocator::new(dims, 16);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(3, 0, 0), FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 5, 4).unwrap();
        assert_eq!(plan.slots, vec![5, 6, 7, 8]);
    }

    #[test]
    fn search_on_a_saturated_path_finds_nothing() {
        let dims = line3_dims();
        let mut alloc = Allocator::new(dims, 4);
        for s in 0..4 {
            alloc.set_busy(BankCoord::new(1, 0, 0), Port::XPlus, s);
        }
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 0, 0), FabricMode::Full, &dims);
        assert!(alloc.search(&dag, 0, 1).is_none());
    }

    /// The canonical worked example: an 8-slot window, a 5-router path, an
    /// empty fabric, and the earliest movable slot being 3. The circuit must
    /// claim slots 3..7 along the path, reading at slot 3 and ejecting at
    /// slot 7.
    #[test]
    fn five_router_circuit_claims_five_consecutive_slots() {
        let dims = MeshDims::default();
        let mut alloc = Allocator::new(dims, 8);
        let src = BankCoord::new(0, 0, 0);
        let dst = BankCoord::new(2, 2, 0);
        let dag = PathDag::new(src, dst, FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 3, 1).unwrap();
        assert_eq!(plan.slots, vec![3]);
        assert_eq!(plan.hop_count(), 4);
        let res = alloc.reserve(&plan, 1);

        let mut expect = Vec::new();
        expect.push((plan.src, Port::Local, 3u8));
        for (k, (coord, port)) in plan.hops.iter().enumerate() {
            expect.push((*coord, *port, 3 + k as u8));
        }
        expect.push((dst, Port::Local, 7));
        for (coord, port, slot) in expect {
            assert!(alloc.is_busy(coord, port, slot), "{coord:?} {port:?} {slot}");
        }
        // Five routers touched, slots 3..=7, one link claim per router plus
        // the bank-side claims at the two endpoints.
        assert_eq!(res.claims.len(), 6);
        alloc.release(&res);
    }

    #[test]
    fn reserve_then_release_restores_every_row() {
        let dims = MeshDims::new(3, 3, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut alloc = randomized_occupancy(rng.gen(), &dims, 8, 0.2);
            let before: Vec<_> = (0..dims.bank_count())
                .map(|b| (0..PORT_COUNT).map(|p| alloc.row(b, Port::from_index(p).unwrap())).collect::<Vec<_>>())
                .collect();
            let sb = rng.gen_range(0..dims.bank_count());
            let db = (sb + 1 + rng.gen_range(0..dims.bank_count() - 1)) % dims.bank_count();
            let dag = PathDag::new(coord_of(sb, &dims), coord_of(db, &dims), FabricMode::Full, &dims);
            let Some(plan) = alloc.search(&dag, rng.gen_range(0..8), 2) else {
                continue;
            };
            let res = alloc.reserve(&plan, 7);
            alloc.release(&res);
            let after: Vec<_> = (0..dims.bank_count())
                .map(|b| (0..PORT_COUNT).map(|p| alloc.row(b, Port::from_index(p).unwrap())).collect::<Vec<_>>())
                .collect();
            assert_eq!(before, after);
            assert_eq!(alloc.audit.live_claims(), 0);
            assert_eq!(alloc.audit.double_bookings, 0);
        }
    }

    #[test]
    fn disjoint_reservations_commute() {
        let dims = MeshDims::default();
        let dag_a = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 0, 0), FabricMode::Full, &dims);
        let dag_b = PathDag::new(BankCoord::new(0, 4, 0), BankCoord::new(2, 4, 0), FabricMode::Full, &dims);

        let mut ab = Allocator::new(dims, 16);
        let plan_a = ab.search(&dag_a, 0, 1).unwrap();
        ab.reserve(&plan_a, 1);
        let plan_b = ab.search(&dag_b, 0, 1).unwrap();
        ab.reserve(&plan_b, 2);

        let mut ba = Allocator::new(dims, 16);
        let plan_b2 = ba.search(&dag_b, 0, 1).unwrap();
        ba.reserve(&plan_b2, 2);
        let plan_a2 = ba.search(&dag_a, 0, 1).unwrap();
        ba.reserve(&plan_a2, 1);

        for b in 0..dims.bank_count() {
            for p in 0..PORT_COUNT {
                assert_eq!(ab.row(b, Port::from_index(p).unwrap()), ba.row(b, Port::from_index(p).unwrap()));
            }
        }
    }

    #[test]
    #[should_panic(expected = "slot collision")]
    fn double_reserve_of_the_same_slot_panics() {
        let dims = line3_dims();
        let mut alloc = Allocator::new(dims, 4);
        let dag = PathDag::new(BankCoord::new(0, 0, 0), BankCoord::new(2, 0, 0), FabricMode::Full, &dims);
        let plan = alloc.search(&dag, 0, 1).unwrap();
        alloc.reserve(&plan, 1);
        alloc.reserve(&plan, 2);
    }

    #[test]
    fn extra_reservations_never_enlarge_the_feasible_set() {
        let dims = MeshDims::new(3, 3, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for case in 0..30 {
            let mut alloc = randomized_occupancy(case, &dims, 8, 0.15);
            let sb = rng.gen_range(0..dims.bank_count());
            let db = (sb + 1 + rng.gen_range(0..dims.bank_count() - 1)) % dims.bank_count();
            let dag = PathDag::new(coord_of(sb, &dims), coord_of(db, &dims), FabricMode::Full, &dims);
            let before = alloc.feasible_starts(&dag);
            let ob = rng.gen_range(0..dims.bank_count());
            alloc.set_busy(
                coord_of(ob, &dims),
                Port::from_index(rng.gen_range(0..PORT_COUNT)).unwrap(),
                rng.gen_range(0..8),
            );
            let after = alloc.feasible_starts(&dag);
            assert_eq!(after & !before, 0, "case {case}: a busier mesh grew the feasible set");
        }
    }
}
