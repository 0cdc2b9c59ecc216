//! The simulation driver: one deterministic loop over logic cycles.
//!
//! Each simulated cycle runs a fixed phase order:
//!
//! 1. admit trace records arriving this cycle,
//! 2. tick the circuit scheduler (setup pipeline),
//! 3. on fabric tick boundaries, move flits and collect finished circuits,
//! 4. tick the vault controllers under the engine's bus stall mask,
//! 5. feed served requests back to the engines,
//! 6. run engine events due this cycle.
//!
//! Between cycles the driver jumps straight to the next cycle where
//! anything can happen, so idle stretches cost nothing. A configurable
//! cycle cap turns starvation into an incomplete-run report instead of a
//! hang.

use std::collections::HashMap;

use crate::ccu::Ccu;
use crate::config::SimConfig;
use crate::dram::Dram;
use crate::engines::Engines;
use crate::fabric::{ClockMap, Fabric, Tick};
use crate::stats::StatsReport;
use crate::tdm::Allocator;
use crate::topology::Cycle;
use crate::workload::Trace;
use crate::{Error, Result};

/// Timing of one circuit, kept for diagnostics and tests.
#[derive(Clone, Copy, Debug)]
pub struct CircuitRecord {
    pub request: u64,
    pub circuit: u64,
    /// Cycle the request reached the head of the setup queue.
    pub pickup: Cycle,
    pub read_tick: Tick,
    pub read_cycle: Cycle,
    pub write_tick: Tick,
    pub write_cycle: Cycle,
    pub done_tick: Tick,
    pub done_cycle: Cycle,
    pub hops: u8,
    pub seqs: u8,
    pub defers: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: StatsReport,
    pub circuits: Vec<CircuitRecord>,
    pub completions: Vec<crate::engines::Completion>,
    /// Per-link traversal log; empty unless auditing was enabled.
    pub audit: Vec<crate::fabric::AuditEntry>,
}

pub struct Simulator {
    /// Step every cycle instead of jumping over idle stretches. The
    /// results must match the jumping driver; tests hold it to that.
    pub dense_stepping: bool,
    cfg: SimConfig,
    dram: Dram,
    fabric: Fabric,
    alloc: Allocator,
    ccu: Ccu,
    engines: Engines,
    clock: ClockMap,
    requests: Vec<crate::engines::Request>,
    next_arrival: usize,
    now: Cycle,
    launches: HashMap<u64, crate::ccu::LaunchRecord>,
    circuits: Vec<CircuitRecord>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, trace: &Trace) -> Result<Simulator> {
        cfg.validate()?;
        let dram = Dram::new(&cfg);
        let mut requests = trace.to_requests(&dram.addr)?;
        requests.sort_by_key(|r| r.arrival);
        Ok(Simulator {
            dense_stepping: false,
            fabric: Fabric::new(cfg.dims(), cfg.slots_per_window, cfg.fabric_mode),
            alloc: Allocator::new(cfg.dims(), cfg.slots_per_window),
            ccu: Ccu::new(&cfg),
            engines: Engines::new(&cfg),
            clock: ClockMap::new(cfg.nom_clock_num, cfg.nom_clock_den),
            dram,
            cfg,
            requests,
            next_arrival: 0,
            now: 0,
            launches: HashMap::new(),
            circuits: Vec::new(),
        })
    }

    /// Direct access to the memory store, e.g. to seed payloads.
    /// Log every link traversal into the run result's audit.
    pub fn enable_fabric_audit(&mut self) {
        self.fabric.enable_audit();
    }

    pub fn dram_mut(&mut self) -> &mut Dram {
        &mut self.dram
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    /// Run to drain or to the cycle cap. The simulator stays inspectable
    /// afterwards, e.g. to read copied payloads back out of the store.
    pub fn run(&mut self) -> Result<RunResult> {
        let total = self.requests.len() as u64;
        let mut complete = true;
        loop {
            self.step()?;
            if self.drained() {
                break;
            }
            if self.now >= self.cfg.cycle_cap {
                complete = false;
                break;
            }
            self.now = self.next_cycle()?;
        }
        let copy_bytes = self.engines.stats.copy_bytes;
        let report = StatsReport::build(
            &self.cfg,
            self.engines.completions(),
            copy_bytes,
            total,
            complete,
            self.fabric.stats,
            self.ccu.stats,
            self.dram.stats,
            self.engines.stats,
        );
        Ok(RunResult {
            report,
            circuits: std::mem::take(&mut self.circuits),
            completions: self.engines.completions().to_vec(),
            audit: self.fabric.take_audit(),
        })
    }

    /// One cycle in the documented phase order.
    fn step(&mut self) -> Result<()> {
        let now = self.now;
        while self.next_arrival < self.requests.len()
            && self.requests[self.next_arrival].arrival == now
        {
            let req = self.requests[self.next_arrival].clone();
            self.engines.admit(req, &mut self.dram)?;
            self.next_arrival += 1;
        }
        if let Some(l) = self.ccu.tick(now, &self.clock, &mut self.alloc, &mut self.fabric, &mut self.dram)
        {
            self.engines.on_launch(l.circuit, l.request);
            self.launches.insert(l.circuit, l);
        }
        if let Some(tick) = self.clock.tick_on(now) {
            for d in self.fabric.tick(&mut self.dram, tick, now) {
                let l = self.launches.remove(&d.circuit).expect("finish for unknown circuit");
                let n = self.cfg.slots_per_window as u64;
                // Transfer is deterministic: the first beat lands exactly
                // its hop count after the read, plus any whole windows a
                // vertical-conflict freeze inserted.
                let shifted = d.write_tick - l.read_tick - l.hops as u64;
                debug_assert_eq!(shifted % n, 0, "write landed off its slot phase");
                debug_assert!(shifted / n <= d.defers, "write shifted more than its freezes");
                self.circuits.push(CircuitRecord {
                    request: l.request,
                    circuit: d.circuit,
                    pickup: l.pickup,
                    read_tick: l.read_tick,
                    read_cycle: l.read_cycle,
                    write_tick: d.write_tick,
                    write_cycle: d.write_cycle,
                    done_tick: d.done_tick,
                    done_cycle: d.done_cycle,
                    hops: l.hops,
                    seqs: l.seqs,
                    defers: d.defers,
                });
                self.ccu.complete(d.circuit, &mut self.alloc, &mut self.fabric);
                self.engines.on_circuit_done(d.circuit, d.done_cycle);
            }
        }
        let mask = self.engines.stall_mask(now);
        let served = self.dram.tick(now, &mask);
        self.engines.on_served(&served, &mut self.dram);
        self.engines.tick(now, &mut self.dram, &mut self.ccu)?;
        Ok(())
    }

    fn drained(&self) -> bool {
        self.next_arrival == self.requests.len()
            && self.engines.idle()
            && !self.dram.pending()
            && self.ccu.queued() == 0
            && !self.ccu.busy()
            && self.fabric.idle()
    }

    /// Earliest future cycle where any component can make progress.
    fn next_cycle(&mut self) -> Result<Cycle> {
        let now = self.now;
        if self.dense_stepping {
            return Ok(now + 1);
        }
        let mut next: Option<Cycle> = None;
        let mut consider = |c: Cycle| {
            next = Some(next.map_or(c, |n: Cycle| n.min(c)));
        };
        if self.next_arrival < self.requests.len() {
            consider(self.requests[self.next_arrival].arrival);
        }
        // The setup pipeline retries or advances every cycle while loaded.
        if self.ccu.busy() || self.ccu.queued() > 0 {
            consider(now + 1);
        }
        if !self.fabric.idle() {
            consider(self.clock.logic_of(self.clock.tick_at_or_after(now + 1)));
        }
        let mask = self.engines.stall_mask(now);
        if let Some(c) = self.dram.next_event_after(now, &mask) {
            consider(c);
        }
        if let Some(c) = self.engines.next_event() {
            consider(c);
        }
        match next {
            Some(c) => Ok(c.max(now + 1)),
            None => Err(Error::Invalid(format!(
                "no progress possible at cycle {now} with work outstanding"
            ))),
        }
    }
}

/// Run a trace under one configuration.
pub fn run_trace(cfg: &SimConfig, trace: &Trace) -> Result<RunResult> {
    Simulator::new(cfg.clone(), trace)?.run()
}

/// Generate the configured preset and run it.
pub fn run_preset(cfg: &SimConfig) -> Result<RunResult> {
    run_trace(cfg, &Trace::generate(cfg)?)
}

#[derive(Clone, Debug)]
pub struct CompareRow {
    pub label: String,
    pub drain: Cycle,
    /// Drain of the first row divided by this row's drain.
    pub speedup: f64,
    pub result: RunResult,
}

/// Run the same trace under several configurations. The configurations
/// must agree on everything that shapes the address space, otherwise the
/// shared trace means different things per row.
pub fn compare(configs: &[(String, SimConfig)], trace: &Trace) -> Result<Vec<CompareRow>> {
    let Some(((_, first), _)) = configs.split_first() else {
        return Err(Error::Invalid("nothing to compare".into()));
    };
    for (label, cfg) in configs {
        if cfg.comparable_key() != first.comparable_key() {
            return Err(Error::Invalid(format!(
                "config \"{label}\" reshapes the address space; rows would not share the trace"
            )));
        }
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut base = None;
    for (label, cfg) in configs {
        let result = run_trace(cfg, trace)?;
        let drain = result.report.drain_cycles;
        let base = *base.get_or_insert(drain);
        rows.push(CompareRow {
            label: label.clone(),
            drain,
            speedup: if drain == 0 { 1.0 } else { base as f64 / drain as f64 },
            result,
        });
    }
    Ok(rows)
}

pub fn render_comparison(rows: &[CompareRow]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    writeln!(s, "{:<24} {:>14} {:>10} {:>10}", "config", "drain cycles", "speedup", "complete")
        .expect("string write");
    for r in rows {
        writeln!(
            s,
            "{:<24} {:>14} {:>9.3}x {:>10}",
            r.label,
            r.drain,
            r.speedup,
            r.result.report.complete
        )
        .expect("string write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CopyPolicy;
    use crate::workload::{RecordClass, TraceRecord};

    fn trace_of(records: Vec<TraceRecord>) -> Trace {
        Trace { records }
    }

    fn addr(cfg: &SimConfig, bank: u16, row: u64, col: u32) -> u64 {
        crate::dram::AddressMap::new(cfg).encode(bank, row, col)
    }

    #[test]
    fn empty_trace_drains_instantly() {
        let r = run_trace(&SimConfig::default(), &Trace::default()).unwrap();
        assert!(r.report.complete);
        assert_eq!(r.report.requests_completed, 0);
        assert_eq!(r.report.drain_cycles, 0);
    }

    #[test]
    fn single_copy_latency_matches_the_closed_form() {
        let cfg = SimConfig::default();
        // Banks 0 -> 27: coordinates (0,0,0) -> (3,3,0), a 6-hop path.
        let t = trace_of(vec![TraceRecord {
            cycle: 0,
            class: RecordClass::Copy,
            src: addr(&cfg, 0, 2, 0),
            dst: Some(addr(&cfg, 27, 5, 0)),
            bytes: 64,
        }]);
        let r = run_trace(&cfg, &t).unwrap();
        assert_eq!(r.circuits.len(), 1);
        let c = &r.circuits[0];
        assert_eq!(c.hops, 6);
        assert_eq!(c.defers, 0);
        // The engine phase submits after this cycle's scheduler phase, so
        // pickup lands one cycle past arrival; the search then waits its
        // three-cycle setup floor before programming and read issue.
        assert_eq!(c.pickup, 1);
        assert!(c.read_cycle > c.pickup + 3, "read at {}", c.read_cycle);
        assert_eq!(c.write_tick - c.read_tick, 6);
        // 64 bytes is 8 beats over 4 slot sequences: the last beat leaves
        // one window after the first, from the highest sequence slot.
        assert_eq!(c.seqs, 4);
        let n = cfg.slots_per_window as u64;
        assert_eq!(c.done_tick, c.write_tick + n + (c.seqs as u64 - 1));
        let copy = &r.report.classes[3];
        assert_eq!(copy.count, 1);
        // Completion = final ejection + the endpoint column access.
        assert_eq!(r.report.drain_cycles, c.done_cycle + cfg.t_cas as u64);
    }

    #[test]
    fn fast_forward_matches_dense_stepping() {
        // A sparse trace with long idle gaps: the jumping driver must land
        // on exactly the run a cycle-by-cycle driver produces.
        let cfg = SimConfig::default();
        let t = trace_of(vec![
            TraceRecord {
                cycle: 0,
                class: RecordClass::Copy,
                src: addr(&cfg, 0, 2, 0),
                dst: Some(addr(&cfg, 27, 5, 0)),
                bytes: 4096,
            },
            TraceRecord {
                cycle: 50_000,
                class: RecordClass::Read,
                src: addr(&cfg, 100, 9, 0),
                dst: None,
                bytes: 64,
            },
            TraceRecord {
                cycle: 50_007,
                class: RecordClass::IntraCopy,
                src: addr(&cfg, 40, 1, 0),
                dst: Some(addr(&cfg, 40, 3, 0)),
                bytes: 4096,
            },
        ]);
        let jumped = run_trace(&cfg, &t).unwrap();
        let mut dense_sim = Simulator::new(cfg, &t).unwrap();
        dense_sim.dense_stepping = true;
        let dense = dense_sim.run().unwrap();
        assert_eq!(jumped.report.requests_completed, 3);
        assert_eq!(jumped.report.render(), dense.report.render());
        for (j, d) in jumped.completions.iter().zip(&dense.completions) {
            assert_eq!((j.id, j.done), (d.id, d.done));
        }
    }

    #[test]
    fn identical_config_and_seed_render_identical_reports() {
        let mut cfg = SimConfig::default();
        cfg.workload_requests = 300;
        cfg.workload_mean_gap = 30.0;
        let a = run_preset(&cfg).unwrap();
        let b = run_preset(&cfg).unwrap();
        assert_eq!(a.report.render(), b.report.render());
    }

    #[test]
    fn cycle_cap_reports_incomplete_runs() {
        let mut cfg = SimConfig::default();
        cfg.cycle_cap = 10;
        let t = trace_of(vec![TraceRecord {
            cycle: 0,
            class: RecordClass::Copy,
            src: addr(&cfg, 0, 2, 0),
            dst: Some(addr(&cfg, 27, 5, 0)),
            bytes: 4096,
        }]);
        let r = run_trace(&cfg, &t).unwrap();
        assert!(!r.report.complete);
        assert_eq!(r.report.requests_pending, 1);
    }

    #[test]
    fn compare_rejects_reshaped_address_spaces() {
        let a = SimConfig::default();
        let mut b = SimConfig::default();
        b.mesh_z = 2;
        let t = Trace::default();
        let err = compare(&[("a".into(), a), ("b".into(), b)], &t);
        assert!(err.is_err());
    }

    #[test]
    fn compare_orders_policies_on_a_shared_trace() {
        let mut base = SimConfig::default();
        base.workload_requests = 40;
        base.workload_mean_gap = 5.0;
        let t = Trace::generate(&base).unwrap();
        let mut conv = base.clone();
        conv.policy = CopyPolicy::Conventional;
        let mut rc = base.clone();
        rc.policy = CopyPolicy::RowClone;
        let rows = compare(
            &[("conventional".into(), conv), ("rowclone".into(), rc), ("nom".into(), base)],
            &t,
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.result.report.complete));
        let table = render_comparison(&rows);
        assert!(table.contains("nom"));
    }
}
