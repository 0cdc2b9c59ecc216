//! Run reports: drain time, per-class latency distributions, mechanism
//! counts, fabric and scheduler counters, all rendered to a deterministic
//! key=value text block plus a human-readable table.

use std::fmt::Write as _;

use crate::ccu::CcuStats;
use crate::config::SimConfig;
use crate::dram::DramStats;
use crate::engines::{Completion, EngineStats, Mechanism, OpClass};
use crate::fabric::FabricStats;
use crate::topology::Cycle;

const CLASS_ORDER: [OpClass; 4] = [OpClass::Read, OpClass::Write, OpClass::Init, OpClass::Copy];
const MECHANISMS: [Mechanism; Mechanism::COUNT] = [
    Mechanism::Conventional,
    Mechanism::RowCloneIntraSubarray,
    Mechanism::Lisa,
    Mechanism::RowCloneInterBank,
    Mechanism::NomCircuit,
];

#[derive(Clone, Debug, Default)]
pub struct ClassStats {
    pub count: u64,
    pub mean: f64,
    pub p50: Cycle,
    pub p95: Cycle,
    pub max: Cycle,
}

#[derive(Clone, Debug)]
pub struct StatsReport {
    /// False when the cycle cap cut the run short.
    pub complete: bool,
    pub requests_issued: u64,
    pub requests_completed: u64,
    pub requests_pending: u64,
    /// Cycle of the last completion; zero for an empty trace.
    pub drain_cycles: Cycle,
    pub classes: [ClassStats; 4],
    pub mechanisms: [u64; Mechanism::COUNT],
    pub copy_bytes: u64,
    pub copy_throughput: f64,
    pub offchip_transactions: u64,
    pub bus_held_cycles: u64,
    pub fabric: FabricStats,
    pub link_utilization: f64,
    pub vertical_conflict_rate: f64,
    pub tsv_coincidence_rate: f64,
    pub ccu: CcuStats,
    pub dram: DramStats,
}

impl StatsReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        cfg: &SimConfig,
        completions: &[Completion],
        copy_bytes: u64,
        requests_issued: u64,
        complete: bool,
        fabric: FabricStats,
        ccu: CcuStats,
        dram: DramStats,
        engines: EngineStats,
    ) -> StatsReport {
        let requests_completed = completions.len() as u64;
        let requests_pending = requests_issued
            .checked_sub(requests_completed)
            .expect("request conservation: completions exceed issues");
        let drain_cycles = completions.iter().map(|c| c.done).max().unwrap_or(0);

        let classes = CLASS_ORDER.map(|class| {
            let mut lats: Vec<Cycle> = completions
                .iter()
                .filter(|c| c.class == class)
                .map(|c| c.done - c.arrival)
                .collect();
            lats.sort_unstable();
            if lats.is_empty() {
                return ClassStats::default();
            }
            let sum: u128 = lats.iter().map(|&l| l as u128).sum();
            let nearest = |q: f64| lats[((lats.len() - 1) as f64 * q).round() as usize];
            ClassStats {
                count: lats.len() as u64,
                mean: sum as f64 / lats.len() as f64,
                p50: nearest(0.50),
                p95: nearest(0.95),
                max: *lats.last().expect("nonempty"),
            }
        });

        // Directed links in the mesh bound what the fabric could carry
        // while it was busy.
        let dims = cfg.dims();
        let (x, y, z) = (dims.x as u64, dims.y as u64, dims.z as u64);
        let links = 2 * ((x - 1) * y * z + x * (y - 1) * z + x * y * (z - 1));
        let link_utilization = if fabric.busy_ticks == 0 {
            0.0
        } else {
            fabric.flit_hops as f64 / (fabric.busy_ticks * links) as f64
        };
        let vertical_attempts = fabric.vertical_crossings + fabric.vertical_conflicts;
        let vertical_conflict_rate = if vertical_attempts == 0 {
            0.0
        } else {
            fabric.vertical_conflicts as f64 / vertical_attempts as f64
        };
        let tsv_coincidence_rate = if fabric.vertical_crossings == 0 {
            0.0
        } else {
            fabric.tsv_coincidences as f64 / fabric.vertical_crossings as f64
        };
        let copy_throughput =
            if drain_cycles == 0 { 0.0 } else { copy_bytes as f64 / drain_cycles as f64 };

        StatsReport {
            complete,
            requests_issued,
            requests_completed,
            requests_pending,
            drain_cycles,
            classes,
            mechanisms: engines.copies_by_mechanism,
            copy_bytes,
            copy_throughput,
            offchip_transactions: engines.offchip_transactions,
            bus_held_cycles: engines.bus_held_cycles,
            fabric,
            link_utilization,
            vertical_conflict_rate,
            tsv_coincidence_rate,
            ccu,
            dram,
        }
    }

    /// Machine-readable form: one key=value per line, fixed order, fixed
    /// float precision, so equal runs render byte-identically.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        kv("complete", self.complete.to_string());
        kv("requests.issued", self.requests_issued.to_string());
        kv("requests.completed", self.requests_completed.to_string());
        kv("requests.pending", self.requests_pending.to_string());
        kv("drain.cycles", self.drain_cycles.to_string());
        for (class, cs) in CLASS_ORDER.iter().zip(&self.classes) {
            let n = class.name();
            kv(&format!("class.{n}.count"), cs.count.to_string());
            kv(&format!("class.{n}.mean"), format!("{:.4}", cs.mean));
            kv(&format!("class.{n}.p50"), cs.p50.to_string());
            kv(&format!("class.{n}.p95"), cs.p95.to_string());
            kv(&format!("class.{n}.max"), cs.max.to_string());
        }
        for (m, count) in MECHANISMS.iter().zip(&self.mechanisms) {
            kv(&format!("mechanism.{}", m.name()), count.to_string());
        }
        kv("copy.bytes", self.copy_bytes.to_string());
        kv("copy.throughput", format!("{:.6}", self.copy_throughput));
        kv("offchip.transactions", self.offchip_transactions.to_string());
        kv("bus.held_cycles", self.bus_held_cycles.to_string());
        kv("fabric.flit_hops", self.fabric.flit_hops.to_string());
        kv("fabric.beats_delivered", self.fabric.beats_delivered.to_string());
        kv("fabric.busy_ticks", self.fabric.busy_ticks.to_string());
        kv("fabric.window_defers", self.fabric.window_defers.to_string());
        kv("fabric.vertical_crossings", self.fabric.vertical_crossings.to_string());
        kv("fabric.vertical_conflicts", self.fabric.vertical_conflicts.to_string());
        kv("fabric.tsv_coincidences", self.fabric.tsv_coincidences.to_string());
        kv("fabric.link_utilization", format!("{:.6}", self.link_utilization));
        kv("fabric.vertical_conflict_rate", format!("{:.6}", self.vertical_conflict_rate));
        kv("fabric.tsv_coincidence_rate", format!("{:.6}", self.tsv_coincidence_rate));
        kv("ccu.setups", self.ccu.setups.to_string());
        kv("ccu.failed_searches", self.ccu.failed_searches.to_string());
        kv("ccu.programming_cycles", self.ccu.programming_cycles.to_string());
        kv("ccu.setup_latency_sum", self.ccu.setup_latency_sum.to_string());
        kv("ccu.max_live_circuits", self.ccu.max_live_circuits.to_string());
        kv("dram.served_regular", self.dram.served_regular.to_string());
        kv("dram.queued_cycle_sum", self.dram.queued_cycle_sum.to_string());
        kv("dram.max_queue_depth", self.dram.max_queue_depth.to_string());
        kv("dram.blocked_by_copy", self.dram.blocked_by_copy.to_string());
        kv("dram.blocked_by_bus", self.dram.blocked_by_bus.to_string());
        s
    }

    /// Human-oriented summary table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let status = if self.complete { "complete" } else { "CYCLE CAP HIT" };
        writeln!(
            s,
            "run {status}: {} of {} requests, drained at cycle {}",
            self.requests_completed, self.requests_issued, self.drain_cycles
        )
        .expect("string write");
        writeln!(s, "{:<8} {:>8} {:>12} {:>10} {:>10} {:>10}", "class", "count", "mean", "p50", "p95", "max")
            .expect("string write");
        for (class, cs) in CLASS_ORDER.iter().zip(&self.classes) {
            writeln!(
                s,
                "{:<8} {:>8} {:>12.1} {:>10} {:>10} {:>10}",
                class.name(),
                cs.count,
                cs.mean,
                cs.p50,
                cs.p95,
                cs.max
            )
            .expect("string write");
        }
        let mechs: Vec<String> = MECHANISMS
            .iter()
            .zip(&self.mechanisms)
            .filter(|(_, &n)| n > 0)
            .map(|(m, n)| format!("{} {}", m.name(), n))
            .collect();
        if !mechs.is_empty() {
            writeln!(s, "copies: {}", mechs.join(", ")).expect("string write");
        }
        writeln!(
            s,
            "copy throughput {:.3} B/cycle, off-chip transactions {}, link utilization {:.4}",
            self.copy_throughput, self.offchip_transactions, self.link_utilization
        )
        .expect("string write");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(completions: &[Completion], issued: u64) -> StatsReport {
        StatsReport::build(
            &SimConfig::default(),
            completions,
            0,
            issued,
            true,
            FabricStats::default(),
            CcuStats::default(),
            DramStats::default(),
            EngineStats::default(),
        )
    }

    #[test]
    fn empty_run_renders_zeroes() {
        let r = rep(&[], 0);
        assert_eq!(r.drain_cycles, 0);
        assert!(r.render().contains("drain.cycles=0"));
        assert!(r.render().contains("requests.issued=0"));
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let completions: Vec<Completion> = (0..100)
            .map(|i| Completion {
                id: i,
                class: OpClass::Read,
                mechanism: None,
                arrival: 0,
                done: i + 1,
            })
            .collect();
        let r = rep(&completions, 100);
        let c = &r.classes[0];
        assert_eq!(c.count, 100);
        assert_eq!(c.p50, 51);
        assert_eq!(c.p95, 95);
        assert_eq!(c.max, 100);
        assert!((c.mean - 50.5).abs() < 1e-9);
    }

    #[test]
    fn render_is_stable_for_equal_inputs() {
        let completions = vec![Completion {
            id: 0,
            class: OpClass::Copy,
            mechanism: Some(Mechanism::NomCircuit),
            arrival: 5,
            done: 105,
        }];
        assert_eq!(rep(&completions, 1).render(), rep(&completions, 1).render());
    }

    #[test]
    #[should_panic(expected = "conservation")]
    fn more_completions_than_issues_is_a_bug() {
        let completions = vec![Completion {
            id: 0,
            class: OpClass::Read,
            mechanism: None,
            arrival: 0,
            done: 1,
        }];
        rep(&completions, 0);
    }
}
