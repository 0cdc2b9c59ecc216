//! Simulation parameters and the flat `key = value` config file format.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Every key matches a [`SimConfig`] field name and unknown keys
//! are rejected so typos fail loudly. Missing keys keep their defaults.

use crate::topology::{FabricMode, MeshDims};
use crate::{Error, Result};

/// Which copy hardware the simulated machine has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopyPolicy {
    /// No in-memory copy support: every copy is processor-mediated reads
    /// and writes over the off-chip link.
    Conventional,
    /// In-DRAM copy: intra-bank copies run in place, inter-bank copies use
    /// the shared internal bus.
    RowClone,
    /// In-DRAM copy plus the circuit-switched mesh for inter-bank copies.
    Nom,
}

impl CopyPolicy {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(CopyPolicy::Conventional),
            "rowclone" => Ok(CopyPolicy::RowClone),
            "nom" => Ok(CopyPolicy::Nom),
            _ => Err(Error::Config(format!("unknown policy '{s}' (conventional|rowclone|nom)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CopyPolicy::Conventional => "conventional",
            CopyPolicy::RowClone => "rowclone",
            CopyPolicy::Nom => "nom",
        }
    }
}

/// Scope of the internal bus reserved by shared-bus inter-bank copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusScope {
    /// One chip-wide bus: a copy stalls every other memory request.
    Global,
    /// One bus per vault: a copy stalls only requests to the two endpoint
    /// vaults.
    PerVault,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub mesh_x: u8,
    pub mesh_y: u8,
    pub mesh_z: u8,
    /// TDM window length in slots.
    pub slots_per_window: u8,
    /// Width of every mesh link and internal datapath.
    pub link_width_bits: u32,
    /// Most parallel slot sequences a single circuit may be granted.
    pub slots_per_window_max: u8,
    pub fabric_mode: FabricMode,
    pub policy: CopyPolicy,
    /// Mesh clock as a fraction of the DRAM logic clock (numerator,
    /// denominator). The fabric advances only on mesh ticks.
    pub nom_clock_num: u32,
    pub nom_clock_den: u32,
    pub t_rcd: u32,
    pub t_cas: u32,
    pub t_rp: u32,
    pub row_bytes: u32,
    pub rows_per_subarray: u32,
    pub bank_bytes: u64,
    /// One-way latency of the off-chip link.
    pub offchip_latency_cycles: u32,
    pub offchip_bytes_per_cycle: u32,
    pub internal_bus_bytes_per_cycle: u32,
    pub rowclone_bus_scope: BusScope,
    /// Fixed per-row latency of an intra-subarray in-place copy.
    pub rowclone_intra_cycles_per_row: u32,
    /// Fixed per-row latency of a cross-subarray in-bank copy.
    pub lisa_cycles_per_row: u32,
    /// Flat delay charged before any in-memory copy starts, standing in for
    /// cache writeback/invalidation of the source and destination regions.
    pub coherence_penalty_cycles: u32,
    pub cycle_cap: u64,
    /// Transfer granularity of copies and regular accesses.
    pub block_bytes: u32,
    pub workload_preset: String,
    pub workload_requests: u64,
    pub workload_payload_bytes: u32,
    /// Mean cycles between consecutive request arrivals.
    pub workload_mean_gap: f64,
    /// Fraction of inter-bank copies whose endpoints share a vault.
    pub workload_same_vault_frac: f64,
    /// Fraction of regular accesses that reuse the previously touched row.
    pub workload_row_reuse_frac: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mesh_x: 8,
            mesh_y: 8,
            mesh_z: 4,
            slots_per_window: 16,
            link_width_bits: 64,
            slots_per_window_max: 4,
            fabric_mode: FabricMode::Full,
            policy: CopyPolicy::Nom,
            nom_clock_num: 1,
            nom_clock_den: 1,
            t_rcd: 10,
            t_cas: 10,
            t_rp: 10,
            row_bytes: 8192,
            rows_per_subarray: 512,
            bank_bytes: 16 * 1024 * 1024,
            offchip_latency_cycles: 8,
            offchip_bytes_per_cycle: 8,
            internal_bus_bytes_per_cycle: 8,
            rowclone_bus_scope: BusScope::Global,
            rowclone_intra_cycles_per_row: 100,
            lisa_cycles_per_row: 200,
            coherence_penalty_cycles: 0,
            cycle_cap: 100_000_000,
            block_bytes: 64,
            workload_preset: "fileCopy40".to_string(),
            workload_requests: 10_000,
            workload_payload_bytes: 4096,
            workload_mean_gap: 1.0,
            workload_same_vault_frac: 0.0,
            workload_row_reuse_frac: 0.3,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn dims(&self) -> MeshDims {
        MeshDims::new(self.mesh_x, self.mesh_y, self.mesh_z)
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.bank_bytes / self.row_bytes as u64
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid number '{v}'"))
        }
        match key {
            "mesh_x" => self.mesh_x = num(value)?,
            "mesh_y" => self.mesh_y = num(value)?,
            "mesh_z" => self.mesh_z = num(value)?,
            "slots_per_window" => self.slots_per_window = num(value)?,
            "link_width_bits" => self.link_width_bits = num(value)?,
            "slots_per_window_max" => self.slots_per_window_max = num(value)?,
            "fabric_mode" => {
                self.fabric_mode = match value {
                    "full" => FabricMode::Full,
                    "light" => FabricMode::Light,
                    _ => return Err(format!("unknown fabric_mode '{value}' (full|light)")),
                }
            }
            "policy" => self.policy = CopyPolicy::parse(value).map_err(|e| e.to_string())?,
            "nom_clock_ratio" => {
                let (n, d) = parse_ratio(value)?;
                self.nom_clock_num = n;
                self.nom_clock_den = d;
            }
            "t_rcd" => self.t_rcd = num(value)?,
            "t_cas" => self.t_cas = num(value)?,
            "t_rp" => self.t_rp = num(value)?,
            "row_bytes" => self.row_bytes = num(value)?,
            "rows_per_subarray" => self.rows_per_subarray = num(value)?,
            "bank_bytes" => self.bank_bytes = num(value)?,
            "offchip_latency_cycles" => self.offchip_latency_cycles = num(value)?,
            "offchip_bytes_per_cycle" => self.offchip_bytes_per_cycle = num(value)?,
            "internal_bus_bytes_per_cycle" => self.internal_bus_bytes_per_cycle = num(value)?,
            "rowclone_bus_scope" => {
                self.rowclone_bus_scope = match value {
                    "global" => BusScope::Global,
                    "per_vault" => BusScope::PerVault,
                    _ => return Err(format!("unknown rowclone_bus_scope '{value}' (global|per_vault)")),
                }
            }
            "rowclone_intra_cycles_per_row" => self.rowclone_intra_cycles_per_row = num(value)?,
            "lisa_cycles_per_row" => self.lisa_cycles_per_row = num(value)?,
            "coherence_penalty_cycles" => self.coherence_penalty_cycles = num(value)?,
            "cycle_cap" => self.cycle_cap = num(value)?,
            "block_bytes" => self.block_bytes = num(value)?,
            "workload_preset" => self.workload_preset = value.to_string(),
            "workload_requests" => self.workload_requests = num(value)?,
            "workload_payload_bytes" => self.workload_payload_bytes = num(value)?,
            "workload_mean_gap" => self.workload_mean_gap = num(value)?,
            "workload_same_vault_frac" => self.workload_same_vault_frac = num(value)?,
            "workload_row_reuse_frac" => self.workload_row_reuse_frac = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.mesh_x == 0 || self.mesh_y == 0 || self.mesh_z == 0 {
            return fail("mesh dimensions must be >= 1".into());
        }
        if self.mesh_z > 4 {
            return fail("mesh_z must be <= 4 (bank-in-vault select is 3 bits)".into());
        }
        if !(2..=16).contains(&self.slots_per_window) {
            return fail("slots_per_window must be in 2..=16 (slot select is 4 bits)".into());
        }
        if self.slots_per_window_max == 0 || self.slots_per_window_max > self.slots_per_window {
            return fail("slots_per_window_max must be in 1..=slots_per_window".into());
        }
        if self.link_width_bits == 0 || self.link_width_bits % 8 != 0 {
            return fail("link_width_bits must be a positive multiple of 8".into());
        }
        if self.link_width_bits > 64 {
            return fail("link_width_bits must be <= 64".into());
        }
        if self.nom_clock_num == 0 || self.nom_clock_den == 0 || self.nom_clock_num > self.nom_clock_den {
            return fail("nom_clock_ratio must be in (0, 1]".into());
        }
        if !self.row_bytes.is_power_of_two() || self.row_bytes < self.block_bytes {
            return fail("row_bytes must be a power of two >= block_bytes".into());
        }
        if self.bank_bytes == 0 || self.bank_bytes % self.row_bytes as u64 != 0 {
            return fail("bank_bytes must be a positive multiple of row_bytes".into());
        }
        if self.rows_per_subarray == 0 {
            return fail("rows_per_subarray must be >= 1".into());
        }
        if self.block_bytes == 0 || self.block_bytes % (self.link_width_bits / 8) != 0 {
            return fail("block_bytes must be a positive multiple of the link width".into());
        }
        if self.offchip_bytes_per_cycle == 0 || self.internal_bus_bytes_per_cycle == 0 {
            return fail("link bandwidths must be positive".into());
        }
        for (name, v) in [
            ("workload_same_vault_frac", self.workload_same_vault_frac),
            ("workload_row_reuse_frac", self.workload_row_reuse_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1]"));
            }
        }
        if self.workload_mean_gap < 0.0 || !self.workload_mean_gap.is_finite() {
            return fail("workload_mean_gap must be a finite non-negative number".into());
        }
        if self.cycle_cap == 0 {
            return fail("cycle_cap must be >= 1".into());
        }
        Ok(())
    }

    /// Render as config-file text that parses back to an equal value.
    pub fn to_text(&self) -> String {
        let mode = match self.fabric_mode {
            FabricMode::Full => "full",
            FabricMode::Light => "light",
        };
        let scope = match self.rowclone_bus_scope {
            BusScope::Global => "global",
            BusScope::PerVault => "per_vault",
        };
        format!(
            "mesh_x = {}\nmesh_y = {}\nmesh_z = {}\nslots_per_window = {}\n\
             link_width_bits = {}\nslots_per_window_max = {}\nfabric_mode = {}\n\
             policy = {}\nnom_clock_ratio = {}/{}\nt_rcd = {}\nt_cas = {}\nt_rp = {}\n\
             row_bytes = {}\nrows_per_subarray = {}\nbank_bytes = {}\n\
             offchip_latency_cycles = {}\noffchip_bytes_per_cycle = {}\n\
             internal_bus_bytes_per_cycle = {}\nrowclone_bus_scope = {}\n\
             rowclone_intra_cycles_per_row = {}\nlisa_cycles_per_row = {}\n\
             coherence_penalty_cycles = {}\ncycle_cap = {}\nblock_bytes = {}\n\
             workload_preset = {}\nworkload_requests = {}\nworkload_payload_bytes = {}\n\
             workload_mean_gap = {}\nworkload_same_vault_frac = {}\n\
             workload_row_reuse_frac = {}\nseed = {}\n",
            self.mesh_x,
            self.mesh_y,
            self.mesh_z,
            self.slots_per_window,
            self.link_width_bits,
            self.slots_per_window_max,
            mode,
            self.policy.name(),
            self.nom_clock_num,
            self.nom_clock_den,
            self.t_rcd,
            self.t_cas,
            self.t_rp,
            self.row_bytes,
            self.rows_per_subarray,
            self.bank_bytes,
            self.offchip_latency_cycles,
            self.offchip_bytes_per_cycle,
            self.internal_bus_bytes_per_cycle,
            scope,
            self.rowclone_intra_cycles_per_row,
            self.lisa_cycles_per_row,
            self.coherence_penalty_cycles,
            self.cycle_cap,
            self.block_bytes,
            self.workload_preset,
            self.workload_requests,
            self.workload_payload_bytes,
            self.workload_mean_gap,
            self.workload_same_vault_frac,
            self.workload_row_reuse_frac,
            self.seed,
        )
    }

    /// Fields that must agree between configs compared on one trace:
    /// everything that shapes the machine's address space or the workload.
    pub fn comparable_key(&self) -> String {
        format!(
            "{}x{}x{} rows={} bank={} block={} subarray={}",
            self.mesh_x,
            self.mesh_y,
            self.mesh_z,
            self.row_bytes,
            self.bank_bytes,
            self.block_bytes,
            self.rows_per_subarray
        )
    }
}

/// Accept "1", "0.75", "0.5", or "num/den" forms for the clock ratio.
fn parse_ratio(s: &str) -> std::result::Result<(u32, u32), String> {
    if let Some((n, d)) = s.split_once('/') {
        let n: u32 = n.trim().parse().map_err(|_| format!("invalid ratio '{s}'"))?;
        let d: u32 = d.trim().parse().map_err(|_| format!("invalid ratio '{s}'"))?;
        if d == 0 {
            return Err(format!("invalid ratio '{s}'"));
        }
        return Ok(reduce(n, d));
    }
    let v: f64 = s.parse().map_err(|_| format!("invalid ratio '{s}'"))?;
    if !(v > 0.0 && v <= 1.0) {
        return Err(format!("ratio '{s}' must be in (0, 1]"));
    }
    let den = 10_000u32;
    let num = (v * den as f64).round() as u32;
    Ok(reduce(num, den))
}

fn reduce(n: u32, d: u32) -> (u32, u32) {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(n, d);
    (n / g, d / g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = SimConfig::parse(
            "# comment line\n\
             policy = rowclone\n\
             mesh_z = 2   # trailing comment\n\
             nom_clock_ratio = 0.75\n\
             \n\
             seed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.policy, CopyPolicy::RowClone);
        assert_eq!(cfg.mesh_z, 2);
        assert_eq!((cfg.nom_clock_num, cfg.nom_clock_den), (3, 4));
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(SimConfig::parse("mesh_q = 3\n").is_err());
        assert!(SimConfig::parse("mesh_x = banana\n").is_err());
        assert!(SimConfig::parse("slots_per_window = 99\n").is_err());
        assert!(SimConfig::parse("policy = teleport\n").is_err());
        assert!(SimConfig::parse("nom_clock_ratio = 1.5\n").is_err());
        assert!(SimConfig::parse("mesh_z = 5\n").is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let mut cfg = SimConfig::default();
        cfg.policy = CopyPolicy::Conventional;
        cfg.fabric_mode = FabricMode::Light;
        cfg.nom_clock_num = 1;
        cfg.nom_clock_den = 2;
        cfg.workload_mean_gap = 2.5;
        let parsed = SimConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn ratio_forms() {
        assert_eq!(parse_ratio("1").unwrap(), (1, 1));
        assert_eq!(parse_ratio("0.75").unwrap(), (3, 4));
        assert_eq!(parse_ratio("0.5").unwrap(), (1, 2));
        assert_eq!(parse_ratio("3/4").unwrap(), (3, 4));
        assert!(parse_ratio("0").is_err());
    }
}
