//! Synthetic traffic generation and trace files.
//!
//! A trace is a list of timed records, one per request. Built-in presets
//! reproduce file-copy-heavy mixes at 20/40/60% inter-bank copy traffic
//! plus a fork-style mix dominated by page copies. Traces render to a
//! plain text format and load back identically:
//!
//! ```text
//! # comment
//! <cycle> <CLASS> <src-hex> [<dst-hex>] <bytes>
//! ```
//!
//! with CLASS one of COPY, ICOPY, INIT, READ, WRITE; COPY and ICOPY carry
//! the destination address.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::dram::AddressMap;
use crate::engines::{Op, Request};
use crate::topology::{BankId, Cycle};
use crate::{Error, Result};

/// Fractions of the four traffic classes; must sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficMix {
    pub inter_copy: f64,
    pub intra_copy: f64,
    pub init: f64,
    pub regular: f64,
}

impl TrafficMix {
    /// Named presets. The fileCopy presets put the stated fraction on
    /// inter-bank copies and split the rest equally; fork is mostly bulk
    /// page copies.
    pub fn preset(name: &str) -> Result<TrafficMix> {
        let mix = match name {
            "fileCopy20" => TrafficMix::file_copy(0.20),
            "fileCopy40" => TrafficMix::file_copy(0.40),
            "fileCopy60" => TrafficMix::file_copy(0.60),
            "fork" => TrafficMix { inter_copy: 0.55, intra_copy: 0.25, init: 0.10, regular: 0.10 },
            other => {
                return Err(Error::Config(format!("unknown workload preset \"{other}\"")));
            }
        };
        Ok(mix)
    }

    fn file_copy(inter: f64) -> TrafficMix {
        let rest = (1.0 - inter) / 3.0;
        TrafficMix { inter_copy: inter, intra_copy: rest, init: rest, regular: rest }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.inter_copy, self.intra_copy, self.init, self.regular];
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Config("mix fractions must lie in [0, 1]".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mix fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordClass {
    Copy,
    IntraCopy,
    Init,
    Read,
    Write,
}

impl RecordClass {
    pub fn name(self) -> &'static str {
        match self {
            RecordClass::Copy => "COPY",
            RecordClass::IntraCopy => "ICOPY",
            RecordClass::Init => "INIT",
            RecordClass::Read => "READ",
            RecordClass::Write => "WRITE",
        }
    }

    fn parse(s: &str) -> Option<RecordClass> {
        Some(match s {
            "COPY" => RecordClass::Copy,
            "ICOPY" => RecordClass::IntraCopy,
            "INIT" => RecordClass::Init,
            "READ" => RecordClass::Read,
            "WRITE" => RecordClass::Write,
            _ => return None,
        })
    }

    fn has_dst(self) -> bool {
        matches!(self, RecordClass::Copy | RecordClass::IntraCopy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: Cycle,
    pub class: RecordClass,
    pub src: u64,
    pub dst: Option<u64>,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// Generate the trace named by the config's preset.
    pub fn generate(cfg: &SimConfig) -> Result<Trace> {
        let mix = TrafficMix::preset(&cfg.workload_preset)?;
        Trace::generate_with_mix(cfg, &mix)
    }

    pub fn generate_with_mix(cfg: &SimConfig, mix: &TrafficMix) -> Result<Trace> {
        mix.validate()?;
        let map = AddressMap::new(cfg);
        let dims = cfg.dims();
        let banks = dims.bank_count() as u64;
        let rows = cfg.rows_per_bank();
        let block = cfg.block_bytes as u64;
        let payload = cfg.workload_payload_bytes as u64;
        if payload == 0 || payload % block != 0 || payload > cfg.row_bytes as u64 {
            return Err(Error::Config(format!(
                "workload payload of {payload} bytes must be a positive block multiple within one row"
            )));
        }
        let col_positions = (cfg.row_bytes as u64 - payload) / block + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut at = 0f64;
        let mut recent: Vec<(BankId, u64)> = Vec::new();
        let mut records = Vec::with_capacity(cfg.workload_requests as usize);
        for _ in 0..cfg.workload_requests {
            // Exponential gaps give a memoryless arrival stream whose
            // intensity is the configured mean gap.
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            at += -cfg.workload_mean_gap * u.ln();
            let cycle = at as Cycle;

            let pick: f64 = rng.gen();
            let (class, src, dst, bytes) = if pick < mix.inter_copy {
                let src_bank = rng.gen_range(0..banks) as BankId;
                let dst_bank = if banks > 1 && rng.gen::<f64>() < cfg.workload_same_vault_frac {
                    other_bank_in_vault(&map, src_bank, &mut rng)
                } else {
                    let mut b = rng.gen_range(0..banks) as BankId;
                    while b == src_bank {
                        b = rng.gen_range(0..banks) as BankId;
                    }
                    b
                };
                let src_row = rng.gen_range(0..rows);
                let dst_row = rng.gen_range(0..rows);
                let col = rng.gen_range(0..col_positions) * block;
                (
                    RecordClass::Copy,
                    map.encode(src_bank, src_row, col as u32),
                    Some(map.encode(dst_bank, dst_row, col as u32)),
                    payload,
                )
            } else if pick < mix.inter_copy + mix.intra_copy {
                let bank = rng.gen_range(0..banks) as BankId;
                let src_row = rng.gen_range(0..rows);
                // Half the in-bank copies stay inside the source subarray,
                // half cross to another one.
                let sub = cfg.rows_per_subarray as u64;
                let dst_row = if rng.gen::<f64>() < 0.5 || rows <= sub {
                    let base = src_row / sub * sub;
                    let span = sub.min(rows - base);
                    let mut r = base + rng.gen_range(0..span);
                    while r == src_row {
                        r = base + rng.gen_range(0..span);
                    }
                    r
                } else {
                    let mut r = rng.gen_range(0..rows);
                    while r / sub == src_row / sub {
                        r = rng.gen_range(0..rows);
                    }
                    r
                };
                let col = rng.gen_range(0..col_positions) * block;
                (
                    RecordClass::IntraCopy,
                    map.encode(bank, src_row, col as u32),
                    Some(map.encode(bank, dst_row, col as u32)),
                    payload,
                )
            } else if pick < mix.inter_copy + mix.intra_copy + mix.init {
                let bank = rng.gen_range(0..banks) as BankId;
                let row = rng.gen_range(0..rows);
                let col = rng.gen_range(0..col_positions) * block;
                (RecordClass::Init, map.encode(bank, row, col as u32), None, payload)
            } else {
                // Regular single-block accesses with tunable row reuse.
                let (bank, row) =
                    if !recent.is_empty() && rng.gen::<f64>() < cfg.workload_row_reuse_frac {
                        recent[rng.gen_range(0..recent.len())]
                    } else {
                        (rng.gen_range(0..banks) as BankId, rng.gen_range(0..rows))
                    };
                let col = rng.gen_range(0..cfg.row_bytes as u64 / block) * block;
                let class =
                    if rng.gen::<bool>() { RecordClass::Read } else { RecordClass::Write };
                recent.push((bank, row));
                if recent.len() > 64 {
                    recent.remove(0);
                }
                (class, map.encode(bank, row, col as u32), None, block)
            };
            records.push(TraceRecord { cycle, class, src, dst, bytes });
        }
        Ok(Trace { records })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            match r.dst {
                Some(d) => {
                    writeln!(out, "{} {} {:#010x} {:#010x} {}", r.cycle, r.class.name(), r.src, d, r.bytes)
                }
                None => writeln!(out, "{} {} {:#010x} {}", r.cycle, r.class.name(), r.src, r.bytes),
            }
            .expect("string write");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace> {
        let mut records = Vec::new();
        let mut last_cycle = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| Error::Trace { line, msg };
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut tok = t.split_whitespace();
            let cycle: Cycle = tok
                .next()
                .ok_or_else(|| err("missing cycle".into()))?
                .parse()
                .map_err(|e| err(format!("bad cycle: {e}")))?;
            if cycle < last_cycle {
                return Err(err(format!("cycle {cycle} goes backwards")));
            }
            last_cycle = cycle;
            let class_tok = tok.next().ok_or_else(|| err("missing class".into()))?;
            let class = RecordClass::parse(class_tok)
                .ok_or_else(|| err(format!("unknown class \"{class_tok}\"")))?;
            let src = parse_hex(tok.next().ok_or_else(|| err("missing source address".into()))?)
                .map_err(&err)?;
            let dst = if class.has_dst() {
                Some(
                    parse_hex(
                        tok.next().ok_or_else(|| err("missing destination address".into()))?,
                    )
                    .map_err(&err)?,
                )
            } else {
                None
            };
            let bytes: u64 = tok
                .next()
                .ok_or_else(|| err("missing byte count".into()))?
                .parse()
                .map_err(|e| err(format!("bad byte count: {e}")))?;
            if let Some(extra) = tok.next() {
                return Err(err(format!("unexpected trailing token \"{extra}\"")));
            }
            records.push(TraceRecord { cycle, class, src, dst, bytes });
        }
        Ok(Trace { records })
    }

    pub fn load(path: &Path) -> Result<Trace> {
        Trace::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.render())?)
    }

    /// Decode into engine requests, ids numbered by position.
    pub fn to_requests(&self, map: &AddressMap) -> Result<Vec<Request>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let src = map.decode(r.src)?;
                let op = match r.class {
                    RecordClass::Read => Op::Read { loc: src, bytes: r.bytes },
                    RecordClass::Write => Op::Write { loc: src, bytes: r.bytes },
                    RecordClass::Init => Op::Init { loc: src, bytes: r.bytes },
                    RecordClass::Copy | RecordClass::IntraCopy => {
                        let dst = map.decode(r.dst.expect("copy record without destination"))?;
                        Op::Copy { src, dst, bytes: r.bytes }
                    }
                };
                Ok(Request { id: i as u64, arrival: r.cycle, op })
            })
            .collect()
    }
}

fn other_bank_in_vault(map: &AddressMap, bank: BankId, rng: &mut ChaCha8Rng) -> BankId {
    // Vault siblings share the address slot group; walk the 8 in-vault
    // positions and pick one that differs.
    let base = map.encode(bank, 0, 0) / (map.rows_per_bank() * map.row_bytes() as u64) / 8 * 8;
    loop {
        let slot = base + rng.gen_range(0..8u64);
        let addr = slot * map.rows_per_bank() * map.row_bytes() as u64;
        if let Ok(loc) = map.decode(addr) {
            if loc.bank != bank {
                return loc.bank;
            }
        }
    }
}

fn parse_hex(s: &str) -> std::result::Result<u64, String> {
    let body = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u64::from_str_radix(body, 16).map_err(|e| format!("bad address \"{s}\": {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(t: &Trace) -> [usize; 5] {
        let mut n = [0usize; 5];
        for r in &t.records {
            let i = match r.class {
                RecordClass::Copy => 0,
                RecordClass::IntraCopy => 1,
                RecordClass::Init => 2,
                RecordClass::Read => 3,
                RecordClass::Write => 4,
            };
            n[i] += 1;
        }
        n
    }

    #[test]
    fn file_copy_60_hits_its_inter_bank_share() {
        let mut cfg = SimConfig::default();
        cfg.workload_preset = "fileCopy60".into();
        cfg.workload_requests = 10_000;
        let t = Trace::generate(&cfg).unwrap();
        let n = counts(&t);
        assert!((5700..=6300).contains(&n[0]), "inter-bank copies: {}", n[0]);
    }

    #[test]
    fn class_frequencies_track_the_mix() {
        let mut cfg = SimConfig::default();
        cfg.workload_preset = "fileCopy40".into();
        cfg.workload_requests = 10_000;
        let t = Trace::generate(&cfg).unwrap();
        let n = counts(&t);
        let total = t.records.len() as f64;
        let frac = [n[0] as f64, n[1] as f64, n[2] as f64, (n[3] + n[4]) as f64]
            .map(|c| c / total);
        for (got, want) in frac.iter().zip([0.40, 0.20, 0.20, 0.20]) {
            assert!((got - want).abs() < 0.03, "class at {got}, mix says {want}");
        }
    }

    #[test]
    fn all_regular_mix_has_no_copies() {
        let cfg = SimConfig::default();
        let mix = TrafficMix { inter_copy: 0.0, intra_copy: 0.0, init: 0.0, regular: 1.0 };
        let t = Trace::generate_with_mix(&cfg, &mix).unwrap();
        let n = counts(&t);
        assert_eq!(n[0] + n[1] + n[2], 0);
        assert_eq!(n[3] + n[4], t.records.len());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let mut cfg = SimConfig::default();
        cfg.workload_requests = 500;
        let a = Trace::generate(&cfg).unwrap();
        let b = Trace::generate(&cfg).unwrap();
        assert_eq!(a.render(), b.render());
        cfg.seed = 2;
        let c = Trace::generate(&cfg).unwrap();
        assert_ne!(a.render(), c.render());
    }

    #[test]
    fn records_are_well_formed() {
        let mut cfg = SimConfig::default();
        cfg.workload_requests = 2_000;
        cfg.workload_same_vault_frac = 0.3;
        let map = AddressMap::new(&cfg);
        let t = Trace::generate(&cfg).unwrap();
        let mut last = 0;
        for r in &t.records {
            assert!(r.cycle >= last);
            last = r.cycle;
            let src = map.decode(r.src).unwrap();
            assert_eq!(src.col as u64 % cfg.block_bytes as u64, 0);
            match r.class {
                RecordClass::Copy => {
                    let dst = map.decode(r.dst.unwrap()).unwrap();
                    assert_ne!(src.bank, dst.bank);
                    assert!(src.col as u64 + r.bytes <= cfg.row_bytes as u64);
                }
                RecordClass::IntraCopy => {
                    let dst = map.decode(r.dst.unwrap()).unwrap();
                    assert_eq!(src.bank, dst.bank);
                    assert_ne!(src.row, dst.row);
                }
                RecordClass::Init => {
                    assert!(src.col as u64 + r.bytes <= cfg.row_bytes as u64);
                }
                RecordClass::Read | RecordClass::Write => {
                    assert_eq!(r.bytes, cfg.block_bytes as u64);
                }
            }
        }
        // Requests decode and admit cleanly.
        let reqs = t.to_requests(&map).unwrap();
        assert_eq!(reqs.len(), t.records.len());
    }

    #[test]
    fn intra_copies_split_across_subarray_boundaries() {
        let mut cfg = SimConfig::default();
        cfg.workload_requests = 4_000;
        let map = AddressMap::new(&cfg);
        let t = Trace::generate(&cfg).unwrap();
        let (mut same, mut cross) = (0, 0);
        for r in &t.records {
            if r.class == RecordClass::IntraCopy {
                let src = map.decode(r.src).unwrap();
                let dst = map.decode(r.dst.unwrap()).unwrap();
                if map.same_subarray(src, dst) {
                    same += 1;
                } else {
                    cross += 1;
                }
            }
        }
        assert!(same > 0 && cross > 0, "same {same}, cross {cross}");
    }

    #[test]
    fn round_trip_through_text_is_identity() {
        let mut cfg = SimConfig::default();
        cfg.workload_requests = 300;
        let t = Trace::generate(&cfg).unwrap();
        assert_eq!(Trace::parse(&t.render()).unwrap(), t);
    }

    #[test]
    fn parses_the_documented_example_line() {
        let t = Trace::parse("1000 COPY 0x0000000 0x4000000 4096\n").unwrap();
        assert_eq!(
            t.records,
            vec![TraceRecord {
                cycle: 1000,
                class: RecordClass::Copy,
                src: 0,
                dst: Some(0x400_0000),
                bytes: 4096,
            }]
        );
    }

    #[test]
    fn empty_and_comment_only_files_yield_empty_traces() {
        assert_eq!(Trace::parse("").unwrap().records.len(), 0);
        assert_eq!(Trace::parse("# nothing\n\n# here\n").unwrap().records.len(), 0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("5 COPY 0x0 0x40 64\n4 READ 0x0 64\n", 2, "backwards"),
            ("1 BLORT 0x0 64\n", 1, "unknown class"),
            ("# ok\n1 READ zzz 64\n", 2, "bad address"),
            ("1 COPY 0x0 64\n", 1, "missing byte count"),
            ("1 READ 0x0 64 extra\n", 1, "trailing"),
        ];
        for (text, want_line, want_msg) in cases {
            match Trace::parse(text) {
                Err(Error::Trace { line, msg }) => {
                    assert_eq!(line, want_line, "{text:?}");
                    assert!(msg.contains(want_msg), "{msg:?} missing {want_msg:?}");
                }
                other => panic!("expected trace error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_unknown_presets_and_bad_mixes() {
        assert!(TrafficMix::preset("fileCopy99").is_err());
        let bad = TrafficMix { inter_copy: 0.9, intra_copy: 0.3, init: 0.0, regular: 0.0 };
        assert!(bad.validate().is_err());
    }
}
