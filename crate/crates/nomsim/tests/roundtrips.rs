//! Roundtrip and storage properties: traces survive render/parse and
//! save/load, config files override exactly the keys they name, and the
//! payload store honours last-writer-wins at block granularity.

use std::collections::HashMap;

use nomsim::config::SimConfig;
use nomsim::dram::MemStore;
use nomsim::topology::{bank_of, coord_of, FabricMode, MeshDims};
use nomsim::workload::{RecordClass, Trace, TraceRecord};
use proptest::prelude::*;

const CLASSES: [RecordClass; 5] = [
    RecordClass::Copy,
    RecordClass::IntraCopy,
    RecordClass::Init,
    RecordClass::Read,
    RecordClass::Write,
];

/// Arbitrary well-formed traces: cycles never go backwards, and only the
/// copy classes carry a destination.
fn arb_records() -> impl Strategy<Value = Vec<TraceRecord>> {
    prop::collection::vec(
        (0u64..100, 0usize..CLASSES.len(), any::<u64>(), any::<u64>(), 1u64..1 << 20),
        0..64,
    )
    .prop_map(|raw| {
        let mut cycle = 0;
        raw.into_iter()
            .map(|(gap, class_ix, src, dst, bytes)| {
                cycle += gap;
                let class = CLASSES[class_ix];
                let dst = matches!(class, RecordClass::Copy | RecordClass::IntraCopy)
                    .then_some(dst);
                TraceRecord { cycle, class, src, dst, bytes }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn trace_survives_render_parse(records in arb_records()) {
        let trace = Trace { records };
        let back = Trace::parse(&trace.render()).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn bank_index_survives_coordinate_roundtrip(
        (x, y, z) in (1u8..=8, 1u8..=8, 1u8..=4),
        pick in any::<u16>(),
    ) {
        let dims = MeshDims::new(x, y, z);
        let bank = pick % dims.bank_count();
        prop_assert_eq!(bank_of(coord_of(bank, &dims), &dims), bank);
    }

    #[test]
    fn store_reads_back_last_writer(
        ops in prop::collection::vec((0u16..4, 0u64..32, any::<u8>(), 1usize..=2), 1..40),
    ) {
        let bb = 64u32;
        let mut store = MemStore::new(bb);
        let mut model: HashMap<(u16, u64), Vec<u8>> = HashMap::new();
        for (bank, block, seed, nblocks) in ops {
            let data: Vec<u8> =
                (0..bb as usize * nblocks).map(|i| seed ^ i as u8).collect();
            store.write(bank, block * bb as u64, &data);
            for k in 0..nblocks as u64 {
                let chunk = &data[k as usize * bb as usize..][..bb as usize];
                model.insert((bank, block + k), chunk.to_vec());
            }
        }
        for ((bank, block), want) in &model {
            prop_assert_eq!(&store.read(*bank, block * bb as u64, bb as u64), want);
        }
        let never_written = store.read(9, 0, bb as u64);
        prop_assert_eq!(never_written, vec![0u8; bb as usize]);
    }
}

#[test]
fn trace_save_load_roundtrip() {
    let mut cfg = SimConfig::default();
    cfg.workload_requests = 300;
    let trace = Trace::generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copies.trace");
    trace.save(&path).unwrap();
    assert_eq!(Trace::load(&path).unwrap(), trace);
}

#[test]
fn config_file_overrides_only_named_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.cfg");
    std::fs::write(
        &path,
        "# small mesh, slow fabric\nmesh_x = 4\nmesh_y = 4\nmesh_z = 2\n\
         fabric_mode = light\nnom_clock_ratio = 3/4\nseed = 7\n",
    )
    .unwrap();
    let cfg = SimConfig::load(&path).unwrap();
    assert_eq!((cfg.mesh_x, cfg.mesh_y, cfg.mesh_z), (4, 4, 2));
    assert_eq!(cfg.fabric_mode, FabricMode::Light);
    assert_eq!((cfg.nom_clock_num, cfg.nom_clock_den), (3, 4));
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.slots_per_window, SimConfig::default().slots_per_window);
}
