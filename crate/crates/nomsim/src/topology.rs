//! Bank mesh geometry: coordinates, vault grouping, and shortest-path DAGs.
//!
//! Banks of the stacked DRAM form an `X x Y x Z` grid. Within a layer the
//! grid is linearized x-major, so `bank = x + X*y + X*Y*z`. A vault is a
//! vertical column of bank slices two banks wide: every bank with the same
//! `(x / 2, y)` belongs to the same vault, regardless of layer.

/// Logic-clock cycle count.
pub type Cycle = u64;

/// Linear bank index, x-major within a layer, layers stacked.
pub type BankId = u16;

/// Vault index (one vertical controller column of banks).
pub type VaultId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeshDims {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

impl MeshDims {
    pub fn new(x: u8, y: u8, z: u8) -> Self {
        assert!(x >= 1 && y >= 1 && z >= 1, "mesh dimensions must be >= 1");
        MeshDims { x, y, z }
    }

    pub fn bank_count(&self) -> u16 {
        self.x as u16 * self.y as u16 * self.z as u16
    }

    /// Vaults tile the XY plane in 2x1 slices; layers do not add vaults.
    pub fn vault_count(&self) -> u16 {
        self.vaults_x() as u16 * self.y as u16
    }

    fn vaults_x(&self) -> u8 {
        self.x.div_ceil(2)
    }

    pub fn contains(&self, c: BankCoord) -> bool {
        c.x < self.x && c.y < self.y && c.z < self.z
    }
}

impl Default for MeshDims {
    fn default() -> Self {
        MeshDims::new(8, 8, 4)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankCoord {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

impl BankCoord {
    pub fn new(x: u8, y: u8, z: u8) -> Self {
        BankCoord { x, y, z }
    }

    pub fn manhattan(&self, other: &BankCoord) -> u8 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y) + self.z.abs_diff(other.z)
    }
}

/// Router ports in tie-break order. `Local` is the bank-side port: data
/// enters the mesh through it at the source and leaves through it at the
/// destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Port {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
    Local,
}

pub const PORT_COUNT: usize = 7;

/// Mesh direction ports in tie-break order (excludes `Local`).
pub const DIR_PORTS: [Port; 6] = [
    Port::XPlus,
    Port::XMinus,
    Port::YPlus,
    Port::YMinus,
    Port::ZPlus,
    Port::ZMinus,
];

impl Port {
    pub fn index(self) -> usize {
        match self {
            Port::XPlus => 0,
            Port::XMinus => 1,
            Port::YPlus => 2,
            Port::YMinus => 3,
            Port::ZPlus => 4,
            Port::ZMinus => 5,
            Port::Local => 6,
        }
    }

    pub fn from_index(i: usize) -> Option<Port> {
        match i {
            0 => Some(Port::XPlus),
            1 => Some(Port::XMinus),
            2 => Some(Port::YPlus),
            3 => Some(Port::YMinus),
            4 => Some(Port::ZPlus),
            5 => Some(Port::ZMinus),
            6 => Some(Port::Local),
            _ => None,
        }
    }

    /// Port a flit sent out of `self` arrives on at the neighbouring router.
    pub fn opposite(self) -> Port {
        match self {
            Port::XPlus => Port::XMinus,
            Port::XMinus => Port::XPlus,
            Port::YPlus => Port::YMinus,
            Port::YMinus => Port::YPlus,
            Port::ZPlus => Port::ZMinus,
            Port::ZMinus => Port::ZPlus,
            Port::Local => panic!("Local port has no opposite"),
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Port::ZPlus | Port::ZMinus)
    }

    /// Coordinate one hop from `c` through this port, if it stays on the mesh.
    pub fn step(self, c: BankCoord, dims: &MeshDims) -> Option<BankCoord> {
        let (x, y, z) = (c.x as i16, c.y as i16, c.z as i16);
        let (nx, ny, nz) = match self {
            Port::XPlus => (x + 1, y, z),
            Port::XMinus => (x - 1, y, z),
            Port::YPlus => (x, y + 1, z),
            Port::YMinus => (x, y - 1, z),
            Port::ZPlus => (x, y, z + 1),
            Port::ZMinus => (x, y, z - 1),
            Port::Local => return None,
        };
        if nx < 0 || ny < 0 || nz < 0 {
            return None;
        }
        let n = BankCoord::new(nx as u8, ny as u8, nz as u8);
        dims.contains(n).then_some(n)
    }
}

pub fn bank_of(c: BankCoord, dims: &MeshDims) -> BankId {
    debug_assert!(dims.contains(c));
    c.x as u16 + dims.x as u16 * c.y as u16 + dims.x as u16 * dims.y as u16 * c.z as u16
}

pub fn coord_of(bank: BankId, dims: &MeshDims) -> BankCoord {
    debug_assert!(bank < dims.bank_count());
    let per_layer = dims.x as u16 * dims.y as u16;
    let z = bank / per_layer;
    let rem = bank % per_layer;
    BankCoord::new((rem % dims.x as u16) as u8, (rem / dims.x as u16) as u8, z as u8)
}

/// Vault owning a bank: two x-adjacent columns of banks share one vault,
/// and the grouping is independent of the layer.
pub fn vault_of(c: BankCoord, dims: &MeshDims) -> VaultId {
    (c.x as u16 / 2) + dims.vaults_x() as u16 * c.y as u16
}

/// Index of a bank within its vault: slice slot in the low bit, layer above.
/// Fits the 3-bit bank-select field of a sideband programming word for the
/// default 2-banks-per-slice, 4-layer stack.
pub fn bank_in_vault(c: BankCoord) -> u8 {
    (c.x % 2) + 2 * c.z
}

/// How flits traverse the vertical dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FabricMode {
    /// Dedicated vertical mesh links; every hop, planar or vertical, costs
    /// one cycle.
    Full,
    /// No dedicated vertical links. A vertical segment of any length rides
    /// the vault's shared TSV bus and costs a single cycle.
    Light,
}

/// One forward edge of a shortest-path DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DagEdge {
    pub port: Port,
    pub to: usize,
}

#[derive(Clone, Debug)]
pub struct DagNode {
    pub coord: BankCoord,
    /// Hops from the source along any shortest path through this node.
    pub depth: u8,
    /// Productive out-edges in `Port` tie-break order.
    pub edges: Vec<DagEdge>,
}

/// DAG of all minimal-hop paths from `src` to `dst`, nodes in topological
/// (depth) order with node 0 the source and the last node the destination.
///
/// In `Light` mode all vertical distance is covered by one edge between the
/// source layer and the destination layer, placed at any point of the planar
/// rectangle, so a path's hop count is `dx + dy + 1` instead of
/// `dx + dy + dz`.
#[derive(Clone, Debug)]
pub struct PathDag {
    pub src: BankCoord,
    pub dst: BankCoord,
    pub mode: FabricMode,
    pub nodes: Vec<DagNode>,
}

impl PathDag {
    pub fn new(src: BankCoord, dst: BankCoord, mode: FabricMode, dims: &MeshDims) -> PathDag {
        assert!(src != dst, "path requires distinct endpoints");
        assert!(dims.contains(src) && dims.contains(dst));
        let mut dag = PathDag { src, dst, mode, nodes: Vec::new() };
        match mode {
            FabricMode::Full => dag.build_full(),
            FabricMode::Light => {
                if src.z == dst.z {
                    dag.build_full();
                } else {
                    dag.build_light();
                }
            }
        }
        dag
    }

    /// Hop count of every path in the DAG (depth of the destination node).
    pub fn hops(&self) -> u8 {
        self.nodes.last().unwrap().depth
    }

    fn productive_dirs(from: BankCoord, to: BankCoord) -> Vec<Port> {
        let mut dirs = Vec::with_capacity(3);
        if from.x < to.x {
            dirs.push(Port::XPlus);
        } else if from.x > to.x {
            dirs.push(Port::XMinus);
        }
        if from.y < to.y {
            dirs.push(Port::YPlus);
        } else if from.y > to.y {
            dirs.push(Port::YMinus);
        }
        if from.z < to.z {
            dirs.push(Port::ZPlus);
        } else if from.z > to.z {
            dirs.push(Port::ZMinus);
        }
        dirs.sort_by_key(|p| p.index());
        dirs
    }

    fn build_full(&mut self) {
        let (src, dst) = (self.src, self.dst);
        let mut coords = Vec::new();
        for x in src.x.min(dst.x)..=src.x.max(dst.x) {
            for y in src.y.min(dst.y)..=src.y.max(dst.y) {
                for z in src.z.min(dst.z)..=src.z.max(dst.z) {
                    coords.push(BankCoord::new(x, y, z));
                }
            }
        }
        coords.sort_by_key(|c| (c.manhattan(&src), *c));
        let index: std::collections::HashMap<BankCoord, usize> =
            coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        self.nodes = coords
            .iter()
            .map(|&coord| {
                let edges = Self::productive_dirs(coord, dst)
                    .into_iter()
                    .map(|port| {
                        let next = port.step(coord, &MeshDims::new(u8::MAX, u8::MAX, u8::MAX)).unwrap();
                        DagEdge { port, to: index[&next] }
                    })
                    .collect();
                DagNode { coord, depth: coord.manhattan(&src), edges }
            })
            .collect();
    }

    /// Light mode with a vertical component: two planar layers joined by
    /// single-cycle vertical edges at every rectangle point.
    fn build_light(&mut self) {
        let (src, dst) = (self.src, self.dst);
        let mut coords = Vec::new();
        for x in src.x.min(dst.x)..=src.x.max(dst.x) {
            for y in src.y.min(dst.y)..=src.y.max(dst.y) {
                coords.push(BankCoord::new(x, y, src.z));
                coords.push(BankCoord::new(x, y, dst.z));
            }
        }
        let depth_of = |c: &BankCoord| -> u8 {
            let planar = c.x.abs_diff(src.x) + c.y.abs_diff(src.y);
            planar + u8::from(c.z == dst.z)
        };
        coords.sort_by_key(|c| (depth_of(c), *c));
        let index: std::collections::HashMap<BankCoord, usize> =
            coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let vert_port = if dst.z > src.z { Port::ZPlus } else { Port::ZMinus };
        self.nodes = coords
            .iter()
            .map(|&coord| {
                let planar_dst = BankCoord::new(dst.x, dst.y, coord.z);
                let mut edges: Vec<DagEdge> = Self::productive_dirs(coord, planar_dst)
                    .into_iter()
                    .map(|port| {
                        let next = port.step(coord, &MeshDims::new(u8::MAX, u8::MAX, u8::MAX)).unwrap();
                        DagEdge { port, to: index[&next] }
                    })
                    .collect();
                if coord.z == src.z {
                    let over = BankCoord::new(coord.x, coord.y, dst.z);
                    edges.push(DagEdge { port: vert_port, to: index[&over] });
                    edges.sort_by_key(|e| e.port.index());
                }
                DagNode { coord, depth: depth_of(&coord), edges }
            })
            .collect();
    }

    /// Every path of the DAG as a port sequence, in lexicographic port
    /// order. Exponential in path length; meant for small meshes and oracle
    /// checks, not the simulation fast path.
    pub fn enumerate_paths(&self) -> Vec<Vec<Port>> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        self.walk(0, &mut prefix, &mut out);
        out
    }

    fn walk(&self, node: usize, prefix: &mut Vec<Port>, out: &mut Vec<Vec<Port>>) {
        if node == self.nodes.len() - 1 {
            out.push(prefix.clone());
            return;
        }
        for e in &self.nodes[node].edges {
            prefix.push(e.port);
            self.walk(e.to, prefix, out);
            prefix.pop();
        }
    }
}
