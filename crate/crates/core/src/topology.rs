//! Hardware description of a hexagonal photonic mesh.
//!
//! A mesh is a patch of hexagonal cells. Every cell edge carries one
//! programmable unit cell (PUC), a 2x2 coupler with four optical ports:
//! `A1`/`A2` at one end of the edge and `B1`/`B2` at the other. Track 1
//! ports (`A1`, `B1`) face one side of the edge, track 2 ports (`A2`, `B2`)
//! the other. Fixed waveguides ([`Link`]s) join PUC ports around cell
//! vertices; at the mesh boundary, free ports become external I/O
//! ([`ExternalPort`]) or are bridged by bend waveguides.
//!
//! Topologies are produced by [`generate_hex_mesh`], shipped as JSON (see
//! [`save_topology`]/[`load_topology`]), and validated structurally by
//! [`validate_topology`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Identifier of a PUC within one topology (contiguous from zero).
pub type PucId = u32;
/// Identifier of an external port within one topology (contiguous from zero).
pub type PortId = u32;
/// Identifier of a fixed waveguide link within one topology.
pub type LinkId = u32;

/// Version tag written to and required from topology files.
pub const TOPOLOGY_VERSION: u32 = 1;

/// Programmed state of a PUC.
///
/// `TunableCoupler(k)` routes the fraction `k` of the input power to the
/// cross output and `1 - k` to the bar output; `Bar` and `Cross` are the
/// `k = 0` and `k = 1` extremes held as discrete states. `Off` marks a PUC
/// that is not actuated: it passes no light.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub enum PucState {
    Bar,
    Cross,
    TunableCoupler(f64),
    Off,
}

impl PucState {
    /// Cross-coupled power fraction of this state, if it is actuated.
    pub fn cross_fraction(self) -> Option<f64> {
        match self {
            PucState::Bar => Some(0.0),
            PucState::Cross => Some(1.0),
            PucState::TunableCoupler(k) => Some(k),
            PucState::Off => None,
        }
    }
}

impl fmt::Display for PucState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PucState::Bar => write!(f, "bar"),
            PucState::Cross => write!(f, "cross"),
            PucState::TunableCoupler(k) => write!(f, "coupler({k:.6})"),
            PucState::Off => write!(f, "off"),
        }
    }
}

/// One of the four optical ports of a PUC.
///
/// The bar state couples `A1<->B1` and `A2<->B2`; the cross state couples
/// `A1<->B2` and `A2<->B1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
pub enum PortName {
    A1,
    A2,
    B1,
    B2,
}

impl PortName {
    /// All port names in index order.
    pub const ALL: [PortName; 4] = [PortName::A1, PortName::A2, PortName::B1, PortName::B2];

    /// Stable index of this port name (0..4).
    pub fn index(self) -> u32 {
        match self {
            PortName::A1 => 0,
            PortName::A2 => 1,
            PortName::B1 => 2,
            PortName::B2 => 3,
        }
    }

    /// Port reached from this one when the PUC is in the bar state.
    pub fn bar_peer(self) -> PortName {
        match self {
            PortName::A1 => PortName::B1,
            PortName::A2 => PortName::B2,
            PortName::B1 => PortName::A1,
            PortName::B2 => PortName::A2,
        }
    }

    /// Port reached from this one when the PUC is in the cross state.
    pub fn cross_peer(self) -> PortName {
        match self {
            PortName::A1 => PortName::B2,
            PortName::A2 => PortName::B1,
            PortName::B1 => PortName::A2,
            PortName::B2 => PortName::A1,
        }
    }
}

impl fmt::Display for PortName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PortName::A1 => "A1",
            PortName::A2 => "A2",
            PortName::B1 => "B1",
            PortName::B2 => "B2",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PortName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A1" => Ok(PortName::A1),
            "A2" => Ok(PortName::A2),
            "B1" => Ok(PortName::B1),
            "B2" => Ok(PortName::B2),
            other => Err(format!("unknown port name `{other}`")),
        }
    }
}

/// A specific port of a specific PUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
pub struct PucPort {
    pub puc: PucId,
    pub port: PortName,
}

impl PucPort {
    pub fn new(puc: PucId, port: PortName) -> Self {
        PucPort { puc, port }
    }
}

impl fmt::Display for PucPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.puc, self.port)
    }
}

/// A programmable unit cell and its physical attributes.
///
/// Positions use a half-unit integer lattice shared by PUCs and external
/// ports; `y` grows downward.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Puc {
    pub id: PucId,
    /// Insertion loss per traversal in dB (non-positive).
    pub il_db: f64,
    /// Relative imbalance contribution used by routing weights.
    pub bul: f64,
    /// Actuation power consumption in mW.
    pub power_mw: f64,
    /// Extinction of the unselected output in dB (positive).
    pub crosstalk_db: f64,
    pub position: (i32, i32),
}

/// A fixed (non-programmable) waveguide joining two PUC ports.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub a: PucPort,
    pub b: PucPort,
}

/// An external I/O port at the mesh boundary.
///
/// Boundary corners expose two free PUC ports each. The two external ports
/// of a corner (twins) share those free ports but list them in opposite
/// order: `joins[0]` is the stub the external fibre faces by default, and
/// `joins[1]` is the other corner stub reachable through the corner.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ExternalPort {
    pub id: PortId,
    pub joins: Vec<PucPort>,
    pub position: (i32, i32),
}

/// A complete mesh description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MeshTopology {
    #[serde(rename = "topology_version")]
    pub version: u32,
    pub pucs: Vec<Puc>,
    pub links: Vec<Link>,
    pub external_ports: Vec<ExternalPort>,
    /// External ports wired to the package; ascending, subset of all ports.
    pub usable_ports: Vec<PortId>,
}

/// Default physical attributes applied to every PUC by the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PucDefaults {
    pub il_db: f64,
    pub bul: f64,
    pub power_mw: f64,
    pub crosstalk_db: f64,
}

impl Default for PucDefaults {
    fn default() -> Self {
        PucDefaults {
            il_db: -0.215,
            bul: 1.0,
            power_mw: 1.0,
            crosstalk_db: 25.0,
        }
    }
}

/// One structural rule violation found by [`validate_topology`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// The entity the rule applies to, e.g. `puc 3` or `link 7`.
    pub entity: String,
    /// Human-readable statement of the violated rule.
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Errors raised by topology generation, I/O, and validation.
#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("mesh dimensions must be at least 1x1 (got {rows}x{cols})")]
    EmptyMesh { rows: u32, cols: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported topology version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid topology: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    let mut text = shown.join("; ");
    if violations.len() > 3 {
        text.push_str(&format!("; and {} more", violations.len() - 3));
    }
    text
}

impl MeshTopology {
    /// The 72-PUC reference mesh with 28 usable ports, as shipped with the
    /// crate (5x3 generator patch, default PUC attributes).
    pub fn mesh72() -> MeshTopology {
        generate_hex_mesh(5, 3, &PucDefaults::default())
            .expect("embedded reference mesh parameters are valid")
    }

    pub fn puc(&self, id: PucId) -> Option<&Puc> {
        self.pucs.get(id as usize)
    }

    pub fn external_port(&self, id: PortId) -> Option<&ExternalPort> {
        self.external_ports.get(id as usize)
    }

    pub fn is_usable(&self, id: PortId) -> bool {
        self.usable_ports.binary_search(&id).is_ok()
    }

    /// Mean insertion loss over all PUCs, in dB.
    pub fn mean_il_db(&self) -> f64 {
        if self.pucs.is_empty() {
            return 0.0;
        }
        self.pucs.iter().map(|p| p.il_db).sum::<f64>() / self.pucs.len() as f64
    }

    /// The `n` leftmost and `n` rightmost usable I/O sites, each listed
    /// top to bottom — the canonical port sets for an N x N switch across
    /// the mesh.
    ///
    /// Twin ports share a boundary corner (and its pair of waveguide
    /// stubs), so flanks pick one port per corner: the lowest-numbered
    /// usable twin. Returns `None` when either side has fewer than `n`
    /// distinct corners.
    pub fn flank_ports(&self, n: usize) -> Option<(Vec<PortId>, Vec<PortId>)> {
        let mut corners: BTreeMap<(i32, i32), PortId> = BTreeMap::new();
        for &id in &self.usable_ports {
            let (x, y) = self.external_ports[id as usize].position;
            corners.entry((x, y)).or_insert(id);
        }
        if corners.len() < 2 * n {
            return None;
        }
        let mut by_x: Vec<(&(i32, i32), &PortId)> = corners.iter().collect();
        by_x.sort_by_key(|&(&(x, y), _)| (x, y));
        let mut left: Vec<((i32, i32), PortId)> =
            by_x[..n].iter().map(|&(&pos, &id)| (pos, id)).collect();
        let mut right: Vec<((i32, i32), PortId)> = by_x[by_x.len() - n..]
            .iter()
            .map(|&(&pos, &id)| (pos, id))
            .collect();
        left.sort_by_key(|&((x, y), _)| (y, x));
        right.sort_by_key(|&((x, y), _)| (y, x));
        Some((
            left.into_iter().map(|(_, id)| id).collect(),
            right.into_iter().map(|(_, id)| id).collect(),
        ))
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Lattice vertex as `(x, y)` with `y` growing downward.
type Vertex = (i32, i32);

/// Offsets from a cell centre to its six vertices, in the fixed walk order
/// north, north-east, south-east, south, south-west, north-west.
const VERTEX_OFFSETS: [(i32, i32); 6] = [(0, -2), (1, -1), (1, 1), (0, 2), (-1, 1), (-1, -1)];

/// Sort key placing vertices top-to-bottom, then left-to-right.
fn vkey(v: Vertex) -> (i32, i32) {
    (v.1, v.0)
}

fn cell_center(q: i32, r: i32) -> (i32, i32) {
    (2 * q + r, 3 * r)
}

fn cell_vertices(q: i32, r: i32) -> [Vertex; 6] {
    let (cx, cy) = cell_center(q, r);
    let mut out = [(0, 0); 6];
    for (i, (dx, dy)) in VERTEX_OFFSETS.iter().enumerate() {
        out[i] = (cx + dx, cy + dy);
    }
    out
}

struct EdgeRec {
    /// Endpoint with the smaller [`vkey`].
    a: Vertex,
    b: Vertex,
    /// Bordering cells as `(r, q)`, kept sorted; one entry on the boundary.
    cells: Vec<(i32, i32)>,
}

/// Generates a hexagonal mesh patch.
///
/// `rows` is the number of cell rows; row `i` contains
/// `cols + min(i, rows - 1 - i)` cells, so the patch widens towards the
/// middle row and `generate_hex_mesh(5, 3, ..)` yields the 19-cell, 72-PUC
/// reference mesh. Every cell edge becomes one PUC with the given default
/// attributes.
///
/// External ports are numbered counter-clockwise (with the y axis pointing
/// up) around the boundary starting from the top-left corner; each convex
/// corner carries two twin ports. Ports whose default stub sits on the
/// bottom boundary row are excluded from `usable_ports`: that edge of the
/// die is reserved for electrical packaging and is not fibre-coupled.
pub fn generate_hex_mesh(
    rows: u32,
    cols: u32,
    defaults: &PucDefaults,
) -> Result<MeshTopology, TopologyError> {
    if rows == 0 || cols == 0 {
        return Err(TopologyError::EmptyMesh { rows, cols });
    }

    // Cell centres of the patch, as (r, q) axial coordinates.
    let peak = (rows as i32 - 1) / 2;
    let mut cells: Vec<(i32, i32)> = Vec::new();
    for r in 0..rows as i32 {
        let len = cols as i32 + (r.min(rows as i32 - 1 - r));
        let q0 = -(r.min(peak));
        for q in q0..q0 + len {
            cells.push((r, q));
        }
    }

    // Collect unique edges; each edge is one PUC. BTreeMap order over the
    // canonical endpoint pair fixes PUC numbering.
    let mut edges: BTreeMap<((i32, i32), (i32, i32)), EdgeRec> = BTreeMap::new();
    for &(r, q) in &cells {
        let verts = cell_vertices(q, r);
        for i in 0..6 {
            let u = verts[i];
            let v = verts[(i + 1) % 6];
            let (a, b) = if vkey(u) <= vkey(v) { (u, v) } else { (v, u) };
            let rec = edges.entry((vkey(a), vkey(b))).or_insert(EdgeRec {
                a,
                b,
                cells: Vec::new(),
            });
            if !rec.cells.contains(&(r, q)) {
                rec.cells.push((r, q));
                rec.cells.sort();
            }
        }
    }

    let edge_ids: BTreeMap<((i32, i32), (i32, i32)), PucId> = edges
        .keys()
        .enumerate()
        .map(|(i, k)| (*k, i as PucId))
        .collect();
    let edge_list: Vec<&EdgeRec> = edges.values().collect();
    let edge_id_of = |u: Vertex, v: Vertex| -> PucId {
        let (a, b) = if vkey(u) <= vkey(v) { (u, v) } else { (v, u) };
        edge_ids[&(vkey(a), vkey(b))]
    };

    // Track 1 of an edge faces its first bordering cell; track 2 faces the
    // second cell or the outside.
    let port_of = |edge: PucId, vertex: Vertex, track: u8| -> PucPort {
        let rec = edge_list[edge as usize];
        let name = match (vertex == rec.a, track) {
            (true, 1) => PortName::A1,
            (true, _) => PortName::A2,
            (false, 1) => PortName::B1,
            (false, _) => PortName::B2,
        };
        PucPort::new(edge, name)
    };
    let track_for = |edge: PucId, cell: (i32, i32)| -> u8 {
        if edge_list[edge as usize].cells[0] == cell {
            1
        } else {
            2
        }
    };

    let pucs: Vec<Puc> = edge_list
        .iter()
        .enumerate()
        .map(|(id, rec)| Puc {
            id: id as PucId,
            il_db: defaults.il_db,
            bul: defaults.bul,
            power_mw: defaults.power_mw,
            crosstalk_db: defaults.crosstalk_db,
            position: (rec.a.0 + rec.b.0, rec.a.1 + rec.b.1),
        })
        .collect();

    // Interior wiring: around every cell, each pair of consecutive edges is
    // joined at the shared vertex on the cell's own track.
    let mut links: Vec<Link> = Vec::new();
    for &(r, q) in &cells {
        let verts = cell_vertices(q, r);
        for i in 0..6 {
            let v = verts[i];
            let e_prev = edge_id_of(verts[(i + 5) % 6], v);
            let e_next = edge_id_of(v, verts[(i + 1) % 6]);
            links.push(Link {
                id: links.len() as LinkId,
                a: port_of(e_prev, v, track_for(e_prev, (r, q))),
                b: port_of(e_next, v, track_for(e_next, (r, q))),
            });
        }
    }

    // Boundary walk. Boundary edges border exactly one cell; every boundary
    // vertex meets exactly two of them, so they form a single cycle.
    let mut boundary_at: BTreeMap<(i32, i32), Vec<PucId>> = BTreeMap::new();
    let mut vertex_degree: BTreeMap<(i32, i32), u32> = BTreeMap::new();
    for (id, rec) in edge_list.iter().enumerate() {
        *vertex_degree.entry(vkey(rec.a)).or_insert(0) += 1;
        *vertex_degree.entry(vkey(rec.b)).or_insert(0) += 1;
        if rec.cells.len() == 1 {
            boundary_at.entry(vkey(rec.a)).or_default().push(id as PucId);
            boundary_at.entry(vkey(rec.b)).or_default().push(id as PucId);
        }
    }
    let vertex_of_key = |key: (i32, i32)| -> Vertex { (key.1, key.0) };
    let start_key = *boundary_at.keys().next().expect("patch has a boundary");

    // Walk the cycle once, then orient it counter-clockwise in the y-up
    // convention (negative shoelace area in these y-down coordinates).
    let mut cycle: Vec<(i32, i32)> = vec![start_key];
    let mut prev_edge = boundary_at[&start_key][0];
    loop {
        let cur = *cycle.last().unwrap();
        let rec = edge_list[prev_edge as usize];
        let next = if vkey(rec.a) == cur { vkey(rec.b) } else { vkey(rec.a) };
        if next == start_key {
            break;
        }
        cycle.push(next);
        let pair = &boundary_at[&next];
        prev_edge = if pair[0] == prev_edge { pair[1] } else { pair[0] };
    }
    let area2: i64 = cycle
        .iter()
        .zip(cycle.iter().cycle().skip(1))
        .map(|(u, w)| {
            let (ux, uy) = vertex_of_key(*u);
            let (wx, wy) = vertex_of_key(*w);
            i64::from(ux) * i64::from(wy) - i64::from(wx) * i64::from(uy)
        })
        .sum();
    if area2 > 0 {
        cycle[1..].reverse();
    }

    // Emit twin external ports at convex corners (two boundary edges only)
    // and bend waveguides at flat corners (a third, interior edge meets the
    // vertex), in walk order.
    let y_max = edge_list
        .iter()
        .flat_map(|rec| [rec.a.1, rec.b.1])
        .max()
        .expect("mesh has vertices");
    let is_bottom = |edge: PucId| -> bool {
        let rec = edge_list[edge as usize];
        rec.a.1.min(rec.b.1) >= y_max - 1
    };

    let mut external_ports: Vec<ExternalPort> = Vec::new();
    let mut usable_ports: Vec<PortId> = Vec::new();
    let n = cycle.len();
    for i in 0..n {
        let key = cycle[i];
        let vertex = vertex_of_key(key);
        let prev_key = cycle[(i + n - 1) % n];
        let next_key = cycle[(i + 1) % n];
        let edge_in = {
            let pair = &boundary_at[&key];
            let rec0 = edge_list[pair[0] as usize];
            let other0 = if vkey(rec0.a) == key { vkey(rec0.b) } else { vkey(rec0.a) };
            if other0 == prev_key {
                pair[0]
            } else {
                pair[1]
            }
        };
        let edge_out = {
            let pair = &boundary_at[&key];
            if pair[0] == edge_in {
                pair[1]
            } else {
                pair[0]
            }
        };
        debug_assert_ne!(edge_in, edge_out);
        debug_assert_eq!({
            let rec = edge_list[edge_out as usize];
            if vkey(rec.a) == key { vkey(rec.b) } else { vkey(rec.a) }
        }, next_key);

        let stub_in = port_of(edge_in, vertex, 2);
        let stub_out = port_of(edge_out, vertex, 2);
        match vertex_degree[&key] {
            2 => {
                let position = (2 * vertex.0, 2 * vertex.1);
                for joins in [[stub_in, stub_out], [stub_out, stub_in]] {
                    let id = external_ports.len() as PortId;
                    let default_edge = if joins[0] == stub_in { edge_in } else { edge_out };
                    if !is_bottom(default_edge) {
                        usable_ports.push(id);
                    }
                    external_ports.push(ExternalPort {
                        id,
                        joins: joins.to_vec(),
                        position,
                    });
                }
            }
            _ => {
                links.push(Link {
                    id: links.len() as LinkId,
                    a: stub_in,
                    b: stub_out,
                });
            }
        }
    }

    let topology = MeshTopology {
        version: TOPOLOGY_VERSION,
        pucs,
        links,
        external_ports,
        usable_ports,
    };
    debug_assert!(validate_topology(&topology).is_empty());
    Ok(topology)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks the structural rules of a topology and returns every violation
/// found (empty means valid).
pub fn validate_topology(topology: &MeshTopology) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut report = |entity: String, rule: &str| {
        violations.push(Violation {
            entity,
            rule: rule.to_string(),
        });
    };

    if topology.pucs.is_empty() {
        report("mesh".into(), "must contain at least one PUC");
    }
    let n_pucs = topology.pucs.len() as u32;
    for (i, puc) in topology.pucs.iter().enumerate() {
        if puc.id != i as PucId {
            report(format!("puc {}", puc.id), "ids must be contiguous from zero");
        }
        if !puc.il_db.is_finite() || puc.il_db > 0.0 {
            report(format!("puc {}", puc.id), "il_db must be finite and non-positive");
        }
        if !puc.bul.is_finite() || puc.bul < 0.0 {
            report(format!("puc {}", puc.id), "bul must be finite and non-negative");
        }
        if !puc.power_mw.is_finite() || puc.power_mw < 0.0 {
            report(format!("puc {}", puc.id), "power_mw must be finite and non-negative");
        }
        if !puc.crosstalk_db.is_finite() || puc.crosstalk_db <= 0.0 {
            report(format!("puc {}", puc.id), "crosstalk_db must be finite and positive");
        }
    }

    // Each PUC port may appear in at most one link, and never both in a link
    // and in an external port's join list.
    let mut link_use: BTreeMap<PucPort, LinkId> = BTreeMap::new();
    for (i, link) in topology.links.iter().enumerate() {
        if link.id != i as LinkId {
            report(format!("link {}", link.id), "ids must be contiguous from zero");
        }
        if link.a.puc >= n_pucs || link.b.puc >= n_pucs {
            report(format!("link {}", link.id), "endpoints must reference existing PUCs");
            continue;
        }
        if link.a == link.b {
            report(format!("link {}", link.id), "endpoints must be distinct ports");
        }
        if link.a.puc == link.b.puc {
            report(format!("link {}", link.id), "must join ports of two different PUCs");
        }
        for end in [link.a, link.b] {
            if link_use.insert(end, link.id).is_some() {
                report(
                    format!("link {}", link.id),
                    "PUC ports may appear in at most one link",
                );
            }
        }
    }

    let mut join_use: BTreeMap<PucPort, Vec<PortId>> = BTreeMap::new();
    for (i, port) in topology.external_ports.iter().enumerate() {
        if port.id != i as PortId {
            report(
                format!("external port {}", port.id),
                "ids must be contiguous from zero",
            );
        }
        if port.joins.is_empty() || port.joins.len() > 2 {
            report(
                format!("external port {}", port.id),
                "must join one or two PUC ports",
            );
        }
        if port.joins.len() == 2 && port.joins[0] == port.joins[1] {
            report(format!("external port {}", port.id), "joins must be distinct");
        }
        for join in &port.joins {
            if join.puc >= n_pucs {
                report(
                    format!("external port {}", port.id),
                    "joins must reference existing PUCs",
                );
                continue;
            }
            if link_use.contains_key(join) {
                report(
                    format!("external port {}", port.id),
                    "joined PUC ports must not also appear in links",
                );
            }
            join_use.entry(*join).or_default().push(port.id);
        }
    }
    // Corner stubs are shared by exactly the (at most two) co-located twin
    // external ports.
    for (stub, users) in &join_use {
        if users.len() > 2 {
            report(
                format!("puc port {stub}"),
                "free PUC ports may be joined by at most two external ports",
            );
        }
    }

    let mut last: Option<PortId> = None;
    for &id in &topology.usable_ports {
        if id as usize >= topology.external_ports.len() {
            report(format!("usable port {id}"), "must reference an existing external port");
        }
        if let Some(prev) = last {
            if id <= prev {
                report(
                    format!("usable port {id}"),
                    "usable_ports must be strictly ascending",
                );
            }
        }
        last = Some(id);
    }

    // Connectivity: links must join all PUCs into a single component.
    if n_pucs > 0 {
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n_pucs as usize];
        for link in &topology.links {
            if link.a.puc < n_pucs && link.b.puc < n_pucs {
                adjacency[link.a.puc as usize].push(link.b.puc);
                adjacency[link.b.puc as usize].push(link.a.puc);
            }
        }
        let mut seen = vec![false; n_pucs as usize];
        let mut stack = vec![0u32];
        seen[0] = true;
        while let Some(p) = stack.pop() {
            for &q in &adjacency[p as usize] {
                if !seen[q as usize] {
                    seen[q as usize] = true;
                    stack.push(q);
                }
            }
        }
        if n_pucs > 1 && seen.iter().any(|s| !s) {
            report("mesh".into(), "all PUCs must be link-connected");
        }
    }

    violations
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

fn fmt_float(x: f64) -> String {
    format!("{x:.6}")
}

fn write_puc_port(out: &mut String, p: &PucPort) {
    out.push_str(&format!("{{\"puc\": {}, \"port\": \"{}\"}}", p.puc, p.port));
}

/// Serializes a topology to its canonical JSON text: fixed key order, six
/// decimal places for floating-point attributes, one entity per line. Equal
/// topologies always produce byte-identical output.
pub fn to_json_string(topology: &MeshTopology) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"topology_version\": {},\n", topology.version));

    out.push_str("  \"pucs\": [\n");
    for (i, puc) in topology.pucs.iter().enumerate() {
        out.push_str(&format!(
            "    {{\"id\": {}, \"il_db\": {}, \"bul\": {}, \"power_mw\": {}, \"crosstalk_db\": {}, \"position\": [{}, {}]}}{}\n",
            puc.id,
            fmt_float(puc.il_db),
            fmt_float(puc.bul),
            fmt_float(puc.power_mw),
            fmt_float(puc.crosstalk_db),
            puc.position.0,
            puc.position.1,
            if i + 1 < topology.pucs.len() { "," } else { "" },
        ));
    }
    out.push_str("  ],\n");

    out.push_str("  \"links\": [\n");
    for (i, link) in topology.links.iter().enumerate() {
        out.push_str(&format!("    {{\"id\": {}, \"a\": ", link.id));
        write_puc_port(&mut out, &link.a);
        out.push_str(", \"b\": ");
        write_puc_port(&mut out, &link.b);
        out.push('}');
        if i + 1 < topology.links.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("  ],\n");

    out.push_str("  \"external_ports\": [\n");
    for (i, port) in topology.external_ports.iter().enumerate() {
        out.push_str(&format!("    {{\"id\": {}, \"joins\": [", port.id));
        for (j, join) in port.joins.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            write_puc_port(&mut out, join);
        }
        out.push_str(&format!(
            "], \"position\": [{}, {}]}}{}\n",
            port.position.0,
            port.position.1,
            if i + 1 < topology.external_ports.len() { "," } else { "" },
        ));
    }
    out.push_str("  ],\n");

    let usable: Vec<String> = topology.usable_ports.iter().map(|p| p.to_string()).collect();
    out.push_str(&format!("  \"usable_ports\": [{}]\n", usable.join(", ")));
    out.push_str("}\n");
    out
}

/// Parses a topology from JSON text, checking the format version and the
/// structural rules.
pub fn from_json_str(text: &str) -> Result<MeshTopology, TopologyError> {
    let topology: MeshTopology =
        serde_json::from_str(text).map_err(|e| TopologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    if topology.version != TOPOLOGY_VERSION {
        return Err(TopologyError::Version {
            found: topology.version,
            expected: TOPOLOGY_VERSION,
        });
    }
    let violations = validate_topology(&topology);
    if !violations.is_empty() {
        return Err(TopologyError::Invalid(violations));
    }
    Ok(topology)
}

/// Writes a topology to a file in the canonical JSON format.
pub fn save_topology(topology: &MeshTopology, path: &Path) -> Result<(), TopologyError> {
    std::fs::write(path, to_json_string(topology))?;
    Ok(())
}

/// Reads and validates a topology file produced by [`save_topology`].
pub fn load_topology(path: &Path) -> Result<MeshTopology, TopologyError> {
    let text = std::fs::read_to_string(path)?;
    from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn single_cell_counts() {
        let topo = generate_hex_mesh(1, 1, &PucDefaults::default()).unwrap();
        assert_eq!(topo.pucs.len(), 6);
        assert_eq!(topo.links.len(), 6);
        assert_eq!(topo.external_ports.len(), 12);
        assert_eq!(topo.usable_ports.len(), 8);
        assert!(validate_topology(&topo).is_empty());
    }

    #[test]
    fn two_cell_counts() {
        // The stacked and side-by-side two-cell patches share the same PUC
        // and port counts but expose different amounts of bottom boundary.
        for (rows, cols, usable) in [(2, 1, 12), (1, 2, 10)] {
            let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
            assert_eq!(topo.pucs.len(), 11, "{rows}x{cols}");
            assert_eq!(topo.external_ports.len(), 16, "{rows}x{cols}");
            assert_eq!(topo.usable_ports.len(), usable, "{rows}x{cols}");
            assert!(validate_topology(&topo).is_empty());
        }
        let stacked = generate_hex_mesh(2, 1, &PucDefaults::default()).unwrap();
        assert_eq!(stacked.links.len(), 14);
    }

    #[test]
    fn reference_mesh_counts() {
        let topo = MeshTopology::mesh72();
        assert_eq!(topo.pucs.len(), 72);
        assert_eq!(topo.links.len(), 126);
        assert_eq!(topo.external_ports.len(), 36);
        assert_eq!(topo.usable_ports.len(), 28);
        assert!(validate_topology(&topo).is_empty());
    }

    #[test]
    fn reference_mesh_flanks() {
        let topo = MeshTopology::mesh72();
        let (left, right) = topo.flank_ports(6).unwrap();
        assert_eq!(left, vec![2, 4, 6, 8, 10, 12]);
        assert_eq!(right, vec![30, 28, 26, 24, 22, 21]);
        // One port per corner, strictly inside each side.
        for &id in left.iter().chain(&right) {
            assert!(topo.is_usable(id));
        }
        assert!(topo.flank_ports(8).is_none(), "only 15 corners exist");
        let (l1, r1) = topo.flank_ports(1).unwrap();
        assert_eq!((l1.len(), r1.len()), (1, 1));
    }

    #[test]
    fn empty_mesh_rejected() {
        assert!(matches!(
            generate_hex_mesh(0, 3, &PucDefaults::default()),
            Err(TopologyError::EmptyMesh { .. })
        ));
        assert!(matches!(
            generate_hex_mesh(1, 0, &PucDefaults::default()),
            Err(TopologyError::EmptyMesh { .. })
        ));
    }

    #[test]
    fn every_puc_port_is_wired_exactly_once() {
        for (rows, cols) in [(1, 1), (2, 1), (1, 2), (5, 3), (3, 4)] {
            let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
            let mut linked: BTreeSet<PucPort> = BTreeSet::new();
            for link in &topo.links {
                assert!(linked.insert(link.a));
                assert!(linked.insert(link.b));
            }
            let mut joined: BTreeSet<PucPort> = BTreeSet::new();
            for port in &topo.external_ports {
                for join in &port.joins {
                    assert!(!linked.contains(join));
                    joined.insert(*join);
                }
            }
            assert_eq!(
                linked.len() + joined.len(),
                4 * topo.pucs.len(),
                "{rows}x{cols}: every PUC port is either linked or a corner stub"
            );
        }
    }

    #[test]
    fn twin_ports_share_a_corner() {
        let topo = MeshTopology::mesh72();
        for pair in topo.external_ports.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            assert_eq!(a.position, b.position);
            assert_eq!(a.joins.len(), 2);
            assert_eq!(a.joins[0], b.joins[1]);
            assert_eq!(a.joins[1], b.joins[0]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_hex_mesh(4, 2, &PucDefaults::default()).unwrap();
        let b = generate_hex_mesh(4, 2, &PucDefaults::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_json_string(&a), to_json_string(&b));
    }

    #[test]
    fn json_round_trip_preserves_topology() {
        for (rows, cols) in [(1, 1), (2, 2), (5, 3)] {
            let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
            let parsed = from_json_str(&to_json_string(&topo)).unwrap();
            assert_eq!(parsed, topo);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = std::env::temp_dir().join("hexmesh-topology-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mesh.json");
        let topo = generate_hex_mesh(2, 2, &PucDefaults::default()).unwrap();
        save_topology(&topo, &path).unwrap();
        let loaded = load_topology(&path).unwrap();
        assert_eq!(loaded, topo);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let topo = generate_hex_mesh(1, 1, &PucDefaults::default()).unwrap();
        let text = to_json_string(&topo).replace("\"topology_version\": 1", "\"topology_version\": 9");
        assert!(matches!(
            from_json_str(&text),
            Err(TopologyError::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = from_json_str("{\n  \"topology_version\": oops\n}").unwrap_err();
        match err {
            TopologyError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_flags_duplicate_port_use() {
        let mut topo = generate_hex_mesh(1, 1, &PucDefaults::default()).unwrap();
        let first = topo.links[0].a;
        topo.links[1].a = first;
        let violations = validate_topology(&topo);
        assert!(violations
            .iter()
            .any(|v| v.rule.contains("at most one link")));
    }

    #[test]
    fn validation_flags_bad_attributes() {
        let mut topo = generate_hex_mesh(1, 1, &PucDefaults::default()).unwrap();
        topo.pucs[2].il_db = 0.4;
        topo.pucs[3].crosstalk_db = 0.0;
        let violations = validate_topology(&topo);
        assert!(violations.iter().any(|v| v.entity == "puc 2"));
        assert!(violations.iter().any(|v| v.entity == "puc 3"));
    }

    #[test]
    fn usable_ports_avoid_bottom_row() {
        let topo = MeshTopology::mesh72();
        let y_max = topo
            .external_ports
            .iter()
            .map(|p| p.position.1)
            .max()
            .unwrap();
        for &id in &topo.usable_ports {
            let port = topo.external_port(id).unwrap();
            assert!(
                port.position.1 < y_max,
                "usable port {id} must not sit on the bottom boundary"
            );
        }
    }

    #[test]
    fn port_walk_starts_top_left() {
        let topo = MeshTopology::mesh72();
        let first = &topo.external_ports[0];
        let min_pos = topo
            .external_ports
            .iter()
            .map(|p| (p.position.1, p.position.0))
            .min()
            .unwrap();
        assert_eq!((first.position.1, first.position.0), min_pos);
    }

    #[test]
    fn bigger_patches_stay_valid() {
        for (rows, cols) in [(3, 1), (4, 4), (7, 2), (2, 6)] {
            let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
            assert!(
                validate_topology(&topo).is_empty(),
                "{rows}x{cols} should be structurally valid"
            );
            assert!(topo.usable_ports.len() >= 4);
        }
    }

    #[test]
    fn the_checked_in_reference_mesh_matches_the_generator() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mesh72.json");
        let loaded = load_topology(&path).unwrap();
        assert_eq!(loaded, MeshTopology::mesh72());
        assert!(validate_topology(&loaded).is_empty());
    }
}
