//! Weighted directed routing graph over a mesh topology.
//!
//! Every PUC expands into eight artificial nodes — one input and one output
//! node per optical port — so that a light path through the mesh maps to a
//! simple directed path. Each PUC contributes eight internal arcs (an
//! input node to each of the two reachable output nodes, for both the bar
//! and cross couplings) carrying the PUC's routing weight; each fixed
//! waveguide link contributes two zero-weight arcs, one per direction.
//! There are deliberately no arcs between the input and output node of the
//! same PUC port: light cannot reflect back out of the port it entered.
//!
//! External ports are not graph nodes. A port maps to the input nodes of
//! its joined corner stubs (injection) and to their output nodes
//! (extraction); routing treats those sets as multi-source seeds and
//! multi-sink goals.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::topology::{
    validate_topology, MeshTopology, PortId, PortName, PucId, PucPort, PucState, Violation,
};

/// Node of the routing graph (an input or output side of one PUC port).
pub type NodeId = u32;
/// Arc of the routing graph.
pub type ArcId = u32;

/// Direction of a node relative to its PUC: light enters a PUC through an
/// `In` node and leaves through an `Out` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// Packs a PUC port side into its node id.
pub fn node_id(puc: PucId, port: PortName, direction: Direction) -> NodeId {
    puc * 8
        + port.index() * 2
        + match direction {
            Direction::In => 0,
            Direction::Out => 1,
        }
}

/// PUC that owns a node.
pub fn node_puc(node: NodeId) -> PucId {
    node / 8
}

/// Port name of a node within its PUC.
pub fn node_port(node: NodeId) -> PortName {
    PortName::ALL[((node / 2) % 4) as usize]
}

/// Whether a node is the input or output side of its port.
pub fn node_direction(node: NodeId) -> Direction {
    if node % 2 == 0 {
        Direction::In
    } else {
        Direction::Out
    }
}

/// The PUC port a node belongs to.
pub fn node_puc_port(node: NodeId) -> PucPort {
    PucPort::new(node_puc(node), node_port(node))
}

/// Kind of a routing arc: one of the two couplings inside a PUC, or a fixed
/// waveguide between two PUCs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ArcKind {
    Bar,
    Cross,
    Waveguide,
}

/// One directed arc of the routing graph.
#[derive(Debug, Clone)]
pub struct Arc {
    pub id: ArcId,
    pub tail: NodeId,
    pub head: NodeId,
    pub kind: ArcKind,
    /// Owning PUC for internal arcs; `None` for waveguide arcs.
    pub puc: Option<PucId>,
    /// Weight from the PUC attributes and the weight coefficients.
    pub base_weight: f64,
    /// Multiplicative penalty (>= 1) applied by conflict solvers.
    pub penalty: f64,
}

impl Arc {
    /// Base weight scaled by the current penalty multiplier.
    pub fn effective_weight(&self) -> f64 {
        self.base_weight * self.penalty
    }

    /// The PUC state this arc requires, for internal arcs.
    pub fn required_state(&self) -> Option<PucState> {
        match self.kind {
            ArcKind::Bar => Some(PucState::Bar),
            ArcKind::Cross => Some(PucState::Cross),
            ArcKind::Waveguide => None,
        }
    }

    pub fn is_internal(&self) -> bool {
        self.puc.is_some()
    }
}

/// Coefficients of the per-PUC routing weight
/// `c_il * |il_db| + c_bul * bul + c_pc * power_mw`.
///
/// All coefficients must be finite and non-negative, and at least one must
/// be positive. The default weighs insertion loss only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCoeffs {
    pub c_il: f64,
    pub c_bul: f64,
    pub c_pc: f64,
}

impl Default for WeightCoeffs {
    fn default() -> Self {
        WeightCoeffs {
            c_il: 1.0,
            c_bul: 0.0,
            c_pc: 0.0,
        }
    }
}

impl WeightCoeffs {
    pub fn new(c_il: f64, c_bul: f64, c_pc: f64) -> Self {
        WeightCoeffs { c_il, c_bul, c_pc }
    }

    fn check(&self) -> Result<(), GraphError> {
        let all = [self.c_il, self.c_bul, self.c_pc];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(GraphError::BadCoeffs(
                "coefficients must be finite and non-negative".into(),
            ));
        }
        if all.iter().all(|c| *c == 0.0) {
            return Err(GraphError::BadCoeffs(
                "at least one coefficient must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Routing weight of one PUC traversal under the given coefficients.
pub fn edge_weight(puc: &crate::topology::Puc, coeffs: &WeightCoeffs) -> f64 {
    coeffs.c_il * puc.il_db.abs() + coeffs.c_bul * puc.bul + coeffs.c_pc * puc.power_mw
}

/// Errors raised while building or mutating a routing graph.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid weight coefficients: {0}")]
    BadCoeffs(String),
    #[error("topology fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidTopology(Vec<Violation>),
    #[error("unknown arc {0}")]
    UnknownArc(ArcId),
    #[error("arc {0} is a waveguide arc; penalties apply to PUC-internal arcs only")]
    NotInternal(ArcId),
    #[error("penalty factor must be finite and >= 1 (got {0})")]
    BadFactor(f64),
}

/// Errors raised by [`LightPath::new`] when an arc sequence does not form a
/// valid light path.
#[derive(Debug, Error)]
pub enum PathError {
    #[error("path must contain at least one arc")]
    Empty,
    #[error("unknown arc {0}")]
    UnknownArc(ArcId),
    #[error("arc {arc} does not start where the previous arc ended")]
    Discontiguous { arc: ArcId },
    #[error("path revisits node {0}")]
    RepeatedNode(NodeId),
    #[error("path requires PUC {puc} in both bar and cross states")]
    ConflictingStates { puc: PucId },
    #[error("path does not start at an injection node of port {port}")]
    BadStart { port: PortId },
    #[error("path does not end at an extraction node of port {port}")]
    BadEnd { port: PortId },
    #[error("unknown external port {0}")]
    UnknownPort(PortId),
}

/// A route for light from one external port to another.
///
/// The arc sequence alternates between PUC-internal arcs and waveguide
/// arcs: it starts with an internal arc at the injection stub and ends with
/// an internal arc whose head is an extraction stub. The path never visits
/// a node twice and never requires one PUC in two different states (a PUC
/// may be traversed twice on independent track pairs in the *same* state).
#[derive(Debug, Clone, PartialEq)]
pub struct LightPath {
    pub in_port: PortId,
    pub out_port: PortId,
    pub arcs: Vec<ArcId>,
    /// Bar/cross state every traversed PUC must hold, one entry per PUC.
    pub required_states: BTreeMap<PucId, PucState>,
    /// Sum of effective arc weights at construction time.
    pub total_weight: f64,
    /// Number of distinct PUCs traversed (`required_states.len()`).
    pub puc_count: u32,
}

impl LightPath {
    /// Validates an arc sequence as a light path from `in_port` to
    /// `out_port` and computes its weight and state requirements.
    pub fn new(
        graph: &MeshGraph,
        in_port: PortId,
        out_port: PortId,
        arcs: Vec<ArcId>,
    ) -> Result<LightPath, PathError> {
        if arcs.is_empty() {
            return Err(PathError::Empty);
        }
        for &arc in &arcs {
            if graph.arc(arc).is_none() {
                return Err(PathError::UnknownArc(arc));
            }
        }

        let entry = graph
            .port_entry_nodes(in_port)
            .ok_or(PathError::UnknownPort(in_port))?;
        let exit = graph
            .port_exit_nodes(out_port)
            .ok_or(PathError::UnknownPort(out_port))?;
        let first = graph.arc(arcs[0]).unwrap();
        if !entry.contains(&first.tail) {
            return Err(PathError::BadStart { port: in_port });
        }
        let last = graph.arc(*arcs.last().unwrap()).unwrap();
        if !exit.contains(&last.head) {
            return Err(PathError::BadEnd { port: out_port });
        }

        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        seen.insert(first.tail);
        let mut states: BTreeMap<PucId, PucState> = BTreeMap::new();
        let mut total_weight = 0.0;
        let mut internal = 0u32;
        let mut cursor = first.tail;
        for &arc_id in &arcs {
            let arc = graph.arc(arc_id).unwrap();
            if arc.tail != cursor {
                return Err(PathError::Discontiguous { arc: arc_id });
            }
            if !seen.insert(arc.head) {
                return Err(PathError::RepeatedNode(arc.head));
            }
            if let (Some(puc), Some(state)) = (arc.puc, arc.required_state()) {
                internal += 1;
                match states.get(&puc) {
                    None => {
                        states.insert(puc, state);
                    }
                    Some(existing) if *existing != state => {
                        return Err(PathError::ConflictingStates { puc });
                    }
                    Some(_) => {}
                }
            }
            total_weight += arc.effective_weight();
            cursor = arc.head;
        }
        debug_assert!(internal >= 1);

        let puc_count = states.len() as u32;
        Ok(LightPath {
            in_port,
            out_port,
            arcs,
            required_states: states,
            total_weight,
            puc_count,
        })
    }

    /// Number of PUC traversals (internal arcs); equals `puc_count` unless
    /// the path crosses some PUC twice on independent tracks.
    pub fn hops(&self, graph: &MeshGraph) -> u32 {
        self.arcs
            .iter()
            .filter(|&&a| graph.arcs[a as usize].is_internal())
            .count() as u32
    }

    /// Node sequence visited by the path, starting at the injection node.
    pub fn nodes(&self, graph: &MeshGraph) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.arcs.len() + 1);
        out.push(graph.arcs[self.arcs[0] as usize].tail);
        for &a in &self.arcs {
            out.push(graph.arcs[a as usize].head);
        }
        out
    }

    /// Corner stub through which the path enters the mesh.
    pub fn entry_stub(&self, graph: &MeshGraph) -> PucPort {
        node_puc_port(graph.arcs[self.arcs[0] as usize].tail)
    }

    /// Corner stub through which the path leaves the mesh.
    pub fn exit_stub(&self, graph: &MeshGraph) -> PucPort {
        node_puc_port(graph.arcs[*self.arcs.last().unwrap() as usize].head)
    }
}

/// Returns the bar/cross states a path requires, keyed by PUC.
pub fn path_states(path: &LightPath) -> BTreeMap<PucId, PucState> {
    path.required_states.clone()
}

/// The routing graph of one mesh under one set of weight coefficients.
#[derive(Debug, Clone)]
pub struct MeshGraph {
    topology: MeshTopology,
    coeffs: WeightCoeffs,
    arcs: Vec<Arc>,
    out_arcs: Vec<Vec<ArcId>>,
    in_arcs: Vec<Vec<ArcId>>,
    ports: BTreeMap<PortId, PortNodes>,
    internal_arc_count: u32,
}

#[derive(Debug, Clone)]
struct PortNodes {
    entry: Vec<NodeId>,
    exit: Vec<NodeId>,
}

/// Internal arcs of one PUC, as (tail port, head port, coupling).
const INTERNAL_ARCS: [(PortName, PortName, ArcKind); 8] = [
    (PortName::A1, PortName::B1, ArcKind::Bar),
    (PortName::A1, PortName::B2, ArcKind::Cross),
    (PortName::A2, PortName::B2, ArcKind::Bar),
    (PortName::A2, PortName::B1, ArcKind::Cross),
    (PortName::B1, PortName::A1, ArcKind::Bar),
    (PortName::B1, PortName::A2, ArcKind::Cross),
    (PortName::B2, PortName::A2, ArcKind::Bar),
    (PortName::B2, PortName::A1, ArcKind::Cross),
];

/// Builds the routing graph for a topology, validating both the topology
/// and the weight coefficients.
pub fn build_graph(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
) -> Result<MeshGraph, GraphError> {
    coeffs.check()?;
    let violations = validate_topology(topology);
    if !violations.is_empty() {
        return Err(GraphError::InvalidTopology(violations));
    }

    let node_count = topology.pucs.len() * 8;
    let mut arcs: Vec<Arc> = Vec::with_capacity(topology.pucs.len() * 8 + topology.links.len() * 2);
    for puc in &topology.pucs {
        let weight = edge_weight(puc, &coeffs);
        for (tail_port, head_port, kind) in INTERNAL_ARCS {
            arcs.push(Arc {
                id: arcs.len() as ArcId,
                tail: node_id(puc.id, tail_port, Direction::In),
                head: node_id(puc.id, head_port, Direction::Out),
                kind,
                puc: Some(puc.id),
                base_weight: weight,
                penalty: 1.0,
            });
        }
    }
    let internal_arc_count = arcs.len() as u32;
    for link in &topology.links {
        let a_out = node_id(link.a.puc, link.a.port, Direction::Out);
        let a_in = node_id(link.a.puc, link.a.port, Direction::In);
        let b_out = node_id(link.b.puc, link.b.port, Direction::Out);
        let b_in = node_id(link.b.puc, link.b.port, Direction::In);
        for (tail, head) in [(a_out, b_in), (b_out, a_in)] {
            arcs.push(Arc {
                id: arcs.len() as ArcId,
                tail,
                head,
                kind: ArcKind::Waveguide,
                puc: None,
                base_weight: 0.0,
                penalty: 1.0,
            });
        }
    }

    let mut out_arcs: Vec<Vec<ArcId>> = vec![Vec::new(); node_count];
    let mut in_arcs: Vec<Vec<ArcId>> = vec![Vec::new(); node_count];
    for arc in &arcs {
        out_arcs[arc.tail as usize].push(arc.id);
        in_arcs[arc.head as usize].push(arc.id);
    }

    let ports = topology
        .external_ports
        .iter()
        .map(|port| {
            let entry = port
                .joins
                .iter()
                .map(|j| node_id(j.puc, j.port, Direction::In))
                .collect();
            let exit = port
                .joins
                .iter()
                .map(|j| node_id(j.puc, j.port, Direction::Out))
                .collect();
            (port.id, PortNodes { entry, exit })
        })
        .collect();

    Ok(MeshGraph {
        topology: topology.clone(),
        coeffs,
        arcs,
        out_arcs,
        in_arcs,
        ports,
        internal_arc_count,
    })
}

impl MeshGraph {
    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn coeffs(&self) -> &WeightCoeffs {
        &self.coeffs
    }

    pub fn node_count(&self) -> usize {
        self.out_arcs.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: ArcId) -> Option<&Arc> {
        self.arcs.get(id as usize)
    }

    /// Arcs leaving a node, in ascending arc id order.
    pub fn out_arcs(&self, node: NodeId) -> &[ArcId] {
        &self.out_arcs[node as usize]
    }

    /// Arcs entering a node, in ascending arc id order.
    pub fn in_arcs(&self, node: NodeId) -> &[ArcId] {
        &self.in_arcs[node as usize]
    }

    pub fn internal_arc_count(&self) -> u32 {
        self.internal_arc_count
    }

    /// Injection nodes of an external port (input side of its stubs).
    pub fn port_entry_nodes(&self, port: PortId) -> Option<&[NodeId]> {
        self.ports.get(&port).map(|p| p.entry.as_slice())
    }

    /// Extraction nodes of an external port (output side of its stubs).
    pub fn port_exit_nodes(&self, port: PortId) -> Option<&[NodeId]> {
        self.ports.get(&port).map(|p| p.exit.as_slice())
    }

    /// The eight internal arc ids of one PUC.
    pub fn internal_arcs_of(&self, puc: PucId) -> std::ops::Range<u32> {
        puc * 8..puc * 8 + 8
    }
}

/// Multiplies the penalty of each given internal arc by `factor`.
pub fn apply_penalty(
    graph: &mut MeshGraph,
    arcs: &BTreeSet<ArcId>,
    factor: f64,
) -> Result<(), GraphError> {
    if !factor.is_finite() || factor < 1.0 {
        return Err(GraphError::BadFactor(factor));
    }
    for &id in arcs {
        match graph.arcs.get(id as usize) {
            None => return Err(GraphError::UnknownArc(id)),
            Some(arc) if !arc.is_internal() => return Err(GraphError::NotInternal(id)),
            Some(_) => {}
        }
    }
    for &id in arcs {
        graph.arcs[id as usize].penalty *= factor;
    }
    Ok(())
}

/// Restores every arc penalty to 1.
pub fn reset_penalties(graph: &mut MeshGraph) {
    for arc in &mut graph.arcs {
        arc.penalty = 1.0;
    }
}
