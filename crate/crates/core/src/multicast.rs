//! 1×N multicast synthesis: shortest-path-tree construction over the mesh,
//! splitter identification, branch-loss accounting, and loss-compensated
//! splitting ratios for uniform or custom output power proportions.
//!
//! A multicast circuit is a directed tree rooted at the input port. Every
//! PUC where two branches of the tree demand different couplings becomes a
//! tunable coupler (splitter); its power ratio is compensated for the
//! insertion-loss difference of the two downstream branches so each output
//! receives exactly its requested share.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{build_graph, Arc, ArcId, ArcKind, LightPath, MeshGraph, NodeId};
use crate::interconnect::{
    check_port, search_state_consistent, RouteError, SearchOverflow,
};
use crate::topology::{PortId, PucId, PucPort, PucState};
use crate::units::{db_to_linear, linear_to_db};

/// Tolerance on the sum of requested proportions.
const PROPORTION_SUM_TOLERANCE: f64 = 1e-9;

/// Which insertion-loss figures the compensation math reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IlModel {
    /// Each PUC's own nominal loss (exact compensation when the simulator
    /// uses the same values).
    #[default]
    PerPuc,
    /// One mesh-wide average loss for every PUC, as a controller without
    /// per-device characterization would assume.
    GlobalAverage,
}

/// A 1×N multicast demand.
#[derive(Debug, Clone)]
pub struct MulticastRequest {
    pub input_port: PortId,
    pub output_ports: Vec<PortId>,
    /// Requested power share per output, parallel to `output_ports`;
    /// positive, summing to 1.
    pub proportion: Vec<f64>,
    pub il_model: IlModel,
}

impl MulticastRequest {
    /// Equal power to every output.
    pub fn uniform(input_port: PortId, output_ports: Vec<PortId>) -> Self {
        let n = output_ports.len().max(1);
        let share = 1.0 / n as f64;
        let proportion = vec![share; output_ports.len()];
        MulticastRequest {
            input_port,
            output_ports,
            proportion,
            il_model: IlModel::default(),
        }
    }

    /// Custom power shares, parallel to `output_ports`.
    pub fn with_proportion(
        input_port: PortId,
        output_ports: Vec<PortId>,
        proportion: Vec<f64>,
    ) -> Self {
        MulticastRequest {
            input_port,
            output_ports,
            proportion,
            il_model: IlModel::default(),
        }
    }
}

/// One splitter of a multicast tree with its compensated ratio.
///
/// `k_target` and `k` are cross-side power fractions; `il_bar_db` and
/// `il_cross_db` are the total deliverable transmissions of the bar and
/// cross branches (everything downstream of the split, later splits
/// included), which are exactly the figures the compensation consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct TunablePuc {
    pub puc: PucId,
    pub k_target: f64,
    pub k: f64,
    pub il_bar_db: f64,
    pub il_cross_db: f64,
}

/// A fully synthesized multicast circuit.
#[derive(Debug, Clone)]
pub struct MulticastConfig {
    pub input_port: PortId,
    /// Outputs in request order.
    pub output_ports: Vec<PortId>,
    /// Requested shares, parallel to `output_ports`.
    pub proportion: Vec<f64>,
    /// Root-to-output path per output, parallel to `output_ports`. Their
    /// union is the multicast tree.
    pub paths: Vec<LightPath>,
    /// Splitters in child-before-parent order.
    pub tunable_pucs: Vec<TunablePuc>,
    /// Complete mesh programming: fixed couplings plus tunable couplers.
    pub states: BTreeMap<PucId, PucState>,
    /// Corner stub used by the input and by each output (twin ports at a
    /// shared corner resolve to distinct stubs).
    pub port_sides: BTreeMap<PortId, PucPort>,
}

impl MulticastConfig {
    /// All arcs of the multicast tree (union of the per-output paths).
    pub fn tree_arcs(&self) -> BTreeSet<ArcId> {
        self.paths
            .iter()
            .flat_map(|p| p.arcs.iter().copied())
            .collect()
    }
}

/// Multicast synthesis failure.
#[derive(Debug, Error)]
pub enum MulticastError {
    #[error("invalid multicast request: {0}")]
    BadRequest(String),
    #[error("routing for port {port} failed")]
    Route {
        port: PortId,
        #[source]
        source: RouteError,
    },
    #[error(
        "output {out_port} is reachable, but every route breaks the tree \
         (a PUC would need a third role)"
    )]
    TreeConflict { out_port: PortId },
}

// ---------------------------------------------------------------------------
// Splitter identification and ratio plumbing
// ---------------------------------------------------------------------------

/// PUCs shared by two or more paths with differing required couplings —
/// the points where a multicast tree must split power.
pub fn get_tunable_pucs(paths: &[LightPath]) -> BTreeSet<PucId> {
    let mut demanded: BTreeMap<PucId, PucState> = BTreeMap::new();
    let mut tunable: BTreeSet<PucId> = BTreeSet::new();
    for path in paths {
        for (&puc, &state) in &path.required_states {
            match demanded.get(&puc) {
                None => {
                    demanded.insert(puc, state);
                }
                Some(&held) if held != state => {
                    tunable.insert(puc);
                }
                Some(_) => {}
            }
        }
    }
    tunable
}

/// Ideal (lossless) cross-side power fraction per splitter: the summed
/// proportions of the outputs behind the cross branch over the summed
/// proportions of all outputs through the splitter.
pub fn target_ratios(
    paths: &[LightPath],
    proportion: &[f64],
) -> Result<BTreeMap<PucId, f64>, MulticastError> {
    if paths.len() != proportion.len() {
        return Err(MulticastError::BadRequest(format!(
            "{} paths but {} proportions",
            paths.len(),
            proportion.len()
        )));
    }
    let mut cross: BTreeMap<PucId, f64> = BTreeMap::new();
    let mut total: BTreeMap<PucId, f64> = BTreeMap::new();
    for tc in get_tunable_pucs(paths) {
        cross.insert(tc, 0.0);
        total.insert(tc, 0.0);
    }
    for (path, &share) in paths.iter().zip(proportion) {
        for (&puc, &state) in &path.required_states {
            if let Some(sum) = total.get_mut(&puc) {
                *sum += share;
                if state == PucState::Cross {
                    *cross.get_mut(&puc).unwrap() += share;
                }
            }
        }
    }
    Ok(cross
        .into_iter()
        .map(|(puc, c)| (puc, c / total[&puc]))
        .collect())
}

/// Loss-compensated splitting ratio.
///
/// `k_t` is the ideal bar-side power fraction and the result is the
/// compensated bar-side fraction, given the bar and cross branch
/// transmissions in dB; a lossier bar branch yields `k > k_t` so that the
/// extra loss is paid for with extra launch power. Cross-side values
/// follow by symmetry: `k_cross = 1 − splitting_ratio(1 − k_t_cross,
/// il_bar_db, il_cross_db)`.
pub fn splitting_ratio(k_t: f64, il_bar_db: f64, il_cross_db: f64) -> f64 {
    let ratio = db_to_linear(il_bar_db - il_cross_db);
    k_t / ((1.0 - k_t) * ratio + k_t)
}

// ---------------------------------------------------------------------------
// Tree construction
// ---------------------------------------------------------------------------

/// Multicast tree under construction: the union of the attached paths with
/// the bookkeeping needed to extend it one output at a time.
struct TreeBuilder {
    /// Every node on the tree, mapped to (path index, arc offset) such that
    /// `paths[i].arcs[..offset]` is the tree walk from the root to it.
    nodes: BTreeMap<NodeId, (usize, usize)>,
    /// Fixed coupling per non-splitter tree PUC.
    held: BTreeMap<PucId, PucState>,
    /// Splitters chosen so far (closed to any further traffic).
    split: BTreeSet<PucId>,
    /// Number of distinct tree streams traversing each PUC.
    streams: BTreeMap<PucId, u32>,
}

impl TreeBuilder {
    fn new() -> Self {
        TreeBuilder {
            nodes: BTreeMap::new(),
            held: BTreeMap::new(),
            split: BTreeSet::new(),
            streams: BTreeMap::new(),
        }
    }

    /// Registers the limb arcs of a freshly attached path (the part not
    /// already on the tree).
    fn absorb(&mut self, graph: &MeshGraph, path_index: usize, path: &LightPath, limb_start: usize) {
        for (offset, &arc_id) in path.arcs.iter().enumerate().skip(limb_start) {
            let arc = &graph.arcs()[arc_id as usize];
            self.nodes.entry(arc.tail).or_insert((path_index, offset));
            self.nodes
                .entry(arc.head)
                .or_insert((path_index, offset + 1));
            let Some(puc) = arc.puc else { continue };
            let state = arc
                .required_state()
                .expect("internal arcs demand a coupling");
            *self.streams.entry(puc).or_insert(0) += 1;
            match self.held.get(&puc) {
                None => {
                    self.held.insert(puc, state);
                }
                Some(&held) if held != state => {
                    // The limb diverges from the tree here: the PUC stops
                    // holding a fixed coupling and becomes a splitter.
                    self.held.remove(&puc);
                    self.split.insert(puc);
                }
                Some(_) => {}
            }
        }
    }
}

/// Removes cycles from an arc walk (a node revisited means every arc in
/// between is a detour the endpoints do not need).
fn splice_cycles(graph: &MeshGraph, arcs: Vec<ArcId>) -> Vec<ArcId> {
    let mut out: Vec<ArcId> = Vec::with_capacity(arcs.len());
    let mut seen: BTreeMap<NodeId, usize> = BTreeMap::new();
    if let Some(&first) = arcs.first() {
        seen.insert(graph.arcs()[first as usize].tail, 0);
    }
    for arc_id in arcs {
        let head = graph.arcs()[arc_id as usize].head;
        match seen.get(&head) {
            Some(&keep) => {
                for dropped in out.drain(keep..) {
                    seen.remove(&graph.arcs()[dropped as usize].head);
                }
                seen.insert(head, out.len());
            }
            None => {
                out.push(arc_id);
                seen.insert(head, out.len());
            }
        }
    }
    out
}

/// Grows the tree to reach `out_port`, returning the full root-to-output
/// arc walk (shared tree prefix plus the new limb) and the limb offset.
fn extend_tree(
    graph: &MeshGraph,
    tree: &TreeBuilder,
    paths: &[LightPath],
    input_port: PortId,
    out_port: PortId,
) -> Result<(Vec<ArcId>, usize), MulticastError> {
    let seeds: Vec<NodeId> = tree.nodes.keys().copied().collect();
    let closed: BTreeSet<NodeId> = tree.nodes.keys().copied().collect();
    let goals: BTreeSet<NodeId> = graph
        .port_exit_nodes(out_port)
        .ok_or(MulticastError::Route {
            port: out_port,
            source: RouteError::UnknownPort(out_port),
        })?
        .iter()
        .copied()
        .collect();

    let allow = |arc: &Arc| -> bool {
        let Some(puc) = arc.puc else { return true };
        if tree.split.contains(&puc) {
            // A splitter already feeds two branches; 2x2 hardware has no
            // third role to offer.
            return false;
        }
        match tree.held.get(&puc) {
            None => true,
            Some(&held) => {
                if arc.required_state() == Some(held) {
                    // Same coupling as the tree: an independent parallel
                    // track through the same device.
                    true
                } else {
                    // A different coupling is only possible as the point
                    // of divergence: the arc must leave a tree node, and
                    // the PUC must carry exactly one stream (a splitter
                    // splits one stream, not several).
                    tree.nodes.contains_key(&arc.tail)
                        && tree.streams.get(&puc).copied() == Some(1)
                }
            }
        }
    };

    let raw = match search_state_consistent(graph, &seeds, &goals, &closed, allow) {
        Ok(Some(raw)) => raw,
        Ok(None) | Err(SearchOverflow) => {
            // Distinguish "the mesh cannot reach this port at all" from
            // "the existing tree is in the way".
            return match crate::interconnect::shortest_path(graph, input_port, out_port) {
                Ok(_) => Err(MulticastError::TreeConflict { out_port }),
                Err(source) => Err(MulticastError::Route { port: out_port, source }),
            };
        }
    };

    let limb = splice_cycles(graph, raw.arcs);
    let first = *limb.first().expect("an extension limb is never empty");
    debug_assert!(
        graph.arcs()[first as usize].puc.is_some(),
        "a limb can only leave the tree through a coupling it flips"
    );
    let seed = graph.arcs()[first as usize].tail;
    let &(path_index, offset) = tree
        .nodes
        .get(&seed)
        .expect("limbs start on the tree");
    let mut full: Vec<ArcId> = paths[path_index].arcs[..offset].to_vec();
    let limb_start = full.len();
    full.extend(limb);
    Ok((full, limb_start))
}

// ---------------------------------------------------------------------------
// Branch accounting
// ---------------------------------------------------------------------------

/// One downstream side of a splitter.
struct SideInfo {
    /// Summed proportions of the outputs behind this side.
    demand: f64,
    /// PUCs strictly between the splitter and the terminal.
    chain: Vec<PucId>,
    /// Next splitter down this side, if the branch does not end at an
    /// output.
    child: Option<PucId>,
}

struct SplitterInfo {
    bar: SideInfo,
    cross: SideInfo,
}

/// Per-PUC transmission source honouring the requested loss model.
struct IlTable {
    per_puc: Vec<f64>,
    average: f64,
    model: IlModel,
}

impl IlTable {
    fn new(graph: &MeshGraph, model: IlModel) -> Self {
        let topo = graph.topology();
        IlTable {
            per_puc: topo.pucs.iter().map(|p| p.il_db).collect(),
            average: topo.mean_il_db(),
            model,
        }
    }

    fn il_db(&self, puc: PucId) -> f64 {
        match self.model {
            IlModel::PerPuc => self.per_puc[puc as usize],
            IlModel::GlobalAverage => self.average,
        }
    }

    fn transmission(&self, puc: PucId) -> f64 {
        db_to_linear(self.il_db(puc))
    }
}

/// Walks one side of a splitter along a representative path: the PUC chain
/// up to the next splitter or the output.
fn walk_side(
    graph: &MeshGraph,
    path: &LightPath,
    from_arc: usize,
    splitters: &BTreeSet<PucId>,
) -> (Vec<PucId>, Option<PucId>) {
    let mut chain = Vec::new();
    for &arc_id in &path.arcs[from_arc + 1..] {
        let arc = &graph.arcs()[arc_id as usize];
        let Some(puc) = arc.puc else { continue };
        if splitters.contains(&puc) {
            return (chain, Some(puc));
        }
        chain.push(puc);
    }
    (chain, None)
}

/// Builds the per-splitter side structure from the finished paths.
fn splitter_tree(
    graph: &MeshGraph,
    paths: &[LightPath],
    proportion: &[f64],
    splitters: &BTreeSet<PucId>,
) -> BTreeMap<PucId, SplitterInfo> {
    let mut sides: BTreeMap<(PucId, ArcKind), SideInfo> = BTreeMap::new();
    for (path, &share) in paths.iter().zip(proportion) {
        for (pos, &arc_id) in path.arcs.iter().enumerate() {
            let arc = &graph.arcs()[arc_id as usize];
            let Some(puc) = arc.puc else { continue };
            if !splitters.contains(&puc) {
                continue;
            }
            let entry = sides.entry((puc, arc.kind)).or_insert_with(|| {
                let (chain, child) = walk_side(graph, path, pos, splitters);
                SideInfo {
                    demand: 0.0,
                    chain,
                    child,
                }
            });
            entry.demand += share;
        }
    }
    let mut tree: BTreeMap<PucId, SplitterInfo> = BTreeMap::new();
    for &puc in splitters {
        let bar = sides
            .remove(&(puc, ArcKind::Bar))
            .expect("a splitter has a bar branch");
        let cross = sides
            .remove(&(puc, ArcKind::Cross))
            .expect("a splitter has a cross branch");
        tree.insert(puc, SplitterInfo { bar, cross });
    }
    tree
}

/// Total deliverable transmission of one splitter side: the chain product
/// for a leaf branch, or the chain, the child's own loss, and the child
/// subtree's per-demand delivery scaled by this side's demand.
fn side_deliverable(
    side: &SideInfo,
    tree: &BTreeMap<PucId, SplitterInfo>,
    ils: &IlTable,
    done: &mut BTreeMap<PucId, f64>,
    order: &mut Vec<TunablePuc>,
) -> f64 {
    let chain: f64 = side.chain.iter().map(|&p| ils.transmission(p)).product();
    match side.child {
        None => chain,
        Some(child) => {
            let per_demand = compensate(child, tree, ils, done, order);
            chain * ils.transmission(child) * per_demand * side.demand
        }
    }
}

/// Recursively compensates splitters bottom-up. Returns, per splitter, the
/// factor a parent branch multiplies in for the whole subtree: k·E_cross/
/// W_cross scaled by the branch demand (identical through either side once
/// the splitter is compensated).
fn compensate(
    puc: PucId,
    tree: &BTreeMap<PucId, SplitterInfo>,
    ils: &IlTable,
    done: &mut BTreeMap<PucId, f64>,
    order: &mut Vec<TunablePuc>,
) -> f64 {
    if let Some(&per_demand) = done.get(&puc) {
        return per_demand;
    }
    let info = &tree[&puc];
    let e_bar = side_deliverable(&info.bar, tree, ils, done, order);
    let e_cross = side_deliverable(&info.cross, tree, ils, done, order);
    let il_bar_db = linear_to_db(e_bar);
    let il_cross_db = linear_to_db(e_cross);
    let total = info.bar.demand + info.cross.demand;
    let k_target = info.cross.demand / total;
    let k = 1.0 - splitting_ratio(1.0 - k_target, il_bar_db, il_cross_db);
    // Power fraction delivered per unit of demand, the invariant both
    // sides share once compensated.
    let per_demand = k * e_cross / info.cross.demand;
    done.insert(puc, per_demand);
    order.push(TunablePuc {
        puc,
        k_target,
        k,
        il_bar_db,
        il_cross_db,
    });
    per_demand
}

/// Transmission of one splitter branch in dB: the plain PUC-loss sum for a
/// branch ending at an output, or the child splitter's cross-side share,
/// its cross-branch transmission, and the connecting losses for a branch
/// feeding another splitter. Splitters must be compensated child-first;
/// asking for a branch whose child ratio is not computed yet is an error.
pub fn branch_insertion_loss(
    config: &MulticastConfig,
    graph: &MeshGraph,
    splitter: PucId,
    branch: ArcKind,
) -> Result<f64, MulticastError> {
    let splitters = get_tunable_pucs(&config.paths);
    if !splitters.contains(&splitter) {
        return Err(MulticastError::BadRequest(format!(
            "PUC {splitter} is not a splitter of this tree"
        )));
    }
    let tree = splitter_tree(graph, &config.paths, &config.proportion, &splitters);
    let ils = IlTable::new(graph, IlModel::PerPuc);
    let side = match branch {
        ArcKind::Bar => &tree[&splitter].bar,
        ArcKind::Cross => &tree[&splitter].cross,
        ArcKind::Waveguide => {
            return Err(MulticastError::BadRequest(
                "a splitter branch is bar or cross".into(),
            ))
        }
    };
    let chain_db: f64 = side.chain.iter().map(|&p| ils.il_db(p)).sum();
    match side.child {
        None => Ok(chain_db),
        Some(child) => {
            let child_entry = config
                .tunable_pucs
                .iter()
                .find(|t| t.puc == child)
                .ok_or_else(|| {
                    MulticastError::BadRequest(format!(
                        "child splitter {child} has no compensated ratio yet"
                    ))
                })?;
            Ok(10.0 * child_entry.k.log10()
                + child_entry.il_cross_db
                + chain_db
                + ils.il_db(child))
        }
    }
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

fn validate_request(request: &MulticastRequest) -> Result<(), MulticastError> {
    let bad = |message: String| Err(MulticastError::BadRequest(message));
    if request.output_ports.is_empty() {
        return bad("no output ports".into());
    }
    let mut seen: BTreeSet<PortId> = BTreeSet::new();
    for &port in &request.output_ports {
        if port == request.input_port {
            return bad(format!("port {port} is both input and output"));
        }
        if !seen.insert(port) {
            return bad(format!("output port {port} repeats"));
        }
    }
    if request.proportion.len() != request.output_ports.len() {
        return bad(format!(
            "{} outputs but {} proportions",
            request.output_ports.len(),
            request.proportion.len()
        ));
    }
    if request.proportion.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return bad("proportions must be positive and finite".into());
    }
    let sum: f64 = request.proportion.iter().sum();
    if (sum - 1.0).abs() > PROPORTION_SUM_TOLERANCE {
        return bad(format!("proportions sum to {sum}, expected 1"));
    }
    Ok(())
}

/// Grows the tree over the outputs in the given attach order, returning
/// the paths in that same order.
fn grow_tree(
    graph: &MeshGraph,
    input_port: PortId,
    output_ports: &[PortId],
    order: &[usize],
) -> Result<(Vec<LightPath>, TreeBuilder), MulticastError> {
    let mut tree = TreeBuilder::new();
    let mut paths: Vec<LightPath> = Vec::with_capacity(output_ports.len());
    for (index, &request_index) in order.iter().enumerate() {
        let out_port = output_ports[request_index];
        let (arcs, limb_start) = if index == 0 {
            let first = crate::interconnect::shortest_path(graph, input_port, out_port)
                .map_err(|source| MulticastError::Route { port: out_port, source })?;
            (first.arcs, 0)
        } else {
            extend_tree(graph, &tree, &paths, input_port, out_port)?
        };
        let path = LightPath::new(graph, input_port, out_port, arcs)
            .expect("tree extensions assemble into valid paths");
        tree.absorb(graph, index, &path, limb_start);
        paths.push(path);
    }
    Ok((paths, tree))
}

/// Grows the tree with conflict retries: outputs attach in request order,
/// and whenever one cannot join, the construction restarts with that
/// output attached first. Gives up once a blocked output has already had
/// first pick of the mesh.
fn grow_with_retries(
    graph: &MeshGraph,
    input_port: PortId,
    output_ports: &[PortId],
) -> Result<(Vec<LightPath>, TreeBuilder), MulticastError> {
    let mut order: Vec<usize> = (0..output_ports.len()).collect();
    let mut fronted: BTreeSet<PortId> = BTreeSet::new();
    loop {
        match grow_tree(graph, input_port, output_ports, &order) {
            Ok(done) => return Ok(done),
            Err(MulticastError::TreeConflict { out_port }) if fronted.insert(out_port) => {
                let position = order
                    .iter()
                    .position(|&i| output_ports[i] == out_port)
                    .expect("a conflicted output is part of the request");
                let index = order.remove(position);
                order.insert(0, index);
            }
            Err(error) => return Err(error),
        }
    }
}

/// Synthesizes a multicast circuit: grows a shortest-path tree from the
/// input over every output, then compensates each splitter child-first so
/// the simulated output powers match the requested shares under the chosen
/// loss model.
///
/// Outputs are attached in request order; when an output cannot join the
/// tree the construction restarts with that output attached first, so a
/// single awkwardly placed port does not wedge an otherwise feasible tree.
/// If every ordering of a loss-weighted search dead-ends, the tree shape
/// is re-grown with all couplers held at the mesh-average loss — a skewed
/// loss profile can consistently steer the greedy search into corners that
/// a loss-agnostic tree avoids. `TreeConflict` is returned only once both
/// strategies are exhausted.
pub fn auto_multicast(
    graph: &MeshGraph,
    request: &MulticastRequest,
) -> Result<MulticastConfig, MulticastError> {
    validate_request(request)?;
    check_port(graph, request.input_port).map_err(|source| MulticastError::Route {
        port: request.input_port,
        source,
    })?;
    for &port in &request.output_ports {
        check_port(graph, port).map_err(|source| MulticastError::Route {
            port,
            source,
        })?;
    }

    let (grown, tree) = match grow_with_retries(graph, request.input_port, &request.output_ports)
    {
        Ok(done) => done,
        Err(original @ MulticastError::TreeConflict { .. }) => {
            let topo = graph.topology();
            let mean = topo.mean_il_db();
            if topo.pucs.iter().all(|p| (p.il_db - mean).abs() < 1e-12) {
                // Losses are already uniform; there is no second shape to try.
                return Err(original);
            }
            let mut flat_topo = topo.clone();
            for puc in &mut flat_topo.pucs {
                puc.il_db = mean;
            }
            let flat = build_graph(&flat_topo, *graph.coeffs())
                .expect("a topology that built once builds again with uniform losses");
            match grow_with_retries(&flat, request.input_port, &request.output_ports) {
                Ok((flat_paths, tree)) => {
                    // Identical connectivity means identical arc tables, so
                    // the walks carry over; rebuilding each path against the
                    // caller's graph restores the true weights.
                    let paths = flat_paths
                        .into_iter()
                        .map(|p| {
                            LightPath::new(graph, request.input_port, p.out_port, p.arcs)
                                .expect("uniform-loss walks stay valid on the original graph")
                        })
                        .collect();
                    (paths, tree)
                }
                Err(_) => return Err(original),
            }
        }
        Err(error) => return Err(error),
    };

    // Back into request order, which everything downstream (proportions,
    // reports) is parallel to.
    let mut by_port: BTreeMap<PortId, LightPath> =
        grown.into_iter().map(|p| (p.out_port, p)).collect();
    let paths: Vec<LightPath> = request
        .output_ports
        .iter()
        .map(|p| by_port.remove(p).expect("every output was attached"))
        .collect();

    let splitters = get_tunable_pucs(&paths);
    debug_assert_eq!(
        splitters.len() + 1,
        paths.len(),
        "every added output flips exactly one coupling into a splitter"
    );
    let branch_tree = splitter_tree(graph, &paths, &request.proportion, &splitters);
    let ils = IlTable::new(graph, request.il_model);
    let mut done: BTreeMap<PucId, f64> = BTreeMap::new();
    let mut tunable_pucs: Vec<TunablePuc> = Vec::with_capacity(splitters.len());
    for &puc in &splitters {
        compensate(puc, &branch_tree, &ils, &mut done, &mut tunable_pucs);
    }

    let mut states: BTreeMap<PucId, PucState> = tree.held.clone();
    for entry in &tunable_pucs {
        debug_assert!(
            entry.k > 0.0 && entry.k < 1.0,
            "a splitter with demand on both sides stays strictly inside (0,1)"
        );
        states.insert(entry.puc, PucState::TunableCoupler(entry.k));
    }

    let mut port_sides: BTreeMap<PortId, PucPort> = BTreeMap::new();
    port_sides.insert(request.input_port, paths[0].entry_stub(graph));
    for path in &paths {
        port_sides.insert(path.out_port, path.exit_stub(graph));
    }

    Ok(MulticastConfig {
        input_port: request.input_port,
        output_ports: request.output_ports.clone(),
        proportion: request.proportion.clone(),
        paths,
        tunable_pucs,
        states,
        port_sides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, WeightCoeffs};
    use crate::interconnect::shortest_path;
    use crate::topology::{generate_hex_mesh, PucDefaults};

    fn mesh(rows: u32, cols: u32) -> MeshGraph {
        let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
        build_graph(&topo, WeightCoeffs::default()).unwrap()
    }

    #[test]
    fn splitting_ratio_reduces_to_the_ideal_for_equal_losses() {
        for k_t in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            assert_eq!(splitting_ratio(k_t, -0.86, -0.86), k_t);
        }
    }

    #[test]
    fn splitting_ratio_pins_the_boundaries() {
        assert_eq!(splitting_ratio(0.0, -1.0, -0.5), 0.0);
        assert_eq!(splitting_ratio(1.0, -1.0, -0.5), 1.0);
    }

    #[test]
    fn splitting_ratio_compensates_toward_the_lossier_branch() {
        let k = splitting_ratio(0.5, -1.0, -0.5);
        assert!(
            (k - 0.5287505638922686).abs() < 1e-12,
            "got {k}, expected 0.52875056..."
        );
        // The first argument and the result are both fractions for the
        // branch whose loss is the second argument: a lossier branch must
        // receive extra launch power.
        assert!(k > 0.5);
    }

    #[test]
    fn a_single_path_has_no_splitters() {
        let graph = mesh(1, 1);
        let path = shortest_path(&graph, 0, 10).unwrap();
        assert!(get_tunable_pucs(std::slice::from_ref(&path)).is_empty());
    }

    #[test]
    fn identical_couplings_are_not_splitters() {
        let graph = mesh(1, 1);
        let path = shortest_path(&graph, 0, 10).unwrap();
        let twice = vec![path.clone(), path];
        assert!(get_tunable_pucs(&twice).is_empty());
    }

    #[test]
    fn the_three_way_tree_has_two_splitters() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 4, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        let census = get_tunable_pucs(&config.paths);
        assert_eq!(census.len(), 2);
        let listed: BTreeSet<PucId> = config.tunable_pucs.iter().map(|t| t.puc).collect();
        assert_eq!(census, listed);
    }

    #[test]
    fn target_ratios_are_demand_shares() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 4, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        let ratios = target_ratios(&config.paths, &request.proportion).unwrap();
        // Output 2 leaves the first splitter on its bar side; the other two
        // outputs continue on the cross side and split once more.
        assert_eq!(ratios.len(), 2);
        assert!((ratios[&0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((ratios[&2] - 0.5).abs() < 1e-12);

        let skewed = [0.7, 0.2, 0.1];
        let ratios = target_ratios(&config.paths, &skewed).unwrap();
        assert!((ratios[&0] - 0.3).abs() < 1e-12);
        assert!((ratios[&2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn target_ratios_reject_mismatched_lengths() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        assert!(matches!(
            target_ratios(&config.paths, &[1.0]),
            Err(MulticastError::BadRequest(_))
        ));
    }

    #[test]
    fn demand_shares_telescope_into_the_proportions() {
        let graph = mesh(2, 2);
        let proportion = vec![0.5, 0.3, 0.2];
        let request = MulticastRequest::with_proportion(19, vec![6, 4, 0], proportion.clone());
        let config = auto_multicast(&graph, &request).unwrap();
        let ratios = target_ratios(&config.paths, &proportion).unwrap();
        for (path, &share) in config.paths.iter().zip(&proportion) {
            let mut product = 1.0;
            for (&puc, &state) in &path.required_states {
                let Some(&cross_share) = ratios.get(&puc) else { continue };
                product *= match state {
                    PucState::Cross => cross_share,
                    _ => 1.0 - cross_share,
                };
            }
            assert!(
                (product - share).abs() < 1e-12,
                "path to {} gets {product}, wanted {share}",
                path.out_port
            );
        }
    }

    #[test]
    fn branch_losses_sum_leaf_chains() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 4, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        // Splitter 2 feeds output 4 directly (empty branch) and output 10
        // through the three remaining ring couplers.
        let long = branch_insertion_loss(&config, &graph, 2, ArcKind::Bar).unwrap();
        assert!((long + 0.645).abs() < 1e-12, "got {long}");
        let adjacent = branch_insertion_loss(&config, &graph, 2, ArcKind::Cross).unwrap();
        assert!(adjacent.abs() < 1e-12, "got {adjacent}");
    }

    #[test]
    fn branch_losses_weight_child_splitters_by_their_ratio() {
        let graph = mesh(2, 2);
        let request = MulticastRequest::uniform(19, vec![6, 4, 0]);
        let config = auto_multicast(&graph, &request).unwrap();
        // The child splitter has one equally lossy coupler on each side, so
        // its compensated ratio stays exactly one half...
        let child = config.tunable_pucs.iter().find(|t| t.puc == 8).unwrap();
        assert_eq!(child.k, 0.5);
        assert!((child.il_bar_db + 0.215).abs() < 1e-12);
        assert!((child.il_cross_db + 0.215).abs() < 1e-12);
        // ...and the parent branch hosting it pays half the power, the
        // child's onward coupler, and the two connecting couplers.
        let hosting = branch_insertion_loss(&config, &graph, 2, ArcKind::Cross).unwrap();
        assert!(
            (hosting - -3.655299956639812).abs() < 1e-9,
            "got {hosting}"
        );
        let direct = branch_insertion_loss(&config, &graph, 2, ArcKind::Bar).unwrap();
        assert!((direct + 0.215).abs() < 1e-12);
    }

    #[test]
    fn branch_losses_reject_foreign_pucs_and_waveguides() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        assert!(matches!(
            branch_insertion_loss(&config, &graph, 5, ArcKind::Bar),
            Err(MulticastError::BadRequest(_))
        ));
        assert!(matches!(
            branch_insertion_loss(&config, &graph, 0, ArcKind::Waveguide),
            Err(MulticastError::BadRequest(_))
        ));
    }

    #[test]
    fn a_single_output_degenerates_to_a_plain_route() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![10]);
        let config = auto_multicast(&graph, &request).unwrap();
        let direct = shortest_path(&graph, 0, 10).unwrap();
        assert_eq!(config.paths.len(), 1);
        assert_eq!(config.paths[0].arcs, direct.arcs);
        assert!(config.tunable_pucs.is_empty());
        assert_eq!(config.states, direct.required_states);
    }

    #[test]
    fn every_added_output_creates_exactly_one_splitter() {
        let graph = mesh(5, 3);
        for n in 1..=6 {
            let outputs: Vec<PortId> = [2, 4, 6, 8, 10, 12][..n].to_vec();
            let request = MulticastRequest::uniform(0, outputs);
            let config = auto_multicast(&graph, &request).unwrap();
            assert_eq!(config.tunable_pucs.len(), n - 1);
            for tc in &config.tunable_pucs {
                assert!(tc.k > 0.0 && tc.k < 1.0);
                assert!(matches!(
                    config.states[&tc.puc],
                    PucState::TunableCoupler(_)
                ));
            }
        }
    }

    #[test]
    fn splitters_are_listed_child_before_parent() {
        let graph = mesh(5, 3);
        let request = MulticastRequest::uniform(0, vec![2, 4, 6, 8, 10, 12]);
        let config = auto_multicast(&graph, &request).unwrap();
        let index: BTreeMap<PucId, usize> = config
            .tunable_pucs
            .iter()
            .enumerate()
            .map(|(i, t)| (t.puc, i))
            .collect();
        for path in &config.paths {
            let mut along: Vec<PucId> = Vec::new();
            for &arc_id in &path.arcs {
                if let Some(puc) = graph.arcs()[arc_id as usize].puc {
                    if index.contains_key(&puc) {
                        along.push(puc);
                    }
                }
            }
            for pair in along.windows(2) {
                assert!(
                    index[&pair[1]] < index[&pair[0]],
                    "downstream splitter {} must be compensated before {}",
                    pair[1],
                    pair[0]
                );
            }
        }
    }

    #[test]
    fn paths_agree_with_the_assembled_states() {
        let graph = mesh(5, 3);
        let request = MulticastRequest::uniform(0, vec![2, 4, 6, 8, 10, 12]);
        let config = auto_multicast(&graph, &request).unwrap();
        for path in &config.paths {
            for (&puc, &state) in &path.required_states {
                match config.states[&puc] {
                    PucState::TunableCoupler(_) => {}
                    fixed => assert_eq!(fixed, state, "PUC {puc}"),
                }
            }
        }
    }

    #[test]
    fn twin_outputs_take_distinct_exit_stubs() {
        // Ports 2 and 3 share one physical corner; the tree must reach its
        // two stubs separately. (On a bare six-coupler ring this is
        // geometrically impossible — both approaches land on the same
        // coupler side — so this needs the full-size mesh.)
        let graph = mesh(5, 3);
        let request = MulticastRequest::uniform(0, vec![2, 3]);
        let config = auto_multicast(&graph, &request).unwrap();
        assert_ne!(
            config.paths[0].exit_stub(&graph),
            config.paths[1].exit_stub(&graph)
        );
    }

    #[test]
    fn malformed_requests_are_rejected() {
        let graph = mesh(1, 1);
        let cases: Vec<MulticastRequest> = vec![
            MulticastRequest::uniform(0, vec![]),
            MulticastRequest::uniform(0, vec![10, 10]),
            MulticastRequest::uniform(0, vec![10, 0]),
            MulticastRequest::with_proportion(0, vec![10, 11], vec![1.0]),
            MulticastRequest::with_proportion(0, vec![10, 11], vec![0.9, -0.1]),
            MulticastRequest::with_proportion(0, vec![10, 11], vec![0.9, 0.2]),
        ];
        for request in cases {
            assert!(
                matches!(
                    auto_multicast(&graph, &request),
                    Err(MulticastError::BadRequest(_))
                ),
                "request {request:?} should be malformed"
            );
        }
    }

    #[test]
    fn unusable_and_unknown_ports_are_routing_errors() {
        let graph = mesh(1, 1);
        let unknown = MulticastRequest::uniform(0, vec![99]);
        assert!(matches!(
            auto_multicast(&graph, &unknown),
            Err(MulticastError::Route {
                port: 99,
                source: RouteError::UnknownPort(99),
            })
        ));
        let unusable = MulticastRequest::uniform(0, vec![5]);
        assert!(matches!(
            auto_multicast(&graph, &unusable),
            Err(MulticastError::Route {
                port: 5,
                source: RouteError::UnusablePort(5),
            })
        ));
        let bad_input = MulticastRequest::uniform(99, vec![10]);
        assert!(matches!(
            auto_multicast(&graph, &bad_input),
            Err(MulticastError::Route { port: 99, .. })
        ));
    }

    #[test]
    fn a_saturated_ring_reports_a_tree_conflict() {
        let graph = mesh(1, 1);
        // Three outputs consume the hexagon ring; the fourth stays
        // reachable in isolation but cannot join the tree without forcing
        // some coupler into a third role.
        let request = MulticastRequest::uniform(0, vec![4, 9, 10, 11]);
        match auto_multicast(&graph, &request) {
            Err(MulticastError::TreeConflict { out_port: 11 }) => {}
            other => panic!("expected a tree conflict on port 11, got {other:?}"),
        }
        assert!(shortest_path(&graph, 0, 11).is_ok());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let graph = mesh(5, 3);
        let request = MulticastRequest::uniform(0, vec![21, 23, 25, 27, 30, 35]);
        let first = auto_multicast(&graph, &request).unwrap();
        let second = auto_multicast(&graph, &request).unwrap();
        for (a, b) in first.paths.iter().zip(&second.paths) {
            assert_eq!(a.arcs, b.arcs);
        }
        assert_eq!(first.tunable_pucs, second.tunable_pucs);
        assert_eq!(first.states, second.states);
        assert_eq!(first.port_sides, second.port_sides);
    }
}
