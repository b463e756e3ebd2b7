//! Point-to-point routing between external ports.
//!
//! The central routine is a multi-source, multi-sink Dijkstra search over
//! the routing graph with a deterministic total tie-break: paths are
//! compared by total effective weight, then by number of PUC traversals,
//! then by lexicographic node sequence. The same engine, parameterised by
//! arc filters and pre-occupied nodes, backs the switching and multicast
//! solvers.
//!
//! Searched paths are always node-simple. A node-simple path can still
//! require one PUC in two different couplings (it enters the PUC twice on
//! disjoint track pairs); such paths are physically unrealisable, so the
//! search result is post-checked and, in the rare case it trips, re-solved
//! exactly with a coupling-aware A* over (node, held-states) labels.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::time::Instant;

use thiserror::Error;

use crate::graph::{Arc, ArcId, ArcKind, LightPath, MeshGraph, NodeId};
use crate::topology::{PortId, PucId};

/// Errors raised by routing operations.
#[derive(Debug, Error)]
pub enum RouteError {
    #[error("unknown external port {0}")]
    UnknownPort(PortId),
    #[error("external port {0} is not usable (bottom boundary is not fibre-coupled)")]
    UnusablePort(PortId),
    #[error("input and output port must differ (got {0} twice)")]
    SamePort(PortId),
    #[error("no route from port {in_port} to port {out_port} under the given constraints")]
    NoRoute { in_port: PortId, out_port: PortId },
    #[error("search budget exhausted routing port {in_port} to port {out_port}")]
    SearchExhausted { in_port: PortId, out_port: PortId },
}

/// Raw search result before light-path packaging.
#[derive(Debug, Clone)]
pub(crate) struct RawPath {
    pub arcs: Vec<ArcId>,
}

#[derive(Clone, Copy)]
struct HeapKey {
    dist: f64,
    hops: u32,
    node: NodeId,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.hops.cmp(&other.hops))
            .then_with(|| self.node.cmp(&other.node))
    }
}

#[derive(Clone, Copy)]
struct Label {
    dist: f64,
    hops: u32,
    pred: Option<(NodeId, ArcId)>,
    settled: bool,
}

/// Node sequence of a label chain, seed first.
fn chain_nodes(labels: &[Option<Label>], node: NodeId) -> Vec<NodeId> {
    let mut rev = vec![node];
    let mut pred = labels[node as usize].as_ref().unwrap().pred;
    while let Some((p, _)) = pred {
        rev.push(p);
        pred = labels[p as usize].as_ref().unwrap().pred;
    }
    rev.reverse();
    rev
}

fn chain_arcs(labels: &[Option<Label>], node: NodeId) -> Vec<ArcId> {
    let mut rev = Vec::new();
    let mut cursor = node;
    while let Some((p, arc)) = labels[cursor as usize].as_ref().unwrap().pred {
        rev.push(arc);
        cursor = p;
    }
    rev.reverse();
    rev
}

/// Multi-source, multi-sink shortest path with the (weight, PUC count,
/// node sequence) tie-break.
///
/// `seeds` start at distance zero. Arcs into `closed` nodes are never
/// relaxed, which pins pre-occupied labels (used by the multicast solver to
/// grow from an existing tree). `allow` filters usable arcs. Returns `None`
/// when no goal is reachable; goals reached by an empty path (seed goals)
/// are ignored.
pub(crate) fn search_raw(
    graph: &MeshGraph,
    seeds: &[NodeId],
    goals: &BTreeSet<NodeId>,
    closed: &BTreeSet<NodeId>,
    allow: impl Fn(&Arc) -> bool,
) -> Option<RawPath> {
    let mut labels: Vec<Option<Label>> = vec![None; graph.node_count()];
    let mut heap: BinaryHeap<std::cmp::Reverse<HeapKey>> = BinaryHeap::new();
    for &seed in seeds {
        if labels[seed as usize].is_none() {
            labels[seed as usize] = Some(Label {
                dist: 0.0,
                hops: 0,
                pred: None,
                settled: false,
            });
            heap.push(std::cmp::Reverse(HeapKey {
                dist: 0.0,
                hops: 0,
                node: seed,
            }));
        }
    }

    let mut best_goal: Option<(f64, u32)> = None;
    let mut settled_goals: Vec<NodeId> = Vec::new();
    while let Some(std::cmp::Reverse(key)) = heap.pop() {
        let label = match &labels[key.node as usize] {
            Some(l) => *l,
            None => continue,
        };
        if label.settled || label.dist != key.dist || label.hops != key.hops {
            continue;
        }
        if let Some((bd, bh)) = best_goal {
            if (key.dist, key.hops) > (bd, bh) {
                break;
            }
        }
        labels[key.node as usize].as_mut().unwrap().settled = true;
        if goals.contains(&key.node) && label.pred.is_some() {
            if best_goal.is_none() {
                best_goal = Some((key.dist, key.hops));
            }
            settled_goals.push(key.node);
        }

        for &arc_id in graph.out_arcs(key.node) {
            let arc = &graph.arcs()[arc_id as usize];
            if !allow(arc) {
                continue;
            }
            let v = arc.head;
            if closed.contains(&v) {
                continue;
            }
            let cand_dist = label.dist + arc.effective_weight();
            let cand_hops = label.hops + u32::from(arc.is_internal());
            match &labels[v as usize] {
                None => {
                    labels[v as usize] = Some(Label {
                        dist: cand_dist,
                        hops: cand_hops,
                        pred: Some((key.node, arc_id)),
                        settled: false,
                    });
                    heap.push(std::cmp::Reverse(HeapKey {
                        dist: cand_dist,
                        hops: cand_hops,
                        node: v,
                    }));
                }
                Some(existing) if !existing.settled => {
                    let old = (existing.dist, existing.hops);
                    if (cand_dist, cand_hops) < old {
                        labels[v as usize] = Some(Label {
                            dist: cand_dist,
                            hops: cand_hops,
                            pred: Some((key.node, arc_id)),
                            settled: false,
                        });
                        heap.push(std::cmp::Reverse(HeapKey {
                            dist: cand_dist,
                            hops: cand_hops,
                            node: v,
                        }));
                    } else if (cand_dist, cand_hops) == old {
                        // Equal distance and hop count: keep the
                        // lexicographically smaller node sequence. Both
                        // candidate chains end at v, so the comparison
                        // always resolves before either sequence runs out.
                        let (pred_node, _) = existing.pred.expect("tied label cannot be a seed");
                        let mut old_chain = chain_nodes(&labels, pred_node);
                        old_chain.push(v);
                        let mut new_chain = chain_nodes(&labels, key.node);
                        new_chain.push(v);
                        if new_chain < old_chain {
                            labels[v as usize].as_mut().unwrap().pred = Some((key.node, arc_id));
                        }
                    }
                }
                Some(_) => {}
            }
        }
    }

    let best = settled_goals
        .into_iter()
        .filter(|&g| {
            let l = labels[g as usize].as_ref().unwrap();
            best_goal == Some((l.dist, l.hops))
        })
        .min_by(|&a, &b| chain_nodes(&labels, a).cmp(&chain_nodes(&labels, b)))?;
    Some(RawPath {
        arcs: chain_arcs(&labels, best),
    })
}

/// Whether an arc sequence holds each PUC in at most one coupling.
fn states_consistent(graph: &MeshGraph, arcs: &[ArcId]) -> bool {
    let mut states: BTreeMap<PucId, ArcKind> = BTreeMap::new();
    for &arc_id in arcs {
        let arc = &graph.arcs()[arc_id as usize];
        if let Some(puc) = arc.puc {
            match states.get(&puc) {
                None => {
                    states.insert(puc, arc.kind);
                }
                Some(kind) if *kind != arc.kind => return false,
                Some(_) => {}
            }
        }
    }
    true
}

/// Search overflow marker for the coupling-aware fallback.
pub(crate) struct SearchOverflow;

/// Expansion budget of the coupling-aware fallback search.
const FALLBACK_EXPANSION_CAP: usize = 200_000;

/// Like [`search_raw`] but guaranteeing a coupling-consistent result, using
/// an exact A* over (node, held bar set, held cross set) labels when the
/// plain search returns a physically unrealisable path. Supports meshes of
/// up to 128 PUCs (the held sets are bit masks).
pub(crate) fn search_state_consistent(
    graph: &MeshGraph,
    seeds: &[NodeId],
    goals: &BTreeSet<NodeId>,
    closed: &BTreeSet<NodeId>,
    allow: impl Fn(&Arc) -> bool + Copy,
) -> Result<Option<RawPath>, SearchOverflow> {
    match search_raw(graph, seeds, goals, closed, allow) {
        None => Ok(None),
        Some(raw) if states_consistent(graph, &raw.arcs) => Ok(Some(raw)),
        Some(_) => fallback_search(graph, seeds, goals, closed, allow),
    }
}

struct FallbackState {
    node: NodeId,
    bar_mask: u128,
    cross_mask: u128,
    g: f64,
    hops: u32,
    parent: Option<(usize, ArcId)>,
}

#[derive(Clone, Copy)]
struct FallbackKey {
    f: f64,
    hops: u32,
    order: usize,
    state: usize,
}

impl PartialEq for FallbackKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FallbackKey {}
impl PartialOrd for FallbackKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FallbackKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| self.hops.cmp(&other.hops))
            .then_with(|| self.order.cmp(&other.order))
    }
}

/// Lower bounds on the remaining distance to any goal, by reverse Dijkstra
/// over the same arc filter (pre-occupied nodes ignored, which only lowers
/// the bound and keeps it admissible).
fn reverse_distances(
    graph: &MeshGraph,
    goals: &BTreeSet<NodeId>,
    allow: impl Fn(&Arc) -> bool,
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap: BinaryHeap<std::cmp::Reverse<HeapKey>> = BinaryHeap::new();
    for &g in goals {
        dist[g as usize] = 0.0;
        heap.push(std::cmp::Reverse(HeapKey {
            dist: 0.0,
            hops: 0,
            node: g,
        }));
    }
    while let Some(std::cmp::Reverse(key)) = heap.pop() {
        if key.dist > dist[key.node as usize] {
            continue;
        }
        for &arc_id in graph.in_arcs(key.node) {
            let arc = &graph.arcs()[arc_id as usize];
            if !allow(arc) {
                continue;
            }
            let u = arc.tail;
            let cand = key.dist + arc.effective_weight();
            if cand < dist[u as usize] {
                dist[u as usize] = cand;
                heap.push(std::cmp::Reverse(HeapKey {
                    dist: cand,
                    hops: 0,
                    node: u,
                }));
            }
        }
    }
    dist
}

fn fallback_search(
    graph: &MeshGraph,
    seeds: &[NodeId],
    goals: &BTreeSet<NodeId>,
    closed: &BTreeSet<NodeId>,
    allow: impl Fn(&Arc) -> bool + Copy,
) -> Result<Option<RawPath>, SearchOverflow> {
    if graph.topology().pucs.len() > 128 {
        return Err(SearchOverflow);
    }
    let h = reverse_distances(graph, goals, allow);
    let mut arena: Vec<FallbackState> = Vec::new();
    let mut best_g: HashMap<(NodeId, u128, u128), f64> = HashMap::new();
    let mut heap: BinaryHeap<std::cmp::Reverse<FallbackKey>> = BinaryHeap::new();
    let mut order = 0usize;
    for &seed in seeds {
        if h[seed as usize].is_infinite() {
            continue;
        }
        arena.push(FallbackState {
            node: seed,
            bar_mask: 0,
            cross_mask: 0,
            g: 0.0,
            hops: 0,
            parent: None,
        });
        best_g.insert((seed, 0, 0), 0.0);
        heap.push(std::cmp::Reverse(FallbackKey {
            f: h[seed as usize],
            hops: 0,
            order,
            state: arena.len() - 1,
        }));
        order += 1;
    }

    let mut expansions = 0usize;
    while let Some(std::cmp::Reverse(key)) = heap.pop() {
        let (node, bar_mask, cross_mask, g, hops, parent_is_none) = {
            let s = &arena[key.state];
            (s.node, s.bar_mask, s.cross_mask, s.g, s.hops, s.parent.is_none())
        };
        if best_g
            .get(&(node, bar_mask, cross_mask))
            .is_some_and(|&bg| g > bg)
        {
            continue;
        }
        if goals.contains(&node) && !parent_is_none {
            let mut rev = Vec::new();
            let mut cursor = key.state;
            while let Some((p, arc)) = arena[cursor].parent {
                rev.push(arc);
                cursor = p;
            }
            rev.reverse();
            return Ok(Some(RawPath { arcs: rev }));
        }
        expansions += 1;
        if expansions > FALLBACK_EXPANSION_CAP {
            return Err(SearchOverflow);
        }

        for &arc_id in graph.out_arcs(node) {
            let arc = &graph.arcs()[arc_id as usize];
            if !allow(arc) {
                continue;
            }
            let v = arc.head;
            if closed.contains(&v) {
                continue;
            }
            let (mut bar2, mut cross2) = (bar_mask, cross_mask);
            if let Some(puc) = arc.puc {
                let bit = 1u128 << puc;
                match arc.kind {
                    ArcKind::Bar => {
                        if cross_mask & bit != 0 {
                            continue;
                        }
                        bar2 |= bit;
                    }
                    ArcKind::Cross => {
                        if bar_mask & bit != 0 {
                            continue;
                        }
                        cross2 |= bit;
                    }
                    ArcKind::Waveguide => unreachable!(),
                }
            }
            let g2 = g + arc.effective_weight();
            if h[v as usize].is_infinite() {
                continue;
            }
            let slot = best_g.entry((v, bar2, cross2)).or_insert(f64::INFINITY);
            if g2 < *slot {
                *slot = g2;
                arena.push(FallbackState {
                    node: v,
                    bar_mask: bar2,
                    cross_mask: cross2,
                    g: g2,
                    hops: hops + u32::from(arc.is_internal()),
                    parent: Some((key.state, arc_id)),
                });
                heap.push(std::cmp::Reverse(FallbackKey {
                    f: g2 + h[v as usize],
                    hops: hops + u32::from(arc.is_internal()),
                    order,
                    state: arena.len() - 1,
                }));
                order += 1;
            }
        }
    }
    Ok(None)
}

/// Extra constraints for constrained routing.
#[derive(Default, Clone, Copy)]
pub(crate) struct RouteConstraints<'a> {
    /// PUCs whose internal arcs must not be used (failed or reserved).
    pub forbidden_pucs: Option<&'a BTreeSet<PucId>>,
    /// Injection nodes that may be used (defaults to all stubs of the port).
    pub entry_allowed: Option<&'a BTreeSet<NodeId>>,
    /// Extraction nodes that may be used.
    pub exit_allowed: Option<&'a BTreeSet<NodeId>>,
    /// Couplings already programmed into the mesh: internal arcs of a
    /// listed PUC may only be traversed in the listed kind.
    pub state_locks: Option<&'a BTreeMap<PucId, ArcKind>>,
}

pub(crate) fn check_port(graph: &MeshGraph, port: PortId) -> Result<(), RouteError> {
    if graph.topology().external_port(port).is_none() {
        return Err(RouteError::UnknownPort(port));
    }
    if !graph.topology().is_usable(port) {
        return Err(RouteError::UnusablePort(port));
    }
    Ok(())
}

/// Constrained single-pair routing shared by the public operations.
pub(crate) fn route_between_ports(
    graph: &MeshGraph,
    in_port: PortId,
    out_port: PortId,
    constraints: RouteConstraints<'_>,
) -> Result<LightPath, RouteError> {
    check_port(graph, in_port)?;
    check_port(graph, out_port)?;
    if in_port == out_port {
        return Err(RouteError::SamePort(in_port));
    }

    let no_route = RouteError::NoRoute { in_port, out_port };
    let seeds: Vec<NodeId> = graph
        .port_entry_nodes(in_port)
        .unwrap()
        .iter()
        .copied()
        .filter(|n| constraints.entry_allowed.map_or(true, |set| set.contains(n)))
        .collect();
    let goals: BTreeSet<NodeId> = graph
        .port_exit_nodes(out_port)
        .unwrap()
        .iter()
        .copied()
        .filter(|n| constraints.exit_allowed.map_or(true, |set| set.contains(n)))
        .collect();
    if seeds.is_empty() || goals.is_empty() {
        return Err(no_route);
    }

    let forbidden = constraints.forbidden_pucs;
    let locks = constraints.state_locks;
    let allow = |arc: &Arc| -> bool {
        let Some(puc) = arc.puc else { return true };
        if forbidden.is_some_and(|set| set.contains(&puc)) {
            return false;
        }
        locks
            .and_then(|map| map.get(&puc))
            .map_or(true, |&kind| arc.kind == kind)
    };
    let closed = BTreeSet::new();
    match search_state_consistent(graph, &seeds, &goals, &closed, allow) {
        Ok(Some(raw)) => Ok(LightPath::new(graph, in_port, out_port, raw.arcs)
            .expect("search yields structurally valid paths")),
        Ok(None) => Err(no_route),
        Err(SearchOverflow) => Err(RouteError::SearchExhausted { in_port, out_port }),
    }
}

/// Minimum-weight route between two usable external ports.
///
/// Ties on weight are broken towards fewer PUC traversals and then the
/// lexicographically smallest node sequence, so the result is a pure
/// function of the graph.
pub fn shortest_path(
    graph: &MeshGraph,
    in_port: PortId,
    out_port: PortId,
) -> Result<LightPath, RouteError> {
    route_between_ports(graph, in_port, out_port, RouteConstraints::default())
}

/// Re-routes a connection around failed PUCs. With no failures this is
/// exactly [`shortest_path`].
pub fn self_heal(
    graph: &MeshGraph,
    in_port: PortId,
    out_port: PortId,
    failed_pucs: &BTreeSet<PucId>,
) -> Result<LightPath, RouteError> {
    route_between_ports(
        graph,
        in_port,
        out_port,
        RouteConstraints {
            forbidden_pucs: Some(failed_pucs),
            ..RouteConstraints::default()
        },
    )
}

/// Every route between two ports traversing at most `max_pucs` distinct
/// PUCs, sorted by (weight, PUC traversals, node sequence).
///
/// The enumeration is exhaustive over node-simple, coupling-consistent
/// paths, which makes it an independent optimality oracle for
/// [`shortest_path`] on small meshes; cost grows exponentially with
/// `max_pucs` (values up to about 12 stay practical).
pub fn enumerate_paths(
    graph: &MeshGraph,
    in_port: PortId,
    out_port: PortId,
    max_pucs: u32,
) -> Result<Vec<LightPath>, RouteError> {
    check_port(graph, in_port)?;
    check_port(graph, out_port)?;
    if in_port == out_port {
        return Err(RouteError::SamePort(in_port));
    }

    let goals: BTreeSet<NodeId> = graph.port_exit_nodes(out_port).unwrap().iter().copied().collect();
    let mut results: Vec<LightPath> = Vec::new();
    let mut visited = vec![false; graph.node_count()];
    let mut arc_stack: Vec<ArcId> = Vec::new();
    let mut held: BTreeMap<PucId, ArcKind> = BTreeMap::new();

    struct Dfs<'a> {
        graph: &'a MeshGraph,
        goals: &'a BTreeSet<NodeId>,
        max_pucs: u32,
        in_port: PortId,
        out_port: PortId,
    }
    impl Dfs<'_> {
        fn run(
            &self,
            node: NodeId,
            visited: &mut Vec<bool>,
            arc_stack: &mut Vec<ArcId>,
            held: &mut BTreeMap<PucId, ArcKind>,
            results: &mut Vec<LightPath>,
        ) {
            if self.goals.contains(&node) && !arc_stack.is_empty() {
                let path =
                    LightPath::new(self.graph, self.in_port, self.out_port, arc_stack.clone())
                        .expect("enumerated arc stacks are valid paths");
                results.push(path);
                return;
            }
            for &arc_id in self.graph.out_arcs(node) {
                let arc = &self.graph.arcs()[arc_id as usize];
                if visited[arc.head as usize] {
                    continue;
                }
                let mut added_puc = None;
                if let Some(puc) = arc.puc {
                    match held.get(&puc) {
                        Some(kind) if *kind != arc.kind => continue,
                        Some(_) => {}
                        None => {
                            if held.len() as u32 >= self.max_pucs {
                                continue;
                            }
                            held.insert(puc, arc.kind);
                            added_puc = Some(puc);
                        }
                    }
                }
                visited[arc.head as usize] = true;
                arc_stack.push(arc_id);
                self.run(arc.head, visited, arc_stack, held, results);
                arc_stack.pop();
                visited[arc.head as usize] = false;
                if let Some(puc) = added_puc {
                    held.remove(&puc);
                }
            }
        }
    }

    let dfs = Dfs {
        graph,
        goals: &goals,
        max_pucs,
        in_port,
        out_port,
    };
    for &seed in graph.port_entry_nodes(in_port).unwrap() {
        visited[seed as usize] = true;
        dfs.run(seed, &mut visited, &mut arc_stack, &mut held, &mut results);
        visited[seed as usize] = false;
    }

    results.sort_by(|a, b| {
        a.total_weight
            .total_cmp(&b.total_weight)
            .then_with(|| a.hops(graph).cmp(&b.hops(graph)))
            .then_with(|| a.nodes(graph).cmp(&b.nodes(graph)))
    });
    Ok(results)
}

/// Latency statistics over a batch of routing calls, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub count: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl TimingStats {
    pub fn from_samples_us(mut samples: Vec<f64>) -> TimingStats {
        if samples.is_empty() {
            return TimingStats {
                count: 0,
                mean_us: 0.0,
                median_us: 0.0,
                p99_us: 0.0,
                min_us: 0.0,
                max_us: 0.0,
            };
        }
        samples.sort_by(f64::total_cmp);
        let count = samples.len();
        let rank = |p: f64| -> f64 {
            let idx = ((p * count as f64).ceil() as usize).clamp(1, count) - 1;
            samples[idx]
        };
        TimingStats {
            count,
            mean_us: samples.iter().sum::<f64>() / count as f64,
            median_us: rank(0.5),
            p99_us: rank(0.99),
            min_us: samples[0],
            max_us: samples[count - 1],
        }
    }
}

/// Routes every pair in order, returning per-pair outcomes plus latency
/// statistics over the individual routing calls.
pub fn route_batch(
    graph: &MeshGraph,
    pairs: &[(PortId, PortId)],
) -> (Vec<Result<LightPath, RouteError>>, TimingStats) {
    let mut outcomes = Vec::with_capacity(pairs.len());
    let mut samples = Vec::with_capacity(pairs.len());
    for &(in_port, out_port) in pairs {
        let started = Instant::now();
        let outcome = shortest_path(graph, in_port, out_port);
        samples.push(started.elapsed().as_secs_f64() * 1e6);
        outcomes.push(outcome);
    }
    (outcomes, TimingStats::from_samples_us(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, WeightCoeffs};
    use crate::topology::{generate_hex_mesh, MeshTopology, PucDefaults};

    fn graph_for(rows: u32, cols: u32) -> MeshGraph {
        let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
        build_graph(&topo, WeightCoeffs::default()).unwrap()
    }

    /// Two usable ports sitting on adjacent corners of the single hexagon.
    fn adjacent_hexagon_ports(graph: &MeshGraph) -> (PortId, PortId) {
        let topo = graph.topology();
        for &a in &topo.usable_ports {
            for &b in &topo.usable_ports {
                if a == b {
                    continue;
                }
                let pa = topo.external_port(a).unwrap();
                let pb = topo.external_port(b).unwrap();
                let shares_edge = pa
                    .joins
                    .iter()
                    .any(|ja| pb.joins.iter().any(|jb| ja.puc == jb.puc));
                if pa.position != pb.position && shares_edge {
                    return (a, b);
                }
            }
        }
        panic!("hexagon must expose adjacent usable corners");
    }

    #[test]
    fn hexagon_adjacent_corners_have_direct_and_ring_routes() {
        let graph = graph_for(1, 1);
        let (a, b) = adjacent_hexagon_ports(&graph);
        let best = shortest_path(&graph, a, b).unwrap();
        assert_eq!(best.puc_count, 1);
        assert!((best.total_weight - 0.215).abs() < 1e-12);

        let all = enumerate_paths(&graph, a, b, 6).unwrap();
        let counts: Vec<u32> = all.iter().map(|p| p.puc_count).collect();
        assert!(counts.contains(&1), "direct one-PUC route: {counts:?}");
        assert!(counts.contains(&5), "five-PUC ring detour: {counts:?}");
        assert_eq!(all[0].total_weight, best.total_weight);
        assert_eq!(all[0].arcs, best.arcs);
    }

    #[test]
    fn self_heal_detours_around_failed_puc() {
        let graph = graph_for(1, 1);
        let (a, b) = adjacent_hexagon_ports(&graph);
        let direct = shortest_path(&graph, a, b).unwrap();
        assert_eq!(self_heal(&graph, a, b, &BTreeSet::new()).unwrap(), direct);

        let failed: BTreeSet<PucId> = direct.required_states.keys().copied().collect();
        let detour = self_heal(&graph, a, b, &failed).unwrap();
        assert_eq!(detour.puc_count, 5);
        assert!((detour.total_weight - 5.0 * 0.215).abs() < 1e-12);

        // Killing every PUC joined to the input port leaves nothing to
        // inject into.
        let entry_pucs: BTreeSet<PucId> = graph
            .topology()
            .external_port(a)
            .unwrap()
            .joins
            .iter()
            .map(|j| j.puc)
            .collect();
        assert!(matches!(
            self_heal(&graph, a, b, &entry_pucs),
            Err(RouteError::NoRoute { .. })
        ));
    }

    #[test]
    fn shortest_matches_exhaustive_enumeration_on_small_meshes() {
        for (rows, cols) in [(1, 1), (2, 1)] {
            let graph = graph_for(rows, cols);
            let usable = graph.topology().usable_ports.clone();
            let max = graph.topology().pucs.len() as u32;
            for &a in &usable {
                for &b in &usable {
                    if a == b {
                        continue;
                    }
                    let all = enumerate_paths(&graph, a, b, max).unwrap();
                    match shortest_path(&graph, a, b) {
                        Ok(best) => {
                            assert_eq!(best.total_weight, all[0].total_weight, "{a}->{b}");
                        }
                        Err(RouteError::NoRoute { .. }) => assert!(all.is_empty()),
                        Err(other) => panic!("unexpected error {other:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn routing_is_deterministic() {
        let graph = graph_for(5, 3);
        let usable = &graph.topology().usable_ports;
        let (a, b) = (usable[0], usable[usable.len() / 2]);
        let first = shortest_path(&graph, a, b).unwrap();
        for _ in 0..5 {
            assert_eq!(shortest_path(&graph, a, b).unwrap(), first);
        }
    }

    #[test]
    fn path_weight_equals_sum_of_arc_weights() {
        let graph = graph_for(5, 3);
        let usable = &graph.topology().usable_ports;
        let path = shortest_path(&graph, usable[0], usable[usable.len() - 1]).unwrap();
        let total: f64 = path
            .arcs
            .iter()
            .map(|&a| graph.arc(a).unwrap().effective_weight())
            .sum();
        assert!((path.total_weight - total).abs() < 1e-12);
        assert!((path.total_weight - 0.215 * f64::from(path.hops(&graph))).abs() < 1e-9);
    }

    #[test]
    fn growing_exclusions_never_shorten_routes() {
        let graph = graph_for(5, 3);
        let usable = &graph.topology().usable_ports;
        let (a, b) = (usable[0], usable[usable.len() - 1]);
        let mut failed: BTreeSet<PucId> = BTreeSet::new();
        let mut last = 0.0;
        for _ in 0..4 {
            match self_heal(&graph, a, b, &failed) {
                Ok(path) => {
                    assert!(path.total_weight >= last - 1e-12);
                    last = path.total_weight;
                    // Fail a mid-route PUC and try again.
                    let mid = path.required_states.len() / 2;
                    let puc = *path.required_states.keys().nth(mid).unwrap();
                    failed.insert(puc);
                }
                Err(RouteError::NoRoute { .. }) => break,
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(failed.len() >= 2, "expected at least two healing rounds");
    }

    #[test]
    fn max_pucs_zero_yields_no_paths() {
        let graph = graph_for(1, 1);
        let (a, b) = adjacent_hexagon_ports(&graph);
        assert!(enumerate_paths(&graph, a, b, 0).unwrap().is_empty());
    }

    #[test]
    fn port_validation_errors() {
        let graph = graph_for(1, 1);
        let usable = graph.topology().usable_ports.clone();
        let unusable = (0..graph.topology().external_ports.len() as PortId)
            .find(|p| !graph.topology().is_usable(*p))
            .unwrap();
        assert!(matches!(
            shortest_path(&graph, 999, usable[0]),
            Err(RouteError::UnknownPort(999))
        ));
        assert!(matches!(
            shortest_path(&graph, usable[0], unusable),
            Err(RouteError::UnusablePort(_))
        ));
        assert!(matches!(
            shortest_path(&graph, usable[0], usable[0]),
            Err(RouteError::SamePort(_))
        ));
    }

    #[test]
    fn batch_routing_matches_individual_calls() {
        let graph = graph_for(5, 3);
        let usable = &graph.topology().usable_ports;
        let pairs: Vec<(PortId, PortId)> = (1..6).map(|i| (usable[0], usable[i])).collect();
        let (outcomes, stats) = route_batch(&graph, &pairs);
        assert_eq!(outcomes.len(), pairs.len());
        assert_eq!(stats.count, pairs.len());
        assert!(stats.min_us <= stats.median_us && stats.median_us <= stats.max_us);
        for (outcome, &(a, b)) in outcomes.iter().zip(&pairs) {
            assert_eq!(outcome.as_ref().unwrap(), &shortest_path(&graph, a, b).unwrap());
        }
    }

    #[test]
    fn timing_stats_percentiles() {
        let stats = TimingStats::from_samples_us((1..=100).map(f64::from).collect());
        assert_eq!(stats.count, 100);
        assert!((stats.mean_us - 50.5).abs() < 1e-9);
        assert_eq!(stats.median_us, 50.0);
        assert_eq!(stats.p99_us, 99.0);
        assert_eq!(stats.min_us, 1.0);
        assert_eq!(stats.max_us, 100.0);
    }

    #[test]
    fn reference_mesh_routes_every_usable_pair() {
        let graph = build_graph(&MeshTopology::mesh72(), WeightCoeffs::default()).unwrap();
        let usable = graph.topology().usable_ports.clone();
        for &a in &usable {
            for &b in &usable {
                if a == b {
                    continue;
                }
                let path = shortest_path(&graph, a, b).unwrap();
                assert!(path.puc_count >= 1);
            }
        }
    }
}
