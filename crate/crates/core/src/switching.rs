//! N x N circuit-switch synthesis.
//!
//! A switch configuration realises several port-to-port connections at
//! once. Paths may share a PUC only if they agree on its coupling (two
//! streams can ride the independent track pairs of one bar- or cross-set
//! PUC); a PUC demanded in both states by different paths is a *conflict*.
//! Because every external port enters the mesh through a corner stub and
//! the stubs of a corner are claimed exclusively, a conflict-free
//! configuration is automatically free of any physical contention.
//!
//! Two solvers are provided: an iterative edge-penalty scheme that
//! re-routes conflicting pairs over progressively penalised arcs, and a
//! backtracking sequential scheme over per-pair candidate route lists.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{
    apply_penalty, node_puc_port, reset_penalties, ArcId, ArcKind, LightPath, MeshGraph, NodeId,
};
use crate::interconnect::{
    route_between_ports, search_raw, RawPath, RouteConstraints, RouteError,
};
use crate::topology::{PortId, PucId, PucPort, PucState};

/// Penalty multiplier applied per iteration to contested arcs.
const PENALTY_FACTOR: f64 = 10.0;
/// Candidate routes considered per pair by the sequential solver.
const SEQUENTIAL_CANDIDATE_CAP: usize = 50;

/// Conflict-resolution strategy of [`auto_switch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchAlgorithm {
    /// Iteratively penalise contested arcs and re-route conflicting pairs.
    EdgePenalty,
    /// Backtrack over per-pair candidate routes in best-first order.
    /// `max_iter` does not apply; candidates per pair are capped instead.
    Sequential,
}

/// A batch of simultaneous connections to synthesise.
#[derive(Debug, Clone)]
pub struct SwitchRequest {
    /// Connections as (input port, output port); inputs are mutually
    /// distinct, outputs are mutually distinct, and no port is both.
    pub io_pairs: Vec<(PortId, PortId)>,
    /// Re-route iteration budget of the edge-penalty solver.
    pub max_iter: u32,
    pub algorithm: SwitchAlgorithm,
}

impl SwitchRequest {
    /// Edge-penalty request with the standard 25-iteration budget.
    pub fn edge_penalty(io_pairs: Vec<(PortId, PortId)>) -> Self {
        SwitchRequest {
            io_pairs,
            max_iter: 25,
            algorithm: SwitchAlgorithm::EdgePenalty,
        }
    }

    /// Sequential (backtracking) request.
    pub fn sequential(io_pairs: Vec<(PortId, PortId)>) -> Self {
        SwitchRequest {
            io_pairs,
            max_iter: 25,
            algorithm: SwitchAlgorithm::Sequential,
        }
    }
}

/// A conflict-free switch configuration.
#[derive(Debug, Clone)]
pub struct SwitchConfig {
    /// One route per requested pair, keyed by (input, output) port.
    pub paths: BTreeMap<(PortId, PortId), LightPath>,
    /// Merged PUC states of all routes (agreement is guaranteed).
    pub states: BTreeMap<PucId, PucState>,
    /// Corner stub each involved external port injects into or extracts
    /// from.
    pub port_sides: BTreeMap<PortId, PucPort>,
    /// Re-route iterations consumed (zero when the first routing pass was
    /// already conflict-free; always zero for the sequential solver).
    pub iterations_used: u32,
    /// Sum of path weights at base (penalty-free) arc weights.
    pub total_weight: f64,
}

/// Errors raised by switch synthesis.
#[derive(Debug, Error)]
pub enum SwitchError {
    #[error("invalid switch request: {0}")]
    BadRequest(String),
    #[error("routing failed for pair {in_port}->{out_port}: {source}")]
    Route {
        in_port: PortId,
        out_port: PortId,
        #[source]
        source: RouteError,
    },
    #[error("no conflict-free configuration within {iterations} iterations ({contested} PUCs still contested)", contested = .conflicts.len())]
    Unsolved {
        iterations: u32,
        conflicts: BTreeSet<PucId>,
    },
}

/// Finds PUCs demanded in differing states by the given paths, together
/// with the port pairs whose paths touch those PUCs.
pub fn get_conflict_edges(
    paths: &[LightPath],
) -> (BTreeSet<PucId>, BTreeSet<(PortId, PortId)>) {
    let mut demanded: BTreeMap<PucId, (PucState, bool)> = BTreeMap::new();
    for path in paths {
        for (&puc, &state) in &path.required_states {
            match demanded.get_mut(&puc) {
                None => {
                    demanded.insert(puc, (state, false));
                }
                Some((existing, contested)) => {
                    if *existing != state {
                        *contested = true;
                    }
                }
            }
        }
    }
    let conflict_pucs: BTreeSet<PucId> = demanded
        .iter()
        .filter(|(_, (_, contested))| *contested)
        .map(|(&puc, _)| puc)
        .collect();
    let conflict_pairs: BTreeSet<(PortId, PortId)> = paths
        .iter()
        .filter(|p| p.required_states.keys().any(|puc| conflict_pucs.contains(puc)))
        .map(|p| (p.in_port, p.out_port))
        .collect();
    (conflict_pucs, conflict_pairs)
}

fn validate_request(request: &SwitchRequest) -> Result<(), SwitchError> {
    if request.io_pairs.is_empty() {
        return Err(SwitchError::BadRequest("no io pairs given".into()));
    }
    let mut ins: BTreeSet<PortId> = BTreeSet::new();
    let mut outs: BTreeSet<PortId> = BTreeSet::new();
    for &(i, o) in &request.io_pairs {
        if !ins.insert(i) {
            return Err(SwitchError::BadRequest(format!(
                "input port {i} appears in more than one pair"
            )));
        }
        if !outs.insert(o) {
            return Err(SwitchError::BadRequest(format!(
                "output port {o} appears in more than one pair"
            )));
        }
    }
    if let Some(shared) = ins.intersection(&outs).next() {
        return Err(SwitchError::BadRequest(format!(
            "port {shared} is used as both input and output"
        )));
    }
    Ok(())
}

/// Routes one pair, restricted to corner stubs not claimed by other ports.
fn route_claimed(
    graph: &MeshGraph,
    in_port: PortId,
    out_port: PortId,
    claims: &BTreeMap<PucPort, PortId>,
    base: RouteConstraints<'_>,
) -> Result<LightPath, SwitchError> {
    let stub_free = |port: PortId, node: &NodeId| -> bool {
        claims
            .get(&node_puc_port(*node))
            .map_or(true, |owner| *owner == port)
    };
    let entry_allowed: Option<BTreeSet<NodeId>> = graph.port_entry_nodes(in_port).map(|nodes| {
        nodes
            .iter()
            .copied()
            .filter(|n| stub_free(in_port, n))
            .collect()
    });
    let exit_allowed: Option<BTreeSet<NodeId>> = graph.port_exit_nodes(out_port).map(|nodes| {
        nodes
            .iter()
            .copied()
            .filter(|n| stub_free(out_port, n))
            .collect()
    });
    route_between_ports(
        graph,
        in_port,
        out_port,
        RouteConstraints {
            entry_allowed: entry_allowed.as_ref(),
            exit_allowed: exit_allowed.as_ref(),
            ..base
        },
    )
    .map_err(|source| SwitchError::Route {
        in_port,
        out_port,
        source,
    })
}

/// The couplings held by every path except `skip`: PUCs the other paths
/// agree on map to the one usable arc kind; PUCs the others already
/// dispute go into the forbidden set.
fn partial_mesh_locks(
    paths: &[LightPath],
    skip: usize,
) -> (BTreeMap<PucId, ArcKind>, BTreeSet<PucId>) {
    let mut locks: BTreeMap<PucId, ArcKind> = BTreeMap::new();
    let mut contested: BTreeSet<PucId> = BTreeSet::new();
    for (j, path) in paths.iter().enumerate() {
        if j == skip {
            continue;
        }
        for (&puc, &state) in &path.required_states {
            let kind = match state {
                PucState::Bar => ArcKind::Bar,
                PucState::Cross => ArcKind::Cross,
                // Routed paths only ever demand fixed couplings.
                PucState::TunableCoupler(_) | PucState::Off => {
                    contested.insert(puc);
                    continue;
                }
            };
            match locks.get(&puc) {
                None => {
                    locks.insert(puc, kind);
                }
                Some(&held) if held != kind => {
                    contested.insert(puc);
                }
                Some(_) => {}
            }
        }
    }
    for puc in &contested {
        locks.remove(puc);
    }
    (locks, contested)
}

fn claim_endpoints(
    claims: &mut BTreeMap<PucPort, PortId>,
    graph: &MeshGraph,
    path: &LightPath,
) {
    claims.insert(path.entry_stub(graph), path.in_port);
    claims.insert(path.exit_stub(graph), path.out_port);
}

fn release_endpoints(claims: &mut BTreeMap<PucPort, PortId>, ports: [PortId; 2]) {
    claims.retain(|_, owner| !ports.contains(owner));
}

/// Builds the final configuration from conflict-free paths, re-evaluated
/// at base (penalty-free) weights.
fn build_config(
    graph: &MeshGraph,
    paths: Vec<LightPath>,
    iterations_used: u32,
) -> SwitchConfig {
    let mut map: BTreeMap<(PortId, PortId), LightPath> = BTreeMap::new();
    let mut states: BTreeMap<PucId, PucState> = BTreeMap::new();
    let mut port_sides: BTreeMap<PortId, PucPort> = BTreeMap::new();
    let mut total_weight = 0.0;
    for path in paths {
        let rebuilt = LightPath::new(graph, path.in_port, path.out_port, path.arcs)
            .expect("solved paths stay valid under base weights");
        for (&puc, &state) in &rebuilt.required_states {
            let previous = states.insert(puc, state);
            debug_assert!(previous.is_none() || previous == Some(state));
        }
        port_sides.insert(rebuilt.in_port, rebuilt.entry_stub(graph));
        port_sides.insert(rebuilt.out_port, rebuilt.exit_stub(graph));
        total_weight += rebuilt.total_weight;
        map.insert((rebuilt.in_port, rebuilt.out_port), rebuilt);
    }
    SwitchConfig {
        paths: map,
        states,
        port_sides,
        iterations_used,
        total_weight,
    }
}

/// Synthesises a conflict-free configuration for all requested pairs.
///
/// Penalties on the graph are used as scratch state by the edge-penalty
/// solver and are always reset before returning; reported path weights are
/// penalty-free.
pub fn auto_switch(
    graph: &mut MeshGraph,
    request: &SwitchRequest,
) -> Result<SwitchConfig, SwitchError> {
    validate_request(request)?;
    match request.algorithm {
        SwitchAlgorithm::EdgePenalty => solve_edge_penalty(graph, request),
        SwitchAlgorithm::Sequential => solve_sequential(graph, request),
    }
}

fn solve_edge_penalty(
    graph: &mut MeshGraph,
    request: &SwitchRequest,
) -> Result<SwitchConfig, SwitchError> {
    reset_penalties(graph);
    let outcome = edge_penalty_rounds(graph, request);
    reset_penalties(graph);
    let (paths, iterations) = outcome?;
    Ok(build_config(graph, paths, iterations))
}

fn edge_penalty_rounds(
    graph: &mut MeshGraph,
    request: &SwitchRequest,
) -> Result<(Vec<LightPath>, u32), SwitchError> {
    let mut claims: BTreeMap<PucPort, PortId> = BTreeMap::new();
    let mut paths: Vec<LightPath> = Vec::with_capacity(request.io_pairs.len());
    for &(i, o) in &request.io_pairs {
        let path = route_claimed(graph, i, o, &claims, RouteConstraints::default())?;
        claim_endpoints(&mut claims, graph, &path);
        paths.push(path);
    }

    let mut iterations = 0u32;
    let pair_count = request.io_pairs.len();
    loop {
        let (conflict_pucs, _) = get_conflict_edges(&paths);
        if conflict_pucs.is_empty() {
            return Ok((paths, iterations));
        }
        if iterations == request.max_iter {
            return Err(SwitchError::Unsolved {
                iterations,
                conflicts: conflict_pucs,
            });
        }
        iterations += 1;

        // Resolve clashes one mover at a time: penalize the mover's own
        // arcs at its clash sites, re-route it, and re-check before the
        // next pair. Moving one party usually settles a clash for both, so
        // the partner keeps its path at base cost instead of joining a
        // symmetric dance where everyone flees and re-collides. Rotating
        // the scan start spreads the mover role across pairs.
        let start = (iterations as usize - 1) % pair_count;
        for step in 0..pair_count {
            let idx = (start + step) % pair_count;
            let (i, o) = request.io_pairs[idx];
            let (now_pucs, now_pairs) = get_conflict_edges(&paths);
            if now_pucs.is_empty() {
                break;
            }
            if !now_pairs.contains(&(i, o)) {
                continue;
            }
            let contested_arcs = clash_arcs(&paths, idx, graph);
            apply_penalty(graph, &contested_arcs, PENALTY_FACTOR)
                .expect("clash arcs are internal arcs of the same graph");
            release_endpoints(&mut claims, [i, o]);
            // The unmoved paths hold their PUCs in fixed couplings, so the
            // mover first looks for the cheapest route across that
            // partially programmed mesh; only when none exists does it
            // route freely and let the penalties drive the next round.
            let (locks, contested) = partial_mesh_locks(&paths, idx);
            let locked = route_claimed(
                graph,
                i,
                o,
                &claims,
                RouteConstraints {
                    forbidden_pucs: Some(&contested),
                    state_locks: Some(&locks),
                    ..RouteConstraints::default()
                },
            );
            let path = match locked {
                Ok(path) => path,
                Err(SwitchError::Route {
                    source: RouteError::NoRoute { .. } | RouteError::SearchExhausted { .. },
                    ..
                }) => route_claimed(graph, i, o, &claims, RouteConstraints::default())?,
                Err(other) => return Err(other),
            };
            claim_endpoints(&mut claims, graph, &path);
            paths[idx] = path;
        }
    }
}

/// Arcs of `paths[idx]` at PUCs where some other path demands a different
/// state — the arcs whose weights must rise for the re-route to either
/// agree with the neighbours or move away.
fn clash_arcs(paths: &[LightPath], idx: usize, graph: &MeshGraph) -> BTreeSet<ArcId> {
    let mut others: BTreeMap<PucId, Vec<PucState>> = BTreeMap::new();
    for (j, path) in paths.iter().enumerate() {
        if j == idx {
            continue;
        }
        for (&puc, &state) in &path.required_states {
            others.entry(puc).or_default().push(state);
        }
    }
    paths[idx]
        .arcs
        .iter()
        .copied()
        .filter(|&arc_id| {
            let arc = graph.arc(arc_id).expect("path arcs exist in the graph");
            match (arc.puc, arc.required_state()) {
                (Some(puc), Some(state)) => others
                    .get(&puc)
                    .is_some_and(|states| states.iter().any(|&s| s != state)),
                _ => false,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sequential solver
// ---------------------------------------------------------------------------

/// Lazily enumerated candidate routes for one pair, best-first.
struct CandidateStream {
    in_port: PortId,
    out_port: PortId,
    found: Vec<LightPath>,
    pending: Vec<RankedPath>,
    seen: BTreeSet<Vec<ArcId>>,
    exhausted: bool,
}

struct RankedPath {
    weight: f64,
    hops: u32,
    nodes: Vec<NodeId>,
    path: LightPath,
}

impl RankedPath {
    fn rank(&self) -> (f64, u32, &[NodeId]) {
        (self.weight, self.hops, &self.nodes)
    }
}

impl CandidateStream {
    fn new(in_port: PortId, out_port: PortId) -> Self {
        CandidateStream {
            in_port,
            out_port,
            found: Vec::new(),
            pending: Vec::new(),
            seen: BTreeSet::new(),
            exhausted: false,
        }
    }

    /// The `rank`-th best route for this pair, if it exists within the
    /// candidate cap.
    fn get(&mut self, graph: &MeshGraph, rank: usize) -> Result<Option<&LightPath>, SwitchError> {
        if rank >= SEQUENTIAL_CANDIDATE_CAP {
            return Ok(None);
        }
        while self.found.len() <= rank && !self.exhausted {
            self.advance(graph)?;
        }
        Ok(self.found.get(rank))
    }

    fn advance(&mut self, graph: &MeshGraph) -> Result<(), SwitchError> {
        if self.found.is_empty() {
            match route_between_ports(graph, self.in_port, self.out_port, RouteConstraints::default()) {
                Ok(path) => {
                    self.seen.insert(path.arcs.clone());
                    self.found.push(path);
                }
                Err(RouteError::NoRoute { .. }) => self.exhausted = true,
                Err(source) => {
                    return Err(SwitchError::Route {
                        in_port: self.in_port,
                        out_port: self.out_port,
                        source,
                    })
                }
            }
            return Ok(());
        }

        // Spur-and-root expansion of the most recent route: branch off at
        // every prefix, forbidding the continuations already taken by known
        // routes with the same prefix.
        let prev = self.found.last().unwrap().clone();
        let prev_nodes = prev.nodes(graph);
        let goals: BTreeSet<NodeId> = graph
            .port_exit_nodes(self.out_port)
            .expect("ports validated by first route")
            .iter()
            .copied()
            .collect();
        for spur_idx in 0..prev.arcs.len() {
            let root_arcs = &prev.arcs[..spur_idx];
            let spur_node = prev_nodes[spur_idx];

            let mut forbidden_arcs: BTreeSet<ArcId> = BTreeSet::new();
            for known in &self.found {
                if known.arcs.len() > spur_idx && known.arcs[..spur_idx] == *root_arcs {
                    forbidden_arcs.insert(known.arcs[spur_idx]);
                }
            }
            let mut closed: BTreeSet<NodeId> = prev_nodes[..spur_idx].iter().copied().collect();
            closed.remove(&spur_node);
            // Forbid the root's PUCs entirely so any stitched route is
            // coupling-consistent by construction.
            let root_pucs: BTreeSet<PucId> = root_arcs
                .iter()
                .filter_map(|&a| graph.arc(a).unwrap().puc)
                .collect();

            let seeds: Vec<NodeId> = if spur_idx == 0 {
                graph
                    .port_entry_nodes(self.in_port)
                    .expect("ports validated by first route")
                    .to_vec()
            } else {
                vec![spur_node]
            };
            let spur = search_raw(graph, &seeds, &goals, &closed, |arc| {
                if forbidden_arcs.contains(&arc.id) {
                    return false;
                }
                match arc.puc {
                    Some(puc) => !root_pucs.contains(&puc),
                    None => true,
                }
            });
            let Some(RawPath { arcs: spur_arcs, .. }) = spur else {
                continue;
            };
            let mut candidate_arcs = root_arcs.to_vec();
            candidate_arcs.extend(spur_arcs);
            if self.seen.contains(&candidate_arcs) {
                continue;
            }
            let Ok(path) =
                LightPath::new(graph, self.in_port, self.out_port, candidate_arcs.clone())
            else {
                continue;
            };
            self.seen.insert(candidate_arcs);
            self.pending.push(RankedPath {
                weight: path.total_weight,
                hops: path.hops(graph),
                nodes: path.nodes(graph),
                path,
            });
        }

        let best = self
            .pending
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.rank()
                    .0
                    .total_cmp(&b.rank().0)
                    .then_with(|| a.rank().1.cmp(&b.rank().1))
                    .then_with(|| a.rank().2.cmp(b.rank().2))
            })
            .map(|(i, _)| i);
        match best {
            Some(i) => self.found.push(self.pending.swap_remove(i).path),
            None => self.exhausted = true,
        }
        Ok(())
    }
}

/// Whether a candidate can join the partial assignment: no coupling
/// conflict with any chosen path and no contested corner stub.
fn sequential_compatible(
    graph: &MeshGraph,
    candidate: &LightPath,
    chosen: &[LightPath],
) -> bool {
    for other in chosen {
        for (&puc, &state) in &candidate.required_states {
            if other.required_states.get(&puc).is_some_and(|s| *s != state) {
                return false;
            }
        }
        let taken = [other.entry_stub(graph), other.exit_stub(graph)];
        if taken.contains(&candidate.entry_stub(graph))
            || taken.contains(&candidate.exit_stub(graph))
        {
            return false;
        }
    }
    true
}

fn solve_sequential(
    graph: &MeshGraph,
    request: &SwitchRequest,
) -> Result<SwitchConfig, SwitchError> {
    let mut streams: Vec<CandidateStream> = request
        .io_pairs
        .iter()
        .map(|&(i, o)| CandidateStream::new(i, o))
        .collect();

    fn assign(
        graph: &MeshGraph,
        streams: &mut [CandidateStream],
        idx: usize,
        chosen: &mut Vec<LightPath>,
    ) -> Result<bool, SwitchError> {
        if idx == streams.len() {
            return Ok(true);
        }
        let mut rank = 0usize;
        loop {
            let candidate = match streams[idx].get(graph, rank)? {
                Some(path) => path.clone(),
                None => return Ok(false),
            };
            if sequential_compatible(graph, &candidate, chosen) {
                chosen.push(candidate);
                if assign(graph, streams, idx + 1, chosen)? {
                    return Ok(true);
                }
                chosen.pop();
            }
            rank += 1;
        }
    }

    let mut chosen: Vec<LightPath> = Vec::new();
    if assign(graph, &mut streams, 0, &mut chosen)? {
        debug_assert!(get_conflict_edges(&chosen).0.is_empty());
        Ok(build_config(graph, chosen, 0))
    } else {
        // Surface which pairs could not even be routed individually.
        for stream in &mut streams {
            if stream.get(graph, 0)?.is_none() {
                return Err(SwitchError::Route {
                    in_port: stream.in_port,
                    out_port: stream.out_port,
                    source: RouteError::NoRoute {
                        in_port: stream.in_port,
                        out_port: stream.out_port,
                    },
                });
            }
        }
        Err(SwitchError::Unsolved {
            iterations: 0,
            conflicts: BTreeSet::new(),
        })
    }
}

// ---------------------------------------------------------------------------
// Feasibility sweep
// ---------------------------------------------------------------------------

/// Outcome of one permutation attempt in a [`feasibility_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationOutcome {
    /// `outputs[assignment[i]]` is driven by `inputs[i]`.
    pub assignment: Vec<usize>,
    pub solved: bool,
    pub iterations: u32,
    /// Total configuration weight when solved.
    pub total_weight: Option<f64>,
}

/// Aggregate result of a permutation feasibility sweep.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub inputs: Vec<PortId>,
    pub outputs: Vec<PortId>,
    /// One outcome per permutation, in lexicographic assignment order.
    pub outcomes: Vec<PermutationOutcome>,
    /// Solved permutations per iteration count.
    pub iteration_histogram: BTreeMap<u32, usize>,
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
    pub weight_mean: Option<f64>,
}

impl SweepReport {
    pub fn solved(&self) -> usize {
        self.outcomes.iter().filter(|o| o.solved).count()
    }

    pub fn solve_rate(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.solved() as f64 / self.outcomes.len() as f64
    }
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        // Standard next-permutation step.
        let Some(pivot) = current.windows(2).rposition(|w| w[0] < w[1]) else {
            return out;
        };
        let successor = current
            .iter()
            .rposition(|&x| x > current[pivot])
            .expect("pivot guarantees a successor");
        current.swap(pivot, successor);
        current[pivot + 1..].reverse();
        out.push(current.clone());
    }
}

fn sweep_permutation(
    graph: &mut MeshGraph,
    inputs: &[PortId],
    outputs: &[PortId],
    assignment: &[usize],
    max_iter: u32,
) -> Result<PermutationOutcome, SwitchError> {
    let io_pairs: Vec<(PortId, PortId)> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| (inputs[i], outputs[j]))
        .collect();
    let request = SwitchRequest {
        io_pairs,
        max_iter,
        algorithm: SwitchAlgorithm::EdgePenalty,
    };
    match auto_switch(graph, &request) {
        Ok(config) => Ok(PermutationOutcome {
            assignment: assignment.to_vec(),
            solved: true,
            iterations: config.iterations_used,
            total_weight: Some(config.total_weight),
        }),
        Err(SwitchError::Unsolved { iterations, .. }) => Ok(PermutationOutcome {
            assignment: assignment.to_vec(),
            solved: false,
            iterations,
            total_weight: None,
        }),
        Err(other) => Err(other),
    }
}

/// Attempts every input-to-output permutation with the edge-penalty solver
/// and reports per-permutation outcomes plus aggregate statistics.
///
/// `inputs` and `outputs` must be disjoint sets of distinct usable ports of
/// equal size at most 8 (8! = 40320 permutations). With `threads > 1` the
/// permutations are split over that many worker threads, each on its own
/// graph clone; results are identical to a serial run.
pub fn feasibility_sweep(
    graph: &MeshGraph,
    inputs: &[PortId],
    outputs: &[PortId],
    max_iter: u32,
    threads: usize,
) -> Result<SweepReport, SwitchError> {
    if inputs.is_empty() || inputs.len() != outputs.len() {
        return Err(SwitchError::BadRequest(
            "inputs and outputs must be non-empty sets of equal size".into(),
        ));
    }
    if inputs.len() > 8 {
        return Err(SwitchError::BadRequest(
            "sweeps cover at most 8x8 ports (8! permutations)".into(),
        ));
    }
    validate_request(&SwitchRequest::edge_penalty(
        inputs.iter().copied().zip(outputs.iter().copied()).collect(),
    ))?;
    for &port in inputs.iter().chain(outputs) {
        if graph.topology().external_port(port).is_none() {
            return Err(SwitchError::BadRequest(format!("unknown port {port}")));
        }
        if !graph.topology().is_usable(port) {
            return Err(SwitchError::BadRequest(format!("port {port} is not usable")));
        }
    }

    let perms = permutations(inputs.len());
    let outcomes: Vec<PermutationOutcome> = if threads <= 1 {
        let mut local = graph.clone();
        perms
            .iter()
            .map(|p| sweep_permutation(&mut local, inputs, outputs, p, max_iter))
            .collect::<Result<_, _>>()?
    } else {
        let workers = threads.min(perms.len());
        let chunk_size = perms.len().div_ceil(workers);
        let chunks: Vec<&[Vec<usize>]> = perms.chunks(chunk_size).collect();
        let results: Vec<Result<Vec<PermutationOutcome>, SwitchError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .into_iter()
                    .map(|chunk| {
                        scope.spawn(move || {
                            let mut local = graph.clone();
                            chunk
                                .iter()
                                .map(|p| {
                                    sweep_permutation(&mut local, inputs, outputs, p, max_iter)
                                })
                                .collect::<Result<Vec<_>, _>>()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
            });
        let mut all = Vec::with_capacity(perms.len());
        for result in results {
            all.extend(result?);
        }
        all
    };

    let mut iteration_histogram: BTreeMap<u32, usize> = BTreeMap::new();
    let mut weights: Vec<f64> = Vec::new();
    for outcome in &outcomes {
        if outcome.solved {
            *iteration_histogram.entry(outcome.iterations).or_insert(0) += 1;
            weights.push(outcome.total_weight.unwrap());
        }
    }
    let weight_min = weights.iter().copied().min_by(f64::total_cmp);
    let weight_max = weights.iter().copied().max_by(f64::total_cmp);
    let weight_mean = if weights.is_empty() {
        None
    } else {
        Some(weights.iter().sum::<f64>() / weights.len() as f64)
    };
    Ok(SweepReport {
        inputs: inputs.to_vec(),
        outputs: outputs.to_vec(),
        outcomes,
        iteration_histogram,
        weight_min,
        weight_max,
        weight_mean,
    })
}
