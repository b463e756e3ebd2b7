//! Incoherent optical-power propagation through a programmed mesh.
//!
//! The simulator knows nothing about routing: it takes a topology, a map of
//! programmed couplings, and an injection port, and relaxes power flow
//! round by round until the mesh settles. Synthesized configurations are
//! verified against it — if a route or a splitting ratio is wrong, the
//! power shows up at the wrong port.
//!
//! Power is tracked in linear units and reported in dB relative to the
//! source, so the source level itself cancels out of every figure.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::multicast::MulticastConfig;
use crate::switching::SwitchConfig;
use crate::topology::{MeshTopology, PortId, PucId, PucPort, PucState};
use crate::units::{db_to_linear, linear_to_db};

/// Reported level of a port that receives no power.
pub const POWER_FLOOR_DB: f64 = -120.0;

/// Linear power below which a propagation round is considered settled.
const RESIDUAL_FLOOR: f64 = 1e-15;

/// Relaxation rounds allowed per PUC before declaring a lit cycle.
const ROUNDS_PER_PUC: usize = 10;

/// Physical parameters of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Fibre-to-chip coupling loss in dB, paid once at injection and once
    /// at extraction.
    pub facet_loss_db: f64,
    /// Whether bar/cross couplings leak into their dark arm.
    pub crosstalk_enabled: bool,
    /// Uniform leakage suppression override in dB; `None` uses each PUC's
    /// own extinction attribute.
    pub crosstalk_db: Option<f64>,
    /// Laser power in dBm; reports are normalized to it, so it only labels
    /// exported data.
    pub source_power_dbm: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            facet_loss_db: 3.64,
            crosstalk_enabled: false,
            crosstalk_db: None,
            source_power_dbm: 5.0,
        }
    }
}

impl SimParams {
    fn check(&self) -> Result<(), SimError> {
        if !self.facet_loss_db.is_finite() || self.facet_loss_db < 0.0 {
            return Err(SimError::BadParams(format!(
                "facet loss must be a non-negative dB figure, got {}",
                self.facet_loss_db
            )));
        }
        if let Some(ct) = self.crosstalk_db {
            if !ct.is_finite() || ct <= 0.0 {
                return Err(SimError::BadParams(format!(
                    "leakage suppression must be a positive dB figure, got {ct}"
                )));
            }
        }
        Ok(())
    }
}

/// Power at every usable external port, in dB relative to the source.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    entries: BTreeMap<PortId, f64>,
}

impl PowerMap {
    /// Power at one port; ports outside the map read as the floor.
    pub fn db(&self, port: PortId) -> f64 {
        self.entries.get(&port).copied().unwrap_or(POWER_FLOOR_DB)
    }

    /// All (port, dB) entries in ascending port order.
    pub fn iter(&self) -> impl Iterator<Item = (PortId, f64)> + '_ {
        self.entries.iter().map(|(&p, &db)| (p, db))
    }

    /// Ports receiving more than floor power.
    pub fn lit_ports(&self) -> Vec<PortId> {
        self.entries
            .iter()
            .filter(|&(_, &db)| db > POWER_FLOOR_DB)
            .map(|(&p, _)| p)
            .collect()
    }
}

/// Simulation failure.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    BadParams(String),
    #[error("port {0} does not exist")]
    UnknownPort(PortId),
    #[error("port {0} is not fibre-coupled")]
    UnusablePort(PortId),
    #[error("stub {stub} is not a corner stub of port {port}")]
    BadStub { port: PortId, stub: PucPort },
    #[error("stub {0} is assigned to two ports")]
    StubConflict(PucPort),
    #[error("power still circulating after {rounds} relaxation rounds")]
    LitCycle { rounds: usize },
}

/// Propagates power injected at `input_port` through the programmed mesh.
///
/// PUCs absent from `states` are off and absorb everything. Corner stubs
/// are inferred: the input takes its facing stub unless that coupler is
/// off while the twin stub's coupler is live, and every other usable port
/// takes its first still-unclaimed stub. Reports for synthesized
/// configurations should prefer [`propagate_with_sides`] with the exact
/// stubs the synthesis claimed.
pub fn propagate(
    topology: &MeshTopology,
    states: &BTreeMap<PucId, PucState>,
    input_port: PortId,
    params: &SimParams,
) -> Result<PowerMap, SimError> {
    propagate_inner(topology, states, None, input_port, params)
}

/// Like [`propagate`], with explicit corner stubs for some or all ports.
pub fn propagate_with_sides(
    topology: &MeshTopology,
    states: &BTreeMap<PucId, PucState>,
    sides: &BTreeMap<PortId, PucPort>,
    input_port: PortId,
    params: &SimParams,
) -> Result<PowerMap, SimError> {
    propagate_inner(topology, states, Some(sides), input_port, params)
}

fn propagate_inner(
    topology: &MeshTopology,
    states: &BTreeMap<PucId, PucState>,
    sides: Option<&BTreeMap<PortId, PucPort>>,
    input_port: PortId,
    params: &SimParams,
) -> Result<PowerMap, SimError> {
    params.check()?;
    let assignment = assign_stubs(topology, states, sides, input_port)?;
    let injection = assignment[&input_port];
    let stub_power = relax(topology, states, injection, params)?;

    let exit = db_to_linear(-params.facet_loss_db);
    let mut entries: BTreeMap<PortId, f64> = BTreeMap::new();
    for &port in &topology.usable_ports {
        let db = assignment
            .get(&port)
            .and_then(|stub| stub_power.get(stub))
            .map_or(f64::NEG_INFINITY, |&p| linear_to_db(p * exit));
        entries.insert(port, db.max(POWER_FLOOR_DB));
    }
    Ok(PowerMap { entries })
}

/// Chooses one corner stub per usable port, honouring explicit choices and
/// never handing the same stub to two ports.
fn assign_stubs(
    topology: &MeshTopology,
    states: &BTreeMap<PucId, PucState>,
    sides: Option<&BTreeMap<PortId, PucPort>>,
    input_port: PortId,
) -> Result<BTreeMap<PortId, PucPort>, SimError> {
    let check = |port: PortId| -> Result<&[PucPort], SimError> {
        let entry = topology
            .external_ports
            .get(port as usize)
            .ok_or(SimError::UnknownPort(port))?;
        if !topology.is_usable(port) {
            return Err(SimError::UnusablePort(port));
        }
        Ok(&entry.joins)
    };
    check(input_port)?;

    let live = |stub: &PucPort| -> bool {
        matches!(states.get(&stub.puc), Some(state) if *state != PucState::Off)
    };

    let mut assignment: BTreeMap<PortId, PucPort> = BTreeMap::new();
    let mut claimed: BTreeSet<PucPort> = BTreeSet::new();
    if let Some(fixed) = sides {
        for (&port, &stub) in fixed {
            let joins = check(port)?;
            if !joins.contains(&stub) {
                return Err(SimError::BadStub { port, stub });
            }
            if !claimed.insert(stub) {
                return Err(SimError::StubConflict(stub));
            }
            assignment.insert(port, stub);
        }
    }

    if !assignment.contains_key(&input_port) {
        let joins = check(input_port)?;
        let facing = joins[0];
        let stub = if !live(&facing) {
            joins.iter().copied().find(live).unwrap_or(facing)
        } else {
            facing
        };
        if !claimed.insert(stub) {
            return Err(SimError::StubConflict(stub));
        }
        assignment.insert(input_port, stub);
    }

    for &port in &topology.usable_ports {
        if assignment.contains_key(&port) {
            continue;
        }
        let joins = &topology.external_ports[port as usize].joins;
        if let Some(&stub) = joins.iter().find(|s| !claimed.contains(s)) {
            claimed.insert(stub);
            assignment.insert(port, stub);
        }
    }
    Ok(assignment)
}

/// Synchronous power relaxation. Returns the linear power leaving the mesh
/// at each boundary stub, including the injection facet loss but not the
/// extraction one.
fn relax(
    topology: &MeshTopology,
    states: &BTreeMap<PucId, PucState>,
    injection: PucPort,
    params: &SimParams,
) -> Result<BTreeMap<PucPort, f64>, SimError> {
    let mut adjacency: BTreeMap<PucPort, PucPort> = BTreeMap::new();
    for link in &topology.links {
        adjacency.insert(link.a, link.b);
        adjacency.insert(link.b, link.a);
    }

    let transmission: Vec<f64> = topology.pucs.iter().map(|p| db_to_linear(p.il_db)).collect();
    let leakage: Vec<f64> = topology
        .pucs
        .iter()
        .map(|p| {
            if params.crosstalk_enabled {
                db_to_linear(-params.crosstalk_db.unwrap_or(p.crosstalk_db))
            } else {
                0.0
            }
        })
        .collect();

    let mut stub_power: BTreeMap<PucPort, f64> = BTreeMap::new();
    let mut pending: BTreeMap<PucPort, f64> = BTreeMap::new();
    pending.insert(injection, db_to_linear(-params.facet_loss_db));

    let max_rounds = ROUNDS_PER_PUC * topology.pucs.len();
    let mut rounds = 0usize;
    while pending.values().sum::<f64>() > RESIDUAL_FLOOR {
        if rounds >= max_rounds {
            return Err(SimError::LitCycle { rounds });
        }
        rounds += 1;
        let mut next: BTreeMap<PucPort, f64> = BTreeMap::new();
        for (&at, &power) in &pending {
            let Some(&state) = states.get(&at.puc) else { continue };
            let through = transmission[at.puc as usize] * power;
            let bar = PucPort::new(at.puc, at.port.bar_peer());
            let cross = PucPort::new(at.puc, at.port.cross_peer());
            // Leakage redirects a sliver of the throughput into the dark
            // arm; it never creates power.
            let splits: [(PucPort, f64); 2] = match state {
                PucState::Off => continue,
                PucState::Bar => {
                    let eps = leakage[at.puc as usize];
                    [(bar, (1.0 - eps) * through), (cross, eps * through)]
                }
                PucState::Cross => {
                    let eps = leakage[at.puc as usize];
                    [(cross, (1.0 - eps) * through), (bar, eps * through)]
                }
                PucState::TunableCoupler(k) => {
                    [(cross, k * through), (bar, (1.0 - k) * through)]
                }
            };
            for (out, p) in splits {
                if p <= 0.0 {
                    continue;
                }
                match adjacency.get(&out) {
                    Some(&peer) => *next.entry(peer).or_insert(0.0) += p,
                    None => *stub_power.entry(out).or_insert(0.0) += p,
                }
            }
        }
        pending = next;
    }
    Ok(stub_power)
}

// ---------------------------------------------------------------------------
// Switch characterization
// ---------------------------------------------------------------------------

/// Simulated power matrix of a circuit switch: one row per injected input,
/// one column per output port.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchMatrix {
    pub inputs: Vec<PortId>,
    pub outputs: Vec<PortId>,
    /// Output each input is wired to by the synthesized permutation.
    pub targets: BTreeMap<PortId, PortId>,
    /// `db[i][j]` = power at `outputs[j]` when injecting at `inputs[i]`.
    pub db: Vec<Vec<f64>>,
}

/// Simulates a synthesized switch one input at a time.
pub fn switch_matrix(
    topology: &MeshTopology,
    config: &SwitchConfig,
    inputs: &[PortId],
    outputs: &[PortId],
    params: &SimParams,
) -> Result<SwitchMatrix, SimError> {
    let mut targets: BTreeMap<PortId, PortId> = BTreeMap::new();
    for &(i, o) in config.paths.keys() {
        targets.insert(i, o);
    }
    for &input in inputs {
        if !targets.contains_key(&input) {
            return Err(SimError::BadParams(format!(
                "port {input} is not an input of this switch"
            )));
        }
    }
    let wired: BTreeSet<PortId> = targets.values().copied().collect();
    for &output in outputs {
        if !wired.contains(&output) {
            return Err(SimError::BadParams(format!(
                "port {output} is not an output of this switch"
            )));
        }
    }

    let mut db: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    for &input in inputs {
        let map = propagate_with_sides(topology, &config.states, &config.port_sides, input, params)?;
        db.push(outputs.iter().map(|&o| map.db(o)).collect());
    }
    targets.retain(|i, _| inputs.contains(i));
    Ok(SwitchMatrix {
        inputs: inputs.to_vec(),
        outputs: outputs.to_vec(),
        targets,
        db,
    })
}

/// Isolation figures extracted from a switch matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkReport {
    /// Per output: assigned-signal power minus the strongest leakage from
    /// any other input, or `None` when every leakage sits at the floor.
    pub per_output: Vec<(PortId, Option<f64>)>,
    /// Smallest finite isolation (the worst column).
    pub worst_db: Option<f64>,
    /// Median of the finite isolations.
    pub typical_db: Option<f64>,
}

/// Computes per-output isolation: how far the assigned signal sits above
/// the strongest leakage reaching the same port.
pub fn crosstalk_report(matrix: &SwitchMatrix) -> CrosstalkReport {
    let mut per_output: Vec<(PortId, Option<f64>)> = Vec::with_capacity(matrix.outputs.len());
    for (col, &output) in matrix.outputs.iter().enumerate() {
        let mut signal: Option<f64> = None;
        let mut leak = f64::NEG_INFINITY;
        for (row, &input) in matrix.inputs.iter().enumerate() {
            let value = matrix.db[row][col];
            if matrix.targets.get(&input) == Some(&output) {
                signal = Some(value);
            } else {
                leak = leak.max(value);
            }
        }
        let isolation = match signal {
            Some(s) if leak > POWER_FLOOR_DB => Some(s - leak),
            _ => None,
        };
        per_output.push((output, isolation));
    }
    let mut finite: Vec<f64> = per_output.iter().filter_map(|&(_, x)| x).collect();
    finite.sort_by(f64::total_cmp);
    let worst_db = finite.first().copied();
    let typical_db = if finite.is_empty() {
        None
    } else if finite.len() % 2 == 1 {
        Some(finite[finite.len() / 2])
    } else {
        Some((finite[finite.len() / 2 - 1] + finite[finite.len() / 2]) / 2.0)
    };
    CrosstalkReport {
        per_output,
        worst_db,
        typical_db,
    }
}

// ---------------------------------------------------------------------------
// Multicast characterization
// ---------------------------------------------------------------------------

/// Simulated power distribution of a multicast circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticastPowerReport {
    /// Output powers in request order, dB relative to the source.
    pub powers: Vec<(PortId, f64)>,
    pub mean_db: f64,
    pub min_db: f64,
    /// Largest pairwise difference between output powers.
    pub spread_db: f64,
    /// Largest pairwise difference after removing each output's requested
    /// share — zero when the delivered split matches the request exactly.
    pub share_spread_db: f64,
}

/// Simulates a synthesized multicast tree and compares the delivered
/// powers with the requested proportions.
pub fn multicast_power_report(
    topology: &MeshTopology,
    config: &MulticastConfig,
    params: &SimParams,
) -> Result<MulticastPowerReport, SimError> {
    let map = propagate_with_sides(
        topology,
        &config.states,
        &config.port_sides,
        config.input_port,
        params,
    )?;
    let powers: Vec<(PortId, f64)> = config
        .output_ports
        .iter()
        .map(|&port| (port, map.db(port)))
        .collect();
    let n = powers.len() as f64;
    let mean_db = powers.iter().map(|&(_, db)| db).sum::<f64>() / n;
    let min_db = powers
        .iter()
        .map(|&(_, db)| db)
        .fold(f64::INFINITY, f64::min);
    let max_db = powers
        .iter()
        .map(|&(_, db)| db)
        .fold(f64::NEG_INFINITY, f64::max);
    let normalized: Vec<f64> = powers
        .iter()
        .zip(&config.proportion)
        .map(|(&(_, db), &share)| db - 10.0 * share.log10())
        .collect();
    let share_spread_db = normalized
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
        - normalized.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    Ok(MulticastPowerReport {
        powers,
        mean_db,
        min_db,
        spread_db: max_db - min_db,
        share_spread_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, MeshGraph, WeightCoeffs};
    use crate::interconnect::{self_heal, shortest_path};
    use crate::multicast::{auto_multicast, IlModel, MulticastRequest};
    use crate::switching::{auto_switch, SwitchRequest};
    use crate::topology::{generate_hex_mesh, MeshTopology, PucDefaults};

    fn mesh(rows: u32, cols: u32) -> MeshGraph {
        let topo = generate_hex_mesh(rows, cols, &PucDefaults::default()).unwrap();
        build_graph(&topo, WeightCoeffs::default()).unwrap()
    }

    fn route_sides(
        graph: &MeshGraph,
        path: &crate::graph::LightPath,
        in_port: PortId,
        out_port: PortId,
    ) -> BTreeMap<PortId, PucPort> {
        let mut sides = BTreeMap::new();
        sides.insert(in_port, path.entry_stub(graph));
        sides.insert(out_port, path.exit_stub(graph));
        sides
    }

    #[test]
    fn a_two_puc_route_loses_two_facets_and_two_couplers() {
        let graph = mesh(1, 1);
        let path = shortest_path(&graph, 0, 4).unwrap();
        assert_eq!(path.puc_count, 2);
        let sides = route_sides(&graph, &path, 0, 4);
        let params = SimParams::default();
        let map = propagate_with_sides(
            graph.topology(),
            &path.required_states,
            &sides,
            0,
            &params,
        )
        .unwrap();
        let expected = -(2.0 * 3.64 + 2.0 * 0.215);
        assert!((map.db(4) - expected).abs() < 1e-9, "got {}", map.db(4));
        assert_eq!(map.lit_ports(), vec![4]);

        let inferred = propagate(graph.topology(), &path.required_states, 0, &params).unwrap();
        assert!((inferred.db(4) - expected).abs() < 1e-9);
    }

    #[test]
    fn a_fifteen_puc_detour_loses_ten_and_a_half_db() {
        let graph = mesh(5, 3);
        let blocked: BTreeSet<PucId> = [0, 11, 24].into_iter().collect();
        let path = self_heal(&graph, 2, 21, &blocked).unwrap();
        assert_eq!(path.puc_count, 15);
        let sides = route_sides(&graph, &path, 2, 21);
        let map = propagate_with_sides(
            graph.topology(),
            &path.required_states,
            &sides,
            2,
            &SimParams::default(),
        )
        .unwrap();
        let expected = -(2.0 * 3.64 + 15.0 * 0.215);
        assert!((map.db(21) - expected).abs() < 1e-9, "got {}", map.db(21));
    }

    #[test]
    fn an_unprogrammed_mesh_is_dark() {
        let graph = mesh(1, 1);
        let states = BTreeMap::new();
        let map = propagate(graph.topology(), &states, 0, &SimParams::default()).unwrap();
        assert!(map.lit_ports().is_empty());
        for (_, db) in map.iter() {
            assert_eq!(db, POWER_FLOOR_DB);
        }
    }

    #[test]
    fn boundary_power_never_exceeds_the_injection() {
        // Lossless couplers pass every photon to the boundary; leakage
        // re-routes photons but never mints them; real losses absorb some.
        let lossless = PucDefaults {
            il_db: 0.0,
            ..PucDefaults::default()
        };
        let topo = generate_hex_mesh(1, 1, &lossless).unwrap();
        let graph = build_graph(&topo, WeightCoeffs::default()).unwrap();
        let path = shortest_path(&graph, 0, 4).unwrap();
        let injection = path.entry_stub(&graph);

        let quiet = SimParams {
            facet_loss_db: 0.0,
            ..SimParams::default()
        };
        let out = relax(&topo, &path.required_states, injection, &quiet).unwrap();
        let total: f64 = out.values().sum();
        assert!((total - 1.0).abs() < 1e-12, "lossless sum {total}");

        // With leakage on, photons straying onto unprogrammed neighbours
        // are absorbed there; the boundary total sits between the main
        // stream's survival and the injection, never above it.
        let leaky = SimParams {
            facet_loss_db: 0.0,
            crosstalk_enabled: true,
            crosstalk_db: Some(20.0),
            ..SimParams::default()
        };
        let out = relax(&topo, &path.required_states, injection, &leaky).unwrap();
        let total: f64 = out.values().sum();
        let eps = db_to_linear(-20.0);
        assert!(total <= 1.0 + 1e-12, "leaky lossless sum {total}");
        assert!(total >= (1.0 - eps) * (1.0 - eps) - 1e-12, "leaky lossless sum {total}");

        let graph = mesh(1, 1);
        let path = shortest_path(&graph, 0, 4).unwrap();
        let out = relax(
            graph.topology(),
            &path.required_states,
            path.entry_stub(&graph),
            &quiet,
        )
        .unwrap();
        let total: f64 = out.values().sum();
        let expected = db_to_linear(2.0 * -0.215);
        assert!((total - expected).abs() < 1e-12, "lossy sum {total}");
    }

    #[test]
    fn leakage_redistributes_power_without_creating_it() {
        let graph = mesh(5, 3);
        let path = shortest_path(&graph, 2, 21).unwrap();
        let sides = route_sides(&graph, &path, 2, 21);
        let quiet = SimParams::default();
        let noisy = SimParams {
            crosstalk_enabled: true,
            ..SimParams::default()
        };
        let clean = propagate_with_sides(graph.topology(), &path.required_states, &sides, 2, &quiet)
            .unwrap();
        let dirty = propagate_with_sides(graph.topology(), &path.required_states, &sides, 2, &noisy)
            .unwrap();
        assert!(dirty.db(21) < clean.db(21));
        assert!(clean.db(21) - dirty.db(21) < 0.5, "leakage should be a small dent");

        let at_stubs = relax(
            graph.topology(),
            &path.required_states,
            path.entry_stub(&graph),
            &noisy,
        )
        .unwrap();
        let total: f64 = at_stubs.values().sum();
        assert!(total <= db_to_linear(-noisy.facet_loss_db) + 1e-12);
    }

    #[test]
    fn a_nearly_closed_ring_is_reported_as_lit() {
        let lossless = PucDefaults {
            il_db: 0.0,
            ..PucDefaults::default()
        };
        let topo = generate_hex_mesh(1, 1, &lossless).unwrap();
        let mut adjacency: BTreeMap<PucPort, PucPort> = BTreeMap::new();
        for link in &topo.links {
            adjacency.insert(link.a, link.b);
            adjacency.insert(link.b, link.a);
        }

        // Program the six-coupler ring so each PUC hands the circulating
        // stream to its next neighbour.
        let mut states: BTreeMap<PucId, PucState> = BTreeMap::new();
        let start = topo.links[0].b;
        let mut current = start;
        loop {
            let bar = PucPort::new(current.puc, current.port.bar_peer());
            let cross = PucPort::new(current.puc, current.port.cross_peer());
            let (state, exit) = match (adjacency.contains_key(&bar), adjacency.contains_key(&cross)) {
                (true, false) => (PucState::Bar, bar),
                (false, true) => (PucState::Cross, cross),
                other => panic!("ring pucs should have one onward link, got {other:?}"),
            };
            states.insert(current.puc, state);
            current = adjacency[&exit];
            if current == start {
                break;
            }
        }
        assert_eq!(states.len(), topo.pucs.len());

        // A coupler at the injection corner shunts half the power into the
        // ring; with zero loss it never settles.
        let tap = topo.external_ports[0].joins[0].puc;
        states.insert(tap, PucState::TunableCoupler(0.5));
        let params = SimParams {
            facet_loss_db: 0.0,
            ..SimParams::default()
        };
        let err = propagate(&topo, &states, 0, &params).unwrap_err();
        assert!(matches!(err, SimError::LitCycle { .. }), "got {err:?}");

        // Without the tap the stream crosses the corner and leaves again.
        states.insert(tap, PucState::Cross);
        let settled = propagate(&topo, &states, 0, &params);
        assert!(settled.is_ok());
    }

    #[test]
    fn a_route_is_reciprocal() {
        let graph = mesh(5, 3);
        let path = shortest_path(&graph, 2, 21).unwrap();
        let sides = route_sides(&graph, &path, 2, 21);
        let params = SimParams::default();
        let forward =
            propagate_with_sides(graph.topology(), &path.required_states, &sides, 2, &params)
                .unwrap();
        let backward =
            propagate_with_sides(graph.topology(), &path.required_states, &sides, 21, &params)
                .unwrap();
        assert!((forward.db(21) - backward.db(2)).abs() < 1e-12);
    }

    #[test]
    fn bad_parameters_and_ports_are_rejected() {
        let graph = mesh(1, 1);
        let topo = graph.topology();
        let path = shortest_path(&graph, 0, 4).unwrap();
        let states = &path.required_states;

        let negative_facet = SimParams {
            facet_loss_db: -1.0,
            ..SimParams::default()
        };
        assert!(matches!(
            propagate(topo, states, 0, &negative_facet),
            Err(SimError::BadParams(_))
        ));

        let zero_suppression = SimParams {
            crosstalk_enabled: true,
            crosstalk_db: Some(0.0),
            ..SimParams::default()
        };
        assert!(matches!(
            propagate(topo, states, 0, &zero_suppression),
            Err(SimError::BadParams(_))
        ));

        let params = SimParams::default();
        assert!(matches!(
            propagate(topo, states, 99, &params),
            Err(SimError::UnknownPort(99))
        ));
        assert!(matches!(
            propagate(topo, states, 5, &params),
            Err(SimError::UnusablePort(5))
        ));

        let foreign = topo.external_ports[9].joins[0];
        let sides: BTreeMap<PortId, PucPort> = [(4u32, foreign)].into_iter().collect();
        assert!(matches!(
            propagate_with_sides(topo, states, &sides, 0, &params),
            Err(SimError::BadStub { port: 4, .. })
        ));

        let twins = topo
            .usable_ports
            .iter()
            .flat_map(|&a| topo.usable_ports.iter().map(move |&b| (a, b)))
            .find_map(|(a, b)| {
                if a >= b {
                    return None;
                }
                let joins_a = &topo.external_ports[a as usize].joins;
                let joins_b = &topo.external_ports[b as usize].joins;
                joins_a
                    .iter()
                    .find(|s| joins_b.contains(s))
                    .map(|&s| (a, b, s))
            });
        let (a, b, shared) = twins.expect("the single cell has twin ports at its corners");
        let sides: BTreeMap<PortId, PucPort> = [(a, shared), (b, shared)].into_iter().collect();
        assert!(matches!(
            propagate_with_sides(topo, states, &sides, 0, &params),
            Err(SimError::StubConflict(s)) if s == shared
        ));
    }

    #[test]
    fn switch_rows_hit_only_their_targets() {
        let mut graph = mesh(5, 3);
        let request = SwitchRequest::edge_penalty(vec![(0, 25), (3, 22)]);
        let config = auto_switch(&mut graph, &request).unwrap();

        let quiet = SimParams::default();
        let matrix = switch_matrix(graph.topology(), &config, &[0, 3], &[25, 22], &quiet).unwrap();
        assert_eq!(matrix.targets.get(&0), Some(&25));
        assert_eq!(matrix.targets.get(&3), Some(&22));
        // Without leakage each row lights its own column only.
        assert!(matrix.db[0][0] > -15.0 && matrix.db[1][1] > -15.0);
        assert_eq!(matrix.db[0][1], POWER_FLOOR_DB);
        assert_eq!(matrix.db[1][0], POWER_FLOOR_DB);
        let report = crosstalk_report(&matrix);
        assert!(report.per_output.iter().all(|&(_, x)| x.is_none()));
        assert_eq!(report.worst_db, None);
        assert_eq!(report.typical_db, None);

        // These two routes share couplers, so enabling leakage puts a
        // finite replica of each signal on the other output.
        let noisy = SimParams {
            crosstalk_enabled: true,
            ..SimParams::default()
        };
        let matrix = switch_matrix(graph.topology(), &config, &[0, 3], &[25, 22], &noisy).unwrap();
        let report = crosstalk_report(&matrix);
        for &(port, isolation) in &report.per_output {
            let isolation = isolation.unwrap_or_else(|| panic!("port {port} should see leakage"));
            assert!(
                (5.0..80.0).contains(&isolation),
                "port {port} isolation {isolation}"
            );
        }
        let isolations: Vec<f64> = report.per_output.iter().filter_map(|&(_, x)| x).collect();
        assert_eq!(report.worst_db, Some(isolations[0].min(isolations[1])));
        assert_eq!(
            report.typical_db,
            Some((isolations[0] + isolations[1]) / 2.0)
        );

        let unknown_input = switch_matrix(graph.topology(), &config, &[1], &[25], &quiet);
        assert!(matches!(unknown_input, Err(SimError::BadParams(_))));
        let unknown_output = switch_matrix(graph.topology(), &config, &[0], &[30], &quiet);
        assert!(matches!(unknown_output, Err(SimError::BadParams(_))));
    }

    #[test]
    fn isolation_measures_signal_over_strongest_leakage() {
        let matrix = SwitchMatrix {
            inputs: vec![0, 1],
            outputs: vec![4, 5],
            targets: [(0u32, 4u32), (1, 5)].into_iter().collect(),
            db: vec![vec![-10.0, -35.0], vec![-35.0, -10.0]],
        };
        let report = crosstalk_report(&matrix);
        assert_eq!(report.per_output, vec![(4, Some(25.0)), (5, Some(25.0))]);
        assert_eq!(report.worst_db, Some(25.0));
        assert_eq!(report.typical_db, Some(25.0));

        let floored = SwitchMatrix {
            inputs: vec![0, 1],
            outputs: vec![4, 5],
            targets: [(0u32, 4u32), (1, 5)].into_iter().collect(),
            db: vec![
                vec![-10.0, POWER_FLOOR_DB],
                vec![POWER_FLOOR_DB, -12.0],
            ],
        };
        let report = crosstalk_report(&floored);
        assert_eq!(report.per_output, vec![(4, None), (5, None)]);
        assert_eq!(report.worst_db, None);
        assert_eq!(report.typical_db, None);

        let uneven = SwitchMatrix {
            inputs: vec![0, 1, 2],
            outputs: vec![4, 5, 6],
            targets: [(0u32, 4u32), (1, 5), (2, 6)].into_iter().collect(),
            db: vec![
                vec![-10.0, -40.0, -52.0],
                vec![-30.0, -10.0, -38.0],
                vec![-45.0, -31.0, -10.0],
            ],
        };
        let report = crosstalk_report(&uneven);
        assert_eq!(report.worst_db, Some(20.0));
        assert_eq!(report.typical_db, Some(21.0));
    }

    #[test]
    fn a_multicast_report_matches_the_requested_shares() {
        let graph = mesh(1, 1);
        let request = MulticastRequest::uniform(0, vec![2, 4, 10]);
        let config = auto_multicast(&graph, &request).unwrap();
        let report =
            multicast_power_report(graph.topology(), &config, &SimParams::default()).unwrap();
        assert_eq!(
            report.powers.iter().map(|&(p, _)| p).collect::<Vec<_>>(),
            vec![2, 4, 10]
        );
        assert!(report.spread_db < 1e-6, "uniform spread {}", report.spread_db);
        assert!(report.share_spread_db < 1e-6);
        assert!(report.min_db <= report.mean_db);

        let graph = mesh(2, 2);
        let request =
            MulticastRequest::with_proportion(19, vec![6, 4, 0], vec![0.5, 0.3, 0.2]);
        let config = auto_multicast(&graph, &request).unwrap();
        let report =
            multicast_power_report(graph.topology(), &config, &SimParams::default()).unwrap();
        assert!(
            report.share_spread_db < 1e-6,
            "share spread {}",
            report.share_spread_db
        );
        let expected_spread = 10.0 * (0.5f64 / 0.2).log10();
        assert!((report.spread_db - expected_spread).abs() < 1e-6);
    }

    #[test]
    fn the_average_loss_model_misses_what_per_puc_tracking_catches() {
        let mut topo: MeshTopology = generate_hex_mesh(2, 2, &PucDefaults::default()).unwrap();
        topo.pucs[2].il_db = -0.6;
        let graph = build_graph(&topo, WeightCoeffs::default()).unwrap();

        let mut request =
            MulticastRequest::with_proportion(19, vec![6, 4, 0], vec![0.5, 0.3, 0.2]);
        let config = auto_multicast(&graph, &request).unwrap();
        let exact = multicast_power_report(&topo, &config, &SimParams::default()).unwrap();
        assert!(exact.share_spread_db < 1e-6, "per-puc {}", exact.share_spread_db);

        request.il_model = IlModel::GlobalAverage;
        let config = auto_multicast(&graph, &request).unwrap();
        let blurred = multicast_power_report(&topo, &config, &SimParams::default()).unwrap();
        assert!(
            blurred.share_spread_db > 1e-2,
            "average model spread {}",
            blurred.share_spread_db
        );
        assert!(blurred.share_spread_db < 2.0);
    }
}
