//! Routing benchmark: seeded random port pairs, timed one `shortest_path`
//! call at a time.

use std::time::Instant;

use hexmesh::graph::{build_graph, MeshGraph, WeightCoeffs};
use hexmesh::interconnect::{route_batch, TimingStats};
use hexmesh::topology::{MeshTopology, PortId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::CliError;

/// Benchmark result: the deterministic pair list, per-pair outcomes, and
/// timing figures (pairs are reproducible from the seed; times are not).
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub pairs: Vec<(PortId, PortId)>,
    /// (pucs, total weight) per solved pair, `None` where routing failed.
    pub outcomes: Vec<Option<(u32, f64)>>,
    pub routing: TimingStats,
    pub graph_build_us: f64,
}

/// Draws `n_paths` random distinct-port pairs (uniform over usable ports)
/// and routes each one, timing the routing calls individually. The graph
/// build is timed separately so per-path figures measure routing alone.
pub fn bench_paths(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    n_paths: u32,
    seed: u64,
) -> Result<BenchReport, CliError> {
    if n_paths == 0 {
        return Err(CliError::Input("n_paths must be at least 1".into()));
    }
    let usable = &topology.usable_ports;
    if usable.len() < 2 {
        return Err(CliError::Input(
            "benchmark needs at least two usable ports".into(),
        ));
    }

    let started = Instant::now();
    let graph: MeshGraph = build_graph(topology, coeffs)?;
    let graph_build_us = started.elapsed().as_secs_f64() * 1e6;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_paths as usize);
    for _ in 0..n_paths {
        let picked: Vec<PortId> = usable.choose_multiple(&mut rng, 2).copied().collect();
        pairs.push((picked[0], picked[1]));
    }

    let (results, routing) = route_batch(&graph, &pairs);
    let outcomes = results
        .into_iter()
        .map(|r| r.ok().map(|p| (p.puc_count, p.total_weight)))
        .collect();

    Ok(BenchReport {
        pairs,
        outcomes,
        routing,
        graph_build_us,
    })
}
