//! Scenario execution: loads the topology, runs the command, and writes a
//! self-describing results directory.
//!
//! Every run emits `config.toml` (the fully resolved scenario, itself
//! runnable), `summary.json` (machine-readable key results), `timing.txt`
//! (wall-clock figures, excluded from reproducibility guarantees), and the
//! command's CSV artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hexmesh::graph::{build_graph, WeightCoeffs};
use hexmesh::interconnect::shortest_path;
use hexmesh::multicast::{auto_multicast, MulticastConfig, MulticastRequest};
use hexmesh::powersim::{
    crosstalk_report, multicast_power_report, propagate_with_sides, switch_matrix, PowerMap,
    SimParams,
};
use hexmesh::switching::{auto_switch, feasibility_sweep, SwitchRequest};
use hexmesh::topology::{MeshTopology, PortId};
use serde_json::{json, Value};

use crate::bench::bench_paths;
use crate::csvfmt::{fmt3, fmt3_opt, table};
use crate::error::CliError;
use crate::scenario::{CommandSpec, Scenario};
use crate::study::funnel_study;

/// Options taken from the command line rather than the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// A completed run: where it wrote and what it concluded.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: Value,
}

/// Default output directory: `$HEXMESH_OUT` or `./hexmesh-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("HEXMESH_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("hexmesh-out"))
}

fn worker_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .clamp(1, 8)
}

/// Runs one scenario file end to end.
pub fn run_scenario(scenario_path: &Path, options: &RunOptions) -> Result<RunOutcome, CliError> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(seed) = options.seed {
        scenario.command.override_seed(seed);
    }
    let scenario_dir = scenario_path.parent().unwrap_or(Path::new("."));
    let topology = scenario.topology.load(scenario_dir)?;
    scenario.validate_ports(&topology)?;

    let threads = worker_threads(options.threads);
    let out_dir = options.out_dir.clone().unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let started = Instant::now();
    let run = execute(&scenario, &topology, threads)?;
    let elapsed = started.elapsed();

    let mut files: Vec<String> = run.artifacts.iter().map(|(name, _)| name.clone()).collect();
    files.extend(["config.toml".into(), "summary.json".into(), "timing.txt".into()]);
    files.sort();

    let summary = json!({
        "command": scenario.command.kind(),
        "scenario": scenario_path.file_name().and_then(|n| n.to_str()),
        "threads": threads,
        "artifacts": files,
        "result": run.result,
    });

    for (name, content) in &run.artifacts {
        std::fs::write(out_dir.join(name), content)?;
    }
    std::fs::write(out_dir.join("config.toml"), scenario.to_resolved_toml())?;
    std::fs::write(
        out_dir.join("summary.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes")),
    )?;
    let mut timing = format!(
        "command: {}\ntotal_ms: {:.1}\nthreads: {threads}\n",
        scenario.command.kind(),
        elapsed.as_secs_f64() * 1e3,
    );
    timing.push_str(&run.timing_extra);
    std::fs::write(out_dir.join("timing.txt"), timing)?;

    Ok(RunOutcome { out_dir, summary })
}

struct CommandRun {
    artifacts: Vec<(String, String)>,
    result: Value,
    timing_extra: String,
}

fn execute(
    scenario: &Scenario,
    topology: &MeshTopology,
    threads: usize,
) -> Result<CommandRun, CliError> {
    let coeffs = scenario.weights.coeffs();
    let sim = scenario.sim.params();
    match &scenario.command {
        CommandSpec::Interconnect { input, output } => {
            run_interconnect(topology, coeffs, &sim, *input, *output)
        }
        CommandSpec::InterconnectSweep { inputs } => {
            run_interconnect_sweep(topology, coeffs, &sim, inputs)
        }
        CommandSpec::Switch { pairs, max_iter } => {
            run_switch(topology, coeffs, &sim, pairs, *max_iter)
        }
        CommandSpec::SwitchSweep {
            inputs,
            outputs,
            max_iter,
            matrices,
        } => run_switch_sweep(topology, coeffs, &sim, inputs, outputs, *max_iter, *matrices, threads),
        CommandSpec::Multicast {
            input,
            outputs,
            proportion,
            il_model,
        } => run_multicast(topology, coeffs, &sim, *input, outputs, proportion.as_deref(), *il_model),
        CommandSpec::MulticastSweep {
            input,
            outputs,
            n_min,
            n_max,
            il_sigma_db,
            trials,
            seed,
        } => run_multicast_sweep(
            topology, coeffs, &sim, *input, outputs, *n_min, *n_max, *il_sigma_db, *trials, *seed,
        ),
        CommandSpec::BenchPaths { n_paths, seed } => {
            run_bench(topology, coeffs, *n_paths, *seed)
        }
    }
}

/// Renders a power map as one header row of ports and one row of dB.
fn powermap_csv(map: &PowerMap) -> String {
    let (ports, dbs): (Vec<String>, Vec<String>) =
        map.iter().map(|(p, db)| (p.to_string(), fmt3(db))).unzip();
    table(&ports, &[dbs])
}

fn run_interconnect(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    input: PortId,
    output: PortId,
) -> Result<CommandRun, CliError> {
    let graph = build_graph(topology, coeffs)?;
    let path = shortest_path(&graph, input, output)?;
    let mut sides = BTreeMap::new();
    sides.insert(input, path.entry_stub(&graph));
    sides.insert(output, path.exit_stub(&graph));
    let map = propagate_with_sides(topology, &path.required_states, &sides, input, sim)?;

    let route_csv = table(
        &["input".into(), "output".into(), "pucs".into(), "hops".into(), "weight".into(), "target_db".into()],
        &[vec![
            input.to_string(),
            output.to_string(),
            path.puc_count.to_string(),
            path.hops(&graph).to_string(),
            fmt3(path.total_weight),
            fmt3(map.db(output)),
        ]],
    );
    let result = json!({
        "input": input,
        "output": output,
        "pucs": path.puc_count,
        "target_db": map.db(output),
    });
    Ok(CommandRun {
        artifacts: vec![
            ("route.csv".into(), route_csv),
            ("powermap.csv".into(), powermap_csv(&map)),
        ],
        result,
        timing_extra: String::new(),
    })
}

fn run_interconnect_sweep(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    inputs: &[PortId],
) -> Result<CommandRun, CliError> {
    let graph = build_graph(topology, coeffs)?;
    let ports = topology.usable_ports.clone();
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(inputs.len());
    let mut unroutable = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    for &input in inputs {
        let mut row = vec![input.to_string()];
        for &output in &ports {
            if output == input {
                row.push(String::new());
                continue;
            }
            match shortest_path(&graph, input, output) {
                Ok(path) => {
                    let mut sides = BTreeMap::new();
                    sides.insert(input, path.entry_stub(&graph));
                    sides.insert(output, path.exit_stub(&graph));
                    let map =
                        propagate_with_sides(topology, &path.required_states, &sides, input, sim)?;
                    let db = map.db(output);
                    best = best.max(db);
                    worst = worst.min(db);
                    row.push(fmt3(db));
                }
                Err(hexmesh::interconnect::RouteError::NoRoute { .. }) => {
                    unroutable += 1;
                    row.push(String::new());
                }
                Err(e) => return Err(e.into()),
            }
        }
        rows.push(row);
    }
    let mut header = vec!["input".into()];
    header.extend(ports.iter().map(|p| p.to_string()));
    let csv = table(&header, &rows);
    let result = json!({
        "inputs": inputs,
        "ports": ports,
        "unroutable": unroutable,
        "best_db": if best.is_finite() { Some(best) } else { None },
        "worst_db": if worst.is_finite() { Some(worst) } else { None },
    });
    Ok(CommandRun {
        artifacts: vec![("interconnect_sweep.csv".into(), csv)],
        result,
        timing_extra: String::new(),
    })
}

fn switch_matrix_csv(
    topology: &MeshTopology,
    config: &hexmesh::switching::SwitchConfig,
    inputs: &[PortId],
    outputs: &[PortId],
    sim: &SimParams,
) -> Result<(String, hexmesh::powersim::CrosstalkReport, Vec<Vec<f64>>), CliError> {
    let matrix = switch_matrix(topology, config, inputs, outputs, sim)?;
    let mut header = vec!["input".into()];
    header.extend(outputs.iter().map(|p| p.to_string()));
    let rows: Vec<Vec<String>> = matrix
        .db
        .iter()
        .zip(inputs)
        .map(|(row, input)| {
            let mut cells = vec![input.to_string()];
            cells.extend(row.iter().map(|&db| fmt3(db)));
            cells
        })
        .collect();
    let report = crosstalk_report(&matrix);
    Ok((table(&header, &rows), report, matrix.db))
}

fn run_switch(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    pairs: &[(PortId, PortId)],
    max_iter: u32,
) -> Result<CommandRun, CliError> {
    let mut graph = build_graph(topology, coeffs)?;
    let mut request = SwitchRequest::edge_penalty(pairs.to_vec());
    request.max_iter = max_iter;
    let config = auto_switch(&mut graph, &request)?;

    let inputs: Vec<PortId> = pairs.iter().map(|&(i, _)| i).collect();
    let outputs: Vec<PortId> = pairs.iter().map(|&(_, o)| o).collect();
    let (matrix_csv, report, _) = switch_matrix_csv(topology, &config, &inputs, &outputs, sim)?;
    let crosstalk_csv = table(
        &["output".into(), "isolation_db".into()],
        &report
            .per_output
            .iter()
            .map(|&(port, iso)| vec![port.to_string(), fmt3_opt(iso)])
            .collect::<Vec<_>>(),
    );
    let result = json!({
        "pairs": pairs,
        "iterations_used": config.iterations_used,
        "total_weight": config.total_weight,
        "worst_isolation_db": report.worst_db,
        "typical_isolation_db": report.typical_db,
    });
    Ok(CommandRun {
        artifacts: vec![
            ("switch_matrix.csv".into(), matrix_csv),
            ("crosstalk.csv".into(), crosstalk_csv),
        ],
        result,
        timing_extra: String::new(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_switch_sweep(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    inputs: &[PortId],
    outputs: &[PortId],
    max_iter: u32,
    matrices: usize,
    threads: usize,
) -> Result<CommandRun, CliError> {
    let graph = build_graph(topology, coeffs)?;
    let sweep_started = Instant::now();
    let sweep = feasibility_sweep(&graph, inputs, outputs, max_iter, threads)?;
    let sweep_ms = sweep_started.elapsed().as_secs_f64() * 1e3;

    let feasibility_rows: Vec<Vec<String>> = sweep
        .outcomes
        .iter()
        .map(|o| {
            vec![
                o.assignment
                    .iter()
                    .map(|j| j.to_string())
                    .collect::<Vec<_>>()
                    .join("-"),
                o.solved.to_string(),
                o.iterations.to_string(),
                fmt3_opt(o.total_weight),
            ]
        })
        .collect();
    let feasibility_csv = table(
        &["permutation".into(), "solved".into(), "iterations".into(), "total_weight".into()],
        &feasibility_rows,
    );

    // Full matrix characterization for an evenly spaced permutation sample.
    let mut artifacts = vec![("feasibility.csv".into(), feasibility_csv)];
    let mut crosstalk_rows: Vec<Vec<String>> = Vec::new();
    let mut pooled_isolations: Vec<f64> = Vec::new();
    let mut target_dbs: Vec<f64> = Vec::new();
    let total = sweep.outcomes.len();
    let stride = if matrices == 0 { 0 } else { (total / matrices).max(1) };
    let sample: Vec<usize> = if stride == 0 {
        Vec::new()
    } else {
        (0..total).step_by(stride).take(matrices).collect()
    };
    let mut worker = graph.clone();
    for &perm_idx in &sample {
        let outcome = &sweep.outcomes[perm_idx];
        let io_pairs: Vec<(PortId, PortId)> = outcome
            .assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| (inputs[i], outputs[j]))
            .collect();
        let mut request = SwitchRequest::edge_penalty(io_pairs);
        request.max_iter = max_iter;
        let config = auto_switch(&mut worker, &request)?;
        let (matrix_csv, report, db) =
            switch_matrix_csv(topology, &config, inputs, outputs, sim)?;
        artifacts.push((format!("switch_matrix_{perm_idx:03}.csv"), matrix_csv));
        pooled_isolations.extend(report.per_output.iter().filter_map(|&(_, iso)| iso));
        for (i, &j) in outcome.assignment.iter().enumerate() {
            target_dbs.push(db[i][j]);
        }
        crosstalk_rows.push(vec![
            perm_idx.to_string(),
            outcome
                .assignment
                .iter()
                .map(|j| j.to_string())
                .collect::<Vec<_>>()
                .join("-"),
            fmt3_opt(report.worst_db),
            fmt3_opt(report.typical_db),
        ]);
    }
    artifacts.push((
        "crosstalk_summary.csv".into(),
        table(
            &["permutation_index".into(), "assignment".into(), "worst_db".into(), "typical_db".into()],
            &crosstalk_rows,
        ),
    ));

    pooled_isolations.sort_by(f64::total_cmp);
    let median_isolation = median(&pooled_isolations);
    let target_spread = if target_dbs.is_empty() {
        None
    } else {
        let max = target_dbs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let min = target_dbs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        Some(max - min)
    };

    let result = json!({
        "inputs": inputs,
        "outputs": outputs,
        "permutations": total,
        "solved": sweep.solved(),
        "solve_rate": sweep.solve_rate(),
        "weight_min": sweep.weight_min,
        "weight_mean": sweep.weight_mean,
        "weight_max": sweep.weight_max,
        "matrices": sample.len(),
        "median_isolation_db": median_isolation,
        "target_il_spread_db": target_spread,
    });
    Ok(CommandRun {
        artifacts,
        result,
        timing_extra: format!("sweep_ms: {sweep_ms:.1}\n"),
    })
}

fn median(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

fn run_multicast(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    input: PortId,
    outputs: &[PortId],
    proportion: Option<&[f64]>,
    il_model: crate::scenario::IlModelSpec,
) -> Result<CommandRun, CliError> {
    let graph = build_graph(topology, coeffs)?;
    let mut request = match proportion {
        Some(shares) => {
            MulticastRequest::with_proportion(input, outputs.to_vec(), shares.to_vec())
        }
        None => MulticastRequest::uniform(input, outputs.to_vec()),
    };
    request.il_model = il_model.model();
    let config: MulticastConfig = auto_multicast(&graph, &request)?;
    let report = multicast_power_report(topology, &config, sim)?;

    let rows: Vec<Vec<String>> = report
        .powers
        .iter()
        .zip(&config.proportion)
        .map(|(&(port, db), &share)| vec![port.to_string(), fmt3(share), fmt3(db)])
        .collect();
    let multicast_csv = table(&["port".into(), "share".into(), "db".into()], &rows);
    let tunable_rows: Vec<Vec<String>> = config
        .tunable_pucs
        .iter()
        .map(|t| vec![t.puc.to_string(), format!("{:.6}", t.k), format!("{:.6}", t.k_target)])
        .collect();
    let tunables_csv = table(&["puc".into(), "k".into(), "k_target".into()], &tunable_rows);

    let map = propagate_with_sides(topology, &config.states, &config.port_sides, input, sim)?;
    let result = json!({
        "input": input,
        "outputs": outputs,
        "splitters": config.tunable_pucs.len(),
        "mean_db": report.mean_db,
        "min_db": report.min_db,
        "spread_db": report.spread_db,
        "share_spread_db": report.share_spread_db,
    });
    Ok(CommandRun {
        artifacts: vec![
            ("multicast.csv".into(), multicast_csv),
            ("tunables.csv".into(), tunables_csv),
            ("powermap.csv".into(), powermap_csv(&map)),
        ],
        result,
        timing_extra: String::new(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_multicast_sweep(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    sim: &SimParams,
    input: PortId,
    outputs: &[PortId],
    n_min: u32,
    n_max: u32,
    il_sigma_db: f64,
    trials: u32,
    seed: u64,
) -> Result<CommandRun, CliError> {
    let study = funnel_study(
        topology, coeffs, input, outputs, n_min, n_max, il_sigma_db, trials, seed, sim,
    )?;

    let mut header = vec!["port".into()];
    header.extend(study.sizes.iter().map(|n| n.to_string()));
    let funnel_rows: Vec<Vec<String>> = study
        .ports
        .iter()
        .zip(&study.mean_db)
        .map(|(port, row)| {
            let mut cells = vec![port.to_string()];
            cells.extend(row.iter().map(|&db| fmt3_opt(db)));
            cells
        })
        .collect();
    let funnel_csv = table(&header, &funnel_rows);

    let deviation_rows: Vec<Vec<String>> = study
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                fmt3(p.mean_spread_db),
                fmt3(p.mean_min_db),
                fmt3(p.mean_share_spread_db),
            ]
        })
        .collect();
    let deviation_csv = table(
        &["n".into(), "mean_spread_db".into(), "mean_min_db".into(), "mean_share_spread_db".into()],
        &deviation_rows,
    );

    let last = study.points.last();
    let result = json!({
        "input": input,
        "n_min": n_min,
        "n_max": n_max,
        "trials": trials,
        "il_sigma_db": il_sigma_db,
        "seed": seed,
        "final_mean_spread_db": last.map(|p| p.mean_spread_db),
        "final_mean_min_db": last.map(|p| p.mean_min_db),
    });
    Ok(CommandRun {
        artifacts: vec![
            ("funnel.csv".into(), funnel_csv),
            ("deviation.csv".into(), deviation_csv),
        ],
        result,
        timing_extra: String::new(),
    })
}

fn run_bench(
    topology: &MeshTopology,
    coeffs: WeightCoeffs,
    n_paths: u32,
    seed: u64,
) -> Result<CommandRun, CliError> {
    let report = bench_paths(topology, coeffs, n_paths, seed)?;
    let rows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .zip(&report.outcomes)
        .map(|(&(a, b), outcome)| {
            let (pucs, weight) = match outcome {
                Some((pucs, weight)) => (pucs.to_string(), fmt3(*weight)),
                None => (String::new(), String::new()),
            };
            vec![a.to_string(), b.to_string(), pucs, weight]
        })
        .collect();
    let pairs_csv = table(
        &["input".into(), "output".into(), "pucs".into(), "weight".into()],
        &rows,
    );

    let t = &report.routing;
    let result = json!({
        "n_paths": n_paths,
        "seed": seed,
        "mean_us": t.mean_us,
        "median_us": t.median_us,
        "p99_us": t.p99_us,
        "min_us": t.min_us,
        "max_us": t.max_us,
        "graph_build_us": report.graph_build_us,
    });
    let timing_extra = format!(
        "graph_build_us: {:.2}\nmean_us: {:.3}\nmedian_us: {:.3}\np99_us: {:.3}\nmin_us: {:.3}\nmax_us: {:.3}\n",
        report.graph_build_us, t.mean_us, t.median_us, t.p99_us, t.min_us, t.max_us,
    );
    Ok(CommandRun {
        artifacts: vec![("bench_pairs.csv".into(), pairs_csv)],
        result,
        timing_extra,
    })
}
