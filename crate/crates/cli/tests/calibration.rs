//! Calibration of the funnel study's loss-jitter amplitude.
//!
//! The funnel study perturbs per-PUC losses with Gaussian jitter while the
//! planner knows only the device average. Its two reference figures are a
//! 0.663 dB power spread for a two-way split and a 1.31 dB spread for a
//! 26-way funnel, each with a ±0.7 dB tolerance. The jitter σ is frozen in
//! `hexmesh_cli::DEFAULT_IL_SIGMA_DB`, tuned once so the two endpoints
//! miss their references by the same margin (the minimax choice — spread
//! grows faster with fan-out here than on the reference hardware, so no σ
//! nails both endpoints exactly, but balancing the errors keeps each well
//! inside its tolerance). `fit_branch_noise` (ignored) re-runs that
//! search; the regular test pins both endpoints at the frozen σ.

use hexmesh::graph::WeightCoeffs;
use hexmesh::powersim::SimParams;
use hexmesh::topology::{generate_hex_mesh, MeshTopology, PortId, PucDefaults};
use hexmesh_cli::study::funnel_study;

const TWO_WAY_SPREAD_DB: f64 = 0.663;
const FULL_FUNNEL_SPREAD_DB: f64 = 1.31;
const TOLERANCE_DB: f64 = 0.7;
const CAL_TRIALS: u32 = 200;
const CAL_SEED: u64 = 41;

fn funnel_ports() -> Vec<PortId> {
    (2..=12).chain(21..=35).collect()
}

fn spread_at(base: &MeshTopology, n: u32, sigma_db: f64) -> f64 {
    let outputs = funnel_ports();
    let study = funnel_study(
        base,
        WeightCoeffs::default(),
        0,
        &outputs[..n as usize],
        n,
        n,
        sigma_db,
        CAL_TRIALS,
        CAL_SEED,
        &SimParams::default(),
    )
    .unwrap();
    study.points[0].mean_spread_db
}

/// Signed error balance: positive when the 26-way endpoint overshoots its
/// reference by more than the 2-way endpoint undershoots its own.
/// Increasing in σ, so the balanced σ is found by bisection.
fn error_balance(base: &MeshTopology, sigma_db: f64) -> f64 {
    let err_26 = spread_at(base, 26, sigma_db) - FULL_FUNNEL_SPREAD_DB;
    let err_2 = TWO_WAY_SPREAD_DB - spread_at(base, 2, sigma_db);
    err_26 - err_2
}

/// Bisects σ until the two endpoint errors balance; run with
/// `cargo test -p hexmesh-cli --test calibration --release -- --ignored --nocapture`
/// and copy the printed value into `DEFAULT_IL_SIGMA_DB`.
#[test]
#[ignore = "calibration search; result is frozen as DEFAULT_IL_SIGMA_DB"]
fn fit_branch_noise() {
    let base = generate_hex_mesh(5, 3, &PucDefaults::default()).unwrap();
    let (mut lo, mut hi) = (0.02f64, 0.8f64);
    assert!(error_balance(&base, lo) < 0.0);
    assert!(error_balance(&base, hi) > 0.0);
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if error_balance(&base, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let two = spread_at(&base, 2, sigma);
    let full = spread_at(&base, 26, sigma);
    println!(
        "fitted sigma = {sigma:.6} dB (1x2 spread {two:.4} dB vs {TWO_WAY_SPREAD_DB}, \
         1x26 spread {full:.4} dB vs {FULL_FUNNEL_SPREAD_DB})"
    );
}

#[test]
fn the_frozen_jitter_matches_both_funnel_anchors() {
    let base = generate_hex_mesh(5, 3, &PucDefaults::default()).unwrap();
    let sigma = hexmesh_cli::DEFAULT_IL_SIGMA_DB;
    let two = spread_at(&base, 2, sigma);
    let full = spread_at(&base, 26, sigma);
    assert!(
        (two - TWO_WAY_SPREAD_DB).abs() < TOLERANCE_DB,
        "1x2 spread {two} dB vs reference {TWO_WAY_SPREAD_DB} dB"
    );
    assert!(
        (full - FULL_FUNNEL_SPREAD_DB).abs() < TOLERANCE_DB,
        "1x26 spread {full} dB vs reference {FULL_FUNNEL_SPREAD_DB} dB"
    );
    // The balance the fit established: neither endpoint eats most of the
    // tolerance.
    assert!((two - TWO_WAY_SPREAD_DB).abs() < 0.5 * TOLERANCE_DB);
    assert!((full - FULL_FUNNEL_SPREAD_DB).abs() < 0.5 * TOLERANCE_DB);
}
