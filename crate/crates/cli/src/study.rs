//! Multicast funnel study: how power spreads over a growing output set
//! when each coupler's real loss jitters around the figure the planner
//! assumes.
//!
//! Each trial draws one virtual device: the base mesh with jittered
//! per-coupler losses. The controller in the study knows only that
//! device's mesh-wide average loss — it plans on a uniform mesh held at
//! that average — while the simulator measures the resulting circuit on
//! the true jittered losses. The gap between requested and delivered
//! shares is therefore exactly the per-coupler spread the controller
//! never characterized, and it grows with tree depth. Planning on a
//! uniform mesh keeps the tree shape identical across trials (uniform
//! weight scaling preserves every search comparison), so sizes stay
//! comparable. The jitter is drawn from a seeded generator; a fixed seed
//! reproduces the study bit for bit.

use hexmesh::graph::{build_graph, WeightCoeffs};
use hexmesh::multicast::{auto_multicast, IlModel, MulticastRequest};
use hexmesh::powersim::{multicast_power_report, SimParams};
use hexmesh::topology::{MeshTopology, PortId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CliError;

/// Aggregates for one funnel size.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelPoint {
    pub n: u32,
    /// Mean over trials of (max − min) output power.
    pub mean_spread_db: f64,
    /// Mean over trials of the weakest output's power.
    pub mean_min_db: f64,
    /// Mean over trials of the spread after removing requested shares.
    pub mean_share_spread_db: f64,
}

/// Full study result.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelStudy {
    /// Output ports in funnel order.
    pub ports: Vec<PortId>,
    /// `mean_db[p][i]` = mean power at `ports[p]` for the i-th funnel
    /// size, `None` while the port is not yet part of the set.
    pub mean_db: Vec<Vec<Option<f64>>>,
    pub sizes: Vec<u32>,
    pub points: Vec<FunnelPoint>,
}

/// Draws one jittered copy of the base topology: each PUC's loss becomes
/// `base + noise` (in positive dB), clamped at lossless.
pub fn jitter_topology(
    base: &MeshTopology,
    sigma_db: f64,
    rng: &mut impl Rng,
) -> MeshTopology {
    let mut topo = base.clone();
    if sigma_db == 0.0 {
        return topo;
    }
    let noise = Normal::new(0.0, sigma_db).expect("finite non-negative sigma");
    for puc in &mut topo.pucs {
        let loss_db = -puc.il_db + noise.sample(rng);
        puc.il_db = -loss_db.max(0.0);
    }
    topo
}

/// Runs the study: for every size in `n_min..=n_max` and every trial,
/// draws a jittered device, plans a uniform multicast to the first `n`
/// ports on a mesh held at that device's average loss, and simulates the
/// resulting circuit on the device's true per-coupler losses.
#[allow(clippy::too_many_arguments)]
pub fn funnel_study(
    base: &MeshTopology,
    coeffs: WeightCoeffs,
    input: PortId,
    outputs: &[PortId],
    n_min: u32,
    n_max: u32,
    sigma_db: f64,
    trials: u32,
    seed: u64,
    sim: &SimParams,
) -> Result<FunnelStudy, CliError> {
    let sizes: Vec<u32> = (n_min..=n_max).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mean_db = vec![vec![None; sizes.len()]; outputs.len()];
    let mut points = Vec::with_capacity(sizes.len());

    for (size_idx, &n) in sizes.iter().enumerate() {
        let targets: Vec<PortId> = outputs[..n as usize].to_vec();
        let mut request = MulticastRequest::uniform(input, targets);
        request.il_model = IlModel::GlobalAverage;

        let mut port_sum = vec![0.0f64; n as usize];
        let mut spread_sum = 0.0;
        let mut min_sum = 0.0;
        let mut share_sum = 0.0;
        for _ in 0..trials {
            let device = jitter_topology(base, sigma_db, &mut rng);
            let mut assumed = base.clone();
            let average = device.mean_il_db();
            for puc in &mut assumed.pucs {
                puc.il_db = average;
            }
            let graph = build_graph(&assumed, coeffs)?;
            let config = auto_multicast(&graph, &request)?;
            let report = multicast_power_report(&device, &config, sim)?;
            for (i, &(_, db)) in report.powers.iter().enumerate() {
                port_sum[i] += db;
            }
            spread_sum += report.spread_db;
            min_sum += report.min_db;
            share_sum += report.share_spread_db;
        }
        let t = trials as f64;
        for (i, sum) in port_sum.iter().enumerate() {
            mean_db[i][size_idx] = Some(sum / t);
        }
        points.push(FunnelPoint {
            n,
            mean_spread_db: spread_sum / t,
            mean_min_db: min_sum / t,
            mean_share_spread_db: share_sum / t,
        });
    }

    Ok(FunnelStudy {
        ports: outputs.to_vec(),
        mean_db,
        sizes,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hexmesh::topology::{generate_hex_mesh, PucDefaults};

    #[test]
    fn zero_jitter_leaves_losses_alone() {
        let base = generate_hex_mesh(1, 1, &PucDefaults::default()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let same = jitter_topology(&base, 0.0, &mut rng);
        assert_eq!(base, same);
    }

    #[test]
    fn jitter_keeps_couplers_lossy_and_is_seeded() {
        let base = generate_hex_mesh(2, 2, &PucDefaults::default()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let a = jitter_topology(&base, 0.4, &mut rng);
        assert!(a.pucs.iter().all(|p| p.il_db <= 0.0));
        assert!(a.pucs.iter().any(|p| (p.il_db + 0.215).abs() > 1e-6));

        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let b = jitter_topology(&base, 0.4, &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn an_unjittered_study_recovers_exact_shares() {
        let base = generate_hex_mesh(2, 2, &PucDefaults::default()).unwrap();
        let study = funnel_study(
            &base,
            WeightCoeffs::default(),
            19,
            &[6, 4, 0],
            1,
            3,
            0.0,
            1,
            7,
            &SimParams::default(),
        )
        .unwrap();
        assert_eq!(study.sizes, vec![1, 2, 3]);
        // With no jitter the global-average model is exact, so every
        // output receives the same power at every size.
        for point in &study.points {
            assert!(point.mean_spread_db < 1e-6, "n={} spread {}", point.n, point.mean_spread_db);
        }
        // Ports join the funnel in order.
        assert_eq!(study.mean_db[2][0], None);
        assert!(study.mean_db[2][2].is_some());
        // Each extra way roughly costs 10·log10(n) of share.
        let one = study.mean_db[0][0].unwrap();
        let three = study.mean_db[0][2].unwrap();
        assert!(three < one);
    }
}
