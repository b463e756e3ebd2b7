//! Scenario file schema.
//!
//! A scenario is a TOML document naming a topology (generator dimensions
//! or a saved file), optional routing-weight and simulation parameters,
//! and one command with its arguments. Randomized commands must carry a
//! seed so every run is reproducible.

use std::path::{Path, PathBuf};

use hexmesh::graph::WeightCoeffs;
use hexmesh::multicast::IlModel;
use hexmesh::powersim::SimParams;
use hexmesh::topology::{generate_hex_mesh, load_topology, MeshTopology, PortId, PucDefaults};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologyRef,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub sim: SimSpec,
    pub command: CommandSpec,
}

/// Either generator dimensions or a path to a saved topology file
/// (resolved relative to the scenario file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<u32>,
}

impl TopologyRef {
    pub fn load(&self, scenario_dir: &Path) -> Result<MeshTopology, CliError> {
        match (&self.file, self.rows, self.cols) {
            (Some(file), None, None) => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    scenario_dir.join(file)
                };
                Ok(load_topology(&path)?)
            }
            (None, Some(rows), Some(cols)) => {
                Ok(generate_hex_mesh(rows, cols, &PucDefaults::default())?)
            }
            _ => Err(CliError::Input(
                "topology must give either `file` or both `rows` and `cols`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSpec {
    pub c_il: f64,
    pub c_bul: f64,
    pub c_pc: f64,
}

impl Default for WeightsSpec {
    fn default() -> Self {
        let w = WeightCoeffs::default();
        WeightsSpec {
            c_il: w.c_il,
            c_bul: w.c_bul,
            c_pc: w.c_pc,
        }
    }
}

impl WeightsSpec {
    pub fn coeffs(&self) -> WeightCoeffs {
        WeightCoeffs::new(self.c_il, self.c_bul, self.c_pc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub facet_loss_db: f64,
    pub crosstalk_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosstalk_db: Option<f64>,
    pub source_power_dbm: f64,
}

impl Default for SimSpec {
    fn default() -> Self {
        let p = SimParams::default();
        SimSpec {
            facet_loss_db: p.facet_loss_db,
            crosstalk_enabled: p.crosstalk_enabled,
            crosstalk_db: p.crosstalk_db,
            source_power_dbm: p.source_power_dbm,
        }
    }
}

impl SimSpec {
    pub fn params(&self) -> SimParams {
        SimParams {
            facet_loss_db: self.facet_loss_db,
            crosstalk_enabled: self.crosstalk_enabled,
            crosstalk_db: self.crosstalk_db,
            source_power_dbm: self.source_power_dbm,
        }
    }
}

/// How the multicast planner models per-PUC loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IlModelSpec {
    PerPuc,
    GlobalAverage,
}

impl IlModelSpec {
    pub fn model(self) -> IlModel {
        match self {
            IlModelSpec::PerPuc => IlModel::PerPuc,
            IlModelSpec::GlobalAverage => IlModel::GlobalAverage,
        }
    }
}

fn default_max_iter() -> u32 {
    25
}

fn default_matrices() -> usize {
    36
}

fn default_trials() -> u32 {
    20
}

fn default_n_min() -> u32 {
    1
}

fn default_il_model() -> IlModelSpec {
    IlModelSpec::PerPuc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandSpec {
    /// One point-to-point route, reported and simulated.
    Interconnect { input: PortId, output: PortId },
    /// Routes from each listed input to every other usable port.
    InterconnectSweep { inputs: Vec<PortId> },
    /// One explicit input→output assignment solved as a switch.
    Switch {
        pairs: Vec<(PortId, PortId)>,
        #[serde(default = "default_max_iter")]
        max_iter: u32,
    },
    /// All N! permutations between the two port sets, plus full matrix
    /// characterization of an evenly spaced sample of them.
    SwitchSweep {
        inputs: Vec<PortId>,
        outputs: Vec<PortId>,
        #[serde(default = "default_max_iter")]
        max_iter: u32,
        #[serde(default = "default_matrices")]
        matrices: usize,
    },
    /// One multicast tree from `input` to `outputs`.
    Multicast {
        input: PortId,
        outputs: Vec<PortId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proportion: Option<Vec<f64>>,
        #[serde(default = "default_il_model")]
        il_model: IlModelSpec,
    },
    /// Funnel study: trees of growing size with per-PUC loss jitter, the
    /// planner holding the global-average loss model.
    MulticastSweep {
        input: PortId,
        outputs: Vec<PortId>,
        #[serde(default = "default_n_min")]
        n_min: u32,
        n_max: u32,
        il_sigma_db: f64,
        #[serde(default = "default_trials")]
        trials: u32,
        seed: u64,
    },
    /// Times repeated point-to-point routing over seeded random pairs.
    BenchPaths { n_paths: u32, seed: u64 },
}

impl CommandSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandSpec::Interconnect { .. } => "interconnect",
            CommandSpec::InterconnectSweep { .. } => "interconnect-sweep",
            CommandSpec::Switch { .. } => "switch",
            CommandSpec::SwitchSweep { .. } => "switch-sweep",
            CommandSpec::Multicast { .. } => "multicast",
            CommandSpec::MulticastSweep { .. } => "multicast-sweep",
            CommandSpec::BenchPaths { .. } => "bench-paths",
        }
    }

    /// Replaces the command's seed, if it has one.
    pub fn override_seed(&mut self, seed: u64) {
        match self {
            CommandSpec::MulticastSweep { seed: s, .. } => *s = seed,
            CommandSpec::BenchPaths { seed: s, .. } => *s = seed,
            _ => {}
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("scenario parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        Scenario::from_toml(&text)
    }

    /// The resolved document written next to the results, defaults and
    /// overrides included.
    pub fn to_resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved scenarios serialize")
    }

    /// Checks every port argument against the topology before running.
    pub fn validate_ports(&self, topology: &MeshTopology) -> Result<(), CliError> {
        let check = |port: PortId| -> Result<(), CliError> {
            if topology.external_port(port).is_none() {
                return Err(CliError::Input(format!("port {port} does not exist")));
            }
            if !topology.is_usable(port) {
                return Err(CliError::Input(format!("port {port} is not usable")));
            }
            Ok(())
        };
        match &self.command {
            CommandSpec::Interconnect { input, output } => {
                check(*input)?;
                check(*output)?;
            }
            CommandSpec::InterconnectSweep { inputs } => {
                if inputs.is_empty() {
                    return Err(CliError::Input("inputs must not be empty".into()));
                }
                for &p in inputs {
                    check(p)?;
                }
            }
            CommandSpec::Switch { pairs, .. } => {
                for &(i, o) in pairs {
                    check(i)?;
                    check(o)?;
                }
            }
            CommandSpec::SwitchSweep {
                inputs, outputs, ..
            } => {
                for &p in inputs.iter().chain(outputs) {
                    check(p)?;
                }
            }
            CommandSpec::Multicast { input, outputs, .. } => {
                check(*input)?;
                for &p in outputs {
                    check(p)?;
                }
            }
            CommandSpec::MulticastSweep {
                input,
                outputs,
                n_min,
                n_max,
                il_sigma_db,
                trials,
                ..
            } => {
                check(*input)?;
                for &p in outputs {
                    check(p)?;
                }
                if *n_min < 1 || *n_max < *n_min || *n_max as usize > outputs.len() {
                    return Err(CliError::Input(format!(
                        "need 1 <= n_min <= n_max <= {} outputs, got {n_min}..{n_max}",
                        outputs.len()
                    )));
                }
                if !il_sigma_db.is_finite() || *il_sigma_db < 0.0 {
                    return Err(CliError::Input(format!(
                        "il_sigma_db must be a non-negative dB figure, got {il_sigma_db}"
                    )));
                }
                if *trials == 0 {
                    return Err(CliError::Input("trials must be at least 1".into()));
                }
            }
            CommandSpec::BenchPaths { n_paths, .. } => {
                if *n_paths == 0 {
                    return Err(CliError::Input("n_paths must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}
