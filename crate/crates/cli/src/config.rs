//! TOML configuration document shared by every subcommand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mtjnet_core::network::{MacrospinNeuron, SimConfig, SpikeShape};
use mtjnet_core::tlr::TlrParams;
use mtjnet_core::trainer::TrainConfig;
use mtjnet_core::xor::Encoding;
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub neuron: NeuronSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub sim: SimConfig,
    /// Absent: the XOR recipe for the `xor` topology, plain defaults otherwise.
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub encoding: Encoding,
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub stimulus: StimulusSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Tlr,
    Macrospin,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    pub backend: BackendKind,
    pub tlr: TlrParams,
    pub macrospin: MacrospinNeuron,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Xor,
    Custom,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub topology: Topology,
    pub bias_to_output: bool,
    /// Pulse emitted by sources; defaults to the TLR spike shape.
    pub source_spike: Option<SpikeShape>,
    /// Weights keyed `pre->post`; unlisted edges stay 0.
    pub weights: BTreeMap<String, f64>,
    /// TOML file with a `[weights]` table (e.g. a previous `weights.out`),
    /// resolved relative to the config file. Inline `weights` win.
    pub weights_file: Option<PathBuf>,
    pub neurons: Vec<NeuronSpec>,
    pub sources: Vec<SourceSpec>,
    pub synapses: Vec<SynapseSpec>,
    /// Per-neuron partial parameter tables merged over the `[neuron]` section.
    pub overrides: BTreeMap<String, toml::Table>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            topology: Topology::Xor,
            bias_to_output: true,
            source_spike: None,
            weights: BTreeMap::new(),
            weights_file: None,
            neurons: Vec::new(),
            sources: Vec::new(),
            synapses: Vec::new(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronSpec {
    pub id: String,
    pub backend: Option<BackendKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    #[serde(default)]
    pub schedule: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynapseSpec {
    pub pre: String,
    pub post: String,
    #[serde(default)]
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub output: String,
    pub samples: Vec<SampleSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub target: f64,
    #[serde(default)]
    pub schedules: BTreeMap<String, Vec<f64>>,
}

/// Stimulus for `simulate`: an XOR row, explicit schedules, or neither
/// (custom sources keep their own schedules).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusSection {
    pub row: Option<[u8; 2]>,
    pub schedules: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub backend: BackendKind,
    /// Drive levels: drive units for TLR, gate volts for macrospin.
    pub drives: Vec<f64>,
    /// Fit the TLR parameters to macrospin latencies before a TLR sweep.
    pub calibrate: bool,
    pub calibration_grid: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            backend: BackendKind::Tlr,
            drives: Vec::new(),
            calibrate: false,
            calibration_grid: (0..12).map(|k| 0.95 + 0.05 * k as f64).collect(),
            dt: 0.001,
            horizon: 20.0,
        }
    }
}

/// A configuration problem, reported with the offending key or line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn key_error(key: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {msg}"))
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub doc: ConfigDocument,
    /// Directory relative paths inside the document resolve against.
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let doc = parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { doc, base_dir })
}

pub fn parse(text: &str) -> Result<ConfigDocument, ConfigError> {
    let doc: ConfigDocument = toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(key_error(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", doc.schema_version),
        ));
    }
    doc.sim.validate().map_err(|e| key_error(sim_key(&doc.sim), e))?;
    doc.neuron.tlr.validate().map_err(|e| key_error("neuron.tlr", e))?;
    doc.neuron.macrospin.device.validate().map_err(|e| key_error("neuron.macrospin.device", e))?;
    if let Some(train) = &doc.train {
        train.validate().map_err(|e| key_error("train", e))?;
    }
    Ok(doc)
}

fn sim_key(sim: &SimConfig) -> &'static str {
    if !(sim.dt > 0.0 && sim.dt <= 0.01) {
        "sim.dt"
    } else {
        "sim.horizon"
    }
}
