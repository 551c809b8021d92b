//! Turning a configuration document into core objects.

use std::collections::BTreeMap;

use mtjnet_core::network::{validate_topology, Backend, MacrospinNeuron, Network, Neuron, Source, Synapse};
use mtjnet_core::tlr::TlrParams;
use mtjnet_core::trainer::{edge_name, Dataset, Sample, TrainConfig};
use mtjnet_core::xor::{build_xor_network, encode_inputs, xor_dataset, xor_train_config, XorArch, XorRow, DEFAULT_SEED};
use serde::Deserialize;

use crate::config::{key_error, BackendKind, ConfigError, LoadedConfig, Topology};

#[derive(Debug, Deserialize)]
struct WeightsFile {
    weights: BTreeMap<String, f64>,
}

fn merge<T>(base: &T, over: Option<&toml::Table>, key: &str) -> Result<T, ConfigError>
where
    T: Clone + serde::Serialize + serde::de::DeserializeOwned,
{
    let Some(over) = over else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).map_err(|e| key_error(key, e))?;
    for (k, v) in over {
        table.insert(k.clone(), v.clone());
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| key_error(key, e.message()))
}

fn backend_for(cfg: &LoadedConfig, id: &str, kind: BackendKind) -> Result<Backend, ConfigError> {
    let doc = &cfg.doc;
    let over = doc.network.overrides.get(id);
    let key = format!("network.overrides.{id}");
    let backend = match kind {
        BackendKind::Tlr => {
            let p: TlrParams = merge(&doc.neuron.tlr, over, &key)?;
            p.validate().map_err(|e| key_error(&key, e))?;
            Backend::Tlr(p)
        }
        BackendKind::Macrospin => {
            let n: MacrospinNeuron = merge(&doc.neuron.macrospin, over, &key)?;
            n.device.validate().map_err(|e| key_error(&key, e))?;
            Backend::Macrospin(n)
        }
    };
    Ok(backend)
}

/// Build the configured network with weights applied and topology checked.
pub fn network(cfg: &LoadedConfig) -> Result<Network, ConfigError> {
    let doc = &cfg.doc;
    let net_cfg = &doc.network;
    let source_spike = net_cfg.source_spike.unwrap_or_else(|| {
        let p = &doc.neuron.tlr;
        mtjnet_core::network::SpikeShape { amplitude: p.spike_amplitude, duration: p.spike_duration }
    });
    let mut net = match net_cfg.topology {
        Topology::Xor => {
            if !net_cfg.neurons.is_empty() || !net_cfg.sources.is_empty() || !net_cfg.synapses.is_empty() {
                return Err(key_error("network", "neurons/sources/synapses require topology = \"custom\""));
            }
            let arch = XorArch { neuron: doc.neuron.tlr, bias_to_output: net_cfg.bias_to_output, source_spike };
            let mut net = build_xor_network(&arch);
            for n in &mut net.neurons {
                n.backend = backend_for(cfg, &n.id, doc.neuron.backend)?;
            }
            net
        }
        Topology::Custom => Network {
            neurons: net_cfg
                .neurons
                .iter()
                .map(|n| {
                    Ok(Neuron { id: n.id.clone(), backend: backend_for(cfg, &n.id, n.backend.unwrap_or(doc.neuron.backend))? })
                })
                .collect::<Result<_, ConfigError>>()?,
            synapses: net_cfg
                .synapses
                .iter()
                .map(|s| Synapse { pre: s.pre.clone(), post: s.post.clone(), weight: s.weight })
                .collect(),
            sources: net_cfg.sources.iter().map(|s| Source { id: s.id.clone(), schedule: s.schedule.clone() }).collect(),
            source_spike,
        },
    };
    for id in net_cfg.overrides.keys() {
        if net.neuron(id).is_none() {
            return Err(key_error(&format!("network.overrides.{id}"), "no such neuron"));
        }
    }

    let mut weights = BTreeMap::new();
    if let Some(path) = &net_cfg.weights_file {
        let path = cfg.base_dir.join(path);
        let text = std::fs::read_to_string(&path).map_err(|e| key_error("network.weights_file", format!("{}: {e}", path.display())))?;
        let file: WeightsFile = toml::from_str(&text).map_err(|e| key_error("network.weights_file", format!("{}: {e}", path.display())))?;
        weights.extend(file.weights);
    }
    weights.extend(net_cfg.weights.iter().map(|(k, v)| (k.clone(), *v)));
    for (edge, w) in &weights {
        let syn = net
            .synapses
            .iter_mut()
            .find(|s| edge_name(&s.pre, &s.post) == *edge)
            .ok_or_else(|| key_error(&format!("network.weights.\"{edge}\""), "no such edge"))?;
        syn.weight = *w;
    }

    let violations = validate_topology(&net);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(key_error("network", msgs.join("; ")));
    }
    Ok(net)
}

/// Training rows: the `[dataset]` section, or the XOR truth table.
pub fn dataset(cfg: &LoadedConfig) -> Result<Dataset, ConfigError> {
    let doc = &cfg.doc;
    match (&doc.dataset, doc.network.topology) {
        (Some(d), _) => {
            if d.samples.is_empty() {
                return Err(key_error("dataset.samples", "at least one sample is required"));
            }
            Ok(Dataset {
                output: d.output.clone(),
                samples: d.samples.iter().map(|s| Sample { schedules: s.schedules.clone(), target: s.target }).collect(),
            })
        }
        (None, Topology::Xor) => xor_dataset(&doc.encoding, doc.sim.horizon).map_err(|e| key_error("encoding", e)),
        (None, Topology::Custom) => Err(key_error("dataset", "required for topology = \"custom\"")),
    }
}

pub fn train_config(cfg: &LoadedConfig, seed: Option<u64>) -> TrainConfig {
    let mut tc = match (&cfg.doc.train, cfg.doc.network.topology) {
        (Some(t), _) => t.clone(),
        (None, Topology::Xor) => xor_train_config(DEFAULT_SEED),
        (None, Topology::Custom) => TrainConfig::default(),
    };
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc
}

/// Source schedules for a single `simulate` run, if the stimulus sets any.
pub fn stimulus(cfg: &LoadedConfig) -> Result<Option<BTreeMap<String, Vec<f64>>>, ConfigError> {
    let st = &cfg.doc.stimulus;
    if let Some(s) = &st.schedules {
        return Ok(Some(s.clone()));
    }
    match st.row {
        Some([a, b]) => encode_inputs(XorRow { a, b }, &cfg.doc.encoding, cfg.doc.sim.horizon)
            .map(Some)
            .map_err(|e| key_error("stimulus.row", e)),
        None => Ok(None),
    }
}
