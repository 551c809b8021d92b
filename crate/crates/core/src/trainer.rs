//! Spike-timing gradient descent.
//!
//! Each row contributes `dw = -eta * dL/dt * dt/dw` for every weight, with
//! `L = (t - t_desired)^2 / 2` on the output neuron's first spike time and
//! `dt/dw` measured by finite differences over full network simulations.
//! Updates from all rows are summed and applied once per epoch.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{neuron_first_spikes, Network, SimConfig};

/// Squared timing error, ns².
pub fn loss(t_actual: f64, t_desired: f64) -> f64 {
    let d = t_actual - t_desired;
    0.5 * d * d
}

/// dL/dt_actual, ns.
pub fn loss_gradient_time(t_actual: f64, t_desired: f64) -> f64 {
    t_actual - t_desired
}

pub fn weight_update(grad_time: f64, jacobian: f64, eta: f64) -> f64 {
    -eta * grad_time * jacobian
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub fd_epsilon: f64,
    pub max_epochs: usize,
    /// Convergence band around each target, ns.
    pub tol: f64,
    /// Output time assumed for a silent output; defaults to the horizon.
    pub no_spike_penalty_time: Option<f64>,
    pub seed: u64,
    /// Evaluate finite differences on the rayon pool.
    pub parallel: bool,
    /// Fallback initialization range for edges without an entry in `init`.
    pub init_default: InitRange,
    /// Per-edge initialization ranges keyed `pre->post`.
    pub init: BTreeMap<String, InitRange>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            fd_epsilon: 1e-3,
            max_epochs: 10_000,
            tol: 0.05,
            no_spike_penalty_time: None,
            seed: 0,
            parallel: true,
            init_default: InitRange { min: 0.0, max: 2.0 },
            init: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // eta = 0 is allowed: it freezes the weights.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta must be finite and >= 0"));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return Err(Error::invalid("fd_epsilon must be finite and > 0"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be finite and > 0"));
        }
        if let Some(p) = self.no_spike_penalty_time {
            if !p.is_finite() {
                return Err(Error::invalid("no_spike_penalty_time must be finite"));
            }
        }
        for (edge, r) in std::iter::once(("default", &self.init_default)).chain(self.init.iter().map(|(k, v)| (k.as_str(), v))) {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(Error::invalid(format!("init range for {edge} must be finite with min <= max")));
            }
        }
        Ok(())
    }

    /// Output time charged for a silent row.
    pub fn penalty(&self, sim: &SimConfig) -> f64 {
        self.no_spike_penalty_time.unwrap_or(sim.horizon)
    }
}

pub fn edge_name(pre: &str, post: &str) -> String {
    format!("{pre}->{post}")
}

/// Draw initial weights from the configured per-edge uniform ranges.
pub fn initialize_weights(net: &mut Network, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let known: BTreeSet<String> = net.synapses.iter().map(|s| edge_name(&s.pre, &s.post)).collect();
    if let Some(unknown) = config.init.keys().find(|k| !known.contains(*k)) {
        return Err(Error::invalid(format!("init range for unknown edge `{unknown}`")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for s in &mut net.synapses {
        let r = config.init.get(&edge_name(&s.pre, &s.post)).unwrap_or(&config.init_default);
        let u: f64 = rng.random();
        s.weight = r.min + (r.max - r.min) * u;
    }
    Ok(())
}

/// One stimulus row: source schedules and the desired output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub schedules: BTreeMap<String, Vec<f64>>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Neuron whose first spike is trained.
    pub output: String,
    pub samples: Vec<Sample>,
}

/// Outcome of one simulation as seen by the trainer.
#[derive(Debug, Clone, PartialEq)]
struct Probe {
    output: Option<f64>,
    /// Hidden neurons that fired before the run ended.
    fired: BTreeSet<String>,
}

fn probe(net: &Network, schedules: &BTreeMap<String, Vec<f64>>, output: &str, sim: &SimConfig) -> Result<Probe> {
    let mut net = net.clone();
    net.set_schedules(schedules);
    let spikes = neuron_first_spikes(&net, sim, Some(output))?;
    let fired = spikes
        .iter()
        .filter(|(id, t)| id.as_str() != output && t.is_some())
        .map(|(id, _)| id.clone())
        .collect();
    Ok(Probe { output: spikes.get(output).copied().flatten(), fired })
}

fn with_weight(net: &Network, edge: usize, w: f64) -> Network {
    let mut n = net.clone();
    n.synapses[edge].weight = w;
    n
}

/// Finite-difference sensitivity of the output first-spike time to one
/// weight, ns per weight unit.
///
/// Central differences are used when the output fires on both sides and no
/// hidden neuron changes firing status. Otherwise a one-sided difference is
/// taken on the side that stays on the current branch; a silent output is
/// scored at `penalty` and differenced toward whichever side fires.
pub fn spike_time_jacobian_fd(
    net: &Network,
    schedules: &BTreeMap<String, Vec<f64>>,
    output: &str,
    edge: usize,
    eps: f64,
    sim: &SimConfig,
    penalty: f64,
) -> Result<f64> {
    let base = probe(net, schedules, output, sim)?;
    jacobian_from_base(net, schedules, output, edge, eps, sim, penalty, &base)
}

#[allow(clippy::too_many_arguments)]
fn jacobian_from_base(
    net: &Network,
    schedules: &BTreeMap<String, Vec<f64>>,
    output: &str,
    edge: usize,
    eps: f64,
    sim: &SimConfig,
    penalty: f64,
    base: &Probe,
) -> Result<f64> {
    if edge >= net.synapses.len() {
        return Err(Error::invalid(format!("edge index {edge} out of range")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    let w = net.synapses[edge].weight;
    let plus = probe(&with_weight(net, edge, w + eps), schedules, output, sim)?;
    let minus = probe(&with_weight(net, edge, w - eps), schedules, output, sim)?;

    let Some(t0) = base.output else {
        return Ok(match (plus.output, minus.output) {
            (Some(tp), _) => (tp - penalty) / eps,
            (None, Some(tm)) => (penalty - tm) / eps,
            (None, None) => 0.0,
        });
    };
    let plus_ok = plus.output.is_some() && plus.fired == base.fired;
    let minus_ok = minus.output.is_some() && minus.fired == base.fired;
    Ok(match (plus_ok, minus_ok, plus.output, minus.output) {
        (true, true, Some(tp), Some(tm)) => (tp - tm) / (2.0 * eps),
        (true, false, Some(tp), _) => (tp - t0) / eps,
        (false, true, _, Some(tm)) => (t0 - tm) / eps,
        _ => 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    /// Output first-spike time per row; `None` if silent.
    pub row_times: Vec<Option<f64>>,
    /// Weights the losses were evaluated at.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV `epoch,total_loss_ns2,t_row1,...`; silent rows are left blank.
    pub fn to_csv(&self) -> String {
        let rows = self.epochs.first().map_or(0, |e| e.row_times.len());
        let mut out = String::from("epoch,total_loss_ns2");
        for r in 1..=rows {
            out.push_str(&format!(",t_row{r}"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{:?}", e.epoch, e.total_loss));
            for t in &e.row_times {
                match t {
                    Some(t) => out.push_str(&format!(",{t:?}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Converged,
    BudgetExhausted,
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub network: Network,
    pub history: TrainHistory,
    pub status: TrainStatus,
}

impl TrainResult {
    pub fn into_result(self) -> Result<(Network, TrainHistory)> {
        match self.status {
            TrainStatus::Diverged { epoch, loss, initial } => Err(Error::Diverged { epoch, loss, initial }),
            _ => Ok((self.network, self.history)),
        }
    }
}

/// Evaluate every row at the current weights: (total loss, per-row times).
pub fn evaluate(net: &Network, data: &Dataset, sim: &SimConfig, penalty: f64) -> Result<(f64, Vec<Option<f64>>)> {
    let mut total = 0.0;
    let mut times = Vec::with_capacity(data.samples.len());
    for (r, s) in data.samples.iter().enumerate() {
        let p = probe(net, &s.schedules, &data.output, sim).map_err(|e| Error::Row { row: r + 1, source: Box::new(e) })?;
        total += loss(p.output.unwrap_or(penalty), s.target);
        times.push(p.output);
    }
    Ok((total, times))
}

/// Per-edge weight deltas for one epoch, summed over rows in order.
pub fn epoch_update(net: &Network, data: &Dataset, sim: &SimConfig, config: &TrainConfig) -> Result<Vec<f64>> {
    let penalty = config.penalty(sim);
    let bases = data
        .samples
        .iter()
        .map(|s| probe(net, &s.schedules, &data.output, sim))
        .collect::<Result<Vec<_>>>()?;
    let edge_delta = |edge: usize| -> Result<f64> {
        let mut delta = 0.0;
        for (s, base) in data.samples.iter().zip(&bases) {
            let t = base.output.unwrap_or(penalty);
            let g = loss_gradient_time(t, s.target);
            if g == 0.0 {
                continue;
            }
            let jac = jacobian_from_base(net, &s.schedules, &data.output, edge, config.fd_epsilon, sim, penalty, base)?;
            delta += weight_update(g, jac, config.eta);
        }
        Ok(delta)
    };
    let edges = 0..net.synapses.len();
    if config.parallel {
        edges.into_par_iter().map(edge_delta).collect()
    } else {
        edges.map(edge_delta).collect()
    }
}

fn converged(times: &[Option<f64>], data: &Dataset, tol: f64) -> bool {
    times
        .iter()
        .zip(&data.samples)
        .all(|(t, s)| t.is_some_and(|t| (t - s.target).abs() <= tol))
}

/// Batch gradient descent until every row is within `tol` of its target or
/// the epoch budget runs out.
pub fn train(net: &Network, data: &Dataset, sim: &SimConfig, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    sim.validate()?;
    if data.samples.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if net.neuron(&data.output).is_none() {
        return Err(Error::invalid(format!("output neuron `{}` not in network", data.output)));
    }
    let penalty = config.penalty(sim);
    let mut net = net.clone();
    let mut history = TrainHistory::default();
    let mut initial = None;

    for epoch in 1..=config.max_epochs.max(1) {
        let (total, times) = evaluate(&net, data, sim, penalty)?;
        history.epochs.push(EpochRecord { epoch, total_loss: total, row_times: times.clone(), weights: net.weights() });
        let initial_loss = *initial.get_or_insert(total);
        if converged(&times, data, config.tol) {
            return Ok(TrainResult { network: net, history, status: TrainStatus::Converged });
        }
        if total > 1e3 * initial_loss {
            let status = TrainStatus::Diverged { epoch, loss: total, initial: initial_loss };
            return Ok(TrainResult { network: net, history, status });
        }
        if epoch == config.max_epochs {
            break;
        }
        let deltas = epoch_update(&net, data, sim, config)?;
        for (s, d) in net.synapses.iter_mut().zip(deltas) {
            s.weight += d;
        }
    }
    Ok(TrainResult { network: net, history, status: TrainStatus::BudgetExhausted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert_eq!(loss(2.5, 2.5), 0.0);
        assert_eq!(loss(2.0, 2.5), 0.125);
        assert_eq!(loss(1.3, 2.9), loss(2.9, 1.3));
    }

    #[test]
    fn loss_gradient_values() {
        assert_eq!(loss_gradient_time(2.5, 2.0), 0.5);
        assert_eq!(loss_gradient_time(2.0, 2.0), 0.0);
    }

    #[test]
    fn update_values() {
        assert!((weight_update(0.5, -1.0, 0.1) - 0.05).abs() < 1e-17);
        assert_eq!(weight_update(0.0, -3.0, 0.1), 0.0);
        assert_eq!(weight_update(0.3, 0.7, 0.2), 2.0 * weight_update(0.3, 0.7, 0.1));
    }

    #[test]
    fn history_csv_leaves_silent_rows_blank() {
        let h = TrainHistory {
            epochs: vec![EpochRecord { epoch: 1, total_loss: 0.5, row_times: vec![Some(2.0), None], weights: vec![] }],
        };
        assert_eq!(h.to_csv(), "epoch,total_loss_ns2,t_row1,t_row2\n1,0.5,2.0,\n");
    }

    #[test]
    fn seeded_init_is_reproducible_and_in_range() {
        use crate::network::{Backend, Neuron, Source, Synapse};
        use crate::tlr::TlrParams;
        let mut net = Network {
            neurons: vec![Neuron { id: "n".into(), backend: Backend::Tlr(TlrParams::default()) }],
            synapses: vec![
                Synapse { pre: "a".into(), post: "n".into(), weight: 0.0 },
                Synapse { pre: "b".into(), post: "n".into(), weight: 0.0 },
            ],
            sources: vec![Source { id: "a".into(), schedule: vec![] }, Source { id: "b".into(), schedule: vec![] }],
            ..Network::default()
        };
        let mut cfg = TrainConfig { seed: 7, ..TrainConfig::default() };
        cfg.init.insert("b->n".into(), InitRange { min: -3.0, max: -2.0 });
        initialize_weights(&mut net, &cfg).unwrap();
        let first = net.weights();
        initialize_weights(&mut net, &cfg).unwrap();
        assert_eq!(first, net.weights());
        assert!((0.0..=2.0).contains(&first[0]));
        assert!((-3.0..=-2.0).contains(&first[1]));

        cfg.init.insert("x->n".into(), InitRange { min: 0.0, max: 1.0 });
        assert!(initialize_weights(&mut net, &cfg).is_err());
    }
}
