//! Feedforward spiking network on a shared fixed time grid.
//!
//! Synapses are memoryless gain elements: the drive into neuron `k` at time
//! `t` is `sum_j w_kj * V_j(t)`. Each neuron step `[t, t + dt]` sees the drive
//! sampled at `t`, so every synapse carries a one-sample causal lag.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macrospin::{rk4_step, MacrospinParams, Vec3};
use crate::tlr::{self, pulse, TlrParams, TlrState};

/// Output pulse emitted by sources and macrospin neurons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeShape {
    pub amplitude: f64,
    pub duration: f64,
}

impl Default for SpikeShape {
    fn default() -> Self {
        let p = TlrParams::default();
        Self { amplitude: p.spike_amplitude, duration: p.spike_duration }
    }
}

impl SpikeShape {
    pub fn voltage(&self, t_since_onset: f64) -> f64 {
        pulse(self.amplitude, self.duration, t_since_onset)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacrospinNeuron {
    pub device: MacrospinParams,
    pub spike: SpikeShape,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Tlr(TlrParams),
    /// Drive is interpreted as the transistor gate voltage.
    Macrospin(MacrospinNeuron),
}

impl Backend {
    fn validate(&self) -> Result<()> {
        match self {
            Backend::Tlr(p) => p.validate(),
            Backend::Macrospin(n) => {
                n.device.validate()?;
                if !(n.spike.duration > 0.0) || !n.spike.amplitude.is_finite() {
                    return Err(Error::invalid("spike shape needs finite amplitude and duration > 0"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub id: String,
    pub backend: Backend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synapse {
    pub pre: String,
    pub post: String,
    /// Drive units per volt.
    pub weight: f64,
}

/// A stimulus neuron without dynamics: it emits the standard pulse at each
/// scheduled onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: String,
    pub schedule: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub neurons: Vec<Neuron>,
    pub synapses: Vec<Synapse>,
    pub sources: Vec<Source>,
    pub source_spike: SpikeShape,
}

impl Network {
    pub fn neuron(&self, id: &str) -> Option<&Neuron> {
        self.neurons.iter().find(|n| n.id == id)
    }

    pub fn neuron_mut(&mut self, id: &str) -> Option<&mut Neuron> {
        self.neurons.iter_mut().find(|n| n.id == id)
    }

    pub fn source_mut(&mut self, id: &str) -> Option<&mut Source> {
        self.sources.iter_mut().find(|s| s.id == id)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.synapses.iter().map(|s| s.weight).collect()
    }

    pub fn set_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.synapses.len(), "weight vector length mismatch");
        for (s, &w) in self.synapses.iter_mut().zip(weights) {
            s.weight = w;
        }
    }

    /// Replace every source schedule; sources missing from `schedules` fall silent.
    pub fn set_schedules(&mut self, schedules: &BTreeMap<String, Vec<f64>>) {
        for s in &mut self.sources {
            s.schedule = schedules.get(&s.id).cloned().unwrap_or_default();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateId(String),
    InvalidNeuron { id: String, reason: String },
    UnknownPost { pre: String, post: String },
    UnknownPre { pre: String, post: String },
    NonFiniteWeight { pre: String, post: String },
    Cycle(Vec<String>),
    BadSchedule { id: String, time: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            Violation::InvalidNeuron { id, reason } => write!(f, "neuron `{id}`: {reason}"),
            Violation::UnknownPost { pre, post } => {
                write!(f, "synapse {pre}->{post}: post `{post}` is not a neuron")
            }
            Violation::UnknownPre { pre, post } => {
                write!(f, "synapse {pre}->{post}: pre `{pre}` is not a neuron or source")
            }
            Violation::NonFiniteWeight { pre, post } => write!(f, "synapse {pre}->{post}: weight is not finite"),
            Violation::Cycle(ids) => write!(f, "cycle through {}", ids.join(" -> ")),
            Violation::BadSchedule { id, time } => write!(f, "source `{id}`: spike time {time} is not finite and >= 0"),
        }
    }
}

/// Check every structural invariant; empty iff the network is simulable.
pub fn validate_topology(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for id in net.sources.iter().map(|s| &s.id).chain(net.neurons.iter().map(|n| &n.id)) {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DuplicateId(id.clone()));
        }
    }
    for n in &net.neurons {
        if let Err(e) = n.backend.validate() {
            out.push(Violation::InvalidNeuron { id: n.id.clone(), reason: e.to_string() });
        }
    }
    for s in &net.sources {
        for &t in &s.schedule {
            if !(t.is_finite() && t >= 0.0) {
                out.push(Violation::BadSchedule { id: s.id.clone(), time: t });
            }
        }
    }
    let neuron_ids: HashSet<&str> = net.neurons.iter().map(|n| n.id.as_str()).collect();
    let source_ids: HashSet<&str> = net.sources.iter().map(|s| s.id.as_str()).collect();
    for s in &net.synapses {
        if !neuron_ids.contains(s.post.as_str()) {
            out.push(Violation::UnknownPost { pre: s.pre.clone(), post: s.post.clone() });
        }
        if !neuron_ids.contains(s.pre.as_str()) && !source_ids.contains(s.pre.as_str()) {
            out.push(Violation::UnknownPre { pre: s.pre.clone(), post: s.post.clone() });
        }
        if !s.weight.is_finite() {
            out.push(Violation::NonFiniteWeight { pre: s.pre.clone(), post: s.post.clone() });
        }
    }
    if let Err(cycle) = topological_order(net) {
        out.push(Violation::Cycle(cycle));
    }
    out
}

/// Neuron indices in dependency order, or the ids along one cycle.
fn topological_order(net: &Network) -> std::result::Result<Vec<usize>, Vec<String>> {
    let index: HashMap<&str, usize> = net.neurons.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let n = net.neurons.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in &net.synapses {
        if let (Some(&a), Some(&b)) = (index.get(s.pre.as_str()), index.get(s.post.as_str())) {
            preds[b].push(a);
        }
    }
    // Depth-first with colors; 1 = on stack, 2 = done.
    let mut color = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    fn visit(
        v: usize,
        preds: &[Vec<usize>],
        color: &mut [u8],
        order: &mut Vec<usize>,
        stack: &mut Vec<usize>,
    ) -> std::result::Result<(), Vec<usize>> {
        if color[v] == 2 {
            return Ok(());
        }
        if color[v] == 1 {
            let start = stack.iter().position(|&x| x == v).unwrap_or(0);
            let mut cyc = stack[start..].to_vec();
            cyc.push(v);
            return Err(cyc);
        }
        color[v] = 1;
        stack.push(v);
        for &p in &preds[v] {
            visit(p, preds, color, order, stack)?;
        }
        stack.pop();
        color[v] = 2;
        order.push(v);
        Ok(())
    }
    for v in 0..n {
        let mut stack = Vec::new();
        if let Err(cyc) = visit(v, &preds, &mut color, &mut order, &mut stack) {
            let mut ids: Vec<String> = cyc.iter().map(|&i| net.neurons[i].id.clone()).collect();
            ids.reverse();
            return Err(ids);
        }
    }
    Ok(order)
}

/// Drive delivered to `post_id`: `sum w_kj * V_j` over its in-edges.
pub fn synaptic_drive(net: &Network, post_id: &str, presyn_voltages: &HashMap<String, f64>) -> Result<f64> {
    if net.neuron(post_id).is_none() {
        return Err(Error::invalid(format!("unknown neuron `{post_id}`")));
    }
    let mut drive = 0.0;
    for s in net.synapses.iter().filter(|s| s.post == post_id) {
        let v = presyn_voltages.get(&s.pre).ok_or_else(|| {
            Error::invalid(format!("missing presynaptic voltage for `{}` (edge {}->{})", s.pre, s.pre, s.post))
        })?;
        drive += s.weight * v;
    }
    Ok(drive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.001, horizon: 5.0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(Error::invalid(format!("dt must be in (0, 0.01] ns, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 10.0 * self.dt) {
            return Err(Error::invalid(format!("horizon must be >= 10*dt, got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub id: String,
    pub values: Vec<f64>,
}

/// Sampled waveforms plus spike onsets. Signal ids are `<id>.v` for every
/// source and neuron, and `<id>.drive` / `<id>.state` for neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub time: Vec<f64>,
    pub signals: Vec<Signal>,
    pub spike_onsets: BTreeMap<String, Vec<f64>>,
}

impl Trace {
    pub fn signal(&self, id: &str) -> Option<&[f64]> {
        self.signals.iter().find(|s| s.id == id).map(|s| s.values.as_slice())
    }

    /// CSV with header `time_ns,<signal_id>...`, one row per grid point.
    /// Only signals accepted by `keep` are written.
    pub fn write_csv_filtered(&self, mut w: impl Write, keep: impl Fn(&str) -> bool) -> io::Result<()> {
        let cols: Vec<&Signal> = self.signals.iter().filter(|s| keep(&s.id)).collect();
        write!(w, "time_ns")?;
        for s in &cols {
            write!(w, ",{}", s.id)?;
        }
        writeln!(w)?;
        for (k, t) in self.time.iter().enumerate() {
            write!(w, "{t:?}")?;
            for s in &cols {
                write!(w, ",{:?}", s.values[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, w: impl Write) -> io::Result<()> {
        self.write_csv_filtered(w, |_| true)
    }
}

pub fn first_spike_time(trace: &Trace, id: &str) -> Result<Option<f64>> {
    trace
        .spike_onsets
        .get(id)
        .map(|onsets| onsets.iter().copied().reduce(f64::min))
        .ok_or_else(|| Error::invalid(format!("trace has no neuron or source `{id}`")))
}

enum Runtime {
    Tlr(TlrParams, TlrState),
    Macrospin { neuron: MacrospinNeuron, m: Vec3, last_onset: Option<f64> },
}

impl Runtime {
    fn new(backend: &Backend) -> Self {
        match *backend {
            Backend::Tlr(p) => Runtime::Tlr(p, TlrState::default()),
            Backend::Macrospin(n) => Runtime::Macrospin {
                neuron: n,
                m: n.device.initial_magnetization(),
                last_onset: None,
            },
        }
    }

    fn state_value(&self) -> f64 {
        match self {
            Runtime::Tlr(_, s) => s.accumulation,
            Runtime::Macrospin { neuron, m, .. } => m.dot(neuron.device.polarizer),
        }
    }

    /// Advance to `t + dt`; returns the output voltage at `t + dt` and any onset.
    fn step(&mut self, drive: f64, t: f64, dt: f64) -> Result<(f64, Option<f64>)> {
        match self {
            Runtime::Tlr(p, state) => {
                let out = tlr::tlr_step(*state, p, drive, t, dt)?;
                *state = out.state;
                Ok((out.output_voltage, out.spike_onset))
            }
            Runtime::Macrospin { neuron, m, last_onset } => {
                let e = neuron.device.polarizer;
                let (next, _) = rk4_step(*m, &neuron.device, |_| drive, t, dt)?;
                let (before, after) = (m.dot(e), next.dot(e));
                let mut onset = None;
                if before < 0.0 && after >= 0.0 {
                    let t_on = t + dt * before / (before - after);
                    onset = Some(t_on);
                    *last_onset = Some(t_on);
                }
                *m = next;
                let v = last_onset.map_or(0.0, |o| neuron.spike.voltage(t + dt - o));
                Ok((v, onset))
            }
        }
    }
}

struct Compiled {
    /// Sources occupy signal slots `0..n_sources`, neurons follow.
    n_sources: usize,
    order: Vec<usize>,
    inputs: Vec<Vec<(usize, f64)>>,
}

fn compile(net: &Network, sim: &SimConfig) -> Result<Compiled> {
    sim.validate()?;
    let violations = validate_topology(net);
    if !violations.is_empty() {
        return Err(Error::Topology(violations.iter().map(ToString::to_string).collect()));
    }
    for s in &net.sources {
        if let Some(&t) = s.schedule.iter().find(|&&t| t > sim.horizon) {
            return Err(Error::invalid(format!("source `{}` spike at {t} ns is beyond the horizon", s.id)));
        }
    }
    let n_sources = net.sources.len();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, s) in net.sources.iter().enumerate() {
        slot.insert(&s.id, i);
    }
    for (i, n) in net.neurons.iter().enumerate() {
        slot.insert(&n.id, n_sources + i);
    }
    let mut inputs = vec![Vec::new(); net.neurons.len()];
    for s in &net.synapses {
        inputs[slot[s.post.as_str()] - n_sources].push((slot[s.pre.as_str()], s.weight));
    }
    let order = topological_order(net).map_err(|c| Error::Topology(vec![format!("cycle through {}", c.join(" -> "))]))?;
    Ok(Compiled { n_sources, order, inputs })
}

struct Run {
    onsets: Vec<Vec<f64>>,
    record: Option<Recorded>,
}

struct Recorded {
    time: Vec<f64>,
    voltage: Vec<Vec<f64>>,
    drive: Vec<Vec<f64>>,
    state: Vec<Vec<f64>>,
}

fn run(net: &Network, sim: &SimConfig, record: bool, stop_after: Option<usize>) -> Result<Run> {
    let c = compile(net, sim)?;
    let n_sig = c.n_sources + net.neurons.len();
    let n_neu = net.neurons.len();
    let steps = sim.steps();
    let mut runtimes: Vec<Runtime> = net.neurons.iter().map(|n| Runtime::new(&n.backend)).collect();
    let mut voltage = vec![0.0; n_sig];
    let mut drive = vec![0.0; n_neu];
    let mut onsets: Vec<Vec<f64>> = vec![Vec::new(); n_sig];
    for (i, s) in net.sources.iter().enumerate() {
        onsets[i] = s.schedule.clone();
    }
    let mut rec = record.then(|| Recorded {
        time: Vec::with_capacity(steps + 1),
        voltage: vec![Vec::with_capacity(steps + 1); n_sig],
        drive: vec![Vec::with_capacity(steps + 1); n_neu],
        state: vec![Vec::with_capacity(steps + 1); n_neu],
    });

    for k in 0..=steps {
        let t = sim.time(k);
        for (i, s) in net.sources.iter().enumerate() {
            voltage[i] = s
                .schedule
                .iter()
                .filter(|&&on| on <= t)
                .map(|&on| net.source_spike.voltage(t - on))
                .fold(0.0, |a, v| a + v);
        }
        for &j in &c.order {
            drive[j] = c.inputs[j].iter().fold(0.0, |a, &(pre, w)| a + w * voltage[pre]);
        }
        if let Some(r) = rec.as_mut() {
            r.time.push(t);
            for (i, v) in voltage.iter().enumerate() {
                r.voltage[i].push(*v);
            }
            for j in 0..n_neu {
                r.drive[j].push(drive[j]);
                r.state[j].push(runtimes[j].state_value());
            }
        }
        if k == steps {
            break;
        }
        for &j in &c.order {
            let (v, onset) = runtimes[j]
                .step(drive[j], t, sim.dt)
                .map_err(|e| e.for_neuron(&net.neurons[j].id))?;
            voltage[c.n_sources + j] = v;
            if let Some(on) = onset {
                onsets[c.n_sources + j].push(on);
            }
        }
        if let Some(target) = stop_after {
            if !onsets[c.n_sources + target].is_empty() {
                break;
            }
        }
    }
    Ok(Run { onsets, record: rec })
}

/// Simulate the network over `[0, horizon]` and record every signal.
pub fn simulate_network(net: &Network, sim: &SimConfig) -> Result<Trace> {
    let out = run(net, sim, true, None)?;
    let rec = out.record.expect("recording requested");
    let n_src = net.sources.len();
    let mut signals = Vec::with_capacity(n_src + 3 * net.neurons.len());
    let mut rec_voltage = rec.voltage.into_iter();
    for s in &net.sources {
        signals.push(Signal { id: format!("{}.v", s.id), values: rec_voltage.next().unwrap_or_default() });
    }
    for ((n, d), st) in net.neurons.iter().zip(rec.drive).zip(rec.state) {
        signals.push(Signal { id: format!("{}.drive", n.id), values: d });
        signals.push(Signal { id: format!("{}.v", n.id), values: rec_voltage.next().unwrap_or_default() });
        signals.push(Signal { id: format!("{}.state", n.id), values: st });
    }
    let ids = net.sources.iter().map(|s| &s.id).chain(net.neurons.iter().map(|n| &n.id));
    let spike_onsets = ids.cloned().zip(out.onsets).collect();
    Ok(Trace { time: rec.time, signals, spike_onsets })
}

/// First spike time of every neuron without recording waveforms. When
/// `stop_at` names a neuron the run ends right after its first spike.
pub fn neuron_first_spikes(net: &Network, sim: &SimConfig, stop_at: Option<&str>) -> Result<BTreeMap<String, Option<f64>>> {
    let target = match stop_at {
        Some(id) => Some(
            net.neurons
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| Error::invalid(format!("unknown neuron `{id}`")))?,
        ),
        None => None,
    };
    let out = run(net, sim, false, target)?;
    let n_src = net.sources.len();
    Ok(net
        .neurons
        .iter()
        .enumerate()
        .map(|(j, n)| (n.id.clone(), out.onsets[n_src + j].iter().copied().reduce(f64::min)))
        .collect())
}
