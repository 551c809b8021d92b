use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use mtjnet_core::macrospin::{calibrate_tlr, switching_latency};
use mtjnet_core::network::{simulate_network, Network, Trace};
use mtjnet_core::tlr::run_drive;
use mtjnet_core::trainer::{edge_name, initialize_weights, train, TrainConfig, TrainHistory, TrainStatus};
use mtjnet_core::xor::{run_xor_eval, Decoded, XorReport};
use serde::Serialize;

use crate::config::{self, key_error, BackendKind, ConfigError, LoadedConfig, Topology};
use crate::setup;

/// Everything that ends a command with a non-zero status.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Simulation(mtjnet_core::Error),
    Io(PathBuf, io::Error),
    BudgetExhausted(usize),
    Diverged(mtjnet_core::Error),
    Mechanism(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(..) => 1,
            Failure::Config(_) => 2,
            Failure::Simulation(_) => 3,
            Failure::BudgetExhausted(_) => 4,
            Failure::Diverged(_) => 5,
            Failure::Mechanism(_) => 6,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e}"),
            Failure::Simulation(e) => write!(f, "simulation failed: {e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::BudgetExhausted(n) => write!(f, "not converged after {n} epochs"),
            Failure::Diverged(e) => write!(f, "{e}"),
            Failure::Mechanism(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<mtjnet_core::Error> for Failure {
    fn from(e: mtjnet_core::Error) -> Self {
        Failure::Simulation(e)
    }
}

pub struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(dir.to_path_buf(), e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Write through a temporary sibling and rename into place.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| Failure::Io(path, e))
    }

    fn write_trace(&self, name: &str, trace: &Trace, keep: impl Fn(&str) -> bool) -> Result<(), Failure> {
        let mut buf = Vec::new();
        trace.write_csv_filtered(&mut buf, keep).map_err(|e| Failure::Io(self.dir.join(name), e))?;
        self.write(name, &buf)
    }
}

fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("report types serialize to TOML")
}

#[derive(Serialize)]
struct SpikeSummary {
    onsets: BTreeMap<String, Vec<f64>>,
}

fn spike_summary(net: &Network, trace: &Trace) -> String {
    let onsets = net
        .neurons
        .iter()
        .map(|n| (n.id.clone(), trace.spike_onsets.get(&n.id).cloned().unwrap_or_default()))
        .collect();
    to_toml(&SpikeSummary { onsets })
}

pub fn simulate(cfg: &LoadedConfig, out: &Path) -> Result<(), Failure> {
    let mut net = setup::network(cfg)?;
    if let Some(schedules) = setup::stimulus(cfg)? {
        for id in schedules.keys() {
            if !net.sources.iter().any(|s| &s.id == id) {
                return Err(key_error(&format!("stimulus.schedules.{id}"), "no such source").into());
            }
        }
        net.set_schedules(&schedules);
    }
    let trace = simulate_network(&net, &cfg.doc.sim)?;
    let out = Outputs::create(out)?;
    out.write_trace("trace.csv", &trace, |_| true)?;
    out.write("spikes.txt", spike_summary(&net, &trace).as_bytes())
}

#[derive(Serialize)]
struct WeightsDoc {
    seed: u64,
    weights: BTreeMap<String, f64>,
}

fn weights_doc(net: &Network, seed: u64) -> String {
    let weights = net.synapses.iter().map(|s| (edge_name(&s.pre, &s.post), s.weight)).collect();
    to_toml(&WeightsDoc { seed, weights })
}

struct Trained {
    network: Network,
    history: TrainHistory,
    status: TrainStatus,
    config: TrainConfig,
}

fn run_training(cfg: &LoadedConfig, seed: Option<u64>, out: &Outputs) -> Result<Trained, Failure> {
    let mut net = setup::network(cfg)?;
    let data = setup::dataset(cfg)?;
    let tc = setup::train_config(cfg, seed);
    tc.validate().map_err(|e| key_error("train", e))?;
    initialize_weights(&mut net, &tc).map_err(|e| key_error("train.init", e))?;
    let res = train(&net, &data, &cfg.doc.sim, &tc)?;
    out.write("weights.out", weights_doc(&res.network, tc.seed).as_bytes())?;
    out.write("history.csv", res.history.to_csv().as_bytes())?;
    Ok(Trained { network: res.network, history: res.history, status: res.status, config: tc })
}

fn last_epoch(h: &TrainHistory) -> usize {
    h.epochs.last().map_or(0, |e| e.epoch)
}

fn status_failure(t: &Trained) -> Option<Failure> {
    match t.status {
        TrainStatus::Converged => None,
        TrainStatus::BudgetExhausted => Some(Failure::BudgetExhausted(last_epoch(&t.history))),
        TrainStatus::Diverged { epoch, loss, initial } => {
            Some(Failure::Diverged(mtjnet_core::Error::Diverged { epoch, loss, initial }))
        }
    }
}

pub fn train_cmd(cfg: &LoadedConfig, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let out = Outputs::create(out)?;
    let t = run_training(cfg, seed, &out)?;
    status_failure(&t).map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct ReportDoc {
    passed: bool,
    status: String,
    epochs: usize,
    seed: u64,
    tol_ns: f64,
    checks: ChecksDoc,
    rows: Vec<RowDoc>,
}

#[derive(Serialize)]
struct ChecksDoc {
    threshold_gate: bool,
    latency_shift: bool,
    refraction: bool,
}

#[derive(Serialize)]
struct RowDoc {
    row: usize,
    a: u8,
    b: u8,
    target_ns: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    onset_ns: Option<f64>,
    /// `0`, `1`, or `"failure"`.
    decoded: toml::Value,
    pass: bool,
    output_spikes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    i1_onset_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i2_onset_ns: Option<f64>,
}

fn report_doc(report: &XorReport, t: &Trained) -> String {
    let status = match t.status {
        TrainStatus::Converged => "converged",
        TrainStatus::BudgetExhausted => "budget_exhausted",
        TrainStatus::Diverged { .. } => "diverged",
    };
    let rows = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| RowDoc {
            row: i + 1,
            a: r.row.a,
            b: r.row.b,
            target_ns: r.row.target_time(),
            onset_ns: r.onset,
            decoded: match r.decoded {
                Decoded::Bit(b) => toml::Value::Integer(b.into()),
                Decoded::Failure => toml::Value::String("failure".into()),
            },
            pass: r.pass,
            output_spikes: r.output_spikes,
            i1_onset_ns: r.hidden_onsets[0],
            i2_onset_ns: r.hidden_onsets[1],
        })
        .collect();
    to_toml(&ReportDoc {
        passed: report.passed() && t.status == TrainStatus::Converged,
        status: status.into(),
        epochs: last_epoch(&t.history),
        seed: t.config.seed,
        tol_ns: report.tol,
        checks: ChecksDoc {
            threshold_gate: report.checks.threshold_gate,
            latency_shift: report.checks.latency_shift,
            refraction: report.checks.refraction,
        },
        rows,
    })
}

pub fn bench_xor(cfg: &LoadedConfig, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    if cfg.doc.network.topology != Topology::Xor {
        return Err(key_error("network.topology", "bench-xor needs topology = \"xor\"").into());
    }
    if cfg.doc.dataset.is_some() {
        return Err(key_error("dataset", "bench-xor trains on the XOR truth table; remove [dataset]").into());
    }
    let out = Outputs::create(out)?;
    let t = run_training(cfg, seed, &out)?;
    let tol = t.config.tol;
    let (report, traces) = run_xor_eval(&t.network, &cfg.doc.encoding, &cfg.doc.sim, tol)?;
    out.write("report.toml", report_doc(&report, &t).as_bytes())?;
    for (k, tr) in traces.iter().enumerate() {
        let k = k + 1;
        out.write_trace(&format!("row{k}_drive.csv"), tr, |id| id.ends_with(".drive"))?;
        out.write_trace(&format!("row{k}_voltage.csv"), tr, |id| id.ends_with(".v"))?;
        out.write_trace(&format!("row{k}_state.csv"), tr, |id| id.ends_with(".state"))?;
    }
    if let Some(f) = status_failure(&t) {
        return Err(f);
    }
    let mut problems = Vec::new();
    for (i, r) in report.rows.iter().enumerate().filter(|(_, r)| !r.pass) {
        let onset = r.onset.map_or("no spike".to_string(), |t| format!("onset {t:.4} ns"));
        problems.push(format!("row {} ({},{}) failed: {onset}, target {} ns", i + 1, r.row.a, r.row.b, r.row.target_time()));
    }
    let c = report.checks;
    for (ok, name) in [(c.threshold_gate, "threshold_gate"), (c.latency_shift, "latency_shift"), (c.refraction, "refraction")] {
        if !ok {
            problems.push(format!("mechanism check {name} failed"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Mechanism(problems.join("\n")))
    }
}

/// Parse `start:stop:step` or a comma-separated list of drive levels.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, ConfigError> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| key_error("--grid", format!("bad number {s:?}")));
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(key_error("--grid", "expected start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || !(stop >= start) {
            return Err(key_error("--grid", "need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Round away accumulated representation error so 1.2 prints as 1.2.
        (0..=n).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    Ok(grid)
}

#[derive(Serialize)]
struct CalibrationDoc {
    i_threshold: f64,
    q_switch: f64,
    latency_floor: f64,
    max_rel_residual: f64,
    max_backend_disagreement: f64,
}

pub fn sweep_latency(cfg: &LoadedConfig, out: &Path, grid: Option<&str>) -> Result<(), Failure> {
    let sw = &cfg.doc.sweep;
    let drives = match grid {
        Some(g) => parse_grid(g)?,
        None => sw.drives.clone(),
    };
    if drives.is_empty() {
        return Err(key_error("sweep.drives", "at least one drive level is required").into());
    }
    if let Some(d) = drives.iter().find(|d| !d.is_finite()) {
        return Err(key_error("sweep.drives", format!("non-finite drive {d}")).into());
    }
    if !(sw.dt > 0.0 && sw.dt <= 0.01) || !(sw.horizon.is_finite() && sw.horizon >= 10.0 * sw.dt) {
        return Err(key_error("sweep", "need 0 < dt <= 0.01 ns and horizon >= 10*dt").into());
    }
    let out = Outputs::create(out)?;
    let device = &cfg.doc.neuron.macrospin.device;
    let latencies: Vec<Option<f64>> = match sw.backend {
        BackendKind::Tlr => {
            let mut params = cfg.doc.neuron.tlr;
            if sw.calibrate {
                let cal = calibrate_tlr(device, &sw.calibration_grid, &params, sw.dt, sw.horizon)?;
                let doc = CalibrationDoc {
                    i_threshold: cal.tlr.i_threshold,
                    q_switch: cal.tlr.q_switch,
                    latency_floor: cal.tlr.latency_floor,
                    max_rel_residual: cal.fit.max_rel_residual,
                    max_backend_disagreement: cal.max_backend_disagreement()?,
                };
                out.write("calibration.toml", to_toml(&doc).as_bytes())?;
                params = cal.tlr;
            }
            drives
                .iter()
                .map(|&d| run_drive(&params, |_| d, sw.dt, sw.horizon).map(|o| o.first().copied()))
                .collect::<Result<_, _>>()?
        }
        BackendKind::Macrospin => drives
            .iter()
            .map(|&v| switching_latency(device, v, sw.dt, sw.horizon))
            .collect::<Result<_, _>>()?,
    };
    let mut csv = String::from("drive,latency_ns\n");
    for (d, l) in drives.iter().zip(&latencies) {
        match l {
            Some(l) => csv.push_str(&format!("{d:?},{l:?}\n")),
            None => csv.push_str(&format!("{d:?},\n")),
        }
    }
    out.write("latency.csv", csv.as_bytes())
}

pub fn load(path: &Path) -> Result<LoadedConfig, Failure> {
    config::load(path).map_err(Failure::Config)
}
