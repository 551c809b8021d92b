//! Macrospin MTJ neuron: free-layer LLGS dynamics in series with an NMOS
//! transistor.
//!
//! Units: time in ns, fields in T, currents in mA, resistances in kΩ,
//! voltages in V (so mA·kΩ = V).

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tlr::{constant_drive_latency, TlrParams};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const X: Vec3 = Vec3([1.0, 0.0, 0.0]);
    pub const Y: Vec3 = Vec3([0.0, 1.0, 0.0]);
    pub const Z: Vec3 = Vec3([0.0, 0.0, 1.0]);

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Device constants. Defaults are the versioned reference device set
/// (see [`DEFAULT_DEVICE_VERSION`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacrospinParams {
    /// Gyromagnetic ratio, rad/(ns·T).
    pub gamma: f64,
    /// Gilbert damping.
    pub alpha: f64,
    /// In-plane easy-axis anisotropy field along the polarizer axis, T.
    pub h_easy: f64,
    /// Out-of-plane demagnetizing field, T.
    pub h_demag: f64,
    /// Slonczewski torque per unit device current, rad/(ns·mA). Negative
    /// values make positive current pull the free layer toward the polarizer.
    pub stt_coefficient: f64,
    /// Fixed-layer direction (unit vector, in plane).
    pub polarizer: Vec3,
    pub r_parallel: f64,
    pub r_antiparallel: f64,
    pub v_dd: f64,
    /// Square-law transconductance, mA/V².
    pub transistor_k: f64,
    pub transistor_vt: f64,
}

/// Bumped whenever the default device constants change.
pub const DEFAULT_DEVICE_VERSION: u32 = 1;

/// Initial tilt away from the antiparallel state, degrees.
pub const INITIAL_TILT_DEG: f64 = 1.0;

impl Default for MacrospinParams {
    fn default() -> Self {
        Self {
            gamma: 176.0,
            alpha: 0.02,
            h_easy: 0.02,
            h_demag: 0.5,
            stt_coefficient: -5.0,
            polarizer: Vec3::X,
            r_parallel: 1.0,
            r_antiparallel: 2.0,
            v_dd: 3.0,
            transistor_k: 2.0,
            transistor_vt: 0.4,
        }
    }
}

impl MacrospinParams {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.gamma,
            self.alpha,
            self.h_easy,
            self.h_demag,
            self.stt_coefficient,
            self.r_parallel,
            self.r_antiparallel,
            self.v_dd,
            self.transistor_k,
            self.transistor_vt,
        ];
        if scalars.iter().any(|v| !v.is_finite()) || !self.polarizer.is_finite() {
            return Err(Error::invalid("macrospin parameters must be finite"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if !(self.r_antiparallel > self.r_parallel && self.r_parallel > 0.0) {
            return Err(Error::invalid("need r_antiparallel > r_parallel > 0"));
        }
        if (self.polarizer.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("polarizer must be a unit vector"));
        }
        if self.v_dd <= 0.0 {
            return Err(Error::invalid("v_dd must be > 0"));
        }
        if self.transistor_k <= 0.0 {
            return Err(Error::invalid("transistor_k must be > 0"));
        }
        Ok(())
    }

    /// Antiparallel state tilted by [`INITIAL_TILT_DEG`] toward the in-plane
    /// direction perpendicular to the polarizer.
    pub fn initial_magnetization(&self) -> Vec3 {
        let e = self.polarizer;
        let side = Vec3::Z.cross(e).normalized();
        let theta = INITIAL_TILT_DEG.to_radians();
        (-e * theta.cos() + side * theta.sin()).normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacrospinState {
    pub m: Vec3,
    pub t: f64,
}

impl MacrospinState {
    pub fn initial(params: &MacrospinParams) -> Self {
        Self { m: params.initial_magnetization(), t: 0.0 }
    }
}

fn check_unit(m: Vec3) -> Result<()> {
    if !m.is_finite() || (m.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidState(format!("magnetization {:?} is not a unit vector", m.0)));
    }
    Ok(())
}

/// Landau-Lifshitz-Gilbert-Slonczewski right-hand side, 1/ns.
pub fn llgs_derivative(m: Vec3, params: &MacrospinParams, i_device: f64) -> Result<Vec3> {
    check_unit(m)?;
    Ok(llgs_rhs(m, params, i_device))
}

fn llgs_rhs(m: Vec3, p: &MacrospinParams, i_device: f64) -> Vec3 {
    let e = p.polarizer;
    let h_eff = e * (p.h_easy * m.dot(e)) - Vec3::Z * (p.h_demag * m.0[2]);
    let gamma_r = p.gamma / (1.0 + p.alpha * p.alpha);
    let m_x_h = m.cross(h_eff);
    let precession = -(m_x_h * gamma_r);
    let damping = -(m.cross(m_x_h) * (gamma_r * p.alpha));
    let torque = m.cross(m.cross(p.polarizer)) * (p.stt_coefficient * i_device);
    precession + damping + torque
}

/// Cosine-law tunnel magnetoresistance, kΩ.
pub fn mtj_resistance(m: Vec3, params: &MacrospinParams) -> Result<f64> {
    check_unit(m)?;
    Ok(resistance(m, params))
}

fn resistance(m: Vec3, p: &MacrospinParams) -> f64 {
    p.r_parallel + (p.r_antiparallel - p.r_parallel) * (1.0 - m.dot(p.polarizer)) / 2.0
}

/// Square-law NMOS drain current, mA.
pub fn nmos_current(v_gate: f64, v_drain: f64, params: &MacrospinParams) -> f64 {
    let v_ov = v_gate - params.transistor_vt;
    if v_ov <= 0.0 || v_drain <= 0.0 {
        return 0.0;
    }
    if v_drain < v_ov {
        params.transistor_k * (v_ov * v_drain - 0.5 * v_drain * v_drain)
    } else {
        0.5 * params.transistor_k * v_ov * v_ov
    }
}

const CIRCUIT_TOL_V: f64 = 1e-9;

/// Solve the VDD–MTJ–node–NMOS–ground series loop for the node voltage.
/// Returns `(v_node, i_device)`.
pub fn solve_circuit(v_gate: f64, r_mtj: f64, params: &MacrospinParams) -> Result<(f64, f64)> {
    if !v_gate.is_finite() {
        return Err(Error::invalid(format!("gate voltage must be finite, got {v_gate}")));
    }
    // f(v) = v - v_dd + R * I(v) is non-decreasing with f(0) < 0 <= f(v_dd).
    let f = |v: f64| v - params.v_dd + r_mtj * nmos_current(v_gate, v, params);
    let (mut lo, mut hi) = (0.0, params.v_dd);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::NumericalFailure(format!(
            "no circuit solution in [0, {}] V for v_gate = {v_gate}",
            params.v_dd
        )));
    }
    while hi - lo > CIRCUIT_TOL_V {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    Ok((v, nmos_current(v_gate, v, params)))
}

fn device_current(m: Vec3, v_gate: f64, p: &MacrospinParams) -> Result<f64> {
    Ok(solve_circuit(v_gate, resistance(m, p), p)?.1)
}

/// One RK4 step with the circuit re-solved at every stage. Returns the
/// renormalized magnetization and `| |m| - 1 |` before renormalization.
pub fn rk4_step(
    m: Vec3,
    params: &MacrospinParams,
    v_gate: impl Fn(f64) -> f64,
    t: f64,
    dt: f64,
) -> Result<(Vec3, f64)> {
    let rhs = |m: Vec3, t: f64| -> Result<Vec3> {
        let i = device_current(m, v_gate(t), params)?;
        Ok(llgs_rhs(m, params, i))
    };
    let k1 = rhs(m, t)?;
    let k2 = rhs(m + k1 * (0.5 * dt), t + 0.5 * dt)?;
    let k3 = rhs(m + k2 * (0.5 * dt), t + 0.5 * dt)?;
    let k4 = rhs(m + k3 * dt, t + dt)?;
    let next = m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !next.is_finite() {
        return Err(Error::NumericalFailure("magnetization became non-finite".into()));
    }
    let drift = (next.norm() - 1.0).abs();
    Ok((next.normalized(), drift))
}

/// Sampled output of [`integrate_macrospin`].
#[derive(Debug, Clone, PartialEq)]
pub struct MacrospinTrace {
    pub time: Vec<f64>,
    pub v_gate: Vec<f64>,
    pub v_node: Vec<f64>,
    pub current: Vec<f64>,
    pub m: Vec<Vec3>,
    /// Upward zero crossings of `m · polarizer` (AP → P switching events).
    pub switching_onsets: Vec<f64>,
    /// Largest per-step `| |m| - 1 |` seen before renormalization.
    pub max_norm_drift: f64,
}

/// Fixed-step RK4 integration of the macrospin neuron under a gate waveform.
pub fn integrate_macrospin(
    state: MacrospinState,
    params: &MacrospinParams,
    v_gate: impl Fn(f64) -> f64,
    dt: f64,
    horizon: f64,
) -> Result<MacrospinTrace> {
    params.validate()?;
    check_unit(state.m)?;
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::invalid(format!("dt must be in (0, 0.01] ns, got {dt}")));
    }
    if !(horizon >= dt) {
        return Err(Error::invalid(format!("horizon must be >= dt, got {horizon}")));
    }
    let steps = (horizon / dt).round() as usize;
    let e = params.polarizer;
    let mut trace = MacrospinTrace {
        time: Vec::with_capacity(steps + 1),
        v_gate: Vec::with_capacity(steps + 1),
        v_node: Vec::with_capacity(steps + 1),
        current: Vec::with_capacity(steps + 1),
        m: Vec::with_capacity(steps + 1),
        switching_onsets: Vec::new(),
        max_norm_drift: 0.0,
    };

    let mut m = state.m;
    for k in 0..=steps {
        let t = state.t + k as f64 * dt;
        let vg = v_gate(t);
        let (v_node, i) = solve_circuit(vg, resistance(m, params), params)?;
        trace.time.push(t);
        trace.v_gate.push(vg);
        trace.v_node.push(v_node);
        trace.current.push(i);
        trace.m.push(m);
        if k == steps {
            break;
        }
        let (next, drift) = rk4_step(m, params, &v_gate, t, dt)?;
        trace.max_norm_drift = trace.max_norm_drift.max(drift);
        let (before, after) = (m.dot(e), next.dot(e));
        if before < 0.0 && after >= 0.0 {
            trace.switching_onsets.push(t + dt * before / (before - after));
        }
        m = next;
    }
    Ok(trace)
}

/// First AP→P switching time from the tilted antiparallel state under a
/// constant gate voltage, or `None` if it does not switch within `horizon`.
pub fn switching_latency(params: &MacrospinParams, v_gate: f64, dt: f64, horizon: f64) -> Result<Option<f64>> {
    params.validate()?;
    let e = params.polarizer;
    let mut m = params.initial_magnetization();
    let steps = (horizon / dt).round() as usize;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (next, _) = rk4_step(m, params, |_| v_gate, t, dt)?;
        let (before, after) = (m.dot(e), next.dot(e));
        if before < 0.0 && after >= 0.0 {
            return Ok(Some(t + dt * before / (before - after)));
        }
        m = next;
    }
    Ok(None)
}

/// Bisect for the smallest constant gate voltage that switches the tilted
/// antiparallel state within `horizon`. `lo` must not switch, `hi` must.
pub fn switching_threshold(params: &MacrospinParams, mut lo: f64, mut hi: f64, dt: f64, horizon: f64, tol: f64) -> Result<f64> {
    if switching_latency(params, lo, dt, horizon)?.is_some() {
        return Err(Error::invalid(format!("lower bracket {lo} V already switches")));
    }
    if switching_latency(params, hi, dt, horizon)?.is_none() {
        return Err(Error::invalid(format!("upper bracket {hi} V does not switch")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if switching_latency(params, mid, dt, horizon)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Least-squares fit of `T(I) = floor + q / (I - threshold)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyFit {
    pub threshold: f64,
    pub q: f64,
    pub floor: f64,
    /// max |T_fit - T| / T over the fitted points.
    pub max_rel_residual: f64,
}

impl LatencyFit {
    pub fn predict(&self, drive: f64) -> Option<f64> {
        (drive > self.threshold).then(|| self.floor + self.q / (drive - self.threshold))
    }
}

/// Fit the hyperbolic latency law to `(drive, latency)` points, minimizing
/// relative residuals. Needs at least four points; `floor` is kept >= 0.
pub fn fit_latency_law(points: &[(f64, f64)]) -> Result<LatencyFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 switching points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(i, t)| !i.is_finite() || !(t > 0.0) || !t.is_finite()) {
        return Err(Error::invalid("latency points must be finite with positive latency"));
    }
    let min_i = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_i = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let scale = (max_i - min_i).max(min_i.abs()).max(1e-12);

    // Search over the gap u = min_i - threshold on a log scale.
    let cost = |log_u: f64| linear_part(points, min_i - log_u.exp()).0;
    let (lo, hi) = ((scale * 1e-9).ln(), (scale * 1e3).ln());
    let n = 600;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let best = (0..=n)
        .min_by(|&a, &b| cost(grid[a]).total_cmp(&cost(grid[b])))
        .unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if cost(c) < cost(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
        if (b - a).abs() < 1e-15 {
            break;
        }
    }
    let threshold = min_i - (0.5 * (a + b)).exp();
    let (_, floor, q) = linear_part(points, threshold);
    let fit = LatencyFit { threshold, q, floor, max_rel_residual: 0.0 };
    let max_rel_residual = points
        .iter()
        .map(|&(i, t)| (fit.predict(i).unwrap_or(f64::INFINITY) - t).abs() / t)
        .fold(0.0, f64::max);
    Ok(LatencyFit { max_rel_residual, ..fit })
}

/// Weighted linear least squares for (floor, q) at fixed threshold.
/// Returns (cost, floor, q).
fn linear_part(points: &[(f64, f64)], threshold: f64) -> (f64, f64, f64) {
    // Residual r = (floor + q x - T) / T with x = 1/(I - threshold).
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, t) in points {
        let x = 1.0 / (i - threshold);
        let w = 1.0 / (t * t);
        s11 += w;
        s12 += w * x;
        s22 += w * x * x;
        b1 += w * t;
        b2 += w * x * t;
    }
    let det = s11 * s22 - s12 * s12;
    let (mut floor, mut q) = ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det);
    if !(floor >= 0.0) || !det.is_finite() || det.abs() < 1e-300 {
        floor = 0.0;
        q = b2 / s22;
    }
    let cost = points
        .iter()
        .map(|&(i, t)| {
            let r = (floor + q / (i - threshold) - t) / t;
            r * r
        })
        .sum();
    (cost, floor, q)
}

/// Result of bridging the macrospin backend to TLR parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub tlr: TlrParams,
    pub fit: LatencyFit,
    /// Measured `(gate voltage, switching latency)` pairs that switched.
    pub measured: Vec<(f64, f64)>,
}

impl Calibration {
    /// Max relative disagreement between TLR closed-form latency and the
    /// measured macrospin latency over the switching grid points.
    pub fn max_backend_disagreement(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &(v, t) in &self.measured {
            let tlr = constant_drive_latency(&self.tlr, v)?.unwrap_or(f64::INFINITY);
            worst = worst.max((tlr - t).abs() / t);
        }
        Ok(worst)
    }
}

/// Measure macrospin switching latency on `drive_grid` (gate volts) and fit
/// TLR threshold, charge and floor. Other TLR fields come from `template`.
pub fn calibrate_tlr(
    params: &MacrospinParams,
    drive_grid: &[f64],
    template: &TlrParams,
    dt: f64,
    horizon: f64,
) -> Result<Calibration> {
    let latencies = drive_grid
        .iter()
        .map(|&v| switching_latency(params, v, dt, horizon))
        .collect::<Result<Vec<_>>>()?;
    let measured: Vec<(f64, f64)> = drive_grid
        .iter()
        .zip(latencies)
        .filter_map(|(&v, t)| t.map(|t| (v, t)))
        .collect();
    let fit = fit_latency_law(&measured)?;
    if !(fit.threshold > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "fitted threshold {} V is not positive",
            fit.threshold
        )));
    }
    let tlr = TlrParams {
        i_threshold: fit.threshold,
        q_switch: fit.q,
        latency_floor: fit.floor,
        ..*template
    };
    tlr.validate()?;
    Ok(Calibration { tlr, fit, measured })
}
