//! Threshold-latency-refraction (TLR) neuron.
//!
//! A phenomenological stand-in for the MTJ free-layer dynamics. The neuron
//! integrates the drive in excess of its threshold; once the integrated
//! excess reaches `q_switch` the neuron is committed to fire and emits a
//! spike `latency_floor` later. Drive is ignored from the commit point until
//! the absolute refractory window measured from spike onset has elapsed.
//!
//! Under a constant drive `I > i_threshold` applied from rest the onset is
//! `latency_floor + q_switch / (I - i_threshold)`, which diverges as the
//! drive approaches threshold from above.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlrParams {
    /// Threshold drive (drive units).
    pub i_threshold: f64,
    /// Integrated excess drive needed to commit to a spike (drive·ns).
    pub q_switch: f64,
    /// Delay between commit and spike onset (ns).
    pub latency_floor: f64,
    /// Peak output voltage (V).
    pub spike_amplitude: f64,
    /// Width of the output pulse (ns).
    pub spike_duration: f64,
    /// Absolute refractory window measured from onset (ns). Zero disables
    /// refraction entirely.
    pub t_refractory: f64,
    /// Relative threshold elevation right after a spike; 0 disables it.
    pub rel_refraction_beta: f64,
    /// Decay constant of the threshold elevation (ns).
    pub rel_refraction_tau: f64,
}

impl Default for TlrParams {
    fn default() -> Self {
        Self {
            i_threshold: 1.0,
            q_switch: 0.1,
            latency_floor: 0.1,
            spike_amplitude: 1.0,
            spike_duration: 3.0,
            t_refractory: 5.0,
            rel_refraction_beta: 0.0,
            rel_refraction_tau: 1.0,
        }
    }
}

impl TlrParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("i_threshold", self.i_threshold),
            ("q_switch", self.q_switch),
            ("latency_floor", self.latency_floor),
            ("spike_amplitude", self.spike_amplitude),
            ("spike_duration", self.spike_duration),
            ("t_refractory", self.t_refractory),
            ("rel_refraction_beta", self.rel_refraction_beta),
            ("rel_refraction_tau", self.rel_refraction_tau),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite")));
        }
        if self.i_threshold <= 0.0 {
            return Err(Error::invalid("i_threshold must be > 0"));
        }
        if self.q_switch <= 0.0 {
            return Err(Error::invalid("q_switch must be > 0"));
        }
        if self.spike_duration <= 0.0 {
            return Err(Error::invalid("spike_duration must be > 0"));
        }
        if self.latency_floor < 0.0 {
            return Err(Error::invalid("latency_floor must be >= 0"));
        }
        // 0 is the refraction-off switch; anything else must cover the spike.
        if self.t_refractory != 0.0 && self.t_refractory < self.spike_duration {
            return Err(Error::invalid(
                "t_refractory must be 0 (disabled) or >= spike_duration",
            ));
        }
        if self.rel_refraction_beta < 0.0 {
            return Err(Error::invalid("rel_refraction_beta must be >= 0"));
        }
        if self.rel_refraction_tau <= 0.0 {
            return Err(Error::invalid("rel_refraction_tau must be > 0"));
        }
        Ok(())
    }

    /// Threshold in force at time `t`, including relative refraction.
    pub fn effective_threshold(&self, t: f64, last_spike_onset: Option<f64>) -> f64 {
        match last_spike_onset {
            Some(onset) if self.rel_refraction_beta > 0.0 => {
                let elapsed = (t - onset).max(0.0);
                self.i_threshold
                    * (1.0 + self.rel_refraction_beta * (-elapsed / self.rel_refraction_tau).exp())
            }
            _ => self.i_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Idle,
    /// Threshold crossed; the spike starts at `onset`.
    Switching { onset: f64 },
    Spiking,
    Refractory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlrState {
    pub accumulation: f64,
    pub phase: Phase,
    pub last_spike_onset: Option<f64>,
}

impl Default for TlrState {
    fn default() -> Self {
        Self { accumulation: 0.0, phase: Phase::Idle, last_spike_onset: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: TlrState,
    /// Output voltage at `t + dt`.
    pub output_voltage: f64,
    /// Onset time if a spike started in `(t, t + dt]`.
    pub spike_onset: Option<f64>,
}

/// Advance one neuron from `t` to `t + dt` under a drive held constant
/// over the step.
pub fn tlr_step(state: TlrState, params: &TlrParams, drive: f64, t: f64, dt: f64) -> Result<StepOutput> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be finite and > 0, got {dt}")));
    }
    if !drive.is_finite() {
        return Err(Error::invalid(format!("drive must be finite, got {drive}")));
    }
    if !t.is_finite() {
        return Err(Error::invalid(format!("t must be finite, got {t}")));
    }
    Ok(step_unchecked(state, params, drive, t, dt))
}

pub(crate) fn step_unchecked(state: TlrState, params: &TlrParams, drive: f64, t: f64, dt: f64) -> StepOutput {
    let t_end = t + dt;
    let mut next = state;

    if next.phase == Phase::Idle {
        let threshold = params.effective_threshold(t, next.last_spike_onset);
        let excess = (drive - threshold).max(0.0);
        let accumulated = next.accumulation + excess * dt;
        if excess > 0.0 && accumulated >= params.q_switch {
            let crossing = t + (params.q_switch - next.accumulation) / excess;
            next.accumulation = 0.0;
            next.phase = Phase::Switching { onset: crossing + params.latency_floor };
        } else {
            next.accumulation = accumulated;
        }
    }

    let mut spike_onset = None;
    if let Phase::Switching { onset } = next.phase {
        if onset <= t_end {
            spike_onset = Some(onset);
            next.last_spike_onset = Some(onset);
            next.phase = post_onset_phase(params, onset, t_end);
        }
    } else if let (Phase::Spiking | Phase::Refractory, Some(onset)) = (next.phase, next.last_spike_onset) {
        next.phase = post_onset_phase(params, onset, t_end);
    }

    let output_voltage = next
        .last_spike_onset
        .map_or(0.0, |onset| pulse(params.spike_amplitude, params.spike_duration, t_end - onset));

    StepOutput { state: next, output_voltage, spike_onset }
}

fn post_onset_phase(params: &TlrParams, onset: f64, t: f64) -> Phase {
    let elapsed = t - onset;
    if elapsed < params.t_refractory {
        if elapsed < params.spike_duration {
            Phase::Spiking
        } else {
            Phase::Refractory
        }
    } else {
        Phase::Idle
    }
}

/// Closed-form first-spike latency for a constant drive applied to a
/// resting neuron. `None` at or below threshold.
pub fn constant_drive_latency(params: &TlrParams, drive: f64) -> Result<Option<f64>> {
    if !drive.is_finite() {
        return Err(Error::invalid(format!("drive must be finite, got {drive}")));
    }
    if drive <= params.i_threshold {
        return Ok(None);
    }
    Ok(Some(params.latency_floor + params.q_switch / (drive - params.i_threshold)))
}

/// Raised-cosine spike voltage `t_since_onset` ns after onset.
pub fn spike_waveform(params: &TlrParams, t_since_onset: f64) -> Result<f64> {
    if !(t_since_onset >= 0.0) {
        return Err(Error::invalid(format!(
            "time since onset must be >= 0, got {t_since_onset}"
        )));
    }
    Ok(pulse(params.spike_amplitude, params.spike_duration, t_since_onset))
}

/// Raised-cosine pulse; zero outside `[0, duration]`.
pub fn pulse(amplitude: f64, duration: f64, t: f64) -> f64 {
    if t <= 0.0 || t >= duration {
        return 0.0;
    }
    0.5 * amplitude * (1.0 - (2.0 * PI * t / duration).cos())
}

/// Run a resting neuron through a drive sampled on the grid `k * dt`
/// (`drives[k]` drives the step starting at `k * dt`). Returns all onsets.
pub fn replay_drive(params: &TlrParams, drives: &[f64], dt: f64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut state = TlrState::default();
    let mut onsets = Vec::new();
    for (k, &drive) in drives.iter().enumerate() {
        let out = tlr_step(state, params, drive, k as f64 * dt, dt)?;
        state = out.state;
        onsets.extend(out.spike_onset);
    }
    Ok(onsets)
}

/// Run a resting neuron under `drive(t)` up to `horizon`. Returns all onsets.
pub fn run_drive(params: &TlrParams, drive: impl Fn(f64) -> f64, dt: f64, horizon: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid("dt and horizon must be > 0"));
    }
    let steps = (horizon / dt).round() as usize;
    let drives: Vec<f64> = (0..steps).map(|k| drive(k as f64 * dt)).collect();
    replay_drive(params, &drives, dt)
}
