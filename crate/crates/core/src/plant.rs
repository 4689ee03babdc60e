//! Small-signal frequency model of a single-area islanded microgrid.
//!
//! Every block is a first-order lag or an integrator advanced with an exact
//! zero-order-hold step, so a held input reproduces the analytic step
//! response at each sample. Feedback paths read the frequency deviation from
//! the previous tick, which keeps the tick free of algebraic loops.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::controllers::{vsg_power_step, VirtualParams};
use crate::error::{check_finite, Error, Result};

/// Plant constants. Units: seconds, Hz and per-unit MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Secondary-control integral gain (1/s).
    pub k_integral: f64,
    pub t_governor: f64,
    pub t_turbine: f64,
    pub t_wind: f64,
    pub t_solar: f64,
    pub t_ess: f64,
    /// Governor droop R (Hz/p.u.MW).
    pub droop: f64,
    /// Frequency bias factor beta (p.u.MW/Hz).
    pub bias: f64,
    /// System inertia constant H (p.u.MW s).
    pub inertia: f64,
    /// Load damping D (p.u.MW/Hz).
    pub damping: f64,
    pub valve_min: f64,
    pub valve_max: f64,
    /// Governor dead band as a fraction of `nominal_hz`.
    pub dead_band: f64,
    pub nominal_hz: f64,
    /// Turbine ramp limit (p.u.MW/s). Zero disables it even with constraints on.
    pub grc: f64,
    /// Secondary-loop transport delay (s).
    pub delay: f64,
    /// ESS inverter power limit (p.u.).
    pub ess_cap: f64,
}

impl PlantParams {
    /// Base microgrid used by Scenarios I and II.
    pub fn nominal() -> Self {
        Self {
            k_integral: 0.2,
            t_governor: 0.1,
            t_turbine: 0.4,
            t_wind: 1.4,
            t_solar: 1.9,
            t_ess: 5.0,
            droop: 2.4,
            bias: 0.99,
            inertia: 0.082,
            damping: 0.016,
            valve_min: -0.5,
            valve_max: 0.5,
            dead_band: 0.0002,
            nominal_hz: 50.0,
            grc: 0.1,
            delay: 0.0,
            ess_cap: 0.29,
        }
    }

    /// Half-width of the governor dead band in Hz.
    pub fn dead_band_hz(&self) -> f64 {
        self.dead_band * self.nominal_hz
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_governor", self.t_governor),
            ("t_turbine", self.t_turbine),
            ("t_wind", self.t_wind),
            ("t_solar", self.t_solar),
            ("t_ess", self.t_ess),
            ("droop", self.droop),
            ("bias", self.bias),
            ("inertia", self.inertia),
            ("ess_cap", self.ess_cap),
            ("nominal_hz", self.nominal_hz),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        let non_negative = [
            ("k_integral", self.k_integral),
            ("damping", self.damping),
            ("dead_band", self.dead_band),
            ("delay", self.delay),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(invalid(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        if !(self.valve_min.is_finite() && self.valve_max.is_finite() && self.valve_min < self.valve_max) {
            return Err(invalid(
                "valve_min",
                format!("need valve_min < valve_max, got [{}, {}]", self.valve_min, self.valve_max),
            ));
        }
        if !(self.grc.is_finite() && self.grc >= 0.0) {
            return Err(invalid("grc", format!("must be finite and >= 0, got {}", self.grc)));
        }
        Ok(())
    }
}

impl Default for PlantParams {
    fn default() -> Self {
        Self::nominal()
    }
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParams { name, reason }
}

/// Which nonlinearities are active for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintFlags {
    /// Governor dead band, valve limits and generation rate constraint.
    pub physical: bool,
    /// Transport delay on the secondary loop.
    pub delay: bool,
}

/// Disturbance inputs held constant over one tick (p.u.).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantInputs {
    pub dp_wind: f64,
    pub dp_solar: f64,
    pub dp_load: f64,
}

/// Fixed-length FIFO that delays a sampled signal by a whole number of ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    buf: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(ticks: usize) -> Self {
        Self {
            buf: std::iter::repeat_n(0.0, ticks).collect(),
        }
    }

    /// Delay quantised to the nearest whole tick.
    pub fn for_delay(delay: f64, dt: f64) -> Self {
        Self::new((delay / dt).round() as usize)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Pushes `x` and returns the sample from `len()` ticks ago.
    pub fn push(&mut self, x: f64) -> f64 {
        if self.buf.is_empty() {
            return x;
        }
        self.buf.push_back(x);
        self.buf.pop_front().unwrap_or(0.0)
    }
}

/// Integral secondary control with optional transport delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Secondary {
    pub integral: f64,
    pub delay: DelayLine,
}

/// Speed governor lag plus the dead-band memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Governor {
    pub output: f64,
    /// Frequency feedback seen through the dead band (Hz).
    pub held_delta_f: f64,
}

/// Complete dynamic state of the plant between ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub governor: Governor,
    pub secondary: Secondary,
    /// Delayed secondary output applied on the last tick.
    pub dp_c: f64,
    pub turbine: f64,
    pub wind: f64,
    pub solar: f64,
    pub ess: f64,
    pub delta_f: f64,
    pub prev_delta_f: f64,
    pub tick: u64,
    pub dt: f64,
}

impl PlantState {
    /// Quiescent plant; the delay line length is fixed here for the whole run.
    pub fn new(params: &PlantParams, flags: ConstraintFlags, dt: f64) -> Self {
        let delay = if flags.delay { params.delay } else { 0.0 };
        Self {
            governor: Governor::default(),
            secondary: Secondary {
                integral: 0.0,
                delay: DelayLine::for_delay(delay, dt),
            },
            dp_c: 0.0,
            turbine: 0.0,
            wind: 0.0,
            solar: 0.0,
            ess: 0.0,
            delta_f: 0.0,
            prev_delta_f: 0.0,
            tick: 0,
            dt,
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    /// Backward-difference RoCoF (Hz/s) between the last two ticks.
    pub fn rocof(&self) -> f64 {
        (self.delta_f - self.prev_delta_f) / self.dt
    }

    /// Renewable output currently reaching the grid (p.u.).
    pub fn dp_res(&self) -> f64 {
        self.wind + self.solar
    }
}

/// One exact zero-order-hold step of `dy/dt = (gain * input - y) / tau`.
pub fn first_order_lag_step(y: f64, input: f64, gain: f64, tau: f64, dt: f64) -> Result<f64> {
    debug_assert!(tau > 0.0 && dt > 0.0);
    let target = gain * input;
    if !target.is_finite() {
        return Err(Error::Divergence { channel: "lag input", t: f64::NAN, value: target });
    }
    check_finite("lag state", f64::NAN, y)?;
    Ok(y + (target - y) * -(-dt / tau).exp_m1())
}

impl Secondary {
    /// Integrates `-K * beta * delta_f` and returns the (delayed) output.
    pub fn step(&mut self, delta_f: f64, params: &PlantParams, dt: f64) -> f64 {
        self.integral -= params.k_integral * params.bias * delta_f * dt;
        self.delay.push(self.integral)
    }
}

impl Governor {
    /// Advances the governor lag on `dp_c - delta_f / R`. With `physical` the
    /// frequency feedback passes through a backlash dead band and the output is
    /// clamped to the valve limits (the stored state is clamped too).
    pub fn step(&mut self, delta_f: f64, dp_c: f64, params: &PlantParams, physical: bool, dt: f64) -> Result<f64> {
        let feedback = if physical {
            let half = params.dead_band_hz();
            if delta_f > self.held_delta_f + half {
                self.held_delta_f = delta_f - half;
            } else if delta_f < self.held_delta_f - half {
                self.held_delta_f = delta_f + half;
            }
            self.held_delta_f
        } else {
            delta_f
        };
        let mut y = first_order_lag_step(self.output, dp_c - feedback / params.droop, 1.0, params.t_governor, dt)?;
        if physical {
            y = y.clamp(params.valve_min, params.valve_max);
        }
        self.output = y;
        Ok(y)
    }
}

/// One step of the swing equation `2H d(df)/dt = P_net - D df`.
pub fn step_swing(delta_f: f64, net_power: f64, inertia: f64, damping: f64, dt: f64) -> f64 {
    if damping > 0.0 {
        let tau = 2.0 * inertia / damping;
        delta_f + (net_power / damping - delta_f) * -(-dt / tau).exp_m1()
    } else {
        delta_f + dt * net_power / (2.0 * inertia)
    }
}

/// Power channels after a tick (p.u.), all measured as deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantChannels {
    pub delta_f: f64,
    pub dp_m: f64,
    pub dp_g: f64,
    pub dp_c: f64,
    pub dp_w: f64,
    pub dp_pv: f64,
    pub dp_vi: f64,
}

impl PlantState {
    pub fn channels(&self) -> PlantChannels {
        PlantChannels {
            delta_f: self.delta_f,
            dp_m: self.turbine,
            dp_g: self.governor.output,
            dp_c: self.dp_c,
            dp_w: self.wind,
            dp_pv: self.solar,
            dp_vi: self.ess,
        }
    }
}

/// Advances the whole plant by one tick.
///
/// Blocks are evaluated secondary, governor, turbine, wind, solar, ESS, swing;
/// every feedback path uses the frequency deviation at the start of the tick.
/// `vsg == None` disables the ESS channel entirely.
pub fn simulate_tick(
    state: &mut PlantState,
    inputs: &PlantInputs,
    vsg: Option<&VirtualParams>,
    params: &PlantParams,
    flags: ConstraintFlags,
    dt: f64,
) -> Result<PlantChannels> {
    let t = state.time();
    let delta_f = state.delta_f;

    let dp_c = check_finite("secondary", t, state.secondary.step(delta_f, params, dt))?;
    state.dp_c = dp_c;

    let dp_g = state.governor.step(delta_f, dp_c, params, flags.physical, dt).map_err(|e| at(e, "governor", t))?;
    check_finite("governor", t, dp_g)?;

    let mut dp_m = first_order_lag_step(state.turbine, dp_g, 1.0, params.t_turbine, dt).map_err(|e| at(e, "turbine", t))?;
    if flags.physical {
        if params.grc > 0.0 {
            let step = params.grc * dt;
            dp_m = dp_m.clamp(state.turbine - step, state.turbine + step);
        }
    }
    state.turbine = check_finite("turbine", t, dp_m)?;

    state.wind = first_order_lag_step(state.wind, inputs.dp_wind, 1.0, params.t_wind, dt).map_err(|e| at(e, "wind", t))?;
    state.solar =
        first_order_lag_step(state.solar, inputs.dp_solar, 1.0, params.t_solar, dt).map_err(|e| at(e, "solar", t))?;

    state.ess = match vsg {
        Some(vp) => vsg_power_step(state.ess, delta_f, state.prev_delta_f, vp, params.t_ess, params.ess_cap, dt)
            .map_err(|e| at(e, "ess", t))?,
        None => 0.0,
    };

    let net = state.turbine + state.wind + state.solar + state.ess - inputs.dp_load;
    let next = step_swing(delta_f, net, params.inertia, params.damping, dt);
    check_finite("delta_f", t, next)?;

    state.prev_delta_f = delta_f;
    state.delta_f = next;
    state.tick += 1;
    Ok(state.channels())
}

fn at(err: Error, channel: &'static str, t: f64) -> Error {
    match err {
        Error::Divergence { value, .. } => Error::Divergence { channel, t, value },
        other => other,
    }
}
