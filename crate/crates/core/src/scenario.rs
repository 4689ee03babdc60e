//! Disturbance scenarios: step events, seeded piecewise-constant renewable
//! and load profiles, and parameter uncertainty sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ConstraintFlags, PlantInputs, PlantParams};

/// Share of a combined renewable step assigned to wind; the rest goes to solar.
pub const WIND_SHARE: f64 = 0.6;

/// Largest magnitude accepted on any disturbance channel (p.u.).
pub const CHANNEL_BOUND: f64 = 1.0;

/// Event time tolerance so `k * dt` lands on events placed at whole seconds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Wind,
    Solar,
    Load,
    /// Combined wind + solar step, split by [`WIND_SHARE`].
    Res,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub time: f64,
    pub channel: Channel,
    pub delta: f64,
}

impl StepEvent {
    pub fn new(time: f64, channel: Channel, delta: f64) -> Self {
        Self { time, channel, delta }
    }
}

/// Piecewise-constant random profile, redrawn uniformly in `[min, max]` every
/// `hold` seconds while `start <= t < end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticProfile {
    pub channel: Channel,
    pub min: f64,
    pub max: f64,
    pub hold: f64,
    pub seed: u64,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub end: Option<f64>,
}

/// Parameter overrides applied on top of a base plant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySet {
    pub t_governor: Option<f64>,
    pub t_turbine: Option<f64>,
    pub inertia: Option<f64>,
    pub damping: Option<f64>,
    pub delay: Option<f64>,
    pub valve_min: Option<f64>,
    pub valve_max: Option<f64>,
    pub dead_band: Option<f64>,
}

impl UncertaintySet {
    /// Perturbed plant used for the constrained scenario.
    pub fn table_v() -> Self {
        Self {
            t_governor: Some(0.15),
            t_turbine: Some(0.5),
            inertia: Some(0.05),
            damping: Some(0.02),
            delay: Some(1.5),
            valve_min: Some(-0.5),
            valve_max: Some(0.5),
            dead_band: Some(0.0002),
        }
    }
}

pub fn apply_uncertainty(base: &PlantParams, u: &UncertaintySet) -> Result<PlantParams> {
    let mut p = *base;
    let set = |field: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut p.t_governor, u.t_governor);
    set(&mut p.t_turbine, u.t_turbine);
    set(&mut p.inertia, u.inertia);
    set(&mut p.damping, u.damping);
    set(&mut p.delay, u.delay);
    set(&mut p.valve_min, u.valve_min);
    set(&mut p.valve_max, u.valve_max);
    set(&mut p.dead_band, u.dead_band);
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<StepEvent>,
    #[serde(default)]
    pub stochastic: Vec<StochasticProfile>,
    #[serde(default)]
    pub flags: ConstraintFlags,
    #[serde(default)]
    pub uncertainty: Option<UncertaintySet>,
}

/// Builtin scenario ids with a one-line description each.
pub const BUILTIN: [(&str, &str); 4] = [
    ("I", "renewable and load steps: +0.1 res at 5 s, +0.1 load at 20 s, -0.1 load at 40 s, -0.1 res at 60 s"),
    ("II-case1", "low renewable penetration, high load: wind 0.1-0.12, solar 0.08-0.09, load 0.1-0.3"),
    ("II-case2", "high renewable penetration, low load: wind 0.2-0.3 and solar 0.1-0.2 from 10 s, solar off at 50 s"),
    ("III", "scenario I profile with perturbed plant, dead band, valve limits, GRC and 1.5 s secondary delay"),
];

pub fn builtin_scenario(id: &str, seed: u64) -> Result<ScenarioSpec> {
    let base = |id: &str, duration: f64| ScenarioSpec {
        id: id.to_string(),
        duration,
        dt: 0.01,
        events: Vec::new(),
        stochastic: Vec::new(),
        flags: ConstraintFlags::default(),
        uncertainty: None,
    };
    let profile = |channel, min, max, offset: u64, start, end| StochasticProfile {
        channel,
        min,
        max,
        hold: 2.0,
        seed: seed.wrapping_add(offset),
        start,
        end,
    };
    let scenario_i_events = vec![
        StepEvent::new(5.0, Channel::Res, 0.1),
        StepEvent::new(20.0, Channel::Load, 0.1),
        StepEvent::new(40.0, Channel::Load, -0.1),
        StepEvent::new(60.0, Channel::Res, -0.1),
    ];
    let spec = match id {
        "I" => ScenarioSpec { events: scenario_i_events, ..base("I", 80.0) },
        "II-case1" => ScenarioSpec {
            stochastic: vec![
                profile(Channel::Wind, 0.1, 0.12, 0, 0.0, None),
                profile(Channel::Solar, 0.08, 0.09, 1, 0.0, None),
                profile(Channel::Load, 0.1, 0.3, 2, 0.0, None),
            ],
            ..base("II-case1", 100.0)
        },
        "II-case2" => ScenarioSpec {
            stochastic: vec![
                profile(Channel::Wind, 0.2, 0.3, 0, 10.0, None),
                profile(Channel::Solar, 0.1, 0.2, 1, 10.0, Some(50.0)),
                profile(Channel::Load, 0.05, 0.1, 2, 0.0, None),
            ],
            ..base("II-case2", 100.0)
        },
        "III" => ScenarioSpec {
            events: scenario_i_events,
            flags: ConstraintFlags { physical: true, delay: true },
            uncertainty: Some(UncertaintySet::table_v()),
            ..base("III", 80.0)
        },
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("{}: {msg}", self.id)));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.duration) {
            return bad(format!("dt must be in (0, duration], got {}", self.dt));
        }
        for pair in self.events.windows(2) {
            if pair[1].time < pair[0].time {
                return bad("events must be sorted by time".into());
            }
        }
        for ev in &self.events {
            if !(ev.time >= 0.0 && ev.time <= self.duration && ev.delta.is_finite()) {
                return bad(format!("event {ev:?} outside [0, {}] or non-finite", self.duration));
            }
        }
        for p in &self.stochastic {
            if p.channel == Channel::Res {
                return bad("stochastic profiles need a concrete channel (wind, solar or load)".into());
            }
            if !(p.min.is_finite() && p.max.is_finite() && p.min <= p.max) {
                return bad(format!("profile range [{}, {}] is invalid", p.min, p.max));
            }
            if p.min < -CHANNEL_BOUND || p.max > CHANNEL_BOUND {
                return bad(format!("profile range [{}, {}] exceeds +-{CHANNEL_BOUND} p.u.", p.min, p.max));
            }
            if !(p.hold.is_finite() && p.hold > 0.0) {
                return bad(format!("profile hold must be > 0, got {}", p.hold));
            }
            if !(p.start.is_finite() && p.start >= 0.0) || p.end.is_some_and(|e| !(e > p.start)) {
                return bad(format!("profile window [{}, {:?}) is invalid", p.start, p.end));
            }
        }
        Ok(())
    }

    /// Number of ticks; the trace has one more row than this.
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Base plant with this scenario's uncertainty applied.
    pub fn plant_params(&self, base: &PlantParams) -> Result<PlantParams> {
        match &self.uncertainty {
            Some(u) => apply_uncertainty(base, u),
            None => {
                base.validate()?;
                Ok(*base)
            }
        }
    }

    /// Start times of the step events, deduplicated, in order.
    pub fn event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.events.iter().map(|e| e.time).collect();
        times.dedup();
        times
    }
}

#[derive(Debug, Clone)]
struct DrawnProfile {
    channel: Channel,
    hold: f64,
    start: f64,
    end: f64,
    values: Vec<f64>,
}

impl DrawnProfile {
    fn value_at(&self, t: f64) -> f64 {
        if t + TIME_EPS < self.start || t + TIME_EPS >= self.end {
            return 0.0;
        }
        let idx = (((t - self.start) / self.hold) + TIME_EPS).floor().max(0.0) as usize;
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// Deterministic disturbance source for one scenario. All random draws happen
/// up front, so lookups are pure functions of time.
#[derive(Debug, Clone)]
pub struct InputGenerator {
    events: Vec<StepEvent>,
    profiles: Vec<DrawnProfile>,
}

impl InputGenerator {
    pub fn new(spec: &ScenarioSpec) -> Self {
        let profiles = spec
            .stochastic
            .iter()
            .map(|p| {
                let end = p.end.unwrap_or(spec.duration).min(spec.duration + p.hold);
                let count = ((end - p.start) / p.hold).ceil().max(0.0) as usize + 1;
                let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
                let values = (0..count)
                    .map(|_| if p.min == p.max { p.min } else { rng.gen_range(p.min..=p.max) })
                    .collect();
                DrawnProfile {
                    channel: p.channel,
                    hold: p.hold,
                    start: p.start,
                    end: p.end.unwrap_or(f64::INFINITY),
                    values,
                }
            })
            .collect();
        Self { events: spec.events.clone(), profiles }
    }

    pub fn inputs_at(&self, t: f64) -> PlantInputs {
        let mut inputs = PlantInputs::default();
        for ev in self.events.iter().filter(|e| t + TIME_EPS >= e.time) {
            add(&mut inputs, ev.channel, ev.delta);
        }
        for p in &self.profiles {
            add(&mut inputs, p.channel, p.value_at(t));
        }
        inputs
    }
}

fn add(inputs: &mut PlantInputs, channel: Channel, value: f64) {
    match channel {
        Channel::Wind => inputs.dp_wind += value,
        Channel::Solar => inputs.dp_solar += value,
        Channel::Load => inputs.dp_load += value,
        Channel::Res => {
            inputs.dp_wind += WIND_SHARE * value;
            inputs.dp_solar += (1.0 - WIND_SHARE) * value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scenario_i_timeline() {
        let spec = builtin_scenario("I", 1).unwrap();
        assert_eq!(
            spec.events,
            vec![
                StepEvent::new(5.0, Channel::Res, 0.1),
                StepEvent::new(20.0, Channel::Load, 0.1),
                StepEvent::new(40.0, Channel::Load, -0.1),
                StepEvent::new(60.0, Channel::Res, -0.1),
            ]
        );
        let gen = InputGenerator::new(&spec);
        assert_eq!(gen.inputs_at(1.0), PlantInputs::default());
        let at30 = gen.inputs_at(30.0);
        assert!((at30.dp_load - 0.1).abs() < 1e-15);
        assert!((at30.dp_wind + at30.dp_solar - 0.1).abs() < 1e-15);
        assert!((at30.dp_wind - 0.06).abs() < 1e-15);
        // k * dt rounding must not delay an event by a tick.
        assert!(gen.inputs_at(500.0 * 0.01).dp_wind > 0.0);
        let end = gen.inputs_at(70.0);
        assert!(end.dp_wind.abs() < 1e-15 && end.dp_load.abs() < 1e-15);
    }

    #[test]
    fn scenario_iii_applies_table_v() {
        let spec = builtin_scenario("III", 0).unwrap();
        let p = spec.plant_params(&PlantParams::nominal()).unwrap();
        assert_eq!((p.inertia, p.damping, p.t_governor, p.t_turbine, p.delay), (0.05, 0.02, 0.15, 0.5, 1.5));
        assert!(spec.flags.physical && spec.flags.delay);
    }

    #[test]
    fn case2_solar_disconnects() {
        let spec = builtin_scenario("II-case2", 7).unwrap();
        let gen = InputGenerator::new(&spec);
        assert_eq!(gen.inputs_at(5.0).dp_solar, 0.0);
        assert!(gen.inputs_at(10.0).dp_solar >= 0.1);
        for k in 5000..=10_000 {
            assert_eq!(gen.inputs_at(k as f64 * 0.01).dp_solar, 0.0);
        }
        assert!(gen.inputs_at(60.0).dp_wind >= 0.2);
    }

    #[test]
    fn uncertainty_overrides() {
        let base = PlantParams::nominal();
        let p = apply_uncertainty(&base, &UncertaintySet::table_v()).unwrap();
        assert_eq!(p.inertia, 0.05);
        assert_eq!(p.damping, 0.02);
        assert_eq!(apply_uncertainty(&base, &UncertaintySet::default()).unwrap(), base);
        let bad = UncertaintySet { inertia: Some(-0.1), ..Default::default() };
        assert!(apply_uncertainty(&base, &bad).is_err());
    }

    #[test]
    fn unknown_id() {
        assert!(matches!(builtin_scenario("IV", 0), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn validate_catches_bad_specs() {
        let mut spec = builtin_scenario("I", 0).unwrap();
        spec.events.swap(0, 1);
        assert!(spec.validate().is_err());
        let mut spec = builtin_scenario("I", 0).unwrap();
        spec.events.push(StepEvent::new(90.0, Channel::Load, 0.1));
        assert!(spec.validate().is_err());
        let mut spec = builtin_scenario("II-case1", 0).unwrap();
        spec.stochastic[0].max = 2.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = InputGenerator::new(&builtin_scenario("II-case1", 42).unwrap());
        let b = InputGenerator::new(&builtin_scenario("II-case1", 42).unwrap());
        let c = InputGenerator::new(&builtin_scenario("II-case1", 43).unwrap());
        let mut differs = false;
        for k in 0..=10_000 {
            let t = k as f64 * 0.01;
            assert_eq!(a.inputs_at(t), b.inputs_at(t));
            differs |= a.inputs_at(t) != c.inputs_at(t);
        }
        assert!(differs);
    }

    proptest! {
        #[test]
        fn profiles_stay_in_range(seed in any::<u64>(), k in 0usize..=10_000) {
            let spec = builtin_scenario("II-case1", seed).unwrap();
            let x = InputGenerator::new(&spec).inputs_at(k as f64 * 0.01);
            prop_assert!((0.1..=0.12).contains(&x.dp_wind));
            prop_assert!((0.08..=0.09).contains(&x.dp_solar));
            prop_assert!((0.1..=0.3).contains(&x.dp_load));
        }

        #[test]
        fn events_superpose(
            raw in proptest::collection::vec((0.0f64..80.0, 0usize..4, -0.2f64..0.2), 0..8),
            t in 0.0f64..80.0,
        ) {
            let channels = [Channel::Wind, Channel::Solar, Channel::Load, Channel::Res];
            let mut events: Vec<StepEvent> =
                raw.iter().map(|&(time, c, d)| StepEvent::new(time, channels[c], d)).collect();
            events.sort_by(|a, b| a.time.total_cmp(&b.time));
            let mut spec = builtin_scenario("I", 0).unwrap();
            spec.events = events.clone();
            let total = InputGenerator::new(&spec).inputs_at(t);
            let mut sum = PlantInputs::default();
            for ev in events {
                spec.events = vec![ev];
                let one = InputGenerator::new(&spec).inputs_at(t);
                sum.dp_wind += one.dp_wind;
                sum.dp_solar += one.dp_solar;
                sum.dp_load += one.dp_load;
            }
            prop_assert!((total.dp_wind - sum.dp_wind).abs() < 1e-12);
            prop_assert!((total.dp_solar - sum.dp_solar).abs() < 1e-12);
            prop_assert!((total.dp_load - sum.dp_load).abs() < 1e-12);
        }
    }
}
