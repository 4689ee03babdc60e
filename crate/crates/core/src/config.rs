//! Run configuration, resolution and reproducibility sidecars.
//!
//! A config is TOML. Every field has a default, so an empty file runs
//! Scenario I with the fixed controller on the base plant. The metadata
//! sidecar written next to each trace is itself a valid config that
//! reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::controllers::{build_local, ControllerKind, ControllerSettings, VsgController};
use crate::error::{Error, Result};
use crate::fnn::{FnnHyper, FnnState};
use crate::fuzzy::FuzzyConfig;
use crate::hil::{LossInjector, RemoteController};
use crate::metrics::{EventWindow, SimTrace, DEFAULT_BAND, DEFAULT_ROCOF_WINDOW};
use crate::plant::{ConstraintFlags, PlantParams};
use crate::scenario::{builtin_scenario, ScenarioSpec};
use crate::sim::{self, RunOptions, RunOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HilConfig {
    /// `host:port` of a controller server; required for the remote controller.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    /// Probability of dropping each outgoing tick frame.
    pub loss: f64,
    pub loss_seed: u64,
}

impl Default for HilConfig {
    fn default() -> Self {
        Self { endpoint: None, timeout_ms: 200, loss: 0.0, loss_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin scenario id.
    pub scenario: String,
    /// Custom scenario file (TOML); takes precedence over `scenario`.
    pub scenario_file: Option<PathBuf>,
    /// Inline scenario; takes precedence over both of the above.
    pub scenario_spec: Option<ScenarioSpec>,
    pub controller: ControllerKind,
    /// Methods for `compare`.
    pub methods: Vec<ControllerKind>,
    pub seed: u64,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    /// Replaces the scenario's constraint flags when set.
    pub constraints: Option<ConstraintFlags>,
    pub out_dir: PathBuf,
    pub realtime: bool,
    /// Event analysed by `compare`; defaults to 40 s when the scenario has an
    /// event there, else its first event.
    pub event_time: Option<f64>,
    pub band: f64,
    pub rocof_window: f64,
    /// Base plant before scenario uncertainty.
    pub plant: PlantParams,
    pub fnn: FnnHyper,
    /// Trained network (text format) to start the FNNC from.
    pub fnn_init: Option<PathBuf>,
    pub fuzzy: FuzzyConfig,
    pub hil: HilConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "I".into(),
            scenario_file: None,
            scenario_spec: None,
            controller: ControllerKind::Fixed,
            methods: vec![
                ControllerKind::None,
                ControllerKind::Fixed,
                ControllerKind::FuzzyInertia,
                ControllerKind::Fuzzy,
                ControllerKind::Fnnc,
            ],
            seed: 0,
            dt: None,
            duration: None,
            constraints: None,
            out_dir: PathBuf::from("out"),
            realtime: false,
            event_time: None,
            band: DEFAULT_BAND,
            rocof_window: DEFAULT_ROCOF_WINDOW,
            plant: PlantParams::nominal(),
            fnn: FnnHyper::default(),
            fnn_init: None,
            fuzzy: FuzzyConfig::default(),
            hil: HilConfig::default(),
        }
    }
}

/// Sidecar sections that are records rather than inputs.
const RECORD_KEYS: [&str; 2] = ["resolved", "outcome"];

/// Everything a run needs, checked up front.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ScenarioSpec,
    pub plant: PlantParams,
    pub settings: ControllerSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for key in RECORD_KEYS {
            table.remove(key);
        }
        table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_scenario(&self) -> Result<ScenarioSpec> {
        let mut spec = match (&self.scenario_spec, &self.scenario_file) {
            (Some(spec), _) => spec.clone(),
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?
            }
            (None, None) => builtin_scenario(&self.scenario, self.seed)?,
        };
        if let Some(dt) = self.dt {
            spec.dt = dt;
        }
        if let Some(duration) = self.duration {
            // Events past a shortened horizon would never fire.
            spec.events.retain(|e| e.time <= duration);
            spec.duration = duration;
        }
        if let Some(flags) = self.constraints {
            spec.flags = flags;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Validates the whole configuration without touching the filesystem
    /// beyond reading scenario files.
    pub fn resolve(&self) -> Result<Resolved> {
        let spec = self.resolve_scenario()?;
        let plant = spec.plant_params(&self.plant)?;
        self.fnn.validate()?;
        self.fuzzy.validate()?;
        if !(self.band.is_finite() && self.band > 0.0) {
            return Err(Error::Config(format!("band must be > 0, got {}", self.band)));
        }
        if !(self.rocof_window.is_finite() && self.rocof_window >= spec.dt) {
            return Err(Error::Config(format!("rocof_window must be >= dt, got {}", self.rocof_window)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be <= {}", i64::MAX)));
        }
        LossInjector::new(self.hil.loss, self.hil.loss_seed)?;
        let uses_remote = self.controller == ControllerKind::Remote || self.methods.contains(&ControllerKind::Remote);
        if uses_remote && self.hil.endpoint.is_none() {
            return Err(Error::Config("the remote controller needs hil.endpoint".into()));
        }
        if self.hil.timeout_ms == 0 {
            return Err(Error::Config("hil.timeout_ms must be > 0".into()));
        }
        let fnn_state = match &self.fnn_init {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Some(FnnState::from_text(&text)?)
            }
            None => None,
        };
        let settings = ControllerSettings { fuzzy: self.fuzzy.clone(), fnn: self.fnn.clone(), fnn_state, dt: spec.dt };
        Ok(Resolved { spec, plant, settings })
    }

    pub fn build_controller(&self, kind: ControllerKind, resolved: &Resolved) -> Result<Box<dyn VsgController>> {
        if kind.is_local() {
            return build_local(kind, &resolved.settings);
        }
        let endpoint = self.hil.endpoint.as_deref().ok_or_else(|| Error::Config("missing hil.endpoint".into()))?;
        let mut remote = RemoteController::connect(endpoint, Duration::from_millis(self.hil.timeout_ms))?;
        if self.hil.loss > 0.0 {
            remote = remote.with_loss(LossInjector::new(self.hil.loss, self.hil.loss_seed)?);
        }
        Ok(Box::new(remote))
    }

    pub fn execute(&self, kind: ControllerKind, resolved: &Resolved) -> Result<RunOutcome> {
        let mut controller = self.build_controller(kind, resolved)?;
        sim::run(&resolved.spec, &resolved.plant, controller.as_mut(), RunOptions { realtime: self.realtime })
    }

    /// `<scenario>_<controller>_<seed>`, with path-hostile characters replaced.
    pub fn output_stem(&self, spec: &ScenarioSpec, kind: ControllerKind) -> String {
        let id: String = spec
            .id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
            .collect();
        format!("{id}_{kind}_{}", self.seed)
    }

    pub fn event_window(&self, spec: &ScenarioSpec, trace: &SimTrace) -> Result<EventWindow> {
        let times = spec.event_times();
        let t_event = match self.event_time {
            Some(t) => t,
            None if times.contains(&40.0) => 40.0,
            None => times.first().copied().unwrap_or(0.0),
        };
        if !(t_event >= 0.0 && t_event < spec.duration) {
            return Err(Error::Config(format!("event time {t_event} s is outside the run")));
        }
        Ok(EventWindow::after(t_event, &times, trace))
    }

    /// Sidecar text: this config with the resolved scenario inlined, plus the
    /// resolved plant and a summary of the outcome.
    pub fn sidecar(&self, kind: ControllerKind, resolved: &Resolved, outcome: &RunOutcome) -> Result<String> {
        let reproducible = RunConfig {
            controller: kind,
            scenario_spec: Some(resolved.spec.clone()),
            scenario_file: None,
            ..self.clone()
        };
        let mut table = toml::Table::try_from(&reproducible).map_err(|e| Error::Config(e.to_string()))?;
        table.insert("resolved".into(), to_value(&ResolvedRecord { plant: resolved.plant, ticks: resolved.spec.ticks() as u64 })?);
        table.insert(
            "outcome".into(),
            to_value(&OutcomeRecord {
                rows: outcome.trace.len() as u64,
                frames_lost: outcome.frames_lost,
                peak_abs_delta_f: outcome.trace.peak_abs_delta_f(),
            })?,
        );
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRecord {
    /// Plant after scenario uncertainty.
    pub plant: PlantParams,
    pub ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub rows: u64,
    pub frames_lost: u64,
    pub peak_abs_delta_f: f64,
}

fn to_value<T: Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::Config(e.to_string()))
}

/// Reads the `[resolved]` plant back out of a sidecar.
pub fn sidecar_plant(text: &str) -> Result<PlantParams> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let resolved = table.remove("resolved").ok_or_else(|| Error::Config("sidecar has no [resolved] section".into()))?;
    let record: ResolvedRecord = resolved.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok(record.plant)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.plant, PlantParams::nominal());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("sceanrio = \"I\"").is_err());
        assert!(RunConfig::from_toml_str("[fnn]\nlr = 1.0").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig { controller: ControllerKind::Fnnc, seed: 42, dt: Some(0.005), ..Default::default() };
        c.fnn.init_seed = Some(3);
        c.plant.grc = 0.0;
        c.hil.endpoint = Some("127.0.0.1:9000".into());
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig {
            dt: Some(0.02),
            duration: Some(10.0),
            constraints: Some(ConstraintFlags { physical: true, delay: false }),
            ..Default::default()
        };
        let r = c.resolve().unwrap();
        assert_eq!((r.spec.dt, r.spec.duration, r.spec.ticks()), (0.02, 10.0, 500));
        assert!(r.spec.flags.physical);
        assert_eq!(r.settings.dt, 0.02);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            RunConfig { scenario: "IV".into(), ..Default::default() },
            RunConfig { dt: Some(0.0), ..Default::default() },
            RunConfig { band: -1.0, ..Default::default() },
            RunConfig { controller: ControllerKind::Remote, ..Default::default() },
            RunConfig { hil: HilConfig { loss: 2.0, ..Default::default() }, ..Default::default() },
            RunConfig { plant: PlantParams { inertia: 0.0, ..PlantParams::nominal() }, ..Default::default() },
        ];
        for c in bad {
            assert!(c.resolve().is_err(), "{c:?}");
        }
    }

    #[test]
    fn scenario_iii_records_perturbed_plant() {
        let c = RunConfig { scenario: "III".into(), duration: Some(1.0), ..Default::default() };
        let r = c.resolve().unwrap();
        let out = c.execute(ControllerKind::Fixed, &r).unwrap();
        let text = c.sidecar(ControllerKind::Fixed, &r, &out).unwrap();
        let plant = sidecar_plant(&text).unwrap();
        assert_eq!((plant.t_governor, plant.t_turbine, plant.inertia, plant.damping), (0.15, 0.5, 0.05, 0.02));
        assert_eq!(plant.delay, 1.5);

        let again = RunConfig::from_toml_str(&text).unwrap();
        let r2 = again.resolve().unwrap();
        assert_eq!(r2.spec, r.spec);
        assert_eq!(r2.plant, r.plant);
        let out2 = again.execute(again.controller, &r2).unwrap();
        assert_eq!(out2.trace.to_csv(), out.trace.to_csv());
    }

    #[test]
    fn output_names() {
        let c = RunConfig { seed: 42, ..Default::default() };
        let spec = c.resolve_scenario().unwrap();
        assert_eq!(c.output_stem(&spec, ControllerKind::FuzzyInertia), "I_fuzzy-inertia_42");
        let odd = ScenarioSpec { id: "a/b c".into(), ..spec };
        assert_eq!(c.output_stem(&odd, ControllerKind::Fnnc), "a_b_c_fnnc_42");
    }
}
