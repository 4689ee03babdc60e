//! VSG power law and the controller plug-in contract.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::fnn::{FnnHyper, FnnState};
use crate::fuzzy::{fuzzy_adapt, FuzzyConfig};
use crate::plant::first_order_lag_step;

/// Closed interval used for the adaptive parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.min..=self.max).contains(&x)
    }

    /// Maps `s` in [0, 1] affinely onto the range.
    pub fn lerp(&self, s: f64) -> f64 {
        self.min + self.span() * s
    }
}

pub const KV_RANGE: ParamRange = ParamRange::new(0.5, 7.0);
pub const DV_RANGE: ParamRange = ParamRange::new(0.1, 10.0);
pub const RV_RANGE: ParamRange = ParamRange::new(0.005, 2.7);

/// Virtual inertia, damping and droop applied to the ESS inverter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualParams {
    /// Virtual inertia constant (p.u. s).
    pub k_v: f64,
    /// Virtual damping (p.u.MW/Hz).
    pub d_v: f64,
    /// Virtual droop (Hz/p.u.MW).
    pub r_v: f64,
}

impl VirtualParams {
    /// Fixed-parameter baseline.
    pub const TABLE_IV: VirtualParams = VirtualParams { k_v: 1.3, d_v: 1.2, r_v: 2.7 };

    pub fn new(k_v: f64, d_v: f64, r_v: f64) -> Self {
        Self { k_v, d_v, r_v }
    }

    /// Clamps each parameter into its adaptive range.
    pub fn clamped(self) -> Self {
        Self {
            k_v: KV_RANGE.clamp(self.k_v),
            d_v: DV_RANGE.clamp(self.d_v),
            r_v: RV_RANGE.clamp(self.r_v),
        }
    }

    pub fn midpoint() -> Self {
        Self::new(KV_RANGE.mid(), DV_RANGE.mid(), RV_RANGE.mid())
    }

    pub fn in_adaptive_ranges(&self) -> bool {
        KV_RANGE.contains(self.k_v) && DV_RANGE.contains(self.d_v) && RV_RANGE.contains(self.r_v)
    }
}

/// ESS inverter power for one tick.
///
/// Realises `(k_v s + d_v) / ((1 + s T_ess) r_v)` acting on `-delta_f`, with the
/// derivative taken as a backward difference. The output and the stored lag
/// state are clamped to `+-ess_cap`.
pub fn vsg_power_step(
    ess_state: f64,
    delta_f: f64,
    prev_delta_f: f64,
    vp: &VirtualParams,
    t_ess: f64,
    ess_cap: f64,
    dt: f64,
) -> Result<f64> {
    let rocof = (delta_f - prev_delta_f) / dt;
    let command = -(vp.k_v * rocof + vp.d_v * delta_f) / vp.r_v;
    let y = first_order_lag_step(ess_state, command, 1.0, t_ess, dt)?;
    check_finite("ess", f64::NAN, y)?;
    Ok(y.clamp(-ess_cap, ess_cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// No VSG: the ESS channel is disconnected.
    None,
    /// Nominal constants (inertia 1.3, damping 1.2, droop 2.7).
    Fixed,
    /// Fuzzy adaptation of the inertia only; damping and droop stay fixed.
    FuzzyInertia,
    /// Fuzzy adaptation of all three parameters.
    Fuzzy,
    /// Online-trained fuzzy neural network.
    Fnnc,
    /// Any of the above running behind a HIL endpoint.
    Remote,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::None,
        ControllerKind::Fixed,
        ControllerKind::FuzzyInertia,
        ControllerKind::Fuzzy,
        ControllerKind::Fnnc,
        ControllerKind::Remote,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::None => "none",
            ControllerKind::Fixed => "fixed",
            ControllerKind::FuzzyInertia => "fuzzy-inertia",
            ControllerKind::Fuzzy => "fuzzy",
            ControllerKind::Fnnc => "fnnc",
            ControllerKind::Remote => "remote",
        }
    }

    pub fn is_local(&self) -> bool {
        !matches!(self, ControllerKind::Remote)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}`")))
    }
}

/// What a controller sees each tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub t: f64,
    pub delta_f: f64,
    pub rocof: f64,
    pub dp_res: f64,
}

/// Per-tick controller contract. `None` means the ESS path is disabled.
pub trait VsgController: Send {
    fn kind(&self) -> ControllerKind;

    fn adapt(&mut self, obs: &Observation) -> Result<Option<VirtualParams>>;

    /// Frames that went unanswered (remote controllers only).
    fn frames_lost(&self) -> u64 {
        0
    }

    /// Current network, for controllers that have one.
    fn fnn_state(&self) -> Option<&FnnState> {
        None
    }
}

#[derive(Debug, Default)]
pub struct NoVsg;

impl VsgController for NoVsg {
    fn kind(&self) -> ControllerKind {
        ControllerKind::None
    }

    fn adapt(&mut self, _obs: &Observation) -> Result<Option<VirtualParams>> {
        Ok(None)
    }
}

#[derive(Debug)]
pub struct FixedVsg(pub VirtualParams);

impl Default for FixedVsg {
    fn default() -> Self {
        Self(VirtualParams::TABLE_IV)
    }
}

impl VsgController for FixedVsg {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Fixed
    }

    fn adapt(&mut self, _obs: &Observation) -> Result<Option<VirtualParams>> {
        Ok(Some(self.0))
    }
}

#[derive(Debug, Clone)]
pub struct FuzzyVsg {
    pub config: FuzzyConfig,
    pub inertia_only: bool,
}

impl VsgController for FuzzyVsg {
    fn kind(&self) -> ControllerKind {
        if self.inertia_only {
            ControllerKind::FuzzyInertia
        } else {
            ControllerKind::Fuzzy
        }
    }

    fn adapt(&mut self, obs: &Observation) -> Result<Option<VirtualParams>> {
        let vp = fuzzy_adapt(obs.delta_f, obs.dp_res, &self.config);
        Ok(Some(if self.inertia_only {
            VirtualParams { k_v: vp.k_v, ..VirtualParams::TABLE_IV }
        } else {
            vp
        }))
    }
}

/// FNNC wrapper that owns the network and falls back to the last finite
/// state when a training step diverges.
#[derive(Debug, Clone)]
pub struct FnncVsg {
    pub state: FnnState,
    pub dt: f64,
    pub divergence_resets: u64,
}

impl FnncVsg {
    pub fn new(state: FnnState, dt: f64) -> Self {
        Self { state, dt, divergence_resets: 0 }
    }
}

impl VsgController for FnncVsg {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Fnnc
    }

    fn fnn_state(&self) -> Option<&FnnState> {
        Some(&self.state)
    }

    fn adapt(&mut self, obs: &Observation) -> Result<Option<VirtualParams>> {
        match crate::fnn::fnnc_adapt(&self.state, obs.delta_f, obs.rocof, self.dt) {
            Ok((next, vp)) => {
                self.state = next;
                Ok(Some(vp))
            }
            Err(Error::TrainingDivergence { .. }) => {
                self.divergence_resets += 1;
                self.state.last_error = Some(-obs.delta_f.abs());
                Ok(Some(crate::fnn::fnn_forward(&self.state, obs.delta_f, obs.rocof).vp))
            }
            Err(e) => Err(e),
        }
    }
}

/// Everything needed to build a local controller.
#[derive(Debug, Clone, Default)]
pub struct ControllerSettings {
    pub fuzzy: FuzzyConfig,
    pub fnn: FnnHyper,
    /// Pre-trained network to start from instead of a fresh one.
    pub fnn_state: Option<FnnState>,
    pub dt: f64,
}

/// Builds an in-process controller. `Remote` has to be built by the HIL client.
pub fn build_local(kind: ControllerKind, settings: &ControllerSettings) -> Result<Box<dyn VsgController>> {
    Ok(match kind {
        ControllerKind::None => Box::new(NoVsg),
        ControllerKind::Fixed => Box::new(FixedVsg::default()),
        ControllerKind::FuzzyInertia | ControllerKind::Fuzzy => {
            settings.fuzzy.validate()?;
            Box::new(FuzzyVsg {
                config: settings.fuzzy.clone(),
                inertia_only: kind == ControllerKind::FuzzyInertia,
            })
        }
        ControllerKind::Fnnc => {
            settings.fnn.validate()?;
            let state = match &settings.fnn_state {
                Some(s) => s.clone(),
                None => FnnState::new(settings.fnn.clone()),
            };
            Box::new(FnncVsg::new(state, settings.dt))
        }
        ControllerKind::Remote => {
            return Err(Error::Config("remote controller needs a HIL endpoint".into()));
        }
    })
}

/// One-shot dispatch over the compared methods; stateful controllers start
/// from their initial state.
pub fn controller_output(
    kind: ControllerKind,
    obs: &Observation,
    settings: &ControllerSettings,
) -> Result<Option<VirtualParams>> {
    build_local(kind, settings)?.adapt(obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.01;

    fn settle(vp: &VirtualParams, delta_f: f64) -> f64 {
        let mut y = 0.0;
        for _ in 0..20_000 {
            y = vsg_power_step(y, delta_f, delta_f, vp, 5.0, 10.0, DT).unwrap();
        }
        y
    }

    #[test]
    fn zero_deviation_gives_zero_power() {
        let vp = VirtualParams::TABLE_IV;
        let mut y = 0.0;
        for _ in 0..100 {
            y = vsg_power_step(y, 0.0, 0.0, &vp, 5.0, 0.29, DT).unwrap();
            assert_eq!(y, 0.0);
        }
    }

    #[test]
    fn dc_gain_is_damping_over_droop() {
        let y = settle(&VirtualParams::TABLE_IV, 0.1);
        assert!((y + 0.1 * 1.2 / 2.7).abs() < 1e-9, "{y}");
        assert!((y + 0.044444).abs() < 1e-6);
    }

    #[test]
    fn output_saturates_at_cap() {
        let vp = VirtualParams::new(7.0, 10.0, 0.005);
        let mut y = 0.0;
        for _ in 0..1000 {
            y = vsg_power_step(y, -0.2, -0.1, &vp, 5.0, 0.29, DT).unwrap();
            assert!(y.abs() <= 0.29);
        }
        assert_eq!(y, 0.29);
        let y = vsg_power_step(0.0, 0.2, 0.0, &vp, 5.0, 0.29, DT).unwrap();
        assert_eq!(y, -0.29);
    }

    #[test]
    fn zero_inertia_is_a_pure_lag() {
        let vp = VirtualParams::new(0.0, 1.2, 2.7);
        let mut y = 0.0;
        let target = -0.05 * 1.2 / 2.7;
        for k in 1..=2000 {
            y = vsg_power_step(y, 0.05, 0.05, &vp, 5.0, 1.0, DT).unwrap();
            let t = k as f64 * DT;
            let exact = target * (1.0 - (-t / 5.0).exp());
            assert!((y - exact).abs() <= 1e-9 * exact.abs(), "k={k}");
        }
    }

    #[test]
    fn dc_gain_monotone_in_damping_and_droop() {
        let by_damping: Vec<f64> = [0.5, 1.2, 4.0]
            .iter()
            .map(|&d| settle(&VirtualParams::new(1.3, d, 2.7), 0.02).abs())
            .collect();
        assert!(by_damping.windows(2).all(|w| w[0] < w[1]), "{by_damping:?}");
        let by_droop: Vec<f64> = [0.5, 1.2, 2.7]
            .iter()
            .map(|&r| settle(&VirtualParams::new(1.3, 1.2, r), 0.02).abs())
            .collect();
        assert!(by_droop.windows(2).all(|w| w[0] > w[1]), "{by_droop:?}");
    }

    #[test]
    fn dispatch_fixed_and_none() {
        let settings = ControllerSettings { dt: DT, ..Default::default() };
        let obs = Observation { delta_f: 0.2, rocof: -0.3, ..Default::default() };
        assert_eq!(
            controller_output(ControllerKind::Fixed, &obs, &settings).unwrap(),
            Some(VirtualParams::new(1.3, 1.2, 2.7))
        );
        assert_eq!(controller_output(ControllerKind::None, &obs, &settings).unwrap(), None);
        assert!(controller_output(ControllerKind::Remote, &obs, &settings).is_err());
    }

    #[test]
    fn fuzzy_at_rest_is_golden() {
        let settings = ControllerSettings { dt: DT, ..Default::default() };
        let vp = controller_output(ControllerKind::Fuzzy, &Observation::default(), &settings)
            .unwrap()
            .unwrap();
        // (Z, L) cells: VS, S, M with evenly spaced anchors.
        assert_eq!(vp, VirtualParams::new(0.5, 0.1, 1.3525));
        let vp = controller_output(ControllerKind::FuzzyInertia, &Observation::default(), &settings)
            .unwrap()
            .unwrap();
        assert_eq!(vp, VirtualParams::new(0.5, 1.2, 2.7));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ControllerKind::ALL {
            assert_eq!(kind.as_str().parse::<ControllerKind>().unwrap(), kind);
        }
        assert!("pid".parse::<ControllerKind>().is_err());
    }
}
