//! Rule-table fuzzy adaptation of the VSG parameters.
//!
//! Inputs are the frequency deviation and the renewable power change. Each
//! input is partitioned by triangular memberships; rule strength is the min
//! of the two degrees and every output is the strength-weighted average of
//! singleton anchors.

use serde::{Deserialize, Serialize};

use crate::controllers::{ParamRange, VirtualParams, DV_RANGE, KV_RANGE, RV_RANGE};
use crate::error::{Error, Result};

/// Frequency-deviation labels, most negative first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqLabel {
    VN,
    N,
    Z,
    P,
    VP,
}

/// Renewable power change labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResLabel {
    L,
    M,
    H,
}

/// Output labels, smallest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutLabel {
    VS,
    S,
    M,
    H,
    VH,
}

impl FreqLabel {
    pub const ALL: [FreqLabel; 5] = [FreqLabel::VN, FreqLabel::N, FreqLabel::Z, FreqLabel::P, FreqLabel::VP];
}

impl ResLabel {
    pub const ALL: [ResLabel; 3] = [ResLabel::L, ResLabel::M, ResLabel::H];
}

/// Triangle with feet `a`, `c` and peak `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Triangle {
    pub fn degree(&self, x: f64) -> f64 {
        if x == self.b {
            1.0
        } else if x < self.b {
            if x <= self.a {
                0.0
            } else {
                (x - self.a) / (self.b - self.a)
            }
        } else if x >= self.c {
            0.0
        } else {
            (self.c - x) / (self.c - self.b)
        }
    }
}

/// `n` evenly spaced triangles over `universe`, neighbours overlapping by half.
pub fn uniform_partition(universe: ParamRange, n: usize) -> Vec<Triangle> {
    assert!(n >= 2);
    let step = universe.span() / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let b = universe.min + step * k as f64;
            Triangle { a: b - step, b, c: b + step }
        })
        .collect()
}

/// Singleton values for each output label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub vs: f64,
    pub s: f64,
    pub m: f64,
    pub h: f64,
    pub vh: f64,
}

impl Anchors {
    /// Five labels at the quarter points of `range`.
    pub fn evenly_spaced(range: ParamRange) -> Self {
        Self {
            vs: range.lerp(0.0),
            s: range.lerp(0.25),
            m: range.lerp(0.5),
            h: range.lerp(0.75),
            vh: range.lerp(1.0),
        }
    }

    /// Three-label set S/M/H at min, mid and max.
    pub fn three_level(range: ParamRange) -> Self {
        Self {
            vs: range.min,
            s: range.min,
            m: range.mid(),
            h: range.max,
            vh: range.max,
        }
    }

    pub fn value(&self, label: OutLabel) -> f64 {
        match label {
            OutLabel::VS => self.vs,
            OutLabel::S => self.s,
            OutLabel::M => self.m,
            OutLabel::H => self.h,
            OutLabel::VH => self.vh,
        }
    }
}

/// Rows indexed by renewable label (L, M, H), columns by frequency label (VN..VP).
pub type RuleTable = [[OutLabel; 5]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRules {
    pub range: ParamRange,
    pub anchors: Anchors,
    pub table: RuleTable,
}

impl OutputRules {
    pub fn lookup(&self, res: ResLabel, freq: FreqLabel) -> OutLabel {
        self.table[res as usize][freq as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzyConfig {
    pub delta_f_universe: ParamRange,
    pub dp_res_universe: ParamRange,
    pub delta_f_sets: Vec<Triangle>,
    pub dp_res_sets: Vec<Triangle>,
    pub inertia: OutputRules,
    pub damping: OutputRules,
    pub droop: OutputRules,
}

use OutLabel::{H, M, S, VH, VS};

/// Virtual inertia rules.
pub const INERTIA_TABLE: RuleTable = [[VS, VS, VS, VS, M], [S, S, M, H, H], [M, M, M, VH, VH]];
/// Virtual droop rules; each row is palindromic.
pub const DROOP_TABLE: RuleTable = [[VS, S, M, S, VS], [VS, S, M, S, VS], [VS, S, M, S, VS]];
/// Virtual damping rules; only S, M and H occur.
pub const DAMPING_TABLE: RuleTable = [[S, S, S, S, M], [S, S, M, H, H], [M, M, M, H, H]];

impl Default for FuzzyConfig {
    fn default() -> Self {
        let delta_f_universe = ParamRange::new(-0.5, 0.5);
        let dp_res_universe = ParamRange::new(0.0, 0.1);
        Self {
            delta_f_universe,
            dp_res_universe,
            delta_f_sets: uniform_partition(delta_f_universe, 5),
            dp_res_sets: uniform_partition(dp_res_universe, 3),
            inertia: OutputRules {
                range: KV_RANGE,
                anchors: Anchors::evenly_spaced(KV_RANGE),
                table: INERTIA_TABLE,
            },
            damping: OutputRules {
                range: DV_RANGE,
                anchors: Anchors::three_level(DV_RANGE),
                table: DAMPING_TABLE,
            },
            droop: OutputRules {
                range: RV_RANGE,
                anchors: Anchors::evenly_spaced(RV_RANGE),
                table: DROOP_TABLE,
            },
        }
    }
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("fuzzy: {msg}")));
        if self.delta_f_sets.len() != 5 {
            return bad(format!("need 5 delta_f sets, got {}", self.delta_f_sets.len()));
        }
        if self.dp_res_sets.len() != 3 {
            return bad(format!("need 3 dp_res sets, got {}", self.dp_res_sets.len()));
        }
        for (name, universe, sets) in [
            ("delta_f", self.delta_f_universe, &self.delta_f_sets),
            ("dp_res", self.dp_res_universe, &self.dp_res_sets),
        ] {
            if !(universe.min < universe.max) {
                return bad(format!("{name} universe is empty"));
            }
            for t in sets.iter() {
                if !(t.a <= t.b && t.b <= t.c && t.a < t.c) {
                    return bad(format!("{name} triangle {t:?} is degenerate"));
                }
            }
            // Coverage: probe the universe densely, including both edges.
            let n = 1000;
            for k in 0..=n {
                let x = universe.lerp(k as f64 / n as f64);
                if fuzzify(x, universe, sets).iter().all(|&d| d <= 0.0) {
                    return bad(format!("{name} sets leave {x} uncovered"));
                }
            }
        }
        for (name, rules) in [("inertia", &self.inertia), ("damping", &self.damping), ("droop", &self.droop)] {
            let a = &rules.anchors;
            for v in [a.vs, a.s, a.m, a.h, a.vh] {
                if !rules.range.contains(v) {
                    return bad(format!("{name} anchor {v} outside {:?}", rules.range));
                }
            }
        }
        Ok(())
    }
}

/// Membership degrees of `x`, clamped into `universe` first.
pub fn fuzzify(x: f64, universe: ParamRange, sets: &[Triangle]) -> Vec<f64> {
    let x = universe.clamp(x);
    sets.iter().map(|t| t.degree(x)).collect()
}

/// Min-inference over the full rule grid followed by weighted-average
/// defuzzification. The result is clamped into `rules.range`.
pub fn infer_and_defuzzify(mu_f: &[f64], mu_p: &[f64], rules: &OutputRules) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    // Summed row by row so mirrored inputs produce bit-identical sums.
    for (res, &dp) in ResLabel::ALL.iter().zip(mu_p) {
        let (mut row_num, mut row_den) = (0.0, 0.0);
        for (freq, &df) in FreqLabel::ALL.iter().zip(mu_f) {
            let strength = df.min(dp);
            if strength > 0.0 {
                row_num += strength * rules.anchors.value(rules.lookup(*res, *freq));
                row_den += strength;
            }
        }
        num += row_num;
        den += row_den;
    }
    debug_assert!(den > 0.0, "coverage invariant violated");
    rules.range.clamp(num / den)
}

pub fn fuzzy_adapt(delta_f: f64, dp_res: f64, cfg: &FuzzyConfig) -> VirtualParams {
    let mu_f = fuzzify(delta_f, cfg.delta_f_universe, &cfg.delta_f_sets);
    let mu_p = fuzzify(dp_res, cfg.dp_res_universe, &cfg.dp_res_sets);
    VirtualParams {
        k_v: infer_and_defuzzify(&mu_f, &mu_p, &cfg.inertia),
        d_v: infer_and_defuzzify(&mu_f, &mu_p, &cfg.damping),
        r_v: infer_and_defuzzify(&mu_f, &mu_p, &cfg.droop),
    }
    .clamped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> FuzzyConfig {
        FuzzyConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
    }

    #[test]
    fn fuzzify_peaks_and_midpoints() {
        let c = cfg();
        assert_eq!(fuzzify(0.0, c.delta_f_universe, &c.delta_f_sets), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(fuzzify(-0.5, c.delta_f_universe, &c.delta_f_sets), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let mid = fuzzify(-0.25 - 0.125, c.delta_f_universe, &c.delta_f_sets);
        assert!((mid[0] - 0.5).abs() < 1e-12 && (mid[1] - 0.5).abs() < 1e-12);
        // Peak of N.
        assert_eq!(fuzzify(-0.25, c.delta_f_universe, &c.delta_f_sets)[1], 1.0);
        // Out of range clamps onto the edge label.
        assert_eq!(fuzzify(3.0, c.delta_f_universe, &c.delta_f_sets)[4], 1.0);
        assert_eq!(fuzzify(-0.2, c.dp_res_universe, &c.dp_res_sets), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn corner_cells() {
        let c = cfg();
        let vp = fuzzy_adapt(-0.5, 0.0, &c);
        assert_eq!(vp.k_v, 0.5);
        let vp = fuzzy_adapt(0.5, 0.1, &c);
        assert_eq!(vp.k_v, 7.0);
        assert_eq!(vp.d_v, 10.0);
        assert!((vp.r_v - 0.005).abs() < 1e-15);
    }

    #[test]
    fn rest_point_reads_z_l_column() {
        let c = cfg();
        let vp = fuzzy_adapt(0.0, 0.0, &c);
        assert_eq!(vp.k_v, c.inertia.anchors.vs);
        assert_eq!(vp.d_v, c.damping.anchors.s);
        assert_eq!(vp.r_v, c.droop.anchors.m);
    }

    #[test]
    fn inertia_monotone_along_high_row() {
        let c = cfg();
        let k = |df| fuzzy_adapt(df, 0.1, &c).k_v;
        assert!(k(0.5) >= k(0.0) && k(0.0) >= k(-0.5));
    }

    #[test]
    fn rejects_uncovered_partition() {
        let mut c = cfg();
        c.delta_f_sets[2] = Triangle { a: -0.01, b: 0.0, c: 0.01 };
        c.delta_f_sets[1] = Triangle { a: -0.5, b: -0.4, c: -0.3 };
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.dp_res_sets.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = cfg();
        let text = toml::to_string(&c).unwrap();
        let back: FuzzyConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn outputs_stay_in_range(df in -0.5f64..=0.5, p in 0.0f64..=0.1) {
            let vp = fuzzy_adapt(df, p, &cfg());
            prop_assert!(KV_RANGE.contains(vp.k_v));
            prop_assert!(DV_RANGE.contains(vp.d_v));
            prop_assert!(RV_RANGE.contains(vp.r_v));
        }

        #[test]
        fn droop_symmetric_in_delta_f(df in 0.0f64..=0.5, p in 0.0f64..=0.1) {
            let c = cfg();
            prop_assert_eq!(fuzzy_adapt(df, p, &c).r_v, fuzzy_adapt(-df, p, &c).r_v);
        }

        #[test]
        fn continuous_in_delta_f(df in -0.5f64..0.5, p in 0.0f64..0.1) {
            let c = cfg();
            let a = fuzzy_adapt(df, p, &c);
            let b = fuzzy_adapt(df + 1e-6, p, &c);
            for (x, y) in [(a.k_v, b.k_v), (a.d_v, b.d_v), (a.r_v, b.r_v)] {
                prop_assert!((x - y).abs() < 1e-4);
            }
        }

        /// At most four rules fire, each strength moves by at most slope * eps
        /// (slope 20 per p.u. for three sets over 0.1 p.u.), every singleton is
        /// within one span of the output and the total strength is at least 0.5.
        #[test]
        fn lipschitz_in_dp_res(df in -0.5f64..0.5, p in 0.0f64..0.1) {
            let c = cfg();
            let eps = 1e-6;
            let a = fuzzy_adapt(df, p, &c);
            let e = fuzzy_adapt(df, p + eps, &c);
            for (x, y, span) in [(a.k_v, e.k_v, KV_RANGE.span()), (a.d_v, e.d_v, DV_RANGE.span()), (a.r_v, e.r_v, RV_RANGE.span())] {
                prop_assert!((x - y).abs() <= 4.0 * 20.0 * span * eps / 0.5);
            }
        }
    }

    /// The 1e-4 bound per 1e-6 step cannot hold in dp_res: the three-set
    /// partition over [0, 0.1] p.u. gives memberships a slope of 20 per p.u.,
    /// and the damping output moves by up to about 4e-4 per step.
    #[test]
    #[ignore = "unattainable with three triangular sets over a 0.1 p.u. universe"]
    fn continuous_in_dp_res_tight() {
        let c = cfg();
        for i in 0..=200 {
            for j in 0..100 {
                let df = -0.5 + i as f64 * 0.005;
                let p = j as f64 * 0.001;
                let a = fuzzy_adapt(df, p, &c);
                let e = fuzzy_adapt(df, p + 1e-6, &c);
                for (x, y) in [(a.k_v, e.k_v), (a.d_v, e.d_v), (a.r_v, e.r_v)] {
                    assert!((x - y).abs() < 1e-4, "df {df} p {p}: {x} vs {y}");
                }
            }
        }
    }
}
