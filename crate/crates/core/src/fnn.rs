//! Four-layer fuzzy neural network that tunes the VSG parameters online.
//!
//! Layer 1 scales the inputs (frequency deviation and RoCoF), layer 2 applies
//! three Gaussian memberships per input, layer 3 forms the nine pairwise rule
//! products and layer 4 takes three weighted sums. Each raw output is squashed
//! by a logistic and mapped affinely onto its parameter range, so a zero raw
//! output lands on the range midpoint.
//!
//! Training is plain backpropagation with fixed learning rates. The error
//! signal is `e = -|delta_f|` (the regulated quantity is the magnitude of the
//! deviation, target zero) and the output-layer delta is `A e + de/dt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{VirtualParams, DV_RANGE, KV_RANGE, RV_RANGE};
use crate::error::{Error, Result};

pub const INPUTS: usize = 2;
pub const MEMBERSHIPS: usize = 3;
pub const RULES: usize = MEMBERSHIPS * MEMBERSHIPS;
pub const OUTPUTS: usize = 3;

/// Training and scaling hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnnHyper {
    pub lr_weights: f64,
    pub lr_centers: f64,
    pub lr_widths: f64,
    /// Weight of the error term in the output delta.
    pub a: f64,
    pub sigma_min: f64,
    /// Hz mapped to a unit input.
    pub delta_f_scale: f64,
    /// Hz/s mapped to a unit input.
    pub rocof_scale: f64,
    /// Training is skipped while |e| is below this.
    pub tolerance: f64,
    /// When set, initial weights are drawn uniformly from +-`init_spread`.
    pub init_seed: Option<u64>,
    pub init_spread: f64,
}

impl Default for FnnHyper {
    fn default() -> Self {
        Self {
            lr_weights: 0.2,
            lr_centers: 0.02,
            lr_widths: 0.01,
            a: 1.0,
            sigma_min: 0.05,
            delta_f_scale: 0.5,
            rocof_scale: 1.0,
            tolerance: 1e-3,
            init_seed: None,
            init_spread: 0.1,
        }
    }
}

impl FnnHyper {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lr_weights", self.lr_weights),
            ("lr_centers", self.lr_centers),
            ("lr_widths", self.lr_widths),
            ("tolerance", self.tolerance),
            ("init_spread", self.init_spread),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("fnn.{name} must be finite and >= 0, got {v}")));
            }
        }
        let positive = [
            ("a", self.a),
            ("sigma_min", self.sigma_min),
            ("delta_f_scale", self.delta_f_scale),
            ("rocof_scale", self.rocof_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("fnn.{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Trainable parameters plus the bookkeeping needed to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnState {
    /// `centers[i][j]`: membership `j` of input `i`.
    pub centers: [[f64; MEMBERSHIPS]; INPUTS],
    pub widths: [[f64; MEMBERSHIPS]; INPUTS],
    /// `weights[r][o]`: rule `r = 3 * j_f + j_r` to output `o` (k_v, d_v, r_v).
    pub weights: [[f64; OUTPUTS]; RULES],
    pub hyper: FnnHyper,
    pub iteration: u64,
    /// Error seen on the previous call, for the backward-difference rate.
    pub last_error: Option<f64>,
}

impl FnnState {
    /// Centers at -1, 0, +1 on the scaled inputs, widths 0.5. Weights are zero
    /// unless `hyper.init_seed` asks for a random start.
    pub fn new(hyper: FnnHyper) -> Self {
        let mut weights = [[0.0; OUTPUTS]; RULES];
        if let Some(seed) = hyper.init_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for w in weights.iter_mut().flatten() {
                *w = rng.gen_range(-hyper.init_spread..=hyper.init_spread);
            }
        }
        Self {
            centers: [[-1.0, 0.0, 1.0]; INPUTS],
            widths: [[0.5; MEMBERSHIPS]; INPUTS],
            weights,
            hyper,
            iteration: 0,
            last_error: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.centers.iter().flatten().all(|v| v.is_finite())
            && self.widths.iter().flatten().all(|v| v.is_finite())
            && self.weights.iter().flatten().all(|v| v.is_finite())
    }

    /// Serialises the network to its TOML text form.
    pub fn to_text(&self) -> String {
        let doc = SavedFnn { format: FNN_FORMAT.to_string(), state: self.clone() };
        toml::to_string(&doc).expect("FnnState serialises")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: SavedFnn = toml::from_str(text).map_err(|e| Error::Config(format!("fnn state: {e}")))?;
        if doc.format != FNN_FORMAT {
            return Err(Error::Config(format!("fnn state: unsupported format `{}`", doc.format)));
        }
        let state = doc.state;
        state.hyper.validate()?;
        if !state.is_finite() || state.widths.iter().flatten().any(|&s| s <= 0.0) {
            return Err(Error::Config("fnn state: non-finite values or non-positive widths".into()));
        }
        Ok(state)
    }
}

const FNN_FORMAT: &str = "vsg-fnn/1";

#[derive(Serialize, Deserialize)]
struct SavedFnn {
    format: String,
    #[serde(flatten)]
    state: FnnState,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FnnIo {
    pub x: [f64; INPUTS],
    pub o2: [[f64; MEMBERSHIPS]; INPUTS],
    pub o3: [f64; RULES],
    pub o4: [f64; OUTPUTS],
    pub vp: VirtualParams,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Maps raw network outputs onto the parameter ranges.
pub fn map_outputs(o4: &[f64; OUTPUTS]) -> VirtualParams {
    VirtualParams {
        k_v: KV_RANGE.lerp(logistic(o4[0])),
        d_v: DV_RANGE.lerp(logistic(o4[1])),
        r_v: RV_RANGE.lerp(logistic(o4[2])),
    }
    .clamped()
}

pub fn fnn_forward(state: &FnnState, delta_f: f64, rocof: f64) -> FnnIo {
    let x = [delta_f / state.hyper.delta_f_scale, rocof / state.hyper.rocof_scale];
    let mut o2 = [[0.0; MEMBERSHIPS]; INPUTS];
    for i in 0..INPUTS {
        for j in 0..MEMBERSHIPS {
            let d = x[i] - state.centers[i][j];
            let s = state.widths[i][j];
            o2[i][j] = (-(d * d) / (s * s)).exp();
        }
    }
    let mut o3 = [0.0; RULES];
    for a in 0..MEMBERSHIPS {
        for b in 0..MEMBERSHIPS {
            o3[a * MEMBERSHIPS + b] = o2[0][a] * o2[1][b];
        }
    }
    let mut o4 = [0.0; OUTPUTS];
    for (r, &rule) in o3.iter().enumerate() {
        for (o, out) in o4.iter_mut().enumerate() {
            *out += state.weights[r][o] * rule;
        }
    }
    FnnIo { x, o2, o3, o4, vp: map_outputs(&o4) }
}

/// Parameter increments per unit learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FnnGradients {
    pub weights: [[f64; OUTPUTS]; RULES],
    pub centers: [[f64; MEMBERSHIPS]; INPUTS],
    pub widths: [[f64; MEMBERSHIPS]; INPUTS],
}

/// Back-propagates the output deltas `delta4` to every trainable parameter.
///
/// The rule-layer delta is `delta3[r] = sum_o delta4[o] * w[r][o]`. A
/// membership receives the sum over the three rules it feeds of
/// `delta3[r] * o3[r] * 2 (x - m) / sigma^2` (centers) and
/// `delta3[r] * o3[r] * 2 (x - m)^2 / sigma^3` (widths).
pub fn backprop(state: &FnnState, io: &FnnIo, delta4: &[f64; OUTPUTS]) -> FnnGradients {
    let mut weights = [[0.0; OUTPUTS]; RULES];
    let mut delta3 = [0.0; RULES];
    for r in 0..RULES {
        for o in 0..OUTPUTS {
            weights[r][o] = delta4[o] * io.o3[r];
            delta3[r] += delta4[o] * state.weights[r][o];
        }
    }
    let mut centers = [[0.0; MEMBERSHIPS]; INPUTS];
    let mut widths = [[0.0; MEMBERSHIPS]; INPUTS];
    for a in 0..MEMBERSHIPS {
        for b in 0..MEMBERSHIPS {
            let r = a * MEMBERSHIPS + b;
            let common = delta3[r] * io.o3[r];
            for (i, j) in [(0, a), (1, b)] {
                let d = io.x[i] - state.centers[i][j];
                let s = state.widths[i][j];
                centers[i][j] += common * 2.0 * d / (s * s);
                widths[i][j] += common * 2.0 * d * d / (s * s * s);
            }
        }
    }
    FnnGradients { weights, centers, widths }
}

/// One backpropagation step driven by the error `e` and its rate `de_dt`.
pub fn fnn_train_step(state: &FnnState, io: &FnnIo, e: f64, de_dt: f64) -> Result<FnnState> {
    let h = &state.hyper;
    let delta4 = [h.a * e + de_dt; OUTPUTS];
    let g = backprop(state, io, &delta4);
    let mut next = state.clone();
    for r in 0..RULES {
        for o in 0..OUTPUTS {
            next.weights[r][o] += h.lr_weights * g.weights[r][o];
        }
    }
    for i in 0..INPUTS {
        for j in 0..MEMBERSHIPS {
            next.centers[i][j] += h.lr_centers * g.centers[i][j];
            next.widths[i][j] = (next.widths[i][j] + h.lr_widths * g.widths[i][j]).max(h.sigma_min);
        }
    }
    if !next.is_finite() {
        return Err(Error::TrainingDivergence { iteration: state.iteration });
    }
    next.iteration += 1;
    Ok(next)
}

/// Forward pass plus one training step; returns the new state and the
/// parameters from the updated network.
///
/// Training is skipped while `|e| < tolerance`; the error history still advances.
pub fn fnnc_adapt(state: &FnnState, delta_f: f64, rocof: f64, dt: f64) -> Result<(FnnState, VirtualParams)> {
    let e = -delta_f.abs();
    let de_dt = state.last_error.map_or(0.0, |prev| (e - prev) / dt);
    let io = fnn_forward(state, delta_f, rocof);
    let mut next = if e.abs() < state.hyper.tolerance {
        state.clone()
    } else {
        fnn_train_step(state, &io, e, de_dt)?
    };
    next.last_error = Some(e);
    let vp = if next.iteration == state.iteration { io.vp } else { fnn_forward(&next, delta_f, rocof).vp };
    Ok((next, vp))
}
