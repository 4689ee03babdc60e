//! Lockstep closed-loop runner: plant, disturbance stream and one controller.

use std::thread;
use std::time::{Duration, Instant};

use crate::controllers::{Observation, VirtualParams, VsgController};
use crate::error::Result;
use crate::metrics::{SimTrace, TraceRow};
use crate::plant::{simulate_tick, PlantParams, PlantState};
use crate::scenario::{InputGenerator, ScenarioSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Pace ticks to wall-clock time.
    pub realtime: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: SimTrace,
    pub frames_lost: u64,
}

/// Runs `spec` against a resolved plant. The trace holds `ticks + 1` rows:
/// row `k` is the plant state at `t_k` together with the inputs and the
/// virtual parameters in force over `[t_k, t_k+1)`.
pub fn run(
    spec: &ScenarioSpec,
    params: &PlantParams,
    controller: &mut dyn VsgController,
    opts: RunOptions,
) -> Result<RunOutcome> {
    spec.validate()?;
    params.validate()?;
    let dt = spec.dt;
    let ticks = spec.ticks();
    let inputs = InputGenerator::new(spec);
    let mut state = PlantState::new(params, spec.flags, dt);
    let mut trace = SimTrace { dt, rows: Vec::with_capacity(ticks + 1) };
    let started = Instant::now();

    for k in 0..=ticks {
        let t = k as f64 * dt;
        let u = inputs.inputs_at(t);
        let obs = Observation { t, delta_f: state.delta_f, rocof: state.rocof(), dp_res: state.dp_res() };
        let vp = controller.adapt(&obs)?;
        trace.rows.push(row(&state, t, obs.rocof, u.dp_load, vp.as_ref()));
        if k == ticks {
            break;
        }
        simulate_tick(&mut state, &u, vp.as_ref(), params, spec.flags, dt)?;
        if opts.realtime {
            let due = Duration::from_secs_f64((k + 1) as f64 * dt);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                thread::sleep(wait);
            }
        }
    }
    Ok(RunOutcome { trace, frames_lost: controller.frames_lost() })
}

fn row(state: &PlantState, t: f64, rocof: f64, dp_l: f64, vp: Option<&VirtualParams>) -> TraceRow {
    let ch = state.channels();
    let (kv, dv, rv) = vp.map_or((0.0, 0.0, 0.0), |v| (v.k_v, v.d_v, v.r_v));
    TraceRow {
        t,
        delta_f: ch.delta_f,
        rocof,
        dp_m: ch.dp_m,
        dp_g: ch.dp_g,
        dp_c: ch.dp_c,
        dp_w: ch.dp_w,
        dp_pv: ch.dp_pv,
        dp_vi: ch.dp_vi,
        dp_l,
        kv,
        dv,
        rv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{FixedVsg, NoVsg};
    use crate::scenario::builtin_scenario;

    #[test]
    fn row_count_and_grid() {
        let spec = builtin_scenario("I", 1).unwrap();
        let out = run(&spec, &PlantParams::nominal(), &mut NoVsg, RunOptions::default()).unwrap();
        assert_eq!(out.trace.len(), 8001);
        assert_eq!(out.trace.rows[8000].t, 80.0);
        out.trace.validate().unwrap();
        assert!(out.trace.rows.iter().all(|r| r.kv == 0.0 && r.dp_vi == 0.0));
    }

    #[test]
    fn quiet_before_first_event() {
        let spec = builtin_scenario("I", 1).unwrap();
        let out = run(&spec, &PlantParams::nominal(), &mut FixedVsg::default(), RunOptions::default()).unwrap();
        assert!(out.trace.rows[..500].iter().all(|r| r.delta_f == 0.0));
        assert!(out.trace.rows[502].delta_f > 0.0);
        assert_eq!(out.trace.rows[0].kv, 1.3);
    }

    #[test]
    fn repeat_runs_identical() {
        let spec = builtin_scenario("II-case1", 9).unwrap();
        let p = PlantParams::nominal();
        let a = run(&spec, &p, &mut FixedVsg::default(), RunOptions::default()).unwrap();
        let b = run(&spec, &p, &mut FixedVsg::default(), RunOptions::default()).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    }
}
