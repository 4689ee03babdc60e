//! Simulation traces and the disturbance metrics computed from them.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "t,delta_f,rocof,dp_m,dp_g,dp_c,dp_w,dp_pv,dp_vi,dp_l,kv,dv,rv";
pub const REPORT_HEADER: &str = "method,overshoot_mhz,settling_s,peak_rocof";

/// Default settling band (Hz).
pub const DEFAULT_BAND: f64 = 0.005;
/// Default RoCoF smoothing window (s).
pub const DEFAULT_ROCOF_WINDOW: f64 = 0.1;

/// One sample. Virtual parameters are zero when no VSG is connected.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub delta_f: f64,
    pub rocof: f64,
    pub dp_m: f64,
    pub dp_g: f64,
    pub dp_c: f64,
    pub dp_w: f64,
    pub dp_pv: f64,
    pub dp_vi: f64,
    pub dp_l: f64,
    pub kv: f64,
    pub dv: f64,
    pub rv: f64,
}

impl TraceRow {
    fn fields(&self) -> [f64; 13] {
        [
            self.t, self.delta_f, self.rocof, self.dp_m, self.dp_g, self.dp_c, self.dp_w, self.dp_pv, self.dp_vi,
            self.dp_l, self.kv, self.dv, self.rv,
        ]
    }

    fn from_fields(f: [f64; 13]) -> Self {
        Self {
            t: f[0],
            delta_f: f[1],
            rocof: f[2],
            dp_m: f[3],
            dp_g: f[4],
            dp_c: f[5],
            dp_w: f[6],
            dp_pv: f[7],
            dp_vi: f[8],
            dp_l: f[9],
            kv: f[10],
            dv: f[11],
            rv: f[12],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub fn new(dt: f64) -> Self {
        Self { dt, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn delta_f(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta_f).collect()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let first = self.rows.first().map_or(0.0, |r| r.t);
        (((t - first) / self.dt) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn peak_abs_delta_f(&self) -> f64 {
        self.rows.iter().map(|r| r.delta_f.abs()).fold(0.0, f64::max)
    }

    /// Integral of |delta_f| over `[from, to)` by the rectangle rule.
    pub fn abs_delta_f_integral(&self, from: f64, to: f64) -> f64 {
        let (a, b) = (self.index_at(from), self.index_at(to).min(self.len()));
        self.rows[a.min(b)..b].iter().map(|r| r.delta_f.abs()).sum::<f64>() * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.rows.windows(2) {
            let step = pair[1].t - pair[0].t;
            if !(step > 0.0) || (step - self.dt).abs() > 1e-6 * self.dt.max(1.0) {
                return Err(Error::InvalidTrace(format!("irregular time step {step} at t = {}", pair[0].t)));
            }
        }
        if let Some(row) = self.rows.iter().find(|r| r.fields().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidTrace(format!("non-finite value at t = {}", row.t)));
        }
        Ok(())
    }

    /// Writes the CSV form. Floats use the shortest round-trip decimal form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        let mut line = String::with_capacity(256);
        for row in &self.rows {
            line.clear();
            for (k, v) in row.fields().iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "{v}").expect("write to String");
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != TRACE_HEADER {
            return Err(Error::InvalidTrace(format!("unexpected header `{header}`")));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut f = [0.0; 13];
            let mut count = 0;
            for (k, cell) in line.split(',').enumerate() {
                if k >= 13 {
                    count = 14;
                    break;
                }
                f[k] = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidTrace(format!("line {}: bad number `{cell}`", n + 2)))?;
                count = k + 1;
            }
            if count != 13 {
                return Err(Error::InvalidTrace(format!("line {}: expected 13 columns", n + 2)));
            }
            rows.push(TraceRow::from_fields(f));
        }
        let dt = match rows.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => return Err(Error::InvalidTrace("need at least two rows".into())),
        };
        let trace = SimTrace { dt, rows };
        trace.validate()?;
        Ok(trace)
    }
}

/// Smoothed RoCoF (Hz/s): centred difference of delta_f (one-sided at the
/// ends) followed by a centred moving average spanning `window` seconds. The
/// averaging width is rounded to an odd sample count and shrinks near the
/// trace edges.
pub fn rocof_series(trace: &SimTrace, window: f64) -> Result<Vec<f64>> {
    if !(window >= trace.dt) {
        return Err(Error::InvalidTrace(format!("window {window} s is shorter than dt {} s", trace.dt)));
    }
    let f = trace.delta_f();
    let mut n = (window / trace.dt).round() as usize;
    if n.is_multiple_of(2) {
        n += 1;
    }
    if f.len() < n.max(2) {
        return Err(Error::InvalidTrace(format!("trace of {} samples is shorter than the window", f.len())));
    }
    Ok(moving_average(&centred_difference(&f, trace.dt), n / 2))
}

fn centred_difference(f: &[f64], dt: f64) -> Vec<f64> {
    let last = f.len() - 1;
    (0..f.len())
        .map(|k| match k {
            0 => (f[1] - f[0]) / dt,
            k if k == last => (f[last] - f[last - 1]) / dt,
            k => (f[k + 1] - f[k - 1]) / (2.0 * dt),
        })
        .collect()
}

fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let h = half.min(k).min(x.len() - 1 - k);
            let w = &x[k - h..=k + h];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Half-open analysis window `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventWindow {
    pub start: f64,
    pub end: f64,
}

impl EventWindow {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    /// Window from `t_event` to the next event time, or to the end of the trace.
    pub fn after(t_event: f64, event_times: &[f64], trace: &SimTrace) -> Self {
        let end = event_times
            .iter()
            .copied()
            .filter(|&t| t > t_event + 1e-9)
            .fold(f64::INFINITY, f64::min);
        let trace_end = trace.rows.last().map_or(t_event, |r| r.t + trace.dt);
        Self { start: t_event, end: end.min(trace_end) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceMetrics {
    /// Peak |delta_f| in the window (mHz).
    pub overshoot_mhz: f64,
    /// Time from the event until |delta_f| stays inside the band; `None` if
    /// the last sample of the window is still outside it.
    pub settling_s: Option<f64>,
    /// Peak |RoCoF| in the window (Hz/s).
    pub peak_rocof: f64,
}

impl DisturbanceMetrics {
    /// Settling time with "did not settle" ranked last.
    pub fn settling_or_inf(&self) -> f64 {
        self.settling_s.unwrap_or(f64::INFINITY)
    }
}

pub fn disturbance_metrics(trace: &SimTrace, window: EventWindow, band: f64) -> Result<DisturbanceMetrics> {
    disturbance_metrics_with(trace, window, band, DEFAULT_ROCOF_WINDOW)
}

pub fn disturbance_metrics_with(
    trace: &SimTrace,
    window: EventWindow,
    band: f64,
    rocof_window: f64,
) -> Result<DisturbanceMetrics> {
    if !(band > 0.0) {
        return Err(Error::InvalidTrace(format!("settling band must be > 0, got {band}")));
    }
    let a = trace.index_at(window.start);
    let b = trace.index_at(window.end).min(trace.len());
    if a >= b {
        return Err(Error::InvalidTrace(format!(
            "empty window [{}, {}) for a trace of {} samples",
            window.start,
            window.end,
            trace.len()
        )));
    }
    let rows = &trace.rows[a..b];
    let overshoot_mhz = rows.iter().map(|r| r.delta_f.abs()).fold(0.0, f64::max) * 1000.0;
    let settling_s = match rows.iter().rposition(|r| r.delta_f.abs() > band) {
        None => Some(0.0),
        Some(last) if last + 1 == rows.len() => None,
        Some(last) => Some(rows[last + 1].t - window.start),
    };
    let rocof = rocof_series(trace, rocof_window)?;
    let peak_rocof = rocof[a..b].iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(DisturbanceMetrics { overshoot_mhz, settling_s, peak_rocof })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub metrics: DisturbanceMetrics,
}

/// Cross-method comparison, ordered by decreasing overshoot.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub window: EventWindow,
    pub band: f64,
    pub rows: Vec<ReportRow>,
}

pub fn comparison_report(traces: &[(String, &SimTrace)], window: EventWindow, band: f64) -> Result<ComparisonReport> {
    comparison_report_with(traces, window, band, DEFAULT_ROCOF_WINDOW)
}

pub fn comparison_report_with(
    traces: &[(String, &SimTrace)],
    window: EventWindow,
    band: f64,
    rocof_window: f64,
) -> Result<ComparisonReport> {
    let Some((_, first)) = traces.first() else {
        return Err(Error::InvalidTrace("no traces to compare".into()));
    };
    for (name, t) in traces {
        if t.dt != first.dt || t.len() != first.len() {
            return Err(Error::InvalidTrace(format!("trace `{name}` is on a different time grid")));
        }
    }
    let mut rows = traces
        .iter()
        .map(|(name, t)| {
            Ok(ReportRow { method: name.clone(), metrics: disturbance_metrics_with(t, window, band, rocof_window)? })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.metrics.overshoot_mhz.total_cmp(&a.metrics.overshoot_mhz));
    Ok(ComparisonReport { window, band, rows })
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let settling = r.metrics.settling_s.map_or_else(|| "inf".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{}", r.method, r.metrics.overshoot_mhz, settling, r.metrics.peak_rocof);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Disturbance window [{} s, {} s), settling band +-{} Hz\n\n",
            self.window.start, self.window.end, self.band
        );
        let _ = writeln!(s, "{:<16} {:>16} {:>14} {:>16}", "method", "overshoot (mHz)", "settling (s)", "peak RoCoF (Hz/s)");
        for r in &self.rows {
            let settling = r.metrics.settling_s.map_or_else(|| "not settled".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<16} {:>16.1} {:>14} {:>16.3}",
                r.method, r.metrics.overshoot_mhz, settling, r.metrics.peak_rocof
            );
        }
        s
    }
}
