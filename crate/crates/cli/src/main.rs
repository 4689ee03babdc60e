//! `vsgsim`: run scenarios, compare controllers and serve controllers over UDP.
//!
//! Exit codes: 0 success, 1 numeric or runtime failure, 2 usage or
//! configuration error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vsg_core::hil::{HilServer, ServeOptions};
use vsg_core::metrics::comparison_report_with;
use vsg_core::scenario::BUILTIN;
use vsg_core::{ConstraintFlags, ControllerKind, Error, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "vsgsim", version, about = "Microgrid frequency simulation with adaptive VSG control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one controller; writes a trace CSV and a metadata sidecar.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_parser = parse_kind)]
        controller: Option<ControllerKind>,
        /// Write the trained network here after an FNNC run.
        #[arg(long, value_name = "PATH")]
        save_fnn: Option<PathBuf>,
    },
    /// Run several controllers on the same disturbance stream and report metrics.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated controller list.
        #[arg(long, value_parser = parse_kind, value_delimiter = ',')]
        methods: Vec<ControllerKind>,
        /// Start of the analysed disturbance window (s).
        #[arg(long, value_name = "SECONDS")]
        event: Option<f64>,
        /// Settling band (Hz).
        #[arg(long)]
        band: Option<f64>,
        /// RoCoF smoothing window (s).
        #[arg(long)]
        rocof_window: Option<f64>,
    },
    /// Answer tick frames from a remote simulator with a local controller.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        controller: Option<ControllerKind>,
        #[arg(long, default_value = "127.0.0.1:9000")]
        listen: String,
        /// Delay added before every reply.
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
        #[arg(long)]
        dt: Option<f64>,
        #[command(flatten)]
        fnn: FnnArgs,
    },
    /// List the builtin scenarios.
    ListScenarios,
}

#[derive(Args)]
struct SimArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin scenario id (see list-scenarios).
    #[arg(long)]
    scenario: Option<String>,
    /// Custom scenario in TOML.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Replace the scenario's constraint set (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    constraints: Vec<Constraint>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pace ticks to wall-clock time.
    #[arg(long)]
    realtime: bool,
    /// host:port of a controller server, for `--controller remote`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Probability of dropping each tick frame sent to the endpoint.
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    loss_seed: Option<u64>,
    #[command(flatten)]
    fnn: FnnArgs,
}

#[derive(Args)]
struct FnnArgs {
    #[arg(long)]
    lr_weights: Option<f64>,
    #[arg(long)]
    lr_centers: Option<f64>,
    #[arg(long)]
    lr_widths: Option<f64>,
    /// Weight of the error term in the output delta.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    /// Seed for random initial weights (default: neutral zero weights).
    #[arg(long)]
    init_seed: Option<u64>,
    /// Start the FNNC from a saved network; its own hyperparameters apply.
    #[arg(long, value_name = "PATH")]
    fnn_init: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Constraint {
    None,
    Physical,
    Delay,
    All,
}

fn parse_kind(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Errors from bad input, reported with exit code 2.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    UsageError(e.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { sim, controller, save_fnn } => {
            let mut cfg = load_config(sim.config.as_deref())?;
            apply_sim(&mut cfg, &sim);
            if let Some(kind) = controller {
                cfg.controller = kind;
            }
            cmd_run(&cfg, save_fnn.as_deref())
        }
        Command::Compare { sim, methods, event, band, rocof_window } => {
            let mut cfg = load_config(sim.config.as_deref())?;
            apply_sim(&mut cfg, &sim);
            if !methods.is_empty() {
                cfg.methods = methods;
            }
            cfg.event_time = event.or(cfg.event_time);
            cfg.band = band.unwrap_or(cfg.band);
            cfg.rocof_window = rocof_window.unwrap_or(cfg.rocof_window);
            cmd_compare(&cfg)
        }
        Command::Serve { config, controller, listen, latency_ms, dt, fnn } => {
            let mut cfg = load_config(config.as_deref())?;
            apply_fnn(&mut cfg, &fnn);
            cfg.dt = dt.or(cfg.dt);
            if let Some(kind) = controller {
                cfg.controller = kind;
            }
            cmd_serve(&cfg, &listen, Duration::from_millis(latency_ms))
        }
        Command::ListScenarios => {
            for (id, about) in BUILTIN {
                println!("{id:<10} {about}");
            }
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn apply_sim(cfg: &mut RunConfig, a: &SimArgs) {
    if let Some(id) = &a.scenario {
        cfg.scenario = id.clone();
        cfg.scenario_file = None;
        cfg.scenario_spec = None;
    }
    if let Some(path) = &a.scenario_file {
        cfg.scenario_file = Some(path.clone());
        cfg.scenario_spec = None;
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.dt = a.dt.or(cfg.dt);
    cfg.duration = a.duration.or(cfg.duration);
    if !a.constraints.is_empty() {
        let mut flags = ConstraintFlags::default();
        for c in &a.constraints {
            match c {
                Constraint::None => {}
                Constraint::Physical => flags.physical = true,
                Constraint::Delay => flags.delay = true,
                Constraint::All => flags = ConstraintFlags { physical: true, delay: true },
            }
        }
        cfg.constraints = Some(flags);
    }
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    cfg.realtime |= a.realtime;
    if let Some(e) = &a.endpoint {
        cfg.hil.endpoint = Some(e.clone());
    }
    cfg.hil.timeout_ms = a.timeout_ms.unwrap_or(cfg.hil.timeout_ms);
    cfg.hil.loss = a.loss.unwrap_or(cfg.hil.loss);
    cfg.hil.loss_seed = a.loss_seed.unwrap_or(cfg.hil.loss_seed);
    apply_fnn(cfg, &a.fnn);
}

fn apply_fnn(cfg: &mut RunConfig, a: &FnnArgs) {
    let h = &mut cfg.fnn;
    h.lr_weights = a.lr_weights.unwrap_or(h.lr_weights);
    h.lr_centers = a.lr_centers.unwrap_or(h.lr_centers);
    h.lr_widths = a.lr_widths.unwrap_or(h.lr_widths);
    h.a = a.a.unwrap_or(h.a);
    h.sigma_min = a.sigma_min.unwrap_or(h.sigma_min);
    h.init_seed = a.init_seed.or(h.init_seed);
    if let Some(p) = &a.fnn_init {
        cfg.fnn_init = Some(p.clone());
    }
}

/// Runtime errors keep exit code 1; everything else is a usage error.
fn classify(e: Error) -> anyhow::Error {
    match e {
        Error::Divergence { .. } | Error::TrainingDivergence { .. } | Error::Io(_) | Error::MalformedFrame(_) => e.into(),
        other => usage(other),
    }
}

fn cmd_run(cfg: &RunConfig, save_fnn: Option<&Path>) -> anyhow::Result<()> {
    let resolved = cfg.resolve().map_err(usage)?;
    let kind = cfg.controller;
    let mut controller = cfg.build_controller(kind, &resolved).map_err(classify)?;
    let outcome = vsg_core::run(&resolved.spec, &resolved.plant, controller.as_mut(), RunOptions { realtime: cfg.realtime })
        .map_err(classify)?;
    let trained = match save_fnn {
        Some(path) => match controller.fnn_state() {
            Some(state) => Some((path, state.to_text())),
            None => return Err(usage(anyhow!("--save-fnn needs the fnnc controller, not {kind}"))),
        },
        None => None,
    };
    let sidecar = cfg.sidecar(kind, &resolved, &outcome).map_err(classify)?;

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let stem = cfg.output_stem(&resolved.spec, kind);
    let csv = cfg.out_dir.join(format!("{stem}.csv"));
    write(&csv, &outcome.trace.to_csv())?;
    write(&cfg.out_dir.join(format!("{stem}.meta.toml")), &sidecar)?;
    if let Some((path, text)) = trained {
        write(path, &text)?;
    }
    println!("{}", csv.display());
    if outcome.frames_lost > 0 {
        eprintln!("{} frames lost; previous parameters held", outcome.frames_lost);
    }
    Ok(())
}

fn cmd_compare(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.methods.is_empty() {
        return Err(usage(anyhow!("compare needs at least one method")));
    }
    let resolved = cfg.resolve().map_err(usage)?;
    let mut runs = Vec::with_capacity(cfg.methods.len());
    for &kind in &cfg.methods {
        let outcome = cfg.execute(kind, &resolved).map_err(classify).with_context(|| format!("method {kind}"))?;
        let sidecar = cfg.sidecar(kind, &resolved, &outcome).map_err(classify)?;
        runs.push((kind, outcome, sidecar));
    }
    let window = cfg.event_window(&resolved.spec, &runs[0].1.trace).map_err(usage)?;
    let named: Vec<(String, &vsg_core::SimTrace)> = runs.iter().map(|(k, o, _)| (k.to_string(), &o.trace)).collect();
    let report = comparison_report_with(&named, window, cfg.band, cfg.rocof_window).map_err(classify)?;

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    for (kind, outcome, sidecar) in &runs {
        let stem = cfg.output_stem(&resolved.spec, *kind);
        write(&cfg.out_dir.join(format!("{stem}.csv")), &outcome.trace.to_csv())?;
        write(&cfg.out_dir.join(format!("{stem}.meta.toml")), sidecar)?;
    }
    let stem = cfg.output_stem(&resolved.spec, ControllerKind::Fixed).replacen("_fixed_", "_compare_", 1);
    write(&cfg.out_dir.join(format!("{stem}.report.csv")), &report.to_csv())?;
    let text = report.to_text();
    write(&cfg.out_dir.join(format!("{stem}.report.txt")), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_serve(cfg: &RunConfig, listen: &str, latency: Duration) -> anyhow::Result<()> {
    if cfg.controller == ControllerKind::Remote {
        return Err(usage(anyhow!("serve needs a local controller")));
    }
    let resolved = cfg.resolve().map_err(usage)?;
    let controller = cfg.build_controller(cfg.controller, &resolved).map_err(classify)?;
    let mut server = HilServer::bind(listen, controller, ServeOptions { latency })
        .with_context(|| format!("binding {listen}"))?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on {} ({})", server.local_addr()?, cfg.controller)?;
    stdout.flush()?;
    let stats = server.serve()?;
    eprintln!("answered {}, malformed {}", stats.answered, stats.malformed);
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
