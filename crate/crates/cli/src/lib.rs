//! Command implementations behind the `crossway` binary.

pub mod compare;

use clap::{Args, Parser, Subcommand};
use crossway_core::sim::sensitivity::{self, SensitivityScenario, DT_PRED_GRID};
use crossway_core::sim::{Mode, ScenarioConfig, Simulation};
use crossway_telemetry::{Server, ServerConfig, Session, TelemetryError, DEFAULT_DECIMATION, DEFAULT_PORT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "crossway", version, about = "Cooperative intersection corridor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario headless.
    Run(RunArgs),
    /// Run cooperative and signalized modes on the same spawn sequence.
    Compare(RunArgs),
    /// Sweep the prediction step of the motion estimator.
    Sweep(SweepArgs),
    /// Host a live session over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON; the built-in corridor when omitted.
    #[arg(long, env = "CROSSWAY_SCENARIO")]
    pub scenario: Option<PathBuf>,
    #[arg(long, env = "CROSSWAY_SEED")]
    pub seed: Option<u64>,
    /// cooperative or signalized
    #[arg(long, env = "CROSSWAY_MODE")]
    pub mode: Option<Mode>,
    /// Prediction step of the motion estimator, s.
    #[arg(long = "dt-pred", env = "CROSSWAY_DT_PRED")]
    pub dt_pred: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, env = "CROSSWAY_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Sensitivity scenario JSON; the built-in platoon when omitted.
    #[arg(long, env = "CROSSWAY_SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Run a single seed instead of the scenario's seed list.
    #[arg(long, env = "CROSSWAY_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated prediction steps, s.
    #[arg(long = "dt-pred", env = "CROSSWAY_DT_PRED")]
    pub dt_pred: Option<String>,
    #[arg(long, env = "CROSSWAY_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, env = "CROSSWAY_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CROSSWAY_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    /// Sim ticks per published snapshot.
    #[arg(long, env = "CROSSWAY_DECIMATION", default_value_t = DEFAULT_DECIMATION)]
    pub decimation: u32,
    #[arg(long, env = "CROSSWAY_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    PortBusy(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::PortBusy(_) => 4,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to reproduce a command; written after all other outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out_dir: PathBuf,
    /// Resolved scenario after overrides.
    pub scenario: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), contents)?;
        self.record(name, contents);
        Ok(())
    }

    fn record(&mut self, name: &str, contents: &[u8]) {
        self.artifacts.push(Artifact {
            file: name.to_owned(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        });
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(name, text.as_bytes())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.out_dir = self.dir.clone();
        manifest.artifacts = self.artifacts;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Loads the scenario file (or the default) and applies flag overrides.
pub fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(dt) = args.dt_pred {
        cfg.estimator.dt_pred = dt;
    }
    cfg.validate().map_err(|e| CliError::Schema(e.to_string()))?;
    Ok(cfg)
}

fn manifest(command: &str, args: Option<&ScenarioArgs>, cfg: &impl Serialize, seed: Option<u64>, mode: Option<Mode>) -> RunManifest {
    RunManifest {
        command: command.to_owned(),
        scenario_path: args.and_then(|a| a.scenario.clone()),
        seed,
        mode,
        out_dir: PathBuf::new(),
        scenario: serde_json::to_value(cfg).expect("scenario serializes"),
        artifacts: Vec::new(),
    }
}

fn check_safety(summary: &crossway_core::sim::metrics::Summary) -> Result<(), CliError> {
    let a = &summary.aggregates;
    if a.occupancy_overlaps > 0 || a.collisions > 0 {
        return Err(CliError::Invariant(format!(
            "{} mode seed {}: {} conflict-point overlaps, {} collisions",
            summary.mode, summary.seed, a.occupancy_overlaps, a.collisions
        )));
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<RunManifest, CliError> {
    let cfg = load_scenario(&args.scenario)?;
    let sim = Simulation::new(cfg.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    let result = sim.with_trace().run();
    let mut out = Outputs::create(&args.out)?;
    out.write("trace.csv", result.trace.as_deref().unwrap_or_default().as_bytes())?;
    out.write_json("summary.json", &result.summary)?;
    out.write_json("failsafe.json", &result.failsafe)?;
    let m = out.finish(manifest("run", Some(&args.scenario), &cfg, Some(cfg.seed), Some(cfg.mode)))?;
    check_safety(&result.summary)?;
    Ok(m)
}

pub fn cmd_compare(args: &RunArgs) -> Result<RunManifest, CliError> {
    let cfg = load_scenario(&args.scenario)?;
    let run = compare::compare_modes(&cfg, Mode::Signalized, Mode::Cooperative)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let mut out = Outputs::create(&args.out)?;
    out.write_json("compare.json", &run.comparison)?;
    let mut series = String::new();
    for (i, r) in [&run.candidate, &run.baseline].into_iter().enumerate() {
        let text = r.series.as_deref().unwrap_or_default();
        series.push_str(if i == 0 { text } else { text.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    out.write("speed_distance.csv", series.as_bytes())?;
    out.write_json("summary_cooperative.json", &run.candidate.summary)?;
    out.write_json("summary_signalized.json", &run.baseline.summary)?;
    let m = out.finish(manifest("compare", Some(&args.scenario), &cfg, Some(cfg.seed), None))?;
    check_safety(&run.candidate.summary)?;
    check_safety(&run.baseline.summary)?;
    Ok(m)
}

/// Parses a comma-separated dt_pred list; an empty list is an error.
pub fn parse_grid(text: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(text) = text else {
        return Ok(DT_PRED_GRID.to_vec());
    };
    let grid = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Schema(format!("dt_pred {s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if grid.is_empty() {
        return Err(CliError::Schema("empty dt_pred grid".into()));
    }
    Ok(grid)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<RunManifest, CliError> {
    let grid = parse_grid(args.dt_pred.as_deref())?;
    let mut sc = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
            SensitivityScenario::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        }
        None => SensitivityScenario::default(),
    };
    if let Some(seed) = args.seed {
        sc.seeds = vec![seed];
    }
    let rows = sensitivity::run_sensitivity(&sc, &grid).map_err(|e| CliError::Schema(e.to_string()))?;
    let mut out = Outputs::create(&args.out)?;
    out.write("sensitivity.csv", sensitivity::to_csv(&rows).as_bytes())?;
    let mut m = manifest("sweep", None, &sc, args.seed, Some(Mode::Cooperative));
    m.scenario_path = args.scenario.clone();
    out.finish(m)
}

pub fn cmd_serve(args: &ServeArgs) -> Result<RunManifest, CliError> {
    let cfg = load_scenario(&args.scenario)?;
    let session = Session::new(cfg.clone(), args.decimation).map_err(|e| CliError::Schema(e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    let trace_path = args.out.join("trace.csv");
    let rt = tokio::runtime::Runtime::new()?;
    let outcome = rt.block_on(async {
        let server = Server::bind(ServerConfig {
            host: args.host.clone(),
            port: args.port,
            decimation: args.decimation,
            trace_path: Some(trace_path.clone()),
            ..ServerConfig::default()
        })
        .await
        .map_err(|e| match e {
            TelemetryError::Bind { .. } => CliError::PortBusy(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        })?;
        println!("listening on ws://{}", server.local_addr());
        server
            .run(session, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    let mut out = Outputs::create(&args.out)?;
    if let Some(path) = &outcome.trace_written {
        let bytes = std::fs::read(path)?;
        out.record("trace.csv", &bytes);
    }
    out.finish(manifest("serve", Some(&args.scenario), &cfg, Some(cfg.seed), Some(cfg.mode)))
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(m) => {
            log::info!("{} finished, {} artifacts in {}", m.command, m.artifacts.len(), m.out_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
