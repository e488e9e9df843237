//! The `opus` command line: trace generation, window analysis, simulation,
//! delay sweeps and cost reports.

mod scenario;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use scenario::{ControlSection, Scenario, WindowsSection, DEFAULT_DELAYS_S};

use crate::control::{ControlError, ControlPolicy};
use crate::econ::{
    reference_config, scalability_table, write_bom_csv, write_table_csv, Comparison, EconConfig, EconError,
    FabricShape, OCS_TECHS, REFERENCE_SHAPE, SCALEUP_SIZES,
};
use crate::fabric::{
    simulate_with, sweep_delay, sweep_svg, write_reconfig_csv, write_sweep_csv, write_timeline_csv, FabricError,
    SimOptions,
};
use crate::model::ModelError;
use crate::windows::{
    analyze, classify_by_volume, timeline_from_observed, window_cdf, write_cdf_csv, write_windows_csv,
    WindowError,
};
use crate::workload::{write_trace, WorkloadError};

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Infeasible(_) => "infeasible",
            CliError::Io(_) => "io",
        }
    }

    /// Single-line form written to stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: kind={} code={} msg={}", self.kind(), self.exit_code(), msg.trim())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::RadixExceeded { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Io(e) => CliError::Io(e.to_string()),
            WorkloadError::Model(e) => e.into(),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<FabricError> for CliError {
    fn from(e: FabricError) -> Self {
        match e {
            FabricError::Control(ControlError::DegreeInfeasible { .. }) => CliError::Infeasible(e.to_string()),
            FabricError::Model(e) => e.into(),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<WindowError> for CliError {
    fn from(e: WindowError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EconError> for CliError {
    fn from(e: EconError) -> Self {
        match e {
            EconError::RadixExceeded { .. } => CliError::Infeasible(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "opus", version, about = "Optical rail fabric simulator and analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a training-iteration trace from a scenario's workload section.
    Gen(GenArgs),
    /// Extract idle windows between parallelism phases.
    Windows(WindowsArgs),
    /// Simulate one iteration and write its timeline and reconfiguration log.
    Sim(SimArgs),
    /// Simulate across reconfiguration delays for both control policies.
    Sweep(SweepArgs),
    /// Bill of materials, cost and power for electrical versus OCS rails.
    Econ(EconArgs),
    /// GPU scalability of OCS technologies per scale-up domain size.
    Table4(TableArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, short)]
    pub scenario: PathBuf,
    /// Replace the scenario's workload with this trace file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Overrides the scenario seed and OPUS_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-step collective latency in seconds.
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, CliError> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(t) = &self.trace {
            s.trace = Some(t.clone());
            s.workload = None;
        }
        if let Some(a) = self.alpha {
            s.control.alpha_s = a;
        }
        s.resolve_seed(self.seed)?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output trace path.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowsArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Volume class edges in bytes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub edges: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// on-demand or provisioning.
    #[arg(long)]
    pub policy: Option<String>,
    /// Reconfiguration delay in seconds.
    #[arg(long)]
    pub delay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Delays in seconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub delays: Option<Vec<f64>>,
    /// Evaluate sweep points concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct EconArgs {
    /// Econ config (TOML); the shipped reference values when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Take the fabric size from this scenario's topology.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn parse_policy(s: &str) -> Result<ControlPolicy, CliError> {
    ControlPolicy::parse(s).ok_or_else(|| CliError::Config(format!("unknown policy `{s}` (on-demand or provisioning)")))
}

fn options(s: &Scenario) -> Result<SimOptions, CliError> {
    if !(s.control.alpha_s >= 0.0) {
        return Err(CliError::Config(format!("alpha_s must be >= 0, got {}", s.control.alpha_s)));
    }
    Ok(SimOptions { alpha_s: s.control.alpha_s })
}

fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = args.scenario.load()?;
    let topo = s.topology()?;
    let dag = s.dag(&topo)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    write_trace(&dag, BufWriter::new(f))?;
    writeln!(out, "wrote {} events to {}", dag.len(), args.out.display())?;
    Ok(())
}

fn cmd_windows(args: &WindowsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = args.scenario.load()?;
    let topo = s.topology()?;
    let dag = s.dag(&topo)?;
    let edges = args.edges.clone().unwrap_or_else(|| s.windows.class_edges.clone());
    // measured timings when the trace has them, otherwise the electrical baseline
    let timeline = match timeline_from_observed(&dag) {
        Some(t) => t,
        None => simulate_with(&dag, &topo.electrical_baseline(), ControlPolicy::OnDemand, &options(&s)?)?.event_times,
    };
    let report = analyze(&dag, &timeline, topo.num_rails())?;
    write_windows_csv(&report.windows, &edges, create(&args.out_dir, "windows.csv")?)?;
    if report.windows.is_empty() {
        write_cdf_csv(&[], create(&args.out_dir, "cdf.csv")?)?;
        writeln!(out, "no windows: no rail has two consecutive parallelism phases")?;
        return Ok(());
    }
    write_cdf_csv(&window_cdf(&report.windows)?, create(&args.out_dir, "cdf.csv")?)?;
    let n = report.windows.len();
    let over = report.windows.iter().filter(|w| w.size > 1e-3).count();
    writeln!(out, "windows: {n}")?;
    writeln!(out, "overlaps: {}", report.overlaps.len())?;
    writeln!(out, "fraction > 1 ms: {:.4}", over as f64 / n as f64)?;
    for c in classify_by_volume(&report.windows, &edges)? {
        if c.count > 0 {
            writeln!(
                out,
                "class {}: count {} mean {:.6} s min {:.6} s max {:.6} s",
                c.label, c.count, c.mean_s, c.min_s, c.max_s
            )?;
        }
    }
    Ok(())
}

fn cmd_sim(args: &SimArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = args.scenario.load()?;
    let mut topo = s.topology()?;
    if let Some(d) = args.delay {
        if !(d >= 0.0) {
            return Err(CliError::Config(format!("delay must be >= 0, got {d}")));
        }
        topo = topo.with_reconfig_delay(d)?;
    }
    let policy = match &args.policy {
        Some(p) => parse_policy(p)?,
        None => s.control.policy(),
    };
    let dag = s.dag(&topo)?;
    let r = simulate_with(&dag, &topo, policy, &options(&s)?)?;
    write_timeline_csv(&r.event_times, create(&args.out_dir, "timeline.csv")?)?;
    write_reconfig_csv(&r.reconfig_log, create(&args.out_dir, "reconfig.csv")?)?;
    writeln!(out, "policy: {}", policy.as_str())?;
    writeln!(out, "reconfig delay: {} s", topo.rail_switch().reconfig_delay_s())?;
    writeln!(out, "makespan: {:.6} s", r.makespan)?;
    writeln!(out, "baseline makespan: {:.6} s", r.baseline_makespan)?;
    writeln!(out, "overhead: {:.4}%", (r.overhead_vs_baseline - 1.0) * 100.0)?;
    writeln!(out, "reconfigurations: {}", r.reconfig_log.len())?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = args.scenario.load()?;
    let topo = s.topology()?;
    if !topo.rail_switch().is_ocs() {
        return Err(CliError::Config("sweep needs OCS rails (topology.rail_switch.kind = \"ocs\")".into()));
    }
    let delays = args.delays.clone().unwrap_or_else(|| s.control.delays_s.clone());
    let dag = s.dag(&topo)?;
    let policies = [ControlPolicy::OnDemand, ControlPolicy::Provisioning];
    let rows = sweep_delay(&dag, &topo, &delays, &policies, &options(&s)?, args.parallel)?;
    write_sweep_csv(&rows, create(&args.out_dir, "sweep.csv")?)?;
    let mut svg = create(&args.out_dir, "sweep.svg")?;
    svg.write_all(sweep_svg(&rows).as_bytes())?;
    svg.flush()?;
    for r in &rows {
        writeln!(
            out,
            "delay {:>8.4} s  {:<12}  makespan {:.6} s  overhead {:.4}%",
            r.delay_s,
            r.policy.as_str(),
            r.makespan_s,
            (r.overhead - 1.0) * 100.0
        )?;
    }
    Ok(())
}

fn cmd_econ(args: &EconArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, source): (EconConfig, String) = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let cfg: EconConfig = scenario::parse_toml(&text, p)?;
            cfg.validate()?;
            (cfg, p.display().to_string())
        }
        None => (reference_config(), "built-in reference (scenarios/econ_reference.toml)".into()),
    };
    let shape = match &args.scenario {
        Some(p) => {
            let s = Scenario::load(p)?;
            FabricShape::from(&s.topology()?)
        }
        None => REFERENCE_SHAPE,
    };
    let cmp = Comparison::new(&shape, &cfg)?;
    write_bom_csv(&[&cmp.electrical, &cmp.ocs], create(&args.out_dir, "bom.csv")?)?;
    let table = scalability_table(&SCALEUP_SIZES, &OCS_TECHS);
    write_table_csv(&table, &SCALEUP_SIZES, create(&args.out_dir, "table4.csv")?)?;
    writeln!(out, "econ config: {source}")?;
    writeln!(
        out,
        "fabric: {} domains x {} rails, {} NIC ports per GPU ({} GPUs)",
        shape.domains,
        shape.rails,
        shape.ports_per_gpu,
        shape.gpus()
    )?;
    for bom in [&cmp.electrical, &cmp.ocs] {
        writeln!(
            out,
            "{}: tiers {} cost {:.2} power {:.2} W",
            bom.fabric,
            bom.tiers,
            bom.total_cost(),
            bom.total_power_w()
        )?;
    }
    writeln!(out, "cost saving: {:.2}%", cmp.cost_saving() * 100.0)?;
    writeln!(out, "power saving: {:.2}%", cmp.power_saving() * 100.0)?;
    Ok(())
}

fn cmd_table4(args: &TableArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let table = scalability_table(&SCALEUP_SIZES, &OCS_TECHS);
    write_table_csv(&table, &SCALEUP_SIZES, create(&args.out_dir, "table4.csv")?)?;
    write!(out, "{:<28}{:>14}{:>8}", "tech", "reconfig (ms)", "radix")?;
    for (name, _) in SCALEUP_SIZES {
        write!(out, "{:>10}", name)?;
    }
    writeln!(out)?;
    for r in &table {
        write!(out, "{:<28}{:>14}{:>8}", r.tech, r.reconfig_ms, r.radix)?;
        for g in &r.max_gpus {
            write!(out, "{g:>10}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Windows(a) => cmd_windows(a, out),
        Command::Sim(a) => cmd_sim(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Econ(a) => cmd_econ(a, out),
        Command::Table4(a) => cmd_table4(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Config(first).line());
            return 2;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
