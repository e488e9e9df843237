use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;
use crate::control::ControlPolicy;
use crate::econ::EconConfig;
use crate::fabric::DEFAULT_ALPHA_S;
use crate::model::{build_topology, Topology, TopologySpec};
use crate::windows::DEFAULT_CLASS_EDGES;
use crate::workload::{generate_3d_schedule, load_trace, EventDag, WorkloadParams};

pub const DEFAULT_DELAYS_S: [f64; 7] = [0.0, 0.001, 0.005, 0.01, 0.025, 0.05, 0.1];

fn default_delays() -> Vec<f64> {
    DEFAULT_DELAYS_S.to_vec()
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA_S
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "default_true")]
    pub provisioning: bool,
    #[serde(default = "default_delays")]
    pub delays_s: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha_s: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { provisioning: true, delays_s: default_delays(), alpha_s: DEFAULT_ALPHA_S }
    }
}

impl ControlSection {
    pub fn policy(&self) -> ControlPolicy {
        if self.provisioning {
            ControlPolicy::Provisioning
        } else {
            ControlPolicy::OnDemand
        }
    }
}

fn default_edges() -> Vec<u64> {
    DEFAULT_CLASS_EDGES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowsSection {
    #[serde(default = "default_edges")]
    pub class_edges: Vec<u64>,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self { class_edges: default_edges() }
    }
}

/// One experiment: a fabric, a workload (generated or replayed), and the
/// control and analysis settings applied to it.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: Option<u64>,
    pub topology: TopologySpec,
    pub workload: Option<WorkloadParams>,
    /// Trace file; relative paths resolve against the scenario file.
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub windows: WindowsSection,
    pub econ: Option<EconConfig>,
}

/// Maps a byte offset in `text` to a 1-based line number.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub(super) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| {
        let at = e.span().map(|s| format!(" line {}", line_of(text, s.start))).unwrap_or_default();
        CliError::Config(format!("{}:{at}: {}", origin.display(), e.message()))
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut s: Scenario = parse_toml(&text, path)?;
        if let Some(t) = &s.trace {
            if t.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                s.trace = Some(base.join(t));
            }
        }
        s.check()?;
        Ok(s)
    }

    /// Parses scenario text; a relative trace path stays relative to the
    /// working directory.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let s: Scenario = parse_toml(text, Path::new("<scenario>"))?;
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), CliError> {
        match (&self.workload, &self.trace) {
            (Some(_), Some(_)) => Err(CliError::Config("scenario sets both [workload] and trace".into())),
            (None, None) => Err(CliError::Config("scenario needs either [workload] or trace".into())),
            _ => Ok(()),
        }
    }

    /// Applies the seed override order: explicit flag, then `OPUS_SEED`, then
    /// the scenario's own seed.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        let env = match std::env::var("OPUS_SEED") {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Config(format!("OPUS_SEED must be an unsigned integer, got `{v}`")))?,
            ),
            Err(_) => None,
        };
        if let Some(seed) = flag.or(env).or(self.seed) {
            self.seed = Some(seed);
            if let Some(w) = &mut self.workload {
                w.seed = seed;
            }
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        Ok(build_topology(&self.topology)?)
    }

    pub fn dag(&self, topo: &Topology) -> Result<EventDag, CliError> {
        match (&self.workload, &self.trace) {
            (Some(w), _) => Ok(generate_3d_schedule(w, topo)?),
            (None, Some(path)) => Ok(load_trace(path, topo)?),
            (None, None) => Err(CliError::Config("scenario needs either [workload] or trace".into())),
        }
    }
}
