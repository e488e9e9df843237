//! Bill-of-materials, cost and power models for electrical versus optical
//! circuit-switched rail fabrics, plus the OCS scalability table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{max_gpus, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("invalid econ config: {0}")]
    InvalidConfig(String),
    #[error("OCS radix exceeded: {demand} ports per rail, radix {radix}")]
    RadixExceeded { demand: u64, radix: u64 },
}

/// Unit prices and power draws. Costs are in one currency, power in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconConfig {
    pub switch_cost: f64,
    pub switch_radix: u64,
    pub switch_port_power_w: f64,
    pub transceiver_cost: f64,
    pub transceiver_power_w: f64,
    pub ocs_port_cost: f64,
    pub ocs_chassis_power_w: f64,
    pub ocs_radix: u64,
}

impl EconConfig {
    pub fn validate(&self) -> Result<(), EconError> {
        let values = [
            ("switch_cost", self.switch_cost),
            ("switch_port_power_w", self.switch_port_power_w),
            ("transceiver_cost", self.transceiver_cost),
            ("transceiver_power_w", self.transceiver_power_w),
            ("ocs_port_cost", self.ocs_port_cost),
            ("ocs_chassis_power_w", self.ocs_chassis_power_w),
        ];
        for (name, v) in values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EconError::InvalidConfig(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.switch_radix < 2 {
            return Err(EconError::InvalidConfig(format!("switch_radix must be >= 2, got {}", self.switch_radix)));
        }
        if self.ocs_radix < 1 {
            return Err(EconError::InvalidConfig("ocs_radix must be >= 1".into()));
        }
        Ok(())
    }

    pub fn switch_power_w(&self) -> f64 {
        self.switch_radix as f64 * self.switch_port_power_w
    }

    pub fn from_toml(text: &str) -> Result<Self, EconError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EconError::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reference unit values, shipped as `scenarios/econ_reference.toml`.
pub const REFERENCE_CONFIG_TOML: &str = include_str!("../scenarios/econ_reference.toml");

pub fn reference_config() -> EconConfig {
    EconConfig::from_toml(REFERENCE_CONFIG_TOML).expect("shipped reference config is valid")
}

/// The part of a topology that determines the fabric size. Unlike
/// [`Topology`], zero domains is allowed and yields an empty fabric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricShape {
    pub domains: u64,
    pub rails: u64,
    pub ports_per_gpu: u64,
}

impl FabricShape {
    /// NIC ports attached to one rail.
    pub fn ports_per_rail(&self) -> u64 {
        self.domains * self.ports_per_gpu
    }

    pub fn gpus(&self) -> u64 {
        self.domains * self.rails
    }
}

/// DGX H200 reference scale: 8 rails, 2-port NICs, and as many domains as a
/// 576-port OCS hosts per rail (2304 GPUs).
pub const REFERENCE_SHAPE: FabricShape = FabricShape { domains: 288, rails: 8, ports_per_gpu: 2 };

impl From<&Topology> for FabricShape {
    fn from(t: &Topology) -> Self {
        Self {
            domains: t.num_domains() as u64,
            rails: t.num_rails() as u64,
            ports_per_gpu: u64::from(t.nic().ports()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Component {
    Switch,
    Transceiver,
    OcsPort,
    OcsChassis,
}

impl Component {
    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Switch => "switch",
            Component::Transceiver => "transceiver",
            Component::OcsPort => "ocs_port",
            Component::OcsChassis => "ocs_chassis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BomLine {
    pub component: Component,
    pub count: u64,
    pub unit_cost: f64,
    pub unit_power_w: f64,
}

impl BomLine {
    pub fn cost(&self) -> f64 {
        self.count as f64 * self.unit_cost
    }

    pub fn power_w(&self) -> f64 {
        self.count as f64 * self.unit_power_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bom {
    pub fabric: &'static str,
    /// Switching tiers per rail; 0 for an empty fabric.
    pub tiers: u32,
    pub lines: Vec<BomLine>,
}

impl Bom {
    pub fn count(&self, c: Component) -> u64 {
        self.lines.iter().filter(|l| l.component == c).map(|l| l.count).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.lines.iter().map(BomLine::cost).sum()
    }

    pub fn total_power_w(&self) -> f64 {
        self.lines.iter().map(BomLine::power_w).sum()
    }
}

/// Non-oversubscribed folded Clos for `n` endpoint ports built from
/// radix-`r` switches. Returns (tiers, switches).
///
/// One tier holds `r` endpoints; each extra tier multiplies capacity by
/// `r/2`. Every tier below the top has `ceil(n / (r/2))` switches, the top
/// tier has `ceil(n / r)`.
pub fn clos_size(n: u64, r: u64) -> (u32, u64) {
    if n == 0 {
        return (0, 0);
    }
    if n <= r {
        return (1, 1);
    }
    let half = r / 2;
    let mut tiers = 2u32;
    let mut capacity = r.saturating_mul(half);
    while capacity < n {
        tiers += 1;
        capacity = capacity.saturating_mul(half);
    }
    let lower = n.div_ceil(half);
    let top = n.div_ceil(r);
    (tiers, u64::from(tiers - 1) * lower + top)
}

/// Packet-switched rails: one Clos per rail. Each link layer carries one link
/// per endpoint port, with a transceiver at both ends.
pub fn electrical_fabric_bom(shape: &FabricShape, econ: &EconConfig) -> Bom {
    let n = shape.ports_per_rail();
    let (tiers, per_rail) = clos_size(n, econ.switch_radix);
    let switches = per_rail * shape.rails;
    let transceivers = 2 * n * u64::from(tiers) * shape.rails;
    Bom {
        fabric: "electrical",
        tiers,
        lines: vec![
            BomLine {
                component: Component::Switch,
                count: switches,
                unit_cost: econ.switch_cost,
                unit_power_w: econ.switch_power_w(),
            },
            BomLine {
                component: Component::Transceiver,
                count: transceivers,
                unit_cost: econ.transceiver_cost,
                unit_power_w: econ.transceiver_power_w,
            },
        ],
    }
}

/// Flat OCS rails: one chassis per rail, one OCS port and one NIC-side
/// transceiver per NIC port. The light path is end to end, so there are no
/// switch-side transceivers.
pub fn ocs_fabric_bom(shape: &FabricShape, econ: &EconConfig) -> Result<Bom, EconError> {
    let n = shape.ports_per_rail();
    if n > econ.ocs_radix {
        return Err(EconError::RadixExceeded { demand: n, radix: econ.ocs_radix });
    }
    let ports = n * shape.rails;
    let chassis = if n == 0 { 0 } else { shape.rails };
    Ok(Bom {
        fabric: "ocs",
        tiers: u32::from(n > 0),
        lines: vec![
            BomLine { component: Component::OcsPort, count: ports, unit_cost: econ.ocs_port_cost, unit_power_w: 0.0 },
            BomLine {
                component: Component::OcsChassis,
                count: chassis,
                unit_cost: 0.0,
                unit_power_w: econ.ocs_chassis_power_w,
            },
            BomLine {
                component: Component::Transceiver,
                count: ports,
                unit_cost: econ.transceiver_cost,
                unit_power_w: econ.transceiver_power_w,
            },
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub electrical: Bom,
    pub ocs: Bom,
}

impl Comparison {
    pub fn new(shape: &FabricShape, econ: &EconConfig) -> Result<Self, EconError> {
        Ok(Self { electrical: electrical_fabric_bom(shape, econ), ocs: ocs_fabric_bom(shape, econ)? })
    }

    /// Fraction of the electrical cost saved by the OCS fabric; 0 when the
    /// electrical fabric costs nothing.
    pub fn cost_saving(&self) -> f64 {
        saving(self.electrical.total_cost(), self.ocs.total_cost())
    }

    pub fn power_saving(&self) -> f64 {
        saving(self.electrical.total_power_w(), self.ocs.total_power_w())
    }
}

fn saving(base: f64, new: f64) -> f64 {
    if base > 0.0 {
        1.0 - new / base
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcsTech {
    pub name: &'static str,
    pub reconfig_ms: f64,
    pub radix: u64,
}

pub const OCS_TECHS: [OcsTech; 7] = [
    OcsTech { name: "PLZT (EpiPhotonics)", reconfig_ms: 0.00001, radix: 16 },
    OcsTech { name: "SiP (Lightmatter)", reconfig_ms: 0.007, radix: 32 },
    OcsTech { name: "RotorNet (InFocus)", reconfig_ms: 0.01, radix: 128 },
    OcsTech { name: "3D MEMS (Calient)", reconfig_ms: 15.0, radix: 320 },
    OcsTech { name: "Piezo (Polatis)", reconfig_ms: 25.0, radix: 576 },
    OcsTech { name: "Liquid crystal (Coherent)", reconfig_ms: 100.0, radix: 512 },
    OcsTech { name: "Robotic (Telescent)", reconfig_ms: 120000.0, radix: 1008 },
];

/// Scale-up domain sizes used as table columns.
pub const SCALEUP_SIZES: [(&str, u64); 2] = [("GB200", 72), ("H200", 8)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalabilityRow {
    pub tech: String,
    pub reconfig_ms: f64,
    pub radix: u64,
    /// One entry per scale-up size, in input order.
    pub max_gpus: Vec<u64>,
}

pub fn scalability_table(scaleup_sizes: &[(&str, u64)], techs: &[OcsTech]) -> Vec<ScalabilityRow> {
    techs
        .iter()
        .map(|t| ScalabilityRow {
            tech: t.name.to_string(),
            reconfig_ms: t.reconfig_ms,
            radix: t.radix,
            max_gpus: scaleup_sizes.iter().map(|&(_, s)| max_gpus(s, t.radix)).collect(),
        })
        .collect()
}

pub fn write_bom_csv<W: std::io::Write>(boms: &[&Bom], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fabric", "component", "count", "unit_cost", "unit_power_w", "cost", "power_w"])?;
    for bom in boms {
        for l in &bom.lines {
            w.write_record([
                bom.fabric.to_string(),
                l.component.as_str().to_string(),
                l.count.to_string(),
                l.unit_cost.to_string(),
                l.unit_power_w.to_string(),
                l.cost().to_string(),
                l.power_w().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_csv<W: std::io::Write>(
    rows: &[ScalabilityRow],
    scaleup_sizes: &[(&str, u64)],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tech".to_string(), "reconfig_ms".to_string(), "radix".to_string()];
    header.extend(scaleup_sizes.iter().map(|(name, _)| format!("gpus_{name}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.tech.clone(), r.reconfig_ms.to_string(), r.radix.to_string()];
        rec.extend(r.max_gpus.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
