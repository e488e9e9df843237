//! Physical and logical fabric types: scale-up domains, rails, NIC port
//! layouts, communication groups and the OCS scalability formula.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RankId = usize;
pub type RailId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("OCS radix exceeded on rail {rail}: {demand} ports demanded, radix {radix}")]
    RadixExceeded { rail: RailId, demand: u64, radix: u32 },
    #[error("invalid NIC configuration: {0} ports (expected 1, 2 or 4)")]
    InvalidNicConfig(u32),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("rank {rank} is not a member of group {group}")]
    NotMember { group: GroupId, rank: RankId },
    #[error("invalid group {group}: {reason}")]
    InvalidGroup { group: GroupId, reason: String },
}

/// Logical port layout of one GPU's NIC. The aggregate bandwidth is the same
/// for every layout of a given NIC model (1x400G = 2x200G = 4x100G).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NicPortConfig {
    ports: u32,
    per_port_bandwidth_bps: f64,
}

impl NicPortConfig {
    pub fn new(ports: u32, per_port_bandwidth_bps: f64) -> Result<Self, ModelError> {
        if !matches!(ports, 1 | 2 | 4) {
            return Err(ModelError::InvalidNicConfig(ports));
        }
        if !(per_port_bandwidth_bps > 0.0) {
            return Err(ModelError::InvalidTopology(format!(
                "per-port bandwidth must be positive, got {per_port_bandwidth_bps}"
            )));
        }
        Ok(Self { ports, per_port_bandwidth_bps })
    }

    /// Splits a NIC of `total_bps` aggregate bandwidth into `ports` logical ports.
    pub fn split(total_bps: f64, ports: u32) -> Result<Self, ModelError> {
        Self::new(ports, total_bps / f64::from(ports.max(1)))
    }

    pub fn ports(&self) -> u32 {
        self.ports
    }

    pub fn per_port_bandwidth_bps(&self) -> f64 {
        self.per_port_bandwidth_bps
    }

    pub fn total_bandwidth_bps(&self) -> f64 {
        f64::from(self.ports) * self.per_port_bandwidth_bps
    }

    pub fn total_bandwidth_bytes_per_s(&self) -> f64 {
        self.total_bandwidth_bps() / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RailSwitch {
    Electrical,
    Ocs { reconfig_delay_s: f64, radix: u32 },
}

impl RailSwitch {
    pub fn is_ocs(&self) -> bool {
        matches!(self, RailSwitch::Ocs { .. })
    }

    pub fn reconfig_delay_s(&self) -> f64 {
        match self {
            RailSwitch::Electrical => 0.0,
            RailSwitch::Ocs { reconfig_delay_s, .. } => *reconfig_delay_s,
        }
    }
}

fn default_nic_ports() -> u32 {
    1
}

/// Topology section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub num_domains: usize,
    pub gpus_per_domain: usize,
    pub scaleup_bandwidth_bytes_per_s: f64,
    #[serde(default = "default_nic_ports")]
    pub nic_ports: u32,
    /// Aggregate NIC bandwidth in bits per second, shared by all logical ports.
    pub nic_bandwidth_bps: f64,
    pub rail_switch: RailSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank {
    pub global_id: RankId,
    pub domain: usize,
    pub local_rank: usize,
}

impl Rank {
    pub fn rail(&self) -> RailId {
        self.local_rank
    }
}

/// A validated rail-optimized topology. Every GPU with local rank `r` attaches
/// all of its NIC ports to rail `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_domains: usize,
    gpus_per_domain: usize,
    scaleup_bandwidth_bytes_per_s: f64,
    nic: NicPortConfig,
    rail_switch: RailSwitch,
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, ModelError> {
    let nic = NicPortConfig::split(spec.nic_bandwidth_bps, spec.nic_ports)?;
    Topology::new(
        spec.num_domains,
        spec.gpus_per_domain,
        spec.scaleup_bandwidth_bytes_per_s,
        nic,
        spec.rail_switch,
    )
}

impl Topology {
    pub fn new(
        num_domains: usize,
        gpus_per_domain: usize,
        scaleup_bandwidth_bytes_per_s: f64,
        nic: NicPortConfig,
        rail_switch: RailSwitch,
    ) -> Result<Self, ModelError> {
        if num_domains < 2 {
            return Err(ModelError::InvalidTopology(format!(
                "need at least 2 scale-up domains, got {num_domains}"
            )));
        }
        if gpus_per_domain < 1 {
            return Err(ModelError::InvalidTopology("need at least 1 GPU per domain".into()));
        }
        if !(scaleup_bandwidth_bytes_per_s > 0.0) {
            return Err(ModelError::InvalidTopology("scale-up bandwidth must be positive".into()));
        }
        if let RailSwitch::Ocs { radix, reconfig_delay_s } = rail_switch {
            if !(reconfig_delay_s >= 0.0) {
                return Err(ModelError::InvalidTopology(format!(
                    "reconfiguration delay must be >= 0, got {reconfig_delay_s}"
                )));
            }
            let demand = num_domains as u64 * u64::from(nic.ports());
            if demand > u64::from(radix) {
                // every rail carries the same demand; report rail 0
                return Err(ModelError::RadixExceeded { rail: 0, demand, radix });
            }
        }
        Ok(Self {
            num_domains,
            gpus_per_domain,
            scaleup_bandwidth_bytes_per_s,
            nic,
            rail_switch,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn gpus_per_domain(&self) -> usize {
        self.gpus_per_domain
    }

    pub fn num_rails(&self) -> usize {
        self.gpus_per_domain
    }

    pub fn num_ranks(&self) -> usize {
        self.num_domains * self.gpus_per_domain
    }

    pub fn nic(&self) -> NicPortConfig {
        self.nic
    }

    pub fn rail_switch(&self) -> RailSwitch {
        self.rail_switch
    }

    pub fn scaleup_bandwidth_bytes_per_s(&self) -> f64 {
        self.scaleup_bandwidth_bytes_per_s
    }

    pub fn rail_bandwidth_bytes_per_s(&self) -> f64 {
        self.nic.total_bandwidth_bytes_per_s()
    }

    pub fn rank(&self, global_id: RankId) -> Option<Rank> {
        (global_id < self.num_ranks()).then(|| Rank {
            global_id,
            domain: global_id / self.gpus_per_domain,
            local_rank: global_id % self.gpus_per_domain,
        })
    }

    pub fn ranks(&self) -> impl Iterator<Item = Rank> + '_ {
        (0..self.num_ranks()).filter_map(|r| self.rank(r))
    }

    pub fn ranks_on_rail(&self, rail: RailId) -> Vec<RankId> {
        (0..self.num_domains)
            .map(|d| d * self.gpus_per_domain + rail)
            .collect()
    }

    /// NIC ports attached to each rail: one attachment per port of every GPU on it.
    pub fn rail_port_demand(&self, rail: RailId) -> u64 {
        self.ranks().filter(|r| r.rail() == rail).count() as u64 * u64::from(self.nic.ports())
    }

    /// Same fabric with a different rail switch (used by delay sweeps and baselines).
    pub fn with_rail_switch(&self, rail_switch: RailSwitch) -> Result<Self, ModelError> {
        Self::new(
            self.num_domains,
            self.gpus_per_domain,
            self.scaleup_bandwidth_bytes_per_s,
            self.nic,
            rail_switch,
        )
    }

    pub fn electrical_baseline(&self) -> Self {
        Self { rail_switch: RailSwitch::Electrical, ..self.clone() }
    }

    pub fn with_reconfig_delay(&self, delay_s: f64) -> Result<Self, ModelError> {
        match self.rail_switch {
            RailSwitch::Electrical => Ok(self.clone()),
            RailSwitch::Ocs { radix, .. } => {
                self.with_rail_switch(RailSwitch::Ocs { reconfig_delay_s: delay_s, radix })
            }
        }
    }
}

/// Largest GPU count one flat OCS rail fabric can host: every GPU uses two OCS
/// ports on its rail, and there is one rail per GPU in the scale-up domain.
pub fn max_gpus(scaleup_size: u64, radix: u64) -> u64 {
    scaleup_size * radix / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    Tp,
    Dp,
    Fsdp,
    Pp,
    Cp,
    Ep,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Tp => "TP",
            Axis::Dp => "DP",
            Axis::Fsdp => "FSDP",
            Axis::Pp => "PP",
            Axis::Cp => "CP",
            Axis::Ep => "EP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "TP" => Axis::Tp,
            "DP" => Axis::Dp,
            "FSDP" => Axis::Fsdp,
            "PP" => Axis::Pp,
            "CP" => Axis::Cp,
            "EP" => Axis::Ep,
            _ => return None,
        })
    }

    /// Coarse traffic class used for phase segmentation; DP and FSDP share one.
    pub fn family(&self) -> Axis {
        match self {
            Axis::Fsdp => Axis::Dp,
            other => *other,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub String);

impl GroupId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGroup {
    pub id: GroupId,
    pub axis: Axis,
    pub members: Vec<RankId>,
    pub rails_touched: BTreeSet<RailId>,
}

impl CommGroup {
    /// Builds a group with rank-sorted member order.
    pub fn new(id: GroupId, axis: Axis, members: Vec<RankId>, topo: &Topology) -> Result<Self, ModelError> {
        let mut members = members;
        members.sort_unstable();
        Self::with_order(id, axis, members, topo)
    }

    /// Builds a group keeping the caller's member order (e.g. from a trace).
    pub fn with_order(
        id: GroupId,
        axis: Axis,
        members: Vec<RankId>,
        topo: &Topology,
    ) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidGroup { group: id.clone(), reason };
        if members.is_empty() {
            return Err(invalid("empty member list".into()));
        }
        let mut seen = BTreeSet::new();
        let mut ranks = Vec::with_capacity(members.len());
        for &m in &members {
            let rank = topo
                .rank(m)
                .ok_or_else(|| invalid(format!("rank {m} outside topology")))?;
            if !seen.insert(m) {
                return Err(invalid(format!("duplicate member {m}")));
            }
            ranks.push(rank);
        }
        let domains: BTreeSet<_> = ranks.iter().map(|r| r.domain).collect();
        let rails: BTreeSet<_> = ranks.iter().map(|r| r.rail()).collect();
        if axis == Axis::Tp && domains.len() > 1 {
            return Err(invalid("TP group spans more than one scale-up domain".into()));
        }
        if axis != Axis::Tp && ranks.len() > 1 && rails.len() > 1 {
            return Err(invalid("scale-out group spans more than one rail".into()));
        }
        let rails_touched = if axis == Axis::Tp || ranks.len() < 2 {
            BTreeSet::new()
        } else {
            rails
        };
        Ok(Self { id, axis, members, rails_touched })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn is_scale_out(&self) -> bool {
        !self.rails_touched.is_empty()
    }

    pub fn rail(&self) -> Option<RailId> {
        self.rails_touched.iter().next().copied()
    }

    pub fn contains(&self, rank: RankId) -> bool {
        self.members.contains(&rank)
    }
}

/// Previous and next member of `rank` on the group's ring.
pub fn ring_neighbors(group: &CommGroup, rank: RankId) -> Result<(RankId, RankId), ModelError> {
    let pos = group
        .members
        .iter()
        .position(|&m| m == rank)
        .ok_or_else(|| ModelError::NotMember { group: group.id.clone(), rank })?;
    let n = group.members.len();
    if n < 2 {
        return Err(ModelError::InvalidGroup {
            group: group.id.clone(),
            reason: "ring needs at least two members".into(),
        });
    }
    Ok((group.members[(pos + n - 1) % n], group.members[(pos + 1) % n]))
}
