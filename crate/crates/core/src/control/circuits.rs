use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::ControlError;
use crate::model::{CommGroup, GroupId, RailId, RankId};

/// One physical NIC port: `port` indexes the ports of `rank`'s NIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId {
    pub rank: RankId,
    pub port: u32,
}

impl PortId {
    pub fn new(rank: RankId, port: u32) -> Self {
        Self { rank, port }
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.rank, self.port)
    }
}

/// Port pairings that realize one group's ring on its rail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitConfig {
    pub group: GroupId,
    pub rail: RailId,
    pub pairs: Vec<(PortId, PortId)>,
}

impl CircuitConfig {
    pub fn ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.pairs.iter().flat_map(|&(a, b)| [a, b])
    }
}

/// Ring pairings for a scale-out group. Two members connect every port
/// to the peer's same-index port. Larger rings send through the upper half
/// of each NIC's ports and receive on the lower half, which needs at least
/// two ports per NIC.
pub fn ring_config(group: &CommGroup, nic_ports: u32) -> Result<CircuitConfig, ControlError> {
    let rail = group.rail().ok_or_else(|| ControlError::NotScaleOut(group.id.clone()))?;
    let m = &group.members;
    let mut pairs = Vec::new();
    match m.len() {
        0 | 1 => {}
        2 => {
            for p in 0..nic_ports {
                pairs.push((PortId::new(m[0], p), PortId::new(m[1], p)));
            }
        }
        n => {
            if nic_ports < 2 {
                return Err(ControlError::DegreeInfeasible {
                    group: group.id.clone(),
                    needed: 2,
                    ports: nic_ports,
                });
            }
            let half = nic_ports / 2;
            for i in 0..n {
                let next = m[(i + 1) % n];
                for j in 0..half {
                    pairs.push((PortId::new(m[i], half + j), PortId::new(next, j)));
                }
            }
        }
    }
    Ok(CircuitConfig { group: group.id.clone(), rail, pairs })
}

/// Current circuits of one rail's OCS, as a symmetric port pairing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RailCircuits {
    partner: BTreeMap<PortId, PortId>,
}

impl RailCircuits {
    pub fn partner(&self, port: PortId) -> Option<PortId> {
        self.partner.get(&port).copied()
    }

    pub fn is_up(&self, cfg: &CircuitConfig) -> bool {
        cfg.pairs.iter().all(|&(a, b)| self.partner(a) == Some(b))
    }

    /// Ports whose partner changes when `cfg` is applied: the config's own
    /// ports that are not yet paired as required, plus their current partners,
    /// which go dark.
    pub fn touched(&self, cfg: &CircuitConfig) -> BTreeSet<PortId> {
        let mut out = BTreeSet::new();
        for &(a, b) in &cfg.pairs {
            if self.partner(a) == Some(b) {
                continue;
            }
            for p in [a, b] {
                out.insert(p);
                if let Some(old) = self.partner(p) {
                    out.insert(old);
                }
            }
        }
        out
    }

    /// Tears down every circuit on a touched port and installs `cfg`'s pairs.
    /// Returns the touched ports.
    pub fn apply(&mut self, cfg: &CircuitConfig) -> BTreeSet<PortId> {
        let touched = self.touched(cfg);
        for &p in &touched {
            if let Some(old) = self.partner.remove(&p) {
                self.partner.remove(&old);
            }
        }
        for &(a, b) in &cfg.pairs {
            self.partner.insert(a, b);
            self.partner.insert(b, a);
        }
        touched
    }

    /// Each circuit once, as (lower port, higher port).
    pub fn circuits(&self) -> Vec<(PortId, PortId)> {
        self.partner.iter().filter(|(a, b)| a < b).map(|(&a, &b)| (a, b)).collect()
    }

    pub fn circuits_of(&self, rank: RankId) -> usize {
        self.partner.keys().filter(|p| p.rank == rank).count()
    }
}
