//! Exposure mappings from a group's assignment vector and network to
//! per-unit discrete exposure levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balance::GroupData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureMapping {
    /// `T_i = W_i`.
    OwnTreatment,
    /// `T_i = 1{sum_j A_ij W_j >= 1}`.
    AnyTreatedNeighbor,
    /// `T_i = 2 W_i + 1{sum_j A_ij W_j > 0}`, levels 0..=3.
    JointFourLevel,
    /// Level = number of thresholds met by the treated-neighbor count.
    /// Thresholds must be strictly increasing; one or three of them.
    NeighborCount(Vec<usize>),
}

impl ExposureMapping {
    pub fn n_levels(&self) -> usize {
        match self {
            ExposureMapping::OwnTreatment | ExposureMapping::AnyTreatedNeighbor => 2,
            ExposureMapping::JointFourLevel => 4,
            ExposureMapping::NeighborCount(t) => t.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ExposureMapping::NeighborCount(t) = self {
            if !(t.len() == 1 || t.len() == 3) {
                return Err(Error::Config(format!(
                    "neighbor-count mapping needs 1 or 3 thresholds, got {}",
                    t.len()
                )));
            }
            if t.windows(2).any(|w| w[0] >= w[1]) || t[0] == 0 {
                return Err(Error::Config("neighbor-count thresholds must be positive and increasing".into()));
            }
        }
        Ok(())
    }

    pub fn assign(&self, group: &GroupData) -> ExposureAssignment {
        let levels = (0..group.n_units())
            .map(|i| {
                let treated_nbrs = group.graph.neighbors(i).iter().filter(|&&j| group.w[j] == 1).count();
                match self {
                    ExposureMapping::OwnTreatment => usize::from(group.w[i]),
                    ExposureMapping::AnyTreatedNeighbor => usize::from(treated_nbrs >= 1),
                    ExposureMapping::JointFourLevel => 2 * usize::from(group.w[i]) + usize::from(treated_nbrs > 0),
                    ExposureMapping::NeighborCount(t) => t.iter().filter(|&&c| treated_nbrs >= c).count(),
                }
            })
            .collect();
        ExposureAssignment {
            levels,
            n_levels: self.n_levels(),
            mapping: self.clone(),
        }
    }
}

impl fmt::Display for ExposureMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExposureMapping::OwnTreatment => f.write_str("own"),
            ExposureMapping::AnyTreatedNeighbor => f.write_str("any-neighbor"),
            ExposureMapping::JointFourLevel => f.write_str("joint4"),
            ExposureMapping::NeighborCount(t) => {
                let parts: Vec<String> = t.iter().map(ToString::to_string).collect();
                write!(f, "count:{}", parts.join("/"))
            }
        }
    }
}

impl FromStr for ExposureMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "own" => ExposureMapping::OwnTreatment,
            "any-neighbor" => ExposureMapping::AnyTreatedNeighbor,
            "joint4" => ExposureMapping::JointFourLevel,
            _ => {
                let Some(rest) = s.strip_prefix("count:") else {
                    return Err(Error::Config(format!(
                        "unknown exposure mapping {s:?} (expected own, any-neighbor, joint4 or count:a/b/c)"
                    )));
                };
                let t = rest
                    .split('/')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("bad threshold in {s:?}: {e}")))?;
                ExposureMapping::NeighborCount(t)
            }
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExposureAssignment {
    pub levels: Vec<usize>,
    pub n_levels: usize,
    pub mapping: ExposureMapping,
}

impl ExposureAssignment {
    pub fn count(&self, level: usize) -> usize {
        self.levels.iter().filter(|&&l| l == level).count()
    }

    pub fn indicator(&self, level: usize) -> Vec<f64> {
        self.levels.iter().map(|&l| if l == level { 1.0 } else { 0.0 }).collect()
    }
}
