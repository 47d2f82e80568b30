//! One-shot fusion of independently trained client models.

mod average;
mod block;
mod select;

use std::fmt;
use std::str::FromStr;

pub use average::{fuse_fedavg, Weighting};
pub use block::{build_global_block, fuse_concat_toy, GlobalBlockModel};
pub use select::{
    absolute_confidence, ams_select, disturbing_matrix, predict_ams_cross, predict_ams_full,
    predict_ams_top1, predict_ams_topk, write_disturbing_csv, AbsoluteConfidence, DisturbingMatrix,
};

use crate::{Error, Result};

/// Fusion strategies compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMethod {
    /// Block model with summed heads.
    ConcatDirect,
    FedAvg,
    EnsembleUniform,
    AmsTop1,
    AmsTopK(usize),
    AmsFull,
    AmsCross,
}

impl FusionMethod {
    /// Rejects `k = 0` and `k` larger than the client count.
    pub fn validate(self, clients: usize) -> Result<()> {
        if let FusionMethod::AmsTopK(k) = self {
            if k == 0 || k > clients {
                return Err(Error::InvalidConfig(format!(
                    "ams_topk({k}) needs 1 <= k <= {clients}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMethod::ConcatDirect => f.write_str("concat_direct"),
            FusionMethod::FedAvg => f.write_str("fedavg"),
            FusionMethod::EnsembleUniform => f.write_str("ensemble_uniform"),
            FusionMethod::AmsTop1 => f.write_str("ams_top1"),
            FusionMethod::AmsTopK(k) => write!(f, "ams_topk({k})"),
            FusionMethod::AmsFull => f.write_str("ams_full"),
            FusionMethod::AmsCross => f.write_str("ams_cross"),
        }
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    /// Accepts the display names plus `ams_topN` and `ams_topk=N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let simple = match s {
            "concat_direct" => Some(FusionMethod::ConcatDirect),
            "fedavg" => Some(FusionMethod::FedAvg),
            "ensemble_uniform" => Some(FusionMethod::EnsembleUniform),
            "ams_top1" => Some(FusionMethod::AmsTop1),
            "ams_full" => Some(FusionMethod::AmsFull),
            "ams_cross" => Some(FusionMethod::AmsCross),
            _ => None,
        };
        if let Some(m) = simple {
            return Ok(m);
        }
        let k = s
            .strip_prefix("ams_topk(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("ams_topk="))
            .or_else(|| s.strip_prefix("ams_top"))
            .and_then(|n| n.parse::<usize>().ok());
        match k {
            Some(k) if k >= 1 => Ok(FusionMethod::AmsTopK(k)),
            _ => Err(Error::InvalidConfig(format!("unknown fusion method '{s}'"))),
        }
    }
}

impl serde::Serialize for FusionMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for FusionMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
