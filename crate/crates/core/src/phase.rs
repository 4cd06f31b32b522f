//! Training-regime vocabulary and which parameter groups each regime updates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "ERM-L")]
    ErmL,
    #[serde(rename = "FRR-L")]
    FrrL,
    #[serde(rename = "FULLRANK-L")]
    FullRankL,
    #[serde(rename = "ERM-FT")]
    ErmFt,
    #[serde(rename = "FRR-FT")]
    FrrFt,
    #[serde(rename = "ERM-FLFT")]
    ErmFlft,
    #[serde(rename = "FRR-FLFT")]
    FrrFlft,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Erm,
        Phase::ErmL,
        Phase::FrrL,
        Phase::FullRankL,
        Phase::ErmFt,
        Phase::FrrFt,
        Phase::ErmFlft,
        Phase::FrrFlft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Erm => "ERM",
            Phase::ErmL => "ERM-L",
            Phase::FrrL => "FRR-L",
            Phase::FullRankL => "FULLRANK-L",
            Phase::ErmFt => "ERM-FT",
            Phase::FrrFt => "FRR-FT",
            Phase::ErmFlft => "ERM-FLFT",
            Phase::FrrFlft => "FRR-FLFT",
        }
    }

    pub fn trains_extractor(self) -> bool {
        matches!(self, Phase::Erm | Phase::ErmFt | Phase::FrrFt | Phase::ErmFlft | Phase::FrrFlft)
    }

    pub fn trains_head(self) -> bool {
        matches!(
            self,
            Phase::Erm | Phase::ErmL | Phase::FrrL | Phase::FullRankL | Phase::ErmFt | Phase::FrrFt
        )
    }

    pub fn trains_decoder(self) -> bool {
        matches!(self, Phase::FrrL | Phase::FrrFt)
    }

    pub fn uses_frr(self) -> bool {
        matches!(self, Phase::FrrL | Phase::FrrFt | Phase::FrrFlft)
    }

    /// Only the head (and decoder) move, so features can be precomputed.
    pub fn is_linear_only(self) -> bool {
        !self.trains_extractor()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPhase(s.to_string()))
    }
}
