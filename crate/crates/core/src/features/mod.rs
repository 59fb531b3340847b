//! Per-token feature families: output distribution shape, context contrast,
//! internal activations and surrounding context.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub mod context;
pub mod contrast;
pub mod internal;
pub mod output;
pub mod schedule;

/// Named feature configurations, each a superset-ish refinement of the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureConfig {
    F93,
    F120,
    F204,
    Fmax,
}

impl FeatureConfig {
    pub const ALL: [FeatureConfig; 4] = [
        FeatureConfig::F93,
        FeatureConfig::F120,
        FeatureConfig::F204,
        FeatureConfig::Fmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureConfig::F93 => "f93",
            FeatureConfig::F120 => "f120",
            FeatureConfig::F204 => "f204",
            FeatureConfig::Fmax => "fmax",
        }
    }

    /// Configurations from f204 up read the prior pass and the rollout stream.
    pub fn needs_prior(self) -> bool {
        matches!(self, FeatureConfig::F204 | FeatureConfig::Fmax)
    }
}

impl fmt::Display for FeatureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        FeatureConfig::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownConfig(s.to_string()))
    }
}
