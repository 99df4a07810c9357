//! Audit configuration file.
//!
//! ```toml
//! seed = "8675309"
//! scheme = "without_replacement"
//! max_draws = 2000
//!
//! [estimator]
//! eta0 = "auto"
//! d = 100
//! c = "auto"
//! eps = 1e-7
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assorter::OverstatementAssorter;
use crate::error::{Error, Result};
use crate::prng::validate_seed;
use crate::risk::{Estimator, SamplingScheme, ShrinkTrunc};

/// A parameter that is either fixed or derived from the assertion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tunable {
    #[default]
    #[serde(with = "auto")]
    Auto,
    Value(f64),
}

mod auto {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"auto\" or a number, got `{s}`")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub eta0: Tunable,
    pub d: f64,
    pub c: Tunable,
    pub eps: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            eta0: Tunable::Auto,
            d: 100.0,
            c: Tunable::Auto,
            eps: 1e-7,
        }
    }
}

impl EstimatorConfig {
    /// Concrete estimator for one assertion. `auto` picks the honest
    /// zero-overstatement value for `eta0` and `(eta0 - 1/2) / 2` for `c`.
    pub fn resolve(&self, oa: &OverstatementAssorter) -> Estimator {
        let eta0 = match self.eta0 {
            Tunable::Auto => oa.zero_overstatement_value(),
            Tunable::Value(v) => v,
        };
        let c = match self.c {
            Tunable::Auto => (eta0 - 0.5) / 2.0,
            Tunable::Value(v) => v,
        };
        Estimator::ShrinkTrunc(ShrinkTrunc {
            eta0,
            d: self.d,
            c,
            eps: self.eps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: String,
    #[serde(default)]
    pub scheme: SamplingScheme,
    /// Escalate to a full hand count after this many draws.
    #[serde(default)]
    pub max_draws: Option<u64>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

impl AuditConfig {
    pub fn new(seed: impl Into<String>) -> Self {
        AuditConfig {
            seed: seed.into(),
            scheme: SamplingScheme::default(),
            max_draws: None,
            estimator: EstimatorConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: AuditConfig = crate::io::read_structured(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        validate_seed(&self.seed)?;
        if self.max_draws == Some(0) {
            return Err(Error::Config("max_draws must be at least 1".into()));
        }
        Ok(())
    }

    /// The population-dependent check: without replacement there are only
    /// `population` distinct draws.
    pub fn validate_for_population(&self, population: u64) -> Result<()> {
        self.validate()?;
        if let (SamplingScheme::WithoutReplacement, Some(m)) = (self.scheme, self.max_draws) {
            if m > population {
                return Err(Error::Config(format!(
                    "max_draws {m} exceeds the {population} CVRs available without replacement"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_auto_values() {
        let c: AuditConfig = toml::from_str(
            "seed = \"123\"\nscheme = \"with_replacement\"\nmax_draws = 50\n[estimator]\neta0 = \"auto\"\nc = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.scheme, SamplingScheme::WithReplacement);
        assert_eq!(c.max_draws, Some(50));
        assert_eq!(c.estimator.eta0, Tunable::Auto);
        assert_eq!(c.estimator.c, Tunable::Value(0.01));
        assert_eq!(c.estimator.d, 100.0);
        c.validate().unwrap();
    }

    #[test]
    fn json_defaults() {
        let c: AuditConfig = serde_json::from_str(r#"{"seed": "1"}"#).unwrap();
        assert_eq!(c, AuditConfig::new("1"));
        let round: AuditConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(AuditConfig::new("").validate().is_err());
        assert!(AuditConfig::new("x1").validate().is_err());
        let mut c = AuditConfig::new("1");
        c.max_draws = Some(11);
        assert!(c.validate_for_population(10).is_err());
        c.scheme = SamplingScheme::WithReplacement;
        assert!(c.validate_for_population(10).is_ok());
        assert!(serde_json::from_str::<AuditConfig>(r#"{"seed": "1", "estimator": {"eta0": "fast"}}"#).is_err());
        assert!(serde_json::from_str::<AuditConfig>(r#"{"seed": "1", "sead": "2"}"#).is_err());
    }
}
