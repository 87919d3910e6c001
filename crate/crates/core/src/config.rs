//! Single-file TOML configuration. Every section is optional and falls back
//! to the defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{BuildOptions, GridSpec};
use crate::dynamics::{BodyParams, DivergenceLimits, Integrator};
use crate::error::{PsmError, Result};
use crate::evaluator::EvalSpec;
use crate::predictor::PredictorConfig;
use crate::signal::{CalibrationSpec, FilterSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    /// Sliding-window length of the real-time filter.
    pub filter_window: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self { filter_window: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    /// RK4 steps per sampling period.
    pub substeps: u32,
    pub limits: DivergenceLimits,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            substeps: 1,
            limits: DivergenceLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub body: BodyParams,
    pub grid: GridSpec,
    pub build: BuildOptions,
    pub filter: FilterSpec,
    pub stream: StreamSpec,
    pub calibration: CalibrationSpec,
    pub integrator: IntegratorSpec,
    pub predictor: PredictorConfig,
    pub eval: EvalSpec,
    pub io: IoSpec,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| PsmError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PsmError::Config(e.to_string()))
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.body.period
    }

    pub fn integrator(&self) -> Integrator {
        Integrator::new(self.body.clone())
            .with_substeps(self.integrator.substeps)
            .with_limits(self.integrator.limits)
    }

    pub fn validate(&self) -> Result<()> {
        self.body.validate()?;
        self.grid.validate()?;
        self.filter.validate()?;
        self.predictor.validate()?;
        self.eval.validate(self.sample_rate())?;
        if self.stream.filter_window < self.filter.min_len() {
            return Err(PsmError::Config(format!(
                "stream.filter_window = {} is shorter than the filter's {} sample minimum",
                self.stream.filter_window,
                self.filter.min_len()
            )));
        }
        if self.integrator.substeps == 0 {
            return Err(PsmError::Config("integrator.substeps must be >= 1".into()));
        }
        if !(self.calibration.duration > 0.0 && self.calibration.gyro_threshold > 0.0) {
            return Err(PsmError::Config("calibration duration and gyro_threshold must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip() {
        let mut c = Config::default();
        c.eval.eps_em = 0.02;
        c.io.dataset = Some("d.json".into());
        c.body.stiffness.z = 1000.5;
        let back = Config::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let c = Config::from_toml("[eval]\neps_ec = 0.04\n").unwrap();
        assert_eq!(c.eval.eps_ec, 0.04);
        assert_eq!(c.eval.eps_em, 0.022);
    }

    #[test]
    fn typo_is_rejected() {
        let err = Config::from_toml("[eval]\neps_emm = 0.04\n").unwrap_err();
        assert_eq!(err.kind(), "Config");
        assert!(Config::from_toml("[evall]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[eval]\neps_em = 0.05\n").is_err());
        assert!(Config::from_toml("[filter]\norder = 7\n").is_err());
    }
}
