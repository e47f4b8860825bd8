//! Run configuration: one JSON file per run, validated before any compute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochcoil::objective::ObjectiveWeights;
use stochcoil::optimize::OptimOptions;
use stochcoil::perturbation::PerturbationKernel;
use stochcoil::stochastic::{RiskConfig, RiskMode};
use stochcoil::trace::TraceConfig;

use crate::error::CliError;

/// Desk-scale number of multi-start runs.
pub const DESK_STARTS: usize = 4;
/// Desk-scale out-of-sample count, `2¹⁴`.
pub const DESK_OOS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Starting coil set. Relative paths resolve against the config file.
    pub coils: PathBuf,
    pub target: PathBuf,
    /// Run directory.
    pub output: PathBuf,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    pub kernel: PerturbationKernel,
    pub risk: RiskConfig,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default = "desk_optimizer")]
    pub optimizer: OptimOptions,
    /// Scale of the current DOFs; the mean `|I|` of the starting coils if absent.
    #[serde(default)]
    pub current_scale: Option<f64>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub oos: OosOptions,
    #[serde(default)]
    pub iota: IotaOptions,
    #[serde(default)]
    pub gradcheck: GradcheckOptions,
}

fn default_nodes() -> usize {
    32
}

pub fn desk_optimizer() -> OptimOptions {
    OptimOptions {
        multistart: DESK_STARTS,
        ..OptimOptions::default()
    }
}

/// Master seeds of the random streams other than the SAA samples, whose seed
/// is `risk.master_seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub starts: u64,
    pub oos: u64,
    pub iota: u64,
    pub gradcheck: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OosOptions {
    pub n_samples: usize,
    pub kde_points: usize,
}

impl Default for OosOptions {
    fn default() -> Self {
        Self {
            n_samples: DESK_OOS,
            kde_points: stochcoil::kde::DEFAULT_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IotaOptions {
    pub n_draws: usize,
    /// Perturbation amplitudes to sample; the kernel's `sigma` if absent.
    pub sigmas: Option<Vec<f64>>,
    /// Starting guess for the unperturbed axis; the first target axis node
    /// if absent. Perturbed draws start from the unperturbed axis.
    pub initial_guess: Option<[f64; 2]>,
    pub trace: TraceConfig,
    pub kde_points: usize,
}

impl Default for IotaOptions {
    fn default() -> Self {
        Self {
            n_draws: 32,
            sigmas: None,
            initial_guess: None,
            trace: TraceConfig::default(),
            kde_points: stochcoil::kde::DEFAULT_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckOptions {
    /// Number of randomly chosen DOFs checked per component (at least 20).
    pub n_dofs: usize,
    /// Central-difference step relative to `max(1, |x_i|)`.
    pub step: f64,
    pub tolerance: f64,
    /// Smoothing parameter of the CVaR total.
    pub epsilon: f64,
    /// Standard deviation of the random offset applied to the starting shape
    /// before checking, so that inactive penalties are not all trivially zero.
    pub offset_std: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            n_dofs: 20,
            step: 1e-6,
            tolerance: 1e-5,
            epsilon: 1e-2,
            offset_std: 0.01,
        }
    }
}

/// A parsed configuration together with its verbatim text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            config,
            text,
            base_dir,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir.map_or_else(|| self.resolve(&self.config.output), Path::to_path_buf)
    }
}

impl RunConfig {
    /// Every check that can be made without reading the referenced files.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: stochcoil::Error| CliError::config(e.to_string());
        if self.n_nodes < 3 {
            return Err(CliError::config(format!(
                "n_nodes must be >= 3, got {}",
                self.n_nodes
            )));
        }
        self.kernel.validate().map_err(bad)?;
        self.risk.validate().map_err(bad)?;
        self.weights.validate().map_err(bad)?;
        self.optimizer.validate().map_err(bad)?;
        if self.optimizer.multistart == 0 {
            return Err(CliError::config("optimizer.multistart must be >= 1"));
        }
        if let Some(s) = self.current_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(CliError::config(format!(
                    "current_scale must be > 0, got {s}"
                )));
            }
        }
        if self.oos.n_samples == 0 || self.oos.kde_points < 2 {
            return Err(CliError::config(
                "oos.n_samples must be >= 1 and oos.kde_points >= 2",
            ));
        }
        if self.iota.n_draws == 0 || self.iota.kde_points < 2 {
            return Err(CliError::config(
                "iota.n_draws must be >= 1 and iota.kde_points >= 2",
            ));
        }
        if let Some(s) = &self.iota.sigmas {
            if s.is_empty() || s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(CliError::config(
                    "iota.sigmas must be a non-empty list of values >= 0",
                ));
            }
        }
        self.iota.trace.validate().map_err(bad)?;
        let g = &self.gradcheck;
        if g.n_dofs < 20 {
            return Err(CliError::config(format!(
                "gradcheck.n_dofs must be >= 20, got {}",
                g.n_dofs
            )));
        }
        for (name, v) in [
            ("step", g.step),
            ("tolerance", g.tolerance),
            ("epsilon", g.epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::config(format!(
                    "gradcheck.{name} must be > 0, got {v}"
                )));
            }
        }
        if !(g.offset_std >= 0.0) {
            return Err(CliError::config("gradcheck.offset_std must be >= 0"));
        }
        Ok(())
    }

    /// Number of frozen samples in stochastic checks; deterministic configs
    /// fall back to the desk default.
    pub fn stochastic_samples(&self) -> usize {
        match self.risk.mode {
            RiskMode::Deterministic => 16,
            _ => self.risk.n_samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "coils": "coils.json",
            "target": "target.json",
            "output": "run",
            "kernel": {"sigma": 0.01, "length_scale": 1.2566370614359172},
            "risk": {"mode": "risk_neutral"}
        })
    }

    #[test]
    fn defaults_are_desk_scale() {
        let c: RunConfig = serde_json::from_value(minimal()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.risk.n_samples, 16);
        assert_eq!(c.oos.n_samples, 16384);
        assert_eq!(c.optimizer.multistart, 4);
        assert_eq!(c.kernel.truncation, 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = minimal();
        v["kernal"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let mut v = minimal();
        v["optimizer"] = serde_json::json!({"gtoll": 1e-3});
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cases = [
            serde_json::json!({"kernel": {"sigma": -1.0, "length_scale": 1.0}}),
            serde_json::json!({"risk": {"mode": "risk_neutral", "n_samples": 0}}),
            serde_json::json!({"n_nodes": 2}),
            serde_json::json!({"gradcheck": {"n_dofs": 5}}),
            serde_json::json!({"iota": {"sigmas": []}}),
        ];
        for patch in cases {
            let mut v = minimal();
            for (k, val) in patch.as_object().unwrap() {
                v[k] = val.clone();
            }
            let c: RunConfig = serde_json::from_value(v).expect("patch must deserialize");
            assert!(c.validate().is_err(), "{patch}");
        }
    }
}
