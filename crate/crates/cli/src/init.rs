//! `init`: write the built-in desk instance and a ready-to-run configuration.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use stochcoil::instance::DeskInstance;
use stochcoil::perturbation::PerturbationKernel;
use stochcoil::stochastic::{RiskConfig, RiskMode};

use crate::config::{desk_optimizer, GradcheckOptions, IotaOptions, OosOptions, RunConfig, Seeds};
use crate::error::CliError;
use crate::run::write_json;

/// Run sizes used in the published experiments; the defaults are desk scale.
pub const FULL_SCALE_SAMPLES: usize = 1024;
pub const FULL_SCALE_OOS: usize = 1 << 18;
pub const FULL_SCALE_STARTS: usize = 8;
pub const FULL_SCALE_IOTA_DRAWS: usize = 128;

pub fn config(mode: RiskMode, full_scale: bool) -> RunConfig {
    let risk = match mode {
        RiskMode::Deterministic => RiskConfig::deterministic(),
        RiskMode::RiskNeutral => RiskConfig::risk_neutral(16, 1),
        RiskMode::Cvar => RiskConfig::cvar(0.9, 16, 1),
    };
    let mut c = RunConfig {
        coils: "coils.json".into(),
        target: "target.json".into(),
        output: "run".into(),
        n_nodes: 32,
        kernel: PerturbationKernel {
            sigma: 1e-2,
            length_scale: 0.4 * PI,
            truncation: 3,
        },
        risk,
        weights: stochcoil::instance::desk_weights(),
        optimizer: desk_optimizer(),
        current_scale: None,
        seeds: Seeds {
            starts: 1,
            oos: 2,
            iota: 3,
            gradcheck: 4,
        },
        oos: OosOptions::default(),
        iota: IotaOptions {
            sigmas: Some(vec![3e-3, 1e-2]),
            ..IotaOptions::default()
        },
        gradcheck: GradcheckOptions::default(),
    };
    if full_scale {
        if mode != RiskMode::Deterministic {
            c.risk.n_samples = FULL_SCALE_SAMPLES;
        }
        c.oos.n_samples = FULL_SCALE_OOS;
        c.optimizer.multistart = FULL_SCALE_STARTS;
        c.iota.n_draws = FULL_SCALE_IOTA_DRAWS;
    }
    c
}

/// Writes `coils.json`, `reference.json`, `target.json` and `config.json` into `dir`.
pub fn run(dir: &Path, mode: RiskMode, full_scale: bool) -> Result<(), CliError> {
    let inst = DeskInstance::build(
        stochcoil::instance::InstanceParams::two_coil(),
        stochcoil::instance::desk_weights(),
    )
    .map_err(CliError::compute)?;
    fs::create_dir_all(dir)?;
    let json = |e: stochcoil::Error| CliError::failure(e.to_string());
    fs::write(
        dir.join("coils.json"),
        inst.problem.template().to_json().map_err(json)? + "\n",
    )?;
    fs::write(
        dir.join("reference.json"),
        inst.reference.to_json().map_err(json)? + "\n",
    )?;
    fs::write(
        dir.join("target.json"),
        inst.problem.target().to_json().map_err(json)? + "\n",
    )?;
    write_json(&dir.join("config.json"), &config(mode, full_scale))
}
