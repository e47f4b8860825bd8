//! Problem setup and run-directory artifacts shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochcoil::geometry::{CoilSet, CoilSetDocument, QuadratureGrid};
use stochcoil::objective::{CoilProblem, TargetField};
use stochcoil::optimize::Termination;
use stochcoil::perturbation::PerturbationModel;
use stochcoil::stochastic::RiskMode;

use crate::config::LoadedConfig;
use crate::error::CliError;

/// Stream labels mixed into the configured seeds so that no two random
/// streams of a run coincide even when the user reuses a seed value.
pub mod domain {
    pub const STARTS: u64 = 0x7374_6172_7473;
    pub const OOS: u64 = 0x6f6f_73;
    pub const IOTA: u64 = 0x696f_7461;
    pub const GRADCHECK: u64 = 0x6772_6164;
}

/// Everything built from a configuration before any compute starts.
pub struct Setup {
    pub loaded: LoadedConfig,
    pub out: PathBuf,
    pub problem: CoilProblem,
    pub model: PerturbationModel,
}

impl Setup {
    pub fn new(config_path: &Path, output: Option<&Path>) -> Result<Self, CliError> {
        let loaded = LoadedConfig::load(config_path)?;
        let c = &loaded.config;
        let read = |p: &Path| {
            let path = loaded.resolve(p);
            fs::read_to_string(&path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
        };
        let in_file = |p: &Path| {
            let path = loaded.resolve(p);
            move |e: stochcoil::Error| CliError::config(format!("{}: {e}", path.display()))
        };
        let coils = CoilSet::from_json(&read(&c.coils)?).map_err(in_file(&c.coils))?;
        let target = TargetField::from_json(&read(&c.target)?).map_err(in_file(&c.target))?;
        let grid = QuadratureGrid::new(c.n_nodes).map_err(CliError::setup)?;
        let problem = CoilProblem::new(
            coils,
            grid.clone(),
            target,
            c.weights.clone(),
            c.current_scale,
        )
        .map_err(CliError::setup)?;
        let model = PerturbationModel::new(c.kernel.clone(), grid).map_err(CliError::setup)?;
        let out = loaded.output_dir(output);
        Ok(Self {
            loaded,
            out,
            problem,
            model,
        })
    }

    /// Optimized result: `explicit` if given, else `result.json` in the run directory.
    pub fn load_result(
        &self,
        explicit: Option<&Path>,
    ) -> Result<(ResultDocument, Vec<f64>), CliError> {
        let path = explicit.map_or_else(|| self.out.join("result.json"), Path::to_path_buf);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::config(format!("cannot read result {}: {e}", path.display())))?;
        let doc: ResultDocument = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let x = doc
            .design_vector(&self.problem)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok((doc, x))
    }

    /// Create `dir`, echo the configuration into it and write its manifest.
    pub fn prepare_dir(&self, dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), &self.loaded.text)?;
        write_json(&dir.join("manifest.json"), manifest)
    }
}

/// Identifies the code and every seed used by one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seeds: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// `None` for the risk-neutral warm start of a CVaR run.
    pub epsilon: Option<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub grad_reduction: f64,
}

/// Outcome of one optimization start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub start: usize,
    pub seed: u64,
    pub mode: RiskMode,
    /// Final scalarized objective: `g(x, 0)`, the sample mean, or the
    /// smoothed CVaR at the last smoothing parameter.
    pub value: f64,
    /// Auxiliary CVaR variable.
    pub t: Option<f64>,
    /// Optimization vector without `t`, with currents divided by `current_scale`.
    pub x: Vec<f64>,
    pub current_scale: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_reduction: f64,
    pub stages: Vec<StageSummary>,
    pub coils: CoilSetDocument,
}

impl ResultDocument {
    /// The stored vector if it fits `problem`, else the packed coil set.
    pub fn design_vector(&self, problem: &CoilProblem) -> Result<Vec<f64>, String> {
        if self.x.len() == problem.dim() && self.current_scale == problem.current_scale() {
            return Ok(self.x.clone());
        }
        let coils = CoilSet::from_document(&self.coils).map_err(|e| e.to_string())?;
        if coils.dof_count() != problem.dim() {
            return Err(format!(
                "result has {} DOFs but the configured problem has {}",
                coils.dof_count(),
                problem.dim()
            ));
        }
        Ok(problem.pack(&coils))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Sample mean and unbiased standard deviation of the finite entries.
pub fn mean_std(values: &[f64]) -> (usize, f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return (0, f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (n, mean, std)
}
