//! `oos`: out-of-sample distribution of the objective at an optimized design.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stochcoil::stochastic::{self, RiskMode};
use stochcoil::{kde, seed};

use crate::error::CliError;
use crate::run::{domain, mean_std, write_json, Manifest, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosSummary {
    pub n_samples: usize,
    pub master_seed: u64,
    pub mode: RiskMode,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Empirical CVaR at the configured `α`.
    pub cvar: f64,
    pub alpha: f64,
    /// `g(x, 0)`.
    pub nominal_value: f64,
    /// Objective value recorded by the optimizer.
    pub in_sample_value: f64,
    pub kde_bandwidth: f64,
    pub kde_integral: f64,
}

#[derive(Serialize)]
struct Row {
    sample_id: u64,
    value: f64,
}

pub fn master_seed(seed_oos: u64) -> u64 {
    seed::derive(seed_oos, &[domain::OOS])
}

pub fn run(
    config: &Path,
    output: Option<&Path>,
    result: Option<&Path>,
) -> Result<OosSummary, CliError> {
    let setup = Setup::new(config, output)?;
    let (doc, x) = setup.load_result(result)?;
    let c = &setup.loaded.config;
    let master = master_seed(c.seeds.oos);
    let dir = setup.out.join("oos");
    setup.prepare_dir(
        &dir,
        &Manifest::new(
            "oos",
            serde_json::json!({"oos": c.seeds.oos, "master": master, "result_start": doc.start, "result_seed": doc.seed}),
        ),
    )?;

    let problem = &setup.problem;
    let values = stochastic::oos_evaluate(problem, &x, &setup.model, master, c.oos.n_samples)
        .map_err(CliError::compute)?;
    let nominal_value = problem.total_value(&x, None).map_err(CliError::compute)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("values.csv"))?));
    for (k, &value) in values.iter().enumerate() {
        w.serialize(Row {
            sample_id: k as u64,
            value,
        })?;
    }
    w.flush()?;

    let density = kde::gaussian_kde(&values, c.oos.kde_points).map_err(CliError::compute)?;
    density
        .write_csv(BufWriter::new(File::create(dir.join("kde.csv"))?))
        .map_err(CliError::compute)?;

    let (_, mean, std) = mean_std(&values);
    let summary = OosSummary {
        n_samples: values.len(),
        master_seed: master,
        mode: doc.mode,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        cvar: stochastic::discrete_cvar(&values, c.risk.alpha),
        alpha: c.risk.alpha,
        nominal_value,
        in_sample_value: doc.value,
        kde_bandwidth: density.bandwidth,
        kde_integral: density.trapezoid_integral(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
