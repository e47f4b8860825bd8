//! `iota`: rotational transform on axis under perturbed coil sets.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stochcoil::field::CoilField;
use stochcoil::perturbation::{PerturbationKernel, PerturbationModel};
use stochcoil::trace::{self, TraceConfig};
use stochcoil::{kde, seed, Error};

use crate::error::CliError;
use crate::run::{domain, mean_std, write_json, Manifest, Setup};

/// One traced draw. Failed traces keep their row with NaN entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotaRow {
    pub draw_id: u64,
    pub sigma: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "Z0")]
    pub z0: f64,
    pub iota: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub sigma: f64,
    pub n_draws: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotaSummary {
    pub master_seed: u64,
    pub unperturbed: IotaRow,
    pub sigmas: Vec<SigmaSummary>,
}

pub fn master_seed(seed_iota: u64) -> u64 {
    seed::derive(seed_iota, &[domain::IOTA])
}

/// Axis and ι of one coil set; failures become NaN entries.
fn trace_row(
    field: &CoilField,
    config: &TraceConfig,
    draw_id: u64,
    sigma: f64,
) -> Result<IotaRow, (IotaRow, Error)> {
    let mut row = IotaRow {
        draw_id,
        sigma,
        r0: f64::NAN,
        z0: f64::NAN,
        iota: f64::NAN,
        residual: f64::NAN,
    };
    let axis = match trace::find_axis(field, config) {
        Ok(a) => a,
        Err(e) => {
            if let Error::NoAxisFound {
                residual, trail, ..
            } = &e
            {
                row.residual = *residual;
                if let Some(p) = trail.last() {
                    row.r0 = p[0];
                    row.z0 = p[1];
                }
            }
            return Err((row, e));
        }
    };
    row.r0 = axis.r0;
    row.z0 = axis.z0;
    row.residual = axis.residual;
    match trace::compute_iota(field, [axis.r0, axis.z0], config) {
        Ok(r) => {
            row.iota = r.iota;
            Ok(row)
        }
        Err(e) => Err((row, e)),
    }
}

pub fn run(
    config: &Path,
    output: Option<&Path>,
    result: Option<&Path>,
) -> Result<(Vec<IotaRow>, IotaSummary), CliError> {
    let setup = Setup::new(config, output)?;
    let (doc, x) = setup.load_result(result)?;
    let c = &setup.loaded.config;
    let opts = &c.iota;
    let problem = &setup.problem;
    let sigmas = opts.sigmas.clone().unwrap_or_else(|| vec![c.kernel.sigma]);
    let models = sigmas
        .iter()
        .map(|&sigma| {
            let kernel = PerturbationKernel {
                sigma,
                ..c.kernel.clone()
            };
            PerturbationModel::new(kernel, problem.grid().clone()).map_err(CliError::setup)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let master = master_seed(c.seeds.iota);
    let dir = setup.out.join("iota");
    setup.prepare_dir(
        &dir,
        &Manifest::new(
            "iota",
            serde_json::json!({"iota": c.seeds.iota, "master": master, "result_start": doc.start, "result_seed": doc.seed}),
        ),
    )?;

    let guess = opts.initial_guess.unwrap_or_else(|| {
        let p = problem.target().points[0];
        [p[0].hypot(p[1]), p[2]]
    });
    let nominal = CoilField {
        coils: problem.perturbed(&x, None).map_err(CliError::compute)?,
    };
    let base_config = TraceConfig {
        initial_guess: guess,
        ..opts.trace.clone()
    };
    let unperturbed = trace_row(&nominal, &base_config, 0, 0.0)
        .map_err(|(_, e)| CliError::numerical(format!("unperturbed axis: {e}")))?;
    let draw_config = TraceConfig {
        initial_guess: [unperturbed.r0, unperturbed.z0],
        ..opts.trace.clone()
    };

    // Every σ reuses the same draw ids, so the draws differ only in amplitude.
    let n_coils = problem.n_physical();
    let tasks: Vec<(usize, u64)> = (0..sigmas.len())
        .flat_map(|i| (0..opts.n_draws as u64).map(move |k| (i, k)))
        .collect();
    let rows = tasks
        .par_iter()
        .map(|&(i, k)| {
            let sample = models[i].draw(master, k, n_coils);
            let coils = problem
                .perturbed(&x, Some(&sample))
                .map_err(CliError::compute)?;
            let field = CoilField { coils };
            Ok(trace_row(&field, &draw_config, k, sigmas[i]).unwrap_or_else(|(row, _)| row))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("draws.csv"))?));
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let mut kde_out = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("kde.csv"))?));
    kde_out.write_record(["sigma", "x", "density"])?;
    let mut per_sigma = Vec::new();
    for (i, &sigma) in sigmas.iter().enumerate() {
        let values: Vec<f64> = rows[i * opts.n_draws..(i + 1) * opts.n_draws]
            .iter()
            .map(|r| r.iota)
            .collect();
        let (n_ok, mean, std) = mean_std(&values);
        per_sigma.push(SigmaSummary {
            sigma,
            n_draws: values.len(),
            n_failed: values.len() - n_ok,
            mean,
            std,
        });
        let finite: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let d = kde::gaussian_kde(&finite, opts.kde_points).map_err(CliError::compute)?;
        for (x, y) in d.grid.iter().zip(&d.density) {
            kde_out.serialize((sigma, x, y))?;
        }
    }
    kde_out.flush()?;

    let summary = IotaSummary {
        master_seed: master,
        unperturbed,
        sigmas: per_sigma,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((rows, summary))
}
