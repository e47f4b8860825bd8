//! `optimize`: multi-start minimization of the configured risk measure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use stochcoil::optimize::{self, OptimResult};
use stochcoil::seed;
use stochcoil::stochastic::{RiskConfig, RiskMode, SaaProblem};

use crate::error::CliError;
use crate::run::{domain, write_json, Manifest, ResultDocument, Setup, StageSummary};

#[derive(Serialize)]
struct ConvergenceRow {
    stage: usize,
    epsilon: Option<f64>,
    iter: usize,
    objective: f64,
    grad_inf_norm: f64,
    step: f64,
}

struct Stage {
    epsilon: Option<f64>,
    result: OptimResult,
}

#[derive(Serialize)]
struct Dump {
    start: usize,
    seed: u64,
    /// Index into the stage sequence (0 is the only stage outside CVaR mode).
    stage: usize,
    epsilon: Option<f64>,
    message: String,
    state: Option<stochcoil::optimize::DumpState>,
}

#[derive(Serialize)]
struct SamplesManifest {
    master_seed: u64,
    sample_ids: Vec<u64>,
    n_physical_coils: usize,
    n_nodes: usize,
    kernel: stochcoil::perturbation::PerturbationKernel,
}

/// Start master seed shared by every mode, so deterministic and stochastic
/// runs with equal `seeds.starts` begin from identical points.
pub fn start_master(seed_starts: u64) -> u64 {
    seed::derive(seed_starts, &[domain::STARTS])
}

pub fn run(config: &Path, output: Option<&Path>) -> Result<Vec<ResultDocument>, CliError> {
    let setup = Setup::new(config, output)?;
    let c = &setup.loaded.config;
    let problem = &setup.problem;
    let risk = c.risk.clone();
    let saa =
        SaaProblem::new(problem.clone(), &setup.model, risk.clone()).map_err(CliError::setup)?;
    let warmup = match risk.mode {
        RiskMode::Cvar => Some(
            SaaProblem::with_samples(
                problem.clone(),
                saa.samples().to_vec(),
                RiskConfig {
                    mode: RiskMode::RiskNeutral,
                    ..risk.clone()
                },
            )
            .map_err(CliError::setup)?,
        ),
        _ => None,
    };

    let opts = &c.optimizer;
    let master = start_master(c.seeds.starts);
    let starts = optimize::start_points(
        &problem.x0(),
        problem.shape_dim(),
        opts.multistart,
        opts.init_std,
        master,
    );

    let out = &setup.out;
    let manifest = Manifest::new(
        "optimize",
        serde_json::json!({
            "samples": risk.master_seed,
            "starts": c.seeds.starts,
            "start_master": master,
            "start_seeds": starts.iter().map(|s| s.0).collect::<Vec<_>>(),
        }),
    );
    setup.prepare_dir(out, &manifest)?;
    if risk.mode != RiskMode::Deterministic {
        write_json(
            &out.join("samples.json"),
            &SamplesManifest {
                master_seed: risk.master_seed,
                sample_ids: saa.samples().iter().map(|s| s.sample_id).collect(),
                n_physical_coils: problem.n_physical(),
                n_nodes: c.n_nodes,
                kernel: c.kernel.clone(),
            },
        )?;
    }

    let solve = |x0: &[f64]| -> Result<Vec<Stage>, (usize, Option<f64>, stochcoil::Error)> {
        match &warmup {
            None => {
                let result = optimize::minimize(objective(&saa, None), x0, opts)
                    .map_err(|e| (0, None, e))?;
                Ok(vec![Stage {
                    epsilon: None,
                    result,
                }])
            }
            Some(rn) => {
                let first =
                    optimize::minimize(objective(rn, None), x0, opts).map_err(|e| (0, None, e))?;
                let mut stages = vec![Stage {
                    epsilon: None,
                    result: first,
                }];
                let mut z = saa
                    .cvar_start(&stages[0].result.x)
                    .map_err(|e| (1, None, e))?;
                for (i, &eps) in risk.epsilon_schedule.iter().enumerate() {
                    let result = optimize::minimize(objective(&saa, Some(eps)), &z, opts)
                        .map_err(|e| (i + 1, Some(eps), e))?;
                    z = result.x.clone();
                    stages.push(Stage {
                        epsilon: Some(eps),
                        result,
                    });
                }
                Ok(stages)
            }
        }
    };

    let outcomes: Vec<_> = starts.par_iter().map(|(_, x0)| solve(x0)).collect();

    let mut docs = Vec::new();
    let mut failure = None;
    for (k, ((s, _), outcome)) in starts.iter().zip(outcomes).enumerate() {
        let dir = out.join(format!("start_{k:02}"));
        fs::create_dir_all(&dir)?;
        match outcome {
            Ok(stages) => {
                write_convergence(&dir.join("convergence.csv"), &stages)?;
                let doc = document(&setup, k, *s, risk.mode, &stages)?;
                write_json(&dir.join("result.json"), &doc)?;
                docs.push(doc);
            }
            Err((stage, epsilon, e)) => {
                if failure.is_none() {
                    let message = e.to_string();
                    let state = match e {
                        stochcoil::Error::NonFinite { state, .. } => Some(*state),
                        _ => None,
                    };
                    failure = Some(Dump {
                        start: k,
                        seed: *s,
                        stage,
                        epsilon,
                        message,
                        state,
                    });
                }
            }
        }
    }
    if let Some(dump) = failure {
        write_json(&out.join("dump.json"), &dump)?;
        return Err(CliError::numerical(format!(
            "start {} failed: {} (state written to {})",
            dump.start,
            dump.message,
            out.join("dump.json").display()
        )));
    }

    // Lowest final value wins; ties go to the lower start index.
    let best = docs
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.start.cmp(&b.start)))
        .expect("at least one start");
    write_json(&out.join("result.json"), best)?;
    Ok(docs)
}

fn objective(
    s: &SaaProblem,
    eps: Option<f64>,
) -> impl FnMut(&[f64]) -> stochcoil::Result<(f64, Vec<f64>)> + '_ {
    move |z: &[f64]| {
        let vg = s.value_grad(z, eps)?;
        Ok((vg.value, vg.grad))
    }
}

fn write_convergence(path: &Path, stages: &[Stage]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for (i, s) in stages.iter().enumerate() {
        for r in &s.result.history {
            w.serialize(ConvergenceRow {
                stage: i,
                epsilon: s.epsilon,
                iter: r.iter,
                objective: r.objective,
                grad_inf_norm: r.grad_inf_norm,
                step: r.step,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn document(
    setup: &Setup,
    start: usize,
    seed: u64,
    mode: RiskMode,
    stages: &[Stage],
) -> Result<ResultDocument, CliError> {
    let problem = &setup.problem;
    let last = &stages.last().expect("at least one stage").result;
    let n = problem.dim();
    let x = last.x[..n].to_vec();
    let t = (mode == RiskMode::Cvar).then(|| last.x[n]);
    let coils = problem.coils(&x).map_err(CliError::compute)?;
    Ok(ResultDocument {
        start,
        seed,
        mode,
        value: last.value,
        t,
        x,
        current_scale: problem.current_scale(),
        termination: last.termination,
        iterations: stages.iter().map(|s| s.result.iterations()).sum(),
        evaluations: stages.iter().map(|s| s.result.evaluations).sum(),
        grad_reduction: last.grad_reduction(),
        stages: stages
            .iter()
            .map(|s| StageSummary {
                epsilon: s.epsilon,
                value: s.result.value,
                iterations: s.result.iterations(),
                evaluations: s.result.evaluations,
                termination: s.result.termination,
                grad_reduction: s.result.grad_reduction(),
            })
            .collect(),
        coils: coils.to_document(),
    })
}
