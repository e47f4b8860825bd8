//! `gradcheck`: central finite differences against the analytic gradients.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stochcoil::objective::{Term, ValueGrad};
use stochcoil::optimize;
use stochcoil::stochastic::{RiskConfig, RiskMode, SaaProblem};
use stochcoil::{seed, Result};

use crate::error::CliError;
use crate::run::{domain, write_json, Manifest, Setup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub value: f64,
    pub n_checked: usize,
    /// `max_i |fd_i - g_i| / max(‖g_S‖∞, ‖fd_S‖∞)` over the checked set `S`;
    /// 0 when both vanish.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    pub indices: Vec<usize>,
    pub components: Vec<ComponentReport>,
    pub pass: bool,
}

/// Compare the gradient of `f` at `x` with central differences on `indices`.
/// Steps are `step · max(1, |x_i|)`.
pub fn check<F>(
    name: &str,
    f: F,
    x: &[f64],
    indices: &[usize],
    step: f64,
    tolerance: f64,
) -> Result<ComponentReport>
where
    F: Fn(&[f64]) -> Result<ValueGrad> + Sync,
{
    let at = f(x)?;
    let fd = indices
        .par_iter()
        .map(|&i| {
            let h = step * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[i] = x[i] + h;
            let fp = f(&xp)?.value;
            xp[i] = x[i] - h;
            let fm = f(&xp)?.value;
            Ok((fp - fm) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let scale = indices
        .iter()
        .zip(&fd)
        .map(|(&i, d)| at.grad[i].abs().max(d.abs()))
        .fold(0.0, f64::max);
    let mut max_rel_error = 0.0;
    let mut worst_index = None;
    if scale > 0.0 {
        for (&i, d) in indices.iter().zip(&fd) {
            let e = (d - at.grad[i]).abs() / scale;
            if !(e <= max_rel_error) {
                max_rel_error = e;
                worst_index = Some(i);
            }
        }
    }
    Ok(ComponentReport {
        name: name.to_string(),
        value: at.value,
        n_checked: indices.len(),
        max_rel_error,
        worst_index,
        pass: max_rel_error <= tolerance,
    })
}

/// Runs the check and writes `gradcheck/report.json`. A failed comparison is
/// reported in the returned report, not as an error.
pub fn run(
    config: &Path,
    output: Option<&Path>,
    result: Option<&Path>,
) -> std::result::Result<GradcheckReport, CliError> {
    let setup = Setup::new(config, output)?;
    let c = &setup.loaded.config;
    let g = &c.gradcheck;
    let problem = &setup.problem;
    let master = seed::derive(c.seeds.gradcheck, &[domain::GRADCHECK]);
    let x = match result {
        Some(_) => setup.load_result(result)?.1,
        None => {
            optimize::start_points(&problem.x0(), problem.shape_dim(), 1, g.offset_std, master)
                .remove(0)
                .1
        }
    };
    let n = problem.dim();
    let mut indices = index::sample(&mut seed::rng(master, &[1]), n, g.n_dofs.min(n)).into_vec();
    indices.sort_unstable();

    let n_samples = c.stochastic_samples();
    let stochastic = |mode| RiskConfig {
        mode,
        n_samples,
        ..c.risk.clone()
    };
    let rn = SaaProblem::new(
        problem.clone(),
        &setup.model,
        stochastic(RiskMode::RiskNeutral),
    )
    .map_err(CliError::setup)?;
    let cvar = SaaProblem::with_samples(
        problem.clone(),
        rn.samples().to_vec(),
        stochastic(RiskMode::Cvar),
    )
    .map_err(CliError::setup)?;

    let dir = setup.out.join("gradcheck");
    setup.prepare_dir(
        &dir,
        &Manifest::new(
            "gradcheck",
            serde_json::json!({"gradcheck": c.seeds.gradcheck, "master": master, "samples": c.risk.master_seed}),
        ),
    )?;

    let (step, tol) = (g.step, g.tolerance);
    let mut components = Vec::new();
    for term in Term::ALL {
        let p = problem
            .with_weights(c.weights.only(term))
            .map_err(CliError::setup)?;
        components.push(
            check(term.name(), |x| p.total(x, None), &x, &indices, step, tol)
                .map_err(CliError::compute)?,
        );
    }
    components.push(
        check("total", |x| problem.total(x, None), &x, &indices, step, tol)
            .map_err(CliError::compute)?,
    );
    components.push(
        check(
            "risk_neutral",
            |x| rn.value_grad(x, None),
            &x,
            &indices,
            step,
            tol,
        )
        .map_err(CliError::compute)?,
    );
    let z = cvar.cvar_start(&x).map_err(CliError::compute)?;
    let mut z_indices = indices.clone();
    z_indices.push(n);
    let eps = g.epsilon;
    components.push(
        check(
            "cvar",
            |z| cvar.value_grad(z, Some(eps)),
            &z,
            &z_indices,
            step,
            tol,
        )
        .map_err(CliError::compute)?,
    );

    let report = GradcheckReport {
        step,
        tolerance: tol,
        epsilon: eps,
        n_samples,
        pass: components.iter().all(|c| c.pass),
        indices,
        components,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic(x: &[f64]) -> Result<ValueGrad> {
        Ok(ValueGrad {
            value: x.iter().map(|v| v.powi(4)).sum(),
            grad: x.iter().map(|v| 4.0 * v.powi(3)).collect(),
        })
    }

    #[test]
    fn exact_gradient_passes() {
        let x: Vec<f64> = (0..30).map(|i| 0.1 * i as f64 - 1.0).collect();
        let idx: Vec<usize> = (0..30).collect();
        let r = check("quartic", quartic, &x, &idx, 1e-6, 1e-5).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x: Vec<f64> = (0..30).map(|i| 0.1 * i as f64 - 1.0).collect();
        let idx: Vec<usize> = (0..30).collect();
        let corrupted = |x: &[f64]| {
            let mut vg = quartic(x)?;
            vg.grad[17] *= 1.001;
            Ok(vg)
        };
        let r = check("corrupted", corrupted, &x, &idx, 1e-6, 1e-5).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_index, Some(17));
    }

    #[test]
    fn vanishing_function_has_zero_error() {
        let zero = |x: &[f64]| {
            Ok(ValueGrad {
                value: 0.0,
                grad: vec![0.0; x.len()],
            })
        };
        let r = check(
            "zero",
            zero,
            &[1.0; 25],
            &(0..25).collect::<Vec<_>>(),
            1e-6,
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.pass);
    }
}
