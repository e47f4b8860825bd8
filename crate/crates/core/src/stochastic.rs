//! Scalarizing the random objective over a frozen sample set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{CoilProblem, ValueGrad};
use crate::perturbation::{PerturbationModel, PerturbationSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    Deterministic,
    RiskNeutral,
    Cvar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub mode: RiskMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_schedule")]
    pub epsilon_schedule: Vec<f64>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_alpha() -> f64 {
    0.9
}

pub fn default_schedule() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}

fn default_n_samples() -> usize {
    16
}

impl RiskConfig {
    pub fn deterministic() -> Self {
        Self {
            mode: RiskMode::Deterministic,
            alpha: default_alpha(),
            epsilon_schedule: default_schedule(),
            n_samples: 0,
            master_seed: 0,
        }
    }

    pub fn risk_neutral(n_samples: usize, master_seed: u64) -> Self {
        Self {
            mode: RiskMode::RiskNeutral,
            n_samples,
            master_seed,
            ..Self::deterministic()
        }
    }

    pub fn cvar(alpha: f64, n_samples: usize, master_seed: u64) -> Self {
        Self {
            mode: RiskMode::Cvar,
            alpha,
            n_samples,
            master_seed,
            ..Self::deterministic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == RiskMode::Deterministic {
            return Ok(());
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
        }
        if self.mode == RiskMode::Cvar {
            if !(0.0..1.0).contains(&self.alpha) {
                return Err(Error::InvalidParameter(format!(
                    "alpha must lie in [0, 1), got {}",
                    self.alpha
                )));
            }
            if self.epsilon_schedule.is_empty() {
                return Err(Error::InvalidParameter("epsilon_schedule is empty".into()));
            }
            if self
                .epsilon_schedule
                .iter()
                .any(|e| !(*e > 0.0) || !e.is_finite())
            {
                return Err(Error::InvalidParameter(
                    "epsilon_schedule entries must be positive".into(),
                ));
            }
            if self.epsilon_schedule.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidParameter(
                    "epsilon_schedule must be strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Smoothed positive part `h_ε` and its derivative.
pub fn smoothed_plus(x: f64, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing parameter must be > 0, got {eps}"
        )));
    }
    let half = 0.5 * eps;
    Ok(if x >= half {
        (x, 1.0)
    } else if x <= -half {
        (0.0, 0.0)
    } else {
        // In s = (x + ε/2)/ε: h = ε s³ (1 - s/2), h' = s² (3 - 2s).
        let s = (x + half) / eps;
        let s2 = s * s;
        (eps * s2 * s * (1.0 - 0.5 * s), s2 * (3.0 - 2.0 * s))
    })
}

/// Lower empirical α-quantile: the `⌈αN⌉`-th smallest value.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((alpha * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Discrete CVaR of the empirical distribution, fractional tail weight
/// included: `min_t t + Σ (g_k - t)_+ / ((1-α)N)`.
pub fn discrete_cvar(values: &[f64], alpha: f64) -> f64 {
    let t = empirical_quantile(values, alpha);
    let scale = 1.0 / ((1.0 - alpha) * values.len() as f64);
    t + scale * values.iter().map(|g| (g - t).max(0.0)).sum::<f64>()
}

/// Mean of the `k` largest values.
pub fn tail_mean(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// `t + Σ h_ε(g_k - t) / ((1-α)N)` with its derivatives in `g_k` and `t`.
pub fn smoothed_cvar(values: &[f64], t: f64, alpha: f64, eps: f64) -> Result<(f64, Vec<f64>, f64)> {
    let scale = 1.0 / ((1.0 - alpha) * values.len() as f64);
    let mut sum = 0.0;
    let mut dsum = 0.0;
    let mut weights = Vec::with_capacity(values.len());
    for g in values {
        let (h, dh) = smoothed_plus(g - t, eps)?;
        sum += h;
        dsum += dh;
        weights.push(scale * dh);
    }
    Ok((t + scale * sum, weights, 1.0 - scale * dsum))
}

/// Frozen-sample SAA problem.
#[derive(Debug, Clone)]
pub struct SaaProblem {
    problem: CoilProblem,
    samples: Vec<PerturbationSample>,
    config: RiskConfig,
}

impl SaaProblem {
    /// Draw `config.n_samples` samples with ids `0..N` from `model`.
    pub fn new(
        problem: CoilProblem,
        model: &PerturbationModel,
        config: RiskConfig,
    ) -> Result<Self> {
        config.validate()?;
        let samples = match config.mode {
            RiskMode::Deterministic => Vec::new(),
            _ => model.draw_samples(
                config.master_seed,
                0,
                config.n_samples,
                problem.n_physical(),
            ),
        };
        Ok(Self {
            problem,
            samples,
            config,
        })
    }

    pub fn with_samples(
        problem: CoilProblem,
        samples: Vec<PerturbationSample>,
        config: RiskConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode != RiskMode::Deterministic && samples.is_empty() {
            return Err(Error::InvalidParameter(
                "stochastic mode needs at least one sample".into(),
            ));
        }
        Ok(Self {
            problem,
            samples,
            config,
        })
    }

    pub fn problem(&self) -> &CoilProblem {
        &self.problem
    }

    pub fn samples(&self) -> &[PerturbationSample] {
        &self.samples
    }

    pub fn config(&self) -> &RiskConfig {
        &self.config
    }

    /// Length of the optimization vector, `t` included in CVaR mode.
    pub fn dim(&self) -> usize {
        self.problem.dim() + usize::from(self.config.mode == RiskMode::Cvar)
    }

    /// `g(x, ζ_k)` with gradients for every frozen sample, in sample order.
    pub fn per_sample(&self, x: &[f64]) -> Result<Vec<ValueGrad>> {
        let reg = self.problem.regularizers(x)?;
        let mut out: Vec<ValueGrad> = self
            .samples
            .par_iter()
            .map(|s| self.problem.qs_mismatch(x, Some(s)))
            .collect::<Result<_>>()?;
        for vg in &mut out {
            vg.value += reg.value;
            for (a, b) in vg.grad.iter_mut().zip(&reg.grad) {
                *a += b;
            }
        }
        Ok(out)
    }

    pub fn per_sample_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let reg = self.problem.regularizers(x)?.value;
        self.samples
            .par_iter()
            .map(|s| Ok(self.problem.qs_mismatch_value(x, Some(s))? + reg))
            .collect()
    }

    /// Scalarized value and gradient. In CVaR mode `z = (x, t)` and `eps`
    /// is required.
    pub fn value_grad(&self, z: &[f64], eps: Option<f64>) -> Result<ValueGrad> {
        let n = self.problem.dim();
        match self.config.mode {
            RiskMode::Deterministic => self.problem.total(z, None),
            RiskMode::RiskNeutral => {
                let per = self.per_sample(z)?;
                Ok(mean(&per, n))
            }
            RiskMode::Cvar => {
                if z.len() != n + 1 {
                    return Err(Error::MissingCvarVariable);
                }
                let eps = eps.ok_or_else(|| {
                    Error::InvalidParameter("CVaR evaluation needs a smoothing parameter".into())
                })?;
                let (x, t) = (&z[..n], z[n]);
                let per = self.per_sample(x)?;
                let values: Vec<f64> = per.iter().map(|p| p.value).collect();
                let (value, weights, dt) = smoothed_cvar(&values, t, self.config.alpha, eps)?;
                let mut grad = vec![0.0; n + 1];
                for (p, w) in per.iter().zip(&weights) {
                    if *w == 0.0 {
                        continue;
                    }
                    for (g, pg) in grad.iter_mut().zip(&p.grad) {
                        *g += w * pg;
                    }
                }
                grad[n] = dt;
                Ok(ValueGrad { value, grad })
            }
        }
    }

    /// Extended start `(x, t)` with `t` at the empirical α-quantile.
    pub fn cvar_start(&self, x: &[f64]) -> Result<Vec<f64>> {
        let values = self.per_sample_values(x)?;
        let mut z = x.to_vec();
        z.push(empirical_quantile(&values, self.config.alpha));
        Ok(z)
    }
}

/// Sample mean of values and gradients, summed in index order.
pub fn mean(per: &[ValueGrad], dim: usize) -> ValueGrad {
    let inv = 1.0 / per.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for p in per {
        value += p.value;
        for (g, pg) in grad.iter_mut().zip(&p.grad) {
            *g += pg;
        }
    }
    ValueGrad {
        value: value * inv,
        grad: grad.into_iter().map(|g| g * inv).collect(),
    }
}

/// `g(x, ζ'_k)` for fresh draws `k = 0..n` from `master_seed`.
pub fn oos_evaluate(
    problem: &CoilProblem,
    x: &[f64],
    model: &PerturbationModel,
    master_seed: u64,
    n: usize,
) -> Result<Vec<f64>> {
    let reg = problem.regularizers(x)?.value;
    let n_coils = problem.n_physical();
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let s = model.draw(master_seed, k, n_coils);
            Ok(problem.qs_mismatch_value(x, Some(&s))? + reg)
        })
        .collect()
}
