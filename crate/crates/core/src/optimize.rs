//! Limited-memory BFGS with a strong-Wolfe line search, multi-start
//! orchestration and the CVaR smoothing continuation.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::seed;
use crate::stochastic::SaaProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimOptions {
    pub memory: usize,
    /// Stop once `‖g‖_∞ ≤ gtol · ‖g₀‖_∞`.
    pub gtol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    pub multistart: usize,
    pub init_std: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            memory: 20,
            gtol: 1e-10,
            max_iters: 5000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            multistart: 8,
            init_std: 0.01,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "line-search constants need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 || self.max_line_search == 0 {
            return Err(Error::InvalidParameter(
                "memory and max_line_search must be >= 1".into(),
            ));
        }
        if !(self.gtol >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidParameter(
                "gtol and init_std must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Entry 0 is the starting point with step 0.
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl OptimResult {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }

    pub fn grad_reduction(&self) -> f64 {
        let first = self.history[0].grad_inf_norm;
        let last = self.history.last().map_or(first, |r| r.grad_inf_norm);
        if first == 0.0 {
            0.0
        } else {
            last / first
        }
    }

    pub fn write_history_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.history {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Optimizer state written when the objective turns non-finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpState {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trial_x: Option<Vec<f64>>,
    pub trial_value: Option<f64>,
    pub history: Vec<IterationRecord>,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    g: Vec<f64>,
}

struct Evaluator<'a, F> {
    f: &'a mut F,
    count: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Evaluator<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        (self.f)(x)
    }
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let m = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    m.is_finite().then_some(m)
}

/// Unconstrained minimization of a smooth `f` returning `(value, gradient)`.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let mut ev = Evaluator {
        f: &mut f,
        count: 0,
    };
    let (f0, g0) = ev.eval(x0)?;
    let mut history = vec![IterationRecord {
        iter: 0,
        objective: f0,
        grad_inf_norm: math::inf_norm(&g0),
        step: 0.0,
    }];
    if !finite(f0, &g0) {
        return Err(Error::NonFinite {
            iteration: 0,
            state: Box::new(DumpState {
                iteration: 0,
                x: x0.to_vec(),
                value: f0,
                gradient: g0,
                trial_x: None,
                trial_value: None,
                history,
            }),
        });
    }
    let g0_norm = math::inf_norm(&g0);
    let target = opts.gtol * g0_norm;
    let mut cur = Point {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let finish =
        |cur: Point, history: Vec<IterationRecord>, termination, evaluations| OptimResult {
            x: cur.x,
            value: cur.f,
            gradient: cur.g,
            history,
            termination,
            evaluations,
        };

    if g0_norm <= target || g0_norm == 0.0 {
        return Ok(finish(
            cur,
            history,
            Termination::GradientTolerance,
            ev.count,
        ));
    }

    for iter in 1..=opts.max_iters {
        let mut d = two_loop(&cur.g, &s_hist, &y_hist, &rho_hist);
        let mut dphi0 = math::vdot(&d, &cur.g);
        if !(dphi0 < 0.0) {
            // stale curvature pairs; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = cur.g.iter().map(|v| -v).collect();
            dphi0 = math::vdot(&d, &cur.g);
        }
        let alpha0 = if s_hist.is_empty() {
            (1.0 / math::inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        let trial = line_search(&mut ev, &cur, &d, dphi0, alpha0, opts, iter, &history)?;
        let Some(trial) = trial else {
            return Ok(finish(
                cur,
                history,
                Termination::LineSearchFailure,
                ev.count,
            ));
        };

        let s: Vec<f64> = d.iter().map(|v| trial.alpha * v).collect();
        let y: Vec<f64> = trial.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = math::vdot(&s, &y);
        if sy > f64::EPSILON * math::vdot(&y, &y) && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s.clone());
            y_hist.push(y);
        }
        let x_new: Vec<f64> = cur.x.iter().zip(&s).map(|(a, b)| a + b).collect();
        if x_new == cur.x {
            // the accepted step no longer moves x in floating point
            return Ok(finish(
                cur,
                history,
                Termination::LineSearchFailure,
                ev.count,
            ));
        }
        cur = Point {
            x: x_new,
            f: trial.f,
            g: trial.g,
        };
        let gn = math::inf_norm(&cur.g);
        history.push(IterationRecord {
            iter,
            objective: cur.f,
            grad_inf_norm: gn,
            step: trial.alpha * math::vnorm(&d),
        });
        if gn <= target {
            return Ok(finish(
                cur,
                history,
                Termination::GradientTolerance,
                ev.count,
            ));
        }
    }
    Ok(finish(cur, history, Termination::MaxIterations, ev.count))
}

fn two_loop(g: &[f64], s: &[Vec<f64>], y: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = s.len();
    let mut a = vec![0.0; m];
    for i in (0..m).rev() {
        a[i] = rho[i] * math::vdot(&s[i], &q);
        for (qv, yv) in q.iter_mut().zip(&y[i]) {
            *qv -= a[i] * yv;
        }
    }
    if m > 0 {
        let gamma = math::vdot(&s[m - 1], &y[m - 1]) / math::vdot(&y[m - 1], &y[m - 1]);
        for v in &mut q {
            *v *= gamma;
        }
    }
    for i in 0..m {
        let b = rho[i] * math::vdot(&y[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s[i]) {
            *qv += (a[i] - b) * sv;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Strong-Wolfe search along `d`. Once the predicted decrease drops to the
/// rounding level of `f`, sufficient decrease is relaxed to
/// `φ(α) ≤ φ(0) + δ|φ(0)|` with `δ = NOISE_REL` (approximate Wolfe) while the curvature
/// condition stays strict. `None` when no acceptable
/// step was found.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    ev: &mut Evaluator<'_, F>,
    cur: &Point,
    d: &[f64],
    dphi0: f64,
    alpha0: f64,
    opts: &OptimOptions,
    iter: usize,
    history: &[IterationRecord],
) -> Result<Option<Trial>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let phi0 = cur.f;
    let noise = NOISE_REL * phi0.abs();
    let sufficient = |alpha: f64, phi: f64| {
        phi <= phi0 + opts.c1 * alpha * dphi0
            || (opts.c1 * alpha * dphi0.abs() <= noise && phi <= phi0 + noise)
    };
    let curvature = |dphi: f64| dphi.abs() <= -opts.c2 * dphi0;
    // value comparisons below the rounding level defer to the derivative
    let higher = |alpha: f64, phi: f64, reference: f64| {
        let tol = if opts.c1 * alpha * dphi0.abs() <= noise {
            noise
        } else {
            0.0
        };
        phi > reference + tol
    };

    let mut evals = 0usize;
    let mut best: Option<Trial> = None;
    let mut probe = |alpha: f64, evals: &mut usize| -> Result<Trial> {
        *evals += 1;
        let x: Vec<f64> = cur.x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = ev.eval(&x)?;
        if !finite(f, &g) {
            return Err(Error::NonFinite {
                iteration: iter,
                state: Box::new(DumpState {
                    iteration: iter,
                    x: cur.x.clone(),
                    value: cur.f,
                    gradient: cur.g.clone(),
                    trial_x: Some(x),
                    trial_value: Some(f),
                    history: history.to_vec(),
                }),
            });
        }
        let dphi = math::vdot(&g, d);
        Ok(Trial { alpha, f, dphi, g })
    };
    let keep_best = |best: &mut Option<Trial>, t: &Trial| {
        if sufficient(t.alpha, t.f) && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                alpha: t.alpha,
                f: t.f,
                dphi: t.dphi,
                g: t.g.clone(),
            });
        }
    };

    let mut prev = Trial {
        alpha: 0.0,
        f: phi0,
        dphi: dphi0,
        g: cur.g.clone(),
    };
    let mut alpha = alpha0;
    let (mut lo, mut hi);
    loop {
        let t = probe(alpha, &mut evals)?;
        keep_best(&mut best, &t);
        if !sufficient(t.alpha, t.f) || (evals > 1 && higher(t.alpha, t.f, prev.f)) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(t.dphi) {
            return Ok(Some(t));
        }
        if t.dphi >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if evals >= opts.max_line_search {
            return Ok(best);
        }
        let next = cubic_min(prev.alpha, prev.f, prev.dphi, t.alpha, t.f, t.dphi)
            .filter(|a| *a > 2.0 * t.alpha && *a < 10.0 * t.alpha)
            .unwrap_or(4.0 * t.alpha);
        prev = t;
        alpha = next;
    }

    while evals < opts.max_line_search {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b {
            break;
        }
        let guess = cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi)
            .filter(|m| *m > a + 0.1 * width && *m < b - 0.1 * width)
            .unwrap_or(0.5 * (a + b));
        let t = probe(guess, &mut evals)?;
        keep_best(&mut best, &t);
        if !sufficient(t.alpha, t.f) || higher(t.alpha, t.f, lo.f) {
            hi = t;
        } else {
            if curvature(t.dphi) {
                return Ok(Some(t));
            }
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    Ok(best.filter(|b| b.alpha > 0.0))
}

/// Relative accuracy assumed for objective values. Sums of squared
/// differences of nearly equal fields lose several digits, so this sits well
/// above machine epsilon.
pub const NOISE_REL: f64 = 1e-12;

/// Outcome of one start of a multi-start run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResult {
    pub start: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub result: OptimResult,
}

/// Start `k` perturbs the first `shape_dim` entries of `x_base` by
/// `N(0, init_std²)` from a per-start seed.
pub fn start_points(
    x_base: &[f64],
    shape_dim: usize,
    count: usize,
    init_std: f64,
    master_seed: u64,
) -> Vec<(u64, Vec<f64>)> {
    (0..count)
        .map(|k| {
            let s = seed::derive(master_seed, &[k as u64]);
            let mut rng = seed::rng(s, &[]);
            let mut x = x_base.to_vec();
            if init_std > 0.0 {
                let normal = Normal::new(0.0, init_std).expect("finite std");
                for v in &mut x[..shape_dim] {
                    *v += normal.sample(&mut rng);
                }
            }
            (s, x)
        })
        .collect()
}

/// Independent minimizations from `opts.multistart` perturbed starts, run in
/// parallel and returned in start order.
pub fn multi_start<F, S>(
    solve: S,
    x_base: &[f64],
    shape_dim: usize,
    opts: &OptimOptions,
    master_seed: u64,
) -> Result<Vec<StartResult>>
where
    S: Fn(usize, &[f64]) -> Result<F> + Sync,
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let starts = start_points(
        x_base,
        shape_dim,
        opts.multistart,
        opts.init_std,
        master_seed,
    );
    starts
        .into_par_iter()
        .enumerate()
        .map(|(k, (s, x0))| {
            let f = solve(k, &x0)?;
            let result = minimize(f, &x0, opts)?;
            Ok(StartResult {
                start: k,
                seed: s,
                x0,
                result,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStage {
    pub epsilon: f64,
    pub start: Vec<f64>,
    pub result: OptimResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub stages: Vec<ContinuationStage>,
}

impl ContinuationResult {
    pub fn last(&self) -> &OptimResult {
        &self.stages.last().expect("non-empty schedule").result
    }
}

/// Solve the smoothed CVaR problem for each `ε` of the schedule in turn,
/// starting from `(x_rn, t)` with `t` the empirical α-quantile at `x_rn` and
/// warm-starting every later stage from the previous minimizer.
pub fn cvar_continuation(
    saa: &SaaProblem,
    x_rn: &[f64],
    opts: &OptimOptions,
) -> Result<ContinuationResult> {
    let mut z = saa.cvar_start(x_rn)?;
    let mut stages = Vec::new();
    for &eps in &saa.config().epsilon_schedule {
        let start = z.clone();
        let result = minimize(
            |z: &[f64]| {
                let vg = saa.value_grad(z, Some(eps))?;
                Ok((vg.value, vg.grad))
            },
            &start,
            opts,
        )?;
        z = result.x.clone();
        stages.push(ContinuationStage {
            epsilon: eps,
            start,
            result,
        });
    }
    Ok(ContinuationResult { stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic(a: Vec<f64>, h: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let mut f = 0.0;
            let mut g = vec![0.0; x.len()];
            for i in 0..x.len() {
                let r = x[i] - a[i];
                f += h[i] * r * r;
                g[i] = 2.0 * h[i] * r;
            }
            Ok((f, g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    fn assert_descent(r: &OptimResult) {
        for w in r.history.windows(2) {
            assert!(
                w[1].objective <= w[0].objective,
                "{} > {}",
                w[1].objective,
                w[0].objective
            );
        }
    }

    #[test]
    fn isotropic_quadratic_converges_fast() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let opts = OptimOptions {
            gtol: 1e-14,
            ..Default::default()
        };
        let r = minimize(quadratic(a.clone(), vec![1.0; 50]), &x0, &opts).unwrap();
        let err: f64 =
            r.x.iter()
                .zip(&a)
                .map(|(x, a)| (x - a).powi(2))
                .sum::<f64>()
                .sqrt();
        assert!(err < 1e-8, "{err}");
        assert!(r.iterations() <= 55);
        assert_descent(&r);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let opts = OptimOptions {
            gtol: 1e-12,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
        assert_descent(&r);
    }

    #[test]
    fn beats_gradient_descent_on_ill_conditioned_quadratic() {
        let n = 30;
        let h: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(3.0 * i as f64 / (n - 1) as f64))
            .collect();
        let a = vec![0.5; n];
        let x0 = vec![0.0; n];
        let opts = OptimOptions {
            gtol: 1e-6,
            max_iters: 100_000,
            ..Default::default()
        };
        let qn = minimize(quadratic(a, h), &x0, &opts).unwrap();
        assert_eq!(qn.termination, Termination::GradientTolerance);
        let gd_iters = steepest_descent_iterations(n, 1e-6);
        assert!(
            (qn.iterations() as f64) < 0.1 * gd_iters as f64,
            "{} vs {gd_iters}",
            qn.iterations()
        );
    }

    /// Exact-line-search steepest descent on the same quadratic.
    fn steepest_descent_iterations(n: usize, gtol: f64) -> usize {
        let h: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(3.0 * i as f64 / (n - 1) as f64))
            .collect();
        let mut x = vec![0.0; n];
        let grad = |x: &[f64]| -> Vec<f64> {
            x.iter().zip(&h).map(|(x, h)| 2.0 * h * (x - 0.5)).collect()
        };
        let g0 = math::inf_norm(&grad(&x));
        for it in 1..1_000_000 {
            let g = grad(&x);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            let ghg: f64 = g.iter().zip(&h).map(|(g, h)| 2.0 * h * g * g).sum();
            let alpha = gg / ghg;
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= alpha * gi;
            }
            if math::inf_norm(&grad(&x)) <= gtol * g0 {
                return it;
            }
        }
        usize::MAX
    }

    #[test]
    fn converges_below_rounding_level_of_value() {
        // with an offset of 1 the last orders of gradient reduction change f
        // by far less than one ulp
        let h: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let a = vec![0.3; 20];
        let mut q = quadratic(a, h);
        let f = move |x: &[f64]| q(x).map(|(v, g)| (1.0 + v, g));
        let opts = OptimOptions {
            gtol: 1e-12,
            ..Default::default()
        };
        let r = minimize(f, &vec![1.0; 20], &opts).unwrap();
        assert_eq!(r.termination, Termination::GradientTolerance);
        assert!(r.grad_reduction() <= 1e-12);
    }

    #[test]
    fn non_finite_aborts_with_state() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] < 0.5 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((x[0] * x[0], vec![2.0 * x[0]]))
            }
        };
        match minimize(f, &[2.0], &OptimOptions::default()) {
            Err(Error::NonFinite { state, .. }) => {
                assert!(state.x[0] >= 0.5);
                assert!(state.trial_x.unwrap()[0] < 0.5);
                assert!(state.trial_value.unwrap().is_nan());
            }
            other => panic!("{other:?}"),
        }
        let bad = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::INFINITY, vec![0.0])) };
        assert!(matches!(
            minimize(bad, &[1.0], &OptimOptions::default()),
            Err(Error::NonFinite { iteration: 0, .. })
        ));
    }

    #[test]
    fn invalid_constants_rejected() {
        let o = OptimOptions {
            c1: 0.9,
            c2: 0.5,
            ..Default::default()
        };
        assert!(minimize(rosenbrock, &[0.0, 0.0], &o).is_err());
    }

    #[test]
    fn replay_is_identical() {
        let opts = OptimOptions::default();
        let a = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        let b = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_std_starts_coincide() {
        let opts = OptimOptions {
            multistart: 3,
            init_std: 0.0,
            ..Default::default()
        };
        let rs = multi_start(|_, _| Ok(rosenbrock), &[-1.2, 1.0], 2, &opts, 4).unwrap();
        assert_eq!(rs.len(), 3);
        assert!(rs.iter().all(|r| r.result == rs[0].result));
        assert!(rs[0].seed != rs[1].seed);
    }

    #[test]
    fn start_points_touch_only_shape_dofs() {
        let base = vec![1.0; 10];
        let pts = start_points(&base, 6, 8, 0.01, 9);
        assert_eq!(pts.len(), 8);
        for (_, x) in &pts {
            assert!(x[6..].iter().all(|v| *v == 1.0));
            assert!(x[..6].iter().any(|v| *v != 1.0));
        }
        assert_ne!(pts[0].1, pts[1].1);
        assert_eq!(pts, start_points(&base, 6, 8, 0.01, 9));
    }

    #[test]
    fn history_csv_header() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &OptimOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_history_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iter,objective,grad_inf_norm,step\n0,"));
        assert_eq!(s.lines().count(), r.history.len() + 1);
    }
}
