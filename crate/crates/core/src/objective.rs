//! Per-sample coil objective `g(x, ζ)`.
//!
//! ```text
//! g = w_B ∮ |B(x,ζ) - B_QS|² dl + w_∇B ∮ ‖∇B(x,ζ) - ∇B_QS‖_F² dl
//!   + w_len Σ_i (L_i - L0_i)²
//!   + w_curv Σ_i ∮ max(κ_i - κ0, 0)² dl
//!   + w_dist Σ_{i<i'} ∮∮ max(d_min - |Γ_i - Γ_i'|, 0)² dθ dθ'
//!   + w_arc Σ_i ∮ (|Γ_i'| - L_i/2π)² dθ
//! ```
//!
//! The mismatch integrals run over the fixed target axis with arclength
//! trapezoid weights. Regularizers see only the unperturbed design: length,
//! curvature and arclength terms sum over base coils, the distance term over
//! all physical coil pairs.
//!
//! The optimization vector is `[shape DOFs..., currents / current_scale...]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, FieldEvaluation};
use crate::geometry::{self, CoilSet, CurveSamples, FourierCurve, PhysicalCoil, QuadratureGrid};
use crate::math::{self, Mat3, Vec3};
use crate::perturbation::PerturbationSample;

/// JSON form of a lone Fourier curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveDocument {
    pub order: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFieldDocument {
    pub axis: CurveDocument,
    pub n_axis_nodes: usize,
    #[serde(rename = "B_QS")]
    pub b_qs: Vec<[f64; 3]>,
    /// Row-major `∂B_i/∂x_j`.
    #[serde(rename = "gradB_QS")]
    pub gradb_qs: Vec<[f64; 9]>,
    pub iota_target: f64,
}

/// Fixed axis with the target field and its gradient at the axis nodes.
#[derive(Debug, Clone)]
pub struct TargetField {
    pub axis: FourierCurve,
    pub grid: QuadratureGrid,
    pub points: Vec<Vec3>,
    /// `|Γ_a'(θ_k)| · 2π/n`
    pub arclength_weights: Vec<f64>,
    pub b_qs: Vec<Vec3>,
    pub gradb_qs: Vec<Mat3>,
    pub iota_target: f64,
}

impl TargetField {
    pub fn new(
        axis: FourierCurve,
        n_axis_nodes: usize,
        b_qs: Vec<Vec3>,
        gradb_qs: Vec<Mat3>,
        iota_target: f64,
    ) -> Result<Self> {
        let grid = QuadratureGrid::new(n_axis_nodes)?;
        if b_qs.len() != n_axis_nodes || gradb_qs.len() != n_axis_nodes {
            return Err(Error::ShapeMismatch(format!(
                "target arrays have {} / {} entries, axis grid has {n_axis_nodes}",
                b_qs.len(),
                gradb_qs.len()
            )));
        }
        let samples = axis.eval(&grid)?;
        let geo = geometry::geometry_from_samples(&samples, &grid)?;
        let arclength_weights = geo.speed.iter().map(|s| s * grid.weight()).collect();
        Ok(Self {
            axis,
            grid,
            points: samples.points,
            arclength_weights,
            b_qs,
            gradb_qs,
            iota_target,
        })
    }

    pub fn from_document(doc: &TargetFieldDocument) -> Result<Self> {
        let axis = FourierCurve::from_dofs(doc.axis.order, doc.axis.coefficients.clone())?;
        let grad = doc
            .gradb_qs
            .iter()
            .map(|g| [[g[0], g[1], g[2]], [g[3], g[4], g[5]], [g[6], g[7], g[8]]])
            .collect();
        Self::new(
            axis,
            doc.n_axis_nodes,
            doc.b_qs.clone(),
            grad,
            doc.iota_target,
        )
    }

    pub fn to_document(&self) -> TargetFieldDocument {
        TargetFieldDocument {
            axis: CurveDocument {
                order: self.axis.order(),
                coefficients: self.axis.dofs().to_vec(),
            },
            n_axis_nodes: self.grid.len(),
            b_qs: self.b_qs.clone(),
            gradb_qs: self
                .gradb_qs
                .iter()
                .map(|g| {
                    [
                        g[0][0], g[0][1], g[0][2], g[1][0], g[1][1], g[1][2], g[2][0], g[2][1],
                        g[2][2],
                    ]
                })
                .collect(),
            iota_target: self.iota_target,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Same axis, target replaced by the field of `coils`.
    pub fn with_field_of(&self, coils: &[PhysicalCoil]) -> Result<Self> {
        let ev = field::biot_savart(coils, &self.points)?;
        Ok(Self {
            b_qs: ev.b,
            gradb_qs: ev.grad,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub w_b: f64,
    pub w_gradb: f64,
    pub w_len: f64,
    /// Per base coil; `None` uses the initial design's lengths.
    pub target_lengths: Option<Vec<f64>>,
    pub w_curv: f64,
    pub kappa_max: f64,
    pub w_dist: f64,
    pub d_min: f64,
    pub w_arc: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_b: 0.5,
            w_gradb: 0.5,
            w_len: 1.0,
            target_lengths: None,
            w_curv: 1.0,
            kappa_max: 10.0,
            w_dist: 1.0,
            d_min: 0.1,
            w_arc: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn zero() -> Self {
        Self {
            w_b: 0.0,
            w_gradb: 0.0,
            w_len: 0.0,
            target_lengths: None,
            w_curv: 0.0,
            kappa_max: 0.0,
            w_dist: 0.0,
            d_min: 0.0,
            w_arc: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_b", self.w_b),
            ("w_gradb", self.w_gradb),
            ("w_len", self.w_len),
            ("w_curv", self.w_curv),
            ("kappa_max", self.kappa_max),
            ("w_dist", self.w_dist),
            ("d_min", self.d_min),
            ("w_arc", self.w_arc),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Copy with every weight zeroed except the one for `term`.
    pub fn only(&self, term: Term) -> Self {
        let mut w = Self {
            target_lengths: self.target_lengths.clone(),
            kappa_max: self.kappa_max,
            d_min: self.d_min,
            ..Self::zero()
        };
        match term {
            Term::FieldMismatch => w.w_b = self.w_b,
            Term::GradientMismatch => w.w_gradb = self.w_gradb,
            Term::Length => w.w_len = self.w_len,
            Term::Curvature => w.w_curv = self.w_curv,
            Term::Distance => w.w_dist = self.w_dist,
            Term::Arclength => w.w_arc = self.w_arc,
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    FieldMismatch,
    GradientMismatch,
    Length,
    Curvature,
    Distance,
    Arclength,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::FieldMismatch,
        Term::GradientMismatch,
        Term::Length,
        Term::Curvature,
        Term::Distance,
        Term::Arclength,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Term::FieldMismatch => "field_mismatch",
            Term::GradientMismatch => "gradient_mismatch",
            Term::Length => "length",
            Term::Curvature => "curvature",
            Term::Distance => "distance",
            Term::Arclength => "arclength",
        }
    }
}

/// Value and gradient with respect to the optimization vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl ValueGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }

    fn accumulate(&mut self, other: &ValueGrad) {
        self.value += other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
    }
}

/// Coil design problem against a fixed target.
#[derive(Debug, Clone)]
pub struct CoilProblem {
    template: CoilSet,
    grid: QuadratureGrid,
    target: TargetField,
    weights: ObjectiveWeights,
    target_lengths: Vec<f64>,
    current_scale: f64,
}

impl CoilProblem {
    /// `current_scale = None` uses the mean absolute current of `template`.
    pub fn new(
        template: CoilSet,
        grid: QuadratureGrid,
        target: TargetField,
        weights: ObjectiveWeights,
        current_scale: Option<f64>,
    ) -> Result<Self> {
        weights.validate()?;
        for c in &template.curves {
            if grid.len() < c.min_nodes() {
                return Err(Error::GridTooCoarse {
                    nodes: grid.len(),
                    order: c.order(),
                    required: c.min_nodes(),
                });
            }
        }
        let target_lengths = match &weights.target_lengths {
            Some(l) if l.len() != template.n_base() => {
                return Err(Error::ShapeMismatch(format!(
                    "{} target lengths for {} base coils",
                    l.len(),
                    template.n_base()
                )))
            }
            Some(l) => l.clone(),
            None => template
                .curves
                .iter()
                .map(|c| c.geometry(&grid).map(|g| g.length))
                .collect::<Result<_>>()?,
        };
        let current_scale = match current_scale {
            Some(s) => s,
            None => {
                let mean = template.currents.iter().map(|c| c.abs()).sum::<f64>()
                    / template.n_base().max(1) as f64;
                if mean > 0.0 {
                    mean
                } else {
                    1.0
                }
            }
        };
        if !(current_scale > 0.0) || !current_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "current scale must be > 0, got {current_scale}"
            )));
        }
        Ok(Self {
            template,
            grid,
            target,
            weights,
            target_lengths,
            current_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.template.dof_count()
    }

    pub fn shape_dim(&self) -> usize {
        self.template.shape_dof_count()
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn target(&self) -> &TargetField {
        &self.target
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.weights
    }

    pub fn target_lengths(&self) -> &[f64] {
        &self.target_lengths
    }

    pub fn current_scale(&self) -> f64 {
        self.current_scale
    }

    pub fn template(&self) -> &CoilSet {
        &self.template
    }

    pub fn n_physical(&self) -> usize {
        self.template.n_physical()
    }

    /// Same problem with different weights (target lengths stay resolved).
    pub fn with_weights(&self, weights: ObjectiveWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights: ObjectiveWeights {
                target_lengths: Some(self.target_lengths.clone()),
                ..weights
            },
            ..self.clone()
        })
    }

    pub fn with_target(&self, target: TargetField) -> Self {
        Self {
            target,
            ..self.clone()
        }
    }

    pub fn pack(&self, coils: &CoilSet) -> Vec<f64> {
        let mut x = coils.to_dofs();
        let s = self.shape_dim();
        for v in &mut x[s..] {
            *v /= self.current_scale;
        }
        x
    }

    pub fn x0(&self) -> Vec<f64> {
        self.pack(&self.template)
    }

    pub fn coils(&self, x: &[f64]) -> Result<CoilSet> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} DOFs, got {}",
                self.dim(),
                x.len()
            )));
        }
        let mut raw = x.to_vec();
        let s = self.shape_dim();
        for v in &mut raw[s..] {
            *v *= self.current_scale;
        }
        self.template.with_dofs(&raw)
    }

    fn scale_current_grads(&self, g: &mut [f64]) {
        let s = self.shape_dim();
        for v in &mut g[s..] {
            *v *= self.current_scale;
        }
    }

    /// Unperturbed base samples and physical coils.
    pub fn physical(&self, x: &[f64]) -> Result<(CoilSet, Vec<CurveSamples>, Vec<PhysicalCoil>)> {
        let coils = self.coils(x)?;
        let base = coils.eval_base(&self.grid)?;
        let phys = geometry::expand_samples(&coils, &base, self.grid.len());
        Ok((coils, base, phys))
    }

    /// Physical coils with `sample` applied.
    pub fn perturbed(
        &self,
        x: &[f64],
        sample: Option<&PerturbationSample>,
    ) -> Result<Vec<PhysicalCoil>> {
        let (_, _, mut phys) = self.physical(x)?;
        if let Some(s) = sample {
            s.apply(&mut phys)?;
        }
        Ok(phys)
    }

    pub fn field_on_axis(
        &self,
        x: &[f64],
        sample: Option<&PerturbationSample>,
    ) -> Result<FieldEvaluation> {
        let phys = self.perturbed(x, sample)?;
        field::biot_savart(&phys, &self.target.points)
    }

    /// Field and field-gradient mismatch on the axis for one sample.
    pub fn qs_mismatch(&self, x: &[f64], sample: Option<&PerturbationSample>) -> Result<ValueGrad> {
        self.mismatch(x, sample, true)
    }

    /// Mismatch value only; bitwise equal to `qs_mismatch(..).value`.
    pub fn qs_mismatch_value(&self, x: &[f64], sample: Option<&PerturbationSample>) -> Result<f64> {
        Ok(self.mismatch(x, sample, false)?.value)
    }

    fn mismatch(
        &self,
        x: &[f64],
        sample: Option<&PerturbationSample>,
        with_grad: bool,
    ) -> Result<ValueGrad> {
        let w = &self.weights;
        if w.w_b == 0.0 && w.w_gradb == 0.0 {
            return Ok(ValueGrad::zeros(if with_grad { self.dim() } else { 0 }));
        }
        let (coils, _, mut phys) = self.physical(x)?;
        if let Some(s) = sample {
            s.apply(&mut phys)?;
        }
        let t = &self.target;
        let ev = field::biot_savart(&phys, &t.points)?;
        let mut value = 0.0;
        let mut d_b = Vec::with_capacity(t.points.len());
        let mut d_g = Vec::with_capacity(t.points.len());
        for k in 0..t.points.len() {
            let wl = t.arclength_weights[k];
            let db = math::sub(ev.b[k], t.b_qs[k]);
            let mut dg = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    dg[i][j] = ev.grad[k][i][j] - t.gradb_qs[k][i][j];
                }
            }
            value += wl * (w.w_b * math::dot(db, db) + w.w_gradb * math::frobenius_sq(&dg));
            d_b.push(math::scale(2.0 * w.w_b * wl, db));
            let mut gg = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    gg[i][j] = 2.0 * w.w_gradb * wl * dg[i][j];
                }
            }
            d_g.push(gg);
        }
        if !with_grad {
            return Ok(ValueGrad {
                value,
                grad: Vec::new(),
            });
        }
        let adj = field::biot_savart_vjp(&phys, &t.points, &d_b, &d_g)?;
        let mut grad =
            coils.pullback(&self.grid, &adj.d_points, &adj.d_tangents, &adj.d_currents)?;
        self.scale_current_grads(&mut grad);
        Ok(ValueGrad { value, grad })
    }

    /// Buildability penalties on the unperturbed design.
    pub fn regularizers(&self, x: &[f64]) -> Result<ValueGrad> {
        let w = &self.weights;
        let dim = self.dim();
        if w.w_len == 0.0 && w.w_curv == 0.0 && w.w_arc == 0.0 && w.w_dist == 0.0 {
            return Ok(ValueGrad::zeros(dim));
        }
        let (coils, base, phys) = self.physical(x)?;
        let n = self.grid.len();
        let h = self.grid.weight();
        let mut value = 0.0;
        let mut grad = vec![0.0; dim];
        let offsets = coils.dof_offsets();

        if w.w_len != 0.0 || w.w_curv != 0.0 || w.w_arc != 0.0 {
            for (b, s) in base.iter().enumerate() {
                let geo = geometry::geometry_from_samples(s, &self.grid)?;
                let mut d_t = vec![[0.0; 3]; n];
                let mut d_s = vec![[0.0; 3]; n];

                if w.w_len != 0.0 {
                    let dl = geo.length - self.target_lengths[b];
                    value += w.w_len * dl * dl;
                    for m in 0..n {
                        let u = math::scale(2.0 * w.w_len * dl * h / geo.speed[m], s.tangents[m]);
                        d_t[m] = math::add(d_t[m], u);
                    }
                }

                if w.w_arc != 0.0 {
                    let target_speed = geo.length / (2.0 * std::f64::consts::PI);
                    let mut resid_sum = 0.0;
                    for m in 0..n {
                        let r = geo.speed[m] - target_speed;
                        value += w.w_arc * h * r * r;
                        resid_sum += r;
                        let u = math::scale(2.0 * w.w_arc * h * r / geo.speed[m], s.tangents[m]);
                        d_t[m] = math::add(d_t[m], u);
                    }
                    // through t = L/2π; vanishes up to rounding since Σ h r = 0
                    let coef = -2.0 * w.w_arc * h * resid_sum * h / (2.0 * std::f64::consts::PI);
                    for m in 0..n {
                        let u = math::scale(coef / geo.speed[m], s.tangents[m]);
                        d_t[m] = math::add(d_t[m], u);
                    }
                }

                if w.w_curv != 0.0 {
                    for m in 0..n {
                        let excess = geo.curvature[m] - w.kappa_max;
                        if excess <= 0.0 {
                            continue;
                        }
                        let a = s.tangents[m];
                        let bb = s.second[m];
                        let speed = geo.speed[m];
                        value += w.w_curv * h * speed * excess * excess;
                        let c = math::cross(a, bb);
                        let cn = math::norm(c);
                        let chat = math::scale(1.0 / cn, c);
                        let s3 = speed * speed * speed;
                        let s5 = s3 * speed * speed;
                        let dk_da = math::sub(
                            math::scale(1.0 / s3, math::cross(bb, chat)),
                            math::scale(3.0 * cn / s5, a),
                        );
                        let dk_db = math::scale(1.0 / s3, math::cross(chat, a));
                        let f = w.w_curv * h;
                        let da = math::add(
                            math::scale(f * excess * excess / speed, a),
                            math::scale(2.0 * f * speed * excess, dk_da),
                        );
                        d_t[m] = math::add(d_t[m], da);
                        d_s[m] = math::add(d_s[m], math::scale(2.0 * f * speed * excess, dk_db));
                    }
                }

                let g = coils.curves[b].pullback(&self.grid, None, Some(&d_t), Some(&d_s))?;
                for (k, v) in g.into_iter().enumerate() {
                    grad[offsets[b] + k] += v;
                }
            }
        }

        if w.w_dist != 0.0 {
            let mut d_p: Vec<Vec<Vec3>> = phys
                .iter()
                .map(|c| vec![[0.0; 3]; c.points.len()])
                .collect();
            let mut any = false;
            let hh = h * h;
            for i in 0..phys.len() {
                for j in (i + 1)..phys.len() {
                    for (mi, p) in phys[i].points.iter().enumerate() {
                        for (mj, q) in phys[j].points.iter().enumerate() {
                            let r = math::sub(*p, *q);
                            let d = math::norm(r);
                            let gap = w.d_min - d;
                            if gap <= 0.0 {
                                continue;
                            }
                            any = true;
                            value += w.w_dist * hh * gap * gap;
                            let u = math::scale(-2.0 * w.w_dist * hh * gap / d, r);
                            d_p[i][mi] = math::add(d_p[i][mi], u);
                            d_p[j][mj] = math::sub(d_p[j][mj], u);
                        }
                    }
                }
            }
            if any {
                let zeros_t: Vec<Vec<Vec3>> = phys
                    .iter()
                    .map(|c| vec![[0.0; 3]; c.points.len()])
                    .collect();
                let g = coils.pullback(&self.grid, &d_p, &zeros_t, &vec![0.0; phys.len()])?;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }

        Ok(ValueGrad { value, grad })
    }

    /// `g(x, ζ)`; `None` is the unperturbed design.
    pub fn total(&self, x: &[f64], sample: Option<&PerturbationSample>) -> Result<ValueGrad> {
        let mut out = self.qs_mismatch(x, sample)?;
        out.accumulate(&self.regularizers(x)?);
        Ok(out)
    }

    /// Value of `g(x, ζ)` without the adjoint pass.
    pub fn total_value(&self, x: &[f64], sample: Option<&PerturbationSample>) -> Result<f64> {
        Ok(self.qs_mismatch_value(x, sample)? + self.regularizers(x)?.value)
    }

    /// A single weighted term of `g`.
    pub fn term(
        &self,
        term: Term,
        x: &[f64],
        sample: Option<&PerturbationSample>,
    ) -> Result<ValueGrad> {
        self.with_weights(self.weights.only(term))?.total(x, sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance;
    use crate::perturbation::{PerturbationKernel, PerturbationModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn fd_check(
        problem: &CoilProblem,
        x: &[f64],
        sample: Option<&PerturbationSample>,
        indices: &[usize],
        tol: f64,
    ) {
        let vg = problem.total(x, sample).unwrap();
        let scale = math::inf_norm(&vg.grad).max(1e-300);
        for &k in indices {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            let fd = (problem.total(&xp, sample).unwrap().value
                - problem.total(&xm, sample).unwrap().value)
                / (2.0 * h);
            let err = (fd - vg.grad[k]).abs() / scale;
            assert!(
                err < tol,
                "dof {k}: fd {fd:e} analytic {:e} (scale {scale:e})",
                vg.grad[k]
            );
        }
    }

    fn random_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }

    #[test]
    fn self_target_is_zero() {
        let inst = instance::DeskInstance::small();
        let x = inst.problem.x0();
        let phys = inst.problem.perturbed(&x, None).unwrap();
        let target = inst.problem.target().with_field_of(&phys).unwrap();
        let p = inst
            .problem
            .with_target(target)
            .with_weights(ObjectiveWeights {
                w_b: 0.5,
                w_gradb: 0.5,
                ..ObjectiveWeights::zero()
            });
        let vg = p.unwrap().total(&x, None).unwrap();
        assert_eq!(vg.value, 0.0);
        assert!(vg.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_sample_reproduces_deterministic_bitwise() {
        let inst = instance::DeskInstance::small();
        let p = &inst.problem;
        let x = inst.perturbed_start(1, 0.01);
        let zero = PerturbationSample::zero(p.n_physical(), p.grid().len());
        assert_eq!(
            p.total(&x, None).unwrap(),
            p.total(&x, Some(&zero)).unwrap()
        );
    }

    #[test]
    fn mismatch_gradient_matches_fd() {
        let inst = instance::DeskInstance::small();
        let p = inst.problem.with_weights(ObjectiveWeights {
            w_b: 0.5,
            w_gradb: 0.5,
            ..ObjectiveWeights::zero()
        });
        let p = p.unwrap();
        let x = inst.perturbed_start(2, 0.02);
        let model = PerturbationModel::new(
            PerturbationKernel::new(1e-2, 0.4 * PI, 3).unwrap(),
            *p.grid(),
        )
        .unwrap();
        let s = model.draw(3, 0, p.n_physical());
        let mut idx = random_indices(p.dim(), 20, 4);
        idx.extend(p.shape_dim()..p.dim());
        fd_check(&p, &x, Some(&s), &idx, 1e-6);
    }

    #[test]
    fn regularizer_terms_match_fd() {
        let inst = instance::DeskInstance::small();
        let x = inst.perturbed_start(5, 0.05);
        for term in [
            Term::Length,
            Term::Curvature,
            Term::Distance,
            Term::Arclength,
        ] {
            // thresholds chosen so every penalty is active somewhere
            let w = ObjectiveWeights {
                w_len: 1.0,
                target_lengths: Some(vec![2.0; inst.problem.template().n_base()]),
                w_curv: 1.0,
                kappa_max: 2.5,
                w_dist: 1.0,
                d_min: 0.4,
                w_arc: 1.0,
                ..ObjectiveWeights::zero()
            }
            .only(term);
            let p = inst.problem.with_weights(w).unwrap();
            let vg = p.total(&x, None).unwrap();
            assert!(vg.value > 0.0, "{term:?} inactive");
            let idx: Vec<usize> = (0..p.dim()).collect();
            fd_check(&p, &x, None, &idx, 1e-6);
        }
    }

    #[test]
    fn total_gradient_matches_fd_on_three_coil_stub() {
        let inst = instance::DeskInstance::three_coil_stub();
        let x = inst.perturbed_start(6, 0.01);
        let p = &inst.problem;
        let model = PerturbationModel::new(
            PerturbationKernel::new(3e-3, 0.4 * PI, 3).unwrap(),
            *p.grid(),
        )
        .unwrap();
        let s = model.draw(8, 1, p.n_physical());
        let idx: Vec<usize> = (0..p.dim()).collect();
        fd_check(p, &x, Some(&s), &idx, 1e-6);
    }

    #[test]
    fn circle_regularizers_vanish() {
        let r = 0.5;
        let c = FourierCurve::circle(2, [2.0, 0.0, 0.0], r, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let grid = QuadratureGrid::new(32).unwrap();
        let coils = CoilSet::new(vec![c], vec![1e5], 4, false).unwrap();
        let axis = FourierCurve::circle(1, [0.0; 3], 2.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let target =
            TargetField::new(axis, 8, vec![[0.0; 3]; 8], vec![[[0.0; 3]; 3]; 8], 0.0).unwrap();
        let w = ObjectiveWeights {
            w_len: 1.0,
            target_lengths: Some(vec![2.0 * PI * r]),
            w_curv: 1.0,
            kappa_max: 1.0 / r,
            w_dist: 1.0,
            d_min: 0.1,
            w_arc: 1.0,
            ..ObjectiveWeights::zero()
        };
        let p = CoilProblem::new(coils, grid, target, w, None).unwrap();
        let vg = p.regularizers(&p.x0()).unwrap();
        assert!(vg.value.abs() < 1e-24, "{}", vg.value);
    }

    #[test]
    fn arclength_penalty_zero_for_constant_speed_curve() {
        // a tilted ellipse is not constant speed; a circle in any orientation is
        let c = FourierCurve::circle(3, [1.0, 2.0, 3.0], 0.7, [0.0, 0.6, 0.8], [1.0, 0.0, 0.0]);
        let grid = QuadratureGrid::new(24).unwrap();
        let coils = CoilSet::new(vec![c], vec![1.0], 1, false).unwrap();
        let axis = FourierCurve::circle(1, [0.0; 3], 5.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let target =
            TargetField::new(axis, 4, vec![[0.0; 3]; 4], vec![[[0.0; 3]; 3]; 4], 0.0).unwrap();
        let w = ObjectiveWeights {
            w_arc: 1.0,
            ..ObjectiveWeights::zero()
        };
        let p = CoilProblem::new(coils, grid, target, w, None).unwrap();
        assert!(p.regularizers(&p.x0()).unwrap().value < 1e-28);
    }

    #[test]
    fn objective_nonnegative_and_weightless_is_zero() {
        let inst = instance::DeskInstance::small();
        let x = inst.perturbed_start(9, 0.02);
        assert!(inst.problem.total(&x, None).unwrap().value >= 0.0);
        let p = inst.problem.with_weights(ObjectiveWeights::zero()).unwrap();
        let vg = p.total(&x, None).unwrap();
        assert_eq!(vg.value, 0.0);
        assert!(vg.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn mismatch_invariant_under_coil_relabeling() {
        let inst = instance::DeskInstance::small();
        let p = &inst.problem;
        let x = inst.perturbed_start(10, 0.02);
        let coils = p.coils(&x).unwrap();
        let mut swapped = coils.clone();
        swapped.curves.swap(0, 1);
        swapped.currents.swap(0, 1);
        let a = p.qs_mismatch(&x, None).unwrap().value;
        let b = p.qs_mismatch(&p.pack(&swapped), None).unwrap().value;
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn penalty_gradient_continuous_across_activation() {
        // curvature just above and just below the threshold
        let inst = instance::DeskInstance::small();
        let x = inst.problem.x0();
        let (_, base, _) = inst.problem.physical(&x).unwrap();
        let geo = geometry::geometry_from_samples(&base[0], inst.problem.grid()).unwrap();
        let kmax = geo.curvature.iter().cloned().fold(0.0, f64::max);
        for kappa_max in [kmax * (1.0 - 1e-4), kmax * (1.0 + 1e-9)] {
            let w = ObjectiveWeights {
                w_curv: 1.0,
                kappa_max,
                ..ObjectiveWeights::zero()
            };
            let p = inst.problem.with_weights(w).unwrap();
            let vg = p.total(&x, None).unwrap();
            if vg.value == 0.0 {
                assert!(vg.grad.iter().all(|g| *g == 0.0));
            } else {
                let idx: Vec<usize> = (0..p.dim()).collect();
                // FD straddles the kink of max(·,0)² only through its C¹ part
                let scale = math::inf_norm(&vg.grad);
                for &k in &idx {
                    let h = 1e-7;
                    let mut xp = x.clone();
                    xp[k] += h;
                    let mut xm = x.clone();
                    xm[k] -= h;
                    let fd = (p.total(&xp, None).unwrap().value
                        - p.total(&xm, None).unwrap().value)
                        / (2.0 * h);
                    assert!((fd - vg.grad[k]).abs() < 1e-5 * scale + 1e-12, "dof {k}");
                }
            }
        }
    }

    #[test]
    fn target_document_round_trip() {
        let inst = instance::DeskInstance::small();
        let t = inst.problem.target();
        let back = TargetField::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.b_qs, t.b_qs);
        assert_eq!(back.gradb_qs, t.gradb_qs);
        assert_eq!(back.points, t.points);
    }
}
