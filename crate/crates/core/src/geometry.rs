//! Closed Fourier curves, quadrature grids and coil-set symmetry expansion.
//!
//! DOF layout of a [`FourierCurve`] of order `n_p`: for each coordinate
//! `j = x, y, z` the block `[c_j0, c_j1, s_j1, c_j2, s_j2, ..., c_jn, s_jn]`,
//! so coordinate `j` occupies `j*(2n_p+1) .. (j+1)*(2n_p+1)`. A [`CoilSet`]
//! concatenates the base-coil blocks in coil order and appends one current per
//! base coil after all shape DOFs. This layout is shared by the optimizer,
//! the JSON documents and every gradient in the crate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// Tangent norms below this are treated as a degenerate parametrization.
pub const DEGENERATE_SPEED: f64 = 1e-12;

/// Uniform periodic trapezoid grid on `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    n: usize,
}

impl QuadratureGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "quadrature grid needs at least one node".into(),
            ));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn node(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn weight(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// `(cos, sin)` of `2πk/n`, reduced modulo `n` so every harmonic on the
    /// grid uses exactly the same table entries.
    fn unit_circle(&self) -> Vec<(f64, f64)> {
        (0..self.n)
            .map(|k| {
                let (s, c) = self.node(k).sin_cos();
                (c, s)
            })
            .collect()
    }
}

/// Positions and parameter derivatives of a curve at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSamples {
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub second: Vec<Vec3>,
}

/// Length, curvature and speed `‖Γ'‖` at the nodes.
#[derive(Debug, Clone)]
pub struct CurveGeometry {
    pub length: f64,
    pub curvature: Vec<f64>,
    pub speed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierCurve {
    order: usize,
    dofs: Vec<f64>,
}

impl FourierCurve {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            dofs: vec![0.0; Self::dof_count(order)],
        }
    }

    pub fn from_dofs(order: usize, dofs: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter(
                "curve order must be at least 1".into(),
            ));
        }
        if dofs.len() != Self::dof_count(order) {
            return Err(Error::ShapeMismatch(format!(
                "order {order} curve needs {} coefficients, got {}",
                Self::dof_count(order),
                dofs.len()
            )));
        }
        Ok(Self { order, dofs })
    }

    /// Circle of `radius` in the plane spanned by `e1`, `e2` around `center`,
    /// traversed as `center + radius (cos θ e1 + sin θ e2)`.
    pub fn circle(order: usize, center: Vec3, radius: f64, e1: Vec3, e2: Vec3) -> Self {
        Self::ellipse(order, center, radius, radius, e1, e2)
    }

    pub fn ellipse(order: usize, center: Vec3, a: f64, b: f64, e1: Vec3, e2: Vec3) -> Self {
        let mut curve = Self::zeros(order.max(1));
        for j in 0..3 {
            curve.set_constant(j, center[j]);
            curve.set_cos(j, 1, a * e1[j]);
            curve.set_sin(j, 1, b * e2[j]);
        }
        curve
    }

    pub const fn dof_count(order: usize) -> usize {
        3 * (2 * order + 1)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    fn block(&self, j: usize) -> usize {
        j * (2 * self.order + 1)
    }

    pub fn constant(&self, j: usize) -> f64 {
        self.dofs[self.block(j)]
    }

    pub fn cos_coeff(&self, j: usize, l: usize) -> f64 {
        self.dofs[self.block(j) + 2 * l - 1]
    }

    pub fn sin_coeff(&self, j: usize, l: usize) -> f64 {
        self.dofs[self.block(j) + 2 * l]
    }

    pub fn set_constant(&mut self, j: usize, v: f64) {
        let i = self.block(j);
        self.dofs[i] = v;
    }

    pub fn set_cos(&mut self, j: usize, l: usize, v: f64) {
        let i = self.block(j) + 2 * l - 1;
        self.dofs[i] = v;
    }

    pub fn set_sin(&mut self, j: usize, l: usize, v: f64) {
        let i = self.block(j) + 2 * l;
        self.dofs[i] = v;
    }

    pub fn min_nodes(&self) -> usize {
        2 * self.order + 1
    }

    fn check_grid(&self, grid: &QuadratureGrid) -> Result<()> {
        if grid.len() < self.min_nodes() {
            return Err(Error::GridTooCoarse {
                nodes: grid.len(),
                order: self.order,
                required: self.min_nodes(),
            });
        }
        Ok(())
    }

    /// Evaluate at an arbitrary parameter value.
    pub fn eval_at(&self, theta: f64) -> (Vec3, Vec3, Vec3) {
        let mut p = [0.0; 3];
        let mut d1 = [0.0; 3];
        let mut d2 = [0.0; 3];
        for j in 0..3 {
            p[j] = self.constant(j);
            for l in 1..=self.order {
                let lf = l as f64;
                let (s, c) = (lf * theta).sin_cos();
                let (cc, sc) = (self.cos_coeff(j, l), self.sin_coeff(j, l));
                p[j] += cc * c + sc * s;
                d1[j] += lf * (sc * c - cc * s);
                d2[j] -= lf * lf * (cc * c + sc * s);
            }
        }
        (p, d1, d2)
    }

    /// Exact evaluation of the series and its first two derivatives on `grid`.
    pub fn eval(&self, grid: &QuadratureGrid) -> Result<CurveSamples> {
        self.check_grid(grid)?;
        let n = grid.len();
        let table = grid.unit_circle();
        let mut points = vec![[0.0; 3]; n];
        let mut tangents = vec![[0.0; 3]; n];
        let mut second = vec![[0.0; 3]; n];
        for m in 0..n {
            for j in 0..3 {
                let mut p = self.constant(j);
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for l in 1..=self.order {
                    let (c, s) = table[(l * m) % n];
                    let lf = l as f64;
                    let (cc, sc) = (self.cos_coeff(j, l), self.sin_coeff(j, l));
                    p += cc * c + sc * s;
                    d1 += lf * (sc * c - cc * s);
                    d2 -= lf * lf * (cc * c + sc * s);
                }
                points[m][j] = p;
                tangents[m][j] = d1;
                second[m][j] = d2;
            }
        }
        Ok(CurveSamples {
            points,
            tangents,
            second,
        })
    }

    pub fn geometry(&self, grid: &QuadratureGrid) -> Result<CurveGeometry> {
        let samples = self.eval(grid)?;
        geometry_from_samples(&samples, grid)
    }

    /// Transpose of the DOF → (points, tangents, second derivatives) map.
    ///
    /// Any of the three upstream gradient arrays may be omitted.
    pub fn pullback(
        &self,
        grid: &QuadratureGrid,
        d_points: Option<&[Vec3]>,
        d_tangents: Option<&[Vec3]>,
        d_second: Option<&[Vec3]>,
    ) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let n = grid.len();
        for (name, arr) in [
            ("points", d_points),
            ("tangents", d_tangents),
            ("second", d_second),
        ] {
            if let Some(a) = arr {
                if a.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} gradient has {} nodes, grid has {n}",
                        a.len()
                    )));
                }
            }
        }
        let table = grid.unit_circle();
        let zero = [0.0; 3];
        let mut out = vec![0.0; self.dofs.len()];
        for m in 0..n {
            let gp = d_points.map_or(zero, |a| a[m]);
            let gt = d_tangents.map_or(zero, |a| a[m]);
            let gs = d_second.map_or(zero, |a| a[m]);
            for j in 0..3 {
                let b = self.block(j);
                out[b] += gp[j];
                for l in 1..=self.order {
                    let (c, s) = table[(l * m) % n];
                    let lf = l as f64;
                    out[b + 2 * l - 1] += gp[j] * c - gt[j] * lf * s - gs[j] * lf * lf * c;
                    out[b + 2 * l] += gp[j] * s + gt[j] * lf * c - gs[j] * lf * lf * s;
                }
            }
        }
        Ok(out)
    }
}

pub fn geometry_from_samples(
    samples: &CurveSamples,
    grid: &QuadratureGrid,
) -> Result<CurveGeometry> {
    let mut speed = Vec::with_capacity(samples.tangents.len());
    let mut curvature = Vec::with_capacity(samples.tangents.len());
    for (m, (t, s)) in samples.tangents.iter().zip(&samples.second).enumerate() {
        let v = math::norm(*t);
        if !(v >= DEGENERATE_SPEED) {
            return Err(Error::DegenerateCurve { node: m, speed: v });
        }
        speed.push(v);
        curvature.push(math::norm(math::cross(*t, *s)) / (v * v * v));
    }
    let length = grid.weight() * speed.iter().sum::<f64>();
    Ok(CurveGeometry {
        length,
        curvature,
        speed,
    })
}

/// How a physical coil is obtained from its base coil:
/// `Γ_phys(θ) = Q Γ_base(±θ)`, with the parameter reversed for the
/// stellarator-symmetric half.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryImage {
    pub base: usize,
    pub period: usize,
    pub flipped: bool,
    pub rotation: Mat3,
    /// Multiplies the base current. Orientation reversal already carries the
    /// sign change required by stellarator symmetry, so this stays `+1`.
    pub current_sign: f64,
}

impl SymmetryImage {
    /// Base-grid node feeding physical node `i`.
    pub fn base_node(&self, i: usize, n: usize) -> usize {
        if self.flipped {
            (n - i) % n
        } else {
            i
        }
    }

    pub fn tangent_sign(&self) -> f64 {
        if self.flipped {
            -1.0
        } else {
            1.0
        }
    }
}

/// A closed filament sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalCoil {
    pub base: usize,
    pub points: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    pub curves: Vec<FourierCurve>,
    pub currents: Vec<f64>,
    pub n_fp: usize,
    pub stellarator_symmetric: bool,
}

impl CoilSet {
    pub fn new(
        curves: Vec<FourierCurve>,
        currents: Vec<f64>,
        n_fp: usize,
        stellarator_symmetric: bool,
    ) -> Result<Self> {
        if curves.len() != currents.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} curves but {} currents",
                curves.len(),
                currents.len()
            )));
        }
        if n_fp == 0 {
            return Err(Error::InvalidParameter("n_fp must be at least 1".into()));
        }
        Ok(Self {
            curves,
            currents,
            n_fp,
            stellarator_symmetric,
        })
    }

    pub fn n_base(&self) -> usize {
        self.curves.len()
    }

    pub fn n_physical(&self) -> usize {
        self.n_base() * self.n_fp * if self.stellarator_symmetric { 2 } else { 1 }
    }

    pub fn shape_dof_count(&self) -> usize {
        self.curves.iter().map(|c| c.dofs().len()).sum()
    }

    /// Shape DOFs followed by currents.
    pub fn dof_count(&self) -> usize {
        self.shape_dof_count() + self.n_base()
    }

    /// Offsets of each base coil's DOF block in the flat vector.
    pub fn dof_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.n_base());
        let mut acc = 0;
        for c in &self.curves {
            offsets.push(acc);
            acc += c.dofs().len();
        }
        offsets
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dof_count());
        for c in &self.curves {
            x.extend_from_slice(c.dofs());
        }
        x.extend_from_slice(&self.currents);
        x
    }

    /// Same structure with new DOFs (shape then currents).
    pub fn with_dofs(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.dof_count() {
            return Err(Error::ShapeMismatch(format!(
                "coil set has {} DOFs, vector has {}",
                self.dof_count(),
                x.len()
            )));
        }
        let mut out = self.clone();
        let mut at = 0;
        for c in &mut out.curves {
            let k = c.dofs().len();
            c.dofs_mut().copy_from_slice(&x[at..at + k]);
            at += k;
        }
        out.currents.copy_from_slice(&x[at..]);
        Ok(out)
    }

    /// Physical coil transforms. The first `n_base` entries are the base coils.
    pub fn images(&self) -> Vec<SymmetryImage> {
        let flips: &[bool] = if self.stellarator_symmetric {
            &[false, true]
        } else {
            &[false]
        };
        let reflect: Mat3 = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        let mut out = Vec::with_capacity(self.n_physical());
        for &flipped in flips {
            for period in 0..self.n_fp {
                let rot = if period == 0 {
                    math::IDENTITY3
                } else {
                    math::rotation_z(2.0 * PI * period as f64 / self.n_fp as f64)
                };
                let rotation = if flipped {
                    math::mat_mul(&rot, &reflect)
                } else {
                    rot
                };
                for base in 0..self.n_base() {
                    out.push(SymmetryImage {
                        base,
                        period,
                        flipped,
                        rotation,
                        current_sign: 1.0,
                    });
                }
            }
        }
        out
    }

    pub fn eval_base(&self, grid: &QuadratureGrid) -> Result<Vec<CurveSamples>> {
        self.curves.iter().map(|c| c.eval(grid)).collect()
    }

    /// Full physical coil array, one entry per symmetry image.
    pub fn expand(&self, grid: &QuadratureGrid) -> Result<Vec<PhysicalCoil>> {
        let base = self.eval_base(grid)?;
        Ok(expand_samples(self, &base, grid.len()))
    }

    /// Chain rule back to `[shape DOFs..., currents...]` from per-physical-coil
    /// gradients. Images accumulate into their base coil via `Qᵀ`.
    pub fn pullback(
        &self,
        grid: &QuadratureGrid,
        d_points: &[Vec<Vec3>],
        d_tangents: &[Vec<Vec3>],
        d_currents: &[f64],
    ) -> Result<Vec<f64>> {
        let images = self.images();
        let n = grid.len();
        if d_points.len() != images.len()
            || d_tangents.len() != images.len()
            || d_currents.len() != images.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "expected gradients for {} physical coils",
                images.len()
            )));
        }
        let mut base_dp = vec![vec![[0.0; 3]; n]; self.n_base()];
        let mut base_dt = vec![vec![[0.0; 3]; n]; self.n_base()];
        let mut base_di = vec![0.0; self.n_base()];
        for (c, img) in images.iter().enumerate() {
            if d_points[c].len() != n || d_tangents[c].len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "physical coil {c}: gradient arrays must have {n} nodes"
                )));
            }
            let ts = img.tangent_sign();
            for i in 0..n {
                let j = img.base_node(i, n);
                let gp = math::mat_t_vec(&img.rotation, d_points[c][i]);
                let gt = math::mat_t_vec(&img.rotation, d_tangents[c][i]);
                for k in 0..3 {
                    base_dp[img.base][j][k] += gp[k];
                    base_dt[img.base][j][k] += ts * gt[k];
                }
            }
            base_di[img.base] += img.current_sign * d_currents[c];
        }
        let mut out = Vec::with_capacity(self.dof_count());
        for (b, curve) in self.curves.iter().enumerate() {
            out.extend(curve.pullback(grid, Some(&base_dp[b]), Some(&base_dt[b]), None)?);
        }
        out.extend(base_di);
        Ok(out)
    }

    pub fn to_document(&self) -> CoilSetDocument {
        CoilSetDocument {
            n_fp: self.n_fp,
            stellarator_symmetric: self.stellarator_symmetric,
            coils: self
                .curves
                .iter()
                .zip(&self.currents)
                .map(|(c, &current)| CoilDocument {
                    order: c.order(),
                    coefficients: c.dofs().to_vec(),
                    current,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &CoilSetDocument) -> Result<Self> {
        let curves = doc
            .coils
            .iter()
            .map(|c| FourierCurve::from_dofs(c.order, c.coefficients.clone()))
            .collect::<Result<Vec<_>>>()?;
        let currents = doc.coils.iter().map(|c| c.current).collect();
        Self::new(curves, currents, doc.n_fp, doc.stellarator_symmetric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// Apply the symmetry transforms to already-evaluated base samples.
pub fn expand_samples(coils: &CoilSet, base: &[CurveSamples], n: usize) -> Vec<PhysicalCoil> {
    coils
        .images()
        .iter()
        .map(|img| {
            let src = &base[img.base];
            let ts = img.tangent_sign();
            let mut points = Vec::with_capacity(n);
            let mut tangents = Vec::with_capacity(n);
            for i in 0..n {
                let j = img.base_node(i, n);
                points.push(math::mat_vec(&img.rotation, src.points[j]));
                tangents.push(math::scale(
                    ts,
                    math::mat_vec(&img.rotation, src.tangents[j]),
                ));
            }
            PhysicalCoil {
                base: img.base,
                points,
                tangents,
                current: img.current_sign * coils.currents[img.base],
            }
        })
        .collect()
}

/// JSON form of a single base coil: coefficients in the documented DOF order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilDocument {
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilSetDocument {
    pub n_fp: usize,
    pub stellarator_symmetric: bool,
    pub coils: Vec<CoilDocument>,
}
