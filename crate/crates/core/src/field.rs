//! Biot–Savart field of closed filaments discretized by the periodic
//! trapezoid rule, with the field Jacobian and its reverse-mode derivative.
//!
//! `B(x) = Σ_coils μ₀I/4π · (2π/n) Σ_m t_m × (x - p_m) / |x - p_m|³`
//!
//! Gradients are stored as `grad[i][j] = ∂B_i/∂x_j`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::PhysicalCoil;
use crate::math::{self, Mat3, Vec3};

pub const MU0: f64 = 4e-7 * PI;
/// Evaluation closer than this to any coil node is rejected.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEvaluation {
    pub b: Vec<Vec3>,
    pub grad: Vec<Mat3>,
}

/// Reverse-mode output: sensitivities of a scalar to every filament input.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilGradients {
    pub d_points: Vec<Vec<Vec3>>,
    pub d_tangents: Vec<Vec<Vec3>>,
    pub d_currents: Vec<f64>,
}

impl CoilGradients {
    pub fn zeros(coils: &[PhysicalCoil]) -> Self {
        Self {
            d_points: coils
                .iter()
                .map(|c| vec![[0.0; 3]; c.points.len()])
                .collect(),
            d_tangents: coils
                .iter()
                .map(|c| vec![[0.0; 3]; c.points.len()])
                .collect(),
            d_currents: vec![0.0; coils.len()],
        }
    }
}

#[inline]
fn separation(x: Vec3, p: Vec3) -> Result<(Vec3, f64)> {
    let r = math::sub(x, p);
    let d2 = math::dot(r, r);
    if d2 < MIN_DISTANCE * MIN_DISTANCE {
        return Err(Error::SingularEvaluation {
            point: x,
            distance: d2.sqrt(),
        });
    }
    Ok((r, d2))
}

fn check_coil(c: &PhysicalCoil) -> Result<()> {
    if c.points.len() != c.tangents.len() || c.points.is_empty() {
        return Err(Error::ShapeMismatch(
            "coil points and tangents must be non-empty and equal length".into(),
        ));
    }
    Ok(())
}

/// Field and Jacobian at a single point.
pub fn field_at(coils: &[PhysicalCoil], x: Vec3) -> Result<(Vec3, Mat3)> {
    let mut b = [0.0; 3];
    let mut g = [[0.0; 3]; 3];
    for coil in coils {
        check_coil(coil)?;
        let c = MU0 / (4.0 * PI) * (2.0 * PI / coil.points.len() as f64) * coil.current;
        let mut bc = [0.0; 3];
        let mut gc = [[0.0; 3]; 3];
        for (p, t) in coil.points.iter().zip(&coil.tangents) {
            let (r, d2) = separation(x, *p)?;
            let inv = 1.0 / d2.sqrt();
            let inv3 = inv * inv * inv;
            let inv5 = inv3 * inv * inv;
            let txr = math::cross(*t, r);
            for i in 0..3 {
                bc[i] += txr[i] * inv3;
            }
            // (t × e_j)_i / |r|³ - 3 (t × r)_i r_j / |r|⁵
            let txe = [[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]];
            for i in 0..3 {
                for j in 0..3 {
                    gc[i][j] += txe[i][j] * inv3 - 3.0 * txr[i] * r[j] * inv5;
                }
            }
        }
        for i in 0..3 {
            b[i] += c * bc[i];
            for j in 0..3 {
                g[i][j] += c * gc[i][j];
            }
        }
    }
    Ok((b, g))
}

pub fn biot_savart(coils: &[PhysicalCoil], points: &[Vec3]) -> Result<FieldEvaluation> {
    let mut b = Vec::with_capacity(points.len());
    let mut grad = Vec::with_capacity(points.len());
    for x in points {
        let (bx, gx) = field_at(coils, *x)?;
        b.push(bx);
        grad.push(gx);
    }
    Ok(FieldEvaluation { b, grad })
}

/// Vector-Jacobian product of [`biot_savart`]: given `∂J/∂B` and `∂J/∂(∇B)` at
/// every evaluation point, return `∂J/∂p_m`, `∂J/∂t_m` and `∂J/∂I` per coil.
pub fn biot_savart_vjp(
    coils: &[PhysicalCoil],
    points: &[Vec3],
    d_b: &[Vec3],
    d_grad: &[Mat3],
) -> Result<CoilGradients> {
    if d_b.len() != points.len() || d_grad.len() != points.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} evaluation points but {} / {} upstream gradients",
            points.len(),
            d_b.len(),
            d_grad.len()
        )));
    }
    let mut out = CoilGradients::zeros(coils);
    for (ci, coil) in coils.iter().enumerate() {
        check_coil(coil)?;
        let c0 = MU0 / (4.0 * PI) * (2.0 * PI / coil.points.len() as f64);
        let c = c0 * coil.current;
        let mut d_current = 0.0;
        for (k, x) in points.iter().enumerate() {
            let gb = d_b[k];
            let gg = &d_grad[k];
            // Σ_j e_j × (column j of gg)
            let skew = [
                gg[2][1] - gg[1][2],
                gg[0][2] - gg[2][0],
                gg[1][0] - gg[0][1],
            ];
            for m in 0..coil.points.len() {
                let p = coil.points[m];
                let t = coil.tangents[m];
                let (r, d2) = separation(*x, p)?;
                let inv = 1.0 / d2.sqrt();
                let inv2 = inv * inv;
                let inv3 = inv2 * inv;
                let inv5 = inv3 * inv2;
                let inv7 = inv5 * inv2;

                let txr = math::cross(t, r);
                let gr = math::mat_vec(gg, r);
                let q = math::dot(gr, txr);
                let a = math::dot(t, skew);

                // d/dt
                let r_x_gb = math::cross(r, gb);
                let r_x_gr = math::cross(r, gr);
                let dt = &mut out.d_tangents[ci][m];
                for i in 0..3 {
                    dt[i] += c * (r_x_gb[i] * inv3 + skew[i] * inv3 - 3.0 * r_x_gr[i] * inv5);
                }

                // d/dr, then d/dp = -d/dr
                let gb_x_t = math::cross(gb, t);
                let rdot = math::dot(r, gb_x_t);
                let grad_q = math::add(math::mat_t_vec(gg, txr), math::cross(gr, t));
                let dp = &mut out.d_points[ci][m];
                for i in 0..3 {
                    let dr = gb_x_t[i] * inv3
                        - 3.0 * r[i] * rdot * inv5
                        - 3.0 * a * r[i] * inv5
                        - 3.0 * grad_q[i] * inv5
                        + 15.0 * q * r[i] * inv7;
                    dp[i] -= c * dr;
                }

                // d/dI: the field is linear in I
                d_current += math::dot(gb, txr) * inv3 + a * inv3 - 3.0 * q * inv5;
            }
        }
        out.d_currents[ci] = c0 * d_current;
    }
    Ok(out)
}

/// A magnetic field that can be sampled pointwise with its Jacobian.
pub trait MagneticField: Sync {
    fn b_and_grad(&self, x: Vec3) -> Result<(Vec3, Mat3)>;
}

/// Field of a fixed set of filaments.
#[derive(Debug, Clone)]
pub struct CoilField {
    pub coils: Vec<PhysicalCoil>,
}

impl MagneticField for CoilField {
    fn b_and_grad(&self, x: Vec3) -> Result<(Vec3, Mat3)> {
        field_at(&self.coils, x)
    }
}
