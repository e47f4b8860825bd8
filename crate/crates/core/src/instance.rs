//! Desk-scale problem instances.
//!
//! The reference design is a ring of elliptical coils whose cross-section
//! rotates with toroidal angle at half the field-period rate, which produces
//! a rotational transform on axis. Each reference coil also carries a fixed
//! pseudo-random deformation up to a Fourier order above the design order,
//! so the target cannot be matched exactly. The field and field gradient of
//! the reference along its own magnetic axis serve as the target, with its
//! rotational transform as the target transform. Optimization starts from
//! circular coils.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::CoilField;
use crate::geometry::{CoilSet, FourierCurve, QuadratureGrid};
use crate::math::Vec3;
use crate::objective::{CoilProblem, ObjectiveWeights, TargetField};
use crate::optimize;
use crate::seed;
use crate::trace::{self, TraceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceParams {
    pub n_base: usize,
    pub order: usize,
    /// Fourier order of the reference coils.
    pub reference_order: usize,
    /// Mode `l ≥ 2` of the reference deformation is uniform in `±amplitude / l²`.
    pub deformation_amplitude: f64,
    pub deformation_seed: u64,
    pub n_nodes: usize,
    pub n_axis_nodes: usize,
    pub n_fp: usize,
    pub major_radius: f64,
    /// Radius of the circular starting coils.
    pub coil_radius: f64,
    /// Semi-axes of the reference ellipses.
    pub ellipse: [f64; 2],
    pub current: f64,
}

impl InstanceParams {
    pub fn two_coil() -> Self {
        Self {
            n_base: 2,
            order: 4,
            reference_order: 6,
            deformation_amplitude: 0.05,
            deformation_seed: 1,
            n_nodes: 32,
            n_axis_nodes: 32,
            n_fp: 3,
            major_radius: 1.0,
            coil_radius: 0.5,
            ellipse: [0.8, 0.2],
            current: 1e5,
        }
    }
}

/// Weights used with the desk instances. The arclength term is what pins
/// the parametrization of each coil; with it much weaker, near-flat
/// reparametrization directions stall L-BFGS long before tight gradient
/// tolerances.
pub fn desk_weights() -> ObjectiveWeights {
    ObjectiveWeights {
        w_b: 0.5,
        w_gradb: 0.5,
        w_len: 1e-2,
        target_lengths: None,
        w_curv: 1e-1,
        kappa_max: 5.0,
        w_dist: 1e-2,
        d_min: 0.15,
        w_arc: 1e-1,
    }
}

#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub params: InstanceParams,
    pub reference: CoilSet,
    pub problem: CoilProblem,
}

fn poloidal_frame(phi: f64, tilt: f64) -> (Vec3, Vec3, Vec3) {
    let e_r = [phi.cos(), phi.sin(), 0.0];
    let (c, s) = (tilt.cos(), tilt.sin());
    let e1 = [c * e_r[0], c * e_r[1], s];
    let e2 = [-s * e_r[0], -s * e_r[1], c];
    (e_r, e1, e2)
}

/// Toroidal angles of the base coils, evenly filling half a field period.
pub fn base_angles(n_base: usize, n_fp: usize) -> Vec<f64> {
    let half = PI / n_fp as f64;
    (0..n_base)
        .map(|i| half * (i as f64 + 0.5) / n_base as f64)
        .collect()
}

fn ring(params: &InstanceParams, order: usize, a: f64, b: f64, rotate: bool) -> Result<CoilSet> {
    let curves = base_angles(params.n_base, params.n_fp)
        .into_iter()
        .map(|phi| {
            let tilt = if rotate {
                0.5 * params.n_fp as f64 * phi
            } else {
                0.0
            };
            let (e_r, e1, e2) = poloidal_frame(phi, tilt);
            let center = [
                params.major_radius * e_r[0],
                params.major_radius * e_r[1],
                0.0,
            ];
            FourierCurve::ellipse(order, center, a, b, e1, e2)
        })
        .collect();
    CoilSet::new(
        curves,
        vec![params.current; params.n_base],
        params.n_fp,
        true,
    )
}

fn deform(coils: &mut CoilSet, params: &InstanceParams) -> Result<()> {
    let mut rng = seed::rng(params.deformation_seed, &[]);
    let mut x = coils.to_dofs();
    let offsets = coils.dof_offsets();
    for &off in offsets.iter().take(params.n_base) {
        let mut curve = FourierCurve::from_dofs(
            params.reference_order,
            x[off..off + 3 * (2 * params.reference_order + 1)].to_vec(),
        )?;
        for j in 0..3 {
            for l in 2..=params.reference_order {
                let a = params.deformation_amplitude / (l * l) as f64;
                if a > 0.0 {
                    curve.set_cos(j, l, curve.cos_coeff(j, l) + rng.random_range(-a..a));
                    curve.set_sin(j, l, curve.sin_coeff(j, l) + rng.random_range(-a..a));
                }
            }
        }
        x[off..off + curve.dofs().len()].copy_from_slice(curve.dofs());
    }
    *coils = coils.with_dofs(&x)?;
    Ok(())
}

const MAX_AXIS_ORDER: usize = 12;

impl DeskInstance {
    pub fn build(params: InstanceParams, weights: ObjectiveWeights) -> Result<Self> {
        let mut reference = ring(
            &params,
            params.reference_order,
            params.ellipse[0],
            params.ellipse[1],
            true,
        )?;
        deform(&mut reference, &params)?;
        let start = ring(
            &params,
            params.order,
            params.coil_radius,
            params.coil_radius,
            false,
        )?;
        let grid = QuadratureGrid::new(params.n_nodes)?;
        let n_axis = params.n_axis_nodes;
        let field = CoilField {
            coils: reference.expand(&grid)?,
        };
        let cfg = TraceConfig {
            initial_guess: [params.major_radius, 0.0],
            ..TraceConfig::default()
        };
        let found = trace::analyze(&field, &cfg)?;
        let order = MAX_AXIS_ORDER.min((n_axis - 1) / 2);
        let axis = trace::axis_curve(&field, [found.r0, found.z0], order, &cfg)?;
        let placeholder = TargetField::new(
            axis,
            n_axis,
            vec![[0.0; 3]; n_axis],
            vec![[[0.0; 3]; 3]; n_axis],
            found.iota.unwrap_or(0.0),
        )?;
        let target = placeholder.with_field_of(&field.coils)?;
        let problem = CoilProblem::new(start, grid, target, weights, None)?;
        Ok(Self {
            params,
            reference,
            problem,
        })
    }

    /// Two base coils, order 4, 32 nodes, three field periods (12 coils).
    pub fn small() -> Self {
        Self::build(InstanceParams::two_coil(), desk_weights()).expect("valid desk instance")
    }

    /// Three base coils, order 3, 24 nodes (18 coils), like the NCSX layout.
    pub fn three_coil_stub() -> Self {
        let params = InstanceParams {
            n_base: 3,
            order: 3,
            n_nodes: 24,
            n_axis_nodes: 24,
            ..InstanceParams::two_coil()
        };
        Self::build(params, desk_weights()).expect("valid desk instance")
    }

    /// Starting vector with shape DOFs perturbed by `N(0, std²)`.
    pub fn perturbed_start(&self, seed: u64, std: f64) -> Vec<f64> {
        let x0 = self.problem.x0();
        optimize::start_points(&x0, self.problem.shape_dim(), 1, std, seed)
            .remove(0)
            .1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field;
    use crate::math;

    #[test]
    fn coils_are_evenly_spaced() {
        let inst = DeskInstance::small();
        let grid = *inst.problem.grid();
        let design = inst.problem.template().expand(&grid).unwrap();
        let reference = inst.reference.expand(&grid).unwrap();
        for (phys, count) in [(design, 12), (reference, 12)] {
            assert_eq!(phys.len(), count);
            let mut angles: Vec<f64> = phys
                .iter()
                .map(|c| {
                    let m = c.points.iter().fold([0.0; 3], |a, p| math::add(a, *p));
                    m[1].atan2(m[0]).rem_euclid(2.0 * PI)
                })
                .collect();
            angles.sort_by(f64::total_cmp);
            for (k, a) in angles.iter().enumerate() {
                let want = (PI / count as f64) * (2 * k + 1) as f64;
                assert!((a - want).abs() < 1e-12, "{a} vs {want}");
            }
        }
    }

    #[test]
    fn target_field_is_toroidal_and_nonzero() {
        let inst = DeskInstance::small();
        let t = inst.problem.target();
        for (p, b) in t.points.iter().zip(&t.b_qs) {
            let e_phi = [-p[1], p[0], 0.0];
            let b_phi = math::dot(*b, e_phi) / math::norm(e_phi);
            assert!(b_phi.abs() > 0.1, "{b_phi}");
        }
    }

    #[test]
    fn starting_design_differs_from_target() {
        let inst = DeskInstance::small();
        let x = inst.problem.x0();
        assert!(inst.problem.qs_mismatch(&x, None).unwrap().value > 1e-6);
        let phys = inst.reference.expand(inst.problem.grid()).unwrap();
        let ev = field::biot_savart(&phys, &inst.problem.target().points).unwrap();
        assert_eq!(ev.b, inst.problem.target().b_qs);
    }
}
