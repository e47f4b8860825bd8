//! Field-line tracing in cylindrical coordinates `(R, φ, Z)`.
//!
//! Lines are integrated with `φ` as the independent variable,
//! `dR/dφ = R B_R / B_φ`, `dZ/dφ = R B_Z / B_φ`, using an adaptive
//! Dormand–Prince 5(4) scheme. The magnetic axis is the fixed point of the
//! full-turn return map to the plane `φ = φ₀`, found by Newton iteration.
//! The rotational transform comes from the eigen-rotation of the tangent map
//! `M`, with the integer part fixed by following the rotation continuously
//! along the turn. Angles are counterclockwise in the `(R, Z)` plane and `φ`
//! increases counterclockwise seen from `+z`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, CoilField};
use crate::geometry::FourierCurve;

/// Field components `(B_R, B_φ, B_Z)` and their `R` and `Z` derivatives at
/// fixed `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylindricalSample {
    pub b: [f64; 3],
    pub db_dr: [f64; 3],
    pub db_dz: [f64; 3],
}

pub trait TraceField: Sync {
    fn cylindrical(&self, r: f64, phi: f64, z: f64) -> Result<CylindricalSample>;
}

impl TraceField for CoilField {
    fn cylindrical(&self, r: f64, phi: f64, z: f64) -> Result<CylindricalSample> {
        let (c, s) = (phi.cos(), phi.sin());
        let x = [r * c, r * s, z];
        let (b, g) = field::field_at(&self.coils, x)?;
        let to_cyl = |v: [f64; 3]| [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]];
        let along_r = [
            g[0][0] * c + g[0][1] * s,
            g[1][0] * c + g[1][1] * s,
            g[2][0] * c + g[2][1] * s,
        ];
        let along_z = [g[0][2], g[1][2], g[2][2]];
        Ok(CylindricalSample {
            b: to_cyl(b),
            db_dr: to_cyl(along_r),
            db_dz: to_cyl(along_z),
        })
    }
}

/// `B = B₀ R₀ / R ê_φ`: every field line is a circle.
#[derive(Debug, Clone, Copy)]
pub struct ToroidalField {
    pub b0: f64,
    pub r0: f64,
}

impl TraceField for ToroidalField {
    fn cylindrical(&self, r: f64, _phi: f64, _z: f64) -> Result<CylindricalSample> {
        let k = self.b0 * self.r0;
        Ok(CylindricalSample {
            b: [0.0, k / r, 0.0],
            db_dr: [0.0, -k / (r * r), 0.0],
            db_dz: [0.0; 3],
        })
    }
}

/// Toroidal field plus a poloidal part that rotates `(R - R₀, Z)` rigidly
/// at rate `ι` per radian of `φ`, so the axis `(R₀, 0)` has transform `ι`.
#[derive(Debug, Clone, Copy)]
pub struct RotatingField {
    pub b0: f64,
    pub r0: f64,
    pub iota: f64,
}

impl TraceField for RotatingField {
    fn cylindrical(&self, r: f64, _phi: f64, z: f64) -> Result<CylindricalSample> {
        let k = self.b0 * self.r0;
        let (r2, r3) = (r * r, r * r * r);
        let u = r - self.r0;
        Ok(CylindricalSample {
            b: [-self.iota * z * k / r2, k / r, self.iota * u * k / r2],
            db_dr: [
                2.0 * self.iota * z * k / r3,
                -k / r2,
                self.iota * k * (1.0 / r2 - 2.0 * u / r3),
            ],
            db_dz: [-self.iota * k / r2, 0.0, 0.0],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Relative local error tolerance of the integrator.
    pub rtol: f64,
    /// Absolute tolerance, in meters for positions.
    pub atol: f64,
    /// Toroidal angle of the return-map plane.
    pub phi0: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// `(R, Z)` starting guess for the axis.
    pub initial_guess: [f64; 2],
    /// Newton finite-difference step relative to `R`.
    pub newton_fd_step: f64,
    /// Largest Newton step relative to `R`.
    pub newton_max_step: f64,
    /// Neighbor offset for the finite-difference tangent map, relative to `R`.
    pub iota_fd_step: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            phi0: 0.0,
            newton_tol: 1e-10,
            max_newton: 50,
            initial_guess: [1.0, 0.0],
            newton_fd_step: 1e-7,
            newton_max_step: 0.1,
            iota_fd_step: 1e-4,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("newton_tol", self.newton_tol),
            ("newton_fd_step", self.newton_fd_step),
            ("newton_max_step", self.newton_max_step),
            ("iota_fd_step", self.iota_fd_step),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.initial_guess[0] > 0.0) {
            return Err(Error::InvalidParameter("initial guess needs R > 0".into()));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        Self {
            rtol: 0.5 * self.rtol,
            atol: 0.5 * self.atol,
            ..self.clone()
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive integration of `y' = f(φ, y)` from `phi0` to `phi1` (either
/// direction). `observe` sees every accepted `(φ, y)`, the start included.
fn integrate<F, O>(
    mut f: F,
    y0: &[f64],
    phi0: f64,
    phi1: f64,
    rtol: f64,
    atol: f64,
    mut observe: O,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    O: FnMut(f64, &[f64]),
{
    let span = phi1 - phi0;
    let dir = span.signum();
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut phi = phi0;
    observe(phi, &y);
    if span == 0.0 {
        return Ok(y);
    }
    let mut h = dir * (0.05f64).min(span.abs());
    let mut k: Vec<Vec<f64>> = vec![f(phi, &y)?];
    let min_step = 1e-13 * span.abs().max(1.0);
    loop {
        let remaining = phi1 - phi;
        let last = h.abs() >= remaining.abs();
        if last {
            h = remaining;
        }
        k.truncate(1);
        let mut yt = vec![0.0; n];
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate() {
                    acc += h * A[s][j] * kj[i];
                }
                yt[i] = acc;
            }
            k.push(f(phi + C[s] * h, &yt)?);
        }
        // yt now holds the fifth-order solution (stage 7 is FSAL)
        let mut err = 0.0f64;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let sc = atol + rtol * y[i].abs().max(yt[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            return Err(Error::StepSizeUnderflow { phi });
        }
        if err <= 1.0 {
            phi = if last { phi1 } else { phi + h };
            y.copy_from_slice(&yt);
            observe(phi, &y);
            if last {
                return Ok(y);
            }
            let k7 = k.pop().expect("seven stages");
            k.clear();
            k.push(k7);
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h.abs() < min_step {
                return Err(Error::StepSizeUnderflow { phi });
            }
        }
    }
}

/// Right-hand side for one line and its Jacobian in `(R, Z)`. `sign` is the
/// sign of `B_φ` at the start; a flip means the line is not toroidal.
fn line_rhs(
    field: &dyn TraceField,
    phi: f64,
    r: f64,
    z: f64,
    sign: f64,
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    let s = field.cylindrical(r, phi, z)?;
    let [br, bp, bz] = s.b;
    let bnorm = (br * br + bp * bp + bz * bz).sqrt();
    if bp * sign <= 1e-6 * bnorm || !bp.is_finite() {
        return Err(Error::NotToroidal { phi, b_phi: bp });
    }
    let f = [r * br / bp, r * bz / bp];
    let bp2 = bp * bp;
    let jac = [
        [
            br / bp + r * (s.db_dr[0] * bp - br * s.db_dr[1]) / bp2,
            r * (s.db_dz[0] * bp - br * s.db_dz[1]) / bp2,
        ],
        [
            bz / bp + r * (s.db_dr[2] * bp - bz * s.db_dr[1]) / bp2,
            r * (s.db_dz[2] * bp - bz * s.db_dz[1]) / bp2,
        ],
    ];
    Ok((f, jac))
}

fn phi_sign(field: &dyn TraceField, r: f64, phi: f64, z: f64) -> Result<f64> {
    let s = field.cylindrical(r, phi, z)?;
    let bnorm = s.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s.b[1].abs() <= 1e-6 * bnorm || !s.b[1].is_finite() {
        return Err(Error::NotToroidal { phi, b_phi: s.b[1] });
    }
    Ok(s.b[1].signum())
}

/// Several lines advanced together on one step sequence.
fn integrate_lines<O>(
    field: &dyn TraceField,
    starts: &[[f64; 2]],
    phi0: f64,
    phi1: f64,
    rtol: f64,
    atol: f64,
    observe: O,
) -> Result<Vec<[f64; 2]>>
where
    O: FnMut(f64, &[f64]),
{
    let sign = phi_sign(field, starts[0][0], phi0, starts[0][1])?;
    let y0: Vec<f64> = starts.iter().flat_map(|p| [p[0], p[1]]).collect();
    let y = integrate(
        |phi, y| {
            let mut out = Vec::with_capacity(y.len());
            for p in y.chunks(2) {
                let (f, _) = line_rhs(field, phi, p[0], p[1], sign)?;
                out.extend_from_slice(&f);
            }
            Ok(out)
        },
        &y0,
        phi0,
        phi1,
        rtol,
        atol,
        observe,
    )?;
    Ok(y.chunks(2).map(|p| [p[0], p[1]]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLine {
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    /// Endpoint change when the tolerances are halved.
    pub endpoint_error: f64,
}

impl FieldLine {
    pub fn end(&self) -> [f64; 2] {
        [
            *self.r.last().expect("non-empty"),
            *self.z.last().expect("non-empty"),
        ]
    }
}

/// Trace one line from `(R, Z)` at `phi0` to `phi1`.
pub fn trace_fieldline(
    field: &dyn TraceField,
    start: [f64; 2],
    phi0: f64,
    phi1: f64,
    config: &TraceConfig,
) -> Result<FieldLine> {
    config.validate()?;
    let mut line = FieldLine {
        phi: Vec::new(),
        r: Vec::new(),
        z: Vec::new(),
        endpoint_error: 0.0,
    };
    let end = integrate_lines(
        field,
        &[start],
        phi0,
        phi1,
        config.rtol,
        config.atol,
        |phi, y| {
            line.phi.push(phi);
            line.r.push(y[0]);
            line.z.push(y[1]);
        },
    )?[0];
    let fine = config.halved();
    let end2 = integrate_lines(field, &[start], phi0, phi1, fine.rtol, fine.atol, |_, _| {})?[0];
    line.endpoint_error = ((end[0] - end2[0]).powi(2) + (end[1] - end2[1]).powi(2)).sqrt();
    Ok(line)
}

/// Full-turn return map of the plane `φ = config.phi0`.
pub fn return_map(field: &dyn TraceField, p: [f64; 2], config: &TraceConfig) -> Result<[f64; 2]> {
    Ok(integrate_lines(
        field,
        &[p],
        config.phi0,
        config.phi0 + 2.0 * PI,
        config.rtol,
        config.atol,
        |_, _| {},
    )?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResult {
    pub r0: f64,
    pub z0: f64,
    pub residual: f64,
    pub iterations: usize,
    pub trail: Vec<[f64; 2]>,
    /// The axis traced over one turn from the fixed point.
    pub curve: Option<FieldLine>,
    pub iota: Option<f64>,
}

/// Damped Newton iteration on `P(R, Z) - (R, Z)` with a central-difference
/// Jacobian of the return map. Steps are capped at `newton_max_step · R` and
/// halved until the residual decreases.
pub fn find_axis(field: &dyn TraceField, config: &TraceConfig) -> Result<AxisResult> {
    config.validate()?;
    let mut p = config.initial_guess;
    let mut trail = vec![p];
    let fail = |iterations, residual, trail| Error::NoAxisFound {
        iterations,
        residual,
        trail,
    };
    let mapped = return_map(field, p, config)?;
    let mut f = [mapped[0] - p[0], mapped[1] - p[1]];
    let mut residual = f[0].hypot(f[1]);
    for it in 0..=config.max_newton {
        if residual < config.newton_tol {
            return Ok(AxisResult {
                r0: p[0],
                z0: p[1],
                residual,
                iterations: it,
                trail,
                curve: None,
                iota: None,
            });
        }
        if it == config.max_newton {
            break;
        }
        let h = config.newton_fd_step * p[0].abs();
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut plus = p;
            let mut minus = p;
            plus[j] += h;
            minus[j] -= h;
            let (Ok(mp), Ok(mm)) = (
                return_map(field, plus, config),
                return_map(field, minus, config),
            ) else {
                return Err(fail(it, residual, trail));
            };
            for i in 0..2 {
                jac[i][j] = (mp[i] - mm[i]) / (2.0 * h) - if i == j { 1.0 } else { 0.0 };
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(fail(it, residual, trail));
        }
        let mut step = [
            -(jac[1][1] * f[0] - jac[0][1] * f[1]) / det,
            -(-jac[1][0] * f[0] + jac[0][0] * f[1]) / det,
        ];
        let cap = config.newton_max_step * p[0].abs();
        let len = step[0].hypot(step[1]);
        if len > cap {
            step = [step[0] * cap / len, step[1] * cap / len];
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let q = [p[0] + step[0], p[1] + step[1]];
            if q[0] > 0.0 && q[1].is_finite() {
                if let Ok(m) = return_map(field, q, config) {
                    let fq = [m[0] - q[0], m[1] - q[1]];
                    let rq = fq[0].hypot(fq[1]);
                    if rq < residual {
                        accepted = Some((q, fq, rq));
                        break;
                    }
                }
            }
            step = [0.5 * step[0], 0.5 * step[1]];
        }
        let Some((q, fq, rq)) = accepted else {
            return Err(fail(it + 1, residual, trail));
        };
        p = q;
        f = fq;
        residual = rq;
        trail.push(p);
    }
    Err(fail(config.max_newton, residual, trail))
}

const MAX_HALVINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IotaResult {
    pub iota: f64,
    /// Full-turn tangent map, row-major.
    pub tangent_map: [[f64; 2]; 2],
}

impl IotaResult {
    pub fn det(&self) -> f64 {
        let m = &self.tangent_map;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// `ι` from the tangent map integrated along with the axis.
pub fn compute_iota(
    field: &dyn TraceField,
    axis: [f64; 2],
    config: &TraceConfig,
) -> Result<IotaResult> {
    config.validate()?;
    let sign = phi_sign(field, axis[0], config.phi0, axis[1])?;
    let mut maps = Vec::new();
    let y0 = [axis[0], axis[1], 1.0, 0.0, 0.0, 1.0];
    integrate(
        |phi, y| {
            let (f, j) = line_rhs(field, phi, y[0], y[1], sign)?;
            let m = [[y[2], y[3]], [y[4], y[5]]];
            Ok(vec![
                f[0],
                f[1],
                j[0][0] * m[0][0] + j[0][1] * m[1][0],
                j[0][0] * m[0][1] + j[0][1] * m[1][1],
                j[1][0] * m[0][0] + j[1][1] * m[1][0],
                j[1][0] * m[0][1] + j[1][1] * m[1][1],
            ])
        },
        &y0,
        config.phi0,
        config.phi0 + 2.0 * PI,
        config.rtol,
        config.atol,
        |_, y| maps.push([[y[2], y[3]], [y[4], y[5]]]),
    )?;
    iota_from_maps(&maps)
}

/// `ι` from a tangent map built by central differences of four neighbor
/// lines traced together with the axis.
pub fn compute_iota_fd(
    field: &dyn TraceField,
    axis: [f64; 2],
    config: &TraceConfig,
) -> Result<IotaResult> {
    config.validate()?;
    let h = config.iota_fd_step * axis[0].abs();
    let starts = [
        axis,
        [axis[0] + h, axis[1]],
        [axis[0] - h, axis[1]],
        [axis[0], axis[1] + h],
        [axis[0], axis[1] - h],
    ];
    let mut maps = Vec::new();
    integrate_lines(
        field,
        &starts,
        config.phi0,
        config.phi0 + 2.0 * PI,
        config.rtol,
        config.atol,
        |_, y| {
            let c = |k: usize, i: usize| y[2 * k + i];
            maps.push([
                [
                    (c(1, 0) - c(2, 0)) / (2.0 * h),
                    (c(3, 0) - c(4, 0)) / (2.0 * h),
                ],
                [
                    (c(1, 1) - c(2, 1)) / (2.0 * h),
                    (c(3, 1) - c(4, 1)) / (2.0 * h),
                ],
            ]);
        },
    )?;
    iota_from_maps(&maps)
}

/// Rotation number of the final map, with the integer part taken from the
/// continuous rotation of a vector through the intermediate maps, expressed
/// in the basis where the final map is a pure rotation.
fn iota_from_maps(maps: &[[[f64; 2]; 2]]) -> Result<IotaResult> {
    let m = *maps.last().expect("integration records its endpoint");
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr = m[0][0] + m[1][1];
    let half = 0.5 * tr / det.abs().sqrt();
    if half.abs() > 1.0 + 1e-9 {
        return Err(Error::HyperbolicAxis {
            trace_abs: tr.abs(),
        });
    }
    let cos_w = half.clamp(-1.0, 1.0);
    let sin_w = (1.0 - cos_w * cos_w).sqrt() * if m[1][0] < 0.0 { -1.0 } else { 1.0 };
    let scale = det.abs().sqrt();
    let (a, b) = (m[0][0] / scale, m[0][1] / scale);
    // columns of P: (b, cos ω - a) and (0, -sin ω); det P = -b sin ω > 0
    let p = [[b, 0.0], [cos_w - a, -sin_w]];
    let det_p = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let basis = if det_p > 1e-12 {
        p
    } else {
        [[1.0, 0.0], [0.0, 1.0]]
    };
    let det_b = basis[0][0] * basis[1][1] - basis[0][1] * basis[1][0];
    let inv = [
        [basis[1][1] / det_b, -basis[0][1] / det_b],
        [-basis[1][0] / det_b, basis[0][0] / det_b],
    ];
    let v = [basis[0][0], basis[1][0]];
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for mk in maps {
        let w = [
            mk[0][0] * v[0] + mk[0][1] * v[1],
            mk[1][0] * v[0] + mk[1][1] * v[1],
        ];
        let u = [
            inv[0][0] * w[0] + inv[0][1] * w[1],
            inv[1][0] * w[0] + inv[1][1] * w[1],
        ];
        let ang = u[1].atan2(u[0]);
        if let Some(pa) = prev {
            let mut d = ang - pa;
            d -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            total += d;
        }
        prev = Some(ang);
    }
    Ok(IotaResult {
        iota: total / (2.0 * PI),
        tangent_map: m,
    })
}

/// Axis, traced axis curve and `ι` in one call.
pub fn analyze(field: &dyn TraceField, config: &TraceConfig) -> Result<AxisResult> {
    let mut axis = find_axis(field, config)?;
    let p = [axis.r0, axis.z0];
    axis.curve = Some(trace_fieldline(
        field,
        p,
        config.phi0,
        config.phi0 + 2.0 * PI,
        config,
    )?);
    axis.iota = Some(compute_iota(field, p, config)?.iota);
    Ok(axis)
}

/// Fourier fit of the closed line through `axis` with toroidal angle as the
/// curve parameter, `θ = φ - φ₀`, from `4·order` equally spaced samples.
pub fn axis_curve(
    field: &dyn TraceField,
    axis: [f64; 2],
    order: usize,
    config: &TraceConfig,
) -> Result<FourierCurve> {
    config.validate()?;
    let n = 4 * order.max(1);
    let step = 2.0 * PI / n as f64;
    let mut samples = Vec::with_capacity(n);
    let mut p = axis;
    for k in 0..n {
        let phi = config.phi0 + step * k as f64;
        if k > 0 {
            p = integrate_lines(
                field,
                &[p],
                phi - step,
                phi,
                config.rtol,
                config.atol,
                |_, _| {},
            )?[0];
        }
        samples.push([p[0] * phi.cos(), p[0] * phi.sin(), p[1]]);
    }
    let mut curve = FourierCurve::zeros(order);
    let scale = 2.0 / n as f64;
    for j in 0..3 {
        curve.set_constant(j, samples.iter().map(|x| x[j]).sum::<f64>() / n as f64);
        for l in 1..=order {
            let (mut c, mut s) = (0.0, 0.0);
            for (k, x) in samples.iter().enumerate() {
                let a = (l * k) as f64 * step;
                c += x[j] * a.cos();
                s += x[j] * a.sin();
            }
            curve.set_cos(j, l, scale * c);
            curve.set_sin(j, l, scale * s);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PhysicalCoil;
    use crate::instance::DeskInstance;
    use crate::math;
    use crate::perturbation::{PerturbationKernel, PerturbationModel};

    fn tight() -> TraceConfig {
        TraceConfig {
            rtol: 1e-12,
            atol: 1e-13,
            ..Default::default()
        }
    }

    fn reference_field() -> CoilField {
        let inst = DeskInstance::small();
        CoilField {
            coils: inst.reference.expand(inst.problem.grid()).unwrap(),
        }
    }

    #[test]
    fn axis_curve_of_toroidal_field_is_the_circle() {
        let f = ToroidalField { b0: 1.0, r0: 1.0 };
        let c = axis_curve(&f, [1.3, 0.2], 4, &TraceConfig::default()).unwrap();
        let mut want = FourierCurve::zeros(4);
        want.set_cos(0, 1, 1.3);
        want.set_sin(1, 1, 1.3);
        want.set_constant(2, 0.2);
        for (a, b) in c.dofs().iter().zip(want.dofs()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn toroidal_lines_close() {
        let f = ToroidalField { b0: 1.0, r0: 1.0 };
        for start in [[1.0, 0.0], [1.3, 0.2], [0.7, -0.4]] {
            let l = trace_fieldline(&f, start, 0.0, 2.0 * PI, &TraceConfig::default()).unwrap();
            let e = l.end();
            assert!((e[0] - start[0]).abs() < 1e-9 && (e[1] - start[1]).abs() < 1e-9);
        }
        let axis = find_axis(
            &f,
            &TraceConfig {
                initial_guess: [1.4, 0.3],
                ..Default::default()
            },
        )
        .unwrap();
        assert!(axis.iterations <= 1);
        let iota = compute_iota(&f, [1.4, 0.3], &TraceConfig::default()).unwrap();
        assert!(iota.iota.abs() < 1e-9);
    }

    #[test]
    fn rotating_field_iota_exact() {
        for iota in [0.137, 0.61, 1.28, -0.4] {
            let f = RotatingField {
                b0: 1.0,
                r0: 1.0,
                iota,
            };
            let cfg = tight();
            let axis = find_axis(
                &f,
                &TraceConfig {
                    initial_guess: [1.01, 0.02],
                    ..cfg.clone()
                },
            )
            .unwrap();
            assert!((axis.r0 - 1.0).abs() < 1e-9 && axis.z0.abs() < 1e-9);
            let var = compute_iota(&f, [1.0, 0.0], &cfg).unwrap();
            assert!((var.iota - iota).abs() < 1e-9, "{} vs {iota}", var.iota);
            let fd = compute_iota_fd(&f, [1.0, 0.0], &cfg).unwrap();
            assert!((fd.iota - iota).abs() < 1e-7, "{} vs {iota}", fd.iota);
        }
    }

    #[test]
    fn rotating_field_line_matches_closed_form() {
        let iota = 0.3;
        let f = RotatingField {
            b0: 2.0,
            r0: 1.5,
            iota,
        };
        let start = [1.6, 0.05];
        let l = trace_fieldline(&f, start, 0.0, 3.0, &tight()).unwrap();
        let (u0, z0) = (start[0] - 1.5, start[1]);
        let a = iota * 3.0;
        let want = [
            1.5 + u0 * a.cos() - z0 * a.sin(),
            u0 * a.sin() + z0 * a.cos(),
        ];
        let e = l.end();
        assert!((e[0] - want[0]).abs() < 1e-10 && (e[1] - want[1]).abs() < 1e-10);
    }

    #[test]
    fn halving_tolerance_and_reversal() {
        let f = reference_field();
        let cfg = TraceConfig::default();
        let start = [1.05, 0.03];
        let l = trace_fieldline(&f, start, 0.0, 2.0 * PI, &cfg).unwrap();
        assert!(l.endpoint_error < cfg.rtol, "{}", l.endpoint_error);
        let back = trace_fieldline(&f, l.end(), 2.0 * PI, 0.0, &cfg).unwrap();
        let e = back.end();
        let drift = ((e[0] - start[0]).powi(2) + (e[1] - start[1]).powi(2)).sqrt();
        assert!(drift < 2.0 * cfg.rtol, "{drift}");
    }

    #[test]
    fn not_toroidal_detected() {
        // B_φ changes sign at Z = 0
        struct Flip;
        impl TraceField for Flip {
            fn cylindrical(&self, _r: f64, phi: f64, _z: f64) -> Result<CylindricalSample> {
                Ok(CylindricalSample {
                    b: [0.0, (1.0 - phi).signum() * (1.0 - phi).abs().max(1e-9), 0.0],
                    db_dr: [0.0; 3],
                    db_dz: [0.0; 3],
                })
            }
        }
        assert!(matches!(
            trace_fieldline(&Flip, [1.0, 0.0], 0.0, 2.0, &TraceConfig::default()),
            Err(Error::NotToroidal { .. })
        ));
    }

    #[test]
    fn hyperbolic_map_rejected() {
        let maps = [[[1.0, 0.0], [0.0, 1.0]], [[3.0, 0.0], [0.0, 1.0 / 3.0]]];
        assert!(matches!(
            iota_from_maps(&maps),
            Err(Error::HyperbolicAxis { .. })
        ));
    }

    #[test]
    fn symmetric_design_axis_in_midplane() {
        let f = reference_field();
        let cfg = tight();
        let axis = analyze(&f, &cfg).unwrap();
        assert!(axis.z0.abs() < 1e-8, "{}", axis.z0);
        assert!(axis.residual < cfg.newton_tol);
        let iota = axis.iota.unwrap();
        assert!(iota.abs() > 1e-3, "{iota}");
        let fd = compute_iota_fd(&f, [axis.r0, axis.z0], &cfg).unwrap();
        assert!((fd.iota - iota).abs() < 1e-6, "{} vs {iota}", fd.iota);
        let var = compute_iota(&f, [axis.r0, axis.z0], &cfg).unwrap();
        assert!((fd.det() - var.det()).abs() < 1e-6);
    }

    #[test]
    fn iota_invariant_under_rotation() {
        let f = reference_field();
        let cfg = tight();
        let base = analyze(&f, &cfg).unwrap();
        let rot = math::rotation_z(0.37);
        let coils: Vec<PhysicalCoil> = f
            .coils
            .iter()
            .map(|c| PhysicalCoil {
                base: c.base,
                points: c.points.iter().map(|p| math::mat_vec(&rot, *p)).collect(),
                tangents: c.tangents.iter().map(|t| math::mat_vec(&rot, *t)).collect(),
                current: c.current,
            })
            .collect();
        let rotated = CoilField { coils };
        let cfg_r = TraceConfig {
            phi0: 0.37,
            initial_guess: [base.r0, base.z0],
            ..cfg
        };
        let axis = analyze(&rotated, &cfg_r).unwrap();
        assert!((axis.iota.unwrap() - base.iota.unwrap()).abs() < 1e-8);
        assert!((axis.r0 - base.r0).abs() < 1e-8);
    }

    #[test]
    fn iota_tolerance_convergence() {
        let f = reference_field();
        let cfg = TraceConfig::default();
        let axis = find_axis(&f, &tight()).unwrap();
        let p = [axis.r0, axis.z0];
        let a = compute_iota(&f, p, &cfg).unwrap().iota;
        let b = compute_iota(&f, p, &cfg.halved()).unwrap().iota;
        assert!((a - b).abs() < 10.0 * cfg.rtol, "{}", (a - b).abs());
    }

    #[test]
    fn perturbed_axis_converges() {
        let inst = DeskInstance::small();
        let grid = *inst.problem.grid();
        let model =
            PerturbationModel::new(PerturbationKernel::new(1e-2, 0.4 * PI, 3).unwrap(), grid)
                .unwrap();
        let mut coils = inst.reference.expand(&grid).unwrap();
        model.draw(17, 0, coils.len()).apply(&mut coils).unwrap();
        let cfg = tight();
        let axis = find_axis(&CoilField { coils }, &cfg).unwrap();
        assert!(axis.residual < cfg.newton_tol);
    }
}
