//! Periodic Gaussian-process manufacturing errors.
//!
//! Each coordinate of each physical coil receives an independent centered
//! process with the periodized squared-exponential covariance
//! `k̃(d) = Σ_{|j|≤J} σ² exp(-(d + 2πj)² / 2l²)`. Values and parameter
//! derivatives at the quadrature nodes are drawn jointly from the `2n × 2n`
//! covariance
//!
//! ```text
//! [ k̃(θa-θb)    -k̃'(θa-θb) ]
//! [ k̃'(θa-θb)   -k̃''(θa-θb) ]
//! ```
//!
//! through a Cholesky factor, so sampled derivatives are consistent with the
//! sampled values in distribution.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PhysicalCoil, QuadratureGrid};
use crate::math::{self, Vec3};
use crate::seed;

/// Jitter starts at this multiple of σ² ...
pub const JITTER_INITIAL: f64 = 1e-10;
/// ... and is multiplied by ten per failed attempt up to this multiple.
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationKernel {
    pub sigma: f64,
    pub length_scale: f64,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
}

fn default_truncation() -> usize {
    3
}

/// `k̃` and its first two derivatives at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(d: f64) -> f64 {
    let w = d - 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
    // floor() can leave w == π after rounding
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl PerturbationKernel {
    pub fn new(sigma: f64, length_scale: f64, truncation: usize) -> Result<Self> {
        let k = Self {
            sigma,
            length_scale,
            truncation,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "length_scale must be > 0, got {}",
                self.length_scale
            )));
        }
        if self.truncation < 1 {
            return Err(Error::InvalidParameter("truncation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn base(&self, d: f64) -> KernelValue {
        let l2 = self.length_scale * self.length_scale;
        let k = self.variance() * (-d * d / (2.0 * l2)).exp();
        KernelValue {
            value: k,
            d1: -d / l2 * k,
            d2: (d * d / (l2 * l2) - 1.0 / l2) * k,
        }
    }

    /// Periodized kernel at lag `d`; the lag is wrapped first.
    pub fn eval(&self, d: f64) -> KernelValue {
        self.eval_wrapped(wrap_angle(d))
    }

    /// Periodized kernel at a lag already in `[-π, π)`. Image terms are added
    /// in symmetric pairs so `k̃'(0)` cancels exactly.
    pub fn eval_wrapped(&self, d: f64) -> KernelValue {
        let mut acc = self.base(d);
        for j in 1..=self.truncation {
            let shift = 2.0 * PI * j as f64;
            let p = self.base(d + shift);
            let m = self.base(d - shift);
            acc.value += p.value + m.value;
            acc.d1 += p.d1 + m.d1;
            acc.d2 += p.d2 + m.d2;
        }
        acc
    }
}

/// Lag between nodes `a` and `b` from the signed index difference, so the
/// result is exactly antisymmetric in `(a, b)` and exactly circulant.
fn node_lag(a: usize, b: usize, n: usize) -> f64 {
    let mut k = (a as i64 - b as i64).rem_euclid(n as i64);
    if 2 * k >= n as i64 {
        k -= n as i64;
    }
    2.0 * PI * k as f64 / n as f64
}

/// Joint value/derivative covariance of one scalar process on `grid`.
pub fn build_covariance(kernel: &PerturbationKernel, grid: &QuadratureGrid) -> DMatrix<f64> {
    let n = grid.len();
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for a in 0..n {
        for b in 0..n {
            let kv = kernel.eval_wrapped(node_lag(a, b, n));
            cov[(a, b)] = kv.value;
            cov[(a, n + b)] = -kv.d1;
            cov[(n + a, n + b)] = -kv.d2;
        }
    }
    // Lower-left block k̃'(θa-θb) is the transpose of the upper-right one. The
    // lag index makes k̃' exactly odd except at lag -π, where truncation leaves
    // a residue far below rounding; mirroring keeps Σ exactly symmetric.
    for a in 0..n {
        for b in 0..n {
            cov[(n + a, b)] = cov[(b, n + a)];
        }
    }
    cov
}

/// Lower Cholesky factor of `Σ + jitter·I`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

/// Cholesky factorization with relative jitter `JITTER_INITIAL·variance`,
/// escalated ×10 up to `JITTER_MAX·variance`. Zero variance gives `L = 0`.
pub fn factorize(cov: &DMatrix<f64>, variance: f64) -> Result<CovarianceFactor> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::ShapeMismatch("covariance must be square".into()));
    }
    if variance == 0.0 {
        return Ok(CovarianceFactor {
            lower: DMatrix::zeros(cov.nrows(), cov.ncols()),
            jitter: 0.0,
        });
    }
    let mut rel = JITTER_INITIAL;
    loop {
        let jitter = rel * variance;
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(CovarianceFactor {
                lower: ch.l(),
                jitter,
            });
        }
        if rel >= JITTER_MAX * (1.0 - 1e-9) {
            return Err(Error::IllConditionedKernel { jitter });
        }
        rel *= 10.0;
    }
}

/// One coil's perturbation: three coordinate processes at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilPerturbation {
    pub values: Vec<Vec3>,
    pub derivatives: Vec<Vec3>,
}

/// Joint draw for every physical coil.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub sample_id: u64,
    pub coils: Vec<CoilPerturbation>,
}

impl PerturbationSample {
    pub fn zero(n_coils: usize, nodes: usize) -> Self {
        Self {
            sample_id: 0,
            coils: vec![
                CoilPerturbation {
                    values: vec![[0.0; 3]; nodes],
                    derivatives: vec![[0.0; 3]; nodes],
                };
                n_coils
            ],
        }
    }

    /// Add the perturbation to points and tangents in place.
    pub fn apply(&self, coils: &mut [PhysicalCoil]) -> Result<()> {
        if coils.len() != self.coils.len() {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} coils, coil set has {}",
                self.coils.len(),
                coils.len()
            )));
        }
        for (coil, pert) in coils.iter_mut().zip(&self.coils) {
            if coil.points.len() != pert.values.len() {
                return Err(Error::ShapeMismatch(
                    "sample grid differs from coil grid".into(),
                ));
            }
            for i in 0..coil.points.len() {
                coil.points[i] = math::add(coil.points[i], pert.values[i]);
                coil.tangents[i] = math::add(coil.tangents[i], pert.derivatives[i]);
            }
        }
        Ok(())
    }

    /// CSV with columns `coil, coordinate, node, value, derivative`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["coil", "coordinate", "node", "value", "derivative"])?;
        for (c, coil) in self.coils.iter().enumerate() {
            for j in 0..3 {
                for (m, (v, d)) in coil.values.iter().zip(&coil.derivatives).enumerate() {
                    out.serialize((c, j, m, v[j], d[j]))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Kernel plus the factor for a fixed grid; draws are pure functions of
/// `(master_seed, sample_id, coil, coordinate)`.
#[derive(Debug, Clone)]
pub struct PerturbationModel {
    kernel: PerturbationKernel,
    grid: QuadratureGrid,
    factor: CovarianceFactor,
    // row-major lower triangle, cached for the mat-vec
    lower: Vec<f64>,
}

impl PerturbationModel {
    pub fn new(kernel: PerturbationKernel, grid: QuadratureGrid) -> Result<Self> {
        kernel.validate()?;
        let cov = build_covariance(&kernel, &grid);
        let factor = factorize(&cov, kernel.variance())?;
        let m = 2 * grid.len();
        let mut lower = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..=i {
                lower[i * m + k] = factor.lower[(i, k)];
            }
        }
        Ok(Self {
            kernel,
            grid,
            factor,
            lower,
        })
    }

    pub fn kernel(&self) -> &PerturbationKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn factor(&self) -> &CovarianceFactor {
        &self.factor
    }

    /// One scalar process: `(values, derivatives)` at the nodes.
    pub fn draw_scalar(
        &self,
        master_seed: u64,
        sample_id: u64,
        coil: usize,
        coordinate: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let m = 2 * n;
        let mut rng = seed::rng(master_seed, &[sample_id, coil as u64, coordinate as u64]);
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let row = &self.lower[i * m..i * m + i + 1];
            y[i] = row.iter().zip(&z).map(|(l, z)| l * z).sum();
        }
        let d = y.split_off(n);
        (y, d)
    }

    pub fn draw(&self, master_seed: u64, sample_id: u64, n_coils: usize) -> PerturbationSample {
        let n = self.grid.len();
        let coils = (0..n_coils)
            .map(|c| {
                let mut values = vec![[0.0; 3]; n];
                let mut derivatives = vec![[0.0; 3]; n];
                for j in 0..3 {
                    let (v, d) = self.draw_scalar(master_seed, sample_id, c, j);
                    for i in 0..n {
                        values[i][j] = v[i];
                        derivatives[i][j] = d[i];
                    }
                }
                CoilPerturbation {
                    values,
                    derivatives,
                }
            })
            .collect();
        PerturbationSample { sample_id, coils }
    }

    /// Samples `first_id .. first_id + count`, drawn in parallel.
    pub fn draw_samples(
        &self,
        master_seed: u64,
        first_id: u64,
        count: usize,
        n_coils: usize,
    ) -> Vec<PerturbationSample> {
        (0..count as u64)
            .into_par_iter()
            .map(|k| self.draw(master_seed, first_id + k, n_coils))
            .collect()
    }
}
