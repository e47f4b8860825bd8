//! Gaussian kernel density estimates on a uniform grid.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};

pub const DEFAULT_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule `1.06 σ̂ n^{-1/5}`. Degenerate samples (one point, or
/// all equal) fall back to a bandwidth relative to the data magnitude.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = if data.len() > 1 {
        data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * mean.abs().max(1.0)
    }
}

/// Density sampled on `points` nodes spanning `[min, max]` padded on both
/// sides by the larger of 10% of the range and four bandwidths, so the tails
/// are captured and the trapezoid integral is 1 to within 1e-3.
pub fn gaussian_kde(data: &[f64], points: usize) -> Result<Kde> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("KDE of an empty sample".into()));
    }
    if points < 2 {
        return Err(Error::InvalidParameter(
            "KDE grid needs at least 2 points".into(),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "KDE input contains non-finite values".into(),
        ));
    }
    let h = silverman_bandwidth(data);
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = (0.1 * (hi - lo)).max(4.0 * h);
    let (a, b) = (lo - pad, hi + pad);
    let step = (b - a) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| a + step * i as f64).collect();
    let norm = 1.0 / (data.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|x| {
            norm * data
                .iter()
                .map(|d| (-0.5 * ((x - d) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(Kde {
        bandwidth: h,
        grid,
        density,
    })
}

impl Kde {
    pub fn trapezoid_integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// CSV with columns `x, density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "density"])?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            out.serialize((x, d))?;
        }
        out.flush()?;
        Ok(())
    }
}
