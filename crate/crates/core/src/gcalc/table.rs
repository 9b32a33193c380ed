use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{solve_gheat, GridSpec, VolatilityBand};
use crate::error::{Error, Result};
use crate::output::fmt_num;

/// Which nonlinear "distribution function" the table stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capacity {
    /// Upper capacity `E^[1{X <= c}]`.
    Upper,
    /// Midpoint of the upper and lower capacities; symmetric about the origin.
    #[default]
    Symmetric,
}

/// Tabulated G-normal distribution at unit time on a uniform grid.
#[derive(Debug, Clone)]
pub struct GNormalTable {
    x: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    band: VolatilityBand,
    capacity: Capacity,
}

/// G-normal table with the default (symmetric) capacity.
pub fn build_gnormal_table(band: VolatilityBand, grid: &GridSpec) -> Result<GNormalTable> {
    build_gnormal_table_with(band, grid, Capacity::default())
}

/// Builds the table from a single G-heat solve.
///
/// The payoff is a linear ramp from 1 to 0 over `[-dx, dx]`. Translation
/// invariance of the equation gives `E^[ramp(X - c)] = u(1, -c)`, so one
/// solve yields the upper capacity at every grid node.
pub fn build_gnormal_table_with(band: VolatilityBand, grid: &GridSpec, capacity: Capacity) -> Result<GNormalTable> {
    let dx = grid.dx();
    let ramp = move |y: f64| (0.5 - y / (2.0 * dx)).clamp(0.0, 1.0);
    let sol = solve_gheat(ramp, band, grid, 1.0)?;
    let last = sol.u.len() - 1;
    let upper: Vec<f64> = (0..=last).map(|j| sol.u[last - j]).collect();
    let cdf: Vec<f64> = match capacity {
        Capacity::Upper => upper,
        Capacity::Symmetric => (0..=last).map(|j| 0.5 * (upper[j] + 1.0 - upper[last - j])).collect(),
    };
    let pdf = density_from_cdf(&cdf, dx);
    Ok(GNormalTable {
        x: sol.x,
        cdf,
        pdf,
        band,
        capacity,
    })
}

/// Centered differences (one-sided at the ends), clipped at zero and renormalized.
fn density_from_cdf(cdf: &[f64], dx: f64) -> Vec<f64> {
    let n = cdf.len();
    let mut pdf: Vec<f64> = (0..n)
        .map(|j| {
            let d = match j {
                0 => (cdf[1] - cdf[0]) / dx,
                j if j == n - 1 => (cdf[n - 1] - cdf[n - 2]) / dx,
                j => (cdf[j + 1] - cdf[j - 1]) / (2.0 * dx),
            };
            d.max(0.0)
        })
        .collect();
    let mass = trapezoid(&pdf, dx);
    if mass > 0.0 {
        pdf.iter_mut().for_each(|p| *p /= mass);
    }
    pdf
}

pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dx * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

impl GNormalTable {
    /// Assemble a table from externally supplied columns (uniform grid assumed).
    pub fn from_parts(x: Vec<f64>, cdf: Vec<f64>, band: VolatilityBand) -> Result<Self> {
        if x.len() != cdf.len() {
            return Err(Error::LengthMismatch {
                what: "table cdf",
                expected: x.len(),
                got: cdf.len(),
            });
        }
        if x.len() < 3 {
            return Err(Error::DegenerateTable("fewer than 3 grid points".into()));
        }
        let dx = x[1] - x[0];
        let pdf = density_from_cdf(&cdf, dx);
        let table = Self {
            x,
            cdf,
            pdf,
            band,
            capacity: Capacity::Upper,
        };
        table.check_sampleable()?;
        Ok(table)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn band(&self) -> VolatilityBand {
        self.band
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Piecewise-linear interpolation of the cdf, clamped outside the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.x.len();
        let pos = ((x - self.x[0]) / self.dx()).clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 2);
        let w = pos - j as f64;
        (1.0 - w) * self.cdf[j] + w * self.cdf[j + 1]
    }

    pub(crate) fn check_sampleable(&self) -> Result<()> {
        let first = self.cdf[0];
        let last = self.cdf[self.cdf.len() - 1];
        if (last - first).is_nan() || last - first <= 0.5 {
            return Err(Error::DegenerateTable(format!("cdf rises only from {first} to {last}")));
        }
        if let Some(w) = self.cdf.windows(2).position(|w| w[1] < w[0] - 1e-12) {
            return Err(Error::DegenerateTable(format!("cdf decreases at x={}", self.x[w])));
        }
        Ok(())
    }

    /// Inverse of the interpolated cdf; values outside `[F(x_0), F(x_J)]` clamp to the grid ends.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.cdf.len();
        let j = self.cdf.partition_point(|&f| f < p);
        if j == 0 {
            return self.x[0];
        }
        if j >= n {
            return self.x[n - 1];
        }
        let (f0, f1) = (self.cdf[j - 1], self.cdf[j]);
        if f1 <= f0 {
            return self.x[j];
        }
        let w = (p - f0) / (f1 - f0);
        self.x[j - 1] + w * (self.x[j] - self.x[j - 1])
    }

    /// One draw of the unit-time variable by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,cdf,pdf")?;
        for j in 0..self.x.len() {
            writeln!(
                out,
                "{},{},{}",
                fmt_num(self.x[j]),
                fmt_num(self.cdf[j]),
                fmt_num(self.pdf[j])
            )?;
        }
        Ok(())
    }
}
