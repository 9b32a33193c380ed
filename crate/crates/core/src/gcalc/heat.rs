use serde::{Deserialize, Serialize};

use super::{g_operator, VolatilityBand};
use crate::error::{Error, Result};

/// Uniform spatial grid on `[-half_width, half_width]` plus the explicit time-step factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub intervals: usize,
    /// Time step as a fraction of the stability limit `dx^2 / sigma_max^2`.
    pub cfl: f64,
}

impl GridSpec {
    /// `[-6 sigma_max, 6 sigma_max]` with 1200 intervals and `cfl = 0.4`.
    pub fn for_band(band: VolatilityBand) -> Self {
        Self {
            half_width: 6.0 * band.sigma_max(),
            intervals: 1200,
            cfl: 0.4,
        }
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.intervals as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..=self.intervals).map(|j| -self.half_width + j as f64 * dx).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid half width must be positive, got {}",
                self.half_width
            )));
        }
        // Symmetric grid with a node at the origin.
        if self.intervals < 4 || !self.intervals.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "grid needs an even number (>= 4) of intervals, got {}",
                self.intervals
            )));
        }
        if !(self.cfl.is_finite() && self.cfl > 0.0) {
            return Err(Error::InvalidConfig(format!("cfl must be positive, got {}", self.cfl)));
        }
        Ok(())
    }
}

/// Values of the G-heat solution at the final time on every grid node.
#[derive(Debug, Clone)]
pub struct HeatSolution {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl HeatSolution {
    /// Linear interpolation in `x`, clamped to the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.x.len();
        let dx = self.x[1] - self.x[0];
        let pos = ((x - self.x[0]) / dx).clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 2);
        let w = pos - j as f64;
        (1.0 - w) * self.u[j] + w * self.u[j + 1]
    }
}

/// Explicit finite-difference solve of `du/dt = G(u_xx)`, `u(0, .) = phi`.
///
/// The two boundary nodes keep their initial payoff values. The time step is
/// `cfl * dx^2 / sigma_max^2`, shortened so that it divides `t_end` exactly.
pub fn solve_gheat<F>(phi: F, band: VolatilityBand, grid: &GridSpec, t_end: f64) -> Result<HeatSolution>
where
    F: Fn(f64) -> f64,
{
    grid.validate()?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::InvalidConfig(format!("t_end must be nonnegative, got {t_end}")));
    }
    let dx = grid.dx();
    let limit = dx * dx / (band.sigma_max() * band.sigma_max());
    let target = grid.cfl * limit;
    if target > limit {
        return Err(Error::Unstable { dt: target, limit });
    }
    let steps = if t_end == 0.0 {
        0
    } else {
        (t_end / target).ceil() as usize
    };
    let dt = if steps == 0 { 0.0 } else { t_end / steps as f64 };

    let x = grid.nodes();
    let mut u: Vec<f64> = x.iter().map(|&xi| phi(xi)).collect();
    if let Some(j) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("payoff is not finite at x={}", x[j])));
    }
    let mut next = u.clone();
    let inv_dx2 = 1.0 / (dx * dx);
    let last = u.len() - 1;

    for step in 0..steps {
        for j in 1..last {
            let d2 = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2;
            next[j] = u[j] + dt * g_operator(d2, band);
        }
        std::mem::swap(&mut u, &mut next);
        if !u[last / 2].is_finite() || !u[1].is_finite() || !u[last - 1].is_finite() {
            return Err(Error::NonFinite {
                stage: "G-heat stepping",
                step,
            });
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "G-heat stepping",
            step: steps,
        });
    }
    Ok(HeatSolution { x, u, dt, steps })
}
