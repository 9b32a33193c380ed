//! Monte Carlo checks of the isometry and of the quadratic-variation bound
//! for deterministic, piecewise-constant integrands.

use crate::error::{Error, Result};
use crate::par::map_indices;
use crate::rng::path_rng;
use crate::stats::McEstimate;

use super::NoiseSource;

/// Estimates for `E[(sum eta dB)^2]` against `E[sum eta^2 d<B>]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometryStats {
    pub stochastic_integral_sq: McEstimate,
    pub qv_integral: McEstimate,
    /// Paired per-path difference of the two.
    pub difference: McEstimate,
    /// `sigma_max^2 sum eta^2 dt`.
    pub upper_bound: f64,
}

/// `E[sup_u |sum_{n<=u} eta_n d<B>_n|^2]` and its bound `sigma_max^4 T sum eta^2 dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvSupStats {
    pub sup_sq: McEstimate,
    pub upper_bound: f64,
}

fn check(eta: &[f64], dt: f64, n_paths: usize) -> Result<()> {
    if eta.is_empty() || eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("integrand must be nonempty and finite".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    if n_paths < 2 {
        return Err(Error::InvalidConfig("need at least two paths".into()));
    }
    Ok(())
}

fn sigma_max(source: &NoiseSource) -> f64 {
    match source {
        NoiseSource::GNormal(t) => t.band().sigma_max(),
        NoiseSource::Scenario(p) => p.band().sigma_max(),
        NoiseSource::Zero => 0.0,
    }
}

pub fn isometry_check(eta: &[f64], source: &NoiseSource, dt: f64, n_paths: usize, seed: u64) -> Result<IsometryStats> {
    check(eta, dt, n_paths)?;
    source.validate()?;
    let pairs = map_indices(n_paths, |p| {
        let inc = source.sample(eta.len(), dt, &mut path_rng(seed, p as u64));
        let mut integral = 0.0;
        let mut qv = 0.0;
        for ((e, db), dq) in eta.iter().zip(&inc.db).zip(&inc.dqv) {
            integral += e * db;
            qv += e * e * dq;
        }
        (integral * integral, qv)
    });
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let s = sigma_max(source);
    Ok(IsometryStats {
        stochastic_integral_sq: McEstimate::from_samples(&lhs),
        qv_integral: McEstimate::from_samples(&rhs),
        difference: McEstimate::from_samples(&diff),
        upper_bound: s * s * eta.iter().map(|e| e * e).sum::<f64>() * dt,
    })
}

pub fn qv_sup_check(eta: &[f64], source: &NoiseSource, dt: f64, n_paths: usize, seed: u64) -> Result<QvSupStats> {
    check(eta, dt, n_paths)?;
    source.validate()?;
    let sups = map_indices(n_paths, |p| {
        let inc = source.sample(eta.len(), dt, &mut path_rng(seed, p as u64));
        let mut acc = 0.0f64;
        let mut best = 0.0f64;
        for (e, dq) in eta.iter().zip(&inc.dqv) {
            acc += e * dq;
            best = best.max(acc.abs());
        }
        best * best
    });
    let s = sigma_max(source);
    let horizon = eta.len() as f64 * dt;
    Ok(QvSupStats {
        sup_sq: McEstimate::from_samples(&sups),
        upper_bound: s.powi(4) * horizon * eta.iter().map(|e| e * e).sum::<f64>() * dt,
    })
}
