//! G-expectation toolkit for the scalar case.
//!
//! The volatility uncertainty set is an interval `[sigma_min, sigma_max]`.
//! Everything here works with that band: the sublinear generator `G`, the
//! fully nonlinear heat equation it drives, the G-normal tables obtained from
//! it, and the increment samplers used by the forward integrator.

mod heat;
mod isometry;
mod noise;
mod table;

pub use heat::{solve_gheat, GridSpec, HeatSolution};
pub use isometry::{isometry_check, qv_sup_check, IsometryStats, QvSupStats};
pub use noise::{
    sample_increments_gnormal, sample_increments_scenario, sublinear_expectation, NoiseIncrements, NoiseSource,
    ScenarioKind, ScenarioPolicy, SublinearEstimate,
};
pub use table::{build_gnormal_table, build_gnormal_table_with, Capacity, GNormalTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar volatility band `0 < sigma_min <= sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandRaw", into = "BandRaw")]
pub struct VolatilityBand {
    sigma_min: f64,
    sigma_max: f64,
}

#[derive(Serialize, Deserialize)]
struct BandRaw {
    sigma_min: f64,
    sigma_max: f64,
}

impl TryFrom<BandRaw> for VolatilityBand {
    type Error = Error;
    fn try_from(raw: BandRaw) -> Result<Self> {
        Self::new(raw.sigma_min, raw.sigma_max)
    }
}

impl From<VolatilityBand> for BandRaw {
    fn from(b: VolatilityBand) -> Self {
        Self {
            sigma_min: b.sigma_min,
            sigma_max: b.sigma_max,
        }
    }
}

impl VolatilityBand {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let ok = sigma_min.is_finite() && sigma_max.is_finite() && sigma_min > 0.0 && sigma_min <= sigma_max;
        if !ok {
            return Err(Error::InvalidBand { sigma_min, sigma_max });
        }
        Ok(Self { sigma_min, sigma_max })
    }

    /// Degenerate band: classical Brownian motion with volatility `sigma`.
    pub fn point(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn contains(&self, sigma: f64) -> bool {
        sigma >= self.sigma_min && sigma <= self.sigma_max
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_min == self.sigma_max
    }
}

/// Scalar generator `G(a) = 1/2 sup_{sigma in band} sigma^2 a`.
pub fn g_operator(a: f64, band: VolatilityBand) -> f64 {
    if a >= 0.0 {
        0.5 * band.sigma_max * band.sigma_max * a
    } else {
        0.5 * band.sigma_min * band.sigma_min * a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_band() -> VolatilityBand {
        VolatilityBand::new(0.75, 1.25).unwrap()
    }

    #[test]
    fn g_operator_values() {
        let band = reference_band();
        assert_eq!(g_operator(1.0, band), 0.78125);
        assert_eq!(g_operator(-1.0, band), -0.28125);
        assert_eq!(g_operator(0.0, band), 0.0);
        assert_eq!(g_operator(0.0, VolatilityBand::point(3.0).unwrap()), 0.0);
    }

    #[test]
    fn band_validation() {
        assert!(VolatilityBand::new(0.0, 1.0).is_err());
        assert!(VolatilityBand::new(1.5, 1.0).is_err());
        assert!(VolatilityBand::new(f64::NAN, 1.0).is_err());
        assert!(VolatilityBand::new(1.0, 1.0).unwrap().is_degenerate());
    }

    proptest! {
        #[test]
        fn g_operator_positively_homogeneous(a in -1e3f64..1e3, lambda in 0.0f64..1e3) {
            let band = reference_band();
            let lhs = g_operator(lambda * a, band);
            let rhs = lambda * g_operator(a, band);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn g_operator_monotone(a in -1e3f64..1e3, d in 0.0f64..1e3) {
            let band = reference_band();
            prop_assert!(g_operator(a, band) <= g_operator(a + d, band));
        }
    }
}
