use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GNormalTable, VolatilityBand};
use crate::error::{Error, Result};
use crate::rng::master_rng;
use crate::stats::McEstimate;

/// Driving increments `dB_n` and quadratic-variation increments `d<B>_n` per step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrements {
    pub db: Vec<f64>,
    pub dqv: Vec<f64>,
}

impl NoiseIncrements {
    pub fn new(db: Vec<f64>, dqv: Vec<f64>) -> Result<Self> {
        if db.len() != dqv.len() {
            return Err(Error::LengthMismatch {
                what: "quadratic-variation increments",
                expected: db.len(),
                got: dqv.len(),
            });
        }
        Ok(Self { db, dqv })
    }

    /// No noise at all, for deterministic runs.
    pub fn zeros(n_steps: usize) -> Self {
        Self {
            db: vec![0.0; n_steps],
            dqv: vec![0.0; n_steps],
        }
    }

    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// The same volatility on every step.
    Constant(f64),
    /// Each step independently picks `sigma_min` or `sigma_max` with probability one half.
    TwoPoint,
    /// User-supplied volatilities, cycled when shorter than the path.
    Table(Vec<f64>),
}

/// A rule emitting per-step volatilities inside the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPolicy {
    kind: ScenarioKind,
    band: VolatilityBand,
}

impl ScenarioPolicy {
    pub fn new(kind: ScenarioKind, band: VolatilityBand) -> Result<Self> {
        let bad = match &kind {
            ScenarioKind::Constant(s) => (!band.contains(*s)).then_some(*s),
            ScenarioKind::TwoPoint => None,
            ScenarioKind::Table(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidConfig("empty volatility table".into()));
                }
                v.iter().copied().find(|s| !band.contains(*s))
            }
        };
        if let Some(s) = bad {
            return Err(Error::InvalidConfig(format!(
                "scenario volatility {s} outside [{}, {}]",
                band.sigma_min(),
                band.sigma_max()
            )));
        }
        Ok(Self { kind, band })
    }

    pub fn constant(sigma: f64, band: VolatilityBand) -> Result<Self> {
        Self::new(ScenarioKind::Constant(sigma), band)
    }

    /// The two constant extreme scenarios `sigma_min` and `sigma_max`.
    pub fn extremes(band: VolatilityBand) -> Vec<Self> {
        let mut out = vec![Self {
            kind: ScenarioKind::Constant(band.sigma_min()),
            band,
        }];
        if !band.is_degenerate() {
            out.push(Self {
                kind: ScenarioKind::Constant(band.sigma_max()),
                band,
            });
        }
        out
    }

    pub fn kind(&self) -> &ScenarioKind {
        &self.kind
    }

    pub fn band(&self) -> VolatilityBand {
        self.band
    }

    pub fn label(&self) -> String {
        match &self.kind {
            ScenarioKind::Constant(s) => format!("constant({s})"),
            ScenarioKind::TwoPoint => "two-point".to_string(),
            ScenarioKind::Table(v) => format!("table[{}]", v.len()),
        }
    }

    fn sigma_at<R: Rng + ?Sized>(&self, step: usize, rng: &mut R) -> f64 {
        match &self.kind {
            ScenarioKind::Constant(s) => *s,
            ScenarioKind::TwoPoint => {
                if rng.random_bool(0.5) {
                    self.band.sigma_max()
                } else {
                    self.band.sigma_min()
                }
            }
            ScenarioKind::Table(v) => v[step % v.len()],
        }
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n_steps: usize, dt: f64, rng: &mut R) -> NoiseIncrements {
        let sqrt_dt = dt.sqrt();
        let mut db = Vec::with_capacity(n_steps);
        let mut dqv = Vec::with_capacity(n_steps);
        for n in 0..n_steps {
            let sigma = self.sigma_at(n, rng);
            let xi: f64 = rng.sample(StandardNormal);
            db.push(sigma * sqrt_dt * xi);
            dqv.push(sigma * sigma * dt);
        }
        NoiseIncrements { db, dqv }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")))
    }
}

/// Increments `sqrt(dt) X` with `X` drawn from the table; `d<B>` is the realized `dB^2`.
pub fn sample_increments_gnormal(table: &GNormalTable, n_steps: usize, dt: f64, seed: u64) -> Result<NoiseIncrements> {
    check_dt(dt)?;
    table.check_sampleable()?;
    Ok(gnormal_with(table, n_steps, dt, &mut master_rng(seed)))
}

fn gnormal_with<R: Rng + ?Sized>(table: &GNormalTable, n_steps: usize, dt: f64, rng: &mut R) -> NoiseIncrements {
    let sqrt_dt = dt.sqrt();
    let db: Vec<f64> = (0..n_steps).map(|_| sqrt_dt * table.sample(rng)).collect();
    let dqv = db.iter().map(|d| d * d).collect();
    NoiseIncrements { db, dqv }
}

/// Increments `sigma_n sqrt(dt) xi_n` with model quadratic variation `sigma_n^2 dt`.
pub fn sample_increments_scenario(
    policy: &ScenarioPolicy,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<NoiseIncrements> {
    check_dt(dt)?;
    Ok(policy.sample_with(n_steps, dt, &mut master_rng(seed)))
}

/// Where per-path increments come from.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    GNormal(Arc<GNormalTable>),
    Scenario(ScenarioPolicy),
    /// No randomness (`dB = d<B> = 0`).
    Zero,
}

impl NoiseSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSource::GNormal(t) => t.check_sampleable(),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_steps: usize, dt: f64, rng: &mut R) -> NoiseIncrements {
        match self {
            NoiseSource::GNormal(t) => gnormal_with(t, n_steps, dt, rng),
            NoiseSource::Scenario(p) => p.sample_with(n_steps, dt, rng),
            NoiseSource::Zero => NoiseIncrements::zeros(n_steps),
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseSource::GNormal(_) => "gnormal".to_string(),
            NoiseSource::Scenario(p) => p.label(),
            NoiseSource::Zero => "zero".to_string(),
        }
    }
}

/// Scenario-maximum estimate of a sublinear expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearEstimate {
    pub value: f64,
    /// Standard error of the maximizing scenario.
    pub std_error: f64,
    pub argmax: usize,
}

/// `sup_P E^P[xi]` over a finite scenario set: the largest per-scenario mean.
pub fn sublinear_expectation(estimates: &[McEstimate]) -> Result<SublinearEstimate> {
    let (argmax, best) = estimates
        .iter()
        .enumerate()
        .fold(None::<(usize, &McEstimate)>, |acc, (i, e)| match acc {
            Some((_, b)) if b.mean >= e.mean => acc,
            _ => Some((i, e)),
        })
        .ok_or(Error::EmptyScenarioSet)?;
    Ok(SublinearEstimate {
        value: best.mean,
        std_error: best.std_error,
        argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcalc::{build_gnormal_table, GridSpec};
    use crate::stats::{mean, variance};
    use proptest::prelude::*;

    fn reference_band() -> VolatilityBand {
        VolatilityBand::new(0.75, 1.25).unwrap()
    }

    #[test]
    fn sublinear_is_max() {
        let est: Vec<_> = [1.0, 2.0, 1.5].iter().map(|&m| McEstimate::new(m, 0.1 * m)).collect();
        let s = sublinear_expectation(&est).unwrap();
        assert_eq!(s.value, 2.0);
        assert_eq!(s.argmax, 1);
        assert!((s.std_error - 0.2).abs() < 1e-15);
        assert_eq!(sublinear_expectation(&[McEstimate::new(0.7, 0.0)]).unwrap().value, 0.7);
        assert_eq!(sublinear_expectation(&[]), Err(Error::EmptyScenarioSet));
    }

    #[test]
    fn constant_scenario_has_model_qv() {
        let p = ScenarioPolicy::constant(1.25, reference_band()).unwrap();
        let dt = 0.01;
        let inc = sample_increments_scenario(&p, 100, dt, 3).unwrap();
        assert!(inc.dqv.iter().all(|&q| (q - 1.5625 * dt).abs() < 1e-15));
    }

    #[test]
    fn two_point_scenario_hits_extremes_only() {
        let band = reference_band();
        let p = ScenarioPolicy::new(ScenarioKind::TwoPoint, band).unwrap();
        let dt = 0.02;
        let inc = sample_increments_scenario(&p, 1000, dt, 9).unwrap();
        let lo = 0.5625 * dt;
        let hi = 1.5625 * dt;
        assert!(inc
            .dqv
            .iter()
            .all(|&q| (q - lo).abs() < 1e-15 || (q - hi).abs() < 1e-15));
        assert!(inc.dqv.iter().any(|&q| (q - lo).abs() < 1e-15));
        assert!(inc.dqv.iter().any(|&q| (q - hi).abs() < 1e-15));
    }

    #[test]
    fn constant_scenario_variance() {
        let p = ScenarioPolicy::constant(0.75, reference_band()).unwrap();
        let dt = 0.25;
        let inc = sample_increments_scenario(&p, 1_000_000, dt, 11).unwrap();
        let scaled: Vec<f64> = inc.db.iter().map(|d| d / dt.sqrt()).collect();
        let v = variance(&scaled);
        assert!((0.5569..=0.5681).contains(&v), "{v}");
    }

    #[test]
    fn policy_rejects_out_of_band() {
        let band = reference_band();
        assert!(ScenarioPolicy::constant(2.0, band).is_err());
        assert!(ScenarioPolicy::new(ScenarioKind::Table(vec![1.0, 0.5]), band).is_err());
        assert!(ScenarioPolicy::new(ScenarioKind::Table(vec![]), band).is_err());
        assert!(sample_increments_scenario(&ScenarioPolicy::constant(1.0, band).unwrap(), 3, 0.0, 1).is_err());
    }

    #[test]
    fn table_scenario_cycles() {
        let band = reference_band();
        let p = ScenarioPolicy::new(ScenarioKind::Table(vec![0.75, 1.0, 1.25]), band).unwrap();
        let inc = sample_increments_scenario(&p, 7, 1.0, 0).unwrap();
        assert_eq!(inc.dqv, vec![0.5625, 1.0, 1.5625, 0.5625, 1.0, 1.5625, 0.5625]);
    }

    #[test]
    fn gnormal_sampling_is_deterministic() {
        let band = reference_band();
        let table = build_gnormal_table(band, &GridSpec::for_band(band)).unwrap();
        let a = sample_increments_gnormal(&table, 10, 0.01, 42).unwrap();
        let b = sample_increments_gnormal(&table, 10, 0.01, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.db.iter().zip(&a.dqv).all(|(d, q)| *q == d * d));
        assert!(sample_increments_gnormal(&table, 10, -1.0, 42).is_err());
    }

    #[test]
    fn gnormal_degenerate_band_moments() {
        let band = VolatilityBand::point(1.0).unwrap();
        let table = build_gnormal_table(band, &GridSpec::for_band(band)).unwrap();
        let dt = 0.01;
        let inc = sample_increments_gnormal(&table, 1_000_000, dt, 5).unwrap();
        let scaled: Vec<f64> = inc.db.iter().map(|d| d / dt.sqrt()).collect();
        let m = mean(&scaled);
        let v = variance(&scaled);
        assert!(m.abs() <= 0.004, "mean {m}");
        assert!((0.99..=1.01).contains(&v), "variance {v}");
    }

    #[test]
    fn gnormal_reference_band_variance_bracketed() {
        let band = reference_band();
        let table = build_gnormal_table(band, &GridSpec::for_band(band)).unwrap();
        let dt = 0.01;
        let inc = sample_increments_gnormal(&table, 1_000_000, dt, 6).unwrap();
        let scaled: Vec<f64> = inc.db.iter().map(|d| d / dt.sqrt()).collect();
        let v = variance(&scaled);
        assert!((0.5625..=1.5625).contains(&v), "variance {v}");
    }

    #[test]
    fn convex_payoff_over_extreme_scenarios_matches_heat_solver() {
        // E^[B_1^2] via scenario max against the PDE value.
        let band = reference_band();
        let heat = crate::gcalc::solve_gheat(|x| x * x, band, &GridSpec::for_band(band), 1.0)
            .unwrap()
            .value_at(0.0);
        let est: Vec<McEstimate> = ScenarioPolicy::extremes(band)
            .iter()
            .map(|p| {
                let inc = sample_increments_scenario(p, 200_000, 1.0, 21).unwrap();
                let sq: Vec<f64> = inc.db.iter().map(|d| d * d).collect();
                McEstimate::from_samples(&sq)
            })
            .collect();
        let s = sublinear_expectation(&est).unwrap();
        assert!(
            (s.value - heat).abs() < 3.0 * s.std_error + 2e-2,
            "{} vs {heat}",
            s.value
        );
        assert_eq!(s.argmax, 1);
    }

    proptest! {
        #[test]
        fn sublinear_subadditive(xs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 1..5),
                                 ys in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 8), 5)) {
            // Same per-scenario samples for X and Y.
            let k = xs.len();
            let ex: Vec<_> = xs.iter().map(|s| McEstimate::from_samples(s)).collect();
            let ey: Vec<_> = ys[..k].iter().map(|s| McEstimate::from_samples(s)).collect();
            let exy: Vec<_> = xs.iter().zip(&ys[..k])
                .map(|(a, b)| {
                    let sum: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + q).collect();
                    McEstimate::from_samples(&sum)
                })
                .collect();
            let lhs = sublinear_expectation(&exy).unwrap().value;
            let rhs = sublinear_expectation(&ex).unwrap().value + sublinear_expectation(&ey).unwrap().value;
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn scenario_qv_within_band(seed in any::<u64>(), dt in 1e-4f64..1.0) {
            let band = reference_band();
            let p = ScenarioPolicy::new(ScenarioKind::TwoPoint, band).unwrap();
            let inc = sample_increments_scenario(&p, 50, dt, seed).unwrap();
            for q in inc.dqv {
                prop_assert!(q >= 0.5625 * dt * (1.0 - 1e-12) && q <= 1.5625 * dt * (1.0 + 1e-12));
            }
        }
    }
}
