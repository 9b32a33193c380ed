//! Least-squares projection onto a finite basis via normal equations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Feature = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Basis functions of `(state, delayed state)`.
#[derive(Clone)]
pub struct RegressionBasis {
    features: Vec<Feature>,
    names: Vec<String>,
}

impl fmt::Debug for RegressionBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegressionBasis").field("names", &self.names).finish()
    }
}

impl RegressionBasis {
    pub fn new() -> Self {
        Self {
            features: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.features.push(Arc::new(f));
        self.names.push(name.into());
        self
    }

    /// Monomials `x^i y^j`, `i + j <= degree`, by increasing total degree.
    /// Lower degrees are a prefix of higher ones.
    pub fn polynomial(degree: u32) -> Self {
        let mut basis = Self::new();
        for total in 0..=degree {
            for j in 0..=total {
                let i = total - j;
                let name = match (i, j) {
                    (0, 0) => "1".to_string(),
                    (i, 0) => format!("x^{i}"),
                    (0, j) => format!("xd^{j}"),
                    (i, j) => format!("x^{i}*xd^{j}"),
                };
                basis = basis.with(name, move |x, y| x.powi(i as i32) * y.powi(j as i32));
            }
        }
        basis
    }

    /// Degree-2 polynomials in `(x, x_delay)`: 1, x, xd, x^2, x*xd, xd^2.
    pub fn quadratic() -> Self {
        Self::polynomial(2)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, x: f64, xd: f64) -> Vec<f64> {
        self.features.iter().map(|f| f(x, xd)).collect()
    }

    pub fn design(&self, x: &[f64], xd: &[f64]) -> Result<DesignMatrix> {
        if x.len() != xd.len() {
            return Err(Error::LengthMismatch {
                what: "delayed states",
                expected: x.len(),
                got: xd.len(),
            });
        }
        let cols = self.len();
        let mut data = Vec::with_capacity(x.len() * cols);
        for (a, b) in x.iter().zip(xd) {
            data.extend(self.features.iter().map(|f| f(*a, *b)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "basis evaluation",
                step: 0,
            });
        }
        Ok(DesignMatrix {
            rows: x.len(),
            cols,
            data,
        })
    }
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self::quadratic()
    }
}

/// Row-major design matrix, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig(
                "design rows must be nonempty and equally long".into(),
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// When to add the ridge term `lambda |w|^2`, `lambda = 1e-8 trace(W^T W) / L1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeMode {
    /// Only if the plain normal equations are numerically singular.
    #[default]
    Fallback,
    Always,
}

pub const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub coefficients: Vec<f64>,
    /// Ridge parameter actually used (0 when unregularized).
    pub ridge: f64,
}

impl RegressionModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum()
    }

    pub fn predict_all(&self, design: &DesignMatrix) -> Vec<f64> {
        (0..design.rows).map(|i| self.predict(design.row(i))).collect()
    }

    pub fn is_regularized(&self) -> bool {
        self.ridge > 0.0
    }

    /// In-sample residual sum of squares.
    pub fn rss(&self, targets: &[f64], design: &DesignMatrix) -> f64 {
        targets
            .iter()
            .enumerate()
            .map(|(i, y)| (y - self.predict(design.row(i))).powi(2))
            .sum()
    }
}

/// Cholesky factorization in place (lower triangle); `None` if not numerically positive definite.
fn cholesky(mut a: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 1e-13 {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Solve `(G + ridge I) w = r` after scaling `G` to unit diagonal.
fn solve_scaled(gram: &[f64], rhs: &[f64], n: usize, ridge: f64) -> Option<Vec<f64>> {
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = gram[i * n + i] + ridge;
            if d > 0.0 {
                d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let g = gram[i * n + j] + if i == j { ridge } else { 0.0 };
            s[i * n + j] = g / (scale[i] * scale[j]);
        }
    }
    let r: Vec<f64> = rhs.iter().zip(&scale).map(|(v, d)| v / d).collect();
    let l = cholesky(s, n)?;
    let w = cholesky_solve(&l, n, &r);
    let w: Vec<f64> = w.iter().zip(&scale).map(|(v, d)| v / d).collect();
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Least-squares coefficients via the normal equations `(W^T W) w = W^T y`.
pub fn regress(targets: &[f64], design: &DesignMatrix) -> Result<RegressionModel> {
    regress_with(targets, design, RidgeMode::default())
}

pub fn regress_with(targets: &[f64], design: &DesignMatrix, mode: RidgeMode) -> Result<RegressionModel> {
    regress_weighted(targets, design, mode, None)
}

/// Weighted least squares: minimizes `sum_i w_i^2 (y_i - row_i . c)^2`.
pub fn regress_weighted(
    targets: &[f64],
    design: &DesignMatrix,
    mode: RidgeMode,
    weights: Option<&[f64]>,
) -> Result<RegressionModel> {
    let (rows, n) = (design.rows, design.cols);
    if targets.len() != rows {
        return Err(Error::LengthMismatch {
            what: "regression targets",
            expected: rows,
            got: targets.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != rows {
            return Err(Error::LengthMismatch {
                what: "regression weights",
                expected: rows,
                got: w.len(),
            });
        }
    }
    if rows < n {
        return Err(Error::TooFewPaths { paths: rows, basis: n });
    }
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (i, y) in targets.iter().enumerate() {
        let r = design.row(i);
        let w2 = weights.map_or(1.0, |w| w[i] * w[i]);
        for a in 0..n {
            rhs[a] += w2 * r[a] * y;
            for b in 0..=a {
                gram[a * n + b] += w2 * r[a] * r[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[b * n + a] = gram[a * n + b];
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    let lambda = RIDGE_SCALE * trace / n as f64;

    if mode == RidgeMode::Fallback {
        if let Some(coefficients) = solve_scaled(&gram, &rhs, n, 0.0) {
            return Ok(RegressionModel {
                coefficients,
                ridge: 0.0,
            });
        }
        log::debug!("normal equations singular; retrying with ridge {lambda:e}");
    }
    let coefficients = solve_scaled(&gram, &rhs, n, lambda).ok_or(Error::Singular)?;
    Ok(RegressionModel {
        coefficients,
        ridge: lambda,
    })
}
