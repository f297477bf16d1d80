//! Panel regression estimators with robust covariance matrices: pooled OLS
//! with Newey-West errors, two-way fixed effects with cluster-robust errors
//! and a random-intercept/random-slope mixed model estimated by REML with
//! CR2 errors.

mod fixed_effects;
mod mixed;
mod ols;

pub use fixed_effects::{fe_twoway, ClusterCov};
pub use mixed::{
    extract_location_coefficients, mixed_effects_reml, LocationEffects, MixedModelResult,
    MixedOptions, VarianceComponents,
};
pub use ols::ols_newey_west;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::PanelMatrix;

/// One (location, year) observation; `NaN` fields mark missing variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub location: String,
    pub year: i32,
    pub cpi: f64,
    pub temp: f64,
    pub pdsi: f64,
}

impl PanelRow {
    pub fn is_complete(&self) -> bool {
        self.cpi.is_finite() && self.temp.is_finite() && self.pdsi.is_finite()
    }
}

/// Stacked panel observations, ordered by (location, year).
#[derive(Debug, Clone)]
pub struct PanelObservations {
    rows: Vec<PanelRow>,
}

impl PanelObservations {
    pub fn from_rows(mut rows: Vec<PanelRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.location.cmp(&b.location).then(a.year.cmp(&b.year)));
        for w in rows.windows(2) {
            if w[0].location == w[1].location && w[0].year == w[1].year {
                return Err(Error::DuplicateKey(format!(
                    "(location '{}', year {})",
                    w[0].location, w[0].year
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Assemble from aligned cpi/temp/pdsi panels.
    pub fn from_panels(
        cpi: &PanelMatrix,
        temp: &PanelMatrix,
        pdsi: &PanelMatrix,
    ) -> Result<Self> {
        if !cpi.same_shape(temp) || !cpi.same_shape(pdsi) {
            return Err(Error::Alignment(
                "cpi, temp and pdsi panels must share years and locations".into(),
            ));
        }
        let mut rows = Vec::with_capacity(cpi.n_years() * cpi.n_locations());
        for (n, loc) in cpi.locations().iter().enumerate() {
            for (t, &year) in cpi.years().iter().enumerate() {
                rows.push(PanelRow {
                    location: loc.name.clone(),
                    year,
                    cpi: cpi.value(t, n).unwrap_or(f64::NAN),
                    temp: temp.value(t, n).unwrap_or(f64::NAN),
                    pdsi: pdsi.value(t, n).unwrap_or(f64::NAN),
                });
            }
        }
        Self::from_rows(rows)
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    /// Rows with all three variables present, in (location, year) order.
    pub fn complete_cases(&self) -> Vec<&PanelRow> {
        self.rows.iter().filter(|r| r.is_complete()).collect()
    }
}

/// Which estimator produced a [`RegressionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    OlsNw,
    FeArellano,
    MixedCr2,
}

/// Point estimates with robust inference and optional absorbed effects.
#[derive(Debug, Clone, Serialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub location_effects: Option<Vec<(String, f64)>>,
    pub year_effects: Option<Vec<(i32, f64)>>,
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    pub r_squared: Option<f64>,
    pub estimator: EstimatorTag,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.robust_se[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.p_values[i])
    }
}

/// Newey-West bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagSpec {
    /// floor(4 * (T/100)^(2/9))
    Auto,
    Fixed(usize),
}

impl LagSpec {
    pub fn resolve(&self, t: usize) -> usize {
        match *self {
            LagSpec::Fixed(l) => l,
            LagSpec::Auto => (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize,
        }
    }
}

/// Two-sided p-value from the normal approximation.
pub(crate) fn normal_p(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    2.0 * normal.cdf(-(estimate / se).abs())
}

/// Names of columns that are (nearly) linear combinations of earlier ones,
/// by modified Gram-Schmidt with a relative tolerance.
pub(crate) fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        let mut r = col.clone();
        for b in &basis {
            let proj = b.dot(&r);
            r -= b * proj;
        }
        if r.norm() <= 1e-10 * scale.max(1e-300) || scale == 0.0 {
            dependent.push(names[j].clone());
        } else {
            let n = r.norm();
            basis.push(r / n);
        }
    }
    dependent
}

/// Solve the normal equations, reporting dependent columns on failure.
pub(crate) fn solve_ols(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dependent = dependent_columns(x, names);
    if !dependent.is_empty() {
        return Err(Error::Collinearity(dependent));
    }
    let xtx = x.transpose() * x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Collinearity(names.to_vec()))?;
    let beta = chol.solve(&(x.transpose() * y));
    let xtx_inv = chol.inverse();
    Ok((beta, xtx_inv))
}

/// Bartlett taper, weight 1 at lag 0 declining to 0 past the bandwidth.
pub(crate) fn bartlett_weight(lag: usize, bandwidth: usize) -> f64 {
    if lag > bandwidth {
        0.0
    } else {
        1.0 - lag as f64 / (bandwidth as f64 + 1.0)
    }
}

/// Cluster-robust "meat" at the given clustering, optionally tapering
/// within-cluster cross products by the year distance (cluster-HAC).
/// `lag = None` weights every within-cluster pair by 1 (plain Arellano).
pub(crate) fn cluster_meat(
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    clusters: &[usize],
    years: &[i32],
    lag: Option<usize>,
) -> DMatrix<f64> {
    let p = x.ncols();
    let n = x.nrows();
    let n_clusters = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for i in 0..n {
        by_cluster[clusters[i]].push(i);
    }
    let mut meat = DMatrix::zeros(p, p);
    match lag {
        None => {
            for members in &by_cluster {
                let mut s: DVector<f64> = DVector::zeros(p);
                for &i in members {
                    for k in 0..p {
                        s[k] += x[(i, k)] * resid[i];
                    }
                }
                meat += &s * s.transpose();
            }
        }
        Some(bandwidth) => {
            for members in &by_cluster {
                for &i in members {
                    for &j in members {
                        let d = (years[i] - years[j]).unsigned_abs() as usize;
                        let w = bartlett_weight(d, bandwidth);
                        if w == 0.0 {
                            continue;
                        }
                        let scale = w * resid[i] * resid[j];
                        for a in 0..p {
                            for b in 0..p {
                                meat[(a, b)] += scale * x[(i, a)] * x[(j, b)];
                            }
                        }
                    }
                }
            }
        }
    }
    meat
}

/// Standard errors from a sandwich covariance, flooring tiny negative
/// diagonal noise at zero.
pub(crate) fn sandwich_se(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> Vec<f64> {
    let cov = bread * meat * bread;
    (0..cov.nrows()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
}
