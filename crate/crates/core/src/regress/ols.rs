//! Pooled OLS of cpi on (intercept, temp, pdsi) with Newey-West errors.

use nalgebra::{DMatrix, DVector};

use super::{
    bartlett_weight, normal_p, sandwich_se, solve_ols, EstimatorTag, LagSpec, PanelObservations,
    RegressionResult,
};
use crate::error::{Error, Result};

/// HAC covariance of the stacked scores with a Bartlett taper over the
/// stacked (location, year) ordering. Bandwidth 0 degenerates to HC0.
fn newey_west_meat(x: &DMatrix<f64>, resid: &DVector<f64>, bandwidth: usize) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut meat = DMatrix::zeros(p, p);
    for t in 0..n {
        let e2 = resid[t] * resid[t];
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += e2 * x[(t, a)] * x[(t, b)];
            }
        }
    }
    for k in 1..=bandwidth.min(n.saturating_sub(1)) {
        let w = bartlett_weight(k, bandwidth);
        let mut gamma = DMatrix::zeros(p, p);
        for t in k..n {
            let scale = resid[t] * resid[t - k];
            for a in 0..p {
                for b in 0..p {
                    gamma[(a, b)] += scale * x[(t, a)] * x[(t - k, b)];
                }
            }
        }
        meat += w * (&gamma + gamma.transpose());
    }
    meat
}

/// Pooled OLS with Newey-West (Bartlett kernel) standard errors.
///
/// The bandwidth applies over the stacked complete-case rows in
/// (location, year) order; `LagSpec::Auto` resolves against the number of
/// observations. P-values use the normal approximation.
pub fn ols_newey_west(data: &PanelObservations, lag: LagSpec) -> Result<RegressionResult> {
    let cases = data.complete_cases();
    let n = cases.len();
    let names: Vec<String> = ["intercept", "temp", "pdsi"].map(String::from).to_vec();
    let p = names.len();
    if n < p + 1 {
        return Err(Error::DegenerateInput(format!(
            "OLS needs at least {} complete cases, got {n}",
            p + 1
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => cases[i].temp,
        _ => cases[i].pdsi,
    });
    let y = DVector::from_iterator(n, cases.iter().map(|r| r.cpi));

    let (beta, xtx_inv) = solve_ols(&x, &y, &names)?;
    let resid = &y - &x * &beta;

    let bandwidth = lag.resolve(n);
    let meat = newey_west_meat(&x, &resid, bandwidth);
    let robust_se = sandwich_se(&xtx_inv, &meat);
    let p_values: Vec<f64> =
        beta.iter().zip(&robust_se).map(|(&b, &se)| normal_p(b, se)).collect();

    let y_mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let rss: f64 = resid.iter().map(|v| v * v).sum();
    let r_squared = if tss > 0.0 { Some(1.0 - rss / tss) } else { None };

    Ok(RegressionResult {
        names,
        coefficients: beta.iter().copied().collect(),
        robust_se,
        p_values,
        location_effects: None,
        year_effects: None,
        residuals: resid.iter().copied().collect(),
        n_obs: n,
        r_squared,
        estimator: EstimatorTag::OlsNw,
    })
}
