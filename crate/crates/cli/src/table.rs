//! Plain-text coefficient tables.

use panelcca_core::regress::{MixedModelResult, RegressionResult};

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub fn regression_table(title: &str, result: &RegressionResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("{title}\n"));
    out.push_str(&format!(
        "{:<12} {:>12} {:>12} {:>10}\n",
        "term", "coef", "robust se", "p-value"
    ));
    for i in 0..result.names.len() {
        out.push_str(&format!(
            "{:<12} {:>12.6} {:>12.6} {:>10.4} {}\n",
            result.names[i],
            result.coefficients[i],
            result.robust_se[i],
            result.p_values[i],
            stars(result.p_values[i]),
        ));
    }
    out.push_str(&format!("N = {}", result.n_obs));
    if let Some(r2) = result.r_squared {
        out.push_str(&format!("    R2 = {r2:.4}"));
    }
    out.push('\n');
    out
}

pub fn mixed_table(result: &MixedModelResult) -> String {
    let mut out = regression_table("mixed-effects (REML, CR2 errors)", &result.base);
    let vc = &result.variance_components;
    out.push_str(&format!(
        "variance components: intercept {:.6}  temp {:.6}  pdsi {:.6}  residual {:.6}\n",
        vc.intercept, vc.temp_slope, vc.pdsi_slope, vc.residual
    ));
    out.push_str(&format!("REML log-likelihood = {:.6}\n", result.reml_loglik));
    for warning in &result.boundary_warnings {
        out.push_str(&format!("note: {warning}\n"));
    }
    out
}
