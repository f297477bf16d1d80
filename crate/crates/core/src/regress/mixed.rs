//! Linear mixed model with a random intercept and random slopes on temp and
//! pdsi, grouped by location, estimated by REML with CR2 cluster-robust
//! standard errors.
//!
//! The random-effect covariance is diagonal. Variance components are
//! profiled as ratios to the residual variance and optimized on the log
//! scale, so estimates are nonnegative by construction; components driven
//! to the zero boundary are flagged, not failed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{normal_p, EstimatorTag, PanelObservations, RegressionResult};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;
/// Ratio below which a variance component counts as pinned at zero.
const BOUNDARY_RATIO: f64 = 1e-8;

/// REML convergence controls.
#[derive(Debug, Clone, Copy)]
pub struct MixedOptions {
    pub max_iter: usize,
    /// Relative log-likelihood spread at which the search stops.
    pub ll_tol: f64,
}

impl Default for MixedOptions {
    fn default() -> Self {
        Self { max_iter: 4000, ll_tol: 1e-11 }
    }
}

/// Estimated variance components (variances, not standard deviations).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VarianceComponents {
    pub intercept: f64,
    pub temp_slope: f64,
    pub pdsi_slope: f64,
    pub residual: f64,
}

/// Per-location best linear unbiased predictions of the random effects.
#[derive(Debug, Clone, Serialize)]
pub struct LocationEffects {
    pub location: String,
    pub intercept: f64,
    pub temp: f64,
    pub pdsi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedModelResult {
    pub base: RegressionResult,
    pub variance_components: VarianceComponents,
    pub blups: Vec<LocationEffects>,
    pub reml_loglik: f64,
    /// Best log-likelihood after each optimizer iteration; nondecreasing.
    pub loglik_trajectory: Vec<f64>,
    /// Names of components pinned at the zero boundary.
    pub boundary_warnings: Vec<String>,
}

struct Block {
    location: String,
    z: DMatrix<f64>,  // n_i x 3 design [1, temp, pdsi]
    y: DVector<f64>,  // n_i
    c: DMatrix<f64>,  // Z'Z
    zy: DVector<f64>, // Z'y
    yy: f64,
}

fn build_blocks(data: &PanelObservations) -> Result<Vec<Block>> {
    let cases = data.complete_cases();
    let mut names: Vec<&str> = cases.iter().map(|r| r.location.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "mixed model needs at least 3 locations, got {}",
            names.len()
        )));
    }
    let mut blocks = Vec::with_capacity(names.len());
    for name in names {
        let rows: Vec<_> = cases.iter().filter(|r| r.location == name).collect();
        if rows.len() < 4 {
            return Err(Error::DegenerateInput(format!(
                "location '{name}' has {} observations, mixed model needs at least 4",
                rows.len()
            )));
        }
        let n_i = rows.len();
        let z = DMatrix::from_fn(n_i, 3, |i, j| match j {
            0 => 1.0,
            1 => rows[i].temp,
            _ => rows[i].pdsi,
        });
        let y = DVector::from_iterator(n_i, rows.iter().map(|r| r.cpi));
        let c = z.transpose() * &z;
        let zy = z.transpose() * &y;
        let yy = y.dot(&y);
        blocks.push(Block { location: name.to_string(), z, y, c, zy, yy });
    }
    Ok(blocks)
}

/// `W = L M^{-1} L` with `M = I + L C L`, `L = diag(sqrt(phi))`. W is the
/// Woodbury core of `H^{-1} = I - Z W Z'`; also returns log|M| = log|H|.
fn woodbury_core(c: &DMatrix<f64>, phi: &[f64; 3]) -> Option<(DMatrix<f64>, f64)> {
    let l: Vec<f64> = phi.iter().map(|p| p.sqrt()).collect();
    let mut m = DMatrix::identity(3, 3);
    for r in 0..3 {
        for s in 0..3 {
            m[(r, s)] += l[r] * c[(r, s)] * l[s];
        }
    }
    let chol: nalgebra::Cholesky<f64, nalgebra::Dyn> = m.cholesky()?;
    let logdet = 2.0 * (0..3).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    let m_inv = chol.inverse();
    let mut w = DMatrix::zeros(3, 3);
    for r in 0..3 {
        for s in 0..3 {
            w[(r, s)] = l[r] * m_inv[(r, s)] * l[s];
        }
    }
    Some((w, logdet))
}

struct RemlEval {
    ll: f64,
    beta: DVector<f64>,
    sigma_e2: f64,
    /// X' H^{-1} X accumulated over blocks.
    a: DMatrix<f64>,
}

/// Profiled REML log-likelihood at variance ratios `phi` (component
/// variance over residual variance). The residual variance and the fixed
/// effects are profiled out block by block via the Woodbury identity.
fn profiled_reml(blocks: &[Block], n: usize, phi: &[f64; 3]) -> Result<RemlEval> {
    let p = 3usize;
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    let mut q = 0.0;
    let mut logdet_h = 0.0;
    for block in blocks {
        let (w, logdet) = woodbury_core(&block.c, phi).ok_or(Error::Conditioning {
            min_eigenvalue: 0.0,
        })?;
        logdet_h += logdet;
        let cw = &block.c * &w;
        a += &block.c - &cw * &block.c;
        b += &block.zy - &cw * &block.zy;
        q += block.yy - block.zy.dot(&(&w * &block.zy));
    }
    let chol_a = a.clone().cholesky().ok_or_else(|| {
        Error::Collinearity(vec!["intercept".into(), "temp".into(), "pdsi".into()])
    })?;
    let beta = chol_a.solve(&b);
    let quad = q - b.dot(&beta);
    if !(quad > 0.0) {
        return Err(Error::DegenerateInput(
            "mixed model residual variance collapsed to zero".into(),
        ));
    }
    let dof = (n - p) as f64;
    let sigma_e2 = quad / dof;
    let logdet_a = 2.0 * (0..p).map(|i| chol_a.l_dirty()[(i, i)].ln()).sum::<f64>();
    let ll = -0.5 * (logdet_h + logdet_a + dof * (sigma_e2.ln() + 1.0 + LN_2PI));
    Ok(RemlEval { ll, beta, sigma_e2, a })
}

struct NelderMead {
    best: Vec<f64>,
    best_trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Minimize `f` over R^dim with a standard Nelder-Mead simplex, recording
/// the best value after every iteration (monotone by construction).
fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    rel_tol: f64,
) -> NelderMead {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for j in 0..dim {
        let mut v = x0.to_vec();
        v[j] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[dim].1 - simplex[0].1;
        trace.push(simplex[0].1);
        if spread.abs() <= rel_tol * (1.0 + simplex[0].1.abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(v, _)| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> =
            (0..dim).map(|j| centroid[j] + (centroid[j] - worst.0[j])).collect();
        let f_reflect = f(&reflect);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> =
                (0..dim).map(|j| centroid[j] + 2.0 * (reflect[j] - centroid[j])).collect();
            let f_expand = f(&expand);
            simplex[dim] = if f_expand < f_reflect { (expand, f_expand) } else { (reflect, f_reflect) };
        } else if f_reflect < simplex[dim - 1].1 {
            simplex[dim] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> =
                (0..dim).map(|j| centroid[j] + 0.5 * (worst.0[j] - centroid[j])).collect();
            let f_contract = f(&contract);
            if f_contract < worst.1 {
                simplex[dim] = (contract, f_contract);
            } else {
                let best = simplex[0].0.clone();
                for k in 1..=dim {
                    let shrunk: Vec<f64> = (0..dim)
                        .map(|j| best[j] + 0.5 * (simplex[k].0[j] - best[j]))
                        .collect();
                    let fs = f(&shrunk);
                    simplex[k] = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    trace.push(simplex[0].1);
    NelderMead { best: simplex[0].0.clone(), best_trace: trace, converged, iterations }
}

fn phi_from_theta(theta: &[f64]) -> [f64; 3] {
    let mut phi = [0.0; 3];
    for j in 0..3 {
        phi[j] = theta[j].clamp(-40.0, 40.0).exp();
    }
    phi
}

/// Symmetric pseudo inverse square root, zeroing eigenvalues below a
/// relative floor.
fn pseudo_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = 1e-12 * max_ev.max(1e-300);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > floor {
            let v = eig.eigenvectors.column(k);
            out += (1.0 / ev.sqrt()) * &v * v.transpose();
        }
    }
    out
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        out += ev.max(0.0).sqrt() * &v * v.transpose();
    }
    out
}

/// Fit the mixed model by REML and report CR2 cluster-robust standard
/// errors for the fixed effects.
pub fn mixed_effects_reml(
    data: &PanelObservations,
    options: &MixedOptions,
) -> Result<MixedModelResult> {
    let blocks = build_blocks(data)?;
    let n: usize = blocks.iter().map(|b| b.y.len()).sum();

    // Any evaluation failure inside the search surfaces as -inf, which the
    // simplex simply moves away from.
    let objective = |theta: &[f64]| -> f64 {
        let phi = phi_from_theta(theta);
        match profiled_reml(&blocks, n, &phi) {
            Ok(eval) => -eval.ll,
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = [0.1f64.ln(); 3];
    let opt = nelder_mead(objective, &x0, 1.0, options.max_iter, options.ll_tol);
    let trajectory: Vec<f64> = opt.best_trace.iter().map(|f| -f).collect();
    if !opt.converged {
        let first = trajectory.first().copied().unwrap_or(f64::NAN);
        let last = trajectory.last().copied().unwrap_or(f64::NAN);
        return Err(Error::Convergence {
            iterations: opt.iterations,
            message: format!(
                "REML search did not meet the log-likelihood tolerance \
                 (trajectory {first:.6} -> {last:.6} over {} evaluations)",
                trajectory.len()
            ),
        });
    }

    let phi = phi_from_theta(&opt.best);
    let eval = profiled_reml(&blocks, n, &phi)?;
    let beta = eval.beta.clone();
    let sigma_e2 = eval.sigma_e2;

    let component_names = ["intercept", "temp", "pdsi"];
    let boundary_warnings: Vec<String> = (0..3)
        .filter(|&j| phi[j] < BOUNDARY_RATIO)
        .map(|j| format!("random-effect variance for '{}' pinned at zero", component_names[j]))
        .collect();

    // BLUPs: u_i = diag(phi) Z' H^{-1} r_i, with marginal residuals r_i.
    let mut blups = Vec::with_capacity(blocks.len());
    let mut residuals = Vec::with_capacity(n);
    for block in &blocks {
        let (w, _) = woodbury_core(&block.c, &phi).ok_or(Error::Conditioning {
            min_eigenvalue: 0.0,
        })?;
        let zr = &block.zy - &block.c * &beta;
        let zhr = &zr - &block.c * &w * &zr;
        let u: Vec<f64> = (0..3).map(|j| phi[j] * zhr[j]).collect();
        blups.push(LocationEffects {
            location: block.location.clone(),
            intercept: u[0],
            temp: u[1],
            pdsi: u[2],
        });
        for i in 0..block.y.len() {
            let fit = (beta[0] + u[0])
                + (beta[1] + u[1]) * block.z[(i, 1)]
                + (beta[2] + u[2]) * block.z[(i, 2)];
            residuals.push(block.y[i] - fit);
        }
    }

    // CR2: adjusted cluster scores in H units; the residual variance
    // cancels between the weights and the bread.
    let a_inv = eval
        .a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Collinearity(vec!["intercept".into(), "temp".into(), "pdsi".into()]))?
        .inverse();
    let mut meat = DMatrix::zeros(3, 3);
    for block in &blocks {
        let n_i = block.y.len();
        let (w, _) = woodbury_core(&block.c, &phi).ok_or(Error::Conditioning {
            min_eigenvalue: 0.0,
        })?;
        let mut h = DMatrix::identity(n_i, n_i);
        for r in 0..n_i {
            for s in 0..n_i {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += block.z[(r, j)] * phi[j] * block.z[(s, j)];
                }
                h[(r, s)] += acc;
            }
        }
        let h_inv = DMatrix::identity(n_i, n_i) - &block.z * &w * block.z.transpose();
        let b_res = &h - &block.z * &a_inv * block.z.transpose();
        let h_half = symmetric_sqrt(&h);
        let adj = &h_half * pseudo_inv_sqrt(&(&h_half * b_res * &h_half)) * &h_half;
        let e = &block.y - &block.z * &beta;
        let s = block.z.transpose() * &h_inv * adj * e;
        meat += &s * s.transpose();
    }
    let cov = &a_inv * meat * &a_inv;
    let robust_se: Vec<f64> = (0..3).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let p_values: Vec<f64> =
        beta.iter().zip(&robust_se).map(|(&b, &se)| normal_p(b, se)).collect();

    let base = RegressionResult {
        names: component_names.iter().map(|s| s.to_string()).collect(),
        coefficients: beta.iter().copied().collect(),
        robust_se,
        p_values,
        location_effects: None,
        year_effects: None,
        residuals,
        n_obs: n,
        r_squared: None,
        estimator: EstimatorTag::MixedCr2,
    };
    Ok(MixedModelResult {
        base,
        variance_components: VarianceComponents {
            intercept: phi[0] * sigma_e2,
            temp_slope: phi[1] * sigma_e2,
            pdsi_slope: phi[2] * sigma_e2,
            residual: sigma_e2,
        },
        blups,
        reml_loglik: eval.ll,
        loglik_trajectory: trajectory,
        boundary_warnings,
    })
}

/// Per-location total slopes: fixed effect plus BLUP, sorted by location.
#[derive(Debug, Clone, Serialize)]
pub struct LocationSlopes {
    pub location: String,
    pub intercept: f64,
    pub temp: f64,
    pub pdsi: f64,
}

pub fn extract_location_coefficients(result: &MixedModelResult) -> Vec<LocationSlopes> {
    let b = &result.base.coefficients;
    result
        .blups
        .iter()
        .map(|u| LocationSlopes {
            location: u.location.clone(),
            intercept: b[0] + u.intercept,
            temp: b[1] + u.temp,
            pdsi: b[2] + u.pdsi,
        })
        .collect()
}
