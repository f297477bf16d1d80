//! Sparse multi-set CCA: block coordinate ascent on the summed pairwise
//! covariance objective under unit-L2 and L1 constraints.
//!
//! Each block update solves max w'v over {||w||_2 <= 1, ||w||_1 <= c}
//! exactly via soft-thresholding with the threshold found by binary
//! search, so the objective trajectory is nondecreasing. Covariance is
//! treated as the identity inside the update (the usual diagonal
//! approximation for wide standardized matrices), which makes the variates
//! covariance-maximizing; a post-hoc correlation report is attached for
//! interpretation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::SplitMix64;

/// Entrywise soft-thresholding: sign(v) * max(|v| - delta, 0).
pub fn soft_threshold(v: &[f64], delta: f64) -> Vec<f64> {
    debug_assert!(delta >= 0.0);
    v.iter()
        .map(|&x| {
            if x > delta {
                x - delta
            } else if x < -delta {
                x + delta
            } else {
                0.0
            }
        })
        .collect()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// First index of the largest |entry| (deterministic tie-break).
fn argmax_abs(v: &[f64]) -> usize {
    let mut arg = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[arg].abs() {
            arg = i;
        }
    }
    arg
}

fn one_sparse_unit(v: &[f64]) -> Vec<f64> {
    let arg = argmax_abs(v);
    let mut w = vec![0.0; v.len()];
    w[arg] = v[arg].signum();
    w
}

/// Maximize w'v over the unit L2 ball intersected with the L1 ball of
/// radius c: soft-threshold v at the smallest delta whose normalized
/// result meets the L1 bound (binary search to 1e-10 on delta).
pub fn l1_constrained_unit(v: &[f64], c: f64) -> Result<Vec<f64>> {
    let p = v.len();
    if !(1.0..=(p as f64).sqrt() + 1e-12).contains(&c) {
        return Err(Error::Validation(format!(
            "L1 bound {c} outside [1, sqrt({p})]"
        )));
    }
    let norm = l2(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroGradient(
            "update direction is zero; retry with a different initialization".into(),
        ));
    }
    let unit: Vec<f64> = v.iter().map(|x| x / norm).collect();
    if l1(&unit) <= c {
        return Ok(unit);
    }
    if c == 1.0 {
        // L1 = L2 = 1 forces a 1-sparse vector; shortcut past the search
        // so exact ties cannot leave two surviving coordinates.
        return Ok(one_sparse_unit(v));
    }
    let normalized_l1 = |delta: f64| -> Option<f64> {
        let s = soft_threshold(v, delta);
        let n = l2(&s);
        if n == 0.0 {
            None
        } else {
            Some(l1(&s) / n)
        }
    };
    let mut lo = 0.0f64;
    let mut hi = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut feasible_hi = None;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        match normalized_l1(mid) {
            Some(ratio) if ratio <= c => {
                hi = mid;
                feasible_hi = Some(mid);
            }
            Some(_) => lo = mid,
            // Threshold wiped the vector (exact ties at the max): any
            // smaller delta keeps mass, so shrink from above.
            None => hi = mid,
        }
    }
    match feasible_hi {
        Some(delta) => {
            let s = soft_threshold(v, delta);
            let n = l2(&s);
            Ok(s.into_iter().map(|x| x / n).collect())
        }
        // No interior threshold satisfies the bound (tied maxima with c
        // below the tie multiplicity); fall back to the 1-sparse vertex.
        None => Ok(one_sparse_unit(v)),
    }
}

/// A K-set sparse CCA problem. Datasets share the sample dimension T and
/// are expected column-standardized; `c[k]` is the L1 bound for dataset k.
#[derive(Debug, Clone)]
pub struct SmccaProblem {
    pub datasets: Vec<DMatrix<f64>>,
    pub c: Vec<f64>,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl SmccaProblem {
    pub fn new(datasets: Vec<DMatrix<f64>>, c: Vec<f64>) -> Result<Self> {
        Self { datasets, c, max_sweeps: 200, tol: 1e-9 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.datasets.len() < 2 {
            return Err(Error::Validation("need at least 2 datasets".into()));
        }
        if self.c.len() != self.datasets.len() {
            return Err(Error::Validation(format!(
                "{} L1 bounds for {} datasets",
                self.c.len(),
                self.datasets.len()
            )));
        }
        let t = self.datasets[0].nrows();
        for (k, x) in self.datasets.iter().enumerate() {
            if x.nrows() != t {
                return Err(Error::Alignment(format!(
                    "dataset {k} has {} rows, expected {t}",
                    x.nrows()
                )));
            }
            if x.ncols() == 0 {
                return Err(Error::Validation(format!("dataset {k} has no columns")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("dataset {k} contains non-finite values")));
            }
            let p = x.ncols() as f64;
            if !(1.0..=p.sqrt() + 1e-12).contains(&self.c[k]) {
                return Err(Error::Validation(format!(
                    "L1 bound {} for dataset {k} outside [1, sqrt({})]",
                    self.c[k],
                    x.ncols()
                )));
            }
        }
        if self.max_sweeps == 0 {
            return Err(Error::Validation("max sweeps must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Validation("tolerance must be positive".into()));
        }
        Ok(self)
    }
}

/// How the weight vectors are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Top right singular vector of each dataset, sign-pinned. Deterministic.
    TopSingular,
    /// Seeded random unit vectors.
    Random,
}

/// Norm slack recorded after every sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepStat {
    pub objective: f64,
    /// max_k (||w_k||_1 - c_k)
    pub max_l1_excess: f64,
    /// max_k ||w_k||_2
    pub max_l2_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmccaResult {
    pub weights: Vec<Vec<f64>>,
    /// Objective after each sweep.
    pub objective_trajectory: Vec<f64>,
    pub sweep_stats: Vec<SweepStat>,
    /// T x K variates, one series per dataset.
    pub variates: Vec<Vec<f64>>,
    /// Pairwise Pearson correlations of the variates (post-hoc report).
    pub variate_correlations: Vec<Vec<f64>>,
    pub converged: bool,
    pub sweeps_used: usize,
}

fn sign_pinned_top_singular(x: &DMatrix<f64>) -> Vec<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let mut w: Vec<f64> = vt.row(0).iter().copied().collect();
    let arg = argmax_abs(&w);
    if w[arg] < 0.0 {
        for x in w.iter_mut() {
            *x = -*x;
        }
    }
    w
}

fn objective(datasets: &[DMatrix<f64>], weights: &[DVector<f64>]) -> f64 {
    let variates: Vec<DVector<f64>> =
        datasets.iter().zip(weights).map(|(x, w)| x * w).collect();
    let mut obj = 0.0;
    for i in 0..variates.len() {
        for j in (i + 1)..variates.len() {
            obj += variates[i].dot(&variates[j]);
        }
    }
    obj
}

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

pub fn fit_smcca(problem: &SmccaProblem, seed: u64) -> Result<SmccaResult> {
    fit_smcca_with(problem, seed, InitMode::TopSingular)
}

/// Block coordinate ascent: sweep k = 1..K updating
/// w_k <- argmax over the constraint set of w' X_k' sum_{j != k} X_j w_j,
/// until the relative objective change drops below the tolerance.
pub fn fit_smcca_with(problem: &SmccaProblem, seed: u64, init: InitMode) -> Result<SmccaResult> {
    let datasets = &problem.datasets;
    let k_sets = datasets.len();
    let mut weights: Vec<DVector<f64>> = match init {
        InitMode::TopSingular => {
            datasets.iter().map(|x| DVector::from_vec(sign_pinned_top_singular(x))).collect()
        }
        InitMode::Random => {
            let mut out = Vec::with_capacity(k_sets);
            for (k, x) in datasets.iter().enumerate() {
                let mut rng = SplitMix64::substream(seed, k as u64);
                let mut w: Vec<f64> = (0..x.ncols()).map(|_| rng.next_normal()).collect();
                let n = l2(&w);
                for v in w.iter_mut() {
                    *v /= n;
                }
                out.push(DVector::from_vec(w));
            }
            out
        }
    };
    // Project initial vectors into the feasible set.
    for (k, w) in weights.iter_mut().enumerate() {
        let projected = l1_constrained_unit(w.as_slice(), problem.c[k]).map_err(|e| match e {
            Error::ZeroGradient(_) => Error::DegenerateInput(
                "initialization produced a zero weight vector; reseed and retry".into(),
            ),
            other => other,
        })?;
        *w = DVector::from_vec(projected);
    }

    let mut variate_sum: DVector<f64> = DVector::zeros(datasets[0].nrows());
    let mut variates: Vec<DVector<f64>> = Vec::with_capacity(k_sets);
    for (x, w) in datasets.iter().zip(&weights) {
        let v = x * w;
        variate_sum += &v;
        variates.push(v);
    }

    let mut trajectory = Vec::new();
    let mut sweep_stats = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    let mut last_obj = f64::NEG_INFINITY;
    for sweep in 0..problem.max_sweeps {
        sweeps_used = sweep + 1;
        for k in 0..k_sets {
            let others = &variate_sum - &variates[k];
            let target = datasets[k].transpose() * &others;
            let updated = l1_constrained_unit(target.as_slice(), problem.c[k]).map_err(|e| {
                match e {
                    Error::ZeroGradient(_) => Error::DegenerateInput(format!(
                        "update for dataset {k} collapsed to zero at sweep {sweep}; \
                         reseed and retry"
                    )),
                    other => other,
                }
            })?;
            weights[k] = DVector::from_vec(updated);
            let v = &datasets[k] * &weights[k];
            variate_sum += &v - &variates[k];
            variates[k] = v;
        }
        let obj = objective(datasets, &weights);
        let max_l1_excess = weights
            .iter()
            .zip(&problem.c)
            .map(|(w, &c)| l1(w.as_slice()) - c)
            .fold(f64::NEG_INFINITY, f64::max);
        let max_l2_norm =
            weights.iter().map(|w| l2(w.as_slice())).fold(0.0f64, f64::max);
        trajectory.push(obj);
        sweep_stats.push(SweepStat { objective: obj, max_l1_excess, max_l2_norm });
        if sweep > 0 && (obj - last_obj).abs() <= problem.tol * last_obj.abs().max(1.0) {
            converged = true;
            break;
        }
        last_obj = obj;
    }

    let variate_correlations: Vec<Vec<f64>> = (0..k_sets)
        .map(|i| (0..k_sets).map(|j| pearson(&variates[i], &variates[j])).collect())
        .collect();
    Ok(SmccaResult {
        weights: weights.iter().map(|w| w.iter().copied().collect()).collect(),
        objective_trajectory: trajectory,
        sweep_stats,
        variates: variates.iter().map(|v| v.iter().copied().collect()).collect(),
        variate_correlations,
        converged,
        sweeps_used,
    })
}

/// Map a shared penalty fraction to per-dataset L1 bounds:
/// c_k = 1 + lambda (sqrt(p_k) - 1), lambda in (0, 1].
pub fn lambda_to_bounds(datasets: &[DMatrix<f64>], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) || lambda == 0.0 {
        return Err(Error::Validation(format!("lambda {lambda} outside (0, 1]")));
    }
    Ok(datasets
        .iter()
        .map(|x| 1.0 + lambda * ((x.ncols() as f64).sqrt() - 1.0))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub bounds: Vec<f64>,
    pub result: SmccaResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaSweepResult {
    pub fits: Vec<LambdaFit>,
    /// stability[a][b] = min over datasets of |corr| between the variates
    /// of grid points a and b.
    pub stability: Vec<Vec<f64>>,
}

/// One fit per grid value with shared initialization, plus the cross-grid
/// variate stability matrix.
pub fn lambda_sweep(
    datasets: &[DMatrix<f64>],
    grid: &[f64],
    seed: u64,
    max_sweeps: usize,
    tol: f64,
) -> Result<LambdaSweepResult> {
    if grid.is_empty() {
        return Err(Error::Validation("lambda grid must be nonempty".into()));
    }
    let mut fits = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let bounds = lambda_to_bounds(datasets, lambda)?;
        let problem = SmccaProblem {
            datasets: datasets.to_vec(),
            c: bounds.clone(),
            max_sweeps,
            tol,
        }
        .validated()?;
        let result = fit_smcca(&problem, seed)?;
        fits.push(LambdaFit { lambda, bounds, result });
    }
    let g = fits.len();
    let k_sets = datasets.len();
    let mut stability = vec![vec![0.0; g]; g];
    for a in 0..g {
        for b in 0..g {
            let mut min_corr = f64::INFINITY;
            for k in 0..k_sets {
                let va = DVector::from_vec(fits[a].result.variates[k].clone());
                let vb = DVector::from_vec(fits[b].result.variates[k].clone());
                let c = pearson(&va, &vb).abs();
                min_corr = min_corr.min(if c.is_nan() { 0.0 } else { c });
            }
            stability[a][b] = min_corr;
        }
    }
    Ok(LambdaSweepResult { fits, stability })
}
