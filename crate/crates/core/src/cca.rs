//! Two-set canonical correlation analysis via the singular value
//! decomposition of the whitened cross-covariance, with Bartlett's
//! chi-square significance test and plot-ready variate tables.
//!
//! Correlations are the singular values of
//! `Sxx^(-1/2) Sxy Syy^(-1/2)`; weights are back-transformed by the inverse
//! square-root factors and sign-pinned so the largest-magnitude entry of
//! each x-weight vector is positive.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::preprocess::{gaussian_filter, FilterSpec};

/// Centered input pair with the centering/scaling record.
#[derive(Debug, Clone)]
pub struct CcaInput {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    pub x_means: Vec<f64>,
    pub y_means: Vec<f64>,
    pub x_sds: Option<Vec<f64>>,
    pub y_sds: Option<Vec<f64>>,
}

fn center(m: &DMatrix<f64>, scale: bool) -> Result<(DMatrix<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let (t, p) = m.shape();
    let mut out = m.clone();
    let mut means = Vec::with_capacity(p);
    for j in 0..p {
        let mean = m.column(j).sum() / t as f64;
        means.push(mean);
        for i in 0..t {
            out[(i, j)] -= mean;
        }
    }
    let sds = if scale {
        let mut sds = Vec::with_capacity(p);
        for j in 0..p {
            let var = out.column(j).iter().map(|v| v * v).sum::<f64>() / (t as f64 - 1.0);
            let sd = var.sqrt();
            if sd == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "column {j} has zero variance, cannot scale"
                )));
            }
            for i in 0..t {
                out[(i, j)] /= sd;
            }
            sds.push(sd);
        }
        Some(sds)
    } else {
        None
    };
    Ok((out, means, sds))
}

impl CcaInput {
    /// Center both matrices (mandatory) and optionally scale columns to
    /// unit sample standard deviation.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, scale: bool) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Alignment(format!(
                "x has {} rows but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let t = x.nrows();
        if t <= x.ncols().max(y.ncols()) {
            return Err(Error::DegenerateInput(format!(
                "need more samples ({t}) than the wider side ({})",
                x.ncols().max(y.ncols())
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("CCA inputs must be finite".into()));
        }
        let (xc, x_means, x_sds) = center(&x, scale)?;
        let (yc, y_means, y_sds) = center(&y, scale)?;
        Ok(Self { x: xc, y: yc, x_means, y_means, x_sds, y_sds })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }
}

/// Ridge added to the covariance blocks before whitening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeMode {
    Off,
    /// 1e-8 * trace / dim, enough to lift exact duplicates.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaOptions {
    pub ridge: RidgeMode,
    /// Collapse exactly duplicated columns (locations sharing a grid cell)
    /// before whitening and split their weight evenly afterwards.
    pub collapse_duplicates: bool,
}

impl Default for CcaOptions {
    fn default() -> Self {
        Self { ridge: RidgeMode::Off, collapse_duplicates: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CanonicalResult {
    /// k weight vectors of length p for the x side.
    pub a_weights: Vec<Vec<f64>>,
    /// k weight vectors of length q for the y side.
    pub b_weights: Vec<Vec<f64>>,
    /// Canonical correlations, nonincreasing, in [0, 1].
    pub correlations: Vec<f64>,
    /// k canonical variate series of length T for the x side.
    pub u_variates: Vec<Vec<f64>>,
    /// k canonical variate series of length T for the y side.
    pub v_variates: Vec<Vec<f64>>,
    pub n_samples: usize,
    /// Effective dimensions after duplicate collapse.
    pub p_effective: usize,
    pub q_effective: usize,
    /// Duplicate-column groups that were collapsed (kept index first).
    pub collapsed_x: Vec<Vec<usize>>,
    pub collapsed_y: Vec<Vec<usize>>,
    #[serde(skip)]
    pub cov_xx: DMatrix<f64>,
    #[serde(skip)]
    pub cov_xy: DMatrix<f64>,
    #[serde(skip)]
    pub cov_yy: DMatrix<f64>,
}

/// Duplicate-column groups (exact up to 1e-12 relative) in column order.
fn duplicate_groups(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let p = m.ncols();
    let mut assigned = vec![false; p];
    let mut groups = Vec::new();
    for j in 0..p {
        if assigned[j] {
            continue;
        }
        let mut group = vec![j];
        assigned[j] = true;
        let scale = m.column(j).amax().max(1e-300);
        for k in (j + 1)..p {
            if assigned[k] {
                continue;
            }
            let diff = (m.column(j) - m.column(k)).amax();
            if diff <= 1e-12 * scale {
                group.push(k);
                assigned[k] = true;
            }
        }
        groups.push(group);
    }
    groups
}

fn keep_first_of_groups(m: &DMatrix<f64>, groups: &[Vec<usize>]) -> DMatrix<f64> {
    let cols: Vec<usize> = groups.iter().map(|g| g[0]).collect();
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Sample covariance with 1/(T-1) of already-centered matrices.
fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a.transpose() * b) / (a.nrows() as f64 - 1.0)
}

/// Symmetric inverse square root; errors with the smallest eigenvalue when
/// the matrix is numerically singular.
fn inverse_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(min_ev > 1e-12 * max_ev.max(1e-300)) {
        return Err(Error::Conditioning { min_eigenvalue: min_ev });
    }
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        out += (1.0 / ev.sqrt()) * &v * v.transpose();
    }
    Ok(out)
}

fn apply_ridge(mut m: DMatrix<f64>, mode: RidgeMode) -> DMatrix<f64> {
    let eps = match mode {
        RidgeMode::Off => return m,
        RidgeMode::Auto => 1e-8 * m.trace() / m.nrows() as f64,
        RidgeMode::Fixed(e) => e,
    };
    for i in 0..m.nrows() {
        m[(i, i)] += eps;
    }
    m
}

/// Fit the first `k` canonical pairs.
pub fn fit_cca(input: &CcaInput, k: usize, options: &CcaOptions) -> Result<CanonicalResult> {
    let groups_x = if options.collapse_duplicates {
        duplicate_groups(input.x())
    } else {
        (0..input.x().ncols()).map(|j| vec![j]).collect()
    };
    let groups_y = if options.collapse_duplicates {
        duplicate_groups(input.y())
    } else {
        (0..input.y().ncols()).map(|j| vec![j]).collect()
    };
    let xr = keep_first_of_groups(input.x(), &groups_x);
    let yr = keep_first_of_groups(input.y(), &groups_y);
    let (p_eff, q_eff) = (xr.ncols(), yr.ncols());
    if k < 1 || k > p_eff.min(q_eff) {
        return Err(Error::Validation(format!(
            "component count {k} outside 1..={}",
            p_eff.min(q_eff)
        )));
    }

    let sxx = apply_ridge(covariance(&xr, &xr), options.ridge);
    let syy = apply_ridge(covariance(&yr, &yr), options.ridge);
    let sxy = covariance(&xr, &yr);
    let sxx_isqrt = inverse_sqrt(&sxx)?;
    let syy_isqrt = inverse_sqrt(&syy)?;

    let m = &sxx_isqrt * &sxy * &syy_isqrt;
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");

    let mut a_red = DMatrix::zeros(p_eff, k);
    let mut b_red = DMatrix::zeros(q_eff, k);
    let mut correlations = Vec::with_capacity(k);
    for c in 0..k {
        let a_col = &sxx_isqrt * u.column(c);
        let b_col = &syy_isqrt * vt.row(c).transpose();
        a_red.set_column(c, &a_col);
        b_red.set_column(c, &b_col);
        correlations.push(svd.singular_values[c].clamp(0.0, 1.0));
    }

    // Sign convention: largest-|entry| of each x-weight positive; the y
    // weight flips with it so the pair keeps a positive correlation.
    for c in 0..k {
        let col = a_red.column(c);
        let mut arg = 0;
        for i in 1..p_eff {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        if col[arg] < 0.0 {
            for i in 0..p_eff {
                a_red[(i, c)] = -a_red[(i, c)];
            }
            for i in 0..q_eff {
                b_red[(i, c)] = -b_red[(i, c)];
            }
        }
    }

    // Expand collapsed groups, splitting the weight evenly over members.
    let p = input.x().ncols();
    let q = input.y().ncols();
    let mut a = DMatrix::zeros(p, k);
    for (gi, group) in groups_x.iter().enumerate() {
        for &j in group {
            for c in 0..k {
                a[(j, c)] = a_red[(gi, c)] / group.len() as f64;
            }
        }
    }
    let mut b = DMatrix::zeros(q, k);
    for (gi, group) in groups_y.iter().enumerate() {
        for &j in group {
            for c in 0..k {
                b[(j, c)] = b_red[(gi, c)] / group.len() as f64;
            }
        }
    }

    let u_var = input.x() * &a;
    let v_var = input.y() * &b;

    let to_cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.ncols()).map(|c| m.column(c).iter().copied().collect()).collect()
    };

    Ok(CanonicalResult {
        a_weights: to_cols(&a),
        b_weights: to_cols(&b),
        correlations,
        u_variates: to_cols(&u_var),
        v_variates: to_cols(&v_var),
        n_samples: input.n_samples(),
        p_effective: p_eff,
        q_effective: q_eff,
        collapsed_x: groups_x.into_iter().filter(|g| g.len() > 1).collect(),
        collapsed_y: groups_y.into_iter().filter(|g| g.len() > 1).collect(),
        cov_xx: sxx,
        cov_xy: sxy,
        cov_yy: syy,
    })
}

/// Bartlett's sequential test that canonical correlations beyond component
/// k are zero.
#[derive(Debug, Clone, Serialize)]
pub struct WilksTest {
    /// Lambda_k = prod_{i>k} (1 - rho_i^2), k = 0..m-1.
    pub lambdas: Vec<f64>,
    pub statistics: Vec<f64>,
    pub dofs: Vec<usize>,
    pub p_values: Vec<f64>,
    /// True where a correlation of exactly 1 saturated the statistic.
    pub saturated: Vec<bool>,
}

/// Evaluate Wilks' lambda tests for a fitted result. The fit must contain
/// all min(p, q) correlations.
pub fn wilks_lambda(result: &CanonicalResult, t_samples: usize) -> Result<WilksTest> {
    let m = result.p_effective.min(result.q_effective);
    if result.correlations.len() != m {
        return Err(Error::Validation(format!(
            "Wilks test needs all {m} correlations, fit has {}",
            result.correlations.len()
        )));
    }
    let p = result.p_effective as f64;
    let q = result.q_effective as f64;
    let scale = t_samples as f64 - 1.0 - (p + q + 1.0) / 2.0;
    let mut lambdas = Vec::with_capacity(m);
    let mut statistics = Vec::with_capacity(m);
    let mut dofs = Vec::with_capacity(m);
    let mut p_values = Vec::with_capacity(m);
    let mut saturated = Vec::with_capacity(m);
    for k in 0..m {
        let lambda: f64 = result.correlations[k..].iter().map(|r| 1.0 - r * r).product();
        let dof = (result.p_effective - k) * (result.q_effective - k);
        let (stat, pval, sat) = if lambda <= 0.0 {
            (f64::INFINITY, 0.0, true)
        } else {
            let stat = -scale * lambda.ln();
            let chi = ChiSquared::new(dof as f64)
                .map_err(|_| Error::Validation(format!("invalid chi-square dof {dof}")))?;
            (stat, chi.sf(stat.max(0.0)), false)
        };
        lambdas.push(lambda);
        statistics.push(stat);
        dofs.push(dof);
        p_values.push(pval);
        saturated.push(sat);
    }
    Ok(WilksTest { lambdas, statistics, dofs, p_values, saturated })
}

/// Year markers carried into the variate table annotation column.
#[derive(Debug, Clone, Default)]
pub struct YearMarkers {
    pub spans: Vec<(i32, i32)>,
    pub lines: Vec<i32>,
}

impl YearMarkers {
    fn annotate(&self, year: i32) -> String {
        let mut tags = Vec::new();
        for &(a, b) in &self.spans {
            if (a..=b).contains(&year) {
                tags.push(format!("span:{a}-{b}"));
            }
        }
        for &l in &self.lines {
            if l == year {
                tags.push(format!("line:{l}"));
            }
        }
        tags.join(";")
    }
}

/// Per-year canonical variates, raw and Gaussian-filtered, with an event
/// annotation column.
#[derive(Debug, Clone, Serialize)]
pub struct VariateTable {
    pub years: Vec<i32>,
    /// Named series, column-major.
    pub columns: Vec<(String, Vec<f64>)>,
    pub annotations: Vec<String>,
}

pub fn canonical_variates_series(
    result: &CanonicalResult,
    years: &[i32],
    filter: &FilterSpec,
    markers: &YearMarkers,
) -> Result<VariateTable> {
    if years.len() != result.n_samples {
        return Err(Error::Alignment(format!(
            "{} years supplied for {} samples",
            years.len(),
            result.n_samples
        )));
    }
    let mut columns = Vec::new();
    for (c, (u, v)) in result.u_variates.iter().zip(&result.v_variates).enumerate() {
        columns.push((format!("u{}", c + 1), u.clone()));
        columns.push((format!("v{}", c + 1), v.clone()));
        columns.push((format!("u{}_filtered", c + 1), gaussian_filter(u, filter)?));
        columns.push((format!("v{}_filtered", c + 1), gaussian_filter(v, filter)?));
    }
    let annotations = years.iter().map(|&y| markers.annotate(y)).collect();
    Ok(VariateTable { years: years.to_vec(), columns, annotations })
}

/// Pearson correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}
