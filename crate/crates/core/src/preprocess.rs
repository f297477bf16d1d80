//! Per-series transformations: winsorize, detrend, standardize and Gaussian
//! smoothing.
//!
//! Series are `f64` slices with `NaN` marking missing entries. Every
//! transform leaves missing entries missing and returns a vector of the same
//! length. The panel pipeline applies the transforms location by location in
//! the order winsorize -> detrend -> standardize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PanelMatrix;

/// Gaussian smoothing parameters. The kernel is truncated at
/// `truncation_radius * sigma` and renormalized wherever the window is
/// clipped by the series boundary or by missing entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Kernel standard deviation in samples (years).
    pub sigma: f64,
    /// Truncation radius in multiples of sigma.
    pub truncation_radius: u32,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { sigma: 3.0, truncation_radius: 4 }
    }
}

impl FilterSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        Self { sigma, truncation_radius: 4 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Domain(format!("filter sigma must be positive, got {}", self.sigma)));
        }
        if self.truncation_radius < 1 {
            return Err(Error::Domain("filter truncation radius must be at least 1".into()));
        }
        Ok(self)
    }

    /// Kernel half-width in samples.
    pub fn half_width(&self) -> usize {
        (self.sigma * self.truncation_radius as f64).ceil() as usize
    }
}

fn present(series: &[f64]) -> Vec<f64> {
    series.iter().copied().filter(|v| v.is_finite()).collect()
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`), the convention pinned for winsorization.
fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= n {
        sorted[lo.min(n - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Clamp a series at its `level` and `1 - level` quantiles.
pub fn winsorize(series: &[f64], level: f64) -> Result<Vec<f64>> {
    if !level.is_finite() || !(0.0..0.5).contains(&level) {
        return Err(Error::Domain(format!("winsorize level must lie in [0, 0.5), got {level}")));
    }
    let mut obs = present(series);
    if obs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "winsorize needs at least 2 present values, got {}",
            obs.len()
        )));
    }
    if level == 0.0 {
        return Ok(series.to_vec());
    }
    obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_linear(&obs, level);
    let hi = quantile_linear(&obs, 1.0 - level);
    Ok(series
        .iter()
        .map(|&v| if v.is_finite() { v.clamp(lo, hi) } else { v })
        .collect())
}

/// Residuals of an OLS fit of the series on (intercept, year). Missing
/// entries are excluded from the fit and stay missing.
pub fn detrend(series: &[f64], years: &[i32]) -> Result<Vec<f64>> {
    if series.len() != years.len() {
        return Err(Error::Alignment(format!(
            "series length {} does not match year count {}",
            series.len(),
            years.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = series
        .iter()
        .zip(years)
        .filter(|(v, _)| v.is_finite())
        .map(|(&v, &y)| (y as f64, v))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "detrend needs at least 3 present values, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let x_mean = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let y_mean = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|(x, _)| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("detrend needs more than one distinct year".into()));
    }
    let sxy: f64 = pairs.iter().map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    Ok(series
        .iter()
        .zip(years)
        .map(|(&v, &y)| if v.is_finite() { v - (intercept + slope * y as f64) } else { v })
        .collect())
}

/// Center to mean 0 and scale to sample (n-1) standard deviation 1.
pub fn standardize(series: &[f64]) -> Result<Vec<f64>> {
    let obs = present(series);
    if obs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "standardize needs at least 2 present values, got {}",
            obs.len()
        )));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::DegenerateInput("standardize needs nonzero variance".into()));
    }
    Ok(series.iter().map(|&v| if v.is_finite() { (v - mean) / sd } else { v }).collect())
}

/// Discrete Gaussian smoothing with boundary renormalization.
///
/// Present entries are smoothed over the present values inside the
/// truncated window, with weights renormalized to sum to one; missing
/// entries stay missing. No data is invented past the series ends.
pub fn gaussian_filter(series: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    let spec = spec.validated()?;
    if series.is_empty() {
        return Err(Error::DegenerateInput("gaussian filter needs at least one sample".into()));
    }
    let h = spec.half_width() as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let kernel: Vec<f64> = (0..=h).map(|d| (-((d * d) as f64) * inv_two_sigma2).exp()).collect();
    let len = series.len() as isize;
    let out = (0..len)
        .map(|t| {
            if !series[t as usize].is_finite() {
                return f64::NAN;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for d in -h..=h {
                let idx = t + d;
                if idx < 0 || idx >= len {
                    continue;
                }
                let v = series[idx as usize];
                if !v.is_finite() {
                    continue;
                }
                let w = kernel[d.unsigned_abs()];
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect();
    Ok(out)
}

/// Normalized center weight of the truncated kernel on a fully interior
/// window; the impulse response peak equals this value.
pub fn kernel_center_weight(spec: &FilterSpec) -> Result<f64> {
    let spec = spec.validated()?;
    let h = spec.half_width() as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let total: f64 = (-h..=h).map(|d| (-((d * d) as f64) * inv_two_sigma2).exp()).sum();
    Ok(1.0 / total)
}

/// Column-wise preprocessing pipeline over a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Winsorization level; `None` skips the step.
    pub winsorize_level: Option<f64>,
    pub detrend: bool,
    pub standardize: bool,
    /// Optional Gaussian smoothing applied last.
    pub filter: Option<FilterSpec>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { winsorize_level: Some(0.01), detrend: true, standardize: true, filter: None }
    }
}

/// Apply the pipeline to every location of a panel.
pub fn apply_pipeline(panel: &PanelMatrix, options: &PipelineOptions) -> Result<PanelMatrix> {
    let mut out = panel.clone();
    let years = panel.years().to_vec();
    for n in 0..panel.n_locations() {
        let mut series = panel.series(n);
        if let Some(level) = options.winsorize_level {
            series = winsorize(&series, level)?;
        }
        if options.detrend {
            series = detrend(&series, &years)?;
        }
        if options.standardize {
            series = standardize(&series)?;
        }
        if let Some(filter) = &options.filter {
            series = gaussian_filter(&series, filter)?;
        }
        out.set_series(n, &series)?;
    }
    Ok(out)
}
