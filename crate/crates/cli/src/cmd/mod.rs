//! Subcommand implementations.

pub mod cca;
pub mod compound;
pub mod ingest;
pub mod preprocess;
pub mod regress;
pub mod smcca;
pub mod synth;

use anyhow::{bail, Result};
use nalgebra::DMatrix;

use panelcca_core::ingest::fmt_f64;
use panelcca_core::preprocess::standardize;
use panelcca_core::regress::LagSpec;
use panelcca_core::types::PanelMatrix;

/// Parse `auto` or a nonnegative integer bandwidth.
pub fn parse_lag(text: &str) -> Result<LagSpec> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(LagSpec::Auto);
    }
    match text.parse::<usize>() {
        Ok(l) => Ok(LagSpec::Fixed(l)),
        Err(_) => bail!("--lag expects 'auto' or a nonnegative integer, got '{text}'"),
    }
}

pub fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| anyhow::anyhow!("{what}: expected an integer, got '{s}'"))
        })
        .collect()
}

pub fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("{what}: expected a number, got '{s}'"))
        })
        .collect()
}

/// `start:end` year spans, comma-separated.
pub fn parse_spans(text: &str) -> Result<Vec<(i32, i32)>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            let Some((a, b)) = s.split_once(':') else {
                bail!("expected start:end span, got '{s}'");
            };
            Ok((a.trim().parse::<i32>()?, b.trim().parse::<i32>()?))
        })
        .collect()
}

/// A complete panel as a dense T x N matrix, failing on missing cells.
pub fn panel_to_matrix(panel: &PanelMatrix, what: &str) -> Result<DMatrix<f64>> {
    let mut missing = 0usize;
    let m = DMatrix::from_fn(panel.n_years(), panel.n_locations(), |t, n| {
        match panel.value(t, n) {
            Some(v) => v,
            None => {
                missing += 1;
                f64::NAN
            }
        }
    });
    if missing > 0 {
        bail!(
            "{what} has {missing} missing cells; analysis matrices must be complete \
             (restrict the year range or fill the input)"
        );
    }
    Ok(m)
}

/// Standardize every column to mean 0, sample sd 1.
pub fn standardize_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let col: Vec<f64> = m.column(j).iter().copied().collect();
        let z = standardize(&col)?;
        for i in 0..m.nrows() {
            out[(i, j)] = z[i];
        }
    }
    Ok(out)
}

/// Render a year-indexed CSV: `year,<names...>[,annotation]`.
pub fn year_table_csv(
    years: &[i32],
    columns: &[(String, Vec<f64>)],
    annotations: Option<&[String]>,
) -> String {
    let mut out = String::from("year");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    if annotations.is_some() {
        out.push_str(",annotation");
    }
    out.push('\n');
    for (i, year) in years.iter().enumerate() {
        out.push_str(&year.to_string());
        for (_, series) in columns {
            out.push(',');
            out.push_str(&fmt_f64(series[i]));
        }
        if let Some(ann) = annotations {
            out.push(',');
            out.push_str(&ann[i]);
        }
        out.push('\n');
    }
    out
}
