//! `panelcca cca`: two-set CCA between aligned panels, with Wilks tests
//! and a variate table.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{ArgAction, Args};
use serde::Serialize;
use serde_json::json;

use panelcca_core::cca::{
    canonical_variates_series, fit_cca, wilks_lambda, CcaInput, CcaOptions, RidgeMode,
    YearMarkers,
};
use panelcca_core::ingest::{latitude_weight, read_panel_csv};
use panelcca_core::preprocess::FilterSpec;
use panelcca_core::types::PanelMatrix;

use crate::cmd::{panel_to_matrix, parse_spans, year_table_csv};
use crate::run::RunContext;
use crate::Global;

#[derive(Debug, Args, Serialize)]
pub struct CcaArgs {
    /// Left panel CSV (typically prices).
    #[arg(long)]
    pub x: PathBuf,

    /// Right panel CSV (typically a climate field).
    #[arg(long)]
    pub y: PathBuf,

    /// Number of canonical pairs to fit (0 = all).
    #[arg(long, default_value_t = 0)]
    pub components: usize,

    /// Gaussian sigma for the filtered variate columns.
    #[arg(long, default_value_t = 3.0)]
    pub filter_sigma: f64,

    /// Area-weight the x columns by sqrt(cos(latitude)).
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub weight_x: bool,

    /// Area-weight the y columns by sqrt(cos(latitude)); on by default
    /// since the right side usually carries the climate field.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub weight_y: bool,

    /// Scale columns to unit variance before fitting.
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub scale: bool,

    /// Covariance ridge: 'off', 'auto' or a number.
    #[arg(long, default_value = "off")]
    pub ridge: String,

    /// Collapse exactly duplicated columns before whitening.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub collapse_duplicates: bool,

    /// Annotation spans, comma-separated start:end years.
    #[arg(long, default_value = "1618:1648")]
    pub spans: String,

    /// Annotation line years, comma-separated.
    #[arg(long, default_value = "1634,1635,1636")]
    pub lines: String,
}

fn parse_ridge(text: &str) -> Result<RidgeMode> {
    match text {
        "off" => Ok(RidgeMode::Off),
        "auto" => Ok(RidgeMode::Auto),
        other => match other.parse::<f64>() {
            Ok(v) if v >= 0.0 => Ok(RidgeMode::Fixed(v)),
            _ => bail!("--ridge expects 'off', 'auto' or a nonnegative number, got '{other}'"),
        },
    }
}

fn weighted_matrix(panel: &PanelMatrix, weight: bool, what: &str) -> Result<nalgebra::DMatrix<f64>> {
    let m = panel_to_matrix(panel, what)?;
    if !weight {
        return Ok(m);
    }
    let lats: Vec<f64> = panel.locations().iter().map(|l| l.lat).collect();
    Ok(latitude_weight(&m, &lats)?)
}

pub fn run(global: &Global, args: CcaArgs) -> Result<()> {
    let ridge = parse_ridge(&args.ridge)?;
    let spans = parse_spans(&args.spans)?;
    let lines = crate::cmd::parse_f64_list(&args.lines, "--lines")?
        .into_iter()
        .map(|v| v as i32)
        .collect();
    let mut ctx = RunContext::create(&global.out, "cca", &args)?;
    ctx.record_input(&args.x)?;
    ctx.record_input(&args.y)?;

    let x_panel = read_panel_csv(&args.x)?;
    let y_panel = read_panel_csv(&args.y)?;
    if x_panel.years() != y_panel.years() {
        bail!("x and y panels must cover the same years");
    }
    let x = weighted_matrix(&x_panel, args.weight_x, "x panel")?;
    let y = weighted_matrix(&y_panel, args.weight_y, "y panel")?;
    let input = CcaInput::new(x, y, args.scale)?;
    let options = CcaOptions { ridge, collapse_duplicates: args.collapse_duplicates };

    // The requested component count caps at the post-collapse dimensions,
    // which are only known after a probe fit.
    let probe = fit_cca(&input, 1, &options)?;
    let max_k = probe.p_effective.min(probe.q_effective);
    let k = if args.components == 0 { max_k } else { args.components.min(max_k) };
    let result = fit_cca(&input, k, &options)?;
    let wilks = if k == max_k { Some(wilks_lambda(&result, result.n_samples)?) } else { None };

    let x_names: Vec<String> = x_panel.locations().iter().map(|l| l.name.clone()).collect();
    let y_names: Vec<String> = y_panel.locations().iter().map(|l| l.name.clone()).collect();
    ctx.write_json(
        "result.json",
        &json!({
            "correlations": result.correlations,
            "n_samples": result.n_samples,
            "components": k,
            "x_names": x_names,
            "y_names": y_names,
            "a_weights": result.a_weights,
            "b_weights": result.b_weights,
            "p_effective": result.p_effective,
            "q_effective": result.q_effective,
            "collapsed_x": result.collapsed_x,
            "collapsed_y": result.collapsed_y,
            "wilks": wilks,
        }),
    )?;

    let markers = YearMarkers { spans, lines };
    let filter = FilterSpec::new(args.filter_sigma)?;
    let table = canonical_variates_series(&result, x_panel.years(), &filter, &markers)?;
    let csv = year_table_csv(&table.years, &table.columns, Some(&table.annotations));
    ctx.write_text("variates.csv", &csv)?;

    println!(
        "canonical correlations: {}",
        result
            .correlations
            .iter()
            .map(|r| format!("{r:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if let Some(w) = &wilks {
        println!(
            "Wilks p-values: {}",
            w.p_values.iter().map(|p| format!("{p:.4e}")).collect::<Vec<_>>().join(", ")
        );
    }
    for group in result.collapsed_x.iter() {
        let names: Vec<&str> = group.iter().map(|&j| x_names[j].as_str()).collect();
        println!("note: x columns {} share one grid cell and were collapsed", names.join(", "));
    }
    for group in result.collapsed_y.iter() {
        let names: Vec<&str> = group.iter().map(|&j| y_names[j].as_str()).collect();
        println!("note: y columns {} share one grid cell and were collapsed", names.join(", "));
    }
    ctx.finish()
}
