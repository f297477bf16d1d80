//! `panelcca smcca`: sparse multi-set CCA over a price panel and gridded
//! climate fields restricted to a bounding box.
//!
//! Grid matrices are column-standardized and then area-weighted by
//! sqrt(cos(latitude)); the panel is column-standardized. A single
//! `--lambda` maps to per-dataset L1 bounds via c_k = 1 + lambda
//! (sqrt(p_k) - 1); `--lambda-grid start:end:steps` sweeps that mapping
//! and reports cross-grid variate stability.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{ArgAction, Args, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use panelcca_core::ingest::{grid_to_wide, latitude_weight, read_grid_csv, read_panel_csv};
use panelcca_core::smcca::{
    fit_smcca_with, lambda_sweep, lambda_to_bounds, InitMode, SmccaProblem, SmccaResult,
};
use panelcca_core::types::BoundingBox;

use crate::cmd::{panel_to_matrix, parse_f64_list, standardize_columns, year_table_csv};
use crate::run::RunContext;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    TopSingular,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct SmccaArgs {
    /// Panel CSV inputs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub panels: Vec<PathBuf>,

    /// Grid CSV inputs, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub grids: Vec<PathBuf>,

    /// lon_min,lon_max,lat_min,lat_max restriction for grid cells.
    #[arg(long, default_value = "-5,25,40,60")]
    pub bbox: String,

    /// Shared penalty fraction in (0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Penalty sweep as start:end:steps.
    #[arg(long)]
    pub lambda_grid: Option<String>,

    /// Explicit per-dataset L1 bounds (overrides --lambda).
    #[arg(long)]
    pub c: Option<String>,

    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,

    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,

    /// Area-weight grid columns by sqrt(cos(latitude)).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub lat_weight: bool,

    #[arg(long, value_enum, default_value = "top-singular")]
    pub init: InitArg,
}

fn parse_bbox(text: &str) -> Result<BoundingBox> {
    let v = parse_f64_list(text, "--bbox")?;
    if v.len() != 4 {
        bail!("--bbox expects lon_min,lon_max,lat_min,lat_max");
    }
    Ok(BoundingBox::new(v[0], v[1], v[2], v[3])?)
}

fn parse_grid_spec(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        bail!("--lambda-grid expects start:end:steps");
    }
    let start: f64 = parts[0].parse()?;
    let end: f64 = parts[1].parse()?;
    let steps: usize = parts[2].parse()?;
    if steps < 1 {
        bail!("--lambda-grid needs at least one step");
    }
    if steps == 1 {
        return Ok(vec![start]);
    }
    Ok((0..steps)
        .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
        .collect())
}

struct Dataset {
    label: String,
    columns: Vec<String>,
    matrix: DMatrix<f64>,
}

fn dataset_stem(path: &PathBuf) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

fn variates_csv(years: &[i32], labels: &[String], result: &SmccaResult) -> String {
    let columns: Vec<(String, Vec<f64>)> = labels
        .iter()
        .cloned()
        .zip(result.variates.iter().cloned())
        .collect();
    year_table_csv(years, &columns, None)
}

pub fn run(global: &Global, args: SmccaArgs) -> Result<()> {
    if args.panels.is_empty() && args.grids.is_empty() {
        bail!("pass at least two datasets via --panels and/or --grids");
    }
    let bbox = parse_bbox(&args.bbox)?;
    let mut ctx = RunContext::create(&global.out, "smcca", &args)?;

    let mut datasets: Vec<Dataset> = Vec::new();
    let mut years: Option<Vec<i32>> = None;
    let mut check_years = |got: &[i32], label: &str| -> Result<()> {
        match &years {
            None => {
                years = Some(got.to_vec());
                Ok(())
            }
            Some(y) if y.as_slice() == got => Ok(()),
            Some(_) => bail!("dataset '{label}' covers different years than the first dataset"),
        }
    };

    for path in &args.panels {
        ctx.record_input(path)?;
        let panel = read_panel_csv(path)?;
        let label = dataset_stem(path);
        check_years(panel.years(), &label)?;
        let matrix = standardize_columns(&panel_to_matrix(&panel, &label)?)?;
        datasets.push(Dataset {
            label,
            columns: panel.locations().iter().map(|l| l.name.clone()).collect(),
            matrix,
        });
    }
    for path in &args.grids {
        ctx.record_input(path)?;
        let grid = read_grid_csv(path)?;
        let label = dataset_stem(path);
        let wide = grid_to_wide(&grid, Some(&bbox))?;
        check_years(&wide.years, &label)?;
        let std = standardize_columns(&wide.values)?;
        let matrix =
            if args.lat_weight { latitude_weight(&std, &wide.col_lats)? } else { std };
        let columns = (0..wide.values.ncols()).map(|j| wide.col_name(j)).collect();
        datasets.push(Dataset { label, columns, matrix });
    }
    if datasets.len() < 2 {
        bail!("need at least two datasets, got {}", datasets.len());
    }
    let years = years.unwrap();
    let matrices: Vec<DMatrix<f64>> = datasets.iter().map(|d| d.matrix.clone()).collect();
    let labels: Vec<String> = datasets.iter().map(|d| d.label.clone()).collect();
    let seed = global.seed.unwrap_or(0);
    let init = match args.init {
        InitArg::TopSingular => InitMode::TopSingular,
        InitArg::Random => InitMode::Random,
    };

    if let Some(grid_spec) = &args.lambda_grid {
        let grid = parse_grid_spec(grid_spec)?;
        let sweep = lambda_sweep(&matrices, &grid, seed, args.max_sweeps, args.tol)?;
        for fit in &sweep.fits {
            let name = format!("variates_lambda_{:.3}.csv", fit.lambda);
            ctx.write_text(&name, &variates_csv(&years, &labels, &fit.result))?;
        }
        let mut stability_csv = String::from("lambda_a,lambda_b,min_abs_corr\n");
        for (a, fa) in sweep.fits.iter().enumerate() {
            for (b, fb) in sweep.fits.iter().enumerate() {
                stability_csv.push_str(&format!(
                    "{},{},{}\n",
                    fa.lambda, fb.lambda, sweep.stability[a][b]
                ));
            }
        }
        ctx.write_text("stability.csv", &stability_csv)?;
        ctx.write_json(
            "result.json",
            &json!({
                "datasets": labels,
                "lambdas": grid,
                "bounds": sweep.fits.iter().map(|f| f.bounds.clone()).collect::<Vec<_>>(),
                "objectives": sweep
                    .fits
                    .iter()
                    .map(|f| *f.result.objective_trajectory.last().unwrap())
                    .collect::<Vec<_>>(),
                "converged": sweep.fits.iter().map(|f| f.result.converged).collect::<Vec<_>>(),
                "stability": sweep.stability,
            }),
        )?;
        let min_stability = sweep
            .stability
            .iter()
            .flatten()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        println!(
            "swept {} penalty values; minimum cross-grid variate stability {min_stability:.4}",
            sweep.fits.len()
        );
    } else {
        let bounds = match &args.c {
            Some(text) => parse_f64_list(text, "--c")?,
            None => lambda_to_bounds(&matrices, args.lambda.unwrap_or(0.3))?,
        };
        let problem = SmccaProblem {
            datasets: matrices,
            c: bounds.clone(),
            max_sweeps: args.max_sweeps,
            tol: args.tol,
        }
        .validated()?;
        let result = fit_smcca_with(&problem, seed, init)?;
        ctx.write_text("variates.csv", &variates_csv(&years, &labels, &result))?;
        let weights: Vec<serde_json::Value> = datasets
            .iter()
            .zip(&result.weights)
            .map(|(d, w)| {
                let nonzero: Vec<serde_json::Value> = d
                    .columns
                    .iter()
                    .zip(w)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| json!({ "column": c, "weight": v }))
                    .collect();
                json!({ "dataset": d.label, "nonzero_weights": nonzero, "weights": w })
            })
            .collect();
        ctx.write_json(
            "result.json",
            &json!({
                "datasets": labels,
                "bounds": bounds,
                "lambda": args.lambda,
                "objective_trajectory": result.objective_trajectory,
                "sweeps_used": result.sweeps_used,
                "converged": result.converged,
                "variate_correlations": result.variate_correlations,
                "weights": weights,
            }),
        )?;
        println!(
            "converged: {} after {} sweeps; final objective {:.6}",
            result.converged,
            result.sweeps_used,
            result.objective_trajectory.last().unwrap()
        );
        for (d, w) in datasets.iter().zip(&result.weights) {
            let nonzero = w.iter().filter(|v| **v != 0.0).count();
            println!("  {}: {} of {} columns active", d.label, nonzero, w.len());
        }
    }
    ctx.finish()
}
