//! `panelcca preprocess`: the winsorize -> detrend -> standardize pipeline,
//! optionally followed by Gaussian smoothing, applied per location.

use std::path::PathBuf;

use anyhow::Result;
use clap::{ArgAction, Args};
use serde::Serialize;

use panelcca_core::ingest::{read_panel_csv, write_panel_csv};
use panelcca_core::preprocess::{apply_pipeline, FilterSpec, PipelineOptions};

use crate::run::RunContext;
use crate::Global;

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Input panel CSV.
    #[arg(long)]
    pub input: PathBuf,

    /// Winsorization level (0 disables clamping).
    #[arg(long, default_value_t = 0.01)]
    pub winsorize: f64,

    /// Remove a per-location linear year trend.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub detrend: bool,

    /// Scale each location to mean 0, sample sd 1.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub standardize: bool,

    /// Gaussian smoothing sigma in years (omit to skip).
    #[arg(long)]
    pub filter_sigma: Option<f64>,
}

pub fn run(global: &Global, args: PreprocessArgs) -> Result<()> {
    let mut ctx = RunContext::create(&global.out, "preprocess", &args)?;
    ctx.record_input(&args.input)?;
    let panel = read_panel_csv(&args.input)?;
    let options = PipelineOptions {
        winsorize_level: Some(args.winsorize),
        detrend: args.detrend,
        standardize: args.standardize,
        filter: args.filter_sigma.map(FilterSpec::new).transpose()?,
    };
    let out = apply_pipeline(&panel, &options)?;
    write_panel_csv(&out, ctx.path("panel.csv"))?;
    ctx.record_output("panel.csv");
    println!(
        "preprocessed {} locations over {} years",
        out.n_locations(),
        out.n_years()
    );
    ctx.finish()
}
