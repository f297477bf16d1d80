//! `panelcca ingest`: normalize a panel CSV, or extract a location-aligned
//! panel from a grid CSV.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use panelcca_core::ingest::{read_grid_csv, read_locations_csv, read_panel_csv, write_panel_csv};
use panelcca_core::types::{ExtractionSpec, PanelMatrix};

use crate::run::RunContext;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Nearest,
    Box,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Panel CSV (year,location,lat,lon,value) to normalize.
    #[arg(long)]
    pub panel: Option<PathBuf>,

    /// Grid CSV (year,lat,lon,value) to extract from.
    #[arg(long)]
    pub grid: Option<PathBuf>,

    /// Location list (name,lat,lon) for grid extraction.
    #[arg(long)]
    pub locations: Option<PathBuf>,

    /// Extraction mode for --grid.
    #[arg(long, value_enum, default_value = "nearest")]
    pub mode: ModeArg,

    /// Box half-width in degrees for box extraction.
    #[arg(long, default_value_t = 0.5)]
    pub half_width: f64,
}

#[derive(Serialize)]
struct PanelSummary {
    years: (i32, i32),
    n_years: usize,
    n_locations: usize,
    present_cells: usize,
    locations: Vec<String>,
}

fn summarize(panel: &PanelMatrix) -> PanelSummary {
    PanelSummary {
        years: (panel.years()[0], *panel.years().last().unwrap()),
        n_years: panel.n_years(),
        n_locations: panel.n_locations(),
        present_cells: panel.present_count(),
        locations: panel.locations().iter().map(|l| l.name.clone()).collect(),
    }
}

pub fn run(global: &Global, args: IngestArgs) -> Result<()> {
    let mut ctx = RunContext::create(&global.out, "ingest", &args)?;
    let panel = match (&args.panel, &args.grid) {
        (Some(path), None) => {
            ctx.record_input(path)?;
            read_panel_csv(path)?
        }
        (None, Some(grid_path)) => {
            let Some(loc_path) = &args.locations else {
                bail!("--grid requires --locations (name,lat,lon file)");
            };
            ctx.record_input(grid_path)?;
            ctx.record_input(loc_path)?;
            let grid = read_grid_csv(grid_path)?;
            let locations = read_locations_csv(loc_path)?;
            let spec = match args.mode {
                ModeArg::Nearest => ExtractionSpec::nearest(),
                ModeArg::Box => ExtractionSpec::box_average(args.half_width)?,
            };
            panelcca_core::ingest::extract_panel(&grid, &locations, &spec)?
        }
        _ => bail!("pass exactly one of --panel or --grid"),
    };
    write_panel_csv(&panel, ctx.path("panel.csv"))?;
    ctx.record_output("panel.csv");
    ctx.write_json("summary.json", &summarize(&panel))?;
    println!(
        "panel: {} years x {} locations, {} present cells",
        panel.n_years(),
        panel.n_locations(),
        panel.present_count()
    );
    ctx.finish()
}
