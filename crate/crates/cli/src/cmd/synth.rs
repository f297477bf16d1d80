//! `panelcca synth`: planted-structure synthetic inputs plus a truth file,
//! shaped like the real panel/grid CSVs so the analysis subcommands can be
//! exercised end to end.

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use panelcca_core::ingest::{write_grid_csv, write_panel_csv};
use panelcca_core::regress::PanelObservations;
use panelcca_core::synth::{
    gen_planted_cca, gen_planted_multiset, gen_planted_panel, PlantedCcaSpec, PlantedPanelSpec,
};
use panelcca_core::types::{GridFieldSeries, Location, PanelMatrix};

use crate::cmd::parse_usize_list;
use crate::run::RunContext;
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    /// cpi/temp/pdsi panels with planted betas and effects.
    Panel,
    /// Two panels sharing one latent factor.
    Cca,
    /// One panel plus grids sharing one latent factor.
    Multiset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadingArg {
    /// Unit-norm loading spread evenly over all columns.
    Spread,
    /// All loading mass on the first column.
    Sparse,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,

    /// Years of data.
    #[arg(long, default_value_t = 221)]
    pub t: usize,

    /// Locations for panel outputs.
    #[arg(long, default_value_t = 14)]
    pub locations: usize,

    /// Grid shapes for --kind multiset, e.g. '6x8,6x8'.
    #[arg(long, default_value = "6x8,6x8")]
    pub grid_dims: String,

    /// Column counts for --kind cca as 'p,q'.
    #[arg(long, default_value = "4,4")]
    pub dims: String,

    #[arg(long, value_enum, default_value = "spread")]
    pub loading: LoadingArg,

    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,

    #[arg(long, default_value_t = -0.03)]
    pub beta_temp: f64,

    #[arg(long, default_value_t = -0.007)]
    pub beta_pdsi: f64,

    #[arg(long, default_value_t = 0.5)]
    pub location_effect_sd: f64,

    #[arg(long, default_value_t = 0.3)]
    pub time_effect_sd: f64,

    #[arg(long, default_value_t = 0.0)]
    pub slope_sd_temp: f64,

    #[arg(long, default_value_t = 0.0)]
    pub slope_sd_pdsi: f64,

    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
}

const START_YEAR: i32 = 1565;

fn synthetic_locations(n: usize) -> Result<Vec<Location>> {
    (0..n)
        .map(|i| {
            let lat = 40.0 + 0.5 * (i % 40) as f64;
            let lon = -5.0 + 0.5 * (i / 40) as f64;
            Ok(Location::new(format!("loc{i:03}"), lat, lon)?)
        })
        .collect()
}

fn matrix_to_panel(m: &DMatrix<f64>) -> Result<PanelMatrix> {
    let years: Vec<i32> = (START_YEAR..START_YEAR + m.nrows() as i32).collect();
    Ok(PanelMatrix::from_values(years, synthetic_locations(m.ncols())?, m.clone())?)
}

/// Lay matrix columns out on an nlat x nlon grid (column c -> cell
/// (c / nlon, c % nlon)), lats from 40N and lons from 5W in half-degree
/// steps so the defaults fall inside the default bounding box.
fn matrix_to_grid(m: &DMatrix<f64>, nlat: usize, nlon: usize) -> Result<GridFieldSeries> {
    if nlat * nlon != m.ncols() {
        bail!("grid dims {nlat}x{nlon} do not match {} columns", m.ncols());
    }
    let years: Vec<i32> = (START_YEAR..START_YEAR + m.nrows() as i32).collect();
    let lats: Vec<f64> = (0..nlat).map(|i| 40.0 + 0.5 * i as f64).collect();
    let lons: Vec<f64> = (0..nlon).map(|j| -5.0 + 0.5 * j as f64).collect();
    let mut values = Vec::with_capacity(m.nrows() * nlat * nlon);
    for t in 0..m.nrows() {
        for i in 0..nlat {
            for j in 0..nlon {
                values.push(m[(t, i * nlon + j)]);
            }
        }
    }
    Ok(GridFieldSeries::new(years, lats, lons, values)?)
}

fn loading_vec(kind: LoadingArg, p: usize) -> Vec<f64> {
    match kind {
        LoadingArg::Spread => {
            let w = 1.0 / (p as f64).sqrt();
            vec![w; p]
        }
        LoadingArg::Sparse => {
            let mut v = vec![0.0; p];
            v[0] = 1.0;
            v
        }
    }
}

fn parse_grid_dims(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|s| {
            let Some((a, b)) = s.trim().split_once('x') else {
                bail!("--grid-dims expects entries like 6x8, got '{s}'");
            };
            Ok((a.parse::<usize>()?, b.parse::<usize>()?))
        })
        .collect()
}

/// Split planted observations into cpi/temp/pdsi panels.
fn observations_to_panels(
    obs: &PanelObservations,
    n_locations: usize,
    t: usize,
) -> Result<[PanelMatrix; 3]> {
    let years: Vec<i32> = (START_YEAR..START_YEAR + t as i32).collect();
    let locations = synthetic_locations(n_locations)?;
    let mut cpi = DMatrix::from_element(t, n_locations, f64::NAN);
    let mut temp = cpi.clone();
    let mut pdsi = cpi.clone();
    for row in obs.rows() {
        let ni = locations
            .iter()
            .position(|l| l.name == row.location)
            .expect("generated location");
        let ti = (row.year - START_YEAR) as usize;
        cpi[(ti, ni)] = row.cpi;
        temp[(ti, ni)] = row.temp;
        pdsi[(ti, ni)] = row.pdsi;
    }
    Ok([
        PanelMatrix::from_values(years.clone(), locations.clone(), cpi)?,
        PanelMatrix::from_values(years.clone(), locations.clone(), temp)?,
        PanelMatrix::from_values(years, locations, pdsi)?,
    ])
}

pub fn run(global: &Global, args: SynthArgs) -> Result<()> {
    let Some(seed) = global.seed else {
        bail!("synth is stochastic: pass --seed");
    };
    let mut ctx = RunContext::create(&global.out, "synth", &args)?;
    match args.kind {
        KindArg::Panel => {
            let spec = PlantedPanelSpec {
                n_locations: args.locations,
                t: args.t,
                beta_temp: args.beta_temp,
                beta_pdsi: args.beta_pdsi,
                location_effect_sd: args.location_effect_sd,
                time_effect_sd: args.time_effect_sd,
                slope_sd_temp: args.slope_sd_temp,
                slope_sd_pdsi: args.slope_sd_pdsi,
                noise_sd: args.noise_sd,
                missing_rate: args.missing_rate,
                seed,
            };
            let (obs, truth) = gen_planted_panel(&spec)?;
            let [cpi, temp, pdsi] = observations_to_panels(&obs, args.locations, args.t)?;
            for (name, panel) in
                [("cpi.csv", &cpi), ("temp.csv", &temp), ("pdsi.csv", &pdsi)]
            {
                write_panel_csv(panel, ctx.path(name))?;
                ctx.record_output(name);
            }
            ctx.write_json("truth.json", &json!({ "kind": "panel", "spec": spec, "truth": truth }))?;
            println!(
                "wrote cpi/temp/pdsi panels: {} locations x {} years, {} observations",
                args.locations,
                args.t,
                obs.rows().len()
            );
        }
        KindArg::Cca => {
            let dims = parse_usize_list(&args.dims, "--dims")?;
            if dims.len() != 2 {
                bail!("--dims expects 'p,q' for --kind cca");
            }
            let spec = PlantedCcaSpec {
                t: args.t,
                loadings: vec![
                    loading_vec(args.loading, dims[0]),
                    loading_vec(args.loading, dims[1]),
                ],
                noise_sd: args.noise_sd,
                seed,
            };
            let (x, y, truth) = gen_planted_cca(&spec)?;
            write_panel_csv(&matrix_to_panel(&x)?, ctx.path("x.csv"))?;
            ctx.record_output("x.csv");
            write_panel_csv(&matrix_to_panel(&y)?, ctx.path("y.csv"))?;
            ctx.record_output("y.csv");
            ctx.write_json("truth.json", &json!({ "kind": "cca", "spec": spec, "truth": truth }))?;
            println!(
                "wrote x/y panels sharing one factor (population rho1 = {:.4})",
                truth.population_rho1
            );
        }
        KindArg::Multiset => {
            let grids = parse_grid_dims(&args.grid_dims)?;
            if grids.is_empty() {
                bail!("--kind multiset needs at least one grid in --grid-dims");
            }
            let mut loadings = vec![loading_vec(args.loading, args.locations)];
            for &(nlat, nlon) in &grids {
                loadings.push(loading_vec(args.loading, nlat * nlon));
            }
            let spec =
                PlantedCcaSpec { t: args.t, loadings, noise_sd: args.noise_sd, seed };
            let (data, truth) = gen_planted_multiset(&spec)?;
            write_panel_csv(&matrix_to_panel(&data[0])?, ctx.path("cpi.csv"))?;
            ctx.record_output("cpi.csv");
            let grid_names: Vec<String> = if grids.len() == 2 {
                vec!["temp_grid.csv".into(), "pdsi_grid.csv".into()]
            } else {
                (0..grids.len()).map(|i| format!("grid_{i}.csv")).collect()
            };
            for (k, ((nlat, nlon), name)) in grids.iter().zip(&grid_names).enumerate() {
                let grid = matrix_to_grid(&data[k + 1], *nlat, *nlon)?;
                write_grid_csv(&grid, ctx.path(name))?;
                ctx.record_output(name);
            }
            ctx.write_json(
                "truth.json",
                &json!({ "kind": "multiset", "spec": spec, "truth": truth }),
            )?;
            println!(
                "wrote cpi panel plus {} grids sharing one factor",
                grids.len()
            );
        }
    }
    ctx.finish()
}
