//! `panelcca compound`: rolling cpi/climate correlations per window length
//! and their fixed-effects regression on war/famine indicators.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{ArgAction, Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use panelcca_core::compound::{
    common_sample_start, correlation_regression, parse_events, read_events_csv,
    rolling_correlation_with, WindowMode,
};
use panelcca_core::ingest::{read_panel_csv, write_panel_csv};

use crate::cmd::{parse_lag, parse_usize_list};
use crate::run::RunContext;
use crate::table::regression_table;
use crate::Global;

/// Calendar bundled with the binary, used when --events is omitted.
const DEFAULT_EVENTS: &str = include_str!("../../data/default_events.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowModeArg {
    Trailing,
    Centered,
}

#[derive(Debug, Args, Serialize)]
pub struct CompoundArgs {
    #[arg(long)]
    pub cpi: PathBuf,

    /// Climate panel (temperature or drought index).
    #[arg(long)]
    pub climate: PathBuf,

    /// Rolling window lengths in years, comma-separated.
    #[arg(long, default_value = "10,15,20")]
    pub windows: String,

    /// Event calendar CSV (type,start,end); a bundled default is used
    /// when omitted.
    #[arg(long)]
    pub events: Option<PathBuf>,

    /// Restrict every regression to years where the largest window is
    /// valid, keeping N identical across windows.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub common_sample: bool,

    #[arg(long, value_enum, default_value = "trailing")]
    pub window_mode: WindowModeArg,

    /// Newey-West bandwidth within clusters: 'auto' or an integer.
    #[arg(long, default_value = "auto")]
    pub lag: String,

    /// Use a per-location famine indicator instead of a common time dummy.
    /// (The common dummy is the default reading of the event calendar.)
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub per_location_famines: bool,
}

pub fn run(global: &Global, args: CompoundArgs) -> Result<()> {
    if args.per_location_famines {
        bail!(
            "--per-location-famines needs a location-resolved calendar; \
             the bundled calendar is a common time dummy"
        );
    }
    let windows = parse_usize_list(&args.windows, "--windows")?;
    if windows.is_empty() {
        bail!("--windows must list at least one window length");
    }
    let lag = parse_lag(&args.lag)?;
    let mode = match args.window_mode {
        WindowModeArg::Trailing => WindowMode::Trailing,
        WindowModeArg::Centered => WindowMode::Centered,
    };
    let mut ctx = RunContext::create(&global.out, "compound", &args)?;
    ctx.record_input(&args.cpi)?;
    ctx.record_input(&args.climate)?;
    let cpi = read_panel_csv(&args.cpi)?;
    let climate = read_panel_csv(&args.climate)?;
    let events = match &args.events {
        Some(path) => {
            ctx.record_input(path)?;
            read_events_csv(path)?
        }
        None => parse_events(DEFAULT_EVENTS)?,
    };

    let from_year = if args.common_sample {
        common_sample_start(&windows, cpi.years())?
    } else {
        cpi.years()[0]
    };

    let mut tables = String::new();
    let mut results = Vec::new();
    for &window in &windows {
        let corr = rolling_correlation_with(&cpi, &climate, window, mode)?;
        let corr_name = format!("corr_{window}y.csv");
        write_panel_csv(&corr.panel, ctx.path(&corr_name))?;
        ctx.record_output(&corr_name);

        let res = correlation_regression(&corr, &events, &cpi, &climate, from_year, lag)?;
        let title = format!("{window}-year rolling correlation on event indicators");
        let table = regression_table(&title, &res);
        tables.push_str(&table);
        tables.push('\n');
        print!("{table}\n");
        results.push(json!({
            "window": window,
            "from_year": from_year,
            "coefficients": res
                .names
                .iter()
                .zip(&res.coefficients)
                .map(|(n, v)| (n.clone(), json!(v)))
                .collect::<serde_json::Map<_, _>>(),
            "robust_se": res
                .names
                .iter()
                .zip(&res.robust_se)
                .map(|(n, v)| (n.clone(), json!(v)))
                .collect::<serde_json::Map<_, _>>(),
            "p_values": res
                .names
                .iter()
                .zip(&res.p_values)
                .map(|(n, v)| (n.clone(), json!(v)))
                .collect::<serde_json::Map<_, _>>(),
            "n_obs": res.n_obs,
            "r_squared": res.r_squared,
            "location_effects": res.location_effects,
        }));
    }
    ctx.write_json(
        "result.json",
        &json!({
            "windows": windows,
            "common_sample": args.common_sample,
            "from_year": from_year,
            "war_spans": events.war_spans,
            "famine_years": events.famine_years.iter().collect::<Vec<_>>(),
            "regressions": results,
        }),
    )?;
    ctx.write_text("table.txt", &tables)?;
    ctx.finish()
}
