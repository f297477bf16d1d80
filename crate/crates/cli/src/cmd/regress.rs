//! `panelcca regress`: pooled OLS, two-way fixed effects or the mixed
//! model, on aligned cpi/temp/pdsi panels.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use panelcca_core::ingest::{fmt_f64, read_panel_csv};
use panelcca_core::regress::{
    extract_location_coefficients, fe_twoway, mixed_effects_reml, ols_newey_west, ClusterCov,
    MixedOptions, PanelObservations, RegressionResult,
};

use crate::cmd::parse_lag;
use crate::run::RunContext;
use crate::table::{mixed_table, regression_table};
use crate::Global;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Ols,
    Fe,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovArg {
    /// Bartlett taper over within-cluster year distances.
    ClusterHac,
    /// Plain cluster-robust (every within-cluster pair weighted 1).
    Cluster,
}

#[derive(Debug, Args, Serialize)]
pub struct RegressArgs {
    #[arg(long)]
    pub cpi: PathBuf,
    #[arg(long)]
    pub temp: PathBuf,
    #[arg(long)]
    pub pdsi: PathBuf,

    #[arg(long, value_enum)]
    pub model: ModelArg,

    /// Newey-West bandwidth: 'auto' or an integer.
    #[arg(long, default_value = "auto")]
    pub lag: String,

    /// Covariance family for the fixed-effects model.
    #[arg(long, value_enum, default_value = "cluster-hac")]
    pub cov: CovArg,

    /// Clustering variable (only 'location' is supported).
    #[arg(long, default_value = "location")]
    pub cluster: String,
}

fn result_json(result: &RegressionResult) -> serde_json::Value {
    let named = |values: &[f64]| -> serde_json::Value {
        result
            .names
            .iter()
            .zip(values)
            .map(|(n, v)| (n.clone(), json!(v)))
            .collect::<serde_json::Map<_, _>>()
            .into()
    };
    json!({
        "estimator": result.estimator,
        "coefficients": named(&result.coefficients),
        "robust_se": named(&result.robust_se),
        "p_values": named(&result.p_values),
        "n_obs": result.n_obs,
        "r_squared": result.r_squared,
        "location_effects": result.location_effects,
        "year_effects": result.year_effects,
    })
}

pub fn run(global: &Global, args: RegressArgs) -> Result<()> {
    if args.cluster != "location" {
        bail!("--cluster supports only 'location', got '{}'", args.cluster);
    }
    let lag = parse_lag(&args.lag)?;
    let mut ctx = RunContext::create(&global.out, "regress", &args)?;
    for path in [&args.cpi, &args.temp, &args.pdsi] {
        ctx.record_input(path)?;
    }
    let cpi = read_panel_csv(&args.cpi)?;
    let temp = read_panel_csv(&args.temp)?;
    let pdsi = read_panel_csv(&args.pdsi)?;
    let obs = PanelObservations::from_panels(&cpi, &temp, &pdsi)?;

    let table = match args.model {
        ModelArg::Ols => {
            let res = ols_newey_west(&obs, lag)?;
            ctx.write_json("result.json", &result_json(&res))?;
            regression_table("pooled OLS (Newey-West errors)", &res)
        }
        ModelArg::Fe => {
            let cov = match args.cov {
                CovArg::ClusterHac => ClusterCov::ClusterHac(lag),
                CovArg::Cluster => ClusterCov::Arellano,
            };
            let res = fe_twoway(&obs, cov)?;
            ctx.write_json("result.json", &result_json(&res))?;
            regression_table("two-way fixed effects (location-clustered errors)", &res)
        }
        ModelArg::Mixed => {
            let res = mixed_effects_reml(&obs, &MixedOptions::default())?;
            let mut value = result_json(&res.base);
            value["variance_components"] = serde_json::to_value(&res.variance_components)?;
            value["blups"] = serde_json::to_value(&res.blups)?;
            value["reml_loglik"] = json!(res.reml_loglik);
            value["boundary_warnings"] = json!(res.boundary_warnings);
            ctx.write_json("result.json", &value)?;

            // Plot-ready per-location slopes (fixed effect + BLUP).
            let slopes = extract_location_coefficients(&res);
            let mut csv = String::from("location,intercept,temp,pdsi\n");
            for s in &slopes {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    s.location,
                    fmt_f64(s.intercept),
                    fmt_f64(s.temp),
                    fmt_f64(s.pdsi)
                ));
            }
            ctx.write_text("location_slopes.csv", &csv)?;
            mixed_table(&res)
        }
    };
    ctx.write_text("table.txt", &table)?;
    print!("{table}");
    ctx.finish()
}
