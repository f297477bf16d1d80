//! Rolling-window correlation panels and the fixed-effects regression of
//! those correlations on war/famine indicators.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::regress::{
    cluster_meat, normal_p, sandwich_se, EstimatorTag, LagSpec, RegressionResult,
};
use crate::types::PanelMatrix;

/// War spans (inclusive) and famine years driving the indicator variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventCalendar {
    pub war_spans: Vec<(i32, i32)>,
    pub famine_years: BTreeSet<i32>,
}

impl EventCalendar {
    pub fn new(mut war_spans: Vec<(i32, i32)>, famine_years: BTreeSet<i32>) -> Result<Self> {
        for &(a, b) in &war_spans {
            if a > b {
                return Err(Error::Validation(format!("war span {a}-{b} is reversed")));
            }
        }
        war_spans.sort_unstable();
        Ok(Self { war_spans, famine_years })
    }

    pub fn is_war_year(&self, year: i32) -> bool {
        self.war_spans.iter().any(|&(a, b)| (a..=b).contains(&year))
    }

    pub fn is_famine_year(&self, year: i32) -> bool {
        self.famine_years.contains(&year)
    }
}

/// Read a `type,start,end` calendar; `war` rows become spans, `famine`
/// rows add every year of start..=end (end may be empty for single years).
pub fn read_events_csv(path: impl AsRef<Path>) -> Result<EventCalendar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_events(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Parse calendar text (see [`read_events_csv`]).
pub fn parse_events(text: &str) -> Result<EventCalendar> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "type,start,end" => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header 'type,start,end', got '{}'",
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }
    let mut spans = Vec::new();
    let mut famines = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, got {}", parts.len()),
            });
        }
        let start: i32 = parts[1].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("expected a start year, got '{}'", parts[1].trim()),
        })?;
        let end: i32 = if parts[2].trim().is_empty() {
            start
        } else {
            parts[2].trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("expected an end year, got '{}'", parts[2].trim()),
            })?
        };
        if start > end {
            return Err(Error::Parse {
                line: line_no,
                message: format!("span {start}-{end} is reversed"),
            });
        }
        match parts[0].trim() {
            "war" => spans.push((start, end)),
            "famine" => famines.extend(start..=end),
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown event type '{other}' (expected war or famine)"),
                })
            }
        }
    }
    EventCalendar::new(spans, famines)
}

/// Window placement for rolling correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Window ends at the indexed year.
    Trailing,
    /// Window centered on the indexed year (half-width window/2).
    Centered,
}

/// Per-location trailing-window correlations between two aligned panels.
#[derive(Debug, Clone)]
pub struct RollingCorrPanel {
    pub window: usize,
    pub panel: PanelMatrix,
}

/// Pearson correlation over in-window years where both series are present.
/// Cells with fewer than 3 complete pairs or a constant series are masked;
/// present values are clamped to [-1, 1] against rounding.
pub fn rolling_correlation(
    x: &PanelMatrix,
    y: &PanelMatrix,
    window: usize,
) -> Result<RollingCorrPanel> {
    rolling_correlation_with(x, y, window, WindowMode::Trailing)
}

pub fn rolling_correlation_with(
    x: &PanelMatrix,
    y: &PanelMatrix,
    window: usize,
    mode: WindowMode,
) -> Result<RollingCorrPanel> {
    if !x.same_shape(y) {
        return Err(Error::Alignment("panels must share years and locations".into()));
    }
    let t_len = x.n_years();
    if window < 3 {
        return Err(Error::Validation(format!("window must be at least 3, got {window}")));
    }
    if window > t_len {
        return Err(Error::Validation(format!(
            "window {window} exceeds panel length {t_len}"
        )));
    }
    let mut values = DMatrix::from_element(t_len, x.n_locations(), f64::NAN);
    for n in 0..x.n_locations() {
        for t in 0..t_len {
            let (start, end) = match mode {
                WindowMode::Trailing => {
                    if t + 1 < window {
                        continue;
                    }
                    (t + 1 - window, t)
                }
                WindowMode::Centered => {
                    let half = window / 2;
                    if t < half || t + (window - 1 - half) >= t_len {
                        continue;
                    }
                    (t - half, t + (window - 1 - half))
                }
            };
            let mut xs = Vec::with_capacity(window);
            let mut ys = Vec::with_capacity(window);
            for s in start..=end {
                if let (Some(a), Some(b)) = (x.value(s, n), y.value(s, n)) {
                    xs.push(a);
                    ys.push(b);
                }
            }
            if xs.len() < 3 {
                continue;
            }
            let m = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / m;
            let my = ys.iter().sum::<f64>() / m;
            let mut cov = 0.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for (a, b) in xs.iter().zip(&ys) {
                cov += (a - mx) * (b - my);
                vx += (a - mx) * (a - mx);
                vy += (b - my) * (b - my);
            }
            if vx == 0.0 || vy == 0.0 {
                continue;
            }
            values[(t, n)] = (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0);
        }
    }
    let panel = PanelMatrix::from_values(x.years().to_vec(), x.locations().to_vec(), values)?;
    Ok(RollingCorrPanel { window, panel })
}

/// First year at which the largest configured window is valid; restricting
/// every regression to this year keeps N identical across window lengths.
pub fn common_sample_start(windows: &[usize], years: &[i32]) -> Result<i32> {
    let max_window =
        windows.iter().copied().max().ok_or_else(|| Error::Validation("no windows".into()))?;
    if max_window > years.len() {
        return Err(Error::Validation(format!(
            "window {max_window} exceeds panel length {}",
            years.len()
        )));
    }
    Ok(years[0] + max_window as i32 - 1)
}

/// Regress the rolling correlation on war/famine indicators and the cpi and
/// climate levels, absorbing location intercepts, with location-clustered
/// HAC errors.
///
/// Event indicator columns with no within variation (for example a calendar
/// with no events in sample) are retained with coefficient 0, standard
/// error 0 and p-value 1 rather than failing; genuine collinearity among
/// the level controls still errors.
pub fn correlation_regression(
    corr: &RollingCorrPanel,
    events: &EventCalendar,
    cpi: &PanelMatrix,
    climate: &PanelMatrix,
    from_year: i32,
    lag: LagSpec,
) -> Result<RegressionResult> {
    let panel = &corr.panel;
    if !panel.same_shape(cpi) || !panel.same_shape(climate) {
        return Err(Error::Alignment(
            "correlation, cpi and climate panels must share years and locations".into(),
        ));
    }
    let names: Vec<String> =
        ["ty_war", "famines", "cpi", "climate"].map(String::from).to_vec();

    struct Obs {
        loc: usize,
        year: i32,
        y: f64,
        x: [f64; 4],
    }
    let mut obs = Vec::new();
    for n in 0..panel.n_locations() {
        for (t, &year) in panel.years().iter().enumerate() {
            if year < from_year {
                continue;
            }
            let (Some(r), Some(c), Some(z)) =
                (panel.value(t, n), cpi.value(t, n), climate.value(t, n))
            else {
                continue;
            };
            obs.push(Obs {
                loc: n,
                year,
                y: r,
                x: [
                    if events.is_war_year(year) { 1.0 } else { 0.0 },
                    if events.is_famine_year(year) { 1.0 } else { 0.0 },
                    c,
                    z,
                ],
            });
        }
    }
    let n_obs = obs.len();
    let used_locs: BTreeSet<usize> = obs.iter().map(|o| o.loc).collect();
    if used_locs.len() < 2 {
        return Err(Error::ClusterCount(used_locs.len()));
    }
    if n_obs < used_locs.len() + names.len() {
        return Err(Error::DegenerateInput(format!(
            "{n_obs} observations cannot identify {} location effects plus {} slopes",
            used_locs.len(),
            names.len()
        )));
    }
    let loc_map: Vec<usize> = used_locs.iter().copied().collect();
    let loc_of = |n: usize| loc_map.binary_search(&n).unwrap();

    // One-way within transform (location means).
    let n_loc = loc_map.len();
    let mut count = vec![0usize; n_loc];
    let mut mean_y = vec![0.0; n_loc];
    let mut mean_x = vec![[0.0; 4]; n_loc];
    for o in &obs {
        let g = loc_of(o.loc);
        count[g] += 1;
        mean_y[g] += o.y;
        for j in 0..4 {
            mean_x[g][j] += o.x[j];
        }
    }
    for g in 0..n_loc {
        mean_y[g] /= count[g] as f64;
        for j in 0..4 {
            mean_x[g][j] /= count[g] as f64;
        }
    }

    // Event indicators absorbed by the demeaning drop out of the solve.
    let mut active = [true; 4];
    for j in 0..2 {
        let within_ss: f64 = obs
            .iter()
            .map(|o| {
                let g = loc_of(o.loc);
                (o.x[j] - mean_x[g][j]).powi(2)
            })
            .sum();
        if within_ss <= 1e-20 {
            active[j] = false;
        }
    }
    let active_idx: Vec<usize> = (0..4).filter(|&j| active[j]).collect();
    let active_names: Vec<String> =
        active_idx.iter().map(|&j| names[j].clone()).collect();

    let x = DMatrix::from_fn(n_obs, active_idx.len(), |i, jj| {
        let o = &obs[i];
        let g = loc_of(o.loc);
        let j = active_idx[jj];
        o.x[j] - mean_x[g][j]
    });
    let y = DVector::from_fn(n_obs, |i, _| {
        let o = &obs[i];
        o.y - mean_y[loc_of(o.loc)]
    });

    let dependent = super::regress::dependent_columns(&x, &active_names);
    if !dependent.is_empty() {
        return Err(Error::Collinearity(dependent));
    }
    let xtx = x.transpose() * &x;
    let chol = xtx.cholesky().ok_or_else(|| Error::Collinearity(active_names.clone()))?;
    let beta_active = chol.solve(&(x.transpose() * &y));
    let xtx_inv = chol.inverse();
    let resid = &y - &x * &beta_active;

    let mut years: Vec<i32> = obs.iter().map(|o| o.year).collect();
    let clusters: Vec<usize> = obs.iter().map(|o| loc_of(o.loc)).collect();
    let distinct_years: usize = {
        let mut ys = years.clone();
        ys.sort_unstable();
        ys.dedup();
        ys.len()
    };
    years.truncate(n_obs);
    let bandwidth = lag.resolve(distinct_years);
    let meat = cluster_meat(&x, &resid, &clusters, &years, Some(bandwidth));
    let se_active = sandwich_se(&xtx_inv, &meat);

    // Re-expand to the full name list, zeros for absorbed event columns.
    let mut coefficients = vec![0.0; 4];
    let mut robust_se = vec![0.0; 4];
    for (jj, &j) in active_idx.iter().enumerate() {
        coefficients[j] = beta_active[jj];
        robust_se[j] = se_active[jj];
    }
    let p_values: Vec<f64> = coefficients
        .iter()
        .zip(&robust_se)
        .map(|(&b, &se)| normal_p(b, se))
        .collect();

    // Location intercepts on the raw scale.
    let location_effects: Vec<(String, f64)> = loc_map
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let alpha = mean_y[g]
                - (0..4).map(|j| coefficients[j] * mean_x[g][j]).sum::<f64>();
            (panel.locations()[n].name.clone(), alpha)
        })
        .collect();

    let tss: f64 = y.iter().map(|v| v * v).sum();
    let rss: f64 = resid.iter().map(|v| v * v).sum();
    let r_squared = if tss > 0.0 { Some(1.0 - rss / tss) } else { Some(0.0) };

    Ok(RegressionResult {
        names,
        coefficients,
        robust_se,
        p_values,
        location_effects: Some(location_effects),
        year_effects: None,
        residuals: resid.iter().copied().collect(),
        n_obs,
        r_squared,
        estimator: EstimatorTag::FeArellano,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SplitMix64;
    use crate::types::Location;

    fn panel_from(series: Vec<Vec<f64>>, start: i32) -> PanelMatrix {
        let t = series[0].len();
        let n = series.len();
        let years: Vec<i32> = (start..start + t as i32).collect();
        let locations: Vec<Location> = (0..n)
            .map(|i| Location::new(format!("loc{i:02}"), 45.0 + i as f64, 2.0).unwrap())
            .collect();
        let values = DMatrix::from_fn(t, n, |ti, ni| series[ni][ti]);
        PanelMatrix::from_values(years, locations, values).unwrap()
    }

    #[test]
    fn events_parse_and_indicators() {
        let cal = parse_events(
            "type,start,end\n\
             war,1618,1648\n\
             famine,1693,1697\n\
             famine,1709,\n",
        )
        .unwrap();
        assert!(cal.is_war_year(1618));
        assert!(cal.is_war_year(1648));
        assert!(!cal.is_war_year(1649));
        assert!(cal.is_famine_year(1695));
        assert!(cal.is_famine_year(1709));
        assert!(!cal.is_famine_year(1700));

        assert!(matches!(
            parse_events("type,start,end\nplague,1600,1601\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_events("type,start,end\nwar,1648,1618\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn self_correlation_is_one_and_negation_minus_one() {
        let mut rng = SplitMix64::new(1);
        let series: Vec<f64> = (0..40).map(|_| rng.next_normal()).collect();
        let x = panel_from(vec![series.clone()], 1600);
        let y_neg = panel_from(vec![series.iter().map(|v| -v).collect()], 1600);
        let same = rolling_correlation(&x, &x, 10).unwrap();
        let flipped = rolling_correlation(&x, &y_neg, 10).unwrap();
        for t in 0..40 {
            match same.panel.value(t, 0) {
                Some(v) => {
                    assert!(t >= 9);
                    assert!((v - 1.0).abs() < 1e-12);
                    assert!((flipped.panel.value(t, 0).unwrap() + 1.0).abs() < 1e-12);
                }
                None => assert!(t < 9, "masked at t={t}"),
            }
        }
    }

    #[test]
    fn bounds_and_affine_invariance() {
        let mut rng = SplitMix64::new(2);
        let a: Vec<f64> = (0..60).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = a.iter().map(|v| 0.4 * v + rng.next_normal()).collect();
        let x = panel_from(vec![a.clone()], 1600);
        let y = panel_from(vec![b.clone()], 1600);
        let base = rolling_correlation(&x, &y, 15).unwrap();
        for t in 0..60 {
            if let Some(v) = base.panel.value(t, 0) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
        // Common affine rescaling leaves Pearson untouched.
        let xs = panel_from(vec![a.iter().map(|v| 3.0 * v - 7.0).collect()], 1600);
        let ys = panel_from(vec![b.iter().map(|v| -2.0 * v + 1.0).collect()], 1600);
        let scaled = rolling_correlation(&xs, &ys, 15).unwrap();
        for t in 0..60 {
            match (base.panel.value(t, 0), scaled.panel.value(t, 0)) {
                (Some(u), Some(v)) => assert!((u + v).abs() < 1e-12, "sign flip expected"),
                (None, None) => {}
                other => panic!("mask mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn constant_windows_are_masked() {
        let mut series = vec![1.0; 30];
        series[25] = 2.0;
        let x = panel_from(vec![series], 1600);
        let mut rng = SplitMix64::new(3);
        let other: Vec<f64> = (0..30).map(|_| rng.next_normal()).collect();
        let y = panel_from(vec![other], 1600);
        let rc = rolling_correlation(&x, &y, 10).unwrap();
        assert_eq!(rc.panel.value(20, 0), None);
        assert!(rc.panel.value(26, 0).is_some());
    }

    #[test]
    fn rolling_mean_matches_population_within_monte_carlo_ci() {
        // Simulation oracle: y loads on an AR(1) factor shared with x; the
        // windowed Pearson correlation is compared to the population value
        // over independent replications, one window per replication.
        let reps = 500;
        let window = 60;
        let phi = 0.3f64;
        let loading = 0.7f64;
        let noise = 0.1f64.sqrt(); // population corr = 0.7/sqrt(0.49+0.1*(1-phi^2))...
        let var_x = 1.0 / (1.0 - phi * phi);
        let pop = loading * var_x.sqrt()
            / (loading * loading * var_x + noise * noise).sqrt();
        let mut vals = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut rng = SplitMix64::substream(7000, rep as u64);
            let mut xf = 0.0;
            let mut xs = Vec::with_capacity(window);
            let mut ys = Vec::with_capacity(window);
            // burn-in to the stationary distribution
            for _ in 0..50 {
                xf = phi * xf + rng.next_normal();
            }
            for _ in 0..window {
                xf = phi * xf + rng.next_normal();
                xs.push(xf);
                ys.push(loading * xf + noise * rng.next_normal());
            }
            let x = panel_from(vec![xs], 1600);
            let y = panel_from(vec![ys], 1600);
            let rc = rolling_correlation(&x, &y, window).unwrap();
            vals.push(rc.panel.value(window - 1, 0).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64)
            .sqrt();
        let ci = 2.0 * sd / (reps as f64).sqrt();
        assert!(
            (mean - pop).abs() <= ci + 0.01,
            "mean {mean} vs population {pop} (ci {ci})"
        );
    }

    #[test]
    fn common_sample_rule() {
        let years: Vec<i32> = (1565..=1785).collect();
        assert_eq!(common_sample_start(&[10, 15, 20], &years).unwrap(), 1584);
        // 221-year panel, 20-year windows: 202 valid years remain.
        assert_eq!(1785 - 1584 + 1, 202);
    }

    fn noise_panels(
        n_loc: usize,
        t: usize,
        seed: u64,
    ) -> (PanelMatrix, PanelMatrix) {
        let mut rng = SplitMix64::new(seed);
        let mk = |rng: &mut SplitMix64| -> Vec<Vec<f64>> {
            (0..n_loc).map(|_| (0..t).map(|_| rng.next_normal()).collect()).collect()
        };
        (panel_from(mk(&mut rng), 1600), panel_from(mk(&mut rng), 1600))
    }

    #[test]
    fn zero_events_and_constant_corr_give_zero_coefficients() {
        let (cpi, climate) = noise_panels(4, 30, 11);
        let corr = RollingCorrPanel {
            window: 10,
            panel: panel_from(vec![vec![0.3; 30]; 4], 1600),
        };
        let events = EventCalendar::default();
        let res =
            correlation_regression(&corr, &events, &cpi, &climate, 1609, LagSpec::Fixed(2))
                .unwrap();
        for j in 0..4 {
            assert!(res.coefficients[j].abs() < 1e-10, "{:?}", res.coefficients);
        }
        assert_eq!(res.p_values[0], 1.0);
        assert_eq!(res.r_squared, Some(0.0));
    }

    #[test]
    fn planted_step_down_is_recovered_within_two_ses() {
        // Correlations drop by 0.25 during the configured span.
        let n_loc = 8;
        let t = 80;
        let step = -0.25;
        let mut rng = SplitMix64::new(13);
        let events = EventCalendar::new(vec![(1630, 1650)], BTreeSet::new()).unwrap();
        let series: Vec<Vec<f64>> = (0..n_loc)
            .map(|_| {
                (0..t)
                    .map(|ti| {
                        let year = 1600 + ti as i32;
                        let base = 0.4 + 0.05 * rng.next_normal();
                        if events.is_war_year(year) {
                            base + step
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect();
        let corr = RollingCorrPanel { window: 10, panel: panel_from(series, 1600) };
        let (cpi, climate) = noise_panels(n_loc, t, 17);
        let res =
            correlation_regression(&corr, &events, &cpi, &climate, 1609, LagSpec::Auto)
                .unwrap();
        let b = res.coefficient("ty_war").unwrap();
        let se = res.se("ty_war").unwrap();
        assert!((b - step).abs() <= 2.0 * se, "war coefficient {b} (se {se})");
        assert!(res.p_value("ty_war").unwrap() < 0.001);
    }

    #[test]
    fn common_sample_restriction_controls_n() {
        let (cpi, climate) = noise_panels(3, 40, 23);
        let corr10 = rolling_correlation(&cpi, &climate, 10).unwrap();
        let corr20 = rolling_correlation(&cpi, &climate, 20).unwrap();
        let events = EventCalendar::new(vec![(1625, 1630)], BTreeSet::new()).unwrap();
        let from = common_sample_start(&[10, 20], cpi.years()).unwrap();
        let r10 =
            correlation_regression(&corr10, &events, &cpi, &climate, from, LagSpec::Auto)
                .unwrap();
        let r20 =
            correlation_regression(&corr20, &events, &cpi, &climate, from, LagSpec::Auto)
                .unwrap();
        assert_eq!(r10.n_obs, r20.n_obs);
        assert_eq!(r10.n_obs, 3 * 21);
    }

    #[test]
    fn shape_mismatch_is_an_alignment_error() {
        let (cpi, _) = noise_panels(3, 30, 31);
        let (other, _) = noise_panels(4, 30, 37);
        assert!(matches!(
            rolling_correlation(&cpi, &other, 10),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn centered_mode_masks_both_ends() {
        let mut rng = SplitMix64::new(41);
        let a: Vec<f64> = (0..30).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.next_normal()).collect();
        let x = panel_from(vec![a], 1600);
        let y = panel_from(vec![b], 1600);
        let rc = rolling_correlation_with(&x, &y, 11, WindowMode::Centered).unwrap();
        assert_eq!(rc.panel.value(4, 0), None);
        assert!(rc.panel.value(5, 0).is_some());
        assert!(rc.panel.value(24, 0).is_some());
        assert_eq!(rc.panel.value(25, 0), None);
    }
}
