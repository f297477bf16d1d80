//! Reading and writing the long-form CSV inputs, grid-to-location
//! extraction and area weighting.
//!
//! All files are UTF-8 comma-separated with a `.` decimal separator and no
//! quoting; a missing value is an empty field or the literal `NaN`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{
    BoundingBox, ExtractionMode, ExtractionSpec, GridFieldSeries, Location, PanelMatrix,
};

/// Format a float with 17 significant digits so values survive a
/// write/read round trip exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    let field = field.trim();
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a numeric value, got '{field}'"),
    })
}

fn parse_required<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("expected {what}, got '{}'", field.trim()),
    })
}

fn split_line(line: &str, fields: usize, line_no: usize) -> Result<Vec<&str>> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != fields {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {fields} comma-separated fields, got {}", parts.len()),
        });
    }
    Ok(parts)
}

/// Read a `year,location,lat,lon,value` file into a panel spanning the
/// closed range of observed years; absent (year, location) pairs are missing.
pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<PanelMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "year,location,lat,lon,value" => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "{}: expected header 'year,location,lat,lon,value', got '{}'",
                    path.display(),
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }

    struct Row {
        year: i32,
        name: String,
        lat: f64,
        lon: f64,
        value: f64,
        line: usize,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts = split_line(line, 5, line_no)?;
        rows.push(Row {
            year: parse_required(parts[0], "a year", line_no)?,
            name: parts[1].trim().to_string(),
            lat: parse_required(parts[2], "a latitude", line_no)?,
            lon: parse_required(parts[3], "a longitude", line_no)?,
            value: parse_value(parts[4], line_no)?,
            line: line_no,
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{}: no data rows", path.display())));
    }

    let mut locations: Vec<Location> = Vec::new();
    for row in &rows {
        match locations.iter().find(|l| l.name == row.name) {
            Some(loc) => {
                if loc.lat != row.lat || loc.lon != row.lon {
                    return Err(Error::Parse {
                        line: row.line,
                        message: format!(
                            "location '{}' has inconsistent coordinates ({}, {}) vs ({}, {})",
                            row.name, row.lat, row.lon, loc.lat, loc.lon
                        ),
                    });
                }
            }
            None => locations.push(Location::new(row.name.clone(), row.lat, row.lon)?),
        }
    }
    locations.sort_by(|a, b| a.name.cmp(&b.name));

    let year_min = rows.iter().map(|r| r.year).min().unwrap();
    let year_max = rows.iter().map(|r| r.year).max().unwrap();
    let years: Vec<i32> = (year_min..=year_max).collect();
    let t = years.len();
    let n = locations.len();
    let mut values = DMatrix::from_element(t, n, f64::NAN);
    let mut seen = vec![false; t * n];
    for row in &rows {
        let ti = (row.year - year_min) as usize;
        let ni = locations.iter().position(|l| l.name == row.name).unwrap();
        if seen[ti * n + ni] {
            return Err(Error::DuplicateKey(format!("(year {}, location '{}')", row.year, row.name)));
        }
        seen[ti * n + ni] = true;
        values[(ti, ni)] = row.value;
    }
    PanelMatrix::from_values(years, locations, values)
}

/// Write a panel as `year,location,lat,lon,value`, one row per present cell,
/// year-major then location order.
pub fn write_panel_csv(panel: &PanelMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("year,location,lat,lon,value\n");
    for (t, &year) in panel.years().iter().enumerate() {
        for (n, loc) in panel.locations().iter().enumerate() {
            if let Some(v) = panel.value(t, n) {
                writeln!(
                    out,
                    "{year},{},{},{},{}",
                    loc.name,
                    fmt_f64(loc.lat),
                    fmt_f64(loc.lon),
                    fmt_f64(v)
                )
                .unwrap();
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a `year,lat,lon,value` file into a rectangular gridded series.
/// Every (lat, lon) pair must appear for every year; NaN or empty values
/// mark missing cells.
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<GridFieldSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "year,lat,lon,value" => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "{}: expected header 'year,lat,lon,value', got '{}'",
                    path.display(),
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }

    let mut rows: Vec<(i32, f64, f64, f64)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts = split_line(line, 4, line_no)?;
        rows.push((
            parse_required(parts[0], "a year", line_no)?,
            parse_required(parts[1], "a latitude", line_no)?,
            parse_required(parts[2], "a longitude", line_no)?,
            parse_value(parts[3], line_no)?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{}: no data rows", path.display())));
    }

    let mut years: Vec<i32> = rows.iter().map(|r| r.0).collect();
    years.sort_unstable();
    years.dedup();
    let mut lats: Vec<f64> = rows.iter().map(|r| r.1).collect();
    lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lats.dedup();
    let mut lons: Vec<f64> = rows.iter().map(|r| r.2).collect();
    lons.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lons.dedup();

    let (ny, nlat, nlon) = (years.len(), lats.len(), lons.len());
    if rows.len() != ny * nlat * nlon {
        // Find one offending cell for the message.
        let mut count = vec![0u32; ny * nlat * nlon];
        for (y, la, lo, _) in &rows {
            let ti = years.binary_search(y).unwrap();
            let i = lats.iter().position(|v| v == la).unwrap();
            let j = lons.iter().position(|v| v == lo).unwrap();
            count[(ti * nlat + i) * nlon + j] += 1;
        }
        let offending = count
            .iter()
            .enumerate()
            .find(|(_, &c)| c != 1)
            .map(|(k, &c)| {
                let ti = k / (nlat * nlon);
                let i = (k % (nlat * nlon)) / nlon;
                let j = k % nlon;
                format!(
                    "cell (year {}, lat {}, lon {}) appears {} times",
                    years[ti], lats[i], lons[j], c
                )
            })
            .unwrap_or_else(|| "row count does not match axis product".to_string());
        return Err(Error::Structure(format!("{}: ragged grid: {}", path.display(), offending)));
    }

    let mut values = vec![f64::NAN; ny * nlat * nlon];
    let mut seen = vec![false; ny * nlat * nlon];
    for (y, la, lo, v) in rows {
        let ti = years.binary_search(&y).unwrap();
        let i = lats.iter().position(|&x| x == la).unwrap();
        let j = lons.iter().position(|&x| x == lo).unwrap();
        let k = (ti * nlat + i) * nlon + j;
        if seen[k] {
            return Err(Error::Structure(format!(
                "{}: ragged grid: cell (year {y}, lat {la}, lon {lo}) appears 2 times",
                path.display()
            )));
        }
        seen[k] = true;
        values[k] = v;
    }
    GridFieldSeries::new(years, lats, lons, values)
}

/// Write a gridded series as `year,lat,lon,value` with NaN for missing cells.
pub fn write_grid_csv(grid: &GridFieldSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("year,lat,lon,value\n");
    for (t, &year) in grid.years().iter().enumerate() {
        for (i, &lat) in grid.lats().iter().enumerate() {
            for (j, &lon) in grid.lons().iter().enumerate() {
                writeln!(out, "{year},{},{},{}", fmt_f64(lat), fmt_f64(lon), fmt_f64(grid.raw(t, i, j)))
                    .unwrap();
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a `name,lat,lon` location list.
pub fn read_locations_csv(path: impl AsRef<Path>) -> Result<Vec<Location>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "name,lat,lon" => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "{}: expected header 'name,lat,lon', got '{}'",
                    path.display(),
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }
    let mut locations = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts = split_line(line, 3, line_no)?;
        locations.push(Location::new(
            parts[0].trim(),
            parse_required(parts[1], "a latitude", line_no)?,
            parse_required(parts[2], "a longitude", line_no)?,
        )?);
    }
    if locations.is_empty() {
        return Err(Error::Validation(format!("{}: no locations", path.display())));
    }
    Ok(locations)
}

/// Pull a location-aligned panel out of a grid.
///
/// Nearest-point mode returns the series of the closest cell center in
/// unprojected degree space among cells that have any data; box-average mode
/// averages present cells whose centers lie within the half-width box. The
/// output panel spans the closed range of grid years; grid year gaps are
/// masked.
pub fn extract_panel(
    grid: &GridFieldSeries,
    locations: &[Location],
    spec: &ExtractionSpec,
) -> Result<PanelMatrix> {
    if locations.is_empty() {
        return Err(Error::Validation("extraction needs at least one location".into()));
    }
    if spec.mode == ExtractionMode::BoxAverage && spec.box_half_width <= 0.0 {
        return Err(Error::Validation("box-average extraction needs a positive half-width".into()));
    }
    let year_min = grid.years()[0];
    let year_max = *grid.years().last().unwrap();
    let years: Vec<i32> = (year_min..=year_max).collect();
    let t_out = years.len();
    let mut values = DMatrix::from_element(t_out, locations.len(), f64::NAN);

    for (n, loc) in locations.iter().enumerate() {
        match spec.mode {
            ExtractionMode::NearestPoint => {
                // Closest cell center with at least one present year; ties
                // resolve to the first cell in row-major axis order.
                let mut best: Option<(f64, usize, usize)> = None;
                for (i, &lat) in grid.lats().iter().enumerate() {
                    for (j, &lon) in grid.lons().iter().enumerate() {
                        if !grid.cell_has_data(i, j) {
                            continue;
                        }
                        let d2 = (lat - loc.lat).powi(2) + (lon - loc.lon).powi(2);
                        if best.map_or(true, |(bd, _, _)| d2 < bd) {
                            best = Some((d2, i, j));
                        }
                    }
                }
                let (_, i, j) = best.ok_or_else(|| Error::Extraction {
                    location: loc.name.clone(),
                    message: "grid has no cells with data".into(),
                })?;
                for (tg, &year) in grid.years().iter().enumerate() {
                    if let Some(v) = grid.value(tg, i, j) {
                        values[((year - year_min) as usize, n)] = v;
                    }
                }
            }
            ExtractionMode::BoxAverage => {
                let h = spec.box_half_width;
                let cells: Vec<(usize, usize)> = grid
                    .lats()
                    .iter()
                    .enumerate()
                    .filter(|(_, &lat)| (lat - loc.lat).abs() <= h)
                    .flat_map(|(i, _)| {
                        grid.lons()
                            .iter()
                            .enumerate()
                            .filter(|(_, &lon)| (lon - loc.lon).abs() <= h)
                            .map(move |(j, _)| (i, j))
                    })
                    .collect();
                if cells.is_empty() {
                    return Err(Error::Extraction {
                        location: loc.name.clone(),
                        message: format!("no grid cells within +-{h} degrees"),
                    });
                }
                for (tg, &year) in grid.years().iter().enumerate() {
                    let present: Vec<f64> =
                        cells.iter().filter_map(|&(i, j)| grid.value(tg, i, j)).collect();
                    if !present.is_empty() {
                        values[((year - year_min) as usize, n)] =
                            present.iter().sum::<f64>() / present.len() as f64;
                    }
                }
            }
        }
    }
    PanelMatrix::from_values(years, locations.to_vec(), values)
}

/// Scale column j of a wide matrix by sqrt(cos(lat_j)) so cells contribute
/// in proportion to their area on the sphere.
pub fn latitude_weight(matrix: &DMatrix<f64>, lats: &[f64]) -> Result<DMatrix<f64>> {
    if lats.len() != matrix.ncols() {
        return Err(Error::Alignment(format!(
            "latitude count {} does not match column count {}",
            lats.len(),
            matrix.ncols()
        )));
    }
    for &lat in lats {
        if !lat.is_finite() || lat.abs() >= 90.0 {
            return Err(Error::Domain(format!("latitude {lat} outside (-90, 90)")));
        }
    }
    let mut out = matrix.clone();
    for (j, &lat) in lats.iter().enumerate() {
        let w = lat.to_radians().cos().sqrt();
        for i in 0..out.nrows() {
            out[(i, j)] *= w;
        }
    }
    Ok(out)
}

/// A grid flattened to one column per cell, restricted to cells with a
/// complete series (and optionally to a bounding box).
#[derive(Debug, Clone)]
pub struct WideGridMatrix {
    pub years: Vec<i32>,
    pub col_lats: Vec<f64>,
    pub col_lons: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl WideGridMatrix {
    pub fn col_name(&self, j: usize) -> String {
        format!("{}_{}", self.col_lats[j], self.col_lons[j])
    }
}

/// Flatten a grid into a T x cells matrix keeping only cells observed in
/// every year (incomplete cells are dropped, not imputed).
pub fn grid_to_wide(grid: &GridFieldSeries, bbox: Option<&BoundingBox>) -> Result<WideGridMatrix> {
    let t = grid.years().len();
    let mut col_lats = Vec::new();
    let mut col_lons = Vec::new();
    let mut cols: Vec<(usize, usize)> = Vec::new();
    for (i, &lat) in grid.lats().iter().enumerate() {
        for (j, &lon) in grid.lons().iter().enumerate() {
            if let Some(b) = bbox {
                if !b.contains(lat, lon) {
                    continue;
                }
            }
            if (0..t).all(|ti| grid.raw(ti, i, j).is_finite()) {
                cols.push((i, j));
                col_lats.push(lat);
                col_lons.push(lon);
            }
        }
    }
    if cols.is_empty() {
        return Err(Error::Validation(
            "no grid cells with complete series inside the requested region".into(),
        ));
    }
    let values = DMatrix::from_fn(t, cols.len(), |ti, c| {
        let (i, j) = cols[c];
        grid.raw(ti, i, j)
    });
    Ok(WideGridMatrix { years: grid.years().to_vec(), col_lats, col_lons, values })
}
