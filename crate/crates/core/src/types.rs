//! Shared data containers: locations, year-by-location panels and gridded
//! climate fields.
//!
//! Missing observations are carried as an explicit mask; `f64::NAN` is the
//! file-level sentinel and is never a "present" value.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named observation site with coordinates in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(name: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation("location name must be nonempty".into()));
        }
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Validation(format!(
                "location '{name}': latitude {lat} outside [-90, 90]"
            )));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Validation(format!(
                "location '{name}': longitude {lon} outside [-180, 180]"
            )));
        }
        Ok(Self { name, lat, lon })
    }
}

/// T years by N locations observation matrix with a missingness mask.
///
/// Years run in unit steps over the closed span of the data, so row index
/// and calendar year are interchangeable. Present cells are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    years: Vec<i32>,
    locations: Vec<Location>,
    values: DMatrix<f64>,
    present: DMatrix<bool>,
}

impl PanelMatrix {
    pub fn new(
        years: Vec<i32>,
        locations: Vec<Location>,
        values: DMatrix<f64>,
        present: DMatrix<bool>,
    ) -> Result<Self> {
        if years.is_empty() || locations.is_empty() {
            return Err(Error::Validation("panel must have at least one year and one location".into()));
        }
        for w in years.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::Validation(format!(
                    "panel years must increase in unit steps, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, a) in locations.iter().enumerate() {
            for b in locations.iter().skip(i + 1) {
                if a.name == b.name {
                    return Err(Error::DuplicateKey(format!("location '{}'", a.name)));
                }
            }
        }
        let (t, n) = (years.len(), locations.len());
        if values.shape() != (t, n) || present.shape() != (t, n) {
            return Err(Error::Validation(format!(
                "panel value/mask shape must be {t}x{n}, got {:?} and {:?}",
                values.shape(),
                present.shape()
            )));
        }
        for ti in 0..t {
            for ni in 0..n {
                if present[(ti, ni)] && !values[(ti, ni)].is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value marked present at year {}, location '{}'",
                        years[ti], locations[ni].name
                    )));
                }
            }
        }
        Ok(Self { years, locations, values, present })
    }

    /// Build from a value matrix where `NaN` marks missing cells.
    pub fn from_values(years: Vec<i32>, locations: Vec<Location>, values: DMatrix<f64>) -> Result<Self> {
        let present = values.map(|v| v.is_finite());
        Self::new(years, locations, values, present)
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.present
    }

    pub fn is_present(&self, t: usize, n: usize) -> bool {
        self.present[(t, n)]
    }

    pub fn value(&self, t: usize, n: usize) -> Option<f64> {
        if self.present[(t, n)] {
            Some(self.values[(t, n)])
        } else {
            None
        }
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        let first = self.years[0];
        if year < first || year > *self.years.last().unwrap() {
            None
        } else {
            Some((year - first) as usize)
        }
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    /// One location's series over all years, `NaN` where missing.
    pub fn series(&self, n: usize) -> Vec<f64> {
        (0..self.n_years())
            .map(|t| if self.present[(t, n)] { self.values[(t, n)] } else { f64::NAN })
            .collect()
    }

    /// Replace one location's series; `NaN` entries become missing.
    pub fn set_series(&mut self, n: usize, series: &[f64]) -> Result<()> {
        if series.len() != self.n_years() {
            return Err(Error::Alignment(format!(
                "series length {} does not match panel year count {}",
                series.len(),
                self.n_years()
            )));
        }
        for (t, &v) in series.iter().enumerate() {
            self.values[(t, n)] = v;
            self.present[(t, n)] = v.is_finite();
        }
        Ok(())
    }

    /// True when both panels share the same years and location names.
    pub fn same_shape(&self, other: &PanelMatrix) -> bool {
        self.years == other.years
            && self.locations.len() == other.locations.len()
            && self
                .locations
                .iter()
                .zip(&other.locations)
                .all(|(a, b)| a.name == b.name)
    }
}

/// A gridded field per year: `values[t][lat][lon]`, `NaN` marking missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFieldSeries {
    years: Vec<i32>,
    lats: Vec<f64>,
    lons: Vec<f64>,
    values: Vec<f64>,
}

impl GridFieldSeries {
    pub fn new(years: Vec<i32>, lats: Vec<f64>, lons: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if years.is_empty() || lats.is_empty() || lons.is_empty() {
            return Err(Error::Validation("grid must have at least one year and one cell".into()));
        }
        for w in years.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation("grid years must be strictly increasing".into()));
            }
        }
        for (axis, vals) in [("lat", &lats), ("lon", &lons)] {
            for w in vals.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Validation(format!(
                        "grid {axis} axis must be strictly increasing"
                    )));
                }
            }
        }
        let expected = years.len() * lats.len() * lons.len();
        if values.len() != expected {
            return Err(Error::Validation(format!(
                "grid value count {} does not match {} years x {} lats x {} lons",
                values.len(),
                years.len(),
                lats.len(),
                lons.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Validation("grid values must be finite or NaN".into()));
        }
        Ok(Self { years, lats, lons, values })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    fn idx(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.lats.len() + i) * self.lons.len() + j
    }

    pub fn raw(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[self.idx(t, i, j)]
    }

    pub fn value(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        let v = self.raw(t, i, j);
        if v.is_finite() {
            Some(v)
        } else {
            None
        }
    }

    /// True when cell (i, j) has at least one present year.
    pub fn cell_has_data(&self, i: usize, j: usize) -> bool {
        (0..self.years.len()).any(|t| self.raw(t, i, j).is_finite())
    }
}

/// How to pull a location-aligned series out of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionMode {
    NearestPoint,
    BoxAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSpec {
    pub mode: ExtractionMode,
    /// Half-width of the averaging box in degrees (box-average mode only).
    pub box_half_width: f64,
}

impl ExtractionSpec {
    pub fn nearest() -> Self {
        Self { mode: ExtractionMode::NearestPoint, box_half_width: 0.0 }
    }

    pub fn box_average(half_width: f64) -> Result<Self> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(Error::Validation(format!(
                "box half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self { mode: ExtractionMode::BoxAverage, box_half_width: half_width })
    }
}

/// Geographic bounding box used when flattening grids to wide matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        if lon_min >= lon_max || lat_min >= lat_max {
            return Err(Error::Validation(format!(
                "bounding box must have lon_min < lon_max and lat_min < lat_max, got \
                 lon [{lon_min}, {lon_max}], lat [{lat_min}, {lat_max}]"
            )));
        }
        Ok(Self { lon_min, lon_max, lat_min, lat_max })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(name: &str) -> Location {
        Location::new(name, 48.0, 2.0).unwrap()
    }

    #[test]
    fn location_bounds_checked() {
        assert!(Location::new("x", 91.0, 0.0).is_err());
        assert!(Location::new("x", 0.0, -181.0).is_err());
        assert!(Location::new("", 0.0, 0.0).is_err());
        assert!(Location::new("x", -90.0, 180.0).is_ok());
    }

    #[test]
    fn panel_rejects_year_gaps_and_duplicates() {
        let values = DMatrix::from_element(2, 1, 1.0);
        let present = DMatrix::from_element(2, 1, true);
        let err = PanelMatrix::new(vec![1565, 1567], vec![loc("a")], values.clone(), present.clone());
        assert!(err.is_err());

        let err = PanelMatrix::new(
            vec![1565, 1566],
            vec![loc("a"), loc("a")],
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::from_element(2, 2, true),
        );
        assert!(matches!(err, Err(Error::DuplicateKey(_))));

        assert!(PanelMatrix::new(vec![1565, 1566], vec![loc("a")], values, present).is_ok());
    }

    #[test]
    fn panel_rejects_nonfinite_present_values() {
        let mut values = DMatrix::from_element(2, 1, 1.0);
        values[(0, 0)] = f64::NAN;
        let present = DMatrix::from_element(2, 1, true);
        assert!(PanelMatrix::new(vec![1565, 1566], vec![loc("a")], values, present).is_err());
    }

    #[test]
    fn series_round_trip_preserves_mask() {
        let mut panel = PanelMatrix::from_values(
            vec![1565, 1566, 1567],
            vec![loc("a")],
            DMatrix::from_column_slice(3, 1, &[1.0, f64::NAN, 3.0]),
        )
        .unwrap();
        assert_eq!(panel.present_count(), 2);
        let s = panel.series(0);
        assert!(s[1].is_nan());
        panel.set_series(0, &[4.0, 5.0, f64::NAN]).unwrap();
        assert_eq!(panel.value(0, 0), Some(4.0));
        assert_eq!(panel.value(1, 0), Some(5.0));
        assert_eq!(panel.value(2, 0), None);
    }

    #[test]
    fn grid_requires_monotone_axes_and_full_shape() {
        assert!(GridFieldSeries::new(vec![1], vec![1.0, 0.5], vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(GridFieldSeries::new(vec![1], vec![0.5, 1.0], vec![0.0], vec![0.0]).is_err());
        let grid =
            GridFieldSeries::new(vec![1], vec![0.5, 1.0], vec![0.0], vec![1.0, f64::NAN]).unwrap();
        assert_eq!(grid.value(0, 0, 0), Some(1.0));
        assert_eq!(grid.value(0, 1, 0), None);
        assert!(grid.cell_has_data(0, 0));
        assert!(!grid.cell_has_data(1, 0));
    }
}
