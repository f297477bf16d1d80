//! Synthetic data with planted structure, used as ground truth by the test
//! suites and exposed through the CLI.
//!
//! Truth objects (loadings, factor series, effects, betas) are returned
//! alongside the data so checks never have to re-derive them.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::regress::{PanelObservations, PanelRow};

/// Deterministic 64-bit generator: a counter stepped by the golden-ratio
/// increment with the splitmix64 finalizer. The u64 stream is
/// platform-independent; normals are Box-Muller over that stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent substream k of a base seed.
    pub fn substream(seed: u64, k: u64) -> Self {
        Self::new(mix(seed ^ mix(k.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}

/// Spec for a pair (or K-set) of matrices sharing one latent factor.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedCcaSpec {
    pub t: usize,
    /// Loading vector per dataset; its length fixes that dataset's width.
    pub loadings: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl PlantedCcaSpec {
    /// Two datasets with unit-norm loadings spread over `p` and `q` columns.
    pub fn pair(t: usize, p: usize, q: usize, noise_sd: f64, seed: u64) -> Self {
        let unit = |k: usize| {
            let v = vec![1.0; k];
            let norm = (k as f64).sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        Self { t, loadings: vec![unit(p), unit(q)], noise_sd, seed }
    }
}

/// Ground truth accompanying a planted factor draw.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedCcaTruth {
    pub loadings: Vec<Vec<f64>>,
    /// The shared factor series z.
    pub factor: Vec<f64>,
    /// Population first canonical correlation between the first two datasets.
    pub population_rho1: f64,
}

/// Population first canonical correlation of `z a' + sd E` vs `z b' + sd E`.
pub fn population_rho1(a: &[f64], b: &[f64], noise_sd: f64) -> f64 {
    let na2: f64 = a.iter().map(|v| v * v).sum();
    let nb2: f64 = b.iter().map(|v| v * v).sum();
    let s2 = noise_sd * noise_sd;
    ((na2 / (na2 + s2)) * (nb2 / (nb2 + s2))).sqrt()
}

/// Draw K matrices `X_k = z a_k' + noise_sd * E_k` with a shared standard
/// normal factor z.
pub fn gen_planted_multiset(spec: &PlantedCcaSpec) -> Result<(Vec<DMatrix<f64>>, PlantedCcaTruth)> {
    if spec.t < 2 || spec.loadings.len() < 2 {
        return Err(Error::Validation("planted factor draw needs T >= 2 and K >= 2 datasets".into()));
    }
    if spec.noise_sd <= 0.0 {
        return Err(Error::Validation("noise sd must be positive".into()));
    }
    let mut rng = SplitMix64::substream(spec.seed, 0);
    let factor = rng.normal_vec(spec.t);
    let mut datasets = Vec::with_capacity(spec.loadings.len());
    for (k, loading) in spec.loadings.iter().enumerate() {
        if loading.is_empty() {
            return Err(Error::Validation(format!("dataset {k} has an empty loading vector")));
        }
        let mut noise = SplitMix64::substream(spec.seed, 1 + k as u64);
        let m = DMatrix::from_fn(spec.t, loading.len(), |t, j| {
            factor[t] * loading[j] + spec.noise_sd * noise.next_normal()
        });
        datasets.push(m);
    }
    let truth = PlantedCcaTruth {
        loadings: spec.loadings.clone(),
        population_rho1: population_rho1(&spec.loadings[0], &spec.loadings[1], spec.noise_sd),
        factor,
    };
    Ok((datasets, truth))
}

/// Two-dataset convenience wrapper around [`gen_planted_multiset`].
pub fn gen_planted_cca(spec: &PlantedCcaSpec) -> Result<(DMatrix<f64>, DMatrix<f64>, PlantedCcaTruth)> {
    if spec.loadings.len() != 2 {
        return Err(Error::Validation("pair draw needs exactly 2 loading vectors".into()));
    }
    let (mut data, truth) = gen_planted_multiset(spec)?;
    let y = data.pop().unwrap();
    let x = data.pop().unwrap();
    Ok((x, y, truth))
}

/// Spec for a planted panel `cpi = b1*temp + b2*pdsi + effects + noise`.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedPanelSpec {
    pub n_locations: usize,
    pub t: usize,
    pub beta_temp: f64,
    pub beta_pdsi: f64,
    /// Location intercept sd (gamma_i / random intercept).
    pub location_effect_sd: f64,
    /// Year intercept sd (lambda_t).
    pub time_effect_sd: f64,
    /// Per-location random slope sds on temp and pdsi.
    pub slope_sd_temp: f64,
    pub slope_sd_pdsi: f64,
    pub noise_sd: f64,
    /// Probability a cell is dropped; 0 keeps the panel balanced.
    pub missing_rate: f64,
    pub seed: u64,
}

impl PlantedPanelSpec {
    pub fn balanced(n_locations: usize, t: usize, seed: u64) -> Self {
        Self {
            n_locations,
            t,
            beta_temp: -0.03,
            beta_pdsi: -0.007,
            location_effect_sd: 0.5,
            time_effect_sd: 0.3,
            slope_sd_temp: 0.0,
            slope_sd_pdsi: 0.0,
            noise_sd: 0.2,
            missing_rate: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlantedPanelTruth {
    pub beta_temp: f64,
    pub beta_pdsi: f64,
    pub location_effects: Vec<f64>,
    pub time_effects: Vec<f64>,
    pub slopes_temp: Vec<f64>,
    pub slopes_pdsi: Vec<f64>,
}

fn location_name(i: usize) -> String {
    format!("loc{i:03}")
}

/// Draw panel observations with planted effects; regressors are white noise.
pub fn gen_planted_panel(spec: &PlantedPanelSpec) -> Result<(PanelObservations, PlantedPanelTruth)> {
    if spec.n_locations < 1 || spec.t < 2 {
        return Err(Error::Validation("panel draw needs at least 1 location and 2 years".into()));
    }
    if spec.noise_sd <= 0.0 {
        return Err(Error::Validation("noise sd must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.missing_rate) {
        return Err(Error::Validation("missing rate must lie in [0, 1)".into()));
    }
    let mut eff = SplitMix64::substream(spec.seed, 0);
    let location_effects: Vec<f64> =
        (0..spec.n_locations).map(|_| spec.location_effect_sd * eff.next_normal()).collect();
    let time_effects: Vec<f64> =
        (0..spec.t).map(|_| spec.time_effect_sd * eff.next_normal()).collect();
    let slopes_temp: Vec<f64> =
        (0..spec.n_locations).map(|_| spec.slope_sd_temp * eff.next_normal()).collect();
    let slopes_pdsi: Vec<f64> =
        (0..spec.n_locations).map(|_| spec.slope_sd_pdsi * eff.next_normal()).collect();

    let mut draw = SplitMix64::substream(spec.seed, 1);
    let mut rows = Vec::with_capacity(spec.n_locations * spec.t);
    for i in 0..spec.n_locations {
        for t in 0..spec.t {
            let temp = draw.next_normal();
            let pdsi = draw.next_normal();
            let noise = spec.noise_sd * draw.next_normal();
            let drop = draw.next_f64() < spec.missing_rate;
            if drop {
                continue;
            }
            let cpi = (spec.beta_temp + slopes_temp[i]) * temp
                + (spec.beta_pdsi + slopes_pdsi[i]) * pdsi
                + location_effects[i]
                + time_effects[t]
                + noise;
            rows.push(PanelRow {
                location: location_name(i),
                year: 1565 + t as i32,
                cpi,
                temp,
                pdsi,
            });
        }
    }
    let obs = PanelObservations::from_rows(rows)?;
    let truth = PlantedPanelTruth {
        beta_temp: spec.beta_temp,
        beta_pdsi: spec.beta_pdsi,
        location_effects,
        time_effects,
        slopes_temp,
        slopes_pdsi,
    };
    Ok((obs, truth))
}
