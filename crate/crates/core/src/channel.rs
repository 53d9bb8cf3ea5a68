//! Rician GEO downlink channel generation.
//!
//! Each entry combines the user terminal gain, free-space attenuation, a
//! line-of-sight term shaped by the beam pattern and a random non-line-of-sight
//! term. Phases and fading evolve across slots as first-order random walks.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CMat, Scenario};
use crate::modcod::db_to_linear;
use crate::rng::{stream_rng, Stream};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const GEO_RADIUS_M: f64 = 42_164_000.0;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// How free-space attenuation enters the channel amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLossConvention {
    /// Amplitude scales with `sqrt((λ/4πd)²)`: physical attenuation.
    #[default]
    Multiply,
    /// Amplitude scales with `sqrt((4πd/λ)²)`.
    Divide,
}

/// Free-space loss `(λ/4πd)²`.
pub fn path_loss(distance: f64, wavelength: f64) -> f64 {
    (wavelength / (4.0 * PI * distance)).powi(2)
}

/// Distance from a ground point to a geostationary satellite, m.
pub fn slant_distance(lat_deg: f64, lon_deg: f64, orbit_lon_deg: f64) -> f64 {
    let cos_angle = lat_deg.to_radians().cos() * (lon_deg - orbit_lon_deg).to_radians().cos();
    (EARTH_RADIUS_M.powi(2) + GEO_RADIUS_M.powi(2) - 2.0 * EARTH_RADIUS_M * GEO_RADIUS_M * cos_angle)
        .sqrt()
}

/// Great-circle separation of two lat/lon points, degrees.
pub fn great_circle_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2)
        + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    (2.0 * h.sqrt().min(1.0).asin()).to_degrees()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    pub lat: f64,
    pub lon: f64,
    /// Terminal receive gain, linear.
    pub rx_gain: f64,
    /// Distance to the satellite, m.
    pub slant_distance: f64,
}

impl UserGeometry {
    pub fn new(lat: f64, lon: f64, rx_gain_db: f64, orbit_lon_deg: f64) -> Self {
        Self {
            lat,
            lon,
            rx_gain: db_to_linear(rx_gain_db),
            slant_distance: slant_distance(lat, lon, orbit_lon_deg),
        }
    }

    /// Reads `user,lat,lon,rx_gain_db` rows.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, orbit_lon_deg: f64) -> Result<Vec<Self>> {
        #[derive(Deserialize)]
        struct Row {
            user: usize,
            lat: f64,
            lon: f64,
            rx_gain_db: f64,
        }
        let mut rows: Vec<Row> = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.user);
        if rows.iter().enumerate().any(|(i, r)| r.user != i) {
            return Err(Error::Config("user ids must be 0..M without gaps".into()));
        }
        Ok(rows.iter().map(|r| Self::new(r.lat, r.lon, r.rx_gain_db, orbit_lon_deg)).collect())
    }
}

/// Beam gain sampled on a regular lat/lon grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPattern {
    lats: Vec<f64>,
    lons: Vec<f64>,
    /// One `lats × lons` matrix of linear gains per beam.
    gains: Vec<DMatrix<f64>>,
}

impl GridPattern {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&lats) || !increasing(&lons) {
            return Err(Error::Config("grid axes need >= 2 strictly increasing points".into()));
        }
        if gains.is_empty()
            || gains.iter().any(|g| g.shape() != (lats.len(), lons.len()) || g.iter().any(|&x| !(x >= 0.0)))
        {
            return Err(Error::Config("grid gains must be non-negative and match the axes".into()));
        }
        Ok(Self { lats, lons, gains })
    }

    /// Reads `beam,lat,lon,gain_db` rows covering a full grid for every beam.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            beam: usize,
            lat: f64,
            lon: f64,
            gain_db: f64,
        }
        let rows: Vec<Row> = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let axis = |f: fn(&Row) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (lats, lons) = (axis(|r| r.lat), axis(|r| r.lon));
        let n_beams = rows.iter().map(|r| r.beam + 1).max().unwrap_or(0);
        let mut gains = vec![DMatrix::from_element(lats.len(), lons.len(), f64::NAN); n_beams];
        for r in &rows {
            let i = lats.partition_point(|&x| x < r.lat);
            let j = lons.partition_point(|&x| x < r.lon);
            gains[r.beam][(i, j)] = db_to_linear(r.gain_db);
        }
        if gains.iter().any(|g| g.iter().any(|x| x.is_nan())) {
            return Err(Error::Config("grid pattern has missing points".into()));
        }
        Self::new(lats, lons, gains)
    }

    pub fn n_beams(&self) -> usize {
        self.gains.len()
    }

    fn interpolate(&self, beam: usize, lat: f64, lon: f64) -> Result<f64> {
        let locate = |axis: &[f64], x: f64| -> Option<(usize, f64)> {
            if x < axis[0] || x > axis[axis.len() - 1] {
                return None;
            }
            let i = axis.partition_point(|&a| a <= x).clamp(1, axis.len() - 1) - 1;
            Some((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
        };
        let (Some((i, fy)), Some((j, fx))) = (locate(&self.lats, lat), locate(&self.lons, lon)) else {
            return Err(Error::Contract(format!("location ({lat}, {lon}) lies outside the pattern grid")));
        };
        let g = &self.gains[beam];
        let top = g[(i, j)] * (1.0 - fx) + g[(i, j + 1)] * fx;
        let bottom = g[(i + 1, j)] * (1.0 - fx) + g[(i + 1, j + 1)] * fx;
        Ok(top * (1.0 - fy) + bottom * fy)
    }
}

/// Transmit beam radiation pattern.
#[derive(Debug, Clone, PartialEq)]
pub enum BeamPattern {
    /// `peak_gain · exp(-rolloff · angle²)`, angle in degrees from boresight.
    Parametric {
        boresights: Vec<(f64, f64)>,
        peak_gain: f64,
        rolloff: f64,
    },
    Grid(GridPattern),
}

impl BeamPattern {
    pub fn n_beams(&self) -> usize {
        match self {
            BeamPattern::Parametric { boresights, .. } => boresights.len(),
            BeamPattern::Grid(g) => g.n_beams(),
        }
    }

    /// Largest gain attainable anywhere.
    pub fn peak(&self) -> f64 {
        match self {
            BeamPattern::Parametric { peak_gain, .. } => *peak_gain,
            BeamPattern::Grid(g) => g.gains.iter().flat_map(|m| m.iter().copied()).fold(0.0, f64::max),
        }
    }
}

/// Linear gain of beam `n` towards `(lat, lon)`.
pub fn beam_gain(pattern: &BeamPattern, n: usize, lat: f64, lon: f64) -> Result<f64> {
    match pattern {
        BeamPattern::Parametric { boresights, peak_gain, rolloff } => {
            let angle = great_circle_deg(boresights[n], (lat, lon));
            Ok(peak_gain * (-rolloff * angle * angle).exp())
        }
        BeamPattern::Grid(g) => g.interpolate(n, lat, lon),
    }
}

/// Random-walk parameters. Phase deviations are in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkParams {
    pub walk_factor: f64,
    pub geo_phase_std: f64,
    pub user_phase_std: f64,
    pub fading_variance: f64,
    pub initial_phase_std: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            walk_factor: 0.05,
            geo_phase_std: 1f64.to_radians(),
            user_phase_std: 1f64.to_radians(),
            fading_variance: 1.0,
            initial_phase_std: PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkState {
    pub geo_phase: f64,
    pub user_phase: Vec<f64>,
    /// Non-line-of-sight fading, `N × M`.
    pub fading: CMat,
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

impl RandomWalkState {
    /// Zero-mean initial phases and unit-variance complex Gaussian fading.
    pub fn initial<R: Rng + ?Sized>(n_beams: usize, n_users: usize, params: &WalkParams, rng: &mut R) -> Self {
        let geo_phase = params.initial_phase_std * rng.sample::<f64, _>(StandardNormal);
        let user_phase = (0..n_users)
            .map(|_| params.initial_phase_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut fading = CMat::zeros(n_beams, n_users);
        for m in 0..n_users {
            for n in 0..n_beams {
                fading[(n, m)] = complex_gaussian(rng, 1.0);
            }
        }
        Self { geo_phase, user_phase, fading }
    }
}

/// One step of `x ← (1-ζ)x + ζ·innovation` for every walk component.
///
/// Innovations are drawn in a fixed order: satellite phase, user phases,
/// then fading with users outer and beams inner.
pub fn step_random_walk<R: Rng + ?Sized>(state: &RandomWalkState, params: &WalkParams, rng: &mut R) -> RandomWalkState {
    let z = params.walk_factor;
    let geo = params.geo_phase_std * rng.sample::<f64, _>(StandardNormal);
    let geo_phase = (1.0 - z) * state.geo_phase + z * geo;
    let user_phase = state
        .user_phase
        .iter()
        .map(|&p| (1.0 - z) * p + z * params.user_phase_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut fading = state.fading.clone();
    for m in 0..fading.ncols() {
        for n in 0..fading.nrows() {
            let xi = complex_gaussian(rng, params.fading_variance);
            fading[(n, m)] = state.fading[(n, m)] * (1.0 - z) + xi * z;
        }
    }
    RandomWalkState { geo_phase, user_phase, fading }
}

/// Everything needed to turn a walk state into channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub users: Vec<UserGeometry>,
    pub pattern: BeamPattern,
    pub walk: WalkParams,
    /// Rician factor, linear.
    pub rician_factor: f64,
    pub wavelength: f64,
    pub convention: PathLossConvention,
}

impl ChannelModel {
    /// Per-user amplitude `sqrt(G · attenuation)`.
    pub fn amplitude(&self, m: usize) -> f64 {
        let u = &self.users[m];
        let loss = path_loss(u.slant_distance, self.wavelength);
        let att = match self.convention {
            PathLossConvention::Multiply => loss,
            PathLossConvention::Divide => loss.recip(),
        };
        (u.rx_gain * att).sqrt()
    }

    /// Line-of-sight pattern amplitudes `sqrt(gain)`, `N × M`.
    pub fn pattern_amplitudes(&self) -> Result<DMatrix<f64>> {
        let n_beams = self.pattern.n_beams();
        let mut b = DMatrix::zeros(n_beams, self.users.len());
        for (m, u) in self.users.iter().enumerate() {
            for n in 0..n_beams {
                b[(n, m)] = beam_gain(&self.pattern, n, u.lat, u.lon)?.sqrt();
            }
        }
        Ok(b)
    }
}

/// Channel matrix of one slot for a given walk state.
pub fn sample_channel_slot(model: &ChannelModel, state: &RandomWalkState) -> Result<CMat> {
    let b = model.pattern_amplitudes()?;
    Ok(compose_slot(model, &b, state))
}

fn compose_slot(model: &ChannelModel, b: &DMatrix<f64>, state: &RandomWalkState) -> CMat {
    let l = model.rician_factor;
    let (los, nlos) = ((l / (l + 1.0)).sqrt(), (1.0 / (l + 1.0)).sqrt());
    let mut h = CMat::zeros(b.nrows(), b.ncols());
    for (m, u) in model.users.iter().enumerate() {
        // Reduce the propagation phase modulo one wavelength before scaling.
        let path_phase = 2.0 * PI * (u.slant_distance / model.wavelength).fract();
        let phase = Complex64::from_polar(model.amplitude(m), -(path_phase + state.geo_phase + state.user_phase[m]));
        for n in 0..b.nrows() {
            h[(n, m)] = phase * (state.fading[(n, m)] * nlos + los * b[(n, m)]);
        }
    }
    h
}

/// Channel tensor for one seeded realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// One `N × M` matrix per slot.
    pub h: Vec<CMat>,
    pub seed: u64,
    pub rician_factor: f64,
    pub wavelength: f64,
}

impl ChannelRealization {
    /// Writes `t,n,m,re,im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_tensor_csv(&self.h, out)
    }

    /// Reads `t,n,m,re,im` rows into a tensor of the given shape.
    pub fn read_tensor_csv<R: std::io::Read>(
        reader: R,
        n_beams: usize,
        n_users: usize,
        n_slots: usize,
    ) -> Result<Vec<CMat>> {
        read_tensor_csv(reader, n_beams, n_users, n_slots)
    }
}

pub(crate) fn write_tensor_csv<W: Write>(slots: &[CMat], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "n", "m", "re", "im"])?;
    for (t, mat) in slots.iter().enumerate() {
        for m in 0..mat.ncols() {
            for n in 0..mat.nrows() {
                let v = mat[(n, m)];
                w.write_record(&[t.to_string(), n.to_string(), m.to_string(), format!("{:e}", v.re), format!("{:e}", v.im)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_tensor_csv<R: std::io::Read>(
    reader: R,
    n_beams: usize,
    n_users: usize,
    n_slots: usize,
) -> Result<Vec<CMat>> {
    #[derive(Deserialize)]
    struct Row {
        t: usize,
        n: usize,
        m: usize,
        re: f64,
        im: f64,
    }
    let mut slots = vec![CMat::zeros(n_beams, n_users); n_slots];
    for rec in csv::Reader::from_reader(reader).deserialize() {
        let r: Row = rec?;
        if r.t >= n_slots || r.n >= n_beams || r.m >= n_users {
            return Err(Error::Contract(format!("tensor entry ({}, {}, {}) out of range", r.t, r.n, r.m)));
        }
        slots[r.t][(r.n, r.m)] = Complex64::new(r.re, r.im);
    }
    Ok(slots)
}

/// Reads a tensor CSV from disk.
pub fn load_tensor_csv(path: impl AsRef<Path>, n_beams: usize, n_users: usize, n_slots: usize) -> Result<Vec<CMat>> {
    read_tensor_csv(std::fs::File::open(path)?, n_beams, n_users, n_slots)
}

/// Generates all slots of one realization from `seed`.
pub fn generate_realization(scenario: &Scenario, model: &ChannelModel, seed: u64) -> Result<ChannelRealization> {
    if model.users.len() != scenario.n_users || model.pattern.n_beams() != scenario.n_beams {
        return Err(Error::Config(format!(
            "channel model has {} beams and {} users, scenario expects {} and {}",
            model.pattern.n_beams(),
            model.users.len(),
            scenario.n_beams,
            scenario.n_users
        )));
    }
    let b = model.pattern_amplitudes()?;
    let mut rng = stream_rng(seed, Stream::Channel);
    let mut state = RandomWalkState::initial(scenario.n_beams, scenario.n_users, &model.walk, &mut rng);
    let mut h = Vec::with_capacity(scenario.n_slots);
    for t in 0..scenario.n_slots {
        if t > 0 {
            state = step_random_walk(&state, &model.walk, &mut rng);
        }
        h.push(compose_slot(model, &b, &state));
    }
    Ok(ChannelRealization { h, seed, rician_factor: model.rician_factor, wavelength: model.wavelength })
}
