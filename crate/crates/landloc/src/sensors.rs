//! Per-time-step measurement simulation: landmark visibility, missed
//! detections, clutter, coordinate noise, and noisy GPS readings.
//!
//! Impairments are applied in the order visibility → miss → clutter →
//! noise, where the noise perturbs only the real detections (clutter
//! positions are already uniform on the field-of-view disk). Each
//! impairment draws from its own random stream, so changing one rate
//! never perturbs the draws of another.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::geometry::{Point2, Pose};
use crate::rng::{substream, StreamDomain};
use crate::world::{LandmarkMap, WorldError};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("poisson rate must be finite and >= 0, got {0}")]
    BadRate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Measurement-simulation parameters. Rates are expected event counts per
/// time-step; sigmas are noise bounds/deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    /// Field-of-view radius (isotropic disk), meters.
    pub fov_radius: f64,
    /// Expected clutter points per step.
    pub lambda_clutter: f64,
    /// Expected missed detections per step.
    pub lambda_miss: f64,
    /// Half-width of the uniform per-coordinate measurement noise, meters.
    pub sigma_syn: f64,
    /// GPS position noise (Gaussian std per axis), meters.
    pub gps_sigma_xy: f64,
    /// GPS heading noise (Gaussian std), radians.
    pub gps_sigma_phi: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov_radius: 50.0,
            lambda_clutter: 0.0,
            lambda_miss: 0.0,
            sigma_syn: 0.0,
            gps_sigma_xy: 2.0,
            gps_sigma_phi: 10.0_f64.to_radians(),
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.fov_radius > 0.0) {
            return Err(SensorError::InvalidParam(format!(
                "fov_radius must be positive, got {}",
                self.fov_radius
            )));
        }
        for (name, v) in [
            ("lambda_clutter", self.lambda_clutter),
            ("lambda_miss", self.lambda_miss),
            ("sigma_syn", self.sigma_syn),
            ("gps_sigma_xy", self.gps_sigma_xy),
            ("gps_sigma_phi", self.gps_sigma_phi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SensorError::InvalidParam(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Vehicle-frame measurements for one time step. The point order carries
/// no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub points: Vec<Point2>,
    pub t: f64,
}

/// A noisy GPS pose reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsReading {
    pub pose: Pose,
    pub t: f64,
}

/// Per-step random streams for the three measurement impairments.
pub struct SensorRngs {
    pub miss: rand_chacha::ChaCha8Rng,
    pub clutter: rand_chacha::ChaCha8Rng,
    pub noise: rand_chacha::ChaCha8Rng,
}

impl SensorRngs {
    pub fn for_step(seed: u64, step: u64) -> Self {
        Self {
            miss: substream(seed, StreamDomain::SensorMiss, step),
            clutter: substream(seed, StreamDomain::SensorClutter, step),
            noise: substream(seed, StreamDomain::SensorNoise, step),
        }
    }
}

/// Draw k ~ Poisson(λ). λ = 0 always yields 0.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64, SensorError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SensorError::BadRate(lambda));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|_| SensorError::BadRate(lambda))?;
    Ok(dist.sample(rng) as u64)
}

/// Map landmarks within the field of view, transformed to the vehicle
/// frame of `true_pose`. Ascending-id order.
pub fn visible_landmarks(
    map: &LandmarkMap,
    true_pose: &Pose,
    fov_radius: f64,
) -> Result<Vec<Point2>, SensorError> {
    let hits = map.query_radius(true_pose.position(), fov_radius)?;
    let world_to_vehicle = true_pose.to_transform().invert();
    Ok(hits
        .iter()
        .map(|lm| world_to_vehicle.apply(&lm.position))
        .collect())
}

/// Remove k ~ Poisson(λ_miss) distinct points uniformly at random; if k
/// exceeds the point count the result is empty. Survivors keep their
/// relative order.
pub fn apply_miss<R: Rng + ?Sized>(
    points: Vec<Point2>,
    lambda_miss: f64,
    rng: &mut R,
) -> Result<Vec<Point2>, SensorError> {
    let k = sample_poisson(lambda_miss, rng)? as usize;
    let n = points.len();
    if k == 0 {
        return Ok(points);
    }
    if k >= n {
        return Ok(Vec::new());
    }
    // partial Fisher-Yates: pick k distinct indices to delete
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut drop = vec![false; n];
    for &i in &idx[..k] {
        drop[i] = true;
    }
    Ok(points
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !drop[*i])
        .map(|(_, p)| p)
        .collect())
}

/// Append k ~ Poisson(λ_clutter) points drawn uniformly on the disk of
/// radius `fov_radius` in the vehicle frame.
pub fn apply_clutter<R: Rng + ?Sized>(
    mut points: Vec<Point2>,
    lambda_clutter: f64,
    fov_radius: f64,
    rng: &mut R,
) -> Result<Vec<Point2>, SensorError> {
    if !(fov_radius > 0.0) {
        return Err(SensorError::InvalidParam(format!(
            "fov_radius must be positive, got {fov_radius}"
        )));
    }
    let k = sample_poisson(lambda_clutter, rng)?;
    points.reserve(k as usize);
    for _ in 0..k {
        let r = fov_radius * rng.random_range(0.0..1.0f64).sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        points.push(Point2::new(r * theta.cos(), r * theta.sin()));
    }
    Ok(points)
}

/// Perturb each coordinate of each point by Uniform(-σ, σ).
pub fn apply_noise<R: Rng + ?Sized>(
    mut points: Vec<Point2>,
    sigma_syn: f64,
    rng: &mut R,
) -> Result<Vec<Point2>, SensorError> {
    if !(sigma_syn.is_finite() && sigma_syn >= 0.0) {
        return Err(SensorError::InvalidParam(format!(
            "sigma_syn must be finite and >= 0, got {sigma_syn}"
        )));
    }
    if sigma_syn == 0.0 {
        return Ok(points);
    }
    for p in &mut points {
        p.x += rng.random_range(-sigma_syn..sigma_syn);
        p.y += rng.random_range(-sigma_syn..sigma_syn);
    }
    Ok(points)
}

/// Full measurement simulation for one step: visibility → miss → clutter
/// → noise, with noise applied to the real detections only.
pub fn simulate_measurements(
    map: &LandmarkMap,
    true_pose: &Pose,
    config: &SensorConfig,
    rngs: &mut SensorRngs,
    t: f64,
) -> Result<MeasurementSet, SensorError> {
    config.validate()?;
    let visible = visible_landmarks(map, true_pose, config.fov_radius)?;
    let survivors = apply_miss(visible, config.lambda_miss, &mut rngs.miss)?;
    let n_real = survivors.len();
    let mut points = apply_clutter(survivors, config.lambda_clutter, config.fov_radius, &mut rngs.clutter)?;
    let noised = apply_noise(points[..n_real].to_vec(), config.sigma_syn, &mut rngs.noise)?;
    points[..n_real].copy_from_slice(&noised);
    Ok(MeasurementSet { points, t })
}

/// Gaussian-perturbed GPS reading of the true pose.
pub fn simulate_gps<R: Rng + ?Sized>(
    true_pose: &Pose,
    gps_sigma_xy: f64,
    gps_sigma_phi: f64,
    rng: &mut R,
    t: f64,
) -> Result<GpsReading, SensorError> {
    for (name, v) in [("gps_sigma_xy", gps_sigma_xy), ("gps_sigma_phi", gps_sigma_phi)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(SensorError::InvalidParam(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    let mut draw = |sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma
        }
    };
    let pose = Pose::new(
        true_pose.x() + draw(gps_sigma_xy),
        true_pose.y() + draw(gps_sigma_xy),
        true_pose.phi() + draw(gps_sigma_phi),
    );
    Ok(GpsReading { pose, t })
}
