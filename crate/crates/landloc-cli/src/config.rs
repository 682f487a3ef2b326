//! Flat key-value run configuration.
//!
//! Files hold `section.key = value` lines (`#` comments allowed); every
//! key can also be set on the command line with `--set section.key=value`.
//! Unknown keys are rejected. Presets fill in architecture and training
//! defaults first; explicit keys override them.

use landloc::infer::EkfConfig;
use landloc::net::NetConfig;
use landloc::sensors::SensorConfig;
use landloc::train::{MeasurementMode, OffsetRange, TrainConfig};
use landloc::world::{MapParams, TrajectoryParams};
use nalgebra::{Matrix2, Matrix3, Matrix5, Vector2, Vector3, Vector5};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub preset: String,
    pub net: NetConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub offset_sigma_xy: f64,
    pub offset_sigma_phi_deg: f64,
    pub measurement_mode: MeasurementMode,
    pub checkpoint_every: u64,
    pub sensor: SensorConfig,
    pub ekf_q_xy: f64,
    pub ekf_q_phi_deg: f64,
    pub ekf_q_v: f64,
    pub ekf_q_omega_deg: f64,
    pub ekf_r_net_xy: f64,
    pub ekf_r_net_phi_deg: f64,
    pub world_duration: f64,
    pub world_dt: f64,
    pub world_speed_min: f64,
    pub world_speed_max: f64,
    pub world_turn_min: f64,
    pub world_turn_max: f64,
    pub world_segment_len: f64,
    pub world_density_per_km: f64,
    pub world_lateral_spread: f64,
    pub world_cell_size: f64,
    pub eval_trials: usize,
    pub sweep_trials: usize,
    pub sweep_grid: Option<Vec<f64>>,
    pub mcl_particles: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            preset: "desk-scale".into(),
            net: NetConfig::desk(),
            batch_size: 64,
            learning_rate: 1e-4,
            steps: 20_000,
            offset_sigma_xy: 2.0,
            offset_sigma_phi_deg: 10.0,
            measurement_mode: MeasurementMode::MapDerived,
            checkpoint_every: 0,
            sensor: SensorConfig::default(),
            ekf_q_xy: 0.05,
            ekf_q_phi_deg: 0.5,
            ekf_q_v: 0.5,
            ekf_q_omega_deg: 2.0,
            ekf_r_net_xy: 0.25,
            ekf_r_net_phi_deg: 1.0,
            world_duration: 500.0,
            world_dt: 0.1,
            world_speed_min: 8.0,
            world_speed_max: 12.0,
            world_turn_min: -0.15,
            world_turn_max: 0.15,
            world_segment_len: 5.0,
            world_density_per_km: 772.0,
            world_lateral_spread: 30.0,
            world_cell_size: 25.0,
            eval_trials: 5000,
            sweep_trials: 500,
            sweep_grid: None,
            mcl_particles: 1000,
        }
    }
}

impl RunConfig {
    /// Parse a config file, then apply `--set` overrides in order.
    pub fn load(path: Option<&std::path::Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut pending: Vec<(String, String)> = Vec::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "config {} line {}: expected 'section.key = value'",
                        path.display(),
                        i + 1
                    ))
                })?;
                pending.push((key.trim().to_string(), value.trim().to_string()));
            }
        }
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set needs key=value, got '{s}'")))?;
            pending.push((key.trim().to_string(), value.trim().to_string()));
        }
        // presets first so explicit keys win regardless of order
        for (k, v) in pending.iter().filter(|(k, _)| k == "preset") {
            cfg.apply(k, v)?;
        }
        for (k, v) in pending.iter().filter(|(k, _)| k != "preset") {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let parse_f64 = |v: &str| -> Result<f64, CliError> {
            v.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("key '{key}': expected a number, got '{v}'")))
        };
        let parse_u64 = |v: &str| -> Result<u64, CliError> {
            v.parse::<u64>()
                .map_err(|_| CliError::Usage(format!("key '{key}': expected an integer, got '{v}'")))
        };
        let parse_usize = |v: &str| -> Result<usize, CliError> {
            v.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("key '{key}': expected an integer, got '{v}'")))
        };
        let parse_widths = |v: &str| -> Result<Vec<usize>, CliError> {
            v.split(',')
                .map(|w| {
                    w.trim().parse::<usize>().map_err(|_| {
                        CliError::Usage(format!("key '{key}': bad width list '{v}'"))
                    })
                })
                .collect()
        };
        match key {
            "preset" => {
                self.preset = value.to_string();
                match value {
                    "desk-scale" => {
                        self.net = NetConfig::desk();
                        self.batch_size = 64;
                        self.learning_rate = 1e-4;
                    }
                    "paper-scale" => {
                        self.net = NetConfig::paper();
                        self.batch_size = 500;
                        self.learning_rate = 1e-5;
                    }
                    "tiny" => {
                        self.net = NetConfig::tiny();
                        self.batch_size = 16;
                        self.learning_rate = 1e-3;
                    }
                    _ => {
                        return Err(CliError::Usage(format!(
                            "unknown preset '{value}' (expected desk-scale, paper-scale or tiny)"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_u64(value)?,
            "threads" => self.threads = parse_usize(value)?,
            "net.dropout" => self.net.dropout_rate = parse_f64(value)?,
            "net.meas_widths" => self.net.meas_widths = parse_widths(value)?,
            "net.map_widths" => self.net.map_widths = parse_widths(value)?,
            "net.head_widths" => self.net.head_widths = parse_widths(value)?,
            "train.batch_size" => self.batch_size = parse_usize(value)?,
            "train.learning_rate" => self.learning_rate = parse_f64(value)?,
            "train.steps" => self.steps = parse_u64(value)?,
            "train.offset_sigma_xy" => self.offset_sigma_xy = parse_f64(value)?,
            "train.offset_sigma_phi_deg" => self.offset_sigma_phi_deg = parse_f64(value)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_u64(value)?,
            "train.measurement_mode" => {
                self.measurement_mode = match value {
                    "map_derived" => MeasurementMode::MapDerived,
                    "sensor" => MeasurementMode::Sensor,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "train.measurement_mode must be map_derived or sensor, got '{value}'"
                        )))
                    }
                }
            }
            "sensor.fov_radius" => self.sensor.fov_radius = parse_f64(value)?,
            "sensor.lambda_clutter" => self.sensor.lambda_clutter = parse_f64(value)?,
            "sensor.lambda_miss" => self.sensor.lambda_miss = parse_f64(value)?,
            "sensor.sigma_syn" => self.sensor.sigma_syn = parse_f64(value)?,
            "sensor.gps_sigma_xy" => self.sensor.gps_sigma_xy = parse_f64(value)?,
            "sensor.gps_sigma_phi_deg" => {
                self.sensor.gps_sigma_phi = parse_f64(value)?.to_radians()
            }
            "ekf.q_xy" => self.ekf_q_xy = parse_f64(value)?,
            "ekf.q_phi_deg" => self.ekf_q_phi_deg = parse_f64(value)?,
            "ekf.q_v" => self.ekf_q_v = parse_f64(value)?,
            "ekf.q_omega_deg" => self.ekf_q_omega_deg = parse_f64(value)?,
            "ekf.r_net_xy" => self.ekf_r_net_xy = parse_f64(value)?,
            "ekf.r_net_phi_deg" => self.ekf_r_net_phi_deg = parse_f64(value)?,
            "world.duration" => self.world_duration = parse_f64(value)?,
            "world.dt" => self.world_dt = parse_f64(value)?,
            "world.speed_min" => self.world_speed_min = parse_f64(value)?,
            "world.speed_max" => self.world_speed_max = parse_f64(value)?,
            "world.turn_min" => self.world_turn_min = parse_f64(value)?,
            "world.turn_max" => self.world_turn_max = parse_f64(value)?,
            "world.segment_len" => self.world_segment_len = parse_f64(value)?,
            "world.density_per_km" => self.world_density_per_km = parse_f64(value)?,
            "world.lateral_spread" => self.world_lateral_spread = parse_f64(value)?,
            "world.cell_size" => self.world_cell_size = parse_f64(value)?,
            "eval.trials" => self.eval_trials = parse_usize(value)?,
            "sweep.trials" => self.sweep_trials = parse_usize(value)?,
            "sweep.grid" => {
                let grid: Result<Vec<f64>, _> =
                    value.split(',').map(|t| t.trim().parse::<f64>()).collect();
                self.sweep_grid = Some(grid.map_err(|_| {
                    CliError::Usage(format!("sweep.grid: bad number list '{value}'"))
                })?);
            }
            "mcl.particles" => self.mcl_particles = parse_usize(value)?,
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn offset_range(&self) -> OffsetRange {
        OffsetRange {
            sigma_x: self.offset_sigma_xy,
            sigma_y: self.offset_sigma_xy,
            sigma_phi: self.offset_sigma_phi_deg.to_radians(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            steps: self.steps,
            offset_range: self.offset_range(),
            seed: self.seed,
            measurement_mode: self.measurement_mode,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::default()
        }
    }

    pub fn trajectory_params(&self) -> TrajectoryParams {
        TrajectoryParams {
            duration: self.world_duration,
            dt: self.world_dt,
            speed_range: (self.world_speed_min, self.world_speed_max),
            turn_rate_range: (self.world_turn_min, self.world_turn_max),
            segment_len: self.world_segment_len,
        }
    }

    pub fn map_params(&self) -> MapParams {
        MapParams {
            density_per_km: self.world_density_per_km,
            lateral_spread: self.world_lateral_spread,
            cell_size: self.world_cell_size,
        }
    }

    pub fn ekf_config(&self) -> EkfConfig {
        let d = |deg: f64| deg.to_radians();
        EkfConfig {
            q: Matrix5::from_diagonal(&Vector5::new(
                self.ekf_q_xy * self.ekf_q_xy,
                self.ekf_q_xy * self.ekf_q_xy,
                d(self.ekf_q_phi_deg).powi(2),
                self.ekf_q_v * self.ekf_q_v,
                d(self.ekf_q_omega_deg).powi(2),
            )),
            r_net: Matrix3::from_diagonal(&Vector3::new(
                self.ekf_r_net_xy * self.ekf_r_net_xy,
                self.ekf_r_net_xy * self.ekf_r_net_xy,
                d(self.ekf_r_net_phi_deg).powi(2),
            )),
            r_gps: Matrix2::from_diagonal(&Vector2::new(
                self.sensor.gps_sigma_xy * self.sensor.gps_sigma_xy,
                self.sensor.gps_sigma_xy * self.sensor.gps_sigma_xy,
            )),
            ..EkfConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.net.feature_dim(), 128);
        assert_eq!(cfg.batch_size, 64);

        let cfg = RunConfig::load(
            None,
            &[
                "preset=paper-scale".to_string(),
                "train.steps=5".to_string(),
                "sensor.lambda_clutter=7.5".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.net.feature_dim(), 1024);
        assert_eq!(cfg.batch_size, 500);
        assert_eq!(cfg.steps, 5);
        assert_eq!(cfg.sensor.lambda_clutter, 7.5);
    }

    #[test]
    fn preset_applies_before_explicit_keys() {
        // explicit key first in the list still beats the preset default
        let cfg = RunConfig::load(
            None,
            &["train.batch_size=7".to_string(), "preset=paper-scale".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.batch_size, 7);
        assert_eq!(cfg.net.feature_dim(), 1024);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::load(None, &["nope.key=1".to_string()]).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\npreset = desk-scale\ntrain.steps = 12   # trailing comment\nsweep.grid = 0, 10, 20\n",
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.sweep_grid, Some(vec![0.0, 10.0, 20.0]));

        std::fs::write(&path, "just nonsense\n").unwrap();
        assert!(matches!(
            RunConfig::load(Some(&path), &[]),
            Err(CliError::Usage(_))
        ));
    }
}
