//! Evaluation: per-axis RMSE metrics, the four measurement-impairment
//! sweeps, inference timing benchmarks, and CSV/SVG report emission.
//!
//! Sweeps evaluate the synthetic-offset task: measurements are the map
//! landmarks in the vehicle's field of view, impaired according to the
//! sweep variable, while the map input is anchored at an offset pose
//! drawn from the training range.

use rand::Rng;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose, PoseOffset};
use crate::infer::{InferError, MclConfig, OffsetPredictor, ParticleSet};
use crate::net::{Matrix2D, NetError};
use crate::rng::{substream, StreamDomain};
use crate::sensors::{
    apply_clutter, apply_miss, apply_noise, visible_landmarks, MeasurementSet, SensorError,
    SensorRngs,
};
use crate::train::{build_sample, OffsetRange, sample_offset, TrainError};
use crate::world::{LandmarkMap, Trajectory, WorldError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate/truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("sweep could not draw a valid sample after {0} attempts")]
    Exhausted(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Per-axis root-mean-square errors. Heading is reported in degrees;
/// everything internal stays radians until this boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseReport {
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_phi_deg: f64,
    pub n_samples: usize,
    pub mean_inference_ms: f64,
}

impl RmseReport {
    /// RMS of the two positional axes; the scalar used for trend checks.
    pub fn positional(&self) -> f64 {
        ((self.rmse_x * self.rmse_x + self.rmse_y * self.rmse_y) / 2.0).sqrt()
    }
}

fn rmse_from_residuals(res: &[(f64, f64, f64)], mean_inference_ms: f64) -> RmseReport {
    let n = res.len() as f64;
    let (mut sx, mut sy, mut sp) = (0.0, 0.0, 0.0);
    for (dx, dy, dphi) in res {
        sx += dx * dx;
        sy += dy * dy;
        sp += dphi * dphi;
    }
    RmseReport {
        rmse_x: (sx / n).sqrt(),
        rmse_y: (sy / n).sqrt(),
        rmse_phi_deg: (sp / n).sqrt().to_degrees(),
        n_samples: res.len(),
        mean_inference_ms,
    }
}

/// Per-axis RMSE between pose estimates and ground truth. Heading
/// residuals are wrapped before squaring.
pub fn rmse(estimates: &[Pose], truths: &[Pose]) -> Result<RmseReport, EvalError> {
    if estimates.len() != truths.len() {
        return Err(EvalError::LengthMismatch(estimates.len(), truths.len()));
    }
    if estimates.is_empty() {
        return Err(EvalError::Empty("rmse over zero poses"));
    }
    let res: Vec<(f64, f64, f64)> = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e.x() - t.x(), e.y() - t.y(), wrap_angle(e.phi() - t.phi())))
        .collect();
    Ok(rmse_from_residuals(&res, 0.0))
}

/// Per-axis RMSE between predicted and target offsets.
pub fn rmse_offsets(preds: &[PoseOffset], targets: &[PoseOffset]) -> Result<RmseReport, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty("rmse over zero offsets"));
    }
    let res: Vec<(f64, f64, f64)> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p.dx - t.dx, p.dy - t.dy, wrap_angle(p.dphi - t.dphi)))
        .collect();
    Ok(rmse_from_residuals(&res, 0.0))
}

/// The measurement impairment being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Clutter,
    Miss,
    Noise,
    /// All three scale with the iteration index: λ_clutter = λ_miss = i,
    /// σ_syn = 0.027·i.
    Combined,
}

impl SweepVariable {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clutter" => Some(Self::Clutter),
            "miss" => Some(Self::Miss),
            "noise" => Some(Self::Noise),
            "combined" => Some(Self::Combined),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Clutter => "clutter",
            Self::Miss => "miss",
            Self::Noise => "noise",
            Self::Combined => "combined",
        }
    }

    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            Self::Clutter => (0..=8).map(|i| (i * 10) as f64).collect(),
            Self::Miss => (0..=3).map(|i| (i * 10) as f64).collect(),
            Self::Noise => (0..=3).map(|i| i as f64 * 0.5).collect(),
            Self::Combined => (0..=10).map(|i| (i * 2) as f64).collect(),
        }
    }

    /// Impairment rates for one grid value.
    pub fn impairment(&self, value: f64) -> (f64, f64, f64) {
        match self {
            Self::Clutter => (value, 0.0, 0.0),
            Self::Miss => (0.0, value, 0.0),
            Self::Noise => (0.0, 0.0, value),
            Self::Combined => (value, value, 0.027 * value),
        }
    }
}

/// A sweep definition: variable, grid, trials per point, and a seed that
/// fully determines all randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, seed: u64) -> Self {
        Self {
            variable,
            grid: variable.default_grid(),
            trials: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.grid.is_empty() {
            return Err(EvalError::Empty("sweep grid"));
        }
        if self.trials == 0 {
            return Err(EvalError::Empty("sweep trials"));
        }
        Ok(())
    }
}

/// One evaluated grid point, with standard errors of the per-axis RMSEs
/// (delta method over the squared-error variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub report: RmseReport,
    pub se_x: f64,
    pub se_y: f64,
    pub se_phi_deg: f64,
}

const MAX_TRIAL_ATTEMPTS: u64 = 100;

/// Draw one synthetic-offset evaluation sample: map-derived measurements
/// at a random trajectory pose, impaired, against the map anchored at an
/// offset pose. Returns (prediction, target).
#[allow(clippy::too_many_arguments)]
fn eval_trial(
    predictor: &dyn OffsetPredictor,
    map: &LandmarkMap,
    traj: &Trajectory,
    offset_range: &OffsetRange,
    fov_radius: f64,
    rates: (f64, f64, f64),
    seed: u64,
    trial_index: u64,
) -> Result<(PoseOffset, PoseOffset, f64), EvalError> {
    let (lambda_clutter, lambda_miss, sigma_syn) = rates;
    let mut rng = substream(seed, StreamDomain::EvalTrial, trial_index);
    for _ in 0..MAX_TRIAL_ATTEMPTS {
        let idx = rng.random_range(0..traj.len());
        let point = traj.points()[idx];
        let visible = visible_landmarks(map, &point.pose, fov_radius)?;

        // impair with per-impairment streams so sweep variables stay
        // independent of each other
        let stream_seed: u64 = rng.random();
        let mut rngs = SensorRngs::for_step(stream_seed, 0);
        let survivors = apply_miss(visible, lambda_miss, &mut rngs.miss)?;
        let n_real = survivors.len();
        let mut points = apply_clutter(survivors, lambda_clutter, fov_radius, &mut rngs.clutter)?;
        let noised = apply_noise(points[..n_real].to_vec(), sigma_syn, &mut rngs.noise)?;
        points[..n_real].copy_from_slice(&noised);

        let meas = MeasurementSet {
            points,
            t: point.t,
        };
        let offset = sample_offset(offset_range, &mut rng);
        match build_sample(map, &point.pose, &meas, offset) {
            Ok(sample) => {
                let t0 = Instant::now();
                let pred =
                    predictor.predict_offset(&point.pose, &sample.meas, &sample.map_pts, 0)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                return Ok((pred, sample.target, ms));
            }
            Err(TrainError::SampleRejected) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(EvalError::Exhausted(MAX_TRIAL_ATTEMPTS))
}

/// Run a sweep: for each grid value, evaluate `trials` synthetic-offset
/// samples under that impairment and aggregate per-axis RMSE. Output is
/// sorted by grid value; identical specs reproduce identical tables.
pub fn run_sweep(
    spec: &SweepSpec,
    predictor: &dyn OffsetPredictor,
    map: &LandmarkMap,
    traj: &Trajectory,
    offset_range: &OffsetRange,
    fov_radius: f64,
) -> Result<Vec<SweepPoint>, EvalError> {
    spec.validate()?;
    let mut grid = spec.grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out = Vec::with_capacity(grid.len());
    for (gi, &value) in grid.iter().enumerate() {
        let rates = spec.variable.impairment(value);
        let mut residuals = Vec::with_capacity(spec.trials);
        let mut total_ms = 0.0;
        for trial in 0..spec.trials {
            let trial_index = (gi * spec.trials + trial) as u64;
            let (pred, target, ms) = eval_trial(
                predictor,
                map,
                traj,
                offset_range,
                fov_radius,
                rates,
                spec.seed,
                trial_index,
            )?;
            total_ms += ms;
            residuals.push((
                pred.dx - target.dx,
                pred.dy - target.dy,
                wrap_angle(pred.dphi - target.dphi),
            ));
        }
        let report = rmse_from_residuals(&residuals, total_ms / spec.trials as f64);
        let n = residuals.len() as f64;
        let se = |axis: fn(&(f64, f64, f64)) -> f64, rmse_val: f64| -> f64 {
            if rmse_val == 0.0 {
                return 0.0;
            }
            let mean_sq = rmse_val * rmse_val;
            let var_sq = residuals
                .iter()
                .map(|r| {
                    let v = axis(r).powi(2) - mean_sq;
                    v * v
                })
                .sum::<f64>()
                / n;
            (var_sq / n).sqrt() / (2.0 * rmse_val)
        };
        out.push(SweepPoint {
            value,
            report,
            se_x: se(|r| r.0, report.rmse_x),
            se_y: se(|r| r.1, report.rmse_y),
            se_phi_deg: se(|r| r.2, report.rmse_phi_deg.to_radians()).to_degrees(),
        });
    }
    Ok(out)
}

/// Least-squares slope of y over x.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Timing statistics for one input size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchStat {
    pub nu: usize,
    pub mu: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

const BENCH_WARMUP: usize = 10;

/// Wall-clock per network inference, including the map transform into the
/// anchor frame. Warm-up iterations are excluded.
pub fn bench_inference(
    predictor: &dyn OffsetPredictor,
    sizes: &[(usize, usize)],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchStat>, EvalError> {
    let mut rng = substream(seed, StreamDomain::EvalTrial, u64::MAX >> 8);
    let mut out = Vec::with_capacity(sizes.len());
    for &(nu, mu) in sizes {
        if nu == 0 || mu == 0 {
            return Err(EvalError::Empty("bench input size"));
        }
        let meas: Vec<Point2> = (0..nu)
            .map(|_| Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let map_world: Vec<Point2> = (0..mu)
            .map(|_| Point2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
            .collect();
        let anchor = Pose::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.2);

        let mut times = Vec::with_capacity(repetitions);
        for rep in 0..BENCH_WARMUP + repetitions {
            let t0 = Instant::now();
            let world_to_anchor = anchor.to_transform().invert();
            let map_pts: Vec<Point2> =
                map_world.iter().map(|p| world_to_anchor.apply(p)).collect();
            let meas_m = Matrix2D::from_points(&meas);
            let map_m = Matrix2D::from_points(&map_pts);
            let offset = predictor.predict_offset(&anchor, &meas_m, &map_m, 0)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(offset);
            if rep >= BENCH_WARMUP {
                times.push(dt);
            }
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
        let p95_ms = times[((times.len() as f64 * 0.95) as usize).min(times.len() - 1)];
        out.push(BenchStat {
            nu,
            mu,
            mean_ms,
            p95_ms,
        });
    }
    Ok(out)
}

/// Wall-clock per MCL baseline step on the same measurement set.
pub fn bench_mcl_step(
    map: &LandmarkMap,
    truth: &Pose,
    meas_points: &[Point2],
    mcl_cfg: &MclConfig,
    repetitions: usize,
    seed: u64,
) -> Result<BenchStat, EvalError> {
    let mut rng = substream(seed, StreamDomain::Mcl, 0);
    let mut particles = ParticleSet::init(truth, 1.0, 0.05, mcl_cfg.n_particles, &mut rng)?;
    let mut times = Vec::with_capacity(repetitions);
    for rep in 0..BENCH_WARMUP + repetitions {
        let t0 = Instant::now();
        let (est, _) =
            crate::infer::mcl_baseline_step(&mut particles, meas_points, map, mcl_cfg, &mut rng)?;
        let dt = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(est);
        if rep >= BENCH_WARMUP {
            times.push(dt);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BenchStat {
        nu: meas_points.len(),
        mu: mcl_cfg.n_particles,
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        p95_ms: times[((times.len() as f64 * 0.95) as usize).min(times.len() - 1)],
    })
}

/// Write a sweep table as CSV (`value,rmse_x,rmse_y,rmse_phi`).
pub fn write_sweep_csv(table: &[SweepPoint], path: &Path) -> Result<(), EvalError> {
    if table.is_empty() {
        return Err(EvalError::Empty("sweep table"));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "value,rmse_x,rmse_y,rmse_phi")?;
    for p in table {
        writeln!(
            w,
            "{},{},{},{}",
            p.value, p.report.rmse_x, p.report.rmse_y, p.report.rmse_phi_deg
        )?;
    }
    w.flush()?;
    Ok(())
}

fn svg_polyline(points: &[(f64, f64)], color: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

fn draw_panel(
    svg: &mut String,
    panel: &Panel,
    values: &[f64],
    ys: &[f64],
    y_label: &str,
    color: &str,
) {
    let x_min = values.first().copied().unwrap_or(0.0);
    let x_max = values.last().copied().unwrap_or(1.0);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_max = ys.iter().cloned().fold(f64::MIN, f64::max).max(1e-9) * 1.1;

    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>\n",
        panel.x0, panel.y0, panel.w, panel.h
    ));
    let to_px = |v: f64, y: f64| -> (f64, f64) {
        (
            panel.x0 + (v - x_min) / x_span * panel.w,
            panel.y0 + panel.h - (y / y_max).min(1.0) * panel.h,
        )
    };
    let pts: Vec<(f64, f64)> = values.iter().zip(ys).map(|(&v, &y)| to_px(v, y)).collect();
    svg.push_str(&svg_polyline(&pts, color));
    for (px, py) in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"{color}\"/>\n"
        ));
    }
    // axis ticks: min/max on both axes
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{x_min:.2}</text>\n",
        panel.x0,
        panel.y0 + panel.h + 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{x_max:.2}</text>\n",
        panel.x0 + panel.w,
        panel.y0 + panel.h + 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{y_max:.3}</text>\n",
        panel.x0 - 4.0,
        panel.y0 + 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">0</text>\n",
        panel.x0 - 4.0,
        panel.y0 + panel.h
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">{y_label}</text>\n",
        panel.x0 - 34.0,
        panel.y0 + panel.h / 2.0,
        panel.x0 - 34.0,
        panel.y0 + panel.h / 2.0
    ));
}

/// Render a sweep as a two-panel SVG (position RMSE on top, orientation
/// below). Byte-deterministic for identical input.
pub fn write_sweep_svg(
    table: &[SweepPoint],
    variable: SweepVariable,
    path: &Path,
) -> Result<(), EvalError> {
    if table.is_empty() {
        return Err(EvalError::Empty("sweep table"));
    }
    let values: Vec<f64> = table.iter().map(|p| p.value).collect();
    let pos: Vec<f64> = table.iter().map(|p| p.report.positional()).collect();
    let phi: Vec<f64> = table.iter().map(|p| p.report.rmse_phi_deg).collect();

    let mut svg = String::new();
    svg.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"560\" viewBox=\"0 0 480 560\">\n");
    svg.push_str("<rect width=\"480\" height=\"560\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"240\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">Robustness sweep: {}</text>\n",
        variable.as_str()
    ));
    draw_panel(
        &mut svg,
        &Panel { x0: 60.0, y0: 50.0, w: 380.0, h: 200.0 },
        &values,
        &pos,
        "position RMSE [m]",
        "#1f77b4",
    );
    draw_panel(
        &mut svg,
        &Panel { x0: 60.0, y0: 300.0, w: 380.0, h: 200.0 },
        &values,
        &phi,
        "orientation RMSE [deg]",
        "#d62728",
    );
    svg.push_str(&format!(
        "<text x=\"240\" y=\"540\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        variable.as_str()
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Write an RMSE report as a small one-row CSV. Timing is deliberately
/// excluded so report files are byte-reproducible; it goes to stdout.
pub fn write_rmse_report(report: &RmseReport, path: &Path) -> Result<(), EvalError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "rmse_x,rmse_y,rmse_phi_deg,n_samples")?;
    writeln!(
        w,
        "{},{},{},{}",
        report.rmse_x, report.rmse_y, report.rmse_phi_deg, report.n_samples
    )?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseOffset;
    use crate::net::{init_params, NetConfig};
    use crate::world::{generate_map, generate_trajectory, MapParams, TrajectoryParams};
    use approx::assert_relative_eq;

    struct ZeroPredictor;

    impl OffsetPredictor for ZeroPredictor {
        fn predict_offset(
            &self,
            _anchor: &Pose,
            _meas: &Matrix2D,
            _map_pts: &Matrix2D,
            _step: usize,
        ) -> Result<PoseOffset, NetError> {
            Ok(PoseOffset::zero())
        }
    }

    #[test]
    fn rmse_perfect_and_constant() {
        let poses = vec![Pose::new(1.0, 2.0, 0.3), Pose::new(-4.0, 0.5, -1.0)];
        let r = rmse(&poses, &poses).unwrap();
        assert_eq!(r.rmse_x, 0.0);
        assert_eq!(r.rmse_y, 0.0);
        assert_eq!(r.rmse_phi_deg, 0.0);

        let est: Vec<Pose> = poses.iter().map(|p| Pose::new(p.x() + 0.5, p.y(), p.phi())).collect();
        let r = rmse(&est, &poses).unwrap();
        assert_relative_eq!(r.rmse_x, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.rmse_y, 0.0);
    }

    #[test]
    fn rmse_wraps_heading_pairs() {
        let est = vec![Pose::new(0.0, 0.0, 179.0_f64.to_radians())];
        let truth = vec![Pose::new(0.0, 0.0, -179.0_f64.to_radians())];
        let r = rmse(&est, &truth).unwrap();
        assert_relative_eq!(r.rmse_phi_deg, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rmse_rejects_length_mismatch() {
        let a = vec![Pose::new(0.0, 0.0, 0.0)];
        assert!(matches!(rmse(&a, &[]), Err(EvalError::LengthMismatch(1, 0))));
    }

    #[test]
    fn rmse_permutation_covariant() {
        let est: Vec<Pose> = (0..10)
            .map(|i| Pose::new(i as f64, -(i as f64) * 0.5, 0.1 * i as f64))
            .collect();
        let truth: Vec<Pose> = (0..10)
            .map(|i| Pose::new(i as f64 + 0.3, -(i as f64) * 0.5 - 0.1, 0.1 * i as f64 + 0.02))
            .collect();
        let r1 = rmse(&est, &truth).unwrap();
        let mut pairs: Vec<(Pose, Pose)> = est.into_iter().zip(truth).collect();
        pairs.reverse();
        pairs.swap(0, 5);
        let (e2, t2): (Vec<Pose>, Vec<Pose>) = pairs.into_iter().unzip();
        let r2 = rmse(&e2, &t2).unwrap();
        assert_relative_eq!(r1.rmse_x, r2.rmse_x, epsilon = 1e-12);
        assert_relative_eq!(r1.rmse_y, r2.rmse_y, epsilon = 1e-12);
        assert_relative_eq!(r1.rmse_phi_deg, r2.rmse_phi_deg, epsilon = 1e-12);
        assert_eq!(r1.n_samples, r2.n_samples);
    }

    fn test_world() -> (LandmarkMap, Trajectory) {
        let traj = generate_trajectory(
            31,
            &TrajectoryParams {
                duration: 40.0,
                dt: 0.2,
                speed_range: (8.0, 12.0),
                turn_rate_range: (-0.1, 0.1),
                segment_len: 5.0,
            },
        )
        .unwrap();
        let map = generate_map(
            32,
            &traj,
            &MapParams {
                density_per_km: 400.0,
                ..MapParams::default()
            },
        )
        .unwrap();
        (map, traj)
    }

    #[test]
    fn sweep_zero_predictor_matches_offset_prior() {
        // a predictor that always answers zero leaves the sampled offset
        // as the full error, so RMSE per axis is the uniform prior's std
        let (map, traj) = test_world();
        let spec = SweepSpec {
            variable: SweepVariable::Clutter,
            grid: vec![0.0, 40.0],
            trials: 400,
            seed: 9,
        };
        let table = run_sweep(&spec, &ZeroPredictor, &map, &traj, &OffsetRange::wide(), 50.0).unwrap();
        assert_eq!(table.len(), 2);
        let prior = 2.0 / 3.0_f64.sqrt();
        for p in &table {
            assert!((p.report.rmse_x - prior).abs() < 0.15, "rmse_x {}", p.report.rmse_x);
            assert!((p.report.rmse_y - prior).abs() < 0.15, "rmse_y {}", p.report.rmse_y);
            assert!(p.se_x > 0.0 && p.se_x < 0.1);
        }
    }

    #[test]
    fn sweep_deterministic_and_sorted() {
        let (map, traj) = test_world();
        let spec = SweepSpec {
            variable: SweepVariable::Combined,
            grid: vec![10.0, 0.0, 4.0],
            trials: 50,
            seed: 12,
        };
        let a = run_sweep(&spec, &ZeroPredictor, &map, &traj, &OffsetRange::wide(), 50.0).unwrap();
        let b = run_sweep(&spec, &ZeroPredictor, &map, &traj, &OffsetRange::wide(), 50.0).unwrap();
        // identical statistics; only the wall-clock timing field may vary
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.value, pb.value);
            assert_eq!(pa.report.rmse_x, pb.report.rmse_x);
            assert_eq!(pa.report.rmse_y, pb.report.rmse_y);
            assert_eq!(pa.report.rmse_phi_deg, pb.report.rmse_phi_deg);
            assert_eq!((pa.se_x, pa.se_y, pa.se_phi_deg), (pb.se_x, pb.se_y, pb.se_phi_deg));
        }
        let values: Vec<f64> = a.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![0.0, 4.0, 10.0]);
    }

    #[test]
    fn sweep_rejects_empty_grid() {
        let spec = SweepSpec {
            variable: SweepVariable::Noise,
            grid: vec![],
            trials: 10,
            seed: 0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn combined_impairment_anchor_point() {
        let (c, m, s) = SweepVariable::Combined.impairment(10.0);
        assert_eq!(c, 10.0);
        assert_eq!(m, 10.0);
        assert_relative_eq!(s, 0.27, epsilon = 1e-12);
    }

    #[test]
    fn linear_slope_basics() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert_relative_eq!(linear_slope(&xs, &ys), 2.0, epsilon = 1e-12);
        let flat = [4.0, 4.0, 4.0, 4.0];
        assert_relative_eq!(linear_slope(&xs, &flat), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bench_inference_runs_fast_and_scales() {
        let params = init_params(&NetConfig::desk(), 1).unwrap();
        let stats = bench_inference(&params, &[(50, 50), (100, 100)], 50, 3).unwrap();
        assert_eq!(stats.len(), 2);
        // engineering target on desk hardware
        assert!(stats[0].mean_ms < 5.0, "mean {} ms", stats[0].mean_ms);
        // roughly linear in ν + μ: doubling both should stay well under 4x
        assert!(stats[1].mean_ms < 4.0 * stats[0].mean_ms.max(0.01));
        for s in &stats {
            assert!(s.p95_ms >= s.mean_ms * 0.5);
        }
    }

    #[test]
    fn sweep_csv_and_svg_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let table = vec![
            SweepPoint {
                value: 0.0,
                report: RmseReport {
                    rmse_x: 0.2,
                    rmse_y: 0.25,
                    rmse_phi_deg: 1.0,
                    n_samples: 100,
                    mean_inference_ms: 0.4,
                },
                se_x: 0.01,
                se_y: 0.01,
                se_phi_deg: 0.05,
            },
            SweepPoint {
                value: 20.0,
                report: RmseReport {
                    rmse_x: 0.3,
                    rmse_y: 0.35,
                    rmse_phi_deg: 1.4,
                    n_samples: 100,
                    mean_inference_ms: 0.5,
                },
                se_x: 0.015,
                se_y: 0.015,
                se_phi_deg: 0.07,
            },
        ];
        let csv_path = dir.path().join("sweep.csv");
        write_sweep_csv(&table, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("value,rmse_x,rmse_y,rmse_phi\n"));
        assert_eq!(text.lines().count(), 3);

        let svg_a = dir.path().join("a.svg");
        let svg_b = dir.path().join("b.svg");
        write_sweep_svg(&table, SweepVariable::Clutter, &svg_a).unwrap();
        write_sweep_svg(&table, SweepVariable::Clutter, &svg_b).unwrap();
        let a = std::fs::read(&svg_a).unwrap();
        let b = std::fs::read(&svg_b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("clutter"));
        assert!(text.contains("position RMSE"));
        assert!(text.contains("orientation RMSE"));

        // single-point table renders too
        write_sweep_svg(&table[..1], SweepVariable::Noise, &svg_a).unwrap();
        write_sweep_csv(&table[..1], &csv_path).unwrap();
        assert_eq!(std::fs::read_to_string(&csv_path).unwrap().lines().count(), 2);
    }
}
