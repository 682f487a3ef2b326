//! Landmark map model: spatial radius query over a uniform grid, synthetic
//! map and trajectory generation, and CSV persistence.
//!
//! Maps are immutable after construction. File formats:
//!
//! ```text
//! map:        id,x,y,source          (source: laser | radar | camera)
//! trajectory: t,x,y,phi,v,omega
//! ```
//!
//! Floats are serialized in shortest round-trip decimal form, so
//! `load(save(x)) == x` exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose};
use crate::rng::{substream, StreamDomain};

/// Default spatial-grid cell size in meters.
pub const DEFAULT_CELL_SIZE: f64 = 25.0;

/// Map-load radius around the vehicle, in meters.
pub const MAP_LOAD_RADIUS: f64 = 100.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate landmark id {0}")]
    DuplicateId(u64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Sensor modality a landmark was originally observed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkSource {
    Laser,
    Radar,
    Camera,
}

impl LandmarkSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            LandmarkSource::Laser => "laser",
            LandmarkSource::Radar => "radar",
            LandmarkSource::Camera => "camera",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "laser" => Some(LandmarkSource::Laser),
            "radar" => Some(LandmarkSource::Radar),
            "camera" => Some(LandmarkSource::Camera),
            _ => None,
        }
    }
}

/// A static world-frame map feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Point2,
    pub source: LandmarkSource,
}

/// Uniform grid over landmark positions. Cells hold indices into the
/// landmark list; a query gathers the cells overlapping the search box.
#[derive(Debug, Clone)]
struct UniformGrid {
    cell_size: f64,
    origin_x: f64,
    origin_y: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl UniformGrid {
    fn build(points: &[Point2], cell_size: f64) -> Self {
        if points.is_empty() {
            return Self {
                cell_size,
                origin_x: 0.0,
                origin_y: 0.0,
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let cols = ((max_x - min_x) / cell_size).floor() as usize + 1;
        let rows = ((max_y - min_y) / cell_size).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, p) in points.iter().enumerate() {
            let cx = ((p.x - min_x) / cell_size).floor() as usize;
            let cy = ((p.y - min_y) / cell_size).floor() as usize;
            cells[cy.min(rows - 1) * cols + cx.min(cols - 1)].push(i as u32);
        }
        Self {
            cell_size,
            origin_x: min_x,
            origin_y: min_y,
            cols,
            rows,
            cells,
        }
    }

    /// Indices of all points in cells overlapping the box around `center`
    /// with half-width `r`. Superset of the disk; caller filters.
    fn candidates(&self, center: Point2, r: f64) -> Vec<u32> {
        if self.cells.is_empty() {
            return Vec::new();
        }
        let lo_x = (((center.x - r) - self.origin_x) / self.cell_size).floor() as i64;
        let hi_x = (((center.x + r) - self.origin_x) / self.cell_size).floor() as i64;
        let lo_y = (((center.y - r) - self.origin_y) / self.cell_size).floor() as i64;
        let hi_y = (((center.y + r) - self.origin_y) / self.cell_size).floor() as i64;
        let mut out = Vec::new();
        for cy in lo_y.max(0)..=hi_y.min(self.rows as i64 - 1) {
            for cx in lo_x.max(0)..=hi_x.min(self.cols as i64 - 1) {
                out.extend_from_slice(&self.cells[cy as usize * self.cols + cx as usize]);
            }
        }
        out
    }
}

/// Immutable landmark map with a uniform-grid spatial index.
#[derive(Debug, Clone)]
pub struct LandmarkMap {
    landmarks: Vec<Landmark>,
    grid: UniformGrid,
}

impl LandmarkMap {
    /// Build a map; landmarks are stored in ascending id order.
    /// Rejects duplicate ids and non-finite coordinates.
    pub fn new(mut landmarks: Vec<Landmark>, cell_size: f64) -> Result<Self, WorldError> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(WorldError::InvalidParam(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        for lm in &landmarks {
            if !lm.position.x.is_finite() || !lm.position.y.is_finite() {
                return Err(WorldError::InvalidParam(format!(
                    "landmark {} has non-finite position",
                    lm.id
                )));
            }
        }
        landmarks.sort_by_key(|lm| lm.id);
        for w in landmarks.windows(2) {
            if w[0].id == w[1].id {
                return Err(WorldError::DuplicateId(w[0].id));
            }
        }
        let positions: Vec<Point2> = landmarks.iter().map(|lm| lm.position).collect();
        let grid = UniformGrid::build(&positions, cell_size);
        Ok(Self { landmarks, grid })
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    /// All landmarks within Euclidean distance `r` of `center`, ascending id.
    pub fn query_radius(&self, center: Point2, r: f64) -> Result<Vec<Landmark>, WorldError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(WorldError::InvalidParam(format!(
                "query radius must be positive, got {r}"
            )));
        }
        let r2 = r * r;
        let mut idx = self.grid.candidates(center, r);
        idx.sort_unstable();
        let mut out = Vec::new();
        for i in idx {
            let lm = &self.landmarks[i as usize];
            let dx = lm.position.x - center.x;
            let dy = lm.position.y - center.y;
            if dx * dx + dy * dy <= r2 {
                out.push(*lm);
            }
        }
        // landmarks are stored in ascending id order, so sorted indices
        // already yield ascending ids
        Ok(out)
    }
}

/// One time-step of a ground-truth trajectory. `v` and `omega` are the
/// motion inputs valid from this point to the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pose: Pose,
    pub v: f64,
    pub omega: f64,
}

/// Ground-truth vehicle trajectory with a uniform time step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
    dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>, dt: f64) -> Result<Self, WorldError> {
        if points.len() < 2 {
            return Err(WorldError::InvalidParam(
                "trajectory needs at least 2 points".into(),
            ));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(WorldError::InvalidParam(format!(
                "trajectory dt must be positive, got {dt}"
            )));
        }
        for w in points.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(WorldError::InvalidParam(format!(
                    "trajectory times must strictly increase (t={} then t={})",
                    w[0].t, w[1].t
                )));
            }
        }
        if points.iter().any(|p| p.v < 0.0) {
            return Err(WorldError::InvalidParam("negative speed".into()));
        }
        Ok(Self { points, dt })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total arc length of the polyline through the poses, in meters.
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].pose.position().distance(&w[1].pose.position()))
            .sum()
    }
}

/// Exact constant-turn-rate-and-velocity step: advance a pose by (v, ω)
/// over dt. Below `CTRV_OMEGA_EPS` the straight-line limit is used.
pub const CTRV_OMEGA_EPS: f64 = 1e-6;

pub fn ctrv_step(pose: &Pose, v: f64, omega: f64, dt: f64) -> Pose {
    let phi = pose.phi();
    if omega.abs() > CTRV_OMEGA_EPS {
        let phi_next = phi + omega * dt;
        Pose::new(
            pose.x() + v / omega * (phi_next.sin() - phi.sin()),
            pose.y() + v / omega * (phi.cos() - phi_next.cos()),
            wrap_angle(phi_next),
        )
    } else {
        Pose::new(
            pose.x() + v * dt * phi.cos(),
            pose.y() + v * dt * phi.sin(),
            wrap_angle(phi + omega * dt),
        )
    }
}

/// Parameters for synthetic trajectory generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams {
    pub duration: f64,
    pub dt: f64,
    /// Speed sampled uniformly per segment, m/s; min must be >= 0.
    pub speed_range: (f64, f64),
    /// Turn rate sampled uniformly per segment, rad/s.
    pub turn_rate_range: (f64, f64),
    /// Length of each constant-(v, ω) segment, seconds.
    pub segment_len: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            duration: 120.0,
            dt: 0.1,
            speed_range: (8.0, 14.0),
            turn_rate_range: (-0.15, 0.15),
            segment_len: 5.0,
        }
    }
}

/// Generate a trajectory of piecewise-constant (v, ω) segments starting at
/// the origin, integrated exactly with the CTRV equations. Deterministic
/// per seed.
pub fn generate_trajectory(seed: u64, params: &TrajectoryParams) -> Result<Trajectory, WorldError> {
    if !(params.dt > 0.0) || !params.dt.is_finite() {
        return Err(WorldError::InvalidParam(format!(
            "dt must be positive, got {}",
            params.dt
        )));
    }
    if !(params.duration >= 2.0 * params.dt) {
        return Err(WorldError::InvalidParam(format!(
            "duration {} must be at least 2*dt = {}",
            params.duration,
            2.0 * params.dt
        )));
    }
    if !(params.segment_len > 0.0) {
        return Err(WorldError::InvalidParam("segment_len must be positive".into()));
    }
    let (v_lo, v_hi) = params.speed_range;
    let (w_lo, w_hi) = params.turn_rate_range;
    if !(v_lo.is_finite() && v_hi.is_finite() && v_lo >= 0.0 && v_lo <= v_hi) {
        return Err(WorldError::InvalidParam(format!(
            "bad speed range [{v_lo}, {v_hi}]"
        )));
    }
    if !(w_lo.is_finite() && w_hi.is_finite() && w_lo <= w_hi) {
        return Err(WorldError::InvalidParam(format!(
            "bad turn rate range [{w_lo}, {w_hi}]"
        )));
    }

    let n_steps = (params.duration / params.dt).round() as usize;
    let n_segments = (params.duration / params.segment_len).ceil() as usize + 1;
    let mut rng = substream(seed, StreamDomain::WorldGen, 0);
    let segments: Vec<(f64, f64)> = (0..n_segments)
        .map(|_| {
            let v = if v_lo == v_hi { v_lo } else { rng.random_range(v_lo..v_hi) };
            let w = if w_lo == w_hi { w_lo } else { rng.random_range(w_lo..w_hi) };
            (v, w)
        })
        .collect();

    let mut points = Vec::with_capacity(n_steps + 1);
    let mut pose = Pose::new(0.0, 0.0, 0.0);
    for i in 0..=n_steps {
        let t = i as f64 * params.dt;
        let seg = ((t / params.segment_len).floor() as usize).min(n_segments - 1);
        let (v, omega) = segments[seg];
        points.push(TrajectoryPoint { t, pose, v, omega });
        pose = ctrv_step(&pose, v, omega, params.dt);
    }
    Trajectory::new(points, params.dt)
}

/// Parameters for synthetic map generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapParams {
    /// Expected landmarks per kilometer of route.
    pub density_per_km: f64,
    /// Lateral truncation bound for landmark placement, meters.
    pub lateral_spread: f64,
    /// Spatial-index cell size, meters.
    pub cell_size: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            density_per_km: 772.0,
            lateral_spread: 30.0,
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

// Map composition by sensor modality: 1731 laser, 718 radar, 1411 camera
// out of 3860.
const SOURCE_PROBS: [(LandmarkSource, f64); 3] = [
    (LandmarkSource::Laser, 1731.0 / 3860.0),
    (LandmarkSource::Radar, 718.0 / 3860.0),
    (LandmarkSource::Camera, 1411.0 / 3860.0),
];

/// Scatter landmarks along a route: uniform in arc length, Gaussian lateral
/// offset (σ = spread/2) truncated at ±`lateral_spread`. The landmark count
/// is Poisson with mean `density_per_km × route length`. Deterministic per
/// seed.
pub fn generate_map(
    seed: u64,
    route: &Trajectory,
    params: &MapParams,
) -> Result<LandmarkMap, WorldError> {
    if !(params.density_per_km > 0.0) {
        return Err(WorldError::InvalidParam(format!(
            "density must be positive, got {}",
            params.density_per_km
        )));
    }
    if !(params.lateral_spread >= 0.0) {
        return Err(WorldError::InvalidParam("lateral_spread must be >= 0".into()));
    }
    let length_m = route.length();
    if length_m <= 0.0 {
        return Err(WorldError::InvalidParam(
            "degenerate route: zero length".into(),
        ));
    }

    // cumulative arc length per trajectory point
    let pts = route.points();
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].pose.position().distance(&w[1].pose.position());
        cum.push(acc);
    }

    let mut rng = substream(seed, StreamDomain::WorldGen, 1);
    let expected = params.density_per_km * length_m / 1000.0;
    let count = crate::sensors::sample_poisson(expected, &mut rng)
        .map_err(|e| WorldError::InvalidParam(e.to_string()))?;

    let sigma = params.lateral_spread / 2.0;
    let mut landmarks = Vec::with_capacity(count as usize);
    for id in 0..count {
        let s: f64 = rng.random_range(0.0..length_m);
        // segment containing arc length s
        let seg = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(pts.len() - 2),
        };
        let a = pts[seg].pose.position();
        let b = pts[seg + 1].pose.position();
        let seg_len = a.distance(&b);
        let frac = if seg_len > 0.0 { (s - cum[seg]) / seg_len } else { 0.0 };
        let base = Point2::new(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y));
        let heading = (b.y - a.y).atan2(b.x - a.x);

        let lateral = if params.lateral_spread == 0.0 {
            0.0
        } else {
            loop {
                let d: f64 = rng.sample(rand_distr::StandardNormal);
                let d = d * sigma;
                if d.abs() <= params.lateral_spread {
                    break d;
                }
            }
        };
        let position = Point2::new(
            base.x - lateral * heading.sin(),
            base.y + lateral * heading.cos(),
        );

        let u: f64 = rng.random_range(0.0..1.0);
        let mut source = LandmarkSource::Camera;
        let mut cdf = 0.0;
        for (src, p) in SOURCE_PROBS {
            cdf += p;
            if u < cdf {
                source = src;
                break;
            }
        }
        landmarks.push(Landmark { id, position, source });
    }
    LandmarkMap::new(landmarks, params.cell_size)
}

/// Write a map as CSV (`id,x,y,source`), one landmark per row, ascending id.
pub fn save_map(map: &LandmarkMap, path: &Path) -> Result<(), WorldError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,x,y,source")?;
    for lm in map.landmarks() {
        writeln!(
            w,
            "{},{},{},{}",
            lm.id,
            lm.position.x,
            lm.position.y,
            lm.source.as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Load a map saved by [`save_map`]. Errors name the offending line.
pub fn load_map(path: &Path, cell_size: f64) -> Result<LandmarkMap, WorldError> {
    let reader = BufReader::new(File::open(path)?);
    let mut landmarks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line_no == 1 {
            if line.trim() != "id,x,y,source" {
                return Err(WorldError::Parse {
                    line: 1,
                    msg: format!("expected header 'id,x,y,source', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(WorldError::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let id: u64 = fields[0].parse().map_err(|e| WorldError::Parse {
            line: line_no,
            msg: format!("bad id '{}': {e}", fields[0]),
        })?;
        let x: f64 = parse_finite(fields[1], line_no, "x")?;
        let y: f64 = parse_finite(fields[2], line_no, "y")?;
        let source = LandmarkSource::parse(fields[3]).ok_or_else(|| WorldError::Parse {
            line: line_no,
            msg: format!("unknown source '{}'", fields[3]),
        })?;
        landmarks.push(Landmark {
            id,
            position: Point2::new(x, y),
            source,
        });
    }
    LandmarkMap::new(landmarks, cell_size)
}

/// Write a trajectory as CSV (`t,x,y,phi,v,omega`).
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<(), WorldError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,x,y,phi,v,omega")?;
    for p in traj.points() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.t,
            p.pose.x(),
            p.pose.y(),
            p.pose.phi(),
            p.v,
            p.omega
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Load a trajectory saved by [`save_trajectory`].
pub fn load_trajectory(path: &Path) -> Result<Trajectory, WorldError> {
    let reader = BufReader::new(File::open(path)?);
    let mut points: Vec<TrajectoryPoint> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line_no == 1 {
            if line.trim() != "t,x,y,phi,v,omega" {
                return Err(WorldError::Parse {
                    line: 1,
                    msg: format!("expected header 't,x,y,phi,v,omega', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(WorldError::Parse {
                line: line_no,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let t = parse_finite(fields[0], line_no, "t")?;
        let x = parse_finite(fields[1], line_no, "x")?;
        let y = parse_finite(fields[2], line_no, "y")?;
        let phi = parse_finite(fields[3], line_no, "phi")?;
        let v = parse_finite(fields[4], line_no, "v")?;
        let omega = parse_finite(fields[5], line_no, "omega")?;
        points.push(TrajectoryPoint {
            t,
            pose: Pose::new(x, y, phi),
            v,
            omega,
        });
    }
    if points.len() < 2 {
        return Err(WorldError::InvalidParam(
            "trajectory file has fewer than 2 points".into(),
        ));
    }
    let dt = points[1].t - points[0].t;
    Trajectory::new(points, dt)
}

fn parse_finite(s: &str, line: usize, field: &str) -> Result<f64, WorldError> {
    let v: f64 = s.parse().map_err(|e| WorldError::Parse {
        line,
        msg: format!("bad {field} '{s}': {e}"),
    })?;
    if !v.is_finite() {
        return Err(WorldError::Parse {
            line,
            msg: format!("{field} must be finite, got '{s}'"),
        });
    }
    Ok(v)
}
