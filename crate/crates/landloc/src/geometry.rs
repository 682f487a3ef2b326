//! Planar rigid-body poses, pose offsets, and the transforms that move
//! points between the world frame and the vehicle frame.
//!
//! The world frame is an abstract planar Cartesian frame (UTM-like); the
//! vehicle frame has its origin at the vehicle with x pointing forward.
//! All angles are radians, normalized to the half-open interval (-π, π]
//! with -π mapping to +π. Everything here is f64.

use nalgebra::{Matrix2, Vector2};

/// Normalize an angle to (-π, π]; -π maps to +π.
///
/// Panics on non-finite input: a NaN/Inf angle is always a bug upstream,
/// and file/config boundaries validate before calling into geometry.
pub fn wrap_angle(a: f64) -> f64 {
    assert!(a.is_finite(), "wrap_angle: non-finite angle {a}");
    let r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

/// A 2D point in meters. Frame (world or vehicle) is by context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    #[inline]
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Euclidean norm, i.e. distance from the frame origin.
    #[inline]
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

/// Vehicle pose: position (x, y) in meters plus heading in radians.
///
/// Fields are private so the heading invariant (wrapped to (-π, π]) holds
/// after every construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    x: f64,
    y: f64,
    phi: f64,
}

impl Pose {
    /// Create a pose; the heading is wrapped to (-π, π].
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite(),
            "Pose: non-finite position ({x}, {y})"
        );
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    #[inline]
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// World-frame offset from `self` to `target`, so that
    /// `self.compose(offset) == target` (headings modulo 2π).
    pub fn offset_to(&self, target: &Pose) -> PoseOffset {
        PoseOffset::new(
            target.x - self.x,
            target.y - self.y,
            wrap_angle(target.phi - self.phi),
        )
    }

    /// Apply a pose offset by component-wise addition in the world frame.
    ///
    /// This is deliberately not a rigid composition in the vehicle frame:
    /// the offset convention used throughout is world-frame deltas.
    pub fn compose(&self, d: &PoseOffset) -> Pose {
        Pose::new(self.x + d.dx, self.y + d.dy, wrap_angle(self.phi + d.dphi))
    }

    /// Transform mapping vehicle-frame points into the world frame.
    pub fn to_transform(&self) -> IsoTransform {
        IsoTransform {
            rotation: Matrix2::new(
                self.phi.cos(),
                -self.phi.sin(),
                self.phi.sin(),
                self.phi.cos(),
            ),
            translation: Vector2::new(self.x, self.y),
        }
    }
}

/// Pose delta (Δx, Δy, Δφ): the regression target and the correction
/// applied at inference. Δφ is wrapped to (-π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseOffset {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
}

impl PoseOffset {
    pub fn new(dx: f64, dy: f64, dphi: f64) -> Self {
        assert!(
            dx.is_finite() && dy.is_finite(),
            "PoseOffset: non-finite translation ({dx}, {dy})"
        );
        Self {
            dx,
            dy,
            dphi: wrap_angle(dphi),
        }
    }

    pub fn zero() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            dphi: 0.0,
        }
    }

    pub fn negate(&self) -> Self {
        PoseOffset::new(-self.dx, -self.dy, wrap_angle(-self.dphi))
    }
}

/// Planar isometry: rotation (2x2, det +1) plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoTransform {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl IsoTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    /// Apply to a point: R·q + t.
    #[inline]
    pub fn apply(&self, q: &Point2) -> Point2 {
        let v = self.rotation * Vector2::new(q.x, q.y) + self.translation;
        Point2::new(v.x, v.y)
    }

    /// Inverse isometry: rotation transposed, translation -Rᵀ·t.
    pub fn invert(&self) -> IsoTransform {
        let rt = self.rotation.transpose();
        IsoTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Composition: `self` applied after `other`.
    pub fn compose(&self, other: &IsoTransform) -> IsoTransform {
        IsoTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}
