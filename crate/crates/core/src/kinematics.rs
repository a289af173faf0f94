//! Differential-drive kinematics.
//!
//! The body reference point is the midpoint of the driven axle. Headings are
//! counter-clockwise from +x and kept in (-π, π].

use serde::{Deserialize, Serialize};

use crate::error::{positive, ParamError};
use crate::math::{cos, sin, wrap_angle};

/// Below this, wheel speed differences and yaw rates are treated as zero.
pub const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Transforms a point given in the body frame into the world frame.
    pub fn to_world(&self, forward: f64, left: f64) -> (f64, f64) {
        let (s, c) = (sin(self.theta), cos(self.theta));
        (self.x + forward * c - left * s, self.y + forward * s + left * c)
    }
}

/// Ground speeds of the left and right driven wheels, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub left: f64,
    pub right: f64,
}

impl WheelSpeeds {
    pub fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self { left: self.left * k, right: self.right * k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyTwist {
    /// Forward speed of the axle midpoint, m/s.
    pub linear: f64,
    /// Yaw rate, rad/s.
    pub angular: f64,
}

/// Result of [`turning_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TurnRadius {
    /// Signed radius in meters; positive turns left.
    Radius(f64),
    /// Equal wheel speeds: the robot drives straight.
    Straight,
}

impl TurnRadius {
    pub fn abs(self) -> Option<f64> {
        match self {
            TurnRadius::Radius(r) => Some(r.abs()),
            TurnRadius::Straight => None,
        }
    }
}

pub fn body_twist(ws: WheelSpeeds, track_width: f64) -> Result<BodyTwist, ParamError> {
    let track = positive("track_width", track_width)?;
    Ok(BodyTwist {
        linear: (ws.right + ws.left) / 2.0,
        angular: (ws.right - ws.left) / track,
    })
}

/// Distance from the axle midpoint to the instantaneous center of rotation.
pub fn turning_radius(ws: WheelSpeeds, track_width: f64) -> Result<TurnRadius, ParamError> {
    let track = positive("track_width", track_width)?;
    let diff = ws.right - ws.left;
    if diff.abs() <= EPSILON {
        return Ok(TurnRadius::Straight);
    }
    Ok(TurnRadius::Radius(track / 2.0 * ((ws.right + ws.left) / diff)))
}

/// Advances a pose under a constant twist by integrating the arc exactly.
pub fn integrate_pose(pose: Pose, twist: BodyTwist, dt: f64) -> Result<Pose, ParamError> {
    let dt = positive("dt", dt)?;
    let BodyTwist { linear: v, angular: w } = twist;
    let th = pose.theta;
    let out = if w.abs() > EPSILON {
        let th1 = th + w * dt;
        let r = v / w;
        Pose {
            x: pose.x + r * (sin(th1) - sin(th)),
            y: pose.y - r * (cos(th1) - cos(th)),
            theta: wrap_angle(th1),
        }
    } else {
        Pose {
            x: pose.x + v * cos(th) * dt,
            y: pose.y + v * sin(th) * dt,
            theta: wrap_angle(th + w * dt),
        }
    };
    Ok(out)
}

/// Instantaneous center of rotation for a pose and twist, if the robot is turning.
pub fn rotation_center(pose: Pose, twist: BodyTwist) -> Option<(f64, f64)> {
    if twist.angular.abs() <= EPSILON {
        return None;
    }
    let r = twist.linear / twist.angular;
    Some((pose.x - r * sin(pose.theta), pose.y + r * cos(pose.theta)))
}
