//! SE(2) poses, raster grid conventions and the local geodetic frame.
//!
//! Conventions used across the crate:
//! - map frame axes point East (+x) and North (+y), in meters;
//! - a heading `theta` is measured counter-clockwise from +x, so the camera
//!   looks along `forward(theta) = (cos theta, sin theta)` and its right-hand
//!   side is `right(theta) = (sin theta, -cos theta)`;
//! - grid row 0 is the southernmost row and rows grow northward.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equatorial radius of the WGS84 ellipsoid, in meters.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned
/// untouched so the function is idempotent bit-for-bit.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// A point in the camera's bird's-eye-view frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BevPoint {
    /// Meters to the right of the viewing axis.
    pub lateral: f64,
    /// Meters along the viewing axis.
    pub forward: f64,
}

impl BevPoint {
    pub const fn new(lateral: f64, forward: f64) -> Self {
        Self { lateral, forward }
    }
}

pub fn forward(theta: f64) -> Point2 {
    Point2::new(theta.cos(), theta.sin())
}

pub fn right(theta: f64) -> Point2 {
    Point2::new(theta.sin(), -theta.cos())
}

/// A 3-DoF pose: position in the local map frame and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// `self ⊕ other`: applies `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Maps a BEV point of a camera at this pose into the map frame.
    pub fn transform_point(&self, p: BevPoint) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(
            self.x + p.forward * c + p.lateral * s,
            self.y + p.forward * s - p.lateral * c,
        )
    }
}

pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn inverse(a: &Pose2) -> Pose2 {
    a.inverse()
}

pub fn transform_point(xi: &Pose2, p: BevPoint) -> Point2 {
    xi.transform_point(p)
}

/// A regular raster in the map frame. `origin` is the center of cell
/// (row 0, col 0); columns grow East and rows grow North.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2,
    pub delta: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, delta: f64, width: usize, height: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("grid pitch must be positive, got {delta}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "grid must have at least one cell, got {width}x{height}"
            )));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::Domain("grid origin must be finite".into()));
        }
        Ok(Self {
            origin,
            delta,
            width,
            height,
        })
    }

    /// Square grid of `size_m` meters centered on the map-frame origin.
    pub fn centered(size_m: f64, delta: f64) -> Result<Self> {
        let n = (size_m / delta).round() as usize;
        let half = (n as f64 - 1.0) * 0.5 * delta;
        GridSpec::new(Point2::new(-half, -half), delta, n, n)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + col as f64 * self.delta,
            self.origin.y + row as f64 * self.delta,
        )
    }

    /// Continuous (row, col) coordinates; integers land on cell centers.
    pub fn continuous_index(&self, p: Point2) -> (f64, f64) {
        (
            (p.y - self.origin.y) / self.delta,
            (p.x - self.origin.x) / self.delta,
        )
    }

    /// Cell containing `p`, ties rounding up (toward North/East).
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let (r, c) = self.continuous_index(p);
        let r = (r + 0.5).floor();
        let c = (c + 0.5).floor();
        if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Distance from the first to the last cell center along the diagonal.
    pub fn diagonal(&self) -> f64 {
        let w = (self.width as f64 - 1.0) * self.delta;
        let h = (self.height as f64 - 1.0) * self.delta;
        w.hypot(h)
    }
}

/// Tangent point of the local scaled-Mercator frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub lon0: f64,
    pub lat0: f64,
}

impl Datum {
    pub fn new(lon0: f64, lat0: f64) -> Result<Self> {
        if !(lat0 > -90.0 && lat0 < 90.0) {
            return Err(Error::Domain(format!("datum latitude {lat0} outside (-90, 90)")));
        }
        if !(-180.0..180.0).contains(&lon0) {
            return Err(Error::Domain(format!("datum longitude {lon0} outside [-180, 180)")));
        }
        Ok(Self { lon0, lat0 })
    }
}

fn mercator_northing(lat_deg: f64) -> f64 {
    (FRAC_PI_4 + lat_deg.to_radians() / 2.0).tan().ln()
}

/// Projects WGS84 degrees into East/North meters around `datum`, scaling the
/// Mercator projection by `cos(lat0)` so distances are true near the datum.
pub fn wgs84_to_local(datum: &Datum, lon: f64, lat: f64) -> Result<Point2> {
    if !(lat > -85.0 && lat < 85.0) {
        return Err(Error::Domain(format!("latitude {lat} outside (-85, 85)")));
    }
    if !lon.is_finite() {
        return Err(Error::Domain(format!("longitude {lon} is not finite")));
    }
    let scale = datum.lat0.to_radians().cos() * EARTH_RADIUS;
    Ok(Point2::new(
        scale * (lon - datum.lon0).to_radians(),
        scale * (mercator_northing(lat) - mercator_northing(datum.lat0)),
    ))
}

/// Inverse of [`wgs84_to_local`].
pub fn local_to_wgs84(datum: &Datum, p: Point2) -> (f64, f64) {
    let scale = datum.lat0.to_radians().cos() * EARTH_RADIUS;
    let lon = datum.lon0 + (p.x / scale).to_degrees();
    let m = p.y / scale + mercator_northing(datum.lat0);
    let lat = (2.0 * m.exp().atan() - std::f64::consts::FRAC_PI_2).to_degrees();
    (lon, lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    type Mat3 = [[f64; 3]; 3];

    fn mat(p: &Pose2) -> Mat3 {
        let (s, c) = p.theta.sin_cos();
        [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
    }

    fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    }

    fn from_mat(m: &Mat3) -> Pose2 {
        Pose2::new(m[0][2], m[1][2], m[1][0].atan2(m[0][0]))
    }

    fn close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol
            && (a.y - b.y).abs() < tol
            && normalize_angle(a.theta - b.theta).abs() < tol
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose2::new(1.0, 0.0, FRAC_PI_2);
        let b = Pose2::new(1.0, 0.0, 0.0);
        let expected = from_mat(&matmul(&mat(&a), &mat(&b)));
        assert!(close(&expected, &Pose2::new(1.0, 1.0, FRAC_PI_2), 1e-12));
        assert!(close(&a.compose(&b), &expected, 1e-12));
    }

    #[test]
    fn identity_and_inverse() {
        let xi = Pose2::new(3.0, -2.0, 0.7);
        assert_eq!(xi.compose(&Pose2::IDENTITY), xi);
        assert_eq!(Pose2::IDENTITY.inverse(), Pose2::IDENTITY);
        assert!(close(&xi.compose(&xi.inverse()), &Pose2::IDENTITY, 1e-12));
        let inv = Pose2::new(1.0, 0.0, FRAC_PI_2).inverse();
        assert!(close(&inv, &Pose2::new(0.0, 1.0, -FRAC_PI_2), 1e-12));
    }

    #[test]
    fn pi_is_kept_and_minus_pi_wraps() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(Pose2::new(0.0, 0.0, PI).inverse().theta, PI);
    }

    #[test]
    fn transform_point_examples() {
        let p = Pose2::IDENTITY.transform_point(BevPoint::new(0.0, 2.0));
        assert_eq!(p, Point2::new(2.0, 0.0));
        let q = Pose2::new(0.0, 0.0, FRAC_PI_2).transform_point(BevPoint::new(0.0, 2.0));
        assert!((q.x).abs() < 1e-12 && (q.y - 2.0).abs() < 1e-12);
        let xi = Pose2::new(4.0, 5.0, 1.3);
        assert_eq!(xi.transform_point(BevPoint::default()), xi.translation());
        // lateral points to the right of the viewing direction
        let r = Pose2::IDENTITY.transform_point(BevPoint::new(1.0, 0.0));
        assert_eq!(r, Point2::new(0.0, -1.0));
    }

    #[test]
    fn wgs84_examples() {
        let d = Datum::new(0.0, 0.0).unwrap();
        assert_eq!(wgs84_to_local(&d, 0.0, 0.0).unwrap(), Point2::new(0.0, 0.0));
        let p = wgs84_to_local(&d, 0.001, 0.0).unwrap();
        assert!((p.x - 111.319_490_793).abs() < 1e-6, "{p:?}");
        assert_eq!(p.y, 0.0);
        let a = wgs84_to_local(&d, 0.3, 0.0).unwrap();
        let b = wgs84_to_local(&d, 0.3, 0.001).unwrap();
        assert!(((b.y - a.y) - 111.319).abs() < 1e-3, "{}", b.y - a.y);
        assert!(wgs84_to_local(&d, 0.0, 85.0).is_err());
        assert!(Datum::new(180.0, 0.0).is_err());
        assert!(Datum::new(0.0, 90.0).is_err());
    }

    #[test]
    fn local_frame_roundtrip() {
        let d = Datum::new(-83.05, 42.33).unwrap();
        let p = wgs84_to_local(&d, -83.049, 42.331).unwrap();
        let (lon, lat) = local_to_wgs84(&d, p);
        assert!((lon + 83.049).abs() < 1e-10 && (lat - 42.331).abs() < 1e-10);
    }

    #[test]
    fn jacobian_at_datum_matches_finite_differences() {
        for lat0 in [-60.0, -10.0, 0.0, 37.7, 48.85, 70.0] {
            let d = Datum::new(12.5, lat0).unwrap();
            let h = 1e-6;
            let f = |lon, lat| wgs84_to_local(&d, lon, lat).unwrap();
            let dx_dlon = (f(12.5 + h, lat0).x - f(12.5 - h, lat0).x) / (2.0 * h);
            let dy_dlat = (f(12.5, lat0 + h).y - f(12.5, lat0 - h).y) / (2.0 * h);
            let dx_dlat = (f(12.5, lat0 + h).x - f(12.5, lat0 - h).x) / (2.0 * h);
            let deg = PI / 180.0;
            let expected_x = EARTH_RADIUS * deg * lat0.to_radians().cos();
            let expected_y = EARTH_RADIUS * deg;
            assert!((dx_dlon / expected_x - 1.0).abs() < 1e-6, "lat0={lat0}");
            assert!((dy_dlat / expected_y - 1.0).abs() < 1e-6, "lat0={lat0}");
            assert_eq!(dx_dlat, 0.0);
        }
    }

    #[test]
    fn grid_roundtrip_and_ties() {
        let g = GridSpec::new(Point2::new(-3.0, 7.0), 0.5, 11, 9).unwrap();
        for r in 0..g.height {
            for c in 0..g.width {
                assert_eq!(g.cell_of(g.cell_center(r, c)), Some((r, c)));
            }
        }
        // exactly halfway between cells (0,0) and (0,1) rounds up
        assert_eq!(g.cell_of(Point2::new(-2.75, 7.0)), Some((0, 1)));
        assert_eq!(g.cell_of(Point2::new(-3.3, 7.0)), None);
        assert!(GridSpec::new(Point2::default(), 0.0, 1, 1).is_err());
        assert!(GridSpec::new(Point2::default(), 1.0, 0, 1).is_err());
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn group_laws(a in pose(), b in pose(), c in pose()) {
            let ab_c = a.compose(&b).compose(&c);
            let a_bc = a.compose(&b.compose(&c));
            prop_assert!(close(&ab_c, &a_bc, 1e-9));
            prop_assert!(close(&a.compose(&Pose2::IDENTITY), &a, 1e-9));
            prop_assert!(close(&Pose2::IDENTITY.compose(&a), &a, 1e-9));
            prop_assert!(close(&a.compose(&a.inverse()), &Pose2::IDENTITY, 1e-9));
            prop_assert!(close(&a.inverse().inverse(), &a, 1e-9));
        }

        #[test]
        fn normalize_is_idempotent(a in -1e4..1e4f64) {
            let n = normalize_angle(a);
            prop_assert!(n > -PI && n <= PI);
            prop_assert_eq!(normalize_angle(n), n);
            prop_assert!(((a - n) / TAU - ((a - n) / TAU).round()).abs() < 1e-9);
        }

        #[test]
        fn theta_always_normalized(a in pose(), b in pose()) {
            for t in [a.compose(&b).theta, a.inverse().theta] {
                prop_assert!(t > -PI && t <= PI);
            }
        }
    }
}
