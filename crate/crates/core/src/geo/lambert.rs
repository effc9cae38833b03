use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use super::{GeoError, GeoPoint, PlanePoint};

const MAX_INVERSE_ITERATIONS: usize = 20;
const LATITUDE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    /// Semi-major axis, meters.
    pub a: f64,
    /// Flattening.
    pub f: f64,
}

impl Ellipsoid {
    pub const WGS84: Ellipsoid = Ellipsoid {
        a: 6_378_137.0,
        f: 1.0 / 298.257_223_563,
    };

    pub fn eccentricity(&self) -> f64 {
        (self.f * (2.0 - self.f)).sqrt()
    }
}

/// Two-standard-parallel Lambert conformal conic projection.
///
/// Angles in the serialized form are degrees. The default zone is centered
/// on northern France (parallels 48° and 49.5°, origin 48.75°N 3°E).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambertProjection {
    pub standard_parallel_1: f64,
    pub standard_parallel_2: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub false_easting: f64,
    pub false_northing: f64,
    pub ellipsoid: Ellipsoid,
}

impl Default for LambertProjection {
    fn default() -> Self {
        Self {
            standard_parallel_1: 48.0,
            standard_parallel_2: 49.5,
            origin_lat: 48.75,
            origin_lon: 3.0,
            false_easting: 700_000.0,
            false_northing: 6_600_000.0,
            ellipsoid: Ellipsoid::WGS84,
        }
    }
}

/// Derived cone constants.
struct Cone {
    e: f64,
    n: f64,
    big_f: f64,
    rho0: f64,
}

impl LambertProjection {
    pub fn validate(&self) -> Result<(), GeoError> {
        let Ellipsoid { a, f } = self.ellipsoid;
        if !(a > 0.0) {
            return Err(GeoError::InvalidProjection(
                "semi-major axis must be positive".into(),
            ));
        }
        if !(f > 0.0 && f < 1.0) {
            return Err(GeoError::InvalidProjection(
                "flattening must lie in (0, 1)".into(),
            ));
        }
        let (p1, p2) = (self.standard_parallel_1, self.standard_parallel_2);
        if (p1 + p2).abs() < 1e-9 {
            return Err(GeoError::InvalidProjection(
                "standard parallels symmetric about the equator give a degenerate cone".into(),
            ));
        }
        if p1.abs() >= 90.0 || p2.abs() >= 90.0 || self.origin_lat.abs() >= 90.0 {
            return Err(GeoError::InvalidProjection(
                "parallels must lie strictly inside (-90, 90)".into(),
            ));
        }
        Ok(())
    }

    fn cone(&self) -> Cone {
        let e = self.ellipsoid.eccentricity();
        let phi1 = self.standard_parallel_1.to_radians();
        let phi2 = self.standard_parallel_2.to_radians();
        let m1 = m(phi1, e);
        let m2 = m(phi2, e);
        let t1 = t(phi1, e);
        let t2 = t(phi2, e);
        let n = if (phi1 - phi2).abs() < 1e-12 {
            phi1.sin()
        } else {
            (m1.ln() - m2.ln()) / (t1.ln() - t2.ln())
        };
        let big_f = m1 / (n * t1.powf(n));
        let rho0 = self.ellipsoid.a * big_f * t(self.origin_lat.to_radians(), e).powf(n);
        Cone { e, n, big_f, rho0 }
    }

    /// Cone constant `n`.
    pub fn cone_constant(&self) -> f64 {
        self.cone().n
    }

    fn check_band(&self, lat: f64, n: f64) -> Result<(), GeoError> {
        // The pole opposite the cone apex maps to infinity.
        let toward_apex = lat * n.signum();
        if lat.abs() > 89.5 || toward_apex < -80.0 {
            return Err(GeoError::OutOfBand { lat });
        }
        Ok(())
    }

    pub fn forward(&self, p: &GeoPoint) -> Result<PlanePoint, GeoError> {
        self.validate()?;
        let c = self.cone();
        self.check_band(p.lat, c.n)?;
        let phi = p.lat.to_radians();
        let rho = self.ellipsoid.a * c.big_f * t(phi, c.e).powf(c.n);
        let theta = c.n * wrap_pi((p.lon - self.origin_lon).to_radians());
        Ok(PlanePoint {
            x: self.false_easting + rho * theta.sin(),
            y: self.false_northing + c.rho0 - rho * theta.cos(),
        })
    }

    pub fn inverse(&self, xy: &PlanePoint) -> Result<GeoPoint, GeoError> {
        self.validate()?;
        let c = self.cone();
        let dx = xy.x - self.false_easting;
        let dy = c.rho0 - (xy.y - self.false_northing);
        let sign = c.n.signum();
        let rho = sign * dx.hypot(dy);
        let theta = (sign * dx).atan2(sign * dy);
        let t_val = (rho / (self.ellipsoid.a * c.big_f)).powf(1.0 / c.n);
        let mut phi = FRAC_PI_2 - 2.0 * t_val.atan();
        let mut converged = false;
        for _ in 0..MAX_INVERSE_ITERATIONS {
            let es = c.e * phi.sin();
            let next = FRAC_PI_2 - 2.0 * (t_val * ((1.0 - es) / (1.0 + es)).powf(c.e / 2.0)).atan();
            let delta = (next - phi).abs();
            phi = next;
            if delta < LATITUDE_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(GeoError::NonConvergence {
                iterations: MAX_INVERSE_ITERATIONS,
            });
        }
        let lon = self.origin_lon + (theta / c.n).to_degrees();
        Ok(GeoPoint {
            lat: phi.to_degrees(),
            lon: wrap_lon(lon),
            alt: 0.0,
        })
    }

    /// Meridian convergence at `p`: the counter-clockwise angle from grid
    /// north to true north, radians.
    pub fn convergence(&self, p: &GeoPoint) -> f64 {
        let c = self.cone();
        c.n * wrap_pi((p.lon - self.origin_lon).to_radians())
    }

    /// Point scale factor at latitude `lat` (degrees).
    pub fn scale_factor(&self, lat: f64) -> f64 {
        let c = self.cone();
        let phi = lat.to_radians();
        let rho = self.ellipsoid.a * c.big_f * t(phi, c.e).powf(c.n);
        c.n * rho / (self.ellipsoid.a * m(phi, c.e))
    }
}

fn m(phi: f64, e: f64) -> f64 {
    let s = e * phi.sin();
    phi.cos() / (1.0 - s * s).sqrt()
}

fn t(phi: f64, e: f64) -> f64 {
    let s = e * phi.sin();
    (FRAC_PI_4 - phi / 2.0).tan() / ((1.0 - s) / (1.0 + s)).powf(e / 2.0)
}

fn wrap_pi(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % tau;
    if x < 0.0 {
        x += tau;
    }
    x - std::f64::consts::PI
}

fn wrap_lon(lon: f64) -> f64 {
    let mut x = (lon + 180.0) % 360.0;
    if x < 0.0 {
        x += 360.0;
    }
    x - 180.0
}
