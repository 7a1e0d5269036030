//! Solar position (declination + hour angle), Haurwitz clear-sky irradiance
//! and cyclic hour-of-day encoding.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Geometry and clear-sky quantities for one timestamp and site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarGeometry {
    /// Solar zenith angle in degrees, 0 at the zenith, 90 at the horizon.
    pub zenith: f64,
    /// Solar azimuth in degrees clockwise from north.
    pub azimuth: f64,
    /// Haurwitz clear-sky global horizontal irradiance in W/m².
    pub clear_sky_ghi: f64,
    pub hod_cos: f64,
    pub hod_sin: f64,
}

/// Haurwitz model: `GHI = 1098 · cos z · exp(−0.057 / cos z)`, zero once the
/// sun is at or below the horizon.
pub fn haurwitz_ghi(zenith_deg: f64) -> f64 {
    let cz = (zenith_deg.to_radians()).cos();
    if cz <= 0.0 {
        0.0
    } else {
        1098.0 * cz * (-0.057 / cz).exp()
    }
}

/// Haurwitz value at zenith 0, used to normalize clear-sky power bounds.
pub fn haurwitz_peak() -> f64 {
    1098.0 * (-0.057f64).exp()
}

/// Solar geometry from the standard declination and hour-angle formulas
/// (Spencer series for declination and the equation of time).
pub fn solar_features(ts: DateTime<Utc>, lat: f64, lon: f64) -> SolarGeometry {
    assert!((-90.0..=90.0).contains(&lat), "latitude out of range");
    let doy = ts.ordinal() as f64;
    let frac_hour =
        ts.hour() as f64 + ts.minute() as f64 / 60.0 + ts.second() as f64 / 3600.0;
    let gamma = 2.0 * PI / 365.0 * (doy - 1.0 + (frac_hour - 12.0) / 24.0);

    let decl = 0.006918 - 0.399912 * gamma.cos() + 0.070257 * gamma.sin()
        - 0.006758 * (2.0 * gamma).cos()
        + 0.000907 * (2.0 * gamma).sin()
        - 0.002697 * (3.0 * gamma).cos()
        + 0.00148 * (3.0 * gamma).sin();

    // Equation of time in minutes.
    let eot = 229.18
        * (0.000075 + 0.001868 * gamma.cos()
            - 0.032077 * gamma.sin()
            - 0.014615 * (2.0 * gamma).cos()
            - 0.040849 * (2.0 * gamma).sin());

    let solar_time = frac_hour + eot / 60.0 + lon / 15.0;
    let hour_angle = (15.0 * (solar_time - 12.0)).to_radians();

    let phi = lat.to_radians();
    let cos_z = phi.sin() * decl.sin() + phi.cos() * decl.cos() * hour_angle.cos();
    let zenith = cos_z.clamp(-1.0, 1.0).acos().to_degrees();

    let az_rad = hour_angle
        .sin()
        .atan2(hour_angle.cos() * phi.sin() - decl.tan() * phi.cos());
    let azimuth = (az_rad.to_degrees() + 180.0).rem_euclid(360.0);

    let hod = ts.hour() as f64;
    SolarGeometry {
        zenith,
        azimuth,
        clear_sky_ghi: haurwitz_ghi(zenith),
        hod_cos: (2.0 * PI * hod / 24.0).cos(),
        hod_sin: (2.0 * PI * hod / 24.0).sin(),
    }
}
