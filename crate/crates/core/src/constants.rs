//! Physical constants (CODATA 2018) and unit helpers.

use std::f64::consts::PI;

/// Atomic mass unit in kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Elementary charge in C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity in F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// e^2 / (4 pi eps0) in J m.
pub fn coulomb_e0_sq() -> f64 {
    ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (4.0 * PI * EPSILON_0)
}

/// Converts a frequency quoted as f/2pi in Hz to an angular frequency.
pub fn hz_to_angular(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

/// Converts an angular frequency to f/2pi in Hz.
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}
