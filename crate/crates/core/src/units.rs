//! Unit conversions at the configuration boundary.
//!
//! Internally every frequency is an angular frequency in rad/s and every time
//! is in seconds. Configuration files quote ordinary frequencies (GHz, MHz)
//! and times in ns/μs.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Ordinary frequency in GHz to angular frequency in rad/s.
pub fn ghz(f: f64) -> f64 {
    TWO_PI * f * 1e9
}

pub fn mhz(f: f64) -> f64 {
    TWO_PI * f * 1e6
}

pub fn to_ghz(omega: f64) -> f64 {
    omega / TWO_PI / 1e9
}

pub fn to_mhz(omega: f64) -> f64 {
    omega / TWO_PI / 1e6
}

pub fn ns(t: f64) -> f64 {
    t * 1e-9
}

pub fn us(t: f64) -> f64 {
    t * 1e-6
}

pub fn to_ns(t: f64) -> f64 {
    t * 1e9
}

pub fn to_us(t: f64) -> f64 {
    t * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_invert() {
        assert!((to_ghz(ghz(7.28)) - 7.28).abs() < 1e-12);
        assert!((to_mhz(mhz(35.0)) - 35.0).abs() < 1e-12);
        assert!((to_ns(ns(346.0)) - 346.0).abs() < 1e-12);
        assert!((to_us(us(10.0)) - 10.0).abs() < 1e-12);
    }
}
