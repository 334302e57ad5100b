//! Physical constants (CODATA 2018) and power-unit helpers.

/// Magnetic flux quantum h/2e in webers.
pub const PHI0: f64 = 2.067_833_848e-15;

/// Reduced flux quantum Φ₀/2π in webers per radian; converts junction
/// phases to fluxes and phase rates to voltages.
pub const RFQ: f64 = PHI0 / std::f64::consts::TAU;

/// Elementary charge in coulombs.
pub const E_CHARGE: f64 = 1.602_176_634e-19;

/// Reduced Planck constant in joule-seconds.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Converts a power in dBm to watts. `-inf` maps to zero.
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    if p_dbm == f64::NEG_INFINITY {
        0.0
    } else {
        1e-3 * 10f64.powf(p_dbm / 10.0)
    }
}

/// Converts a power in watts to dBm. Zero maps to `-inf`.
pub fn watts_to_dbm(p_watts: f64) -> f64 {
    10.0 * (p_watts / 1e-3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_round_trip() {
        for p in [-110.0, -74.0, 0.0, 13.0] {
            assert!((watts_to_dbm(dbm_to_watts(p)) - p).abs() < 1e-12);
        }
        assert_eq!(dbm_to_watts(f64::NEG_INFINITY), 0.0);
        assert_eq!(watts_to_dbm(0.0), f64::NEG_INFINITY);
        // 0 dBm is 1 mW by definition.
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-19);
    }
}
