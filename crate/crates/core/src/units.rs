//! Decibel/linear conversion helpers used throughout the crate.
//!
//! Optical powers are carried as linear fractions of the source power and
//! reported in dB relative to the source, so only the relative conversions
//! are needed here.

/// Converts a relative power level in dB to a linear power fraction.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power fraction to dB. Non-positive input maps to
/// negative infinity rather than NaN so callers can clamp with `max`.
pub fn linear_to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        10.0 * linear.log10()
    } else {
        f64::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for db in [-30.0, -3.64, -0.215, 0.0, 5.0] {
            let back = linear_to_db(db_to_linear(db));
            assert!((back - db).abs() < 1e-12, "{db} -> {back}");
        }
    }

    #[test]
    fn half_power_is_three_db() {
        assert!((db_to_linear(-3.0103) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn zero_power_is_floor() {
        assert_eq!(linear_to_db(0.0), f64::NEG_INFINITY);
    }
}
