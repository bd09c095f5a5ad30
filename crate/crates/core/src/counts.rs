//! Lattice index helpers shared by the bound calculus and quantile code.
//!
//! Quantile indices and the k = ⌊(N+1)α̂⌋ count are defined on an integer
//! lattice, but arrive through float products like (N+1)·α̂. A ±1e-9 tolerance
//! keeps exact-lattice inputs from drifting an index due to representation
//! noise; it is far below the 1/(N+1) lattice spacing for any realistic N.

/// Ceil with ±1e-9 tolerance around exact integers.
pub(crate) fn ceil_count(x: f64) -> f64 {
    (x - 1e-9).ceil()
}

/// Floor with ±1e-9 tolerance around exact integers.
pub(crate) fn floor_count(x: f64) -> f64 {
    (x + 1e-9).floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerates_representation_noise() {
        // 10 × 0.3 = 2.9999999999999996 in f64 but means 3.
        assert_eq!(floor_count(10.0 * 0.3), 3.0);
        assert_eq!(ceil_count(10.0 * 0.3), 3.0);
        // Clearly fractional values are unaffected.
        assert_eq!(floor_count(5.5), 5.0);
        assert_eq!(ceil_count(5.5), 6.0);
    }
}
