//! Communication-cost model for the split deployment.

use crate::error::{Error, Result};

/// Seconds to push `link_count` links of `bits_per_link` bits each through a
/// channel of `bandwidth_bits_per_s`.
///
/// The product is taken in 128-bit integer arithmetic before the final
/// division, so counts near `u64::MAX` do not overflow.
pub fn comm_cost(link_count: u64, bits_per_link: u64, bandwidth_bits_per_s: u64) -> Result<f64> {
    if bandwidth_bits_per_s == 0 {
        return Err(Error::Contract(
            "bandwidth of zero bits per second".into(),
        ));
    }
    let total_bits = u128::from(link_count) * u128::from(bits_per_link);
    Ok(total_bits as f64 / bandwidth_bits_per_s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    #[test]
    fn known_costs_are_exact() {
        // 193,600 links at 1 bit over 1 Mib/s — all quantities are dyadic,
        // so the result is exactly representable.
        assert_eq!(comm_cost(193_600, 1, MIB).unwrap(), 0.18463134765625);
        assert_eq!(comm_cost(186_624, 1, MIB).unwrap(), 0.177978515625);
    }

    #[test]
    fn cost_is_linear_in_links_and_bits() {
        let base = comm_cost(1000, 8, MIB).unwrap();
        assert_eq!(comm_cost(2000, 8, MIB).unwrap(), 2.0 * base);
        assert_eq!(comm_cost(1000, 16, MIB).unwrap(), 2.0 * base);
        assert_eq!(comm_cost(1000, 8, 2 * MIB).unwrap(), base / 2.0);
    }

    #[test]
    fn zero_traffic_costs_nothing() {
        assert_eq!(comm_cost(0, 64, MIB).unwrap(), 0.0);
        assert_eq!(comm_cost(10, 0, MIB).unwrap(), 0.0);
    }

    #[test]
    fn zero_bandwidth_is_rejected() {
        assert!(matches!(
            comm_cost(1, 1, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn huge_products_do_not_overflow() {
        let cost = comm_cost(u64::MAX, 64, MIB).unwrap();
        assert!(cost.is_finite());
        assert!(cost > 0.0);
    }
}
