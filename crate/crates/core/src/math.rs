//! Float helpers for a no_std build.

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Rounds to the nearest integer, resolving exact halves downwards
/// (`4.5 -> 4`, `-0.5 -> -1`).
#[inline]
pub(crate) fn round_half_down(x: f64) -> f64 {
    libm::ceil(x - 0.5)
}

/// `ceil(a / b)` for positive integers.
#[inline]
pub(crate) fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Round-half-down of the rational `num / den` (`den > 0`, `num >= 0`).
#[inline]
pub(crate) fn round_half_down_ratio(num: u64, den: u64) -> u64 {
    // ceil(num/den - 1/2) = ceil((2 num - den) / (2 den))
    let twice = 2 * num;
    if twice <= den {
        0
    } else {
        div_ceil(twice - den, 2 * den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_go_down() {
        assert_eq!(round_half_down(4.5), 4.0);
        assert_eq!(round_half_down(4.51), 5.0);
        assert_eq!(round_half_down(0.5), 0.0);
        assert_eq!(round_half_down(-0.5), -1.0);
    }

    #[test]
    fn ratio_matches_float() {
        for den in 1..40u64 {
            for num in 0..400u64 {
                let expected = round_half_down(num as f64 / den as f64) as u64;
                assert_eq!(round_half_down_ratio(num, den), expected, "{num}/{den}");
            }
        }
    }
}
