//! Small numeric helpers that work without `std`.

/// Standard normal cumulative distribution function.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * core::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Binomial coefficient as a float; exact for the sizes used here.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_symmetry_and_known_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        for z in [-3.0, -0.7, 0.1, 2.5] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn binomial_rows() {
        assert_eq!(binomial(20, 1), 20.0);
        assert_eq!(binomial(20, 3), 1140.0);
        assert_eq!(binomial(7, 7), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
    }
}
