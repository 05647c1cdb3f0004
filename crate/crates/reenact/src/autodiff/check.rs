//! Finite-difference utilities for validating analytic gradients.

/// Central difference `(f(+h) - f(-h)) / 2h` of a scalar probe.
///
/// The probe receives the offset to add to the coordinate under test and
/// must re-evaluate the full function.
pub fn central_diff_grad(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Symmetric relative error with an absolute floor so that near-zero pairs
/// compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        // d/dx (3x^2 + 2x) at x=1.5 is 11; central differences are exact on
        // polynomials of degree <= 2 up to rounding.
        let x0 = 1.5;
        let g = central_diff_grad(1e-4, |h| {
            let x = x0 + h;
            3.0 * x * x + 2.0 * x
        });
        assert!((g - 11.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floors_near_zero() {
        assert!(relative_error(0.0, 1e-12) < 1e-4);
        assert!(relative_error(1.0, 2.0) > 0.3);
    }
}
