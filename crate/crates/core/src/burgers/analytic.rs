use crate::error::{Error, Result};

pub const DOMAIN_LENGTH: f64 = 1.0;

/// Beyond this exponent the denominator exceeds `e^700` and the solution is returned as 0.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

/// Closed-form solution
/// `u = (x/(t+1)) / (1 + sqrt((t+1)/t0)·exp(Re·x²/(4t+4)))` with `t0 = exp(Re/8)`.
///
/// The square root and the exponential are merged into a single exponent
/// `½ln(t+1) − Re/16 + Re·x²/(4t+4)`, which keeps the evaluation finite for any `Re`.
pub fn analytic_u(x: f64, t: f64, reynolds: f64) -> Result<f64> {
    if !(0.0..=DOMAIN_LENGTH).contains(&x)
        || !(t >= 0.0)
        || !t.is_finite()
        || !(reynolds > 0.0)
        || !reynolds.is_finite()
    {
        return Err(Error::Domain(format!(
            "analytic_u needs 0 ≤ x ≤ {DOMAIN_LENGTH}, t ≥ 0, Re > 0 (got x={x}, t={t}, Re={reynolds})"
        )));
    }
    let tp1 = t + 1.0;
    let exponent = 0.5 * tp1.ln() - reynolds / 16.0 + reynolds * x * x / (4.0 * tp1);
    if exponent > OVERFLOW_EXPONENT {
        return Ok(0.0);
    }
    Ok((x / tp1) / (1.0 + exponent.exp()))
}

/// Initial condition `u(x, 0) = x / (1 + sqrt(1/t0)·exp(Re·x²/4))`, written independently
/// of [`analytic_u`].
pub fn initial_u(x: f64, reynolds: f64) -> f64 {
    let exponent = -reynolds / 16.0 + reynolds * x * x / 4.0;
    if exponent > OVERFLOW_EXPONENT {
        return 0.0;
    }
    x / (1.0 + (-reynolds / 16.0).exp() * (reynolds * x * x / 4.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishes_at_origin() {
        for re in [10.0, 100.0, 1050.0, 2450.0] {
            for t in [0.0, 0.3, 2.0] {
                assert_eq!(analytic_u(0.0, t, re).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn reduces_to_initial_condition() {
        for re in [50.0, 100.0, 800.0] {
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                let a = analytic_u(x, 0.0, re).unwrap();
                let b = initial_u(x, re);
                assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300) + 1e-300, "x={x} Re={re}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn finite_for_large_reynolds() {
        for re in [2000.0, 2450.0, 1e5] {
            for i in 0..=128 {
                let x = i as f64 / 128.0;
                for t in [0.0, 1.0, 2.0] {
                    let u = analytic_u(x, t, re).unwrap();
                    assert!(u.is_finite() && u >= 0.0);
                }
            }
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(analytic_u(-0.1, 0.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(analytic_u(1.1, 0.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(analytic_u(0.5, -1.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(analytic_u(0.5, 1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn right_boundary_is_only_approximately_zero() {
        // Holds at t = 0 for every Re ≥ 100, and over the whole time window once Re ≥ 1000.
        for re in [100.0, 500.0, 2000.0] {
            assert!(analytic_u(1.0, 0.0, re).unwrap() <= 1e-6);
        }
        for re in [1000.0, 1500.0, 2000.0] {
            for j in 0..=100 {
                assert!(analytic_u(1.0, j as f64 * 0.02, re).unwrap() <= 1e-6);
            }
        }
        // At low Re the closed form leaks through the boundary late in the window.
        let leak = analytic_u(1.0, 2.0, 100.0).unwrap();
        assert!((leak - 0.02237).abs() < 1e-4, "{leak}");
    }
}
