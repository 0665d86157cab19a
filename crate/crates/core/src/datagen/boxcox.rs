use crate::error::{Error, Result};
use crate::randmath::GaussHermite;
use crate::scalar::Scalar;

/// Box-Cox transform `(x^λ - 1)/λ`, or `ln x` at `λ = 0`.
pub fn box_cox<T: Scalar>(x: T, lambda: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::Domain(format!("box-cox needs x > 0, got {x}")));
    }
    let lx = x.ln();
    if lambda == T::zero() {
        Ok(lx)
    } else {
        Ok((lambda * lx).exp_m1() / lambda)
    }
}

/// Inverse Box-Cox `(λw + 1)^(1/λ)`, or `e^w` at `λ = 0`.
pub fn inverse_box_cox<T: Scalar>(w: T, lambda: T) -> Result<T> {
    if lambda == T::zero() {
        return Ok(w.exp());
    }
    let base = lambda * w + T::one();
    if !(base > T::zero()) {
        return Err(Error::Domain(format!(
            "inverse box-cox needs λw + 1 > 0, got {base} (w = {w}, λ = {lambda})"
        )));
    }
    Ok(((lambda * w).ln_1p() / lambda).exp())
}

/// Inverse Box-Cox with the base clamped at zero, `max(λw + 1, 0)^(1/λ)`.
///
/// Total over the real line, which expectations over a normal argument
/// need: the tail below `-1/λ` would otherwise be undefined.
pub fn inverse_box_cox_truncated<T: Scalar>(w: T, lambda: T) -> T {
    if lambda == T::zero() {
        return w.exp();
    }
    let base = lambda * w + T::one();
    if base > T::zero() {
        ((lambda * w).ln_1p() / lambda).exp()
    } else if lambda > T::zero() {
        T::zero()
    } else {
        T::infinity()
    }
}

/// Per-individual usual intake `E[f⁻¹(η + ε)]`, `ε ~ N(0, σ_ε²)`.
///
/// With no transform (`lambda = None`) this is `η` itself.
pub fn true_usual_intake<T: Scalar>(
    eta: T,
    lambda: Option<T>,
    sigma_eps2: T,
    rule: &GaussHermite,
) -> Result<T> {
    match lambda {
        None => Ok(eta),
        Some(l) => rule.expectation(|w| inverse_box_cox_truncated(w, l), eta, sigma_eps2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_values() {
        assert_eq!(box_cox(1.0_f64, 0.35).unwrap(), 0.0);
        assert!((box_cox(std::f64::consts::E, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((box_cox(4.0_f64, 0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(box_cox(0.0_f64, 0.5).is_err());
        assert!(box_cox(-1.0_f64, 0.0).is_err());
    }

    #[test]
    fn inverse_values() {
        assert_eq!(inverse_box_cox(0.0_f64, 0.35).unwrap(), 1.0);
        assert!((inverse_box_cox(2.0_f64, 0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(inverse_box_cox(-3.0_f64, 0.5).is_err());
        assert_eq!(inverse_box_cox_truncated(-3.0_f64, 0.5), 0.0);
    }

    #[test]
    fn identity_intake_is_eta() {
        let rule = GaussHermite::new(40);
        assert_eq!(true_usual_intake(36.0_f64, None, 38.0, &rule).unwrap(), 36.0);
    }

    #[test]
    fn degenerate_error_intake_is_inverse() {
        let rule = GaussHermite::new(40);
        let x = true_usual_intake(5.0_f64, Some(0.35), 0.0, &rule).unwrap();
        assert!((x - inverse_box_cox(5.0, 0.35).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(x in 1e-3f64..1e4, lambda in -1.5f64..2.5) {
            let w = box_cox(x, lambda).unwrap();
            let back = inverse_box_cox(w, lambda).unwrap();
            prop_assert!((back - x).abs() < 1e-10 * x.max(1.0));
        }
    }
}
