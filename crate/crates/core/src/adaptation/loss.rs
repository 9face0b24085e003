//! Weighted cross-entropy for FP classification: positive-class (uh/um)
//! terms are scaled by sigma to counter label sparsity.

use crate::corpus::fp::FpTag;
use crate::error::{Error, Result};

/// Probability floor before the log, so a zero at the labeled class yields a
/// large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

/// L = −y0·log s0 − σ·Σ yi·log si for the one-hot label y. With σ=1 this is
/// standard cross-entropy.
pub fn weighted_ce_loss(probs: &[f64; 3], label: FpTag, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if probs.iter().any(|p| !(0.0..=1.0 + 1e-6).contains(p)) {
        return Err(Error::Data(format!("invalid probability triple {probs:?}")));
    }
    let (p, weight) = match label {
        FpTag::None => (probs[0], 1.0),
        FpTag::Uh => (probs[1], sigma),
        FpTag::Um => (probs[2], sigma),
    };
    Ok(-weight * p.max(PROB_FLOOR).ln())
}

/// Mean weighted CE over a tagged sequence.
pub fn weighted_ce_mean(probs: &[[f64; 3]], labels: &[FpTag], sigma: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "probs ({}) and labels ({}) disagree",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        total += weighted_ce_loss(p, l, sigma)?;
    }
    Ok(total / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_correct_none_is_zero() {
        let l = weighted_ce_loss(&[1.0, 0.0, 0.0], FpTag::None, 5.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn published_hand_case() {
        let l = weighted_ce_loss(&[0.25, 0.5, 0.25], FpTag::Uh, 2.0).unwrap();
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn sigma_one_is_standard_ce() {
        let probs = [0.7, 0.2, 0.1];
        for (label, idx) in [(FpTag::None, 0), (FpTag::Uh, 1), (FpTag::Um, 2)] {
            let l = weighted_ce_loss(&probs, label, 1.0).unwrap();
            assert!((l + probs[idx].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_sigma_on_positive_labels() {
        let probs = [0.6, 0.3, 0.1];
        for label in [FpTag::Uh, FpTag::Um] {
            let base = weighted_ce_loss(&probs, label, 1.0).unwrap();
            for sigma in [2.0, 5.0, 17.5] {
                let l = weighted_ce_loss(&probs, label, sigma).unwrap();
                assert!((l - sigma * base).abs() < 1e-12);
            }
        }
        // Negative labels are unaffected by sigma.
        let a = weighted_ce_loss(&probs, FpTag::None, 1.0).unwrap();
        let b = weighted_ce_loss(&probs, FpTag::None, 9.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let l = weighted_ce_loss(&[0.0, 1.0, 0.0], FpTag::None, 1.0).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(l.is_finite());
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(weighted_ce_loss(&[1.0, 0.0, 0.0], FpTag::None, 0.0).is_err());
    }
}
