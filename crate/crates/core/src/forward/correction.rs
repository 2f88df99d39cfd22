//! Correction arithmetic for simulated closed-loop experiments and random
//! mixed-mode aberrations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optics::{wavefront_rms, WavefrontAberration};

/// Residual aberration after applying `corrective` to `sample`: the
/// coefficient-wise sum. A perfect corrective is the negated sample.
pub fn compose_correction(sample: &WavefrontAberration, corrective: &WavefrontAberration) -> WavefrontAberration {
    let mut out = sample.clone();
    for (&j, &v) in &corrective.coefficients {
        *out.coefficients.entry(j).or_insert(0.0) += v;
    }
    out
}

/// Mode families used for random aberrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSet {
    /// Primary astigmatism, vertical coma and trefoil.
    Low,
    /// n = 5: secondary trefoil and secondary vertical coma.
    High,
    /// A single ANSI mode.
    Fixed(u32),
}

impl ModeSet {
    pub fn modes(&self) -> Vec<u32> {
        match self {
            ModeSet::Low => vec![3, 5, 6, 7, 9],
            ModeSet::High => vec![16, 17, 19],
            ModeSet::Fixed(j) => vec![*j],
        }
    }
}

/// Coefficients drawn uniformly in [-1, 1] over `mode_set`, rescaled so the
/// wavefront RMS equals `rms_target`.
pub fn random_mixed_aberration(rms_target: f64, mode_set: ModeSet, seed: u64) -> WavefrontAberration {
    assert!(rms_target >= 0.0, "rms target must be non-negative");
    if rms_target == 0.0 {
        return WavefrontAberration::zero();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = mode_set.modes();
    let raw: Vec<f64> = loop {
        let v: Vec<f64> = modes.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            break v;
        }
    };
    let w = WavefrontAberration::from_pairs(modes.iter().copied().zip(raw));
    let k = rms_target / wavefront_rms(&w);
    w.scaled(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::ZernikeIndex;

    #[test]
    fn perfect_correction_cancels() {
        let s = WavefrontAberration::from_pairs([(7, 0.15), (3, -0.02)]);
        let r = compose_correction(&s, &s.negated());
        assert!(wavefront_rms(&r) < 1e-15);
    }

    #[test]
    fn empty_corrective_is_identity() {
        let s = WavefrontAberration::from_pairs([(7, 0.15)]);
        assert_eq!(compose_correction(&s, &WavefrontAberration::zero()), s);
    }

    #[test]
    fn partial_correction_residual() {
        let r = compose_correction(
            &WavefrontAberration::from_pairs([(7, 0.15)]),
            &WavefrontAberration::from_pairs([(7, -0.10)]),
        );
        assert!((wavefront_rms(&r) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn random_aberration_has_exact_rms() {
        assert_eq!(wavefront_rms(&random_mixed_aberration(0.0, ModeSet::Low, 1)), 0.0);
        for seed in 0..5 {
            let w = random_mixed_aberration(0.31, ModeSet::Low, seed);
            assert!((wavefront_rms(&w) - 0.31).abs() < 1e-12);
            assert!(w.coefficients.keys().all(|&j| j != 4));
        }
    }

    #[test]
    fn high_set_only_fifth_order() {
        let w = random_mixed_aberration(0.2, ModeSet::High, 7);
        assert!(w.modes().all(|m: ZernikeIndex| m.n == 5));
    }

    #[test]
    fn seeds_reproduce() {
        assert_eq!(random_mixed_aberration(0.1, ModeSet::Low, 3), random_mixed_aberration(0.1, ModeSet::Low, 3));
        assert_ne!(random_mixed_aberration(0.1, ModeSet::Low, 3), random_mixed_aberration(0.1, ModeSet::Low, 4));
    }
}
