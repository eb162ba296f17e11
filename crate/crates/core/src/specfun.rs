//! Log-gamma and the first three polygamma functions on the positive reals.
//!
//! Every kernel shifts its argument upward with the appropriate recurrence
//! until it clears a threshold and then evaluates an asymptotic series.
//! Gamma ratios are formed as differences of logarithms so that Dirichlet
//! strengths up to ~1e6 never overflow.
//!
//! The checked functions reject arguments below [`MIN_ARGUMENT`] as well as
//! non-finite input. Hot loops that have already validated their inputs use
//! the unchecked variants in [`raw`].

use crate::error::{domain, Result};

/// Smallest accepted argument. Anything below is a domain error, not clamped.
pub const MIN_ARGUMENT: f64 = 1e-12;

/// A strictly positive, finite real.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        check(value)?;
        Ok(Self(value))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = crate::Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

#[inline]
fn check(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain(format!("non-finite argument {x}")));
    }
    if x < MIN_ARGUMENT {
        return Err(domain(format!("argument {x} is not positive")));
    }
    Ok(x)
}

/// `ln Γ(x)`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check(x).map(raw::log_gamma)
}

/// Digamma `ψ(x) = d/dx ln Γ(x)`.
pub fn digamma(x: f64) -> Result<f64> {
    check(x).map(raw::digamma)
}

/// Trigamma `ψ⁽¹⁾(x)`. Always positive.
pub fn trigamma(x: f64) -> Result<f64> {
    check(x).map(raw::trigamma)
}

/// Tetragamma `ψ⁽²⁾(x)`. Always negative.
pub fn tetragamma(x: f64) -> Result<f64> {
    check(x).map(raw::tetragamma)
}

/// `ln Γ(x + q) − ln Γ(x)` for `x > 0`, `q ≥ 0`, without forming either
/// log-gamma value separately.
pub fn log_gamma_ratio(x: f64, q: f64) -> Result<f64> {
    check(x)?;
    if !(q.is_finite() && q >= 0.0) {
        return Err(domain(format!("shift {q} must be finite and non-negative")));
    }
    Ok(raw::log_gamma_ratio(x, q))
}

/// `q`-th moment of `Beta(a, b)`: `B(a+q, b) / B(a, b)`.
pub fn beta_moment(a: f64, b: f64, q: f64) -> Result<f64> {
    check(a)?;
    check(b)?;
    check(q)?;
    Ok(raw::beta_moment(a, b, q))
}

/// Kernels without argument validation. Callers guarantee `x ≥ MIN_ARGUMENT`.
pub mod raw {
    use std::f64::consts::PI;

    const LN_GAMMA_SHIFT: f64 = 10.0;
    const POLYGAMMA_SHIFT: f64 = 8.0;
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

    /// Bernoulli numbers B_2, B_4, ..., B_20.
    const BERNOULLI: [f64; 10] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
        43867.0 / 798.0,
        -174611.0 / 330.0,
    ];

    /// Stirling correction `ln Γ(y) − [(y − ½) ln y − y + ½ ln 2π]` for y ≥ 10.
    #[inline]
    fn stirling_tail(y: f64) -> f64 {
        let inv = 1.0 / y;
        let inv2 = inv * inv;
        let mut acc = 0.0;
        // Horner over k = 10..1 of B_2k / (2k (2k-1)) * y^{-(2k-1)}
        for k in (1..=BERNOULLI.len()).rev() {
            let kk = 2.0 * k as f64;
            acc = acc * inv2 + BERNOULLI[k - 1] / (kk * (kk - 1.0));
        }
        acc * inv
    }

    pub fn log_gamma(x: f64) -> f64 {
        if x == 1.0 || x == 2.0 {
            return 0.0;
        }
        let mut y = x;
        let mut prod = 1.0;
        while y < LN_GAMMA_SHIFT {
            prod *= y;
            y += 1.0;
        }
        let base = (y - 0.5) * y.ln() - y + HALF_LN_2PI + stirling_tail(y);
        if prod == 1.0 {
            base
        } else {
            base - prod.ln()
        }
    }

    pub fn log_gamma_ratio(x: f64, q: f64) -> f64 {
        if q == 0.0 {
            return 0.0;
        }
        let mut y = x;
        let mut acc = 0.0;
        while y < LN_GAMMA_SHIFT {
            acc -= (q / y).ln_1p();
            y += 1.0;
        }
        let yq = y + q;
        acc + (y - 0.5) * (q / y).ln_1p() + q * yq.ln() - q + stirling_tail(yq) - stirling_tail(y)
    }

    #[inline]
    pub fn beta_moment(a: f64, b: f64, q: f64) -> f64 {
        (log_gamma_ratio(a, q) - log_gamma_ratio(a + b, q)).exp()
    }

    pub fn digamma(x: f64) -> f64 {
        let mut y = x;
        let mut acc = 0.0;
        while y < POLYGAMMA_SHIFT {
            acc -= 1.0 / y;
            y += 1.0;
        }
        let inv2 = 1.0 / (y * y);
        let mut series = 0.0;
        for k in (1..=BERNOULLI.len()).rev() {
            series = series * inv2 + BERNOULLI[k - 1] / (2.0 * k as f64);
        }
        acc + y.ln() - 0.5 / y - series * inv2
    }

    pub fn trigamma(x: f64) -> f64 {
        let mut y = x;
        let mut acc = 0.0;
        while y < POLYGAMMA_SHIFT {
            acc += 1.0 / (y * y);
            y += 1.0;
        }
        let inv = 1.0 / y;
        let inv2 = inv * inv;
        let mut series = 0.0;
        for k in (1..=BERNOULLI.len()).rev() {
            series = series * inv2 + BERNOULLI[k - 1];
        }
        acc + inv + 0.5 * inv2 + series * inv2 * inv
    }

    pub fn tetragamma(x: f64) -> f64 {
        let mut y = x;
        let mut acc = 0.0;
        while y < POLYGAMMA_SHIFT {
            acc -= 2.0 / (y * y * y);
            y += 1.0;
        }
        let inv = 1.0 / y;
        let inv2 = inv * inv;
        let mut series = 0.0;
        for k in (1..=BERNOULLI.len()).rev() {
            series = series * inv2 + (2 * k + 1) as f64 * BERNOULLI[k - 1];
        }
        acc - inv2 - inv2 * inv - series * inv2 * inv2
    }

    /// `π²/6`, handy for tests and callers that special-case unit arguments.
    pub const TRIGAMMA_ONE: f64 = PI * PI / 6.0;
}
