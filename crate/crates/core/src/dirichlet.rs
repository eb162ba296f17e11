//! The Dirichlet distribution over class-probability vectors.
//!
//! [`DirichletParams`] is what a network emits for one input: the
//! concentration vector `α` and its strength `α₀ = Σ α_j`. The predictive
//! class distribution is `α / α₀`; total uncertainty is its entropy and the
//! epistemic part is the mutual information between the label and the
//! probability vector.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::Matrix;
use crate::rng::RandomStream;
use crate::specfun::{raw, MIN_ARGUMENT};

/// Tolerance on `|Σ p_j − 1|` for [`ProbVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Mean components below this are treated as exact zeros in entropy sums.
const NEGLIGIBLE_MASS: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletParams {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletParams {
    /// Accepts any `α_j > 0`; `K ≥ 2`.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a Dirichlet needs at least 2 classes, got {}",
                alpha.len()
            )));
        }
        if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a < MIN_ARGUMENT) {
            return Err(domain(format!("concentration {bad} must be finite and positive")));
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    /// Constructor for the training path: every `α_j ≥ 1`.
    pub fn with_unit_floor(alpha: Vec<f64>) -> Result<Self> {
        if let Some(bad) = alpha.iter().find(|a| **a < 1.0) {
            return Err(domain(format!("training-path concentration {bad} is below 1")));
        }
        Self::new(alpha)
    }

    /// The flat Dirichlet `α = 1`.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    #[inline]
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    #[inline]
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn into_alpha(self) -> Vec<f64> {
        self.alpha
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.alpha.len() {
            return Err(Error::IndexOutOfRange { index: class, len: self.alpha.len() });
        }
        Ok(())
    }

    /// `ln B(α) = Σ ln Γ(α_j) − ln Γ(α₀)`
    pub fn log_beta(&self) -> f64 {
        self.alpha.iter().map(|&a| raw::log_gamma(a)).sum::<f64>() - raw::log_gamma(self.alpha0)
    }

    /// Log density at `p`. Boundary points are allowed where the density is
    /// finite or vanishes (`α_j ≥ 1`), rejected where it diverges.
    pub fn log_pdf(&self, p: &ProbVector) -> Result<f64> {
        self.check_dim(p.len())?;
        let mut acc = 0.0;
        for (&a, &pj) in self.alpha.iter().zip(p.as_slice()) {
            if pj == 0.0 {
                if a < 1.0 {
                    return Err(domain("density diverges at a boundary point with α_j < 1"));
                }
                if a > 1.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                continue;
            }
            acc += (a - 1.0) * pj.ln();
        }
        Ok(acc - self.log_beta())
    }

    /// Expected class distribution `α_j / α₀`.
    pub fn predictive_mean(&self) -> ProbVector {
        ProbVector(self.alpha.iter().map(|a| a / self.alpha0).collect())
    }

    /// Entropy of the predictive mean, in nats.
    pub fn predictive_entropy(&self) -> f64 {
        let h: f64 = self
            .alpha
            .iter()
            .map(|a| a / self.alpha0)
            .filter(|&m| m >= NEGLIGIBLE_MASS)
            .map(|m| -m * m.ln())
            .sum();
        h.clamp(0.0, (self.alpha.len() as f64).ln())
    }

    /// Mutual information between the label and the probability vector.
    pub fn mutual_information(&self) -> f64 {
        let psi_total = raw::digamma(self.alpha0 + 1.0);
        let mi: f64 = self
            .alpha
            .iter()
            .filter_map(|&a| {
                let m = a / self.alpha0;
                (m >= NEGLIGIBLE_MASS).then(|| -m * (m.ln() - raw::digamma(a + 1.0) + psi_total))
            })
            .sum();
        // float noise around zero for very concentrated α
        mi.max(0.0)
    }

    /// Fisher information of the Dirichlet with respect to `α`:
    /// `diag(ψ⁽¹⁾(α_i)) − ψ⁽¹⁾(α₀) 𝟙`.
    pub fn fisher_information(&self) -> Matrix {
        let k = self.alpha.len();
        let shared = raw::trigamma(self.alpha0);
        let mut j = Matrix::zeros(k, k);
        for r in 0..k {
            for c in 0..k {
                j.set(r, c, -shared);
            }
            j.set(r, r, raw::trigamma(self.alpha[r]) - shared);
        }
        j
    }

    /// `n` independent draws via normalized Gamma variates.
    pub fn sample(&self, rng: &mut RandomStream, n: usize) -> Result<Vec<ProbVector>> {
        let gammas = self
            .alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| domain(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(n);
        let mut buf = vec![0.0; self.alpha.len()];
        for _ in 0..n {
            out.push(ProbVector(draw(&gammas, rng, &mut buf).to_vec()));
        }
        Ok(out)
    }

    /// Streaming variant of [`sample`](Self::sample): calls `f` with each
    /// draw without allocating per sample.
    pub fn sample_with<F: FnMut(&[f64])>(&self, rng: &mut RandomStream, n: usize, mut f: F) -> Result<()> {
        let gammas = self
            .alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).map_err(|e| domain(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut buf = vec![0.0; self.alpha.len()];
        for _ in 0..n {
            f(draw(&gammas, rng, &mut buf));
        }
        Ok(())
    }

    /// `KL(self ∥ other)`.
    pub fn kl_divergence(&self, other: &DirichletParams) -> Result<f64> {
        self.check_dim(other.num_classes())?;
        let psi0 = raw::digamma(self.alpha0);
        let cross: f64 = self
            .alpha
            .iter()
            .zip(&other.alpha)
            .map(|(&a, &b)| (a - b) * (raw::digamma(a) - psi0))
            .sum();
        Ok((other.log_beta() - self.log_beta() + cross).max(0.0))
    }

    /// Local quadratic approximation of the order-`u` Rényi divergence of the
    /// auxiliary Dirichlet (correct class reset to 1) from the flat
    /// Dirichlet, using the full Fisher matrix including cross terms.
    pub fn renyi_local_approx(&self, correct_class: usize, u: f64) -> Result<f64> {
        self.check_class(correct_class)?;
        if !(u.is_finite() && u > 0.0) {
            return Err(domain(format!("Rényi order {u} must be positive")));
        }
        let aux = self.auxiliary(correct_class);
        let displacement: Vec<f64> = aux.alpha.iter().map(|a| a - 1.0).collect();
        Ok(0.5 * u * aux.fisher_information().quadratic_form(&displacement))
    }

    /// Copy of `self` with the correct-class concentration set to 1.
    pub fn auxiliary(&self, correct_class: usize) -> DirichletParams {
        let mut alpha = self.alpha.clone();
        alpha[correct_class] = 1.0;
        let alpha0 = alpha.iter().sum();
        DirichletParams { alpha, alpha0 }
    }

    /// Conjugate update after observing one sample of class `class`.
    pub fn observe(&self, class: usize) -> Result<DirichletParams> {
        self.check_class(class)?;
        let mut alpha = self.alpha.clone();
        alpha[class] += 1.0;
        DirichletParams::new(alpha)
    }

    fn check_dim(&self, k: usize) -> Result<()> {
        if k != self.alpha.len() {
            return Err(Error::DimensionMismatch { expected: self.alpha.len(), actual: k });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for DirichletParams {
    type Error = Error;

    fn try_from(alpha: Vec<f64>) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<DirichletParams> for Vec<f64> {
    fn from(d: DirichletParams) -> Self {
        d.alpha
    }
}

fn draw<'a, R: Rng + ?Sized>(gammas: &[Gamma<f64>], rng: &mut R, buf: &'a mut [f64]) -> &'a [f64] {
    let mut total = 0.0;
    for (slot, g) in buf.iter_mut().zip(gammas) {
        *slot = g.sample(rng);
        total += *slot;
    }
    for slot in buf.iter_mut() {
        *slot /= total;
    }
    buf
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(domain("probabilities must be finite and non-negative"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(domain(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}
