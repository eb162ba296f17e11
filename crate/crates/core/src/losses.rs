//! Per-example losses on a Dirichlet output and their gradients in α.
//!
//! The main objective is the max-norm classification loss
//!
//! ```text
//! F = (Γ(α₀)/Γ(α₀+p))^{1/p} · (μ(S) + Σ_{k≠c} μ(α_k))^{1/p},
//! μ(x) = Γ(x+p)/Γ(x),  S = Σ_{k≠c} α_k
//! ```
//!
//! which is `(E‖y − p‖_p^p)^{1/p}` under `p ~ Dir(α)` and upper-bounds the
//! expected max-norm error. It is paired with the information regularizer
//!
//! ```text
//! R = ½ Σ_{j≠c} (α_j − 1)² (ψ⁽¹⁾(α_j) − ψ⁽¹⁾(α̃₀)),  α̃₀ = 1 + S
//! ```
//!
//! that pulls off-class concentrations toward 1. Everything is evaluated in
//! log space; μ never appears outside a log-sum-exp.
//!
//! Baselines (negative log marginal likelihood, Bayes-risk cross-entropy,
//! evidential mean-square, and KL to a fixed target Dirichlet) are here too
//! so that every training objective shares one interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{domain, Error, Result};
use crate::linalg::compensated_sum;
use crate::specfun::raw;

/// Largest magnitude a log-space value may take before exponentiation.
pub const LOG_EXP_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub p_norm: f64,
    pub lambda_max: f64,
    pub kl_beta: f64,
}

impl LossConfig {
    pub fn new(p_norm: f64, lambda_max: f64, kl_beta: f64) -> Result<Self> {
        let cfg = Self { p_norm, lambda_max, kl_beta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fashion-MNIST-like defaults: `p = 4`, `λ = 0.5`.
    pub fn image_defaults() -> Self {
        Self { p_norm: 4.0, lambda_max: 0.5, kl_beta: 100.0 }
    }

    /// CIFAR-like defaults: `p = 4`, `λ = 0.3`.
    pub fn natural_image_defaults() -> Self {
        Self { lambda_max: 0.3, ..Self::image_defaults() }
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p_norm)?;
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_max {} must be >= 0", self.lambda_max)));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta > 0.0) {
            return Err(Error::InvalidArgument(format!("kl_beta {} must be > 0", self.kl_beta)));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::image_defaults()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p_norm {p} must be >= 1")));
    }
    Ok(())
}

/// The auxiliary concentration vector: correct class nulled to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxConcentration {
    alpha_tilde: Vec<f64>,
    alpha_tilde0: f64,
}

impl AuxConcentration {
    pub fn new(d: &DirichletParams, correct_class: usize) -> Result<Self> {
        d.check_class(correct_class)?;
        let mut alpha_tilde = d.alpha().to_vec();
        alpha_tilde[correct_class] = 1.0;
        let off: f64 = off_class_sum(d.alpha(), correct_class);
        Ok(Self { alpha_tilde, alpha_tilde0: 1.0 + off })
    }

    pub fn alpha_tilde(&self) -> &[f64] {
        &self.alpha_tilde
    }

    pub fn alpha_tilde0(&self) -> f64 {
        self.alpha_tilde0
    }
}

#[inline]
fn off_class_sum(alpha: &[f64], c: usize) -> f64 {
    alpha.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, a)| a).sum()
}

// ---------------------------------------------------------------------------
// Max-norm classification loss

struct IadTerms {
    log_f: f64,
    /// log μ(S), then log μ(α_k) for k ≠ c, in class order
    log_mu: Vec<f64>,
    log_sum: f64,
    off_sum: f64,
}

fn iad_terms(d: &DirichletParams, c: usize, p: f64) -> Result<IadTerms> {
    d.check_class(c)?;
    check_p(p)?;
    let alpha = d.alpha();
    let off_sum = off_class_sum(alpha, c);
    let mut log_mu = Vec::with_capacity(alpha.len());
    log_mu.push(raw::log_gamma_ratio(off_sum, p));
    log_mu.extend(alpha.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, &a)| raw::log_gamma_ratio(a, p)));
    let log_sum = log_sum_exp(&log_mu);
    let log_f = (log_sum - raw::log_gamma_ratio(d.alpha0(), p)) / p;
    if !log_f.is_finite() || log_f.abs() > LOG_EXP_LIMIT {
        return Err(Error::Overflow { context: "iad_loss", value: log_f });
    }
    Ok(IadTerms { log_f, log_mu, log_sum, off_sum })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// The max-norm classification loss `F` for one example.
pub fn iad_loss(d: &DirichletParams, correct_class: usize, p_norm: f64) -> Result<f64> {
    Ok(iad_terms(d, correct_class, p_norm)?.log_f.exp())
}

/// `∂F/∂α_j` for every class.
pub fn iad_loss_grad_alpha(d: &DirichletParams, correct_class: usize, p_norm: f64) -> Result<Vec<f64>> {
    Ok(iad_value_grad(d, correct_class, p_norm)?.1)
}

fn iad_value_grad(d: &DirichletParams, c: usize, p: f64) -> Result<(f64, Vec<f64>)> {
    let t = iad_terms(d, c, p)?;
    let f = t.log_f.exp();
    let nu = |x: f64| raw::digamma(x + p) - raw::digamma(x);
    let head = -nu(d.alpha0()) / p;
    let weight = |log_mu: f64| (log_mu - t.log_sum).exp();
    let shared = weight(t.log_mu[0]) * nu(t.off_sum);
    let mut own = t.log_mu[1..].iter();
    let grad = d
        .alpha()
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            if k == c {
                f * head
            } else {
                let w = weight(*own.next().expect("one weight per off class"));
                f * (head + (shared + w * nu(a)) / p)
            }
        })
        .collect();
    Ok((f, grad))
}

// ---------------------------------------------------------------------------
// Information regularizer

fn check_off_class_floor(d: &DirichletParams, c: usize) -> Result<()> {
    d.check_class(c)?;
    for (k, &a) in d.alpha().iter().enumerate() {
        if k != c && a < 1.0 {
            return Err(domain(format!("off-class concentration α_{k} = {a} is below 1")));
        }
    }
    Ok(())
}

/// `R = ½ Σ_{j≠c} (α_j − 1)² (ψ⁽¹⁾(α_j) − ψ⁽¹⁾(α̃₀))`
pub fn info_regularizer(d: &DirichletParams, correct_class: usize) -> Result<f64> {
    check_off_class_floor(d, correct_class)?;
    let aux0 = 1.0 + off_class_sum(d.alpha(), correct_class);
    let t0 = raw::trigamma(aux0);
    Ok(0.5
        * d.alpha()
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != correct_class)
            .map(|(_, &a)| (a - 1.0).powi(2) * (raw::trigamma(a) - t0))
            .sum::<f64>())
}

/// `∂R/∂α_j`; the correct-class component is zero.
pub fn info_regularizer_grad_alpha(d: &DirichletParams, correct_class: usize) -> Result<Vec<f64>> {
    check_off_class_floor(d, correct_class)?;
    let c = correct_class;
    let aux0 = 1.0 + off_class_sum(d.alpha(), c);
    let t0 = raw::trigamma(aux0);
    let q0 = raw::tetragamma(aux0);
    let sq_total: f64 = d
        .alpha()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != c)
        .map(|(_, &a)| (a - 1.0).powi(2))
        .sum();
    Ok(d.alpha()
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            if k == c {
                return 0.0;
            }
            let e = a - 1.0;
            let others = sq_total - e * e;
            e * (raw::trigamma(a) - t0) + 0.5 * e * e * (raw::tetragamma(a) - q0) - 0.5 * q0 * others
        })
        .collect())
}

/// Mean of `F_i + λ_t R_i` over a batch.
pub fn total_loss(batch: &[(DirichletParams, usize)], lambda_t: f64, p_norm: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if !(lambda_t.is_finite() && lambda_t >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_t {lambda_t} must be >= 0")));
    }
    let terms = batch
        .iter()
        .map(|(d, c)| {
            let f = iad_loss(d, *c, p_norm)?;
            let r = if lambda_t > 0.0 { info_regularizer(d, *c)? } else { 0.0 };
            Ok(f + lambda_t * r)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(compensated_sum(terms) / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Baselines

/// `−ln(α_c / α₀)`
pub fn nll_marginal_loss(d: &DirichletParams, correct_class: usize) -> Result<f64> {
    d.check_class(correct_class)?;
    Ok(-(d.alpha()[correct_class] / d.alpha0()).ln())
}

/// `ψ(α₀) − ψ(α_c)`
pub fn bayes_ce_loss(d: &DirichletParams, correct_class: usize) -> Result<f64> {
    d.check_class(correct_class)?;
    Ok(raw::digamma(d.alpha0()) - raw::digamma(d.alpha()[correct_class]))
}

/// `E‖y − p‖²₂ = Σ_k (y_k − E p_k)² + Var p_k`
pub fn edl_mse_loss(d: &DirichletParams, correct_class: usize) -> Result<f64> {
    d.check_class(correct_class)?;
    let s = d.alpha0();
    Ok(d.alpha()
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let m = a / s;
            let y = if k == correct_class { 1.0 } else { 0.0 };
            (y - m).powi(2) + m * (1.0 - m) / (s + 1.0)
        })
        .sum())
}

fn rkl_target(k: usize, correct_class: usize, beta: f64) -> Result<DirichletParams> {
    let mut t = vec![1.0; k];
    t[correct_class] = beta + 1.0;
    DirichletParams::new(t)
}

/// `KL(Dir(α) ∥ Dir((β+1) y + (1 − y)))`
pub fn rkl_prior_loss(d: &DirichletParams, correct_class: usize, beta: f64) -> Result<f64> {
    d.check_class(correct_class)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("kl_beta {beta} must be > 0")));
    }
    d.kl_divergence(&rkl_target(d.num_classes(), correct_class, beta)?)
}

/// Selector over every trainable objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Iad,
    Edl,
    Nll,
    BayesCe,
    Rkl,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Iad, LossKind::Edl, LossKind::Nll, LossKind::BayesCe, LossKind::Rkl];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Iad => "iad",
            LossKind::Edl => "edl",
            LossKind::Nll => "nll",
            LossKind::BayesCe => "bayes_ce",
            LossKind::Rkl => "rkl",
        }
    }

    /// Per-example loss and `∂loss/∂α`. The regularizer weight only applies
    /// to the IAD objective.
    pub fn value_and_grad(
        self,
        d: &DirichletParams,
        c: usize,
        cfg: &LossConfig,
        lambda_t: f64,
    ) -> Result<(f64, Vec<f64>)> {
        d.check_class(c)?;
        let alpha = d.alpha();
        let s = d.alpha0();
        match self {
            LossKind::Iad => {
                let (f, mut g) = iad_value_grad(d, c, cfg.p_norm)?;
                if lambda_t == 0.0 {
                    return Ok((f, g));
                }
                let r = info_regularizer(d, c)?;
                for (gi, ri) in g.iter_mut().zip(info_regularizer_grad_alpha(d, c)?) {
                    *gi += lambda_t * ri;
                }
                Ok((f + lambda_t * r, g))
            }
            LossKind::Nll => {
                let g = (0..alpha.len())
                    .map(|k| 1.0 / s - if k == c { 1.0 / alpha[c] } else { 0.0 })
                    .collect();
                Ok((nll_marginal_loss(d, c)?, g))
            }
            LossKind::BayesCe => {
                let t0 = raw::trigamma(s);
                let g = (0..alpha.len())
                    .map(|k| t0 - if k == c { raw::trigamma(alpha[c]) } else { 0.0 })
                    .collect();
                Ok((bayes_ce_loss(d, c)?, g))
            }
            LossKind::Edl => {
                let m: Vec<f64> = alpha.iter().map(|a| a / s).collect();
                // ∂L/∂m_k at fixed strength, and the explicit strength term
                let dm: Vec<f64> = m
                    .iter()
                    .enumerate()
                    .map(|(k, &mk)| {
                        let y = if k == c { 1.0 } else { 0.0 };
                        -2.0 * (y - mk) + (1.0 - 2.0 * mk) / (s + 1.0)
                    })
                    .collect();
                let ds = -m.iter().map(|mk| mk * (1.0 - mk)).sum::<f64>() / (s + 1.0).powi(2);
                let proj: f64 = dm.iter().zip(&m).map(|(a, b)| a * b).sum();
                let g = dm.iter().map(|dk| (dk - proj) / s + ds).collect();
                Ok((edl_mse_loss(d, c)?, g))
            }
            LossKind::Rkl => {
                let target = rkl_target(alpha.len(), c, cfg.kl_beta)?;
                let t0 = raw::trigamma(s);
                let excess0 = s - target.alpha0();
                let g = alpha
                    .iter()
                    .zip(target.alpha())
                    .map(|(&a, &t)| (a - t) * raw::trigamma(a) - excess0 * t0)
                    .collect();
                Ok((rkl_prior_loss(d, c, cfg.kl_beta)?, g))
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}` (expected iad|edl|nll|bayes_ce|rkl)")))
    }
}
