//! Numerical certification of the digamma inequalities and of the
//! monotonicity/convexity properties of the IAD loss and the information
//! regularizer.
//!
//! Every check draws its random inputs from a stream derived from a root
//! seed, so a report can be regenerated exactly from the seed it records.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::losses::{iad_loss, info_regularizer};
use crate::rng::{self, RandomStream};
use crate::specfun::raw::{digamma, trigamma};

/// A difference only counts as strictly signed beyond this margin.
pub const STRICTNESS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub lemma_triples: usize,
    pub trials: usize,
    pub num_classes: usize,
    pub p_norm: f64,
    /// Off-sweep concentrations of the random bases are drawn from `U(low, high)`.
    pub base_low: f64,
    pub base_high: f64,
    pub grid: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lemma_triples: 1000,
            trials: 100,
            num_classes: 10,
            p_norm: 4.0,
            base_low: 1.01,
            base_high: 50.0,
            grid: log_grid(1.01, 1e3, 50).expect("default grid"),
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 2 {
        return Err(Error::InvalidArgument(format!("invalid log grid [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    Ok(g)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::InvalidArgument("sweep grid needs at least 3 points".into()));
    }
    if grid.iter().any(|&g| !(g > 1.0 && g.is_finite())) {
        return Err(Error::InvalidArgument("sweep grid values must be finite and > 1".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("sweep grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    /// Index of the first offending difference (or sample).
    pub first_violation: Option<usize>,
}

impl Verdict {
    fn from_first_violation(first_violation: Option<usize>) -> Self {
        Self { passed: first_violation.is_none(), first_violation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub x1: f64,
    pub x2: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub name: String,
    pub seed: u64,
    pub samples: usize,
    /// Smallest slack over both sides of the inequality chain.
    pub min_margin: f64,
    pub verdict: Verdict,
    /// The offending triple, if any.
    pub counterexample: Option<Triple>,
}

fn sample_triples(n: usize, rng: &mut RandomStream) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            // `1 - u` maps [0, 1) onto (0, 1] so every draw is strictly inside the domain.
            let x2 = 1.0 + 50.0 * (1.0 - rng.random::<f64>());
            let x1 = x2 + 50.0 * (1.0 - rng.random::<f64>());
            let p = 10.0 * (1.0 - rng.random::<f64>());
            Triple { x1, x2, p }
        })
        .collect()
}

fn lemma_check(name: &str, seed: u64, n: usize, margins: impl Fn(&Triple) -> (f64, f64)) -> LemmaReport {
    let triples = sample_triples(n, &mut rng::derive_stream(seed, name));
    let mut min_margin = f64::INFINITY;
    let mut first = None;
    for (i, t) in triples.iter().enumerate() {
        let (a, b) = margins(t);
        let m = a.min(b);
        min_margin = min_margin.min(m);
        if first.is_none() && !(m > 0.0) {
            first = Some(i);
        }
    }
    LemmaReport {
        name: name.to_string(),
        seed,
        samples: n,
        min_margin,
        counterexample: first.map(|i| triples[i].clone()),
        verdict: Verdict::from_first_violation(first),
    }
}

/// `0 < ψ(x₁+p) − ψ(x₂+p) < ψ(x₁) − ψ(x₂)` for `x₁ > x₂ > 1`, `p ∈ (0, 10]`,
/// plus `ψ(10⁴+p) − ψ(10⁴) < 10⁻³` for `p ≤ 10`.
pub fn verify_lemma1(seed: u64, n: usize) -> LemmaReport {
    let mut report = lemma_check("lemma1", seed, n, |t| {
        let shifted = digamma(t.x1 + t.p) - digamma(t.x2 + t.p);
        let plain = digamma(t.x1) - digamma(t.x2);
        (shifted, plain - shifted)
    });
    if report.verdict.passed {
        let x = 1e4;
        let limit_ok = (1..=20).map(|i| i as f64 * 0.5).all(|p| digamma(x + p) - digamma(x) < 1e-3);
        if !limit_ok {
            report.verdict = Verdict { passed: false, first_violation: Some(n) };
        }
    }
    report
}

/// `ψ₁(x₁) − ψ₁(x₂) < ψ₁(x₁+p) − ψ₁(x₂+p) < 0` on the same kind of triples.
pub fn verify_lemma2(seed: u64, n: usize) -> LemmaReport {
    lemma_check("lemma2", seed, n, |t| {
        let shifted = trigamma(t.x1 + t.p) - trigamma(t.x2 + t.p);
        let plain = trigamma(t.x1) - trigamma(t.x2);
        (shifted - plain, -shifted)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `values[i+1] - values[i]`.
    pub first_differences: Vec<f64>,
    /// Second divided differences on the (non-uniform) grid.
    pub second_differences: Vec<f64>,
    /// First index from which every forward difference is strictly positive.
    pub knee: Option<usize>,
    pub verdict: Verdict,
}

impl SweepResult {
    fn new(grid: &[f64], values: Vec<f64>) -> Self {
        let first_differences: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let second_differences = (1..grid.len() - 1)
            .map(|i| {
                let left = (values[i] - values[i - 1]) / (grid[i] - grid[i - 1]);
                let right = (values[i + 1] - values[i]) / (grid[i + 1] - grid[i]);
                2.0 * (right - left) / (grid[i + 1] - grid[i - 1])
            })
            .collect();
        let knee = match first_differences.iter().rposition(|&d| !(d > STRICTNESS)) {
            None => Some(0),
            Some(i) if i + 1 < first_differences.len() => Some(i + 1),
            Some(_) => None,
        };
        Self {
            grid: grid.to_vec(),
            values,
            first_differences,
            second_differences,
            knee,
            verdict: Verdict { passed: false, first_violation: None },
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["x", "value", "first_difference", "second_difference"])?;
        for i in 0..self.grid.len() {
            let fd = self.first_differences.get(i).map(f64::to_string).unwrap_or_default();
            let sd = i.checked_sub(1).and_then(|k| self.second_differences.get(k)).map(f64::to_string).unwrap_or_default();
            w.write_record([self.grid[i].to_string(), self.values[i].to_string(), fd, sd])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn with_entry(base: &DirichletParams, idx: usize, value: f64) -> Result<DirichletParams> {
    let mut a = base.alpha().to_vec();
    a[idx] = value;
    DirichletParams::new(a)
}

fn sweep_values(grid: &[f64], mut f: impl FnMut(f64) -> Result<f64>) -> Result<Vec<f64>> {
    grid.iter().map(|&g| f(g)).collect()
}

fn check_index(base: &DirichletParams, idx: usize) -> Result<()> {
    if idx >= base.num_classes() {
        return Err(Error::IndexOutOfRange { index: idx, len: base.num_classes() });
    }
    Ok(())
}

/// F as a function of the correct-class concentration: strictly decreasing
/// with strictly positive second divided differences.
pub fn sweep_theorem1(base: &DirichletParams, c: usize, p: f64, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    check_index(base, c)?;
    let values = sweep_values(grid, |g| iad_loss(&with_entry(base, c, g)?, c, p))?;
    let mut s = SweepResult::new(grid, values);
    let dec = s.first_differences.iter().position(|&d| !(d < -STRICTNESS));
    let convex = s.second_differences.iter().position(|&d| !(d > STRICTNESS));
    s.verdict = Verdict::from_first_violation(match (dec, convex) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(usize::MAX).min(b.unwrap_or(usize::MAX))),
    });
    Ok(s)
}

/// F as a function of an off-class concentration `j`: strictly increasing
/// past a knee, and ending above where it started.
pub fn sweep_theorem2(base: &DirichletParams, c: usize, j: usize, p: f64, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    check_index(base, c)?;
    check_index(base, j)?;
    if j == c {
        return Err(Error::InvalidArgument("off-class sweep index equals the correct class".into()));
    }
    let values = sweep_values(grid, |g| iad_loss(&with_entry(base, j, g)?, c, p))?;
    let mut s = SweepResult::new(grid, values);
    let rises = s.values[s.values.len() - 1] > s.values[0];
    s.verdict = match (s.knee, rises) {
        (Some(_), true) => Verdict { passed: true, first_violation: None },
        _ => Verdict { passed: false, first_violation: s.first_differences.iter().rposition(|&d| !(d > STRICTNESS)) },
    };
    Ok(s)
}

/// R as a function of an off-class concentration: strictly increasing everywhere.
pub fn sweep_theorem3(base: &DirichletParams, c: usize, j: usize, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    check_index(base, c)?;
    check_index(base, j)?;
    if j == c {
        return Err(Error::InvalidArgument("off-class sweep index equals the correct class".into()));
    }
    let values = sweep_values(grid, |g| info_regularizer(&with_entry(base, j, g)?, c))?;
    let mut s = SweepResult::new(grid, values);
    s.verdict = Verdict::from_first_violation(s.first_differences.iter().position(|&d| !(d > STRICTNESS)));
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub alpha: Vec<f64>,
    pub correct_class: usize,
    pub swept_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub name: String,
    pub seed: u64,
    pub p_norm: f64,
    pub trials: Vec<Trial>,
    pub sweeps: Vec<SweepResult>,
    pub failed_trials: Vec<usize>,
    pub passed: bool,
}

fn draw_trials(cfg: &VerifyConfig) -> Result<Vec<Trial>> {
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument("verification needs at least 2 classes".into()));
    }
    if !(cfg.base_low > 1.0 && cfg.base_high > cfg.base_low) {
        return Err(Error::InvalidArgument("base range must satisfy 1 < low < high".into()));
    }
    let mut r = rng::derive_stream(cfg.seed, "theorem-bases");
    let k = cfg.num_classes;
    Ok((0..cfg.trials)
        .map(|_| {
            let alpha = (0..k).map(|_| r.random_range(cfg.base_low..cfg.base_high)).collect();
            let correct_class = r.random_range(0..k);
            let swept_class = (correct_class + r.random_range(1..k)) % k;
            Trial { alpha, correct_class, swept_class }
        })
        .collect())
}

fn run_theorem(
    name: &str,
    cfg: &VerifyConfig,
    sweep: impl Fn(&DirichletParams, &Trial) -> Result<SweepResult> + Sync,
) -> Result<TheoremReport> {
    validate_grid(&cfg.grid)?;
    let trials = draw_trials(cfg)?;
    let sweeps: Vec<SweepResult> = trials
        .par_iter()
        .map(|t| sweep(&DirichletParams::new(t.alpha.clone())?, t))
        .collect::<Result<_>>()?;
    let failed_trials: Vec<usize> = sweeps.iter().enumerate().filter(|(_, s)| !s.verdict.passed).map(|(i, _)| i).collect();
    Ok(TheoremReport {
        name: name.to_string(),
        seed: cfg.seed,
        p_norm: cfg.p_norm,
        passed: failed_trials.is_empty() && !trials.is_empty(),
        trials,
        sweeps,
        failed_trials,
    })
}

pub fn verify_theorem1(cfg: &VerifyConfig) -> Result<TheoremReport> {
    run_theorem("theorem1", cfg, |b, t| sweep_theorem1(b, t.correct_class, cfg.p_norm, &cfg.grid))
}

pub fn verify_theorem2(cfg: &VerifyConfig) -> Result<TheoremReport> {
    run_theorem("theorem2", cfg, |b, t| sweep_theorem2(b, t.correct_class, t.swept_class, cfg.p_norm, &cfg.grid))
}

pub fn verify_theorem3(cfg: &VerifyConfig) -> Result<TheoremReport> {
    run_theorem("theorem3", cfg, |b, t| sweep_theorem3(b, t.correct_class, t.swept_class, &cfg.grid))
}

/// `μ(x) ≈ x^p` version of F.
pub fn approx_iad_loss(d: &DirichletParams, c: usize, p: f64) -> Result<f64> {
    d.check_class(c)?;
    let a = d.alpha();
    let s = d.alpha0() - a[c];
    let log_terms: Vec<f64> =
        std::iter::once(s).chain(a.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, &v)| v)).map(|v| p * v.ln()).collect();
    let m = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + log_terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    Ok(((lse - p * d.alpha0().ln()) / p).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSweep {
    pub alpha: Vec<f64>,
    pub correct_class: usize,
    pub swept_class: usize,
    pub p_norm: f64,
    pub sweep: SweepResult,
    pub approx: Vec<f64>,
    pub approx_rel_error: Vec<f64>,
    /// Grid index of the minimum loss.
    pub dip_index: usize,
    pub dips: bool,
    pub approx_within_tolerance: bool,
    pub passed: bool,
}

/// Grid points at or above this value must have an approximation error within [`APPROX_TOLERANCE`].
pub const APPROX_FROM: f64 = 50.0;
pub const APPROX_TOLERANCE: f64 = 0.05;

pub fn theorem2_figure_sweep(alpha: &DirichletParams, c: usize, j: usize, p: f64, grid: &[f64]) -> Result<FigureSweep> {
    let sweep = sweep_theorem2(alpha, c, j, p, grid)?;
    let approx = sweep_values(grid, |g| approx_iad_loss(&with_entry(alpha, j, g)?, c, p))?;
    let approx_rel_error: Vec<f64> = approx.iter().zip(&sweep.values).map(|(a, v)| (a - v).abs() / v).collect();
    let dip_index = sweep
        .values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let dips = dip_index > 0 && sweep.values[dip_index] < sweep.values[0] - STRICTNESS;
    let approx_within_tolerance = grid.iter().zip(&approx_rel_error).filter(|(g, _)| **g >= APPROX_FROM).all(|(_, e)| *e <= APPROX_TOLERANCE);
    let passed = sweep.verdict.passed && dips && approx_within_tolerance;
    Ok(FigureSweep {
        alpha: alpha.alpha().to_vec(),
        correct_class: c,
        swept_class: j,
        p_norm: p,
        sweep,
        approx,
        approx_rel_error,
        dip_index,
        dips,
        approx_within_tolerance,
        passed,
    })
}

impl FigureSweep {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["alpha_j", "loss", "approx_loss", "approx_rel_error"])?;
        for i in 0..self.sweep.grid.len() {
            w.write_record([
                self.sweep.grid[i].to_string(),
                self.sweep.values[i].to_string(),
                self.approx[i].to_string(),
                self.approx_rel_error[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// p = 2, K = 10, small correct-class concentration, the rest drawn from `U(5, 20)`.
pub fn default_figure_sweep(seed: u64, grid: &[f64]) -> Result<FigureSweep> {
    let mut r = rng::derive_stream(seed, "figure");
    let mut alpha: Vec<f64> = (0..10).map(|_| r.random_range(5.0..20.0)).collect();
    alpha[0] = 1.5;
    theorem2_figure_sweep(&DirichletParams::new(alpha)?, 0, 1, 2.0, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub lemma1: LemmaReport,
    pub lemma2: LemmaReport,
    pub theorem1: TheoremReport,
    pub theorem2: TheoremReport,
    pub theorem3: TheoremReport,
    pub figure: FigureSweep,
    pub passed: bool,
}

pub fn run_all(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let ((lemma1, lemma2), (t1, (t2, (t3, fig)))) = rayon::join(
        || (verify_lemma1(cfg.seed, cfg.lemma_triples), verify_lemma2(cfg.seed, cfg.lemma_triples)),
        || {
            rayon::join(
                || verify_theorem1(cfg),
                || rayon::join(|| verify_theorem2(cfg), || rayon::join(|| verify_theorem3(cfg), || default_figure_sweep(cfg.seed, &cfg.grid))),
            )
        },
    );
    let (theorem1, theorem2, theorem3, figure) = (t1?, t2?, t3?, fig?);
    let passed = lemma1.verdict.passed
        && lemma2.verdict.passed
        && theorem1.passed
        && theorem2.passed
        && theorem3.passed
        && figure.passed;
    Ok(VerifyReport { seed: cfg.seed, lemma1, lemma2, theorem1, theorem2, theorem3, figure, passed })
}
