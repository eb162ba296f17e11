//! Uncertainty reports, distribution summaries, OOD evaluation and FGSM.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::losses::LossConfig;
use crate::network::NetworkParams;

/// Fraction of `ln K` above which an entropy counts as near-maximal.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub predicted: usize,
    pub correct: Option<bool>,
    pub entropy: f64,
    pub mutual_info: f64,
    pub max_prob: f64,
    pub alpha0: f64,
}

impl UncertaintyReport {
    pub fn from_dirichlet(d: &DirichletParams, label: Option<usize>) -> Self {
        let mean = d.predictive_mean();
        let predicted = mean.argmax();
        let entropy = d.predictive_entropy();
        Self {
            predicted,
            correct: label.map(|c| c == predicted),
            entropy,
            mutual_info: d.mutual_information().min(entropy),
            max_prob: mean.max(),
            alpha0: d.alpha0(),
        }
    }
}

fn check_dims(net: &NetworkParams, data: &Dataset) -> Result<()> {
    if net.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), actual: data.dim() });
    }
    Ok(())
}

pub fn evaluate(net: &NetworkParams, data: &Dataset) -> Result<Vec<UncertaintyReport>> {
    check_dims(net, data)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| Ok(UncertaintyReport::from_dirichlet(&net.predict(data.row(i))?, data.label(i))))
        .collect()
}

/// Fraction of labelled reports that are correct. `None` when no report carries a label.
pub fn accuracy(reports: &[UncertaintyReport]) -> Option<f64> {
    let labelled: Vec<bool> = reports.iter().filter_map(|r| r.correct).collect();
    if labelled.is_empty() {
        return None;
    }
    Some(labelled.iter().filter(|&&c| c).count() as f64 / labelled.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub threshold: f64,
    pub fraction_above_threshold: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Five-number summary with linearly interpolated quartiles and 1.5·IQR
/// whiskers; `fraction_above_threshold` counts values `>= threshold`.
pub fn summarize(values: &[f64], threshold: f64) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("summarize: NaN value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1).min(q1);
    let whisker_high = sorted.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3).max(q3);
    let above = sorted.iter().filter(|&&v| v >= threshold).count();
    Ok(DistributionSummary {
        count: sorted.len(),
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        whisker_low,
        whisker_high,
        mean: compensated_sum(sorted.iter().copied()) / sorted.len() as f64,
        threshold,
        fraction_above_threshold: above as f64 / sorted.len() as f64,
    })
}

/// Entropy and mutual-information summaries for correct and misclassified
/// examples. A group is `None` when it has no members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummaries {
    pub accuracy: f64,
    pub successes_entropy: Option<DistributionSummary>,
    pub errors_entropy: Option<DistributionSummary>,
    pub successes_mutual_info: Option<DistributionSummary>,
    pub errors_mutual_info: Option<DistributionSummary>,
}

pub fn summarize_by_correctness(reports: &[UncertaintyReport], threshold: f64) -> Result<GroupSummaries> {
    let accuracy = accuracy(reports).ok_or(Error::InvalidArgument("reports carry no labels".into()))?;
    let group = |want: bool, f: fn(&UncertaintyReport) -> f64| -> Result<Option<DistributionSummary>> {
        let v: Vec<f64> = reports.iter().filter(|r| r.correct == Some(want)).map(f).collect();
        if v.is_empty() {
            Ok(None)
        } else {
            summarize(&v, threshold).map(Some)
        }
    };
    Ok(GroupSummaries {
        accuracy,
        successes_entropy: group(true, |r| r.entropy)?,
        errors_entropy: group(false, |r| r.entropy)?,
        successes_mutual_info: group(true, |r| r.mutual_info)?,
        errors_mutual_info: group(false, |r| r.mutual_info)?,
    })
}

/// `x + ε·sgn(∇ₓF)`, optionally clipped componentwise to `bounds`.
pub fn fgsm_attack(
    net: &NetworkParams,
    x: &[f64],
    correct_class: usize,
    epsilon: f64,
    cfg: &LossConfig,
    bounds: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if let Some((lo, hi)) = bounds {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("invalid bounds ({lo}, {hi})")));
        }
    }
    if epsilon == 0.0 {
        net.forward(x)?;
        return Ok(x.to_vec());
    }
    let g = net.input_gradient(x, correct_class, cfg)?;
    Ok(x.iter()
        .zip(&g)
        .map(|(&xi, &gi)| {
            let s = if gi > 0.0 {
                1.0
            } else if gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            let v = xi + epsilon * s;
            match bounds {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub entropy: DistributionSummary,
    pub mutual_info: DistributionSummary,
}

pub fn ood_evaluate(net: &NetworkParams, ood: &Dataset, threshold_fraction: f64) -> Result<OodSummary> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold_fraction must lie in (0, 1], got {threshold_fraction}")));
    }
    if ood.is_empty() {
        return Err(Error::Empty("OOD dataset"));
    }
    let reports = evaluate(net, ood)?;
    let threshold = threshold_fraction * (net.num_classes() as f64).ln();
    let h: Vec<f64> = reports.iter().map(|r| r.entropy).collect();
    let mi: Vec<f64> = reports.iter().map(|r| r.mutual_info).collect();
    Ok(OodSummary { entropy: summarize(&h, threshold)?, mutual_info: summarize(&mi, threshold)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_mutual_info: f64,
    pub entropy: DistributionSummary,
    pub mutual_info: DistributionSummary,
}

/// Attack every labelled example at each ε and evaluate the perturbed set.
pub fn epsilon_sweep(
    net: &NetworkParams,
    data: &Dataset,
    epsilons: &[f64],
    cfg: &LossConfig,
    bounds: Option<(f64, f64)>,
    threshold_fraction: f64,
) -> Result<Vec<EpsilonRow>> {
    check_dims(net, data)?;
    let labels = data.labels().ok_or(Error::InvalidArgument("attack data must be labelled".into()))?;
    if data.is_empty() {
        return Err(Error::Empty("attack dataset"));
    }
    if epsilons.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument("epsilons must be sorted ascending".into()));
    }
    let threshold = threshold_fraction * (net.num_classes() as f64).ln();
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let reports: Vec<UncertaintyReport> = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let adv = fgsm_attack(net, data.row(i), labels[i], eps, cfg, bounds)?;
                Ok(UncertaintyReport::from_dirichlet(&net.predict(&adv)?, Some(labels[i])))
            })
            .collect::<Result<_>>()?;
        let h: Vec<f64> = reports.iter().map(|r| r.entropy).collect();
        let mi: Vec<f64> = reports.iter().map(|r| r.mutual_info).collect();
        let entropy = summarize(&h, threshold)?;
        let mutual_info = summarize(&mi, threshold)?;
        rows.push(EpsilonRow {
            epsilon: eps,
            accuracy: accuracy(&reports).unwrap(),
            mean_entropy: entropy.mean,
            mean_mutual_info: mutual_info.mean,
            entropy,
            mutual_info,
        });
    }
    Ok(rows)
}

/// Off-class strength `Σ_{j≠c} α_j` for every labelled example.
pub fn off_class_strength(net: &NetworkParams, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(net, data)?;
    let labels = data.labels().ok_or(Error::InvalidArgument("data must be labelled".into()))?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let d = net.predict(data.row(i))?;
            Ok(d.alpha0() - d.alpha()[labels[i]])
        })
        .collect()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// `index,predicted,correct,entropy,mutual_info,max_prob,alpha0`; `correct`
/// is empty for unlabelled data.
pub fn write_reports_csv<W: Write>(reports: &[UncertaintyReport], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["index", "predicted", "correct", "entropy", "mutual_info", "max_prob", "alpha0"])?;
    for (i, r) in reports.iter().enumerate() {
        let correct = match r.correct {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        w.write_record([
            i.to_string(),
            r.predicted.to_string(),
            correct.to_string(),
            r.entropy.to_string(),
            r.mutual_info.to_string(),
            r.max_prob.to_string(),
            r.alpha0.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[EpsilonRow], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["epsilon", "accuracy", "mean_entropy", "mean_mutual_info", "median_entropy", "median_mutual_info"])?;
    for r in rows {
        w.write_record([
            r.epsilon.to_string(),
            r.accuracy.to_string(),
            r.mean_entropy.to_string(),
            r.mean_mutual_info.to_string(),
            r.entropy.median.to_string(),
            r.mutual_info.median.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::network::Dense;

    // A single linear map onto zero logits yields the uniform Dirichlet
    // (softplus(0)+1) for every input.
    fn constant_net(d: usize, k: usize, bias: Vec<f64>) -> NetworkParams {
        let hidden = Dense { weights: Matrix::zeros(4, d), bias: vec![0.0; 4] };
        let out = Dense { weights: Matrix::zeros(k, 4), bias };
        NetworkParams::from_layers(vec![hidden, out]).unwrap()
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0], 4.0).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(s.fraction_above_threshold, 0.4);
        assert_eq!((s.whisker_low, s.whisker_high), (1.0, 5.0));
        let s = summarize(&[7.5; 9], 0.0).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (7.5, 7.5, 7.5, 7.5, 7.5));
        assert_eq!(s.fraction_above_threshold, 1.0);
        let s = summarize(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        assert!(summarize(&[], 0.0).is_err());
        assert!(summarize(&[1.0, f64::NAN], 0.0).is_err());
    }

    #[test]
    fn whiskers_exclude_outliers() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0], 0.0).unwrap();
        assert_eq!(s.whisker_high, 4.0);
        assert_eq!(s.max, 100.0);
    }

    #[test]
    fn uniform_network_reports() {
        let net = constant_net(2, 3, vec![0.0; 3]);
        let data = Dataset::new(Matrix::from_row_major(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(), Some((vec![0, 2], 3)), "t").unwrap();
        let reps = evaluate(&net, &data).unwrap();
        for r in &reps {
            assert_eq!(r.predicted, 0);
            assert!((r.entropy - 3f64.ln()).abs() < 1e-12);
        }
        assert_eq!(reps[0].correct, Some(true));
        assert_eq!(reps[1].correct, Some(false));
        assert_eq!(accuracy(&reps), Some(0.5));
        let g = summarize_by_correctness(&reps, 0.0).unwrap();
        assert_eq!(g.successes_entropy.unwrap().count + g.errors_entropy.unwrap().count, 2);
    }

    #[test]
    fn report_from_peaked_alpha() {
        let mut a = vec![1.0; 10];
        a[0] = 10.0;
        let r = UncertaintyReport::from_dirichlet(&DirichletParams::new(a).unwrap(), None);
        assert_eq!(r.predicted, 0);
        assert!((r.max_prob - 10.0 / 19.0).abs() < 1e-15);
        assert_eq!(r.correct, None);
    }

    #[test]
    fn fgsm_zero_epsilon_and_errors() {
        let net = NetworkParams::init(&[2, 5, 3], &mut crate::rng::stream(1)).unwrap();
        let cfg = LossConfig::default();
        let x = [0.3, 0.7];
        assert_eq!(fgsm_attack(&net, &x, 1, 0.0, &cfg, Some((0.0, 1.0))).unwrap(), x.to_vec());
        assert!(fgsm_attack(&net, &x, 1, -0.1, &cfg, None).is_err());
        let adv = fgsm_attack(&net, &x, 1, 0.05, &cfg, None).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            let d = (a - b).abs();
            assert!(d == 0.0 || (d - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn sweep_schema_and_sorting() {
        let net = NetworkParams::init(&[2, 5, 3], &mut crate::rng::stream(2)).unwrap();
        let data = Dataset::new(Matrix::from_row_major(3, 2, vec![0.1, 0.2, 0.5, 0.5, 0.9, 0.1]).unwrap(), Some((vec![0, 1, 2], 3)), "t").unwrap();
        let cfg = LossConfig::default();
        let rows = epsilon_sweep(&net, &data, &[0.0, 0.1, 0.2], &cfg, Some((0.0, 1.0)), 0.95).unwrap();
        assert_eq!(rows.len(), 3);
        let clean = evaluate(&net, &data).unwrap();
        assert_eq!(rows[0].accuracy, accuracy(&clean).unwrap());
        assert!(epsilon_sweep(&net, &data, &[0.2, 0.1], &cfg, None, 0.95).is_err());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
