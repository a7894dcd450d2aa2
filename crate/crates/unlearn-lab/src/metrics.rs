//! Unlearning efficacy metrics: forget/retain/test accuracy, an
//! entropy-threshold membership inference attack, cross-trial aggregation
//! against retrained-reference reports, and gradient-similarity diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, RowTag};
use crate::error::{Error, Result};
use crate::nn::{MlpModel, PROB_FLOOR};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Shannon entropy (natural log) of a probability vector.
///
/// The vector must be non-negative and sum to 1 within 1e-9; each term
/// clamps the probability to at least `1e-12` inside the logarithm, so
/// zero entries contribute zero.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Input("entropy of an empty distribution".into()));
    }
    if let Some(&bad) = probs.iter().find(|&&p| !(p >= 0.0)) {
        return Err(Error::Input(format!("negative probability {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(-probs.iter().map(|&p| p * p.max(PROB_FLOOR).ln()).sum::<f64>())
}

/// Prediction entropies of a model over a feature batch, one per row.
pub fn model_entropies(model: &MlpModel, xs: &Tensor) -> Result<Vec<f64>> {
    let probs = model.predict_proba(xs)?;
    (0..probs.rows()).map(|i| entropy(probs.row(i))).collect()
}

/// A fitted entropy-threshold membership attack.
///
/// `member_below = true` encodes the rule "entropy < threshold => member"
/// (members are recognized by confident, low-entropy predictions);
/// `false` flips the rule to "entropy > threshold => member".
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MiaAttack {
    pub threshold: f64,
    pub member_below: bool,
}

impl MiaAttack {
    /// Classify one entropy value as member (`true`) or non-member.
    pub fn is_member(&self, entropy: f64) -> bool {
        if self.member_below {
            entropy < self.threshold
        } else {
            entropy > self.threshold
        }
    }
}

/// Fit the attack threshold on calibration entropies.
///
/// Candidate thresholds are the midpoints between consecutive distinct
/// values of the pooled, sorted calibration entropies. The fit maximizes
/// balanced accuracy `(TPR + TNR) / 2`; ties prefer the member-below
/// orientation and then the smaller threshold. If every pooled entropy is
/// identical the attack degenerates to that value with the member-below
/// orientation.
pub fn fit_mia_entropies(members: &[f64], non_members: &[f64]) -> Result<MiaAttack> {
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::Input(format!(
            "MIA calibration needs both classes, got {} members and {} non-members",
            members.len(),
            non_members.len()
        )));
    }
    let mut pooled: Vec<f64> = members.iter().chain(non_members).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite entropies"));
    let candidates: Vec<f64> = pooled
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| (w[0] + w[1]) / 2.0)
        .collect();
    if candidates.is_empty() {
        return Ok(MiaAttack { threshold: pooled[0], member_below: true });
    }
    let balanced_accuracy = |attack: &MiaAttack| -> f64 {
        let tpr = members.iter().filter(|&&h| attack.is_member(h)).count() as f64
            / members.len() as f64;
        let tnr = non_members.iter().filter(|&&h| !attack.is_member(h)).count() as f64
            / non_members.len() as f64;
        (tpr + tnr) / 2.0
    };
    let mut best = MiaAttack { threshold: candidates[0], member_below: true };
    let mut best_score = f64::NEG_INFINITY;
    // Orientation order matters for tie-breaking: member-below first.
    for member_below in [true, false] {
        for &threshold in &candidates {
            let cand = MiaAttack { threshold, member_below };
            let score = balanced_accuracy(&cand);
            if score > best_score {
                best_score = score;
                best = cand;
            }
        }
    }
    Ok(best)
}

/// Fit the attack from model predictions on member and non-member
/// calibration feature sets.
///
/// The interface deliberately takes no forget set: the threshold is chosen
/// on retained-member and test-set calibration data only.
pub fn fit_mia(model: &MlpModel, member_xs: &Tensor, non_member_xs: &Tensor) -> Result<MiaAttack> {
    let members = model_entropies(model, member_xs)?;
    let non_members = model_entropies(model, non_member_xs)?;
    fit_mia_entropies(&members, &non_members)
}

/// Fraction of the given rows the attack classifies as member.
pub fn mia_score(attack: &MiaAttack, model: &MlpModel, xs: &Tensor) -> Result<f64> {
    if xs.rows() == 0 {
        return Err(Error::Input("MIA score of an empty set".into()));
    }
    let hs = model_entropies(model, xs)?;
    Ok(hs.iter().filter(|&&h| attack.is_member(h)).count() as f64 / hs.len() as f64)
}

/// Per-trial evaluation of one unlearned (or reference) checkpoint.
/// All four metrics are fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalReport {
    pub trial_seed: u64,
    /// Accuracy on the forget rows.
    pub fa: f64,
    /// Accuracy on the retain rows.
    pub ra: f64,
    /// Accuracy on the test rows.
    pub ta: f64,
    /// Membership-attack hit rate on the forget rows.
    pub mia: f64,
}

impl EvalReport {
    pub fn metrics(&self) -> [f64; 4] {
        [self.fa, self.ra, self.ta, self.mia]
    }

    pub const METRIC_NAMES: [&'static str; 4] = ["fa", "ra", "ta", "mia"];
}

/// Side artifacts of the MIA protocol, recorded for auditability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiaAudit {
    pub threshold: f64,
    pub member_below: bool,
    /// Fraction of a held-out test fold classified member (false-positive
    /// rate of the fitted attack on unseen non-members).
    pub holdout_member_rate: f64,
    pub calib_members: usize,
    pub calib_non_members: usize,
}

/// Evaluate a checkpoint on a split dataset: forget/retain/test accuracy
/// plus the membership attack score on the forget rows.
///
/// The attack is calibrated on `calib_size` retain rows (members, sampled
/// with the seed) and half of the test rows (non-members); the other half
/// of the test rows is held out to estimate the attack's member rate on
/// unseen non-members. The forget set plays no part in calibration.
pub fn evaluate_checkpoint(
    model: &MlpModel,
    data: &DatasetSplit,
    calib_size: usize,
    seed: u64,
    trial_seed: u64,
) -> Result<(EvalReport, MiaAudit)> {
    let forget = data.indices(RowTag::Forget);
    let retain = data.indices(RowTag::Retain);
    let test = data.indices(RowTag::Test);
    if forget.is_empty() || retain.is_empty() || test.len() < 2 {
        return Err(Error::Input(format!(
            "evaluation needs forget, retain and >= 2 test rows, got {}/{}/{}",
            forget.len(),
            retain.len(),
            test.len()
        )));
    }

    let (fx, fy) = data.gather(&forget);
    let (rx, ry) = data.gather(&retain);
    let (tx, ty) = data.gather(&test);
    let fa = model.accuracy(&fx, &fy)?;
    let ra = model.accuracy(&rx, &ry)?;
    let ta = model.accuracy(&tx, &ty)?;

    // Member calibration: a seeded sample of retain rows.
    let mut rng = SplitMix64::new(derive_seed(seed, "mia-calib"));
    let mut retain_pool = retain.clone();
    rng.shuffle(&mut retain_pool);
    let n_members = calib_size.max(1).min(retain_pool.len());
    let member_idx = &retain_pool[..n_members];

    // Non-member calibration: half the test rows; the rest is held out.
    let mut test_pool = test.clone();
    rng.shuffle(&mut test_pool);
    let n_calib_test = (test_pool.len() / 2).max(1);
    let (calib_test, holdout_test) = test_pool.split_at(n_calib_test);

    let (member_x, _) = data.gather(member_idx);
    let (calib_x, _) = data.gather(calib_test);
    let attack = fit_mia(model, &member_x, &calib_x)?;

    let holdout_member_rate = if holdout_test.is_empty() {
        f64::NAN
    } else {
        let (hx, _) = data.gather(holdout_test);
        mia_score(&attack, model, &hx)?
    };
    let mia = mia_score(&attack, model, &fx)?;

    Ok((
        EvalReport { trial_seed, fa, ra, ta, mia },
        MiaAudit {
            threshold: attack.threshold,
            member_below: attack.member_below,
            holdout_member_rate,
            calib_members: n_members,
            calib_non_members: calib_test.len(),
        },
    ))
}

/// Mean and sample standard deviation (n-1 denominator) per metric, plus
/// per-metric absolute gaps to the retrained-reference means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_trials: usize,
    pub metric_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Reference (retrain-from-scratch) means, when supplied.
    pub rt_means: Option<Vec<f64>>,
    /// Per-metric `|mean - rt_mean|`, when the reference is supplied.
    pub gaps: Option<Vec<f64>>,
    /// Mean of the four per-metric gaps.
    pub avg_gap: Option<f64>,
    /// Mean of the four per-metric standard deviations.
    pub avg_std: f64,
}

/// Sample standard deviation with the n-1 denominator.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Input(format!(
            "sample standard deviation needs >= 2 values, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

fn metric_columns(reports: &[EvalReport]) -> [Vec<f64>; 4] {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for r in reports {
        for (c, v) in cols.iter_mut().zip(r.metrics()) {
            c.push(v);
        }
    }
    cols
}

/// Aggregate per-trial reports; when a retrained reference is supplied the
/// trials must match one-to-one by trial seed.
pub fn aggregate(
    reports: &[EvalReport],
    rt_reports: Option<&[EvalReport]>,
) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::Input(format!(
            "aggregation needs >= 2 trials, got {}",
            reports.len()
        )));
    }
    if let Some(rt) = rt_reports {
        if rt.len() != reports.len() {
            return Err(Error::Input(format!(
                "{} method trials but {} reference trials",
                reports.len(),
                rt.len()
            )));
        }
        let mut a: Vec<u64> = reports.iter().map(|r| r.trial_seed).collect();
        let mut b: Vec<u64> = rt.iter().map(|r| r.trial_seed).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Input(format!(
                "method and reference trial seeds differ: {a:?} vs {b:?}"
            )));
        }
    }

    let cols = metric_columns(reports);
    let n = reports.len() as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let stds: Vec<f64> =
        cols.iter().map(|c| sample_std(c)).collect::<Result<Vec<f64>>>()?;
    let avg_std = stds.iter().sum::<f64>() / stds.len() as f64;

    let (rt_means, gaps, avg_gap) = match rt_reports {
        Some(rt) => {
            let rt_cols = metric_columns(rt);
            let rt_means: Vec<f64> = rt_cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
            let gaps: Vec<f64> =
                means.iter().zip(&rt_means).map(|(m, r)| (m - r).abs()).collect();
            let avg_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
            (Some(rt_means), Some(gaps), Some(avg_gap))
        }
        None => (None, None, None),
    };

    Ok(AggregateReport {
        n_trials: reports.len(),
        metric_names: EvalReport::METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        means,
        stds,
        rt_means,
        gaps,
        avg_gap,
        avg_std,
    })
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Trailing moving average: `out[i]` is the mean of the last
/// `min(i + 1, window)` values. Used to smooth per-step diagnostics.
pub fn trailing_moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let count = (i + 1).min(window) as f64;
        out.push(sum / count);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_is_ln_k() {
        let h = entropy(&[0.25; 4]).unwrap();
        assert!((h - 4.0f64.ln()).abs() < 1e-12);
        let h = entropy(&[1.0, 0.0, 0.0]).unwrap();
        assert!(h.abs() < 1e-10, "one-hot entropy {h}");
    }

    #[test]
    fn entropy_validates_input() {
        assert_eq!(entropy(&[0.5, 0.6]).unwrap_err().code(), "input");
        assert_eq!(entropy(&[1.2, -0.2]).unwrap_err().code(), "input");
        assert_eq!(entropy(&[]).unwrap_err().code(), "input");
    }

    #[test]
    fn fit_mia_matches_brute_force_on_the_toy_set() {
        // members {0.2, 0.4}, non-members {0.3, 0.9}: midpoints are
        // 0.25, 0.35, 0.65 with balanced accuracies 0.75, 0.5, 0.75 under
        // the member-below rule; ties resolve to the smaller threshold.
        let attack = fit_mia_entropies(&[0.2, 0.4], &[0.3, 0.9]).unwrap();
        assert!(attack.member_below);
        assert!((attack.threshold - 0.25).abs() < 1e-12, "h* = {}", attack.threshold);
        let tpr = [0.2, 0.4].iter().filter(|&&h| attack.is_member(h)).count() as f64 / 2.0;
        let tnr = [0.3, 0.9].iter().filter(|&&h| !attack.is_member(h)).count() as f64 / 2.0;
        assert!(((tpr + tnr) / 2.0 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fit_mia_separable_sets_reach_perfect_balanced_accuracy() {
        let attack = fit_mia_entropies(&[0.1, 0.2, 0.15], &[0.8, 0.9, 1.4]).unwrap();
        assert!(attack.member_below);
        assert!(attack.threshold > 0.2 && attack.threshold < 0.8);
        assert!(attack.is_member(0.19));
        assert!(!attack.is_member(0.75));
    }

    #[test]
    fn fit_mia_degenerate_identical_entropies() {
        let attack = fit_mia_entropies(&[0.7, 0.7], &[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(attack.threshold, 0.7);
        assert!(attack.member_below);
    }

    #[test]
    fn fit_mia_requires_both_classes() {
        assert_eq!(fit_mia_entropies(&[], &[0.5]).unwrap_err().code(), "input");
        assert_eq!(fit_mia_entropies(&[0.5], &[]).unwrap_err().code(), "input");
    }

    #[test]
    fn aggregate_means_stds_and_gaps() {
        let mk = |seed, off: f64| EvalReport {
            trial_seed: seed,
            fa: 0.5 + off,
            ra: 0.9,
            ta: 0.8 - off,
            mia: 0.1,
        };
        let method = [mk(0, 0.02), mk(1, -0.02)];
        let rt = [mk(0, 0.0), mk(1, 0.0)];
        let agg = aggregate(&method, Some(&rt)).unwrap();
        assert_eq!(agg.n_trials, 2);
        assert!((agg.means[0] - 0.5).abs() < 1e-12);
        // std of {0.52, 0.48} = 0.02 * sqrt(2) / sqrt(1) ... with n-1 = 1:
        // sqrt(((0.02)^2 + (0.02)^2) / 1) = 0.02*sqrt(2)
        assert!((agg.stds[0] - 0.02 * 2f64.sqrt()).abs() < 1e-12);
        assert!((agg.gaps.as_ref().unwrap()[1] - 0.0).abs() < 1e-12);
        assert!(agg.avg_gap.unwrap() < 1e-12, "symmetric offsets cancel in means");
    }

    #[test]
    fn aggregate_validates_trials() {
        let r = EvalReport { trial_seed: 0, fa: 0.5, ra: 0.5, ta: 0.5, mia: 0.5 };
        assert_eq!(aggregate(&[r], None).unwrap_err().code(), "input");
        let r2 = EvalReport { trial_seed: 1, ..r };
        let r3 = EvalReport { trial_seed: 2, ..r };
        assert_eq!(aggregate(&[r, r2], Some(&[r])).unwrap_err().code(), "input");
        assert_eq!(aggregate(&[r, r2], Some(&[r, r3])).unwrap_err().code(), "input");
        assert!(aggregate(&[r, r2], Some(&[r2, r])).is_ok(), "seed order may differ");
    }

    #[test]
    fn cosine_similarity_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap()).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 0.0], &[-3.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap_err().code(),
            "undefined_similarity"
        );
        assert_eq!(cosine_similarity(&[1.0], &[1.0, 2.0]).unwrap_err().code(), "dimension");
    }

    #[test]
    fn moving_average_warms_up_then_slides() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ma = trailing_moving_average(&s, 3).unwrap();
        assert_eq!(ma, vec![1.0, 1.5, 2.0, 3.0, 4.0]);
        assert_eq!(trailing_moving_average(&s, 0).unwrap_err().code(), "config");
    }

    #[test]
    fn sample_std_uses_n_minus_1() {
        let s = sample_std(&[1.0, 3.0]).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(sample_std(&[1.0]).unwrap_err().code(), "input");
    }
}
