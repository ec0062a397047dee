//! Ranking metrics (AUC-ROC, average precision) and multi-run aggregation.

use crate::error::{Error, Result};

/// Parallel scores and anomaly indicators.
#[derive(Debug, Clone)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub is_anomaly: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, is_anomaly: Vec<bool>) -> Result<LabeledScores> {
        if scores.len() != is_anomaly.len() {
            return Err(Error::Config(format!(
                "scores ({}) and labels ({}) differ in length",
                scores.len(),
                is_anomaly.len()
            )));
        }
        Ok(LabeledScores { scores, is_anomaly })
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.is_anomaly.iter().filter(|b| **b).count();
        (pos, self.is_anomaly.len() - pos)
    }
}

/// Probability that a random anomaly outscores a random normal, ties
/// counted one half (Mann-Whitney formulation; equals trapezoidal ROC area).
pub fn auc_roc(ls: &LabeledScores) -> Result<f64> {
    let (n_pos, n_neg) = ls.counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config(
            "AUC-ROC needs at least one anomaly and one normal".into(),
        ));
    }
    // Rank-sum with average ranks over tied groups.
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| ls.scores[a].partial_cmp(&ls.scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && ls.scores[order[j]] == ls.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if ls.is_anomaly[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Average precision: mean over anomaly hits of precision at that rank,
/// scores descending. Ties rank anomalies after normals (pessimistic).
pub fn auc_pr(ls: &LabeledScores) -> Result<f64> {
    let (n_pos, _) = ls.counts();
    if n_pos == 0 {
        return Err(Error::Config("AUC-PR needs at least one anomaly".into()));
    }
    let mut order: Vec<usize> = (0..ls.scores.len()).collect();
    order.sort_by(|&a, &b| {
        ls.scores[b]
            .partial_cmp(&ls.scores[a])
            .unwrap()
            .then_with(|| ls.is_anomaly[a].cmp(&ls.is_anomaly[b]))
    });
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if ls.is_anomaly[idx] {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(ap / n_pos as f64)
}

/// Sample mean and standard deviation (n-1 denominator; 0 for one run)
/// of per-run (AUC-PR, AUC-ROC) pairs.
pub fn aggregate_runs(per_run: &[(f64, f64)]) -> Result<((f64, f64), (f64, f64))> {
    if per_run.is_empty() {
        return Err(Error::Config("aggregate_runs needs at least one run".into()));
    }
    let mean_std = |values: Vec<f64>| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        (mean, std)
    };
    let pr = mean_std(per_run.iter().map(|r| r.0).collect());
    let roc = mean_std(per_run.iter().map(|r| r.1).collect());
    Ok((pr, roc))
}

/// One aggregated results row for the report table.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub auc_pr_mean: f64,
    pub auc_pr_std: f64,
    pub auc_roc_mean: f64,
    pub auc_roc_std: f64,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out =
        String::from("scenario,method,auc_pr_mean,auc_pr_std,auc_roc_mean,auc_roc_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.scenario, r.method, r.auc_pr_mean, r.auc_pr_std, r.auc_roc_mean, r.auc_roc_std
        ));
    }
    out
}

pub fn results_table(rows: &[ResultRow]) -> String {
    let mut widths = ("scenario".len(), "method".len());
    for r in rows {
        widths.0 = widths.0.max(r.scenario.len());
        widths.1 = widths.1.max(r.method.len());
    }
    let mut out = format!(
        "{:<w0$}  {:<w1$}  {:>16}  {:>16}\n",
        "scenario",
        "method",
        "auc_pr",
        "auc_roc",
        w0 = widths.0,
        w1 = widths.1
    );
    for r in rows {
        out.push_str(&format!(
            "{:<w0$}  {:<w1$}  {:>7.4}\u{b1}{:<8.4}  {:>7.4}\u{b1}{:<8.4}\n",
            r.scenario,
            r.method,
            r.auc_pr_mean,
            r.auc_pr_std,
            r.auc_roc_mean,
            r.auc_roc_std,
            w0 = widths.0,
            w1 = widths.1
        ));
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::new(
            scores.to_vec(),
            labels.iter().map(|&l| l == 1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn auc_roc_perfect_ranking() {
        assert_eq!(auc_roc(&ls(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
    }

    #[test]
    fn auc_roc_mixed_pairs() {
        // One concordant, one discordant pair.
        assert_eq!(auc_roc(&ls(&[0.9, 0.8, 0.1], &[1, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn auc_roc_all_ties() {
        assert_eq!(auc_roc(&ls(&[0.4, 0.4, 0.4], &[1, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn auc_roc_single_class_errors() {
        assert!(auc_roc(&ls(&[0.5, 0.6], &[1, 1])).is_err());
    }

    #[test]
    fn auc_roc_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [10usize, 100, 2000] {
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() / 20.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.1).collect();
            if !labels.iter().any(|b| *b) || labels.iter().all(|b| *b) {
                continue;
            }
            let l = LabeledScores::new(scores, labels).unwrap();
            let fast = auc_roc(&l).unwrap();
            let brute = oracle::auc_roc_brute_force(&l);
            assert!((fast - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn auc_pr_perfect() {
        assert_eq!(auc_pr(&ls(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
    }

    #[test]
    fn auc_pr_hand_example() {
        // Hits at ranks 2 and 3: (1/2 + 2/3) / 2.
        let v = auc_pr(&ls(&[0.9, 0.8, 0.1], &[0, 1, 1])).unwrap();
        assert!((v - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((v - 0.5833).abs() < 1e-4);
    }

    #[test]
    fn auc_pr_ties_pessimistic() {
        // One anomaly tied with one normal: anomaly placed second, AP = 1/2.
        assert_eq!(auc_pr(&ls(&[0.5, 0.5], &[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn auc_pr_random_scores_near_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 50_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.02).collect();
        let v = auc_pr(&LabeledScores::new(scores, labels).unwrap()).unwrap();
        assert!((v - 0.02).abs() < 0.01, "AP {v}");
    }

    #[test]
    fn auc_pr_no_anomalies_errors() {
        assert!(auc_pr(&ls(&[0.5, 0.6], &[0, 0])).is_err());
    }

    #[test]
    fn worst_case_ap_closed_form() {
        // All k anomalies ranked last among n: AP = (1/k) * sum_{i=1..k} i/(n-k+i).
        let (n, k) = (20usize, 4usize);
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= n - k).collect();
        let v = auc_pr(&LabeledScores::new(scores, labels).unwrap()).unwrap();
        let expected: f64 =
            (1..=k).map(|i| i as f64 / (n - k + i) as f64).sum::<f64>() / k as f64;
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let ((pm, ps), (rm, rs)) = aggregate_runs(&[(0.6, 0.8), (0.8, 0.8)]).unwrap();
        assert!((pm - 0.7).abs() < 1e-12);
        assert!((ps - 0.1414).abs() < 1e-4);
        assert!((rm - 0.8).abs() < 1e-12);
        assert_eq!(rs, 0.0);
        let ((_, ps1), _) = aggregate_runs(&[(0.5, 0.5)]).unwrap();
        assert_eq!(ps1, 0.0);
    }

    #[test]
    fn aggregate_permutation_invariant() {
        let a = aggregate_runs(&[(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)]).unwrap();
        let b = aggregate_runs(&[(0.5, 0.6), (0.1, 0.2), (0.3, 0.4)]).unwrap();
        assert!((a.0 .0 - b.0 .0).abs() < 1e-12);
        assert!((a.0 .1 - b.0 .1).abs() < 1e-12);
        assert!((a.1 .0 - b.1 .0).abs() < 1e-12);
        assert!((a.1 .1 - b.1 .1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 5..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|b| *b) && !labels.iter().all(|b| *b));
            let base = LabeledScores::new(scores.clone(), labels.clone()).unwrap();
            // Strictly monotone transform: x -> exp(3x) + x.
            let transformed = LabeledScores::new(
                scores.iter().map(|s| (3.0 * s).exp() + s).collect(),
                labels,
            ).unwrap();
            prop_assert!((auc_roc(&base).unwrap() - auc_roc(&transformed).unwrap()).abs() < 1e-9);
            prop_assert!((auc_pr(&base).unwrap() - auc_pr(&transformed).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn auc_roc_equals_brute_force_prop(
            raw in proptest::collection::vec((0u8..8, any::<bool>()), 4..80)
        ) {
            // Coarse integer scores force plenty of ties.
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|b| *b) && !labels.iter().all(|b| *b));
            let l = LabeledScores::new(scores, labels).unwrap();
            prop_assert!((auc_roc(&l).unwrap() - oracle::auc_roc_brute_force(&l)).abs() < 1e-9);
        }
    }
}
