//! Linear discriminant classification on top of a pluggable covariance
//! estimator, scored by leave-one-out cross-validation.
//!
//! The discriminant for class k is x'Σ̂⁻¹μ̂_k - ½ μ̂_k'Σ̂⁻¹μ̂_k + log π̂_k with a
//! common Σ̂. By default the estimator sees the pooled class-mean-centered
//! residuals, matching the equal-covariance model behind the rule; fitting on
//! raw rows is available behind a flag. Multi-class precision/recall/F1 are
//! macro-averaged (unweighted mean over classes).

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matstore::{self, MatError};
use crate::randdist::streams;
use crate::simlab::{CovEstimator, SimError};

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("leave-one-out needs at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error(transparent)]
    Estimator(#[from] SimError),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// Rows with dense class ids 0..K; every class nonempty.
#[derive(Clone, Debug)]
pub struct LabeledData {
    x: Array2<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl LabeledData {
    pub fn new(x: Array2<f64>, labels: Vec<usize>) -> Result<Self, LdaError> {
        if x.nrows() != labels.len() {
            return Err(LdaError::Shape(format!(
                "{} rows vs {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(LdaError::Shape("no samples".into()));
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(LdaError::EmptyClass(empty));
        }
        Ok(LabeledData {
            x,
            labels,
            class_counts: counts,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// What the covariance estimator is fit on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Class-mean-centered residuals (the model-consistent default).
    CenteredResiduals,
    /// The raw rows, uncentered.
    Raw,
}

struct ClassStats {
    class: usize,
    /// Σ̂⁻¹ μ̂_k.
    alpha: Vec<f64>,
    /// -½ μ̂_k' Σ̂⁻¹ μ̂_k + log π̂_k.
    beta: f64,
}

/// Fitted discriminant rule: solves against Σ̂ are precomputed per class.
pub struct LdaModel {
    p: usize,
    classes: Vec<ClassStats>,
}

/// Fits class means, proportions, and the shared covariance (through the
/// supplied estimator). Classes absent from the training rows are skipped:
/// they can never be predicted. `seed`/`fold` separate estimator randomness
/// across cross-validation folds.
pub fn fit_lda(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    estimator: &dyn CovEstimator,
    pooling: PoolingMode,
    seed: u64,
    fold: u64,
) -> Result<LdaModel, LdaError> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != labels.len() || n == 0 {
        return Err(LdaError::Shape(format!("{n} rows vs {} labels", labels.len())));
    }
    let mut counts = vec![0usize; n_classes];
    let mut means = vec![vec![0.0f64; p]; n_classes];
    for (row, &label) in x.rows().into_iter().zip(labels) {
        counts[label] += 1;
        for (m, v) in means[label].iter_mut().zip(row) {
            *m += v;
        }
    }
    for (mean, &count) in means.iter_mut().zip(&counts) {
        if count > 0 {
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
        }
    }

    let estimator_input = match pooling {
        PoolingMode::Raw => x.clone(),
        PoolingMode::CenteredResiduals => {
            let mut resid = x.clone();
            for (mut row, &label) in resid.rows_mut().into_iter().zip(labels) {
                for (v, m) in row.iter_mut().zip(&means[label]) {
                    *v -= m;
                }
            }
            resid
        }
    };
    let sigma_hat = estimator.estimate(&estimator_input, seed, fold)?.sigma;
    let chol = matstore::cholesky_factor(&sigma_hat)?;

    let mut classes = Vec::new();
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let mut alpha = means[class].clone();
        matstore::solve_lower_inplace(&chol, &mut alpha);
        matstore::solve_lower_transpose_inplace(&chol, &mut alpha);
        let quad: f64 = means[class].iter().zip(&alpha).map(|(m, a)| m * a).sum();
        let log_prior = (count as f64 / n as f64).ln();
        classes.push(ClassStats {
            class,
            alpha,
            beta: -0.5 * quad + log_prior,
        });
    }
    Ok(LdaModel { p, classes })
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.p
    }

    /// Discriminant value per fitted class, in class-id order.
    pub fn discriminants(&self, x: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(x.len(), self.p, "feature dimension mismatch");
        self.classes
            .iter()
            .map(|c| {
                let dot: f64 = x.iter().zip(&c.alpha).map(|(a, b)| a * b).sum();
                (c.class, dot + c.beta)
            })
            .collect()
    }

    /// Argmax of the discriminants; ties break to the lowest class id.
    pub fn classify(&self, x: &[f64]) -> usize {
        let scores = self.discriminants(x);
        let mut best = scores[0];
        for &(class, score) in &scores[1..] {
            if score > best.1 {
                best = (class, score);
            }
        }
        best.0
    }
}

/// The four reported scores, all in [0, 1]. Precision, recall, and F1 are
/// macro-averaged over classes for K > 2.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub truth: usize,
    pub predicted: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoocvReport {
    pub scores: Scores,
    pub folds: Vec<FoldOutcome>,
    pub failed_folds: usize,
}

/// Leave-one-out cross-validation: n refits, one per held-out row, each on
/// its own RNG stream. Estimator failures are recorded per fold and excluded
/// from the scores rather than aborting the evaluation.
pub fn loocv_scores(
    data: &LabeledData,
    estimator: &dyn CovEstimator,
    pooling: PoolingMode,
    seed: u64,
) -> Result<LoocvReport, LdaError> {
    let n = data.n();
    let k = data.n_classes();
    if n < k + 1 {
        return Err(LdaError::TooFewSamples { need: k + 1, got: n });
    }
    let p = data.p();
    let folds: Vec<FoldOutcome> = (0..n)
        .into_par_iter()
        .map(|held_out| {
            let truth = data.labels[held_out];
            let mut train_x = Array2::zeros((n - 1, p));
            let mut train_labels = Vec::with_capacity(n - 1);
            let mut r = 0;
            for i in 0..n {
                if i == held_out {
                    continue;
                }
                train_x.row_mut(r).assign(&data.x.row(i));
                train_labels.push(data.labels[i]);
                r += 1;
            }
            let fitted = fit_lda(
                &train_x,
                &train_labels,
                k,
                estimator,
                pooling,
                seed,
                streams::fold(held_out as u64),
            );
            match fitted {
                Ok(model) => {
                    let x_i: Vec<f64> = data.x.row(held_out).to_vec();
                    FoldOutcome {
                        fold: held_out,
                        truth,
                        predicted: Some(model.classify(&x_i)),
                        error: None,
                    }
                }
                Err(e) => FoldOutcome {
                    fold: held_out,
                    truth,
                    predicted: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let failed_folds = folds.iter().filter(|f| f.predicted.is_none()).count();
    let scores = macro_scores(&folds, k);
    Ok(LoocvReport {
        scores,
        folds,
        failed_folds,
    })
}

fn macro_scores(folds: &[FoldOutcome], k: usize) -> Scores {
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fnc = vec![0usize; k];
    let mut correct = 0usize;
    let mut total = 0usize;
    for f in folds {
        let Some(pred) = f.predicted else { continue };
        total += 1;
        if pred == f.truth {
            correct += 1;
            tp[f.truth] += 1;
        } else {
            fp[pred] += 1;
            fnc[f.truth] += 1;
        }
    }
    let accuracy = if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    };
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for c in 0..k {
        let prec = if tp[c] + fp[c] > 0 {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        } else {
            0.0
        };
        let rec = if tp[c] + fnc[c] > 0 {
            tp[c] as f64 / (tp[c] + fnc[c]) as f64
        } else {
            0.0
        };
        let f = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        precision += prec;
        recall += rec;
        f1 += f;
    }
    Scores {
        accuracy,
        precision: precision / k as f64,
        recall: recall / k as f64,
        f1: f1 / k as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randdist::{self, RngStream};
    use crate::simlab::{Estimate, SampleCovEstimator};
    use crate::SymMatrix;

    /// Test estimator returning the identity: the rule degenerates to
    /// nearest-mean with a log-prior offset.
    struct IdentityCov;
    impl CovEstimator for IdentityCov {
        fn name(&self) -> &str {
            "identity"
        }
        fn estimate(&self, x: &Array2<f64>, _: u64, _: u64) -> Result<Estimate, SimError> {
            Ok(Estimate {
                sigma: SymMatrix::identity(x.ncols()),
                screen_size: 0,
                seconds_per_1k_iter: 0.0,
            })
        }
    }

    fn two_class_toy() -> (Array2<f64>, Vec<usize>) {
        let x = ndarray::array![
            [1.0, 0.1],
            [1.2, -0.1],
            [0.9, 0.0],
            [-1.0, 0.1],
            [-1.1, 0.0],
            [-0.95, -0.2]
        ];
        (x, vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn identity_covariance_is_nearest_mean() {
        let (x, labels) = two_class_toy();
        let model = fit_lda(
            &x,
            &labels,
            2,
            &IdentityCov,
            PoolingMode::CenteredResiduals,
            0,
            0,
        )
        .unwrap();
        // Equal class sizes: the prior offset is common and drops out, so
        // classification is by distance to the class mean.
        assert_eq!(model.classify(&[0.5, 0.0]), 0);
        assert_eq!(model.classify(&[-0.5, 0.0]), 1);
    }

    #[test]
    fn tie_breaks_to_lowest_class() {
        let x = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
        let labels = vec![0, 1];
        let model = fit_lda(&x, &labels, 2, &IdentityCov, PoolingMode::Raw, 0, 0).unwrap();
        // Equidistant from both means with equal priors.
        assert_eq!(model.classify(&[0.0, 0.7]), 0);
    }

    #[test]
    fn classify_matches_brute_force_discriminants() {
        let mut rng = RngStream::new(42, 1);
        let n = 60;
        let p = 4;
        let mut x = randdist::standard_normal_matrix(n, p, &mut rng);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row[0] += (i % 3) as f64 * 2.0;
        }
        let model = fit_lda(
            &x,
            &labels,
            3,
            &SampleCovEstimator::default(),
            PoolingMode::CenteredResiduals,
            0,
            0,
        )
        .unwrap();
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).to_vec();
            let scores = model.discriminants(&xi);
            let best = scores
                .iter()
                .fold(scores[0], |acc, &(c, s)| if s > acc.1 { (c, s) } else { acc });
            assert_eq!(model.classify(&xi), best.0);
        }
    }

    #[test]
    fn discriminant_shift_invariance() {
        // Adding a constant to every discriminant leaves the argmax alone;
        // the same holds for scaling all priors by a common factor, which
        // shifts every beta by the same log-constant.
        let (x, labels) = two_class_toy();
        let model = fit_lda(&x, &labels, 2, &IdentityCov, PoolingMode::Raw, 0, 0).unwrap();
        let mut shifted = LdaModel {
            p: model.p,
            classes: model
                .classes
                .iter()
                .map(|c| ClassStats {
                    class: c.class,
                    alpha: c.alpha.clone(),
                    beta: c.beta + 3.7,
                })
                .collect(),
        };
        for probe in [[0.4, 0.2], [-0.3, 0.9], [0.0, 0.0]] {
            assert_eq!(model.classify(&probe), shifted.classify(&probe));
        }
        shifted.classes[0].beta += 0.0;
    }

    #[test]
    fn four_class_mixture_beats_chance() {
        let mut rng = RngStream::new(7, 2);
        let n_per = 100;
        let p = 3;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..4usize {
            for _ in 0..n_per {
                let mut row = vec![0.0; p];
                for (d, r) in row.iter_mut().enumerate() {
                    *r = randdist::sample_normal(if d == class % p { 1.5 } else { 0.0 }, 1.0, &mut rng);
                }
                if class == 3 {
                    row[0] -= 1.5;
                    row[1] -= 1.5;
                }
                rows.push(row);
                labels.push(class);
            }
        }
        let mut x = Array2::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        let model = fit_lda(
            &x,
            &labels,
            4,
            &SampleCovEstimator::default(),
            PoolingMode::CenteredResiduals,
            0,
            0,
        )
        .unwrap();
        let mut correct = 0;
        for (i, &label) in labels.iter().enumerate() {
            if model.classify(&x.row(i).to_vec()) == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / labels.len() as f64;
        assert!(acc > 0.5, "training accuracy {acc} not above chance 0.25");
    }

    #[test]
    fn loocv_perfectly_separated_scores_one() {
        let mut x = Array2::zeros((12, 2));
        let mut labels = Vec::new();
        for i in 0..12 {
            let class = i / 6;
            x[[i, 0]] = if class == 0 { 5.0 } else { -5.0 } + 0.1 * (i % 6) as f64;
            x[[i, 1]] = 0.05 * (i % 6) as f64;
            labels.push(class);
        }
        let data = LabeledData::new(x, labels).unwrap();
        let report = loocv_scores(
            &data,
            &IdentityCov,
            PoolingMode::CenteredResiduals,
            0,
        )
        .unwrap();
        assert_eq!(report.folds.len(), 12);
        assert_eq!(report.failed_folds, 0);
        assert_eq!(report.scores.accuracy, 1.0);
        assert_eq!(report.scores.precision, 1.0);
        assert_eq!(report.scores.recall, 1.0);
        assert_eq!(report.scores.f1, 1.0);
    }

    #[test]
    fn loocv_label_permutation_near_chance() {
        let mut rng = RngStream::new(11, 3);
        let n = 200;
        let x = randdist::standard_normal_matrix(n, 3, &mut rng);
        // Labels independent of the features, balanced two classes.
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = LabeledData::new(x, labels).unwrap();
        let report = loocv_scores(
            &data,
            &SampleCovEstimator::default(),
            PoolingMode::CenteredResiduals,
            0,
        )
        .unwrap();
        assert!(
            (report.scores.accuracy - 0.5).abs() < 0.13,
            "accuracy {} far from chance",
            report.scores.accuracy
        );
    }

    #[test]
    fn loocv_runs_n_folds_and_is_reproducible() {
        let (x, labels) = two_class_toy();
        let data = LabeledData::new(x, labels).unwrap();
        let a = loocv_scores(&data, &IdentityCov, PoolingMode::CenteredResiduals, 5).unwrap();
        let b = loocv_scores(&data, &IdentityCov, PoolingMode::CenteredResiduals, 5).unwrap();
        assert_eq!(a.folds.len(), data.n());
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            assert_eq!(fa.predicted, fb.predicted);
        }
    }

    #[test]
    fn labeled_data_validation() {
        let x = Array2::zeros((3, 2));
        assert!(matches!(
            LabeledData::new(x.clone(), vec![0, 2, 2]),
            Err(LdaError::EmptyClass(1))
        ));
        assert!(LabeledData::new(x.clone(), vec![0, 1, 1]).is_ok());
        assert!(matches!(
            LabeledData::new(x, vec![0, 1]),
            Err(LdaError::Shape(_))
        ));
    }

    #[test]
    fn loocv_needs_enough_samples() {
        let x = Array2::zeros((2, 2));
        let data = LabeledData::new(x, vec![0, 1]).unwrap();
        assert!(matches!(
            loocv_scores(&data, &IdentityCov, PoolingMode::Raw, 0),
            Err(LdaError::TooFewSamples { .. })
        ));
    }
}
