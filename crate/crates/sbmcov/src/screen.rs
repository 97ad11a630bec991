//! Correlation screening: which off-diagonal entries stay free in the
//! covariance model, and how to choose the threshold that decides it.
//!
//! The rule keeps exactly the unordered pairs (j, k) with |ρ̂_jk| > r (strict,
//! so ties at the threshold drop out and nesting in r is exact). Because the
//! correlation Bayes factor is strictly increasing in ρ̂², thresholding |ρ̂| at
//! r is the same screen as thresholding Bayes factors at r_J = BF(r²), which
//! is what the FNR-based calibration exploits: it simulates |ρ̂| draws at a
//! reference correlation and takes their α-quantile instead of evaluating
//! thousands of Bayes factors with identical output.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::randdist::{self, jeffreys_bf, DistError, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum ScreenError {
    /// A column has zero sum of squares (after centering, when enabled).
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Sample correlation matrix: symmetric, unit diagonal, entries in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct CorrMatrix {
    entries: Array2<f64>,
}

impl CorrMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[[j, k]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Builds from a square array, enforcing the invariants: the lower
    /// triangle is mirrored, entries are clamped to [-1, 1], and the
    /// diagonal is set to exactly one.
    pub fn from_array(a: Array2<f64>) -> Result<Self, ScreenError> {
        let p = a.nrows();
        if p != a.ncols() || p < 2 {
            return Err(ScreenError::TooFewColumns(p.min(a.ncols())));
        }
        let mut entries = a;
        for j in 0..p {
            entries[[j, j]] = 1.0;
            for k in 0..j {
                let v = entries[[j, k]].clamp(-1.0, 1.0);
                entries[[j, k]] = v;
                entries[[k, j]] = v;
            }
        }
        Ok(CorrMatrix { entries })
    }

    /// The p(p-1)/2 absolute off-diagonal values in (j < k) order.
    pub fn abs_offdiag(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for j in 0..p {
            for k in (j + 1)..p {
                out.push(self.entries[[j, k]].abs());
            }
        }
        out
    }
}

/// Computes sample correlations ρ̂_jk = Σᵢ X_ij X_ik / √(Σᵢ X²_ij · Σᵢ X²_ik),
/// optionally after subtracting column means. The cross-product form is the
/// model's own: data are treated as mean zero unless `center` is set.
pub fn sample_correlations(x: &Array2<f64>, center: bool) -> Result<CorrMatrix, ScreenError> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(ScreenError::TooFewRows(n));
    }
    if p < 2 {
        return Err(ScreenError::TooFewColumns(p));
    }
    let work;
    let data = if center {
        let mut m = x.clone();
        for mut col in m.columns_mut() {
            let mean = col.sum() / n as f64;
            col.mapv_inplace(|v| v - mean);
        }
        work = m;
        &work
    } else {
        x
    };
    let mut norms = vec![0.0f64; p];
    for (j, col) in data.columns().into_iter().enumerate() {
        let ss: f64 = col.iter().map(|v| v * v).sum();
        if ss <= 0.0 {
            return Err(ScreenError::ZeroVarianceColumn(j));
        }
        norms[j] = ss.sqrt();
    }
    // Gram matrix of the (optionally centered) columns, then normalize.
    let gram = data.t().dot(data);
    let mut entries = Array2::zeros((p, p));
    for j in 0..p {
        for k in 0..j {
            let v = (gram[[j, k]] / (norms[j] * norms[k])).clamp(-1.0, 1.0);
            entries[[j, k]] = v;
            entries[[k, j]] = v;
        }
        entries[[j, j]] = 1.0;
    }
    Ok(CorrMatrix { entries })
}

/// The screened index set: unordered off-diagonal pairs kept free, plus the
/// per-column adjacency lists the sampler iterates over.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenSet {
    p: usize,
    threshold: f64,
    pairs: Vec<(usize, usize)>,
    /// adjacency[j] lists (neighbor, index into `pairs`), neighbors sorted.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl ScreenSet {
    /// Builds from explicit pairs (canonicalized to j < k, deduplicated).
    pub fn from_pairs(
        p: usize,
        threshold: f64,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut canon: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|&(a, b)| a != b)
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        canon.sort_unstable();
        canon.dedup();
        assert!(canon.iter().all(|&(_, b)| b < p), "pair index out of range");
        let mut adjacency = vec![Vec::new(); p];
        for (idx, &(a, b)) in canon.iter().enumerate() {
            adjacency[a].push((b, idx));
            adjacency[b].push((a, idx));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        ScreenSet {
            p,
            threshold,
            pairs: canon,
            adjacency,
        }
    }

    /// Every off-diagonal pair: the unscreened (r = 0 style) support.
    pub fn complete(p: usize) -> Self {
        let pairs = (0..p).flat_map(|j| ((j + 1)..p).map(move |k| (j, k)));
        Self::from_pairs(p, 0.0, pairs)
    }

    pub fn empty(p: usize, threshold: f64) -> Self {
        Self::from_pairs(p, threshold, std::iter::empty())
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Number of retained pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Neighbors of column j, each with the pair index its latents live under.
    pub fn neighbors(&self, j: usize) -> &[(usize, usize)] {
        &self.adjacency[j]
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        if j == k {
            return false;
        }
        let key = if j < k { (j, k) } else { (k, j) };
        self.pairs.binary_search(&key).is_ok()
    }
}

/// The screening rule: keep pairs with |ρ̂_jk| strictly above r.
pub fn screen(corr: &CorrMatrix, r: f64) -> ScreenSet {
    let p = corr.dim();
    let pairs = (0..p).flat_map(|j| {
        ((j + 1)..p).filter_map(move |k| {
            if corr.get(j, k).abs() > r {
                Some((j, k))
            } else {
                None
            }
        })
    });
    ScreenSet::from_pairs(p, r, pairs)
}

/// Empirical q-quantile of the absolute off-diagonal correlations,
/// nearest-rank with the lower convention: the smallest order statistic whose
/// rank is at least q times the count.
pub fn quantile_threshold(corr: &CorrMatrix, q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q), "quantile must lie in [0, 1]");
    let mut values = corr.abs_offdiag();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nearest_rank_lower(&values, q)
}

/// Nearest-rank lower quantile of an ascending-sorted slice.
pub(crate) fn nearest_rank_lower(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let m = sorted.len();
    let rank = (q * m as f64).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

/// Inputs for the FNR-controlled threshold: simulate `reps` bivariate-normal
/// datasets of size `n` at the reference correlation `rho_star`, and cut at
/// the `alpha_fnr`-quantile so at most that share of genuinely correlated
/// pairs is lost to screening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnrCalibration {
    /// Floor of meaningful correlation magnitudes. The shipped default of
    /// 0.2 comes from a numerical study, not a general recommendation.
    pub rho_star: f64,
    pub alpha_fnr: f64,
    /// Replication count B.
    pub reps: usize,
    pub n: usize,
    pub kappa: f64,
}

impl Default for FnrCalibration {
    fn default() -> Self {
        FnrCalibration {
            rho_star: 0.2,
            alpha_fnr: 0.01,
            reps: 10_000,
            n: 0,
            kappa: 1.0,
        }
    }
}

impl FnrCalibration {
    fn validate(&self) -> Result<(), ScreenError> {
        if !(self.rho_star > 0.0 && self.rho_star < 1.0) {
            return Err(ScreenError::InvalidCalibration(format!(
                "rho_star must lie in (0, 1), got {}",
                self.rho_star
            )));
        }
        if !(self.alpha_fnr > 0.0 && self.alpha_fnr < 1.0) {
            return Err(ScreenError::InvalidCalibration(format!(
                "alpha_fnr must lie in (0, 1), got {}",
                self.alpha_fnr
            )));
        }
        if self.reps == 0 {
            return Err(ScreenError::InvalidCalibration("reps must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(ScreenError::InvalidCalibration(format!(
                "n must be >= 2, got {}",
                self.n
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 2.0) {
            return Err(ScreenError::Dist(DistError::KappaOutOfRange(self.kappa)));
        }
        Ok(())
    }
}

/// Machine-readable calibration result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub r: f64,
    pub r_j: f64,
    pub rho_star: f64,
    pub alpha_fnr: f64,
    pub reps: usize,
    pub n: usize,
    pub kappa: f64,
    pub seed: u64,
}

/// FNR-calibrated threshold: returns (r, r_J) where r is the
/// `alpha_fnr`-quantile of simulated |ρ̂| values at correlation `rho_star`,
/// and r_J = BF(r²) is the equivalent Bayes-factor cutoff, reported for
/// transparency.
pub fn calibrate_threshold_fnr(
    cal: &FnrCalibration,
    rng: &mut RngStream,
) -> Result<(f64, f64), ScreenError> {
    cal.validate()?;
    let rho = cal.rho_star;
    let comp = (1.0 - rho * rho).sqrt();
    let mut abs_corrs = Vec::with_capacity(cal.reps);
    for _ in 0..cal.reps {
        let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..cal.n {
            let z1 = randdist::sample_normal(0.0, 1.0, rng);
            let z2 = randdist::sample_normal(0.0, 1.0, rng);
            let x = z1;
            let y = rho * z1 + comp * z2;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        abs_corrs.push((sxy / (sxx * syy).sqrt()).abs().clamp(0.0, 1.0));
    }
    abs_corrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = nearest_rank_lower(&abs_corrs, cal.alpha_fnr);
    let r_j = jeffreys_bf(r * r, cal.n, cal.kappa)?;
    Ok((r, r_j))
}

/// Rate-style threshold r = C_th * sqrt(log(max(n, p)) / n).
pub fn theoretical_threshold(n: usize, p: usize, c_th: f64) -> f64 {
    assert!(n >= 2, "n must be >= 2");
    assert!(c_th > 0.0, "C_th must be positive");
    let m = n.max(p) as f64;
    c_th * (m.ln() / n as f64).sqrt()
}
