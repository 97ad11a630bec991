//! Synthetic truth generation, data sampling, accuracy metrics, and the
//! replication harness.
//!
//! Replications are embarrassingly parallel: each one owns a block of RNG
//! streams derived from the experiment seed and its replication index, so the
//! results table is identical whatever the thread schedule.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matstore::{self, MatError, SymMatrix};
use crate::randdist::{self, streams, RngStream};
use crate::sbm::{self, ChainConfig, HyperParams, SbmError, StoreMode};
use crate::screen::{self, FnrCalibration, ScreenError, ScreenSet};

/// Diagonal lift target of the positive-definiteness fix (0.1^5).
pub const PD_FIX_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Chain(#[from] SbmError),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
}

/// Sparsity patterns for the synthetic truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovKind {
    /// Each off-diagonal entry is nonzero independently with the given
    /// probability, drawn uniformly from the value range.
    Random {
        nonzero_prob: f64,
        value_range: (f64, f64),
    },
    /// Disjoint contiguous groups; every member correlates with its group's
    /// hub (the first index of the block).
    Hubs {
        groups: usize,
        value_range: (f64, f64),
    },
    /// Disjoint contiguous groups; the first `members` indices of each group
    /// form a fully connected clique.
    Cliques {
        groups: usize,
        members: usize,
        value_range: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovDesign {
    pub p: usize,
    #[serde(flatten)]
    pub kind: CovKind,
}

impl CovDesign {
    /// Sparse negative entries: nonzero with probability 1/p on
    /// Unif(-0.8, -0.2).
    pub fn random(p: usize) -> Self {
        CovDesign {
            p,
            kind: CovKind::Random {
                nonzero_prob: 1.0 / p as f64,
                value_range: (-0.8, -0.2),
            },
        }
    }

    /// The variant used for timing studies: 1% density on Unif(0.1, 0.4).
    pub fn random_speed_study(p: usize) -> Self {
        CovDesign {
            p,
            kind: CovKind::Random {
                nonzero_prob: 0.01,
                value_range: (0.1, 0.4),
            },
        }
    }

    /// Ten hub groups with loadings on Unif(0.1, 0.5).
    pub fn hubs(p: usize) -> Self {
        CovDesign {
            p,
            kind: CovKind::Hubs {
                groups: 10,
                value_range: (0.1, 0.5),
            },
        }
    }

    /// Ten groups, three-member cliques, values on Unif(-0.45, -0.1).
    pub fn cliques(p: usize) -> Self {
        CovDesign {
            p,
            kind: CovKind::Cliques {
                groups: 10,
                members: 3,
                value_range: (-0.45, -0.1),
            },
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.p < 2 {
            return Err(SimError::InvalidDesign("p must be >= 2".into()));
        }
        match &self.kind {
            CovKind::Random {
                nonzero_prob,
                value_range,
            } => {
                if !(0.0..=1.0).contains(nonzero_prob) {
                    return Err(SimError::InvalidDesign(format!(
                        "nonzero_prob must lie in [0, 1], got {nonzero_prob}"
                    )));
                }
                check_range(*value_range)?;
            }
            CovKind::Hubs {
                groups,
                value_range,
            } => {
                if *groups == 0 || *groups > self.p {
                    return Err(SimError::InvalidDesign(format!(
                        "groups must lie in 1..=p, got {groups}"
                    )));
                }
                check_range(*value_range)?;
            }
            CovKind::Cliques {
                groups,
                members,
                value_range,
            } => {
                if *groups == 0 || *groups > self.p {
                    return Err(SimError::InvalidDesign(format!(
                        "groups must lie in 1..=p, got {groups}"
                    )));
                }
                let max_members = self.p.div_ceil(*groups);
                if *members > max_members {
                    return Err(SimError::InvalidDesign(format!(
                        "members ({members}) exceeds the largest group size ({max_members})"
                    )));
                }
                check_range(*value_range)?;
            }
        }
        Ok(())
    }
}

fn check_range((lo, hi): (f64, f64)) -> Result<(), SimError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SimError::InvalidDesign(format!(
            "invalid value range ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Generated truth: the covariance and its exact support.
#[derive(Clone, Debug)]
pub struct TrueCov {
    pub sigma: SymMatrix,
    /// Bitwise-nonzero off-diagonal pairs, j < k.
    pub support: Vec<(usize, usize)>,
    /// Diagonal shift the positive-definiteness fix added (0 when skipped).
    pub pd_shift: f64,
}

/// Draws a true covariance with unit diagonal per the design, then lifts the
/// diagonal so λ_min reaches 0.1^5 whenever the raw matrix falls short.
pub fn gen_true_cov(design: &CovDesign, rng: &mut RngStream) -> Result<TrueCov, SimError> {
    design.validate()?;
    let p = design.p;
    let mut sigma = SymMatrix::identity(p);
    match &design.kind {
        CovKind::Random {
            nonzero_prob,
            value_range,
        } => {
            for j in 0..p {
                for k in (j + 1)..p {
                    if uniform(rng) < *nonzero_prob {
                        sigma.set(j, k, uniform_in(*value_range, rng));
                    }
                }
            }
        }
        CovKind::Hubs { groups, value_range } => {
            for block in contiguous_blocks(p, *groups) {
                let hub = block.start;
                for i in block.skip(1) {
                    sigma.set(i, hub, uniform_in(*value_range, rng));
                }
            }
        }
        CovKind::Cliques {
            groups,
            members,
            value_range,
        } => {
            for block in contiguous_blocks(p, *groups) {
                let chosen: Vec<usize> = block.take(*members).collect();
                for (i, &a) in chosen.iter().enumerate() {
                    for &b in &chosen[i + 1..] {
                        sigma.set(a, b, uniform_in(*value_range, rng));
                    }
                }
            }
        }
    }
    let pd_shift = apply_pd_fix(&mut sigma);
    let mut support = Vec::new();
    for j in 0..p {
        for k in (j + 1)..p {
            if sigma.get(j, k) != 0.0 {
                support.push((j, k));
            }
        }
    }
    Ok(TrueCov {
        sigma,
        support,
        pd_shift,
    })
}

fn uniform(rng: &mut RngStream) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}

fn uniform_in((lo, hi): (f64, f64), rng: &mut RngStream) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

fn contiguous_blocks(p: usize, groups: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let base = p / groups;
    let rem = p % groups;
    let mut start = 0;
    (0..groups).map(move |g| {
        let len = base + usize::from(g < rem);
        let r = start..start + len;
        start += len;
        r
    })
}

/// Lifts the diagonal by (floor - λ_min) when the smallest eigenvalue sits
/// below the floor; otherwise leaves the matrix untouched. Returns the shift.
/// The shift uses the certified lower end of the bisection bracket, so the
/// post-fix λ_min is never below the floor.
fn apply_pd_fix(sigma: &mut SymMatrix) -> f64 {
    let low = lambda_min_bracket(sigma).0;
    if low >= PD_FIX_FLOOR {
        return 0.0;
    }
    let shift = PD_FIX_FLOOR - low;
    for j in 0..sigma.dim() {
        sigma.set(j, j, sigma.get(j, j) + shift);
    }
    shift
}

/// Smallest eigenvalue via bisection on shifted factorizations: λ is below
/// λ_min exactly when A - λI admits a Cholesky factorization. No general
/// eigensolver involved. Returns the midpoint of the final bracket.
pub fn lambda_min(a: &SymMatrix) -> f64 {
    let (lo, hi) = lambda_min_bracket(a);
    0.5 * (lo + hi)
}

fn lambda_min_bracket(a: &SymMatrix) -> (f64, f64) {
    let p = a.dim();
    // Gershgorin lower bound; smallest diagonal entry as the upper bound.
    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    for j in 0..p {
        let mut radius = 0.0;
        for k in 0..p {
            if k != j {
                radius += a.get(j, k).abs();
            }
        }
        lo = lo.min(a.get(j, j) - radius);
        hi = hi.min(a.get(j, j));
    }
    let tol = 1e-10 * a.max_abs().max(1.0);
    let shifted_pd = |lambda: f64| -> bool {
        let mut work = a.as_array().clone();
        for d in 0..p {
            work[[d, d]] -= lambda;
        }
        matstore::cholesky_of_array(&work).is_ok()
    };
    if !shifted_pd(lo) {
        // The Gershgorin bound is attained; λ_min equals it.
        return (lo, lo);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if shifted_pd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Draws n i.i.d. mean-zero Gaussian rows with the given covariance.
pub fn sample_data(
    sigma0: &SymMatrix,
    n: usize,
    rng: &mut RngStream,
) -> Result<Array2<f64>, SimError> {
    let l = matstore::cholesky_factor(sigma0)?;
    let z = randdist::standard_normal_matrix(n, sigma0.dim(), rng);
    Ok(z.dot(&l.t()))
}

/// Root mean squared error ‖est - truth‖_F / p.
pub fn rmse(est: &SymMatrix, truth: &SymMatrix) -> Result<f64, SimError> {
    check_dims(est, truth)?;
    let p = est.dim();
    let mut acc = 0.0;
    for j in 0..p {
        for k in 0..p {
            let d = est.get(j, k) - truth.get(j, k);
            acc += d * d;
        }
    }
    Ok(acc.sqrt() / p as f64)
}

/// Entrywise maximum norm max_{j<=k} |est - truth|.
pub fn mnorm(est: &SymMatrix, truth: &SymMatrix) -> Result<f64, SimError> {
    check_dims(est, truth)?;
    let p = est.dim();
    let mut worst: f64 = 0.0;
    for j in 0..p {
        for k in j..p {
            worst = worst.max((est.get(j, k) - truth.get(j, k)).abs());
        }
    }
    Ok(worst)
}

fn check_dims(a: &SymMatrix, b: &SymMatrix) -> Result<(), SimError> {
    if a.dim() != b.dim() {
        return Err(SimError::DimMismatch(format!("{} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// How the screening threshold is chosen before the chain runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum ScreeningRecipe {
    /// Fixed threshold on |ρ̂|; 0 is the unscreened baseline run through the
    /// same machinery.
    Fixed { r: f64 },
    /// Quantile of the absolute off-diagonal sample correlations.
    Quantile { q: f64 },
    /// FNR-calibrated threshold; n is taken from the data at hand.
    Fnr {
        rho_star: f64,
        alpha_fnr: f64,
        reps: usize,
        kappa: f64,
    },
    /// Keep every pair regardless of the data.
    Complete,
}

impl ScreeningRecipe {
    /// Resolves the recipe on concrete data: the threshold (with its
    /// Bayes-factor twin when FNR-calibrated) and the screen set.
    pub fn resolve(
        &self,
        x: &Array2<f64>,
        center: bool,
        seed: u64,
        calibration_stream: u64,
    ) -> Result<ResolvedScreen, SimError> {
        let p = x.ncols();
        match self {
            ScreeningRecipe::Complete => Ok(ResolvedScreen {
                r: 0.0,
                r_j: None,
                set: ScreenSet::complete(p),
            }),
            ScreeningRecipe::Fixed { r } => {
                let corr = screen::sample_correlations(x, center)?;
                Ok(ResolvedScreen {
                    r: *r,
                    r_j: None,
                    set: screen::screen(&corr, *r),
                })
            }
            ScreeningRecipe::Quantile { q } => {
                let corr = screen::sample_correlations(x, center)?;
                let r = screen::quantile_threshold(&corr, *q);
                Ok(ResolvedScreen {
                    r,
                    r_j: None,
                    set: screen::screen(&corr, r),
                })
            }
            ScreeningRecipe::Fnr {
                rho_star,
                alpha_fnr,
                reps,
                kappa,
            } => {
                let cal = FnrCalibration {
                    rho_star: *rho_star,
                    alpha_fnr: *alpha_fnr,
                    reps: *reps,
                    n: x.nrows(),
                    kappa: *kappa,
                };
                let mut rng = RngStream::new(seed, calibration_stream);
                let (r, r_j) = screen::calibrate_threshold_fnr(&cal, &mut rng)?;
                let corr = screen::sample_correlations(x, center)?;
                Ok(ResolvedScreen {
                    r,
                    r_j: Some(r_j),
                    set: screen::screen(&corr, r),
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResolvedScreen {
    pub r: f64,
    pub r_j: Option<f64>,
    pub set: ScreenSet,
}

/// A covariance estimator pluggable into the replication harness. Estimators
/// derive any randomness they need from `(seed, rep)` so replications stay
/// independent and reproducible under parallel schedules.
pub trait CovEstimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, x: &Array2<f64>, seed: u64, rep: u64) -> Result<Estimate, SimError>;
}

/// Estimator output plus the bookkeeping the results table reports.
/// Estimators without a chain report zero cost and screen size.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub sigma: SymMatrix,
    pub screen_size: usize,
    pub seconds_per_1k_iter: f64,
}

/// Plain sample covariance X'X / n (after optional centering).
#[derive(Clone, Debug, Default)]
pub struct SampleCovEstimator {
    pub center: bool,
}

impl CovEstimator for SampleCovEstimator {
    fn name(&self) -> &str {
        "sample"
    }

    fn estimate(&self, x: &Array2<f64>, _seed: u64, _rep: u64) -> Result<Estimate, SimError> {
        let n = x.nrows();
        if n == 0 {
            return Err(SimError::DimMismatch("no rows".into()));
        }
        let work;
        let data = if self.center {
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
        let mut gram = data.t().dot(data);
        gram.mapv_inplace(|v| v / n as f64);
        Ok(Estimate {
            sigma: SymMatrix::from_lower_of(gram),
            screen_size: 0,
            seconds_per_1k_iter: 0.0,
        })
    }
}

/// The screened beta-mixture estimator: resolve the screen, run the chain,
/// report the posterior mean.
#[derive(Clone, Debug)]
pub struct SbmEstimator {
    pub recipe: ScreeningRecipe,
    /// Overrides the per-dataset defaults when set.
    pub hyper: Option<HyperParams>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub refresh_interval: u64,
    pub store_mode: StoreMode,
    pub center: bool,
}

impl SbmEstimator {
    pub fn new(recipe: ScreeningRecipe) -> Self {
        let cfg = ChainConfig::default();
        SbmEstimator {
            recipe,
            hyper: None,
            n_iter: cfg.n_iter,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            refresh_interval: cfg.refresh_interval,
            store_mode: StoreMode::Summaries,
            center: false,
        }
    }

    /// Full run with access to the chain summary and resolved screen.
    pub fn run(
        &self,
        x: &Array2<f64>,
        seed: u64,
        calibration_stream: u64,
        chain_stream: u64,
    ) -> Result<(sbm::RunSummary, ResolvedScreen), SimError> {
        let (n, p) = (x.nrows(), x.ncols());
        let resolved = self
            .recipe
            .resolve(x, self.center, seed, calibration_stream)?;
        let hp = match &self.hyper {
            Some(h) => h.clone(),
            None => HyperParams::defaults(n.max(2), p.max(2)),
        };
        let cfg = ChainConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            stream: chain_stream,
            refresh_interval: self.refresh_interval,
            store_mode: self.store_mode,
            sweep_order: sbm::SweepOrder::Fixed,
        };
        let summary = sbm::run_chain(x, &resolved.set, &hp, &cfg)?;
        Ok((summary, resolved))
    }
}

impl CovEstimator for SbmEstimator {
    fn name(&self) -> &str {
        "sbm"
    }

    fn estimate(&self, x: &Array2<f64>, seed: u64, rep: u64) -> Result<Estimate, SimError> {
        let (summary, _) = self.run(
            x,
            seed,
            streams::replication(rep, 2),
            streams::replication(rep, 3),
        )?;
        Ok(Estimate {
            screen_size: summary.screen_size,
            seconds_per_1k_iter: summary.diagnostics.seconds_per_sweep_mean * 1000.0,
            sigma: summary.posterior_mean,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub design: CovDesign,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
}

/// One replication's row of the results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub rmse: f64,
    pub mnorm: f64,
    pub seconds_per_1k_iter: f64,
    pub screen_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub metrics: Option<RepMetrics>,
    pub error: Option<String>,
}

/// Results table with per-replication rows and aggregate mean/sd over the
/// successful replications.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub estimator: String,
    pub rows: Vec<RepOutcome>,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mnorm_mean: f64,
    pub mnorm_sd: f64,
    pub failures: usize,
}

/// Runs the replication protocol: generate truth, sample data, estimate,
/// score. Failures are recorded per replication, not fatal. Rows come back
/// in replication order regardless of parallel scheduling.
pub fn run_experiment(
    spec: &ExperimentSpec,
    estimator: &dyn CovEstimator,
) -> Result<ExperimentTable, SimError> {
    spec.design.validate()?;
    if spec.replications == 0 {
        return Err(SimError::InvalidDesign("replications must be >= 1".into()));
    }
    let rows: Vec<RepOutcome> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| run_one_replication(spec, estimator, rep))
        .collect();
    Ok(summarize(estimator.name().to_string(), rows))
}

fn run_one_replication(
    spec: &ExperimentSpec,
    estimator: &dyn CovEstimator,
    rep: usize,
) -> RepOutcome {
    let attempt = || -> Result<RepMetrics, SimError> {
        let mut truth_rng = RngStream::new(spec.seed, streams::replication(rep as u64, 0));
        let truth = gen_true_cov(&spec.design, &mut truth_rng)?;
        let mut data_rng = RngStream::new(spec.seed, streams::replication(rep as u64, 1));
        let x = sample_data(&truth.sigma, spec.n, &mut data_rng)?;
        let est = estimator.estimate(&x, spec.seed, rep as u64)?;
        Ok(RepMetrics {
            rep,
            rmse: rmse(&est.sigma, &truth.sigma)?,
            mnorm: mnorm(&est.sigma, &truth.sigma)?,
            seconds_per_1k_iter: est.seconds_per_1k_iter,
            screen_size: est.screen_size,
        })
    };
    match attempt() {
        Ok(metrics) => RepOutcome {
            rep,
            metrics: Some(metrics),
            error: None,
        },
        Err(e) => RepOutcome {
            rep,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

fn summarize(estimator: String, rows: Vec<RepOutcome>) -> ExperimentTable {
    let ok: Vec<&RepMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let failures = rows.len() - ok.len();
    let (rmse_mean, rmse_sd) = mean_sd(ok.iter().map(|r| r.rmse));
    let (mnorm_mean, mnorm_sd) = mean_sd(ok.iter().map(|r| r.mnorm));
    ExperimentTable {
        estimator,
        rows,
        rmse_mean,
        rmse_sd,
        mnorm_mean,
        mnorm_sd,
        failures,
    }
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}
