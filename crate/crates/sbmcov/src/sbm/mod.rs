//! The screened beta-mixture block Gibbs sampler.
//!
//! One sweep rotates through the columns: for column j the off-diagonal block
//! is reparametrized as (u, η) with u the screened-in entries of the column
//! and η the Schur complement of the diagonal entry. η is a generalized
//! inverse Gaussian draw, u a multivariate normal in precision form of
//! dimension |S≠0(j)| — the count of screened-in neighbours, not p-1, which
//! is where the screening pays off. Off-support entries are never touched and
//! stay bitwise zero. The inverse Ω = Σ⁻¹ is maintained across column moves
//! by rank-one identities in O(p²) and recomputed from scratch every
//! `refresh_interval` sweeps to stop floating-point drift.
//!
//! The unscreened beta-mixture baseline is the same sampler run on the
//! complete pair set (the r = 0 screen).

mod checkpoint;
mod update;

pub use update::{update_column, update_latents, ColumnUpdate, SuffStats, TripleProductRoute};

use std::time::Instant;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matstore::{self, MatError, SymMatrix};
use crate::randdist::{streams, DistError, RngStream};
use crate::screen::ScreenSet;

#[derive(Debug, Error)]
pub enum SbmError {
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Dist(#[from] DistError),
    /// The GIG scale argument came out negative beyond round-off tolerance.
    #[error("GIG scale parameter {0:e} is negative beyond tolerance")]
    GigDomain(f64),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("invalid chain config: {0}")]
    InvalidConfig(String),
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Prior hyperparameters. `a`, `b` shape the beta mixing law on screened-in
/// entries, `c`, `d` the gamma law on diagonals, `tau1` is the global
/// shrinkage scale, and `eps` the eigenvalue floor of the positive-definite
/// restriction (0 disables it, the recommended practical choice).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lambda: f64,
    pub tau1: f64,
    pub eps: f64,
}

impl HyperParams {
    /// Default hyperparameters for an n x p problem: a = b = 1/2, c = 1,
    /// λ = 1, d = λ/2, ε = 0, and τ₁ = √(log p) / (p √n).
    pub fn defaults(n: usize, p: usize) -> Self {
        assert!(n >= 2 && p >= 2, "defaults need n, p >= 2");
        HyperParams {
            a: 0.5,
            b: 0.5,
            c: 1.0,
            d: 0.5,
            lambda: 1.0,
            tau1: default_tau1(n, p),
            eps: 0.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), SbmError> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("d", self.d),
            ("lambda", self.lambda),
            ("tau1", self.tau1),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SbmError::InvalidHyperParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return Err(SbmError::InvalidHyperParams(format!(
                "eps must lie in [0, 1), got {}",
                self.eps
            )));
        }
        if (self.d - self.lambda / 2.0).abs() > 1e-12 * self.lambda.max(1.0) {
            return Err(SbmError::InvalidHyperParams(format!(
                "d must equal lambda/2 (d = {}, lambda = {})",
                self.d, self.lambda
            )));
        }
        // The closed-form column conditionals factorize the diagonal prior
        // through the (u, eta) change of variables, which needs shape c = 1.
        if (self.c - 1.0).abs() > 1e-12 {
            return Err(SbmError::InvalidHyperParams(format!(
                "the block Gibbs conditionals require c = 1, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// τ₁ = √(log p) / (p √n).
pub fn default_tau1(n: usize, p: usize) -> f64 {
    (p as f64).ln().sqrt() / (p as f64 * (n as f64).sqrt())
}

/// Which per-entry summaries a run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    /// Streaming posterior mean only; no draws retained.
    Summaries,
    /// Keep every retained draw (support-compressed) and report entrywise
    /// 2.5%/97.5% quantiles.
    FullDraws,
}

/// Column visit order within a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    Fixed,
    RandomScan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Stream id under the root seed; defaults to the chain-0 stream.
    pub stream: u64,
    pub refresh_interval: u64,
    pub store_mode: StoreMode,
    pub sweep_order: SweepOrder,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            stream: streams::chain(0),
            refresh_interval: 25,
            store_mode: StoreMode::Summaries,
            sweep_order: SweepOrder::Fixed,
        }
    }
}

impl ChainConfig {
    fn validate(&self) -> Result<(), SbmError> {
        if self.burn_in >= self.n_iter {
            return Err(SbmError::InvalidConfig(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(SbmError::InvalidConfig("thin must be >= 1".into()));
        }
        if self.refresh_interval == 0 {
            return Err(SbmError::InvalidConfig("refresh_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutable sampler state: the current matrix, its maintained inverse, and the
/// per-pair shrinkage latents (φ, ζ) aligned with the screen set's pair list.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub(crate) sigma: Array2<f64>,
    pub(crate) omega: Array2<f64>,
    pub(crate) phi: Vec<f64>,
    pub(crate) zeta: Vec<f64>,
    pub(crate) sweep: u64,
    pub(crate) refresh_interval: u64,
}

impl GibbsState {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn sigma_matrix(&self) -> SymMatrix {
        SymMatrix::from_lower_of(self.sigma.clone())
    }

    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn sweep(&self) -> u64 {
        self.sweep
    }

    /// Overrides the latent vectors; lengths must match the pair count.
    pub fn set_latents(&mut self, phi: &[f64], zeta: &[f64]) {
        assert_eq!(phi.len(), self.phi.len());
        assert_eq!(zeta.len(), self.zeta.len());
        assert!(phi.iter().chain(zeta).all(|v| *v > 0.0));
        self.phi.copy_from_slice(phi);
        self.zeta.copy_from_slice(zeta);
    }

    /// Worst |ΣΩ - I| entry, the drift measure the refresh schedule watches.
    pub fn inverse_drift(&self) -> f64 {
        let p = self.dim();
        let prod = self.sigma.dot(&self.omega);
        let mut worst: f64 = 0.0;
        for r in 0..p {
            for c in 0..p {
                let want = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((prod[[r, c]] - want).abs());
            }
        }
        worst
    }

    /// Recomputes Ω from Σ by a fresh factorization.
    pub fn refresh_inverse(&mut self) -> Result<(), SbmError> {
        self.omega = matstore::inverse_of_array(&self.sigma)?;
        Ok(())
    }
}

/// Diagonal start: sample second moments on the diagonal, zeros elsewhere.
/// Support-respecting and positive definite by construction; latents start
/// at one. The draw stream is part of the signature for interface stability,
/// but initialization itself is deterministic.
pub fn init_state(
    x: &Array2<f64>,
    screen: &ScreenSet,
    hp: &HyperParams,
    _rng: &mut RngStream,
) -> Result<GibbsState, SbmError> {
    hp.validate()?;
    let (n, p) = (x.nrows(), x.ncols());
    if p != screen.dim() {
        return Err(SbmError::DimMismatch(format!(
            "data has {p} columns but screen set covers {}",
            screen.dim()
        )));
    }
    if n == 0 {
        return Err(SbmError::DimMismatch("data has no rows".into()));
    }
    let mut sigma = Array2::zeros((p, p));
    for (j, col) in x.columns().into_iter().enumerate() {
        let ss: f64 = col.iter().map(|v| v * v).sum();
        sigma[[j, j]] = ss / n as f64;
    }
    let omega = matstore::inverse_of_array(&sigma)?;
    let npairs = screen.len();
    Ok(GibbsState {
        sigma,
        omega,
        phi: vec![1.0; npairs],
        zeta: vec![1.0; npairs],
        sweep: 0,
        refresh_interval: 25,
    })
}

/// Per-sweep bookkeeping produced by [`gibbs_sweep`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SweepReport {
    pub rejected_proposals: u32,
    pub columns_kept_previous: u32,
    /// Drift measured right before a scheduled refresh, if one ran.
    pub drift_before_refresh: Option<f64>,
    pub drift_after_refresh: Option<f64>,
}

/// One full sweep: every column in order, then the shrinkage latents, then
/// the scheduled inverse refresh when due.
pub fn gibbs_sweep(
    state: &mut GibbsState,
    data: &SuffStats,
    hp: &HyperParams,
    screen: &ScreenSet,
    order: SweepOrder,
    rng: &mut RngStream,
) -> Result<SweepReport, SbmError> {
    let p = state.dim();
    let mut report = SweepReport::default();
    let mut columns: Vec<usize> = (0..p).collect();
    if order == SweepOrder::RandomScan {
        // Fisher-Yates on the visit order.
        for i in (1..p).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            columns.swap(i, j);
        }
    }
    for &j in &columns {
        let outcome = update_column(state, j, data, hp, screen, rng)?;
        report.rejected_proposals += outcome.rejected_proposals;
        if outcome.kept_previous {
            report.columns_kept_previous += 1;
        }
    }
    update_latents(state, hp, screen, rng)?;
    state.sweep += 1;
    if state.sweep % state.refresh_interval == 0 {
        report.drift_before_refresh = Some(state.inverse_drift());
        state.refresh_inverse()?;
        report.drift_after_refresh = Some(state.inverse_drift());
    }
    Ok(report)
}

/// Retained draws in support-compressed form: per draw, the p diagonal
/// entries followed by the screened-in off-diagonals in pair-list order.
#[derive(Clone, Debug)]
pub struct StoredDraws {
    p: usize,
    pairs: Vec<(usize, usize)>,
    values: Vec<Vec<f64>>,
}

impl StoredDraws {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_matrices(&self) -> Vec<SymMatrix> {
        self.values
            .iter()
            .map(|v| {
                let mut m = SymMatrix::zeros(self.p);
                for j in 0..self.p {
                    m.set(j, j, v[j]);
                }
                for (i, &(a, b)) in self.pairs.iter().enumerate() {
                    m.set(a, b, v[self.p + i]);
                }
                m
            })
            .collect()
    }
}

/// Chain diagnostics: timing, inverse-drift extremes, and the stored-draw
/// invariant counters (both must be zero on a healthy run).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub sweeps: usize,
    pub seconds_total: f64,
    pub seconds_per_sweep_mean: f64,
    pub seconds_per_sweep_median: f64,
    pub max_drift_before_refresh: f64,
    pub max_drift_after_refresh: f64,
    /// Drift measurements above 1e-3 between refreshes; a warning, not an abort.
    pub drift_alarms: usize,
    pub ueps_rejections: usize,
    pub columns_kept_previous: usize,
    /// Stored draws with a bitwise-nonzero off-support entry.
    pub support_violations: usize,
    /// Stored draws failing a Cholesky factorization.
    pub pd_failures: usize,
}

/// Posterior summary of one chain run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub posterior_mean: SymMatrix,
    /// Entrywise 2.5% quantiles; present only under [`StoreMode::FullDraws`].
    pub lower_quantile: Option<SymMatrix>,
    /// Entrywise 97.5% quantiles; present only under [`StoreMode::FullDraws`].
    pub upper_quantile: Option<SymMatrix>,
    pub screen_size: usize,
    pub retained: usize,
    pub stored: Option<StoredDraws>,
    pub diagnostics: ChainDiagnostics,
}

/// Runs the block Gibbs chain and summarizes the retained draws: burn-in
/// discarded, thinning applied, posterior mean accumulated streaming over the
/// support so off-support zeros stay exact.
pub fn run_chain(
    x: &Array2<f64>,
    screen: &ScreenSet,
    hp: &HyperParams,
    cfg: &ChainConfig,
) -> Result<RunSummary, SbmError> {
    cfg.validate()?;
    hp.validate()?;
    let data = SuffStats::new(x);
    let mut rng = RngStream::new(cfg.seed, cfg.stream);
    let mut state = init_state(x, screen, hp, &mut rng)?;
    state.refresh_interval = cfg.refresh_interval;

    let p = screen.dim();
    let pairs = screen.pairs().to_vec();
    let width = p + pairs.len();
    let mut mean_acc = vec![0.0f64; width];
    let mut stored: Vec<Vec<f64>> = Vec::new();
    let mut retained = 0usize;

    let mut sweep_seconds = Vec::with_capacity(cfg.n_iter);
    let mut diag = ChainDiagnostics {
        sweeps: 0,
        seconds_total: 0.0,
        seconds_per_sweep_mean: 0.0,
        seconds_per_sweep_median: 0.0,
        max_drift_before_refresh: 0.0,
        max_drift_after_refresh: 0.0,
        drift_alarms: 0,
        ueps_rejections: 0,
        columns_kept_previous: 0,
        support_violations: 0,
        pd_failures: 0,
    };

    for sweep in 1..=cfg.n_iter {
        let t0 = Instant::now();
        let report = gibbs_sweep(&mut state, &data, hp, screen, cfg.sweep_order, &mut rng)?;
        sweep_seconds.push(t0.elapsed().as_secs_f64());

        diag.ueps_rejections += report.rejected_proposals as usize;
        diag.columns_kept_previous += report.columns_kept_previous as usize;
        if let Some(d) = report.drift_before_refresh {
            diag.max_drift_before_refresh = diag.max_drift_before_refresh.max(d);
            if d > 1e-3 {
                diag.drift_alarms += 1;
            }
        }
        if let Some(d) = report.drift_after_refresh {
            diag.max_drift_after_refresh = diag.max_drift_after_refresh.max(d);
        }

        if sweep > cfg.burn_in && (sweep - cfg.burn_in - 1) % cfg.thin == 0 {
            retained += 1;
            let mut row = Vec::with_capacity(width);
            for j in 0..p {
                row.push(state.sigma[[j, j]]);
            }
            for &(a, b) in &pairs {
                row.push(state.sigma[[a, b]]);
            }
            for (acc, v) in mean_acc.iter_mut().zip(&row) {
                *acc += v;
            }
            // Stored-draw invariants: exact zeros off support, positive
            // definiteness via a factorization attempt.
            if off_support_nonzero(&state.sigma, screen) {
                diag.support_violations += 1;
            }
            if matstore::cholesky_of_array(&state.sigma).is_err() {
                diag.pd_failures += 1;
            }
            if cfg.store_mode == StoreMode::FullDraws {
                stored.push(row);
            }
        }
    }

    diag.sweeps = cfg.n_iter;
    diag.seconds_total = sweep_seconds.iter().sum();
    diag.seconds_per_sweep_mean = diag.seconds_total / cfg.n_iter as f64;
    let mut sorted = sweep_seconds.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    diag.seconds_per_sweep_median = sorted[sorted.len() / 2];

    if retained == 0 {
        return Err(SbmError::EmptySampleSet);
    }
    let scale = 1.0 / retained as f64;
    let mut mean = SymMatrix::zeros(p);
    for j in 0..p {
        mean.set(j, j, mean_acc[j] * scale);
    }
    for (i, &(a, b)) in pairs.iter().enumerate() {
        mean.set(a, b, mean_acc[p + i] * scale);
    }

    let (lower_q, upper_q, stored_out) = if cfg.store_mode == StoreMode::FullDraws {
        let (lo, hi) = entrywise_quantiles(&stored, p, &pairs);
        (
            Some(lo),
            Some(hi),
            Some(StoredDraws {
                p,
                pairs: pairs.clone(),
                values: stored,
            }),
        )
    } else {
        (None, None, None)
    };

    Ok(RunSummary {
        posterior_mean: mean,
        lower_quantile: lower_q,
        upper_quantile: upper_q,
        screen_size: screen.len(),
        retained,
        stored: stored_out,
        diagnostics: diag,
    })
}

fn off_support_nonzero(sigma: &Array2<f64>, screen: &ScreenSet) -> bool {
    let p = sigma.nrows();
    for j in 0..p {
        for k in (j + 1)..p {
            if sigma[[j, k]] != 0.0 && !screen.contains(j, k) {
                return true;
            }
        }
    }
    false
}

fn entrywise_quantiles(
    stored: &[Vec<f64>],
    p: usize,
    pairs: &[(usize, usize)],
) -> (SymMatrix, SymMatrix) {
    let mut lo = SymMatrix::zeros(p);
    let mut hi = SymMatrix::zeros(p);
    let mut column = vec![0.0f64; stored.len()];
    let mut fill = |idx: usize| -> (f64, f64) {
        for (c, row) in column.iter_mut().zip(stored) {
            *c = row[idx];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (
            crate::screen::nearest_rank_lower(&column, 0.025),
            crate::screen::nearest_rank_lower(&column, 0.975),
        )
    };
    for j in 0..p {
        let (l, h) = fill(j);
        lo.set(j, j, l);
        hi.set(j, j, h);
    }
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let (l, h) = fill(p + i);
        lo.set(a, b, l);
        hi.set(a, b, h);
    }
    (lo, hi)
}

/// Entrywise average of a nonempty set of symmetric matrices. Symmetry and
/// exact zeros shared by all samples are preserved.
pub fn posterior_mean(samples: &[SymMatrix]) -> Result<SymMatrix, SbmError> {
    let first = samples.first().ok_or(SbmError::EmptySampleSet)?;
    let p = first.dim();
    let mut acc = Array2::<f64>::zeros((p, p));
    for s in samples {
        if s.dim() != p {
            return Err(SbmError::DimMismatch(format!(
                "sample of dimension {} in a set of dimension {p}",
                s.dim()
            )));
        }
        acc += s.as_array();
    }
    acc.mapv_inplace(|v| v / samples.len() as f64);
    Ok(SymMatrix::from_lower_of(acc))
}
