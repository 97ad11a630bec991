//! Per-column and latent conditional updates.
//!
//! Everything is kept at full dimension p with column j's row/column of the
//! deleted-submatrix inverse pinned to zero, so no index remapping is needed:
//! the needed columns of Σ₁₁⁻¹ come straight out of Ω by the rank-one
//! identity, and Ω is rebuilt after the draw by the matching block-inverse
//! identity in one fused O(p²) pass.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use super::{GibbsState, HyperParams, SbmError};
use crate::matstore::{self, PIVOT_FLOOR};
use crate::randdist::{sample_gamma, sample_gig, GigParams, RngStream};
use crate::screen::ScreenSet;

/// Negative GIG scale arguments within this tolerance are round-off from the
/// nonnegative quadratic form and get clamped; anything worse aborts.
const GIG_SCALE_TOLERANCE: f64 = 1e-8;
const GIG_SCALE_CLAMP: f64 = 1e-12;

/// Retries before a column update under the eigenvalue restriction gives up
/// and keeps the previous column values.
const UEPS_MAX_RETRIES: u32 = 20;

/// How the per-column triple product (Σ₁₁⁻¹)ₛ S₁₁ (Σ₁₁⁻¹)ₛ is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleProductRoute {
    /// Through the Gram matrix: O(p² |S≠0|) per column.
    Direct,
    /// Through the data matrix: O(n p |S≠0|), the cheaper route when n < p.
    DataSpace,
}

/// Immutable per-run inputs: the data, its Gram matrix, and the assembly
/// route for the column conditionals.
#[derive(Clone, Debug)]
pub struct SuffStats<'a> {
    pub(crate) x: &'a Array2<f64>,
    pub(crate) gram: Array2<f64>,
    pub(crate) n: usize,
    pub(crate) route: TripleProductRoute,
}

impl<'a> SuffStats<'a> {
    /// Computes the Gram matrix and picks the cheaper assembly route.
    pub fn new(x: &'a Array2<f64>) -> Self {
        let route = if x.nrows() < x.ncols() {
            TripleProductRoute::DataSpace
        } else {
            TripleProductRoute::Direct
        };
        Self::with_route(x, route)
    }

    pub fn with_route(x: &'a Array2<f64>, route: TripleProductRoute) -> Self {
        SuffStats {
            x,
            gram: x.t().dot(x),
            n: x.nrows(),
            route,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn route(&self) -> TripleProductRoute {
        self.route
    }
}

/// Outcome of one column update.
#[derive(Clone, Copy, Debug, Default)]
pub struct ColumnUpdate {
    /// Proposals rejected by the eigenvalue restriction (always 0 at ε = 0).
    pub rejected_proposals: u32,
    /// Set when the retry budget ran out and the column kept its old values.
    pub kept_previous: bool,
}

/// The screened-in columns of Σ₁₁⁻¹, embedded at full dimension with row j
/// zero, plus the Ω column the rank-one identities reuse.
struct ColumnGeometry {
    /// p x m; column i corresponds to neighbor nb[i].
    mcols: Array2<f64>,
    omega_col_j: Array1<f64>,
    inv_pivot: f64,
}

fn column_geometry(
    state: &GibbsState,
    j: usize,
    neighbors: &[(usize, usize)],
) -> Result<ColumnGeometry, SbmError> {
    let p = state.dim();
    let pivot = state.omega[[j, j]];
    if pivot <= PIVOT_FLOOR {
        return Err(matstore::MatError::DegeneratePivot {
            index: j,
            value: pivot,
        }
        .into());
    }
    let inv_pivot = 1.0 / pivot;
    let omega_col_j = state.omega.column(j).to_owned();
    let m = neighbors.len();
    let mut mcols = Array2::zeros((p, m));
    let scaled: Vec<f64> = neighbors
        .iter()
        .map(|&(k, _)| omega_col_j[k] * inv_pivot)
        .collect();
    for r in 0..p {
        let omega_row = state.omega.row(r);
        let cj = omega_col_j[r];
        let mut out = mcols.row_mut(r);
        for (i, &(k, _)) in neighbors.iter().enumerate() {
            out[i] = omega_row[k] - cj * scaled[i];
        }
    }
    // The identity zeroes row j; make it bitwise so embedded products skip it.
    mcols.row_mut(j).fill(0.0);
    Ok(ColumnGeometry {
        mcols,
        omega_col_j,
        inv_pivot,
    })
}

/// GIG scale argument for the η draw: t'S₁₁t - 2 s₁₂'t + s₂₂ with
/// t = Σ₁₁⁻¹ σ₁₂ embedded at full dimension (t[j] = 0).
fn eta_scale(data: &SuffStats, j: usize, t: &Array1<f64>) -> f64 {
    let s_col = data.gram.column(j);
    let quad = match data.route {
        TripleProductRoute::Direct => {
            let st = data.gram.dot(t);
            t.dot(&st)
        }
        TripleProductRoute::DataSpace => {
            let v = data.x.dot(t);
            v.dot(&v)
        }
    };
    let cross = s_col.dot(t);
    quad - 2.0 * cross + s_col[j]
}

fn clamp_gig_scale(raw: f64) -> Result<f64, SbmError> {
    if raw < -GIG_SCALE_TOLERANCE {
        return Err(SbmError::GigDomain(raw));
    }
    Ok(raw.max(GIG_SCALE_CLAMP))
}

/// One block update of column j: η from its GIG conditional given the current
/// column, then the screened-in entries from their |S≠0(j)|-dimensional
/// normal conditional in precision form, then σ₂₂ = η + u'Σ₁₁⁻¹u, and finally
/// the Ω refresh for the new column via the block-inverse identities.
/// Off-support entries of the column are never written and stay exact zeros.
///
/// With `hp.eps > 0` the proposed column is redrawn until Σ lands inside the
/// eigenvalue band (ε, 1/ε), up to a retry cap, after which the previous
/// column values are kept.
pub fn update_column(
    state: &mut GibbsState,
    j: usize,
    data: &SuffStats,
    hp: &HyperParams,
    screen: &ScreenSet,
    rng: &mut RngStream,
) -> Result<ColumnUpdate, SbmError> {
    let p = state.dim();
    assert!(j < p, "column {j} out of range for dimension {p}");
    let neighbors = screen.neighbors(j);
    let m = neighbors.len();
    let nf = data.n as f64;

    let geom = column_geometry(state, j, neighbors)?;

    // Current screened-in column entries and t = Σ₁₁⁻¹ σ₁₂.
    let u_cur: Vec<f64> = neighbors.iter().map(|&(k, _)| state.sigma[[k, j]]).collect();
    let mut t_cur = Array1::zeros(p);
    for (i, &uk) in u_cur.iter().enumerate() {
        if uk != 0.0 {
            t_cur.scaled_add(uk, &geom.mcols.column(i));
        }
    }
    let gig_b = clamp_gig_scale(eta_scale(data, j, &t_cur))?;
    let gig = GigParams::new(1.0 - nf / 2.0, hp.lambda, gig_b)?;

    // Conditional precision pieces that do not depend on η.
    let triple = if m > 0 {
        Some(triple_product(data, &geom.mcols))
    } else {
        None
    };
    let w_base = geom.mcols.t().dot(&data.gram.column(j));

    let mut outcome = ColumnUpdate::default();
    loop {
        let eta = sample_gig(&gig, rng);
        let u_new = if m == 0 {
            Vec::new()
        } else {
            let triple = triple.as_ref().expect("set when m > 0");
            let mut b_mat = triple.clone();
            let inv_eta = 1.0 / eta;
            for r in 0..m {
                let kr = neighbors[r].0;
                for c in 0..m {
                    b_mat[[r, c]] = b_mat[[r, c]] * inv_eta + hp.lambda * geom.mcols[[kr, c]];
                }
            }
            let tau_sq = hp.tau1 * hp.tau1;
            for r in 0..m {
                let v = state.phi[neighbors[r].1] * tau_sq;
                b_mat[[r, r]] += 1.0 / v;
            }
            let l = matstore::cholesky_of_array(&b_mat)?;
            let mut mean: Vec<f64> = w_base.iter().map(|w| w * inv_eta).collect();
            matstore::solve_lower_inplace(&l, &mut mean);
            matstore::solve_lower_transpose_inplace(&l, &mut mean);
            let mut z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
            matstore::solve_lower_transpose_inplace(&l, &mut z);
            mean.iter().zip(&z).map(|(a, b)| a + b).collect()
        };

        // t_new = Σ₁₁⁻¹ σ₁₂(new); σ₂₂ = η + u'Σ₁₁⁻¹u.
        let mut t_new = Array1::zeros(p);
        for (i, &uk) in u_new.iter().enumerate() {
            if uk != 0.0 {
                t_new.scaled_add(uk, &geom.mcols.column(i));
            }
        }
        let quad_u: f64 = neighbors
            .iter()
            .zip(&u_new)
            .map(|(&(k, _), &uk)| uk * t_new[k])
            .sum();
        let sigma22 = eta + quad_u;

        if hp.eps > 0.0 && !candidate_in_band(state, j, neighbors, &u_new, sigma22, hp.eps) {
            outcome.rejected_proposals += 1;
            if outcome.rejected_proposals >= UEPS_MAX_RETRIES {
                outcome.kept_previous = true;
                return Ok(outcome);
            }
            continue;
        }

        commit_column(state, j, neighbors, &u_new, sigma22, &t_new, eta, &geom);
        return Ok(outcome);
    }
}

/// Membership in the eigenvalue band (ε, 1/ε): both shifted factorizations
/// must succeed on the candidate matrix.
fn candidate_in_band(
    state: &GibbsState,
    j: usize,
    neighbors: &[(usize, usize)],
    u_new: &[f64],
    sigma22: f64,
    eps: f64,
) -> bool {
    let p = state.dim();
    let mut cand = state.sigma.clone();
    for r in 0..p {
        if r != j {
            cand[[r, j]] = 0.0;
            cand[[j, r]] = 0.0;
        }
    }
    for (&(k, _), &v) in neighbors.iter().zip(u_new) {
        cand[[k, j]] = v;
        cand[[j, k]] = v;
    }
    cand[[j, j]] = sigma22;

    let mut shifted = cand.clone();
    for r in 0..p {
        shifted[[r, r]] -= eps;
    }
    if matstore::cholesky_of_array(&shifted).is_err() {
        return false;
    }
    let mut upper = cand;
    upper.mapv_inplace(|v| -v);
    for r in 0..p {
        upper[[r, r]] += 1.0 / eps;
    }
    matstore::cholesky_of_array(&upper).is_ok()
}

fn commit_column(
    state: &mut GibbsState,
    j: usize,
    neighbors: &[(usize, usize)],
    u_new: &[f64],
    sigma22: f64,
    t_new: &Array1<f64>,
    eta: f64,
    geom: &ColumnGeometry,
) {
    let p = state.dim();
    for (&(k, _), &v) in neighbors.iter().zip(u_new) {
        state.sigma[[k, j]] = v;
        state.sigma[[j, k]] = v;
    }
    state.sigma[[j, j]] = sigma22;

    // Ω ← (Ω - ω_j ω_j'/ω_jj) + g g'/η with g = t_new - e_j, fused into one
    // pass. Scaling each product last keeps the update bitwise symmetric.
    let inv_eta = 1.0 / eta;
    for r in 0..p {
        if r == j {
            continue;
        }
        let cr = geom.omega_col_j[r];
        let tr = t_new[r];
        let col_j = &geom.omega_col_j;
        let mut row = state.omega.row_mut(r);
        for c in 0..p {
            row[c] += (tr * t_new[c]) * inv_eta - (cr * col_j[c]) * geom.inv_pivot;
        }
        row[j] = -t_new[r] * inv_eta;
    }
    let mut row_j = state.omega.row_mut(j);
    for c in 0..p {
        row_j[c] = -t_new[c] * inv_eta;
    }
    row_j[j] = inv_eta;
}

/// (Σ₁₁⁻¹)ₛ S₁₁ (Σ₁₁⁻¹)ₛ, assembled by the configured route. The embedded
/// zero row of `mcols` makes the full-size products equal the deleted ones.
fn triple_product(data: &SuffStats, mcols: &Array2<f64>) -> Array2<f64> {
    match data.route {
        TripleProductRoute::Direct => {
            let g = data.gram.dot(mcols);
            mcols.t().dot(&g)
        }
        TripleProductRoute::DataSpace => {
            let a = data.x.dot(mcols);
            a.t().dot(&a)
        }
    }
}

/// Refreshes the shrinkage latents for every screened-in pair:
/// φ | ζ, σ ~ GIG(a - 1/2, 2ζ, σ²/τ₁²), then ζ | φ ~ Gamma(a + b, φ + 1).
/// A bitwise-zero entry (possible at initialization) is handled by clamping
/// the GIG scale, which keeps the draw proper.
pub fn update_latents(
    state: &mut GibbsState,
    hp: &HyperParams,
    screen: &ScreenSet,
    rng: &mut RngStream,
) -> Result<(), SbmError> {
    let tau_sq = hp.tau1 * hp.tau1;
    let order = hp.a - 0.5;
    for (idx, &(j, k)) in screen.pairs().iter().enumerate() {
        let s = state.sigma[[j, k]];
        let scale = (s * s / tau_sq).max(GIG_SCALE_CLAMP);
        let phi = sample_gig(&GigParams::new(order, 2.0 * state.zeta[idx], scale)?, rng);
        let zeta = sample_gamma(hp.a + hp.b, phi + 1.0, rng);
        state.phi[idx] = phi;
        state.zeta[idx] = zeta;
    }
    Ok(())
}

/// Conditional-law parameters of one column update, exposed for verification:
/// the GIG scale argument of the η draw and, given η, the precision matrix
/// and precision-times-mean vector of the u draw.
#[cfg(test)]
pub(crate) fn column_conditional_parts(
    state: &GibbsState,
    j: usize,
    data: &SuffStats,
    hp: &HyperParams,
    screen: &ScreenSet,
    eta: f64,
) -> Result<(f64, Array2<f64>, Vec<f64>), SbmError> {
    let neighbors = screen.neighbors(j);
    let m = neighbors.len();
    let geom = column_geometry(state, j, neighbors)?;
    let u_cur: Vec<f64> = neighbors.iter().map(|&(k, _)| state.sigma[[k, j]]).collect();
    let mut t_cur = Array1::zeros(state.dim());
    for (i, &uk) in u_cur.iter().enumerate() {
        t_cur.scaled_add(uk, &geom.mcols.column(i));
    }
    let gig_b = eta_scale(data, j, &t_cur);
    let triple = triple_product(data, &geom.mcols);
    let mut b_mat = triple;
    let tau_sq = hp.tau1 * hp.tau1;
    for r in 0..m {
        let kr = neighbors[r].0;
        for c in 0..m {
            b_mat[[r, c]] = b_mat[[r, c]] / eta + hp.lambda * geom.mcols[[kr, c]];
        }
    }
    for r in 0..m {
        b_mat[[r, r]] += 1.0 / (state.phi[neighbors[r].1] * tau_sq);
    }
    let w_vec: Vec<f64> = geom
        .mcols
        .t()
        .dot(&data.gram.column(j))
        .iter()
        .map(|w| w / eta)
        .collect();
    Ok((gig_b, b_mat, w_vec))
}
