//! Random number streams, samplers, and the special functions behind the
//! correlation Bayes factor.
//!
//! Every sampler draws through an [`RngStream`], a counter-based generator
//! keyed by `(seed, stream id)`: identical keys reproduce identical draw
//! sequences, distinct stream ids give independent streams without jump-ahead
//! bookkeeping. Parallel work (replications, folds, chains) owns one stream
//! each.

mod gig;
mod special;

pub use gig::{sample_gig, GigParams};
pub use special::{jeffreys_bf, ln_beta, ln_gamma, log_hyp2f1};

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::matstore::{self, MatError, SymMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("invalid GIG parameters: q={q}, a={a}, b={b}")]
    InvalidGigParams { q: f64, a: f64, b: f64 },
    #[error("hypergeometric series did not converge within {0} terms")]
    Nonconvergent(usize),
    #[error("kappa must lie in (0, 2], got {0}")]
    KappaOutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// A reproducible random stream keyed by `(seed, stream id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Named stream ids expanded from one root seed. Keeping the layout in one
/// place makes parallel schedules reproducible: every chain, replication, and
/// fold owns a distinct stream of the same root seed.
pub mod streams {
    pub const CALIBRATION: u64 = 1;
    pub const CHAIN_BASE: u64 = 1 << 32;
    pub const REPLICATION_BASE: u64 = 2 << 32;
    pub const FOLD_BASE: u64 = 3 << 32;

    pub fn chain(k: u64) -> u64 {
        CHAIN_BASE + k
    }

    /// Each replication owns a small block of streams.
    pub fn replication(k: u64, slot: u64) -> u64 {
        debug_assert!(slot < 8);
        REPLICATION_BASE + 8 * k + slot
    }

    pub fn fold(k: u64) -> u64 {
        FOLD_BASE + k
    }
}

/// Draws from N(mean, sd^2). `sd` must be strictly positive.
pub fn sample_normal(mean: f64, sd: f64, rng: &mut RngStream) -> f64 {
    assert!(sd > 0.0, "sample_normal requires sd > 0, got {sd}");
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Draws from Gamma(shape, rate); the mean is shape/rate.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> f64 {
    assert!(
        shape > 0.0 && rate > 0.0,
        "sample_gamma requires positive shape and rate, got ({shape}, {rate})"
    );
    Gamma::new(shape, 1.0 / rate)
        .expect("parameters validated above")
        .sample(rng)
}

/// Which form the matrix argument of [`sample_mvn`] takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixForm {
    Precision,
    Covariance,
}

/// Draws from a multivariate normal. In precision form the draw is mean +
/// L^{-T} z for the Cholesky factor L of the precision matrix; the inverse is
/// never formed.
pub fn sample_mvn(
    mean: &[f64],
    matrix: &SymMatrix,
    form: MatrixForm,
    rng: &mut RngStream,
) -> Result<Vec<f64>, DistError> {
    if mean.len() != matrix.dim() {
        return Err(DistError::InvalidArgument(format!(
            "mean has length {}, matrix has dimension {}",
            mean.len(),
            matrix.dim()
        )));
    }
    let l = matstore::cholesky_factor(matrix)?;
    let mut z: Vec<f64> = (0..mean.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    match form {
        MatrixForm::Precision => {
            matstore::solve_lower_transpose_inplace(&l, &mut z);
            for (x, m) in z.iter_mut().zip(mean) {
                *x += m;
            }
            Ok(z)
        }
        MatrixForm::Covariance => {
            let p = mean.len();
            let mut out = mean.to_vec();
            for i in 0..p {
                let row = l.row(i);
                let mut s = 0.0;
                for k in 0..=i {
                    s += row[k] * z[k];
                }
                out[i] += s;
            }
            Ok(out)
        }
    }
}

/// Fills an n x p matrix with independent standard normal draws.
pub fn standard_normal_matrix(n: usize, p: usize, rng: &mut RngStream) -> Array2<f64> {
    let mut out = Array2::zeros((n, p));
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    out
}

#[cfg(test)]
pub(crate) mod quad {
    //! Test-only quadrature oracle for GIG moments: integrates
    //! x^k * x^{q-1} exp(-(a x + b / x) / 2) over (0, inf) on the log scale
    //! via the substitution x = e^t, then composite Simpson.

    fn log_integrand(t: f64, q: f64, a: f64, b: f64, moment: f64) -> f64 {
        (q + moment) * t - 0.5 * (a * t.exp() + b * (-t).exp())
    }

    fn simpson(q: f64, a: f64, b: f64, moment: f64, lo: f64, hi: f64, steps: usize) -> f64 {
        let h = (hi - lo) / steps as f64;
        // Scale by the max log to avoid overflow.
        let mut maxlog = f64::NEG_INFINITY;
        for i in 0..=steps {
            maxlog = maxlog.max(log_integrand(lo + i as f64 * h, q, a, b, moment));
        }
        let f = |t: f64| (log_integrand(t, q, a, b, moment) - maxlog).exp();
        let mut s = f(lo) + f(hi);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        maxlog + (s * h / 3.0).ln()
    }

    /// log of the k-th raw moment integral (unnormalized).
    pub fn log_gig_moment_integral(q: f64, a: f64, b: f64, moment: f64) -> f64 {
        // Mode of the integrand in t, then widen until the integrand is
        // negligible at the endpoints.
        let qa = q + moment;
        let mode_x = ((qa - 1.0) + ((qa - 1.0).powi(2) + a * b).sqrt()).max(1e-12) / a.max(1e-300);
        let mut center = mode_x.max(1e-300).ln();
        if !center.is_finite() {
            center = 0.0;
        }
        let peak = log_integrand(center, q, a, b, moment);
        let mut lo = center;
        let mut hi = center;
        while log_integrand(lo, q, a, b, moment) > peak - 60.0 {
            lo -= 1.0;
        }
        while log_integrand(hi, q, a, b, moment) > peak - 60.0 {
            hi += 1.0;
        }
        simpson(q, a, b, moment, lo, hi, 8192)
    }

    /// Mean of GIG(q, a, b) by quadrature.
    pub fn gig_mean(q: f64, a: f64, b: f64) -> f64 {
        (log_gig_moment_integral(q, a, b, 1.0) - log_gig_moment_integral(q, a, b, 0.0)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_determinism_and_independence() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let seq_a: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let seq_b: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(seq_a, seq_b);
        let mut c = RngStream::new(42, 4);
        let seq_c: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_ne!(seq_a, seq_c);
    }

    #[test]
    fn normal_clt_bound() {
        let mut rng = RngStream::new(7, 1);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_normal(0.0, 1.0, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn normal_fixed_seed_reproducible() {
        let mut a = RngStream::new(11, 2);
        let mut b = RngStream::new(11, 2);
        for _ in 0..32 {
            assert_eq!(
                sample_normal(1.0, 2.0, &mut a).to_bits(),
                sample_normal(1.0, 2.0, &mut b).to_bits()
            );
        }
    }

    #[test]
    #[should_panic(expected = "sd > 0")]
    fn normal_rejects_zero_sd() {
        let mut rng = RngStream::new(0, 0);
        sample_normal(0.0, 0.0, &mut rng);
    }

    #[test]
    fn gamma_exponential_special_case() {
        let mut rng = RngStream::new(5, 1);
        let n = 1_000_000;
        let lambda = 2.5;
        let mean: f64 = (0..n)
            .map(|_| sample_gamma(1.0, lambda, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0 / lambda).abs() / (1.0 / lambda) < 0.01, "mean {mean}");
    }

    #[test]
    fn gamma_mean_shape_over_rate() {
        let mut rng = RngStream::new(5, 2);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| sample_gamma(2.0, 1.5, &mut rng))
            .sum::<f64>()
            / n as f64;
        let want = 4.0 / 3.0;
        assert!((mean - want).abs() / want < 0.01, "mean {mean}");
    }

    #[test]
    fn gamma_variance_shape_over_rate_sq() {
        let mut rng = RngStream::new(5, 3);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gamma(0.5, 1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 0.5).abs() / 0.5 < 0.02, "var {var}");
    }

    #[test]
    fn mvn_identity_precision() {
        let mut rng = RngStream::new(9, 1);
        let prec = SymMatrix::identity(3);
        let n = 200_000;
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let x = sample_mvn(&[0.0; 3], &prec, MatrixForm::Precision, &mut rng).unwrap();
            for (i, v) in x.iter().enumerate() {
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..3 {
            let m = sums[i] / n as f64;
            let v = sq[i] / n as f64 - m * m;
            assert!(m.abs() < 0.02, "mean {m}");
            assert!((v - 1.0).abs() < 0.02, "var {v}");
        }
    }

    #[test]
    fn mvn_diagonal_precision_sds() {
        let mut rng = RngStream::new(9, 2);
        let prec = SymMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let n = 1_000_000;
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let x = sample_mvn(&[0.0; 2], &prec, MatrixForm::Precision, &mut rng).unwrap();
            sq[0] += x[0] * x[0];
            sq[1] += x[1] * x[1];
        }
        let sd0 = (sq[0] / n as f64).sqrt();
        let sd1 = (sq[1] / n as f64).sqrt();
        assert!((sd0 - 0.5).abs() / 0.5 < 0.01, "sd0 {sd0}");
        assert!((sd1 - 1.0 / 3.0).abs() / (1.0 / 3.0) < 0.01, "sd1 {sd1}");
    }

    #[test]
    fn mvn_dense_precision_covariance_oracle() {
        // Empirical covariance must match the inverse of the precision.
        let mut rng = RngStream::new(9, 3);
        let prec = SymMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5, 0.0, 0.2],
            vec![1.0, 5.0, 0.3, 0.1, 0.0],
            vec![0.5, 0.3, 3.0, 0.4, 0.1],
            vec![0.0, 0.1, 0.4, 6.0, 0.5],
            vec![0.2, 0.0, 0.1, 0.5, 2.0],
        ])
        .unwrap();
        let want = crate::matstore::full_inverse(&prec).unwrap();
        let n = 400_000;
        let p = 5;
        let mut acc = vec![0.0f64; p * p];
        for _ in 0..n {
            let x = sample_mvn(&[0.0; 5], &prec, MatrixForm::Precision, &mut rng).unwrap();
            for i in 0..p {
                for j in 0..p {
                    acc[i * p + j] += x[i] * x[j];
                }
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..p {
            for j in 0..p {
                let emp = acc[i * p + j] / n as f64;
                let tgt = want.get(i, j);
                num += (emp - tgt) * (emp - tgt);
                den += tgt * tgt;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.02, "relative Frobenius error {rel}");
    }

    #[test]
    fn mvn_covariance_form() {
        let mut rng = RngStream::new(9, 4);
        let cov = SymMatrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let n = 400_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..n {
            let x = sample_mvn(&[0.0; 2], &cov, MatrixForm::Covariance, &mut rng).unwrap();
            acc[0] += x[0] * x[0];
            acc[1] += x[0] * x[1];
            acc[2] += x[1] * x[1];
        }
        assert!((acc[0] / n as f64 - 2.0).abs() < 0.02);
        assert!((acc[1] / n as f64 - 0.6).abs() < 0.02);
        assert!((acc[2] / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn mvn_rejects_indefinite() {
        let mut rng = RngStream::new(9, 5);
        let bad = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(sample_mvn(&[0.0; 2], &bad, MatrixForm::Precision, &mut rng).is_err());
    }
}
