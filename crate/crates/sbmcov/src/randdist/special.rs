//! The small set of special functions the screening calibration needs:
//! log-gamma, log-beta, the Gauss hypergeometric series on [0, 1), and the
//! default Bayes factor for testing a single correlation.

use super::DistError;

const MAX_SERIES_TERMS: usize = 1_000_000;

/// Lanczos approximation (g = 7, 9 terms), accurate to about 1e-14 relative.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // Reflection keeps the series argument away from zero.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut series = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + series.ln()
}

/// Natural log of the beta function for x, y > 0.
pub fn ln_beta(x: f64, y: f64) -> f64 {
    ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)
}

/// Log of the Gauss hypergeometric function 2F1(aa, bb; cc; x) for
/// nonnegative parameters and 0 <= x < 1.
///
/// The series is accumulated through the term-ratio recurrence
/// t_{k+1}/t_k = (aa+k)(bb+k) x / ((cc+k)(k+1)) entirely in log space, so
/// half-integer parameters in the hundreds cannot overflow. Summation stops
/// once terms are decreasing and the latest term is below 1e-15 of the sum.
pub fn log_hyp2f1(aa: f64, bb: f64, cc: f64, x: f64) -> Result<f64, DistError> {
    if !(cc > 0.0) || aa < 0.0 || bb < 0.0 {
        return Err(DistError::InvalidArgument(format!(
            "log_hyp2f1 requires aa, bb >= 0 and cc > 0, got ({aa}, {bb}, {cc})"
        )));
    }
    if !(0.0..1.0).contains(&x) {
        return Err(DistError::InvalidArgument(format!(
            "log_hyp2f1 requires 0 <= x < 1, got {x}"
        )));
    }
    if x == 0.0 || aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    let ln_x = x.ln();
    let log_eps = (1e-15f64).ln();
    let mut log_term = 0.0_f64;
    let mut log_sum = 0.0_f64;
    for k in 0..MAX_SERIES_TERMS {
        let kf = k as f64;
        let log_ratio =
            ((aa + kf).ln() + (bb + kf).ln() + ln_x) - ((cc + kf).ln() + (kf + 1.0).ln());
        log_term += log_ratio;
        log_sum = log_add_exp(log_sum, log_term);
        // Term ratios either stay below x or decrease toward it, so the tail
        // is dominated by a geometric series with ratio max(current, x).
        let r = log_ratio.exp().max(x);
        if r < 1.0 {
            let log_tail = log_term + r.ln() - (-r).ln_1p();
            if log_tail - log_sum < log_eps {
                return Ok(log_sum);
            }
        }
    }
    Err(DistError::Nonconvergent(MAX_SERIES_TERMS))
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Default Bayes factor for the nullity of one correlation given its squared
/// sample value, the sample size, and the stretch hyperparameter kappa:
///
/// B10 = 2^{(κ-2)/κ} √π / B(1/κ, 1/κ)
///       · Γ((2+(n-1)κ)/(2κ)) / Γ((2+nκ)/(2κ))
///       · 2F1((n-1)/2, (n-1)/2; (2+nκ)/(2κ); ρ̂²),
///
/// computed in log space and exponentiated at the end. Strictly increasing in
/// `rho_hat_sq` for fixed (n, κ). Kappa is restricted to (0, 2].
pub fn jeffreys_bf(rho_hat_sq: f64, n: usize, kappa: f64) -> Result<f64, DistError> {
    if !(0.0..1.0).contains(&rho_hat_sq) {
        return Err(DistError::InvalidArgument(format!(
            "rho_hat_sq must lie in [0, 1), got {rho_hat_sq}"
        )));
    }
    if n < 2 {
        return Err(DistError::InvalidArgument(format!(
            "jeffreys_bf requires n >= 2, got {n}"
        )));
    }
    if !(kappa > 0.0 && kappa <= 2.0) {
        return Err(DistError::KappaOutOfRange(kappa));
    }
    let nf = n as f64;
    let half = (nf - 1.0) / 2.0;
    let cc = (2.0 + nf * kappa) / (2.0 * kappa);
    let log_prefactor = (kappa - 2.0) / kappa * std::f64::consts::LN_2
        + 0.5 * std::f64::consts::PI.ln()
        - ln_beta(1.0 / kappa, 1.0 / kappa);
    let log_gamma_ratio = ln_gamma((2.0 + (nf - 1.0) * kappa) / (2.0 * kappa)) - ln_gamma(cc);
    let log_f = log_hyp2f1(half, half, cc, rho_hat_sq)?;
    Ok((log_prefactor + log_gamma_ratio + log_f).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(2.0)).abs() < 1e-14);
        // Γ(0.5) = √π.
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        // Γ(10) = 9! = 362880.
        assert!((ln_gamma(10.0) - (362_880.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ln_beta_symmetric() {
        assert!((ln_beta(1.0, 1.0)).abs() < 1e-14);
        assert!((ln_beta(2.5, 0.7) - ln_beta(0.7, 2.5)).abs() < 1e-14);
    }

    #[test]
    fn hyp2f1_at_zero_is_one() {
        assert_eq!(log_hyp2f1(3.0, 4.0, 5.0, 0.0).unwrap(), 0.0);
        assert_eq!(log_hyp2f1(24.5, 24.5, 26.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn hyp2f1_log_identity() {
        // 2F1(1, 1; 2; x) = -ln(1-x)/x; at x = 0.5 the log is ln(2 ln 2).
        let got = log_hyp2f1(1.0, 1.0, 2.0, 0.5).unwrap();
        let want = 0.326_634_259_978_280_98;
        assert!((got - want).abs() < 1e-12, "got {got}");
        for &x in &[0.05, 0.2, 0.65, 0.9] {
            let got = log_hyp2f1(1.0, 1.0, 2.0, x).unwrap();
            let want = (-(1.0f64 - x).ln() / x).ln();
            assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn hyp2f1_half_integer_high_precision_anchor() {
        // 2F1(24.5, 24.5; 26; 0.25), reference value from a 200-digit
        // direct summation of the series.
        let got = log_hyp2f1(24.5, 24.5, 26.0, 0.25).unwrap();
        let want = 6.638_727_484_670_258;
        assert!((got - want).abs() / want < 1e-10, "got {got}");
    }

    #[test]
    fn hyp2f1_domain_errors() {
        assert!(log_hyp2f1(1.0, 1.0, 2.0, 1.0).is_err());
        assert!(log_hyp2f1(1.0, 1.0, 2.0, -0.1).is_err());
        assert!(log_hyp2f1(1.0, 1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn jeffreys_bf_null_case_is_quarter_pi() {
        let got = jeffreys_bf(0.0, 2, 1.0).unwrap();
        assert!(
            (got - std::f64::consts::FRAC_PI_4).abs() < 1e-12,
            "got {got}"
        );
    }

    #[test]
    fn jeffreys_bf_zero_rho_drops_series() {
        // At ρ̂² = 0 only the prefactor remains, whatever n and κ.
        for &(n, kappa) in &[(5usize, 0.5f64), (40, 1.0), (200, 2.0)] {
            let bf = jeffreys_bf(0.0, n, kappa).unwrap();
            let nf = n as f64;
            let want = ((kappa - 2.0) / kappa * std::f64::consts::LN_2
                + 0.5 * std::f64::consts::PI.ln()
                - ln_beta(1.0 / kappa, 1.0 / kappa)
                + ln_gamma((2.0 + (nf - 1.0) * kappa) / (2.0 * kappa))
                - ln_gamma((2.0 + nf * kappa) / (2.0 * kappa)))
            .exp();
            assert!((bf - want).abs() < 1e-14 * want.max(1.0));
        }
    }

    #[test]
    fn jeffreys_bf_high_precision_anchors() {
        // Reference values from a 200-digit evaluation of the closed form.
        let cases = [
            (0.04, 100, 1.0, 0.888_633_345_413_594_4),
            (0.09, 100, 1.0, 11.606_939_849_864_024),
            (0.25, 100, 1.0, 125_565.388_772_987_18),
            (0.36, 40, 0.5, 633.071_230_177_572_1),
        ];
        for (rho2, n, kappa, want) in cases {
            let got = jeffreys_bf(rho2, n, kappa).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "bf({rho2}, {n}, {kappa}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn jeffreys_bf_monotone_ordering() {
        let b1 = jeffreys_bf(0.04, 100, 1.0).unwrap();
        let b2 = jeffreys_bf(0.09, 100, 1.0).unwrap();
        let b3 = jeffreys_bf(0.25, 100, 1.0).unwrap();
        assert!(b1 < b2 && b2 < b3);
    }

    #[test]
    fn jeffreys_bf_strictly_increasing_random_pairs() {
        let mut rng = crate::randdist::RngStream::new(2024, 12);
        for _ in 0..1000 {
            let n = 3 + (rng.random::<u32>() % 200) as usize;
            let kappa = 0.05 + 1.95 * rng.random::<f64>();
            let u1 = 0.95 * rng.random::<f64>();
            let u2 = 0.95 * rng.random::<f64>();
            let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
            if hi - lo < 1e-12 {
                continue;
            }
            let b_lo = jeffreys_bf(lo, n, kappa).unwrap();
            let b_hi = jeffreys_bf(hi, n, kappa).unwrap();
            assert!(
                b_lo < b_hi,
                "BF not increasing: n={n} kappa={kappa} lo={lo} hi={hi}"
            );
        }
    }

    #[test]
    fn jeffreys_bf_kappa_range_enforced() {
        assert!(matches!(
            jeffreys_bf(0.1, 10, 2.5),
            Err(DistError::KappaOutOfRange(_))
        ));
        assert!(matches!(
            jeffreys_bf(0.1, 10, 0.0),
            Err(DistError::KappaOutOfRange(_))
        ));
        assert!(jeffreys_bf(0.1, 10, 2.0).is_ok());
    }
}
