//! Chi-squared distribution function and quantiles through the regularized
//! lower incomplete gamma function.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // Σ xⁿ / (a (a+1) … (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (h.ln() + log_prefix).exp();
        (1.0 - q).max(0.0)
    }
}

/// Chi-squared distribution with `df` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChiSquared {
    df: u32,
}

impl ChiSquared {
    pub fn new(df: u32) -> Result<Self> {
        if df == 0 {
            return Err(Error::InvalidInput("chi-squared df must be >= 1".into()));
        }
        Ok(Self { df })
    }

    pub fn df(&self) -> u32 {
        self.df
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gamma_p(self.df as f64 / 2.0, x / 2.0)
    }

    /// Inverse CDF by bracketing and bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!(
                "probability must lie in (0, 1), got {p}"
            )));
        }
        let mut lo = 0.0;
        let mut hi = (self.df as f64).max(1.0);
        while self.cdf(hi) < p {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `χ²_{df, p}`, the `p`-quantile.
pub fn chi2_quantile(df: u32, p: f64) -> Result<f64> {
    ChiSquared::new(df)?.quantile(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_at_integers() {
        let mut fact = 1.0f64;
        for k in 1..20 {
            assert!((ln_gamma(k as f64) - fact.ln()).abs() < 1e-12, "k = {k}");
            fact *= k as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn df2_is_exponential() {
        let q = chi2_quantile(2, 0.95).unwrap();
        assert!((q - (-2.0 * 0.05f64.ln())).abs() < 1e-10);
        assert!((q - 5.991465).abs() < 1e-6);
    }

    #[test]
    fn df4_tail_quantiles() {
        assert!((chi2_quantile(4, 0.975).unwrap() - 11.14329).abs() < 1e-5);
        assert!((chi2_quantile(4, 0.025).unwrap() - 0.484419).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_probability() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(chi2_quantile(3, p).is_err());
        }
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn round_trip_grid() {
        for df in 1..=50 {
            let dist = ChiSquared::new(df).unwrap();
            let mut last = 0.0;
            for p in [0.005, 0.025, 0.5, 0.975, 0.995] {
                let q = dist.quantile(p).unwrap();
                assert!((dist.cdf(q) - p).abs() <= 1e-8, "df {df}, p {p}");
                assert!(q > last);
                last = q;
            }
        }
    }
}
