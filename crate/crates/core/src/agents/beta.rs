//! Beta action distribution parameterized by mean and concentration.
//!
//! Special functions are evaluated in `f64` regardless of the model scalar.

use rand::Rng;
use rand_distr::{Beta as BetaSampler, Distribution};
use statrs::function::gamma::{digamma, ln_gamma};

/// Samples are kept this far away from 0 and 1 so log-densities stay finite.
pub const SAMPLE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beta {
    pub alpha: f64,
    pub beta: f64,
}

impl Beta {
    /// `alpha = mean·κ`, `beta = (1 − mean)·κ`. The mean is clamped to
    /// `[SAMPLE_EPS, 1 − SAMPLE_EPS]` because a saturated sigmoid can return
    /// exactly 0 or 1.
    pub fn from_mean(mean: f64, kappa: f64) -> Self {
        let mean = mean.clamp(SAMPLE_EPS, 1.0 - SAMPLE_EPS);
        Self {
            alpha: mean * kappa,
            beta: (1.0 - mean) * kappa,
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p() - Self::ln_beta_fn(self.alpha, self.beta)
    }

    /// `(∂/∂alpha, ∂/∂beta)` of `log_prob(x)`.
    pub fn log_prob_grad(&self, x: f64) -> (f64, f64) {
        let s = digamma(self.alpha + self.beta);
        (x.ln() - digamma(self.alpha) + s, (-x).ln_1p() - digamma(self.beta) + s)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = BetaSampler::new(self.alpha, self.beta).expect("positive Beta parameters");
        d.sample(rng).clamp(SAMPLE_EPS, 1.0 - SAMPLE_EPS)
    }

    /// `KL(self ‖ other)` in closed form.
    pub fn kl(&self, other: &Beta) -> f64 {
        let (a1, b1, a2, b2) = (self.alpha, self.beta, other.alpha, other.beta);
        Self::ln_beta_fn(a2, b2) - Self::ln_beta_fn(a1, b1)
            + (a1 - a2) * digamma(a1)
            + (b1 - b2) * digamma(b1)
            + (a2 - a1 + b2 - b1) * digamma(a1 + b1)
    }

    /// Gradient of `self.kl(other)` w.r.t. `(other.alpha, other.beta)`.
    pub fn kl_grad_other(&self, other: &Beta) -> (f64, f64) {
        let (a1, b1, a2, b2) = (self.alpha, self.beta, other.alpha, other.beta);
        let s2 = digamma(a2 + b2);
        let s1 = digamma(a1 + b1);
        // Grouped so that equal distributions give exactly zero.
        (
            (digamma(a2) - digamma(a1)) + (s1 - s2),
            (digamma(b2) - digamma(b1)) + (s1 - s2),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn saturated_means_stay_sampleable() {
        let mut r = rng::stream(3, 0);
        for m in [0.0, 1.0] {
            let b = Beta::from_mean(m, 10.0);
            assert!(b.alpha > 0.0 && b.beta > 0.0);
            let x = b.sample(&mut r);
            assert!(b.log_prob(x).is_finite());
        }
    }

    #[test]
    fn parameters_from_mean() {
        let b = Beta::from_mean(0.5, 10.0);
        assert_eq!((b.alpha, b.beta), (5.0, 5.0));
    }

    #[test]
    fn density_integrates_to_one() {
        // Composite Simpson on a substituted grid x = u², which tames the
        // endpoint singularities of small alpha or beta.
        let mut r = rng::stream(4, 4);
        for _ in 0..5 {
            let b = Beta {
                alpha: r.random_range(0.6..12.0),
                beta: r.random_range(0.6..12.0),
            };
            let f = |x: f64| b.log_prob(x).exp();
            let g = |u: f64| {
                if u <= 0.0 {
                    0.0
                } else {
                    2.0 * u * (f(u * u) + f(1.0 - u * u))
                }
            };
            let upper = 0.5f64.sqrt();
            let n = 200_000;
            let h = upper / n as f64;
            let mut s = g(0.0) + g(upper);
            for i in 1..n {
                s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let integral = s * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-3, "{b:?}: {integral}");
        }
    }

    #[test]
    fn kl_is_zero_on_self_and_positive_elsewhere() {
        let p = Beta { alpha: 2.0, beta: 3.0 };
        assert!(p.kl(&p).abs() < 1e-12);
        assert!(p.kl(&Beta { alpha: 3.0, beta: 2.0 }) > 0.0);
        assert_eq!(p.kl_grad_other(&p), (0.0, 0.0));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let p = Beta { alpha: 2.3, beta: 4.1 };
        let q = Beta { alpha: 3.7, beta: 1.9 };
        let e = 1e-6;
        let (ga, gb) = p.kl_grad_other(&q);
        let fa = (p.kl(&Beta {
            alpha: q.alpha + e,
            ..q
        }) - p.kl(&Beta {
            alpha: q.alpha - e,
            ..q
        })) / (2.0 * e);
        let fb = (p.kl(&Beta { beta: q.beta + e, ..q }) - p.kl(&Beta { beta: q.beta - e, ..q })) / (2.0 * e);
        assert!((ga - fa).abs() < 1e-6 && (gb - fb).abs() < 1e-6);
        let x = 0.37;
        let (la, lb) = q.log_prob_grad(x);
        let fa = (Beta {
            alpha: q.alpha + e,
            ..q
        }
        .log_prob(x)
            - Beta {
                alpha: q.alpha - e,
                ..q
            }
            .log_prob(x))
            / (2.0 * e);
        let fb = (Beta { beta: q.beta + e, ..q }.log_prob(x) - Beta { beta: q.beta - e, ..q }.log_prob(x)) / (2.0 * e);
        assert!((la - fa).abs() < 1e-6 && (lb - fb).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_mean() {
        let b = Beta::from_mean(0.8, 10.0);
        let mut r = rng::stream(10, 0);
        let m: f64 = (0..10_000).map(|_| b.sample(&mut r)).sum::<f64>() / 10_000.0;
        assert!((m - 0.8).abs() < 0.01, "{m}");
    }
}
