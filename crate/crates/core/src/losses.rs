//! Score-level losses: anchored Plackett–Luce, Bradley–Terry cross-entropy and
//! the response-time regression target built on the hyperbolic link.
//!
//! All gradients here are with respect to the scores, not network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// `lse[j] = ln(exp(s_j) + ... + exp(s_k) + exp(0))`, i.e. the log-normalizer of
/// stage `j` with the anchor still in the pool.
fn stage_log_normalizers(scores: &[f64]) -> Vec<f64> {
    let mut lse = vec![0.0; scores.len()];
    let mut acc = 0.0; // the anchor alone
    for (j, &s) in scores.iter().enumerate().rev() {
        acc = log_add_exp(s, acc);
        lse[j] = acc;
    }
    lse
}

/// Negative log-likelihood of the ranking `[s_1, ..., s_k, anchor]` under
/// Plackett–Luce, where the anchor has score 0 and is ranked last.
pub fn pl_nll(scores: &[f64]) -> f64 {
    stage_log_normalizers(scores)
        .iter()
        .zip(scores)
        .map(|(l, s)| l - s)
        .sum()
}

/// Gradient of [`pl_nll`] with respect to each score.
///
/// `d/ds_i = -1 + sum_{j <= i} exp(s_i - lse_j)`.
pub fn pl_nll_grad(scores: &[f64]) -> Vec<f64> {
    pl_nll_with_grad(scores).1
}

pub fn pl_nll_with_grad(scores: &[f64]) -> (f64, Vec<f64>) {
    let lse = stage_log_normalizers(scores);
    let loss = lse.iter().zip(scores).map(|(l, s)| l - s).sum();
    // lse is non-increasing in j, so every exp(lse_i - lse_j) with j <= i is <= 1.
    let mut grad = Vec::with_capacity(scores.len());
    let mut running = 0.0;
    for (i, (&s, &l)) in scores.iter().zip(&lse).enumerate() {
        running = if i == 0 {
            1.0
        } else {
            running * (l - lse[i - 1]).exp() + 1.0
        };
        grad.push(-1.0 + (s - l).exp() * running);
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Lose,
}

/// Bradley–Terry binary cross-entropy for the score difference `s = u(a) - u(b)`.
pub fn bt_bce(s: f64, outcome: Outcome) -> f64 {
    match outcome {
        Outcome::Win => softplus(-s),
        Outcome::Lose => softplus(s),
    }
}

pub fn bt_bce_grad(s: f64, outcome: Outcome) -> f64 {
    match outcome {
        Outcome::Win => -sigmoid(-s),
        Outcome::Lose => sigmoid(s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub rt_min: f64,
    pub rt_max: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            rt_min: 0.0,
            rt_max: 10.0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rt_min < self.rt_max) || !self.rt_min.is_finite() || !self.rt_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "link needs finite rt_min < rt_max, got ({}, {})",
                self.rt_min, self.rt_max
            )));
        }
        Ok(())
    }
}

/// Hyperbolic link from utility difference to expected response time.
pub fn link(delta_u: f64, cfg: &LinkConfig) -> f64 {
    cfg.rt_min + (cfg.rt_max - cfg.rt_min) / (delta_u.abs() + 1.0)
}

/// Absolute utility difference implied by a response time. Times beyond
/// `rt_max` map to 0.
pub fn link_inverse(rt: f64, cfg: &LinkConfig) -> Result<f64> {
    if !(rt > cfg.rt_min) {
        return Err(Error::LinkSingularity {
            rt,
            rt_min: cfg.rt_min,
        });
    }
    Ok(((cfg.rt_max - cfg.rt_min) / (rt - cfg.rt_min) - 1.0).max(0.0))
}

/// Signed regression target for `u(a) - u(b)`.
pub fn rt_regression_target(a_preferred: bool, rt: f64, cfg: &LinkConfig) -> Result<f64> {
    let magnitude = link_inverse(rt, cfg)?;
    Ok(if a_preferred { magnitude } else { -magnitude })
}

pub fn mse(pred: f64, target: f64) -> f64 {
    (pred - target).powi(2)
}

pub fn mse_grad(pred: f64, target: f64) -> f64 {
    2.0 * (pred - target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn pl_single_zero_is_ln2() {
        assert!((pl_nll(&[0.0]) - LN2).abs() < 1e-15);
        assert!((pl_nll(&[0.0]) - bt_bce(0.0, Outcome::Win)).abs() < 1e-15);
    }

    #[test]
    fn pl_two_zeros() {
        // stage 1 picks 1 of 3 equal scores, stage 2 picks 1 of 2
        let expected = 3f64.ln() + 2f64.ln();
        assert!((pl_nll(&[0.0, 0.0]) - expected).abs() < 1e-12);
        assert!((expected - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn pl_gradient_single() {
        assert!((pl_nll_grad(&[0.0])[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn pl_handles_extreme_scores() {
        let (loss, grad) = pl_nll_with_grad(&[800.0, -800.0, 3.0]);
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    fn sequential_definition(scores: &[f64]) -> f64 {
        let mut all: Vec<f64> = scores.to_vec();
        all.push(0.0);
        let mut nll = 0.0;
        for j in 0..scores.len() {
            let denom: f64 = all[j..].iter().map(|s| s.exp()).sum();
            nll -= all[j].exp().ln() - denom.ln();
        }
        nll
    }

    #[test]
    fn gradient_sum_identity() {
        let scores = [0.3, -1.2, 2.0, 0.7];
        let grad = pl_nll_grad(&scores);
        let lse = stage_log_normalizers(&scores);
        let anchor_free: f64 = lse.iter().map(|l| 1.0 - (-l).exp()).sum();
        let total: f64 = grad.iter().sum();
        assert!((total - (-(scores.len() as f64) + anchor_free)).abs() < 1e-12);
    }

    #[test]
    fn bt_values() {
        assert!((bt_bce(0.0, Outcome::Win) - LN2).abs() < 1e-15);
        assert!((bt_bce(0.0, Outcome::Lose) - LN2).abs() < 1e-15);
        assert!((bt_bce(3f64.ln(), Outcome::Win) - 0.287682).abs() < 1e-6);
        assert!((bt_bce(3f64.ln(), Outcome::Win) + 0.75f64.ln()).abs() < 1e-15);
        let tiny = bt_bce(50.0, Outcome::Win);
        assert!(tiny < 1e-20 && tiny > 0.0);
        assert!(bt_bce(-800.0, Outcome::Win).is_finite());
    }

    #[test]
    fn link_values() {
        let cfg = LinkConfig::default();
        assert_eq!(link(0.0, &cfg), 10.0);
        assert_eq!(link(1.0, &cfg), 5.0);
        assert_eq!(link(9.0, &cfg), 1.0);
        assert_eq!(link(-9.0, &cfg), 1.0);
    }

    #[test]
    fn link_inverse_values() {
        let cfg = LinkConfig::default();
        assert_eq!(link_inverse(5.0, &cfg).unwrap(), 1.0);
        assert_eq!(link_inverse(10.0, &cfg).unwrap(), 0.0);
        assert_eq!(link_inverse(12.0, &cfg).unwrap(), 0.0);
        assert!(matches!(
            link_inverse(0.0, &cfg),
            Err(Error::LinkSingularity { .. })
        ));
        assert!(link_inverse(-1.0, &cfg).is_err());
    }

    #[test]
    fn regression_targets() {
        let cfg = LinkConfig::default();
        assert_eq!(rt_regression_target(true, 5.0, &cfg).unwrap(), 1.0);
        assert_eq!(rt_regression_target(false, 5.0, &cfg).unwrap(), -1.0);
        assert_eq!(rt_regression_target(true, 10.0, &cfg).unwrap(), 0.0);
        assert_eq!(rt_regression_target(false, 10.0, &cfg).unwrap().abs(), 0.0);
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse(1.5, 1.5), 0.0);
        assert_eq!(mse(2.0, 0.0), 4.0);
        let h = 1e-6;
        let fd = (mse(0.7 + h, -0.2) - mse(0.7 - h, -0.2)) / (2.0 * h);
        assert!((fd - mse_grad(0.7, -0.2)).abs() < 1e-8);
    }

    #[test]
    fn link_config_validation() {
        assert!(LinkConfig { rt_min: 1.0, rt_max: 1.0 }.validate().is_err());
        assert!(LinkConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn pl_matches_sequential_product(scores in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            let a = pl_nll(&scores);
            let b = sequential_definition(&scores);
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }

        #[test]
        fn pl_gradient_matches_finite_differences(scores in prop::collection::vec(-4.0f64..4.0, 1..8)) {
            let grad = pl_nll_grad(&scores);
            let h = 1e-5;
            for i in 0..scores.len() {
                let mut plus = scores.clone();
                plus[i] += h;
                let mut minus = scores.clone();
                minus[i] -= h;
                let fd = (pl_nll(&plus) - pl_nll(&minus)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(1e-3);
                prop_assert!(rel < 1e-6, "index {}: fd {} analytic {}", i, fd, grad[i]);
            }
        }

        #[test]
        fn pl_decreases_in_top_score(scores in prop::collection::vec(-4.0f64..4.0, 1..6), bump in 0.01f64..2.0) {
            let mut raised = scores.clone();
            raised[0] += bump;
            prop_assert!(pl_nll(&raised) < pl_nll(&scores));
        }

        #[test]
        fn link_roundtrip(rt in 1e-3f64..10.0) {
            let cfg = LinkConfig::default();
            let back = link(link_inverse(rt, &cfg).unwrap(), &cfg);
            prop_assert!((back - rt).abs() < 1e-12 * rt.max(1.0));
        }

        #[test]
        fn bt_gradient_matches_finite_differences(s in -20.0f64..20.0) {
            let h = 1e-6;
            for outcome in [Outcome::Win, Outcome::Lose] {
                let fd = (bt_bce(s + h, outcome) - bt_bce(s - h, outcome)) / (2.0 * h);
                prop_assert!((fd - bt_bce_grad(s, outcome)).abs() < 1e-7);
            }
        }
    }
}
