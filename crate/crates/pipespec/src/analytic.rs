//! Closed-form throughput model for draft/verify pipelines.
//!
//! All formulas are expressed over a per-link acceptance rate `alpha`, a
//! verify window `gamma`, and (where waiting matters) a draft-to-target
//! speed ratio `c`. Geometric ratios are computed in summation form
//! `sum_{j=0..=gamma} alpha^j` so that `alpha = 1` is exact instead of a
//! 0/0 ratio.
//!
//! These functions double as the oracle against which the discrete-event
//! simulation is validated, so they stay dependency-free and allocation-free
//! where possible.

use crate::types::ConfigError;
use serde::{Deserialize, Serialize};

/// Inputs of the closed-form model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInputs {
    /// Acceptance rate between the draft and target stage, in [0, 1].
    pub alpha: f64,
    /// Verify window (draft tokens per verification batch).
    pub gamma: u32,
    /// Draft-to-target token-rate ratio; how many draft tokens fit in one
    /// target step.
    pub speed_ratio: f64,
}

impl AnalyticInputs {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(ConfigError::new(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.speed_ratio <= 0.0 || !self.speed_ratio.is_finite() {
            return Err(ConfigError::new(format!(
                "speed_ratio must be positive, got {}",
                self.speed_ratio
            )));
        }
        Ok(())
    }
}

/// All model outputs for one `(alpha, gamma, speed_ratio)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    /// Steady-state probability that a target step is a batch verification.
    pub rho_steady: f64,
    /// Expected tokens committed by the target per step at steady state.
    pub expected_tokens: f64,
    /// Tokens per target step for the asynchronous pipeline (> 1 whenever
    /// 0 < alpha and gamma > 0).
    pub pipespec_rate: f64,
    /// Speedup of lockstep speculative decoding over autoregressive,
    /// including the time spent waiting for drafts.
    pub sd_speedup: f64,
    /// Ideal-case pipeline speedup: the full geometric sum, no waiting.
    pub pipespec_ideal: f64,
}

impl AnalyticReport {
    /// Evaluate every formula at one point.
    pub fn compute(inputs: AnalyticInputs) -> Result<AnalyticReport, ConfigError> {
        inputs.validate()?;
        let AnalyticInputs {
            alpha,
            gamma,
            speed_ratio,
        } = inputs;
        let rho = rho_steady_state(alpha, gamma);
        Ok(AnalyticReport {
            rho_steady: rho,
            expected_tokens: expected_tokens_per_step(alpha, gamma, rho),
            pipespec_rate: pipespec_rate(alpha, gamma),
            sd_speedup: sd_speedup(alpha, gamma, speed_ratio),
            pipespec_ideal: pipespec_ideal(alpha, gamma),
        })
    }
}

impl std::fmt::Display for AnalyticReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rho_steady      = {:.6}", self.rho_steady)?;
        writeln!(f, "expected_tokens = {:.6}", self.expected_tokens)?;
        writeln!(f, "pipespec_rate   = {:.6}", self.pipespec_rate)?;
        writeln!(f, "sd_speedup      = {:.6}", self.sd_speedup)?;
        write!(f, "pipespec_ideal  = {:.6}", self.pipespec_ideal)
    }
}

/// `sum_{j=0..=gamma} alpha^j`, the expected tokens from one verified batch
/// of `gamma` drafts including the bonus/correction token.
pub fn geometric_sum(alpha: f64, gamma: u32) -> f64 {
    let mut sum = 1.0;
    let mut pow = 1.0;
    for _ in 0..gamma {
        pow *= alpha;
        sum += pow;
    }
    sum
}

/// One step of the verification-probability recursion:
/// `rho' = rho * alpha^(gamma+1) + (1 - rho) * alpha`.
///
/// A step verifies if either the previous step verified, its whole window
/// passed, and the drafter's parallel token matched the bonus
/// (`alpha^(gamma+1)`), or the previous step fell back to a single token and
/// the drafter's re-draft matched it (`alpha`).
pub fn rho_step(rho: f64, alpha: f64, gamma: u32) -> f64 {
    rho * alpha.powi(gamma as i32 + 1) + (1.0 - rho) * alpha
}

/// Iterate the verification-probability recursion from its initial value
/// `rho(t_0) = alpha`, returning all `steps` values.
pub fn rho_recursion(alpha: f64, gamma: u32, steps: usize) -> Vec<f64> {
    assert!(steps >= 1, "rho_recursion requires steps >= 1");
    let mut out = Vec::with_capacity(steps);
    let mut rho = alpha;
    out.push(rho);
    for _ in 1..steps {
        rho = rho_step(rho, alpha, gamma);
        out.push(rho);
    }
    out
}

/// Fixed point of the recursion: `alpha / (1 - alpha^(gamma+1) + alpha)`.
pub fn rho_steady_state(alpha: f64, gamma: u32) -> f64 {
    alpha / (1.0 - alpha.powi(gamma as i32 + 1) + alpha)
}

/// Expected tokens per target step given the verification probability:
/// one token on a fallback step, the geometric sum on a verify step.
pub fn expected_tokens_per_step(alpha: f64, gamma: u32, rho: f64) -> f64 {
    (1.0 - rho) + rho * geometric_sum(alpha, gamma)
}

/// Tokens per step of the asynchronous pipeline at steady state. Strictly
/// greater than 1 for any `0 < alpha < 1` and `gamma > 0`: the fallback
/// branch alone already yields one token per step.
pub fn pipespec_rate(alpha: f64, gamma: u32) -> f64 {
    let rho = rho_steady_state(alpha, gamma);
    expected_tokens_per_step(alpha, gamma, rho)
}

/// Speedup of lockstep speculative decoding over autoregressive decoding.
/// Each round spends `gamma / c` target-steps waiting for drafts plus one
/// verification step, and commits the geometric sum in expectation.
pub fn sd_speedup(alpha: f64, gamma: u32, speed_ratio: f64) -> f64 {
    geometric_sum(alpha, gamma) / (f64::from(gamma) / speed_ratio + 1.0)
}

/// High-acceptance approximation of the pipeline speedup: the geometric sum
/// with no waiting term.
pub fn pipespec_ideal(alpha: f64, gamma: u32) -> f64 {
    geometric_sum(alpha, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GRID_ALPHAS: [f64; 19] = [
        0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75,
        0.80, 0.85, 0.90, 0.95,
    ];

    #[test]
    fn rho_recursion_degenerate_rates() {
        assert_eq!(rho_recursion(0.0, 4, 3), vec![0.0, 0.0, 0.0]);
        assert_eq!(rho_recursion(1.0, 4, 3), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rho_recursion_reaches_fixed_point() {
        // Independent oracle for the closed form: iterate the recursion to
        // numerical convergence and compare.
        let seq = rho_recursion(0.8, 4, 50);
        let last = *seq.last().unwrap();
        assert!((last - 0.5434).abs() < 5e-4, "got {last}");
        assert!((last - rho_steady_state(0.8, 4)).abs() < 1e-12);
    }

    #[test]
    fn rho_steady_state_values() {
        assert_eq!(rho_steady_state(0.0, 4), 0.0);
        assert_eq!(rho_steady_state(1.0, 4), 1.0);
        // 0.8 / (1 - 0.8^5 + 0.8)
        let expect = 0.8 / (1.0 - 0.32768 + 0.8);
        assert!((rho_steady_state(0.8, 4) - expect).abs() < 1e-15);
        assert!((expect - 0.5434).abs() < 5e-4);
    }

    #[test]
    fn expected_tokens_values() {
        assert_eq!(expected_tokens_per_step(0.0, 4, 0.0), 1.0);
        assert_eq!(expected_tokens_per_step(1.0, 4, 1.0), 5.0);
        let rho = rho_steady_state(0.8, 4);
        let e = expected_tokens_per_step(0.8, 4, rho);
        assert!((e - 2.283).abs() < 1e-3, "got {e}");
    }

    #[test]
    fn pipespec_rate_hand_composed() {
        // alpha = 0.5, gamma = 1: rho = 0.5/(1 - 0.25 + 0.5) = 0.4,
        // rate = 0.6 + 0.4 * 1.5 = 1.2.
        assert!((pipespec_rate(0.5, 1) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn pipespec_rate_high_alpha_tracks_ideal() {
        // In the rho ~ 1 regime the rate approaches the no-waiting ideal.
        let rate = pipespec_rate(0.99, 8);
        let rho = rho_steady_state(0.99, 8);
        let expect = expected_tokens_per_step(0.99, 8, rho);
        assert!((rate - expect).abs() < 1e-12);
        let ideal = pipespec_ideal(0.99, 8);
        assert!((ideal - 8.648).abs() < 1e-2, "got {ideal}");
        assert!(
            (rate - ideal).abs() / ideal < 0.10,
            "rate {rate} vs ideal {ideal}"
        );
    }

    #[test]
    fn pipespec_rate_positive_even_at_tiny_alpha() {
        assert!(pipespec_rate(0.001, 4) > 1.0);
    }

    #[test]
    fn sd_speedup_values() {
        // Low acceptance with a wide window is slower than autoregressive.
        let s = sd_speedup(0.0, 8, 10.0);
        assert!((s - 1.0 / 1.8).abs() < 1e-12);
        assert!(s < 1.0);
        // Perfect acceptance: 9 tokens per round of 1.8 target steps.
        assert!((sd_speedup(1.0, 8, 10.0) - 5.0).abs() < 1e-12);
        // Zero window degenerates to autoregressive regardless of the rest.
        assert_eq!(sd_speedup(0.37, 0, 3.0), 1.0);
        assert_eq!(sd_speedup(1.0, 0, 100.0), 1.0);
    }

    #[test]
    fn pipespec_ideal_values() {
        assert_eq!(pipespec_ideal(1.0, 8), 9.0);
        assert_eq!(pipespec_ideal(0.0, 8), 1.0);
        let expect = 1.0 + 0.8 + 0.64 + 0.512 + 0.4096;
        assert!((pipespec_ideal(0.8, 4) - expect).abs() < 1e-12);
    }

    #[test]
    fn grid_fixed_point_agreement() {
        // The iterated recursion and the closed form agree to 1e-9 across
        // the whole grid.
        for &alpha in &GRID_ALPHAS {
            for gamma in 1..=16 {
                let last = *rho_recursion(alpha, gamma, 10_000).last().unwrap();
                let closed = rho_steady_state(alpha, gamma);
                assert!(
                    (last - closed).abs() < 1e-9,
                    "alpha={alpha} gamma={gamma}: {last} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn steady_state_is_exact_fixed_point() {
        // Substituting the closed form into the recursion returns it
        // unchanged to floating tolerance.
        for &alpha in &GRID_ALPHAS {
            for gamma in 1..=16 {
                let rho = rho_steady_state(alpha, gamma);
                let next = rho_step(rho, alpha, gamma);
                assert!(
                    (next - rho).abs() < 1e-12,
                    "alpha={alpha} gamma={gamma}: {next} vs {rho}"
                );
            }
        }
    }

    #[test]
    fn rate_exceeds_one_on_grid() {
        for &alpha in &GRID_ALPHAS {
            for gamma in 1..=16 {
                assert!(
                    pipespec_rate(alpha, gamma) > 1.0,
                    "alpha={alpha} gamma={gamma}"
                );
            }
        }
    }

    #[test]
    fn ideal_dominates_sd_speedup() {
        for &alpha in &GRID_ALPHAS {
            for gamma in 1..=16 {
                for &c in &[0.5, 1.0, 4.0, 10.0, 100.0] {
                    assert!(
                        pipespec_ideal(alpha, gamma) >= sd_speedup(alpha, gamma, c),
                        "alpha={alpha} gamma={gamma} c={c}"
                    );
                }
            }
        }
    }

    #[test]
    fn rates_monotone_in_alpha_and_gamma() {
        for gamma in 1..=16 {
            let mut prev_rate = 0.0;
            let mut prev_ideal = 0.0;
            for &alpha in &GRID_ALPHAS {
                let rate = pipespec_rate(alpha, gamma);
                let ideal = pipespec_ideal(alpha, gamma);
                assert!(rate >= prev_rate, "alpha sweep at gamma={gamma}");
                assert!(ideal >= prev_ideal, "alpha sweep at gamma={gamma}");
                prev_rate = rate;
                prev_ideal = ideal;
            }
        }
        for &alpha in &GRID_ALPHAS {
            let mut prev_rate = 0.0;
            let mut prev_ideal = 0.0;
            for gamma in 1..=16 {
                let rate = pipespec_rate(alpha, gamma);
                let ideal = pipespec_ideal(alpha, gamma);
                assert!(rate >= prev_rate, "gamma sweep at alpha={alpha}");
                assert!(ideal >= prev_ideal, "gamma sweep at alpha={alpha}");
                prev_rate = rate;
                prev_ideal = ideal;
            }
        }
    }

    #[test]
    fn report_rejects_out_of_domain() {
        let bad = AnalyticInputs {
            alpha: 1.2,
            gamma: 4,
            speed_ratio: 10.0,
        };
        let err = AnalyticReport::compute(bad).unwrap_err();
        assert!(err.to_string().contains("[0, 1]"));
        let bad = AnalyticInputs {
            alpha: 0.5,
            gamma: 4,
            speed_ratio: 0.0,
        };
        assert!(AnalyticReport::compute(bad).is_err());
    }

    proptest! {
        // Theorem-style property over random points, not just the grid.
        #[test]
        fn rate_exceeds_one_everywhere(alpha in 0.0001f64..0.9999, gamma in 1u32..64) {
            prop_assert!(pipespec_rate(alpha, gamma) > 1.0);
        }

        #[test]
        fn geometric_sum_matches_ratio_form(alpha in 0.0f64..0.999, gamma in 0u32..64) {
            let sum = geometric_sum(alpha, gamma);
            let ratio = if alpha == 0.0 {
                1.0
            } else {
                (1.0 - alpha.powi(gamma as i32 + 1)) / (1.0 - alpha)
            };
            prop_assert!((sum - ratio).abs() < 1e-9 * sum.max(1.0));
        }

        #[test]
        fn rho_stays_in_unit_interval(alpha in 0.0f64..=1.0, gamma in 0u32..64) {
            let rho = rho_steady_state(alpha, gamma);
            prop_assert!((0.0..=1.0).contains(&rho));
            for r in rho_recursion(alpha, gamma, 200) {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
