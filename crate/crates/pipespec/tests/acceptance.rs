//! Acceptance suite: every release-gating behavior of the simulator, one
//! test per criterion, each printing a PASS line with its measured numbers
//! (visible with `--nocapture`).
//!
//! The first criteria pin the closed-form model to its recursion; the sim
//! criteria pin the discrete-event engine to the closed forms; the protocol
//! criteria pin losslessness, ordering effects, histogram shapes, and
//! deterministic replay.

use pipespec::analytic::{
    expected_tokens_per_step, pipespec_rate, rho_recursion, rho_steady_state, sd_speedup,
};
use pipespec::engine::{replay, run, run_with_oracles, EventLog, RunResult};
use pipespec::metrics::{sweep, SweepAxis};
use pipespec::oracle::oracle_models;
use pipespec::types::{Mode, PipelineConfig, StageSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID_ALPHAS: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80,
    0.85, 0.90, 0.95,
];

/// Run a config and verify the event log replays to the identical result
/// (the replay half of criterion 10, applied to every run in the suite).
fn run_checked(config: &PipelineConfig) -> RunResult {
    let result = run_with_oracles(config).expect("run");
    let replayed = replay(&EventLog::from_result(&result)).expect("replay");
    assert_eq!(
        replayed, result,
        "event-log replay diverged from the original run"
    );
    result
}

#[test]
fn criterion_01_steady_state_agreement() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for &alpha in &GRID_ALPHAS {
        for gamma in 1..=16u32 {
            let iterated = *rho_recursion(alpha, gamma, 10_000).last().unwrap();
            let closed = rho_steady_state(alpha, gamma);
            let err = (iterated - closed).abs();
            worst = worst.max(err);
            assert!(
                err < 1e-9,
                "alpha={alpha} gamma={gamma}: |{iterated} - {closed}| = {err}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "grid took {elapsed:?}, budget is 1s"
    );
    println!(
        "[PASS] criterion 1: recursion fixed point matches closed form on the \
         19x16 grid (worst |err| {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn criterion_02_theory_vs_simulation() {
    for &alpha in &[0.5, 0.8, 0.95] {
        for &gamma in &[2u32, 4, 8] {
            let start = std::time::Instant::now();
            let rho = rho_steady_state(alpha, gamma);
            let expect = expected_tokens_per_step(alpha, gamma, rho);
            // drafter fast enough that verify windows are always full
            let cfg = PipelineConfig::new(
                vec![
                    StageSpec::drafter(1.0),
                    StageSpec::verifier(4.0 * f64::from(gamma), alpha).with_window(gamma),
                ],
                4242,
                Mode::PipespecAsync,
            )
            .with_max_tokens((expect * 100_000.0 * 1.02) as usize);
            let result = run_checked(&cfg);
            let steps = result.final_stage().verify_steps + result.fallback_steps;
            assert!(steps >= 100_000, "only {steps} final-stage steps");
            let rho_hat = result.verify_probability();
            let tokens_hat = result.tokens_per_step();
            let elapsed = start.elapsed();
            assert!(
                (rho_hat - rho).abs() <= 0.01,
                "alpha={alpha} gamma={gamma}: verify probability {rho_hat} vs {rho}"
            );
            assert!(
                (tokens_hat / expect - 1.0).abs() <= 0.02,
                "alpha={alpha} gamma={gamma}: tokens/step {tokens_hat} vs {expect}"
            );
            assert!(
                elapsed.as_secs_f64() < 60.0,
                "cell alpha={alpha} gamma={gamma} took {elapsed:?}"
            );
            println!(
                "[PASS] criterion 2 cell alpha={alpha} gamma={gamma}: \
                 rho {rho_hat:.4} vs {rho:.4}, tokens/step {tokens_hat:.4} vs {expect:.4} \
                 over {steps} steps ({elapsed:?})"
            );
        }
    }
    println!("[PASS] criterion 2: empirical verify probability and tokens/step match theory");
}

#[test]
fn criterion_03_throughput_exceeds_one() {
    for &alpha in &GRID_ALPHAS {
        for gamma in 1..=16u32 {
            let rate = pipespec_rate(alpha, gamma);
            assert!(rate > 1.0, "alpha={alpha} gamma={gamma}: rate {rate}");
        }
    }
    println!(
        "[PASS] criterion 3: pipespec_rate(alpha, gamma) > 1 at every grid point \
         with 0 < alpha < 1, gamma >= 1 (exact assertion)"
    );
}

#[test]
fn criterion_04_sync_speedup_matches_closed_form() {
    for &alpha in &[0.8, 0.95, 1.0] {
        for &gamma in &[4u32, 8] {
            for &c in &[4.0, 10.0] {
                let cfg = PipelineConfig::new(
                    vec![
                        StageSpec::drafter(1.0),
                        StageSpec::verifier(c, alpha).with_lookahead(gamma),
                    ],
                    1717,
                    Mode::SpeculativeSync,
                )
                .with_max_tokens(50_000);
                let result = run_checked(&cfg);
                let measured = (50_000.0 * c) / result.total_time;
                let expect = sd_speedup(alpha, gamma, c);
                assert!(
                    (measured / expect - 1.0).abs() <= 0.03,
                    "alpha={alpha} gamma={gamma} c={c}: measured {measured} vs {expect}"
                );
                println!(
                    "[PASS] criterion 4 cell alpha={alpha} gamma={gamma} c={c}: \
                     speedup {measured:.4} vs closed form {expect:.4}"
                );
            }
        }
    }
    // zero acceptance: lockstep speculation loses to autoregressive
    let cfg = PipelineConfig::new(
        vec![
            StageSpec::drafter(1.0),
            StageSpec::verifier(10.0, 0.0).with_lookahead(8),
        ],
        1717,
        Mode::SpeculativeSync,
    )
    .with_max_tokens(2_000);
    let result = run_checked(&cfg);
    let speedup = (2_000.0 * 10.0) / result.total_time;
    assert!(
        speedup < 1.0,
        "alpha=0 sync speedup {speedup} should be < 1"
    );
    println!(
        "[PASS] criterion 4: sync speedups track the closed form within 3%; \
         alpha=0 speedup {speedup:.4} < 1"
    );
}

#[test]
fn criterion_05_losslessness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5105_5EC5);
    for case in 0..100 {
        let num_stages = rng.gen_range(2..=4usize);
        let mut latency = rng.gen_range(0.5..2.0);
        let mut stages = vec![StageSpec::drafter(latency)];
        for _ in 1..num_stages {
            latency *= rng.gen_range(2.0..10.0);
            let mut stage = StageSpec::verifier(latency, rng.gen_range(0.1..0.99));
            if rng.gen_bool(0.5) {
                stage.window = Some(rng.gen_range(1..=16));
            }
            stage.lookahead = rng.gen_range(0..=10);
            stages.push(stage);
        }
        let seed = rng.gen();
        let max_tokens = rng.gen_range(64..=384);
        let base =
            PipelineConfig::new(stages, seed, Mode::PipespecAsync).with_max_tokens(max_tokens);
        let models = oracle_models(&base).expect("models");

        let reference = run(&base.autoregressive_baseline(), &models)
            .expect("baseline")
            .final_sequence;
        for mode in [Mode::SpeculativeSync, Mode::PipespecAsync] {
            let cfg = base.clone().with_mode(mode);
            let result = run(&cfg, &models).expect("run");
            let replayed = replay(&EventLog::from_result(&result)).expect("replay");
            assert_eq!(replayed, result, "case {case} mode {mode}: replay diverged");
            assert_eq!(
                result.final_sequence, reference,
                "case {case} mode {mode}: output differs from the autoregressive stream \
                 (config {cfg:?})"
            );
        }
    }
    println!(
        "[PASS] criterion 5: 100 randomized configs (2-4 stages, mixed windows and \
         lookaheads) produce the exact autoregressive sequence in both speculative modes"
    );
}

/// The ablation scenario: latencies 1:10:70, per-link acceptance 0.8,
/// lockstep window 8, async lookahead 0. Single-draft rows use the adjacent
/// top pair, mirroring a one-draft-model deployment.
fn ablation_multi(mode: Mode, seed: u64, n: usize) -> PipelineConfig {
    let mut stages = vec![
        StageSpec::drafter(1.0),
        StageSpec::verifier(10.0, 0.8),
        StageSpec::verifier(70.0, 0.8),
    ];
    if mode == Mode::SpeculativeSync {
        for stage in stages.iter_mut().skip(1) {
            stage.window = Some(8);
            stage.lookahead = 8;
        }
    }
    PipelineConfig::new(stages, seed, mode).with_max_tokens(n)
}

fn ablation_single(mode: Mode, seed: u64, n: usize) -> PipelineConfig {
    let mut stages = vec![StageSpec::drafter(10.0), StageSpec::verifier(70.0, 0.8)];
    if mode == Mode::SpeculativeSync {
        stages[1].window = Some(8);
        stages[1].lookahead = 8;
    }
    PipelineConfig::new(stages, seed, mode).with_max_tokens(n)
}

#[test]
fn criterion_06_ablation_ordering() {
    let (seed, n) = (42u64, 8192usize);
    let ar_time = n as f64 * 70.0;
    let speedup_of = |cfg: &PipelineConfig| {
        let result = run_checked(cfg);
        assert_eq!(result.final_sequence.len(), n);
        ar_time / result.total_time
    };
    let sync_single = speedup_of(&ablation_single(Mode::SpeculativeSync, seed, n));
    let sync_multi = speedup_of(&ablation_multi(Mode::SpeculativeSync, seed, n));
    let async_single = speedup_of(&ablation_single(Mode::PipespecAsync, seed, n));
    let async_multi = speedup_of(&ablation_multi(Mode::PipespecAsync, seed, n));
    assert!(
        1.0 < sync_single,
        "sync single-draft speedup {sync_single} should beat autoregressive"
    );
    assert!(
        sync_single < sync_multi,
        "sync multi {sync_multi} should beat sync single {sync_single}"
    );
    assert!(
        sync_multi < async_single,
        "async single {async_single} should beat sync multi {sync_multi}"
    );
    assert!(
        async_single < async_multi,
        "async multi {async_multi} should beat async single {async_single}"
    );
    println!(
        "[PASS] criterion 6: throughput orders AR 1.0 < sync-single {sync_single:.3} \
         < sync-multi {sync_multi:.3} < async-single {async_single:.3} \
         < async-multi {async_multi:.3}"
    );
}

#[test]
fn criterion_07_depth_benefit() {
    let (seed, n) = (42u64, 8192usize);
    let three = ablation_multi(Mode::PipespecAsync, seed, n);
    // drop the middle stage; the chained oracle composes the link
    // acceptances, so the end-to-end rate is 0.64
    let two = PipelineConfig::new(
        vec![
            StageSpec::drafter(1.0),
            StageSpec::verifier(70.0, 0.8 * 0.8),
        ],
        seed,
        Mode::PipespecAsync,
    )
    .with_max_tokens(n);
    let t3 = run_checked(&three);
    let t2 = run_checked(&two);
    let ar_time = n as f64 * 70.0;
    let s3 = ar_time / t3.total_time;
    let s2 = ar_time / t2.total_time;
    assert!(
        s3 > s2,
        "three-stage speedup {s3} should strictly beat two-stage {s2}"
    );
    println!(
        "[PASS] criterion 7: three-stage pipeline speedup {s3:.3} > two-stage {s2:.3} \
         under the paper-shaped config"
    );
}

#[test]
fn criterion_08_lookahead_shapes() {
    // one scenario for both modes: draft/verify latency ratio 5
    let base = PipelineConfig::new(
        vec![StageSpec::drafter(1.0), StageSpec::verifier(5.0, 0.8)],
        2025,
        Mode::PipespecAsync,
    )
    .with_max_tokens(30_000);

    let tpt = |mode: Mode, lookahead: f64| {
        let rows = sweep(&base, SweepAxis::Lookahead, &[lookahead], &[mode]).expect("sweep");
        rows[0].time_per_token
    };

    let sd = |l: f64| tpt(Mode::SpeculativeSync, l);
    let sd1 = sd(1.0);
    let sd8 = sd(8.0);
    let sd30 = sd(30.0);
    assert!(
        sd1 > sd8 && sd30 > sd8,
        "sync time/token should be U-shaped: f(1)={sd1}, f(8)={sd8}, f(30)={sd30}"
    );

    let ps0 = tpt(Mode::PipespecAsync, 0.0);
    let mut ps_tail = Vec::new();
    for l in [5.0, 10.0, 15.0, 20.0, 25.0, 30.0] {
        let v = tpt(Mode::PipespecAsync, l);
        assert!(
            ps0 <= v,
            "async time/token at lookahead 0 ({ps0}) should not exceed lookahead {l} ({v})"
        );
        ps_tail.push(v);
    }
    println!(
        "[PASS] criterion 8: sync time/token U-shape (1: {sd1:.3}, 8: {sd8:.3}, 30: {sd30:.3}); \
         async minimum at lookahead 0 ({ps0:.3} <= {ps_tail:?})"
    );
}

#[test]
fn criterion_09_long_tail_histogram() {
    // unbounded async window at high acceptance: long verification runs
    let async_cfg = PipelineConfig::new(
        vec![StageSpec::drafter(1.0), StageSpec::verifier(35.0, 0.9)],
        31337,
        Mode::PipespecAsync,
    )
    .with_max_tokens(20_000);
    let async_result = run_checked(&async_cfg);
    let async_tail: u64 = async_result
        .accept_histogram
        .iter()
        .filter(|(k, _)| **k > 20)
        .map(|(_, v)| *v)
        .sum();
    assert!(
        async_tail > 0,
        "unbounded async window should commit > 20 tokens in some verify passes: {:?}",
        async_result.accept_histogram
    );

    let sync_cfg = PipelineConfig::new(
        vec![
            StageSpec::drafter(1.0),
            StageSpec::verifier(35.0, 0.9)
                .with_window(8)
                .with_lookahead(8),
        ],
        31337,
        Mode::SpeculativeSync,
    )
    .with_max_tokens(20_000);
    let sync_result = run_checked(&sync_cfg);
    let sync_max = sync_result
        .accept_histogram
        .keys()
        .max()
        .copied()
        .unwrap_or(0);
    assert!(
        sync_max <= 9,
        "sync histogram support must stay within gamma+1 = 9, got {sync_max}"
    );
    println!(
        "[PASS] criterion 9: async histogram has {async_tail} verify passes above 20 tokens \
         (max {}), sync support capped at {sync_max} <= 9",
        async_result.accept_histogram.keys().max().unwrap()
    );
}

#[test]
fn criterion_10_determinism_and_replay() {
    // bit-exact determinism of full results, including event logs, across
    // repeated runs and a serialization round trip
    let configs = vec![
        ablation_multi(Mode::PipespecAsync, 7, 2048),
        ablation_multi(Mode::SpeculativeSync, 7, 2048),
        ablation_single(Mode::PipespecAsync, 7, 2048),
        PipelineConfig::new(
            vec![StageSpec::drafter(1.0), StageSpec::verifier(5.0, 0.8)],
            2025,
            Mode::Autoregressive,
        )
        .with_max_tokens(2048),
    ];
    for cfg in &configs {
        let a = run_with_oracles(cfg).expect("first run");
        let b = run_with_oracles(cfg).expect("second run");
        assert_eq!(a, b, "identical config+seed must give identical results");

        let log = EventLog::from_result(&a);
        let text = log.to_jsonl();
        let text2 = EventLog::from_result(&b).to_jsonl();
        assert_eq!(text, text2, "serialized logs must be byte-identical");
        let parsed = EventLog::parse_jsonl(&text).expect("parse");
        let replayed = replay(&parsed).expect("replay");
        assert_eq!(
            replayed, a,
            "replay of the serialized log must reproduce the run"
        );
    }
    println!(
        "[PASS] criterion 10: identical config+seed gives byte-identical event logs, \
         and replay reconstructs every run exactly (replay is also asserted inside \
         criteria 2-9 via run_checked)"
    );
}
