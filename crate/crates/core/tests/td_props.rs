use proptest::prelude::*;
use td_inference::mdp::{
    adversarial_stream, build_divergence_mdp, build_hard_mdp, ground_truth, HardMdpParams, SampleTuple,
    TransitionSampler,
};
use td_inference::numkit::{seeded_rng, solve_lyapunov, sym_eig, Matrix, Vector};
use td_inference::td::{compute_q, lambda_bar, run_td, run_td_stream, StepSchedule, TdState};

fn tuple(a: Vec<f64>, b: Vec<f64>) -> SampleTuple {
    let d = b.len();
    SampleTuple { s: 0, s_next: 0, reward: 0.0, a: Matrix::new(d, d, a).unwrap(), b: Vector::new(b).unwrap() }
}

fn stream(d: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<SampleTuple>> {
    prop::collection::vec(
        (prop::collection::vec(-1.0f64..1.0, d * d), prop::collection::vec(-1.0f64..1.0, d))
            .prop_map(|(a, b)| tuple(a, b)),
        len,
    )
}

fn schedule() -> impl Strategy<Value = StepSchedule> {
    (0.01f64..1.0, 0.5f64..0.99).prop_map(|(eta0, alpha)| StepSchedule::new(eta0, alpha).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn running_average_matches_stored_iterates(
        samples in (1usize..4).prop_flat_map(|d| stream(d, 1..60)),
        sched in schedule(),
    ) {
        let d = samples[0].dim();
        let mut state = TdState::zeros(d);
        let mut iterates: Vec<Vec<f64>> = Vec::new();
        for s in &samples {
            state.step(s, &sched).unwrap();
            iterates.push(state.theta.to_vec());
            let n = iterates.len() as f64;
            for j in 0..d {
                let mean = iterates.iter().map(|it| it[j]).sum::<f64>() / n;
                let scale = iterates.iter().map(|it| it[j].abs()).fold(1e-300, f64::max);
                prop_assert!((state.theta_bar[j] - mean).abs() <= 1e-12 * scale);
            }
        }
        prop_assert_eq!(state.t, samples.len() as u64);
    }

    #[test]
    fn q_terminal_and_shapes(sched in schedule(), d in 1usize..5, horizon in 1u64..40) {
        let a = Matrix::identity(d).scale(0.3);
        let q_t = compute_q(horizon, horizon, &sched, &a).unwrap();
        prop_assert_eq!(q_t, Matrix::identity(d).scale(sched.stepsize(horizon).unwrap()));
        for t in 1..=horizon {
            let q = compute_q(t, horizon, &sched, &a).unwrap();
            prop_assert_eq!((q.rows(), q.cols()), (d, d));
        }
    }

    #[test]
    fn lambda_bar_symmetric_psd(
        d in prop::sample::select(vec![3usize, 5]),
        eta0 in 0.1f64..5.0,
        alpha in 0.5f64..0.95,
        horizon in 1u64..300,
    ) {
        let mdp = build_hard_mdp(&HardMdpParams::new(10, d, 0.2, 0.01)).unwrap();
        let gt = ground_truth(&mdp).unwrap();
        let sched = StepSchedule::new(eta0, alpha).unwrap();
        let lb = lambda_bar(horizon, &sched, &gt.a, &gt.gamma_noise).unwrap();
        prop_assert!(lb.max_abs_diff(&lb.transpose()) <= 1e-12 * lb.frobenius_norm());
        prop_assert!(sym_eig(&lb).unwrap().min() >= -1e-10);
    }
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let mdp = build_hard_mdp(&HardMdpParams::new(10, 5, 0.2, 0.01)).unwrap();
    let gt = ground_truth(&mdp).unwrap();
    let sched = StepSchedule::new(5.0, 2.0 / 3.0).unwrap();
    let cps = [10, 1000, 5000];
    let a = run_td(&mdp, &gt.mu, &sched, 5000, 42, &cps).unwrap();
    let b = run_td(&mdp, &gt.mu, &sched, 5000, 42, &cps).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.t, y.t);
        for (p, q) in x.theta_bar.iter().zip(y.theta_bar.iter()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
    let c = run_td(&mdp, &gt.mu, &sched, 5000, 43, &cps).unwrap();
    assert_ne!(a[2].theta_bar, c[2].theta_bar);
}

#[test]
fn adversarial_stream_matches_closed_form() {
    let gt = ground_truth(&build_divergence_mdp()).unwrap();
    let theta_star = gt.theta_star[0];
    let sched = StepSchedule::new(5.0, 2.0 / 3.0).unwrap();
    let cps: Vec<u64> = (1..=50).collect();
    let run = run_td_stream(Vector::zeros(1), adversarial_stream, &sched, 50, &cps).unwrap();
    // Every sample has A_t = -0.2 and b_t = -0.05, so θ_t - 0.25 = -0.25 Π(1 + 0.2 η_k).
    let mut prod = 1.0;
    let mut sum = 0.0;
    for (cp, t) in run.iter().zip(1u64..) {
        prod *= 1.0 + 0.2 * 5.0 * (t as f64).powf(-2.0 / 3.0);
        sum += prod;
        let closed = (0.25 - theta_star) - 0.25 * sum / t as f64;
        let got = cp.theta_bar[0] - theta_star;
        assert!(((got - closed) / closed).abs() < 1e-8, "t = {t}");
    }
}

#[test]
fn averaged_error_shrinks_in_most_trials() {
    let mdp = build_hard_mdp(&HardMdpParams::new(10, 3, 0.2, 0.01)).unwrap();
    let gt = ground_truth(&mdp).unwrap();
    let sched = StepSchedule::new(5.0, 2.0 / 3.0).unwrap();
    let sampler = TransitionSampler::new(&mdp, &gt.mu).unwrap();
    let mut shrunk = 0;
    for seed in 0..100 {
        let mut rng = seeded_rng(seed);
        let cps = td_inference::td::run_td_with_rng(
            &sampler,
            &mut rng,
            Vector::zeros(3),
            &sched,
            100_000,
            &[1000, 100_000],
        )
        .unwrap();
        let early = cps[0].theta_bar.sub(&gt.theta_star).norm2();
        let late = cps[1].theta_bar.sub(&gt.theta_star).norm2();
        if late < early {
            shrunk += 1;
        }
    }
    assert!(shrunk >= 95, "{shrunk} of 100");
}

#[test]
fn lambda_bar_approaches_lambda_star_at_the_predicted_order() {
    let mdp = build_hard_mdp(&HardMdpParams::new(10, 3, 0.2, 0.01)).unwrap();
    let gt = ground_truth(&mdp).unwrap();
    let (eta0, alpha) = (5.0, 2.0 / 3.0);
    let sched = StepSchedule::new(eta0, alpha).unwrap();
    // η₀(AX + XAᵀ) = Λ*
    let x = solve_lyapunov(&gt.a.scale(eta0), &gt.lambda_star).unwrap();
    let scaled: Vec<f64> = [1_000u64, 10_000, 100_000]
        .iter()
        .map(|&t| {
            let lb = lambda_bar(t, &sched, &gt.a, &gt.gamma_noise).unwrap();
            let lead = (t as f64).powf(alpha - 1.0);
            let resid = lb.sub(&gt.lambda_star).sub(&x.scale(lead)).frobenius_norm();
            resid / lead
        })
        .collect();
    assert!(scaled[1] < scaled[0] && scaled[2] < scaled[1], "{scaled:?}");
    // The remainder is O(T^{2α-2}), so the ratio shrinks by about 10^{α-1} per decade.
    let per_decade = scaled[2] / scaled[1];
    assert!(per_decade < 0.7, "{scaled:?}");
}
