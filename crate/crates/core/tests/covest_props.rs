use proptest::prelude::*;
use td_inference::covest::{batch_gamma_oracle, MomentAccumulator};
use td_inference::mdp::{build_hard_mdp, ground_truth, HardMdpParams, SampleTuple, TransitionSampler};
use td_inference::metrics::frobenius_error;
use td_inference::numkit::{seeded_rng, sym_eig, Matrix, Vector};
use td_inference::td::{StepSchedule, TdState};

fn sample_list(d: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<SampleTuple>> {
    prop::collection::vec(
        (prop::collection::vec(-1.0f64..1.0, d * d), prop::collection::vec(-1.0f64..1.0, d)).prop_map(
            move |(a, b)| SampleTuple {
                s: 0,
                s_next: 0,
                reward: 0.0,
                a: Matrix::new(d, d, a).unwrap(),
                b: Vector::new(b).unwrap(),
            },
        ),
        len,
    )
}

fn case() -> impl Strategy<Value = (Vec<SampleTuple>, Vec<f64>)> {
    (1usize..6).prop_flat_map(|d| (sample_list(d, 1..200), prop::collection::vec(-3.0f64..3.0, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn online_equals_batch((samples, theta) in case()) {
        let mut acc = MomentAccumulator::new(theta.len());
        for s in &samples {
            acc.update(s).unwrap();
        }
        let online = acc.gamma_hat(&theta).unwrap();
        let batch = batch_gamma_oracle(&samples, &theta).unwrap();
        prop_assert!(online.sub(&batch).frobenius_norm() <= 1e-9 * batch.frobenius_norm().max(1e-300));
        let eig = sym_eig(&online).unwrap();
        prop_assert!(eig.min() >= -1e-9 * online.frobenius_norm());
    }
}

#[test]
fn accumulator_size_depends_only_on_dimension() {
    for d in [1, 2, 3, 5] {
        let mut acc = MomentAccumulator::new(d);
        let entries = |a: &MomentAccumulator| {
            a.a_bar().as_slice().len() + a.aa_bar().as_slice().len() + a.ab_bar().as_slice().len() + a.bb_bar().len()
        };
        let before = entries(&acc);
        assert_eq!(before, d * d + d.pow(4) + d.pow(3) + d * d);
        let s = SampleTuple {
            s: 0,
            s_next: 0,
            reward: 0.0,
            a: Matrix::identity(d),
            b: Vector::zeros(d),
        };
        for _ in 0..1000 {
            acc.update(&s).unwrap();
        }
        assert_eq!(entries(&acc), before);
    }
}

#[test]
fn estimate_improves_with_more_samples() {
    let mdp = build_hard_mdp(&HardMdpParams::new(10, 3, 0.2, 0.01)).unwrap();
    let gt = ground_truth(&mdp).unwrap();
    let sched = StepSchedule::new(5.0, 2.0 / 3.0).unwrap();
    let sampler = TransitionSampler::new(&mdp, &gt.mu).unwrap();
    let mut better = 0;
    for seed in 0..100 {
        let mut rng = seeded_rng(seed);
        let mut state = TdState::zeros(3);
        let mut acc = MomentAccumulator::new(3);
        let mut early = f64::NAN;
        for t in 1..=100_000u64 {
            let s = sampler.sample(&mut rng);
            state.step(&s, &sched).unwrap();
            acc.update(&s).unwrap();
            if t == 1000 {
                early = frobenius_error(&acc.finalize(&state.theta_bar).unwrap().lambda_hat, &gt.lambda_star, false);
            }
        }
        let late = frobenius_error(&acc.finalize(&state.theta_bar).unwrap().lambda_hat, &gt.lambda_star, false);
        if late < early {
            better += 1;
        }
    }
    assert!(better >= 95, "{better} of 100");
}

#[test]
fn plug_in_at_truth_recovers_population_noise() {
    // With θ̄ = θ* and many samples, Γ̂ converges to Γ.
    let mdp = build_hard_mdp(&HardMdpParams::new(10, 3, 0.2, 0.01)).unwrap();
    let gt = ground_truth(&mdp).unwrap();
    let sampler = TransitionSampler::new(&mdp, &gt.mu).unwrap();
    let mut rng = seeded_rng(77);
    let mut acc = MomentAccumulator::new(3);
    for _ in 0..400_000 {
        acc.update(&sampler.sample(&mut rng)).unwrap();
    }
    let g = acc.gamma_hat(&gt.theta_star).unwrap();
    assert!(g.sub(&gt.gamma_noise).frobenius_norm() < 0.02 * gt.gamma_noise.frobenius_norm());
    assert!(acc.a_bar().sub(&gt.a).frobenius_norm() < 0.01 * gt.a.frobenius_norm());
}
