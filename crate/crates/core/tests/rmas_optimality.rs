use pimcaps::rmas::{brute_force_nh, grant_priority, kappa, optimal_nh, SchedulerInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draw(rng: &mut ChaCha8Rng) -> SchedulerInput {
    let n_max = rng.random_range(1..=32usize);
    let q_bar = 64.0 * (1.0 - rng.random::<f64>());
    // Log-uniform gamma ratio in (0.01, 100].
    let ratio = 10f64.powf(rng.random_range(-2.0..=2.0));
    let q_per_vault = (0..n_max).map(|_| rng.random_range(0..=128usize)).collect();
    SchedulerInput {
        n_max,
        q_bar,
        q_per_vault,
        gamma_v: 1.0,
        gamma_h: ratio,
    }
}

#[test]
fn closed_form_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..1000 {
        let input = draw(&mut rng);
        let n = optimal_nh(&input).unwrap();
        let brute = brute_force_nh(&input, 1).unwrap();
        assert_eq!(
            kappa(n, &input).unwrap(),
            kappa(brute, &input).unwrap(),
            "{input:?}: closed form {n}, brute force {brute}"
        );
        assert_eq!(n, brute, "{input:?}");
        assert_eq!(grant_priority(&input).unwrap().len(), n);
    }
}

#[test]
fn anchor_case() {
    let input = SchedulerInput {
        n_max: 4,
        q_bar: 1.0,
        q_per_vault: vec![1; 4],
        gamma_v: 1.0,
        gamma_h: 1.0,
    };
    assert_eq!(optimal_nh(&input).unwrap(), 2);
    assert_eq!(kappa(2, &input).unwrap(), 4.0);
}
