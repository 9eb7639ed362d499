//! Seeded random sources and random draws of policies and simplex points.
//!
//! Every stochastic routine takes its generator explicitly; nothing reads a
//! global or thread-local source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::mdp::{MarkovPolicy, StepTable};

/// Counter-based generator used throughout the crate.
pub type SweetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SweetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> SweetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw from the probability simplex (Dirichlet with unit concentration).
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = x.iter().sum();
        if total > 0.0 {
            x.iter_mut().for_each(|v| *v /= total);
            return x;
        }
    }
}

/// Markov policy with independent uniform-simplex rows.
pub fn random_policy<R: Rng + ?Sized>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> MarkovPolicy {
    let mut probs = StepTable::zeros(horizon, states, actions);
    for h in 0..horizon {
        for s in 0..states {
            let row = random_simplex(actions, rng);
            probs.row_mut(h, s).copy_from_slice(&row);
        }
    }
    MarkovPolicy::from_table_unchecked(probs)
}

/// Uniformly random deterministic policy.
pub fn random_deterministic<R: Rng + ?Sized>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> MarkovPolicy {
    let choice: Vec<usize> = (0..horizon * states).map(|_| rng.random_range(0..actions)).collect();
    MarkovPolicy::deterministic(horizon, states, actions, &choice).expect("choices are in range")
}
